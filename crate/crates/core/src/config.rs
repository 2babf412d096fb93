//! TOML configuration files: rig calibration, pattern spec, scene and
//! pipeline. Parsing is strict: unknown keys are errors.
//!
//! Rig file (lengths in meters, focal lengths and principal points in
//! pixels):
//!
//! ```toml
//! version = 1
//!
//! [camera]
//! width = 640
//! height = 480
//! fx = 6000.0
//! fy = 6000.0
//! cx = 320.0
//! cy = 240.0
//! # world-to-device extrinsics, X_dev = R * X_world + t
//! rotation = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
//! translation = [0.0, 0.0, 0.0]
//!
//! [projector]
//! fx = 4000.0
//! fy = 4000.0
//! cx = 512.0
//! cy = 384.0
//! # instead of rotation/translation a device may be placed with look_at
//! look_at = { center = [0.2, 0.0, 0.0], target = [0.0, 0.0, 1.0], down = [0.0, 1.0, 0.0] }
//!
//! [pattern]            # optional here, else taken from a pattern file
//! width = 1024
//! height = 768
//! stripe_width = 2
//! orientation = "vertical_stripes"
//! ```
//!
//! Scene file:
//!
//! ```toml
//! [surface]
//! kind = "sphere"            # or fronto_parallel_plane { depth }, height_field
//! center = [0.0, 0.0, 1.05]
//! radius = 0.08
//!
//! [albedo]                   # optional, default constant white
//! kind = "gradient"
//! from = [0.2, 0.2, 0.2]
//! to = [1.0, 1.0, 1.0]
//! range = [-0.05, 0.05]
//!
//! [capture]                  # optional, see CaptureModel
//! noise_sigma = 2.0
//! seed = 1
//! ```
//!
//! Pipeline file: see [`PipelineFile`]. Relative paths resolve against the
//! directory of the file that names them.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pattern::PatternSpec;
use crate::reconstruct::{EvalMode, PinholeModel, RigCalibration};
use crate::segmentation::SegmentParams;
use crate::simulator::{Albedo, AlbedoSpec, CaptureModel, SceneSurface, SurfaceKind};
use crate::unwrap::UnwrapParams;

pub const RIG_VERSION: u32 = 1;

/// Unreadable configuration files are configuration errors.
fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))
}

fn parse_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    toml::from_str(&text).map_err(|e| Error::config(format!("{}: {}", path.display(), e.message())))
}

fn to_toml<T: Serialize>(value: &T) -> String {
    toml::to_string(value).expect("config types serialize to TOML")
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LookAt {
    pub center: [f64; 3],
    pub target: [f64; 3],
    #[serde(default = "default_down")]
    pub down: [f64; 3],
}

fn default_down() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSection {
    /// Image size, required for the camera; the projector takes its size from
    /// the pattern.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<[[f64; 3]; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translation: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub look_at: Option<LookAt>,
}

impl DeviceSection {
    pub fn from_model(model: &PinholeModel) -> Self {
        let r = model.rotation;
        DeviceSection {
            width: None,
            height: None,
            fx: model.fx,
            fy: model.fy,
            cx: model.cx,
            cy: model.cy,
            rotation: Some(std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)]))),
            translation: Some(model.translation.into()),
            look_at: None,
        }
    }

    fn model(&self, name: &str) -> Result<PinholeModel> {
        let ctx = |e: Error| Error::config(format!("[{name}] {}", strip_prefix(&e)));
        match (self.rotation, self.translation, self.look_at) {
            (Some(r), Some(t), None) => {
                let model = PinholeModel {
                    fx: self.fx,
                    fy: self.fy,
                    cx: self.cx,
                    cy: self.cy,
                    rotation: Matrix3::from_fn(|i, j| r[i][j]),
                    translation: Vector3::from(t),
                };
                model.validate().map_err(ctx)?;
                Ok(model)
            }
            (None, None, Some(la)) => PinholeModel::looking_at(
                self.fx,
                self.fy,
                self.cx,
                self.cy,
                la.center.into(),
                la.target.into(),
                la.down.into(),
            )
            .map_err(ctx),
            _ => Err(Error::config(format!(
                "[{name}] needs either rotation and translation, or look_at"
            ))),
        }
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(msg) => msg.clone(),
        other => other.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigFile {
    pub version: u32,
    pub camera: DeviceSection,
    pub projector: DeviceSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<PatternSpec>,
}

impl RigFile {
    pub fn from_rig(rig: &RigCalibration) -> Self {
        let mut camera = DeviceSection::from_model(&rig.camera);
        camera.width = Some(rig.camera_width);
        camera.height = Some(rig.camera_height);
        RigFile {
            version: RIG_VERSION,
            camera,
            projector: DeviceSection::from_model(&rig.projector),
            pattern: Some(rig.pattern),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: RigFile = parse_toml(path)?;
        if file.version != RIG_VERSION {
            return Err(Error::config(format!(
                "{}: unsupported rig file version {} (expected {RIG_VERSION})",
                path.display(),
                file.version
            )));
        }
        Ok(file)
    }

    /// Build the calibrated rig. `pattern` overrides the file's own
    /// `[pattern]` section; one of the two must be present.
    pub fn rig(&self, pattern: Option<PatternSpec>) -> Result<RigCalibration> {
        let pattern = pattern.or(self.pattern).ok_or_else(|| {
            Error::config("rig has no [pattern] section and no pattern spec was given")
        })?;
        pattern
            .validate()
            .map_err(|e| Error::config(strip_prefix(&e)))?;
        let (Some(camera_width), Some(camera_height)) = (self.camera.width, self.camera.height)
        else {
            return Err(Error::config("[camera] needs width and height"));
        };
        let rig = RigCalibration {
            camera: self.camera.model("camera")?,
            camera_width,
            camera_height,
            projector: self.projector.model("projector")?,
            pattern,
        };
        rig.validate()?;
        Ok(rig)
    }

    pub fn to_toml(&self) -> String {
        to_toml(self)
    }
}

pub fn load_rig(path: &Path, pattern: Option<PatternSpec>) -> Result<RigCalibration> {
    RigFile::load(path)?.rig(pattern)
}

pub fn load_pattern_spec(path: &Path) -> Result<PatternSpec> {
    let spec: PatternSpec = parse_toml(path)?;
    spec.validate()
        .map_err(|e| Error::config(format!("{}: {}", path.display(), strip_prefix(&e))))?;
    Ok(spec)
}

pub fn pattern_spec_toml(spec: &PatternSpec) -> String {
    to_toml(spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub surface: SurfaceKind,
    #[serde(default)]
    pub albedo: AlbedoSpec,
    #[serde(default)]
    pub capture: CaptureModel,
}

impl SceneFile {
    pub fn load(path: &Path) -> Result<Self> {
        let scene: SceneFile = parse_toml(path)?;
        scene.capture.validate()?;
        // Texture paths are made absolute so the scene can be used anywhere.
        let mut scene = scene;
        if let AlbedoSpec::Texture { path: tex, .. } = &mut scene.albedo {
            let full = base_dir(path).join(&*tex);
            if !full.exists() {
                return Err(Error::config(format!(
                    "albedo texture {} not found",
                    full.display()
                )));
            }
            *tex = full.to_string_lossy().into_owned();
        }
        scene.surface()?;
        Ok(scene)
    }

    pub fn surface(&self) -> Result<SceneSurface> {
        let surface = SceneSurface {
            kind: self.surface.clone(),
            albedo: Albedo::from_spec(&self.albedo, None)?,
        };
        surface.validate()?;
        Ok(surface)
    }

    pub fn to_toml(&self) -> String {
        to_toml(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructParams {
    pub min_angle_deg: f64,
    /// Known working distance in meters. When set, the unwrapped ids are
    /// shifted by the even offset whose median depth is closest to it.
    pub reference_depth: Option<f64>,
    /// Largest id shift tried by reference-depth anchoring.
    pub max_anchor_shift: i64,
    pub eval_mode: EvalMode,
}

impl Default for ReconstructParams {
    fn default() -> Self {
        ReconstructParams {
            min_angle_deg: 0.5,
            reference_depth: None,
            max_anchor_shift: 512,
            eval_mode: EvalMode::ModOffset,
        }
    }
}

impl ReconstructParams {
    pub fn min_angle(&self) -> f64 {
        self.min_angle_deg.to_radians()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..90.0).contains(&self.min_angle_deg) {
            return Err(Error::config("min_angle_deg must be in [0, 90)"));
        }
        if let Some(d) = self.reference_depth {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::config("reference_depth must be positive"));
            }
        }
        if self.max_anchor_shift < 0 {
            return Err(Error::config("max_anchor_shift must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SweepAxis {
    FlipRate,
    NoiseSigma,
    /// Replaces the albedo with a left-to-right ramp from `1 - c` to 1
    /// across the camera view.
    AlbedoContrast,
    StripeWidth,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::FlipRate => "flip_rate",
            SweepAxis::NoiseSigma => "noise_sigma",
            SweepAxis::AlbedoContrast => "albedo_contrast",
            SweepAxis::StripeWidth => "stripe_width",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
}

/// Pipeline configuration as written on disk.
///
/// ```toml
/// out_dir = "out"
/// seed = 1
/// rig = "rig.toml"
/// pattern = "pattern.toml"   # optional when the rig has [pattern]
/// scene = "scene.toml"       # either scene (simulate) ...
/// # capture = "photo.png"    # ... or an existing capture
/// flip_rate = 0.02           # optional label flips after segmentation
///
/// [segmentation]
/// [unwrap]
/// [reconstruct]
/// [sweep]                    # optional, used by the sweep command
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineFile {
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rig: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capture: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flip_rate: Option<f64>,
    #[serde(default)]
    pub segmentation: SegmentParams,
    #[serde(default)]
    pub unwrap: UnwrapParams,
    #[serde(default)]
    pub reconstruct: ReconstructParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl PipelineFile {
    /// Parse without resolving referenced files; standalone stage commands
    /// use this to pick up parameter sections.
    pub fn parse(path: &Path) -> Result<Self> {
        parse_toml(path)
    }

    pub fn to_toml(&self) -> String {
        to_toml(self)
    }
}

/// Scene part of a resolved pipeline config.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneConfig {
    pub file: SceneFile,
    #[serde(skip)]
    pub surface: SceneSurface,
}

/// Fully resolved pipeline configuration: every referenced file has been
/// read and validated. Serializes to the snapshot stored in run manifests.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub pattern: PatternSpec,
    pub rig_file: RigFile,
    #[serde(skip)]
    pub rig: RigCalibration,
    pub scene: Option<SceneConfig>,
    pub capture: Option<PathBuf>,
    pub flip_rate: Option<f64>,
    pub segmentation: SegmentParams,
    pub unwrap: UnwrapParams,
    pub reconstruct: ReconstructParams,
    pub sweep: Option<SweepSpec>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let file = PipelineFile::parse(path)?;
        Self::resolve(file, &base_dir(path))
    }

    /// Resolve `file` with relative paths taken against `base`.
    pub fn resolve(file: PipelineFile, base: &Path) -> Result<Self> {
        let existing = |p: &Path, what: &str| -> Result<PathBuf> {
            let full = base.join(p);
            if full.exists() {
                Ok(full)
            } else {
                Err(Error::config(format!(
                    "{what} file {} not found",
                    full.display()
                )))
            }
        };
        let rig_path = file
            .rig
            .as_deref()
            .ok_or_else(|| Error::config("pipeline config needs a rig file"))?;
        let rig_file = RigFile::load(&existing(rig_path, "rig")?)?;
        let pattern = match &file.pattern {
            Some(p) => Some(load_pattern_spec(&existing(p, "pattern")?)?),
            None => None,
        };
        let rig = rig_file.rig(pattern)?;
        let scene = match &file.scene {
            Some(p) => {
                let scene_file = SceneFile::load(&existing(p, "scene")?)?;
                let surface = scene_file.surface()?;
                Some(SceneConfig {
                    file: scene_file,
                    surface,
                })
            }
            None => None,
        };
        let capture = match &file.capture {
            Some(p) => Some(existing(p, "capture")?),
            None => None,
        };
        match (&scene, &capture) {
            (Some(_), Some(_)) => {
                return Err(Error::config("give either scene or capture, not both"))
            }
            (None, None) => {
                return Err(Error::config("pipeline config needs a scene or a capture"))
            }
            _ => {}
        }
        let config = PipelineConfig {
            out_dir: base.join(&file.out_dir),
            seed: file.seed,
            pattern: rig.pattern,
            rig_file,
            rig,
            scene,
            capture,
            flip_rate: file.flip_rate,
            segmentation: file.segmentation,
            unwrap: file.unwrap,
            reconstruct: file.reconstruct,
            sweep: file.sweep,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.rig.validate()?;
        self.unwrap.validate()?;
        self.reconstruct.validate()?;
        self.segmentation.classify_params().validate()?;
        if let Some(r) = self.flip_rate {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::config(format!(
                    "flip_rate must be in [0, 1], got {r}"
                )));
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() || sweep.seeds.is_empty() {
                return Err(Error::config("sweep needs at least one value and one seed"));
            }
        }
        Ok(())
    }

    /// Replace the pattern everywhere it is used.
    pub fn set_pattern(&mut self, pattern: PatternSpec) -> Result<()> {
        pattern
            .validate()
            .map_err(|e| Error::config(strip_prefix(&e)))?;
        self.pattern = pattern;
        self.rig.pattern = pattern;
        self.rig_file.pattern = Some(pattern);
        Ok(())
    }

    /// Replace the scene albedo (and its runtime form).
    pub fn set_albedo(&mut self, albedo: AlbedoSpec) -> Result<()> {
        let scene = self
            .scene
            .as_mut()
            .ok_or_else(|| Error::config("albedo can only be changed for simulated scenes"))?;
        scene.file.albedo = albedo;
        scene.surface = scene.file.surface()?;
        Ok(())
    }
}
