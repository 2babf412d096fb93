//! End-to-end runs and parameter sweeps.
//!
//! Every stage writes its output to `out_dir` and the next stage reads it
//! back, so any stage can be re-run standalone from the files and give the
//! same result.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{PipelineConfig, SweepAxis, SweepSpec};
use crate::error::{Error, Result};
use crate::io;
use crate::pattern::{generate_pattern, Orientation};
use crate::reconstruct::evaluate::label_accuracy;
use crate::reconstruct::{
    anchor_by_reference_depth, evaluate, to_point_cloud, triangulate, EvalInput, Metrics,
};
use crate::segmentation::segment;
use crate::simulator::{inject_misclassification, render_capture, AlbedoSpec, GroundTruth};
use crate::unwrap::unwrap;

/// Added to the run seed to key label-flip injection, so flips and sensor
/// noise draw from unrelated streams.
const FLIP_SEED_SALT: u64 = 0x5EED_F11F;

#[derive(Debug, Clone, Serialize)]
pub struct StageRecord {
    pub name: &'static str,
    pub outputs: BTreeMap<&'static str, PathBuf>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub config: PipelineConfig,
    pub stages: Vec<StageRecord>,
    pub metrics: Option<Metrics>,
}

impl RunManifest {
    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }
}

struct Recorder {
    stages: Vec<StageRecord>,
}

impl Recorder {
    fn run<T>(
        &mut self,
        name: &'static str,
        f: impl FnOnce(&mut BTreeMap<&'static str, PathBuf>) -> Result<T>,
    ) -> Result<T> {
        let start = Instant::now();
        let mut outputs = BTreeMap::new();
        let value = f(&mut outputs).map_err(|e| e.in_stage(name))?;
        self.stages.push(StageRecord {
            name,
            outputs,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        Ok(value)
    }
}

fn read_truth(ids: &Path, depth: &Path) -> Result<GroundTruth> {
    let ids = io::read_stripe_ids(ids)?;
    let depth = io::read_pfm(depth)?;
    if (ids.width, ids.height) != (depth.width, depth.height) {
        return Err(Error::domain(
            "ground-truth id and depth maps differ in size",
        ));
    }
    Ok(GroundTruth {
        width: ids.width,
        height: ids.height,
        stripe_ids: ids.ids,
        depth: depth.depth,
    })
}

/// Run segment, unwrap, reconstruct and (when ground truth exists) evaluate,
/// simulating the capture first if the config names a scene.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunManifest> {
    config.validate()?;
    let dir = &config.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let out = |name: &str| dir.join(name);
    let rig = &config.rig;
    let mut rec = Recorder { stages: Vec::new() };

    let (capture_path, truth_paths) = match &config.scene {
        Some(scene) => rec.run("simulate", |outputs| {
            let pattern_img = generate_pattern(&config.pattern)?;
            let pattern_path = out("pattern.png");
            io::write_rgb(&pattern_img, &pattern_path)?;
            let model = crate::simulator::CaptureModel {
                seed: config.seed,
                ..scene.file.capture
            };
            let (capture, truth) = render_capture(&scene.surface, rig, &config.pattern, &model)?;
            let (cap, ids, depth) = (
                out("capture.png"),
                out("truth_ids.pgm"),
                out("truth_depth.pfm"),
            );
            io::write_rgb(&capture, &cap)?;
            io::write_stripe_ids(&truth.id_map(), &ids)?;
            io::write_pfm(
                &crate::reconstruct::DepthMap {
                    width: truth.width,
                    height: truth.height,
                    depth: truth.depth,
                },
                &depth,
            )?;
            outputs.insert("pattern", pattern_path);
            outputs.insert("capture", cap.clone());
            outputs.insert("truth_ids", ids.clone());
            outputs.insert("truth_depth", depth.clone());
            Ok((cap, Some((ids, depth))))
        })?,
        None => (
            config
                .capture
                .clone()
                .ok_or_else(|| Error::config("no capture image"))?,
            None,
        ),
    };

    let labels_path = rec.run("segment", |outputs| {
        let capture = io::read_rgb(&capture_path)?;
        if capture.dimensions() != (rig.camera_width, rig.camera_height) {
            return Err(Error::domain(format!(
                "capture is {}x{}, rig camera is {}x{}",
                capture.width(),
                capture.height(),
                rig.camera_width,
                rig.camera_height
            )));
        }
        let labels = segment(&capture, &config.segmentation)?;
        let path = out("classes.png");
        io::write_classmap(&labels, &path)?;
        outputs.insert("classes", path.clone());
        Ok(path)
    })?;

    let labels_path = match config.flip_rate {
        Some(rate) => rec.run("flip", |outputs| {
            let labels = io::read_classmap(&labels_path)?;
            let flipped =
                inject_misclassification(&labels, rate, config.seed.wrapping_add(FLIP_SEED_SALT))?;
            let path = out("classes_flipped.png");
            io::write_classmap(&flipped, &path)?;
            outputs.insert("classes", path.clone());
            Ok(path)
        })?,
        None => labels_path,
    };

    let ids_path = rec.run("unwrap", |outputs| {
        let labels = io::read_classmap(&labels_path)?;
        let ids = match config.pattern.orientation {
            Orientation::VerticalStripes => unwrap(&labels, &config.unwrap)?,
            Orientation::HorizontalStripes => {
                unwrap(&labels.transposed(), &config.unwrap)?.transposed()
            }
        };
        let (ids_path, rows_path) = (out("ids.pgm"), out("believable_rows.txt"));
        io::write_stripe_ids(&ids, &ids_path)?;
        io::write_believable_rows(&ids.believable_rows, &rows_path)?;
        outputs.insert("ids", ids_path.clone());
        outputs.insert("believable_rows", rows_path);
        Ok(ids_path)
    })?;

    let params = &config.reconstruct;
    let min_angle = params.min_angle();
    rec.run("reconstruct", |outputs| {
        let mut ids = io::read_stripe_ids(&ids_path)?;
        if let Some(reference) = params.reference_depth {
            if let Some(shift) =
                anchor_by_reference_depth(&ids, rig, reference, params.max_anchor_shift, min_angle)
            {
                ids = ids.shifted(shift);
            }
        }
        let depth = triangulate(&ids, rig, min_angle);
        let capture = io::read_rgb(&capture_path)?;
        let cloud = to_point_cloud(&depth, &rig.camera, Some(&capture))?;
        let (depth_path, ply_path) = (out("depth.pfm"), out("cloud.ply"));
        io::write_pfm(&depth, &depth_path)?;
        io::write_ply(&cloud, &ply_path)?;
        outputs.insert("depth", depth_path);
        outputs.insert("cloud", ply_path);
        Ok(())
    })?;

    let metrics = match truth_paths {
        Some((truth_ids, truth_depth)) => Some(rec.run("evaluate", |outputs| {
            let truth = read_truth(&truth_ids, &truth_depth)?;
            let ids = io::read_stripe_ids(&ids_path)?;
            let mut metrics = evaluate(
                EvalInput::Ids(&ids),
                &truth,
                params.eval_mode,
                Some(rig),
                min_angle,
            )?;
            metrics.label_accuracy = label_accuracy(&io::read_classmap(&labels_path)?, &truth)?;
            let path = out("metrics.json");
            io::write_atomic(&path, format!("{}\n", metrics.to_json_line()).as_bytes())?;
            outputs.insert("metrics", path);
            Ok(metrics)
        })?),
        None => None,
    };

    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config: config.clone(),
        stages: rec.stages,
        metrics,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    io::write_atomic(&out("manifest.json"), format!("{json}\n").as_bytes())?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: &'static str,
    pub value: f64,
    pub seed: u64,
    pub status: String,
    pub error: String,
    pub id_accuracy: Option<f64>,
    pub depth_rmse: Option<f64>,
    pub completeness: Option<f64>,
    pub outlier_rate: Option<f64>,
    pub label_accuracy: Option<f64>,
}

/// Config for one sweep cell.
pub fn sweep_cell_config(
    base: &PipelineConfig,
    axis: SweepAxis,
    value: f64,
    seed: u64,
) -> Result<PipelineConfig> {
    let mut cfg = base.clone();
    cfg.seed = seed;
    cfg.sweep = None;
    match axis {
        SweepAxis::FlipRate => cfg.flip_rate = Some(value),
        SweepAxis::NoiseSigma => {
            let scene = cfg
                .scene
                .as_mut()
                .ok_or_else(|| Error::config("noise_sigma sweep needs a simulated scene"))?;
            scene.file.capture.noise_sigma = value;
        }
        SweepAxis::AlbedoContrast => {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::config(format!(
                    "albedo contrast must be in [0, 1], got {value}"
                )));
            }
            let range = view_x_range(&cfg);
            cfg.set_albedo(AlbedoSpec::Gradient {
                from: [1.0 - value; 3],
                to: [1.0; 3],
                range,
            })?;
        }
        SweepAxis::StripeWidth => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(Error::config(format!(
                    "stripe width must be a positive integer, got {value}"
                )));
            }
            let mut pattern = cfg.pattern;
            pattern.stripe_width = value as u32;
            cfg.set_pattern(pattern)?;
        }
    }
    cfg.out_dir = base
        .out_dir
        .join(format!("{}_{}_seed{}", axis.name(), value, seed));
    cfg.validate()?;
    Ok(cfg)
}

/// World-x span of the camera's horizontal center line at the camera-frame
/// depth of the scene's principal surface point.
fn view_x_range(cfg: &PipelineConfig) -> [f64; 2] {
    use crate::simulator::SurfaceKind;
    let cam = &cfg.rig.camera;
    let depth = match cfg.scene.as_ref().map(|s| &s.file.surface) {
        Some(SurfaceKind::FrontoParallelPlane { depth }) => *depth,
        Some(SurfaceKind::Sphere { center, .. }) => cam.world_to_device(&(*center).into()).z,
        Some(SurfaceKind::HeightField { heights, .. }) => {
            let n: usize = heights.iter().map(Vec::len).sum();
            heights.iter().flatten().sum::<f64>() / n.max(1) as f64
        }
        None => 1.0,
    };
    let at = |u: f64| {
        cam.device_to_world(&(cam.device_direction(u, cam.cy) * depth))
            .x
    };
    let (a, b) = (at(0.0), at(cfg.rig.camera_width as f64));
    [a.min(b), a.max(b)]
}

/// One row per (value, seed) in grid order. Cells run in parallel; a failed
/// cell is recorded with its stage tag and the sweep continues.
pub fn run_sweep(base: &PipelineConfig, spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    if spec.values.is_empty() || spec.seeds.is_empty() {
        return Err(Error::config("sweep grid is empty"));
    }
    let cells: Vec<(f64, u64)> = spec
        .values
        .iter()
        .flat_map(|v| spec.seeds.iter().map(move |s| (*v, *s)))
        .collect();
    Ok(cells
        .par_iter()
        .map(|&(value, seed)| {
            let result =
                sweep_cell_config(base, spec.axis, value, seed).and_then(|cfg| run_pipeline(&cfg));
            let mut row = SweepRow {
                axis: spec.axis.name(),
                value,
                seed,
                status: "ok".into(),
                error: String::new(),
                id_accuracy: None,
                depth_rmse: None,
                completeness: None,
                outlier_rate: None,
                label_accuracy: None,
            };
            match result {
                Ok(manifest) => {
                    if let Some(m) = manifest.metrics {
                        row.id_accuracy = m.id_accuracy;
                        row.depth_rmse = m.depth_rmse;
                        row.completeness = m.completeness;
                        row.outlier_rate = m.outlier_rate;
                        row.label_accuracy = m.label_accuracy;
                    }
                }
                Err(e) => {
                    row.status = "error".into();
                    row.error = format!("{}: {}", e.stage().unwrap_or("config"), e);
                }
            }
            row
        })
        .collect())
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for row in rows {
        w.serialize(row)
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::format(path, e.to_string()))?;
    io::write_atomic(path, &bytes)
}
