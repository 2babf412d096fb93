//! Synthetic projector-camera capture with dense ground truth.
//!
//! Rendering is camera-driven: every camera pixel casts one ray through its
//! center, intersects the scene surface, and looks up the projector pixel
//! that lights the hit point (nearest-column point sampling). Noise comes
//! from a counter-based generator keyed by `(seed, pixel index)`, so parallel
//! and serial renders are bit-identical.

use std::path::Path;
use std::sync::Arc;

use image::RgbImage;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pattern::{Orientation, PatternSpec, StripeColor};
use crate::reconstruct::{intersect_ray_plane, pixel_ray, Plane, Ray, RigCalibration};
use crate::segmentation::{ClassMap, Label};
use crate::unwrap::StripeIdMap;

/// Scene geometry. Surfaces are expressed in world coordinates except the
/// fronto-parallel plane, which is placed at a camera-frame depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurfaceKind {
    FrontoParallelPlane {
        depth: f64,
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    /// Surface `z = h(x, y)` sampled on a regular grid over
    /// `extent = [x_min, x_max, y_min, y_max]`, bilinearly interpolated.
    /// `heights[j][i]` sits at row `j` (y) and column `i` (x).
    HeightField {
        heights: Vec<Vec<f64>>,
        extent: [f64; 4],
    },
}

/// Albedo description as written in scene files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlbedoSpec {
    Constant {
        rgb: [f64; 3],
    },
    /// Linear ramp along world x from `from` at `range[0]` to `to` at
    /// `range[1]`, clamped outside.
    Gradient {
        from: [f64; 3],
        to: [f64; 3],
        range: [f64; 2],
    },
    /// 8-bit image stretched over world `extent = [x_min, x_max, y_min, y_max]`,
    /// nearest-neighbor sampled. Relative paths resolve against the scene file.
    Texture {
        path: String,
        extent: [f64; 4],
    },
}

impl Default for AlbedoSpec {
    fn default() -> Self {
        AlbedoSpec::Constant { rgb: [1.0; 3] }
    }
}

/// Albedo ready for rendering.
#[derive(Debug, Clone, PartialEq)]
pub enum Albedo {
    Constant([f64; 3]),
    Gradient {
        from: [f64; 3],
        to: [f64; 3],
        range: [f64; 2],
    },
    Texture {
        image: Arc<RgbImage>,
        extent: [f64; 4],
    },
}

impl Albedo {
    pub fn from_spec(spec: &AlbedoSpec, base_dir: Option<&Path>) -> Result<Self> {
        let albedo = match spec {
            AlbedoSpec::Constant { rgb } => Albedo::Constant(*rgb),
            AlbedoSpec::Gradient { from, to, range } => Albedo::Gradient {
                from: *from,
                to: *to,
                range: *range,
            },
            AlbedoSpec::Texture { path, extent } => {
                let full = match base_dir {
                    Some(dir) => dir.join(path),
                    None => path.into(),
                };
                let image = crate::io::read_rgb(&full)?;
                Albedo::Texture {
                    image: Arc::new(image),
                    extent: *extent,
                }
            }
        };
        albedo.validate()?;
        Ok(albedo)
    }

    fn validate(&self) -> Result<()> {
        let in_unit = |c: &[f64; 3]| c.iter().all(|v| (0.0..=1.0).contains(v));
        match self {
            Albedo::Constant(rgb) if !in_unit(rgb) => {
                Err(Error::config("albedo components must lie in [0, 1]"))
            }
            Albedo::Gradient { from, to, range } => {
                if !in_unit(from) || !in_unit(to) {
                    Err(Error::config("albedo components must lie in [0, 1]"))
                } else if !(range[1] > range[0]) {
                    Err(Error::config("gradient range must be increasing"))
                } else {
                    Ok(())
                }
            }
            Albedo::Texture { extent, .. } if !(extent[1] > extent[0] && extent[3] > extent[2]) => {
                Err(Error::config("texture extent must be increasing"))
            }
            _ => Ok(()),
        }
    }

    pub fn at(&self, p: &Vector3<f64>) -> [f64; 3] {
        match self {
            Albedo::Constant(rgb) => *rgb,
            Albedo::Gradient { from, to, range } => {
                let s = ((p.x - range[0]) / (range[1] - range[0])).clamp(0.0, 1.0);
                std::array::from_fn(|c| from[c] + s * (to[c] - from[c]))
            }
            Albedo::Texture { image, extent } => {
                let (w, h) = image.dimensions();
                let u = ((p.x - extent[0]) / (extent[1] - extent[0])).clamp(0.0, 1.0);
                let v = ((p.y - extent[2]) / (extent[3] - extent[2])).clamp(0.0, 1.0);
                let x = ((u * w as f64) as u32).min(w - 1);
                let y = ((v * h as f64) as u32).min(h - 1);
                image.get_pixel(x, y).0.map(|c| c as f64 / 255.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSurface {
    pub kind: SurfaceKind,
    pub albedo: Albedo,
}

/// Camera response and noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CaptureModel {
    /// Standard deviation of additive Gaussian noise, in 8-bit units.
    pub noise_sigma: f64,
    /// Projector RGB to camera RGB mixing; row `i` produces camera channel `i`.
    pub crosstalk: [[f64; 3]; 3],
    /// Exponent applied to normalized intensities before noise.
    pub gamma: f64,
    pub seed: u64,
    /// Apply the Lambertian cosine toward the projector. Off gives exact
    /// pattern colors on white surfaces.
    pub lambertian: bool,
}

impl Default for CaptureModel {
    fn default() -> Self {
        CaptureModel {
            noise_sigma: 0.0,
            crosstalk: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            gamma: 1.0,
            seed: 0,
            lambertian: true,
        }
    }
}

impl CaptureModel {
    pub fn ideal() -> Self {
        CaptureModel {
            lambertian: false,
            ..CaptureModel::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::config("noise_sigma must be >= 0"));
        }
        if self
            .crosstalk
            .iter()
            .flatten()
            .any(|v| !(*v >= 0.0) || !v.is_finite())
        {
            return Err(Error::config("crosstalk entries must be finite and >= 0"));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::config("gamma must be > 0"));
        }
        Ok(())
    }
}

/// Per-pixel truth for a rendered capture. Valid exactly where the camera
/// ray hits the surface and the hit point is lit by the projector.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub width: u32,
    pub height: u32,
    pub stripe_ids: Vec<Option<i64>>,
    pub depth: Vec<Option<f64>>,
}

impl GroundTruth {
    pub fn valid_count(&self) -> usize {
        self.stripe_ids.iter().filter(|i| i.is_some()).count()
    }

    /// Labels implied by the true stripe parity.
    pub fn class_map(&self) -> ClassMap {
        ClassMap {
            width: self.width,
            height: self.height,
            labels: self
                .stripe_ids
                .iter()
                .map(|id| {
                    id.map_or(Label::Invalid, |s| {
                        Label::from_color(StripeColor::of_stripe(s))
                    })
                })
                .collect(),
        }
    }

    pub fn id_map(&self) -> StripeIdMap {
        StripeIdMap {
            width: self.width,
            height: self.height,
            ids: self.stripe_ids.clone(),
            believable_rows: vec![true; self.height as usize],
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Hit {
    point: Vector3<f64>,
    /// Unit normal facing the ray origin.
    normal: Vector3<f64>,
}

impl SceneSurface {
    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            SurfaceKind::FrontoParallelPlane { depth } if !(*depth > 0.0) => {
                return Err(Error::config("plane depth must be > 0"));
            }
            SurfaceKind::Sphere { radius, .. } if !(*radius > 0.0) => {
                return Err(Error::config("sphere radius must be > 0"));
            }
            SurfaceKind::HeightField { heights, extent } => {
                let cols = heights.first().map_or(0, Vec::len);
                if heights.len() < 2 || cols < 2 || heights.iter().any(|r| r.len() != cols) {
                    return Err(Error::config(
                        "height field needs a rectangular grid of at least 2x2 samples",
                    ));
                }
                if !(extent[1] > extent[0] && extent[3] > extent[2]) {
                    return Err(Error::config("height field extent must be increasing"));
                }
            }
            _ => {}
        }
        self.albedo.validate()
    }

    fn intersect(&self, ray: &Ray, rig: &RigCalibration) -> Option<Hit> {
        let facing = |n: Vector3<f64>| if n.dot(&ray.direction) > 0.0 { -n } else { n };
        match &self.kind {
            SurfaceKind::FrontoParallelPlane { depth } => {
                let cam = &rig.camera;
                let plane = Plane {
                    point: cam.device_to_world(&Vector3::new(0.0, 0.0, *depth)),
                    normal: cam.rotation.transpose() * Vector3::z(),
                };
                let t = intersect_ray_plane(ray, &plane, 0.0)?;
                Some(Hit {
                    point: ray.at(t),
                    normal: facing(plane.normal),
                })
            }
            SurfaceKind::Sphere { center, radius } => {
                let c = Vector3::from(*center);
                let oc = ray.origin - c;
                let b = oc.dot(&ray.direction);
                let disc = b * b - (oc.norm_squared() - radius * radius);
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t = [-b - sq, -b + sq].into_iter().find(|t| *t > 0.0)?;
                let point = ray.at(t);
                Some(Hit {
                    point,
                    normal: facing((point - c) / *radius),
                })
            }
            SurfaceKind::HeightField { heights, extent } => {
                intersect_height_field(ray, heights, extent).map(|(point, normal)| Hit {
                    point,
                    normal: facing(normal),
                })
            }
        }
    }
}

/// Bilinear height and gradient at `(x, y)`, or `None` outside the extent.
fn height_at(heights: &[Vec<f64>], extent: &[f64; 4], x: f64, y: f64) -> Option<(f64, f64, f64)> {
    if !(x >= extent[0] && x <= extent[1] && y >= extent[2] && y <= extent[3]) {
        return None;
    }
    let nx = heights[0].len() - 1;
    let ny = heights.len() - 1;
    let dx = (extent[1] - extent[0]) / nx as f64;
    let dy = (extent[3] - extent[2]) / ny as f64;
    let gx = ((x - extent[0]) / dx).min(nx as f64);
    let gy = ((y - extent[2]) / dy).min(ny as f64);
    let i = (gx.floor() as usize).min(nx - 1);
    let j = (gy.floor() as usize).min(ny - 1);
    let (fx, fy) = (gx - i as f64, gy - j as f64);
    let (h00, h10, h01, h11) = (
        heights[j][i],
        heights[j][i + 1],
        heights[j + 1][i],
        heights[j + 1][i + 1],
    );
    let h = h00 * (1.0 - fx) * (1.0 - fy)
        + h10 * fx * (1.0 - fy)
        + h01 * (1.0 - fx) * fy
        + h11 * fx * fy;
    let dhdx = ((h10 - h00) * (1.0 - fy) + (h11 - h01) * fy) / dx;
    let dhdy = ((h01 - h00) * (1.0 - fx) + (h11 - h10) * fx) / dy;
    Some((h, dhdx, dhdy))
}

fn intersect_height_field(
    ray: &Ray,
    heights: &[Vec<f64>],
    extent: &[f64; 4],
) -> Option<(Vector3<f64>, Vector3<f64>)> {
    const MARCH_STEPS: usize = 256;
    const BISECTIONS: usize = 60;
    let (lo, hi) = heights
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), h| {
            (lo.min(*h), hi.max(*h))
        });
    if ray.direction.z.abs() < 1e-12 {
        return None;
    }
    // Pad the slab so a flat field still brackets a sign change.
    let pad = 1e-6 * (hi - lo).max(1.0);
    let ta = (lo - pad - ray.origin.z) / ray.direction.z;
    let tb = (hi + pad - ray.origin.z) / ray.direction.z;
    let (t0, t1) = (ta.min(tb).max(0.0), ta.max(tb));
    if t1 <= 0.0 {
        return None;
    }
    let f = |t: f64| {
        let p = ray.at(t);
        height_at(heights, extent, p.x, p.y).map(|(h, _, _)| p.z - h)
    };
    let step = (t1 - t0) / MARCH_STEPS as f64;
    let mut prev = (t0, f(t0));
    for k in 1..=MARCH_STEPS {
        let t = t0 + step * k as f64;
        let cur = (t, f(t));
        if let (Some(a), Some(b)) = (prev.1, cur.1) {
            if a == 0.0 || a.signum() != b.signum() {
                let (mut lo_t, mut hi_t, fa) = (prev.0, cur.0, a);
                for _ in 0..BISECTIONS {
                    let mid = 0.5 * (lo_t + hi_t);
                    match f(mid) {
                        Some(m) if m.signum() == fa.signum() && m != 0.0 => lo_t = mid,
                        _ => hi_t = mid,
                    }
                }
                let t = 0.5 * (lo_t + hi_t);
                let p = ray.at(t);
                let (_, gx, gy) = height_at(heights, extent, p.x, p.y)?;
                return Some((p, Vector3::new(-gx, -gy, 1.0).normalize()));
            }
        }
        prev = cur;
    }
    None
}

#[derive(Debug, Clone, Copy)]
struct PixelSample {
    rgb: [f64; 3],
    stripe: Option<i64>,
    depth: Option<f64>,
}

fn shade_pixel(
    scene: &SceneSurface,
    rig: &RigCalibration,
    pattern: &PatternSpec,
    model: &CaptureModel,
    x: u32,
    y: u32,
) -> PixelSample {
    let dark = PixelSample {
        rgb: [0.0; 3],
        stripe: None,
        depth: None,
    };
    let ray = pixel_ray(&rig.camera, x as f64 + 0.5, y as f64 + 0.5);
    let Some(hit) = scene.intersect(&ray, rig) else {
        return dark;
    };
    let Some(proj) = rig.projector.project(&hit.point) else {
        return dark;
    };
    let inside = proj.x >= 0.0
        && proj.y >= 0.0
        && proj.x < pattern.width as f64
        && proj.y < pattern.height as f64;
    if !inside {
        return dark;
    }
    let to_light = (rig.projector.center() - hit.point).normalize();
    let cosine = hit.normal.dot(&to_light);
    if cosine <= 0.0 {
        return dark;
    }
    let cross = match pattern.orientation {
        Orientation::VerticalStripes => proj.x,
        Orientation::HorizontalStripes => proj.y,
    };
    let stripe = (cross.floor() as i64) / pattern.stripe_width as i64;
    let color = StripeColor::of_stripe(stripe)
        .rgb()
        .map(|c| c as f64 / 255.0);
    let albedo = scene.albedo.at(&hit.point);
    let shade = if model.lambertian { cosine } else { 1.0 };
    let radiance: [f64; 3] = std::array::from_fn(|c| albedo[c] * color[c] * shade);
    let mixed: [f64; 3] = std::array::from_fn(|i| {
        (0..3)
            .map(|j| model.crosstalk[i][j] * radiance[j])
            .sum::<f64>()
    });
    PixelSample {
        rgb: mixed,
        stripe: Some(stripe),
        depth: Some(rig.camera.world_to_device(&hit.point).z),
    }
}

/// Noise generator for one pixel: a ChaCha stream selected by pixel index.
fn pixel_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Render a capture of `pattern` projected onto `scene`, together with its
/// ground truth.
pub fn render_capture(
    scene: &SceneSurface,
    rig: &RigCalibration,
    pattern: &PatternSpec,
    model: &CaptureModel,
) -> Result<(RgbImage, GroundTruth)> {
    rig.validate()?;
    pattern
        .validate()
        .map_err(|e| Error::config(e.to_string()))?;
    model.validate()?;
    scene.validate()?;
    let (w, h) = (rig.camera_width, rig.camera_height);
    let n = w as usize * h as usize;
    let mut pixels = vec![0u8; n * 3];
    let mut stripe_ids = vec![None; n];
    let mut depth = vec![None; n];
    pixels
        .par_chunks_mut(w as usize * 3)
        .zip(stripe_ids.par_chunks_mut(w as usize))
        .zip(depth.par_chunks_mut(w as usize))
        .enumerate()
        .for_each(|(y, ((px_row, id_row), depth_row))| {
            for x in 0..w as usize {
                let sample = shade_pixel(scene, rig, pattern, model, x as u32, y as u32);
                id_row[x] = sample.stripe;
                depth_row[x] = sample.depth;
                let mut rng = pixel_rng(model.seed, (y * w as usize + x) as u64);
                for c in 0..3 {
                    let linear = sample.rgb[c].max(0.0).powf(model.gamma);
                    let noise: f64 = if model.noise_sigma > 0.0 {
                        rng.sample::<f64, _>(StandardNormal) * model.noise_sigma
                    } else {
                        0.0
                    };
                    px_row[x * 3 + c] = (255.0 * linear + noise).round().clamp(0.0, 255.0) as u8;
                }
            }
        });
    let image = RgbImage::from_raw(w, h, pixels).expect("buffer sized from rig");
    Ok((
        image,
        GroundTruth {
            width: w,
            height: h,
            stripe_ids,
            depth,
        },
    ))
}

/// Swap Green and Blue at each valid pixel independently with probability
/// `flip_rate`.
pub fn inject_misclassification(
    classmap: &ClassMap,
    flip_rate: f64,
    seed: u64,
) -> Result<ClassMap> {
    if !(0.0..=1.0).contains(&flip_rate) {
        return Err(Error::config(format!(
            "flip rate must be in [0, 1], got {flip_rate}"
        )));
    }
    let labels = classmap
        .labels
        .par_iter()
        .enumerate()
        .map(|(i, label)| {
            if !label.is_valid() {
                return *label;
            }
            let draw: f64 = pixel_rng(seed, i as u64).gen();
            if draw < flip_rate {
                label.flipped()
            } else {
                *label
            }
        })
        .collect();
    Ok(ClassMap {
        width: classmap.width,
        height: classmap.height,
        labels,
    })
}
