//! Shared rig, scenes and independent oracles for the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use stripescan::config::{RigFile, SceneFile};
use stripescan::pattern::PatternSpec;
use stripescan::reconstruct::{PinholeModel, RigCalibration};
use stripescan::segmentation::{ClassMap, Label};
use stripescan::simulator::{AlbedoSpec, CaptureModel, SurfaceKind};
use stripescan::unwrap::StripeIdMap;

pub const CAM_W: u32 = 640;
pub const CAM_H: u32 = 480;
pub const CAM_F: f64 = 6000.0;
pub const PROJ_F: f64 = 4000.0;
pub const BASELINE: f64 = 0.2;
pub const PLANE_DEPTH: f64 = 1.0;

/// 640x480 camera at the origin, projector 0.2 m to its right converging on
/// the point 1 m ahead, 1024x768 pattern with two-pixel stripes.
pub fn rig() -> RigCalibration {
    rig_with_stripe_width(2)
}

pub fn rig_with_stripe_width(stripe_width: u32) -> RigCalibration {
    let camera = PinholeModel::axis_aligned(CAM_F, CAM_F, CAM_W as f64 / 2.0, CAM_H as f64 / 2.0);
    let projector = PinholeModel::looking_at(
        PROJ_F,
        PROJ_F,
        512.0,
        384.0,
        Vector3::new(BASELINE, 0.0, 0.0),
        Vector3::new(0.0, 0.0, PLANE_DEPTH),
        Vector3::new(0.0, 1.0, 0.0),
    )
    .unwrap();
    RigCalibration {
        camera,
        camera_width: CAM_W,
        camera_height: CAM_H,
        projector,
        pattern: PatternSpec::new(1024, 768, stripe_width).unwrap(),
    }
}

pub fn plane_scene() -> SceneFile {
    SceneFile {
        surface: SurfaceKind::FrontoParallelPlane { depth: PLANE_DEPTH },
        albedo: AlbedoSpec::default(),
        capture: CaptureModel::ideal(),
    }
}

pub fn sphere_scene() -> SceneFile {
    SceneFile {
        surface: SurfaceKind::Sphere {
            center: [0.0, 0.0, 1.05],
            radius: 0.08,
        },
        albedo: AlbedoSpec::default(),
        capture: CaptureModel::ideal(),
    }
}

/// World-x extent seen by the middle camera row at the plane depth.
pub fn view_x_range() -> [f64; 2] {
    let half = CAM_W as f64 / 2.0 / CAM_F * PLANE_DEPTH;
    [-half, half]
}

/// Plane whose albedo ramps from 0.2 to 1.0 across the view.
pub fn gradient_plane_scene() -> SceneFile {
    SceneFile {
        albedo: AlbedoSpec::Gradient {
            from: [0.2; 3],
            to: [1.0; 3],
            range: view_x_range(),
        },
        ..plane_scene()
    }
}

/// Writes rig.toml and one scene file per name into `dir`.
pub fn write_inputs(dir: &Path, scenes: &[(&str, SceneFile)]) {
    fs::write(dir.join("rig.toml"), RigFile::from_rig(&rig()).to_toml()).unwrap();
    for (name, scene) in scenes {
        fs::write(dir.join(format!("{name}.toml")), scene.to_toml()).unwrap();
    }
}

/// Pipeline config next to rig.toml; `extra` is appended verbatim.
pub fn write_pipeline(dir: &Path, name: &str, scene: &str, out_dir: &str, extra: &str) -> PathBuf {
    let path = dir.join(format!("{name}.toml"));
    let text =
        format!("out_dir = \"{out_dir}\"\nrig = \"rig.toml\"\nscene = \"{scene}.toml\"\n{extra}\n");
    fs::write(&path, text).unwrap();
    path
}

/// Fraction of pixels valid in both maps whose ids agree after removing the
/// most common offset. Counted from scratch with a hash map.
pub fn mod_offset_accuracy(ids: &[Option<i64>], truth: &[Option<i64>]) -> Option<f64> {
    let mut offsets: HashMap<i64, usize> = HashMap::new();
    let mut both = 0usize;
    for (a, t) in ids.iter().zip(truth) {
        if let (Some(a), Some(t)) = (a, t) {
            *offsets.entry(t - a).or_insert(0) += 1;
            both += 1;
        }
    }
    let best = offsets.values().copied().max()?;
    Some(best as f64 / both as f64)
}

/// Fraction of truth-valid pixels carrying the label of their true parity.
/// Unlabelled pixels count as wrong.
pub fn label_accuracy_strict(labels: &ClassMap, truth: &[Option<i64>]) -> f64 {
    let mut valid = 0usize;
    let mut right = 0usize;
    for (l, t) in labels.labels.iter().zip(truth) {
        if let Some(t) = t {
            valid += 1;
            let expected = if t % 2 == 0 {
                Label::Green
            } else {
                Label::Blue
            };
            if *l == expected {
                right += 1;
            }
        }
    }
    right as f64 / valid as f64
}

/// Same count restricted to pixels that carry a label.
pub fn label_accuracy_labelled(labels: &ClassMap, truth: &[Option<i64>]) -> f64 {
    let mut both = 0usize;
    let mut right = 0usize;
    for (l, t) in labels.labels.iter().zip(truth) {
        let expected = match t {
            Some(t) if t % 2 == 0 => Label::Green,
            Some(_) => Label::Blue,
            None => continue,
        };
        if *l != Label::Invalid {
            both += 1;
            if *l == expected {
                right += 1;
            }
        }
    }
    right as f64 / both as f64
}

/// Parity law and row monotonicity, checked pixel by pixel.
pub fn parity_and_monotone(ids: &StripeIdMap, labels: &ClassMap) -> (usize, usize) {
    let w = ids.width as usize;
    let mut parity = 0;
    let mut order = 0;
    for y in 0..ids.height as usize {
        let mut last: Option<i64> = None;
        for x in 0..w {
            let Some(id) = ids.ids[y * w + x] else {
                continue;
            };
            let ok = match labels.labels[y * w + x] {
                Label::Green => id % 2 == 0,
                Label::Blue => id % 2 != 0,
                Label::Invalid => false,
            };
            if !ok {
                parity += 1;
            }
            if last.is_some_and(|l| id < l) {
                order += 1;
            }
            last = Some(id);
        }
    }
    (parity, order)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
