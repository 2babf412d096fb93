//! Module behavior on simulator scenes, checked against ground truth.

mod common;

use std::fs;
use std::time::Instant;

use image::{Rgb, RgbImage};
use stripescan::config::PipelineConfig;
use stripescan::io;
use stripescan::pipeline::run_pipeline;
use stripescan::reconstruct::{stripe_plane, triangulate, triangulate_pixel, EvalMode, Metrics};
use stripescan::segmentation::{
    color_balance_with_guard, directional_blur, segment, ClassMap, Label, SegmentParams,
};
use stripescan::simulator::{inject_misclassification, render_capture, GroundTruth};
use stripescan::unwrap::{
    align_rows, believable_rows, correct_from_believable, filter_labels, refine_pass, unroll_row,
    unwrap, RowUnroll, StripeIdMap, UnwrapParams,
};

use common::*;

fn render(scene: &stripescan::config::SceneFile) -> (RgbImage, GroundTruth) {
    let rig = rig();
    render_capture(
        &scene.surface().unwrap(),
        &rig,
        &rig.pattern,
        &scene.capture,
    )
    .unwrap()
}

fn labels_of(scene: &stripescan::config::SceneFile) -> (ClassMap, GroundTruth) {
    let (img, truth) = render(scene);
    (segment(&img, &SegmentParams::default()).unwrap(), truth)
}

fn unrolled(labels: &ClassMap, params: &UnwrapParams) -> Vec<RowUnroll> {
    (0..labels.height)
        .map(|y| unroll_row(labels.row(y), params))
        .collect()
}

fn accuracy(map: &StripeIdMap, truth: &GroundTruth) -> f64 {
    mod_offset_accuracy(&map.ids, &truth.stripe_ids).unwrap()
}

/// Labels with `rate` flips confined to rows `band`.
fn flip_band(labels: &ClassMap, rate: f64, seed: u64, band: std::ops::Range<u32>) -> ClassMap {
    let flipped = inject_misclassification(labels, rate, seed).unwrap();
    let w = labels.width as usize;
    let mut out = labels.clone();
    for y in band {
        let r = y as usize * w..(y as usize + 1) * w;
        out.labels[r.clone()].copy_from_slice(&flipped.labels[r]);
    }
    out
}

#[test]
fn gradient_albedo_score_sign_matches_stripe_color() {
    let (img, truth) = render(&gradient_plane_scene());
    let p = SegmentParams::default();
    let blurred = directional_blur(&img, p.blur_axis, p.blur_sigma, p.blur_support).unwrap();
    let balanced = color_balance_with_guard(&blurred, p.balance_window, p.zero_guard).unwrap();
    let (mut lit, mut agree) = (0usize, 0usize);
    for y in 0..truth.height {
        for x in 0..truth.width {
            let Some(s) = truth.stripe_ids[(y * truth.width + x) as usize] else {
                continue;
            };
            lit += 1;
            if balanced
                .score(x, y)
                .is_some_and(|d| (d > 0.0) == (s % 2 == 0))
            {
                agree += 1;
            }
        }
    }
    assert!(agree as f64 >= 0.99 * lit as f64, "{agree} of {lit}");
}

#[test]
fn global_threshold_is_no_better_than_local() {
    let (img, truth) = render(&gradient_plane_scene());
    let local = segment(&img, &SegmentParams::default()).unwrap();
    let local_acc = label_accuracy_strict(&local, &truth.stripe_ids);
    for global_threshold in [Some(0.0), Some(0.3), None] {
        let params = SegmentParams {
            global_threshold,
            threshold_window: stripescan::segmentation::Window::whole(),
            ..SegmentParams::default()
        };
        let global = segment(&img, &params).unwrap();
        let acc = label_accuracy_strict(&global, &truth.stripe_ids);
        assert!(
            acc <= local_acc,
            "global {global_threshold:?}: {acc} > {local_acc}"
        );
    }
}

#[test]
fn sphere_row_unrolls_to_truth_up_to_one_offset() {
    let (labels, truth) = labels_of(&sphere_scene());
    let y = truth.height / 2;
    let row = unroll_row(labels.row(y), &UnwrapParams::default());
    let w = truth.width as usize;
    let t = &truth.stripe_ids[y as usize * w..(y as usize + 1) * w];
    let offsets: std::collections::BTreeSet<i64> = row
        .ids
        .iter()
        .zip(t)
        .filter_map(|(a, b)| Some(b.as_ref()? - a.as_ref()?))
        .collect();
    assert_eq!(offsets.len(), 1, "{offsets:?}");
    assert!(row.ids.iter().flatten().count() > w / 2);
}

#[test]
fn plane_with_two_percent_flips_keeps_every_row_offset() {
    let (labels, truth) = labels_of(&plane_scene());
    let flipped = inject_misclassification(&labels, 0.02, 11).unwrap();
    let params = UnwrapParams::default();
    let aligned = align_rows(
        &unrolled(&filter_labels(&flipped, &params), &params),
        &params,
    );
    let w = truth.width as usize;
    let row_mode = |y: usize| {
        let mut counts = std::collections::HashMap::new();
        for x in 0..w {
            if let (Some(a), Some(t)) = (aligned.ids[y * w + x], truth.stripe_ids[y * w + x]) {
                *counts.entry(t - a).or_insert(0usize) += 1;
            }
        }
        counts.into_iter().max_by_key(|(_, c)| *c).map(|(o, _)| o)
    };
    let global = row_mode(0).unwrap();
    for y in 0..truth.height as usize {
        assert_eq!(row_mode(y), Some(global), "row {y}");
    }
}

#[test]
fn heavy_flip_band_rows_are_not_believable() {
    let (labels, _) = labels_of(&plane_scene());
    let banded = flip_band(&labels, 0.3, 4, 200..230);
    let params = UnwrapParams {
        filter_radius: 0,
        ..UnwrapParams::default()
    };
    let aligned = align_rows(&unrolled(&banded, &params), &params);
    let mask = believable_rows(&aligned, &params);
    for y in 200..230 {
        assert!(!mask[y], "row {y} in the band is believable");
    }
    let clean_outside = (0..480)
        .filter(|y| !(195..235).contains(y))
        .filter(|&y| mask[y])
        .count();
    assert_eq!(clean_outside, 480 - 40);
}

#[test]
fn correction_improves_sphere_with_flip_band() {
    let (labels, truth) = labels_of(&sphere_scene());
    let banded = flip_band(&labels, 0.3, 9, 150..190);
    let params = UnwrapParams {
        filter_radius: 0,
        ..UnwrapParams::default()
    };
    let aligned = align_rows(&unrolled(&banded, &params), &params);
    let mask = believable_rows(&aligned, &params);
    let corrected = correct_from_believable(&aligned, &mask);
    let (before, after) = (accuracy(&aligned, &truth), accuracy(&corrected, &truth));
    assert!(after > before, "{after} <= {before}");
}

#[test]
fn refine_does_not_raise_error_at_two_percent() {
    let (labels, truth) = labels_of(&sphere_scene());
    let params = UnwrapParams::default();
    let (mut before, mut after) = (Vec::new(), Vec::new());
    for seed in 1..=20 {
        let filtered = filter_labels(
            &inject_misclassification(&labels, 0.02, seed).unwrap(),
            &params,
        );
        let aligned = align_rows(&unrolled(&filtered, &params), &params);
        let corrected = correct_from_believable(&aligned, &believable_rows(&aligned, &params));
        let refined = refine_pass(&corrected, &filtered, &params);
        before.push(1.0 - accuracy(&corrected, &truth));
        after.push(1.0 - accuracy(&refined, &truth));
    }
    assert!(
        mean(&after) <= mean(&before),
        "{} > {}",
        mean(&after),
        mean(&before)
    );
}

#[test]
fn ideal_plane_unwraps_to_truth() {
    let (labels, truth) = labels_of(&plane_scene());
    let ids = unwrap(&labels, &UnwrapParams::default()).unwrap();
    assert!(accuracy(&ids, &truth) >= 0.999);
    assert_eq!(ids.parity_violations(&labels), 0);
    assert_eq!(ids.monotonicity_violations(), 0);
}

/// Worst seed over ten, recorded at 0.999993 and pinned.
const PINNED_PLANE_ONE_PERCENT: f64 = 0.9999;

#[test]
fn plane_with_one_percent_flips_stays_accurate() {
    let (labels, truth) = labels_of(&plane_scene());
    let worst = (1..=10)
        .map(|seed| {
            let flipped = inject_misclassification(&labels, 0.01, seed).unwrap();
            accuracy(&unwrap(&flipped, &UnwrapParams::default()).unwrap(), &truth)
        })
        .fold(f64::INFINITY, f64::min);
    assert!(worst >= PINNED_PLANE_ONE_PERCENT, "{worst}");
}

#[test]
fn truth_ids_triangulate_onto_their_light_planes() {
    let rig = rig();
    let (_, truth) = render(&plane_scene());
    let depth = triangulate(&truth.id_map(), &rig, 0.0);
    let w = truth.width as usize;
    let mut sq = 0.0;
    let mut n = 0;
    for (i, id) in truth.stripe_ids.iter().enumerate() {
        let Some(s) = id else { continue };
        let plane = stripe_plane(&rig, *s).unwrap();
        let (u, v) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
        let c = &rig.camera;
        let d = nalgebra::Vector3::new((u - c.cx) / c.fx, (v - c.cy) / c.fy, 1.0);
        let expected = plane.normal.dot(&plane.point) / plane.normal.dot(&d);
        let z = depth.depth[i].unwrap();
        sq += ((z - expected) / expected).powi(2);
        n += 1;
    }
    assert!((sq / n as f64).sqrt() < 1e-6);
}

#[test]
fn sphere_rmse_is_below_one_stripe_depth_step() {
    let rig = rig();
    let (labels, truth) = labels_of(&sphere_scene());
    let ids = unwrap(&labels, &UnwrapParams::default()).unwrap();
    let offset = stripescan::reconstruct::evaluate::best_offset(&ids, &truth).unwrap();
    let depth = triangulate(&ids.shifted(offset), &rig, 0.0);
    let (mut sq, mut n) = (0.0, 0usize);
    for (d, t) in depth.depth.iter().zip(&truth.depth) {
        if let (Some(d), Some(t)) = (d, t) {
            sq += (d - t).powi(2);
            n += 1;
        }
    }
    let rmse = (sq / n as f64).sqrt();
    // Depth change between adjacent light planes along the central ray.
    let (cx, cy) = (rig.camera.cx, rig.camera.cy);
    let center =
        truth.stripe_ids[(truth.height / 2 * truth.width + truth.width / 2) as usize].unwrap();
    let z = |s: i64| {
        triangulate_pixel(&rig.camera, &stripe_plane(&rig, s).unwrap(), cx, cy, 0.0)
            .unwrap()
            .1
    };
    let step = (z(center + 1) - z(center)).abs();
    assert!(rmse < step, "rmse {rmse} step {step}");
}

/// Minimal 16-bit PGM reader, independent of the crate's own.
fn read_pgm16(path: &std::path::Path) -> (usize, usize, Vec<Option<i64>>) {
    let bytes = fs::read(path).unwrap();
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(String::from_utf8(bytes[start..pos].to_vec()).unwrap());
    }
    assert_eq!(fields[0], "P5");
    assert_eq!(fields[3], "65535");
    let (w, h): (usize, usize) = (fields[1].parse().unwrap(), fields[2].parse().unwrap());
    let data = &bytes[pos + 1..];
    assert_eq!(data.len(), 2 * w * h);
    let ids = data
        .chunks(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .map(|v| (v != u16::MAX).then_some(v as i64))
        .collect();
    (w, h, ids)
}

#[test]
fn pipeline_metrics_match_recount() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_inputs(dir, &[("sphere", sphere_scene())]);
    let path = write_pipeline(dir, "run", "sphere", "out", "seed = 5\nflip_rate = 0.02");
    let cfg = PipelineConfig::load(&path).unwrap();
    assert_eq!(cfg.reconstruct.eval_mode, EvalMode::ModOffset);
    let manifest = run_pipeline(&cfg).unwrap();
    let out = dir.join("out");
    let reported: Metrics =
        serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(manifest.metrics, Some(reported));

    let (w, h, ids) = read_pgm16(&out.join("ids.pgm"));
    let (_, _, truth) = read_pgm16(&out.join("truth_ids.pgm"));
    let truth_valid = truth.iter().flatten().count();
    let both = ids
        .iter()
        .zip(&truth)
        .filter(|(a, t)| a.is_some() && t.is_some())
        .count();
    let acc = mod_offset_accuracy(&ids, &truth).unwrap();
    assert_eq!(reported.id_accuracy, Some(acc));
    assert_eq!(
        reported.completeness,
        Some(both as f64 / truth_valid as f64)
    );

    let labels = io::read_classmap(&out.join("classes_flipped.png")).unwrap();
    assert_eq!((labels.width as usize, labels.height as usize), (w, h));
    assert_eq!(
        reported.label_accuracy,
        Some(label_accuracy_labelled(&labels, &truth))
    );

    let offset = reported.id_offset.unwrap();
    let shifted = StripeIdMap {
        width: w as u32,
        height: h as u32,
        ids: ids.iter().map(|i| i.map(|v| v + offset)).collect(),
        believable_rows: vec![true; h],
    };
    let depth = triangulate(&shifted, &cfg.rig, cfg.reconstruct.min_angle());
    let truth_depth = io::read_pfm(&out.join("truth_depth.pfm")).unwrap();
    let pairs: Vec<f64> = depth
        .depth
        .iter()
        .zip(&truth_depth.depth)
        .filter_map(|(d, t)| Some(d.as_ref()? - t.as_ref()?))
        .collect();
    let rmse = (pairs.iter().map(|e| e * e).sum::<f64>() / pairs.len() as f64).sqrt();
    let got = reported.depth_rmse.unwrap();
    assert!((got - rmse).abs() <= 1e-12 * rmse, "{got} vs {rmse}");
}

fn stripe_capture(w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        // Slightly slanted three-pixel stripes.
        if ((x + y / 16) / 3) % 2 == 0 {
            Rgb([0, 255, 0])
        } else {
            Rgb([0, 0, 255])
        }
    })
}

fn best_time(img: &RgbImage) -> f64 {
    (0..3)
        .map(|_| {
            let start = Instant::now();
            let labels = segment(img, &SegmentParams::default()).unwrap();
            let ids = unwrap(&labels, &UnwrapParams::default()).unwrap();
            assert!(ids.valid_count() > 0);
            start.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn cost_grows_linearly_with_pixel_count() {
    let small = stripe_capture(320, 240);
    let large = stripe_capture(1280, 960);
    let per_pixel_small = best_time(&small) / (320.0 * 240.0);
    let per_pixel_large = best_time(&large) / (1280.0 * 960.0);
    let ratio = per_pixel_large / per_pixel_small;
    assert!(
        ratio < 3.0,
        "per-pixel cost grew {ratio:.2}x for 16x the pixels"
    );
}

#[test]
fn labels_with_invalid_rows_keep_parity() {
    let (labels, _) = labels_of(&sphere_scene());
    let mut holed = labels.clone();
    let w = holed.width as usize;
    for y in (0..holed.height as usize).step_by(7) {
        holed.labels[y * w..(y + 1) * w].fill(Label::Invalid);
    }
    let ids = unwrap(&holed, &UnwrapParams::default()).unwrap();
    assert_eq!(parity_and_monotone(&ids, &holed), (0, 0));
}
