mod common;

use nalgebra::Vector3;
use proptest::prelude::*;
use stripescan::io;
use stripescan::pattern::PatternSpec;
use stripescan::reconstruct::{
    evaluate, pixel_ray, stripe_plane, triangulate_pixel, DepthMap, EvalInput, EvalMode,
    PinholeModel, RigCalibration,
};
use stripescan::segmentation::{color_balance, window_mean, ClassMap, Label, RealRgbImage, Window};
use stripescan::simulator::{inject_misclassification, GroundTruth};
use stripescan::unwrap::{unwrap, StripeIdMap, UnwrapParams};

use common::parity_and_monotone;

fn label() -> impl Strategy<Value = Label> {
    prop_oneof![Just(Label::Green), Just(Label::Blue), Just(Label::Invalid)]
}

fn classmap(max_w: u32, max_h: u32) -> impl Strategy<Value = ClassMap> {
    (1..=max_w, 1..=max_h).prop_flat_map(|(w, h)| {
        proptest::collection::vec(label(), (w * h) as usize)
            .prop_map(move |labels| ClassMap::new(w, h, labels).unwrap())
    })
}

/// Slanted stripes of width `period` with a fraction of labels replaced.
fn noisy_stripes() -> impl Strategy<Value = ClassMap> {
    (4u32..60, 2u32..30, 1u32..6, 0u32..8).prop_flat_map(|(w, h, period, slant)| {
        proptest::collection::vec((0u8..20, label()), (w * h) as usize).prop_map(move |noise| {
            let labels = noise
                .iter()
                .enumerate()
                .map(|(i, (roll, replacement))| {
                    let (x, y) = (i as u32 % w, i as u32 / w);
                    let stripe = (x + y * slant / 8) / period;
                    if *roll == 0 {
                        *replacement
                    } else if stripe % 2 == 0 {
                        Label::Green
                    } else {
                        Label::Blue
                    }
                })
                .collect();
            ClassMap::new(w, h, labels).unwrap()
        })
    })
}

fn unwrap_params() -> impl Strategy<Value = UnwrapParams> {
    (1usize..4, 0usize..20, 0usize..3, 0usize..5, 1usize..5).prop_map(
        |(min_run, max_gap, bridge_gap, filter_radius, reference_rows)| UnwrapParams {
            min_run,
            max_gap,
            bridge_gap,
            filter_radius,
            reference_rows,
            ..UnwrapParams::default()
        },
    )
}

fn real_image() -> impl Strategy<Value = RealRgbImage> {
    (1u32..16, 1u32..12).prop_flat_map(|(w, h)| {
        proptest::collection::vec(proptest::array::uniform3(4.0f64..255.0), (w * h) as usize)
            .prop_map(move |data| RealRgbImage {
                width: w,
                height: h,
                data,
            })
    })
}

fn small_rig(yaw: f64, baseline: f64, stripe_width: u32) -> RigCalibration {
    let camera = PinholeModel::axis_aligned(500.0, 520.0, 80.0, 60.0);
    let projector = PinholeModel::looking_at(
        700.0,
        700.0,
        64.0,
        48.0,
        Vector3::new(baseline, 0.02, 0.0),
        Vector3::new(yaw, 0.0, 1.0),
        Vector3::new(0.0, 1.0, 0.0),
    )
    .unwrap();
    RigCalibration {
        camera,
        camera_width: 160,
        camera_height: 120,
        projector,
        pattern: PatternSpec::new(128, 96, stripe_width).unwrap(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn unwrap_keeps_parity_and_order_on_any_labels(labels in classmap(40, 20), params in unwrap_params()) {
        let ids = unwrap(&labels, &params).unwrap();
        prop_assert_eq!((ids.width, ids.height), (labels.width, labels.height));
        prop_assert_eq!(parity_and_monotone(&ids, &labels), (0, 0));
        prop_assert!(ids.ids.iter().flatten().all(|id| *id >= 0));
    }

    #[test]
    fn unwrap_keeps_parity_and_order_on_noisy_stripes(labels in noisy_stripes(), params in unwrap_params()) {
        let ids = unwrap(&labels, &params).unwrap();
        prop_assert_eq!(parity_and_monotone(&ids, &labels), (0, 0));
        prop_assert_eq!(ids.parity_violations(&labels), 0);
        prop_assert_eq!(ids.monotonicity_violations(), 0);
    }

    #[test]
    fn unwrap_is_deterministic(labels in noisy_stripes()) {
        let p = UnwrapParams::default();
        prop_assert_eq!(unwrap(&labels, &p).unwrap(), unwrap(&labels, &p).unwrap());
    }

    #[test]
    fn color_balance_ignores_channel_gains(
        img in real_image(),
        gains in proptest::array::uniform3(0.25f64..=4.0),
        wx in 1u32..9,
        wy in 1u32..9,
    ) {
        let scaled = RealRgbImage {
            data: img.data.iter().map(|p| std::array::from_fn(|c| p[c] * gains[c])).collect(),
            ..img.clone()
        };
        let a = color_balance(&img, Window::pixels(wx, wy)).unwrap();
        let b = color_balance(&scaled, Window::pixels(wx, wy)).unwrap();
        for (pa, pb) in a.values.iter().zip(&b.values) {
            for c in 0..3 {
                let (x, y) = (pa[c].unwrap(), pb[c].unwrap());
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(y.abs()));
            }
        }
    }

    #[test]
    fn window_mean_equals_direct_average(img in real_image(), wx in 1u32..20, wy in 1u32..20) {
        let means = window_mean(&img, Window::pixels(wx, wy)).unwrap();
        let (w, h) = (img.width as i64, img.height as i64);
        for y in 0..h {
            for x in 0..w {
                let x0 = (x - (wx / 2) as i64).max(0);
                let x1 = (x - (wx / 2) as i64 + wx as i64 - 1).min(w - 1);
                let y0 = (y - (wy / 2) as i64).max(0);
                let y1 = (y - (wy / 2) as i64 + wy as i64 - 1).min(h - 1);
                let mut sum = [0.0; 3];
                let mut n = 0.0;
                for yy in y0..=y1 {
                    for xx in x0..=x1 {
                        let p = img.data[(yy * w + xx) as usize];
                        for c in 0..3 {
                            sum[c] += p[c];
                        }
                        n += 1.0;
                    }
                }
                let got = means.means[(y * w + x) as usize];
                for c in 0..3 {
                    prop_assert!((got[c] - sum[c] / n).abs() <= 1e-9 * (1.0 + sum[c] / n));
                }
            }
        }
    }

    #[test]
    fn triangulated_point_lies_on_ray_and_plane(
        yaw in -0.1f64..0.1,
        baseline in 0.05f64..0.5,
        stripe_width in 1u32..5,
        u in 0.0f64..160.0,
        v in 0.0f64..120.0,
        stripe_frac in 0.0f64..1.0,
    ) {
        let rig = small_rig(yaw, baseline, stripe_width);
        let s = (stripe_frac * rig.pattern.stripe_count() as f64) as i64;
        let plane = stripe_plane(&rig, s).unwrap();
        if let Some((point, z)) = triangulate_pixel(&rig.camera, &plane, u, v, 1e-3) {
            let ray = pixel_ray(&rig.camera, u, v);
            let off_ray = (point - ray.origin).cross(&ray.direction).norm();
            prop_assert!(off_ray <= 1e-9 * (1.0 + z));
            prop_assert!(plane.signed_distance(&point).abs() <= 1e-9 * (1.0 + z));
            prop_assert!((rig.camera.world_to_device(&point).z - z).abs() <= 1e-12 * (1.0 + z));
        }
    }

    #[test]
    fn flips_touch_only_valid_pixels(labels in classmap(30, 20), rate in 0.0f64..=1.0, seed in any::<u64>()) {
        let flipped = inject_misclassification(&labels, rate, seed).unwrap();
        prop_assert_eq!(&flipped, &inject_misclassification(&labels, rate, seed).unwrap());
        for (a, b) in labels.labels.iter().zip(&flipped.labels) {
            prop_assert!(b == a || (a.is_valid() && *b == a.flipped()));
        }
    }

    #[test]
    fn mod_offset_accuracy_ignores_global_shifts(labels in noisy_stripes(), shift in -50i64..50) {
        let ids = unwrap(&labels, &UnwrapParams::default()).unwrap();
        let truth = GroundTruth {
            width: ids.width,
            height: ids.height,
            stripe_ids: ids.ids.clone(),
            depth: vec![None; ids.ids.len()],
        };
        let shifted = ids.shifted(shift);
        let m = evaluate(EvalInput::Ids(&shifted), &truth, EvalMode::ModOffset, None, 0.0).unwrap();
        if ids.valid_count() > 0 {
            prop_assert_eq!(m.id_accuracy, Some(1.0));
            prop_assert_eq!(m.id_offset, Some(-shift));
        }
    }

    #[test]
    fn stripe_ids_survive_pgm(w in 1u32..20, h in 1u32..20, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<Option<i64>> = (0..w * h)
            .map(|_| rng.gen_bool(0.8).then(|| rng.gen_range(0..65535)))
            .collect();
        let map = StripeIdMap { width: w, height: h, ids, believable_rows: vec![false; h as usize] };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ids.pgm");
        io::write_stripe_ids(&map, &path).unwrap();
        prop_assert_eq!(io::read_stripe_ids(&path).unwrap().ids, map.ids);
    }

    #[test]
    fn depth_survives_pfm(w in 1u32..20, h in 1u32..20, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let depth: Vec<Option<f64>> = (0..w * h)
            .map(|_| rng.gen_bool(0.7).then(|| rng.gen_range(0.1f32..10.0) as f64))
            .collect();
        let map = DepthMap { width: w, height: h, depth };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pfm");
        io::write_pfm(&map, &path).unwrap();
        prop_assert_eq!(io::read_pfm(&path).unwrap(), map);
    }
}
