//! Scoring against simulator ground truth.
//!
//! All sums run sequentially in row-major pixel order, so metrics are
//! bit-identical however the inputs were produced.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{triangulate, DepthMap, RigCalibration};
use crate::error::{Error, Result};
use crate::pattern::StripeColor;
use crate::segmentation::ClassMap;
use crate::simulator::GroundTruth;
use crate::unwrap::StripeIdMap;

/// Relative depth error above which a pixel counts as an outlier.
pub const OUTLIER_REL: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    Strict,
    /// Remove the single best global id offset before scoring.
    #[default]
    ModOffset,
}

#[derive(Debug, Clone, Copy)]
pub enum EvalInput<'a> {
    Ids(&'a StripeIdMap),
    Depth(&'a DepthMap),
}

/// `None` marks a metric that is undefined for the input (no overlapping
/// valid pixels, or no depth available). Serializes to JSON `null`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub id_accuracy: Option<f64>,
    pub depth_rmse: Option<f64>,
    pub completeness: Option<f64>,
    pub outlier_rate: Option<f64>,
    /// Id offset removed in mod-offset mode.
    pub id_offset: Option<i64>,
    /// Pre-unwrap label accuracy, filled in by the pipeline.
    #[serde(default)]
    pub label_accuracy: Option<f64>,
}

impl Metrics {
    /// Single-line JSON.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}

/// Most frequent `truth - id` over pixels valid in both. Ties go to the
/// offset of smallest magnitude, then to the smaller value.
pub fn best_offset(ids: &StripeIdMap, truth: &GroundTruth) -> Option<i64> {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for (r, t) in ids.ids.iter().zip(&truth.stripe_ids) {
        if let (Some(r), Some(t)) = (r, t) {
            *counts.entry(t - r).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .max_by(|(a, ca), (b, cb)| ca.cmp(cb).then(b.abs().cmp(&a.abs())).then(b.cmp(a)))
        .map(|(o, _)| o)
}

/// Fraction of pixels valid in both whose label matches the truth parity.
pub fn label_accuracy(labels: &ClassMap, truth: &GroundTruth) -> Result<Option<f64>> {
    check_dims(labels.width, labels.height, truth)?;
    let mut both = 0usize;
    let mut correct = 0usize;
    for (l, t) in labels.labels.iter().zip(&truth.stripe_ids) {
        if let (Some(c), Some(t)) = (l.color(), t) {
            both += 1;
            if c == StripeColor::of_stripe(*t) {
                correct += 1;
            }
        }
    }
    Ok((both > 0).then(|| correct as f64 / both as f64))
}

fn check_dims(w: u32, h: u32, truth: &GroundTruth) -> Result<()> {
    if (w, h) != (truth.width, truth.height) {
        return Err(Error::domain(format!(
            "result is {w}x{h}, ground truth is {}x{}",
            truth.width, truth.height
        )));
    }
    Ok(())
}

fn depth_metrics(depth: &DepthMap, truth: &GroundTruth) -> (Option<f64>, Option<f64>) {
    let mut sq = 0.0;
    let mut outliers = 0usize;
    let mut n = 0usize;
    for (d, t) in depth.depth.iter().zip(&truth.depth) {
        if let (Some(d), Some(t)) = (d, t) {
            let e = d - t;
            sq += e * e;
            if e.abs() > OUTLIER_REL * t {
                outliers += 1;
            }
            n += 1;
        }
    }
    if n == 0 {
        return (None, None);
    }
    (
        (sq / n as f64).sqrt().into(),
        (outliers as f64 / n as f64).into(),
    )
}

/// Score `result` against `truth`. Depth metrics for an id map need `rig`;
/// without it they are reported as `None`. Completeness is the fraction of
/// truth-valid pixels that the result also marks valid.
pub fn evaluate(
    result: EvalInput<'_>,
    truth: &GroundTruth,
    mode: EvalMode,
    rig: Option<&RigCalibration>,
    min_angle: f64,
) -> Result<Metrics> {
    let truth_valid = truth.valid_count();
    let mut metrics = Metrics::default();
    match result {
        EvalInput::Ids(ids) => {
            check_dims(ids.width, ids.height, truth)?;
            let offset = match mode {
                EvalMode::Strict => 0,
                EvalMode::ModOffset => best_offset(ids, truth).unwrap_or(0),
            };
            let mut both = 0usize;
            let mut correct = 0usize;
            for (r, t) in ids.ids.iter().zip(&truth.stripe_ids) {
                if let (Some(r), Some(t)) = (r, t) {
                    both += 1;
                    if r + offset == *t {
                        correct += 1;
                    }
                }
            }
            metrics.id_accuracy = (both > 0).then(|| correct as f64 / both as f64);
            metrics.completeness = (truth_valid > 0).then(|| both as f64 / truth_valid as f64);
            if mode == EvalMode::ModOffset {
                metrics.id_offset = Some(offset);
            }
            if let Some(rig) = rig {
                let shifted = if offset == 0 {
                    ids.clone()
                } else {
                    ids.shifted(offset)
                };
                let depth = triangulate(&shifted, rig, min_angle);
                (metrics.depth_rmse, metrics.outlier_rate) = depth_metrics(&depth, truth);
            }
        }
        EvalInput::Depth(depth) => {
            check_dims(depth.width, depth.height, truth)?;
            let both = depth
                .depth
                .iter()
                .zip(&truth.depth)
                .filter(|(d, t)| d.is_some() && t.is_some())
                .count();
            metrics.completeness = (truth_valid > 0).then(|| both as f64 / truth_valid as f64);
            (metrics.depth_rmse, metrics.outlier_rate) = depth_metrics(depth, truth);
        }
    }
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth() -> GroundTruth {
        GroundTruth {
            width: 4,
            height: 2,
            stripe_ids: vec![
                Some(3),
                Some(3),
                Some(4),
                Some(5),
                None,
                Some(6),
                Some(6),
                Some(7),
            ],
            depth: vec![
                Some(1.0),
                Some(1.0),
                Some(1.1),
                Some(1.2),
                None,
                Some(1.3),
                Some(1.3),
                Some(1.4),
            ],
        }
    }

    #[test]
    fn identical_result_is_perfect() {
        let t = truth();
        let m = evaluate(EvalInput::Ids(&t.id_map()), &t, EvalMode::Strict, None, 0.0).unwrap();
        assert_eq!(m.id_accuracy, Some(1.0));
        assert_eq!(m.completeness, Some(1.0));
        let d = DepthMap {
            width: 4,
            height: 2,
            depth: t.depth.clone(),
        };
        let m = evaluate(EvalInput::Depth(&d), &t, EvalMode::Strict, None, 0.0).unwrap();
        assert_eq!(m.depth_rmse, Some(0.0));
        assert_eq!(m.outlier_rate, Some(0.0));
    }

    #[test]
    fn all_invalid_reports_nulls() {
        let t = truth();
        let ids = StripeIdMap::invalid(4, 2);
        let m = evaluate(EvalInput::Ids(&ids), &t, EvalMode::ModOffset, None, 0.0).unwrap();
        assert_eq!(m.completeness, Some(0.0));
        assert_eq!(m.id_accuracy, None);
        assert_eq!(m.depth_rmse, None);
        assert_eq!(m.outlier_rate, None);
        let line = m.to_json_line();
        assert!(line.contains("\"id_accuracy\":null"));
        assert!(!line.contains('\n'));
    }

    #[test]
    fn mod_offset_removes_global_shift() {
        let t = truth();
        let ids = t.id_map().shifted(-2);
        let strict = evaluate(EvalInput::Ids(&ids), &t, EvalMode::Strict, None, 0.0).unwrap();
        assert_eq!(strict.id_accuracy, Some(0.0));
        let m = evaluate(EvalInput::Ids(&ids), &t, EvalMode::ModOffset, None, 0.0).unwrap();
        assert_eq!(m.id_accuracy, Some(1.0));
        assert_eq!(m.id_offset, Some(2));
    }

    #[test]
    fn recount_matches_scalar_loop() {
        let t = truth();
        let mut ids = t.id_map();
        ids.ids[1] = Some(4);
        ids.ids[7] = None;
        let m = evaluate(EvalInput::Ids(&ids), &t, EvalMode::Strict, None, 0.0).unwrap();
        // 6 pixels valid in both, one wrong; 7 truth-valid pixels.
        assert_eq!(m.id_accuracy, Some(5.0 / 6.0));
        assert_eq!(m.completeness, Some(6.0 / 7.0));

        let mut d = DepthMap {
            width: 4,
            height: 2,
            depth: t.depth.clone(),
        };
        d.depth[0] = Some(1.02);
        d.depth[2] = Some(1.105);
        let m = evaluate(EvalInput::Depth(&d), &t, EvalMode::Strict, None, 0.0).unwrap();
        let expected = ((0.02f64.powi(2) + (1.105f64 - 1.1).powi(2)) / 7.0).sqrt();
        assert!((m.depth_rmse.unwrap() - expected).abs() < 1e-15);
        assert_eq!(m.outlier_rate, Some(1.0 / 7.0));
    }

    #[test]
    fn label_accuracy_counts_parity() {
        let t = truth();
        let mut labels = t.class_map();
        assert_eq!(label_accuracy(&labels, &t).unwrap(), Some(1.0));
        labels.labels[0] = labels.labels[0].flipped();
        assert_eq!(label_accuracy(&labels, &t).unwrap(), Some(6.0 / 7.0));
    }

    #[test]
    fn dimension_mismatch_is_domain_error() {
        let t = truth();
        let ids = StripeIdMap::invalid(3, 2);
        assert!(matches!(
            evaluate(EvalInput::Ids(&ids), &t, EvalMode::Strict, None, 0.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn offset_ties_prefer_small_magnitude() {
        let t = GroundTruth {
            width: 2,
            height: 1,
            stripe_ids: vec![Some(10), Some(10)],
            depth: vec![None, None],
        };
        let ids = StripeIdMap {
            width: 2,
            height: 1,
            ids: vec![Some(14), Some(9)],
            believable_rows: vec![true],
        };
        assert_eq!(best_offset(&ids, &t), Some(1));
    }
}
