//! Stripe unwrapping: turns the two-color class map into absolute stripe
//! indices.
//!
//! The pass runs seven steps in order:
//!
//! 1. unroll each row by counting color transitions ([`unroll_row`]);
//! 2. align every row with the rows above it by whole-segment offset votes
//!    ([`align_rows`]);
//! 3. mark believable rows ([`believable_rows`]);
//! 4. rewrite non-believable rows from the nearest believable pixel above
//!    ([`correct_from_believable`]);
//! 5. re-unroll each row seeded with the current ids;
//! 6. re-align each row segment by the median of per-pixel offset votes;
//! 7. snap each pixel to its upper neighbors (5 to 7 form [`refine_pass`]).
//!
//! Stripe ids always carry the parity of their label (green even, blue odd)
//! and never decrease left to right within a row. Every step restores both
//! properties before handing its map to the next one.
//!
//! Labels are first filtered vertically: a pixel outvoted by the labels a
//! few rows above and below cannot lie on a near-vertical stripe and is
//! dropped.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pattern::StripeColor;
use crate::segmentation::{ClassMap, Label};

/// Per-pixel absolute stripe indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StripeIdMap {
    pub width: u32,
    pub height: u32,
    pub ids: Vec<Option<i64>>,
    pub believable_rows: Vec<bool>,
}

impl StripeIdMap {
    pub fn invalid(width: u32, height: u32) -> Self {
        StripeIdMap {
            width,
            height,
            ids: vec![None; width as usize * height as usize],
            believable_rows: vec![false; height as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> Option<i64> {
        self.ids[y as usize * self.width as usize + x as usize]
    }

    pub fn row(&self, y: usize) -> &[Option<i64>] {
        let w = self.width as usize;
        &self.ids[y * w..(y + 1) * w]
    }

    pub fn valid_count(&self) -> usize {
        self.ids.iter().filter(|i| i.is_some()).count()
    }

    /// Copy with every valid id shifted by `offset`.
    pub fn shifted(&self, offset: i64) -> StripeIdMap {
        StripeIdMap {
            ids: self.ids.iter().map(|i| i.map(|v| v + offset)).collect(),
            ..self.clone()
        }
    }

    /// Transpose the id grid. Believable flags belong to scan lines and are
    /// carried over unchanged, so after unwrapping a transposed map they
    /// index columns.
    pub fn transposed(&self) -> StripeIdMap {
        let (w, h) = (self.width as usize, self.height as usize);
        let mut ids = vec![None; w * h];
        for y in 0..h {
            for x in 0..w {
                ids[x * h + y] = self.ids[y * w + x];
            }
        }
        StripeIdMap {
            width: self.height,
            height: self.width,
            ids,
            believable_rows: self.believable_rows.clone(),
        }
    }

    /// Pixels whose id parity disagrees with `labels`, or that carry an id
    /// while their label is Invalid.
    pub fn parity_violations(&self, labels: &ClassMap) -> usize {
        self.ids
            .iter()
            .zip(&labels.labels)
            .filter(|(id, label)| match (id, label.color()) {
                (Some(id), Some(color)) => id.rem_euclid(2) != color.parity(),
                (Some(_), None) => true,
                (None, _) => false,
            })
            .count()
    }

    /// Adjacent valid pixel pairs within a row whose ids decrease.
    pub fn monotonicity_violations(&self) -> usize {
        (0..self.height as usize)
            .map(|y| {
                let mut last: Option<i64> = None;
                let mut bad = 0;
                for id in self.row(y).iter().flatten() {
                    if last.is_some_and(|l| *id < l) {
                        bad += 1;
                    }
                    last = Some(*id);
                }
                bad
            })
            .sum()
    }
}

/// How absolute stripe identity is fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    /// The first valid run of the topmost believable row gets id 0 (green)
    /// or 1 (blue). If that leaves negative ids elsewhere, the whole map is
    /// raised by the smallest even amount that clears them.
    #[default]
    FirstRunZero,
    /// The first-run anchoring shifted by this even amount.
    FixedOffset(i64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnwrapParams {
    /// Runs shorter than this many pixels are treated as noise.
    pub min_run: usize,
    /// Longest Invalid gap, in pixels, that a row segment can bridge.
    pub max_gap: usize,
    /// Same-colored runs separated by a gap of at most this many pixels are
    /// one stripe; longer gaps hide a stripe of the other color.
    pub bridge_gap: usize,
    /// Minimum agreement with the upper row for a row to be believable.
    pub agree_theta: f64,
    /// Minimum valid fraction for a row to be believable.
    pub valid_phi: f64,
    /// Number of rows above that vote in alignment and snapping.
    pub reference_rows: usize,
    /// Vertical label filter radius in rows; 0 disables the filter.
    pub filter_radius: usize,
    pub anchor: Anchor,
}

impl Default for UnwrapParams {
    fn default() -> Self {
        UnwrapParams {
            min_run: 1,
            max_gap: 16,
            bridge_gap: 1,
            agree_theta: 0.9,
            valid_phi: 0.3,
            reference_rows: 3,
            filter_radius: 4,
            anchor: Anchor::FirstRunZero,
        }
    }
}

impl UnwrapParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_run < 1 {
            return Err(Error::config("min_run must be >= 1"));
        }
        if !(self.agree_theta > 0.0 && self.agree_theta <= 1.0) {
            return Err(Error::config(format!(
                "agree_theta must be in (0, 1], got {}",
                self.agree_theta
            )));
        }
        if !(self.valid_phi > 0.0 && self.valid_phi <= 1.0) {
            return Err(Error::config(format!(
                "valid_phi must be in (0, 1], got {}",
                self.valid_phi
            )));
        }
        if self.reference_rows < 1 {
            return Err(Error::config("reference_rows must be >= 1"));
        }
        if let Anchor::FixedOffset(k) = self.anchor {
            if k.rem_euclid(2) != 0 {
                return Err(Error::config(format!(
                    "fixed anchor offset must be even to preserve stripe parity, got {k}"
                )));
            }
        }
        Ok(())
    }
}

/// Maximal same-label run within a row; `end` is exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Run {
    pub start: usize,
    pub end: usize,
    pub color: StripeColor,
}

impl Run {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Runs of at least `min_run` pixels, in left-to-right order.
pub fn runs(row: &[Label], min_run: usize) -> Vec<Run> {
    let mut out = Vec::new();
    let mut x = 0;
    while x < row.len() {
        let label = row[x];
        let start = x;
        while x < row.len() && row[x] == label {
            x += 1;
        }
        if let Some(color) = label.color() {
            if x - start >= min_run {
                out.push(Run {
                    start,
                    end: x,
                    color,
                });
            }
        }
    }
    out
}

/// Result of unrolling one row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowUnroll {
    /// Relative ids; later segments continue provisionally from the
    /// previous segment.
    pub ids: Vec<Option<i64>>,
    /// Column ranges `[start, end)` of independently offset segments.
    pub segments: Vec<(usize, usize)>,
}

/// Smallest id above `prev` with the parity of `color`.
fn next_with_parity(prev: i64, color: StripeColor) -> i64 {
    if (prev + 1).rem_euclid(2) == color.parity() {
        prev + 1
    } else {
        prev + 2
    }
}

/// Id step from one run to the next within a segment.
fn transition_step(prev: &Run, next: &Run, bridge_gap: usize) -> i64 {
    if prev.color != next.color {
        1
    } else if next.start - prev.end <= bridge_gap {
        0
    } else {
        2
    }
}

/// Step 1: unroll a row by counting color transitions along it.
pub fn unroll_row(row: &[Label], params: &UnwrapParams) -> RowUnroll {
    let mut ids = vec![None; row.len()];
    let mut segments: Vec<(usize, usize)> = Vec::new();
    let mut prev: Option<(Run, i64)> = None;
    for run in runs(row, params.min_run) {
        let id = match prev {
            None => {
                segments.push((run.start, run.end));
                run.color.parity()
            }
            Some((p, pid)) if run.start - p.end > params.max_gap => {
                segments.push((run.start, run.end));
                next_with_parity(pid, run.color)
            }
            Some((p, pid)) => {
                segments.last_mut().expect("segment open").1 = run.end;
                pid + transition_step(&p, &run, params.bridge_gap)
            }
        };
        ids[run.start..run.end].fill(Some(id));
        prev = Some((run, id));
    }
    RowUnroll { ids, segments }
}

/// Keep a longest non-decreasing subsequence of the valid ids in `row` and
/// invalidate everything else.
fn enforce_monotone(row: &mut [Option<i64>]) {
    let valid: Vec<(usize, i64)> = row
        .iter()
        .enumerate()
        .filter_map(|(x, id)| id.map(|v| (x, v)))
        .collect();
    if valid.windows(2).all(|w| w[0].1 <= w[1].1) {
        return;
    }
    // Patience sorting with predecessor links.
    let mut tails: Vec<usize> = Vec::new();
    let mut prev = vec![usize::MAX; valid.len()];
    for (i, &(_, v)) in valid.iter().enumerate() {
        let pos = tails.partition_point(|&t| valid[t].1 <= v);
        if pos > 0 {
            prev[i] = tails[pos - 1];
        }
        if pos == tails.len() {
            tails.push(i);
        } else {
            tails[pos] = i;
        }
    }
    let mut keep = vec![false; valid.len()];
    let mut cur = *tails.last().expect("non-empty");
    loop {
        keep[cur] = true;
        if prev[cur] == usize::MAX {
            break;
        }
        cur = prev[cur];
    }
    for (i, &(x, _)) in valid.iter().enumerate() {
        if !keep[i] {
            row[x] = None;
        }
    }
}

/// Most frequent value, ties broken toward the smaller magnitude and then
/// the smaller value.
fn vote_winner(votes: &HashMap<i64, usize>) -> Option<i64> {
    votes
        .iter()
        .max_by(|(a, ca), (b, cb)| {
            ca.cmp(cb)
                .then_with(|| b.abs().cmp(&a.abs()))
                .then_with(|| b.cmp(a))
        })
        .map(|(v, _)| *v)
}

/// Even offsets `reference - current` over the columns of `range`, taken
/// from up to `k` aligned rows above `y`.
fn offset_votes(
    ids: &[Option<i64>],
    width: usize,
    y: usize,
    range: (usize, usize),
    current: &[Option<i64>],
    k: usize,
) -> Vec<i64> {
    let mut votes = Vec::new();
    for dy in 1..=k.min(y) {
        let upper = &ids[(y - dy) * width..(y - dy + 1) * width];
        for x in range.0..range.1 {
            if let (Some(u), Some(c)) = (upper[x], current[x]) {
                let d = u - c;
                if d.rem_euclid(2) == 0 {
                    votes.push(d);
                }
            }
        }
    }
    votes
}

/// Place `segment` of `row` with `offset`, falling back to continuing from
/// `prev_last` when the offset would break row monotonicity.
fn place_segment(
    row: &mut [Option<i64>],
    range: (usize, usize),
    offset: Option<i64>,
    prev_last: Option<i64>,
) {
    let first = row[range.0..range.1].iter().flatten().next().copied();
    let Some(first) = first else { return };
    let shift = match (offset, prev_last) {
        (Some(o), Some(p)) if first + o > p => o,
        (Some(o), None) => o,
        (_, Some(p)) => {
            let color = StripeColor::of_stripe(first);
            next_with_parity(p, color) - first
        }
        (None, None) => 0,
    };
    for id in row[range.0..range.1].iter_mut().flatten() {
        *id += shift;
    }
}

/// Step 2: align every row with the rows above it. Each segment takes the
/// even offset with the most votes from up to `reference_rows` rows above;
/// with no overlap there, the nearest valid pixel above in each column
/// votes instead; with no votes at all the segment keeps its provisional
/// offset.
pub fn align_rows(rows: &[RowUnroll], params: &UnwrapParams) -> StripeIdMap {
    let height = rows.len();
    let width = rows.first().map_or(0, |r| r.ids.len());
    let mut ids: Vec<Option<i64>> = Vec::with_capacity(width * height);
    let mut column_memory: Vec<Option<i64>> = vec![None; width];
    for (y, unrolled) in rows.iter().enumerate() {
        let mut row = unrolled.ids.clone();
        if y > 0 {
            let mut prev_last: Option<i64> = None;
            for &range in &unrolled.segments {
                let mut votes =
                    offset_votes(&ids, width, y, range, &unrolled.ids, params.reference_rows);
                if votes.is_empty() {
                    for x in range.0..range.1 {
                        if let (Some(u), Some(c)) = (column_memory[x], unrolled.ids[x]) {
                            if (u - c).rem_euclid(2) == 0 {
                                votes.push(u - c);
                            }
                        }
                    }
                }
                let mut tally: HashMap<i64, usize> = HashMap::new();
                for v in votes {
                    *tally.entry(v).or_default() += 1;
                }
                place_segment(&mut row, range, vote_winner(&tally), prev_last);
                prev_last = row[range.0..range.1]
                    .iter()
                    .flatten()
                    .last()
                    .copied()
                    .or(prev_last);
            }
            enforce_monotone(&mut row);
        }
        for (m, id) in column_memory.iter_mut().zip(&row) {
            if id.is_some() {
                *m = *id;
            }
        }
        ids.extend_from_slice(&row);
    }
    StripeIdMap {
        width: width as u32,
        height: height as u32,
        ids,
        believable_rows: vec![true; height],
    }
}

/// Fraction of mutually valid columns of rows `a` and `b` with equal ids.
fn agreement(a: &[Option<i64>], b: &[Option<i64>]) -> Option<f64> {
    let mut both = 0usize;
    let mut equal = 0usize;
    for (p, q) in a.iter().zip(b) {
        if let (Some(p), Some(q)) = (p, q) {
            both += 1;
            if p == q {
                equal += 1;
            }
        }
    }
    (both > 0).then(|| equal as f64 / both as f64)
}

/// Step 3: a row is believable when enough of it is valid and it agrees
/// with its upper neighbor. The top row, and any row without overlap above,
/// is judged against the row below instead; with no neighbor overlap at all
/// only coverage counts.
pub fn believable_rows(map: &StripeIdMap, params: &UnwrapParams) -> Vec<bool> {
    let h = map.height as usize;
    let w = map.width as usize;
    (0..h)
        .map(|y| {
            let row = map.row(y);
            let valid = row.iter().filter(|i| i.is_some()).count();
            if w == 0 || (valid as f64) < params.valid_phi * w as f64 {
                return false;
            }
            let above = (y > 0).then(|| agreement(row, map.row(y - 1))).flatten();
            let below = (y + 1 < h)
                .then(|| agreement(row, map.row(y + 1)))
                .flatten();
            match above.or(below) {
                Some(a) => a >= params.agree_theta,
                None => true,
            }
        })
        .collect()
}

/// Step 4: rewrite every pixel of a non-believable row from the nearest
/// believable pixel directly above, moving by one toward the pixel's own id
/// when the parities differ.
pub fn correct_from_believable(map: &StripeIdMap, mask: &[bool]) -> StripeIdMap {
    let w = map.width as usize;
    let mut out = map.clone();
    out.believable_rows = mask.to_vec();
    let mut reference: Vec<Option<i64>> = vec![None; w];
    for (y, &believable) in mask.iter().enumerate().take(map.height as usize) {
        let row = &mut out.ids[y * w..(y + 1) * w];
        if believable {
            for (r, id) in reference.iter_mut().zip(row.iter()) {
                if id.is_some() {
                    *r = *id;
                }
            }
            continue;
        }
        for (id, r) in row.iter_mut().zip(&reference) {
            if let (Some(v), Some(r)) = (id.as_mut(), r) {
                *v = if (*v - r).rem_euclid(2) == 0 {
                    *r
                } else if *v > *r {
                    r + 1
                } else {
                    r - 1
                };
            }
        }
        enforce_monotone(row);
    }
    out
}

/// Step 5: re-unroll each row, seeding every run with the most common id it
/// already carries. Runs without a seed continue from the previous run by
/// the transition rule.
fn reunroll_seeded(map: &StripeIdMap, labels: &ClassMap, params: &UnwrapParams) -> StripeIdMap {
    let w = map.width as usize;
    let mut out = map.clone();
    if w == 0 {
        return out;
    }
    out.ids.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let current = map.row(y);
        let mut prev: Option<(Run, i64)> = None;
        let mut fresh = vec![None; w];
        for run in runs(labels.row(y as u32), params.min_run) {
            let mut tally: HashMap<i64, usize> = HashMap::new();
            for id in current[run.start..run.end].iter().flatten() {
                *tally.entry(*id).or_default() += 1;
            }
            let seed = tally
                .iter()
                .max_by(|(a, ca), (b, cb)| ca.cmp(cb).then_with(|| b.cmp(a)))
                .map(|(v, _)| *v);
            let id = seed.or_else(|| {
                let (p, pid) = prev?;
                (run.start - p.end <= params.max_gap)
                    .then(|| pid + transition_step(&p, &run, params.bridge_gap))
            });
            if let Some(id) = id {
                fresh[run.start..run.end].fill(Some(id));
                prev = Some((run, id));
            }
        }
        enforce_monotone(&mut fresh);
        row.copy_from_slice(&fresh);
    });
    out
}

/// Segments of a row: valid runs joined across gaps of at most `max_gap`.
fn row_segments(row: &[Option<i64>], max_gap: usize) -> Vec<(usize, usize)> {
    let mut segments: Vec<(usize, usize)> = Vec::new();
    let mut last_valid: Option<usize> = None;
    for (x, id) in row.iter().enumerate() {
        if id.is_none() {
            continue;
        }
        match (last_valid, segments.last_mut()) {
            (Some(l), Some(seg)) if x - l - 1 <= max_gap => seg.1 = x + 1,
            _ => segments.push((x, x + 1)),
        }
        last_valid = Some(x);
    }
    segments
}

/// Step 6: shift each row segment by the median of the per-pixel offsets to
/// the rows above.
fn realign_per_pixel(map: &StripeIdMap, params: &UnwrapParams) -> StripeIdMap {
    let w = map.width as usize;
    let mut out = map.clone();
    for y in 1..map.height as usize {
        let mut row = out.ids[y * w..(y + 1) * w].to_vec();
        let current = row.clone();
        let mut prev_last: Option<i64> = None;
        for range in row_segments(&current, params.max_gap) {
            let mut votes = offset_votes(&out.ids, w, y, range, &current, params.reference_rows);
            let offset = if votes.is_empty() {
                Some(0)
            } else {
                let mid = (votes.len() - 1) / 2;
                let (_, m, _) = votes.select_nth_unstable(mid);
                Some(*m)
            };
            place_segment(&mut row, range, offset, prev_last);
            prev_last = row[range.0..range.1]
                .iter()
                .flatten()
                .last()
                .copied()
                .or(prev_last);
        }
        enforce_monotone(&mut row);
        out.ids[y * w..(y + 1) * w].copy_from_slice(&row);
    }
    out
}

/// Candidate in `{u - 1, u, u + 1}` with the parity of `v`, closest to `v`.
fn parity_snap(v: i64, u: i64) -> i64 {
    if (v - u).rem_euclid(2) == 0 {
        u
    } else if v > u {
        u + 1
    } else {
        u - 1
    }
}

/// Step 7: every pixel takes the value most supported by its upper
/// neighbors (each snapped to the pixel's parity within one stripe) and its
/// own current id; ties keep the current id.
fn snap_to_upper(map: &StripeIdMap, params: &UnwrapParams) -> StripeIdMap {
    let w = map.width as usize;
    let mut out = map.clone();
    for y in 1..map.height as usize {
        let mut row = out.ids[y * w..(y + 1) * w].to_vec();
        for x in 0..w {
            let Some(v) = row[x] else { continue };
            let mut candidates: [(i64, usize); 8] = [
                (v, 1),
                (0, 0),
                (0, 0),
                (0, 0),
                (0, 0),
                (0, 0),
                (0, 0),
                (0, 0),
            ];
            let mut used = 1;
            let mut tally = |c: i64| {
                if let Some(slot) = candidates[..used].iter_mut().find(|(val, _)| *val == c) {
                    slot.1 += 1;
                } else if used < candidates.len() {
                    candidates[used] = (c, 1);
                    used += 1;
                }
            };
            for dy in 1..=params.reference_rows.min(y).min(7) {
                if let Some(u) = out.ids[(y - dy) * w + x] {
                    tally(parity_snap(v, u));
                }
            }
            let own = candidates[0].1;
            let (best, count) = candidates[..used]
                .iter()
                .copied()
                .max_by(|a, b| {
                    a.1.cmp(&b.1)
                        .then_with(|| (b.0 == v).cmp(&(a.0 == v)).reverse())
                })
                .expect("own vote present");
            if count > own {
                row[x] = Some(best);
            }
        }
        enforce_monotone(&mut row);
        out.ids[y * w..(y + 1) * w].copy_from_slice(&row);
    }
    out
}

/// Steps 5 to 7 as one refinement pass. `labels` are the labels the map
/// was unrolled from (after vertical filtering).
pub fn refine_pass(map: &StripeIdMap, labels: &ClassMap, params: &UnwrapParams) -> StripeIdMap {
    let seeded = reunroll_seeded(map, labels, params);
    let aligned = realign_per_pixel(&seeded, params);
    snap_to_upper(&aligned, params)
}

/// Drop pixels outvoted by their vertical neighbors: among the valid labels
/// within `filter_radius` rows above and below, the other color outnumbers
/// the pixel's own by at least two. Stripes run vertically, so an isolated
/// misclassification rarely survives; with radius 1 this removes exactly the
/// vertical singletons.
pub fn filter_labels(classmap: &ClassMap, params: &UnwrapParams) -> ClassMap {
    let mut out = classmap.clone();
    let r = params.filter_radius;
    if r == 0 {
        return out;
    }
    let (w, h) = (classmap.width as usize, classmap.height as usize);
    for y in 0..h {
        let (lo, hi) = (y.saturating_sub(r), (y + r).min(h - 1));
        for x in 0..w {
            let own = classmap.labels[y * w + x];
            if !own.is_valid() {
                continue;
            }
            let (mut same, mut other) = (0usize, 0usize);
            for yy in (lo..=hi).filter(|&yy| yy != y) {
                match classmap.labels[yy * w + x] {
                    l if l == own => same += 1,
                    Label::Invalid => {}
                    _ => other += 1,
                }
            }
            if other >= same + 2 {
                out.labels[y * w + x] = Label::Invalid;
            }
        }
    }
    out
}

fn apply_anchor(map: &mut StripeIdMap, anchor: Anchor) {
    let w = map.width as usize;
    let first = (0..map.height as usize)
        .filter(|&y| map.believable_rows[y])
        .chain(0..map.height as usize)
        .find_map(|y| map.ids[y * w..(y + 1) * w].iter().flatten().next().copied());
    let Some(first) = first else { return };
    let mut shift = -(first - first.rem_euclid(2));
    match anchor {
        Anchor::FixedOffset(k) => shift += k,
        Anchor::FirstRunZero => {
            let min = map.ids.iter().flatten().min().copied().unwrap_or(0) + shift;
            if min < 0 {
                shift += -min + (-min).rem_euclid(2);
            }
        }
    }
    for id in map.ids.iter_mut().flatten() {
        *id += shift;
    }
}

/// Run the full seven-step unwrapping.
pub fn unwrap(classmap: &ClassMap, params: &UnwrapParams) -> Result<StripeIdMap> {
    params.validate()?;
    let labels = filter_labels(classmap, params);
    let rows: Vec<RowUnroll> = (0..labels.height)
        .into_par_iter()
        .map(|y| unroll_row(labels.row(y), params))
        .collect();
    let aligned = if rows.is_empty() {
        StripeIdMap::invalid(labels.width, 0)
    } else {
        align_rows(&rows, params)
    };
    let mask = believable_rows(&aligned, params);
    let corrected = correct_from_believable(&aligned, &mask);
    let mut refined = refine_pass(&corrected, &labels, params);
    refined.believable_rows = mask;
    apply_anchor(&mut refined, params.anchor);
    Ok(refined)
}
