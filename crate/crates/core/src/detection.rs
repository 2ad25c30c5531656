//! Turning latched occupancy changes into per-point dynamic labels.

use std::cmp::Ordering;
use std::collections::VecDeque;

use crate::geometry::VoxelKey;
use crate::integration::VoxelizedScan;
use crate::io::{Label, LabelVector};
use crate::voxel_map::{ChangeKind, VoxelMap};
use crate::{KeyMap, KeySet};

/// Current-scan voxels that just turned from free to occupied.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChangeSet {
    pub keys: KeySet,
}

pub fn extract_changes(vscan: &VoxelizedScan, map: &VoxelMap, k: u64, w_local: u64) -> ChangeSet {
    let keys = vscan
        .keys
        .iter()
        .filter(|key| {
            map.get(key).is_some_and(|r| {
                r.change_kind == ChangeKind::FreeToOccupied && r.changed_within(k, w_local)
            })
        })
        .copied()
        .collect();
    ChangeSet { keys }
}

/// Number of recently changed voxels around each current-scan voxel.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DynamicScore {
    pub scores: KeyMap<u32>,
}

impl DynamicScore {
    pub fn get(&self, key: &VoxelKey) -> u32 {
        self.scores.get(key).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn histogram(&self) -> Vec<u64> {
        let max = self.scores.values().copied().max().unwrap_or(0) as usize;
        let mut hist = vec![0u64; max + 1];
        for &s in self.scores.values() {
            hist[s as usize] += 1;
        }
        hist
    }
}

/// Convolves an all-ones `m³` kernel over the occupancy changes (either
/// direction) of the last `w_local` scans, evaluated at every voxel of the
/// current scan.
pub fn convolve_scores(
    vscan: &VoxelizedScan,
    map: &VoxelMap,
    k: u64,
    kernel_size: u32,
    w_local: u64,
) -> DynamicScore {
    let radius = (kernel_size as i32 - 1) / 2;
    let mut scores: KeyMap<u32> = vscan.keys.iter().map(|&key| (key, 0)).collect();
    for changed in map.recent_changes(k, w_local) {
        for v in changed.cube(radius) {
            if let Some(s) = scores.get_mut(&v) {
                *s += 1;
            }
        }
    }
    DynamicScore { scores }
}

/// Otsu split of an integer histogram: the `t` maximizing the between-class
/// variance of `{s < t}` versus `{s ≥ t}`, lowest `t` on ties. `None` when
/// fewer than two bins are populated.
pub fn otsu_split(hist: &[u64]) -> Option<u32> {
    let total: u128 = hist.iter().map(|&h| u128::from(h)).sum();
    let sum: u128 = hist
        .iter()
        .enumerate()
        .map(|(i, &h)| i as u128 * u128::from(h))
        .sum();

    // σ²_B · N² = (s0·N − S·n0)² / (n0·n1); compared as exact fractions.
    let mut best: Option<(u32, u128, u128)> = None;
    let (mut n0, mut s0) = (0u128, 0u128);
    for t in 1..hist.len() {
        n0 += u128::from(hist[t - 1]);
        s0 += (t as u128 - 1) * u128::from(hist[t - 1]);
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let diff = (s0 * total).abs_diff(sum * n0);
        let num = diff.checked_mul(diff);
        let den = n0 * n1;
        match (best, num) {
            (None, _) => best = Some((t as u32, num.unwrap_or(u128::MAX), den)),
            (Some((_, bn, bd)), Some(num)) => {
                if compare_fractions(num, den, bn, bd) == Ordering::Greater {
                    best = Some((t as u32, num, den));
                }
            }
            (Some(_), None) => {}
        }
    }
    best.map(|(t, _, _)| t)
}

fn compare_fractions(a_num: u128, a_den: u128, b_num: u128, b_den: u128) -> Ordering {
    match (a_num.checked_mul(b_den), b_num.checked_mul(a_den)) {
        (Some(l), Some(r)) => l.cmp(&r),
        _ => (a_num as f64 / a_den as f64)
            .partial_cmp(&(b_num as f64 / b_den as f64))
            .unwrap_or(Ordering::Equal),
    }
}

/// Automatic dynamic-score threshold, never below `otsu_min`. Voxels with a
/// score at or above the result are dynamic.
pub fn otsu_threshold(scores: &DynamicScore, otsu_min: u32) -> u32 {
    if scores.is_empty() {
        return otsu_min;
    }
    let hist = scores.histogram();
    let raw = otsu_split(&hist).unwrap_or_else(|| {
        // Only one populated bin: that value.
        hist.iter().position(|&h| h > 0).unwrap_or(0) as u32
    });
    raw.max(otsu_min)
}

/// Voxels classified dynamic within the last `w_dynamic` scans.
#[derive(Debug, Clone)]
pub struct TemporalDynamicMap {
    w_dynamic: u64,
    entries: KeyMap<u64>,
}

impl TemporalDynamicMap {
    pub fn new(w_dynamic: u64) -> Self {
        TemporalDynamicMap {
            w_dynamic,
            entries: KeyMap::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last_dynamic(&self, key: &VoxelKey) -> Option<u64> {
        self.entries.get(key).copied()
    }

    pub fn insert(&mut self, key: VoxelKey, k: u64) {
        self.entries.insert(key, k);
    }

    /// Drops entries older than `k − w_dynamic`.
    pub fn evict(&mut self, k: u64) {
        let w = self.w_dynamic;
        self.entries.retain(|_, &mut j| j <= k && k - j <= w);
    }
}

/// `{v : score ≥ threshold}` plus current-scan voxels still held by the
/// temporal map. Newly thresholded voxels are recorded in the map at scan `k`.
pub fn classify_dynamic(
    scores: &DynamicScore,
    threshold: u32,
    tdm: &mut TemporalDynamicMap,
    k: u64,
) -> KeySet {
    tdm.evict(k);
    let mut dynamic = KeySet::default();
    for (&key, &s) in &scores.scores {
        if s >= threshold || tdm.entries.contains_key(&key) {
            dynamic.insert(key);
        }
    }
    for (&key, &s) in &scores.scores {
        if s >= threshold {
            tdm.insert(key, k);
        }
    }
    dynamic
}

/// Grows `dynamic` into every candidate voxel within Chebyshev `radius`.
pub fn dilate(dynamic: &KeySet, radius: u32, candidates: &KeySet) -> KeySet {
    let mut out = dynamic.clone();
    if radius == 0 {
        return out;
    }
    for key in dynamic {
        for n in key.cube(radius as i32) {
            if candidates.contains(&n) {
                out.insert(n);
            }
        }
    }
    out
}

/// A point is dynamic iff its voxel is. Points dropped at voxelization are static.
pub fn label_points(vscan: &VoxelizedScan, dynamic: &KeySet) -> LabelVector {
    vscan
        .point_to_key
        .iter()
        .map(|slot| match slot {
            Some(s) if dynamic.contains(&vscan.keys[*s as usize]) => Label::Dynamic,
            _ => Label::Static,
        })
        .collect()
}

/// What the delayed emitter needs to remember about one processed scan.
#[derive(Debug, Clone)]
pub struct DelayedEntry {
    pub index: u64,
    pub point_keys: Vec<Option<VoxelKey>>,
    pub online: LabelVector,
    pub dynamic: KeySet,
}

impl DelayedEntry {
    pub fn new(index: u64, vscan: &VoxelizedScan, online: LabelVector, dynamic: KeySet) -> Self {
        let point_keys = (0..vscan.point_to_key.len())
            .map(|i| vscan.key_of_point(i))
            .collect();
        DelayedEntry {
            index,
            point_keys,
            online,
            dynamic,
        }
    }
}

/// The lookahead for a scan is not complete yet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NotReady;

/// Delayed labels for `target`: its online labels, plus every point whose
/// voxel is dynamic in any scan of `lookahead` (the up to `w_local` scans that
/// follow it). Fewer than `w_local` lookahead scans are only accepted at the
/// end of the sequence.
pub fn finalize_delayed(
    target: &DelayedEntry,
    lookahead: &[&DelayedEntry],
    w_local: u64,
    end_of_sequence: bool,
) -> Result<LabelVector, NotReady> {
    if (lookahead.len() as u64) < w_local && !end_of_sequence {
        return Err(NotReady);
    }
    let window = &lookahead[..lookahead.len().min(w_local as usize)];
    Ok(target
        .point_keys
        .iter()
        .zip(&target.online)
        .map(|(key, &label)| {
            let future = key.is_some_and(|k| window.iter().any(|e| e.dynamic.contains(&k)));
            if future {
                Label::Dynamic
            } else {
                label
            }
        })
        .collect())
}

/// Buffers per-scan results until their lookahead is available.
#[derive(Debug)]
pub struct DelayedBuffer {
    w_local: u64,
    pending: VecDeque<DelayedEntry>,
}

impl DelayedBuffer {
    pub fn new(w_local: u64) -> Self {
        DelayedBuffer {
            w_local,
            pending: VecDeque::new(),
        }
    }

    pub fn push(&mut self, entry: DelayedEntry) {
        self.pending.push_back(entry);
    }

    /// Emits the oldest buffered scan once `w_local` later scans are in.
    pub fn pop_ready(&mut self) -> Option<(u64, LabelVector)> {
        self.pop(false)
    }

    /// Emits the oldest buffered scan with whatever lookahead exists.
    pub fn pop_final(&mut self) -> Option<(u64, LabelVector)> {
        self.pop(true)
    }

    fn pop(&mut self, end_of_sequence: bool) -> Option<(u64, LabelVector)> {
        let target = self.pending.front()?;
        let lookahead: Vec<&DelayedEntry> = self.pending.iter().skip(1).collect();
        let labels = finalize_delayed(target, &lookahead, self.w_local, end_of_sequence).ok()?;
        let index = target.index;
        self.pending.pop_front();
        Some((index, labels))
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }
}
