//! Per-scan front end: map-frame transform, voxelization, raycasting, the
//! scan's truncated distance field and the resulting occupancy likelihoods.

use nalgebra::Vector3;

use crate::config::Config;
use crate::error::Result;
use crate::geometry::{voxelize_point, Pose, VoxelKey};
use crate::io::Scan;
use crate::transition::TransitionModel;
use crate::voxel_map::VoxelMap;
use crate::{KeyMap, KeySet};

pub fn transform_scan(scan: &Scan, pose: &Pose) -> Vec<Vector3<f64>> {
    scan.points
        .iter()
        .map(|p| pose.transform_point(p))
        .collect()
}

/// A scan quantized onto the map grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelizedScan {
    /// Distinct hit voxels in order of first appearance.
    pub keys: Vec<VoxelKey>,
    /// Index into `keys` for every scan point; `None` for points dropped by
    /// the minimum-range filter.
    pub point_to_key: Vec<Option<u32>>,
    pub sensor_key: VoxelKey,
    pub sensor_origin: Vector3<f64>,
}

impl VoxelizedScan {
    /// Transforms `scan` by `pose` and quantizes it at `delta`. Points closer
    /// than `min_range` to the sensor (measured in the sensor frame) are skipped.
    pub fn build(scan: &Scan, pose: &Pose, delta: f64, min_range: f64) -> Result<Self> {
        let sensor_origin = *pose.translation();
        let sensor_key = voxelize_point(&sensor_origin, delta)?;
        let mut index: KeyMap<u32> = KeyMap::default();
        let mut keys = Vec::new();
        let mut point_to_key = Vec::with_capacity(scan.len());
        let min2 = min_range * min_range;
        for p in &scan.points {
            if p.norm_squared() < min2 {
                point_to_key.push(None);
                continue;
            }
            let key = voxelize_point(&pose.transform_point(p), delta)?;
            let slot = *index.entry(key).or_insert_with(|| {
                keys.push(key);
                (keys.len() - 1) as u32
            });
            point_to_key.push(Some(slot));
        }
        Ok(VoxelizedScan {
            keys,
            point_to_key,
            sensor_key,
            sensor_origin,
        })
    }

    pub fn key_of_point(&self, i: usize) -> Option<VoxelKey> {
        self.point_to_key[i].map(|s| self.keys[s as usize])
    }

    pub fn key_set(&self) -> KeySet {
        self.keys.iter().copied().collect()
    }
}

/// Walks the 3D Bresenham line from `start` to `end`, both inclusive,
/// stopping early when `visit` returns `false`.
///
/// The axis with the largest extent drives the walk (ties prefer x, then y);
/// every step advances it by one and moves each other axis by at most one.
pub fn walk_ray(start: VoxelKey, end: VoxelKey, mut visit: impl FnMut(VoxelKey) -> bool) {
    let from = [start.x, start.y, start.z];
    let to = [end.x, end.y, end.z];
    let mut d = [0i64; 3];
    let mut step = [0i32; 3];
    for a in 0..3 {
        d[a] = (i64::from(to[a]) - i64::from(from[a])).abs();
        step[a] = if to[a] >= from[a] { 1 } else { -1 };
    }
    let major = if d[0] >= d[1] && d[0] >= d[2] {
        0
    } else if d[1] >= d[2] {
        1
    } else {
        2
    };
    let (m1, m2) = ((major + 1) % 3, (major + 2) % 3);
    let n = d[major];
    let mut err1 = 2 * d[m1] - n;
    let mut err2 = 2 * d[m2] - n;
    let mut cur = from;
    for _ in 0..n {
        if !visit(VoxelKey::new(cur[0], cur[1], cur[2])) {
            return;
        }
        if err1 >= 0 {
            cur[m1] += step[m1];
            err1 -= 2 * n;
        }
        if err2 >= 0 {
            cur[m2] += step[m2];
            err2 -= 2 * n;
        }
        err1 += 2 * d[m1];
        err2 += 2 * d[m2];
        cur[major] += step[major];
    }
    visit(VoxelKey::new(cur[0], cur[1], cur[2]));
}

/// Cells of the 3D Bresenham line from `start` to `end`, endpoints included.
pub fn raycast(start: VoxelKey, end: VoxelKey) -> Vec<VoxelKey> {
    let mut out = Vec::with_capacity(start.chebyshev(end) as usize + 1);
    walk_ray(start, end, |k| {
        out.push(k);
        true
    });
    out
}

/// Every voxel traversed by a ray from the sensor to a hit voxel, hits
/// included. The sensor's own voxel is only included when it is itself hit,
/// and rays stop at `r_max` (measured between voxel indices).
pub fn enumerate_observed(vscan: &VoxelizedScan, r_max: f64, delta: f64) -> KeySet {
    let origin = vscan.sensor_key;
    let limit = (r_max / delta).powi(2);
    let mut observed = KeySet::default();
    observed.reserve(vscan.keys.len() * 8);
    for &hit in &vscan.keys {
        if hit == origin {
            observed.insert(hit);
            continue;
        }
        walk_ray(origin, hit, |k| {
            if k == origin {
                return true;
            }
            if k.distance_squared(origin) as f64 > limit {
                return false;
            }
            observed.insert(k);
            true
        });
    }
    observed
}

/// Distance from each observed voxel to the nearest hit voxel, in meters.
/// Exact up to `truncation`; anything farther reports `truncation`.
pub fn compute_edf(observed: &KeySet, hits: &KeySet, delta: f64, truncation: f64) -> KeyMap<f64> {
    let bound = (truncation / delta).powi(2);
    let reach = (truncation / delta).floor() as i32;
    let mut offsets = Vec::new();
    for dx in -reach..=reach {
        for dy in -reach..=reach {
            for dz in -reach..=reach {
                let n = (dx * dx + dy * dy + dz * dz) as u32;
                if n as f64 <= bound {
                    offsets.push((dx, dy, dz, n));
                }
            }
        }
    }

    let mut nearest: KeyMap<u32> = KeyMap::default();
    for hit in hits {
        for &(dx, dy, dz, n) in &offsets {
            let k = hit.offset(dx, dy, dz);
            if observed.contains(&k) {
                nearest
                    .entry(k)
                    .and_modify(|best| *best = (*best).min(n))
                    .or_insert(n);
            }
        }
    }

    observed
        .iter()
        .map(|k| {
            let d = nearest.get(k).map_or(truncation, |&n| {
                (delta * f64::from(n).sqrt()).min(truncation)
            });
            (*k, d)
        })
        .collect()
}

/// Unnormalized Gaussian `exp(−d² / 2σ²)`.
pub fn occupancy_likelihood(d: f64, sigma_o: f64) -> f64 {
    (-(d * d) / (2.0 * sigma_o * sigma_o)).exp()
}

/// Per-voxel measurement derived from one scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub edf: f64,
    pub likelihood: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ObservationSet {
    pub cells: KeyMap<Observation>,
}

impl ObservationSet {
    pub fn observe(vscan: &VoxelizedScan, config: &Config) -> Self {
        let observed = enumerate_observed(vscan, config.r_max, config.delta);
        let hits = vscan.key_set();
        let edf = compute_edf(&observed, &hits, config.delta, config.edf_truncation);
        let cells = edf
            .into_iter()
            .map(|(k, d)| {
                (
                    k,
                    Observation {
                        edf: d,
                        likelihood: occupancy_likelihood(d, config.sigma_o),
                    },
                )
            })
            .collect();
        ObservationSet { cells }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, key: &VoxelKey) -> bool {
        self.cells.contains_key(key)
    }

    pub fn get(&self, key: &VoxelKey) -> Option<&Observation> {
        self.cells.get(key)
    }
}

/// Runs the HMM filter on every voxel observed by `vscan`, then prunes the map.
pub fn integrate_scan(
    map: &mut VoxelMap,
    vscan: &VoxelizedScan,
    config: &Config,
    model: &TransitionModel,
    k: u64,
) -> ObservationSet {
    let obs = ObservationSet::observe(vscan, config);
    for (key, o) in &obs.cells {
        map.get_or_insert(*key, k)
            .update(o.likelihood, model, config.p_min, k);
    }
    map.prune(k, &vscan.sensor_origin, config.r_max, config.w_global);
    obs
}
