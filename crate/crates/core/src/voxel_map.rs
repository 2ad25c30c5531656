//! Sparse voxel map holding one HMM occupancy filter per voxel.

use std::io::{self, Write};

use nalgebra::Vector3;

use crate::geometry::VoxelKey;
use crate::transition::{Belief, TransitionModel, VoxelState};
use crate::KeyMap;

/// Likelihoods are pulled into this range when an exact 0 or 1 would
/// annihilate the whole predicted belief.
pub const LIKELIHOOD_CLAMP: f64 = 1e-9;

/// Direction of the most recent latched occupancy transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChangeKind {
    #[default]
    None,
    FreeToOccupied,
    OccupiedToFree,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelRecord {
    pub belief: Belief,
    pub latched: VoxelState,
    pub last_observed: u64,
    /// Scan of the most recent occupied/free transition. The first latch out
    /// of `Unobserved` is not a transition.
    pub last_change: Option<u64>,
    pub change_kind: ChangeKind,
}

impl VoxelRecord {
    pub fn new(k: u64) -> Self {
        VoxelRecord {
            belief: [1.0, 0.0, 0.0],
            latched: VoxelState::Unobserved,
            last_observed: k,
            last_change: None,
            change_kind: ChangeKind::None,
        }
    }

    /// True when the record latched an occupied/free transition in `(k - window, k]`.
    pub fn changed_within(&self, k: u64, window: u64) -> bool {
        matches!(self.last_change, Some(c) if c <= k && k - c < window)
    }

    /// One step of the HMM filter `x ← η · B · A · x` with
    /// `B = diag(0, L, 1 − L)`, followed by latching.
    pub fn update(&mut self, likelihood: f64, model: &TransitionModel, p_min: f64, k: u64) {
        let likelihood = if likelihood.is_nan() {
            0.5
        } else {
            likelihood.clamp(0.0, 1.0)
        };
        let predicted = model.predict(&self.belief);
        let mut posterior = weigh(&predicted, likelihood);
        let mut norm = posterior[1] + posterior[2];
        if !norm.is_normal() {
            let clamped = likelihood.clamp(LIKELIHOOD_CLAMP, 1.0 - LIKELIHOOD_CLAMP);
            posterior = weigh(&predicted, clamped);
            norm = posterior[1] + posterior[2];
            if !norm.is_normal() {
                // Nothing left of the prior; fall back on the measurement alone.
                posterior = [0.0, clamped, 1.0 - clamped];
                norm = 1.0;
            }
        }
        self.belief = [0.0, posterior[1] / norm, posterior[2] / norm];
        self.last_observed = k;

        let state = if self.belief[1] >= self.belief[2] {
            VoxelState::Occupied
        } else {
            VoxelState::Free
        };
        if self.belief[state.index()] > p_min && self.latched != state {
            self.change_kind = match (self.latched, state) {
                (VoxelState::Free, VoxelState::Occupied) => ChangeKind::FreeToOccupied,
                (VoxelState::Occupied, VoxelState::Free) => ChangeKind::OccupiedToFree,
                _ => self.change_kind,
            };
            if self.latched != VoxelState::Unobserved {
                self.last_change = Some(k);
            }
            self.latched = state;
        }
    }
}

fn weigh(predicted: &Belief, likelihood: f64) -> Belief {
    [
        0.0,
        likelihood * predicted[1],
        (1.0 - likelihood) * predicted[2],
    ]
}

/// Functional form of [`VoxelRecord::update`].
pub fn hmm_update(
    record: &VoxelRecord,
    likelihood: f64,
    model: &TransitionModel,
    p_min: f64,
    k: u64,
) -> VoxelRecord {
    let mut out = *record;
    out.update(likelihood, model, p_min, k);
    out
}

#[derive(Debug, Clone)]
pub struct VoxelMap {
    delta: f64,
    cells: KeyMap<VoxelRecord>,
}

impl VoxelMap {
    pub fn new(delta: f64) -> Self {
        VoxelMap {
            delta,
            cells: KeyMap::default(),
        }
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, key: &VoxelKey) -> Option<&VoxelRecord> {
        self.cells.get(key)
    }

    pub fn contains(&self, key: &VoxelKey) -> bool {
        self.cells.contains_key(key)
    }

    /// Returns the record for `key`, creating an unobserved one at scan `k`.
    pub fn get_or_insert(&mut self, key: VoxelKey, k: u64) -> &mut VoxelRecord {
        self.cells.entry(key).or_insert_with(|| VoxelRecord::new(k))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VoxelKey, &VoxelRecord)> {
        self.cells.iter()
    }

    /// Keys whose latched state changed within the last `window` scans.
    pub fn recent_changes(&self, k: u64, window: u64) -> impl Iterator<Item = VoxelKey> + '_ {
        self.cells
            .iter()
            .filter(move |(_, r)| r.changed_within(k, window))
            .map(|(key, _)| *key)
    }

    /// Drops voxels not observed within `w_global` scans of `current` and
    /// voxels whose centre is farther than `r_max` from the sensor.
    pub fn prune(&mut self, current: u64, sensor_origin: &Vector3<f64>, r_max: f64, w_global: u64) {
        let oldest = current.saturating_sub(w_global);
        let delta = self.delta;
        let r2 = r_max * r_max;
        self.cells.retain(|key, rec| {
            rec.last_observed >= oldest && (key.center(delta) - sensor_origin).norm_squared() <= r2
        });
    }

    /// Debug dump, one voxel per line sorted by key:
    /// `ix iy iz p_unobs p_occ p_free latched last_observed`.
    pub fn write_snapshot(&self, mut w: impl Write) -> io::Result<()> {
        let mut keys: Vec<&VoxelKey> = self.cells.keys().collect();
        keys.sort();
        for key in keys {
            let r = &self.cells[key];
            writeln!(
                w,
                "{} {} {} {} {} {} {} {}",
                key.x,
                key.y,
                key.z,
                r.belief[0],
                r.belief[1],
                r.belief[2],
                r.latched.as_str(),
                r.last_observed
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model() -> TransitionModel {
        TransitionModel::new(0.99).unwrap()
    }

    fn with_belief(belief: Belief, latched: VoxelState) -> VoxelRecord {
        VoxelRecord {
            belief,
            latched,
            ..VoxelRecord::new(0)
        }
    }

    #[test]
    fn certain_hit_from_initial_state() {
        for s in [0.5, 0.9, 0.99] {
            let m = TransitionModel::new(s).unwrap();
            let r = hmm_update(&VoxelRecord::new(0), 1.0, &m, 0.99, 1);
            assert_eq!(r.belief, [0.0, 1.0, 0.0]);
            assert_eq!(r.latched, VoxelState::Occupied);
            assert_eq!(r.last_change, None);
            assert_eq!(r.last_observed, 1);
        }
    }

    #[test]
    fn half_likelihood_from_occupied() {
        let r = hmm_update(
            &with_belief([0.0, 1.0, 0.0], VoxelState::Occupied),
            0.5,
            &model(),
            0.99,
            4,
        );
        assert!((r.belief[1] - 0.99).abs() < 1e-15);
        assert!((r.belief[2] - 0.01).abs() < 1e-15);
        assert_eq!(r.latched, VoxelState::Occupied);
    }

    #[test]
    fn degenerate_normalizer_is_clamped() {
        let m = model();
        // A record emptied by underflow has no prior mass left to normalize.
        let r = hmm_update(
            &with_belief([0.0, 0.0, 0.0], VoxelState::Free),
            1.0,
            &m,
            0.99,
            1,
        );
        assert!((r.belief.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(r.belief.iter().all(|v| v.is_finite()));
        let r = hmm_update(
            &with_belief([0.0, 5e-324, 0.0], VoxelState::Occupied),
            0.0,
            &m,
            0.99,
            1,
        );
        assert!((r.belief.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn transitions_record_direction_and_scan() {
        let m = model();
        let mut r = VoxelRecord::new(0);
        r.update(0.0, &m, 0.99, 0);
        assert_eq!((r.latched, r.last_change), (VoxelState::Free, None));
        r.update(1.0, &m, 0.99, 5);
        assert_eq!(r.latched, VoxelState::Occupied);
        assert_eq!(r.change_kind, ChangeKind::FreeToOccupied);
        assert_eq!(r.last_change, Some(5));
        r.update(0.0, &m, 0.99, 9);
        assert_eq!(r.change_kind, ChangeKind::OccupiedToFree);
        assert_eq!(r.last_change, Some(9));
        assert!(r.changed_within(11, 3));
        assert!(!r.changed_within(12, 3));
    }

    #[test]
    fn moderate_contradiction_does_not_flip() {
        let m = model();
        let r = hmm_update(
            &with_belief([0.0, 0.0, 1.0], VoxelState::Free),
            0.9,
            &m,
            0.99,
            1,
        );
        assert_eq!(r.latched, VoxelState::Free);
        let r = hmm_update(
            &with_belief([0.0, 1.0, 0.0], VoxelState::Occupied),
            0.0111,
            &m,
            0.99,
            1,
        );
        assert_eq!(r.latched, VoxelState::Occupied);
    }

    #[test]
    fn get_or_insert_and_prune() {
        let mut map = VoxelMap::new(0.25);
        let key = VoxelKey::new(1, 2, 3);
        assert_eq!(map.get_or_insert(key, 0).belief, [1.0, 0.0, 0.0]);
        map.get_or_insert(key, 0).update(1.0, &model(), 0.99, 0);
        let stored = *map.get(&key).unwrap();
        assert_eq!(*map.get_or_insert(key, 7), stored);
        assert_eq!(map.len(), 1);

        map.prune(1, &Vector3::zeros(), 100.0, 0);
        assert!(map.is_empty());
        map.prune(1, &Vector3::zeros(), 100.0, 0);
        assert!(map.is_empty());
    }

    #[test]
    fn prune_global_window() {
        let mut map = VoxelMap::new(0.25);
        map.get_or_insert(VoxelKey::new(0, 0, 0), 0);
        map.get_or_insert(VoxelKey::new(1, 0, 0), 1);
        map.prune(300, &Vector3::zeros(), 100.0, 300);
        assert_eq!(map.len(), 2);
        map.prune(301, &Vector3::zeros(), 100.0, 300);
        assert_eq!(map.len(), 1);
        assert!(map.contains(&VoxelKey::new(1, 0, 0)));
    }

    #[test]
    fn prune_range() {
        let delta = 0.25;
        let r_max = 10.0;
        let mut map = VoxelMap::new(delta);
        // Centre at (r_max - delta) along x.
        let inside = VoxelKey::new(((r_max - delta) / delta) as i32, 0, 0).offset(0, 0, 0);
        let origin = Vector3::new(
            inside.center(delta).x - (r_max - delta),
            inside.center(delta).y,
            inside.center(delta).z,
        );
        map.get_or_insert(inside, 0);
        let outside = inside.offset(2, 0, 0);
        map.get_or_insert(outside, 0);
        map.prune(0, &origin, r_max, 300);
        assert!(map.contains(&inside));
        assert!(!map.contains(&outside));
    }

    #[test]
    fn snapshot_is_sorted() {
        let mut map = VoxelMap::new(1.0);
        map.get_or_insert(VoxelKey::new(2, 0, 0), 3);
        map.get_or_insert(VoxelKey::new(-1, 0, 0), 3);
        let mut out = Vec::new();
        map.write_snapshot(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text,
            "-1 0 0 1 0 0 unobserved 3\n2 0 0 1 0 0 unobserved 3\n"
        );
    }

    fn simplex() -> impl Strategy<Value = Belief> {
        (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0).prop_map(|(a, b, c)| {
            let s = a + b + c + 1e-9;
            [a / s, b / s, c / s]
        })
    }

    proptest! {
        #[test]
        fn stays_normalized_and_absorbs_unobserved(
            start in simplex(),
            ls in prop::collection::vec(0.0f64..=1.0, 1..200),
        ) {
            let m = model();
            let mut r = with_belief(start, VoxelState::Unobserved);
            for (k, l) in ls.iter().enumerate() {
                r.update(*l, &m, 0.99, k as u64);
                prop_assert!((r.belief.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert_eq!(r.belief[0], 0.0);
                prop_assert!(r.belief.iter().all(|&v| v >= 0.0));
                if let Some(c) = r.last_change {
                    prop_assert!(c <= r.last_observed);
                }
            }
        }

        #[test]
        fn constant_hits_never_lower_occupancy(start in simplex(), steps in 1usize..50) {
            prop_assume!(start[1] > 0.0);
            let m = model();
            let mut r = with_belief(start, VoxelState::Unobserved);
            let mut prev = r.belief[1];
            for k in 0..steps {
                r.update(1.0, &m, 0.99, k as u64);
                prop_assert!(r.belief[1] >= prev);
                prev = r.belief[1];
            }
        }
    }
}
