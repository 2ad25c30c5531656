//! Three-state voxel occupancy model and its transition matrix.

use crate::error::{Error, Result};

/// Discrete occupancy state. The discriminant is the index into belief vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum VoxelState {
    #[default]
    Unobserved = 0,
    Occupied = 1,
    Free = 2,
}

impl VoxelState {
    pub const ALL: [VoxelState; 3] = [
        VoxelState::Unobserved,
        VoxelState::Occupied,
        VoxelState::Free,
    ];

    pub const fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VoxelState::Unobserved => "unobserved",
            VoxelState::Occupied => "occupied",
            VoxelState::Free => "free",
        }
    }
}

/// Probability vector over `(unobserved, occupied, free)`.
pub type Belief = [f64; 3];

/// Column-stochastic transition matrix: `a[to][from]`.
///
/// Nothing transitions back into `unobserved`; that state only exists before a
/// voxel's first observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionModel {
    a: [[f64; 3]; 3],
}

impl TransitionModel {
    pub fn new(self_transition: f64) -> Result<Self> {
        if !(self_transition > 0.0 && self_transition < 1.0) {
            return Err(Error::Config(format!(
                "self_transition must lie in (0, 1), got {self_transition}"
            )));
        }
        let s = self_transition;
        let leave = 1.0 - s;
        Ok(TransitionModel {
            a: [
                [s, 0.0, 0.0],
                [leave / 2.0, s, leave],
                [leave / 2.0, leave, s],
            ],
        })
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.a
    }

    /// Column of probabilities for leaving `from`.
    pub fn column(&self, from: VoxelState) -> Belief {
        let j = from.index();
        [self.a[0][j], self.a[1][j], self.a[2][j]]
    }

    /// Prediction step `A · x`.
    pub fn predict(&self, x: &Belief) -> Belief {
        let mut out = [0.0; 3];
        for (i, row) in self.a.iter().enumerate() {
            out[i] = row[0] * x[0] + row[1] * x[1] + row[2] * x[2];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn columns_for_099() {
        let t = TransitionModel::new(0.99).unwrap();
        let occ = t.column(VoxelState::Occupied);
        assert_eq!(occ[0], 0.0);
        assert_eq!(occ[1], 0.99);
        assert!((occ[2] - 0.01).abs() < 1e-15);
        let free = t.column(VoxelState::Free);
        assert_eq!(free[2], 0.99);
        let un = t.column(VoxelState::Unobserved);
        assert_eq!(un[0], 0.99);
        assert!((un[1] - 0.005).abs() < 1e-15 && (un[2] - 0.005).abs() < 1e-15);
    }

    #[test]
    fn columns_for_half() {
        let t = TransitionModel::new(0.5).unwrap();
        assert_eq!(t.column(VoxelState::Occupied), [0.0, 0.5, 0.5]);
    }

    #[test]
    fn near_one_approaches_identity() {
        let t = TransitionModel::new(1.0 - 1e-12).unwrap();
        for (i, row) in t.matrix().iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn columns_sum_to_one_and_never_reenter_unobserved() {
        for s in [0.01, 0.3, 0.5, 0.9, 0.99, 0.999_999] {
            let t = TransitionModel::new(s).unwrap();
            for from in VoxelState::ALL {
                let c = t.column(from);
                assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(c.iter().all(|&v| v >= 0.0));
            }
            assert_eq!(t.matrix()[0][1], 0.0);
            assert_eq!(t.matrix()[0][2], 0.0);
            assert_eq!(t.matrix()[1][1], s);
            assert_eq!(t.matrix()[2][2], s);
        }
    }

    #[test]
    fn rejects_out_of_range() {
        for s in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(TransitionModel::new(s).is_err());
        }
    }
}
