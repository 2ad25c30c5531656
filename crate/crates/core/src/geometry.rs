//! Grid indices, point quantization and rigid sensor poses.

use std::fmt;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Integer index of a voxel. The grid is anchored at the map-frame origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct VoxelKey {
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

impl VoxelKey {
    pub const fn new(x: i32, y: i32, z: i32) -> Self {
        VoxelKey { x, y, z }
    }

    /// Center of the voxel in map coordinates.
    pub fn center(self, delta: f64) -> Vector3<f64> {
        Vector3::new(
            (self.x as f64 + 0.5) * delta,
            (self.y as f64 + 0.5) * delta,
            (self.z as f64 + 0.5) * delta,
        )
    }

    pub fn offset(self, dx: i32, dy: i32, dz: i32) -> Self {
        VoxelKey::new(self.x + dx, self.y + dy, self.z + dz)
    }

    /// Largest per-axis index difference.
    pub fn chebyshev(self, other: VoxelKey) -> u32 {
        let d = self.abs_diff(other);
        d[0].max(d[1]).max(d[2])
    }

    /// Squared Euclidean distance in index units.
    pub fn distance_squared(self, other: VoxelKey) -> u64 {
        self.abs_diff(other)
            .iter()
            .map(|&d| u64::from(d) * u64::from(d))
            .sum()
    }

    fn abs_diff(self, other: VoxelKey) -> [u32; 3] {
        [
            self.x.abs_diff(other.x),
            self.y.abs_diff(other.y),
            self.z.abs_diff(other.z),
        ]
    }

    /// Every key within Chebyshev distance `radius` of `self`, including itself.
    pub fn cube(self, radius: i32) -> impl Iterator<Item = VoxelKey> {
        let r = radius.max(0);
        (-r..=r).flat_map(move |dx| {
            (-r..=r).flat_map(move |dy| (-r..=r).map(move |dz| self.offset(dx, dy, dz)))
        })
    }
}

impl fmt::Display for VoxelKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

impl From<(i32, i32, i32)> for VoxelKey {
    fn from((x, y, z): (i32, i32, i32)) -> Self {
        VoxelKey::new(x, y, z)
    }
}

/// Quantizes a point onto the grid: `floor(p / delta)` per axis.
pub fn voxelize_point(p: &Vector3<f64>, delta: f64) -> Result<VoxelKey> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::InvalidInput(format!(
            "voxel size must be positive, got {delta}"
        )));
    }
    let mut idx = [0i32; 3];
    for (axis, slot) in idx.iter_mut().enumerate() {
        let v = p[axis];
        if !v.is_finite() {
            return Err(Error::InvalidInput(format!(
                "non-finite coordinate in point {p:?}"
            )));
        }
        let q = (v / delta).floor();
        if q < i32::MIN as f64 || q > i32::MAX as f64 {
            return Err(Error::InvalidInput(format!(
                "point {p:?} lies outside the addressable grid at voxel size {delta}"
            )));
        }
        *slot = q as i32;
    }
    Ok(VoxelKey::new(idx[0], idx[1], idx[2]))
}

/// Tolerance used when checking that a rotation is orthonormal.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// Rigid transform taking sensor-frame points into the map frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, rejecting rotations that are not proper and orthonormal
    /// within [`ROTATION_TOLERANCE`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite translation".into()));
        }
        let err = rotation_error(&rotation);
        if err.is_nan() || err > ROTATION_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "rotation is not orthonormal with det +1 (error {err:.3e})"
            )));
        }
        Ok(Pose {
            rotation,
            translation,
        })
    }

    /// Builds a pose from an arbitrary 3x3 matrix by projecting it onto the
    /// nearest rotation in the Frobenius sense.
    pub fn from_nearest_rotation(matrix: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        Pose::new(nearest_rotation(&matrix)?, translation)
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation about +z by `yaw` radians followed by a translation.
    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        let (s, c) = yaw.sin_cos();
        Pose {
            rotation: Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Row-major 3x4 `[R | t]`, as stored in pose files.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t[0],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t[1],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t[2],
        ]
    }

    /// Max of `|RᵀR − I|` entries and `|det R − 1|`.
    pub fn orthonormality_error(&self) -> f64 {
        rotation_error(&self.rotation)
    }
}

fn rotation_error(r: &Matrix3<f64>) -> f64 {
    let gram = r.transpose() * r - Matrix3::identity();
    let off = gram.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    off.max((r.determinant() - 1.0).abs())
}

/// Closest proper rotation to `m` (polar decomposition through the SVD).
pub fn nearest_rotation(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("non-finite rotation entry".into()));
    }
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::InvalidInput("rotation SVD failed".into())),
    };
    let mut fix = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    Ok(u * fix * v_t)
}
