//! Analytic LiDAR simulator for desk-scale scenes with exact per-point labels.
//!
//! Rays are intersected in closed form with the room walls, static boxes and
//! moving spheres or boxes; no grid is involved, so generator error cannot
//! hide pipeline error.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::evaluation::{accumulate, iou, ConfusionCounts};
use crate::geometry::Pose;
use crate::io::{self, Label, LabelVector, Scan};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Sphere {
        radius: f64,
    },
    /// Axis-aligned box with the given edge lengths, centred on the object position.
    Box {
        size: Vector3<f64>,
    },
}

impl Shape {
    fn half_extent(&self) -> Vector3<f64> {
        match *self {
            Shape::Sphere { radius } => Vector3::repeat(radius),
            Shape::Box { size } => size / 2.0,
        }
    }

    fn is_degenerate(&self) -> bool {
        match *self {
            Shape::Sphere { radius } => !(radius.is_finite() && radius > 0.0),
            Shape::Box { size } => !size.iter().all(|v| v.is_finite() && *v > 0.0),
        }
    }

    /// Nearest intersection distance along the unit ray `dir` from `origin`
    /// for a shape centred at `center`, ignoring hits behind the origin.
    fn intersect(
        &self,
        center: &Vector3<f64>,
        origin: &Vector3<f64>,
        dir: &Vector3<f64>,
    ) -> Option<f64> {
        match *self {
            Shape::Sphere { radius } => ray_sphere(origin, dir, center, radius),
            Shape::Box { size } => {
                let half = size / 2.0;
                ray_box(origin, dir, &(center - half), &(center + half))
            }
        }
    }

    /// Distance from `p` to the shape surface.
    fn surface_distance(&self, center: &Vector3<f64>, p: &Vector3<f64>) -> f64 {
        match *self {
            Shape::Sphere { radius } => ((p - center).norm() - radius).abs(),
            Shape::Box { size } => {
                let half = size / 2.0;
                box_surface_distance(&(center - half), &(center + half), p)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mover {
    pub shape: Shape,
    pub start: Vector3<f64>,
    /// Meters per second.
    pub velocity: Vector3<f64>,
}

impl Mover {
    pub fn center_at(&self, t: f64) -> Vector3<f64> {
        self.start + self.velocity * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub shape: Shape,
    pub center: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorSpec {
    pub start: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// Number of vertical beams, spread evenly over `vertical_fov_deg` (inclusive).
    pub beams: u32,
    /// Number of azimuth columns, spread evenly over `horizontal_fov_deg` (end exclusive).
    pub columns: u32,
    pub vertical_fov_deg: (f64, f64),
    pub horizontal_fov_deg: (f64, f64),
}

impl SensorSpec {
    pub fn rays_per_scan(&self) -> usize {
        self.beams as usize * self.columns as usize
    }

    pub fn origin_at(&self, t: f64) -> Vector3<f64> {
        self.start + self.velocity * t
    }

    fn directions(&self) -> Vec<Vector3<f64>> {
        let (v0, v1) = self.vertical_fov_deg;
        let (h0, h1) = self.horizontal_fov_deg;
        let mut dirs = Vec::with_capacity(self.rays_per_scan());
        for b in 0..self.beams {
            let el = if self.beams == 1 {
                v0
            } else {
                v0 + (v1 - v0) * b as f64 / (self.beams - 1) as f64
            }
            .to_radians();
            for c in 0..self.columns {
                let az = (h0 + (h1 - h0) * c as f64 / self.columns as f64).to_radians();
                dirs.push(Vector3::new(
                    el.cos() * az.cos(),
                    el.cos() * az.sin(),
                    el.sin(),
                ));
            }
        }
        dirs
    }
}

/// Full description of a synthetic sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub room_min: Vector3<f64>,
    pub room_max: Vector3<f64>,
    pub obstacles: Vec<Obstacle>,
    pub movers: Vec<Mover>,
    pub sensor: SensorSpec,
    /// Scans per second.
    pub rate: f64,
    pub count: usize,
    pub seed: u64,
    /// Half-width of uniform noise added along each ray, meters.
    pub range_jitter: f64,
}

impl SceneSpec {
    pub fn time_of(&self, scan: usize) -> f64 {
        scan as f64 / self.rate
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scene(m));
        if !(self
            .room_min
            .iter()
            .zip(self.room_max.iter())
            .all(|(a, b)| a < b))
        {
            return bad("room extents must be positive along every axis".into());
        }
        if self.sensor.rays_per_scan() == 0 {
            return bad("sensor must cast at least one ray per scan".into());
        }
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return bad(format!("scan rate must be positive, got {}", self.rate));
        }
        if !(self.range_jitter.is_finite() && self.range_jitter >= 0.0) {
            return bad("range jitter must be non-negative".into());
        }
        let t_end = self.time_of(self.count.saturating_sub(1));
        let inside = |c: &Vector3<f64>, half: &Vector3<f64>| {
            (0..3).all(|a| c[a] - half[a] >= self.room_min[a] && c[a] + half[a] <= self.room_max[a])
        };
        for (i, o) in self.obstacles.iter().enumerate() {
            if o.shape.is_degenerate() {
                return bad(format!("obstacle {i} has zero or invalid size"));
            }
        }
        for (i, m) in self.movers.iter().enumerate() {
            if m.shape.is_degenerate() {
                return bad(format!("mover {i} has zero or invalid size"));
            }
            let half = m.shape.half_extent();
            // Straight-line motion in a box: both endpoints inside suffices.
            if !inside(&m.center_at(0.0), &half) || !inside(&m.center_at(t_end), &half) {
                return bad(format!("mover {i} leaves the room"));
            }
        }
        for t in [0.0, t_end] {
            if !inside(&self.sensor.origin_at(t), &Vector3::zeros()) {
                return bad("sensor leaves the room".into());
            }
        }
        Ok(())
    }

    /// Distance from `p` (map frame, time `t`) to the nearest surface of the scene.
    pub fn surface_distance(&self, p: &Vector3<f64>, t: f64) -> f64 {
        let room = box_surface_distance(&self.room_min, &self.room_max, p);
        let statics = self
            .obstacles
            .iter()
            .map(|o| o.shape.surface_distance(&o.center, p));
        let movers = self
            .movers
            .iter()
            .map(|m| m.shape.surface_distance(&m.center_at(t), p));
        statics.chain(movers).fold(room, f64::min)
    }
}

/// The fixed scene used by the end-to-end tests: a 20 × 20 × 5 m room with a
/// static pillar, a 0.5 m sphere moving at 1 m/s and a 1 × 1 × 2 m box moving
/// at 0.5 m/s, watched by a static 32 × 360 sensor at the room centre for
/// 120 scans at 10 Hz.
pub fn reference_scene() -> SceneSpec {
    SceneSpec {
        room_min: Vector3::new(-10.0, -10.0, 0.0),
        room_max: Vector3::new(10.0, 10.0, 5.0),
        obstacles: vec![Obstacle {
            shape: Shape::Box {
                size: Vector3::new(0.6, 0.6, 5.0),
            },
            center: Vector3::new(5.0, -2.0, 2.5),
        }],
        movers: vec![
            Mover {
                shape: Shape::Sphere { radius: 0.5 },
                start: Vector3::new(-6.0, 4.0, 1.5),
                velocity: Vector3::new(1.0, 0.0, 0.0),
            },
            Mover {
                shape: Shape::Box {
                    size: Vector3::new(1.0, 1.0, 2.0),
                },
                start: Vector3::new(-3.0, -5.0, 1.0),
                velocity: Vector3::new(0.5, 0.0, 0.0),
            },
        ],
        sensor: SensorSpec {
            start: Vector3::new(0.0, 0.0, 2.5),
            velocity: Vector3::zeros(),
            beams: 32,
            columns: 360,
            vertical_fov_deg: (-22.5, 22.5),
            horizontal_fov_deg: (0.0, 360.0),
        },
        rate: 10.0,
        count: 120,
        seed: 0x5EED,
        range_jitter: 0.0,
    }
}

/// The reference scene without its moving objects.
pub fn static_reference_scene() -> SceneSpec {
    SceneSpec {
        movers: Vec::new(),
        ..reference_scene()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub scans: Vec<Scan>,
    pub poses: Vec<Pose>,
    pub labels: Vec<LabelVector>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.scans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scans.is_empty()
    }

    /// Writes `scans/NNNNNN.bin`, `labels/NNNNNN.label` and `poses.txt`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        let scans = dir.join("scans");
        let labels = dir.join("labels");
        for d in [&scans, &labels] {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        for (scan, l) in self.scans.iter().zip(&self.labels) {
            let stem = format!("{:06}", scan.index);
            io::write_kitti_bin(&scans.join(format!("{stem}.bin")), &scan.points)?;
            io::write_labels(&labels.join(format!("{stem}.label")), l)?;
        }
        io::write_poses(&dir.join("poses.txt"), &self.poses)
    }
}

/// Simulates every scan of `spec`. Points are in the sensor frame; a point
/// is dynamic exactly when its ray first hits a mover.
pub fn generate(spec: &SceneSpec) -> Result<Sequence> {
    spec.validate()?;
    let dirs = spec.sensor.directions();
    let mut seq = Sequence {
        scans: Vec::with_capacity(spec.count),
        poses: Vec::with_capacity(spec.count),
        labels: Vec::with_capacity(spec.count),
    };
    for i in 0..spec.count {
        let t = spec.time_of(i);
        let origin = spec.sensor.origin_at(t);
        let centers: Vec<Vector3<f64>> = spec.movers.iter().map(|m| m.center_at(t)).collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(spec.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut points = Vec::with_capacity(dirs.len());
        let mut labels = Vec::with_capacity(dirs.len());
        for dir in &dirs {
            let Some((mut range, label)) = cast(spec, &centers, &origin, dir) else {
                continue;
            };
            if spec.range_jitter > 0.0 {
                range += rng.gen_range(-spec.range_jitter..=spec.range_jitter);
            }
            points.push(dir * range);
            labels.push(label);
        }
        seq.scans.push(Scan::new(i as u64, points));
        seq.poses.push(Pose::from_translation(origin));
        seq.labels.push(labels);
    }
    Ok(seq)
}

fn cast(
    spec: &SceneSpec,
    centers: &[Vector3<f64>],
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
) -> Option<(f64, Label)> {
    let mut best =
        ray_exit_box(origin, dir, &spec.room_min, &spec.room_max).map(|t| (t, Label::Static));
    let mut consider = |hit: Option<f64>, label: Label| {
        if let Some(t) = hit {
            if best.is_none_or(|(b, _)| t < b) {
                best = Some((t, label));
            }
        }
    };
    for o in &spec.obstacles {
        consider(o.shape.intersect(&o.center, origin, dir), Label::Static);
    }
    for (m, c) in spec.movers.iter().zip(centers) {
        consider(m.shape.intersect(c, origin, dir), Label::Dynamic);
    }
    best
}

const EPS: f64 = 1e-9;

pub fn ray_sphere(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    center: &Vector3<f64>,
    radius: f64,
) -> Option<f64> {
    let oc = origin - center;
    let b = oc.dot(dir);
    let c = oc.norm_squared() - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    [-b - sq, -b + sq].into_iter().find(|&t| t > EPS)
}

/// Entry distance of a ray into a solid box.
pub fn ray_box(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    lo: &Vector3<f64>,
    hi: &Vector3<f64>,
) -> Option<f64> {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for a in 0..3 {
        if dir[a].abs() < 1e-15 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
            continue;
        }
        let ta = (lo[a] - origin[a]) / dir[a];
        let tb = (hi[a] - origin[a]) / dir[a];
        t0 = t0.max(ta.min(tb));
        t1 = t1.min(ta.max(tb));
    }
    if t0 > t1 || t0 <= EPS {
        None
    } else {
        Some(t0)
    }
}

/// Exit distance of a ray starting inside a box.
fn ray_exit_box(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    lo: &Vector3<f64>,
    hi: &Vector3<f64>,
) -> Option<f64> {
    let mut t = f64::INFINITY;
    for a in 0..3 {
        if dir[a] > 1e-15 {
            t = t.min((hi[a] - origin[a]) / dir[a]);
        } else if dir[a] < -1e-15 {
            t = t.min((lo[a] - origin[a]) / dir[a]);
        }
    }
    (t.is_finite() && t > EPS).then_some(t)
}

fn box_surface_distance(lo: &Vector3<f64>, hi: &Vector3<f64>, p: &Vector3<f64>) -> f64 {
    let inside = (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a]);
    if inside {
        (0..3)
            .map(|a| (p[a] - lo[a]).min(hi[a] - p[a]))
            .fold(f64::INFINITY, f64::min)
    } else {
        let d = Vector3::from_fn(|a, _| (lo[a] - p[a]).max(0.0).max(p[a] - hi[a]));
        d.norm()
    }
}

/// IoU of `predictions` against the exact labels of `spec`.
pub fn oracle_iou(spec: &SceneSpec, predictions: &[LabelVector]) -> Result<f64> {
    let seq = generate(spec)?;
    if predictions.len() != seq.len() {
        return Err(Error::Evaluation(format!(
            "{} predicted scans for a {}-scan scene",
            predictions.len(),
            seq.len()
        )));
    }
    let mut total = ConfusionCounts::default();
    for ((scan, gt), pred) in seq.scans.iter().zip(&seq.labels).zip(predictions) {
        total += accumulate(gt, pred, scan, None)?;
    }
    Ok(iou(&total))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_scene() -> SceneSpec {
        SceneSpec {
            count: 10,
            sensor: SensorSpec {
                beams: 8,
                columns: 90,
                ..reference_scene().sensor
            },
            ..reference_scene()
        }
    }

    #[test]
    fn reference_scene_is_valid() {
        let s = reference_scene();
        s.validate().unwrap();
        assert_eq!(s.sensor.rays_per_scan(), 11_520);
    }

    #[test]
    fn closed_room_returns_every_ray() {
        let spec = small_scene();
        let seq = generate(&spec).unwrap();
        for scan in &seq.scans {
            assert_eq!(scan.len(), spec.sensor.rays_per_scan());
        }
    }

    #[test]
    fn no_movers_means_all_static() {
        let seq = generate(&SceneSpec {
            movers: vec![],
            ..small_scene()
        })
        .unwrap();
        assert!(seq.labels.iter().flatten().all(|l| *l == Label::Static));
    }

    #[test]
    fn points_lie_on_surfaces() {
        let spec = small_scene();
        let seq = generate(&spec).unwrap();
        for (i, (scan, pose)) in seq.scans.iter().zip(&seq.poses).enumerate() {
            let t = spec.time_of(i);
            for p in &scan.points {
                let w = pose.transform_point(p);
                assert!(spec.surface_distance(&w, t) < 1e-6, "{w:?}");
            }
        }
    }

    #[test]
    fn deterministic_with_jitter() {
        let spec = SceneSpec {
            range_jitter: 0.02,
            ..small_scene()
        };
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = SceneSpec {
            seed: 1,
            ..spec.clone()
        };
        assert_ne!(
            generate(&spec).unwrap().scans,
            generate(&other).unwrap().scans
        );
    }

    #[test]
    fn degenerate_specs_rejected() {
        let mut s = small_scene();
        s.movers[0].shape = Shape::Sphere { radius: 0.0 };
        assert!(matches!(generate(&s), Err(Error::Scene(_))));
        let mut s = small_scene();
        s.movers[1].velocity = Vector3::new(100.0, 0.0, 0.0);
        assert!(s.validate().is_err());
        let mut s = small_scene();
        s.sensor.beams = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn oracle_iou_extremes() {
        let spec = small_scene();
        let seq = generate(&spec).unwrap();
        assert_eq!(oracle_iou(&spec, &seq.labels).unwrap(), 100.0);
        let none: Vec<LabelVector> = seq
            .labels
            .iter()
            .map(|l| vec![Label::Static; l.len()])
            .collect();
        assert_eq!(oracle_iou(&spec, &none).unwrap(), 0.0);
    }

    #[test]
    fn box_intersections() {
        let lo = Vector3::new(1.0, -1.0, -1.0);
        let hi = Vector3::new(2.0, 1.0, 1.0);
        let x = Vector3::new(1.0, 0.0, 0.0);
        assert_eq!(ray_box(&Vector3::zeros(), &x, &lo, &hi), Some(1.0));
        assert_eq!(ray_box(&Vector3::zeros(), &-x, &lo, &hi), None);
        assert_eq!(ray_exit_box(&Vector3::zeros(), &x, &-hi, &hi), Some(2.0));
        assert!((box_surface_distance(&lo, &hi, &Vector3::new(1.5, 0.0, 0.0)) - 0.5).abs() < 1e-12);
        assert!((box_surface_distance(&lo, &hi, &Vector3::new(3.0, 0.0, 0.0)) - 1.0).abs() < 1e-12);
    }
}
