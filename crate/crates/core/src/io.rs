//! Scan, pose and label file formats.
//!
//! * kitti-bin scans: consecutive little-endian `f32` quadruples `(x, y, z, intensity)`.
//! * pose files: one row-major 3x4 `[R | t]` per line, 12 whitespace-separated reals.
//! * label files: one little-endian `u32` per point, lower 16 bits `9` (static) or
//!   `251` (dynamic).
//! * ply-ascii: read for scans, written for labelled debug clouds.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{Pose, ROTATION_TOLERANCE};

/// Point cloud in the sensor frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scan {
    pub points: Vec<Vector3<f64>>,
    pub index: u64,
}

impl Scan {
    pub fn new(index: u64, points: Vec<Vector3<f64>>) -> Self {
        Scan { points, index }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Label {
    #[default]
    Static,
    Dynamic,
}

impl Label {
    pub fn is_dynamic(self) -> bool {
        self == Label::Dynamic
    }
}

/// One label per scan point, in point order.
pub type LabelVector = Vec<Label>;

pub const STATIC_LABEL: u32 = 9;
pub const DYNAMIC_LABEL: u32 = 251;

pub fn encode_label(label: Label) -> u32 {
    match label {
        Label::Static => STATIC_LABEL,
        Label::Dynamic => DYNAMIC_LABEL,
    }
}

/// Moving classes occupy 251..=259 in the semantic label space; everything
/// else, including unlabeled `0`, is static.
pub fn decode_label(raw: u32) -> Label {
    match raw & 0xFFFF {
        251..=259 => Label::Dynamic,
        _ => Label::Static,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanFormat {
    KittiBin,
    PlyAscii,
}

impl ScanFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "bin" => Some(ScanFormat::KittiBin),
            "ply" => Some(ScanFormat::PlyAscii),
            _ => None,
        }
    }
}

const KITTI_RECORD: usize = 16;

pub fn read_scan(path: &Path, format: ScanFormat, index: u64) -> Result<Scan> {
    let points = match format {
        ScanFormat::KittiBin => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            decode_kitti_bin(&bytes).map_err(|m| Error::format(path, m))?
        }
        ScanFormat::PlyAscii => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_ply_ascii(&text).map_err(|m| Error::format(path, m))?
        }
    };
    Ok(Scan::new(index, points))
}

pub fn decode_kitti_bin(bytes: &[u8]) -> Result<Vec<Vector3<f64>>, String> {
    if !bytes.len().is_multiple_of(KITTI_RECORD) {
        return Err(format!(
            "{} bytes is not a whole number of {KITTI_RECORD}-byte point records",
            bytes.len()
        ));
    }
    let mut points = Vec::with_capacity(bytes.len() / KITTI_RECORD);
    for (i, rec) in bytes.chunks_exact(KITTI_RECORD).enumerate() {
        let f = |o: usize| f32::from_le_bytes([rec[o], rec[o + 1], rec[o + 2], rec[o + 3]]);
        let p = Vector3::new(f(0) as f64, f(4) as f64, f(8) as f64);
        if !p.iter().all(|v| v.is_finite()) {
            return Err(format!("point {i} has a non-finite coordinate"));
        }
        points.push(p);
    }
    Ok(points)
}

pub fn encode_kitti_bin(points: &[Vector3<f64>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(points.len() * KITTI_RECORD);
    for p in points {
        for v in [p.x as f32, p.y as f32, p.z as f32, 0.0f32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_kitti_bin(path: &Path, points: &[Vector3<f64>]) -> Result<()> {
    fs::write(path, encode_kitti_bin(points)).map_err(|e| Error::io(path, e))
}

/// Reads the vertex positions of an ascii PLY file. Elements declared before
/// `vertex` are skipped.
pub fn parse_ply_ascii(text: &str) -> Result<Vec<Vector3<f64>>, String> {
    struct Element {
        name: String,
        count: usize,
        props: Vec<String>,
    }

    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err("missing 'ply' magic".into());
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut ascii = false;
    loop {
        let line = lines
            .next()
            .ok_or("header ended without end_header")?
            .trim();
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["end_header"] => break,
            ["format", fmt, ..] => {
                if *fmt != "ascii" {
                    return Err(format!("unsupported PLY format {fmt:?}"));
                }
                ascii = true;
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| format!("bad element count {count:?}"))?,
                props: Vec::new(),
            }),
            ["property", "list", .., name] | ["property", _, name] => elements
                .last_mut()
                .ok_or("property before any element")?
                .props
                .push(name.to_string()),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            _ => return Err(format!("unrecognised header line {line:?}")),
        }
    }
    if !ascii {
        return Err("missing format line".into());
    }

    let mut points = Vec::new();
    for el in &elements {
        if el.name != "vertex" {
            for _ in 0..el.count {
                lines
                    .next()
                    .ok_or_else(|| format!("truncated {} element", el.name))?;
            }
            continue;
        }
        let col = |name: &str| {
            el.props
                .iter()
                .position(|p| p == name)
                .ok_or_else(|| format!("vertex element lacks property {name}"))
        };
        let (ix, iy, iz) = (col("x")?, col("y")?, col("z")?);
        points.reserve(el.count);
        for i in 0..el.count {
            let line = lines
                .next()
                .ok_or_else(|| format!("truncated vertex list at {i}"))?;
            let vals: Vec<&str> = line.split_whitespace().collect();
            let get = |c: usize| -> Result<f64, String> {
                let v: f64 = vals
                    .get(c)
                    .ok_or_else(|| format!("vertex {i} has too few values"))?
                    .parse()
                    .map_err(|_| format!("vertex {i} has a non-numeric value"))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(format!("vertex {i} has a non-finite coordinate"))
                }
            };
            points.push(Vector3::new(get(ix)?, get(iy)?, get(iz)?));
        }
        return Ok(points);
    }
    Err("no vertex element".into())
}

/// Writes points as an ascii PLY coloured red for dynamic and green for static.
pub fn write_debug_ply(path: &Path, points: &[Vector3<f64>], labels: &[Label]) -> Result<()> {
    if points.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} points but {} labels",
            points.len(),
            labels.len()
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(w, "ply")?;
        writeln!(w, "format ascii 1.0")?;
        writeln!(w, "element vertex {}", points.len())?;
        for axis in ["x", "y", "z"] {
            writeln!(w, "property float {axis}")?;
        }
        for channel in ["red", "green", "blue"] {
            writeln!(w, "property uchar {channel}")?;
        }
        writeln!(w, "end_header")?;
        for (p, l) in points.iter().zip(labels) {
            let (r, g) = if l.is_dynamic() { (255, 0) } else { (0, 255) };
            writeln!(w, "{} {} {} {r} {g} 0", p.x as f32, p.y as f32, p.z as f32)?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))
}

pub fn read_poses(path: &Path) -> Result<Vec<Pose>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_poses(&text).map_err(|m| Error::format(path, m))
}

/// Parses pose lines. Blank lines are ignored. Rotations off by more than
/// 1e-3 are reported and projected back onto the nearest rotation; smaller
/// numerical noise is projected silently.
pub fn parse_poses(text: &str) -> Result<Vec<Pose>, String> {
    let mut poses = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| format!("line {}: non-numeric token", lineno + 1))?;
        if vals.len() != 12 {
            return Err(format!(
                "line {}: expected 12 values, found {}",
                lineno + 1,
                vals.len()
            ));
        }
        if !vals.iter().all(|v| v.is_finite()) {
            return Err(format!("line {}: non-finite value", lineno + 1));
        }
        let r = Matrix3::new(
            vals[0], vals[1], vals[2], vals[4], vals[5], vals[6], vals[8], vals[9], vals[10],
        );
        let t = Vector3::new(vals[3], vals[7], vals[11]);
        let pose = match Pose::new(r, t) {
            Ok(p) => p,
            Err(_) => {
                let p = Pose::from_nearest_rotation(r, t)
                    .map_err(|e| format!("line {}: {e}", lineno + 1))?;
                let err = (r - p.rotation()).abs().max();
                if err > 1e-3 {
                    log::warn!(
                        "pose line {}: rotation off by {err:.3e}, re-orthonormalized",
                        lineno + 1
                    );
                }
                p
            }
        };
        debug_assert!(pose.orthonormality_error() <= ROTATION_TOLERANCE);
        poses.push(pose);
    }
    Ok(poses)
}

pub fn write_poses(path: &Path, poses: &[Pose]) -> Result<()> {
    let mut text = String::new();
    for p in poses {
        let row: Vec<String> = p.to_row_major().iter().map(|v| format!("{v:e}")).collect();
        text.push_str(&row.join(" "));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn encode_labels(labels: &[Label]) -> Vec<u8> {
    labels
        .iter()
        .flat_map(|&l| encode_label(l).to_le_bytes())
        .collect()
}

pub fn write_labels(path: &Path, labels: &[Label]) -> Result<()> {
    fs::write(path, encode_labels(labels)).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<LabelVector> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::format(
            path,
            format!(
                "{} bytes is not a whole number of 4-byte labels",
                bytes.len()
            ),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| decode_label(u32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect())
}
