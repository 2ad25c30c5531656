//! Run configuration and its flat `key = value` file form.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use crate::error::{Error, Result};

/// Label emission policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Labels for scan `k` are emitted right after scan `k` is processed.
    #[default]
    Online,
    /// Labels for scan `k` are emitted once `w_local` further scans are in,
    /// and include voxels detected dynamic in that lookahead.
    Delayed,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "online" => Ok(Mode::Online),
            "delayed" => Ok(Mode::Delayed),
            other => Err(Error::Config(format!(
                "unknown mode {other:?}, expected \"online\" or \"delayed\""
            ))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Online => "online",
            Mode::Delayed => "delayed",
        })
    }
}

/// Every user-facing parameter of the segmentation pipeline.
///
/// Lengths are in meters, windows are counted in scans.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    /// Voxel edge length.
    pub delta: f64,
    /// Standard deviation of the occupancy likelihood Gaussian.
    pub sigma_o: f64,
    /// Belief a state must exceed before a voxel latches into it.
    pub p_min: f64,
    /// Edge length, in voxels, of the cubic convolution kernel. Odd.
    pub kernel_size: u32,
    /// Floor applied to the automatic threshold.
    pub otsu_min: u32,
    /// Number of scans whose state changes contribute to a score.
    pub w_local: u64,
    /// Retention of the temporal dynamic map, in scans.
    pub w_dynamic: u64,
    /// Voxels unobserved for longer than this are dropped from the map.
    pub w_global: u64,
    /// Sensor maximum range.
    pub r_max: f64,
    /// Chebyshev radius, in voxels, of the final dilation.
    pub dilation_radius: u32,
    pub mode: Mode,
    /// Diagonal of the transition matrix for the occupied and free states.
    pub self_transition: f64,
    /// Distances beyond this are reported as exactly this value.
    pub edf_truncation: f64,
    /// Points closer than this to the sensor are ignored (platform self-hits).
    pub min_range: f64,
}

pub const DEFAULT_DELTA: f64 = 0.25;

impl Default for Config {
    fn default() -> Self {
        Config::with_delta(DEFAULT_DELTA)
    }
}

impl Config {
    /// Default parameters for a given voxel size; the occupancy uncertainty
    /// tracks the voxel size.
    pub fn with_delta(delta: f64) -> Self {
        Config {
            delta,
            sigma_o: delta,
            p_min: 0.99,
            kernel_size: 5,
            otsu_min: 3,
            w_local: 3,
            w_dynamic: 100,
            w_global: 300,
            r_max: 20.0,
            dilation_radius: 1,
            mode: Mode::Online,
            self_transition: 0.99,
            edf_truncation: 3.0 * delta,
            min_range: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(name: &str, v: f64) -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "{name} must be positive and finite, got {v}"
                )))
            }
        }
        fn open_unit(name: &str, v: f64) -> Result<()> {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")))
            }
        }

        positive("delta", self.delta)?;
        positive("sigma_o", self.sigma_o)?;
        positive("r_max", self.r_max)?;
        positive("edf_truncation", self.edf_truncation)?;
        open_unit("p_min", self.p_min)?;
        open_unit("self_transition", self.self_transition)?;
        if self.kernel_size < 3 || self.kernel_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel_size must be odd and at least 3, got {}",
                self.kernel_size
            )));
        }
        if self.w_local < 1 {
            return Err(Error::Config("w_local must be at least 1".into()));
        }
        if self.w_dynamic < self.w_local {
            return Err(Error::Config(format!(
                "w_dynamic ({}) must not be smaller than w_local ({})",
                self.w_dynamic, self.w_local
            )));
        }
        if self.w_global < self.w_dynamic {
            return Err(Error::Config(format!(
                "w_global ({}) must not be smaller than w_dynamic ({})",
                self.w_global, self.w_dynamic
            )));
        }
        if self.edf_truncation < 3.0 * self.sigma_o * (1.0 - 1e-12) {
            return Err(Error::Config(format!(
                "edf_truncation ({}) must be at least 3 * sigma_o ({})",
                self.edf_truncation,
                3.0 * self.sigma_o
            )));
        }
        if !(self.min_range.is_finite() && self.min_range >= 0.0 && self.min_range < self.r_max) {
            return Err(Error::Config(format!(
                "min_range must lie in [0, r_max), got {}",
                self.min_range
            )));
        }
        Ok(())
    }

    /// Kernel half-width in voxels.
    pub fn kernel_radius(&self) -> i32 {
        (self.kernel_size as i32 - 1) / 2
    }

    /// Parses a flat `key = value` document. Missing keys take their defaults;
    /// `sigma_o` defaults to `delta` and `edf_truncation` to `3 * sigma_o`.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        let delta = raw.delta.unwrap_or(DEFAULT_DELTA);
        let mut cfg = Config::with_delta(delta);
        if let Some(v) = raw.sigma_o {
            cfg.sigma_o = v;
        }
        cfg.edf_truncation = raw.edf_truncation.unwrap_or(3.0 * cfg.sigma_o);
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = raw.$field { cfg.$field = v; })*
            };
        }
        take!(
            p_min,
            kernel_size,
            otsu_min,
            w_local,
            w_dynamic,
            w_global,
            r_max,
            dilation_radius,
            mode,
            self_transition,
            min_range
        );
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    delta: Option<f64>,
    sigma_o: Option<f64>,
    p_min: Option<f64>,
    kernel_size: Option<u32>,
    otsu_min: Option<u32>,
    w_local: Option<u64>,
    w_dynamic: Option<u64>,
    w_global: Option<u64>,
    r_max: Option<f64>,
    dilation_radius: Option<u32>,
    mode: Option<Mode>,
    self_transition: Option<f64>,
    edf_truncation: Option<f64>,
    min_range: Option<f64>,
}
