//! Learning-free moving object segmentation for LiDAR scan sequences.
//!
//! Every voxel of a sparse map carries a three-state hidden Markov model
//! (unobserved, occupied, free). Each scan is raycast into the map, a truncated
//! Euclidean distance field turns the scan into per-voxel occupancy likelihoods,
//! and the HMM filter updates the touched voxels. Latched occupancy transitions
//! are then convolved over a short spatiotemporal window, thresholded with
//! Otsu's method and dilated to produce per-point static/dynamic labels.
//!
//! The [`pipeline::Pipeline`] type strings the stages together; the individual
//! stages live in their own modules and can be driven separately.

pub mod config;
pub mod detection;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod integration;
pub mod io;
pub mod pipeline;
pub mod synthetic;
pub mod transition;
pub mod voxel_map;

pub use config::{Config, Mode};
pub use error::{Error, Result};
pub use geometry::{voxelize_point, Pose, VoxelKey};
pub use io::{Label, LabelVector, Scan};
pub use pipeline::{Pipeline, ScanOutput};
pub use transition::{TransitionModel, VoxelState};
pub use voxel_map::{VoxelMap, VoxelRecord};

/// Hash map keyed by voxel indices.
pub type KeyMap<V> = rustc_hash::FxHashMap<VoxelKey, V>;
/// Hash set of voxel indices.
pub type KeySet = rustc_hash::FxHashSet<VoxelKey>;
