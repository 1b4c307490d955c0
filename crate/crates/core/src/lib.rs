//! Layer-aligned augmentation for semi-supervised volumetric segmentation.
//!
//! The crate provides slice-block shuffling across a batch ([`shuffle`]),
//! confidence-guided patch displacement between weak and strong views
//! ([`displace`]), the losses and schedules that train on them, a small
//! teacher-student harness with a per-voxel linear segmentor, synthetic
//! layered phantoms with Dice/ASD metrics, and a binary volume format.

pub mod config;
pub mod displace;
pub mod error;
pub mod grid;
pub mod io;
pub mod losses;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod phantom;
pub mod schedule;
pub mod shuffle;
pub mod trainer;

pub use error::{Error, Result};
pub use grid::{Axis, Batch, ConfidenceGrid, Dims, LabelGrid, Lattice, ProbGrid, SupervisionGrid, VolumeGrid};
