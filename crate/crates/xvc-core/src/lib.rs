//! Differentiable cross-view consistency losses with exact synthetic oracles.
//!
//! The crate provides, over a small reverse-mode tape ([`tensor`]):
//!
//! - pinhole camera geometry and differentiable inverse warping ([`camera`]),
//! - photometric (L1 + SSIM) and edge-aware smoothness losses ([`photometric`]),
//! - deformable feature alignment and its reconstruction/depth-feature
//!   losses ([`deformable`]),
//! - voxel-density point-cloud alignment with straight-through gradients,
//!   plus the rigid point-cloud baseline it is compared against ([`voxel`]),
//! - a deterministic analytic ray-cast renderer producing exact image/depth
//!   ground truth for experiments ([`scene`]),
//! - the standard depth-evaluation metric suite ([`metrics`]).
//!
//! Everything runs in double precision and is deterministic: the same inputs
//! produce bit-identical values and gradients on every run.

pub mod camera;
pub mod config;
pub mod deformable;
pub mod error;
pub mod io;
pub mod metrics;
pub mod photometric;
pub mod rng;
pub mod scene;
pub mod tensor;
pub mod voxel;

pub use error::{Error, Result};
pub use tensor::{Graph, Tensor};
