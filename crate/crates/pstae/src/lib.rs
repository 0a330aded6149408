//! Point-cloud video anomaly detection with a point spatio-temporal
//! autoencoder.
//!
//! The pipeline: voxel-density background subtraction isolates foreground
//! points, a frozen shallow feature extractor attaches local geometric
//! descriptors to anchor points, a point spatio-temporal autoencoder
//! reconstructs those descriptors, and the per-frame reconstruction error
//! becomes the anomaly score.

pub mod autodiff;
pub mod bgsub;
pub mod config;
pub mod formats;
pub mod net;
pub mod pipeline;
pub mod pointcloud;
pub mod scoring;
pub mod synth;
pub mod tube;

pub use autodiff::{AutodiffError, Graph, ParamSet, SgdConfig, Tensor};

// re-exported so downstream binaries share the exact RNG the library uses
pub use rand_chacha;
