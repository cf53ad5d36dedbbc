//! Toolkit for heatmap-based anatomical landmark localization.
//!
//! The crate covers the full non-neural core of a landmark localization
//! pipeline in 2-D and 3-D:
//!
//! - [`geometry`] — landmark containers, affine transforms, patch/ROI
//!   coordinate remapping.
//! - [`encode`] — target heatmap generation (anisotropic Gaussian, Laplace,
//!   one-hot masks) with analytic parameter gradients.
//! - [`decode`] — argmax, weighted spatial mean and local windowed weighted
//!   mean decoders with pluggable activations, plus multi-instance peak
//!   extraction.
//! - [`adaptive`] — the Gaussian-heatmap L2 loss with sigma regularization,
//!   Nesterov-momentum updates of the covariance parameters, and a
//!   variance-ratio scheduler that shrinks sigmas on loss plateaus.
//! - [`metrics`] — point error, success detection rate and detection
//!   reports.
//! - [`data_io`] — NPY/NPZ tensors, grayscale PNG, landmark CSV tables and
//!   dataset manifests.
//! - [`synth`] — deterministic synthetic datasets with known ground truth.
//! - [`gradcheck`] — finite-difference verification suites for every
//!   analytic derivative in the crate.
//!
//! Coordinates are continuous, in array index order (`dim0` = row, `dim1` =
//! column, optional `dim2` = depth), and integer value `k` denotes the
//! center of pixel `k`. A non-finite coordinate marks a missing landmark;
//! all operations skip, and never propagate, missing entries.

pub mod adaptive;
pub mod data_io;
pub mod decode;
pub mod encode;
mod error;
pub mod geometry;
pub mod gradcheck;
pub mod metrics;
pub mod rng;
pub mod synth;

pub use decode::{Activation, DecodeConfig, DecodeMethod, OutputUnits};
pub use encode::{CovarianceSpec, EncodeOptions, EncodingKind, Heatmap};
pub use error::{Error, Result};
pub use geometry::{AffineTransform, LandmarkSet, PatchSpec, Spacing};
