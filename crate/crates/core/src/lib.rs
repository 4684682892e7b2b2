//! Benchmark toolkit for camera illuminant estimation on ColorChecker scenes.
//!
//! The crate is organised around the benchmark workflow:
//!
//! - [`image`]: linear images, camera profiles, 16-bit PPM and sidecar IO, black level.
//! - [`geometry`]: chart corners, 4-point homographies, rectification and patch sampling.
//! - [`groundtruth`]: per-patch statistics and brightest non-saturated achromatic patch selection.
//! - [`estimators`]: the (n, p, sigma) family of statistical estimators and a registry.
//! - [`metrics`]: recovery/reproduction angular errors, summaries and rankings.
//! - [`audit`]: comparison of divergent ground-truth sets.
//! - [`synth`]: synthetic chart scenes with a known illuminant, used as a test oracle.
//! - [`cli`]: the `chromabench` command-line front end.

// negated comparisons reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod geometry;
pub mod groundtruth;
pub mod image;
pub mod metrics;
pub mod synth;
mod util;

pub use error::{Error, Result};
pub use image::{CameraProfile, LinearImage, PixelRgb};
