//! Reliability evaluation for set-prediction object detectors.
//!
//! A set-prediction detector emits a fixed number of queries per image, most
//! of which do not correspond to any object. This crate provides the pieces
//! needed to study which of those queries can be trusted:
//!
//! - [`geometry`]: normalized boxes, IoU and GIoU.
//! - [`data`]: COCO-style annotations, full-distribution prediction files,
//!   label remapping.
//! - [`matching`]: minimum-cost bipartite matching of objects to queries
//!   (the optimal positive/negative split), built on [`assignment`].
//! - [`calib`]: object-level calibration error (OCE), D-ECE, LaECE, LaECE₀.
//! - [`perf`]: 101-point AP, COCO-style AP and LRP.
//! - [`postprocess`]: thresholding, top-k and NMS with OCE-driven fitting.
//! - [`uq`]: image-level contrastive confidence.
//! - [`synth`]: seeded synthetic detection sets.
//! - [`harness`]: correlation studies, model ranking and sweeps.
//! - [`cli`]: the `detreli` command line.

pub mod assignment;
pub mod calib;
pub mod cli;
pub mod data;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod matching;
pub mod perf;
pub mod postprocess;
pub mod report;
pub mod synth;
pub mod tp;
pub mod uq;

pub use error::{Error, Result};

/// Crate version embedded in JSON outputs.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
