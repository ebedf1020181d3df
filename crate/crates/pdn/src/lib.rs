//! Pathfinder discovery networks: a self-contained toolkit for jointly
//! learning a message-passing graph from a multiplex graph together with a
//! downstream node classifier.
//!
//! The crate is organized bottom-up:
//!
//! - [`sparse`]: COO/CSR/dense matrix types and the pure kernels everything
//!   is built on.
//! - [`autodiff`]: a reverse-mode tape over dense matrices and per-edge
//!   value vectors.
//! - [`gradcheck`]: finite-difference validation of the tape.
//! - [`model`]: pathfinder neurons and layers, the per-edge MLP, the
//!   spectral GCN head, and the edge-convolution / multi-scale / linear
//!   attention variants.
//! - [`edge_features`]: neighborhood-similarity edge features.
//! - [`synth`]: synthetic multiplex benchmark generator and the
//!   Watts-Strogatz generator for runtime studies.
//! - [`dataset`]: dataset container plus its text file format.
//! - [`train`]: Adam, splits, the training loop, and history export.
//! - [`checkpoint`]: versioned model checkpoint files.
//! - [`experiments`]: scenario sweeps, the XOR demonstration, runtime
//!   benchmarks, and attention traces behind the CLI.

pub mod autodiff;
pub mod checkpoint;
pub mod dataset;
pub mod edge_features;
pub mod error;
pub mod experiments;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod rng;
pub mod sparse;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
