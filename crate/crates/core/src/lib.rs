//! Clustering and day-ahead forecasting for half-hourly electricity load
//! curves, built on finite mixtures of sparse Gaussian regressions.
//!
//! The pipeline: meter readings are parsed into day curves ([`ingest`]),
//! compressed by an orthonormal Haar transform ([`wavelet`]), fitted over a
//! grid of cluster counts and sparsity levels ([`em`], [`collection`]),
//! selected by a dimension-jump penalty calibration ([`slope`]), and turned
//! into cluster reports and forecast comparisons ([`analysis`]). Ground-truth
//! generators for benchmarking live in [`synth`].

pub mod analysis;
pub mod collection;
pub mod em;
pub mod error;
pub mod ingest;
pub mod io;
pub mod mixture;
pub mod slope;
pub mod synth;
pub mod wavelet;

pub use error::{Error, Result};
