//! Device-agnostic actigraphy analysis toolkit.
//!
//! The crate takes raw tri-axial wrist-accelerometer recordings through a
//! standardization pipeline (resampling, auto-calibration, bandpass filtering,
//! non-wear and sleep detection), extracts interpretable nocturnal motion
//! features per detected sleep window, and trains/evaluates a gradient-boosted
//! night-level classifier with patient-level aggregation, cross-validation
//! harnesses and stability diagnostics.
//!
//! Stages compose through plain files (ACT1 recordings, feature CSV, model
//! JSON, report JSON); see the `cli` module and the runnable examples for the
//! batch interface.

pub mod aggregate;
pub mod bouts;
pub mod cli;
pub mod config;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod model;
pub mod signal;
pub mod sleep;
pub mod stats;
pub mod synth;

pub use ingest::RawRecording;
pub use signal::UniformSignal;
