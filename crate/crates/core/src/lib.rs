//! Data-driven network simulation.
//!
//! A random-forest data-rate predictor and a one-dimensional Gaussian-process
//! model of its errors are learned from measurement traces. Combined into a
//! [`dds::DdsModel`], they replace an explicit channel simulation when
//! replaying opportunistic transmission schemes ([`cat`]) over a recorded
//! drive trace.
//!
//! Module map:
//!
//! * [`trace`]: CSV ingestion, validation and k-fold partitioning.
//! * [`forest`]: CART regression trees, random forests, MDI importance,
//!   model persistence and nested-conditional code export.
//! * [`gpr`]: the Gaussian-process error model.
//! * [`dds`]: predictor + error model + value-range shaping.
//! * [`cat`]: CAT / ML-CAT / periodic transmission replay.
//! * [`metrics`]: R², Pearson r, summaries and timing.
//! * [`config`]: flat `key = value` run configuration.
//! * [`synth`]: synthetic benchmark dataset and trace generator.

pub mod cat;
pub mod config;
pub mod dds;
pub mod error;
pub mod forest;
pub mod gpr;
pub mod metrics;
pub mod seed;
pub mod synth;
pub mod trace;

pub use error::{Error, Result};
