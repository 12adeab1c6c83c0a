//! Trip chain prediction for individual transit riders.
//!
//! Days of a rider's history become nodes of a weighted graph; each
//! distinct trip is a binary label propagated (or learned) over that graph,
//! and a pairwise co-occurrence score assembles the per-trip probabilities
//! into one chain per future day.

pub mod analysis;
pub mod archive;
pub mod calibration;
pub mod classifiers;
pub mod cli;
pub mod config;
pub mod correlation;
pub mod error;
pub mod evaluation;
pub mod ingest;
pub mod model;
pub mod patterns;
pub mod pipeline;
pub mod similarity;
pub mod stats;
pub mod synthetic;

pub use error::{Error, Result};
