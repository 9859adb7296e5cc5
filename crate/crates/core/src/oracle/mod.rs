//! Slow reference implementations for tests: grid densities, the
//! set-integral prediction and update by brute force, a weight pipeline
//! that mirrors the hypothesis engine, and the track-uniqueness experiment.

pub mod grid;
pub mod mtpdf;
pub mod pipeline;
pub mod uniqueness;

pub use grid::{Axis, GridBelief};
pub use mtpdf::{oracle_predict, oracle_update, SymmetricMTpdf, WeightedMTpdf};
pub use pipeline::{compare_with_engine, oracle_run, Comparison, OracleScenario};
pub use uniqueness::{enumerate_tracks, min_pairwise_distance, track_uniqueness_experiment, UniquenessReport};
