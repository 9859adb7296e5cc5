//! Scenario files, simulation of truth and measurements, tracking runs and
//! scoring.

pub mod config;
pub mod generate;
pub mod io;
pub mod run;
pub mod score;

pub use config::{Mode, RunSettings, Scenario};
pub use generate::{generate_measurements, generate_truth, MeasurementScan, TruthScan};
pub use io::{run, simulate, Simulation};
pub use run::{track, ScanRecord};
pub use score::{score, Metrics};
