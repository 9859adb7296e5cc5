//! Running the tracker over a measurement sequence.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{Mode, Scenario};
use super::generate::MeasurementScan;
use crate::error::{Error, Result};
use crate::hypothesis::{step_traced, HypothesisForest, Recursion, StepStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSummary {
    pub rank: usize,
    pub weight: f64,
    pub cardinality: usize,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub label: String,
    pub mean: Vec<f64>,
}

/// One line of the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub scan: u32,
    pub measurements: usize,
    pub stats: StepStats,
    pub hypotheses: Vec<HypothesisSummary>,
    /// `P(N = n)` over the retained hypotheses.
    pub cardinality: BTreeMap<usize, f64>,
    pub map_cardinality: usize,
    /// Track means of the most probable hypothesis.
    pub estimates: Vec<Estimate>,
}

pub fn recursion_for(mode: Mode) -> Recursion {
    match mode {
        Mode::Fisst | Mode::FisstAllBirthsDetected => Recursion::Fisst,
        Mode::Homht => Recursion::Homht,
    }
}

fn summarize(forest: &HypothesisForest, measurements: usize, stats: StepStats, top_k: usize) -> ScanRecord {
    let hypotheses = forest
        .hypotheses()
        .iter()
        .take(top_k)
        .enumerate()
        .map(|(rank, h)| HypothesisSummary {
            rank: rank + 1,
            weight: h.weight(),
            cardinality: h.cardinality(),
            labels: h.label_key().iter().map(ToString::to_string).collect(),
        })
        .collect();
    let map = forest.map_hypothesis();
    ScanRecord {
        scan: forest.scan_index(),
        measurements,
        stats,
        hypotheses,
        cardinality: forest.cardinality_distribution(),
        map_cardinality: map.cardinality(),
        estimates: map
            .tracks
            .iter()
            .map(|t| Estimate { label: t.label.to_string(), mean: t.density.mean().iter().copied().collect() })
            .collect(),
    }
}

/// Runs the scenario's tracker over `scans`, which must be numbered
/// `1, 2, …` in order. Returns one record per scan and the final forest.
pub fn track(scans: &[MeasurementScan], scenario: &Scenario) -> Result<(Vec<ScanRecord>, HypothesisForest)> {
    let settings = &scenario.run;
    let pruning = settings.effective_pruning();
    let recursion = recursion_for(settings.mode);
    let mut forest = HypothesisForest::from_initial(scenario.initial_targets.clone());
    let mut records = Vec::with_capacity(scans.len());
    for (i, scan) in scans.iter().enumerate() {
        if scan.scan as usize != i + 1 {
            return Err(Error::Config(format!("measurement scan {} found where scan {} was expected", scan.scan, i + 1)));
        }
        if let Some(z) = scan.z.iter().find(|z| z.len() != scenario.models.measurement.meas_dim()) {
            return Err(Error::Config(format!("scan {}: measurement of dimension {}", scan.scan, z.len())));
        }
        let (next, stats) = step_traced(&forest, &scan.vectors(), &scenario.models, &settings.engine, &pruning, recursion)?;
        forest = next;
        records.push(summarize(&forest, scan.z.len(), stats, settings.top_k));
    }
    Ok((records, forest))
}
