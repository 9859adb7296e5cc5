//! Output files.
//!
//! | file | content |
//! |---|---|
//! | `measurements.jsonl` | one [`MeasurementScan`] per line |
//! | `truth.jsonl` | one [`TruthLine`] per line, scan 0 first |
//! | `trace.jsonl` | one [`ScanRecord`] per line |
//! | `hypotheses.csv` | `scan,rank,weight,n,labels`, labels joined by `;` |
//! | `metrics.json` | [`Metrics`] |

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::Scenario;
use super::generate::{generate_measurements, generate_truth, measurement_rng, MeasurementScan, Origin, TruthScan, TruthTarget};
use super::run::{track, ScanRecord};
use super::score::{score, Metrics};
use crate::error::{Error, Result};

pub const MEASUREMENTS_FILE: &str = "measurements.jsonl";
pub const TRUTH_FILE: &str = "truth.jsonl";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const HYPOTHESES_FILE: &str = "hypotheses.csv";
pub const METRICS_FILE: &str = "metrics.json";

/// Truth at one scan with the origin of every measurement of that scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthLine {
    pub scan: u32,
    pub targets: Vec<TruthTarget>,
    pub origins: Vec<Origin>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub truth: Vec<TruthScan>,
    pub measurements: Vec<MeasurementScan>,
    pub origins: Vec<Vec<Origin>>,
}

pub fn simulate(scenario: &Scenario) -> Simulation {
    let truth = generate_truth(scenario);
    let (measurements, origins) = generate_measurements(&truth, &scenario.models, &mut measurement_rng(scenario.seed));
    Simulation { truth, measurements, origins: origins.into_iter().map(|o| o.origins).collect() }
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(out)
}

pub fn read_measurements(path: &Path) -> Result<Vec<MeasurementScan>> {
    read_jsonl(path)
}

pub fn write_simulation(dir: &Path, sim: &Simulation) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_jsonl(&dir.join(MEASUREMENTS_FILE), &sim.measurements)?;
    let lines: Vec<TruthLine> = sim
        .truth
        .iter()
        .map(|t| TruthLine {
            scan: t.scan,
            targets: t.targets.clone(),
            origins: if t.scan == 0 { Vec::new() } else { sim.origins[t.scan as usize - 1].clone() },
        })
        .collect();
    write_jsonl(&dir.join(TRUTH_FILE), &lines)
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthScan>> {
    let lines: Vec<TruthLine> = read_jsonl(path)?;
    Ok(lines.into_iter().map(|l| TruthScan { scan: l.scan, targets: l.targets }).collect())
}

pub fn write_hypotheses_csv(path: &Path, records: &[ScanRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(["scan", "rank", "weight", "n", "labels"]).map_err(csv_error)?;
    for r in records {
        for h in &r.hypotheses {
            w.write_record([
                r.scan.to_string(),
                h.rank.to_string(),
                format!("{:e}", h.weight),
                h.cardinality.to_string(),
                h.labels.join(";"),
            ])
            .map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("csv: {other:?}")),
    }
}

pub fn write_tracking(dir: &Path, records: &[ScanRecord]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_jsonl(&dir.join(TRACE_FILE), records)?;
    write_hypotheses_csv(&dir.join(HYPOTHESES_FILE), records)
}

pub fn write_metrics(dir: &Path, metrics: &Metrics) -> Result<()> {
    let mut w = BufWriter::new(File::create(dir.join(METRICS_FILE))?);
    serde_json::to_writer_pretty(&mut w, metrics)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Simulates, tracks and scores one scenario, writing every file into `dir`.
pub fn run(scenario: &Scenario, dir: &Path) -> Result<Metrics> {
    let sim = simulate(scenario);
    write_simulation(dir, &sim)?;
    let (records, _) = track(&sim.measurements, scenario)?;
    write_tracking(dir, &records)?;
    let metrics = score(&sim.truth, &records, &scenario.models);
    write_metrics(dir, &metrics)?;
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCENARIO: &str = r#"
[motion]
f = [[1.0]]
g = [[1.0]]
q = [[0.05]]

[measurement]
h = [[1.0]]
r = [[0.1]]
p_d = 0.95

[clutter]
lambda_c = 0.05

[birth]
lower = [0.0]
upper = [20.0]
cells = [20]
alpha = 0.002

[survival]
beta = 0.99

[[initial_targets]]
mean = [8.0]
cov = [[0.2]]

[run]
horizon = 6
seed = 2
"#;

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = Scenario::from_toml_str(SCENARIO).unwrap();
        let metrics = run(&s, dir.path()).unwrap();
        let sim = simulate(&s);
        assert_eq!(read_measurements(&dir.path().join(MEASUREMENTS_FILE)).unwrap(), sim.measurements);
        assert_eq!(read_truth(&dir.path().join(TRUTH_FILE)).unwrap(), sim.truth);
        let trace: Vec<ScanRecord> = read_jsonl(&dir.path().join(TRACE_FILE)).unwrap();
        assert_eq!(trace.len(), 6);
        let mut csv = csv::Reader::from_path(dir.path().join(HYPOTHESES_FILE)).unwrap();
        let rows: Vec<csv::StringRecord> = csv.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), trace.iter().map(|r| r.hypotheses.len()).sum::<usize>());
        assert_eq!(&rows[0][0], "1");
        assert_eq!(&rows[0][1], "1");
        let written: Metrics = serde_json::from_reader(File::open(dir.path().join(METRICS_FILE)).unwrap()).unwrap();
        assert_eq!(written, metrics);
        assert_eq!(metrics.scans.len(), 6);
    }

    #[test]
    fn bad_jsonl_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(&path, "{\"scan\": 1, \"z\": [[1.0]]}\nnot json\n").unwrap();
        assert!(matches!(read_measurements(&path), Err(Error::Config(_))));
    }
}
