use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fisst_core::sim::io::{self, read_measurements, read_truth, simulate, write_metrics, write_simulation, write_tracking};
use fisst_core::sim::{score, track, Mode, Scenario};
use fisst_core::verify::{oracle_cases, run_oracle_sweep, ORACLE_TOLERANCE};
use fisst_core::{Error, PruningPolicy};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_EXPLOSION: u8 = 3;

/// Multi-target tracking simulator and tracker.
#[derive(Parser, Debug)]
#[command(name = "fisst", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate truth and measurements.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Run the tracker on a measurement file.
    Track {
        scenario: PathBuf,
        measurements: PathBuf,
        /// Truth file to score against.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[command(flatten)]
        tracker: TrackerArgs,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Simulate, track and score.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        tracker: TrackerArgs,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Compare engine weights with the grid oracle on the built-in sweep.
    Verify {
        #[arg(long, default_value_t = 2026)]
        seed: u64,
        /// Write the per-case report as JSON.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct TrackerArgs {
    /// fisst, homht or fisst_all_births_detected.
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    max_hyp: Option<usize>,
    #[arg(long)]
    min_weight: Option<f64>,
    #[arg(long)]
    drop_undetected_births: bool,
}

impl TrackerArgs {
    fn apply(&self, scenario: &mut Scenario) -> fisst_core::Result<()> {
        let run = &mut scenario.run;
        if let Some(mode) = self.mode {
            run.mode = mode;
        }
        run.pruning = PruningPolicy::new(
            self.max_hyp.unwrap_or(run.pruning.max_hypotheses),
            self.min_weight.unwrap_or(run.pruning.min_weight),
            self.drop_undetected_births || run.pruning.drop_undetected_births,
        )?;
        Ok(())
    }
}

fn load(path: &Path, seed: Option<u64>) -> fisst_core::Result<Scenario> {
    let mut scenario = Scenario::load(path)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    Ok(scenario)
}

fn execute(command: Command) -> fisst_core::Result<bool> {
    match command {
        Command::Simulate { scenario, seed, out_dir } => {
            let scenario = load(&scenario, seed)?;
            let sim = simulate(&scenario);
            write_simulation(&out_dir, &sim)?;
            let z: usize = sim.measurements.iter().map(|s| s.z.len()).sum();
            println!("simulated {} scans, {z} measurements -> {}", sim.measurements.len(), out_dir.display());
        }
        Command::Track { scenario, measurements, truth, tracker, out_dir } => {
            let mut scenario = load(&scenario, None)?;
            tracker.apply(&mut scenario)?;
            let scans = read_measurements(&measurements)?;
            let (records, forest) = track(&scans, &scenario)?;
            write_tracking(&out_dir, &records)?;
            if let Some(truth) = truth {
                let metrics = score(&read_truth(&truth)?, &records, &scenario.models);
                write_metrics(&out_dir, &metrics)?;
                println!("cardinality accuracy {:.4}", metrics.cardinality_accuracy);
            }
            println!("tracked {} scans, {} hypotheses at the end -> {}", records.len(), forest.len(), out_dir.display());
        }
        Command::Run { scenario, seed, tracker, out_dir } => {
            let mut scenario = load(&scenario, seed)?;
            tracker.apply(&mut scenario)?;
            let metrics = io::run(&scenario, &out_dir)?;
            println!(
                "{} scans, cardinality accuracy {:.4}, mean |n error| {:.4}, dropped mass {:.3e} -> {}",
                metrics.scans.len(),
                metrics.cardinality_accuracy,
                metrics.mean_abs_cardinality_error,
                metrics.total_dropped_mass,
                out_dir.display()
            );
        }
        Command::Verify { seed, out_dir } => {
            let report = run_oracle_sweep(&oracle_cases(seed)?)?;
            for c in &report.cases {
                println!(
                    "{} {:<32} hypotheses={:<4} max_rel_error={:.3e}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.hypotheses,
                    c.max_rel_error
                );
            }
            let failed = report.cases.iter().filter(|c| !c.passed).count();
            println!(
                "{} cases, {failed} failed, worst relative error {:.3e} (tolerance {ORACLE_TOLERANCE:e})",
                report.cases.len(),
                report.worst_rel_error()
            );
            if let Some(dir) = out_dir {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("verify.json"), serde_json::to_string_pretty(&report)?)?;
            }
            return Ok(report.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAILURE),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => EXIT_CONFIG,
                Error::Explosion { .. } => EXIT_EXPLOSION,
                _ => EXIT_FAILURE,
            })
        }
    }
}
