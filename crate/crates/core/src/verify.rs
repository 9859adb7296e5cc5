//! Engine-versus-oracle sweep.
//!
//! Every case is a small scenario (at most three targets after births, at
//! most three measurements per scan, one to four birth pixels) with
//! parameters drawn from a seeded generator. The engine runs without
//! pruning or gating and its normalized hypothesis weights are compared
//! with the grid oracle.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::belief::GaussianBelief;
use crate::error::Result;
use crate::hypothesis::BirthPriorForm;
use crate::models::{BirthModel, BirthPdfMode, ClutterModel, MeasurementModel, MotionModel, PixelGrid, ScenarioModels, SurvivalModel};
use crate::oracle::{compare_with_engine, Axis, OracleScenario};

pub const ORACLE_TOLERANCE: f64 = 1e-4;
pub const MAX_TARGETS: usize = 3;
pub const MAX_MEASUREMENTS: usize = 3;
pub const MAX_PIXELS: usize = 4;

const GRID_STEP: f64 = 0.05;
const GRID_MARGIN: f64 = 13.0;
const UNIFORM_CELLS_PER_DIM: usize = 4000;

#[derive(Debug, Clone)]
pub struct OracleCase {
    pub name: String,
    pub scenario: OracleScenario,
}

#[derive(Debug, Clone, Serialize)]
pub struct CaseResult {
    pub name: String,
    pub hypotheses: usize,
    pub max_rel_error: f64,
    pub unmatched: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub cases: Vec<CaseResult>,
}

impl SweepReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn worst_rel_error(&self) -> f64 {
        self.cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }
}

fn random_case<R: Rng>(
    rng: &mut R,
    name: String,
    n0: usize,
    m_per_scan: &[usize],
    pixels: usize,
    pdf: BirthPdfMode,
    prior: BirthPriorForm,
) -> Result<OracleCase> {
    let width = rng.random_range(0.8..1.2);
    let upper = width * pixels as f64;
    let grid = PixelGrid::new(vec![0.0], vec![upper], vec![pixels])?;
    let clutter_mean = rng.random_range(0.2..1.5);
    let models = ScenarioModels::new(
        MotionModel::random_walk(1, rng.random_range(0.2..0.6))?,
        MeasurementModel::new(
            DMatrix::identity(1, 1),
            DMatrix::from_element(1, 1, rng.random_range(0.15..0.4)),
            rng.random_range(0.6..0.95),
        )?,
        ClutterModel::new(clutter_mean / upper, upper)?,
        BirthModel::full_state(grid, rng.random_range(0.02..0.2))?,
        SurvivalModel::new(rng.random_range(0.85..1.0))?,
    )?;
    let initial =
        (0..n0).map(|_| GaussianBelief::scalar(rng.random_range(0.0..upper), rng.random_range(0.2..0.6))).collect::<Result<Vec<_>>>()?;
    let scans =
        m_per_scan.iter().map(|&m| (0..m).map(|_| DVector::from_element(1, rng.random_range(-0.5..upper + 0.5))).collect()).collect();
    Ok(OracleCase {
        name,
        scenario: OracleScenario {
            models,
            initial,
            scans,
            birth_pdf: pdf,
            birth_prior: prior,
            max_births: MAX_TARGETS - n0,
            axes: vec![Axis::with_step(-GRID_MARGIN, upper + GRID_MARGIN, GRID_STEP)?],
            birth_cells_per_dim: UNIFORM_CELLS_PER_DIM,
        },
    })
}

/// The full sweep: one scan over every `(n, m, M)` with `n, m ≤ 3` and
/// `M ≤ 4`, once with Gaussian and once with uniform births; then two scans
/// with Gaussian births over every `(n, m₁, m₂, M)`.
///
/// Uniform births are exact only up to their first update, since the engine
/// moment-matches the truncated normal that follows; they are checked on one
/// scan.
pub fn oracle_cases(seed: u64) -> Result<Vec<OracleCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();
    for (pdf, tag) in [(BirthPdfMode::Gaussian, "gauss"), (BirthPdfMode::Uniform, "unif")] {
        for n0 in 0..=MAX_TARGETS {
            for m in 0..=MAX_MEASUREMENTS {
                for pixels in 1..=MAX_PIXELS {
                    let prior = if (n0 + m + pixels) % 2 == 0 { BirthPriorForm::Binomial } else { BirthPriorForm::Poisson };
                    cases.push(random_case(&mut rng, format!("{tag}-1scan-n{n0}-m{m}-M{pixels}"), n0, &[m], pixels, pdf, prior)?);
                }
            }
        }
    }
    for n0 in 0..=MAX_TARGETS {
        for m1 in 0..=MAX_MEASUREMENTS {
            for m2 in 0..=MAX_MEASUREMENTS {
                for pixels in 1..=MAX_PIXELS {
                    let prior = if (n0 + m1 + m2 + pixels) % 2 == 0 { BirthPriorForm::Binomial } else { BirthPriorForm::Poisson };
                    let name = format!("gauss-2scan-n{n0}-m{m1},{m2}-M{pixels}");
                    let mut case = random_case(&mut rng, name, n0, &[m1, m2], pixels, BirthPdfMode::Gaussian, prior)?;
                    // births in both scans must keep the total within the bound
                    case.scenario.max_births = (MAX_TARGETS - n0) / 2;
                    cases.push(case);
                }
            }
        }
    }
    Ok(cases)
}

pub fn run_case(case: &OracleCase) -> Result<CaseResult> {
    let cmp = compare_with_engine(&case.scenario)?;
    Ok(CaseResult {
        name: case.name.clone(),
        hypotheses: cmp.scans.iter().map(|s| s.hypotheses).sum(),
        max_rel_error: cmp.max_rel_error(),
        unmatched: cmp.unmatched(),
        passed: cmp.passes(ORACLE_TOLERANCE),
    })
}

pub fn run_oracle_sweep(cases: &[OracleCase]) -> Result<SweepReport> {
    Ok(SweepReport { cases: cases.iter().map(run_case).collect::<Result<_>>()? })
}
