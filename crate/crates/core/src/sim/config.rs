//! Scenario files.
//!
//! A scenario is a TOML document with the sections `[motion]`,
//! `[measurement]`, `[clutter]`, `[birth]`, `[survival]`,
//! `[[initial_targets]]` and `[run]`. Matrices are lists of rows. The field
//! of view is the birth pixel grid; its axes are the leading state
//! components, and `birth.extra_mean`/`birth.extra_cov` describe the rest of
//! a newborn state (for example velocity).
//!
//! ```toml
//! [motion]
//! f = [[1.0]]
//! g = [[1.0]]
//! q = [[0.1]]
//!
//! [measurement]
//! h = [[1.0]]
//! r = [[0.25]]
//! p_d = 0.9
//!
//! [clutter]
//! lambda_c = 0.05          # per unit volume per scan
//!
//! [birth]
//! lower = [0.0]
//! upper = [20.0]
//! cells = [10]
//! alpha = 0.01             # or lambda_b = 0.005
//!
//! [survival]
//! beta = 0.98
//!
//! [[initial_targets]]
//! mean = [5.0]
//! cov = [[0.5]]
//!
//! [run]
//! horizon = 20
//! seed = 1
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::association::{BirthPolicy, EllipsoidalGate};
use crate::belief::GaussianBelief;
use crate::error::{Error, Result};
use crate::hypothesis::{BirthPriorForm, EngineConfig};
use crate::models::{BirthModel, BirthPdfMode, ClutterModel, MeasurementModel, MotionModel, PixelGrid, ScenarioModels, SurvivalModel};
use crate::pruning::PruningPolicy;

/// Which recursion the tracker runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Fisst,
    Homht,
    /// FISST with every hypothesis holding an undetected birth removed.
    FisstAllBirthsDetected,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fisst" => Ok(Mode::Fisst),
            "homht" => Ok(Mode::Homht),
            "fisst_all_births_detected" => Ok(Mode::FisstAllBirthsDetected),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Fisst => "fisst",
            Mode::Homht => "homht",
            Mode::FisstAllBirthsDetected => "fisst_all_births_detected",
        })
    }
}

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MotionSection {
    f: Rows,
    g: Rows,
    q: Rows,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeasurementSection {
    h: Rows,
    r: Rows,
    p_d: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClutterSection {
    lambda_c: f64,
}

fn default_max_births() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BirthSection {
    lower: Vec<f64>,
    upper: Vec<f64>,
    cells: Vec<usize>,
    alpha: Option<f64>,
    lambda_b: Option<f64>,
    #[serde(default)]
    prior: BirthPriorForm,
    #[serde(default)]
    pdf: BirthPdfMode,
    #[serde(default)]
    policy: PolicyKind,
    #[serde(default = "default_max_births")]
    max_births: usize,
    #[serde(default)]
    extra_mean: Vec<f64>,
    #[serde(default)]
    extra_cov: Rows,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
enum PolicyKind {
    #[default]
    MeasurementGated,
    AllPixels,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SurvivalSection {
    beta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetSection {
    mean: Vec<f64>,
    cov: Rows,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RunSection {
    horizon: u32,
    seed: u64,
    mode: Mode,
    max_hypotheses: usize,
    min_weight: f64,
    drop_undetected_births: bool,
    /// `0` disables gating.
    gate_probability: f64,
    max_children: usize,
    homht_detection_factors: bool,
    top_k: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            horizon: 10,
            seed: 0,
            mode: Mode::Fisst,
            max_hypotheses: 100,
            min_weight: 1e-6,
            drop_undetected_births: false,
            gate_probability: 0.999,
            max_children: 2_000_000,
            homht_detection_factors: false,
            top_k: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    motion: MotionSection,
    measurement: MeasurementSection,
    clutter: ClutterSection,
    birth: BirthSection,
    survival: SurvivalSection,
    #[serde(default)]
    initial_targets: Vec<TargetSection>,
    #[serde(default)]
    run: RunSection,
}

/// Tracker settings that are not part of the generative model.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub mode: Mode,
    pub pruning: PruningPolicy,
    pub engine: EngineConfig,
    /// Hypotheses written per scan.
    pub top_k: usize,
}

impl RunSettings {
    /// Pruning policy in effect for the mode.
    pub fn effective_pruning(&self) -> PruningPolicy {
        let mut p = self.pruning;
        if self.mode == Mode::FisstAllBirthsDetected {
            p.drop_undetected_births = true;
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub models: ScenarioModels,
    pub horizon: u32,
    pub initial_targets: Vec<GaussianBelief>,
    pub seed: u64,
    pub run: RunSettings,
}

fn matrix(name: &str, rows: &Rows) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!("{name}: rows have different lengths")));
    }
    Ok(DMatrix::from_row_iterator(r, c, rows.iter().flatten().copied()))
}

fn config<T>(what: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(_) => e,
        other => Error::Config(format!("{what}: {other}")),
    })
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    fn from_file(file: ScenarioFile) -> Result<Self> {
        let motion = config(
            "motion",
            MotionModel::new(matrix("motion.f", &file.motion.f)?, matrix("motion.g", &file.motion.g)?, matrix("motion.q", &file.motion.q)?),
        )?;
        let m = &file.measurement;
        let measurement =
            config("measurement", MeasurementModel::new(matrix("measurement.h", &m.h)?, matrix("measurement.r", &m.r)?, m.p_d))?;
        let b = &file.birth;
        let grid = config("birth grid", PixelGrid::new(b.lower.clone(), b.upper.clone(), b.cells.clone()))?;
        let clutter = config("clutter", ClutterModel::new(file.clutter.lambda_c, grid.volume()))?;
        let extra_mean = DVector::from_vec(b.extra_mean.clone());
        let extra_cov = if b.extra_cov.is_empty() { DMatrix::zeros(0, 0) } else { matrix("birth.extra_cov", &b.extra_cov)? };
        let birth = match (b.alpha, b.lambda_b) {
            (Some(alpha), None) => config("birth", BirthModel::new(grid, alpha, extra_mean, extra_cov))?,
            (None, Some(rate)) => config("birth", BirthModel::from_rate(grid, rate, extra_mean, extra_cov))?,
            _ => return Err(Error::Config("birth: give exactly one of alpha and lambda_b".into())),
        };
        let survival = config("survival", SurvivalModel::new(file.survival.beta))?;
        let models = config("scenario", ScenarioModels::new(motion, measurement, clutter, birth, survival))?;

        let initial_targets = file
            .initial_targets
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let b = config(
                    &format!("initial_targets[{i}]"),
                    GaussianBelief::new(DVector::from_vec(t.mean.clone()), matrix("initial_targets.cov", &t.cov)?),
                )?;
                if b.dim() != models.state_dim() {
                    return Err(Error::Config(format!("initial_targets[{i}] has dimension {}, state has {}", b.dim(), models.state_dim())));
                }
                Ok(b)
            })
            .collect::<Result<Vec<_>>>()?;
        for i in 0..initial_targets.len() {
            for j in 0..i {
                if initial_targets[i].distance(&initial_targets[j]) == 0.0 {
                    return Err(Error::Config(format!("initial_targets[{j}] and [{i}] are identical")));
                }
            }
        }

        let run = &file.run;
        if run.horizon == 0 {
            return Err(Error::Config("run.horizon must be at least 1".into()));
        }
        let pruning = config("run", PruningPolicy::new(run.max_hypotheses, run.min_weight, run.drop_undetected_births))?;
        let gate = if run.gate_probability > 0.0 {
            Some(config("run.gate_probability", EllipsoidalGate::from_probability(run.gate_probability, models.measurement.meas_dim()))?)
        } else {
            None
        };
        let birth_policy = match b.policy {
            PolicyKind::MeasurementGated => BirthPolicy::MeasurementGated { max_births: b.max_births },
            PolicyKind::AllPixels => BirthPolicy::AllPixels { max_births: b.max_births },
        };
        if b.pdf == BirthPdfMode::Uniform && !models.is_full_state_diagonal() {
            return Err(Error::Config("birth.pdf = \"uniform\" needs H = I and a diagonal R".into()));
        }
        let engine = EngineConfig {
            birth_prior: b.prior,
            birth_pdf: b.pdf,
            birth_policy,
            gate,
            max_children: run.max_children,
            homht_detection_factors: run.homht_detection_factors,
        };
        Ok(Self {
            models,
            horizon: run.horizon,
            initial_targets,
            seed: run.seed,
            run: RunSettings { mode: run.mode, pruning, engine, top_k: run.top_k },
        })
    }
}
