//! Ground truth and measurement generation.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`), seeded from the scenario
//! seed. Truth and measurements use separate streams of the same seed, so
//! changing the sensor leaves the truth untouched.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::config::Scenario;
use crate::belief::{sample_gaussian, GaussianBelief};
use crate::models::{PixelGrid, ScenarioModels};

const TRUTH_STREAM: u64 = 0;
const MEASUREMENT_STREAM: u64 = 1;

pub fn truth_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(TRUTH_STREAM);
    rng
}

pub fn measurement_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(MEASUREMENT_STREAM);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthTarget {
    pub id: u32,
    pub state: Vec<f64>,
}

/// True states at one scan; scan 0 is the initial draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthScan {
    pub scan: u32,
    pub targets: Vec<TruthTarget>,
}

/// What the tracker sees: measurement values only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementScan {
    pub scan: u32,
    pub z: Vec<Vec<f64>>,
}

impl MeasurementScan {
    pub fn vectors(&self) -> Vec<DVector<f64>> {
        self.z.iter().map(|z| DVector::from_column_slice(z)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "id")]
pub enum Origin {
    Target(u32),
    Clutter,
}

/// Origin of each measurement of a [`MeasurementScan`], kept apart from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginScan {
    pub scan: u32,
    pub origins: Vec<Origin>,
}

fn uniform_in_box<R: Rng + ?Sized>(rng: &mut R, lower: &[f64], upper: &[f64]) -> Vec<f64> {
    lower.iter().zip(upper).map(|(l, u)| rng.random_range(*l..*u)).collect()
}

fn fov(grid: &PixelGrid) -> (&[f64], &[f64]) {
    (grid.lower(), grid.upper())
}

/// Scans `0..=horizon`. Per scan: each target survives with probability β,
/// survivors move by `x' = Fx + Gw`, then each pixel spawns a target with
/// probability α (uniform in the pixel, `extra_*` for the other components).
pub fn generate_truth(scenario: &Scenario) -> Vec<TruthScan> {
    generate_truth_with(&scenario.models, &scenario.initial_targets, scenario.horizon, &mut truth_rng(scenario.seed))
}

/// [`generate_truth`] with the pieces of a scenario passed separately.
pub fn generate_truth_with<R: Rng + ?Sized>(
    models: &ScenarioModels,
    initial: &[GaussianBelief],
    horizon: u32,
    rng: &mut R,
) -> Vec<TruthScan> {
    let mut next_id = 0u32;
    let mut current: Vec<(u32, DVector<f64>)> = initial
        .iter()
        .map(|b| {
            next_id += 1;
            (next_id - 1, sample_gaussian(rng, &b.mean, &b.cov))
        })
        .collect();
    let snapshot = |scan: u32, targets: &[(u32, DVector<f64>)]| TruthScan {
        scan,
        targets: targets.iter().map(|(id, x)| TruthTarget { id: *id, state: x.iter().copied().collect() }).collect(),
    };
    let mut out = vec![snapshot(0, &current)];
    let zero_w = DVector::zeros(models.motion.q().nrows());
    let beta = models.survival.beta();
    let birth = &models.birth;
    for scan in 1..=horizon {
        let mut next = Vec::with_capacity(current.len());
        for (id, x) in current {
            if !rng.random_bool(beta) {
                continue;
            }
            let w = sample_gaussian(rng, &zero_w, models.motion.q());
            next.push((id, models.motion.f() * x + models.motion.g() * w));
        }
        for px in 0..birth.pixel_count() {
            if !rng.random_bool(birth.alpha()) {
                continue;
            }
            let bounds = birth.grid().pixel_bounds(px).expect("pixel index in range");
            let mut state = uniform_in_box(rng, &bounds.lower, &bounds.upper);
            if !birth.extra_mean().is_empty() {
                state.extend(sample_gaussian(rng, birth.extra_mean(), birth.extra_cov()).iter());
            }
            next.push((next_id, DVector::from_vec(state)));
            next_id += 1;
        }
        current = next;
        out.push(snapshot(scan, &current));
    }
    out
}

/// One measurement set per scan after the initial one. Each target is
/// detected with probability `p_D` and measured as `Hx + v`; the clutter
/// count is Poisson with mean `λ_C V` and clutter is uniform on the field of
/// view. Each set is shuffled.
pub fn generate_measurements<R: Rng + ?Sized>(
    truth: &[TruthScan],
    models: &ScenarioModels,
    rng: &mut R,
) -> (Vec<MeasurementScan>, Vec<OriginScan>) {
    let zero_v = DVector::zeros(models.measurement.meas_dim());
    let clutter_mean = models.clutter.mean_count();
    let poisson = (clutter_mean > 0.0).then(|| Poisson::new(clutter_mean).expect("positive finite mean"));
    let (lower, upper) = fov(models.birth.grid());
    let mut scans = Vec::new();
    let mut origins = Vec::new();
    for t in truth.iter().filter(|t| t.scan > 0) {
        let mut tagged: Vec<(Vec<f64>, Origin)> = Vec::new();
        for target in &t.targets {
            if !rng.random_bool(models.measurement.p_d()) {
                continue;
            }
            let x = DVector::from_column_slice(&target.state);
            let v = sample_gaussian(rng, &zero_v, models.measurement.r());
            let z = models.measurement.h() * x + v;
            tagged.push((z.iter().copied().collect(), Origin::Target(target.id)));
        }
        let k = poisson.as_ref().map_or(0, |p| p.sample(rng) as usize);
        for _ in 0..k {
            tagged.push((uniform_in_box(rng, lower, upper), Origin::Clutter));
        }
        tagged.shuffle(rng);
        let (z, o): (Vec<_>, Vec<_>) = tagged.into_iter().unzip();
        scans.push(MeasurementScan { scan: t.scan, z });
        origins.push(OriginScan { scan: t.scan, origins: o });
    }
    (scans, origins)
}
