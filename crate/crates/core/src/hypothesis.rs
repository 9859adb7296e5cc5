//! The hypothesis engine: hypothesis-conditioned prediction with birth and
//! death, the measurement update with its weight recursion, and Reid's
//! hypothesis-oriented MHT weight rule for side-by-side comparison.
//!
//! A multi-target pdf is held as a [`HypothesisForest`]: a weighted list of
//! hypotheses, each an unordered set of labelled single-target densities.
//! One scan expands every parent over all (survival, birth, association)
//! combinations, normalizes in the log domain, merges children with the
//! same track-label set, and prunes.

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap};

use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::association::{
    enumerate_associations, enumerate_birth_hypotheses, enumerate_survival, for_each_association, BirthHypothesis, BirthPolicy,
    DataAssociation, EllipsoidalGate, SurvivalHypothesis,
};
use crate::belief::{GaussianBelief, MeasIndex, TrackLabel};
use crate::error::{Error, Result};
use crate::logmath::{ln_factorial, log_add_exp, log_sum_exp, xlogy};
use crate::models::{
    birth_pdf, ln_association_prior, ln_birth_prior, ln_birth_prior_poisson_limit, ln_survival_prior, BirthPdf, BirthPdfMode, PixelBox,
    ScenarioModels,
};
use crate::pruning::{apply_rules, is_undetected_birth, PruningPolicy};

/// Children more than this far below the best child (in log weight) are
/// treated as exact zeros.
pub const UNDERFLOW_LOG_GAP: f64 = 700.0;

/// Which birth prior the engine multiplies into each hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BirthPriorForm {
    /// `α^p (1-α)^(M-p)`.
    #[default]
    Binomial,
    /// `e^(-λ_B V) λ_B^p V̄^p`.
    Poisson,
}

/// Engine knobs that are not scenario parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub birth_prior: BirthPriorForm,
    pub birth_pdf: BirthPdfMode,
    pub birth_policy: BirthPolicy,
    /// `None` disables gating (exhaustive enumeration).
    pub gate: Option<EllipsoidalGate>,
    /// Explosion guard on the number of children generated in one scan.
    pub max_children: usize,
    /// Multiply the HOMHT birth term by `p_D`, as later MHT formulations do.
    pub homht_detection_factors: bool,
}

impl EngineConfig {
    /// Exhaustive, ungated configuration used for exact comparisons.
    pub fn exhaustive(max_births: usize) -> Self {
        Self {
            birth_prior: BirthPriorForm::Binomial,
            birth_pdf: BirthPdfMode::Gaussian,
            birth_policy: BirthPolicy::AllPixels { max_births },
            gate: None,
            max_children: 5_000_000,
            homht_detection_factors: false,
        }
    }

    /// Gated configuration: χ² 0.999 gate, measurement-gated births.
    pub fn gated(models: &ScenarioModels, max_births: usize) -> Result<Self> {
        Ok(Self {
            birth_prior: BirthPriorForm::Binomial,
            birth_pdf: BirthPdfMode::Gaussian,
            birth_policy: BirthPolicy::MeasurementGated { max_births },
            gate: Some(EllipsoidalGate::from_probability(0.999, models.measurement.meas_dim())?),
            max_children: 5_000_000,
            homht_detection_factors: false,
        })
    }

    pub fn ln_birth_prior(&self, p: usize, models: &ScenarioModels) -> Result<f64> {
        match self.birth_prior {
            BirthPriorForm::Binomial => ln_birth_prior(p, &models.birth),
            BirthPriorForm::Poisson => Ok(ln_birth_prior_poisson_limit(p, &models.birth)),
        }
    }
}

/// Density of one track. Newborn targets may carry the exact uniform pixel
/// density until their first prediction or detection.
#[derive(Debug, Clone, PartialEq)]
pub enum TrackDensity {
    Gaussian(GaussianBelief),
    Uniform(PixelBox),
}

impl TrackDensity {
    /// Gaussian with the same first two moments.
    pub fn moment_matched(&self) -> GaussianBelief {
        match self {
            TrackDensity::Gaussian(g) => g.clone(),
            TrackDensity::Uniform(px) => {
                GaussianBelief::from_parts_unchecked(px.center(), DMatrix::from_diagonal(&DVector::from_vec(px.variances())))
            }
        }
    }

    pub fn mean(&self) -> DVector<f64> {
        match self {
            TrackDensity::Gaussian(g) => g.mean.clone(),
            TrackDensity::Uniform(px) => px.center(),
        }
    }

    /// Uniform densities are moment-matched before the Kalman prediction.
    pub fn predict(&self, models: &ScenarioModels) -> Result<TrackDensity> {
        Ok(TrackDensity::Gaussian(self.moment_matched().predict(&models.motion)?))
    }

    /// Posterior density and `ln ∫ p(z|x) p(x) dx`.
    pub fn update(&self, z: &DVector<f64>, models: &ScenarioModels) -> Result<(TrackDensity, f64)> {
        match self {
            TrackDensity::Gaussian(g) => {
                let (post, ll) = g.update(z, &models.measurement)?;
                Ok((TrackDensity::Gaussian(post), ll))
            }
            TrackDensity::Uniform(px) => uniform_update(px, z, models),
        }
    }

    fn gate(&self, gate: &EllipsoidalGate, z: &DVector<f64>, models: &ScenarioModels) -> Result<bool> {
        match self {
            TrackDensity::Gaussian(g) => gate.passes(g, z, &models.measurement),
            TrackDensity::Uniform(px) => {
                let r = models.measurement.r();
                let reach = gate.threshold.sqrt();
                Ok((0..px.dims()).all(|i| {
                    let sd = r[(i, i)].sqrt();
                    z[i] >= px.lower[i] - reach * sd && z[i] <= px.upper[i] + reach * sd
                }))
            }
        }
    }
}

/// Exact update of the uniform pixel density under `z = x + v` with diagonal
/// `R`: the likelihood is the box mass of `N(·; z, R)` over `V̄`, and the
/// posterior (a truncated normal) is returned moment-matched.
fn uniform_update(px: &PixelBox, z: &DVector<f64>, models: &ScenarioModels) -> Result<(TrackDensity, f64)> {
    if !models.is_full_state_diagonal() {
        return Err(Error::model("the uniform birth density needs H = I and a diagonal R"));
    }
    if z.len() != px.dims() {
        return Err(Error::dim("measurement dimension differs from the pixel grid"));
    }
    let std_normal = Normal::standard();
    let r = models.measurement.r();
    let mut ln_mass = 0.0;
    let mut mean = DVector::zeros(px.dims());
    let mut var = DVector::zeros(px.dims());
    for i in 0..px.dims() {
        let sd = r[(i, i)].sqrt();
        let a = (px.lower[i] - z[i]) / sd;
        let b = (px.upper[i] - z[i]) / sd;
        // upper tail form keeps precision when the box sits right of z
        let mass = if a > 0.0 { std_normal.sf(a) - std_normal.sf(b) } else { std_normal.cdf(b) - std_normal.cdf(a) };
        ln_mass += mass.ln();
        if mass > 1e-300 {
            let (pa, pb) = (std_normal.pdf(a), std_normal.pdf(b));
            let shift = (pa - pb) / mass;
            let apa = if a.is_finite() { a * pa } else { 0.0 };
            let bpb = if b.is_finite() { b * pb } else { 0.0 };
            mean[i] = z[i] + sd * shift;
            var[i] = r[(i, i)] * (1.0 + (apa - bpb) / mass - shift * shift);
        } else {
            mean[i] = z[i];
            var[i] = r[(i, i)];
        }
    }
    let ll = ln_mass - px.volume().ln();
    let post = GaussianBelief::from_parts_unchecked(mean, DMatrix::from_diagonal(&var));
    Ok((TrackDensity::Gaussian(post), ll))
}

impl From<BirthPdf> for TrackDensity {
    fn from(p: BirthPdf) -> Self {
        match p {
            BirthPdf::Uniform(px) => TrackDensity::Uniform(px),
            BirthPdf::Gaussian(g) => TrackDensity::Gaussian(g),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub label: TrackLabel,
    pub density: TrackDensity,
}

/// An `n`-target hypothesis: a set of labelled tracks and a log weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tracks: Vec<Track>,
    pub log_weight: f64,
}

impl Hypothesis {
    pub fn new(tracks: Vec<Track>, log_weight: f64) -> Result<Self> {
        let mut h = Self { tracks, log_weight };
        h.canonicalize();
        if h.tracks.windows(2).any(|w| w[0].label == w[1].label) {
            return Err(Error::model("track labels within a hypothesis must be distinct"));
        }
        Ok(h)
    }

    pub fn cardinality(&self) -> usize {
        self.tracks.len()
    }

    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }

    /// Sorted track labels; two hypotheses are the same iff these match.
    pub fn label_key(&self) -> Vec<TrackLabel> {
        let mut key: Vec<TrackLabel> = self.tracks.iter().map(|t| t.label.clone()).collect();
        key.sort();
        key
    }

    /// Orders tracks by label.
    pub fn canonicalize(&mut self) {
        self.tracks.sort_by(|a, b| a.label.cmp(&b.label));
    }
}

/// The full multi-target pdf: a weighted hypothesis collection.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisForest {
    hypotheses: Vec<Hypothesis>,
    scan_index: u32,
}

impl HypothesisForest {
    /// Normalizes the weights on construction.
    pub fn new(hypotheses: Vec<Hypothesis>, scan_index: u32) -> Result<Self> {
        if hypotheses.is_empty() {
            return Err(Error::model("a forest needs at least one hypothesis"));
        }
        let mut f = Self { hypotheses, scan_index };
        f.normalize();
        Ok(f)
    }

    /// One hypothesis with weight 1 holding each initial component.
    pub fn from_initial(components: Vec<GaussianBelief>) -> Self {
        let tracks = components
            .into_iter()
            .enumerate()
            .map(|(k, b)| Track { label: TrackLabel::initial(k), density: TrackDensity::Gaussian(b) })
            .collect();
        let mut h = Hypothesis { tracks, log_weight: 0.0 };
        h.canonicalize();
        Self { hypotheses: vec![h], scan_index: 0 }
    }

    pub(crate) fn from_sorted_unchecked(hypotheses: Vec<Hypothesis>, scan_index: u32) -> Self {
        Self { hypotheses, scan_index }
    }

    pub fn hypotheses(&self) -> &[Hypothesis] {
        &self.hypotheses
    }

    pub fn into_hypotheses(self) -> Vec<Hypothesis> {
        self.hypotheses
    }

    pub fn scan_index(&self) -> u32 {
        self.scan_index
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.hypotheses.iter().map(Hypothesis::weight).collect()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights().iter().sum()
    }

    /// Log-sum-exp normalization. Returns the log normalizer that was removed.
    pub fn normalize(&mut self) -> f64 {
        let lws: Vec<f64> = self.hypotheses.iter().map(|h| h.log_weight).collect();
        let norm = log_sum_exp(&lws);
        if norm.is_finite() {
            for h in &mut self.hypotheses {
                h.log_weight -= norm;
            }
        }
        norm
    }

    /// Highest-weight hypothesis (ties broken by label order).
    pub fn map_hypothesis(&self) -> &Hypothesis {
        let mut best = &self.hypotheses[0];
        for h in &self.hypotheses[1..] {
            if compare_hypotheses(h, best) == std::cmp::Ordering::Less {
                best = h;
            }
        }
        best
    }

    pub fn cardinality_distribution(&self) -> BTreeMap<usize, f64> {
        cardinality_distribution(self)
    }

    /// Sorts by weight descending, then label order.
    pub fn sort(&mut self) {
        self.hypotheses.sort_by(compare_hypotheses);
    }
}

/// Weight descending, then lexicographic on the sorted label lists.
pub fn compare_hypotheses(a: &Hypothesis, b: &Hypothesis) -> std::cmp::Ordering {
    b.log_weight.total_cmp(&a.log_weight).then_with(|| a.tracks.iter().map(|t| &t.label).cmp(b.tracks.iter().map(|t| &t.label)))
}

/// `ρ(n)`: total weight of the `n`-track hypotheses.
pub fn cardinality_distribution(forest: &HypothesisForest) -> BTreeMap<usize, f64> {
    let mut rho = BTreeMap::new();
    for h in forest.hypotheses() {
        *rho.entry(h.cardinality()).or_insert(0.0) += h.weight();
    }
    rho
}

/// Survival, Kalman prediction and birth for one (parent, birth, survival)
/// combination. Newborn tracks get a fresh birth label for `scan`.
pub fn predict_hypothesis(
    h: &Hypothesis,
    births: &BirthHypothesis,
    survival: &SurvivalHypothesis,
    models: &ScenarioModels,
    config: &EngineConfig,
    scan: u32,
) -> Result<Hypothesis> {
    let r = h.tracks.len();
    if survival.track_count() != r {
        return Err(Error::dim(format!("survival hypothesis covers {} tracks, hypothesis has {r}", survival.track_count())));
    }
    let ln_s = ln_survival_prior(survival.survivors().len(), r, &models.survival)?;
    let ln_b = config.ln_birth_prior(births.len(), models)?;
    let mut tracks = Vec::with_capacity(survival.survivors().len() + births.len());
    for &i in survival.survivors() {
        let t = &h.tracks[i];
        tracks.push(Track { label: t.label.clone(), density: t.density.predict(models)? });
    }
    for &pixel in births.pixels() {
        let density = birth_pdf(pixel, &models.birth, config.birth_pdf)?.into();
        tracks.push(Track { label: TrackLabel::birth(scan, pixel), density });
    }
    Ok(Hypothesis { tracks, log_weight: h.log_weight + ln_s + ln_b })
}

/// `ln(p(σ|n) · k!/V^k)`, the part of a child's weight that depends only on
/// the counts.
fn ln_association_factor(n: usize, m: usize, k: usize, models: &ScenarioModels) -> Result<f64> {
    let v = models.clutter.volume();
    Ok(ln_association_prior(n, m, k, &models.measurement, &models.clutter)? + ln_factorial(k) - k as f64 * v.ln())
}

/// Measurement update of one predicted hypothesis under one association.
/// The returned weight is unnormalized.
pub fn update_hypothesis(
    h_pred: &Hypothesis,
    association: &DataAssociation,
    measurements: &[DVector<f64>],
    models: &ScenarioModels,
) -> Result<Hypothesis> {
    let n = h_pred.tracks.len();
    if association.target_count() != n || association.measurement_count() != measurements.len() {
        return Err(Error::dim("association does not match the hypothesis or the measurement set"));
    }
    let m = measurements.len();
    let k = association.clutter_count();
    let mut log_weight = h_pred.log_weight + ln_association_factor(n, m, k, models)?;
    let mut tracks = Vec::with_capacity(n);
    for (track, a) in h_pred.tracks.iter().zip(association.assignments()) {
        let (density, label) = match a {
            Some(j) => {
                let (post, ll) = track.density.update(&measurements[*j], models)?;
                log_weight += ll;
                (post, track.label.extended(MeasIndex::new(*j)))
            }
            None => (track.density.clone(), track.label.extended(MeasIndex::NULL)),
        };
        tracks.push(Track { label, density });
    }
    let mut out = Hypothesis { tracks, log_weight };
    out.canonicalize();
    Ok(out)
}

/// Reid's HOMHT child weight (log domain, unnormalized):
/// `(1-p_D)^(n-(m-k)) p_D^(m-k) Π l_i (λ_B/p_D)^b λ_C^k ω_parent`.
///
/// `n` counts existing and newborn targets, and every newborn target is
/// detected. With `detection_factors` the `p_D` of each birth is kept.
#[allow(clippy::too_many_arguments)]
pub fn homht_child_weight(
    parent_log_weight: f64,
    detected_track_log_likelihoods: &[f64],
    n: usize,
    m: usize,
    k: usize,
    n_births: usize,
    models: &ScenarioModels,
    detection_factors: bool,
) -> Result<f64> {
    if k > m || m - k > n || n_births > m - k {
        return Err(Error::dim(format!("inconsistent HOMHT counts n={n} m={m} k={k} births={n_births}")));
    }
    let p_d = models.measurement.p_d();
    let detected = m - k;
    let mut lw = parent_log_weight
        + xlogy(n - detected, 1.0 - p_d)
        + xlogy(detected, p_d)
        + detected_track_log_likelihoods.iter().sum::<f64>()
        + xlogy(n_births, models.birth.lambda_b())
        + xlogy(k, models.clutter.lambda_c());
    if !detection_factors {
        lw -= xlogy(n_births, p_d);
    }
    Ok(lw)
}

/// Inputs of the closed-form FISST weight for full-state measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedFormTerms {
    pub parent_log_weight: f64,
    /// `ln ∫ p(z|x) p⁻(x) dx` for each detected pre-existing track.
    pub existing_log_likelihoods: Vec<f64>,
    /// Targets after birth.
    pub n: usize,
    /// Targets before birth.
    pub r: usize,
    pub m: usize,
    pub k: usize,
    /// One flag per detected newborn target: whether its measurement's
    /// likelihood support lies inside the target's birth pixel. `s` is the
    /// length.
    pub birth_support: Vec<bool>,
}

/// `(1-p_D)^(n-(m-k)) p_D^(m-k) Π l_i λ_B^(n-r) V̄^((n-r)-s) λ_C^k ω_parent`,
/// or `-∞` if a detected newborn's measurement falls outside its pixel.
pub fn fisst_closed_form_weight(terms: &ClosedFormTerms, models: &ScenarioModels) -> Result<f64> {
    let ClosedFormTerms { parent_log_weight, existing_log_likelihoods, n, r, m, k, birth_support } = terms;
    let (n, r, m, k) = (*n, *r, *m, *k);
    let s = birth_support.len();
    if r > n || k > m || m - k > n || s > n - r || existing_log_likelihoods.len() > r {
        return Err(Error::dim(format!("inconsistent closed-form counts n={n} r={r} m={m} k={k} s={s}")));
    }
    if birth_support.iter().any(|inside| !inside) {
        return Ok(f64::NEG_INFINITY);
    }
    let p_d = models.measurement.p_d();
    let detected = m - k;
    Ok(parent_log_weight
        + xlogy(n - detected, 1.0 - p_d)
        + xlogy(detected, p_d)
        + existing_log_likelihoods.iter().sum::<f64>()
        + xlogy(n - r, models.birth.lambda_b())
        + ((n - r) - s) as f64 * models.birth.pixel_volume().ln()
        + xlogy(k, models.clutter.lambda_c()))
}

/// Counters for one scan of the recursion.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub scan: u32,
    /// Children generated before any merging or pruning.
    pub generated: usize,
    /// Distinct hypotheses after underflow removal and merging.
    pub merged: usize,
    /// Hypotheses retained after pruning.
    pub retained: usize,
    /// Posterior mass removed by pruning.
    pub dropped_mass: f64,
    /// Mass removed by the undetected-birth rule alone.
    pub dropped_undetected_birth_mass: f64,
    /// `ln Σ` of the unnormalized child weights.
    pub log_normalizer: f64,
}

/// Which weight recursion a step uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recursion {
    Fisst,
    Homht,
}

/// Children counted between explosion-guard checks.
const GUARD_CHUNK: usize = 4096;

/// Per-step caches shared by every parent: newborn densities per pixel and
/// their updates per measurement.
struct BirthCache {
    prior: FxHashMap<usize, TrackDensity>,
    updates: FxHashMap<(usize, usize), (TrackDensity, f64)>,
}

impl BirthCache {
    fn build(pixels: &[usize], zs: &[DVector<f64>], models: &ScenarioModels, config: &EngineConfig) -> Result<Self> {
        let mut prior = FxHashMap::default();
        let mut updates = FxHashMap::default();
        for &px in pixels {
            let density: TrackDensity = birth_pdf(px, &models.birth, config.birth_pdf)?.into();
            for (j, z) in zs.iter().enumerate() {
                if let Some(g) = &config.gate {
                    if !density.gate(g, z, models)? {
                        continue;
                    }
                }
                let (post, ll) = density.update(z, models)?;
                if ll > f64::NEG_INFINITY {
                    updates.insert((px, j), (post, ll));
                }
            }
            prior.insert(px, density);
        }
        Ok(Self { prior, updates })
    }
}

/// One child of a parent before it is materialized: its weight and its
/// tracks as sorted [`pack`]ed integers.
struct ChildSpec {
    log_weight: f64,
    tracks: Vec<u64>,
    undetected: bool,
}

struct ParentExpansion {
    predicted: Vec<TrackDensity>,
    /// `updates[i][j]`: posterior and log likelihood of track `i` given `z_j`,
    /// present only for gated pairs.
    updates: UpdateTable,
    children: Vec<ChildSpec>,
}

type UpdateTable = Vec<Vec<Option<(TrackDensity, f64)>>>;

/// A track inside a child: an interned parent track or a newborn in a
/// pixel, with its assignment this scan.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Packed {
    Existing(u32, Option<usize>),
    Born(usize, Option<usize>),
}

const BORN_BIT: u64 = 1 << 63;
const NO_MEASUREMENT: u64 = u32::MAX as u64;

fn pack_head(track: Packed) -> u64 {
    match track {
        Packed::Existing(id, _) => (id as u64) << 32,
        Packed::Born(pixel, _) => BORN_BIT | ((pixel as u64) << 32),
    }
}

fn pack_slot(a: Option<usize>) -> u64 {
    a.map_or(NO_MEASUREMENT, |j| j as u64)
}

fn pack(track: Packed) -> u64 {
    match track {
        Packed::Existing(_, a) | Packed::Born(_, a) => pack_head(track) | pack_slot(a),
    }
}

fn unpack(e: u64) -> Packed {
    let low = e & NO_MEASUREMENT;
    let a = (low != NO_MEASUREMENT).then_some(low as usize);
    if e & BORN_BIT != 0 {
        Packed::Born(((e & !BORN_BIT) >> 32) as usize, a)
    } else {
        Packed::Existing((e >> 32) as u32, a)
    }
}

struct StepContext<'a> {
    zs: &'a [DVector<f64>],
    models: &'a ScenarioModels,
    config: &'a EngineConfig,
    scan: u32,
    births: Vec<BirthHypothesis>,
    cache: BirthCache,
    labels: LabelTable,
    generated: AtomicUsize,
}

impl StepContext<'_> {
    fn bump(&self, count: usize) -> Result<()> {
        let total = self.generated.fetch_add(count, AtomicOrdering::Relaxed) + count;
        if total > self.config.max_children {
            return Err(Error::Explosion { scan: self.scan, count: total, cap: self.config.max_children });
        }
        Ok(())
    }

    fn predict_parent(&self, parent: &Hypothesis) -> Result<(Vec<TrackDensity>, UpdateTable)> {
        let predicted: Vec<TrackDensity> = parent.tracks.iter().map(|t| t.density.predict(self.models)).collect::<Result<_>>()?;
        let mut updates = Vec::with_capacity(predicted.len());
        for density in &predicted {
            let mut row = Vec::with_capacity(self.zs.len());
            for z in self.zs {
                let pass = match &self.config.gate {
                    Some(g) => density.gate(g, z, self.models)?,
                    None => true,
                };
                row.push(if pass { Some(density.update(z, self.models)?) } else { None });
            }
            updates.push(row);
        }
        Ok((predicted, updates))
    }

    fn expand_fisst(&self, parent: &Hypothesis, ids: &[u32]) -> Result<ParentExpansion> {
        let (predicted, updates) = self.predict_parent(parent)?;
        let r = predicted.len();
        let m = self.zs.len();
        let survivals = enumerate_survival(r, self.config.max_children).map_err(|e| with_scan(e, self.scan))?;
        let mut children = Vec::new();
        for surv in &survivals {
            let ln_s = ln_survival_prior(surv.survivors().len(), r, &self.models.survival)?;
            if ln_s == f64::NEG_INFINITY {
                continue;
            }
            let ns = surv.survivors().len();
            let carries_undetected = surv.survivors().iter().any(|&i| self.labels.undetected[ids[i] as usize]);
            for births in &self.births {
                let ln_b = self.config.ln_birth_prior(births.len(), self.models)?;
                if ln_b == f64::NEG_INFINITY {
                    continue;
                }
                let n = ns + births.len();
                let heads: Vec<u64> = surv
                    .survivors()
                    .iter()
                    .map(|&i| pack_head(Packed::Existing(ids[i], None)))
                    .chain(births.pixels().iter().map(|&px| pack_head(Packed::Born(px, None))))
                    .collect();
                // ln p(z_j | target t), `None` outside the gate
                let pair_ll: Vec<Option<f64>> = (0..n)
                    .flat_map(|t| (0..m).map(move |j| (t, j)))
                    .map(|(t, j)| {
                        if t < ns {
                            updates[surv.survivors()[t]][j].as_ref().map(|u| u.1)
                        } else {
                            self.cache.updates.get(&(births.pixels()[t - ns], j)).map(|u| u.1)
                        }
                    })
                    .collect();
                let gate = |t: usize, j: usize| pair_ll[t * m + j].is_some();
                let base = parent.log_weight + ln_s + ln_b;
                let factors = (0..=m)
                    .map(|k| if m - k > n { Ok(f64::NEG_INFINITY) } else { ln_association_factor(n, m, k, self.models) })
                    .collect::<Result<Vec<_>>>()?;
                let mut pending = 0;
                let mut guard = Ok(());
                for_each_association(n, m, Some(&gate), |assigned| {
                    pending += 1;
                    if pending == GUARD_CHUNK {
                        guard = self.bump(pending);
                        pending = 0;
                        if guard.is_err() {
                            return false;
                        }
                    }
                    let mut lw = base;
                    let mut detected = 0;
                    for (t, j) in assigned.iter().enumerate() {
                        if let Some(j) = j {
                            lw += pair_ll[t * m + j].expect("gated pair has a cached update");
                            detected += 1;
                        }
                    }
                    lw += factors[m - detected];
                    if lw > f64::NEG_INFINITY {
                        let mut tracks: Vec<u64> = heads.iter().zip(assigned).map(|(h, a)| h | pack_slot(*a)).collect();
                        tracks.sort_unstable();
                        let undetected = carries_undetected || assigned[ns..].iter().any(Option::is_none);
                        children.push(ChildSpec { log_weight: lw, tracks, undetected });
                    }
                    true
                });
                guard?;
                self.bump(pending)?;
            }
        }
        Ok(ParentExpansion { predicted, updates, children })
    }

    fn expand_homht(&self, parent: &Hypothesis, ids: &[u32]) -> Result<ParentExpansion> {
        let (predicted, updates) = self.predict_parent(parent)?;
        let r = predicted.len();
        let m = self.zs.len();
        let max_births = self.config.birth_policy.max_births();
        let pixel_of: Vec<Option<usize>> = self.zs.iter().map(|z| self.models.birth.grid().pixel_of(z.as_slice())).collect();
        let survivals = enumerate_survival(r, self.config.max_children).map_err(|e| with_scan(e, self.scan))?;
        let mut children = Vec::new();
        for surv in &survivals {
            let ln_s = ln_survival_prior(surv.survivors().len(), r, &self.models.survival)?;
            if ln_s == f64::NEG_INFINITY {
                continue;
            }
            let ns = surv.survivors().len();
            let carries_undetected = surv.survivors().iter().any(|&i| self.labels.undetected[ids[i] as usize]);
            let gate = |t: usize, j: usize| updates[surv.survivors()[t]][j].is_some();
            for a in enumerate_associations(ns, m, Some(&gate)) {
                let lls: Vec<f64> = a
                    .assignments()
                    .iter()
                    .enumerate()
                    .filter_map(|(t, j)| j.map(|j| updates[surv.survivors()[t]][j].as_ref().expect("gated").1))
                    .collect();
                // every unassigned measurement inside the field of view may seed a track
                let seedable: Vec<usize> =
                    a.clutter().into_iter().filter(|j| pixel_of[*j].is_some_and(|px| self.cache.updates.contains_key(&(px, *j)))).collect();
                let seeds = crate::association::subsets_up_to(&seedable, max_births);
                self.bump(seeds.len())?;
                for seed in seeds {
                    let nb = seed.len();
                    let n = ns + nb;
                    let k = a.clutter_count() - nb;
                    let lw =
                        homht_child_weight(parent.log_weight + ln_s, &lls, n, m, k, nb, self.models, self.config.homht_detection_factors)?;
                    if lw == f64::NEG_INFINITY {
                        continue;
                    }
                    let mut tracks: Vec<u64> = surv
                        .survivors()
                        .iter()
                        .zip(a.assignments())
                        .map(|(&i, &a)| pack(Packed::Existing(ids[i], a)))
                        .chain(seed.iter().map(|&j| pack(Packed::Born(pixel_of[j].expect("seedable"), Some(j)))))
                        .collect();
                    tracks.sort_unstable();
                    children.push(ChildSpec { log_weight: lw, tracks, undetected: carries_undetected });
                }
            }
        }
        Ok(ParentExpansion { predicted, updates, children })
    }

    fn materialize(&self, parent: &Hypothesis, ids: &[u32], exp: &ParentExpansion, packed: &[u64], log_weight: f64) -> Hypothesis {
        let mut tracks: Vec<Track> = packed
            .iter()
            .map(|&e| match unpack(e) {
                Packed::Existing(id, a) => {
                    let i = ids.iter().position(|&x| x == id).expect("track id belongs to the parent");
                    let density = match a {
                        Some(j) => exp.updates[i][j].as_ref().expect("gated").0.clone(),
                        None => exp.predicted[i].clone(),
                    };
                    Track { label: parent.tracks[i].label.extended(MeasIndex::from_option(a)), density }
                }
                Packed::Born(pixel, a) => {
                    let density = match a {
                        Some(j) => self.cache.updates[&(pixel, j)].0.clone(),
                        None => self.cache.prior[&pixel].clone(),
                    };
                    Track { label: TrackLabel::birth(self.scan, pixel).extended(MeasIndex::from_option(a)), density }
                }
            })
            .collect();
        tracks.sort_by(|a, b| a.label.cmp(&b.label));
        Hypothesis { tracks, log_weight }
    }
}

fn with_scan(e: Error, scan: u32) -> Error {
    match e {
        Error::Explosion { count, cap, .. } => Error::Explosion { scan, count, cap },
        other => other,
    }
}

/// One scan of the FISST recursion. See [`step_traced`].
pub fn fisst_step(
    forest: &HypothesisForest,
    measurements: &[DVector<f64>],
    models: &ScenarioModels,
    config: &EngineConfig,
    pruning: &PruningPolicy,
) -> Result<HypothesisForest> {
    step_traced(forest, measurements, models, config, pruning, Recursion::Fisst).map(|(f, _)| f)
}

/// One scan of Reid's HOMHT recursion. See [`step_traced`].
pub fn homht_step(
    forest: &HypothesisForest,
    measurements: &[DVector<f64>],
    models: &ScenarioModels,
    config: &EngineConfig,
    pruning: &PruningPolicy,
) -> Result<HypothesisForest> {
    step_traced(forest, measurements, models, config, pruning, Recursion::Homht).map(|(f, _)| f)
}

/// Expands every parent, drops underflowed children, normalizes, merges
/// duplicates and prunes. Parents are expanded in parallel; the reduction
/// runs sequentially in parent order, so the result does not depend on the
/// thread count.
pub fn step_traced(
    forest: &HypothesisForest,
    measurements: &[DVector<f64>],
    models: &ScenarioModels,
    config: &EngineConfig,
    pruning: &PruningPolicy,
    recursion: Recursion,
) -> Result<(HypothesisForest, StepStats)> {
    let scan = forest.scan_index() + 1;
    let births = match recursion {
        Recursion::Fisst => enumerate_birth_hypotheses(&models.birth, measurements, config.birth_policy, config.max_children)
            .map_err(|e| with_scan(e, scan))?,
        Recursion::Homht => vec![BirthHypothesis::none()],
    };
    let cache_pixels: Vec<usize> = match recursion {
        Recursion::Fisst => {
            let mut px: Vec<usize> = births.iter().flat_map(|b| b.pixels().iter().copied()).collect();
            px.sort_unstable();
            px.dedup();
            px
        }
        Recursion::Homht => {
            let mut px: Vec<usize> = measurements.iter().filter_map(|z| models.birth.grid().pixel_of(z.as_slice())).collect();
            px.sort_unstable();
            px.dedup();
            px
        }
    };
    let parents: Vec<Hypothesis> = forest
        .hypotheses()
        .iter()
        .map(|h| {
            let mut h = h.clone();
            h.canonicalize();
            h
        })
        .collect();
    let ctx = StepContext {
        zs: measurements,
        models,
        config,
        scan,
        births,
        cache: BirthCache::build(&cache_pixels, measurements, models, config)?,
        labels: LabelTable::new(&parents),
        generated: AtomicUsize::new(0),
    };
    let mut expansions: Vec<ParentExpansion> = parents
        .par_iter()
        .zip(&ctx.labels.ids)
        .map(|(p, ids)| match recursion {
            Recursion::Fisst => ctx.expand_fisst(p, ids),
            Recursion::Homht => ctx.expand_homht(p, ids),
        })
        .collect::<Result<_>>()?;
    let generated = ctx.generated.load(AtomicOrdering::Relaxed);

    let best = expansions.iter().flat_map(|e| e.children.iter().map(|c| c.log_weight)).fold(f64::NEG_INFINITY, f64::max);
    if best == f64::NEG_INFINITY {
        return Err(Error::model(format!("scan {scan}: every hypothesis has zero weight")));
    }
    let floor = best - UNDERFLOW_LOG_GAP;

    let lws: Vec<f64> = expansions.iter().flat_map(|e| e.children.iter().map(|c| c.log_weight)).filter(|lw| *lw >= floor).collect();
    let log_normalizer = log_sum_exp(&lws);

    // Merge on packed keys and only build the hypotheses pruning can keep.
    let mut merged: Vec<MergedChild> = Vec::with_capacity(lws.len());
    let mut index: FxHashMap<Vec<u64>, usize> = FxHashMap::with_capacity_and_hasher(lws.len(), Default::default());
    for (pi, exp) in expansions.iter_mut().enumerate() {
        for child in exp.children.drain(..).filter(|c| c.log_weight >= floor) {
            let lw = child.log_weight - log_normalizer;
            match index.entry(child.tracks) {
                Entry::Occupied(e) => {
                    let m = &mut merged[*e.get()];
                    m.log_weight = log_add_exp(m.log_weight, lw);
                }
                Entry::Vacant(e) => {
                    e.insert(merged.len());
                    merged.push(MergedChild { log_weight: lw, parent: pi, tracks: Vec::new(), undetected: child.undetected });
                }
            }
        }
    }
    for (tracks, i) in index {
        merged[i].tracks = tracks;
    }
    let total = log_sum_exp(&merged.iter().map(|m| m.log_weight).collect::<Vec<_>>());
    for m in &mut merged {
        m.log_weight -= total;
    }
    let merged_count = merged.len();
    let (candidates, dropped_undetected_birth_mass) = pruning_candidates(&merged, pruning);

    let mut kept: Vec<Hypothesis> = candidates
        .iter()
        .map(|&i| {
            let m = &merged[i];
            ctx.materialize(&parents[m.parent], &ctx.labels.ids[m.parent], &expansions[m.parent], &m.tracks, m.log_weight)
        })
        .collect();
    kept.sort_by(compare_hypotheses);
    let (kept, _) = apply_rules(kept, pruning);
    let mut dropped_mass = 0.0;
    let mut next = HypothesisForest::from_sorted_unchecked(kept, scan);
    if next.len() < merged_count {
        dropped_mass = (1.0 - next.total_weight()).max(0.0);
        next.normalize();
        next.sort();
    }
    let stats = StepStats {
        scan,
        generated,
        merged: merged_count,
        retained: next.len(),
        dropped_mass,
        dropped_undetected_birth_mass,
        log_normalizer,
    };
    Ok((next, stats))
}

/// Parent track labels interned to integers.
struct LabelTable {
    ids: Vec<Vec<u32>>,
    undetected: Vec<bool>,
}

struct MergedChild {
    log_weight: f64,
    parent: usize,
    tracks: Vec<u64>,
    undetected: bool,
}

impl LabelTable {
    fn new(parents: &[Hypothesis]) -> Self {
        let mut table: HashMap<&TrackLabel, u32> = HashMap::new();
        let mut undetected = Vec::new();
        let ids = parents
            .iter()
            .map(|p| {
                p.tracks
                    .iter()
                    .map(|t| {
                        *table.entry(&t.label).or_insert_with(|| {
                            undetected.push(is_undetected_birth(&t.label));
                            (undetected.len() - 1) as u32
                        })
                    })
                    .collect()
            })
            .collect();
        Self { ids, undetected }
    }
}

/// Indices of every merged child that survives the pruning rules under some
/// tie order, and the mass the undetected-birth rule removes. Materializing
/// only these and pruning them again gives the same survivors as pruning the
/// full set.
fn pruning_candidates(merged: &[MergedChild], policy: &PruningPolicy) -> (Vec<usize>, f64) {
    let lw = |i: usize| merged[i].log_weight;
    let tied_with_best = |set: &[usize]| -> Vec<usize> {
        let top = set.iter().map(|&i| lw(i)).fold(f64::NEG_INFINITY, f64::max);
        set.iter().copied().filter(|&i| lw(i) == top).collect()
    };
    let mut order: Vec<usize> = (0..merged.len()).collect();
    let mut dropped_undetected = 0.0;
    if policy.drop_undetected_births {
        let (dropped, kept): (Vec<usize>, Vec<usize>) = order.iter().partition(|&&i| merged[i].undetected);
        let mass: f64 = dropped.iter().map(|&i| lw(i).exp()).sum();
        if kept.is_empty() {
            order = tied_with_best(&order);
            dropped_undetected = mass - lw(order[0]).exp();
        } else {
            dropped_undetected = mass;
            order = kept;
        }
    }
    if policy.min_weight > 0.0 {
        let heavy: Vec<usize> = order.iter().copied().filter(|&i| lw(i).exp() >= policy.min_weight).collect();
        order = if heavy.is_empty() { tied_with_best(&order) } else { heavy };
    }
    if order.len() > policy.max_hypotheses {
        let k = policy.max_hypotheses - 1;
        order.select_nth_unstable_by(k, |&a, &b| lw(b).total_cmp(&lw(a)));
        let cut = lw(order[k]);
        order.retain(|&i| lw(i) >= cut);
    }
    (order, dropped_undetected.max(0.0))
}
