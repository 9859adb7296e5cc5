//! The full recursion carried out on grids, hypothesis by hypothesis, and its
//! comparison against the hypothesis engine.
//!
//! Survival subsets, birth subsets and their priors are enumerated here
//! independently of the engine. Track labels are used only as keys so that
//! the two hypothesis sets can be matched.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};

use super::grid::{Axis, GridBelief};
use super::mtpdf::{oracle_update, SymmetricMTpdf, WeightedMTpdf};
use crate::association::BirthPolicy;
use crate::belief::{GaussianBelief, MeasIndex, TrackLabel};
use crate::error::{Error, Result};
use crate::hypothesis::{step_traced, BirthPriorForm, EngineConfig, HypothesisForest, Recursion};
use crate::logmath::{log_add_exp, log_sum_exp};
use crate::models::{BirthPdfMode, ScenarioModels};
use crate::pruning::PruningPolicy;

/// Hypotheses below this log weight may be missing from the engine, which
/// drops children far below the best one.
const NEGLIGIBLE_LN_WEIGHT: f64 = -600.0;

#[derive(Debug, Clone)]
pub struct OracleScenario {
    pub models: ScenarioModels,
    pub initial: Vec<GaussianBelief>,
    pub scans: Vec<Vec<DVector<f64>>>,
    pub birth_pdf: BirthPdfMode,
    pub birth_prior: BirthPriorForm,
    pub max_births: usize,
    /// Grid for every propagated track.
    pub axes: Vec<Axis>,
    /// Cells per axis inside one pixel for the uniform birth density.
    pub birth_cells_per_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleHypothesis {
    /// Sorted.
    pub labels: Vec<TrackLabel>,
    pub ln_weight: f64,
}

fn ln_pow(base: f64, e: usize) -> f64 {
    if e == 0 {
        0.0
    } else {
        e as f64 * base.ln()
    }
}

fn ln_birth_prior(p: usize, scn: &OracleScenario) -> f64 {
    let birth = &scn.models.birth;
    let m = birth.pixel_count();
    match scn.birth_prior {
        BirthPriorForm::Binomial => ln_pow(birth.alpha(), p) + ln_pow(1.0 - birth.alpha(), m - p),
        BirthPriorForm::Poisson => {
            let rate = birth.alpha() / birth.pixel_volume();
            -rate * birth.volume() + p as f64 * (rate * birth.pixel_volume()).ln()
        }
    }
}

fn birth_component(pixel: usize, scn: &OracleScenario) -> Result<GridBelief> {
    let bounds = scn.models.birth.grid().pixel_bounds(pixel)?;
    match scn.birth_pdf {
        BirthPdfMode::Uniform => GridBelief::uniform_box(&bounds, scn.birth_cells_per_dim),
        BirthPdfMode::Gaussian => {
            let d = bounds.dims();
            let mean = DVector::from_iterator(d, (0..d).map(|i| 0.5 * (bounds.lower[i] + bounds.upper[i])));
            let var = DVector::from_iterator(d, (0..d).map(|i| (bounds.upper[i] - bounds.lower[i]).powi(2) / 12.0));
            GridBelief::gaussian(scn.axes.clone(), &GaussianBelief::new(mean, DMatrix::from_diagonal(&var))?)
        }
    }
}

fn masks(n: usize, max_ones: usize) -> Vec<Vec<usize>> {
    (0u64..1 << n)
        .filter(|mask| mask.count_ones() as usize <= max_ones)
        .map(|mask| (0..n).filter(|i| mask >> i & 1 == 1).collect())
        .collect()
}

/// Normalized hypothesis weights after every scan, merged by label set.
pub fn oracle_run(scn: &OracleScenario) -> Result<Vec<Vec<OracleHypothesis>>> {
    if !scn.models.is_full_state_diagonal() && scn.birth_pdf == BirthPdfMode::Uniform {
        return Err(Error::model("uniform births on the grid need full-state measurements"));
    }
    let pixels = scn.models.birth.pixel_count();
    if pixels > 20 {
        return Err(Error::ResourceGuard(format!("{pixels} birth pixels is too many to enumerate")));
    }
    let mut store: HashMap<TrackLabel, GridBelief> = HashMap::new();
    let mut hyps: Vec<(Vec<TrackLabel>, f64)> = vec![((0..scn.initial.len()).map(TrackLabel::initial).collect(), 0.0)];
    for (k, b) in scn.initial.iter().enumerate() {
        store.insert(TrackLabel::initial(k), GridBelief::gaussian(scn.axes.clone(), b)?);
    }
    let beta = scn.models.survival.beta();
    let mut out = Vec::with_capacity(scn.scans.len());
    for (t, zs) in scn.scans.iter().enumerate() {
        let scan = t as u32 + 1;
        let births: Vec<GridBelief> = (0..pixels).map(|px| birth_component(px, scn)).collect::<Result<_>>()?;
        let birth_sets = masks(pixels, scn.max_births);
        let mut predicted: HashMap<TrackLabel, GridBelief> = HashMap::new();
        let mut parents = Vec::new();
        let mut parent_labels = Vec::new();
        for (labels, lw) in &hyps {
            let r = labels.len();
            for survivors in masks(r, r) {
                let ln_s = ln_pow(beta, survivors.len()) + ln_pow(1.0 - beta, r - survivors.len());
                if ln_s == f64::NEG_INFINITY {
                    continue;
                }
                for set in &birth_sets {
                    let ln_b = ln_birth_prior(set.len(), scn);
                    if ln_b == f64::NEG_INFINITY {
                        continue;
                    }
                    let mut comps = Vec::with_capacity(survivors.len() + set.len());
                    let mut tags = Vec::with_capacity(comps.capacity());
                    for &i in &survivors {
                        let label = &labels[i];
                        if !predicted.contains_key(label) {
                            let p = store[label].predict_onto(&scn.models.motion, scn.axes.clone())?;
                            predicted.insert(label.clone(), p);
                        }
                        comps.push(predicted[label].clone());
                        tags.push(label.clone());
                    }
                    for &px in set {
                        comps.push(births[px].clone());
                        tags.push(TrackLabel::birth(scan, px));
                    }
                    parents.push(WeightedMTpdf { ln_weight: lw + ln_s + ln_b, pdf: SymmetricMTpdf::new(comps)? });
                    parent_labels.push(tags);
                }
            }
        }
        let update = oracle_update(&parents, zs, &scn.models)?;
        let last = t + 1 == scn.scans.len();
        let mut next_store: HashMap<TrackLabel, GridBelief> = HashMap::new();
        let mut merged: BTreeMap<Vec<TrackLabel>, f64> = BTreeMap::new();
        for term in &update.terms {
            if term.ln_weight == f64::NEG_INFINITY {
                continue;
            }
            let tags = &parent_labels[term.parent];
            let mut key = Vec::with_capacity(tags.len());
            for (i, (tag, a)) in tags.iter().zip(&term.assignment).enumerate() {
                let label = tag.extended(MeasIndex::from_option(*a));
                if !last && !next_store.contains_key(&label) {
                    let comp = &parents[term.parent].pdf.components()[i];
                    let post = match a {
                        Some(j) => comp.update(&zs[*j], &scn.models.measurement)?.0,
                        None => comp.clone(),
                    };
                    next_store.insert(label.clone(), post);
                }
                key.push(label);
            }
            key.sort();
            let lw = term.ln_weight - update.ln_denominator;
            merged.entry(key).and_modify(|w| *w = log_add_exp(*w, lw)).or_insert(lw);
        }
        let total = log_sum_exp(&merged.values().copied().collect::<Vec<_>>());
        hyps = merged.into_iter().map(|(k, w)| (k, w - total)).collect();
        out.push(hyps.iter().map(|(labels, w)| OracleHypothesis { labels: labels.clone(), ln_weight: *w }).collect());
        store = next_store;
    }
    Ok(out)
}

/// Engine configuration matching the oracle: exhaustive, ungated, unpruned.
pub fn engine_config(scn: &OracleScenario) -> EngineConfig {
    EngineConfig {
        birth_prior: scn.birth_prior,
        birth_pdf: scn.birth_pdf,
        birth_policy: BirthPolicy::AllPixels { max_births: scn.max_births },
        gate: None,
        max_children: 50_000_000,
        homht_detection_factors: false,
    }
}

pub fn engine_run(scn: &OracleScenario) -> Result<Vec<HypothesisForest>> {
    let cfg = engine_config(scn);
    let mut forest = HypothesisForest::from_initial(scn.initial.clone());
    let mut out = Vec::with_capacity(scn.scans.len());
    for zs in &scn.scans {
        forest = step_traced(&forest, zs, &scn.models, &cfg, &PruningPolicy::none(), Recursion::Fisst)?.0;
        out.push(forest.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanComparison {
    pub scan: u32,
    pub hypotheses: usize,
    /// Largest `|w_engine - w_oracle| / w_oracle` over matched hypotheses.
    pub max_rel_error: f64,
    /// Hypotheses of non-negligible weight present on one side only.
    pub unmatched: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub scans: Vec<ScanComparison>,
}

impl Comparison {
    pub fn max_rel_error(&self) -> f64 {
        self.scans.iter().map(|s| s.max_rel_error).fold(0.0, f64::max)
    }

    pub fn unmatched(&self) -> usize {
        self.scans.iter().map(|s| s.unmatched).sum()
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.unmatched() == 0 && self.max_rel_error() <= tolerance
    }
}

/// Runs both and matches hypotheses by label set after every scan.
pub fn compare_with_engine(scn: &OracleScenario) -> Result<Comparison> {
    let oracle = oracle_run(scn)?;
    let engine = engine_run(scn)?;
    let scans = oracle
        .iter()
        .zip(&engine)
        .enumerate()
        .map(|(t, (o, e))| {
            let mut engine_w: HashMap<Vec<TrackLabel>, f64> = e.hypotheses().iter().map(|h| (h.label_key(), h.log_weight)).collect();
            let mut max_rel_error: f64 = 0.0;
            let mut unmatched = 0;
            for h in o {
                match engine_w.remove(&h.labels) {
                    Some(lw) => {
                        let rel = ((lw - h.ln_weight).exp() - 1.0).abs();
                        max_rel_error = max_rel_error.max(rel);
                    }
                    None if h.ln_weight < NEGLIGIBLE_LN_WEIGHT => {}
                    None => unmatched += 1,
                }
            }
            unmatched += engine_w.len();
            ScanComparison { scan: t as u32 + 1, hypotheses: o.len(), max_rel_error, unmatched }
        })
        .collect();
    Ok(Comparison { scans })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::*;

    fn scenario(mode: BirthPdfMode, initial: Vec<(f64, f64)>, scans: Vec<Vec<f64>>, max_births: usize) -> OracleScenario {
        let models = ScenarioModels::new(
            MotionModel::random_walk(1, 0.4).unwrap(),
            MeasurementModel::new(DMatrix::identity(1, 1), DMatrix::from_element(1, 1, 0.25), 0.85).unwrap(),
            ClutterModel::new(0.2, 3.0).unwrap(),
            BirthModel::full_state(PixelGrid::new(vec![0.0], vec![3.0], vec![3]).unwrap(), 0.08).unwrap(),
            SurvivalModel::new(0.9).unwrap(),
        )
        .unwrap();
        OracleScenario {
            models,
            initial: initial.into_iter().map(|(m, v)| GaussianBelief::scalar(m, v).unwrap()).collect(),
            scans: scans.into_iter().map(|s| s.into_iter().map(|z| DVector::from_element(1, z)).collect()).collect(),
            birth_pdf: mode,
            birth_prior: BirthPriorForm::Binomial,
            max_births,
            axes: vec![Axis::with_step(-12.0, 15.0, 0.05).unwrap()],
            birth_cells_per_dim: 4000,
        }
    }

    #[test]
    fn gaussian_births_two_scans() {
        let scn = scenario(BirthPdfMode::Gaussian, vec![(1.0, 0.4)], vec![vec![1.2, 2.4], vec![0.9]], 1);
        let cmp = compare_with_engine(&scn).unwrap();
        assert!(cmp.passes(1e-6), "{cmp:?}");
    }

    #[test]
    fn uniform_births_one_scan() {
        let scn = scenario(BirthPdfMode::Uniform, vec![(1.0, 0.4)], vec![vec![1.2, 2.4]], 2);
        let cmp = compare_with_engine(&scn).unwrap();
        assert!(cmp.passes(1e-4), "{cmp:?}");
    }

    #[test]
    fn oracle_weights_are_normalized() {
        let scn = scenario(BirthPdfMode::Gaussian, vec![(0.5, 0.3), (2.5, 0.3)], vec![vec![0.4, 2.2, 2.9]], 1);
        let run = oracle_run(&scn).unwrap();
        let total: f64 = run[0].iter().map(|h| h.ln_weight.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
