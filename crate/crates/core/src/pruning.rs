//! Hypothesis-set control: undetected-birth removal, a weight floor and a
//! top-K cap, applied in that order.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::belief::TrackLabel;
use crate::error::{Error, Result};
use crate::hypothesis::{Hypothesis, HypothesisForest};
use crate::models::ScenarioModels;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruningPolicy {
    pub max_hypotheses: usize,
    pub min_weight: f64,
    pub drop_undetected_births: bool,
}

impl PruningPolicy {
    pub fn new(max_hypotheses: usize, min_weight: f64, drop_undetected_births: bool) -> Result<Self> {
        if max_hypotheses == 0 {
            return Err(Error::Config("max_hypotheses must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&min_weight) {
            return Err(Error::Config(format!("min_weight must lie in [0, 1), got {min_weight}")));
        }
        Ok(Self { max_hypotheses, min_weight, drop_undetected_births })
    }

    /// Keeps everything.
    pub fn none() -> Self {
        Self { max_hypotheses: usize::MAX, min_weight: 0.0, drop_undetected_births: false }
    }
}

impl Default for PruningPolicy {
    fn default() -> Self {
        Self { max_hypotheses: 100, min_weight: 1e-6, drop_undetected_births: false }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PruneReport {
    /// Total normalized weight removed.
    pub dropped_mass: f64,
    /// Weight removed by the undetected-birth rule.
    pub dropped_undetected_birth_mass: f64,
    pub removed: usize,
}

/// A birth track whose creating scan assigned it no measurement.
pub fn is_undetected_birth(label: &TrackLabel) -> bool {
    label.is_birth() && label.first_assignment().is_some_and(|a| a.is_null())
}

pub fn has_undetected_birth(h: &Hypothesis) -> bool {
    h.tracks.iter().any(|t| is_undetected_birth(&t.label))
}

pub fn prune(forest: &HypothesisForest, policy: &PruningPolicy) -> Result<HypothesisForest> {
    prune_with_report(forest, policy).map(|(f, _)| f)
}

/// The forest must be normalized. Survivors come back sorted (weight
/// descending, label order) and renormalized. The best remaining hypothesis is kept if a rule would
/// remove everything.
pub fn prune_with_report(forest: &HypothesisForest, policy: &PruningPolicy) -> Result<(HypothesisForest, PruneReport)> {
    let mut sorted = forest.clone();
    sorted.sort();
    let scan = sorted.scan_index();
    let (keep, dropped_undetected_birth_mass) = apply_rules(sorted.into_hypotheses(), policy);
    let mut report = PruneReport { dropped_undetected_birth_mass, ..PruneReport::default() };
    let removed = forest.len() - keep.len();
    if removed > 0 {
        report.removed = removed;
        report.dropped_mass = (1.0 - keep.iter().map(Hypothesis::weight).sum::<f64>()).max(0.0);
        let mut out = HypothesisForest::from_sorted_unchecked(keep, scan);
        out.normalize();
        out.sort();
        Ok((out, report))
    } else {
        Ok((HypothesisForest::from_sorted_unchecked(keep, scan), report))
    }
}

/// The three rules on a sorted, non-empty list. Returns the survivors and
/// the weight removed by the undetected-birth rule.
pub(crate) fn apply_rules(mut keep: Vec<Hypothesis>, policy: &PruningPolicy) -> (Vec<Hypothesis>, f64) {
    let mut dropped_undetected = 0.0;
    if policy.drop_undetected_births {
        let (dropped, kept): (Vec<_>, Vec<_>) = keep.iter().cloned().partition(has_undetected_birth);
        if kept.is_empty() {
            keep.truncate(1);
            dropped_undetected = dropped[1..].iter().map(Hypothesis::weight).sum();
        } else {
            dropped_undetected = dropped.iter().map(Hypothesis::weight).sum();
            keep = kept;
        }
    }
    if policy.min_weight > 0.0 {
        let first = keep[0].clone();
        keep.retain(|h| h.weight() >= policy.min_weight);
        if keep.is_empty() {
            keep.push(first);
        }
    }
    keep.truncate(policy.max_hypotheses);
    (keep, dropped_undetected)
}

/// `(1-p_D)·α`: weight of a hypothesis with one extra undetected birth
/// relative to the same hypothesis without it.
pub fn undetected_birth_ratio(models: &ScenarioModels) -> f64 {
    (1.0 - models.measurement.p_d()) * models.birth.alpha()
}

/// Weight the policy would remove from a normalized forest.
pub fn pruning_error_bound(forest_pre_prune: &HypothesisForest, policy: &PruningPolicy) -> Result<f64> {
    prune_with_report(forest_pre_prune, policy).map(|(_, r)| r.dropped_mass)
}

/// For each hypothesis with undetected births, the index of the hypothesis
/// equal to it with those births removed, if present in the forest.
pub fn undetected_birth_partners(forest: &HypothesisForest) -> Vec<(usize, Option<usize>)> {
    let index: HashMap<Vec<TrackLabel>, usize> = forest.hypotheses().iter().enumerate().map(|(i, h)| (h.label_key(), i)).collect();
    forest
        .hypotheses()
        .iter()
        .enumerate()
        .filter(|(_, h)| has_undetected_birth(h))
        .map(|(i, h)| {
            let key: Vec<TrackLabel> = h.label_key().into_iter().filter(|l| !is_undetected_birth(l)).collect();
            (i, index.get(&key).copied())
        })
        .collect()
}
