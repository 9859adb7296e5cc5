//! Enumeration of the discrete hypothesis alphabets: data associations,
//! birth hypotheses and survival hypotheses.
//!
//! All enumerations are deterministic. Data associations are listed in
//! lexicographic order over per-target choices, measurements ascending with
//! the null association φ last. Birth and survival hypotheses are listed by
//! size, then lexicographically.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::belief::GaussianBelief;
use crate::error::{Error, Result};
use crate::models::{BirthModel, MeasurementModel};

/// Per-target assignment to a measurement index or to φ (`None`).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DataAssociation {
    assignments: Vec<Option<usize>>,
    measurement_count: usize,
}

impl DataAssociation {
    pub fn new(assignments: Vec<Option<usize>>, measurement_count: usize) -> Result<Self> {
        let mut used = vec![false; measurement_count];
        for a in assignments.iter().flatten() {
            if *a >= measurement_count {
                return Err(Error::Range { what: "measurement index", value: *a, limit: measurement_count });
            }
            if std::mem::replace(&mut used[*a], true) {
                return Err(Error::dim(format!("measurement {a} assigned twice")));
            }
        }
        Ok(Self { assignments, measurement_count })
    }

    pub fn assignments(&self) -> &[Option<usize>] {
        &self.assignments
    }

    pub fn target_count(&self) -> usize {
        self.assignments.len()
    }

    pub fn measurement_count(&self) -> usize {
        self.measurement_count
    }

    /// Number of targets assigned a measurement, `m - k`.
    pub fn detected(&self) -> usize {
        self.assignments.iter().flatten().count()
    }

    /// Number of measurements assigned to clutter.
    pub fn clutter_count(&self) -> usize {
        self.measurement_count - self.detected()
    }

    /// Measurement indices left to clutter, ascending.
    pub fn clutter(&self) -> Vec<usize> {
        let mut used = vec![false; self.measurement_count];
        for a in self.assignments.iter().flatten() {
            used[*a] = true;
        }
        (0..self.measurement_count).filter(|j| !used[*j]).collect()
    }
}

/// Optional pairing predicate: `gate(target, measurement)`.
pub type Gate<'a> = &'a (dyn Fn(usize, usize) -> bool + Sync);

/// Every injective partial map from `n` targets to `m` measurements that
/// passes `gate`.
pub fn enumerate_associations(n: usize, m: usize, gate: Option<Gate<'_>>) -> Vec<DataAssociation> {
    let mut out = Vec::new();
    for_each_association(n, m, gate, |a| {
        out.push(DataAssociation { assignments: a.to_vec(), measurement_count: m });
        true
    });
    out
}

/// Visits the associations of [`enumerate_associations`] in the same order
/// without collecting them. Stops as soon as `visit` returns `false`; the
/// return value says whether the walk finished.
pub fn for_each_association(n: usize, m: usize, gate: Option<Gate<'_>>, mut visit: impl FnMut(&[Option<usize>]) -> bool) -> bool {
    fn recurse(
        target: usize,
        n: usize,
        gate: Option<Gate<'_>>,
        current: &mut Vec<Option<usize>>,
        used: &mut [bool],
        visit: &mut dyn FnMut(&[Option<usize>]) -> bool,
    ) -> bool {
        if target == n {
            return visit(current);
        }
        for j in 0..used.len() {
            if used[j] || gate.is_some_and(|g| !g(target, j)) {
                continue;
            }
            used[j] = true;
            current.push(Some(j));
            let go_on = recurse(target + 1, n, gate, current, used, visit);
            current.pop();
            used[j] = false;
            if !go_on {
                return false;
            }
        }
        current.push(None);
        let go_on = recurse(target + 1, n, gate, current, used, visit);
        current.pop();
        go_on
    }
    recurse(0, n, gate, &mut Vec::with_capacity(n), &mut vec![false; m], &mut visit)
}

/// Closed form `Σ_d C(n, d) · m! / (m - d)!` of the ungated association count.
pub fn count_associations(n: usize, m: usize, bound: u64) -> Result<u64> {
    let overflow = || Error::CountOverflow { what: "data associations", bound };
    let mut total: u64 = 0;
    let mut binom: u64 = 1; // C(n, d)
    let mut falling: u64 = 1; // m! / (m - d)!
    for d in 0..=n.min(m) {
        if d > 0 {
            binom = binom.checked_mul((n - d + 1) as u64).ok_or_else(overflow)? / d as u64;
            falling = falling.checked_mul((m - d + 1) as u64).ok_or_else(overflow)?;
        }
        total = binom.checked_mul(falling).and_then(|t| total.checked_add(t)).ok_or_else(overflow)?;
        if total > bound {
            return Err(overflow());
        }
    }
    Ok(total)
}

/// A set of distinct pixels that each spawn one target, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BirthHypothesis {
    pixels: Vec<usize>,
}

impl BirthHypothesis {
    pub fn none() -> Self {
        Self { pixels: Vec::new() }
    }

    pub fn new(mut pixels: Vec<usize>, pixel_count: usize) -> Result<Self> {
        pixels.sort_unstable();
        if pixels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::dim("birth pixels must be distinct"));
        }
        if let Some(&p) = pixels.last() {
            if p >= pixel_count {
                return Err(Error::Range { what: "pixel index", value: p, limit: pixel_count.saturating_sub(1) });
            }
        }
        Ok(Self { pixels })
    }

    pub fn pixels(&self) -> &[usize] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// How birth hypotheses are generated each scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BirthPolicy {
    /// Every subset of at most `max_births` pixels.
    AllPixels { max_births: usize },
    /// Subsets of at most `max_births` pixels that contain a measurement.
    MeasurementGated { max_births: usize },
}

impl BirthPolicy {
    pub fn max_births(&self) -> usize {
        match self {
            BirthPolicy::AllPixels { max_births } | BirthPolicy::MeasurementGated { max_births } => *max_births,
        }
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    (0..k).fold(1u128, |acc, i| acc.saturating_mul((n - i) as u128) / (i + 1) as u128)
}

pub(crate) fn subsets_up_to(candidates: &[usize], max_size: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for size in 1..=max_size.min(candidates.len()) {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            out.push(idx.iter().map(|&i| candidates[i]).collect());
            // next combination in lexicographic order
            let mut i = size;
            while i > 0 && idx[i - 1] == candidates.len() - size + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            idx[i - 1] += 1;
            for j in i..size {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    out
}

pub fn enumerate_birth_hypotheses(
    birth: &BirthModel,
    measurements: &[DVector<f64>],
    policy: BirthPolicy,
    cap: usize,
) -> Result<Vec<BirthHypothesis>> {
    let candidates: Vec<usize> = match policy {
        BirthPolicy::AllPixels { .. } => (0..birth.pixel_count()).collect(),
        BirthPolicy::MeasurementGated { .. } => {
            let mut px: Vec<usize> = measurements.iter().filter_map(|z| birth.grid().pixel_of(z.as_slice())).collect();
            px.sort_unstable();
            px.dedup();
            px
        }
    };
    let max = policy.max_births().min(candidates.len());
    let count: u128 = (0..=max).map(|p| binomial(candidates.len(), p)).sum();
    if count > cap as u128 {
        return Err(Error::Explosion { scan: 0, count: count.min(usize::MAX as u128) as usize, cap });
    }
    Ok(subsets_up_to(&candidates, max).into_iter().map(|pixels| BirthHypothesis { pixels }).collect())
}

/// The subset of the `r` current track slots that survive the transition.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SurvivalHypothesis {
    survivors: Vec<usize>,
    track_count: usize,
}

impl SurvivalHypothesis {
    pub fn all(r: usize) -> Self {
        Self { survivors: (0..r).collect(), track_count: r }
    }

    pub fn new(mut survivors: Vec<usize>, track_count: usize) -> Result<Self> {
        survivors.sort_unstable();
        survivors.dedup();
        if survivors.last().is_some_and(|&s| s >= track_count) {
            return Err(Error::dim("survivor index outside the hypothesis"));
        }
        Ok(Self { survivors, track_count })
    }

    pub fn survivors(&self) -> &[usize] {
        &self.survivors
    }

    pub fn track_count(&self) -> usize {
        self.track_count
    }
}

/// All `2^r` survival subsets, largest first.
pub fn enumerate_survival(r: usize, cap: usize) -> Result<Vec<SurvivalHypothesis>> {
    if r >= usize::BITS as usize - 1 || (1usize << r) > cap {
        return Err(Error::Explosion { scan: 0, count: if r < 63 { 1usize << r } else { usize::MAX }, cap });
    }
    let all: Vec<usize> = (0..r).collect();
    let mut out = Vec::with_capacity(1 << r);
    for size in (0..=r).rev() {
        for subset in subsets_up_to(&all, size).into_iter().filter(|s| s.len() == size) {
            out.push(SurvivalHypothesis { survivors: subset, track_count: r });
        }
    }
    Ok(out)
}

/// Ellipsoidal validation gate on the squared innovation Mahalanobis distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidalGate {
    pub threshold: f64,
}

impl EllipsoidalGate {
    /// Gate at the `probability` quantile of χ² with `dim` degrees of freedom.
    pub fn from_probability(probability: f64, dim: usize) -> Result<Self> {
        if !(probability > 0.0 && probability < 1.0) {
            return Err(Error::model(format!("gate probability must lie in (0, 1), got {probability}")));
        }
        let chi2 = ChiSquared::new(dim as f64).map_err(|e| Error::model(e.to_string()))?;
        Ok(Self { threshold: chi2.inverse_cdf(probability) })
    }

    pub fn passes(&self, belief: &GaussianBelief, z: &DVector<f64>, meas: &MeasurementModel) -> Result<bool> {
        Ok(belief.mahalanobis_sq(z, meas)? <= self.threshold)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::PixelGrid;

    /// Independent oracle: every map targets → {0..m-1, φ}, filtered to the
    /// injective ones.
    fn brute_force_count(n: usize, m: usize) -> usize {
        let base = m + 1;
        let total = base.pow(n as u32);
        (0..total)
            .filter(|code| {
                let mut c = *code;
                let mut seen = vec![false; m];
                for _ in 0..n {
                    let d = c % base;
                    c /= base;
                    if d < m {
                        if seen[d] {
                            return false;
                        }
                        seen[d] = true;
                    }
                }
                true
            })
            .count()
    }

    #[test]
    fn association_examples() {
        let a = enumerate_associations(1, 1, None);
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].assignments(), &[Some(0)]);
        assert_eq!(a[1].assignments(), &[None]);
        assert_eq!(enumerate_associations(2, 2, None).len(), 7);
        let a = enumerate_associations(0, 3, None);
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].clutter_count(), 3);
        assert_eq!(a[0].clutter(), vec![0, 1, 2]);
    }

    #[test]
    fn count_examples() {
        assert_eq!(count_associations(2, 2, u64::MAX).unwrap(), 7);
        assert_eq!(count_associations(3, 2, u64::MAX).unwrap(), 13);
        assert_eq!(count_associations(0, 0, u64::MAX).unwrap(), 1);
        assert!(matches!(count_associations(20, 20, 1_000_000), Err(Error::CountOverflow { .. })));
    }

    #[test]
    fn counts_match_enumeration_and_brute_force() {
        for n in 0..=6 {
            for m in 0..=6 {
                let enumerated = enumerate_associations(n, m, None).len();
                assert_eq!(enumerated, brute_force_count(n, m), "n={n} m={m}");
                assert_eq!(count_associations(n, m, u64::MAX).unwrap() as usize, enumerated);
            }
        }
    }

    #[test]
    fn associations_are_injective_and_ordered() {
        let all = enumerate_associations(3, 3, None);
        for a in &all {
            assert!(DataAssociation::new(a.assignments().to_vec(), 3).is_ok());
            assert_eq!(a.detected() + a.clutter_count(), 3);
        }
        let key = |a: &DataAssociation| a.assignments().iter().map(|x| x.unwrap_or(usize::MAX)).collect::<Vec<_>>();
        for w in all.windows(2) {
            assert!(key(&w[0]) < key(&w[1]));
        }
    }

    #[test]
    fn gated_is_subset_of_ungated() {
        let gate = |t: usize, j: usize| (t + j).is_multiple_of(2);
        let gated = enumerate_associations(3, 4, Some(&gate));
        let all = enumerate_associations(3, 4, None);
        assert!(gated.len() < all.len());
        assert!(gated.iter().all(|a| all.contains(a)));
        let open = |_: usize, _: usize| true;
        assert_eq!(enumerate_associations(3, 4, Some(&open)), all);
    }

    #[test]
    fn invalid_association_rejected() {
        assert!(DataAssociation::new(vec![Some(0), Some(0)], 2).is_err());
        assert!(DataAssociation::new(vec![Some(3)], 2).is_err());
    }

    fn birth_1d(m: usize) -> BirthModel {
        BirthModel::full_state(PixelGrid::new(vec![0.0], vec![m as f64], vec![m]).unwrap(), 0.1).unwrap()
    }

    fn pixels(h: &[BirthHypothesis]) -> Vec<Vec<usize>> {
        h.iter().map(|b| b.pixels().to_vec()).collect()
    }

    #[test]
    fn birth_enumeration_examples() {
        let all = enumerate_birth_hypotheses(&birth_1d(3), &[], BirthPolicy::AllPixels { max_births: 1 }, 100).unwrap();
        assert_eq!(pixels(&all), vec![vec![], vec![0], vec![1], vec![2]]);

        let zs = vec![DVector::from_element(1, 1.5), DVector::from_element(1, 3.2), DVector::from_element(1, 1.1)];
        let gated = enumerate_birth_hypotheses(&birth_1d(4), &zs, BirthPolicy::MeasurementGated { max_births: 2 }, 100).unwrap();
        assert_eq!(pixels(&gated), vec![vec![], vec![1], vec![3], vec![1, 3]]);

        let two = enumerate_birth_hypotheses(&birth_1d(2), &[], BirthPolicy::AllPixels { max_births: 2 }, 100).unwrap();
        assert_eq!(pixels(&two), vec![vec![], vec![0], vec![1], vec![0, 1]]);

        assert!(matches!(
            enumerate_birth_hypotheses(&birth_1d(30), &[], BirthPolicy::AllPixels { max_births: 3 }, 100),
            Err(Error::Explosion { .. })
        ));
    }

    #[test]
    fn survival_examples() {
        let s0 = enumerate_survival(0, 16).unwrap();
        assert_eq!(s0.len(), 1);
        assert!(s0[0].survivors().is_empty());
        assert_eq!(enumerate_survival(2, 16).unwrap().len(), 4);
        let s3 = enumerate_survival(3, 16).unwrap();
        assert_eq!(s3.len(), 8);
        assert_eq!(s3[0].survivors(), &[0, 1, 2]);
        assert!(enumerate_survival(5, 16).is_err());
    }

    #[test]
    fn survival_priors_sum_to_one() {
        use crate::models::{survival_prior, SurvivalModel};
        let s = SurvivalModel::new(0.83).unwrap();
        for r in 0..=12 {
            let total: f64 =
                enumerate_survival(r, 1 << 12).unwrap().iter().map(|h| survival_prior(h.survivors().len(), r, &s).unwrap()).sum();
            assert!((total - 1.0).abs() < 1e-12, "r={r} total={total}");
        }
    }

    #[test]
    fn enumeration_is_stable() {
        assert_eq!(enumerate_associations(3, 3, None), enumerate_associations(3, 3, None));
        assert_eq!(enumerate_survival(4, 16).unwrap(), enumerate_survival(4, 16).unwrap());
    }

    #[test]
    fn gate_threshold_matches_chi_square() {
        // χ²(1) 0.999 quantile = 10.8276..., χ²(2) = -2 ln(0.001)
        let g1 = EllipsoidalGate::from_probability(0.999, 1).unwrap();
        assert!((g1.threshold - 10.827_566_170_662_733).abs() < 1e-6);
        let g2 = EllipsoidalGate::from_probability(0.999, 2).unwrap();
        assert!((g2.threshold + 2.0 * 0.001f64.ln()).abs() < 1e-6);
        assert!(EllipsoidalGate::from_probability(1.0, 2).is_err());
    }
}
