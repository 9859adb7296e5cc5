//! Symmetrized multi-target densities on product grids, and the set-integral
//! prediction and update evaluated by brute force.

use std::collections::BTreeMap;

use nalgebra::DVector;

use super::grid::{cell_points, ln_gauss, mat_vec, Axis, GridBelief};
use crate::error::{Error, Result};
use crate::logmath::log_sum_exp;
use crate::models::{MotionModel, ScenarioModels};

/// Largest cardinality the brute-force joint supports.
pub const MAX_CARDINALITY: usize = 3;
/// Largest n-fold product grid evaluated explicitly.
pub const MAX_JOINT_CELLS: usize = 1 << 21;

/// `f(x_1..x_n) = Σ_ν Π_i p^i(x_{ν_i})` over all permutations `ν`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMTpdf {
    components: Vec<GridBelief>,
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

/// Every injective map from `n` target slots into `m` measurements or "missed".
pub fn slot_associations(n: usize, m: usize) -> Vec<Vec<Option<usize>>> {
    fn rec(slot: usize, cur: &mut Vec<Option<usize>>, used: &mut [bool], out: &mut Vec<Vec<Option<usize>>>) {
        if slot == cur.len() {
            out.push(cur.clone());
            return;
        }
        cur[slot] = None;
        rec(slot + 1, cur, used, out);
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                cur[slot] = Some(j);
                rec(slot + 1, cur, used, out);
                used[j] = false;
            }
        }
        cur[slot] = None;
    }
    let mut out = Vec::new();
    rec(0, &mut vec![None; n], &mut vec![false; m], &mut out);
    out
}

fn ln_n_factorial(n: usize) -> f64 {
    (1..=n).map(|i| (i as f64).ln()).sum()
}

impl SymmetricMTpdf {
    pub fn new(components: Vec<GridBelief>) -> Result<Self> {
        if let Some(first) = components.first() {
            if components.iter().any(|c| c.dims() != first.dims()) {
                return Err(Error::dim("components of one multi-target pdf differ in dimension"));
            }
        }
        Ok(Self { components })
    }

    pub fn cardinality(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[GridBelief] {
        &self.components
    }

    fn common_axes(&self) -> Result<Vec<Axis>> {
        let first = self.components.first().ok_or_else(|| Error::dim("empty multi-target pdf has no grid"))?;
        if self.components.iter().any(|c| c.axes() != first.axes()) {
            return Err(Error::dim("joint evaluation needs every component on one grid"));
        }
        Ok(first.axes().to_vec())
    }

    fn guard(&self) -> Result<usize> {
        let n = self.cardinality();
        if n > MAX_CARDINALITY {
            return Err(Error::ResourceGuard(format!("cardinality {n} exceeds {MAX_CARDINALITY}")));
        }
        let cells = self.components.first().map_or(1, GridBelief::len);
        let total = cells.checked_pow(n as u32).filter(|t| *t <= MAX_JOINT_CELLS);
        total.ok_or_else(|| Error::ResourceGuard(format!("{cells}^{n} joint cells exceeds {MAX_JOINT_CELLS}")))
    }

    /// Joint density with argument `s` at grid cell `cells[s]`.
    pub fn joint_at(&self, cells: &[usize]) -> f64 {
        permutations(self.cardinality())
            .iter()
            .map(|nu| self.components.iter().zip(nu).map(|(c, &slot)| c.density(cells[slot])).product::<f64>())
            .sum()
    }

    /// The joint on the full `n`-fold grid, first argument slowest.
    pub fn joint_grid(&self) -> Result<Vec<f64>> {
        self.common_axes()?;
        let total = self.guard()?;
        let cells = self.components[0].len();
        let n = self.cardinality();
        Ok((0..total).map(|flat| self.joint_at(&unflatten(flat, cells, n))).collect())
    }
}

fn unflatten(mut flat: usize, cells: usize, n: usize) -> Vec<usize> {
    let mut idx = vec![0; n];
    for s in (0..n).rev() {
        idx[s] = flat % cells;
        flat /= cells;
    }
    idx
}

fn flatten(idx: &[usize], cells: usize) -> usize {
    idx.iter().fold(0, |acc, &i| acc * cells + i)
}

/// Brute-force prediction next to the product form.
#[derive(Debug, Clone)]
pub struct PredictCheck {
    /// Components predicted one by one, then the births.
    pub product_form: SymmetricMTpdf,
    /// The `n`-fold joint from the transition integral.
    pub brute_force: Vec<f64>,
    pub sup_gap: f64,
    /// Largest joint value, for relative comparisons.
    pub scale: f64,
}

/// Pushes the joint of the surviving targets through the Markov kernel
/// argument by argument, then symmetrizes in the newborn targets:
/// `f⁻(X) = Σ_{W ⊆ X, |W| = r} ∫ Π p(w|x') f(X') dX' · b(X∖W)`.
pub fn oracle_predict(mt: &SymmetricMTpdf, births: &[GridBelief], motion: &MotionModel, axes: &[Axis]) -> Result<PredictCheck> {
    let r = mt.cardinality();
    let n = r + births.len();
    if n > MAX_CARDINALITY {
        return Err(Error::ResourceGuard(format!("cardinality {n} exceeds {MAX_CARDINALITY}")));
    }
    if births.iter().any(|b| b.axes() != axes) {
        return Err(Error::dim("birth densities must live on the target grid"));
    }
    let target_cells: usize = axes.iter().map(Axis::len).product();
    if target_cells.checked_pow(n as u32).is_none_or(|t| t > MAX_JOINT_CELLS) {
        return Err(Error::ResourceGuard(format!("{target_cells}^{n} joint cells exceeds {MAX_JOINT_CELLS}")));
    }

    // transition-integral side
    let survivors: Vec<f64> = if r == 0 {
        vec![1.0]
    } else {
        let src = mt.components[0].clone();
        let src_cells = src.len();
        let mut tensor = mt.joint_grid()?;
        let kernel = transition_matrix(&src, motion, axes)?;
        let mut dims = vec![src_cells; r];
        for a in 0..r {
            tensor = contract_axis(&tensor, &dims, a, &kernel, target_cells);
            dims[a] = target_cells;
        }
        tensor
    };
    let birth_perms = permutations(births.len());
    let positions: Vec<Vec<usize>> = subsets(n, r);
    let total = target_cells.pow(n as u32);
    let brute_force: Vec<f64> = (0..total)
        .map(|flat| {
            let idx = unflatten(flat, target_cells, n);
            positions
                .iter()
                .map(|w| {
                    let kept: Vec<usize> = w.iter().map(|&s| idx[s]).collect();
                    let rest: Vec<usize> = (0..n).filter(|s| !w.contains(s)).map(|s| idx[s]).collect();
                    let b: f64 =
                        birth_perms.iter().map(|pi| births.iter().zip(pi).map(|(bj, &s)| bj.density(rest[s])).product::<f64>()).sum();
                    survivors[flatten(&kept, target_cells)] * b
                })
                .sum()
        })
        .collect();

    // product side
    let mut comps = mt.components.iter().map(|c| c.predict_onto(motion, axes.to_vec())).collect::<Result<Vec<_>>>()?;
    comps.extend(births.iter().cloned());
    let product_form = SymmetricMTpdf::new(comps)?;
    let product_joint = if n == 0 { vec![1.0] } else { product_form.joint_grid()? };
    let sup_gap = product_joint.iter().zip(&brute_force).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = brute_force.iter().copied().fold(0.0, f64::max);
    Ok(PredictCheck { product_form, brute_force, sup_gap, scale })
}

/// `K[t][s] = p(x_t | x'_s) · vol(s)`.
fn transition_matrix(src: &GridBelief, motion: &MotionModel, axes: &[Axis]) -> Result<Vec<Vec<f64>>> {
    let kernel = ln_gauss(motion.process_cov())?;
    let vol = src.cell_volume();
    let moved: Vec<Vec<f64>> = src.points().iter().map(|p| mat_vec(motion.f(), p)).collect();
    Ok(cell_points(axes)
        .iter()
        .map(|x| {
            moved
                .iter()
                .map(|fx| {
                    let diff: Vec<f64> = x.iter().zip(fx).map(|(a, b)| a - b).collect();
                    kernel(&diff).exp() * vol
                })
                .collect()
        })
        .collect())
}

fn contract_axis(tensor: &[f64], dims: &[usize], axis: usize, kernel: &[Vec<f64>], new_len: usize) -> Vec<f64> {
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    let old_len = dims[axis];
    let mut out = vec![0.0; outer * new_len * inner];
    for o in 0..outer {
        for (t, row) in kernel.iter().enumerate().take(new_len) {
            for (s, &k) in row.iter().enumerate().take(old_len) {
                if k == 0.0 {
                    continue;
                }
                let src = (o * old_len + s) * inner;
                let dst = (o * new_len + t) * inner;
                for i in 0..inner {
                    out[dst + i] += k * tensor[src + i];
                }
            }
        }
    }
    out
}

/// Size-`r` subsets of `0..n`, each sorted.
fn subsets(n: usize, r: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n).filter(|mask| mask.count_ones() as usize == r).map(|mask| (0..n).filter(|i| mask >> i & 1 == 1).collect()).collect()
}

/// A multi-target pdf term with its log weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedMTpdf {
    pub ln_weight: f64,
    pub pdf: SymmetricMTpdf,
}

/// `Σ_n (1/n!) ∫ p(X, n) dX`, summed cell by cell on the joint grids.
pub fn set_integral(mixture: &[WeightedMTpdf]) -> Result<f64> {
    let mut total = 0.0;
    for term in mixture {
        let n = term.pdf.cardinality();
        let integral = if n == 0 {
            1.0
        } else {
            let vol = term.pdf.components[0].cell_volume();
            term.pdf.joint_grid()?.iter().sum::<f64>() * vol.powi(n as i32)
        };
        total += term.ln_weight.exp() * integral / ln_n_factorial(n).exp();
    }
    Ok(total)
}

/// `ln` of the association-independent part of the multi-target likelihood
/// for one slot assignment: `e^(-λV) λ^k p_D^d (1-p_D)^(n-d)`.
pub fn ln_likelihood_constant(assignment: &[Option<usize>], m: usize, models: &ScenarioModels) -> f64 {
    let n = assignment.len();
    let d = assignment.iter().filter(|a| a.is_some()).count();
    let k = m - d;
    let lambda = models.clutter.lambda_c();
    let p_d = models.measurement.p_d();
    let pow = |base: f64, e: usize| if e == 0 { 0.0 } else { e as f64 * base.ln() };
    -lambda * models.clutter.volume() + pow(lambda, k) + pow(p_d, d) + pow(1.0 - p_d, n - d)
}

/// Posterior mass attributed to one parent and one track-to-measurement map.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateTerm {
    pub parent: usize,
    /// Measurement of each component of the parent, in component order.
    pub assignment: Vec<Option<usize>>,
    /// Unnormalized.
    pub ln_weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleUpdate {
    pub terms: Vec<UpdateTerm>,
    /// `ln ∫ f(Z|X) f⁻(X) δX`.
    pub ln_denominator: f64,
}

impl OracleUpdate {
    pub fn normalized_weight(&self, term: &UpdateTerm) -> f64 {
        (term.ln_weight - self.ln_denominator).exp()
    }
}

/// The Bayes quotient over all parents by explicit enumeration of slot
/// associations `σ̄` and permutations `ν`. The term `(ν, σ̄)` gives
/// component `i` the measurement `σ̄(ν_i)` and carries a `1/n!`.
/// Integrals factor over components and are taken on each component's grid.
pub fn oracle_update(parents: &[WeightedMTpdf], zs: &[DVector<f64>], models: &ScenarioModels) -> Result<OracleUpdate> {
    let m = zs.len();
    let mut terms = Vec::new();
    for (p, parent) in parents.iter().enumerate() {
        let n = parent.pdf.cardinality();
        if n > MAX_CARDINALITY + 1 {
            return Err(Error::ResourceGuard(format!("cardinality {n} too large for explicit permutation sums")));
        }
        let integrals: Vec<Vec<f64>> = parent
            .pdf
            .components
            .iter()
            .map(|c| zs.iter().map(|z| c.ln_likelihood(z, &models.measurement)).collect())
            .collect::<Result<_>>()?;
        let mut acc: BTreeMap<Vec<Option<usize>>, Vec<f64>> = BTreeMap::new();
        for nu in permutations(n) {
            for sigma in slot_associations(n, m) {
                let assignment: Vec<Option<usize>> = nu.iter().map(|&slot| sigma[slot]).collect();
                let mut lw = parent.ln_weight + ln_likelihood_constant(&sigma, m, models) - ln_n_factorial(n);
                for (i, a) in assignment.iter().enumerate() {
                    if let Some(j) = a {
                        lw += integrals[i][*j];
                    }
                }
                acc.entry(assignment).or_default().push(lw);
            }
        }
        for (assignment, lws) in acc {
            terms.push(UpdateTerm { parent: p, assignment, ln_weight: log_sum_exp(&lws) });
        }
    }
    let lws: Vec<f64> = terms.iter().map(|t| t.ln_weight).collect();
    Ok(OracleUpdate { terms, ln_denominator: log_sum_exp(&lws) })
}

/// Same attribution as [`oracle_update`], but every `(ν, σ̄)` integral is
/// summed over the full `n`-fold grid, and the denominator is the set
/// integral of `f(Z|X) f⁻(X)` with `f(Z|X)` summed over all `σ̄`.
/// Components must share one grid.
pub fn brute_force_update(parents: &[WeightedMTpdf], zs: &[DVector<f64>], models: &ScenarioModels) -> Result<OracleUpdate> {
    let m = zs.len();
    let mut terms = Vec::new();
    let mut denominators = Vec::new();
    for (p, parent) in parents.iter().enumerate() {
        let n = parent.pdf.cardinality();
        if n == 0 {
            let lw = parent.ln_weight + ln_likelihood_constant(&[], m, models);
            terms.push(UpdateTerm { parent: p, assignment: vec![], ln_weight: lw });
            denominators.push(lw);
            continue;
        }
        let axes = parent.pdf.common_axes()?;
        let total = parent.pdf.guard()?;
        let grid = &parent.pdf.components[0];
        let cells = grid.len();
        let vol_n = grid.cell_volume().powi(n as i32);
        let ln_g: Vec<Vec<f64>> = zs.iter().map(|z| grid.ln_likelihood_values(z, &models.measurement)).collect::<Result<_>>()?;
        let sigmas = slot_associations(n, m);
        let consts: Vec<f64> = sigmas.iter().map(|s| ln_likelihood_constant(s, m, models)).collect();
        let perms = permutations(n);
        let mut per_pair = vec![vec![0.0; sigmas.len()]; perms.len()];
        let mut denom = 0.0;
        for flat in 0..total {
            let idx = unflatten(flat, cells, n);
            let lik: Vec<f64> = sigmas
                .iter()
                .zip(&consts)
                .map(|(s, c)| (c + s.iter().zip(&idx).filter_map(|(a, &cell)| a.map(|j| ln_g[j][cell])).sum::<f64>()).exp())
                .collect();
            let mut joint = 0.0;
            for (pi, nu) in perms.iter().enumerate() {
                let f: f64 = parent.pdf.components.iter().zip(nu).map(|(c, &slot)| c.density(idx[slot])).product();
                joint += f;
                for (si, l) in lik.iter().enumerate() {
                    per_pair[pi][si] += f * l;
                }
            }
            denom += joint * lik.iter().sum::<f64>();
        }
        let _ = axes;
        let scale = parent.ln_weight - ln_n_factorial(n) + vol_n.ln();
        let mut acc: BTreeMap<Vec<Option<usize>>, f64> = BTreeMap::new();
        for (pi, nu) in perms.iter().enumerate() {
            for (si, sigma) in sigmas.iter().enumerate() {
                let assignment: Vec<Option<usize>> = nu.iter().map(|&slot| sigma[slot]).collect();
                *acc.entry(assignment).or_insert(0.0) += per_pair[pi][si];
            }
        }
        for (assignment, v) in acc {
            terms.push(UpdateTerm { parent: p, assignment, ln_weight: scale + v.ln() });
        }
        denominators.push(scale + denom.ln());
    }
    Ok(OracleUpdate { terms, ln_denominator: log_sum_exp(&denominators) })
}
