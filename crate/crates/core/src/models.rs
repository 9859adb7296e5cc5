//! Scenario parameters and the scalar prior probabilities of the
//! association, birth and survival hypotheses.
//!
//! Every prior is available in the log domain (`ln_*`) and as a linear
//! probability. The hypothesis engine only ever uses the log forms.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::belief::GaussianBelief;
use crate::error::{Error, Result};
use crate::logmath::{ln_factorial, xlogy};

const SYMMETRY_TOL: f64 = 1e-9;

fn check_symmetric(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::dim(format!("{name} must be square, got {}x{}", m.nrows(), m.ncols())));
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > SYMMETRY_TOL * scale {
        return Err(Error::model(format!("{name} is not symmetric")));
    }
    Ok(())
}

fn check_psd(name: &str, m: &DMatrix<f64>) -> Result<()> {
    check_symmetric(name, m)?;
    let sym = (m + m.transpose()) * 0.5;
    let min_eig = sym.symmetric_eigenvalues().min();
    if min_eig < -1e-10 * m.amax().max(1.0) {
        return Err(Error::model(format!("{name} is not positive semidefinite (eigenvalue {min_eig})")));
    }
    Ok(())
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(Error::model(format!("{name} must lie in [0, 1], got {p}")));
    }
    Ok(())
}

/// Linear-Gaussian motion `x' = F x + G w`, `w ~ N(0, Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionModel {
    f: DMatrix<f64>,
    g: DMatrix<f64>,
    q: DMatrix<f64>,
    process_cov: DMatrix<f64>,
}

impl MotionModel {
    pub fn new(f: DMatrix<f64>, g: DMatrix<f64>, q: DMatrix<f64>) -> Result<Self> {
        if !f.is_square() {
            return Err(Error::dim("F must be square"));
        }
        if g.nrows() != f.nrows() {
            return Err(Error::dim(format!("G has {} rows, state dimension is {}", g.nrows(), f.nrows())));
        }
        if q.nrows() != g.ncols() {
            return Err(Error::dim(format!("Q is {}x{}, G has {} columns", q.nrows(), q.ncols(), g.ncols())));
        }
        check_psd("Q", &q)?;
        let gqg = &g * &q * g.transpose();
        let process_cov = (&gqg + gqg.transpose()) * 0.5;
        Ok(Self { f, g, q, process_cov })
    }

    /// Random walk `x' = x + w` with `w ~ N(0, q I)`.
    pub fn random_walk(dim: usize, q: f64) -> Result<Self> {
        Self::new(DMatrix::identity(dim, dim), DMatrix::identity(dim, dim), DMatrix::identity(dim, dim) * q)
    }

    pub fn state_dim(&self) -> usize {
        self.f.nrows()
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// `G Q Gᵀ`, symmetrized.
    pub fn process_cov(&self) -> &DMatrix<f64> {
        &self.process_cov
    }
}

/// Linear-Gaussian measurement `z = H x + v`, `v ~ N(0, R)`, detected with
/// probability `p_d`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    h: DMatrix<f64>,
    r: DMatrix<f64>,
    p_d: f64,
}

impl MeasurementModel {
    pub fn new(h: DMatrix<f64>, r: DMatrix<f64>, p_d: f64) -> Result<Self> {
        if r.nrows() != h.nrows() {
            return Err(Error::dim(format!("R is {}x{}, H has {} rows", r.nrows(), r.ncols(), h.nrows())));
        }
        check_symmetric("R", &r)?;
        if r.clone().cholesky().is_none() {
            return Err(Error::model("R must be positive definite"));
        }
        check_probability("p_D", p_d)?;
        Ok(Self { h, r, p_d })
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn p_d(&self) -> f64 {
        self.p_d
    }

    pub fn meas_dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.h.ncols()
    }
}

/// Poisson clutter, uniform over a field of view of volume `volume`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClutterModel {
    lambda_c: f64,
    volume: f64,
}

impl ClutterModel {
    pub fn new(lambda_c: f64, volume: f64) -> Result<Self> {
        if !lambda_c.is_finite() || lambda_c < 0.0 {
            return Err(Error::model(format!("clutter rate must be finite and >= 0, got {lambda_c}")));
        }
        if !volume.is_finite() || volume <= 0.0 {
            return Err(Error::model(format!("field-of-view volume must be > 0, got {volume}")));
        }
        Ok(Self { lambda_c, volume })
    }

    pub fn lambda_c(&self) -> f64 {
        self.lambda_c
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    /// Expected clutter count per scan, `λ_C V`.
    pub fn mean_count(&self) -> f64 {
        self.lambda_c * self.volume
    }
}

/// An axis-aligned box; one birth pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl PixelBox {
    pub fn dims(&self) -> usize {
        self.lower.len()
    }

    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).product()
    }

    pub fn center(&self) -> DVector<f64> {
        DVector::from_iterator(self.dims(), self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)))
    }

    /// Per-axis variance of the uniform density on the box, `w² / 12`.
    pub fn variances(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| (u - l).powi(2) / 12.0).collect()
    }

    /// Half-open containment `[lower, upper)`.
    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() >= self.dims() && self.lower.iter().zip(&self.upper).zip(point).all(|((l, u), x)| *l <= *x && *x < *u)
    }

    /// Uniform density `1_box(x) / V̄`.
    pub fn density(&self, point: &[f64]) -> f64 {
        if self.contains(point) {
            1.0 / self.volume()
        } else {
            0.0
        }
    }
}

/// Uniform axis-aligned partition of the sensor field of view into `M` pixels.
///
/// Pixels are numbered in row-major order with the last axis varying fastest.
/// The grid lives in measurement space, and its axes coincide with the
/// leading state components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelGrid {
    lower: Vec<f64>,
    upper: Vec<f64>,
    cells: Vec<usize>,
}

impl PixelGrid {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, cells: Vec<usize>) -> Result<Self> {
        if lower.len() != upper.len() || lower.len() != cells.len() || lower.is_empty() {
            return Err(Error::dim("pixel grid bounds and cell counts must have equal, non-zero length"));
        }
        for ((l, u), c) in lower.iter().zip(&upper).zip(&cells) {
            if !l.is_finite() || !u.is_finite() || u <= l {
                return Err(Error::model(format!("field of view axis [{l}, {u}] is empty")));
            }
            if *c == 0 {
                return Err(Error::model("pixel count per axis must be > 0"));
            }
        }
        Ok(Self { lower, upper, cells })
    }

    pub fn dims(&self) -> usize {
        self.cells.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    /// `M`, the total number of pixels.
    pub fn pixel_count(&self) -> usize {
        self.cells.iter().product()
    }

    /// `V`, the field-of-view volume.
    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).product()
    }

    /// `V̄`, the volume of every pixel.
    pub fn pixel_volume(&self) -> f64 {
        self.volume() / self.pixel_count() as f64
    }

    fn widths(&self) -> impl Iterator<Item = f64> + '_ {
        self.lower.iter().zip(&self.upper).zip(&self.cells).map(|((l, u), c)| (u - l) / *c as f64)
    }

    pub fn pixel_bounds(&self, index: usize) -> Result<PixelBox> {
        let m = self.pixel_count();
        if index >= m {
            return Err(Error::Range { what: "pixel index", value: index, limit: m.saturating_sub(1) });
        }
        let mut rest = index;
        let mut coords = vec![0usize; self.dims()];
        for axis in (0..self.dims()).rev() {
            coords[axis] = rest % self.cells[axis];
            rest /= self.cells[axis];
        }
        let (mut lower, mut upper) = (Vec::with_capacity(self.dims()), Vec::with_capacity(self.dims()));
        for ((axis, w), c) in self.widths().enumerate().zip(&coords) {
            let lo = self.lower[axis] + w * *c as f64;
            lower.push(lo);
            // the last cell ends exactly on the field-of-view edge
            upper.push(if *c + 1 == self.cells[axis] { self.upper[axis] } else { lo + w });
        }
        Ok(PixelBox { lower, upper })
    }

    /// Pixel containing `point` (only the first `dims()` coordinates are read).
    pub fn pixel_of(&self, point: &[f64]) -> Option<usize> {
        if point.len() < self.dims() {
            return None;
        }
        let mut index = 0usize;
        for (axis, w) in self.widths().enumerate() {
            let x = point[axis];
            if !(x >= self.lower[axis] && x < self.upper[axis]) {
                return None;
            }
            let c = (((x - self.lower[axis]) / w).floor() as usize).min(self.cells[axis] - 1);
            index = index * self.cells[axis] + c;
        }
        Some(index)
    }
}

/// Which density represents a freshly born target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BirthPdfMode {
    /// Exact `1_pixel(x) / V̄`; requires the pixel grid to span the full state.
    Uniform,
    /// Gaussian centred on the pixel with the box's second moments.
    #[default]
    Gaussian,
}

/// Birth density for one pixel.
#[derive(Debug, Clone, PartialEq)]
pub enum BirthPdf {
    Uniform(PixelBox),
    Gaussian(GaussianBelief),
}

/// Spatial binomial birth process over the pixel grid.
///
/// Each pixel independently spawns a target with probability `alpha`. State
/// components beyond the grid axes (e.g. velocity) are drawn from the Gaussian
/// `extra_mean`, `extra_cov`.
#[derive(Debug, Clone, PartialEq)]
pub struct BirthModel {
    grid: PixelGrid,
    alpha: f64,
    extra_mean: DVector<f64>,
    extra_cov: DMatrix<f64>,
}

impl BirthModel {
    pub fn new(grid: PixelGrid, alpha: f64, extra_mean: DVector<f64>, extra_cov: DMatrix<f64>) -> Result<Self> {
        check_probability("alpha", alpha)?;
        if extra_cov.nrows() != extra_mean.len() {
            return Err(Error::dim("birth extra_cov must match extra_mean"));
        }
        if !extra_mean.is_empty() {
            check_symmetric("birth extra_cov", &extra_cov)?;
            if extra_cov.clone().cholesky().is_none() {
                return Err(Error::model("birth extra_cov must be positive definite"));
            }
        }
        Ok(Self { grid, alpha, extra_mean, extra_cov })
    }

    /// Birth model with no state components outside the pixel grid.
    pub fn full_state(grid: PixelGrid, alpha: f64) -> Result<Self> {
        Self::new(grid, alpha, DVector::zeros(0), DMatrix::zeros(0, 0))
    }

    /// Builds the model from the Poisson rate, `alpha = λ_B V̄`.
    pub fn from_rate(grid: PixelGrid, lambda_b: f64, extra_mean: DVector<f64>, extra_cov: DMatrix<f64>) -> Result<Self> {
        if lambda_b.is_nan() || lambda_b < 0.0 {
            return Err(Error::model(format!("birth rate must be >= 0, got {lambda_b}")));
        }
        let alpha = lambda_b * grid.pixel_volume();
        Self::new(grid, alpha, extra_mean, extra_cov)
    }

    pub fn grid(&self) -> &PixelGrid {
        &self.grid
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn pixel_count(&self) -> usize {
        self.grid.pixel_count()
    }

    pub fn pixel_volume(&self) -> f64 {
        self.grid.pixel_volume()
    }

    pub fn volume(&self) -> f64 {
        self.grid.volume()
    }

    /// `λ_B = alpha / V̄`.
    pub fn lambda_b(&self) -> f64 {
        self.alpha / self.pixel_volume()
    }

    pub fn extra_mean(&self) -> &DVector<f64> {
        &self.extra_mean
    }

    pub fn extra_cov(&self) -> &DMatrix<f64> {
        &self.extra_cov
    }

    pub fn state_dim(&self) -> usize {
        self.grid.dims() + self.extra_mean.len()
    }

    /// Moment-matched Gaussian of a pixel: box moments on the grid axes,
    /// `extra_*` on the rest.
    pub fn gaussian_for_box(&self, pixel: &PixelBox) -> GaussianBelief {
        let g = pixel.dims();
        let d = self.state_dim();
        let mut mean = DVector::zeros(d);
        let mut cov = DMatrix::zeros(d, d);
        mean.rows_mut(0, g).copy_from(&pixel.center());
        for (i, v) in pixel.variances().into_iter().enumerate() {
            cov[(i, i)] = v;
        }
        mean.rows_mut(g, d - g).copy_from(&self.extra_mean);
        cov.view_mut((g, g), (d - g, d - g)).copy_from(&self.extra_cov);
        GaussianBelief::from_parts_unchecked(mean, cov)
    }
}

/// Per-target, per-scan survival probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalModel {
    beta: f64,
}

impl SurvivalModel {
    pub fn new(beta: f64) -> Result<Self> {
        check_probability("beta", beta)?;
        Ok(Self { beta })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// All scenario parameters, cross-validated for dimensional consistency.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioModels {
    pub motion: MotionModel,
    pub measurement: MeasurementModel,
    pub clutter: ClutterModel,
    pub birth: BirthModel,
    pub survival: SurvivalModel,
}

impl ScenarioModels {
    pub fn new(
        motion: MotionModel,
        measurement: MeasurementModel,
        clutter: ClutterModel,
        birth: BirthModel,
        survival: SurvivalModel,
    ) -> Result<Self> {
        let d = motion.state_dim();
        if measurement.state_dim() != d {
            return Err(Error::dim(format!("H has {} columns, state dimension is {d}", measurement.state_dim())));
        }
        if birth.state_dim() != d {
            return Err(Error::dim(format!("birth model spans {} state components, state dimension is {d}", birth.state_dim())));
        }
        if birth.grid().dims() != measurement.meas_dim() {
            return Err(Error::dim("the pixel grid must live in measurement space"));
        }
        let v = clutter.volume();
        let mv = birth.pixel_count() as f64 * birth.pixel_volume();
        if (mv - v).abs() > 1e-9 * v {
            return Err(Error::model(format!("M * V_bar = {mv} differs from field-of-view volume {v}")));
        }
        Ok(Self { motion, measurement, clutter, birth, survival })
    }

    pub fn state_dim(&self) -> usize {
        self.motion.state_dim()
    }

    /// True when `H = I` and `R` is diagonal, which the exact uniform birth
    /// density needs for its closed-form likelihood.
    pub fn is_full_state_diagonal(&self) -> bool {
        let h = self.measurement.h();
        let r = self.measurement.r();
        h.is_square()
            && (h - DMatrix::<f64>::identity(h.nrows(), h.ncols())).amax() == 0.0
            && (0..r.nrows()).all(|i| (0..r.ncols()).all(|j| i == j || r[(i, j)] == 0.0))
    }
}

/// `ln p(σ | n)`: the prior of one data association that detects `m - k` of
/// `n` targets and assigns `k` of `m` measurements to Poisson clutter.
pub fn ln_association_prior(n: usize, m: usize, k: usize, meas: &MeasurementModel, clutter: &ClutterModel) -> Result<f64> {
    if k > m {
        return Err(Error::Range { what: "clutter count k", value: k, limit: m });
    }
    let detected = m - k;
    if detected > n {
        return Err(Error::dim(format!("{detected} detections but only {n} targets")));
    }
    let p_d = meas.p_d();
    let mu = clutter.mean_count();
    Ok(xlogy(detected, p_d) + xlogy(n - detected, 1.0 - p_d) - mu + xlogy(k, mu) - ln_factorial(k))
}

pub fn association_prior(n: usize, m: usize, k: usize, meas: &MeasurementModel, clutter: &ClutterModel) -> Result<f64> {
    ln_association_prior(n, m, k, meas, clutter).map(f64::exp)
}

/// `ln(α^p (1-α)^(M-p))`: one specific `p`-birth hypothesis.
pub fn ln_birth_prior(p: usize, birth: &BirthModel) -> Result<f64> {
    let m = birth.pixel_count();
    if p > m {
        return Err(Error::Range { what: "birth count", value: p, limit: m });
    }
    Ok(xlogy(p, birth.alpha()) + xlogy(m - p, 1.0 - birth.alpha()))
}

pub fn birth_prior(p: usize, birth: &BirthModel) -> Result<f64> {
    ln_birth_prior(p, birth).map(f64::exp)
}

/// `ln(e^(-λ_B V) λ_B^p V̄^p)`, the Poisson limit of [`ln_birth_prior`].
pub fn ln_birth_prior_poisson_limit(p: usize, birth: &BirthModel) -> f64 {
    let lambda_b = birth.lambda_b();
    -lambda_b * birth.volume() + xlogy(p, lambda_b) + p as f64 * birth.pixel_volume().ln()
}

pub fn birth_prior_poisson_limit(p: usize, birth: &BirthModel) -> f64 {
    ln_birth_prior_poisson_limit(p, birth).exp()
}

/// `ln(β^p (1-β)^(r-p))`: one specific survival subset of size `p`.
pub fn ln_survival_prior(p: usize, r: usize, surv: &SurvivalModel) -> Result<f64> {
    if p > r {
        return Err(Error::Range { what: "survivor count", value: p, limit: r });
    }
    Ok(xlogy(p, surv.beta()) + xlogy(r - p, 1.0 - surv.beta()))
}

pub fn survival_prior(p: usize, r: usize, surv: &SurvivalModel) -> Result<f64> {
    ln_survival_prior(p, r, surv).map(f64::exp)
}

/// Birth density of pixel `pixel_index`.
pub fn birth_pdf(pixel_index: usize, birth: &BirthModel, mode: BirthPdfMode) -> Result<BirthPdf> {
    let pixel = birth.grid().pixel_bounds(pixel_index)?;
    match mode {
        BirthPdfMode::Uniform => {
            if !birth.extra_mean().is_empty() {
                return Err(Error::model("uniform birth density needs the pixel grid to span the full state"));
            }
            Ok(BirthPdf::Uniform(pixel))
        }
        BirthPdfMode::Gaussian => Ok(BirthPdf::Gaussian(birth.gaussian_for_box(&pixel))),
    }
}
