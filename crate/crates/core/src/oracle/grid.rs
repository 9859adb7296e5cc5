//! Single-target densities sampled at the cell midpoints of a regular grid.
//!
//! Values are kept as logarithms so that far-tail likelihood products do
//! not underflow before they are summed.

use nalgebra::{DMatrix, DVector};

use crate::belief::GaussianBelief;
use crate::error::{Error, Result};
use crate::logmath::log_sum_exp;
use crate::models::{MeasurementModel, MotionModel, PixelBox};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Tolerance on `Σ density · cell volume = 1`.
pub const MASS_TOLERANCE: f64 = 1e-6;

/// `len` equal cells on `[lower, lower + len·step)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    lower: f64,
    step: f64,
    len: usize,
}

impl Axis {
    pub fn new(lower: f64, upper: f64, len: usize) -> Result<Self> {
        if len == 0 || !lower.is_finite() || !upper.is_finite() || upper <= lower {
            return Err(Error::model(format!("bad axis [{lower}, {upper}) with {len} cells")));
        }
        Ok(Self { lower, step: (upper - lower) / len as f64, len })
    }

    /// Cells no wider than `step`.
    pub fn with_step(lower: f64, upper: f64, step: f64) -> Result<Self> {
        if step.is_nan() || step <= 0.0 {
            return Err(Error::model("axis step must be positive"));
        }
        Self::new(lower, upper, ((upper - lower) / step).ceil().max(1.0) as usize)
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.lower + self.step * self.len as f64
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Midpoint of cell `i`.
    pub fn point(&self, i: usize) -> f64 {
        self.lower + (i as f64 + 0.5) * self.step
    }
}

/// Single-target density on a product of axes, row-major with the last
/// axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridBelief {
    axes: Vec<Axis>,
    ln_values: Vec<f64>,
}

fn cell_count(axes: &[Axis]) -> usize {
    axes.iter().map(Axis::len).product()
}

pub(crate) fn cell_points(axes: &[Axis]) -> Vec<Vec<f64>> {
    let total = cell_count(axes);
    (0..total)
        .map(|mut flat| {
            let mut p = vec![0.0; axes.len()];
            for (d, axis) in axes.iter().enumerate().rev() {
                p[d] = axis.point(flat % axis.len);
                flat /= axis.len;
            }
            p
        })
        .collect()
}

/// Precomputed `ln N(·; ·, Σ)` for a fixed covariance.
struct LnGauss {
    inv: DMatrix<f64>,
    ln_norm: f64,
}

impl LnGauss {
    fn new(cov: &DMatrix<f64>) -> Result<Self> {
        let chol = cov.clone().cholesky().ok_or_else(|| Error::model("grid kernel covariance is not positive definite"))?;
        let ln_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self { inv: chol.inverse(), ln_norm: -0.5 * (cov.nrows() as f64 * LN_2PI + ln_det) })
    }

    fn eval(&self, diff: &[f64]) -> f64 {
        let d = diff.len();
        let mut q = 0.0;
        for i in 0..d {
            for j in 0..d {
                q += diff[i] * self.inv[(i, j)] * diff[j];
            }
        }
        self.ln_norm - 0.5 * q
    }
}

pub(crate) fn mat_vec(m: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)] * x[j]).sum()).collect()
}

/// `x ↦ ln N(x; 0, cov)`.
pub(crate) fn ln_gauss(cov: &DMatrix<f64>) -> Result<impl Fn(&[f64]) -> f64> {
    let k = LnGauss::new(cov)?;
    Ok(move |diff: &[f64]| k.eval(diff))
}

impl GridBelief {
    /// Samples `ln f` at every cell midpoint and checks the mass.
    pub fn from_ln_fn(axes: Vec<Axis>, ln_f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let ln_values = cell_points(&axes).iter().map(|p| ln_f(p)).collect();
        let g = Self { axes, ln_values };
        g.check_mass()?;
        Ok(g)
    }

    pub fn gaussian(axes: Vec<Axis>, belief: &GaussianBelief) -> Result<Self> {
        if belief.dim() != axes.len() {
            return Err(Error::dim("belief and grid dimensions differ"));
        }
        let k = LnGauss::new(&belief.cov)?;
        let mean = belief.mean.clone();
        Self::from_ln_fn(axes, |x| {
            let diff: Vec<f64> = x.iter().zip(mean.iter()).map(|(a, b)| a - b).collect();
            k.eval(&diff)
        })
    }

    /// Uniform density on `pixel`, with `cells_per_dim` cells along each
    /// axis of the pixel.
    pub fn uniform_box(pixel: &PixelBox, cells_per_dim: usize) -> Result<Self> {
        let axes = (0..pixel.dims()).map(|d| Axis::new(pixel.lower[d], pixel.upper[d], cells_per_dim)).collect::<Result<Vec<_>>>()?;
        let ln_v = -pixel.volume().ln();
        Self::from_ln_fn(axes, |_| ln_v)
    }

    fn check_mass(&self) -> Result<()> {
        let mass = self.mass();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::ResourceGuard(format!("grid holds mass {mass}; widen or refine it")));
        }
        Ok(())
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.ln_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ln_values.is_empty()
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(Axis::step).product()
    }

    pub fn ln_values(&self) -> &[f64] {
        &self.ln_values
    }

    pub fn density(&self, cell: usize) -> f64 {
        self.ln_values[cell].exp()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        cell_points(&self.axes)
    }

    pub fn mass(&self) -> f64 {
        (log_sum_exp(&self.ln_values) + self.cell_volume().ln()).exp()
    }

    pub fn mean(&self) -> DVector<f64> {
        let vol = self.cell_volume();
        let mut m = DVector::zeros(self.dims());
        for (p, lv) in self.points().iter().zip(&self.ln_values) {
            let w = lv.exp() * vol;
            for d in 0..p.len() {
                m[d] += w * p[d];
            }
        }
        m
    }

    pub fn cov(&self) -> DMatrix<f64> {
        let vol = self.cell_volume();
        let mean = self.mean();
        let d = self.dims();
        let mut c = DMatrix::zeros(d, d);
        for (p, lv) in self.points().iter().zip(&self.ln_values) {
            let w = lv.exp() * vol;
            for i in 0..d {
                for j in 0..d {
                    c[(i, j)] += w * (p[i] - mean[i]) * (p[j] - mean[j]);
                }
            }
        }
        c
    }

    /// `∫ p(x|x') p(x') dx'` evaluated on `axes` by midpoint quadrature.
    /// The process covariance `G Q Gᵀ` must be positive definite.
    pub fn predict_onto(&self, motion: &MotionModel, axes: Vec<Axis>) -> Result<Self> {
        if motion.state_dim() != self.dims() || axes.len() != self.dims() {
            return Err(Error::dim("motion model, grid and target axes disagree"));
        }
        let kernel = LnGauss::new(motion.process_cov())?;
        let moved: Vec<Vec<f64>> = self.points().iter().map(|p| mat_vec(motion.f(), p)).collect();
        let ln_vol = self.cell_volume().ln();
        let mut terms = vec![0.0; moved.len()];
        let ln_values = cell_points(&axes)
            .iter()
            .map(|x| {
                for ((t, fx), lv) in terms.iter_mut().zip(&moved).zip(&self.ln_values) {
                    let diff: Vec<f64> = x.iter().zip(fx).map(|(a, b)| a - b).collect();
                    *t = kernel.eval(&diff) + lv;
                }
                log_sum_exp(&terms) + ln_vol
            })
            .collect();
        let g = Self { axes, ln_values };
        g.check_mass()?;
        Ok(g)
    }

    pub(crate) fn ln_likelihood_values(&self, z: &DVector<f64>, meas: &MeasurementModel) -> Result<Vec<f64>> {
        if meas.state_dim() != self.dims() || z.len() != meas.meas_dim() {
            return Err(Error::dim("measurement model, grid and measurement disagree"));
        }
        let k = LnGauss::new(meas.r())?;
        Ok(self
            .points()
            .iter()
            .map(|x| {
                let hx = mat_vec(meas.h(), x);
                let diff: Vec<f64> = z.iter().zip(&hx).map(|(a, b)| a - b).collect();
                k.eval(&diff)
            })
            .collect())
    }

    /// `ln ∫ N(z; Hx, R) p(x) dx`.
    pub fn ln_likelihood(&self, z: &DVector<f64>, meas: &MeasurementModel) -> Result<f64> {
        let ll = self.ln_likelihood_values(z, meas)?;
        let terms: Vec<f64> = ll.iter().zip(&self.ln_values).map(|(a, b)| a + b).collect();
        Ok(log_sum_exp(&terms) + self.cell_volume().ln())
    }

    /// Pointwise Bayes rule. Returns the posterior and `ln ∫ N(z; Hx, R) p(x) dx`.
    pub fn update(&self, z: &DVector<f64>, meas: &MeasurementModel) -> Result<(Self, f64)> {
        let ll = self.ln_likelihood_values(z, meas)?;
        let terms: Vec<f64> = ll.iter().zip(&self.ln_values).map(|(a, b)| a + b).collect();
        let ln_l = log_sum_exp(&terms) + self.cell_volume().ln();
        if ln_l == f64::NEG_INFINITY {
            return Err(Error::ResourceGuard("measurement has zero likelihood on the grid".into()));
        }
        let ln_values = terms.iter().map(|t| t - ln_l).collect();
        Ok((Self { axes: self.axes.clone(), ln_values }, ln_l))
    }

    /// Largest absolute density difference; the grids must match.
    pub fn sup_distance(&self, other: &Self) -> Result<f64> {
        if self.axes != other.axes {
            return Err(Error::dim("grid densities live on different axes"));
        }
        Ok(self.ln_values.iter().zip(&other.ln_values).map(|(a, b)| (a.exp() - b.exp()).abs()).fold(0.0, f64::max))
    }
}
