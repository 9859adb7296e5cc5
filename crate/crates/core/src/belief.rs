//! Single-target beliefs: Kalman prediction and update, the marginal
//! measurement likelihood, and the identity labels carried by tracks.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{MeasurementModel, MotionModel};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Gaussian single-target pdf.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    /// Validates dimensions and positive definiteness; the covariance is
    /// symmetrized on the way in.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::dim(format!("covariance is {}x{}, mean has {} entries", cov.nrows(), cov.ncols(), mean.len())));
        }
        let cov = symmetrize(&cov);
        let jitter = DMatrix::<f64>::identity(mean.len(), mean.len()) * 1e-10;
        if (&cov + jitter).cholesky().is_none() {
            return Err(Error::model("belief covariance is not positive definite"));
        }
        Ok(Self { mean, cov })
    }

    pub(crate) fn from_parts_unchecked(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self { mean, cov }
    }

    pub fn scalar(mean: f64, var: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, var))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `mean' = F mean`, `cov' = F cov Fᵀ + G Q Gᵀ`.
    pub fn predict(&self, motion: &MotionModel) -> Result<Self> {
        if motion.state_dim() != self.dim() {
            return Err(Error::dim(format!("motion model is {}-D, belief is {}-D", motion.state_dim(), self.dim())));
        }
        let f = motion.f();
        let mean = f * &self.mean;
        let cov = symmetrize(&(f * &self.cov * f.transpose() + motion.process_cov()));
        Ok(Self { mean, cov })
    }

    fn innovation(&self, z: &DVector<f64>, meas: &MeasurementModel) -> Result<Innovation> {
        if meas.state_dim() != self.dim() {
            return Err(Error::dim(format!("H expects {}-D states, belief is {}-D", meas.state_dim(), self.dim())));
        }
        if z.len() != meas.meas_dim() {
            return Err(Error::dim(format!("measurement has {} entries, H has {} rows", z.len(), meas.meas_dim())));
        }
        let h = meas.h();
        let residual = z - h * &self.mean;
        let s = symmetrize(&(h * &self.cov * h.transpose() + meas.r()));
        if !s.iter().all(|v| v.is_finite()) {
            return Err(Error::SingularInnovation);
        }
        let chol = s.clone().cholesky().ok_or(Error::SingularInnovation)?;
        let ln_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let whitened = chol.l().solve_lower_triangular(&residual).ok_or(Error::SingularInnovation)?;
        let maha = whitened.norm_squared();
        Ok(Innovation { residual, chol, ln_det, maha })
    }

    /// Kalman update with Joseph-form covariance. Returns the posterior and
    /// `ln N(z; H mean, H cov Hᵀ + R)`.
    pub fn update(&self, z: &DVector<f64>, meas: &MeasurementModel) -> Result<(Self, f64)> {
        let inn = self.innovation(z, meas)?;
        let h = meas.h();
        // K = P Hᵀ S⁻¹, via the Cholesky factor of S
        let pht = &self.cov * h.transpose();
        let gain = inn.chol.solve(&pht.transpose()).transpose();
        let mean = &self.mean + &gain * &inn.residual;
        let i_kh = DMatrix::<f64>::identity(self.dim(), self.dim()) - &gain * h;
        let cov = &i_kh * &self.cov * i_kh.transpose() + &gain * meas.r() * gain.transpose();
        let ll = inn.log_density(z.len());
        Ok((Self { mean, cov: symmetrize(&cov) }, ll))
    }

    /// `ln ∫ p(z|x) p(x) dx` without forming the posterior.
    pub fn marginal_likelihood(&self, z: &DVector<f64>, meas: &MeasurementModel) -> Result<f64> {
        Ok(self.innovation(z, meas)?.log_density(z.len()))
    }

    /// Squared Mahalanobis distance of the innovation.
    pub fn mahalanobis_sq(&self, z: &DVector<f64>, meas: &MeasurementModel) -> Result<f64> {
        Ok(self.innovation(z, meas)?.maha)
    }

    /// Largest absolute difference over mean and covariance entries.
    pub fn distance(&self, other: &Self) -> f64 {
        if self.dim() != other.dim() {
            return f64::INFINITY;
        }
        let dm = (&self.mean - &other.mean).amax();
        let dc = (&self.cov - &other.cov).amax();
        dm.max(dc)
    }
}

/// Draws from `N(mean, cov)` for a positive semidefinite `cov`; a zero
/// covariance returns the mean.
pub fn sample_gaussian<R: rand::Rng + ?Sized>(rng: &mut R, mean: &DVector<f64>, cov: &DMatrix<f64>) -> DVector<f64> {
    let eig = nalgebra::SymmetricEigen::new(symmetrize(cov));
    let mut scaled = DVector::zeros(mean.len());
    for i in 0..mean.len() {
        let w: f64 = rng.sample(rand_distr::StandardNormal);
        scaled[i] = eig.eigenvalues[i].max(0.0).sqrt() * w;
    }
    mean + eig.eigenvectors * scaled
}

struct Innovation {
    residual: DVector<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    ln_det: f64,
    maha: f64,
}

impl Innovation {
    fn log_density(&self, dim: usize) -> f64 {
        -0.5 * (dim as f64 * LN_2PI + self.ln_det + self.maha)
    }
}

/// Where a track started.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Origin {
    /// Component `k` of the initial multi-target pdf.
    Initial(u32),
    /// Born in `pixel` during the transition into scan `scan`.
    Birth { scan: u32, pixel: u32 },
}

/// Index of a measurement within its scan, or the null association.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MeasIndex(u32);

impl MeasIndex {
    /// The null measurement φ.
    pub const NULL: MeasIndex = MeasIndex(u32::MAX);

    pub fn new(index: usize) -> Self {
        assert!(index < u32::MAX as usize, "measurement index overflows the label encoding");
        MeasIndex(index as u32)
    }

    pub fn from_option(index: Option<usize>) -> Self {
        index.map_or(Self::NULL, Self::new)
    }

    pub fn is_null(self) -> bool {
        self == Self::NULL
    }

    pub fn get(self) -> Option<usize> {
        (!self.is_null()).then_some(self.0 as usize)
    }
}

impl fmt::Display for MeasIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.get() {
            Some(i) => write!(f, "{i}"),
            None => f.write_str("-"),
        }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv_extend(mut digest: u64, bytes: &[u8]) -> u64 {
    for b in bytes {
        digest ^= u64::from(*b);
        digest = digest.wrapping_mul(FNV_PRIME);
    }
    digest
}

/// Identity of one track: its origin and the measurement assigned to it on
/// every scan since creation.
///
/// Labels only key bookkeeping (merging, ordering, output); weights never
/// depend on them. The digest is a rolling FNV-1a hash over the
/// `(scan, measurement)` pairs, so comparisons are cheap in the common case.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackLabel {
    origin: Origin,
    first_scan: u32,
    history: Vec<MeasIndex>,
    digest: u64,
}

impl TrackLabel {
    /// Label for initial component `k`; its first scan is scan 1.
    pub fn initial(k: usize) -> Self {
        Self { origin: Origin::Initial(k as u32), first_scan: 1, history: Vec::new(), digest: FNV_OFFSET }
    }

    pub fn birth(scan: u32, pixel: usize) -> Self {
        Self { origin: Origin::Birth { scan, pixel: pixel as u32 }, first_scan: scan, history: Vec::new(), digest: FNV_OFFSET }
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn history(&self) -> &[MeasIndex] {
        &self.history
    }

    pub fn digest(&self) -> u64 {
        self.digest
    }

    pub fn is_birth(&self) -> bool {
        matches!(self.origin, Origin::Birth { .. })
    }

    /// Assignment made on the scan that created the track, if any has been made.
    pub fn first_assignment(&self) -> Option<MeasIndex> {
        self.history.first().copied()
    }

    /// Scan index the next assignment belongs to.
    pub fn next_scan(&self) -> u32 {
        self.first_scan + self.history.len() as u32
    }

    /// Appends the assignment for the next scan.
    pub fn extended(&self, assignment: MeasIndex) -> Self {
        let scan = self.next_scan();
        let mut bytes = [0u8; 8];
        bytes[..4].copy_from_slice(&scan.to_le_bytes());
        bytes[4..].copy_from_slice(&assignment.0.to_le_bytes());
        let mut history = Vec::with_capacity(self.history.len() + 1);
        history.extend_from_slice(&self.history);
        history.push(assignment);
        Self { origin: self.origin, first_scan: self.first_scan, history, digest: fnv_extend(self.digest, &bytes) }
    }
}

impl PartialEq for TrackLabel {
    fn eq(&self, other: &Self) -> bool {
        self.digest == other.digest && self.origin == other.origin && self.history == other.history
    }
}

impl Eq for TrackLabel {}

impl Hash for TrackLabel {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.origin.hash(state);
        self.digest.hash(state);
    }
}

impl PartialOrd for TrackLabel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TrackLabel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.origin.cmp(&other.origin).then(self.digest.cmp(&other.digest)).then_with(|| self.history.cmp(&other.history))
    }
}

impl fmt::Display for TrackLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.origin {
            Origin::Initial(k) => write!(f, "i{k}")?,
            Origin::Birth { scan, pixel } => write!(f, "b{scan}p{pixel}")?,
        }
        f.write_str("[")?;
        for (i, a) in self.history.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{a}")?;
        }
        f.write_str("]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_motion(f: f64, gqg: f64) -> MotionModel {
        MotionModel::new(DMatrix::from_element(1, 1, f), DMatrix::identity(1, 1), DMatrix::from_element(1, 1, gqg)).unwrap()
    }

    fn scalar_meas(r: f64) -> MeasurementModel {
        MeasurementModel::new(DMatrix::identity(1, 1), DMatrix::from_element(1, 1, r), 0.9).unwrap()
    }

    #[test]
    fn sampling_moments() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mean = DVector::from_vec(vec![1.0, -2.0]);
        assert_eq!(sample_gaussian(&mut rng, &mean, &DMatrix::zeros(2, 2)), mean);
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 0.5]);
        let n = 20_000;
        let draws: Vec<DVector<f64>> = (0..n).map(|_| sample_gaussian(&mut rng, &mean, &cov)).collect();
        let m = draws.iter().fold(DVector::zeros(2), |acc, d| acc + d) / n as f64;
        let c = draws.iter().fold(DMatrix::zeros(2, 2), |acc, d| acc + (d - &m) * (d - &m).transpose()) / n as f64;
        assert!((m - &mean).amax() < 0.05);
        assert!((c - cov).amax() < 0.08);
    }

    fn z(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    #[test]
    fn predict_examples() {
        let b = GaussianBelief::scalar(0.0, 1.0).unwrap().predict(&scalar_motion(1.0, 1.0)).unwrap();
        assert_eq!((b.mean[0], b.cov[(0, 0)]), (0.0, 2.0));
        let b = GaussianBelief::scalar(3.0, 0.5).unwrap().predict(&scalar_motion(2.0, 0.1)).unwrap();
        assert_relative_eq!(b.mean[0], 6.0);
        assert_relative_eq!(b.cov[(0, 0)], 2.1, max_relative = 1e-14);
        let prior = GaussianBelief::new(DVector::from_vec(vec![1.0, -2.0]), DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0])).unwrap();
        let same = prior.predict(&MotionModel::random_walk(2, 0.0).unwrap()).unwrap();
        assert_eq!(same, prior);
    }

    #[test]
    fn update_examples() {
        let prior = GaussianBelief::scalar(0.0, 1.0).unwrap();
        let (post, ll) = prior.update(&z(2.0), &scalar_meas(1.0)).unwrap();
        assert_relative_eq!(post.mean[0], 1.0, max_relative = 1e-14);
        assert_relative_eq!(post.cov[(0, 0)], 0.5, max_relative = 1e-14);
        assert_relative_eq!(ll.exp(), 0.103_776_874_355_148_7, max_relative = 1e-12);

        let (post, _) = GaussianBelief::scalar(4.0, 1.0).unwrap().update(&z(4.0), &scalar_meas(1e-9)).unwrap();
        assert_relative_eq!(post.mean[0], 4.0, max_relative = 1e-12);
    }

    #[test]
    fn marginal_likelihood_examples() {
        let prior = GaussianBelief::scalar(0.0, 1.0).unwrap();
        assert_relative_eq!(prior.marginal_likelihood(&z(0.0), &scalar_meas(1.0)).unwrap(), -1.265_512_123_484_645_4, max_relative = 1e-13);
        assert_relative_eq!(prior.marginal_likelihood(&z(2.0), &scalar_meas(1.0)).unwrap(), -2.265_512_123_484_645_4, max_relative = 1e-13);
        let r = 1e8;
        let flat = 1.0 / (2.0 * std::f64::consts::PI * r).sqrt();
        for v in [-3.0, 0.0, 10.0] {
            assert_relative_eq!(prior.marginal_likelihood(&z(v), &scalar_meas(r)).unwrap().exp(), flat, max_relative = 1e-6);
        }
    }

    #[test]
    fn singular_innovation_is_an_error() {
        let prior = GaussianBelief::from_parts_unchecked(DVector::zeros(1), DMatrix::from_element(1, 1, -5.0));
        assert!(matches!(prior.update(&z(0.0), &scalar_meas(1.0)), Err(Error::SingularInnovation)));
        assert!(matches!(prior.marginal_likelihood(&z(0.0), &scalar_meas(1.0)), Err(Error::SingularInnovation)));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let prior = GaussianBelief::scalar(0.0, 1.0).unwrap();
        assert!(matches!(prior.predict(&MotionModel::random_walk(2, 1.0).unwrap()), Err(Error::Dimension(_))));
        assert!(matches!(prior.update(&DVector::zeros(2), &scalar_meas(1.0)), Err(Error::Dimension(_))));
        assert!(GaussianBelief::new(DVector::zeros(2), DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn labels_equal_iff_origin_and_history_equal() {
        let a = TrackLabel::initial(0).extended(MeasIndex::new(1)).extended(MeasIndex::NULL);
        let b = TrackLabel::initial(0).extended(MeasIndex::new(1)).extended(MeasIndex::NULL);
        let c = TrackLabel::initial(0).extended(MeasIndex::NULL).extended(MeasIndex::new(1));
        let d = TrackLabel::initial(1).extended(MeasIndex::new(1)).extended(MeasIndex::NULL);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
        assert_eq!(a.to_string(), "i0[1,-]");
        let born = TrackLabel::birth(3, 7).extended(MeasIndex::NULL);
        assert_eq!(born.to_string(), "b3p7[-]");
        assert_eq!(born.first_assignment(), Some(MeasIndex::NULL));
        assert_eq!(born.next_scan(), 4);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn spd2() -> impl Strategy<Value = DMatrix<f64>> {
            (0.2f64..3.0, 0.2f64..3.0, -0.9f64..0.9).prop_map(|(a, b, rho)| {
                let c = rho * (a * b).sqrt();
                DMatrix::from_row_slice(2, 2, &[a, c, c, b])
            })
        }

        proptest! {
            #[test]
            fn update_likelihood_matches_marginal(p in spd2(), r in spd2(),
                                                  mx in -5.0f64..5.0, my in -5.0f64..5.0,
                                                  zx in -5.0f64..5.0, zy in -5.0f64..5.0) {
                let prior = GaussianBelief::new(DVector::from_vec(vec![mx, my]), p).unwrap();
                let meas = MeasurementModel::new(DMatrix::identity(2, 2), r, 0.9).unwrap();
                let zv = DVector::from_vec(vec![zx, zy]);
                let (post, ll) = prior.update(&zv, &meas).unwrap();
                let ml = prior.marginal_likelihood(&zv, &meas).unwrap();
                prop_assert!((ll - ml).abs() <= 1e-12 * ml.abs().max(1.0));
                // posterior ⪯ prior
                let diff = &prior.cov - &post.cov;
                prop_assert!(diff.symmetric_eigenvalues().min() >= -1e-10);
                prop_assert!((&post.cov - post.cov.transpose()).amax() == 0.0);
            }

            #[test]
            fn identity_prediction_inflates_every_eigenvalue(p in spd2(), q in spd2()) {
                let prior = GaussianBelief::new(DVector::zeros(2), p.clone()).unwrap();
                let motion = MotionModel::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2), q).unwrap();
                let pred = prior.predict(&motion).unwrap();
                let mut before: Vec<f64> = p.symmetric_eigenvalues().iter().copied().collect();
                let mut after: Vec<f64> = pred.cov.symmetric_eigenvalues().iter().copied().collect();
                before.sort_by(f64::total_cmp);
                after.sort_by(f64::total_cmp);
                for (b, a) in before.iter().zip(&after) {
                    prop_assert!(a > b);
                }
                let diff = &pred.cov - &p;
                prop_assert!(diff.symmetric_eigenvalues().min() > 0.0);
            }
        }
    }
}
