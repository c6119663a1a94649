//! Multivariate Gaussian and Gaussian-mixture densities.
//!
//! Both types are immutable values. Factorizations needed for density
//! evaluation and sampling are computed once at construction, so the hot
//! paths (filter weights, Monte-Carlo KL) never refactor a covariance.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use smallvec::SmallVec;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Relative tolerance on `cov - covᵀ`.
const SYMMETRY_TOL: f64 = 1e-12;

/// Mixture weights may be off by this much before construction fails; within
/// it they are renormalized.
pub const WEIGHT_SUM_TOL: f64 = 1e-3;

/// Cholesky factor plus the log normalizer `-½(d·ln 2π + ln|Σ|)`.
#[derive(Debug, Clone)]
pub struct DensityFactor {
    lower: DMatrix<f64>,
    log_norm: f64,
}

impl DensityFactor {
    /// Factors a symmetric matrix for density evaluation.
    ///
    /// On failure a jitter of `1e-12·trace/dim` is added to the diagonal and
    /// the factorization is retried once.
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        let dim = cov.nrows();
        if let Some(f) = Self::try_factor(cov.clone()) {
            return Ok(f);
        }
        let jitter = 1e-12 * cov.trace() / dim as f64;
        if jitter.is_nan() || jitter <= 0.0 {
            return Err(Error::DegenerateCovariance);
        }
        let mut bumped = cov.clone();
        for i in 0..dim {
            bumped[(i, i)] += jitter;
        }
        Self::try_factor(bumped).ok_or(Error::DegenerateCovariance)
    }

    fn try_factor(cov: DMatrix<f64>) -> Option<Self> {
        Self::from_lower(cov.cholesky()?.unpack())
    }

    /// Wraps an existing lower Cholesky factor.
    pub(crate) fn from_lower(lower: DMatrix<f64>) -> Option<Self> {
        let dim = lower.nrows();
        let log_det: f64 = 2.0 * lower.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return None;
        }
        Some(DensityFactor {
            lower,
            log_norm: -0.5 * (dim as f64 * LN_2PI + log_det),
        })
    }

    /// `log N(diff; 0, Σ)` for a residual `diff = x - mean`.
    pub fn log_density_of_residual(&self, diff: &[f64]) -> f64 {
        let n = self.lower.nrows();
        debug_assert_eq!(diff.len(), n);
        // forward substitution L y = diff
        let mut y: SmallVec<[f64; 8]> = SmallVec::with_capacity(n);
        let mut quad = 0.0;
        for (i, &d) in diff.iter().enumerate() {
            let mut acc = d;
            for (k, yk) in y.iter().enumerate() {
                acc -= self.lower[(i, k)] * yk;
            }
            let yi = acc / self.lower[(i, i)];
            quad += yi * yi;
            y.push(yi);
        }
        self.log_norm - 0.5 * quad
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }
}

/// A multivariate normal `N(mean, cov)`.
///
/// Singular (even zero) covariances are allowed: such a Gaussian can be
/// sampled but not evaluated as a density.
#[derive(Debug, Clone)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    sqrt_cov: DMatrix<f64>,
    density: Option<DensityFactor>,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let dim = mean.len();
        if dim == 0 {
            return Err(Error::invalid("gaussian", "dimension must be positive"));
        }
        if cov.nrows() != dim || cov.ncols() != dim {
            return Err(Error::Dimension(format!(
                "mean has length {dim} but covariance is {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("gaussian", "non-finite parameter"));
        }
        let scale = cov.amax().max(f64::MIN_POSITIVE);
        let asym = (&cov - cov.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::invalid(
                "gaussian",
                format!("covariance not symmetric (max asymmetry {asym:e})"),
            ));
        }
        let cov = symmetrize(cov);
        let sqrt_cov = psd_sqrt(&cov).ok_or_else(|| {
            Error::invalid("gaussian", "covariance is not positive semidefinite")
        })?;
        let density = DensityFactor::new(&cov).ok();
        Ok(Gaussian {
            mean,
            cov,
            sqrt_cov,
            density,
        })
    }

    pub fn scalar(mean: f64, var: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, var))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// `true` when the covariance admits a density (positive definite,
    /// possibly after the one-shot jitter).
    pub fn has_density(&self) -> bool {
        self.density.is_some()
    }

    pub fn density_factor(&self) -> Result<&DensityFactor> {
        self.density.as_ref().ok_or(Error::DegenerateCovariance)
    }

    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        self.log_density_slice(x.as_slice())
    }

    pub fn log_density_slice(&self, x: &[f64]) -> Result<f64> {
        let factor = self.density_factor()?;
        if x.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "point has length {} but gaussian has dimension {}",
                x.len(),
                self.dim()
            )));
        }
        let diff: SmallVec<[f64; 8]> = x.iter().zip(self.mean.iter()).map(|(a, b)| a - b).collect();
        Ok(factor.log_density_of_residual(&diff))
    }

    /// Draws `mean + L·ε` with `L Lᵀ = cov`. Always consumes `dim` standard
    /// normal draws, whatever the covariance.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let eps = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng));
        &self.mean + &self.sqrt_cov * eps
    }
}

impl PartialEq for Gaussian {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.cov == other.cov
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// A square-root factor of a PSD matrix: Cholesky when it exists, otherwise
/// an eigendecomposition with small negative eigenvalues clamped to zero.
fn psd_sqrt(cov: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if let Some(ch) = cov.clone().cholesky() {
        return Some(ch.unpack());
    }
    let eig = cov.clone().symmetric_eigen();
    let floor = -1e-10 * cov.amax().max(f64::MIN_POSITIVE);
    if eig.eigenvalues.iter().any(|&l| l < floor) {
        return None;
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Some(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
}

/// `log N(x; mean, cov)` in one shot.
pub fn log_normal_pdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let factor = DensityFactor::new(cov)?;
    let diff: Vec<f64> = x.iter().zip(mean.iter()).map(|(a, b)| a - b).collect();
    Ok(factor.log_density_of_residual(&diff))
}

/// Numerically stable `ln Σ exp(xᵢ)`; `-∞` entries are ignored.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// A finite mixture `Σ wᵢ N(μᵢ, Σᵢ)`.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    components: Vec<Gaussian>,
    picker: WeightedIndex<f64>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, components: Vec<Gaussian>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("mixture", "needs at least one component"));
        }
        if weights.len() != components.len() {
            return Err(Error::invalid(
                "mixture",
                format!("{} weights for {} components", weights.len(), components.len()),
            ));
        }
        let dim = components[0].dim();
        if components.iter().any(|c| c.dim() != dim) {
            return Err(Error::Dimension("mixture components differ in dimension".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("mixture", "weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL * (1.0 + 1e-9) {
            return Err(Error::invalid(
                "mixture",
                format!("weights sum to {total}, not 1"),
            ));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        let picker = WeightedIndex::new(&weights)
            .map_err(|e| Error::invalid("mixture", e.to_string()))?;
        Ok(GaussianMixture {
            weights,
            log_weights,
            components,
            picker,
        })
    }

    pub fn single(g: Gaussian) -> Self {
        Self::new(vec![1.0], vec![g]).expect("single-component mixture is always valid")
    }

    /// Scalar mixture from parallel weight/mean/variance lists.
    pub fn scalar(weights: &[f64], means: &[f64], vars: &[f64]) -> Result<Self> {
        if means.len() != weights.len() || vars.len() != weights.len() {
            return Err(Error::invalid("mixture", "parameter lists differ in length"));
        }
        let comps = means
            .iter()
            .zip(vars)
            .map(|(&m, &v)| Gaussian::scalar(m, v))
            .collect::<Result<Vec<_>>>()?;
        Self::new(weights.to_vec(), comps)
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn count(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn components(&self) -> &[Gaussian] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &Gaussian {
        &self.components[i]
    }

    /// Draws a component label from the weights, then a vector from that
    /// component.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, DVector<f64>) {
        let idx = self.picker.sample(rng);
        (idx, self.components[idx].sample(rng))
    }

    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        let mut terms: SmallVec<[f64; 16]> = SmallVec::with_capacity(self.count());
        for (lw, c) in self.log_weights.iter().zip(&self.components) {
            let ld = c.log_density(x)?;
            terms.push(lw + ld);
        }
        Ok(log_sum_exp(&terms))
    }

    /// The single Gaussian with the mixture's mean and covariance.
    pub fn moment_match(&self) -> Gaussian {
        let dim = self.dim();
        let mut mean = DVector::zeros(dim);
        for (w, c) in self.weights.iter().zip(&self.components) {
            mean.axpy(*w, c.mean(), 1.0);
        }
        let mut cov = DMatrix::zeros(dim, dim);
        for (w, c) in self.weights.iter().zip(&self.components) {
            let d = c.mean() - &mean;
            cov += (c.cov() + &d * d.transpose()) * *w;
        }
        Gaussian::new(mean, cov).expect("moment-matched covariance is PSD by construction")
    }

    /// Monte-Carlo estimate of `KL(self ‖ g)` from `n_samples` draws of `self`.
    pub fn kl_mc<R: Rng + ?Sized>(
        &self,
        g: &Gaussian,
        n_samples: usize,
        rng: &mut R,
    ) -> Result<KlEstimate> {
        if n_samples == 0 {
            return Err(Error::invalid("kl estimate", "needs at least one sample"));
        }
        g.density_factor()?;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n_samples {
            let (_, x) = self.sample(rng);
            let d = self.log_density(&x)? - g.log_density(&x)?;
            sum += d;
            sum_sq += d * d;
        }
        let n = n_samples as f64;
        let value = sum / n;
        let stderr = if n_samples > 1 {
            let var = ((sum_sq - n * value * value) / (n - 1.0)).max(0.0);
            (var / n).sqrt()
        } else {
            f64::INFINITY
        };
        Ok(KlEstimate { value, stderr })
    }
}

/// A Monte-Carlo estimate together with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlEstimate {
    pub value: f64,
    pub stderr: f64,
}
