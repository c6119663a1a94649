//! Single-Gaussian Kalman filtering and offline gain schedules.
//!
//! The covariance half of the recursion lives in [`riccati_step`] and is
//! shared by the online filter and the offline gain computations, so an
//! offline schedule reproduces the online gains bit for bit when both start
//! from the same covariance.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::{DensityFactor, Gaussian};
use crate::gsf::ModelIndex;
use crate::state_space::{StepModel, SystemModel};

pub const RICCATI_TOL: f64 = 1e-10;
pub const RICCATI_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Number of measurements absorbed so far; also the index of the next
    /// model step.
    pub step: usize,
}

impl KalmanState {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        KalmanState { mean, cov, step: 0 }
    }
}

/// Covariance-side quantities of one Kalman step.
#[derive(Debug, Clone)]
pub struct RiccatiStep {
    pub prior_cov: DMatrix<f64>,
    pub innovation_cov: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub posterior_cov: DMatrix<f64>,
    innovation_factor: DensityFactor,
}

impl RiccatiStep {
    pub fn innovation_factor(&self) -> &DensityFactor {
        &self.innovation_factor
    }
}

/// `P⁻ = F P Fᵀ + Q`, `S = H P⁻ Hᵀ + R`, `K = P⁻ Hᵀ S⁻¹` and the Joseph-form
/// posterior covariance.
pub fn riccati_step(
    cov: &DMatrix<f64>,
    f: &DMatrix<f64>,
    h: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<RiccatiStep> {
    let prior_cov = f * cov * f.transpose() + q;
    let hp = h * &prior_cov;
    let innovation_cov = symmetric(&hp * h.transpose() + r);
    let chol = innovation_cov
        .clone()
        .cholesky()
        .ok_or(Error::DegenerateInnovation(None))?;
    let gain = chol.solve(&hp).transpose();
    let innovation_factor =
        DensityFactor::from_lower(chol.unpack()).ok_or(Error::DegenerateInnovation(None))?;
    let posterior_cov = joseph(&prior_cov, &gain, h, r);
    Ok(RiccatiStep {
        prior_cov,
        innovation_cov,
        gain,
        posterior_cov,
        innovation_factor,
    })
}

/// `(I − KH) P⁻ (I − KH)ᵀ + K R Kᵀ`, valid for any gain.
pub fn joseph(prior_cov: &DMatrix<f64>, gain: &DMatrix<f64>, h: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    let n = prior_cov.nrows();
    let a = DMatrix::identity(n, n) - gain * h;
    symmetric(&a * prior_cov * a.transpose() + gain * r * gain.transpose())
}

fn symmetric(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// Output of a full Kalman step.
#[derive(Debug, Clone)]
pub struct KalmanUpdate {
    pub state: KalmanState,
    /// Predicted measurement `ẑ`.
    pub predicted_meas: DVector<f64>,
    /// `z − ẑ`.
    pub innovation: DVector<f64>,
    pub innovation_cov: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    /// `log N(z; ẑ, S)`.
    pub log_likelihood: f64,
}

/// `x̂⁻ = F x̂ + u`, `ẑ = H x̂⁻ + b`.
pub fn predict_mean(
    mean: &DVector<f64>,
    step: &StepModel,
    process_mean: &DVector<f64>,
    meas_mean: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let prior = &step.transition * mean + process_mean;
    let z_pred = &step.observation * &prior + meas_mean;
    (prior, z_pred)
}

/// One Kalman step with (possibly non-zero-mean) noises `vbar`, `wbar`,
/// using the model entry at `state.step`.
pub fn kf_step(
    state: &KalmanState,
    model: &SystemModel,
    z: &DVector<f64>,
    vbar: &Gaussian,
    wbar: &Gaussian,
) -> Result<KalmanUpdate> {
    let step = model.at(state.step);
    check_dims(state, step, z)?;
    let ric = riccati_step(&state.cov, &step.transition, &step.observation, vbar.cov(), wbar.cov())?;
    let (prior, z_pred) = predict_mean(&state.mean, step, vbar.mean(), wbar.mean());
    let innovation = z - &z_pred;
    let mean = prior + &ric.gain * &innovation;
    let log_likelihood = ric.innovation_factor.log_density_of_residual(innovation.as_slice());
    Ok(KalmanUpdate {
        state: KalmanState {
            mean,
            cov: ric.posterior_cov,
            step: state.step + 1,
        },
        predicted_meas: z_pred,
        innovation,
        innovation_cov: ric.innovation_cov,
        gain: ric.gain,
        log_likelihood,
    })
}

/// Same recursion with an externally supplied gain; the covariance is
/// propagated in Joseph form so it stays PSD for any `gain`.
pub fn kf_step_with_gain(
    state: &KalmanState,
    model: &SystemModel,
    z: &DVector<f64>,
    vbar: &Gaussian,
    wbar: &Gaussian,
    gain: &DMatrix<f64>,
) -> Result<KalmanState> {
    let step = model.at(state.step);
    check_dims(state, step, z)?;
    if gain.nrows() != step.state_dim() || gain.ncols() != step.meas_dim() {
        return Err(Error::Dimension(format!(
            "gain is {}x{}, expected {}x{}",
            gain.nrows(),
            gain.ncols(),
            step.state_dim(),
            step.meas_dim()
        )));
    }
    let f = &step.transition;
    let prior_cov = f * &state.cov * f.transpose() + vbar.cov();
    let (prior, z_pred) = predict_mean(&state.mean, step, vbar.mean(), wbar.mean());
    Ok(KalmanState {
        mean: prior + gain * (z - z_pred),
        cov: joseph(&prior_cov, gain, &step.observation, wbar.cov()),
        step: state.step + 1,
    })
}

fn check_dims(state: &KalmanState, step: &StepModel, z: &DVector<f64>) -> Result<()> {
    let n_x = step.state_dim();
    if state.mean.len() != n_x || state.cov.nrows() != n_x || state.cov.ncols() != n_x {
        return Err(Error::Dimension(format!("state does not have dimension {n_x}")));
    }
    if z.len() != step.meas_dim() {
        return Err(Error::Dimension(format!(
            "measurement has length {}, expected {}",
            z.len(),
            step.meas_dim()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainKind {
    Preloaded,
    SteadyState,
}

/// Gains indexed by step. A steady-state schedule holds a single gain that
/// applies to every step.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSchedule {
    pub kind: GainKind,
    pub gains: Vec<DMatrix<f64>>,
}

impl GainSchedule {
    pub fn steady(gain: DMatrix<f64>) -> Self {
        GainSchedule {
            kind: GainKind::SteadyState,
            gains: vec![gain],
        }
    }

    pub fn gain(&self, step: usize) -> Option<&DMatrix<f64>> {
        match self.kind {
            GainKind::SteadyState => self.gains.first(),
            GainKind::Preloaded => self.gains.get(step),
        }
    }
}

/// Runs the measurement-free covariance recursion for `horizon` steps with
/// fixed noises `noise_v`, `noise_w`.
pub fn precompute_gains(
    model: &SystemModel,
    noise_v: &Gaussian,
    noise_w: &Gaussian,
    p0: &DMatrix<f64>,
    horizon: usize,
) -> Result<GainSchedule> {
    precompute_gains_with(model, p0, horizon, |_| {
        Ok((noise_v.cov().clone(), noise_w.cov().clone()))
    })
}

/// As [`precompute_gains`], with per-step noise covariances `(Q_k, R_k)`.
pub fn precompute_gains_with<N>(
    model: &SystemModel,
    p0: &DMatrix<f64>,
    horizon: usize,
    mut noise: N,
) -> Result<GainSchedule>
where
    N: FnMut(usize) -> Result<(DMatrix<f64>, DMatrix<f64>)>,
{
    if horizon == 0 {
        return Err(Error::invalid("gain schedule", "horizon must be at least 1"));
    }
    let mut cov = p0.clone();
    let mut gains = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let step = model.at(k);
        let (q, r) = noise(k)?;
        let ric = riccati_step(&cov, &step.transition, &step.observation, &q, &r)?;
        gains.push(ric.gain);
        cov = ric.posterior_cov;
    }
    Ok(GainSchedule {
        kind: GainKind::Preloaded,
        gains,
    })
}

/// Limit of the Riccati recursion together with the iteration count.
#[derive(Debug, Clone)]
pub struct SteadyState {
    pub gain: DMatrix<f64>,
    pub posterior_cov: DMatrix<f64>,
    pub iterations: usize,
}

/// Iterates the Riccati map from a zero posterior covariance until
/// successive covariances differ by less than `tol` (relative to their
/// magnitude) and returns the limiting gain.
pub fn steady_state_gain(
    f: &DMatrix<f64>,
    h: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DMatrix<f64>> {
    let p0 = DMatrix::zeros(f.nrows(), f.ncols());
    steady_state_from(f, h, q, r, &p0, tol, max_iter).map(|s| s.gain)
}

pub fn steady_state_from(
    f: &DMatrix<f64>,
    h: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p0: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<SteadyState> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::invalid("riccati tolerance", "must be positive"));
    }
    let mut cov = p0.clone();
    for it in 1..=max_iter {
        let ric = riccati_step(&cov, f, h, q, r)?;
        let delta = (&ric.posterior_cov - &cov).amax();
        let scale = ric.posterior_cov.amax().max(1.0);
        cov = ric.posterior_cov;
        if delta < tol * scale {
            return Ok(SteadyState {
                gain: ric.gain,
                posterior_cov: cov,
                iterations: it,
            });
        }
    }
    Err(Error::NoConvergence(max_iter))
}

/// Gains for every member of a filter bank: either one schedule shared by
/// all models or one schedule per `(i, j)` model.
#[derive(Debug, Clone, PartialEq)]
pub enum GainSet {
    Shared(GainSchedule),
    PerModel {
        c_w: usize,
        schedules: Vec<GainSchedule>,
    },
}

impl GainSet {
    pub fn gain(&self, index: ModelIndex, step: usize) -> Result<&DMatrix<f64>> {
        let schedule = match self {
            GainSet::Shared(s) => s,
            GainSet::PerModel { c_w, schedules } => {
                schedules.get(index.i * c_w + index.j).ok_or_else(|| Error::MissingGains {
                    what: format!("model {index}"),
                })?
            }
        };
        schedule.gain(step).ok_or_else(|| Error::MissingGains {
            what: format!("model {index} at step {step}"),
        })
    }

    pub fn kind(&self) -> GainKind {
        match self {
            GainSet::Shared(s) => s.kind,
            GainSet::PerModel { schedules, .. } => schedules[0].kind,
        }
    }
}

fn cluster_counts(model: &SystemModel, horizon: usize) -> Result<(usize, usize)> {
    let first = model.at(0);
    let (c_v, c_w) = (first.c_v(), first.c_w());
    for k in 1..horizon {
        let s = model.at(k);
        if s.c_v() != c_v || s.c_w() != c_w {
            return Err(Error::invalid("gain set", "cluster counts change over time"));
        }
    }
    Ok((c_v, c_w))
}

/// Offline schedules for each bank member, from cluster covariances
/// `(Q^i_k, R^j_k)`.
pub fn preloaded_per_model(model: &SystemModel, p0: &DMatrix<f64>, horizon: usize) -> Result<GainSet> {
    let (c_v, c_w) = cluster_counts(model, horizon)?;
    let mut schedules = Vec::with_capacity(c_v * c_w);
    for i in 0..c_v {
        for j in 0..c_w {
            schedules.push(precompute_gains_with(model, p0, horizon, |k| {
                let s = model.at(k);
                Ok((
                    s.process_noise.component(i).cov().clone(),
                    s.meas_noise.component(j).cov().clone(),
                ))
            })?);
        }
    }
    Ok(GainSet::PerModel { c_w, schedules })
}

/// One offline schedule from the moment-matched process and measurement
/// noises, shared by every bank member.
pub fn preloaded_shared(model: &SystemModel, p0: &DMatrix<f64>, horizon: usize) -> Result<GainSet> {
    let schedule = precompute_gains_with(model, p0, horizon, |k| {
        let s = model.at(k);
        Ok((
            s.process_noise.moment_match().cov().clone(),
            s.meas_noise.moment_match().cov().clone(),
        ))
    })?;
    Ok(GainSet::Shared(schedule))
}

/// Steady-state gain of each bank member at the model's nominal step.
pub fn steady_per_model(model: &SystemModel, tol: f64, max_iter: usize) -> Result<GainSet> {
    let s = model.nominal();
    let c_w = s.c_w();
    let mut schedules = Vec::with_capacity(s.c_v() * c_w);
    for qi in s.process_noise.components() {
        for rj in s.meas_noise.components() {
            let k = steady_state_gain(&s.transition, &s.observation, qi.cov(), rj.cov(), tol, max_iter)?;
            schedules.push(GainSchedule::steady(k));
        }
    }
    Ok(GainSet::PerModel { c_w, schedules })
}
