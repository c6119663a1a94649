//! Linear state-space models with Gaussian-mixture noise, the
//! random-walk-velocity construction, and a ground-truth simulator.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussian::{Gaussian, GaussianMixture};
use crate::gsf::ModelIndex;

/// Measurement tick of the reference localization system, in seconds.
pub const TICK: f64 = 0.1080;

const TICK_TOL: f64 = 1e-9;

/// Process noise that is a scalar mixture lifted into state space by a fixed
/// direction: `v = v_scalar · g`.
#[derive(Debug, Clone)]
pub struct ScalarLift {
    pub direction: DVector<f64>,
    pub scalar: GaussianMixture,
}

/// Everything the filters need at one time step.
#[derive(Debug, Clone)]
pub struct StepModel {
    pub transition: DMatrix<f64>,
    pub observation: DMatrix<f64>,
    pub process_noise: GaussianMixture,
    pub meas_noise: GaussianMixture,
    /// Present when the process noise is a lifted scalar mixture (rank-1
    /// cluster covariances).
    pub process_lift: Option<ScalarLift>,
    process_matched: Gaussian,
    meas_matched: Gaussian,
}

impl StepModel {
    pub fn new(
        transition: DMatrix<f64>,
        observation: DMatrix<f64>,
        process_noise: GaussianMixture,
        meas_noise: GaussianMixture,
    ) -> Result<Self> {
        let n_x = transition.nrows();
        if transition.ncols() != n_x {
            return Err(Error::Dimension("transition matrix must be square".into()));
        }
        if observation.ncols() != n_x {
            return Err(Error::Dimension(format!(
                "observation matrix has {} columns for state dimension {n_x}",
                observation.ncols()
            )));
        }
        if process_noise.dim() != n_x {
            return Err(Error::Dimension("process noise dimension differs from state".into()));
        }
        if meas_noise.dim() != observation.nrows() {
            return Err(Error::Dimension(
                "measurement noise dimension differs from measurement".into(),
            ));
        }
        Ok(StepModel {
            process_matched: process_noise.moment_match(),
            meas_matched: meas_noise.moment_match(),
            transition,
            observation,
            process_noise,
            meas_noise,
            process_lift: None,
        })
    }

    pub fn with_lift(mut self, lift: ScalarLift) -> Result<Self> {
        if lift.direction.len() != self.state_dim() || lift.scalar.dim() != 1 {
            return Err(Error::Dimension("scalar lift does not match state".into()));
        }
        self.process_lift = Some(lift);
        Ok(self)
    }

    pub fn state_dim(&self) -> usize {
        self.transition.nrows()
    }

    pub fn meas_dim(&self) -> usize {
        self.observation.nrows()
    }

    /// Moment-matched single Gaussian of the process noise.
    pub fn process_matched(&self) -> &Gaussian {
        &self.process_matched
    }

    pub fn meas_matched(&self) -> &Gaussian {
        &self.meas_matched
    }

    pub fn c_v(&self) -> usize {
        self.process_noise.count()
    }

    pub fn c_w(&self) -> usize {
        self.meas_noise.count()
    }
}

/// `x_k = F_k x_{k-1} + v_k`, `z_k = H_k x_k + w_k` with mixture noises.
///
/// Steps are zero-based; step `k` produces the `k`-th measurement.
#[derive(Debug, Clone)]
pub struct SystemModel {
    schedule: Schedule,
    nominal: Arc<StepModel>,
}

#[derive(Debug, Clone)]
enum Schedule {
    Invariant(Arc<StepModel>),
    Varying(Vec<Arc<StepModel>>),
}

impl SystemModel {
    pub fn time_invariant(step: StepModel) -> Self {
        let step = Arc::new(step);
        SystemModel {
            schedule: Schedule::Invariant(step.clone()),
            nominal: step,
        }
    }

    /// A model with one entry per step; `nominal` is used where a single
    /// operating point is needed (steady-state gains).
    pub fn time_varying(steps: Vec<Arc<StepModel>>, nominal: Arc<StepModel>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::invalid("system model", "no steps"));
        }
        let (n_x, n_z) = (nominal.state_dim(), nominal.meas_dim());
        if steps.iter().any(|s| s.state_dim() != n_x || s.meas_dim() != n_z) {
            return Err(Error::Dimension("steps disagree on state or measurement dimension".into()));
        }
        Ok(SystemModel {
            schedule: Schedule::Varying(steps),
            nominal,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.nominal.state_dim()
    }

    pub fn meas_dim(&self) -> usize {
        self.nominal.meas_dim()
    }

    /// Number of steps covered, `None` for time-invariant models.
    pub fn horizon(&self) -> Option<usize> {
        match &self.schedule {
            Schedule::Invariant(_) => None,
            Schedule::Varying(v) => Some(v.len()),
        }
    }

    /// # Panics
    /// If `step` is past the end of a time-varying model.
    pub fn at(&self, step: usize) -> &StepModel {
        match &self.schedule {
            Schedule::Invariant(s) => s,
            Schedule::Varying(v) => v.get(step).unwrap_or_else(|| {
                panic!("step {step} beyond model horizon {}", v.len())
            }),
        }
    }

    pub fn nominal(&self) -> &StepModel {
        &self.nominal
    }
}

/// Sampling intervals, each a whole number of [`TICK`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    dts: Vec<f64>,
}

impl TimeGrid {
    pub fn new(dts: Vec<f64>) -> Result<Self> {
        if dts.is_empty() {
            return Err(Error::invalid("time grid", "empty"));
        }
        for (k, &dt) in dts.iter().enumerate() {
            check_dt(dt).map_err(|reason| Error::invalid("time grid", format!("step {k}: {reason}")))?;
        }
        Ok(TimeGrid { dts })
    }

    pub fn uniform(n_steps: usize, ticks: u32) -> Result<Self> {
        if ticks == 0 {
            return Err(Error::invalid("time grid", "dt must be at least one tick"));
        }
        Self::new(vec![ticks as f64 * TICK; n_steps])
    }

    pub fn len(&self) -> usize {
        self.dts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dts.is_empty()
    }

    pub fn dts(&self) -> &[f64] {
        &self.dts
    }

    pub fn dt(&self, step: usize) -> f64 {
        self.dts[step]
    }

    pub fn ticks(&self, step: usize) -> u32 {
        (self.dts[step] / TICK).round() as u32
    }
}

/// Checks that `dt` is a positive whole multiple of [`TICK`].
pub fn check_dt(dt: f64) -> std::result::Result<u32, String> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(format!("dt {dt} must be positive"));
    }
    let ticks = (dt / TICK).round();
    if ticks < 1.0 || (dt - ticks * TICK).abs() > TICK_TOL {
        return Err(format!("dt {dt} not a multiple of {TICK:.4}"));
    }
    Ok(ticks as u32)
}

/// Ground truth and measurements of one simulated (or logged) run.
///
/// `states` and `labels` are optional so that logs without ground truth can
/// still be filtered.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Option<Vec<DVector<f64>>>,
    pub measurements: Vec<DVector<f64>>,
    pub labels: Option<Vec<ModelIndex>>,
    pub grid: TimeGrid,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.measurements.len();
        if n == 0 {
            return Err(Error::invalid("trajectory", "no steps"));
        }
        if self.grid.len() != n {
            return Err(Error::invalid("trajectory", "grid length differs from measurement count"));
        }
        if self.states.as_ref().is_some_and(|s| s.len() != n) {
            return Err(Error::invalid("trajectory", "state count differs from measurement count"));
        }
        if self.labels.as_ref().is_some_and(|l| l.len() != n) {
            return Err(Error::invalid("trajectory", "label count differs from measurement count"));
        }
        Ok(())
    }
}

/// Trajectory plus the raw noise draws that produced it.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub trajectory: Trajectory,
    pub process_draws: Vec<DVector<f64>>,
    pub meas_draws: Vec<DVector<f64>>,
}

/// Builds the 2-state position/velocity model driven by a scalar
/// random-walk-velocity mixture.
///
/// For each step with interval `dt` and scalar cluster `(u, σ²)`, the state
/// noise cluster is `u·g` with covariance `σ²·g gᵀ`, `g = [dt, 1]ᵀ`.
pub fn rw_velocity_model(
    scalar_process: &GaussianMixture,
    meas: &GaussianMixture,
    grid: &TimeGrid,
) -> Result<SystemModel> {
    if scalar_process.dim() != 1 || meas.dim() != 1 {
        return Err(Error::Dimension("random-walk-velocity model needs scalar mixtures".into()));
    }
    let mut by_ticks: BTreeMap<u32, Arc<StepModel>> = BTreeMap::new();
    let mut steps = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let ticks = grid.ticks(k);
        let step = match by_ticks.get(&ticks) {
            Some(s) => s.clone(),
            None => {
                let s = Arc::new(rw_velocity_step(scalar_process, meas, grid.dt(k))?);
                by_ticks.insert(ticks, s.clone());
                s
            }
        };
        steps.push(step);
    }
    let nominal = match by_ticks.get(&1) {
        Some(s) => s.clone(),
        None => Arc::new(rw_velocity_step(scalar_process, meas, TICK)?),
    };
    if by_ticks.len() == 1 {
        return Ok(SystemModel::time_invariant((*steps[0]).clone()));
    }
    SystemModel::time_varying(steps, nominal)
}

/// One step of [`rw_velocity_model`] at interval `dt`.
pub fn rw_velocity_step(
    scalar_process: &GaussianMixture,
    meas: &GaussianMixture,
    dt: f64,
) -> Result<StepModel> {
    let transition = DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]);
    let observation = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    let g = DVector::from_vec(vec![dt, 1.0]);
    let comps = scalar_process
        .components()
        .iter()
        .map(|c| Gaussian::new(&g * c.mean()[0], rw_velocity_cov(c.cov()[(0, 0)], dt)))
        .collect::<Result<Vec<_>>>()?;
    let process = GaussianMixture::new(scalar_process.weights().to_vec(), comps)?;
    StepModel::new(transition, observation, process, meas.clone())?.with_lift(ScalarLift {
        direction: g,
        scalar: scalar_process.clone(),
    })
}

/// `σ²·[[dt², dt], [dt, 1]]`.
pub fn rw_velocity_cov(var: f64, dt: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[dt * dt, dt, dt, 1.0]) * var
}

/// Draws a trajectory from `x0`, recording the active cluster labels.
pub fn simulate<R: Rng + ?Sized>(
    model: &SystemModel,
    x0: &DVector<f64>,
    grid: &TimeGrid,
    rng: &mut R,
) -> Result<Trajectory> {
    simulate_detailed(model, x0, grid, rng).map(|s| s.trajectory)
}

pub fn simulate_detailed<R: Rng + ?Sized>(
    model: &SystemModel,
    x0: &DVector<f64>,
    grid: &TimeGrid,
    rng: &mut R,
) -> Result<Simulation> {
    if x0.len() != model.state_dim() {
        return Err(Error::Dimension(format!(
            "initial state has length {} for state dimension {}",
            x0.len(),
            model.state_dim()
        )));
    }
    if let Some(h) = model.horizon() {
        if h < grid.len() {
            return Err(Error::invalid("simulation", "grid is longer than the model horizon"));
        }
    }
    let n = grid.len();
    let mut states = Vec::with_capacity(n);
    let mut measurements = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut process_draws = Vec::with_capacity(n);
    let mut meas_draws = Vec::with_capacity(n);
    let mut x = x0.clone();
    for k in 0..n {
        let m = model.at(k);
        let (i, v) = m.process_noise.sample(rng);
        let (j, w) = m.meas_noise.sample(rng);
        x = &m.transition * &x + &v;
        let z = &m.observation * &x + &w;
        states.push(x.clone());
        measurements.push(z);
        labels.push(ModelIndex::new(i, j));
        process_draws.push(v);
        meas_draws.push(w);
    }
    Ok(Simulation {
        trajectory: Trajectory {
            states: Some(states),
            measurements,
            labels: Some(labels),
            grid: grid.clone(),
        },
        process_draws,
        meas_draws,
    })
}
