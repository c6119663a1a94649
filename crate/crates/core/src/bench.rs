//! Experiment harness: the synthetic and packaged noise scenarios, KL-based
//! calibration of the synthetic models, RMSE / CEP metrics and a
//! Monte-Carlo driver with common random numbers across methods.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::{GaussianMixture, KlEstimate};
use crate::kalman::KalmanState;
use crate::runner::{run_filter, FilterOutput, Method, MethodFactory, MethodKind, PreloadedGains};
use crate::state_space::{rw_velocity_model, simulate, SystemModel, TimeGrid, Trajectory};

/// Sample count of the KL estimates used for calibration.
pub const KL_SAMPLES: usize = 200_000;

/// Default KL tolerance of [`calibrate_c`].
pub const CALIBRATION_TOL: f64 = 2e-3;

/// Variance of every synthetic cluster.
pub const SYNTHETIC_VAR: f64 = 1.0;

const TABLE1: [([f64; 5], [f64; 5]); 3] = [
    ([0.2, 0.2, 0.2, 0.2, 0.2], [-50.0, -30.0, 0.0, 30.0, 50.0]),
    ([0.1, 0.1, 0.6, 0.1, 0.1], [-50.0, -30.0, 0.0, 30.0, 50.0]),
    ([0.5, 0.1, 0.1, 0.1, 0.2], [-50.0, 10.0, 30.0, 50.0, 80.0]),
];

/// One of the three synthetic noise models at separation `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticModelSpec {
    pub model_id: u8,
    pub c: f64,
}

impl SyntheticModelSpec {
    pub fn new(model_id: u8, c: f64) -> Result<Self> {
        table1_template(model_id)?;
        if !(c.is_finite() && c >= 0.0) {
            return Err(Error::invalid("separation c", format!("{c} must be nonnegative")));
        }
        Ok(SyntheticModelSpec { model_id, c })
    }

    /// Weights and unscaled mean template.
    pub fn template(&self) -> (&'static [f64; 5], &'static [f64; 5]) {
        let (w, m) = &TABLE1[self.model_id as usize - 1];
        (w, m)
    }

    /// The noise mixture, shared by process and measurement noise.
    pub fn mixture(&self) -> Result<GaussianMixture> {
        let (w, m) = self.template();
        let means: Vec<f64> = m.iter().map(|m| self.c * m).collect();
        GaussianMixture::scalar(w, &means, &[SYNTHETIC_VAR; 5])
    }

    pub fn system(&self, grid: &TimeGrid) -> Result<SystemModel> {
        let gm = self.mixture()?;
        rw_velocity_model(&gm, &gm, grid)
    }
}

fn table1_template(model_id: u8) -> Result<()> {
    if (1..=3).contains(&model_id) {
        Ok(())
    } else {
        Err(Error::invalid("synthetic model", format!("id {model_id} (expected 1, 2 or 3)")))
    }
}

/// Process and measurement mixtures of a synthetic model (identical).
pub fn build_table1(model_id: u8, c: f64) -> Result<(GaussianMixture, GaussianMixture)> {
    let gm = SyntheticModelSpec::new(model_id, c)?.mixture()?;
    Ok((gm.clone(), gm))
}

/// `KL(m ‖ moment_match(m))` by Monte Carlo.
pub fn kl_to_moment_match(m: &GaussianMixture, n_samples: usize, seed: u64) -> Result<KlEstimate> {
    let g = m.moment_match();
    m.kl_mc(&g, n_samples, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub c: f64,
    pub kl: KlEstimate,
    pub evaluations: usize,
}

/// Finds the separation `c` at which the model's noise mixture is `target_kl`
/// away from its moment-matched Gaussian.
///
/// Every evaluation reuses the same random stream, which makes the estimated
/// KL a smooth nondecreasing function of `c` and keeps bisection stable.
pub fn calibrate_c(model_id: u8, target_kl: f64, tol: f64, seed: u64) -> Result<Calibration> {
    calibrate_c_with(model_id, target_kl, tol, seed, KL_SAMPLES)
}

pub fn calibrate_c_with(model_id: u8, target_kl: f64, tol: f64, seed: u64, n_samples: usize) -> Result<Calibration> {
    table1_template(model_id)?;
    if !(target_kl > 0.0 && target_kl.is_finite()) {
        return Err(Error::invalid("target KL", format!("{target_kl} must be positive")));
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::invalid("calibration tolerance", "must be positive"));
    }
    let mut evaluations = 0;
    let mut kl_at = |c: f64| -> Result<KlEstimate> {
        evaluations += 1;
        kl_to_moment_match(&SyntheticModelSpec::new(model_id, c)?.mixture()?, n_samples, seed)
    };

    let mut lo = 0.0;
    let mut hi = 0.05;
    let mut kl_hi = kl_at(hi)?;
    let mut expansions = 0;
    while kl_hi.value < target_kl {
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        if expansions > 40 {
            return Err(Error::NoConvergence(expansions));
        }
        let next = kl_at(hi)?;
        if next.value < kl_hi.value - 3.0 * next.stderr.max(kl_hi.stderr) {
            return Err(Error::invalid("calibration", "KL is not monotone in c over the bracket"));
        }
        kl_hi = next;
    }
    if (kl_hi.value - target_kl).abs() < tol {
        return Ok(Calibration { c: hi, kl: kl_hi, evaluations });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let kl = kl_at(mid)?;
        if (kl.value - target_kl).abs() < tol || hi - lo < 1e-12 {
            return Ok(Calibration { c: mid, kl, evaluations });
        }
        if kl.value < target_kl {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NoConvergence(200))
}

/// `sqrt(mean ε²)`.
pub fn rmse(errors: &[f64]) -> f64 {
    assert!(!errors.is_empty(), "rmse of an empty error list");
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

/// Median of `|ε|`; for an even count, the midpoint of the two middle order
/// statistics.
pub fn cep(errors: &[f64]) -> f64 {
    assert!(!errors.is_empty(), "cep of an empty error list");
    let mut abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let n = abs.len();
    if n % 2 == 1 {
        abs[n / 2]
    } else {
        0.5 * (abs[n / 2 - 1] + abs[n / 2])
    }
}

/// Measured-data noise models packaged as a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
        }
    }
}

/// Reference KL divergences reported with the packaged noise models,
/// `(process, measurement)`.
pub fn table2_reference_kl(axis: Axis) -> (f64, f64) {
    match axis {
        Axis::X => (0.4253, 0.1759),
        Axis::Y => (1.1971, 0.0200),
    }
}

/// Scalar process mixture and measurement mixture for one axis. Weights are
/// renormalized where the printed values do not sum to one.
pub fn table2_mixtures(axis: Axis) -> Result<(GaussianMixture, GaussianMixture)> {
    match axis {
        Axis::X => Ok((
            GaussianMixture::scalar(&[0.13, 0.77, 0.099], &[-41.44, 0.51, 49.79], &[148.24, 48.38, 83.75])?,
            GaussianMixture::scalar(&[0.07, 0.85, 0.08], &[-300.01, -17.06, 207.37], &[8163.20, 3611.99, 5677.21])?,
        )),
        Axis::Y => Ok((
            GaussianMixture::scalar(
                &[0.01, 0.06, 0.03, 0.03, 0.72, 0.04, 0.02, 0.06, 0.03],
                &[-63.38, -48.73, -35.65, -17.40, -0.32, 9.52, 30.09, 44.24, 54.35],
                &[24.34, 21.53, 18.18, 23.62, 3.13, 12.16, 18.81, 12.96, 15.44],
            )?,
            GaussianMixture::scalar(&[0.98, 0.02], &[-125.93, 147.25], &[8500.19, 10809.10])?,
        )),
    }
}

pub fn table2_system(axis: Axis, grid: &TimeGrid) -> Result<SystemModel> {
    let (v, w) = table2_mixtures(axis)?;
    rw_velocity_model(&v, &w, grid)
}

/// The x- and y-axis tracking models.
pub fn build_table2_scenario(grid: &TimeGrid) -> Result<(SystemModel, SystemModel)> {
    Ok((table2_system(Axis::X, grid)?, table2_system(Axis::Y, grid)?))
}

/// Monte-Carlo configuration shared by every method of a sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct McSetup {
    pub x0: DVector<f64>,
    /// Filters start at the true `x0` with covariance `prior_var · I`.
    pub prior_var: f64,
    pub n_runs: usize,
    pub n_steps: usize,
    pub dt_ticks: u32,
    pub seed: u64,
    pub methods: Vec<MethodKind>,
    pub preloaded: PreloadedGains,
    /// State component the error is measured on; 0 is position.
    pub error_component: usize,
}

impl Default for McSetup {
    fn default() -> Self {
        McSetup {
            x0: DVector::zeros(2),
            prior_var: 1e-2,
            n_runs: 200,
            n_steps: 500,
            dt_ticks: 1,
            seed: 0,
            methods: MethodKind::all(),
            preloaded: PreloadedGains::PerModel,
            error_component: 0,
        }
    }
}

impl McSetup {
    pub fn prior(&self) -> KalmanState {
        let n = self.x0.len();
        KalmanState::new(self.x0.clone(), DMatrix::identity(n, n) * self.prior_var)
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::uniform(self.n_steps, self.dt_ticks)
    }
}

/// The random stream of run `run`: one ChaCha stream per run, so results do
/// not depend on how runs are scheduled.
pub fn run_rng(seed: u64, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunMetrics {
    pub run: usize,
    pub rmse: f64,
    pub cep: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodReport {
    pub method: MethodKind,
    pub runs: Vec<RunMetrics>,
    /// Runs where the filter failed, with the error message.
    pub aborted: Vec<(usize, String)>,
    /// Mean of the per-run RMSEs.
    pub rmse: f64,
    pub rmse_stderr: f64,
    /// CEP of all errors pooled over the completed runs.
    pub cep: f64,
    pub n_steps: usize,
    pub pooled_errors: usize,
}

impl MethodReport {
    pub fn completed(&self) -> bool {
        self.aborted.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub methods: Vec<MethodReport>,
    pub n_runs: usize,
    pub n_steps: usize,
    pub seed: u64,
}

impl McReport {
    pub fn method(&self, kind: MethodKind) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == kind)
    }

    /// Mean and standard error of the per-run RMSE difference `a − b` over
    /// runs both completed. Runs share trajectories, so the paired error is
    /// much tighter than the separate ones.
    pub fn paired_difference(&self, a: MethodKind, b: MethodKind) -> Option<(f64, f64)> {
        let (ra, rb) = (self.method(a)?, self.method(b)?);
        let diffs: Vec<f64> = ra
            .runs
            .iter()
            .filter_map(|x| rb.runs.iter().find(|y| y.run == x.run).map(|y| x.rmse - y.rmse))
            .collect();
        if diffs.is_empty() {
            return None;
        }
        Some(mean_stderr(&diffs))
    }

    pub fn all_completed(&self) -> bool {
        self.methods.iter().all(MethodReport::completed)
    }
}

/// Sample mean and its standard error.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Errors of each method on one trajectory, in method order.
pub fn evaluate_trajectory(
    methods: &[Method],
    model: &SystemModel,
    traj: &Trajectory,
    prior: &KalmanState,
    component: usize,
) -> Vec<Result<Vec<f64>>> {
    let Some(truth) = traj.states.as_ref() else {
        return methods
            .iter()
            .map(|_| Err(Error::invalid("trajectory", "ground truth needed for error metrics")))
            .collect();
    };
    methods
        .iter()
        .map(|m| {
            let out = run_filter(m, model, traj, prior)?;
            Ok(out
                .estimates
                .iter()
                .zip(truth)
                .map(|(est, x)| est[component] - x[component])
                .collect())
        })
        .collect()
}

/// Folds per-run error lists (`per_run[run][method]`) into reports.
pub fn aggregate(kinds: &[MethodKind], per_run: Vec<Vec<Result<Vec<f64>>>>, n_steps: usize, seed: u64) -> McReport {
    let n_runs = per_run.len();
    let mut methods: Vec<MethodReport> = kinds
        .iter()
        .map(|&method| MethodReport {
            method,
            runs: Vec::new(),
            aborted: Vec::new(),
            rmse: f64::NAN,
            rmse_stderr: f64::NAN,
            cep: f64::NAN,
            n_steps,
            pooled_errors: 0,
        })
        .collect();
    let mut pooled: Vec<Vec<f64>> = vec![Vec::new(); kinds.len()];
    for (run, results) in per_run.into_iter().enumerate() {
        for (m, res) in results.into_iter().enumerate() {
            match res {
                Ok(errors) if !errors.is_empty() => {
                    methods[m].runs.push(RunMetrics {
                        run,
                        rmse: rmse(&errors),
                        cep: cep(&errors),
                    });
                    pooled[m].extend(errors);
                }
                Ok(_) => methods[m].aborted.push((run, "no steps".into())),
                Err(e) => methods[m].aborted.push((run, e.to_string())),
            }
        }
    }
    for (report, errors) in methods.iter_mut().zip(pooled) {
        if report.runs.is_empty() {
            continue;
        }
        let rmses: Vec<f64> = report.runs.iter().map(|r| r.rmse).collect();
        (report.rmse, report.rmse_stderr) = mean_stderr(&rmses);
        report.cep = cep(&errors);
        report.pooled_errors = errors.len();
    }
    McReport {
        methods,
        n_runs,
        n_steps,
        seed,
    }
}

/// Monte-Carlo comparison on `model`: every run simulates one trajectory that
/// all methods then filter.
pub fn run_mc_model(model: &SystemModel, setup: &McSetup) -> Result<McReport> {
    if setup.n_runs == 0 || setup.n_steps == 0 {
        return Err(Error::invalid("monte-carlo setup", "runs and steps must be positive"));
    }
    if setup.error_component >= model.state_dim() {
        return Err(Error::invalid("monte-carlo setup", "error component out of range"));
    }
    let grid = setup.grid()?;
    let prior = setup.prior();
    let mut factory = MethodFactory::new(model, prior.cov.clone(), setup.n_steps, setup.preloaded);
    let methods = setup
        .methods
        .iter()
        .map(|&k| factory.build(k))
        .collect::<Result<Vec<_>>>()?;
    let per_run = (0..setup.n_runs)
        .into_par_iter()
        .map(|run| -> Result<Vec<Result<Vec<f64>>>> {
            let traj = simulate(model, &setup.x0, &grid, &mut run_rng(setup.seed, run))?;
            Ok(evaluate_trajectory(&methods, model, &traj, &prior, setup.error_component))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(&setup.methods, per_run, setup.n_steps, setup.seed))
}

/// [`run_mc_model`] on a synthetic model.
pub fn run_mc(spec: &SyntheticModelSpec, setup: &McSetup) -> Result<McReport> {
    let model = spec.system(&setup.grid()?)?;
    run_mc_model(&model, setup)
}

/// Filter outputs for a set of externally supplied trajectories.
#[derive(Debug, Clone)]
pub struct TrajectoryReport {
    /// `outputs[t][m]`: method `m` on trajectory `t`.
    pub outputs: Vec<Vec<Result<FilterOutput>>>,
    /// Error metrics, present when every trajectory carries ground truth.
    pub metrics: Option<McReport>,
}

/// Runs every method of `setup` over `trajs`. Each trajectory gets its own
/// model from `model_for`, since logged sampling intervals may differ.
/// `setup.n_runs` and `setup.n_steps` are ignored.
pub fn run_trajectories<F>(trajs: &[Trajectory], model_for: F, setup: &McSetup) -> Result<TrajectoryReport>
where
    F: Fn(&TimeGrid) -> Result<SystemModel> + Sync,
{
    if trajs.is_empty() {
        return Err(Error::invalid("trajectory set", "empty"));
    }
    let prior = setup.prior();
    let outputs = trajs
        .par_iter()
        .map(|traj| -> Result<Vec<Result<FilterOutput>>> {
            traj.validate()?;
            let model = model_for(&traj.grid)?;
            let mut factory = MethodFactory::new(&model, prior.cov.clone(), traj.len(), setup.preloaded);
            Ok(setup
                .methods
                .iter()
                .map(|&k| factory.build(k).and_then(|m| run_filter(&m, &model, traj, &prior)))
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;

    let metrics = if trajs.iter().all(|t| t.states.is_some()) {
        let c = setup.error_component;
        let per_run = trajs
            .iter()
            .zip(&outputs)
            .map(|(traj, outs)| {
                let truth = traj.states.as_ref().expect("checked above");
                outs.iter()
                    .map(|o| match o {
                        Ok(out) => Ok(out.estimates.iter().zip(truth).map(|(e, x)| e[c] - x[c]).collect()),
                        Err(e) => Err(e.clone()),
                    })
                    .collect()
            })
            .collect();
        let n_steps = trajs.iter().map(Trajectory::len).max().unwrap_or(0);
        Some(aggregate(&setup.methods, per_run, n_steps, setup.seed))
    } else {
        None
    };
    Ok(TrajectoryReport { outputs, metrics })
}

/// One point of a KL sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub kl_target: f64,
    pub calibration: Calibration,
    pub report: McReport,
}

/// Calibrates `c` for each target KL and runs the Monte-Carlo comparison
/// there.
pub fn sweep_kl(model_id: u8, targets: &[f64], setup: &McSetup) -> Result<Vec<SweepPoint>> {
    targets
        .iter()
        .map(|&kl_target| {
            let calibration = calibrate_c(model_id, kl_target, CALIBRATION_TOL, setup.seed)?;
            let report = run_mc(&SyntheticModelSpec::new(model_id, calibration.c)?, setup)?;
            Ok(SweepPoint {
                kl_target,
                calibration,
                report,
            })
        })
        .collect()
}
