//! Runs a resolved [`RunConfig`] and writes its result files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use gsf_core::bench::{
    calibrate_c_with, run_mc_model, run_rng, run_trajectories, table2_system, McReport, McSetup,
    SyntheticModelSpec,
};
use gsf_core::kalman::{self, GainKind, GainSchedule, GainSet, RICCATI_MAX_ITER, RICCATI_TOL};
use gsf_core::runner::PreloadedGains;
use gsf_core::state_space::simulate;
use gsf_core::{SystemModel, TimeGrid};
use nalgebra::{DMatrix, DVector};

use crate::config::{Command, RunConfig, Scenario, Separation};
use crate::error::{CliError, Result};
use crate::output::{OutputSet, Provenance};
use crate::trajectory::{ingest_trajectory, write_trajectory};

/// Exit status when some method aborted at least one run.
pub const EXIT_ABORTED: i32 = 3;

/// What a successful command produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub exit_code: i32,
    pub written: Vec<PathBuf>,
}

/// Runs `cfg`, printing progress and summaries to `out`.
///
/// Result files appear only if the whole command succeeds. A command whose
/// methods abort some runs still writes its results but reports
/// [`EXIT_ABORTED`].
pub fn execute(cfg: &RunConfig, out: &mut dyn Write) -> Result<Outcome> {
    let mut say = |s: String| writeln!(out, "{s}").map_err(|e| CliError::io("<stdout>", e));
    for line in cfg.resolved_text().lines() {
        say(format!("# {line}"))?;
    }
    let provenance = Provenance {
        command: cfg.command.name().to_string(),
        config_hash: cfg.hash(),
        seed: cfg.bench.seed,
    };
    let mut outputs = OutputSet::new(&cfg.output, provenance)?;
    outputs.text("config.resolved", &cfg.resolved_text())?;
    let all_completed = match cfg.command {
        Command::RunSynthetic => run_synthetic(cfg, &mut outputs, &mut say)?,
        Command::RunFile => run_file(cfg, &mut outputs, &mut say)?,
        Command::Calibrate => calibrate(cfg, &mut outputs, &mut say)?,
        Command::Gains => gains(cfg, &mut outputs, &mut say)?,
        Command::Simulate => simulate_files(cfg, &mut outputs, &mut say)?,
    };
    let written = outputs.commit()?;
    for p in &written {
        say(format!("wrote {}", p.display()))?;
    }
    Ok(Outcome {
        exit_code: if all_completed { 0 } else { EXIT_ABORTED },
        written,
    })
}

type Say<'a> = dyn FnMut(String) -> Result<()> + 'a;

fn setup(cfg: &RunConfig, n_steps: usize) -> McSetup {
    let b = &cfg.bench;
    McSetup {
        x0: DVector::from_column_slice(&b.x0),
        prior_var: b.prior_var,
        n_runs: b.n_runs,
        n_steps,
        dt_ticks: b.dt_ticks,
        seed: b.seed,
        methods: b.methods.clone(),
        preloaded: b.preloaded,
        error_component: b.error_component,
    }
}

/// A separation constant, calibrated first when given as a KL target.
/// `kl` overrides the configured target (one point of a sweep).
fn resolve_c(cfg: &RunConfig, model_id: u8, kl: Option<f64>, say: &mut Say) -> Result<f64> {
    let target = kl.or(match &cfg.separation {
        Some(Separation::Kl(k)) => k.first().copied(),
        _ => None,
    });
    if let Some(target) = target {
        let cal = calibrate_c_with(model_id, target, cfg.calibrate_tol, cfg.bench.seed, cfg.calibrate_samples)?;
        say(format!(
            "model {model_id}: KL {target} -> c = {:.6} (KL {:.4} ± {:.4})",
            cal.c, cal.kl.value, cal.kl.stderr
        ))?;
        return Ok(cal.c);
    }
    match &cfg.separation {
        Some(Separation::C(c)) => Ok(*c),
        _ => Err(CliError::usage("no separation given")),
    }
}

fn scenario_model(cfg: &RunConfig, grid: &TimeGrid, c: Option<f64>) -> Result<SystemModel> {
    match cfg.scenario.expect("resolved config has a scenario") {
        Scenario::Table2(axis) => Ok(table2_system(axis, grid)?),
        Scenario::Synthetic(id) => {
            let c = c.ok_or_else(|| CliError::usage("synthetic scenario needs a separation"))?;
            Ok(SyntheticModelSpec::new(id, c)?.system(grid)?)
        }
    }
}

fn scenario_c(cfg: &RunConfig, say: &mut Say) -> Result<Option<f64>> {
    match cfg.scenario {
        Some(Scenario::Synthetic(id)) => resolve_c(cfg, id, None, say).map(Some),
        _ => Ok(None),
    }
}

fn f(x: f64) -> String {
    x.to_string()
}

fn opt(x: Option<f64>) -> String {
    x.map(f).unwrap_or_default()
}

fn summary_table(report: &McReport, say: &mut Say) -> Result<()> {
    say(format!(
        "{:<16} {:>6} {:>7} {:>12} {:>10} {:>12}",
        "method", "runs", "aborted", "rmse", "stderr", "cep"
    ))?;
    for m in &report.methods {
        say(format!(
            "{:<16} {:>6} {:>7} {:>12.4} {:>10.4} {:>12.4}",
            m.method.to_string(),
            m.runs.len(),
            m.aborted.len(),
            m.rmse,
            m.rmse_stderr,
            m.cep
        ))?;
        for (run, msg) in &m.aborted {
            say(format!("  {} aborted run {run}: {msg}", m.method))?;
        }
    }
    Ok(())
}

/// One sweep point's rows for the results, summary and figure files.
struct Rows {
    results: Vec<Vec<String>>,
    summary: Vec<Vec<String>>,
    figure: Vec<Vec<String>>,
}

impl Rows {
    fn new() -> Self {
        Rows {
            results: Vec::new(),
            summary: Vec::new(),
            figure: Vec::new(),
        }
    }

    fn add(&mut self, report: &McReport, scenario: &str, kl_target: Option<f64>, c: Option<f64>) {
        for m in &report.methods {
            let method = m.method.to_string();
            for r in &m.runs {
                self.results.push(vec![
                    method.clone(),
                    r.run.to_string(),
                    f(r.rmse),
                    f(r.cep),
                    opt(kl_target),
                    opt(c),
                    report.seed.to_string(),
                ]);
            }
            self.summary.push(vec![
                scenario.to_string(),
                opt(kl_target),
                opt(c),
                method.clone(),
                m.runs.len().to_string(),
                m.aborted.len().to_string(),
                f(m.rmse),
                f(m.rmse_stderr),
                f(m.cep),
                m.pooled_errors.to_string(),
            ]);
            for (metric, value, stderr) in [("rmse", m.rmse, Some(m.rmse_stderr)), ("cep", m.cep, None)] {
                self.figure.push(vec![
                    scenario.to_string(),
                    opt(kl_target),
                    opt(c),
                    method.clone(),
                    metric.to_string(),
                    f(value),
                    opt(stderr),
                ]);
            }
        }
    }

    fn stage(self, outputs: &mut OutputSet) -> Result<()> {
        outputs.csv(
            "results.csv",
            &["method", "run", "rmse", "cep", "kl_target", "c", "seed"],
            self.results,
        )?;
        outputs.csv(
            "summary.csv",
            &[
                "scenario",
                "kl_target",
                "c",
                "method",
                "runs",
                "aborted",
                "rmse",
                "rmse_stderr",
                "cep",
                "pooled_errors",
            ],
            self.summary,
        )?;
        outputs.csv(
            "figure.csv",
            &["scenario", "kl_target", "c", "method", "metric", "value", "stderr"],
            self.figure,
        )
    }
}

fn run_synthetic(cfg: &RunConfig, outputs: &mut OutputSet, say: &mut Say) -> Result<bool> {
    let id = cfg.model_id().expect("run-synthetic has a model");
    let points: Vec<Option<f64>> = match &cfg.separation {
        Some(Separation::Kl(k)) => k.iter().copied().map(Some).collect(),
        _ => vec![None],
    };
    let setup = setup(cfg, cfg.bench.n_steps);
    let grid = setup.grid()?;
    let scenario = format!("model{id}");
    let mut rows = Rows::new();
    let mut all_completed = true;
    for kl in points {
        let c = resolve_c(cfg, id, kl, say)?;
        let model = SyntheticModelSpec::new(id, c)?.system(&grid)?;
        let report = run_mc_model(&model, &setup)?;
        say(format!(
            "model {id}, c = {c}{}, {} runs x {} steps",
            kl.map(|k| format!(", KL target {k}")).unwrap_or_default(),
            setup.n_runs,
            setup.n_steps
        ))?;
        summary_table(&report, say)?;
        all_completed &= report.all_completed();
        rows.add(&report, &scenario, kl, Some(c));
    }
    rows.stage(outputs)?;
    Ok(all_completed)
}

/// Input paths with directories expanded to their `*.csv` files in name
/// order.
pub fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| CliError::io(p, e))?
                .map(|e| e.map(|e| e.path()).map_err(|err| CliError::io(p, err)))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .filter(|f| f.extension().is_some_and(|e| e == "csv"))
                .collect();
            found.sort();
            if found.is_empty() {
                return Err(CliError::usage(format!("{} holds no .csv files", p.display())));
            }
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn run_file(cfg: &RunConfig, outputs: &mut OutputSet, say: &mut Say) -> Result<bool> {
    let files = expand_inputs(&cfg.inputs)?;
    let trajs = files
        .iter()
        .map(|p| ingest_trajectory(p))
        .collect::<Result<Vec<_>>>()?;
    let c = scenario_c(cfg, say)?;
    let setup = setup(cfg, 0);
    let report = run_trajectories(&trajs, |grid| scenario_model(cfg, grid, c).map_err(core_error), &setup)?;
    say(format!("{} trajectories, scenario {}", trajs.len(), cfg.scenario.expect("resolved")))?;

    let mut all_completed = true;
    for (t, outs) in report.outputs.iter().enumerate() {
        for (m, o) in outs.iter().enumerate() {
            if let Err(e) = o {
                all_completed = false;
                say(format!("  {} failed on {}: {e}", setup.methods[m], files[t].display()))?;
            }
        }
    }
    outputs.csv(
        "inputs.csv",
        &["run", "path", "steps"],
        files
            .iter()
            .zip(&trajs)
            .enumerate()
            .map(|(k, (p, t))| vec![k.to_string(), p.display().to_string(), t.len().to_string()]),
    )?;
    match &report.metrics {
        Some(metrics) => {
            summary_table(metrics, say)?;
            let mut rows = Rows::new();
            rows.add(metrics, &cfg.scenario.expect("resolved").to_string(), None, c);
            rows.stage(outputs)?;
        }
        None => say("no ground truth in the inputs; writing estimates only".into())?,
    }
    if cfg.write_estimates || report.metrics.is_none() {
        let mut rows = Vec::new();
        for (t, outs) in report.outputs.iter().enumerate() {
            for (m, o) in outs.iter().enumerate() {
                let Ok(o) = o else { continue };
                for (k, (x, chosen)) in o.estimates.iter().zip(&o.chosen).enumerate() {
                    let (ci, cj) = chosen.map_or((String::new(), String::new()), |c| (c.i.to_string(), c.j.to_string()));
                    rows.push(vec![
                        t.to_string(),
                        setup.methods[m].to_string(),
                        k.to_string(),
                        f(x[0]),
                        f(x[1]),
                        ci,
                        cj,
                    ]);
                }
            }
        }
        outputs.csv(
            "estimates.csv",
            &["run", "method", "step", "x_pos", "x_vel", "chosen_v", "chosen_w"],
            rows,
        )?;
    }
    Ok(all_completed && report.metrics.as_ref().is_none_or(McReport::all_completed))
}

fn core_error(e: CliError) -> gsf_core::Error {
    match e {
        CliError::Core(e) => e,
        other => gsf_core::Error::Invalid {
            what: "scenario",
            reason: other.to_string(),
        },
    }
}

fn calibrate(cfg: &RunConfig, outputs: &mut OutputSet, say: &mut Say) -> Result<bool> {
    let id = cfg.model_id().expect("calibrate has a model");
    let Some(Separation::Kl(targets)) = &cfg.separation else {
        unreachable!("resolved calibrate config has KL targets")
    };
    let mut rows = Vec::new();
    for &target in targets {
        let cal = calibrate_c_with(id, target, cfg.calibrate_tol, cfg.bench.seed, cfg.calibrate_samples)?;
        say(format!(
            "model {id}: KL {target} -> c = {:.6} (KL {:.4} ± {:.4}, {} evaluations)",
            cal.c, cal.kl.value, cal.kl.stderr, cal.evaluations
        ))?;
        rows.push(vec![
            id.to_string(),
            f(target),
            f(cal.c),
            f(cal.kl.value),
            f(cal.kl.stderr),
            cal.evaluations.to_string(),
            cfg.calibrate_samples.to_string(),
            cfg.bench.seed.to_string(),
        ]);
    }
    outputs.csv(
        "calibration.csv",
        &["model", "kl_target", "c", "kl", "kl_stderr", "evaluations", "samples", "seed"],
        rows,
    )?;
    Ok(true)
}

fn gain_entries(k: &DMatrix<f64>) -> Vec<String> {
    // row-major
    (0..k.nrows())
        .flat_map(|r| (0..k.ncols()).map(move |c| (r, c)))
        .map(|(r, c)| f(k[(r, c)]))
        .collect()
}

fn entry_names(k: &DMatrix<f64>) -> Vec<String> {
    (0..k.nrows() * k.ncols()).map(|e| format!("k_{e}")).collect()
}

fn gains(cfg: &RunConfig, outputs: &mut OutputSet, say: &mut Say) -> Result<bool> {
    let c = scenario_c(cfg, say)?;
    let grid = TimeGrid::uniform(cfg.bench.n_steps, cfg.bench.dt_ticks)?;
    let model = scenario_model(cfg, &grid, c)?;
    let p0 = DMatrix::identity(model.state_dim(), model.state_dim()) * cfg.bench.prior_var;
    let set = match (cfg.gains_kind, cfg.bench.preloaded) {
        (GainKind::SteadyState, _) => kalman::steady_per_model(&model, RICCATI_TOL, RICCATI_MAX_ITER)?,
        (GainKind::Preloaded, PreloadedGains::PerModel) => kalman::preloaded_per_model(&model, &p0, grid.len())?,
        (GainKind::Preloaded, PreloadedGains::Shared) => kalman::preloaded_shared(&model, &p0, grid.len())?,
    };
    let schedules: Vec<(String, String, &GainSchedule)> = match &set {
        GainSet::Shared(s) => vec![("*".into(), "*".into(), s)],
        GainSet::PerModel { c_w, schedules } => schedules
            .iter()
            .enumerate()
            .map(|(n, s)| ((n / c_w).to_string(), (n % c_w).to_string(), s))
            .collect(),
    };
    let first = &schedules[0].2.gains[0];
    let mut header = vec!["i".to_string(), "j".to_string()];
    let steady = cfg.gains_kind == GainKind::SteadyState;
    if !steady {
        header.push("step".into());
    }
    header.extend(entry_names(first));
    let mut rows = Vec::new();
    for (i, j, s) in &schedules {
        for (k, g) in s.gains.iter().enumerate() {
            let mut row = vec![i.clone(), j.clone()];
            if !steady {
                row.push(k.to_string());
            }
            row.extend(gain_entries(g));
            rows.push(row);
        }
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    outputs.csv("gains.csv", &header, rows)?;
    say(format!(
        "{} gains for {} schedule(s) of scenario {}",
        if steady { "steady-state" } else { "preloaded" },
        schedules.len(),
        cfg.scenario.expect("resolved")
    ))?;
    Ok(true)
}

/// File name of simulated run `run`.
pub fn trajectory_file_name(run: usize) -> String {
    format!("traj_{run:05}.csv")
}

fn simulate_files(cfg: &RunConfig, outputs: &mut OutputSet, say: &mut Say) -> Result<bool> {
    let c = scenario_c(cfg, say)?;
    let grid = TimeGrid::uniform(cfg.bench.n_steps, cfg.bench.dt_ticks)?;
    let model = scenario_model(cfg, &grid, c)?;
    let x0 = DVector::from_column_slice(&cfg.bench.x0);
    for run in 0..cfg.bench.n_runs {
        // same stream as the in-memory Monte-Carlo harness, so files
        // reproduce its runs exactly
        let traj = simulate(&model, &x0, &grid, &mut run_rng(cfg.bench.seed, run))?;
        outputs.with_writer(&trajectory_file_name(run), |header, file| {
            write_trajectory(&traj, header, file)
        })?;
    }
    say(format!(
        "simulated {} runs x {} steps of scenario {}",
        cfg.bench.n_runs,
        cfg.bench.n_steps,
        cfg.scenario.expect("resolved")
    ))?;
    Ok(true)
}

/// Reads a result file and drops its timestamp line.
pub fn read_stable(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(crate::output::strip_created(&text))
}
