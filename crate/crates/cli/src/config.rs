//! Command-line flags, the key-value config file, and their resolution into a
//! [`RunConfig`].
//!
//! A config file holds one `key = value` pair per line with dotted keys such
//! as `bench.n_runs = 200`; `#` starts a comment. Flags override file values
//! and the file overrides built-in defaults. The default output directory
//! comes from `GSF_OUTPUT_DIR` when neither a flag nor the file sets one.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use gsf_core::bench::{Axis, CALIBRATION_TOL, KL_SAMPLES};
use gsf_core::kalman::GainKind;
use gsf_core::runner::{parse_methods, MethodKind, PreloadedGains};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const OUTPUT_DIR_ENV: &str = "GSF_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "gsf-out";

/// Every key a config file may set.
pub const KEYS: &[&str] = &[
    "scenario",
    "model.id",
    "model.c",
    "model.kl",
    "bench.n_runs",
    "bench.n_steps",
    "bench.seed",
    "bench.dt_ticks",
    "bench.schemes",
    "bench.preloaded",
    "bench.error",
    "bench.x0",
    "bench.prior_var",
    "calibrate.tol",
    "calibrate.samples",
    "gains.kind",
    "io.output",
    "io.input",
    "io.estimates",
];

#[derive(Debug, Parser)]
#[command(name = "gsf", version, about = "Gaussian sum filter benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Monte-Carlo comparison on a synthetic noise model.
    RunSynthetic(RunSyntheticArgs),
    /// Filter trajectories read from CSV files.
    RunFile(RunFileArgs),
    /// Find the separation c of a synthetic model for target KL values.
    Calibrate(CalibrateArgs),
    /// Export preloaded or steady-state gains of every bank member.
    Gains(GainsArgs),
    /// Write simulated trajectories as CSV files.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// Key-value config file; flags override its values.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory [default: $GSF_OUTPUT_DIR or gsf-out].
    #[arg(long, value_name = "DIR")]
    pub output: Option<String>,
    /// Master seed of all random streams [default: 0].
    #[arg(long)]
    pub seed: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct SimArgs {
    /// Monte-Carlo runs [default: 200].
    #[arg(long)]
    pub runs: Option<String>,
    /// Steps per run [default: 500].
    #[arg(long)]
    pub steps: Option<String>,
    /// Sampling interval in ticks of 0.1080 s.
    #[arg(long)]
    pub dt_ticks: Option<String>,
    /// Initial state `pos,vel`.
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct FilterArgs {
    /// Comma-separated methods: kalman, merge, remove, matched, proposed:{gsfm,gsfr,pkg,ssg,dkg}.
    #[arg(long)]
    pub schemes: Option<String>,
    /// Offline gains for proposed:pkg: per-model or shared.
    #[arg(long)]
    pub preloaded: Option<String>,
    /// State component scored by RMSE and CEP: position or velocity.
    #[arg(long)]
    pub error: Option<String>,
    /// Diagonal of the filters' initial covariance.
    #[arg(long)]
    pub prior_var: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct SeparationArgs {
    /// Separation constant of the synthetic model.
    #[arg(long, conflicts_with = "kl")]
    pub c: Option<String>,
    /// Target KL value(s), comma-separated; c is calibrated for each.
    #[arg(long)]
    pub kl: Option<String>,
}

#[derive(Debug, Args)]
pub struct RunSyntheticArgs {
    /// Synthetic model 1, 2 or 3.
    #[arg(long)]
    pub model: Option<String>,
    #[command(flatten)]
    pub separation: SeparationArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    #[command(flatten)]
    pub filter: FilterArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct RunFileArgs {
    /// Trajectory CSV file or directory of them; repeatable.
    #[arg(long)]
    pub input: Vec<String>,
    /// Noise model: table2-x, table2-y, model1, model2, model3.
    #[arg(long)]
    pub scenario: Option<String>,
    #[command(flatten)]
    pub separation: SeparationArgs,
    /// Also write per-step estimates.
    #[arg(long)]
    pub estimates: bool,
    /// Prior mean `pos,vel` of every filter.
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
    #[command(flatten)]
    pub filter: FilterArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Synthetic model 1, 2 or 3.
    #[arg(long)]
    pub model: Option<String>,
    /// Target KL value(s), comma-separated.
    #[arg(long)]
    pub kl: Option<String>,
    /// Accepted distance between estimated and target KL.
    #[arg(long)]
    pub tol: Option<String>,
    /// Monte-Carlo samples per KL estimate.
    #[arg(long)]
    pub samples: Option<String>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct GainsArgs {
    /// Steady-state gains instead of the preloaded schedule.
    #[arg(long)]
    pub steady: bool,
    /// Noise model: table2-x, table2-y, model1, model2, model3.
    #[arg(long)]
    pub scenario: Option<String>,
    #[command(flatten)]
    pub separation: SeparationArgs,
    /// Horizon of the preloaded schedule.
    #[arg(long)]
    pub steps: Option<String>,
    /// Sampling interval in ticks of 0.1080 s.
    #[arg(long)]
    pub dt_ticks: Option<String>,
    /// Offline gain source: per-model or shared.
    #[arg(long)]
    pub preloaded: Option<String>,
    /// Diagonal of the initial covariance.
    #[arg(long)]
    pub prior_var: Option<String>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Noise model: table2-x, table2-y, model1, model2, model3.
    #[arg(long)]
    pub scenario: Option<String>,
    #[command(flatten)]
    pub separation: SeparationArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    RunSynthetic,
    RunFile,
    Calibrate,
    Gains,
    Simulate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::RunSynthetic => "run-synthetic",
            Command::RunFile => "run-file",
            Command::Calibrate => "calibrate",
            Command::Gains => "gains",
            Command::Simulate => "simulate",
        }
    }
}

/// A noise model the commands can run on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Table2(Axis),
    Synthetic(u8),
}

impl FromStr for Scenario {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table2-x" => Ok(Scenario::Table2(Axis::X)),
            "table2-y" => Ok(Scenario::Table2(Axis::Y)),
            "model1" => Ok(Scenario::Synthetic(1)),
            "model2" => Ok(Scenario::Synthetic(2)),
            "model3" => Ok(Scenario::Synthetic(3)),
            other => Err(CliError::usage(format!(
                "unknown scenario `{other}` (expected table2-x, table2-y, model1, model2 or model3)"
            ))),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::Table2(axis) => write!(f, "table2-{}", axis.name()),
            Scenario::Synthetic(id) => write!(f, "model{id}"),
        }
    }
}

/// How the separation of a synthetic model is given.
#[derive(Debug, Clone, PartialEq)]
pub enum Separation {
    C(f64),
    Kl(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub n_runs: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub dt_ticks: u32,
    pub methods: Vec<MethodKind>,
    pub preloaded: PreloadedGains,
    pub error_component: usize,
    pub x0: [f64; 2],
    pub prior_var: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            n_runs: 200,
            n_steps: 500,
            seed: 0,
            dt_ticks: 1,
            methods: MethodKind::all(),
            preloaded: PreloadedGains::PerModel,
            error_component: 0,
            x0: [0.0, 0.0],
            prior_var: 1e-2,
        }
    }
}

/// A fully resolved command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub scenario: Option<Scenario>,
    pub separation: Option<Separation>,
    pub bench: BenchConfig,
    pub calibrate_tol: f64,
    pub calibrate_samples: usize,
    pub gains_kind: GainKind,
    pub output: PathBuf,
    pub inputs: Vec<PathBuf>,
    pub write_estimates: bool,
}

/// Parses `key = value` lines. Unknown and repeated keys are errors.
pub fn parse_config_text(text: &str, path: &Path) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let err = |message: String| CliError::Config {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, found `{line}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(err(format!("unknown key `{key}`")));
        }
        if map.insert(key.to_string(), value.to_string()).is_some() {
            return Err(err(format!("key `{key}` set twice")));
        }
    }
    Ok(map)
}

fn load_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config_text(&text, path)
}

/// Parses arguments (including the program name) into a [`RunConfig`].
pub fn parse_config<I, T>(args: I) -> Result<RunConfig>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::usage(e.to_string()))?;
    RunConfig::from_cli(cli)
}

struct Layer {
    values: BTreeMap<String, String>,
}

impl Layer {
    fn set(&mut self, key: &str, value: &Option<String>) {
        if let Some(v) = value {
            self.values.insert(key.to_string(), v.clone());
        }
    }

    fn separation(&mut self, args: &SeparationArgs) {
        // a flag for one form replaces a file value of the other
        if args.c.is_some() {
            self.values.remove("model.kl");
        }
        if args.kl.is_some() {
            self.values.remove("model.c");
        }
        self.set("model.c", &args.c);
        self.set("model.kl", &args.kl);
    }

    fn sim(&mut self, args: &SimArgs) {
        self.set("bench.n_runs", &args.runs);
        self.set("bench.n_steps", &args.steps);
        self.set("bench.dt_ticks", &args.dt_ticks);
        self.set("bench.x0", &args.x0);
    }

    fn filter(&mut self, args: &FilterArgs) {
        self.set("bench.schemes", &args.schemes);
        self.set("bench.preloaded", &args.preloaded);
        self.set("bench.error", &args.error);
        self.set("bench.prior_var", &args.prior_var);
    }

    fn common(&mut self, args: &CommonArgs) {
        self.set("io.output", &args.output);
        self.set("bench.seed", &args.seed);
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| CliError::usage(format!("invalid value `{v}` for {key}: {e}")))
            })
            .transpose()
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    let values = v
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| CliError::usage(format!("invalid value `{v}` for {key}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(CliError::usage(format!("{key} is empty")));
    }
    Ok(values)
}

fn positive<T: PartialOrd + Default + fmt::Display>(key: &str, v: T) -> Result<T> {
    if v > T::default() {
        Ok(v)
    } else {
        Err(CliError::usage(format!("{key} must be positive, got {v}")))
    }
}

impl RunConfig {
    pub fn from_cli(cli: Cli) -> Result<Self> {
        let config_path = match &cli.command {
            CliCommand::RunSynthetic(a) => &a.common.config,
            CliCommand::RunFile(a) => &a.common.config,
            CliCommand::Calibrate(a) => &a.common.config,
            CliCommand::Gains(a) => &a.common.config,
            CliCommand::Simulate(a) => &a.common.config,
        };
        let values = match config_path {
            Some(p) => load_config_file(p)?,
            None => BTreeMap::new(),
        };
        let mut layer = Layer { values };
        let command = match &cli.command {
            CliCommand::RunSynthetic(a) => {
                layer.set("model.id", &a.model);
                layer.separation(&a.separation);
                layer.sim(&a.sim);
                layer.filter(&a.filter);
                layer.common(&a.common);
                Command::RunSynthetic
            }
            CliCommand::RunFile(a) => {
                if !a.input.is_empty() {
                    layer.values.insert("io.input".into(), a.input.join(","));
                }
                layer.set("scenario", &a.scenario);
                layer.separation(&a.separation);
                if a.estimates {
                    layer.values.insert("io.estimates".into(), "true".into());
                }
                layer.set("bench.x0", &a.x0);
                layer.filter(&a.filter);
                layer.common(&a.common);
                Command::RunFile
            }
            CliCommand::Calibrate(a) => {
                layer.set("model.id", &a.model);
                if a.kl.is_some() {
                    layer.values.remove("model.c");
                }
                layer.set("model.kl", &a.kl);
                layer.set("calibrate.tol", &a.tol);
                layer.set("calibrate.samples", &a.samples);
                layer.common(&a.common);
                Command::Calibrate
            }
            CliCommand::Gains(a) => {
                if a.steady {
                    layer.values.insert("gains.kind".into(), "steady".into());
                }
                layer.set("scenario", &a.scenario);
                layer.separation(&a.separation);
                layer.set("bench.n_steps", &a.steps);
                layer.set("bench.dt_ticks", &a.dt_ticks);
                layer.set("bench.preloaded", &a.preloaded);
                layer.set("bench.prior_var", &a.prior_var);
                layer.common(&a.common);
                Command::Gains
            }
            CliCommand::Simulate(a) => {
                layer.set("scenario", &a.scenario);
                layer.separation(&a.separation);
                layer.sim(&a.sim);
                layer.common(&a.common);
                Command::Simulate
            }
        };
        Self::resolve(command, &layer)
    }

    fn resolve(command: Command, layer: &Layer) -> Result<Self> {
        let defaults = BenchConfig::default();
        let mut bench = BenchConfig {
            n_runs: positive("bench.n_runs", layer.parse("bench.n_runs")?.unwrap_or(defaults.n_runs))?,
            n_steps: positive("bench.n_steps", layer.parse("bench.n_steps")?.unwrap_or(defaults.n_steps))?,
            seed: layer.parse("bench.seed")?.unwrap_or(defaults.seed),
            dt_ticks: positive("bench.dt_ticks", layer.parse("bench.dt_ticks")?.unwrap_or(defaults.dt_ticks))?,
            methods: defaults.methods,
            preloaded: layer.parse("bench.preloaded")?.unwrap_or(defaults.preloaded),
            error_component: match layer.get("bench.error") {
                None | Some("position") => 0,
                Some("velocity") => 1,
                Some(other) => {
                    return Err(CliError::usage(format!(
                        "invalid value `{other}` for bench.error (expected position or velocity)"
                    )))
                }
            },
            x0: defaults.x0,
            prior_var: positive("bench.prior_var", layer.parse("bench.prior_var")?.unwrap_or(defaults.prior_var))?,
        };
        if let Some(list) = layer.get("bench.schemes") {
            bench.methods = parse_methods(list).map_err(|e| CliError::usage(format!("bench.schemes: {e}")))?;
        }
        if let Some(v) = layer.get("bench.x0") {
            let x0 = parse_list("bench.x0", v)?;
            bench.x0 = x0
                .try_into()
                .map_err(|_| CliError::usage("bench.x0 needs two values `pos,vel`"))?;
        }

        let model_id: Option<u8> = layer.parse("model.id")?;
        let c: Option<f64> = layer.parse("model.c")?;
        let kl = layer.get("model.kl").map(|v| parse_list("model.kl", v)).transpose()?;
        let separation = match (c, kl) {
            (Some(_), Some(_)) => return Err(CliError::usage("give either model.c (--c) or model.kl (--kl), not both")),
            (Some(c), None) => {
                if !(c >= 0.0 && c.is_finite()) {
                    return Err(CliError::usage(format!("model.c must be nonnegative, got {c}")));
                }
                Some(Separation::C(c))
            }
            (None, Some(kl)) => {
                for &k in &kl {
                    positive("model.kl", k)?;
                }
                Some(Separation::Kl(kl))
            }
            (None, None) => None,
        };

        let mut scenario: Option<Scenario> = layer.get("scenario").map(str::parse).transpose()?;
        match command {
            Command::RunSynthetic | Command::Calibrate => {
                let id = model_id.ok_or_else(|| CliError::usage("--model (model.id) is required"))?;
                if !(1..=3).contains(&id) {
                    return Err(CliError::usage(format!("model.id must be 1, 2 or 3, got {id}")));
                }
                scenario = Some(Scenario::Synthetic(id));
                if command == Command::Calibrate && !matches!(separation, Some(Separation::Kl(_))) {
                    return Err(CliError::usage("calibrate needs target KL values (--kl)"));
                }
                if separation.is_none() {
                    return Err(CliError::usage("give exactly one of --c or --kl"));
                }
            }
            Command::RunFile | Command::Gains | Command::Simulate => {
                let s = scenario.ok_or_else(|| {
                    CliError::usage("--scenario is required (table2-x, table2-y, model1, model2 or model3)")
                })?;
                if let Scenario::Synthetic(_) = s {
                    match &separation {
                        Some(Separation::C(_)) => {}
                        Some(Separation::Kl(k)) if k.len() == 1 => {}
                        _ => {
                            return Err(CliError::usage(format!(
                                "scenario {s} needs --c or a single --kl value"
                            )))
                        }
                    }
                }
            }
        }

        let inputs: Vec<PathBuf> = layer
            .get("io.input")
            .map(|v| v.split(',').map(|s| PathBuf::from(s.trim())).collect())
            .unwrap_or_default();
        if command == Command::RunFile && inputs.is_empty() {
            return Err(CliError::usage("run-file needs at least one --input"));
        }

        let output = layer
            .get("io.output")
            .map(PathBuf::from)
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));

        Ok(RunConfig {
            command,
            scenario,
            separation,
            bench,
            calibrate_tol: positive("calibrate.tol", layer.parse("calibrate.tol")?.unwrap_or(CALIBRATION_TOL))?,
            calibrate_samples: positive(
                "calibrate.samples",
                layer.parse("calibrate.samples")?.unwrap_or(KL_SAMPLES),
            )?,
            gains_kind: match layer.get("gains.kind") {
                None | Some("preloaded") => GainKind::Preloaded,
                Some("steady") => GainKind::SteadyState,
                Some(other) => {
                    return Err(CliError::usage(format!(
                        "invalid value `{other}` for gains.kind (expected preloaded or steady)"
                    )))
                }
            },
            output,
            inputs,
            write_estimates: layer.parse("io.estimates")?.unwrap_or(false),
        })
    }

    /// The settings that affect results, as sorted `key = value` pairs. The
    /// output directory is left out so that moving outputs does not change
    /// the hash.
    pub fn resolved(&self) -> BTreeMap<&'static str, String> {
        let mut m = BTreeMap::new();
        let b = &self.bench;
        if let Some(s) = self.scenario {
            m.insert("scenario", s.to_string());
        }
        match &self.separation {
            Some(Separation::C(c)) => {
                m.insert("model.c", c.to_string());
            }
            Some(Separation::Kl(kl)) => {
                m.insert("model.kl", join(kl));
            }
            None => {}
        }
        m.insert("bench.seed", b.seed.to_string());
        let sim = matches!(self.command, Command::RunSynthetic | Command::Simulate);
        let filters = matches!(self.command, Command::RunSynthetic | Command::RunFile);
        if sim {
            m.insert("bench.n_runs", b.n_runs.to_string());
        }
        if sim || self.command == Command::Gains {
            m.insert("bench.n_steps", b.n_steps.to_string());
            m.insert("bench.dt_ticks", b.dt_ticks.to_string());
        }
        if sim || self.command == Command::RunFile {
            m.insert("bench.x0", join(&b.x0));
        }
        if filters {
            m.insert(
                "bench.schemes",
                b.methods.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
            );
            m.insert("bench.error", if b.error_component == 0 { "position" } else { "velocity" }.into());
        }
        if filters || self.command == Command::Gains {
            m.insert("bench.preloaded", b.preloaded.to_string());
            m.insert("bench.prior_var", b.prior_var.to_string());
        }
        if matches!(self.separation, Some(Separation::Kl(_))) {
            m.insert("calibrate.tol", self.calibrate_tol.to_string());
            m.insert("calibrate.samples", self.calibrate_samples.to_string());
        }
        if self.command == Command::Gains {
            let kind = match self.gains_kind {
                GainKind::Preloaded => "preloaded",
                GainKind::SteadyState => "steady",
            };
            m.insert("gains.kind", kind.into());
        }
        if self.command == Command::RunFile {
            let inputs: Vec<String> = self.inputs.iter().map(|p| p.display().to_string()).collect();
            m.insert("io.input", inputs.join(","));
            m.insert("io.estimates", self.write_estimates.to_string());
        }
        m
    }

    /// `key = value` lines of [`RunConfig::resolved`], preceded by the
    /// command.
    pub fn resolved_text(&self) -> String {
        let mut s = format!("command = {}\n", self.command.name());
        for (k, v) in self.resolved() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    /// SHA-256 of [`RunConfig::resolved_text`], hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.resolved_text().as_bytes()))
    }

    pub fn model_id(&self) -> Option<u8> {
        match self.scenario {
            Some(Scenario::Synthetic(id)) => Some(id),
            _ => None,
        }
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}
