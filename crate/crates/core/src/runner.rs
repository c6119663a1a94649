//! Running one filtering method over a trajectory.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gsf::{gsf_step, ModelIndex};
use crate::kalman::{self, kf_step, GainSet, KalmanState, RICCATI_MAX_ITER, RICCATI_TOL};
use crate::reduction::{reduce, InitEstimator, ReductionScheme, SchemeKind};
use crate::state_space::{SystemModel, Trajectory};

/// A filter to benchmark: the plain Kalman filter on moment-matched noises,
/// or the bank with one of the reduction schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MethodKind {
    Kalman,
    Scheme(SchemeKind),
}

impl MethodKind {
    /// Kalman followed by every reduction scheme.
    pub fn all() -> Vec<MethodKind> {
        std::iter::once(MethodKind::Kalman)
            .chain(SchemeKind::ALL.iter().map(|s| MethodKind::Scheme(*s)))
            .collect()
    }

    pub fn needs_truth(self) -> bool {
        self == MethodKind::Scheme(SchemeKind::Matched)
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodKind::Kalman => f.write_str("kalman"),
            MethodKind::Scheme(s) => s.fmt(f),
        }
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "kalman" {
            Ok(MethodKind::Kalman)
        } else {
            s.parse().map(MethodKind::Scheme)
        }
    }
}

/// Parses a comma-separated method list such as `merge,remove,proposed:dkg`.
pub fn parse_methods(list: &str) -> Result<Vec<MethodKind>> {
    let methods = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect::<Result<Vec<MethodKind>>>()?;
    if methods.is_empty() {
        return Err(Error::invalid("method list", "empty"));
    }
    Ok(methods)
}

/// Where Red-PKG's offline gains come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PreloadedGains {
    /// One offline schedule per bank member, from its cluster covariances.
    #[default]
    PerModel,
    /// One offline schedule from the moment-matched noises, shared by all
    /// members.
    Shared,
}

impl FromStr for PreloadedGains {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "per-model" => Ok(PreloadedGains::PerModel),
            "shared" => Ok(PreloadedGains::Shared),
            other => Err(Error::invalid(
                "preloaded gain mode",
                format!("`{other}` (expected per-model or shared)"),
            )),
        }
    }
}

impl fmt::Display for PreloadedGains {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PreloadedGains::PerModel => "per-model",
            PreloadedGains::Shared => "shared",
        })
    }
}

/// A method ready to run, with any offline gains already computed.
#[derive(Debug, Clone)]
pub enum Method {
    Kalman,
    Reduced(ReductionScheme),
}

impl Method {
    pub fn kind(&self) -> MethodKind {
        match self {
            Method::Kalman => MethodKind::Kalman,
            Method::Reduced(s) => MethodKind::Scheme(s.kind()),
        }
    }
}

/// Builds methods for `model`, computing each kind of gain set at most once.
/// Preloaded gains start from `prior_cov` and cover `horizon` steps.
#[derive(Debug)]
pub struct MethodFactory<'a> {
    model: &'a SystemModel,
    prior_cov: DMatrix<f64>,
    horizon: usize,
    preloaded: PreloadedGains,
    preloaded_cache: Option<Arc<GainSet>>,
    steady_cache: Option<Arc<GainSet>>,
}

impl<'a> MethodFactory<'a> {
    pub fn new(model: &'a SystemModel, prior_cov: DMatrix<f64>, horizon: usize, preloaded: PreloadedGains) -> Self {
        MethodFactory {
            model,
            prior_cov,
            horizon,
            preloaded,
            preloaded_cache: None,
            steady_cache: None,
        }
    }

    pub fn preloaded_gains(&mut self) -> Result<Arc<GainSet>> {
        if let Some(g) = &self.preloaded_cache {
            return Ok(g.clone());
        }
        let set = match self.preloaded {
            PreloadedGains::PerModel => kalman::preloaded_per_model(self.model, &self.prior_cov, self.horizon)?,
            PreloadedGains::Shared => kalman::preloaded_shared(self.model, &self.prior_cov, self.horizon)?,
        };
        Ok(self.preloaded_cache.insert(Arc::new(set)).clone())
    }

    pub fn steady_gains(&mut self) -> Result<Arc<GainSet>> {
        if let Some(g) = &self.steady_cache {
            return Ok(g.clone());
        }
        let set = kalman::steady_per_model(self.model, RICCATI_TOL, RICCATI_MAX_ITER)?;
        Ok(self.steady_cache.insert(Arc::new(set)).clone())
    }

    pub fn build(&mut self, kind: MethodKind) -> Result<Method> {
        let scheme = match kind {
            MethodKind::Kalman => return Ok(Method::Kalman),
            MethodKind::Scheme(s) => s,
        };
        let gains = match scheme {
            SchemeKind::Proposed(InitEstimator::Pkg) => Some(self.preloaded_gains()?),
            SchemeKind::Proposed(InitEstimator::Ssg) => Some(self.steady_gains()?),
            _ => None,
        };
        Ok(Method::Reduced(ReductionScheme::new(scheme, gains)?))
    }
}

/// Per-step filter output.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    pub estimates: Vec<DVector<f64>>,
    pub chosen: Vec<Option<ModelIndex>>,
}

/// Filters the measurements of `traj` starting from `prior`.
pub fn run_filter(method: &Method, model: &SystemModel, traj: &Trajectory, prior: &KalmanState) -> Result<FilterOutput> {
    if method.kind().needs_truth() && traj.labels.is_none() {
        return Err(Error::MissingTruth);
    }
    if let Some(h) = model.horizon() {
        if h < traj.len() {
            return Err(Error::invalid("trajectory", "longer than the model horizon"));
        }
    }
    let mut state = prior.clone();
    let mut estimates = Vec::with_capacity(traj.len());
    let mut chosen = Vec::with_capacity(traj.len());
    for (k, z) in traj.measurements.iter().enumerate() {
        match method {
            Method::Kalman => {
                let step = model.at(state.step);
                state = kf_step(&state, model, z, step.process_matched(), step.meas_matched())?.state;
                chosen.push(None);
            }
            Method::Reduced(scheme) => {
                let post = gsf_step(&state, model, z)?;
                let truth = traj.labels.as_ref().map(|l| l[k]);
                let r = reduce(scheme, &post, &state, model, z, truth)?;
                chosen.push(r.chosen);
                state = r.state;
            }
        }
        estimates.push(state.mean.clone());
    }
    Ok(FilterOutput { estimates, chosen })
}
