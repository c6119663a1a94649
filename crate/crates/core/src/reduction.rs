//! Collapsing the bank posterior back to one Gaussian per step.
//!
//! Besides the classic merge (moment matching) and remove (keep the heaviest
//! entry) rules and the oracle matched rule, this module implements the
//! active-cluster scheme: an initial state estimate `x̌` is turned into noise
//! estimates `v̌ = x̌ − F x̂_{k−1}` and `w̌ = z − H x̌`, the most likely
//! process and measurement clusters are picked for them, and only that bank
//! entry is kept.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::GaussianMixture;
use crate::gsf::{ModelIndex, PosteriorMixture};
use crate::kalman::{kf_step, predict_mean, GainKind, GainSet, KalmanState};
use crate::state_space::SystemModel;

/// How the initial estimate `x̌` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InitEstimator {
    /// Bank-weighted mean (merge without the covariance).
    Gsfm,
    /// Mean of the heaviest bank entry.
    Gsfr,
    /// Bank-weighted mean with members updated by offline preloaded gains.
    Pkg,
    /// Bank-weighted mean with members updated by steady-state gains.
    Ssg,
    /// One Kalman step on moment-matched noises from the previous estimate.
    Dkg,
}

impl InitEstimator {
    pub const ALL: [InitEstimator; 5] = [
        InitEstimator::Gsfm,
        InitEstimator::Gsfr,
        InitEstimator::Pkg,
        InitEstimator::Ssg,
        InitEstimator::Dkg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InitEstimator::Gsfm => "gsfm",
            InitEstimator::Gsfr => "gsfr",
            InitEstimator::Pkg => "pkg",
            InitEstimator::Ssg => "ssg",
            InitEstimator::Dkg => "dkg",
        }
    }

    pub fn needs_gains(self) -> bool {
        matches!(self, InitEstimator::Pkg | InitEstimator::Ssg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    Merge,
    Remove,
    Matched,
    Proposed(InitEstimator),
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 8] = [
        SchemeKind::Merge,
        SchemeKind::Remove,
        SchemeKind::Matched,
        SchemeKind::Proposed(InitEstimator::Gsfm),
        SchemeKind::Proposed(InitEstimator::Gsfr),
        SchemeKind::Proposed(InitEstimator::Pkg),
        SchemeKind::Proposed(InitEstimator::Ssg),
        SchemeKind::Proposed(InitEstimator::Dkg),
    ];
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemeKind::Merge => f.write_str("merge"),
            SchemeKind::Remove => f.write_str("remove"),
            SchemeKind::Matched => f.write_str("matched"),
            SchemeKind::Proposed(e) => write!(f, "proposed:{}", e.name()),
        }
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "merge" => return Ok(SchemeKind::Merge),
            "remove" => return Ok(SchemeKind::Remove),
            "matched" => return Ok(SchemeKind::Matched),
            _ => {}
        }
        if let Some(init) = s.strip_prefix("proposed:") {
            if let Some(e) = InitEstimator::ALL.iter().find(|e| e.name() == init) {
                return Ok(SchemeKind::Proposed(*e));
            }
        }
        Err(Error::invalid(
            "reduction scheme",
            format!("unknown scheme `{s}` (expected merge, remove, matched or proposed:gsfm|gsfr|pkg|ssg|dkg)"),
        ))
    }
}

/// A reduction rule, carrying the gains that Red-PKG / Red-SSG style
/// initial estimates need.
#[derive(Debug, Clone)]
pub struct ReductionScheme {
    kind: SchemeKind,
    gains: Option<Arc<GainSet>>,
}

impl ReductionScheme {
    pub fn new(kind: SchemeKind, gains: Option<Arc<GainSet>>) -> Result<Self> {
        let wants = matches!(kind, SchemeKind::Proposed(e) if e.needs_gains());
        match (wants, &gains) {
            (true, None) => Err(Error::MissingGains { what: kind.to_string() }),
            (false, Some(_)) => Err(Error::invalid(
                "reduction scheme",
                format!("{kind} does not take a gain schedule"),
            )),
            (true, Some(g)) => {
                let expected = if kind == SchemeKind::Proposed(InitEstimator::Ssg) {
                    GainKind::SteadyState
                } else {
                    GainKind::Preloaded
                };
                if g.kind() != expected {
                    return Err(Error::invalid(
                        "reduction scheme",
                        format!("{kind} needs {expected:?} gains"),
                    ));
                }
                Ok(ReductionScheme { kind, gains })
            }
            (false, None) => Ok(ReductionScheme { kind, gains }),
        }
    }

    pub fn merge() -> Self {
        ReductionScheme { kind: SchemeKind::Merge, gains: None }
    }

    pub fn remove() -> Self {
        ReductionScheme { kind: SchemeKind::Remove, gains: None }
    }

    pub fn matched() -> Self {
        ReductionScheme { kind: SchemeKind::Matched, gains: None }
    }

    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    pub fn gains(&self) -> Option<&GainSet> {
        self.gains.as_deref()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedPosterior {
    pub state: KalmanState,
    pub chosen: Option<ModelIndex>,
    pub init_estimate: Option<DVector<f64>>,
}

/// Moment-matched single Gaussian of the bank posterior.
pub fn reduce_merge(p: &PosteriorMixture) -> ReducedPosterior {
    let first = &p.entries()[0].state;
    let n = first.mean.len();
    let mut mean = DVector::zeros(n);
    for e in p.entries() {
        mean.axpy(e.weight, &e.state.mean, 1.0);
    }
    let mut cov = DMatrix::zeros(n, n);
    for e in p.entries() {
        let d = &e.state.mean - &mean;
        cov += (&e.state.cov + &d * d.transpose()) * e.weight;
    }
    let cov = (&cov + cov.transpose()) * 0.5;
    ReducedPosterior {
        state: KalmanState { mean, cov, step: first.step },
        chosen: None,
        init_estimate: None,
    }
}

fn keep(p: &PosteriorMixture, index: ModelIndex) -> Result<ReducedPosterior> {
    let e = p
        .entry(index)
        .ok_or_else(|| Error::invalid("model index", format!("{index} not in posterior")))?;
    Ok(ReducedPosterior {
        state: e.state.clone(),
        chosen: Some(index),
        init_estimate: None,
    })
}

/// Keeps the heaviest entry; ties go to the smallest `(i, j)`.
pub fn reduce_remove(p: &PosteriorMixture) -> ReducedPosterior {
    keep(p, p.argmax()).expect("argmax is always in range")
}

/// Keeps the entry of the true active model (simulation only).
pub fn reduce_matched(p: &PosteriorMixture, truth: Option<ModelIndex>) -> Result<ReducedPosterior> {
    keep(p, truth.ok_or(Error::MissingTruth)?)
}

fn weighted_mean<'a>(items: impl Iterator<Item = (f64, &'a DVector<f64>)>, n: usize) -> DVector<f64> {
    let mut acc = DVector::zeros(n);
    for (w, x) in items {
        acc.axpy(w, x, 1.0);
    }
    acc
}

/// The initial state estimate `x̌` for `strategy`.
pub fn initial_estimate(
    strategy: InitEstimator,
    p: &PosteriorMixture,
    prev: &KalmanState,
    model: &SystemModel,
    z: &DVector<f64>,
    gains: Option<&GainSet>,
) -> Result<DVector<f64>> {
    let n = prev.mean.len();
    match strategy {
        InitEstimator::Gsfm => Ok(weighted_mean(
            p.entries().iter().map(|e| (e.weight, &e.state.mean)),
            n,
        )),
        InitEstimator::Gsfr => Ok(p.entry(p.argmax()).expect("in range").state.mean.clone()),
        InitEstimator::Pkg | InitEstimator::Ssg => {
            let gains = gains.ok_or_else(|| Error::MissingGains {
                what: format!("proposed:{}", strategy.name()),
            })?;
            let step = model.at(prev.step);
            let mut acc = DVector::zeros(n);
            for e in p.entries() {
                let u = step.process_noise.component(e.index.i).mean();
                let b = step.meas_noise.component(e.index.j).mean();
                let (prior, z_pred) = predict_mean(&prev.mean, step, u, b);
                let k = gains.gain(e.index, prev.step)?;
                let member = prior + k * (z - z_pred);
                acc.axpy(e.weight, &member, 1.0);
            }
            Ok(acc)
        }
        InitEstimator::Dkg => {
            let step = model.at(prev.step);
            let up = kf_step(prev, model, z, step.process_matched(), step.meas_matched())?;
            Ok(up.state.mean)
        }
    }
}

/// Per-cluster log scores `ln wⁱ + ln N(v̌; uⁱ, Qⁱ)` and
/// `ln pʲ + ln N(w̌; bʲ, Rʲ)`.
///
/// When the process noise is a scalar mixture lifted along `g`, `v̌` is
/// projected onto `g` by least squares and scored against the scalar
/// clusters, since the lifted clusters have no density off their support.
pub fn active_scores(
    x_check: &DVector<f64>,
    prev_mean: &DVector<f64>,
    z: &DVector<f64>,
    model: &SystemModel,
    step: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let s = model.at(step);
    let v_check = x_check - &s.transition * prev_mean;
    let w_check = z - &s.observation * x_check;
    let process = match &s.process_lift {
        Some(lift) => {
            let g = &lift.direction;
            let v_scalar = g.dot(&v_check) / g.dot(g);
            cluster_scores(&lift.scalar, &DVector::from_element(1, v_scalar))?
        }
        None => cluster_scores(&s.process_noise, &v_check)?,
    };
    let meas = cluster_scores(&s.meas_noise, &w_check)?;
    Ok((process, meas))
}

fn cluster_scores(m: &GaussianMixture, x: &DVector<f64>) -> Result<Vec<f64>> {
    m.components()
        .iter()
        .zip(m.log_weights())
        .map(|(c, lw)| Ok(lw + c.log_density(x)?))
        .collect()
}

fn first_argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = k;
        }
    }
    best
}

/// The most likely cluster pair for the noises implied by `x_check`. The
/// joint score factorizes, so `i` and `j` are maximized separately.
pub fn select_active(
    x_check: &DVector<f64>,
    prev_mean: &DVector<f64>,
    z: &DVector<f64>,
    model: &SystemModel,
    step: usize,
) -> Result<ModelIndex> {
    let (process, meas) = active_scores(x_check, prev_mean, z, model, step)?;
    Ok(ModelIndex::new(first_argmax(&process), first_argmax(&meas)))
}

/// The active-cluster reduction: keeps the bank entry selected from the
/// initial estimate.
pub fn reduce_proposed(
    p: &PosteriorMixture,
    prev: &KalmanState,
    model: &SystemModel,
    z: &DVector<f64>,
    scheme: &ReductionScheme,
) -> Result<ReducedPosterior> {
    let SchemeKind::Proposed(strategy) = scheme.kind() else {
        return Err(Error::invalid("reduction scheme", format!("{} is not a proposed scheme", scheme.kind())));
    };
    let x_check = initial_estimate(strategy, p, prev, model, z, scheme.gains())?;
    let chosen = select_active(&x_check, &prev.mean, z, model, prev.step)?;
    let mut out = keep(p, chosen)?;
    out.init_estimate = Some(x_check);
    Ok(out)
}

/// Applies any scheme. `truth` is only consulted by the matched rule.
pub fn reduce(
    scheme: &ReductionScheme,
    p: &PosteriorMixture,
    prev: &KalmanState,
    model: &SystemModel,
    z: &DVector<f64>,
    truth: Option<ModelIndex>,
) -> Result<ReducedPosterior> {
    match scheme.kind() {
        SchemeKind::Merge => Ok(reduce_merge(p)),
        SchemeKind::Remove => Ok(reduce_remove(p)),
        SchemeKind::Matched => reduce_matched(p, truth),
        SchemeKind::Proposed(_) => reduce_proposed(p, prev, model, z, scheme),
    }
}
