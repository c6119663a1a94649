//! The Gaussian sum filter bank: one mode-matched Kalman filter per
//! (process cluster, measurement cluster) pair and the model probabilities
//! that weight them.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::{log_sum_exp, Gaussian, GaussianMixture};
use crate::kalman::{predict_mean, riccati_step, KalmanState, RiccatiStep};
use crate::state_space::SystemModel;

/// The model `M^{ij}`: process cluster `i`, measurement cluster `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModelIndex {
    pub i: usize,
    pub j: usize,
}

impl ModelIndex {
    pub const fn new(i: usize, j: usize) -> Self {
        ModelIndex { i, j }
    }
}

impl fmt::Display for ModelIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.i, self.j)
    }
}

/// One bank member after the update.
#[derive(Debug, Clone)]
pub struct PosteriorEntry {
    pub index: ModelIndex,
    /// Normalized model probability `μ^{ij}`.
    pub weight: f64,
    /// Unnormalized log score `ln wⁱ + ln pʲ + ln N(z; ẑ, S)`.
    pub log_score: f64,
    pub state: KalmanState,
    pub predicted_meas: DVector<f64>,
    pub innovation_cov: DMatrix<f64>,
}

/// The `C_v·C_w`-component Gaussian-mixture posterior, entries ordered by
/// `i` then `j`.
#[derive(Debug, Clone)]
pub struct PosteriorMixture {
    entries: Vec<PosteriorEntry>,
    c_v: usize,
    c_w: usize,
}

impl PosteriorMixture {
    pub fn entries(&self) -> &[PosteriorEntry] {
        &self.entries
    }

    pub fn c_v(&self) -> usize {
        self.c_v
    }

    pub fn c_w(&self) -> usize {
        self.c_w
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, index: ModelIndex) -> Option<&PosteriorEntry> {
        if index.i >= self.c_v || index.j >= self.c_w {
            return None;
        }
        self.entries.get(index.i * self.c_w + index.j)
    }

    /// Index of the largest weight, ties going to the smallest `(i, j)`.
    pub fn argmax(&self) -> ModelIndex {
        let mut best = &self.entries[0];
        for e in &self.entries[1..] {
            if e.weight > best.weight {
                best = e;
            }
        }
        best.index
    }

    pub fn weight_sum(&self) -> f64 {
        self.entries.iter().map(|e| e.weight).sum()
    }

    /// The posterior as a plain mixture over states.
    pub fn to_mixture(&self) -> Result<GaussianMixture> {
        let comps = self
            .entries
            .iter()
            .map(|e| Gaussian::new(e.state.mean.clone(), e.state.cov.clone()))
            .collect::<Result<Vec<_>>>()?;
        GaussianMixture::new(self.entries.iter().map(|e| e.weight).collect(), comps)
    }
}

/// Runs every mode-matched filter from the single-Gaussian prior `prev` and
/// weights them by `wⁱ pʲ N(z; ẑ^{ij}, S^{ij})`, normalized in log space.
///
/// Weights that underflow to zero are kept.
pub fn gsf_step(prev: &KalmanState, model: &SystemModel, z: &DVector<f64>) -> Result<PosteriorMixture> {
    let step = model.at(prev.step);
    let n_x = step.state_dim();
    if prev.mean.len() != n_x || prev.cov.shape() != (n_x, n_x) {
        return Err(Error::Dimension(format!("prior does not have dimension {n_x}")));
    }
    if z.len() != step.meas_dim() {
        return Err(Error::Dimension(format!(
            "measurement has length {}, expected {}",
            z.len(),
            step.meas_dim()
        )));
    }
    let process = &step.process_noise;
    let meas = &step.meas_noise;
    let (c_v, c_w) = (process.count(), meas.count());

    // Members sharing (Qⁱ, Rʲ) share the covariance recursion.
    let q_class = equality_classes(process.components().iter().map(|c| c.cov()));
    let r_class = equality_classes(meas.components().iter().map(|c| c.cov()));
    let mut riccati: Vec<Option<RiccatiStep>> = vec![None; c_v * c_w];

    let mut entries = Vec::with_capacity(c_v * c_w);
    for (i, qi) in process.components().iter().enumerate() {
        for (j, rj) in meas.components().iter().enumerate() {
            let index = ModelIndex::new(i, j);
            let key = q_class[i] * c_w + r_class[j];
            if riccati[key].is_none() {
                let ric = riccati_step(&prev.cov, &step.transition, &step.observation, qi.cov(), rj.cov())
                    .map_err(|e| match e {
                        Error::DegenerateInnovation(_) => Error::DegenerateInnovation(Some(index)),
                        other => other,
                    })?;
                riccati[key] = Some(ric);
            }
            let ric = riccati[key].as_ref().expect("filled above");
            let (prior, z_pred) = predict_mean(&prev.mean, step, qi.mean(), rj.mean());
            let innovation = z - &z_pred;
            let mean = prior + &ric.gain * &innovation;
            let log_lik = ric.innovation_factor().log_density_of_residual(innovation.as_slice());
            entries.push(PosteriorEntry {
                index,
                weight: 0.0,
                log_score: process.log_weights()[i] + meas.log_weights()[j] + log_lik,
                state: KalmanState {
                    mean,
                    cov: ric.posterior_cov.clone(),
                    step: prev.step + 1,
                },
                predicted_meas: z_pred,
                innovation_cov: ric.innovation_cov.clone(),
            });
        }
    }
    normalize(&mut entries)?;
    Ok(PosteriorMixture { entries, c_v, c_w })
}

fn normalize(entries: &mut [PosteriorEntry]) -> Result<()> {
    let scores: Vec<f64> = entries.iter().map(|e| e.log_score).collect();
    let total = log_sum_exp(&scores);
    if !total.is_finite() {
        return Err(Error::invalid("model weights", format!("log normalizer is {total}")));
    }
    for e in entries.iter_mut() {
        e.weight = (e.log_score - total).exp();
    }
    Ok(())
}

fn equality_classes<'a>(mats: impl Iterator<Item = &'a DMatrix<f64>>) -> Vec<usize> {
    let mats: Vec<_> = mats.collect();
    (0..mats.len())
        .map(|k| (0..=k).find(|&l| mats[l] == mats[k]).unwrap_or(k))
        .collect()
}

/// `ẑ^{ij} = H(F x̂ + uⁱ) + bʲ` and `S^{ij} = H(F P Fᵀ + Qⁱ)Hᵀ + Rʲ` without
/// committing the update.
pub fn innovation_params(
    prev: &KalmanState,
    model: &SystemModel,
    index: ModelIndex,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let step = model.at(prev.step);
    if index.i >= step.c_v() || index.j >= step.c_w() {
        return Err(Error::invalid("model index", format!("{index} out of range")));
    }
    let qi = step.process_noise.component(index.i);
    let rj = step.meas_noise.component(index.j);
    let (_, z_pred) = predict_mean(&prev.mean, step, qi.mean(), rj.mean());
    let (f, h) = (&step.transition, &step.observation);
    let prior_cov = f * &prev.cov * f.transpose() + qi.cov();
    let s = h * prior_cov * h.transpose() + rj.cov();
    Ok((z_pred, s))
}
