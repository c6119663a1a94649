//! Checks the factorized active-cluster search against exhaustive search
//! over all `(i, j)` pairs on random small instances.

use gsf_core::gaussian::GaussianMixture;
use gsf_core::gsf::ModelIndex;
use gsf_core::reduction::{active_scores, select_active};
use gsf_core::state_space::{rw_velocity_model, StepModel};
use gsf_core::{SystemModel, TimeGrid};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_mixture(rng: &mut ChaCha8Rng, count: usize) -> GaussianMixture {
    let raw: Vec<f64> = (0..count).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let w: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let m: Vec<f64> = (0..count).map(|_| rng.random_range(-20.0..20.0)).collect();
    let v: Vec<f64> = (0..count).map(|_| rng.random_range(0.2..20.0)).collect();
    GaussianMixture::scalar(&w, &m, &v).unwrap()
}

fn exhaustive(process: &[f64], meas: &[f64]) -> ModelIndex {
    let mut best = ModelIndex::new(0, 0);
    let mut best_score = f64::NEG_INFINITY;
    for (i, a) in process.iter().enumerate() {
        for (j, b) in meas.iter().enumerate() {
            if a + b > best_score {
                best_score = a + b;
                best = ModelIndex::new(i, j);
            }
        }
    }
    best
}

#[test]
fn factorized_search_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let grid = TimeGrid::uniform(1, 1).unwrap();
    for _ in 0..1000 {
        let (c_v, c_w) = (rng.random_range(1..=5), rng.random_range(1..=4));
        let model = rw_velocity_model(&random_mixture(&mut rng, c_v), &random_mixture(&mut rng, c_w), &grid).unwrap();
        let prev = DVector::from_vec(vec![rng.random_range(-50.0..50.0), rng.random_range(-5.0..5.0)]);
        let x_check = DVector::from_vec(vec![rng.random_range(-50.0..50.0), rng.random_range(-5.0..5.0)]);
        let z = DVector::from_element(1, rng.random_range(-80.0..80.0));
        let (ps, ms) = active_scores(&x_check, &prev, &z, &model, 0).unwrap();
        assert_eq!(select_active(&x_check, &prev, &z, &model, 0).unwrap(), exhaustive(&ps, &ms));
    }
}

#[test]
fn full_rank_process_noise_is_scored_directly() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let c_v = rng.random_range(1..=4);
        let comps: Vec<gsf_core::Gaussian> = (0..c_v)
            .map(|_| {
                let a = rng.random_range(0.5..5.0);
                let c = rng.random_range(-0.4..0.4);
                gsf_core::Gaussian::new(
                    DVector::from_vec(vec![rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]),
                    DMatrix::from_row_slice(2, 2, &[a, c, c, 1.0]),
                )
                .unwrap()
            })
            .collect();
        let process = GaussianMixture::new(vec![1.0 / c_v as f64; c_v], comps).unwrap();
        let meas = random_mixture(&mut rng, 2);
        let step = StepModel::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            process,
            meas,
        )
        .unwrap();
        let model = SystemModel::time_invariant(step);
        let prev = DVector::from_vec(vec![rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]);
        let x_check = DVector::from_vec(vec![rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]);
        let z = DVector::from_element(1, rng.random_range(-10.0..10.0));
        let (ps, ms) = active_scores(&x_check, &prev, &z, &model, 0).unwrap();
        assert_eq!(select_active(&x_check, &prev, &z, &model, 0).unwrap(), exhaustive(&ps, &ms));
    }
}
