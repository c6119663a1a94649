use gsf_core::gaussian::GaussianMixture;
use gsf_core::gsf::gsf_step;
use gsf_core::kalman::KalmanState;
use gsf_core::state_space::rw_velocity_model;
use gsf_core::TimeGrid;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn mixture(params: &[(f64, f64, f64)]) -> GaussianMixture {
    let total: f64 = params.iter().map(|p| p.0).sum();
    let w: Vec<f64> = params.iter().map(|p| p.0 / total).collect();
    let m: Vec<f64> = params.iter().map(|p| p.1).collect();
    let v: Vec<f64> = params.iter().map(|p| p.2).collect();
    GaussianMixture::scalar(&w, &m, &v).unwrap()
}

fn cluster() -> impl Strategy<Value = (f64, f64, f64)> {
    (0.01f64..1.0, -50.0f64..50.0, 0.1f64..100.0)
}

fn prev_state() -> impl Strategy<Value = KalmanState> {
    (-100.0f64..100.0, -10.0f64..10.0, 0.01f64..50.0, 0.01f64..5.0).prop_map(|(p, v, pp, vv)| {
        KalmanState::new(
            DVector::from_vec(vec![p, v]),
            DMatrix::from_row_slice(2, 2, &[pp, 0.0, 0.0, vv]),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn weights_are_normalized(
        proc in prop::collection::vec(cluster(), 1..6),
        meas in prop::collection::vec(cluster(), 1..4),
        prev in prev_state(),
        z in -500.0f64..500.0,
    ) {
        let grid = TimeGrid::uniform(1, 1).unwrap();
        let model = rw_velocity_model(&mixture(&proc), &mixture(&meas), &grid).unwrap();
        let post = gsf_step(&prev, &model, &DVector::from_element(1, z)).unwrap();
        prop_assert_eq!(post.len(), proc.len() * meas.len());
        prop_assert!((post.weight_sum() - 1.0).abs() <= 1e-12);
        prop_assert!(post.entries().iter().all(|e| e.weight >= 0.0 && e.weight.is_finite()));
    }

    #[test]
    fn bank_is_permutation_equivariant(
        proc in prop::collection::vec(cluster(), 2..6),
        meas in prop::collection::vec(cluster(), 1..3),
        prev in prev_state(),
        z in -200.0f64..200.0,
        rot in 1usize..5,
    ) {
        let grid = TimeGrid::uniform(1, 1).unwrap();
        let rot = rot % proc.len();
        let mut rotated = proc.clone();
        rotated.rotate_left(rot);
        let zv = DVector::from_element(1, z);
        let a = gsf_step(&prev, &rw_velocity_model(&mixture(&proc), &mixture(&meas), &grid).unwrap(), &zv).unwrap();
        let b = gsf_step(&prev, &rw_velocity_model(&mixture(&rotated), &mixture(&meas), &grid).unwrap(), &zv).unwrap();
        let c_w = meas.len();
        for (k, eb) in b.entries().iter().enumerate() {
            let i = (k / c_w + rot) % proc.len();
            let ea = &a.entries()[i * c_w + k % c_w];
            prop_assert!((ea.weight - eb.weight).abs() <= 1e-12);
            prop_assert!((&ea.state.mean - &eb.state.mean).amax() <= 1e-9 * (1.0 + ea.state.mean.amax()));
        }
    }
}
