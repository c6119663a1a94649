use gsf_core::bench::{run_mc, run_mc_model, McSetup, SyntheticModelSpec};
use gsf_core::gaussian::GaussianMixture;
use gsf_core::kalman::{preloaded_per_model, steady_per_model, RICCATI_MAX_ITER, RICCATI_TOL};
use gsf_core::runner::MethodKind;
use gsf_core::state_space::rw_velocity_model;
use gsf_core::{InitEstimator, ModelIndex, SchemeKind, TimeGrid};
use nalgebra::DMatrix;

const MERGE: MethodKind = MethodKind::Scheme(SchemeKind::Merge);
const MATCHED: MethodKind = MethodKind::Scheme(SchemeKind::Matched);

#[test]
fn matched_beats_merge_and_kalman() {
    let setup = McSetup {
        n_runs: 40,
        n_steps: 300,
        seed: 8,
        methods: vec![MethodKind::Kalman, MERGE, MATCHED],
        ..McSetup::default()
    };
    let report = run_mc(&SyntheticModelSpec::new(1, 0.607).unwrap(), &setup).unwrap();
    let (d, se) = report.paired_difference(MATCHED, MERGE).unwrap();
    assert!(d + 3.0 * se < 0.0, "matched - merge = {d} ± {se}");
    let (d, se) = report.paired_difference(MERGE, MethodKind::Kalman).unwrap();
    assert!(d + 3.0 * se < 0.0, "merge - kalman = {d} ± {se}");
    assert!(report.all_completed());
}

#[test]
fn every_method_runs_on_every_synthetic_model() {
    for (id, c) in [(1, 0.21), (2, 0.215), (3, 0.096)] {
        let setup = McSetup {
            n_runs: 4,
            n_steps: 100,
            seed: id as u64,
            ..McSetup::default()
        };
        let report = run_mc(&SyntheticModelSpec::new(id, c).unwrap(), &setup).unwrap();
        assert_eq!(report.methods.len(), 9);
        for m in &report.methods {
            assert!(m.completed(), "{} aborted on model {id}", m.method);
            assert!(m.rmse.is_finite() && m.cep.is_finite());
        }
    }
}

#[test]
fn steady_gains_equal_late_preloaded_gains() {
    for (id, c) in [(1, 0.21), (2, 0.215), (3, 0.096)] {
        let grid = TimeGrid::uniform(400, 1).unwrap();
        let model = SyntheticModelSpec::new(id, c).unwrap().system(&grid).unwrap();
        let pkg = preloaded_per_model(&model, &(DMatrix::identity(2, 2) * 1e-2), 400).unwrap();
        let ssg = steady_per_model(&model, RICCATI_TOL, RICCATI_MAX_ITER).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let idx = ModelIndex::new(i, j);
                let late = pkg.gain(idx, 399).unwrap();
                let steady = ssg.gain(idx, 399).unwrap();
                assert!((late - steady).amax() < 1e-8, "model {id} {idx}");
            }
        }
    }
}

#[test]
fn pkg_matches_gsfm_with_per_model_gains() {
    let setup = McSetup {
        n_runs: 5,
        n_steps: 200,
        seed: 21,
        methods: vec![
            MethodKind::Scheme(SchemeKind::Proposed(InitEstimator::Gsfm)),
            MethodKind::Scheme(SchemeKind::Proposed(InitEstimator::Pkg)),
        ],
        ..McSetup::default()
    };
    let report = run_mc(&SyntheticModelSpec::new(3, 0.3).unwrap(), &setup).unwrap();
    let (a, b) = (&report.methods[0], &report.methods[1]);
    for (ra, rb) in a.runs.iter().zip(&b.runs) {
        assert!((ra.rmse - rb.rmse).abs() <= 1e-9 * ra.rmse);
    }
}

#[test]
fn single_cluster_schemes_match_kalman() {
    let gm = GaussianMixture::scalar(&[1.0], &[2.0], &[3.0]).unwrap();
    let setup = McSetup {
        n_runs: 2,
        n_steps: 500,
        seed: 1,
        ..McSetup::default()
    };
    let model = rw_velocity_model(&gm, &gm, &setup.grid().unwrap()).unwrap();
    let report = run_mc_model(&model, &setup).unwrap();
    let kalman = report.method(MethodKind::Kalman).unwrap();
    for m in &report.methods {
        for (a, b) in m.runs.iter().zip(&kalman.runs) {
            assert!((a.rmse - b.rmse).abs() <= 1e-9 * b.rmse, "{}", m.method);
        }
    }
}
