//! Acceptance checks. Each criterion prints one `PASS` or `FAIL` line; the
//! process exits nonzero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use gsf_cli::{execute, parse_config};
use gsf_core::bench::{
    calibrate_c, kl_to_moment_match, run_mc, table2_mixtures, Axis, McReport, McSetup, SyntheticModelSpec,
    CALIBRATION_TOL, KL_SAMPLES,
};
use gsf_core::gaussian::GaussianMixture;
use gsf_core::gsf::gsf_step;
use gsf_core::kalman::{
    preloaded_per_model, steady_per_model, steady_state_gain, KalmanState, RICCATI_MAX_ITER, RICCATI_TOL,
};
use gsf_core::reduction::{active_scores, select_active};
use gsf_core::runner::{run_filter, MethodFactory, MethodKind, PreloadedGains};
use gsf_core::state_space::{rw_velocity_model, simulate};
use gsf_core::{ModelIndex, SchemeKind, TimeGrid};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MERGE: MethodKind = MethodKind::Scheme(SchemeKind::Merge);
const REMOVE: MethodKind = MethodKind::Scheme(SchemeKind::Remove);
const MATCHED: MethodKind = MethodKind::Scheme(SchemeKind::Matched);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn within_time(elapsed: Duration, limit: Duration) -> (bool, String) {
    (elapsed < limit, format!("{:.2}s < {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64()))
}

/// Criterion 1: Single-cluster noises: every scheme equals the Kalman filter.
fn kalman_equivalence() -> Verdict {
    let start = Instant::now();
    let proc = GaussianMixture::scalar(&[1.0], &[0.3], &[2.0]).unwrap();
    let meas = GaussianMixture::scalar(&[1.0], &[-1.0], &[3.0]).unwrap();
    let grid = TimeGrid::uniform(500, 1).unwrap();
    let model = rw_velocity_model(&proc, &meas, &grid).unwrap();
    let x0 = DVector::from_vec(vec![1.0, 0.5]);
    let traj = simulate(&model, &x0, &grid, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let prior = KalmanState::new(x0, DMatrix::identity(2, 2) * 1e-2);
    let mut factory = MethodFactory::new(&model, prior.cov.clone(), 500, PreloadedGains::PerModel);
    let kalman = run_filter(&factory.build(MethodKind::Kalman).unwrap(), &model, &traj, &prior).unwrap();
    let mut worst: f64 = 0.0;
    for kind in MethodKind::all() {
        let out = run_filter(&factory.build(kind).unwrap(), &model, &traj, &prior).unwrap();
        for (a, b) in out.estimates.iter().zip(&kalman.estimates) {
            for (x, y) in a.iter().zip(b.iter()) {
                worst = worst.max((x - y).abs() / y.abs().max(1.0));
            }
        }
    }
    let (fast, time) = within_time(start.elapsed(), Duration::from_secs(1));
    verdict(
        worst <= 1e-9 && fast,
        format!("9 methods x 500 steps, max relative deviation {worst:.2e} <= 1e-9, {time}"),
    )
}

/// Criterion 2: Bank weights sum to one.
fn weight_normalization() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let grid = TimeGrid::uniform(1, 1).unwrap();
    let random_mixture = |rng: &mut ChaCha8Rng| {
        let n = rng.random_range(1..=6);
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let m: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..200.0)).collect();
        GaussianMixture::scalar(&w, &m, &v).unwrap()
    };
    for _ in 0..10_000 {
        let proc = random_mixture(&mut rng);
        let meas = random_mixture(&mut rng);
        let model = rw_velocity_model(&proc, &meas, &grid).unwrap();
        let pv = rng.random_range(1e-3..100.0);
        let prev = KalmanState::new(
            DVector::from_vec(vec![rng.random_range(-100.0..100.0), rng.random_range(-10.0..10.0)]),
            DMatrix::from_row_slice(2, 2, &[pv, 0.0, 0.0, rng.random_range(1e-3..10.0)]),
        );
        let z = DVector::from_element(1, rng.random_range(-1000.0..1000.0));
        let post = gsf_step(&prev, &model, &z).unwrap();
        worst = worst.max((post.weight_sum() - 1.0).abs());
    }
    verdict(worst <= 1e-12, format!("10^4 random steps, max |sum - 1| = {worst:.2e} <= 1e-12"))
}

/// Criterion 3: Calibrated separations reproduce the reference constants.
fn kl_calibration() -> Verdict {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for (id, expected, tol) in [(1u8, 0.21, 0.02), (2, 0.215, 0.02), (3, 0.096, 0.01)] {
        let cal = calibrate_c(id, 0.5, CALIBRATION_TOL, 0).unwrap();
        let ok = (cal.c - expected).abs() <= tol;
        pass &= ok;
        parts.push(format!("model {id} c = {:.4} (want {expected} ± {tol})", cal.c));
    }
    let (fast, time) = within_time(start.elapsed(), Duration::from_secs(30));
    verdict(pass && fast, format!("KL 0.5, 2e5 samples: {}, {time}", parts.join(", ")))
}

/// Criterion 4: Packaged noise models have the reference KL divergences.
fn table2_kl() -> Verdict {
    let (xv, xw) = table2_mixtures(Axis::X).unwrap();
    let (yv, yw) = table2_mixtures(Axis::Y).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, m, expected, tol) in [
        ("x process", &xv, 0.4253, 0.03),
        ("x measurement", &xw, 0.1759, 0.03),
        ("y process", &yv, 1.1971, 0.05),
    ] {
        let kl = kl_to_moment_match(m, KL_SAMPLES, 4).unwrap();
        pass &= (kl.value - expected).abs() <= tol;
        parts.push(format!("{name} {:.4} (want {expected} ± {tol})", kl.value));
    }
    let y_meas = kl_to_moment_match(&yw, KL_SAMPLES, 4).unwrap();
    parts.push(format!("y measurement {:.4} (nominal 0.0200, not checked)", y_meas.value));
    verdict(pass, parts.join(", "))
}

fn margin_note(report: &McReport, better: MethodKind, worse: MethodKind) -> (bool, String) {
    let (d, se) = report.paired_difference(better, worse).unwrap();
    let rb = report.method(better).unwrap().rmse;
    let rw = report.method(worse).unwrap().rmse;
    let note = if d + 3.0 * se <= 0.0 { "margin >= 3 stderr" } else { "overlap" };
    (rb <= rw, format!("{better} {rb:.3} vs {worse} {rw:.3} ({note})"))
}

/// Criterion 5: The matched filter bounds merge and remove from below.
fn matched_lower_bound() -> Verdict {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for kl in [1.0, 2.0, 3.0] {
        let cal = calibrate_c(1, kl, CALIBRATION_TOL, 0).unwrap();
        let setup = McSetup {
            n_runs: 500,
            n_steps: 500,
            seed: 5,
            methods: vec![MATCHED, MERGE, REMOVE],
            ..McSetup::default()
        };
        let report = run_mc(&SyntheticModelSpec::new(1, cal.c).unwrap(), &setup).unwrap();
        pass &= report.all_completed();
        for other in [MERGE, REMOVE] {
            let (ok, note) = margin_note(&report, MATCHED, other);
            pass &= ok;
            parts.push(format!("KL {kl}: {note}"));
        }
    }
    let (fast, time) = within_time(start.elapsed(), Duration::from_secs(300));
    verdict(pass && fast, format!("model 1, 500 runs x 500 steps: {}; {time}", parts.join("; ")))
}

/// Criterion 6: Kalman degrades with multimodality faster than GSF-merge.
fn kl_trend() -> Verdict {
    let mut kalman = Vec::new();
    let mut merge = Vec::new();
    for kl in [0.5, 1.5, 3.0] {
        let cal = calibrate_c(1, kl, CALIBRATION_TOL, 0).unwrap();
        let setup = McSetup {
            n_runs: 200,
            n_steps: 500,
            seed: 6,
            methods: vec![MethodKind::Kalman, MERGE],
            ..McSetup::default()
        };
        let report = run_mc(&SyntheticModelSpec::new(1, cal.c).unwrap(), &setup).unwrap();
        kalman.push(report.method(MethodKind::Kalman).unwrap().rmse);
        merge.push(report.method(MERGE).unwrap().rmse);
    }
    let increasing = kalman.windows(2).all(|w| w[1] > w[0]);
    let slower = merge[2] - merge[0] < kalman[2] - kalman[0];
    let crossed = merge[2] < kalman[2];
    verdict(
        increasing && slower && crossed,
        format!(
            "model 1, KL 0.5/1.5/3, 200 runs: kalman {:.3}/{:.3}/{:.3}, merge {:.3}/{:.3}/{:.3}",
            kalman[0], kalman[1], kalman[2], merge[0], merge[1], merge[2]
        ),
    )
}

/// Criterion 7: steady-state gains, the golden-ratio fixed point and equality
/// with late preloaded gains on the synthetic models.
fn steady_state_gains() -> Verdict {
    let one = DMatrix::from_element(1, 1, 1.0);
    let k = steady_state_gain(&one, &one, &one, &one, RICCATI_TOL, RICCATI_MAX_ITER).unwrap()[(0, 0)];
    // brute-force Riccati iteration P <- P/(P+1) + 1 on the prior variance
    let mut p = 1.0f64;
    for _ in 0..200 {
        p = p / (p + 1.0) + 1.0;
    }
    let brute = p / (p + 1.0);
    let mut worst: f64 = 0.0;
    for (id, c) in [(1u8, 0.21), (2, 0.215), (3, 0.096)] {
        let horizon = 400;
        let grid = TimeGrid::uniform(horizon, 1).unwrap();
        let model = SyntheticModelSpec::new(id, c).unwrap().system(&grid).unwrap();
        let pkg = preloaded_per_model(&model, &(DMatrix::identity(2, 2) * 1e-2), horizon).unwrap();
        let ssg = steady_per_model(&model, RICCATI_TOL, RICCATI_MAX_ITER).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let idx = ModelIndex::new(i, j);
                worst = worst.max((pkg.gain(idx, horizon - 1).unwrap() - ssg.gain(idx, 0).unwrap()).amax());
            }
        }
    }
    verdict(
        (k - 0.61803).abs() <= 1e-5 && (k - brute).abs() <= 1e-9 && worst <= 1e-8,
        format!("K = {k:.8} (brute force {brute:.8}), SSG vs PKG after 400 steps max diff {worst:.1e} <= 1e-8"),
    )
}

/// Criterion 8: The factorized active-cluster search equals exhaustive search.
fn select_active_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let grid = TimeGrid::uniform(1, 1).unwrap();
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (c_v, c_w) = (rng.random_range(1..=5), rng.random_range(1..=4));
        let mut mixture = |n: usize| {
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let m: Vec<f64> = (0..n).map(|_| rng.random_range(-20.0..20.0)).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..20.0)).collect();
            GaussianMixture::scalar(&w, &m, &v).unwrap()
        };
        let model = rw_velocity_model(&mixture(c_v), &mixture(c_w), &grid).unwrap();
        let prev = DVector::from_vec(vec![rng.random_range(-50.0..50.0), rng.random_range(-5.0..5.0)]);
        let x_check = DVector::from_vec(vec![rng.random_range(-50.0..50.0), rng.random_range(-5.0..5.0)]);
        let z = DVector::from_element(1, rng.random_range(-80.0..80.0));
        let (ps, ms) = active_scores(&x_check, &prev, &z, &model, 0).unwrap();
        let mut best = (ModelIndex::new(0, 0), f64::NEG_INFINITY);
        for (i, a) in ps.iter().enumerate() {
            for (j, b) in ms.iter().enumerate() {
                if a + b > best.1 {
                    best = (ModelIndex::new(i, j), a + b);
                }
            }
        }
        if select_active(&x_check, &prev, &z, &model, 0).unwrap() != best.0 {
            mismatches += 1;
        }
    }
    verdict(mismatches == 0, format!("1000 random instances, {mismatches} mismatches"))
}

fn run_cli(args: &[&str]) -> gsf_cli::Outcome {
    let mut argv = vec!["gsf"];
    argv.extend_from_slice(args);
    let cfg = parse_config(argv).unwrap();
    execute(&cfg, &mut std::io::sink()).unwrap()
}

fn summary_rmse(path: &Path, method: &str) -> (f64, f64) {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).unwrap();
    for row in reader.records() {
        let row = row.unwrap();
        if &row[3] == method {
            return (row[6].parse().unwrap(), row[8].parse().unwrap());
        }
    }
    panic!("{method} missing from {}", path.display());
}

/// Criterion 9: run-file on simulated Table II trajectories.
fn table2_run_file() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for scenario in ["table2-x", "table2-y"] {
        let sim = dir.path().join(format!("{scenario}-sim"));
        let res = dir.path().join(format!("{scenario}-res"));
        let (sim, res) = (sim.to_str().unwrap(), res.to_str().unwrap());
        run_cli(&["simulate", "--scenario", scenario, "--runs", "100", "--steps", "1000", "--seed", "9", "--output", sim]);
        let outcome = run_cli(&["run-file", "--input", sim, "--scenario", scenario, "--output", res]);
        pass &= outcome.exit_code == 0;
        let summary = Path::new(res).join("summary.csv");
        let mut finite = true;
        for m in MethodKind::all() {
            let (rmse, cep) = summary_rmse(&summary, &m.to_string());
            finite &= rmse.is_finite() && cep.is_finite();
        }
        let (matched, _) = summary_rmse(&summary, "matched");
        let (merge, _) = summary_rmse(&summary, "merge");
        pass &= finite && matched <= merge;
        parts.push(format!(
            "{scenario}: exit {}, all finite {finite}, matched {matched:.3} <= merge {merge:.3}",
            outcome.exit_code
        ));
    }
    verdict(pass, format!("100 runs x 1000 steps, 9 methods; {}", parts.join("; ")))
}

fn stable_outputs(dir: &Path) -> Vec<(String, String)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    files
        .iter()
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                gsf_cli::execute::read_stable(p).unwrap(),
            )
        })
        .collect()
}

/// Criterion 10: Repeating a command with the same seed reproduces its CSVs.
fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_gsf");
    let sim = dir.path().join("sim");
    let sim = sim.to_str().unwrap();
    let commands: Vec<Vec<&str>> = vec![
        vec!["run-synthetic", "--model", "3", "--c", "0.2", "--runs", "8", "--steps", "150", "--seed", "10"],
        vec!["calibrate", "--model", "2", "--kl", "0.5", "--samples", "20000", "--seed", "10"],
        vec!["gains", "--scenario", "table2-y", "--steps", "50"],
        vec!["simulate", "--scenario", "model1", "--c", "0.3", "--runs", "3", "--steps", "40", "--seed", "10"],
        vec!["run-file", "--input", sim, "--scenario", "model1", "--c", "0.3", "--estimates"],
    ];
    // the run-file inputs
    let status = Command::new(bin)
        .args(&commands[3])
        .args(["--output", sim])
        .output()
        .unwrap();
    assert!(status.status.success());
    let mut checked = 0;
    let mut pass = true;
    for (n, cmd) in commands.iter().enumerate() {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let out = dir.path().join(format!("cmd{n}-rep{rep}"));
            let result = Command::new(bin)
                .args(cmd)
                .args(["--output", out.to_str().unwrap()])
                .output()
                .unwrap();
            pass &= result.status.success();
            outputs.push(stable_outputs(&out));
        }
        pass &= !outputs[0].is_empty() && outputs[0] == outputs[1];
        checked += outputs[0].len();
    }
    verdict(pass, format!("5 commands run twice via the binary, {checked} CSV files byte-identical after the timestamp line"))
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 10] = [
        ("Kalman equivalence", kalman_equivalence),
        ("weight normalization", weight_normalization),
        ("KL calibration", kl_calibration),
        ("Table II KL", table2_kl),
        ("matched lower bound", matched_lower_bound),
        ("KL trend", kl_trend),
        ("steady-state gain", steady_state_gains),
        ("active-cluster oracle", select_active_oracle),
        ("Table II run-file", table2_run_file),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        let v = check();
        if !v.pass {
            failed += 1;
        }
        println!(
            "acceptance {:>2} {} {name}: {}",
            n + 1,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
