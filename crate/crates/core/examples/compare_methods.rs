//! Compare all filtering methods on synthetic model 2 at KL 1.
//!
//! cargo run --release -p gsf-core --example compare_methods

use gsf_core::bench::{calibrate_c, run_mc, McSetup, SyntheticModelSpec, CALIBRATION_TOL};

fn main() -> gsf_core::Result<()> {
    let cal = calibrate_c(2, 1.0, CALIBRATION_TOL, 0)?;
    let setup = McSetup {
        n_runs: 50,
        ..McSetup::default()
    };
    let report = run_mc(&SyntheticModelSpec::new(2, cal.c)?, &setup)?;
    println!("model 2, c = {:.4}", cal.c);
    for m in &report.methods {
        println!("{:<16} rmse {:8.3} ± {:.3}   cep {:8.3}", m.method.to_string(), m.rmse, m.rmse_stderr, m.cep);
    }
    Ok(())
}
