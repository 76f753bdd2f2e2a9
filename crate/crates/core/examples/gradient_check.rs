//! Compare backpropagated gradients with central finite differences on
//! random small networks.
//!
//! cargo run --release --example gradient_check

use mvhash::gradcheck::{random_instance, run, GradcheckConfig};

fn main() -> mvhash::Result<()> {
    let inst = random_instance(7, 0)?;
    let analytic = inst.analytic()?;
    let numeric = inst.numeric(1e-5)?;
    for ((name, rows, cols), (a, n)) in inst.params.weights.layout().into_iter().zip(analytic.iter().zip(&numeric)) {
        let worst = a.iter().zip(n).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        println!("{name:<10} {rows}x{cols:<3} max |analytic - numeric| = {worst:.2e}");
    }

    let report = run(&GradcheckConfig::default())?;
    println!(
        "{} instances, {} values, max relative error {:.2e}: {}",
        report.instances,
        report.values_checked,
        report.max_error,
        if report.passed() { "PASS" } else { "FAIL" }
    );
    Ok(())
}
