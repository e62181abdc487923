//! Runs the finite-difference gradient suite and prints one line per check.

use std::time::Instant;

use osml::autodiff::gradcheck::run_suite;

fn main() -> osml::Result<()> {
    let start = Instant::now();
    let reports = run_suite(0, 20)?;
    for r in &reports {
        println!(
            "{:<24} instances={:<3} coords={:<6} max_rel_err={:.2e} tol={:.0e} {}",
            r.name,
            r.instances,
            r.coordinates,
            r.max_rel_err,
            r.tolerance,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
