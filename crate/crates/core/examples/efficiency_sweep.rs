//! Sweeps the per-class support size and prints accuracy per size and the
//! samples each task needed to reach the target accuracy.

use std::collections::BTreeMap;

use osml::baselines::Method;
use osml::harness::{efficiency_sweep, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ExperimentConfig::default();
    cfg.methods = vec![Method::Osml, Method::Ftml];
    cfg.stream.tasks_per_mode = 4;
    cfg.sweep_target = 0.4;
    let out_dir = tempfile::tempdir()?;
    cfg.output = out_dir.path().to_path_buf();

    let out = efficiency_sweep(&cfg, &[5, 10, 20])?;
    for p in &out.points {
        println!("support {:>2} {:<5} acc {:.2}", p.size, p.method, 100.0 * p.mean_acc);
    }
    let mut samples: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for t in &out.targets {
        samples.entry(&t.method).or_default().push(t.samples);
    }
    for (m, s) in samples {
        let mean = s.iter().sum::<usize>() as f64 / s.len() as f64;
        println!("{m:<5} mean samples to {:.0}%: {mean:.1}", 100.0 * cfg.sweep_target);
    }
    Ok(())
}
