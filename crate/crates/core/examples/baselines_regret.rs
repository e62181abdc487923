//! Runs every learner on one homogeneous stream and reports accuracy and
//! regret against the retrospectively trained comparator.

use osml::baselines::{regret, retrospective_comparator, Method};
use osml::harness::runner::{run_method, StreamSource};
use osml::harness::ExperimentConfig;

fn main() -> osml::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.stream.modes = 1;
    cfg.stream.tasks_per_mode = 10;
    let seed = 0;
    let episodes = StreamSource::<f32>::load(&cfg)?.stream(&cfg, seed)?;
    let spec = cfg.graph_spec(episodes[0].support.sample_shape())?;
    let comparator = retrospective_comparator(&episodes, &spec, &cfg.baseline(), 2, seed)?;

    for method in [Method::Osml, Method::Ftml, Method::Ft, Method::Nt] {
        let results = run_method(method, &episodes, &spec, &cfg, seed)?;
        let losses: Vec<f64> = results.iter().map(|r| r.test_loss).collect();
        let acc = results.iter().map(|r| r.accuracy).sum::<f64>() / results.len() as f64;
        println!(
            "{method:<5} acc {:.2} regret {:+.4}",
            100.0 * acc,
            regret(&losses, &comparator)?
        );
    }
    Ok(())
}
