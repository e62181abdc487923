//! Runs OSML over a small three-mode synthetic stream and prints, per task,
//! the committed pathway, the layers that received a new block, and the
//! test accuracy.

use osml::baselines::graph_seed;
use osml::harness::ExperimentConfig;
use osml::harness::runner::StreamSource;
use osml::metaupdate::{run_osml_task, TaskBuffer};
use osml::MetaGraph;

fn main() -> osml::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.stream.tasks_per_mode = 6;
    let seed = 0;
    let episodes = StreamSource::<f32>::load(&cfg)?.stream(&cfg, seed)?;
    let spec = cfg.graph_spec(episodes[0].support.sample_shape())?;

    let mut graph = MetaGraph::init(spec, graph_seed(seed))?;
    let mut buffer = TaskBuffer::new();
    for ep in &episodes {
        let r = run_osml_task(&mut graph, &mut buffer, ep, &cfg.osml, seed, None)?;
        println!(
            "task {:>2} {:<6} pathway {:?} new {:?} blocks {:?} acc {:.2}",
            r.task_index,
            r.tag,
            r.pathway.blocks(),
            r.novel_layers,
            r.blocks_per_layer,
            100.0 * r.accuracy
        );
    }
    Ok(())
}
