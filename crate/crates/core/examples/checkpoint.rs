//! Grows a graph over a few tasks, saves it, reloads it and checks that the
//! reloaded graph gives the same predictions.

use osml::baselines::graph_seed;
use osml::graph::{load_checkpoint, save_checkpoint};
use osml::harness::runner::StreamSource;
use osml::harness::ExperimentConfig;
use osml::metaupdate::{run_osml_task, TaskBuffer};
use osml::MetaGraph;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ExperimentConfig::default();
    cfg.stream.tasks_per_mode = 2;
    let episodes = StreamSource::<f32>::load(&cfg)?.stream(&cfg, 0)?;
    let spec = cfg.graph_spec(episodes[0].support.sample_shape())?;
    let mut graph = MetaGraph::init(spec, graph_seed(0))?;
    let mut buffer = TaskBuffer::new();
    for ep in &episodes {
        run_osml_task(&mut graph, &mut buffer, ep, &cfg.osml, 0, None)?;
    }

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("graph.ckpt");
    save_checkpoint(&graph, &path)?;
    let loaded: MetaGraph<f32> = load_checkpoint(&path)?;
    println!(
        "saved {} bytes, blocks per layer {:?}, identical after reload: {}",
        std::fs::metadata(&path)?.len(),
        loaded.block_counts(),
        loaded == graph
    );

    let pathway = graph.default_pathway();
    let mut params = graph.pathway_params(&pathway)?;
    params.extend(graph.fresh_head(&mut osml::rng::stream(0, "head", 0)));
    let x = &episodes[0].test.inputs;
    let same = graph.pathway_forward(&pathway, &params, x)? == loaded.pathway_forward(&pathway, &params, x)?;
    println!("same logits on task 0: {same}");
    Ok(())
}
