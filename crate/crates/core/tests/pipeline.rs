use osml::baselines::{graph_seed, Method};
use osml::graph::{GraphSpec, MetaGraph, HEAD_BIAS, HEAD_WEIGHT};
use osml::harness::config::ExperimentConfig;
use osml::harness::runner::{run_method, StreamSource};
use osml::metaupdate::{evaluate, finetune_pathway, run_osml_task, OsmlConfig, TaskBuffer};
use osml::rng::stream;
use osml::search::SearchConfig;
use osml::tasks::{Dataset, Episode, SplitSizes, SyntheticConfig};
use osml::{Tensor, UpdateConfig};

/// Two Gaussian blobs at ±2 along the first axis, well separated.
fn separable(n_per_class: usize, seed: u64) -> Dataset<f64> {
    let mut rng = stream(seed, "separable", 0);
    let noise = Tensor::<f64>::randn(&[2 * n_per_class, 4], 0.3, &mut rng);
    let mut x = noise.into_data();
    let mut labels = Vec::new();
    for i in 0..2 * n_per_class {
        let c = i % 2;
        x[i * 4] += if c == 0 { -2.0 } else { 2.0 };
        labels.push(c);
    }
    let base = seed * 10_000;
    Dataset::new(
        Tensor::from_f64(vec![2 * n_per_class, 4], &x).unwrap(),
        labels,
        (base..base + 2 * n_per_class as u64).collect(),
    )
    .unwrap()
}

fn separable_episode(seed: u64) -> Episode<f64> {
    Episode {
        support: separable(10, 3 * seed),
        query: separable(10, 3 * seed + 1),
        test: separable(25, 3 * seed + 2),
        n_classes: 2,
        tag: "toy".into(),
        descriptor: String::new(),
        seed,
    }
}

fn small_stream(tasks: usize, seed: u64) -> Vec<Episode<f64>> {
    let cfg = SyntheticConfig {
        tasks_per_mode: tasks,
        n_classes: 3,
        dims: 8,
        signal_dims: 2,
        sizes: SplitSizes::new(6, 6, 4),
        seed,
        ..SyntheticConfig::default()
    };
    osml::tasks::synthetic_hetero_stream(&osml::tasks::ModeSpec::distinct(2, 4.0, seed), &cfg).unwrap()
}

fn small_spec() -> GraphSpec {
    GraphSpec::dense(8, &[6, 5], 3)
}

#[test]
fn separable_task_is_fit_within_200_steps() {
    let graph = MetaGraph::<f64>::init(GraphSpec::dense(4, &[8], 2), 0).unwrap();
    let ep = separable_episode(0);
    let pathway = graph.default_pathway();
    let params = finetune_pathway(&graph, &pathway, &ep, 0.1, 200, &mut stream(0, "head", 0)).unwrap();
    let train = ep.train().unwrap();
    assert_eq!(evaluate(&graph, &params, &pathway, &train).unwrap().accuracy, 1.0);
}

#[test]
fn buffer_grows_by_one_and_records_stay_fixed() {
    let eps = small_stream(3, 1);
    let mut graph = MetaGraph::init(small_spec(), graph_seed(1)).unwrap();
    let mut buffer = TaskBuffer::new();
    let cfg = OsmlConfig::default();
    let mut snapshots = Vec::new();
    for (t, ep) in eps.iter().enumerate() {
        run_osml_task(&mut graph, &mut buffer, ep, &cfg, 1, None).unwrap();
        assert_eq!(buffer.len(), t + 1);
        snapshots.push(buffer.records()[t].clone());
        assert_eq!(buffer.records()[..=t], snapshots[..]);
    }
}

#[test]
fn frozen_rates_keep_every_committed_block() {
    let eps = small_stream(3, 2);
    let mut graph = MetaGraph::init(small_spec(), graph_seed(2)).unwrap();
    let mut buffer = TaskBuffer::new();
    let cfg = OsmlConfig {
        search: SearchConfig {
            meta_lr_params: 0.0,
            ..SearchConfig::default()
        },
        update: UpdateConfig {
            block_meta_lr: 0.0,
            block_inner_lr: 0.0,
            finetune_lr: 0.0,
            ..UpdateConfig::default()
        },
    };
    for ep in &eps {
        let before = graph.params();
        let r = run_osml_task(&mut graph, &mut buffer, ep, &cfg, 2, None).unwrap();
        let after = graph.params();
        for (k, v) in before.iter() {
            assert_eq!(after.get(k), Some(v), "{k} moved");
        }
        assert!((0.0..=1.0).contains(&r.accuracy));
        assert!(r.test_loss.is_finite());
    }
}

#[test]
fn full_runs_are_deterministic() {
    let eps = small_stream(4, 3);
    let run = || {
        let mut graph = MetaGraph::init(small_spec(), graph_seed(3)).unwrap();
        let mut buffer = TaskBuffer::new();
        let cfg = OsmlConfig::default();
        let results: Vec<_> = eps
            .iter()
            .map(|ep| {
                let mut r = run_osml_task(&mut graph, &mut buffer, ep, &cfg, 3, None).unwrap();
                r.wall_ms = 0.0;
                r
            })
            .collect();
        (graph, results)
    };
    assert_eq!(run(), run());
}

#[test]
fn finetuned_heads_are_fresh_per_task() {
    let graph = MetaGraph::<f64>::init(small_spec(), 0).unwrap();
    let ep = &small_stream(1, 4)[0];
    let pathway = graph.default_pathway();
    let a = finetune_pathway(&graph, &pathway, ep, 0.0, 0, &mut stream(4, "finetune-head", 0)).unwrap();
    let fresh = graph.fresh_head(&mut stream(4, "finetune-head", 0));
    assert_eq!(a.get(HEAD_WEIGHT), fresh.get(HEAD_WEIGHT));
    assert_eq!(a.get(HEAD_BIAS), fresh.get(HEAD_BIAS));
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean of the first and last `k` accuracies of `method` over a default
/// stream with `modes` modes and `tasks` tasks per mode, pooled over seeds.
fn early_late(method: Method, modes: usize, tasks: usize, k: usize, seeds: &[u64]) -> (f64, f64) {
    let mut cfg = ExperimentConfig::default();
    cfg.stream.modes = modes;
    cfg.stream.tasks_per_mode = tasks;
    let source = StreamSource::<f32>::load(&cfg).unwrap();
    let (mut early, mut late) = (Vec::new(), Vec::new());
    for &seed in seeds {
        let eps = source.stream(&cfg, seed).unwrap();
        let spec = cfg.graph_spec(eps[0].support.sample_shape()).unwrap();
        let accs: Vec<f64> = run_method(method, &eps, &spec, &cfg, seed)
            .unwrap()
            .iter()
            .map(|r| r.accuracy)
            .collect();
        early.extend_from_slice(&accs[..k]);
        late.extend_from_slice(&accs[accs.len() - k..]);
    }
    (mean(&early), mean(&late))
}

#[test]
fn osml_improves_over_a_three_mode_stream() {
    let (early, late) = early_late(Method::Osml, 3, 10, 10, &[0]);
    eprintln!("osml first 10 {early:.4} last 10 {late:.4}");
    assert!(late > early, "first 10 {early}, last 10 {late}");
}
