use osml::baselines::{
    graph_seed, regret, retrospective_comparator, run_ft, run_ftml, run_nt, BaselineConfig, FtState, FtmlState, Method,
};
use osml::graph::{GraphSpec, MetaGraph};
use osml::harness::config::ExperimentConfig;
use osml::harness::runner::{run_method, StreamSource};
use osml::metaupdate::{evaluate, finetune_pathway, TaskStreams};
use osml::rng::stream;
use osml::tasks::{Dataset, Episode, ModeSpec, SplitSizes, SyntheticConfig};
use osml::Tensor;
use proptest::prelude::*;

fn separable(n_per_class: usize, seed: u64) -> Dataset<f64> {
    let mut rng = stream(seed, "separable", 0);
    let mut x = Tensor::<f64>::randn(&[2 * n_per_class, 4], 0.3, &mut rng).into_data();
    let labels: Vec<usize> = (0..2 * n_per_class).map(|i| i % 2).collect();
    for (i, &c) in labels.iter().enumerate() {
        x[i * 4] += if c == 0 { -2.0 } else { 2.0 };
    }
    let base = seed * 10_000;
    Dataset::new(
        Tensor::from_f64(vec![2 * n_per_class, 4], &x).unwrap(),
        labels,
        (base..base + 2 * n_per_class as u64).collect(),
    )
    .unwrap()
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
    osml::tasks::synthetic_hetero_stream(&ModeSpec::homogeneous(seed), &cfg).unwrap()
}

fn small_spec() -> GraphSpec {
    GraphSpec::dense(8, &[6, 5], 3)
}

fn quick() -> BaselineConfig {
    BaselineConfig {
        train_lr: 0.05,
        ..BaselineConfig::default()
    }
}

#[test]
fn nt_fits_a_separable_task() {
    let ep = Episode {
        support: separable(20, 0),
        query: separable(5, 1),
        test: separable(50, 2),
        n_classes: 2,
        tag: "toy".into(),
        descriptor: String::new(),
        seed: 9,
    };
    let cfg = BaselineConfig {
        train_lr: 0.1,
        train_steps: 200,
        ..BaselineConfig::default()
    };
    let r = run_nt(&ep, 0, &GraphSpec::dense(4, &[8], 2), &cfg, 0).unwrap();
    assert!(r.accuracy >= 0.99, "accuracy {}", r.accuracy);
}

#[test]
fn nt_ignores_task_order() {
    let eps = small_stream(5, 1);
    let spec = small_spec();
    let forward: Vec<_> = eps
        .iter()
        .enumerate()
        .map(|(i, ep)| run_nt(ep, i, &spec, &quick(), 1).unwrap())
        .collect();
    let order = [3usize, 0, 4, 2, 1];
    for (pos, &i) in order.iter().enumerate() {
        let r = run_nt(&eps[i], pos, &spec, &quick(), 1).unwrap();
        assert_eq!(
            (r.accuracy, r.test_loss),
            (forward[i].accuracy, forward[i].test_loss),
            "task {i}"
        );
    }
}

#[test]
fn ft_first_task_is_plain_training_on_support_and_query() {
    let eps = small_stream(2, 2);
    let spec = small_spec();
    let cfg = quick();
    let mut state = FtState::new(&spec, 2).unwrap();
    let first = run_ft(&mut state, &eps[0], &cfg, 2).unwrap();

    let graph = MetaGraph::<f64>::init(spec.clone(), graph_seed(2)).unwrap();
    let pathway = graph.default_pathway();
    let mut head_rng = TaskStreams::new(2, 0).finetune;
    let params = finetune_pathway(&graph, &pathway, &eps[0], cfg.train_lr, cfg.train_steps, &mut head_rng).unwrap();
    let expected = evaluate(&graph, &params, &pathway, &eps[0].test).unwrap();
    assert_eq!((first.accuracy, first.test_loss), (expected.accuracy, expected.loss));

    // the trained body is carried into the second task
    assert_ne!(state.graph, graph);
    let second = run_ft(&mut state, &eps[1], &cfg, 2).unwrap();
    let nt = run_nt(&eps[1], 1, &spec, &cfg, 2).unwrap();
    assert_ne!(second.test_loss, nt.test_loss);
}

#[test]
fn ftml_without_meta_steps_fine_tunes_the_initial_model() {
    let eps = small_stream(3, 3);
    let spec = small_spec();
    let cfg = BaselineConfig {
        ftml_meta_steps: 0,
        ..quick()
    };
    let mut state = FtmlState::new(&spec, 3).unwrap();
    let init = state.graph.clone();
    let pathway = init.default_pathway();
    for (i, ep) in eps.iter().enumerate() {
        let r = run_ftml(&mut state, ep, &cfg, 3).unwrap();
        let mut head_rng = TaskStreams::new(3, i).finetune;
        let params = finetune_pathway(&init, &pathway, ep, cfg.train_lr, cfg.train_steps, &mut head_rng).unwrap();
        let expected = evaluate(&init, &params, &pathway, &ep.test).unwrap();
        assert_eq!((r.accuracy, r.test_loss), (expected.accuracy, expected.loss));
    }
    assert_eq!(state.graph, init);
    assert_eq!(state.buffer.len(), 3);
}

fn homogeneous_losses(method: Method, cfg: &ExperimentConfig, seed: u64) -> Vec<f64> {
    let source = StreamSource::<f32>::load(cfg).unwrap();
    let eps = source.stream(cfg, seed).unwrap();
    let spec = cfg.graph_spec(eps[0].support.sample_shape()).unwrap();
    run_method(method, &eps, &spec, cfg, seed)
        .unwrap()
        .iter()
        .map(|r| r.test_loss)
        .collect()
}

fn homogeneous_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.stream.modes = 1;
    cfg.stream.tasks_per_mode = 20;
    cfg
}

// At the reference fine-tuning rate the carried body barely moves and the
// first and last tasks differ only by task difficulty, so this runs at a
// rate where training visibly happens.
#[test]
fn ft_does_not_degrade_over_a_homogeneous_stream() {
    let mut cfg = homogeneous_config();
    cfg.osml.update.finetune_lr = 0.1;
    let source = StreamSource::<f32>::load(&cfg).unwrap();
    let (mut first, mut last) = (0.0, 0.0);
    for seed in 0..5 {
        let eps = source.stream(&cfg, seed).unwrap();
        let spec = cfg.graph_spec(eps[0].support.sample_shape()).unwrap();
        let accs: Vec<f64> = run_method(Method::Ft, &eps, &spec, &cfg, seed)
            .unwrap()
            .iter()
            .map(|r| r.accuracy)
            .collect();
        first += accs[..5].iter().sum::<f64>() / 25.0;
        last += accs[15..].iter().sum::<f64>() / 25.0;
    }
    eprintln!("ft first 5 {first:.4} last 5 {last:.4}");
    assert!(last >= first, "first 5 {first}, last 5 {last}");
}

#[test]
fn osml_regret_is_at_most_nt_regret() {
    let cfg = homogeneous_config();
    let seed = 0;
    let osml = homogeneous_losses(Method::Osml, &cfg, seed);
    let nt = homogeneous_losses(Method::Nt, &cfg, seed);
    let source = StreamSource::<f32>::load(&cfg).unwrap();
    let eps = source.stream(&cfg, seed).unwrap();
    let spec = cfg.graph_spec(eps[0].support.sample_shape()).unwrap();
    let comp = retrospective_comparator(&eps, &spec, &cfg.baseline(), 2, seed).unwrap();
    let (r_osml, r_nt) = (regret(&osml, &comp).unwrap(), regret(&nt, &comp).unwrap());
    eprintln!("regret osml {r_osml:.4} nt {r_nt:.4}");
    assert!(r_osml <= r_nt, "osml {r_osml}, nt {r_nt}");
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn regret_is_additive_over_segments(
        pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 0..20),
        cut in 0usize..20,
    ) {
        let cut = cut.min(pairs.len());
        let (a, c): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let whole = regret(&a, &c).unwrap();
        let parts = regret(&a[..cut], &c[..cut]).unwrap() + regret(&a[cut..], &c[cut..]).unwrap();
        prop_assert!((whole - parts).abs() <= 1e-9 * (1.0 + whole.abs()));
    }
}
