//! Comparison learners on the same model and task plumbing as OSML.
//!
//! - NT trains a fresh model on each task's support set.
//! - FT keeps one model and keeps training it on every task's support plus
//!   query set.
//! - FTML keeps one shared initialization, meta-updates it by first-order
//!   replay of buffered tasks, then fine-tunes a copy per task.
//!
//! Every task gets a fresh head. The "large" variants run the same learners
//! on a widened [`GraphSpec`].

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::RngCore;

use crate::autodiff::{sgd_step, ParamSet, Real};
use crate::graph::{GraphSpec, MetaGraph, Pathway, HEAD_BIAS, HEAD_WEIGHT};
use crate::metaupdate::{
    evaluate, finetune_pathway, replay_gradient, sample_sharing_tasks, PathwayModel, TaskBuffer, TaskRecord,
    TaskResult, TaskStreams,
};
use crate::rng;
use crate::search::{adapt, Route};
use crate::tasks::Episode;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Osml,
    Ftml,
    Ft,
    Nt,
    FtmlLarge,
    FtLarge,
    NtLarge,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Osml,
        Method::Ftml,
        Method::Ft,
        Method::Nt,
        Method::FtmlLarge,
        Method::FtLarge,
        Method::NtLarge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Osml => "osml",
            Method::Ftml => "ftml",
            Method::Ft => "ft",
            Method::Nt => "nt",
            Method::FtmlLarge => "ftml_large",
            Method::FtLarge => "ft_large",
            Method::NtLarge => "nt_large",
        }
    }

    pub fn is_large(self) -> bool {
        matches!(self, Method::FtmlLarge | Method::FtLarge | Method::NtLarge)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::ConfigValue(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineConfig {
    /// Rate and steps of per-task training (NT, FT) and fine-tuning (FTML).
    pub train_lr: f64,
    pub train_steps: usize,
    pub ftml_inner_lr: f64,
    pub ftml_meta_lr: f64,
    pub ftml_meta_steps: usize,
    /// Upper bound on buffered tasks drawn per meta-step.
    pub ftml_replay_tasks: usize,
    pub batch_cap: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        let update = crate::metaupdate::UpdateConfig::default();
        Self {
            train_lr: update.finetune_lr,
            train_steps: update.finetune_steps,
            ftml_inner_lr: update.block_inner_lr,
            ftml_meta_lr: update.block_meta_lr,
            ftml_meta_steps: update.meta_rounds,
            ftml_replay_tasks: update.replay_tasks,
            batch_cap: update.batch_cap,
        }
    }
}

/// Seed of the initial graph of a run; shared by every learner so that
/// matched runs start from the same parameters.
pub fn graph_seed(run_seed: u64) -> u64 {
    rng::derive(run_seed, "graph", 0)
}

fn result_for<S: Real>(
    graph: &MetaGraph<S>,
    episode: &Episode<S>,
    task_index: usize,
    params: &ParamSet<S>,
    start: Instant,
) -> Result<TaskResult> {
    let pathway = graph.default_pathway();
    let eval = evaluate(graph, params, &pathway, &episode.test)?;
    Ok(TaskResult {
        task_index,
        tag: episode.tag.clone(),
        accuracy: eval.accuracy,
        test_loss: eval.loss,
        search_loss: None,
        pathway,
        blocks_per_layer: graph.block_counts(),
        novel_layers: Vec::new(),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// A fresh model trained on the support set only. Its initialization and
/// head depend on the episode's own seed, not on its stream position.
pub fn run_nt<S: Real>(
    episode: &Episode<S>,
    task_index: usize,
    spec: &GraphSpec,
    cfg: &BaselineConfig,
    run_seed: u64,
) -> Result<TaskResult> {
    let start = Instant::now();
    let graph = MetaGraph::init(spec.clone(), rng::derive(run_seed, "nt-graph", episode.seed))?;
    let mut params = graph.params();
    params.extend(graph.fresh_head(&mut rng::stream(run_seed, "nt-head", episode.seed)));
    let pathway = graph.default_pathway();
    let params = adapt(&graph, Route::Path(&pathway), &params, &episode.support, cfg.train_lr, cfg.train_steps)?;
    result_for(&graph, episode, task_index, &params, start)
}

/// A model carried across tasks.
#[derive(Clone, Debug, PartialEq)]
pub struct FtState<S> {
    pub graph: MetaGraph<S>,
    pub tasks_seen: usize,
}

impl<S: Real> FtState<S> {
    pub fn new(spec: &GraphSpec, run_seed: u64) -> Result<Self> {
        Ok(Self {
            graph: MetaGraph::init(spec.clone(), graph_seed(run_seed))?,
            tasks_seen: 0,
        })
    }
}

/// Trains the carried model (with a fresh head) on support plus query,
/// keeps the trained body, evaluates on test.
pub fn run_ft<S: Real>(state: &mut FtState<S>, episode: &Episode<S>, cfg: &BaselineConfig, run_seed: u64) -> Result<TaskResult> {
    let start = Instant::now();
    let task_index = state.tasks_seen;
    let mut streams = TaskStreams::new(run_seed, task_index);
    let pathway = state.graph.default_pathway();
    let params = finetune_pathway(&state.graph, &pathway, episode, cfg.train_lr, cfg.train_steps, &mut streams.finetune)?;
    let mut body = params.clone();
    body.remove(HEAD_WEIGHT);
    body.remove(HEAD_BIAS);
    state.graph.assign_params(&body)?;
    state.tasks_seen += 1;
    result_for(&state.graph, episode, task_index, &params, start)
}

/// A shared initialization plus its own task buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct FtmlState<S> {
    pub graph: MetaGraph<S>,
    pub buffer: TaskBuffer<S>,
}

impl<S: Real> FtmlState<S> {
    pub fn new(spec: &GraphSpec, run_seed: u64) -> Result<Self> {
        Ok(Self {
            graph: MetaGraph::init(spec.clone(), graph_seed(run_seed))?,
            buffer: TaskBuffer::new(),
        })
    }
}

/// One first-order meta-step of a shared initialization: `min(K, #buffer)`
/// buffered tasks drawn with replacement, each adapted on a support
/// minibatch, with the query gradients of every body parameter summed and
/// applied at `ftml_meta_lr`.
pub fn ftml_meta_step<S: Real, M: PathwayModel<S> + ?Sized, R: RngCore>(
    model: &mut M,
    pathway: &Pathway,
    buffer: &TaskBuffer<S>,
    cfg: &BaselineConfig,
    rng: &mut R,
) -> Result<()> {
    let anchor = *pathway
        .blocks()
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty pathway".into()))?;
    let draws = sample_sharing_tasks(buffer, anchor, cfg.ftml_replay_tasks.min(buffer.len()), rng)?;
    let mut total: Option<ParamSet<S>> = None;
    for record in draws {
        let support = record.episode.support.minibatch(cfg.batch_cap, rng);
        let query = record.episode.query.minibatch(cfg.batch_cap, rng);
        let (_, mut grads) = replay_gradient(&*model, pathway, &support, &query, cfg.ftml_inner_lr, rng)?;
        grads.remove(HEAD_WEIGHT);
        grads.remove(HEAD_BIAS);
        match &mut total {
            None => total = Some(grads),
            Some(t) => t.accumulate(&grads)?,
        }
    }
    let total = total.expect("buffer is not empty");
    let updated = sgd_step(&model.pathway_params(pathway)?, &total, cfg.ftml_meta_lr)?;
    if !updated.is_finite() {
        return Err(Error::NonFinite("meta update"));
    }
    model.assign_params(&updated)
}

/// Buffers the task, meta-updates the shared initialization, then
/// fine-tunes a copy on support plus query and evaluates it.
pub fn run_ftml<S: Real>(state: &mut FtmlState<S>, episode: &Episode<S>, cfg: &BaselineConfig, run_seed: u64) -> Result<TaskResult> {
    let start = Instant::now();
    let task_index = state.buffer.len();
    let mut streams = TaskStreams::new(run_seed, task_index);
    let pathway = state.graph.default_pathway();
    state.buffer.add(TaskRecord {
        task_index,
        episode: episode.clone(),
        pathway: pathway.clone(),
    })?;
    for _ in 0..cfg.ftml_meta_steps {
        ftml_meta_step(&mut state.graph, &pathway, &state.buffer, cfg, &mut streams.replay)?;
    }
    let params = finetune_pathway(&state.graph, &pathway, episode, cfg.train_lr, cfg.train_steps, &mut streams.finetune)?;
    result_for(&state.graph, episode, task_index, &params, start)
}

/// `Σ_i (alg_i - comparator_i)`.
pub fn regret(alg: &[f64], comparator: &[f64]) -> Result<f64> {
    if alg.len() != comparator.len() {
        return Err(Error::InvalidArgument(format!(
            "regret over {} and {} losses",
            alg.len(),
            comparator.len()
        )));
    }
    Ok(alg.iter().zip(comparator).map(|(a, c)| a - c).sum())
}

/// Approximate best-in-hindsight comparator losses: one initialization is
/// meta-trained over the whole stream for `epochs` passes (FTML meta-steps
/// over a buffer holding every task), then each task is fine-tuned from it
/// and its held-out loss recorded.
pub fn retrospective_comparator<S: Real>(
    episodes: &[Episode<S>],
    spec: &GraphSpec,
    cfg: &BaselineConfig,
    epochs: usize,
    run_seed: u64,
) -> Result<Vec<f64>> {
    let mut state = FtmlState::new(spec, run_seed)?;
    let pathway = state.graph.default_pathway();
    for (i, ep) in episodes.iter().enumerate() {
        state.buffer.add(TaskRecord {
            task_index: i,
            episode: ep.clone(),
            pathway: pathway.clone(),
        })?;
    }
    let mut rng = rng::stream(run_seed, "comparator", 0);
    for _ in 0..epochs {
        for _ in 0..episodes.len() {
            for _ in 0..cfg.ftml_meta_steps {
                ftml_meta_step(&mut state.graph, &pathway, &state.buffer, cfg, &mut rng)?;
            }
        }
    }
    episodes
        .iter()
        .enumerate()
        .map(|(i, ep)| {
            let mut streams = TaskStreams::new(run_seed, i);
            let params = finetune_pathway(&state.graph, &pathway, ep, cfg.train_lr, cfg.train_steps, &mut streams.finetune)?;
            Ok(evaluate(&state.graph, &params, &pathway, &ep.test)?.loss)
        })
        .collect()
}

/// The graph spec with every layer widened by the given per-layer factors, e.g.
/// the final per-layer block counts of an OSML run.
pub fn large_spec(spec: &GraphSpec, factors: &[usize]) -> Result<GraphSpec> {
    spec.widened(factors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{synthetic_hetero_stream, ModeSpec, SplitSizes, SyntheticConfig};

    fn stream_of(n: usize, seed: u64) -> Vec<Episode<f64>> {
        let cfg = SyntheticConfig {
            tasks_per_mode: n,
            n_classes: 3,
            dims: 8,
            signal_dims: 2,
            sizes: SplitSizes::new(5, 5, 4),
            seed,
            ..SyntheticConfig::default()
        };
        synthetic_hetero_stream(&ModeSpec::homogeneous(seed), &cfg).unwrap()
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("dpm".parse::<Method>().is_err());
    }

    #[test]
    fn regret_cases() {
        assert_eq!(regret(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(regret(&[1.0, 2.0], &[0.5, 1.0]).unwrap(), 1.5);
        assert!(regret(&[1.0], &[]).is_err());
    }

    #[test]
    fn nt_is_deterministic_and_stateless() {
        let eps = stream_of(2, 1);
        let spec = GraphSpec::dense(8, &[6], 3);
        let cfg = BaselineConfig::default();
        let a = run_nt(&eps[0], 0, &spec, &cfg, 3).unwrap();
        let b = run_nt(&eps[0], 0, &spec, &cfg, 3).unwrap();
        assert_eq!(a, TaskResult { wall_ms: a.wall_ms, ..b });
        // position in the stream does not matter
        let later = run_nt(&eps[0], 5, &spec, &cfg, 3).unwrap();
        assert_eq!(later.accuracy, a.accuracy);
    }

    #[test]
    fn ft_carries_state() {
        let eps = stream_of(2, 2);
        let spec = GraphSpec::dense(8, &[6], 3);
        let cfg = BaselineConfig::default();
        let mut state = FtState::<f64>::new(&spec, 0).unwrap();
        let init = state.graph.clone();
        run_ft(&mut state, &eps[0], &cfg, 0).unwrap();
        assert_ne!(state.graph.params(), init.params());
        assert_eq!(state.tasks_seen, 1);
    }

    #[test]
    fn ftml_zero_meta_rate_keeps_initialization() {
        let eps = stream_of(3, 3);
        let spec = GraphSpec::dense(8, &[6], 3);
        let cfg = BaselineConfig {
            ftml_meta_lr: 0.0,
            ..BaselineConfig::default()
        };
        let mut state = FtmlState::<f64>::new(&spec, 0).unwrap();
        let init = state.graph.params();
        for ep in &eps {
            run_ftml(&mut state, ep, &cfg, 0).unwrap();
        }
        assert_eq!(state.graph.params(), init);
        assert_eq!(state.buffer.len(), 3);
    }

    #[test]
    fn large_spec_widens_layers() {
        let spec = GraphSpec::dense(8, &[6, 4], 3);
        let wide = large_spec(&spec, &[2, 3]).unwrap();
        assert_eq!(wide.layers[0].width(), 12);
        assert_eq!(wide.layers[1].fan_in(), 12);
        assert_eq!(wide.layers[1].width(), 12);
    }
}
