//! Task buffer, block replay updates, pathway fine-tuning and the per-task
//! pipeline.
//!
//! After a task's pathway is committed the task enters the buffer. Each
//! block of the pathway is then meta-updated, layer by layer from the input
//! side, by replaying buffered tasks whose pathways share the block: the
//! sampled task's whole pathway is adapted on a support minibatch and the
//! query gradient at the adapted point, restricted to the block, is summed
//! over the draws and applied to the block's meta-initials. Finally a copy
//! of the pathway with a fresh head is fine-tuned on support plus query and
//! evaluated on the test split.

use std::fmt;
use std::time::Instant;

use rand::{Rng, RngCore};

use crate::autodiff::{sgd_step, ParamSet, Real};
use crate::graph::{block_prefix, BlockId, MetaGraph, Pathway};
use crate::rng;
use crate::search::{adapt_with, construct_pathway, loss_and_grads, Route, SearchConfig};
use crate::tasks::{Dataset, Episode};
use crate::{Error, Result};

/// A processed task and the pathway committed for it.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskRecord<S> {
    pub task_index: usize,
    pub episode: Episode<S>,
    pub pathway: Pathway,
}

/// Append-only history of processed tasks in arrival order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct TaskBuffer<S> {
    records: Vec<TaskRecord<S>>,
}

impl<S: Real> TaskBuffer<S> {
    pub fn new() -> Self {
        Self { records: Vec::new() }
    }

    /// Appends `record`, whose index must equal the current length.
    pub fn add(&mut self, record: TaskRecord<S>) -> Result<()> {
        if record.task_index != self.records.len() {
            return Err(Error::TaskIndex {
                expected: self.records.len(),
                got: record.task_index,
            });
        }
        self.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[TaskRecord<S>] {
        &self.records
    }

    /// Records whose pathway uses `block`.
    pub fn sharing(&self, block: BlockId) -> Vec<&TaskRecord<S>> {
        self.records.iter().filter(|r| r.pathway.contains(block)).collect()
    }
}

/// `k` draws, uniform with replacement, from the records sharing `block`.
pub fn sample_sharing_tasks<'a, S: Real, R: Rng + ?Sized>(
    buffer: &'a TaskBuffer<S>,
    block: BlockId,
    k: usize,
    rng: &mut R,
) -> Result<Vec<&'a TaskRecord<S>>> {
    let sharing = buffer.sharing(block);
    if sharing.is_empty() {
        return Err(Error::NoSharingTask(block));
    }
    Ok((0..k).map(|_| sharing[rng.random_range(0..sharing.len())]).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct UpdateConfig {
    /// Meta learning rate of replayed block updates.
    pub block_meta_lr: f64,
    /// Inner adaptation rate used while replaying a buffered task.
    pub block_inner_lr: f64,
    pub finetune_lr: f64,
    /// Rounds over the pathway's layers per task.
    pub meta_rounds: usize,
    /// Upper bound on buffered tasks drawn per block update; the number of
    /// draws is `min(replay_tasks, sharing tasks)`.
    pub replay_tasks: usize,
    pub finetune_steps: usize,
    /// Splits larger than this are replayed as uniform sub-batches.
    pub batch_cap: usize,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        Self {
            block_meta_lr: 0.001,
            block_inner_lr: 0.01,
            finetune_lr: 0.001,
            meta_rounds: 5,
            replay_tasks: 4,
            finetune_steps: 20,
            batch_cap: 64,
        }
    }
}

impl UpdateConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("block_meta_lr", self.block_meta_lr),
            ("block_inner_lr", self.block_inner_lr),
            ("finetune_lr", self.finetune_lr),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::ConfigValue(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        if self.replay_tasks == 0 || self.batch_cap == 0 {
            return Err(Error::ConfigValue("replay_tasks and batch_cap must be at least 1".into()));
        }
        Ok(())
    }
}

/// What block replay needs from a model: pathway parameters, a task head,
/// and the loss gradient of a pathway.
pub trait PathwayModel<S: Real> {
    /// Meta-initials of the pathway's blocks under graph-wide keys.
    fn pathway_params(&self, pathway: &Pathway) -> Result<ParamSet<S>>;
    /// Meta-initials of one block under graph-wide keys.
    fn block_params(&self, block: BlockId) -> Result<ParamSet<S>>;
    /// A fresh per-task head (possibly empty).
    fn task_head(&self, rng: &mut dyn RngCore) -> ParamSet<S>;
    /// Loss of `params` through `pathway` on `data` and its gradient.
    fn pathway_loss(&self, pathway: &Pathway, params: &ParamSet<S>, data: &Dataset<S>) -> Result<(f64, ParamSet<S>)>;
    /// Overwrites meta-initials from graph-wide keys.
    fn assign_params(&mut self, update: &ParamSet<S>) -> Result<()>;
    fn layer_of(&self, block: BlockId) -> Option<usize>;
}

impl<S: Real> PathwayModel<S> for MetaGraph<S> {
    fn pathway_params(&self, pathway: &Pathway) -> Result<ParamSet<S>> {
        MetaGraph::pathway_params(self, pathway)
    }

    fn block_params(&self, block: BlockId) -> Result<ParamSet<S>> {
        MetaGraph::block_params(self, block)
    }

    fn task_head(&self, rng: &mut dyn RngCore) -> ParamSet<S> {
        self.fresh_head(rng)
    }

    fn pathway_loss(&self, pathway: &Pathway, params: &ParamSet<S>, data: &Dataset<S>) -> Result<(f64, ParamSet<S>)> {
        let (loss, grads, _) = loss_and_grads(self, Route::Path(pathway), params, data)?;
        Ok((loss, grads))
    }

    fn assign_params(&mut self, update: &ParamSet<S>) -> Result<()> {
        MetaGraph::assign_params(self, update)
    }

    fn layer_of(&self, block: BlockId) -> Option<usize> {
        MetaGraph::layer_of(self, block)
    }
}

/// First-order replay gradient of one buffered task: adapt the task's whole
/// pathway (plus a fresh head) on `support` with one step of `inner_lr`,
/// then return the query loss and its gradient at the adapted point.
pub fn replay_gradient<S: Real, M: PathwayModel<S> + ?Sized>(
    model: &M,
    pathway: &Pathway,
    support: &Dataset<S>,
    query: &Dataset<S>,
    inner_lr: f64,
    head_rng: &mut dyn RngCore,
) -> Result<(f64, ParamSet<S>)> {
    let mut init = model.pathway_params(pathway)?;
    init.extend(model.task_head(head_rng));
    let adapted = adapt_with(&init, inner_lr, 1, |p| Ok(model.pathway_loss(pathway, p, support)?.1))?;
    model.pathway_loss(pathway, &adapted, query)
}

/// One entry of the update journal.
#[derive(Clone, Debug, PartialEq)]
pub struct JournalEntry {
    pub task: usize,
    pub layer: usize,
    pub block: BlockId,
    /// Euclidean norm of the applied parameter change.
    pub update_norm: f64,
}

impl fmt::Display for JournalEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "task={} layer={} block={} update_norm={:.6e}",
            self.task, self.layer, self.block, self.update_norm
        )
    }
}

/// Replay update of block `block` in layer `layer`: `min(K, #sharing)`
/// buffered tasks are drawn, each contributes the block's component of its
/// first-order replay gradient, and the sum is applied with
/// `block_meta_lr`. No other block changes.
pub fn block_meta_update<S: Real, M: PathwayModel<S> + ?Sized, R: RngCore>(
    model: &mut M,
    layer: usize,
    block: BlockId,
    buffer: &TaskBuffer<S>,
    cfg: &UpdateConfig,
    rng: &mut R,
) -> Result<JournalEntry> {
    if model.layer_of(block) != Some(layer) {
        return Err(Error::UnknownBlock(block));
    }
    let sharing = buffer.sharing(block).len();
    let draws = sample_sharing_tasks(buffer, block, cfg.replay_tasks.min(sharing), rng)?;
    let prefix = block_prefix(block);
    let mut total: Option<ParamSet<S>> = None;
    for record in draws {
        let support = record.episode.support.minibatch(cfg.batch_cap, rng);
        let query = record.episode.query.minibatch(cfg.batch_cap, rng);
        let (_, grads) = replay_gradient(&*model, &record.pathway, &support, &query, cfg.block_inner_lr, rng)?;
        let part = grads.with_prefix(&prefix);
        match &mut total {
            None => total = Some(part),
            Some(t) => t.accumulate(&part)?,
        }
    }
    let total = total.expect("at least one sharing task");
    let current = model.block_params(block)?;
    let updated = sgd_step(&current, &total, cfg.block_meta_lr)?;
    if !updated.is_finite() {
        return Err(Error::NonFinite("block update"));
    }
    let update_norm = total.norm() * cfg.block_meta_lr;
    model.assign_params(&updated)?;
    Ok(JournalEntry {
        task: buffer.len().saturating_sub(1),
        layer,
        block,
        update_norm,
    })
}

/// `meta_rounds` rounds, each updating the pathway's blocks from the first
/// layer to the last. Returns the journal of applied updates.
pub fn meta_update_pathway<S: Real, M: PathwayModel<S> + ?Sized, R: RngCore>(
    model: &mut M,
    pathway: &Pathway,
    buffer: &TaskBuffer<S>,
    cfg: &UpdateConfig,
    rng: &mut R,
) -> Result<Vec<JournalEntry>> {
    let mut journal = Vec::with_capacity(cfg.meta_rounds * pathway.len());
    for _ in 0..cfg.meta_rounds {
        for (layer, &block) in pathway.blocks().iter().enumerate() {
            journal.push(block_meta_update(model, layer, block, buffer, cfg, rng)?);
        }
    }
    Ok(journal)
}

/// Copies the pathway's meta-initials, adds a fresh head and runs
/// `steps` gradient steps on support followed by query.
pub fn finetune_pathway<S: Real, R: Rng + ?Sized>(
    graph: &MetaGraph<S>,
    pathway: &Pathway,
    episode: &Episode<S>,
    lr: f64,
    steps: usize,
    head_rng: &mut R,
) -> Result<ParamSet<S>> {
    let mut params = graph.pathway_params(pathway)?;
    params.extend(graph.fresh_head(head_rng));
    let train = episode.train()?;
    adapt_with(&params, lr, steps, |p| Ok(loss_and_grads(graph, Route::Path(pathway), p, &train)?.1))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

/// Accuracy (argmax of logits) and mean cross-entropy on `data`.
pub fn evaluate<S: Real>(
    graph: &MetaGraph<S>,
    params: &ParamSet<S>,
    pathway: &Pathway,
    data: &Dataset<S>,
) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty test split".into()));
    }
    let (loss, _, _) = loss_and_grads(graph, Route::Path(pathway), params, data)?;
    let logits = graph.pathway_forward(pathway, params, &data.inputs)?;
    let correct = logits
        .argmax_rows()
        .iter()
        .zip(&data.labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(Evaluation {
        accuracy: correct as f64 / data.len() as f64,
        loss,
    })
}

/// Per-task outcome shared by OSML and the baselines.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskResult {
    pub task_index: usize,
    pub tag: String,
    pub accuracy: f64,
    /// Held-out cross-entropy of the final task parameters.
    pub test_loss: f64,
    /// Query loss of the last search meta-step, when a search ran.
    pub search_loss: Option<f64>,
    pub pathway: Pathway,
    pub blocks_per_layer: Vec<usize>,
    pub novel_layers: Vec<usize>,
    pub wall_ms: f64,
}

/// Search, commit, buffer, replay and fine-tuning settings of OSML.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct OsmlConfig {
    pub search: SearchConfig,
    pub update: UpdateConfig,
}

/// Randomness of one task, derived from the run seed and the task index so
/// that every stage draws from its own stream.
pub struct TaskStreams {
    pub search: rng::Rng,
    pub replay: rng::Rng,
    pub finetune: rng::Rng,
}

impl TaskStreams {
    pub fn new(run_seed: u64, task_index: usize) -> Self {
        let t = task_index as u64;
        Self {
            search: rng::stream(run_seed, "search", t),
            replay: rng::stream(run_seed, "replay", t),
            finetune: rng::stream(run_seed, "finetune-head", t),
        }
    }
}

/// The whole per-task pipeline: construct and commit a pathway, record the
/// task, replay-update the pathway's blocks, fine-tune and evaluate.
pub fn run_osml_task<S: Real>(
    graph: &mut MetaGraph<S>,
    buffer: &mut TaskBuffer<S>,
    episode: &Episode<S>,
    cfg: &OsmlConfig,
    run_seed: u64,
    journal: Option<&mut Vec<JournalEntry>>,
) -> Result<TaskResult> {
    cfg.update.validate()?;
    let start = Instant::now();
    let task_index = buffer.len();
    let mut streams = TaskStreams::new(run_seed, task_index);
    let outcome = construct_pathway(
        graph,
        &episode.support,
        &episode.query,
        task_index,
        &cfg.search,
        &mut streams.search,
    )?;
    buffer.add(TaskRecord {
        task_index,
        episode: episode.clone(),
        pathway: outcome.pathway.clone(),
    })?;
    let entries = meta_update_pathway(graph, &outcome.pathway, buffer, &cfg.update, &mut streams.replay)?;
    if let Some(j) = journal {
        j.extend(entries);
    }
    let params = finetune_pathway(
        graph,
        &outcome.pathway,
        episode,
        cfg.update.finetune_lr,
        cfg.update.finetune_steps,
        &mut streams.finetune,
    )?;
    let eval = evaluate(graph, &params, &outcome.pathway, &episode.test)?;
    Ok(TaskResult {
        task_index,
        tag: episode.tag.clone(),
        accuracy: eval.accuracy,
        test_loss: eval.loss,
        search_loss: outcome.query_losses.last().copied(),
        pathway: outcome.pathway,
        blocks_per_layer: graph.block_counts(),
        novel_layers: outcome.novel_layers,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}
