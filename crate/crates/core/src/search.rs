//! Per-task pathway search.
//!
//! A search episode spawns one candidate block per layer, then alternates
//! inner adaptation on the support set with first-order meta-steps on the
//! query set that move every block's meta-initials and the importance
//! coefficients. The argmax of the coefficients is committed as the task's
//! pathway.
//!
//! The meta-step treats adapted parameters as leaves: the gradient of the
//! query loss at the adapted point is applied directly to the meta-initials.
//! All state changes happen in place on the graph, the importance vector and
//! the task head.

use rand::Rng;

use crate::autodiff::{sgd_step, ParamSet, Real, Tape};
use crate::graph::{select_pathway, ImportanceVector, MetaGraph, Pathway, Selection};
use crate::tasks::Dataset;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SearchConfig {
    /// Inner adaptation learning rate.
    pub inner_lr: f64,
    /// Meta learning rate of block parameters and head during search.
    pub meta_lr_params: f64,
    /// Meta learning rate of the importance coefficients.
    pub meta_lr_importance: f64,
    pub inner_steps: usize,
    pub search_rounds: usize,
    /// Spawn a candidate block per layer before searching.
    pub spawn_novel: bool,
    /// Reserved for differentiating through the inner update; unsupported.
    pub second_order: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            inner_lr: 0.01,
            meta_lr_params: 0.001,
            meta_lr_importance: 0.01,
            inner_steps: 1,
            search_rounds: 10,
            spawn_novel: true,
            second_order: false,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("inner_lr", self.inner_lr),
            ("meta_lr_params", self.meta_lr_params),
            ("meta_lr_importance", self.meta_lr_importance),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::ConfigValue(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        if self.inner_steps == 0 {
            return Err(Error::ConfigValue("inner_steps must be at least 1".into()));
        }
        if self.second_order {
            return Err(Error::Unsupported("second-order search meta-gradients"));
        }
        Ok(())
    }
}

/// Which forward pass a loss goes through.
#[derive(Clone, Copy, Debug)]
pub enum Route<'a, S> {
    /// Importance-weighted mixture of every layer member.
    Mixed(&'a ImportanceVector<S>),
    /// Exactly the pathway's blocks.
    Path(&'a Pathway),
}

/// Cross-entropy of `params` on `data`, with gradients for every entry of
/// `params` and, for a mixed route, for the importance coefficients.
pub fn loss_and_grads<S: Real>(
    graph: &MetaGraph<S>,
    route: Route<'_, S>,
    params: &ParamSet<S>,
    data: &Dataset<S>,
) -> Result<(f64, ParamSet<S>, Option<ImportanceVector<S>>)> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty split".into()));
    }
    let mut tape = Tape::new();
    let vars = params.to_vars(&mut tape);
    let x = tape.leaf(data.inputs.clone());
    let (logits, o_vars) = match route {
        Route::Mixed(o) => {
            let ov = o.to_vars(&mut tape);
            (graph.mixed_forward_tape(&mut tape, &ov, &vars, x)?, Some(ov))
        }
        Route::Path(p) => (graph.pathway_forward_tape(&mut tape, p, &vars, x)?, None),
    };
    let loss = tape.cross_entropy(logits, &data.labels)?;
    let value = tape.value(loss).item().as_f64();
    if !value.is_finite() {
        return Err(Error::NonFinite("training loss"));
    }
    let grads = tape.backward(loss)?;
    let o_grad = o_vars
        .map(|ov| -> Result<_> {
            Ok(ImportanceVector {
                layers: ov.iter().map(|&v| grads.wrt(v).cloned()).collect::<Result<_>>()?,
            })
        })
        .transpose()?;
    Ok((value, ParamSet::from_grads(&vars, &grads)?, o_grad))
}

/// `steps` plain gradient steps from `init`, with `grad` supplying the
/// gradient at the current point. Returns the adapted copy.
pub fn adapt_with<S: Real>(
    init: &ParamSet<S>,
    lr: f64,
    steps: usize,
    mut grad: impl FnMut(&ParamSet<S>) -> Result<ParamSet<S>>,
) -> Result<ParamSet<S>> {
    let mut params = init.clone();
    for _ in 0..steps {
        let g = grad(&params)?;
        params = sgd_step(&params, &g, lr)?;
    }
    Ok(params)
}

/// [`adapt_with`] on the cross-entropy of `data` through `route`.
pub fn adapt<S: Real>(
    graph: &MetaGraph<S>,
    route: Route<'_, S>,
    init: &ParamSet<S>,
    data: &Dataset<S>,
    lr: f64,
    steps: usize,
) -> Result<ParamSet<S>> {
    adapt_with(init, lr, steps, |p| Ok(loss_and_grads(graph, route, p, data)?.1))
}

/// Inner adaptation through the mixed graph with `o` held fixed. `init`
/// holds the meta-initials of every layer member plus the task head.
pub fn inner_adapt<S: Real>(
    graph: &MetaGraph<S>,
    o: &ImportanceVector<S>,
    init: &ParamSet<S>,
    support: &Dataset<S>,
    cfg: &SearchConfig,
) -> Result<ParamSet<S>> {
    adapt(graph, Route::Mixed(o), init, support, cfg.inner_lr, cfg.inner_steps)
}

/// One first-order meta-step: adapt on `support`, take the query-loss
/// gradient at the adapted point, and apply it to every member's
/// meta-initials and the head (rate `meta_lr_params`) and to `o` (rate
/// `meta_lr_importance`). Returns the query loss at the adapted point.
pub fn meta_search_step<S: Real>(
    graph: &mut MetaGraph<S>,
    o: &mut ImportanceVector<S>,
    head: &mut ParamSet<S>,
    support: &Dataset<S>,
    query: &Dataset<S>,
    cfg: &SearchConfig,
) -> Result<f64> {
    if cfg.second_order {
        return Err(Error::Unsupported("second-order search meta-gradients"));
    }
    let mut init = graph.params();
    init.extend(head.clone());
    let adapted = inner_adapt(graph, o, &init, support, cfg)?;
    let (loss, grads, o_grad) = loss_and_grads(graph, Route::Mixed(o), &adapted, query)?;
    let o_grad = o_grad.expect("mixed route yields importance gradients");

    let updated = sgd_step(&init, &grads, cfg.meta_lr_params)?;
    graph.assign_params(&updated)?;
    let head_keys: Vec<String> = head.keys().map(str::to_string).collect();
    for k in head_keys {
        head.insert(k.clone(), updated.require(&k)?.clone());
    }
    let lr = S::from_f64(cfg.meta_lr_importance);
    for (layer, g) in o.layers.iter_mut().zip(&o_grad.layers) {
        *layer = layer.axpy(lr, g)?;
    }
    Ok(loss)
}

/// Result of one search episode.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome<S> {
    pub pathway: Pathway,
    pub selection: Selection,
    /// Importance coefficients at selection time.
    pub importance: ImportanceVector<S>,
    /// Query loss of each meta-step.
    pub query_losses: Vec<f64>,
    /// Layers whose candidate was committed.
    pub novel_layers: Vec<usize>,
}

/// Spawns candidates (when enabled and there is at least one round), runs
/// `search_rounds` meta-steps with a fresh head, selects the argmax pathway
/// and commits it.
pub fn construct_pathway<S: Real, R: Rng + ?Sized>(
    graph: &mut MetaGraph<S>,
    support: &Dataset<S>,
    query: &Dataset<S>,
    task_index: usize,
    cfg: &SearchConfig,
    rng: &mut R,
) -> Result<SearchOutcome<S>> {
    cfg.validate()?;
    let mut head = graph.fresh_head(rng);
    let mut o = if cfg.spawn_novel && cfg.search_rounds > 0 {
        graph.spawn_novel_candidates(task_index, rng)
    } else {
        ImportanceVector::zeros(&graph.member_counts())
    };
    let mut query_losses = Vec::with_capacity(cfg.search_rounds);
    for _ in 0..cfg.search_rounds {
        query_losses.push(meta_search_step(graph, &mut o, &mut head, support, query, cfg)?);
    }
    let selection = select_pathway(&o)?;
    let novel_layers = selection
        .0
        .iter()
        .zip(graph.layers())
        .enumerate()
        .filter(|(_, (&i, layer))| layer.candidate.is_some() && i == layer.blocks.len())
        .map(|(l, _)| l)
        .collect();
    let pathway = graph.commit(&selection)?;
    Ok(SearchOutcome {
        pathway,
        selection,
        importance: o,
        query_losses,
        novel_layers,
    })
}
