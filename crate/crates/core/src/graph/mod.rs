//! The layered graph of knowledge blocks.
//!
//! Each layer holds one or more committed blocks sharing a [`BlockSpec`]. A
//! search episode adds one novel candidate per layer; the relaxed forward
//! pass mixes every member of a layer by `softmax(o_l)`, and
//! [`MetaGraph::commit`] keeps a candidate only when the argmax selected it.
//! The linear classifier head lives outside the block graph and is drawn
//! fresh for each task.

mod checkpoint;

use std::collections::BTreeMap;

use rand::Rng;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::autodiff::{argmax, ParamSet, ParamVars, Real, Tape, Tensor, Var, BN_EPS};
use crate::rng;
use crate::{Error, Result};

pub type BlockId = u64;

/// Architecture shared by every block of a layer: a linear map (dense or
/// convolutional, no bias) followed by batch normalisation and ReLU.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BlockSpec {
    Dense {
        inputs: usize,
        units: usize,
    },
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
}

impl BlockSpec {
    pub fn param_shapes(&self) -> [(&'static str, Vec<usize>); 3] {
        let (w, c) = match *self {
            BlockSpec::Dense { inputs, units } => (vec![inputs, units], units),
            BlockSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (vec![out_channels, in_channels, kernel, kernel], out_channels),
        };
        [("weight", w), ("gamma", vec![c]), ("beta", vec![c])]
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            BlockSpec::Dense { inputs, .. } => inputs,
            BlockSpec::Conv {
                in_channels, kernel, ..
            } => in_channels * kernel * kernel,
        }
    }

    /// Width of the layer's output (units or channels).
    pub fn width(&self) -> usize {
        match *self {
            BlockSpec::Dense { units, .. } => units,
            BlockSpec::Conv { out_channels, .. } => out_channels,
        }
    }

    /// Same block with output width multiplied by `out` and input width by
    /// `inp`.
    pub fn widened(&self, inp: usize, out: usize) -> Self {
        match *self {
            BlockSpec::Dense { inputs, units } => BlockSpec::Dense {
                inputs: inputs * inp,
                units: units * out,
            },
            BlockSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => BlockSpec::Conv {
                in_channels: in_channels * inp,
                out_channels: out_channels * out,
                kernel,
                stride,
                padding,
            },
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if self.fan_in() == 0 || self.width() == 0 {
            return Err(Error::InvalidArgument(format!("empty block spec {self:?}")));
        }
        match *self {
            BlockSpec::Dense { inputs, units } => {
                let n: usize = input.iter().product();
                if n != inputs {
                    return Err(Error::shape("dense block", input, &[inputs]));
                }
                Ok(vec![units])
            }
            BlockSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if input.len() != 3 || input[0] != in_channels {
                    return Err(Error::shape("conv block", input, &[in_channels]));
                }
                if stride == 0 || kernel > input[1] + 2 * padding || kernel > input[2] + 2 * padding {
                    return Err(Error::InvalidArgument(format!(
                        "conv block {self:?} does not fit input {input:?}"
                    )));
                }
                let oh = (input[1] + 2 * padding - kernel) / stride + 1;
                let ow = (input[2] + 2 * padding - kernel) / stride + 1;
                Ok(vec![out_channels, oh, ow])
            }
        }
    }
}

/// How per-task classifier heads are initialised.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadInit {
    /// All-zero weights and bias.
    Zeros,
    /// Fan-in scaled normal weights, zero bias.
    Normal,
}

/// Architecture of a whole graph: per-sample input shape, one block spec per
/// layer and the number of classes of the head.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<BlockSpec>,
    pub n_classes: usize,
    pub head_init: HeadInit,
}

impl GraphSpec {
    /// Stack of dense blocks of the given widths.
    pub fn dense(input_dim: usize, widths: &[usize], n_classes: usize) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = input_dim;
        for &w in widths {
            layers.push(BlockSpec::Dense {
                inputs: prev,
                units: w,
            });
            prev = w;
        }
        Self {
            input_shape: vec![input_dim],
            layers,
            n_classes,
            head_init: HeadInit::Zeros,
        }
    }

    /// Stack of 3×3-style conv blocks over a `C×H×W` input.
    pub fn conv(
        input_shape: [usize; 3],
        channels: &[usize],
        kernel: usize,
        stride: usize,
        padding: usize,
        n_classes: usize,
    ) -> Self {
        let mut layers = Vec::with_capacity(channels.len());
        let mut prev = input_shape[0];
        for &c in channels {
            layers.push(BlockSpec::Conv {
                in_channels: prev,
                out_channels: c,
                kernel,
                stride,
                padding,
            });
            prev = c;
        }
        Self {
            input_shape: input_shape.to_vec(),
            layers,
            n_classes,
            head_init: HeadInit::Zeros,
        }
    }

    pub fn with_head_init(mut self, head_init: HeadInit) -> Self {
        self.head_init = head_init;
        self
    }

    /// Checks that layers chain and returns the head's input feature count.
    pub fn head_features(&self) -> Result<usize> {
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument("graph needs at least one layer".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::InvalidArgument("head needs at least two classes".into()));
        }
        let mut shape = self.input_shape.clone();
        for spec in &self.layers {
            shape = spec.output_shape(&shape)?;
        }
        Ok(shape.iter().product())
    }

    /// Each layer's output width multiplied by `factors[l]`.
    pub fn widened(&self, factors: &[usize]) -> Result<Self> {
        if factors.len() != self.layers.len() || factors.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "widening factors {factors:?} do not fit {} layers",
                self.layers.len()
            )));
        }
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(l, spec)| {
                let inp = if l == 0 { 1 } else { factors[l - 1] };
                spec.widened(inp, factors[l])
            })
            .collect();
        Ok(Self {
            layers,
            ..self.clone()
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeBlock<S> {
    pub id: BlockId,
    pub layer: usize,
    /// Meta-initial parameters under local keys `weight`, `gamma`, `beta`.
    pub params: ParamSet<S>,
    pub created_at_task: usize,
    pub is_novel: bool,
}

impl<S: Real> KnowledgeBlock<S> {
    fn random<R: Rng + ?Sized>(
        id: BlockId,
        layer: usize,
        spec: &BlockSpec,
        created_at_task: usize,
        is_novel: bool,
        rng: &mut R,
    ) -> Self {
        let mut params = ParamSet::new();
        let [(wk, ws), (gk, gs), (bk, bs)] = spec.param_shapes();
        let std = (2.0 / spec.fan_in() as f64).sqrt();
        params.insert(wk, Tensor::randn(&ws, std, rng));
        params.insert(gk, Tensor::ones(&gs));
        params.insert(bk, Tensor::zeros(&bs));
        Self {
            id,
            layer,
            params,
            created_at_task,
            is_novel,
        }
    }

    /// Parameters under graph-wide keys (`b{id}/…`).
    pub fn keyed_params(&self) -> ParamSet<S> {
        let mut out = ParamSet::new();
        for (k, v) in self.params.iter() {
            out.insert(param_key(self.id, k), v.clone());
        }
        out
    }
}

/// Graph-wide key for a block parameter.
pub fn param_key(id: BlockId, name: &str) -> String {
    format!("{}{name}", block_prefix(id))
}

pub fn block_prefix(id: BlockId) -> String {
    format!("b{id}/")
}

pub const HEAD_WEIGHT: &str = "head/weight";
pub const HEAD_BIAS: &str = "head/bias";

fn parse_block_key(key: &str) -> Option<(BlockId, &str)> {
    let rest = key.strip_prefix('b')?;
    let (id, name) = rest.split_once('/')?;
    Some((id.parse().ok()?, name))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<S> {
    pub blocks: Vec<KnowledgeBlock<S>>,
    pub candidate: Option<KnowledgeBlock<S>>,
}

impl<S> Layer<S> {
    /// Committed blocks followed by the candidate, if any; this is the order
    /// of the layer's importance coefficients.
    pub fn members(&self) -> impl Iterator<Item = &KnowledgeBlock<S>> {
        self.blocks.iter().chain(self.candidate.iter())
    }

    pub fn member_count(&self) -> usize {
        self.blocks.len() + usize::from(self.candidate.is_some())
    }
}

/// Per-layer importance coefficients `o_l`, one entry per layer member.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceVector<S> {
    pub layers: Vec<Tensor<S>>,
}

impl<S: Real> ImportanceVector<S> {
    pub fn zeros(lengths: &[usize]) -> Self {
        Self {
            layers: lengths.iter().map(|&n| Tensor::zeros(&[n])).collect(),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        Self {
            layers: rows
                .iter()
                .map(|r| Tensor::vector(r.iter().map(|&x| S::from_f64(x)).collect()))
                .collect(),
        }
    }

    pub fn to_vars(&self, tape: &mut Tape<S>) -> Vec<Var> {
        self.layers.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    /// Softmax weights of each layer.
    pub fn weights(&self) -> Vec<Vec<S>> {
        self.layers
            .iter()
            .map(|t| crate::autodiff::softmax(t.data()))
            .collect()
    }

    pub fn shifted(&self, c: f64) -> Self {
        let c = S::from_f64(c);
        Self {
            layers: self.layers.iter().map(|t| t.map(|x| x + c)).collect(),
        }
    }
}

/// One committed block per layer.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pathway(pub Vec<BlockId>);

impl Pathway {
    pub fn blocks(&self) -> &[BlockId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: BlockId) -> bool {
        self.0.contains(&id)
    }
}

/// Per-layer member indices chosen by [`select_pathway`], before commit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Selection(pub Vec<usize>);

/// Argmax of each layer's importance, ties to the lowest index (committed
/// blocks come before the candidate).
pub fn select_pathway<S: Real>(o: &ImportanceVector<S>) -> Result<Selection> {
    o.layers
        .iter()
        .enumerate()
        .map(|(l, t)| {
            if t.is_empty() {
                Err(Error::ImportanceLength {
                    layer: l,
                    got: 0,
                    expected: 1,
                })
            } else {
                Ok(argmax(t.data()))
            }
        })
        .collect::<Result<_>>()
        .map(Selection)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaGraph<S> {
    spec: GraphSpec,
    layers: Vec<Layer<S>>,
    head_features: usize,
    next_id: BlockId,
    rng_seed: u64,
}

impl<S: Real> MetaGraph<S> {
    /// One committed block per layer, drawn from a fan-in scaled normal.
    pub fn init(spec: GraphSpec, seed: u64) -> Result<Self> {
        let head_features = spec.head_features()?;
        let mut rng = rng::stream(seed, "graph-init", 0);
        let layers = spec
            .layers
            .iter()
            .enumerate()
            .map(|(l, bs)| Layer {
                blocks: vec![KnowledgeBlock::random(l as BlockId, l, bs, 0, false, &mut rng)],
                candidate: None,
            })
            .collect();
        Ok(Self {
            next_id: spec.layers.len() as BlockId,
            spec,
            layers,
            head_features,
            rng_seed: seed,
        })
    }

    pub(crate) fn from_parts(spec: GraphSpec, layers: Vec<Layer<S>>, next_id: BlockId, rng_seed: u64) -> Result<Self> {
        let head_features = spec.head_features()?;
        if layers.len() != spec.layers.len() || layers.iter().any(|l| l.blocks.is_empty()) {
            return Err(Error::Checkpoint("every layer needs a committed block".into()));
        }
        Ok(Self {
            spec,
            layers,
            head_features,
            next_id,
            rng_seed,
        })
    }

    pub fn spec(&self) -> &GraphSpec {
        &self.spec
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn next_block_id(&self) -> BlockId {
        self.next_id
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[Layer<S>] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &Layer<S> {
        &self.layers[l]
    }

    /// Committed blocks per layer.
    pub fn block_counts(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.blocks.len()).collect()
    }

    pub fn member_counts(&self) -> Vec<usize> {
        self.layers.iter().map(Layer::member_count).collect()
    }

    pub fn head_features(&self) -> usize {
        self.head_features
    }

    pub fn block(&self, id: BlockId) -> Option<&KnowledgeBlock<S>> {
        self.layers.iter().flat_map(Layer::members).find(|b| b.id == id)
    }

    fn block_mut(&mut self, id: BlockId) -> Option<&mut KnowledgeBlock<S>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.blocks.iter_mut().chain(l.candidate.iter_mut()))
            .find(|b| b.id == id)
    }

    /// Layer of a committed block or candidate.
    pub fn layer_of(&self, id: BlockId) -> Option<usize> {
        self.block(id).map(|b| b.layer)
    }

    /// A freshly initialised classifier head.
    pub fn fresh_head<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamSet<S> {
        let mut head = ParamSet::new();
        let (f, c) = (self.head_features, self.spec.n_classes);
        let w = match self.spec.head_init {
            HeadInit::Zeros => Tensor::zeros(&[f, c]),
            HeadInit::Normal => Tensor::randn(&[f, c], (1.0 / f as f64).sqrt(), rng),
        };
        head.insert(HEAD_WEIGHT, w);
        head.insert(HEAD_BIAS, Tensor::zeros(&[c]));
        head
    }

    /// Adds one novel candidate block to every layer and returns all-zero
    /// importance coefficients covering existing blocks plus the candidate.
    pub fn spawn_novel_candidates<R: Rng + ?Sized>(
        &mut self,
        task_index: usize,
        rng: &mut R,
    ) -> ImportanceVector<S> {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let id = self.next_id;
            self.next_id += 1;
            layer.candidate = Some(KnowledgeBlock::random(
                id,
                l,
                &self.spec.layers[l],
                task_index,
                true,
                rng,
            ));
        }
        ImportanceVector::zeros(&self.member_counts())
    }

    pub fn clear_candidates(&mut self) {
        for layer in &mut self.layers {
            layer.candidate = None;
        }
    }

    pub fn has_candidates(&self) -> bool {
        self.layers.iter().any(|l| l.candidate.is_some())
    }

    /// Meta-initial parameters of every committed block and candidate.
    pub fn params(&self) -> ParamSet<S> {
        let mut out = ParamSet::new();
        for b in self.layers.iter().flat_map(Layer::members) {
            out.extend(b.keyed_params());
        }
        out
    }

    /// Meta-initial parameters of one block, under graph-wide keys.
    pub fn block_params(&self, id: BlockId) -> Result<ParamSet<S>> {
        self.block(id)
            .map(KnowledgeBlock::keyed_params)
            .ok_or(Error::UnknownBlock(id))
    }

    pub fn pathway_params(&self, pathway: &Pathway) -> Result<ParamSet<S>> {
        let mut out = ParamSet::new();
        for &id in pathway.blocks() {
            out.extend(self.block_params(id)?);
        }
        Ok(out)
    }

    /// Overwrites block meta-initials from graph-wide keys. Head entries are
    /// ignored; unknown blocks are an error.
    pub fn assign_params(&mut self, update: &ParamSet<S>) -> Result<()> {
        for (key, value) in update.iter() {
            if key.starts_with("head/") {
                continue;
            }
            let (id, name) =
                parse_block_key(key).ok_or_else(|| Error::KeyMismatch(format!("not a block key: {key}")))?;
            let block = self.block_mut(id).ok_or(Error::UnknownBlock(id))?;
            let slot = block
                .params
                .get_mut(name)
                .ok_or_else(|| Error::KeyMismatch(format!("block {id} has no {name}")))?;
            if slot.shape() != value.shape() {
                return Err(Error::shape("assign_params", slot.shape(), value.shape()));
            }
            *slot = value.clone();
        }
        Ok(())
    }

    fn block_forward(
        &self,
        tape: &mut Tape<S>,
        layer: usize,
        id: BlockId,
        params: &ParamVars,
        x: Var,
    ) -> Result<Var> {
        let get = |name: &str| {
            params
                .get(&param_key(id, name))
                .copied()
                .ok_or_else(|| Error::KeyMismatch(format!("override lacks {}", param_key(id, name))))
        };
        let (w, g, b) = (get("weight")?, get("gamma")?, get("beta")?);
        let z = match self.spec.layers[layer] {
            BlockSpec::Dense { .. } => {
                let x = tape.flatten(x)?;
                tape.matmul(x, w)?
            }
            BlockSpec::Conv { stride, padding, .. } => tape.conv2d(x, w, stride, padding)?,
        };
        let z = tape.batch_norm(z, g, b, BN_EPS)?;
        Ok(tape.relu(z))
    }

    fn head_forward(&self, tape: &mut Tape<S>, params: &ParamVars, h: Var) -> Result<Var> {
        let w = *params
            .get(HEAD_WEIGHT)
            .ok_or_else(|| Error::KeyMismatch("override lacks head/weight".into()))?;
        let b = *params
            .get(HEAD_BIAS)
            .ok_or_else(|| Error::KeyMismatch("override lacks head/bias".into()))?;
        let h = tape.flatten(h)?;
        let z = tape.matmul(h, w)?;
        tape.add_bias(z, b)
    }

    fn check_input(&self, tape: &Tape<S>, x: Var) -> Result<()> {
        let shape = tape.shape(x);
        if shape.len() != self.spec.input_shape.len() + 1 || shape[1..] != self.spec.input_shape[..] {
            return Err(Error::shape("graph input", shape, &self.spec.input_shape));
        }
        Ok(())
    }

    /// Relaxed forward pass: every layer outputs the `softmax(o_l)` weighted
    /// sum of its members' outputs, then the head is applied.
    pub fn mixed_forward_tape(
        &self,
        tape: &mut Tape<S>,
        o: &[Var],
        params: &ParamVars,
        input: Var,
    ) -> Result<Var> {
        self.check_input(tape, input)?;
        if o.len() != self.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "importance has {} layers, graph has {}",
                o.len(),
                self.layers.len()
            )));
        }
        let mut h = input;
        for (l, layer) in self.layers.iter().enumerate() {
            let expected = layer.member_count();
            let got = tape.value(o[l]).len();
            if got != expected {
                return Err(Error::ImportanceLength {
                    layer: l,
                    got,
                    expected,
                });
            }
            let weights = tape.softmax(o[l]);
            let mut acc: Option<Var> = None;
            for (i, block) in layer.members().enumerate() {
                let out = self.block_forward(tape, l, block.id, params, h)?;
                let w = tape.index(weights, i)?;
                let term = tape.mul(w, out)?;
                acc = Some(match acc {
                    None => term,
                    Some(a) => tape.add(a, term)?,
                });
            }
            h = acc.expect("layers are never empty");
        }
        self.head_forward(tape, params, h)
    }

    /// Sequential forward pass through exactly the pathway's blocks.
    pub fn pathway_forward_tape(
        &self,
        tape: &mut Tape<S>,
        pathway: &Pathway,
        params: &ParamVars,
        input: Var,
    ) -> Result<Var> {
        self.check_input(tape, input)?;
        self.check_pathway(pathway)?;
        let mut h = input;
        for (l, &id) in pathway.blocks().iter().enumerate() {
            h = self.block_forward(tape, l, id, params, h)?;
        }
        self.head_forward(tape, params, h)
    }

    pub fn check_pathway(&self, pathway: &Pathway) -> Result<()> {
        if pathway.len() != self.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "pathway has {} blocks, graph has {} layers",
                pathway.len(),
                self.layers.len()
            )));
        }
        for (l, &id) in pathway.blocks().iter().enumerate() {
            match self.block(id) {
                Some(b) if b.layer == l => {}
                _ => return Err(Error::UnknownBlock(id)),
            }
        }
        Ok(())
    }

    /// Value-level [`Self::mixed_forward_tape`].
    pub fn mixed_forward(&self, o: &ImportanceVector<S>, params: &ParamSet<S>, input: &Tensor<S>) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        let vars = params.to_vars(&mut tape);
        let ov = o.to_vars(&mut tape);
        let x = tape.leaf(input.clone());
        let out = self.mixed_forward_tape(&mut tape, &ov, &vars, x)?;
        Ok(tape.value(out).clone())
    }

    /// Value-level [`Self::pathway_forward_tape`].
    pub fn pathway_forward(&self, pathway: &Pathway, params: &ParamSet<S>, input: &Tensor<S>) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        let vars = params.to_vars(&mut tape);
        let x = tape.leaf(input.clone());
        let out = self.pathway_forward_tape(&mut tape, pathway, &vars, x)?;
        Ok(tape.value(out).clone())
    }

    /// The pathway of the lowest-index committed block in every layer.
    pub fn default_pathway(&self) -> Pathway {
        Pathway(self.layers.iter().map(|l| l.blocks[0].id).collect())
    }

    /// Maps a selection to block ids: a selected candidate becomes a
    /// committed block, unselected candidates are discarded. Committed
    /// blocks' parameters are not touched.
    pub fn commit(&mut self, selection: &Selection) -> Result<Pathway> {
        if selection.0.len() != self.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "selection has {} layers, graph has {}",
                selection.0.len(),
                self.layers.len()
            )));
        }
        for (l, (&idx, layer)) in selection.0.iter().zip(&self.layers).enumerate() {
            let novel = idx == layer.blocks.len();
            if idx > layer.blocks.len() || (novel && layer.candidate.is_none()) {
                return Err(Error::StaleCandidate { layer: l, index: idx });
            }
        }
        let mut ids = Vec::with_capacity(self.layers.len());
        for (&idx, layer) in selection.0.iter().zip(&mut self.layers) {
            let candidate = layer.candidate.take();
            if idx == layer.blocks.len() {
                let mut block = candidate.expect("checked above");
                block.is_novel = false;
                layer.blocks.push(block);
            }
            ids.push(layer.blocks[idx].id);
        }
        Ok(Pathway(ids))
    }
}

/// For every block, the share of its selecting tasks carrying each tag.
/// Blocks never selected are absent.
pub fn selection_ratios(history: &[(String, Pathway)]) -> BTreeMap<BlockId, BTreeMap<String, f64>> {
    let mut counts: BTreeMap<BlockId, BTreeMap<String, usize>> = BTreeMap::new();
    for (tag, pathway) in history {
        for &id in pathway.blocks() {
            *counts.entry(id).or_default().entry(tag.clone()).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .map(|(id, by_tag)| {
            let total: usize = by_tag.values().sum();
            let ratios = by_tag
                .into_iter()
                .map(|(t, c)| (t, c as f64 / total as f64))
                .collect();
            (id, ratios)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn dense_graph(layers: usize, seed: u64) -> MetaGraph<f64> {
        let widths = vec![6; layers];
        MetaGraph::init(GraphSpec::dense(5, &widths, 3), seed).unwrap()
    }

    fn with_head(g: &MetaGraph<f64>, seed: u64) -> ParamSet<f64> {
        let mut p = g.params();
        let spec = g.spec().clone().with_head_init(HeadInit::Normal);
        let h = MetaGraph::<f64>::init(spec, 0).unwrap();
        p.extend(h.fresh_head(&mut stream(seed, "head", 0)));
        p
    }

    #[test]
    fn init_shapes_and_determinism() {
        let spec = GraphSpec::conv([1, 12, 12], &[4, 4, 4, 4], 3, 2, 1, 5);
        let g = MetaGraph::<f32>::init(spec.clone(), 11).unwrap();
        assert_eq!(g.block_counts(), vec![1, 1, 1, 1]);
        let again = MetaGraph::<f32>::init(spec, 11).unwrap();
        assert_eq!(g.params(), again.params());

        let single = dense_graph(1, 2);
        assert_eq!(single.block_counts(), vec![1]);
        assert!(MetaGraph::<f64>::init(GraphSpec::dense(5, &[], 3), 0).is_err());
        assert!(MetaGraph::<f64>::init(GraphSpec::dense(5, &[0], 3), 0).is_err());
    }

    #[test]
    fn spawn_gives_uniform_weights_and_keeps_counts() {
        let mut g = dense_graph(2, 3);
        let o = g.spawn_novel_candidates(1, &mut stream(1, "spawn", 0));
        assert_eq!(o.weights(), vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        assert_eq!(g.block_counts(), vec![1, 1]);
        assert!(g.layers().iter().all(|l| l.candidate.as_ref().unwrap().is_novel));

        let mut h = dense_graph(2, 3);
        h.spawn_novel_candidates(1, &mut stream(2, "spawn", 0));
        assert_ne!(g.params(), h.params());
    }

    #[test]
    fn single_member_mixture_equals_pathway() {
        let g = dense_graph(2, 4);
        let p = with_head(&g, 1);
        let x = Tensor::randn(&[7, 5], 1.0, &mut stream(9, "x", 0));
        let o = ImportanceVector::zeros(&[1, 1]);
        let mixed = g.mixed_forward(&o, &p, &x).unwrap();
        let path = g.pathway_forward(&g.default_pathway(), &p, &x).unwrap();
        assert_eq!(mixed, path);
        assert_eq!(path.shape(), &[7, 3]);
    }

    #[test]
    fn identical_members_mix_to_either() {
        let mut g = dense_graph(1, 5);
        g.spawn_novel_candidates(0, &mut stream(0, "spawn", 0));
        let mut p = with_head(&g, 2);
        let cand = g.layer(0).candidate.as_ref().unwrap().id;
        for name in ["weight", "gamma", "beta"] {
            let v = p.get(&param_key(0, name)).unwrap().clone();
            p.insert(param_key(cand, name), v);
        }
        let x = Tensor::randn(&[6, 5], 1.0, &mut stream(3, "x", 0));
        let o = ImportanceVector::from_rows(&[vec![0.7, 0.7]]);
        let mixed = g.mixed_forward(&o, &p, &x).unwrap();
        let path = g.pathway_forward(&Pathway(vec![0]), &p, &x).unwrap();
        for (a, b) in mixed.data().iter().zip(path.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_importance_matches_block_zero() {
        let mut g = dense_graph(2, 6);
        g.spawn_novel_candidates(0, &mut stream(0, "spawn", 0));
        let p = with_head(&g, 3);
        let x = Tensor::randn(&[8, 5], 1.0, &mut stream(4, "x", 0));
        let o = ImportanceVector::from_rows(&[vec![20.0, -20.0], vec![20.0, -20.0]]);
        let mixed = g.mixed_forward(&o, &p, &x).unwrap();
        let path = g.pathway_forward(&g.default_pathway(), &p, &x).unwrap();
        for (a, b) in mixed.data().iter().zip(path.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn mixed_forward_rejects_wrong_importance_length() {
        let mut g = dense_graph(1, 6);
        g.spawn_novel_candidates(0, &mut stream(0, "spawn", 0));
        let p = with_head(&g, 3);
        let x = Tensor::randn(&[4, 5], 1.0, &mut stream(4, "x", 0));
        let o = ImportanceVector::zeros(&[1]);
        assert!(matches!(
            g.mixed_forward(&o, &p, &x),
            Err(Error::ImportanceLength { layer: 0, got: 1, expected: 2 })
        ));
    }

    #[test]
    fn pathway_forward_rejects_dangling_block() {
        let g = dense_graph(2, 6);
        let p = with_head(&g, 3);
        let x = Tensor::randn(&[4, 5], 1.0, &mut stream(4, "x", 0));
        assert!(matches!(
            g.pathway_forward(&Pathway(vec![0, 99]), &p, &x),
            Err(Error::UnknownBlock(99))
        ));
    }

    #[test]
    fn select_cases() {
        let o = ImportanceVector::<f64>::from_rows(&[vec![0.1, 0.9], vec![0.5, 0.5], vec![3.0, 1.0]]);
        assert_eq!(select_pathway(&o).unwrap(), Selection(vec![1, 0, 0]));
        assert_eq!(select_pathway(&o.shifted(-7.5)).unwrap(), Selection(vec![1, 0, 0]));
    }

    #[test]
    fn commit_grows_selected_layers_only() {
        let mut g = dense_graph(4, 7);
        let before = g.params();
        g.spawn_novel_candidates(0, &mut stream(0, "spawn", 0));
        let path = g.commit(&Selection(vec![0, 0, 1, 1])).unwrap();
        assert_eq!(g.block_counts(), vec![1, 1, 2, 2]);
        assert!(!g.has_candidates());
        assert_eq!(path.blocks()[..2], [0, 1]);
        assert!(path.blocks()[2] > 3 && path.blocks()[3] > path.blocks()[2]);
        for (k, v) in before.iter() {
            assert_eq!(g.params().get(k), Some(v));
        }

        // no novel selected: unchanged
        let snapshot = g.clone();
        g.spawn_novel_candidates(1, &mut stream(1, "spawn", 0));
        g.commit(&Selection(vec![0, 0, 0, 1])).unwrap();
        assert_eq!(g.block_counts(), snapshot.block_counts());
        assert_eq!(g.params(), snapshot.params());

        // stale candidate
        assert!(matches!(
            g.commit(&Selection(vec![1, 0, 0, 0])),
            Err(Error::StaleCandidate { layer: 0, index: 1 })
        ));
    }

    #[test]
    fn committed_ids_strictly_increase() {
        let mut g = dense_graph(1, 8);
        let mut last = 0;
        for t in 0..4 {
            g.spawn_novel_candidates(t, &mut stream(t as u64, "spawn", 0));
            let p = g.commit(&Selection(vec![g.block_counts()[0]])).unwrap();
            assert!(p.blocks()[0] > last);
            last = p.blocks()[0];
        }
        assert_eq!(g.block_counts(), vec![5]);
    }

    #[test]
    fn ratio_cases() {
        let mut history: Vec<(String, Pathway)> = Vec::new();
        for _ in 0..3 {
            history.push(("A".into(), Pathway(vec![1])));
        }
        for _ in 0..2 {
            history.push(("B".into(), Pathway(vec![1])));
        }
        history.push(("A".into(), Pathway(vec![2])));
        let r = selection_ratios(&history);
        assert!((r[&1]["A"] - 0.6).abs() < 1e-12);
        assert!((r[&1]["B"] - 0.4).abs() < 1e-12);
        assert_eq!(r[&2]["A"], 1.0);
        assert!(selection_ratios(&[]).is_empty());
    }
}
