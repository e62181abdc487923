#![allow(dead_code)]

use osml::autodiff::{ParamSet, Tensor};
use osml::graph::{param_key, BlockId, Pathway};
use osml::metaupdate::{PathwayModel, TaskRecord};
use osml::{Dataset, Episode, Result};
use rand::RngCore;

/// Scalar blocks with loss `mean_i (Σ_{b in pathway} w_b - x_i)^2`, so every
/// gradient has a closed form: `2 (Σ w - mean x)` for each pathway block.
pub struct ScalarModel {
    /// `(block, layer, value)`
    pub blocks: Vec<(BlockId, usize, f64)>,
}

impl ScalarModel {
    pub fn value(&self, id: BlockId) -> f64 {
        self.blocks.iter().find(|b| b.0 == id).unwrap().2
    }
}

pub fn mean(d: &Dataset<f64>) -> f64 {
    d.inputs.data().iter().sum::<f64>() / d.len() as f64
}

impl PathwayModel<f64> for ScalarModel {
    fn pathway_params(&self, pathway: &Pathway) -> Result<ParamSet<f64>> {
        let mut p = ParamSet::new();
        for &id in pathway.blocks() {
            p.insert(param_key(id, "w"), Tensor::scalar(self.value(id)));
        }
        Ok(p)
    }

    fn block_params(&self, block: BlockId) -> Result<ParamSet<f64>> {
        let mut p = ParamSet::new();
        p.insert(param_key(block, "w"), Tensor::scalar(self.value(block)));
        Ok(p)
    }

    fn task_head(&self, _rng: &mut dyn RngCore) -> ParamSet<f64> {
        ParamSet::new()
    }

    fn pathway_loss(&self, pathway: &Pathway, params: &ParamSet<f64>, data: &Dataset<f64>) -> Result<(f64, ParamSet<f64>)> {
        let total: f64 = pathway
            .blocks()
            .iter()
            .map(|&id| params.require(&param_key(id, "w")).map(|t| t.item()))
            .sum::<Result<f64>>()?;
        let loss = data.inputs.data().iter().map(|x| (total - x).powi(2)).sum::<f64>() / data.len() as f64;
        let g = 2.0 * (total - mean(data));
        let mut grads = ParamSet::new();
        for &id in pathway.blocks() {
            grads.insert(param_key(id, "w"), Tensor::scalar(g));
        }
        Ok((loss, grads))
    }

    fn assign_params(&mut self, update: &ParamSet<f64>) -> Result<()> {
        for (key, value) in update.iter() {
            let b = self
                .blocks
                .iter_mut()
                .find(|b| param_key(b.0, "w") == key)
                .expect("known block");
            b.2 = value.item();
        }
        Ok(())
    }

    fn layer_of(&self, block: BlockId) -> Option<usize> {
        self.blocks.iter().find(|b| b.0 == block).map(|b| b.1)
    }
}

/// A dataset of scalar inputs (one class).
pub fn scalars(xs: &[f64]) -> Dataset<f64> {
    Dataset::new(
        Tensor::new(vec![xs.len(), 1], xs.to_vec()).unwrap(),
        vec![0; xs.len()],
        (0..xs.len() as u64).collect(),
    )
    .unwrap()
}

pub fn scalar_record(index: usize, support: &[f64], query: &[f64], pathway: Vec<BlockId>) -> TaskRecord<f64> {
    TaskRecord {
        task_index: index,
        episode: Episode {
            support: scalars(support),
            query: scalars(query),
            test: scalars(&[0.0]),
            n_classes: 1,
            tag: format!("t{index}"),
            descriptor: String::new(),
            seed: index as u64,
        },
        pathway: Pathway(pathway),
    }
}
