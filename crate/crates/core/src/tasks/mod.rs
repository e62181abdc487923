//! Episodic task streams.
//!
//! Every task is an N-way classification [`Episode`] with disjoint support,
//! query and test splits. Streams come from Rainbow MNIST (user-supplied IDX
//! files), from a procedural multi-mode generator, or from a directory of
//! per-mode IDX datasets.

pub mod idx;
mod modes;
pub mod rainbow;
pub mod synthetic;

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

pub use modes::{load_mode_directory, mode_directory_stream, ModePool};
pub use rainbow::{rainbow_stream, TransformSpec};
pub use synthetic::{synthetic_hetero_stream, ModeSpec, ModeTransform, SyntheticConfig};

use crate::autodiff::{Real, Tensor};
use crate::{Error, Result};

/// A labelled sample set. `ids` identify source samples so that split
/// disjointness can be checked.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<S> {
    pub inputs: Tensor<S>,
    pub labels: Vec<usize>,
    pub ids: Vec<u64>,
}

impl<S: Real> Dataset<S> {
    pub fn new(inputs: Tensor<S>, labels: Vec<usize>, ids: Vec<u64>) -> Result<Self> {
        let n = inputs.shape().first().copied().unwrap_or(0);
        if inputs.ndim() < 2 || n != labels.len() || n != ids.len() {
            return Err(Error::InvalidArgument(format!(
                "dataset with inputs {:?}, {} labels and {} ids",
                inputs.shape(),
                labels.len(),
                ids.len()
            )));
        }
        Ok(Self { inputs, labels, ids })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Shape of one sample.
    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            inputs: self.inputs.gather_rows(rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            ids: rows.iter().map(|&i| self.ids[i]).collect(),
        }
    }

    pub fn concat(parts: &[&Self]) -> Result<Self> {
        let inputs: Vec<&Tensor<S>> = parts.iter().map(|d| &d.inputs).collect();
        Ok(Self {
            inputs: Tensor::concat_rows(&inputs)?,
            labels: parts.iter().flat_map(|d| d.labels.iter().copied()).collect(),
            ids: parts.iter().flat_map(|d| d.ids.iter().copied()).collect(),
        })
    }

    /// The whole set when it has at most `cap` samples, otherwise a uniform
    /// draw of `cap` samples without replacement (kept in original order).
    pub fn minibatch<R: Rng + ?Sized>(&self, cap: usize, rng: &mut R) -> Self {
        if self.len() <= cap {
            return self.clone();
        }
        let mut rows = rand::seq::index::sample(rng, self.len(), cap).into_vec();
        rows.sort_unstable();
        self.subset(&rows)
    }

    /// The first `k` samples of every class, in order of appearance.
    pub fn take_per_class(&self, k: usize, n_classes: usize) -> Result<Self> {
        let mut seen = vec![0usize; n_classes];
        let mut rows = Vec::new();
        for (i, &y) in self.labels.iter().enumerate() {
            if seen[y] < k {
                seen[y] += 1;
                rows.push(i);
            }
        }
        if let Some(c) = seen.iter().position(|&s| s < k) {
            return Err(Error::InsufficientSamples(format!(
                "class {c} has {} samples, {k} requested",
                seen[c]
            )));
        }
        Ok(self.subset(&rows))
    }

    pub fn class_counts(&self, n_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; n_classes];
        for &y in &self.labels {
            if y < n_classes {
                counts[y] += 1;
            }
        }
        counts
    }

    pub fn cast<T: Real>(&self) -> Dataset<T> {
        Dataset {
            inputs: self.inputs.cast(),
            labels: self.labels.clone(),
            ids: self.ids.clone(),
        }
    }
}

/// Per-class split sizes of an episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSizes {
    pub support: usize,
    pub query: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn new(support: usize, query: usize, test: usize) -> Self {
        Self { support, query, test }
    }

    pub fn per_class(&self) -> usize {
        self.support + self.query + self.test
    }

    fn validate(&self) -> Result<()> {
        if self.support == 0 || self.query == 0 || self.test == 0 {
            return Err(Error::InvalidArgument(format!(
                "every split needs at least one sample per class, got {self:?}"
            )));
        }
        Ok(())
    }
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self::new(40, 40, 20)
    }
}

/// One N-way classification task.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode<S> {
    pub support: Dataset<S>,
    pub query: Dataset<S>,
    pub test: Dataset<S>,
    pub n_classes: usize,
    /// Mode or sub-dataset label, used for per-tag summaries.
    pub tag: String,
    /// Transform or mode description written to the stream manifest.
    pub descriptor: String,
    /// Seed the task's samples were drawn with; also keys any per-task
    /// randomness that must not depend on stream position.
    pub seed: u64,
}

impl<S: Real> Episode<S> {
    /// Support followed by query.
    pub fn train(&self) -> Result<Dataset<S>> {
        Dataset::concat(&[&self.support, &self.query])
    }

    /// Checks label range and pairwise disjointness of the splits.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for split in [&self.support, &self.query, &self.test] {
            if let Some(&y) = split.labels.iter().find(|&&y| y >= self.n_classes) {
                return Err(Error::ClassOutOfRange {
                    index: y,
                    classes: self.n_classes,
                });
            }
            for &id in &split.ids {
                if !seen.insert(id) {
                    return Err(Error::InvalidArgument(format!("sample {id} appears in two splits")));
                }
            }
        }
        Ok(())
    }

    /// The same task with support reduced to `k` samples per class.
    pub fn with_support_per_class(&self, k: usize) -> Result<Self> {
        Ok(Self {
            support: self.support.take_per_class(k, self.n_classes)?,
            ..self.clone()
        })
    }

    pub fn cast<T: Real>(&self) -> Episode<T> {
        Episode {
            support: self.support.cast(),
            query: self.query.cast(),
            test: self.test.cast(),
            n_classes: self.n_classes,
            tag: self.tag.clone(),
            descriptor: self.descriptor.clone(),
            seed: self.seed,
        }
    }
}

/// Draws disjoint support, query and test samples from per-class pools.
/// `pool[c]` holds the candidates of class `c`; labels are reassigned to `c`.
pub fn split_episode<S: Real, R: Rng + ?Sized>(
    pool: &[Dataset<S>],
    sizes: SplitSizes,
    rng: &mut R,
) -> Result<Episode<S>> {
    sizes.validate()?;
    if pool.len() < 2 {
        return Err(Error::InvalidArgument("an episode needs at least two classes".into()));
    }
    let mut parts: [Vec<Dataset<S>>; 3] = Default::default();
    for (c, class) in pool.iter().enumerate() {
        if class.len() < sizes.per_class() {
            return Err(Error::InsufficientSamples(format!(
                "class {c} has {} samples, {} needed",
                class.len(),
                sizes.per_class()
            )));
        }
        let mut rows: Vec<usize> = (0..class.len()).collect();
        rows.shuffle(rng);
        let mut start = 0;
        for (k, n) in [sizes.support, sizes.query, sizes.test].into_iter().enumerate() {
            let mut d = class.subset(&rows[start..start + n]);
            d.labels = vec![c; n];
            parts[k].push(d);
            start += n;
        }
    }
    let join = |v: &Vec<Dataset<S>>| Dataset::concat(&v.iter().collect::<Vec<_>>());
    Ok(Episode {
        support: join(&parts[0])?,
        query: join(&parts[1])?,
        test: join(&parts[2])?,
        n_classes: pool.len(),
        tag: String::new(),
        descriptor: String::new(),
        seed: 0,
    })
}

/// Subtracts the per-feature mean of all support inputs in the stream from
/// every split. Query and test data never enter the statistics.
pub fn center_stream<S: Real>(episodes: &mut [Episode<S>]) {
    let Some(first) = episodes.first() else { return };
    let width: usize = first.support.sample_shape().iter().product();
    let mut mean = vec![0.0f64; width];
    let mut count = 0usize;
    for ep in episodes.iter() {
        for row in ep.support.inputs.data().chunks(width) {
            for (m, &x) in mean.iter_mut().zip(row) {
                *m += x.as_f64();
            }
            count += 1;
        }
    }
    for m in &mut mean {
        *m /= count.max(1) as f64;
    }
    let mean: Vec<S> = mean.into_iter().map(S::from_f64).collect();
    for ep in episodes.iter_mut() {
        for split in [&mut ep.support, &mut ep.query, &mut ep.test] {
            for row in split.inputs.data_mut().chunks_mut(width) {
                for (x, &m) in row.iter_mut().zip(&mean) {
                    *x -= m;
                }
            }
        }
    }
}

/// Writes `task_index,tag,transform_or_mode,seed`, one row per episode.
pub fn write_manifest<S: Real>(episodes: &[Episode<S>], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["task_index", "tag", "transform_or_mode", "seed"])?;
    for (i, ep) in episodes.iter().enumerate() {
        w.write_record([i.to_string(), ep.tag.clone(), ep.descriptor.clone(), ep.seed.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
