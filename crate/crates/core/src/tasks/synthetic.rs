//! Procedural multi-mode classification streams.
//!
//! A task draws `n_classes` Gaussian prototypes inside a low-dimensional
//! signal subspace of the latent space; the remaining latent coordinates
//! carry isotropic noise that is unrelated to the label. The task's mode then
//! maps latent points to inputs with a fixed random rotation plus an offset.
//! Different modes therefore hide the label in different input directions,
//! and a feature extractor tuned to one mode passes noise for another.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{center_stream, split_episode, Dataset, Episode, SplitSizes};
use crate::autodiff::{Real, Tensor};
use crate::rng;
use crate::{Error, Result};

/// How a mode maps latent points to inputs.
#[derive(Clone, Debug, PartialEq)]
pub enum ModeTransform {
    /// Inputs equal latent points.
    Identity,
    /// `x = Q z + b` for a random orthogonal `Q` and a random offset `b` of
    /// norm `offset`, both drawn from `seed`.
    RotationOffset { seed: u64, offset: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeSpec {
    pub mode_id: String,
    pub transform: ModeTransform,
    /// Keys the class prototypes of this mode's tasks.
    pub prototype_seed: u64,
}

impl ModeSpec {
    /// `n` modes named `mode0…`, each with its own rotation and offset.
    pub fn distinct(n: usize, offset: f64, seed: u64) -> Vec<Self> {
        (0..n)
            .map(|m| ModeSpec {
                mode_id: format!("mode{m}"),
                transform: ModeTransform::RotationOffset {
                    seed: rng::derive(seed, "mode-transform", m as u64),
                    offset,
                },
                prototype_seed: rng::derive(seed, "mode-prototypes", m as u64),
            })
            .collect()
    }

    /// A single identity mode, giving a homogeneous stream.
    pub fn homogeneous(seed: u64) -> Vec<Self> {
        vec![ModeSpec {
            mode_id: "mode0".into(),
            transform: ModeTransform::Identity,
            prototype_seed: rng::derive(seed, "mode-prototypes", 0),
        }]
    }

    fn describe(&self) -> String {
        match &self.transform {
            ModeTransform::Identity => format!("{}:identity", self.mode_id),
            ModeTransform::RotationOffset { offset, .. } => format!("{}:rotation_offset{offset}", self.mode_id),
        }
    }
}

/// Shape of the latent space and the per-task sample distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub tasks_per_mode: usize,
    pub n_classes: usize,
    /// Input dimension.
    pub dims: usize,
    /// Leading latent coordinates that carry the class prototypes.
    pub signal_dims: usize,
    /// Standard deviation of prototype coordinates.
    pub prototype_std: f64,
    /// Within-class standard deviation on the signal coordinates.
    pub within_std: f64,
    /// Standard deviation of the label-free coordinates.
    pub noise_std: f64,
    pub sizes: SplitSizes,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            tasks_per_mode: 20,
            n_classes: 5,
            dims: 32,
            signal_dims: 4,
            prototype_std: 1.0,
            within_std: 0.5,
            noise_std: 1.5,
            sizes: SplitSizes::default(),
            seed: 0,
        }
    }
}

struct ModeMap {
    rotation: Option<Vec<f64>>,
    offset: Vec<f64>,
}

impl ModeMap {
    fn new(spec: &ModeSpec, dims: usize) -> Self {
        match spec.transform {
            ModeTransform::Identity => Self {
                rotation: None,
                offset: vec![0.0; dims],
            },
            ModeTransform::RotationOffset { seed, offset } => {
                let mut rng = rng::stream(seed, "rotation", 0);
                let rotation = random_orthogonal(dims, &mut rng);
                let dir = Tensor::<f64>::randn(&[dims], 1.0, &mut rng);
                let norm = dir.norm().max(1e-12);
                Self {
                    rotation: Some(rotation),
                    offset: dir.data().iter().map(|v| v * offset / norm).collect(),
                }
            }
        }
    }

    fn apply(&self, z: &[f64], out: &mut Vec<f64>) {
        let d = z.len();
        for i in 0..d {
            let rotated = match &self.rotation {
                Some(q) => q[i * d..(i + 1) * d].iter().zip(z).map(|(a, b)| a * b).sum(),
                None => z[i],
            };
            out.push(rotated + self.offset[i]);
        }
    }
}

/// Row-major `d×d` orthogonal matrix from Gram-Schmidt on a Gaussian matrix.
pub fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(d);
    while rows.len() < d {
        let mut v = Tensor::<f64>::randn(&[d], 1.0, rng).into_data();
        for r in &rows {
            let dot: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (x, y) in v.iter_mut().zip(r) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            rows.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    rows.concat()
}

/// `tasks_per_mode` tasks for each mode, interleaved in a seeded shuffled
/// order, each tagged with its mode id, and centred with support statistics.
pub fn synthetic_hetero_stream<S: Real>(modes: &[ModeSpec], cfg: &SyntheticConfig) -> Result<Vec<Episode<S>>> {
    if cfg.dims == 0 || cfg.signal_dims == 0 || cfg.signal_dims > cfg.dims {
        return Err(Error::InvalidArgument(format!(
            "degenerate dimensions: {} signal of {} total",
            cfg.signal_dims, cfg.dims
        )));
    }
    if modes.is_empty() || cfg.tasks_per_mode == 0 || cfg.n_classes < 2 {
        return Err(Error::InvalidArgument(
            "need at least one mode, one task per mode and two classes".into(),
        ));
    }
    let maps: Vec<ModeMap> = modes.iter().map(|m| ModeMap::new(m, cfg.dims)).collect();
    let mut order: Vec<(usize, usize)> = (0..modes.len())
        .flat_map(|m| (0..cfg.tasks_per_mode).map(move |k| (m, k)))
        .collect();
    order.shuffle(&mut rng::stream(cfg.seed, "stream-order", 0));

    let per_class = cfg.sizes.per_class();
    let mut episodes = Vec::with_capacity(order.len());
    for &(m, k) in &order {
        let task_seed = rng::derive(rng::derive(cfg.seed, "task", m as u64), &modes[m].mode_id, k as u64);
        let mut proto_rng = rng::stream(modes[m].prototype_seed ^ task_seed, "prototypes", 0);
        let mut rng = rng::stream(task_seed, "samples", 0);
        let mut next_id = 0u64;
        let pool: Vec<Dataset<S>> = (0..cfg.n_classes)
            .map(|_| {
                let proto = Tensor::<f64>::randn(&[cfg.signal_dims], cfg.prototype_std, &mut proto_rng);
                let mut data = Vec::with_capacity(per_class * cfg.dims);
                let mut z = vec![0.0; cfg.dims];
                for _ in 0..per_class {
                    let within = Tensor::<f64>::randn(&[cfg.signal_dims], cfg.within_std, &mut rng);
                    let noise = Tensor::<f64>::randn(&[cfg.dims - cfg.signal_dims], cfg.noise_std, &mut rng);
                    for (i, zi) in z.iter_mut().enumerate() {
                        *zi = if i < cfg.signal_dims {
                            proto.data()[i] + within.data()[i]
                        } else {
                            noise.data()[i - cfg.signal_dims]
                        };
                    }
                    maps[m].apply(&z, &mut data);
                }
                let ids = (next_id..next_id + per_class as u64).collect();
                next_id += per_class as u64;
                Dataset::new(Tensor::from_f64(vec![per_class, cfg.dims], &data)?, vec![0; per_class], ids)
            })
            .collect::<Result<_>>()?;
        let mut ep = split_episode(&pool, cfg.sizes, &mut rng)?;
        ep.tag = modes[m].mode_id.clone();
        ep.descriptor = modes[m].describe();
        ep.seed = task_seed;
        episodes.push(ep);
    }
    center_stream(&mut episodes);
    Ok(episodes)
}
