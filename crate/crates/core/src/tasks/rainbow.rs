//! Rainbow MNIST: 56 tasks, one per combination of 7 colour tints, 2 scales
//! and 4 right-angle rotations of the digits.

use rand::seq::SliceRandom;

use super::{center_stream, split_episode, Dataset, Episode, SplitSizes};
use crate::autodiff::{Real, Tensor};
use crate::rng;
use crate::{Error, Result};

pub const COLORS: usize = 7;
pub const SCALES: [f64; 2] = [1.0, 0.5];
pub const ANGLES: [u32; 4] = [0, 90, 180, 270];
/// Largest number of samples one task may draw from the source images.
pub const TASK_SAMPLE_CEILING: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TransformSpec {
    /// Index of an evenly spaced hue, `0..7`.
    pub color: usize,
    /// Index into [`SCALES`].
    pub scale: usize,
    /// Index into [`ANGLES`].
    pub angle: usize,
}

impl TransformSpec {
    /// All 56 combinations in colour-major order.
    pub fn all() -> Vec<Self> {
        let mut out = Vec::with_capacity(COLORS * SCALES.len() * ANGLES.len());
        for color in 0..COLORS {
            for scale in 0..SCALES.len() {
                for angle in 0..ANGLES.len() {
                    out.push(Self { color, scale, angle });
                }
            }
        }
        out
    }

    /// RGB tint of the hue at full saturation and value.
    pub fn tint(&self) -> [f64; 3] {
        hue_to_rgb(self.color as f64 * 360.0 / COLORS as f64)
    }

    pub fn describe(&self) -> String {
        format!(
            "hue{}_scale{}_rot{}",
            self.color, SCALES[self.scale], ANGLES[self.angle]
        )
    }

    /// Maps an `H×W` grayscale image to a `3×H×W` tinted, scaled and
    /// rotated image. Scaling resizes by nearest neighbour and centres the
    /// result on a zero canvas of the original size.
    pub fn apply(&self, image: &[f64], h: usize, w: usize) -> Vec<f64> {
        let scaled = scale_nearest(image, h, w, SCALES[self.scale]);
        let rotated = rotate_quarter(&scaled, h, w, ANGLES[self.angle] / 90);
        let tint = self.tint();
        let mut out = Vec::with_capacity(3 * h * w);
        for c in tint {
            out.extend(rotated.iter().map(|&v| v * c));
        }
        out
    }
}

fn hue_to_rgb(hue: f64) -> [f64; 3] {
    let h = hue / 60.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    match h as u32 {
        0 => [1.0, x, 0.0],
        1 => [x, 1.0, 0.0],
        2 => [0.0, 1.0, x],
        3 => [0.0, x, 1.0],
        4 => [x, 0.0, 1.0],
        _ => [1.0, 0.0, x],
    }
}

fn scale_nearest(image: &[f64], h: usize, w: usize, factor: f64) -> Vec<f64> {
    if factor == 1.0 {
        return image.to_vec();
    }
    let sh = ((h as f64 * factor).round() as usize).max(1);
    let sw = ((w as f64 * factor).round() as usize).max(1);
    let mut out = vec![0.0; h * w];
    let (top, left) = ((h as isize - sh as isize) / 2, (w as isize - sw as isize) / 2);
    for i in 0..sh {
        let src_i = ((i as f64 + 0.5) / factor) as usize;
        for j in 0..sw {
            let src_j = ((j as f64 + 0.5) / factor) as usize;
            let (ti, tj) = (i as isize + top, j as isize + left);
            if (0..h as isize).contains(&ti) && (0..w as isize).contains(&tj) {
                out[ti as usize * w + tj as usize] = image[src_i.min(h - 1) * w + src_j.min(w - 1)];
            }
        }
    }
    out
}

/// Counter-clockwise rotation by `quarters` right angles. Non-square images
/// are only rotated by half turns.
fn rotate_quarter(image: &[f64], h: usize, w: usize, quarters: u32) -> Vec<f64> {
    let q = if h == w { quarters % 4 } else { (quarters % 4) & 2 };
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let (si, sj) = match q {
                0 => (i, j),
                1 => (j, w - 1 - i),
                2 => (h - 1 - i, w - 1 - j),
                _ => (h - 1 - j, i),
            };
            out[i * w + j] = image[si * w + sj];
        }
    }
    out
}

/// One episode per [`TransformSpec`], in a seeded shuffled order. Each task
/// draws its own digits (per-class disjoint splits) from `images`
/// (`N×H×W` in `[0,1]`) and `labels`.
pub fn rainbow_stream<S: Real>(
    images: &Tensor<S>,
    labels: &[u8],
    seed: u64,
    sizes: SplitSizes,
) -> Result<Vec<Episode<S>>> {
    let shape = images.shape();
    if shape.len() != 3 || shape[0] != labels.len() {
        return Err(Error::shape("rainbow images", shape, &[labels.len()]));
    }
    let (h, w) = (shape[1], shape[2]);
    let n_classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    if n_classes < 2 {
        return Err(Error::InsufficientSamples("need at least two digit classes".into()));
    }
    if sizes.per_class() * n_classes > TASK_SAMPLE_CEILING {
        return Err(Error::InvalidArgument(format!(
            "{} samples per task exceed the ceiling of {TASK_SAMPLE_CEILING}",
            sizes.per_class() * n_classes
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l as usize].push(i);
    }
    if let Some(c) = by_class.iter().position(|v| v.len() < sizes.per_class()) {
        return Err(Error::InsufficientSamples(format!(
            "digit {c} has {} images, {} needed",
            by_class[c].len(),
            sizes.per_class()
        )));
    }

    let mut specs = TransformSpec::all();
    specs.shuffle(&mut rng::stream(seed, "rainbow-order", 0));
    let pixels = h * w;
    let mut episodes = Vec::with_capacity(specs.len());
    for (t, spec) in specs.iter().enumerate() {
        let task_seed = rng::derive(seed, "rainbow-task", t as u64);
        let mut rng = rng::stream(task_seed, "draw", 0);
        // draw just enough source digits per class, then transform them
        let pool: Vec<Dataset<S>> = by_class
            .iter()
            .map(|rows| {
                let picked: Vec<usize> = rand::seq::index::sample(&mut rng, rows.len(), sizes.per_class())
                    .into_iter()
                    .map(|k| rows[k])
                    .collect();
                let mut data = Vec::with_capacity(picked.len() * 3 * pixels);
                for &r in &picked {
                    let img: Vec<f64> = images.data()[r * pixels..(r + 1) * pixels]
                        .iter()
                        .map(|x| x.as_f64())
                        .collect();
                    data.extend(spec.apply(&img, h, w));
                }
                let inputs = Tensor::from_f64(vec![picked.len(), 3, h, w], &data)?;
                Dataset::new(inputs, vec![0; picked.len()], picked.iter().map(|&r| r as u64).collect())
            })
            .collect::<Result<_>>()?;
        let mut ep = split_episode(&pool, sizes, &mut rng)?;
        ep.tag = format!("hue{}", spec.color);
        ep.descriptor = spec.describe();
        ep.seed = task_seed;
        episodes.push(ep);
    }
    center_stream(&mut episodes);
    Ok(episodes)
}
