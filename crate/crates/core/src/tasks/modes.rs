//! Streams built from a user directory of per-mode IDX datasets.
//!
//! The directory holds one subdirectory per mode; each contains
//! `images.idx` (`0x00000803`) and `labels.idx` (`0x00000801`). The
//! subdirectory name becomes the task tag. This is how externally filtered
//! image corpora plug into the same pipeline as the built-in streams.

use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};

use super::idx::{load_idx_images, load_idx_labels};
use super::{center_stream, split_episode, Dataset, Episode, SplitSizes};
use crate::autodiff::{Real, Tensor};
use crate::rng;
use crate::{Error, Result};

/// One mode's images (`N×H×W`, or `N×C×H×W` when channels are present)
/// grouped by label.
#[derive(Clone, Debug)]
pub struct ModePool<S> {
    pub tag: String,
    pub by_class: Vec<Dataset<S>>,
}

pub fn load_mode_directory<S: Real>(dir: &Path) -> Result<Vec<ModePool<S>>> {
    let mut names: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::InvalidArgument(format!("{} has no mode subdirectories", dir.display())));
    }
    names
        .into_iter()
        .map(|name| {
            let sub = dir.join(&name);
            let images: Tensor<S> = load_idx_images(&sub.join("images.idx"))?;
            let labels = load_idx_labels(&sub.join("labels.idx"))?;
            let n = labels.len();
            if images.shape()[0] != n {
                return Err(Error::shape("mode images", images.shape(), &[n]));
            }
            // grayscale images get a channel axis
            let mut shape = images.shape().to_vec();
            if shape.len() == 3 {
                shape.insert(1, 1);
            }
            let images = images.reshape(shape)?;
            let n_classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
            let by_class = (0..n_classes)
                .map(|c| {
                    let rows: Vec<usize> = (0..n).filter(|&i| labels[i] as usize == c).collect();
                    // labels are reassigned per episode by split_episode
                    Dataset::new(images.gather_rows(&rows), vec![0; rows.len()], rows.iter().map(|&r| r as u64).collect())
                })
                .collect::<Result<_>>()?;
            Ok(ModePool { tag: name, by_class })
        })
        .collect()
}

/// `tasks_per_mode` N-way tasks per mode, each over a random subset of the
/// mode's classes, interleaved in a seeded shuffled order.
pub fn mode_directory_stream<S: Real>(
    pools: &[ModePool<S>],
    tasks_per_mode: usize,
    n_classes: usize,
    sizes: SplitSizes,
    seed: u64,
) -> Result<Vec<Episode<S>>> {
    let mut order: Vec<(usize, usize)> = (0..pools.len())
        .flat_map(|m| (0..tasks_per_mode).map(move |k| (m, k)))
        .collect();
    order.shuffle(&mut rng::stream(seed, "stream-order", 0));
    let mut episodes = Vec::with_capacity(order.len());
    for (m, k) in order {
        let pool = &pools[m];
        let usable: Vec<usize> = (0..pool.by_class.len())
            .filter(|&c| pool.by_class[c].len() >= sizes.per_class())
            .collect();
        if usable.len() < n_classes {
            return Err(Error::InsufficientSamples(format!(
                "mode {} has {} classes with {} samples, {n_classes} needed",
                pool.tag,
                usable.len(),
                sizes.per_class()
            )));
        }
        let task_seed = rng::derive(rng::derive(seed, "task", m as u64), &pool.tag, k as u64);
        let mut rng = rng::stream(task_seed, "draw", 0);
        let classes: Vec<Dataset<S>> = usable
            .choose_multiple(&mut rng, n_classes)
            .map(|&c| pool.by_class[c].clone())
            .collect();
        let mut ep = split_episode(&classes, sizes, &mut rng)?;
        ep.tag = pool.tag.clone();
        ep.descriptor = pool.tag.clone();
        ep.seed = task_seed;
        episodes.push(ep);
    }
    center_stream(&mut episodes);
    Ok(episodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::idx::{write_idx, IMAGE_MAGIC, LABEL_MAGIC};

    #[test]
    fn directory_of_two_modes_builds_a_tagged_stream() {
        let dir = tempfile::tempdir().unwrap();
        for (m, name) in ["blurred", "inverted"].iter().enumerate() {
            let sub = dir.path().join(name);
            fs::create_dir(&sub).unwrap();
            let n = 30;
            let pixels: Vec<u8> = (0..n * 4).map(|i| ((i * 13 + m * 7) % 256) as u8).collect();
            let labels: Vec<u8> = (0..n).map(|i| (i % 3) as u8).collect();
            write_idx(&sub.join("images.idx"), IMAGE_MAGIC, &[n, 2, 2], &pixels).unwrap();
            write_idx(&sub.join("labels.idx"), LABEL_MAGIC, &[n], &labels).unwrap();
        }
        let pools: Vec<ModePool<f32>> = load_mode_directory(dir.path()).unwrap();
        assert_eq!(pools.len(), 2);
        assert_eq!(pools[0].tag, "blurred");
        let eps = mode_directory_stream(&pools, 3, 2, SplitSizes::new(3, 3, 2), 1).unwrap();
        assert_eq!(eps.len(), 6);
        for e in &eps {
            e.validate().unwrap();
            assert_eq!(e.support.inputs.shape(), &[6, 1, 2, 2]);
        }
        assert!(mode_directory_stream(&pools, 1, 4, SplitSizes::new(3, 3, 2), 1).is_err());
    }
}
