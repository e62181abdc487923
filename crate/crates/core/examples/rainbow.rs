//! Builds a Rainbow MNIST stream and runs OSML over its first tasks.
//!
//! Usage: `cargo run --release --example rainbow -- <mnist dir>` where the
//! directory holds `train-images-idx3-ubyte` and `train-labels-idx1-ubyte`.
//! Without an argument a small set of blob "digits" is written to a
//! temporary directory in the same IDX format, so the pipeline can be
//! exercised without the real data.

use std::path::{Path, PathBuf};

use osml::baselines::graph_seed;
use osml::metaupdate::{run_osml_task, OsmlConfig, TaskBuffer};
use osml::rng::stream;
use osml::tasks::idx::{load_idx_images, load_idx_labels, write_idx};
use osml::tasks::{rainbow_stream, SplitSizes};
use osml::{GraphSpec, MetaGraph};
use rand::Rng;

/// 10 classes of 28×28 images, each a bright square at a class-specific
/// position plus pixel noise.
fn write_blob_digits(dir: &Path, per_class: usize) -> osml::Result<()> {
    let mut rng = stream(0, "blob-digits", 0);
    let (mut pixels, mut labels) = (Vec::new(), Vec::new());
    for c in 0..10u8 {
        let (r0, c0) = (2 + usize::from(c / 5) * 12, 2 + usize::from(c % 5) * 5);
        for _ in 0..per_class {
            for i in 0..28 {
                for j in 0..28 {
                    let on = (r0..r0 + 10).contains(&i) && (c0..c0 + 4).contains(&j);
                    let base: u8 = if on { 220 } else { 0 };
                    pixels.push(base.saturating_add(rng.random_range(0..30)));
                }
            }
            labels.push(c);
        }
    }
    write_idx(&dir.join("train-images-idx3-ubyte"), 0x0803, &[10 * per_class, 28, 28], &pixels)?;
    write_idx(&dir.join("train-labels-idx1-ubyte"), 0x0801, &[10 * per_class], &labels)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let dir = match std::env::args().nth(1) {
        Some(d) => PathBuf::from(d),
        None => {
            write_blob_digits(tmp.path(), 30)?;
            println!("no MNIST directory given; using generated blob digits");
            tmp.path().to_path_buf()
        }
    };
    let images = load_idx_images::<f32>(&dir.join("train-images-idx3-ubyte"))?;
    let labels = load_idx_labels(&dir.join("train-labels-idx1-ubyte"))?;
    let episodes = rainbow_stream(&images, &labels, 0, SplitSizes::new(2, 2, 2))?;
    println!("{} tasks of shape {:?}", episodes.len(), episodes[0].support.sample_shape());

    let spec = GraphSpec::conv([3, 28, 28], &[8, 8, 8], 3, 2, 1, 10);
    let mut graph = MetaGraph::init(spec, graph_seed(0))?;
    let mut buffer = TaskBuffer::new();
    let mut cfg = OsmlConfig::default();
    cfg.search.search_rounds = 3;
    cfg.update.meta_rounds = 2;
    for ep in episodes.iter().take(6) {
        let r = run_osml_task(&mut graph, &mut buffer, ep, &cfg, 0, None)?;
        println!("{:<40} acc {:.2} blocks {:?}", ep.descriptor, 100.0 * r.accuracy, r.blocks_per_layer);
    }
    Ok(())
}
