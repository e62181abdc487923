//! Sample-efficiency sweeps: the same experiment at several per-class
//! support sizes, plus the smallest size at which each task reaches a
//! target accuracy.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::metrics::{mean_ci, seed_means, MetricsRow};
use super::runner::{execute, write_outputs, Cell};
use crate::{Error, Result};

/// Seed-mean overall accuracy of one method at one support size.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub size: usize,
    pub method: String,
    pub mean_acc: f64,
    pub ci95: Option<f64>,
}

/// Samples one task needed to reach the target accuracy.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetRow {
    pub method: String,
    pub seed: u64,
    pub task_index: usize,
    pub samples: usize,
    pub reached: bool,
}

/// Runs `run` at every size (ascending, duplicates removed).
pub fn sweep_with(
    sizes: &[usize],
    mut run: impl FnMut(usize) -> Result<Vec<MetricsRow>>,
) -> Result<BTreeMap<usize, Vec<MetricsRow>>> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::InvalidArgument("sweep sizes must be positive and non-empty".into()));
    }
    let mut sorted = sizes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    sorted.into_iter().map(|s| Ok((s, run(s)?))).collect()
}

pub fn sweep_points(results: &BTreeMap<usize, Vec<MetricsRow>>) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::new();
    for (&size, rows) in results {
        let mut by_method: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for ((m, _), acc) in seed_means(rows) {
            by_method.entry(m).or_default().push(acc);
        }
        for (method, accs) in by_method {
            let s = mean_ci(&accs)?;
            out.push(SweepPoint {
                size,
                method,
                mean_acc: s.mean,
                ci95: s.ci95,
            });
        }
    }
    Ok(out)
}

/// For every (method, seed, task) the smallest size whose accuracy reaches
/// `target`, converted to samples by `samples_per_size`. Tasks that never
/// reach it are charged `full_budget`.
pub fn samples_to_target(
    results: &BTreeMap<usize, Vec<MetricsRow>>,
    target: f64,
    samples_per_size: impl Fn(usize) -> usize,
    full_budget: usize,
) -> Vec<TargetRow> {
    let mut first: BTreeMap<(String, u64, usize), Option<usize>> = BTreeMap::new();
    for (&size, rows) in results {
        for r in rows {
            let e = first.entry((r.method.clone(), r.seed, r.task_index)).or_insert(None);
            if e.is_none() && r.accuracy >= target {
                *e = Some(size);
            }
        }
    }
    first
        .into_iter()
        .map(|((method, seed, task_index), hit)| TargetRow {
            method,
            seed,
            task_index,
            samples: hit.map_or(full_budget, &samples_per_size),
            reached: hit.is_some(),
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SweepOutput {
    pub points: Vec<SweepPoint>,
    pub targets: Vec<TargetRow>,
    /// Failed cells per size.
    pub failures: Vec<(usize, Cell)>,
    pub dir: PathBuf,
}

fn write_points(points: &[SweepPoint], targets: &[TargetRow], dir: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
    w.write_record(["support_per_class", "method", "mean_acc", "ci95"])?;
    for p in points {
        w.write_record([
            p.size.to_string(),
            p.method.clone(),
            format!("{:.6}", p.mean_acc),
            p.ci95.map(|c| format!("{c:.6}")).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(dir, e))?;
    let mut w = csv::Writer::from_path(dir.join("targets.csv"))?;
    w.write_record(["method", "seed", "task_index", "samples", "reached"])?;
    for t in targets {
        w.write_record([
            t.method.clone(),
            t.seed.to_string(),
            t.task_index.to_string(),
            t.samples.to_string(),
            t.reached.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(dir, e))
}

/// Reruns the experiment with every per-class support size in `sizes`,
/// writing each run to `support_<size>/` and the sweep tables to the
/// output directory. The full budget of a task is its whole per-task pool
/// at the largest size.
pub fn efficiency_sweep(cfg: &ExperimentConfig, sizes: &[usize]) -> Result<SweepOutput> {
    let dir = cfg.output_dir();
    let mut failures = Vec::new();
    let results = sweep_with(sizes, |size| {
        let mut c = cfg.clone();
        c.stream.support = size;
        let out = execute(&c)?;
        write_outputs(&out, &c, &dir.join(format!("support_{size}")))?;
        failures.extend(out.cells.iter().filter(|c| c.outcome.is_err()).map(|c| (size, c.clone())));
        Ok(out.rows)
    })?;
    let n = cfg.stream.n_classes;
    let largest = *results.keys().last().expect("sizes are non-empty");
    let full = (largest + cfg.stream.query + cfg.stream.test) * n;
    let points = sweep_points(&results)?;
    let targets = samples_to_target(&results, cfg.sweep_target, |s| s * n, full);
    write_points(&points, &targets, &dir)?;
    Ok(SweepOutput {
        points,
        targets,
        failures,
        dir,
    })
}
