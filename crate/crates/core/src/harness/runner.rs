//! Runs every (method, seed) cell of an experiment and writes its outputs.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{ExperimentConfig, Precision, StreamKind};
use super::metrics::{self, MetricsRow};
use super::report::{self, PathwayRow};
use crate::autodiff::Real;
use crate::baselines::{
    graph_seed, large_spec, regret, retrospective_comparator, run_ft, run_ftml, run_nt, FtState, FtmlState, Method,
};
use crate::graph::{GraphSpec, MetaGraph};
use crate::metaupdate::{run_osml_task, TaskBuffer, TaskResult};
use crate::rng;
use crate::tasks::{
    idx::{load_idx_images, load_idx_labels}, load_mode_directory, mode_directory_stream, rainbow_stream,
    synthetic_hetero_stream, Episode, ModePool, ModeSpec,
};
use crate::{Error, Result};

/// Seed of the task stream seen by run `seed`; all methods of a seed share
/// the stream.
pub fn stream_seed(cfg: &ExperimentConfig, seed: u64) -> u64 {
    rng::derive(cfg.stream.seed, "stream", seed)
}

/// Loaded source data of a stream, shared by all seeds.
pub enum StreamSource<S> {
    Synthetic,
    Rainbow { images: crate::Tensor<S>, labels: Vec<u8> },
    Modes(Vec<ModePool<S>>),
}

impl<S: Real> StreamSource<S> {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let s = &cfg.stream;
        Ok(match s.kind {
            StreamKind::Synthetic => StreamSource::Synthetic,
            StreamKind::Rainbow => {
                let missing = || Error::ConfigValue("rainbow streams need stream.images and stream.labels".into());
                StreamSource::Rainbow {
                    images: load_idx_images(s.images.as_deref().ok_or_else(missing)?)?,
                    labels: load_idx_labels(s.labels.as_deref().ok_or_else(missing)?)?,
                }
            }
            StreamKind::ModeDirectory => StreamSource::Modes(load_mode_directory(
                s.dir
                    .as_deref()
                    .ok_or_else(|| Error::ConfigValue("mode-directory streams need stream.dir".into()))?,
            )?),
        })
    }

    pub fn stream(&self, cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Episode<S>>> {
        let s = &cfg.stream;
        let sseed = stream_seed(cfg, seed);
        match self {
            StreamSource::Synthetic => {
                let modes = if s.modes == 1 {
                    ModeSpec::homogeneous(sseed)
                } else {
                    ModeSpec::distinct(s.modes, s.offset, sseed)
                };
                synthetic_hetero_stream(&modes, &s.synthetic(sseed))
            }
            StreamSource::Rainbow { images, labels } => rainbow_stream(images, labels, sseed, s.sizes()),
            StreamSource::Modes(pools) => mode_directory_stream(pools, s.tasks_per_mode, s.n_classes, s.sizes(), sseed),
        }
    }
}

/// Runs one method over a whole stream from a fresh state.
pub fn run_method<S: Real>(
    method: Method,
    episodes: &[Episode<S>],
    spec: &GraphSpec,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<Vec<TaskResult>> {
    let base = cfg.baseline();
    let mut out = Vec::with_capacity(episodes.len());
    match method {
        Method::Osml => {
            let mut graph = MetaGraph::init(spec.clone(), graph_seed(seed))?;
            let mut buffer = TaskBuffer::new();
            for ep in episodes {
                out.push(run_osml_task(&mut graph, &mut buffer, ep, &cfg.osml, seed, None)?);
            }
        }
        Method::Ftml | Method::FtmlLarge => {
            let mut state = FtmlState::new(spec, seed)?;
            for ep in episodes {
                out.push(run_ftml(&mut state, ep, &base, seed)?);
            }
        }
        Method::Ft | Method::FtLarge => {
            let mut state = FtState::new(spec, seed)?;
            for ep in episodes {
                out.push(run_ft(&mut state, ep, &base, seed)?);
            }
        }
        Method::Nt | Method::NtLarge => {
            for (i, ep) in episodes.iter().enumerate() {
                out.push(run_nt(ep, i, spec, &base, seed)?);
            }
        }
    }
    Ok(out)
}

/// Outcome of one (method, seed) cell.
#[derive(Clone, Debug)]
pub struct Cell {
    pub method: Method,
    pub seed: u64,
    pub outcome: std::result::Result<Vec<TaskResult>, String>,
}

fn guarded(f: impl FnOnce() -> Result<Vec<TaskResult>>) -> std::result::Result<Vec<TaskResult>, String> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(r)) => Ok(r),
        Ok(Err(e)) => Err(e.to_string()),
        Err(panic) => Err(panic
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| panic.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "panic".into())),
    }
}

/// Everything an experiment produced, before it is written out.
#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub cells: Vec<Cell>,
    pub rows: Vec<MetricsRow>,
    pub pathways: Vec<PathwayRow>,
    /// `(method, seed, regret)` when a comparator was requested.
    pub regrets: Vec<(String, u64, f64)>,
}

impl ExperimentOutput {
    pub fn failures(&self) -> Vec<(Method, u64, &str)> {
        self.cells
            .iter()
            .filter_map(|c| c.outcome.as_ref().err().map(|e| (c.method, c.seed, e.as_str())))
            .collect()
    }
}

/// A seed's task stream, or why it could not be built.
type SeedStream<S> = std::result::Result<Vec<Episode<S>>, String>;

fn run_cells<S: Real>(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let source = StreamSource::<S>::load(cfg)?;
    let streams: Vec<(u64, SeedStream<S>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| (seed, source.stream(cfg, seed).map_err(|e| e.to_string())))
        .collect();
    let streams: BTreeMap<u64, _> = streams.into_iter().collect();
    let spec_for = |episodes: &[Episode<S>]| -> Result<GraphSpec> {
        let first = episodes
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty task stream".into()))?;
        cfg.graph_spec(first.support.sample_shape())
    };

    let plain: Vec<(Method, u64)> = cfg
        .methods
        .iter()
        .filter(|m| !m.is_large())
        .flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let mut cells: Vec<Cell> = plain
        .par_iter()
        .map(|&(method, seed)| Cell {
            method,
            seed,
            outcome: guarded(|| {
                let episodes = streams[&seed].as_ref().map_err(|e| Error::InvalidArgument(e.clone()))?;
                run_method(method, episodes, &spec_for(episodes)?, cfg, seed)
            }),
        })
        .collect();

    // large variants are widened by the final OSML block counts of their seed
    let final_blocks: BTreeMap<u64, Vec<usize>> = cells
        .iter()
        .filter(|c| c.method == Method::Osml)
        .filter_map(|c| {
            let r = c.outcome.as_ref().ok()?;
            Some((c.seed, r.last()?.blocks_per_layer.clone()))
        })
        .collect();
    let large: Vec<(Method, u64)> = cfg
        .methods
        .iter()
        .filter(|m| m.is_large())
        .flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let large_cells: Vec<Cell> = large
        .par_iter()
        .map(|&(method, seed)| Cell {
            method,
            seed,
            outcome: guarded(|| {
                let episodes = streams[&seed].as_ref().map_err(|e| Error::InvalidArgument(e.clone()))?;
                let factors = final_blocks.get(&seed).ok_or_else(|| {
                    Error::InvalidArgument(format!("{method} needs a successful osml run for seed {seed}"))
                })?;
                let spec = large_spec(&spec_for(episodes)?, factors)?;
                run_method(method, episodes, &spec, cfg, seed)
            }),
        })
        .collect();
    cells.extend(large_cells);

    let mut regrets = Vec::new();
    if cfg.regret_epochs > 0 {
        let comparators: BTreeMap<u64, Vec<f64>> = cfg
            .seeds
            .par_iter()
            .filter_map(|&seed| {
                let episodes = streams[&seed].as_ref().ok()?;
                let spec = spec_for(episodes).ok()?;
                let losses =
                    retrospective_comparator(episodes, &spec, &cfg.baseline(), cfg.regret_epochs, seed).ok()?;
                Some((seed, losses))
            })
            .collect();
        for c in &cells {
            if let (Ok(results), Some(comp)) = (&c.outcome, comparators.get(&c.seed)) {
                let losses: Vec<f64> = results.iter().map(|r| r.test_loss).collect();
                regrets.push((c.method.name().to_string(), c.seed, regret(&losses, comp)?));
            }
        }
        regrets.sort_by(|a, b| (a.0.as_str(), a.1).cmp(&(b.0.as_str(), b.1)));
    }

    let mut rows = Vec::new();
    let mut pathways = Vec::new();
    for c in &cells {
        let Ok(results) = &c.outcome else { continue };
        for r in results {
            rows.push(MetricsRow {
                method: c.method.name().into(),
                seed: c.seed,
                task_index: r.task_index,
                tag: r.tag.clone(),
                accuracy: r.accuracy,
                query_loss: r.test_loss,
                blocks_per_layer: r.blocks_per_layer.clone(),
                wall_ms: if cfg.record_timings { r.wall_ms } else { 0.0 },
            });
            pathways.push(PathwayRow {
                method: c.method.name().into(),
                seed: c.seed,
                task_index: r.task_index,
                tag: r.tag.clone(),
                pathway: r.pathway.clone(),
            });
        }
    }
    metrics::sort_rows(&mut rows);
    pathways.sort_by(|a, b| (a.method.as_str(), a.seed, a.task_index).cmp(&(b.method.as_str(), b.seed, b.task_index)));
    cells.sort_by(|a, b| (a.method.name(), a.seed).cmp(&(b.method.name(), b.seed)));
    Ok(ExperimentOutput {
        cells,
        rows,
        pathways,
        regrets,
    })
}

/// Runs every cell without writing anything.
pub fn execute(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    match cfg.precision {
        Precision::F32 => run_cells::<f32>(cfg),
        Precision::F64 => run_cells::<f64>(cfg),
    }
}

/// Writes metrics, pathways, summaries, selection reports, regret, failures
/// and the resolved configuration into `dir`.
pub fn write_outputs(out: &ExperimentOutput, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let resolved = dir.join("config.resolved");
    fs::write(&resolved, cfg.resolved()).map_err(|e| Error::io(&resolved, e))?;
    metrics::write_metrics(&out.rows, &dir.join("metrics.csv"))?;
    report::write_pathways(&out.pathways, &dir.join("pathways.csv"))?;
    if !out.rows.is_empty() {
        report::write_reports(&out.rows, &out.pathways, dir)?;
    }
    if !out.regrets.is_empty() {
        let mut w = csv::Writer::from_path(dir.join("regret.csv"))?;
        w.write_record(["method", "seed", "regret"])?;
        for (m, s, r) in &out.regrets {
            w.write_record([m.clone(), s.to_string(), format!("{r:.6}")])?;
        }
        w.flush().map_err(|e| Error::io(dir, e))?;
    }
    let failures = out.failures();
    let path = dir.join("failures.txt");
    if failures.is_empty() {
        if path.exists() {
            fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        }
    } else {
        let text: String = failures
            .iter()
            .map(|(m, s, e)| format!("{m} seed={s}: {e}\n"))
            .collect();
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// [`execute`] followed by [`write_outputs`] into the configured output
/// directory. Returns the output and the directory written.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(ExperimentOutput, PathBuf)> {
    let out = execute(cfg)?;
    let dir = cfg.output_dir();
    write_outputs(&out, cfg, &dir)?;
    Ok((out, dir))
}
