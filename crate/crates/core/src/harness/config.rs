//! `key=value` experiment configuration.
//!
//! One key per line, `#` starts a comment, keys are dotted
//! (`osml.n_meta=5`). Every key has a default, so an empty file is a valid
//! configuration. Unknown keys are rejected with their line number.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::baselines::{BaselineConfig, Method};
use crate::graph::{GraphSpec, HeadInit};
use crate::metaupdate::{OsmlConfig, UpdateConfig};
use crate::tasks::{SplitSizes, SyntheticConfig};
use crate::{Error, Result};

/// Environment variable that relocates relative output directories.
pub const OUTPUT_ROOT_VAR: &str = "OSML_OUTPUT_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamKind {
    /// Procedural multi-mode stream.
    Synthetic,
    /// Rainbow MNIST built from IDX files.
    Rainbow,
    /// One subdirectory of IDX files per mode.
    ModeDirectory,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Dense,
    Conv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StreamConfig {
    pub kind: StreamKind,
    /// Number of modes of the synthetic stream; 1 gives a homogeneous stream.
    pub modes: usize,
    /// Norm of each synthetic mode's offset vector.
    pub offset: f64,
    pub tasks_per_mode: usize,
    pub n_classes: usize,
    pub dims: usize,
    pub signal_dims: usize,
    pub prototype_std: f64,
    pub within_std: f64,
    pub noise_std: f64,
    /// Samples per class in each split.
    pub support: usize,
    pub query: usize,
    pub test: usize,
    pub seed: u64,
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub dir: Option<PathBuf>,
}

impl Default for StreamConfig {
    fn default() -> Self {
        let s = SyntheticConfig::default();
        Self {
            kind: StreamKind::Synthetic,
            modes: 3,
            offset: 4.0,
            tasks_per_mode: s.tasks_per_mode,
            n_classes: s.n_classes,
            dims: s.dims,
            signal_dims: s.signal_dims,
            prototype_std: s.prototype_std,
            within_std: s.within_std,
            noise_std: s.noise_std,
            support: s.sizes.support,
            query: s.sizes.query,
            test: s.sizes.test,
            seed: s.seed,
            images: None,
            labels: None,
            dir: None,
        }
    }
}

impl StreamConfig {
    pub fn sizes(&self) -> SplitSizes {
        SplitSizes::new(self.support, self.query, self.test)
    }

    pub fn synthetic(&self, seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            tasks_per_mode: self.tasks_per_mode,
            n_classes: self.n_classes,
            dims: self.dims,
            signal_dims: self.signal_dims,
            prototype_std: self.prototype_std,
            within_std: self.within_std,
            noise_std: self.noise_std,
            sizes: self.sizes(),
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Units (dense) or channels (conv) per layer; one entry per layer.
    pub widths: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub head_init: HeadInit,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Dense,
            widths: vec![32, 32],
            kernel: 3,
            stride: 2,
            padding: 1,
            head_init: HeadInit::Zeros,
        }
    }
}

/// Overrides of the FTML baseline; unset values mirror the OSML settings.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FtmlOverrides {
    pub inner_lr: Option<f64>,
    pub meta_lr: Option<f64>,
    pub meta_steps: Option<usize>,
    pub replay_tasks: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub stream: StreamConfig,
    pub model: ModelConfig,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub osml: OsmlConfig,
    pub ftml: FtmlOverrides,
    pub precision: Precision,
    pub output: PathBuf,
    /// Write measured wall-clock times instead of zeros.
    pub record_timings: bool,
    /// Epochs of the retrospective regret comparator; 0 disables regret.
    pub regret_epochs: usize,
    /// Accuracy target of the samples-to-target analysis of sweeps.
    pub sweep_target: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            stream: StreamConfig::default(),
            model: ModelConfig::default(),
            methods: vec![Method::Osml, Method::Ftml, Method::Ft, Method::Nt],
            seeds: vec![0],
            osml: OsmlConfig::default(),
            ftml: FtmlOverrides::default(),
            precision: Precision::F32,
            output: PathBuf::from("results"),
            record_timings: false,
            regret_epochs: 0,
            sweep_target: 0.8,
        }
    }
}

fn parse_value<T: FromStr>(value: &str, line: usize, what: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config {
        line,
        message: format!("{value:?} is not a valid {what}"),
    })
}

fn parse_list<T: FromStr>(value: &str, line: usize, what: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(s, line, what))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                message: format!("expected key=value, got {content:?}"),
            })?;
            cfg.set(key.trim(), value.trim(), line)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    fn set(&mut self, key: &str, v: &str, line: usize) -> Result<()> {
        let s = &mut self.stream;
        let m = &mut self.model;
        let search = &mut self.osml.search;
        let update = &mut self.osml.update;
        match key {
            "stream.kind" => {
                s.kind = match v {
                    "synthetic" => StreamKind::Synthetic,
                    "rainbow" => StreamKind::Rainbow,
                    "modes" => StreamKind::ModeDirectory,
                    _ => {
                        return Err(Error::Config {
                            line,
                            message: format!("unknown stream kind {v:?}"),
                        })
                    }
                }
            }
            "stream.modes" => s.modes = parse_value(v, line, "count")?,
            "stream.offset" => s.offset = parse_value(v, line, "number")?,
            "stream.tasks_per_mode" => s.tasks_per_mode = parse_value(v, line, "count")?,
            "stream.n_classes" => s.n_classes = parse_value(v, line, "count")?,
            "stream.dims" => s.dims = parse_value(v, line, "count")?,
            "stream.signal_dims" => s.signal_dims = parse_value(v, line, "count")?,
            "stream.prototype_std" => s.prototype_std = parse_value(v, line, "number")?,
            "stream.within_std" => s.within_std = parse_value(v, line, "number")?,
            "stream.noise_std" => s.noise_std = parse_value(v, line, "number")?,
            "stream.support" => s.support = parse_value(v, line, "count")?,
            "stream.query" => s.query = parse_value(v, line, "count")?,
            "stream.test" => s.test = parse_value(v, line, "count")?,
            "stream.seed" => s.seed = parse_value(v, line, "integer")?,
            "stream.images" => s.images = Some(PathBuf::from(v)),
            "stream.labels" => s.labels = Some(PathBuf::from(v)),
            "stream.dir" => s.dir = Some(PathBuf::from(v)),
            "model.kind" => {
                m.kind = match v {
                    "dense" => ModelKind::Dense,
                    "conv" => ModelKind::Conv,
                    _ => {
                        return Err(Error::Config {
                            line,
                            message: format!("unknown model kind {v:?}"),
                        })
                    }
                }
            }
            "model.widths" => m.widths = parse_list(v, line, "width list")?,
            "model.kernel" => m.kernel = parse_value(v, line, "count")?,
            "model.stride" => m.stride = parse_value(v, line, "count")?,
            "model.padding" => m.padding = parse_value(v, line, "count")?,
            "model.head_init" => {
                m.head_init = match v {
                    "zeros" => HeadInit::Zeros,
                    "normal" => HeadInit::Normal,
                    _ => {
                        return Err(Error::Config {
                            line,
                            message: format!("unknown head init {v:?}"),
                        })
                    }
                }
            }
            "methods" => self.methods = parse_list(v, line, "method list")?,
            "seeds" => self.seeds = parse_list(v, line, "seed list")?,
            "osml.alpha" => search.inner_lr = parse_value(v, line, "number")?,
            "osml.beta1" => search.meta_lr_params = parse_value(v, line, "number")?,
            "osml.beta2" => search.meta_lr_importance = parse_value(v, line, "number")?,
            "osml.beta3" => update.block_meta_lr = parse_value(v, line, "number")?,
            "osml.beta4" => update.block_inner_lr = parse_value(v, line, "number")?,
            "osml.beta5" => update.finetune_lr = parse_value(v, line, "number")?,
            "osml.inner_steps" => search.inner_steps = parse_value(v, line, "count")?,
            "osml.n_search" => search.search_rounds = parse_value(v, line, "count")?,
            "osml.spawn_novel" => search.spawn_novel = parse_value(v, line, "boolean")?,
            "osml.second_order" => search.second_order = parse_value(v, line, "boolean")?,
            "osml.n_meta" => update.meta_rounds = parse_value(v, line, "count")?,
            "osml.k" => update.replay_tasks = parse_value(v, line, "count")?,
            "osml.finetune_steps" => update.finetune_steps = parse_value(v, line, "count")?,
            "osml.batch_cap" => update.batch_cap = parse_value(v, line, "count")?,
            "ftml.inner_lr" => self.ftml.inner_lr = Some(parse_value(v, line, "number")?),
            "ftml.meta_lr" => self.ftml.meta_lr = Some(parse_value(v, line, "number")?),
            "ftml.meta_steps" => self.ftml.meta_steps = Some(parse_value(v, line, "count")?),
            "ftml.replay_tasks" => self.ftml.replay_tasks = Some(parse_value(v, line, "count")?),
            "precision" => {
                self.precision = match v {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => {
                        return Err(Error::Config {
                            line,
                            message: format!("precision must be f32 or f64, got {v:?}"),
                        })
                    }
                }
            }
            "output" => self.output = PathBuf::from(v),
            "record_timings" => self.record_timings = parse_value(v, line, "boolean")?,
            "regret.epochs" => self.regret_epochs = parse_value(v, line, "count")?,
            "sweep.target" => self.sweep_target = parse_value(v, line, "number")?,
            _ => {
                return Err(Error::Config {
                    line,
                    message: format!("unknown key {key:?}"),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.osml.search.validate()?;
        self.osml.update.validate()?;
        self.baseline().validate()?;
        let s = &self.stream;
        if s.n_classes < 2 || s.support == 0 || s.query == 0 || s.test == 0 {
            return Err(Error::ConfigValue(
                "streams need at least two classes and one sample per class in every split".into(),
            ));
        }
        if s.kind == StreamKind::Synthetic
            && (s.modes == 0 || s.tasks_per_mode == 0 || s.signal_dims == 0 || s.signal_dims > s.dims)
        {
            return Err(Error::ConfigValue(
                "synthetic streams need modes, tasks and 1 <= signal_dims <= dims".into(),
            ));
        }
        if s.kind == StreamKind::Rainbow && (s.images.is_none() || s.labels.is_none()) {
            return Err(Error::ConfigValue("rainbow streams need stream.images and stream.labels".into()));
        }
        if s.kind == StreamKind::ModeDirectory && s.dir.is_none() {
            return Err(Error::ConfigValue("mode-directory streams need stream.dir".into()));
        }
        for (name, x) in [
            ("stream.offset", s.offset),
            ("stream.prototype_std", s.prototype_std),
            ("stream.within_std", s.within_std),
            ("stream.noise_std", s.noise_std),
        ] {
            if !(x.is_finite() && x >= 0.0) {
                return Err(Error::ConfigValue(format!("{name} must be finite and non-negative")));
            }
        }
        if self.model.widths.is_empty() || self.model.widths.contains(&0) {
            return Err(Error::ConfigValue("model.widths needs at least one positive width".into()));
        }
        if self.model.kernel == 0 || self.model.stride == 0 {
            return Err(Error::ConfigValue("model.kernel and model.stride must be positive".into()));
        }
        if self.methods.is_empty() || self.seeds.is_empty() {
            return Err(Error::ConfigValue("methods and seeds must not be empty".into()));
        }
        if !(0.0..=1.0).contains(&self.sweep_target) {
            return Err(Error::ConfigValue("sweep.target must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Settings of the comparison learners: per-task training uses the
    /// fine-tuning rate and steps, FTML mirrors the replay settings unless
    /// overridden.
    pub fn baseline(&self) -> BaselineConfig {
        let u: &UpdateConfig = &self.osml.update;
        BaselineConfig {
            train_lr: u.finetune_lr,
            train_steps: u.finetune_steps,
            ftml_inner_lr: self.ftml.inner_lr.unwrap_or(self.osml.search.inner_lr),
            ftml_meta_lr: self.ftml.meta_lr.unwrap_or(u.block_meta_lr),
            ftml_meta_steps: self.ftml.meta_steps.unwrap_or(u.meta_rounds),
            ftml_replay_tasks: self.ftml.replay_tasks.unwrap_or(u.replay_tasks),
            batch_cap: u.batch_cap,
        }
    }

    /// The graph for inputs of the given per-sample shape.
    pub fn graph_spec(&self, sample_shape: &[usize]) -> Result<GraphSpec> {
        let m = &self.model;
        let spec = match m.kind {
            ModelKind::Dense => {
                let dim = sample_shape.iter().product();
                GraphSpec::dense(dim, &m.widths, self.stream.n_classes)
            }
            ModelKind::Conv => {
                let shape: [usize; 3] = sample_shape.try_into().map_err(|_| {
                    Error::ConfigValue(format!("conv models need C×H×W inputs, got {sample_shape:?}"))
                })?;
                GraphSpec::conv(shape, &m.widths, m.kernel, m.stride, m.padding, self.stream.n_classes)
            }
        };
        let spec = spec.with_head_init(m.head_init);
        spec.head_features()?;
        Ok(spec)
    }

    /// Output directory after applying [`OUTPUT_ROOT_VAR`].
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_VAR) {
            Some(root) if self.output.is_relative() => PathBuf::from(root).join(&self.output),
            _ => self.output.clone(),
        }
    }

    /// Every key with its resolved value, in a form [`Self::parse_str`]
    /// reads back.
    pub fn resolved(&self) -> String {
        let s = &self.stream;
        let m = &self.model;
        let search = &self.osml.search;
        let u = &self.osml.update;
        let b = self.baseline();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let mut entries: Vec<(&str, String)> = vec![
            (
                "stream.kind",
                match s.kind {
                    StreamKind::Synthetic => "synthetic",
                    StreamKind::Rainbow => "rainbow",
                    StreamKind::ModeDirectory => "modes",
                }
                .into(),
            ),
            ("stream.modes", s.modes.to_string()),
            ("stream.offset", s.offset.to_string()),
            ("stream.tasks_per_mode", s.tasks_per_mode.to_string()),
            ("stream.n_classes", s.n_classes.to_string()),
            ("stream.dims", s.dims.to_string()),
            ("stream.signal_dims", s.signal_dims.to_string()),
            ("stream.prototype_std", s.prototype_std.to_string()),
            ("stream.within_std", s.within_std.to_string()),
            ("stream.noise_std", s.noise_std.to_string()),
            ("stream.support", s.support.to_string()),
            ("stream.query", s.query.to_string()),
            ("stream.test", s.test.to_string()),
            ("stream.seed", s.seed.to_string()),
        ];
        for (key, value) in [("stream.images", &s.images), ("stream.labels", &s.labels), ("stream.dir", &s.dir)] {
            if let Some(p) = path(value) {
                entries.push((key, p));
            }
        }
        entries.extend([
            (
                "model.kind",
                match m.kind {
                    ModelKind::Dense => "dense",
                    ModelKind::Conv => "conv",
                }
                .into(),
            ),
            ("model.widths", join(&m.widths)),
            ("model.kernel", m.kernel.to_string()),
            ("model.stride", m.stride.to_string()),
            ("model.padding", m.padding.to_string()),
            (
                "model.head_init",
                match m.head_init {
                    HeadInit::Zeros => "zeros",
                    HeadInit::Normal => "normal",
                }
                .into(),
            ),
            ("methods", join(&self.methods)),
            ("seeds", join(&self.seeds)),
            ("osml.alpha", search.inner_lr.to_string()),
            ("osml.beta1", search.meta_lr_params.to_string()),
            ("osml.beta2", search.meta_lr_importance.to_string()),
            ("osml.beta3", u.block_meta_lr.to_string()),
            ("osml.beta4", u.block_inner_lr.to_string()),
            ("osml.beta5", u.finetune_lr.to_string()),
            ("osml.inner_steps", search.inner_steps.to_string()),
            ("osml.n_search", search.search_rounds.to_string()),
            ("osml.spawn_novel", search.spawn_novel.to_string()),
            ("osml.second_order", search.second_order.to_string()),
            ("osml.n_meta", u.meta_rounds.to_string()),
            ("osml.k", u.replay_tasks.to_string()),
            ("osml.finetune_steps", u.finetune_steps.to_string()),
            ("osml.batch_cap", u.batch_cap.to_string()),
            ("ftml.inner_lr", b.ftml_inner_lr.to_string()),
            ("ftml.meta_lr", b.ftml_meta_lr.to_string()),
            ("ftml.meta_steps", b.ftml_meta_steps.to_string()),
            ("ftml.replay_tasks", b.ftml_replay_tasks.to_string()),
            (
                "precision",
                match self.precision {
                    Precision::F32 => "f32",
                    Precision::F64 => "f64",
                }
                .into(),
            ),
            ("output", self.output.display().to_string()),
            ("record_timings", self.record_timings.to_string()),
            ("regret.epochs", self.regret_epochs.to_string()),
            ("sweep.target", self.sweep_target.to_string()),
        ]);
        let mut out = String::new();
        for (k, v) in entries {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [
            ("train_lr", self.train_lr),
            ("ftml_inner_lr", self.ftml_inner_lr),
            ("ftml_meta_lr", self.ftml_meta_lr),
        ] {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(Error::ConfigValue(format!("{name} must be finite and non-negative, got {lr}")));
            }
        }
        if self.ftml_replay_tasks == 0 || self.batch_cap == 0 {
            return Err(Error::ConfigValue("ftml replay tasks and batch cap must be at least 1".into()));
        }
        Ok(())
    }
}
