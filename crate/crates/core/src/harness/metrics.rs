//! Metric rows, their CSV form, and the aggregate statistics over them.

use std::collections::BTreeMap;
use std::path::Path;

use crate::{Error, Result};

/// Tag of the rows aggregating every tag of a method.
pub const OVERALL: &str = "overall";

pub const METRICS_HEADER: [&str; 8] = [
    "method",
    "seed",
    "task_index",
    "tag",
    "accuracy",
    "query_loss",
    "blocks_per_layer",
    "wall_ms",
];

pub const SUMMARY_HEADER: [&str; 5] = ["method", "tag", "mean_acc", "ci95", "ar"];

/// One task's result under one method and seed. `query_loss` holds the
/// held-out loss after fine-tuning.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub seed: u64,
    pub task_index: usize,
    pub tag: String,
    pub accuracy: f64,
    pub query_loss: f64,
    pub blocks_per_layer: Vec<usize>,
    pub wall_ms: f64,
}

pub fn sort_rows(rows: &mut [MetricsRow]) {
    rows.sort_by(|a, b| {
        (a.method.as_str(), a.seed, a.task_index).cmp(&(b.method.as_str(), b.seed, b.task_index))
    });
}

fn join_counts(counts: &[usize]) -> String {
    counts.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
}

pub fn write_metrics(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.seed.to_string(),
            r.task_index.to_string(),
            r.tag.clone(),
            format!("{:.6}", r.accuracy),
            format!("{:.6}", r.query_loss),
            join_counts(&r.blocks_per_layer),
            format!("{:.3}", r.wall_ms),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: usize) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse().map_err(|_| Error::Config {
        line,
        message: format!("column {} holds {raw:?}", METRICS_HEADER[i]),
    })
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.iter().ne(METRICS_HEADER) {
        return Err(Error::Config {
            line: 1,
            message: format!("unexpected metrics header {header:?}"),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let blocks = rec.get(6).unwrap_or("");
        rows.push(MetricsRow {
            method: field(&rec, 0, line)?,
            seed: field(&rec, 1, line)?,
            task_index: field(&rec, 2, line)?,
            tag: field(&rec, 3, line)?,
            accuracy: field(&rec, 4, line)?,
            query_loss: field(&rec, 5, line)?,
            blocks_per_layer: blocks
                .split(';')
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse().map_err(|_| Error::Config {
                        line,
                        message: format!("bad block counts {blocks:?}"),
                    })
                })
                .collect::<Result<_>>()?,
            wall_ms: field(&rec, 7, line)?,
        });
    }
    Ok(rows)
}

/// Mean and 95% half-width under the normal approximation,
/// `1.96 · s / √n` with the sample standard deviation `s`. The half-width
/// is absent for fewer than two values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanCi {
    pub mean: f64,
    pub ci95: Option<f64>,
    pub n: usize,
}

pub fn mean_ci(values: &[f64]) -> Result<MeanCi> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("mean of an empty cell".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let ci95 = (n >= 2).then(|| {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        1.96 * var.sqrt() / (n as f64).sqrt()
    });
    Ok(MeanCi { mean, ci95, n })
}

/// Accuracy statistics per method and tag, plus an [`OVERALL`] entry per
/// method taken as the unweighted mean over all of its tasks.
pub fn summarize(rows: &[MetricsRow]) -> Result<BTreeMap<(String, String), MeanCi>> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no metric rows to summarize".into()));
    }
    let mut cells: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        cells.entry((r.method.clone(), r.tag.clone())).or_default().push(r.accuracy);
        cells.entry((r.method.clone(), OVERALL.into())).or_default().push(r.accuracy);
    }
    cells.into_iter().map(|(k, v)| Ok((k, mean_ci(&v)?))).collect()
}

/// Mean rank of each method over tasks, ranking by descending accuracy per
/// task; tied methods share the mean of the ranks they span.
pub fn average_ranking(per_task: &BTreeMap<String, Vec<f64>>) -> Result<BTreeMap<String, f64>> {
    let n_tasks = per_task
        .values()
        .next()
        .ok_or_else(|| Error::InvalidArgument("no methods to rank".into()))?
        .len();
    if n_tasks == 0 || per_task.values().any(|v| v.len() != n_tasks) {
        return Err(Error::InvalidArgument(
            "every method needs an accuracy for every task".into(),
        ));
    }
    let methods: Vec<&String> = per_task.keys().collect();
    let mut totals = vec![0.0; methods.len()];
    for t in 0..n_tasks {
        let accs: Vec<f64> = methods.iter().map(|m| per_task[*m][t]).collect();
        for (i, &a) in accs.iter().enumerate() {
            let better = accs.iter().filter(|&&b| b > a).count();
            let tied = accs.iter().filter(|&&b| b == a).count();
            totals[i] += better as f64 + (tied as f64 + 1.0) / 2.0;
        }
    }
    Ok(methods
        .into_iter()
        .zip(totals)
        .map(|(m, s)| (m.clone(), s / n_tasks as f64))
        .collect())
}

/// Per-method accuracy vectors over the tasks every method has, keyed by
/// `(seed, task_index)` and restricted to `tag` when given.
pub fn accuracy_table(rows: &[MetricsRow], tag: Option<&str>) -> BTreeMap<String, Vec<f64>> {
    let mut by_method: BTreeMap<String, BTreeMap<(u64, usize), f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| tag.is_none_or(|t| r.tag == t)) {
        by_method
            .entry(r.method.clone())
            .or_default()
            .insert((r.seed, r.task_index), r.accuracy);
    }
    let common: Vec<(u64, usize)> = match by_method.values().next() {
        Some(first) => first
            .keys()
            .filter(|k| by_method.values().all(|m| m.contains_key(k)))
            .copied()
            .collect(),
        None => Vec::new(),
    };
    by_method
        .into_iter()
        .map(|(m, cells)| (m, common.iter().map(|k| cells[k]).collect()))
        .collect()
}

/// Rows of `summary.csv`: per (method, tag) mean accuracy and CI over tasks
/// of all seeds, and the average ranking over the same tasks.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub tag: String,
    pub mean_acc: f64,
    pub ci95: Option<f64>,
    pub ar: Option<f64>,
}

pub fn summary_rows(rows: &[MetricsRow]) -> Result<Vec<SummaryRow>> {
    let stats = summarize(rows)?;
    let mut ranks: BTreeMap<(String, String), f64> = BTreeMap::new();
    let tags: Vec<String> = stats.keys().map(|(_, t)| t.clone()).collect();
    for tag in tags {
        let filter = (tag != OVERALL).then_some(tag.as_str());
        let table = accuracy_table(rows, filter);
        if table.len() < 2 {
            continue;
        }
        if let Ok(ar) = average_ranking(&table) {
            for (m, r) in ar {
                ranks.insert((m, tag.clone()), r);
            }
        }
    }
    Ok(stats
        .into_iter()
        .map(|((method, tag), s)| SummaryRow {
            ar: ranks.get(&(method.clone(), tag.clone())).copied(),
            method,
            tag,
            mean_acc: s.mean,
            ci95: s.ci95,
        })
        .collect())
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

pub fn write_summary(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.tag.clone(),
            format!("{:.6}", r.mean_acc),
            opt(r.ci95),
            opt(r.ar),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Overall accuracy of each (method, seed) run.
pub fn seed_means(rows: &[MetricsRow]) -> BTreeMap<(String, u64), f64> {
    let mut cells: BTreeMap<(String, u64), Vec<f64>> = BTreeMap::new();
    for r in rows {
        cells.entry((r.method.clone(), r.seed)).or_default().push(r.accuracy);
    }
    cells
        .into_iter()
        .map(|(k, v)| (k, v.iter().sum::<f64>() / v.len() as f64))
        .collect()
}

/// Per method: mean and CI over the per-seed overall accuracies.
pub fn seed_summary(rows: &[MetricsRow]) -> Result<BTreeMap<String, MeanCi>> {
    let mut by_method: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for ((m, _), acc) in seed_means(rows) {
        by_method.entry(m).or_default().push(acc);
    }
    by_method.into_iter().map(|(m, v)| Ok((m, mean_ci(&v)?))).collect()
}

pub fn write_seed_summary(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "seeds", "mean_acc", "ci95"])?;
    for (m, s) in seed_summary(rows)? {
        w.write_record([m, s.n.to_string(), format!("{:.6}", s.mean), opt(s.ci95)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
