//! Reports derived from metric rows and pathway histories: summaries and
//! per-layer block selection ratios (CSV plus SVG bar charts).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::metrics::{self, MetricsRow};
use crate::graph::{BlockId, Pathway};
use crate::{Error, Result};

pub const PATHWAY_HEADER: [&str; 5] = ["method", "seed", "task_index", "tag", "pathway"];

#[derive(Clone, Debug, PartialEq)]
pub struct PathwayRow {
    pub method: String,
    pub seed: u64,
    pub task_index: usize,
    pub tag: String,
    pub pathway: Pathway,
}

pub fn write_pathways(rows: &[PathwayRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(PATHWAY_HEADER)?;
    for r in rows {
        let blocks: Vec<String> = r.pathway.blocks().iter().map(u64::to_string).collect();
        w.write_record([
            r.method.clone(),
            r.seed.to_string(),
            r.task_index.to_string(),
            r.tag.clone(),
            blocks.join(";"),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_pathways(path: &Path) -> Result<Vec<PathwayRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Config {
            line: i + 2,
            message: format!("bad {what} in pathways"),
        };
        let get = |k: usize| rec.get(k).unwrap_or("");
        rows.push(PathwayRow {
            method: get(0).to_string(),
            seed: get(1).parse().map_err(|_| bad("seed"))?,
            task_index: get(2).parse().map_err(|_| bad("task index"))?,
            tag: get(3).to_string(),
            pathway: Pathway(
                get(4)
                    .split(';')
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse().map_err(|_| bad("block id")))
                    .collect::<Result<_>>()?,
            ),
        });
    }
    Ok(rows)
}

/// Share of one tag among the tasks selecting one block.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionRow {
    pub seed: u64,
    pub layer: usize,
    pub block: BlockId,
    pub tag: String,
    pub ratio: f64,
    /// Tasks of any tag selecting the block.
    pub selections: usize,
}

/// Selection ratios of one run's pathway history, grouped by layer.
pub fn selection_rows(seed: u64, history: &[(String, Pathway)]) -> Vec<SelectionRow> {
    let ratios = crate::graph::selection_ratios(history);
    let mut layer_of: BTreeMap<BlockId, usize> = BTreeMap::new();
    let mut uses: BTreeMap<BlockId, usize> = BTreeMap::new();
    for (_, p) in history {
        for (l, &b) in p.blocks().iter().enumerate() {
            layer_of.insert(b, l);
            *uses.entry(b).or_default() += 1;
        }
    }
    let mut rows: Vec<SelectionRow> = ratios
        .into_iter()
        .flat_map(|(block, by_tag)| {
            let layer = layer_of[&block];
            let selections = uses[&block];
            by_tag.into_iter().map(move |(tag, ratio)| SelectionRow {
                seed,
                layer,
                block,
                tag,
                ratio,
                selections,
            })
        })
        .collect();
    rows.sort_by(|a, b| (a.layer, a.block, &a.tag).cmp(&(b.layer, b.block, &b.tag)));
    rows
}

const PALETTE: [&str; 8] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#9c755f",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Grouped bar chart of one layer: one `<g>` per block, one bar per tag.
pub fn selection_svg(layer: usize, rows: &[SelectionRow]) -> String {
    let tags: Vec<&str> = rows
        .iter()
        .map(|r| r.tag.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let blocks: Vec<BlockId> = rows.iter().map(|r| r.block).collect::<BTreeSet<_>>().into_iter().collect();
    let bar = 14.0;
    let group = bar * tags.len().max(1) as f64 + 16.0;
    let (left, top, plot_h) = (40.0, 30.0, 160.0);
    let width = left + group * blocks.len() as f64 + 20.0 + 110.0;
    let height = top + plot_h + 40.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{left}" y="18" font-family="sans-serif" font-size="13">layer {layer} selection ratio</text>"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        top + plot_h,
        left + group * blocks.len() as f64,
        top + plot_h
    );
    for (bi, block) in blocks.iter().enumerate() {
        let x0 = left + group * bi as f64 + 8.0;
        let _ = writeln!(s, r#"<g class="block" id="block-{block}">"#);
        for (ti, tag) in tags.iter().enumerate() {
            let ratio = rows
                .iter()
                .find(|r| r.block == *block && r.tag == *tag)
                .map_or(0.0, |r| r.ratio);
            let h = ratio * plot_h;
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{bar}" height="{h:.1}" fill="{}"><title>{} {:.3}</title></rect>"#,
                x0 + bar * ti as f64,
                top + plot_h - h,
                PALETTE[ti % PALETTE.len()],
                escape(tag),
                ratio
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" font-family="sans-serif" font-size="11">b{block}</text>"#,
            x0,
            top + plot_h + 14.0
        );
        s.push_str("</g>\n");
    }
    let legend_x = left + group * blocks.len() as f64 + 20.0;
    for (ti, tag) in tags.iter().enumerate() {
        let y = top + 16.0 * ti as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{legend_x}" y="{y}" width="10" height="10" fill="{}"/><text x="{}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#,
            PALETTE[ti % PALETTE.len()],
            legend_x + 14.0,
            y + 9.0,
            escape(tag)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `selection.csv` and one SVG per (seed, layer) for the OSML
/// pathway histories in `pathways`.
pub fn write_selection(pathways: &[PathwayRow], dir: &Path) -> Result<Vec<SelectionRow>> {
    let mut histories: BTreeMap<u64, Vec<(String, Pathway)>> = BTreeMap::new();
    for p in pathways.iter().filter(|p| p.method == "osml") {
        histories.entry(p.seed).or_default().push((p.tag.clone(), p.pathway.clone()));
    }
    let mut all = Vec::new();
    let mut w = csv::Writer::from_path(dir.join("selection.csv"))?;
    w.write_record(["seed", "layer", "block", "tag", "ratio", "selections"])?;
    for (seed, history) in &histories {
        let rows = selection_rows(*seed, history);
        for r in &rows {
            w.write_record([
                r.seed.to_string(),
                r.layer.to_string(),
                r.block.to_string(),
                r.tag.clone(),
                format!("{:.6}", r.ratio),
                r.selections.to_string(),
            ])?;
        }
        let layers: BTreeSet<usize> = rows.iter().map(|r| r.layer).collect();
        for layer in layers {
            let in_layer: Vec<SelectionRow> = rows.iter().filter(|r| r.layer == layer).cloned().collect();
            let path = dir.join(format!("selection_seed{seed}_layer{layer}.svg"));
            fs::write(&path, selection_svg(layer, &in_layer)).map_err(|e| Error::io(&path, e))?;
        }
        all.extend(rows);
    }
    w.flush().map_err(|e| Error::io(dir, e))?;
    Ok(all)
}

/// Summary, per-seed summary and selection reports of a finished run.
pub fn write_reports(rows: &[MetricsRow], pathways: &[PathwayRow], dir: &Path) -> Result<()> {
    metrics::write_summary(&metrics::summary_rows(rows)?, &dir.join("summary.csv"))?;
    metrics::write_seed_summary(rows, &dir.join("seed_summary.csv"))?;
    write_selection(pathways, dir)?;
    Ok(())
}

/// Regenerates every report of a results directory from its CSV files.
pub fn report_dir(dir: &Path) -> Result<Vec<metrics::SummaryRow>> {
    let rows = metrics::read_metrics(&dir.join("metrics.csv"))?;
    let pathways_path = dir.join("pathways.csv");
    let pathways = if pathways_path.exists() {
        read_pathways(&pathways_path)?
    } else {
        Vec::new()
    };
    write_reports(&rows, &pathways, dir)?;
    metrics::summary_rows(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Minimal well-formedness check: tags balance and nest.
    fn balanced(xml: &str) -> bool {
        let mut stack: Vec<String> = Vec::new();
        let mut rest = xml;
        while let Some(start) = rest.find('<') {
            let end = match rest[start..].find('>') {
                Some(e) => start + e,
                None => return false,
            };
            let tag = &rest[start + 1..end];
            if let Some(name) = tag.strip_prefix('/') {
                if stack.pop().as_deref() != Some(name.trim()) {
                    return false;
                }
            } else if !tag.ends_with('/') {
                stack.push(tag.split_whitespace().next().unwrap_or("").to_string());
            }
            rest = &rest[end + 1..];
        }
        stack.is_empty()
    }

    #[test]
    fn worked_ratio_example() {
        let mut history = Vec::new();
        for _ in 0..3 {
            history.push(("A".to_string(), Pathway(vec![1, 5])));
        }
        for _ in 0..2 {
            history.push(("B".to_string(), Pathway(vec![1, 6])));
        }
        let rows = selection_rows(0, &history);
        let b1: Vec<_> = rows.iter().filter(|r| r.block == 1).collect();
        assert_eq!(b1.len(), 2);
        assert!((b1[0].ratio - 0.6).abs() < 1e-12 && b1[0].tag == "A");
        assert!((b1[1].ratio - 0.4).abs() < 1e-12);
        assert_eq!(b1[0].selections, 5);
        let b5 = rows.iter().find(|r| r.block == 5).unwrap();
        assert_eq!((b5.layer, b5.ratio), (1, 1.0));
    }

    #[test]
    fn single_tag_gives_unit_ratios() {
        let history: Vec<_> = (0..4).map(|i| ("only".to_string(), Pathway(vec![0, 1 + i % 2]))).collect();
        assert!(selection_rows(0, &history).iter().all(|r| r.ratio == 1.0));
    }

    #[test]
    fn svg_has_one_group_per_block_and_balances() {
        let history = vec![
            ("a<b".to_string(), Pathway(vec![0])),
            ("c".to_string(), Pathway(vec![2])),
            ("c".to_string(), Pathway(vec![0])),
        ];
        let svg = selection_svg(0, &selection_rows(0, &history));
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<g ").count(), 2);
        assert!(balanced(&svg), "{svg}");
    }

    #[test]
    fn pathway_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![PathwayRow {
            method: "osml".into(),
            seed: 2,
            task_index: 0,
            tag: "m0".into(),
            pathway: Pathway(vec![0, 4]),
        }];
        let path = dir.path().join("p.csv");
        write_pathways(&rows, &path).unwrap();
        assert_eq!(read_pathways(&path).unwrap(), rows);
    }
}
