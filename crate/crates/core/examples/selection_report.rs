//! Runs a short OSML experiment, writes the result files and prints the
//! per-block selection ratios of every mode.

use osml::baselines::Method;
use osml::harness::{report_dir, run_experiment, selection_rows, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ExperimentConfig::default();
    cfg.methods = vec![Method::Osml, Method::Nt];
    cfg.stream.tasks_per_mode = 8;
    let out_dir = tempfile::tempdir()?;
    cfg.output = out_dir.path().to_path_buf();

    let (out, dir) = run_experiment(&cfg)?;
    let history: Vec<_> = out
        .pathways
        .iter()
        .filter(|p| p.method == "osml")
        .map(|p| (p.tag.clone(), p.pathway.clone()))
        .collect();
    for row in selection_rows(0, &history) {
        println!(
            "layer {} block {:>2} {:<6} ratio {:.2} of {} selections",
            row.layer, row.block, row.tag, row.ratio, row.selections
        );
    }

    // the report command rebuilds the summaries from the CSV files alone
    for row in report_dir(&dir)? {
        println!("{:<5} {:<8} acc {:.2}", row.method, row.tag, 100.0 * row.mean_acc);
    }
    let mut files: Vec<_> = std::fs::read_dir(&dir)
        ?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect();
    files.sort();
    println!("wrote {files:?}");
    Ok(())
}
