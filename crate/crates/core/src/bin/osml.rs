use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use osml::autodiff::gradcheck::run_suite;
use osml::harness::{efficiency_sweep, report_dir, run_experiment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "osml", version, about = "Online structured meta-learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (method, seed) cell of a config and write its reports.
    Run { config: PathBuf },
    /// Rerun a config at several per-class support sizes.
    Sweep {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        sizes: Vec<usize>,
    },
    /// Regenerate summaries and selection charts from a results directory.
    Report { dir: PathBuf },
    /// Check every autodiff operation against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
}

fn fmt_ci(ci: Option<f64>) -> String {
    ci.map_or_else(|| "-".into(), |c| format!("{:.2}", 100.0 * c))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> osml::Result<bool> {
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let (out, dir) = run_experiment(&cfg)?;
            for row in osml::harness::metrics::summary_rows(&out.rows).unwrap_or_default() {
                if row.tag == osml::harness::metrics::OVERALL {
                    println!(
                        "{:<11} acc={:.2} ci95={} ar={}",
                        row.method,
                        100.0 * row.mean_acc,
                        fmt_ci(row.ci95),
                        row.ar.map_or_else(|| "-".into(), |a| format!("{a:.3}"))
                    );
                }
            }
            for (m, s, e) in out.failures() {
                eprintln!("cell {m} seed={s} failed: {e}");
            }
            println!("results in {}", dir.display());
            Ok(out.failures().is_empty())
        }
        Command::Sweep { config, sizes } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let out = efficiency_sweep(&cfg, &sizes)?;
            for p in &out.points {
                println!(
                    "support={:<4} {:<11} acc={:.2} ci95={}",
                    p.size,
                    p.method,
                    100.0 * p.mean_acc,
                    fmt_ci(p.ci95)
                );
            }
            for (size, cell) in &out.failures {
                if let Err(e) = &cell.outcome {
                    eprintln!("support={size} cell {} seed={} failed: {e}", cell.method, cell.seed);
                }
            }
            println!("results in {}", out.dir.display());
            Ok(out.failures.is_empty())
        }
        Command::Report { dir } => {
            for row in report_dir(&dir)? {
                println!(
                    "{:<11} {:<12} acc={:.2} ci95={}",
                    row.method,
                    row.tag,
                    100.0 * row.mean_acc,
                    fmt_ci(row.ci95)
                );
            }
            Ok(true)
        }
        Command::Gradcheck { seed, instances } => {
            let start = Instant::now();
            let reports = run_suite(seed, instances)?;
            let mut ok = true;
            for r in &reports {
                ok &= r.passed();
                println!(
                    "{:<4} {:<24} max_rel_err={:.2e} tol={:.0e}",
                    if r.passed() { "ok" } else { "FAIL" },
                    r.name,
                    r.max_rel_err,
                    r.tolerance
                );
            }
            println!("{} checks in {:.1}s", reports.len(), start.elapsed().as_secs_f64());
            Ok(ok)
        }
    }
}
