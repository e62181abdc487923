//! Parses an experiment config, applies it, and prints the fully resolved
//! settings that a run would echo into `config.resolved`.
//!
//! Usage: `cargo run --example config -- [path]`; without a path a small
//! inline config is used.

use osml::harness::ExperimentConfig;

const INLINE: &str = "\
# a two-seed heterogeneous run
methods = osml, ftml, nt
seeds = 0, 1
stream.modes = 3
osml.n_search = 5
ftml.meta_steps = 3
";

fn main() -> osml::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => ExperimentConfig::from_file(path.as_ref())?,
        None => ExperimentConfig::parse_str(INLINE)?,
    };
    print!("{}", cfg.resolved());
    match ExperimentConfig::parse_str("osml.alpha = -1") {
        Err(e) => println!("# rejected: {e}"),
        Ok(_) => println!("# unexpectedly accepted a negative rate"),
    }
    Ok(())
}
