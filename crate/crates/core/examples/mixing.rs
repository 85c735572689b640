//! Cross-version mixing on the desk synthetic corpus: a version-2-only model
//! against a model that also sees version-1 notes, over several seeds.
//!
//! cargo run --release --example mixing -- [seeds] [control] [overrides.toml]

use std::path::Path;

use duallaat::config::{Preset, RunConfig};
use duallaat::pipeline::mixing_experiment;

fn main() -> duallaat::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n_seeds: u64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(3);
    let mut run = match args.iter().find(|a| a.ends_with(".toml")) {
        Some(path) => RunConfig::from_toml_file(Path::new(path), Some(Preset::Desk), None)?,
        None => RunConfig::preset(Preset::Desk, None),
    };
    if args.iter().any(|a| a == "control") {
        run.synth.overlap_fraction = 0.0;
        run.synth.disjoint_vocab = true;
    }
    let seeds: Vec<u64> = (0..n_seeds).collect();
    let report = mixing_experiment(&run, &seeds)?;
    print!("{}", report.to_text());
    for s in &report.seeds {
        println!("seed {} target-only:\n{}", s.seed, s.target_only.report.to_text());
        println!("seed {} mixed:\n{}", s.seed, s.mixed.report.to_text());
    }
    Ok(())
}
