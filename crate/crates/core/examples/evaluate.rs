//! Stratified evaluation of a checkpoint written by the `train` example. The
//! corpus is regenerated from the configuration embedded in the checkpoint.
//!
//! cargo run --release --example train -- desk.ckpt
//! cargo run --release --example evaluate -- desk.ckpt

use std::path::Path;

use duallaat::checkpoint::Checkpoint;
use duallaat::config::RunConfig;
use duallaat::data::{StratumKind, Version};
use duallaat::pipeline::{evaluate_version, ThresholdMode};
use duallaat::synthgen::generate;

fn main() -> duallaat::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "desk.ckpt".into());
    let ckpt = Checkpoint::read(Path::new(&path))?;
    let run: RunConfig = serde_json::from_value(ckpt.run_config.clone()).expect("embedded run config");
    let corpus = generate(&run.synth)?;
    let model = ckpt.inference_model();
    let kinds = [StratumKind::Frequent, StratumKind::Rare, StratumKind::Full];
    for mode in [ThresholdMode::Tuned, ThresholdMode::Fixed(0.5)] {
        println!("threshold: {mode:?}");
        for v in [Version::V9, Version::V10] {
            let report = evaluate_version(
                &model,
                &ckpt.vocab,
                &corpus.documents,
                &corpus.registry,
                &v,
                &kinds,
                mode,
                run.rare_threshold,
                ckpt.train_config.label_space_size,
            )?;
            print!("{}", report.to_text());
        }
    }
    Ok(())
}
