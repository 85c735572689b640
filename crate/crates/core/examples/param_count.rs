//! Trainable parameters of the full-size configurations, and how they move with
//! vocabulary size. Embeddings dominate, so reference totals of 15M (CNN) and
//! 37M (BiGRU) hold only for a band of vocabulary sizes.
//!
//! cargo run --example param_count -- [vocab_size]

use duallaat::config::{Preset, RunConfig, BENCHMARK_VOCAB_SIZE};
use duallaat::encoders::EncoderKind;

fn main() {
    let vocab: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(BENCHMARK_VOCAB_SIZE);
    for (kind, reference) in [(EncoderKind::Cnn, 15.0e6), (EncoderKind::Rnn, 37.0e6)] {
        let mut run = RunConfig::preset(Preset::Paper, Some(kind));
        println!("{kind:?} (reference {:.0}M)", reference / 1e6);
        for heads in [1, run.model.heads] {
            run.model.heads = heads;
            let m = &run.model;
            let total = m.parameter_count(vocab) as f64;
            let fixed = m.non_embedding_parameters() as f64;
            let per_word = m.d_emb as f64;
            let lo = ((0.85 * reference - fixed) / per_word).max(0.0);
            let hi = (1.15 * reference - fixed) / per_word;
            println!(
                "  M={heads}: {:.2}M at V={vocab} ({:+.1}% of reference); {:.2}M outside embeddings; within ±15% for V in [{:.0}k, {:.0}k]",
                total / 1e6,
                100.0 * (total / reference - 1.0),
                fixed / 1e6,
                lo / 1e3,
                hi / 1e3
            );
        }
    }
}
