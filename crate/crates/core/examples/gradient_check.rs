//! Central finite differences against the analytic gradient of a micro model,
//! for both encoders and for one and two attention heads.
//!
//! cargo run --release --example gradient_check

use duallaat::encoders::{EncoderConfig, EncoderKind};
use duallaat::gradcheck::check_gradients;
use duallaat::model::{DualLaat, ModelConfig};
use duallaat::text::EmbeddingTable;
use ndarray::array;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> duallaat::Result<()> {
    let notes: Vec<&[u32]> = vec![&[2, 3, 4, 5, 6], &[7, 8, 1]];
    let codes: Vec<&[u32]> = vec![&[2, 9, 10], &[11, 3], &[4], &[5, 6, 7]];
    let targets = array![[true, false, false, true], [false, true, true, false]];
    for kind in [EncoderKind::Cnn, EncoderKind::Rnn] {
        for heads in [1, 2] {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let encoder = match kind {
                EncoderKind::Cnn => EncoderConfig { cnn_filters: 8, cnn_width: 3, dropout: 0.0, ..EncoderConfig::cnn() },
                EncoderKind::Rnn => EncoderConfig { rnn_hidden: 8, dropout: 0.0, ..EncoderConfig::rnn() },
            };
            let config = ModelConfig { encoder, d_emb: 8, heads, ..ModelConfig::default() };
            let model = DualLaat::new(config, EmbeddingTable::random(12, 8, &mut rng), &mut rng)?;
            let report = check_gradients(&model, &notes, &codes, &targets, 1e-3, 1e-8)?;
            println!(
                "{kind:?} M={heads}: {} entries, max relative error {:.2e} (at {})",
                report.checked, report.max_relative_error, report.worst_parameter
            );
        }
    }
    Ok(())
}
