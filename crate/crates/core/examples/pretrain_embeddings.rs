//! Builds the vocabulary from training notes and code descriptions, pretrains
//! skip-gram embeddings, and shows that signal words of one concept end up close.
//!
//! cargo run --release --example pretrain_embeddings -- [embeddings.txt]

use std::path::Path;

use duallaat::config::RunConfig;
use duallaat::synthgen::generate;
use duallaat::text::{build_vocab, pretrain_embeddings, EmbeddingTable};
use ndarray::ArrayView1;

fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt()).max(1e-12)
}

fn main() -> duallaat::Result<()> {
    let run = RunConfig::default();
    let corpus = generate(&run.synth)?;
    let vocab = build_vocab(&corpus.documents, &corpus.registry, run.min_count);
    println!("vocabulary: {} entries (hash {})", vocab.len(), &vocab.hash()[..12]);

    let outcome = pretrain_embeddings(&corpus.documents, &vocab, &run.pretrain)?;
    for (e, loss) in outcome.epoch_losses.iter().enumerate() {
        println!("epoch {}: mean loss {loss:.4}", e + 1);
    }

    let m = &outcome.table.matrix;
    let c = &corpus.concepts[0];
    let (a, b) = (vocab.id(&c.signal_tokens[0]) as usize, vocab.id(&c.signal_tokens[1]) as usize);
    let same = cosine(m.row(a), m.row(b));
    let other = corpus.concepts[1..]
        .iter()
        .map(|o| cosine(m.row(a), m.row(vocab.id(&o.signal_tokens[0]) as usize)))
        .sum::<f64>()
        / (corpus.concepts.len() - 1) as f64;
    println!(
        "cosine({}, {}) = {same:.3}; mean cosine to other concepts' signal words = {other:.3}",
        c.signal_tokens[0], c.signal_tokens[1]
    );

    if let Some(path) = std::env::args().nth(1) {
        outcome.table.write_text(Path::new(&path), &vocab)?;
        let (back, table) = EmbeddingTable::read_text(Path::new(&path))?;
        assert_eq!(back.hash(), vocab.hash());
        println!("wrote {} ({} x {})", path, table.vocab_size(), table.dim());
    }
    Ok(())
}
