//! One model, several code systems: ranks codes of version 1, version 2 and an
//! unseen registry ("V3", version-2 codes with reworded descriptions) for the
//! same test notes. Nothing in the model is tied to a code set.
//!
//! cargo run --release --example predict_versions

use duallaat::checkpoint::Checkpoint;
use duallaat::config::RunConfig;
use duallaat::data::{CodeKey, Document, Split, Version};
use duallaat::evaluation::predict_documents;
use duallaat::metrics::rank_columns;
use duallaat::pipeline::{prepare_text, train_run};
use duallaat::synthgen::generate;

fn main() -> duallaat::Result<()> {
    let mut run = RunConfig::default();
    run.synth.n_docs_v1 = 400;
    run.synth.n_docs_v2 = 200;
    run.train.epochs = 8;
    let corpus = generate(&run.synth)?;
    let (vocab, table) = prepare_text(&corpus.documents, &corpus.registry, &run)?;
    let ckpt: Checkpoint = train_run(&run, &corpus.documents, &corpus.registry, &vocab, table, |_, _| Ok(()))?;
    let model = ckpt.inference_model();

    let v3 = Version::Other("V3".into());
    let reworded = corpus.reworded_registry(&Version::V10, v3.clone(), 0.5, 1)?;
    let note: &Document = corpus
        .documents
        .iter()
        .find(|d| d.version == Version::V10 && d.split == Split::Test)
        .expect("a version-2 test note");
    println!("note {} gold V10 codes: {:?}", note.doc_id, note.codes);

    for (version, registry) in [(Version::V9, &corpus.registry), (Version::V10, &corpus.registry), (v3, &reworded)] {
        let codes: Vec<CodeKey> = registry.codes_of(&version);
        let probs = predict_documents(&model, &vocab, registry, &[note], &codes, 256)?;
        let scores = probs.row(0).to_vec();
        println!("top 5 {version} codes:");
        for j in rank_columns(&scores, &codes).into_iter().take(5) {
            let entry = registry.get(&codes[j]).expect("registered");
            let hit = if note.codes.contains(&entry.code_id) { "*" } else { " " };
            println!("  {hit} {:<7} {:.3}  {}", entry.code_id, scores[j], entry.description);
        }
    }
    println!("(* marks a gold version-2 code id; V3 reuses version-2 ids)");
    Ok(())
}
