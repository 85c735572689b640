//! Generates the desk synthetic corpus and prints its shape: notes per version and
//! split, codes per version, the rare/frequent split of version-2 codes and how
//! many concepts both versions can code.
//!
//! cargo run --release --example generate -- [out_dir] [seed]

use std::path::PathBuf;

use duallaat::config::RunConfig;
use duallaat::data::{compute_strata, write_corpus, write_registry, Split, Version};
use duallaat::synthgen::generate;

fn main() -> duallaat::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let run = RunConfig::default().with_seed(seed);
    let corpus = generate(&run.synth)?;

    for v in [Version::V9, Version::V10] {
        let docs = corpus.version_documents(&v);
        let count = |s| docs.iter().filter(|d| d.split == s).count();
        let strata = compute_strata(&docs, run.rare_threshold)?;
        let mean_codes = docs.iter().map(|d| d.codes.len()).sum::<usize>() as f64 / docs.len() as f64;
        let mean_tokens = docs.iter().map(|d| d.tokens.len()).sum::<usize>() as f64 / docs.len() as f64;
        println!(
            "{v}: {} notes (train {}, val {}, test {}), {} codes in notes, {} rare, {:.1} codes and {:.0} tokens per note",
            docs.len(),
            count(Split::Train),
            count(Split::Val),
            count(Split::Test),
            strata.full().len(),
            strata.rare.len(),
            mean_codes,
            mean_tokens,
        );
    }
    let shared = corpus.concepts.iter().filter(|c| c.v1_code.is_some() && c.v2_code.is_some()).count();
    println!("{} concepts, {shared} codable in both versions", corpus.concepts.len());
    if let Some(c) = corpus.concepts.iter().find(|c| c.v1_code.is_some() && c.v2_code.is_some()) {
        let (a, b) = (c.v1_code.as_ref().unwrap(), c.v2_code.as_ref().unwrap());
        println!("e.g. signal words {:?}", c.signal_tokens);
        println!("     V9  {} {:?}", a.code_id, a.description);
        println!("     V10 {} {:?}", b.code_id, b.description);
    }
    let d = &corpus.documents[0];
    println!("first note {} ({}): {} ...", d.doc_id, d.version, d.tokens[..12.min(d.tokens.len())].join(" "));

    if let Some(dir) = args.first() {
        let dir = PathBuf::from(dir);
        std::fs::create_dir_all(&dir).expect("create output directory");
        write_corpus(&dir.join("corpus.jsonl"), &corpus.documents)?;
        write_registry(&dir.join("codes.tsv"), &corpus.registry)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}
