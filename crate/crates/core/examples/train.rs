//! Trains the desk model on both versions of a synthetic corpus, prints the
//! per-epoch log and writes a checkpoint.
//!
//! cargo run --release --example train -- [model.ckpt] [epochs]

use std::path::PathBuf;

use duallaat::config::RunConfig;
use duallaat::pipeline::{prepare_text, train_run};
use duallaat::synthgen::generate;

fn main() -> duallaat::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from(args.first().map(String::as_str).unwrap_or("desk.ckpt"));
    let mut run = RunConfig::default();
    run.synth.n_docs_v1 = 400;
    run.synth.n_docs_v2 = 200;
    run.train.epochs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10);

    let corpus = generate(&run.synth)?;
    let (vocab, table) = prepare_text(&corpus.documents, &corpus.registry, &run)?;
    println!(
        "{} parameters, vocabulary {}",
        run.model.parameter_count(vocab.len()),
        vocab.len()
    );
    let ckpt = train_run(&run, &corpus.documents, &corpus.registry, &vocab, table, |_, r| {
        let val = r.val.as_ref().map(|v| format!("val micro-F1 {:.3} @ {:.3}", v.micro_f1, v.threshold));
        println!(
            "epoch {:>2}  step {:>4}  loss {:.4}  lr {:.2e}  {}  {:.1}s",
            r.epoch,
            r.step,
            r.loss,
            r.lr,
            val.unwrap_or_default(),
            r.wall_time_s
        );
        Ok(())
    })?;
    ckpt.write(&out)?;
    let best = ckpt.state.best.as_ref().map(|(b, _)| b.epoch);
    println!("wrote {} (best epoch {best:?}, threshold {:?})", out.display(), ckpt.threshold());
    Ok(())
}
