//! Training is resumable bit for bit: two epochs, a checkpoint round trip and two
//! more epochs give the same parameters as four uninterrupted epochs.
//!
//! cargo run --release --example resume

use duallaat::checkpoint::Checkpoint;
use duallaat::config::RunConfig;
use duallaat::model::DualLaat;
use duallaat::pipeline::prepare_text;
use duallaat::synthgen::generate;
use duallaat::trainer::{TrainState, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> duallaat::Result<()> {
    let mut run = RunConfig::default();
    run.synth.n_docs_v1 = 150;
    run.synth.n_docs_v2 = 100;
    run.train.epochs = 4;
    let corpus = generate(&run.synth)?;
    let (vocab, table) = prepare_text(&corpus.documents, &corpus.registry, &run)?;
    let fresh = || -> duallaat::Result<TrainState> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        Ok(TrainState::new(DualLaat::new(run.model.clone(), table.clone(), &mut rng)?, run.train.seed))
    };

    let mut straight = Trainer::new(&corpus.documents, &corpus.registry, &vocab, run.train.clone(), fresh()?)?;
    straight.fit(|_, _| Ok(()))?;

    let mut first = Trainer::new(&corpus.documents, &corpus.registry, &vocab, run.train.clone(), fresh()?)?;
    first.fit_until(2, |_, _| Ok(()))?;
    let dir = std::env::temp_dir().join(format!("duallaat-resume-{}", std::process::id()));
    std::fs::create_dir_all(&dir).expect("temp dir");
    let path = dir.join("half.ckpt");
    Checkpoint::new(run.train.clone(), run.to_json(), vocab.clone(), first.state).write(&path)?;
    let back = Checkpoint::read(&path)?;
    let mut second = Trainer::new(&corpus.documents, &corpus.registry, &vocab, back.train_config, back.state)?;
    second.fit(|_, _| Ok(()))?;
    std::fs::remove_dir_all(&dir).ok();

    let same = straight.state.model.params == second.state.model.params;
    println!("4 epochs vs 2 + resume + 2: parameters identical = {same}");
    println!(
        "final losses {:.6} and {:.6}",
        straight.state.history.last().unwrap().loss,
        second.state.history.last().unwrap().loss
    );
    assert!(same);
    Ok(())
}
