//! Trains the Householder anonymizer on a simulated corpus and reports how
//! linkable the anonymized utterances remain to their authentic speakers.
//!
//! Usage: `train_anonymizer [intra_sigma] [epochs]`

use std::time::Instant;

use anonbench::corpus::{simulate_corpus, SimulationConfig, DEFAULT_INTRA_SIGMA};
use anonbench::metrics::{compute_eer, score_trials};
use anonbench::ohnn::{init_ohnn, mean_abs_cross_cosine, training_set, train_ohnn, TrainConfig};
use anonbench::strategies::{anonymize_corpus, StrategyKind};
use anonbench::trials::{generate_unlinkability_trials, SpeakerUtterances, UnlinkabilityConfig};
use anonbench::{Corpus, Result};

fn unlinkability_eer(enroll: &Corpus, test: &Corpus) -> Result<f64> {
    let trials = generate_unlinkability_trials(
        &SpeakerUtterances::from(enroll),
        &SpeakerUtterances::from(test),
        &UnlinkabilityConfig::default(),
        "authentic",
        "test",
    )?;
    Ok(compute_eer(&score_trials(&trials, enroll, test)?)?.eer)
}

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let sigma = args.next().map_or(DEFAULT_INTRA_SIGMA, |s| s.parse().expect("intra_sigma"));
    let epochs = args.next().map_or(300, |s| s.parse().expect("epochs"));

    let corpus = simulate_corpus(&SimulationConfig {
        intra_sigma: sigma,
        ..SimulationConfig::default()
    })?;
    println!("authentic vs authentic EER: {:.4}", unlinkability_eer(&corpus, &corpus)?);

    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let n = corpus.speaker_utterance_indices().len();
    let init = init_ohnn(corpus.dim(), corpus.dim(), n, 50)?;
    let originals: Vec<_> = training_set(&corpus)?.into_iter().map(|(e, _)| e).collect();
    println!("mean |cos| before training: {:.4}", mean_abs_cross_cosine(&init, &originals));

    let start = Instant::now();
    let out = train_ohnn(&init, &corpus, &cfg)?;
    let hist = &out.loss_history;
    println!(
        "trained {epochs} epochs in {:.1?}; loss {:.4} -> {:.4}",
        start.elapsed(),
        hist.first().copied().unwrap_or(f64::NAN),
        hist.last().copied().unwrap_or(f64::NAN)
    );
    println!("mean |cos| after training: {:.4}", mean_abs_cross_cosine(&out.params, &originals));

    for kind in [StrategyKind::UtteranceLevel, StrategyKind::SpeakerLevel] {
        let anon = anonymize_corpus(&corpus, &out.params, kind)?;
        println!("authentic vs anonymized-{} EER: {:.4}", kind.tag(), unlinkability_eer(&corpus, &anon)?);
    }
    Ok(())
}
