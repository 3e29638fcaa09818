//! Privacy evaluation: unlinkability EER of authentic speakers against
//! untrained, trained, and perfectly random "anonymizations".

use anonbench::corpus::{normalize, simulate_corpus, SimulationConfig};
use anonbench::metrics::{compute_eer, score_histogram, score_trials};
use anonbench::ohnn::{init_ohnn, train_ohnn, TrainConfig};
use anonbench::strategies::{anonymize_corpus, StrategyKind};
use anonbench::trials::{generate_unlinkability_trials, SpeakerUtterances, UnlinkabilityConfig};
use anonbench::{Corpus, Result};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

fn report(name: &str, enroll: &Corpus, test: &Corpus) -> Result<()> {
    let trials = generate_unlinkability_trials(
        &SpeakerUtterances::from(enroll),
        &SpeakerUtterances::from(test),
        &UnlinkabilityConfig::default(),
        "authentic",
        name,
    )?;
    let scores = score_trials(&trials, enroll, test)?;
    let eer = compute_eer(&scores)?;
    let hist = score_histogram(&scores, 8, -1.0, 1.0)?;
    println!("{name:<14} EER {:6.2}%  tau {:+.4}", 100.0 * eer.eer, eer.tau);
    println!("{:<14} target {:?}  nontarget {:?}", "", hist.target, hist.nontarget);
    Ok(())
}

fn main() -> Result<()> {
    let corpus = simulate_corpus(&SimulationConfig::default())?;
    report("authentic", &corpus, &corpus)?;

    let init = init_ohnn(corpus.dim(), corpus.dim(), 200, 50)?;
    report("untrained-utt", &corpus, &anonymize_corpus(&corpus, &init, StrategyKind::UtteranceLevel)?)?;

    let trained = train_ohnn(&init, &corpus, &TrainConfig::default())?.params;
    report("trained-utt", &corpus, &anonymize_corpus(&corpus, &trained, StrategyKind::UtteranceLevel)?)?;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let random = corpus
        .utterances()
        .iter()
        .map(|_| {
            let v: Vec<f64> = (0..corpus.dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
            normalize(&v)
        })
        .collect::<Result<Vec<_>>>()?;
    report("random", &corpus, &corpus.with_embeddings(random)?)?;
    Ok(())
}
