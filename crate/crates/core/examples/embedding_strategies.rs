//! Compares speaker-level and utterance-level anonymization by their
//! intra/inter-speaker variation, then restores variation to the
//! speaker-level corpus with the embedding-space injection surrogate.

use anonbench::corpus::{simulate_corpus, SimulationConfig};
use anonbench::ohnn::{init_ohnn, train_ohnn, TrainConfig};
use anonbench::strategies::{anonymize_corpus, inject_variation, variation_stats, StrategyKind};
use anonbench::{Corpus, Result};

fn show(name: &str, c: &Corpus) -> Result<()> {
    let r = variation_stats(c)?;
    let ratio = r.ratio.map_or("undefined".to_string(), |x| format!("{x:.4}"));
    println!("{name:<16} intra {:.5}  inter {:.5}  ratio {ratio}", r.intra_var, r.inter_var);
    Ok(())
}

fn main() -> Result<()> {
    let corpus = simulate_corpus(&SimulationConfig {
        num_speakers: 50,
        utts_per_speaker: 10,
        ..SimulationConfig::default()
    })?;
    let init = init_ohnn(corpus.dim(), corpus.dim(), 50, 50)?;
    let params = train_ohnn(&init, &corpus, &TrainConfig { epochs: 50, ..TrainConfig::default() })?.params;

    show("authentic", &corpus)?;
    let utt = anonymize_corpus(&corpus, &params, StrategyKind::UtteranceLevel)?;
    show("anonymized-utt", &utt)?;
    let spk = anonymize_corpus(&corpus, &params, StrategyKind::SpeakerLevel)?;
    show("anonymized-spk", &spk)?;
    show("spk + sigma 0.1", &inject_variation(&spk, 0.1, 1)?)?;
    Ok(())
}
