//! Fairness evaluation: FDR across gender groups, first on the worked
//! FAR/FRR-gap example, then on a simulated two-group corpus.

use std::collections::BTreeMap;

use anonbench::corpus::{simulate_corpus, Gender, GroupAssignment, SimulationConfig};
use anonbench::metrics::{
    compute_fdr, fdr_from_rates, pooled_eer_threshold, score_trials, FdrInput, GroupRates,
    ScoreSet, DEFAULT_FDR_ALPHA,
};
use anonbench::trials::{generate_within_trials, SpeakerUtterances};
use anonbench::Result;

fn main() -> Result<()> {
    let rates = BTreeMap::from([
        ("A".to_string(), GroupRates { far: 0.10, frr: 0.20 }),
        ("B".to_string(), GroupRates { far: 0.20, frr: 0.40 }),
    ]);
    let (fdr, far_gap, frr_gap) = fdr_from_rates(&rates, DEFAULT_FDR_ALPHA)?;
    println!("worked example: FAR gap {far_gap:.2}, FRR gap {frr_gap:.2}, FDR {fdr:.3}");

    let corpus = simulate_corpus(&SimulationConfig {
        group_spec: vec![
            GroupAssignment::new(Gender::Female, "unknown", 0.5),
            GroupAssignment::new(Gender::Male, "unknown", 0.5),
        ],
        ..SimulationConfig::default()
    })?;
    let trials = generate_within_trials(&SpeakerUtterances::from(&corpus), 10, 100, 3, "sim")?;
    let scores = score_trials(&trials, &corpus, &corpus)?;

    let mut buckets: BTreeMap<String, Vec<_>> = BTreeMap::new();
    for e in scores.entries() {
        let spk = &corpus.get(&e.trial.enroll_utt).expect("scored utterance").speaker_id;
        buckets.entry(corpus.speakers()[spk].gender.to_string()).or_default().push(e.clone());
    }
    let groups = buckets
        .into_iter()
        .map(|(g, v)| Ok((g, ScoreSet::new(v)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let tau = pooled_eer_threshold(&groups)?;
    let result = compute_fdr(&FdrInput { groups, alpha: DEFAULT_FDR_ALPHA, tau })?;
    for (g, r) in &result.groups {
        println!("{g:<8} FAR {:.4}  FRR {:.4}", r.far, r.frr);
    }
    println!("FDR at tau {:.4}: {:.4}", result.tau, result.fdr);
    Ok(())
}
