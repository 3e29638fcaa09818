//! Builds unlinkability and within-corpus trial lists from metadata alone and
//! checks the trial-count law for a large speaker set.

use std::time::Instant;

use anonbench::trials::{
    generate_unlinkability_trials, generate_within_trials, format_trials, Label,
    SpeakerUtterances, UnlinkabilityConfig,
};
use anonbench::Result;

fn speakers(n: usize, utts: usize) -> Result<SpeakerUtterances> {
    let mut s = SpeakerUtterances::new();
    for i in 0..n {
        for u in 0..utts {
            s.insert(&format!("id{i:05}"), &format!("id{i:05}-{u:03}"))?;
        }
    }
    Ok(s)
}

fn main() -> Result<()> {
    let small = speakers(3, 5)?;
    let list = generate_unlinkability_trials(&small, &small, &UnlinkabilityConfig::default(), "enroll", "test")?;
    print!("{}", format_trials(&list));
    println!(
        "{} target, {} nontarget",
        list.count(Label::Target),
        list.count(Label::Nontarget)
    );

    let within = generate_within_trials(&small, 2, 2, 0, "enroll")?;
    println!("within-corpus: {} trials, provenance {:?}", within.len(), within.provenance);

    let big = speakers(5994, 8)?;
    let start = Instant::now();
    let list = generate_unlinkability_trials(&big, &big, &UnlinkabilityConfig::default(), "enroll", "test")?;
    println!("5994 speakers -> {} trials in {:.2?}", list.len(), start.elapsed());
    Ok(())
}
