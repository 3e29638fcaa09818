//! Draws a small seeded corpus with two gender/accent groups, writes it to a
//! temporary directory, and reads it back.

use anonbench::corpus::{
    load_corpus, save_embeddings, save_metadata, simulate_corpus, Gender, GroupAssignment,
    SimulationConfig,
};
use anonbench::strategies::variation_stats;
use anonbench::Result;

fn main() -> Result<()> {
    let config = SimulationConfig {
        num_speakers: 10,
        utts_per_speaker: 4,
        dim: 16,
        group_spec: vec![
            GroupAssignment::new(Gender::Female, "India", 0.4),
            GroupAssignment::new(Gender::Male, "USA", 0.6),
        ],
        seed: 7,
        ..SimulationConfig::default()
    };
    let corpus = simulate_corpus(&config)?;
    for (id, meta) in corpus.speakers() {
        println!("{id}\t{}\t{}", meta.gender, meta.accent);
    }

    let dir = std::env::temp_dir().join("anonbench-simulate-example");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let (emb, tsv) = (dir.join("corpus.emb"), dir.join("corpus.tsv"));
    save_embeddings(&corpus, &emb)?;
    save_metadata(&corpus.metadata(), &tsv)?;
    let reloaded = load_corpus(&emb, &tsv)?;
    println!("{} utterances round-tripped to {}", reloaded.len(), dir.display());

    let stats = variation_stats(&reloaded)?;
    println!("intra {:.4}  inter {:.4}", stats.intra_var, stats.inter_var);
    Ok(())
}
