//! Speaker anonymization with orthogonal Householder networks, evaluated at
//! embedding level for privacy (unlinkability EER), utility surrogates
//! (variation statistics, within-corpus EER) and fairness (FDR).
//!
//! The crate is organized as one module per pipeline stage:
//!
//! - [`corpus`]: embeddings, metadata, the seeded simulator, `EMB1` / TSV files
//! - [`ohnn`]: Householder-chain anonymizer, losses, exact gradients, training
//! - [`strategies`]: speaker-level vs. utterance-level anonymization, variation
//!   injection, variation statistics
//! - [`trials`]: unlinkability and within-corpus trial protocols
//! - [`metrics`]: cosine scoring, FAR/FRR, EER, FDR, histograms, reports
//! - [`cli`]: the `anonbench` command line
//!
//! ## Examples
//!
//! Each capability has a runnable example:
//!
//! ```text
//! cargo run --release -p anonbench --example simulate_corpus
//! cargo run --release -p anonbench --example householder_rotation
//! cargo run --release -p anonbench --example train_anonymizer
//! cargo run --release -p anonbench --example embedding_strategies
//! cargo run --release -p anonbench --example trial_protocol
//! cargo run --release -p anonbench --example unlinkability
//! cargo run --release -p anonbench --example fairness
//! cargo run --release -p anonbench --example cli_pipeline
//! ```

pub mod cli;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod ohnn;
mod rng;
pub mod strategies;
pub mod trials;

pub use corpus::{normalize, simulate_corpus, speaker_centroid, Corpus, Embedding, SimulationConfig};
pub use error::{Error, Result};
pub use metrics::{compute_eer, compute_fdr, cosine_score, far_frr_at, score_trials, ScoreSet};
pub use ohnn::{init_ohnn, ohnn_forward, train_ohnn, OhnnParams, TrainConfig};
pub use rng::{derive_seed, hash_str};
pub use strategies::{anonymize_corpus, inject_variation, variation_stats, StrategyKind, VariationReport};
pub use trials::{generate_unlinkability_trials, generate_within_trials, Label, Trial, TrialList};
