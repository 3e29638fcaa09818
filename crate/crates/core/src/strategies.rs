//! Anonymized corpora under the speaker-level and utterance-level strategies,
//! the embedding-space variation surrogate, and variation statistics.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{normalize, speaker_centroid, Corpus, Embedding};
use crate::error::{Error, Result};
use crate::ohnn::{ohnn_forward, OhnnParams};
use crate::rng::{hash_str, item_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    /// One anonymized embedding per speaker, shared by all of its utterances.
    SpeakerLevel,
    /// Every utterance embedding anonymized on its own.
    UtteranceLevel,
}

impl StrategyKind {
    pub fn tag(&self) -> &'static str {
        match self {
            StrategyKind::SpeakerLevel => "spk",
            StrategyKind::UtteranceLevel => "utt",
        }
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spk" | "speaker" => Ok(StrategyKind::SpeakerLevel),
            "utt" | "utterance" => Ok(StrategyKind::UtteranceLevel),
            other => Err(Error::InvalidConfig(format!(
                "unknown strategy `{other}` (expected spk or utt)"
            ))),
        }
    }
}

pub fn anonymize_corpus(corpus: &Corpus, params: &OhnnParams, kind: StrategyKind) -> Result<Corpus> {
    if corpus.dim() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            actual: corpus.dim(),
        });
    }
    let embeddings: Vec<Embedding> = match kind {
        StrategyKind::UtteranceLevel => corpus
            .utterances()
            .par_iter()
            .map(|r| ohnn_forward(params, &r.embedding))
            .collect::<Result<_>>()?,
        StrategyKind::SpeakerLevel => {
            let groups = corpus.speaker_utterance_indices();
            let mut out = vec![None; corpus.len()];
            for (spk, idx) in groups {
                let anon = ohnn_forward(params, &speaker_centroid(corpus, spk)?)?;
                for i in idx {
                    out[i] = Some(anon.clone());
                }
            }
            out.into_iter().map(|e| e.expect("every utterance has a speaker")).collect()
        }
    };
    corpus.with_embeddings(embeddings)
}

/// Perturbs each utterance embedding by per-axis Gaussian noise of std-dev
/// `sigma`, then renormalizes. Seeds are keyed by utterance id.
pub fn inject_variation(corpus: &Corpus, sigma: f64, seed: u64) -> Result<Corpus> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "sigma must be finite and nonnegative, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(corpus.clone());
    }
    let embeddings = corpus
        .utterances()
        .par_iter()
        .map(|r| {
            let mut rng = item_rng(seed, &[hash_str(&r.utt_id)]);
            let noisy: Vec<f64> = r
                .embedding
                .values()
                .iter()
                .map(|v| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    v + sigma * z
                })
                .collect();
            normalize(&noisy)
        })
        .collect::<Result<Vec<_>>>()?;
    corpus.with_embeddings(embeddings)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariationReport {
    /// Mean over speakers of the mean squared distance from each utterance
    /// to its speaker's mean embedding.
    pub intra_var: f64,
    /// Mean squared distance from speaker means to their (unnormalized) mean.
    pub inter_var: f64,
    /// `intra_var / inter_var`; `None` when `inter_var` is zero.
    pub ratio: Option<f64>,
}

/// Speaker means are unnormalized. Deviations are taken relative to each
/// speaker's first utterance so identical utterances give exactly zero.
pub fn variation_stats(corpus: &Corpus) -> Result<VariationReport> {
    let groups = corpus.speaker_utterance_indices();
    if groups.len() < 2 {
        return Err(Error::TooFewSpeakers {
            required: 2,
            actual: groups.len(),
        });
    }
    let dim = corpus.dim();
    let utts = corpus.utterances();
    let mut means = Vec::with_capacity(groups.len());
    let mut intra_sum = 0.0;
    for idx in groups.values() {
        let anchor = utts[idx[0]].embedding.values();
        let n = idx.len() as f64;
        let mut shift = vec![0.0; dim];
        for &i in idx {
            for (s, (v, a)) in shift.iter_mut().zip(utts[i].embedding.values().iter().zip(anchor)) {
                *s += v - a;
            }
        }
        shift.iter_mut().for_each(|s| *s /= n);
        let mut sq = 0.0;
        for &i in idx {
            for ((v, a), s) in utts[i].embedding.values().iter().zip(anchor).zip(&shift) {
                let d = (v - a) - s;
                sq += d * d;
            }
        }
        intra_sum += sq / n;
        means.push(anchor.iter().zip(&shift).map(|(a, s)| a + s).collect::<Vec<f64>>());
    }
    let k = means.len() as f64;
    let mut global = vec![0.0; dim];
    for m in &means {
        for (g, v) in global.iter_mut().zip(m) {
            *g += v;
        }
    }
    global.iter_mut().for_each(|g| *g /= k);
    let inter_var = means
        .iter()
        .map(|m| m.iter().zip(&global).map(|(v, g)| (v - g) * (v - g)).sum::<f64>())
        .sum::<f64>()
        / k;
    let intra_var = intra_sum / k;
    Ok(VariationReport {
        intra_var,
        inter_var,
        ratio: (inter_var > 0.0).then(|| intra_var / inter_var),
    })
}
