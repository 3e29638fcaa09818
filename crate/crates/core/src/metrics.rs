//! Cosine scoring and evaluation: FAR/FRR, EER, the fairness discrepancy
//! rate, and score histograms.
//!
//! Decisions accept on ties: a trial is accepted when `score >= tau`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{dot, Corpus, Embedding};
use crate::error::{Error, Result};
use crate::trials::{Label, Trial, TrialList};

pub const SCORE_HEADER: &str = "enroll_utt\ttest_utt\tlabel\tscore";

/// Weight on the FAR gap in the fairness discrepancy rate.
pub const DEFAULT_FDR_ALPHA: f64 = 0.95;

pub fn cosine_score(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let denom = a.norm() * b.norm();
    Ok((dot(a.values(), b.values()) / denom).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTrial {
    pub trial: Trial,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreSet {
    entries: Vec<ScoredTrial>,
    num_target: usize,
    num_nontarget: usize,
}

impl ScoreSet {
    pub fn new(entries: Vec<ScoredTrial>) -> Result<Self> {
        if let Some(index) = entries.iter().position(|e| !e.score.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        let num_target = entries.iter().filter(|e| e.trial.label == Label::Target).count();
        Ok(ScoreSet {
            num_nontarget: entries.len() - num_target,
            num_target,
            entries,
        })
    }

    /// Builds a set from bare scores, with placeholder utterance ids.
    pub fn from_scores(targets: &[f64], nontargets: &[f64]) -> Result<Self> {
        let mk = |prefix: &str, i: usize, s: f64, label: Label| ScoredTrial {
            trial: Trial {
                enroll_utt: format!("{prefix}{i}e"),
                test_utt: format!("{prefix}{i}t"),
                label,
            },
            score: s,
        };
        let entries = targets
            .iter()
            .enumerate()
            .map(|(i, &s)| mk("tgt", i, s, Label::Target))
            .chain(
                nontargets
                    .iter()
                    .enumerate()
                    .map(|(i, &s)| mk("non", i, s, Label::Nontarget)),
            )
            .collect();
        ScoreSet::new(entries)
    }

    pub fn entries(&self) -> &[ScoredTrial] {
        &self.entries
    }

    pub fn num_target(&self) -> usize {
        self.num_target
    }

    pub fn num_nontarget(&self) -> usize {
        self.num_nontarget
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scores(&self, label: Label) -> impl Iterator<Item = f64> + '_ {
        self.entries
            .iter()
            .filter(move |e| e.trial.label == label)
            .map(|e| e.score)
    }

    fn require_both_classes(&self) -> Result<()> {
        if self.num_target == 0 {
            return Err(Error::EmptyClass("target"));
        }
        if self.num_nontarget == 0 {
            return Err(Error::EmptyClass("nontarget"));
        }
        Ok(())
    }
}

/// Scores every trial (enrollment side from `enroll`, test side from `test`).
pub fn score_trials(trials: &TrialList, enroll: &Corpus, test: &Corpus) -> Result<ScoreSet> {
    let entries = trials
        .trials
        .par_iter()
        .map(|t| {
            let a = enroll
                .get(&t.enroll_utt)
                .ok_or_else(|| Error::UnknownUtterance(t.enroll_utt.clone()))?;
            let b = test
                .get(&t.test_utt)
                .ok_or_else(|| Error::UnknownUtterance(t.test_utt.clone()))?;
            Ok(ScoredTrial {
                trial: t.clone(),
                score: cosine_score(&a.embedding, &b.embedding)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ScoreSet::new(entries)
}

/// `(far, frr)`: fraction of nontargets with `score >= tau`, fraction of
/// targets with `score < tau`.
pub fn far_frr_at(scores: &ScoreSet, tau: f64) -> Result<(f64, f64)> {
    scores.require_both_classes()?;
    let false_accepts = scores.scores(Label::Nontarget).filter(|&s| s >= tau).count();
    let false_rejects = scores.scores(Label::Target).filter(|&s| s < tau).count();
    Ok((
        false_accepts as f64 / scores.num_nontarget as f64,
        false_rejects as f64 / scores.num_target as f64,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerResult {
    pub eer: f64,
    /// Threshold at the interpolated crossing.
    pub tau: f64,
}

/// Crossing of two operating points `(threshold, far, frr)` with
/// `far - frr` going from positive to non-positive.
fn interpolate_crossing(prev: (f64, f64, f64), cur: (f64, f64, f64)) -> EerResult {
    let d_prev = prev.1 - prev.2;
    let d_cur = cur.1 - cur.2;
    let lambda = d_prev / (d_prev - d_cur);
    let far = prev.1 + lambda * (cur.1 - prev.1);
    let frr = prev.2 + lambda * (cur.2 - prev.2);
    let tau = if cur.0.is_finite() {
        prev.0 + lambda * (cur.0 - prev.0)
    } else {
        prev.0
    };
    EerResult {
        eer: 0.5 * (far + frr),
        tau,
    }
}

/// Equal error rate by linear interpolation between adjacent operating
/// points of the FAR/FRR step curves.
///
/// Operating points sit at each unique score (accept-all at the lowest) and
/// at `+inf` (reject-all). `far - frr` strictly decreases from 1 to -1 along
/// them, so there is exactly one crossing.
pub fn compute_eer(scores: &ScoreSet) -> Result<EerResult> {
    scores.require_both_classes()?;
    let mut sorted: Vec<(f64, bool)> = scores
        .entries
        .iter()
        .map(|e| (e.score, e.trial.label == Label::Target))
        .collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    let n_t = scores.num_target as f64;
    let n_n = scores.num_nontarget as f64;
    let mut false_accepts = scores.num_nontarget;
    let mut false_rejects = 0usize;
    let mut prev = (sorted[0].0, 1.0, 0.0);
    let mut i = 0;
    while i < sorted.len() {
        let value = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == value {
            if sorted[i].1 {
                false_rejects += 1;
            } else {
                false_accepts -= 1;
            }
            i += 1;
        }
        let threshold = if i < sorted.len() { sorted[i].0 } else { f64::INFINITY };
        let cur = (threshold, false_accepts as f64 / n_n, false_rejects as f64 / n_t);
        if cur.1 - cur.2 <= 0.0 {
            return Ok(interpolate_crossing(prev, cur));
        }
        prev = cur;
    }
    unreachable!("reject-all point always has far - frr = -1")
}

// ---------------------------------------------------------------------------
// Fairness discrepancy rate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupRates {
    pub far: f64,
    pub frr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdrInput {
    pub groups: BTreeMap<String, ScoreSet>,
    pub alpha: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdrResult {
    pub fdr: f64,
    pub alpha: f64,
    pub tau: f64,
    pub max_far_gap: f64,
    pub max_frr_gap: f64,
    pub groups: BTreeMap<String, GroupRates>,
}

fn max_pairwise_gap(values: &[f64]) -> f64 {
    let mut gap = 0.0_f64;
    for (i, a) in values.iter().enumerate() {
        for b in &values[i + 1..] {
            gap = gap.max((a - b).abs());
        }
    }
    gap
}

/// `1 - (alpha · max|FAR_i - FAR_j| + (1 - alpha) · max|FRR_i - FRR_j|)`
/// over all group pairs.
pub fn fdr_from_rates(rates: &BTreeMap<String, GroupRates>, alpha: f64) -> Result<(f64, f64, f64)> {
    if rates.len() < 2 {
        return Err(Error::TooFewGroups(rates.len()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!("alpha must be in [0, 1], got {alpha}")));
    }
    let fars: Vec<f64> = rates.values().map(|r| r.far).collect();
    let frrs: Vec<f64> = rates.values().map(|r| r.frr).collect();
    let far_gap = max_pairwise_gap(&fars);
    let frr_gap = max_pairwise_gap(&frrs);
    Ok((1.0 - (alpha * far_gap + (1.0 - alpha) * frr_gap), far_gap, frr_gap))
}

pub fn compute_fdr(input: &FdrInput) -> Result<FdrResult> {
    if input.groups.len() < 2 {
        return Err(Error::TooFewGroups(input.groups.len()));
    }
    if !input.tau.is_finite() {
        return Err(Error::InvalidConfig("tau must be finite".into()));
    }
    let mut rates = BTreeMap::new();
    for (label, set) in &input.groups {
        let (far, frr) = far_frr_at(set, input.tau).map_err(|e| {
            Error::InvalidConfig(format!("group `{label}`: {e}"))
        })?;
        rates.insert(label.clone(), GroupRates { far, frr });
    }
    let (fdr, max_far_gap, max_frr_gap) = fdr_from_rates(&rates, input.alpha)?;
    Ok(FdrResult {
        fdr,
        alpha: input.alpha,
        tau: input.tau,
        max_far_gap,
        max_frr_gap,
        groups: rates,
    })
}

/// EER threshold of all groups' trials pooled together.
pub fn pooled_eer_threshold(groups: &BTreeMap<String, ScoreSet>) -> Result<f64> {
    let pooled: Vec<ScoredTrial> = groups.values().flat_map(|s| s.entries.iter().cloned()).collect();
    Ok(compute_eer(&ScoreSet::new(pooled)?)?.tau)
}

// ---------------------------------------------------------------------------
// Histograms
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreHistogram {
    pub low: f64,
    pub high: f64,
    /// `num_bins + 1` bin edges.
    pub edges: Vec<f64>,
    pub target: Vec<u64>,
    pub nontarget: Vec<u64>,
}

/// Shared-bin histograms per label. Bins are `[e_i, e_{i+1})` except the
/// last, which is closed; out-of-range scores land in the edge bins.
pub fn score_histogram(scores: &ScoreSet, num_bins: usize, low: f64, high: f64) -> Result<ScoreHistogram> {
    if num_bins == 0 {
        return Err(Error::InvalidConfig("num_bins must be >= 1".into()));
    }
    if !(low.is_finite() && high.is_finite() && low < high) {
        return Err(Error::InvalidConfig(format!("invalid histogram range [{low}, {high}]")));
    }
    let width = (high - low) / num_bins as f64;
    let edges: Vec<f64> = (0..=num_bins)
        .map(|i| if i == num_bins { high } else { low + width * i as f64 })
        .collect();
    let bin = |s: f64| -> usize {
        if s < low {
            return 0;
        }
        let i = ((s - low) / width).floor() as usize;
        let i = i.min(num_bins - 1);
        // Guard against rounding in the division disagreeing with the edges.
        if i + 1 < num_bins && s >= edges[i + 1] {
            i + 1
        } else if s < edges[i] && i > 0 {
            i - 1
        } else {
            i
        }
    };
    let mut target = vec![0u64; num_bins];
    let mut nontarget = vec![0u64; num_bins];
    for e in &scores.entries {
        let b = bin(e.score);
        match e.trial.label {
            Label::Target => target[b] += 1,
            Label::Nontarget => nontarget[b] += 1,
        }
    }
    Ok(ScoreHistogram {
        low,
        high,
        edges,
        target,
        nontarget,
    })
}

// ---------------------------------------------------------------------------
// Score file
// ---------------------------------------------------------------------------

/// Shortest decimal form of `x` rounded to 9 significant digits.
pub fn format_score(x: f64) -> String {
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

pub fn format_scores(scores: &ScoreSet) -> String {
    let mut out = String::with_capacity(48 * (scores.len() + 1));
    out.push_str(SCORE_HEADER);
    out.push('\n');
    for e in &scores.entries {
        out.push_str(&e.trial.enroll_utt);
        out.push('\t');
        out.push_str(&e.trial.test_utt);
        out.push('\t');
        out.push_str(e.trial.label.as_str());
        out.push('\t');
        out.push_str(&format_score(e.score));
        out.push('\n');
    }
    out
}

pub fn parse_scores(text: &str, name: &str) -> Result<ScoreSet> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == SCORE_HEADER => {}
        _ => {
            return Err(Error::text(
                name,
                1,
                format!("expected header `{}`", SCORE_HEADER.replace('\t', " ")),
            ))
        }
    }
    let mut entries = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::text(name, line_no, format!("expected 4 fields, got {}", fields.len())));
        }
        let label = fields[2].trim().parse::<Label>().map_err(|m| Error::text(name, line_no, m))?;
        let score: f64 = fields[3]
            .trim()
            .parse()
            .map_err(|_| Error::text(name, line_no, format!("invalid score `{}`", fields[3])))?;
        if !score.is_finite() {
            return Err(Error::text(name, line_no, "non-finite score"));
        }
        entries.push(ScoredTrial {
            trial: Trial {
                enroll_utt: fields[0].to_string(),
                test_utt: fields[1].to_string(),
                label,
            },
            score,
        });
    }
    ScoreSet::new(entries)
}

pub fn save_scores(scores: &ScoreSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_scores(scores)).map_err(|e| Error::io(path, e))
}

pub fn load_scores(path: impl AsRef<Path>) -> Result<ScoreSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scores(&text, &path.display().to_string())
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub protocol: String,
    pub eer: f64,
    pub tau_eer: f64,
    pub far_at_tau: f64,
    pub frr_at_tau: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fdr: Option<FdrResult>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub histogram: Option<ScoreHistogram>,
    pub provenance: serde_json::Value,
}

impl MetricReport {
    /// EER block of a report; `far_at_tau`/`frr_at_tau` are measured at `tau_eer`.
    pub fn from_scores(protocol: &str, scores: &ScoreSet, provenance: serde_json::Value) -> Result<Self> {
        let eer = compute_eer(scores)?;
        let (far, frr) = far_frr_at(scores, eer.tau)?;
        Ok(MetricReport {
            protocol: protocol.to_string(),
            eer: eer.eer,
            tau_eer: eer.tau,
            far_at_tau: far,
            frr_at_tau: frr,
            fdr: None,
            histogram: None,
            provenance,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}
