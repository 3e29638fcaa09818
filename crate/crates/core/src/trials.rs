//! Verification trial lists.
//!
//! Two protocols are supported. The unlinkability protocol pairs authentic
//! enrollment utterances with test utterances from another (usually
//! anonymized) corpus: per speaker, `2·n_same` utterances are drawn and paired
//! into `n_same` target trials, and the first drawn utterance is paired with
//! `n_diff` utterances of other speakers. The within-corpus protocol samples
//! target and nontarget pairs from a single corpus.
//!
//! Trial files are UTF-8 TSV with the header `enroll_utt test_utt label`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, MetadataTable};
use crate::error::{Error, Result};
use crate::rng::{hash_str, item_rng};

pub const TRIAL_HEADER: &str = "enroll_utt\ttest_utt\tlabel";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Target,
    Nontarget,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Target => "target",
            Label::Nontarget => "nontarget",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "target" => Ok(Label::Target),
            "nontarget" => Ok(Label::Nontarget),
            other => Err(format!("invalid label `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Trial {
    pub enroll_utt: String,
    pub test_utt: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialProvenance {
    pub protocol: String,
    pub enroll_tag: String,
    pub test_tag: String,
    pub seed: u64,
    /// Trials asked for before availability caps.
    pub requested: usize,
    pub generated: usize,
    /// `requested - generated`: trials dropped because partners ran out.
    pub shortfall: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialList {
    pub trials: Vec<Trial>,
    /// Absent for lists read back from a trial file.
    pub provenance: Option<TrialProvenance>,
}

impl TrialList {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.trials.iter().filter(|t| t.label == label).count()
    }
}

/// Speaker to utterance-id index; all a trial generator needs from a corpus.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpeakerUtterances {
    by_speaker: BTreeMap<String, Vec<String>>,
    speaker_of: HashMap<String, String>,
}

impl SpeakerUtterances {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, speaker_id: &str, utt_id: &str) -> Result<()> {
        if self
            .speaker_of
            .insert(utt_id.to_string(), speaker_id.to_string())
            .is_some()
        {
            return Err(Error::DuplicateUtterance(utt_id.to_string()));
        }
        self.by_speaker
            .entry(speaker_id.to_string())
            .or_default()
            .push(utt_id.to_string());
        Ok(())
    }

    pub fn speakers(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.by_speaker.iter().map(|(s, u)| (s.as_str(), u.as_slice()))
    }

    pub fn num_speakers(&self) -> usize {
        self.by_speaker.len()
    }

    pub fn num_utterances(&self) -> usize {
        self.speaker_of.len()
    }

    pub fn speaker_of(&self, utt_id: &str) -> Option<&str> {
        self.speaker_of.get(utt_id).map(String::as_str)
    }
}

impl From<&Corpus> for SpeakerUtterances {
    fn from(corpus: &Corpus) -> Self {
        let mut idx = SpeakerUtterances::new();
        for r in corpus.utterances() {
            idx.insert(&r.speaker_id, &r.utt_id).expect("corpus ids are unique");
        }
        idx
    }
}

impl From<&MetadataTable> for SpeakerUtterances {
    fn from(table: &MetadataTable) -> Self {
        let mut idx = SpeakerUtterances::new();
        for (utt, spk) in table.utterances() {
            idx.insert(spk, utt).expect("metadata ids are unique");
        }
        idx
    }
}

/// Flattened test utterances, grouped by speaker, for sampling
/// "any utterance of another speaker" without building per-speaker pools.
struct PartnerPool<'a> {
    utts: Vec<&'a str>,
    blocks: HashMap<&'a str, Range<usize>>,
}

impl<'a> PartnerPool<'a> {
    fn new(index: &'a SpeakerUtterances) -> Self {
        let mut utts = Vec::with_capacity(index.num_utterances());
        let mut blocks = HashMap::with_capacity(index.num_speakers());
        for (spk, list) in index.speakers() {
            let start = utts.len();
            utts.extend(list.iter().map(String::as_str));
            blocks.insert(spk, start..utts.len());
        }
        PartnerPool { utts, blocks }
    }

    fn own(&self, speaker: &str) -> Range<usize> {
        self.blocks.get(speaker).cloned().unwrap_or(0..0)
    }

    fn available(&self, speaker: &str) -> usize {
        self.utts.len() - self.own(speaker).len()
    }

    /// Maps an index over "everyone but `speaker`" to a pool entry.
    fn other(&self, speaker_block: &Range<usize>, i: usize) -> &'a str {
        let j = if i >= speaker_block.start { i + speaker_block.len() } else { i };
        self.utts[j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnlinkabilityConfig {
    pub n_same: usize,
    pub n_diff: usize,
    pub seed: u64,
}

impl Default for UnlinkabilityConfig {
    fn default() -> Self {
        UnlinkabilityConfig {
            n_same: 2,
            n_diff: 100,
            seed: 0,
        }
    }
}

/// Cross-corpus target/nontarget trials.
///
/// Enrollment utterances come from `enroll`, test utterances from `test`;
/// target trials require the drawn utterance ids to exist in both with the
/// same speaker. Output is ordered by speaker id, then trial index.
pub fn generate_unlinkability_trials(
    enroll: &SpeakerUtterances,
    test: &SpeakerUtterances,
    cfg: &UnlinkabilityConfig,
    enroll_tag: &str,
    test_tag: &str,
) -> Result<TrialList> {
    if cfg.n_same == 0 {
        return Err(Error::InvalidConfig("n_same must be >= 1".into()));
    }
    let pool = PartnerPool::new(test);
    let need = 2 * cfg.n_same;
    let speakers: Vec<(&str, &[String])> = enroll.speakers().collect();
    if speakers.is_empty() {
        return Err(Error::TooFewSpeakers {
            required: 2,
            actual: 0,
        });
    }

    let per_speaker: Vec<Result<Vec<Trial>>> = speakers
        .par_iter()
        .map(|&(spk, utts)| {
            let candidates: Vec<&String> = utts
                .iter()
                .filter(|u| test.speaker_of(u) == Some(spk))
                .collect();
            if candidates.len() < need {
                return Err(Error::NotEnoughUtterances {
                    speaker: spk.to_string(),
                    available: candidates.len(),
                    required: need,
                });
            }
            let available = pool.available(spk);
            if available == 0 {
                return Err(Error::NoNontargetPartners);
            }
            let mut rng = item_rng(cfg.seed, &[hash_str(spk)]);
            let chosen: Vec<&String> = index::sample(&mut rng, candidates.len(), need)
                .into_iter()
                .map(|i| candidates[i])
                .collect();
            let mut out = Vec::with_capacity(cfg.n_same + cfg.n_diff);
            for pair in chosen.chunks_exact(2) {
                out.push(Trial {
                    enroll_utt: pair[0].clone(),
                    test_utt: pair[1].clone(),
                    label: Label::Target,
                });
            }
            let block = pool.own(spk);
            let k = cfg.n_diff.min(available);
            for i in index::sample(&mut rng, available, k) {
                out.push(Trial {
                    enroll_utt: chosen[0].clone(),
                    test_utt: pool.other(&block, i).to_string(),
                    label: Label::Nontarget,
                });
            }
            Ok(out)
        })
        .collect();

    let mut trials = Vec::with_capacity(speakers.len() * (cfg.n_same + cfg.n_diff));
    for t in per_speaker {
        trials.extend(t?);
    }
    let requested = speakers.len() * (cfg.n_same + cfg.n_diff);
    Ok(TrialList {
        provenance: Some(TrialProvenance {
            protocol: "unlinkability".into(),
            enroll_tag: enroll_tag.into(),
            test_tag: test_tag.into(),
            seed: cfg.seed,
            requested,
            generated: trials.len(),
            shortfall: requested - trials.len(),
        }),
        trials,
    })
}

/// Decodes index `p` of the `n(n-1)/2` unordered pairs `(i, j)`, `i < j`.
fn unordered_pair(n: usize, mut p: usize) -> (usize, usize) {
    let mut i = 0;
    loop {
        let row = n - 1 - i;
        if p < row {
            return (i, i + 1 + p);
        }
        p -= row;
        i += 1;
    }
}

/// Within-corpus trials: per speaker, up to `targets_per_speaker` distinct
/// same-speaker pairs and up to `nontargets_per_speaker` distinct pairs of
/// one of its utterances with another speaker's utterance.
pub fn generate_within_trials(
    corpus: &SpeakerUtterances,
    targets_per_speaker: usize,
    nontargets_per_speaker: usize,
    seed: u64,
    tag: &str,
) -> Result<TrialList> {
    if corpus.num_speakers() < 2 {
        return Err(Error::NoNontargetPartners);
    }
    let pool = PartnerPool::new(corpus);
    let speakers: Vec<(&str, &[String])> = corpus.speakers().collect();
    let per_speaker: Vec<Result<Vec<Trial>>> = speakers
        .par_iter()
        .map(|&(spk, utts)| {
            let n = utts.len();
            if n < 2 {
                return Err(Error::NotEnoughUtterances {
                    speaker: spk.to_string(),
                    available: n,
                    required: 2,
                });
            }
            let mut rng = item_rng(seed, &[hash_str(spk)]);
            let mut out = Vec::new();
            let target_space = n * (n - 1) / 2;
            for p in index::sample(&mut rng, target_space, targets_per_speaker.min(target_space)) {
                let (i, j) = unordered_pair(n, p);
                out.push(Trial {
                    enroll_utt: utts[i].clone(),
                    test_utt: utts[j].clone(),
                    label: Label::Target,
                });
            }
            let block = pool.own(spk);
            let others = pool.available(spk);
            let nontarget_space = n * others;
            let k = nontargets_per_speaker.min(nontarget_space);
            for p in index::sample(&mut rng, nontarget_space, k) {
                out.push(Trial {
                    enroll_utt: utts[p / others].clone(),
                    test_utt: pool.other(&block, p % others).to_string(),
                    label: Label::Nontarget,
                });
            }
            Ok(out)
        })
        .collect();

    let mut trials = Vec::new();
    for t in per_speaker {
        trials.extend(t?);
    }
    let requested = speakers.len() * (targets_per_speaker + nontargets_per_speaker);
    Ok(TrialList {
        provenance: Some(TrialProvenance {
            protocol: "within".into(),
            enroll_tag: tag.into(),
            test_tag: tag.into(),
            seed,
            requested,
            generated: trials.len(),
            shortfall: requested - trials.len(),
        }),
        trials,
    })
}

/// Checks that labels agree with speaker ids and that no pair repeats.
pub fn verify_trials(list: &TrialList, enroll: &SpeakerUtterances, test: &SpeakerUtterances) -> Result<()> {
    let mut seen = std::collections::HashSet::with_capacity(list.len());
    for t in &list.trials {
        let a = enroll
            .speaker_of(&t.enroll_utt)
            .ok_or_else(|| Error::UnknownUtterance(t.enroll_utt.clone()))?;
        let b = test
            .speaker_of(&t.test_utt)
            .ok_or_else(|| Error::UnknownUtterance(t.test_utt.clone()))?;
        let expected = if a == b { Label::Target } else { Label::Nontarget };
        if t.label != expected {
            return Err(Error::InvalidConfig(format!(
                "trial {} {} labelled {} but speakers are {a}/{b}",
                t.enroll_utt, t.test_utt, t.label
            )));
        }
        if !seen.insert((&t.enroll_utt, &t.test_utt)) {
            return Err(Error::InvalidConfig(format!(
                "duplicate trial {} {}",
                t.enroll_utt, t.test_utt
            )));
        }
    }
    Ok(())
}

pub fn format_trials(list: &TrialList) -> String {
    let mut out = String::with_capacity(32 * (list.len() + 1));
    out.push_str(TRIAL_HEADER);
    out.push('\n');
    for t in &list.trials {
        out.push_str(&t.enroll_utt);
        out.push('\t');
        out.push_str(&t.test_utt);
        out.push('\t');
        out.push_str(t.label.as_str());
        out.push('\n');
    }
    out
}

pub fn parse_trials(text: &str, name: &str) -> Result<TrialList> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == TRIAL_HEADER => {}
        _ => {
            return Err(Error::text(
                name,
                1,
                format!("expected header `{}`", TRIAL_HEADER.replace('\t', " ")),
            ))
        }
    }
    let mut trials = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::text(
                name,
                line_no,
                format!("expected 3 fields, got {}", fields.len()),
            ));
        }
        let label = fields[2]
            .trim()
            .parse::<Label>()
            .map_err(|m| Error::text(name, line_no, m))?;
        trials.push(Trial {
            enroll_utt: fields[0].to_string(),
            test_utt: fields[1].to_string(),
            label,
        });
    }
    Ok(TrialList {
        trials,
        provenance: None,
    })
}

pub fn save_trials(list: &TrialList, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_trials(list)).map_err(|e| Error::io(path, e))
}

pub fn load_trials(path: impl AsRef<Path>) -> Result<TrialList> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trials(&text, &path.display().to_string())
}
