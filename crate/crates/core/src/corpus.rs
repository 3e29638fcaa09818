//! Embeddings, speaker metadata, the seeded corpus simulator, and on-disk
//! formats for embedding sets and metadata tables.
//!
//! Embedding files are little-endian binary:
//!
//! ```text
//! "EMB1" | u32 dim | u32 count | count × ( u16 id_len | id bytes | dim × f32 )
//! ```
//!
//! Metadata files are UTF-8 TSV with the header `utt_id speaker_id gender accent`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::item_rng;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMB1";
pub const METADATA_HEADER: [&str; 4] = ["utt_id", "speaker_id", "gender", "accent"];
pub const UNKNOWN_LABEL: &str = "unknown";

/// A finite real vector. Produced by [`normalize`] it is also unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Wraps raw values without normalizing. Rejects empty or non-finite input.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidConfig("embedding must have dim >= 1".into()));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Embedding(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Scales `v` to unit Euclidean norm.
///
/// The vector is first divided by its largest magnitude so that the squared
/// sum cannot overflow for large finite inputs.
pub fn normalize(v: &[f64]) -> Result<Embedding> {
    if let Some(index) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let peak = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if peak == 0.0 {
        return Err(Error::ZeroVector);
    }
    let scaled: Vec<f64> = v.iter().map(|x| x / peak).collect();
    let norm = l2_norm(&scaled);
    Ok(Embedding(scaled.into_iter().map(|x| x / norm).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
    Unknown,
}

impl Gender {
    /// Anything other than `female`/`male` (any case) maps to `Unknown`.
    pub fn parse_lenient(s: &str) -> Self {
        match s.trim().to_ascii_lowercase().as_str() {
            "female" => Gender::Female,
            "male" => Gender::Male,
            _ => Gender::Unknown,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
            Gender::Unknown => UNKNOWN_LABEL,
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Free-form accent labels; blank or `-` becomes `unknown`.
pub fn accent_label(s: &str) -> String {
    let t = s.trim();
    if t.is_empty() || t == "-" {
        UNKNOWN_LABEL.to_string()
    } else {
        t.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakerMeta {
    pub speaker_id: String,
    pub gender: Gender,
    pub accent: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub utt_id: String,
    pub speaker_id: String,
    pub embedding: Embedding,
}

/// Embedding-only view of a corpus, as stored in an `EMB1` file.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub dim: usize,
    pub records: Vec<(String, Embedding)>,
}

/// Utterance to speaker assignments plus per-speaker labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetadataTable {
    speakers: BTreeMap<String, SpeakerMeta>,
    utterances: Vec<(String, String)>,
    utt_index: HashMap<String, usize>,
}

impl MetadataTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one row. Fails on a repeated utterance id or on a speaker whose
    /// labels disagree with an earlier row.
    pub fn insert(&mut self, utt_id: &str, meta: SpeakerMeta) -> Result<()> {
        if utt_id.is_empty() || meta.speaker_id.is_empty() {
            return Err(Error::InvalidConfig("ids must be nonempty".into()));
        }
        if self.utt_index.contains_key(utt_id) {
            return Err(Error::DuplicateUtterance(utt_id.to_string()));
        }
        match self.speakers.get(&meta.speaker_id) {
            Some(prev) if *prev != meta => {
                return Err(Error::InvalidConfig(format!(
                    "speaker `{}` labelled {}/{} and {}/{}",
                    meta.speaker_id, prev.gender, prev.accent, meta.gender, meta.accent
                )))
            }
            Some(_) => {}
            None => {
                self.speakers.insert(meta.speaker_id.clone(), meta.clone());
            }
        }
        self.utt_index
            .insert(utt_id.to_string(), self.utterances.len());
        self.utterances
            .push((utt_id.to_string(), meta.speaker_id));
        Ok(())
    }

    pub fn speakers(&self) -> &BTreeMap<String, SpeakerMeta> {
        &self.speakers
    }

    /// `(utt_id, speaker_id)` rows in insertion order.
    pub fn utterances(&self) -> &[(String, String)] {
        &self.utterances
    }

    pub fn speaker_of(&self, utt_id: &str) -> Option<&SpeakerMeta> {
        let &i = self.utt_index.get(utt_id)?;
        self.speakers.get(&self.utterances[i].1)
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }
}

/// An immutable set of utterance embeddings joined to speaker metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    dim: usize,
    utterances: Vec<UtteranceRecord>,
    speakers: BTreeMap<String, SpeakerMeta>,
    utt_index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(
        dim: usize,
        utterances: Vec<UtteranceRecord>,
        speakers: BTreeMap<String, SpeakerMeta>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("corpus dim must be >= 1".into()));
        }
        for (id, meta) in &speakers {
            if id != &meta.speaker_id {
                return Err(Error::InvalidConfig(format!(
                    "speaker map key `{id}` does not match record `{}`",
                    meta.speaker_id
                )));
            }
        }
        let mut utt_index = HashMap::with_capacity(utterances.len());
        for (i, rec) in utterances.iter().enumerate() {
            if rec.utt_id.is_empty() {
                return Err(Error::InvalidConfig("empty utterance id".into()));
            }
            if rec.embedding.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: rec.embedding.dim(),
                });
            }
            if !speakers.contains_key(&rec.speaker_id) {
                return Err(Error::UnknownSpeaker(rec.speaker_id.clone()));
            }
            if utt_index.insert(rec.utt_id.clone(), i).is_some() {
                return Err(Error::DuplicateUtterance(rec.utt_id.clone()));
            }
        }
        Ok(Corpus {
            dim,
            utterances,
            speakers,
            utt_index,
        })
    }

    /// Joins a loaded embedding set with a metadata table.
    pub fn from_parts(embeddings: EmbeddingSet, metadata: &MetadataTable) -> Result<Self> {
        let mut speakers = BTreeMap::new();
        let mut utterances = Vec::with_capacity(embeddings.records.len());
        for (utt_id, embedding) in embeddings.records {
            let meta = metadata
                .speaker_of(&utt_id)
                .ok_or_else(|| Error::UnknownUtterance(utt_id.clone()))?;
            speakers
                .entry(meta.speaker_id.clone())
                .or_insert_with(|| meta.clone());
            utterances.push(UtteranceRecord {
                utt_id,
                speaker_id: meta.speaker_id.clone(),
                embedding,
            });
        }
        Corpus::new(embeddings.dim, utterances, speakers)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn utterances(&self) -> &[UtteranceRecord] {
        &self.utterances
    }

    pub fn speakers(&self) -> &BTreeMap<String, SpeakerMeta> {
        &self.speakers
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn get(&self, utt_id: &str) -> Option<&UtteranceRecord> {
        self.utt_index.get(utt_id).map(|&i| &self.utterances[i])
    }

    /// Utterance indices per speaker, speakers in id order, utterances in
    /// corpus order. Speakers without utterances are omitted.
    pub fn speaker_utterance_indices(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, rec) in self.utterances.iter().enumerate() {
            map.entry(rec.speaker_id.as_str()).or_default().push(i);
        }
        map
    }

    /// Same ids and metadata, new embeddings (one per utterance, same order).
    pub fn with_embeddings(&self, embeddings: Vec<Embedding>) -> Result<Corpus> {
        if embeddings.len() != self.utterances.len() {
            return Err(Error::InvalidConfig(format!(
                "{} embeddings for {} utterances",
                embeddings.len(),
                self.utterances.len()
            )));
        }
        let dim = embeddings.first().map_or(self.dim, Embedding::dim);
        let utterances = self
            .utterances
            .iter()
            .zip(embeddings)
            .map(|(rec, embedding)| UtteranceRecord {
                utt_id: rec.utt_id.clone(),
                speaker_id: rec.speaker_id.clone(),
                embedding,
            })
            .collect();
        Corpus::new(dim, utterances, self.speakers.clone())
    }

    pub fn embedding_set(&self) -> EmbeddingSet {
        EmbeddingSet {
            dim: self.dim,
            records: self
                .utterances
                .iter()
                .map(|r| (r.utt_id.clone(), r.embedding.clone()))
                .collect(),
        }
    }

    pub fn metadata(&self) -> MetadataTable {
        let mut table = MetadataTable::new();
        for rec in &self.utterances {
            // Corpus invariants guarantee these inserts succeed.
            table
                .insert(&rec.utt_id, self.speakers[&rec.speaker_id].clone())
                .expect("corpus invariants");
        }
        table
    }
}

/// Normalized mean of a speaker's utterance embeddings.
pub fn speaker_centroid(corpus: &Corpus, speaker_id: &str) -> Result<Embedding> {
    let mut sum = vec![0.0; corpus.dim()];
    let mut count = 0usize;
    for rec in corpus.utterances().iter().filter(|r| r.speaker_id == speaker_id) {
        for (s, v) in sum.iter_mut().zip(rec.embedding.values()) {
            *s += v;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::UnknownSpeaker(speaker_id.to_string()));
    }
    let n = count as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    normalize(&sum)
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub gender: Gender,
    pub accent: String,
    pub proportion: f64,
}

impl GroupAssignment {
    pub fn new(gender: Gender, accent: &str, proportion: f64) -> Self {
        GroupAssignment {
            gender,
            accent: accent_label(accent),
            proportion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub num_speakers: usize,
    pub utts_per_speaker: usize,
    pub dim: usize,
    /// Per-axis std-dev of intra-speaker noise, before renormalization.
    pub intra_sigma: f64,
    pub group_spec: Vec<GroupAssignment>,
    pub seed: u64,
}

/// Intra-speaker noise of the reference 200 × 20, dim-32 simulation. Puts the
/// authentic-vs-authentic unlinkability EER in the low single-digit percent range.
pub const DEFAULT_INTRA_SIGMA: f64 = 0.15;

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            num_speakers: 200,
            utts_per_speaker: 20,
            dim: 32,
            intra_sigma: DEFAULT_INTRA_SIGMA,
            group_spec: vec![
                GroupAssignment::new(Gender::Female, UNKNOWN_LABEL, 0.5),
                GroupAssignment::new(Gender::Male, UNKNOWN_LABEL, 0.5),
            ],
            seed: 0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::InvalidConfig(format!(
                "dim must be >= 2 (unit sphere degenerate), got {}",
                self.dim
            )));
        }
        if self.num_speakers == 0 || self.utts_per_speaker == 0 {
            return Err(Error::InvalidConfig(
                "num_speakers and utts_per_speaker must be positive".into(),
            ));
        }
        if !self.intra_sigma.is_finite() || self.intra_sigma < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "intra_sigma must be finite and nonnegative, got {}",
                self.intra_sigma
            )));
        }
        if self.group_spec.is_empty() {
            return Err(Error::InvalidConfig("group_spec is empty".into()));
        }
        if self
            .group_spec
            .iter()
            .any(|g| !g.proportion.is_finite() || g.proportion < 0.0)
        {
            return Err(Error::InvalidConfig(
                "group proportions must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = self.group_spec.iter().map(|g| g.proportion).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "group proportions sum to {total}, expected 1"
            )));
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `total` items over `proportions`.
/// Each count is within one of its exact share.
pub fn apportion(total: usize, proportions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    // Stable sort keeps ties in declaration order.
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal)
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn id_width(n: usize, min: usize) -> usize {
    n.to_string().len().max(min)
}

pub fn simulated_speaker_id(index: usize, num_speakers: usize) -> String {
    format!("id{:0w$}", index + 1, w = id_width(num_speakers, 5))
}

pub fn simulated_utt_id(speaker_id: &str, index: usize, utts_per_speaker: usize) -> String {
    format!("{speaker_id}-{:0w$}", index, w = id_width(utts_per_speaker, 4))
}

const CENTROID_SLOT: u64 = u64::MAX;

fn standard_normal_vec(rng: &mut crate::rng::ItemRng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Draws a synthetic corpus: speaker centroids uniform on the unit sphere,
/// utterances as renormalized centroid plus isotropic Gaussian noise.
pub fn simulate_corpus(config: &SimulationConfig) -> Result<Corpus> {
    config.validate()?;
    let proportions: Vec<f64> = config.group_spec.iter().map(|g| g.proportion).collect();
    let counts = apportion(config.num_speakers, &proportions);
    let group_of: Vec<&GroupAssignment> = config
        .group_spec
        .iter()
        .zip(&counts)
        .flat_map(|(g, &c)| std::iter::repeat_n(g, c))
        .collect();

    let per_speaker: Vec<Result<(SpeakerMeta, Vec<UtteranceRecord>)>> = (0..config.num_speakers)
        .into_par_iter()
        .map(|s| {
            let speaker_id = simulated_speaker_id(s, config.num_speakers);
            let group = group_of[s];
            let mut rng = item_rng(config.seed, &[s as u64, CENTROID_SLOT]);
            let centroid = normalize(&standard_normal_vec(&mut rng, config.dim))?;
            let mut utts = Vec::with_capacity(config.utts_per_speaker);
            for u in 0..config.utts_per_speaker {
                let embedding = if config.intra_sigma == 0.0 {
                    centroid.clone()
                } else {
                    let mut rng = item_rng(config.seed, &[s as u64, u as u64]);
                    let noisy: Vec<f64> = centroid
                        .values()
                        .iter()
                        .map(|c| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            c + config.intra_sigma * z
                        })
                        .collect();
                    normalize(&noisy)?
                };
                utts.push(UtteranceRecord {
                    utt_id: simulated_utt_id(&speaker_id, u, config.utts_per_speaker),
                    speaker_id: speaker_id.clone(),
                    embedding,
                });
            }
            let meta = SpeakerMeta {
                speaker_id,
                gender: group.gender,
                accent: group.accent.clone(),
            };
            Ok((meta, utts))
        })
        .collect();

    let mut speakers = BTreeMap::new();
    let mut utterances = Vec::with_capacity(config.num_speakers * config.utts_per_speaker);
    for item in per_speaker {
        let (meta, utts) = item?;
        speakers.insert(meta.speaker_id.clone(), meta);
        utterances.extend(utts);
    }
    Corpus::new(config.dim, utterances, speakers)
}

// ---------------------------------------------------------------------------
// Embedding file
// ---------------------------------------------------------------------------

pub fn encode_embeddings(set: &EmbeddingSet) -> Result<Vec<u8>> {
    let dim = u32::try_from(set.dim)
        .map_err(|_| Error::InvalidConfig(format!("dim {} exceeds u32", set.dim)))?;
    let count = u32::try_from(set.records.len())
        .map_err(|_| Error::InvalidConfig("record count exceeds u32".into()))?;
    let mut out = Vec::with_capacity(12 + set.records.len() * (2 + 16 + 4 * set.dim));
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for (utt_id, emb) in &set.records {
        let len = u16::try_from(utt_id.len()).map_err(|_| {
            Error::InvalidConfig(format!("utterance id `{utt_id}` longer than 65535 bytes"))
        })?;
        if emb.dim() != set.dim {
            return Err(Error::DimensionMismatch {
                expected: set.dim,
                actual: emb.dim(),
            });
        }
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(utt_id.as_bytes());
        for &v in emb.values() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct ByteCursor<'a> {
    name: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::binary(
                self.name,
                self.pos as u64,
                format!("truncated {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Parses an `EMB1` byte buffer. `name` labels diagnostics.
pub fn decode_embeddings(bytes: &[u8], name: &str) -> Result<EmbeddingSet> {
    let mut cur = ByteCursor {
        name,
        bytes,
        pos: 0,
    };
    let magic = cur.take(4, "header")?;
    if magic != EMBEDDING_MAGIC {
        return Err(Error::binary(name, 0, "bad magic"));
    }
    let dim = cur.u32("header")? as usize;
    let count = cur.u32("header")? as usize;
    if dim == 0 {
        return Err(Error::binary(name, 4, "dim must be >= 1"));
    }
    let mut seen = HashMap::with_capacity(count);
    let mut records = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let start = cur.pos as u64;
        let len = cur.u16("record")? as usize;
        let id_bytes = cur.take(len, "record")?;
        let utt_id = std::str::from_utf8(id_bytes)
            .map_err(|_| Error::binary(name, start, "utterance id is not UTF-8"))?
            .to_string();
        if utt_id.is_empty() {
            return Err(Error::binary(name, start, "empty utterance id"));
        }
        let raw = cur.take(4 * dim, "record")?;
        let values: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        let embedding = Embedding::new(values).map_err(|e| {
            Error::binary(name, start, format!("record `{utt_id}`: {e}"))
        })?;
        if seen.insert(utt_id.clone(), ()).is_some() {
            return Err(Error::binary(
                name,
                start,
                format!("duplicate utt_id `{utt_id}`"),
            ));
        }
        records.push((utt_id, embedding));
    }
    if cur.pos != bytes.len() {
        return Err(Error::binary(name, cur.pos as u64, "trailing bytes"));
    }
    Ok(EmbeddingSet { dim, records })
}

pub fn save_embeddings(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    save_embedding_set(&corpus.embedding_set(), path)
}

pub fn save_embedding_set(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_embeddings(set)?).map_err(|e| Error::io(path, e))
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embeddings(&bytes, &path.display().to_string())
}

// ---------------------------------------------------------------------------
// Metadata TSV
// ---------------------------------------------------------------------------

pub fn format_metadata(table: &MetadataTable) -> String {
    let mut out = METADATA_HEADER.join("\t");
    out.push('\n');
    for (utt_id, speaker_id) in table.utterances() {
        let meta = &table.speakers()[speaker_id];
        out.push_str(&format!(
            "{utt_id}\t{speaker_id}\t{}\t{}\n",
            meta.gender, meta.accent
        ));
    }
    out
}

/// Parses metadata TSV. Columns are located by header name; extra columns
/// are ignored. Line numbers in errors are 1-based and count the header.
pub fn parse_metadata(text: &str, name: &str) -> Result<MetadataTable> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .find(|(_, l)| !l.trim().is_empty())
        .ok_or_else(|| Error::text(name, 1, "missing header row"))?;
    let columns: Vec<&str> = header.split('\t').map(str::trim).collect();
    let mut pos = [0usize; 4];
    for (slot, col) in pos.iter_mut().zip(METADATA_HEADER) {
        *slot = columns
            .iter()
            .position(|c| *c == col)
            .ok_or_else(|| Error::text(name, 1, format!("missing column `{col}`")))?;
    }
    let width = pos.iter().copied().max().unwrap() + 1;

    let mut table = MetadataTable::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < width {
            return Err(Error::text(
                name,
                line_no,
                format!("missing column: expected {width} fields, got {}", fields.len()),
            ));
        }
        let utt_id = fields[pos[0]].trim();
        let speaker_id = fields[pos[1]].trim();
        if utt_id.is_empty() || speaker_id.is_empty() {
            return Err(Error::text(name, line_no, "empty utt_id or speaker_id"));
        }
        let meta = SpeakerMeta {
            speaker_id: speaker_id.to_string(),
            gender: Gender::parse_lenient(fields[pos[2]]),
            accent: accent_label(fields[pos[3]]),
        };
        table.insert(utt_id, meta).map_err(|e| match e {
            Error::DuplicateUtterance(id) => {
                Error::text(name, line_no, format!("duplicate utt_id `{id}`"))
            }
            other => Error::text(name, line_no, other.to_string()),
        })?;
    }
    Ok(table)
}

pub fn save_metadata(table: &MetadataTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_metadata(table)).map_err(|e| Error::io(path, e))
}

pub fn load_metadata(path: impl AsRef<Path>) -> Result<MetadataTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metadata(&text, &path.display().to_string())
}

/// Loads an embedding file and a metadata file and joins them.
pub fn load_corpus(embeddings: impl AsRef<Path>, metadata: impl AsRef<Path>) -> Result<Corpus> {
    let set = load_embeddings(embeddings)?;
    let meta = load_metadata(metadata)?;
    Corpus::from_parts(set, &meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SimulationConfig {
        SimulationConfig {
            num_speakers: 10,
            utts_per_speaker: 5,
            dim: 8,
            intra_sigma: 0.1,
            seed: 7,
            ..SimulationConfig::default()
        }
    }

    #[test]
    fn normalize_examples() {
        let e = normalize(&[3.0, 4.0]).unwrap();
        assert!((e.values()[0] - 0.6).abs() < 1e-15);
        assert!((e.values()[1] - 0.8).abs() < 1e-15);
        assert_eq!(normalize(&[1.0, 0.0, 0.0]).unwrap().values(), &[1.0, 0.0, 0.0]);
        assert!(matches!(normalize(&[0.0, 0.0]), Err(Error::ZeroVector)));
        assert_eq!(normalize(&[0.0, 0.0]).unwrap_err().to_string(), "zero vector");
    }

    #[test]
    fn normalize_names_offending_index() {
        let err = normalize(&[1.0, f64::NAN, 2.0]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1 }));
        assert!(err.to_string().contains("index 1"));
    }

    #[test]
    fn normalize_handles_huge_values() {
        let e = normalize(&[1e300, 1e300]).unwrap();
        assert!((e.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn simulate_counts_and_norms() {
        let c = simulate_corpus(&small_config()).unwrap();
        assert_eq!(c.len(), 50);
        assert_eq!(c.speakers().len(), 10);
        for r in c.utterances() {
            assert!((r.embedding.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn simulate_is_deterministic() {
        let a = simulate_corpus(&small_config()).unwrap();
        let b = simulate_corpus(&small_config()).unwrap();
        assert_eq!(a, b);
        let other = simulate_corpus(&SimulationConfig {
            seed: 8,
            ..small_config()
        })
        .unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn simulate_zero_noise_repeats_centroid() {
        let c = simulate_corpus(&SimulationConfig {
            intra_sigma: 0.0,
            ..small_config()
        })
        .unwrap();
        for (_, idx) in c.speaker_utterance_indices() {
            let first = &c.utterances()[idx[0]].embedding;
            for &i in &idx {
                assert_eq!(&c.utterances()[i].embedding, first);
            }
        }
    }

    #[test]
    fn simulate_rejects_degenerate_dim() {
        let err = simulate_corpus(&SimulationConfig {
            dim: 1,
            ..small_config()
        })
        .unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn simulate_rejects_bad_proportions() {
        let cfg = SimulationConfig {
            group_spec: vec![
                GroupAssignment::new(Gender::Female, "UK", 0.5),
                GroupAssignment::new(Gender::Male, "UK", 0.4),
            ],
            ..small_config()
        };
        assert!(simulate_corpus(&cfg).is_err());
    }

    #[test]
    fn apportion_within_one_speaker() {
        let props = [0.1, 0.25, 0.3, 0.35];
        for total in [0, 1, 7, 10, 99, 5994] {
            let counts = apportion(total, &props);
            assert_eq!(counts.iter().sum::<usize>(), total);
            for (c, p) in counts.iter().zip(props) {
                assert!((*c as f64 - p * total as f64).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn group_assignment_follows_spec() {
        let cfg = SimulationConfig {
            num_speakers: 7,
            group_spec: vec![
                GroupAssignment::new(Gender::Female, "India", 0.3),
                GroupAssignment::new(Gender::Male, "USA", 0.7),
            ],
            ..small_config()
        };
        let c = simulate_corpus(&cfg).unwrap();
        let female = c
            .speakers()
            .values()
            .filter(|m| m.gender == Gender::Female && m.accent == "India")
            .count();
        assert!((female as f64 - 2.1).abs() <= 1.0);
    }

    #[test]
    fn centroid_examples() {
        let mut speakers = BTreeMap::new();
        for s in ["a", "b"] {
            speakers.insert(
                s.to_string(),
                SpeakerMeta {
                    speaker_id: s.into(),
                    gender: Gender::Unknown,
                    accent: UNKNOWN_LABEL.into(),
                },
            );
        }
        let rec = |u: &str, s: &str, v: Vec<f64>| UtteranceRecord {
            utt_id: u.into(),
            speaker_id: s.into(),
            embedding: Embedding::new(v).unwrap(),
        };
        let c = Corpus::new(
            2,
            vec![
                rec("a1", "a", vec![1.0, 0.0]),
                rec("a2", "a", vec![0.0, 1.0]),
                rec("b1", "b", vec![0.6, 0.8]),
            ],
            speakers,
        )
        .unwrap();
        let ca = speaker_centroid(&c, "a").unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((ca.values()[0] - h).abs() < 1e-15 && (ca.values()[1] - h).abs() < 1e-15);
        let cb = speaker_centroid(&c, "b").unwrap();
        assert!((cb.values()[0] - 0.6).abs() < 1e-15);
        assert!(matches!(
            speaker_centroid(&c, "zz"),
            Err(Error::UnknownSpeaker(_))
        ));
        assert!(speaker_centroid(&c, "zz")
            .unwrap_err()
            .to_string()
            .contains("unknown speaker"));
    }

    #[test]
    fn embedding_round_trip_at_f32() {
        let c = simulate_corpus(&small_config()).unwrap();
        let bytes = encode_embeddings(&c.embedding_set()).unwrap();
        let set = decode_embeddings(&bytes, "mem").unwrap();
        assert_eq!(set.dim, 8);
        assert_eq!(set.records.len(), 50);
        for ((id, e), rec) in set.records.iter().zip(c.utterances()) {
            assert_eq!(id, &rec.utt_id);
            for (a, b) in e.values().iter().zip(rec.embedding.values()) {
                assert_eq!(*a as f32, *b as f32);
            }
            assert!((e.norm() - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn embedding_bad_magic() {
        let mut bytes = encode_embeddings(&EmbeddingSet {
            dim: 4,
            records: vec![],
        })
        .unwrap();
        bytes[0] = b'X';
        let err = decode_embeddings(&bytes, "f.emb").unwrap_err();
        assert!(err.to_string().contains("bad magic"));
        assert!(matches!(err, Error::Binary { offset: 0, .. }));
    }

    #[test]
    fn embedding_empty_file() {
        let bytes = encode_embeddings(&EmbeddingSet {
            dim: 192,
            records: vec![],
        })
        .unwrap();
        assert_eq!(bytes.len(), 12);
        assert_eq!(&bytes[8..12], &0u32.to_le_bytes());
        let set = decode_embeddings(&bytes, "empty").unwrap();
        assert!(set.records.is_empty());
    }

    #[test]
    fn embedding_truncated_and_duplicate() {
        let e = Embedding::new(vec![1.0, 0.0]).unwrap();
        let set = EmbeddingSet {
            dim: 2,
            records: vec![("u1".into(), e.clone()), ("u1".into(), e)],
        };
        let bytes = encode_embeddings(&set).unwrap();
        // header 12 + record (2 + 2 + 8) = 24 => second record starts at 24
        match decode_embeddings(&bytes, "dup").unwrap_err() {
            Error::Binary { offset, message, .. } => {
                assert_eq!(offset, 24);
                assert!(message.contains("duplicate"));
            }
            other => panic!("unexpected {other}"),
        }
        match decode_embeddings(&bytes[..30], "trunc").unwrap_err() {
            Error::Binary { offset, message, .. } => {
                assert_eq!(offset, 28);
                assert!(message.contains("truncated"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn metadata_parse_examples() {
        let t = parse_metadata("utt_id\tspeaker_id\tgender\taccent\nu1\tspk1\tfemale\tUSA\n", "m")
            .unwrap();
        let m = t.speaker_of("u1").unwrap();
        assert_eq!(m.gender, Gender::Female);
        assert_eq!(m.accent, "USA");

        let t = parse_metadata("utt_id\tspeaker_id\tgender\taccent\nu1\tspk1\tF?\t\n", "m").unwrap();
        let m = t.speaker_of("u1").unwrap();
        assert_eq!(m.gender, Gender::Unknown);
        assert_eq!(m.accent, UNKNOWN_LABEL);
    }

    #[test]
    fn metadata_duplicate_cites_line() {
        let mut text = String::from("utt_id\tspeaker_id\tgender\taccent\n");
        for i in 0..7 {
            text.push_str(&format!("u{i}\ts\tmale\tUK\n"));
        }
        text.push_str("u3\ts\tmale\tUK\n");
        let err = parse_metadata(&text, "meta.tsv").unwrap_err();
        assert!(matches!(err, Error::Text { line: 9, .. }), "{err}");
        assert!(err.to_string().contains("line 9"));
    }

    #[test]
    fn metadata_missing_column() {
        let err = parse_metadata("utt_id\tspeaker_id\tgender\nu1\ts\tmale\n", "m").unwrap_err();
        assert!(matches!(err, Error::Text { line: 1, .. }));
        assert!(err.to_string().contains("accent"));
        let err =
            parse_metadata("utt_id\tspeaker_id\tgender\taccent\nu1\ts\tmale\n", "m").unwrap_err();
        assert!(matches!(err, Error::Text { line: 2, .. }));
    }

    #[test]
    fn metadata_round_trip_through_corpus() {
        let c = simulate_corpus(&small_config()).unwrap();
        let text = format_metadata(&c.metadata());
        let t = parse_metadata(&text, "m").unwrap();
        let joined = Corpus::from_parts(c.embedding_set(), &t).unwrap();
        assert_eq!(joined, c);
    }
}
