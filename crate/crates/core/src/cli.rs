//! The `anonbench` command line.
//!
//! Subcommands follow the pipeline order:
//! `simulate → train-ohnn → anonymize → gen-trials → score → eer | fdr | report`,
//! plus `stats` for variation diagnostics. Every file written is accompanied
//! by a `<file>.manifest.json` sidecar, and every JSON report embeds the same
//! manifest under `provenance`.
//!
//! Exit codes: 0 on success, 2 on usage errors, 1 on data errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    load_corpus, load_metadata, save_embeddings, save_metadata, simulate_corpus, Gender,
    GroupAssignment, MetadataTable, SimulationConfig, DEFAULT_INTRA_SIGMA,
};
use crate::error::{Error, Result};
use crate::metrics::{
    compute_fdr, load_scores, pooled_eer_threshold, save_scores, score_histogram, score_trials,
    FdrInput, FdrResult, MetricReport, ScoreSet, DEFAULT_FDR_ALPHA,
};
use crate::ohnn::{init_ohnn, train_ohnn, OhnnParams, TrainConfig, DEFAULT_INIT_SEED};
use crate::strategies::{anonymize_corpus, inject_variation, variation_stats, StrategyKind};
use crate::trials::{
    generate_unlinkability_trials, generate_within_trials, load_trials, save_trials,
    SpeakerUtterances, UnlinkabilityConfig,
};

pub const TOOL_NAME: &str = "anonbench";

/// Everything needed to reproduce one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    /// Resolved flag values, defaults included.
    pub args: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub results: Option<serde_json::Value>,
}

impl RunManifest {
    fn new(subcommand: &str, args: &impl Serialize) -> Result<Self> {
        Ok(RunManifest {
            tool: TOOL_NAME.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: subcommand.into(),
            args: serde_json::to_value(args)?,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            seeds: BTreeMap::new(),
            results: None,
        })
    }

    fn input(&mut self, role: &str, path: &Path) -> &mut Self {
        self.inputs.insert(role.into(), path.display().to_string());
        self
    }

    fn output(&mut self, role: &str, path: &Path) -> &mut Self {
        self.outputs.insert(role.into(), path.display().to_string());
        self
    }

    fn seed(&mut self, role: &str, seed: u64) -> &mut Self {
        self.seeds.insert(role.into(), seed);
        self
    }

    fn to_value(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn write_manifests(manifest: &RunManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    for path in manifest.outputs.values() {
        if path == "-" {
            continue;
        }
        let m = manifest_path(Path::new(path));
        fs::write(&m, &text).map_err(|e| Error::io(&m, e))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if path == Path::new("-") {
        let mut out = std::io::stdout().lock();
        out.write_all(text.as_bytes()).map_err(|e| Error::io("-", e))
    } else {
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn sibling_tsv(path: &Path) -> PathBuf {
    path.with_extension("tsv")
}

// ---------------------------------------------------------------------------
// Argument definitions
// ---------------------------------------------------------------------------

#[derive(Debug, Parser)]
#[command(
    name = TOOL_NAME,
    version,
    about = "Householder-network speaker anonymization and privacy/utility/fairness evaluation at embedding level"
)]
struct Cli {
    /// Cap on worker threads for simulation and scoring (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a seeded synthetic corpus (embeddings + metadata TSV).
    Simulate(SimulateArgs),
    /// Initialize and train the Householder anonymizer on a corpus.
    TrainOhnn(TrainArgs),
    /// Produce an anonymized corpus (-spk / -utt, optional -aug/-bkg surrogate).
    Anonymize(AnonymizeArgs),
    /// Generate a trial list (unlinkability or within-corpus protocol).
    GenTrials(GenTrialsArgs),
    /// Cosine-score a trial list.
    Score(ScoreArgs),
    /// Equal error rate report for a score file.
    Eer(EerArgs),
    /// Fairness discrepancy rate across gender or accent groups.
    Fdr(FdrArgs),
    /// Intra-/inter-speaker variation of a corpus.
    Stats(StatsArgs),
    /// Combined EER, histogram and optional FDR report.
    Report(ReportArgs),
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    #[arg(long, default_value_t = 200)]
    num_speakers: usize,
    #[arg(long, default_value_t = 20)]
    utts_per_speaker: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    /// Per-axis std-dev of intra-speaker noise before renormalization.
    #[arg(long, default_value_t = DEFAULT_INTRA_SIGMA)]
    intra_sigma: f64,
    /// Comma-separated `gender:accent:proportion` entries.
    #[arg(long, default_value = "female:unknown:0.5,male:unknown:0.5")]
    group_spec: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Embedding file to write; metadata goes to the same path with `.tsv`.
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long)]
    metadata_output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct CorpusInput {
    /// Embedding file (`EMB1`).
    #[arg(long)]
    embeddings: PathBuf,
    /// Metadata TSV; defaults to the embedding path with `.tsv`.
    #[arg(long)]
    metadata: Option<PathBuf>,
}

impl CorpusInput {
    fn metadata_path(&self) -> PathBuf {
        self.metadata.clone().unwrap_or_else(|| sibling_tsv(&self.embeddings))
    }
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusInput,
    /// Number of Householder reflections (default: the embedding dimension).
    #[arg(long)]
    num_reflections: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_INIT_SEED)]
    init_seed: u64,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.2)]
    aam_margin: f64,
    #[arg(long, default_value_t = 30.0)]
    aam_scale: f64,
    #[arg(long, default_value_t = 0.25, allow_hyphen_values = true)]
    dist_margin: f64,
    #[arg(long, default_value_t = 1.0)]
    dist_weight: f64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    /// Seed for mini-batch shuffling.
    #[arg(long, default_value_t = DEFAULT_INIT_SEED)]
    seed: u64,
    /// Parameter file to write (`OHN1`).
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum StrategyArg {
    /// Speaker-level: one anonymized centroid per speaker (-spk).
    Spk,
    /// Utterance-level: each utterance anonymized independently (-utt).
    Utt,
}

impl From<StrategyArg> for StrategyKind {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Spk => StrategyKind::SpeakerLevel,
            StrategyArg::Utt => StrategyKind::UtteranceLevel,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct AnonymizeArgs {
    #[command(flatten)]
    corpus: CorpusInput,
    #[arg(long)]
    params: PathBuf,
    #[arg(long, value_enum)]
    strategy: StrategyArg,
    /// Embedding-space stand-in for the -aug / -bkg variants: per-axis noise
    /// std-dev added after anonymization.
    #[arg(long)]
    inject_sigma: Option<f64>,
    /// Seed for variation injection.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long)]
    metadata_output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Protocol {
    Unlinkability,
    Within,
}

#[derive(Debug, Args, Serialize)]
struct GenTrialsArgs {
    #[arg(long, value_enum, default_value_t = Protocol::Unlinkability)]
    protocol: Protocol,
    /// Metadata TSV of the enrollment corpus.
    #[arg(long)]
    enroll: PathBuf,
    /// Metadata TSV of the test corpus (default: same as enrollment).
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    n_same: usize,
    #[arg(long, default_value_t = 100)]
    n_diff: usize,
    #[arg(long, default_value_t = 10)]
    targets_per_speaker: usize,
    #[arg(long, default_value_t = 100)]
    nontargets_per_speaker: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct ScoreArgs {
    #[arg(long)]
    trials: PathBuf,
    #[arg(long)]
    enroll_embeddings: PathBuf,
    #[arg(long)]
    enroll_metadata: Option<PathBuf>,
    #[arg(long)]
    test_embeddings: PathBuf,
    #[arg(long)]
    test_metadata: Option<PathBuf>,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct EerArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, default_value = "unlinkability")]
    protocol: String,
    /// Report path, `-` for standard output.
    #[arg(long, short, default_value = "-")]
    output: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum GroupBy {
    Gender,
    Accent,
}

#[derive(Debug, Args, Serialize)]
struct FairnessArgs {
    /// Metadata TSV resolving enrollment utterances to speaker groups.
    #[arg(long)]
    metadata: PathBuf,
    #[arg(long, value_enum, default_value_t = GroupBy::Gender)]
    group_by: GroupBy,
    #[arg(long, default_value_t = DEFAULT_FDR_ALPHA)]
    alpha: f64,
    /// Shared decision threshold (default: pooled EER threshold).
    #[arg(long, allow_hyphen_values = true)]
    tau: Option<f64>,
    /// Drop the `unknown` group instead of scoring it as its own group.
    #[arg(long)]
    skip_unknown: bool,
}

#[derive(Debug, Args, Serialize)]
struct FdrArgs {
    #[arg(long)]
    scores: PathBuf,
    #[command(flatten)]
    fairness: FairnessArgs,
    #[arg(long, short, default_value = "-")]
    output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct StatsArgs {
    #[command(flatten)]
    corpus: CorpusInput,
    #[arg(long, short, default_value = "-")]
    output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct ReportArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, default_value = "unlinkability")]
    protocol: String,
    #[arg(long, default_value_t = 40)]
    bins: usize,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    hist_low: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    hist_high: f64,
    /// Metadata TSV; when given, the report includes an FDR block.
    #[arg(long)]
    metadata: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = GroupBy::Gender)]
    group_by: GroupBy,
    #[arg(long, default_value_t = DEFAULT_FDR_ALPHA)]
    alpha: f64,
    #[arg(long, allow_hyphen_values = true)]
    tau: Option<f64>,
    #[arg(long)]
    skip_unknown: bool,
    #[arg(long, short, default_value = "-")]
    output: PathBuf,
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

/// Runs one invocation; `argv[0]` is the program name.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = match cli.threads {
        Some(0) => Err(Error::InvalidConfig("--threads must be >= 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(cli.command)),
            Err(e) => Err(Error::InvalidConfig(format!("thread pool: {e}"))),
        },
        None => dispatch(cli.command),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{TOOL_NAME}: error: {e}");
            1
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::TrainOhnn(a) => cmd_train(&a),
        Command::Anonymize(a) => cmd_anonymize(&a),
        Command::GenTrials(a) => cmd_gen_trials(&a),
        Command::Score(a) => cmd_score(&a),
        Command::Eer(a) => cmd_eer(&a),
        Command::Fdr(a) => cmd_fdr(&a),
        Command::Stats(a) => cmd_stats(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

pub fn parse_group_spec(spec: &str) -> Result<Vec<GroupAssignment>> {
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|entry| {
            let parts: Vec<&str> = entry.trim().split(':').collect();
            if parts.len() != 3 {
                return Err(Error::InvalidConfig(format!(
                    "group spec entry `{entry}` is not gender:accent:proportion"
                )));
            }
            let proportion: f64 = parts[2].parse().map_err(|_| {
                Error::InvalidConfig(format!("invalid proportion `{}`", parts[2]))
            })?;
            Ok(GroupAssignment::new(Gender::parse_lenient(parts[0]), parts[1], proportion))
        })
        .collect()
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let config = SimulationConfig {
        num_speakers: a.num_speakers,
        utts_per_speaker: a.utts_per_speaker,
        dim: a.dim,
        intra_sigma: a.intra_sigma,
        group_spec: parse_group_spec(&a.group_spec)?,
        seed: a.seed,
    };
    let corpus = simulate_corpus(&config)?;
    let meta_path = a.metadata_output.clone().unwrap_or_else(|| sibling_tsv(&a.output));
    save_embeddings(&corpus, &a.output)?;
    save_metadata(&corpus.metadata(), &meta_path)?;
    let mut m = RunManifest::new("simulate", a)?;
    m.output("embeddings", &a.output)
        .output("metadata", &meta_path)
        .seed("simulation", a.seed);
    write_manifests(&m)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let meta = a.corpus.metadata_path();
    let corpus = load_corpus(&a.corpus.embeddings, &meta)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        aam_margin: a.aam_margin,
        aam_scale: a.aam_scale,
        dist_margin: a.dist_margin,
        dist_weight: a.dist_weight,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    cfg.validate()?;
    let k = a.num_reflections.unwrap_or(corpus.dim());
    let n = corpus.speaker_utterance_indices().len();
    let init = init_ohnn(corpus.dim(), k, n, a.init_seed)?;
    let outcome = train_ohnn(&init, &corpus, &cfg)?;
    outcome.params.save(&a.output)?;
    let mut m = RunManifest::new("train-ohnn", a)?;
    m.input("embeddings", &a.corpus.embeddings)
        .input("metadata", &meta)
        .output("params", &a.output)
        .seed("init", a.init_seed)
        .seed("shuffle", a.seed);
    m.results = Some(serde_json::json!({
        "num_reflections": k,
        "num_classes": n,
        "loss_history": outcome.loss_history,
    }));
    write_manifests(&m)
}

fn cmd_anonymize(a: &AnonymizeArgs) -> Result<()> {
    let meta = a.corpus.metadata_path();
    let corpus = load_corpus(&a.corpus.embeddings, &meta)?;
    let params = OhnnParams::load(&a.params)?;
    let mut anon = anonymize_corpus(&corpus, &params, a.strategy.into())?;
    if let Some(sigma) = a.inject_sigma {
        anon = inject_variation(&anon, sigma, a.seed)?;
    }
    let meta_out = a.metadata_output.clone().unwrap_or_else(|| sibling_tsv(&a.output));
    save_embeddings(&anon, &a.output)?;
    save_metadata(&anon.metadata(), &meta_out)?;
    let mut m = RunManifest::new("anonymize", a)?;
    m.input("embeddings", &a.corpus.embeddings)
        .input("metadata", &meta)
        .input("params", &a.params)
        .output("embeddings", &a.output)
        .output("metadata", &meta_out);
    if a.inject_sigma.is_some() {
        m.seed("injection", a.seed);
    }
    write_manifests(&m)
}

fn cmd_gen_trials(a: &GenTrialsArgs) -> Result<()> {
    let enroll_meta = load_metadata(&a.enroll)?;
    let enroll = SpeakerUtterances::from(&enroll_meta);
    let test_path = a.test.clone().unwrap_or_else(|| a.enroll.clone());
    let test = if a.test.is_some() {
        SpeakerUtterances::from(&load_metadata(&test_path)?)
    } else {
        enroll.clone()
    };
    let enroll_tag = a.enroll.display().to_string();
    let test_tag = test_path.display().to_string();
    let list = match a.protocol {
        Protocol::Unlinkability => generate_unlinkability_trials(
            &enroll,
            &test,
            &UnlinkabilityConfig {
                n_same: a.n_same,
                n_diff: a.n_diff,
                seed: a.seed,
            },
            &enroll_tag,
            &test_tag,
        )?,
        Protocol::Within => generate_within_trials(
            &enroll,
            a.targets_per_speaker,
            a.nontargets_per_speaker,
            a.seed,
            &enroll_tag,
        )?,
    };
    save_trials(&list, &a.output)?;
    let mut m = RunManifest::new("gen-trials", a)?;
    m.input("enroll", &a.enroll)
        .input("test", &test_path)
        .output("trials", &a.output)
        .seed("trials", a.seed);
    m.results = Some(serde_json::to_value(&list.provenance)?);
    write_manifests(&m)
}

fn cmd_score(a: &ScoreArgs) -> Result<()> {
    let enroll_meta = a
        .enroll_metadata
        .clone()
        .unwrap_or_else(|| sibling_tsv(&a.enroll_embeddings));
    let test_meta = a
        .test_metadata
        .clone()
        .unwrap_or_else(|| sibling_tsv(&a.test_embeddings));
    let trials = load_trials(&a.trials)?;
    let enroll = load_corpus(&a.enroll_embeddings, &enroll_meta)?;
    let test = load_corpus(&a.test_embeddings, &test_meta)?;
    let scores = score_trials(&trials, &enroll, &test)?;
    save_scores(&scores, &a.output)?;
    let mut m = RunManifest::new("score", a)?;
    m.input("trials", &a.trials)
        .input("enroll_embeddings", &a.enroll_embeddings)
        .input("enroll_metadata", &enroll_meta)
        .input("test_embeddings", &a.test_embeddings)
        .input("test_metadata", &test_meta)
        .output("scores", &a.output);
    write_manifests(&m)
}

fn group_label(meta: &MetadataTable, utt: &str, by: GroupBy) -> Result<String> {
    let spk = meta
        .speaker_of(utt)
        .ok_or_else(|| Error::UnknownUtterance(utt.to_string()))?;
    Ok(match by {
        GroupBy::Gender => spk.gender.to_string(),
        GroupBy::Accent => spk.accent.clone(),
    })
}

/// Splits scores by the enrollment speaker's group.
fn split_groups(scores: &ScoreSet, meta: &MetadataTable, by: GroupBy, skip_unknown: bool) -> Result<BTreeMap<String, ScoreSet>> {
    let mut buckets: BTreeMap<String, Vec<_>> = BTreeMap::new();
    for e in scores.entries() {
        let g = group_label(meta, &e.trial.enroll_utt, by)?;
        if skip_unknown && g == crate::corpus::UNKNOWN_LABEL {
            continue;
        }
        buckets.entry(g).or_default().push(e.clone());
    }
    buckets
        .into_iter()
        .map(|(g, entries)| Ok((g, ScoreSet::new(entries)?)))
        .collect()
}

fn fairness(scores: &ScoreSet, f: &FairnessArgs) -> Result<FdrResult> {
    let meta = load_metadata(&f.metadata)?;
    let groups = split_groups(scores, &meta, f.group_by, f.skip_unknown)?;
    let tau = match f.tau {
        Some(t) => t,
        None => pooled_eer_threshold(&groups)?,
    };
    compute_fdr(&FdrInput {
        groups,
        alpha: f.alpha,
        tau,
    })
}

fn emit_report(report: &MetricReport, output: &Path, manifest: &RunManifest) -> Result<()> {
    write_text(output, &report.to_json()?)?;
    write_manifests(manifest)
}

fn cmd_eer(a: &EerArgs) -> Result<()> {
    let scores = load_scores(&a.scores)?;
    let mut m = RunManifest::new("eer", a)?;
    m.input("scores", &a.scores).output("report", &a.output);
    let report = MetricReport::from_scores(&a.protocol, &scores, m.to_value()?)?;
    emit_report(&report, &a.output, &m)
}

fn cmd_fdr(a: &FdrArgs) -> Result<()> {
    let scores = load_scores(&a.scores)?;
    let mut m = RunManifest::new("fdr", a)?;
    m.input("scores", &a.scores)
        .input("metadata", &a.fairness.metadata)
        .output("report", &a.output);
    let mut report = MetricReport::from_scores("fairness", &scores, m.to_value()?)?;
    report.fdr = Some(fairness(&scores, &a.fairness)?);
    emit_report(&report, &a.output, &m)
}

fn cmd_stats(a: &StatsArgs) -> Result<()> {
    let meta = a.corpus.metadata_path();
    let corpus = load_corpus(&a.corpus.embeddings, &meta)?;
    let stats = variation_stats(&corpus)?;
    let mut m = RunManifest::new("stats", a)?;
    m.input("embeddings", &a.corpus.embeddings)
        .input("metadata", &meta)
        .output("report", &a.output);
    let body = serde_json::json!({
        "intra_var": stats.intra_var,
        "inter_var": stats.inter_var,
        "ratio": stats.ratio,
        "num_speakers": corpus.speaker_utterance_indices().len(),
        "num_utterances": corpus.len(),
        "provenance": m.to_value()?,
    });
    let mut text = serde_json::to_string_pretty(&body)?;
    text.push('\n');
    write_text(&a.output, &text)?;
    write_manifests(&m)
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let scores = load_scores(&a.scores)?;
    let mut m = RunManifest::new("report", a)?;
    m.input("scores", &a.scores).output("report", &a.output);
    if let Some(meta) = &a.metadata {
        m.input("metadata", meta);
    }
    let mut report = MetricReport::from_scores(&a.protocol, &scores, m.to_value()?)?;
    report.histogram = Some(score_histogram(&scores, a.bins, a.hist_low, a.hist_high)?);
    if let Some(meta) = &a.metadata {
        report.fdr = Some(fairness(
            &scores,
            &FairnessArgs {
                metadata: meta.clone(),
                group_by: a.group_by,
                alpha: a.alpha,
                tau: a.tau,
                skip_unknown: a.skip_unknown,
            },
        )?);
    }
    emit_report(&report, &a.output, &m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_spec_parsing() {
        let g = parse_group_spec("female:India:0.3, male:USA:0.7").unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].gender, Gender::Female);
        assert_eq!(g[1].accent, "USA");
        assert!(parse_group_spec("female:0.3").is_err());
        assert!(parse_group_spec("female:x:abc").is_err());
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["anonbench", "frobnicate"]), 2);
        assert_eq!(run(["anonbench", "eer", "--bogus"]), 2);
        assert_eq!(run(["anonbench"]), 2);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(run(["anonbench", "--help"]), 0);
    }

    #[test]
    fn manifest_sidecar_name() {
        assert_eq!(
            manifest_path(Path::new("out/s.tsv")),
            PathBuf::from("out/s.tsv.manifest.json")
        );
    }
}
