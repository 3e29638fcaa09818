//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits nonzero
//! if any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use anonbench::corpus::{normalize, simulate_corpus, Gender, GroupAssignment, SimulationConfig};
use anonbench::metrics::{
    compute_eer, compute_fdr, fdr_from_rates, pooled_eer_threshold, score_trials, FdrInput,
    GroupRates, ScoreSet,
};
use anonbench::ohnn::{init_ohnn, ohnn_gradient, total_loss, train_ohnn, OhnnParams, TrainConfig};
use anonbench::strategies::{anonymize_corpus, inject_variation, variation_stats, StrategyKind};
use anonbench::trials::{
    generate_unlinkability_trials, generate_within_trials, SpeakerUtterances, UnlinkabilityConfig,
};
use anonbench::{Corpus, Embedding, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = std::result::Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn unlinkability_eer(enroll: &Corpus, test: &Corpus) -> Result<(f64, usize)> {
    let trials = generate_unlinkability_trials(
        &SpeakerUtterances::from(enroll),
        &SpeakerUtterances::from(test),
        &UnlinkabilityConfig::default(),
        "enroll",
        "test",
    )?;
    let scores = score_trials(&trials, enroll, test)?;
    Ok((compute_eer(&scores)?.eer, scores.len()))
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    normalize(&v).unwrap().into_values()
}

fn unlinkability_trend() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| {
        let start = Instant::now();
        let corpus = simulate_corpus(&SimulationConfig::default()).map_err(|e| e.to_string())?;
        let (auth, _) = unlinkability_eer(&corpus, &corpus).map_err(|e| e.to_string())?;
        let init = init_ohnn(32, 32, 200, 50).map_err(|e| e.to_string())?;
        let trained = train_ohnn(&init, &corpus, &TrainConfig::default())
            .map_err(|e| e.to_string())?
            .params;
        let anon = anonymize_corpus(&corpus, &trained, StrategyKind::UtteranceLevel)
            .map_err(|e| e.to_string())?;
        let (utt, _) = unlinkability_eer(&corpus, &anon).map_err(|e| e.to_string())?;
        let elapsed = start.elapsed();
        check(
            auth <= 0.05 && utt >= 0.25 && elapsed <= Duration::from_secs(300),
            format!(
                "authentic EER {:.2}% (<= 5%), anonymized-utt EER {:.2}% (>= 25%), {:.1?} single-threaded (<= 5 min)",
                100.0 * auth,
                100.0 * utt,
                elapsed
            ),
        )
    })
}

fn perfect_anonymization_ceiling() -> Outcome {
    let corpus = simulate_corpus(&SimulationConfig::default()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let random = corpus
        .utterances()
        .iter()
        .map(|_| Embedding::new(random_unit(&mut rng, corpus.dim())))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let test = corpus.with_embeddings(random).map_err(|e| e.to_string())?;
    let (eer, n) = unlinkability_eer(&corpus, &test).map_err(|e| e.to_string())?;
    check(
        n >= 20_000 && (eer - 0.5).abs() <= 0.02,
        format!("EER {:.2}% on {n} trials (50% +/- 2%, >= 20000 trials)", 100.0 * eer),
    )
}

fn strategy_ordering() -> Outcome {
    let corpus = simulate_corpus(&SimulationConfig::default()).map_err(|e| e.to_string())?;
    let init = init_ohnn(32, 32, 200, 50).map_err(|e| e.to_string())?;
    let params = train_ohnn(&init, &corpus, &TrainConfig { epochs: 20, ..TrainConfig::default() })
        .map_err(|e| e.to_string())?
        .params;
    let run = || -> Result<(f64, f64, f64)> {
        let auth = variation_stats(&corpus)?.ratio.expect("inter_var > 0");
        let utt = variation_stats(&anonymize_corpus(&corpus, &params, StrategyKind::UtteranceLevel)?)?
            .ratio
            .expect("inter_var > 0");
        let spk = anonymize_corpus(&corpus, &params, StrategyKind::SpeakerLevel)?;
        let spk_intra = variation_stats(&spk)?.intra_var;
        let injected = variation_stats(&inject_variation(&spk, 0.1, 0)?)?.intra_var;
        Ok(((utt / auth).ln().abs(), spk_intra, injected))
    };
    let (log_ratio, spk_intra, injected) = run().map_err(|e| e.to_string())?;
    check(
        log_ratio <= 1e-6 && spk_intra == 0.0 && injected > 0.0,
        format!("|log ratio| {log_ratio:.2e} (<= 1e-6), spk intra_var {spk_intra}, injected intra_var {injected:.4}"),
    )
}

fn fdr_exactness() -> Outcome {
    let rates = BTreeMap::from([
        ("A".to_string(), GroupRates { far: 0.10, frr: 0.20 }),
        ("B".to_string(), GroupRates { far: 0.20, frr: 0.40 }),
    ]);
    let (hand, _, _) = fdr_from_rates(&rates, 0.95).map_err(|e| e.to_string())?;

    let corpus = simulate_corpus(&SimulationConfig {
        group_spec: vec![
            GroupAssignment::new(Gender::Female, "unknown", 0.5),
            GroupAssignment::new(Gender::Male, "unknown", 0.5),
        ],
        seed: 11,
        ..SimulationConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let trials = generate_within_trials(&SpeakerUtterances::from(&corpus), 10, 100, 5, "sim")
        .map_err(|e| e.to_string())?;
    let scores = score_trials(&trials, &corpus, &corpus).map_err(|e| e.to_string())?;
    let mut buckets: BTreeMap<String, Vec<_>> = BTreeMap::new();
    for e in scores.entries() {
        let spk = &corpus.get(&e.trial.enroll_utt).unwrap().speaker_id;
        buckets.entry(corpus.speakers()[spk].gender.to_string()).or_default().push(e.clone());
    }
    let groups: BTreeMap<String, ScoreSet> = buckets
        .into_iter()
        .map(|(g, v)| (g, ScoreSet::new(v).unwrap()))
        .collect();
    let min_trials = groups.values().map(ScoreSet::len).min().unwrap_or(0);
    let tau = pooled_eer_threshold(&groups).map_err(|e| e.to_string())?;
    let fdr = compute_fdr(&FdrInput { groups, alpha: 0.95, tau })
        .map_err(|e| e.to_string())?
        .fdr;
    check(
        (hand - 0.895).abs() <= 1e-12 && min_trials >= 10_000 && fdr >= 0.95,
        format!("hand example {hand:.15} (0.895 +/- 1e-12), symmetric FDR {fdr:.4} (>= 0.95) with {min_trials} trials/group"),
    )
}

fn trial_count_law() -> Outcome {
    let mut meta = SpeakerUtterances::new();
    for s in 0..5994 {
        for u in 0..8 {
            meta.insert(&format!("id{s:05}"), &format!("id{s:05}-{u:04}")).unwrap();
        }
    }
    let start = Instant::now();
    let list = generate_unlinkability_trials(&meta, &meta, &UnlinkabilityConfig::default(), "vox2", "vox2")
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    check(
        list.len() == 611_388 && elapsed <= Duration::from_secs(30),
        format!("{} trials (611388) in {elapsed:.2?} (<= 30 s)", list.len()),
    )
}

fn dense_matrix(params: &OhnnParams) -> Vec<Vec<f64>> {
    let d = params.dim();
    let mut m: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| (i == j) as u8 as f64).collect()).collect();
    for k in 0..params.num_reflections() {
        let v = params.reflection(k);
        let vv: f64 = v.iter().map(|x| x * x).sum();
        let h: Vec<Vec<f64>> = (0..d)
            .map(|i| (0..d).map(|j| (i == j) as u8 as f64 - 2.0 * v[i] * v[j] / vv).collect())
            .collect();
        m = (0..d)
            .map(|i| (0..d).map(|j| (0..d).map(|l| h[i][l] * m[l][j]).sum()).collect())
            .collect();
    }
    m
}

fn orthogonality_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_norm = 0.0_f64;
    let mut worst_dense = 0.0_f64;
    for dim in [8usize, 32, 192] {
        for i in 0..1000 {
            let k = rng.random_range(1..=dim.min(64));
            let params = init_ohnn(dim, k, 1, rng.random()).map_err(|e| e.to_string())?;
            let scale: f64 = rng.random_range(0.01..100.0);
            let x: Vec<f64> = random_unit(&mut rng, dim).iter().map(|v| v * scale).collect();
            let y = params.forward(&x);
            let (nx, ny) = (
                x.iter().map(|v| v * v).sum::<f64>().sqrt(),
                y.iter().map(|v| v * v).sum::<f64>().sqrt(),
            );
            worst_norm = worst_norm.max((nx - ny).abs() / nx);
            if dim <= 64 && i % 10 == 0 {
                let m = dense_matrix(&params);
                for (r, yr) in m.iter().zip(&y) {
                    let mx: f64 = r.iter().zip(&x).map(|(a, b)| a * b).sum();
                    worst_dense = worst_dense.max((mx - yr).abs() / nx);
                }
            }
        }
    }
    check(
        worst_norm <= 1e-6 && worst_dense <= 1e-10,
        format!("worst relative norm change {worst_norm:.2e} (<= 1e-6), worst dense-oracle deviation {worst_dense:.2e} (<= 1e-10)"),
    )
}

fn gradient_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 1e-5;
    let mut worst = 0.0_f64;
    for _ in 0..50 {
        let dim = rng.random_range(2..=16);
        let k = rng.random_range(1..=8);
        let n = rng.random_range(2..=10);
        let b = rng.random_range(1..=12);
        let cfg = TrainConfig {
            aam_margin: rng.random_range(0.0..0.5),
            aam_scale: rng.random_range(1.0..30.0),
            dist_margin: rng.random_range(-0.5..0.5),
            dist_weight: rng.random_range(0.0..2.0),
            ..TrainConfig::default()
        };
        let params = init_ohnn(dim, k, n, rng.random()).map_err(|e| e.to_string())?;
        let batch: Vec<(Embedding, usize)> = (0..b)
            .map(|_| (Embedding::new(random_unit(&mut rng, dim)).unwrap(), rng.random_range(0..n)))
            .collect();
        let g = ohnn_gradient(&params, &batch, &cfg).map_err(|e| e.to_string())?;
        let analytic: Vec<f64> = g.reflections.iter().chain(&g.prototypes).copied().collect();
        let n_refl = params.reflections().len();
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..analytic.len() {
            let eval = |delta: f64| {
                let mut p = params.clone();
                if i < n_refl {
                    p.reflections_mut()[i] += delta;
                } else {
                    p.prototypes_mut()[i - n_refl] += delta;
                }
                total_loss(&p, &batch, &cfg).unwrap()
            };
            numeric.push((eval(h) - eval(-h)) / (2.0 * h));
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, f)| a - f).collect();
        let rel = norm(&diff) / norm(&analytic).max(norm(&numeric)).max(1e-8);
        worst = worst.max(rel);
    }
    check(worst <= 1e-4, format!("worst relative error {worst:.2e} over 50 configurations (<= 1e-4)"))
}

/// Brute force: thresholds at -inf, every midpoint between adjacent distinct
/// scores, and +inf; rates counted directly at each.
fn eer_oracle(targets: &[f64], nontargets: &[f64]) -> f64 {
    let mut all: Vec<f64> = targets.iter().chain(nontargets).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    let mut thresholds = vec![f64::NEG_INFINITY];
    thresholds.extend(all.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    thresholds.push(f64::INFINITY);
    let rates = |t: f64| {
        let far = nontargets.iter().filter(|&&s| s >= t).count() as f64 / nontargets.len() as f64;
        let frr = targets.iter().filter(|&&s| s < t).count() as f64 / targets.len() as f64;
        (far, frr)
    };
    let mut prev = rates(thresholds[0]);
    for &t in &thresholds[1..] {
        let cur = rates(t);
        if cur.0 - cur.1 <= 0.0 {
            let (dp, dc) = (prev.0 - prev.1, cur.0 - cur.1);
            let l = dp / (dp - dc);
            return 0.5 * ((prev.0 + l * (cur.0 - prev.0)) + (prev.1 + l * (cur.1 - prev.1)));
        }
        prev = cur;
    }
    unreachable!()
}

fn eer_oracle_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0_f64;
    let mut tied_sets = 0;
    for i in 0..200 {
        let nt = rng.random_range(1..=500);
        let nn = rng.random_range(1..=500);
        let levels = if i % 2 == 0 { rng.random_range(1..=5) } else { 0 };
        let mut draw = |shift: f64| -> f64 {
            if levels > 0 {
                rng.random_range(0..levels) as f64 / levels as f64
            } else {
                rng.random::<f64>() + shift
            }
        };
        let t: Vec<f64> = (0..nt).map(|_| draw(0.3)).collect();
        let n: Vec<f64> = (0..nn).map(|_| draw(0.0)).collect();
        if levels > 0 {
            tied_sets += 1;
        }
        let fast = compute_eer(&ScoreSet::from_scores(&t, &n).unwrap())
            .map_err(|e| e.to_string())?
            .eer;
        worst = worst.max((fast - eer_oracle(&t, &n)).abs());
    }
    check(
        worst <= 1e-9,
        format!("worst |fast - oracle| {worst:.2e} over 200 sets, {tied_sets} with heavy ties (<= 1e-9)"),
    )
}

fn pipeline(dir: &Path, threads: &str) -> Vec<(String, Vec<u8>)> {
    let p = |n: &str| dir.join(n).display().to_string();
    let steps: Vec<Vec<String>> = vec![
        vec!["simulate", "--num-speakers", "40", "--utts-per-speaker", "8", "--dim", "16", "--seed", "4", "-o", &p("auth.emb")],
        vec!["train-ohnn", "--embeddings", &p("auth.emb"), "--epochs", "20", "-o", &p("ohnn.ohn")],
        vec!["anonymize", "--embeddings", &p("auth.emb"), "--params", &p("ohnn.ohn"), "--strategy", "spk", "--inject-sigma", "0.1", "--seed", "3", "-o", &p("anon.emb")],
        vec!["gen-trials", "--enroll", &p("auth.tsv"), "--test", &p("anon.tsv"), "--n-diff", "20", "--seed", "9", "-o", &p("trials.tsv")],
        vec!["score", "--trials", &p("trials.tsv"), "--enroll-embeddings", &p("auth.emb"), "--test-embeddings", &p("anon.emb"), "-o", &p("scores.tsv")],
        vec!["report", "--scores", &p("scores.tsv"), "--metadata", &p("auth.tsv"), "-o", &p("report.json")],
    ]
    .into_iter()
    .map(|s| s.into_iter().map(String::from).collect())
    .collect();
    for step in steps {
        let argv = ["anonbench", "--threads", threads].into_iter().map(String::from).chain(step.clone());
        assert_eq!(anonbench::cli::run(argv), 0, "step {step:?} failed");
    }
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn determinism_suite() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = pipeline(dir.path(), "1");
    let second = pipeline(dir.path(), "4");
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.0.as_str())
        .collect();
    check(
        first.len() == second.len() && first.len() >= 12 && differing.is_empty(),
        format!("{} files compared across a 1-thread and a 4-thread run, differing: {differing:?}", first.len()),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 unlinkability trend", unlinkability_trend),
        ("2 perfect-anonymization ceiling", perfect_anonymization_ceiling),
        ("3 strategy ordering", strategy_ordering),
        ("4 FDR exactness", fdr_exactness),
        ("5 trial-count law", trial_count_law),
        ("6 orthogonality suite", orthogonality_suite),
        ("7 gradient suite", gradient_suite),
        ("8 EER oracle suite", eer_oracle_suite),
        ("9 determinism suite", determinism_suite),
    ];
    let mut failures = 0;
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS  criterion {name}: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL  criterion {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
