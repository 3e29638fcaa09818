//! Runs the whole command-line pipeline in-process, the same way the
//! `anonbench` binary would, and prints the final report.

use anonbench::cli::run;

fn step(args: &[&str]) {
    println!("$ anonbench {}", args.join(" "));
    let code = run(std::iter::once("anonbench").chain(args.iter().copied()));
    assert_eq!(code, 0, "step failed");
}

fn main() {
    let dir = std::env::temp_dir().join("anonbench-cli-example");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let p = |name: &str| dir.join(name).display().to_string();
    let (auth, params, anon, trials, scores) =
        (p("auth.emb"), p("ohnn.ohn"), p("anon.emb"), p("trials.tsv"), p("scores.tsv"));

    step(&["simulate", "--num-speakers", "60", "--utts-per-speaker", "10", "-o", &auth]);
    step(&["train-ohnn", "--embeddings", &auth, "--epochs", "50", "-o", &params]);
    step(&["anonymize", "--embeddings", &auth, "--params", &params, "--strategy", "utt", "-o", &anon]);
    step(&["gen-trials", "--enroll", &p("auth.tsv"), "--test", &p("anon.tsv"), "-o", &trials]);
    step(&[
        "score", "--trials", &trials, "--enroll-embeddings", &auth, "--test-embeddings", &anon, "-o", &scores,
    ]);
    step(&["report", "--scores", &scores, "--metadata", &p("auth.tsv"), "--bins", "10"]);
}
