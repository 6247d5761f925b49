use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use disc_core::io::{load_corpus, read_truth, LoadOptions};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

fn disc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_disc"))
        .args(args)
        .output()
        .expect("run disc")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn elicit_prevalence_variance() {
    let out = disc(&["elicit", "--ratio", "100", "--alpha", "0.9"]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).trim(), "0.25");

    let out = disc(&["elicit", "--ratio", "1000000"]);
    assert_eq!(stdout(&out).trim(), "2");
}

#[test]
fn elicit_word_variances() {
    let out = disc(&["elicit", "--ratio", "1000", "--target", "words"]);
    assert!(out.status.success());
    assert_eq!(stdout(&out), "kappa_chi 1.25\nkappa_theta 0.25\n");
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(disc(&["elicit", "--ratio=0.5"]).status.code(), Some(2));
    assert_eq!(
        disc(&["elicit", "--ratio", "10", "--target", "nope"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(disc(&["elicit"]).status.code(), Some(2));
    assert_eq!(disc(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(disc(&["fit", "--out", "/tmp/x"]).status.code(), Some(2));
}

#[test]
fn evaluate_uniform_three_senses() {
    let out = disc(&[
        "evaluate",
        "--predictions",
        p(&data("uniform_k3_predictions.tsv")),
        "--truth",
        p(&data("uniform_k3_truth.tsv")),
    ]);
    assert!(out.status.success());
    assert!(
        stdout(&out).lines().any(|l| l == "brier_score: 0.6667"),
        "{}",
        stdout(&out)
    );
}

#[test]
fn evaluate_missing_file_exits_1() {
    let out = disc(&[
        "evaluate",
        "--predictions",
        "/nonexistent/p.tsv",
        "--truth",
        p(&data("uniform_k3_truth.tsv")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_output_loads() {
    let dir = tempfile::tempdir().unwrap();
    let out = disc(&[
        "--config",
        p(&data("sim_disc.conf")),
        "--seed",
        "3",
        "--out",
        p(dir.path()),
        "simulate",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in [
        "snippets.tsv",
        "truth.tsv",
        "vocab.txt",
        "params.tsv",
        "params.bin",
        "summary.txt",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let corpus = load_corpus(&dir.path().join("snippets.tsv"), &LoadOptions::default())
        .unwrap()
        .corpus;
    assert_eq!(corpus.len(), 120);
    assert_eq!((corpus.t, corpus.g), (3, 2));
    assert!(corpus.snippets.iter().all(|s| s.words.len() == 10));
    let truth = read_truth(&dir.path().join("truth.tsv")).unwrap();
    assert_eq!(truth.labels.len(), 120);
}

#[test]
fn simulate_is_deterministic_given_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = disc(&[
            "--config",
            p(&data("sim_disc.conf")),
            "--seed",
            "9",
            "--out",
            p(d.path()),
            "simulate",
        ]);
        assert!(out.status.success());
    }
    for f in ["snippets.tsv", "truth.tsv", "params.tsv", "summary.txt"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn fit_smoke_run_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = disc(&[
            "--config",
            p(&data("fit_tiny.conf")),
            "--out",
            p(d.path()),
            "--chains",
            "2",
            "fit",
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for f in [
        "chain1.bin",
        "chain2.bin",
        "manifest.txt",
        "timing.tsv",
        "prevalence.tsv",
        "predictions.tsv",
    ] {
        assert!(a.path().join(f).exists(), "{f}");
    }
    let summary = std::fs::read(a.path().join("summary.txt")).unwrap();
    assert_eq!(
        summary,
        std::fs::read(b.path().join("summary.txt")).unwrap()
    );
    let text = String::from_utf8(summary).unwrap();
    let brier: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("brier_score: "))
        .expect("scored against the bundled annotations")
        .parse()
        .unwrap();
    assert!(brier < 0.1, "{brier}");

    let manifest = std::fs::read_to_string(a.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("format_version = 1"));

    let diag = disc(&[
        "diagnose",
        p(&a.path().join("chain1.bin")),
        p(&a.path().join("chain2.bin")),
    ]);
    assert!(diag.status.success());
    assert!(stdout(&diag).contains("chains_agree: "));

    let eval = disc(&[
        "evaluate",
        "--store",
        p(&a.path().join("chain1.bin")),
        "--data",
        p(&data("tiny_snippets.tsv")),
        "--truth",
        p(&data("tiny_truth.tsv")),
        "--positive",
        "1",
    ]);
    assert!(
        eval.status.success(),
        "{}",
        String::from_utf8_lossy(&eval.stderr)
    );
    assert!(stdout(&eval).contains("sensitivity: "));
}

#[test]
fn fit_rejects_unknown_sampler() {
    let dir = tempfile::tempdir().unwrap();
    let out = disc(&[
        "--config",
        p(&data("fit_tiny.conf")),
        "--out",
        p(dir.path()),
        "--sampler",
        "gibbs",
        "fit",
    ]);
    assert_eq!(out.status.code(), Some(2));
}
