use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn regad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regad"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path) {
    let out = regad(&[
        "synth", "--out", s(dir), "--categories", "3", "--train-per-cat", "4", "--test-per-cat", "6",
        "--size", "32", "--seed", "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

const SMALL: &[&str] = &[
    "--kind", "synthetic", "--side", "32", "--backbone", "random", "--jobs", "1", "--no-augment",
];

#[test]
fn help_exits_zero_and_unknown_flags_exit_two() {
    for sub in ["synth", "train", "estimate", "score", "eval", "bench"] {
        let out = regad(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub} --help");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));
    }
    let out = regad(&["train", "--definitely-not-a-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(regad(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn failed_run_exits_one_with_a_single_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let out = regad(&[
        "estimate", "--ckpt", s(&missing), "--data-root", s(&missing), "--category", "x", "--out",
        s(&dir.path().join("stats.regad")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = stderr.lines().filter(|l| l.starts_with("error[")).collect();
    assert_eq!(lines.len(), 1, "{stderr}");
    assert!(lines[0].starts_with("error[checkpoint]"), "{stderr}");

    let out = regad(&["bench", "--data-root", s(&missing), "--out", s(dir.path()), "--epsilon=-1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[config]"));
}

#[test]
fn train_estimate_score_round() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data);
    let ckpt = dir.path().join("ckpt");
    let mut args = vec![
        "train", "--data-root", s(&data), "--target", "cat00", "--epochs", "1", "--batch-size", "2",
        "--out", s(&ckpt),
    ];
    args.extend(SMALL.iter().filter(|a| **a != "--no-augment"));
    let out = regad(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["model.safetensors", "meta.txt", "train_log.csv", "resolved_config.txt", "manifest.txt"] {
        assert!(ckpt.join(f).is_file(), "missing {f}");
    }
    let log = fs::read_to_string(ckpt.join("train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,step,loss,lr\n"));

    let stats = dir.path().join("est").join("stats.regad");
    let out = regad(&[
        "estimate", "--ckpt", s(&ckpt), "--data-root", s(&data), "--kind", "synthetic", "--category",
        "cat00", "--k", "2", "--seed", "1", "--no-augment", "--out", s(&stats),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = fs::read_to_string(dir.path().join("est").join("manifest.txt")).unwrap();
    assert!(manifest.contains("stats.regad"));

    let heat = dir.path().join("score").join("map.png");
    let image = data.join("cat00").join("test").join("blob").join("002.png");
    let out = regad(&[
        "score", "--ckpt", s(&ckpt), "--stats", s(&stats), "--image", s(&image), "--out-heatmap", s(&heat),
        "--out-score", "-",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let score: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    assert!(score.is_finite() && score >= 0.0);
    assert_eq!(image::open(&heat).unwrap().width(), 32);
    assert!(heat.with_file_name("resolved_config.txt").is_file());
}

#[test]
fn bench_is_reproducible_from_flags_and_from_its_echoed_config() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data);
    let run = |out: &Path, extra: &[&str]| {
        let mut args = vec!["bench", "--data-root", s(&data), "--out", s(out)];
        args.extend_from_slice(extra);
        let o = regad(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    let mut flags = vec![
        "--epochs", "1", "--batch-size", "2", "--k", "2", "--runs", "2", "--no-timing", "--seed", "4",
    ];
    flags.extend_from_slice(SMALL);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    run(&a, &flags);
    run(&b, &flags);
    let echoed = a.join("resolved_config.txt");
    run(&c, &["--config", s(&echoed)]);

    for f in ["report.csv", "summary.csv"] {
        let first = fs::read(a.join(f)).unwrap();
        assert_eq!(first, fs::read(b.join(f)).unwrap(), "{f} differs between identical runs");
        assert_eq!(first, fs::read(c.join(f)).unwrap(), "{f} differs when re-run from the echoed config");
    }
    let report = fs::read_to_string(a.join("report.csv")).unwrap();
    assert!(report.starts_with("category,k,seed,image_auc,pixel_auc,adapt_seconds\n"));
    assert_eq!(report.lines().count(), 1 + 3 * 2);
    assert!(report.lines().skip(1).all(|l| l.ends_with(",NA")));
    let summary = fs::read_to_string(a.join("summary.csv")).unwrap();
    assert!(summary.lines().last().unwrap().starts_with("average,2,2,"));
    let manifest = fs::read_to_string(a.join("manifest.txt")).unwrap();
    for f in ["report.csv", "summary.csv", "resolved_config.txt", "ckpt/cat01/model.safetensors"] {
        assert!(manifest.contains(f), "manifest lacks {f}");
    }
}
