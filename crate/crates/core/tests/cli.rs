use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mriqa::domain::QualityLabel;
use mriqa::forest::{fit_forest, ForestConfig, NUM_FEATURES};
use mriqa::nrnet::{Checkpoint, NRNet, NRNetConfig};

fn mriqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mriqa"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = mriqa(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn synth(out: &Path, seed: &str) -> String {
    ok(&[
        "synth-gen",
        "--out",
        s(out),
        "--volumes-per-class",
        "2",
        "--slices",
        "60",
        "--canvas",
        "16",
        "--test-per-class",
        "1,1,1",
        "--unlabeled-per-class",
        "1,0,1",
        "--seed",
        seed,
    ])
}

#[test]
fn synth_gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    let report = synth(&a, "4");
    assert!(
        report.contains("train_volumes=6") && report.contains("corrupted_volumes=3"),
        "{report}"
    );
    synth(&b, "4");
    synth(&c, "5");
    for file in [
        "train.tsv",
        "train_truth.tsv",
        "test_truth.tsv",
        "unlabeled.tsv",
        "images/train000_007.pgm",
    ] {
        let read = |d: &Path| std::fs::read(d.join(file)).unwrap();
        assert_eq!(read(&a), read(&b), "{file}");
    }
    assert_ne!(
        std::fs::read(a.join("images/train000_007.pgm")).unwrap(),
        std::fs::read(c.join("images/train000_007.pgm")).unwrap()
    );
}

/// A freshly initialised network and a forest fitted on arbitrary features
/// are enough to exercise the assess and eval plumbing.
fn models(dir: &Path) -> (PathBuf, PathBuf) {
    let ckpt = dir.join("net.ckpt");
    Checkpoint::new(NRNet::new(NRNetConfig::tiny(16), 1).unwrap())
        .save(&ckpt)
        .unwrap();
    let x: Vec<Vec<f64>> = (0..9)
        .map(|i| {
            (0..NUM_FEATURES)
                .map(|f| ((i * 7 + f) % 5) as f64)
                .collect()
        })
        .collect();
    let y: Vec<QualityLabel> = (0..9).map(|i| QualityLabel::ALL[i % 3]).collect();
    let forest = dir.join("forest.txt");
    fit_forest(&x, &y, &ForestConfig::default(), 2)
        .unwrap()
        .save(&forest)
        .unwrap();
    (ckpt, forest)
}

#[test]
fn assess_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, "1");
    let (ckpt, forest) = models(dir.path());
    let pred = dir.path().join("pred.tsv");
    let report = ok(&[
        "assess",
        "--ckpt",
        s(&ckpt),
        "--forest",
        s(&forest),
        "--input",
        s(&data.join("test.tsv")),
        "--out",
        s(&pred),
    ]);
    assert!(report.contains("volumes=3"), "{report}");
    let text = std::fs::read_to_string(&pred).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 3 * 61);
    for volume in ["test000", "test001", "test002"] {
        let mine: Vec<&&str> = rows
            .iter()
            .filter(|r| r.starts_with(&format!("{volume}\t")))
            .collect();
        assert_eq!(mine.len(), 61);
        assert_eq!(
            mine.iter()
                .filter(|r| r.split('\t').nth(1) == Some("volume"))
                .count(),
            1
        );
    }
    let eval = ok(&[
        "eval",
        "--pred",
        s(&pred),
        "--truth",
        s(&data.join("test_truth.tsv")),
    ]);
    assert!(
        eval.contains("slice metrics") && eval.contains("volume metrics"),
        "{eval}"
    );

    // a directory of slices works as input too
    let from_dir = dir.path().join("pred_dir.tsv");
    ok(&[
        "assess",
        "--ckpt",
        s(&ckpt),
        "--forest",
        s(&forest),
        "--input",
        s(&data.join("images")),
        "--out",
        s(&from_dir),
    ]);
    let rows = std::fs::read_to_string(&from_dir)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .count();
    assert_eq!(rows, (6 + 3 + 2) * 61);
}

#[test]
fn eval_reproduces_the_fixture_metrics() {
    let out = ok(&[
        "eval",
        "--pred",
        s(&fixture("t1_cres_pred.tsv")),
        "--truth",
        s(&fixture("t1_cres_truth.tsv")),
    ]);
    for needle in ["0.9473", "0.9917", "1.0000"] {
        assert!(out.contains(needle), "{needle} missing from\n{out}");
    }
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.tsv");
    let out = mriqa(&["eval", "--pred", s(&missing), "--truth", s(&missing)]);
    assert_eq!(out.status.code(), Some(8));
    let bad = dir.path().join("bad.tsv");
    std::fs::write(&bad, "v\t0\t0.5\n").unwrap();
    let out = mriqa(&[
        "eval",
        "--pred",
        s(&bad),
        "--truth",
        s(&fixture("t1_cres_truth.tsv")),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(mriqa(&["frobnicate"]).status.code(), Some(1));
    assert!(ok(&["print-config", "--kind", "train"]).contains("epochs"));
}
