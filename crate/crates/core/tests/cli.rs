use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use focalstack::imageio::{read_rgb, write_rgb16, Transfer};
use focalstack::raster::Rgb;
use focalstack::representation::Representation;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_focalstack"))
        .args(args)
        .output()
        .expect("spawn focalstack")
}

fn ok_json(args: &[&str]) -> Value {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Synthesizes a small two-plane stack and builds its container.
fn fixture(root: &Path) -> (PathBuf, PathBuf) {
    let stack = root.join("stack");
    let fsr = root.join("fsr");
    ok_json(&["synth", "two-plane", p(&stack), "--width", "64", "--height", "48"]);
    let summary = ok_json(&["build", p(&stack), p(&fsr), "--cfm", "builtin"]);
    assert_eq!(summary["k"], 10);
    assert!(summary["container_bytes"].as_u64().unwrap() > 0);
    let labels: Vec<u64> = serde_json::from_value(summary["labels"].clone()).unwrap();
    assert!(labels.contains(&2) && labels.contains(&8), "{labels:?}");
    (stack, fsr)
}

fn max_diff_where(a: &Rgb, b: &Rgb, keep: impl Fn(usize, usize) -> bool) -> f32 {
    let (w, h) = a.dims();
    let mut m = 0.0f32;
    for y in 0..h {
        for x in 0..w {
            if keep(x, y) {
                for c in 0..3 {
                    m = m.max((a.get(x, y)[c] - b.get(x, y)[c]).abs());
                }
            }
        }
    }
    m
}

#[test]
fn build_and_refocus_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let (stack, fsr) = fixture(tmp.path());
    let rep = Representation::deserialize(&fsr).unwrap();
    let img = |name: &str| read_rgb(&tmp.path().join(name), Transfer::Linear).unwrap();
    let quantum = 1.0 / 65535.0 + 1e-6;

    // every slice in focus reproduces the focus image
    succeeds(&["refocus", p(&fsr), p(&tmp.path().join("aif.png")), "--aif"]);
    assert!(max_diff_where(&img("aif.png"), &rep.focus.image, |_, _| true) <= quantum);

    // a non-contiguous set naming every present label is all-in-focus too
    let present: Vec<String> = rep.labels().iter().map(|l| l.to_string()).collect();
    assert!(present.windows(2).any(|w| w[1].parse::<u16>().unwrap() > w[0].parse::<u16>().unwrap() + 1));
    succeeds(&["refocus", p(&fsr), p(&tmp.path().join("npr.png")), "--labels", &present.join(",")]);
    assert_eq!(
        std::fs::read(tmp.path().join("npr.png")).unwrap(),
        std::fs::read(tmp.path().join("aif.png")).unwrap()
    );

    // a near range keeps the foreground sharp and blurs the background
    succeeds(&["refocus", p(&fsr), p(&tmp.path().join("near.png")), "--range", "1", "3"]);
    let near = img("near.png");
    assert!(max_diff_where(&near, &rep.focus.image, |x, _| x < 20) <= quantum);
    assert!(max_diff_where(&near, &rep.focus.image, |x, _| x > 40) > 0.01);

    // --spec gives the same bytes as the equivalent flag
    let spec = tmp.path().join("spec.json");
    std::fs::write(&spec, r#"{"schema":"fsr/1","mode":"single","labels":[2]}"#).unwrap();
    succeeds(&["refocus", p(&fsr), p(&tmp.path().join("a.png")), "--slice", "2"]);
    succeeds(&["refocus", p(&fsr), p(&tmp.path().join("b.png")), "--spec", p(&spec)]);
    assert_eq!(
        std::fs::read(tmp.path().join("a.png")).unwrap(),
        std::fs::read(tmp.path().join("b.png")).unwrap()
    );

    let scores = ok_json(&[
        "refocus",
        p(&fsr),
        p(&tmp.path().join("c.png")),
        "--slice",
        "2",
        "--compare",
        p(&stack.join("slice_02.png")),
    ]);
    assert!(scores["psnr"].as_f64().unwrap() > 30.0, "{scores}");
    assert!(scores["ssim"].as_f64().unwrap() > 0.8, "{scores}");
}

fn succeeds(args: &[&str]) {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn failures_exit_with_codes_and_json() {
    let tmp = tempfile::tempdir().unwrap();
    let lone = tmp.path().join("lone");
    std::fs::create_dir(&lone).unwrap();
    write_rgb16(&lone.join("only.png"), &Rgb::filled(8, 8, [0.5; 3])).unwrap();
    let out = run(&["build", p(&lone), p(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "MissingSlices");

    let (_, fsr) = fixture(tmp.path());
    let out = run(&["refocus", p(&fsr), p(&tmp.path().join("y.png")), "--slice", "11"]);
    assert_eq!(out.status.code(), Some(3));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "InvalidTargets");
    assert!(err["message"].as_str().unwrap().contains("11"));

    let out = run(&["refocus", p(&fsr), p(&tmp.path().join("y.png")), "--range", "2", "1"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!tmp.path().join("y.png").exists());
}

#[test]
fn analyze_measures_writes_ranking_and_composite() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok_json(&["synth", "corpus", p(&a), "--index", "0", "--width", "64", "--height", "64"]);
    ok_json(&["synth", "corpus", p(&b), "--index", "1", "--width", "64", "--height", "64"]);
    let out = tmp.path().join("out");
    let summary = ok_json(&["analyze-measures", p(&a), p(&b), "--out-dir", p(&out), "--members", "3"]);
    // at most one member per cluster of measures
    assert!((1..=3).contains(&summary["cfm"].as_array().unwrap().len()), "{summary}");
    let one = tmp.path().join("one");
    let summary = ok_json(&["analyze-measures", p(&a), "--out-dir", p(&one), "--members", "1"]);
    assert_eq!(summary["cfm"].as_array().unwrap().len(), 1);

    let ranking = std::fs::read_to_string(out.join("ranking.csv")).unwrap();
    let mut lines = ranking.lines();
    assert_eq!(lines.next(), Some("rank,measure,score"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert!(rows.len() >= 3);
    let scores: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]), "{scores:?}");
    assert!(out.join("distances.csv").is_file());

    // the composite feeds back into build
    let fsr = tmp.path().join("fsr");
    ok_json(&["build", p(&a), p(&fsr), "--cfm", p(&out.join("cfm.json"))]);
}
