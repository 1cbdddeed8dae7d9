use std::path::Path;
use std::process::{Command, Output};

use edgeflow::datamodel::flo_read;

fn edgeflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgeflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        stdout(o),
        String::from_utf8_lossy(&o.stderr)
    );
}

const SMALL: &str = "[synth]\nheight = 48\nwidth = 64\nmin_size = 2.5\nmax_size = 9.0\n\n[net]\nbase_channels = 8\nblocks_per_stage = 1\n";

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_2() {
    let o = edgeflow(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(edgeflow(&["maxspeed", "--bogus"]).status.code(), Some(2));
    assert_eq!(edgeflow(&["maxspeed", "--dr", "1.5"]).status.code(), Some(2));
    assert_eq!(edgeflow(&["chunk-sweep", "--weights", "w", "--chunks", "2by2"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let o = edgeflow(&["eval", "--data", "/nonexistent/dir", "--weights", "/nonexistent/w.efnw"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn maxspeed_prints_observations_and_speed() {
    let o = edgeflow(&["maxspeed", "--dr", "0.9", "--drs", "0.99", "--fps", "10.8"]);
    ok(&o);
    let out = stdout(&o);
    assert!(out.contains("N=2"), "{out}");
    assert!(out.lines().any(|l| l.starts_with("V=")), "{out}");
    let dir = tempfile::tempdir().unwrap();
    let svg = dir.path().join("v.svg");
    let curves = dir.path().join("v.jsonl");
    ok(&edgeflow(&["maxspeed", "--plot", p(&svg), "--curves", p(&curves)]));
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));
    assert!(std::fs::read_to_string(&curves).unwrap().lines().count() > 100);
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("run.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let cfg = p(&cfg);

    let (data_a, data_b) = (d.join("a"), d.join("b"));
    ok(&edgeflow(&["--config", cfg, "--seed", "4", "synth", "--out", p(&data_a), "--count", "4"]));
    ok(&edgeflow(&["--config", cfg, "--seed", "4", "synth", "--out", p(&data_b), "--count", "4"]));
    for f in ["manifest.txt", "00002_img1.png", "00002_flow.flo"] {
        assert_eq!(std::fs::read(data_a.join(f)).unwrap(), std::fs::read(data_b.join(f)).unwrap(), "{f}");
    }

    let run = d.join("run");
    ok(&edgeflow(&["--config", cfg, "train", "--data", p(&data_a), "--out", p(&run), "--epochs", "1", "--batch", "2"]));
    let weights = run.join("final.efnw");
    assert!(run.join("history.jsonl").exists());

    let flo = d.join("f.flo");
    let png = d.join("f.png");
    let (i1, i2) = (data_a.join("00000_img1.png"), data_a.join("00000_img2.png"));
    ok(&edgeflow(&["infer", "--pair", p(&i1), p(&i2), "--weights", p(&weights), "--out", p(&flo), "--png", p(&png)]));
    let f = flo_read(&flo).unwrap();
    assert_eq!((f.height(), f.width()), (48, 64));
    assert!(png.exists());
    let flo2 = d.join("g.flo");
    ok(&edgeflow(&["infer", "--pair", p(&i1), p(&i2), "--weights", p(&weights), "--out", p(&flo2), "--chunks", "1x1"]));
    assert_eq!(std::fs::read(&flo).unwrap(), std::fs::read(&flo2).unwrap());

    let report = d.join("eval.jsonl");
    let o = edgeflow(&["eval", "--data", p(&data_a), "--weights", p(&weights), "--report", p(&report)]);
    ok(&o);
    assert!(stdout(&o).contains("mean EPE"));
    assert_eq!(std::fs::read_to_string(&report).unwrap().lines().count(), 5);

    let q = d.join("q.efnq");
    let o = edgeflow(&["--config", cfg, "quantize", "--weights", p(&weights), "--out", p(&q), "--calib", p(&data_a)]);
    ok(&o);
    assert!(stdout(&o).contains("coverage"));
    ok(&edgeflow(&["eval", "--data", p(&data_a), "--weights", p(&q)]));

    let o = edgeflow(&[
        "--config", cfg, "chunk-sweep", "--weights", p(&weights), "--count", "2", "--height", "64", "--width", "64",
        "--overlaps", "0,8,16", "--reps", "2",
    ]);
    ok(&o);
    let table = stdout(&o);
    assert_eq!(table.lines().count(), 2 + 3, "{table}");
    assert!(table.contains("40x40"), "{table}");

    let o = edgeflow(&["bench", "--weights", p(&weights), "--height", "64", "--width", "64", "--factors", "1,2", "--reps", "5", "--warmup", "0"]);
    ok(&o);
    assert!(stdout(&o).contains("host:"));

    let o = edgeflow(&[
        "ballbench", "--weights", p(&weights), "--height", "64", "--width", "64", "--radii", "8,4", "--overlaps", "0,16",
    ]);
    ok(&o);
    assert_eq!(stdout(&o).lines().count(), 3);
}

#[test]
fn config_errors_are_argument_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nnope = 1\n").unwrap();
    assert_eq!(edgeflow(&["--config", p(&cfg), "maxspeed"]).status.code(), Some(2));
    assert_eq!(edgeflow(&["--config", "/nonexistent.toml", "maxspeed"]).status.code(), Some(2));
}
