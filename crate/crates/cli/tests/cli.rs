use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn int3d(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_int3d"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = int3d(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const CONFIG: &str = "# tiny network
feature_dim = 8
sa_levels = 32:0.4:8:8 | 8:0.8:8:8,16
fp_widths = 16 | 8
head_mlp_widths = 8,8
output_mlp_widths = 16,1
max_epochs = 1
";

#[test]
fn end_to_end_commands() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&[
        "gen-synth", "--out", s(&data), "--scenes", "3", "--samples-per-scene", "2", "--clutter", "simple", "--seed", "1",
        "--points", "128", "--horizons", "500,1000",
    ]);
    let train_list = fs::read_to_string(data.join("train.txt")).unwrap();
    let test_list = fs::read_to_string(data.join("test.txt")).unwrap();
    assert_eq!(train_list.lines().count() + test_list.lines().count(), 12);

    let cfg = dir.path().join("tiny.cfg");
    fs::write(&cfg, CONFIG).unwrap();
    let ckpt = dir.path().join("m.ckpt");
    ok(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&ckpt)]);
    assert!(ckpt.exists());

    let report = dir.path().join("report.tsv");
    let stdout = ok(&["eval", "--data", s(&data), "--method", "ours", "--ckpt", s(&ckpt), "--horizons", "500,1000", "--report", s(&report)]);
    assert_eq!(fs::read_to_string(&report).unwrap(), stdout);
    assert!(stdout.starts_with("method\thorizon_ms\tsamples\tsim\tauc\tmiou\tdice\n"));
    assert!(dir.path().join("report.json").exists());
    ok(&["eval", "--data", s(&data), "--method", "head", "--report", s(&dir.path().join("head.tsv"))]);

    let sample = data.join(test_list.lines().next().unwrap());
    let heat = dir.path().join("heat.f32");
    ok(&["predict", "--sample", s(&sample), "--ckpt", s(&ckpt), "--out", s(&heat)]);
    assert_eq!(fs::metadata(&heat).unwrap().len(), 128 * 4);

    let camera = dir.path().join("camera.txt");
    fs::write(&camera, "extrinsic = 1 0 0 0  0 1 0 0  0 0 1 0  0 0 0 1\nfx = 500\nfy = 500\ncx = 320\ncy = 240\nwidth = 640\nheight = 480\n").unwrap();
    let boxed = ok(&["project", "--sample", s(&sample), "--heatmap", s(&heat), "--camera", s(&camera), "--threshold", "0.0"]);
    assert!(!boxed.trim().is_empty());

    let timing = ok(&["timing", "--ckpt", s(&ckpt), "--sample", s(&sample), "--reps", "3", "--warmup", "1"]);
    assert!(timing.starts_with("3 runs after 1 warm-up"));
}

#[test]
fn argument_and_format_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(int3d(&["eval", "--method", "nonsense"]).status.code(), Some(2));
    assert_eq!(int3d(&["frobnicate"]).status.code(), Some(2));

    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "colour = blue\n").unwrap();
    let out = int3d(&["train", "--data", s(dir.path()), "--config", s(&cfg), "--out", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));

    let ckpt = dir.path().join("junk.ckpt");
    fs::write(&ckpt, b"not a checkpoint").unwrap();
    let out = int3d(&["timing", "--ckpt", s(&ckpt), "--sample", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("byte offset 0"));
}

#[test]
fn numeric_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["gen-synth", "--out", s(&data), "--scenes", "3", "--samples-per-scene", "3", "--points", "512", "--horizons", "500"]);
    let cfg = dir.path().join("huge.cfg");
    fs::write(&cfg, format!("{}learning_rate = 1e300\nbatch_size = 1\n", CONFIG.replace("max_epochs = 1", "max_epochs = 3"))).unwrap();
    let out = int3d(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&dir.path().join("m.ckpt"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("step"));
}
