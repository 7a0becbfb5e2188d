use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rdepth(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rdepth"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn render(dir: &Path, scenes: &str) -> Output {
    rdepth(
        &["render-dataset", "--seed", "3", "--scenes", scenes, "--frames", "10", "--size", "32x48", "--out", "ds"],
        dir,
    )
}

#[test]
fn render_writes_manifest_and_config() {
    let tmp = tempfile::tempdir().unwrap();
    let o = render(tmp.path(), "2");
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = fs::read_to_string(tmp.path().join("ds/manifest.txt")).unwrap();
    assert_eq!(manifest.lines().count(), 2);
    assert!(manifest.starts_with("seq_0000 frames=10 size=32x48"));
    let cfg = fs::read_to_string(tmp.path().join("ds/render.cfg")).unwrap();
    assert!(cfg.contains("data.seed=3"));
    assert!(tmp.path().join("ds/seq_0001").is_dir());
}

#[test]
fn render_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    fs::create_dir_all(&a).unwrap();
    fs::create_dir_all(&b).unwrap();
    render(&a, "1");
    render(&b, "1");
    for f in ["poses.csv", "depth_0004.pfm", "frame_0007.png"] {
        let x = fs::read(a.join("ds/seq_0000").join(f)).unwrap();
        let y = fs::read(b.join("ds/seq_0000").join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
}

#[test]
fn render_edge_cases() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(render(tmp.path(), "0").status.code(), Some(0));
    let o = rdepth(&["render-dataset", "--scenes", "1", "--size", "30x48", "--out", "bad"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    let o = rdepth(&["render-dataset", "--scenes", "1", "--difficulty", "brutal", "--out", "bad"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_and_help() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(rdepth(&["--help"], tmp.path()).status.code(), Some(0));
    assert_eq!(rdepth(&["frobnicate"], tmp.path()).status.code(), Some(1));
    assert_eq!(rdepth(&["eval", "--dataset", "x"], tmp.path()).status.code(), Some(1));
}

#[test]
fn eval_stubs() {
    let tmp = tempfile::tempdir().unwrap();
    render(tmp.path(), "2");
    let o = rdepth(&["eval", "--stub", "gt", "--dataset", "ds", "--buckets", "0,4,8,50", "--out", "ev"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let record = stdout(&o).lines().next().unwrap().to_string();
    let sc: f64 = record.split_whitespace().next().unwrap().trim_start_matches("sc_inv=").parse().unwrap();
    assert!(sc < 1e-9, "{record}");
    assert!(record.ends_with("n_pixels=3072"), "{record}");
    let ev = tmp.path().join("ev");
    assert!(fs::read_to_string(ev.join("ranges.csv")).unwrap().starts_with("lower,upper,sc_inv,n_pixels"));
    assert!(ev.join("eval.cfg").exists());
    let pngs = fs::read_dir(&ev)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count();
    assert_eq!(pngs, 4);

    let o = rdepth(&["eval", "--stub", "constant:0.2", "--dataset", "ds"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("sc_inv="));
    let o = rdepth(&["eval", "--stub", "oracle", "--dataset", "ds"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn eval_missing_dataset_is_io_or_parse() {
    let tmp = tempfile::tempdir().unwrap();
    render(tmp.path(), "1");
    fs::remove_file(tmp.path().join("ds/seq_0000/poses.csv")).unwrap();
    let o = rdepth(&["eval", "--stub", "gt", "--dataset", "ds"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_resume_and_eval() {
    let tmp = tempfile::tempdir().unwrap();
    render(tmp.path(), "2");
    let o = rdepth(
        &["train", "--out", "run", "--data", "ds", "--max-steps", "2", "--set", "train.checkpoint_interval=1"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let run = tmp.path().join("run");
    let resolved = fs::read_to_string(run.join("resolved.cfg")).unwrap();
    assert!(resolved.contains("train.lr=0.0002"));
    assert!(resolved.contains("train.max_steps=2"));
    assert_eq!(fs::read_to_string(run.join("train_log.csv")).unwrap().lines().count(), 3);

    let o = rdepth(&["train", "--out", "run", "--data", "ds", "--max-steps", "3", "--resume"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("finished step 3"));

    let o = rdepth(&["eval", "--checkpoint", "run/final.ckpt", "--dataset", "ds", "--held-out"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("n_pixels=1536"));

    // Size mismatch between checkpoint and data.
    let o = rdepth(&["render-dataset", "--scenes", "1", "--frames", "10", "--size", "32x32", "--out", "small"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    let o = rdepth(&["eval", "--checkpoint", "run/final.ckpt", "--dataset", "small"], tmp.path());
    assert_eq!(o.status.code(), Some(1));

    fs::write(tmp.path().join("junk.ckpt"), b"not a checkpoint").unwrap();
    let o = rdepth(&["eval", "--checkpoint", "junk.ckpt", "--dataset", "ds"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_rejects_unknown_key() {
    let tmp = tempfile::tempdir().unwrap();
    let o = rdepth(&["train", "--out", "run", "--set", "train.learning_rate=1"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    fs::write(tmp.path().join("bad.cfg"), "model.window = ten\n").unwrap();
    let o = rdepth(&["train", "--out", "run", "--config", "bad.cfg"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_numeric_abort_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    render(tmp.path(), "2");
    let o = rdepth(
        &["train", "--out", "run", "--data", "ds", "--max-steps", "5", "--set", "train.lr=1e30", "--set", "train.clip_norm=1e30"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(tmp.path().join("run/last_good.ckpt").exists());
}

#[test]
fn gradcheck_passes_and_detects_fault() {
    let tmp = tempfile::tempdir().unwrap();
    let o = rdepth(&["gradcheck", "--seed", "2"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.lines().filter(|l| l.starts_with("PASS")).count() >= 19);
    assert!(out.contains("network_bptt"));

    let o = rdepth(&["gradcheck", "--inject-fault", "conv_lstm_step"], tmp.path());
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("conv_lstm_step"));
    let o = rdepth(&["gradcheck", "--inject-fault", "nope"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
}
