use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn tar() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tar"));
    c.env_remove("TAR_SEED");
    c
}

fn run(args: &[&str], cwd: &Path) -> Output {
    tar().args(args).current_dir(cwd).output().expect("spawn tar")
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = run(args, cwd);
    assert!(
        out.status.success(),
        "tar {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn synth_small(dir: &Path, name: &str) -> PathBuf {
    ok(
        &["synth", "--out", name, "--preset", "micro", "--train", "6", "--fewshot", "3", "--test", "3", "--seed", "4"],
        dir,
    );
    dir.join(name)
}

fn train_small(dir: &Path, run_id: &str, extra: &[&str]) -> PathBuf {
    let mut args = vec![
        "train", "--data", "data", "--domain", "blendswap", "--preset", "micro", "--epochs", "2", "--batch-size",
        "4", "--threads", "1", "--seed", "9", "--run-id", run_id,
    ];
    args.extend_from_slice(extra);
    ok(&args, dir);
    dir.join("runs").join(run_id)
}

#[test]
fn synth_is_deterministic_and_uses_tar_seed() {
    let t = tempfile::tempdir().unwrap();
    let a = synth_small(t.path(), "a");
    let b = synth_small(t.path(), "b");
    let ma = std::fs::read(a.join("manifest.csv")).unwrap();
    assert_eq!(ma, std::fs::read(b.join("manifest.csv")).unwrap());
    let sample = "blendswap/test/fake";
    let first = std::fs::read_dir(a.join(sample)).unwrap().next().unwrap().unwrap().file_name();
    assert_eq!(
        std::fs::read(a.join(sample).join(&first)).unwrap(),
        std::fs::read(b.join(sample).join(&first)).unwrap()
    );
    // three domains × 2 labels × (6 + 3 + 3) images, plus the header
    assert_eq!(String::from_utf8(ma.clone()).unwrap().lines().count(), 1 + 3 * 2 * 12);

    let out = tar()
        .args(["synth", "--out", "c", "--preset", "micro", "--train", "6", "--fewshot", "3", "--test", "3"])
        .env("TAR_SEED", "4")
        .current_dir(t.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(ma, std::fs::read(t.path().join("c/manifest.csv")).unwrap());
    assert!(a.join("run.json").is_file());
}

#[test]
fn train_twice_gives_identical_bytes() {
    let t = tempfile::tempdir().unwrap();
    synth_small(t.path(), "data");
    let a = train_small(t.path(), "a", &[]);
    let b = train_small(t.path(), "b", &[]);
    for f in ["model.tarc", "history.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let hist = std::fs::read_to_string(a.join("history.csv")).unwrap();
    assert_eq!(hist.lines().count(), 3);
    let run: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["command"], "train");
    assert_eq!(run["seed"], 9);
    assert_eq!(run["config"]["train"]["epochs"], 2);
}

#[test]
fn flags_override_config_file() {
    let t = tempfile::tempdir().unwrap();
    synth_small(t.path(), "data");
    std::fs::write(
        t.path().join("cfg.json"),
        r#"{"preset": "micro", "domain": "blendswap", "train": {"epochs": 1, "batch_size": 4}}"#,
    )
    .unwrap();
    ok(&["train", "--config", "cfg.json", "--data", "data", "--epochs", "3", "--run-id", "c"], t.path());
    let hist = std::fs::read_to_string(t.path().join("runs/c/history.csv")).unwrap();
    assert_eq!(hist.lines().count(), 4);

    std::fs::write(t.path().join("bad.json"), r#"{"bogus": 1}"#).unwrap();
    let out = run(&["train", "--config", "bad.json"], t.path());
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn inspect_reports_and_rejects_damage() {
    let t = tempfile::tempdir().unwrap();
    synth_small(t.path(), "data");
    let dir = train_small(t.path(), "m", &[]);
    let ckpt = dir.join("model.tarc");
    let out = ok(&["inspect", ckpt.to_str().unwrap()], t.path());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("(ok)") && text.contains("reference figure: 45"), "{text}");

    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes[60] ^= 0x10;
    std::fs::write(t.path().join("bad.tarc"), &bytes).unwrap();
    let out = run(&["inspect", "bad.tarc"], t.path());
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("CRC"));

    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes[4] = 7;
    std::fs::write(t.path().join("future.tarc"), &bytes).unwrap();
    let out = run(&["inspect", "future.tarc"], t.path());
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("unsupported checkpoint version 7"), "{}", stderr(&out));
}

#[test]
fn eval_transfer_and_cam() {
    let t = tempfile::tempdir().unwrap();
    synth_small(t.path(), "data");
    let dir = train_small(t.path(), "m", &[]);
    let ckpt = dir.join("model.tarc");
    let ck = ckpt.to_str().unwrap();

    ok(&["eval", "--checkpoint", ck, "--data", "data", "--brightness", "-0.3", "--contrast", "1.3"], t.path());
    let report = std::fs::read_to_string(t.path().join("runs/eval/table/report.csv")).unwrap();
    assert_eq!(report.lines().count(), 2);
    let records = std::fs::read_to_string(t.path().join("runs/eval/table/records-localwarp.csv")).unwrap();
    assert_eq!(records.lines().count(), 1 + 6);
    let out = run(&["eval", "--checkpoint", ck, "--data", "data", "--domains", "deepfake"], t.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("blendswap, sharpswap, localwarp"));

    ok(
        &[
            "transfer", "--checkpoint", ck, "--data", "data", "--source", "blendswap", "--seq", "localwarp,sharpswap",
            "--shots", "3", "--epochs", "1", "--batch-size", "3", "--threads", "1",
        ],
        t.path(),
    );
    let table = std::fs::read_to_string(t.path().join("runs/transfer/table/transfer.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(t.path().join("runs/transfer/stage2-sharpswap.tarc").is_file());
    let out = run(
        &["transfer", "--checkpoint", ck, "--data", "data", "--source", "blendswap", "--seq", "localwarp"],
        t.path(),
    );
    assert_eq!(code(&out), 2, "default shots are 50 per class: {}", stderr(&out));

    let img_dir = t.path().join("data/blendswap/test/real");
    let img = std::fs::read_dir(&img_dir).unwrap().next().unwrap().unwrap().path();
    let stem = img.file_stem().unwrap().to_str().unwrap().to_string();
    ok(&["cam", "--checkpoint", ck, "--image", img.to_str().unwrap(), "--alpha", "0"], t.path());
    let overlay = t.path().join(format!("runs/cam/cam/{stem}-overlay.ppm"));
    assert_eq!(std::fs::read(&overlay).unwrap(), std::fs::read(&img).unwrap());
    let out = run(&["cam", "--checkpoint", ck, "--image", img.to_str().unwrap(), "--layer", "enc.s0"], t.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("dec.s0, dec.s1, dec.s2, dec.s3"));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let t = tempfile::tempdir().unwrap();
    std::fs::write(t.path().join("file"), b"x").unwrap();
    let out = run(&["synth", "--out", "file/sub", "--preset", "micro", "--train", "1", "--fewshot", "1", "--test", "1"], t.path());
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("file/sub"), "{}", stderr(&out));
}
