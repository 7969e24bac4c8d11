use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hmpdm::checkpoint::Checkpoint;
use hmpdm::pipeline::LOSS_LOG;

/// Small model so each training command finishes in seconds.
const TINY: &[&str] = &[
    "embed_dim=16",
    "widths=16,16,16",
    "time_dim=16",
    "mape_blocks=1",
    "batch=2",
    "n_sample=4",
    "trajectories=2",
];

/// Runs the binary with only the given config overrides.
fn raw(args: &[&str], sets: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hmpdm"));
    cmd.args(args).env_remove("HMPDM_SEED").env("RUST_LOG", "warn");
    for s in sets {
        cmd.args(["--set", s]);
    }
    cmd.output().expect("binary runs")
}

/// Runs the binary under the tiny model config plus `sets`.
fn hmpdm(args: &[&str], sets: &[&str]) -> Output {
    let all: Vec<&str> = TINY.iter().chain(sets).copied().collect();
    raw(args, &all)
}

fn ok(out: Output) -> String {
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(
        out.status.success(),
        "command failed\nstdout:\n{stdout}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    stdout
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, frames: usize) -> PathBuf {
    let data = dir.join("data");
    ok(hmpdm(&["gen-data", "--out", s(&data), "--frames", &frames.to_string()], &[]));
    data
}

fn train(data: &Path, out: &Path, steps: u64, extra: &[&str]) -> String {
    let steps = format!("steps={steps}");
    let mut sets = vec![steps.as_str(), "checkpoint_every=30"];
    sets.extend_from_slice(extra);
    ok(hmpdm(&["train", "--data", s(data), "--out", s(out)], &sets))
}

fn ckpt(out: &Path, step: u64) -> PathBuf {
    out.join("checkpoints").join(hmpdm::checkpoint::checkpoint_name(step))
}

fn files_under(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_data_defaults_and_idempotence() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen(tmp.path(), 16);
    let manifest = std::fs::read_to_string(data.join("manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().filter(|l| l.starts_with("train\t")).count(), 8);
    assert_eq!(manifest.lines().filter(|l| l.starts_with("test\t")).count(), 2);
    let first = files_under(&data);
    gen(tmp.path(), 16);
    assert_eq!(first, files_under(&data));
}

#[test]
fn every_command_prints_the_config_hash() {
    let out = ok(hmpdm(&["verify", "--suite", "invariants"], &[]));
    assert!(out.lines().next().unwrap().starts_with("config hash "), "{out}");
    let seeded = Command::new(env!("CARGO_BIN_EXE_hmpdm"))
        .args(["verify", "--suite", "invariants"])
        .env("HMPDM_SEED", "42")
        .output()
        .unwrap();
    let seeded = ok(seeded);
    assert_ne!(out.lines().next(), seeded.lines().next(), "HMPDM_SEED must change the config");
}

#[test]
fn train_writes_log_and_loadable_checkpoint_then_resumes_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen(tmp.path(), 8);

    let full = tmp.path().join("full");
    train(&data, &full, 100, &[]);
    let log = std::fs::read_to_string(full.join(LOSS_LOG)).unwrap();
    assert_eq!(log.lines().count(), 100);
    let fields: Vec<&str> = log.lines().next().unwrap().split('\t').collect();
    assert_eq!(fields.len(), 4, "step, loss, sigma, sc flag");
    assert_eq!(fields[0], "1", "the first field counts completed steps");
    assert!(fields[3] == "0" || fields[3] == "1");
    let last = Checkpoint::load(&ckpt(&full, 100)).unwrap();
    assert_eq!(last.step, 100);
    assert!(ckpt(&full, 30).exists() && ckpt(&full, 90).exists());

    let split = tmp.path().join("split");
    ok(hmpdm(
        &["train", "--data", s(&data), "--out", s(&split), "--stop-at", "60"],
        &["steps=100", "checkpoint_every=30"],
    ));
    assert!(ckpt(&split, 60).exists() && !ckpt(&split, 90).exists());
    let resumed = ok(hmpdm(
        &["train", "--data", s(&data), "--out", s(&split), "--resume"],
        &["steps=100", "checkpoint_every=30"],
    ));
    assert!(resumed.contains("at step 60"), "{resumed}");
    assert_eq!(std::fs::read_to_string(split.join(LOSS_LOG)).unwrap(), log);
    assert_eq!(
        std::fs::read(ckpt(&split, 100)).unwrap(),
        std::fs::read(ckpt(&full, 100)).unwrap(),
        "interrupted and uninterrupted runs must agree bitwise"
    );
}

#[test]
fn resume_refuses_a_different_config_unless_forced() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen(tmp.path(), 8);
    let out = tmp.path().join("run");
    train(&data, &out, 30, &[]);
    let args = ["train", "--data", s(&data), "--out", s(&out), "--resume"];
    let refused = hmpdm(&args, &["steps=40", "checkpoint_every=30", "lr=0.0005"]);
    assert!(!refused.status.success());
    assert!(String::from_utf8_lossy(&refused.stderr).contains("config hash"));
    let mut forced: Vec<&str> = args.to_vec();
    forced.push("--force");
    ok(hmpdm(&forced, &["steps=40", "checkpoint_every=30", "lr=0.0005"]));
    assert_eq!(Checkpoint::load(&ckpt(&out, 40)).unwrap().step, 40);
}

#[test]
fn sample_writes_trajectories_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen(tmp.path(), 8);
    let run = tmp.path().join("run");
    train(&data, &run, 30, &[]);
    let clip = data.join("test/clip_0000");
    let ck = ckpt(&run, 30);
    let sample = |out: &Path, steps: &str| {
        ok(raw(
            &["sample", "--ckpt", s(&ck), "--clip", s(&clip), "--out", s(out), "--traj", "10", "--steps", steps, "--seed", "3"],
            &[],
        ));
    };
    let a = tmp.path().join("a");
    sample(&a, "4");
    for t in 0..10 {
        let dir = a.join(format!("traj_{t:02}"));
        assert_eq!(hmpdm::synthdata::count_frames(&dir).unwrap(), 4, "{}", dir.display());
    }
    assert_eq!(hmpdm::synthdata::count_frames(&a.join("conditioning")).unwrap(), 2);
    let b = tmp.path().join("b");
    sample(&b, "4");
    assert_eq!(files_under(&a), files_under(&b));
    let one = tmp.path().join("one");
    sample(&one, "1");
    assert_eq!(hmpdm::synthdata::count_frames(&one.join("traj_09")).unwrap(), 4);

    let short = tmp.path().join("short");
    std::fs::create_dir_all(&short).unwrap();
    std::fs::copy(clip.join("frame_0000.png"), short.join("frame_0000.png")).unwrap();
    let err = raw(&["sample", "--ckpt", s(&ck), "--clip", s(&short), "--out", s(&one)], &[]);
    assert!(!err.status.success());
    assert!(String::from_utf8_lossy(&err.stderr).contains("history frames"));
}

fn report_psnr(dir: &Path) -> Vec<f64> {
    std::fs::read_to_string(dir.join("report.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| l.contains("\"kind\":\"clip\""))
        .map(|l| {
            let tail = &l[l.find("\"psnr\":").unwrap() + 7..];
            tail[..tail.find(',').unwrap()].parse().unwrap()
        })
        .collect()
}

#[test]
fn eval_best_of_superset_dominates_and_checks_hashes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen(tmp.path(), 8);
    let run = tmp.path().join("run");
    train(&data, &run, 30, &[]);
    let ck = ckpt(&run, 30);
    let eval = |out: &Path, traj: &str, jobs: &str| {
        ok(raw(
            &["eval", "--ckpt", s(&ck), "--data", s(&data), "--out", s(out), "--traj", traj, "--jobs", jobs],
            &[],
        ))
    };
    let one = tmp.path().join("e1");
    let ten = tmp.path().join("e10");
    let table = eval(&one, "1", "1");
    assert!(table.contains("mean"), "{table}");
    eval(&ten, "10", "2");
    let (p1, p10) = (report_psnr(&one), report_psnr(&ten));
    assert_eq!(p1.len(), 2);
    for (a, b) in p1.iter().zip(&p10) {
        assert!(b >= a, "best-of-10 {b} below best-of-1 {a}");
    }
    assert!(one.join("report.txt").exists());

    let mismatch = raw(
        &["eval", "--ckpt", s(&ck), "--data", s(&data), "--out", s(&one)],
        &["lr=0.5"],
    );
    assert!(!mismatch.status.success());
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains("config hash"));
}

#[test]
fn eval_rejects_clips_shorter_than_the_window() {
    let tmp = tempfile::tempdir().unwrap();
    let good = gen(tmp.path(), 8);
    let run = tmp.path().join("run");
    train(&good, &run, 30, &[]);
    let short = tmp.path().join("short");
    ok(hmpdm(&["gen-data", "--out", s(&short), "--frames", "5"], &[]));
    let out = raw(
        &["eval", "--ckpt", s(&ckpt(&run, 30)), "--data", s(&short), "--out", s(&tmp.path().join("e"))],
        &[],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("P+F = 6 exceeds"));
}

#[test]
fn verify_suites_report_every_check() {
    let out = hmpdm(&["verify", "--suite", "gradcheck"], &[]);
    let text = String::from_utf8_lossy(&out.stdout);
    for op in hmpdm::verify::OPS.iter().chain(hmpdm::verify::BLOCKS) {
        assert!(text.lines().any(|l| l.starts_with(&format!("{op} "))), "missing {op}\n{text}");
    }
    assert!(out.status.success(), "{text}");
    let inv = ok(hmpdm(&["verify", "--suite", "invariants"], &[]));
    assert!(inv.contains("token_counts") && inv.contains("mask_layout"));
    let oracle = hmpdm(&["verify", "--suite", "oracle"], &[]);
    let text = String::from_utf8_lossy(&oracle.stdout);
    assert!(text.contains("gaussian_sampler_var"));
    assert_eq!(oracle.status.success(), !text.contains("FAIL"), "exit code follows the table\n{text}");
}
