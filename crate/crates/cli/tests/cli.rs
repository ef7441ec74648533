use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_esnet"));
    cmd.args(args).env_remove("ESNET_SEED");
    if let Some(s) = seed_env {
        cmd.env("ESNET_SEED", s);
    }
    cmd.output().unwrap()
}

fn esnet(args: &[&str]) -> Output {
    run(args, None)
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small 1D dataset: 12 samples on 64 points.
fn small_dataset(dir: &Path, seed: &str) -> PathBuf {
    let out = esnet(&["generate", "--n", "64", "--count", "12", "--seed", seed, "--output-dir", s(dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("dataset.bin")
}

#[test]
fn generate_is_deterministic_per_seed() {
    let dir = scratch("generate");
    let a = fs::read(small_dataset(&dir.join("a"), "3")).unwrap();
    let b = fs::read(small_dataset(&dir.join("b"), "3")).unwrap();
    let c = fs::read(small_dataset(&dir.join("c"), "4")).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = scratch("env-seed");
    let flag = fs::read(small_dataset(&dir.join("flag"), "9")).unwrap();
    let out = run(&["generate", "--n", "64", "--count", "12", "--output-dir", s(&dir.join("env"))], Some("9"));
    assert_eq!(code(&out), 0);
    assert_eq!(flag, fs::read(dir.join("env/dataset.bin")).unwrap());
}

#[test]
fn resolved_config_reproduces_the_run() {
    let dir = scratch("echo");
    small_dataset(&dir.join("first"), "21");
    let echo = dir.join("first/generate.resolved.conf");
    let text = fs::read_to_string(&echo).unwrap();
    assert!(text.contains("seed = 21"), "{text}");
    let out = esnet(&["generate", "--config", s(&echo), "--output-dir", s(&dir.join("second"))]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        fs::read(dir.join("first/dataset.bin")).unwrap(),
        fs::read(dir.join("second/dataset.bin")).unwrap()
    );
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = scratch("usage");
    assert_eq!(code(&esnet(&["generate", "--count", "0", "--output-dir", s(&dir)])), 1);
    assert_eq!(code(&esnet(&["train", "--no-such-flag", "1"])), 1);
    assert_eq!(code(&esnet(&["generate", "--kernel", "abc"])), 1);
    assert_eq!(code(&esnet(&["generate", "--preset", "ac3d"])), 1);
    let conf = dir.join("bad.conf");
    fs::write(&conf, "n = 64\nlearning_rate = 0.1\n").unwrap();
    let out = esnet(&["generate", "--config", s(&conf), "--output-dir", s(&dir)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn data_errors_exit_with_two() {
    let dir = scratch("data");
    assert_eq!(code(&esnet(&["train", "--output-dir", s(&dir)])), 2);

    let data = small_dataset(&dir, "1");
    let bytes = fs::read(&data).unwrap();
    let cut = dir.join("cut.bin");
    fs::write(&cut, &bytes[..bytes.len() - 5]).unwrap();
    assert_eq!(code(&esnet(&["train", "--dataset", s(&cut), "--output-dir", s(&dir)])), 2);

    let bogus = dir.join("bogus.ck");
    fs::write(&bogus, b"not a checkpoint").unwrap();
    let out = esnet(&["eval", "--dataset", s(&data), "--checkpoint", s(&bogus), "--output-dir", s(&dir)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_eval_and_grid_mismatch() {
    let dir = scratch("train");
    let data = small_dataset(&dir, "2");
    let out = esnet(&["train", "--dataset", s(&data), "--epochs", "3", "--batch-size", "4", "--output-dir", s(&dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["checkpoint.ck", "metrics.csv", "summary.txt", "train.resolved.conf"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let log = fs::read_to_string(dir.join("metrics.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);

    let per_sample = dir.join("per_sample.csv");
    let fields = dir.join("fields.csv");
    let out = esnet(&[
        "eval",
        "--dataset",
        s(&data),
        "--output-dir",
        s(&dir),
        "--export-csv",
        s(&per_sample),
        "--export-fields",
        s(&fields),
        "--samples",
        "2",
    ]);
    assert_eq!(code(&out), 0);
    let rows = fs::read_to_string(&per_sample).unwrap();
    assert!(rows.starts_with("sample,seed,mse,rel_l2"));
    // 12 samples at the default 0.7 split leave 4 for testing.
    assert_eq!(rows.lines().count(), 5);
    assert_eq!(fs::read_to_string(&fields).unwrap().lines().count(), 1 + 2 * 64);

    let other = scratch("train-other");
    let out = esnet(&["generate", "--n", "32", "--count", "6", "--output-dir", s(&other)]);
    assert_eq!(code(&out), 0);
    let ck = dir.join("checkpoint.ck");
    let out = esnet(&["eval", "--dataset", s(&other.join("dataset.bin")), "--checkpoint", s(&ck), "--output-dir", s(&other)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn diagnose_random_weights() {
    let dir = scratch("diagnose");
    for kind in ["estable-g", "aux-tilde"] {
        let out_dir = dir.join(kind);
        let out = esnet(&[
            "diagnose",
            "--random-weights",
            "--kind",
            kind,
            "--n",
            "64",
            "--samples",
            "5",
            "--output-dir",
            s(&out_dir),
        ]);
        assert_eq!(code(&out), 0, "{kind}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
        let trace = fs::read_to_string(out_dir.join("energy_trace.csv")).unwrap();
        assert_eq!(trace.lines().count(), 1 + 5 * 5);
    }
}

#[test]
fn diagnose_refuses_plain_networks() {
    let dir = scratch("plain");
    let out = esnet(&["diagnose", "--random-weights", "--kind", "plain", "--n", "64", "--output-dir", s(&dir)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("auxiliary"));
}
