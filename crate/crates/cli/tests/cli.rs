use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config(name: &str) -> PathBuf {
    repo_root().join("configs").join(name)
}

fn maple(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maple"))
        .args(args)
        .env("MAPLE_OUTPUT_ROOT", root)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn metric(csv: &str, method: &str, column: &str) -> String {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == column).unwrap();
    let row = lines.find(|l| l.starts_with(&format!("{method},"))).unwrap();
    row.split(',').nth(col).unwrap().to_string()
}

fn smoke_run(root: &Path) -> PathBuf {
    let out = maple(root, &["run", config("smoke.toml").to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    root.join("smoke")
}

#[test]
fn run_writes_artifacts_under_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = smoke_run(tmp.path());
    for f in [
        "metrics.csv",
        "metrics.jsonl",
        "history.csv",
        "weights.txt",
        "weight_hist.csv",
        "timing.json",
        "config.toml",
        "data/train.csv",
        "data/meta.json",
    ] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    let metrics = fs::read_to_string(dir.join("metrics.csv")).unwrap();
    for m in ["erm", "group_oracle_upweight", "irmv1_direct", "group_dro_direct", "oracle_core", "maple"] {
        assert!(metrics.lines().any(|l| l.starts_with(&format!("{m},"))), "no row for {m}");
    }
    assert!(!metrics.contains("wall"));
    let history = fs::read_to_string(dir.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1 + 3);
}

#[test]
fn run_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let da = smoke_run(a.path());
    let db = smoke_run(b.path());
    for f in ["metrics.csv", "weights.txt", "history.csv", "data/train.csv"] {
        assert_eq!(fs::read(da.join(f)).unwrap(), fs::read(db.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn eval_with_unit_weights_reproduces_erm() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = smoke_run(tmp.path());
    let text = fs::read_to_string(dir.join("weights.txt")).unwrap();
    let mut ones = String::new();
    for line in text.lines() {
        match line.split_whitespace().next() {
            Some(idx) if idx.parse::<usize>().is_ok() => ones.push_str(&format!("{idx} 1 1 1\n")),
            _ => {
                ones.push_str(line);
                ones.push('\n');
            }
        }
    }
    let ones_path = tmp.path().join("ones.txt");
    fs::write(&ones_path, ones).unwrap();
    let out = maple(
        tmp.path(),
        &[
            "eval",
            "--data",
            dir.join("data").to_str().unwrap(),
            "--weights",
            ones_path.to_str().unwrap(),
            "--model",
            config("smoke.toml").to_str().unwrap(),
        ],
    );
    assert_eq!(code(&out), 0);
    let metrics = fs::read_to_string(dir.join("metrics.csv")).unwrap();
    let erm_acc: f64 = metric(&metrics, "erm", "test_accuracy").parse().unwrap();
    let line = stdout(&out).lines().find(|l| l.starts_with("weighted_erm")).unwrap().to_string();
    let acc: f64 = line.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((acc - erm_acc).abs() < 1e-4, "{acc} vs {erm_acc}");

    // the run's own weights reproduce its reweighted result
    let out = maple(
        tmp.path(),
        &[
            "eval",
            "--data",
            dir.join("data").to_str().unwrap(),
            "--weights",
            dir.join("weights.txt").to_str().unwrap(),
            "--model",
            config("smoke.toml").to_str().unwrap(),
        ],
    );
    let maple_acc: f64 = metric(&metrics, "maple", "test_accuracy").parse().unwrap();
    let line = stdout(&out).lines().find(|l| l.starts_with("weighted_erm")).unwrap().to_string();
    let acc: f64 = line.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((acc - maple_acc).abs() < 1e-4);
}

#[test]
fn eval_rejects_index_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = smoke_run(tmp.path());
    let text = fs::read_to_string(dir.join("weights.txt")).unwrap();
    let short: String = text.lines().take(20).map(|l| format!("{l}\n")).collect();
    let path = tmp.path().join("short.txt");
    fs::write(&path, short).unwrap();
    let out = maple(
        tmp.path(),
        &[
            "eval",
            "--data",
            dir.join("data").to_str().unwrap(),
            "--weights",
            path.to_str().unwrap(),
            "--model",
            config("smoke.toml").to_str().unwrap(),
        ],
    );
    assert_eq!(code(&out), 1);
}

#[test]
fn invalid_config_exits_with_validation_code() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(config("smoke.toml")).unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, text.replace("[outer]", "[outer]\nbogus = 1")).unwrap();
    assert_eq!(code(&maple(tmp.path(), &["run", bad.to_str().unwrap()])), 1);
    fs::write(&bad, text.replace("seed = 1\n", "")).unwrap();
    assert_eq!(code(&maple(tmp.path(), &["run", bad.to_str().unwrap()])), 1);
    assert_eq!(code(&maple(tmp.path(), &["run", "/nonexistent/config.toml"])), 1);
    assert_eq!(code(&maple(tmp.path(), &["frobnicate"])), 1);
}

#[test]
fn diverging_run_exits_with_run_failure_code() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(config("smoke.toml")).unwrap();
    let bad = tmp.path().join("diverge.toml");
    fs::write(&bad, text.replace("learning_rate = 0.5", "learning_rate = 1e300")).unwrap();
    assert_eq!(code(&maple(tmp.path(), &["run", bad.to_str().unwrap()])), 2);
}

#[test]
fn oracle_passes_and_negative_control_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = maple(tmp.path(), &["oracle", "--seed", "3", "--trials", "10"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("spurious_independent"));
    assert!(!stdout(&out).contains("FAIL"));
    let out = maple(tmp.path(), &["oracle", "--trials", "10", "--inject-uniform-weight"]);
    assert_eq!(code(&out), 3);
    assert!(stdout(&out).contains("FAIL"));
}

#[test]
fn gen_writes_dataset_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let out = maple(tmp.path(), &["gen", config("dataset_group.toml").to_str().unwrap(), "--out", "ds"]);
    assert_eq!(code(&out), 0);
    let train = fs::read_to_string(tmp.path().join("ds/train.csv")).unwrap();
    assert_eq!(train.lines().count(), 2001);
    assert!(train.starts_with("x0,x1,x2,x3,label,env_id,group_id"));
}

#[test]
fn single_repeat_sweep_is_flagged() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(config("sweep.toml")).unwrap()
        .replace("repeats = 20", "repeats = 1")
        .replace("n_vals = [100, 400, 1600, 6400]", "n_vals = [50, 100]")
        .replace("iterations = 10", "iterations = 2");
    let cfg = tmp.path().join("sweep.toml");
    fs::write(&cfg, text).unwrap();
    let out = maple(tmp.path(), &["sweep", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("(single seed)"));
    let summary = fs::read_to_string(tmp.path().join("sweep/sweep.csv")).unwrap();
    assert!(summary.starts_with("n_val,mean_gap,std_gap,repeats,single_seed"));
    assert_eq!(summary.lines().count(), 3);
    assert!(tmp.path().join("sweep/sweep_raw.csv").is_file());
}
