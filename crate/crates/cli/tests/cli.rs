use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
# small and fast
rows = 60
cols = 60
synth_agents = 12
synth_weeks = 2
synth_noise = 0.0
synth_sampling_s = 120
pretrain_epochs = 3
joint_epochs = 3
sg_epochs = 2
embed_dim = 8
hidden_dim = 8
recurrent_out = 8
batch = 8
";

fn deepsei(dir: &Path, args: &[&str]) -> Output {
    let cfg = dir.join("run.cfg");
    if !cfg.exists() {
        fs::write(&cfg, TINY).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_deepsei"))
        .arg("--config")
        .arg(&cfg)
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = deepsei(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn pipeline(dir: &Path) {
    ok(dir, &["synth", "--out-dir", "world"]);
    ok(dir, &["preprocess", "--data", "world", "--out-dir", "prep"]);
    ok(dir, &["featurize", "--weeks", "prep/weeks.csv", "--out", "samples.csv"]);
    ok(dir, &["pretrain-embed", "--samples", "samples.csv", "--out", "tables.csv"]);
    ok(dir, &["train", "--samples", "samples.csv", "--out-dir", "model", "--embeddings", "tables.csv"]);
    ok(
        dir,
        &[
            "evaluate", "--samples", "samples.csv", "--model-dir", "model", "--out", "metrics.csv", "--classes", "2,3",
        ],
    );
}

#[test]
fn staged_pipeline_writes_stamped_reproducible_metrics() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());

    let metrics = fs::read_to_string(a.path().join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert!(lines.next().unwrap().starts_with("# config_hash="));
    assert_eq!(lines.next().unwrap(), "task,C_or_k,metric,value");
    let rows: Vec<&str> = lines.collect();
    // accuracy + f1 for C = 2, 3 and ari + ami for k = 2..5
    assert_eq!(rows.len(), 12, "{metrics}");
    assert_eq!(metrics, fs::read_to_string(b.path().join("metrics.csv")).unwrap());

    for f in ["world/trajectories.csv", "prep/stays.csv", "prep/weeks.csv", "samples.csv", "model/train_log.csv"] {
        let text = fs::read_to_string(a.path().join(f)).unwrap();
        assert!(text.starts_with("# config_hash="), "{f} lacks the hash line");
    }

    ok(a.path(), &["predict", "--samples", "samples.csv", "--model", "model/model.dsei", "--out", "pred.csv"]);
    let pred = fs::read_to_string(a.path().join("pred.csv")).unwrap();
    let weeks = fs::read_to_string(a.path().join("samples.csv")).unwrap();
    assert_eq!(pred.lines().count(), weeks.lines().count());

    ok(a.path(), &["report", "--inputs", "metrics.csv", "metrics.csv", "--out", "report.csv"]);
    let report = fs::read_to_string(a.path().join("report.csv")).unwrap();
    assert_eq!(report.lines().filter(|l| l.starts_with("metrics.csv,")).count(), 24);
}

#[test]
fn unknown_key_exits_2_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = deepsei(dir.path(), &["--set", "stay_radius=100", "synth", "--out-dir", "w"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.contains("stay_radius"), "{err}");

    fs::write(dir.path().join("bad.cfg"), "cell_size = 200\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_deepsei"))
        .args(["--config", "bad.cfg", "synth", "--out-dir", "w"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cell_size"));
}

#[test]
fn evaluate_refuses_a_foreign_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pipeline(d);
    let args = [
        "--set", "lr=0.01", "evaluate", "--samples", "samples.csv", "--model-dir", "model", "--out", "m2.csv", "--classes", "2",
    ];
    let out = deepsei(d, &args);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: hash_mismatch:"));
    let mut forced = args.to_vec();
    forced.push("--force");
    ok(d, &forced);
}

#[test]
fn sweep_emits_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--out-dir", "world"]);
    ok(
        d,
        &[
            "sweep", "--data", "world", "--param", "stay_duration_s", "--values", "1800,3600,5400,7200,9000", "--out",
            "sweep.csv",
        ],
    );
    let text = fs::read_to_string(d.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(2).collect();
    assert_eq!(rows.len(), 5, "{text}");
    for (row, v) in rows.iter().zip(["1800", "3600", "5400", "7200", "9000"]) {
        assert!(row.starts_with(&format!("stay_duration_s,{v},2,")), "{row}");
    }
    let out = deepsei(d, &["sweep", "--data", "world", "--param", "nope", "--values", "1", "--out", "x.csv"]);
    assert_eq!(out.status.code(), Some(2));
}
