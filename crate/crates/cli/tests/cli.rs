use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn otmatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_otmatch"))
        .args(args)
        .env_remove("OTMATCH_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small widths and few epochs so the whole pipeline runs in seconds.
const TINY: &str = r#"{
  "model": {"d1": 16, "d2": 32, "d3": 32, "d_mid": 32, "d_color": 8, "embed_dim": 16},
  "train": {"stage1_epochs": 2, "stage2_epochs": 2, "batch_size": 4}
}"#;

struct Fixture {
    _dir: tempfile::TempDir,
    root: std::path::PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        fs::write(root.join("tiny.json"), TINY).unwrap();
        let o = otmatch(&["gen", "--seed", "3", "--shapes", "8", "--points", "32", "--out", p(&root.join("data"))]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        Self { _dir: dir, root }
    }

    fn path(&self, rel: &str) -> String {
        p(&self.root.join(rel)).to_string()
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        let (cfg, data, out) = (self.path("tiny.json"), self.path("data"), self.path(out));
        let mut args = vec!["train", "--config", &cfg, "--data", &data, "--out", &out];
        args.extend_from_slice(extra);
        otmatch(&args)
    }
}

#[test]
fn gen_is_deterministic_and_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = otmatch(&["gen", "--seed", "7", "--shapes", "6", "--classes", "4", "--points", "16", "--out", p(out)]);
        assert!(o.status.success());
        assert!(stdout(&o).contains("6 shapes, 12 texts"));
    }
    for f in ["manifest.json", "texts.tsv", "clouds/s000.pc", "clouds/s005.pc"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(fs::read_dir(a.join("clouds")).unwrap().count(), 6);
}

#[test]
fn gen_rejects_single_shape() {
    let dir = tempfile::tempdir().unwrap();
    let o = otmatch(&["gen", "--shapes", "1", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gen_reads_data_dir_from_env() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_otmatch"))
        .args(["gen", "--shapes", "2", "--points", "8"])
        .env("OTMATCH_DATA_DIR", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(otmatch(&[]).status.code(), Some(1));
    assert_eq!(otmatch(&["train", "--bogus"]).status.code(), Some(1));
    let o = otmatch(&["train", "--help"]);
    assert_eq!(o.status.code(), Some(0));
    let help = stdout(&o);
    for flag in ["--data", "--out", "--preset", "--matcher", "--no-color", "--config", "--seed", "--threads"] {
        assert!(help.contains(flag), "{flag} missing from help");
    }
    assert!(help.contains("[default: desk]"));
}

#[test]
fn unknown_config_key_exits_one() {
    let f = Fixture::new();
    fs::write(f.root.join("bad.json"), r#"{"train": {"learning_rate": 0.1}}"#).unwrap();
    let o = otmatch(&["train", "--config", &f.path("bad.json"), "--data", &f.path("data"), "--out", &f.path("r")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!f.root.join("r").exists());
}

#[test]
fn missing_data_exits_two() {
    let f = Fixture::new();
    let o = otmatch(&["train", "--data", &f.path("nowhere"), "--out", &f.path("r")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_eval_retrieve_pipeline() {
    let f = Fixture::new();
    let o = f.train("run", &["--seed", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["final", "stage1.json", "metrics.tsv", "config.json"] {
        assert!(f.root.join("run").join(name).exists(), "{name}");
    }
    let log = fs::read_to_string(f.root.join("run/metrics.tsv")).unwrap();
    assert_eq!(log.lines().next(), Some("epoch\tstage\tL_CE\tL_EMD\tL_total\tRR@1"));
    assert_eq!(log.lines().count(), 5);
    let cfg = fs::read_to_string(f.root.join("run/config.json")).unwrap();
    assert!(cfg.contains("\"seed\": 5"));

    let (ckpt, data) = (f.path("run/final"), f.path("data"));
    let o = otmatch(&["eval", "--ckpt", &ckpt, "--data", &data, "--out", &f.path("report.tsv")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(f.root.join("report.tsv")).unwrap();
    assert_eq!(report.lines().count(), 5);
    assert_eq!(report.lines().next(), Some("direction\tk\tRR\tNDCG"));

    let o = otmatch(&[
        "eval", "--ckpt", &ckpt, "--data", &data, "--out", &f.path("r10.tsv"), "--k", "1,5,10",
        "--dump-queries", &f.path("q.json"),
    ]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(f.root.join("r10.tsv")).unwrap().lines().count(), 7);
    let q: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.root.join("q.json")).unwrap()).unwrap();
    assert_eq!(q.as_array().unwrap().len(), 8 + 16);

    let o = otmatch(&["retrieve", "--ckpt", &ckpt, "--data", &data, "--text", "a red chair", "--k", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lines: Vec<(String, f64)> = stdout(&o)
        .lines()
        .map(|l| {
            let (id, s) = l.split_once('\t').unwrap();
            (id.to_string(), s.parse().unwrap())
        })
        .collect();
    assert_eq!(lines.len(), 5);
    assert!(lines.iter().all(|(id, s)| id.starts_with('s') && (-2.0..=0.0).contains(s)));
    assert!(lines.windows(2).all(|w| w[0].1 >= w[1].1));

    let o = otmatch(&["retrieve", "--ckpt", &ckpt, "--data", &data, "--shape", "s001", "--k", "3", "--dump-costs"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let results: Vec<&str> = out.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(results.len(), 3);
    assert!(results.iter().all(|l| l.starts_with('t')));
    assert!(out.lines().any(|l| l.starts_with("#\t")));

    let o = otmatch(&["retrieve", "--ckpt", &ckpt, "--data", &data, "--shape", "s999"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_without_checkpoint_fails() {
    let f = Fixture::new();
    let o = otmatch(&["eval", "--ckpt", &f.path("none"), "--data", &f.path("data"), "--out", &f.path("r.tsv")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!f.root.join("r.tsv").exists());
}

#[test]
fn eval_rejects_mismatched_corpus() {
    let f = Fixture::new();
    assert!(f.train("run", &[]).status.success());
    let other = f.path("other");
    assert!(otmatch(&["gen", "--shapes", "4", "--classes", "5", "--points", "16", "--out", &other])
        .status
        .success());
    let o = otmatch(&["eval", "--ckpt", &f.path("run/final"), "--data", &other, "--out", &f.path("r.tsv")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("part classes"));
}

#[test]
fn training_flags_reach_the_checkpoint() {
    let f = Fixture::new();
    let o = f.train("cd", &["--matcher", "chamfer", "--no-color", "--threads", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = fs::read_to_string(f.root.join("cd/final")).unwrap();
    assert!(ckpt.contains("\"matcher\":\"chamfer\""));
    assert!(ckpt.contains("\"use_color\":false"));
}

#[test]
fn same_seed_same_bytes() {
    let f = Fixture::new();
    assert!(f.train("a", &[]).status.success());
    assert!(f.train("b", &[]).status.success());
    for name in ["final", "metrics.tsv", "stage1.json"] {
        let a = fs::read(f.root.join("a").join(name)).unwrap();
        let b = fs::read(f.root.join("b").join(name)).unwrap();
        assert!(a == b, "{name} differs");
    }
}
