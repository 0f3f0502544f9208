use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use metacl::data::{load_jsonl, JsonlSchema};
use metacl::nn::TaskKind;
use metacl_cli::report::{from_csv, read_csv};

const SMALL: &str = r#"
[run]
method = "maml_rep"
seed = 3

[meta]
inner_lr = 0.5
outer_lr = 0.03
meta_epochs = 4
checkpoint_every = 2
inner_steps_train = 3
inner_steps_test = 2
batch_size = 8
support_size = 24
query_size = 24
test_train_size = 40

[encoder]
vocab_size = 64
embed_dim = 8
hidden_dims = [8]
max_len = 10

[data]
source = "synthetic"

[data.synthetic]
n_tasks = 3
samples_per_task = 140
vocab = 60
"#;

fn metacl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metacl")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("exp.toml");
    fs::write(&p, text).unwrap();
    p
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_writes_checkpoints_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&metacl(&["train", "--config", s(&cfg), "--out", s(&a)]));
    ok(&metacl(&["train", "--config", s(&cfg), "--out", s(&b)]));
    for name in ["theta.ckpt", "checkpoints/epoch_0002.ckpt", "checkpoints/epoch_0004.ckpt", "train_log.jsonl"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let log = fs::read_to_string(a.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 4 * 3);
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["epoch", "task", "loss", "lr", "mode"] {
        assert!(first.get(key).is_some(), "log key {key}");
    }
    assert_eq!(first["mode"], "batched");

    let c = dir.path().join("c");
    ok(&metacl(&["train", "--config", s(&cfg), "--out", s(&c), "--seed", "4"]));
    assert_ne!(fs::read(a.join("theta.ckpt")).unwrap(), fs::read(c.join("theta.ckpt")).unwrap());
}

#[test]
fn oml_logs_per_sample_updates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("\"maml_rep\"", "\"oml\""));
    let out = dir.path().join("oml");
    ok(&metacl(&["train", "--config", s(&cfg), "--out", s(&out)]));
    let log = fs::read_to_string(out.join("train_log.jsonl")).unwrap();
    assert!(log.lines().all(|l| l.contains("\"mode\":\"per_sample\"")));
}

#[test]
fn test_writes_a_report_that_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("run");
    ok(&metacl(&["train", "--config", s(&cfg), "--out", s(&out)]));
    ok(&metacl(&["test", "--config", s(&cfg), "--out", s(&out)]));
    let text = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(text.starts_with("task,metric,immediate,final,delta\n"));
    let rows = from_csv(&text).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(metacl_cli::report::to_csv(&rows).unwrap(), text);
    for r in &rows {
        assert_eq!(r.delta, r.immediate - r.final_score);
    }
    let md = fs::read_to_string(out.join("report.md")).unwrap();
    assert!(md.contains("| task | metric | immediate/final | delta |"));
    assert!(out.join("eval_report.json").is_file());
}

#[test]
fn a_single_task_reports_zero_delta() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("n_tasks = 3", "n_tasks = 1"));
    let out = dir.path().join("one");
    ok(&metacl(&["train", "--config", s(&cfg), "--out", s(&out)]));
    let res = metacl(&["test", "--config", s(&cfg), "--out", s(&out)]);
    ok(&res);
    let rows = read_csv(&out.join("report.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].delta, 0.0);
    assert!(String::from_utf8_lossy(&res.stdout).contains("no forgetting"));
}

#[test]
fn baseline_writes_joint_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("base");
    ok(&metacl(&["baseline", "--config", s(&cfg), "--out", s(&out)]));
    let log = fs::read_to_string(out.join("train_log.jsonl")).unwrap();
    assert!(log.lines().all(|l| l.contains("\"mode\":\"joint\"")));
    ok(&metacl(&["test", "--config", s(&cfg), "--out", s(&out)]));
}

#[test]
fn missing_checkpoint_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("nothing");
    let res = metacl(&["test", "--config", s(&cfg), "--out", s(&out), "--checkpoint", "/no/such.ckpt"]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("checkpoint"));
    assert!(!out.join("report.csv").exists());
}

#[test]
fn checkpoint_of_another_architecture_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("run");
    ok(&metacl(&["train", "--config", s(&cfg), "--out", s(&out)]));
    let other = dir.path().join("other.toml");
    fs::write(&other, SMALL.replace("embed_dim = 8", "embed_dim = 6")).unwrap();
    let res = metacl(&["test", "--config", s(&other), "--out", s(&out)]);
    assert!(!res.status.success());
}

#[test]
fn gradcheck_passes_and_catches_a_corrupted_gradient() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let good = metacl(&["gradcheck", "--config", s(&cfg)]);
    ok(&good);
    let text = String::from_utf8_lossy(&good.stdout);
    assert!(text.lines().count() >= 2 && text.lines().all(|l| l.starts_with("PASS")), "{text}");

    let bad = metacl(&["gradcheck", "--config", s(&cfg), "--corrupt-gradient"]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));
}

#[test]
fn gen_data_writes_loadable_deterministic_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&metacl(&["gen-data", "--config", s(&cfg), "--out", s(&a)]));
    ok(&metacl(&["gen-data", "--config", s(&cfg), "--out", s(&b)]));
    let schema = JsonlSchema {
        kind: TaskKind::Classification { num_classes: 2 },
        label_map: None,
    };
    for i in 0..3 {
        let name = format!("task{i}.jsonl");
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
        assert_eq!(load_jsonl(&a.join(&name), &schema).unwrap().len(), 140);
    }
    assert_eq!(fs::read_dir(&a).unwrap().count(), 3);
}

#[test]
fn generated_files_train_like_the_synthetic_source() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let data = dir.path().join("data");
    ok(&metacl(&["gen-data", "--config", s(&cfg), "--out", s(&data)]));
    let mut files = SMALL.split("[data]").next().unwrap().to_owned();
    files.push_str("[data]\nsource = \"files\"\n");
    for i in 0..3 {
        files.push_str(&format!(
            "\n[[data.tasks]]\nid = \"t{i}\"\npath = \"{}\"\nformat = \"jsonl\"\nkind = \"classification\"\nnum_classes = 2\nmetric = \"accuracy\"\n",
            s(&data.join(format!("task{i}.jsonl")))
        ));
    }
    let fcfg = dir.path().join("files.toml");
    fs::write(&fcfg, files).unwrap();
    let out = dir.path().join("run");
    ok(&metacl(&["train", "--config", s(&fcfg), "--out", s(&out)]));
    ok(&metacl(&["test", "--config", s(&fcfg), "--out", s(&out)]));
    let rows = read_csv(&out.join("report.csv")).unwrap();
    assert_eq!(rows.iter().map(|r| r.task.as_str()).collect::<Vec<_>>(), ["t0", "t1", "t2"]);
}

#[test]
fn report_compares_run_directories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let runs = dir.path().join("runs");
    for (cmd, name) in [("train", "maml"), ("baseline", "seq")] {
        let out = runs.join(name);
        ok(&metacl(&[cmd, "--config", s(&cfg), "--out", s(&out)]));
        ok(&metacl(&["test", "--config", s(&cfg), "--out", s(&out)]));
    }
    let res = metacl(&["report", s(&runs)]);
    ok(&res);
    let csv = fs::read_to_string(runs.join("comparison.csv")).unwrap();
    assert!(csv.starts_with("run,task,metric,immediate,final,delta\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
    let md = fs::read_to_string(runs.join("comparison.md")).unwrap();
    assert!(md.contains("| task | metric | maml | seq |"));

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert!(!metacl(&["report", s(&empty)]).status.success());
}

#[test]
fn invalid_config_fails_without_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    for (i, bad) in [
        SMALL.replace("inner_lr = 0.5", "inner_lr = -1.0"),
        SMALL.replace("support_size = 24", "support_size = 0"),
        SMALL.replace("[meta]", "[meta]\nnot_a_field = 1"),
        SMALL.replace("support_size = 24", "support_size = 500"),
    ]
    .iter()
    .enumerate()
    {
        let cfg = dir.path().join(format!("bad{i}.toml"));
        fs::write(&cfg, bad).unwrap();
        let out = dir.path().join(format!("out{i}"));
        let res = metacl(&["train", "--config", s(&cfg), "--out", s(&out)]);
        assert!(!res.status.success(), "config {i} accepted");
        assert!(!res.stderr.is_empty());
        let leftovers = fs::read_dir(&out).map(|d| d.count()).unwrap_or(0);
        assert_eq!(leftovers, 0, "config {i} left files behind");
    }
}
