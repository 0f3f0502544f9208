use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use serde::Serialize;

use metacl::data::{write_jsonl, Dataset, Sample};
use metacl::evalcl::{meta_test, EvalReport};
use metacl::metaobj::{
    initial_theta, meta_train, outer_grad, sequential_baseline, GradMode, InnerLoop, InnerMode, LogRecord, Method,
    ModelSpec, OuterSettings, TrainOutcome,
};
use metacl::nn::{EncoderSpec, Model};
use metacl::tensor::finite_diff_grad;
use metacl::{DropoutKey, Graph, Grads, Mode, ParamSet};

use crate::checkpoint;
use crate::config::{DataSection, ExperimentConfig};
use crate::report;

pub const THETA_FILE: &str = "theta.ckpt";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_MD: &str = "report.md";

/// Files are written into a hidden directory under `out` and moved into
/// place only once the command succeeds; a failed command leaves nothing.
struct Staging {
    out: PathBuf,
    dir: PathBuf,
    committed: bool,
}

impl Staging {
    fn new(out: &Path, command: &str) -> Result<Self> {
        let dir = out.join(format!(".partial-{command}"));
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            out: out.to_path_buf(),
            dir,
            committed: false,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn commit(mut self) -> Result<()> {
        for entry in fs::read_dir(&self.dir)? {
            let entry = entry?;
            let target = self.out.join(entry.file_name());
            if target.is_dir() {
                fs::remove_dir_all(&target)?;
            } else if target.exists() {
                fs::remove_file(&target)?;
            }
            fs::rename(entry.path(), &target)?;
        }
        fs::remove_dir(&self.dir)?;
        self.committed = true;
        Ok(())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}

fn write_log(path: &Path, log: &[LogRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for rec in log {
        serde_json::to_writer(&mut f, rec)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub method: String,
    pub seed: u64,
    pub epochs: usize,
    pub checkpoints: Vec<String>,
    pub inner_calls: usize,
    pub freeze_violations: usize,
    pub final_checksum: String,
}

fn run_training(cfg: &ExperimentConfig, out: &Path, method: Method, command: &str) -> Result<TrainSummary> {
    let stream = cfg.stream()?;
    let spec = cfg.model_spec();
    let staging = Staging::new(out, command)?;
    let outcome: TrainOutcome = match method {
        Method::Sequential => sequential_baseline(&stream, &spec, &cfg.meta)?,
        _ => meta_train(&stream, &spec, method, &cfg.meta)?,
    };
    fs::create_dir_all(staging.path("checkpoints"))?;
    let mut names = Vec::new();
    for (epoch, theta) in &outcome.checkpoints {
        let name = format!("checkpoints/epoch_{epoch:04}.ckpt");
        checkpoint::save(&staging.path(&name), theta)?;
        names.push(name);
    }
    checkpoint::save(&staging.path(THETA_FILE), &outcome.theta)?;
    write_log(&staging.path(LOG_FILE), &outcome.log)?;
    let summary = TrainSummary {
        method: method.name().to_owned(),
        seed: cfg.seed(),
        epochs: if method == Method::Sequential { 1 } else { cfg.meta.meta_epochs },
        checkpoints: names,
        inner_calls: outcome.freeze.calls,
        freeze_violations: outcome.freeze.violations,
        final_checksum: outcome.theta.checksum(),
    };
    write_json(&staging.path("train_summary.json"), &summary)?;
    ensure!(
        summary.freeze_violations == 0,
        "θ changed during {} of {} inner adaptations",
        summary.freeze_violations,
        summary.inner_calls
    );
    staging.commit()?;
    Ok(summary)
}

/// Meta-trains θ with the configured method.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainSummary> {
    run_training(cfg, out, cfg.run.method, "train")
}

/// Sequential fine-tuning baseline, whatever the configured method.
pub fn cmd_baseline(cfg: &ExperimentConfig, out: &Path) -> Result<TrainSummary> {
    run_training(cfg, out, Method::Sequential, "baseline")
}

/// Meta-tests the θ in `checkpoint` and writes the forgetting report.
pub fn cmd_test(cfg: &ExperimentConfig, checkpoint_path: &Path, out: &Path) -> Result<EvalReport> {
    let start = Instant::now();
    let theta = checkpoint::load(checkpoint_path)?;
    checkpoint::check_compatible(&theta, &initial_theta(&cfg.encoder, cfg.seed())?)?;
    let stream = cfg.stream()?;
    let staging = Staging::new(out, "test")?;
    let outcome = meta_test(&theta, &stream, &cfg.model_spec(), &cfg.meta)?;
    let rows = report::rows(&outcome.matrix);
    fs::write(staging.path(REPORT_CSV), report::to_csv(&rows)?)?;
    fs::write(staging.path(REPORT_MD), report::to_markdown(&rows))?;
    let eval = EvalReport::new(&outcome, &cfg.meta, start.elapsed().as_secs_f64());
    write_json(&staging.path("eval_report.json"), &eval)?;
    staging.commit()?;
    Ok(eval)
}

/// Writes every task of the synthetic stream to `<out>/<task id>.jsonl`.
pub fn cmd_gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    if !matches!(cfg.data, DataSection::Synthetic { .. }) {
        bail!("gen-data needs a synthetic [data] section");
    }
    let stream = cfg.stream()?;
    let staging = Staging::new(out, "gen-data")?;
    let mut paths = Vec::new();
    for task in &stream.tasks {
        let name = format!("{}.jsonl", task.id);
        let samples: Vec<Sample> = [&task.support, &task.query, &task.train, &task.eval]
            .into_iter()
            .flatten()
            .cloned()
            .collect();
        write_jsonl(&staging.path(&name), &samples)?;
        paths.push(out.join(name));
    }
    staging.commit()?;
    Ok(paths)
}

/// Compares the `report.csv` of every run directory under `dir`.
pub fn cmd_report(dir: &Path, out: &Path) -> Result<(PathBuf, PathBuf)> {
    let mut runs = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    for path in entries {
        let csv = path.join(REPORT_CSV);
        if path.is_dir() && csv.is_file() {
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            runs.push(report::NamedReport {
                name,
                rows: report::read_csv(&csv)?,
            });
        }
    }
    if runs.is_empty() {
        bail!("no run directories with {REPORT_CSV} under {}", dir.display());
    }
    let (csv, md) = report::comparison(&runs)?;
    fs::create_dir_all(out)?;
    let (csv_path, md_path) = (out.join("comparison.csv"), out.join("comparison.md"));
    fs::write(&csv_path, csv)?;
    fs::write(&md_path, md)?;
    Ok((csv_path, md_path))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub rel_error: f64,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.rel_error <= self.tolerance
    }
}

/// `‖a − b‖ / max(‖a‖ + ‖b‖, tiny)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

fn reduced(spec: &ModelSpec) -> ModelSpec {
    let e = &spec.encoder;
    ModelSpec {
        encoder: EncoderSpec {
            vocab_size: e.vocab_size.min(40),
            embed_dim: e.embed_dim.min(6),
            hidden_dims: e.hidden_dims.iter().take(2).map(|&h| h.min(5)).collect(),
            max_len: e.max_len.min(8),
            dropout_rate: 0.0,
        },
        head_hidden: spec.head_hidden.map(|h| h.min(4)),
    }
}

/// Backward pass vs central differences on a reduced copy of the
/// configured model, and first-order vs exact meta-gradients without
/// adaptation. `corrupt` perturbs one analytic coordinate.
pub fn cmd_gradcheck(cfg: &ExperimentConfig, corrupt: bool) -> Result<Vec<GradCheck>> {
    let stream = cfg.stream()?;
    let task = &stream.tasks[0];
    let spec = reduced(&cfg.model_spec());
    let enc = &spec.encoder;
    let model = spec.for_task(task.kind);
    let data = Dataset::encode(&task.support[..task.support.len().min(8)], enc.vocab_size, enc.max_len);
    let batch = data.full_batch()?;
    let theta = initial_theta(enc, cfg.seed())?;
    let w = model.init_head(cfg.seed(), 0)?;
    let key = DropoutKey::new(0, 0, 0);

    let mut g = Graph::new();
    let tb = theta.bind(&mut g, true)?;
    let wb = w.bind(&mut g, true)?;
    let loss = model.batch_loss(&mut g, &tb, &wb, &batch, Mode::Eval, key)?;
    let grads = g.backward(loss)?;
    let mut analytic = grads.select(&theta)?.flatten_like(&theta)?;
    analytic.extend(grads.select(&w)?.flatten_like(&w)?);
    if corrupt {
        let bump = 0.05 * analytic.iter().fold(0.0f64, |m, v| m.max(v.abs())) + 1e-3;
        analytic[0] += bump;
    }
    let loss_at = |t: &ParamSet, h: &ParamSet| -> metacl::Result<f64> {
        let mut g = Graph::new();
        let tb = t.bind(&mut g, false)?;
        let wb = h.bind(&mut g, false)?;
        let l = model.batch_loss(&mut g, &tb, &wb, &batch, Mode::Eval, key)?;
        Ok(g.value(l).item())
    };
    let mut numeric = finite_diff_grad(|t| loss_at(t, &w), &theta, 1e-6)?.flatten_like(&theta)?;
    numeric.extend(finite_diff_grad(|h| loss_at(&theta, h), &w, 1e-6)?.flatten_like(&w)?);

    let mut checks = vec![GradCheck {
        name: format!("backward vs finite differences ({} coordinates)", numeric.len()),
        rel_error: relative_error(&analytic, &numeric),
        tolerance: 1e-4,
    }];

    let settings = |grad_mode| OuterSettings {
        inner: InnerLoop::new(0, cfg.meta.inner_lr, InnerMode::Batched, cfg.meta.batch_size),
        grad_mode,
        fd_epsilon: cfg.meta.fd_epsilon,
        fd_budget: cfg.meta.fd_budget,
    };
    let first = outer_grad(&model, &theta, &w, &data, &data, &settings(GradMode::FirstOrder))?;
    let exact = outer_grad(&model, &theta, &w, &data, &data, &settings(GradMode::ExactFd))?;
    let flat = |g: &Grads| g.flatten_like(&theta);
    checks.push(GradCheck {
        name: "first-order vs exact meta-gradient, 0 inner steps".into(),
        rel_error: relative_error(&flat(&first.grads)?, &flat(&exact.grads)?),
        tolerance: 1e-4,
    });
    Ok(checks)
}
