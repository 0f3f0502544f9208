use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use metacl_cli::commands::{self, THETA_FILE};
use metacl_cli::ExperimentConfig;

#[derive(Parser)]
#[command(name = "metacl", version, about = "Meta-continual learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `run.out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train θ with the configured method.
    Train(Common),
    /// Meta-test a θ checkpoint and write the forgetting report.
    Test {
        #[command(flatten)]
        common: Common,
        /// θ checkpoint; defaults to `<out>/theta.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train θ with the sequential fine-tuning baseline.
    Baseline(Common),
    /// Check gradients on a reduced copy of the configured model.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
    /// Write the configured synthetic stream as JSON-lines files.
    GenData(Common),
    /// Compare the reports of every run directory under DIR.
    Report {
        dir: PathBuf,
        /// Where to write comparison.csv and comparison.md; defaults to DIR.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let cfg = ExperimentConfig::load(&common.config)?.with_seed(common.seed);
    let out = common.out.clone().unwrap_or_else(|| cfg.run.out_dir.clone());
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(c) => {
            let (cfg, out) = load(&c)?;
            let s = commands::cmd_train(&cfg, &out)?;
            println!(
                "{}: {} epochs, {} checkpoints, θ checksum {}, written to {}",
                s.method,
                s.epochs,
                s.checkpoints.len() + 1,
                &s.final_checksum[..16],
                out.display()
            );
        }
        Command::Baseline(c) => {
            let (cfg, out) = load(&c)?;
            let s = commands::cmd_baseline(&cfg, &out)?;
            println!("{}: {} epochs, written to {}", s.method, s.epochs, out.display());
        }
        Command::Test { common, checkpoint } => {
            let (cfg, out) = load(&common)?;
            let ckpt = checkpoint.unwrap_or_else(|| out.join(THETA_FILE));
            let report = commands::cmd_test(&cfg, &ckpt, &out)?;
            print!("{}", std::fs::read_to_string(out.join(commands::REPORT_MD))?);
            if report.mean_delta.is_none() {
                println!("(single task: no forgetting to measure)");
            }
        }
        Command::Gradcheck {
            common,
            corrupt_gradient,
        } => {
            let (cfg, _) = load(&common)?;
            let checks = commands::cmd_gradcheck(&cfg, corrupt_gradient)?;
            let mut ok = true;
            for c in &checks {
                let verdict = if c.passed() { "PASS" } else { "FAIL" };
                println!("{verdict} {}: relative error {:.3e} (tolerance {:.0e})", c.name, c.rel_error, c.tolerance);
                ok &= c.passed();
            }
            return Ok(ok);
        }
        Command::GenData(c) => {
            let (cfg, out) = load(&c)?;
            for p in commands::cmd_gen_data(&cfg, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Report { dir, out } => {
            let out = out.unwrap_or_else(|| dir.clone());
            let (_, md) = commands::cmd_report(&dir, &out)?;
            print!("{}", std::fs::read_to_string(&md).with_context(|| show(&md))?);
        }
    }
    Ok(true)
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
