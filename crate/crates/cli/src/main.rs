use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use serde_json::json;
use vidcf_cli::config::{load_config, write_json, ExperimentConfig};
use vidcf_cli::error::{exit_code, UserError};
use vidcf_cli::pipeline::{train_component, write_dataset, TARGET_ACCURACY_GATE};
use vidcf_cli::report::report;
use vidcf_cli::run::{evaluate_run, generate_run};
use vidcf_cli::sweep::{load_sweep, run_sweep};
use vidcf_core::checkpoint::Component;
use vidcf_core::data::Task;

#[derive(Parser)]
#[command(name = "vidcf", version, about = "Counterfactual explanations for video models")]
struct Cli {
    /// JSON config (sweep spec for `sweep`). Keys left out come from the
    /// task preset; `VIDCF__SECTION__KEY=value` variables override keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed of all training and generation streams.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output location; its meaning depends on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the preset config of a task (or write it to --out).
    Init {
        #[arg(long, default_value = "classification")]
        task: String,
    },
    /// Write all dataset splits to --out (default: config `data_dir`).
    Dataset,
    /// Train one component into the checkpoint directory (--out overrides).
    Train { component: Component },
    /// Generate counterfactuals for the evaluation set into --out.
    Generate,
    /// Compute metrics of a run directory (default: --out or config `out`).
    Evaluate { run: Option<PathBuf> },
    /// Run a grid sweep described by --config into --out.
    Sweep,
    /// Write tables and frame grids for a run or sweep directory.
    Report { dir: PathBuf },
}

fn env_vars() -> Vec<(String, String)> {
    std::env::vars().collect()
}

fn config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = load_config(cli.config.as_deref(), env_vars(), cli.seed)?;
    if let Some(w) = cli.workers {
        cfg.workers = w.max(1);
    }
    Ok(cfg)
}

fn print(v: serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(&v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Init { task } => {
            let task: Task = serde_json::from_value(json!(task))
                .map_err(|_| UserError(format!("unknown task `{task}`")))?;
            let cfg = ExperimentConfig::preset(task);
            match &cli.out {
                Some(p) => write_json(p, &cfg)?,
                None => print(cfg.to_value())?,
            }
        }
        Command::Dataset => {
            let cfg = config(&cli)?;
            let dir = cli
                .out
                .clone()
                .or(cfg.data_dir.clone())
                .ok_or_else(|| UserError("dataset needs --out or config `data_dir`".into()))?;
            let paths = write_dataset(&cfg, &dir)?;
            print(json!({ "dir": dir, "splits": paths }))?;
        }
        Command::Train { component } => {
            let mut cfg = config(&cli)?;
            if let Some(o) = &cli.out {
                cfg.checkpoints.dir = o.clone();
            }
            let s = train_component(&cfg, *component)?;
            if !s.gate_passed {
                tracing::warn!(
                    accuracy = s.metric,
                    gate = TARGET_ACCURACY_GATE,
                    "target classifier is below the accuracy gate"
                );
            }
            print(serde_json::to_value(&s)?)?;
        }
        Command::Generate => {
            let cfg = config(&cli)?;
            let out = cli.out.clone().unwrap_or(cfg.out.clone());
            let m = generate_run(&cfg, &out)?;
            print(json!({
                "run": out,
                "videos": m.indices.len(),
                "median_seconds": m.timing.median_seconds,
            }))?;
        }
        Command::Evaluate { run } => {
            let dir = match (run, &cli.out) {
                (Some(d), _) | (None, Some(d)) => d.clone(),
                (None, None) => config(&cli)?.out,
            };
            let r = evaluate_run(&dir)?;
            print(json!({ "run": dir, "cf": r.cf, "mask_cf": r.mask_cf, "notes": r.notes }))?;
        }
        Command::Sweep => {
            let spec = cli
                .config
                .as_deref()
                .ok_or_else(|| UserError("sweep needs --config SWEEP_SPEC".into()))?;
            let mut sweep = load_sweep(spec, env_vars(), cli.seed)?;
            if let Some(w) = cli.workers {
                sweep.base.workers = w.max(1);
            }
            let out = cli.out.clone().unwrap_or_else(|| {
                Path::new("sweeps").join(&vidcf_cli::config::canonical_hash(
                    &serde_json::to_value(&sweep).expect("sweep serializes"),
                )[..12])
            });
            let o = run_sweep(&sweep, &out)?;
            let failed = o.rows.iter().filter(|r| !r.is_ok()).count();
            print(json!({
                "sweep": out,
                "rows": o.rows.len(),
                "computed": o.computed,
                "failed": failed,
            }))?;
        }
        Command::Report { dir } => {
            let o = report(dir)?;
            print(json!({
                "dir": dir,
                "rows": o.table_rows,
                "grids": o.grids.len(),
                "skipped": o.skipped,
            }))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_target(false)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
