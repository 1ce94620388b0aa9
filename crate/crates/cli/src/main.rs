use std::io::{IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use vlaforge_core::config::PipelineConfig;
use vlaforge_core::eval_metrics::MetricReport;
use vlaforge_core::pipeline::{self, at, CaptionSource, ErrorClass, Layout, PipelineError};
use vlaforge_core::reasoning_orchestrator::{ReqwestTransport, ThreadSleeper};

#[derive(Parser)]
#[command(name = "vlaforge", version, about = "Grounded driving VQA dataset forge and evaluation toolkit")]
struct Cli {
    /// TOML config; relative paths inside resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-scene stages.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Replay the audit log instead of calling the endpoint.
    #[arg(long, global = true)]
    offline: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse raw scene documents into the ego-frame database.
    Ingest {
        /// Overrides `paths.scenes`.
        #[arg(long)]
        scenes: Option<PathBuf>,
    },
    /// Label every frame with an action and cut plan ground truth.
    Label,
    /// Render template QA pairs per window.
    Generate,
    /// Caption windows with the MLLM and validate against ground truth.
    Caption {
        /// Write prompts only.
        #[arg(long)]
        dry_run: bool,
    },
    /// Planning metrics (L2, collision rate, intersection rate).
    EvalPlan {
        /// JSONL of {sample_id, waypoints}.
        #[arg(long)]
        pred: PathBuf,
        /// Defaults to `<out>/plan_gt.jsonl`.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Directory for report.json and report.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Caption metrics (BLEU, ROUGE-L, METEOR-s, CIDEr).
    EvalVqa {
        /// JSONL of {sample_id, answer}.
        #[arg(long)]
        pred: PathBuf,
        /// QA-pair JSONL; defaults to `<out>/qa/final.jsonl`.
        #[arg(long)]
        refs: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Corpus statistics as CSV and JSON.
    Stats {
        /// Defaults to `<out>/stats`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Two-frame temporal-memory episode; prints tensor statistics.
    MemoryDemo,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).map_err(at("config"))?,
        None => {
            let cwd = std::env::current_dir().map_err(at("config"))?;
            PipelineConfig::with_base(&cwd)
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Command::Caption { dry_run: true } = cli.command {
        cfg.dry_run = true;
    }
    if let Command::Ingest { scenes: Some(dir) } = &cli.command {
        cfg.paths.scenes = dir.clone();
    }
    cfg.validate().map_err(at("config"))?;
    if cli.jobs == 0 {
        return Err(PipelineError::new("config", "config", ErrorClass::User, "--jobs must be >= 1"));
    }
    Ok(cfg)
}

/// Stdout writes ignore errors so a closed pipe (`| head`) is not a crash.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print_json<T: Serialize>(value: &T) {
    emit(&format!("{}\n", serde_json::to_string_pretty(value).expect("serializable output")));
}

fn write_report(report: &MetricReport, dir: &Path, stage: &str) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(at(stage))?;
    let mut json = serde_json::to_string_pretty(report).expect("report serializes");
    json.push('\n');
    std::fs::write(dir.join("report.json"), json).map_err(at(stage))?;
    std::fs::write(dir.join("report.csv"), report.to_csv()).map_err(at(stage))
}

fn print_report(report: &MetricReport) {
    let mut text = report.table();
    for n in &report.notes {
        text.push_str(&format!("note: {n}\n"));
    }
    emit(&text);
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let cfg = load_config(&cli)?;
    let layout = Layout::new(&cfg);
    let jobs = cli.jobs;
    match &cli.command {
        Command::Ingest { .. } => print_json(&pipeline::run_ingest(&cfg, jobs)?),
        Command::Label => print_json(&pipeline::run_label(&cfg, jobs)?),
        Command::Generate => print_json(&pipeline::run_generate(&cfg, jobs)?),
        Command::Caption { .. } => {
            let summary = if cli.offline || cfg.dry_run {
                pipeline::run_caption(&cfg, jobs, CaptionSource::Offline)?
            } else {
                let transport = ReqwestTransport::new().map_err(at("caption"))?;
                let sleeper = ThreadSleeper;
                pipeline::run_caption(
                    &cfg,
                    jobs,
                    CaptionSource::Online { transport: &transport, sleeper: &sleeper, token: None },
                )?
            };
            print_json(&summary);
        }
        Command::EvalPlan { pred, gt, out } => {
            let gt = gt.clone().unwrap_or_else(|| layout.plan_gt());
            let report = pipeline::run_eval_plan(pred, &gt, &cfg)?;
            if let Some(dir) = out {
                write_report(&report, dir, "eval-plan")?;
            }
            print_report(&report);
        }
        Command::EvalVqa { pred, refs, out } => {
            let refs = refs.clone().unwrap_or_else(|| layout.final_qa());
            let report = pipeline::run_eval_vqa(pred, &refs)?;
            if let Some(dir) = out {
                write_report(&report, dir, "eval-vqa")?;
            }
            print_report(&report);
        }
        Command::Stats { out } => print_json(&pipeline::run_stats(&cfg, jobs, out.as_deref())?),
        Command::MemoryDemo => print_json(&pipeline::run_memory_demo(&cfg)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("VLAFORGE_LOG").unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let err = PipelineError::new("cli", "usage", ErrorClass::User, e.to_string().trim_end());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code() as u8);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
