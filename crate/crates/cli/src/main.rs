//! `physprompt`: refine a prompt, run a benchmark, print report tables, or
//! resume an interrupted session.
//!
//! Exit codes: 0 success, 1 other error, 2 config or usage, 3 dataset,
//! 4 backend failure, 5 empty cohort, 6 ledger or storage, 130 interrupted.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use config::{Config, ConfigError, Format, Overrides};
use physprompt_core::bench::{
    aggregate, load_dataset, render_report, render_round_table, run_benchmark, BenchError,
    BenchOptions, DatasetError, ReportStyle, DEFAULT_BINARIZE_THRESHOLD,
};
use physprompt_core::domain::{DomainError, PromptText, RefinementSession};
use physprompt_core::engine::{Engine, EngineError};
use physprompt_core::gateway::GatewayError;
use physprompt_core::ledger::{list_sessions, load_session, LedgerError, SessionLedger};
use physprompt_core::prompt_kit::{PromptError, TemplateSet};

#[derive(Parser)]
#[command(name = "physprompt", version, about = "Physics-aware prompt refinement for text-to-video models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Refine one prompt until it is good enough, stops improving, or hits the round cap.
    Refine(Common),
    /// Refine every prompt of a dataset and write per-round reports.
    Bench(Common),
    /// Print report tables for the sessions under a session root.
    Report(Common),
    /// Continue a session that was interrupted or hit a backend failure.
    Resume {
        session_id: String,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Default)]
struct Common {
    /// JSON config file. Without it every backend is the built-in mock.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    prompt: Option<String>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, visible_alias = "rounds")]
    max_rounds: Option<u32>,
    /// Satisfaction threshold.
    #[arg(long)]
    tau: Option<f64>,
    /// Convergence threshold; 0 disables convergence stopping.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    session_root: Option<PathBuf>,
    /// Where bench writes its report files.
    #[arg(long)]
    report_dir: Option<PathBuf>,
    /// Report a single round instead of every round.
    #[arg(long)]
    round: Option<u32>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Score at or above which a session counts as passing.
    #[arg(long)]
    threshold: Option<f64>,
}

impl Common {
    fn resolve(self) -> Result<Config> {
        let mut cfg = Config::load(self.config.as_deref())?;
        cfg.apply(Overrides {
            prompt: self.prompt,
            dataset: self.dataset,
            max_rounds: self.max_rounds,
            tau: self.tau,
            epsilon: self.epsilon,
            parallelism: self.parallelism,
            session_root: self.session_root,
            report_dir: self.report_dir,
            round: self.round,
            format: self.format,
            threshold: self.threshold,
        });
        Ok(cfg)
    }
}

/// Raised on Ctrl-C. Rounds in flight finish and are logged before the
/// process stops.
fn cancel_flag() -> Arc<AtomicBool> {
    let flag = Arc::new(AtomicBool::new(false));
    let f = flag.clone();
    tokio::spawn(async move {
        if tokio::signal::ctrl_c().await.is_ok() {
            eprintln!("interrupt received; finishing the current round");
            f.store(true, Ordering::SeqCst);
        }
    });
    flag
}

fn build_engine(cfg: &Config) -> Result<Engine> {
    let gateways = cfg.backends.build().context("building backends")?;
    let templates = TemplateSet::load(&cfg.templates).context("loading templates")?;
    Ok(Engine::new(gateways, templates, cfg.video))
}

fn print_rounds(session: &RefinementSession) {
    for r in &session.rounds {
        if let Some(s) = r.scores {
            println!("round {}: pc {:.2} sa {:.2}", r.index, s.pc(), s.sa());
        }
    }
}

fn print_outcome(session: &RefinementSession, dir: &Path) {
    print_rounds(session);
    if let Some(reason) = session.stop_reason {
        println!("stop: {reason}");
    }
    println!("final prompt: {}", session.final_prompt());
    println!("session: {}", dir.display());
}

async fn cmd_refine(common: Common) -> Result<()> {
    let cfg = common.resolve()?;
    cfg.policy.validate()?;
    let text = cfg
        .prompt
        .clone()
        .ok_or_else(|| ConfigError("refine needs --prompt (or \"prompt\" in the config)".into()))?;
    let prompt = PromptText::new(text)?;
    let engine = build_engine(&cfg)?;
    let root = cfg.session_root();
    let id = uuid::Uuid::new_v4().simple().to_string();
    let mut session = RefinementSession::new(id, prompt, cfg.policy.clone());
    let mut ledger = SessionLedger::create(&root, &session, Some(cfg.to_json()))?;
    let cancel = cancel_flag();
    let result = engine.run(&mut session, &mut ledger, Some(&cancel)).await;
    print_outcome(&session, ledger.dir());
    result?;
    Ok(())
}

async fn cmd_resume(session_id: String, common: Common) -> Result<()> {
    let cfg = common.resolve()?;
    let root = cfg.session_root();
    let mut session = load_session(&root, &session_id)?;
    if session.is_finished() {
        return Err(ConfigError(format!(
            "session '{session_id}' already finished ({}); nothing to resume",
            session.stop_reason.map(|r| r.as_str()).unwrap_or("-")
        ))
        .into());
    }
    let engine = build_engine(&cfg)?;
    let mut ledger = SessionLedger::open(&root, &session_id)?;
    let cancel = cancel_flag();
    let result = engine.run(&mut session, &mut ledger, Some(&cancel)).await;
    print_outcome(&session, ledger.dir());
    result?;
    Ok(())
}

fn style(format: Option<Format>) -> ReportStyle {
    match format.unwrap_or_default() {
        Format::Markdown => ReportStyle::Markdown,
        Format::Csv => ReportStyle::Csv,
    }
}

fn threshold(cfg: &Config) -> f64 {
    cfg.binarize_threshold.unwrap_or(DEFAULT_BINARIZE_THRESHOLD)
}

async fn cmd_bench(common: Common) -> Result<i32> {
    let cfg = common.resolve()?;
    cfg.policy.validate()?;
    let path = cfg
        .dataset
        .clone()
        .ok_or_else(|| ConfigError("bench needs --dataset (or \"dataset\" in the config)".into()))?;
    let entries = load_dataset(&path, None)?;
    let engine = build_engine(&cfg)?;
    let cancel = cancel_flag();
    let options = BenchOptions {
        parallelism: cfg.parallelism.unwrap_or(1),
        session_root: Some(cfg.session_root()),
        effective_config: Some(cfg.to_json()),
        cancel: Some(cancel.clone()),
    };
    let run = run_benchmark(&engine, &entries, &cfg.policy, &options).await?;
    let skipped = run.outcomes.iter().filter(|o| o.skipped).count();
    for o in &run.outcomes {
        if let Some(e) = &o.error {
            eprintln!("entry {}: {e}", o.entry_id);
        }
    }
    eprintln!(
        "{} entries: {} finished earlier, {} failed",
        run.outcomes.len(),
        skipped,
        run.failures()
    );

    let sessions = run.sessions();
    let t = threshold(&cfg);
    let dir = cfg.report_dir();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut reports = Vec::new();
    for round in 1..=cfg.policy.max_rounds {
        let report = aggregate(&sessions, round, t)?;
        for (style, ext) in [(ReportStyle::Markdown, "md"), (ReportStyle::Csv, "csv")] {
            let file = dir.join(format!("round_{round}.{ext}"));
            std::fs::write(&file, render_report(&report, style))
                .with_context(|| format!("writing {}", file.display()))?;
        }
        reports.push(report);
    }
    for (style, ext) in [(ReportStyle::Markdown, "md"), (ReportStyle::Csv, "csv")] {
        let file = dir.join(format!("rounds.{ext}"));
        std::fs::write(&file, render_round_table(&reports, style))
            .with_context(|| format!("writing {}", file.display()))?;
    }
    print!("{}", render_round_table(&reports, style(cfg.format)));
    eprintln!("reports: {}", dir.display());

    if cancel.load(Ordering::SeqCst) {
        return Ok(130);
    }
    Ok(if run.failures() > 0 { 4 } else { 0 })
}

fn cmd_report(common: Common) -> Result<()> {
    let cfg = common.resolve()?;
    let root = cfg.session_root();
    let mut sessions = Vec::new();
    for id in list_sessions(&root)? {
        match load_session(&root, &id) {
            Ok(s) => sessions.push(s),
            Err(e) => eprintln!("warning: skipping session {id}: {e}"),
        }
    }
    let t = threshold(&cfg);
    let style = style(cfg.format);
    match cfg.round {
        Some(round) => {
            let report = aggregate(&sessions, round, t)?;
            if report.per_round.values().all(|m| m.n == 0) {
                eprintln!(
                    "warning: no session completed round {round}; {} excluded",
                    report.excluded
                );
            }
            print!("{}", render_report(&report, style));
        }
        None => {
            let last = sessions.iter().map(|s| s.rounds.len() as u32).max().unwrap_or(0);
            if last == 0 {
                eprintln!("warning: no session completed a round");
            }
            let reports = (1..=last.max(1))
                .map(|r| aggregate(&sessions, r, t))
                .collect::<Result<Vec<_>, _>>()?;
            print!("{}", render_round_table(&reports, style));
        }
    }
    Ok(())
}

/// Maps an error to its documented exit code by the first recognizable
/// cause in the chain.
fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<DomainError>() || cause.is::<PromptError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<EngineError>() {
            return match e {
                EngineError::Backend { .. } | EngineError::Output { .. } => 4,
                EngineError::Ledger(_) => 6,
                EngineError::Policy(_) | EngineError::Finished(_) => 2,
                EngineError::Interrupted => 130,
            };
        }
        if let Some(e) = cause.downcast_ref::<BenchError>() {
            return match e {
                BenchError::Dataset(_) => 3,
                BenchError::EmptyCohort => 5,
                BenchError::InvalidParallelism | BenchError::Policy(_) => 2,
            };
        }
        if cause.is::<DatasetError>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<GatewayError>() {
            return if matches!(e, GatewayError::Config(_)) { 2 } else { 4 };
        }
        if cause.is::<LedgerError>() || cause.is::<std::io::Error>() {
            return 6;
        }
    }
    1
}

#[tokio::main]
async fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Refine(c) => cmd_refine(c).await.map(|_| 0),
        Command::Bench(c) => cmd_bench(c).await,
        Command::Report(c) => cmd_report(c).map(|_| 0),
        Command::Resume { session_id, common } => cmd_resume(session_id, common).await.map(|_| 0),
    };
    let code = match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
