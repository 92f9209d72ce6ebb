use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use cspos_core::bank::{load_bank, validate_bank, Severity};
use cspos_core::corpus::load_corpus;
use cspos_core::metrics::render_table;
use cspos_core::project::{Project, ProjectConfig, ProjectInputs, CONFIG_FILE, INPUTS_DIR};
use cspos_core::router::{route_corpus, RouteBucket, RoutingReport, WordLists};
use cspos_core::sim::{SimConfig, Simulation, Sink};
use cspos_service::{parse_task, router, AppState, Clock, SystemClock};
use tracing::info;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "cspos", version, about = "Crowdsourced POS annotation of code-switched text")]
struct Cli {
    /// Project config (for ingest and route) or simulation config (for simulate).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Project data directory.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate inputs and create a project in the data directory.
    Ingest,
    /// Print how the corpus splits across tasks. Reads the corpus and
    /// lists named by the project config unless both are given.
    Route {
        #[arg(long, requires = "lists")]
        corpus: Option<PathBuf>,
        #[arg(long, requires = "corpus")]
        lists: Option<PathBuf>,
        /// Write the report as JSON to this file.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "table")]
        format: Format,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
    /// Run synthetic workers over a synthetic corpus.
    Simulate {
        /// Directory for the judgment log, worker table and reports.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Stop once this many transactions are committed.
        #[arg(long)]
        until_txn: Option<u64>,
    },
    /// Print metrics and routing for the project.
    Report {
        /// One of tsq, eng_qt, spa_qt; all tasks when absent.
        #[arg(long)]
        task: Option<String>,
        #[arg(long, default_value = "table")]
        format: Format,
    },
    /// Write final tags as TSV.
    Export {
        #[arg(long = "final", value_name = "FILE")]
        final_tags: Option<PathBuf>,
    },
    /// Question bank tools.
    Bank {
        #[command(subcommand)]
        command: BankCommand,
    },
    /// Worker quality control.
    Qc {
        #[command(subcommand)]
        command: QcCommand,
    },
    /// Replay the log and print the transaction count and state digest.
    Digest,
}

#[derive(Subcommand)]
enum BankCommand {
    /// Check a bank directory; exits non-zero on errors.
    Validate { bank: PathBuf },
    /// List every root-to-leaf path of a tree, or of all trees.
    Paths {
        tree_id: Option<String>,
        /// Bank directory; defaults to the project's copy.
        #[arg(long)]
        bank: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Subcommand)]
enum QcCommand {
    /// List workers with their test accuracy.
    Workers,
    /// Ban a worker and discard their judgments.
    Ban {
        worker_id: String,
        #[arg(long)]
        dry_run: bool,
        #[arg(long, default_value = "cli")]
        by: String,
    },
}

fn data_dir(cli: &Cli) -> PathBuf {
    cli.data_dir.clone().unwrap_or_else(|| PathBuf::from("data"))
}

fn require_config(cli: &Cli) -> Result<&Path> {
    cli.config.as_deref().context("--config is required")
}

fn now_ms() -> i64 {
    SystemClock.now_ms()
}

fn open(cli: &Cli) -> Result<Project> {
    let dir = data_dir(cli);
    Project::open(&dir).with_context(|| format!("opening project in {}", dir.display()))
}

fn print_routing(r: &RoutingReport) {
    println!("{:<12} {:>8} {:>8}", "task", "tokens", "%");
    for b in RouteBucket::ALL {
        let row = r.rows.iter().find(|x| x.task == b);
        let (n, pct) = row.map_or((0, 0.0), |x| (x.tokens, x.percent));
        println!("{:<12} {:>8} {:>8.2}", b.label(), n, pct);
    }
    println!("{:<12} {:>8}", "total", r.total);
    if r.und_defaulted > 0 {
        println!("({} undetermined-language tokens sent to the English tree)", r.und_defaulted);
    }
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest => {
            let mut cfg = ProjectConfig::load(require_config(&cli)?)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let dir = data_dir(&cli);
            let project = Project::ingest_config(cfg, &dir, now_ms())?;
            let pool = project.state().pool_status();
            println!("ingested into {}", dir.display());
            print_routing(project.state().routing());
            println!(
                "crowd pool {} tokens, manual queue {}, test questions {}",
                pool.crowd_tokens,
                pool.manual_pending,
                project.state().inputs().tests.len()
            );
        }
        Command::Route {
            corpus,
            lists,
            out,
            format,
        } => {
            let report = match (corpus, lists) {
                (Some(corpus), Some(lists)) => {
                    let tokens = load_corpus(corpus)?;
                    let lists = WordLists::load(lists)?;
                    lists.validate()?;
                    route_corpus(&tokens, &lists)
                }
                _ => {
                    let cfg_path = match &cli.config {
                        Some(p) => p.clone(),
                        None => data_dir(&cli).join(INPUTS_DIR).join(CONFIG_FILE),
                    };
                    let inputs = ProjectInputs::load(&ProjectConfig::load(&cfg_path)?)?;
                    route_corpus(&inputs.tokens, &inputs.lists)
                }
            };
            if let Some(out) = out {
                std::fs::write(out, serde_json::to_string_pretty(&report)?)?;
            }
            match format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&report)?),
                Format::Table => print_routing(&report),
            }
        }
        Command::Serve { bind } => {
            let dir = data_dir(&cli);
            let project = open(&cli)?;
            let cfg = ProjectConfig::load(&dir.join(INPUTS_DIR).join(CONFIG_FILE))?;
            let state = AppState::new(project, cfg.auth, Arc::new(SystemClock));
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(bind).await?;
                info!("listening on {}", listener.local_addr()?);
                println!("listening on {}", listener.local_addr()?);
                axum::serve(listener, router(state))
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await?;
                anyhow::Ok(())
            })?;
        }
        Command::Simulate { out, until_txn } => {
            let mut cfg = SimConfig::load(require_config(&cli)?)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let sink = match &cli.data_dir {
                Some(d) => Sink::DataDir(d.clone()),
                None => Sink::Discard,
            };
            let mut sim = Simulation::new(cfg, sink)?;
            match until_txn {
                Some(t) => sim.run_until_txn(*t)?,
                None => {
                    sim.run()?;
                }
            }
            let summary = sim.summary();
            if let Some(out) = out {
                sim.write_trace(out, &summary)?;
            }
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Report { task, format } => {
            let project = open(&cli)?;
            let task = task.as_deref().map(parse_task).transpose()?;
            let report = project.state().report(task);
            if *format == Format::Json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print_routing(&report.routing);
                println!();
                print!("{}", render_table(&report.metrics));
                let p = &report.pool;
                println!();
                println!(
                    "decided {} of {} crowd tokens; {} ties and {} manual tokens await experts",
                    p.decided, p.crowd_tokens, p.ties_pending, p.manual_pending
                );
            }
        }
        Command::Export { final_tags } => {
            let project = open(&cli)?;
            let tsv = project.state().export_tsv();
            match final_tags {
                Some(path) => std::fs::write(path, tsv)?,
                None => std::io::stdout().write_all(tsv.as_bytes())?,
            }
        }
        Command::Bank { command } => match command {
            BankCommand::Validate { bank } => {
                let bank = load_bank(bank)?;
                let findings = validate_bank(&bank);
                for f in &findings {
                    println!("{f}");
                }
                let errors = findings.iter().filter(|f| f.severity == Severity::Error).count();
                println!(
                    "{} TSQs, {} trees: {} errors, {} warnings",
                    bank.tsqs.len(),
                    bank.trees.len(),
                    errors,
                    findings.len() - errors
                );
                if errors > 0 {
                    bail!("bank has {errors} error(s)");
                }
            }
            BankCommand::Paths { tree_id, bank } => {
                let dir = bank
                    .clone()
                    .unwrap_or_else(|| data_dir(&cli).join(INPUTS_DIR).join("bank"));
                let bank = load_bank(&dir)?;
                if let Some(id) = tree_id {
                    if !bank.trees.contains_key(id) {
                        bail!("no tree {id} in {}", dir.display());
                    }
                }
                for (id, t) in &bank.trees {
                    if tree_id.as_ref().is_some_and(|want| want != id) {
                        continue;
                    }
                    for p in t.paths() {
                        let steps: Vec<String> = p.steps.iter().map(|s| format!("{}:{}", s.node, s.answer)).collect();
                        println!("{id}\t{}\t{}", steps.join(" > "), p.tag);
                    }
                }
            }
        },
        Command::Qc { command } => match command {
            QcCommand::Workers => {
                let project = open(&cli)?;
                println!("{:<20} {:<14} {:>8} {:>8} {:>8}", "worker", "status", "tests", "correct", "acc");
                for w in project.state().workers().values() {
                    println!(
                        "{:<20} {:<14} {:>8} {:>8} {:>8}",
                        w.worker_id,
                        w.status.as_str(),
                        w.test_answered,
                        w.test_correct,
                        w.accuracy().map_or("-".into(), |a| format!("{a:.3}"))
                    );
                }
            }
            QcCommand::Ban { worker_id, dry_run, by } => {
                let mut project = open(&cli)?;
                let preview = if *dry_run {
                    project.state().ban_preview(worker_id)?
                } else {
                    project.ban(worker_id, by, now_ms())?
                };
                println!("{}", serde_json::to_string_pretty(&preview)?);
            }
        },
        Command::Digest => {
            let project = open(&cli)?;
            println!("{} {}", project.state().txn(), project.state().digest());
        }
    }
    Ok(())
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("CSPOS_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
