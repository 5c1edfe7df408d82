//! `prepline` command line: the HTTP service plus offline training, unattended
//! runs, program diffs and synthetic data generation.

pub mod server;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use prepline_core::ops::Family;
use prepline_core::recommender::{load_manifest, save_model, train, RecKind, TrainConfig};
use prepline_core::script::ScriptSource;
use prepline_core::session::{CreateRequest, ServiceConfig, SessionError, SessionManager};
use prepline_core::synth;
use prepline_core::versions::{diff, ChangeKind};

#[derive(Debug, Parser)]
#[command(name = "prepline", version, about = "Interactive data-preparation pipelines")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Start the HTTP service.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the recommender networks on a corpus manifest.
    Train {
        /// manifest.json, or a directory holding one
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 200)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "models")]
        out: PathBuf,
    },
    /// Apply the top recommendation k times and print the metric after each.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        label: String,
        #[arg(long, default_value_t = 0)]
        auto_steps: usize,
        /// Directory with logical.qnet and physical.qnet
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Print line changes between two programs.
    Diff { a: PathBuf, b: PathBuf },
    /// Write the synthetic training and held-out suites.
    Synth {
        #[arg(long, default_value = "corpus/synth")]
        out: PathBuf,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::Serve { port, config } => serve(port, config.as_deref()),
        Command::Train {
            corpus,
            episodes,
            seed,
            out: dir,
        } => train_cmd(&corpus, episodes, seed, &dir, &mut out),
        Command::Run {
            dataset,
            label,
            auto_steps,
            models,
        } => run_cmd(&dataset, &label, auto_steps, models.as_deref(), &mut out),
        Command::Diff { a, b } => diff_cmd(&a, &b, &mut out),
        Command::Synth { out: dir } => {
            synth::write_suite(&dir, &synth::training_suite(), "manifest.json")?;
            synth::write_suite(&dir, &synth::heldout_suite(), "heldout.json")?;
            writeln!(out, "wrote {}", dir.display())?;
            Ok(())
        }
    }
}

fn serve(port: Option<u16>, config: Option<&Path>) -> Result<()> {
    let mut cfg = match config {
        Some(p) => ServiceConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => ServiceConfig::default(),
    };
    if let Some(p) = port {
        cfg.port = p;
    }
    let port = cfg.port;
    let manager = Arc::new(SessionManager::new(cfg)?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
        eprintln!("listening on {}", listener.local_addr()?);
        axum::serve(listener, server::router(manager))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn train_cmd(corpus: &Path, episodes: usize, seed: u64, dir: &Path, out: &mut impl Write) -> Result<()> {
    let manifest = if corpus.is_dir() { corpus.join("manifest.json") } else { corpus.to_path_buf() };
    let entries = load_manifest(&manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let cfg = TrainConfig {
        episodes,
        seed,
        ..TrainConfig::default()
    };
    let trained = train(&entries, &cfg)?;
    let config = serde_json::to_value(&cfg)?;
    save_model(&trained.logical, &dir.join("logical.qnet"), seed, config.clone())?;
    save_model(&trained.physical, &dir.join("physical.qnet"), seed, config)?;
    let tail = &trained.log[trained.log.len().saturating_sub(entries.len())..];
    let mean = tail.iter().map(|e| e.final_metric).sum::<f64>() / tail.len().max(1) as f64;
    writeln!(out, "trained {episodes} episodes on {} datasets; last-round mean metric={mean:.4}", entries.len())?;
    writeln!(out, "wrote {} and {}", dir.join("logical.qnet").display(), dir.join("physical.qnet").display())?;
    Ok(())
}

fn fmt_metric(m: Option<f64>) -> String {
    m.map_or_else(|| "none".to_string(), |m| format!("{m:.4}"))
}

fn run_cmd(dataset: &Path, label: &str, steps: usize, models: Option<&Path>, out: &mut impl Write) -> Result<()> {
    let work = tempfile::tempdir()?;
    let cfg = ServiceConfig {
        sessions_dir: work.path().to_path_buf(),
        logical_model: models.map(|m| m.join("logical.qnet")),
        physical_model: models.map(|m| m.join("physical.qnet")),
        ..ServiceConfig::default()
    };
    let m = SessionManager::new(cfg)?;
    let created = m.create(&CreateRequest {
        path: Some(dataset.to_path_buf()),
        csv: None,
        file_name: None,
        label: label.to_string(),
    })?;
    if let Some(e) = &created.error {
        bail!("baseline program failed: {e}");
    }
    writeln!(out, "baseline metric={}", fmt_metric(created.version.metric))?;
    let id = created.session_id;
    for step in 1..=steps {
        let recs = match m.recommend(&id) {
            Ok(r) => r,
            Err(SessionError::AllFamiliesUsed) => {
                eprintln!("every family is already applied; stopping after {} steps", step - 1);
                break;
            }
            Err(e) => return Err(e.into()),
        };
        // Fall through to the next suggestion when one cannot run on this data.
        let mut applied = None;
        for rec in &recs {
            let op = match rec.kind {
                RecKind::Physical => rec.name.clone(),
                RecKind::Logical => Family::from_name(&rec.name).map_or(rec.name.clone(), |f| f.default_op().name.to_string()),
            };
            match m.apply(&id, &rec.prompt.text, None) {
                Ok(r) => {
                    applied = Some((op, r.metric));
                    break;
                }
                Err(SessionError::RepairExhausted(_)) => continue,
                Err(e) => return Err(e.into()),
            }
        }
        let Some((op, metric)) = applied else {
            bail!("no recommendation could be applied at step {step}");
        };
        writeln!(out, "step {step}: op={op} metric={}", fmt_metric(metric))?;
    }
    Ok(())
}

fn diff_cmd(a: &Path, b: &Path, out: &mut impl Write) -> Result<()> {
    let read = |p: &Path| std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()));
    let script = diff(&ScriptSource::new(read(a)?), &ScriptSource::new(read(b)?));
    for c in &script.changes {
        let sign = match c.kind {
            ChangeKind::Delete => '-',
            ChangeKind::Insert => '+',
        };
        writeln!(out, "{sign} {}", c.line)?;
    }
    Ok(())
}
