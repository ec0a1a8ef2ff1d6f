//! Argument parsing and dispatch.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Parser, Subcommand};

use ctrfuse_core::architecture::PresetKind;

use crate::commands::{self, ArchSource};
use crate::config::{ConfigArgs, RunConfig};
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "ctrfuse",
    version,
    about = "Fusion-architecture search for click-through-rate models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Encode a Criteo-format TSV into a split cache.
    Preprocess,
    /// Run architecture selection and write the derived architectures.
    Search,
    /// Train an architecture from fresh weights and report test metrics.
    Retrain {
        #[command(flatten)]
        arch: ArchArgs,
        /// Name used for the output files; defaults to the mode or preset.
        #[arg(long)]
        label: Option<String>,
    },
    /// Evaluate a saved model checkpoint on the test split.
    Eval {
        #[command(flatten)]
        arch: ArchArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Summarize a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Debug, Clone, clap::Args)]
pub struct ArchArgs {
    /// Architecture document.
    #[arg(long, conflicts_with = "preset")]
    pub arch: Option<PathBuf>,
    /// Hand-designed architecture: parallel or stacked.
    #[arg(long)]
    pub preset: Option<String>,
}

impl ArchArgs {
    pub fn source(&self) -> Result<ArchSource> {
        if let Some(path) = &self.arch {
            return Ok(ArchSource::File(path.clone()));
        }
        if let Some(name) = &self.preset {
            let kind = PresetKind::from_name(name)
                .ok_or_else(|| CliError::Input(format!("unknown preset {name:?}")))?;
            return Ok(ArchSource::Preset(kind));
        }
        Ok(ArchSource::SearchOutput)
    }
}

/// Runs `job` once per configured seed on up to `jobs` threads and
/// returns the per-seed results in seed order.
fn per_seed<T: Send>(
    cfg: &RunConfig,
    job: impl Fn(&RunConfig) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let runs: Vec<RunConfig> = cfg.seeds.iter().map(|&s| cfg.for_seed(s)).collect();
    if runs.len() == 1 || cfg.jobs == 1 {
        return runs.iter().map(&job).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<T>>>> =
        Mutex::new((0..runs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..cfg.jobs.min(runs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(run) = runs.get(i) else { break };
                let r = job(run);
                results
                    .lock()
                    .expect("no worker panics while holding the lock")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|r| r.expect("every seed ran"))
        .collect()
}

pub fn run(cli: Cli) -> Result<()> {
    if let Command::Report { run } = &cli.command {
        print!("{}", commands::cmd_report(run)?);
        return Ok(());
    }
    let cfg = cli.config.resolve()?;
    match &cli.command {
        Command::Preprocess => {
            let stats = commands::cmd_preprocess(&cfg)?;
            println!(
                "{} samples, {} fields, positive ratio {:.4}; wrote {}",
                stats.samples,
                stats.fields,
                stats.positive_ratio,
                cfg.out.join(commands::CACHE_FILE).display()
            );
        }
        Command::Search => {
            let outcomes = per_seed(&cfg, |c| {
                commands::cmd_search(c).map(|o| (c.seed, c.out.clone(), o))
            })?;
            for (seed, out, o) in outcomes {
                println!(
                    "seed {seed}: {} edges in hard architecture; wrote {}",
                    o.hard.num_edges(),
                    out.display()
                );
            }
        }
        Command::Retrain { arch, label } => {
            let source = arch.source()?;
            let records = per_seed(&cfg, |c| {
                commands::cmd_retrain(c, &source, label.as_deref())
            })?;
            for m in records {
                println!(
                    "seed {} {}: test auc {} logloss {} (best epoch {})",
                    m.seed, m.label, m.auc, m.logloss, m.best_epoch
                );
            }
        }
        Command::Eval { arch, checkpoint } => {
            let (auc, logloss) = commands::cmd_eval(&cfg, &arch.source()?, checkpoint)?;
            println!("test auc {auc} logloss {logloss}");
        }
        Command::Report { .. } => unreachable!("handled above"),
    }
    Ok(())
}
