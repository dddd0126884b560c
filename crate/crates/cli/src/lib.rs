//! Config-driven pipeline around the `vmrec` library:
//! `prepare -> train-base -> train-mapper -> evaluate`, plus `ablate` and
//! `diagnose`. Every stage writes under the output directory and records a
//! `run.json` manifest that later stages check before reading its outputs.

pub mod artifacts;
pub mod commands;
pub mod config;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use vmrec::basemodels::BaseKind;
use vmrec::evaluation::format_table;
use vmrec::mapper::InferenceMode;
use vmrec::training::DistributionKind;

use crate::commands::Sweeps;
use crate::config::{Method, RunConfig, Subset};

#[derive(Debug, Parser)]
#[command(name = "vmrec", version, about = "Cold-start user embeddings by variational mapping")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split the interaction file into warm / validation / test users.
    Prepare,
    /// Train the base recommender on warm users.
    TrainBase,
    /// Fit the mapping generator, one run per learning rate.
    TrainMapper,
    /// Score a method on test users at each configured shot count.
    Evaluate,
    /// Compare the trained mapper with another distribution family.
    Ablate,
    /// Cluster-distance statistic plus beta and warm-proportion sweeps.
    Diagnose {
        #[arg(long, value_enum, default_value_t = Sweeps::All)]
        sweeps: Sweeps,
    },
    /// Print the effective configuration as TOML.
    Config,
}

/// Flags override the matching config keys.
#[derive(Debug, Default, Args)]
pub struct Flags {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed; `VMREC_SEED` is used when neither this nor the config sets one.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Shot counts, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    #[arg(long, global = true)]
    pub base: Option<BaseKind>,
    #[arg(long, global = true)]
    pub method: Option<Method>,
    #[arg(long, global = true)]
    pub mode: Option<InferenceMode>,
    #[arg(long, global = true)]
    pub subset: Option<Subset>,
    /// KL weight.
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    /// Share of warm users available to the mapper.
    #[arg(long, global = true)]
    pub proportion: Option<f64>,
    /// Learning rates, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub lr_grid: Option<Vec<f64>>,
    /// Distribution family for `ablate`.
    #[arg(long, global = true)]
    pub kind: Option<DistributionKind>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// The interaction file starts with a header line.
    #[arg(long, global = true)]
    pub header: bool,
}

impl Flags {
    /// Loads the config file (or defaults) and applies flags and `VMREC_SEED`.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.run.seed = Some(s);
        }
        if cfg.run.seed.is_none() {
            if let Ok(v) = std::env::var("VMREC_SEED") {
                cfg.run.seed = Some(
                    v.trim()
                        .parse()
                        .with_context(|| format!("VMREC_SEED={v:?} is not a seed"))?,
                );
            }
        }
        if let Some(k) = &self.k {
            cfg.eval.ks = k.clone();
        }
        if let Some(b) = self.base {
            cfg.base.kind = b;
        }
        if let Some(m) = self.method {
            cfg.eval.method = m;
        }
        if let Some(m) = self.mode {
            cfg.eval.modes = vec![m];
        }
        if let Some(s) = self.subset {
            cfg.eval.subset = s;
        }
        if let Some(b) = self.beta {
            cfg.mapper.beta = b;
        }
        if let Some(p) = self.proportion {
            cfg.mapper.warm_proportion = p;
        }
        if let Some(g) = &self.lr_grid {
            cfg.mapper.lr_grid = g.clone();
        }
        if let Some(k) = self.kind {
            cfg.ablate.kind = k;
        }
        if let Some(t) = self.threads {
            cfg.run.threads = t;
        }
        if let Some(o) = &self.out {
            cfg.run.out = o.clone();
        }
        if self.header {
            cfg.data.header = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Runs one command and returns what it prints on stdout.
pub fn run(command: &Command, cfg: &RunConfig) -> Result<String> {
    Ok(match command {
        Command::Prepare => serde_json::to_string_pretty(&commands::prepare(cfg)?)?,
        Command::TrainBase => {
            let m = commands::train_base(cfg)?;
            format!(
                "{} base model: {} users, {} items, dim {}",
                m.kind,
                m.users.len(),
                m.items.len(),
                m.dim()
            )
        }
        Command::TrainMapper => {
            let o = commands::train_mapper_cmd(cfg)?;
            let mut s = format!(
                "best lr {} | val NDCG@5 {:.4} | untrained {:.4} | mean pi {:.4}",
                o.best_lr, o.best_val_ndcg5, o.initial_val_ndcg5, o.mean_pi_at_best
            );
            for r in &o.runs {
                s.push_str(&format!(
                    "\n  lr {:<8} epochs {:>3} best epoch {:>3} val {:.4}{}",
                    r.lr,
                    r.epochs,
                    r.best_epoch,
                    r.best_val_ndcg5,
                    r.diverged
                        .as_deref()
                        .map(|d| format!(" diverged: {d}"))
                        .unwrap_or_default()
                ));
            }
            s
        }
        Command::Evaluate => format_table(&commands::evaluate_cmd(cfg)?),
        Command::Ablate => format_table(&commands::ablate_cmd(cfg)?),
        Command::Diagnose { sweeps } => serde_json::to_string_pretty(&commands::diagnose_cmd(cfg, *sweeps)?)?,
        Command::Config => cfg.to_toml(),
    })
}

/// Entry point shared by the binary and the tests.
pub fn main_with(cli: &Cli) -> Result<String> {
    let cfg = cli.flags.resolve()?;
    if cfg.run.threads > 0 {
        // Fails harmlessly if a pool was already set up in this process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.run.threads)
            .build_global();
    }
    run(&cli.command, &cfg)
}
