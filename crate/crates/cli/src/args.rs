//! Command-line flags. Every flag overrides the matching config-file entry.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mbsts_core::bench::Variant;

use crate::commands::{self, Command, RunManifest};
use crate::config::RunConfig;
use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "mbsts", version, about = "Multivariate Bayesian structural time-series models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; flags override its entries.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Master seed for every random stream of the run.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DataFlags {
    /// Targets CSV (date column, then one column per series).
    #[arg(long)]
    pub targets: Option<PathBuf>,
    /// Predictor CSV for each series, in series order.
    #[arg(long = "predictors")]
    pub predictors: Vec<PathBuf>,
    /// Use only the first ROWS rows.
    #[arg(long)]
    pub rows: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SamplerFlags {
    /// Total Gibbs iterations per chain, burn-in included.
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub chains: Option<usize>,
    /// Keep only final states, not full smoothed state paths.
    #[arg(long)]
    pub no_state_paths: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum VariantArg {
    Joint,
    Independent,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Generate a synthetic dataset with its true parameters.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Generator, 1 to 7.
        #[arg(long)]
        model: Option<u8>,
        /// Number of time points.
        #[arg(long)]
        n: Option<usize>,
        /// Error correlation between the two series.
        #[arg(long)]
        correlation: Option<f64>,
    },
    /// Run the Gibbs sampler and write a draw store.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        sampler: SamplerFlags,
    },
    /// Posterior-predictive forecasts from a draw store.
    Forecast {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlags,
        /// Draw store written by `train` (its `draws` directory).
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        horizon: Option<usize>,
        /// Central band level, e.g. 0.9; repeatable.
        #[arg(long = "level")]
        levels: Vec<f64>,
        /// Also write every predictive path.
        #[arg(long)]
        samples: bool,
    },
    /// Growing-window one-step-ahead evaluation.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        sampler: SamplerFlags,
        /// Rows in the first training window (default 80%).
        #[arg(long)]
        initial_train_len: Option<usize>,
        /// Number of one-step forecasts.
        #[arg(long)]
        steps: Option<usize>,
        /// Model variant to evaluate; repeatable.
        #[arg(long = "variant", value_enum)]
        variants: Vec<VariantArg>,
        /// Start each refit from the previous fit's last draw.
        #[arg(long)]
        warm_start: bool,
    },
    /// Align evaluation CSVs into one cumulative-error table.
    Report {
        #[command(flatten)]
        common: Common,
        /// Evaluation CSV; repeatable.
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
    },
    /// Max-log-return targets from daily price files.
    BuildTargets {
        #[command(flatten)]
        common: Common,
        /// Price CSV (date, open, high, low, close) per ticker; repeatable.
        #[arg(long = "prices")]
        prices: Vec<PathBuf>,
        /// Look-ahead window in days.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Re-run a recorded command from its manifest.
    Replay {
        /// manifest.json or the directory holding it.
        manifest: PathBuf,
        /// Write to this directory instead of the recorded one.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

fn cwd_path(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(out) = &self.out {
            cfg.output = Some(cwd_path(out));
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

impl DataFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(t) = &self.targets {
            cfg.data.targets = Some(cwd_path(t));
        }
        if !self.predictors.is_empty() {
            cfg.data.predictors = self
                .predictors
                .iter()
                .map(|p| crate::panel::PredictorSource {
                    path: Some(cwd_path(p)),
                    ..Default::default()
                })
                .collect();
        }
        if let Some(r) = self.rows {
            cfg.data.rows = Some(r);
        }
    }
}

impl SamplerFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(d) = self.draws {
            cfg.train.total_draws = d;
        }
        if let Some(b) = self.burn_in {
            cfg.train.burn_in = b;
        }
        if let Some(c) = self.chains {
            cfg.train.chains = c;
        }
        if self.no_state_paths {
            cfg.train.store_state_paths = false;
        }
    }
}

/// Resolves flags and config into the command to run.
pub fn resolve(command: CliCommand) -> Result<Resolved> {
    Ok(match command {
        CliCommand::Simulate {
            common,
            model,
            n,
            correlation,
        } => {
            let mut cfg = common.load()?;
            if let Some(m) = model {
                cfg.simulate.model = m;
            }
            if let Some(n) = n {
                cfg.simulate.n = n;
            }
            if correlation.is_some() {
                cfg.simulate.correlation = correlation;
            }
            Resolved::Run(Command::Simulate, cfg)
        }
        CliCommand::Train { common, data, sampler } => {
            let mut cfg = common.load()?;
            data.apply(&mut cfg);
            sampler.apply(&mut cfg);
            Resolved::Run(Command::Train, cfg)
        }
        CliCommand::Forecast {
            common,
            data,
            store,
            horizon,
            levels,
            samples,
        } => {
            let mut cfg = common.load()?;
            data.apply(&mut cfg);
            if let Some(s) = store {
                cfg.forecast.draws = Some(cwd_path(&s));
            }
            if let Some(h) = horizon {
                cfg.forecast.horizon = h;
            }
            if !levels.is_empty() {
                cfg.forecast.levels = levels;
            }
            cfg.forecast.samples |= samples;
            Resolved::Run(Command::Forecast, cfg)
        }
        CliCommand::Evaluate {
            common,
            data,
            sampler,
            initial_train_len,
            steps,
            variants,
            warm_start,
        } => {
            let mut cfg = common.load()?;
            data.apply(&mut cfg);
            sampler.apply(&mut cfg);
            if initial_train_len.is_some() {
                cfg.eval.initial_train_len = initial_train_len;
            }
            if let Some(s) = steps {
                cfg.eval.horizon_steps = s;
            }
            if !variants.is_empty() {
                cfg.eval.variants = variants
                    .into_iter()
                    .map(|v| match v {
                        VariantArg::Joint => Variant::Joint,
                        VariantArg::Independent => Variant::Independent,
                    })
                    .collect();
            }
            cfg.eval.warm_start |= warm_start;
            Resolved::Run(Command::Evaluate, cfg)
        }
        CliCommand::Report { common, inputs } => {
            let mut cfg = common.load()?;
            if !inputs.is_empty() {
                cfg.report.inputs = inputs.iter().map(|p| cwd_path(p)).collect();
            }
            Resolved::Run(Command::Report, cfg)
        }
        CliCommand::BuildTargets { common, prices, k } => {
            let mut cfg = common.load()?;
            if !prices.is_empty() {
                cfg.targets.prices = prices.iter().map(|p| cwd_path(p)).collect();
            }
            if let Some(k) = k {
                cfg.targets.k = k;
            }
            Resolved::Run(Command::BuildTargets, cfg)
        }
        CliCommand::Replay { manifest, out } => Resolved::Replay(manifest, out.map(|o| cwd_path(&o))),
    })
}

pub enum Resolved {
    Run(Command, RunConfig),
    Replay(PathBuf, Option<PathBuf>),
}

pub fn execute(command: CliCommand) -> Result<RunManifest> {
    match resolve(command)? {
        Resolved::Run(c, cfg) => commands::run(c, &cfg),
        Resolved::Replay(m, out) => commands::replay(&m, out),
    }
}
