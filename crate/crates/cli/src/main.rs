mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use efb_core::baselines::BaselineVariant;
use efb_core::eval::FlopConvention;

use crate::config::RunConfig;

/// Learned limited-feedback hybrid beamforming: data generation, training,
/// evaluation and classical baselines.
#[derive(Debug, Parser)]
#[command(name = "efb", version)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed of the command's randomness (training seed for `train`,
    /// test-set seed for `eval` and `baseline`, channel seed for `gen`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Primary output file of the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replace existing CSV output instead of appending to it.
    #[arg(long, global = true)]
    overwrite: bool,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Overrides {
    /// Base-station antennas.
    #[arg(long, global = true)]
    antennas: Option<usize>,
    #[arg(long, global = true)]
    users: Option<usize>,
    #[arg(long, global = true)]
    pilots: Option<usize>,
    /// Feedback bits per user.
    #[arg(long, global = true)]
    bits: Option<usize>,
    #[arg(long, global = true)]
    snr_db: Option<f64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batches: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    lr0: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a channel dataset file.
    Gen {
        #[arg(long, default_value_t = 10_000)]
        count: usize,
    },
    /// Train the learned pipeline and write a checkpoint.
    Train {
        /// Training log CSV (step, lr, loss, holdout rate).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate methods on the seeded test set and append rows to a CSV.
    Eval {
        /// Methods to evaluate: learned, full_csi, omp_infinite, omp_finite or all.
        #[arg(long, value_delimiter = ',', default_value = "all")]
        methods: Vec<String>,
        /// Learned checkpoints; each is evaluated at its own bit budget.
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
        /// Bit budgets for the baselines. Defaults to the budgets of the
        /// checkpoints, or the configured B.
        #[arg(long = "budgets", value_delimiter = ',')]
        budgets: Vec<usize>,
        #[arg(long)]
        test_size: Option<usize>,
    },
    /// Per-channel sum rates of one baseline.
    Baseline {
        #[arg(long, value_parser = parse_variant)]
        variant: BaselineVariant,
        /// Channels from a `gen` dataset instead of the seeded test set.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        test_size: Option<usize>,
    },
    /// Parameter and FLOP counts of the learned pipeline.
    Count {
        #[arg(long, value_parser = parse_convention, default_value = "macs")]
        convention: FlopConvention,
    },
}

fn parse_variant(s: &str) -> Result<BaselineVariant, String> {
    s.parse().map_err(|e: efb_core::Error| e.to_string())
}

fn parse_convention(s: &str) -> Result<FlopConvention, String> {
    s.parse().map_err(|e: efb_core::Error| e.to_string())
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        let s = &mut cfg.system;
        let t = &mut cfg.training;
        macro_rules! set {
            ($src:expr, $dst:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        set!(self.antennas, s.n_antennas);
        set!(self.users, s.n_users);
        set!(self.pilots, s.n_pilots);
        set!(self.bits, s.n_bits);
        set!(self.snr_db, s.snr_db);
        set!(self.epochs, t.epochs);
        set!(self.batches, t.batches_per_epoch);
        set!(self.batch_size, t.batch_size);
        set!(self.lr0, t.lr0);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cli.overrides.apply(&mut cfg);
    let shared = commands::Shared { seed: cli.seed, out: cli.out, overwrite: cli.overwrite };
    match cli.command {
        Command::Gen { count } => commands::gen(&cfg, &shared, count),
        Command::Train { log } => commands::train(&cfg, &shared, log),
        Command::Eval { methods, checkpoints, budgets, test_size } => {
            commands::eval(&cfg, &shared, &methods, &checkpoints, &budgets, test_size)
        }
        Command::Baseline { variant, dataset, test_size } => {
            commands::baseline(&cfg, &shared, variant, dataset.as_deref(), test_size)
        }
        Command::Count { convention } => commands::count(&cfg, &shared, convention),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
