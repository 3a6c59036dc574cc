//! `qsalign`: run the alignment pipeline stage by stage or end to end.
//!
//! Every command reads its inputs from, and writes its outputs to, the run
//! directory given by `--out`. Exit codes: 0 success, 2 configuration error,
//! 3 data error, 4 numeric failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "qsalign", version, about = "Preference-aligned query suggestion pipeline")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Run configuration (TOML). Defaults to the run directory's config.toml.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override the configuration's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true, default_value = "run")]
    pub out: PathBuf,
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the world and the base policy's click logs.
    Simulate {
        /// Impressions to log (logs.impressions).
        #[arg(long)]
        impressions: Option<usize>,
        /// Training contexts (world.n_contexts).
        #[arg(long)]
        contexts: Option<usize>,
    },
    /// Curate preference triplets from the click logs and fit the
    /// reference language model.
    Curate,
    /// Train a reward model on the curated triplets.
    TrainRm {
        /// Reward model kind: bt, paired or garm.
        #[arg(long, default_value = "garm")]
        kind: String,
        /// Training epochs (rm.train.epochs).
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Assemble the SFT-analog dataset and fit the SFT policy.
    Sft {
        /// Fitting epochs (sft.fit.epochs).
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Fit fusion weights on preference deltas and Pareto-tune them.
    Fuse {
        /// Skip Pareto tuning (fusion.tune = false).
        #[arg(long)]
        no_tune: bool,
    },
    /// GRPO from the SFT policy under the fused reward.
    TrainRl {
        /// GRPO steps (grpo.steps).
        #[arg(long)]
        steps: Option<usize>,
        /// Train an ablation instead: no_ppl or no_garm.
        #[arg(long)]
        ablation: Option<String>,
        /// Fusion weights file (default: the run directory's).
        #[arg(long)]
        weights: Option<PathBuf>,
        /// GaRM checkpoint (default: the run directory's rm_garm.json).
        #[arg(long)]
        rm: Option<PathBuf>,
    },
    /// One round of rejection-sampling fine-tuning from the SFT policy.
    Rft {
        /// Samples per context (rft.k).
        #[arg(long)]
        k: Option<usize>,
        /// GaRM checkpoint (default: the run directory's rm_garm.json).
        #[arg(long)]
        rm: Option<PathBuf>,
    },
    /// Evaluate the trained artifacts and write the report tables.
    Report,
    /// Every stage, with baselines and ablations, for one or more seeds.
    Run {
        /// Comma-separated seeds; each gets its own `seed-N` directory and
        /// the merged report goes to `<out>/report`.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Skip the baseline reward models and the ablations.
        #[arg(long)]
        quick: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("qsalign: cannot set thread count: {e}");
            return ExitCode::from(2);
        }
    }
    let g = &cli.global;
    let res = match cli.command {
        Command::Simulate { impressions, contexts } => commands::simulate(g, impressions, contexts),
        Command::Curate => commands::curate(g),
        Command::TrainRm { kind, epochs } => commands::train_rm(g, &kind, epochs),
        Command::Sft { epochs } => commands::sft(g, epochs),
        Command::Fuse { no_tune } => commands::fuse(g, no_tune),
        Command::TrainRl { steps, ablation, weights, rm } => {
            commands::train_rl(g, steps, ablation.as_deref(), weights, rm)
        }
        Command::Rft { k, rm } => commands::rft(g, k, rm),
        Command::Report => commands::report(g),
        Command::Run { seeds, quick } => commands::run(g, &seeds, quick),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qsalign: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
