//! `esnet`: generate Allen-Cahn data, train energy-stable block networks,
//! evaluate them and check their energy behaviour.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::resolve;

#[derive(Parser, Debug)]
#[command(name = "esnet", version, about = "Energy-stable block networks for the Allen-Cahn equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the Allen-Cahn equation from random initial conditions and
    /// store (phi0, phiT) pairs.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Also write the dataset as CSV.
        #[arg(long, value_name = "PATH")]
        export_csv: Option<PathBuf>,
    },
    /// Train a network on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on the test split of a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Per-sample metrics as CSV.
        #[arg(long, value_name = "PATH")]
        export_csv: Option<PathBuf>,
        /// Input, truth and prediction fields of the first `samples` test
        /// samples as CSV.
        #[arg(long, value_name = "PATH")]
        export_fields: Option<PathBuf>,
    },
    /// Check block-by-block energy decay and write the energy trace.
    Diagnose {
        #[command(flatten)]
        common: Common,
        /// Use a freshly initialized network instead of a checkpoint.
        #[arg(long)]
        random_weights: bool,
        /// Intermediate states of every block as CSV.
        #[arg(long, value_name = "PATH")]
        export_fields: Option<PathBuf>,
    },
    /// Train the energy-stable network and the plain baseline with the same
    /// budget and report both side by side.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Use this trained estable checkpoint instead of training one.
        #[arg(long, value_name = "PATH")]
        reuse_estable: Option<PathBuf>,
    },
}

/// Options shared by every command. Each value overrides the key of the
/// same name (with `-` read as `_`) in the config file.
#[derive(Args, Debug, Default)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Published experiment settings: ac1d or ac2d.
    #[arg(long)]
    preset: Option<String>,
    /// Force one worker and a fixed reduction order.
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    t_end: Option<String>,
    #[arg(long)]
    count: Option<String>,
    /// Base seed; falls back to ESNET_SEED, then 0.
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    train_fraction: Option<String>,
    #[arg(long)]
    rtol: Option<String>,
    #[arg(long)]
    atol: Option<String>,
    #[arg(long)]
    dealias: Option<String>,
    /// estable-g, aux-tilde or plain.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    blocks: Option<String>,
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    channels: Option<String>,
    #[arg(long)]
    c: Option<String>,
    #[arg(long)]
    g_inverse: Option<String>,
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    init_seed: Option<String>,
    #[arg(long)]
    lr0: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    halve_every: Option<String>,
    #[arg(long)]
    restart_every: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    eval_every: Option<String>,
    #[arg(long)]
    train_seed: Option<String>,
    #[arg(long)]
    workers: Option<String>,
    /// Number of samples for diagnose and field exports.
    #[arg(long)]
    samples: Option<String>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    checkpoint: Option<String>,
    #[arg(long)]
    output_dir: Option<String>,
}

impl Common {
    fn pairs(&self) -> Vec<(String, String)> {
        let fields: [(&str, &Option<String>); 32] = [
            ("dims", &self.dims),
            ("n", &self.n),
            ("epsilon", &self.epsilon),
            ("t_end", &self.t_end),
            ("count", &self.count),
            ("seed", &self.seed),
            ("train_fraction", &self.train_fraction),
            ("rtol", &self.rtol),
            ("atol", &self.atol),
            ("dealias", &self.dealias),
            ("kind", &self.kind),
            ("blocks", &self.blocks),
            ("kernel", &self.kernel),
            ("channels", &self.channels),
            ("c", &self.c),
            ("g_inverse", &self.g_inverse),
            ("init", &self.init),
            ("init_seed", &self.init_seed),
            ("lr0", &self.lr0),
            ("weight_decay", &self.weight_decay),
            ("batch_size", &self.batch_size),
            ("epochs", &self.epochs),
            ("halve_every", &self.halve_every),
            ("restart_every", &self.restart_every),
            ("beta", &self.beta),
            ("eval_every", &self.eval_every),
            ("train_seed", &self.train_seed),
            ("workers", &self.workers),
            ("samples", &self.samples),
            ("dataset", &self.dataset),
            ("checkpoint", &self.checkpoint),
            ("output_dir", &self.output_dir),
        ];
        let mut out: Vec<(String, String)> = fields
            .iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect();
        if self.deterministic {
            out.push(("deterministic".into(), "true".into()));
        }
        out
    }

    fn resolve(&self) -> Result<config::RunConfig, commands::Failure> {
        let env_seed = std::env::var("ESNET_SEED").ok();
        resolve(
            self.preset.as_deref(),
            self.config.as_deref(),
            &self.pairs(),
            env_seed.as_deref(),
        )
        .map_err(commands::Failure::Usage)
    }
}

fn run(cli: Cli) -> Result<(), commands::Failure> {
    match cli.command {
        Command::Generate { common, export_csv } => {
            commands::generate(&common.resolve()?, "generate", export_csv.as_deref())
        }
        Command::Train { common } => commands::train(&common.resolve()?, "train"),
        Command::Eval {
            common,
            export_csv,
            export_fields,
        } => commands::eval(&common.resolve()?, export_csv.as_deref(), export_fields.as_deref()),
        Command::Diagnose {
            common,
            random_weights,
            export_fields,
        } => commands::diagnose(&common.resolve()?, random_weights, export_fields.as_deref()),
        Command::Compare { common, reuse_estable } => commands::compare(&common.resolve()?, reuse_estable.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(commands::EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
