use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use minmin_cli::commands::{cmd_convergence, cmd_eval, cmd_taudiag, cmd_train, DataArg};
use minmin_cli::CliError;

#[derive(Parser)]
#[command(name = "minmin", version, about = "Train and evaluate energy-based models over discrete outputs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Dataset file (.csv label rankings, otherwise libsvm multilabel)
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Use the test split of this experiment config
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Source {
    fn into_arg(self) -> DataArg {
        match (self.dataset, self.config) {
            (Some(d), _) => DataArg::File(d),
            (None, Some(c)) => DataArg::ConfigTestSplit(c),
            (None, None) => unreachable!("clap requires one source"),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config; writes metrics.csv, model.ckpt and summary.json
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a checkpoint on a dataset
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        source: Source,
        /// f1, micro_f1 or kendall_tau (default: the task metric)
        #[arg(long)]
        metric: Option<String>,
        /// Per-example scores CSV
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sampled vs exact objective for each configured number of prior samples
    Convergence {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Learned log-partition against the exact one
    Taudiag {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config } => {
            let s = cmd_train(&config)?;
            println!("{}", serde_json::to_string(&s)?);
        }
        Command::Eval {
            checkpoint,
            source,
            metric,
            out,
        } => {
            cmd_eval(&checkpoint, &source.into_arg(), metric.as_deref(), out.as_deref())?;
        }
        Command::Convergence { config, out } => {
            let path = cmd_convergence(&config, out.as_deref())?;
            println!("{}", path.display());
        }
        Command::Taudiag { checkpoint, source, out } => {
            cmd_taudiag(&checkpoint, &source.into_arg(), out.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
