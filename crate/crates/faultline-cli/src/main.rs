//! `faultline` — fault-injection experiments on a simulated fixed-point
//! neural-network accelerator, driven by a TOML config file.

mod commands;
mod config;
mod context;

use clap::{Args, Parser, Subcommand};
use commands::UsageError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "faultline",
    version,
    about = "Register-level fault injection on a simulated NN inference accelerator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the network, calibrate fixed-point formats, save the archive
    Train(CommonArgs),
    /// Fault-free inference over the evaluation split
    Infer(InferArgs),
    /// Seeded fault-injection sweep over fault-bit counts
    Campaign(CampaignArgs),
    /// The campaign under all four mitigation techniques, same faults
    MitigateEval(CommonArgs),
    /// Bit sparsity and sign/MSB agreement of fault-free register traffic
    Analyze(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML run configuration
    #[arg(long, value_name = "PATH")]
    config: PathBuf,

    /// Override the command's governing seed: the training seed for
    /// `train`, the campaign master seed for `campaign`/`mitigate-eval`,
    /// the synthetic-dataset seed for `infer`/`analyze`
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,

    /// Output directory (created if missing)
    #[arg(long, value_name = "DIR", default_value = "faultline-out")]
    out: PathBuf,

    /// Override campaign.trials
    #[arg(long, value_name = "N")]
    trials: Option<usize>,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Also write the first evaluation item's register trace as CSV
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct CampaignArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Run a canned experiment axis instead of the plain config campaign:
    /// fault-kind, nn-data, nn-layer, activation, fp-component, pe-count,
    /// or data-spread
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(a) => commands::cmd_train(&a.config, a.seed, &a.out),
        Command::Infer(a) => {
            commands::cmd_infer(&a.common.config, a.common.seed, &a.common.out, a.trace)
        }
        Command::Campaign(a) => commands::cmd_campaign(
            &a.common.config,
            a.common.seed,
            a.common.trials,
            &a.common.out,
            a.preset.as_deref(),
        ),
        Command::MitigateEval(a) => {
            commands::cmd_mitigate_eval(&a.config, a.seed, a.trials, &a.out)
        }
        Command::Analyze(a) => commands::cmd_analyze(&a.config, a.seed, &a.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("faultline: {err:#}");
            if err.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
