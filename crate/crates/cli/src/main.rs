//! Command-line driver: train, finetune, and evaluate entropic bridge
//! models from a config file, and dump the closed-form diagnostic tables.
//!
//! Exit codes: 0 on success (including `--help`/`--version`), 1 for usage
//! problems (bad flags, unreadable config or checkpoint), 2 for failures
//! once a run is computing.

mod analytic_cmds;
mod config;
mod errors;
mod metrics;
mod runs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "entbridge",
    version,
    about = "Entropic bridge training, evaluation, and closed-form diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a vector field from scratch on the configured coupling;
    /// writes `{label}.pretrain.{csv,ckpt}`.
    Pretrain(RunArgs),
    /// Continue from a pretraining checkpoint with online or iterative
    /// finetuning; writes `{label}.finetune.{csv,ckpt}`.
    Finetune(RunArgs),
    /// Evaluate a checkpoint once; writes `{label}.eval.csv`.
    Eval(RunArgs),
    /// Closed-form Gaussian projection recursions as a CSV table.
    GaussianAnalytic(GaussianAnalyticArgs),
    /// Closed-form two-point toy dynamics as CSV tables.
    ToyFlow(ToyFlowArgs),
}

#[derive(Args)]
pub struct RunArgs {
    /// Experiment config file.
    #[arg(long)]
    pub config: PathBuf,
    /// Override the config seed. A finetune or eval given --seed draws
    /// fresh streams instead of resuming the checkpoint rng.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the config output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Checkpoint to resume from (finetune) or to evaluate (eval).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Generate and evaluate with the EMA parameters.
    #[arg(long, overrides_with = "no_ema")]
    pub ema: bool,
    /// Generate and evaluate with the raw parameters.
    #[arg(long, overrides_with = "ema")]
    pub no_ema: bool,
}

impl RunArgs {
    /// Tri-state EMA choice: flags beat the config, absent flags defer.
    pub fn ema_override(&self) -> Option<bool> {
        if self.ema {
            Some(true)
        } else if self.no_ema {
            Some(false)
        } else {
            None
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    #[value(name = "forward_forward")]
    ForwardForward,
    #[value(name = "forward_backward")]
    ForwardBackward,
    Both,
}

#[derive(Args)]
pub struct GaussianAnalyticArgs {
    /// Which recursion to tabulate.
    #[arg(long, value_enum, default_value = "both")]
    pub mode: ModeArg,
    /// Iterations per series.
    #[arg(long, default_value_t = 100)]
    pub n_iters: usize,
    /// Comma-separated projection error levels.
    #[arg(long, default_value = "0", value_delimiter = ',')]
    pub eps_err_list: Vec<f64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ToyFlowArgs {
    /// Starting x coordinate; must exceed y0.
    #[arg(long, default_value_t = 1.0)]
    pub x0: f64,
    /// Starting y coordinate; must lie in (0, x0).
    #[arg(long, default_value_t = 0.5)]
    pub y0: f64,
    /// Comma-separated relaxation weights for the iterate table.
    #[arg(long, default_value = "0.1,0.5,1", value_delimiter = ',')]
    pub alpha_list: Vec<f64>,
    /// Iterations per relaxation weight.
    #[arg(long, default_value_t = 60)]
    pub n: usize,
    /// Flow table time step.
    #[arg(long, default_value_t = 0.05)]
    pub dt: f64,
    /// Flow table end time.
    #[arg(long, default_value_t = 10.0)]
    pub t_max: f64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let ok = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if ok { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    let result = match &cli.command {
        Command::Pretrain(args) => runs::cmd_pretrain(args),
        Command::Finetune(args) => runs::cmd_finetune(args),
        Command::Eval(args) => runs::cmd_eval(args),
        Command::GaussianAnalytic(args) => analytic_cmds::cmd_gaussian_analytic(args),
        Command::ToyFlow(args) => analytic_cmds::cmd_toy_flow(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
