//! `vikan`: train, evaluate, gradient-check and benchmark ViKANformer models.

mod bench;
mod config;
mod exit;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use exit::CliResult;

#[derive(Parser, Debug)]
#[command(name = "vikan", version, about = "Vision Transformer with KAN feed-forward blocks on MNIST")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one variant (or all six) and write metrics CSV, checkpoint and summary JSON.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the MNIST test split.
    Eval(EvalArgs),
    /// Run the F64 finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Time forward+backward per batch for each variant and report attention storage.
    Bench(BenchArgs),
}

/// Model and optimizer settings shared between the flags and the config file.
/// Every field is optional so that unset flags fall back to the file.
#[derive(Args, Debug, Default)]
pub struct ModelFlags {
    /// Feed-forward variant, or `all`.
    #[arg(long)]
    pub variant: Option<String>,
    /// `naive` or `tiled`.
    #[arg(long)]
    pub attention: Option<String>,
    /// Key/value tile length for tiled attention.
    #[arg(long)]
    pub tile: Option<usize>,
    /// `cls_token` or `mean`.
    #[arg(long)]
    pub pooling: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sinusoids (SineKAN) or harmonics (FourierKAN) per dimension.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub centers: Option<usize>,
    #[arg(long)]
    pub knots: Option<usize>,
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long)]
    pub grid_lo: Option<f64>,
    #[arg(long)]
    pub grid_hi: Option<f64>,
    /// Hidden width of the MLP feed-forward.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub hidden_multiplier: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// `key = value` file; flags win over its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// MNIST IDX directory [default: $VIKAN_DATA].
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Per-variant learning rate, e.g. `--lr-for fastkan=0.005`; repeatable.
    #[arg(long = "lr-for", value_name = "VARIANT=LR")]
    pub lr_for: Vec<String>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub eval_batch: Option<usize>,
    /// Use only the first N training images.
    #[arg(long)]
    pub limit_train: Option<usize>,
    /// Use only the first N test images.
    #[arg(long)]
    pub limit_test: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// MNIST IDX directory [default: $VIKAN_DATA].
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Fail unless the checkpoint holds this variant.
    #[arg(long)]
    pub variant: Option<String>,
    /// `json` or `csv` (`variant,acc,f1,auc`).
    #[arg(long, default_value = "json")]
    pub format: String,
    #[arg(long, default_value_t = 1000)]
    pub batch: usize,
    #[arg(long)]
    pub limit_test: Option<usize>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Only components whose name contains this string.
    #[arg(long)]
    pub only: Option<String>,
    /// Add a component with a deliberately wrong gradient.
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, default_value = "all")]
    pub variant: String,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    /// Timed repetitions per variant; the minimum is reported.
    #[arg(long, default_value_t = 5)]
    pub rounds: usize,
    #[arg(long, default_value_t = 4)]
    pub tile: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(a) => run::cmd_train(a),
        Command::Eval(a) => run::cmd_eval(a),
        Command::Gradcheck(a) => run::cmd_gradcheck(a),
        Command::Bench(a) => bench::cmd_bench(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
