mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use naomi::Error;

/// Multiresolution imputation of partially observed sequences.
#[derive(Parser, Debug)]
#[command(name = "naomi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate billiards trajectories.
    Simulate(SimulateArgs),
    /// Train an imputation model.
    Train(TrainArgs),
    /// Fill the missing steps of a dataset.
    Impute(ImputeArgs),
    /// Score imputed sequences against ground truth.
    Eval(EvalArgs),
    /// Print the decode order for a mask.
    Schedule(ScheduleArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Env {
    Billiards,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "billiards")]
    env: Env,
    /// Number of trajectories.
    #[arg(long)]
    n: usize,
    /// Steps per trajectory.
    #[arg(long, default_value_t = 200)]
    len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.02)]
    radius: f64,
    #[arg(long, default_value_t = 0.01)]
    speed_min: f64,
    #[arg(long, default_value_t = 0.03)]
    speed_max: f64,
    #[arg(long)]
    out: PathBuf,
    /// Run on one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Variant {
    Naomi,
    Singleres,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset of complete sequences.
    #[arg(long)]
    data: PathBuf,
    /// key = value file; flags given here take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    objective: Option<String>,
    #[arg(long)]
    model_out: PathBuf,
    /// Per-epoch losses as CSV; defaults to MODEL_OUT with `.losses.csv` appended.
    #[arg(long)]
    loss_log: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "naomi")]
    variant: Variant,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// random:MIN:MAX, forward[:K] or explicit:BITS.
    #[arg(long)]
    mask_spec: Option<String>,
    /// Decoder head count, or `auto`.
    #[arg(long)]
    resolutions: Option<String>,
    #[arg(long)]
    hidden_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sequential: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Method {
    Naomi,
    Singleres,
    Linear,
    Knn,
}

#[derive(Args, Debug)]
struct ImputeArgs {
    /// Checkpoint; required by naomi and singleres.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "naomi")]
    method: Method,
    #[arg(long)]
    data: PathBuf,
    /// `data` (masks stored in the file), random:MIN:MAX, forward[:K],
    /// explicit:BITS, or a path to a mask file.
    #[arg(long, default_value = "data")]
    mask_spec: String,
    /// Complete sequences searched by knn.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = naomi::baselines::DEFAULT_K)]
    k: usize,
    /// Allow missing leading steps.
    #[arg(long)]
    forward_prediction: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    sequential: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Imputed dataset, carrying the masks it was imputed under.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// `all` or a comma-separated list.
    #[arg(long, default_value = "all")]
    metrics: String,
    /// Ball radius used for wall distances; read from the truth file if omitted.
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long, default_value_t = naomi::metrics::WALL_DELTA)]
    wall_delta: f64,
    /// Report as a flat JSON object.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-sequence values as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    sequential: bool,
}

#[derive(Args, Debug)]
struct ScheduleArgs {
    /// Mask as a 0/1 string, e.g. 10001.
    #[arg(long)]
    mask: String,
    #[arg(long, default_value_t = 1)]
    resolutions: usize,
    #[arg(long)]
    forward_prediction: bool,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Numerical(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Train(a) => commands::train(a),
        Command::Impute(a) => commands::impute(a),
        Command::Eval(a) => commands::eval(a),
        Command::Schedule(a) => commands::schedule(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
