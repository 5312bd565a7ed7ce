//! `softerr` command line: fault-injection campaigns, fixture training and
//! model predictions.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "softerr", version, about = "Bit-flip fault injection for quantized neural networks")]
#[command(args_override_self = true)]
pub struct Cli {
    /// `key = value` run file; command-line flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (0 = one per core). Never changes any result.
    #[arg(long, global = true, env = "SOFTERR_THREADS", default_value_t = 0)]
    pub threads: usize,
    /// Output directory for CSV files and the provenance record.
    #[arg(long, global = true, default_value = "softerr-out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a fixture network on synthetic digits and save it.
    TrainFixture(TrainArgs),
    /// Write synthetic digits as an IDX image/label pair.
    MakeDataset(MakeDatasetArgs),
    /// Measure RRMSE and accuracy for one fault configuration.
    Simulate(SimulateArgs),
    /// Accuracy and RRMSE over a BER grid.
    Sweep(SweepArgs),
    /// RRMSE at every layer for faults injected into one layer.
    Propagate(PropagateArgs),
    /// Compare multi-layer RRMSE with the aggregated single-layer values.
    AggregateValidate(AggregateArgs),
    /// RRMSE against the quantization bound.
    BoundSweep(BoundArgs),
    /// RRMSE with int8 against int16 storage.
    BitwidthCompare(BitwidthArgs),
    /// Accuracy when classifying among subsets of the classes.
    ClassSubset(ClassSubsetArgs),
    /// Rank which k layers to protect.
    Fragile(FragileArgs),
    /// Evaluate the closed-form models; no simulation.
    Predict(PredictArgs),
    /// Normality statistics of weights, activations or fault errors.
    Diagnose(DiagnoseArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::TrainFixture(_) => "train-fixture",
            Command::MakeDataset(_) => "make-dataset",
            Command::Simulate(_) => "simulate",
            Command::Sweep(_) => "sweep",
            Command::Propagate(_) => "propagate",
            Command::AggregateValidate(_) => "aggregate-validate",
            Command::BoundSweep(_) => "bound-sweep",
            Command::BitwidthCompare(_) => "bitwidth-compare",
            Command::ClassSubset(_) => "class-subset",
            Command::Fragile(_) => "fragile",
            Command::Predict(_) => "predict",
            Command::Diagnose(_) => "diagnose",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Fixture {
    Lenet5,
    Deep8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Target {
    Weights,
    Activations,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Injection {
    #[value(name = "random_bit", alias = "random-bit")]
    RandomBit,
    #[value(name = "msb_only", alias = "msb-only")]
    MsbOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Sampling {
    Multi,
    Single,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepMode {
    Standard,
    Accelerated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FragileMode {
    Bruteforce,
    Accelerated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelMath {
    Binary,
    Multiclass,
    Empirical,
    SigmaDelta,
    WeightFault,
    ActivationFault,
    Aggregate,
    BerScale,
    MsbToStandard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DiagnoseWhat {
    Weights,
    Activations,
    Errors,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value_t = Fixture::Lenet5)]
    pub fixture: Fixture,
    /// Model path; defaults to `<out>/<fixture>.model`.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    /// Override the recipe's training-set size.
    #[arg(long)]
    pub train_images: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub train_seed: Option<u64>,
    /// Quantization width, 8 or 16.
    #[arg(long, default_value_t = 8)]
    pub bits: u32,
}

#[derive(Args, Debug)]
pub struct MakeDatasetArgs {
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long, default_value_t = softerr::fixtures::TEST_SEED)]
    pub data_seed: u64,
}

/// Model and evaluation data.
#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Model file written by `train-fixture`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// IDX image file; synthetic test digits are used when omitted.
    #[arg(long)]
    pub images_file: Option<PathBuf>,
    #[arg(long)]
    pub labels_file: Option<PathBuf>,
    /// Synthetic test digits generated when no IDX files are given.
    #[arg(long, default_value_t = 1000)]
    pub test_size: usize,
}

/// Fault template and sampling schedule.
#[derive(Args, Debug, Clone)]
pub struct FaultArgs {
    #[arg(long, value_enum, default_value_t = Target::Weights)]
    pub target: Target,
    #[arg(long, value_enum, default_value_t = Injection::RandomBit)]
    pub injection: Injection,
    /// Comma-separated layer indices; all injectable layers when omitted.
    #[arg(long)]
    pub layers: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    /// Images per trial (multi sampling).
    #[arg(long, default_value_t = 100)]
    pub images: usize,
    #[arg(long, value_enum, default_value_t = Sampling::Multi)]
    pub sampling: Sampling,
}

/// A BER grid: an explicit list or a log-spaced range.
#[derive(Args, Debug, Clone)]
pub struct GridArgs {
    /// Comma-separated BERs; may be empty.
    #[arg(long)]
    pub bers: Option<String>,
    #[arg(long)]
    pub ber_min: Option<f64>,
    #[arg(long)]
    pub ber_max: Option<f64>,
    #[arg(long, default_value_t = 16)]
    pub ber_points: usize,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fault: FaultArgs,
    #[arg(long)]
    pub ber: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fault: FaultArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, value_enum, default_value_t = SweepMode::Standard)]
    pub mode: SweepMode,
    #[arg(long, default_value_t = 4)]
    pub anchors: usize,
    /// Images per trial at each anchor; defaults to `--images`.
    #[arg(long)]
    pub anchor_images: Option<usize>,
    #[arg(long)]
    pub anchor_trials: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PropagateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fault: FaultArgs,
    #[arg(long)]
    pub ber: Option<f64>,
    #[arg(long)]
    pub inject_layer: Option<usize>,
}

#[derive(Args, Debug)]
pub struct AggregateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fault: FaultArgs,
    /// Per-layer BER levels combinations draw from.
    #[arg(long, default_value = "1e-3,3e-3,1e-2")]
    pub levels: String,
    #[arg(long, default_value_t = 32)]
    pub combos: usize,
}

#[derive(Args, Debug)]
pub struct BoundArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fault: FaultArgs,
    #[arg(long)]
    pub ber: Option<f64>,
    #[arg(long, default_value_t = 16)]
    pub bits: u32,
    #[arg(long, default_value = "1,2,4,8")]
    pub bounds: String,
}

#[derive(Args, Debug)]
pub struct BitwidthArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fault: FaultArgs,
    #[arg(long)]
    pub ber: Option<f64>,
    /// Common bound for both widths; the stored bounds when omitted.
    #[arg(long)]
    pub bound: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ClassSubsetArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fault: FaultArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value = "2,5,10")]
    pub sizes: String,
}

#[derive(Args, Debug)]
pub struct FragileArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fault: FaultArgs,
    #[arg(long)]
    pub ber: Option<f64>,
    #[arg(long, value_enum, default_value_t = FragileMode::Bruteforce)]
    pub mode: FragileMode,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long, value_enum)]
    pub model_math: Option<ModelMath>,
    #[arg(long)]
    pub rrmse: Option<f64>,
    #[arg(long)]
    pub nc: Option<usize>,
    /// Empirical model midpoint.
    #[arg(long)]
    pub m: Option<f64>,
    /// Empirical model steepness.
    #[arg(long)]
    pub s: Option<f64>,
    #[arg(long)]
    pub acc_clean: Option<f64>,
    #[arg(long)]
    pub bits: Option<u32>,
    #[arg(long)]
    pub bound: Option<f64>,
    #[arg(long)]
    pub kernel: Option<usize>,
    #[arg(long)]
    pub ic: Option<usize>,
    #[arg(long)]
    pub oc: Option<usize>,
    /// Feature-map height.
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub sigma_delta: Option<f64>,
    /// Comma-separated per-layer RRMSEs.
    #[arg(long)]
    pub parts: Option<String>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub p_target: Option<f64>,
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fault: FaultArgs,
    #[arg(long, value_enum, default_value_t = DiagnoseWhat::Weights)]
    pub what: DiagnoseWhat,
    /// BER for `--what errors`.
    #[arg(long)]
    pub ber: Option<f64>,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl From<softerr::Error> for Failure {
    fn from(e: softerr::Error) -> Self {
        use softerr::Error as E;
        let root = match &e {
            E::Layer { source, .. } => source.as_ref(),
            other => other,
        };
        match root {
            E::Campaign(_) | E::FaultSpec(_) | E::InvalidArgument(_) | E::QuantConfig(_) => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn fail(f: Failure) -> ExitCode {
    let (kind, msg) = match &f {
        Failure::Config(m) => ("config", m),
        Failure::Runtime(m) => ("runtime", m),
    };
    let line = serde_json::json!({ "status": "error", "kind": kind, "code": f.code(), "message": msg });
    eprintln!("{line}");
    ExitCode::from(f.code())
}

fn parse(args: Vec<OsString>) -> Result<(Cli, clap::ArgMatches), clap::Error> {
    let matches = Cli::command().try_get_matches_from(args)?;
    let cli = Cli::from_arg_matches(&matches)?;
    Ok((cli, matches))
}

fn main() -> ExitCode {
    let args: Vec<OsString> = std::env::args_os().collect();
    let (mut cli, mut matches) = match parse(args.clone()) {
        Ok(p) => p,
        Err(e) => return clap_failure(e),
    };
    if let Some(path) = cli.config.clone() {
        let expanded = match config::expand_args(&Cli::command(), args, cli.command.name(), &path) {
            Ok(a) => a,
            Err(m) => return fail(Failure::Config(m)),
        };
        (cli, matches) = match parse(expanded) {
            Ok(p) => p,
            Err(e) => return clap_failure(e),
        };
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        return fail(Failure::Runtime(format!("thread pool: {e}")));
    }
    match commands::run(&cli, &matches) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(f) => fail(f),
    }
}

fn clap_failure(e: clap::Error) -> ExitCode {
    use clap::error::ErrorKind;
    match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
            let _ = e.print();
            ExitCode::SUCCESS
        }
        _ => fail(Failure::Config(e.render().to_string().trim().to_string())),
    }
}
