//! The `m2mil` command line. Every subcommand is also callable as a library
//! function through [`run`], which is what the binary wraps.

pub mod ablate;
pub mod bench;
mod commands;
pub mod experiment;
pub mod verify;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use ablate::{
    ablation_csv, branch_label, grid, parse_branches, published_grid, run_ablation, AblationAxes,
    AblationCell, AblationRow, ABLATION_HEADER,
};
pub use bench::{run_bench, BenchOptions, BenchReport};
pub use experiment::{
    cross_validate, read_run_config, report, run_fold, worker_count, write_fold_outputs,
    FoldOutcome, RunConfig, RunManifest, THREADS_ENV,
};
pub use verify::{run_verify, VerifyOptions, VerifyReport, CHECKS};

use crate::error::Error;
use crate::model::Aggregation;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// Exit status for an error: 3 for filesystem and format problems, 2 for
/// unusable arguments or configuration, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_io() {
        EXIT_IO
    } else if matches!(e, Error::Config(_)) {
        EXIT_USAGE
    } else {
        EXIT_FAILURE
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "m2mil",
    version,
    about = "Multi-order SSD multiple-instance learning on feature bags"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic MIL dataset (FBAG files plus manifest).
    GenData(GenDataArgs),
    /// Cross-validate a model on a dataset; writes checkpoints, logs and a report.
    Train(TrainArgs),
    /// Sweep model variants and write one CSV row per cell.
    Ablate(AblateArgs),
    /// Run the oracle suite; exits 1 if any check fails.
    Verify(VerifyArgs),
    /// Time recurrence, quadratic and chunked scans and fit scaling exponents.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AggregationArg {
    Concatenate,
    Add,
}

impl From<AggregationArg> for Aggregation {
    fn from(a: AggregationArg) -> Self {
        match a {
            AggregationArg::Concatenate => Aggregation::Concatenate,
            AggregationArg::Add => Aggregation::Add,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SelectionArg {
    PerPosition,
    PerChannel,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Imbalance {
    None,
    /// Seven-class proportions 40/145/70/41/48/61/132.
    Bracs,
}

/// Model flags; anything left unset keeps the config file or default value.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelFlags {
    /// Width after the input projection.
    #[arg(long)]
    pub reduced_dim: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub head_dim: Option<usize>,
    /// SSD blocks per branch.
    #[arg(long)]
    pub depth: Option<usize>,
    /// State expansion factor.
    #[arg(long)]
    pub state: Option<usize>,
    #[arg(long)]
    pub conv_kernel: Option<usize>,
    #[arg(long)]
    pub scan_chunk: Option<usize>,
    /// Branch orderings joined by '+', e.g. original+flipped+transposed.
    #[arg(long)]
    pub branches: Option<String>,
    #[arg(long, value_enum)]
    pub aggregation: Option<AggregationArg>,
    #[arg(long, value_enum)]
    pub selection: Option<SelectionArg>,
    /// Fuse branch outputs in their reordered positions.
    #[arg(long)]
    pub no_realign: bool,
    /// One SSD stack shared by all branches.
    #[arg(long)]
    pub share_branch_params: bool,
    #[arg(long)]
    pub layernorm: bool,
    /// Residual wrapping around each block.
    #[arg(long)]
    pub wrapping: bool,
    /// Drop the SiLU gate and its norm.
    #[arg(long)]
    pub ungated: bool,
    #[arg(long)]
    pub selection_hidden: Option<usize>,
    #[arg(long)]
    pub mlp_hidden: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Clip each bag's gradient to this L2 norm.
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Record wall time per epoch in the training log (breaks byte equality).
    #[arg(long)]
    pub timing: bool,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub bags: usize,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 40)]
    pub min_size: usize,
    #[arg(long, default_value_t = 550)]
    pub max_size: usize,
    /// Fraction of planted instances in non-zero classes.
    #[arg(long, default_value_t = 0.05)]
    pub positive_rate: f64,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "none")]
    pub imbalance: Imbalance,
    /// Write into an existing, non-empty directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Dataset manifest (bag_id,path,label).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON run config, or a run.json from an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    /// Dataset manifest; a synthetic set is generated when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Synthetic bags when --data is omitted.
    #[arg(long, default_value_t = 200)]
    pub bags: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 40)]
    pub min_size: usize,
    #[arg(long, default_value_t = 550)]
    pub max_size: usize,
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    /// Run the full 21-cell grid of the published ablation tables.
    #[arg(long, value_parser = ["published"])]
    pub preset: Option<String>,
    /// Depths to sweep, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub depth: Vec<usize>,
    /// State expansion factors to sweep.
    #[arg(long, value_delimiter = ',')]
    pub state: Vec<usize>,
    /// Branch sets separated by ',', each joined by '+'.
    #[arg(long, value_delimiter = ',')]
    pub ordering: Vec<String>,
    #[arg(long, value_delimiter = ',', value_enum)]
    pub aggregation: Vec<AggregationArg>,
    /// Layer norm settings to sweep, e.g. false,true.
    #[arg(long, value_delimiter = ',')]
    pub layernorm: Vec<bool>,
    #[arg(long, value_delimiter = ',')]
    pub wrapping: Vec<bool>,
    #[arg(long)]
    pub reduced_dim: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub head_dim: Option<usize>,
    #[arg(long)]
    pub conv_kernel: Option<usize>,
    #[arg(long)]
    pub scan_chunk: Option<usize>,
    #[arg(long, value_enum)]
    pub selection: Option<SelectionArg>,
    #[arg(long)]
    pub no_realign: bool,
    #[arg(long)]
    pub share_branch_params: bool,
    #[arg(long)]
    pub ungated: bool,
    #[arg(long)]
    pub selection_hidden: Option<usize>,
    #[arg(long)]
    pub mlp_hidden: Option<usize>,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    pub force: bool,
}

impl AblateArgs {
    /// The non-swept model flags, as applied to the base configuration.
    pub fn base_flags(&self) -> ModelFlags {
        ModelFlags {
            reduced_dim: self.reduced_dim,
            heads: self.heads,
            head_dim: self.head_dim,
            conv_kernel: self.conv_kernel,
            scan_chunk: self.scan_chunk,
            selection: self.selection,
            no_realign: self.no_realign,
            share_branch_params: self.share_branch_params,
            ungated: self.ungated,
            selection_hidden: self.selection_hidden,
            mlp_hidden: self.mlp_hidden,
            ..ModelFlags::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// Override every check's tolerance.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Run only these checks (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<String>,
    /// Sequence length for the scan checks.
    #[arg(long, default_value_t = 64)]
    pub len: usize,
    /// Chunk sizes for the chunked-scan check.
    #[arg(long, value_delimiter = ',')]
    pub chunks: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Sequence lengths (comma separated); default 256..8192 in powers of two.
    #[arg(long, value_delimiter = ',')]
    pub len: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[arg(long, default_value_t = 64)]
    pub chunk: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Exit 1 unless quadratic >= 1.8 and chunked <= 1.2.
    #[arg(long)]
    pub check: bool,
}

/// Parses `args` (including the program name) and runs the subcommand,
/// writing human-readable output to `out`. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            if code == 0 {
                let _ = write!(out, "{}", e.render());
            } else {
                eprint!("{}", e.render());
            }
            return code;
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(&a, out),
        Command::Train(a) => commands::train(&a, out),
        Command::Ablate(a) => commands::ablate(&a, out),
        Command::Verify(a) => commands::verify(&a, out),
        Command::Bench(a) => commands::bench(&a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
