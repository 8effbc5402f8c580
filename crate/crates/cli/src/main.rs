use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

use commands::Failure;

#[derive(Parser)]
#[command(name = "condense", version, about = "Train small networks from small initialization and measure weight condensation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// Experiment config (TOML)
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output_dir` from the config
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the config seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for independent seed replicates
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Args, Clone)]
pub struct Snapshot {
    /// Parameter file (.json or .csv); defaults to the run's analysis snapshot
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Hidden layer to analyze (1-based); defaults to the first configured layer
    #[arg(long)]
    pub layer: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Method {
    Case1,
    Case2,
    Sweep,
}

#[derive(Subcommand)]
enum Command {
    /// Train and write loss history, snapshots and the dataset
    Train(Common),
    /// Similarity matrices and condensation reports per configured layer
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Parameter file; defaults to the run's snapshots
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Direction field of one neuron's input weight on a (w, b) lattice
    Field {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        snapshot: Snapshot,
        #[arg(long)]
        lo: Option<f64>,
        #[arg(long)]
        hi: Option<f64>,
        #[arg(long, default_value_t = 41)]
        resolution: usize,
    },
    /// Predicted condensation lines and per-neuron alignment
    Predict {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        snapshot: Snapshot,
        #[arg(long, value_enum)]
        method: Method,
    },
    /// Run the acceptance suites
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run suites in parallel
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Run only these criteria (1-9); repeatable
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=9))]
        criterion: Vec<u8>,
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(common) => commands::train(&common),
        Command::Analyze { common, params } => commands::analyze(&common, params.as_deref()),
        Command::Field { common, snapshot, lo, hi, resolution } => {
            commands::field(&common, &snapshot, lo, hi, resolution)
        }
        Command::Predict { common, snapshot, method } => commands::predict(&common, &snapshot, method),
        Command::Verify { seed, jobs, criterion, corrupt_gradient } => {
            commands::verify(seed, jobs, &criterion, corrupt_gradient)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        use condense_core::Error;
        match self {
            Failure::Verification(_) => 1,
            Failure::Core(Error::Divergence { .. }) => 3,
            Failure::Core(_) | Failure::Other(_) => 2,
        }
    }
}
