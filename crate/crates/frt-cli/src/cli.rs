//! Argument parsing and dispatch. Exit codes: 0 ok, 1 usage, 2 data error,
//! 3 numerical failure.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use frt_core::surrogate::ModelKind;
use frt_core::Error;

use crate::commands;
use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "frt", version, about = "Grid fault-ride-through assessment and surrogate pipeline")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// TOML or JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overwrite existing artifacts.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a batch of valid grids with operating points.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Number of grids (overrides the config).
        #[arg(long)]
        grids: Option<usize>,
    },
    /// Assess fault-ride-through probabilities for every grid in a directory.
    Assess {
        #[command(flatten)]
        common: Common,
        /// Directory holding `<id>.json` + `<id>.op.json` files.
        #[arg(long)]
        grids: PathBuf,
        /// Sobol samples per bus (overrides the config).
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Adapt the bundled 73-bus case (or a custom case file) to grid-forming actors.
    AdaptCase {
        #[command(flatten)]
        common: Common,
        /// Case file; the bundled table is used when omitted.
        #[arg(long)]
        case: Option<PathBuf>,
    },
    /// Build a training dataset from grids and their assessment CSV.
    Dataset {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        grids: PathBuf,
        #[arg(long)]
        assessment: PathBuf,
    },
    /// Train one surrogate model kind on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// linreg | gbt | tag | tag_reg
        #[arg(long)]
        model: String,
    },
    /// Cross-model generalization report over a dataset and an adapted case.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        case_dataset: PathBuf,
    },
    /// Emit CSVs for histogram, scatter, and outcome-map plots.
    Plotdata {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        assessment: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        grids: Option<PathBuf>,
        /// Grid id for the outcome map (requires --grids).
        #[arg(long)]
        grid: Option<String>,
    },
}

fn load_config(common: &Common) -> frt_core::Result<RunConfig> {
    let cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if common.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(common.jobs)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(cfg)
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::SobolDimension(_) => 1,
        Error::Io(_)
        | Error::Serde(_)
        | Error::InvalidGrid(_)
        | Error::InvalidLine(_)
        | Error::DimensionMismatch(_)
        | Error::DegenerateMetrics(_) => 2,
        Error::LoadFlowDiverged { .. }
        | Error::InfeasibleDispatch(_)
        | Error::IndexProblem
        | Error::ConsistentInit(_)
        | Error::IntegrationFailure { .. }
        | Error::RetriesExhausted { .. }
        | Error::TrajectoryTooShort { .. } => 3,
    }
}

fn dispatch(command: Command) -> frt_core::Result<()> {
    match command {
        Command::Generate { common, grids } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = grids {
                cfg.n_grids = n;
            }
            commands::cmd_generate(&cfg, common.seed, &common.out, common.force)
        }
        Command::Assess {
            common,
            grids,
            samples,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = samples {
                cfg.frt.n_samples = n;
            }
            commands::cmd_assess(&cfg, &grids, &common.out, common.force)
        }
        Command::AdaptCase { common, case } => {
            let cfg = load_config(&common)?;
            commands::cmd_adapt_case(&cfg, case.as_deref(), common.seed, &common.out, common.force)
        }
        Command::Dataset {
            common,
            grids,
            assessment,
        } => {
            let cfg = load_config(&common)?;
            let out_file = common.out.join("dataset.jsonl");
            commands::cmd_dataset(&cfg, &grids, &assessment, &out_file, common.force)
        }
        Command::Train {
            common,
            dataset,
            model,
        } => {
            let cfg = load_config(&common)?;
            let kind = ModelKind::parse(&model)?;
            commands::cmd_train(&cfg, &dataset, kind, common.seed, &common.out, common.force)
        }
        Command::Eval {
            common,
            dataset,
            case_dataset,
        } => {
            let cfg = load_config(&common)?;
            commands::cmd_eval(&cfg, &dataset, &case_dataset, &common.out, common.force)
        }
        Command::Plotdata {
            common,
            assessment,
            dataset,
            model,
            grids,
            grid,
        } => {
            let cfg = load_config(&common)?;
            let inputs = commands::PlotdataInputs {
                assessment_csv: &assessment,
                dataset: dataset.as_deref(),
                model: model.as_deref(),
                grids_dir: grids.as_deref(),
                grid_id: grid.as_deref(),
            };
            commands::cmd_plotdata(&cfg, &inputs, &common.out, common.force)
        }
    }
}

/// Parses `args` (excluding argv[0] handled by clap) and runs; returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are success, real parse errors are usage
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
