//! `seqalloc`: generate synthetic offer data, estimate the structural model,
//! replicate the reduced-form table, and run counterfactual simulations.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("ordering check failed:\n{0}")]
    Ordering(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Ordering(_) => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "seqalloc",
    version,
    about = "Sequential organ-offer model: data, estimation and counterfactuals"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic population and its offer decisions.
    Generate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        population: PopulationArgs,
        #[command(flatten)]
        cell: CellArgs,
    },
    /// Two-step maximum likelihood on a dataset.
    Estimate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        /// Simplex iteration cap per round [default: 500 per parameter]
        #[arg(long)]
        max_iters: Option<usize>,
        /// Simplex restarts after the first round [default: 2]
        #[arg(long)]
        restarts: Option<usize>,
        /// Compute BHHH standard errors [default: true]
        #[arg(long)]
        std_errors: Option<bool>,
    },
    /// Simulate the policy by information-treatment grid.
    Counterfactual {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        population: PopulationArgs,
        /// Policy: optn | greedy | reverse-greedy [default: all three]
        #[arg(long)]
        policy: Option<String>,
        /// Regime: social-learning | no-social-learning | info-sharing [default: all three]
        #[arg(long)]
        regime: Option<String>,
        /// Exit with status 4 if the expected orderings across cells fail [default: off]
        #[arg(long)]
        check_orderings: bool,
    },
    /// Reduced-form regressions on a dataset.
    ReducedForm {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Conditional acceptance probability by sequence number.
    Curve {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        population: PopulationArgs,
        #[command(flatten)]
        cell: CellArgs,
    },
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// TOML configuration file; flags override its values [default: none]
    #[arg(long)]
    config: Option<PathBuf>,
    /// Random seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, 0 for one per core [default: 0]
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory [default: out]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset directory written by `generate` [default: none]
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PopulationArgs {
    /// Donors in a generated population [default: 548]
    #[arg(long)]
    donors: Option<usize>,
    /// Patients in a generated population [default: 1348]
    #[arg(long)]
    patients: Option<usize>,
}

#[derive(Debug, Args)]
struct CellArgs {
    /// Policy: optn | greedy | reverse-greedy [default: optn]
    #[arg(long)]
    policy: Option<String>,
    /// Regime: social-learning | no-social-learning | info-sharing [default: social-learning]
    #[arg(long)]
    regime: Option<String>,
}

#[derive(Debug, Args)]
struct SimArgs {
    /// Estimates CSV used as model parameters [default: dataset truth, else generator truth]
    #[arg(long)]
    params: Option<PathBuf>,
    /// Replications per donor [default: 10]
    #[arg(long)]
    replications: Option<u32>,
}

fn apply_common(c: &mut RunConfig, a: CommonArgs) {
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = a.threads {
        c.threads = v;
    }
    if let Some(v) = a.out {
        c.out = v;
    }
}

fn apply_population(c: &mut RunConfig, a: PopulationArgs) {
    if let Some(v) = a.donors {
        c.generator.n_donors = v;
    }
    if let Some(v) = a.patients {
        c.generator.n_patients = v;
    }
}

fn apply_sim(c: &mut RunConfig, a: SimArgs) {
    if a.params.is_some() {
        c.params = a.params;
    }
    if let Some(v) = a.replications {
        c.replications = v;
    }
}

fn apply_cell(c: &mut RunConfig, policy: Option<String>, regime: Option<String>) {
    if policy.is_some() {
        c.policy = policy;
    }
    if regime.is_some() {
        c.regime = regime;
    }
}

fn apply_data(c: &mut RunConfig, a: DataArgs) {
    if a.data.is_some() {
        c.data = a.data;
    }
}

/// Loads the config file named on the command line and layers the flags
/// over it.
fn resolve(command: Command) -> Result<(commands::Kind, RunConfig), CliError> {
    let (kind, common) = match &command {
        Command::Generate { common, .. } => (commands::Kind::Generate, common),
        Command::Estimate { common, .. } => (commands::Kind::Estimate, common),
        Command::Counterfactual { common, .. } => (commands::Kind::Counterfactual, common),
        Command::ReducedForm { common, .. } => (commands::Kind::ReducedForm, common),
        Command::Curve { common, .. } => (commands::Kind::Curve, common),
    };
    let mut c = RunConfig::load(common.config.as_deref())?;
    match command {
        Command::Generate {
            common,
            population,
            cell,
        } => {
            apply_common(&mut c, common);
            apply_population(&mut c, population);
            apply_cell(&mut c, cell.policy, cell.regime);
        }
        Command::Estimate {
            common,
            data,
            max_iters,
            restarts,
            std_errors,
        } => {
            apply_common(&mut c, common);
            apply_data(&mut c, data);
            if max_iters.is_some() {
                c.max_iters = max_iters;
            }
            if let Some(v) = restarts {
                c.restarts = v;
            }
            if let Some(v) = std_errors {
                c.std_errors = v;
            }
        }
        Command::Counterfactual {
            common,
            data,
            sim,
            population,
            policy,
            regime,
            check_orderings,
        } => {
            apply_common(&mut c, common);
            apply_data(&mut c, data);
            apply_sim(&mut c, sim);
            apply_population(&mut c, population);
            apply_cell(&mut c, policy, regime);
            c.check_orderings |= check_orderings;
        }
        Command::ReducedForm { common, data } => {
            apply_common(&mut c, common);
            apply_data(&mut c, data);
        }
        Command::Curve {
            common,
            data,
            sim,
            population,
            cell,
        } => {
            apply_common(&mut c, common);
            apply_data(&mut c, data);
            apply_sim(&mut c, sim);
            apply_population(&mut c, population);
            apply_cell(&mut c, cell.policy, cell.regime);
        }
    }
    c.generator.seed = c.seed;
    c.validate()?;
    Ok((kind, c))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = resolve(cli.command).and_then(|(kind, config)| {
        if config.threads > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.threads)
                .build_global()
                .map_err(|e| CliError::Failed(format!("thread pool: {e}")))?;
        }
        commands::run(kind, &config)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
