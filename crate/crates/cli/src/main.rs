//! `fna`: command-line front end for the feasible Neyman allocation toolkit.

mod commands;
mod manifest;
mod parse;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fna_core::asymp::DEFAULT_DRAWS;
use fna_core::FnaError;

use crate::manifest::Recorder;

#[derive(Parser, Debug)]
#[command(name = "fna", version, about = "Feasible Neyman allocation with small pilots")]
struct Cli {
    /// Master seed; drawn at random and recorded in the manifest when omitted.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; results do not depend on this value.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Directory for output files and the run manifest.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// C_m curve for a simulation model or, by bootstrap, for a dataset.
    Cm(CmArgs),
    /// Monte Carlo MSE of allocation rules from a JSON config.
    Mse(MseArgs),
    /// Group statistics, bootstrap C_m and necessary pilot sizes for a dataset.
    Analyze(AnalyzeArgs),
    /// Treatment share for the main wave from a pilot CSV.
    Recommend(RecommendArgs),
    /// Efficiency loss of the FNA against balanced assignment.
    Loss(LossArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ColumnArgs {
    #[arg(long, default_value = "outcome")]
    pub outcome_col: String,
    #[arg(long, default_value = "arm")]
    pub arm_col: String,
    #[arg(long)]
    pub weight_col: Option<String>,
    #[arg(long)]
    pub cluster_col: Option<String>,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("source").required(true).multiple(false))]
pub struct CmArgs {
    /// Simulation model: 1-5 or `regret`.
    #[arg(long, group = "source")]
    pub model: Option<String>,
    /// sigma(1)/sigma(0) for models 1-5.
    #[arg(long, default_value_t = 1.0)]
    pub ratio: f64,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub omega: Option<f64>,
    /// CSV dataset to bootstrap from.
    #[arg(long, group = "source")]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub columns: ColumnArgs,
    /// Arm pair `treated:control` (with --data).
    #[arg(long)]
    pub pair: Option<String>,
    /// Aggregate to cluster means before resampling.
    #[arg(long)]
    pub cluster: bool,
    /// `start:stop:step`, a comma list, or one value.
    #[arg(long, default_value = "10:200:10")]
    pub m_grid: String,
    #[arg(long, default_value_t = DEFAULT_DRAWS)]
    pub draws: usize,
}

#[derive(Args, Debug)]
pub struct MseArgs {
    /// Simulation config (JSON).
    pub config: PathBuf,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub columns: ColumnArgs,
    /// Arm pair `treated:control`; repeatable.
    #[arg(long = "pair", required = true)]
    pub pairs: Vec<String>,
    /// Analyze cluster means instead of units.
    #[arg(long)]
    pub cluster: bool,
    /// Bootstrap C_m grid; enables exact pilot sizes.
    #[arg(long)]
    pub m_grid: Option<String>,
    #[arg(long, default_value_t = DEFAULT_DRAWS)]
    pub draws: usize,
    /// Quantile probabilities, comma separated.
    #[arg(long)]
    pub quantiles: Option<String>,
}

#[derive(Args, Debug)]
pub struct RecommendArgs {
    /// Pilot CSV.
    #[arg(long)]
    pub pilot: PathBuf,
    #[arg(long, default_value = "outcome")]
    pub outcome_col: String,
    #[arg(long, default_value = "arm")]
    pub arm_col: String,
    #[arg(long)]
    pub treated: String,
    #[arg(long)]
    pub control: String,
    /// balanced, fna, test, add, exp or simple, optionally `name:value`.
    #[arg(long, default_value = "fna")]
    pub rule: String,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    pub nu: f64,
    #[arg(long, default_value_t = 0.9)]
    pub tau: f64,
    #[arg(long, default_value_t = 0.5)]
    pub p: f64,
    /// Main-wave size.
    #[arg(long)]
    pub n: usize,
    /// Also write a random main-wave assignment drawn with the seed.
    #[arg(long)]
    pub assignment: bool,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("bias").required(true).multiple(false))]
#[command(group = clap::ArgGroup::new("scale").required(true).multiple(true))]
pub struct LossArgs {
    /// Bias functional B_m.
    #[arg(long, group = "bias")]
    pub b_m: Option<f64>,
    /// Use the normal-theory B_m for this pilot size.
    #[arg(long, group = "bias")]
    pub gaussian_m: Option<usize>,
    #[arg(long, group = "scale", requires = "sigma1", conflicts_with = "rho")]
    pub sigma0: Option<f64>,
    #[arg(long, group = "scale", requires = "sigma0", conflicts_with = "rho")]
    pub sigma1: Option<f64>,
    /// sigma(1)/sigma(0) with sigma(1)^2 + sigma(0)^2 = 1; also reports derivatives.
    #[arg(long, group = "scale")]
    pub rho: Option<f64>,
}

/// 0 success, 2 invalid input or config, 3 data degeneracy, 1 anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<FnaError>() {
        Some(FnaError::Degenerate(_)) => 3,
        Some(_) => 2,
        None if err.downcast_ref::<std::io::Error>().is_some() => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let (seed, seed_generated) = match cli.seed {
        Some(s) => (s, false),
        None => (rand::random::<u64>(), true),
    };
    if let Err(e) = std::fs::create_dir_all(&cli.out_dir) {
        eprintln!("error: cannot create {}: {e}", cli.out_dir.display());
        return ExitCode::from(2);
    }
    let name = match &cli.command {
        Command::Cm(_) => "cm",
        Command::Mse(_) => "mse",
        Command::Analyze(_) => "analyze",
        Command::Recommend(_) => "recommend",
        Command::Loss(_) => "loss",
    };
    let mut rec = Recorder::new(name, &cli.out_dir, seed, seed_generated);
    let mut config = serde_json::Value::Object(Default::default());
    let result = match &cli.command {
        Command::Cm(a) => commands::cm(a, &mut rec, &mut config),
        Command::Mse(a) => commands::mse(a, &mut rec, &mut config),
        Command::Analyze(a) => commands::analyze(a, &mut rec, &mut config),
        Command::Recommend(a) => commands::recommend(a, &mut rec, &mut config),
        Command::Loss(a) => commands::loss(a, &mut rec, &mut config),
    };
    let code = match &result {
        Ok(()) => 0,
        Err(e) => exit_code(e),
    };
    if let Err(e) = &result {
        eprintln!("error: {e:#}");
    }
    let (seed, seed_generated) = (rec.seed(), rec.seed_generated());
    match rec.finish(config, code.into()) {
        Ok(path) if seed_generated => eprintln!("seed {seed} recorded in {}", path.display()),
        Ok(_) => {}
        Err(e) => {
            eprintln!("error: writing manifest: {e:#}");
            if code == 0 {
                return ExitCode::from(1);
            }
        }
    }
    ExitCode::from(code)
}
