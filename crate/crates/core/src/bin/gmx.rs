use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gammamax::config::{run_experiment, Experiment, ExperimentConfig};
use gammamax::lp::{solve_least_favorable, LpProblem};
use gammamax::model::{Functional, Grid, Observation};
use gammamax::nets::{Architecture, Baseline, EstimatorParams};
use gammamax::oracle::{gamma_minimax_affine, least_favorable_beta, minimax_bayes_risk, MeanProblemSpec};
use gammamax::outer::initial_grid;
use gammamax::risk::Estimator;
use gammamax::rng::RngSpec;
use gammamax::{Error, Result};

#[derive(Parser)]
#[command(name = "gmx", version, about = "Gamma-minimax estimators on refined grids")]
struct Cli {
    /// Master seed; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for risk evaluation (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output path; overrides the config's `output`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config end to end.
    Run { config: PathBuf },
    #[command(subcommand)]
    Grid(GridCommand),
    /// Solve a least-favorable-prior LP given as JSON.
    LpSolve { problem: PathBuf },
    /// Closed forms for the mean problem with prior mean `mu` and `n` draws.
    Oracle { mu: f64, n: usize },
    /// Apply a checkpoint (or `baseline:<name>`) to a data file.
    Eval {
        checkpoint: String,
        data: PathBuf,
        /// Future sample size for new-category baselines.
        #[arg(long, default_value_t = 0)]
        m: usize,
    },
}

#[derive(Subcommand)]
enum GridCommand {
    /// Build the round-1 grid of a config.
    Gen { config: PathBuf },
    /// Print a CSV summary of a grid file.
    Inspect { grid: PathBuf },
}

fn load_experiment(path: &Path, seed: Option<u64>) -> Result<Experiment> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Experiment::new(cfg)
}

fn parse_numbers(text: &str) -> Result<Vec<f64>> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|e| Error::Config(format!("data: {t:?}: {e}"))))
        .collect()
}

fn wants_counts(arch: &Architecture) -> bool {
    matches!(arch, Architecture::Skn(_) | Architecture::Elm(_))
}

fn observation(values: Vec<f64>, counts: bool) -> Result<Observation> {
    if !counts {
        return Ok(Observation::real(values));
    }
    let counts = values
        .iter()
        .map(|v| {
            if *v >= 0.0 && v.fract() == 0.0 && *v <= u32::MAX as f64 {
                Ok(*v as u32)
            } else {
                Err(Error::RepresentationMismatch(format!("count data must be non-negative integers, found {v}")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Observation::counts(counts))
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config } => {
            let e = load_experiment(&config, cli.seed)?;
            let out = cli
                .out
                .or_else(|| e.config.output.clone())
                .ok_or_else(|| Error::Config("no output directory: set `output` or pass --out".into()))?;
            let summary = run_experiment(&e, &out)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Grid(GridCommand::Gen { config }) => {
            let e = load_experiment(&config, cli.seed)?;
            let grid = initial_grid(&e.outer, &e.problem(), &RngSpec::new(e.config.seed))?;
            match cli.out {
                Some(path) => fs::write(path, grid.to_json()?)?,
                None => println!("{}", grid.to_json()?),
            }
        }
        Command::Grid(GridCommand::Inspect { grid }) => {
            let grid = Grid::from_json(&fs::read_to_string(grid)?)?;
            grid.write_summary(&[Functional::Mean, Functional::ShannonEntropy], std::io::stdout().lock())?;
        }
        Command::LpSolve { problem } => {
            let lp: LpProblem = serde_json::from_str(&fs::read_to_string(problem)?)?;
            println!("{}", serde_json::to_string_pretty(&solve_least_favorable(&lp)?)?);
        }
        Command::Oracle { mu, n } => {
            let spec = MeanProblemSpec::new(mu, n)?;
            let (b0, b1) = gamma_minimax_affine(&spec)?;
            let (a, b) = least_favorable_beta(&spec)?;
            println!("beta0 = {b0}");
            println!("beta1 = {b1}");
            println!("minimax_bayes_risk = {}", minimax_bayes_risk(&spec)?);
            println!("least_favorable_prior = Bernoulli(theta), theta ~ Beta({a}, {b})");
        }
        Command::Eval { checkpoint, data, m } => {
            let values = parse_numbers(&fs::read_to_string(data)?)?;
            let estimate = match checkpoint.strip_prefix("baseline:") {
                Some(name) => {
                    let b = Baseline::from_name(name, m)?;
                    b.eval(&observation(values, !matches!(b, Baseline::SampleMean))?)?
                }
                None => {
                    let d = EstimatorParams::load(Path::new(&checkpoint))?;
                    let x = observation(values, wants_counts(d.architecture()))?;
                    d.estimate(&x)?
                }
            };
            println!("{estimate}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, Error::Config(_)) { 2 } else { 1 })
        }
    }
}
