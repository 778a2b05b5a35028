//! Grid refinement driver: solve on the current grid, build the next one,
//! stop when the maximal Bayes risk no longer moves.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridgen::{mcmc_refine, structured_mean_grid, McStateRisk, McmcConfig, MeanGridConfig, PseudoPrior};
use crate::model::{Distribution, Grid, MomentConstraint};
use crate::nets::{average_mixture, EstimatorParams, MixtureEstimator};
use crate::risk::{two_stage_max_bayes_risk, RiskMode, Task};
use crate::rng::{stage, RngSpec};
use crate::solvers::{
    affine_exact_minimax, fictitious_play, gdmax, provider_for, sgdmax_convenient, AffineBestResponse,
    FictitiousPlayConfig, Instance, SolverConfig, SolverTrace,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InnerSolver {
    Gdmax,
    Sgdmax,
    FictitiousPlay(FictitiousPlayConfig),
    /// Golden-section search over affine rules with exact risks.
    AffineExact { tol: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GridGenerator {
    StructuredMean(MeanGridConfig),
    Mcmc {
        mcmc: McmcConfig,
        tau: PseudoPrior,
        /// Chain start for the first round; later rounds start from the
        /// heaviest point of the last least-favorable prior.
        start: Distribution,
        initial_size: usize,
        round_size: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterConfig {
    pub solver: InnerSolver,
    /// Solver settings for round 1.
    pub first_round: SolverConfig,
    /// Solver settings for later rounds.
    pub later_rounds: SolverConfig,
    pub generator: GridGenerator,
    pub eps_rel: f64,
    pub eps_abs: f64,
    pub min_rounds: u32,
    pub max_rounds: u32,
    /// Risks used by the stopping statistic.
    pub check: RiskMode,
}

impl OuterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_rel >= 0.0 && self.eps_abs >= 0.0) {
            return Err(Error::Config("stopping tolerances must be non-negative".into()));
        }
        if self.max_rounds < 1 || self.min_rounds > self.max_rounds {
            return Err(Error::Config("need 1 <= max_rounds and min_rounds <= max_rounds".into()));
        }
        if let RiskMode::MonteCarlo { replications: 0 } = self.check {
            return Err(Error::Config("check replications must be positive".into()));
        }
        self.first_round.validate()?;
        self.later_rounds.validate()
    }
}

/// What the driver needs to know about the problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub task: Task,
    pub constraints: Vec<MomentConstraint>,
    pub init: EstimatorParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopDecision {
    Continue,
    Converged,
    Budget,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    pub grid_size: usize,
    pub checkpoint: Option<String>,
    /// `r_sup(d_l, Gamma_l)`.
    pub r_current: f64,
    /// `r_sup(d_l, Gamma_{l+1})` on the candidate grid.
    pub r_next: f64,
    pub next_grid_size: usize,
    /// Nonzero entries `(grid index, weight)` of the least-favorable prior.
    pub prior: Vec<(usize, f64)>,
    pub decision: StopDecision,
    pub beta: Vec<f64>,
}

pub struct RunOutput {
    pub reports: Vec<RoundReport>,
    pub estimator: EstimatorParams,
    pub grid: Grid,
    pub traces: Vec<SolverTrace>,
}

/// `Delta <= max(eps_abs, eps_rel * r)`.
pub fn should_stop(r_current: f64, r_next: f64, eps_rel: f64, eps_abs: f64) -> bool {
    r_next - r_current <= eps_abs.max(eps_rel * r_current)
}

fn generate(cfg: &OuterConfig, problem: &Problem, round: u32, prev: &Grid, d: &EstimatorParams, start: Option<&Distribution>, rng: &RngSpec) -> Result<Grid> {
    match &cfg.generator {
        GridGenerator::StructuredMean(g) => structured_mean_grid(round, prev, g, rng),
        GridGenerator::Mcmc {
            mcmc,
            tau,
            start: first,
            initial_size,
            round_size,
        } => {
            let size = if round == 1 { *initial_size } else { *round_size };
            let mc = McmcConfig {
                max_new: Some(size),
                seed: rng.child(round as u64).stream_seed(stage::MCMC, 0, 0),
                ..mcmc.clone()
            };
            let risk = McStateRisk {
                estimator: d,
                task: problem.task,
                replications: mc.risk_replications,
                seed: mc.seed,
            };
            let start = start.filter(|s| s.as_multinomial().is_some()).unwrap_or(first);
            let out = mcmc_refine(prev, start, &risk, tau, &mc, round)?;
            if out.added < size {
                log::warn!("round {round}: sampler added {} of {size} requested points", out.added);
            }
            Ok(out.grid)
        }
    }
}

/// The round-1 grid `run` starts from.
pub fn initial_grid(cfg: &OuterConfig, problem: &Problem, rng: &RngSpec) -> Result<Grid> {
    generate(cfg, problem, 1, &Grid::new(), &problem.init, None, rng)
}

fn solve(cfg: &OuterConfig, problem: &Problem, inst: &Instance, d: EstimatorParams, round: u32, rng: &RngSpec) -> Result<(EstimatorParams, SolverTrace)> {
    let sc = if round == 1 { &cfg.first_round } else { &cfg.later_rounds };
    let rng = rng.child(0x50_0000 + round as u64);
    match &cfg.solver {
        InnerSolver::Gdmax => {
            let provider = provider_for(inst, sc.batch, rng, stage::GRADIENT)?;
            let out = gdmax(d, inst, sc, provider.as_ref())?;
            Ok((out.params, out.trace))
        }
        InnerSolver::Sgdmax => {
            let out = sgdmax_convenient(d, inst, sc, &rng)?;
            Ok((out.params, out.trace))
        }
        InnerSolver::FictitiousPlay(fp) => {
            let br = AffineBestResponse::new(&problem.task, inst.grid)?;
            let risks = br.0.risks_of(d.beta()[0], d.beta()[1]);
            let prior0 = inst.prior(inst.lfp(risks)?.weights)?;
            let out = fictitious_play(MixtureEstimator::point(d), prior0, inst, fp, &br)?;
            Ok((average_mixture(&out.mixture)?, out.trace))
        }
        InnerSolver::AffineExact { tol } => {
            let (d, _) = affine_exact_minimax(inst, *tol)?;
            Ok((d, SolverTrace::default()))
        }
    }
}

struct Artifacts {
    dir: PathBuf,
}

impl Artifacts {
    fn log(&self) -> PathBuf {
        self.dir.join("run.jsonl")
    }

    fn checkpoint(&self, round: u32) -> PathBuf {
        self.dir.join(format!("estimator-round-{round}.json"))
    }

    fn grid(&self, round: u32) -> PathBuf {
        self.dir.join(format!("grid-round-{round}.json"))
    }

    fn trace(&self, round: u32) -> PathBuf {
        self.dir.join(format!("trace-round-{round}.csv"))
    }

    fn completed(&self) -> Result<Vec<RoundReport>> {
        let Ok(file) = File::open(self.log()) else {
            return Ok(Vec::new());
        };
        let mut out = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                out.push(serde_json::from_str(&line)?);
            }
        }
        Ok(out)
    }
}

/// Runs the refinement loop. With `out`, every round appends a report to
/// `run.jsonl` and writes its estimator, trace and next grid; a rerun with
/// the same directory resumes after the last complete round.
pub fn run(cfg: &OuterConfig, problem: &Problem, rng: &RngSpec, out: Option<&Path>) -> Result<RunOutput> {
    cfg.validate()?;
    let artifacts = match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Some(Artifacts { dir: dir.to_path_buf() })
        }
        None => None,
    };
    let mut reports = match &artifacts {
        Some(a) => a.completed()?,
        None => Vec::new(),
    };
    let mut traces = Vec::new();
    let (mut d, mut grid, first_round) = match (reports.last(), &artifacts) {
        (Some(last), Some(a)) => {
            let d = EstimatorParams::load(&a.checkpoint(last.round))?;
            if last.decision != StopDecision::Continue {
                let grid = Grid::from_json(&fs::read_to_string(a.grid(last.round))?)?;
                return Ok(RunOutput {
                    reports,
                    estimator: d,
                    grid,
                    traces,
                });
            }
            let grid = Grid::from_json(&fs::read_to_string(a.grid(last.round + 1))?)?;
            (d, grid, last.round + 1)
        }
        _ => {
            let d = problem.init.clone();
            let grid = initial_grid(cfg, problem, rng)?;
            (d, grid, 1)
        }
    };
    for round in first_round..=cfg.max_rounds {
        let inst = Instance::new(problem.task, &grid, &problem.constraints)?;
        // Fails early, naming the violated constraints, if no prior is feasible.
        inst.lfp(vec![0.0; grid.len()])?;
        let (solved, trace) = solve(cfg, problem, &inst, d, round, rng)?;
        d = solved;
        let check_rng = rng.child(0x60_0000 + round as u64);
        let current = two_stage_max_bayes_risk(&d, &problem.task, &grid, &problem.constraints, cfg.check, &check_rng)?;
        let heaviest = current
            .prior
            .support()
            .max_by(|a, b| current.prior.weights()[*a].total_cmp(&current.prior.weights()[*b]))
            .map(|i| grid.get(i).clone());
        let candidate = generate(cfg, problem, round + 1, &grid, &d, heaviest.as_ref(), rng)?;
        let next = two_stage_max_bayes_risk(&d, &problem.task, &candidate, &problem.constraints, cfg.check, &check_rng)?;
        let decision = if round == cfg.max_rounds {
            StopDecision::Budget
        } else if round >= cfg.min_rounds && should_stop(current.value, next.value, cfg.eps_rel, cfg.eps_abs) {
            StopDecision::Converged
        } else {
            StopDecision::Continue
        };
        let mut report = RoundReport {
            round,
            grid_size: grid.len(),
            checkpoint: None,
            r_current: current.value,
            r_next: next.value,
            next_grid_size: candidate.len(),
            prior: current.prior.support().map(|i| (i, current.prior.weights()[i])).collect(),
            decision,
            beta: d.beta().to_vec(),
        };
        if let Some(a) = &artifacts {
            let path = a.checkpoint(round);
            d.save(&path)?;
            report.checkpoint = Some(path.file_name().unwrap().to_string_lossy().into_owned());
            if round == first_round && round == 1 {
                fs::write(a.grid(1), grid.to_json()?)?;
            }
            fs::write(a.grid(round + 1), candidate.to_json()?)?;
            trace.write_csv(File::create(a.trace(round))?)?;
            let mut log = OpenOptions::new().create(true).append(true).open(a.log())?;
            writeln!(log, "{}", serde_json::to_string(&report)?)?;
        }
        log::info!(
            "round {round}: grid {} r_sup {:.6} -> {:.6} on {} points, {:?}",
            grid.len(),
            report.r_current,
            report.r_next,
            candidate.len(),
            decision
        );
        reports.push(report);
        traces.push(trace);
        if decision != StopDecision::Continue {
            break;
        }
        grid = candidate;
    }
    Ok(RunOutput {
        reports,
        estimator: d,
        grid,
        traces,
    })
}
