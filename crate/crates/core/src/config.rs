//! Experiment configuration files and the end-to-end runner behind `gmx run`.
//!
//! A config is a TOML file; see `configs/` for complete examples. Top-level
//! keys: `problem`, `n`, `m` (new categories only), `seed`, `output`, and the
//! tables `population`, `prior`, `estimator`, `grid`, `solver`, `outer`,
//! `evaluation`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridgen::{McmcConfig, MeanGridConfig, PseudoComponent, PseudoPrior};
use crate::model::{Distribution, Functional, Grid, MomentConstraint, PriorWeights};
use crate::nets::{Architecture, Baseline, ElmSpec, EstimatorParams, SknSpec};
use crate::outer::{self, GridGenerator, InnerSolver, OuterConfig, Problem, StopDecision};
use crate::risk::{mc_loss_moments, two_stage_with_se, RiskMode, Task};
use crate::rng::{combine, stage, RngSpec};
use crate::solvers::{BatchSize, FictitiousPlayConfig, SolverConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Mean,
    Entropy,
    NewCategories,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PopulationSpec {
    /// `p_k` proportional to `k^-power`, `k = 1..categories`.
    Zipf { categories: usize, power: f64 },
    Multinomial { probs: Vec<f64> },
    PointSupport { support: Vec<f64>, weights: Vec<f64> },
}

impl PopulationSpec {
    pub fn build(&self) -> Result<Distribution> {
        match self {
            Self::Zipf { categories, power } => {
                if *categories == 0 || !power.is_finite() {
                    return Err(Error::Config("population: zipf needs categories >= 1 and a finite power".into()));
                }
                let masses: Vec<f64> = (1..=*categories).map(|k| (k as f64).powf(-power)).collect();
                Distribution::multinomial_from_masses(&masses)
            }
            Self::Multinomial { probs } => Distribution::multinomial(probs.clone()),
            Self::PointSupport { support, weights } => Distribution::point_support(support.clone(), weights.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Strong,
    Weak,
    AlmostNone,
}

/// `(mean interval, interval holding at least 95% prior mass)`.
type Intervals = ((f64, f64), (f64, f64));

impl Preset {
    /// Intervals on the functional's own scale, plus the reference value
    /// (midpoint of the strong mean interval) used for rescaling.
    fn intervals(self, problem: ProblemKind) -> Result<(Intervals, f64)> {
        let table = match problem {
            ProblemKind::NewCategories => [((45.0, 50.0), (40.0, 55.0)), ((40.0, 55.0), (30.0, 65.0)), ((35.0, 60.0), (20.0, 75.0))],
            ProblemKind::Entropy => [((4.3, 4.7), (4.0, 5.0)), ((4.0, 5.0), (3.5, 5.5)), ((3.7, 5.3), (3.0, 6.0))],
            ProblemKind::Mean => return Err(Error::Config("prior.preset: presets exist only for count problems".into())),
        };
        let reference = 0.5 * (table[0].0 .0 + table[0].0 .1);
        let idx = match self {
            Preset::Strong => 0,
            Preset::Weak => 1,
            Preset::AlmostNone => 2,
        };
        Ok((table[idx], reference))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintSpec {
    AtMost { functional: Functional, bound: f64 },
    AtLeast { functional: Functional, bound: f64 },
    Equal { functional: Functional, value: f64 },
    MeanBetween { functional: Functional, lo: f64, hi: f64 },
    ProbabilityWithin { functional: Functional, lo: f64, hi: f64, prob: f64 },
}

impl ConstraintSpec {
    fn expand(&self) -> Result<Vec<MomentConstraint>> {
        Ok(match self {
            Self::AtMost { functional, bound } => vec![MomentConstraint::at_most(functional.clone(), *bound)?],
            Self::AtLeast { functional, bound } => vec![MomentConstraint::at_least(functional.clone(), *bound)?],
            Self::Equal { functional, value } => MomentConstraint::equal(functional.clone(), *value)?,
            Self::MeanBetween { functional, lo, hi } => MomentConstraint::mean_between(functional.clone(), *lo, *hi)?,
            Self::ProbabilityWithin { functional, lo, hi, prob } => {
                vec![MomentConstraint::probability_within(functional.clone(), *lo, *hi, *prob)?]
            }
        })
    }
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub preset: Option<Preset>,
    /// Scale preset intervals by `Phi(population) / reference`.
    #[serde(default = "yes")]
    pub rescale: bool,
    #[serde(default)]
    pub constraints: Vec<ConstraintSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    #[default]
    Affine,
    Skn,
    DeepSet,
    Elm,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSpec {
    pub family: Family,
    /// Baseline names; defaults depend on the problem.
    pub baselines: Option<Vec<String>>,
    /// Divisor of baselines inside hidden layers; defaults to the
    /// population's functional value.
    pub baseline_scale: Option<f64>,
    pub hidden: Option<Vec<usize>>,
    /// Start from this checkpoint instead of the default initialization.
    pub checkpoint: Option<PathBuf>,
    pub init_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcGridSpec {
    pub mcmc: McmcConfig,
    pub initial_size: usize,
    pub round_size: usize,
    /// The chain starts at the uniform law on this many categories.
    pub start_categories: usize,
    pub normal_weight: f64,
    pub negbin_weight: f64,
    pub negbin_success: f64,
    pub negbin_failures: f64,
}

impl Default for McmcGridSpec {
    fn default() -> Self {
        Self {
            mcmc: McmcConfig {
                iterations: 20_000,
                ..McmcConfig::default()
            },
            initial_size: 2000,
            round_size: 1000,
            start_categories: 150,
            normal_weight: 30.0,
            negbin_weight: 10.0,
            negbin_success: 0.995,
            negbin_failures: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridSpec {
    StructuredMean {
        #[serde(default)]
        recipe: MeanGridConfig,
    },
    Mcmc(McmcGridSpec),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Gdmax,
    Sgdmax,
    FictitiousPlay,
    AffineExact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(rename = "type")]
    pub kind: SolverKind,
    #[serde(default)]
    pub first_round: SolverConfig,
    /// Defaults to `first_round`.
    pub later_rounds: Option<SolverConfig>,
    #[serde(default)]
    pub fictitious_play: FictitiousPlayConfig,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_tol() -> f64 {
    1e-10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuterSpec {
    pub eps_rel: f64,
    pub eps_abs: f64,
    pub min_rounds: u32,
    pub max_rounds: u32,
    pub check: BatchSize,
}

impl Default for OuterSpec {
    fn default() -> Self {
        Self {
            eps_rel: 0.02,
            eps_abs: 1e-4,
            min_rounds: 1,
            max_rounds: 3,
            check: BatchSize::Draws(2000),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSpec {
    /// Replications for the final maximal Bayes risk and the population risk.
    pub replications: BatchSize,
}

impl Default for EvaluationSpec {
    fn default() -> Self {
        Self {
            replications: BatchSize::Draws(2000),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    pub n: usize,
    pub m: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub population: PopulationSpec,
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default)]
    pub estimator: EstimatorSpec,
    pub grid: GridSpec,
    pub solver: SolverSpec,
    #[serde(default)]
    pub outer: OuterSpec,
    #[serde(default)]
    pub evaluation: EvaluationSpec,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        // Relative paths inside the file are relative to the file.
        if let (Some(dir), Some(ck)) = (path.parent(), cfg.estimator.checkpoint.as_mut()) {
            if ck.is_relative() {
                *ck = dir.join(&*ck);
            }
        }
        Ok(cfg)
    }

    pub fn task(&self) -> Result<Task> {
        Ok(match self.problem {
            ProblemKind::Mean => Task::Mean { n: self.n },
            ProblemKind::Entropy => Task::Entropy { n: self.n },
            ProblemKind::NewCategories => Task::NewCategories {
                n: self.n,
                m: self.m.ok_or_else(|| Error::Config("missing key `m` (required for new-categories)".into()))?,
            },
        })
    }
}

/// A config resolved into library objects.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub task: Task,
    pub population: Distribution,
    /// `Phi(population)` for the task's functional.
    pub population_value: f64,
    pub constraints: Vec<MomentConstraint>,
    /// Preset intervals after rescaling, when a preset is used.
    pub preset_intervals: Option<Intervals>,
    pub init: EstimatorParams,
    /// The designated baseline combination the network starts from.
    pub baseline: Option<EstimatorParams>,
    pub outer: OuterConfig,
}

fn default_baselines(problem: ProblemKind, m: Option<usize>) -> Vec<Baseline> {
    match problem {
        ProblemKind::Mean => vec![Baseline::SampleMean],
        ProblemKind::Entropy => vec![Baseline::PluginMillerMadow],
        ProblemKind::NewCategories => {
            let m = m.unwrap_or(0);
            vec![Baseline::SmoothedGoodToulmin { m }, Baseline::ChaoExtrapolation { m }]
        }
    }
}

fn mode(b: BatchSize) -> RiskMode {
    match b {
        BatchSize::Exact => RiskMode::Exact,
        BatchSize::Draws(replications) => RiskMode::MonteCarlo { replications },
    }
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        if config.n == 0 {
            return Err(Error::Config("key `n` must be at least 1".into()));
        }
        let task = config.task()?;
        let population = config.population.build()?;
        let functional = task.functional();
        let population_value = functional.eval(&population)?;

        let mut constraints = Vec::new();
        let mut preset_intervals = None;
        if let Some(preset) = config.prior.preset {
            let (((a, b), (c, d)), reference) = preset.intervals(config.problem)?;
            let s = if config.prior.rescale { population_value / reference } else { 1.0 };
            let iv = ((a * s, b * s), (c * s, d * s));
            constraints.extend(MomentConstraint::mean_between(functional.clone(), iv.0 .0, iv.0 .1)?);
            constraints.push(MomentConstraint::probability_within(functional.clone(), iv.1 .0, iv.1 .1, 0.95)?);
            preset_intervals = Some(iv);
        }
        for c in &config.prior.constraints {
            constraints.extend(c.expand()?);
        }

        let est = &config.estimator;
        let baselines = match &est.baselines {
            Some(names) => names
                .iter()
                .map(|s| Baseline::from_name(s, config.m.unwrap_or(0)))
                .collect::<Result<Vec<_>>>()?,
            None => default_baselines(config.problem, config.m),
        };
        let scale = est.baseline_scale.unwrap_or(population_value.abs().max(1.0));
        let arch = match est.family {
            Family::Affine => Architecture::AffineMean,
            Family::DeepSet => Architecture::deep_set(),
            Family::Skn => Architecture::Skn(SknSpec {
                n: config.n,
                hidden: est.hidden.clone().unwrap_or_else(|| vec![50, 1]),
                baselines: baselines.clone(),
                baseline_scale: scale,
            }),
            Family::Elm => Architecture::Elm(ElmSpec {
                n: config.n,
                hidden: est.hidden.as_ref().and_then(|h| h.first().copied()).unwrap_or(50),
                baselines: baselines.clone(),
                baseline_scale: scale,
                seed: combine(config.seed, est.init_seed),
            }),
        };
        let default_init = match arch {
            Architecture::AffineMean => EstimatorParams::affine(0.0, 1.0),
            _ => EstimatorParams::init(arch, combine(config.seed, est.init_seed))?,
        };
        let baseline = matches!(est.family, Family::Skn | Family::Elm | Family::DeepSet).then(|| default_init.clone());
        let init = match &est.checkpoint {
            Some(path) => EstimatorParams::load(path)?,
            None => default_init,
        };

        let generator = match &config.grid {
            GridSpec::StructuredMean { recipe } => GridGenerator::StructuredMean(recipe.clone()),
            GridSpec::Mcmc(g) => {
                let mut components = Vec::new();
                if let Some(((a, b), (c, d))) = preset_intervals {
                    components.push((PseudoComponent::normal(functional.clone(), (a, b), (c, d))?, g.normal_weight));
                }
                components.push((PseudoComponent::neg_binomial(g.negbin_success, g.negbin_failures)?, g.negbin_weight));
                if g.start_categories == 0 {
                    return Err(Error::Config("grid.start_categories must be at least 1".into()));
                }
                GridGenerator::Mcmc {
                    mcmc: g.mcmc.clone(),
                    tau: PseudoPrior { components },
                    start: Distribution::multinomial(vec![1.0 / g.start_categories as f64; g.start_categories])?,
                    initial_size: g.initial_size,
                    round_size: g.round_size,
                }
            }
        };
        let solver = match config.solver.kind {
            SolverKind::Gdmax => InnerSolver::Gdmax,
            SolverKind::Sgdmax => InnerSolver::Sgdmax,
            SolverKind::FictitiousPlay => InnerSolver::FictitiousPlay(config.solver.fictitious_play.clone()),
            SolverKind::AffineExact => InnerSolver::AffineExact { tol: config.solver.tol },
        };
        let o = &config.outer;
        let outer = OuterConfig {
            solver,
            first_round: config.solver.first_round.clone(),
            later_rounds: config.solver.later_rounds.clone().unwrap_or_else(|| config.solver.first_round.clone()),
            generator,
            eps_rel: o.eps_rel,
            eps_abs: o.eps_abs,
            min_rounds: o.min_rounds,
            max_rounds: o.max_rounds,
            check: mode(o.check),
        };
        outer.validate()?;
        Ok(Self {
            config,
            task,
            population,
            population_value,
            constraints,
            preset_intervals,
            init,
            baseline,
            outer,
        })
    }

    pub fn problem(&self) -> Problem {
        Problem {
            task: self.task,
            constraints: self.constraints.clone(),
            init: self.init.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: u32,
    pub grid_size: usize,
    pub r_current: f64,
    pub r_next: f64,
    pub decision: StopDecision,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorPoint {
    pub index: usize,
    pub weight: f64,
    pub functional: f64,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub value: f64,
    /// Monte Carlo standard error; zero for exact risks.
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub problem: ProblemKind,
    pub n: usize,
    pub m: Option<usize>,
    pub seed: u64,
    pub estimator: String,
    /// Coefficients of affine estimators.
    pub coefficients: Option<Vec<f64>>,
    pub rounds: Vec<RoundSummary>,
    pub final_grid_size: usize,
    /// Two-stage maximal Bayes risk on the final grid.
    pub max_bayes_risk: RiskEstimate,
    /// The same for the baseline combination the network started from.
    pub baseline_max_bayes_risk: Option<RiskEstimate>,
    pub least_favorable_prior: Vec<PriorPoint>,
    pub population_functional: f64,
    pub population_risk: RiskEstimate,
    pub baseline_population_risk: Option<RiskEstimate>,
    pub notes: Vec<String>,
}

fn max_bayes(d: &EstimatorParams, e: &Experiment, grid: &Grid, rng: &RngSpec) -> Result<(RiskEstimate, PriorWeights)> {
    match e.config.evaluation.replications {
        BatchSize::Exact => {
            let r = crate::risk::two_stage_max_bayes_risk(d, &e.task, grid, &e.constraints, RiskMode::Exact, rng)?;
            Ok((RiskEstimate { value: r.value, se: 0.0 }, r.prior))
        }
        BatchSize::Draws(reps) => {
            let (r, se) = two_stage_with_se(d, &e.task, grid, &e.constraints, reps, rng)?;
            Ok((RiskEstimate { value: r.value, se }, r.prior))
        }
    }
}

fn population_risk(d: &EstimatorParams, e: &Experiment, rng: &RngSpec) -> Result<RiskEstimate> {
    match e.config.evaluation.replications {
        BatchSize::Exact => Ok(RiskEstimate {
            value: crate::risk::exact_risk(d, &e.task, &e.population)?,
            se: 0.0,
        }),
        BatchSize::Draws(reps) => {
            let (value, var) = mc_loss_moments(d, &e.task, &e.population, rng, stage::EVAL, 0, 0..reps)?;
            Ok(RiskEstimate {
                value,
                se: (var / reps as f64).sqrt(),
            })
        }
    }
}

/// Runs the experiment, writing the outer-loop artifacts, the final
/// estimator and `summary.json` into `out`.
pub fn run_experiment(e: &Experiment, out: &Path) -> Result<Summary> {
    let rng = RngSpec::new(e.config.seed);
    let run = outer::run(&e.outer, &e.problem(), &rng, Some(out))?;
    let d = &run.estimator;
    d.save(&out.join("final-estimator.json"))?;
    let eval_rng = rng.child(0xE7A1);
    let (max_bayes_risk, prior) = max_bayes(d, e, &run.grid, &eval_rng)?;
    let functional = e.task.functional();
    let mut lfp: Vec<PriorPoint> = prior
        .support()
        .map(|i| {
            Ok(PriorPoint {
                index: i,
                weight: prior.weights()[i],
                functional: functional.eval(run.grid.get(i))?,
                size: run.grid.get(i).size(),
            })
        })
        .collect::<Result<_>>()?;
    lfp.sort_by(|a, b| b.weight.total_cmp(&a.weight).then(a.index.cmp(&b.index)));
    let (baseline_max_bayes_risk, baseline_population_risk) = match &e.baseline {
        Some(b) => (Some(max_bayes(b, e, &run.grid, &eval_rng)?.0), Some(population_risk(b, e, &eval_rng)?)),
        None => (None, None),
    };
    let mut notes = Vec::new();
    if e.config.problem != ProblemKind::Mean {
        notes.push(
            "count baselines are substitutes: plug-in with Miller-Madow correction for entropy; smoothed Good-Toulmin \
             and a Chao-type extrapolation for new categories"
                .to_string(),
        );
    }
    if let PopulationSpec::Zipf { categories, power } = e.config.population {
        notes.push(format!("population is a synthetic Zipf law with {categories} categories and power {power}"));
    }
    if let Some(((a, b), (c, d))) = e.preset_intervals {
        notes.push(format!("prior mean of the functional in [{a:.4}, {b:.4}], at least 95% mass in [{c:.4}, {d:.4}]"));
    }
    let summary = Summary {
        problem: e.config.problem,
        n: e.config.n,
        m: e.config.m,
        seed: e.config.seed,
        estimator: d.architecture().name().to_string(),
        coefficients: matches!(d.architecture(), Architecture::AffineMean).then(|| d.beta().to_vec()),
        rounds: run
            .reports
            .iter()
            .map(|r| RoundSummary {
                round: r.round,
                grid_size: r.grid_size,
                r_current: r.r_current,
                r_next: r.r_next,
                decision: r.decision,
            })
            .collect(),
        final_grid_size: run.grid.len(),
        max_bayes_risk,
        baseline_max_bayes_risk,
        least_favorable_prior: lfp,
        population_functional: e.population_value,
        population_risk: population_risk(d, e, &eval_rng)?,
        baseline_population_risk,
        notes,
    };
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}
