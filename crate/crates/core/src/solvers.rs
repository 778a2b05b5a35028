//! Inner solvers for `min_d sup_{pi in Gamma_l} r(d, pi)` on a fixed grid.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{solve_least_favorable, LpProblem, LpSolution};
use crate::model::{constraint_matrix, Grid, MomentConstraint, PriorWeights};
use crate::nets::{Architecture, EstimatorParams, MixtureEstimator};
use crate::risk::{affine_risk_from_moments, Estimator, Task};
use crate::rng::{stage, RngSpec};

/// Number of Monte Carlo draws, or closed-form risks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BatchSize {
    Draws(u64),
    #[serde(with = "exact_tag")]
    Exact,
}

mod exact_tag {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("exact")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "exact" {
            Ok(())
        } else {
            Err(serde::de::Error::custom(format!("expected \"exact\" or a count, found {s:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Learning rate.
    pub eta: f64,
    /// Draws per support point for the gradient (J).
    pub batch: BatchSize,
    /// Draws per grid point for the max-oracle (J').
    pub oracle_batch: BatchSize,
    pub iterations: usize,
    /// Max-oracle accuracy for GDmax: the previous prior is kept when it is
    /// within `zeta` of the best possible value. Zero always re-solves.
    pub zeta: f64,
    /// Log every this many iterations (the last iteration is always logged).
    pub trace_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eta: 0.005,
            batch: BatchSize::Draws(50),
            oracle_batch: BatchSize::Draws(50),
            iterations: 2000,
            zeta: 0.0,
            trace_every: 1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::Config("eta must be finite and non-negative".into()));
        }
        if matches!(self.batch, BatchSize::Draws(0)) || matches!(self.oracle_batch, BatchSize::Draws(0)) {
            return Err(Error::Config("batch sizes must be at least 1".into()));
        }
        if !(self.zeta >= 0.0) {
            return Err(Error::Config("zeta must be non-negative".into()));
        }
        if self.trace_every == 0 || (self.iterations > 0 && self.trace_every > self.iterations) {
            return Err(Error::Config("trace_every must be between 1 and the iteration budget".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    /// Bayes risk of the current estimator under the current adversary prior.
    pub bayes_risk: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    pub rows: Vec<TraceRow>,
}

impl SolverTrace {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "bayes_risk", "lower", "upper"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([r.iteration.to_string(), r.bayes_risk.to_string(), opt(r.lower), opt(r.upper)])?;
        }
        w.flush()?;
        Ok(())
    }

    fn log(&mut self, every: usize, last: usize, row: TraceRow) {
        if row.iteration % every == 0 || row.iteration == last {
            self.rows.push(row);
        }
    }
}

/// A grid together with its constraint rows.
pub struct Instance<'a> {
    pub task: Task,
    pub grid: &'a Grid,
    pub rows: Vec<Vec<f64>>,
    pub bounds: Vec<f64>,
}

impl<'a> Instance<'a> {
    pub fn new(task: Task, grid: &'a Grid, constraints: &[MomentConstraint]) -> Result<Self> {
        let (rows, bounds) = constraint_matrix(constraints, grid)?;
        Ok(Self {
            task,
            grid,
            rows,
            bounds,
        })
    }

    /// Least-favorable prior for the risk vector `risks`.
    pub fn lfp(&self, risks: Vec<f64>) -> Result<LpSolution> {
        if risks.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("risk overflow; reduce the learning rate".into()));
        }
        solve_least_favorable(&LpProblem {
            objective: risks,
            rows: self.rows.clone(),
            bounds: self.bounds.clone(),
        })
    }

    pub fn prior(&self, weights: Vec<f64>) -> Result<PriorWeights> {
        PriorWeights::from_rows(self.grid.tag(), weights, &self.rows, &self.bounds)
    }

    /// `sup_pi r(d, pi)` for exact risks.
    pub fn max_bayes_risk(&self, risks: Vec<f64>) -> Result<f64> {
        Ok(self.lfp(risks)?.value)
    }
}

/// Deterministic risks and Bayes-risk gradients of an estimator on a grid.
pub trait RiskProvider: Sync {
    fn risks(&self, d: &EstimatorParams) -> Result<Vec<f64>>;

    /// Bayes risk under `prior` and its gradient in `beta`. Points with zero
    /// prior weight are skipped.
    fn bayes_gradient(&self, d: &EstimatorParams, prior: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Closed-form risks of affine rules for the mean problem.
pub struct ExactAffine {
    n: usize,
    moments: Vec<(f64, f64)>,
}

impl ExactAffine {
    pub fn new(task: &Task, grid: &Grid) -> Result<Self> {
        let Task::Mean { n } = *task else {
            return Err(Error::Unsupported("closed-form risks exist only for the mean problem".into()));
        };
        let moments = grid
            .points()
            .iter()
            .map(|p| {
                p.as_point_law().map(|l| (l.mean(), l.variance())).ok_or(Error::VariantMismatch {
                    functional: "mean".into(),
                    kind: p.kind(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { n, moments })
    }

    fn check(d: &EstimatorParams) -> Result<(f64, f64)> {
        match d.architecture() {
            Architecture::AffineMean => Ok((d.beta()[0], d.beta()[1])),
            other => Err(Error::Unsupported(format!("no closed-form risk for {}", other.name()))),
        }
    }

    pub fn risks_of(&self, b0: f64, b1: f64) -> Vec<f64> {
        self.moments.iter().map(|&(m, v)| affine_risk_from_moments(b0, b1, m, v, self.n)).collect()
    }

    /// Prior moments `(E mu, E mu^2, E Var / n)`.
    fn prior_moments(&self, prior: &[f64]) -> (f64, f64, f64) {
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        let mut s = 0.0;
        for (w, &(m, v)) in prior.iter().zip(&self.moments) {
            if *w > 0.0 {
                m1 += w * m;
                m2 += w * m * m;
                s += w * v;
            }
        }
        (m1, m2, s / self.n as f64)
    }

    /// Bayes rule among affine rules for `prior`.
    pub fn bayes_rule(&self, prior: &[f64]) -> (f64, f64) {
        let (m1, m2, s) = self.prior_moments(prior);
        let det = m2 + s - m1 * m1;
        if det < 1e-12 {
            return (m1, 0.0);
        }
        let b1 = (m2 - m1 * m1) / det;
        (m1 - m1 * b1, b1)
    }
}

impl RiskProvider for ExactAffine {
    fn risks(&self, d: &EstimatorParams) -> Result<Vec<f64>> {
        let (b0, b1) = Self::check(d)?;
        Ok(self.risks_of(b0, b1))
    }

    fn bayes_gradient(&self, d: &EstimatorParams, prior: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (b0, b1) = Self::check(d)?;
        let n = self.n as f64;
        let (mut r, mut g0, mut g1) = (0.0, 0.0, 0.0);
        for (w, &(m, v)) in prior.iter().zip(&self.moments) {
            if *w > 0.0 {
                let e = b0 + (b1 - 1.0) * m;
                r += w * (e * e + b1 * b1 * v / n);
                g0 += w * 2.0 * e;
                g1 += w * (2.0 * e * m + 2.0 * b1 * v / n);
            }
        }
        Ok((r, vec![g0, g1]))
    }
}

/// Risks averaged over a fixed set of draws: `draws` replications of stream
/// `(stage, point, rep)`. Deterministic for a given `rng`.
pub struct SampledRisks<'a> {
    pub task: Task,
    pub grid: &'a Grid,
    pub draws: u64,
    pub rng: RngSpec,
    pub stage: u64,
}

impl SampledRisks<'_> {
    fn point(&self, d: &EstimatorParams, i: usize, grad: Option<&mut [f64]>) -> Result<f64> {
        let sampler = self.task.sampler(self.grid.get(i))?;
        let inv = 1.0 / self.draws as f64;
        let mut total = 0.0;
        match grad {
            None => {
                for rep in 0..self.draws {
                    let (x, t) = sampler.draw(&mut self.rng.stream(self.stage, i as u64, rep));
                    let e = d.estimate(&x)? - t;
                    total += e * e;
                }
            }
            Some(g) => {
                for rep in 0..self.draws {
                    let (x, t) = sampler.draw(&mut self.rng.stream(self.stage, i as u64, rep));
                    total += d.accumulate_grad(&x, t, inv, g)?;
                }
            }
        }
        Ok(total * inv)
    }
}

impl RiskProvider for SampledRisks<'_> {
    fn risks(&self, d: &EstimatorParams) -> Result<Vec<f64>> {
        (0..self.grid.len()).into_par_iter().map(|i| self.point(d, i, None)).collect()
    }

    fn bayes_gradient(&self, d: &EstimatorParams, prior: &[f64]) -> Result<(f64, Vec<f64>)> {
        let support: Vec<usize> = (0..prior.len()).filter(|&i| prior[i] > 0.0).collect();
        let parts: Vec<(f64, Vec<f64>)> = support
            .par_iter()
            .map(|&i| {
                let mut g = vec![0.0; d.beta().len()];
                let r = self.point(d, i, Some(&mut g))?;
                Ok((r, g))
            })
            .collect::<Result<_>>()?;
        let mut r = 0.0;
        let mut grad = vec![0.0; d.beta().len()];
        for (&i, (ri, gi)) in support.iter().zip(&parts) {
            r += prior[i] * ri;
            for (a, b) in grad.iter_mut().zip(gi) {
                *a += prior[i] * b;
            }
        }
        Ok((r, grad))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOutput {
    pub params: EstimatorParams,
    pub trace: SolverTrace,
    /// Adversary prior of the last iteration.
    pub prior: Vec<f64>,
}

fn step(d: &EstimatorParams, grad: &[f64], eta: f64) -> Result<EstimatorParams> {
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient diverged; reduce the learning rate".into()));
    }
    let beta: Vec<f64> = d.beta().iter().zip(grad).map(|(b, g)| b - eta * g).collect();
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::NonFinite("coefficients diverged; reduce the learning rate".into()));
    }
    d.with_beta(beta)
}

fn descend<O, G>(d0: EstimatorParams, cfg: &SolverConfig, mut oracle: O, mut gradient: G) -> Result<SolverOutput>
where
    O: FnMut(&EstimatorParams, usize) -> Result<Vec<f64>>,
    G: FnMut(&EstimatorParams, usize, &[f64]) -> Result<(f64, Vec<f64>)>,
{
    cfg.validate()?;
    let mut d = d0;
    let mut trace = SolverTrace::default();
    let mut prior = Vec::new();
    for t in 1..=cfg.iterations {
        prior = oracle(&d, t)?;
        let (r, g) = gradient(&d, t, &prior)?;
        trace.log(
            cfg.trace_every,
            cfg.iterations,
            TraceRow {
                iteration: t,
                bayes_risk: r,
                lower: None,
                upper: None,
            },
        );
        d = step(&d, &g, cfg.eta)?;
    }
    Ok(SolverOutput {
        params: d,
        trace,
        prior,
    })
}

/// Gradient descent with an exact max-oracle on deterministic risks.
pub fn gdmax(d0: EstimatorParams, inst: &Instance, cfg: &SolverConfig, provider: &dyn RiskProvider) -> Result<SolverOutput> {
    let mut previous: Option<Vec<f64>> = None;
    descend(
        d0,
        cfg,
        |d, _| {
            let risks = provider.risks(d)?;
            if cfg.zeta > 0.0 {
                if let Some(prev) = &previous {
                    let current: f64 = prev.iter().zip(&risks).map(|(w, r)| w * r).sum();
                    let ceiling = risks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    if current >= ceiling - cfg.zeta {
                        return Ok(prev.clone());
                    }
                }
            }
            let w = inst.lfp(risks)?.weights;
            previous = Some(w.clone());
            Ok(w)
        },
        |d, _, prior| provider.bayes_gradient(d, prior),
    )
}

/// Stochastic max-oracle: returns a prior for estimator `d` at iteration `t`.
pub trait MaxOracle {
    fn select(&self, inst: &Instance, d: &EstimatorParams, t: usize) -> Result<Vec<f64>>;
}

/// Least-favorable prior of risks estimated with `batch` draws per point on
/// fresh streams each iteration.
pub struct LpMaxOracle {
    pub batch: BatchSize,
    pub rng: RngSpec,
}

impl MaxOracle for LpMaxOracle {
    fn select(&self, inst: &Instance, d: &EstimatorParams, t: usize) -> Result<Vec<f64>> {
        let risks = provider_for(inst, self.batch, self.rng.child(t as u64), stage::ORACLE)?.risks(d)?;
        Ok(inst.lfp(risks)?.weights)
    }
}

/// Exact risks for `BatchSize::Exact`, otherwise a fixed-sample provider.
pub fn provider_for<'a>(inst: &Instance<'a>, batch: BatchSize, rng: RngSpec, stage: u64) -> Result<Box<dyn RiskProvider + 'a>> {
    Ok(match batch {
        BatchSize::Exact => Box::new(ExactAffine::new(&inst.task, inst.grid)?),
        BatchSize::Draws(draws) => Box::new(SampledRisks {
            task: inst.task,
            grid: inst.grid,
            draws,
            rng,
            stage,
        }),
    })
}

/// Stochastic gradient descent with a pluggable max-oracle. The gradient at
/// iteration `t` uses `cfg.batch` draws per support point of the selected
/// prior, from streams independent of the oracle's.
pub fn sgdmax(
    d0: EstimatorParams,
    inst: &Instance,
    cfg: &SolverConfig,
    rng: &RngSpec,
    oracle: &dyn MaxOracle,
) -> Result<SolverOutput> {
    let exact = match cfg.batch {
        BatchSize::Exact => Some(ExactAffine::new(&inst.task, inst.grid)?),
        BatchSize::Draws(_) => None,
    };
    descend(
        d0,
        cfg,
        |d, t| oracle.select(inst, d, t),
        |d, t, prior| match (&exact, cfg.batch) {
            (Some(e), _) => e.bayes_gradient(d, prior),
            (None, BatchSize::Draws(draws)) => SampledRisks {
                task: inst.task,
                grid: inst.grid,
                draws,
                rng: rng.child(t as u64),
                stage: stage::GRADIENT,
            }
            .bayes_gradient(d, prior),
            (None, BatchSize::Exact) => unreachable!(),
        },
    )
}

/// SGDmax whose max step solves the LP on `cfg.oracle_batch`-draw risk
/// estimates, followed by a gradient on `cfg.batch` fresh draws.
pub fn sgdmax_convenient(d0: EstimatorParams, inst: &Instance, cfg: &SolverConfig, rng: &RngSpec) -> Result<SolverOutput> {
    let oracle = LpMaxOracle {
        batch: cfg.oracle_batch,
        rng: *rng,
    };
    sgdmax(d0, inst, cfg, rng, &oracle)
}

/// Exact Bayes rule for a prior, plus risks of any member.
pub trait BestResponse: Sync {
    fn respond(&self, prior: &[f64]) -> Result<EstimatorParams>;
    fn risks(&self, d: &EstimatorParams) -> Result<Vec<f64>>;
}

/// Built-in best response for affine rules: the 2x2 normal equations in the
/// prior moments of the mean and variance.
pub struct AffineBestResponse(pub ExactAffine);

impl AffineBestResponse {
    pub fn new(task: &Task, grid: &Grid) -> Result<Self> {
        Ok(Self(ExactAffine::new(task, grid)?))
    }
}

impl BestResponse for AffineBestResponse {
    fn respond(&self, prior: &[f64]) -> Result<EstimatorParams> {
        let (b0, b1) = self.0.bayes_rule(prior);
        Ok(EstimatorParams::affine(b0, b1))
    }

    fn risks(&self, d: &EstimatorParams) -> Result<Vec<f64>> {
        self.0.risks(d)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FictitiousPlayConfig {
    pub iterations: usize,
    /// Respond to the freshly updated prior instead of the previous one.
    pub use_latest_prior: bool,
    pub trace_every: usize,
}

impl Default for FictitiousPlayConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            use_latest_prior: false,
            trace_every: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FictitiousPlayOutput {
    pub mixture: MixtureEstimator,
    pub prior: PriorWeights,
    pub trace: SolverTrace,
    /// Smallest `upper - lower` seen.
    pub best_gap: f64,
}

/// Fictitious play between the LP adversary and an exact best response.
///
/// Iteration `t` records `lower = r(d_t, pi_(t-1))` (or `pi_t`) and
/// `upper = sup_pi r(mixture_(t-1), pi)`; the minimax value lies between.
pub fn fictitious_play(
    mix0: MixtureEstimator,
    prior0: PriorWeights,
    inst: &Instance,
    cfg: &FictitiousPlayConfig,
    br: &dyn BestResponse,
) -> Result<FictitiousPlayOutput> {
    if cfg.trace_every == 0 {
        return Err(Error::Config("trace_every must be at least 1".into()));
    }
    if prior0.tag() != inst.grid.tag() {
        return Err(Error::GridMismatch {
            expected: inst.grid.len(),
            found: prior0.tag().len,
        });
    }
    let mut mixture_risk = vec![0.0; inst.grid.len()];
    for (d, w) in mix0.members() {
        for (acc, r) in mixture_risk.iter_mut().zip(br.risks(d)?) {
            *acc += w * r;
        }
    }
    let mut mixture = mix0;
    let mut prior = prior0.into_weights();
    let mut trace = SolverTrace::default();
    let mut best_gap = f64::INFINITY;
    for t in 1..=cfg.iterations {
        let tf = t as f64;
        let response = inst.lfp(mixture_risk.clone())?;
        let upper = response.value;
        let previous = prior.clone();
        for (p, q) in prior.iter_mut().zip(&response.weights) {
            *p = ((tf - 1.0) * *p + q) / tf;
        }
        let against = if cfg.use_latest_prior { &prior } else { &previous };
        let d = br.respond(against)?;
        let risks = br.risks(&d)?;
        let lower: f64 = against.iter().zip(&risks).map(|(w, r)| w * r).sum();
        for (acc, r) in mixture_risk.iter_mut().zip(&risks) {
            *acc = ((tf - 1.0) * *acc + r) / tf;
        }
        if t == 1 {
            mixture = MixtureEstimator::point(d);
        } else {
            mixture.push_average(d, t);
        }
        best_gap = best_gap.min(upper - lower);
        trace.log(
            cfg.trace_every,
            cfg.iterations,
            TraceRow {
                iteration: t,
                bayes_risk: mixture_risk.iter().zip(&prior).map(|(r, w)| r * w).sum(),
                lower: Some(lower),
                upper: Some(upper),
            },
        );
    }
    let total: f64 = prior.iter().sum();
    prior.iter_mut().for_each(|p| *p /= total);
    Ok(FictitiousPlayOutput {
        mixture,
        prior: inst.prior(prior)?,
        trace,
        best_gap,
    })
}

/// Minimizes the convex function `beta -> sup_pi r(beta, pi)` over affine
/// rules by nested golden-section search. Intended for exact comparisons
/// where approximate solvers are not accurate enough.
pub fn affine_exact_minimax(inst: &Instance, tol: f64) -> Result<(EstimatorParams, f64)> {
    let exact = ExactAffine::new(&inst.task, inst.grid)?;
    let value = |b0: f64, b1: f64| -> Result<f64> { inst.max_bayes_risk(exact.risks_of(b0, b1)) };
    let inner = |b1: f64| -> Result<(f64, f64)> { golden(-1.0, 2.0, tol, |b0| value(b0, b1)) };
    let (b1, _) = golden(-1.0, 2.0, tol, |b1| Ok(inner(b1)?.1))?;
    let (b0, v) = inner(b1)?;
    Ok((EstimatorParams::affine(b0, b1), v))
}

fn golden<F: FnMut(f64) -> Result<f64>>(mut a: f64, mut b: f64, tol: f64, mut f: F) -> Result<(f64, f64)> {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc <= fd { (c, fc) } else { (d, fd) })
}
