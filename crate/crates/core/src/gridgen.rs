//! Grid construction: the structured generator for the mean problem and a
//! Metropolis-Hastings-Green sampler over multinomial laws.

use rand::Rng;
use rand_distr::{Distribution as _, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::{Distribution, Functional, Grid};
use crate::risk::{mc_risk_range, Estimator, Task};
use crate::rng::{combine, stage, RngSpec, StreamRng};

/// `Phi^{-1}(0.975)`.
pub const Z_975: f64 = 1.959_963_984_540_054;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PseudoComponent {
    NormalOnFunctional { functional: Functional, mean: f64, sd: f64 },
    /// Number of successes before `failures` failures, on the category count.
    NegBinomialOnK { success_prob: f64, failures: f64 },
}

impl PseudoComponent {
    /// Normal centered at the midpoint of `mean_interval` whose central 95%
    /// interval is `mass_interval`.
    pub fn normal(functional: Functional, mean_interval: (f64, f64), mass_interval: (f64, f64)) -> Result<Self> {
        let mean = 0.5 * (mean_interval.0 + mean_interval.1);
        let sd = 0.5 * (mass_interval.1 - mass_interval.0) / Z_975;
        if !(sd > 0.0 && sd.is_finite() && mean.is_finite()) {
            return Err(Error::Config("normal pseudo-prior needs a nondegenerate interval".into()));
        }
        Ok(Self::NormalOnFunctional { functional, mean, sd })
    }

    pub fn neg_binomial(success_prob: f64, failures: f64) -> Result<Self> {
        if !(success_prob > 0.0 && success_prob < 1.0 && failures > 0.0) {
            return Err(Error::Config("negative binomial needs p in (0, 1) and failures > 0".into()));
        }
        Ok(Self::NegBinomialOnK { success_prob, failures })
    }

    pub fn logdensity(&self, p: &Distribution) -> Result<f64> {
        match self {
            Self::NormalOnFunctional { functional, mean, sd } => {
                let z = (functional.eval(p)? - mean) / sd;
                Ok(-(sd * (2.0 * std::f64::consts::PI).sqrt()).ln() - 0.5 * z * z)
            }
            Self::NegBinomialOnK { success_prob, failures } => {
                let k = p.size() as f64;
                Ok(ln_gamma(k + failures) - ln_gamma(k + 1.0) - ln_gamma(*failures)
                    + k * success_prob.ln()
                    + failures * (1.0 - success_prob).ln())
            }
        }
    }
}

/// Weighted sum of log densities.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PseudoPrior {
    pub components: Vec<(PseudoComponent, f64)>,
}

impl PseudoPrior {
    pub fn flat() -> Self {
        Self::default()
    }
}

pub fn pseudo_prior_logdensity(tau: &PseudoPrior, p: &Distribution) -> Result<f64> {
    let mut total = 0.0;
    for (c, w) in &tau.components {
        if *w != 0.0 {
            total += w * c.logdensity(p)?;
        }
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    /// Steps per chain.
    pub iterations: usize,
    pub perturb: f64,
    pub birth: f64,
    pub death: f64,
    /// Dirichlet concentration of the perturb move.
    pub alpha: f64,
    /// Largest mass of a born category.
    pub birth_mass: f64,
    /// Replications of the per-state risk estimate.
    pub risk_replications: u64,
    pub chains: usize,
    /// Stop once this many new grid points have been collected.
    pub max_new: Option<usize>,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            perturb: 0.8,
            birth: 0.1,
            death: 0.1,
            alpha: 200.0,
            birth_mass: 0.1,
            risk_replications: 200,
            chains: 1,
            max_new: None,
            seed: 0,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        let mix = [self.perturb, self.birth, self.death];
        if mix.iter().any(|p| !(*p >= 0.0)) || (mix.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::Config("proposal probabilities must be non-negative and sum to 1".into()));
        }
        if !(self.birth_mass > 0.0 && self.birth_mass < 0.5) {
            return Err(Error::Config("birth_mass must lie in (0, 0.5)".into()));
        }
        if !(self.alpha > 0.0) || self.risk_replications == 0 || self.chains == 0 {
            return Err(Error::Config("alpha, risk_replications and chains must be positive".into()));
        }
        Ok(())
    }
}

/// A reversible proposal mechanism.
pub trait Kernel: Sync {
    type State: Clone + Send;

    /// Number of move types, for diagnostics.
    fn moves(&self) -> usize;

    /// Proposes a move from `x`: `(x', log q(x|x') - log q(x'|x), move)`,
    /// with the proposal ratio including any dimension-matching Jacobian.
    /// `None` is a proposal outside the support of the target.
    fn propose(&self, x: &Self::State, rng: &mut StreamRng) -> (Option<(Self::State, f64)>, usize);
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub proposed: Vec<u64>,
    pub accepted: Vec<u64>,
}

impl ChainDiagnostics {
    fn new(moves: usize) -> Self {
        Self {
            proposed: vec![0; moves],
            accepted: vec![0; moves],
        }
    }

    pub fn acceptance_rates(&self) -> Vec<f64> {
        self.proposed
            .iter()
            .zip(&self.accepted)
            .map(|(p, a)| if *p == 0 { 0.0 } else { *a as f64 / *p as f64 })
            .collect()
    }

    pub fn total_accepted(&self) -> u64 {
        self.accepted.iter().sum()
    }

    fn merge(&mut self, other: &Self) {
        for (a, b) in self.proposed.iter_mut().zip(&other.proposed) {
            *a += b;
        }
        for (a, b) in self.accepted.iter_mut().zip(&other.accepted) {
            *a += b;
        }
    }
}

/// Runs `steps` Metropolis-Hastings-Green steps from `x0`, calling
/// `visit(state, iteration)` after every step. `visit` returning false stops
/// the chain.
pub fn run_chain<K, F, V>(
    kernel: &K,
    mut log_target: F,
    x0: K::State,
    steps: usize,
    rng: &mut StreamRng,
    mut visit: V,
) -> Result<ChainDiagnostics>
where
    K: Kernel,
    F: FnMut(&K::State) -> Result<f64>,
    V: FnMut(&K::State, usize) -> bool,
{
    let mut diag = ChainDiagnostics::new(kernel.moves());
    let mut x = x0;
    let mut lx = log_target(&x)?;
    if !lx.is_finite() {
        return Err(Error::NonFiniteTarget("starting state has zero or non-finite target density".into()));
    }
    for t in 0..steps {
        let (proposal, kind) = kernel.propose(&x, rng);
        diag.proposed[kind] += 1;
        let u: f64 = rng.random();
        if let Some((y, log_q)) = proposal {
            let ly = log_target(&y)?;
            if ly.is_nan() || ly == f64::INFINITY {
                return Err(Error::NonFiniteTarget(format!("target density {ly} at step {t}")));
            }
            if ly > f64::NEG_INFINITY && u.ln() < ly - lx + log_q {
                x = y;
                lx = ly;
                diag.accepted[kind] += 1;
            }
        }
        if !visit(&x, t) {
            break;
        }
    }
    Ok(diag)
}

/// Kernel on `{0, .., k-1}` with an explicit proposal matrix.
pub struct FiniteKernel {
    pub proposal: Vec<Vec<f64>>,
}

impl Kernel for FiniteKernel {
    type State = usize;

    fn moves(&self) -> usize {
        1
    }

    fn propose(&self, x: &usize, rng: &mut StreamRng) -> (Option<(usize, f64)>, usize) {
        let row = &self.proposal[*x];
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut y = row.len() - 1;
        for (j, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                y = j;
                break;
            }
        }
        let ratio = (self.proposal[y][*x] / row[y]).ln();
        (Some((y, ratio)), 0)
    }
}

/// Perturb / birth / death moves on category probability vectors.
pub struct MultinomialKernel {
    pub perturb: f64,
    pub birth: f64,
    pub alpha: f64,
    pub birth_mass: f64,
}

/// Smallest category mass a proposal may create.
const MIN_MASS: f64 = 1e-9;

pub const PERTURB: usize = 0;
pub const BIRTH: usize = 1;
pub const DEATH: usize = 2;

impl MultinomialKernel {
    pub fn from_config(cfg: &McmcConfig) -> Self {
        Self {
            perturb: cfg.perturb,
            birth: cfg.birth,
            alpha: cfg.alpha,
            birth_mass: cfg.birth_mass,
        }
    }

    fn death(&self) -> f64 {
        1.0 - self.perturb - self.birth
    }

    fn log_dirichlet(&self, x: &[f64], center: &[f64]) -> f64 {
        let mut total = ln_gamma(self.alpha);
        for (xi, ci) in x.iter().zip(center) {
            let a = self.alpha * ci;
            total += -ln_gamma(a) + (a - 1.0) * xi.ln();
        }
        total
    }

    /// Log of the birth move's proposal ratio for going from `k` to `k + 1`
    /// categories with new mass `w`, excluding the move-selection terms.
    fn birth_jacobian(&self, k: usize, w: f64) -> f64 {
        (k as f64 - 1.0) * (1.0 - w).ln() + self.birth_mass.ln()
    }
}

impl Kernel for MultinomialKernel {
    type State = Vec<f64>;

    fn moves(&self) -> usize {
        3
    }

    fn propose(&self, p: &Vec<f64>, rng: &mut StreamRng) -> (Option<(Vec<f64>, f64)>, usize) {
        let k = p.len();
        let u: f64 = rng.random();
        if u < self.perturb {
            let mut y = Vec::with_capacity(k);
            for &pi in p {
                let g = Gamma::new(self.alpha * pi, 1.0).expect("positive shape");
                y.push(g.sample(rng));
            }
            let total: f64 = y.iter().sum();
            y.iter_mut().for_each(|v| *v /= total);
            if y.iter().any(|v| !(*v >= MIN_MASS)) {
                return (None, PERTURB);
            }
            let ratio = self.log_dirichlet(p, &y) - self.log_dirichlet(&y, p);
            (Some((y, ratio)), PERTURB)
        } else if u < self.perturb + self.birth {
            let w = self.birth_mass * rng.random::<f64>();
            let slot = rng.random_range(0..=k);
            let mut y: Vec<f64> = p.iter().map(|v| v * (1.0 - w)).collect();
            y.insert(slot, w);
            if y.iter().any(|v| !(*v >= MIN_MASS)) {
                return (None, BIRTH);
            }
            // Slot choice 1/(k+1) cancels the reverse death's 1/(k+1).
            let ratio = (self.death() / self.birth).ln() + self.birth_jacobian(k, w);
            (Some((y, ratio)), BIRTH)
        } else {
            if k == 1 {
                return (None, DEATH);
            }
            let j = rng.random_range(0..k);
            let w = p[j];
            if w > self.birth_mass {
                return (None, DEATH);
            }
            let y: Vec<f64> = p.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, v)| v / (1.0 - w)).collect();
            let ratio = (self.birth / self.death()).ln() - self.birth_jacobian(k - 1, w);
            (Some((y, ratio)), DEATH)
        }
    }
}

/// Risk of a fixed estimator at a state; deterministic in the state.
pub trait StateRisk: Sync {
    fn risk(&self, p: &Distribution) -> Result<f64>;
}

/// Monte Carlo risk with a seed derived from the state's bits.
pub struct McStateRisk<'a> {
    pub estimator: &'a dyn Estimator,
    pub task: Task,
    pub replications: u64,
    pub seed: u64,
}

impl StateRisk for McStateRisk<'_> {
    fn risk(&self, p: &Distribution) -> Result<f64> {
        let rng = RngSpec::new(combine(self.seed, p.bits_hash()));
        mc_risk_range(self.estimator, &self.task, p, &rng, stage::MCMC, 0, 0..self.replications)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct McmcOutput {
    pub grid: Grid,
    pub added: usize,
    pub diagnostics: ChainDiagnostics,
    /// Every proposal of every chain was rejected; the grid is unchanged.
    pub all_rejected: bool,
}

impl McmcOutput {
    pub fn diagnostics_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Report<'a> {
            proposed: &'a [u64],
            accepted: &'a [u64],
            acceptance_rate: Vec<f64>,
            moves: [&'static str; 3],
            added: usize,
            all_rejected: bool,
        }
        Ok(serde_json::to_string_pretty(&Report {
            proposed: &self.diagnostics.proposed,
            accepted: &self.diagnostics.accepted,
            acceptance_rate: self.diagnostics.acceptance_rates(),
            moves: ["perturb", "birth", "death"],
            added: self.added,
            all_rejected: self.all_rejected,
        })?)
    }
}

/// Refines `prev` with the unique states visited by chains targeting
/// `P -> R(d, P) tau(P)`, started at `start`.
pub fn mcmc_refine(
    prev: &Grid,
    start: &Distribution,
    risk: &dyn StateRisk,
    tau: &PseudoPrior,
    cfg: &McmcConfig,
    round: u32,
) -> Result<McmcOutput> {
    cfg.validate()?;
    let start = start
        .as_multinomial()
        .ok_or(Error::Unsupported("the sampler moves over multinomial laws".into()))?
        .probs()
        .to_vec();
    let kernel = MultinomialKernel::from_config(cfg);
    let master = RngSpec::new(cfg.seed);
    let limit = cfg.max_new.unwrap_or(usize::MAX);
    let runs: Vec<(Vec<Distribution>, ChainDiagnostics)> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = master.stream(stage::MCMC, c as u64, 0);
            let mut seen = Grid::new();
            let mut failure = None;
            let log_target = |probs: &Vec<f64>| -> Result<f64> {
                let p = Distribution::multinomial(probs.clone())?;
                let r = risk.risk(&p)?;
                if !(r.is_finite() && r >= 0.0) {
                    return Err(Error::NonFiniteTarget(format!("risk {r}")));
                }
                Ok(r.ln() + pseudo_prior_logdensity(tau, &p)?)
            };
            let diag = run_chain(&kernel, log_target, start.clone(), cfg.iterations, &mut rng, |x, _| {
                match Distribution::multinomial(x.clone()) {
                    Ok(p) => {
                        if !prev.contains(&p) {
                            seen.push(p, round);
                        }
                    }
                    Err(e) => failure = Some(e),
                }
                failure.is_none() && seen.len() < limit
            })?;
            if let Some(e) = failure {
                return Err(e);
            }
            Ok((seen.points().to_vec(), diag))
        })
        .collect::<Result<_>>()?;
    let mut grid = prev.clone();
    let mut diagnostics = ChainDiagnostics::new(kernel.moves());
    let mut added = 0;
    for (points, diag) in &runs {
        diagnostics.merge(diag);
        for p in points {
            if added < limit && grid.push(p.clone(), round) {
                added += 1;
            }
        }
    }
    let all_rejected = diagnostics.total_accepted() == 0;
    if all_rejected {
        log::warn!("every MCMC proposal was rejected; grid unchanged");
        grid = prev.clone();
        added = 0;
    }
    Ok(McmcOutput {
        grid,
        added,
        diagnostics,
        all_rejected,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeanGridConfig {
    pub bernoulli: usize,
    pub reweightings: usize,
    pub fresh_laws: usize,
    pub fresh_support: usize,
}

impl Default for MeanGridConfig {
    fn default() -> Self {
        Self {
            bernoulli: 2000,
            reweightings: 500,
            fresh_laws: 1000,
            fresh_support: 10,
        }
    }
}

fn dirichlet_weights(k: usize, rng: &mut StreamRng) -> Vec<f64> {
    let e: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Grid for the mean problem on `[0, 1]`. Round 1 holds random Bernoulli
/// laws and the point masses at 0 and 1; later rounds add random laws on the
/// existing support locations and on those plus fresh uniform locations,
/// with flat Dirichlet weights.
pub fn structured_mean_grid(round: u32, prev: &Grid, cfg: &MeanGridConfig, rng: &RngSpec) -> Result<Grid> {
    if round == 0 {
        return Err(Error::Config("rounds are numbered from 1".into()));
    }
    let mut r = rng.stream(stage::GRID, round as u64, 0);
    let mut grid = prev.clone();
    if round == 1 {
        for _ in 0..cfg.bernoulli {
            grid.push(Distribution::bernoulli(r.random::<f64>())?, round);
        }
        grid.push(Distribution::point_mass(0.0)?, round);
        grid.push(Distribution::point_mass(1.0)?, round);
        return Ok(grid);
    }
    let mut support = prev.support_locations();
    if support.is_empty() {
        support = vec![0.0, 1.0];
    }
    for _ in 0..cfg.reweightings {
        let w = dirichlet_weights(support.len(), &mut r);
        grid.push(Distribution::point_support(support.clone(), w)?, round);
    }
    let mut wider = support;
    for _ in 0..cfg.fresh_support {
        wider.push(r.random::<f64>());
    }
    wider.sort_by(f64::total_cmp);
    wider.dedup();
    for _ in 0..cfg.fresh_laws {
        let w = dirichlet_weights(wider.len(), &mut r);
        grid.push(Distribution::point_support(wider.clone(), w)?, round);
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_component_at_its_mode() {
        let c = PseudoComponent::NormalOnFunctional {
            functional: Functional::Mean,
            mean: 0.25,
            sd: 0.5,
        };
        let tau = PseudoPrior {
            components: vec![(c, 1.0)],
        };
        let p = Distribution::point_support(vec![0.0, 0.5], vec![0.5, 0.5]).unwrap();
        let expected = (1.0 / (0.5 * (2.0 * std::f64::consts::PI).sqrt())).ln();
        assert!((pseudo_prior_logdensity(&tau, &p).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_weights_give_zero() {
        let tau = PseudoPrior {
            components: vec![(PseudoComponent::neg_binomial(0.995, 2.0).unwrap(), 0.0)],
        };
        assert_eq!(pseudo_prior_logdensity(&tau, &Distribution::bernoulli(0.2).unwrap()).unwrap(), 0.0);
        assert_eq!(pseudo_prior_logdensity(&PseudoPrior::flat(), &Distribution::bernoulli(0.2).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn strong_prior_sd_convention() {
        let c = PseudoComponent::normal(Functional::ShannonEntropy, (45.0, 50.0), (40.0, 55.0)).unwrap();
        let PseudoComponent::NormalOnFunctional { mean, sd, .. } = c else { unreachable!() };
        assert_eq!(mean, 47.5);
        assert!((sd - 7.5 / 1.95996).abs() < 1e-4);
        let c = PseudoComponent::NormalOnFunctional {
            functional: Functional::Mean,
            mean: 47.5,
            sd,
        };
        let p = Distribution::point_support_on(vec![47.5], vec![1.0], crate::model::Interval::new(0.0, 100.0).unwrap()).unwrap();
        let tau = PseudoPrior {
            components: vec![(c, 30.0)],
        };
        let z = -(sd * (2.0 * std::f64::consts::PI).sqrt()).ln();
        assert!((pseudo_prior_logdensity(&tau, &p).unwrap() - 30.0 * z).abs() < 1e-12);
    }

    #[test]
    fn neg_binomial_matches_pmf() {
        let c = PseudoComponent::neg_binomial(0.995, 2.0).unwrap();
        let p = Distribution::multinomial(vec![0.25; 4]).unwrap();
        // C(k + r - 1, k) p^k (1 - p)^r with k = 4, r = 2.
        let pmf = 5.0 * 0.995f64.powi(4) * 0.005f64.powi(2);
        assert!((c.logdensity(&p).unwrap() - pmf.ln()).abs() < 1e-12);
    }

    #[test]
    fn variant_mismatch_is_reported() {
        let c = PseudoComponent::NormalOnFunctional {
            functional: Functional::Mean,
            mean: 0.0,
            sd: 1.0,
        };
        let err = c.logdensity(&Distribution::multinomial(vec![0.5, 0.5]).unwrap()).unwrap_err();
        assert!(matches!(err, Error::VariantMismatch { .. }));
    }

    #[test]
    fn mean_grid_counts_and_determinism() {
        let rng = RngSpec::new(11);
        let cfg = MeanGridConfig::default();
        let g1 = structured_mean_grid(1, &Grid::new(), &cfg, &rng).unwrap();
        assert_eq!(g1.len(), 2002);
        let g2 = structured_mean_grid(2, &g1, &cfg, &rng).unwrap();
        assert!(g2.len() <= 2002 + 1500 && g2.len() > 2002);
        assert!(g1.points().iter().all(|p| g2.contains(p)));
        assert_eq!(structured_mean_grid(2, &g1, &cfg, &rng).unwrap().tag(), g2.tag());
        assert!(structured_mean_grid(0, &g1, &cfg, &rng).is_err());
    }

    struct Constant;

    impl StateRisk for Constant {
        fn risk(&self, _: &Distribution) -> Result<f64> {
            Ok(1.0)
        }
    }

    #[test]
    fn refinement_is_a_bounded_superset() {
        let prev = Grid::from_points([Distribution::multinomial(vec![0.5, 0.5]).unwrap()], 1);
        let cfg = McmcConfig {
            iterations: 300,
            seed: 5,
            ..McmcConfig::default()
        };
        let out = mcmc_refine(&prev, &Distribution::multinomial(vec![0.2, 0.3, 0.5]).unwrap(), &Constant, &PseudoPrior::flat(), &cfg, 2).unwrap();
        assert!(out.grid.len() >= prev.len() && out.grid.len() <= prev.len() + 300);
        assert!(out.grid.contains(prev.get(0)));
        assert!(out.added > 0 && !out.all_rejected);
        let json: serde_json::Value = serde_json::from_str(&out.diagnostics_json().unwrap()).unwrap();
        assert_eq!(json["proposed"].as_array().unwrap().len(), 3);
        let capped = mcmc_refine(
            &prev,
            &Distribution::multinomial(vec![0.2, 0.3, 0.5]).unwrap(),
            &Constant,
            &PseudoPrior::flat(),
            &McmcConfig {
                max_new: Some(7),
                ..cfg
            },
            2,
        )
        .unwrap();
        assert_eq!(capped.added, 7);
    }

    struct Zero;

    impl StateRisk for Zero {
        fn risk(&self, _: &Distribution) -> Result<f64> {
            Ok(0.0)
        }
    }

    #[test]
    fn zero_risk_start_is_rejected() {
        let err = mcmc_refine(
            &Grid::new(),
            &Distribution::multinomial(vec![0.5, 0.5]).unwrap(),
            &Zero,
            &PseudoPrior::flat(),
            &McmcConfig::default(),
            1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFiniteTarget(_)));
    }

    #[test]
    fn perturb_only_metropolis_ratio() {
        // Two states, symmetric proposal: acceptance is min(1, target ratio).
        let kernel = FiniteKernel {
            proposal: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        };
        let logs = [0.0f64, (0.25f64).ln()];
        let mut rng = RngSpec::new(3).stream(stage::MCMC, 0, 0);
        let diag = run_chain(&kernel, |x| Ok(logs[*x]), 0usize, 20_000, &mut rng, |_, _| true).unwrap();
        // Moves 0 -> 1 accepted w.p. 1/4, 1 -> 0 always: long-run rate 2/5.
        let rate = diag.acceptance_rates()[0];
        assert!((rate - 0.4).abs() < 0.02, "{rate}");
    }

    #[test]
    fn birth_death_keeps_normalized_states() {
        let kernel = MultinomialKernel::from_config(&McmcConfig::default());
        let mut rng = RngSpec::new(9).stream(stage::MCMC, 0, 0);
        let mut sizes = Vec::new();
        run_chain(&kernel, |_| Ok(0.0), vec![0.5, 0.5], 2000, &mut rng, |x, _| {
            assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(x.iter().all(|v| *v > 0.0));
            sizes.push(x.len());
            true
        })
        .unwrap();
        assert!(sizes.iter().any(|k| *k > 2));
    }
}
