//! Risks `R(d, P)`, Bayes risks and estimates of the maximal Bayes risk.

use std::io::Write;
use std::ops::Range;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{solve_least_favorable, LpProblem};
use crate::model::{constraint_matrix, Distribution, Functional, Grid, GridTag, MomentConstraint, Observation, PriorWeights};
use crate::rng::{stage, RngSpec, StreamRng};

/// The estimation problem: how data are drawn from `P` and what is estimated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "problem", rename_all = "kebab-case")]
pub enum Task {
    /// `n` iid draws from a point law; estimate its mean.
    Mean { n: usize },
    /// Counts of `n` multinomial draws; estimate Shannon entropy.
    Entropy { n: usize },
    /// Counts of `n` multinomial draws; estimate how many unseen categories
    /// will appear in `m` further draws, given the full data.
    NewCategories { n: usize, m: usize },
}

impl Task {
    pub fn n(&self) -> usize {
        match *self {
            Task::Mean { n } | Task::Entropy { n } | Task::NewCategories { n, .. } => n,
        }
    }

    /// The functional used for constraints and pseudo-priors. For new
    /// categories this is the unconditional expectation of the target.
    pub fn functional(&self) -> Functional {
        match *self {
            Task::Mean { .. } => Functional::Mean,
            Task::Entropy { .. } => Functional::ShannonEntropy,
            Task::NewCategories { n, m } => Functional::ExpectedNewCategories { n, m },
        }
    }

    fn check(&self, p: &Distribution) -> Result<()> {
        let ok = match self {
            Task::Mean { .. } => p.as_point_law().is_some(),
            Task::Entropy { .. } | Task::NewCategories { .. } => p.as_multinomial().is_some(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::VariantMismatch {
                functional: self.functional().to_string(),
                kind: p.kind(),
            })
        }
    }

    /// Data generator for `p`, with per-point quantities precomputed.
    pub fn sampler<'a>(&self, p: &'a Distribution) -> Result<Sampler<'a>> {
        self.check(p)?;
        let n = self.n();
        Ok(match *self {
            Task::Mean { .. } => {
                let law = p.as_point_law().unwrap();
                Sampler::Mean { law, n, target: law.mean() }
            }
            Task::Entropy { .. } => {
                let law = p.as_multinomial().unwrap();
                let target = Functional::ShannonEntropy.eval(p)?;
                Sampler::Counts {
                    law,
                    n,
                    target: CountTarget::Fixed(target),
                }
            }
            Task::NewCategories { m, .. } => {
                let law = p.as_multinomial().unwrap();
                let weights = law.probs().iter().map(|q| 1.0 - (1.0 - q).powi(m as i32)).collect();
                Sampler::Counts {
                    law,
                    n,
                    target: CountTarget::Unseen(weights),
                }
            }
        })
    }
}

pub enum CountTarget {
    Fixed(f64),
    /// `sum_k 1{X_k = 0} w_k`.
    Unseen(Vec<f64>),
}

/// Draws `(observation, target)` pairs from one distribution.
pub enum Sampler<'a> {
    Mean {
        law: &'a crate::model::PointLaw,
        n: usize,
        target: f64,
    },
    Counts {
        law: &'a crate::model::Multinomial,
        n: usize,
        target: CountTarget,
    },
}

impl Sampler<'_> {
    pub fn draw(&self, rng: &mut StreamRng) -> (Observation, f64) {
        match self {
            Sampler::Mean { law, n, target } => {
                let values = (0..*n).map(|_| law.support()[law.locate(rng.random())]).collect();
                (Observation::real(values), *target)
            }
            Sampler::Counts { law, n, target } => {
                let (counts, t) = draw_counts(law, *n, target, rng);
                (Observation::counts(counts), t)
            }
        }
    }
}

/// Raw category counts (including zeros) and the per-draw target.
pub fn draw_counts(
    law: &crate::model::Multinomial,
    n: usize,
    target: &CountTarget,
    rng: &mut StreamRng,
) -> (Vec<u32>, f64) {
    let mut counts = vec![0u32; law.categories()];
    for _ in 0..n {
        counts[law.locate(rng.random())] += 1;
    }
    let t = match target {
        CountTarget::Fixed(t) => *t,
        CountTarget::Unseen(w) => counts.iter().zip(w).filter(|(c, _)| **c == 0).map(|(_, w)| w).sum(),
    };
    (counts, t)
}

/// An estimator `d` mapping observations to estimates.
pub trait Estimator: Sync {
    fn estimate(&self, x: &Observation) -> Result<f64>;

    /// Closed-form risk, when one is available.
    fn exact_risk(&self, _task: &Task, _p: &Distribution) -> Option<Result<f64>> {
        None
    }

    /// Randomized estimators return their members; the risk is the weighted
    /// average of member risks.
    fn members(&self) -> Option<Vec<(&dyn Estimator, f64)>> {
        None
    }
}

/// `(beta0 + (beta1 - 1) mu)^2 + beta1^2 Var / n`.
pub fn exact_risk_affine(beta0: f64, beta1: f64, p: &Distribution, n: usize) -> Result<f64> {
    let law = p.as_point_law().ok_or(Error::VariantMismatch {
        functional: "affine risk".into(),
        kind: p.kind(),
    })?;
    Ok(affine_risk_from_moments(beta0, beta1, law.mean(), law.variance(), n))
}

#[inline]
pub fn affine_risk_from_moments(beta0: f64, beta1: f64, mean: f64, var: f64, n: usize) -> f64 {
    let bias = beta0 + (beta1 - 1.0) * mean;
    bias * bias + beta1 * beta1 * var / n as f64
}

/// Monte Carlo risk over the replications in `reps` of stream
/// `(stage, point, rep)`.
pub fn mc_risk_range(
    d: &dyn Estimator,
    task: &Task,
    p: &Distribution,
    rng: &RngSpec,
    stage: u64,
    point: u64,
    reps: Range<u64>,
) -> Result<f64> {
    Ok(mc_loss_moments(d, task, p, rng, stage, point, reps)?.0)
}

/// Mean and sample variance of the squared-error losses behind
/// [`mc_risk_range`].
pub fn mc_loss_moments(
    d: &dyn Estimator,
    task: &Task,
    p: &Distribution,
    rng: &RngSpec,
    stage: u64,
    point: u64,
    reps: Range<u64>,
) -> Result<(f64, f64)> {
    if reps.is_empty() {
        return Err(Error::InvalidProblem("at least one replication is required".into()));
    }
    let count = (reps.end - reps.start) as f64;
    let sampler = task.sampler(p)?;
    let members = d.members();
    let mut total = 0.0;
    let mut total_sq = 0.0;
    for rep in reps {
        let (x, target) = sampler.draw(&mut rng.stream(stage, point, rep));
        let loss = match &members {
            None => sq(d.estimate(&x)? - target),
            Some(ms) => {
                let mut acc = 0.0;
                for (member, w) in ms {
                    acc += w * sq(member.estimate(&x)? - target);
                }
                acc
            }
        };
        total += loss;
        total_sq += loss * loss;
    }
    let risk = total / count;
    if !risk.is_finite() {
        return Err(Error::NonFinite(format!("Monte Carlo risk at point {point}")));
    }
    let var = if count > 1.0 {
        ((total_sq - count * risk * risk) / (count - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok((risk, var))
}

#[inline]
fn sq(x: f64) -> f64 {
    x * x
}

/// Unbiased Monte Carlo estimate of `E_P[(d(X) - target)^2]`.
pub fn mc_risk(d: &dyn Estimator, task: &Task, p: &Distribution, reps: u64, rng: &RngSpec) -> Result<f64> {
    mc_risk_range(d, task, p, rng, stage::RISK_A, 0, 0..reps)
}

/// How risks are computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RiskMode {
    Exact,
    MonteCarlo { replications: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Exact,
    MonteCarlo { replications: u64, seed: u64 },
}

/// Risks of one estimator at every point of a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskTable {
    pub tag: GridTag,
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

impl RiskTable {
    pub fn new(tag: GridTag, values: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if values.len() != tag.len {
            return Err(Error::GridMismatch {
                expected: tag.len,
                found: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::NonFinite(format!("risk value {v}")));
        }
        Ok(Self { tag, values, provenance })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "risk", "replications", "seed"])?;
        let (reps, seed) = match self.provenance {
            Provenance::Exact => (String::new(), String::new()),
            Provenance::MonteCarlo { replications, seed } => (replications.to_string(), seed.to_string()),
        };
        for (i, v) in self.values.iter().enumerate() {
            w.write_record([i.to_string(), v.to_string(), reps.clone(), seed.clone()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Risk table over `grid`. Monte Carlo risks at point `i` use streams
/// `(stage, i, 0..replications)`; points are evaluated in parallel.
pub fn risk_table(
    d: &dyn Estimator,
    task: &Task,
    grid: &Grid,
    mode: RiskMode,
    rng: &RngSpec,
    stage: u64,
) -> Result<RiskTable> {
    let points: Vec<usize> = (0..grid.len()).collect();
    risk_table_on(d, task, grid, &points, mode, rng, stage).and_then(|values| {
        let provenance = match mode {
            RiskMode::Exact => Provenance::Exact,
            RiskMode::MonteCarlo { replications } => Provenance::MonteCarlo {
                replications,
                seed: rng.master,
            },
        };
        RiskTable::new(grid.tag(), values, provenance)
    })
}

/// Risks at the listed grid indices only.
pub fn risk_table_on(
    d: &dyn Estimator,
    task: &Task,
    grid: &Grid,
    points: &[usize],
    mode: RiskMode,
    rng: &RngSpec,
    stage: u64,
) -> Result<Vec<f64>> {
    points
        .par_iter()
        .map(|&i| point_risk(d, task, grid.get(i), mode, rng, stage, i as u64))
        .collect()
}

pub fn point_risk(
    d: &dyn Estimator,
    task: &Task,
    p: &Distribution,
    mode: RiskMode,
    rng: &RngSpec,
    stage: u64,
    point: u64,
) -> Result<f64> {
    match mode {
        RiskMode::Exact => exact_risk(d, task, p),
        RiskMode::MonteCarlo { replications } => mc_risk_range(d, task, p, rng, stage, point, 0..replications),
    }
}

pub fn exact_risk(d: &dyn Estimator, task: &Task, p: &Distribution) -> Result<f64> {
    d.exact_risk(task, p)
        .unwrap_or_else(|| Err(Error::Unsupported("this estimator has no closed-form risk".into())))
}

/// `sum_l pi_l R_l`.
pub fn bayes_risk(table: &RiskTable, prior: &PriorWeights) -> Result<f64> {
    if table.tag != prior.tag() {
        return Err(Error::GridMismatch {
            expected: table.tag.len,
            found: prior.tag().len,
        });
    }
    Ok(table.values.iter().zip(prior.weights()).map(|(r, w)| r * w).sum())
}

/// Result of estimating `sup_{pi in Gamma} r(d, pi)` on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxBayesRisk {
    /// Bayes risk of the selected prior under the evaluation risks.
    pub value: f64,
    /// Maximal Bayes risk under the selection risks (the LP value).
    pub selection_value: f64,
    pub prior: PriorWeights,
}

/// Least-favorable prior for a fixed risk vector.
pub fn least_favorable(risks: &RiskTable, constraints: &[MomentConstraint], grid: &Grid) -> Result<(PriorWeights, f64)> {
    if risks.tag != grid.tag() {
        return Err(Error::GridMismatch {
            expected: grid.len(),
            found: risks.tag.len,
        });
    }
    let (rows, bounds) = constraint_matrix(constraints, grid)?;
    let sol = solve_least_favorable(&LpProblem::new(risks.values.clone(), rows.clone(), bounds.clone())?)?;
    let prior = PriorWeights::from_rows(grid.tag(), sol.weights, &rows, &bounds)?;
    Ok((prior, sol.value))
}

/// Maximal Bayes risk with the prior selected from stage `select` risks and
/// evaluated on stage `evaluate` risks.
pub fn max_bayes_risk_with_stages(
    d: &dyn Estimator,
    task: &Task,
    grid: &Grid,
    constraints: &[MomentConstraint],
    mode: RiskMode,
    rng: &RngSpec,
    select: u64,
    evaluate: u64,
) -> Result<MaxBayesRisk> {
    let first = risk_table(d, task, grid, mode, rng, select)?;
    let (prior, selection_value) = least_favorable(&first, constraints, grid)?;
    let value = if select == evaluate || mode == RiskMode::Exact {
        selection_value
    } else {
        // Only points the prior charges matter for the second stage.
        let support: Vec<usize> = prior.support().collect();
        let second = risk_table_on(d, task, grid, &support, mode, rng, evaluate)?;
        support.iter().zip(&second).map(|(&i, r)| prior.weights()[i] * r).sum()
    };
    Ok(MaxBayesRisk {
        value,
        selection_value,
        prior,
    })
}

/// Debiased estimate: the least-favorable prior is chosen on one set of
/// Monte Carlo risks and its Bayes risk is evaluated on an independent set.
pub fn two_stage_max_bayes_risk(
    d: &dyn Estimator,
    task: &Task,
    grid: &Grid,
    constraints: &[MomentConstraint],
    mode: RiskMode,
    rng: &RngSpec,
) -> Result<MaxBayesRisk> {
    max_bayes_risk_with_stages(d, task, grid, constraints, mode, rng, stage::RISK_A, stage::RISK_B)
}

/// Two-stage estimate together with the Monte Carlo standard error of its
/// evaluation stage, `sqrt(sum_l pi_l^2 s_l^2 / replications)`.
pub fn two_stage_with_se(
    d: &dyn Estimator,
    task: &Task,
    grid: &Grid,
    constraints: &[MomentConstraint],
    replications: u64,
    rng: &RngSpec,
) -> Result<(MaxBayesRisk, f64)> {
    let mode = RiskMode::MonteCarlo { replications };
    let first = risk_table(d, task, grid, mode, rng, stage::RISK_A)?;
    let (prior, selection_value) = least_favorable(&first, constraints, grid)?;
    let support: Vec<usize> = prior.support().collect();
    let moments: Vec<(f64, f64)> = support
        .par_iter()
        .map(|&i| mc_loss_moments(d, task, grid.get(i), rng, stage::RISK_B, i as u64, 0..replications))
        .collect::<Result<_>>()?;
    let mut value = 0.0;
    let mut var = 0.0;
    for (&i, (m, v)) in support.iter().zip(&moments) {
        let w = prior.weights()[i];
        value += w * m;
        var += w * w * v / replications as f64;
    }
    Ok((
        MaxBayesRisk {
            value,
            selection_value,
            prior,
        },
        var.sqrt(),
    ))
}

/// Plug-in estimate that reuses the selection risks; biased upward.
pub fn single_stage_max_bayes_risk(
    d: &dyn Estimator,
    task: &Task,
    grid: &Grid,
    constraints: &[MomentConstraint],
    mode: RiskMode,
    rng: &RngSpec,
) -> Result<MaxBayesRisk> {
    max_bayes_risk_with_stages(d, task, grid, constraints, mode, rng, stage::RISK_A, stage::RISK_A)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Constant(f64);

    impl Estimator for Constant {
        fn estimate(&self, _: &Observation) -> Result<f64> {
            Ok(self.0)
        }
    }

    struct SampleMean;

    impl Estimator for SampleMean {
        fn estimate(&self, x: &Observation) -> Result<f64> {
            match x {
                Observation::RealSample { values } => Ok(values.iter().sum::<f64>() / values.len() as f64),
                _ => Err(Error::RepresentationMismatch("counts".into())),
            }
        }

        fn exact_risk(&self, task: &Task, p: &Distribution) -> Option<Result<f64>> {
            Some(exact_risk_affine(0.0, 1.0, p, task.n()))
        }
    }

    fn bern(p: f64) -> Distribution {
        Distribution::bernoulli(p).unwrap()
    }

    #[test]
    fn affine_examples() {
        assert!((exact_risk_affine(0.0, 1.0, &bern(0.5), 10).unwrap() - 0.025).abs() < 1e-15);
        let p = Distribution::point_support(vec![0.1, 0.7], vec![2.0 / 3.0, 1.0 / 3.0]).unwrap();
        assert!(exact_risk_affine(0.3, 0.0, &p, 5).unwrap() < 1e-30);
        // Minimax affine coefficients at Bern(0.3), evaluated independently:
        // (0.072076 - 0.240253 * 0.3)^2 + 0.759747^2 * 0.021 = 0.0121215
        let r = exact_risk_affine(0.072076, 0.759747, &bern(0.3), 10).unwrap();
        assert!((r - 0.0121215).abs() < 1e-6, "{r}");
        assert!(exact_risk_affine(0.0, 1.0, &Distribution::multinomial(vec![1.0]).unwrap(), 1).is_err());
    }

    #[test]
    fn constant_truth_has_zero_mc_risk() {
        let p = bern(0.3);
        let r = mc_risk(&Constant(0.3), &Task::Mean { n: 10 }, &p, 100, &RngSpec::new(1)).unwrap();
        assert!(r < 1e-30);
    }

    #[test]
    fn sample_mean_mc_risk_matches_closed_form() {
        let reps = 200_000;
        let task = Task::Mean { n: 10 };
        let r = mc_risk(&SampleMean, &task, &bern(0.5), reps, &RngSpec::new(5)).unwrap();
        // z = xbar - 0.5 has z^2 <= 0.25, so Var(z^2) <= 0.25 * E[z^2].
        let se = (0.25 * 0.025 / reps as f64).sqrt();
        assert!((r - 0.025).abs() < 3.0 * se, "{r}");
    }

    #[test]
    fn new_category_target_per_draw() {
        let p = Distribution::multinomial(vec![0.5, 0.5]).unwrap();
        let task = Task::NewCategories { n: 3, m: 1 };
        let Sampler::Counts { law, target, .. } = task.sampler(&p).unwrap() else { panic!() };
        let CountTarget::Unseen(w) = &target else { panic!() };
        assert_eq!(w, &vec![0.5, 0.5]);
        // With counts (n, 0) only the second category is unseen.
        let t: f64 = [3u32, 0].iter().zip(w).filter(|(c, _)| **c == 0).map(|(_, w)| w).sum();
        assert_eq!(t, 0.5);
        assert_eq!(law.categories(), 2);
    }

    #[test]
    fn mc_risk_splits_across_replication_ranges() {
        let task = Task::Mean { n: 10 };
        let p = bern(0.3);
        let rng = RngSpec::new(9);
        let whole = mc_risk_range(&SampleMean, &task, &p, &rng, 1, 4, 0..300).unwrap();
        let a = mc_risk_range(&SampleMean, &task, &p, &rng, 1, 4, 0..120).unwrap();
        let b = mc_risk_range(&SampleMean, &task, &p, &rng, 1, 4, 120..300).unwrap();
        assert!((whole - (120.0 * a + 180.0 * b) / 300.0).abs() < 1e-15);
    }

    #[test]
    fn bayes_risk_examples() {
        let grid = Grid::from_points([0.1, 0.5, 0.9].map(bern), 1);
        let table = RiskTable::new(grid.tag(), vec![1.0, 2.0, 3.0], Provenance::Exact).unwrap();
        let point = PriorWeights::new(&grid, vec![1.0, 0.0, 0.0], &[]).unwrap();
        assert_eq!(bayes_risk(&table, &point).unwrap(), 1.0);
        let flat = PriorWeights::new(&grid, vec![1.0 / 3.0; 3], &[]).unwrap();
        assert!((bayes_risk(&table, &flat).unwrap() - 2.0).abs() < 1e-15);

        let two = Grid::from_points([0.1, 0.5].map(bern), 1);
        let table = RiskTable::new(two.tag(), vec![0.0, 0.25], Provenance::Exact).unwrap();
        let prior = PriorWeights::new(&two, vec![0.75, 0.25], &[]).unwrap();
        assert_eq!(bayes_risk(&table, &prior).unwrap(), 0.0625);
        assert!(bayes_risk(&table, &flat).is_err());
    }

    #[test]
    fn exact_mode_two_stage_equals_lp_value() {
        let grid = Grid::from_points([0.1, 0.3, 0.5, 0.7, 0.9].map(bern), 1);
        let task = Task::Mean { n: 10 };
        let res = two_stage_max_bayes_risk(&SampleMean, &task, &grid, &[], RiskMode::Exact, &RngSpec::new(0)).unwrap();
        assert_eq!(res.value, res.selection_value);
        // Exhaustive maximization of p(1-p)/n over the grid: p = 0.5.
        assert_eq!(res.prior.weights(), &[0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!((res.value - 0.025).abs() < 1e-15);
    }

    #[test]
    fn singleton_grid_two_stage() {
        let grid = Grid::from_points([bern(0.4)], 1);
        let task = Task::Mean { n: 10 };
        let rng = RngSpec::new(3);
        let mode = RiskMode::MonteCarlo { replications: 500 };
        let res = two_stage_max_bayes_risk(&SampleMean, &task, &grid, &[], mode, &rng).unwrap();
        assert_eq!(res.prior.weights(), &[1.0]);
        let direct = mc_risk_range(&SampleMean, &task, grid.get(0), &rng, stage::RISK_B, 0, 0..500).unwrap();
        assert_eq!(res.value, direct);
    }

    #[test]
    fn parallel_tables_match_sequential() {
        let grid = Grid::from_points((1..40).map(|i| bern(i as f64 / 40.0)), 1);
        let task = Task::Mean { n: 10 };
        let rng = RngSpec::new(11);
        let mode = RiskMode::MonteCarlo { replications: 50 };
        let par = risk_table(&SampleMean, &task, &grid, mode, &rng, 7).unwrap();
        let seq: Vec<f64> = (0..grid.len())
            .map(|i| point_risk(&SampleMean, &task, grid.get(i), mode, &rng, 7, i as u64).unwrap())
            .collect();
        assert_eq!(par.values, seq);
    }

    #[test]
    fn risk_table_csv_schema() {
        let grid = Grid::from_points([bern(0.2), bern(0.6)], 1);
        let table = risk_table(
            &SampleMean,
            &Task::Mean { n: 4 },
            &grid,
            RiskMode::MonteCarlo { replications: 10 },
            &RngSpec::new(4),
            1,
        )
        .unwrap();
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let mut r = csv::Reader::from_reader(buf.as_slice());
        assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), vec!["index", "risk", "replications", "seed"]);
        let rows: Vec<_> = r.records().map(|x| x.unwrap()).collect();
        assert_eq!(rows.len(), 2);
        assert_eq!(&rows[1][2], "10");
        assert_eq!(rows[1][1].parse::<f64>().unwrap(), table.values[1]);
    }
}
