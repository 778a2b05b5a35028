// Train a statistical knowledge network for entropy by SGDmax, starting
// from the plug-in estimator with the Miller-Madow correction.

use gammamax::gridgen::{mcmc_refine, McStateRisk, McmcConfig, PseudoPrior};
use gammamax::model::{Distribution, Functional, Grid, MomentConstraint};
use gammamax::nets::{Architecture, Baseline, EstimatorParams};
use gammamax::risk::{two_stage_with_se, Task};
use gammamax::rng::RngSpec;
use gammamax::solvers::{sgdmax_convenient, BatchSize, Instance, SolverConfig};

pub fn run_example() -> gammamax::Result<(f64, f64)> {
    let n = 30;
    let task = Task::Entropy { n };
    let d0 = EstimatorParams::init(Architecture::skn(n, vec![Baseline::PluginMillerMadow], 3.0), 2)?;
    let cfg = McmcConfig {
        iterations: 800,
        risk_replications: 40,
        max_new: Some(80),
        seed: 5,
        ..McmcConfig::default()
    };
    let risk = McStateRisk {
        estimator: &d0,
        task,
        replications: cfg.risk_replications,
        seed: cfg.seed,
    };
    let start = Distribution::multinomial(vec![0.05; 20])?;
    let grid = mcmc_refine(&Grid::new(), &start, &risk, &PseudoPrior::flat(), &cfg, 1)?.grid;
    let constraints = MomentConstraint::mean_between(Functional::ShannonEntropy, 1.5, 3.0)?;
    let inst = Instance::new(task, &grid, &constraints)?;
    let solver = SolverConfig {
        eta: 0.005,
        batch: BatchSize::Draws(10),
        oracle_batch: BatchSize::Draws(10),
        iterations: 150,
        trace_every: 50,
        ..SolverConfig::default()
    };
    let rng = RngSpec::new(8);
    let out = sgdmax_convenient(d0.clone(), &inst, &solver, &rng)?;
    for row in &out.trace.rows {
        println!("iteration {:4}: Bayes risk {:.5}", row.iteration, row.bayes_risk);
    }
    let eval = rng.child(99);
    let (before, se0) = two_stage_with_se(&d0, &task, &grid, &constraints, 400, &eval)?;
    let (after, se1) = two_stage_with_se(&out.params, &task, &grid, &constraints, 400, &eval)?;
    println!("maximal Bayes risk on {} laws: plug-in {:.5} ± {se0:.5}, network {:.5} ± {se1:.5}", grid.len(), before.value, after.value);
    Ok((before.value, after.value))
}

#[allow(dead_code)]
fn main() -> gammamax::Result<()> {
    run_example().map(|_| ())
}
