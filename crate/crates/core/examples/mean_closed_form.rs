// Learn the minimax affine estimator of a mean by GDmax on a grid of
// Bernoulli laws and compare with the closed form.

use gammamax::gridgen::{structured_mean_grid, MeanGridConfig};
use gammamax::model::{Functional, Grid, MomentConstraint};
use gammamax::nets::EstimatorParams;
use gammamax::oracle::{gamma_minimax_affine, minimax_bayes_risk, MeanProblemSpec};
use gammamax::risk::Task;
use gammamax::rng::RngSpec;
use gammamax::solvers::{gdmax, BatchSize, ExactAffine, Instance, SolverConfig};

pub fn run_example() -> gammamax::Result<(f64, f64)> {
    let spec = MeanProblemSpec::new(0.3, 10)?;
    let (b0, b1) = gamma_minimax_affine(&spec)?;
    println!("closed form: beta = ({b0:.5}, {b1:.5}), minimax risk {:.6}", minimax_bayes_risk(&spec)?);

    let grid_cfg = MeanGridConfig {
        bernoulli: 500,
        ..MeanGridConfig::default()
    };
    let grid = structured_mean_grid(1, &Grid::new(), &grid_cfg, &RngSpec::new(1))?;
    let task = Task::Mean { n: 10 };
    let constraints = MomentConstraint::equal(Functional::Mean, 0.3)?;
    let inst = Instance::new(task, &grid, &constraints)?;
    let exact = ExactAffine::new(&task, &grid)?;
    let cfg = SolverConfig {
        batch: BatchSize::Exact,
        oracle_batch: BatchSize::Exact,
        ..SolverConfig::default()
    };
    let out = gdmax(EstimatorParams::affine(0.0, 1.0), &inst, &cfg, &exact)?;
    let beta = out.params.beta();
    let r = inst.max_bayes_risk(exact.risks_of(beta[0], beta[1]))?;
    println!("gdmax on {} laws: beta = ({:.5}, {:.5}), max Bayes risk {r:.6}", grid.len(), beta[0], beta[1]);
    Ok((beta[0], beta[1]))
}

#[allow(dead_code)]
fn main() -> gammamax::Result<()> {
    run_example().map(|_| ())
}
