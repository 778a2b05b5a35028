// Fictitious play with exact best responses; the trace brackets the
// minimax risk from both sides.

use gammamax::gridgen::{structured_mean_grid, MeanGridConfig};
use gammamax::model::{Functional, Grid, MomentConstraint};
use gammamax::nets::{average_mixture, EstimatorParams, MixtureEstimator};
use gammamax::risk::Task;
use gammamax::rng::RngSpec;
use gammamax::solvers::{fictitious_play, AffineBestResponse, ExactAffine, FictitiousPlayConfig, Instance};

pub fn run_example() -> gammamax::Result<f64> {
    let grid_cfg = MeanGridConfig {
        bernoulli: 300,
        ..MeanGridConfig::default()
    };
    let grid = structured_mean_grid(1, &Grid::new(), &grid_cfg, &RngSpec::new(3))?;
    let task = Task::Mean { n: 10 };
    let constraints = MomentConstraint::equal(Functional::Mean, 0.3)?;
    let inst = Instance::new(task, &grid, &constraints)?;
    let exact = ExactAffine::new(&task, &grid)?;
    let d0 = EstimatorParams::affine(0.0, 1.0);
    let prior0 = inst.prior(inst.lfp(exact.risks_of(0.0, 1.0))?.weights)?;
    let cfg = FictitiousPlayConfig {
        iterations: 2000,
        trace_every: 500,
        ..FictitiousPlayConfig::default()
    };
    let out = fictitious_play(MixtureEstimator::point(d0), prior0, &inst, &cfg, &AffineBestResponse::new(&task, &grid)?)?;
    for row in &out.trace.rows {
        println!("t = {:5}  lower {:.6}  upper {:.6}", row.iteration, row.lower.unwrap_or(f64::NAN), row.upper.unwrap_or(f64::NAN));
    }
    let avg = average_mixture(&out.mixture)?;
    println!("average of {} members: beta = ({:.5}, {:.5}); best gap {:.2e}", out.mixture.members().len(), avg.beta()[0], avg.beta()[1], out.best_gap);
    Ok(out.best_gap)
}

#[allow(dead_code)]
fn main() -> gammamax::Result<()> {
    run_example().map(|_| ())
}
