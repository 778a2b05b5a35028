// A permutation-invariant network for the mean, initialized to the sample
// mean and trained against the least-favorable prior.

use gammamax::model::{Distribution, Functional, Grid, MomentConstraint, Observation};
use gammamax::nets::{Architecture, EstimatorParams};
use gammamax::risk::{two_stage_with_se, Task};
use gammamax::rng::RngSpec;
use gammamax::solvers::{sgdmax_convenient, BatchSize, Instance, SolverConfig};

pub fn run_example() -> gammamax::Result<(f64, f64)> {
    let task = Task::Mean { n: 10 };
    let d0 = EstimatorParams::init(Architecture::deep_set(), 3)?;
    let x = Observation::real(vec![0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    println!("at initialization the network outputs {} on a sample with mean 0.3", d0.forward(&x)?);

    let grid = Grid::from_points((0..=20).map(|i| Distribution::bernoulli(i as f64 / 20.0).expect("valid probability")), 1);
    let constraints = MomentConstraint::equal(Functional::Mean, 0.3)?;
    let inst = Instance::new(task, &grid, &constraints)?;
    let cfg = SolverConfig {
        eta: 0.01,
        batch: BatchSize::Draws(20),
        oracle_batch: BatchSize::Draws(20),
        iterations: 300,
        trace_every: 100,
        ..SolverConfig::default()
    };
    let rng = RngSpec::new(6);
    let out = sgdmax_convenient(d0.clone(), &inst, &cfg, &rng)?;
    let eval = rng.child(1);
    let (before, _) = two_stage_with_se(&d0, &task, &grid, &constraints, 2000, &eval)?;
    let (after, se) = two_stage_with_se(&out.params, &task, &grid, &constraints, 2000, &eval)?;
    println!("maximal Bayes risk: sample mean {:.5}, trained network {:.5} ± {se:.5}", before.value, after.value);
    println!("the minimax affine rule attains 0.01212");
    Ok((before.value, after.value))
}

#[allow(dead_code)]
fn main() -> gammamax::Result<()> {
    run_example().map(|_| ())
}
