// The adversary's step: the prior on a grid that maximizes the Bayes risk
// of a fixed estimator, subject to moment constraints.

use gammamax::lp::{brute_force_lfp, solve_least_favorable, LpProblem};
use gammamax::model::{Distribution, Functional, Grid, MomentConstraint};
use gammamax::nets::EstimatorParams;
use gammamax::risk::{least_favorable, risk_table, RiskMode, Task};
use gammamax::rng::{stage, RngSpec};

pub fn run_example() -> gammamax::Result<f64> {
    let grid = Grid::from_points(
        [0.0, 0.1, 0.3, 0.5, 0.7, 1.0].map(|p| Distribution::bernoulli(p).expect("valid probability")),
        1,
    );
    let task = Task::Mean { n: 10 };
    let d = EstimatorParams::affine(0.0, 1.0);
    let risks = risk_table(&d, &task, &grid, RiskMode::Exact, &RngSpec::new(0), stage::RISK_A)?;

    // Prior mean of the law's mean in [0.2, 0.4].
    let constraints = MomentConstraint::mean_between(Functional::Mean, 0.2, 0.4)?;
    let (prior, value) = least_favorable(&risks, &constraints, &grid)?;
    println!("maximal Bayes risk of the sample mean: {value:.6}");
    for i in prior.support() {
        println!("  P = Bern({:.1}) weight {:.4}", grid.get(i).as_point_law().unwrap().mean(), prior.weights()[i]);
    }

    // The enumeration oracle agrees on small problems.
    let lp = LpProblem::on_grid(risks.values.clone(), &constraints, &grid)?;
    let brute = brute_force_lfp(&lp)?;
    let simplex = solve_least_favorable(&lp)?;
    println!("simplex {:.12} vs enumeration {:.12}", simplex.value, brute.value);
    Ok(value)
}

#[allow(dead_code)]
fn main() -> gammamax::Result<()> {
    run_example().map(|_| ())
}
