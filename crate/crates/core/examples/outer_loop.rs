// Grid refinement: solve on a grid, grow it, stop once the maximal Bayes
// risk on the larger grid is within tolerance.

use gammamax::gridgen::MeanGridConfig;
use gammamax::model::{Functional, MomentConstraint};
use gammamax::nets::EstimatorParams;
use gammamax::outer::{run, GridGenerator, InnerSolver, OuterConfig, Problem};
use gammamax::risk::{RiskMode, Task};
use gammamax::rng::RngSpec;
use gammamax::solvers::{BatchSize, SolverConfig};

pub fn run_example() -> gammamax::Result<Vec<f64>> {
    let solver = SolverConfig {
        batch: BatchSize::Exact,
        oracle_batch: BatchSize::Exact,
        iterations: 2000,
        trace_every: 100,
        ..SolverConfig::default()
    };
    let cfg = OuterConfig {
        solver: InnerSolver::Gdmax,
        first_round: solver.clone(),
        later_rounds: SolverConfig { iterations: 300, ..solver },
        generator: GridGenerator::StructuredMean(MeanGridConfig {
            bernoulli: 400,
            reweightings: 100,
            fresh_laws: 200,
            fresh_support: 5,
        }),
        eps_rel: 0.02,
        eps_abs: 1e-4,
        min_rounds: 1,
        max_rounds: 4,
        check: RiskMode::Exact,
    };
    let problem = Problem {
        task: Task::Mean { n: 10 },
        constraints: MomentConstraint::equal(Functional::Mean, 0.3)?,
        init: EstimatorParams::affine(0.0, 1.0),
    };
    let out = run(&cfg, &problem, &RngSpec::new(11), None)?;
    for r in &out.reports {
        println!(
            "round {}: {} laws, r_sup {:.6} -> {:.6} on {} laws, {:?}, beta = ({:.4}, {:.4})",
            r.round, r.grid_size, r.r_current, r.r_next, r.next_grid_size, r.decision, r.beta[0], r.beta[1]
        );
    }
    Ok(out.reports.iter().map(|r| r.r_current).collect())
}

#[allow(dead_code)]
fn main() -> gammamax::Result<()> {
    run_example().map(|_| ())
}
