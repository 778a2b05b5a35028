// Grow a grid of multinomial laws with a Metropolis-Hastings-Green chain
// that targets risk times a pseudo-prior.

use gammamax::gridgen::{mcmc_refine, McStateRisk, McmcConfig, PseudoComponent, PseudoPrior};
use gammamax::model::{Distribution, Functional, Grid};
use gammamax::nets::{Architecture, Baseline, EstimatorParams};
use gammamax::risk::Task;

pub fn run_example() -> gammamax::Result<usize> {
    let n = 50;
    let task = Task::Entropy { n };
    let d = EstimatorParams::init(Architecture::skn(n, vec![Baseline::PluginMillerMadow], 3.0), 1)?;
    // Prior belief: entropy near 2 nats, 95% of the mass in [1.5, 2.5].
    let tau = PseudoPrior {
        components: vec![
            (PseudoComponent::normal(Functional::ShannonEntropy, (1.8, 2.2), (1.5, 2.5))?, 5.0),
            (PseudoComponent::neg_binomial(0.9, 2.0)?, 1.0),
        ],
    };
    let cfg = McmcConfig {
        iterations: 1500,
        risk_replications: 50,
        max_new: Some(200),
        seed: 17,
        ..McmcConfig::default()
    };
    let risk = McStateRisk {
        estimator: &d,
        task,
        replications: cfg.risk_replications,
        seed: cfg.seed,
    };
    let start = Distribution::multinomial(vec![1.0 / 8.0; 8])?;
    let out = mcmc_refine(&Grid::new(), &start, &risk, &tau, &cfg, 1)?;
    println!("{}", out.diagnostics_json()?);
    let sizes: Vec<usize> = out.grid.points().iter().map(|p| p.size()).collect();
    println!(
        "{} laws with {} to {} categories",
        out.grid.len(),
        sizes.iter().min().unwrap_or(&0),
        sizes.iter().max().unwrap_or(&0)
    );
    Ok(out.grid.len())
}

#[allow(dead_code)]
fn main() -> gammamax::Result<()> {
    run_example().map(|_| ())
}
