// Predict how many unseen categories a further sample will reveal, with
// the count baselines and a network initialized to their average.

use gammamax::config::PopulationSpec;
use gammamax::model::Observation;
use gammamax::nets::{Architecture, Baseline, EstimatorParams};
use gammamax::risk::{mc_risk, Task};
use gammamax::rng::{stage, RngSpec};

pub fn run_example() -> gammamax::Result<f64> {
    let (n, m) = (100, 200);
    let task = Task::NewCategories { n, m };
    let population = PopulationSpec::Zipf { categories: 150, power: 1.0 }.build()?;
    println!("population: {:.3} new categories expected in m = {m} further draws", task.functional().eval(&population)?);

    let sampler = task.sampler(&population)?;
    let (x, target) = sampler.draw(&mut RngSpec::new(4).stream(stage::EVAL, 0, 0));
    if let Observation::CountFingerprint(fp) = &x {
        println!("sample: {} categories seen, f1 = {}, f2 = {}", fp.observed_categories(), fp.f(1), fp.f(2));
    }
    let baselines = [Baseline::SmoothedGoodToulmin { m }, Baseline::ChaoExtrapolation { m }];
    for b in &baselines {
        println!("{:>22}: {:.3}", b.label(), b.eval(&x)?);
    }
    let skn = EstimatorParams::init(Architecture::skn(n, baselines.to_vec(), m as f64), 1)?;
    println!("{:>22}: {:.3} (conditional target {target:.3})", "skn at initialization", skn.forward(&x)?);

    let risk = mc_risk(&skn, &task, &population, 500, &RngSpec::new(5))?;
    println!("risk at the population: {risk:.3}");
    Ok(risk)
}

#[allow(dead_code)]
fn main() -> gammamax::Result<()> {
    run_example().map(|_| ())
}
