use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gammamax::gridgen::{mcmc_refine, structured_mean_grid, McStateRisk, McmcConfig, MeanGridConfig, PseudoPrior};
use gammamax::lp::{solve_least_favorable, LpProblem};
use gammamax::model::{Distribution, Functional, Grid, MomentConstraint, Observation, PriorWeights};
use gammamax::nets::{average_mixture, Architecture, Baseline, ElmSpec, EstimatorParams, MixtureEstimator};
use gammamax::oracle::{gamma_minimax_affine, minimax_bayes_risk, MeanProblemSpec};
use gammamax::outer::{self, GridGenerator, InnerSolver, OuterConfig, Problem};
use gammamax::risk::{
    bayes_risk, exact_risk_affine, max_bayes_risk_with_stages, mc_risk_range, risk_table, Provenance, RiskMode, RiskTable, Task,
};
use gammamax::rng::{stage, RngSpec};
use gammamax::solvers::{gdmax, BatchSize, ExactAffine, Instance, LpMaxOracle, MaxOracle, SolverConfig};

fn probs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, 1..40).prop_map(|v| {
        let t: f64 = v.iter().sum();
        v.into_iter().map(|x| x / t).collect()
    })
}

proptest! {
    #[test]
    fn entropy_is_between_zero_and_log_k(p in probs()) {
        let k = p.len() as f64;
        let d = Distribution::multinomial(p).unwrap();
        let h = Functional::ShannonEntropy.eval(&d).unwrap();
        prop_assert!(h >= 0.0 && h <= k.ln() + 1e-12);
    }

    #[test]
    fn expected_new_categories_is_at_most_k(p in probs(), n in 1usize..200, m in 1usize..400) {
        let k = p.len() as f64;
        let d = Distribution::multinomial(p).unwrap();
        let v = Functional::ExpectedNewCategories { n, m }.eval(&d).unwrap();
        prop_assert!((0.0..=k).contains(&v));
    }

    #[test]
    fn distribution_json_round_trip(p in probs(), mut xs in prop::collection::vec(0.0f64..1.0, 1..10)) {
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let d = Distribution::multinomial(p).unwrap();
        let back: Distribution = serde_json::from_str(&serde_json::to_string(&d).unwrap()).unwrap();
        prop_assert_eq!(&back, &d);
        let w = vec![1.0 / xs.len() as f64; xs.len()];
        let q = Distribution::point_support(xs, w).unwrap();
        let back: Distribution = serde_json::from_str(&serde_json::to_string(&q).unwrap()).unwrap();
        prop_assert_eq!(&back, &q);
    }

    #[test]
    fn bayes_risk_is_linear(w1 in probs(), alpha in 0.0f64..1.0, seed in 0u64..1000) {
        let k = w1.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = Grid::from_points((0..k).map(|i| Distribution::bernoulli((i as f64 + 0.5) / k as f64).unwrap()), 1);
        let table = RiskTable::new(grid.tag(), (0..k).map(|_| rng.random::<f64>()).collect(), Provenance::Exact).unwrap();
        let w2 = vec![1.0 / k as f64; k];
        let mix: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
        let p = |w: Vec<f64>| PriorWeights::new(&grid, w, &[]).unwrap();
        let lhs = bayes_risk(&table, &p(mix)).unwrap();
        let rhs = alpha * bayes_risk(&table, &p(w1.clone())).unwrap() + (1.0 - alpha) * bayes_risk(&table, &p(w2)).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn redundant_constraint_keeps_the_value(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..9);
        let objective: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let row: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let base = solve_least_favorable(&LpProblem::new(objective.clone(), vec![], vec![]).unwrap()).unwrap();
        let cap = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let with = solve_least_favorable(&LpProblem::new(objective, vec![row], vec![cap]).unwrap()).unwrap();
        prop_assert!((base.value - with.value).abs() < 1e-12);
    }
}

fn bern_grid(ps: &[f64]) -> Grid {
    Grid::from_points(ps.iter().map(|p| Distribution::bernoulli(*p).unwrap()), 1)
}

#[test]
fn refinement_keeps_old_indices() {
    let cfg = MeanGridConfig {
        bernoulli: 50,
        reweightings: 10,
        fresh_laws: 10,
        fresh_support: 2,
    };
    let rng = RngSpec::new(5);
    let g1 = structured_mean_grid(1, &Grid::new(), &cfg, &rng).unwrap();
    let g2 = structured_mean_grid(2, &g1, &cfg, &rng).unwrap();
    assert!(g2.len() > g1.len());
    for (i, p) in g1.points().iter().enumerate() {
        assert_eq!(g2.get(i), p);
        assert_eq!(g2.round_of(i), 1);
    }
}

#[test]
fn mcmc_refinement_is_a_superset_of_valid_laws() {
    let task = Task::Entropy { n: 20 };
    let d = EstimatorParams::init(Architecture::skn(20, vec![Baseline::PluginMillerMadow], 3.0), 1).unwrap();
    let prev = Grid::from_points([Distribution::multinomial(vec![0.5, 0.3, 0.2]).unwrap()], 1);
    let cfg = McmcConfig {
        iterations: 300,
        risk_replications: 20,
        chains: 2,
        seed: 9,
        ..McmcConfig::default()
    };
    let risk = McStateRisk {
        estimator: &d,
        task,
        replications: cfg.risk_replications,
        seed: cfg.seed,
    };
    let start = Distribution::multinomial(vec![0.25; 4]).unwrap();
    let out = mcmc_refine(&prev, &start, &risk, &PseudoPrior::flat(), &cfg, 2).unwrap();
    assert!(out.added > 0);
    for p in prev.points() {
        assert!(out.grid.contains(p));
    }
    for p in out.grid.points() {
        let probs = p.as_multinomial().unwrap().probs();
        assert!(probs.iter().all(|q| *q > 0.0));
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let report: serde_json::Value = serde_json::from_str(&out.diagnostics_json().unwrap()).unwrap();
    assert_eq!(report["proposed"].as_array().unwrap().len(), 3);
}

#[test]
fn risk_streams_split_consistently() {
    let task = Task::Mean { n: 10 };
    let d = EstimatorParams::affine(0.05, 0.8);
    let p = Distribution::bernoulli(0.35).unwrap();
    let rng = RngSpec::new(12);
    let all = mc_risk_range(&d, &task, &p, &rng, stage::RISK_A, 3, 0..300).unwrap();
    let a = mc_risk_range(&d, &task, &p, &rng, stage::RISK_A, 3, 0..120).unwrap();
    let b = mc_risk_range(&d, &task, &p, &rng, stage::RISK_A, 3, 120..300).unwrap();
    assert!((all - (120.0 * a + 180.0 * b) / 300.0).abs() < 1e-15);
}

#[test]
fn two_stage_is_symmetric_in_the_streams() {
    let grid = bern_grid(&[0.2, 0.35, 0.5, 0.65, 0.8]);
    let task = Task::Mean { n: 10 };
    let d = EstimatorParams::affine(0.0, 1.0);
    let mode = RiskMode::MonteCarlo { replications: 40 };
    let (ab, ba): (Vec<f64>, Vec<f64>) = (0..200u64)
        .map(|s| {
            let rng = RngSpec::new(500 + s);
            let ab = max_bayes_risk_with_stages(&d, &task, &grid, &[], mode, &rng, stage::RISK_A, stage::RISK_B).unwrap();
            let ba = max_bayes_risk_with_stages(&d, &task, &grid, &[], mode, &rng, stage::RISK_B, stage::RISK_A).unwrap();
            (ab.value, ba.value)
        })
        .unzip();
    let stats = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        (m, var / v.len() as f64)
    };
    let ((m1, s1), (m2, s2)) = (stats(&ab), stats(&ba));
    assert!((m1 - m2).abs() <= 3.0 * (s1 + s2).sqrt(), "{m1} vs {m2}");
}

#[test]
fn exact_two_stage_selects_the_largest_variance() {
    let grid = bern_grid(&[0.1, 0.3, 0.45, 0.7, 0.9]);
    let task = Task::Mean { n: 10 };
    let d = EstimatorParams::affine(0.0, 1.0);
    let r = max_bayes_risk_with_stages(&d, &task, &grid, &[], RiskMode::Exact, &RngSpec::new(1), stage::RISK_A, stage::RISK_B).unwrap();
    assert!((r.prior.weights()[2] - 1.0).abs() < 1e-12);
    assert!((r.value - 0.45 * 0.55 / 10.0).abs() < 1e-15);
    assert_eq!(r.value, r.selection_value);
}

#[test]
fn large_oracle_batches_find_the_argmax() {
    // Sample-mean risks p(1-p)/10: 0.021 and 0.024.
    let grid = bern_grid(&[0.3, 0.4]);
    let task = Task::Mean { n: 10 };
    let inst = Instance::new(task, &grid, &[]).unwrap();
    let d = EstimatorParams::affine(0.0, 1.0);
    let hits = |draws: u64| {
        (0..100u64)
            .filter(|s| {
                let oracle = LpMaxOracle {
                    batch: BatchSize::Draws(draws),
                    rng: RngSpec::new(70 + s),
                };
                oracle.select(&inst, &d, 1).unwrap()[1] > 0.5
            })
            .count()
    };
    let (small, large) = (hits(1), hits(2000));
    assert!(large >= 95, "{large}");
    assert!(small < large, "{small} vs {large}");
}

#[test]
fn gdmax_has_no_late_blow_ups() {
    let grid = structured_mean_grid(1, &Grid::new(), &MeanGridConfig::default(), &RngSpec::new(2024)).unwrap();
    let task = Task::Mean { n: 10 };
    let cons = MomentConstraint::equal(Functional::Mean, 0.3).unwrap();
    let inst = Instance::new(task, &grid, &cons).unwrap();
    let exact = ExactAffine::new(&task, &grid).unwrap();
    for eta in [0.005, 0.01] {
        let cfg = SolverConfig {
            eta,
            batch: BatchSize::Exact,
            oracle_batch: BatchSize::Exact,
            ..SolverConfig::default()
        };
        let out = gdmax(EstimatorParams::affine(0.0, 1.0), &inst, &cfg, &exact).unwrap();
        let again = gdmax(EstimatorParams::affine(0.0, 1.0), &inst, &cfg, &exact).unwrap();
        assert_eq!(out, again);
        let best = out.trace.rows.iter().map(|r| r.bayes_risk).fold(f64::INFINITY, f64::min);
        let last = out.trace.rows.last().unwrap().bayes_risk;
        assert!(last - best < 1e-4, "eta {eta}: best {best}, last {last}");
    }
}

#[test]
fn bayes_criterion_on_a_bernoulli_grid() {
    let spec = MeanProblemSpec::new(0.3, 10).unwrap();
    let (b0, b1) = gamma_minimax_affine(&spec).unwrap();
    let value = minimax_bayes_risk(&spec).unwrap();
    let grid = bern_grid(&(0..=100).map(|i| i as f64 / 100.0).collect::<Vec<_>>());
    let task = Task::Mean { n: 10 };
    let cons = MomentConstraint::equal(Functional::Mean, 0.3).unwrap();
    let inst = Instance::new(task, &grid, &cons).unwrap();
    let exact = ExactAffine::new(&task, &grid).unwrap();
    let r0 = inst.max_bayes_risk(exact.risks_of(b0, b1)).unwrap();
    assert!((r0 - value).abs() < 1e-9, "{r0} vs {value}");
    for i in 0..20 {
        for j in 0..20 {
            let c0 = -0.2 + 0.5 * i as f64 / 19.0;
            let c1 = 0.4 + 0.8 * j as f64 / 19.0;
            let r = inst.max_bayes_risk(exact.risks_of(c0, c1)).unwrap();
            assert!(r >= r0 - 1e-12, "({c0}, {c1}) gives {r} < {r0}");
        }
    }
}

#[test]
fn averaging_affine_members_does_not_raise_risk() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let k = rng.random_range(1..5);
        let members: Vec<(EstimatorParams, f64)> = (0..k)
            .map(|_| (EstimatorParams::affine(rng.random_range(-0.5..0.5), rng.random_range(0.0..1.5)), rng.random::<f64>() + 0.01))
            .collect();
        let total: f64 = members.iter().map(|m| m.1).sum();
        let members: Vec<_> = members.into_iter().map(|(d, w)| (d, w / total)).collect();
        let mix = MixtureEstimator::new(members.clone()).unwrap();
        let avg = average_mixture(&mix).unwrap();
        let p = Distribution::bernoulli(rng.random::<f64>()).unwrap();
        let n = rng.random_range(1..30);
        let r_avg = exact_risk_affine(avg.beta()[0], avg.beta()[1], &p, n).unwrap();
        let r_mix: f64 = members.iter().map(|(d, w)| w * exact_risk_affine(d.beta()[0], d.beta()[1], &p, n).unwrap()).sum();
        assert!(r_avg <= r_mix + 1e-12);
    }
}

#[test]
fn elm_loss_is_convex_in_the_output_layer() {
    let n = 15;
    let arch = Architecture::Elm(ElmSpec {
        n,
        hidden: 12,
        baselines: vec![Baseline::PluginMillerMadow],
        baseline_scale: 3.0,
        seed: 4,
    });
    let d = EstimatorParams::init(arch, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let data: Vec<(Observation, f64)> = (0..25)
        .map(|_| {
            let counts: Vec<u32> = (0..rng.random_range(1..8)).map(|_| rng.random_range(1..4)).collect();
            (Observation::counts(counts), rng.random_range(0.0..3.0))
        })
        .collect();
    let loss = |beta: &[f64]| -> f64 {
        let e = d.with_beta(beta.to_vec()).unwrap();
        data.iter().map(|(x, t)| (e.forward(x).unwrap() - t).powi(2)).sum()
    };
    let idx: Vec<usize> = d.trainable().collect();
    let beta = d.beta().to_vec();
    let h = 1e-2;
    let k = idx.len();
    let mut hess = nalgebra::DMatrix::<f64>::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            let shifted = |sa: f64, sb: f64| {
                let mut v = beta.clone();
                v[idx[a]] += sa;
                v[idx[b]] += sb;
                loss(&v)
            };
            hess[(a, b)] = (shifted(h, h) - shifted(h, -h) - shifted(-h, h) + shifted(-h, -h)) / (4.0 * h * h);
        }
    }
    let hess = (&hess + hess.transpose()) * 0.5;
    let min = hess.symmetric_eigenvalues().min();
    assert!(min >= -1e-8, "{min}");
}

#[test]
fn outer_round_priors_are_feasible() {
    let sc = SolverConfig {
        batch: BatchSize::Exact,
        oracle_batch: BatchSize::Exact,
        iterations: 300,
        ..SolverConfig::default()
    };
    let cfg = OuterConfig {
        solver: InnerSolver::Gdmax,
        first_round: sc.clone(),
        later_rounds: sc,
        generator: GridGenerator::StructuredMean(MeanGridConfig {
            bernoulli: 100,
            reweightings: 20,
            fresh_laws: 20,
            fresh_support: 3,
        }),
        eps_rel: 0.0,
        eps_abs: 0.0,
        min_rounds: 2,
        max_rounds: 2,
        check: RiskMode::Exact,
    };
    let cons = MomentConstraint::equal(Functional::Mean, 0.3).unwrap();
    let problem = Problem {
        task: Task::Mean { n: 10 },
        constraints: cons.clone(),
        init: EstimatorParams::affine(0.0, 1.0),
    };
    let rng = RngSpec::new(3);
    let out = outer::run(&cfg, &problem, &rng, None).unwrap();
    assert_eq!(out.reports.len(), 2);
    let mut grid = outer::initial_grid(&cfg, &problem, &rng).unwrap();
    for (l, rep) in out.reports.iter().enumerate() {
        if l > 0 {
            grid = structured_mean_grid(rep.round, &grid, &MeanGridConfig { bernoulli: 100, reweightings: 20, fresh_laws: 20, fresh_support: 3 }, &rng).unwrap();
        }
        assert_eq!(grid.len(), rep.grid_size);
        let mut w = vec![0.0; grid.len()];
        for (i, v) in &rep.prior {
            w[*i] = *v;
        }
        PriorWeights::new(&grid, w, &cons).unwrap();
    }
    // Warm start: round 2 opens at round 1's estimator on the new grid.
    let d1 = EstimatorParams::affine(out.reports[0].beta[0], out.reports[0].beta[1]);
    let table = risk_table(&d1, &problem.task, &grid, RiskMode::Exact, &rng, stage::RISK_A).unwrap();
    let opening = Instance::new(problem.task, &grid, &cons).unwrap().max_bayes_risk(table.values).unwrap();
    assert!((opening - out.reports[0].r_next).abs() < 1e-12);
    assert!(out.traces[1].rows[0].bayes_risk <= opening + 1e-12);
}
