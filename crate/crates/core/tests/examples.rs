mod mean_closed_form {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/mean_closed_form.rs"));
}
mod least_favorable_prior {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/least_favorable_prior.rs"));
}
mod fictitious_play {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/fictitious_play.rs"));
}
mod mcmc_grid {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/mcmc_grid.rs"));
}
mod entropy_skn {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/entropy_skn.rs"));
}
mod new_categories {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/new_categories.rs"));
}
mod outer_loop {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/outer_loop.rs"));
}
mod deep_set {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/deep_set.rs"));
}

#[test]
fn mean_closed_form_runs() {
    let (b0, b1) = mean_closed_form::run_example().expect("mean example");
    assert!((b0 - 0.072).abs() < 0.01 && (b1 - 0.760).abs() < 0.02);
}

#[test]
fn least_favorable_prior_runs() {
    let v = least_favorable_prior::run_example().expect("lp example");
    assert!(v > 0.0 && v <= 0.025);
}

#[test]
fn fictitious_play_runs() {
    assert!(fictitious_play::run_example().expect("fictitious play example") < 1e-3);
}

#[test]
fn mcmc_grid_runs() {
    assert!(mcmc_grid::run_example().expect("mcmc example") > 1);
}

#[test]
fn entropy_skn_runs() {
    let (before, after) = entropy_skn::run_example().expect("entropy example");
    assert!(before.is_finite() && after.is_finite());
}

#[test]
fn new_categories_runs() {
    assert!(new_categories::run_example().expect("new categories example") > 0.0);
}

#[test]
fn outer_loop_runs() {
    let r = outer_loop::run_example().expect("outer loop example");
    assert!(!r.is_empty() && r.iter().all(|v| (v - 0.0121).abs() < 1e-3));
}

#[test]
fn deep_set_runs() {
    let (before, after) = deep_set::run_example().expect("deep set example");
    assert!(before.is_finite() && after.is_finite());
}
