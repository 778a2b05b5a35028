//! Closed-form answers for estimating a mean on `[0, 1]` under a prior-mean
//! constraint, used as ground truth by the tests and examples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Distribution, Interval};

/// Priors with `E_pi[mean(P)] = mu`, data `n` iid draws on `[a, b]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanProblemSpec {
    pub mu: f64,
    pub n: usize,
    #[serde(default)]
    pub interval: Interval,
}

impl MeanProblemSpec {
    pub fn new(mu: f64, n: usize) -> Result<Self> {
        Self::on(mu, n, Interval::UNIT)
    }

    pub fn on(mu: f64, n: usize, interval: Interval) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if !interval.contains(mu) {
            return Err(Error::Config(format!("mu = {mu} outside [{}, {}]", interval.lo, interval.hi)));
        }
        Ok(Self { mu, n, interval })
    }

    fn require_unit(&self) -> Result<()> {
        if self.interval != Interval::UNIT {
            return Err(Error::Unsupported("closed form is derived for [0, 1]".into()));
        }
        Ok(())
    }
}

/// Coefficients of `d0(X) = (mu + sqrt(n) xbar) / (1 + sqrt(n))`.
pub fn gamma_minimax_affine(spec: &MeanProblemSpec) -> Result<(f64, f64)> {
    spec.require_unit()?;
    let s = (spec.n as f64).sqrt();
    Ok((spec.mu / (1.0 + s), s / (1.0 + s)))
}

/// `mu (1 - mu) / (1 + sqrt(n))^2`.
pub fn minimax_bayes_risk(spec: &MeanProblemSpec) -> Result<f64> {
    spec.require_unit()?;
    let s = (spec.n as f64).sqrt();
    Ok(spec.mu * (1.0 - spec.mu) / ((1.0 + s) * (1.0 + s)))
}

/// Largest variance of a law on `[a, b]` with mean `mu`, and the two-point
/// law attaining it.
pub fn max_variance_bound(a: f64, b: f64, mu: f64) -> Result<(f64, Distribution)> {
    let interval = Interval::new(a, b)?;
    if !interval.contains(mu) {
        return Err(Error::InvalidDistribution(format!("mean {mu} outside [{a}, {b}]")));
    }
    let low = (b - mu) / (b - a);
    let extremal = Distribution::from_atoms(&[(a, low), (b, 1.0 - low)], interval)?;
    Ok(((b - mu) * (mu - a), extremal))
}

/// Parameters of the Beta law of the Bernoulli success probability that is
/// least favorable for the mean problem.
pub fn least_favorable_beta(spec: &MeanProblemSpec) -> Result<(f64, f64)> {
    spec.require_unit()?;
    let s = (spec.n as f64).sqrt();
    Ok((spec.mu * s, (1.0 - spec.mu) * s))
}

/// Bayes risk of the affine rule `beta0 + beta1 xbar` when `P` is Bernoulli
/// with success probability drawn from Beta(alpha, beta).
pub fn affine_bayes_risk_beta(beta0: f64, beta1: f64, alpha: f64, beta: f64, n: usize) -> f64 {
    let m1 = alpha / (alpha + beta);
    let m2 = m1 * (alpha + 1.0) / (alpha + beta + 1.0);
    let c = beta1 - 1.0;
    // E[(beta0 + c p)^2] + beta1^2 E[p - p^2] / n
    beta0 * beta0 + 2.0 * beta0 * c * m1 + c * c * m2 + beta1 * beta1 * (m1 - m2) / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_values() {
        let spec = MeanProblemSpec::new(0.3, 10).unwrap();
        let (b0, b1) = gamma_minimax_affine(&spec).unwrap();
        // Independent evaluation: 0.3 / (1 + sqrt 10), sqrt 10 / (1 + sqrt 10),
        // 0.21 / (1 + sqrt 10)^2.
        assert!((b0 - 0.072_075_922_005_612_6).abs() < 1e-12);
        assert!((b1 - 0.759_746_926_647_957_7).abs() < 1e-12);
        assert!((minimax_bayes_risk(&spec).unwrap() - 0.012_121_523_243_571_4).abs() < 1e-12);
        assert_eq!(((b0 * 1e3).round(), (b1 * 1e3).round()), (72.0, 760.0));

        let (b0, b1) = gamma_minimax_affine(&MeanProblemSpec::new(0.0, 1).unwrap()).unwrap();
        assert_eq!((b0, b1), (0.0, 0.5));
        let spec = MeanProblemSpec::new(0.5, 4).unwrap();
        let (b0, b1) = gamma_minimax_affine(&spec).unwrap();
        assert!((b0 - 1.0 / 6.0).abs() < 1e-15 && (b1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((minimax_bayes_risk(&spec).unwrap() - 0.25 / 9.0).abs() < 1e-15);
        assert_eq!(minimax_bayes_risk(&MeanProblemSpec::new(0.0, 7).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn variance_bound_values() {
        let (v, d) = max_variance_bound(0.0, 1.0, 0.5).unwrap();
        assert_eq!(v, 0.25);
        assert!(d.approx_eq(&Distribution::bernoulli(0.5).unwrap()));
        assert_eq!(max_variance_bound(0.0, 1.0, 0.3).unwrap().0, 0.21);
        assert_eq!(max_variance_bound(-1.0, 1.0, 0.0).unwrap().0, 1.0);
        assert!(max_variance_bound(0.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn minimax_rule_is_an_equalizer_under_the_beta_prior() {
        let spec = MeanProblemSpec::new(0.3, 10).unwrap();
        let (b0, b1) = gamma_minimax_affine(&spec).unwrap();
        let (a, b) = least_favorable_beta(&spec).unwrap();
        let r = affine_bayes_risk_beta(b0, b1, a, b, 10);
        assert!((r - minimax_bayes_risk(&spec).unwrap()).abs() < 1e-15);
    }
}
