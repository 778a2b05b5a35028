//! Parameterized estimators `d(beta)`: affine rules in the sample mean,
//! statistical knowledge networks with existing estimators wired in as
//! nodes, permutation-invariant deep sets and extreme learning machines.
//!
//! Every family stores its coefficients as one flat vector. The layout is
//! layer-major, weights row-major `(out, in)`, and is exposed through
//! [`EstimatorParams::layout`].

use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Distribution, Fingerprint, Observation};
use crate::risk::{exact_risk_affine, Estimator, Task};
use crate::rng::{combine, StreamRng};

/// Existing estimators available as network inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Baseline {
    SampleMean,
    /// Plug-in entropy with the Miller-Madow correction.
    PluginMillerMadow,
    /// Chao-type extrapolation of the number of unseen categories.
    ChaoExtrapolation { m: usize },
    /// Good-Toulmin with binomial tail smoothing.
    SmoothedGoodToulmin { m: usize },
}

impl Baseline {
    /// Looks a baseline up by name; `m` is the extrapolation size where
    /// one is needed.
    pub fn from_name(name: &str, m: usize) -> Result<Self> {
        Ok(match name {
            "sample_mean" => Baseline::SampleMean,
            "plugin_miller_madow" | "plugin_mm" => Baseline::PluginMillerMadow,
            "chao_extrapolation" | "chao" => Baseline::ChaoExtrapolation { m },
            "smoothed_good_toulmin" | "sgt" => Baseline::SmoothedGoodToulmin { m },
            other => return Err(Error::UnknownBaseline(other.to_string())),
        })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Baseline::SampleMean => "sample_mean",
            Baseline::PluginMillerMadow => "plugin_miller_madow",
            Baseline::ChaoExtrapolation { .. } => "chao_extrapolation",
            Baseline::SmoothedGoodToulmin { .. } => "smoothed_good_toulmin",
        }
    }

    pub fn eval(&self, x: &Observation) -> Result<f64> {
        match (self, x) {
            (Baseline::SampleMean, Observation::RealSample { values }) => {
                if values.is_empty() {
                    return Err(Error::InvalidObservation("empty sample".into()));
                }
                Ok(sample_mean(values))
            }
            (Baseline::SampleMean, _) => Err(Error::RepresentationMismatch("sample mean needs a real sample".into())),
            (_, Observation::CountFingerprint(fp)) => {
                if fp.sample_size() == 0 {
                    return Err(Error::InvalidObservation("no observations".into()));
                }
                Ok(match self {
                    Baseline::PluginMillerMadow => plugin_miller_madow(fp),
                    Baseline::ChaoExtrapolation { m } => chao_extrapolation(fp, *m),
                    Baseline::SmoothedGoodToulmin { m } => smoothed_good_toulmin(fp, *m),
                    Baseline::SampleMean => unreachable!(),
                })
            }
            _ => Err(Error::RepresentationMismatch(format!("{} needs count data", self.label()))),
        }
    }
}

/// Evaluates the named baseline.
pub fn baseline(name: &str, x: &Observation, m: usize) -> Result<f64> {
    Baseline::from_name(name, m)?.eval(x)
}

/// Sums in sorted order so the result does not depend on the sample order.
fn sample_mean(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum::<f64>() / values.len() as f64
}

fn plugin_miller_madow(fp: &Fingerprint) -> f64 {
    let n = fp.sample_size() as f64;
    let plugin: f64 = -fp
        .counts()
        .iter()
        .map(|&c| {
            let q = c as f64 / n;
            q * q.ln()
        })
        .sum::<f64>();
    plugin + (fp.observed_categories() as f64 - 1.0) / (2.0 * n)
}

fn chao_extrapolation(fp: &Fingerprint, m: usize) -> f64 {
    let n = fp.sample_size() as f64;
    let f1 = fp.f(1) as f64;
    let f2 = fp.f(2) as f64;
    let f0 = if f2 > 0.0 { f1 * f1 / (2.0 * f2) } else { f1 * (f1 - 1.0) / 2.0 };
    if f0 <= 0.0 {
        return 0.0;
    }
    f0 * (1.0 - (1.0 - f1 / (n * f0 + f1)).powi(m as i32))
}

fn smoothed_good_toulmin(fp: &Fingerprint, m: usize) -> f64 {
    let n = fp.sample_size();
    let t = m as f64 / n as f64;
    if m <= n {
        return -(1..=n).map(|j| (-t).powi(j as i32) * fp.f(j) as f64).sum::<f64>();
    }
    let r = ((0.5 * (n as f64 * t * t / (t - 1.0)).log2()).floor() as i64).max(1) as usize;
    let q = 1.0 / (1.0 + t);
    // tail[j] = Pr(L >= j), L ~ Binomial(r, q)
    let pmf: Vec<f64> = (0..=r).map(|k| binomial_pmf(r, k, q)).collect();
    let mut tail = vec![0.0; r + 2];
    for j in (0..=r).rev() {
        tail[j] = tail[j + 1] + pmf[j];
    }
    -(1..=r.min(n)).map(|j| (-t).powi(j as i32) * tail[j] * fp.f(j) as f64).sum::<f64>()
}

fn binomial_pmf(r: usize, k: usize, q: f64) -> f64 {
    let mut c = 1.0;
    for i in 0..k {
        c = c * (r - i) as f64 / (i + 1) as f64;
    }
    c * q.powi(k as i32) * (1.0 - q).powi((r - k) as i32)
}

/// Statistical knowledge network on count data (or a sorted real sample).
///
/// Hidden layer `l` sees the previous layer (the scaled fingerprint for
/// `l = 1`) concatenated with the scaled baselines. The output node is an
/// affine function of the raw baselines and the last hidden layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SknSpec {
    /// Input length: the configured sample size.
    pub n: usize,
    pub hidden: Vec<usize>,
    pub baselines: Vec<Baseline>,
    /// Baselines are divided by this before entering hidden layers.
    pub baseline_scale: f64,
}

/// Deep set on a real sample with the sample mean as an augmenting node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeepSetSpec {
    /// Widths of the per-observation network `phi`.
    pub phi: Vec<usize>,
    /// Width of the hidden layer of `rho` after pooling.
    pub rho: usize,
}

impl Default for DeepSetSpec {
    fn default() -> Self {
        Self { phi: vec![10, 5], rho: 10 }
    }
}

/// Extreme learning machine: frozen random ReLU layer, trainable output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElmSpec {
    pub n: usize,
    pub hidden: usize,
    pub baselines: Vec<Baseline>,
    pub baseline_scale: f64,
    /// Seed of the frozen hidden weights.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Architecture {
    /// `beta0 + beta1 * xbar`.
    AffineMean,
    Skn(SknSpec),
    DeepSetSkn(DeepSetSpec),
    Elm(ElmSpec),
}

impl Architecture {
    /// SKN with the default widths (50 nodes, then one).
    pub fn skn(n: usize, baselines: Vec<Baseline>, baseline_scale: f64) -> Self {
        Architecture::Skn(SknSpec {
            n,
            hidden: vec![50, 1],
            baselines,
            baseline_scale,
        })
    }

    pub fn deep_set() -> Self {
        Architecture::DeepSetSkn(DeepSetSpec::default())
    }

    pub fn name(&self) -> &'static str {
        match self {
            Architecture::AffineMean => "affine_mean",
            Architecture::Skn(_) => "skn",
            Architecture::DeepSetSkn(_) => "deep_set_skn",
            Architecture::Elm(_) => "elm",
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("{}: {msg}", self.name())));
        match self {
            Architecture::AffineMean => Ok(()),
            Architecture::Skn(s) => {
                if s.n == 0 || s.hidden.is_empty() || s.hidden.contains(&0) {
                    return bad("input length and widths must be at least 1");
                }
                if s.baselines.is_empty() {
                    return bad("at least one baseline is required");
                }
                if !(s.baseline_scale > 0.0) {
                    return bad("baseline scale must be positive");
                }
                Ok(())
            }
            Architecture::DeepSetSkn(s) => {
                if s.phi.is_empty() || s.phi.contains(&0) || s.rho == 0 {
                    return bad("widths must be at least 1");
                }
                Ok(())
            }
            Architecture::Elm(s) => {
                if s.n == 0 || s.hidden == 0 {
                    return bad("input length and width must be at least 1");
                }
                if !(s.baseline_scale > 0.0) {
                    return bad("baseline scale must be positive");
                }
                Ok(())
            }
        }
    }

    /// Whether the estimator is affine in its coefficients, so averaging
    /// coefficients averages the estimators.
    pub fn is_coefficient_affine(&self) -> bool {
        matches!(self, Architecture::AffineMean | Architecture::Elm(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Dense {
    offset: usize,
    rows: usize,
    cols: usize,
}

impl Dense {
    fn weights(&self) -> Range<usize> {
        self.offset..self.offset + self.rows * self.cols
    }

    fn bias(&self) -> Range<usize> {
        let s = self.offset + self.rows * self.cols;
        s..s + self.rows
    }

    fn len(&self) -> usize {
        self.rows * (self.cols + 1)
    }

    /// `relu(W x + b)`.
    fn forward(&self, beta: &[f64], input: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(input.len(), self.cols);
        let w = &beta[self.weights()];
        let b = &beta[self.bias()];
        out.clear();
        for r in 0..self.rows {
            let row = &w[r * self.cols..(r + 1) * self.cols];
            let z = b[r] + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>();
            out.push(z.max(0.0));
        }
    }

    /// Backpropagates `grad_out` (w.r.t. the activations `out`) into the
    /// coefficient gradient and, if requested, the input gradient.
    fn backward(
        &self,
        beta: &[f64],
        input: &[f64],
        out: &[f64],
        grad_out: &[f64],
        grad: &mut [f64],
        mut grad_in: Option<&mut [f64]>,
    ) {
        if let Some(g) = grad_in.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let wr = self.weights();
        let br = self.bias();
        for r in 0..self.rows {
            if out[r] <= 0.0 || grad_out[r] == 0.0 {
                continue;
            }
            let gz = grad_out[r];
            grad[br.start + r] += gz;
            let base = wr.start + r * self.cols;
            for c in 0..self.cols {
                grad[base + c] += gz * input[c];
            }
            if let Some(g) = grad_in.as_deref_mut() {
                for c in 0..self.cols {
                    g[c] += gz * beta[base + c];
                }
            }
        }
    }
}

/// Frozen hidden layer of an ELM.
#[derive(Clone, Debug, PartialEq)]
struct Frozen {
    layer: Dense,
    values: Vec<f64>,
}

impl Frozen {
    fn generate(spec: &ElmSpec) -> Self {
        let cols = spec.n + spec.baselines.len();
        let layer = Dense {
            offset: 0,
            rows: spec.hidden,
            cols,
        };
        let mut rng = StreamRng::seed_from_u64(spec.seed);
        let bound = 1.0 / (cols as f64).sqrt();
        let values = (0..layer.len()).map(|_| rng.random_range(-bound..bound)).collect();
        Self { layer, values }
    }
}

/// Architecture plus coefficients.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "Checkpoint", into = "Checkpoint")]
pub struct EstimatorParams {
    arch: Architecture,
    beta: Vec<f64>,
    /// Seed used to draw the random part of the initialization.
    seed: u64,
    frozen: Option<Arc<Frozen>>,
}

impl PartialEq for EstimatorParams {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.beta == other.beta && self.seed == other.seed
    }
}

/// Checkpoint format version tag.
pub const CHECKPOINT_VERSION: &str = "gammamax-estimator/1";

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: String,
    architecture: Architecture,
    seed: u64,
    beta: Vec<f64>,
}

impl TryFrom<Checkpoint> for EstimatorParams {
    type Error = Error;

    fn try_from(c: Checkpoint) -> Result<Self> {
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint version `{}`", c.version)));
        }
        EstimatorParams::from_beta(c.architecture, c.beta, c.seed)
    }
}

impl From<EstimatorParams> for Checkpoint {
    fn from(p: EstimatorParams) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION.into(),
            architecture: p.arch,
            seed: p.seed,
            beta: p.beta,
        }
    }
}

struct SknLayout {
    hidden: Vec<Dense>,
    out_bias: usize,
    out_baseline: usize,
    out_hidden: usize,
    len: usize,
}

fn skn_layout(s: &SknSpec) -> SknLayout {
    let b = s.baselines.len();
    let mut offset = 0;
    let mut input = s.n;
    let mut hidden = Vec::new();
    for &width in &s.hidden {
        let layer = Dense {
            offset,
            rows: width,
            cols: input + b,
        };
        offset += layer.len();
        hidden.push(layer);
        input = width;
    }
    let out_bias = offset;
    let out_baseline = offset + 1;
    let out_hidden = out_baseline + b;
    SknLayout {
        hidden,
        out_bias,
        out_baseline,
        out_hidden,
        len: out_hidden + input,
    }
}

struct DeepSetLayout {
    phi: Vec<Dense>,
    rho: Dense,
    fourth: Dense,
    out_bias: usize,
    out_mean: usize,
    out_hidden: usize,
    len: usize,
}

fn deep_set_layout(s: &DeepSetSpec) -> DeepSetLayout {
    let mut offset = 0;
    let mut input = 1;
    let mut phi = Vec::new();
    for &width in &s.phi {
        let layer = Dense {
            offset,
            rows: width,
            cols: input,
        };
        offset += layer.len();
        phi.push(layer);
        input = width;
    }
    let rho = Dense {
        offset,
        rows: s.rho,
        cols: input + 1,
    };
    offset += rho.len();
    let fourth = Dense {
        offset,
        rows: 1,
        cols: s.rho + 1,
    };
    offset += fourth.len();
    DeepSetLayout {
        phi,
        rho,
        fourth,
        out_bias: offset,
        out_mean: offset + 1,
        out_hidden: offset + 2,
        len: offset + 3,
    }
}

fn elm_lengths(s: &ElmSpec) -> (usize, usize, usize, usize) {
    // (bias, hidden start, baseline start, total)
    (0, 1, 1 + s.hidden, 1 + s.hidden + s.baselines.len())
}

fn parameter_count(arch: &Architecture) -> usize {
    match arch {
        Architecture::AffineMean => 2,
        Architecture::Skn(s) => skn_layout(s).len,
        Architecture::DeepSetSkn(s) => deep_set_layout(s).len,
        Architecture::Elm(s) => elm_lengths(s).3,
    }
}

fn uniform_fill(beta: &mut [f64], layer: &Dense, rng: &mut StreamRng) {
    let bound = 1.0 / (layer.cols as f64).sqrt();
    for v in &mut beta[layer.offset..layer.offset + layer.len()] {
        *v = rng.random_range(-bound..bound);
    }
}

impl EstimatorParams {
    /// Initialization that reproduces the designated existing estimator:
    /// the sample mean for the affine and deep-set families, the average of
    /// the baselines for SKN and ELM. Other weights are drawn uniformly on
    /// `+-1/sqrt(fan_in)` from `seed`.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = StreamRng::seed_from_u64(combine(seed, 0x1417));
        let mut beta = vec![0.0; parameter_count(&arch)];
        match &arch {
            Architecture::AffineMean => beta[1] = 1.0,
            Architecture::Skn(s) => {
                let l = skn_layout(s);
                for layer in &l.hidden {
                    uniform_fill(&mut beta, layer, &mut rng);
                }
                let share = 1.0 / s.baselines.len() as f64;
                beta[l.out_baseline..l.out_hidden].iter_mut().for_each(|v| *v = share);
            }
            Architecture::DeepSetSkn(s) => {
                let l = deep_set_layout(s);
                for layer in l.phi.iter().chain([&l.rho, &l.fourth]) {
                    uniform_fill(&mut beta, layer, &mut rng);
                }
                beta[l.out_mean] = 1.0;
            }
            Architecture::Elm(s) => {
                let (_, _, base, total) = elm_lengths(s);
                if !s.baselines.is_empty() {
                    let share = 1.0 / s.baselines.len() as f64;
                    beta[base..total].iter_mut().for_each(|v| *v = share);
                }
            }
        }
        Self::from_beta(arch, beta, seed)
    }

    pub fn affine(beta0: f64, beta1: f64) -> Self {
        Self::from_beta(Architecture::AffineMean, vec![beta0, beta1], 0).unwrap()
    }

    pub fn from_beta(arch: Architecture, beta: Vec<f64>, seed: u64) -> Result<Self> {
        arch.validate()?;
        let expected = parameter_count(&arch);
        if beta.len() != expected {
            return Err(Error::Config(format!(
                "{} expects {expected} coefficients, found {}",
                arch.name(),
                beta.len()
            )));
        }
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("coefficient vector".into()));
        }
        let frozen = match &arch {
            Architecture::Elm(s) => Some(Arc::new(Frozen::generate(s))),
            _ => None,
        };
        Ok(Self {
            arch,
            beta,
            seed,
            frozen,
        })
    }

    /// Same architecture with new coefficients.
    pub fn with_beta(&self, beta: Vec<f64>) -> Result<Self> {
        if beta.len() != self.beta.len() {
            return Err(Error::GridMismatch {
                expected: self.beta.len(),
                found: beta.len(),
            });
        }
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("coefficient vector".into()));
        }
        Ok(Self {
            beta,
            ..self.clone()
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Named slices of the flat coefficient vector.
    pub fn layout(&self) -> Vec<(String, Range<usize>)> {
        let dense = |name: String, d: &Dense| vec![(format!("{name}.weight"), d.weights()), (format!("{name}.bias"), d.bias())];
        match &self.arch {
            Architecture::AffineMean => vec![("beta0".into(), 0..1), ("beta1".into(), 1..2)],
            Architecture::Skn(s) => {
                let l = skn_layout(s);
                let mut out: Vec<_> = l.hidden.iter().enumerate().flat_map(|(i, d)| dense(format!("hidden{}", i + 1), d)).collect();
                out.push(("output.bias".into(), l.out_bias..l.out_bias + 1));
                out.push(("output.baseline".into(), l.out_baseline..l.out_hidden));
                out.push(("output.hidden".into(), l.out_hidden..l.len));
                out
            }
            Architecture::DeepSetSkn(s) => {
                let l = deep_set_layout(s);
                let mut out: Vec<_> = l.phi.iter().enumerate().flat_map(|(i, d)| dense(format!("phi{}", i + 1), d)).collect();
                out.extend(dense("rho".into(), &l.rho));
                out.extend(dense("fourth".into(), &l.fourth));
                out.push(("output.bias".into(), l.out_bias..l.out_bias + 1));
                out.push(("output.mean".into(), l.out_mean..l.out_mean + 1));
                out.push(("output.hidden".into(), l.out_hidden..l.len));
                out
            }
            Architecture::Elm(s) => {
                let (_, hid, base, total) = elm_lengths(s);
                vec![
                    ("output.bias".into(), 0..1),
                    ("output.hidden".into(), hid..base),
                    ("output.baseline".into(), base..total),
                ]
            }
        }
    }

    /// Slice of the coefficients with the given layout name.
    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        self.layout().into_iter().find(|(n, _)| n == name).map(|(_, r)| &self.beta[r])
    }

    /// Coefficients that gradient steps may change. Everything except the
    /// frozen ELM layer, which is not part of `beta`.
    pub fn trainable(&self) -> Range<usize> {
        0..self.beta.len()
    }

    pub fn forward(&self, x: &Observation) -> Result<f64> {
        let y = self.eval(x, None)?;
        if !y.is_finite() {
            return Err(Error::NonFinite(format!("{} output", self.arch.name())));
        }
        Ok(y)
    }

    /// Gradient of `(forward(x) - target)^2` with respect to `beta`.
    pub fn grad_loss(&self, x: &Observation, target: f64) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.beta.len()];
        self.accumulate_grad(x, target, 1.0, &mut grad)?;
        Ok(grad)
    }

    /// Adds `weight * grad_loss(x, target)` to `grad`; returns the squared
    /// error.
    pub fn accumulate_grad(&self, x: &Observation, target: f64, weight: f64, grad: &mut [f64]) -> Result<f64> {
        let mut dy = vec![0.0; self.beta.len()];
        let y = self.eval(x, Some(&mut dy))?;
        if !y.is_finite() {
            return Err(Error::NonFinite(format!("{} output", self.arch.name())));
        }
        let r = y - target;
        let f = 2.0 * r * weight;
        for (g, d) in grad.iter_mut().zip(&dy) {
            *g += f * d;
        }
        Ok(r * r)
    }

    /// Output, and optionally its gradient written into `dy`.
    fn eval(&self, x: &Observation, dy: Option<&mut [f64]>) -> Result<f64> {
        match &self.arch {
            Architecture::AffineMean => {
                let Observation::RealSample { values } = x else {
                    return Err(Error::RepresentationMismatch("affine rule needs a real sample".into()));
                };
                if values.is_empty() {
                    return Err(Error::InvalidObservation("empty sample".into()));
                }
                let xbar = sample_mean(values);
                if let Some(d) = dy {
                    d[0] = 1.0;
                    d[1] = xbar;
                }
                Ok(self.beta[0] + self.beta[1] * xbar)
            }
            Architecture::Skn(s) => self.eval_skn(s, x, dy),
            Architecture::DeepSetSkn(s) => self.eval_deep_set(s, x, dy),
            Architecture::Elm(s) => self.eval_elm(s, x, dy),
        }
    }

    fn eval_skn(&self, s: &SknSpec, x: &Observation, dy: Option<&mut [f64]>) -> Result<f64> {
        let l = skn_layout(s);
        let features = input_features(x, s.n)?;
        let raw: Vec<f64> = s.baselines.iter().map(|b| b.eval(x)).collect::<Result<_>>()?;
        let scaled: Vec<f64> = raw.iter().map(|v| v / s.baseline_scale).collect();
        let beta = &self.beta;

        let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(l.hidden.len());
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(l.hidden.len());
        let mut current = features;
        for layer in &l.hidden {
            let mut input = current;
            input.extend_from_slice(&scaled);
            let mut out = Vec::with_capacity(layer.rows);
            layer.forward(beta, &input, &mut out);
            inputs.push(input);
            current = out.clone();
            acts.push(out);
        }
        let last = acts.last().unwrap();
        let mut y = beta[l.out_bias];
        for (w, b) in beta[l.out_baseline..l.out_hidden].iter().zip(&raw) {
            y += w * b;
        }
        for (w, a) in beta[l.out_hidden..l.len].iter().zip(last) {
            y += w * a;
        }

        if let Some(d) = dy {
            d.iter_mut().for_each(|v| *v = 0.0);
            d[l.out_bias] = 1.0;
            d[l.out_baseline..l.out_hidden].copy_from_slice(&raw);
            d[l.out_hidden..l.len].copy_from_slice(last);
            let mut grad_out: Vec<f64> = beta[l.out_hidden..l.len].to_vec();
            for i in (0..l.hidden.len()).rev() {
                let layer = &l.hidden[i];
                if i == 0 {
                    layer.backward(beta, &inputs[i], &acts[i], &grad_out, d, None);
                } else {
                    let mut grad_in = vec![0.0; layer.cols];
                    layer.backward(beta, &inputs[i], &acts[i], &grad_out, d, Some(&mut grad_in));
                    grad_in.truncate(l.hidden[i - 1].rows);
                    grad_out = grad_in;
                }
            }
        }
        Ok(y)
    }

    fn eval_deep_set(&self, s: &DeepSetSpec, x: &Observation, dy: Option<&mut [f64]>) -> Result<f64> {
        let Observation::RealSample { values } = x else {
            return Err(Error::RepresentationMismatch("deep set needs a real sample".into()));
        };
        if values.is_empty() {
            return Err(Error::InvalidObservation("empty sample".into()));
        }
        let l = deep_set_layout(s);
        let beta = &self.beta;
        // Sorting fixes the summation order, so the output is exactly
        // invariant under permutations of the sample.
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let xbar = sample_mean(&sorted);

        let width = *s.phi.last().unwrap();
        let mut pooled = vec![0.0; width];
        // Per observation: inputs and activations of each phi layer.
        let mut trace: Vec<Vec<(Vec<f64>, Vec<f64>)>> = Vec::with_capacity(sorted.len());
        for &xi in &sorted {
            let mut layers = Vec::with_capacity(l.phi.len());
            let mut current = vec![xi];
            for layer in &l.phi {
                let mut out = Vec::with_capacity(layer.rows);
                layer.forward(beta, &current, &mut out);
                layers.push((current, out.clone()));
                current = out;
            }
            for (p, v) in pooled.iter_mut().zip(&current) {
                *p += v;
            }
            trace.push(layers);
        }
        let mut rho_in = pooled;
        rho_in.push(xbar);
        let mut h3 = Vec::with_capacity(s.rho);
        l.rho.forward(beta, &rho_in, &mut h3);
        let mut fourth_in = h3.clone();
        fourth_in.push(xbar);
        let mut h4 = Vec::with_capacity(1);
        l.fourth.forward(beta, &fourth_in, &mut h4);
        let y = beta[l.out_bias] + beta[l.out_mean] * xbar + beta[l.out_hidden] * h4[0];

        if let Some(d) = dy {
            d.iter_mut().for_each(|v| *v = 0.0);
            d[l.out_bias] = 1.0;
            d[l.out_mean] = xbar;
            d[l.out_hidden] = h4[0];
            let mut g_fourth_in = vec![0.0; l.fourth.cols];
            l.fourth.backward(beta, &fourth_in, &h4, &[beta[l.out_hidden]], d, Some(&mut g_fourth_in));
            let g_h3 = &g_fourth_in[..s.rho];
            let mut g_rho_in = vec![0.0; l.rho.cols];
            l.rho.backward(beta, &rho_in, &h3, g_h3, d, Some(&mut g_rho_in));
            let g_pooled = &g_rho_in[..width];
            for layers in &trace {
                let mut grad_out = g_pooled.to_vec();
                for (i, layer) in l.phi.iter().enumerate().rev() {
                    let (input, out) = &layers[i];
                    if i == 0 {
                        layer.backward(beta, input, out, &grad_out, d, None);
                    } else {
                        let mut grad_in = vec![0.0; layer.cols];
                        layer.backward(beta, input, out, &grad_out, d, Some(&mut grad_in));
                        grad_out = grad_in;
                    }
                }
            }
        }
        Ok(y)
    }

    fn eval_elm(&self, s: &ElmSpec, x: &Observation, dy: Option<&mut [f64]>) -> Result<f64> {
        let frozen = self.frozen.as_ref().expect("ELM parameters carry their frozen layer");
        let (bias, hid, base, total) = elm_lengths(s);
        let mut input = input_features(x, s.n)?;
        let raw: Vec<f64> = s.baselines.iter().map(|b| b.eval(x)).collect::<Result<_>>()?;
        input.extend(raw.iter().map(|v| v / s.baseline_scale));
        let mut h = Vec::with_capacity(s.hidden);
        frozen.layer.forward(&frozen.values, &input, &mut h);
        let beta = &self.beta;
        let mut y = beta[bias];
        for (w, a) in beta[hid..base].iter().zip(&h) {
            y += w * a;
        }
        for (w, b) in beta[base..total].iter().zip(&raw) {
            y += w * b;
        }
        if let Some(d) = dy {
            d[bias] = 1.0;
            d[hid..base].copy_from_slice(&h);
            d[base..total].copy_from_slice(&raw);
        }
        Ok(y)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Network input: the fingerprint divided by `n` for count data, the sorted
/// sample for real data. The fingerprint is zero-padded to length `n`.
fn input_features(x: &Observation, n: usize) -> Result<Vec<f64>> {
    match x {
        Observation::CountFingerprint(fp) => {
            if fp.sample_size() > n {
                return Err(Error::RepresentationMismatch(format!(
                    "sample size {} exceeds the configured input length {n}",
                    fp.sample_size()
                )));
            }
            let scale = n as f64;
            let mut v: Vec<f64> = fp.freq().iter().map(|f| *f as f64 / scale).collect();
            v.resize(n, 0.0);
            Ok(v)
        }
        Observation::RealSample { values } => {
            if values.len() != n {
                return Err(Error::RepresentationMismatch(format!(
                    "expected {n} observations, found {}",
                    values.len()
                )));
            }
            let mut v = values.clone();
            v.sort_by(f64::total_cmp);
            Ok(v)
        }
    }
}

impl Estimator for EstimatorParams {
    fn estimate(&self, x: &Observation) -> Result<f64> {
        self.forward(x)
    }

    fn exact_risk(&self, task: &Task, p: &Distribution) -> Option<Result<f64>> {
        match (&self.arch, task) {
            (Architecture::AffineMean, Task::Mean { n }) => Some(exact_risk_affine(self.beta[0], self.beta[1], p, *n)),
            _ => None,
        }
    }
}

/// Wraps a baseline as a standalone estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineEstimator(pub Baseline);

impl Estimator for BaselineEstimator {
    fn estimate(&self, x: &Observation) -> Result<f64> {
        self.0.eval(x)
    }

    fn exact_risk(&self, task: &Task, p: &Distribution) -> Option<Result<f64>> {
        match (&self.0, task) {
            (Baseline::SampleMean, Task::Mean { n }) => Some(exact_risk_affine(0.0, 1.0, p, *n)),
            _ => None,
        }
    }
}

/// A randomized estimator: draw a member with the given probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureEstimator {
    members: Vec<(EstimatorParams, f64)>,
}

impl MixtureEstimator {
    pub fn new(members: Vec<(EstimatorParams, f64)>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidDistribution("empty mixture".into()));
        }
        if members.iter().any(|(_, w)| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDistribution("mixture weights must be non-negative".into()));
        }
        let total: f64 = members.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDistribution(format!("mixture weights sum to {total}")));
        }
        Ok(Self { members })
    }

    pub fn point(d: EstimatorParams) -> Self {
        Self {
            members: vec![(d, 1.0)],
        }
    }

    pub fn members(&self) -> &[(EstimatorParams, f64)] {
        &self.members
    }

    /// Adds `d` with weight `1/t`, shrinking the others by `(t-1)/t`.
    pub fn push_average(&mut self, d: EstimatorParams, t: usize) {
        let keep = (t as f64 - 1.0) / t as f64;
        for (_, w) in self.members.iter_mut() {
            *w *= keep;
        }
        self.members.push((d, 1.0 / t as f64));
        let total: f64 = self.members.iter().map(|(_, w)| w).sum();
        for (_, w) in self.members.iter_mut() {
            *w /= total;
        }
    }
}

impl Estimator for MixtureEstimator {
    fn estimate(&self, _: &Observation) -> Result<f64> {
        Err(Error::Unsupported(
            "a mixture is randomized; evaluate its members or average_mixture".into(),
        ))
    }

    fn exact_risk(&self, task: &Task, p: &Distribution) -> Option<Result<f64>> {
        let mut total = 0.0;
        for (d, w) in &self.members {
            match d.exact_risk(task, p)? {
                Ok(r) => total += w * r,
                Err(e) => return Some(Err(e)),
            }
        }
        Some(Ok(total))
    }

    fn members(&self) -> Option<Vec<(&dyn Estimator, f64)>> {
        Some(self.members.iter().map(|(d, w)| (d as &dyn Estimator, *w)).collect())
    }
}

/// The deterministic estimator whose coefficients are the mixture average.
pub fn average_mixture(mix: &MixtureEstimator) -> Result<EstimatorParams> {
    let (first, _) = &mix.members[0];
    if !first.arch.is_coefficient_affine() {
        return Err(Error::Unsupported(format!(
            "{} is not affine in its coefficients, so averaging coefficients does not average estimators",
            first.arch.name()
        )));
    }
    if mix.members.iter().any(|(d, _)| d.arch != first.arch) {
        return Err(Error::Unsupported("mixture members have different architectures".into()));
    }
    let mut beta = vec![0.0; first.beta.len()];
    for (d, w) in &mix.members {
        for (b, v) in beta.iter_mut().zip(&d.beta) {
            *b += w * v;
        }
    }
    first.with_beta(beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngSpec;

    fn counts(c: &[u32]) -> Observation {
        Observation::counts(c.iter().copied())
    }

    #[test]
    fn baseline_examples() {
        let h = baseline("plugin_mm", &counts(&[5, 5]), 0).unwrap();
        assert!((h - (2f64.ln() + 0.05)).abs() < 1e-15);
        assert!((h - 0.7431).abs() < 1e-4);
        assert!((baseline("sample_mean", &Observation::real(vec![0.1, 0.3, 0.5]), 0).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(baseline("chao", &counts(&[2, 3, 4]), 200).unwrap(), 0.0);
        assert!(matches!(baseline("jvhw", &counts(&[1]), 0), Err(Error::UnknownBaseline(_))));
        assert!(baseline("chao", &Observation::real(vec![0.5]), 1).is_err());
    }

    #[test]
    fn chao_and_good_toulmin_formulas() {
        // f1 = 2, f2 = 1, n = 2 + 2 + 3 = 7.
        let x = counts(&[1, 1, 2, 3]);
        let f0: f64 = 4.0 / 2.0;
        let want = f0 * (1.0 - (1.0 - 2.0 / (7.0 * f0 + 2.0)).powi(5));
        assert!((baseline("chao", &x, 5).unwrap() - want).abs() < 1e-14);
        // m <= n: plain Good-Toulmin, t = 1/7.
        let t: f64 = 1.0 / 7.0;
        let gt: f64 = t * 2.0 - t * t * 1.0 + t * t * t * 1.0;
        assert!((baseline("sgt", &x, 1).unwrap() - gt).abs() < 1e-14);
    }

    #[test]
    fn smoothed_good_toulmin_tail_weights() {
        // n = 100, m = 200: t = 2, r = floor(0.5 log2(400)) = 4, q = 1/3.
        let mut c = vec![1u32; 40];
        c.extend([2; 10]);
        c.extend([3; 5]);
        c.extend([5; 3]);
        c.push(10);
        let x = counts(&c);
        let q: f64 = 1.0 / 3.0;
        let tail = |j: usize| -> f64 { (j..=4).map(|k| binomial_pmf(4, k, q)).sum() };
        let f = [40.0, 10.0, 5.0, 0.0];
        let want: f64 = -(1..=4).map(|j| (-2f64).powi(j as i32) * tail(j) * f[j - 1]).sum::<f64>();
        assert!((baseline("sgt", &x, 200).unwrap() - want).abs() < 1e-12);
        assert!((tail(1) - (1.0 - (2.0f64 / 3.0).powi(4))).abs() < 1e-15);
    }

    #[test]
    fn affine_forward_and_gradient() {
        let d = EstimatorParams::affine(0.0, 1.0);
        let x = Observation::real(vec![0.2, 0.4]);
        assert!((d.forward(&x).unwrap() - 0.3).abs() < 1e-15);
        let g = d.grad_loss(&x, d.forward(&x).unwrap()).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn affine_gradient_expectation() {
        // E[d/d beta1 (xbar - p)^2] at beta = (0, 1) is 2 E[(xbar - p) xbar] = 2 Var(xbar).
        let d = EstimatorParams::affine(0.0, 1.0);
        let p = Distribution::bernoulli(0.5).unwrap();
        let task = Task::Mean { n: 10 };
        let sampler = task.sampler(&p).unwrap();
        let rng = RngSpec::new(2);
        let reps = 200_000;
        let mut acc = 0.0;
        for r in 0..reps {
            let (x, t) = sampler.draw(&mut rng.stream(1, 0, r));
            acc += d.grad_loss(&x, t).unwrap()[1];
        }
        let mean = acc / reps as f64;
        assert!((mean - 0.05).abs() < 0.0015, "{mean}");
    }

    #[test]
    fn skn_initialization_reproduces_baseline_average() {
        let m = 200;
        let arch = Architecture::skn(
            100,
            vec![Baseline::SmoothedGoodToulmin { m }, Baseline::ChaoExtrapolation { m }],
            m as f64,
        );
        let d = EstimatorParams::init(arch, 4).unwrap();
        let x = counts(&[1, 1, 1, 2, 2, 3, 5, 85]);
        let a = baseline("sgt", &x, m).unwrap();
        let b = baseline("chao", &x, m).unwrap();
        assert_eq!(d.forward(&x).unwrap(), (a + b) / 2.0);
    }

    #[test]
    fn layout_covers_every_coefficient() {
        let archs = vec![
            Architecture::AffineMean,
            Architecture::skn(20, vec![Baseline::PluginMillerMadow], 3.0),
            Architecture::deep_set(),
            Architecture::Elm(ElmSpec {
                n: 10,
                hidden: 7,
                baselines: vec![Baseline::SampleMean],
                baseline_scale: 1.0,
                seed: 3,
            }),
        ];
        for arch in archs {
            let d = EstimatorParams::init(arch, 1).unwrap();
            let mut covered = vec![0; d.beta().len()];
            for (_, r) in d.layout() {
                for i in r {
                    covered[i] += 1;
                }
            }
            assert!(covered.iter().all(|c| *c == 1), "{}", d.architecture().name());
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let arch = Architecture::Elm(ElmSpec {
            n: 10,
            hidden: 5,
            baselines: vec![Baseline::SampleMean],
            baseline_scale: 1.0,
            seed: 9,
        });
        let d = EstimatorParams::init(arch, 2).unwrap();
        let json = d.to_json().unwrap();
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(value["version"], CHECKPOINT_VERSION);
        let back: EstimatorParams = serde_json::from_str(&json).unwrap();
        let x = Observation::real((0..10).map(|i| i as f64 / 10.0).collect());
        assert_eq!(back.forward(&x).unwrap(), d.forward(&x).unwrap());
    }

    #[test]
    fn mixture_average() {
        let mix = MixtureEstimator::new(vec![
            (EstimatorParams::affine(0.0, 1.0), 0.5),
            (EstimatorParams::affine(0.2, 0.5), 0.5),
        ])
        .unwrap();
        let avg = average_mixture(&mix).unwrap();
        assert!((avg.beta()[0] - 0.1).abs() < 1e-15 && (avg.beta()[1] - 0.75).abs() < 1e-15);
        let single = MixtureEstimator::point(EstimatorParams::affine(0.3, 0.2));
        assert_eq!(average_mixture(&single).unwrap(), EstimatorParams::affine(0.3, 0.2));
        let deep = MixtureEstimator::point(EstimatorParams::init(Architecture::deep_set(), 0).unwrap());
        assert!(matches!(average_mixture(&deep), Err(Error::Unsupported(_))));
        assert!(MixtureEstimator::new(vec![(EstimatorParams::affine(0.0, 1.0), 0.7)]).is_err());
    }

    #[test]
    fn representation_mismatch() {
        let d = EstimatorParams::affine(0.0, 1.0);
        assert!(matches!(d.forward(&counts(&[1, 2])), Err(Error::RepresentationMismatch(_))));
        let skn = EstimatorParams::init(Architecture::skn(3, vec![Baseline::PluginMillerMadow], 1.0), 0).unwrap();
        assert!(skn.forward(&counts(&[2, 2])).is_err());
    }
}
