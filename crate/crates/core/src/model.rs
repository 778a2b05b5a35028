//! Distributions, observed data, functionals of distributions, grids and
//! the moment constraints that define the admissible priors.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{combine, hash_f64s};

/// Tolerance used for normalization checks and distribution equality.
pub const EQ_TOL: f64 = 1e-12;

/// Closed interval `[lo, hi]` containing the support of a point law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const UNIT: Interval = Interval { lo: 0.0, hi: 1.0 };

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidDistribution(format!(
                "interval [{lo}, {hi}] is empty or not finite"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

impl Default for Interval {
    fn default() -> Self {
        Self::UNIT
    }
}

/// Finite-support law on an interval of the real line.
#[derive(Clone, Debug)]
pub struct PointLaw {
    support: Vec<f64>,
    weights: Vec<f64>,
    interval: Interval,
    cdf: Vec<f64>,
}

/// Multinomial law with strictly positive category probabilities.
#[derive(Clone, Debug)]
pub struct Multinomial {
    probs: Vec<f64>,
    cdf: Vec<f64>,
}

/// A data-generating distribution: one element of the model space.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "RawDistribution", into = "RawDistribution")]
pub enum Distribution {
    PointSupport(PointLaw),
    Multinomial(Multinomial),
}

fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect();
    if let Some(last) = cdf.last_mut() {
        *last = 1.0;
    }
    cdf
}

/// Divides by `total` unless it is 1 up to rounding, so that normalized
/// weights keep their bits across a serialization round trip.
fn renormalize(w: f64, total: f64) -> f64 {
    if (total - 1.0).abs() <= 1e-14 {
        w
    } else {
        w / total
    }
}

fn check_weights(weights: &[f64], what: &str) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::InvalidDistribution(format!("{what} is empty")));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::InvalidDistribution(format!(
            "{what} contains an invalid entry {w}"
        )));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > EQ_TOL {
        return Err(Error::InvalidDistribution(format!(
            "{what} sums to {total}, not 1"
        )));
    }
    Ok(total)
}

impl PointLaw {
    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    pub fn mean(&self) -> f64 {
        self.support.iter().zip(&self.weights).map(|(x, w)| x * w).sum()
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.support
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * (x - mean) * (x - mean))
            .sum()
    }

    /// Index of the support point selected by a uniform draw `u` in [0, 1).
    #[inline]
    pub fn locate(&self, u: f64) -> usize {
        self.cdf.partition_point(|c| *c <= u).min(self.support.len() - 1)
    }
}

impl Multinomial {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn categories(&self) -> usize {
        self.probs.len()
    }

    /// Category selected by a uniform draw `u` in [0, 1).
    #[inline]
    pub fn locate(&self, u: f64) -> usize {
        self.cdf.partition_point(|c| *c <= u).min(self.probs.len() - 1)
    }
}

impl Distribution {
    /// A law on `[0, 1]` with the given strictly increasing support.
    pub fn point_support(support: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        Self::point_support_on(support, weights, Interval::UNIT)
    }

    /// A law on `interval`; zero-weight atoms are dropped.
    pub fn point_support_on(support: Vec<f64>, weights: Vec<f64>, interval: Interval) -> Result<Self> {
        if support.len() != weights.len() {
            return Err(Error::InvalidDistribution(format!(
                "{} support points but {} weights",
                support.len(),
                weights.len()
            )));
        }
        let total = check_weights(&weights, "weights")?;
        for pair in support.windows(2) {
            if !(pair[0] < pair[1]) {
                return Err(Error::InvalidDistribution(
                    "support points must be strictly increasing".into(),
                ));
            }
        }
        if let Some(x) = support.iter().find(|x| !interval.contains(**x)) {
            return Err(Error::InvalidDistribution(format!(
                "support point {x} outside [{}, {}]",
                interval.lo, interval.hi
            )));
        }
        let (support, weights): (Vec<f64>, Vec<f64>) = support
            .into_iter()
            .zip(weights)
            .filter(|(_, w)| *w > 0.0)
            .map(|(x, w)| (x, renormalize(w, total)))
            .unzip();
        let cdf = cumulative(&weights);
        Ok(Distribution::PointSupport(PointLaw {
            support,
            weights,
            interval,
            cdf,
        }))
    }

    /// Builds a point law from unordered atoms, merging repeated locations.
    pub fn from_atoms(atoms: &[(f64, f64)], interval: Interval) -> Result<Self> {
        let mut sorted: Vec<(f64, f64)> = atoms.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut support: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut weights: Vec<f64> = Vec::with_capacity(sorted.len());
        for (x, w) in sorted {
            match support.last() {
                Some(last) if *last == x => *weights.last_mut().unwrap() += w,
                _ => {
                    support.push(x);
                    weights.push(w);
                }
            }
        }
        Self::point_support_on(support, weights, interval)
    }

    pub fn point_mass(x: f64) -> Result<Self> {
        Self::point_support(vec![x], vec![1.0])
    }

    /// Two-point law on {0, 1}.
    pub fn bernoulli(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidDistribution(format!("Bernoulli parameter {p}")));
        }
        Self::point_support(vec![0.0, 1.0], vec![1.0 - p, p])
    }

    /// Multinomial law. Categories with probability below the equality
    /// tolerance are removed when their total mass is itself negligible;
    /// otherwise construction fails.
    pub fn multinomial(probs: Vec<f64>) -> Result<Self> {
        let total = check_weights(&probs, "category probabilities")?;
        let dropped: f64 = probs.iter().filter(|p| **p < EQ_TOL).sum();
        if dropped >= EQ_TOL {
            return Err(Error::InvalidDistribution(format!(
                "categories below {EQ_TOL} carry total mass {dropped}"
            )));
        }
        let kept: Vec<f64> = probs.into_iter().filter(|p| *p >= EQ_TOL).collect();
        if kept.is_empty() {
            return Err(Error::InvalidDistribution("no category has positive mass".into()));
        }
        let kept_total: f64 = kept.iter().sum::<f64>().max(total - dropped);
        let probs: Vec<f64> = kept.into_iter().map(|p| renormalize(p, kept_total)).collect();
        let cdf = cumulative(&probs);
        Ok(Distribution::Multinomial(Multinomial { probs, cdf }))
    }

    /// Normalizes strictly positive masses into a multinomial law.
    pub fn multinomial_from_masses(masses: &[f64]) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::InvalidDistribution(format!("masses sum to {total}")));
        }
        let mut probs: Vec<f64> = masses.iter().map(|m| m / total).collect();
        let renorm: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= renorm);
        Self::multinomial(probs)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Distribution::PointSupport(_) => "point_support",
            Distribution::Multinomial(_) => "multinomial",
        }
    }

    /// Support size (atoms or categories).
    pub fn size(&self) -> usize {
        match self {
            Distribution::PointSupport(p) => p.support.len(),
            Distribution::Multinomial(m) => m.probs.len(),
        }
    }

    pub fn as_point_law(&self) -> Option<&PointLaw> {
        match self {
            Distribution::PointSupport(p) => Some(p),
            Distribution::Multinomial(_) => None,
        }
    }

    pub fn as_multinomial(&self) -> Option<&Multinomial> {
        match self {
            Distribution::Multinomial(m) => Some(m),
            Distribution::PointSupport(_) => None,
        }
    }

    /// Equality within [`EQ_TOL`] on every support point and weight.
    pub fn approx_eq(&self, other: &Distribution) -> bool {
        fn close(a: &[f64], b: &[f64]) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= EQ_TOL)
        }
        match (self, other) {
            (Distribution::PointSupport(a), Distribution::PointSupport(b)) => {
                a.interval == b.interval && close(&a.support, &b.support) && close(&a.weights, &b.weights)
            }
            (Distribution::Multinomial(a), Distribution::Multinomial(b)) => close(&a.probs, &b.probs),
            _ => false,
        }
    }

    /// Hash of the exact bit pattern, used for seeding per-state computations.
    pub fn bits_hash(&self) -> u64 {
        match self {
            Distribution::PointSupport(p) => hash_f64s(hash_f64s(1, &p.support), &p.weights),
            Distribution::Multinomial(m) => hash_f64s(2, &m.probs),
        }
    }

    fn bucket(&self) -> (u8, usize) {
        match self {
            Distribution::PointSupport(p) => (0, p.support.len()),
            Distribution::Multinomial(m) => (1, m.probs.len()),
        }
    }
}

impl PartialEq for Distribution {
    fn eq(&self, other: &Self) -> bool {
        self.approx_eq(other)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum RawDistribution {
    PointSupport {
        support: Vec<f64>,
        weights: Vec<f64>,
        #[serde(default)]
        interval: Interval,
    },
    Multinomial {
        probs: Vec<f64>,
    },
}

impl TryFrom<RawDistribution> for Distribution {
    type Error = Error;

    fn try_from(raw: RawDistribution) -> Result<Self> {
        match raw {
            RawDistribution::PointSupport {
                support,
                weights,
                interval,
            } => Distribution::point_support_on(support, weights, interval),
            RawDistribution::Multinomial { probs } => Distribution::multinomial(probs),
        }
    }
}

impl From<Distribution> for RawDistribution {
    fn from(d: Distribution) -> Self {
        match d {
            Distribution::PointSupport(p) => RawDistribution::PointSupport {
                support: p.support,
                weights: p.weights,
                interval: p.interval,
            },
            Distribution::Multinomial(m) => RawDistribution::Multinomial { probs: m.probs },
        }
    }
}

/// Count data reduced to its frequency-of-frequencies profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    /// `freq[j - 1]` is the number of categories observed exactly `j` times.
    freq: Vec<u32>,
    /// Positive counts of the observed categories.
    counts: Vec<u32>,
}

impl Fingerprint {
    /// Builds the fingerprint of a count vector; zero counts are truncated.
    pub fn from_counts<I: IntoIterator<Item = u32>>(counts: I) -> Self {
        let counts: Vec<u32> = counts.into_iter().filter(|c| *c > 0).collect();
        let n: usize = counts.iter().map(|c| *c as usize).sum();
        let mut freq = vec![0u32; n];
        for c in &counts {
            freq[*c as usize - 1] += 1;
        }
        Self { freq, counts }
    }

    /// Sample size `n = sum_j j f_j`.
    pub fn sample_size(&self) -> usize {
        self.freq.len()
    }

    /// `f_j` for `j >= 1`; zero beyond the sample size.
    pub fn f(&self, j: usize) -> u32 {
        if j == 0 {
            0
        } else {
            self.freq.get(j - 1).copied().unwrap_or(0)
        }
    }

    pub fn freq(&self) -> &[u32] {
        &self.freq
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Number of distinct observed categories.
    pub fn observed_categories(&self) -> usize {
        self.counts.len()
    }
}

/// Observed data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observation {
    RealSample { values: Vec<f64> },
    CountFingerprint(Fingerprint),
}

impl Observation {
    pub fn real(values: Vec<f64>) -> Self {
        Observation::RealSample { values }
    }

    /// Checks a real sample against the interval of the model.
    pub fn real_in(values: Vec<f64>, interval: Interval) -> Result<Self> {
        if let Some(x) = values.iter().find(|x| !interval.contains(**x)) {
            return Err(Error::InvalidObservation(format!(
                "value {x} outside [{}, {}]",
                interval.lo, interval.hi
            )));
        }
        Ok(Self::real(values))
    }

    pub fn counts<I: IntoIterator<Item = u32>>(counts: I) -> Self {
        Observation::CountFingerprint(Fingerprint::from_counts(counts))
    }

    pub fn sample_size(&self) -> usize {
        match self {
            Observation::RealSample { values } => values.len(),
            Observation::CountFingerprint(fp) => fp.sample_size(),
        }
    }
}

/// A real-valued summary of a distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Functional {
    Mean,
    ShannonEntropy,
    /// Unconditional expected number of categories unseen in a sample of
    /// size `n` that appear in a further sample of size `m`.
    ExpectedNewCategories { n: usize, m: usize },
    Indicator { inner: Box<Functional>, lo: f64, hi: f64 },
    Power { inner: Box<Functional>, exponent: f64 },
    Negated { inner: Box<Functional> },
}

/// Maximum number of nested wrappers (indicator, power, negation).
pub const MAX_COMPOSITION_DEPTH: usize = 2;

impl Functional {
    pub fn indicator(inner: Functional, lo: f64, hi: f64) -> Self {
        Functional::Indicator {
            inner: Box::new(inner),
            lo,
            hi,
        }
    }

    pub fn power(inner: Functional, exponent: f64) -> Self {
        Functional::Power {
            inner: Box::new(inner),
            exponent,
        }
    }

    pub fn negated(inner: Functional) -> Self {
        Functional::Negated { inner: Box::new(inner) }
    }

    pub fn depth(&self) -> usize {
        match self {
            Functional::Mean | Functional::ShannonEntropy | Functional::ExpectedNewCategories { .. } => 0,
            Functional::Indicator { inner, .. } | Functional::Power { inner, .. } | Functional::Negated { inner } => {
                1 + inner.depth()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth() > MAX_COMPOSITION_DEPTH {
            return Err(Error::InvalidFunctional(format!(
                "{self} nests deeper than {MAX_COMPOSITION_DEPTH}"
            )));
        }
        if let Functional::Indicator { lo, hi, .. } = self {
            if !(lo <= hi) {
                return Err(Error::InvalidFunctional(format!("empty interval [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Evaluates the functional at `dist`.
    pub fn eval(&self, dist: &Distribution) -> Result<f64> {
        let mismatch = || Error::VariantMismatch {
            functional: self.to_string(),
            kind: dist.kind(),
        };
        let value = match self {
            Functional::Mean => dist.as_point_law().ok_or_else(mismatch)?.mean(),
            Functional::ShannonEntropy => {
                let m = dist.as_multinomial().ok_or_else(mismatch)?;
                -m.probs.iter().map(|p| p * p.ln()).sum::<f64>()
            }
            Functional::ExpectedNewCategories { n, m } => {
                let law = dist.as_multinomial().ok_or_else(mismatch)?;
                expected_new_categories(law.probs(), *n, *m)
            }
            Functional::Indicator { inner, lo, hi } => {
                let v = inner.eval(dist)?;
                if v >= *lo && v <= *hi {
                    1.0
                } else {
                    0.0
                }
            }
            Functional::Power { inner, exponent } => inner.eval(dist)?.powf(*exponent),
            Functional::Negated { inner } => -inner.eval(dist)?,
        };
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("{self} evaluated to {value}")));
        }
        Ok(value)
    }

    /// Short column-friendly name.
    pub fn label(&self) -> String {
        match self {
            Functional::Mean => "mean".into(),
            Functional::ShannonEntropy => "entropy".into(),
            Functional::ExpectedNewCategories { n, m } => format!("new_categories_n{n}_m{m}"),
            Functional::Indicator { inner, lo, hi } => format!("1[{}in[{lo};{hi}]]", inner.label()),
            Functional::Power { inner, exponent } => format!("{}^{exponent}", inner.label()),
            Functional::Negated { inner } => format!("-{}", inner.label()),
        }
    }
}

impl fmt::Display for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// `sum_k (1 - p_k)^n (1 - (1 - p_k)^m)`.
pub fn expected_new_categories(probs: &[f64], n: usize, m: usize) -> f64 {
    probs
        .iter()
        .map(|p| {
            let q = 1.0 - p;
            q.powi(n as i32) * (1.0 - q.powi(m as i32))
        })
        .sum()
}

pub fn eval_functional(f: &Functional, dist: &Distribution) -> Result<f64> {
    f.eval(dist)
}

/// Identifies a grid state: a prior or risk table computed for one grid is
/// rejected on any other.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridTag {
    pub len: usize,
    pub digest: u64,
}

/// Ordered, deduplicated, append-only list of distributions.
#[derive(Clone, Debug, Default)]
pub struct Grid {
    points: Vec<Distribution>,
    rounds: Vec<u32>,
    digests: Vec<u64>,
    index: HashMap<(u8, usize), Vec<usize>>,
}

impl Grid {
    pub fn new() -> Self {
        Self::default()
    }

    /// Collects `points` into a grid at `round`, dropping duplicates.
    pub fn from_points<I: IntoIterator<Item = Distribution>>(points: I, round: u32) -> Self {
        let mut grid = Self::new();
        for p in points {
            grid.push(p, round);
        }
        grid
    }

    /// Appends `dist` unless an equal distribution is present. Returns
    /// whether it was inserted.
    pub fn push(&mut self, dist: Distribution, round: u32) -> bool {
        if self.position(&dist).is_some() {
            return false;
        }
        let idx = self.points.len();
        let prev = self.digests.last().copied().unwrap_or(0x6D5A_17);
        self.digests.push(combine(prev, dist.bits_hash()));
        self.index.entry(dist.bucket()).or_default().push(idx);
        self.points.push(dist);
        self.rounds.push(round);
        true
    }

    pub fn position(&self, dist: &Distribution) -> Option<usize> {
        self.index
            .get(&dist.bucket())?
            .iter()
            .rev()
            .copied()
            .find(|i| self.points[*i].approx_eq(dist))
    }

    pub fn contains(&self, dist: &Distribution) -> bool {
        self.position(dist).is_some()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Distribution] {
        &self.points
    }

    pub fn get(&self, i: usize) -> &Distribution {
        &self.points[i]
    }

    /// Refinement round in which point `i` entered the grid.
    pub fn round_of(&self, i: usize) -> u32 {
        self.rounds[i]
    }

    pub fn rounds(&self) -> &[u32] {
        &self.rounds
    }

    pub fn tag(&self) -> GridTag {
        GridTag {
            len: self.points.len(),
            digest: self.digests.last().copied().unwrap_or(0),
        }
    }

    /// Tag of the first `len` points, i.e. of the grid as it was when it had
    /// `len` points.
    pub fn prefix_tag(&self, len: usize) -> GridTag {
        GridTag {
            len,
            digest: if len == 0 { 0 } else { self.digests[len - 1] },
        }
    }

    /// All distinct support locations used by the point laws of the grid.
    pub fn support_locations(&self) -> Vec<f64> {
        let mut xs: Vec<f64> = self
            .points
            .iter()
            .filter_map(|p| p.as_point_law())
            .flat_map(|p| p.support().iter().copied())
            .collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        xs
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// One CSV row per point: index, kind, support size, round, then one
    /// column per functional (empty where the functional does not apply).
    pub fn write_summary<W: Write>(&self, functionals: &[Functional], out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        let mut header = vec!["index".to_string(), "kind".into(), "K".into(), "round".into()];
        header.extend(functionals.iter().map(|f| f.label()));
        writer.write_record(&header)?;
        for (i, p) in self.points.iter().enumerate() {
            let mut row = vec![i.to_string(), p.kind().to_string(), p.size().to_string(), self.rounds[i].to_string()];
            row.extend(functionals.iter().map(|f| f.eval(p).map(|v| v.to_string()).unwrap_or_default()));
            writer.write_record(&row)?;
        }
        writer.flush()?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct GridEntry {
    round: u32,
    #[serde(flatten)]
    dist: Distribution,
}

#[derive(Serialize, Deserialize)]
struct RawGrid {
    points: Vec<GridEntry>,
}

impl Serialize for Grid {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let raw = RawGrid {
            points: self
                .points
                .iter()
                .zip(&self.rounds)
                .map(|(d, r)| GridEntry {
                    round: *r,
                    dist: d.clone(),
                })
                .collect(),
        };
        raw.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Grid {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = RawGrid::deserialize(deserializer)?;
        let mut grid = Grid::new();
        for entry in raw.points {
            if !grid.push(entry.dist, entry.round) {
                return Err(serde::de::Error::custom("duplicate distribution in grid"));
            }
        }
        Ok(grid)
    }
}

/// One generalized moment condition `E_pi[phi(P)] <= bound`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentConstraint {
    pub functional: Functional,
    pub bound: f64,
}

impl MomentConstraint {
    /// `E[f] <= bound`.
    pub fn at_most(functional: Functional, bound: f64) -> Result<Self> {
        functional.validate()?;
        if !bound.is_finite() {
            return Err(Error::InvalidFunctional(format!("bound {bound} is not finite")));
        }
        Ok(Self { functional, bound })
    }

    /// `E[f] >= bound`, stored as `E[-f] <= -bound`.
    pub fn at_least(functional: Functional, bound: f64) -> Result<Self> {
        Self::at_most(Functional::negated(functional), -bound)
    }

    /// `E[f] = value`, expanded into two opposing rows.
    pub fn equal(functional: Functional, value: f64) -> Result<Vec<Self>> {
        Ok(vec![
            Self::at_most(functional.clone(), value)?,
            Self::at_least(functional, value)?,
        ])
    }

    /// `lo <= E[f] <= hi`.
    pub fn mean_between(functional: Functional, lo: f64, hi: f64) -> Result<Vec<Self>> {
        Ok(vec![
            Self::at_least(functional.clone(), lo)?,
            Self::at_most(functional, hi)?,
        ])
    }

    /// `Pr_pi(f(P) in [lo, hi]) >= prob`.
    pub fn probability_within(functional: Functional, lo: f64, hi: f64, prob: f64) -> Result<Self> {
        Self::at_least(Functional::indicator(functional, lo, hi), prob)
    }

    /// `(phi(P_1), ..., phi(P_L))` over the grid.
    pub fn row(&self, grid: &Grid) -> Result<Vec<f64>> {
        constraint_row(self, grid)
    }
}

pub fn constraint_row(k: &MomentConstraint, grid: &Grid) -> Result<Vec<f64>> {
    grid.points().iter().map(|p| k.functional.eval(p)).collect()
}

/// Rows and bounds of all constraints on `grid`.
pub fn constraint_matrix(constraints: &[MomentConstraint], grid: &Grid) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let rows = constraints.iter().map(|k| k.row(grid)).collect::<Result<Vec<_>>>()?;
    Ok((rows, constraints.iter().map(|k| k.bound).collect()))
}

/// Tolerance on the simplex normalization of prior weights.
pub const PRIOR_SUM_TOL: f64 = 1e-10;
/// Tolerance on moment constraints.
pub const CONSTRAINT_TOL: f64 = 1e-9;

/// A prior supported on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorWeights {
    tag: GridTag,
    weights: Vec<f64>,
}

impl PriorWeights {
    /// Validates `weights` against the simplex and every constraint.
    pub fn new(grid: &Grid, weights: Vec<f64>, constraints: &[MomentConstraint]) -> Result<Self> {
        let (rows, bounds) = constraint_matrix(constraints, grid)?;
        Self::from_rows(grid.tag(), weights, &rows, &bounds)
    }

    /// Same as [`PriorWeights::new`] with precomputed constraint rows.
    pub fn from_rows(tag: GridTag, weights: Vec<f64>, rows: &[Vec<f64>], bounds: &[f64]) -> Result<Self> {
        if weights.len() != tag.len {
            return Err(Error::GridMismatch {
                expected: tag.len,
                found: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDistribution("prior weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > PRIOR_SUM_TOL {
            return Err(Error::InvalidDistribution(format!("prior weights sum to {total}")));
        }
        let violated = violated_rows(&weights, rows, bounds);
        if !violated.is_empty() {
            return Err(Error::Infeasible { violated });
        }
        Ok(Self { tag, weights })
    }

    pub fn tag(&self) -> GridTag {
        self.tag
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    /// Indices with positive weight.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.weights.iter().enumerate().filter(|(_, w)| **w > 0.0).map(|(i, _)| i)
    }

    /// The same prior viewed on a grid that extends this one; new points get
    /// weight zero.
    pub fn extend_to(&self, grid: &Grid) -> Result<Self> {
        if grid.len() < self.tag.len || grid.prefix_tag(self.tag.len) != self.tag {
            return Err(Error::GridMismatch {
                expected: self.tag.len,
                found: grid.len(),
            });
        }
        let mut weights = self.weights.clone();
        weights.resize(grid.len(), 0.0);
        Ok(Self {
            tag: grid.tag(),
            weights,
        })
    }
}

/// Rows whose prior moment exceeds its bound by more than [`CONSTRAINT_TOL`].
pub fn violated_rows(weights: &[f64], rows: &[Vec<f64>], bounds: &[f64]) -> Vec<usize> {
    rows.iter()
        .zip(bounds)
        .enumerate()
        .filter(|(_, (row, c))| row.iter().zip(weights).map(|(a, w)| a * w).sum::<f64>() > **c + CONSTRAINT_TOL)
        .map(|(k, _)| k)
        .collect()
}
