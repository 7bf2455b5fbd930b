//! Loss classes, portfolio regimes and validation of the bounded-loss
//! assumptions.
//!
//! A [`LossClass`] is one contract type: a finite-support, centered law. A
//! [`PortfolioModel`] combines classes either through asymptotic weights
//! (each class occupies a limiting fraction `d_i` of the contracts) or through
//! an explicit [`AssignmentRule`] mapping contract index `k >= 1` to a class.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on the sum of probabilities (and of weights) before renormalising.
pub const PROB_SUM_TOL: f64 = 1e-12;
/// Tolerance on the mean of a centered class.
pub const CENTERING_TOL: f64 = 1e-10;
/// Relative slack for the bound and variance-floor comparisons, so that
/// decimal inputs such as `c1 = 0.1` are not rejected for representation
/// error alone.
const CLAUSE_REL_SLACK: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("class `{class}`: {reason}")]
    InvalidClass { class: String, reason: String },
    #[error("invalid portfolio: {0}")]
    InvalidPortfolio(String),
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("assumption violated: {0}")]
    Assumption(Violation),
}

/// One contract type: a finite-support law on the reals.
#[derive(Debug, Clone, PartialEq)]
pub struct LossClass {
    name: String,
    support: Vec<f64>,
    probs: Vec<f64>,
}

impl LossClass {
    /// Builds a class from support points and their probabilities.
    ///
    /// Zero-mass points are dropped, the support is sorted, and the
    /// probabilities are renormalised after checking that they sum to one
    /// within [`PROB_SUM_TOL`]. Centering is not enforced here; see
    /// [`validate_model`].
    pub fn new(
        name: impl Into<String>,
        support: Vec<f64>,
        probs: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let name = name.into();
        let invalid = |reason: String| ModelError::InvalidClass {
            class: name.clone(),
            reason,
        };
        if support.len() != probs.len() {
            return Err(invalid(format!(
                "support has {} points but probs has {}",
                support.len(),
                probs.len()
            )));
        }
        if let Some(v) = support.iter().find(|v| !v.is_finite()) {
            return Err(invalid(format!("support value {v} is not finite")));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(invalid(format!("probability {p} is negative or not finite")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(invalid(format!("probabilities sum to {total}, not 1")));
        }

        let mut points: Vec<(f64, f64)> = support
            .into_iter()
            .zip(probs)
            .filter(|&(_, p)| p > 0.0)
            .collect();
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        if points.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(invalid("support values must be distinct".into()));
        }
        if points.is_empty() {
            return Err(invalid("support is empty".into()));
        }
        let kept: f64 = points.iter().map(|&(_, p)| p).sum();
        let (support, probs) = points.into_iter().map(|(v, p)| (v, p / kept)).unzip();
        Ok(LossClass {
            name,
            support,
            probs,
        })
    }

    /// Builds a class from raw losses `L` and subtracts `E[L]`, so the result
    /// describes `X = L - E[L]`.
    pub fn centered(
        name: impl Into<String>,
        raw_support: Vec<f64>,
        probs: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let mut class = Self::new(name, raw_support, probs)?;
        let mean = class.mean();
        for v in &mut class.support {
            *v -= mean;
        }
        Ok(class)
    }

    /// Skips validation; the caller guarantees sorted distinct support and
    /// probabilities summing to one. Zero masses are kept.
    pub(crate) fn from_parts_unchecked(
        name: impl Into<String>,
        support: Vec<f64>,
        probs: Vec<f64>,
    ) -> Self {
        LossClass {
            name: name.into(),
            support,
            probs,
        }
    }

    /// The symmetric two-point law on `{-a, a}`.
    pub fn symmetric(name: impl Into<String>, a: f64) -> Self {
        Self::new(name, vec![-a, a], vec![0.5, 0.5]).expect("symmetric two-point law is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Support points in increasing order.
    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mean(&self) -> f64 {
        self.support.iter().zip(&self.probs).map(|(v, p)| v * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.support
            .iter()
            .zip(&self.probs)
            .map(|(v, p)| (v - mean) * (v - mean) * p)
            .sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.support.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.support[0]
    }

    pub fn max_value(&self) -> f64 {
        self.support[self.support.len() - 1]
    }

    pub fn prob_of_min(&self) -> f64 {
        self.probs[0]
    }

    pub fn prob_of_max(&self) -> f64 {
        self.probs[self.probs.len() - 1]
    }

    /// The law of `-X`.
    pub fn reflected(&self) -> Self {
        LossClass {
            name: self.name.clone(),
            support: self.support.iter().rev().map(|v| -v).collect(),
            probs: self.probs.iter().rev().copied().collect(),
        }
    }
}

/// Uniform bound `c0` on `|X_k|` and variance floor `c1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionBounds {
    c0: f64,
    c1: f64,
}

impl AssumptionBounds {
    pub fn new(c0: f64, c1: f64) -> Result<Self, ModelError> {
        if !(c0.is_finite() && c0 > 0.0) {
            return Err(ModelError::InvalidBounds(format!("c0 = {c0} must be positive")));
        }
        if !(c1.is_finite() && c1 > 0.0) {
            return Err(ModelError::InvalidBounds(format!("c1 = {c1} must be positive")));
        }
        if c1 > c0 * c0 * (1.0 + CLAUSE_REL_SLACK) {
            return Err(ModelError::InvalidBounds(format!(
                "c1 = {c1} exceeds c0^2 = {}",
                c0 * c0
            )));
        }
        Ok(AssumptionBounds { c0, c1 })
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }
}

/// Block schedule: block `j = 0, 1, ...` has length `initial * growth^j` and
/// belongs to class `order[j % order.len()]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSchedule {
    initial: u64,
    growth: u64,
    order: Vec<usize>,
}

/// One block of a [`BlockSchedule`], as an inclusive range of 1-based indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub index: usize,
    pub start: u64,
    pub end: u64,
    pub class: usize,
}

impl BlockSchedule {
    pub fn new(initial: u64, growth: u64, order: Vec<usize>) -> Result<Self, ModelError> {
        if initial == 0 {
            return Err(ModelError::InvalidPortfolio(
                "block schedule needs an initial block length >= 1".into(),
            ));
        }
        if growth < 2 {
            return Err(ModelError::InvalidPortfolio(
                "block schedule needs an integer growth factor >= 2".into(),
            ));
        }
        if order.is_empty() {
            return Err(ModelError::InvalidPortfolio(
                "block schedule needs a non-empty class order".into(),
            ));
        }
        Ok(BlockSchedule {
            initial,
            growth,
            order,
        })
    }

    pub fn initial(&self) -> u64 {
        self.initial
    }

    pub fn growth(&self) -> u64 {
        self.growth
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Blocks in order, stopping before the first one whose end would not
    /// fit in a `u64`.
    pub fn blocks(&self) -> impl Iterator<Item = Block> + '_ {
        let mut state = Some((0usize, 1u64, self.initial));
        std::iter::from_fn(move || {
            let (index, start, len) = state?;
            let end = start.checked_add(len - 1)?;
            state = match (end.checked_add(1), len.checked_mul(self.growth)) {
                (Some(next_start), Some(next_len)) => Some((index + 1, next_start, next_len)),
                _ => None,
            };
            Some(Block {
                index,
                start,
                end,
                class: self.order[index % self.order.len()],
            })
        })
    }

    pub fn block(&self, index: usize) -> Option<Block> {
        self.blocks().nth(index)
    }
}

/// Deterministic map from contract index `k >= 1` to a class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AssignmentRule {
    /// Cycle of length `sum(weights)`; class `i` takes `weights[i]`
    /// consecutive positions of each cycle, giving density
    /// `weights[i] / sum(weights)`.
    RoundRobin { weights: Vec<u64> },
    Blocks(BlockSchedule),
}

impl AssignmentRule {
    pub fn round_robin(weights: Vec<u64>) -> Result<Self, ModelError> {
        if weights.iter().sum::<u64>() == 0 {
            return Err(ModelError::InvalidPortfolio(
                "round-robin weights must have a positive sum".into(),
            ));
        }
        Ok(AssignmentRule::RoundRobin { weights })
    }

    /// Class of the contract with 1-based index `k`.
    pub fn class_of(&self, k: u64) -> usize {
        assert!(k >= 1, "contract indices start at 1");
        match self {
            AssignmentRule::RoundRobin { weights } => {
                let cycle: u64 = weights.iter().sum();
                let mut pos = (k - 1) % cycle;
                for (i, &w) in weights.iter().enumerate() {
                    if pos < w {
                        return i;
                    }
                    pos -= w;
                }
                unreachable!("position within cycle")
            }
            AssignmentRule::Blocks(schedule) => {
                schedule
                    .blocks()
                    .find(|b| b.end >= k)
                    .expect("index within representable blocks")
                    .class
            }
        }
    }

    /// Number of indices in `1..=n` mapped to each of `num_classes` classes.
    pub fn class_counts(&self, n: u64, num_classes: usize) -> Vec<u64> {
        let mut counts = vec![0u64; num_classes];
        match self {
            AssignmentRule::RoundRobin { weights } => {
                let cycle: u64 = weights.iter().sum();
                let (full, mut rem) = (n / cycle, n % cycle);
                for (i, &w) in weights.iter().enumerate() {
                    let partial = rem.min(w);
                    rem -= partial;
                    counts[i] = full * w + partial;
                }
            }
            AssignmentRule::Blocks(schedule) => {
                for block in schedule.blocks() {
                    if block.start > n {
                        break;
                    }
                    counts[block.class] += block.end.min(n) - block.start + 1;
                }
            }
        }
        counts
    }

    fn max_class_index(&self) -> usize {
        match self {
            AssignmentRule::RoundRobin { weights } => weights.len().saturating_sub(1),
            AssignmentRule::Blocks(s) => s.order.iter().copied().max().unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Regime {
    /// Asymptotic class densities `d_i`, summing to one.
    Weighted(Vec<f64>),
    Assigned(AssignmentRule),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioModel {
    classes: Vec<LossClass>,
    regime: Regime,
}

impl PortfolioModel {
    pub fn new(classes: Vec<LossClass>, regime: Regime) -> Result<Self, ModelError> {
        if classes.is_empty() {
            return Err(ModelError::InvalidPortfolio("no loss classes".into()));
        }
        let p = classes.len();
        let regime = match regime {
            Regime::Weighted(weights) => {
                if weights.len() != p {
                    return Err(ModelError::InvalidPortfolio(format!(
                        "{} weights for {p} classes",
                        weights.len()
                    )));
                }
                if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
                    return Err(ModelError::InvalidPortfolio(
                        "weights must be finite and nonnegative".into(),
                    ));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > PROB_SUM_TOL {
                    return Err(ModelError::InvalidPortfolio(format!(
                        "weights sum to {total}, not 1"
                    )));
                }
                Regime::Weighted(weights.iter().map(|w| w / total).collect())
            }
            Regime::Assigned(rule) => {
                if let AssignmentRule::RoundRobin { weights } = &rule {
                    if weights.len() != p {
                        return Err(ModelError::InvalidPortfolio(format!(
                            "{} round-robin weights for {p} classes",
                            weights.len()
                        )));
                    }
                }
                if rule.max_class_index() >= p {
                    return Err(ModelError::InvalidPortfolio(format!(
                        "assignment refers to class index {} but only {p} classes exist",
                        rule.max_class_index()
                    )));
                }
                Regime::Assigned(rule)
            }
        };
        Ok(PortfolioModel { classes, regime })
    }

    /// Single class with weight one.
    pub fn single(class: LossClass) -> Self {
        PortfolioModel {
            classes: vec![class],
            regime: Regime::Weighted(vec![1.0]),
        }
    }

    pub fn classes(&self) -> &[LossClass] {
        &self.classes
    }

    pub fn regime(&self) -> &Regime {
        &self.regime
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Asymptotic densities, when the regime provides them.
    pub fn weights(&self) -> Option<&[f64]> {
        match &self.regime {
            Regime::Weighted(w) => Some(w),
            Regime::Assigned(_) => None,
        }
    }

    /// Per-class counts among the first `n` contracts.
    ///
    /// The weighted regime is realised at finite `n` by largest-remainder
    /// apportionment of `n * d_i`, ties broken by class index.
    pub fn class_counts(&self, n: u64) -> Vec<u64> {
        match &self.regime {
            Regime::Assigned(rule) => rule.class_counts(n, self.classes.len()),
            Regime::Weighted(weights) => apportion(weights, n),
        }
    }

    /// The same model with every class reflected, i.e. the law of `-M_n`.
    pub fn reflected(&self) -> Self {
        PortfolioModel {
            classes: self.classes.iter().map(LossClass::reflected).collect(),
            regime: self.regime.clone(),
        }
    }
}

fn apportion(weights: &[f64], n: u64) -> Vec<u64> {
    let quotas: Vec<f64> = weights.iter().map(|w| w * n as f64).collect();
    let mut counts: Vec<u64> = quotas.iter().map(|q| q.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut remaining = n.saturating_sub(assigned);
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        // Zero-weight classes never receive contracts.
        if weights[i] > 0.0 {
            counts[i] += 1;
            remaining -= 1;
        }
    }
    counts
}

/// Class densities `nu_i(n)/n` at one `n`, with the running extremes of the
/// first class's density over `1..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensitySample {
    pub n: u64,
    pub densities: Vec<f64>,
    pub running_min: f64,
    pub running_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityProfile {
    pub samples: Vec<DensitySample>,
}

impl DensityProfile {
    pub fn running_min(&self) -> f64 {
        self.samples.last().map_or(f64::NAN, |s| s.running_min)
    }

    pub fn running_max(&self) -> f64 {
        self.samples.last().map_or(f64::NAN, |s| s.running_max)
    }
}

/// Densities for every `n` in `1..=n_max`.
pub fn density_profile(rule: &AssignmentRule, num_classes: usize, n_max: u64) -> DensityProfile {
    let mut counts = vec![0u64; num_classes];
    let mut samples = Vec::with_capacity(n_max as usize);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for n in 1..=n_max {
        counts[rule.class_of(n)] += 1;
        let densities: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        lo = lo.min(densities[0]);
        hi = hi.max(densities[0]);
        samples.push(DensitySample {
            n,
            densities,
            running_min: lo,
            running_max: hi,
        });
    }
    DensityProfile { samples }
}

/// Which part of the bounded-loss assumption a class violates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Clause {
    Centering,
    Bound,
    VarianceFloor,
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Clause::Centering => "centering",
            Clause::Bound => "bound exceeded",
            Clause::VarianceFloor => "variance floor",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub class: String,
    pub clause: Clause,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "class `{}`: {} ({})", self.class, self.clause, self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks centering, the uniform bound `c0` and the variance floor `c1` for
/// every class. Violations are returned as data.
pub fn validate_model(model: &PortfolioModel, bounds: &AssumptionBounds) -> ValidationReport {
    let mut violations = Vec::new();
    for class in model.classes() {
        let mean = class.mean();
        if mean.abs() > CENTERING_TOL {
            violations.push(Violation {
                class: class.name().to_owned(),
                clause: Clause::Centering,
                detail: format!("mean is {mean}"),
            });
        }
        let max_abs = class.max_abs();
        if max_abs > bounds.c0() * (1.0 + CLAUSE_REL_SLACK) {
            violations.push(Violation {
                class: class.name().to_owned(),
                clause: Clause::Bound,
                detail: format!("|x| reaches {max_abs} > c0 = {}", bounds.c0()),
            });
        }
        let var = class.variance();
        if var < bounds.c1() * (1.0 - CLAUSE_REL_SLACK) {
            violations.push(Violation {
                class: class.name().to_owned(),
                clause: Clause::VarianceFloor,
                detail: format!("variance {var} < c1 = {}", bounds.c1()),
            });
        }
    }
    ValidationReport { violations }
}

/// On-disk model description (JSON).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub bounds: BoundsSpec,
    pub classes: Vec<ClassSpec>,
    pub regime: RegimeSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSpec {
    pub c0: f64,
    pub c1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub name: String,
    pub support: Vec<f64>,
    pub probs: Vec<f64>,
    #[serde(default)]
    pub center: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeSpec {
    Weighted { weights: Vec<f64> },
    Assigned(AssignedSpec),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignedSpec {
    RoundRobin { weights: Vec<u64> },
    /// `order` holds 0-based class indices.
    Blocks { a0: u64, growth: u64, order: Vec<usize> },
}

impl ModelFile {
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text).map_err(|e| ModelError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    /// Builds the model and bounds without checking the class laws against
    /// the bounds. Structural errors still fail.
    pub fn build_unchecked(self) -> Result<(PortfolioModel, AssumptionBounds), ModelError> {
        let bounds = AssumptionBounds::new(self.bounds.c0, self.bounds.c1)?;
        let classes = self
            .classes
            .into_iter()
            .map(|c| {
                if c.center {
                    LossClass::centered(c.name, c.support, c.probs)
                } else {
                    LossClass::new(c.name, c.support, c.probs)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let regime = match self.regime {
            RegimeSpec::Weighted { weights } => Regime::Weighted(weights),
            RegimeSpec::Assigned(AssignedSpec::RoundRobin { weights }) => {
                Regime::Assigned(AssignmentRule::round_robin(weights)?)
            }
            RegimeSpec::Assigned(AssignedSpec::Blocks { a0, growth, order }) => {
                Regime::Assigned(AssignmentRule::Blocks(BlockSchedule::new(a0, growth, order)?))
            }
        };
        Ok((PortfolioModel::new(classes, regime)?, bounds))
    }

    pub fn build(self) -> Result<(PortfolioModel, AssumptionBounds), ModelError> {
        let (model, bounds) = self.build_unchecked()?;
        if let Some(first) = validate_model(&model, &bounds).violations.into_iter().next() {
            return Err(ModelError::Assumption(first));
        }
        Ok((model, bounds))
    }
}

/// Parses and validates a model file. Fails with the first violation.
pub fn load_model(text: &str) -> Result<(PortfolioModel, AssumptionBounds), ModelError> {
    ModelFile::parse(text)?.build()
}
