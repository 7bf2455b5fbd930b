//! Exact finite-n law of `S_n = n M_n` by lattice convolution.
//!
//! All support points are mapped onto a common lattice `step * Z`, and the
//! class laws are convolved contract by contract. Convolution order does not
//! change the law of the sum, so contracts are grouped by class.
//!
//! Tails far below `1e-300` are computed under an exponential change of
//! measure. For any `l`,
//!
//! ```text
//! P[S_n >= t] = exp(sum_k log phi_k(l)) * E_l[exp(-l S_n); S_n >= t]
//! ```
//!
//! where `E_l` is expectation under the tilted product law. Choosing `l` as
//! the conjugate maximiser at `t/n` centres the tilted law on the threshold,
//! so the masses that matter stay of order `n^{-1/2}` while the irrelevant
//! ones underflow to zero. Masses that underflow contribute less than
//! `1e-300` relative to the result, which keeps the oracle exact to floating
//! accumulation.
//!
//! Two-point classes are summed in one step from binomial weights; other
//! classes by repeated convolution, costing `O(count * width)`.

use std::env;

use thiserror::Error;

use crate::cgf::{shifted_weights, MixtureCgf};
use crate::extended::ExtendedReal;
use crate::legendre::{conjugate, LegendreError, RateStatus};
use crate::model::PortfolioModel;

/// Tolerance for recognising support points as lattice multiples.
pub const LATTICE_TOL: f64 = 1e-9;
/// Largest denominator accepted when expressing a support ratio as a
/// rational number.
pub const MAX_DENOMINATOR: u64 = 10_000;
pub const DEFAULT_MEMORY_BUDGET: u64 = 2 << 30;
/// Environment variable overriding the memory budget, in bytes.
pub const MEMORY_BUDGET_ENV: &str = "LDRISK_MEMORY_BUDGET";
/// Slack in lattice-index threshold comparisons.
const INDEX_SLACK: f64 = 1e-9;
/// Relative size below which masses are dropped in tail queries. The tilt
/// centres the law on the threshold, so the dropped mass is below
/// `1e-30` of the answer.
const TAIL_CUTOFF: f64 = 1e-40;
/// Tilt used at the top of the support, in units of the inverse top gap:
/// non-maximal points are suppressed by at least `exp(-40)`.
const EDGE_TILT: f64 = 40.0;

#[derive(Debug, Error, PartialEq)]
pub enum ExactError {
    #[error(
        "support values are not commensurable at tolerance {tolerance}; \
         use Monte Carlo for this model"
    )]
    Incommensurable { tolerance: f64 },
    #[error("convolution of {n} contracts needs {needed} bytes, over the budget of {budget}")]
    MemoryBudget { n: u64, needed: u64, budget: u64 },
    #[error("{n} contracts exceed the configured limit of {limit}")]
    ContractLimit { n: u64, limit: u64 },
    #[error("n must be at least 1")]
    ZeroContracts,
    #[error(transparent)]
    Legendre(#[from] LegendreError),
}

/// Resource limits of the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactConfig {
    pub memory_budget: u64,
    pub max_contracts: Option<u64>,
}

impl Default for ExactConfig {
    fn default() -> Self {
        ExactConfig {
            memory_budget: DEFAULT_MEMORY_BUDGET,
            max_contracts: None,
        }
    }
}

impl ExactConfig {
    /// Default limits, with the memory budget taken from
    /// [`MEMORY_BUDGET_ENV`] when set to an integer.
    pub fn from_env() -> Self {
        let memory_budget = env::var(MEMORY_BUDGET_ENV)
            .ok()
            .and_then(|v| v.trim().parse().ok())
            .unwrap_or(DEFAULT_MEMORY_BUDGET);
        ExactConfig {
            memory_budget,
            ..Self::default()
        }
    }
}

/// Probability masses on `(start + j) * step`, `j = 0..masses.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeDistribution {
    start: i64,
    step: f64,
    masses: Vec<f64>,
}

impl LatticeDistribution {
    /// Value of the first lattice point.
    pub fn offset(&self) -> f64 {
        self.start as f64 * self.step
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Lattice index of the first point.
    pub fn start_index(&self) -> i64 {
        self.start
    }

    pub fn total_mass(&self) -> f64 {
        kahan_sum(self.masses.iter().copied())
    }

    /// `(value, mass)` pairs in increasing order of value.
    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.masses
            .iter()
            .enumerate()
            .map(move |(j, &m)| ((self.start + j as i64) as f64 * self.step, m))
    }
}

/// Masses on lattice indices `start + j * stride`.
#[derive(Debug, Clone, PartialEq)]
struct Section {
    start: i64,
    stride: i64,
    masses: Vec<f64>,
}

impl Section {
    fn point(index: i64) -> Self {
        Section {
            start: index,
            stride: 1,
            masses: vec![1.0],
        }
    }

    /// Stride that matters when combining: a single point fits any lattice.
    fn effective_stride(&self) -> i64 {
        if self.masses.len() == 1 {
            0
        } else {
            self.stride
        }
    }

    fn index(&self, j: usize) -> i64 {
        self.start + j as i64 * self.stride
    }

    fn into_distribution(self, step: f64) -> LatticeDistribution {
        let stride = self.stride.max(1) as usize;
        let mut masses = vec![0.0; (self.masses.len() - 1) * stride + 1];
        for (j, m) in self.masses.into_iter().enumerate() {
            masses[j * stride] = m;
        }
        LatticeDistribution {
            start: self.start,
            step,
            masses,
        }
    }

    /// Convolves with a kernel whose offsets are in units of `self.stride`.
    fn add_kernel(&mut self, kernel: &[(usize, f64)], cutoff: f64) {
        let span = kernel.iter().map(|k| k.0).max().expect("non-empty kernel");
        let mut out = vec![0.0; self.masses.len() + span];
        for &(shift, q) in kernel {
            for (o, m) in out[shift..].iter_mut().zip(&self.masses) {
                *o += q * m;
            }
        }
        self.masses = out;
        self.trim(cutoff);
    }

    /// Law of the sum of two independent sections.
    fn convolve(&self, other: &Section, cutoff: f64) -> Section {
        let (sa, sb) = (self.effective_stride(), other.effective_stride());
        let g = gcd(sa as u64, sb as u64) as i64;
        if g == 0 {
            let mut point = Section::point(self.start + other.start);
            point.masses[0] = self.masses[0] * other.masses[0];
            return point;
        }
        let nonzero = |d: &Section| d.masses.iter().filter(|&&m| m != 0.0).count();
        let (wide, narrow) = if nonzero(self) >= nonzero(other) {
            (self, other)
        } else {
            (other, self)
        };
        let ow = (wide.effective_stride() / g) as usize;
        let on = (narrow.effective_stride() / g) as usize;
        let len = (wide.masses.len() - 1) * ow + (narrow.masses.len() - 1) * on + 1;
        let mut out = vec![0.0; len];
        for (j, &q) in narrow.masses.iter().enumerate() {
            if q == 0.0 {
                continue;
            }
            let base = j * on;
            if ow <= 1 {
                for (o, m) in out[base..].iter_mut().zip(&wide.masses) {
                    *o += q * m;
                }
            } else {
                for (o, m) in out[base..].iter_mut().step_by(ow).zip(&wide.masses) {
                    *o += q * m;
                }
            }
        }
        let mut section = Section {
            start: self.start + other.start,
            stride: g,
            masses: out,
        };
        section.trim(cutoff);
        section
    }

    /// `count`-fold sum of a two-point law on indices `lo < hi`, with mass
    /// `p` on `hi`. The binomial weights are built outward from the mode by
    /// their ratio recurrence and normalised at the end.
    fn binomial(count: u64, lo: i64, hi: i64, p: f64, cutoff: f64) -> Self {
        let q = 1.0 - p;
        let mode = if q <= 0.0 {
            count
        } else if p <= 0.0 {
            0
        } else {
            (((count + 1) as f64 * p).floor() as u64).min(count)
        };
        let ratio = p / q;
        let mut down = Vec::new();
        let mut v = 1.0f64;
        let mut j = mode;
        while j > 0 {
            v *= j as f64 / ((count - j + 1) as f64 * ratio);
            if !(v > cutoff) {
                break;
            }
            down.push(v);
            j -= 1;
        }
        let mut up = Vec::new();
        let mut v = 1.0f64;
        let mut j = mode;
        while j < count {
            v *= (count - j) as f64 / (j + 1) as f64 * ratio;
            if !(v > cutoff) || !v.is_finite() {
                break;
            }
            up.push(v);
            j += 1;
        }
        let first = mode - down.len() as u64;
        let mut masses: Vec<f64> = down
            .into_iter()
            .rev()
            .chain(std::iter::once(1.0))
            .chain(up)
            .collect();
        let total = kahan_sum(masses.iter().copied());
        masses.iter_mut().for_each(|m| *m /= total);
        Section {
            start: count as i64 * lo + first as i64 * (hi - lo),
            stride: hi - lo,
            masses,
        }
    }

    /// Drops masses at either end that are at most `cutoff` times the
    /// largest mass (exact zeros when `cutoff` is 0).
    fn trim(&mut self, cutoff: f64) {
        let top = self.masses.iter().copied().fold(0.0, f64::max);
        let floor = top * cutoff;
        let Some(first) = self.masses.iter().position(|&m| m > floor) else {
            self.masses.truncate(1);
            return;
        };
        let last = self.masses.iter().rposition(|&m| m > floor).unwrap();
        self.masses.truncate(last + 1);
        self.masses.drain(..first);
        self.start += first as i64 * self.stride;
    }
}

fn kahan_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Common lattice of a model: the step and each class's support as integer
/// multiples of it.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub step: f64,
    pub indices: Vec<Vec<i64>>,
}

/// Largest `g` such that every support point is an integer multiple of `g`
/// within `tolerance` (relative).
pub fn latticize(model: &PortfolioModel, tolerance: f64) -> Result<f64, ExactError> {
    Ok(lattice(model, tolerance)?.step)
}

pub fn lattice(model: &PortfolioModel, tolerance: f64) -> Result<Lattice, ExactError> {
    let values: Vec<f64> = model
        .classes()
        .iter()
        .flat_map(|c| c.support().iter().map(|v| v.abs()))
        .filter(|&v| v > 0.0)
        .collect();
    let fail = || ExactError::Incommensurable { tolerance };
    let step = if values.is_empty() {
        1.0
    } else {
        let reference = values.iter().copied().fold(f64::INFINITY, f64::min);
        let mut denominator: u64 = 1;
        for &v in &values {
            let q = rational_denominator(v / reference, tolerance).ok_or_else(fail)?;
            denominator = lcm(denominator, q);
            if denominator > MAX_DENOMINATOR {
                return Err(fail());
            }
        }
        let unit = reference / denominator as f64;
        let common = values
            .iter()
            .map(|v| (v / unit).round() as u64)
            .fold(0, gcd);
        unit * common as f64
    };

    let mut indices = Vec::with_capacity(model.num_classes());
    for class in model.classes() {
        let mut row = Vec::with_capacity(class.support().len());
        for &v in class.support() {
            let k = (v / step).round();
            if (v - k * step).abs() > tolerance * v.abs().max(step) {
                return Err(fail());
            }
            row.push(k as i64);
        }
        indices.push(row);
    }
    Ok(Lattice { step, indices })
}

/// Denominator of the first continued-fraction convergent within relative
/// `tolerance` of `ratio`.
fn rational_denominator(ratio: f64, tolerance: f64) -> Option<u64> {
    let (mut h0, mut h1) = (0u64, 1u64);
    let (mut k0, mut k1) = (1u64, 0u64);
    let mut rest = ratio;
    loop {
        let a = rest.floor();
        if a > 1e15 {
            return None;
        }
        let a = a as u64;
        let h = a.checked_mul(h1)?.checked_add(h0)?;
        let k = a.checked_mul(k1)?.checked_add(k0)?;
        if k > MAX_DENOMINATOR {
            return None;
        }
        if (ratio - h as f64 / k as f64).abs() <= tolerance * ratio {
            return Some(k);
        }
        (h0, h1, k0, k1) = (h1, h, k1, k);
        let frac = rest - a as f64;
        if frac <= 0.0 {
            return None;
        }
        rest = 1.0 / frac;
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: u64, b: u64) -> u64 {
    a / gcd(a, b) * b
}

/// Which tail of `M_n`: `>= x` or `> x` (upper), `<= x` or `< x` (lower).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailKind {
    AtLeast,
    Greater,
}

/// A tail probability held in log form, `log_prob = -inf` for impossible
/// events.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailProbability {
    pub log_prob: ExtendedReal,
    /// Tilt used for the computation (zero when none was needed).
    pub tilt: f64,
}

impl TailProbability {
    fn impossible() -> Self {
        TailProbability {
            log_prob: ExtendedReal::NegInfinity,
            tilt: 0.0,
        }
    }

    /// The probability itself; underflows to zero below about `1e-308`.
    pub fn probability(&self) -> f64 {
        self.log_prob.to_f64().exp()
    }

    pub fn is_impossible(&self) -> bool {
        self.log_prob == ExtendedReal::NegInfinity
    }

    /// `(1/n) log P`.
    pub fn log_rate(&self, n: u64) -> ExtendedReal {
        match self.log_prob {
            ExtendedReal::Finite(v) => ExtendedReal::Finite(v / n as f64),
            other => other,
        }
    }
}

/// Exact oracle for one portfolio model.
#[derive(Debug, Clone)]
pub struct ExactOracle {
    model: PortfolioModel,
    lattice: Lattice,
    config: ExactConfig,
}

impl ExactOracle {
    pub fn new(model: PortfolioModel, config: ExactConfig) -> Result<Self, ExactError> {
        let lattice = lattice(&model, LATTICE_TOL)?;
        Ok(ExactOracle {
            model,
            lattice,
            config,
        })
    }

    pub fn model(&self) -> &PortfolioModel {
        &self.model
    }

    pub fn step(&self) -> f64 {
        self.lattice.step
    }

    /// Oracle for the law of `-M_n`.
    pub fn reflected(&self) -> Self {
        ExactOracle {
            model: self.model.reflected(),
            lattice: Lattice {
                step: self.lattice.step,
                indices: self
                    .lattice
                    .indices
                    .iter()
                    .map(|row| row.iter().rev().map(|k| -k).collect())
                    .collect(),
            },
            config: self.config,
        }
    }

    fn counts(&self, n: u64) -> Result<Vec<u64>, ExactError> {
        if n == 0 {
            return Err(ExactError::ZeroContracts);
        }
        if let Some(limit) = self.config.max_contracts {
            if n > limit {
                return Err(ExactError::ContractLimit { n, limit });
            }
        }
        let counts = self.model.class_counts(n);
        let width: u64 = counts
            .iter()
            .zip(&self.lattice.indices)
            .map(|(&c, row)| c * (row[row.len() - 1] - row[0]) as u64)
            .sum::<u64>()
            + 1;
        // Two buffers of f64 live during a convolution.
        let needed = width.saturating_mul(16);
        if needed > self.config.memory_budget {
            return Err(ExactError::MemoryBudget {
                n,
                needed,
                budget: self.config.memory_budget,
            });
        }
        Ok(counts)
    }

    /// Checks the resource limits for `n` contracts without computing.
    pub fn check_feasible(&self, n: u64) -> Result<(), ExactError> {
        self.counts(n).map(|_| ())
    }

    /// Law of `S_n` under the product law tilted by `tilt`, together with
    /// `sum_k log phi_k(tilt)`. Masses below `cutoff` times the largest mass
    /// of a partial sum are discarded.
    fn tilted_section(&self, counts: &[u64], tilt: f64, cutoff: f64) -> (Section, f64) {
        let mut dist = Section::point(0);
        let mut log_norm = 0.0;
        for (i, &count) in counts.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let class = &self.model.classes()[i];
            let (weights, shift) = shifted_weights(class, tilt);
            let z: f64 = weights.iter().sum();
            log_norm += count as f64 * (shift + z.ln());
            let indices = &self.lattice.indices[i];
            let section = match indices.len() {
                1 => Section::point(count as i64 * indices[0]),
                2 => Section::binomial(count, indices[0], indices[1], weights[1] / z, cutoff),
                _ => {
                    let base = indices[0];
                    let g = indices.iter().fold(0, |g, &k| gcd(g, (k - base) as u64)) as i64;
                    let kernel: Vec<(usize, f64)> = indices
                        .iter()
                        .zip(&weights)
                        .filter(|(_, &w)| w > 0.0)
                        .map(|(&k, &w)| (((k - base) / g) as usize, w / z))
                        .collect();
                    let mut section = Section {
                        start: count as i64 * base,
                        stride: g,
                        masses: vec![1.0],
                    };
                    for _ in 0..count {
                        section.add_kernel(&kernel, cutoff);
                    }
                    section
                }
            };
            dist = dist.convolve(&section, cutoff);
        }
        (dist, log_norm)
    }

    /// Untilted law of `S_n`.
    pub fn distribution(&self, n: u64) -> Result<LatticeDistribution, ExactError> {
        let counts = self.counts(n)?;
        let (section, _) = self.tilted_section(&counts, 0.0, 0.0);
        Ok(section.into_distribution(self.lattice.step))
    }

    /// `P[M_n >= x]` (or `> x`).
    pub fn upper_tail(&self, n: u64, x: f64, kind: TailKind) -> Result<TailProbability, ExactError> {
        let counts = self.counts(n)?;
        let step = self.lattice.step;
        let scaled = n as f64 * x / step;
        let threshold = match kind {
            TailKind::AtLeast => (scaled - INDEX_SLACK).ceil(),
            TailKind::Greater => (scaled + INDEX_SLACK).floor() + 1.0,
        };
        let max_index: f64 = counts
            .iter()
            .zip(&self.lattice.indices)
            .map(|(&c, row)| c as f64 * row[row.len() - 1] as f64)
            .sum();
        let min_index: f64 = counts
            .iter()
            .zip(&self.lattice.indices)
            .map(|(&c, row)| c as f64 * row[0] as f64)
            .sum();
        if threshold > max_index {
            return Ok(TailProbability::impossible());
        }
        if threshold <= min_index {
            return Ok(TailProbability {
                log_prob: ExtendedReal::Finite(0.0),
                tilt: 0.0,
            });
        }
        let threshold = threshold as i64;

        let cgf = MixtureCgf::from_counts(self.model.classes().to_vec(), &counts);
        let tilt = self.tilt_for(&cgf, threshold as f64 * step / n as f64)?;
        let (dist, log_norm) = self.tilted_section(&counts, tilt, TAIL_CUTOFF);

        // log sum_{j >= threshold} p~_j exp(-tilt * j * step)
        let terms: Vec<f64> = dist
            .masses
            .iter()
            .enumerate()
            .filter_map(|(j, &m)| {
                let idx = dist.index(j);
                (idx >= threshold && m > 0.0).then(|| m.ln() - tilt * idx as f64 * step)
            })
            .collect();
        if terms.is_empty() {
            // Every path above the threshold underflowed under the tilt,
            // which the tilt choice rules out for reachable thresholds.
            return Ok(TailProbability::impossible());
        }
        let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum = kahan_sum(terms.iter().map(|t| (t - top).exp()));
        Ok(TailProbability {
            log_prob: ExtendedReal::Finite((log_norm + top + sum.ln()).min(0.0)),
            tilt,
        })
    }

    /// `P[M_n <= x]` (or `< x`), from the reflected lattice.
    pub fn lower_tail(&self, n: u64, x: f64, kind: TailKind) -> Result<TailProbability, ExactError> {
        self.reflected().upper_tail(n, -x, kind)
    }

    /// `(1/n) log P[M_n >= x]`, `-inf` for impossible events.
    pub fn log_tail_rate(&self, n: u64, x: f64) -> Result<ExtendedReal, ExactError> {
        Ok(self.upper_tail(n, x, TailKind::AtLeast)?.log_rate(n))
    }

    fn tilt_for(&self, cgf: &MixtureCgf, x: f64) -> Result<f64, ExactError> {
        if x <= cgf.eval(0.0).d1 {
            return Ok(0.0);
        }
        let point = conjugate(cgf, x)?;
        Ok(match point.status {
            RateStatus::Interior => point.lambda_star.finite().unwrap_or(0.0),
            _ => EDGE_TILT / cgf.top_gap(),
        })
    }
}

/// `P[M_n >= x]` with default resource limits.
pub fn exact_tail(model: &PortfolioModel, n: u64, x: f64) -> Result<f64, ExactError> {
    let oracle = ExactOracle::new(model.clone(), ExactConfig::from_env())?;
    Ok(oracle.upper_tail(n, x, TailKind::AtLeast)?.probability())
}

/// `(1/n) log P[M_n >= x]` with default resource limits.
pub fn exact_log_tail_rate(
    model: &PortfolioModel,
    n: u64,
    x: f64,
) -> Result<ExtendedReal, ExactError> {
    ExactOracle::new(model.clone(), ExactConfig::from_env())?.log_tail_rate(n, x)
}
