//! Monte Carlo estimates of `P[M_n >= x]`, plain and exponentially tilted.
//!
//! Replicate `r` draws from its own ChaCha8 stream keyed by `(seed, r)`, and
//! replicates are reduced in fixed-size chunks merged in index order, so the
//! result is bit-identical for any number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::cgf::{class_log_mgf, shifted_weights, MixtureCgf};
use crate::extended::ExtendedReal;
use crate::legendre::{conjugate, LegendreError, RateStatus};
use crate::model::{LossClass, PortfolioModel};

/// Replicates per reduction chunk. Fixed so that chunking does not depend on
/// the thread pool.
const CHUNK: u64 = 2048;
/// Relative slack in the event `S_n >= n x`.
const THRESHOLD_SLACK: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum McError {
    #[error("number of samples must be at least 1")]
    ZeroSamples,
    #[error("n must be at least 1")]
    ZeroContracts,
    #[error("threshold {0} is not a finite number")]
    InvalidThreshold(f64),
    #[error(
        "x = {x} is {status} for the tilted law; use plain sampling or the exact oracle"
    )]
    NotInterior { x: f64, status: &'static str },
    #[error("invalid sampling weights for class {class}")]
    Weights { class: String },
    #[error(transparent)]
    Legendre(#[from] LegendreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "lambda", rename_all = "snake_case")]
pub enum McMethod {
    Plain,
    Tilted(f64),
}

impl McMethod {
    pub fn name(&self) -> &'static str {
        match self {
            McMethod::Plain => "plain",
            McMethod::Tilted(_) => "tilted",
        }
    }

    /// Tilt parameter, zero for plain sampling.
    pub fn lambda(&self) -> f64 {
        match *self {
            McMethod::Plain => 0.0,
            McMethod::Tilted(l) => l,
        }
    }
}

/// Monte Carlo estimate with its sampling metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailEstimate {
    pub estimate: f64,
    pub std_error: f64,
    /// `log(estimate)`, kept separately because tilted estimates of deep
    /// tails can underflow.
    pub log_estimate: ExtendedReal,
    /// `log(std_error)`.
    pub log_std_error: ExtendedReal,
    pub n_samples: u64,
    pub method: McMethod,
    pub seed: u64,
}

impl TailEstimate {
    /// `std_error / estimate`; infinite when the estimate is zero.
    pub fn relative_error(&self) -> f64 {
        match (self.log_estimate, self.log_std_error) {
            (ExtendedReal::Finite(e), ExtendedReal::Finite(s)) => (s - e).exp(),
            (ExtendedReal::Finite(_), _) => 0.0,
            _ => f64::INFINITY,
        }
    }
}

/// Law with probabilities `p_j exp(lambda v_j) / phi(lambda)` on the same
/// support.
pub fn tilted_class(class: &LossClass, lambda: f64) -> LossClass {
    let (weights, _) = shifted_weights(class, lambda);
    let z: f64 = weights.iter().sum();
    let probs: Vec<f64> = weights.iter().map(|w| w / z).collect();
    LossClass::from_parts_unchecked(class.name(), class.support().to_vec(), probs)
}

/// Running mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default)]
struct Welford {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, v: f64) {
        self.count += 1;
        let delta = v - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (v - self.mean);
    }

    fn merge(self, other: Welford) -> Welford {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.count as f64 / count as f64;
        let m2 = self.m2
            + other.m2
            + delta * delta * (self.count as f64 * other.count as f64 / count as f64);
        Welford { count, mean, m2 }
    }

    /// Standard deviation of the mean.
    fn std_error(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        (self.m2.max(0.0) / (self.count - 1) as f64 / self.count as f64).sqrt()
    }
}

/// Per-class samplers plus the number of contracts drawn from each.
struct Sampler {
    classes: Vec<(WeightedAliasIndex<f64>, Vec<f64>, u64)>,
}

impl Sampler {
    fn new(classes: &[LossClass], counts: &[u64]) -> Result<Self, McError> {
        let classes = classes
            .iter()
            .zip(counts)
            .filter(|(_, &c)| c > 0)
            .map(|(class, &count)| {
                let alias = WeightedAliasIndex::new(class.probs().to_vec()).map_err(|_| {
                    McError::Weights {
                        class: class.name().to_string(),
                    }
                })?;
                Ok((alias, class.support().to_vec(), count))
            })
            .collect::<Result<_, McError>>()?;
        Ok(Sampler { classes })
    }

    fn draw_sum(&self, rng: &mut ChaCha8Rng) -> f64 {
        let mut sum = 0.0;
        for (alias, support, count) in &self.classes {
            for _ in 0..*count {
                sum += support[alias.sample(rng)];
            }
        }
        sum
    }
}

/// Mean of `f(S_n)` over `n_samples` replicates.
fn run<F>(sampler: &Sampler, n_samples: u64, seed: u64, f: F) -> Welford
where
    F: Fn(f64) -> f64 + Sync,
{
    let base = ChaCha8Rng::seed_from_u64(seed);
    let chunks = n_samples.div_ceil(CHUNK);
    let partials: Vec<Welford> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = Welford::default();
            for r in c * CHUNK..((c + 1) * CHUNK).min(n_samples) {
                let mut rng = base.clone();
                rng.set_stream(r);
                acc.push(f(sampler.draw_sum(&mut rng)));
            }
            acc
        })
        .collect();
    partials.into_iter().fold(Welford::default(), Welford::merge)
}

fn check(n: u64, x: f64, n_samples: u64) -> Result<(), McError> {
    if n_samples == 0 {
        return Err(McError::ZeroSamples);
    }
    if n == 0 {
        return Err(McError::ZeroContracts);
    }
    if !x.is_finite() {
        return Err(McError::InvalidThreshold(x));
    }
    Ok(())
}

fn threshold(n: u64, x: f64) -> f64 {
    let t = n as f64 * x;
    t - THRESHOLD_SLACK * t.abs().max(1.0)
}

fn log_or_neg_inf(v: f64) -> ExtendedReal {
    if v > 0.0 {
        ExtendedReal::Finite(v.ln())
    } else {
        ExtendedReal::NegInfinity
    }
}

/// Indicator-mean estimate of `P[M_n >= x]`.
pub fn sample_plain(
    model: &PortfolioModel,
    n: u64,
    x: f64,
    n_samples: u64,
    seed: u64,
) -> Result<TailEstimate, McError> {
    check(n, x, n_samples)?;
    let counts = model.class_counts(n);
    let sampler = Sampler::new(model.classes(), &counts)?;
    let t = threshold(n, x);
    let acc = run(&sampler, n_samples, seed, |s| if s >= t { 1.0 } else { 0.0 });
    let std_error = acc.std_error();
    Ok(TailEstimate {
        estimate: acc.mean,
        std_error,
        log_estimate: log_or_neg_inf(acc.mean),
        log_std_error: log_or_neg_inf(std_error),
        n_samples,
        method: McMethod::Plain,
        seed,
    })
}

/// Importance-sampling estimate of `P[M_n >= x]` under the product law
/// tilted at the maximiser of the finite-n conjugate problem.
///
/// Each replicate contributes `1{S >= nx} exp(-l S + sum_k log phi_k(l))`.
/// The factor `exp(sum_k log phi_k(l) - l n x)` is pulled out of the mean,
/// leaving per-replicate weights `exp(-l (S - nx))` in `[0, 1]`.
pub fn sample_tilted(
    model: &PortfolioModel,
    n: u64,
    x: f64,
    n_samples: u64,
    seed: u64,
) -> Result<TailEstimate, McError> {
    check(n, x, n_samples)?;
    let counts = model.class_counts(n);
    let cgf = MixtureCgf::from_counts(model.classes().to_vec(), &counts);
    let point = conjugate(&cgf, x)?;
    let lambda = match (point.status, point.lambda_star) {
        (RateStatus::Interior, ExtendedReal::Finite(l)) => l,
        (status, _) => {
            return Err(McError::NotInterior {
                x,
                status: status.as_str(),
            })
        }
    };
    sample_tilted_at(model, n, x, n_samples, seed, lambda)
}

/// Importance-sampling estimate with a caller-chosen tilt.
pub fn sample_tilted_at(
    model: &PortfolioModel,
    n: u64,
    x: f64,
    n_samples: u64,
    seed: u64,
    lambda: f64,
) -> Result<TailEstimate, McError> {
    check(n, x, n_samples)?;
    let counts = model.class_counts(n);
    let tilted: Vec<LossClass> = model
        .classes()
        .iter()
        .map(|c| tilted_class(c, lambda))
        .collect();
    let sampler = Sampler::new(&tilted, &counts)?;
    let nx = n as f64 * x;
    let t = threshold(n, x);
    let acc = run(&sampler, n_samples, seed, |s| {
        if s >= t {
            (-lambda * (s - nx)).exp()
        } else {
            0.0
        }
    });
    let log_scale: f64 = model
        .classes()
        .iter()
        .zip(&counts)
        .map(|(c, &k)| k as f64 * class_log_mgf(c, lambda))
        .sum::<f64>()
        - lambda * nx;
    let log_estimate = match log_or_neg_inf(acc.mean) {
        ExtendedReal::Finite(v) => ExtendedReal::Finite(v + log_scale),
        other => other,
    };
    let log_std_error = match log_or_neg_inf(acc.std_error()) {
        ExtendedReal::Finite(v) => ExtendedReal::Finite(v + log_scale),
        other => other,
    };
    Ok(TailEstimate {
        estimate: log_estimate.to_f64().exp().min(1.0),
        std_error: log_std_error.to_f64().exp(),
        log_estimate,
        log_std_error,
        n_samples,
        method: McMethod::Tilted(lambda),
        seed,
    })
}
