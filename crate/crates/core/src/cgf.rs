//! Moment and cumulant generating functions.
//!
//! Every evaluation goes through exponent-shifted sums: for a class with
//! support `v_j` and masses `p_j` we subtract `m = max_j lambda*v_j` before
//! exponentiating, so `log phi(lambda) = m + log sum_j p_j exp(lambda*v_j - m)`
//! is finite for any finite `lambda`. The first two derivatives of the log-MGF
//! are the mean and variance of the exponentially tilted law and are computed
//! from the same shifted weights.

use serde::Serialize;
use thiserror::Error;

use crate::model::{AssignmentRule, LossClass, PortfolioModel, Regime};

/// Highest cumulant order supported by [`cumulants`].
pub const MAX_CUMULANT_ORDER: usize = 6;

#[derive(Debug, Error, PartialEq)]
pub enum CgfError {
    #[error("the limit CGF needs asymptotic class densities; block schedules have none")]
    NotWeighted,
    #[error("cumulant order must be between 1 and {MAX_CUMULANT_ORDER}, got {0}")]
    CumulantOrder(usize),
}

/// `(lambda, Lambda(lambda), Lambda'(lambda), Lambda''(lambda))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CgfPoint {
    pub lambda: f64,
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Log-MGF of one class together with the tilted mean and variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassCgf {
    pub log_mgf: f64,
    pub mean: f64,
    pub variance: f64,
}

/// Shifted exponential weights `p_j exp(lambda v_j - m)` and the shift `m`.
pub(crate) fn shifted_weights(class: &LossClass, lambda: f64) -> (Vec<f64>, f64) {
    let shift = class
        .support()
        .iter()
        .map(|v| lambda * v)
        .fold(f64::NEG_INFINITY, f64::max);
    let weights = class
        .support()
        .iter()
        .zip(class.probs())
        .map(|(v, p)| p * (lambda * v - shift).exp())
        .collect();
    (weights, shift)
}

pub fn class_cgf(class: &LossClass, lambda: f64) -> ClassCgf {
    let (weights, shift) = shifted_weights(class, lambda);
    let z: f64 = weights.iter().sum();
    let mean = class
        .support()
        .iter()
        .zip(&weights)
        .map(|(v, w)| v * w)
        .sum::<f64>()
        / z;
    let variance = class
        .support()
        .iter()
        .zip(&weights)
        .map(|(v, w)| (v - mean) * (v - mean) * w)
        .sum::<f64>()
        / z;
    ClassCgf {
        log_mgf: shift + z.ln(),
        mean,
        variance,
    }
}

pub fn class_log_mgf(class: &LossClass, lambda: f64) -> f64 {
    let (weights, shift) = shifted_weights(class, lambda);
    shift + weights.iter().sum::<f64>().ln()
}

/// `phi(lambda) = E[exp(lambda X)]`. Finite whenever `|lambda| * max|v| <= 700`.
pub fn class_mgf(class: &LossClass, lambda: f64) -> f64 {
    class_log_mgf(class, lambda).exp()
}

/// `Lambda(lambda) = sum_i w_i log phi_i(lambda)` for nonnegative weights `w_i`.
///
/// With the asymptotic densities `d_i` this is the limit CGF; with
/// `nu_i(n)/n` it is the finite-n average `(1/n) sum_k log phi_{class(k)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureCgf {
    classes: Vec<LossClass>,
    weights: Vec<f64>,
}

impl MixtureCgf {
    pub fn new(classes: Vec<LossClass>, weights: Vec<f64>) -> Self {
        assert_eq!(classes.len(), weights.len(), "one weight per class");
        assert!(
            weights.iter().all(|w| w.is_finite() && *w >= 0.0),
            "weights must be nonnegative"
        );
        MixtureCgf { classes, weights }
    }

    /// The limit CGF of a model whose class densities converge: weighted
    /// models and round-robin assignments.
    pub fn limit(model: &PortfolioModel) -> Result<Self, CgfError> {
        let weights = match model.regime() {
            Regime::Weighted(w) => w.clone(),
            Regime::Assigned(AssignmentRule::RoundRobin { weights }) => {
                let total = weights.iter().sum::<u64>() as f64;
                weights.iter().map(|&w| w as f64 / total).collect()
            }
            Regime::Assigned(AssignmentRule::Blocks(_)) => return Err(CgfError::NotWeighted),
        };
        Ok(Self::new(model.classes().to_vec(), weights))
    }

    /// The finite-n CGF with weights `nu_i(n)/n`.
    pub fn empirical(model: &PortfolioModel, n: u64) -> Self {
        assert!(n >= 1, "n must be positive");
        let counts = model.class_counts(n);
        Self::from_counts(model.classes().to_vec(), &counts)
    }

    pub fn from_counts(classes: Vec<LossClass>, counts: &[u64]) -> Self {
        let n: u64 = counts.iter().sum();
        let weights = counts.iter().map(|&c| c as f64 / n as f64).collect();
        Self::new(classes, weights)
    }

    pub fn classes(&self) -> &[LossClass] {
        &self.classes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn active(&self) -> impl Iterator<Item = (&LossClass, f64)> {
        self.classes
            .iter()
            .zip(self.weights.iter().copied())
            .filter(|&(_, w)| w > 0.0)
    }

    pub fn eval(&self, lambda: f64) -> CgfPoint {
        let (mut value, mut d1, mut d2) = (0.0, 0.0, 0.0);
        for (class, w) in self.active() {
            let c = class_cgf(class, lambda);
            value += w * c.log_mgf;
            d1 += w * c.mean;
            d2 += w * c.variance;
        }
        CgfPoint {
            lambda,
            value,
            d1,
            d2,
        }
    }

    pub fn value(&self, lambda: f64) -> f64 {
        self.active()
            .map(|(class, w)| w * class_log_mgf(class, lambda))
            .sum()
    }

    /// `sum_i w_i max(support_i)`: the right end of the effective domain of
    /// the conjugate.
    pub fn support_max(&self) -> f64 {
        self.active().map(|(c, w)| w * c.max_value()).sum()
    }

    pub fn support_min(&self) -> f64 {
        self.active().map(|(c, w)| w * c.min_value()).sum()
    }

    /// `sum_i w_i log P[X_i = max support_i]`.
    pub fn log_prob_max(&self) -> f64 {
        self.active().map(|(c, w)| w * c.prob_of_max().ln()).sum()
    }

    pub fn log_prob_min(&self) -> f64 {
        self.active().map(|(c, w)| w * c.prob_of_min().ln()).sum()
    }

    /// `sum_i w_i Var(X_i)`, i.e. `Lambda''(0)`.
    pub fn variance(&self) -> f64 {
        self.active().map(|(c, w)| w * c.variance()).sum()
    }

    /// Smallest gap between the top two support points over active classes.
    pub(crate) fn top_gap(&self) -> f64 {
        self.active()
            .filter_map(|(c, _)| {
                let s = c.support();
                (s.len() >= 2).then(|| s[s.len() - 1] - s[s.len() - 2])
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Limit CGF of a weighted model at `lambda`.
pub fn limit_cgf(model: &PortfolioModel, lambda: f64) -> Result<CgfPoint, CgfError> {
    Ok(MixtureCgf::limit(model)?.eval(lambda))
}

/// `(1/n) sum_{k<=n} log phi_{class(k)}(lambda)` with derivatives.
pub fn empirical_cgf(model: &PortfolioModel, n: u64, lambda: f64) -> CgfPoint {
    MixtureCgf::empirical(model, n).eval(lambda)
}

/// Cumulants `kappa_1..kappa_order` from raw moments via
/// `kappa_n = m_n - sum_{k=1}^{n-1} C(n-1, k-1) kappa_k m_{n-k}`.
pub fn cumulants(class: &LossClass, order: usize) -> Result<Vec<f64>, CgfError> {
    if order == 0 || order > MAX_CUMULANT_ORDER {
        return Err(CgfError::CumulantOrder(order));
    }
    let moments: Vec<f64> = (0..=order)
        .map(|j| {
            class
                .support()
                .iter()
                .zip(class.probs())
                .map(|(v, p)| p * v.powi(j as i32))
                .sum()
        })
        .collect();
    let mut kappa = vec![0.0; order + 1];
    for n in 1..=order {
        let mut k = moments[n];
        for j in 1..n {
            k -= binomial(n - 1, j - 1) * kappa[j] * moments[n - j];
        }
        kappa[n] = k;
    }
    kappa.remove(0);
    Ok(kappa)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}
