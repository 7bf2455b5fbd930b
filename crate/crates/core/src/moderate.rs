//! Moderate-deviation thresholds and Gaussian tail utilities.
//!
//! For `1 < y = c n^alpha` with `0 < alpha < 1/2`, the event
//! `M_n > c n^(alpha - 1) B_n^(1/2)` has probability
//! `exp(-c^2 n^(2 alpha) (1 + o(1)) / 2)`, with `B_n` the summed variance.

use std::f64::consts::{E, PI, SQRT_2};

use serde::Serialize;
use thiserror::Error;

use crate::model::{AssumptionBounds, PortfolioModel};

/// Below this `y` the tail comes straight from `erfc`; above it from the
/// asymptotic series, which is then accurate to double precision.
const SERIES_CUTOFF: f64 = 35.0;

#[derive(Debug, Error, PartialEq)]
pub enum MdError {
    #[error("c must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("alpha must lie strictly between 0 and 1/2, got {0}")]
    InvalidExponent(f64),
    #[error("n must be at least 1")]
    ZeroContracts,
    #[error(
        "y = c n^alpha = {0} is not above 1; this is the central-limit regime, \
         not a moderate deviation"
    )]
    CentralRegime(f64),
}

/// `1 - Phi(y)` for the standard normal distribution function `Phi`.
pub fn gaussian_upper_tail(y: f64) -> f64 {
    if y > SERIES_CUTOFF {
        log_gaussian_upper_tail(y).exp()
    } else {
        0.5 * libm::erfc(y / SQRT_2)
    }
}

/// `log(1 - Phi(y))`, finite for every finite `y`.
pub fn log_gaussian_upper_tail(y: f64) -> f64 {
    if y > SERIES_CUTOFF {
        // Q(y) = phi(y)/y * (1 - 1/y^2 + 3/y^4 - 15/y^6 + ...)
        let inv2 = 1.0 / (y * y);
        let mut term = 1.0;
        let mut series = 1.0;
        for k in 1..=6 {
            term *= -((2 * k - 1) as f64) * inv2;
            series += term;
        }
        -0.5 * y * y - y.ln() - 0.5 * (2.0 * PI).ln() + series.ln()
    } else if y < 0.0 {
        (-0.5 * libm::erfc(-y / SQRT_2)).ln_1p()
    } else {
        (0.5 * libm::erfc(y / SQRT_2)).ln()
    }
}

/// Moderate-deviation query `(c, alpha, n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MdQuery {
    c: f64,
    alpha: f64,
    n: u64,
}

impl MdQuery {
    pub fn new(c: f64, alpha: f64, n: u64) -> Result<Self, MdError> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(MdError::InvalidScale(c));
        }
        if !(alpha > 0.0 && alpha < 0.5) {
            return Err(MdError::InvalidExponent(alpha));
        }
        if n == 0 {
            return Err(MdError::ZeroContracts);
        }
        let q = MdQuery { c, alpha, n };
        if q.y() <= 1.0 {
            return Err(MdError::CentralRegime(q.y()));
        }
        Ok(q)
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// `y = c n^alpha`.
    pub fn y(&self) -> f64 {
        self.c * (self.n as f64).powf(self.alpha)
    }
}

/// `B_n`, the sum of the variances of the first `n` contracts.
pub fn variance_sum(model: &PortfolioModel, n: u64) -> f64 {
    model
        .class_counts(n)
        .iter()
        .zip(model.classes())
        .map(|(&k, class)| k as f64 * class.variance())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MdThresholds {
    /// `c n^(alpha - 1) B_n^(1/2)`.
    pub exact: f64,
    /// `c c1^(1/2) n^(alpha - 1/2)`.
    pub lower: f64,
    /// `c c0 n^(alpha - 1/2)`.
    pub upper: f64,
}

pub fn md_threshold(q: &MdQuery, model: &PortfolioModel, bounds: &AssumptionBounds) -> MdThresholds {
    let n = q.n as f64;
    let scale = q.c * n.powf(q.alpha - 0.5);
    MdThresholds {
        exact: q.c * n.powf(q.alpha - 1.0) * variance_sum(model, q.n).sqrt(),
        lower: scale * bounds.c1().sqrt(),
        upper: scale * bounds.c0(),
    }
}

/// Predicted `-log P` and the sizes of the terms it leaves out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MdPrediction {
    /// `c^2 n^(2 alpha) / 2`.
    pub leading: f64,
    /// Order of the neglected exponent correction, `c^3 n^(3 alpha - 1/2)`.
    pub correction_scale: f64,
    /// `log(y sqrt(2 pi))`, the Gaussian prefactor in `-log(1 - Phi(y))`.
    pub log_prefactor: f64,
    /// `correction_scale / leading` up to the constant, `n^(alpha - 1/2)`.
    pub correction_ratio: f64,
}

pub fn md_log_prob_prediction(q: &MdQuery) -> MdPrediction {
    let n = q.n as f64;
    let y = q.y();
    MdPrediction {
        leading: 0.5 * y * y,
        correction_scale: q.c.powi(3) * n.powf(3.0 * q.alpha - 0.5),
        log_prefactor: (y * (2.0 * PI).sqrt()).ln(),
        correction_ratio: n.powf(q.alpha - 0.5),
    }
}

/// Constants `(H, g, G)` for which the complex moment condition holds on
/// `|h| < H` under a uniform bound `c0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[allow(non_snake_case)]
pub struct PetrovConstants {
    pub H: f64,
    pub g: f64,
    pub G: f64,
}

pub fn petrov_constants(bounds: &AssumptionBounds) -> PetrovConstants {
    let h = 1.0 / bounds.c0();
    let product = bounds.c0() * h;
    PetrovConstants {
        H: h,
        g: 0.5 * (-product).exp(),
        G: product.exp(),
    }
}

/// `g` and `G` for any `c0`: `c0 H = 1` always.
pub const PETROV_G_LOWER: f64 = 0.5 / E;
pub const PETROV_G_UPPER: f64 = E;
