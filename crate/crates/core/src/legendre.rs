//! Fenchel-Legendre transforms of mixture CGFs.
//!
//! For a mixture CGF `Lambda` with bounded support the conjugate
//! `Lambda*(x) = sup_l (l x - Lambda(l))` is finite exactly on
//! `[x_min, x_max]`. Inside that interval the supremum is attained at the
//! unique root of `Lambda'(l) = x`, which we find by Newton's method on a
//! doubling bracket with a bisection fallback. At the endpoints the supremum
//! is only approached as `l -> +-inf` and is evaluated in closed form.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::cgf::{CgfError, MixtureCgf};
use crate::extended::ExtendedReal;
use crate::model::PortfolioModel;

pub const MAX_ITERATIONS: usize = 200;
/// Root tolerance on `|Lambda'(l) - x|`, scaled by `max(1, |x|)`.
pub const SOLVER_TOL: f64 = 1e-10;
/// Relative distance to an endpoint below which `x` is treated as the
/// endpoint itself.
const ENDPOINT_TOL: f64 = 1e-12;
const MAX_BRACKET_DOUBLINGS: usize = 1100;

#[derive(Debug, Error, PartialEq)]
pub enum LegendreError {
    #[error(transparent)]
    Cgf(#[from] CgfError),
    #[error("Newton/bisection did not converge at x = {x} after {iterations} iterations")]
    NonConvergence { x: f64, iterations: usize },
    #[error("lambda grid is empty")]
    EmptyGrid,
    #[error("no checkpoint n at or beyond the burn-in {0}")]
    EmptyCheckpoints(u64),
    #[error("threshold must be positive, got {0}")]
    NonPositiveThreshold(f64),
    #[error("expansion grid point {0} outside (0, 0.2]")]
    GridOutOfRange(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RateStatus {
    Interior,
    Boundary,
    Infinite,
}

impl RateStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RateStatus::Interior => "interior",
            RateStatus::Boundary => "boundary",
            RateStatus::Infinite => "infinite",
        }
    }
}

/// Solution of the Legendre problem at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatePoint {
    pub x: f64,
    pub lambda_star: ExtendedReal,
    pub rate: ExtendedReal,
    pub status: RateStatus,
}

/// `Lambda*(x)` for a mixture CGF.
pub fn conjugate(cgf: &MixtureCgf, x: f64) -> Result<RatePoint, LegendreError> {
    let x_max = cgf.support_max();
    let x_min = cgf.support_min();
    let edge_tol = ENDPOINT_TOL * x_max.abs().max(x_min.abs()).max(1.0);

    if x > x_max + edge_tol || x < x_min - edge_tol {
        let lambda_star = if x > x_max {
            ExtendedReal::PosInfinity
        } else {
            ExtendedReal::NegInfinity
        };
        return Ok(RatePoint {
            x,
            lambda_star,
            rate: ExtendedReal::PosInfinity,
            status: RateStatus::Infinite,
        });
    }
    if (x - x_max).abs() <= edge_tol {
        return Ok(RatePoint {
            x,
            lambda_star: ExtendedReal::PosInfinity,
            rate: ExtendedReal::Finite(-cgf.log_prob_max()),
            status: RateStatus::Boundary,
        });
    }
    if (x - x_min).abs() <= edge_tol {
        return Ok(RatePoint {
            x,
            lambda_star: ExtendedReal::NegInfinity,
            rate: ExtendedReal::Finite(-cgf.log_prob_min()),
            status: RateStatus::Boundary,
        });
    }

    let lambda = solve_tilt(cgf, x)?;
    let rate = (lambda * x - cgf.value(lambda)).max(0.0);
    Ok(RatePoint {
        x,
        lambda_star: ExtendedReal::Finite(lambda),
        rate: ExtendedReal::Finite(rate),
        status: RateStatus::Interior,
    })
}

/// Root of `Lambda'(l) = x` for `x` strictly inside the support.
pub(crate) fn solve_tilt(cgf: &MixtureCgf, x: f64) -> Result<f64, LegendreError> {
    let tol = SOLVER_TOL * x.abs().max(1.0);
    let origin = cgf.eval(0.0);
    if (origin.d1 - x).abs() <= tol {
        return Ok(0.0);
    }

    // Bracket [lo, hi] with Lambda'(lo) < x < Lambda'(hi).
    let (mut lo, mut hi) = if origin.d1 < x {
        let mut hi = 1.0;
        let mut doublings = 0;
        while cgf.eval(hi).d1 < x {
            hi *= 2.0;
            doublings += 1;
            if doublings > MAX_BRACKET_DOUBLINGS || !hi.is_finite() {
                return Err(LegendreError::NonConvergence {
                    x,
                    iterations: doublings,
                });
            }
        }
        (if doublings == 0 { 0.0 } else { hi / 2.0 }, hi)
    } else {
        let mut lo = -1.0;
        let mut doublings = 0;
        while cgf.eval(lo).d1 > x {
            lo *= 2.0;
            doublings += 1;
            if doublings > MAX_BRACKET_DOUBLINGS || !lo.is_finite() {
                return Err(LegendreError::NonConvergence {
                    x,
                    iterations: doublings,
                });
            }
        }
        (lo, if doublings == 0 { 0.0 } else { lo / 2.0 })
    };

    let mut lambda = if origin.d2 > 0.0 {
        (x - origin.d1) / origin.d2
    } else {
        0.5 * (lo + hi)
    };
    if !(lambda > lo && lambda < hi) {
        lambda = 0.5 * (lo + hi);
    }
    for _ in 0..MAX_ITERATIONS {
        let p = cgf.eval(lambda);
        let f = p.d1 - x;
        if f.abs() <= tol {
            return Ok(lambda);
        }
        if f < 0.0 {
            lo = lambda;
        } else {
            hi = lambda;
        }
        if hi - lo <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs()) {
            // Bracket collapsed to adjacent floats; nothing left to refine.
            return Ok(lambda);
        }
        let newton = lambda - f / p.d2;
        lambda = if p.d2 > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(LegendreError::NonConvergence {
        x,
        iterations: MAX_ITERATIONS,
    })
}

/// `Lambda*(x)` for the limit CGF of a weighted model.
pub fn legendre_transform(model: &PortfolioModel, x: f64) -> Result<RatePoint, LegendreError> {
    conjugate(&MixtureCgf::limit(model)?, x)
}

/// `Lambda*` over a grid of thresholds, in input order.
pub fn rate_curve(cgf: &MixtureCgf, xs: &[f64]) -> Result<Vec<RatePoint>, LegendreError> {
    xs.par_iter().map(|&x| conjugate(cgf, x)).collect()
}

/// The two symmetric laws of the counterexample: `{-1, 1}` and `{-2, 2}`,
/// each point with probability one half.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TwoPoint {
    Unit,
    Double,
}

impl TwoPoint {
    pub fn from_index(which: u8) -> Option<Self> {
        match which {
            1 => Some(TwoPoint::Unit),
            2 => Some(TwoPoint::Double),
            _ => None,
        }
    }

    pub fn half_width(self) -> f64 {
        match self {
            TwoPoint::Unit => 1.0,
            TwoPoint::Double => 2.0,
        }
    }

    pub fn rate(self, x: f64) -> ExtendedReal {
        match self {
            TwoPoint::Unit => rate_i1(x),
            TwoPoint::Double => rate_i2(x),
        }
    }

    /// Coefficients of `x^2, x^4, x^6` in the expansion of the rate at zero.
    pub fn taylor_coefficients(self) -> [f64; 3] {
        match self {
            TwoPoint::Unit => [0.5, 1.0 / 12.0, 1.0 / 30.0],
            TwoPoint::Double => [1.0 / 8.0, 1.0 / 192.0, 1.0 / 1920.0],
        }
    }
}

/// Rate function of the `{-1, 1}` coin:
/// `log 2 + (1+x)/2 log((1+x)/2) + (1-x)/2 log((1-x)/2)` on `[-1, 1]`.
///
/// Evaluated as `x atanh(x) + log(1 - x^2)/2`, which is the same function
/// without the cancellation of the three-term form near zero.
pub fn rate_i1(x: f64) -> ExtendedReal {
    let a = x.abs();
    if a < 1.0 {
        ExtendedReal::Finite(x * x.atanh() + 0.5 * (-x * x).ln_1p())
    } else if a == 1.0 {
        ExtendedReal::Finite(std::f64::consts::LN_2)
    } else {
        ExtendedReal::PosInfinity
    }
}

/// Rate function of the `{-2, 2}` coin, `I2(x) = I1(x/2)` on `[-2, 2]`.
pub fn rate_i2(x: f64) -> ExtendedReal {
    rate_i1(0.5 * x)
}

/// `max_x |I(x) - P6(x)| / x^8` over the grid, with `P6` the degree-6 Taylor
/// polynomial of the chosen rate at zero.
pub fn rate_expansion_check(which: TwoPoint, grid: &[f64]) -> Result<f64, LegendreError> {
    if grid.is_empty() {
        return Err(LegendreError::EmptyGrid);
    }
    let [a2, a4, a6] = which.taylor_coefficients();
    let mut worst: f64 = 0.0;
    for &x in grid {
        if !(x > 0.0 && x <= 0.2) {
            return Err(LegendreError::GridOutOfRange(x));
        }
        let x2 = x * x;
        let poly = x2 * (a2 + x2 * (a4 + x2 * a6));
        let rate = which.rate(x).finite().expect("finite inside the support");
        worst = worst.max((rate - poly).abs() / x2.powi(4));
    }
    Ok(worst)
}

/// Numerical stand-in for the exponent `J(x)` of the upper bound
/// `limsup (1/n) log P[M_n >= x] <= -J(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UpperBoundEstimate {
    pub x: f64,
    pub value: f64,
    pub lambda: f64,
}

/// `sup_{l in grid} (l x - max_n Lambda_n(l))`, where `Lambda_n` is the
/// finite-n CGF and the max runs over the checkpoints `n >= burn_in`.
///
/// The max over checkpoints replaces the limsup. Restricting the supremum to
/// a grid can only lower it, so the returned value never overstates the
/// conjugate of the max-CGF.
pub fn rate_upper_bound(
    model: &PortfolioModel,
    x: f64,
    lambda_grid: &[f64],
    checkpoints: &[u64],
    burn_in: u64,
) -> Result<UpperBoundEstimate, LegendreError> {
    if !(x > 0.0) {
        return Err(LegendreError::NonPositiveThreshold(x));
    }
    if lambda_grid.is_empty() {
        return Err(LegendreError::EmptyGrid);
    }
    let sections: Vec<MixtureCgf> = checkpoints
        .iter()
        .filter(|&&n| n >= burn_in && n >= 1)
        .map(|&n| MixtureCgf::empirical(model, n))
        .collect();
    if sections.is_empty() {
        return Err(LegendreError::EmptyCheckpoints(burn_in));
    }
    let best = lambda_grid
        .par_iter()
        .map(|&lambda| {
            let upper = sections
                .iter()
                .map(|s| s.value(lambda))
                .fold(f64::NEG_INFINITY, f64::max);
            (lambda * x - upper, lambda)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((f64::NEG_INFINITY, f64::NAN), |acc, v| if v.0 > acc.0 { v } else { acc });
    Ok(UpperBoundEstimate {
        x,
        value: best.0,
        lambda: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AssignmentRule, BlockSchedule, LossClass, Regime};
    use proptest::prelude::*;

    fn unit_model() -> PortfolioModel {
        PortfolioModel::single(LossClass::symmetric("unit", 1.0))
    }

    fn finite(v: ExtendedReal) -> f64 {
        v.finite().expect("finite")
    }

    // Three-term closed form, independent of the atanh evaluation.
    fn i1_reference(x: f64) -> f64 {
        let xlogx = |t: f64| if t == 0.0 { 0.0 } else { t * t.ln() };
        std::f64::consts::LN_2 + xlogx((1.0 + x) / 2.0) + xlogx((1.0 - x) / 2.0)
    }

    #[test]
    fn conjugate_of_log_cosh_at_tanh_one() {
        let p = legendre_transform(&unit_model(), 1f64.tanh()).unwrap();
        assert_eq!(p.status, RateStatus::Interior);
        assert!((finite(p.lambda_star) - 1.0).abs() < 1e-9);
        assert!((finite(p.rate) - 0.3278133254727377).abs() < 1e-12);
    }

    #[test]
    fn zero_threshold_has_zero_rate() {
        let model = PortfolioModel::new(
            vec![LossClass::symmetric("a", 1.0), LossClass::symmetric("b", 2.0)],
            Regime::Weighted(vec![0.3, 0.7]),
        )
        .unwrap();
        let p = legendre_transform(&model, 0.0).unwrap();
        assert_eq!(p.lambda_star, ExtendedReal::Finite(0.0));
        assert_eq!(p.rate, ExtendedReal::Finite(0.0));
    }

    #[test]
    fn boundary_and_beyond() {
        let p = legendre_transform(&unit_model(), 1.0).unwrap();
        assert_eq!(p.status, RateStatus::Boundary);
        assert!((finite(p.rate) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(p.lambda_star, ExtendedReal::PosInfinity);
        let q = legendre_transform(&unit_model(), -1.0).unwrap();
        assert_eq!(q.status, RateStatus::Boundary);
        assert_eq!(q.lambda_star, ExtendedReal::NegInfinity);
        let r = legendre_transform(&unit_model(), 1.5).unwrap();
        assert_eq!(r.status, RateStatus::Infinite);
        assert_eq!(r.rate, ExtendedReal::PosInfinity);
    }

    #[test]
    fn near_boundary_solves_with_large_tilt() {
        let p = legendre_transform(&unit_model(), 1.0 - 1e-9).unwrap();
        assert_eq!(p.status, RateStatus::Interior);
        assert!((finite(p.rate) - i1_reference(1.0 - 1e-9)).abs() < 1e-8);
    }

    #[test]
    fn closed_forms() {
        assert_eq!(rate_i1(0.0), ExtendedReal::Finite(0.0));
        assert!((finite(rate_i1(0.5)) - 0.13081203594113696).abs() < 1e-15);
        assert_eq!(rate_i1(1.5), ExtendedReal::PosInfinity);
        assert_eq!(rate_i2(0.0), ExtendedReal::Finite(0.0));
        assert!((finite(rate_i2(0.5)) - 0.03158394240196325).abs() < 1e-15);
        assert_eq!(rate_i2(2.0), ExtendedReal::Finite(std::f64::consts::LN_2));
        assert_eq!(rate_i2(-2.5), ExtendedReal::PosInfinity);
    }

    #[test]
    fn atanh_form_matches_three_term_form() {
        for i in -99..=99 {
            let x = i as f64 / 100.0;
            assert!((finite(rate_i1(x)) - i1_reference(x)).abs() < 1e-14, "{x}");
        }
    }

    #[test]
    fn expansion_remainder_is_bounded() {
        let grid: Vec<f64> = (1..=20).map(|i| i as f64 * 0.01).collect();
        let c1 = rate_expansion_check(TwoPoint::Unit, &grid).unwrap();
        // The next coefficient of I1 is 1/56, of I2 it is 1/56/256.
        assert!(c1 < 0.03, "{c1}");
        let c2 = rate_expansion_check(TwoPoint::Double, &grid).unwrap();
        assert!(c2 < 1e-4, "{c2}");
        // Toward zero the constant approaches the next coefficient.
        let near: Vec<f64> = (4..=10).map(|i| i as f64 * 0.005).collect();
        let c = rate_expansion_check(TwoPoint::Unit, &near).unwrap();
        assert!((c - 1.0 / 56.0).abs() < 1e-3, "{c}");
    }

    #[test]
    fn expansion_at_one_tenth() {
        let x: f64 = 0.1;
        let poly = 0.005 + 1e-4 / 12.0 + 1e-6 / 30.0;
        assert!((finite(rate_i1(x)) - poly).abs() <= 1e-8 * 0.02);
        assert!(rate_expansion_check(TwoPoint::Unit, &[0.3]).is_err());
        assert!(rate_expansion_check(TwoPoint::Unit, &[]).is_err());
    }

    #[test]
    fn leading_coefficient() {
        for x in [1e-2, 1e-3, 1e-4] {
            assert!((finite(rate_i1(x)) / (x * x) - 0.5).abs() < x);
            assert!((finite(rate_i2(x)) / (x * x) - 0.125).abs() < x);
        }
    }

    #[test]
    fn closed_forms_strictly_convex() {
        for (which, half) in [(TwoPoint::Unit, 1.0f64), (TwoPoint::Double, 2.0)] {
            let h = 1e-3 * half;
            let steps = (2.0 * half / h).round() as i64;
            for i in 1..steps {
                let x = -half + i as f64 * h;
                let second = finite(which.rate(x - h)) - 2.0 * finite(which.rate(x))
                    + finite(which.rate(x + h));
                assert!(second > 0.0, "{which:?} at {x}");
            }
        }
    }

    #[test]
    fn numerical_transform_matches_closed_forms() {
        for (a, which) in [(1.0, TwoPoint::Unit), (2.0, TwoPoint::Double)] {
            let model = PortfolioModel::single(LossClass::symmetric("c", a));
            for i in 0..51 {
                let x = a * (-0.99 + 1.98 * i as f64 / 50.0);
                let p = legendre_transform(&model, x).unwrap();
                assert!((finite(p.rate) - finite(which.rate(x))).abs() <= 1e-8);
            }
        }
    }

    fn block_model() -> PortfolioModel {
        let schedule = BlockSchedule::new(1, 10, vec![0, 1]).unwrap();
        PortfolioModel::new(
            vec![LossClass::symmetric("unit", 1.0), LossClass::symmetric("double", 2.0)],
            Regime::Assigned(AssignmentRule::Blocks(schedule)),
        )
        .unwrap()
    }

    fn lambda_grid() -> Vec<f64> {
        (0..=2000).map(|i| i as f64 * 0.002).collect()
    }

    #[test]
    fn upper_bound_lies_between_pure_rates() {
        let checkpoints = [111, 1111, 11111, 111111];
        let j = rate_upper_bound(&block_model(), 0.5, &lambda_grid(), &checkpoints, 100).unwrap();
        assert!(j.value >= finite(rate_i2(0.5)) && j.value <= finite(rate_i1(0.5)), "{j:?}");
    }

    #[test]
    fn upper_bound_is_positive_near_zero() {
        let checkpoints = [111, 1111, 11111];
        let grid: Vec<f64> = (0..=4000).map(|i| i as f64 * 0.0005).collect();
        let mut prev = f64::INFINITY;
        for x in [0.2, 0.1, 0.05, 0.02, 0.01] {
            let j = rate_upper_bound(&block_model(), x, &grid, &checkpoints, 1).unwrap();
            assert!(j.value > 0.0 && j.value < prev);
            prev = j.value;
        }
    }

    #[test]
    fn upper_bound_for_single_class_matches_transform() {
        let model = unit_model();
        let grid: Vec<f64> = (0..=20000).map(|i| i as f64 * 1e-4).collect();
        let j = rate_upper_bound(&model, 0.5, &grid, &[1, 10, 100], 1).unwrap();
        let exact = finite(legendre_transform(&model, 0.5).unwrap().rate);
        // Grid step 1e-4 around the maximiser costs O(step^2).
        assert!(exact - j.value >= 0.0 && exact - j.value < 1e-7);
    }

    #[test]
    fn upper_bound_errors() {
        let m = unit_model();
        assert_eq!(
            rate_upper_bound(&m, 0.5, &[], &[1], 1),
            Err(LegendreError::EmptyGrid)
        );
        assert_eq!(
            rate_upper_bound(&m, 0.5, &[0.1], &[5], 10),
            Err(LegendreError::EmptyCheckpoints(10))
        );
        assert!(rate_upper_bound(&m, 0.0, &[0.1], &[5], 1).is_err());
    }

    #[test]
    fn rate_curve_preserves_order() {
        let cgf = MixtureCgf::limit(&unit_model()).unwrap();
        let xs: Vec<f64> = (0..40).map(|i| -0.95 + 0.05 * i as f64).collect();
        let curve = rate_curve(&cgf, &xs).unwrap();
        for (p, x) in curve.iter().zip(&xs) {
            assert_eq!(p.x, *x);
            assert_eq!(*p, conjugate(&cgf, *x).unwrap());
        }
    }

    fn arb_mixture() -> impl Strategy<Value = MixtureCgf> {
        let class = (
            prop::collection::btree_set(-30i32..30, 2..5),
            prop::collection::vec(0.05f64..1.0, 5),
        )
            .prop_map(|(support, raw)| {
                let support: Vec<f64> = support.into_iter().map(|v| v as f64 / 10.0).collect();
                let probs = &raw[..support.len()];
                let total: f64 = probs.iter().sum();
                let probs = probs.iter().map(|p| p / total).collect();
                LossClass::centered("c", support, probs).unwrap()
            });
        (prop::collection::vec(class, 1..4), prop::collection::vec(0.1f64..1.0, 3)).prop_map(
            |(classes, raw)| {
                let w = &raw[..classes.len()];
                let total: f64 = w.iter().sum();
                let weights = w.iter().map(|v| v / total).collect();
                MixtureCgf::new(classes, weights)
            },
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn conjugate_is_nonnegative_convex_and_dual(cgf in arb_mixture()) {
            let (lo, hi) = (cgf.support_min(), cgf.support_max());
            let xs: Vec<f64> = (1..60).map(|i| lo + (hi - lo) * i as f64 / 60.0).collect();
            let pts: Vec<RatePoint> = xs.iter().map(|&x| conjugate(&cgf, x).unwrap()).collect();
            for p in &pts {
                prop_assert_eq!(p.status, RateStatus::Interior);
                let rate = p.rate.finite().unwrap();
                prop_assert!(rate >= 0.0);
                let lambda = p.lambda_star.finite().unwrap();
                let e = cgf.eval(lambda);
                prop_assert!((e.d1 - p.x).abs() <= SOLVER_TOL * p.x.abs().max(1.0));
                prop_assert!((e.value + rate - lambda * p.x).abs() <= 1e-9 * (1.0 + (lambda * p.x).abs()));
            }
            for w in pts.windows(3) {
                let mid = w[1].rate.finite().unwrap();
                let avg = 0.5 * (w[0].rate.finite().unwrap() + w[2].rate.finite().unwrap());
                prop_assert!(mid <= avg + 1e-9);
            }
            let zero = conjugate(&cgf, 0.0).unwrap();
            prop_assert!(zero.rate.finite().unwrap().abs() <= 1e-12);
        }
    }
}
