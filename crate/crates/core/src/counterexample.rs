//! Two-class portfolio whose class densities oscillate, so that finite-n
//! log-tail rates along different subsequences approach different limits.
//!
//! Contracts follow a block schedule: block `j` has length `B^j` and holds
//! `{-1, 1}` coins for even `j` and `{-2, 2}` coins for odd `j`. At the end of
//! a `{-1, 1}` block the other class has density about `1/(B+1)`, and
//! symmetrically at the end of a `{-2, 2}` block.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::cgf::MixtureCgf;
use crate::exact::{ExactConfig, ExactError, ExactOracle, TailKind, TailProbability};
use crate::extended::ExtendedReal;
use crate::legendre::{conjugate, LegendreError, TwoPoint};
use crate::model::{
    AssignmentRule, AssumptionBounds, BlockSchedule, LossClass, PortfolioModel, Regime,
};

#[derive(Debug, Error, PartialEq)]
pub enum CounterexampleError {
    #[error("depth must be at least 1")]
    ZeroDepth,
    #[error("growth factor must be at least 2, got {0}")]
    Growth(u64),
    #[error("threshold {x} must lie in (0, {max})")]
    Threshold { x: f64, max: f64 },
    #[error("no contracts of class {which} among the first {n}")]
    EmptySection { n: u64, which: u8 },
    #[error(transparent)]
    Exact(#[from] ExactError),
    #[error(transparent)]
    Legendre(#[from] LegendreError),
}

/// The block-scheduled model truncated to its first `depth` blocks.
#[derive(Debug, Clone)]
pub struct Counterexample {
    model: PortfolioModel,
    schedule: BlockSchedule,
    depth: usize,
}

impl Counterexample {
    pub fn model(&self) -> &PortfolioModel {
        &self.model
    }

    pub fn schedule(&self) -> &BlockSchedule {
        &self.schedule
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Bounds under which both classes are admissible.
    pub fn bounds() -> AssumptionBounds {
        AssumptionBounds::new(2.0, 1.0).expect("valid constants")
    }

    /// Last index of each of the first `depth` blocks of class `which`.
    pub fn block_ends(&self, which: TwoPoint) -> Vec<u64> {
        let class = class_index(which);
        self.schedule
            .blocks()
            .take(self.depth)
            .filter(|b| b.class == class)
            .map(|b| b.end)
            .collect()
    }

    /// Density `nu_1(n)/n` of the `{-1, 1}` class.
    pub fn unit_density(&self, n: u64) -> f64 {
        self.model.class_counts(n)[0] as f64 / n as f64
    }

    /// Extremes of `nu_1(n)/n` over the ends of blocks `1..depth`. The
    /// density is monotone inside each block, so block ends are where the
    /// extremes occur.
    pub fn density_range(&self) -> (f64, f64) {
        self.schedule
            .blocks()
            .take(self.depth)
            .skip(1)
            .map(|b| self.unit_density(b.end))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| {
                (lo.min(d), hi.max(d))
            })
    }

    /// Limits of the two densities at block ends as depth grows:
    /// `1/(B+1)` and `B/(B+1)`.
    pub fn limiting_density_range(&self) -> (f64, f64) {
        let b = self.schedule.growth() as f64;
        (1.0 / (b + 1.0), b / (b + 1.0))
    }
}

fn class_index(which: TwoPoint) -> usize {
    match which {
        TwoPoint::Unit => 0,
        TwoPoint::Double => 1,
    }
}

/// Blocks of lengths `1, B, B^2, ...` alternating between the `{-1, 1}` and
/// `{-2, 2}` coins, starting with `{-1, 1}`.
pub fn build_counterexample(growth: u64, depth: usize) -> Result<Counterexample, CounterexampleError> {
    if depth == 0 {
        return Err(CounterexampleError::ZeroDepth);
    }
    if growth < 2 {
        return Err(CounterexampleError::Growth(growth));
    }
    let schedule = BlockSchedule::new(1, growth, vec![0, 1]).expect("checked parameters");
    let model = PortfolioModel::new(
        vec![LossClass::symmetric("unit", 1.0), LossClass::symmetric("double", 2.0)],
        Regime::Assigned(AssignmentRule::Blocks(schedule.clone())),
    )
    .expect("two valid classes");
    Ok(Counterexample {
        model,
        schedule,
        depth,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubsequencePoint {
    pub n: u64,
    pub unit_density: f64,
    /// `(1/n) log P[M_n >= x]`.
    pub log_rate: ExtendedReal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsequenceReport {
    pub which: TwoPoint,
    pub x: f64,
    pub points: Vec<SubsequencePoint>,
    /// `-I(x)` of the class whose blocks end at the reported `n`.
    pub target: ExtendedReal,
    /// `|last log-rate - target|`; infinite when either side is.
    pub gap: f64,
    /// Set when the oracle refused the deepest points.
    pub partial: bool,
}

impl SubsequenceReport {
    pub fn last_rate(&self) -> Option<ExtendedReal> {
        self.points.last().map(|p| p.log_rate)
    }
}

/// Exact log-tail rates at the ends of the blocks of class `which`.
///
/// Points the oracle cannot afford are dropped from the end and the report is
/// flagged as partial.
pub fn subsequence_rates(
    ce: &Counterexample,
    x: f64,
    which: TwoPoint,
    config: ExactConfig,
) -> Result<SubsequenceReport, CounterexampleError> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(CounterexampleError::Threshold {
            x,
            max: which.half_width(),
        });
    }
    let oracle = ExactOracle::new(ce.model.clone(), config)?;
    let ends = ce.block_ends(which);
    let results: Vec<Result<SubsequencePoint, ExactError>> = ends
        .par_iter()
        .map(|&n| {
            oracle.check_feasible(n)?;
            Ok(SubsequencePoint {
                n,
                unit_density: ce.unit_density(n),
                log_rate: oracle.log_tail_rate(n, x)?,
            })
        })
        .collect();

    let mut points = Vec::with_capacity(results.len());
    let mut partial = false;
    for r in results {
        match r {
            Ok(p) => points.push(p),
            Err(ExactError::MemoryBudget { .. } | ExactError::ContractLimit { .. }) => {
                partial = true;
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }
    let target = -which.rate(x);
    let gap = match (points.last().map(|p| p.log_rate), target) {
        (Some(ExtendedReal::Finite(r)), ExtendedReal::Finite(t)) => (r - t).abs(),
        _ => f64::INFINITY,
    };
    Ok(SubsequenceReport {
        which,
        x,
        points,
        target,
        gap,
        partial,
    })
}

/// One `n` of the sandwich check on `P[M_n > x]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SandwichRow {
    pub n: u64,
    /// `(1/n) log P[M_n > x]`.
    pub log_rate: ExtendedReal,
    /// `-I1(x)`, the slower of the two class rates.
    pub lower: f64,
    /// `-I2(x)`, the faster of the two class rates.
    pub upper: f64,
    /// `-Lambda_n*(x)`, the finite-n Chernoff exponent.
    pub chernoff: f64,
    /// Prefactor allowance `log(n)/n`.
    pub allowance: f64,
    /// `log_rate >= lower - allowance`.
    pub lower_holds: bool,
    /// `log_rate <= upper + allowance`.
    pub upper_holds: bool,
    /// `log_rate <= chernoff`; must hold for every `n`.
    pub chernoff_holds: bool,
}

/// Compares `(1/n) log P[M_n > x]` with the limiting class rates and with
/// the finite-n Chernoff bound.
///
/// The class-rate inequalities are asymptotic, so they are checked up to
/// the allowance `log(n)/n`; a small-n miss reflects the polynomial
/// prefactor. The Chernoff inequality is exact.
pub fn sandwich_check(
    ce: &Counterexample,
    x: f64,
    ns: &[u64],
    config: ExactConfig,
) -> Result<Vec<SandwichRow>, CounterexampleError> {
    if !(x > 0.0 && x < 1.0) {
        return Err(CounterexampleError::Threshold { x, max: 1.0 });
    }
    let oracle = ExactOracle::new(ce.model.clone(), config)?;
    let lower = -TwoPoint::Unit.rate(x).to_f64();
    let upper = -TwoPoint::Double.rate(x).to_f64();
    ns.par_iter()
        .map(|&n| {
            let log_rate = oracle.upper_tail(n, x, TailKind::Greater)?.log_rate(n);
            let cgf = MixtureCgf::empirical(&ce.model, n);
            let chernoff = -conjugate(&cgf, x)?.rate.to_f64();
            let allowance = (n as f64).ln() / n as f64;
            let r = log_rate.to_f64();
            Ok(SandwichRow {
                n,
                log_rate,
                lower,
                upper,
                chernoff,
                allowance,
                lower_holds: r >= lower - allowance,
                upper_holds: r <= upper + allowance,
                chernoff_holds: r <= chernoff + 1e-12 * chernoff.abs().max(1.0),
            })
        })
        .collect()
}

/// `P[M_n^(which) > x]` for the section mean over the contracts of class
/// `which` among the first `n`.
pub fn section_mean_tail(
    ce: &Counterexample,
    n: u64,
    which: TwoPoint,
    x: f64,
    config: ExactConfig,
) -> Result<TailProbability, CounterexampleError> {
    let count = ce.model.class_counts(n)[class_index(which)];
    if count == 0 {
        return Err(CounterexampleError::EmptySection {
            n,
            which: class_index(which) as u8 + 1,
        });
    }
    let class = ce.model.classes()[class_index(which)].clone();
    let oracle = ExactOracle::new(PortfolioModel::single(class), config)?;
    Ok(oracle.upper_tail(count, x, TailKind::Greater)?)
}
