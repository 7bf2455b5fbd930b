//! Fixture models shared by the benchmarks.

use ldrisk::{AssignmentRule, BlockSchedule, LossClass, PortfolioModel, Regime};

pub fn unit() -> LossClass {
    LossClass::symmetric("unit", 1.0)
}

pub fn double() -> LossClass {
    LossClass::symmetric("double", 2.0)
}

/// Three-point centered claim class on the integers.
pub fn claims() -> LossClass {
    LossClass::centered("claims", vec![0.0, 1.0, 3.0], vec![0.6, 0.3, 0.1]).expect("valid class")
}

pub fn round_robin() -> PortfolioModel {
    PortfolioModel::new(
        vec![unit(), double()],
        Regime::Assigned(AssignmentRule::round_robin(vec![1, 1]).expect("positive weights")),
    )
    .expect("valid model")
}

pub fn mixed() -> PortfolioModel {
    PortfolioModel::new(vec![claims(), unit(), double()], Regime::Weighted(vec![0.2, 0.5, 0.3]))
        .expect("valid model")
}

pub fn blocks(growth: u64) -> PortfolioModel {
    PortfolioModel::new(
        vec![unit(), double()],
        Regime::Assigned(AssignmentRule::Blocks(
            BlockSchedule::new(1, growth, vec![0, 1]).expect("valid schedule"),
        )),
    )
    .expect("valid model")
}
