//! Large and moderate deviation estimates for the average centered loss of a
//! portfolio of independent, bounded, non-identically distributed contracts.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: loss classes, portfolio regimes and the bounded-loss /
//!   variance-floor validation.
//! * [`cgf`]: per-class moment generating functions and the mixture cumulant
//!   generating function with analytic derivatives.
//! * [`legendre`]: Fenchel-Legendre transforms, closed-form rate functions of
//!   the symmetric two-point laws and the exponential upper-bound exponent.
//! * [`exact`]: lattice convolution oracle for the finite-n law of the mean.
//! * [`mc`]: plain and exponentially tilted Monte Carlo.
//! * [`moderate`]: moderate-deviation thresholds and Gaussian tails.
//! * [`counterexample`]: the two-class block schedule whose subsequences decay
//!   at different exponential rates.

pub mod cgf;
pub mod counterexample;
pub mod exact;
mod extended;
pub mod legendre;
pub mod mc;
pub mod model;
pub mod moderate;

pub use cgf::{class_mgf, cumulants, empirical_cgf, limit_cgf, CgfPoint, MixtureCgf};
pub use counterexample::{build_counterexample, Counterexample, SubsequenceReport};
pub use exact::{
    exact_tail, ExactConfig, ExactError, ExactOracle, LatticeDistribution, TailKind, TailProbability,
};
pub use extended::ExtendedReal;
pub use legendre::{legendre_transform, rate_i1, rate_i2, RatePoint, RateStatus, TwoPoint};
pub use mc::{sample_plain, sample_tilted, tilted_class, McMethod, TailEstimate};
pub use model::{
    load_model, validate_model, AssignmentRule, AssumptionBounds, BlockSchedule, LossClass, ModelError,
    ModelFile, PortfolioModel, Regime, ValidationReport, Violation,
};
pub use moderate::{gaussian_upper_tail, md_threshold, MdQuery, PetrovConstants};
