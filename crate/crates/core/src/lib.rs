//! Equilibrium solvers for an integrated TV white space market in which a
//! geo-location database sells channel-quality information and brokers
//! licensed-channel leases.
//!
//! The market is solved backwards: user subscriptions for given prices
//! ([`dynamics`]), database/licensee price competition for a given commission
//! ([`competition`]), and Nash bargaining over the commission ([`bargaining`]).

// Domain checks are written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bargaining;
pub mod benchmarks;
pub mod competition;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod model;
pub mod search;
pub mod validation;

pub use bargaining::{BargainingOptions, BargainingOutcome, Disagreement, Pairing};
pub use benchmarks::{BenchmarkReport, SensingParams};
pub use competition::{FirmPayoffs, Stage2Options, StageIIReport};
pub use dynamics::{Branch, DynamicsTrajectory, Equilibrium, Thresholds, UniquenessCertificate};
pub use error::{MarketError, Result};
pub use experiment::{EquilibriumReport, SweepParameter, SweepRow, SweepScheme, SweepSpec};
pub use model::{
    AssumptionReport, CommissionScheme, Dominance, MarketShare, ModelParams, PriceProfile,
    SchemeKind, ServiceChoice,
};
