//! Repeated simultaneous mechanisms with stochastic admission.
//!
//! The crate simulates availability-oblivious no-regret learning in
//! simultaneous compositions of mechanisms, and checks by exhaustive
//! enumeration (or Monte Carlo when enumeration is too large) the smoothness,
//! correlation-gap and price-of-anarchy statements that govern such markets.
//!
//! Numeric code is generic over [`Scalar`] (`f64` and `f32`); the `*64`
//! aliases below fix the double-precision instantiation used by the CLI.

pub mod availability;
pub mod cli;
pub mod error;
pub mod experiments;
pub mod lattice;
pub mod learning;
pub mod mechanism;
pub mod rng;
pub mod smoothness;
pub mod scalar;
pub mod sinr;
pub mod valuation;

pub use availability::{AvailabilityModel, AvailabilityRealization};
pub use error::{Error, Result};
pub use lattice::{OutcomeLattice, OutcomeVector, ProductLattice};
pub use mechanism::{BidProfile, ComposedScenario, DeviationRule, Mechanism};
pub use scalar::Scalar;
pub use sinr::SinrInstance;
pub use valuation::{Valuation, ValuationKind};

/// Default enumeration budget: exact mode when at most this many terms.
pub const DEFAULT_BUDGET: u128 = 10_000_000;

pub type Valuation64 = Valuation<f64>;
pub type Mechanism64 = Mechanism<f64>;
pub type Scenario64 = ComposedScenario<f64>;
pub type Availability64 = AvailabilityModel<f64>;
pub type Sinr64 = SinrInstance<f64>;
