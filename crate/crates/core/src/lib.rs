//! Multi-central differential privacy: `n` clients secret-share their data
//! among `m` aggregators, each of which adds its own noise before release,
//! so the output stays private as long as one aggregator is honest.

pub mod counting;
pub mod error;
pub mod field;
pub mod fss;
pub mod noise;
pub mod par;
pub mod selection;
pub mod sharing;
pub mod sketch;
pub mod transport;

pub use error::{Error, Result};
pub use field::{FieldElement, FieldModulus, FieldVector};
pub use noise::{NoiseKind, NoiseSpec, PrivacyBudget, Rational};
