//! Minimal realization of jump linear systems from input-output data.
//!
//! A jump linear system switches its dynamics matrix among `s` modes drawn
//! i.i.d. at every step. This crate recovers the state dimension `n` from
//! the rank of an ensemble observation matrix and estimates the number of
//! modes from the rank of the swapped second-moment operator.
//!
//! * [`model`]: model type, simulation, stability and minimality checks
//! * [`numerics`]: Kronecker products, ranks, pseudoinverses, PSD projection
//! * [`oracle`]: exact expectation operators and brute-force enumeration
//! * [`excitation`]: input basis and observation matrices
//! * [`realization`]: controllability/observability ranks, state dimension
//! * [`modes`]: swap transform and the mode-count program

pub mod error;
pub mod excitation;
pub mod fixtures;
pub mod format;
pub mod model;
pub mod modes;
pub mod numerics;
pub mod oracle;
pub mod realization;
pub mod rng;

pub use error::{JlsError, Result};
pub use model::{JlsModel, SwitchSequence, Trajectory};
pub use numerics::{Matrix, RankReport, Vector};
