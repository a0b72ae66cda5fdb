//! Markov-switching vector autoregressions for car-following data.
//!
//! Observations follow a VAR(p) whose intercepts, lag matrices and
//! covariances depend on a hidden first-order Markov regime. The crate covers
//! ingestion, likelihood evaluation, filtering and smoothing, estimation by
//! EM or Gibbs sampling, forecasting, model selection and simulation.

pub mod dataio;
pub mod em;
pub mod error;
pub mod export;
pub mod forecast;
pub mod gibbs;
pub mod inference;
pub mod linalg;
pub mod model;
pub mod select;
pub mod simulate;

pub use error::{Error, Result};
