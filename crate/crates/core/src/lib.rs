//! Estimation, testing and order selection for covariate-driven time series
//! models of the form `Y_t = M_θ ξ_t + f_θ`.

pub mod asymptotics;
pub mod error;
pub mod estimate;
pub mod experiments;
pub mod inference;
pub mod likelihood;
pub mod model;
pub mod numdiff;
pub mod optim;
pub mod select;
pub mod simulate;

pub use error::{AcxError, Result};
