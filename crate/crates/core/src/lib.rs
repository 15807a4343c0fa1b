//! Unconditional quantile effects of marginal interventions on an instrument.

pub mod cli;
pub mod data;
pub mod dgp;
pub mod mc_oracle;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod io;
pub mod normal;
pub mod propensity;
pub mod quadrature;
pub mod seeding;
pub mod series;
pub mod stats;

pub use data::Dataset;
pub use nalgebra;
pub use error::{Result, UqeError};
