//! Average-reward stochastic game between a dynamic information-flow
//! tracking defender and an advanced persistent threat.
pub mod analytic;
pub mod error;
pub mod game;
pub mod ifg;
pub mod policy;
pub mod rlarne;
pub mod simenv;

pub use error::{Error, Result};
