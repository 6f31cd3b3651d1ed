//! Shape and topology optimization posed as gradient flows of probability
//! measures under the quadratic optimal-transport geometry.
//!
//! Module map:
//! - [`measures`]: grid densities, particle clouds, support masks.
//! - [`flows`]: analytic velocity fields and their flow maps.
//! - [`transport`]: conservative upwind solver for the continuity equation.
//! - [`ot`]: exact discrete optimal transport and its oracles.
//! - [`elasticity`]: plane-strain finite elements and density sensitivity.
//! - [`sensitivities`]: numerical certification of shape, topological and
//!   density derivatives read as derivatives along curves of measures.
//! - [`optimizer`]: explicit gradient-flow driver.
//! - [`cli`] and [`config`]: the command-line front end.

pub mod cli;
pub mod config;
pub mod elasticity;
pub mod error;
pub mod flows;
pub mod measures;
pub mod optimizer;
pub mod ot;
pub mod rng;
pub mod sensitivities;
pub mod transport;

pub use error::{Error, Result};

/// Point or vector in the plane.
pub type Point = nalgebra::Vector2<f64>;
/// 2x2 real matrix.
pub type Mat2 = nalgebra::Matrix2<f64>;
