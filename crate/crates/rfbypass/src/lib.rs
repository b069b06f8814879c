//! Trajectory-bypass editing for rectified-flow ODEs.
//!
//! The pipeline inverts a data point along a guided flow ODE, computes an
//! analytical bypass offset between the inversion and reconstruction
//! trajectories, and reconstructs the edited point from an intermediate
//! timestep instead of the fully inverted noise. All velocity fields are
//! analytic Gaussian-mixture marginal fields, so every approximation in the
//! discrete bypass can be checked against dense-integration oracles.
//!
//! Modules:
//! - [`timegrid`]: shifted timestep schedule on `[0, 1]`
//! - [`field`]: conditioned Gaussian-mixture velocity fields, CFG, finite
//!   differences
//! - [`trajectory`]: Euler integration, inversion with cached bypass terms,
//!   reconstruction
//! - [`bypass`]: discrete bypass plus three independent oracles
//! - [`metrics`]: fidelity / alignment analogs
//! - [`editor`]: full edit pipeline and ablation sweeps (`f64`)
//! - [`config`] / [`cli`]: JSON run configuration and the command-line tool

pub mod bypass;
pub mod cli;
pub mod config;
pub mod editor;
pub mod error;
pub mod field;
pub mod metrics;
pub mod timegrid;
pub mod trajectory;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

pub use error::{Error, Result};

/// Scalar type the numeric core is generic over: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Shorthand for converting an `f64` constant, panicking on overflow.
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("constant representable in scalar type")
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub type TimeGrid32 = timegrid::TimeGrid<f32>;
pub type TimeGrid64 = timegrid::TimeGrid<f64>;
pub type GaussianMixture32 = field::GaussianMixture<f32>;
pub type GaussianMixture64 = field::GaussianMixture<f64>;
pub type FieldSpec32 = field::ConditionedFieldSpec<f32>;
pub type FieldSpec64 = field::ConditionedFieldSpec<f64>;
pub type Guidance32 = field::Guidance<f32>;
pub type Guidance64 = field::Guidance<f64>;
pub type InversionRecord32 = trajectory::InversionRecord<f32>;
pub type InversionRecord64 = trajectory::InversionRecord<f64>;
pub type BypassResult32 = bypass::BypassResult<f32>;
pub type BypassResult64 = bypass::BypassResult<f64>;
