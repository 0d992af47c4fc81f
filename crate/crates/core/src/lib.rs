//! Linear response of random dynamical systems by kernel differentiation.
//!
//! The derivative of an averaged observable with respect to a parameter
//! `gamma` is written as the expectation of the observable times the score
//! of the noise density, `dp/p`, summed along sample paths. Nothing is
//! propagated through Jacobians, so chaotic and non-hyperbolic maps are
//! handled as long as each step adds noise.
//!
//! Two production estimators are provided:
//!
//! * [`estimators::finite_time_estimator`]: an ensemble of `L` independent
//!   paths of a (possibly time-inhomogeneous) `T`-step system.
//! * [`estimators::ergodic_estimator`]: one long orbit of a time-homogeneous
//!   system, with a decorrelation window `W`.
//!
//! The [`oracle`] module holds independent reference computations (a grid
//! transfer operator for 1-D systems, and common-random-numbers finite
//! differences) used to validate the estimators.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod costmodel;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod models;
pub mod noise;
pub mod oracle;
pub mod parallel;
pub mod rng;
pub mod selftest;
pub mod stats;
pub mod system;

pub use error::{Error, Result};
pub use noise::{DirectionalGaussian, GeneralScore, IsotropicGaussian, NoiseModel, NoiseSample};
pub use parallel::Execution;
pub use system::{
    Domain, HorizonMode, InitialDistribution, NoiseSchedule, Observable, ParamMap, State,
    SystemSpec, TangentVector,
};
