use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::Model;
use crate::error::{Error, Result};
use crate::noise::{IsotropicGaussian, NoiseSchedule};
use crate::system::{Coordinate, Domain, ParamMap, PointMass, SystemSpec};

/// `x_{n+1} = a x_n + gamma + y_{n+1}`, `y ~ N(0, sigma^2)`: a control case
/// whose stationary law `N(gamma/(1-a), sigma^2/(1-a^2))` is known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianAR1 {
    pub a: f64,
    pub gamma: f64,
    pub sigma: f64,
}

impl Default for LinearGaussianAR1 {
    fn default() -> Self {
        LinearGaussianAR1 {
            a: 0.5,
            gamma: 0.0,
            sigma: 0.3,
        }
    }
}

impl LinearGaussianAR1 {
    pub fn build(&self) -> Result<Model> {
        build_ar1(self.a, self.gamma, self.sigma)
    }

    pub fn stationary_mean(&self) -> f64 {
        self.gamma / (1.0 - self.a)
    }

    pub fn stationary_variance(&self) -> f64 {
        self.sigma * self.sigma / (1.0 - self.a * self.a)
    }

    /// `d/dgamma` of the stationary mean.
    pub fn response(&self) -> f64 {
        1.0 / (1.0 - self.a)
    }

    /// `d/dgamma E[x_T]` from a parameter-free `x_0`: `sum_{k<T} a^k`.
    pub fn finite_response(&self, horizon: usize) -> f64 {
        (1.0 - self.a.powi(horizon as i32)) / (1.0 - self.a)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Ar1Layer {
    pub a: f64,
}

impl ParamMap for Ar1Layer {
    #[inline]
    fn apply(&self, gamma: f64, x: &[f64], out: &mut [f64]) {
        out[0] = self.a * x[0] + gamma;
    }

    #[inline]
    fn param_derivative(&self, _gamma: f64, _x: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
    }
}

/// Euclidean 1-D system with `Phi(x) = x`, started from `x_0 = 0`.
pub fn build_ar1(a: f64, gamma: f64, sigma: f64) -> Result<Model> {
    if !(a.abs() < 1.0) {
        return Err(Error::NotContracting(a.abs()));
    }
    Ok(Model {
        gamma,
        system: SystemSpec::homogeneous(1, Domain::Euclidean, Arc::new(Ar1Layer { a }))?,
        noise: NoiseSchedule::homogeneous(IsotropicGaussian::new(sigma, 1)?),
        observable: Arc::new(Coordinate(0)),
        initial: Arc::new(PointMass(vec![0.0])),
    })
}
