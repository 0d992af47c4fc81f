//! Order-of-magnitude choices of `W`, `sigma` and `L` for a target error.
//!
//! The total error is modeled as `theta^W + sqrt(W)/(sigma sqrt(L))` plus,
//! when the noise is artificial, `sigma/(dgamma (1 - theta))`, with every
//! constant set to 1. The three terms are balanced against `eps`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::visit_orbit;
use crate::noise::NoiseSchedule;
use crate::stats::fit_decay_rate;
use crate::system::{Observable, SystemSpec};

/// Lags used when fitting `theta` from a pilot orbit.
pub const THETA_FIT_LAGS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModelInput {
    pub eps: f64,
    pub theta: f64,
    pub delta_gamma: Option<f64>,
    /// Fixed noise scale of a system with intrinsic noise.
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBreakdown {
    /// `theta^W`.
    pub bias: f64,
    /// `sqrt(W) / (sigma sqrt(L))`.
    pub sampling: f64,
    /// `sigma / (dgamma (1 - theta))`; absent for intrinsic noise.
    pub noise: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModelOutput {
    pub window: usize,
    pub sigma: f64,
    pub orbit_len: u64,
    pub breakdown: ErrorBreakdown,
}

impl CostModelInput {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::InvalidTheta(self.theta));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::InvalidConfig(format!("target error eps = {} must lie in (0, 1)", self.eps)));
        }
        if let Some(d) = self.delta_gamma {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidConfig(format!("delta_gamma = {d} must be positive")));
            }
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidConfig(format!("sigma = {s} must be positive")));
            }
        }
        Ok(())
    }

    /// Intrinsic case when `sigma` is given, approximation case otherwise.
    pub fn recommend(&self) -> Result<CostModelOutput> {
        self.validate()?;
        match (self.sigma, self.delta_gamma) {
            (Some(s), _) => recommend_intrinsic(self.eps, self.theta, s),
            (None, Some(d)) => recommend_approximation(self.eps, self.theta, d),
            (None, None) => Err(Error::InvalidConfig("either sigma or delta_gamma is required".into())),
        }
    }
}

fn window_for(eps: f64, theta: f64) -> usize {
    ((eps.ln() / theta.ln()).ceil() as usize).max(1)
}

fn samples_for(window: usize, sigma: f64, eps: f64) -> u64 {
    (window as f64 / (sigma * sigma * eps * eps)).ceil() as u64
}

fn breakdown(theta: f64, window: usize, sigma: f64, orbit_len: u64, delta_gamma: Option<f64>) -> ErrorBreakdown {
    ErrorBreakdown {
        bias: theta.powi(window as i32),
        sampling: (window as f64).sqrt() / (sigma * (orbit_len as f64).sqrt()),
        noise: delta_gamma.map(|d| sigma / (d * (1.0 - theta))),
    }
}

/// `W = ceil(ln eps / ln theta)`, `L = ceil(W / (sigma^2 eps^2))`.
pub fn recommend_intrinsic(eps: f64, theta: f64, sigma: f64) -> Result<CostModelOutput> {
    CostModelInput { eps, theta, delta_gamma: None, sigma: Some(sigma) }.validate()?;
    let window = window_for(eps, theta);
    let orbit_len = samples_for(window, sigma, eps);
    Ok(CostModelOutput {
        window,
        sigma,
        orbit_len,
        breakdown: breakdown(theta, window, sigma, orbit_len, None),
    })
}

/// As [`recommend_intrinsic`] with the artificial noise `sigma = eps dgamma (1 - theta)`.
pub fn recommend_approximation(eps: f64, theta: f64, delta_gamma: f64) -> Result<CostModelOutput> {
    CostModelInput { eps, theta, delta_gamma: Some(delta_gamma), sigma: None }.validate()?;
    let sigma = eps * delta_gamma * (1.0 - theta);
    let window = window_for(eps, theta);
    let orbit_len = samples_for(window, sigma, eps);
    Ok(CostModelOutput {
        window,
        sigma,
        orbit_len,
        breakdown: breakdown(theta, window, sigma, orbit_len, Some(delta_gamma)),
    })
}

/// Fits `theta` to the autocorrelation of `Phi` along a pilot orbit.
///
/// A rough stand-in: the decay of one observable's correlations, not a
/// property of the system. `None` when the correlations vanish within one lag.
pub fn estimate_theta(
    sys: &SystemSpec,
    noise: &NoiseSchedule,
    obs: &dyn Observable,
    gamma: f64,
    steps: usize,
    seed: u64,
) -> Result<Option<f64>> {
    let mut series = Vec::with_capacity(steps);
    visit_orbit(sys, noise, gamma, crate::estimators::DEFAULT_SPIN_UP, steps, seed, |x| {
        series.push(obs.eval(gamma, x));
        Ok(())
    })?;
    Ok(fit_decay_rate(&series, THETA_FIT_LAGS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn intrinsic_example() {
        let r = recommend_intrinsic(0.1, 0.5, 0.1).unwrap();
        assert_eq!(r.window, 4);
        assert_eq!(r.orbit_len, 40_000);
        assert!(r.breakdown.noise.is_none());
    }

    #[test]
    fn approximation_example() {
        let r = recommend_approximation(0.1, 0.5, 1.0).unwrap();
        assert!((r.sigma - 0.05).abs() < 1e-15);
        assert_eq!(r.window, 4);
        assert_eq!(r.orbit_len, 160_000);
        let noise = r.breakdown.noise.unwrap();
        assert!((noise - 0.1).abs() < 1e-12);
    }

    #[test]
    fn invalid_theta() {
        assert!(matches!(recommend_intrinsic(0.1, 1.0, 0.1), Err(Error::InvalidTheta(_))));
        assert!(matches!(recommend_approximation(0.1, 0.0, 1.0), Err(Error::InvalidTheta(_))));
        assert!(recommend_intrinsic(0.0, 0.5, 0.1).is_err());
    }

    #[test]
    fn faster_decay_shortens_the_window() {
        let mut last = usize::MAX;
        for theta in [0.95, 0.9, 0.7, 0.5, 0.3, 0.1] {
            let w = recommend_intrinsic(0.01, theta, 0.1).unwrap().window;
            assert!(w <= last);
            last = w;
        }
    }

    #[test]
    fn halving_eps_roughly_quadruples_l() {
        let a = recommend_intrinsic(0.1, 0.5, 0.1).unwrap();
        let b = recommend_intrinsic(0.05, 0.5, 0.1).unwrap();
        let ratio = b.orbit_len as f64 / a.orbit_len as f64;
        let expected = 4.0 * b.window as f64 / a.window as f64;
        assert!((ratio - expected).abs() < 1e-3 * expected, "{ratio}");
    }

    #[test]
    fn smaller_step_needs_more_samples() {
        let a = recommend_approximation(0.1, 0.5, 1.0).unwrap();
        let b = recommend_approximation(0.1, 0.5, 0.5).unwrap();
        assert!((b.orbit_len as f64 / a.orbit_len as f64 - 4.0).abs() < 1e-3);
        let c = recommend_approximation(0.1, 0.99, 1.0).unwrap();
        assert!(c.orbit_len > 1000 * a.orbit_len);
    }

    #[test]
    fn input_dispatch() {
        let i = CostModelInput { eps: 0.1, theta: 0.5, delta_gamma: Some(1.0), sigma: None };
        assert_eq!(i.recommend().unwrap().orbit_len, 160_000);
        let i = CostModelInput { sigma: Some(0.1), ..i };
        assert_eq!(i.recommend().unwrap().orbit_len, 40_000);
        assert!(CostModelInput { delta_gamma: None, sigma: None, ..i }.recommend().is_err());
    }

    #[test]
    fn tent_pilot_theta_is_a_rate() {
        let m = crate::models::build_tent(3.0, 0.1).unwrap();
        let theta = estimate_theta(&m.system, &m.noise, m.observable.as_ref(), 3.0, 200_000, 4).unwrap();
        println!("tent pilot theta: {theta:?}");
        if let Some(t) = theta {
            assert!(t > 0.0 && t < 1.0);
        }
    }

    proptest! {
        #[test]
        fn terms_are_balanced(eps in 1e-3f64..0.5, theta in 0.5f64..0.99, sigma in 1e-2f64..1.0) {
            let r = recommend_intrinsic(eps, theta, sigma).unwrap();
            let b = r.breakdown;
            prop_assert!(b.bias <= eps * (1.0 + 1e-12));
            prop_assert!(b.bias >= eps / 2.0);
            prop_assert!(b.sampling <= eps * (1.0 + 1e-12));
            prop_assert!(b.sampling >= eps / 2.0);
        }

        #[test]
        fn approximation_noise_term_is_eps(eps in 1e-3f64..0.5, theta in 0.01f64..0.99, d in 1e-2f64..10.0) {
            let r = recommend_approximation(eps, theta, d).unwrap();
            prop_assert!((r.breakdown.noise.unwrap() - eps).abs() < 1e-9 * eps);
        }
    }
}
