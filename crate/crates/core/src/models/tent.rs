use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::Model;
use crate::error::Result;
use crate::noise::{IsotropicGaussian, NoiseSchedule};
use crate::system::{Coordinate, Domain, ParamMap, SystemSpec, UniformUnit};

/// Tent map with elevating center, `gamma x` on `[0, 0.5]` and
/// `gamma (1 - x)` above, plus Gaussian noise, reduced mod 1.
///
/// Both branches give `gamma / 2` at `x = 0.5`, so the apex belongs to
/// the left branch without loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TentMap {
    pub gamma: f64,
    pub sigma: f64,
}

impl Default for TentMap {
    fn default() -> Self {
        TentMap {
            gamma: 3.0,
            sigma: 0.1,
        }
    }
}

impl TentMap {
    /// Decorrelation window used for this model unless configured otherwise.
    pub const DEFAULT_WINDOW: usize = 7;

    pub fn build(&self) -> Result<Model> {
        build_tent(self.gamma, self.sigma)
    }

    #[inline]
    pub fn apply(gamma: f64, x: f64) -> f64 {
        if x <= 0.5 {
            gamma * x
        } else {
            gamma * (1.0 - x)
        }
    }

    #[inline]
    pub fn param_derivative(x: f64) -> f64 {
        if x <= 0.5 {
            x
        } else {
            1.0 - x
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TentLayer;

impl ParamMap for TentLayer {
    #[inline]
    fn apply(&self, gamma: f64, x: &[f64], out: &mut [f64]) {
        out[0] = TentMap::apply(gamma, x[0]);
    }

    #[inline]
    fn param_derivative(&self, _gamma: f64, x: &[f64], out: &mut [f64]) {
        out[0] = TentMap::param_derivative(x[0]);
    }
}

/// 1-D torus system with `N(0, sigma^2)` noise and `Phi(x) = x`.
pub fn build_tent(gamma: f64, sigma: f64) -> Result<Model> {
    if !(gamma > 0.0 && gamma <= 4.0) {
        log::warn!("tent slope gamma = {gamma} is outside (0, 4]; the mod-1 branch structure changes");
    }
    let noise = IsotropicGaussian::new(sigma, 1)?;
    Ok(Model {
        gamma,
        system: SystemSpec::homogeneous(1, Domain::TorusMod1, Arc::new(TentLayer))?,
        noise: NoiseSchedule::homogeneous(noise),
        observable: Arc::new(Coordinate(0)),
        initial: Arc::new(UniformUnit),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseSample;
    use crate::rng::stream;
    use crate::system::{check_map_derivative, step, State};
    use rand::Rng;

    fn zero() -> NoiseSample {
        NoiseSample {
            raw: vec![0.0],
            embedded: vec![0.0],
        }
    }

    #[test]
    fn deterministic_branches() {
        let m = build_tent(3.0, 0.1).unwrap();
        let at = |x: f64| step(&m.system, 3.0, 0, &State::new(vec![x]).unwrap(), &zero()).unwrap().coords()[0];
        assert!((at(0.2) - 0.6).abs() < 1e-15);
        assert!((at(0.9) - 0.3).abs() < 1e-15);
        assert!((at(0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn derivative_values() {
        assert!((TentMap::param_derivative(0.3) - 0.3).abs() < 1e-15);
        assert!((TentMap::param_derivative(0.8) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn derivative_check_at_random_points() {
        let m = build_tent(3.0, 0.1).unwrap();
        let mut rng = stream(31, 0);
        for _ in 0..20 {
            let x = State::new(vec![rng.random::<f64>()]).unwrap();
            let g = 2.5 + rng.random::<f64>();
            assert!(check_map_derivative(&m.system, g, &x, 1e-5) < 1e-10);
        }
    }

    #[test]
    fn orbit_stays_on_the_torus() {
        let m = build_tent(3.0, 0.1).unwrap();
        let law = m.noise.at(0);
        let mut rng = stream(32, 0);
        let mut x = State::new(vec![0.1]).unwrap();
        for n in 0..10_000 {
            let y = law.sample(3.0, &[0.0], &mut rng);
            x = step(&m.system, 3.0, n, &x, &y).unwrap();
            assert!((0.0..1.0).contains(&x.coords()[0]));
        }
    }
}
