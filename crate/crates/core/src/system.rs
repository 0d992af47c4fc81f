//! Parameterized random dynamical systems `x_{n+1} = f_{gamma,n}(x_n) + y_{n+1}`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoiseSample;
use crate::rng::PathRng;

pub use crate::noise::NoiseSchedule;

/// A point of the state space.
#[derive(Debug, Clone, PartialEq)]
pub struct State(Vec<f64>);

impl State {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if let Some(i) = coords.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "state coordinate",
                step: i,
                path: None,
            });
        }
        Ok(State(coords))
    }

    pub fn zeros(dimension: usize) -> Self {
        State(vec![0.0; dimension])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// A parameter-derivative direction `df/dgamma` at some point.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector(Vec<f64>);

impl TangentVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if let Some(i) = coords.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "tangent coordinate",
                step: i,
                path: None,
            });
        }
        Ok(TangentVector(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    Euclidean,
    /// Every coordinate is reduced mod 1 after the noise is added.
    TorusMod1,
}

impl Domain {
    pub fn wrap(self, x: &mut [f64]) {
        if self == Domain::TorusMod1 {
            for v in x.iter_mut() {
                *v = wrap_unit(*v);
            }
        }
    }
}

/// `v mod 1` in `[0, 1)`; `rem_euclid` alone can round tiny negatives up to 1.0.
#[inline]
pub fn wrap_unit(v: f64) -> f64 {
    let r = v.rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// One deterministic layer `f_gamma` together with its parameter derivative.
///
/// `apply` must not wrap: torus reduction is the system's job and happens
/// after the noise is added.
pub trait ParamMap: Send + Sync {
    fn apply(&self, gamma: f64, x: &[f64], out: &mut [f64]);

    /// `df_gamma/dgamma` at `x`.
    fn param_derivative(&self, gamma: f64, x: &[f64], out: &mut [f64]);
}

/// A [`ParamMap`] built from two closures.
pub struct FnMap<F, D> {
    map: F,
    derivative: D,
}

impl<F, D> FnMap<F, D>
where
    F: Fn(f64, &[f64], &mut [f64]) + Send + Sync,
    D: Fn(f64, &[f64], &mut [f64]) + Send + Sync,
{
    pub fn new(map: F, derivative: D) -> Self {
        FnMap { map, derivative }
    }
}

impl<F, D> ParamMap for FnMap<F, D>
where
    F: Fn(f64, &[f64], &mut [f64]) + Send + Sync,
    D: Fn(f64, &[f64], &mut [f64]) + Send + Sync,
{
    fn apply(&self, gamma: f64, x: &[f64], out: &mut [f64]) {
        (self.map)(gamma, x, out)
    }

    fn param_derivative(&self, gamma: f64, x: &[f64], out: &mut [f64]) {
        (self.derivative)(gamma, x, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HorizonMode {
    TimeHomogeneous,
    TimeInhomogeneous { steps: usize },
}

/// The deterministic part of the dynamics.
///
/// Time-inhomogeneous systems carry one map per step: `maps[n]` takes `x_n`
/// to `x_{n+1}` (before noise).
#[derive(Clone)]
pub struct SystemSpec {
    dimension: usize,
    domain: Domain,
    maps: Vec<Arc<dyn ParamMap>>,
    horizon: HorizonMode,
}

impl fmt::Debug for SystemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemSpec")
            .field("dimension", &self.dimension)
            .field("domain", &self.domain)
            .field("horizon", &self.horizon)
            .finish()
    }
}

impl SystemSpec {
    pub fn homogeneous(dimension: usize, domain: Domain, map: Arc<dyn ParamMap>) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidConfig("state dimension must be positive".into()));
        }
        Ok(SystemSpec {
            dimension,
            domain,
            maps: vec![map],
            horizon: HorizonMode::TimeHomogeneous,
        })
    }

    pub fn inhomogeneous(
        dimension: usize,
        domain: Domain,
        maps: Vec<Arc<dyn ParamMap>>,
    ) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidConfig("state dimension must be positive".into()));
        }
        if maps.is_empty() {
            return Err(Error::InvalidConfig(
                "a time-inhomogeneous system needs at least one step".into(),
            ));
        }
        let steps = maps.len();
        Ok(SystemSpec {
            dimension,
            domain,
            maps,
            horizon: HorizonMode::TimeInhomogeneous { steps },
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn horizon_mode(&self) -> HorizonMode {
        self.horizon
    }

    /// The map applied to `x_n`. Homogeneous systems ignore `n`.
    ///
    /// Panics if `n` is past the horizon of an inhomogeneous system.
    pub fn map_at(&self, n: usize) -> &dyn ParamMap {
        match self.horizon {
            HorizonMode::TimeHomogeneous => self.maps[0].as_ref(),
            HorizonMode::TimeInhomogeneous { steps } => {
                assert!(n < steps, "step {n} is past the horizon {steps}");
                self.maps[n].as_ref()
            }
        }
    }

    /// Checks that a `T`-step problem fits this system.
    pub fn check_horizon(&self, steps: usize) -> Result<()> {
        match self.horizon {
            HorizonMode::TimeInhomogeneous { steps: t } if t != steps => Err(Error::InvalidConfig(
                format!("system has {t} layers but the horizon is {steps}"),
            )),
            _ => Ok(()),
        }
    }

    /// `out = wrap(z + y)` with a finiteness check; `z` is `f(x_n)`.
    pub(crate) fn finish_step(&self, n: usize, z: &[f64], y: &[f64], out: &mut [f64]) -> Result<()> {
        for ((o, zi), yi) in out.iter_mut().zip(z).zip(y) {
            *o = zi + yi;
        }
        self.domain.wrap(out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "state",
                step: n + 1,
                path: None,
            });
        }
        Ok(())
    }
}

/// `x_{n+1} = f_{gamma,n}(x_n) + y`, reduced mod 1 on the torus.
pub fn step(sys: &SystemSpec, gamma: f64, n: usize, x: &State, y: &NoiseSample) -> Result<State> {
    let m = sys.dimension();
    if x.dimension() != m {
        return Err(Error::DimensionMismatch {
            context: "state",
            expected: m,
            found: x.dimension(),
        });
    }
    if y.embedded.len() != m {
        return Err(Error::DimensionMismatch {
            context: "embedded noise",
            expected: m,
            found: y.embedded.len(),
        });
    }
    let mut z = vec![0.0; m];
    sys.map_at(n).apply(gamma, x.coords(), &mut z);
    let mut out = vec![0.0; m];
    sys.finish_step(n, &z, &y.embedded, &mut out)?;
    Ok(State(out))
}

/// Worst componentwise relative discrepancy between the analytic
/// `df/dgamma` of layer 0 and a central difference with step `h`.
///
/// Discrepancies are scaled by `max(|analytic|, |fd|, 1e-8)`.
pub fn check_map_derivative(sys: &SystemSpec, gamma: f64, x: &State, h: f64) -> f64 {
    check_layer_derivative(sys, 0, gamma, x, h)
}

/// [`check_map_derivative`] for layer `n`.
pub fn check_layer_derivative(sys: &SystemSpec, n: usize, gamma: f64, x: &State, h: f64) -> f64 {
    assert!(h > 0.0, "finite-difference step must be positive");
    let m = sys.dimension();
    let map = sys.map_at(n);
    let mut analytic = vec![0.0; m];
    let mut plus = vec![0.0; m];
    let mut minus = vec![0.0; m];
    map.param_derivative(gamma, x.coords(), &mut analytic);
    map.apply(gamma + h, x.coords(), &mut plus);
    map.apply(gamma - h, x.coords(), &mut minus);
    analytic
        .iter()
        .zip(plus.iter().zip(&minus))
        .map(|(a, (p, q))| {
            let fd = (p - q) / (2.0 * h);
            (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8)
        })
        .fold(0.0, f64::max)
}

/// A scalar observable `Phi`, possibly depending on `gamma` through a chart.
pub trait Observable: Send + Sync {
    fn eval(&self, gamma: f64, x: &[f64]) -> f64;

    /// `dPhi/dgamma` at fixed `x`, when `Phi` depends on the parameter.
    fn param_derivative(&self, _gamma: f64, _x: &[f64]) -> Option<f64> {
        None
    }
}

/// `Phi(x) = x[index]`.
#[derive(Debug, Clone, Copy)]
pub struct Coordinate(pub usize);

impl Observable for Coordinate {
    fn eval(&self, _gamma: f64, x: &[f64]) -> f64 {
        x[self.0]
    }
}

/// `Phi(x) = sum_i x[i]`.
#[derive(Debug, Clone, Copy)]
pub struct CoordinateSum;

impl Observable for CoordinateSum {
    fn eval(&self, _gamma: f64, x: &[f64]) -> f64 {
        x.iter().sum()
    }
}

/// An observable backed by a closure, with no parameter dependence.
pub struct FnObservable<F>(pub F);

impl<F> Observable for FnObservable<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn eval(&self, _gamma: f64, x: &[f64]) -> f64 {
        (self.0)(x)
    }
}

/// The law of `x_0`.
pub trait InitialDistribution: Send + Sync {
    fn sample(&self, gamma: f64, rng: &mut PathRng, out: &mut [f64]);

    /// `(dh_0/dgamma) / h_0` at `x0`, when the law depends on the parameter.
    fn score_gamma(&self, _gamma: f64, _x0: &[f64]) -> Option<f64> {
        None
    }

    fn sample_state(&self, gamma: f64, dimension: usize, rng: &mut PathRng) -> State {
        let mut out = vec![0.0; dimension];
        self.sample(gamma, rng, &mut out);
        State(out)
    }
}

/// `x_0` fixed.
#[derive(Debug, Clone)]
pub struct PointMass(pub Vec<f64>);

impl InitialDistribution for PointMass {
    fn sample(&self, _gamma: f64, _rng: &mut PathRng, out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }
}

/// `x_0 ~ N(mean, std^2 I)`, independent of the parameter.
#[derive(Debug, Clone)]
pub struct GaussianInitial {
    pub mean: Vec<f64>,
    pub std: f64,
}

impl InitialDistribution for GaussianInitial {
    fn sample(&self, _gamma: f64, rng: &mut PathRng, out: &mut [f64]) {
        use rand_distr::{Distribution, StandardNormal};
        for (o, m) in out.iter_mut().zip(&self.mean) {
            let z: f64 = StandardNormal.sample(rng);
            *o = m + self.std * z;
        }
    }
}

/// `x_0 ~ U[0, 1)^M`, for torus systems.
#[derive(Debug, Clone, Copy)]
pub struct UniformUnit;

impl InitialDistribution for UniformUnit {
    fn sample(&self, _gamma: f64, rng: &mut PathRng, out: &mut [f64]) {
        use rand::Rng;
        for o in out.iter_mut() {
            *o = rng.random::<f64>();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(a: f64) -> SystemSpec {
        let map = FnMap::new(
            move |g: f64, x: &[f64], out: &mut [f64]| out[0] = a * x[0] + g,
            |_g: f64, _x: &[f64], out: &mut [f64]| out[0] = 1.0,
        );
        SystemSpec::homogeneous(1, Domain::Euclidean, Arc::new(map)).unwrap()
    }

    fn sample(y: f64) -> NoiseSample {
        NoiseSample {
            raw: vec![y],
            embedded: vec![y],
        }
    }

    #[test]
    fn linear_step() {
        let sys = linear(0.5);
        let x = step(&sys, 1.0, 0, &State::new(vec![2.0]).unwrap(), &sample(0.1)).unwrap();
        assert!((x.coords()[0] - 2.1).abs() < 1e-15);
    }

    #[test]
    fn torus_wrap_stays_in_unit_interval() {
        for v in [-1e-17, -0.3, 0.0, 0.999_999, 1.0, 1.5, 7.25, -3.75] {
            let w = wrap_unit(v);
            assert!((0.0..1.0).contains(&w), "{v} -> {w}");
        }
        assert_eq!(wrap_unit(1.5), 0.5);
    }

    #[test]
    fn non_finite_state_names_the_step() {
        let sys = linear(0.5);
        let err = step(&sys, f64::INFINITY, 4, &State::zeros(1), &sample(0.0)).unwrap_err();
        match err {
            Error::NonFinite { step, .. } => assert_eq!(step, 5),
            other => panic!("unexpected error {other}"),
        }
        assert!(State::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let sys = linear(0.5);
        let err = step(&sys, 0.0, 0, &State::zeros(2), &sample(0.0)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn derivative_check_linear() {
        let sys = linear(0.5);
        let err = check_map_derivative(&sys, 1.0, &State::new(vec![2.0]).unwrap(), 1e-4);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn derivative_check_catches_a_wrong_derivative() {
        let map = FnMap::new(
            |g: f64, x: &[f64], out: &mut [f64]| out[0] = g * x[0],
            |_g: f64, _x: &[f64], out: &mut [f64]| out[0] = 1.0,
        );
        let sys = SystemSpec::homogeneous(1, Domain::Euclidean, Arc::new(map)).unwrap();
        let err = check_map_derivative(&sys, 1.0, &State::new(vec![0.3]).unwrap(), 1e-4);
        assert!(err > 0.5);
    }

    #[test]
    fn inhomogeneous_horizon() {
        let layer: Arc<dyn ParamMap> = Arc::new(FnMap::new(
            |g: f64, x: &[f64], out: &mut [f64]| out[0] = x[0] + g,
            |_g: f64, _x: &[f64], out: &mut [f64]| out[0] = 1.0,
        ));
        let sys = SystemSpec::inhomogeneous(1, Domain::Euclidean, vec![layer.clone(); 3]).unwrap();
        assert_eq!(sys.horizon_mode(), HorizonMode::TimeInhomogeneous { steps: 3 });
        assert!(sys.check_horizon(3).is_ok());
        assert!(sys.check_horizon(4).is_err());
        assert!(SystemSpec::inhomogeneous(1, Domain::Euclidean, vec![]).is_err());
    }
}
