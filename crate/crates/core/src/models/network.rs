//! A 9-neuron tanh network run for 50 layers with gain `C = 4`, which puts it
//! in its most unstable regime.
//!
//! In the original coordinates `x' -> J tanh(x' + gamma 1)` the perturbation
//! direction changes with the state. The chart `X = X' + gamma 1` turns it
//! into `X -> J tanh(X) + gamma 1`, whose perturbation is the constant vector
//! `1`; noise along `1/sqrt(9)` then suffices, at the price of a
//! parameter-dependent observable `-9 gamma + sum X` and initial law
//! `X_0 = Y_0 + gamma 1`.

use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Model;
use crate::error::{Error, Result};
use crate::noise::{DirectionalGaussian, IsotropicGaussian, NoNoise, NoiseModel, NoiseSchedule};
use crate::rng::{stream, PathRng};
use crate::system::{CoordinateSum, Domain, InitialDistribution, Observable, ParamMap, SystemSpec};

pub const NEURONS: usize = 9;
pub const LAYERS: usize = 50;
pub const GAIN: f64 = 4.0;

#[rustfmt::skip]
pub const J0: [[f64; NEURONS]; NEURONS] = [
    [-0.54, -1.19, -0.33,  1.66, -0.5,  -1.3,   1.52, -0.5,   1.95],
    [-1.6,  -1.55, -1.45,  0.61,  1.92,  0.59, -0.16, -1.14, -1.27],
    [-0.59, -0.65, -1.32, -1.46, -0.82, -0.95, -1.47, -0.08, -0.38],
    [-0.78, -0.26,  0.87,  1.99,  0.07,  0.87, -0.79, -0.44,  1.11],
    [ 0.8,  -1.28, -0.52, -1.01,  1.49,  1.49, -1.65, -0.45,  0.21],
    [-1.77,  0.03, -1.39, -0.28,  0.44,  1.27,  0.61,  0.01, -0.02],
    [-0.18, -0.29, -0.73,  0.53, -0.82, -1.58, -1.41,  0.07, -1.84],
    [ 0.64,  0.86,  0.73,  0.96, -0.06,  0.04,  1.1,   1.22, -0.28],
    [ 1.18, -1.95, -0.37,  0.01,  1.24, -0.32,  0.43,  0.06, -1.28],
];

/// `J0` as CSV, one row per line, shortest round-trip formatting.
pub fn j0_csv() -> String {
    J0.iter()
        .map(|row| row.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

pub fn parse_matrix_csv(text: &str) -> Result<Vec<Vec<f64>>> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::InvalidConfig(format!("bad matrix entry {v:?}: {e}")))
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    /// Scalar noise along `1/sqrt(9)`.
    #[default]
    Foliated,
    /// Isotropic noise in all 9 directions.
    Full,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkForm {
    Original,
    #[default]
    Chart,
}

/// One layer; `J = GAIN * J0`.
#[derive(Debug, Clone)]
pub struct NetworkLayer {
    j: [[f64; NEURONS]; NEURONS],
    form: NetworkForm,
}

impl NetworkLayer {
    pub fn new(form: NetworkForm) -> Self {
        let mut j = J0;
        for row in j.iter_mut() {
            for v in row.iter_mut() {
                *v *= GAIN;
            }
        }
        NetworkLayer { j, form }
    }

    fn shift(&self, gamma: f64) -> f64 {
        match self.form {
            NetworkForm::Original => gamma,
            NetworkForm::Chart => 0.0,
        }
    }

    /// `Df(x)^T v`, the covector pullback used by backpropagation.
    pub fn pullback(&self, gamma: f64, x: &[f64], v: &[f64], out: &mut [f64]) {
        let s = self.shift(gamma);
        for (k, o) in out.iter_mut().enumerate() {
            let sech2 = 1.0 - (x[k] + s).tanh().powi(2);
            let col: f64 = (0..NEURONS).map(|i| self.j[i][k] * v[i]).sum();
            *o = sech2 * col;
        }
    }
}

impl ParamMap for NetworkLayer {
    fn apply(&self, gamma: f64, x: &[f64], out: &mut [f64]) {
        let s = self.shift(gamma);
        let mut t = [0.0; NEURONS];
        for (ti, xi) in t.iter_mut().zip(x) {
            *ti = (xi + s).tanh();
        }
        let bias = match self.form {
            NetworkForm::Original => 0.0,
            NetworkForm::Chart => gamma,
        };
        for (o, row) in out.iter_mut().zip(&self.j) {
            *o = row.iter().zip(&t).map(|(a, b)| a * b).sum::<f64>() + bias;
        }
    }

    fn param_derivative(&self, gamma: f64, x: &[f64], out: &mut [f64]) {
        match self.form {
            NetworkForm::Chart => out.fill(1.0),
            NetworkForm::Original => {
                // J diag(sech^2(x + gamma)) 1
                let mut d = [0.0; NEURONS];
                for (di, xi) in d.iter_mut().zip(x) {
                    *di = 1.0 - (xi + gamma).tanh().powi(2);
                }
                for (o, row) in out.iter_mut().zip(&self.j) {
                    *o = row.iter().zip(&d).map(|(a, b)| a * b).sum();
                }
            }
        }
    }
}

/// `Phi(X) = -9 gamma + sum X`, `dPhi/dgamma = -9`.
#[derive(Debug, Clone, Copy)]
pub struct ChartObservable;

impl Observable for ChartObservable {
    fn eval(&self, gamma: f64, x: &[f64]) -> f64 {
        -(NEURONS as f64) * gamma + x.iter().sum::<f64>()
    }

    fn param_derivative(&self, _gamma: f64, _x: &[f64]) -> Option<f64> {
        Some(-(NEURONS as f64))
    }
}

/// `X_0 = Y_0 + gamma 1`, `Y_0 ~ N(0, I)`; score `x_0 . 1 - gamma M`.
#[derive(Debug, Clone, Copy)]
pub struct ChartInitial;

impl InitialDistribution for ChartInitial {
    fn sample(&self, gamma: f64, rng: &mut PathRng, out: &mut [f64]) {
        for o in out.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *o = z + gamma;
        }
    }

    fn score_gamma(&self, gamma: f64, x0: &[f64]) -> Option<f64> {
        Some(x0.iter().sum::<f64>() - gamma * x0.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChaoticTanhNetwork {
    pub gamma: f64,
    pub sigma: f64,
    pub noise_mode: NoiseMode,
    pub form: NetworkForm,
}

impl Default for ChaoticTanhNetwork {
    fn default() -> Self {
        ChaoticTanhNetwork {
            gamma: 0.0,
            sigma: 1.5,
            noise_mode: NoiseMode::Foliated,
            form: NetworkForm::Chart,
        }
    }
}

impl ChaoticTanhNetwork {
    pub fn build(&self) -> Result<Model> {
        build_network(self.gamma, self.sigma, self.noise_mode, self.form)
    }
}

/// A 50-layer time-inhomogeneous problem (identical layers).
pub fn build_network(gamma: f64, sigma: f64, noise_mode: NoiseMode, form: NetworkForm) -> Result<Model> {
    let layer: Arc<dyn ParamMap> = Arc::new(NetworkLayer::new(form));
    let system = SystemSpec::inhomogeneous(NEURONS, Domain::Euclidean, vec![layer; LAYERS])?;
    let law: Arc<dyn NoiseModel> = match noise_mode {
        NoiseMode::Foliated => Arc::new(DirectionalGaussian::diagonal(sigma, NEURONS)?),
        NoiseMode::Full => Arc::new(IsotropicGaussian::new(sigma, NEURONS)?),
        NoiseMode::None => Arc::new(NoNoise { dimension: NEURONS }),
    };
    let (observable, initial): (Arc<dyn Observable>, Arc<dyn InitialDistribution>) = match form {
        NetworkForm::Chart => (Arc::new(ChartObservable), Arc::new(ChartInitial)),
        NetworkForm::Original => (
            Arc::new(CoordinateSum),
            Arc::new(crate::system::GaussianInitial {
                mean: vec![0.0; NEURONS],
                std: 1.0,
            }),
        ),
    };
    Ok(Model {
        gamma,
        system,
        noise: NoiseSchedule::PerStep(vec![law; LAYERS]),
        observable,
        initial,
    })
}

/// Mean of `|f*^50 dPhi| / |dPhi|` over deterministic original-form paths:
/// how much a backpropagated covector grows across the network.
pub fn backprop_growth(gamma: f64, samples: usize, seed: u64) -> f64 {
    let layer = NetworkLayer::new(NetworkForm::Original);
    let init = crate::system::GaussianInitial {
        mean: vec![0.0; NEURONS],
        std: 1.0,
    };
    let mut total = 0.0;
    for s in 0..samples {
        let mut rng = stream(seed, s as u64);
        let mut states = vec![vec![0.0; NEURONS]; LAYERS + 1];
        init.sample(gamma, &mut rng, &mut states[0]);
        for n in 0..LAYERS {
            let (head, tail) = states.split_at_mut(n + 1);
            layer.apply(gamma, &head[n], &mut tail[0]);
        }
        let mut v = vec![1.0; NEURONS];
        let start = (NEURONS as f64).sqrt();
        let mut next = vec![0.0; NEURONS];
        for n in (0..LAYERS).rev() {
            layer.pullback(gamma, &states[n], &v, &mut next);
            std::mem::swap(&mut v, &mut next);
        }
        total += v.iter().map(|a| a * a).sum::<f64>().sqrt() / start;
    }
    total / samples as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{check_layer_derivative, State};
    use rand::Rng;

    #[test]
    fn matrix_first_row_and_gain() {
        assert_eq!(J0[0], [-0.54, -1.19, -0.33, 1.66, -0.5, -1.3, 1.52, -0.5, 1.95]);
        let l = NetworkLayer::new(NetworkForm::Chart);
        assert_eq!(l.j[8][8], -1.28 * 4.0);
    }

    #[test]
    fn j0_resource_round_trips_bit_exactly() {
        let parsed = parse_matrix_csv(include_str!("../../resources/j0.csv")).unwrap();
        let again = parse_matrix_csv(&j0_csv()).unwrap();
        for i in 0..NEURONS {
            for k in 0..NEURONS {
                assert_eq!(parsed[i][k].to_bits(), J0[i][k].to_bits());
                assert_eq!(again[i][k].to_bits(), J0[i][k].to_bits());
            }
        }
        let json = serde_json::to_string(&J0).unwrap();
        let back: [[f64; NEURONS]; NEURONS] = serde_json::from_str(&json).unwrap();
        assert_eq!(back, J0);
    }

    #[test]
    fn chart_map_at_origin_is_the_bias() {
        let l = NetworkLayer::new(NetworkForm::Chart);
        let mut out = [0.0; NEURONS];
        l.apply(0.3, &[0.0; NEURONS], &mut out);
        assert!(out.iter().all(|v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn derivatives_agree_with_finite_differences() {
        let mut rng = stream(51, 0);
        for form in [NetworkForm::Chart, NetworkForm::Original] {
            let m = build_network(0.0, 1.0, NoiseMode::Foliated, form).unwrap();
            for _ in 0..20 {
                let x = State::new((0..NEURONS).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect()).unwrap();
                let g = 0.4 * rng.random::<f64>() - 0.2;
                let err = check_layer_derivative(&m.system, 0, g, &x, 1e-5);
                let tol = if form == NetworkForm::Chart { 1e-9 } else { 1e-5 };
                assert!(err < tol, "{form:?}: {err}");
            }
        }
    }

    #[test]
    fn initial_score() {
        let s = ChartInitial.score_gamma(0.0, &[1.0; NEURONS]).unwrap();
        assert_eq!(s, 9.0);
        let s = ChartInitial.score_gamma(0.5, &[0.5; NEURONS]).unwrap();
        assert_eq!(s, 0.0);
        assert_eq!(ChartObservable.param_derivative(0.1, &[0.0; NEURONS]), Some(-9.0));
    }

    #[test]
    fn forms_agree_on_the_observable_mean() {
        use crate::estimators::{ensemble_average, FiniteTimeConfig};
        let cfg = FiniteTimeConfig::new(LAYERS, 2000, 0.1, 3);
        let chart = build_network(0.1, 1.0, NoiseMode::None, NetworkForm::Chart).unwrap();
        let orig = build_network(0.1, 1.0, NoiseMode::None, NetworkForm::Original).unwrap();
        let (a, _) = ensemble_average(&chart.system, &chart.noise, chart.observable.as_ref(), chart.initial.as_ref(), &cfg).unwrap();
        let (b, _) = ensemble_average(&orig.system, &orig.noise, orig.observable.as_ref(), orig.initial.as_ref(), &cfg).unwrap();
        // same random inputs, X = X' + gamma 1 exactly
        assert!((a - b).abs() < 1e-6 * (1.0 + b.abs()), "{a} vs {b}");
    }

    #[test]
    fn backprop_growth_diagnostic() {
        let g = backprop_growth(0.0, 200, 7);
        println!("mean |f*^50 dPhi| / |dPhi| = {g:.3e}");
        assert!(g.is_finite() && g >= 0.0, "{g}");
    }
}
