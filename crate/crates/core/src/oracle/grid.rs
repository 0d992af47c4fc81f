//! Densities on a uniform grid of `[0, 1)` evolved by the transfer operator
//! of `x -> f(x) + y mod 1`, `y ~ N(0, sigma^2)`.

use std::fmt::Write as _;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::system::wrap_unit;

pub const DEFAULT_GRID: usize = 4096;
pub const DEFAULT_TOL: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 100_000;

/// Bin weights are density values: `sum(weights) / N = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    weights: Vec<f64>,
}

impl GridDensity {
    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "grid needs at least one bin");
        GridDensity {
            weights: vec![1.0; n],
        }
    }

    /// Normalizes `weights` to unit mass; negative entries are an error.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidConfig("grid weights must be finite and non-negative".into()));
        }
        let mut d = GridDensity { weights };
        d.normalize();
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) / self.len() as f64
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum::<f64>() / self.len() as f64
    }

    fn normalize(&mut self) {
        let m = self.mass();
        if m > 0.0 {
            for w in self.weights.iter_mut() {
                *w /= m;
            }
        }
    }

    /// `integral Phi h` by the midpoint rule.
    pub fn expectation(&self, phi: &dyn Fn(f64) -> f64) -> f64 {
        let n = self.len();
        self.weights
            .iter()
            .enumerate()
            .map(|(i, w)| w * phi((i as f64 + 0.5) / n as f64))
            .sum::<f64>()
            / n as f64
    }

    pub fn l1_distance(&self, other: &GridDensity) -> f64 {
        assert_eq!(self.len(), other.len(), "grids differ in size");
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / self.len() as f64
    }

    /// Averages groups of adjacent bins down to `bins` bins.
    pub fn coarsen(&self, bins: usize) -> GridDensity {
        assert!(bins > 0 && self.len().is_multiple_of(bins), "{} bins do not divide {}", bins, self.len());
        let k = self.len() / bins;
        GridDensity {
            weights: self
                .weights
                .chunks_exact(k)
                .map(|c| c.iter().sum::<f64>() / k as f64)
                .collect(),
        }
    }

    /// `bin_center,weight` lines under a column header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_center,weight\n");
        for (i, w) in self.weights.iter().enumerate() {
            let _ = writeln!(s, "{},{}", self.center(i), w);
        }
        s
    }
}

/// `L_p L_f` on a fixed grid, with the map's bin assignments and the
/// kernel's spectrum precomputed.
pub struct GridOperator {
    n: usize,
    /// For each source bin: lower destination bin and the share sent to the next one.
    targets: Vec<(usize, f64)>,
    kernel_spectrum: Vec<Complex<f64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl GridOperator {
    pub fn new(n: usize, f: &dyn Fn(f64) -> f64, sigma: f64) -> Self {
        assert!(n > 0, "grid needs at least one bin");
        let nf = n as f64;
        let targets = (0..n)
            .map(|i| {
                let image = wrap_unit(f((i as f64 + 0.5) / nf));
                let pos = image * nf - 0.5;
                let lower = pos.floor();
                let frac = pos - lower;
                ((lower as i64).rem_euclid(n as i64) as usize, frac)
            })
            .collect();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let mut kernel: Vec<Complex<f64>> = wrapped_gaussian(n, sigma)
            .into_iter()
            .map(|v| Complex::new(v, 0.0))
            .collect();
        forward.process(&mut kernel);
        GridOperator {
            n,
            targets,
            kernel_spectrum: kernel,
            forward,
            inverse,
        }
    }

    pub fn apply(&self, d: &GridDensity) -> GridDensity {
        assert_eq!(d.len(), self.n, "density grid does not match the operator");
        let n = self.n;
        let mut pushed = vec![Complex::new(0.0, 0.0); n];
        for (w, &(lower, frac)) in d.weights.iter().zip(&self.targets) {
            pushed[lower].re += w * (1.0 - frac);
            pushed[(lower + 1) % n].re += w * frac;
        }
        self.forward.process(&mut pushed);
        for (p, k) in pushed.iter_mut().zip(&self.kernel_spectrum) {
            *p *= k;
        }
        self.inverse.process(&mut pushed);
        let mut out = GridDensity {
            weights: pushed.iter().map(|c| (c.re / n as f64).max(0.0)).collect(),
        };
        out.normalize();
        out
    }
}

/// Bin masses of the wrapped `N(0, sigma^2)` kernel at circular offsets
/// `0, 1/N, ..., (N-1)/N`, summing to 1.
fn wrapped_gaussian(n: usize, sigma: f64) -> Vec<f64> {
    let nf = n as f64;
    let images = (sigma * 8.0).ceil() as i64 + 1;
    let mut k: Vec<f64> = (0..n)
        .map(|j| {
            let d = j as f64 / nf;
            (-images..=images)
                .map(|m| {
                    let u = (d + m as f64) / sigma;
                    (-0.5 * u * u).exp()
                })
                .sum()
        })
        .collect();
    let total: f64 = k.iter().sum();
    if total > 0.0 && total.is_finite() {
        k.iter_mut().for_each(|v| *v /= total);
    } else {
        k.fill(0.0);
        k[0] = 1.0;
    }
    k
}

/// One application of `L_p L_f`: midpoint pushforward with linear
/// splitting between the two nearest bins, then circular convolution with
/// the wrapped Gaussian kernel, renormalized.
pub fn push_density(d: &GridDensity, f: &dyn Fn(f64) -> f64, sigma: f64) -> GridDensity {
    GridOperator::new(d.len(), f, sigma).apply(d)
}

/// Power iteration from the uniform density until the L1 change is below `tol`.
pub fn stationary_density(f: &dyn Fn(f64) -> f64, sigma: f64, n: usize, tol: f64) -> Result<GridDensity> {
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig("tolerance must be positive".into()));
    }
    let op = GridOperator::new(n, f, sigma);
    let mut d = GridDensity::uniform(n);
    let mut change = f64::INFINITY;
    for _ in 0..MAX_ITERATIONS {
        let next = op.apply(&d);
        change = next.l1_distance(&d);
        d = next;
        if change < tol {
            return Ok(d);
        }
    }
    Err(Error::NotConverged {
        iterations: MAX_ITERATIONS,
        change,
    })
}

/// Central difference of the stationary mean of `phi` in `gamma`.
///
/// `f(gamma, x)` is the unwrapped map on `[0, 1)`.
pub fn grid_linear_response(
    f: &dyn Fn(f64, f64) -> f64,
    gamma: f64,
    sigma: f64,
    n: usize,
    delta_gamma: f64,
    phi: &dyn Fn(f64) -> f64,
    tol: f64,
) -> Result<f64> {
    if !(delta_gamma > 0.0) {
        return Err(Error::InvalidConfig("parameter step must be positive".into()));
    }
    let plus = stationary_density(&|x| f(gamma + delta_gamma, x), sigma, n, tol)?;
    let minus = stationary_density(&|x| f(gamma - delta_gamma, x), sigma, n, tol)?;
    Ok((plus.expectation(phi) - minus.expectation(phi)) / (2.0 * delta_gamma))
}
