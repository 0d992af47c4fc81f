//! Noise models: samplers together with the score `dp/p` of their density.
//!
//! The estimators only ever need one scalar per step, the score term
//! `I = df(x_m) . (dp/p)(y_{m+1})`; the response is `-E[(Phi - Phi_avg) sum I]`.
//! Foliated (directional) noise and the full-space case share that code
//! path: for a translation kernel `d_z p(z, x) = -dp(x - z)`, so the plus
//! sign of the foliated formula and the minus sign of the full-space one
//! describe the same number.

use std::fmt;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::PathRng;
use crate::system::TangentVector;

/// One draw `y`: the sampled coordinates and their image in state space.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSample {
    /// Length `M` for full-dimensional noise, 1 for directional noise.
    pub raw: Vec<f64>,
    /// The state-space increment, length `M`.
    pub embedded: Vec<f64>,
}

impl NoiseSample {
    pub fn zeros(raw_dimension: usize, state_dimension: usize) -> Self {
        NoiseSample {
            raw: vec![0.0; raw_dimension],
            embedded: vec![0.0; state_dimension],
        }
    }
}

pub trait NoiseModel: Send + Sync {
    fn state_dimension(&self) -> usize;

    fn raw_dimension(&self) -> usize;

    /// Draws `y` given the pre-noise point `z = f(x)`. Translation kernels
    /// ignore `gamma` and `z`.
    fn sample_into(&self, gamma: f64, z: &[f64], rng: &mut PathRng, out: &mut NoiseSample);

    /// `dp/p` at the sample, in raw coordinates. `None` when the model has
    /// no standalone score (a generalized score, or no noise at all).
    fn score(&self, _y: &NoiseSample) -> Option<Vec<f64>> {
        None
    }

    /// The per-step term `I` such that the response is `-E[Phi * sum I]`.
    ///
    /// `x_prev` is `x_m`, `delta_f` is `df(x_m)`, `y` is `y_{m+1}`.
    fn score_term(&self, gamma: f64, x_prev: &[f64], delta_f: &[f64], y: &NoiseSample) -> f64;

    /// False for models without a density; their responses are undefined.
    fn has_score(&self) -> bool {
        true
    }

    fn sample(&self, gamma: f64, z: &[f64], rng: &mut PathRng) -> NoiseSample {
        let mut out = NoiseSample::zeros(self.raw_dimension(), self.state_dimension());
        self.sample_into(gamma, z, rng, &mut out);
        out
    }
}

/// `N(0, sigma^2 I)` in `R^M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsotropicGaussian {
    sigma: f64,
    dimension: usize,
}

impl IsotropicGaussian {
    pub fn new(sigma: f64, dimension: usize) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise scale must be positive, got {sigma}"
            )));
        }
        if dimension == 0 {
            return Err(Error::InvalidConfig("noise dimension must be positive".into()));
        }
        Ok(IsotropicGaussian { sigma, dimension })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `log p(y)`, used by tests as an independent check of the score.
    pub fn log_density(&self, y: &[f64]) -> f64 {
        let s2 = self.sigma * self.sigma;
        let norm = -0.5 * self.dimension as f64 * (2.0 * std::f64::consts::PI * s2).ln();
        norm - y.iter().map(|v| v * v).sum::<f64>() / (2.0 * s2)
    }
}

impl NoiseModel for IsotropicGaussian {
    fn state_dimension(&self) -> usize {
        self.dimension
    }

    fn raw_dimension(&self) -> usize {
        self.dimension
    }

    fn sample_into(&self, _gamma: f64, _z: &[f64], rng: &mut PathRng, out: &mut NoiseSample) {
        for (r, e) in out.raw.iter_mut().zip(out.embedded.iter_mut()) {
            let n: f64 = StandardNormal.sample(rng);
            *r = self.sigma * n;
            *e = *r;
        }
    }

    fn score(&self, y: &NoiseSample) -> Option<Vec<f64>> {
        let s2 = self.sigma * self.sigma;
        Some(y.raw.iter().map(|v| -v / s2).collect())
    }

    #[inline]
    fn score_term(&self, _gamma: f64, _x_prev: &[f64], delta_f: &[f64], y: &NoiseSample) -> f64 {
        let dot: f64 = delta_f.iter().zip(&y.raw).map(|(d, v)| d * v).sum();
        -dot / (self.sigma * self.sigma)
    }
}

/// Scalar `N(0, sigma^2)` noise along a fixed unit direction: plane leaves
/// of a foliation with a constant tangent field.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionalGaussian {
    sigma: f64,
    direction: Vec<f64>,
}

impl DirectionalGaussian {
    /// `direction` must have unit length to within 1e-12.
    pub fn new(sigma: f64, direction: Vec<f64>) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise scale must be positive, got {sigma}"
            )));
        }
        if direction.is_empty() {
            return Err(Error::InvalidConfig("noise direction is empty".into()));
        }
        let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "noise direction must be a unit vector, |direction| = {norm}"
            )));
        }
        Ok(DirectionalGaussian { sigma, direction })
    }

    /// Noise along `1/sqrt(M)` in `R^M`.
    pub fn diagonal(sigma: f64, dimension: usize) -> Result<Self> {
        let c = 1.0 / (dimension as f64).sqrt();
        Self::new(sigma, vec![c; dimension])
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }
}

impl NoiseModel for DirectionalGaussian {
    fn state_dimension(&self) -> usize {
        self.direction.len()
    }

    fn raw_dimension(&self) -> usize {
        1
    }

    fn sample_into(&self, _gamma: f64, _z: &[f64], rng: &mut PathRng, out: &mut NoiseSample) {
        let n: f64 = StandardNormal.sample(rng);
        let y = self.sigma * n;
        out.raw[0] = y;
        for (e, d) in out.embedded.iter_mut().zip(&self.direction) {
            *e = y * d;
        }
    }

    fn score(&self, y: &NoiseSample) -> Option<Vec<f64>> {
        Some(vec![-y.raw[0] / (self.sigma * self.sigma)])
    }

    #[inline]
    fn score_term(&self, _gamma: f64, _x_prev: &[f64], delta_f: &[f64], y: &NoiseSample) -> f64 {
        let along: f64 = delta_f.iter().zip(&self.direction).map(|(d, u)| d * u).sum();
        -along * y.raw[0] / (self.sigma * self.sigma)
    }
}

type Sampler = dyn Fn(f64, &[f64], &mut PathRng) -> NoiseSample + Send + Sync;
type CombinedScore = dyn Fn(f64, &[f64], &NoiseSample) -> f64 + Send + Sync;

/// Noise whose law `p_{gamma,z}(y)` may depend on the parameter and on the
/// pre-noise point `z = f(x)`.
///
/// `combined_score(gamma, x_m, y_{m+1})` is the total derivative
/// `(1/p) d/dgamma p_{gamma, f_gamma x_m}(x_{m+1} - f_gamma x_m)`; it already
/// includes the map perturbation, so `delta_f` is not consulted. It must have
/// zero mean under `sampler`.
#[derive(Clone)]
pub struct GeneralScore {
    dimension: usize,
    raw_dimension: usize,
    sampler: Arc<Sampler>,
    combined_score: Arc<CombinedScore>,
}

impl fmt::Debug for GeneralScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneralScore")
            .field("dimension", &self.dimension)
            .field("raw_dimension", &self.raw_dimension)
            .finish_non_exhaustive()
    }
}

impl GeneralScore {
    pub fn new<S, C>(dimension: usize, raw_dimension: usize, sampler: S, combined_score: C) -> Self
    where
        S: Fn(f64, &[f64], &mut PathRng) -> NoiseSample + Send + Sync + 'static,
        C: Fn(f64, &[f64], &NoiseSample) -> f64 + Send + Sync + 'static,
    {
        GeneralScore {
            dimension,
            raw_dimension,
            sampler: Arc::new(sampler),
            combined_score: Arc::new(combined_score),
        }
    }

    pub fn combined_score(&self, gamma: f64, x_prev: &[f64], y: &NoiseSample) -> f64 {
        (self.combined_score)(gamma, x_prev, y)
    }
}

impl NoiseModel for GeneralScore {
    fn state_dimension(&self) -> usize {
        self.dimension
    }

    fn raw_dimension(&self) -> usize {
        self.raw_dimension
    }

    fn sample_into(&self, gamma: f64, z: &[f64], rng: &mut PathRng, out: &mut NoiseSample) {
        *out = (self.sampler)(gamma, z, rng);
    }

    fn score_term(&self, gamma: f64, x_prev: &[f64], _delta_f: &[f64], y: &NoiseSample) -> f64 {
        // the combined score enters with a plus sign
        -(self.combined_score)(gamma, x_prev, y)
    }
}

/// No noise at all; used for deterministic baseline averages.
#[derive(Debug, Clone, Copy)]
pub struct NoNoise {
    pub dimension: usize,
}

impl NoiseModel for NoNoise {
    fn state_dimension(&self) -> usize {
        self.dimension
    }

    fn raw_dimension(&self) -> usize {
        self.dimension
    }

    fn sample_into(&self, _gamma: f64, _z: &[f64], _rng: &mut PathRng, out: &mut NoiseSample) {
        out.raw.fill(0.0);
        out.embedded.fill(0.0);
    }

    fn score_term(&self, _: f64, _: &[f64], _: &[f64], _: &NoiseSample) -> f64 {
        0.0
    }

    fn has_score(&self) -> bool {
        false
    }
}

/// Noise laws per step: one for all steps, or one per layer.
#[derive(Clone)]
pub enum NoiseSchedule {
    Homogeneous(Arc<dyn NoiseModel>),
    PerStep(Vec<Arc<dyn NoiseModel>>),
}

impl fmt::Debug for NoiseSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseSchedule::Homogeneous(_) => f.write_str("NoiseSchedule::Homogeneous"),
            NoiseSchedule::PerStep(v) => write!(f, "NoiseSchedule::PerStep({})", v.len()),
        }
    }
}

impl NoiseSchedule {
    pub fn homogeneous<N: NoiseModel + 'static>(model: N) -> Self {
        NoiseSchedule::Homogeneous(Arc::new(model))
    }

    /// The law of `y_{n+1}`, the noise added after map `n`.
    pub fn at(&self, n: usize) -> &dyn NoiseModel {
        match self {
            NoiseSchedule::Homogeneous(m) => m.as_ref(),
            NoiseSchedule::PerStep(v) => v[n].as_ref(),
        }
    }

    pub fn is_homogeneous(&self) -> bool {
        matches!(self, NoiseSchedule::Homogeneous(_))
    }

    pub(crate) fn validate(&self, state_dimension: usize, steps: Option<usize>) -> Result<()> {
        let models: Vec<&dyn NoiseModel> = match self {
            NoiseSchedule::Homogeneous(m) => vec![m.as_ref()],
            NoiseSchedule::PerStep(v) => {
                if let Some(t) = steps {
                    if v.len() != t {
                        return Err(Error::InvalidConfig(format!(
                            "{} per-step noise laws for a horizon of {t}",
                            v.len()
                        )));
                    }
                }
                v.iter().map(|m| m.as_ref()).collect()
            }
        };
        for m in models {
            if m.state_dimension() != state_dimension {
                return Err(Error::DimensionMismatch {
                    context: "noise model",
                    expected: state_dimension,
                    found: m.state_dimension(),
                });
            }
            if !m.has_score() {
                return Err(Error::DegenerateNoise);
            }
        }
        Ok(())
    }
}

/// `dp/p` at `y`.
pub fn score(model: &dyn NoiseModel, y: &NoiseSample) -> Option<Vec<f64>> {
    model.score(y)
}

/// `I = df . (dp/p)(y)` for a translation-kernel model, with a dimension check.
pub fn score_contribution(model: &dyn NoiseModel, delta_f: &TangentVector, y: &NoiseSample) -> Result<f64> {
    if delta_f.dimension() != model.state_dimension() {
        return Err(Error::DimensionMismatch {
            context: "perturbation direction",
            expected: model.state_dimension(),
            found: delta_f.dimension(),
        });
    }
    if y.raw.len() != model.raw_dimension() {
        return Err(Error::DimensionMismatch {
            context: "noise sample",
            expected: model.raw_dimension(),
            found: y.raw.len(),
        });
    }
    Ok(model.score_term(0.0, &[], delta_f.coords(), y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::stats::StreamingMoments;
    use proptest::prelude::*;

    #[test]
    fn isotropic_score_value() {
        let g = IsotropicGaussian::new(0.1, 1).unwrap();
        let y = NoiseSample {
            raw: vec![0.05],
            embedded: vec![0.05],
        };
        let s = score(&g, &y).unwrap();
        assert!((s[0] + 5.0).abs() < 1e-12);
    }

    #[test]
    fn score_at_zero_is_zero() {
        let g = IsotropicGaussian::new(0.3, 4).unwrap();
        assert!(score(&g, &NoiseSample::zeros(4, 4)).unwrap().iter().all(|v| *v == 0.0));
        let d = DirectionalGaussian::diagonal(0.3, 4).unwrap();
        assert_eq!(score(&d, &NoiseSample::zeros(1, 4)).unwrap(), vec![0.0]);
    }

    #[test]
    fn score_matches_finite_difference_of_log_density() {
        let g = IsotropicGaussian::new(0.7, 3).unwrap();
        let mut rng = stream(11, 0);
        for _ in 0..100 {
            let y = g.sample(0.0, &[0.0; 3], &mut rng);
            let s = score(&g, &y).unwrap();
            for i in 0..3 {
                let h = 1e-5;
                let mut p = y.raw.clone();
                let mut q = y.raw.clone();
                p[i] += h;
                q[i] -= h;
                let fd = (g.log_density(&p) - g.log_density(&q)) / (2.0 * h);
                let rel = (fd - s[i]).abs() / s[i].abs().max(1e-3);
                assert!(rel < 1e-6, "component {i}: fd {fd} vs {}", s[i]);
            }
        }
    }

    #[test]
    fn isotropic_sample_std() {
        let g = IsotropicGaussian::new(0.1, 1).unwrap();
        let mut rng = stream(3, 0);
        let mut m = StreamingMoments::default();
        for _ in 0..1_000_000 {
            m.push(g.sample(0.0, &[0.0], &mut rng).raw[0]);
        }
        assert!((m.std() - 0.1).abs() < 1e-3, "std {}", m.std());
    }

    #[test]
    fn sampling_is_reproducible() {
        let g = IsotropicGaussian::new(0.1, 2).unwrap();
        let a: Vec<_> = {
            let mut r = stream(5, 1);
            (0..10).map(|_| g.sample(0.0, &[0.0; 2], &mut r)).collect()
        };
        let b: Vec<_> = {
            let mut r = stream(5, 1);
            (0..10).map(|_| g.sample(0.0, &[0.0; 2], &mut r)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn directional_samples_lie_on_the_diagonal() {
        let d = DirectionalGaussian::diagonal(1.5, 9).unwrap();
        let mut rng = stream(1, 0);
        for _ in 0..1000 {
            let y = d.sample(0.0, &[0.0; 9], &mut rng);
            assert_eq!(y.raw.len(), 1);
            assert!(y.embedded.iter().all(|v| *v == y.embedded[0]));
            assert!((y.embedded[0] - y.raw[0] / 3.0).abs() <= 1e-15 * y.raw[0].abs().max(1.0));
        }
    }

    #[test]
    fn tiny_sigma_gives_tiny_samples() {
        let g = IsotropicGaussian::new(1e-300, 3).unwrap();
        let mut rng = stream(2, 0);
        let y = g.sample(0.0, &[0.0; 3], &mut rng);
        assert!(y.embedded.iter().all(|v| v.abs() < 1e-290));
    }

    #[test]
    fn invalid_models_are_rejected() {
        assert!(IsotropicGaussian::new(0.0, 1).is_err());
        assert!(IsotropicGaussian::new(-1.0, 1).is_err());
        assert!(DirectionalGaussian::new(1.0, vec![1.0, 1.0]).is_err());
        assert!(DirectionalGaussian::new(1.0, vec![0.6, 0.8]).is_ok());
    }

    #[test]
    fn directional_contribution_of_the_ones_vector() {
        let sigma = 1.5;
        let d = DirectionalGaussian::diagonal(sigma, 9).unwrap();
        let xi = 0.37;
        let y = NoiseSample {
            raw: vec![xi],
            embedded: vec![xi / 3.0; 9],
        };
        let ones = TangentVector::new(vec![1.0; 9]).unwrap();
        let i = score_contribution(&d, &ones, &y).unwrap();
        assert!((i - (-3.0 * xi / (sigma * sigma))).abs() < 1e-14);
    }

    #[test]
    fn orthogonal_perturbation_contributes_nothing() {
        let d = DirectionalGaussian::new(0.5, vec![0.6, 0.8]).unwrap();
        let ortho = TangentVector::new(vec![0.8, -0.6]).unwrap();
        let y = NoiseSample {
            raw: vec![1.3],
            embedded: vec![0.78, 1.04],
        };
        assert!(score_contribution(&d, &ortho, &y).unwrap().abs() < 1e-15);
    }

    #[test]
    fn contribution_dimension_mismatch() {
        let g = IsotropicGaussian::new(0.5, 3).unwrap();
        let v = TangentVector::new(vec![1.0; 2]).unwrap();
        assert!(score_contribution(&g, &v, &NoiseSample::zeros(3, 3)).is_err());
    }

    #[test]
    fn foliated_and_full_noise_have_equal_second_moments() {
        let (sigma, m, n) = (1.5, 9, 100_000);
        let ones = vec![1.0; m];
        let iso = IsotropicGaussian::new(sigma, m).unwrap();
        let dir = DirectionalGaussian::diagonal(sigma, m).unwrap();
        let mut r1 = stream(21, 0);
        let mut r2 = stream(21, 1);
        let (mut s_iso, mut s_dir) = (0.0, 0.0);
        for _ in 0..n {
            let y = iso.sample(0.0, &ones, &mut r1);
            s_iso += iso.score_term(0.0, &ones, &ones, &y).powi(2);
            let y = dir.sample(0.0, &ones, &mut r2);
            s_dir += dir.score_term(0.0, &ones, &ones, &y).powi(2);
        }
        let expected = m as f64 / (sigma * sigma);
        let (e_iso, e_dir) = (s_iso / n as f64, s_dir / n as f64);
        assert!((e_iso / e_dir - 1.0).abs() < 0.05, "{e_iso} vs {e_dir}");
        assert!((e_iso / expected - 1.0).abs() < 0.05);
    }

    #[test]
    fn free_centralization_of_gaussian_scores() {
        let g = IsotropicGaussian::new(0.1, 1).unwrap();
        let mut rng = stream(8, 0);
        let mut m = StreamingMoments::default();
        for _ in 0..100_000 {
            let y = g.sample(0.0, &[0.0], &mut rng);
            m.push(g.score_term(0.0, &[0.0], &[0.7], &y));
        }
        assert!(m.mean().abs() <= 3.0 * m.std() / (m.count() as f64).sqrt());
    }

    #[test]
    fn general_score_enters_with_opposite_sign() {
        // location family p_{gamma}(y) = N(gamma, s^2): d log p / d gamma = (y - gamma)/s^2
        let s = 0.5;
        let gs = GeneralScore::new(
            1,
            1,
            move |g, _z, rng| {
                let n: f64 = StandardNormal.sample(rng);
                let y = g + s * n;
                NoiseSample { raw: vec![y], embedded: vec![y] }
            },
            move |g, _x, y| (y.raw[0] - g) / (s * s),
        );
        let y = NoiseSample { raw: vec![0.5], embedded: vec![0.5] };
        assert_eq!(gs.score_term(0.0, &[0.0], &[], &y), -2.0);
        assert!(gs.score(&y).is_none());
        let mut rng = stream(4, 0);
        let mut m = StreamingMoments::default();
        for _ in 0..100_000 {
            let y = gs.sample(0.3, &[0.0], &mut rng);
            m.push(gs.combined_score(0.3, &[0.0], &y));
        }
        assert!(m.mean().abs() <= 3.0 * m.std() / (m.count() as f64).sqrt());
    }

    proptest! {
        #[test]
        fn score_is_linear_in_the_sample(sigma in 0.01f64..10.0, a in -5.0f64..5.0, b in -5.0f64..5.0, c in -3.0f64..3.0) {
            let g = IsotropicGaussian::new(sigma, 2).unwrap();
            let s = |v: Vec<f64>| score(&g, &NoiseSample { embedded: v.clone(), raw: v }).unwrap();
            let lhs = s(vec![a + c * b, b]);
            let sa = s(vec![a, 0.0]);
            let sb = s(vec![b, b]);
            for i in 0..2 {
                let rhs = sa[i] + [c, 1.0][i] * sb[i];
                prop_assert!((lhs[i] - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
            }
            let direct = s(vec![a, b]);
            prop_assert!((direct[0] + a / (sigma * sigma)).abs() <= 1e-12 * (1.0 + direct[0].abs()));
        }
    }
}
