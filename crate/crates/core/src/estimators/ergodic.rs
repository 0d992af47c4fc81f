use serde::{Deserialize, Serialize};

use super::{CorrectionStatus, Diagnostics, EstimatorResult};
use crate::error::{Error, Result};
use crate::noise::{NoiseModel, NoiseSample, NoiseSchedule};
use crate::parallel::{try_map_units, Execution};
use crate::rng::stream;
use crate::stats::{self, LagCrossAccumulator, LagCrossTotals, StreamingMoments, MIN_BATCHES};
use crate::system::{HorizonMode, Observable, ParamMap, SystemSpec};

pub const DEFAULT_SPIN_UP: usize = 1000;

fn default_spin_up() -> usize {
    DEFAULT_SPIN_UP
}

fn default_segments() -> usize {
    1
}

fn default_true() -> bool {
    true
}

/// One long orbit: `spin_up` discarded steps, then `window + orbit_len` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicConfig {
    /// Decorrelation window `W`.
    pub window: usize,
    /// Orbit length `L`.
    pub orbit_len: usize,
    #[serde(default = "default_spin_up")]
    pub spin_up: usize,
    pub gamma: f64,
    pub seed: u64,
    /// Batch length for the batch-means standard errors; default `10 W`.
    #[serde(default)]
    pub batch_len: Option<usize>,
    /// Independent orbit segments, each with its own spin-up; their
    /// samples add up to `orbit_len`. One segment is the plain single orbit.
    #[serde(default = "default_segments")]
    pub segments: usize,
    /// Subtract `Phi_avg` inside the double sum.
    #[serde(default = "default_true")]
    pub centralize: bool,
    /// Starting point before spin-up; zeros when absent.
    #[serde(default)]
    pub start: Option<Vec<f64>>,
    #[serde(default)]
    pub execution: Execution,
}

impl ErgodicConfig {
    pub fn new(window: usize, orbit_len: usize, gamma: f64, seed: u64) -> Self {
        ErgodicConfig {
            window,
            orbit_len,
            spin_up: DEFAULT_SPIN_UP,
            gamma,
            seed,
            batch_len: None,
            segments: 1,
            centralize: true,
            start: None,
            execution: Execution::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 1 {
            return Err(Error::InvalidConfig("window W must be at least 1".into()));
        }
        if self.window >= self.orbit_len {
            return Err(Error::WindowTooLarge {
                window: self.window,
                orbit_len: self.orbit_len,
            });
        }
        if self.segments < 1 {
            return Err(Error::InvalidConfig("at least one orbit segment is needed".into()));
        }
        if self.orbit_len / self.segments <= self.window {
            return Err(Error::InvalidConfig(format!(
                "each of the {} segments must be longer than W = {}",
                self.segments, self.window
            )));
        }
        if !self.gamma.is_finite() {
            return Err(Error::InvalidConfig(format!("gamma = {}", self.gamma)));
        }
        if self.batch_len == Some(0) {
            return Err(Error::InvalidConfig("batch length must be positive".into()));
        }
        Ok(())
    }

    fn segment_lengths(&self) -> Vec<usize> {
        let base = self.orbit_len / self.segments;
        let extra = self.orbit_len % self.segments;
        (0..self.segments).map(|s| base + usize::from(s < extra)).collect()
    }

    fn resolved_batch_len(&self, shortest_segment: usize) -> usize {
        self.batch_len.unwrap_or_else(|| {
            let per_segment = MIN_BATCHES.div_ceil(self.segments);
            (10 * self.window).min(shortest_segment / per_segment).max(1)
        })
    }
}

fn homogeneous_parts<'a>(
    sys: &'a SystemSpec,
    noise: &'a NoiseSchedule,
) -> Result<(&'a dyn ParamMap, &'a dyn NoiseModel)> {
    if sys.horizon_mode() != HorizonMode::TimeHomogeneous || !noise.is_homogeneous() {
        return Err(Error::TimeInhomogeneous);
    }
    noise.validate(sys.dimension(), None)?;
    Ok((sys.map_at(0), noise.at(0)))
}

/// Drives one orbit segment, calling `visit(m, I_m, x_m)` for `m = 1..=steps`
/// after `spin_up` discarded steps.
#[allow(clippy::too_many_arguments)]
fn run_orbit<F>(
    sys: &SystemSpec,
    map: &dyn ParamMap,
    law: &dyn NoiseModel,
    gamma: f64,
    start: Option<&[f64]>,
    spin_up: usize,
    steps: usize,
    seed: u64,
    unit: u64,
    mut visit: F,
) -> Result<()>
where
    F: FnMut(usize, f64, &[f64]) -> Result<()>,
{
    let dim = sys.dimension();
    let mut rng = stream(seed, unit);
    let mut x = match start {
        Some(s) => s.to_vec(),
        None => vec![0.0; dim],
    };
    let mut z = vec![0.0; dim];
    let mut next = vec![0.0; dim];
    let mut df = vec![0.0; dim];
    let mut y = NoiseSample::zeros(law.raw_dimension(), dim);
    for m in 0..spin_up {
        map.apply(gamma, &x, &mut z);
        law.sample_into(gamma, &z, &mut rng, &mut y);
        sys.finish_step(m, &z, &y.embedded, &mut next)
            .map_err(|_| Error::NonFinite { what: "spin-up state", step: m + 1, path: None })?;
        std::mem::swap(&mut x, &mut next);
    }
    for m in 0..steps {
        map.apply(gamma, &x, &mut z);
        law.sample_into(gamma, &z, &mut rng, &mut y);
        map.param_derivative(gamma, &x, &mut df);
        let term = law.score_term(gamma, &x, &df, &y);
        if !term.is_finite() {
            return Err(Error::NonFinite { what: "score term", step: m + 1, path: None });
        }
        sys.finish_step(m, &z, &y.embedded, &mut next)?;
        std::mem::swap(&mut x, &mut next);
        visit(m + 1, term, &x)?;
    }
    Ok(())
}

/// Orbitwise response of the physical measure,
/// `-(1/L) sum_{n=1}^{W} sum_{l=1}^{L} (Phi_{n+l} - Phi_avg) I_{l+1}`,
/// with `Phi_avg = (1/L) sum_{l=1}^{L} Phi_l` from the same orbit.
///
/// A single pass over the orbit with a `W`-term ring buffer; nothing else is
/// stored beyond per-batch totals. Standard errors are batch means over
/// non-overlapping batches of the index `l`.
pub fn ergodic_estimator(
    sys: &SystemSpec,
    noise: &NoiseSchedule,
    obs: &dyn Observable,
    cfg: &ErgodicConfig,
) -> Result<EstimatorResult> {
    cfg.validate()?;
    let (map, law) = homogeneous_parts(sys, noise)?;
    if let Some(s) = &cfg.start {
        if s.len() != sys.dimension() {
            return Err(Error::DimensionMismatch {
                context: "orbit start",
                expected: sys.dimension(),
                found: s.len(),
            });
        }
    }
    if cfg.orbit_len < 100 * cfg.window {
        log::warn!(
            "orbit length L = {} is less than 100 W = {}; the estimate may be noisy",
            cfg.orbit_len,
            100 * cfg.window
        );
    }
    let lengths = cfg.segment_lengths();
    let batch_len = cfg.resolved_batch_len(*lengths.iter().min().expect("segments"));

    let parts = try_map_units(cfg.execution, lengths.len(), |s| -> Result<LagCrossTotals> {
        let len = lengths[s];
        let mut acc = LagCrossAccumulator::new(cfg.window, len, batch_len)?;
        let steps = acc.required_steps();
        run_orbit(sys, map, law, cfg.gamma, cfg.start.as_deref(), cfg.spin_up, steps, cfg.seed, s as u64, |m, term, x| {
            let phi = obs.eval(cfg.gamma, x);
            if !phi.is_finite() {
                return Err(Error::NonFinite { what: "observable", step: m, path: None });
            }
            acc.push(term, phi);
            Ok(())
        })?;
        Ok(acc.finish())
    })?;
    let totals = LagCrossTotals::combine(&parts).expect("at least one segment");

    let phi_avg = totals.phi_avg();
    let centered = totals.centralized(phi_avg);
    let raw = totals.uncentralized();
    let batch_estimates = totals.batch_responses(cfg.centralize.then_some(phi_avg));
    let se_dphi = stats::se_of_batch_means(&batch_estimates)?;
    let se_phi = stats::se_of_batch_means(&totals.batch_phi_means())?;

    Ok(EstimatorResult {
        phi_avg,
        dphi_avg: if cfg.centralize { centered } else { raw },
        se_phi,
        se_dphi,
        samples_used: totals.orbit_len,
        correction_terms: None,
        diagnostics: Diagnostics {
            uncentralized_dphi: raw,
            corrections: CorrectionStatus::NotApplicable,
            batch_len: Some(batch_len),
            batches: Some(totals.batches.len()),
        },
    })
}

/// Moments of the score terms `I_m` along a spun-up orbit of `steps` steps.
pub fn orbit_score_moments(
    sys: &SystemSpec,
    noise: &NoiseSchedule,
    gamma: f64,
    spin_up: usize,
    steps: usize,
    seed: u64,
) -> Result<StreamingMoments> {
    let (map, law) = homogeneous_parts(sys, noise)?;
    let mut m = StreamingMoments::default();
    run_orbit(sys, map, law, gamma, None, spin_up, steps, seed, 0, |_, term, _| {
        m.push(term);
        Ok(())
    })?;
    Ok(m)
}

/// Calls `visit(x_m)` along a spun-up orbit for `m = 1..=steps`, from `x_0 = 0`.
pub fn visit_orbit<F>(
    sys: &SystemSpec,
    noise: &NoiseSchedule,
    gamma: f64,
    spin_up: usize,
    steps: usize,
    seed: u64,
    mut visit: F,
) -> Result<()>
where
    F: FnMut(&[f64]) -> Result<()>,
{
    let (map, law) = homogeneous_parts(sys, noise)?;
    run_orbit(sys, map, law, gamma, None, spin_up, steps, seed, 0, |_, _, x| visit(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::IsotropicGaussian;
    use crate::system::{Coordinate, Domain, FnMap};
    use std::sync::Arc;

    fn ar1(a: f64, slope: f64) -> SystemSpec {
        let map = FnMap::new(
            move |g: f64, x: &[f64], out: &mut [f64]| out[0] = a * x[0] + g,
            move |_g: f64, _x: &[f64], out: &mut [f64]| out[0] = slope,
        );
        SystemSpec::homogeneous(1, Domain::Euclidean, Arc::new(map)).unwrap()
    }

    fn gauss(s: f64) -> NoiseSchedule {
        NoiseSchedule::homogeneous(IsotropicGaussian::new(s, 1).unwrap())
    }

    #[test]
    fn zero_perturbation_gives_exactly_zero() {
        let r = ergodic_estimator(&ar1(0.5, 0.0), &gauss(0.3), &Coordinate(0), &ErgodicConfig::new(5, 10_000, 0.0, 3)).unwrap();
        assert_eq!(r.dphi_avg, 0.0);
        assert_eq!(r.diagnostics.uncentralized_dphi, 0.0);
    }

    #[test]
    fn window_not_below_orbit_is_an_error() {
        let err = ergodic_estimator(&ar1(0.5, 1.0), &gauss(0.3), &Coordinate(0), &ErgodicConfig::new(100, 100, 0.0, 3)).unwrap_err();
        assert!(matches!(err, Error::WindowTooLarge { .. }));
    }

    #[test]
    fn inhomogeneous_systems_are_rejected() {
        let layer: Arc<dyn ParamMap> = Arc::new(FnMap::new(
            |g: f64, x: &[f64], out: &mut [f64]| out[0] = 0.5 * x[0] + g,
            |_g: f64, _x: &[f64], out: &mut [f64]| out[0] = 1.0,
        ));
        let sys = SystemSpec::inhomogeneous(1, Domain::Euclidean, vec![layer; 4]).unwrap();
        let err = ergodic_estimator(&sys, &gauss(0.3), &Coordinate(0), &ErgodicConfig::new(2, 100, 0.0, 3)).unwrap_err();
        assert!(matches!(err, Error::TimeInhomogeneous));
    }

    #[test]
    fn segments_and_workers_do_not_change_results() {
        let sys = ar1(0.5, 1.0);
        let mut cfg = ErgodicConfig::new(10, 40_000, 0.1, 9);
        cfg.segments = 4;
        cfg.execution = Execution::Sequential;
        let a = ergodic_estimator(&sys, &gauss(0.3), &Coordinate(0), &cfg).unwrap();
        cfg.execution = Execution::Parallel;
        let b = ergodic_estimator(&sys, &gauss(0.3), &Coordinate(0), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples_used, 40_000);
    }

    #[test]
    fn uncentralized_differs_by_the_identity() {
        let sys = ar1(0.5, 1.0);
        let mut cfg = ErgodicConfig::new(6, 20_000, 0.4, 1);
        let c = ergodic_estimator(&sys, &gauss(0.3), &Coordinate(0), &cfg).unwrap();
        cfg.centralize = false;
        let u = ergodic_estimator(&sys, &gauss(0.3), &Coordinate(0), &cfg).unwrap();
        assert_eq!(u.dphi_avg, c.diagnostics.uncentralized_dphi);
        assert!(u.se_dphi > c.se_dphi);
    }

    #[test]
    fn short_orbits_shrink_the_default_batch() {
        let r = ergodic_estimator(&ar1(0.5, 1.0), &gauss(0.3), &Coordinate(0), &ErgodicConfig::new(30, 1000, 0.0, 2)).unwrap();
        assert_eq!(r.diagnostics.batch_len, Some(100));
        assert_eq!(r.diagnostics.batches, Some(10));
    }
}
