use serde::{Deserialize, Serialize};

use super::corrections::corrections_from_paths;
use super::{CorrectionStatus, Diagnostics, EstimatorResult};
use crate::error::{Error, Result};
use crate::noise::{NoiseSample, NoiseSchedule};
use crate::parallel::{map_units, try_map_units, Execution};
use crate::rng::{stream, PathRng};
use crate::stats::{CompensatedSum, StreamingMoments};
use crate::system::{InitialDistribution, Observable, SystemSpec};

/// Ensemble of `paths` independent sample paths over `horizon` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiniteTimeConfig {
    pub horizon: usize,
    pub paths: usize,
    pub gamma: f64,
    pub seed: u64,
    #[serde(default)]
    pub execution: Execution,
}

impl FiniteTimeConfig {
    pub fn new(horizon: usize, paths: usize, gamma: f64, seed: u64) -> Self {
        FiniteTimeConfig {
            horizon,
            paths,
            gamma,
            seed,
            execution: Execution::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::InvalidConfig("horizon T must be at least 1".into()));
        }
        if self.paths < 2 {
            return Err(Error::InvalidConfig("at least two sample paths are needed".into()));
        }
        if !self.gamma.is_finite() {
            return Err(Error::InvalidConfig(format!("gamma = {}", self.gamma)));
        }
        Ok(())
    }
}

/// What one path leaves behind; the trajectory itself is discarded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSummary {
    /// `Phi(x_T)`.
    pub phi: f64,
    /// `S = -sum_m I_m`.
    pub score_sum: f64,
    /// `dPhi/dgamma (x_T)`.
    pub delta_phi: Option<f64>,
    /// `(dh_0/dgamma)/h_0 (x_0)`.
    pub initial_score: Option<f64>,
}

struct PathBuffers {
    x: Vec<f64>,
    z: Vec<f64>,
    next: Vec<f64>,
    df: Vec<f64>,
    y: NoiseSample,
}

impl PathBuffers {
    fn new(dimension: usize, raw: usize) -> Self {
        PathBuffers {
            x: vec![0.0; dimension],
            z: vec![0.0; dimension],
            next: vec![0.0; dimension],
            df: vec![0.0; dimension],
            y: NoiseSample::zeros(raw, dimension),
        }
    }
}

/// Runs one path. `step_terms`, when given, receives `I_1..I_T`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn simulate_path(
    sys: &SystemSpec,
    noise: &NoiseSchedule,
    obs: &dyn Observable,
    init: &dyn InitialDistribution,
    gamma: f64,
    horizon: usize,
    rng: &mut PathRng,
    with_scores: bool,
    mut step_terms: Option<&mut [f64]>,
) -> Result<PathSummary> {
    let mut b = PathBuffers::new(sys.dimension(), noise.at(0).raw_dimension());
    init.sample(gamma, rng, &mut b.x);
    if b.x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "initial state", step: 0, path: None });
    }
    let initial_score = init.score_gamma(gamma, &b.x);
    let mut score = CompensatedSum::default();
    for m in 0..horizon {
        let map = sys.map_at(m);
        let law = noise.at(m);
        if b.y.raw.len() != law.raw_dimension() {
            b.y = NoiseSample::zeros(law.raw_dimension(), sys.dimension());
        }
        map.apply(gamma, &b.x, &mut b.z);
        law.sample_into(gamma, &b.z, rng, &mut b.y);
        if with_scores {
            map.param_derivative(gamma, &b.x, &mut b.df);
            let term = law.score_term(gamma, &b.x, &b.df, &b.y);
            if !term.is_finite() {
                return Err(Error::NonFinite { what: "score term", step: m + 1, path: None });
            }
            score.add(term);
            if let Some(out) = step_terms.as_deref_mut() {
                out[m] = term;
            }
        }
        sys.finish_step(m, &b.z, &b.y.embedded, &mut b.next)?;
        std::mem::swap(&mut b.x, &mut b.next);
    }
    let phi = obs.eval(gamma, &b.x);
    if !phi.is_finite() {
        return Err(Error::NonFinite { what: "observable", step: horizon, path: None });
    }
    Ok(PathSummary {
        phi,
        score_sum: -score.value(),
        delta_phi: obs.param_derivative(gamma, &b.x),
        initial_score,
    })
}

fn check_inputs(sys: &SystemSpec, noise: &NoiseSchedule, cfg: &FiniteTimeConfig) -> Result<()> {
    cfg.validate()?;
    sys.check_horizon(cfg.horizon)?;
    noise.validate(sys.dimension(), Some(cfg.horizon))
}

/// Centralized finite-horizon response
/// `dPhi_avg = (1/L) sum_l S_l (Phi(x_{l,T}) - Phi_avg)`, `S_l = -sum_m I_{l,m}`,
/// with `Phi_avg` the ensemble mean at the same `gamma`.
///
/// Paths are independent units with streams `(seed, path index)`. When both
/// the observable and the initial law depend on `gamma`, the chart
/// corrections are added in [`EstimatorResult::correction_terms`].
pub fn finite_time_estimator(
    sys: &SystemSpec,
    noise: &NoiseSchedule,
    obs: &dyn Observable,
    init: &dyn InitialDistribution,
    cfg: &FiniteTimeConfig,
) -> Result<EstimatorResult> {
    check_inputs(sys, noise, cfg)?;
    let paths = try_map_units(cfg.execution, cfg.paths, |l| {
        let mut rng = stream(cfg.seed, l as u64);
        simulate_path(sys, noise, obs, init, cfg.gamma, cfg.horizon, &mut rng, true, None)
            .map_err(|e| e.with_path(l))
    })?;

    let n = paths.len() as f64;
    let mut phi_sum = CompensatedSum::default();
    for p in &paths {
        phi_sum.add(p.phi);
    }
    let phi_avg = phi_sum.value() / n;
    let phi_moments: StreamingMoments = paths.iter().map(|p| p.phi).collect();
    let main: StreamingMoments = paths.iter().map(|p| p.score_sum * (p.phi - phi_avg)).collect();
    let uncentralized = paths.iter().map(|p| p.score_sum * p.phi).sum::<f64>() / n;

    let (correction_terms, status) = match corrections_from_paths(&paths, phi_avg) {
        Ok(c) => (Some(c), CorrectionStatus::Applied),
        Err(Error::CorrectionsUnavailable(why)) => {
            let any_hook = paths
                .first()
                .is_some_and(|p| p.delta_phi.is_some() || p.initial_score.is_some());
            if any_hook {
                log::warn!("chart corrections unavailable: {why}");
                (None, CorrectionStatus::Unavailable(why))
            } else {
                (None, CorrectionStatus::NotApplicable)
            }
        }
        Err(e) => return Err(e),
    };

    Ok(EstimatorResult {
        phi_avg,
        dphi_avg: main.mean(),
        se_phi: phi_moments.standard_error(),
        se_dphi: main.standard_error(),
        samples_used: paths.len(),
        correction_terms,
        diagnostics: Diagnostics {
            uncentralized_dphi: uncentralized,
            corrections: status,
            batch_len: None,
            batches: None,
        },
    })
}

/// Ensemble mean of `Phi(x_T)` and its standard error, with no derivative.
///
/// Accepts noise-free schedules; this is how deterministic baselines are
/// computed.
pub fn ensemble_average(
    sys: &SystemSpec,
    noise: &NoiseSchedule,
    obs: &dyn Observable,
    init: &dyn InitialDistribution,
    cfg: &FiniteTimeConfig,
) -> Result<(f64, f64)> {
    cfg.validate()?;
    sys.check_horizon(cfg.horizon)?;
    let phis = try_map_units(cfg.execution, cfg.paths, |l| {
        let mut rng = stream(cfg.seed, l as u64);
        simulate_path(sys, noise, obs, init, cfg.gamma, cfg.horizon, &mut rng, false, None)
            .map(|p| p.phi)
            .map_err(|e| e.with_path(l))
    })?;
    let m: StreamingMoments = phis.into_iter().collect();
    Ok((m.mean(), m.standard_error()))
}

const MOMENT_CHUNK: usize = 1024;

/// Per-step moments of the score terms `I_{l,m}` across paths, `m = 1..=T`.
///
/// Free centralization says each has zero mean.
pub fn step_score_moments(
    sys: &SystemSpec,
    noise: &NoiseSchedule,
    init: &dyn InitialDistribution,
    cfg: &FiniteTimeConfig,
) -> Result<Vec<StreamingMoments>> {
    check_inputs(sys, noise, cfg)?;
    let chunks = cfg.paths.div_ceil(MOMENT_CHUNK);
    let obs = crate::system::Coordinate(0);
    let per_chunk = map_units(cfg.execution, chunks, |c| -> Result<Vec<StreamingMoments>> {
        let mut moments = vec![StreamingMoments::default(); cfg.horizon];
        let mut terms = vec![0.0; cfg.horizon];
        for l in c * MOMENT_CHUNK..((c + 1) * MOMENT_CHUNK).min(cfg.paths) {
            let mut rng = stream(cfg.seed, l as u64);
            simulate_path(sys, noise, &obs, init, cfg.gamma, cfg.horizon, &mut rng, true, Some(&mut terms))
                .map_err(|e| e.with_path(l))?;
            for (m, t) in moments.iter_mut().zip(&terms) {
                m.push(*t);
            }
        }
        Ok(moments)
    });
    let mut total = vec![StreamingMoments::default(); cfg.horizon];
    for chunk in per_chunk {
        for (t, c) in total.iter_mut().zip(chunk?) {
            *t = t.merge(&c);
        }
    }
    Ok(total)
}
