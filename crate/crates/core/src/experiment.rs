//! Batch experiments producing CSV: parameter sweeps, convergence studies
//! and stationary densities.
//!
//! Every CSV starts with `#` comment lines holding the fully resolved
//! configuration as JSON. Feeding that JSON back as a config file
//! reproduces the numeric columns bit for bit.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    ensemble_average, ergodic_estimator, finite_time_estimator, visit_orbit, CorrectionTerms, ErgodicConfig,
    EstimatorResult, FiniteTimeConfig,
};
use crate::models::{build_ar1, build_network, build_tent, Model, NetworkForm, NoiseMode, TentMap, LAYERS};
use crate::oracle::{stationary_density, DEFAULT_GRID, DEFAULT_TOL};
use crate::parallel::{map_units, try_map_units, Execution};
use crate::rng::derive_seed;
use crate::stats::{log_log_slope, StreamingMoments};

pub const SEED_ENV: &str = "KR_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Tent,
    Network,
    Ar1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Finite,
    Ergodic,
}

macro_rules! from_str_via_serde {
    ($($t:ty),*) => {$(
        impl FromStr for $t {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
                    .map_err(|e| Error::InvalidConfig(format!("{s:?}: {e}")))
            }
        }
    )*};
}

from_str_via_serde!(ModelKind, EstimatorKind, NoiseMode, NetworkForm, Execution);

/// `count` equally spaced values from `start` to `stop` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaSweep {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl GammaSweep {
    pub fn single(gamma: f64) -> Self {
        GammaSweep { start: gamma, stop: gamma, count: 1 }
    }

    pub fn values(&self) -> Vec<f64> {
        if self.count <= 1 {
            return vec![self.start];
        }
        let step = (self.stop - self.start) / (self.count - 1) as f64;
        (0..self.count).map(|i| self.start + step * i as f64).collect()
    }
}

/// A partially specified experiment; absent fields fall back to the next
/// layer (flags, then `KR_SEED`, then the config file, then model defaults).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: Option<ModelKind>,
    pub estimator: Option<EstimatorKind>,
    pub sigma: Option<f64>,
    /// AR(1) coefficient.
    pub ar1_a: Option<f64>,
    pub noise_mode: Option<NoiseMode>,
    pub form: Option<NetworkForm>,
    /// Finite-time horizon `T`.
    pub horizon: Option<usize>,
    /// Finite-time ensemble size.
    pub paths: Option<usize>,
    pub window: Option<usize>,
    pub orbit_len: Option<usize>,
    pub spin_up: Option<usize>,
    pub batch_len: Option<usize>,
    pub segments: Option<usize>,
    pub centralize: Option<bool>,
    pub gamma: Option<GammaSweep>,
    pub seed: Option<u64>,
    pub repetitions: Option<usize>,
    pub execution: Option<Execution>,
    /// Record wall-clock time per row; off keeps outputs reproducible.
    pub timing: Option<bool>,
}

macro_rules! overlay_fields {
    ($base:expr, $over:expr; $($f:ident),*) => {
        ExperimentConfig { $($f: $over.$f.clone().or($base.$f),)* }
    };
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Fields set in `over` replace those of `self`.
    pub fn overlay(self, over: &ExperimentConfig) -> ExperimentConfig {
        overlay_fields!(self, over; model, estimator, sigma, ar1_a, noise_mode, form, horizon, paths,
            window, orbit_len, spin_up, batch_len, segments, centralize, gamma, seed, repetitions,
            execution, timing)
    }

    /// Fills the remaining gaps with the model's defaults and validates.
    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let model = self.model.unwrap_or_default();
        let (estimator, sigma, window, orbit_len, gamma) = match model {
            ModelKind::Tent => (EstimatorKind::Ergodic, 0.1, TentMap::DEFAULT_WINDOW, 1_000_000, 3.0),
            ModelKind::Ar1 => (EstimatorKind::Ergodic, 0.3, 30, 1_000_000, 0.0),
            ModelKind::Network => (EstimatorKind::Finite, 1.5, 7, 1_000_000, 0.0),
        };
        let r = ResolvedConfig {
            model,
            estimator: self.estimator.unwrap_or(estimator),
            sigma: self.sigma.unwrap_or(sigma),
            ar1_a: self.ar1_a.unwrap_or(0.5),
            noise_mode: self.noise_mode.unwrap_or_default(),
            form: self.form.unwrap_or_default(),
            horizon: self.horizon.unwrap_or(LAYERS),
            paths: self.paths.unwrap_or(10_000),
            window: self.window.unwrap_or(window),
            orbit_len: self.orbit_len.unwrap_or(orbit_len),
            spin_up: self.spin_up.unwrap_or(crate::estimators::DEFAULT_SPIN_UP),
            batch_len: self.batch_len,
            segments: self.segments.unwrap_or(1),
            centralize: self.centralize.unwrap_or(true),
            gamma: self.gamma.unwrap_or(GammaSweep::single(gamma)),
            seed: self.seed.unwrap_or(0),
            repetitions: self.repetitions.unwrap_or(1),
            execution: self.execution.unwrap_or_default(),
            timing: self.timing.unwrap_or(false),
        };
        r.validate()?;
        Ok(r)
    }
}

/// Reads `KR_SEED`; unset or empty means no override.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|e| Error::InvalidConfig(format!("{SEED_ENV}={v:?}: {e}"))),
        _ => Ok(None),
    }
}

/// Precedence: `flags` > `env_seed` > `file` > defaults.
pub fn resolve_layers(
    file: Option<ExperimentConfig>,
    env_seed: Option<u64>,
    flags: &ExperimentConfig,
) -> Result<ResolvedConfig> {
    let env = ExperimentConfig { seed: env_seed, ..Default::default() };
    file.unwrap_or_default().overlay(&env).overlay(flags).resolve()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub model: ModelKind,
    pub estimator: EstimatorKind,
    pub sigma: f64,
    pub ar1_a: f64,
    pub noise_mode: NoiseMode,
    pub form: NetworkForm,
    pub horizon: usize,
    pub paths: usize,
    pub window: usize,
    pub orbit_len: usize,
    pub spin_up: usize,
    pub batch_len: Option<usize>,
    pub segments: usize,
    pub centralize: bool,
    pub gamma: GammaSweep,
    pub seed: u64,
    pub repetitions: usize,
    pub execution: Execution,
    pub timing: bool,
}

impl ResolvedConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let deterministic = self.model == ModelKind::Network && self.noise_mode == NoiseMode::None;
        if !deterministic && !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma = {} must be positive", self.sigma));
        }
        if self.model == ModelKind::Network {
            if self.estimator == EstimatorKind::Ergodic {
                return Err(Error::TimeInhomogeneous);
            }
            if self.horizon > LAYERS {
                return bad(format!("the network has {LAYERS} layers, horizon {} is too long", self.horizon));
            }
        } else if self.noise_mode == NoiseMode::None {
            return bad("noise_mode = none is only available for the network".into());
        }
        if self.model == ModelKind::Ar1 && !(self.ar1_a.abs() < 1.0) {
            return Err(Error::NotContracting(self.ar1_a.abs()));
        }
        if self.repetitions < 1 {
            return bad("repetitions must be at least 1".into());
        }
        if self.gamma.count < 1 || !self.gamma.start.is_finite() || !self.gamma.stop.is_finite() {
            return bad("gamma sweep needs finite bounds and at least one point".into());
        }
        match self.estimator {
            EstimatorKind::Finite => self.finite_config(self.gamma.start, 0).validate(),
            EstimatorKind::Ergodic => self.ergodic_config(self.gamma.start, 0).validate(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Seed of repetition `rep`, shared by every gamma of a sweep.
    pub fn rep_seed(&self, rep: usize) -> u64 {
        derive_seed(self.seed, rep as u64)
    }

    pub fn build_model(&self, gamma: f64) -> Result<Model> {
        match self.model {
            ModelKind::Tent => build_tent(gamma, self.sigma),
            ModelKind::Ar1 => build_ar1(self.ar1_a, gamma, self.sigma),
            ModelKind::Network => build_network(gamma, self.sigma, self.noise_mode, self.form),
        }
    }

    pub fn finite_config(&self, gamma: f64, rep: usize) -> FiniteTimeConfig {
        FiniteTimeConfig {
            horizon: self.horizon,
            paths: self.paths,
            gamma,
            seed: self.rep_seed(rep),
            execution: self.execution,
        }
    }

    pub fn ergodic_config(&self, gamma: f64, rep: usize) -> ErgodicConfig {
        ErgodicConfig {
            window: self.window,
            orbit_len: self.orbit_len,
            spin_up: self.spin_up,
            gamma,
            seed: self.rep_seed(rep),
            batch_len: self.batch_len,
            segments: self.segments,
            centralize: self.centralize,
            start: None,
            execution: self.execution,
        }
    }

    /// Whether rows carry derivatives; the noise-free network only has means.
    pub fn has_derivative(&self) -> bool {
        !(self.model == ModelKind::Network && self.noise_mode == NoiseMode::None)
    }

    /// One estimate at `gamma` for repetition `rep`.
    pub fn run_point(&self, gamma: f64, rep: usize) -> Result<PointResult> {
        let m = self.build_model(gamma)?;
        if !self.has_derivative() {
            let (phi, se) = ensemble_average(
                &m.system,
                &m.noise,
                m.observable.as_ref(),
                m.initial.as_ref(),
                &self.finite_config(gamma, rep),
            )?;
            return Ok(PointResult { phi_avg: phi, se_phi: se, estimate: None });
        }
        let r = match self.estimator {
            EstimatorKind::Finite => finite_time_estimator(
                &m.system,
                &m.noise,
                m.observable.as_ref(),
                m.initial.as_ref(),
                &self.finite_config(gamma, rep),
            )?,
            EstimatorKind::Ergodic => {
                ergodic_estimator(&m.system, &m.noise, m.observable.as_ref(), &self.ergodic_config(gamma, rep))?
            }
        };
        Ok(PointResult { phi_avg: r.phi_avg, se_phi: r.se_phi, estimate: Some(r) })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub phi_avg: f64,
    pub se_phi: f64,
    /// Absent for deterministic baselines.
    pub estimate: Option<EstimatorResult>,
}

impl PointResult {
    pub fn corrections(&self) -> Option<&CorrectionTerms> {
        self.estimate.as_ref().and_then(|e| e.correction_terms.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub gamma: f64,
    pub rep: usize,
    pub point: PointResult,
    pub wall_time_seconds: Option<f64>,
}

pub const SWEEP_COLUMNS: &str = "gamma,rep,phi_avg,dphi_avg,se_phi,se_dphi,delta_phi_term,initial_score_term,total,se_total,wall_time_seconds";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl SweepRow {
    pub fn to_csv(&self) -> String {
        let e = self.point.estimate.as_ref();
        let c = self.point.corrections();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.gamma,
            self.rep,
            self.point.phi_avg,
            opt(e.map(|e| e.dphi_avg)),
            self.point.se_phi,
            opt(e.map(|e| e.se_dphi)),
            opt(c.map(|c| c.delta_phi_term)),
            opt(c.map(|c| c.initial_score_term)),
            opt(e.map(|e| e.total_derivative())),
            opt(e.map(|e| e.se_total())),
            opt(self.wall_time_seconds),
        )
    }

    pub fn total(&self) -> Option<f64> {
        self.point.estimate.as_ref().map(|e| e.total_derivative())
    }

    pub fn se_total(&self) -> Option<f64> {
        self.point.estimate.as_ref().map(|e| e.se_total())
    }
}

fn header(out: &mut dyn Write, kind: &str, config_json: &str) -> Result<()> {
    writeln!(out, "# kr {kind}")?;
    writeln!(out, "# config: {config_json}")?;
    Ok(())
}

fn fail<T>(out: &mut dyn Write, e: Error) -> Result<T> {
    let _ = writeln!(out, "# ERROR: {e}");
    let _ = out.flush();
    Err(e)
}

/// One row per `(gamma, repetition)`, streamed to `out` as it is computed.
///
/// On failure a `# ERROR` line is written before the error is returned.
pub fn run_sweep(cfg: &ResolvedConfig, out: &mut dyn Write) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    header(out, "sweep", &cfg.to_json())?;
    writeln!(out, "{SWEEP_COLUMNS}")?;
    let mut rows = Vec::new();
    for gamma in cfg.gamma.values() {
        for rep in 0..cfg.repetitions {
            let t0 = Instant::now();
            let point = match cfg.run_point(gamma, rep) {
                Ok(p) => p,
                Err(e) => return fail(out, e.at_gamma(gamma)),
            };
            let row = SweepRow {
                gamma,
                rep,
                point,
                wall_time_seconds: cfg.timing.then(|| t0.elapsed().as_secs_f64()),
            };
            writeln!(out, "{}", row.to_csv())?;
            log::info!("gamma = {gamma}, rep = {rep}: phi_avg = {}", row.point.phi_avg);
            rows.push(row);
        }
    }
    out.flush()?;
    Ok(rows)
}

/// `(gamma, phi, se_phi, total, se_total)`.
pub type SweepPoint = (f64, f64, f64, Option<f64>, Option<f64>);

/// Per-gamma means over repetitions.
pub fn aggregate_sweep(rows: &[SweepRow]) -> Vec<SweepPoint> {
    let mut out: Vec<(f64, Vec<&SweepRow>)> = Vec::new();
    for r in rows {
        match out.last_mut() {
            Some((g, v)) if *g == r.gamma => v.push(r),
            _ => out.push((r.gamma, vec![r])),
        }
    }
    out.into_iter()
        .map(|(g, v)| {
            let n = v.len() as f64;
            let phi = v.iter().map(|r| r.point.phi_avg).sum::<f64>() / n;
            let se_phi = v.iter().map(|r| r.point.se_phi.powi(2)).sum::<f64>().sqrt() / n;
            let totals: Option<Vec<(f64, f64)>> = v.iter().map(|r| r.total().zip(r.se_total())).collect();
            let (total, se_total) = match totals {
                Some(t) => (
                    Some(t.iter().map(|p| p.0).sum::<f64>() / n),
                    Some(t.iter().map(|p| p.1 * p.1).sum::<f64>().sqrt() / n),
                ),
                None => (None, None),
            };
            (g, phi, se_phi, total, se_total)
        })
        .collect()
}

/// Compares the secant of the means over each gamma interval with the
/// average of the estimated derivatives at its two ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentCheck {
    /// Interval midpoint.
    pub gamma: f64,
    pub derivative: f64,
    pub secant: f64,
    pub combined_se: f64,
}

impl TangentCheck {
    pub fn consistent(&self, sigmas: f64) -> bool {
        (self.derivative - self.secant).abs() <= sigmas * self.combined_se
    }
}

pub fn tangent_checks(rows: &[SweepRow]) -> Vec<TangentCheck> {
    let agg = aggregate_sweep(rows);
    agg.windows(2)
        .filter_map(|w| {
            let (g0, p0, s0, d0, e0) = w[0];
            let (g1, p1, s1, d1, e1) = w[1];
            let span = g1 - g0;
            let se_secant = (s0 * s0 + s1 * s1).sqrt() / span;
            let se_mean = 0.5 * (e0?.powi(2) + e1?.powi(2)).sqrt();
            Some(TangentCheck {
                gamma: 0.5 * (g0 + g1),
                derivative: 0.5 * (d0? + d1?),
                secant: (p1 - p0) / span,
                combined_se: (se_mean * se_mean + se_secant * se_secant).sqrt(),
            })
        })
        .collect()
}

/// `sum |phi_a - phi_b| dgamma` over two sweeps on the same gamma grid
/// (trapezoid rule).
pub fn sweep_l1_deviation(a: &[(f64, f64)], b: &[(f64, f64)]) -> Result<f64> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.0 != y.0) {
        return Err(Error::InvalidConfig("sweeps use different gamma grids".into()));
    }
    let d: Vec<(f64, f64)> = a.iter().zip(b).map(|(x, y)| (x.0, (x.1 - y.1).abs())).collect();
    if d.len() == 1 {
        return Ok(d[0].1);
    }
    Ok(d.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0)).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvergenceAxis {
    /// Vary `L` (orbit length, or ensemble size for the finite estimator).
    L,
    /// Vary the window `W` (ergodic only).
    W,
}

impl ConvergenceAxis {
    pub fn default_values(self) -> Vec<usize> {
        match self {
            ConvergenceAxis::L => vec![1_000, 10_000, 100_000, 1_000_000],
            ConvergenceAxis::W => vec![1, 2, 4, 8, 16, 32, 64],
        }
    }

    fn name(self) -> &'static str {
        match self {
            ConvergenceAxis::L => "L",
            ConvergenceAxis::W => "W",
        }
    }
}

impl FromStr for ConvergenceAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L" | "l" => Ok(ConvergenceAxis::L),
            "W" | "w" => Ok(ConvergenceAxis::W),
            _ => Err(Error::InvalidConfig(format!("unknown axis {s:?}; expected L or W"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub value: usize,
    pub mean: f64,
    pub std: f64,
    pub repetitions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStudy {
    pub axis: ConvergenceAxis,
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `log std` against `log value`.
    pub slope: f64,
}

/// Repeats the estimator at the first gamma of the sweep for every axis
/// value; repetitions run as parallel units.
pub fn run_convergence_study(
    cfg: &ResolvedConfig,
    axis: ConvergenceAxis,
    values: &[usize],
    out: &mut dyn Write,
) -> Result<ConvergenceStudy> {
    cfg.validate()?;
    if cfg.repetitions < 2 {
        return Err(Error::InvalidConfig("a convergence study needs at least 2 repetitions".into()));
    }
    if cfg.repetitions < 10 {
        log::warn!("only {} repetitions per point; the std estimates will be rough", cfg.repetitions);
    }
    if axis == ConvergenceAxis::W && cfg.estimator != EstimatorKind::Ergodic {
        return Err(Error::InvalidConfig("the W axis needs the ergodic estimator".into()));
    }
    if values.len() < 2 || values.contains(&0) {
        return Err(Error::InvalidConfig("need at least two positive axis values".into()));
    }
    let gamma = cfg.gamma.start;
    header(out, "converge", &cfg.to_json())?;
    writeln!(out, "# axis: {}", axis.name())?;
    writeln!(out, "value,mean_dphi,std_dphi,repetitions")?;
    let mut rows = Vec::new();
    for &v in values {
        let mut point = cfg.clone();
        match (axis, cfg.estimator) {
            (ConvergenceAxis::L, EstimatorKind::Ergodic) => point.orbit_len = v,
            (ConvergenceAxis::L, EstimatorKind::Finite) => point.paths = v,
            (ConvergenceAxis::W, _) => point.window = v,
        }
        point.execution = Execution::Sequential;
        let estimates = try_map_units(cfg.execution, cfg.repetitions, |rep| {
            point
                .run_point(gamma, rep)
                .map(|p| p.estimate.map(|e| e.dphi_avg).unwrap_or(f64::NAN))
        });
        let estimates = match estimates {
            Ok(e) => e,
            Err(e) => return fail(out, e.at_gamma(gamma)),
        };
        let m: StreamingMoments = estimates.iter().copied().collect();
        let row = ConvergenceRow { value: v, mean: m.mean(), std: m.std(), repetitions: cfg.repetitions };
        writeln!(out, "{},{},{},{}", row.value, row.mean, row.std, row.repetitions)?;
        rows.push(row);
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.value as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.std).collect();
    let slope = log_log_slope(&xs, &ys);
    writeln!(out, "# log_log_slope: {slope}")?;
    out.flush()?;
    Ok(ConvergenceStudy { axis, rows, slope })
}

/// Orbit histograms of the tent map for several noise scales, each paired
/// with the grid-oracle stationary density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityConfig {
    pub gamma: f64,
    pub sigmas: Vec<f64>,
    /// Small noise scale whose histogram stands in for the noise-free limit.
    pub reference_sigma: f64,
    pub orbit_len: usize,
    pub spin_up: usize,
    pub bins: usize,
    pub grid: usize,
    pub seed: u64,
    #[serde(default)]
    pub execution: Execution,
}

impl Default for DensityConfig {
    fn default() -> Self {
        DensityConfig {
            gamma: 3.0,
            sigmas: vec![0.05, 0.1, 0.2],
            reference_sigma: 0.02,
            orbit_len: 10_000_000,
            spin_up: crate::estimators::DEFAULT_SPIN_UP,
            bins: 256,
            grid: DEFAULT_GRID,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityReport {
    pub config: DensityConfig,
    /// Histogram densities (mean 1 over the bins), one per sigma.
    pub histograms: Vec<Vec<f64>>,
    pub reference: Vec<f64>,
    /// Grid-oracle densities averaged down to the histogram bins.
    pub grid: Vec<Vec<f64>>,
    pub hist_vs_grid: Vec<f64>,
    /// Distance of each histogram to the reference histogram.
    pub to_reference: Vec<f64>,
    /// Distance of each histogram to the histogram of the smallest sigma.
    pub to_smallest: Vec<f64>,
}

/// `integral |a - b|` for densities sampled on the same uniform bins.
pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "densities on different bins");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Histogram density of the tent orbit.
pub fn tent_histogram(gamma: f64, sigma: f64, orbit_len: usize, spin_up: usize, bins: usize, seed: u64) -> Result<Vec<f64>> {
    let m = build_tent(gamma, sigma)?;
    let mut counts = vec![0u64; bins];
    visit_orbit(&m.system, &m.noise, gamma, spin_up, orbit_len, seed, |x| {
        let b = ((x[0] * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
        Ok(())
    })?;
    let scale = bins as f64 / orbit_len as f64;
    Ok(counts.into_iter().map(|c| c as f64 * scale).collect())
}

pub fn run_density(cfg: &DensityConfig, out: &mut dyn Write) -> Result<DensityReport> {
    if cfg.sigmas.is_empty() || cfg.bins == 0 || !cfg.grid.is_multiple_of(cfg.bins) || cfg.orbit_len == 0 {
        return Err(Error::InvalidConfig(
            "density needs sigmas, a positive orbit length, and a grid size divisible by the bin count".into(),
        ));
    }
    let config_json = serde_json::to_string(cfg)?;
    header(out, "density", &config_json)?;
    let mut all = cfg.sigmas.clone();
    all.push(cfg.reference_sigma);
    let hist = try_map_units(cfg.execution, all.len(), |i| {
        tent_histogram(cfg.gamma, all[i], cfg.orbit_len, cfg.spin_up, cfg.bins, derive_seed(cfg.seed, i as u64))
    });
    let mut hist = match hist {
        Ok(h) => h,
        Err(e) => return fail(out, e),
    };
    let reference = hist.pop().expect("reference histogram");
    let grid = map_units(cfg.execution, cfg.sigmas.len(), |i| {
        stationary_density(&|x| TentMap::apply(cfg.gamma, x), cfg.sigmas[i], cfg.grid, DEFAULT_TOL)
            .map(|d| d.coarsen(cfg.bins).weights().to_vec())
    });
    let grid = match grid.into_iter().collect::<Result<Vec<_>>>() {
        Ok(g) => g,
        Err(e) => return fail(out, e),
    };
    let smallest = cfg
        .sigmas
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty");
    let hist_vs_grid: Vec<f64> = hist.iter().zip(&grid).map(|(h, g)| l1_distance(h, g)).collect();
    let to_reference: Vec<f64> = hist.iter().map(|h| l1_distance(h, &reference)).collect();
    let to_smallest: Vec<f64> = hist.iter().map(|h| l1_distance(h, &hist[smallest])).collect();

    let mut cols = String::from("bin_center");
    for s in &cfg.sigmas {
        let _ = write!(cols, ",hist_sigma_{s},grid_sigma_{s}");
    }
    let _ = write!(cols, ",hist_reference_sigma_{}", cfg.reference_sigma);
    writeln!(out, "{cols}")?;
    for b in 0..cfg.bins {
        let mut line = format!("{}", (b as f64 + 0.5) / cfg.bins as f64);
        for (h, g) in hist.iter().zip(&grid) {
            let _ = write!(line, ",{},{}", h[b], g[b]);
        }
        let _ = write!(line, ",{}", reference[b]);
        writeln!(out, "{line}")?;
    }
    for (i, s) in cfg.sigmas.iter().enumerate() {
        writeln!(
            out,
            "# sigma {s}: l1_hist_vs_grid {}, l1_to_reference {}, l1_to_smallest_sigma {}",
            hist_vs_grid[i], to_reference[i], to_smallest[i]
        )?;
    }
    out.flush()?;
    Ok(DensityReport {
        config: cfg.clone(),
        histograms: hist,
        reference,
        grid,
        hist_vs_grid,
        to_reference,
        to_smallest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_sweep_values() {
        assert_eq!(GammaSweep::single(3.0).values(), vec![3.0]);
        let v = GammaSweep { start: -0.2, stop: 0.2, count: 5 }.values();
        assert_eq!(v.len(), 5);
        assert!((v[4] - 0.2).abs() < 1e-15 && (v[2]).abs() < 1e-15);
    }

    #[test]
    fn precedence_flags_env_file_defaults() {
        let file = ExperimentConfig { seed: Some(1), sigma: Some(0.2), ..Default::default() };
        let r = resolve_layers(Some(file.clone()), None, &ExperimentConfig::default()).unwrap();
        assert_eq!((r.seed, r.sigma, r.window), (1, 0.2, 7));
        let r = resolve_layers(Some(file.clone()), Some(2), &ExperimentConfig::default()).unwrap();
        assert_eq!(r.seed, 2);
        let flags = ExperimentConfig { seed: Some(3), ..Default::default() };
        let r = resolve_layers(Some(file), Some(2), &flags).unwrap();
        assert_eq!((r.seed, r.sigma), (3, 0.2));
    }

    #[test]
    fn model_defaults() {
        let r = ExperimentConfig::default().resolve().unwrap();
        assert_eq!((r.model, r.estimator, r.sigma, r.window), (ModelKind::Tent, EstimatorKind::Ergodic, 0.1, 7));
        assert_eq!(r.gamma.values(), vec![3.0]);
        let n = ExperimentConfig { model: Some(ModelKind::Network), ..Default::default() }.resolve().unwrap();
        assert_eq!((n.estimator, n.horizon, n.sigma), (EstimatorKind::Finite, 50, 1.5));
    }

    #[test]
    fn invalid_configs() {
        let n = ExperimentConfig {
            model: Some(ModelKind::Network),
            estimator: Some(EstimatorKind::Ergodic),
            ..Default::default()
        };
        assert!(matches!(n.resolve(), Err(Error::TimeInhomogeneous)));
        let t = ExperimentConfig { sigma: Some(0.0), ..Default::default() };
        assert!(t.resolve().is_err());
        let a = ExperimentConfig { model: Some(ModelKind::Ar1), ar1_a: Some(1.5), ..Default::default() };
        assert!(matches!(a.resolve(), Err(Error::NotContracting(_))));
        assert!(ExperimentConfig::from_json(r#"{"modle": "tent"}"#).is_err());
    }

    #[test]
    fn resolved_config_round_trips_as_a_file() {
        let r = ExperimentConfig { model: Some(ModelKind::Ar1), seed: Some(9), ..Default::default() }
            .resolve()
            .unwrap();
        let again = ExperimentConfig::from_json(&r.to_json()).unwrap().resolve().unwrap();
        assert_eq!(r, again);
    }

    fn small_ar1() -> ResolvedConfig {
        ExperimentConfig {
            model: Some(ModelKind::Ar1),
            orbit_len: Some(20_000),
            window: Some(10),
            gamma: Some(GammaSweep { start: 0.0, stop: 1.0, count: 3 }),
            ..Default::default()
        }
        .resolve()
        .unwrap()
    }

    #[test]
    fn sweep_csv_layout() {
        let mut buf = Vec::new();
        let rows = run_sweep(&small_ar1(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# kr sweep"));
        assert!(lines[1].starts_with("# config: {"));
        assert_eq!(lines[2], SWEEP_COLUMNS);
        assert_eq!(lines.len(), 6);
        assert_eq!(rows.len(), 3);
        assert_eq!(lines[3].split(',').count(), 11);
        assert!(lines[3].ends_with(','), "wall time is empty without timing");
    }

    #[test]
    fn sweep_reproduces_from_its_header() {
        let mut first = Vec::new();
        run_sweep(&small_ar1(), &mut first).unwrap();
        let text = String::from_utf8(first.clone()).unwrap();
        let json = text.lines().nth(1).unwrap().trim_start_matches("# config: ");
        let cfg = ExperimentConfig::from_json(json).unwrap().resolve().unwrap();
        let mut second = Vec::new();
        run_sweep(&cfg, &mut second).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn failing_sweep_ends_with_error_marker() {
        let mut cfg = small_ar1();
        cfg.batch_len = Some(10_000);
        let mut buf = Vec::new();
        let err = run_sweep(&cfg, &mut buf).unwrap_err();
        assert!(matches!(err, Error::AtGamma { .. }));
        let text = String::from_utf8(buf).unwrap();
        assert!(text.trim_end().lines().last().unwrap().starts_with("# ERROR"));
    }

    #[test]
    fn ar1_sweep_is_tangent_consistent() {
        let mut buf = Vec::new();
        let rows = run_sweep(&small_ar1(), &mut buf).unwrap();
        let checks = tangent_checks(&rows);
        assert_eq!(checks.len(), rows.len() - 1);
        for c in &checks {
            assert!(c.consistent(3.0), "{c:?}");
        }
    }

    #[test]
    fn l1_deviation_of_sweeps() {
        let a = [(0.0, 1.0), (1.0, 1.0)];
        let b = [(0.0, 0.0), (1.0, 2.0)];
        assert!((sweep_l1_deviation(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        assert!(sweep_l1_deviation(&a, &b[..1]).is_err());
    }

    #[test]
    fn convergence_study_rows_and_slope() {
        let mut cfg = small_ar1();
        cfg.gamma = GammaSweep::single(0.0);
        cfg.repetitions = 4;
        let mut buf = Vec::new();
        let s = run_convergence_study(&cfg, ConvergenceAxis::L, &[2_000, 20_000], &mut buf).unwrap();
        assert_eq!(s.rows.len(), 2);
        assert!(s.slope.is_finite());
        let text = String::from_utf8(buf).unwrap();
        assert!(text.trim_end().lines().last().unwrap().starts_with("# log_log_slope: "));
        let finite = ExperimentConfig { estimator: Some(EstimatorKind::Finite), ..Default::default() }
            .resolve()
            .unwrap();
        assert!(run_convergence_study(&finite, ConvergenceAxis::W, &[1, 2], &mut Vec::new()).is_err());
    }

    #[test]
    fn density_histograms_have_unit_mass() {
        let cfg = DensityConfig { orbit_len: 100_000, grid: 1024, sigmas: vec![0.1, 0.2], ..Default::default() };
        let mut buf = Vec::new();
        let r = run_density(&cfg, &mut buf).unwrap();
        for h in r.histograms.iter().chain(std::iter::once(&r.reference)) {
            assert!((h.iter().sum::<f64>() / h.len() as f64 - 1.0).abs() < 1e-12);
        }
        assert_eq!(r.to_smallest[0], 0.0);
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 257);
    }

    #[test]
    fn enum_parsing() {
        assert_eq!("network".parse::<ModelKind>().unwrap(), ModelKind::Network);
        assert_eq!("Ergodic".parse::<EstimatorKind>().unwrap(), EstimatorKind::Ergodic);
        assert_eq!("full".parse::<NoiseMode>().unwrap(), NoiseMode::Full);
        assert_eq!("original".parse::<NetworkForm>().unwrap(), NetworkForm::Original);
        assert_eq!("sequential".parse::<Execution>().unwrap(), Execution::Sequential);
        assert!("bogus".parse::<ModelKind>().is_err());
    }

    #[test]
    fn axis_parsing() {
        assert_eq!("L".parse::<ConvergenceAxis>().unwrap(), ConvergenceAxis::L);
        assert_eq!("w".parse::<ConvergenceAxis>().unwrap(), ConvergenceAxis::W);
        assert!("x".parse::<ConvergenceAxis>().is_err());
    }
}
