//! Kernel-differentiation estimators of linear response.
//!
//! Both estimators accumulate the per-step score terms
//! `I_{m+1} = df(x_m) . (dp/p)(y_{m+1})` along sampled dynamics and never
//! differentiate the map along trajectories.

mod corrections;
mod ergodic;
mod finite_time;
mod one_step;

use serde::{Deserialize, Serialize};

pub use corrections::{chart_corrections, corrections_from_paths};
pub use ergodic::{ergodic_estimator, orbit_score_moments, visit_orbit, ErgodicConfig, DEFAULT_SPIN_UP};
pub use finite_time::{
    ensemble_average, finite_time_estimator, step_score_moments, FiniteTimeConfig, PathSummary,
};
pub(crate) use finite_time::simulate_path;
pub use one_step::{one_step_response, OneStepEstimate};

/// The per-step scalar `I_m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreTerm(pub f64);

/// The two extra terms of a parameter-dependent chart: `E[dPhi/dgamma]`
/// and the initial-law score term `E[(Phi - Phi_avg) * (dh_0/dgamma)/h_0]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionTerms {
    pub delta_phi_term: f64,
    pub initial_score_term: f64,
    /// Standard error of main term plus both corrections, from per-path totals.
    pub se_total: f64,
}

/// Whether chart corrections could be computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CorrectionStatus {
    /// Neither the observable nor the initial law depends on the parameter.
    NotApplicable,
    Applied,
    /// Only one of the two hooks is present.
    Unavailable(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    /// The estimate without subtracting `Phi_avg`.
    pub uncentralized_dphi: f64,
    pub corrections: CorrectionStatus,
    /// Batch length behind the ergodic standard errors.
    pub batch_len: Option<usize>,
    pub batches: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorResult {
    pub phi_avg: f64,
    /// The main kernel-differentiation term.
    pub dphi_avg: f64,
    pub se_phi: f64,
    pub se_dphi: f64,
    pub samples_used: usize,
    pub correction_terms: Option<CorrectionTerms>,
    pub diagnostics: Diagnostics,
}

impl EstimatorResult {
    /// Main term plus chart corrections, when present.
    pub fn total_derivative(&self) -> f64 {
        match &self.correction_terms {
            Some(c) => self.dphi_avg + c.delta_phi_term + c.initial_score_term,
            None => self.dphi_avg,
        }
    }

    pub fn se_total(&self) -> f64 {
        self.correction_terms
            .as_ref()
            .map_or(self.se_dphi, |c| c.se_total)
    }
}
