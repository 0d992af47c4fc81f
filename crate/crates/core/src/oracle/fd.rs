use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::simulate_path;
use crate::noise::NoiseSchedule;
use crate::parallel::{try_map_units, Execution};
use crate::rng::stream;
use crate::stats::StreamingMoments;
use crate::system::{InitialDistribution, Observable, SystemSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdOracleConfig {
    pub delta_gamma: f64,
    pub paths: usize,
    pub seed: u64,
    #[serde(default)]
    pub execution: Execution,
}

impl Default for FdOracleConfig {
    fn default() -> Self {
        FdOracleConfig {
            delta_gamma: 1e-2,
            paths: 100_000,
            seed: 0x5eed,
            execution: Execution::default(),
        }
    }
}

/// `(E_{gamma+d}[Phi(x_T)] - E_{gamma-d}[Phi(x_T)]) / 2d` and its standard
/// error, where path `l` reuses the same random stream at both parameter
/// values.
#[allow(clippy::too_many_arguments)]
pub fn fd_ensemble_response(
    sys: &SystemSpec,
    noise: &NoiseSchedule,
    obs: &dyn Observable,
    init: &dyn InitialDistribution,
    horizon: usize,
    gamma: f64,
    cfg: &FdOracleConfig,
) -> Result<(f64, f64)> {
    if !(cfg.delta_gamma > 0.0) || cfg.paths < 2 {
        return Err(Error::InvalidConfig("finite differences need a positive step and two paths".into()));
    }
    sys.check_horizon(horizon)?;
    let d = cfg.delta_gamma;
    let diffs = try_map_units(cfg.execution, cfg.paths, |l| -> Result<f64> {
        let run = |g: f64| {
            let mut rng = stream(cfg.seed, l as u64);
            simulate_path(sys, noise, obs, init, g, horizon, &mut rng, false, None)
                .map(|p| p.phi)
                .map_err(|e| e.with_path(l).at_gamma(g))
        };
        Ok((run(gamma + d)? - run(gamma - d)?) / (2.0 * d))
    })?;
    let m: StreamingMoments = diffs.into_iter().collect();
    Ok((m.mean(), m.standard_error()))
}
