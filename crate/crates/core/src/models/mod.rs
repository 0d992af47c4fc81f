//! Benchmark systems packaged with their noise, observable and initial law.

mod ar1;
mod network;
mod tent;

use std::sync::Arc;

pub use ar1::{build_ar1, Ar1Layer, LinearGaussianAR1};
pub use network::{
    backprop_growth, build_network, j0_csv, parse_matrix_csv, ChaoticTanhNetwork, ChartInitial,
    ChartObservable, NetworkForm, NetworkLayer, NoiseMode, GAIN, J0, LAYERS, NEURONS,
};
pub use tent::{build_tent, TentLayer, TentMap};

use crate::noise::NoiseSchedule;
use crate::system::{InitialDistribution, Observable, SystemSpec};

/// A ready-to-run problem.
#[derive(Clone)]
pub struct Model {
    /// Parameter value the model was built for.
    pub gamma: f64,
    pub system: SystemSpec,
    pub noise: NoiseSchedule,
    pub observable: Arc<dyn Observable>,
    pub initial: Arc<dyn InitialDistribution>,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("gamma", &self.gamma)
            .field("system", &self.system)
            .field("noise", &self.noise)
            .finish_non_exhaustive()
    }
}
