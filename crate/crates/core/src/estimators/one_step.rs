use crate::error::{Error, Result};
use crate::noise::{NoiseModel, NoiseSample};
use crate::parallel::{try_map_units, Execution};
use crate::rng::stream;
use crate::stats::StreamingMoments;
use crate::system::{InitialDistribution, Observable, ParamMap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneStepEstimate {
    pub value: f64,
    pub se: f64,
}

/// Monte-Carlo estimate of `d/dgamma E[Phi(f_gamma(x_0) + y_1)]` for
/// `x_0 ~ q`: `-(1/L) sum_l Phi(x_{l,1}) df(x_{l,0}) . (dp/p)(y_{l,1})`.
#[allow(clippy::too_many_arguments)]
pub fn one_step_response(
    q: &dyn InitialDistribution,
    map: &dyn ParamMap,
    noise: &dyn NoiseModel,
    obs: &dyn Observable,
    gamma: f64,
    samples: usize,
    seed: u64,
    execution: Execution,
) -> Result<OneStepEstimate> {
    if samples < 2 {
        return Err(Error::InvalidConfig("at least two samples are needed".into()));
    }
    let dim = noise.state_dimension();
    let terms = try_map_units(execution, samples, |l| -> Result<f64> {
        let mut rng = stream(seed, l as u64);
        let mut x0 = vec![0.0; dim];
        q.sample(gamma, &mut rng, &mut x0);
        let mut z = vec![0.0; dim];
        let mut df = vec![0.0; dim];
        let mut y = NoiseSample::zeros(noise.raw_dimension(), dim);
        map.apply(gamma, &x0, &mut z);
        noise.sample_into(gamma, &z, &mut rng, &mut y);
        map.param_derivative(gamma, &x0, &mut df);
        let x1: Vec<f64> = z.iter().zip(&y.embedded).map(|(a, b)| a + b).collect();
        let v = -obs.eval(gamma, &x1) * noise.score_term(gamma, &x0, &df, &y);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite { what: "one-step integrand", step: 1, path: Some(l) })
        }
    })?;
    let m: StreamingMoments = terms.into_iter().collect();
    Ok(OneStepEstimate {
        value: m.mean(),
        se: m.standard_error(),
    })
}
