use super::{CorrectionTerms, PathSummary};
use crate::error::{Error, Result};
use crate::stats::StreamingMoments;
use crate::system::{InitialDistribution, Observable, State};

/// Chart corrections from per-path summaries.
///
/// `delta_phi_term = mean(dPhi/dgamma (x_T))` and
/// `initial_score_term = mean((Phi(x_T) - phi_avg) * score_0(x_0))`. The
/// initial-law score has zero mean, so subtracting `phi_avg` changes only
/// the variance. `se_total` covers the main term plus both corrections.
pub fn corrections_from_paths(paths: &[PathSummary], phi_avg: f64) -> Result<CorrectionTerms> {
    let mut delta = StreamingMoments::default();
    let mut init = StreamingMoments::default();
    let mut total = StreamingMoments::default();
    for p in paths {
        let d = p
            .delta_phi
            .ok_or(Error::CorrectionsUnavailable("observable has no parameter derivative"))?;
        let s = p
            .initial_score
            .ok_or(Error::CorrectionsUnavailable("initial law has no parameter score"))?;
        let centered = p.phi - phi_avg;
        let i = centered * s;
        delta.push(d);
        init.push(i);
        total.push(p.score_sum * centered + d + i);
    }
    if paths.is_empty() {
        return Err(Error::CorrectionsUnavailable("no sample paths"));
    }
    Ok(CorrectionTerms {
        delta_phi_term: delta.mean(),
        initial_score_term: init.mean(),
        se_total: total.standard_error(),
    })
}

/// Chart corrections from path endpoints `(x_0, x_T)`.
///
/// Fails with [`Error::CorrectionsUnavailable`] unless both the observable's
/// parameter derivative and the initial law's score are provided.
pub fn chart_corrections(
    observable: &dyn Observable,
    init: &dyn InitialDistribution,
    gamma: f64,
    endpoints: &[(State, State)],
) -> Result<CorrectionTerms> {
    if endpoints.is_empty() {
        return Err(Error::CorrectionsUnavailable("no sample paths"));
    }
    let paths: Vec<PathSummary> = endpoints
        .iter()
        .map(|(x0, xt)| PathSummary {
            phi: observable.eval(gamma, xt.coords()),
            score_sum: 0.0,
            delta_phi: observable.param_derivative(gamma, xt.coords()),
            initial_score: init.score_gamma(gamma, x0.coords()),
        })
        .collect();
    let phi_avg = paths.iter().map(|p| p.phi).sum::<f64>() / paths.len() as f64;
    corrections_from_paths(&paths, phi_avg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{Coordinate, PointMass};

    #[test]
    fn missing_hooks_are_reported_not_zeroed() {
        let ends = vec![(State::zeros(1), State::zeros(1)); 3];
        let err = chart_corrections(&Coordinate(0), &PointMass(vec![0.0]), 0.0, &ends).unwrap_err();
        assert!(matches!(err, Error::CorrectionsUnavailable(_)));
    }

    #[test]
    fn constant_observable_has_zero_initial_term() {
        let paths: Vec<PathSummary> = (0..100)
            .map(|i| PathSummary {
                phi: 4.0,
                score_sum: 0.0,
                delta_phi: Some(-9.0),
                initial_score: Some(i as f64 - 50.0),
            })
            .collect();
        let c = corrections_from_paths(&paths, 4.0).unwrap();
        assert_eq!(c.initial_score_term, 0.0);
        assert_eq!(c.delta_phi_term, -9.0);
    }
}
