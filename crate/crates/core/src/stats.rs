//! Streaming statistics used by the estimators.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Minimum number of batches for a batch-means standard error.
pub const MIN_BATCHES: usize = 10;

/// Single-pass count / mean / sum of squared deviations (Welford).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StreamingMoments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl StreamingMoments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Combines two accumulators as if their streams were concatenated (Chan et al.).
    pub fn merge(&self, other: &StreamingMoments) -> StreamingMoments {
        if other.count == 0 {
            return *self;
        }
        if self.count == 0 {
            return *other;
        }
        let n = self.count + other.count;
        let (na, nb) = (self.count as f64, other.count as f64);
        let delta = other.mean - self.mean;
        StreamingMoments {
            count: n,
            mean: self.mean + delta * nb / n as f64,
            m2: self.m2 + other.m2 + delta * delta * na * nb / n as f64,
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased variance; 0 for fewer than two values.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Standard error of the mean for i.i.d. values.
    pub fn standard_error(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.std() / (self.count as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for StreamingMoments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = StreamingMoments::default();
        for x in iter {
            m.push(x);
        }
        m
    }
}

pub fn merge(a: &StreamingMoments, b: &StreamingMoments) -> StreamingMoments {
    a.merge(b)
}

/// Neumaier-compensated sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Standard error from non-overlapping batches of length `batch_len`;
/// a trailing partial batch is ignored.
pub fn batch_se(values: &[f64], batch_len: usize) -> Result<f64> {
    if batch_len == 0 {
        return Err(Error::InvalidConfig("batch length must be positive".into()));
    }
    let means: Vec<f64> = values
        .chunks_exact(batch_len)
        .map(|c| c.iter().sum::<f64>() / batch_len as f64)
        .collect();
    se_of_batch_means(&means)
}

/// `std(batch means) / sqrt(batch count)`.
pub fn se_of_batch_means(means: &[f64]) -> Result<f64> {
    if means.len() < MIN_BATCHES {
        return Err(Error::TooFewBatches {
            batches: means.len(),
            required: MIN_BATCHES,
        });
    }
    let m: StreamingMoments = means.iter().copied().collect();
    Ok(m.standard_error())
}

/// Totals of one pass of a [`LagCrossAccumulator`].
#[derive(Debug, Clone, PartialEq)]
pub struct LagCrossTotals {
    pub window: usize,
    pub orbit_len: usize,
    /// `sum_l I_{l+1} sum_{n=1}^{W} Phi_{n+l}`.
    pub a: f64,
    /// `sum_l I_{l+1}`.
    pub b: f64,
    /// `sum_{l=1}^{L} Phi_l`.
    pub phi_sum: f64,
    pub batch_len: usize,
    /// Per complete batch of `l`: `(A_b, B_b, sum of Phi_l)`.
    pub batches: Vec<(f64, f64, f64)>,
}

impl LagCrossTotals {
    pub fn phi_avg(&self) -> f64 {
        self.phi_sum / self.orbit_len as f64
    }

    /// `-(1/L) sum_n sum_l (Phi_{n+l} - phi_avg) I_{l+1}`.
    pub fn centralized(&self, phi_avg: f64) -> f64 {
        -(self.a - phi_avg * self.window as f64 * self.b) / self.orbit_len as f64
    }

    /// The double sum without subtracting `phi_avg`.
    pub fn uncentralized(&self) -> f64 {
        -self.a / self.orbit_len as f64
    }

    /// Per-batch response estimates, centralized by `phi_avg` when given.
    pub fn batch_responses(&self, phi_avg: Option<f64>) -> Vec<f64> {
        let shift = phi_avg.unwrap_or(0.0) * self.window as f64;
        let n = self.batch_len as f64;
        self.batches.iter().map(|(a, b, _)| -(a - shift * b) / n).collect()
    }

    pub fn batch_phi_means(&self) -> Vec<f64> {
        let n = self.batch_len as f64;
        self.batches.iter().map(|(_, _, p)| p / n).collect()
    }

    /// Sums totals of independent orbit segments.
    pub fn combine(parts: &[LagCrossTotals]) -> Option<LagCrossTotals> {
        let first = parts.first()?;
        let mut a = CompensatedSum::default();
        let mut b = CompensatedSum::default();
        let mut phi = CompensatedSum::default();
        let mut batches = Vec::new();
        let mut orbit_len = 0;
        for p in parts {
            assert_eq!(p.window, first.window, "segments must share the window");
            assert_eq!(p.batch_len, first.batch_len, "segments must share the batch length");
            a.add(p.a);
            b.add(p.b);
            phi.add(p.phi_sum);
            orbit_len += p.orbit_len;
            batches.extend_from_slice(&p.batches);
        }
        Some(LagCrossTotals {
            window: first.window,
            orbit_len,
            a: a.value(),
            b: b.value(),
            phi_sum: phi.value(),
            batch_len: first.batch_len,
            batches,
        })
    }
}

#[derive(Debug, Clone, Default)]
struct BatchState {
    a: CompensatedSum,
    b: CompensatedSum,
    windows: usize,
}

/// Single-pass evaluation of the windowed correlation sum
/// `sum_{n=1}^{W} sum_{l=1}^{L} Phi_{n+l} I_{l+1}` over an orbit of `W + L` steps.
///
/// Feed `(I_m, Phi_m)` for `m = 1, ..., W + L` in order. The last `W` score
/// terms stay in a ring buffer, each with a running sum of the `Phi` values
/// seen since it arrived (its own step included); a term retires into the
/// totals once its window holds `W` values.
#[derive(Debug, Clone)]
pub struct LagCrossAccumulator {
    window: usize,
    orbit_len: usize,
    batch_len: usize,
    pushed: usize,
    open: VecDeque<(f64, f64)>,
    a: CompensatedSum,
    b: CompensatedSum,
    phi_sum: CompensatedSum,
    batch: BatchState,
    phi_batch: CompensatedSum,
    phi_batch_count: usize,
    phi_batches: Vec<f64>,
    batches: Vec<(f64, f64)>,
}

impl LagCrossAccumulator {
    pub fn new(window: usize, orbit_len: usize, batch_len: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::InvalidConfig("window W must be at least 1".into()));
        }
        if window >= orbit_len {
            return Err(Error::WindowTooLarge { window, orbit_len });
        }
        if batch_len == 0 {
            return Err(Error::InvalidConfig("batch length must be positive".into()));
        }
        Ok(LagCrossAccumulator {
            window,
            orbit_len,
            batch_len,
            pushed: 0,
            open: VecDeque::with_capacity(window + 1),
            a: CompensatedSum::default(),
            b: CompensatedSum::default(),
            phi_sum: CompensatedSum::default(),
            batch: BatchState::default(),
            phi_batch: CompensatedSum::default(),
            phi_batch_count: 0,
            phi_batches: Vec::new(),
            batches: Vec::new(),
        })
    }

    /// Number of `(I, Phi)` pairs the pass needs: `W + L`.
    pub fn required_steps(&self) -> usize {
        self.window + self.orbit_len
    }

    pub fn is_complete(&self) -> bool {
        self.pushed == self.required_steps()
    }

    #[inline]
    pub fn push(&mut self, score_term: f64, phi: f64) {
        debug_assert!(self.pushed < self.required_steps());
        self.pushed += 1;
        let m = self.pushed;
        if m <= self.orbit_len {
            self.phi_sum.add(phi);
            self.phi_batch.add(phi);
            self.phi_batch_count += 1;
            if self.phi_batch_count == self.batch_len {
                self.phi_batches.push(self.phi_batch.value());
                self.phi_batch = CompensatedSum::default();
                self.phi_batch_count = 0;
            }
        }
        if (2..=self.orbit_len + 1).contains(&m) {
            self.open.push_back((score_term, 0.0));
        }
        for (_, s) in self.open.iter_mut() {
            *s += phi;
        }
        // the term opened at step m - W + 1 has now seen W values
        if m > self.window && m - self.window <= self.orbit_len {
            let (i, s) = self.open.pop_front().expect("window bookkeeping");
            self.retire(i, s);
        }
    }

    fn retire(&mut self, score: f64, window_sum: f64) {
        let prod = score * window_sum;
        self.a.add(prod);
        self.b.add(score);
        self.batch.a.add(prod);
        self.batch.b.add(score);
        self.batch.windows += 1;
        if self.batch.windows == self.batch_len {
            self.batches.push((self.batch.a.value(), self.batch.b.value()));
            self.batch = BatchState::default();
        }
    }

    pub fn finish(self) -> LagCrossTotals {
        assert!(
            self.is_complete(),
            "accumulator received {} of {} steps",
            self.pushed,
            self.required_steps()
        );
        let batches = self
            .batches
            .iter()
            .zip(&self.phi_batches)
            .map(|(&(a, b), &p)| (a, b, p))
            .collect();
        LagCrossTotals {
            window: self.window,
            orbit_len: self.orbit_len,
            a: self.a.value(),
            b: self.b.value(),
            phi_sum: self.phi_sum.value(),
            batch_len: self.batch_len,
            batches,
        }
    }
}

/// Sample autocorrelation `rho_0..=rho_max_lag` of a series.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Vec<f64> {
    let n = series.len();
    if n < 2 {
        return vec![1.0];
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let var: f64 = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    if var == 0.0 {
        return vec![1.0];
    }
    (0..=max_lag.min(n - 1))
        .map(|k| {
            series[..n - k]
                .iter()
                .zip(&series[k..])
                .map(|(a, b)| (a - mean) * (b - mean))
                .sum::<f64>()
                / var
        })
        .collect()
}

/// Estimates a correlation decay rate `theta` from `log|rho_k| ~ c + k log theta`,
/// least squares over lags `1..=max_lag`, stopping at the first lag whose
/// autocorrelation falls below `max(0.05, 4/sqrt(n))`, where `|rho_k|` is
/// dominated by its sampling noise.
///
/// Returns `None` when fewer than two lags rise above the noise floor.
pub fn fit_decay_rate(series: &[f64], max_lag: usize) -> Option<f64> {
    let rho = autocorrelation(series, max_lag);
    let floor = (4.0 / (series.len() as f64).sqrt()).max(0.05);
    let points: Vec<(f64, f64)> = rho
        .iter()
        .enumerate()
        .skip(1)
        .take_while(|(_, r)| r.abs() > floor)
        .map(|(k, r)| (k as f64, r.abs().ln()))
        .collect();
    match points.len() {
        0 => None,
        1 => Some(points[0].1.exp().clamp(1e-12, 1.0 - 1e-12)),
        n => {
            let n = n as f64;
            let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
            let my = points.iter().map(|p| p.1).sum::<f64>() / n;
            let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
            let sxx: f64 = points.iter().map(|(x, _)| (x - mx).powi(2)).sum();
            Some((sxy / sxx).exp().clamp(1e-12, 1.0 - 1e-12))
        }
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn naive_double_sum(score: &[f64], phi: &[f64], w: usize, l: usize) -> (f64, f64) {
        // score[m - 1] = I_m, phi[m - 1] = Phi_m
        let phi_avg = phi[..l].iter().sum::<f64>() / l as f64;
        let mut centered = 0.0;
        let mut raw = 0.0;
        for n in 1..=w {
            for ll in 1..=l {
                centered += (phi[n + ll - 1] - phi_avg) * score[ll];
                raw += phi[n + ll - 1] * score[ll];
            }
        }
        (-centered / l as f64, -raw / l as f64)
    }

    fn run(score: &[f64], phi: &[f64], w: usize, l: usize, batch: usize) -> LagCrossTotals {
        let mut acc = LagCrossAccumulator::new(w, l, batch).unwrap();
        for (i, p) in score.iter().zip(phi) {
            acc.push(*i, *p);
        }
        acc.finish()
    }

    #[test]
    fn lag_cross_matches_naive_sum() {
        let mut rng = stream(9, 0);
        for &(w, l) in &[(1, 50), (7, 1000), (30, 10_000), (64, 5000)] {
            let score: Vec<f64> = (0..w + l).map(|_| StandardNormal.sample(&mut rng)).collect();
            let phi: Vec<f64> = (0..w + l).map(|_| rng.random::<f64>()).collect();
            let totals = run(&score, &phi, w, l, 10);
            let (c, u) = naive_double_sum(&score, &phi, w, l);
            let got = totals.centralized(totals.phi_avg());
            assert!((got - c).abs() <= 1e-10 * c.abs().max(1e-300), "W={w}: {got} vs {c}");
            assert!((totals.uncentralized() - u).abs() <= 1e-10 * u.abs());
        }
    }

    #[test]
    fn centralization_identity() {
        let mut rng = stream(10, 0);
        let (w, l) = (5, 400);
        let score: Vec<f64> = (0..w + l).map(|_| StandardNormal.sample(&mut rng)).collect();
        let phi: Vec<f64> = (0..w + l).map(|_| 3.0 + rng.random::<f64>()).collect();
        let t = run(&score, &phi, w, l, 20);
        let avg = t.phi_avg();
        let diff = t.uncentralized() - t.centralized(avg);
        let expected = -avg * w as f64 / l as f64 * score[1..=l].iter().sum::<f64>();
        assert!((diff - expected).abs() < 1e-12 * expected.abs().max(1.0));
    }

    #[test]
    fn batches_partition_the_totals() {
        let mut rng = stream(12, 0);
        let (w, l, bl) = (3, 1000, 50);
        let score: Vec<f64> = (0..w + l).map(|_| StandardNormal.sample(&mut rng)).collect();
        let phi: Vec<f64> = (0..w + l).map(|_| rng.random::<f64>()).collect();
        let t = run(&score, &phi, w, l, bl);
        assert_eq!(t.batches.len(), l / bl);
        let avg = t.phi_avg();
        let mean_batches = t.batch_responses(Some(avg)).iter().sum::<f64>() / t.batches.len() as f64;
        assert!((mean_batches - t.centralized(avg)).abs() < 1e-12);
        let mean_phi = t.batch_phi_means().iter().sum::<f64>() / t.batches.len() as f64;
        assert!((mean_phi - avg).abs() < 1e-12);
    }

    #[test]
    fn segments_combine() {
        let mut rng = stream(13, 0);
        let w = 4;
        let parts: Vec<LagCrossTotals> = (0..3)
            .map(|_| {
                let l = 200;
                let s: Vec<f64> = (0..w + l).map(|_| StandardNormal.sample(&mut rng)).collect();
                let p: Vec<f64> = (0..w + l).map(|_| rng.random::<f64>()).collect();
                run(&s, &p, w, l, 20)
            })
            .collect();
        let all = LagCrossTotals::combine(&parts).unwrap();
        assert_eq!(all.orbit_len, 600);
        assert_eq!(all.batches.len(), 30);
        let a: f64 = parts.iter().map(|p| p.a).sum();
        assert!((all.a - a).abs() < 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn window_must_be_shorter_than_orbit() {
        assert!(matches!(
            LagCrossAccumulator::new(10, 10, 1),
            Err(Error::WindowTooLarge { .. })
        ));
        assert!(LagCrossAccumulator::new(0, 10, 1).is_err());
    }

    #[test]
    fn merge_with_empty_is_identity() {
        let x: StreamingMoments = [1.0, 5.0, 2.5].into_iter().collect();
        assert_eq!(merge(&x, &StreamingMoments::default()), x);
        assert_eq!(merge(&StreamingMoments::default(), &x), x);
    }

    #[test]
    fn merge_of_halves() {
        let a: StreamingMoments = [1.0, 2.0].into_iter().collect();
        let b: StreamingMoments = [3.0, 4.0].into_iter().collect();
        let m = merge(&a, &b);
        assert!((m.mean() - 2.5).abs() < 1e-15);
        assert!((m.variance() - 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn batch_se_of_iid_normals() {
        let mut rng = stream(14, 0);
        let v: Vec<f64> = (0..1_000_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let se = batch_se(&v, 100).unwrap();
        assert!((se / 1e-3 - 1.0).abs() < 0.1, "{se}");
    }

    #[test]
    fn batch_se_of_constant_stream_is_zero() {
        assert_eq!(batch_se(&[2.5; 1000], 10).unwrap(), 0.0);
    }

    #[test]
    fn too_few_batches() {
        assert!(matches!(
            batch_se(&[1.0; 90], 10),
            Err(Error::TooFewBatches { batches: 9, .. })
        ));
    }

    #[test]
    fn decay_rate_of_an_ar1_series() {
        let mut rng = stream(15, 0);
        let mut x = 0.0;
        let series: Vec<f64> = (0..200_000)
            .map(|_| {
                let n: f64 = StandardNormal.sample(&mut rng);
                x = 0.6 * x + n;
                x
            })
            .collect();
        let theta = fit_decay_rate(&series, 50).unwrap();
        assert!((theta - 0.6).abs() < 0.05, "{theta}");
    }

    #[test]
    fn log_log_slope_of_power_law() {
        let xs = [1.0, 10.0, 100.0, 1000.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-0.5)).collect();
        assert!((log_log_slope(&xs, &ys) + 0.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn streaming_matches_two_pass(v in prop::collection::vec(-1e3f64..1e3, 2..200), split in 0usize..200) {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let m: StreamingMoments = v.iter().copied().collect();
            prop_assert!((m.mean() - mean).abs() <= 1e-12 * (1.0 + mean.abs()) * 1e3);
            prop_assert!((m.variance() - var).abs() <= 1e-12 * (1.0 + var));
            let k = split.min(v.len());
            let a: StreamingMoments = v[..k].iter().copied().collect();
            let b: StreamingMoments = v[k..].iter().copied().collect();
            let ab = a.merge(&b);
            let ba = b.merge(&a);
            prop_assert!((ab.mean() - ba.mean()).abs() <= 1e-12 * (1.0 + ab.mean().abs()) * 1e3);
            prop_assert!((ab.variance() - m.variance()).abs() <= 1e-12 * (1.0 + var));
        }
    }
}
