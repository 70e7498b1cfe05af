//! Spread–skill series, rank histograms and the across-trial
//! bias–variance decomposition.

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::filters::{Analysis, AssimilationRun};

/// Per-window spread, RMSE and their ratio at `k_w = wL`.
#[derive(Debug, Clone)]
pub struct WindowSeries {
    pub k: Vec<usize>,
    pub sigma: Vec<f64>,
    pub rmse: Vec<f64>,
    /// `None` where `RMSE_w = 0`.
    pub gamma: Vec<Option<f64>>,
    pub gamma_bar: f64,
    pub rho: f64,
    /// Root-mean-square spread over windows.
    pub spread: f64,
    /// Root-mean-square error over windows.
    pub rmse_total: f64,
}

fn spread_of(a: &Analysis) -> f64 {
    (a.ensemble.covariance_trace() / a.ensemble.state_dim() as f64).sqrt()
}

fn rmse_of(a: &Analysis) -> f64 {
    let n = a.truth.len() as f64;
    ((a.ensemble.mean() - &a.truth).norm_squared() / n).sqrt()
}

/// Pearson correlation. `None` if either series is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n != y.len() || n < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Window-endpoint diagnostics from already-selected analyses.
pub fn window_series_from(endpoints: &[&Analysis]) -> Result<WindowSeries> {
    if endpoints.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "spread-skill correlation needs at least 2 windows, got {}",
            endpoints.len()
        )));
    }
    let k: Vec<usize> = endpoints.iter().map(|a| a.k).collect();
    let sigma: Vec<f64> = endpoints.iter().map(|a| spread_of(a)).collect();
    let rmse: Vec<f64> = endpoints.iter().map(|a| rmse_of(a)).collect();
    let gamma: Vec<Option<f64>> = sigma
        .iter()
        .zip(&rmse)
        .map(|(&s, &e)| (e > 0.0).then(|| s / e))
        .collect();

    let defined: Vec<usize> = (0..gamma.len()).filter(|&i| gamma[i].is_some()).collect();
    let gamma_bar = if defined.is_empty() {
        f64::NAN
    } else {
        defined.iter().map(|&i| gamma[i].unwrap()).sum::<f64>() / defined.len() as f64
    };
    let s_def: Vec<f64> = defined.iter().map(|&i| sigma[i]).collect();
    let r_def: Vec<f64> = defined.iter().map(|&i| rmse[i]).collect();
    let rho = pearson(&s_def, &r_def).unwrap_or(f64::NAN);

    let w = sigma.len() as f64;
    let spread = (sigma.iter().map(|s| s * s).sum::<f64>() / w).sqrt();
    let rmse_total = (rmse.iter().map(|e| e * e).sum::<f64>() / w).sqrt();
    Ok(WindowSeries {
        k,
        sigma,
        rmse,
        gamma,
        gamma_bar,
        rho,
        spread,
        rmse_total,
    })
}

pub fn window_series(run: &AssimilationRun) -> Result<WindowSeries> {
    window_series_from(&run.endpoint_analyses())
}

/// Rank of `truth` among `members`: `#{members below} + 1`, with each tied
/// member counted as below on a fair coin.
pub fn rank_of<R: Rng + ?Sized>(
    members: impl Iterator<Item = f64>,
    truth: f64,
    rng: &mut R,
) -> usize {
    let mut below = 0;
    for v in members {
        if v < truth || (v == truth && rng.random::<bool>()) {
            below += 1;
        }
    }
    below + 1
}

/// Rank-histogram counts, `N + 1` bins (bin `b` holds rank `b + 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct RankHistogram {
    pub counts: Vec<u64>,
}

impl RankHistogram {
    pub fn new(ensemble_size: usize) -> Self {
        Self {
            counts: vec![0; ensemble_size + 1],
        }
    }

    pub fn from_counts(counts: Vec<u64>) -> Self {
        Self { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn record(&mut self, rank: usize) {
        self.counts[rank - 1] += 1;
    }

    pub fn merge(&mut self, other: &RankHistogram) {
        assert_eq!(self.counts.len(), other.counts.len(), "bin counts differ");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn stats(&self) -> Result<RankStats> {
        rank_stats(&self.counts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankStats {
    pub chi2: f64,
    pub flatness: f64,
}

/// χ² against uniform counts and flatness (population std of bin
/// frequencies over the uniform frequency).
pub fn rank_stats(counts: &[u64]) -> Result<RankStats> {
    let total: u64 = counts.iter().sum();
    if total == 0 || counts.is_empty() {
        return Err(Error::InsufficientData("rank histogram is empty".into()));
    }
    let bins = counts.len() as f64;
    let expected = total as f64 / bins;
    let chi2 = counts
        .iter()
        .map(|&o| (o as f64 - expected).powi(2) / expected)
        .sum();
    let f_bar = 1.0 / bins;
    let var = counts
        .iter()
        .map(|&o| (o as f64 / total as f64 - f_bar).powi(2))
        .sum::<f64>()
        / bins;
    Ok(RankStats {
        chi2,
        flatness: var.sqrt() / f_bar,
    })
}

/// Ranks of the truth for every component at each native analysis time.
pub fn ranks<R: Rng + ?Sized>(run: &AssimilationRun, rng: &mut R) -> RankHistogram {
    rank_histograms(run, rng).0
}

/// `(native, endpoints)`: ranks at every native analysis time, and the
/// subset at window endpoints `k_w`. Both come from one pass over `rng`.
pub fn rank_histograms<R: Rng + ?Sized>(
    run: &AssimilationRun,
    rng: &mut R,
) -> (RankHistogram, RankHistogram) {
    let size = run.analyses.first().map_or(0, |a| a.ensemble.size());
    let mut all = RankHistogram::new(size);
    let mut ends = RankHistogram::new(size);
    for a in &run.analyses {
        let members = a.ensemble.members();
        let endpoint = a.k % run.window_len == 0;
        for i in 0..a.truth.len() {
            let r = rank_of(members.row(i).iter().copied(), a.truth[i], rng);
            all.record(r);
            if endpoint {
                ends.record(r);
            }
        }
    }
    (all, ends)
}

/// Across-trial bias–variance decomposition of the analysis mean at each
/// window endpoint, as squared norms divided by the state dimension.
#[derive(Debug, Clone)]
pub struct BiasVarianceTable {
    pub bias2: Vec<f64>,
    pub variance: Vec<f64>,
    pub mse: Vec<f64>,
    pub mean_bias2: f64,
    pub mean_variance: f64,
    pub mean_mse: f64,
}

impl BiasVarianceTable {
    pub fn bias_fraction(&self) -> f64 {
        self.mean_bias2 / self.mean_mse
    }
}

/// `trials[t][w]` are the window-endpoint analysis means of trial `t`;
/// `truth[w]` the matching true states (shared by all trials).
pub fn bias_variance_from_means(
    trials: &[Vec<DVector<f64>>],
    truth: &[DVector<f64>],
) -> Result<BiasVarianceTable> {
    let n_trial = trials.len();
    if n_trial < 2 {
        return Err(Error::InsufficientData(format!(
            "bias-variance needs at least 2 trials, got {n_trial}"
        )));
    }
    let windows = truth.len();
    if trials.iter().any(|t| t.len() != windows) {
        return Err(Error::DimensionMismatch(
            "trials have different window counts".into(),
        ));
    }
    let mut bias2 = Vec::with_capacity(windows);
    let mut variance = Vec::with_capacity(windows);
    let mut mse = Vec::with_capacity(windows);
    for w in 0..windows {
        let mut across = DVector::zeros(truth[w].len());
        for t in trials {
            across += &t[w];
        }
        across /= n_trial as f64;
        let n = truth[w].len() as f64;
        let b = (&across - &truth[w]).norm_squared() / n;
        let v = trials
            .iter()
            .map(|t| (&t[w] - &across).norm_squared())
            .sum::<f64>()
            / (n_trial as f64 * n);
        bias2.push(b);
        variance.push(v);
        mse.push(b + v);
    }
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(BiasVarianceTable {
        mean_bias2: avg(&bias2),
        mean_variance: avg(&variance),
        mean_mse: avg(&mse),
        bias2,
        variance,
        mse,
    })
}

/// Decomposition over runs that share truth and observations.
pub fn bias_variance(runs: &[&AssimilationRun]) -> Result<BiasVarianceTable> {
    let Some(first) = runs.first() else {
        return Err(Error::InsufficientData("no runs".into()));
    };
    let truth: Vec<DVector<f64>> = first
        .endpoint_analyses()
        .iter()
        .map(|a| a.truth.clone())
        .collect();
    let means: Vec<Vec<DVector<f64>>> = runs
        .iter()
        .map(|r| {
            r.endpoint_analyses()
                .iter()
                .map(|a| a.ensemble.mean())
                .collect()
        })
        .collect();
    for r in runs {
        if r.endpoint_analyses()
            .iter()
            .zip(&truth)
            .any(|(a, t)| a.truth != *t)
        {
            return Err(Error::InvalidInput(
                "runs do not share the same truth".into(),
            ));
        }
    }
    bias_variance_from_means(&means, &truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::EnsembleMatrix;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn analysis(k: usize, members: &[f64], truth: f64) -> Analysis {
        Analysis {
            k,
            ensemble: EnsembleMatrix::new(DMatrix::from_row_slice(1, members.len(), members))
                .unwrap(),
            truth: DVector::from_vec(vec![truth]),
        }
    }

    #[test]
    fn hand_spread_and_rmse() {
        let a = analysis(5, &[0.0, 2.0], 0.0);
        let b = analysis(10, &[0.0, 4.0], 1.0);
        let s = window_series_from(&[&a, &b]).unwrap();
        assert!((s.sigma[0] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(s.rmse[0], 1.0);
        assert!((s.gamma[0].unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(s.k, vec![5, 10]);
    }

    #[test]
    fn zero_error_leaves_gamma_undefined() {
        let a = analysis(5, &[1.0, 1.0], 1.0);
        let b = analysis(10, &[0.0, 2.0], 0.0);
        let c = analysis(15, &[0.0, 4.0], 0.0);
        let s = window_series_from(&[&a, &b, &c]).unwrap();
        assert_eq!(s.sigma[0], 0.0);
        assert_eq!(s.rmse[0], 0.0);
        assert!(s.gamma[0].is_none());
        assert!(s.gamma_bar.is_finite());
    }

    #[test]
    fn single_window_is_rejected() {
        let a = analysis(5, &[0.0, 2.0], 0.0);
        assert!(window_series_from(&[&a]).is_err());
    }

    #[test]
    fn rms_aggregates() {
        let a = analysis(5, &[0.0, 2.0], 0.0); // σ²=2, e²=1
        let b = analysis(10, &[0.0, 4.0], 0.0); // σ²=8, e²=4
        let s = window_series_from(&[&a, &b]).unwrap();
        assert!((s.spread - 5f64.sqrt()).abs() < 1e-14);
        assert!((s.rmse_total - 2.5f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn pearson_affine_invariance() {
        let x = [1.0, 2.5, 0.3, 4.0, 2.2];
        let y = [0.9, 3.0, 0.1, 3.5, 2.9];
        let r = pearson(&x, &y).unwrap();
        let x2: Vec<f64> = x.iter().map(|v| 3.0 * v - 7.0).collect();
        let y2: Vec<f64> = y.iter().map(|v| 0.5 * v + 1.0).collect();
        assert!((pearson(&x2, &y2).unwrap() - r).abs() < 1e-12);
        assert!(pearson(&[1.0, 1.0], &[2.0, 3.0]).is_none());
    }

    #[test]
    fn rank_extremes_and_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(rank_of([1.0, 2.0, 3.0].into_iter(), 0.0, &mut rng), 1);
        assert_eq!(rank_of([1.0, 2.0, 3.0].into_iter(), 9.0, &mut rng), 4);
        assert_eq!(rank_of([1.0, 2.0, 3.0].into_iter(), 2.5, &mut rng), 3);
    }

    #[test]
    fn ties_are_split_fairly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut hist = RankHistogram::new(1);
        for _ in 0..20_000 {
            hist.record(rank_of([5.0].into_iter(), 5.0, &mut rng));
        }
        let frac = hist.counts[0] as f64 / 20_000.0;
        assert!((frac - 0.5).abs() < 0.02);
    }

    #[test]
    fn uniform_counts_are_flat() {
        let s = rank_stats(&[7, 7, 7, 7]).unwrap();
        assert_eq!(s.chi2, 0.0);
        assert_eq!(s.flatness, 0.0);
    }

    #[test]
    fn two_bin_hand_case() {
        let s = rank_stats(&[3, 1]).unwrap();
        assert!((s.chi2 - 1.0).abs() < 1e-15);
        assert!((s.flatness - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_histogram_is_error() {
        assert!(rank_stats(&[0, 0, 0]).is_err());
    }

    #[test]
    fn identical_trials_have_no_variance() {
        let truth = vec![DVector::from_vec(vec![1.0, 2.0]); 3];
        let t = vec![DVector::from_vec(vec![1.5, 2.0]); 3];
        let table = bias_variance_from_means(&[t.clone(), t], &truth).unwrap();
        assert!(table.variance.iter().all(|&v| v == 0.0));
        assert_eq!(table.mse, table.bias2);
        // (0.5² + 0²) / 2
        assert!((table.bias2[0] - 0.125).abs() < 1e-15);
    }

    #[test]
    fn symmetric_trials_have_no_bias() {
        let delta = 0.7;
        let truth = vec![DVector::from_vec(vec![3.0])];
        let plus = vec![DVector::from_vec(vec![3.0 + delta])];
        let minus = vec![DVector::from_vec(vec![3.0 - delta])];
        let table = bias_variance_from_means(&[plus, minus], &truth).unwrap();
        assert!(table.bias2[0].abs() < 1e-15);
        assert!((table.variance[0] - delta * delta).abs() < 1e-12);
    }

    #[test]
    fn single_trial_is_rejected() {
        let truth = vec![DVector::from_vec(vec![0.0])];
        assert!(bias_variance_from_means(std::slice::from_ref(&truth), &truth).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn chi2_and_flatness_vanish_only_when_uniform(
                counts in proptest::collection::vec(0u64..50, 2..12)
            ) {
                prop_assume!(counts.iter().sum::<u64>() > 0);
                let s = rank_stats(&counts).unwrap();
                prop_assert!(s.chi2 >= 0.0 && s.flatness >= 0.0);
                let uniform = counts.iter().all(|&c| c == counts[0]);
                prop_assert_eq!(uniform, s.chi2 == 0.0);
                prop_assert_eq!(uniform, s.flatness < 1e-15);
            }

            #[test]
            fn mse_identity(
                vals in proptest::collection::vec(-10.0f64..10.0, 12),
                truth in proptest::collection::vec(-10.0f64..10.0, 2),
            ) {
                // 3 trials x 2 windows x 2 components
                let trials: Vec<Vec<DVector<f64>>> = (0..3)
                    .map(|t| (0..2).map(|w| DVector::from_vec(vec![vals[t * 4 + w * 2], vals[t * 4 + w * 2 + 1]])).collect())
                    .collect();
                let truth = vec![DVector::from_vec(truth.clone()); 2];
                let table = bias_variance_from_means(&trials, &truth).unwrap();
                for w in 0..2 {
                    let direct = trials.iter().map(|t| (&t[w] - &truth[w]).norm_squared()).sum::<f64>() / 6.0;
                    prop_assert!((table.mse[w] - direct).abs() <= 1e-10 * direct.max(1.0));
                    prop_assert!(table.bias2[w] >= 0.0 && table.variance[w] >= 0.0);
                }
            }
        }
    }
}
