use nalgebra::DVector;

use super::config::ExperimentConfig;
use crate::diagnostics::{
    bias_variance_from_means, rank_histograms, window_series, BiasVarianceTable, RankHistogram,
    RankStats, WindowSeries,
};
use crate::ensemble::initial_ensemble;
use crate::error::{Error, Result};
use crate::filters::{run_filter, Method, QpcaWindowInfo};
use crate::observation::ObsOperator;
use crate::parallel::Execution;
use crate::seeds::{stream_rng, Stream};
use crate::twin::TwinData;

/// Outcome of one method on one trial.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub method: Method,
    pub trial: usize,
    pub series: WindowSeries,
    pub ranks: RankHistogram,
    /// Ranks at window endpoints only.
    pub endpoint_ranks: RankHistogram,
    /// Analysis means at the window endpoints.
    pub endpoint_means: Vec<DVector<f64>>,
    pub qpca: Vec<QpcaWindowInfo>,
    pub obs_hash: String,
    /// Words drawn from the method's perturbation stream.
    pub perturbation_draws: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; `None` with fewer than two values.
    pub std: Option<f64>,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() >= 2)
            .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Self { mean, std }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow {
    pub spread: MeanStd,
    pub rmse: MeanStd,
    pub gamma_bar: MeanStd,
    pub rho: MeanStd,
}

#[derive(Debug, Clone)]
pub struct MethodResult {
    pub method: Method,
    /// Surviving trials in trial order.
    pub trials: Vec<TrialResult>,
    pub diverged: Vec<usize>,
    /// Pooled over surviving trials at native analysis times.
    pub ranks: RankHistogram,
    pub rank_stats: Option<RankStats>,
    /// Pooled at window endpoints, matching sample counts across methods.
    pub endpoint_ranks: RankHistogram,
    pub endpoint_rank_stats: Option<RankStats>,
    /// Needs at least two surviving trials.
    pub bias_variance: Option<BiasVarianceTable>,
    pub summary: Option<SummaryRow>,
}

#[derive(Debug, Clone)]
pub struct ResultBundle {
    pub config: ExperimentConfig,
    pub truth_hash: String,
    /// Observation-stream hash per trial, identical across methods.
    pub obs_hashes: Vec<(usize, String)>,
    pub methods: Vec<MethodResult>,
}

impl ResultBundle {
    pub fn method(&self, method: Method) -> Option<&MethodResult> {
        self.methods.iter().find(|m| m.method == method)
    }
}

fn method_tag(method: Method) -> u8 {
    match method {
        Method::SeqEnkf => 0,
        Method::FourdEnkf => 1,
        Method::QpcaEndcf => 2,
    }
}

fn run_one(
    cfg: &ExperimentConfig,
    twin: &TwinData,
    method: Method,
    trial: usize,
) -> Result<TrialResult> {
    let seed = cfg.base_seed;
    let t = trial as u64;
    let mut init_rng = stream_rng(seed, t, Stream::InitialEnsemble);
    let initial = initial_ensemble(
        &twin.truth[0],
        cfg.ensemble_size,
        cfg.sigma_init,
        &mut init_rng,
    )?;
    let mut pert_rng = stream_rng(seed, t, Stream::Perturbation(method_tag(method)));
    let run = run_filter(&cfg.filter_config(method), twin, initial, &mut pert_rng)?;
    let series = window_series(&run)?;
    let mut tie_rng = stream_rng(seed, t, Stream::RankTies(method_tag(method)));
    let (hist, endpoint_hist) = rank_histograms(&run, &mut tie_rng);
    let endpoint_means = run
        .endpoint_analyses()
        .iter()
        .map(|a| a.ensemble.mean())
        .collect();
    Ok(TrialResult {
        method,
        trial,
        series,
        ranks: hist,
        endpoint_ranks: endpoint_hist,
        endpoint_means,
        qpca: run.qpca,
        obs_hash: run.obs_hash,
        perturbation_draws: pert_rng.draws(),
    })
}

fn aggregate(
    method: Method,
    trials: Vec<TrialResult>,
    diverged: Vec<usize>,
    truth: &[DVector<f64>],
    n_ens: usize,
) -> Result<MethodResult> {
    let mut hist = RankHistogram::new(n_ens);
    let mut ends = RankHistogram::new(n_ens);
    for t in &trials {
        hist.merge(&t.ranks);
        ends.merge(&t.endpoint_ranks);
    }
    let rank_stats = if hist.total() > 0 {
        Some(hist.stats()?)
    } else {
        None
    };
    let endpoint_rank_stats = if ends.total() > 0 {
        Some(ends.stats()?)
    } else {
        None
    };
    let bias_variance = if trials.len() >= 2 {
        let means: Vec<Vec<DVector<f64>>> =
            trials.iter().map(|t| t.endpoint_means.clone()).collect();
        Some(bias_variance_from_means(&means, truth)?)
    } else {
        None
    };
    let summary = (!trials.is_empty()).then(|| {
        let col = |f: fn(&WindowSeries) -> f64| {
            MeanStd::of(&trials.iter().map(|t| f(&t.series)).collect::<Vec<_>>())
        };
        SummaryRow {
            spread: col(|s| s.spread),
            rmse: col(|s| s.rmse_total),
            gamma_bar: col(|s| s.gamma_bar),
            rho: col(|s| s.rho),
        }
    });
    Ok(MethodResult {
        method,
        trials,
        diverged,
        ranks: hist,
        rank_stats,
        endpoint_ranks: ends,
        endpoint_rank_stats,
        bias_variance,
        summary,
    })
}

/// Runs every configured method on every trial. Truth and observations
/// are generated once and shared; trials differ in their initial ensemble,
/// perturbation and tie-breaking streams. Diverged trials are reported on
/// stderr and left out of the aggregates.
pub fn run_experiment(cfg: &ExperimentConfig, execution: Execution) -> Result<ResultBundle> {
    cfg.validate()?;
    let h = ObsOperator::every_other(cfg.model.n, cfg.m)?;
    let mut obs_rng = stream_rng(cfg.base_seed, 0, Stream::TruthObs);
    let twin = TwinData::generate(
        cfg.model,
        h,
        cfg.sigma_obs,
        cfg.total_obs(),
        cfg.spinup_time,
        &mut obs_rng,
    )?;
    let truth: Vec<DVector<f64>> = (1..=cfg.n_windows)
        .map(|w| twin.truth[w * cfg.window_len].clone())
        .collect();

    let tasks: Vec<(Method, usize)> = cfg
        .methods
        .iter()
        .flat_map(|&m| (0..cfg.n_trials).map(move |t| (m, t)))
        .collect();
    let outcomes = execution.map(tasks.len(), |i| {
        let (m, t) = tasks[i];
        run_one(cfg, &twin, m, t)
    });

    let mut per_method: Vec<(Method, Vec<TrialResult>, Vec<usize>)> = cfg
        .methods
        .iter()
        .map(|&m| (m, Vec::new(), Vec::new()))
        .collect();
    for ((method, trial), outcome) in tasks.into_iter().zip(outcomes) {
        let slot = per_method
            .iter_mut()
            .find(|s| s.0 == method)
            .expect("method slot");
        match outcome {
            Ok(r) => slot.1.push(r),
            Err(Error::Divergence { step, magnitude }) => {
                eprintln!("warning: {method} trial {trial} diverged at step {step} (|x| = {magnitude:e}); excluded");
                slot.2.push(trial);
            }
            Err(e) => return Err(e),
        }
    }

    let mut obs_hashes: Vec<(usize, String)> = Vec::new();
    for (_, trials, _) in &per_method {
        for t in trials {
            match obs_hashes.iter().find(|(i, _)| *i == t.trial) {
                Some((_, h)) if *h != t.obs_hash => {
                    return Err(Error::Numerical(format!(
                        "trial {}: methods consumed different observation streams",
                        t.trial
                    )))
                }
                Some(_) => {}
                None => obs_hashes.push((t.trial, t.obs_hash.clone())),
            }
        }
    }
    obs_hashes.sort();

    let methods = per_method
        .into_iter()
        .map(|(m, trials, diverged)| aggregate(m, trials, diverged, &truth, cfg.ensemble_size))
        .collect::<Result<Vec<_>>>()?;

    Ok(ResultBundle {
        config: cfg.clone(),
        truth_hash: twin.truth_hash(),
        obs_hashes,
        methods,
    })
}
