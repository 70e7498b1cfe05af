//! Sequential stochastic EnKF, four-dimensional stochastic EnKF and
//! QPCA-EnDCF, plus the cycling driver.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::dynamics::{forecast, ModelParams, StateVector};
use crate::ensemble::{center, dc_gain, EnsembleMatrix};
use crate::error::{Error, Result};
use crate::linalg::{spd_sqrt_pair, symmetrize, GainInverse};
use crate::observation::{ObsOperator, ObservationWindow};
use crate::spectral::{qpca_increment, residual_set, truncated_basis};
use crate::twin::{hash_vector, TwinData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    SeqEnkf,
    FourdEnkf,
    QpcaEndcf,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::SeqEnkf, Method::FourdEnkf, Method::QpcaEndcf];

    pub fn name(self) -> &'static str {
        match self {
            Method::SeqEnkf => "seq-enkf",
            Method::FourdEnkf => "4d-enkf",
            Method::QpcaEndcf => "qpca-endcf",
        }
    }

    pub fn is_windowed(self) -> bool {
        !matches!(self, Method::SeqEnkf)
    }

    pub fn is_stochastic(self) -> bool {
        !matches!(self, Method::QpcaEndcf)
    }

    /// Baseline multiplicative inflation: 1.05 for the stochastic filters,
    /// none for QPCA-EnDCF.
    pub fn baseline_inflation(self) -> f64 {
        if self.is_stochastic() {
            1.05
        } else {
            1.0
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "seq-enkf" | "seq_enkf" => Ok(Method::SeqEnkf),
            "4d-enkf" | "fourd_enkf" | "fourd-enkf" => Ok(Method::FourdEnkf),
            "qpca-endcf" | "qpca_endcf" => Ok(Method::QpcaEndcf),
            other => Err(Error::InvalidInput(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub method: Method,
    pub m: usize,
    pub ensemble_size: usize,
    pub window_len: usize,
    pub n_windows: usize,
    pub sigma_obs: f64,
    pub lambda_infl: f64,
    pub kappa: usize,
    pub model: ModelParams,
    pub gain_inverse: GainInverse,
}

impl FilterConfig {
    pub fn baseline(method: Method) -> Self {
        Self {
            method,
            m: 20,
            ensemble_size: 10,
            window_len: 5,
            n_windows: 50,
            sigma_obs: 1.5,
            lambda_infl: method.baseline_inflation(),
            kappa: 1,
            model: ModelParams::default(),
            gain_inverse: GainInverse::default(),
        }
    }

    pub fn n(&self) -> usize {
        self.model.n
    }

    /// `K = W L`.
    pub fn total_obs(&self) -> usize {
        self.n_windows * self.window_len
    }

    /// `d = m L`.
    pub fn stacked_dim(&self) -> usize {
        self.m * self.window_len
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let fail = |msg: String| Err(Error::InvalidInput(msg));
        if self.ensemble_size < 2 {
            return fail(format!(
                "ensemble size must be >= 2, got {}",
                self.ensemble_size
            ));
        }
        if self.m == 0 || 2 * (self.m - 1) >= self.n() {
            return fail(format!(
                "m = {} does not fit every-other observation of n = {}",
                self.m,
                self.n()
            ));
        }
        if self.window_len == 0 || self.n_windows == 0 {
            return fail("window length and window count must be >= 1".into());
        }
        if !(self.sigma_obs > 0.0) {
            return fail(format!("sigma_obs must be > 0, got {}", self.sigma_obs));
        }
        if !(self.lambda_infl >= 1.0) {
            return fail(format!(
                "lambda_infl must be >= 1, got {}",
                self.lambda_infl
            ));
        }
        if self.method == Method::QpcaEndcf {
            let max = self.stacked_dim().min(self.ensemble_size - 1);
            if self.kappa == 0 || self.kappa > max {
                return fail(format!("kappa must be in [1, {max}], got {}", self.kappa));
            }
        }
        Ok(())
    }
}

/// Forward-propagates every member by one observation interval.
pub fn forecast_ensemble(x: &EnsembleMatrix, model: &ModelParams) -> Result<EnsembleMatrix> {
    let cols = (0..x.size())
        .map(|j| forecast(&x.member(j), model))
        .collect::<Result<Vec<_>>>()?;
    EnsembleMatrix::from_columns(&cols)
}

fn solve_spd_right(lhs: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    // lhs · S⁻¹ = (S⁻¹ lhsᵀ)ᵀ for symmetric S
    let chol = symmetrize(s)
        .cholesky()
        .ok_or_else(|| Error::Numerical("innovation covariance is not positive definite".into()))?;
    Ok(chol.solve(&lhs.transpose()).transpose())
}

fn check_perturbations(p: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if p.shape() != (rows, cols) {
        return Err(Error::DimensionMismatch(format!(
            "perturbations are {}x{}, expected {rows}x{cols}",
            p.nrows(),
            p.ncols()
        )));
    }
    Ok(())
}

/// Stochastic EnKF analysis at one observation time with the observation
/// perturbations supplied (`m × N`, column `j` for member `j`).
pub fn seq_enkf_update(
    x: &EnsembleMatrix,
    z: &DVector<f64>,
    h: &ObsOperator,
    r: &DMatrix<f64>,
    perturbations: &DMatrix<f64>,
    lambda_infl: f64,
) -> Result<EnsembleMatrix> {
    let m = h.m();
    let n_ens = x.size();
    if z.len() != m || r.shape() != (m, m) {
        return Err(Error::DimensionMismatch(
            "observation or R has wrong size".into(),
        ));
    }
    check_perturbations(perturbations, m, n_ens)?;
    let scale = 1.0 / (n_ens as f64 - 1.0);
    let a_f = x.anomalies();
    let predicted = h.observe_columns(x.members());
    let (_, a_z) = center(&predicted);
    let s = &a_z * a_z.transpose() * scale + r;
    // P̂ᶠ Hᵀ = A_f (H A_f)ᵀ / (N − 1)
    let pf_ht = &a_f * h.observe_columns(&a_f).transpose() * scale;
    let gain = solve_spd_right(&pf_ht, &s)?;

    let mut innovations = perturbations.clone();
    for (j, mut col) in innovations.column_iter_mut().enumerate() {
        col += z;
        col -= predicted.column(j);
    }
    let analysis = EnsembleMatrix::new(x.members() + gain * innovations)?;
    analysis.inflate(lambda_infl)
}

/// One sequential stochastic EnKF analysis, drawing `ε⁽ʲ⁾ ~ N(0, R)`.
pub fn seq_enkf_step<R: Rng + ?Sized>(
    x: &EnsembleMatrix,
    z: &DVector<f64>,
    h: &ObsOperator,
    r: &DMatrix<f64>,
    lambda_infl: f64,
    rng: &mut R,
) -> Result<EnsembleMatrix> {
    let (half, _) = spd_sqrt_pair(r)?;
    let xi = DMatrix::from_fn(h.m(), x.size(), |_, _| {
        rng.sample::<f64, _>(rand_distr::StandardNormal)
    });
    seq_enkf_update(x, z, h, r, &(half * xi), lambda_infl)
}

/// Ensemble trajectory across one window.
#[derive(Debug, Clone)]
pub struct WindowForecast {
    /// Ensembles at `k0 + 1, …, k_w`.
    pub states: Vec<EnsembleMatrix>,
    /// `Z^(w)`, `d × N`: stacked `H X_k` in time order.
    pub z_stack: DMatrix<f64>,
}

impl WindowForecast {
    pub fn endpoint(&self) -> &EnsembleMatrix {
        self.states.last().expect("window has at least one state")
    }
}

pub fn forecast_window(
    x: &EnsembleMatrix,
    window_len: usize,
    h: &ObsOperator,
    model: &ModelParams,
) -> Result<WindowForecast> {
    if window_len == 0 {
        return Err(Error::InvalidInput("window length must be >= 1".into()));
    }
    let m = h.m();
    let mut states = Vec::with_capacity(window_len);
    let mut z_stack = DMatrix::zeros(m * window_len, x.size());
    let mut cur = x.clone();
    for l in 0..window_len {
        cur = forecast_ensemble(&cur, model)?;
        z_stack
            .rows_mut(l * m, m)
            .copy_from(&h.observe_columns(cur.members()));
        states.push(cur.clone());
    }
    Ok(WindowForecast { states, z_stack })
}

/// 4D-EnKF analysis at the window endpoint with supplied perturbations
/// (`d × N`).
pub fn fourd_enkf_update(
    fc: &WindowForecast,
    window: &ObservationWindow,
    perturbations: &DMatrix<f64>,
    lambda_infl: f64,
) -> Result<EnsembleMatrix> {
    let x_end = fc.endpoint();
    let d = window.dim();
    if fc.z_stack.nrows() != d {
        return Err(Error::DimensionMismatch(format!(
            "stacked predictions have {} rows, window has d = {d}",
            fc.z_stack.nrows()
        )));
    }
    check_perturbations(perturbations, d, x_end.size())?;
    let scale = 1.0 / (x_end.size() as f64 - 1.0);
    let a_x = x_end.anomalies();
    let (_, a_z) = center(&fc.z_stack);
    let p_xz = &a_x * a_z.transpose() * scale;
    let p_zz = &a_z * a_z.transpose() * scale;
    let gain = solve_spd_right(&p_xz, &(p_zz + &window.r_stacked))?;

    let mut innovations = perturbations.clone();
    for (j, mut col) in innovations.column_iter_mut().enumerate() {
        col += &window.stacked;
        col -= fc.z_stack.column(j);
    }
    let analysis = EnsembleMatrix::new(x_end.members() + gain * innovations)?;
    analysis.inflate(lambda_infl)
}

/// Propagates through the window and applies the 4D-EnKF analysis with
/// `ε⁽ʲ⁾ ~ N(0, R^(L))`.
pub fn fourd_enkf_window<R: Rng + ?Sized>(
    x: &EnsembleMatrix,
    window: &ObservationWindow,
    h: &ObsOperator,
    model: &ModelParams,
    lambda_infl: f64,
    rng: &mut R,
) -> Result<EnsembleMatrix> {
    let fc = forecast_window(x, window.len(), h, model)?;
    let eps = window.sample_noise(x.size(), rng);
    fourd_enkf_update(&fc, window, &eps, lambda_infl)
}

/// Result of one QPCA-EnDCF window update.
#[derive(Debug, Clone)]
pub struct QpcaOutcome {
    pub ensemble: EnsembleMatrix,
    pub effective_kappa: usize,
    pub clamped: bool,
    /// `‖V̂_κᵀ (E + Δ_white)‖_F`.
    pub projected_residual: f64,
}

/// Deterministic QPCA-EnDCF analysis at the window endpoint.
pub fn qpca_endcf_update(
    fc: &WindowForecast,
    window: &ObservationWindow,
    kappa: usize,
    inverse: GainInverse,
) -> Result<QpcaOutcome> {
    let x_end = fc.endpoint();
    let rs = residual_set(&fc.z_stack, window)?;
    let basis = truncated_basis(&rs, kappa)?;
    if basis.kappa == 0 {
        return Ok(QpcaOutcome {
            ensemble: x_end.clone(),
            effective_kappa: 0,
            clamped: true,
            projected_residual: 0.0,
        });
    }
    let inc = qpca_increment(&rs, &basis, window)?;
    let gain = dc_gain(x_end, &fc.z_stack, inverse)?;
    let ensemble = EnsembleMatrix::new(x_end.members() + &gain.gain * &inc.delta_obs)?;
    Ok(QpcaOutcome {
        ensemble,
        effective_kappa: basis.kappa,
        clamped: basis.was_clamped(),
        projected_residual: inc.projected_residual(&rs, &basis),
    })
}

pub fn qpca_endcf_window(
    x: &EnsembleMatrix,
    window: &ObservationWindow,
    h: &ObsOperator,
    model: &ModelParams,
    kappa: usize,
    inverse: GainInverse,
) -> Result<QpcaOutcome> {
    let fc = forecast_window(x, window.len(), h, model)?;
    qpca_endcf_update(&fc, window, kappa, inverse)
}

/// Analysis ensemble at global observation index `k`, with the truth.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub k: usize,
    pub ensemble: EnsembleMatrix,
    pub truth: StateVector,
}

/// Per-window bookkeeping of the QPCA update.
#[derive(Debug, Clone, Copy)]
pub struct QpcaWindowInfo {
    pub window: usize,
    pub effective_kappa: usize,
    pub clamped: bool,
    pub projected_residual: f64,
}

#[derive(Debug, Clone)]
pub struct AssimilationRun {
    pub method: Method,
    pub window_len: usize,
    pub n_windows: usize,
    /// Analyses at the method's native times: every `k` for the sequential
    /// filter, `k_w = wL` for the windowed ones.
    pub analyses: Vec<Analysis>,
    pub qpca: Vec<QpcaWindowInfo>,
    /// SHA-256 of the observation values consumed, in order.
    pub obs_hash: String,
}

impl AssimilationRun {
    /// Analyses at the window endpoints `k_w = wL`, `w = 1..W`.
    pub fn endpoint_analyses(&self) -> Vec<&Analysis> {
        self.analyses
            .iter()
            .filter(|a| a.k % self.window_len == 0)
            .collect()
    }
}

/// Cycles `config.method` over `W` windows of `twin`, starting from
/// `initial`. Only the stochastic filters draw from `rng`.
pub fn run_filter<R: Rng + ?Sized>(
    config: &FilterConfig,
    twin: &TwinData,
    initial: EnsembleMatrix,
    rng: &mut R,
) -> Result<AssimilationRun> {
    config.validate()?;
    if twin.total_obs() < config.total_obs() {
        return Err(Error::InsufficientData(format!(
            "run needs {} observation times, twin data has {}",
            config.total_obs(),
            twin.total_obs()
        )));
    }
    if twin.h.m() != config.m || twin.model != config.model {
        return Err(Error::DimensionMismatch(
            "twin data does not match filter config".into(),
        ));
    }
    if initial.state_dim() != config.n() || initial.size() != config.ensemble_size {
        return Err(Error::DimensionMismatch(
            "initial ensemble does not match filter config".into(),
        ));
    }

    let l = config.window_len;
    let mut hasher = Sha256::new();
    let mut analyses = Vec::new();
    let mut qpca = Vec::new();
    let mut x = initial;

    match config.method {
        Method::SeqEnkf => {
            let r = DMatrix::identity(config.m, config.m) * config.sigma_obs.powi(2);
            for k in 1..=config.total_obs() {
                let z = twin.obs_at(k);
                hash_vector(&mut hasher, z);
                let xf = forecast_ensemble(&x, &config.model)?;
                x = seq_enkf_step(&xf, z, &twin.h, &r, config.lambda_infl, rng)?;
                analyses.push(Analysis {
                    k,
                    ensemble: x.clone(),
                    truth: twin.truth[k].clone(),
                });
            }
        }
        Method::FourdEnkf | Method::QpcaEndcf => {
            for w in 1..=config.n_windows {
                let window = twin.window(w, l)?;
                for z in &window.per_time {
                    hash_vector(&mut hasher, z);
                }
                let fc = forecast_window(&x, l, &twin.h, &config.model)?;
                x = if config.method == Method::FourdEnkf {
                    let eps = window.sample_noise(x.size(), rng);
                    fourd_enkf_update(&fc, &window, &eps, config.lambda_infl)?
                } else {
                    let out = qpca_endcf_update(&fc, &window, config.kappa, config.gain_inverse)?;
                    qpca.push(QpcaWindowInfo {
                        window: w,
                        effective_kappa: out.effective_kappa,
                        clamped: out.clamped,
                        projected_residual: out.projected_residual,
                    });
                    out.ensemble.inflate(config.lambda_infl)?
                };
                let k_w = w * l;
                analyses.push(Analysis {
                    k: k_w,
                    ensemble: x.clone(),
                    truth: twin.truth[k_w].clone(),
                });
            }
        }
    }

    Ok(AssimilationRun {
        method: config.method,
        window_len: l,
        n_windows: config.n_windows,
        analyses,
        qpca,
        obs_hash: hex::encode(hasher.finalize()),
    })
}
