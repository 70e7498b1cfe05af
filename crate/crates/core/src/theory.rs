//! Monte-Carlo validators for sample-covariance and spectral-perturbation
//! facts on Gaussian residual models with known population moments.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::ensemble::center;
use crate::error::{Error, Result};
use crate::linalg::{spd_sqrt_pair, spectral_norm, sym_eig_desc, SymEig};
use crate::parallel::Execution;
use crate::seeds::{derive_seed, Stream};

/// Slack for floating-point roundoff when checking deterministic
/// inequalities.
const INEQUALITY_SLACK: f64 = 1e-10;

/// Residuals `e ~ N(μ_E, Σ_E)` with known eigenstructure.
#[derive(Debug, Clone)]
pub struct GaussianResidualModel {
    pub mu_e: DVector<f64>,
    pub sigma_e: DMatrix<f64>,
    pub eig: SymEig,
    sqrt_sigma: DMatrix<f64>,
}

impl GaussianResidualModel {
    pub fn new(mu_e: DVector<f64>, sigma_e: DMatrix<f64>) -> Result<Self> {
        if mu_e.len() != sigma_e.nrows() {
            return Err(Error::DimensionMismatch(
                "mean and covariance disagree on d".into(),
            ));
        }
        let (sqrt_sigma, _) = spd_sqrt_pair(&sigma_e)?;
        let eig = sym_eig_desc(&sigma_e)?;
        Ok(Self {
            mu_e,
            sigma_e,
            eig,
            sqrt_sigma,
        })
    }

    /// Covariance `V diag(values) Vᵀ` with `V` a random orthogonal matrix
    /// drawn from `seed`.
    pub fn with_spectrum(values: &[f64], mu_e: DVector<f64>, seed: u64) -> Result<Self> {
        let d = values.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = g.qr().q();
        let lambda = DMatrix::from_diagonal(&DVector::from_column_slice(values));
        let sigma = &q * lambda * q.transpose();
        Self::new(mu_e, crate::linalg::symmetrize(&sigma))
    }

    pub fn dim(&self) -> usize {
        self.mu_e.len()
    }

    /// `λ_κ − λ_{κ+1}`.
    pub fn gap(&self, kappa: usize) -> f64 {
        let v = &self.eig.values;
        if kappa == 0 || kappa >= v.len() {
            return f64::NAN;
        }
        v[kappa - 1] - v[kappa]
    }

    pub fn projector(&self, kappa: usize) -> DMatrix<f64> {
        self.eig.leading_projector(kappa)
    }

    /// `‖(I − P_κ) μ_E‖²`, the mean mismatch discarded by truncation.
    pub fn discarded_mean_norm2(&self, kappa: usize) -> f64 {
        (&self.mu_e - self.projector(kappa) * &self.mu_e).norm_squared()
    }

    /// `d × count` matrix of independent draws.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> DMatrix<f64> {
        let xi = DMatrix::from_fn(self.dim(), count, |_, _| {
            rng.sample::<f64, _>(StandardNormal)
        });
        let mut out = &self.sqrt_sigma * xi;
        for mut col in out.column_iter_mut() {
            col += &self.mu_e;
        }
        out
    }

    /// Sample covariance `C_E` and mean of `size` draws.
    pub fn sample_moments<R: Rng + ?Sized>(
        &self,
        size: usize,
        rng: &mut R,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let e = self.sample(size, rng);
        let (mean, centered) = center(&e);
        let cov = &centered * centered.transpose() / (size as f64 - 1.0);
        (mean, cov)
    }
}

/// Monte-Carlo run settings shared by every check.
#[derive(Debug, Clone, Copy)]
pub struct McSettings {
    pub ensemble_size: usize,
    pub reps: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl McSettings {
    fn rep_rng(&self, r: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(derive_seed(self.seed, 0, Stream::Replication(r as u64)))
    }

    fn validate(&self, min_size: usize) -> Result<()> {
        if self.ensemble_size < min_size {
            return Err(Error::InvalidInput(format!(
                "ensemble size must be >= {min_size}, got {}",
                self.ensemble_size
            )));
        }
        if self.reps < 2 {
            return Err(Error::InvalidInput("need at least 2 replications".into()));
        }
        Ok(())
    }
}

fn mean_and_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone)]
pub struct UnbiasednessReport {
    pub mean_cov: DMatrix<f64>,
    /// Largest `|mean C_E − Σ_E| / SE` over entries.
    pub max_z: f64,
    pub passed: bool,
}

/// Averages `C_E` over replications; every entry must sit within 4
/// standard errors of `Σ_E`.
pub fn cov_unbiasedness_check(
    model: &GaussianResidualModel,
    mc: McSettings,
) -> Result<UnbiasednessReport> {
    mc.validate(2)?;
    let covs = mc.execution.map(mc.reps, |r| {
        let mut rng = mc.rep_rng(r);
        model.sample_moments(mc.ensemble_size, &mut rng).1
    });
    let d = model.dim();
    let mut mean_cov = DMatrix::zeros(d, d);
    let mut max_z = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            let entries: Vec<f64> = covs.iter().map(|c| c[(i, j)]).collect();
            let (mean, se) = mean_and_se(&entries);
            mean_cov[(i, j)] = mean;
            let dev = (mean - model.sigma_e[(i, j)]).abs();
            let z = if se > 0.0 {
                dev / se
            } else if dev == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            max_z = max_z.max(z);
        }
    }
    Ok(UnbiasednessReport {
        mean_cov,
        max_z,
        passed: max_z <= 4.0,
    })
}

/// `((tr Σ)² + tr(Σ²)) / (N − 1)`.
pub fn wishart_frobenius_exact(sigma: &DMatrix<f64>, ensemble_size: usize) -> f64 {
    let tr = sigma.trace();
    let tr2 = (sigma * sigma).trace();
    (tr * tr + tr2) / (ensemble_size as f64 - 1.0)
}

#[derive(Debug, Clone, Copy)]
pub struct WishartReport {
    pub estimate: f64,
    pub std_error: f64,
    pub exact: f64,
    pub rel_error: f64,
    pub passed: bool,
}

/// MC estimate of `E‖C_E − Σ_E‖_F²` against the Gaussian identity, 5%.
pub fn wishart_frobenius_check(
    model: &GaussianResidualModel,
    mc: McSettings,
) -> Result<WishartReport> {
    mc.validate(2)?;
    let sq = mc.execution.map(mc.reps, |r| {
        let mut rng = mc.rep_rng(r);
        let (_, cov) = model.sample_moments(mc.ensemble_size, &mut rng);
        (cov - &model.sigma_e).norm_squared()
    });
    let (estimate, std_error) = mean_and_se(&sq);
    let exact = wishart_frobenius_exact(&model.sigma_e, mc.ensemble_size);
    let rel_error = (estimate - exact).abs() / exact;
    Ok(WishartReport {
        estimate,
        std_error,
        exact,
        rel_error,
        passed: rel_error <= 0.05,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct EigenPerturbationReport {
    pub reps: usize,
    pub kappa: usize,
    pub gap: f64,
    pub weyl_violations: usize,
    pub davis_kahan_violations: usize,
    /// Largest `max_i |λ̂_i − λ_i| / ‖C_E − Σ_E‖₂`.
    pub max_weyl_ratio: f64,
    /// Largest `‖P̂_κ − P_κ‖_F / (√(2κ)/δ_κ ‖C_E − Σ_E‖₂)`.
    pub max_davis_kahan_ratio: f64,
    /// Largest sign-matched `‖v̂_i − v_i‖` over `i ≤ κ`.
    pub max_vector_error: f64,
    /// `‖(I − P_κ) μ_E‖²`, reported without a threshold.
    pub discarded_mean_norm2: f64,
    pub passed: bool,
}

/// Checks Weyl's inequality and the Davis–Kahan projector bound on every
/// replication; any violation fails the check.
pub fn eigen_perturbation_check(
    model: &GaussianResidualModel,
    kappa: usize,
    mc: McSettings,
) -> Result<EigenPerturbationReport> {
    mc.validate(2)?;
    let gap = model.gap(kappa);
    if !(gap > 0.0) {
        return Err(Error::InvalidInput(format!(
            "eigen-perturbation check needs a positive gap at kappa = {kappa}, got {gap}"
        )));
    }
    let p_pop = model.projector(kappa);
    let dk_factor = (2.0 * kappa as f64).sqrt() / gap;

    struct Rep {
        weyl_ratio: f64,
        dk_ratio: f64,
        weyl_ok: bool,
        dk_ok: bool,
        vec_err: f64,
    }

    let reps = mc.execution.map(mc.reps, |r| -> Result<Rep> {
        let mut rng = mc.rep_rng(r);
        let (_, cov) = model.sample_moments(mc.ensemble_size, &mut rng);
        let pert = spectral_norm(&(&cov - &model.sigma_e));
        let emp = sym_eig_desc(&cov)?;
        let weyl_dev = emp
            .values
            .iter()
            .zip(model.eig.values.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let dk_lhs = (emp.leading_projector(kappa) - &p_pop).norm();
        let dk_rhs = dk_factor * pert;
        let mut vec_err = 0.0f64;
        for i in 0..kappa {
            let pop = model.eig.vectors.column(i);
            let mut v = emp.vectors.column(i).into_owned();
            if v.dot(&pop) < 0.0 {
                v.neg_mut();
            }
            vec_err = vec_err.max((v - pop).norm());
        }
        Ok(Rep {
            weyl_ratio: if pert > 0.0 { weyl_dev / pert } else { 0.0 },
            dk_ratio: if dk_rhs > 0.0 { dk_lhs / dk_rhs } else { 0.0 },
            weyl_ok: weyl_dev <= pert + INEQUALITY_SLACK,
            dk_ok: dk_lhs <= dk_rhs + INEQUALITY_SLACK,
            vec_err,
        })
    });
    let reps = reps.into_iter().collect::<Result<Vec<_>>>()?;

    let weyl_violations = reps.iter().filter(|r| !r.weyl_ok).count();
    let davis_kahan_violations = reps.iter().filter(|r| !r.dk_ok).count();
    Ok(EigenPerturbationReport {
        reps: reps.len(),
        kappa,
        gap,
        weyl_violations,
        davis_kahan_violations,
        max_weyl_ratio: reps.iter().map(|r| r.weyl_ratio).fold(0.0, f64::max),
        max_davis_kahan_ratio: reps.iter().map(|r| r.dk_ratio).fold(0.0, f64::max),
        max_vector_error: reps.iter().map(|r| r.vec_err).fold(0.0, f64::max),
        discarded_mean_norm2: model.discarded_mean_norm2(kappa),
        passed: weyl_violations == 0 && davis_kahan_violations == 0,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct PerturbationVarianceReport {
    pub estimate: f64,
    pub exact: f64,
    pub rel_error: f64,
    pub passed: bool,
}

/// `E‖(1/N) Σ_j K ε⁽ʲ⁾‖²` with `ε ~ N(0, R)` against `tr(K R Kᵀ)/N`.
pub fn enkf_perturbation_variance_check(
    gain: &DMatrix<f64>,
    r: &DMatrix<f64>,
    mc: McSettings,
) -> Result<PerturbationVarianceReport> {
    mc.validate(1)?;
    if gain.ncols() != r.nrows() {
        return Err(Error::DimensionMismatch("gain columns must match R".into()));
    }
    let (half, _) = spd_sqrt_pair(r)?;
    let n_ens = mc.ensemble_size;
    let d = r.nrows();
    let sq = mc.execution.map(mc.reps, |rep| {
        let mut rng = mc.rep_rng(rep);
        let xi = DMatrix::from_fn(d, n_ens, |_, _| rng.sample::<f64, _>(StandardNormal));
        let eps_mean = (&half * xi).column_sum() / n_ens as f64;
        (gain * eps_mean).norm_squared()
    });
    let (estimate, _) = mean_and_se(&sq);
    let exact = (gain * r * gain.transpose()).trace() / n_ens as f64;
    let (rel_error, passed) = if exact == 0.0 {
        (estimate.abs(), estimate == 0.0)
    } else {
        let rel = (estimate - exact).abs() / exact;
        (rel, rel <= 0.05)
    };
    Ok(PerturbationVarianceReport {
        estimate,
        exact,
        rel_error,
        passed,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct FourthMomentReport {
    pub m4_small: f64,
    pub m4_large: f64,
    /// `m4(N) / m4(2N)`, ideally 4.
    pub ratio: f64,
    pub passed: bool,
}

fn sample_mean_fourth_moment(
    model: &GaussianResidualModel,
    mc: McSettings,
    size: usize,
    salt: u64,
) -> f64 {
    let vals = mc.execution.map(mc.reps, |r| {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(mc.seed, salt, Stream::Replication(r as u64)));
        let e = model.sample(size, &mut rng);
        let mean = e.column_sum() / size as f64;
        (mean - &model.mu_e).norm_squared().powi(2)
    });
    vals.iter().sum::<f64>() / vals.len() as f64
}

/// `E‖ē − μ‖⁴` at `N` and `2N`; the ratio must lie in `[3.0, 5.3]`.
pub fn fourth_moment_check(
    model: &GaussianResidualModel,
    mc: McSettings,
) -> Result<FourthMomentReport> {
    mc.validate(2)?;
    let m4_small = sample_mean_fourth_moment(model, mc, mc.ensemble_size, 1);
    let m4_large = sample_mean_fourth_moment(model, mc, 2 * mc.ensemble_size, 2);
    let ratio = m4_small / m4_large;
    Ok(FourthMomentReport {
        m4_small,
        m4_large,
        ratio,
        passed: (3.0..=5.3).contains(&ratio),
    })
}

fn verdict(passed: bool) -> &'static str {
    if passed {
        "PASS"
    } else {
        "FAIL"
    }
}

impl fmt::Display for UnbiasednessReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} unbiasedness: max |z| = {:.3} (limit 4)",
            verdict(self.passed),
            self.max_z
        )
    }
}

impl fmt::Display for WishartReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} wishart: estimate {:.6} ± {:.6}, exact {:.6}, rel. error {:.4} (limit 0.05)",
            verdict(self.passed),
            self.estimate,
            self.std_error,
            self.exact,
            self.rel_error
        )
    }
}

impl fmt::Display for EigenPerturbationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} eigen-perturbation: {} reps, kappa {}, gap {:.4}; weyl violations {}, davis-kahan violations {}; \
             max ratios {:.4} / {:.4}; max |v_hat - v| {:.4}; |(I-P)mu|^2 = {:.6}",
            verdict(self.passed),
            self.reps,
            self.kappa,
            self.gap,
            self.weyl_violations,
            self.davis_kahan_violations,
            self.max_weyl_ratio,
            self.max_davis_kahan_ratio,
            self.max_vector_error,
            self.discarded_mean_norm2
        )
    }
}

impl fmt::Display for PerturbationVarianceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} perturbation-variance: estimate {:.6}, exact {:.6}, rel. error {:.4} (limit 0.05)",
            verdict(self.passed),
            self.estimate,
            self.exact,
            self.rel_error
        )
    }
}

impl fmt::Display for FourthMomentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} fourth-moment: E|e_bar-mu|^4 = {:.6e} (N), {:.6e} (2N), ratio {:.3} (range 3.0..5.3)",
            verdict(self.passed),
            self.m4_small,
            self.m4_large,
            self.ratio
        )
    }
}
