use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::parallel::Execution;
use crate::seeds::{derive_seed, Stream};
use crate::theory::{
    cov_unbiasedness_check, eigen_perturbation_check, enkf_perturbation_variance_check,
    fourth_moment_check, wishart_frobenius_check, GaussianResidualModel, McSettings,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TheoryCheck {
    Unbiasedness,
    Wishart,
    EigenPerturbation,
    PerturbationVariance,
    FourthMoment,
}

impl TheoryCheck {
    pub const ALL: [TheoryCheck; 5] = [
        TheoryCheck::Unbiasedness,
        TheoryCheck::Wishart,
        TheoryCheck::EigenPerturbation,
        TheoryCheck::PerturbationVariance,
        TheoryCheck::FourthMoment,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TheoryCheck::Unbiasedness => "unbiasedness",
            TheoryCheck::Wishart => "wishart",
            TheoryCheck::EigenPerturbation => "eigen-perturbation",
            TheoryCheck::PerturbationVariance => "perturbation-variance",
            TheoryCheck::FourthMoment => "fourth-moment",
        }
    }
}

impl fmt::Display for TheoryCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TheoryCheck {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown theory check `{s}`")))
    }
}

/// Optional overrides; `None` takes the per-check default.
#[derive(Debug, Clone, Default)]
pub struct TheoryParams {
    pub d: Option<usize>,
    pub ensemble_size: Option<usize>,
    pub reps: Option<usize>,
    pub kappa: Option<usize>,
    /// Population eigenvalues; overrides `d`.
    pub spectrum: Option<Vec<f64>>,
    /// Observation noise level for the perturbation-variance check.
    pub sigma: Option<f64>,
    /// Number of random gains for the perturbation-variance check.
    pub gains: Option<usize>,
    /// Rows of each random gain.
    pub state_dim: Option<usize>,
    pub seed: u64,
    pub execution: Execution,
}

fn linear_spectrum(d: usize) -> Vec<f64> {
    (0..d).map(|i| (d - i) as f64).collect()
}

const EIGEN_DEFAULT_SPECTRUM: [f64; 6] = [10.0, 8.0, 2.0, 1.5, 1.0, 0.5];

/// Runs one check and returns `(passed, report lines)`.
pub fn check_theory(check: TheoryCheck, p: &TheoryParams) -> Result<(bool, Vec<String>)> {
    let settings = |n: usize, reps: usize| McSettings {
        ensemble_size: p.ensemble_size.unwrap_or(n),
        reps: p.reps.unwrap_or(reps),
        seed: p.seed,
        execution: p.execution,
    };
    let spectrum = |default: Vec<f64>| -> Vec<f64> {
        p.spectrum
            .clone()
            .unwrap_or_else(|| p.d.map(linear_spectrum).unwrap_or(default))
    };
    let basis_seed = derive_seed(p.seed, 0, Stream::TruthObs);
    let model = |values: &[f64], mu: DVector<f64>| -> Result<GaussianResidualModel> {
        if values.is_empty() || values.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidInput(
                "spectrum must be nonempty and positive".into(),
            ));
        }
        GaussianResidualModel::with_spectrum(values, mu, basis_seed)
    };

    match check {
        TheoryCheck::Unbiasedness => {
            let values = spectrum(linear_spectrum(3));
            let r = cov_unbiasedness_check(
                &model(&values, DVector::zeros(values.len()))?,
                settings(10, 10_000),
            )?;
            Ok((r.passed, vec![r.to_string()]))
        }
        TheoryCheck::Wishart => {
            let values = spectrum(linear_spectrum(2));
            let r = wishart_frobenius_check(
                &model(&values, DVector::zeros(values.len()))?,
                settings(5, 20_000),
            )?;
            Ok((r.passed, vec![r.to_string()]))
        }
        TheoryCheck::EigenPerturbation => {
            let values = spectrum(EIGEN_DEFAULT_SPECTRUM.to_vec());
            let mu = DVector::from_fn(values.len(), |i, _| 0.5 / (i + 1) as f64);
            let r = eigen_perturbation_check(
                &model(&values, mu)?,
                p.kappa.unwrap_or(2),
                settings(200, 500),
            )?;
            Ok((r.passed, vec![r.to_string()]))
        }
        TheoryCheck::PerturbationVariance => {
            let d = p.d.unwrap_or(6);
            let rows = p.state_dim.unwrap_or(4);
            let sigma = p.sigma.unwrap_or(1.5);
            let r_cov = DMatrix::identity(d, d) * sigma * sigma;
            let mut all = true;
            let mut lines = Vec::new();
            for g in 0..p.gains.unwrap_or(3) {
                let gain = random_gain(
                    rows,
                    d,
                    derive_seed(p.seed, g as u64, Stream::InitialEnsemble),
                );
                let mut mc = settings(10, 20_000);
                mc.seed = derive_seed(p.seed, g as u64, Stream::Perturbation(0));
                let r = enkf_perturbation_variance_check(&gain, &r_cov, mc)?;
                all &= r.passed;
                lines.push(format!("gain {}: {r}", g + 1));
            }
            Ok((all, lines))
        }
        TheoryCheck::FourthMoment => {
            let values = spectrum(linear_spectrum(3));
            let r = fourth_moment_check(
                &model(&values, DVector::zeros(values.len()))?,
                settings(10, 20_000),
            )?;
            Ok((r.passed, vec![r.to_string()]))
        }
    }
}

/// Gaussian `rows × cols` matrix scaled by `1/√cols`.
pub(crate) fn random_gain(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (cols as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| {
        scale * rng.sample::<f64, _>(StandardNormal)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for c in TheoryCheck::ALL {
            assert_eq!(c.name().parse::<TheoryCheck>().unwrap(), c);
        }
        assert!("wishrt".parse::<TheoryCheck>().is_err());
    }

    #[test]
    fn default_wishart_passes() {
        let p = TheoryParams {
            d: Some(2),
            ensemble_size: Some(5),
            seed: 3,
            ..TheoryParams::default()
        };
        let (ok, lines) = check_theory(TheoryCheck::Wishart, &p).unwrap();
        assert!(ok, "{lines:?}");
    }

    #[test]
    fn bad_spectrum_is_rejected() {
        let p = TheoryParams {
            spectrum: Some(vec![1.0, -1.0]),
            ..TheoryParams::default()
        };
        assert!(check_theory(TheoryCheck::Wishart, &p).is_err());
    }
}
