//! Ensemble statistics and the empirical data-consistent gain.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dynamics::StateVector;
use crate::error::{Error, Result};
use crate::linalg::{regularized_inverse, symmetrize, GainInverse};

/// `n × N` matrix of ensemble members, one per column.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMatrix {
    members: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct EnsembleStats {
    pub mean: DVector<f64>,
    pub anomalies: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
}

impl EnsembleMatrix {
    pub fn new(members: DMatrix<f64>) -> Result<Self> {
        if members.ncols() < 2 {
            return Err(Error::InvalidInput(format!(
                "ensemble needs at least 2 members, got {}",
                members.ncols()
            )));
        }
        if members.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "ensemble has non-finite entries".into(),
            ));
        }
        Ok(Self { members })
    }

    pub fn from_columns(columns: &[StateVector]) -> Result<Self> {
        if columns.len() < 2 {
            return Err(Error::InvalidInput(
                "ensemble needs at least 2 members".into(),
            ));
        }
        Self::new(DMatrix::from_columns(columns))
    }

    pub fn members(&self) -> &DMatrix<f64> {
        &self.members
    }

    pub fn into_members(self) -> DMatrix<f64> {
        self.members
    }

    pub fn member(&self, j: usize) -> StateVector {
        self.members.column(j).into_owned()
    }

    pub fn state_dim(&self) -> usize {
        self.members.nrows()
    }

    pub fn size(&self) -> usize {
        self.members.ncols()
    }

    pub fn mean(&self) -> DVector<f64> {
        column_mean(&self.members)
    }

    pub fn anomalies(&self) -> DMatrix<f64> {
        center(&self.members).1
    }

    pub fn stats(&self) -> EnsembleStats {
        let (mean, anomalies) = center(&self.members);
        let covariance = &anomalies * anomalies.transpose() / (self.size() as f64 - 1.0);
        EnsembleStats {
            mean,
            anomalies,
            covariance,
        }
    }

    /// `trace(P̂)`, computed from anomalies without forming `P̂`.
    pub fn covariance_trace(&self) -> f64 {
        self.anomalies().norm_squared() / (self.size() as f64 - 1.0)
    }

    /// `x̄ + λ (x⁽ʲ⁾ − x̄)` for every member.
    pub fn inflate(&self, lambda_infl: f64) -> Result<Self> {
        if !(lambda_infl >= 1.0) || !lambda_infl.is_finite() {
            return Err(Error::InvalidInput(format!(
                "inflation factor must be >= 1, got {lambda_infl}"
            )));
        }
        if lambda_infl == 1.0 {
            return Ok(self.clone());
        }
        let (mean, anomalies) = center(&self.members);
        let mut members = anomalies * lambda_infl;
        for mut col in members.column_iter_mut() {
            col += &mean;
        }
        Ok(Self { members })
    }
}

pub(crate) fn column_mean(m: &DMatrix<f64>) -> DVector<f64> {
    m.column_sum() / m.ncols() as f64
}

/// Returns the column mean and `M − mean·1ᵀ`.
pub(crate) fn center(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let mean = column_mean(m);
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        col -= &mean;
    }
    (mean, out)
}

/// Empirical cross-covariance gain `K = P_xz P_zz†`.
#[derive(Debug, Clone)]
pub struct DcGain {
    pub p_xz: DMatrix<f64>,
    pub p_zz: DMatrix<f64>,
    pub gain: DMatrix<f64>,
}

/// Builds the data-consistent gain from the window-endpoint ensemble and
/// the stacked predicted observations (`d × N`) of the same members.
pub fn dc_gain(x_end: &EnsembleMatrix, z: &DMatrix<f64>, inverse: GainInverse) -> Result<DcGain> {
    if z.ncols() != x_end.size() {
        return Err(Error::DimensionMismatch(format!(
            "predicted observations have {} columns, ensemble has {} members",
            z.ncols(),
            x_end.size()
        )));
    }
    let scale = 1.0 / (x_end.size() as f64 - 1.0);
    let a_x = x_end.anomalies();
    let (_, a_z) = center(z);
    let p_xz = &a_x * a_z.transpose() * scale;
    let p_zz = symmetrize(&(&a_z * a_z.transpose() * scale));
    let gain = &p_xz * regularized_inverse(&p_zz, inverse)?;
    Ok(DcGain { p_xz, p_zz, gain })
}

/// `x0 + σ_init ξ⁽ʲ⁾` for `j = 1..N`.
pub fn initial_ensemble<R: Rng + ?Sized>(
    x0: &StateVector,
    size: usize,
    sigma_init: f64,
    rng: &mut R,
) -> Result<EnsembleMatrix> {
    let n = x0.len();
    let mut members = DMatrix::zeros(n, size);
    for j in 0..size {
        for i in 0..n {
            let xi: f64 = rng.sample(StandardNormal);
            members[(i, j)] = x0[i] + sigma_init * xi;
        }
    }
    EnsembleMatrix::new(members)
}
