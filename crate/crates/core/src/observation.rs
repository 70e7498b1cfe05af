//! Observation operator, noisy synthesis, window stacking and whitening.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dynamics::StateVector;
use crate::error::{Error, Result};
use crate::linalg::spd_sqrt_pair;

/// Linear selector picking `indices` out of an `n`-dimensional state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObsOperator {
    n: usize,
    indices: Vec<usize>,
}

impl ObsOperator {
    pub fn new(n: usize, indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidInput(
                "observation operator selects nothing".into(),
            ));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "observed indices must be strictly increasing".into(),
            ));
        }
        if *indices.last().unwrap() >= n {
            return Err(Error::InvalidInput(format!(
                "observed index out of range for n = {n}"
            )));
        }
        Ok(Self { n, indices })
    }

    /// Every other component starting at 0: `0, 2, …` (the 1-based odd
    /// variables), `m` of them.
    pub fn every_other(n: usize, m: usize) -> Result<Self> {
        Self::new(n, (0..m).map(|j| 2 * j).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn observe(&self, x: &StateVector) -> DVector<f64> {
        debug_assert_eq!(x.len(), self.n);
        DVector::from_iterator(self.m(), self.indices.iter().map(|&i| x[i]))
    }

    /// Row selection applied to every column of `x`.
    pub fn observe_columns(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        x.select_rows(self.indices.iter())
    }

    /// Dense `m × n` matrix form.
    pub fn as_matrix(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.m(), self.n);
        for (r, &c) in self.indices.iter().enumerate() {
            h[(r, c)] = 1.0;
        }
        h
    }
}

/// `H x + σ ξ` with `ξ` standard normal.
pub fn synthesize_obs<R: Rng + ?Sized>(
    h: &ObsOperator,
    x_true: &StateVector,
    sigma_obs: f64,
    rng: &mut R,
) -> DVector<f64> {
    let mut z = h.observe(x_true);
    for v in z.iter_mut() {
        let xi: f64 = rng.sample(StandardNormal);
        *v += sigma_obs * xi;
    }
    z
}

#[derive(Debug, Clone)]
enum NoiseRoot {
    /// `R = σ² I`.
    Scalar(f64),
    Matrix {
        half: DMatrix<f64>,
        inv_half: DMatrix<f64>,
    },
}

/// `L` consecutive observations stacked into one vector of length `d = mL`,
/// with the stacked error covariance `R^(L)`.
#[derive(Debug, Clone)]
pub struct ObservationWindow {
    pub per_time: Vec<DVector<f64>>,
    pub stacked: DVector<f64>,
    pub r_stacked: DMatrix<f64>,
    root: NoiseRoot,
}

fn stack(obs: &[DVector<f64>]) -> Result<DVector<f64>> {
    let Some(first) = obs.first() else {
        return Err(Error::InvalidInput(
            "window needs at least one observation".into(),
        ));
    };
    let m = first.len();
    if let Some(bad) = obs.iter().find(|z| z.len() != m) {
        return Err(Error::DimensionMismatch(format!(
            "observation of length {} in a window of length-{m} vectors",
            bad.len()
        )));
    }
    let mut out = DVector::zeros(m * obs.len());
    for (l, z) in obs.iter().enumerate() {
        out.rows_mut(l * m, m).copy_from(z);
    }
    Ok(out)
}

/// Stacks `obs` in time order with `R^(L) = σ² I`.
pub fn stack_window(obs: Vec<DVector<f64>>, sigma_obs: f64) -> Result<ObservationWindow> {
    if !(sigma_obs > 0.0) || !sigma_obs.is_finite() {
        return Err(Error::NotSpd {
            min_eigenvalue: sigma_obs * sigma_obs,
        });
    }
    let stacked = stack(&obs)?;
    let d = stacked.len();
    Ok(ObservationWindow {
        per_time: obs,
        stacked,
        r_stacked: DMatrix::identity(d, d) * (sigma_obs * sigma_obs),
        root: NoiseRoot::Scalar(sigma_obs),
    })
}

impl ObservationWindow {
    /// Window with a general SPD stacked covariance.
    pub fn with_covariance(obs: Vec<DVector<f64>>, r_stacked: DMatrix<f64>) -> Result<Self> {
        let stacked = stack(&obs)?;
        if r_stacked.shape() != (stacked.len(), stacked.len()) {
            return Err(Error::DimensionMismatch(format!(
                "R^(L) is {}x{}, stacked observation has length {}",
                r_stacked.nrows(),
                r_stacked.ncols(),
                stacked.len()
            )));
        }
        let (half, inv_half) = spd_sqrt_pair(&r_stacked)?;
        Ok(Self {
            per_time: obs,
            stacked,
            r_stacked,
            root: NoiseRoot::Matrix { half, inv_half },
        })
    }

    pub fn len(&self) -> usize {
        self.per_time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_time.is_empty()
    }

    /// Stacked dimension `d = mL`.
    pub fn dim(&self) -> usize {
        self.stacked.len()
    }

    /// `σ` when `R^(L) = σ² I`.
    pub fn scalar_sigma(&self) -> Option<f64> {
        match self.root {
            NoiseRoot::Scalar(s) => Some(s),
            NoiseRoot::Matrix { .. } => None,
        }
    }

    fn check_rows(&self, m: &DMatrix<f64>) -> Result<()> {
        if m.nrows() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "matrix has {} rows, window dimension is {}",
                m.nrows(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// `R^{-1/2} D`.
    pub fn whiten(&self, d: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(d)?;
        Ok(match &self.root {
            NoiseRoot::Scalar(s) => d / *s,
            NoiseRoot::Matrix { inv_half, .. } => inv_half * d,
        })
    }

    /// `R^{1/2} Δ`.
    pub fn unwhiten(&self, delta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(delta)?;
        Ok(match &self.root {
            NoiseRoot::Scalar(s) => delta * *s,
            NoiseRoot::Matrix { half, .. } => half * delta,
        })
    }

    /// `count` independent draws from `N(0, R^(L))`, one per column.
    pub fn sample_noise<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> DMatrix<f64> {
        let d = self.dim();
        let xi = DMatrix::from_fn(d, count, |_, _| rng.sample::<f64, _>(StandardNormal));
        match &self.root {
            NoiseRoot::Scalar(s) => xi * *s,
            NoiseRoot::Matrix { half, .. } => half * xi,
        }
    }
}
