//! Whitened residuals, their truncated eigenbasis and the projected
//! observation-space increment used by QPCA-EnDCF.

use nalgebra::{DMatrix, DVector};

use crate::ensemble::center;
use crate::error::{Error, Result};
use crate::linalg::sym_eig_desc;
use crate::observation::ObservationWindow;

/// Eigenvalues at or below this fraction of the leading one count as zero
/// when deciding the numerical rank of `C_E`.
pub const RANK_RTOL: f64 = 1e-12;

/// Whitened forecast-minus-observation residuals for one window.
#[derive(Debug, Clone)]
pub struct ResidualSet {
    /// `E = R^{-1/2} (Z − z 1ᵀ)`, `d × N`.
    pub e_matrix: DMatrix<f64>,
    pub e_bar: DVector<f64>,
    pub centered: DMatrix<f64>,
    /// `C_E = E_c E_cᵀ / (N − 1)`.
    pub cov: DMatrix<f64>,
}

impl ResidualSet {
    pub fn dim(&self) -> usize {
        self.e_matrix.nrows()
    }

    pub fn size(&self) -> usize {
        self.e_matrix.ncols()
    }

    /// `min(d, N − 1)`.
    pub fn max_rank(&self) -> usize {
        self.dim().min(self.size().saturating_sub(1))
    }
}

pub fn residual_set(z_stack: &DMatrix<f64>, window: &ObservationWindow) -> Result<ResidualSet> {
    let d = window.dim();
    if z_stack.nrows() != d {
        return Err(Error::DimensionMismatch(format!(
            "stacked predictions have {} rows, window dimension is {d}",
            z_stack.nrows()
        )));
    }
    if z_stack.ncols() < 2 {
        return Err(Error::InvalidInput(
            "residual set needs at least 2 members".into(),
        ));
    }
    let mut diff = z_stack.clone();
    for mut col in diff.column_iter_mut() {
        col -= &window.stacked;
    }
    let e_matrix = window.whiten(&diff)?;
    let (e_bar, centered) = center(&e_matrix);
    let cov = &centered * centered.transpose() / (z_stack.ncols() as f64 - 1.0);
    Ok(ResidualSet {
        e_matrix,
        e_bar,
        centered,
        cov,
    })
}

/// Leading eigenvectors of `C_E` and their projector.
#[derive(Debug, Clone)]
pub struct TruncatedBasis {
    /// Rank actually retained; below the request when `C_E` is degenerate.
    pub kappa: usize,
    pub requested_kappa: usize,
    /// `d × κ`.
    pub vectors: DMatrix<f64>,
    pub values: DVector<f64>,
    /// `V̂_κ V̂_κᵀ`.
    pub projector: DMatrix<f64>,
}

impl TruncatedBasis {
    pub fn was_clamped(&self) -> bool {
        self.kappa < self.requested_kappa
    }
}

/// Keeps the leading `kappa` eigenpairs of `C_E`.
///
/// `kappa` must lie in `[1, min(d, N − 1)]`. If `C_E` has numerical rank
/// below `kappa` the retained rank is clamped to it (possibly to zero).
pub fn truncated_basis(rs: &ResidualSet, kappa: usize) -> Result<TruncatedBasis> {
    let max_rank = rs.max_rank();
    if kappa == 0 || kappa > max_rank {
        return Err(Error::InvalidInput(format!(
            "kappa must be in [1, {max_rank}], got {kappa}"
        )));
    }
    let eig = sym_eig_desc(&rs.cov)?;
    let lead = eig.values[0];
    let rank = if lead > 0.0 {
        eig.values.iter().filter(|&&l| l > RANK_RTOL * lead).count()
    } else {
        0
    };
    let kept = kappa.min(rank);
    let d = rs.dim();
    let vectors = eig.vectors.columns(0, kept).into_owned();
    let values = DVector::from_iterator(kept, eig.values.iter().take(kept).map(|&l| l.max(0.0)));
    let projector = if kept == 0 {
        DMatrix::zeros(d, d)
    } else {
        &vectors * vectors.transpose()
    };
    Ok(TruncatedBasis {
        kappa: kept,
        requested_kappa: kappa,
        vectors,
        values,
        projector,
    })
}

/// Observation-space increment from projecting the uncentered residuals.
#[derive(Debug, Clone)]
pub struct QpcaIncrement {
    /// `Q = V̂_κᵀ E`, `κ × N`.
    pub coords: DMatrix<f64>,
    /// `−V̂_κ Q`.
    pub delta_white: DMatrix<f64>,
    /// `R^{1/2} Δ_white`.
    pub delta_obs: DMatrix<f64>,
}

impl QpcaIncrement {
    /// `‖V̂_κᵀ (E + Δ_white)‖_F`, zero up to roundoff.
    pub fn projected_residual(&self, rs: &ResidualSet, basis: &TruncatedBasis) -> f64 {
        (basis.vectors.transpose() * (&rs.e_matrix + &self.delta_white)).norm()
    }
}

pub fn qpca_increment(
    rs: &ResidualSet,
    basis: &TruncatedBasis,
    window: &ObservationWindow,
) -> Result<QpcaIncrement> {
    if basis.vectors.nrows() != rs.dim() {
        return Err(Error::DimensionMismatch(
            "basis and residuals disagree on d".into(),
        ));
    }
    let coords = basis.vectors.transpose() * &rs.e_matrix;
    let delta_white = -(&basis.vectors * &coords);
    let delta_obs = window.unwhiten(&delta_white)?;
    Ok(QpcaIncrement {
        coords,
        delta_white,
        delta_obs,
    })
}
