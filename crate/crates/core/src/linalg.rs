//! Dense symmetric kernels: sorted eigendecomposition, Moore–Penrose
//! pseudoinverse and SPD square roots.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenpairs of a symmetric matrix, values nonincreasing.
///
/// Column `i` of `vectors` pairs with `values[i]`. Each column is
/// sign-normalized so its largest-magnitude entry is positive.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEig {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `V diag(λ) Vᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = &self.vectors * DMatrix::from_diagonal(&self.values);
        scaled * self.vectors.transpose()
    }

    /// Orthogonal projector onto the leading `k` eigenvectors.
    pub fn leading_projector(&self, k: usize) -> DMatrix<f64> {
        let v = self.vectors.columns(0, k);
        v * v.transpose()
    }
}

/// How the observation-space covariance is inverted when forming a gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GainInverse {
    /// Moore–Penrose pseudoinverse. `None` uses [`default_pinv_rtol`].
    Pinv { rtol: Option<f64> },
    /// `(M + εI)^{-1}`.
    Tikhonov { epsilon: f64 },
}

impl Default for GainInverse {
    fn default() -> Self {
        GainInverse::Pinv { rtol: None }
    }
}

fn ensure_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what}: non-finite entry")))
    }
}

fn ensure_square(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "{what}: expected square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

/// `(M + Mᵀ)/2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric eigendecomposition with eigenvalues sorted nonincreasing.
///
/// The input is symmetrized first. Ties keep the solver's original index
/// order (stable sort), and every eigenvector gets a deterministic sign.
pub fn sym_eig_desc(m: &DMatrix<f64>) -> Result<SymEig> {
    ensure_square(m, "sym_eig_desc")?;
    ensure_finite(m, "sym_eig_desc")?;
    let p = m.nrows();
    if p == 0 {
        return Ok(SymEig {
            values: DVector::zeros(0),
            vectors: DMatrix::zeros(0, 0),
        });
    }
    let eig = SymmetricEigen::new(symmetrize(m));

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let values = DVector::from_iterator(p, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(p, p);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        normalize_sign(&mut col);
        vectors.set_column(dst, &col);
    }
    Ok(SymEig { values, vectors })
}

/// Flip `v` so its largest-magnitude component is positive. The first
/// index wins among equal magnitudes.
pub fn normalize_sign(v: &mut DVector<f64>) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if !v.is_empty() && v[best] < 0.0 {
        v.neg_mut();
    }
}

/// `max(p, q) · ε_mach`, the conventional SVD cutoff relative to `σ_max`.
pub fn default_pinv_rtol(rows: usize, cols: usize) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON
}

/// Thin SVD `M = U diag(s) Vᵀ` with singular values in descending order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v: DMatrix<f64>,
}

/// Thin SVD by one-sided Jacobi rotations.
///
/// Used instead of nalgebra's bidiagonal SVD, which loses accuracy on
/// rank-deficient inputs.
pub fn svd(m: &DMatrix<f64>) -> Result<Svd> {
    ensure_finite(m, "svd")?;
    if m.nrows() < m.ncols() {
        let t = svd(&m.transpose())?;
        return Ok(Svd {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        });
    }
    let q = m.ncols();
    let mut a = m.clone();
    let mut v = DMatrix::<f64>::identity(q, q);
    for _ in 0..100 {
        let mut rotated = false;
        for i in 0..q {
            for j in (i + 1)..q {
                let alpha = a.column(i).norm_squared();
                let beta = a.column(j).norm_squared();
                let gamma = a.column(i).dot(&a.column(j));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta.abs() > 1e150 {
                    0.5 / zeta
                } else {
                    zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut a, i, j, c, s);
                rotate_columns(&mut v, i, j, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..q).map(|k| a.column(k).norm()).collect();
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let mut u = DMatrix::zeros(m.nrows(), q);
    let mut vs = DMatrix::zeros(q, q);
    let mut sv = DVector::zeros(q);
    for (dst, &src) in order.iter().enumerate() {
        sv[dst] = norms[src];
        if norms[src] > 0.0 {
            u.set_column(dst, &(a.column(src) / norms[src]));
        }
        vs.set_column(dst, &v.column(src));
    }
    Ok(Svd {
        u,
        singular_values: sv,
        v: vs,
    })
}

fn rotate_columns(m: &mut DMatrix<f64>, i: usize, j: usize, c: f64, s: f64) {
    for r in 0..m.nrows() {
        let x = m[(r, i)];
        let y = m[(r, j)];
        m[(r, i)] = c * x - s * y;
        m[(r, j)] = s * x + c * y;
    }
}

/// Moore–Penrose pseudoinverse.
///
/// Singular values below `rtol · σ_max` are treated as zero. Symmetric
/// inputs go through the eigendecomposition.
pub fn pinv(m: &DMatrix<f64>, rtol: Option<f64>) -> Result<DMatrix<f64>> {
    ensure_finite(m, "pinv")?;
    let (p, q) = m.shape();
    if p == 0 || q == 0 {
        return Ok(DMatrix::zeros(q, p));
    }
    let rtol = rtol.unwrap_or_else(|| default_pinv_rtol(p, q));
    if !(rtol >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "pinv: rtol must be >= 0, got {rtol}"
        )));
    }
    if p == q && m == &m.transpose() {
        let eig = sym_eig_desc(m)?;
        let max = eig.values.amax();
        if max == 0.0 {
            return Ok(DMatrix::zeros(q, p));
        }
        let inv = eig
            .values
            .map(|l| if l.abs() > rtol * max { 1.0 / l } else { 0.0 });
        let v = &eig.vectors;
        return Ok(symmetrize(
            &(v * DMatrix::from_diagonal(&inv) * v.transpose()),
        ));
    }
    let d = svd(m)?;
    let sigma_max = d.singular_values[0];
    let mut out = DMatrix::zeros(q, p);
    if sigma_max == 0.0 {
        return Ok(out);
    }
    let cutoff = rtol * sigma_max;
    for (i, &s) in d.singular_values.iter().enumerate() {
        if s > cutoff {
            out += (d.v.column(i) * d.u.column(i).transpose()) / s;
        }
    }
    Ok(out)
}

/// Inverse of a symmetric PSD matrix according to `mode`.
pub fn regularized_inverse(m: &DMatrix<f64>, mode: GainInverse) -> Result<DMatrix<f64>> {
    match mode {
        GainInverse::Pinv { rtol } => pinv(m, rtol),
        GainInverse::Tikhonov { epsilon } => {
            if !(epsilon > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "tikhonov epsilon must be > 0, got {epsilon}"
                )));
            }
            ensure_square(m, "tikhonov")?;
            let shifted = m + DMatrix::identity(m.nrows(), m.ncols()) * epsilon;
            spd_inverse(&shifted)
        }
    }
}

/// Inverse of an SPD matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_square(m, "spd_inverse")?;
    ensure_finite(m, "spd_inverse")?;
    match symmetrize(m).cholesky() {
        Some(chol) => Ok(chol.inverse()),
        None => Err(Error::NotSpd {
            min_eigenvalue: sym_eig_desc(m)?.values.min(),
        }),
    }
}

/// `(M^{1/2}, M^{-1/2})` for SPD `M`, both symmetric.
pub fn spd_sqrt_pair(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    ensure_square(m, "spd_sqrt_pair")?;
    ensure_finite(m, "spd_sqrt_pair")?;
    let p = m.nrows();

    if is_diagonal(m) {
        let diag = m.diagonal();
        if let Some(bad) = diag.iter().copied().find(|&v| v <= 0.0) {
            return Err(Error::NotSpd {
                min_eigenvalue: bad,
            });
        }
        let half = DMatrix::from_diagonal(&diag.map(f64::sqrt));
        let inv_half = DMatrix::from_diagonal(&diag.map(|v| 1.0 / v.sqrt()));
        return Ok((half, inv_half));
    }

    let eig = sym_eig_desc(m)?;
    let min = eig.values[p - 1];
    if min <= 0.0 {
        return Err(Error::NotSpd {
            min_eigenvalue: min,
        });
    }
    let v = &eig.vectors;
    let half = v * DMatrix::from_diagonal(&eig.values.map(f64::sqrt)) * v.transpose();
    let inv_half = v * DMatrix::from_diagonal(&eig.values.map(|l| 1.0 / l.sqrt())) * v.transpose();
    Ok((symmetrize(&half), symmetrize(&inv_half)))
}

fn is_diagonal(m: &DMatrix<f64>) -> bool {
    let (p, q) = m.shape();
    (0..q).all(|j| (0..p).all(|i| i == j || m[(i, j)] == 0.0))
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.nrows() == m.ncols() && m == &m.transpose() {
        return match sym_eig_desc(m) {
            Ok(e) => e.values.amax(),
            Err(_) => f64::NAN,
        };
    }
    svd(m).map_or(f64::NAN, |d| d.singular_values[0])
}

/// Numerical rank: count of singular values above `rtol · σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rtol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let Ok(d) = svd(m) else { return 0 };
    let s = d.singular_values;
    let cutoff = rtol * s.max();
    if s.max() == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > cutoff).count()
}
