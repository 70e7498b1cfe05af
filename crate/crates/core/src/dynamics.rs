//! Lorenz-96 vector field, RK4 stepping and the tangent-linear model of
//! the discrete RK4 map.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type StateVector = DVector<f64>;

/// States with any component beyond this magnitude are treated as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub n: usize,
    pub forcing: f64,
    pub dt: f64,
    pub t_obs: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            n: 40,
            forcing: 8.0,
            dt: 0.01,
            t_obs: 0.1,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(Error::InvalidInput(format!(
                "n must be >= 4, got {}",
                self.n
            )));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidInput(format!(
                "dt must be > 0, got {}",
                self.dt
            )));
        }
        if !self.forcing.is_finite() {
            return Err(Error::InvalidInput("forcing must be finite".into()));
        }
        let ratio = self.t_obs / self.dt;
        if !(self.t_obs > 0.0) || (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidInput(format!(
                "t_obs ({}) must be a positive integer multiple of dt ({})",
                self.t_obs, self.dt
            )));
        }
        Ok(())
    }

    /// RK4 steps per observation interval.
    pub fn steps_per_obs(&self) -> usize {
        (self.t_obs / self.dt).round() as usize
    }
}

/// Writes `dx/dt` for Lorenz-96 into `out` (cyclic indices).
pub fn l96_rhs_into(x: &[f64], forcing: f64, out: &mut [f64]) {
    let n = x.len();
    for i in 0..n {
        let ip1 = if i + 1 == n { 0 } else { i + 1 };
        let im1 = if i == 0 { n - 1 } else { i - 1 };
        let im2 = if i >= 2 { i - 2 } else { n + i - 2 };
        out[i] = (x[ip1] - x[im2]) * x[im1] - x[i] + forcing;
    }
}

pub fn l96_rhs(x: &StateVector, params: &ModelParams) -> StateVector {
    let mut out = DVector::zeros(x.len());
    l96_rhs_into(x.as_slice(), params.forcing, out.as_mut_slice());
    out
}

fn rk4_step_raw(x: &[f64], forcing: f64, dt: f64, scratch: &mut Rk4Scratch, out: &mut [f64]) {
    let n = x.len();
    let Rk4Scratch {
        k1,
        k2,
        k3,
        k4,
        tmp,
    } = scratch;
    l96_rhs_into(x, forcing, k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k1[i];
    }
    l96_rhs_into(tmp, forcing, k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k2[i];
    }
    l96_rhs_into(tmp, forcing, k3);
    for i in 0..n {
        tmp[i] = x[i] + dt * k3[i];
    }
    l96_rhs_into(tmp, forcing, k4);
    for i in 0..n {
        out[i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Scratch {
    fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }
}

fn check_dim(x: &StateVector, params: &ModelParams) -> Result<()> {
    if x.len() != params.n {
        return Err(Error::DimensionMismatch(format!(
            "state has {} components, model expects {}",
            x.len(),
            params.n
        )));
    }
    Ok(())
}

fn guard(x: &[f64], step: usize) -> Result<()> {
    let mut worst = 0.0f64;
    for &v in x {
        if !v.is_finite() {
            return Err(Error::Divergence {
                step,
                magnitude: f64::INFINITY,
            });
        }
        worst = worst.max(v.abs());
    }
    if worst > DIVERGENCE_THRESHOLD {
        return Err(Error::Divergence {
            step,
            magnitude: worst,
        });
    }
    Ok(())
}

/// One classical RK4 step of size `params.dt`.
pub fn rk4_step(x: &StateVector, params: &ModelParams) -> Result<StateVector> {
    check_dim(x, params)?;
    guard(x.as_slice(), 0)?;
    let mut out = DVector::zeros(x.len());
    let mut scratch = Rk4Scratch::new(x.len());
    rk4_step_raw(
        x.as_slice(),
        params.forcing,
        params.dt,
        &mut scratch,
        out.as_mut_slice(),
    );
    guard(out.as_slice(), 1)?;
    Ok(out)
}

/// Applies `n_steps` RK4 steps. Composition is bit-exact:
/// `propagate(x, a + b) == propagate(propagate(x, a), b)`.
pub fn propagate(x: &StateVector, n_steps: usize, params: &ModelParams) -> Result<StateVector> {
    check_dim(x, params)?;
    guard(x.as_slice(), 0)?;
    let n = x.len();
    let mut cur = x.as_slice().to_vec();
    let mut next = vec![0.0; n];
    let mut scratch = Rk4Scratch::new(n);
    for step in 1..=n_steps {
        rk4_step_raw(&cur, params.forcing, params.dt, &mut scratch, &mut next);
        guard(&next, step)?;
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(DVector::from_vec(cur))
}

/// Advances one observation interval (`t_obs / dt` RK4 steps).
pub fn forecast(x: &StateVector, params: &ModelParams) -> Result<StateVector> {
    propagate(x, params.steps_per_obs(), params)
}

/// Truth spin-up: `F·1` with `+0.01` on component 0, integrated for
/// `spinup_time` model time units.
pub fn spin_up_truth(params: &ModelParams, spinup_time: f64) -> Result<StateVector> {
    params.validate()?;
    let mut x = DVector::from_element(params.n, params.forcing);
    x[0] += 0.01;
    let steps = (spinup_time / params.dt).round() as usize;
    propagate(&x, steps, params)
}

/// Analytic Jacobian of the Lorenz-96 vector field at `x`.
pub fn l96_jacobian(x: &StateVector, _params: &ModelParams) -> DMatrix<f64> {
    let n = x.len();
    let mut j = DMatrix::zeros(n, n);
    for i in 0..n {
        let ip1 = (i + 1) % n;
        let im1 = (i + n - 1) % n;
        let im2 = (i + n - 2) % n;
        j[(i, im1)] += x[ip1] - x[im2];
        j[(i, ip1)] += x[im1];
        j[(i, im2)] -= x[im1];
        j[(i, i)] -= 1.0;
    }
    j
}

/// Jacobian of one discrete RK4 step evaluated at `x`, returned with the
/// stepped state.
pub fn rk4_step_jacobian(x: &StateVector, params: &ModelParams) -> (StateVector, DMatrix<f64>) {
    let n = x.len();
    let dt = params.dt;
    let eye = DMatrix::<f64>::identity(n, n);

    let k1 = l96_rhs(x, params);
    let x2 = x + &k1 * (0.5 * dt);
    let k2 = l96_rhs(&x2, params);
    let x3 = x + &k2 * (0.5 * dt);
    let k3 = l96_rhs(&x3, params);
    let x4 = x + &k3 * dt;
    let k4 = l96_rhs(&x4, params);

    let dk1 = l96_jacobian(x, params);
    let dk2 = l96_jacobian(&x2, params) * (&eye + &dk1 * (0.5 * dt));
    let dk3 = l96_jacobian(&x3, params) * (&eye + &dk2 * (0.5 * dt));
    let dk4 = l96_jacobian(&x4, params) * (&eye + &dk3 * dt);

    let next = x + (&k1 + &k2 * 2.0 + &k3 * 2.0 + &k4) * (dt / 6.0);
    let jac = &eye + (dk1 + dk2 * 2.0 + dk3 * 2.0 + dk4) * (dt / 6.0);
    (next, jac)
}

/// Cumulative propagators `M_ℓ` (ℓ = 1..L) mapping a perturbation at the
/// first reference state to observation time ℓ. `M_0 = I` is implicit.
#[derive(Debug, Clone)]
pub struct TangentLinearOperator {
    pub matrices: Vec<DMatrix<f64>>,
}

impl TangentLinearOperator {
    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    /// Stacked linearized observation map `[H M_1; …; H M_L]`.
    pub fn stacked_observation_jacobian(&self, h: &DMatrix<f64>) -> DMatrix<f64> {
        let m = h.nrows();
        let n = h.ncols();
        let mut out = DMatrix::zeros(m * self.matrices.len(), n);
        for (l, ml) in self.matrices.iter().enumerate() {
            out.rows_mut(l * m, m).copy_from(&(h * ml));
        }
        out
    }
}

/// Linearizes the flow along `reference` (L+1 states at consecutive
/// observation times). The RK4 sub-steps are re-integrated from
/// `reference[0]`; the supplied endpoints must agree with them.
pub fn tlm_propagate(
    reference: &[StateVector],
    params: &ModelParams,
) -> Result<TangentLinearOperator> {
    params.validate()?;
    if reference.len() < 2 {
        return Err(Error::InvalidInput(
            "tangent-linear model needs at least two reference states".into(),
        ));
    }
    check_dim(&reference[0], params)?;
    let n = params.n;
    let steps = params.steps_per_obs();
    let mut x = reference[0].clone();
    let mut cumulative = DMatrix::<f64>::identity(n, n);
    let mut matrices = Vec::with_capacity(reference.len() - 1);
    for (l, target) in reference.iter().enumerate().skip(1) {
        for _ in 0..steps {
            let (next, jac) = rk4_step_jacobian(&x, params);
            cumulative = jac * cumulative;
            x = next;
        }
        guard(x.as_slice(), l * steps)?;
        let scale = target.amax().max(1.0);
        if (&x - target).amax() > 1e-8 * scale {
            return Err(Error::InvalidInput(format!(
                "reference state {l} is not the model trajectory from reference[0]"
            )));
        }
        matrices.push(cumulative.clone());
    }
    Ok(TangentLinearOperator { matrices })
}
