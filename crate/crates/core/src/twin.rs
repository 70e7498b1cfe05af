//! Synthetic truth trajectory and noisy observations for twin experiments.

use nalgebra::DVector;
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::dynamics::{forecast, spin_up_truth, ModelParams, StateVector};
use crate::error::{Error, Result};
use crate::observation::{stack_window, synthesize_obs, ObsOperator, ObservationWindow};

#[derive(Debug, Clone)]
pub struct TwinData {
    pub model: ModelParams,
    pub h: ObsOperator,
    pub sigma_obs: f64,
    /// True states at observation times `k = 0..=K`.
    pub truth: Vec<StateVector>,
    /// `observations[k - 1]` is `z_k`, `k = 1..=K`.
    pub observations: Vec<DVector<f64>>,
}

impl TwinData {
    /// Spins up the truth, then integrates `total_obs` observation
    /// intervals drawing `z_k = H x_k + η_k` from `rng`.
    pub fn generate<R: Rng + ?Sized>(
        model: ModelParams,
        h: ObsOperator,
        sigma_obs: f64,
        total_obs: usize,
        spinup_time: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if h.n() != model.n {
            return Err(Error::DimensionMismatch(format!(
                "observation operator expects n = {}, model has n = {}",
                h.n(),
                model.n
            )));
        }
        let x0 = spin_up_truth(&model, spinup_time)?;
        let mut truth = Vec::with_capacity(total_obs + 1);
        let mut observations = Vec::with_capacity(total_obs);
        truth.push(x0);
        for _ in 0..total_obs {
            let next = forecast(truth.last().unwrap(), &model)?;
            observations.push(synthesize_obs(&h, &next, sigma_obs, rng));
            truth.push(next);
        }
        Ok(Self {
            model,
            h,
            sigma_obs,
            truth,
            observations,
        })
    }

    pub fn total_obs(&self) -> usize {
        self.observations.len()
    }

    pub fn obs_at(&self, k: usize) -> &DVector<f64> {
        &self.observations[k - 1]
    }

    /// Stacked window `w` (1-based) of length `window_len`.
    pub fn window(&self, w: usize, window_len: usize) -> Result<ObservationWindow> {
        let k0 = (w - 1) * window_len;
        if k0 + window_len > self.total_obs() {
            return Err(Error::InsufficientData(format!(
                "window {w} needs observations up to k = {}, have {}",
                k0 + window_len,
                self.total_obs()
            )));
        }
        let obs = (k0 + 1..=k0 + window_len)
            .map(|k| self.obs_at(k).clone())
            .collect();
        stack_window(obs, self.sigma_obs)
    }

    /// SHA-256 over the little-endian bytes of the truth trajectory.
    pub fn truth_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for x in &self.truth {
            hash_vector(&mut hasher, x);
        }
        hex::encode(hasher.finalize())
    }
}

pub(crate) fn hash_vector(hasher: &mut Sha256, v: &DVector<f64>) {
    for value in v.iter() {
        hasher.update(value.to_le_bytes());
    }
}
