//! Flat `key = value` experiment configuration.

use std::path::{Path, PathBuf};

use crate::dynamics::ModelParams;
use crate::error::{Error, Result};
use crate::filters::{FilterConfig, Method};
use crate::linalg::GainInverse;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelParams,
    pub m: usize,
    pub ensemble_size: usize,
    pub window_len: usize,
    pub n_windows: usize,
    pub sigma_obs: f64,
    /// Inflation of the stochastic filters.
    pub lambda_infl: f64,
    /// Inflation of QPCA-EnDCF.
    pub lambda_infl_qpca: f64,
    pub kappa: usize,
    pub gain_inverse: GainInverse,
    pub n_trials: usize,
    pub methods: Vec<Method>,
    pub output_dir: PathBuf,
    pub base_seed: u64,
    pub sigma_init: f64,
    pub spinup_time: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let f = FilterConfig::baseline(Method::SeqEnkf);
        Self {
            model: f.model,
            m: f.m,
            ensemble_size: f.ensemble_size,
            window_len: f.window_len,
            n_windows: f.n_windows,
            sigma_obs: f.sigma_obs,
            lambda_infl: Method::SeqEnkf.baseline_inflation(),
            lambda_infl_qpca: Method::QpcaEndcf.baseline_inflation(),
            kappa: f.kappa,
            gain_inverse: f.gain_inverse,
            n_trials: 5,
            methods: Method::ALL.to_vec(),
            output_dir: PathBuf::from("out"),
            base_seed: 42,
            sigma_init: 1.0,
            spinup_time: 10.0,
        }
    }
}

fn config_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| config_err(key, format!("cannot parse `{value}`: {e}")))
}

/// `all` or a comma-separated list of method names.
pub fn parse_methods(value: &str) -> Result<Vec<Method>> {
    if value.trim() == "all" {
        return Ok(Method::ALL.to_vec());
    }
    let mut out = Vec::new();
    for part in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let m: Method = part
            .parse()
            .map_err(|e: Error| config_err("methods", e.to_string()))?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    out.sort();
    Ok(out)
}

impl ExperimentConfig {
    /// `K = W L`.
    pub fn total_obs(&self) -> usize {
        self.n_windows * self.window_len
    }

    pub fn filter_config(&self, method: Method) -> FilterConfig {
        FilterConfig {
            method,
            m: self.m,
            ensemble_size: self.ensemble_size,
            window_len: self.window_len,
            n_windows: self.n_windows,
            sigma_obs: self.sigma_obs,
            lambda_infl: if method.is_stochastic() {
                self.lambda_infl
            } else {
                self.lambda_infl_qpca
            },
            kappa: self.kappa,
            model: self.model,
            gain_inverse: self.gain_inverse,
        }
    }

    /// Parses a document; keys not present keep their baseline values.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut tikhonov = false;
        let mut epsilon = 1e-8;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(config_err(
                    "<syntax>",
                    format!("line {}: expected `key = value`, got `{line}`", lineno + 1),
                ));
            };
            let key = key.trim();
            let value = value.trim();
            match key {
                "n" => cfg.model.n = parse_num(key, value)?,
                "forcing" | "F" => cfg.model.forcing = parse_num(key, value)?,
                "dt" => cfg.model.dt = parse_num(key, value)?,
                "t_obs" => cfg.model.t_obs = parse_num(key, value)?,
                "m" => cfg.m = parse_num(key, value)?,
                "N" | "ensemble_size" => cfg.ensemble_size = parse_num(key, value)?,
                "L" | "window_len" => cfg.window_len = parse_num(key, value)?,
                "W" | "n_windows" => cfg.n_windows = parse_num(key, value)?,
                "sigma_obs" => cfg.sigma_obs = parse_num(key, value)?,
                "lambda_infl" => cfg.lambda_infl = parse_num(key, value)?,
                "lambda_infl_qpca" => cfg.lambda_infl_qpca = parse_num(key, value)?,
                "kappa" => cfg.kappa = parse_num(key, value)?,
                "gain_inverse" => {
                    tikhonov = match value {
                        "pinv" => false,
                        "tikhonov" => true,
                        other => {
                            return Err(config_err(
                                key,
                                format!("expected `pinv` or `tikhonov`, got `{other}`"),
                            ))
                        }
                    }
                }
                "tikhonov_epsilon" => epsilon = parse_num(key, value)?,
                "n_trials" => cfg.n_trials = parse_num(key, value)?,
                "methods" => cfg.methods = parse_methods(value)?,
                "output_dir" => cfg.output_dir = PathBuf::from(value),
                "seed" | "base_seed" => cfg.base_seed = parse_num(key, value)?,
                "sigma_init" => cfg.sigma_init = parse_num(key, value)?,
                "spinup_time" => cfg.spinup_time = parse_num(key, value)?,
                other => return Err(config_err(other, "unknown key")),
            }
        }
        if tikhonov {
            cfg.gain_inverse = GainInverse::Tikhonov { epsilon };
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.n < 4 {
            return Err(config_err("n", format!("must be >= 4, got {}", m.n)));
        }
        if !(m.dt > 0.0) || !m.dt.is_finite() {
            return Err(config_err("dt", format!("must be > 0, got {}", m.dt)));
        }
        if !m.forcing.is_finite() {
            return Err(config_err("forcing", "must be finite"));
        }
        if m.validate().is_err() {
            return Err(config_err(
                "t_obs",
                format!("must be a positive multiple of dt = {}", m.dt),
            ));
        }
        if self.m == 0 || 2 * (self.m - 1) >= m.n {
            return Err(config_err(
                "m",
                format!("must be in [1, {}], got {}", m.n.div_ceil(2), self.m),
            ));
        }
        if self.ensemble_size < 2 {
            return Err(config_err(
                "N",
                format!("must be >= 2, got {}", self.ensemble_size),
            ));
        }
        if self.window_len == 0 {
            return Err(config_err("L", "must be >= 1"));
        }
        if self.n_windows < 2 {
            return Err(config_err(
                "W",
                "spread-skill diagnostics need at least 2 windows",
            ));
        }
        if !(self.sigma_obs > 0.0) || !self.sigma_obs.is_finite() {
            return Err(config_err(
                "sigma_obs",
                format!("must be > 0, got {}", self.sigma_obs),
            ));
        }
        if !(self.lambda_infl >= 1.0) || !self.lambda_infl.is_finite() {
            return Err(config_err(
                "lambda_infl",
                format!("must be >= 1, got {}", self.lambda_infl),
            ));
        }
        if !(self.lambda_infl_qpca >= 1.0) || !self.lambda_infl_qpca.is_finite() {
            return Err(config_err(
                "lambda_infl_qpca",
                format!("must be >= 1, got {}", self.lambda_infl_qpca),
            ));
        }
        let max_kappa = (self.m * self.window_len).min(self.ensemble_size - 1);
        if self.kappa == 0 || self.kappa > max_kappa {
            return Err(config_err(
                "kappa",
                format!("must be in [1, {max_kappa}], got {}", self.kappa),
            ));
        }
        if let GainInverse::Tikhonov { epsilon } = self.gain_inverse {
            if !(epsilon > 0.0) {
                return Err(config_err(
                    "tikhonov_epsilon",
                    format!("must be > 0, got {epsilon}"),
                ));
            }
        }
        if self.n_trials == 0 {
            return Err(config_err("n_trials", "must be >= 1"));
        }
        if self.methods.is_empty() {
            return Err(config_err("methods", "must name at least one method"));
        }
        if !(self.sigma_init >= 0.0) || !self.sigma_init.is_finite() {
            return Err(config_err(
                "sigma_init",
                format!("must be >= 0, got {}", self.sigma_init),
            ));
        }
        if !(self.spinup_time >= 0.0) || !self.spinup_time.is_finite() {
            return Err(config_err(
                "spinup_time",
                format!("must be >= 0, got {}", self.spinup_time),
            ));
        }
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    ExperimentConfig::parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key_of(e: Error) -> String {
        match e {
            Error::Config { key, .. } => key,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn empty_is_baseline() {
        let c = ExperimentConfig::parse("").unwrap();
        assert_eq!(c.model.n, 40);
        assert_eq!(c.m, 20);
        assert_eq!(c.ensemble_size, 10);
        assert_eq!(c.window_len, 5);
        assert_eq!(c.n_windows, 50);
        assert_eq!(c.sigma_obs, 1.5);
        assert_eq!(c.kappa, 1);
        assert_eq!(c.base_seed, 42);
        assert_eq!(c.n_trials, 5);
        assert_eq!(c.lambda_infl, 1.05);
        assert_eq!(c.lambda_infl_qpca, 1.0);
        assert_eq!(c.total_obs(), 250);
        assert_eq!(c.methods, Method::ALL.to_vec());
    }

    #[test]
    fn comments_and_overrides() {
        let c = ExperimentConfig::parse(
            "# test\nN = 20   # members\nmethods = qpca-endcf, seq-enkf\nseed=7\n",
        )
        .unwrap();
        assert_eq!(c.ensemble_size, 20);
        assert_eq!(c.base_seed, 7);
        assert_eq!(c.methods, vec![Method::SeqEnkf, Method::QpcaEndcf]);
    }

    #[test]
    fn kappa_zero_rejected() {
        assert_eq!(
            key_of(ExperimentConfig::parse("kappa = 0").unwrap_err()),
            "kappa"
        );
    }

    #[test]
    fn unknown_key_rejected() {
        assert_eq!(
            key_of(ExperimentConfig::parse("sigam_obs = 1").unwrap_err()),
            "sigam_obs"
        );
    }

    #[test]
    fn violations_name_the_key() {
        assert_eq!(
            key_of(ExperimentConfig::parse("sigma_obs = -1").unwrap_err()),
            "sigma_obs"
        );
        assert_eq!(
            key_of(ExperimentConfig::parse("lambda_infl = 0.9").unwrap_err()),
            "lambda_infl"
        );
        assert_eq!(
            key_of(ExperimentConfig::parse("n_trials = 0").unwrap_err()),
            "n_trials"
        );
        assert_eq!(key_of(ExperimentConfig::parse("N = 1").unwrap_err()), "N");
        assert_eq!(key_of(ExperimentConfig::parse("W = 1").unwrap_err()), "W");
        assert_eq!(key_of(ExperimentConfig::parse("N = abc").unwrap_err()), "N");
        assert_eq!(
            key_of(ExperimentConfig::parse("methods = ,").unwrap_err()),
            "methods"
        );
        assert_eq!(
            key_of(ExperimentConfig::parse("t_obs = 0.015").unwrap_err()),
            "t_obs"
        );
    }

    #[test]
    fn tikhonov_inverse() {
        let c =
            ExperimentConfig::parse("gain_inverse = tikhonov\ntikhonov_epsilon = 1e-4").unwrap();
        assert_eq!(c.gain_inverse, GainInverse::Tikhonov { epsilon: 1e-4 });
    }

    #[test]
    fn per_method_inflation() {
        let c = ExperimentConfig::default();
        assert_eq!(c.filter_config(Method::FourdEnkf).lambda_infl, 1.05);
        assert_eq!(c.filter_config(Method::QpcaEndcf).lambda_infl, 1.0);
    }
}
