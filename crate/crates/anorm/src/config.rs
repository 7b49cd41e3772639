//! Declarative run configuration: one JSON file drives every subcommand,
//! with the common flags overridable on the command line. The resolved
//! config is hashed and the hash recorded in output metadata.

use crate::array_normal::SeparableCovariance;
use crate::bayes::{gamma_from_data, GammaPrior, GibbsConfig, PriorSpec};
use crate::error::{Error, Result};
use crate::linalg::SpdMatrix;
use crate::mle::MleConfig;
use crate::tensor::DenseArray;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ModelConfig {
    /// Array dimensions, replication mode last. Required for `simulate`,
    /// otherwise taken from the data file.
    #[serde(default)]
    pub dims: Vec<usize>,
    #[serde(default)]
    pub mode_names: Vec<String>,
    /// One-based modes whose covariance is pinned at the identity.
    #[serde(default)]
    pub identity_modes: Vec<usize>,
    /// Model the last mode as a dependent (e.g. temporal) mode instead of
    /// i.i.d. replicates.
    #[serde(default)]
    pub dependent_last_mode: bool,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub mle: MleConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dims: Vec::new(),
            mode_names: Vec::new(),
            identity_modes: Vec::new(),
            dependent_last_mode: false,
            prior: PriorConfig::default(),
            sampler: SamplerConfig::default(),
            mle: MleConfig::default(),
            simulate: SimulateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct PriorConfig {
    pub kappa0: f64,
    /// Per covariance mode; defaults to `m_k + 2`.
    #[serde(default)]
    pub nu0: Option<Vec<f64>>,
    pub gamma: GammaConfig,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig { kappa0: 1.0, nu0: None, gamma: GammaConfig::FromData }
    }
}

/// How the total-variance hyperparameter is set.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum GammaConfig {
    /// Center the prior's expected total variation at the observed sum of
    /// squares.
    FromData,
    Fixed { value: f64 },
    Prior { a: f64, b: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SamplerConfig {
    pub iters: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub chains: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { iters: 5000, burn_in: 1000, thin: 4, seed: 0, chains: 1 }
    }
}

/// Per-mode covariance component for data generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum CovCompSpec {
    Identity,
    ScaledIdentity { value: f64 },
    /// `scale * rho^{|i-j|}`.
    Ar1 { rho: f64, #[serde(default = "one")] scale: f64 },
    Explicit { values: Vec<Vec<f64>> },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SimulateConfig {
    /// Constant mean cell value.
    pub mean: f64,
    /// Per covariance mode; empty means all identity.
    #[serde(default)]
    pub covariance: Vec<CovCompSpec>,
    /// Fraction of cells masked at random.
    pub missing_fraction: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig { mean: 0.0, covariance: Vec::new(), missing_fraction: 0.0 }
    }
}

impl ModelConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    /// Hash of the resolved configuration (after command-line overrides).
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn validate(&self) -> Result<()> {
        if self.sampler.chains == 0 {
            return Err(Error::InvalidConfig("chains must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.simulate.missing_fraction) {
            return Err(Error::InvalidConfig("missing-fraction must be in [0, 1)".into()));
        }
        self.mle.validate()?;
        for &m in &self.identity_modes {
            if m == 0 {
                return Err(Error::InvalidConfig("identity modes are one-based".into()));
            }
        }
        Ok(())
    }

    /// Number of covariance modes for an order-`order` data array.
    pub fn cov_mode_count(&self, order: usize) -> usize {
        if self.dependent_last_mode {
            order
        } else {
            order - 1
        }
    }

    /// Identity flags over the covariance modes, from the one-based
    /// `identity-modes` list.
    pub fn identity_flags(&self, cov_modes: usize) -> Result<Vec<bool>> {
        let mut flags = vec![false; cov_modes];
        for &m in &self.identity_modes {
            if m == 0 || m > cov_modes {
                return Err(Error::InvalidConfig(format!(
                    "identity mode {m} out of range 1..={cov_modes}"
                )));
            }
            flags[m - 1] = true;
        }
        if flags.iter().all(|&f| f) {
            return Err(Error::InvalidConfig(
                "at least one covariance mode must be estimated".into(),
            ));
        }
        Ok(flags)
    }

    /// Build the prior for a data array (replication mode last).
    pub fn build_prior(&self, y: &DenseArray) -> Result<PriorSpec> {
        let order = y.order();
        if order < 2 {
            return Err(Error::Data("data must carry at least two modes".into()));
        }
        let cov_modes = self.cov_mode_count(order);
        let cov_dims: Vec<usize> = y.dims()[..cov_modes].to_vec();
        let mean_dims: Vec<usize> = y.dims()[..order - 1].to_vec();
        let flags = self.identity_flags(cov_modes)?;
        let gamma = match self.prior.gamma {
            GammaConfig::Fixed { value } => GammaPrior::Fixed { value },
            GammaConfig::Prior { a, b } => GammaPrior::Prior { a, b },
            GammaConfig::FromData => {
                GammaPrior::Fixed { value: gamma_from_data(y, &flags, &cov_dims)? }
            }
        };
        let mut prior = PriorSpec::defaults(&mean_dims, &cov_dims, flags, gamma)?;
        prior.kappa0 = self.prior.kappa0;
        if let Some(nu0) = &self.prior.nu0 {
            if nu0.len() != cov_modes {
                return Err(Error::InvalidConfig(format!(
                    "nu0 lists {} modes, model has {cov_modes}",
                    nu0.len()
                )));
            }
            prior.nu0 = nu0.clone();
        }
        prior.validate()?;
        Ok(prior)
    }

    pub fn gibbs_config(&self) -> GibbsConfig {
        GibbsConfig {
            n_iters: self.sampler.iters,
            burn_in: self.sampler.burn_in,
            thin: self.sampler.thin,
            seed: self.sampler.seed,
            stream: 0,
            dependent_last_mode: self.dependent_last_mode,
        }
    }

    /// Covariance for `simulate`, over the configured covariance modes.
    pub fn build_covariance(&self) -> Result<SeparableCovariance> {
        if self.dims.len() < 2 {
            return Err(Error::InvalidConfig(
                "simulate needs dims with at least two modes".into(),
            ));
        }
        let cov_modes = self.cov_mode_count(self.dims.len());
        let cov_dims = &self.dims[..cov_modes];
        if !self.simulate.covariance.is_empty() && self.simulate.covariance.len() != cov_modes {
            return Err(Error::InvalidConfig(format!(
                "covariance lists {} modes, model has {cov_modes}",
                self.simulate.covariance.len()
            )));
        }
        let mut comps = Vec::with_capacity(cov_modes);
        for (k, &m) in cov_dims.iter().enumerate() {
            let spec = self.simulate.covariance.get(k).unwrap_or(&CovCompSpec::Identity);
            comps.push(build_comp(spec, m)?);
        }
        Ok(SeparableCovariance::new(comps))
    }

    pub fn mode_names_for(&self, order: usize) -> Result<Vec<String>> {
        if self.mode_names.is_empty() {
            return Ok((1..=order).map(|k| format!("mode{k}")).collect());
        }
        if self.mode_names.len() != order {
            return Err(Error::InvalidConfig(format!(
                "{} mode names for {order} modes",
                self.mode_names.len()
            )));
        }
        Ok(self.mode_names.clone())
    }
}

fn build_comp(spec: &CovCompSpec, m: usize) -> Result<SpdMatrix> {
    match spec {
        CovCompSpec::Identity => Ok(SpdMatrix::identity(m)),
        CovCompSpec::ScaledIdentity { value } => {
            if !(*value > 0.0) {
                return Err(Error::InvalidConfig("scaled-identity needs a positive value".into()));
            }
            SpdMatrix::identity(m).scale(*value)
        }
        CovCompSpec::Ar1 { rho, scale } => {
            if rho.abs() >= 1.0 || !(*scale > 0.0) {
                return Err(Error::InvalidConfig(
                    "ar1 needs |rho| < 1 and a positive scale".into(),
                ));
            }
            SpdMatrix::new(DMatrix::from_fn(m, m, |i, j| {
                scale * rho.powi((i as i32 - j as i32).abs())
            }))
        }
        CovCompSpec::Explicit { values } => {
            if values.len() != m || values.iter().any(|r| r.len() != m) {
                return Err(Error::InvalidConfig(format!(
                    "explicit covariance must be {m}x{m}"
                )));
            }
            SpdMatrix::new(DMatrix::from_fn(m, m, |i, j| values[i][j]))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_and_hash_stably() {
        let c: ModelConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c.sampler.iters, 5000);
        assert_eq!(c.hash(), c.clone().hash());
        let mut c2 = c.clone();
        c2.sampler.seed = 1;
        assert_ne!(c.hash(), c2.hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let r: std::result::Result<ModelConfig, _> =
            serde_json::from_str(r#"{"spline-order": 3}"#);
        assert!(r.is_err());
    }

    #[test]
    fn identity_flags_reject_all_identity() {
        let c: ModelConfig =
            serde_json::from_str(r#"{"identity-modes": [1, 2]}"#).unwrap();
        assert!(c.identity_flags(2).is_err());
        assert_eq!(c.identity_flags(3).unwrap(), vec![true, true, false]);
    }

    #[test]
    fn ar1_component_matches_formula() {
        let s = build_comp(&CovCompSpec::Ar1 { rho: 0.5, scale: 2.0 }, 3).unwrap();
        assert_eq!(s.values()[(0, 2)], 2.0 * 0.25);
        assert_eq!(s.values()[(1, 1)], 2.0);
    }

    #[test]
    fn reduced_model_is_full_model_with_identity_flags() {
        // same machinery, only flags differ
        let full: ModelConfig = serde_json::from_str(r#"{"dims": [3, 3, 2, 4]}"#).unwrap();
        let reduced: ModelConfig =
            serde_json::from_str(r#"{"dims": [3, 3, 2, 4], "identity-modes": [1, 2]}"#).unwrap();
        let y = DenseArray::zeros(vec![3, 3, 2, 4]);
        let pf = full.identity_flags(full.cov_mode_count(y.order())).unwrap();
        let pr = reduced.identity_flags(reduced.cov_mode_count(y.order())).unwrap();
        assert_eq!(pf, vec![false, false, false]);
        assert_eq!(pr, vec![true, true, false]);
    }

    #[test]
    fn prior_gamma_from_data_is_positive() {
        let mut rng = crate::linalg::RngStream::new(91);
        let y = DenseArray::new(vec![2, 3, 4], rng.normal_vec(24)).unwrap();
        let c: ModelConfig = serde_json::from_str("{}").unwrap();
        let prior = c.build_prior(&y).unwrap();
        match prior.gamma {
            GammaPrior::Fixed { value } => assert!(value > 0.0),
            _ => panic!("from-data resolves to a fixed value"),
        }
    }
}
