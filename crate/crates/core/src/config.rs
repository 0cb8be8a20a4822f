//! Experiment configuration, read from TOML or JSON.

use serde::{Deserialize, Serialize};

use crate::ao::AoConfig;
use crate::clustering::{AdmmParams, ConvergenceCriteria, MUpdate, PoolDenominator};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    Regression,
    Classification,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Regression => "regression",
            Task::Classification => "classification",
        }
    }
}

/// Where rule centers come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusteringMode {
    /// ADMM consensus over agent shards.
    #[default]
    Distributed,
    /// Lloyd's algorithm on the pooled training rows.
    Centralized,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum FoldScheme {
    Kfold { folds: usize },
    LeaveOneGroupOut,
}

impl Default for FoldScheme {
    fn default() -> Self {
        FoldScheme::Kfold { folds: 5 }
    }
}

/// Denominator of the normalized MSE.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NmseNormalizer {
    #[default]
    Variance,
    Std,
}

/// Parses the lowercase names used in configuration files.
macro_rules! from_config_name {
    ($($t:ty),*) => {$(
        impl std::str::FromStr for $t {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                serde_json::from_value(serde_json::Value::String(s.to_string()))
                    .map_err(|_| Error::Config(format!("unknown {} '{s}'", stringify!($t))))
            }
        }
    )*};
}

from_config_name!(Task, ClusteringMode, NmseNormalizer, MUpdate, PoolDenominator);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    /// Rules per branch; a single entry applies to every branch.
    pub rules: Vec<usize>,
    pub lambda: f64,
    pub mu: f64,
    pub rho: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub admm_max_iters: usize,
    pub ao_iters: usize,
    pub ao_rel_tol: Option<f64>,
    pub agents: usize,
    /// Equal contiguous feature chunks; ignored when `feature_groups` is set.
    pub branches: Option<usize>,
    pub feature_groups: Option<Vec<Vec<usize>>>,
    pub seed: u64,
    pub m_update: MUpdate,
    pub pool_denominator: PoolDenominator,
    pub clustering: ClusteringMode,
    pub folds: FoldScheme,
    pub nmse_normalizer: NmseNormalizer,
    /// Write wall-clock seconds into result rows. Off gives byte-stable output.
    pub record_timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: Task::Regression,
            rules: vec![10],
            lambda: 1e-3,
            mu: 1e-3,
            rho: 1.0,
            eps1: 1e-4,
            eps2: 1e-4,
            admm_max_iters: 200,
            ao_iters: 50,
            ao_rel_tol: None,
            agents: 5,
            branches: None,
            feature_groups: None,
            seed: 0,
            m_update: MUpdate::Exact,
            pool_denominator: PoolDenominator::Cluster,
            clustering: ClusteringMode::Distributed,
            folds: FoldScheme::default(),
            nmse_normalizer: NmseNormalizer::Variance,
            record_timing: true,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {v} must be finite and > 0")))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        positive("lambda", self.lambda)?;
        positive("mu", self.mu)?;
        positive("rho", self.rho)?;
        for (name, eps) in [("eps1", self.eps1), ("eps2", self.eps2)] {
            if !(eps >= 0.0 && eps.is_finite()) {
                return Err(Error::Config(format!("{name} = {eps} must be finite and >= 0")));
            }
        }
        if self.rules.is_empty() || self.rules.contains(&0) {
            return Err(Error::Config("rules must list at least one positive count".into()));
        }
        if self.admm_max_iters == 0 {
            return Err(Error::Config("admm_max_iters must be at least 1".into()));
        }
        if self.ao_iters == 0 {
            return Err(Error::Config("ao_iters must be at least 1".into()));
        }
        if let Some(tol) = self.ao_rel_tol {
            positive("ao_rel_tol", tol)?;
        }
        if self.agents == 0 {
            return Err(Error::Config("agents must be at least 1".into()));
        }
        if self.branches == Some(0) {
            return Err(Error::Config("branches must be at least 1".into()));
        }
        if let FoldScheme::Kfold { folds } = self.folds {
            if folds < 2 {
                return Err(Error::Config(format!("k-fold needs at least 2 folds, got {folds}")));
            }
        }
        Ok(())
    }

    /// Rule count of branch `b`.
    pub fn rules_for(&self, b: usize, branches: usize) -> Result<usize> {
        match self.rules.as_slice() {
            [k] => Ok(*k),
            ks if ks.len() == branches => Ok(ks[b]),
            ks => Err(Error::Config(format!(
                "{} rule counts given for {branches} branches",
                ks.len()
            ))),
        }
    }

    pub fn ao_config(&self) -> Result<AoConfig<f64>> {
        let mut ao = AoConfig::new(self.lambda, self.mu, self.ao_iters)?;
        ao.rel_tol = self.ao_rel_tol;
        Ok(ao)
    }

    pub fn criteria(&self) -> Result<ConvergenceCriteria<f64>> {
        ConvergenceCriteria::new(self.eps1, self.eps2, self.admm_max_iters)
    }

    /// Consensus parameters for one branch.
    pub fn admm_params(&self, rules: usize, width_floor: ndarray::Array1<f64>, seed: u64) -> Result<AdmmParams<f64>> {
        Ok(AdmmParams {
            rules,
            rho: self.rho,
            criteria: self.criteria()?,
            m_update: self.m_update,
            pool_denominator: self.pool_denominator,
            width_floor,
            seed,
        })
    }
}

/// Seed of branch `b`, decorrelated from the experiment seed.
pub fn branch_seed(seed: u64, b: usize) -> u64 {
    derive_seed(seed, 0x6272_616e_6368, b as u64)
}

/// Seed of fold `f`.
pub fn fold_seed(seed: u64, f: usize) -> u64 {
    derive_seed(seed, 0x666f_6c64, f as u64)
}

/// SplitMix64 finalizer over a (seed, stream, index) triple.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
