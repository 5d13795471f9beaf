//! Scenario configuration files (TOML).
//!
//! Every key has a default, so an empty file describes the standard setup:
//! unit square, `D = 0.01`, `v = (0.5, 0.5)`, 51×51 grid with 100 steps, a
//! 9×64 tanh network trained for 10,000 Adam iterations at `lr = 0.002`.
//!
//! ```toml
//! seed = 7
//! [network]
//! hidden_width = 128
//! [optimizer]
//! kind = "adam"
//! lr = 0.006
//! iterations = 6000
//! ```
//!
//! All randomness derives from `seed`: the network initialisation, the
//! noise streams and the sampling streams each get a labelled child seed.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{DomainSpec, GridSpec, NoiseSpec};
use crate::error::{Error, Result};
use crate::loss::{LossWeights, SamplingPlan};
use crate::network::NetworkConfig;
use crate::optim::{AdamConfig, LbfgsConfig};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseLevels {
    pub bc_abs_sigma: f64,
    pub ic_rel_sigma: f64,
    pub data_rel_sigma: f64,
}

impl Default for NoiseLevels {
    fn default() -> Self {
        let n = NoiseSpec::default();
        Self { bc_abs_sigma: n.bc_abs_sigma, ic_rel_sigma: n.ic_rel_sigma, data_rel_sigma: n.data_rel_sigma }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingCounts {
    pub n_collocation: usize,
    pub n_bc_per_edge: usize,
    pub n_ic_symbolic: usize,
    pub data_batch: usize,
    pub ic_batch: usize,
}

impl Default for SamplingCounts {
    fn default() -> Self {
        let p = SamplingPlan::default();
        Self {
            n_collocation: p.n_collocation,
            n_bc_per_edge: p.n_bc_per_edge,
            n_ic_symbolic: p.n_ic_symbolic,
            data_batch: p.data_batch,
            ic_batch: p.ic_batch,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum OptimizerKind {
    #[default]
    #[serde(rename = "adam")]
    Adam,
    #[serde(rename = "adamw")]
    AdamW,
    #[serde(rename = "adam+lbfgs")]
    AdamLbfgs,
    #[serde(rename = "adamw+lbfgs")]
    AdamWLbfgs,
}

impl OptimizerKind {
    pub fn uses_lbfgs(self) -> bool {
        matches!(self, OptimizerKind::AdamLbfgs | OptimizerKind::AdamWLbfgs)
    }

    pub fn decoupled_decay(self) -> bool {
        matches!(self, OptimizerKind::AdamW | OptimizerKind::AdamWLbfgs)
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "ADAM",
            OptimizerKind::AdamW => "ADAMW",
            OptimizerKind::AdamLbfgs => "ADAM+LBFGS",
            OptimizerKind::AdamWLbfgs => "ADAMW+LBFGS",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub iterations: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            kind: OptimizerKind::Adam,
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            epsilon: a.epsilon,
            weight_decay: a.weight_decay,
            iterations: a.iterations,
        }
    }
}

impl OptimizerSettings {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            weight_decay: self.weight_decay,
            iterations: self.iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Defaults to the canonical name, e.g. `9L-64N/ADAM/10000/lr0.002`.
    pub name: Option<String>,
    pub seed: u64,
    /// Keep wall-clock timings out of `results.csv` so reruns compare equal.
    pub deterministic: bool,
    /// Run the explicit solver even when the stability check fails.
    pub force: bool,
    pub domain: DomainSpec,
    pub grid: GridSpec,
    pub noise: NoiseLevels,
    pub network: NetworkConfig,
    pub loss: LossWeights,
    pub sampling: SamplingCounts,
    pub optimizer: OptimizerSettings,
    pub lbfgs: LbfgsConfig,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        self.grid.validate()?;
        self.network.validate()?;
        self.optimizer.adam().validate()?;
        if self.optimizer.kind.uses_lbfgs() {
            self.lbfgs.validate()?;
        }
        if !self.optimizer.kind.decoupled_decay() && self.optimizer.weight_decay != 0.0 {
            return Err(Error::InvalidConfig("optimizer.weight_decay requires kind = \"adamw\"".into()));
        }
        if self.loss.w_ic < 0.0 || self.loss.w_data < 0.0 {
            return Err(Error::InvalidConfig("loss weights must be >= 0".into()));
        }
        Ok(())
    }

    /// `9L-64N/ADAM/10000/lr0.002`.
    pub fn canonical_name(&self) -> String {
        format!(
            "{}/{}/{}/lr{}",
            self.network.arch_label(),
            self.optimizer.kind,
            self.optimizer.iterations,
            self.optimizer.lr
        )
    }

    pub fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.canonical_name())
    }

    /// Name usable inside file names.
    pub fn file_stem(&self) -> String {
        self.name().chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
    }

    pub fn init_seed(&self) -> u64 {
        rng::derive_seed(self.seed, "init")
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        NoiseSpec {
            bc_abs_sigma: self.noise.bc_abs_sigma,
            ic_rel_sigma: self.noise.ic_rel_sigma,
            data_rel_sigma: self.noise.data_rel_sigma,
            seed: rng::derive_seed(self.seed, "noise"),
        }
    }

    pub fn sampling_plan(&self) -> SamplingPlan {
        let s = self.sampling;
        SamplingPlan {
            n_collocation: s.n_collocation,
            n_bc_per_edge: s.n_bc_per_edge,
            n_ic_symbolic: s.n_ic_symbolic,
            data_batch: s.data_batch,
            ic_batch: s.ic_batch,
            seed: rng::derive_seed(self.seed, "sampling"),
        }
    }

    pub fn lbfgs_config(&self) -> Option<LbfgsConfig> {
        self.optimizer.kind.uses_lbfgs().then_some(self.lbfgs)
    }
}

/// Benchmark suite: an optional `[base]` table merged under every
/// `[[scenario]]` entry.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub scenarios: Vec<ScenarioConfig>,
}

fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

impl SuiteConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut root: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        let base = match root.remove("base") {
            Some(toml::Value::Table(t)) => t,
            Some(_) => return Err(Error::InvalidConfig("`base` must be a table".into())),
            None => toml::Table::new(),
        };
        let entries = match root.remove("scenario") {
            Some(toml::Value::Array(a)) => a,
            Some(_) => return Err(Error::InvalidConfig("`scenario` must be an array of tables".into())),
            None => Vec::new(),
        };
        if let Some(key) = root.keys().next() {
            return Err(Error::InvalidConfig(format!("unknown suite key `{key}`")));
        }
        if entries.is_empty() {
            return Err(Error::InvalidConfig("suite lists no scenarios".into()));
        }
        let mut scenarios = Vec::with_capacity(entries.len());
        for (i, entry) in entries.into_iter().enumerate() {
            let toml::Value::Table(t) = entry else {
                return Err(Error::InvalidConfig(format!("scenario[{i}] is not a table")));
            };
            let mut merged = base.clone();
            merge(&mut merged, &t);
            let cfg: ScenarioConfig = merged
                .try_into()
                .map_err(|e: toml::de::Error| Error::InvalidConfig(format!("scenario[{i}]: {e}")))?;
            cfg.validate()?;
            scenarios.push(cfg);
        }
        let mut seen = HashSet::new();
        for s in &scenarios {
            if !seen.insert(s.name()) {
                return Err(Error::InvalidConfig(format!("duplicate scenario name `{}`", s.name())));
            }
        }
        Ok(Self { scenarios })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_standard_setup() {
        let cfg = ScenarioConfig::from_toml_str("").unwrap();
        assert_eq!(cfg.domain, DomainSpec::default());
        assert_eq!(cfg.grid, GridSpec::default());
        assert_eq!(cfg.loss, LossWeights { w_ic: 500.0, w_data: 10.0 });
        assert_eq!(cfg.sampling.data_batch, 1024);
        assert_eq!(cfg.sampling.ic_batch, 1024);
        assert_eq!(cfg.sampling.n_collocation, 200);
        assert_eq!(cfg.network, NetworkConfig::new(9, 64));
        assert_eq!(cfg.canonical_name(), "9L-64N/ADAM/10000/lr0.002");
        assert_eq!(cfg.file_stem(), "9L-64N_ADAM_10000_lr0.002");
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ScenarioConfig::from_toml_str("[network]\nhidden_widht = 3\n").unwrap_err();
        assert!(err.to_string().contains("hidden_widht"), "{err}");
    }

    #[test]
    fn weight_decay_needs_adamw() {
        assert!(ScenarioConfig::from_toml_str("[optimizer]\nweight_decay = 0.1\n").is_err());
        let cfg = ScenarioConfig::from_toml_str("[optimizer]\nkind = \"adamw\"\nweight_decay = 0.1\n").unwrap();
        assert_eq!(cfg.canonical_name(), "9L-64N/ADAMW/10000/lr0.002");
    }

    #[test]
    fn seeds_fan_out_from_master() {
        let a = ScenarioConfig::from_toml_str("seed = 1").unwrap();
        let b = ScenarioConfig::from_toml_str("seed = 2").unwrap();
        assert_ne!(a.noise_spec().seed, b.noise_spec().seed);
        assert_ne!(a.init_seed(), a.noise_spec().seed);
        assert_ne!(a.sampling_plan().seed, a.init_seed());
    }

    #[test]
    fn suite_merges_base_and_rejects_duplicates() {
        let text = r#"
            [base]
            seed = 3
            [base.optimizer]
            iterations = 10
            [[scenario]]
            [scenario.optimizer]
            lr = 0.005
            [[scenario]]
            name = "wide"
            [scenario.network]
            hidden_width = 128
        "#;
        let suite = SuiteConfig::from_toml_str(text).unwrap();
        assert_eq!(suite.scenarios.len(), 2);
        assert_eq!(suite.scenarios[0].optimizer.iterations, 10);
        assert_eq!(suite.scenarios[0].optimizer.lr, 0.005);
        assert_eq!(suite.scenarios[1].seed, 3);
        assert_eq!(suite.scenarios[1].name(), "wide");

        let dup = "[[scenario]]\n[[scenario]]\n";
        assert!(SuiteConfig::from_toml_str(dup).unwrap_err().to_string().contains("duplicate"));
        assert!(SuiteConfig::from_toml_str("").is_err());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ScenarioConfig::from_toml_str("seed = 9\n[optimizer]\nkind = \"adam+lbfgs\"\n").unwrap();
        assert_eq!(ScenarioConfig::from_toml_str(&cfg.to_toml()).unwrap(), cfg);
    }
}
