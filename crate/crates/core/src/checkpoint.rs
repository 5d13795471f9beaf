//! Network checkpoints and optimizer state.
//!
//! `<base>.ckpt.json` is the header, `<base>.ckpt.f32` (or `.f64`) the raw
//! little-endian `theta` in canonical order. Adam moments sit next to it as
//! `<base>.adam.json` + `<base>.adam.f32`, holding `m` then `v`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{DomainSpec, GridSpec};
use crate::error::{Error, Result};
use crate::field_io::sha256_hex;
use crate::network::{NetworkConfig, NetworkParams};
use crate::optim::AdamState;
use crate::real::{Precision, Real};

pub const CHECKPOINT_FORMAT: &str = "adpinn-ckpt/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub config: NetworkConfig,
    pub precision: Precision,
    /// Master seed and the labelled derivations leading to the init seed.
    pub seed_lineage: Vec<String>,
    pub theta_len: usize,
    pub sha256: String,
    /// Problem the network was trained on, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    /// Adam updates applied so far.
    #[serde(default)]
    pub iterations: usize,
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let s = base.to_string_lossy();
    let stem = s.strip_suffix(".ckpt.json").unwrap_or(&s);
    PathBuf::from(format!("{stem}{suffix}"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<F> {
    pub header: CheckpointHeader,
    pub params: NetworkParams<F>,
}

impl<F: Real> Checkpoint<F> {
    pub fn new(params: NetworkParams<F>, seed_lineage: Vec<String>) -> Self {
        let mut config = params.config;
        config.precision = F::PRECISION;
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.into(),
            config,
            precision: F::PRECISION,
            seed_lineage,
            theta_len: params.len(),
            sha256: sha256_hex(&F::write_le(&params.theta)),
            domain: None,
            grid: None,
            iterations: 0,
        };
        Self { header, params }
    }

    pub fn save(&self, base: &Path) -> Result<()> {
        let json_path = with_suffix(base, ".ckpt.json");
        let data_path = with_suffix(base, &format!(".ckpt.{}", F::PRECISION.extension()));
        let mut header = self.header.clone();
        header.sha256 = sha256_hex(&F::write_le(&self.params.theta));
        header.theta_len = self.params.len();
        fs::write(&json_path, serde_json::to_string_pretty(&header)?).map_err(|e| Error::io(&json_path, e))?;
        fs::write(&data_path, F::write_le(&self.params.theta)).map_err(|e| Error::io(&data_path, e))
    }

    pub fn load(base: &Path) -> Result<Self> {
        let header = read_header(base)?;
        if header.precision != F::PRECISION {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?} checkpoint", F::PRECISION),
                found: format!("{:?}", header.precision),
            });
        }
        let data_path = with_suffix(base, &format!(".ckpt.{}", F::PRECISION.extension()));
        let bytes = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
        if sha256_hex(&bytes) != header.sha256 {
            return Err(Error::Corrupt { path: data_path, reason: "checksum mismatch".into() });
        }
        let theta = F::read_le(&bytes).ok_or_else(|| Error::Corrupt { path: data_path.clone(), reason: "truncated".into() })?;
        if theta.len() != header.theta_len {
            return Err(Error::Corrupt { path: data_path, reason: format!("{} values, header says {}", theta.len(), header.theta_len) });
        }
        let params = NetworkParams::from_theta(header.config, theta)?;
        Ok(Self { header, params })
    }
}

pub fn read_header(base: &Path) -> Result<CheckpointHeader> {
    let json_path = with_suffix(base, ".ckpt.json");
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let header: CheckpointHeader = serde_json::from_str(&text)?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::Corrupt { path: json_path, reason: format!("unknown format {}", header.format) });
    }
    Ok(header)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AdamHeader {
    step: usize,
    len: usize,
    precision: Precision,
    sha256: String,
}

pub fn save_adam_state<F: Real>(state: &AdamState<F>, base: &Path) -> Result<()> {
    let json_path = with_suffix(base, ".adam.json");
    let data_path = with_suffix(base, &format!(".adam.{}", F::PRECISION.extension()));
    let mut bytes = F::write_le(&state.m);
    bytes.extend(F::write_le(&state.v));
    let header = AdamHeader { step: state.step, len: state.m.len(), precision: F::PRECISION, sha256: sha256_hex(&bytes) };
    fs::write(&json_path, serde_json::to_string_pretty(&header)?).map_err(|e| Error::io(&json_path, e))?;
    fs::write(&data_path, bytes).map_err(|e| Error::io(&data_path, e))
}

pub fn load_adam_state<F: Real>(base: &Path) -> Result<AdamState<F>> {
    let json_path = with_suffix(base, ".adam.json");
    let data_path = with_suffix(base, &format!(".adam.{}", F::PRECISION.extension()));
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let header: AdamHeader = serde_json::from_str(&text)?;
    let bytes = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
    if header.precision != F::PRECISION || sha256_hex(&bytes) != header.sha256 {
        return Err(Error::Corrupt { path: data_path, reason: "precision or checksum mismatch".into() });
    }
    let all = F::read_le(&bytes).filter(|v| v.len() == 2 * header.len).ok_or_else(|| Error::Corrupt {
        path: data_path.clone(),
        reason: "unexpected length".into(),
    })?;
    let (m, v) = all.split_at(header.len);
    Ok(AdamState { m: m.to_vec(), v: v.to_vec(), step: header.step })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::init_params;

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("net");
        let params: NetworkParams<f32> = init_params(NetworkConfig::new(2, 4), 8);
        let mut ck = Checkpoint::new(params.clone(), vec!["master=1".into(), "init".into()]);
        ck.header.iterations = 12;
        ck.save(&base).unwrap();
        assert!(dir.path().join("net.ckpt.f32").exists());
        let back = Checkpoint::<f32>::load(&dir.path().join("net.ckpt.json")).unwrap();
        assert_eq!(back.params, params);
        assert_eq!(back.header.iterations, 12);
        assert!(Checkpoint::<f64>::load(&base).is_err());
    }

    #[test]
    fn adam_state_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("net");
        let state = AdamState { m: vec![1.0f64, 2.0], v: vec![3.0, 4.0], step: 9 };
        save_adam_state(&state, &base).unwrap();
        assert_eq!(load_adam_state::<f64>(&base).unwrap(), state);
    }
}
