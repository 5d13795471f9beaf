//! On-disk format for concentration fields.
//!
//! A field is a pair of files sharing a basename: `<base>.meta.json` holds the
//! problem description and a SHA-256 of the payload, `<base>.f64` holds the raw
//! little-endian doubles in `[level][ix][iy]` row-major order. Full FDM
//! solutions and single-time snapshots use the same layout; a snapshot simply
//! has one level.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{DomainSpec, GridSolution, GridSpec, NoiseSpec};
use crate::error::{Error, Result};

pub const FIELD_FORMAT: &str = "adpinn-field/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMeta {
    pub format: String,
    pub domain: DomainSpec,
    pub grid: GridSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    /// Physical time of every stored level.
    pub times: Vec<f64>,
    /// `[levels, nx, ny]`.
    pub shape: [usize; 3],
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldFile {
    pub meta: FieldMeta,
    pub values: Vec<f64>,
}

impl FieldFile {
    pub fn from_solution(sol: &GridSolution, noise: Option<NoiseSpec>, tag: Option<&str>) -> Self {
        let times = (0..sol.grid.levels()).map(|k| sol.time_of(k)).collect();
        Self::build(sol.spec, sol.grid, noise, tag, times, sol.values.clone())
    }

    /// A single-level field at time `t` on `grid`'s spatial nodes.
    pub fn snapshot(spec: DomainSpec, grid: GridSpec, t: f64, tag: &str, values: Vec<f64>) -> Self {
        Self::build(spec, grid, None, Some(tag), vec![t], values)
    }

    fn build(
        domain: DomainSpec,
        grid: GridSpec,
        noise: Option<NoiseSpec>,
        tag: Option<&str>,
        times: Vec<f64>,
        values: Vec<f64>,
    ) -> Self {
        let shape = [times.len(), grid.nx, grid.ny];
        assert_eq!(values.len(), shape.iter().product::<usize>());
        let meta = FieldMeta {
            format: FIELD_FORMAT.to_string(),
            domain,
            grid,
            noise,
            tag: tag.map(str::to_string),
            times,
            shape,
            sha256: checksum(&values),
        };
        Self { meta, values }
    }

    pub fn levels(&self) -> usize {
        self.meta.shape[0]
    }

    pub fn level(&self, k: usize) -> &[f64] {
        let n = self.meta.shape[1] * self.meta.shape[2];
        &self.values[k * n..(k + 1) * n]
    }

    /// Index of the stored level whose time is within `tol` of `t`.
    pub fn level_at_time(&self, t: f64, tol: f64) -> Option<usize> {
        self.meta.times.iter().position(|s| (s - t).abs() <= tol)
    }

    /// Reassembles a full solution if every level `0..=nt` is present.
    pub fn into_solution(self) -> Option<GridSolution> {
        (self.levels() == self.meta.grid.levels()).then_some(GridSolution {
            spec: self.meta.domain,
            grid: self.meta.grid,
            values: self.values,
        })
    }

    pub fn save(&self, base: &Path) -> Result<()> {
        let (meta_path, data_path) = paths(base);
        if let Some(dir) = meta_path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        let json = serde_json::to_string_pretty(&self.meta)?;
        fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))?;
        fs::write(&data_path, encode_f64(&self.values)).map_err(|e| Error::io(&data_path, e))?;
        Ok(())
    }

    pub fn load(base: &Path) -> Result<Self> {
        let (meta_path, data_path) = paths(base);
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: FieldMeta = serde_json::from_str(&text)?;
        if meta.format != FIELD_FORMAT {
            return Err(Error::Corrupt { path: meta_path, reason: format!("unknown format {}", meta.format) });
        }
        let bytes = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
        let values = decode_f64(&bytes).ok_or_else(|| Error::Corrupt {
            path: data_path.clone(),
            reason: "length is not a multiple of 8".into(),
        })?;
        let expected: usize = meta.shape.iter().product();
        if values.len() != expected || meta.times.len() != meta.shape[0] {
            return Err(Error::Corrupt {
                path: data_path,
                reason: format!("{} values for shape {:?}", values.len(), meta.shape),
            });
        }
        if checksum(&values) != meta.sha256 {
            return Err(Error::Corrupt { path: data_path, reason: "checksum mismatch".into() });
        }
        Ok(Self { meta, values })
    }

    /// Writes one level as CSV with header `t,x,y,u`.
    pub fn write_level_csv(&self, level: usize, path: &Path) -> Result<()> {
        let [_, nx, ny] = self.meta.shape;
        let dx = self.meta.domain.x_max / (nx - 1) as f64;
        let dy = self.meta.domain.y_max / (ny - 1) as f64;
        let t = self.meta.times[level];
        let mut out = String::from("t,x,y,u\n");
        for (i, u) in self.level(level).iter().enumerate() {
            let (ix, iy) = (i / ny, i % ny);
            out.push_str(&format!("{t},{},{},{u}\n", ix as f64 * dx, iy as f64 * dy));
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Strips a `.meta.json` or `.f64` suffix and returns both file paths.
pub fn paths(base: &Path) -> (PathBuf, PathBuf) {
    let s = base.to_string_lossy();
    let stem = s
        .strip_suffix(".meta.json")
        .or_else(|| s.strip_suffix(".f64"))
        .unwrap_or(&s)
        .to_string();
    (PathBuf::from(format!("{stem}.meta.json")), PathBuf::from(format!("{stem}.f64")))
}

pub fn encode_f64(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_f64(bytes: &[u8]) -> Option<Vec<f64>> {
    bytes.len().is_multiple_of(8).then(|| {
        bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn checksum(values: &[f64]) -> String {
    sha256_hex(&encode_f64(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::solve_fdm;

    #[test]
    fn solution_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = GridSpec { nx: 7, ny: 5, nt: 4 };
        let sol = solve_fdm(&DomainSpec::default(), &grid, true).unwrap();
        let file = FieldFile::from_solution(&sol, Some(NoiseSpec::default()), Some("clean"));
        let base = dir.path().join("clean");
        file.save(&base).unwrap();
        assert!(dir.path().join("clean.meta.json").exists());
        assert_eq!(fs::metadata(dir.path().join("clean.f64")).unwrap().len(), 8 * 7 * 5 * 5);

        let back = FieldFile::load(&dir.path().join("clean.meta.json")).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.into_solution().unwrap(), sol);
    }

    #[test]
    fn tampered_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("snap");
        let grid = GridSpec { nx: 3, ny: 3, nt: 1 };
        FieldFile::snapshot(DomainSpec::default(), grid, 0.25, "pinn", vec![1.0; 9]).save(&base).unwrap();
        let mut bytes = fs::read(dir.path().join("snap.f64")).unwrap();
        bytes[0] ^= 1;
        fs::write(dir.path().join("snap.f64"), bytes).unwrap();
        assert!(matches!(FieldFile::load(&base), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn level_csv_has_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let grid = GridSpec { nx: 3, ny: 4, nt: 1 };
        let snap = FieldFile::snapshot(DomainSpec::default(), grid, 0.0, "ic", (0..12).map(f64::from).collect());
        let path = dir.path().join("ic.csv");
        snap.write_level_csv(0, &path).unwrap();
        let text = fs::read_to_string(path).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "t,x,y,u");
        assert_eq!(lines.len(), 13);
        assert_eq!(lines[2], format!("0,0,{},1", 1.0 / 3.0));
    }
}
