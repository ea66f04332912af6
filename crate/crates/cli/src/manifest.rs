//! The data-set manifest written by `simulate`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const MANIFEST_VERSION: u32 = 1;

/// An accepted synthetic subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    pub index: usize,
    /// Candidate draw that passed the regularity check.
    pub attempt: usize,
    pub period_s: f64,
    pub amplitude_px: f64,
    pub drift_px_per_cycle: f64,
    pub jitter_frac: f64,
    pub motion_seed: u64,
    pub regularity: f64,
}

/// A candidate breather rejected as irregular.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRecord {
    pub index: usize,
    pub attempt: usize,
    pub reason: String,
}

/// One (condition, target) pair on disk; paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub subject: String,
    pub slice: usize,
    /// `subject_index * slices + slice`; keys the per-case seeds.
    pub case: usize,
    pub accel: u32,
    pub kept_spokes: usize,
    pub x: String,
    pub y0: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub master_seed: u64,
    /// Simulation fingerprint of the config that produced the data.
    pub fingerprint: String,
    pub size: usize,
    pub n_bins: usize,
    pub full_spokes: usize,
    pub slices: usize,
    pub accelerations: Vec<u32>,
    pub kept_spokes: Vec<usize>,
    pub subjects: Vec<SubjectRecord>,
    pub rejected: Vec<RejectedRecord>,
    pub pairs: Vec<PairRecord>,
}

impl Manifest {
    pub fn subject_ids(&self) -> Vec<String> {
        self.subjects.iter().map(|s| s.id.clone()).collect()
    }

    pub fn subject(&self, id: &str) -> Option<&SubjectRecord> {
        self.subjects.iter().find(|s| s.id == id)
    }

    /// Fail unless `cfg` describes the same simulated data.
    pub fn check_config(&self, cfg: &ExperimentConfig) -> CliResult<()> {
        let fp = cfg.simulation_fingerprint();
        if fp != self.fingerprint {
            return Err(CliError::Config(format!(
                "config simulation fingerprint {fp} does not match manifest {}; use the config the data was simulated with",
                self.fingerprint
            )));
        }
        Ok(())
    }
}

/// A manifest together with the directory its paths are relative to.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: Manifest,
    pub root: PathBuf,
}

impl LoadedManifest {
    /// Load from a manifest file or from the directory containing one.
    pub fn load(path: &Path) -> CliResult<Self> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = fs::read_to_string(&file).map_err(|e| CliError::io(&file, e))?;
        let manifest: Manifest = toml::from_str(&text).map_err(|e| CliError::Data(format!("{}: {}", file.display(), e.message())))?;
        if manifest.version != MANIFEST_VERSION {
            return Err(CliError::Data(format!("{}: unsupported manifest version {}", file.display(), manifest.version)));
        }
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { manifest, root })
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> CliResult<PathBuf> {
    let path = dir.join(MANIFEST_FILE);
    let text = toml::to_string(manifest).map_err(|e| CliError::Data(format!("manifest: {e}")))?;
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}
