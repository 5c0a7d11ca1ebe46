//! Per-run manifest, metrics row and timing record.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::defaults::MANIFEST_SCHEMA;
use crate::error::{Error, Result};
use crate::metrics::{MetricsRecord, TRIVIAL_MEAN_TOL, TRIVIAL_SPREAD_TOL};
use crate::nonlocal_ref::Snapshot;

/// Where the training data came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRef {
    pub content_hash: String,
    pub mesh_id: String,
    pub lf: f64,
    pub config_hash: String,
    pub gauss_points: usize,
    pub mean_eps_eq: f64,
}

impl SnapshotRef {
    pub fn of(snap: &Snapshot) -> Result<Self> {
        Ok(Self {
            content_hash: snap.content_hash()?,
            mesh_id: snap.manifest.mesh_id.clone(),
            lf: snap.manifest.lf,
            config_hash: snap.manifest.config_hash.clone(),
            gauss_points: snap.manifest.gauss_points,
            mean_eps_eq: snap.manifest.mean_eps_eq,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed { stage: String, message: String },
}

/// Outcome of running the trained network inside the Newton solver on one
/// mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IfennSummary {
    pub mesh_id: String,
    pub lf: f64,
    pub converged: bool,
    pub iterations: usize,
    pub residual_norms: Vec<f64>,
    pub increment_norms: Vec<f64>,
    /// Relative L2 distance of the damage field to the staggered reference.
    pub damage_rel_l2: Option<f64>,
    pub max_damage: Option<f64>,
    pub message: Option<String>,
}

/// Evaluation of a trained network on a (possibly different) snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossMeshEntry {
    pub mesh_id: String,
    pub gauss_points: usize,
    pub l2rse: f64,
    pub l2rse_norm: f64,
    pub ifenn: IfennSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub trivial_spread: f64,
    pub trivial_mean: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            trivial_spread: TRIVIAL_SPREAD_TOL,
            trivial_mean: TRIVIAL_MEAN_TOL,
        }
    }
}

/// Everything needed to reproduce and judge one run. Wall-clock numbers
/// live in `timing.json` so that repeated runs give identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: u32,
    pub code_version: String,
    pub status: RunStatus,
    pub label: String,
    pub config: RunConfig,
    pub config_hash: String,
    pub seed: u64,
    pub snapshot: SnapshotRef,
    pub metrics: MetricsRecord,
    pub thresholds: Thresholds,
    #[serde(default)]
    pub cross_mesh: Vec<CrossMeshEntry>,
}

impl RunManifest {
    pub fn new(config: RunConfig, config_hash: String, snapshot: SnapshotRef) -> Self {
        Self {
            schema: MANIFEST_SCHEMA,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            status: RunStatus::Completed,
            label: config.label(),
            seed: config.seed,
            config,
            config_hash,
            snapshot,
            metrics: MetricsRecord::default(),
            thresholds: Thresholds::default(),
            cross_mesh: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(Error::InvalidArgument(format!("{}: manifest schema {} is not supported", path.display(), m.schema)));
        }
        Ok(m)
    }

    pub fn completed(&self) -> bool {
        self.status == RunStatus::Completed
    }

    /// Flat row for `metrics.csv`.
    pub fn row(&self) -> MetricsRow {
        let m = &self.metrics;
        MetricsRow {
            label: self.label.clone(),
            layers: self.config.layers,
            width: self.config.width,
            ep: self.config.ep,
            lr: self.config.lr,
            seed: self.seed,
            mesh_id: self.snapshot.mesh_id.clone(),
            gauss_points: m.gauss_points,
            completed: self.completed(),
            j_adam: m.j_adam_end,
            j_lbfgs: m.j_lbfgs_end,
            j_adam_norm: m.j_adam_norm(),
            j_lbfgs_norm: m.j_lbfgs_norm(),
            l2rse_adam: m.l2rse_adam_end,
            l2rse_lbfgs: m.l2rse_lbfgs_end,
            l2rse_adam_norm: m.l2rse_adam_norm(),
            l2rse_lbfgs_norm: m.l2rse_lbfgs_norm(),
            s_delta_theta: m.s_delta_theta,
            iter_lbfgs: m.iter_lbfgs,
            eps_bar_max_rel_error: m.eps_bar_max_rel_error,
            argmax_match: m.eps_bar_argmax_match,
            trivial: m.trivial.map(|t| t.flag),
            iter_ifenn: m.iter_ifenn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub label: String,
    #[serde(rename = "L")]
    pub layers: usize,
    #[serde(rename = "N")]
    pub width: usize,
    pub ep: usize,
    pub lr: f64,
    pub seed: u64,
    pub mesh_id: String,
    pub gauss_points: usize,
    pub completed: bool,
    pub j_adam: Option<f64>,
    pub j_lbfgs: Option<f64>,
    pub j_adam_norm: Option<f64>,
    pub j_lbfgs_norm: Option<f64>,
    pub l2rse_adam: Option<f64>,
    pub l2rse_lbfgs: Option<f64>,
    pub l2rse_adam_norm: Option<f64>,
    pub l2rse_lbfgs_norm: Option<f64>,
    pub s_delta_theta: Option<f64>,
    pub iter_lbfgs: Option<usize>,
    pub eps_bar_max_rel_error: Option<f64>,
    pub argmax_match: Option<bool>,
    pub trivial: Option<bool>,
    pub iter_ifenn: Option<usize>,
}

impl MetricsRow {
    pub fn write_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Vec<MetricsRow>> {
        let mut r = csv::Reader::from_path(path)?;
        r.deserialize().map(|row| row.map_err(Error::from)).collect()
    }
}

/// Wall-clock figures, kept out of the manifest.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timing {
    pub adam_seconds: f64,
    /// Mean seconds per 100 Adam epochs.
    pub adam_rt100: f64,
    pub lbfgs_seconds: f64,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
