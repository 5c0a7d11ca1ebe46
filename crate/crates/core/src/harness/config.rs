//! Run and sweep configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::defaults;
use crate::error::{Error, Result};
use crate::net::NetworkShape;
use crate::optim::{AdamConfig, LbfgsConfig};
use crate::specimen::SpecimenConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        let a = AdamConfig::new(1.0, 1);
        Self {
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
        }
    }
}

pub fn default_lbfgs() -> LbfgsConfig {
    LbfgsConfig {
        max_iter: defaults::LBFGS_MAX_ITER,
        ..Default::default()
    }
}

/// One training case `c = [L, N, ep, lr]` plus seed and optimizer settings.
/// Paths (snapshot, output) are arguments of the run, not part of the
/// configuration, so they never enter the hash.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(rename = "L")]
    pub layers: usize,
    #[serde(rename = "N")]
    pub width: usize,
    pub ep: usize,
    pub lr: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub adam: AdamParams,
    #[serde(default = "default_lbfgs")]
    pub lbfgs: LbfgsConfig,
}

impl RunConfig {
    pub fn new(layers: usize, width: usize, ep: usize, lr: f64, seed: u64) -> Self {
        Self {
            layers,
            width,
            ep,
            lr,
            seed,
            adam: AdamParams::default(),
            lbfgs: default_lbfgs(),
        }
    }

    pub fn shape(&self) -> Result<NetworkShape> {
        NetworkShape::new(self.layers, self.width)
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam.beta1,
            beta2: self.adam.beta2,
            eps: self.adam.eps,
            epochs: self.ep,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.shape()?;
        self.adam_config().validate()?;
        self.lbfgs.validate()
    }

    /// Case label in the `[L,N,ep,lr]` notation.
    pub fn label(&self) -> String {
        format!("[{},{},{},{:e}]", self.layers, self.width, self.ep, self.lr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    Convergence,
    Hps,
    CrossMesh,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPoint {
    pub ep: usize,
    pub lr: f64,
}

fn default_seeds() -> usize {
    defaults::SEEDS_PER_CELL
}

fn default_parallelism() -> usize {
    1
}

fn default_lbfgs_iter() -> usize {
    defaults::LBFGS_MAX_ITER
}

fn default_lf() -> f64 {
    defaults::SNAPSHOT_LF
}

fn default_schedule() -> Vec<f64> {
    defaults::LOAD_SCHEDULE.to_vec()
}

/// A study: every (shape, mesh, grid point, seed) combination is one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub kind: StudyKind,
    /// `[L, N]` pairs.
    pub shapes: Vec<[usize; 2]>,
    /// Training meshes, `n` for an `n × n` grid.
    pub meshes: Vec<usize>,
    /// Evaluation meshes of a cross-mesh study.
    #[serde(default)]
    pub test_meshes: Vec<usize>,
    pub grid: Vec<GridPoint>,
    #[serde(default = "default_seeds")]
    pub seeds_per_cell: usize,
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_lbfgs_iter")]
    pub lbfgs_max_iter: usize,
    #[serde(default)]
    pub specimen: SpecimenConfig,
    #[serde(default = "default_schedule")]
    pub schedule: Vec<f64>,
    #[serde(default = "default_lf")]
    pub lf: f64,
    /// Existing snapshots named `snapshot_{n}x{n}.csv`. When absent the
    /// sweep generates them under its output root.
    #[serde(default)]
    pub snapshot_dir: Option<PathBuf>,
}

impl SweepSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.shapes.is_empty() || self.meshes.is_empty() || self.grid.is_empty() || self.seeds_per_cell == 0 {
            return bad("sweep needs at least one shape, mesh, grid point and seed".into());
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        for s in &self.shapes {
            NetworkShape::new(s[0], s[1])?;
        }
        for g in &self.grid {
            AdamConfig::new(g.lr, g.ep).validate()?;
        }
        match self.kind {
            StudyKind::Hps => {
                let n = self.shapes[0][0] * self.shapes[0][1];
                if let Some(s) = self.shapes.iter().find(|s| s[0] * s[1] != n) {
                    return bad(format!("HPS shapes must share one neuron count: {}x{} has {} neurons, expected {n}", s[0], s[1], s[0] * s[1]));
                }
            }
            StudyKind::Convergence => {}
            StudyKind::CrossMesh => {
                if self.test_meshes.is_empty() {
                    return bad("cross-mesh study needs test meshes".into());
                }
            }
        }
        if !self.schedule.iter().any(|&l| l == self.lf) {
            return bad(format!("snapshot loadfactor {} is not in the schedule {:?}", self.lf, self.schedule));
        }
        Ok(())
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.seeds_per_cell as u64).map(move |k| self.seed_base + k)
    }

    /// Every run of the sweep in a fixed order.
    pub fn runs(&self) -> Vec<(usize, RunConfig)> {
        let mut out = Vec::new();
        for &mesh in &self.meshes {
            for s in &self.shapes {
                for g in &self.grid {
                    for seed in self.seeds() {
                        let mut c = RunConfig::new(s[0], s[1], g.ep, g.lr, seed);
                        c.lbfgs.max_iter = self.lbfgs_max_iter;
                        out.push((mesh, c));
                    }
                }
            }
        }
        out
    }
}

/// File name of the snapshot for an `n × n` mesh.
pub fn snapshot_file_name(n: usize) -> String {
    format!("snapshot_{n}x{n}.csv")
}
