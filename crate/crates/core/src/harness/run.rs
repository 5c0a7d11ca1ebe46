//! Single runs: data generation, training, evaluation and I-FENN.

use std::path::Path;

use serde::Serialize;

use super::config::RunConfig;
use super::manifest::{write_json, IfennSummary, MetricsRow, RunManifest, RunStatus, SnapshotRef, Timing};
use crate::error::{Error, Result};
use crate::hash::config_hash;
use crate::ifenn::{ifenn_solve, relative_l2, IfennOptions, IfennResult, NetworkModel};
use crate::geometry::Mesh;
use crate::metrics::{l2rse, max_strain_report, slope_fit, trivial_detector, L2rse, MaxStrainReport, TrivialEvidence};
use crate::net::Network;
use crate::nonlocal_ref::{make_snapshot, staggered_nonlocal_solve, Snapshot, StaggeredOptions};
use crate::optim::{adam_run, lbfgs_run};
use crate::pinn::{loss, predict_interior, CollocationSet, LossBreakdown, LossEvaluator};
use crate::specimen::SpecimenConfig;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.json";
pub const HISTORY_FILE: &str = "loss_history.csv";
pub const FIELD_FILE: &str = "ifenn_field.csv";
pub const IFENN_MANIFEST_FILE: &str = "ifenn_manifest.json";

/// Reference solve through `schedule` and the snapshot at `lf`.
pub fn generate_snapshot(specimen: &SpecimenConfig, n: usize, schedule: &[f64], lf: f64) -> Result<(Mesh, Snapshot)> {
    let mesh = specimen.mesh(n, n)?;
    let load = specimen.load(&mesh)?;
    let history = staggered_nonlocal_solve(&mesh, &specimen.material, &load, schedule, &StaggeredOptions::default())?;
    let snap = make_snapshot(&history, &mesh, lf)?;
    Ok((mesh, snap))
}

/// A trained network with its manifest and loss histories.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub manifest: RunManifest,
    pub network: Network,
    pub timing: Timing,
    pub adam_history: Vec<f64>,
    pub lbfgs_history: Vec<f64>,
}

impl TrainOutput {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.network.save(&dir.join(CHECKPOINT_FILE))?;
        self.manifest.write(&dir.join(MANIFEST_FILE))?;
        MetricsRow::write_csv(&[self.manifest.row()], &dir.join(METRICS_FILE))?;
        write_json(&dir.join(TIMING_FILE), &self.timing)?;
        let path = dir.join(HISTORY_FILE);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["stage", "iteration", "J"])?;
        for (stage, hist) in [("adam", &self.adam_history), ("lbfgs", &self.lbfgs_history)] {
            for (i, j) in hist.iter().enumerate() {
                w.write_record([stage.to_string(), i.to_string(), format!("{j:e}")])?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }
}

#[derive(Serialize)]
struct RunKey<'a> {
    config: &'a RunConfig,
    snapshot: &'a str,
}

pub fn run_hash(cfg: &RunConfig, snap: &SnapshotRef) -> Result<String> {
    config_hash(&RunKey {
        config: cfg,
        snapshot: &snap.content_hash,
    })
}

/// Adam then L-BFGS on the snapshot's collocation set. When `out` is given
/// the run directory is written even if training fails, with the failing
/// stage recorded in the manifest.
pub fn train(cfg: &RunConfig, snap: &Snapshot, out: Option<&Path>) -> Result<TrainOutput> {
    cfg.validate()?;
    let sref = SnapshotRef::of(snap)?;
    let hash = run_hash(cfg, &sref)?;
    let mut manifest = RunManifest::new(*cfg, hash, sref);
    match train_stages(cfg, snap, &mut manifest) {
        Ok((network, timing, adam_history, lbfgs_history)) => {
            let output = TrainOutput {
                manifest,
                network,
                timing,
                adam_history,
                lbfgs_history,
            };
            if let Some(dir) = out {
                output.write(dir)?;
            }
            Ok(output)
        }
        Err((stage, err)) => {
            manifest.status = RunStatus::Failed {
                stage: stage.to_string(),
                message: err.to_string(),
            };
            if let Some(dir) = out {
                manifest.write(&dir.join(MANIFEST_FILE))?;
                MetricsRow::write_csv(&[manifest.row()], &dir.join(METRICS_FILE))?;
            }
            Err(err)
        }
    }
}

type Stages = (Network, Timing, Vec<f64>, Vec<f64>);

fn train_stages(cfg: &RunConfig, snap: &Snapshot, manifest: &mut RunManifest) -> std::result::Result<Stages, (&'static str, Error)> {
    let setup = |e| ("setup", e);
    let (set, targets) = CollocationSet::from_snapshot(snap).map_err(setup)?;
    let scaling = set.scaling().map_err(setup)?;
    let shape = cfg.shape().map_err(setup)?;
    let mut net = Network::initialized(shape, scaling, cfg.seed).map_err(setup)?;
    net.config_hash = manifest.config_hash.clone();
    let mut ev = LossEvaluator::new(shape, scaling, &set);
    let m = &mut manifest.metrics;
    m.gauss_points = set.interior().len();

    let adam = adam_run(&net.theta.0, &mut ev, &cfg.adam_config(), None).map_err(|e| ("adam", e))?;
    net.theta.0.clone_from(&adam.theta);
    let pred = predict_interior(&net, &set).map_err(|e| ("adam", e))?;
    let e_adam = l2rse(&pred, &targets.interior).map_err(|e| ("adam", e))?;
    m.j_adam_end = Some(adam.final_j());
    m.l2rse_adam_end = Some(e_adam.value);
    m.l2rse_excluded = e_adam.excluded;
    m.delta_theta.clone_from(&adam.delta_theta);
    m.s_delta_theta = slope_fit(&adam.delta_theta).ok();
    let mut timing = Timing {
        adam_seconds: adam.wall_time,
        adam_rt100: adam.rt100(),
        lbfgs_seconds: 0.0,
    };

    let mut lbfgs_history = Vec::new();
    let mut pred = pred;
    if cfg.lbfgs.max_iter > 0 {
        let lb = lbfgs_run(&net.theta.0, &mut ev, &cfg.lbfgs).map_err(|e| ("lbfgs", e))?;
        net.theta.0.clone_from(&lb.theta);
        pred = predict_interior(&net, &set).map_err(|e| ("lbfgs", e))?;
        m.j_lbfgs_end = Some(lb.final_j());
        m.l2rse_lbfgs_end = Some(l2rse(&pred, &targets.interior).map_err(|e| ("lbfgs", e))?.value);
        m.iter_lbfgs = Some(lb.iterations);
        m.lbfgs_termination = Some(format!("{:?}", lb.termination));
        timing.lbfgs_seconds = lb.wall_time;
        lbfgs_history = lb.j_history;
    }

    let eps_eq: Vec<f64> = set.interior().iter().map(|p| p.eps_eq).collect();
    m.trivial = Some(trivial_detector(&pred, &eps_eq));
    let mx = max_strain_report(&pred, &targets.interior).map_err(|e| ("evaluate", e))?;
    m.eps_bar_max_pred = Some(mx.max_pred);
    m.eps_bar_max_true = Some(mx.max_true);
    m.eps_bar_max_rel_error = Some(mx.rel_error);
    m.eps_bar_argmax_match = Some(mx.argmax_match);
    Ok((net, timing, adam.j_history, lbfgs_history))
}

/// A trained network judged on some snapshot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub mesh_id: String,
    pub gauss_points: usize,
    pub loss: LossBreakdown,
    pub l2rse: L2rse,
    pub l2rse_norm: f64,
    pub max_strain: MaxStrainReport,
    pub trivial: TrivialEvidence,
}

pub fn evaluate(net: &Network, snap: &Snapshot) -> Result<EvalReport> {
    let (set, targets) = CollocationSet::from_snapshot(snap)?;
    let pred = predict_interior(net, &set)?;
    let e = l2rse(&pred, &targets.interior)?;
    let eps_eq: Vec<f64> = set.interior().iter().map(|p| p.eps_eq).collect();
    Ok(EvalReport {
        mesh_id: snap.manifest.mesh_id.clone(),
        gauss_points: pred.len(),
        loss: loss(net, &set)?,
        l2rse_norm: e.value / pred.len() as f64,
        l2rse: e,
        max_strain: max_strain_report(&pred, &targets.interior)?,
        trivial: trivial_detector(&pred, &eps_eq),
    })
}

/// Damage of the staggered reference solution at `lf`.
pub fn reference_damage(specimen: &SpecimenConfig, n: usize, schedule: &[f64], lf: f64) -> Result<Vec<f64>> {
    let mesh = specimen.mesh(n, n)?;
    let load = specimen.load(&mesh)?;
    let history = staggered_nonlocal_solve(&mesh, &specimen.material, &load, schedule, &StaggeredOptions::default())?;
    Ok(history.step_at(lf)?.damage.clone())
}

/// One I-FENN increment from the virgin state to `lf` on an `n × n` mesh of
/// the specimen. Non-convergence is reported in the summary, not as an
/// error. A reference damage field, when given, is compared against.
pub fn run_ifenn(net: &Network, specimen: &SpecimenConfig, n: usize, lf: f64, opts: &IfennOptions, reference: Option<&[f64]>) -> Result<(IfennSummary, Option<IfennResult>, Mesh)> {
    let mesh = specimen.mesh(n, n)?;
    let load = specimen.load(&mesh)?;
    let ngp = mesh.elements.len() * 4;
    let mut model = NetworkModel::new(net, specimen.material.g);
    let solved = ifenn_solve(&mesh, &specimen.material, &mut model, &load.at(lf), None, &vec![0.0; ngp], opts);
    let mut summary = IfennSummary {
        mesh_id: mesh.id.clone(),
        lf,
        converged: false,
        iterations: 0,
        residual_norms: vec![],
        increment_norms: vec![],
        damage_rel_l2: None,
        max_damage: None,
        message: None,
    };
    let result = match solved {
        Ok(r) => {
            summary.converged = true;
            summary.iterations = r.iterations;
            summary.residual_norms.clone_from(&r.residual_norms);
            summary.increment_norms.clone_from(&r.increment_norms);
            summary.max_damage = Some(r.damage.iter().cloned().fold(0.0, f64::max));
            Some(r)
        }
        Err(Error::IfennNotConverged { reason, iterations, residual_norms, increment_norms }) => {
            summary.iterations = iterations;
            summary.residual_norms = residual_norms;
            summary.increment_norms = increment_norms;
            summary.message = Some(reason);
            None
        }
        Err(e) => {
            summary.message = Some(e.to_string());
            None
        }
    };
    if let (Some(r), Some(refd)) = (&result, reference) {
        if refd.len() != r.damage.len() {
            return Err(Error::ShapeMismatch(format!("reference has {} damage values, mesh {}", refd.len(), r.damage.len())));
        }
        summary.damage_rel_l2 = Some(relative_l2(&r.damage, refd));
    }
    Ok((summary, result, mesh))
}
