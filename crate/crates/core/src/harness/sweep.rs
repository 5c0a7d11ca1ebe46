//! Sweeps over shapes, meshes, optimizer settings and seeds.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{snapshot_file_name, RunConfig, StudyKind, SweepSpec};
use super::manifest::{CrossMeshEntry, MetricsRow, RunStatus};
use super::report::{write_report, AggregateRow, SUMMARY_FILE};
use super::run::{evaluate, generate_snapshot, reference_damage, run_ifenn, train, MANIFEST_FILE, METRICS_FILE};
use crate::error::{Error, Result};
use crate::ifenn::IfennOptions;
use crate::nonlocal_ref::Snapshot;

pub const RUNS_DIR: &str = "runs";
pub const SNAPSHOTS_DIR: &str = "snapshots";

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub root: PathBuf,
    pub runs: usize,
    /// Run ids whose training failed, with the error.
    pub failures: Vec<(String, String)>,
    pub summary: Vec<AggregateRow>,
}

/// Directory name of one run.
pub fn run_id(mesh: usize, cfg: &RunConfig) -> String {
    format!("m{mesh}_L{}_N{}_ep{}_lr{:e}_s{}", cfg.layers, cfg.width, cfg.ep, cfg.lr, cfg.seed)
}

/// Snapshots for every mesh of the spec, read from `snapshot_dir` or
/// generated (and cached) under `root/snapshots`.
pub fn load_snapshots(spec: &SweepSpec, root: &Path) -> Result<BTreeMap<usize, Snapshot>> {
    let mut ns: Vec<usize> = spec.meshes.iter().chain(&spec.test_meshes).copied().collect();
    ns.sort_unstable();
    ns.dedup();
    let mut out = BTreeMap::new();
    for n in ns {
        let snap = match &spec.snapshot_dir {
            Some(dir) => {
                let p = dir.join(snapshot_file_name(n));
                if !p.exists() {
                    return Err(Error::MissingSnapshot(p));
                }
                Snapshot::read(&p)?
            }
            None => {
                let p = root.join(SNAPSHOTS_DIR).join(snapshot_file_name(n));
                if p.exists() {
                    Snapshot::read(&p)?
                } else {
                    let (_, snap) = generate_snapshot(&spec.specimen, n, &spec.schedule, spec.lf)?;
                    std::fs::create_dir_all(p.parent().unwrap()).map_err(|e| Error::io(&p, e))?;
                    snap.write(&p)?;
                    snap
                }
            }
        };
        out.insert(n, snap);
    }
    Ok(out)
}

fn run_cell(spec: &SweepSpec, mesh: usize, cfg: &RunConfig, snaps: &BTreeMap<usize, Snapshot>, refs: &BTreeMap<usize, Vec<f64>>, dir: &Path) -> Result<()> {
    let mut out = train(cfg, &snaps[&mesh], Some(dir))?;
    if spec.kind != StudyKind::CrossMesh {
        return Ok(());
    }
    let opts = IfennOptions::default();
    for &t in &spec.test_meshes {
        let ev = evaluate(&out.network, &snaps[&t])?;
        let (summary, _, _) = run_ifenn(&out.network, &spec.specimen, t, spec.lf, &opts, refs.get(&t).map(Vec::as_slice))?;
        out.manifest.cross_mesh.push(CrossMeshEntry {
            mesh_id: ev.mesh_id,
            gauss_points: ev.gauss_points,
            l2rse: ev.l2rse.value,
            l2rse_norm: ev.l2rse_norm,
            ifenn: summary,
        });
    }
    // Iter_IFENN of the run is the one on its own training mesh when that
    // mesh is among the test meshes.
    let own = &snaps[&mesh].manifest.mesh_id;
    out.manifest.metrics.iter_ifenn = out.manifest.cross_mesh.iter().find(|e| &e.mesh_id == own && e.ifenn.converged).map(|e| e.ifenn.iterations);
    out.manifest.write(&dir.join(MANIFEST_FILE))?;
    MetricsRow::write_csv(&[out.manifest.row()], &dir.join(METRICS_FILE))?;
    Ok(())
}

/// Run every cell of the sweep under `root` and aggregate. A failing cell is
/// recorded (its manifest carries the failing stage) and the sweep goes on.
/// Results do not depend on `parallelism`.
pub fn run_sweep(spec: &SweepSpec, root: &Path) -> Result<SweepOutcome> {
    spec.validate()?;
    let snaps = load_snapshots(spec, root)?;
    let mut refs = BTreeMap::new();
    if spec.kind == StudyKind::CrossMesh {
        for &t in &spec.test_meshes {
            refs.insert(t, reference_damage(&spec.specimen, t, &spec.schedule, spec.lf)?);
        }
    }
    let runs = spec.runs();
    let runs_dir = root.join(RUNS_DIR);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.parallelism)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let results: Vec<(String, Result<()>)> = pool.install(|| {
        runs.par_iter()
            .map(|(mesh, cfg)| {
                let id = run_id(*mesh, cfg);
                let r = run_cell(spec, *mesh, cfg, &snaps, &refs, &runs_dir.join(&id));
                (id, r)
            })
            .collect()
    });
    let mut failures = Vec::new();
    for (id, r) in results {
        if let Err(e) = r {
            // Training failures already left a manifest; anything later did not.
            let dir = runs_dir.join(&id);
            if !dir.join(MANIFEST_FILE).exists() {
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                std::fs::write(dir.join("error.txt"), e.to_string()).map_err(|e| Error::io(&dir, e))?;
            }
            failures.push((id, e.to_string()));
        }
    }
    let summary = write_report(&runs_dir, &root.join(SUMMARY_FILE), Some(spec.kind))?;
    Ok(SweepOutcome { root: root.to_path_buf(), runs: runs.len(), failures, summary })
}

pub fn run_convergence_study(spec: &SweepSpec, root: &Path) -> Result<SweepOutcome> {
    expect_kind(spec, StudyKind::Convergence)?;
    run_sweep(spec, root)
}

pub fn run_hps_study(spec: &SweepSpec, root: &Path) -> Result<SweepOutcome> {
    expect_kind(spec, StudyKind::Hps)?;
    run_sweep(spec, root)
}

pub fn run_cross_mesh_study(spec: &SweepSpec, root: &Path) -> Result<SweepOutcome> {
    expect_kind(spec, StudyKind::CrossMesh)?;
    run_sweep(spec, root)
}

fn expect_kind(spec: &SweepSpec, kind: StudyKind) -> Result<()> {
    if spec.kind != kind {
        return Err(Error::InvalidArgument(format!("expected a {kind:?} study, got {:?}", spec.kind)));
    }
    Ok(())
}

/// Whether the manifest in `dir` records a completed run.
pub fn completed(dir: &Path) -> Result<bool> {
    let m = super::manifest::RunManifest::read(&dir.join(MANIFEST_FILE))?;
    Ok(matches!(m.status, RunStatus::Completed))
}
