//! Reference non-local solution: the gradient Helmholtz problem
//! `ε̄ − g ∇²ε̄ = ε_eq` with zero-flux boundaries, a staggered damage solver
//! built on it, and training snapshots extracted from the solver history.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::elasticity::{
    assemble_elastic_system, equivalent_strain, gauss_strains, mazars_damage, solve_elastic, strain_at, Material, StrainTensor2D,
};
use crate::error::{Error, Result};
use crate::geometry::{shape_eval, GaussPoint, Mesh};
use crate::hash::{config_hash, sha256_hex};
use crate::linalg::{norm2, BandMatrix, Cholesky};
use crate::specimen::PrescribedLoad;

const HELMHOLTZ_RESIDUAL_TOL: f64 = 1e-10;

/// Nodal solution and its interpolation at the Gauss points.
#[derive(Debug, Clone, PartialEq)]
pub struct HelmholtzSolution {
    pub nodal: Vec<f64>,
    pub gauss: Vec<f64>,
}

/// `(M + g K)` factored once for a mesh, reusable for many right-hand sides.
#[derive(Debug, Clone)]
pub struct HelmholtzSolver {
    g: f64,
    elements: Vec<[usize; 4]>,
    gps: Vec<GaussPoint>,
    a: BandMatrix,
    chol: Cholesky,
}

impl HelmholtzSolver {
    pub fn new(mesh: &Mesh, g: f64) -> Result<Self> {
        if !(g >= 0.0) {
            return Err(Error::InvalidArgument(format!("g must be non-negative, got {g}")));
        }
        if mesh.elements.is_empty() {
            return Err(Error::InvalidMesh("mesh has no elements".into()));
        }
        let gps = mesh.gauss_points()?;
        let bw = mesh
            .elements
            .iter()
            .map(|c| c.iter().max().unwrap() - c.iter().min().unwrap())
            .max()
            .unwrap_or(0);
        let mut a = BandMatrix::zeros(mesh.node_count(), bw, bw);
        for gp in &gps {
            let conn = mesh.elements[gp.element];
            let dv = gp.dv();
            for p in 0..4 {
                for q in 0..4 {
                    let m = gp.n[p] * gp.n[q];
                    let k = gp.dndx[p][0] * gp.dndx[q][0] + gp.dndx[p][1] * gp.dndx[q][1];
                    a.add(conn[p], conn[q], (m + g * k) * dv);
                }
            }
        }
        let chol = Cholesky::factor(&a)?;
        Ok(Self {
            g,
            elements: mesh.elements.clone(),
            gps,
            a,
            chol,
        })
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    pub fn gauss_points(&self) -> &[GaussPoint] {
        &self.gps
    }

    /// Solve for the nodal ε̄ given ε_eq at every Gauss point.
    pub fn solve(&self, eps_eq: &[f64]) -> Result<HelmholtzSolution> {
        if eps_eq.len() != self.gps.len() {
            return Err(Error::ShapeMismatch(format!("{} strain values for {} Gauss points", eps_eq.len(), self.gps.len())));
        }
        let mut rhs = vec![0.0; self.a.dim()];
        for (gp, &e) in self.gps.iter().zip(eps_eq) {
            let conn = self.elements[gp.element];
            for p in 0..4 {
                rhs[conn[p]] += gp.n[p] * e * gp.dv();
            }
        }
        let nodal = self.chol.solve(&rhs);
        let r: Vec<f64> = self.a.mul_vec(&nodal).iter().zip(&rhs).map(|(ax, b)| ax - b).collect();
        let (rn, bn) = (norm2(&r), norm2(&rhs));
        if rn > HELMHOLTZ_RESIDUAL_TOL * bn {
            return Err(Error::InaccurateSolve {
                residual: rn / bn,
                tolerance: HELMHOLTZ_RESIDUAL_TOL,
            });
        }
        let gauss = interpolate_nodal(&self.elements, &self.gps, &nodal);
        Ok(HelmholtzSolution { nodal, gauss })
    }
}

pub fn interpolate_nodal(elements: &[[usize; 4]], gps: &[GaussPoint], nodal: &[f64]) -> Vec<f64> {
    gps.iter()
        .map(|gp| {
            let conn = elements[gp.element];
            (0..4).map(|p| gp.n[p] * nodal[conn[p]]).sum()
        })
        .collect()
}

/// One-shot Helmholtz solve.
pub fn solve_helmholtz(mesh: &Mesh, g: f64, eps_eq: &[f64]) -> Result<HelmholtzSolution> {
    HelmholtzSolver::new(mesh, g)?.solve(eps_eq)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaggeredOptions {
    pub tol: f64,
    pub max_passes: usize,
}

impl Default for StaggeredOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_passes: 50,
        }
    }
}

/// Converged fields at one load step. Per-Gauss-point vectors follow
/// `Mesh::gauss_points` order.
#[derive(Debug, Clone, PartialEq)]
pub struct StepState {
    pub lf: f64,
    pub u: Vec<f64>,
    pub eps_eq: Vec<f64>,
    pub eps_bar_nodal: Vec<f64>,
    pub eps_bar: Vec<f64>,
    pub kappa: Vec<f64>,
    pub damage: Vec<f64>,
    pub passes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct History {
    pub mesh_id: String,
    pub material: Material,
    pub config_hash: String,
    pub steps: Vec<StepState>,
}

impl History {
    pub fn loadfactors(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.lf).collect()
    }

    pub fn step_at(&self, lf: f64) -> Result<&StepState> {
        self.steps.iter().find(|s| (s.lf - lf).abs() <= 1e-12 * lf.abs().max(1.0)).ok_or_else(|| Error::LoadfactorMissing {
            requested: lf,
            available: self.loadfactors(),
        })
    }
}

/// Local equivalent strain at every Gauss point for displacement `u`.
pub fn gauss_equivalent_strains(mesh: &Mesh, gps: &[GaussPoint], u: &[f64]) -> Vec<f64> {
    gauss_strains(mesh, gps, u).into_iter().map(|v| equivalent_strain(&StrainTensor2D::from_voigt(v)).0).collect()
}

/// Alternate equilibrium (frozen damage), Helmholtz and damage update until
/// the damage field stops changing, for each loadfactor in turn.
pub fn staggered_nonlocal_solve(mesh: &Mesh, mat: &Material, load: &PrescribedLoad, schedule: &[f64], opts: &StaggeredOptions) -> Result<History> {
    mat.validate()?;
    if schedule.is_empty() || schedule.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("load schedule must be non-empty and strictly increasing".into()));
    }
    #[derive(Serialize)]
    struct Key<'a> {
        mesh: &'a Mesh,
        material: &'a Material,
        load: &'a PrescribedLoad,
        schedule: &'a [f64],
        options: &'a StaggeredOptions,
    }
    let hash = config_hash(&Key {
        mesh,
        material: mat,
        load,
        schedule,
        options: opts,
    })?;

    let helm = HelmholtzSolver::new(mesh, mat.g)?;
    let gps = helm.gauss_points().to_vec();
    let ngp = gps.len();
    let mut kappa_prev: Vec<f64> = vec![0.0; ngp];
    let mut damage = vec![0.0; ngp];
    let mut steps = Vec::with_capacity(schedule.len());

    for (step, &lf) in schedule.iter().enumerate() {
        let bcs = load.at(lf);
        let mut last_delta = f64::INFINITY;
        let mut converged = None;
        for pass in 1..=opts.max_passes {
            let (k, f) = assemble_elastic_system(mesh, &gps, mat, &damage, &bcs)?;
            let u = solve_elastic(&k, &f, &bcs)?;
            let eps_eq = gauss_equivalent_strains(mesh, &gps, &u);
            let sol = helm.solve(&eps_eq)?;
            let kappa: Vec<f64> = kappa_prev.iter().zip(&sol.gauss).map(|(&k0, &e)| k0.max(e)).collect();
            let new_damage: Vec<f64> = kappa.iter().map(|&k| mazars_damage(k, mat).0).collect();
            last_delta = new_damage.iter().zip(&damage).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            damage = new_damage;
            if last_delta < opts.tol {
                converged = Some(StepState {
                    lf,
                    u,
                    eps_eq,
                    eps_bar_nodal: sol.nodal,
                    eps_bar: sol.gauss,
                    kappa,
                    damage: damage.clone(),
                    passes: pass,
                });
                break;
            }
        }
        let state = converged.ok_or(Error::StaggeredNotConverged { step, lf, last_delta })?;
        log::debug!("step {step} lf={lf} converged in {} passes", state.passes);
        kappa_prev = state.kappa.clone();
        steps.push(state);
    }
    Ok(History {
        mesh_id: mesh.id.clone(),
        material: *mat,
        config_hash: hash,
        steps,
    })
}

/// One training/evaluation row. Interior rows carry a zero normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRow {
    pub x: f64,
    pub y: f64,
    pub g: f64,
    pub eps_eq: f64,
    pub eps_bar_true: f64,
    pub is_boundary: bool,
    pub nx: f64,
    pub ny: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotManifest {
    pub lf: f64,
    pub mesh_id: String,
    pub material: Material,
    pub config_hash: String,
    pub gauss_points: usize,
    pub boundary_rows: usize,
    /// Mean and maximum of ε_eq over the Gauss-point rows.
    pub mean_eps_eq: f64,
    pub max_eps_eq: f64,
}

/// Gauss-point rows first (in `Mesh::gauss_points` order), then two rows per
/// boundary edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub manifest: SnapshotManifest,
    pub rows: Vec<SnapshotRow>,
}

pub fn make_snapshot(history: &History, mesh: &Mesh, lf: f64) -> Result<Snapshot> {
    let step = history.step_at(lf)?;
    let g = history.material.g;
    let gps = mesh.gauss_points()?;
    if gps.len() != step.eps_eq.len() {
        return Err(Error::ShapeMismatch(format!("history has {} Gauss points, mesh {}", step.eps_eq.len(), gps.len())));
    }
    let mut rows: Vec<SnapshotRow> = gps
        .iter()
        .enumerate()
        .map(|(i, gp)| SnapshotRow {
            x: gp.x,
            y: gp.y,
            g,
            eps_eq: step.eps_eq[i],
            eps_bar_true: step.eps_bar[i],
            is_boundary: false,
            nx: 0.0,
            ny: 0.0,
        })
        .collect();
    let boundary = mesh.boundary_points();
    for bp in &boundary {
        let s = shape_eval(mesh, bp.element, bp.xi, bp.eta)?;
        let eps = strain_at(mesh, bp.element, &s.dndx, &step.u);
        let conn = mesh.elements[bp.element];
        let eps_bar: f64 = (0..4).map(|p| s.n[p] * step.eps_bar_nodal[conn[p]]).sum();
        rows.push(SnapshotRow {
            x: bp.x,
            y: bp.y,
            g,
            eps_eq: equivalent_strain(&StrainTensor2D::from_voigt(eps)).0,
            eps_bar_true: eps_bar,
            is_boundary: true,
            nx: bp.normal[0],
            ny: bp.normal[1],
        });
    }
    let n = gps.len();
    let mean = step.eps_eq.iter().sum::<f64>() / n as f64;
    let max = step.eps_eq.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(Snapshot {
        manifest: SnapshotManifest {
            lf: step.lf,
            mesh_id: history.mesh_id.clone(),
            material: history.material,
            config_hash: history.config_hash.clone(),
            gauss_points: n,
            boundary_rows: boundary.len(),
            mean_eps_eq: mean,
            max_eps_eq: max,
        },
        rows,
    })
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl Snapshot {
    pub fn interior(&self) -> impl Iterator<Item = &SnapshotRow> {
        self.rows.iter().filter(|r| !r.is_boundary)
    }

    pub fn boundary(&self) -> impl Iterator<Item = &SnapshotRow> {
        self.rows.iter().filter(|r| r.is_boundary)
    }

    /// Companion manifest path for a snapshot CSV.
    pub fn manifest_path(csv: &Path) -> PathBuf {
        csv.with_extension("json")
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["x", "y", "g", "eps_eq", "eps_bar_true", "is_boundary", "nx", "ny"])?;
        for r in &self.rows {
            w.write_record([
                fmt_f64(r.x),
                fmt_f64(r.y),
                fmt_f64(r.g),
                fmt_f64(r.eps_eq),
                fmt_f64(r.eps_bar_true),
                (r.is_boundary as u8).to_string(),
                fmt_f64(r.nx),
                fmt_f64(r.ny),
            ])?;
        }
        w.into_inner().map_err(|e| Error::InvalidArgument(format!("csv buffer: {e}")))
    }

    /// SHA-256 of the CSV encoding.
    pub fn content_hash(&self) -> Result<String> {
        Ok(sha256_hex(&self.to_csv_bytes()?))
    }

    pub fn write(&self, csv_path: &Path) -> Result<()> {
        if let Some(dir) = csv_path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        std::fs::write(csv_path, self.to_csv_bytes()?).map_err(|e| Error::io(csv_path, e))?;
        let mp = Self::manifest_path(csv_path);
        std::fs::write(&mp, serde_json::to_string_pretty(&self.manifest)?).map_err(|e| Error::io(&mp, e))
    }

    pub fn read(csv_path: &Path) -> Result<Snapshot> {
        if !csv_path.exists() {
            return Err(Error::MissingSnapshot(csv_path.to_path_buf()));
        }
        let mp = Self::manifest_path(csv_path);
        let text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
        let manifest: SnapshotManifest = serde_json::from_str(&text)?;
        let mut rdr = csv::Reader::from_path(csv_path)?;
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 8 {
                return Err(Error::InvalidArgument(format!("snapshot row has {} fields", rec.len())));
            }
            let num = |i: usize| -> Result<f64> {
                let v: f64 = rec[i].trim().parse().map_err(|_| Error::InvalidArgument(format!("bad number {:?}", &rec[i])))?;
                if !v.is_finite() {
                    return Err(Error::InvalidArgument(format!("non-finite value {:?}", &rec[i])));
                }
                Ok(v)
            };
            rows.push(SnapshotRow {
                x: num(0)?,
                y: num(1)?,
                g: num(2)?,
                eps_eq: num(3)?,
                eps_bar_true: num(4)?,
                is_boundary: match rec[5].trim() {
                    "0" => false,
                    "1" => true,
                    other => return Err(Error::InvalidArgument(format!("bad is_boundary flag {other:?}"))),
                },
                nx: num(6)?,
                ny: num(7)?,
            });
        }
        let interior = rows.iter().filter(|r| !r.is_boundary).count();
        if interior != manifest.gauss_points {
            return Err(Error::ShapeMismatch(format!("snapshot has {interior} Gauss-point rows, manifest says {}", manifest.gauss_points)));
        }
        Ok(Snapshot { manifest, rows })
    }
}
