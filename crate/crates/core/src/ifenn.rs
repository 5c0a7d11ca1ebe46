//! Newton–Raphson damage solver with ε̄ supplied per Gauss point by a
//! pre-trained network (or a stand-in provider).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::elasticity::{b_matrix, constitutive_matrix, dof_bandwidth, element_dofs, equivalent_strain, gauss_strains, mazars_damage, BoundaryConditions, FreeDofs, Material, StrainTensor2D};
use crate::error::{Error, Result};
use crate::geometry::{GaussPoint, Mesh};
use crate::linalg::{norm2, BandLu, BandMatrix};
use crate::net::Network;
use crate::nonlocal_ref::HelmholtzSolver;
use crate::specimen::PrescribedLoad;

/// ε̄ and ∂ε̄/∂ε_eq at every Gauss point.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelResponse {
    pub eps_bar: Vec<f64>,
    pub d_eps_bar: Vec<f64>,
}

pub trait NonlocalModel {
    fn name(&self) -> &str;
    fn evaluate(&mut self, gps: &[GaussPoint], eps_eq: &[f64]) -> Result<ModelResponse>;
}

/// The trained network, queried with `(x, y, g, ε_eq)`.
pub struct NetworkModel<'a> {
    net: &'a Network,
    g: f64,
}

impl<'a> NetworkModel<'a> {
    pub fn new(net: &'a Network, g: f64) -> Self {
        Self { net, g }
    }
}

impl NonlocalModel for NetworkModel<'_> {
    fn name(&self) -> &str {
        "network"
    }

    fn evaluate(&mut self, gps: &[GaussPoint], eps_eq: &[f64]) -> Result<ModelResponse> {
        if gps.len() != eps_eq.len() {
            return Err(Error::ShapeMismatch(format!("{} Gauss points, {} strains", gps.len(), eps_eq.len())));
        }
        let mut eps_bar = Vec::with_capacity(gps.len());
        let mut d_eps_bar = Vec::with_capacity(gps.len());
        for (gp, &e) in gps.iter().zip(eps_eq) {
            let d = self.net.forward_with_derivs(&[gp.x, gp.y, self.g, e])?;
            eps_bar.push(d.value);
            d_eps_bar.push(d.de);
        }
        Ok(ModelResponse { eps_bar, d_eps_bar })
    }
}

/// Exact FE Helmholtz solve of the current ε_eq. The true sensitivity is a
/// dense operator, so the local derivative is reported as zero and Newton
/// degenerates to the staggered fixed point.
pub struct HelmholtzModel {
    solver: HelmholtzSolver,
}

impl HelmholtzModel {
    pub fn new(mesh: &Mesh, g: f64) -> Result<Self> {
        Ok(Self { solver: HelmholtzSolver::new(mesh, g)? })
    }
}

impl NonlocalModel for HelmholtzModel {
    fn name(&self) -> &str {
        "helmholtz"
    }

    fn evaluate(&mut self, gps: &[GaussPoint], eps_eq: &[f64]) -> Result<ModelResponse> {
        if gps.len() != self.solver.gauss_points().len() {
            return Err(Error::ShapeMismatch(format!("Helmholtz model built for {} Gauss points, got {}", self.solver.gauss_points().len(), gps.len())));
        }
        let sol = self.solver.solve(eps_eq)?;
        Ok(ModelResponse {
            d_eps_bar: vec![0.0; sol.gauss.len()],
            eps_bar: sol.gauss,
        })
    }
}

/// Fixed per-point values, independent of the strain.
pub struct ConstantModel {
    pub values: Vec<f64>,
}

impl NonlocalModel for ConstantModel {
    fn name(&self) -> &str {
        "constant"
    }

    fn evaluate(&mut self, gps: &[GaussPoint], _eps_eq: &[f64]) -> Result<ModelResponse> {
        if self.values.len() != gps.len() {
            return Err(Error::ShapeMismatch(format!("{} constant values for {} Gauss points", self.values.len(), gps.len())));
        }
        Ok(ModelResponse {
            eps_bar: self.values.clone(),
            d_eps_bar: vec![0.0; gps.len()],
        })
    }
}

/// Residual, consistent tangent and the per-point state they were built from.
#[derive(Debug, Clone)]
pub struct Assembly {
    pub jacobian: BandMatrix,
    pub residual: Vec<f64>,
    pub eps_eq: Vec<f64>,
    pub eps_bar: Vec<f64>,
    pub d_eps_bar: Vec<f64>,
    pub damage: Vec<f64>,
}

/// `R = ∫ Bᵀ(1−d)Cε` and `J = ∂R/∂u` with `d = D(max(κ_prev, ε̄(ε_eq(u))))`.
pub fn ifenn_assemble(mesh: &Mesh, gps: &[GaussPoint], mat: &Material, model: &mut dyn NonlocalModel, u: &[f64], kappa_prev: &[f64]) -> Result<Assembly> {
    let ngp = gps.len();
    if kappa_prev.len() != ngp || u.len() != mesh.dof_count() {
        return Err(Error::ShapeMismatch(format!("state has {} κ values and {} dofs for {} Gauss points and {} dofs", kappa_prev.len(), u.len(), ngp, mesh.dof_count())));
    }
    let c = constitutive_matrix(mat)?;
    let strains = gauss_strains(mesh, gps, u);
    let mut eps_eq = Vec::with_capacity(ngp);
    let mut deq = Vec::with_capacity(ngp);
    for s in &strains {
        let (e, d) = equivalent_strain(&StrainTensor2D::from_voigt(*s));
        eps_eq.push(e);
        deq.push(d);
    }
    let resp = model.evaluate(gps, &eps_eq)?;
    if resp.eps_bar.len() != ngp || resp.d_eps_bar.len() != ngp {
        return Err(Error::ShapeMismatch(format!("{} model returned {} values for {} Gauss points", model.name(), resp.eps_bar.len(), ngp)));
    }

    let n = mesh.dof_count();
    let bw = dof_bandwidth(mesh);
    let mut jac = BandMatrix::zeros(n, bw, bw);
    let mut residual = vec![0.0; n];
    let mut damage = Vec::with_capacity(ngp);
    for (i, gp) in gps.iter().enumerate() {
        let eb = resp.eps_bar[i];
        if !eb.is_finite() {
            return Err(Error::NonFiniteForward { layer: 0 });
        }
        let loading = eb > kappa_prev[i];
        let (d, dd) = mazars_damage(if loading { eb } else { kappa_prev[i] }, mat);
        damage.push(d);
        let b = b_matrix(gp);
        let dofs = element_dofs(&mesh.elements[gp.element]);
        let dv = gp.dv();
        let eps = strains[i];
        let ceps: [f64; 3] = std::array::from_fn(|r| (0..3).map(|m| c[r][m] * eps[m]).sum());
        let mut cb = [[0.0; 8]; 3];
        for r in 0..3 {
            for j in 0..8 {
                cb[r][j] = (0..3).map(|m| c[r][m] * b[m][j]).sum();
            }
        }
        // ∂d/∂u_q over the element dofs; zero when unloading.
        let chain = if loading { dd * resp.d_eps_bar[i] } else { 0.0 };
        let dd_du: [f64; 8] = std::array::from_fn(|q| chain * (0..3).map(|m| deq[i][m] * b[m][q]).sum::<f64>());
        for p in 0..8 {
            let bt_ceps: f64 = (0..3).map(|m| b[m][p] * ceps[m]).sum();
            residual[dofs[p]] += (1.0 - d) * bt_ceps * dv;
            for q in 0..8 {
                let k: f64 = (0..3).map(|m| b[m][p] * cb[m][q]).sum();
                jac.add(dofs[p], dofs[q], ((1.0 - d) * k - bt_ceps * dd_du[q]) * dv);
            }
        }
    }
    Ok(Assembly {
        jacobian: jac,
        residual,
        eps_eq,
        eps_bar: resp.eps_bar,
        d_eps_bar: resp.d_eps_bar,
        damage,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IfennOptions {
    /// Stop once ‖δu_k‖ / ‖δu_1‖ falls to this.
    pub tol: f64,
    pub max_iter: usize,
    /// Also stop when ‖R_free‖ is this small relative to ‖R‖ over all dofs
    /// (reactions included). Catches problems that are solved exactly by
    /// the first step.
    pub residual_tol: f64,
    pub divergence_factor: f64,
    pub divergence_window: usize,
}

impl Default for IfennOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 50,
            residual_tol: 1e-12,
            divergence_factor: 10.0,
            divergence_window: 5,
        }
    }
}

/// Converged state of one load increment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IfennResult {
    pub u: Vec<f64>,
    pub eps_eq: Vec<f64>,
    pub eps_bar: Vec<f64>,
    pub d_eps_bar: Vec<f64>,
    pub damage: Vec<f64>,
    /// `max(κ_prev, ε̄)`, for the next increment.
    pub kappa: Vec<f64>,
    pub iterations: usize,
    pub residual_norms: Vec<f64>,
    pub increment_norms: Vec<f64>,
}

impl IfennResult {
    /// Per-point `x, y, eps_eq, eps_bar, d` table.
    pub fn write_field_csv(&self, gps: &[GaussPoint], path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "y", "eps_eq", "eps_bar", "d"])?;
        for (i, gp) in gps.iter().enumerate() {
            w.write_record([gp.x, gp.y, self.eps_eq[i], self.eps_bar[i], self.damage[i]].iter().map(|v| format!("{v:.16e}")))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Newton iteration `J δu = −R` at one load level starting from `u0` (its
/// prescribed entries are overwritten by `bcs`).
pub fn ifenn_solve(mesh: &Mesh, mat: &Material, model: &mut dyn NonlocalModel, bcs: &BoundaryConditions, u0: Option<&[f64]>, kappa_prev: &[f64], opts: &IfennOptions) -> Result<IfennResult> {
    mat.validate()?;
    if !(opts.tol > 0.0) || opts.max_iter == 0 || opts.divergence_window == 0 {
        return Err(Error::InvalidArgument(format!("invalid I-FENN options {opts:?}")));
    }
    if !bcs.forces.is_empty() {
        return Err(Error::InvalidArgument("I-FENN solver is displacement driven; nodal forces are not supported".into()));
    }
    let gps = mesh.gauss_points()?;
    let n = mesh.dof_count();
    let mut u = match u0 {
        Some(v) if v.len() == n => v.to_vec(),
        Some(v) => return Err(Error::ShapeMismatch(format!("initial guess has {} dofs, mesh has {n}", v.len()))),
        None => vec![0.0; n],
    };
    for (&d, &v) in &bcs.dirichlet {
        u[d] = v;
    }
    let free = FreeDofs::new(n, bcs);
    let zeros = vec![0.0; n];
    let mut residual_norms = Vec::new();
    let mut increment_norms: Vec<f64> = Vec::new();
    let fail = |reason: String, res: &[f64], inc: &[f64]| Error::IfennNotConverged {
        reason,
        iterations: inc.len(),
        residual_norms: res.to_vec(),
        increment_norms: inc.to_vec(),
    };
    loop {
        let asm = ifenn_assemble(mesh, &gps, mat, model, &u, kappa_prev)?;
        let r_free: Vec<f64> = free.free.iter().map(|&d| asm.residual[d]).collect();
        let r_norm = norm2(&r_free);
        if !r_norm.is_finite() {
            return Err(fail("non-finite residual".into(), &residual_norms, &increment_norms));
        }
        residual_norms.push(r_norm);
        let done = match (increment_norms.first(), increment_norms.last()) {
            (Some(&first), Some(&last)) => first == 0.0 || last / first <= opts.tol || r_norm <= opts.residual_tol * norm2(&asm.residual),
            _ => free.free.is_empty(),
        };
        if done {
            let kappa = kappa_prev.iter().zip(&asm.eps_bar).map(|(&k, &e)| k.max(e)).collect();
            return Ok(IfennResult {
                u,
                eps_eq: asm.eps_eq,
                eps_bar: asm.eps_bar,
                d_eps_bar: asm.d_eps_bar,
                damage: asm.damage,
                kappa,
                iterations: increment_norms.len(),
                residual_norms,
                increment_norms,
            });
        }
        let k = residual_norms.len() - 1;
        if k >= opts.divergence_window && r_norm > opts.divergence_factor * residual_norms[k - opts.divergence_window] {
            return Err(fail(format!("residual grew {}x over {} iterations", opts.divergence_factor, opts.divergence_window), &residual_norms, &increment_norms));
        }
        if increment_norms.len() == opts.max_iter {
            return Err(fail(format!("no convergence in {} iterations", opts.max_iter), &residual_norms, &increment_norms));
        }
        let neg_r: Vec<f64> = asm.residual.iter().map(|v| -v).collect();
        let (jr, rhs) = free.reduce(&asm.jacobian, &neg_r, &zeros);
        let du = BandLu::factor(&jr)?.solve(&rhs);
        for (ri, &d) in free.free.iter().enumerate() {
            u[d] += du[ri];
        }
        increment_norms.push(norm2(&du));
        log::debug!("I-FENN iteration {}: |R| = {r_norm:.3e}, |du| = {:.3e}", increment_norms.len(), norm2(&du));
    }
}

/// Drive `ifenn_solve` through a schedule, carrying u and κ between
/// increments.
pub fn ifenn_path(mesh: &Mesh, mat: &Material, model: &mut dyn NonlocalModel, load: &PrescribedLoad, schedule: &[f64], opts: &IfennOptions) -> Result<Vec<IfennResult>> {
    let ngp = mesh.elements.len() * 4;
    let mut kappa = vec![0.0; ngp];
    let mut u: Option<Vec<f64>> = None;
    let mut out = Vec::with_capacity(schedule.len());
    for &lf in schedule {
        let r = ifenn_solve(mesh, mat, model, &load.at(lf), u.as_deref(), &kappa, opts)?;
        kappa = r.kappa.clone();
        u = Some(r.u.clone());
        out.push(r);
    }
    Ok(out)
}

/// `‖a − b‖₂ / ‖b‖₂`.
pub fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    num / norm2(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elasticity::{assemble_elastic_system, solve_elastic};
    use crate::geometry::build_rect_mesh;
    use crate::net::{xavier_init, NetworkShape, Scaling};
    use crate::nonlocal_ref::{staggered_nonlocal_solve, StaggeredOptions};
    use crate::specimen::SpecimenConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn column_errors(mesh: &Mesh, mat: &Material, model: &mut dyn NonlocalModel, u: &[f64], kappa: &[f64]) -> f64 {
        let gps = mesh.gauss_points().unwrap();
        let asm = ifenn_assemble(mesh, &gps, mat, model, u, kappa).unwrap();
        let n = u.len();
        let h = 1e-10;
        let mut worst: f64 = 0.0;
        for q in 0..n {
            let mut up = u.to_vec();
            let mut um = u.to_vec();
            up[q] += h;
            um[q] -= h;
            let rp = ifenn_assemble(mesh, &gps, mat, model, &up, kappa).unwrap().residual;
            let rm = ifenn_assemble(mesh, &gps, mat, model, &um, kappa).unwrap().residual;
            let fd: Vec<f64> = rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            let col: Vec<f64> = (0..n).map(|p| asm.jacobian.get(p, q)).collect();
            let diff: f64 = fd.iter().zip(&col).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            worst = worst.max(diff / norm2(&col));
        }
        worst
    }

    /// A random net whose ε_eq dependence is O(1) and whose output sits in
    /// the damaging range.
    fn strain_sensitive_net(seed: u64) -> Network {
        let shape = NetworkShape::new(2, 6).unwrap();
        let mut sc = Scaling::identity();
        sc.scale[3] = 1e-4;
        sc.out_shift = 5e-4;
        sc.out_scale = 1e-4;
        Network::new(shape, xavier_init(&shape, seed), sc).unwrap()
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mesh = build_rect_mesh(1.0, 1.0, 2, 2, None).unwrap();
        let mat = Material::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..3 {
            let net = strain_sensitive_net(seed);
            let u: Vec<f64> = (0..mesh.dof_count()).map(|_| rng.gen_range(-1e-4..1e-4)).collect();
            let mut model = NetworkModel::new(&net, mat.g);
            let gps = mesh.gauss_points().unwrap();
            let asm = ifenn_assemble(&mesh, &gps, &mat, &mut model, &u, &vec![0.0; 16]).unwrap();
            assert!(asm.damage.iter().all(|&d| d > 0.0), "{:?}", asm.damage);
            assert!(asm.d_eps_bar.iter().any(|v| v.abs() > 0.1));
            // Half the points on the unloading branch.
            let kappa: Vec<f64> = asm.eps_bar.iter().enumerate().map(|(i, &e)| if i % 2 == 0 { 0.0 } else { e + 2e-5 }).collect();
            for k in [vec![0.0; 16], kappa] {
                let err = column_errors(&mesh, &mat, &mut model, &u, &k);
                assert!(err < 1e-5, "seed {seed}: column error {err}");
            }
        }
    }

    #[test]
    fn constant_model_gives_secant_stiffness() {
        let mesh = build_rect_mesh(1.0, 1.0, 2, 2, None).unwrap();
        let mat = Material::default();
        let gps = mesh.gauss_points().unwrap();
        let values: Vec<f64> = (0..gps.len()).map(|i| 1e-4 + 1e-6 * i as f64).collect();
        let mut model = ConstantModel { values };
        let u: Vec<f64> = (0..mesh.dof_count()).map(|i| 1e-5 * (i as f64).sin()).collect();
        let asm = ifenn_assemble(&mesh, &gps, &mat, &mut model, &u, &vec![0.0; gps.len()]).unwrap();
        let (k, _) = assemble_elastic_system(&mesh, &gps, &mat, &asm.damage, &BoundaryConditions::default()).unwrap();
        for p in 0..u.len() {
            for q in 0..u.len() {
                assert!((k.get(p, q) - asm.jacobian.get(p, q)).abs() <= 1e-12 * k.get(p, p).abs());
            }
        }
        let mut bad = ConstantModel { values: vec![0.0; 3] };
        assert!(matches!(ifenn_assemble(&mesh, &gps, &mat, &mut bad, &u, &vec![0.0; gps.len()]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn elastic_level_converges_in_one_iteration() {
        let spec = SpecimenConfig::default();
        let mesh = spec.mesh(6, 6).unwrap();
        let load = spec.load(&mesh).unwrap();
        let bcs = load.at(0.1);
        let mut model = HelmholtzModel::new(&mesh, spec.material.g).unwrap();
        let ngp = mesh.elements.len() * 4;
        let r = ifenn_solve(&mesh, &spec.material, &mut model, &bcs, None, &vec![0.0; ngp], &IfennOptions::default()).unwrap();
        assert_eq!(r.iterations, 1);
        assert!(r.damage.iter().all(|&d| d == 0.0));
        let gps = mesh.gauss_points().unwrap();
        let (k, f) = assemble_elastic_system(&mesh, &gps, &spec.material, &vec![0.0; ngp], &bcs).unwrap();
        let u = solve_elastic(&k, &f, &bcs).unwrap();
        assert!(relative_l2(&r.u, &u) < 1e-10);
    }

    #[test]
    fn helmholtz_provider_matches_staggered_reference() {
        let spec = SpecimenConfig::default();
        let schedule = [0.5, 0.6, 0.7, 0.76, 0.82];
        for n in [10, 20] {
            let mesh = spec.mesh(n, n).unwrap();
            let load = spec.load(&mesh).unwrap();
            let reference = staggered_nonlocal_solve(&mesh, &spec.material, &load, &schedule, &StaggeredOptions { tol: 1e-12, max_passes: 500 }).unwrap();
            let mut model = HelmholtzModel::new(&mesh, spec.material.g).unwrap();
            let opts = IfennOptions { tol: 1e-10, max_iter: 500, ..Default::default() };
            let path = ifenn_path(&mesh, &spec.material, &mut model, &load, &schedule, &opts).unwrap();
            let last = path.last().unwrap();
            let refd = &reference.steps.last().unwrap().damage;
            assert!(refd.iter().cloned().fold(0.0, f64::max) > 0.1);
            let diff = last.damage.iter().zip(refd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-8, "{n}x{n}: max damage difference {diff}");
        }
    }

    #[test]
    fn divergence_and_iteration_cap_report_histories() {
        let spec = SpecimenConfig::default();
        let mesh = spec.mesh(10, 10).unwrap();
        let load = spec.load(&mesh).unwrap();
        let mut model = HelmholtzModel::new(&mesh, spec.material.g).unwrap();
        let ngp = mesh.elements.len() * 4;
        let opts = IfennOptions { max_iter: 2, ..Default::default() };
        match ifenn_solve(&mesh, &spec.material, &mut model, &load.at(0.82), None, &vec![0.0; ngp], &opts) {
            Err(Error::IfennNotConverged { iterations, residual_norms, increment_norms, .. }) => {
                assert_eq!(iterations, 2);
                assert_eq!(increment_norms.len(), 2);
                assert_eq!(residual_norms.len(), 3);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn iteration_count_is_deterministic() {
        let mesh = build_rect_mesh(1.0, 1.0, 3, 3, None).unwrap();
        let spec = SpecimenConfig { notch: None, ..Default::default() };
        let load = spec.load(&mesh).unwrap();
        let net = strain_sensitive_net(9);
        let run = || {
            let mut model = NetworkModel::new(&net, spec.material.g);
            ifenn_solve(&mesh, &spec.material, &mut model, &load.at(0.8), None, &vec![0.0; 36], &IfennOptions::default()).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
    }
}
