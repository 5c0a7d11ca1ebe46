//! Plane-strain linear elasticity with scalar damage.
//!
//! Strains are stored tensorially (`xy` is ε_xy, not γ_xy). The factor two on
//! shear enters exactly once, in the strain-displacement matrix, so Voigt
//! vectors in this module are `[ε_xx, ε_yy, γ_xy]`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GaussPoint, Mesh};
use crate::linalg::{BandMatrix, Cholesky};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MazarsParams {
    pub kappa0: f64,
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
}

impl Default for MazarsParams {
    fn default() -> Self {
        Self {
            kappa0: 1e-4,
            a: 0.7,
            b: 1e4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    #[serde(rename = "E")]
    pub young: f64,
    #[serde(rename = "nu")]
    pub poisson: f64,
    pub mazars: MazarsParams,
    /// Gradient parameter g = l_c² / 2.
    pub g: f64,
}

impl Default for Material {
    fn default() -> Self {
        Self {
            young: 30_000.0,
            poisson: 0.2,
            mazars: MazarsParams::default(),
            g: 0.05,
        }
    }
}

impl Material {
    pub fn new(young: f64, poisson: f64, mazars: MazarsParams, g: f64) -> Result<Self> {
        let m = Self {
            young,
            poisson,
            mazars,
            g,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidMaterial(msg.to_string()));
        if !(self.young > 0.0) {
            return bad("E must be positive");
        }
        if !(0.0..0.5).contains(&self.poisson) {
            return bad("nu must lie in [0, 0.5)");
        }
        if !(self.mazars.kappa0 > 0.0) {
            return bad("kappa0 must be positive");
        }
        if !(self.mazars.a > 0.0 && self.mazars.a <= 1.0) {
            return bad("A must lie in (0, 1]");
        }
        if !(self.mazars.b > 0.0) {
            return bad("B must be positive");
        }
        if !(self.g >= 0.0) {
            return bad("g must be non-negative");
        }
        Ok(())
    }
}

/// Symmetric 2D strain tensor with tensorial shear.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StrainTensor2D {
    pub xx: f64,
    pub yy: f64,
    pub xy: f64,
}

impl StrainTensor2D {
    pub fn new(xx: f64, yy: f64, xy: f64) -> Self {
        Self { xx, yy, xy }
    }

    /// From `[ε_xx, ε_yy, γ_xy]`.
    pub fn from_voigt(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], 0.5 * v[2])
    }

    pub fn to_voigt(self) -> [f64; 3] {
        [self.xx, self.yy, 2.0 * self.xy]
    }

    /// Principal strains, largest first.
    pub fn principal(&self) -> (f64, f64) {
        let m = 0.5 * (self.xx + self.yy);
        let r = (0.25 * (self.xx - self.yy).powi(2) + self.xy * self.xy).sqrt();
        (m + r, m - r)
    }

    /// The tensor rotated by `angle` in the plane.
    pub fn rotated(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            xx: c * c * self.xx + s * s * self.yy + 2.0 * s * c * self.xy,
            yy: s * s * self.xx + c * c * self.yy - 2.0 * s * c * self.xy,
            xy: s * c * (self.yy - self.xx) + (c * c - s * s) * self.xy,
        }
    }
}

/// Per-Gauss-point history variable κ and damage d.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DamageState {
    pub kappa: Vec<f64>,
    pub damage: Vec<f64>,
}

impl DamageState {
    pub fn undamaged(gauss_points: usize) -> Self {
        Self {
            kappa: vec![0.0; gauss_points],
            damage: vec![0.0; gauss_points],
        }
    }
}

/// Plane-strain stiffness in Voigt form.
pub fn constitutive_matrix(mat: &Material) -> Result<[[f64; 3]; 3]> {
    mat.validate()?;
    let (e, nu) = (mat.young, mat.poisson);
    let f = e / ((1.0 + nu) * (1.0 - 2.0 * nu));
    Ok([
        [f * (1.0 - nu), f * nu, 0.0],
        [f * nu, f * (1.0 - nu), 0.0],
        [0.0, 0.0, e / (2.0 * (1.0 + nu))],
    ])
}

/// Mazars equivalent strain `sqrt(Σ <ε_I>₊²)` over the in-plane principal
/// strains, with its derivative with respect to `[ε_xx, ε_yy, γ_xy]`.
///
/// At the zero tensor the zero subgradient is returned. When both principal
/// strains are positive the expression is smooth even at coalescence
/// (`ε_eq² = 2m² + 2R²`), so that branch avoids dividing by R.
pub fn equivalent_strain(eps: &StrainTensor2D) -> (f64, [f64; 3]) {
    let m = 0.5 * (eps.xx + eps.yy);
    let half_diff = 0.5 * (eps.xx - eps.yy);
    let r = (half_diff * half_diff + eps.xy * eps.xy).sqrt();
    let (e1, e2) = (m + r, m - r);
    let p1 = e1.max(0.0);
    let p2 = e2.max(0.0);
    let eq = (p1 * p1 + p2 * p2).sqrt();
    if eq == 0.0 {
        return (0.0, [0.0; 3]);
    }
    // d/d(ε_xx, ε_yy, ε_xy) of m and of R²/2.
    let dm = [0.5, 0.5, 0.0];
    let dr2_half = [0.5 * half_diff, -0.5 * half_diff, eps.xy];
    let mut d = [0.0; 3];
    if e2 > 0.0 {
        // eq d(eq) = 2 m dm + 2 R dR
        for k in 0..3 {
            d[k] = (2.0 * m * dm[k] + 2.0 * dr2_half[k]) / eq;
        }
    } else {
        // Only ε_1 contributes and R > 0 here: eq = ε_1.
        for k in 0..3 {
            d[k] = dm[k] + dr2_half[k] / r;
        }
    }
    // Tensorial shear to engineering shear.
    d[2] *= 0.5;
    (eq, d)
}

/// Mazars exponential damage law and its derivative with respect to κ.
pub fn mazars_damage(kappa: f64, mat: &Material) -> (f64, f64) {
    let MazarsParams { kappa0, a, b } = mat.mazars;
    if kappa <= kappa0 {
        return (0.0, 0.0);
    }
    let ex = (-b * (kappa - kappa0)).exp();
    let d = 1.0 - kappa0 * (1.0 - a) / kappa - a * ex;
    let dd = kappa0 * (1.0 - a) / (kappa * kappa) + a * b * ex;
    (d, dd)
}

/// Strain-displacement matrix (3 × 8) at a Gauss point.
pub fn b_matrix(gp: &GaussPoint) -> [[f64; 8]; 3] {
    b_from_gradients(&gp.dndx)
}

pub fn b_from_gradients(dndx: &[[f64; 2]; 4]) -> [[f64; 8]; 3] {
    let mut b = [[0.0; 8]; 3];
    for a in 0..4 {
        let [dx, dy] = dndx[a];
        b[0][2 * a] = dx;
        b[1][2 * a + 1] = dy;
        b[2][2 * a] = dy;
        b[2][2 * a + 1] = dx;
    }
    b
}

pub fn element_dofs(conn: &[usize; 4]) -> [usize; 8] {
    let mut d = [0; 8];
    for (a, &n) in conn.iter().enumerate() {
        d[2 * a] = 2 * n;
        d[2 * a + 1] = 2 * n + 1;
    }
    d
}

/// Half-bandwidth of the two-dof-per-node system.
pub fn dof_bandwidth(mesh: &Mesh) -> usize {
    mesh.elements
        .iter()
        .map(|c| {
            let lo = c.iter().min().unwrap();
            let hi = c.iter().max().unwrap();
            2 * (hi - lo) + 1
        })
        .max()
        .unwrap_or(0)
}

/// Voigt strain `[ε_xx, ε_yy, γ_xy]` at each Gauss point.
pub fn gauss_strains(mesh: &Mesh, gps: &[GaussPoint], u: &[f64]) -> Vec<[f64; 3]> {
    gps.iter().map(|gp| strain_at(mesh, gp.element, &gp.dndx, u)).collect()
}

/// Voigt strain inside `element` given the physical shape gradients there.
pub fn strain_at(mesh: &Mesh, element: usize, dndx: &[[f64; 2]; 4], u: &[f64]) -> [f64; 3] {
    let b = b_from_gradients(dndx);
    let dofs = element_dofs(&mesh.elements[element]);
    let mut eps = [0.0; 3];
    for (r, row) in b.iter().enumerate() {
        eps[r] = row.iter().zip(&dofs).map(|(bv, &d)| bv * u[d]).sum();
    }
    eps
}

/// Prescribed displacements and nodal forces.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundaryConditions {
    pub dirichlet: BTreeMap<usize, f64>,
    pub forces: Vec<(usize, f64)>,
}

impl BoundaryConditions {
    pub fn fix(&mut self, dof: usize, value: f64) {
        self.dirichlet.insert(dof, value);
    }
}

/// Global stiffness with the damage field applied and the external load
/// vector. Rows and columns cover every dof; constraints are applied at solve
/// time.
pub fn assemble_elastic_system(mesh: &Mesh, gps: &[GaussPoint], mat: &Material, damage: &[f64], bcs: &BoundaryConditions) -> Result<(BandMatrix, Vec<f64>)> {
    if damage.len() != gps.len() {
        return Err(Error::ShapeMismatch(format!("{} damage values for {} Gauss points", damage.len(), gps.len())));
    }
    let c = constitutive_matrix(mat)?;
    let n = mesh.dof_count();
    let bw = dof_bandwidth(mesh);
    let mut k = BandMatrix::zeros(n, bw, bw);
    for (gp, &d) in gps.iter().zip(damage) {
        let b = b_matrix(gp);
        let dofs = element_dofs(&mesh.elements[gp.element]);
        let factor = (1.0 - d) * gp.dv();
        // cb = C B
        let mut cb = [[0.0; 8]; 3];
        for i in 0..3 {
            for j in 0..8 {
                cb[i][j] = (0..3).map(|m| c[i][m] * b[m][j]).sum();
            }
        }
        for p in 0..8 {
            for q in 0..8 {
                let v: f64 = (0..3).map(|m| b[m][p] * cb[m][q]).sum();
                k.add(dofs[p], dofs[q], factor * v);
            }
        }
    }
    let mut f = vec![0.0; n];
    for &(dof, v) in &bcs.forces {
        f[dof] += v;
    }
    Ok((k, f))
}

/// Map between all dofs and the unconstrained ones.
#[derive(Debug, Clone)]
pub struct FreeDofs {
    pub free: Vec<usize>,
    pub index: Vec<Option<usize>>,
}

impl FreeDofs {
    pub fn new(n: usize, bcs: &BoundaryConditions) -> Self {
        let mut index = vec![None; n];
        let mut free = Vec::new();
        for (d, slot) in index.iter_mut().enumerate() {
            if !bcs.dirichlet.contains_key(&d) {
                *slot = Some(free.len());
                free.push(d);
            }
        }
        Self { free, index }
    }

    /// Restrict `a` to free rows/columns and move the prescribed columns to
    /// the right-hand side.
    pub fn reduce(&self, a: &BandMatrix, rhs: &[f64], prescribed: &[f64]) -> (BandMatrix, Vec<f64>) {
        let n = a.dim();
        let (kl, ku) = (a.lower_bandwidth(), a.upper_bandwidth());
        let mut r = BandMatrix::zeros(self.free.len(), kl, ku);
        let mut b: Vec<f64> = self.free.iter().map(|&d| rhs[d]).collect();
        for (ri, &i) in self.free.iter().enumerate() {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                let v = a.get(i, j);
                if v == 0.0 {
                    continue;
                }
                match self.index[j] {
                    Some(rj) => r.add(ri, rj, v),
                    None => b[ri] -= v * prescribed[j],
                }
            }
        }
        (r, b)
    }
}

/// Solve `K u = F` with Dirichlet elimination.
pub fn solve_elastic(k: &BandMatrix, f: &[f64], bcs: &BoundaryConditions) -> Result<Vec<f64>> {
    let n = k.dim();
    let mut u = vec![0.0; n];
    for (&d, &v) in &bcs.dirichlet {
        u[d] = v;
    }
    let free = FreeDofs::new(n, bcs);
    if free.free.is_empty() {
        return Ok(u);
    }
    let (kr, fr) = free.reduce(k, f, &u);
    let chol = Cholesky::factor(&kr)?;
    let ur = chol.solve(&fr);
    for (ri, &d) in free.free.iter().enumerate() {
        u[d] = ur[ri];
    }
    Ok(u)
}
