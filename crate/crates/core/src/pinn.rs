//! Physics-informed loss for `ε̄ − g ∇²ε̄ = ε_eq` with `∇ε̄·n = 0` on the
//! boundary, and its exact gradient with respect to the network parameters.
//!
//! Residuals enter the loss measured in units of the network's output scale,
//! so with identity scaling the loss is the plain mean of squared residuals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{NetDerivs, Network, NetworkShape, Scaling, INPUT_DIM};
use crate::nonlocal_ref::Snapshot;
use crate::optim::Objective;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteriorPoint {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub g: f64,
    pub eps_eq: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundarySample {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub g: f64,
    pub eps_eq: f64,
    pub normal: [f64; 2],
}

impl InteriorPoint {
    pub fn input(&self) -> [f64; INPUT_DIM] {
        [self.x, self.y, self.g, self.eps_eq]
    }
}

impl BoundarySample {
    pub fn input(&self) -> [f64; INPUT_DIM] {
        [self.x, self.y, self.g, self.eps_eq]
    }
}

/// Training inputs only. Reference values live in [`Targets`], which the loss
/// never sees.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationSet {
    interior: Vec<InteriorPoint>,
    boundary: Vec<BoundarySample>,
}

/// ε̄_true for evaluation, aligned with the sorted rows of a
/// [`CollocationSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub interior: Vec<f64>,
    pub boundary: Vec<f64>,
}

impl CollocationSet {
    /// Rows are sorted by id so that summation order does not depend on the
    /// order of the input.
    pub fn new(mut interior: Vec<InteriorPoint>, mut boundary: Vec<BoundarySample>) -> Result<Self> {
        if interior.is_empty() {
            return Err(Error::InvalidArgument("collocation set needs at least one interior point".into()));
        }
        for p in &interior {
            if !p.input().iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteLoss { row: p.id });
            }
        }
        for p in &boundary {
            if !p.input().iter().chain(&p.normal).all(|v| v.is_finite()) {
                return Err(Error::NonFiniteLoss { row: p.id });
            }
            let len = p.normal[0].hypot(p.normal[1]);
            if (len - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!("boundary row {} has non-unit normal {:?}", p.id, p.normal)));
            }
        }
        interior.sort_by_key(|p| p.id);
        boundary.sort_by_key(|p| p.id);
        Ok(Self { interior, boundary })
    }

    /// Interior rows from the snapshot's Gauss points, boundary rows from its
    /// edge samples; ids are snapshot row indices.
    pub fn from_snapshot(snap: &Snapshot) -> Result<(Self, Targets)> {
        let mut interior = Vec::new();
        let mut boundary = Vec::new();
        let mut ti = Vec::new();
        let mut tb = Vec::new();
        for (id, r) in snap.rows.iter().enumerate() {
            if r.is_boundary {
                boundary.push(BoundarySample {
                    id,
                    x: r.x,
                    y: r.y,
                    g: r.g,
                    eps_eq: r.eps_eq,
                    normal: [r.nx, r.ny],
                });
                tb.push(r.eps_bar_true);
            } else {
                interior.push(InteriorPoint {
                    id,
                    x: r.x,
                    y: r.y,
                    g: r.g,
                    eps_eq: r.eps_eq,
                });
                ti.push(r.eps_bar_true);
            }
        }
        // Rows are produced in id order, so the targets already line up.
        Ok((Self::new(interior, boundary)?, Targets { interior: ti, boundary: tb }))
    }

    pub fn interior(&self) -> &[InteriorPoint] {
        &self.interior
    }

    pub fn boundary(&self) -> &[BoundarySample] {
        &self.boundary
    }

    /// Every network input in the set, interior first.
    pub fn inputs(&self) -> impl Iterator<Item = [f64; INPUT_DIM]> + '_ {
        self.interior.iter().map(|p| p.input()).chain(self.boundary.iter().map(|p| p.input()))
    }

    /// Input/output scaling derived from the set.
    pub fn scaling(&self) -> Result<Scaling> {
        Scaling::from_samples(self.inputs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "J_PDE")]
    pub j_pde: f64,
    #[serde(rename = "J_BCs")]
    pub j_bc: f64,
}

/// `ε̄ − g (ε̄_xx + ε̄_yy) − ε_eq`.
pub fn pde_residual(d: &NetDerivs, g: f64, eps_eq: f64) -> f64 {
    d.value - g * (d.dxx + d.dyy) - eps_eq
}

/// `n · ∇ε̄`.
pub fn bc_residual(d: &NetDerivs, normal: [f64; 2]) -> f64 {
    normal[0] * d.dx + normal[1] * d.dy
}

/// Network predictions at the interior rows, in row order.
pub fn predict_interior(net: &Network, set: &CollocationSet) -> Result<Vec<f64>> {
    set.interior.iter().map(|p| net.forward(&p.input())).collect()
}

pub fn loss(net: &Network, set: &CollocationSet) -> Result<LossBreakdown> {
    LossEvaluator::new(net.shape, net.scaling, set).breakdown(&net.theta.0)
}

pub fn loss_gradient(net: &Network, set: &CollocationSet) -> Result<Vec<f64>> {
    let mut ev = LossEvaluator::new(net.shape, net.scaling, set);
    let mut grad = vec![0.0; net.shape.param_count()];
    ev.evaluate(&net.theta.0, Some(&mut grad))?;
    Ok(grad)
}

/// Channels in the loss kernel: value, ∂x', ∂y', ∂x'x', ∂y'y' (scaled inputs).
const C: usize = 5;

enum RowKind {
    Interior { g: f64, eps_eq: f64 },
    Boundary { normal: [f64; 2] },
}

struct Row {
    id: usize,
    zs: [f64; INPUT_DIM],
    kind: RowKind,
}

/// Full-batch loss and gradient with reusable scratch buffers.
pub struct LossEvaluator {
    shape: NetworkShape,
    scaling: Scaling,
    rows: Vec<Row>,
    m_c: usize,
    m_b: usize,
    // Per affine map k: input channels (fan_in × C); per hidden layer:
    // pre-activation channels and tanh values.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    tanh: Vec<Vec<f64>>,
    adj_a: Vec<f64>,
    adj_h: Vec<f64>,
}

impl LossEvaluator {
    pub fn new(shape: NetworkShape, scaling: Scaling, set: &CollocationSet) -> Self {
        let mut rows = Vec::with_capacity(set.interior.len() + set.boundary.len());
        for p in &set.interior {
            rows.push(Row {
                id: p.id,
                zs: scaling.apply(&p.input()),
                kind: RowKind::Interior { g: p.g, eps_eq: p.eps_eq },
            });
        }
        for p in &set.boundary {
            rows.push(Row {
                id: p.id,
                zs: scaling.apply(&p.input()),
                kind: RowKind::Boundary { normal: p.normal },
            });
        }
        let n = shape.width;
        let inputs = (0..shape.affine_count()).map(|k| vec![0.0; shape.dims(k).0 * C]).collect();
        Self {
            shape,
            scaling,
            rows,
            m_c: set.interior.len(),
            m_b: set.boundary.len(),
            inputs,
            pre: vec![vec![0.0; n * C]; shape.layers],
            tanh: vec![vec![0.0; n]; shape.layers],
            adj_a: vec![0.0; n.max(1) * C],
            adj_h: vec![0.0; n.max(INPUT_DIM) * C],
        }
    }

    pub fn shape(&self) -> NetworkShape {
        self.shape
    }

    pub fn breakdown(&mut self, theta: &[f64]) -> Result<LossBreakdown> {
        self.evaluate(theta, None)
    }

    /// Loss, and its gradient added into a zeroed `grad` when requested.
    pub fn evaluate(&mut self, theta: &[f64], mut grad: Option<&mut [f64]>) -> Result<LossBreakdown> {
        if theta.len() != self.shape.param_count() {
            return Err(Error::ShapeMismatch(format!("θ has {} entries, shape needs {}", theta.len(), self.shape.param_count())));
        }
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let s = self.scaling;
        let so = s.out_scale;
        let (sx, sy) = (s.scale[0], s.scale[1]);
        let mut sum_pde = 0.0;
        let mut sum_bc = 0.0;
        for r in 0..self.rows.len() {
            let out = self.forward_row(theta, r);
            let d = NetDerivs {
                value: s.out_shift + so * out[0],
                dx: so * out[1] / sx,
                dy: so * out[2] / sy,
                dxx: so * out[3] / (sx * sx),
                dyy: so * out[4] / (sy * sy),
                de: 0.0,
            };
            let row = &self.rows[r];
            // Adjoint of the output channels for this row's squared residual.
            let mut adj = [0.0; C];
            match row.kind {
                RowKind::Interior { g, eps_eq } => {
                    let res = pde_residual(&d, g, eps_eq) / so;
                    if !(res * res).is_finite() {
                        return Err(Error::NonFiniteLoss { row: row.id });
                    }
                    sum_pde += res * res;
                    let w = 2.0 * res / self.m_c as f64;
                    adj[0] = w;
                    adj[3] = -w * g / (sx * sx);
                    adj[4] = -w * g / (sy * sy);
                }
                RowKind::Boundary { normal } => {
                    let res = bc_residual(&d, normal) / so;
                    if !(res * res).is_finite() {
                        return Err(Error::NonFiniteLoss { row: row.id });
                    }
                    sum_bc += res * res;
                    let w = 2.0 * res / self.m_b as f64;
                    adj[1] = w * normal[0] / sx;
                    adj[2] = w * normal[1] / sy;
                }
            }
            if let Some(g) = grad.as_deref_mut() {
                self.backward_row(theta, adj, g);
            }
        }
        let j_pde = sum_pde / self.m_c as f64;
        let j_bc = if self.m_b == 0 { 0.0 } else { sum_bc / self.m_b as f64 };
        Ok(LossBreakdown {
            j: j_pde + j_bc,
            j_pde,
            j_bc,
        })
    }

    /// Forward pass of one row storing everything the backward pass needs.
    /// Returns the output channels.
    fn forward_row(&mut self, theta: &[f64], r: usize) -> [f64; C] {
        let zs = self.rows[r].zs;
        let inp = &mut self.inputs[0];
        inp.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..INPUT_DIM {
            inp[j * C] = zs[j];
        }
        inp[1] = 1.0;
        inp[C + 2] = 1.0;
        let mut out = [0.0; C];
        for k in 0..self.shape.affine_count() {
            let (fi, fo) = self.shape.dims(k);
            let (w, b) = self.shape.offsets(k);
            let (done, rest) = self.inputs.split_at_mut(k + 1);
            let h = &done[k];
            for i in 0..fo {
                let row = &theta[w + i * fi..w + (i + 1) * fi];
                let mut a = [theta[b + i], 0.0, 0.0, 0.0, 0.0];
                for j in 0..fi {
                    let wij = row[j];
                    let hj = &h[j * C..j * C + C];
                    for c in 0..C {
                        a[c] += wij * hj[c];
                    }
                }
                match rest.first_mut() {
                    None => out = a,
                    Some(next) => {
                        let t = a[0].tanh();
                        let s1 = 1.0 - t * t;
                        let s2 = -2.0 * t * s1;
                        self.pre[k][i * C..i * C + C].copy_from_slice(&a);
                        self.tanh[k][i] = t;
                        let nx = &mut next[i * C..i * C + C];
                        nx[0] = t;
                        nx[1] = s1 * a[1];
                        nx[2] = s1 * a[2];
                        nx[3] = s2 * a[1] * a[1] + s1 * a[3];
                        nx[4] = s2 * a[2] * a[2] + s1 * a[4];
                    }
                }
            }
        }
        out
    }

    fn backward_row(&mut self, theta: &[f64], out_adj: [f64; C], grad: &mut [f64]) {
        // adj_a holds the adjoint of the current affine map's output channels.
        self.adj_a[..C].copy_from_slice(&out_adj);
        for k in (0..self.shape.affine_count()).rev() {
            let (fi, fo) = self.shape.dims(k);
            let (w, b) = self.shape.offsets(k);
            let h = &self.inputs[k];
            let adj_h = &mut self.adj_h[..fi * C];
            adj_h.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..fo {
                let ai = &self.adj_a[i * C..i * C + C];
                grad[b + i] += ai[0];
                let gw = &mut grad[w + i * fi..w + (i + 1) * fi];
                let wr = &theta[w + i * fi..w + (i + 1) * fi];
                for j in 0..fi {
                    let hj = &h[j * C..j * C + C];
                    let mut acc = 0.0;
                    for c in 0..C {
                        acc += ai[c] * hj[c];
                    }
                    gw[j] += acc;
                    if k > 0 {
                        let wij = wr[j];
                        let aj = &mut adj_h[j * C..j * C + C];
                        for c in 0..C {
                            aj[c] += wij * ai[c];
                        }
                    }
                }
            }
            if k == 0 {
                break;
            }
            // Through the tanh of hidden layer k-1 (whose outputs feed map k).
            let l = k - 1;
            for j in 0..fi {
                let a = &self.pre[l][j * C..j * C + C];
                let t = self.tanh[l][j];
                let s1 = 1.0 - t * t;
                let s2 = -2.0 * t * s1;
                let s3 = s1 * (6.0 * t * t - 2.0);
                let hb = &self.adj_h[j * C..j * C + C];
                let out = &mut self.adj_a[j * C..j * C + C];
                out[0] = hb[0] * s1 + (hb[1] * a[1] + hb[2] * a[2]) * s2 + hb[3] * (s3 * a[1] * a[1] + s2 * a[3]) + hb[4] * (s3 * a[2] * a[2] + s2 * a[4]);
                out[1] = hb[1] * s1 + 2.0 * hb[3] * s2 * a[1];
                out[2] = hb[2] * s1 + 2.0 * hb[4] * s2 * a[2];
                out[3] = hb[3] * s1;
                out[4] = hb[4] * s1;
            }
        }
    }
}

impl Objective for LossEvaluator {
    fn dim(&self) -> usize {
        self.shape.param_count()
    }

    fn value_and_grad(&mut self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        Ok(self.evaluate(theta, Some(grad))?.j)
    }
}
