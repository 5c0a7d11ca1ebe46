//! Full-batch Adam and L-BFGS with a strong-Wolfe line search.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, norm_inf};
use crate::metrics::delta_theta;

/// A differentiable scalar objective.
pub trait Objective {
    fn dim(&self) -> usize;

    /// Value at `theta`, writing the gradient into `grad`.
    fn value_and_grad(&mut self, theta: &[f64], grad: &mut [f64]) -> Result<f64>;
}

impl<F> Objective for (usize, F)
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    fn dim(&self) -> usize {
        self.0
    }

    fn value_and_grad(&mut self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        (self.1)(theta, grad)
    }
}

/// Δθ sampling cadence in epochs.
pub const SNAPSHOT_EVERY: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
}

impl AdamConfig {
    pub fn new(lr: f64, epochs: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0 && (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0 && self.epochs >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid Adam config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamResult {
    pub theta: Vec<f64>,
    /// J before each epoch's update, then J at the final parameters.
    pub j_history: Vec<f64>,
    /// Relative parameter change between consecutive snapshots (every
    /// [`SNAPSHOT_EVERY`] epochs plus the final partial block).
    pub delta_theta: Vec<f64>,
    /// Wall time of each snapshot block in seconds and its epoch count.
    pub block_times: Vec<(f64, usize)>,
    pub wall_time: f64,
}

impl AdamResult {
    pub fn final_j(&self) -> f64 {
        *self.j_history.last().unwrap()
    }

    /// Mean wall time per 100 epochs.
    pub fn rt100(&self) -> f64 {
        let (t, n) = self.block_times.iter().fold((0.0, 0), |(t, n), &(bt, bn)| (t + bt, n + bn));
        if n == 0 {
            0.0
        } else {
            t / n as f64 * SNAPSHOT_EVERY as f64
        }
    }
}

/// Adam with bias correction. `hook` sees every epoch's index and loss.
pub fn adam_run(theta0: &[f64], obj: &mut dyn Objective, cfg: &AdamConfig, mut hook: Option<&mut dyn FnMut(usize, f64)>) -> Result<AdamResult> {
    cfg.validate()?;
    if theta0.len() != obj.dim() {
        return Err(Error::ShapeMismatch(format!("θ0 has {} entries, objective expects {}", theta0.len(), obj.dim())));
    }
    if !theta0.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument("θ0 contains non-finite values".into()));
    }
    let n = theta0.len();
    let mut theta = theta0.to_vec();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut j_history = Vec::with_capacity(cfg.epochs + 1);
    let mut delta = Vec::new();
    let mut block_times = Vec::new();
    let mut last_snapshot = theta.clone();
    let (mut b1t, mut b2t) = (1.0, 1.0);
    let start = Instant::now();
    let mut block_start = Instant::now();

    let abort = |epoch: usize, e: Error| Error::TrainingAborted { epoch, source: Box::new(e) };
    for epoch in 0..cfg.epochs {
        let j = obj.value_and_grad(&theta, &mut grad).map_err(|e| abort(epoch, e))?;
        if !j.is_finite() || !grad.iter().all(|g| g.is_finite()) {
            return Err(abort(epoch, Error::NonFiniteLoss { row: usize::MAX }));
        }
        j_history.push(j);
        if let Some(h) = hook.as_deref_mut() {
            h(epoch, j);
        }
        b1t *= cfg.beta1;
        b2t *= cfg.beta2;
        for k in 0..n {
            let g = grad[k];
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
            let mh = m[k] / (1.0 - b1t);
            let vh = v[k] / (1.0 - b2t);
            theta[k] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
        let done = epoch + 1;
        if done % SNAPSHOT_EVERY == 0 || done == cfg.epochs {
            let epochs_in_block = if done % SNAPSHOT_EVERY == 0 { SNAPSHOT_EVERY } else { done % SNAPSHOT_EVERY };
            block_times.push((block_start.elapsed().as_secs_f64(), epochs_in_block));
            delta.push(delta_theta(&last_snapshot, &theta).map_err(|e| abort(epoch, e))?);
            last_snapshot.copy_from_slice(&theta);
            block_start = Instant::now();
        }
    }
    let j = obj.value_and_grad(&theta, &mut grad).map_err(|e| abort(cfg.epochs, e))?;
    if !j.is_finite() {
        return Err(abort(cfg.epochs, Error::NonFiniteLoss { row: usize::MAX }));
    }
    j_history.push(j);
    Ok(AdamResult {
        theta,
        j_history,
        delta_theta: delta,
        block_times,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsConfig {
    pub history: usize,
    pub c1: f64,
    pub c2: f64,
    pub grad_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            history: 10,
            c1: 1e-4,
            c2: 0.9,
            grad_tol: 1e-8,
            rel_tol: 1e-9,
            max_iter: 20_000,
        }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<()> {
        if 0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0 && self.grad_tol >= 0.0 && self.rel_tol >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid L-BFGS config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    RelativeLossChange,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsResult {
    pub theta: Vec<f64>,
    /// J at the start and after every accepted iteration.
    pub j_history: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    pub wall_time: f64,
}

impl LbfgsResult {
    pub fn final_j(&self) -> f64 {
        *self.j_history.last().unwrap()
    }

    pub fn warning(&self) -> bool {
        self.termination == Termination::LineSearchFailed
    }
}

/// Objective restricted to a line, with non-finite values or evaluation
/// errors mapped to +∞ so the line search backs off instead of failing.
struct LineFn<'a> {
    obj: &'a mut dyn Objective,
    x: &'a [f64],
    d: &'a [f64],
    xt: Vec<f64>,
    gt: Vec<f64>,
    evals: usize,
}

impl LineFn<'_> {
    fn eval(&mut self, alpha: f64) -> (f64, f64) {
        for k in 0..self.x.len() {
            self.xt[k] = self.x[k] + alpha * self.d[k];
        }
        self.evals += 1;
        match self.obj.value_and_grad(&self.xt, &mut self.gt) {
            Ok(f) if f.is_finite() && self.gt.iter().all(|g| g.is_finite()) => (f, dot(&self.gt, self.d)),
            _ => (f64::INFINITY, f64::NAN),
        }
    }
}

const MAX_LINE_EVALS: usize = 40;

/// Minimizer of the cubic interpolating (a, fa, ga) and (b, fb, gb), falling
/// back to bisection when it is undefined or outside the bracket.
fn cubic_min(a: f64, fa: f64, ga: f64, b: f64, fb: f64, gb: f64) -> f64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - ga * gb;
    if disc.is_finite() && disc >= 0.0 && fb.is_finite() && gb.is_finite() {
        let d2 = (b - a).signum() * disc.sqrt();
        let t = b - (b - a) * (gb + d2 - d1) / (gb - ga + 2.0 * d2);
        let margin = 0.1 * (hi - lo);
        if t.is_finite() && t > lo + margin && t < hi - margin {
            return t;
        }
    }
    0.5 * (a + b)
}

/// Strong-Wolfe step along `d` (bracketing then zoom). Returns the accepted
/// step with f and gradient stored in `lf.xt`/`lf.gt`, or None.
fn strong_wolfe(lf: &mut LineFn, f0: f64, g0: f64, c1: f64, c2: f64) -> Option<(f64, f64)> {
    let mut a_prev = 0.0;
    let (mut f_prev, mut g_prev) = (f0, g0);
    let mut a = 1.0;
    let a_max = 1e10;
    for i in 0.. {
        if lf.evals >= MAX_LINE_EVALS {
            return None;
        }
        let (f, g) = lf.eval(a);
        if f > f0 + c1 * a * g0 || (i > 0 && f >= f_prev) {
            return zoom(lf, f0, g0, c1, c2, a_prev, f_prev, g_prev, a, f, g);
        }
        if g.abs() <= -c2 * g0 {
            return Some((a, f));
        }
        if g >= 0.0 {
            return zoom(lf, f0, g0, c1, c2, a, f, g, a_prev, f_prev, g_prev);
        }
        a_prev = a;
        f_prev = f;
        g_prev = g;
        a = (2.0 * a).min(a_max);
    }
    None
}

#[allow(clippy::too_many_arguments)]
fn zoom(lf: &mut LineFn, f0: f64, g0: f64, c1: f64, c2: f64, mut lo: f64, mut f_lo: f64, mut g_lo: f64, mut hi: f64, mut f_hi: f64, mut g_hi: f64) -> Option<(f64, f64)> {
    while lf.evals < MAX_LINE_EVALS {
        if (hi - lo).abs() <= 1e-16 * lo.abs().max(1.0) {
            break;
        }
        let a = cubic_min(lo, f_lo, g_lo, hi, f_hi, g_hi);
        let (f, g) = lf.eval(a);
        if f > f0 + c1 * a * g0 || f >= f_lo {
            hi = a;
            f_hi = f;
            g_hi = g;
        } else {
            if g.abs() <= -c2 * g0 {
                return Some((a, f));
            }
            if g * (hi - lo) >= 0.0 {
                hi = lo;
                f_hi = f_lo;
                g_hi = g_lo;
            }
            lo = a;
            f_lo = f;
            g_lo = g;
        }
    }
    None
}

/// Two-loop recursion: `-H g` from the stored (s, y) pairs, oldest first.
fn two_loop(g: &[f64], s: &[Vec<f64>], y: &[Vec<f64>]) -> Vec<f64> {
    let mut q = g.to_vec();
    let k = s.len();
    let mut alpha = vec![0.0; k];
    let rho: Vec<f64> = (0..k).map(|i| 1.0 / dot(&y[i], &s[i])).collect();
    for i in (0..k).rev() {
        alpha[i] = rho[i] * dot(&s[i], &q);
        for (qj, yj) in q.iter_mut().zip(&y[i]) {
            *qj -= alpha[i] * yj;
        }
    }
    let gamma = if k > 0 { dot(&s[k - 1], &y[k - 1]) / dot(&y[k - 1], &y[k - 1]) } else { 1.0 };
    for qj in q.iter_mut() {
        *qj *= gamma;
    }
    for i in 0..k {
        let b = rho[i] * dot(&y[i], &q);
        for (qj, sj) in q.iter_mut().zip(&s[i]) {
            *qj += (alpha[i] - b) * sj;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// L-BFGS. `history = 0` gives steepest descent with the same line search.
pub fn lbfgs_run(theta0: &[f64], obj: &mut dyn Objective, cfg: &LbfgsConfig) -> Result<LbfgsResult> {
    cfg.validate()?;
    if theta0.len() != obj.dim() {
        return Err(Error::ShapeMismatch(format!("θ0 has {} entries, objective expects {}", theta0.len(), obj.dim())));
    }
    let start = Instant::now();
    let n = theta0.len();
    let mut x = theta0.to_vec();
    let mut g = vec![0.0; n];
    let mut f = obj.value_and_grad(&x, &mut g)?;
    if !f.is_finite() {
        return Err(Error::NonFiniteLoss { row: usize::MAX });
    }
    let mut j_history = vec![f];
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut iterations = 0;
    let finish = |x: Vec<f64>, j_history: Vec<f64>, iterations: usize, termination: Termination| LbfgsResult {
        theta: x,
        j_history,
        iterations,
        termination,
        wall_time: start.elapsed().as_secs_f64(),
    };
    if norm_inf(&g) < cfg.grad_tol {
        return Ok(finish(x, j_history, 0, Termination::GradientTolerance));
    }
    loop {
        if iterations >= cfg.max_iter {
            return Ok(finish(x, j_history, iterations, Termination::MaxIterations));
        }
        let mut d = two_loop(&g, &s_hist, &y_hist);
        let mut gd = dot(&g, &d);
        if !(gd < 0.0) {
            // Lost descent through round-off in the curvature pairs.
            s_hist.clear();
            y_hist.clear();
            d = g.iter().map(|v| -v).collect();
            gd = -dot(&g, &g);
        }
        let mut lf = LineFn {
            obj: &mut *obj,
            x: &x,
            d: &d,
            xt: vec![0.0; n],
            gt: vec![0.0; n],
            evals: 0,
        };
        let Some((_, f_new)) = strong_wolfe(&mut lf, f, gd, cfg.c1, cfg.c2) else {
            return Ok(finish(x, j_history, iterations, Termination::LineSearchFailed));
        };
        let (x_new, g_new) = (lf.xt, lf.gt);
        iterations += 1;
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let f_old = f;
        x = x_new;
        g = g_new;
        f = f_new;
        j_history.push(f);
        if cfg.history > 0 && dot(&s, &y) > 1e-12 * norm2(&y).powi(2).max(f64::MIN_POSITIVE) {
            if s_hist.len() == cfg.history {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
        }
        if norm_inf(&g) < cfg.grad_tol {
            return Ok(finish(x, j_history, iterations, Termination::GradientTolerance));
        }
        if (f_old - f).abs() / f.max(1e-30) < cfg.rel_tol {
            return Ok(finish(x, j_history, iterations, Termination::RelativeLossChange));
        }
    }
}
