//! Banded matrices with direct solvers.
//!
//! Structured meshes numbered row by row give stiffness matrices whose
//! bandwidth grows with the number of nodes per row, so a dense band store
//! with Cholesky (symmetric positive definite) or partially pivoted LU
//! (general) is enough for every system in the crate.

use crate::error::{Error, Result};

/// Relative pivot threshold below which a matrix is reported as singular.
const PIVOT_TOL: f64 = 1e-12;

/// Square matrix stored by rows over the band `i - kl ..= i + ku`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self {
            n,
            kl,
            ku,
            data: vec![0.0; n * (kl + ku + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lower_bandwidth(&self) -> usize {
        self.kl
    }

    pub fn upper_bandwidth(&self) -> usize {
        self.ku
    }

    #[inline]
    fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.kl + self.ku + 1) + (j + self.kl - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i < self.n && j < self.n && self.in_band(i, j) {
            self.data[self.idx(i, j)]
        } else {
            0.0
        }
    }

    /// Add `v` to entry (i, j). Panics if the entry lies outside the band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band ({}, {})", self.kl, self.ku);
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for (i, yi) in y.iter_mut().enumerate() {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            let mut s = 0.0;
            for j in lo..=hi {
                s += self.data[self.idx(i, j)] * x[j];
            }
            *yi = s;
        }
        y
    }

    /// Largest absolute difference between `A` and `Aᵀ`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for j in i.saturating_sub(self.kl)..=(i + self.ku).min(self.n - 1) {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| (0..self.n).map(|j| self.get(i, j)).collect()).collect()
    }
}

/// Cholesky factor `L` of a symmetric positive definite band matrix. Only the
/// lower band of the input is read.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    bw: usize,
    // Row i holds L[i][i - bw ..= i].
    l: Vec<f64>,
}

impl Cholesky {
    pub fn factor(a: &BandMatrix) -> Result<Self> {
        let n = a.n;
        let bw = a.kl;
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        let at = |i: usize, j: usize| i * w + (j + bw - i);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut s = a.get(i, j);
                let klo = lo.max(j.saturating_sub(bw));
                for k in klo..j {
                    s -= l[at(i, k)] * l[at(j, k)];
                }
                if i == j {
                    let diag = a.get(i, i).abs().max(f64::MIN_POSITIVE);
                    if !(s > PIVOT_TOL * diag) {
                        return Err(Error::SingularMatrix { pivot: i, value: s });
                    }
                    l[at(i, i)] = s.sqrt();
                } else {
                    l[at(i, j)] = s / l[at(j, j)];
                }
            }
        }
        Ok(Self { n, bw, l })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let w = self.bw + 1;
        let at = |i: usize, j: usize| i * w + (j + self.bw - i);
        let mut y = b.to_vec();
        for i in 0..self.n {
            let mut s = y[i];
            for k in i.saturating_sub(self.bw)..i {
                s -= self.l[at(i, k)] * y[k];
            }
            y[i] = s / self.l[at(i, i)];
        }
        for i in (0..self.n).rev() {
            let mut s = y[i];
            for k in i + 1..(i + self.bw + 1).min(self.n) {
                s -= self.l[at(k, i)] * y[k];
            }
            y[i] = s / self.l[at(i, i)];
        }
        y
    }
}

/// LU factorization with partial pivoting of a general band matrix.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    // Upper bandwidth after fill-in from row exchanges.
    ku: usize,
    lu: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandLu {
    pub fn factor(a: &BandMatrix) -> Result<Self> {
        let n = a.n;
        let kl = a.kl;
        let ku = a.ku + a.kl;
        let w = kl + ku + 1;
        let at = |i: usize, j: usize| i * w + (j + kl - i);
        let mut lu = vec![0.0; n * w];
        let mut scale = vec![0.0f64; n];
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + a.ku).min(n.saturating_sub(1)) {
                let v = a.get(i, j);
                lu[at(i, j)] = v;
                scale[i] = scale[i].max(v.abs());
            }
        }
        let mut pivots = vec![0; n];
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = lu[at(k, k)].abs();
            for i in k + 1..=last {
                let v = lu[at(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            pivots[k] = p;
            let col_hi = (k + ku).min(n - 1);
            if p != k {
                for j in k..=col_hi {
                    lu.swap(at(k, j), at(p, j));
                }
                scale.swap(k, p);
            }
            let piv = lu[at(k, k)];
            if !(piv.abs() > PIVOT_TOL * scale[k].max(f64::MIN_POSITIVE)) {
                return Err(Error::SingularMatrix { pivot: k, value: piv });
            }
            for i in k + 1..=last {
                let m = lu[at(i, k)] / piv;
                lu[at(i, k)] = m;
                if m != 0.0 {
                    for j in k + 1..=col_hi {
                        lu[at(i, j)] -= m * lu[at(k, j)];
                    }
                }
            }
        }
        Ok(Self { n, kl, ku, lu, pivots })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let w = self.kl + self.ku + 1;
        let at = |i: usize, j: usize| i * w + (j + self.kl - i);
        let mut x = b.to_vec();
        for k in 0..self.n {
            let p = self.pivots[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            for i in k + 1..=(k + self.kl).min(self.n - 1) {
                x[i] -= self.lu[at(i, k)] * xk;
            }
        }
        for i in (0..self.n).rev() {
            let mut s = x[i];
            for j in i + 1..=(i + self.ku).min(self.n - 1) {
                s -= self.lu[at(i, j)] * x[j];
            }
            x[i] = s / self.lu[at(i, i)];
        }
        x
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}
