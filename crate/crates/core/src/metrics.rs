//! Training and prediction metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows whose true value is below this fraction of max |t| are left out of
/// the relative error.
pub const L2RSE_ZERO_GUARD: f64 = 1e-14;
/// Trivial-solution thresholds: relative spread of the predictions and
/// relative offset of their mean from the input mean.
pub const TRIVIAL_SPREAD_TOL: f64 = 1e-3;
pub const TRIVIAL_MEAN_TOL: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L2rse {
    pub value: f64,
    /// Rows dropped by the zero guard.
    pub excluded: usize,
}

/// `sqrt(Σ ((p − t)/t)²)`.
pub fn l2rse(pred: &[f64], truth: &[f64]) -> Result<L2rse> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::ShapeMismatch(format!("l2rse needs equal non-empty inputs, got {} and {}", pred.len(), truth.len())));
    }
    let tmax = truth.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    if tmax == 0.0 {
        return Err(Error::InvalidArgument("l2rse: every true value is zero".into()));
    }
    let mut sum = 0.0;
    let mut excluded = 0;
    for (p, t) in pred.iter().zip(truth) {
        if t.abs() < L2RSE_ZERO_GUARD * tmax {
            excluded += 1;
            continue;
        }
        let e = (p - t) / t;
        sum += e * e;
    }
    Ok(L2rse { value: sum.sqrt(), excluded })
}

/// `‖θ_curr − θ_prev‖ / ‖θ_prev‖`.
pub fn delta_theta(prev: &[f64], curr: &[f64]) -> Result<f64> {
    if prev.len() != curr.len() {
        return Err(Error::ShapeMismatch(format!("Δθ of vectors with {} and {} entries", prev.len(), curr.len())));
    }
    let den = prev.iter().map(|v| v * v).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(Error::InvalidArgument("Δθ with a zero previous parameter vector".into()));
    }
    let num = prev.iter().zip(curr).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt();
    Ok(num / den)
}

/// Least-squares slope of `(k, Δθ_k)` with the first sample omitted.
pub fn slope_fit(samples: &[f64]) -> Result<f64> {
    if samples.len() < 3 {
        return Err(Error::InvalidArgument(format!("slope fit needs at least 3 samples, got {}", samples.len())));
    }
    let pts: Vec<(f64, f64)> = samples.iter().enumerate().skip(1).map(|(k, &v)| (k as f64, v)).collect();
    let n = pts.len() as f64;
    let xm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - xm) * (y - ym)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - xm) * (x - xm)).sum();
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrivialEvidence {
    pub flag: bool,
    /// std(pred) / |mean(pred)|.
    pub spread: f64,
    /// |mean(pred) − mean(ε_eq)| / |mean(ε_eq)|.
    pub mean_offset: f64,
    pub mean_pred: f64,
    pub mean_input: f64,
}

/// Flags a network that outputs (nearly) the mean of its ε_eq input
/// everywhere.
pub fn trivial_detector(pred: &[f64], eps_eq: &[f64]) -> TrivialEvidence {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let mp = mean(pred);
    let me = mean(eps_eq);
    let sd = (pred.iter().map(|p| (p - mp).powi(2)).sum::<f64>() / pred.len().max(1) as f64).sqrt();
    let spread = sd / mp.abs();
    let mean_offset = (mp - me).abs() / me.abs();
    TrivialEvidence {
        flag: spread < TRIVIAL_SPREAD_TOL && mean_offset < TRIVIAL_MEAN_TOL,
        spread,
        mean_offset,
        mean_pred: mp,
        mean_input: me,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxStrainReport {
    pub max_pred: f64,
    pub max_true: f64,
    /// (max_pred − max_true) / max_true.
    pub rel_error: f64,
    pub argmax_pred: usize,
    pub argmax_true: usize,
    pub argmax_match: bool,
}

pub fn max_strain_report(pred: &[f64], truth: &[f64]) -> Result<MaxStrainReport> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!("max strain report needs equal non-empty inputs, got {} and {}", pred.len(), truth.len())));
    }
    let argmax = |v: &[f64]| (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b });
    let (ip, it) = (argmax(pred), argmax(truth));
    Ok(MaxStrainReport {
        max_pred: pred[ip],
        max_true: truth[it],
        rel_error: (pred[ip] - truth[it]) / truth[it],
        argmax_pred: ip,
        argmax_true: it,
        argmax_match: ip == it,
    })
}

/// Everything reported for one training run. Per-GP normalized values are
/// raw values divided by `gauss_points`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub gauss_points: usize,
    pub j_adam_end: Option<f64>,
    pub j_lbfgs_end: Option<f64>,
    pub l2rse_adam_end: Option<f64>,
    pub l2rse_lbfgs_end: Option<f64>,
    pub l2rse_excluded: usize,
    pub delta_theta: Vec<f64>,
    pub s_delta_theta: Option<f64>,
    /// Mean wall time of 100 Adam epochs [s].
    pub adam_rt100: Option<f64>,
    pub iter_lbfgs: Option<usize>,
    pub lbfgs_termination: Option<String>,
    pub iter_ifenn: Option<usize>,
    pub eps_bar_max_pred: Option<f64>,
    pub eps_bar_max_true: Option<f64>,
    pub eps_bar_max_rel_error: Option<f64>,
    pub eps_bar_argmax_match: Option<bool>,
    pub trivial: Option<TrivialEvidence>,
}

impl MetricsRecord {
    pub fn normalize(&self, raw: Option<f64>) -> Option<f64> {
        raw.map(|v| v / self.gauss_points as f64)
    }

    pub fn j_adam_norm(&self) -> Option<f64> {
        self.normalize(self.j_adam_end)
    }

    pub fn j_lbfgs_norm(&self) -> Option<f64> {
        self.normalize(self.j_lbfgs_end)
    }

    pub fn l2rse_adam_norm(&self) -> Option<f64> {
        self.normalize(self.l2rse_adam_end)
    }

    pub fn l2rse_lbfgs_norm(&self) -> Option<f64> {
        self.normalize(self.l2rse_lbfgs_end)
    }

    pub fn trivial_flag(&self) -> bool {
        self.trivial.map(|t| t.flag).unwrap_or(false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l2rse_examples() {
        let t = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(l2rse(&t, &t).unwrap().value, 0.0);
        let p: Vec<f64> = t.iter().map(|v| 2.0 * v).collect();
        assert_eq!(l2rse(&p, &t).unwrap().value, 2.0);
        let v = l2rse(&[1.1, 0.9], &[1.0, 1.0]).unwrap().value;
        assert!((v - 0.02f64.sqrt()).abs() < 1e-12);
        assert!((v - 0.141_421).abs() < 1e-6);
        let g = l2rse(&[1.0, 5.0], &[1.0, 0.0]).unwrap();
        assert_eq!((g.value, g.excluded), (0.0, 1));
        assert!(l2rse(&[1.0], &[0.0]).is_err());
        assert!(l2rse(&[], &[]).is_err());
    }

    #[test]
    fn delta_theta_examples() {
        assert_eq!(delta_theta(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert_eq!(delta_theta(&[3.0, 4.0], &[6.0, 8.0]).unwrap(), 1.0);
        assert!(delta_theta(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn slope_examples() {
        let mut s = vec![123.0];
        s.extend((1..=50).map(|k| 2.0 - 0.001 * k as f64));
        assert!((slope_fit(&s).unwrap() + 0.001).abs() < 1e-12);
        assert_eq!(slope_fit(&[9.0, 1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert!(slope_fit(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn trivial_detector_cases() {
        let eps = [1e-4, 3e-4, 2e-4, 6e-4];
        let mean = eps.iter().sum::<f64>() / 4.0;
        assert!(trivial_detector(&[mean; 4], &eps).flag);
        let healthy = trivial_detector(&[1.2e-4, 2.8e-4, 2.1e-4, 5.5e-4], &eps);
        assert!(!healthy.flag);
        assert!(healthy.spread > TRIVIAL_SPREAD_TOL);
        // Constant but far from the input mean is not the collapse mode.
        assert!(!trivial_detector(&[2.0 * mean; 4], &eps).flag);
    }

    #[test]
    fn max_strain_cases() {
        let t = [1.0, 3.0, 2.0];
        let r = max_strain_report(&t, &t).unwrap();
        assert_eq!((r.rel_error, r.argmax_match), (0.0, true));
        let p: Vec<f64> = t.iter().map(|v| 1.2 * v).collect();
        let r = max_strain_report(&p, &t).unwrap();
        assert!((r.rel_error - 0.2).abs() < 1e-15);
        let r = max_strain_report(&[5.0, 3.0, 2.0], &t).unwrap();
        assert_eq!((r.argmax_pred, r.argmax_true, r.argmax_match), (0, 1, false));
    }
}
