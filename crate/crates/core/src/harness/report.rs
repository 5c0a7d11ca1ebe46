//! Aggregation over seeds and plot-data emission.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::StudyKind;
use super::manifest::{MetricsRow, RunManifest, Timing};
use super::run::{MANIFEST_FILE, METRICS_FILE, TIMING_FILE};
use crate::error::{Error, Result};

/// Mean, minimum and maximum over the values that are present.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Stat {
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let v: Vec<f64> = values.into_iter().flatten().collect();
        if v.is_empty() {
            return Self::default();
        }
        Self {
            mean: Some(v.iter().sum::<f64>() / v.len() as f64),
            min: Some(v.iter().cloned().fold(f64::INFINITY, f64::min)),
            max: Some(v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)),
        }
    }
}

/// One configuration `(shape, mesh, ep, lr)` summarized over its seeds.
/// Normalized values are per Gauss point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub label: String,
    #[serde(rename = "L")]
    pub layers: usize,
    #[serde(rename = "N")]
    pub width: usize,
    pub neurons: usize,
    pub aspect_ratio: f64,
    pub mesh_id: String,
    pub gauss_points: usize,
    pub ep: usize,
    pub lr: f64,
    pub runs: usize,
    pub completed: usize,
    pub trivial_rate: f64,
    pub j_adam_norm_mean: Option<f64>,
    pub j_adam_norm_min: Option<f64>,
    pub j_adam_norm_max: Option<f64>,
    pub j_lbfgs_norm_mean: Option<f64>,
    pub j_lbfgs_norm_min: Option<f64>,
    pub j_lbfgs_norm_max: Option<f64>,
    pub l2rse_adam_norm_mean: Option<f64>,
    pub l2rse_adam_norm_min: Option<f64>,
    pub l2rse_adam_norm_max: Option<f64>,
    pub l2rse_lbfgs_norm_mean: Option<f64>,
    pub l2rse_lbfgs_norm_min: Option<f64>,
    pub l2rse_lbfgs_norm_max: Option<f64>,
    pub iter_lbfgs_mean: Option<f64>,
    pub s_delta_theta_mean: Option<f64>,
    pub eps_bar_max_rel_error_mean: Option<f64>,
    pub iter_ifenn_mean: Option<f64>,
}

type Key = (usize, String, usize, usize, usize, u64);

fn key(r: &MetricsRow) -> Key {
    (r.gauss_points, r.mesh_id.clone(), r.layers, r.width, r.ep, r.lr.to_bits())
}

/// Group rows by configuration; output is ordered by mesh size, then L, N,
/// ep, lr, independent of the input order.
pub fn aggregate(rows: &[MetricsRow]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<Key, Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(key(r)).or_default().push(r);
    }
    groups
        .into_values()
        .map(|mut g| {
            g.sort_by_key(|r| r.seed);
            let done: Vec<&MetricsRow> = g.iter().copied().filter(|r| r.completed).collect();
            let s = |f: fn(&MetricsRow) -> Option<f64>| Stat::of(done.iter().map(|r| f(r)));
            let (ja, jl, ea, el) = (s(|r| r.j_adam_norm), s(|r| r.j_lbfgs_norm), s(|r| r.l2rse_adam_norm), s(|r| r.l2rse_lbfgs_norm));
            let first = g[0];
            let trivial = done.iter().filter(|r| r.trivial == Some(true)).count();
            AggregateRow {
                label: first.label.clone(),
                layers: first.layers,
                width: first.width,
                neurons: first.layers * first.width,
                aspect_ratio: first.width as f64 / first.layers as f64,
                mesh_id: first.mesh_id.clone(),
                gauss_points: first.gauss_points,
                ep: first.ep,
                lr: first.lr,
                runs: g.len(),
                completed: done.len(),
                trivial_rate: if done.is_empty() { 0.0 } else { trivial as f64 / done.len() as f64 },
                j_adam_norm_mean: ja.mean,
                j_adam_norm_min: ja.min,
                j_adam_norm_max: ja.max,
                j_lbfgs_norm_mean: jl.mean,
                j_lbfgs_norm_min: jl.min,
                j_lbfgs_norm_max: jl.max,
                l2rse_adam_norm_mean: ea.mean,
                l2rse_adam_norm_min: ea.min,
                l2rse_adam_norm_max: ea.max,
                l2rse_lbfgs_norm_mean: el.mean,
                l2rse_lbfgs_norm_min: el.min,
                l2rse_lbfgs_norm_max: el.max,
                iter_lbfgs_mean: s(|r| r.iter_lbfgs.map(|v| v as f64)).mean,
                s_delta_theta_mean: s(|r| r.s_delta_theta).mean,
                eps_bar_max_rel_error_mean: s(|r| r.eps_bar_max_rel_error).mean,
                iter_ifenn_mean: s(|r| r.iter_ifenn.map(|v| v as f64)).mean,
            }
        })
        .collect()
}

/// Run directories under `runs`, sorted by name.
pub fn run_dirs(runs: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(runs).map_err(|e| Error::io(runs, e))?;
    let mut dirs = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(runs, e))?.path();
        if p.join(METRICS_FILE).exists() {
            dirs.push(p);
        }
    }
    dirs.sort();
    Ok(dirs)
}

pub fn collect_rows(runs: &Path) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::new();
    for d in run_dirs(runs)? {
        rows.extend(MetricsRow::read_csv(&d.join(METRICS_FILE))?);
    }
    Ok(rows)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_aggregate(path: &Path) -> Result<Vec<AggregateRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// One point of a plot series: end-of-Adam and end-of-L-BFGS means.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotPoint {
    pub series: String,
    pub x: f64,
    pub adam: Option<f64>,
    pub lbfgs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AspectRatioPoint {
    pub series: String,
    #[serde(rename = "L")]
    pub layers: usize,
    #[serde(rename = "N")]
    pub width: usize,
    pub aspect_ratio: f64,
    pub j_adam_norm: Option<f64>,
    pub j_lbfgs_norm: Option<f64>,
    pub l2rse_adam_norm: Option<f64>,
    pub l2rse_lbfgs_norm: Option<f64>,
    pub iter_lbfgs: Option<f64>,
    pub trivial_rate: f64,
    pub eps_bar_max_rel_error: Option<f64>,
    pub adam_rt100: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossMeshPoint {
    pub train_mesh: String,
    pub test_mesh: String,
    #[serde(rename = "L")]
    pub layers: usize,
    #[serde(rename = "N")]
    pub width: usize,
    pub ep: usize,
    pub lr: f64,
    pub runs: usize,
    pub converged: usize,
    pub l2rse_norm_mean: Option<f64>,
    pub iter_ifenn_mean: Option<f64>,
    pub damage_rel_l2_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub label: String,
    pub mesh_id: String,
    pub runs: usize,
    pub adam_rt100_mean: Option<f64>,
    pub adam_seconds_mean: Option<f64>,
    pub lbfgs_seconds_mean: Option<f64>,
}

fn series(parts: &[(&str, String)]) -> String {
    parts.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
}

/// The four convergence families: J and L2RSE against network size (square
/// nets, one series per mesh and optimizer setting) and against the number
/// of Gauss points (one series per shape and optimizer setting).
pub fn convergence_plots(agg: &[AggregateRow]) -> [(&'static str, Vec<PlotPoint>); 4] {
    let mut out: [(&'static str, Vec<PlotPoint>); 4] = [("plot_j_vs_size.csv", vec![]), ("plot_l2rse_vs_size.csv", vec![]), ("plot_j_vs_samples.csv", vec![]), ("plot_l2rse_vs_samples.csv", vec![])];
    for a in agg {
        let ep_lr = [("ep", a.ep.to_string()), ("lr", format!("{:e}", a.lr))];
        let by_size = series(&[[("mesh", a.mesh_id.clone())].as_slice(), &ep_lr].concat());
        let by_mesh = series(&[[("L", a.layers.to_string()), ("N", a.width.to_string())].as_slice(), &ep_lr].concat());
        out[0].1.push(PlotPoint { series: by_size.clone(), x: a.layers as f64, adam: a.j_adam_norm_mean, lbfgs: a.j_lbfgs_norm_mean });
        out[1].1.push(PlotPoint { series: by_size, x: a.layers as f64, adam: a.l2rse_adam_norm_mean, lbfgs: a.l2rse_lbfgs_norm_mean });
        out[2].1.push(PlotPoint { series: by_mesh.clone(), x: a.gauss_points as f64, adam: a.j_adam_norm_mean, lbfgs: a.j_lbfgs_norm_mean });
        out[3].1.push(PlotPoint { series: by_mesh, x: a.gauss_points as f64, adam: a.l2rse_adam_norm_mean, lbfgs: a.l2rse_lbfgs_norm_mean });
    }
    for (_, pts) in out.iter_mut() {
        pts.sort_by(|a, b| a.series.cmp(&b.series).then(a.x.total_cmp(&b.x)));
    }
    out
}

pub fn aspect_ratio_plot(agg: &[AggregateRow], timing: &[TimingRow]) -> Vec<AspectRatioPoint> {
    let mut pts: Vec<AspectRatioPoint> = agg
        .iter()
        .map(|a| AspectRatioPoint {
            series: series(&[("n", a.neurons.to_string()), ("mesh", a.mesh_id.clone()), ("ep", a.ep.to_string()), ("lr", format!("{:e}", a.lr))]),
            layers: a.layers,
            width: a.width,
            aspect_ratio: a.aspect_ratio,
            j_adam_norm: a.j_adam_norm_mean,
            j_lbfgs_norm: a.j_lbfgs_norm_mean,
            l2rse_adam_norm: a.l2rse_adam_norm_mean,
            l2rse_lbfgs_norm: a.l2rse_lbfgs_norm_mean,
            iter_lbfgs: a.iter_lbfgs_mean,
            trivial_rate: a.trivial_rate,
            eps_bar_max_rel_error: a.eps_bar_max_rel_error_mean,
            adam_rt100: timing.iter().find(|t| t.label == a.label && t.mesh_id == a.mesh_id).and_then(|t| t.adam_rt100_mean),
        })
        .collect();
    pts.sort_by(|a, b| a.series.cmp(&b.series).then(a.aspect_ratio.total_cmp(&b.aspect_ratio)));
    pts
}

pub fn cross_mesh_plot(manifests: &[RunManifest]) -> Vec<CrossMeshPoint> {
    let mut groups: BTreeMap<(String, String, usize, usize, usize, u64), Vec<&super::manifest::CrossMeshEntry>> = BTreeMap::new();
    for m in manifests {
        for e in &m.cross_mesh {
            groups
                .entry((m.snapshot.mesh_id.clone(), e.mesh_id.clone(), m.config.layers, m.config.width, m.config.ep, m.config.lr.to_bits()))
                .or_default()
                .push(e);
        }
    }
    groups
        .into_iter()
        .map(|((train, test, l, n, ep, lr), es)| CrossMeshPoint {
            train_mesh: train,
            test_mesh: test,
            layers: l,
            width: n,
            ep,
            lr: f64::from_bits(lr),
            runs: es.len(),
            converged: es.iter().filter(|e| e.ifenn.converged).count(),
            l2rse_norm_mean: Stat::of(es.iter().map(|e| Some(e.l2rse_norm))).mean,
            iter_ifenn_mean: Stat::of(es.iter().filter(|e| e.ifenn.converged).map(|e| Some(e.ifenn.iterations as f64))).mean,
            damage_rel_l2_mean: Stat::of(es.iter().map(|e| e.ifenn.damage_rel_l2)).mean,
        })
        .collect()
}

pub fn timing_rows(runs: &Path) -> Result<Vec<TimingRow>> {
    let mut groups: BTreeMap<(String, String), Vec<Timing>> = BTreeMap::new();
    for d in run_dirs(runs)? {
        let tp = d.join(TIMING_FILE);
        if !tp.exists() {
            continue;
        }
        let text = std::fs::read_to_string(&tp).map_err(|e| Error::io(&tp, e))?;
        let t: Timing = serde_json::from_str(&text)?;
        for r in MetricsRow::read_csv(&d.join(METRICS_FILE))? {
            groups.entry((r.label.clone(), r.mesh_id.clone())).or_default().push(t);
        }
    }
    Ok(groups
        .into_iter()
        .map(|((label, mesh_id), ts)| TimingRow {
            label,
            mesh_id,
            runs: ts.len(),
            adam_rt100_mean: Stat::of(ts.iter().map(|t| Some(t.adam_rt100))).mean,
            adam_seconds_mean: Stat::of(ts.iter().map(|t| Some(t.adam_seconds))).mean,
            lbfgs_seconds_mean: Stat::of(ts.iter().map(|t| Some(t.lbfgs_seconds))).mean,
        })
        .collect())
}

pub fn read_manifests(runs: &Path) -> Result<Vec<RunManifest>> {
    run_dirs(runs)?.iter().map(|d| RunManifest::read(&d.join(MANIFEST_FILE))).collect()
}

pub const SUMMARY_FILE: &str = "summary.csv";
pub const TIMING_SUMMARY_FILE: &str = "timing_summary.csv";

/// Aggregate every run under `runs` into `summary`; plot data and timing go
/// next to it. Returns the aggregate rows.
pub fn write_report(runs: &Path, summary: &Path, kind: Option<StudyKind>) -> Result<Vec<AggregateRow>> {
    let rows = collect_rows(runs)?;
    if rows.is_empty() {
        return Err(Error::InvalidArgument(format!("no runs found under {}", runs.display())));
    }
    let agg = aggregate(&rows);
    write_csv(summary, &agg)?;
    let dir = summary.parent().map(Path::to_path_buf).unwrap_or_default();
    let timing = timing_rows(runs)?;
    write_csv(&dir.join(TIMING_SUMMARY_FILE), &timing)?;
    match kind {
        Some(StudyKind::Convergence) | None => {
            for (name, pts) in convergence_plots(&agg) {
                write_csv(&dir.join(name), &pts)?;
            }
        }
        Some(StudyKind::Hps) => write_csv(&dir.join("plot_aspect_ratio.csv"), &aspect_ratio_plot(&agg, &timing))?,
        Some(StudyKind::CrossMesh) => write_csv(&dir.join("plot_cross_mesh.csv"), &cross_mesh_plot(&read_manifests(runs)?))?,
    }
    Ok(agg)
}
