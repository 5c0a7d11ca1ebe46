//! Acceptance criteria AC-1 to AC-10, one PASS/FAIL line each.
//!
//! Runs as a plain binary (`harness = false`). Pass criterion ids such as
//! `AC-3` to run a subset. The study criteria train a few hundred networks
//! and take a while on one core.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ifenn_core::geometry::build_rect_mesh;
use ifenn_core::harness::config::{GridPoint, RunConfig, StudyKind, SweepSpec};
use ifenn_core::harness::defaults;
use ifenn_core::harness::report::{AggregateRow, SUMMARY_FILE};
use ifenn_core::harness::run::{evaluate, generate_snapshot, reference_damage, run_ifenn, train, MANIFEST_FILE};
use ifenn_core::harness::sweep::{run_sweep, RUNS_DIR};
use ifenn_core::ifenn::{ifenn_assemble, IfennOptions, NetworkModel};
use ifenn_core::elasticity::Material;
use ifenn_core::metrics::{delta_theta, l2rse, slope_fit};
use ifenn_core::net::{xavier_init, NetDerivs, Network, NetworkShape, ParameterVector, Scaling};
use ifenn_core::nonlocal_ref::{solve_helmholtz, Snapshot};
use ifenn_core::pinn::{loss, loss_gradient, BoundarySample, CollocationSet, InteriorPoint};
use ifenn_core::specimen::SpecimenConfig;

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// `|a − b| / max(|b|, floor)`.
fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}

fn random_scaling(rng: &mut ChaCha8Rng) -> Scaling {
    let mut sc = Scaling::identity();
    for i in 0..4 {
        sc.shift[i] = rng.gen_range(-0.5..0.5);
        sc.scale[i] = rng.gen_range(0.5..2.0);
    }
    sc.out_shift = rng.gen_range(-0.5..0.5);
    sc.out_scale = rng.gen_range(0.5..2.0);
    sc
}

fn ac1() -> Check {
    // Relative errors use max(|fd|, 1e-3) so derivatives that vanish do not
    // turn round-off into a failure.
    const FLOOR: f64 = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_d, mut worst_g) = (0.0f64, 0.0f64);
    for k in 0..25u64 {
        let shape = NetworkShape::new(rng.gen_range(1..=4), rng.gen_range(1..=8)).unwrap();
        let sc = random_scaling(&mut rng);
        let mut theta = xavier_init(&shape, k).0;
        for t in theta.iter_mut() {
            *t += rng.gen_range(-0.3..0.3);
        }
        let net = Network::new(shape, ParameterVector(theta.clone()), sc).unwrap();
        for _ in 0..100 {
            let z = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.01..0.1), rng.gen_range(-1.0..1.0)];
            let d = net.forward_with_derivs(&z).unwrap();
            // Central differences with step 1e-4 on the scaled inputs,
            // Richardson-extrapolated with h/2 so the O(h²) truncation error
            // of the oracle stays below the tolerance it checks.
            let fd = |i: usize, h: f64, f: &dyn Fn(&NetDerivs) -> f64| {
                let mut p = z;
                p[i] = z[i] + h;
                let a = f(&net.forward_with_derivs(&p).unwrap());
                p[i] = z[i] - h;
                let b = f(&net.forward_with_derivs(&p).unwrap());
                (a - b) / (2.0 * h)
            };
            let rich = |i: usize, f: &dyn Fn(&NetDerivs) -> f64| {
                let h = 1e-4 * sc.scale[i];
                (4.0 * fd(i, h / 2.0, f) - fd(i, h, f)) / 3.0
            };
            let pairs = [
                (d.dx, rich(0, &|n| n.value)),
                (d.dy, rich(1, &|n| n.value)),
                (d.dxx, rich(0, &|n| n.dx)),
                (d.dyy, rich(1, &|n| n.dy)),
                (d.de, rich(3, &|n| n.value)),
            ];
            for (a, b) in pairs {
                worst_d = worst_d.max(rel(a, b, FLOOR));
            }
        }
        // Loss gradient on a random collocation set.
        let interior: Vec<InteriorPoint> = (0..12)
            .map(|id| InteriorPoint { id, x: rng.gen_range(-1.0..1.0), y: rng.gen_range(-1.0..1.0), g: 0.05, eps_eq: rng.gen_range(0.0..1.0) })
            .collect();
        let boundary: Vec<BoundarySample> = (0..6)
            .map(|i| {
                let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                BoundarySample { id: 100 + i, x: a.cos(), y: a.sin(), g: 0.05, eps_eq: rng.gen_range(0.0..1.0), normal: [a.cos(), a.sin()] }
            })
            .collect();
        let set = CollocationSet::new(interior, boundary).unwrap();
        let grad = loss_gradient(&net, &set).unwrap();
        for p in 0..theta.len() {
            let h = 1e-5 * theta[p].abs().max(1.0);
            let j = |v: f64| {
                let mut t = theta.clone();
                t[p] = v;
                loss(&Network::new(shape, ParameterVector(t), sc).unwrap(), &set).unwrap().j
            };
            let fd = (j(theta[p] + h) - j(theta[p] - h)) / (2.0 * h);
            worst_g = worst_g.max(rel(grad[p], fd, FLOOR));
        }
    }
    ensure(worst_d < 1e-6 && worst_g < 1e-5, format!("worst input-derivative rel. error {worst_d:.2e} (< 1e-6), worst loss-gradient rel. error {worst_g:.2e} (< 1e-5)"))
}

fn cosine_error(n: usize, g: f64) -> f64 {
    let k = std::f64::consts::PI;
    let mesh = build_rect_mesh(1.0, 1.0, n, n, None).unwrap();
    let gps = mesh.gauss_points().unwrap();
    let eps: Vec<f64> = gps.iter().map(|gp| (k * gp.x).cos()).collect();
    let sol = solve_helmholtz(&mesh, g, &eps).unwrap();
    gps.iter().zip(&sol.gauss).map(|(gp, v)| (v - (k * gp.x).cos() / (1.0 + g * k * k)).powi(2) * gp.dv()).sum::<f64>().sqrt()
}

fn ac2() -> Check {
    let errs: Vec<f64> = [8, 16, 32].iter().map(|&n| cosine_error(n, 0.05)).collect();
    let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let mesh = build_rect_mesh(1.0, 1.0, 8, 8, None).unwrap();
    let gps = mesh.gauss_points().unwrap();
    let sol = solve_helmholtz(&mesh, 0.05, &vec![3.7e-4; gps.len()]).unwrap();
    let uniform = sol.gauss.iter().chain(&sol.nodal).map(|v| (v - 3.7e-4).abs()).fold(0.0, f64::max);
    ensure(
        orders.iter().all(|&o| o >= 1.9) && uniform < 1e-10,
        format!("observed orders {orders:.3?} (>= 1.9), uniform-field error {uniform:.1e} (< 1e-10)"),
    )
}

fn sweep(kind: StudyKind, shapes: Vec<[usize; 2]>, meshes: Vec<usize>, grid: Vec<GridPoint>, seeds: usize) -> (tempfile::TempDir, Vec<AggregateRow>, usize) {
    let dir = tempfile::tempdir().unwrap();
    let spec = SweepSpec {
        kind,
        shapes,
        meshes,
        test_meshes: vec![],
        grid,
        seeds_per_cell: seeds,
        seed_base: 0,
        parallelism: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        lbfgs_max_iter: defaults::LBFGS_MAX_ITER,
        specimen: SpecimenConfig::default(),
        schedule: defaults::LOAD_SCHEDULE.to_vec(),
        lf: defaults::SNAPSHOT_LF,
        snapshot_dir: None,
    };
    let out = run_sweep(&spec, dir.path()).unwrap();
    (dir, out.summary, out.failures.len())
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ")
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn ac3() -> Check {
    let lrs = [1e-3, 1e-4];
    let grid = lrs.iter().map(|&lr| GridPoint { ep: defaults::EPOCHS, lr }).collect();
    let (_d, rows, failures) = sweep(StudyKind::Convergence, vec![[4, 4], [8, 8], [12, 12]], vec![10], grid, 5);
    let mut ok = failures == 0;
    let mut detail = vec![format!("{failures} failed runs")];
    for lr in lrs {
        let cell: Vec<&AggregateRow> = rows.iter().filter(|r| r.lr == lr).collect();
        let j: Vec<f64> = cell.iter().map(|r| r.j_lbfgs_norm_mean.unwrap_or(f64::NAN)).collect();
        let e: Vec<f64> = cell.iter().map(|r| r.l2rse_lbfgs_norm_mean.unwrap_or(f64::NAN)).collect();
        ok &= strictly_decreasing(&j) && strictly_decreasing(&e);
        detail.push(format!("lr {lr:e}: J {} ; L2RSE {}", fmt(&j), fmt(&e)));
    }
    ensure(ok, detail.join(" | "))
}

fn ac4() -> Check {
    let (_d, rows, failures) = sweep(StudyKind::Convergence, vec![[8, 8]], vec![10, 20, 30], vec![GridPoint { ep: defaults::EPOCHS, lr: defaults::LEARNING_RATE }], 5);
    let j: Vec<f64> = rows.iter().map(|r| r.j_lbfgs_norm_mean.unwrap_or(f64::NAN)).collect();
    let e: Vec<f64> = rows.iter().map(|r| r.l2rse_lbfgs_norm_mean.unwrap_or(f64::NAN)).collect();
    let gp: Vec<usize> = rows.iter().map(|r| r.gauss_points).collect();
    ensure(
        failures == 0 && rows.len() == 3 && strictly_decreasing(&j) && strictly_decreasing(&e),
        format!("{failures} failed runs | GPs {gp:?}: J {} ; L2RSE {}", fmt(&j), fmt(&e)),
    )
}

fn ac5() -> Check {
    let (_d, rows, failures) = sweep(StudyKind::Hps, vec![[20, 3], [10, 6], [6, 10], [3, 20]], vec![10], vec![GridPoint { ep: defaults::EPOCHS, lr: defaults::LEARNING_RATE }], 5);
    let j = |l: usize| rows.iter().find(|r| r.layers == l).and_then(|r| r.j_adam_norm_mean).unwrap_or(f64::NAN);
    let (deep, wide) = (j(20), j(3));
    let square = [j(10), j(6)];
    // Both shapes nearest AR = 1 have to beat the extremes.
    let ok = failures == 0 && square.iter().all(|&s| s <= deep && s <= wide);
    ensure(ok, format!("{failures} failed runs | mean end-of-Adam J: 20x3 {deep:.3e}, 10x6 {:.3e}, 6x10 {:.3e}, 3x20 {wide:.3e}", square[0], square[1]))
}

/// Declared protocol: 8×8 net, seed 0, default optimizer settings, trained
/// on the 10×10 snapshot.
fn ac6_network() -> (Network, f64, bool) {
    let spec = SpecimenConfig::default();
    let (_, snap) = generate_snapshot(&spec, 10, &defaults::LOAD_SCHEDULE, defaults::SNAPSHOT_LF).unwrap();
    let out = train(&RunConfig::new(8, 8, defaults::EPOCHS, defaults::LEARNING_RATE, 0), &snap, None).unwrap();
    let ev = evaluate(&out.network, &snap).unwrap();
    (out.network, ev.l2rse_norm, ev.trivial.flag)
}

fn ac6(net: &Network, l2rse_norm: f64) -> Check {
    let spec = SpecimenConfig::default();
    let opts = IfennOptions { tol: defaults::IFENN_TOL, ..IfennOptions::default() };
    let lf = defaults::SNAPSHOT_LF;
    let mut detail = vec![format!("normalized L2RSE {l2rse_norm:.3e} (< 0.05)")];
    let mut ok = l2rse_norm < 0.05;
    for (n, compare) in [(10, true), (20, false)] {
        let refd = compare.then(|| reference_damage(&spec, n, &defaults::LOAD_SCHEDULE, lf).unwrap());
        let (s, _, _) = run_ifenn(net, &spec, n, lf, &opts, refd.as_deref()).unwrap();
        ok &= s.converged;
        if compare {
            let dmg = s.damage_rel_l2.unwrap_or(f64::NAN);
            ok &= s.iterations <= 25 && dmg < 0.05;
            detail.push(format!("{n}x{n}: converged {} in {} iterations (<= 25), damage rel. L2 {dmg:.4} (< 0.05)", s.converged, s.iterations));
        } else {
            detail.push(format!("{n}x{n}: converged {} in {} iterations", s.converged, s.iterations));
        }
    }
    ensure(ok, detail.join(" | "))
}

fn ac7() -> Check {
    let mesh = build_rect_mesh(1.0, 1.0, 2, 2, None).unwrap();
    let mat = Material::default();
    let gps = mesh.gauss_points().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let shape = NetworkShape::new(2, 6).unwrap();
        let mut sc = Scaling::identity();
        // ε_eq of order 1e-4 maps to O(1) inputs and the output sits above κ0.
        sc.scale[3] = 1e-4;
        sc.out_shift = 5e-4;
        sc.out_scale = 1e-4;
        let net = Network::new(shape, xavier_init(&shape, seed), sc).unwrap();
        let mut model = NetworkModel::new(&net, mat.g);
        let u: Vec<f64> = (0..mesh.dof_count()).map(|_| rng.gen_range(-1e-4..1e-4)).collect();
        let base = ifenn_assemble(&mesh, &gps, &mat, &mut model, &u, &vec![0.0; gps.len()]).unwrap();
        let unloading: Vec<f64> = base.eps_bar.iter().enumerate().map(|(i, &e)| if i % 2 == 0 { 0.0 } else { e + 2e-5 }).collect();
        for kappa in [vec![0.0; gps.len()], unloading] {
            let asm = ifenn_assemble(&mesh, &gps, &mat, &mut model, &u, &kappa).unwrap();
            let h = 1e-10;
            for q in 0..u.len() {
                let mut up = u.clone();
                let mut um = u.clone();
                up[q] += h;
                um[q] -= h;
                let rp = ifenn_assemble(&mesh, &gps, &mat, &mut model, &up, &kappa).unwrap().residual;
                let rm = ifenn_assemble(&mesh, &gps, &mat, &mut model, &um, &kappa).unwrap().residual;
                let col: Vec<f64> = (0..u.len()).map(|p| asm.jacobian.get(p, q)).collect();
                let diff = rp.iter().zip(&rm).zip(&col).map(|((a, b), c)| ((a - b) / (2.0 * h) - c).powi(2)).sum::<f64>().sqrt();
                worst = worst.max(diff / col.iter().map(|c| c * c).sum::<f64>().sqrt());
            }
        }
    }
    ensure(worst < 1e-5, format!("{} elements, worst columnwise rel. error {worst:.2e} (< 1e-5)", mesh.element_count()))
}

/// `ac6` is the AC-6 network's trivial flag and whether that net passed AC-6.
fn ac8(ac6: Option<(bool, bool)>) -> Check {
    let spec = SpecimenConfig::default();
    let (_, snap) = generate_snapshot(&spec, 10, &defaults::LOAD_SCHEDULE, defaults::SNAPSHOT_LF).unwrap();
    let (set, _) = CollocationSet::from_snapshot(&snap).unwrap();
    let sc = set.scaling().unwrap();
    let shape = NetworkShape::new(3, 5).unwrap();
    let mean = set.interior().iter().map(|p| p.eps_eq).sum::<f64>() / set.interior().len() as f64;
    let mut theta = vec![0.0; shape.param_count()];
    *theta.last_mut().unwrap() = (mean - sc.out_shift) / sc.out_scale;
    let collapsed = Network::new(shape, ParameterVector(theta), sc).unwrap();
    let flagged = evaluate(&collapsed, &snap).unwrap().trivial.flag;

    let (_d, rows, failures) = sweep(StudyKind::Convergence, vec![[30, 2]], vec![10], vec![GridPoint { ep: defaults::EPOCHS, lr: defaults::LEARNING_RATE }], 10);
    let row = &rows[0];
    // Only a net that passes AC-6 is bound by the no-flag clause.
    let ok = flagged && !matches!(ac6, Some((true, true))) && row.runs == 10;
    ensure(
        ok,
        format!(
            "collapsed net flagged {flagged} | AC-6 net flagged {} | 30x2 cell: {} runs, {} completed, {failures} failed, trivial-flag rate {:.2}",
            ac6.map(|(f, passed)| format!("{f}{}", if passed { "" } else { " (net did not pass AC-6)" })).unwrap_or("n/a".into()),
            row.runs,
            row.completed,
            row.trivial_rate
        ),
    )
}

fn ac9() -> Check {
    let t = [1.0, 2.0, 3.0, 4.0];
    let p2: Vec<f64> = t.iter().map(|v| 2.0 * v).collect();
    let v = l2rse(&[1.1, 0.9], &[1.0, 1.0]).unwrap().value;
    let mut s = vec![123.0];
    s.extend((1..=50).map(|k| 2.0 - 0.001 * k as f64));
    let checks = [
        l2rse(&t, &t).unwrap().value == 0.0,
        l2rse(&p2, &t).unwrap().value == 2.0,
        (v - 0.02f64.sqrt()).abs() < 1e-12,
        delta_theta(&[3.0, 4.0], &[3.0, 4.0]).unwrap() == 0.0,
        delta_theta(&[3.0, 4.0], &[6.0, 8.0]).unwrap() == 1.0,
        (slope_fit(&s).unwrap() + 0.001).abs() < 1e-12,
        slope_fit(&[9.0, 1.0, 1.0, 1.0]).unwrap() == 0.0,
    ];
    let passed = checks.iter().filter(|&&c| c).count();
    ensure(passed == checks.len(), format!("{passed}/{} oracle values reproduced", checks.len()))
}

fn ac10() -> Check {
    let spec = SpecimenConfig::default();
    let (_, snap) = generate_snapshot(&spec, 10, &[0.5], 0.5).unwrap();
    let cfg = RunConfig::new(3, 4, 200, 1e-3, 11);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    train(&cfg, &snap, Some(a.path())).unwrap();
    train(&cfg, &snap, Some(b.path())).unwrap();
    let read = |d: &std::path::Path, f: &str| std::fs::read(d.join(f)).unwrap();
    let same_run = ["manifest.json", "checkpoint.json", "metrics.csv"].iter().all(|f| read(a.path(), f) == read(b.path(), f));

    let sweep_at = |parallelism: usize| {
        let dir = tempfile::tempdir().unwrap();
        let s = SweepSpec {
            kind: StudyKind::Hps,
            shapes: vec![[1, 6], [2, 3], [3, 2]],
            meshes: vec![10],
            test_meshes: vec![],
            grid: vec![GridPoint { ep: 100, lr: 1e-3 }],
            seeds_per_cell: 3,
            seed_base: 5,
            parallelism,
            lbfgs_max_iter: 20,
            specimen: spec.clone(),
            schedule: vec![0.5],
            lf: 0.5,
            snapshot_dir: None,
        };
        run_sweep(&s, dir.path()).unwrap();
        dir
    };
    let (s1, s4) = (sweep_at(1), sweep_at(4));
    let mut same_sweep = read(s1.path(), SUMMARY_FILE) == read(s4.path(), SUMMARY_FILE);
    let mut ids: Vec<_> = std::fs::read_dir(s1.path().join(RUNS_DIR)).unwrap().map(|e| e.unwrap().file_name()).collect();
    ids.sort();
    for id in &ids {
        let m = |root: &std::path::Path| read(&root.join(RUNS_DIR).join(id), MANIFEST_FILE);
        same_sweep &= m(s1.path()) == m(s4.path());
    }
    let snap_hash = |root: &std::path::Path| Snapshot::read(&root.join("snapshots/snapshot_10x10.csv")).unwrap().content_hash().unwrap();
    same_sweep &= snap_hash(s1.path()) == snap_hash(s4.path());
    ensure(same_run && same_sweep, format!("repeated run bit-identical {same_run} | {} sweep manifests and summary identical at parallelism 1 and 4: {same_sweep}", ids.len()))
}

fn run(id: &str, f: impl FnOnce() -> Check, results: &mut Vec<(String, bool)>) {
    let t0 = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let (pass, detail) = match outcome {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    println!("{id} {}: {detail} [{:.0}s]", if pass { "PASS" } else { "FAIL" }, t0.elapsed().as_secs_f64());
    results.push((id.to_string(), pass));
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |id: &str| filters.is_empty() || filters.iter().any(|f| f == id);
    let mut results = Vec::new();
    if wanted("AC-1") {
        run("AC-1", ac1, &mut results);
    }
    if wanted("AC-2") {
        run("AC-2", ac2, &mut results);
    }
    if wanted("AC-3") {
        run("AC-3", ac3, &mut results);
    }
    if wanted("AC-4") {
        run("AC-4", ac4, &mut results);
    }
    if wanted("AC-5") {
        run("AC-5", ac5, &mut results);
    }
    let mut ac6_flag = None;
    if wanted("AC-6") || wanted("AC-8") {
        let t0 = Instant::now();
        let (net, e, flagged) = ac6_network();
        eprintln!("AC-6 network trained in {:.0}s", t0.elapsed().as_secs_f64());
        if wanted("AC-6") {
            let mut passed = false;
            run("AC-6", || ac6(&net, e).inspect(|_| passed = true), &mut results);
            ac6_flag = Some((flagged, passed));
        }
    }
    if wanted("AC-7") {
        run("AC-7", ac7, &mut results);
    }
    if wanted("AC-8") {
        run("AC-8", || ac8(ac6_flag), &mut results);
    }
    if wanted("AC-9") {
        run("AC-9", ac9, &mut results);
    }
    if wanted("AC-10") {
        run("AC-10", ac10, &mut results);
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.1).map(|r| r.0.as_str()).collect();
    println!("acceptance: {} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
