use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ifenn_core::harness::config::{RunConfig, StudyKind, SweepSpec};
use ifenn_core::harness::defaults;
use ifenn_core::harness::manifest::write_json;
use ifenn_core::harness::report::{write_report, SUMMARY_FILE};
use ifenn_core::harness::run::{evaluate, generate_snapshot, reference_damage, run_ifenn, train, CHECKPOINT_FILE, FIELD_FILE, IFENN_MANIFEST_FILE};
use ifenn_core::harness::sweep::run_sweep;
use ifenn_core::ifenn::IfennOptions;
use ifenn_core::net::Network;
use ifenn_core::nonlocal_ref::Snapshot;
use ifenn_core::specimen::SpecimenConfig;
use ifenn_core::{Error, Result};

/// PINN surrogate training and I-FENN workbench.
#[derive(Parser, Debug)]
#[command(name = "ifenn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Mesh utilities.
    Mesh {
        #[command(subcommand)]
        command: MeshCommand,
    },
    /// Reference data.
    Data {
        #[command(subcommand)]
        command: DataCommand,
    },
    /// Train one network on a snapshot.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a snapshot.
    Eval(EvalArgs),
    /// Run I-FENN with a trained network.
    Ifenn(IfennArgs),
    /// Run a sweep described by a JSON file.
    Sweep(SweepArgs),
    /// Aggregate the runs of a sweep.
    Report(ReportArgs),
}

#[derive(Subcommand, Debug)]
enum MeshCommand {
    /// Write the specimen mesh as JSON.
    Gen {
        #[arg(long)]
        n: usize,
        #[command(flatten)]
        specimen: SpecimenArg,
        #[arg(short = 'o', long)]
        output: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum DataCommand {
    /// Solve the reference problem and write a training snapshot.
    Gen {
        /// Elements per side.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = defaults::SNAPSHOT_LF)]
        lf: f64,
        /// Comma separated loadfactors; the default schedule when omitted.
        #[arg(long, value_delimiter = ',')]
        schedule: Option<Vec<f64>>,
        #[command(flatten)]
        specimen: SpecimenArg,
        #[arg(short = 'o', long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct SpecimenArg {
    /// Specimen JSON; the built-in specimen when omitted.
    #[arg(long)]
    specimen: Option<PathBuf>,
}

impl SpecimenArg {
    fn load(&self) -> Result<SpecimenConfig> {
        match &self.specimen {
            None => Ok(SpecimenConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::InvalidArgument(format!("{}: {e}", p.display())))?;
                Ok(serde_json::from_str(&text)?)
            }
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    layers: usize,
    #[arg(long)]
    width: usize,
    #[arg(long, default_value_t = defaults::EPOCHS)]
    epochs: usize,
    #[arg(long, default_value_t = defaults::LEARNING_RATE)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = defaults::LBFGS_MAX_ITER)]
    lbfgs_iter: usize,
    #[arg(long)]
    data: PathBuf,
    #[arg(short = 'o', long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(short = 'o', long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct IfennArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Elements per side of the mesh to solve on.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = defaults::SNAPSHOT_LF)]
    lf: f64,
    #[arg(long, default_value_t = defaults::IFENN_TOL)]
    tol: f64,
    #[arg(long, default_value_t = defaults::IFENN_MAX_ITER)]
    max_iter: usize,
    /// Also solve the staggered reference and compare damage.
    #[arg(long)]
    reference: bool,
    #[command(flatten)]
    specimen: SpecimenArg,
    #[arg(short = 'o', long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(short = 'o', long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    runs: PathBuf,
    #[arg(short = 'o', long)]
    output: Option<PathBuf>,
    /// Which plot-data family to emit.
    #[arg(long, value_enum)]
    kind: Option<Kind>,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum Kind {
    Convergence,
    Hps,
    CrossMesh,
}

impl From<Kind> for StudyKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Convergence => StudyKind::Convergence,
            Kind::Hps => StudyKind::Hps,
            Kind::CrossMesh => StudyKind::CrossMesh,
        }
    }
}

fn out_path(given: &Option<PathBuf>, default: &str) -> PathBuf {
    given.clone().unwrap_or_else(|| defaults::output_root().join(default))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::InvalidArgument(format!("{}: {e}", dir.display())))?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Mesh { command: MeshCommand::Gen { n, specimen, output } } => {
            let mesh = specimen.load()?.mesh(n, n)?;
            let path = out_path(&output, &format!("mesh_{n}x{n}.json"));
            ensure_parent(&path)?;
            mesh.save_json(&path)?;
            println!("{}: {} elements, {} nodes", path.display(), mesh.element_count(), mesh.node_count());
        }
        Command::Data { command: DataCommand::Gen { n, lf, schedule, specimen, output } } => {
            let schedule = schedule.unwrap_or_else(|| defaults::LOAD_SCHEDULE.to_vec());
            let (_, snap) = generate_snapshot(&specimen.load()?, n, &schedule, lf)?;
            let path = out_path(&output, &format!("snapshot_{n}x{n}.csv"));
            ensure_parent(&path)?;
            snap.write(&path)?;
            println!("{}: {} rows, hash {}", path.display(), snap.rows.len(), snap.content_hash()?);
        }
        Command::Train(a) => {
            let mut cfg = RunConfig::new(a.layers, a.width, a.epochs, a.lr, a.seed);
            cfg.lbfgs.max_iter = a.lbfgs_iter;
            let snap = Snapshot::read(&a.data)?;
            let dir = out_path(&a.output, &format!("train/L{}_N{}_s{}", a.layers, a.width, a.seed));
            let out = train(&cfg, &snap, Some(&dir))?;
            let m = &out.manifest.metrics;
            println!(
                "{} seed {}: J_adam {:e}, J_lbfgs {:e}, L2RSE_norm {:e}{}",
                cfg.label(),
                cfg.seed,
                m.j_adam_end.unwrap_or(f64::NAN),
                m.j_lbfgs_end.unwrap_or(f64::NAN),
                m.l2rse_lbfgs_norm().unwrap_or(f64::NAN),
                if m.trivial_flag() { " (flagged trivial)" } else { "" }
            );
        }
        Command::Eval(a) => {
            let net = load_checkpoint(&a.checkpoint)?;
            let report = evaluate(&net, &Snapshot::read(&a.data)?)?;
            let path = out_path(&a.output, "eval.json");
            ensure_parent(&path)?;
            write_json(&path, &report)?;
            println!("{}: L2RSE {:e}, normalized {:e}, trivial {}", report.mesh_id, report.l2rse.value, report.l2rse_norm, report.trivial.flag);
        }
        Command::Ifenn(a) => {
            let net = load_checkpoint(&a.checkpoint)?;
            let specimen = a.specimen.load()?;
            let opts = IfennOptions { tol: a.tol, max_iter: a.max_iter, ..IfennOptions::default() };
            let refd = if a.reference { Some(reference_damage(&specimen, a.n, &defaults::LOAD_SCHEDULE, a.lf)?) } else { None };
            let (summary, result, mesh) = run_ifenn(&net, &specimen, a.n, a.lf, &opts, refd.as_deref())?;
            let dir = out_path(&a.output, &format!("ifenn/{}", mesh.id));
            std::fs::create_dir_all(&dir).map_err(|e| Error::InvalidArgument(format!("{}: {e}", dir.display())))?;
            write_json(&dir.join(IFENN_MANIFEST_FILE), &summary)?;
            match result {
                Some(r) => {
                    r.write_field_csv(&mesh.gauss_points()?, &dir.join(FIELD_FILE))?;
                    let cmp = summary.damage_rel_l2.map(|v| format!(", damage rel. L2 {v:e}")).unwrap_or_default();
                    println!("{}: converged in {} iterations{cmp}", mesh.id, summary.iterations);
                }
                None => {
                    return Err(Error::InvalidArgument(format!("I-FENN did not converge on {}: {}", mesh.id, summary.message.unwrap_or_default())));
                }
            }
        }
        Command::Sweep(a) => {
            let spec = SweepSpec::load(&a.config)?;
            let root = a.output.unwrap_or_else(defaults::output_root);
            let out = run_sweep(&spec, &root)?;
            println!("{} runs, {} failed, {} cells in {}", out.runs, out.failures.len(), out.summary.len(), root.join(SUMMARY_FILE).display());
            if !out.failures.is_empty() {
                for (id, msg) in &out.failures {
                    eprintln!("{id}: {msg}");
                }
                return Err(Error::InvalidArgument(format!("{} of {} runs failed", out.failures.len(), out.runs)));
            }
        }
        Command::Report(a) => {
            let path = a.output.unwrap_or_else(|| a.runs.parent().unwrap_or(Path::new(".")).join(SUMMARY_FILE));
            let rows = write_report(&a.runs, &path, a.kind.map(Into::into))?;
            println!("{}: {} rows", path.display(), rows.len());
        }
    }
    Ok(())
}

/// Accepts a checkpoint file or a run directory holding one.
fn load_checkpoint(path: &Path) -> Result<Network> {
    if path.is_dir() {
        Network::load(&path.join(CHECKPOINT_FILE))
    } else {
        Network::load(path)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
