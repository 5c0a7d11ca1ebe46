//! Every harness default in one place.

/// Loadfactors simulated by the reference solver when generating data.
pub const LOAD_SCHEDULE: [f64; 5] = [0.5, 0.6, 0.7, 0.76, 0.82];
/// Loadfactor at which training snapshots are taken.
pub const SNAPSHOT_LF: f64 = 0.82;

/// Adam epochs and learning rate when a run does not say otherwise.
pub const EPOCHS: usize = 2000;
pub const LEARNING_RATE: f64 = 1e-3;

/// L-BFGS iteration cap. The loss admits ε̄ = ε_eq as an exact zero-loss
/// solution and long L-BFGS runs drift toward it, so the second stage is
/// kept short.
pub const LBFGS_MAX_ITER: usize = 500;

/// Independent initializations per sweep cell.
pub const SEEDS_PER_CELL: usize = 10;

/// Newton tolerance on ‖δu_k‖ / ‖δu_1‖ and iteration cap.
pub const IFENN_TOL: f64 = 1e-6;
pub const IFENN_MAX_ITER: usize = 50;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "IFENN_OUTPUT_ROOT";
/// Used when neither `-o` nor the environment variable is given.
pub const OUTPUT_ROOT_FALLBACK: &str = "ifenn-out";

/// Version tag of manifest JSON files.
pub const MANIFEST_SCHEMA: u32 = 1;

/// Output root from the environment, falling back to `ifenn-out`.
pub fn output_root() -> std::path::PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV).map(Into::into).unwrap_or_else(|| OUTPUT_ROOT_FALLBACK.into())
}
