//! Monte Carlo studies, inner-solver benchmarks and one-shot estimation
//! driven by JSON configuration files.

pub mod bench;
pub mod design;
pub mod estimate;
pub mod study;

use std::path::Path;

use serde::de::DeserializeOwned;

use crate::Result;

pub use bench::{inner_solve, bench_inner, render_bench, BenchConfig, BenchRecord};
pub use design::{simulate_design, Design, DesignConfig, DesignKind, SimulateConfig, Truth};
pub use estimate::{estimate_once, render_report, EstimateConfig, EstimateOutput};
pub use study::{
    emit_tables, render_table, replication_start, run_study, workers_from_env, MethodCell, ReplicationRecord,
    StudyConfig, TableFormat, CSV_COLUMNS,
};

/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "EMNPL_WORKERS";

/// Reads a JSON configuration file.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
