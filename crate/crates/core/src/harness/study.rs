use std::fs;
use std::path::{Path, PathBuf};

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::design::{Design, DesignConfig};
use crate::clock::Stopwatch;
use crate::dgp::replication_seed;
use crate::estimator::{
    em_npl_q_run, match_labels, prepare_start, CcpUpdate, EstimationState, InitMethod, Method, MultiStartConfig,
    PanelCounts, RunConfig,
};
use crate::maps::Truncation;
use crate::model::PanelData;
use crate::{Error, Result};

/// Monte Carlo study over a grid of methods and truncation levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub design: DesignConfig,
    pub methods: Vec<Method>,
    /// Truncation levels; integers or `"inf"`.
    pub q: Vec<Truncation>,
    pub replications: usize,
    pub seed: u64,
    pub eps_outer: f64,
    pub inner_tol: f64,
    pub max_outer: usize,
    pub ccp_update: CcpUpdate,
    /// Types used in estimation; defaults to the design's type count.
    pub n_types: Option<usize>,
    /// Include non-converged replications in the MSE column.
    pub include_nonconverged_mse: bool,
    pub output_dir: Option<PathBuf>,
    /// Worker threads for replications; `None` uses the environment or all cores.
    pub workers: Option<usize>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            design: DesignConfig::default(),
            methods: vec![Method::PvGmres],
            q: vec![Truncation::Steps(4)],
            replications: 20,
            seed: 1,
            eps_outer: 1e-3,
            inner_tol: crate::maps::INNER_TOL,
            max_outer: 100,
            ccp_update: CcpUpdate::Spectral,
            n_types: None,
            include_nonconverged_mse: true,
            output_dir: None,
            workers: None,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("the method list is empty".into()));
        }
        if self.q.is_empty() {
            return Err(Error::Config("the q list is empty".into()));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.n_types == Some(0) {
            return Err(Error::Config("n_types must be at least 1".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        let model = self.design.build_model()?;
        for m in &self.methods {
            m.check_model(&model)
                .map_err(|e| Error::Config(format!("{m} is unavailable for this design: {e}")))?;
        }
        Ok(())
    }

    pub fn run_config(&self, method: Method, q: Truncation) -> RunConfig {
        RunConfig {
            eps_outer: self.eps_outer,
            inner_tol: self.inner_tol,
            max_outer: self.max_outer,
            ccp_update: self.ccp_update,
            ..RunConfig::new(method, q)
        }
    }
}

/// One estimation inside a replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub seed: u64,
    pub converged: bool,
    /// Seconds of estimation only.
    pub wall_time: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// Label-matched squared error; `None` when the run failed outright.
    pub mse: Option<f64>,
    pub theta: Vec<Vec<f64>>,
    pub pi: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Aggregate of one `(method, q)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodCell {
    pub method: Method,
    pub q: Truncation,
    pub ct_mean: f64,
    pub ct_sd: f64,
    /// Mean MSE under the study's inclusion rule.
    pub mse: Option<f64>,
    /// Mean MSE over converged replications only.
    pub mse_converged: Option<f64>,
    pub avg_iter: f64,
    pub conv_pct: f64,
    pub records: Vec<ReplicationRecord>,
}

impl MethodCell {
    fn from_records(method: Method, q: Truncation, records: Vec<ReplicationRecord>, include_all: bool) -> Self {
        let n = records.len().max(1) as f64;
        let ct_mean = records.iter().map(|r| r.wall_time).sum::<f64>() / n;
        let ct_var = if records.len() > 1 {
            records.iter().map(|r| (r.wall_time - ct_mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let mean = |it: &mut dyn Iterator<Item = f64>| {
            let (s, c) = it.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
            (c > 0).then(|| s / c as f64)
        };
        let mse_all = mean(&mut records.iter().filter_map(|r| r.mse));
        let mse_converged = mean(&mut records.iter().filter(|r| r.converged).filter_map(|r| r.mse));
        MethodCell {
            method,
            q,
            ct_mean,
            ct_sd: ct_var.sqrt(),
            mse: if include_all { mse_all } else { mse_converged },
            mse_converged,
            avg_iter: records.iter().map(|r| r.outer_iterations as f64).sum::<f64>() / n,
            conv_pct: 100.0 * records.iter().filter(|r| r.converged).count() as f64 / n,
            records,
        }
    }
}

/// Worker count from `EMNPL_WORKERS`, if set and valid.
pub fn workers_from_env() -> Option<usize> {
    std::env::var(super::WORKERS_ENV).ok()?.trim().parse().ok().filter(|n| *n > 0)
}

/// Shared initial state of a replication: sieve CCPs for mixtures,
/// frequency CCPs for single-type games.
pub fn replication_start(
    design: &Design,
    data: &PanelData,
    counts: &PanelCounts,
    n_types: usize,
    seed: u64,
) -> Result<EstimationState> {
    let mut cfg = MultiStartConfig::new(RunConfig::new(Method::PvGmres, Truncation::Converge), n_types);
    cfg.seed = seed;
    if n_types == 1 && design.model.n_firms() > 1 {
        cfg.init = InitMethod::Frequency;
    }
    prepare_start(data, &design.model, counts, &cfg, 0)
}

fn failed_record(replication: usize, seed: u64, message: String) -> ReplicationRecord {
    ReplicationRecord {
        replication,
        seed,
        converged: false,
        wall_time: 0.0,
        outer_iterations: 0,
        inner_iterations: 0,
        mse: None,
        theta: Vec::new(),
        pi: Vec::new(),
        failure: Some(message),
    }
}

fn replicate(config: &StudyConfig, design: &Design, grid: &[(Method, Truncation)], r: usize) -> Vec<ReplicationRecord> {
    let seed = replication_seed(config.seed, r as u64);
    let n_types = config.n_types.unwrap_or(design.n_types());
    let prepared = design.simulate(seed).and_then(|data| {
        let counts = PanelCounts::new(&data, &design.model)?;
        let init = replication_start(design, &data, &counts, n_types, seed)?;
        Ok((counts, init))
    });
    let (counts, init) = match prepared {
        Ok(p) => p,
        Err(e) => return grid.iter().map(|_| failed_record(r, seed, format!("setup: {e}"))).collect(),
    };
    grid.iter()
        .map(|&(method, q)| {
            let watch = Stopwatch::start();
            match em_npl_q_run(&design.model, &counts, &init, &config.run_config(method, q)) {
                Ok(res) => {
                    let mse = if res.state.theta.len() == design.theta.len() {
                        match_labels(&res.state.theta, &res.state.pi, &design.theta, &design.pi)
                            .ok()
                            .map(|m| m.mse)
                    } else {
                        None
                    };
                    ReplicationRecord {
                        replication: r,
                        seed,
                        converged: res.converged,
                        wall_time: res.wall_time,
                        outer_iterations: res.outer_iterations,
                        inner_iterations: res.inner_iterations,
                        mse,
                        theta: res.state.theta,
                        pi: res.state.pi,
                        failure: res.failure,
                    }
                }
                Err(e) => ReplicationRecord {
                    wall_time: watch.seconds(),
                    ..failed_record(r, seed, e.to_string())
                },
            }
        })
        .collect()
}

/// Runs every replication and aggregates one cell per `(method, q)`, in the
/// order methods × q. Replication failures are recorded, never fatal.
pub fn run_study(config: &StudyConfig) -> Result<Vec<MethodCell>> {
    config.validate()?;
    let design = config.design.build()?;
    let grid: Vec<(Method, Truncation)> = config
        .methods
        .iter()
        .flat_map(|&m| config.q.iter().map(move |&q| (m, q)))
        .collect();
    let reps = config.replications;
    let per_rep: Vec<Vec<ReplicationRecord>> = run_replications(config, reps, |r| replicate(config, &design, &grid, r))?;
    Ok(grid
        .iter()
        .enumerate()
        .map(|(k, &(method, q))| {
            let records = per_rep.iter().map(|rep| rep[k].clone()).collect();
            MethodCell::from_records(method, q, records, config.include_nonconverged_mse)
        })
        .collect())
}

#[cfg(feature = "parallel")]
fn run_replications<T: Send>(config: &StudyConfig, reps: usize, f: impl Fn(usize) -> T + Sync + Send) -> Result<Vec<T>> {
    let workers = config.workers.or_else(workers_from_env);
    match workers {
        Some(1) => Ok((0..reps).map(f).collect()),
        _ => {
            let mut builder = rayon::ThreadPoolBuilder::new();
            if let Some(w) = workers {
                builder = builder.num_threads(w);
            }
            let pool = builder
                .build()
                .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
            Ok(pool.install(|| (0..reps).into_par_iter().map(f).collect()))
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn run_replications<T>(_config: &StudyConfig, reps: usize, f: impl Fn(usize) -> T) -> Result<Vec<T>> {
    Ok((0..reps).map(f).collect())
}

/// Output table formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Json,
}

/// Table header of the CSV output.
pub const CSV_COLUMNS: [&str; 7] = ["method", "q", "ct_mean", "ct_sd", "mse", "avg_iter", "conv_pct"];

/// Writes `cells.csv` or `cells.json` into `dir` and returns the path.
pub fn emit_tables(cells: &[MethodCell], dir: &Path, format: TableFormat) -> Result<PathBuf> {
    if cells.is_empty() {
        return Err(Error::Config("no cells to write".into()));
    }
    fs::create_dir_all(dir)?;
    match format {
        TableFormat::Csv => {
            let path = dir.join("cells.csv");
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(CSV_COLUMNS)?;
            for c in cells {
                w.write_record([
                    c.method.name().to_string(),
                    c.q.to_string(),
                    format!("{:.6}", c.ct_mean),
                    format!("{:.6}", c.ct_sd),
                    c.mse.map(|m| format!("{m:.6}")).unwrap_or_default(),
                    format!("{:.3}", c.avg_iter),
                    format!("{:.1}", c.conv_pct),
                ])?;
            }
            w.flush()?;
            Ok(path)
        }
        TableFormat::Json => {
            let path = dir.join("cells.json");
            fs::write(&path, serde_json::to_string_pretty(cells)?)?;
            Ok(path)
        }
    }
}

/// Fixed-width text rendering of the cells.
pub fn render_table(cells: &[MethodCell]) -> String {
    let mut out = format!(
        "{:<14} {:>4} {:>12} {:>10} {:>10} {:>9} {:>8}\n",
        "method", "q", "CT (s)", "sd", "MSE", "avg iter", "conv %"
    );
    for c in cells {
        let mse = c.mse.map(|m| format!("{m:.4}")).unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{:<14} {:>4} {:>12.4} {:>10.4} {:>10} {:>9.2} {:>8.1}\n",
            c.method.name(),
            c.q.to_string(),
            c.ct_mean,
            c.ct_sd,
            mse,
            c.avg_iter,
            c.conv_pct
        ));
    }
    out
}
