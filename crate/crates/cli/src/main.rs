use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use emnpl::estimator::Method;
use emnpl::harness::{
    bench_inner, emit_tables, estimate_once, load_config, render_bench, render_report, render_table, run_study,
    simulate_design, BenchConfig, EstimateConfig, SimulateConfig, StudyConfig, TableFormat, WORKERS_ENV,
};
use emnpl::maps::Truncation;
use emnpl::model::PanelData;
use emnpl::Error;

/// EM-NPL(q) estimation of dynamic discrete choice models with latent types.
#[derive(Debug, Parser)]
#[command(name = "emnpl", version, after_help = format!("Worker threads for studies default to ${WORKERS_ENV}, then all cores."))]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
    Both,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Runs a Monte Carlo study and writes one table row per (method, q).
    Study {
        config: PathBuf,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        /// Comma-separated method names (overrides the config).
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
        /// Comma-separated truncation levels, integers or `inf`.
        #[arg(long, value_delimiter = ',')]
        q: Option<Vec<Truncation>>,
        #[arg(long, value_enum, default_value = "both")]
        format: Format,
    },
    /// Estimates a model on a panel CSV and prints a report.
    Estimate {
        config: PathBuf,
        panel: PathBuf,
        /// Writes the full result as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Writes the text report.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        q: Option<Truncation>,
        #[arg(long)]
        starts: Option<usize>,
    },
    /// Simulates a panel from a design and writes it as CSV with a truth file.
    Simulate {
        config: PathBuf,
        /// Panel CSV path; the truth goes to `<stem>.truth.json`.
        #[arg(long, default_value = "panel.csv")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Benchmarks inner solvers at the design's true parameters.
    BenchInner {
        config: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Json(_) | Error::Parse { .. } | Error::DimensionMismatch { .. } => {
                    ExitCode::from(2)
                }
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> emnpl::Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn run(command: Command) -> emnpl::Result<()> {
    match command {
        Command::Study {
            config,
            out,
            replications,
            seed,
            workers,
            methods,
            q,
            format,
        } => {
            let mut cfg: StudyConfig = load_config(&config)?;
            if let Some(v) = replications {
                cfg.replications = v;
            }
            if let Some(v) = seed {
                cfg.seed = v;
            }
            if workers.is_some() {
                cfg.workers = workers;
            }
            if let Some(v) = methods {
                cfg.methods = v;
            }
            if let Some(v) = q {
                cfg.q = v;
            }
            let dir = out.or(cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("results"));
            let cells = run_study(&cfg)?;
            print!("{}", render_table(&cells));
            let formats: &[TableFormat] = match format {
                Format::Csv => &[TableFormat::Csv],
                Format::Json => &[TableFormat::Json],
                Format::Both => &[TableFormat::Csv, TableFormat::Json],
            };
            for f in formats {
                let path = emit_tables(&cells, &dir, *f)?;
                eprintln!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Estimate {
            config,
            panel,
            json,
            report,
            method,
            q,
            starts,
        } => {
            let mut cfg: EstimateConfig = load_config(&config)?;
            if let Some(m) = method {
                cfg.method = m;
            }
            if let Some(q) = q {
                cfg.q = q;
            }
            if let Some(s) = starts {
                cfg.n_starts = s;
            }
            let data = PanelData::load_csv(&panel)?;
            let out = estimate_once(&cfg, &data)?;
            let text = render_report(&out, None);
            print!("{text}");
            if let Some(p) = report {
                fs::write(p, &text)?;
            }
            if let Some(p) = json {
                write_json(&p, &out)?;
            }
            Ok(())
        }
        Command::Simulate { config, out, seed } => {
            let mut cfg: SimulateConfig = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let (data, truth) = simulate_design(&cfg)?;
            data.save_csv(&out)?;
            let truth_path = out.with_extension("truth.json");
            write_json(&truth_path, &truth)?;
            eprintln!(
                "wrote {} ({} markets × {} periods) and {}",
                out.display(),
                data.n_markets(),
                data.n_periods(),
                truth_path.display()
            );
            Ok(())
        }
        Command::BenchInner { config, json } => {
            let cfg: BenchConfig = load_config(&config)?;
            let records = bench_inner(&cfg)?;
            print!("{}", render_bench(&records));
            if let Some(p) = json {
                write_json(&p, &records)?;
            }
            Ok(())
        }
    }
}
