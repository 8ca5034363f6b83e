//! Command-line driver: single runs, experiment matrices, feature
//! detection, summary tables, and grid metadata.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime failure,
//! 3 matrix finished but some runs failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};

use floe_core::benchmark::BenchmarkConfig;
use floe_core::experiment::{self, MatrixEntry};
use floe_core::io::{self, RunReader};
use floe_core::lkf::{self, DetectorParams};
use floe_core::{Error, Result, Staggering};

/// Environment variable overriding where run directories are created.
const OUTPUT_ROOT_ENV: &str = "FLOE_OUTPUT_ROOT";

#[derive(Parser)]
#[command(
    name = "floe",
    version,
    about = "Viscous-plastic sea-ice benchmark runner and feature detector",
    after_help = "Output roots resolve as: --flag, then $FLOE_OUTPUT_ROOT, then the config value (or `runs`)."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one benchmark configuration and write its artifacts.
    Run {
        /// Benchmark configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Exact output directory (default: <output root>/<derived name>).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run every configuration of a matrix file, detect features, and
    /// merge the results into summary and plot tables.
    Matrix {
        /// Matrix description (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Override the matrix's output root.
        #[arg(long)]
        output_root: Option<PathBuf>,
        /// Override the matrix's worker-pool size.
        #[arg(long)]
        parallel: Option<usize>,
        /// Pixel size for deformation regridding (km).
        #[arg(long, default_value_t = 2.0)]
        pixel_km: f64,
    },
    /// Detect linear kinematic features on a run's final snapshot.
    Detect {
        /// Run directory written by `run` or `matrix`.
        #[arg(long)]
        run: PathBuf,
        /// Pixel size for deformation regridding (km).
        #[arg(long, default_value_t = 2.0)]
        pixel_km: f64,
        /// Binarization quantile (default from DetectorParams).
        #[arg(long)]
        quantile: Option<f64>,
        /// Minimum segment length in pixels.
        #[arg(long)]
        min_length_px: Option<usize>,
        /// Minimum feature width in pixels.
        #[arg(long)]
        min_width_px: Option<usize>,
    },
    /// Print the cross-experiment summary table and refresh plot data.
    Summarize {
        /// Output root holding summary.csv.
        #[arg(long)]
        root: Option<PathBuf>,
    },
    /// Print grid metadata (dimensions, entity and DOF counts) as JSON.
    GridInfo {
        /// Read grid parameters from a benchmark configuration.
        #[arg(long, conflicts_with_all = ["staggering", "h_km"])]
        config: Option<PathBuf>,
        /// Velocity staggering (b, cd1, cd2).
        #[arg(long)]
        staggering: Option<Staggering>,
        /// Cell size (km).
        #[arg(long)]
        h_km: Option<f64>,
        /// Domain edge length (km).
        #[arg(long, default_value_t = 512.0)]
        domain_km: f64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let ok = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return ExitCode::from(if ok { 0 } else { 1 });
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(if err.is_config() { 1 } else { 2 })
        }
    }
}

/// CLI flag, then environment, then fallback.
fn output_root(flag: Option<PathBuf>, fallback: Option<&Path>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| fallback.map_or_else(|| PathBuf::from("runs"), Path::to_path_buf))
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { config, output } => run_single(&config, output),
        Command::Matrix {
            config,
            output_root,
            parallel,
            pixel_km,
        } => run_matrix(&config, output_root, parallel, pixel_km),
        Command::Detect {
            run,
            pixel_km,
            quantile,
            min_length_px,
            min_width_px,
        } => detect(&run, pixel_km, quantile, min_length_px, min_width_px),
        Command::Summarize { root } => summarize(root),
        Command::GridInfo {
            config,
            staggering,
            h_km,
            domain_km,
        } => grid_info(config, staggering, h_km, domain_km),
    }
}

fn run_single(config: &Path, output: Option<PathBuf>) -> Result<ExitCode> {
    let cfg = io::load_config(config)?;
    let dir = output.unwrap_or_else(|| {
        output_root(None, None).join(MatrixEntry::new(cfg.clone()).name())
    });
    println!("running {} -> {}", config.display(), dir.display());
    let result = io::execute_run(&cfg, &dir)?;
    println!(
        "done: {} steps in {:.1} s, max |v| {:.4} m/s, volume drift {:.2e}",
        result.steps_completed,
        result.wall_seconds,
        result.max_speed,
        (result.volume_final - result.volume_initial).abs() / result.volume_initial
    );
    Ok(ExitCode::SUCCESS)
}

fn run_matrix(
    config: &Path,
    root_flag: Option<PathBuf>,
    parallel: Option<usize>,
    pixel_km: f64,
) -> Result<ExitCode> {
    let mut matrix = experiment::load_matrix(config)?;
    matrix.output_root = output_root(root_flag, Some(&matrix.output_root));
    if let Some(parallel) = parallel {
        matrix.parallel = parallel;
    }
    println!(
        "matrix: {} runs, {} workers -> {}",
        matrix.runs.len(),
        matrix.parallel,
        matrix.output_root.display()
    );
    let report = experiment::run_matrix(&matrix, &DetectorParams::default(), pixel_km)?;
    for outcome in &report.outcomes {
        match (&outcome.row, &outcome.error) {
            (Some(row), _) => println!(
                "  ok    {:24} lkf_count={:<4} total={:.1} km  wall={:.1} s",
                outcome.name, row.lkf_count, row.lkf_total_length_km, row.wall_time_s
            ),
            (_, Some(err)) => println!("  FAIL  {:24} {err}", outcome.name),
            _ => unreachable!("outcome must hold a row or an error"),
        }
    }
    let failed = report.failures().count();
    println!(
        "summary: {} ({} rows), plots: {}",
        report.summary_path.display(),
        report.table.len(),
        report.plots_dir.display()
    );
    if failed == report.outcomes.len() {
        Err(Error::SolverBlowUp {
            step: 0,
            detail: "every matrix run failed".into(),
        })
    } else if failed > 0 {
        println!("{failed} of {} runs failed", report.outcomes.len());
        Ok(ExitCode::from(3))
    } else {
        Ok(ExitCode::SUCCESS)
    }
}

fn detect(
    run: &Path,
    pixel_km: f64,
    quantile: Option<f64>,
    min_length_px: Option<usize>,
    min_width_px: Option<usize>,
) -> Result<ExitCode> {
    let mut params = DetectorParams::default();
    if let Some(q) = quantile {
        params.threshold_quantile = q;
    }
    if let Some(l) = min_length_px {
        params.min_length_px = l;
    }
    if let Some(w) = min_width_px {
        params.min_width_px = w;
    }
    params.validate()?;

    let reader = RunReader::open(run)?;
    let step = reader.final_step()?;
    let shear = reader.field(step, "shear")?;
    let grid = reader.config().build_grid()?;
    let image = lkf::regrid_shear(&grid, reader.config().staggering, &shear, pixel_km)?;
    let (segments, report) = lkf::detect_with_sensitivity(&image, &params)?;

    io::write_segments_csv(&run.join("segments.csv"), &segments)?;
    io::write_stats_csv(&run.join("lkf_stats.csv"), &report)?;
    println!(
        "step {step}: {} features, total {:.1} km (quantile {:.2}: count {} at {:.2}, {} at {:.2}; sensitivity {})",
        report.count,
        report.total_length_km,
        report.quantile,
        report.count_minus,
        report.quantile_minus,
        report.count_plus,
        report.quantile_plus,
        report.count_sensitivity
    );
    Ok(ExitCode::SUCCESS)
}

fn summarize(root: Option<PathBuf>) -> Result<ExitCode> {
    let root = output_root(root, None);
    let path = root.join("summary.csv");
    if !path.exists() {
        return Err(Error::MissingArtifact { path });
    }
    let rows = io::read_summary(&path)?;
    println!(
        "{:<10} {:>6} {:<7} {:>12} {:>10} {:>9} {:>14} {:>10}",
        "staggering", "h_km", "solver", "velocity_dof", "tracer_dof", "lkf_count", "length_km", "wall_s"
    );
    for r in &rows {
        println!(
            "{:<10} {:>6} {:<7} {:>12} {:>10} {:>9} {:>14.1} {:>10.1}",
            r.staggering.to_string(),
            r.h_km,
            r.solver.to_string(),
            r.velocity_dof,
            r.tracer_dof,
            r.lkf_count,
            r.lkf_total_length_km,
            r.wall_time_s
        );
    }
    io::write_plot_data(&root.join("plots"), &rows)?;
    println!("{} rows; plots refreshed under {}", rows.len(), root.join("plots").display());
    Ok(ExitCode::SUCCESS)
}

fn grid_info(
    config: Option<PathBuf>,
    staggering: Option<Staggering>,
    h_km: Option<f64>,
    domain_km: f64,
) -> Result<ExitCode> {
    let cfg = match (config, staggering, h_km) {
        (Some(path), _, _) => io::load_config(&path)?,
        (None, Some(staggering), Some(h_km)) => {
            let mut cfg = BenchmarkConfig::square(staggering, h_km);
            cfg.domain_km = domain_km;
            cfg
        }
        _ => {
            let mut cmd = Cli::command();
            let _ = cmd.print_help();
            return Err(Error::InvalidParameter {
                name: "grid-info",
                value: 0.0,
                reason: "pass either --config or both --staggering and --h-km".into(),
            });
        }
    };
    let grid = cfg.build_grid()?;
    let mut info = grid.info_json();
    info["staggering"] = serde_json::to_value(cfg.staggering)?;
    info["dof"] = serde_json::to_value(grid.dof_counts(cfg.staggering))?;
    println!("{}", serde_json::to_string_pretty(&info)?);
    Ok(ExitCode::SUCCESS)
}
