//! Multi-run experiment matrices: staggering × resolution × solver sweeps
//! executed by a small worker pool and condensed into one summary table.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::benchmark::BenchmarkConfig;
use crate::error::{Error, Result};
use crate::grid::Staggering;
use crate::io::{self, SummaryRow};
use crate::lkf::{self, DetectorParams};
use crate::momentum::{SolverConfig, SolverScheme};

/// One run of a matrix: a name (also its directory under the output root)
/// and a full benchmark configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixEntry {
    /// Directory name; derived from the configuration when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub config: BenchmarkConfig,
}

impl MatrixEntry {
    pub fn new(config: BenchmarkConfig) -> Self {
        MatrixEntry { name: None, config }
    }

    /// Resolved directory name.
    pub fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            format!(
                "{}_{}km_{}",
                self.config.staggering,
                self.config.h_km,
                self.config.solver.scheme
            )
        })
    }
}

fn default_parallel() -> usize {
    1
}

/// A set of benchmark runs sharing one output root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentMatrix {
    pub output_root: PathBuf,
    /// Worker-pool size.
    #[serde(default = "default_parallel")]
    pub parallel: usize,
    #[serde(rename = "run")]
    pub runs: Vec<MatrixEntry>,
}

impl ExperimentMatrix {
    /// The full comparison: every staggering at every cell size, each solved
    /// by every scheme.  Solver blocks take the per-scheme defaults.
    pub fn standard(
        output_root: impl Into<PathBuf>,
        base: &BenchmarkConfig,
        staggerings: &[Staggering],
        cell_sizes_km: &[f64],
        solvers: &[SolverScheme],
    ) -> Self {
        let mut runs = Vec::new();
        for &staggering in staggerings {
            for &h_km in cell_sizes_km {
                for &scheme in solvers {
                    let mut config = base.clone();
                    config.staggering = staggering;
                    config.h_km = h_km;
                    config.nx = None;
                    config.ny = None;
                    config.solver = SolverConfig::for_scheme(scheme);
                    runs.push(MatrixEntry::new(config));
                }
            }
        }
        ExperimentMatrix {
            output_root: output_root.into(),
            parallel: 1,
            runs,
        }
    }

    /// Two runs with equal velocity DOF budgets: a CD run on an n×n grid of
    /// `h_km` cells against a B run with twice the cells (n refined to 2n
    /// along x), since edge placement carries twice the unknowns of vertex
    /// placement per cell.
    pub fn same_dof_pair(
        output_root: impl Into<PathBuf>,
        base: &BenchmarkConfig,
        cd: Staggering,
        h_km: f64,
        scheme: SolverScheme,
    ) -> Self {
        let mut cd_cfg = base.clone();
        cd_cfg.staggering = cd;
        cd_cfg.h_km = h_km;
        cd_cfg.nx = None;
        cd_cfg.ny = None;
        cd_cfg.solver = SolverConfig::for_scheme(scheme);

        let n = (cd_cfg.domain_km / h_km).round() as usize;
        let mut b_cfg = cd_cfg.clone();
        b_cfg.staggering = Staggering::B;
        b_cfg.nx = Some(2 * n);
        b_cfg.ny = Some(n);

        let name = |cfg: &BenchmarkConfig, tag: &str| {
            Some(format!("samedof_{}_{}_{}", cfg.staggering, tag, scheme))
        };
        ExperimentMatrix {
            output_root: output_root.into(),
            parallel: 1,
            runs: vec![
                MatrixEntry {
                    name: name(&cd_cfg, "n"),
                    config: cd_cfg,
                },
                MatrixEntry {
                    name: name(&b_cfg, "2n"),
                    config: b_cfg,
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.parallel == 0 {
            return Err(Error::InvalidParameter {
                name: "parallel",
                value: 0.0,
                reason: "worker pool needs at least one worker".into(),
            });
        }
        if self.runs.is_empty() {
            return Err(Error::InvalidParameter {
                name: "run",
                value: 0.0,
                reason: "matrix has no runs".into(),
            });
        }
        let mut names: Vec<String> = self.runs.iter().map(MatrixEntry::name).collect();
        names.sort();
        if let Some(dup) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter {
                name: "run.name",
                value: 0.0,
                reason: format!("two runs would share the directory `{}`", dup[0]),
            });
        }
        for entry in &self.runs {
            entry.config.validate().map_err(|e| Error::InvalidParameter {
                name: "run",
                value: 0.0,
                reason: format!("run `{}`: {e}", entry.name()),
            })?;
        }
        Ok(())
    }
}

/// Load a matrix description from TOML.
pub fn load_matrix(path: &Path) -> Result<ExperimentMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let matrix: ExperimentMatrix = toml::from_str(&text).map_err(|e| Error::Config {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    matrix.validate().map_err(|e| Error::Config {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    Ok(matrix)
}

/// What one matrix run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub name: String,
    pub dir: PathBuf,
    /// Summary row on success.
    pub row: Option<SummaryRow>,
    /// Error text on failure.
    pub error: Option<String>,
}

/// Everything a finished matrix leaves behind.
#[derive(Debug, Clone)]
pub struct MatrixReport {
    /// The merged summary table (including rows from earlier invocations).
    pub table: Vec<SummaryRow>,
    pub outcomes: Vec<RunOutcome>,
    pub summary_path: PathBuf,
    pub plots_dir: PathBuf,
}

impl MatrixReport {
    pub fn failures(&self) -> impl Iterator<Item = &RunOutcome> {
        self.outcomes.iter().filter(|o| o.error.is_some())
    }
}

/// Execute one run plus detection; never panics the pool on solver failure.
fn run_one(entry: &MatrixEntry, root: &Path, detector: &DetectorParams, pixel_km: f64) -> RunOutcome {
    let name = entry.name();
    let dir = root.join(&name);
    let result = (|| -> Result<SummaryRow> {
        let result = io::execute_run(&entry.config, &dir)?;
        let grid = entry.config.build_grid()?;
        let staggering = entry.config.staggering;
        let image = lkf::regrid_shear(&grid, staggering, &result.final_shear, pixel_km)?;
        let (segments, report) = lkf::detect_with_sensitivity(&image, detector)?;
        io::write_segments_csv(&dir.join("segments.csv"), &segments)?;
        io::write_stats_csv(&dir.join("lkf_stats.csv"), &report)?;
        let dof = grid.dof_counts(staggering);
        Ok(SummaryRow {
            staggering,
            // Report the realized cell size (rectangular grids reduce to
            // the equivalent square edge).
            h_km: (grid.hx * grid.hy).sqrt() / 1e3,
            solver: entry.config.solver.scheme,
            velocity_dof: dof.velocity_dof,
            tracer_dof: dof.tracer_dof,
            lkf_count: report.count,
            lkf_total_length_km: report.total_length_km,
            wall_time_s: result.wall_seconds,
        })
    })();
    match result {
        Ok(row) => RunOutcome {
            name,
            dir,
            row: Some(row),
            error: None,
        },
        Err(e) => RunOutcome {
            name,
            dir,
            row: None,
            error: Some(e.to_string()),
        },
    }
}

/// Run every entry of the matrix (worker pool of `matrix.parallel` threads),
/// detect features on each final deformation field, and merge the results
/// into `summary.csv` and the plot-data files under the output root.
///
/// Individual run failures are recorded in the report; the matrix continues.
pub fn run_matrix(
    matrix: &ExperimentMatrix,
    detector: &DetectorParams,
    pixel_km: f64,
) -> Result<MatrixReport> {
    matrix.validate()?;
    detector.validate()?;
    let root = &matrix.output_root;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;

    let echo = toml::to_string_pretty(matrix).map_err(|e| Error::Config {
        path: root.join("matrix.toml"),
        detail: e.to_string(),
    })?;
    fs::write(root.join("matrix.toml"), echo).map_err(|e| Error::io(root, e))?;

    let next = AtomicUsize::new(0);
    let outcomes: Mutex<Vec<Option<RunOutcome>>> = Mutex::new(vec![None; matrix.runs.len()]);
    let workers = matrix.parallel.min(matrix.runs.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= matrix.runs.len() {
                    break;
                }
                let outcome = run_one(&matrix.runs[i], root, detector, pixel_km);
                outcomes.lock().unwrap()[i] = Some(outcome);
            });
        }
    });
    let outcomes: Vec<RunOutcome> = outcomes
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|o| o.expect("worker pool covered every run"))
        .collect();

    let new_rows: Vec<SummaryRow> = outcomes.iter().filter_map(|o| o.row.clone()).collect();
    let summary_path = root.join("summary.csv");
    let table = io::append_summary(&summary_path, &new_rows)?;
    let plots_dir = root.join("plots");
    io::write_plot_data(&plots_dir, &table)?;

    Ok(MatrixReport {
        table,
        outcomes,
        summary_path,
        plots_dir,
    })
}
