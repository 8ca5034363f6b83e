//! Run-directory artifacts: raw field dumps with JSON sidecars, telemetry
//! and summary tables, and detector exports.
//!
//! A run directory is laid out as
//!
//! ```text
//! <dir>/config.toml        full echo of the configuration that produced it
//! <dir>/grid.json          grid metadata and DOF accounting
//! <dir>/telemetry.csv      one row per time step
//! <dir>/run_meta.json      completion summary (also written on failure)
//! <dir>/snapshots/step_NNNNNN.<field>.bin   raw little-endian f64 values
//! <dir>/snapshots/step_NNNNNN.json          sidecar describing the dumps
//! ```
//!
//! Every writer here has a matching reader that reloads the file bit-exactly
//! (floats are serialized in shortest round-trip form).

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::benchmark::{run_benchmark_with, BenchmarkConfig, RunResult, Snapshot, StepTelemetry};
use crate::error::{Error, Result};
use crate::grid::Staggering;
use crate::lkf::{LkfSegment, SensitivityReport};
use crate::momentum::SolverScheme;

/// Code revision embedded at build time (`git describe`, or the crate
/// version outside a checkout).
pub const CODE_VERSION: &str = env!("FLOE_BUILD_VERSION");

// ----- raw field dumps -----

/// Write a field as raw little-endian f64 values.
pub fn write_field(path: &Path, data: &[f64]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for v in data {
        w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read a raw little-endian f64 dump, bit-exactly.
pub fn read_field(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::CorruptDump {
            path: path.to_path_buf(),
            detail: format!("{} bytes is not a whole number of f64 values", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

// ----- snapshot sidecars -----

/// Description of one dumped field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldMeta {
    /// File name relative to the sidecar.
    pub file: String,
    /// Number of f64 values.
    pub len: usize,
    pub units: String,
}

/// Metadata written next to each snapshot's field dumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSidecar {
    pub step: usize,
    pub time_s: f64,
    pub nx: usize,
    pub ny: usize,
    pub hx_m: f64,
    pub hy_m: f64,
    pub staggering: Staggering,
    pub code_version: String,
    pub fields: BTreeMap<String, FieldMeta>,
    /// Full echo of the run configuration.
    pub config: BenchmarkConfig,
}

/// Completion summary for a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub steps_completed: usize,
    pub wall_seconds: f64,
    /// `None` when the run aborted before completing.
    pub volume_initial: Option<f64>,
    pub volume_final: Option<f64>,
    pub max_speed: Option<f64>,
    pub code_version: String,
    /// Present when the run aborted; holds the error text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::CorruptDump {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

// ----- run writing -----

/// Streams one run's artifacts into its directory.
pub struct RunWriter {
    dir: PathBuf,
    cfg: BenchmarkConfig,
    dims: (usize, usize, f64, f64),
    telemetry: csv::Writer<fs::File>,
}

const SNAPSHOT_DIR: &str = "snapshots";

fn field_units(name: &str) -> &'static str {
    match name {
        "h" => "m",
        "a" => "1",
        "u" | "v" => "m/s",
        "shear" => "1/s",
        _ => "unknown",
    }
}

impl RunWriter {
    /// Create (or wipe) a run directory and write the config echo and grid
    /// metadata.
    pub fn create(dir: impl Into<PathBuf>, cfg: &BenchmarkConfig) -> Result<RunWriter> {
        let dir = dir.into();
        let grid = cfg.build_grid()?;
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::create_dir_all(dir.join(SNAPSHOT_DIR)).map_err(|e| Error::io(&dir, e))?;

        let config_path = dir.join("config.toml");
        let echo = toml::to_string_pretty(cfg).map_err(|e| Error::Config {
            path: config_path.clone(),
            detail: e.to_string(),
        })?;
        fs::write(&config_path, echo).map_err(|e| Error::io(&config_path, e))?;

        let mut grid_json = grid.info_json();
        grid_json["staggering"] = serde_json::to_value(cfg.staggering)?;
        grid_json["dof"] = serde_json::to_value(grid.dof_counts(cfg.staggering))?;
        write_json(&dir.join("grid.json"), &grid_json)?;

        let telemetry_path = dir.join("telemetry.csv");
        let telemetry = csv::Writer::from_path(&telemetry_path)
            .map_err(|e| Error::io(&telemetry_path, csv_to_io(e)))?;

        Ok(RunWriter {
            dims: (grid.nx, grid.ny, grid.hx, grid.hy),
            dir,
            cfg: cfg.clone(),
            telemetry,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Dump all snapshot fields plus their sidecar; returns the sidecar path.
    pub fn write_snapshot(&mut self, snap: &Snapshot) -> Result<PathBuf> {
        let stem = format!("step_{:06}", snap.step);
        let base = self.dir.join(SNAPSHOT_DIR);
        let named: [(&str, &[f64]); 5] = [
            ("h", &snap.state.h),
            ("a", &snap.state.a),
            ("u", &snap.state.u),
            ("v", &snap.state.v),
            ("shear", snap.shear),
        ];
        let mut fields = BTreeMap::new();
        for (name, data) in named {
            let file = format!("{stem}.{name}.bin");
            write_field(&base.join(&file), data)?;
            fields.insert(
                name.to_string(),
                FieldMeta {
                    file,
                    len: data.len(),
                    units: field_units(name).to_string(),
                },
            );
        }
        let sidecar = SnapshotSidecar {
            step: snap.step,
            time_s: snap.time_s,
            nx: self.dims.0,
            ny: self.dims.1,
            hx_m: self.dims.2,
            hy_m: self.dims.3,
            staggering: self.cfg.staggering,
            code_version: CODE_VERSION.to_string(),
            fields,
            config: self.cfg.clone(),
        };
        let path = base.join(format!("{stem}.json"));
        write_json(&path, &sidecar)?;
        Ok(path)
    }

    pub fn append_telemetry(&mut self, row: &StepTelemetry) -> Result<()> {
        let path = self.dir.join("telemetry.csv");
        self.telemetry
            .serialize(row)
            .map_err(|e| Error::io(&path, csv_to_io(e)))?;
        Ok(())
    }

    /// Write the completion summary and flush everything.
    pub fn finish(mut self, meta: &RunMeta) -> Result<()> {
        let path = self.dir.join("telemetry.csv");
        self.telemetry
            .flush()
            .map_err(|e| Error::io(&path, e))?;
        write_json(&self.dir.join("run_meta.json"), meta)
    }
}

fn csv_to_io(e: csv::Error) -> std::io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => io,
        other => std::io::Error::other(format!("{other:?}")),
    }
}

/// Run a benchmark and stream everything into `dir`.  On solver failure the
/// offending state is still dumped and `run_meta.json` records the error.
pub fn execute_run(cfg: &BenchmarkConfig, dir: impl Into<PathBuf>) -> Result<RunResult> {
    let mut writer = RunWriter::create(dir, cfg)?;
    match run_benchmark_with(cfg, |snap| writer.write_snapshot(snap).map(|_| ())) {
        Ok(result) => {
            for row in &result.telemetry {
                writer.append_telemetry(row)?;
            }
            writer.finish(&RunMeta {
                steps_completed: result.steps_completed,
                wall_seconds: result.wall_seconds,
                volume_initial: Some(result.volume_initial),
                volume_final: Some(result.volume_final),
                max_speed: Some(result.max_speed),
                code_version: CODE_VERSION.to_string(),
                failure: None,
            })?;
            Ok(result)
        }
        Err(err) => {
            let steps = match &err {
                Error::SolverBlowUp { step, .. } => *step,
                _ => 0,
            };
            // Best effort: the run is already lost, keep the original error.
            let _ = writer.finish(&RunMeta {
                steps_completed: steps,
                wall_seconds: 0.0,
                volume_initial: None,
                volume_final: None,
                max_speed: None,
                code_version: CODE_VERSION.to_string(),
                failure: Some(err.to_string()),
            });
            Err(err)
        }
    }
}

// ----- run reading -----

/// Read-side view of a run directory.
pub struct RunReader {
    dir: PathBuf,
    config: BenchmarkConfig,
}

impl RunReader {
    pub fn open(dir: impl Into<PathBuf>) -> Result<RunReader> {
        let dir = dir.into();
        let config_path = dir.join("config.toml");
        if !config_path.exists() {
            return Err(Error::MissingArtifact { path: config_path });
        }
        let config = load_config(&config_path)?;
        Ok(RunReader { dir, config })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config(&self) -> &BenchmarkConfig {
        &self.config
    }

    pub fn run_meta(&self) -> Result<RunMeta> {
        read_json(&self.dir.join("run_meta.json"))
    }

    /// Snapshot step indices present on disk, ascending.
    pub fn snapshot_steps(&self) -> Result<Vec<usize>> {
        let base = self.dir.join(SNAPSHOT_DIR);
        let mut steps = Vec::new();
        let entries = fs::read_dir(&base).map_err(|e| Error::io(&base, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&base, e))?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if let Some(stem) = name.strip_suffix(".json") {
                if let Some(digits) = stem.strip_prefix("step_") {
                    if let Ok(step) = digits.parse::<usize>() {
                        steps.push(step);
                    }
                }
            }
        }
        steps.sort_unstable();
        Ok(steps)
    }

    pub fn sidecar(&self, step: usize) -> Result<SnapshotSidecar> {
        read_json(
            &self
                .dir
                .join(SNAPSHOT_DIR)
                .join(format!("step_{step:06}.json")),
        )
    }

    /// Load one dumped field of a snapshot, validated against its sidecar.
    pub fn field(&self, step: usize, name: &str) -> Result<Vec<f64>> {
        let sidecar = self.sidecar(step)?;
        let meta = sidecar.fields.get(name).ok_or_else(|| Error::MissingArtifact {
            path: self
                .dir
                .join(SNAPSHOT_DIR)
                .join(format!("step_{step:06}.{name}.bin")),
        })?;
        let path = self.dir.join(SNAPSHOT_DIR).join(&meta.file);
        let data = read_field(&path)?;
        if data.len() != meta.len {
            return Err(Error::CorruptDump {
                path,
                detail: format!("{} values on disk, sidecar says {}", data.len(), meta.len),
            });
        }
        Ok(data)
    }

    /// The last snapshot's step index.
    pub fn final_step(&self) -> Result<usize> {
        self.snapshot_steps()?
            .last()
            .copied()
            .ok_or_else(|| Error::MissingArtifact {
                path: self.dir.join(SNAPSHOT_DIR),
            })
    }

    pub fn telemetry(&self) -> Result<Vec<StepTelemetry>> {
        let path = self.dir.join("telemetry.csv");
        let mut reader = csv::Reader::from_path(&path).map_err(|e| Error::io(&path, csv_to_io(e)))?;
        let mut rows = Vec::new();
        for row in reader.deserialize() {
            rows.push(row.map_err(|e| Error::CorruptDump {
                path: path.clone(),
                detail: e.to_string(),
            })?);
        }
        Ok(rows)
    }
}

// ----- config loading -----

/// Load and validate a benchmark configuration from TOML.
pub fn load_config(path: &Path) -> Result<BenchmarkConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: BenchmarkConfig = toml::from_str(&text).map_err(|e| Error::Config {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    cfg.validate().map_err(|e| Error::Config {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    Ok(cfg)
}

// ----- detector exports -----

/// Write detected segments as CSV: id, pixel count, length, mean intensity,
/// and the pixel chain itself (`i:j` pairs separated by spaces).
pub fn write_segments_csv(path: &Path, segments: &[LkfSegment]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "id,n_pixels,length_km,mean_intensity,pixels")
        .map_err(|e| Error::io(path, e))?;
    for (id, seg) in segments.iter().enumerate() {
        let chain: Vec<String> = seg
            .pixels
            .iter()
            .map(|&(i, j)| format!("{i}:{j}"))
            .collect();
        writeln!(
            w,
            "{id},{},{},{},{}",
            seg.pixels.len(),
            seg.length_km,
            seg.mean_intensity,
            chain.join(" ")
        )
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reload a segments CSV written by [`write_segments_csv`].
pub fn read_segments_csv(path: &Path) -> Result<Vec<LkfSegment>> {
    let corrupt = |detail: String| Error::CorruptDump {
        path: path.to_path_buf(),
        detail,
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut segments = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.splitn(5, ',').collect();
        if cols.len() != 5 {
            return Err(corrupt(format!("line {}: expected 5 columns", n + 1)));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| corrupt(format!("line {}: bad float `{s}`", n + 1)))
        };
        let mut pixels = Vec::new();
        for pair in cols[4].split(' ').filter(|s| !s.is_empty()) {
            let (i, j) = pair
                .split_once(':')
                .ok_or_else(|| corrupt(format!("line {}: bad pixel `{pair}`", n + 1)))?;
            pixels.push((
                i.parse()
                    .map_err(|_| corrupt(format!("line {}: bad pixel `{pair}`", n + 1)))?,
                j.parse()
                    .map_err(|_| corrupt(format!("line {}: bad pixel `{pair}`", n + 1)))?,
            ));
        }
        segments.push(LkfSegment {
            pixels,
            length_km: parse(cols[2])?,
            mean_intensity: parse(cols[3])?,
        });
    }
    Ok(segments)
}

/// Write the per-run detection stats row (with the quantile-sensitivity
/// columns).
pub fn write_stats_csv(path: &Path, report: &SensitivityReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, csv_to_io(e)))?;
    w.serialize(report).map_err(|e| Error::io(path, csv_to_io(e)))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reload a stats CSV written by [`write_stats_csv`].
pub fn read_stats_csv(path: &Path) -> Result<SensitivityReport> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::io(path, csv_to_io(e)))?;
    reader
        .deserialize()
        .next()
        .ok_or_else(|| Error::CorruptDump {
            path: path.to_path_buf(),
            detail: "empty stats file".into(),
        })?
        .map_err(|e| Error::CorruptDump {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
}

// ----- summary table -----

/// One line of the cross-experiment summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub staggering: Staggering,
    pub h_km: f64,
    pub solver: SolverScheme,
    pub velocity_dof: usize,
    pub tracer_dof: usize,
    pub lkf_count: usize,
    pub lkf_total_length_km: f64,
    pub wall_time_s: f64,
}

impl SummaryRow {
    fn sort_key(&self) -> (Staggering, u64, SolverScheme) {
        (self.staggering, self.h_km.to_bits(), self.solver)
    }
}

/// Merge rows into the summary CSV.  Existing rows are kept (the file only
/// ever grows), a rerun of the same configuration replaces its old row, and
/// the result is sorted by (staggering, h, solver).  Returns the full table.
pub fn append_summary(path: &Path, new_rows: &[SummaryRow]) -> Result<Vec<SummaryRow>> {
    let mut rows = if path.exists() {
        read_summary(path)?
    } else {
        Vec::new()
    };
    for row in new_rows {
        match rows.iter_mut().find(|r| r.sort_key() == row.sort_key()) {
            Some(existing) => *existing = row.clone(),
            None => rows.push(row.clone()),
        }
    }
    // Cell sizes are validated positive, so their bit patterns sort
    // numerically.
    rows.sort_by_key(SummaryRow::sort_key);
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, csv_to_io(e)))?;
    for row in &rows {
        w.serialize(row).map_err(|e| Error::io(path, csv_to_io(e)))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(rows)
}

/// Reload a summary CSV.
pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::io(path, csv_to_io(e)))?;
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        rows.push(row.map_err(|e| Error::CorruptDump {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?);
    }
    Ok(rows)
}

// ----- plot-ready exports -----

/// Emit the four plot-data files (detected feature count and total length,
/// against cell size and against velocity DOF) from summary rows.
pub fn write_plot_data(dir: &Path, rows: &[SummaryRow]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rows: Vec<&SummaryRow> = rows.iter().collect();
    rows.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));

    let write = |file: &str, header: &str, line: &dyn Fn(&SummaryRow) -> String| -> Result<()> {
        let path = dir.join(file);
        let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(f);
        writeln!(w, "{header}").map_err(|e| Error::io(&path, e))?;
        for row in &rows {
            writeln!(w, "{}", line(row)).map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    };

    write(
        "lkf_count_vs_h.csv",
        "staggering,solver,h_km,lkf_count",
        &|r| format!("{},{},{},{}", r.staggering, r.solver, r.h_km, r.lkf_count),
    )?;
    write(
        "lkf_length_vs_h.csv",
        "staggering,solver,h_km,lkf_total_length_km",
        &|r| {
            format!(
                "{},{},{},{}",
                r.staggering, r.solver, r.h_km, r.lkf_total_length_km
            )
        },
    )?;
    write(
        "lkf_count_vs_dof.csv",
        "staggering,solver,velocity_dof,lkf_count",
        &|r| {
            format!(
                "{},{},{},{}",
                r.staggering, r.solver, r.velocity_dof, r.lkf_count
            )
        },
    )?;
    write(
        "lkf_length_vs_dof.csv",
        "staggering,solver,velocity_dof,lkf_total_length_km",
        &|r| {
            format!(
                "{},{},{},{}",
                r.staggering, r.solver, r.velocity_dof, r.lkf_total_length_km
            )
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::momentum::SolverConfig;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use tempfile::tempdir;

    #[test]
    fn field_dumps_round_trip_bit_exactly() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("field.bin");
        let mut rng = StdRng::seed_from_u64(5);
        let mut data: Vec<f64> = (0..1000).map(|_| rng.gen_range(-1e9..1e9)).collect();
        data.extend([0.0, -0.0, f64::MIN_POSITIVE, f64::MAX, f64::NAN]);
        write_field(&path, &data).unwrap();
        let back = read_field(&path).unwrap();
        assert_eq!(back.len(), data.len());
        for (a, b) in data.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits(), "bit pattern changed");
        }
    }

    #[test]
    fn truncated_field_dumps_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("broken.bin");
        fs::write(&path, [0u8; 12]).unwrap();
        assert!(matches!(
            read_field(&path),
            Err(Error::CorruptDump { .. })
        ));
    }

    fn tiny_config() -> BenchmarkConfig {
        let mut cfg = BenchmarkConfig::square(Staggering::B, 8.0);
        cfg.domain_km = 64.0;
        cfg.t_end_s = 600.0;
        cfg.dt_s = 120.0;
        cfg.output_every = 3;
        cfg.solver = SolverConfig::for_scheme(SolverScheme::Mevp);
        cfg
    }

    #[test]
    fn run_directories_hold_the_full_artifact_set() {
        let dir = tempdir().unwrap();
        let run_dir = dir.path().join("run");
        let cfg = tiny_config();
        let result = execute_run(&cfg, &run_dir).unwrap();
        assert_eq!(result.steps_completed, 5);

        for name in ["config.toml", "grid.json", "telemetry.csv", "run_meta.json"] {
            assert!(run_dir.join(name).exists(), "missing {name}");
        }
        let reader = RunReader::open(&run_dir).unwrap();
        assert_eq!(reader.config(), &cfg);
        assert_eq!(reader.snapshot_steps().unwrap(), vec![3, 5]);
        assert_eq!(reader.final_step().unwrap(), 5);

        let telemetry = reader.telemetry().unwrap();
        assert_eq!(telemetry.len(), 5);
        assert_eq!(telemetry[4].step, 4);

        let meta = reader.run_meta().unwrap();
        assert_eq!(meta.steps_completed, 5);
        assert!(meta.failure.is_none());
        assert_eq!(meta.code_version, CODE_VERSION);
    }

    #[test]
    fn snapshot_fields_round_trip_through_the_reader() {
        let dir = tempdir().unwrap();
        let run_dir = dir.path().join("run");
        let cfg = tiny_config();
        let result = execute_run(&cfg, &run_dir).unwrap();

        let reader = RunReader::open(&run_dir).unwrap();
        let step = reader.final_step().unwrap();
        let sidecar = reader.sidecar(step).unwrap();
        assert_eq!(sidecar.staggering, Staggering::B);
        assert_eq!(sidecar.config, cfg);
        assert_eq!(sidecar.nx, 8);
        assert_eq!(sidecar.fields["h"].units, "m");

        for (name, expect) in [
            ("h", &result.state.h),
            ("a", &result.state.a),
            ("u", &result.state.u),
            ("v", &result.state.v),
            ("shear", &result.final_shear),
        ] {
            let data = reader.field(step, name).unwrap();
            assert_eq!(&data, expect, "field {name} changed in flight");
        }
    }

    #[test]
    fn failed_runs_still_dump_the_offending_state() {
        let dir = tempdir().unwrap();
        let run_dir = dir.path().join("run");
        let mut cfg = tiny_config();
        // A CFL-violating time step aborts the first transport update.
        cfg.dt_s = 6000.0;
        cfg.t_end_s = 30000.0;
        cfg.momentum.c_ocean = 0.0;
        cfg.momentum.f_coriolis = 0.0;
        let err = execute_run(&cfg, &run_dir);
        assert!(err.is_err());

        let reader = RunReader::open(&run_dir).unwrap();
        let meta = reader.run_meta().unwrap();
        assert!(meta.failure.is_some(), "failure not recorded");
        let steps = reader.snapshot_steps().unwrap();
        assert_eq!(steps.len(), 1, "expected exactly the failure dump");
        assert!(reader.field(steps[0], "u").is_ok());
    }

    #[test]
    fn missing_config_key_errors_name_the_key() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        fs::write(&path, "domain_km = 512.0\n").unwrap();
        let err = load_config(&path).unwrap_err();
        assert!(err.is_config());
        assert!(
            err.to_string().contains("staggering"),
            "error should name the missing key: {err}"
        );
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        let mut cfg_text =
            toml::to_string(&tiny_config()).unwrap();
        cfg_text.push_str("\nwind_speed = 99.0\n");
        fs::write(&path, cfg_text).unwrap();
        let err = load_config(&path).unwrap_err();
        assert!(err.is_config());
        assert!(
            err.to_string().contains("wind_speed"),
            "error should name the offending key: {err}"
        );
    }

    #[test]
    fn config_echo_reloads_identically() {
        let dir = tempdir().unwrap();
        let run_dir = dir.path().join("run");
        let cfg = tiny_config();
        execute_run(&cfg, &run_dir).unwrap();
        let back = load_config(&run_dir.join("config.toml")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn segments_csv_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("segments.csv");
        let segments = vec![
            LkfSegment {
                pixels: vec![(3, 4), (4, 5), (5, 5)],
                length_km: 2.0 + 2.0 * std::f64::consts::SQRT_2,
                mean_intensity: 1.25e-7,
            },
            LkfSegment {
                pixels: vec![(100, 200)],
                length_km: 2.0,
                mean_intensity: 3.0,
            },
        ];
        write_segments_csv(&path, &segments).unwrap();
        assert_eq!(read_segments_csv(&path).unwrap(), segments);
    }

    #[test]
    fn stats_csv_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("stats.csv");
        let report = SensitivityReport {
            quantile: 0.85,
            count: 12,
            total_length_km: 512.5,
            quantile_minus: 0.8,
            count_minus: 14,
            quantile_plus: 0.9,
            count_plus: 9,
            count_sensitivity: 3,
        };
        write_stats_csv(&path, &report).unwrap();
        assert_eq!(read_stats_csv(&path).unwrap(), report);
    }

    fn row(staggering: Staggering, h_km: f64, solver: SolverScheme) -> SummaryRow {
        SummaryRow {
            staggering,
            h_km,
            solver,
            velocity_dof: 1000,
            tracer_dof: 500,
            lkf_count: 3,
            lkf_total_length_km: 123.456,
            wall_time_s: 1.5,
        }
    }

    #[test]
    fn summary_rows_stay_sorted_and_reruns_replace() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("summary.csv");
        append_summary(
            &path,
            &[
                row(Staggering::Cd2, 8.0, SolverScheme::Mevp),
                row(Staggering::B, 4.0, SolverScheme::Picard),
            ],
        )
        .unwrap();
        // Second batch: one new row, one replacement with a new wall time.
        let mut replacement = row(Staggering::B, 4.0, SolverScheme::Picard);
        replacement.wall_time_s = 9.0;
        let table = append_summary(
            &path,
            &[row(Staggering::B, 8.0, SolverScheme::Evp), replacement],
        )
        .unwrap();

        let keys: Vec<_> = table
            .iter()
            .map(|r| (r.staggering, r.h_km as u32, r.solver))
            .collect();
        assert_eq!(
            keys,
            vec![
                (Staggering::B, 4, SolverScheme::Picard),
                (Staggering::B, 8, SolverScheme::Evp),
                (Staggering::Cd2, 8, SolverScheme::Mevp),
            ],
            "table must sort by staggering, then h, then solver"
        );
        assert_eq!(table[0].wall_time_s, 9.0, "rerun row was not replaced");
        assert_eq!(read_summary(&path).unwrap(), table);
    }

    #[test]
    fn plot_files_cover_both_axes() {
        let dir = tempdir().unwrap();
        let rows = [
            row(Staggering::B, 8.0, SolverScheme::Mevp),
            row(Staggering::Cd1, 8.0, SolverScheme::Mevp),
        ];
        write_plot_data(dir.path(), &rows).unwrap();
        for name in [
            "lkf_count_vs_h.csv",
            "lkf_length_vs_h.csv",
            "lkf_count_vs_dof.csv",
            "lkf_length_vs_dof.csv",
        ] {
            let text = fs::read_to_string(dir.path().join(name)).unwrap();
            assert_eq!(text.lines().count(), 3, "{name} should have header + 2 rows");
            assert!(text.starts_with("staggering,solver,"), "{name} header");
        }
        let text = fs::read_to_string(dir.path().join("lkf_count_vs_dof.csv")).unwrap();
        assert!(text.contains("b,mevp,1000,3"), "row content: {text}");
    }
}
