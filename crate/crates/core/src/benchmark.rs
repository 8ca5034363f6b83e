//! Moving-cyclone experiment: initial state, analytic forcing fields, and
//! the two-day time loop coupling the momentum solver to tracer transport.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::Operators;
use crate::grid::{Grid, Staggering};
use crate::momentum::{Forcing, MomentumParams, SolverConfig, Stepper};
use crate::rheology::{RheologyParams, Stress};
use crate::transport;

/// Translating convergent vortex that stirs the ice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CycloneParams {
    /// Initial center (km).
    pub c0_km: (f64, f64),
    /// Center velocity (km/h); the default track runs up the main diagonal.
    pub c_vel_kmh: (f64, f64),
    /// Peak wind speed (m/s), attained on the circle |r| = r_scale.
    pub v_max: f64,
    /// Radial decay length (km).
    pub r_scale_km: f64,
    /// Inward spiral angle (degrees) added to the tangential direction.
    pub alpha_conv_deg: f64,
}

impl Default for CycloneParams {
    fn default() -> Self {
        CycloneParams {
            c0_km: (51.2, 51.2),
            // Reaches (460.8, 460.8) km after two days.
            c_vel_kmh: (409.6 / 48.0, 409.6 / 48.0),
            v_max: 15.0,
            r_scale_km: 100.0,
            alpha_conv_deg: 18.0,
        }
    }
}

impl CycloneParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_max >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "cyclone.v_max",
                value: self.v_max,
                reason: "peak wind must be nonnegative".into(),
            });
        }
        if !(self.r_scale_km > 0.0) {
            return Err(Error::InvalidParameter {
                name: "cyclone.r_scale_km",
                value: self.r_scale_km,
                reason: "decay length must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Steady rotating ocean current.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OceanParams {
    /// Peak current speed (m/s), attained on the domain boundary.
    pub v_max: f64,
}

impl Default for OceanParams {
    fn default() -> Self {
        OceanParams { v_max: 0.01 }
    }
}

/// Everything needed to reproduce one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    /// Velocity staggering; no default on purpose, every run must choose.
    pub staggering: Staggering,
    /// Square domain edge (km).
    #[serde(default = "default_domain_km")]
    pub domain_km: f64,
    /// Cell size (km) for square-cell runs.
    #[serde(default = "default_h_km")]
    pub h_km: f64,
    /// Explicit cell counts, overriding `h_km` (rectangular-cell runs).
    #[serde(default)]
    pub nx: Option<usize>,
    #[serde(default)]
    pub ny: Option<usize>,
    /// Total simulated time (s).
    #[serde(default = "default_t_end")]
    pub t_end_s: f64,
    /// Time step (s).
    #[serde(default = "default_dt")]
    pub dt_s: f64,
    /// Snapshot cadence in steps; 0 keeps only the final snapshot.
    #[serde(default = "default_output_every")]
    pub output_every: u32,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub rheology: RheologyParams,
    #[serde(default)]
    pub momentum: MomentumParams,
    #[serde(default)]
    pub cyclone: CycloneParams,
    #[serde(default)]
    pub ocean: OceanParams,
}

fn default_domain_km() -> f64 {
    512.0
}
fn default_h_km() -> f64 {
    8.0
}
fn default_t_end() -> f64 {
    2.0 * 86400.0
}
fn default_dt() -> f64 {
    120.0
}
fn default_output_every() -> u32 {
    120
}

impl BenchmarkConfig {
    /// Square-cell config at cell size `h_km` with defaults elsewhere.
    pub fn square(staggering: Staggering, h_km: f64) -> Self {
        BenchmarkConfig {
            staggering,
            domain_km: default_domain_km(),
            h_km,
            nx: None,
            ny: None,
            t_end_s: default_t_end(),
            dt_s: default_dt(),
            output_every: default_output_every(),
            solver: SolverConfig::default(),
            rheology: RheologyParams::default(),
            momentum: MomentumParams::default(),
            cyclone: CycloneParams::default(),
            ocean: OceanParams::default(),
        }
    }

    /// Number of momentum/transport steps in the run.
    pub fn n_steps(&self) -> usize {
        (self.t_end_s / self.dt_s).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_s > 0.0) {
            return Err(Error::InvalidParameter {
                name: "dt_s",
                value: self.dt_s,
                reason: "time step must be positive".into(),
            });
        }
        let steps = self.t_end_s / self.dt_s;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::InvalidParameter {
                name: "t_end_s",
                value: self.t_end_s,
                reason: format!("not an integer number of {} s steps", self.dt_s),
            });
        }
        self.solver.validate()?;
        self.cyclone.validate()?;
        self.build_grid().map(|_| ())
    }

    /// Construct the grid this config describes.
    pub fn build_grid(&self) -> Result<Grid> {
        let l = self.domain_km * 1e3;
        match (self.nx, self.ny) {
            (Some(nx), Some(ny)) => {
                if nx == 0 || ny == 0 {
                    return Err(Error::GridTooSmall {
                        op: "benchmark",
                        nx,
                        ny,
                    });
                }
                Grid::rect(l, l, l / nx as f64, l / ny as f64)
            }
            (None, None) => Grid::square(l, self.h_km * 1e3),
            _ => Err(Error::InvalidParameter {
                name: "nx/ny",
                value: f64::NAN,
                reason: "give both cell counts or neither".into(),
            }),
        }
    }
}

/// Prognostic fields of one run: cell tracers and point velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    /// Mean ice thickness per cell (m).
    pub h: Vec<f64>,
    /// Ice concentration per cell.
    pub a: Vec<f64>,
    /// Velocity components per staggering point (m/s).
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// Internal stress per strain element (Pa·m).
    pub sigma: Vec<Stress>,
}

/// Thin ice layer with mild incommensurate thickness waves; at rest.
pub fn initial_state(grid: &Grid, ops: &Operators) -> State {
    let n_cells = grid.n_cells();
    let mut h = vec![0.0; n_cells];
    for (c, hc) in h.iter_mut().enumerate() {
        let (x, y) = grid.cell_center(c);
        *hc = 0.3 + 0.005 * ((6e-5 * x).sin() + (3e-5 * y).sin());
    }
    State {
        h,
        a: vec![1.0; n_cells],
        u: vec![0.0; ops.n_points()],
        v: vec![0.0; ops.n_points()],
        sigma: vec![Stress::ZERO; ops.elements.len()],
    }
}

/// Wind at point (x, y) meters and time t seconds.
///
/// The vortex center moves along its track; the speed profile
/// w(r) = (r/r_s)·exp(1 − r/r_s) peaks at 1 on r = r_s, and the direction is
/// the outward radial rotated by 90° plus the convergence angle, giving an
/// anticlockwise inflow spiral.
pub fn wind_field(x: f64, y: f64, t: f64, p: &CycloneParams) -> (f64, f64) {
    let cx = p.c0_km.0 * 1e3 + p.c_vel_kmh.0 * (1e3 / 3600.0) * t;
    let cy = p.c0_km.1 * 1e3 + p.c_vel_kmh.1 * (1e3 / 3600.0) * t;
    let rx = x - cx;
    let ry = y - cy;
    let r = rx.hypot(ry);
    if r == 0.0 {
        return (0.0, 0.0);
    }
    let rs = p.r_scale_km * 1e3;
    let w = (r / rs) * (1.0 - r / rs).exp();
    let theta = (90.0 + p.alpha_conv_deg).to_radians();
    let (sin, cos) = theta.sin_cos();
    let scale = p.v_max * w / r;
    (scale * (cos * rx - sin * ry), scale * (sin * rx + cos * ry))
}

/// Steady circular current, zero at the center, `v_max` on the walls.
pub fn ocean_field(x: f64, y: f64, l: f64, p: &OceanParams) -> (f64, f64) {
    (
        p.v_max * (2.0 * y - l) / l,
        p.v_max * (l - 2.0 * x) / l,
    )
}

/// Fill a forcing buffer with the analytic fields sampled at time `t`.
pub fn sample_forcing(
    ops: &Operators,
    cfg: &BenchmarkConfig,
    t: f64,
    forcing: &mut Forcing,
) {
    let l = cfg.domain_km * 1e3;
    for (p, &(x, y)) in ops.points.iter().enumerate() {
        let (wu, wv) = wind_field(x, y, t, &cfg.cyclone);
        forcing.air_u[p] = wu;
        forcing.air_v[p] = wv;
        let (ou, ov) = ocean_field(x, y, l, &cfg.ocean);
        forcing.ocean_u[p] = ou;
        forcing.ocean_v[p] = ov;
    }
}

/// Shear deformation per strain element (1/s).
pub fn shear_field(ops: &Operators, u: &[f64], v: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend(ops.elements.iter().map(|el| el.strain(u, v).shear()));
}

/// Per-step diagnostics row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepTelemetry {
    pub step: usize,
    pub time_s: f64,
    pub iterations: u32,
    pub linear_iterations: u32,
    pub residual: f64,
    pub converged: bool,
    pub max_speed: f64,
    pub max_cfl: f64,
    pub total_volume: f64,
    /// Smallest cell thickness after the transport update (negative values
    /// would flag a conservation bug).
    pub h_min: f64,
    /// Concentration extremes after the transport update.
    pub a_min: f64,
    pub a_max: f64,
}

/// Snapshot handed to the output callback.
pub struct Snapshot<'a> {
    pub step: usize,
    pub time_s: f64,
    pub state: &'a State,
    /// Shear deformation per strain element at the snapshot time.
    pub shear: &'a [f64],
}

/// What a completed run returns to the caller.
#[derive(Debug)]
pub struct RunResult {
    pub steps_completed: usize,
    pub wall_seconds: f64,
    pub volume_initial: f64,
    pub volume_final: f64,
    pub max_speed: f64,
    pub telemetry: Vec<StepTelemetry>,
    pub state: State,
    /// Shear deformation per element at the final time.
    pub final_shear: Vec<f64>,
}

fn total_volume(grid: &Grid, h: &[f64]) -> f64 {
    h.iter().sum::<f64>() * grid.cell_area()
}

/// Run the full experiment, invoking `on_snapshot` on the output schedule
/// (and always at the final step).
pub fn run_benchmark_with<F>(
    cfg: &BenchmarkConfig,
    mut on_snapshot: F,
) -> Result<RunResult>
where
    F: FnMut(&Snapshot) -> Result<()>,
{
    cfg.validate()?;
    let grid = cfg.build_grid()?;
    let ops = Operators::build(&grid, cfg.staggering)?;
    let mut stepper = Stepper::new(&ops, cfg.rheology, cfg.momentum, cfg.solver.clone())?;
    let mut state = initial_state(&grid, &ops);
    let mut forcing = Forcing::zero(ops.n_points());
    let mut face_speeds = Vec::new();
    let mut shear = Vec::new();

    let n_steps = cfg.n_steps();
    let volume_initial = total_volume(&grid, &state.h);
    let mut telemetry = Vec::with_capacity(n_steps);
    let mut run_max_speed = 0.0f64;
    let start = std::time::Instant::now();

    for step in 0..n_steps {
        let t = step as f64 * cfg.dt_s;
        sample_forcing(&ops, cfg, t, &mut forcing);

        // On failure, hand the offending state to the snapshot sink (best
        // effort) so run directories keep a dump of what blew up.
        macro_rules! abort_with_dump {
            ($err:expr) => {{
                shear_field(&ops, &state.u, &state.v, &mut shear);
                let _ = on_snapshot(&Snapshot {
                    step: step + 1,
                    time_s: t + cfg.dt_s,
                    state: &state,
                    shear: &shear,
                });
                return Err($err);
            }};
        }

        let stats = match stepper.step(
            cfg.dt_s,
            &forcing,
            &state.h,
            &state.a,
            &mut state.u,
            &mut state.v,
            &mut state.sigma,
            step,
        ) {
            Ok(stats) => stats,
            Err(err) => abort_with_dump!(err),
        };

        let mut max_speed = 0.0f64;
        for p in 0..ops.n_points() {
            max_speed = max_speed.max(state.u[p].hypot(state.v[p]));
        }
        run_max_speed = run_max_speed.max(max_speed);
        let mut max_forcing = cfg.ocean.v_max;
        for p in 0..ops.n_points() {
            max_forcing = max_forcing.max(forcing.air_u[p].hypot(forcing.air_v[p]));
        }
        // Sanity envelope: drag balance keeps ice well below the wind speed,
        // so an excursion past it means the solve has gone unstable.
        let envelope = 2.0 * max_forcing + 1.0;
        if max_speed > envelope {
            abort_with_dump!(Error::SolverBlowUp {
                step,
                detail: format!(
                    "max ice speed {max_speed:.3} m/s exceeds the sanity envelope {envelope:.3} m/s"
                ),
            });
        }

        transport::face_normal_speeds(&grid, cfg.staggering, &state.u, &state.v, &mut face_speeds);
        let max_cfl = match transport::upwind_step(&grid, &face_speeds, cfg.dt_s, &mut state.h, &mut state.a)
        {
            Ok(cfl) => cfl,
            Err(err) => abort_with_dump!(err),
        };

        let h_min = state.h.iter().copied().fold(f64::INFINITY, f64::min);
        let (a_min, a_max) = state
            .a
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &a| {
                (lo.min(a), hi.max(a))
            });
        telemetry.push(StepTelemetry {
            step,
            time_s: t + cfg.dt_s,
            iterations: stats.iterations,
            linear_iterations: stats.linear_iterations,
            residual: stats.residual,
            converged: stats.converged,
            max_speed,
            max_cfl,
            total_volume: total_volume(&grid, &state.h),
            h_min,
            a_min,
            a_max,
        });

        let last = step + 1 == n_steps;
        let due = cfg.output_every > 0 && (step + 1) % cfg.output_every as usize == 0;
        if last || due {
            shear_field(&ops, &state.u, &state.v, &mut shear);
            on_snapshot(&Snapshot {
                step: step + 1,
                time_s: t + cfg.dt_s,
                state: &state,
                shear: &shear,
            })?;
        }
    }

    let volume_final = total_volume(&grid, &state.h);
    shear_field(&ops, &state.u, &state.v, &mut shear);
    Ok(RunResult {
        steps_completed: n_steps,
        wall_seconds: start.elapsed().as_secs_f64(),
        volume_initial,
        volume_final,
        max_speed: run_max_speed,
        telemetry,
        state,
        final_shear: shear,
    })
}

/// Run the full experiment without snapshot output.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<RunResult> {
    run_benchmark_with(cfg, |_| Ok(()))
}
