//! Momentum solvers: implicit viscous-plastic (Picard), EVP subcycling with
//! a backward-Euler anchor, and the relaxed mEVP iteration.
//!
//! All three advance the same backward-Euler step
//!
//!   m (v' - v) / dt + m f e_z x v' = div sigma(v') + A tau(v') + m g_tilt
//!
//! on lumped masses, with Coriolis and ocean drag handled semi-implicitly
//! through an exact per-point 2x2 solve, and wall velocities pinned to zero.
//! The subcycling schemes share their fixed point with the Picard solver, so
//! with enough iterations all three land on the same velocity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::Operators;
use crate::rheology::{
    self, evaluate_with_strength, ice_strength, RheologyEval, RheologyParams, Stress,
};

/// Physical constants of the momentum balance (drag laws, Coriolis, floors).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentumParams {
    /// Air density (kg/m^3).
    pub rho_air: f64,
    /// Air drag coefficient.
    pub c_air: f64,
    /// Ocean density (kg/m^3).
    pub rho_ocean: f64,
    /// Ocean drag coefficient.
    pub c_ocean: f64,
    /// Coriolis parameter (1/s).
    pub f_coriolis: f64,
    /// Thickness floor (m) entering the lumped mass, keeping the momentum
    /// update well-defined over nearly ice-free cells.
    pub min_thickness: f64,
}

impl Default for MomentumParams {
    fn default() -> Self {
        Self {
            rho_air: 1.3,
            c_air: 1.2e-3,
            rho_ocean: 1026.0,
            c_ocean: 5.5e-3,
            f_coriolis: 1.46e-4,
            min_thickness: 1e-4,
        }
    }
}

/// Suite of momentum solvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverScheme {
    /// Implicit viscous-plastic step via Picard iteration on the lagged
    /// viscosities, each iterate solved by preconditioned BiCGStab.
    Picard,
    /// Elastic-viscous-plastic pseudo-time subcycling, anchored to the
    /// backward-Euler step so that the subcycle limit is the implicit
    /// solution.
    Evp,
    /// Modified EVP: a fixed-count relaxed iteration whose fixed point is
    /// the implicit step.
    Mevp,
}

impl SolverScheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverScheme::Picard => "picard",
            SolverScheme::Evp => "evp",
            SolverScheme::Mevp => "mevp",
        }
    }
}

impl std::fmt::Display for SolverScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SolverScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "picard" => Ok(SolverScheme::Picard),
            "evp" => Ok(SolverScheme::Evp),
            "mevp" => Ok(SolverScheme::Mevp),
            other => Err(Error::InvalidParameter {
                name: "scheme",
                value: 0.0,
                reason: format!("unknown solver '{other}' (expected picard, evp, or mevp)"),
            }),
        }
    }
}

/// Solver selection plus iteration controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "SolverConfigFile")]
pub struct SolverConfig {
    pub scheme: SolverScheme,
    /// Subcycles (EVP) or iterations (mEVP).
    pub n_sub: usize,
    /// EVP elastic relaxation time (s).
    pub t_evp: f64,
    /// EVP pseudo-time step (s); defaults to dt / n_sub.
    pub dt_sub: Option<f64>,
    /// mEVP stress relaxation factor.
    pub alpha: f64,
    /// mEVP velocity relaxation factor.
    pub beta: f64,
    /// Strength of the edge-jump penalty on the nonconforming staggering.
    pub gamma_stab: f64,
    /// Picard stop: relative nonlinear residual.
    pub picard_tol: f64,
    /// Picard stop: iteration cap.
    pub picard_max: usize,
    /// Inner linear-solve relative tolerance.
    pub linear_tol: f64,
    /// Inner linear-solve iteration cap.
    pub linear_max: usize,
}

impl SolverConfig {
    /// Standard controls for a scheme (EVP 500 subcycles, mEVP 100
    /// iterations with alpha = beta = 500, Picard to 1e-6).
    pub fn for_scheme(scheme: SolverScheme) -> Self {
        SolverConfig {
            scheme,
            n_sub: match scheme {
                SolverScheme::Evp => 500,
                _ => 100,
            },
            t_evp: 1500.0,
            dt_sub: None,
            alpha: 500.0,
            beta: 500.0,
            gamma_stab: 1.0,
            picard_tol: 1e-6,
            picard_max: 500,
            linear_tol: 1e-9,
            linear_max: 2000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("n_sub", self.n_sub as f64, self.n_sub >= 1),
            ("t_evp", self.t_evp, self.t_evp > 0.0),
            ("alpha", self.alpha, self.alpha >= 1.0),
            ("beta", self.beta, self.beta >= 1.0),
            (
                "picard_tol",
                self.picard_tol,
                self.picard_tol > 0.0 && self.picard_tol < 1.0,
            ),
            (
                "linear_tol",
                self.linear_tol,
                self.linear_tol > 0.0 && self.linear_tol < 1.0,
            ),
        ];
        for (name, value, ok) in checks {
            if !ok {
                return Err(Error::InvalidParameter {
                    name,
                    value,
                    reason: "out of range".into(),
                });
            }
        }
        Ok(())
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::for_scheme(SolverScheme::Mevp)
    }
}

/// File form of [`SolverConfig`]: only the scheme is required, everything
/// else left out takes that scheme's standard value.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SolverConfigFile {
    scheme: SolverScheme,
    n_sub: Option<usize>,
    t_evp: Option<f64>,
    dt_sub: Option<f64>,
    alpha: Option<f64>,
    beta: Option<f64>,
    gamma_stab: Option<f64>,
    picard_tol: Option<f64>,
    picard_max: Option<usize>,
    linear_tol: Option<f64>,
    linear_max: Option<usize>,
}

impl From<SolverConfigFile> for SolverConfig {
    fn from(file: SolverConfigFile) -> Self {
        let base = SolverConfig::for_scheme(file.scheme);
        SolverConfig {
            scheme: file.scheme,
            n_sub: file.n_sub.unwrap_or(base.n_sub),
            t_evp: file.t_evp.unwrap_or(base.t_evp),
            dt_sub: file.dt_sub.or(base.dt_sub),
            alpha: file.alpha.unwrap_or(base.alpha),
            beta: file.beta.unwrap_or(base.beta),
            gamma_stab: file.gamma_stab.unwrap_or(base.gamma_stab),
            picard_tol: file.picard_tol.unwrap_or(base.picard_tol),
            picard_max: file.picard_max.unwrap_or(base.picard_max),
            linear_tol: file.linear_tol.unwrap_or(base.linear_tol),
            linear_max: file.linear_max.unwrap_or(base.linear_max),
        }
    }
}

/// External forcing sampled at the velocity points.
#[derive(Debug, Clone)]
pub struct Forcing {
    pub air_u: Vec<f64>,
    pub air_v: Vec<f64>,
    pub ocean_u: Vec<f64>,
    pub ocean_v: Vec<f64>,
    /// Optional surface-tilt acceleration (m/s^2).
    pub tilt: Option<(Vec<f64>, Vec<f64>)>,
}

impl Forcing {
    pub fn zero(n: usize) -> Self {
        Forcing {
            air_u: vec![0.0; n],
            air_v: vec![0.0; n],
            ocean_u: vec![0.0; n],
            ocean_v: vec![0.0; n],
            tilt: None,
        }
    }
}

/// Quadratic drag stress (N/m^2) for given ice, wind, and ocean velocities.
pub fn surface_stress(
    v: (f64, f64),
    wind: (f64, f64),
    ocean: (f64, f64),
    p: &MomentumParams,
) -> (f64, f64) {
    let wind_speed = (wind.0 * wind.0 + wind.1 * wind.1).sqrt();
    let (du, dv) = (ocean.0 - v.0, ocean.1 - v.1);
    let rel_speed = (du * du + dv * dv).sqrt();
    (
        p.rho_air * p.c_air * wind_speed * wind.0 + p.rho_ocean * p.c_ocean * rel_speed * du,
        p.rho_air * p.c_air * wind_speed * wind.1 + p.rho_ocean * p.c_ocean * rel_speed * dv,
    )
}

/// Outcome of one momentum step.
#[derive(Debug, Clone)]
pub struct SolverStats {
    pub scheme: SolverScheme,
    /// Picard iterations or subcycles performed.
    pub iterations: u32,
    /// Total inner linear-solver iterations (Picard only).
    pub linear_iterations: u32,
    /// Final relative nonlinear residual (Picard) or last relative velocity
    /// increment (subcycling schemes).
    pub residual: f64,
    /// False when the Picard loop hit its cap above tolerance.
    pub converged: bool,
    /// Per-iteration relative residuals (Picard only).
    pub residual_history: Vec<f64>,
}

/// Relative L2 distance between two velocity fields.
pub fn rel_l2(u1: &[f64], v1: &[f64], u2: &[f64], v2: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..u1.len() {
        num += (u1[i] - u2[i]).powi(2) + (v1[i] - v2[i]).powi(2);
        den += u2[i] * u2[i] + v2[i] * v2[i];
    }
    (num / den.max(1e-300)).sqrt()
}

/// One momentum step-solver bound to a discretization, owning its scratch
/// space so repeated steps allocate nothing.
pub struct Stepper<'a> {
    pub ops: &'a Operators,
    pub rheo: RheologyParams,
    pub mom: MomentumParams,
    pub cfg: SolverConfig,
    ws: Workspace,
}

struct Workspace {
    /// Lumped mass per point (kg).
    mass: Vec<f64>,
    /// Lumped concentration integral per point (m^2), scaling the drags.
    a_lumped: Vec<f64>,
    /// Air-drag force coefficient per point (so force = ca * wind).
    ca: Vec<f64>,
    /// Semi-implicit ocean-drag coefficient per point.
    co: Vec<f64>,
    /// Ice strength per element, frozen over the step.
    p0: Vec<f64>,
    /// Bulk viscosity per element (jump penalty weighting).
    zeta: Vec<f64>,
    /// Constitutive state per element, frozen over each Picard iterate.
    evals: Vec<RheologyEval>,
    /// Velocity at the beginning of the step.
    un: Vec<f64>,
    vn: Vec<f64>,
    /// Force accumulators.
    fu: Vec<f64>,
    fv: Vec<f64>,
    /// Per-component operator diagonals (preconditioner).
    du: Vec<f64>,
    dv: Vec<f64>,
    /// Linear-solver vectors (2n packed as component pairs).
    rhs: Vec2,
    x: Vec2,
    r: Vec2,
    r0: Vec2,
    p: Vec2,
    vv: Vec2,
    s: Vec2,
    t: Vec2,
    y: Vec2,
    z: Vec2,
    /// Operator output buffer (never aliased with solver state).
    aw: Vec2,
}

/// A two-component point field with the handful of BLAS-1 operations the
/// linear solver needs.
#[derive(Debug, Clone, Default)]
struct Vec2 {
    u: Vec<f64>,
    v: Vec<f64>,
}

impl Vec2 {
    fn zeros(n: usize) -> Self {
        Vec2 {
            u: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
    fn fill(&mut self, val: f64) {
        self.u.iter_mut().for_each(|x| *x = val);
        self.v.iter_mut().for_each(|x| *x = val);
    }
    fn copy_from(&mut self, other: &Vec2) {
        self.u.copy_from_slice(&other.u);
        self.v.copy_from_slice(&other.v);
    }
    fn dot(&self, other: &Vec2) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.u.len() {
            acc += self.u[i] * other.u[i] + self.v[i] * other.v[i];
        }
        acc
    }
    fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

impl<'a> Stepper<'a> {
    pub fn new(
        ops: &'a Operators,
        rheo: RheologyParams,
        mom: MomentumParams,
        cfg: SolverConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let n = ops.n_points();
        let ne = ops.elements.len();
        let ws = Workspace {
            mass: vec![0.0; n],
            a_lumped: vec![0.0; n],
            ca: vec![0.0; n],
            co: vec![0.0; n],
            p0: vec![0.0; ne],
            zeta: vec![0.0; ne],
            evals: vec![
                RheologyEval {
                    p0: 0.0,
                    delta: 0.0,
                    zeta: 0.0,
                    eta: 0.0,
                    p: 0.0
                };
                ne
            ],
            un: vec![0.0; n],
            vn: vec![0.0; n],
            fu: vec![0.0; n],
            fv: vec![0.0; n],
            du: vec![0.0; n],
            dv: vec![0.0; n],
            rhs: Vec2::zeros(n),
            x: Vec2::zeros(n),
            r: Vec2::zeros(n),
            r0: Vec2::zeros(n),
            p: Vec2::zeros(n),
            vv: Vec2::zeros(n),
            s: Vec2::zeros(n),
            t: Vec2::zeros(n),
            y: Vec2::zeros(n),
            z: Vec2::zeros(n),
            aw: Vec2::zeros(n),
        };
        Ok(Stepper {
            ops,
            rheo,
            mom,
            cfg,
            ws,
        })
    }

    /// Advance (u, v, sigma) by one step of length `dt` under frozen tracers
    /// `h`, `a` (cell fields).  `step_index` labels diagnostics.  The entry
    /// velocity doubles as the previous time level and the iteration start.
    pub fn step(
        &mut self,
        dt: f64,
        forcing: &Forcing,
        h: &[f64],
        a: &[f64],
        u: &mut [f64],
        v: &mut [f64],
        sigma: &mut [Stress],
        step_index: usize,
    ) -> Result<SolverStats> {
        self.step_from(dt, forcing, h, a, None, u, v, sigma, step_index)
    }

    /// Like [`Stepper::step`], but with the previous time level `anchor`
    /// decoupled from the iteration start (u, v).  Passing `None` anchors at
    /// the entry state.  This separation lets callers probe the solvers'
    /// fixed points directly.
    #[allow(clippy::too_many_arguments)]
    pub fn step_from(
        &mut self,
        dt: f64,
        forcing: &Forcing,
        h: &[f64],
        a: &[f64],
        anchor: Option<(&[f64], &[f64])>,
        u: &mut [f64],
        v: &mut [f64],
        sigma: &mut [Stress],
        step_index: usize,
    ) -> Result<SolverStats> {
        let n = self.ops.n_points();
        if u.len() != n {
            return Err(Error::FieldLength {
                name: "u",
                got: u.len(),
                expected: n,
            });
        }
        let (anchor_u, anchor_v) = anchor.unwrap_or((u, v));
        self.prepare(forcing, h, a, anchor_u, anchor_v);
        let stats = match self.cfg.scheme {
            SolverScheme::Picard => self.picard(dt, forcing, u, v, sigma, step_index),
            SolverScheme::Evp => self.subcycle(dt, forcing, u, v, sigma, step_index, false),
            SolverScheme::Mevp => self.subcycle(dt, forcing, u, v, sigma, step_index, true),
        }?;
        self.ops.zero_boundary(u, v);
        Ok(stats)
    }

    /// Per-step invariants: lumped masses, drag coefficients, ice strength.
    fn prepare(&mut self, forcing: &Forcing, h: &[f64], a: &[f64], u: &[f64], v: &[f64]) {
        let ws = &mut self.ws;
        ws.un.copy_from_slice(u);
        ws.vn.copy_from_slice(v);

        ws.mass.iter_mut().for_each(|x| *x = 0.0);
        ws.a_lumped.iter_mut().for_each(|x| *x = 0.0);
        for el in &self.ops.elements {
            let (mut h_el, mut a_el) = (0.0, 0.0);
            for k in 0..el.n_cells as usize {
                let c = el.cells[k] as usize;
                h_el += el.cell_w[k] * h[c];
                a_el += el.cell_w[k] * a[c];
            }
            let m_el = self.rheo.rho_ice * h_el.max(self.mom.min_thickness);
            for q in 0..el.n_nodes as usize {
                let p = el.nodes[q] as usize;
                ws.mass[p] += m_el * el.phi_int[q];
                ws.a_lumped[p] += a_el.clamp(0.0, 1.0) * el.phi_int[q];
            }
        }
        // Round-off (and corner extrapolation) can nick these floors; the
        // drag scale must stay nonnegative and mass strictly positive.
        let mass_floor = self.rheo.rho_ice * self.mom.min_thickness;
        for p in 0..self.ops.n_points() {
            ws.mass[p] = ws.mass[p].max(mass_floor * self.ops.lumped_area[p].max(0.0));
            ws.a_lumped[p] = ws.a_lumped[p].max(0.0);
            let wind = (forcing.air_u[p], forcing.air_v[p]);
            let speed = (wind.0 * wind.0 + wind.1 * wind.1).sqrt();
            ws.ca[p] = self.mom.rho_air * self.mom.c_air * speed * ws.a_lumped[p];
        }

        for (e, el) in self.ops.elements.iter().enumerate() {
            let (mut h_el, mut a_el) = (0.0, 0.0);
            for k in 0..el.n_cells as usize {
                let c = el.cells[k] as usize;
                h_el += el.cell_w[k] * h[c];
                a_el += el.cell_w[k] * a[c];
            }
            ws.p0[e] = ice_strength(&self.rheo, h_el.max(0.0), a_el.clamp(0.0, 1.0));
        }
    }

    /// Ocean-drag coefficients lagged at the given velocity.
    fn update_ocean_drag(&mut self, forcing: &Forcing, u: &[f64], v: &[f64]) {
        for p in 0..self.ops.n_points() {
            let du = forcing.ocean_u[p] - u[p];
            let dv = forcing.ocean_v[p] - v[p];
            let speed = (du * du + dv * dv).sqrt();
            self.ws.co[p] =
                self.mom.rho_ocean * self.mom.c_ocean * speed * self.ws.a_lumped[p];
        }
    }

    /// Forcing terms independent of the stress state: inertia anchor, air
    /// drag, semi-implicit ocean pull, optional tilt.  `pseudo` adds the
    /// subcycling anchor coefficient (mass / dt_sub against v_prev).
    #[inline]
    fn point_rhs(
        &self,
        dt: f64,
        forcing: &Forcing,
        p: usize,
        pseudo: f64,
        up: f64,
        vp: f64,
    ) -> (f64, f64) {
        let ws = &self.ws;
        let m = ws.mass[p];
        let mut rx = m / dt * ws.un[p] + pseudo * up + ws.ca[p] * forcing.air_u[p]
            + ws.co[p] * forcing.ocean_u[p];
        let mut ry = m / dt * ws.vn[p] + pseudo * vp + ws.ca[p] * forcing.air_v[p]
            + ws.co[p] * forcing.ocean_v[p];
        if let Some((tx, ty)) = &forcing.tilt {
            rx += m * tx[p];
            ry += m * ty[p];
        }
        (rx, ry)
    }

    /// Exact solve of a v' + m f e_z x v' = r per point.
    #[inline]
    fn coriolis_solve(a: f64, mf: f64, rx: f64, ry: f64) -> (f64, f64) {
        let det = a * a + mf * mf;
        ((a * rx + mf * ry) / det, (a * ry - mf * rx) / det)
    }

    /// EVP / mEVP subcycling loop.
    fn subcycle(
        &mut self,
        dt: f64,
        forcing: &Forcing,
        u: &mut [f64],
        v: &mut [f64],
        sigma: &mut [Stress],
        step_index: usize,
        mevp: bool,
    ) -> Result<SolverStats> {
        let n = self.ops.n_points();
        let dt_sub = self.cfg.dt_sub.unwrap_or(dt / self.cfg.n_sub as f64);
        // Pseudo-inertia: mEVP relaxes with beta m / dt; EVP anchors each
        // subcycle with m / dt_sub.
        let pseudo_over_m = if mevp {
            self.cfg.beta / dt
        } else {
            1.0 / dt_sub
        };
        let mut last_increment = f64::NAN;
        for it in 0..self.cfg.n_sub {
            self.update_ocean_drag(forcing, u, v);
            // Element pass: strain, constitutive update, force scatter.
            self.ws.fu.iter_mut().for_each(|x| *x = 0.0);
            self.ws.fv.iter_mut().for_each(|x| *x = 0.0);
            for (e, el) in self.ops.elements.iter().enumerate() {
                let eps = el.strain(u, v);
                let eval = evaluate_with_strength(&self.rheo, &eps, self.ws.p0[e]);
                let s_new = if mevp {
                    rheology::mevp_stress_update(&eval, &sigma[e], &eps, self.cfg.alpha)
                } else {
                    rheology::evp_stress_update(
                        &self.rheo,
                        &eval,
                        &sigma[e],
                        &eps,
                        self.cfg.t_evp,
                        dt_sub,
                    )
                };
                sigma[e] = s_new;
                self.ws.zeta[e] = eval.zeta;
                let w = el.area;
                for q in 0..el.n_nodes as usize {
                    let pt = el.nodes[q] as usize;
                    self.ws.fu[pt] -= w * (s_new.s11 * el.gx[q] + s_new.s12 * el.gy[q]);
                    self.ws.fv[pt] -= w * (s_new.s12 * el.gx[q] + s_new.s22 * el.gy[q]);
                }
            }
            if self.cfg.gamma_stab != 0.0 && !self.ops.jumps.is_empty() {
                let (fu, fv) = (&mut self.ws.fu, &mut self.ws.fv);
                add_jump_force(
                    self.ops,
                    &self.ws.zeta,
                    self.cfg.gamma_stab,
                    u,
                    v,
                    fu,
                    fv,
                );
            }
            // Point pass: semi-implicit update.
            let mut num = 0.0;
            let mut den = 0.0;
            for p in 0..n {
                if self.ops.boundary[p] {
                    u[p] = 0.0;
                    v[p] = 0.0;
                    continue;
                }
                let m = self.ws.mass[p];
                let pseudo = pseudo_over_m * m;
                let (mut rx, mut ry) = self.point_rhs(dt, forcing, p, pseudo, u[p], v[p]);
                rx += self.ws.fu[p];
                ry += self.ws.fv[p];
                let a_diag = m / dt + pseudo + self.ws.co[p];
                let (nu, nv) =
                    Self::coriolis_solve(a_diag, m * self.mom.f_coriolis, rx, ry);
                num += (nu - u[p]).powi(2) + (nv - v[p]).powi(2);
                den += nu * nu + nv * nv;
                u[p] = nu;
                v[p] = nv;
            }
            last_increment = (num / den.max(1e-300)).sqrt();
            if !last_increment.is_finite() {
                return Err(Error::SolverBlowUp {
                    step: step_index,
                    detail: format!(
                        "{} diverged at subcycle {it}: non-finite velocity increment",
                        self.cfg.scheme
                    ),
                });
            }
        }
        Ok(SolverStats {
            scheme: self.cfg.scheme,
            iterations: self.cfg.n_sub as u32,
            linear_iterations: 0,
            residual: last_increment,
            converged: true,
            residual_history: Vec::new(),
        })
    }

    /// Implicit step by Picard iteration on lagged viscosities and drag.
    fn picard(
        &mut self,
        dt: f64,
        forcing: &Forcing,
        u: &mut [f64],
        v: &mut [f64],
        sigma: &mut [Stress],
        step_index: usize,
    ) -> Result<SolverStats> {
        let n = self.ops.n_points();
        let mut history = Vec::with_capacity(32);
        let mut linear_total = 0u32;
        let mut converged = false;
        let mut rel_res = f64::NAN;

        for _it in 0..self.cfg.picard_max {
            self.update_ocean_drag(forcing, u, v);
            // Constitutive state at the current iterate.
            for (e, el) in self.ops.elements.iter().enumerate() {
                let eps = el.strain(u, v);
                self.ws.evals[e] = evaluate_with_strength(&self.rheo, &eps, self.ws.p0[e]);
                self.ws.zeta[e] = self.ws.evals[e].zeta;
            }
            // Right-hand side: anchor + drags + the lagged replacement
            // pressure moved over as an isotropic stress.
            self.ws.fu.iter_mut().for_each(|x| *x = 0.0);
            self.ws.fv.iter_mut().for_each(|x| *x = 0.0);
            for (e, el) in self.ops.elements.iter().enumerate() {
                let iso = -0.5 * self.ws.evals[e].p;
                let w = el.area;
                for q in 0..el.n_nodes as usize {
                    let pt = el.nodes[q] as usize;
                    self.ws.fu[pt] -= w * iso * el.gx[q];
                    self.ws.fv[pt] -= w * iso * el.gy[q];
                }
            }
            for p in 0..n {
                let (rx, ry) = self.point_rhs(dt, forcing, p, 0.0, 0.0, 0.0);
                self.ws.rhs.u[p] = rx + self.ws.fu[p];
                self.ws.rhs.v[p] = ry + self.ws.fv[p];
            }
            zero_rows(&self.ops.boundary, &mut self.ws.rhs);

            // Nonlinear residual at the current iterate.
            self.apply_operator(dt, u, v);
            let mut num = 0.0;
            for p in 0..n {
                self.ws.r.u[p] = self.ws.rhs.u[p] - self.ws.aw.u[p];
                self.ws.r.v[p] = self.ws.rhs.v[p] - self.ws.aw.v[p];
                num += self.ws.r.u[p].powi(2) + self.ws.r.v[p].powi(2);
            }
            let rhs_norm = self.ws.rhs.norm().max(1e-300);
            rel_res = num.sqrt() / rhs_norm;
            history.push(rel_res);
            if !rel_res.is_finite() {
                return Err(Error::SolverBlowUp {
                    step: step_index,
                    detail: format!("picard residual became non-finite ({rel_res})"),
                });
            }
            if rel_res <= self.cfg.picard_tol {
                converged = true;
                break;
            }

            // Preconditioner diagonals for this iterate.
            let gamma = if self.ops.jumps.is_empty() {
                0.0
            } else {
                self.cfg.gamma_stab
            };
            {
                let ws = &mut self.ws;
                self.ops.viscous_diagonal(&ws.evals, gamma, &mut ws.du, &mut ws.dv);
            }
            for p in 0..n {
                let base = self.ws.mass[p] / dt + self.ws.co[p];
                self.ws.du[p] += base;
                self.ws.dv[p] += base;
            }

            let iters = self.bicgstab(dt, u, v)?;
            linear_total += iters;
            for p in 0..n {
                u[p] = self.ws.x.u[p];
                v[p] = self.ws.x.v[p];
            }
            self.ops.zero_boundary(u, v);
        }

        // Store the converged viscous-plastic stress for downstream
        // consumers (telemetry, solver hand-offs).
        for (e, el) in self.ops.elements.iter().enumerate() {
            let eps = el.strain(u, v);
            let eval = evaluate_with_strength(&self.rheo, &eps, self.ws.p0[e]);
            sigma[e] = rheology::vp_stress(&eval, &eps);
        }

        Ok(SolverStats {
            scheme: SolverScheme::Picard,
            iterations: history.len() as u32,
            linear_iterations: linear_total,
            residual: rel_res,
            converged,
            residual_history: history,
        })
    }

    /// Action of the lagged-coefficient implicit operator on (wu, wv),
    /// written into ws.aw: (m/dt + co) w + m f e_z x w + K w + S w with
    /// identity rows on the walls.
    fn apply_operator(&mut self, dt: f64, wu: &[f64], wv: &[f64]) {
        let ws = &mut self.ws;
        ws.fu.iter_mut().for_each(|x| *x = 0.0);
        ws.fv.iter_mut().for_each(|x| *x = 0.0);
        for (e, el) in self.ops.elements.iter().enumerate() {
            let eps = el.strain(wu, wv);
            let ev = &ws.evals[e];
            let tr = eps.e11 + eps.e22;
            let iso = (ev.zeta - ev.eta) * tr;
            let s11 = 2.0 * ev.eta * eps.e11 + iso;
            let s22 = 2.0 * ev.eta * eps.e22 + iso;
            let s12 = 2.0 * ev.eta * eps.e12;
            let w = el.area;
            for q in 0..el.n_nodes as usize {
                let pt = el.nodes[q] as usize;
                ws.fu[pt] -= w * (s11 * el.gx[q] + s12 * el.gy[q]);
                ws.fv[pt] -= w * (s12 * el.gx[q] + s22 * el.gy[q]);
            }
        }
        if self.cfg.gamma_stab != 0.0 && !self.ops.jumps.is_empty() {
            add_jump_force(
                self.ops,
                &ws.zeta,
                self.cfg.gamma_stab,
                wu,
                wv,
                &mut ws.fu,
                &mut ws.fv,
            );
        }
        for p in 0..self.ops.n_points() {
            if self.ops.boundary[p] {
                ws.aw.u[p] = wu[p];
                ws.aw.v[p] = wv[p];
                continue;
            }
            let a_diag = ws.mass[p] / dt + ws.co[p];
            let mf = ws.mass[p] * self.mom.f_coriolis;
            ws.aw.u[p] = a_diag * wu[p] - mf * wv[p] - ws.fu[p];
            ws.aw.v[p] = a_diag * wv[p] + mf * wu[p] - ws.fv[p];
        }
    }

    /// Preconditioned BiCGStab on the lagged operator; solution in ws.x.
    fn bicgstab(&mut self, dt: f64, u0: &[f64], v0: &[f64]) -> Result<u32> {
        let n = self.ops.n_points();
        self.ws.x.u.copy_from_slice(u0);
        self.ws.x.v.copy_from_slice(v0);
        zero_rows(&self.ops.boundary, &mut self.ws.x);

        // r = rhs - A x ; the nonlinear residual loop already left exactly
        // this in ws.r (x = current iterate), so reuse it.
        let b_norm = self.ws.rhs.norm().max(1e-300);
        let target = self.cfg.linear_tol * b_norm;
        if self.ws.r.norm() <= target {
            return Ok(0);
        }
        self.ws.r0.copy_from(&self.ws.r);
        self.ws.p.fill(0.0);
        self.ws.vv.fill(0.0);
        let (mut rho, mut alpha, mut omega) = (1.0f64, 1.0f64, 1.0f64);

        for it in 0..self.cfg.linear_max {
            let rho_new = self.ws.r0.dot(&self.ws.r);
            if rho_new.abs() < 1e-60 * b_norm * b_norm {
                // Lanczos breakdown: accept the current iterate; the outer
                // Picard loop absorbs the extra error.
                return Ok(it as u32);
            }
            let beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for i in 0..n {
                self.ws.p.u[i] =
                    self.ws.r.u[i] + beta * (self.ws.p.u[i] - omega * self.ws.vv.u[i]);
                self.ws.p.v[i] =
                    self.ws.r.v[i] + beta * (self.ws.p.v[i] - omega * self.ws.vv.v[i]);
            }
            {
                let ws = &mut self.ws;
                let (p_vec, y_vec) = (&ws.p, &mut ws.y);
                // Split borrows: preconditioner reads du/dv/mass only.
                precondition_split(
                    self.ops,
                    &ws.du,
                    &ws.dv,
                    &ws.mass,
                    self.mom.f_coriolis,
                    p_vec,
                    y_vec,
                );
            }
            let (yu, yv) = (self.ws.y.u.clone(), self.ws.y.v.clone());
            self.apply_operator(dt, &yu, &yv);
            self.ws.vv.copy_from(&self.ws.aw);
            alpha = rho / self.ws.r0.dot(&self.ws.vv);
            for i in 0..n {
                self.ws.s.u[i] = self.ws.r.u[i] - alpha * self.ws.vv.u[i];
                self.ws.s.v[i] = self.ws.r.v[i] - alpha * self.ws.vv.v[i];
            }
            if self.ws.s.norm() <= target {
                for i in 0..n {
                    self.ws.x.u[i] += alpha * self.ws.y.u[i];
                    self.ws.x.v[i] += alpha * self.ws.y.v[i];
                }
                return Ok(it as u32 + 1);
            }
            {
                let ws = &mut self.ws;
                let (s_vec, z_vec) = (&ws.s, &mut ws.z);
                precondition_split(
                    self.ops,
                    &ws.du,
                    &ws.dv,
                    &ws.mass,
                    self.mom.f_coriolis,
                    s_vec,
                    z_vec,
                );
            }
            let (zu, zv) = (self.ws.z.u.clone(), self.ws.z.v.clone());
            self.apply_operator(dt, &zu, &zv);
            self.ws.t.copy_from(&self.ws.aw);
            let ts = self.ws.t.dot(&self.ws.s);
            let tt = self.ws.t.dot(&self.ws.t);
            if tt < 1e-300 {
                return Ok(it as u32 + 1);
            }
            omega = ts / tt;
            for i in 0..n {
                self.ws.x.u[i] += alpha * self.ws.y.u[i] + omega * self.ws.z.u[i];
                self.ws.x.v[i] += alpha * self.ws.y.v[i] + omega * self.ws.z.v[i];
                self.ws.r.u[i] = self.ws.s.u[i] - omega * self.ws.t.u[i];
                self.ws.r.v[i] = self.ws.s.v[i] - omega * self.ws.t.v[i];
            }
            if self.ws.r.norm() <= target {
                return Ok(it as u32 + 1);
            }
            if omega.abs() < 1e-60 {
                return Ok(it as u32 + 1);
            }
        }
        Ok(self.cfg.linear_max as u32)
    }

}

fn zero_rows(boundary: &[bool], field: &mut Vec2) {
    for (p, &b) in boundary.iter().enumerate() {
        if b {
            field.u[p] = 0.0;
            field.v[p] = 0.0;
        }
    }
}

/// Free-function jump penalty so the subcycle loop can borrow force buffers
/// while the workspace holds the viscosity array.
fn add_jump_force(
    ops: &Operators,
    zeta: &[f64],
    gamma: f64,
    u: &[f64],
    v: &[f64],
    fu: &mut [f64],
    fv: &mut [f64],
) {
    ops.add_jump_penalty(zeta, gamma, u, v, fu, fv);
}

/// Preconditioner as a free function over split borrows.
fn precondition_split(
    ops: &Operators,
    du: &[f64],
    dv: &[f64],
    mass: &[f64],
    f_coriolis: f64,
    input: &Vec2,
    out: &mut Vec2,
) {
    for p in 0..ops.n_points() {
        if ops.boundary[p] {
            out.u[p] = input.u[p];
            out.v[p] = input.v[p];
            continue;
        }
        let mf = mass[p] * f_coriolis;
        let (a, d) = (du[p], dv[p]);
        let det = a * d + mf * mf;
        out.u[p] = (d * input.u[p] + mf * input.v[p]) / det;
        out.v[p] = (a * input.v[p] - mf * input.u[p]) / det;
    }
}
