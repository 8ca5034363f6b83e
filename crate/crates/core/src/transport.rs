//! Donor-cell upwind transport of cell tracers (thickness, concentration).
//!
//! Fluxes live on primal edges.  The normal speed at an edge comes straight
//! from the staggering: edge-midpoint DOFs carry it directly, vertex DOFs are
//! averaged along the edge.  Walls are closed (zero flux), so total ice
//! volume is conserved to round-off.

use crate::error::{Error, Result};
use crate::grid::{Grid, Staggering};

/// Normal velocity (m/s) per primal edge, signed along +x for vertical edges
/// and +y for horizontal edges, resampled from the staggered velocity field.
pub fn face_normal_speeds(
    grid: &Grid,
    staggering: Staggering,
    u: &[f64],
    v: &[f64],
    out: &mut Vec<f64>,
) {
    out.clear();
    out.resize(grid.n_edges(), 0.0);
    match staggering {
        Staggering::B => {
            // Vertex velocities: average the two edge endpoints.
            for e in 0..grid.n_edges() {
                let (i, j) = grid.edge_ij(e);
                if grid.edge_is_x(e) {
                    // Horizontal edge, normal +y: endpoints (i,j), (i+1,j).
                    out[e] = 0.5 * (v[grid.vertex_id(i, j)] + v[grid.vertex_id(i + 1, j)]);
                } else {
                    // Vertical edge, normal +x: endpoints (i,j), (i,j+1).
                    out[e] = 0.5 * (u[grid.vertex_id(i, j)] + u[grid.vertex_id(i, j + 1)]);
                }
            }
        }
        Staggering::Cd1 | Staggering::Cd2 => {
            // Edge-midpoint velocities: take the normal component in place.
            for e in 0..grid.n_edges() {
                out[e] = if grid.edge_is_x(e) { v[e] } else { u[e] };
            }
        }
    }
}

/// One forward-Euler donor-cell step for thickness and concentration.
///
/// `un` is the per-edge normal speed; wall edges must carry zero speed (the
/// momentum solvers guarantee this through the wall boundary condition).
/// Concentration is clamped to [0, 1] after the update; thickness is left
/// untouched so that total volume is conserved exactly.  Returns the maximum
/// face CFL number; a value above 1 aborts the step.
pub fn upwind_step(
    grid: &Grid,
    un: &[f64],
    dt: f64,
    h: &mut [f64],
    a: &mut [f64],
) -> Result<f64> {
    let n = grid.n_cells();
    debug_assert_eq!(un.len(), grid.n_edges());
    debug_assert_eq!(h.len(), n);
    debug_assert_eq!(a.len(), n);

    let mut max_cfl = 0.0f64;
    for (e, &s) in un.iter().enumerate() {
        let step = if grid.edge_is_x(e) { grid.hy } else { grid.hx };
        max_cfl = max_cfl.max(s.abs() * dt / step);
    }
    if max_cfl > 1.0 + 1e-9 {
        return Err(Error::CflViolation { cfl: max_cfl });
    }

    let inv_area = 1.0 / grid.cell_area();
    let mut dh = vec![0.0; n];
    let mut da = vec![0.0; n];
    let mut add_flux = |donor: usize, receiver: usize, rate: f64| {
        // rate = |un| * edge length; donor-cell values feed the flux.
        let fh = rate * h[donor];
        let fa = rate * a[donor];
        dh[donor] -= fh;
        dh[receiver] += fh;
        da[donor] -= fa;
        da[receiver] += fa;
    };
    for e in 0..grid.n_edges() {
        let s = un[e];
        if s == 0.0 || grid.edge_is_boundary(e) {
            continue;
        }
        let (i, j) = grid.edge_ij(e);
        if grid.edge_is_x(e) {
            // Between cells (i, j-1) below and (i, j) above; normal +y.
            let below = grid.cell_id(i, j - 1);
            let above = grid.cell_id(i, j);
            if s > 0.0 {
                add_flux(below, above, s * grid.hx);
            } else {
                add_flux(above, below, -s * grid.hx);
            }
        } else {
            // Between cells (i-1, j) left and (i, j) right; normal +x.
            let left = grid.cell_id(i - 1, j);
            let right = grid.cell_id(i, j);
            if s > 0.0 {
                add_flux(left, right, s * grid.hy);
            } else {
                add_flux(right, left, -s * grid.hy);
            }
        }
    }
    let scale = dt * inv_area;
    for c in 0..n {
        h[c] += scale * dh[c];
        a[c] = (a[c] + scale * da[c]).clamp(0.0, 1.0);
    }
    Ok(max_cfl)
}
