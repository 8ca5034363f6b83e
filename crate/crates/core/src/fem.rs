//! Discrete operators for the momentum equation: element strain rates,
//! weak-form stress divergence, lumped mass, and the edge-jump stabilization
//! of the nonconforming edge-midpoint staggering.
//!
//! Every staggering reduces to the same uniform representation: a list of
//! elements, each with up to six velocity nodes, per-node basis gradients at
//! the element centroid (one-point quadrature), an area, and weights mapping
//! cell tracers onto the element.  The stress divergence is assembled as the
//! negative transpose of the strain operator with the same quadrature
//! weights, which makes the pair adjoint by construction.

use crate::error::{Error, Result};
use crate::grid::{DiamondMesh, DiamondShape, Grid, Staggering};
use crate::rheology::{RheologyEval, StrainRate, Stress};

/// Maximum velocity nodes coupled to one element (corner-cut triangles use
/// two geometric nodes plus two extrapolation partners; full quads use 4).
pub const MAX_NODES: usize = 6;

/// One strain/stress element with centroid-quadrature basis gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct StrainElement {
    /// Velocity point ids.
    pub nodes: [u32; MAX_NODES],
    /// d(phi_a)/dx at the centroid (1/m).
    pub gx: [f64; MAX_NODES],
    /// d(phi_a)/dy at the centroid (1/m).
    pub gy: [f64; MAX_NODES],
    /// Integral of phi_a over the element (m^2); used for mass lumping.
    pub phi_int: [f64; MAX_NODES],
    pub n_nodes: u8,
    /// Quadrature weight = element area (m^2).
    pub area: f64,
    pub centroid: (f64, f64),
    /// Primal cells supplying tracer values, with weights summing to 1.
    pub cells: [u32; 4],
    pub cell_w: [f64; 4],
    pub n_cells: u8,
}

impl StrainElement {
    /// Strain rate of the discrete velocity field on this element.
    #[inline]
    pub fn strain(&self, u: &[f64], v: &[f64]) -> StrainRate {
        let (mut e11, mut e22, mut du_dy, mut dv_dx) = (0.0, 0.0, 0.0, 0.0);
        for a in 0..self.n_nodes as usize {
            let p = self.nodes[a] as usize;
            e11 += self.gx[a] * u[p];
            e22 += self.gy[a] * v[p];
            du_dy += self.gy[a] * u[p];
            dv_dx += self.gx[a] * v[p];
        }
        StrainRate {
            e11,
            e22,
            e12: 0.5 * (du_dy + dv_dx),
        }
    }

    /// Tracer value of a cell field on this element.
    #[inline]
    pub fn tracer(&self, cell_field: &[f64]) -> f64 {
        let mut t = 0.0;
        for k in 0..self.n_cells as usize {
            t += self.cell_w[k] * cell_field[self.cells[k] as usize];
        }
        t
    }
}

/// Six-DOF stencil of the jump penalty across one interior primal edge.
///
/// The jump of the nonconforming rotated-bilinear trace across an edge is a
/// quadratic in the edge parameter spanned by three modes; each mode pairs
/// one DOF from either side.  `dofs[2k]` and `dofs[2k+1]` are the two sides
/// of mode k, and the mode differences are `v[dofs[2k]] - v[dofs[2k+1]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpStencil {
    pub dofs: [u32; 6],
    /// The two cells adjacent to the edge (viscosity averaging).
    pub elems: [u32; 2],
}

/// Exact reference-edge integrals of the jump-mode products
/// (modes: quadratic-minus-linear, quadratic-plus-linear, pure quadratic).
const JUMP_MODE_MATRIX: [[f64; 3]; 3] = [
    [23.0 / 120.0, -17.0 / 120.0, -3.0 / 120.0],
    [-17.0 / 120.0, 23.0 / 120.0, -3.0 / 120.0],
    [-3.0 / 120.0, -3.0 / 120.0, 3.0 / 120.0],
];

/// Assembled discrete operators for one staggering on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Operators {
    pub staggering: Staggering,
    /// Velocity point coordinates (m), indexed like the DOF vectors.
    pub points: Vec<(f64, f64)>,
    /// True where velocity is pinned to zero (domain walls).
    pub boundary: Vec<bool>,
    pub elements: Vec<StrainElement>,
    /// Edge-jump stencils; empty except for the stabilized nonconforming
    /// staggering.
    pub jumps: Vec<JumpStencil>,
    /// Integral of each nodal basis function over the domain (m^2).
    pub lumped_area: Vec<f64>,
}

/// Gradients of the four bilinear basis functions at the centroid of a
/// parallelogram with counterclockwise corners, plus the area.
fn quad_gradients(p: [(f64, f64); 4]) -> ([f64; 4], [f64; 4], f64) {
    // Affine chart x(xi, eta) = c + xi a + eta b on [-1, 1]^2.
    let a = (
        0.25 * (p[1].0 - p[0].0 + p[2].0 - p[3].0),
        0.25 * (p[1].1 - p[0].1 + p[2].1 - p[3].1),
    );
    let b = (
        0.25 * (p[3].0 - p[0].0 + p[2].0 - p[1].0),
        0.25 * (p[3].1 - p[0].1 + p[2].1 - p[1].1),
    );
    let det = a.0 * b.1 - a.1 * b.0;
    // Reference gradients of N_i at the center are (+-1/4, +-1/4).
    let refg = [(-0.25, -0.25), (0.25, -0.25), (0.25, 0.25), (-0.25, 0.25)];
    let mut gx = [0.0; 4];
    let mut gy = [0.0; 4];
    for (i, (rx, ry)) in refg.iter().enumerate() {
        gx[i] = (b.1 * rx - a.1 * ry) / det;
        gy[i] = (-b.0 * rx + a.0 * ry) / det;
    }
    (gx, gy, 4.0 * det)
}

/// Gradients of the three linear basis functions on a counterclockwise
/// triangle, plus the area.
fn tri_gradients(p: [(f64, f64); 3]) -> ([f64; 3], [f64; 3], f64) {
    let two_a = (p[1].0 - p[0].0) * (p[2].1 - p[0].1) - (p[2].0 - p[0].0) * (p[1].1 - p[0].1);
    let gx = [
        (p[1].1 - p[2].1) / two_a,
        (p[2].1 - p[0].1) / two_a,
        (p[0].1 - p[1].1) / two_a,
    ];
    let gy = [
        (p[2].0 - p[1].0) / two_a,
        (p[0].0 - p[2].0) / two_a,
        (p[1].0 - p[0].0) / two_a,
    ];
    (gx, gy, 0.5 * two_a)
}

impl Operators {
    /// Assemble the operators for a staggering on a primal grid.
    pub fn build(grid: &Grid, staggering: Staggering) -> Result<Operators> {
        match staggering {
            Staggering::B => Ok(Self::build_vertex_on_primal(grid)),
            Staggering::Cd1 => Self::build_nonconforming(grid),
            Staggering::Cd2 => {
                let dm = grid.diamond_mesh()?;
                let mut ops = Self::build_vertex_on_diamond(&dm);
                ops.staggering = Staggering::Cd2;
                Ok(ops)
            }
        }
    }

    /// Vertex staggering on the primal grid: one bilinear element per cell.
    fn build_vertex_on_primal(grid: &Grid) -> Operators {
        let mut elements = Vec::with_capacity(grid.n_cells());
        for c in 0..grid.n_cells() {
            let (i, j) = grid.cell_ij(c);
            let vids = [
                grid.vertex_id(i, j),
                grid.vertex_id(i + 1, j),
                grid.vertex_id(i + 1, j + 1),
                grid.vertex_id(i, j + 1),
            ];
            let coords = [
                grid.vertex_xy(vids[0]),
                grid.vertex_xy(vids[1]),
                grid.vertex_xy(vids[2]),
                grid.vertex_xy(vids[3]),
            ];
            let (gx4, gy4, area) = quad_gradients(coords);
            let mut el = StrainElement {
                nodes: [0; MAX_NODES],
                gx: [0.0; MAX_NODES],
                gy: [0.0; MAX_NODES],
                phi_int: [0.0; MAX_NODES],
                n_nodes: 4,
                area,
                centroid: grid.cell_center(c),
                cells: [c as u32, 0, 0, 0],
                cell_w: [1.0, 0.0, 0.0, 0.0],
                n_cells: 1,
            };
            for k in 0..4 {
                el.nodes[k] = vids[k] as u32;
                el.gx[k] = gx4[k];
                el.gy[k] = gy4[k];
                el.phi_int[k] = 0.25 * area;
            }
            elements.push(el);
        }
        Self::finish(
            Staggering::B,
            grid.velocity_points(Staggering::B),
            grid.velocity_boundary_mask(Staggering::B),
            elements,
            Vec::new(),
        )
    }

    /// Nonconforming rotated-bilinear staggering: one element per cell with
    /// DOFs at the cell's edge midpoints, plus jump stencils on interior
    /// edges.
    fn build_nonconforming(grid: &Grid) -> Result<Operators> {
        let (nx, ny) = (grid.nx, grid.ny);
        let (hx, hy) = (grid.hx, grid.hy);
        let mut elements = Vec::with_capacity(grid.n_cells());
        for c in 0..grid.n_cells() {
            let (i, j) = grid.cell_ij(c);
            // Node order [bottom, right, top, left]; centroid gradients of
            // the rotated-bilinear basis reduce to central differences.
            let nodes4 = [
                grid.x_edge_id(i, j),
                grid.y_edge_id(i + 1, j),
                grid.x_edge_id(i, j + 1),
                grid.y_edge_id(i, j),
            ];
            let gx4 = [0.0, 1.0 / hx, 0.0, -1.0 / hx];
            let gy4 = [-1.0 / hy, 0.0, 1.0 / hy, 0.0];
            let area = grid.cell_area();
            let mut el = StrainElement {
                nodes: [0; MAX_NODES],
                gx: [0.0; MAX_NODES],
                gy: [0.0; MAX_NODES],
                phi_int: [0.0; MAX_NODES],
                n_nodes: 4,
                area,
                centroid: grid.cell_center(c),
                cells: [c as u32, 0, 0, 0],
                cell_w: [1.0, 0.0, 0.0, 0.0],
                n_cells: 1,
            };
            for k in 0..4 {
                el.nodes[k] = nodes4[k] as u32;
                el.gx[k] = gx4[k];
                el.gy[k] = gy4[k];
                el.phi_int[k] = 0.25 * area;
            }
            elements.push(el);
        }

        // Jump stencils: one per interior primal edge.
        let mut jumps = Vec::with_capacity(2 * grid.n_cells());
        // Vertical (y-parallel) interior edges between cells (i-1, j), (i, j).
        for j in 0..ny {
            for i in 1..nx {
                jumps.push(JumpStencil {
                    dofs: [
                        grid.x_edge_id(i - 1, j) as u32,     // bottom, left cell
                        grid.x_edge_id(i, j) as u32,         // bottom, right cell
                        grid.x_edge_id(i - 1, j + 1) as u32, // top, left cell
                        grid.x_edge_id(i, j + 1) as u32,     // top, right cell
                        grid.y_edge_id(i - 1, j) as u32,     // outer, left cell
                        grid.y_edge_id(i + 1, j) as u32,     // outer, right cell
                    ],
                    elems: [grid.cell_id(i - 1, j) as u32, grid.cell_id(i, j) as u32],
                });
            }
        }
        // Horizontal (x-parallel) interior edges between cells (i, j-1), (i, j).
        for j in 1..ny {
            for i in 0..nx {
                jumps.push(JumpStencil {
                    dofs: [
                        grid.y_edge_id(i, j - 1) as u32,     // left, lower cell
                        grid.y_edge_id(i, j) as u32,         // left, upper cell
                        grid.y_edge_id(i + 1, j - 1) as u32, // right, lower cell
                        grid.y_edge_id(i + 1, j) as u32,     // right, upper cell
                        grid.x_edge_id(i, j - 1) as u32,     // outer, lower cell
                        grid.x_edge_id(i, j + 1) as u32,     // outer, upper cell
                    ],
                    elems: [grid.cell_id(i, j - 1) as u32, grid.cell_id(i, j) as u32],
                });
            }
        }

        Ok(Self::finish(
            Staggering::Cd1,
            grid.velocity_points(Staggering::Cd1),
            grid.velocity_boundary_mask(Staggering::Cd1),
            elements,
            jumps,
        ))
    }

    /// Vertex staggering assembled on a diamond mesh.  The rotated
    /// edge-midpoint staggering is exactly this operator; building it from
    /// the mesh directly allows the equivalence to be asserted bit for bit.
    pub fn build_vertex_on_diamond(dm: &DiamondMesh) -> Operators {
        let mut elements = Vec::with_capacity(dm.elems.len());
        for de in &dm.elems {
            let mut el = StrainElement {
                nodes: [0; MAX_NODES],
                gx: [0.0; MAX_NODES],
                gy: [0.0; MAX_NODES],
                phi_int: [0.0; MAX_NODES],
                n_nodes: 0,
                area: de.area,
                centroid: de.centroid,
                cells: de.tracer_cells,
                cell_w: de.tracer_weights,
                n_cells: de.n_tracer,
            };
            match de.shape {
                DiamondShape::Full => {
                    let coords = [
                        dm.nodes[de.nodes[0] as usize],
                        dm.nodes[de.nodes[1] as usize],
                        dm.nodes[de.nodes[2] as usize],
                        dm.nodes[de.nodes[3] as usize],
                    ];
                    let (gx4, gy4, area) = quad_gradients(coords);
                    el.n_nodes = 4;
                    for k in 0..4 {
                        el.nodes[k] = de.nodes[k];
                        el.gx[k] = gx4[k];
                        el.gy[k] = gy4[k];
                        el.phi_int[k] = 0.25 * area;
                    }
                    el.area = area;
                }
                DiamondShape::Tri => {
                    let coords = [
                        dm.nodes[de.nodes[0] as usize],
                        dm.nodes[de.nodes[1] as usize],
                        dm.nodes[de.nodes[2] as usize],
                    ];
                    let (gx3, gy3, area) = tri_gradients(coords);
                    el.n_nodes = 3;
                    for k in 0..3 {
                        el.nodes[k] = de.nodes[k];
                        el.gx[k] = gx3[k];
                        el.gy[k] = gy3[k];
                        el.phi_int[k] = area / 3.0;
                    }
                    el.area = area;
                }
                DiamondShape::CornerTri => {
                    // P1 on (corner, m1, m2); the corner value is
                    // 3/4 m1 - 1/4 m1_far + 3/4 m2 - 1/4 m2_far, so the
                    // corner basis folds onto the four midpoint DOFs.
                    let corner = de.corner.expect("corner triangle has a corner");
                    let coords = [
                        corner,
                        dm.nodes[de.nodes[0] as usize],
                        dm.nodes[de.nodes[1] as usize],
                    ];
                    let (g, gyv, area) = tri_gradients(coords);
                    let (gc, g1, g2) = ((g[0], gyv[0]), (g[1], gyv[1]), (g[2], gyv[2]));
                    el.n_nodes = 4;
                    el.nodes[..4].copy_from_slice(&de.nodes);
                    let w = [0.75, 0.75, -0.25, -0.25];
                    let own = [Some(g1), Some(g2), None, None];
                    for k in 0..4 {
                        let (ox, oy) = own[k].unwrap_or((0.0, 0.0));
                        el.gx[k] = ox + w[k] * gc.0;
                        el.gy[k] = oy + w[k] * gc.1;
                        el.phi_int[k] = (area / 3.0) * (if k < 2 { 1.0 + w[k] } else { w[k] });
                    }
                    el.area = area;
                }
            }
            elements.push(el);
        }
        Self::finish(
            Staggering::B,
            dm.nodes.clone(),
            dm.node_boundary.clone(),
            elements,
            Vec::new(),
        )
    }

    fn finish(
        staggering: Staggering,
        points: Vec<(f64, f64)>,
        boundary: Vec<bool>,
        elements: Vec<StrainElement>,
        jumps: Vec<JumpStencil>,
    ) -> Operators {
        let mut lumped_area = vec![0.0; points.len()];
        for el in &elements {
            for a in 0..el.n_nodes as usize {
                lumped_area[el.nodes[a] as usize] += el.phi_int[a];
            }
        }
        Operators {
            staggering,
            points,
            boundary,
            elements,
            jumps,
            lumped_area,
        }
    }

    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    /// Strain rate on every element for the velocity field (u, v).
    pub fn compute_strain(&self, u: &[f64], v: &[f64]) -> Result<Vec<StrainRate>> {
        self.check_len("u", u.len())?;
        self.check_len("v", v.len())?;
        Ok(self.elements.iter().map(|el| el.strain(u, v)).collect())
    }

    /// Weak-form stress divergence: f_i = -sum_K area_K sigma_K : eps(phi_i),
    /// accumulated into (fu, fv); rows of wall points are zeroed afterwards.
    pub fn add_stress_divergence(&self, sigma: &[Stress], fu: &mut [f64], fv: &mut [f64]) {
        debug_assert_eq!(sigma.len(), self.elements.len());
        for (el, s) in self.elements.iter().zip(sigma) {
            let w = el.area;
            for a in 0..el.n_nodes as usize {
                let p = el.nodes[a] as usize;
                fu[p] -= w * (s.s11 * el.gx[a] + s.s12 * el.gy[a]);
                fv[p] -= w * (s.s12 * el.gx[a] + s.s22 * el.gy[a]);
            }
        }
        self.zero_boundary(fu, fv);
    }

    /// Jump-penalty force of the nonconforming staggering:
    /// f_i -= gamma * mean(zeta) / h * integral of [v].[phi_i] over each
    /// interior edge.  `zeta_elem` is the bulk viscosity per element.
    pub fn add_jump_penalty(
        &self,
        zeta_elem: &[f64],
        gamma: f64,
        u: &[f64],
        v: &[f64],
        fu: &mut [f64],
        fv: &mut [f64],
    ) {
        if self.jumps.is_empty() || gamma == 0.0 {
            return;
        }
        // The 1/h edge scaling cancels the edge-length measure h/2 up to the
        // constant 1/2, so the stencil is grid-size independent.
        for st in &self.jumps {
            let zbar = 0.5 * (zeta_elem[st.elems[0] as usize] + zeta_elem[st.elems[1] as usize]);
            let c = 0.5 * gamma * zbar;
            let d = &st.dofs;
            for (field, force) in [(u, &mut *fu), (v, &mut *fv)] {
                let delta = [
                    field[d[0] as usize] - field[d[1] as usize],
                    field[d[2] as usize] - field[d[3] as usize],
                    field[d[4] as usize] - field[d[5] as usize],
                ];
                for m in 0..3 {
                    let g = c
                        * (JUMP_MODE_MATRIX[m][0] * delta[0]
                            + JUMP_MODE_MATRIX[m][1] * delta[1]
                            + JUMP_MODE_MATRIX[m][2] * delta[2]);
                    force[d[2 * m] as usize] -= g;
                    force[d[2 * m + 1] as usize] += g;
                }
            }
        }
        self.zero_boundary(fu, fv);
    }

    /// Set wall rows of a force/velocity pair to zero.
    pub fn zero_boundary(&self, fu: &mut [f64], fv: &mut [f64]) {
        for (p, &b) in self.boundary.iter().enumerate() {
            if b {
                fu[p] = 0.0;
                fv[p] = 0.0;
            }
        }
    }

    /// Row-sum lumped mass of a cell field (kg/m^2 in, kg out per point).
    pub fn lumped_mass(&self, cell_field: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_points()];
        for el in &self.elements {
            let m = el.tracer(cell_field);
            for a in 0..el.n_nodes as usize {
                out[el.nodes[a] as usize] += m * el.phi_int[a];
            }
        }
        out
    }

    /// Diagonal of the implicit viscous (plus jump-penalty) operator, used
    /// as a preconditioner.  Output per point, one value per component.
    pub fn viscous_diagonal(
        &self,
        evals: &[RheologyEval],
        gamma: f64,
        du: &mut [f64],
        dv: &mut [f64],
    ) {
        du.iter_mut().for_each(|x| *x = 0.0);
        dv.iter_mut().for_each(|x| *x = 0.0);
        for (el, ev) in self.elements.iter().zip(evals) {
            let w = el.area;
            for a in 0..el.n_nodes as usize {
                let p = el.nodes[a] as usize;
                let (gx, gy) = (el.gx[a], el.gy[a]);
                du[p] += w * (2.0 * ev.eta * (gx * gx + 0.5 * gy * gy)
                    + (ev.zeta - ev.eta) * gx * gx);
                dv[p] += w * (2.0 * ev.eta * (gy * gy + 0.5 * gx * gx)
                    + (ev.zeta - ev.eta) * gy * gy);
            }
        }
        if gamma != 0.0 {
            for st in &self.jumps {
                let zbar =
                    0.5 * (evals[st.elems[0] as usize].zeta + evals[st.elems[1] as usize].zeta);
                let c = 0.5 * gamma * zbar;
                for m in 0..3 {
                    let diag = c * JUMP_MODE_MATRIX[m][m];
                    for side in 0..2 {
                        let p = st.dofs[2 * m + side] as usize;
                        du[p] += diag;
                        dv[p] += diag;
                    }
                }
            }
        }
    }

    fn check_len(&self, name: &'static str, got: usize) -> Result<()> {
        if got != self.n_points() {
            return Err(Error::FieldLength {
                name,
                got,
                expected: self.n_points(),
            });
        }
        Ok(())
    }
}
