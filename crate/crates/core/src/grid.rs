//! Structured quadrilateral grids, velocity staggerings, and the derived
//! diamond mesh used by the rotated edge-midpoint staggering.
//!
//! The primal grid covers a rectangular domain with `nx * ny` cells.  Cells
//! are numbered row-major; edges are numbered with all x-parallel edges
//! first, then all y-parallel edges, each group row-major.  All coordinates
//! are in meters.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Placement of the velocity unknowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Staggering {
    /// Velocities at cell vertices (one bilinear element per cell).
    B,
    /// Velocities at edge midpoints, nonconforming rotated-bilinear element
    /// on each cell plus an edge-jump stabilization.
    Cd1,
    /// Velocities at edge midpoints, realized as a vertex-staggered operator
    /// on the rotated diamond mesh.
    Cd2,
}

impl Staggering {
    pub fn as_str(&self) -> &'static str {
        match self {
            Staggering::B => "b",
            Staggering::Cd1 => "cd1",
            Staggering::Cd2 => "cd2",
        }
    }
}

impl std::fmt::Display for Staggering {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Staggering {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "b" => Ok(Staggering::B),
            "cd1" => Ok(Staggering::Cd1),
            "cd2" => Ok(Staggering::Cd2),
            other => Err(format!("unknown staggering `{other}` (expected b, cd1, cd2)")),
        }
    }
}

/// Structured grid of `nx * ny` rectangular cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    /// Cell extent in x (m).
    pub hx: f64,
    /// Cell extent in y (m).
    pub hy: f64,
}

/// Degree-of-freedom accounting for one staggering on one grid.
///
/// `velocity_dof` uses the interior closed-form counts (8N/4 for vertex
/// staggering, 8N/2 for edge staggering, N = number of cells), which is what
/// resolution comparisons are quoted in; `velocity_dof_exact` includes the
/// boundary layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DofReport {
    pub staggering: Staggering,
    pub cells: usize,
    /// Number of velocity point locations (each carries two components).
    pub velocity_points: usize,
    /// Interior-formula velocity DOF count (two components per point).
    pub velocity_dof: usize,
    /// Exact velocity DOF count including boundary points.
    pub velocity_dof_exact: usize,
    /// Tracer DOFs: thickness and concentration, one each per cell.
    pub tracer_dof: usize,
    /// Number of strain/stress elements the staggering assembles over.
    pub elements: usize,
}

impl Grid {
    /// Square domain of side `l` meters with square cells of side `h`.
    pub fn square(l: f64, h: f64) -> Result<Grid> {
        Grid::rect(l, l, h, h)
    }

    /// Rectangular domain; each side must be an integer multiple of the
    /// corresponding cell extent.
    pub fn rect(lx: f64, ly: f64, hx: f64, hy: f64) -> Result<Grid> {
        for (l, h) in [(lx, hx), (ly, hy)] {
            if !(h > 0.0) || !(l > 0.0) {
                return Err(Error::InvalidParameter {
                    name: "grid extent",
                    value: h,
                    reason: "domain and cell sizes must be positive".into(),
                });
            }
            let n = l / h;
            if (n - n.round()).abs() > 1e-9 * n.max(1.0) || n.round() < 1.0 {
                return Err(Error::NonDivisibleDomain { l, h });
            }
        }
        Ok(Grid {
            nx: (lx / hx).round() as usize,
            ny: (ly / hy).round() as usize,
            hx,
            hy,
        })
    }

    pub fn lx(&self) -> f64 {
        self.nx as f64 * self.hx
    }

    pub fn ly(&self) -> f64 {
        self.ny as f64 * self.hy
    }

    pub fn square_cells(&self) -> bool {
        self.hx == self.hy
    }

    /// Cell size for square-cell grids.
    pub fn h(&self) -> Result<f64> {
        if self.square_cells() {
            Ok(self.hx)
        } else {
            Err(Error::NonSquareCells {
                op: "h()",
                hx: self.hx,
                hy: self.hy,
            })
        }
    }

    // ----- cells -----

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn cell_id(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    pub fn cell_ij(&self, c: usize) -> (usize, usize) {
        (c % self.nx, c / self.nx)
    }

    pub fn cell_center(&self, c: usize) -> (f64, f64) {
        let (i, j) = self.cell_ij(c);
        ((i as f64 + 0.5) * self.hx, (j as f64 + 0.5) * self.hy)
    }

    pub fn cell_area(&self) -> f64 {
        self.hx * self.hy
    }

    /// Cell containing the point, clamped to the domain.
    pub fn cell_of_point(&self, x: f64, y: f64) -> usize {
        let i = ((x / self.hx).floor() as isize).clamp(0, self.nx as isize - 1) as usize;
        let j = ((y / self.hy).floor() as isize).clamp(0, self.ny as isize - 1) as usize;
        self.cell_id(i, j)
    }

    // ----- vertices -----

    pub fn n_vertices(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn vertex_id(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= self.nx && j <= self.ny);
        j * (self.nx + 1) + i
    }

    pub fn vertex_ij(&self, v: usize) -> (usize, usize) {
        (v % (self.nx + 1), v / (self.nx + 1))
    }

    pub fn vertex_xy(&self, v: usize) -> (f64, f64) {
        let (i, j) = self.vertex_ij(v);
        (i as f64 * self.hx, j as f64 * self.hy)
    }

    pub fn vertex_is_boundary(&self, v: usize) -> bool {
        let (i, j) = self.vertex_ij(v);
        i == 0 || i == self.nx || j == 0 || j == self.ny
    }

    // ----- edges (x-parallel first, then y-parallel) -----

    pub fn n_edges_x(&self) -> usize {
        self.nx * (self.ny + 1)
    }

    pub fn n_edges_y(&self) -> usize {
        (self.nx + 1) * self.ny
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges_x() + self.n_edges_y()
    }

    /// Edge parallel to x between vertices (i, j) and (i+1, j).
    pub fn x_edge_id(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j <= self.ny);
        j * self.nx + i
    }

    /// Edge parallel to y between vertices (i, j) and (i, j+1).
    pub fn y_edge_id(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= self.nx && j < self.ny);
        self.n_edges_x() + j * (self.nx + 1) + i
    }

    pub fn edge_is_x(&self, e: usize) -> bool {
        e < self.n_edges_x()
    }

    /// (i, j) indices of an edge within its orientation group.
    pub fn edge_ij(&self, e: usize) -> (usize, usize) {
        if self.edge_is_x(e) {
            (e % self.nx, e / self.nx)
        } else {
            let r = e - self.n_edges_x();
            (r % (self.nx + 1), r / (self.nx + 1))
        }
    }

    pub fn edge_midpoint(&self, e: usize) -> (f64, f64) {
        let (i, j) = self.edge_ij(e);
        if self.edge_is_x(e) {
            ((i as f64 + 0.5) * self.hx, j as f64 * self.hy)
        } else {
            (i as f64 * self.hx, (j as f64 + 0.5) * self.hy)
        }
    }

    pub fn edge_is_boundary(&self, e: usize) -> bool {
        let (i, j) = self.edge_ij(e);
        if self.edge_is_x(e) {
            j == 0 || j == self.ny
        } else {
            i == 0 || i == self.nx
        }
    }

    pub fn n_boundary_edges(&self) -> usize {
        2 * self.nx + 2 * self.ny
    }

    // ----- staggering-dependent quantities -----

    /// Number of velocity point locations for a staggering.
    pub fn n_velocity_points(&self, s: Staggering) -> usize {
        match s {
            Staggering::B => self.n_vertices(),
            Staggering::Cd1 | Staggering::Cd2 => self.n_edges(),
        }
    }

    /// Coordinates of every velocity point, indexed like the DOF vectors.
    pub fn velocity_points(&self, s: Staggering) -> Vec<(f64, f64)> {
        match s {
            Staggering::B => (0..self.n_vertices()).map(|v| self.vertex_xy(v)).collect(),
            Staggering::Cd1 | Staggering::Cd2 => {
                (0..self.n_edges()).map(|e| self.edge_midpoint(e)).collect()
            }
        }
    }

    /// Boundary mask over velocity points (true = wall point, velocity
    /// pinned to zero).
    pub fn velocity_boundary_mask(&self, s: Staggering) -> Vec<bool> {
        match s {
            Staggering::B => (0..self.n_vertices())
                .map(|v| self.vertex_is_boundary(v))
                .collect(),
            Staggering::Cd1 | Staggering::Cd2 => (0..self.n_edges())
                .map(|e| self.edge_is_boundary(e))
                .collect(),
        }
    }

    /// Degree-of-freedom accounting for one staggering.
    pub fn dof_counts(&self, s: Staggering) -> DofReport {
        let n = self.n_cells();
        let points = self.n_velocity_points(s);
        let (formula, elements) = match s {
            Staggering::B => (8 * n / 4, n),
            Staggering::Cd1 => (8 * n / 2, n),
            Staggering::Cd2 => {
                // Full diamonds (interior formula 2N) plus boundary cuts.
                let full = n + (self.nx - 1) * (self.ny - 1);
                (8 * n / 2, full + self.n_boundary_edges())
            }
        };
        DofReport {
            staggering: s,
            cells: n,
            velocity_points: points,
            velocity_dof: formula,
            velocity_dof_exact: 2 * points,
            tracer_dof: 2 * n,
            elements,
        }
    }

    /// Grid metadata as JSON (for sidecars and the info subcommand).
    pub fn info_json(&self) -> serde_json::Value {
        let mut v = serde_json::json!({
            "nx": self.nx,
            "ny": self.ny,
            "hx_m": self.hx,
            "hy_m": self.hy,
            "lx_m": self.lx(),
            "ly_m": self.ly(),
            "cells": self.n_cells(),
            "vertices": self.n_vertices(),
            "edges": self.n_edges(),
            "boundary_edges": self.n_boundary_edges(),
        });
        if self.square_cells() && self.nx >= 2 && self.ny >= 2 {
            v["diamond"] = serde_json::json!({
                "full": self.n_cells() + (self.nx - 1) * (self.ny - 1),
                "cut_triangles": self.n_boundary_edges(),
                "side_m": self.hx / 2.0f64.sqrt(),
            });
        }
        v
    }

    /// Build the rotated diamond mesh whose nodes are the primal edge
    /// midpoints.  Requires square cells and at least 2 cells per axis.
    pub fn diamond_mesh(&self) -> Result<DiamondMesh> {
        DiamondMesh::build(self)
    }
}

/// Shape of one diamond-mesh element.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiamondShape {
    /// Full rotated square (side h / sqrt(2)), four nodes counterclockwise.
    Full,
    /// Boundary-cut triangle, three midpoint nodes counterclockwise.
    Tri,
    /// Corner-cut triangle: the domain corner itself plus two midpoint
    /// nodes; the corner value is extrapolated from four midpoint DOFs.
    CornerTri,
}

/// What primal entity a diamond element is centered on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiamondAnchor {
    Cell(u32),
    Vertex(u32),
}

/// One element of the diamond mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct DiamondElem {
    pub shape: DiamondShape,
    /// Node ids into the diamond node list (= primal edge ids).
    /// Full: 4 geometric nodes ccw.  Tri: 3 geometric nodes ccw (4th unused).
    /// CornerTri: [m1, m2, m1_far, m2_far]; geometry is (corner, m1, m2) and
    /// the corner value is 3/4 m1 - 1/4 m1_far + 3/4 m2 - 1/4 m2_far.
    pub nodes: [u32; 4],
    /// Domain corner coordinate for CornerTri elements.
    pub corner: Option<(f64, f64)>,
    pub anchor: DiamondAnchor,
    pub area: f64,
    pub centroid: (f64, f64),
    /// Primal cells providing tracer values to this element, with weights
    /// summing to one.
    pub tracer_cells: [u32; 4],
    pub tracer_weights: [f64; 4],
    pub n_tracer: u8,
}

/// Rotated mesh with nodes at the primal edge midpoints.  Interior elements
/// are full diamonds centered on primal cells and interior vertices;
/// boundary vertices contribute cut triangles so the elements tile the
/// domain exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct DiamondMesh {
    /// The primal grid the mesh was derived from.
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    /// Node coordinates; node i is the midpoint of primal edge i.
    pub nodes: Vec<(f64, f64)>,
    /// True for nodes on the domain boundary.
    pub node_boundary: Vec<bool>,
    pub elems: Vec<DiamondElem>,
}

impl DiamondMesh {
    fn build(grid: &Grid) -> Result<DiamondMesh> {
        let h = match grid.h() {
            Ok(h) => h,
            Err(_) => {
                return Err(Error::NonSquareCells {
                    op: "diamond mesh",
                    hx: grid.hx,
                    hy: grid.hy,
                })
            }
        };
        if grid.nx < 2 || grid.ny < 2 {
            return Err(Error::GridTooSmall {
                op: "diamond mesh",
                nx: grid.nx,
                ny: grid.ny,
            });
        }
        let (nx, ny) = (grid.nx, grid.ny);
        let nodes: Vec<(f64, f64)> = (0..grid.n_edges()).map(|e| grid.edge_midpoint(e)).collect();
        let node_boundary: Vec<bool> = (0..grid.n_edges())
            .map(|e| grid.edge_is_boundary(e))
            .collect();

        let full_area = 0.5 * h * h;
        let mut elems = Vec::with_capacity(grid.n_cells() + (nx - 1) * (ny - 1) + 2 * (nx + ny));

        // Cell-anchored full diamonds: nodes [left, bottom, right, top].
        for j in 0..ny {
            for i in 0..nx {
                let c = grid.cell_id(i, j);
                let nodes4 = [
                    grid.y_edge_id(i, j) as u32,
                    grid.x_edge_id(i, j) as u32,
                    grid.y_edge_id(i + 1, j) as u32,
                    grid.x_edge_id(i, j + 1) as u32,
                ];
                elems.push(DiamondElem {
                    shape: DiamondShape::Full,
                    nodes: nodes4,
                    corner: None,
                    anchor: DiamondAnchor::Cell(c as u32),
                    area: full_area,
                    centroid: grid.cell_center(c),
                    tracer_cells: [c as u32, 0, 0, 0],
                    tracer_weights: [1.0, 0.0, 0.0, 0.0],
                    n_tracer: 1,
                });
            }
        }

        // Interior-vertex-anchored full diamonds: nodes [left, bottom,
        // right, top] = midpoints of the four incident edges; tracers
        // averaged over the four cells touching the vertex.
        for j in 1..ny {
            for i in 1..nx {
                let nodes4 = [
                    grid.x_edge_id(i - 1, j) as u32,
                    grid.y_edge_id(i, j - 1) as u32,
                    grid.x_edge_id(i, j) as u32,
                    grid.y_edge_id(i, j) as u32,
                ];
                let cells = [
                    grid.cell_id(i - 1, j - 1) as u32,
                    grid.cell_id(i, j - 1) as u32,
                    grid.cell_id(i - 1, j) as u32,
                    grid.cell_id(i, j) as u32,
                ];
                elems.push(DiamondElem {
                    shape: DiamondShape::Full,
                    nodes: nodes4,
                    corner: None,
                    anchor: DiamondAnchor::Vertex(grid.vertex_id(i, j) as u32),
                    area: full_area,
                    centroid: (i as f64 * h, j as f64 * h),
                    tracer_cells: cells,
                    tracer_weights: [0.25; 4],
                    n_tracer: 4,
                });
            }
        }

        // Boundary-vertex cut triangles (walls, then corners).  Node order
        // is counterclockwise; tracers averaged over the adjacent cells.
        let tri_area = 0.25 * h * h;
        let mut push_tri = |nodes3: [usize; 3], vtx: (usize, usize), cells2: [u32; 2]| {
            let pts: Vec<(f64, f64)> = nodes3.iter().map(|&n| nodes[n]).collect();
            debug_assert!(
                (pts[1].0 - pts[0].0) * (pts[2].1 - pts[0].1)
                    - (pts[2].0 - pts[0].0) * (pts[1].1 - pts[0].1)
                    > 0.0,
                "wall triangle at vertex {vtx:?} is not counterclockwise"
            );
            let centroid = (
                (pts[0].0 + pts[1].0 + pts[2].0) / 3.0,
                (pts[0].1 + pts[1].1 + pts[2].1) / 3.0,
            );
            elems.push(DiamondElem {
                shape: DiamondShape::Tri,
                nodes: [nodes3[0] as u32, nodes3[1] as u32, nodes3[2] as u32, 0],
                corner: None,
                anchor: DiamondAnchor::Vertex(grid.vertex_id(vtx.0, vtx.1) as u32),
                area: tri_area,
                centroid,
                tracer_cells: [cells2[0], cells2[1], 0, 0],
                tracer_weights: [0.5, 0.5, 0.0, 0.0],
                n_tracer: 2,
            });
        };
        // Bottom wall (j = 0) and top wall (j = ny).
        for i in 1..nx {
            push_tri(
                [
                    grid.x_edge_id(i - 1, 0),
                    grid.x_edge_id(i, 0),
                    grid.y_edge_id(i, 0),
                ],
                (i, 0),
                [grid.cell_id(i - 1, 0) as u32, grid.cell_id(i, 0) as u32],
            );
        }
        for i in 1..nx {
            push_tri(
                [
                    grid.x_edge_id(i, ny),
                    grid.x_edge_id(i - 1, ny),
                    grid.y_edge_id(i, ny - 1),
                ],
                (i, ny),
                [
                    grid.cell_id(i - 1, ny - 1) as u32,
                    grid.cell_id(i, ny - 1) as u32,
                ],
            );
        }
        // Left wall (i = 0) and right wall (i = nx).
        for j in 1..ny {
            push_tri(
                [
                    grid.y_edge_id(0, j - 1),
                    grid.x_edge_id(0, j),
                    grid.y_edge_id(0, j),
                ],
                (0, j),
                [grid.cell_id(0, j - 1) as u32, grid.cell_id(0, j) as u32],
            );
        }
        for j in 1..ny {
            push_tri(
                [
                    grid.y_edge_id(nx, j),
                    grid.x_edge_id(nx - 1, j),
                    grid.y_edge_id(nx, j - 1),
                ],
                (nx, j),
                [
                    grid.cell_id(nx - 1, j - 1) as u32,
                    grid.cell_id(nx - 1, j) as u32,
                ],
            );
        }
        // Corner triangles.  Geometry is (corner, m1, m2) ccw; the value at
        // the corner is linearly extrapolated along each wall and averaged:
        // 3/4 m1 - 1/4 m1_far + 3/4 m2 - 1/4 m2_far (exact for affine
        // fields).
        let corner_area = 0.125 * h * h;
        let mut push_corner = |corner: (usize, usize),
                               m1: usize,
                               m1_far: usize,
                               m2: usize,
                               m2_far: usize,
                               cell: u32| {
            let cxy = (corner.0 as f64 * h, corner.1 as f64 * h);
            let (p1, p2) = (nodes[m1], nodes[m2]);
            debug_assert!(
                (p1.0 - cxy.0) * (p2.1 - cxy.1) - (p2.0 - cxy.0) * (p1.1 - cxy.1) > 0.0,
                "corner triangle at {corner:?} is not counterclockwise"
            );
            let centroid = ((cxy.0 + p1.0 + p2.0) / 3.0, (cxy.1 + p1.1 + p2.1) / 3.0);
            elems.push(DiamondElem {
                shape: DiamondShape::CornerTri,
                nodes: [m1 as u32, m2 as u32, m1_far as u32, m2_far as u32],
                corner: Some(cxy),
                anchor: DiamondAnchor::Vertex(grid.vertex_id(corner.0, corner.1) as u32),
                area: corner_area,
                centroid,
                tracer_cells: [cell, 0, 0, 0],
                tracer_weights: [1.0, 0.0, 0.0, 0.0],
                n_tracer: 1,
            });
        };
        push_corner(
            (0, 0),
            grid.x_edge_id(0, 0),
            grid.x_edge_id(1, 0),
            grid.y_edge_id(0, 0),
            grid.y_edge_id(0, 1),
            grid.cell_id(0, 0) as u32,
        );
        push_corner(
            (nx, 0),
            grid.y_edge_id(nx, 0),
            grid.y_edge_id(nx, 1),
            grid.x_edge_id(nx - 1, 0),
            grid.x_edge_id(nx - 2, 0),
            grid.cell_id(nx - 1, 0) as u32,
        );
        push_corner(
            (0, ny),
            grid.y_edge_id(0, ny - 1),
            grid.y_edge_id(0, ny - 2),
            grid.x_edge_id(0, ny),
            grid.x_edge_id(1, ny),
            grid.cell_id(0, ny - 1) as u32,
        );
        push_corner(
            (nx, ny),
            grid.x_edge_id(nx - 1, ny),
            grid.x_edge_id(nx - 2, ny),
            grid.y_edge_id(nx, ny - 1),
            grid.y_edge_id(nx, ny - 2),
            grid.cell_id(nx - 1, ny - 1) as u32,
        );

        Ok(DiamondMesh {
            nx,
            ny,
            h,
            nodes,
            node_boundary,
            elems,
        })
    }

    pub fn n_full(&self) -> usize {
        self.elems
            .iter()
            .filter(|e| e.shape == DiamondShape::Full)
            .count()
    }

    pub fn n_triangles(&self) -> usize {
        self.elems.len() - self.n_full()
    }

    /// Element containing the point (x, y); points outside the domain are
    /// clamped onto it.  Containment is resolved through the rotated lattice
    /// of diamond centers.
    pub fn elem_of_point(&self, x: f64, y: f64) -> usize {
        let (nx, ny, h) = (self.nx, self.ny, self.h);
        let x = x.clamp(0.0, nx as f64 * h);
        let y = y.clamp(0.0, ny as f64 * h);
        // Diamond centers form the lattice ((p-q) h/2, (p+q) h/2) over all
        // integer (p, q); rounding in lattice coordinates picks the nearest
        // center in the L1 metric, which is the containing diamond.
        let p = ((x + y) / h).round() as i64;
        let q = ((y - x) / h).round() as i64;
        let (ci, cj) = (p - q, p + q); // center = (ci h/2, cj h/2)
        if ci.rem_euclid(2) == 1 {
            // Cell-centered diamond.
            let i = ((ci - 1) / 2).clamp(0, nx as i64 - 1) as usize;
            let j = ((cj - 1) / 2).clamp(0, ny as i64 - 1) as usize;
            return j * nx + i;
        }
        // Vertex-centered diamond or boundary cut.
        let i = (ci / 2).clamp(0, nx as i64) as usize;
        let j = (cj / 2).clamp(0, ny as i64) as usize;
        let n_cells = nx * ny;
        let n_ivert = (nx - 1) * (ny - 1);
        let interior = |i: usize, j: usize| n_cells + (j - 1) * (nx - 1) + (i - 1);
        let walls = n_cells + n_ivert;
        match (i, j) {
            (0, 0) => walls + 2 * (nx - 1) + 2 * (ny - 1),
            (i2, 0) if i2 == nx => walls + 2 * (nx - 1) + 2 * (ny - 1) + 1,
            (0, j2) if j2 == ny => walls + 2 * (nx - 1) + 2 * (ny - 1) + 2,
            (i2, j2) if i2 == nx && j2 == ny => walls + 2 * (nx - 1) + 2 * (ny - 1) + 3,
            (i2, 0) => walls + (i2 - 1),
            (i2, j2) if j2 == ny => walls + (nx - 1) + (i2 - 1),
            (0, j2) => walls + 2 * (nx - 1) + (j2 - 1),
            (i2, j2) if i2 == nx => walls + 2 * (nx - 1) + (ny - 1) + (j2 - 1),
            (i2, j2) => interior(i2, j2),
        }
    }

    pub fn total_area(&self) -> f64 {
        self.elems.iter().map(|e| e.area).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn square_grid_cell_count() {
        let g = Grid::square(512e3, 8e3).unwrap();
        assert_eq!((g.nx, g.ny), (64, 64));
        assert_eq!(g.n_cells(), 4096);
        assert_eq!(g.n_vertices(), 65 * 65);
        assert_eq!(g.n_edges(), 64 * 65 * 2);
        assert_eq!(g.n_boundary_edges(), 256);
    }

    #[test]
    fn non_divisible_domain_is_rejected() {
        let err = Grid::square(512e3, 7.3e3).unwrap_err();
        assert!(matches!(err, Error::NonDivisibleDomain { .. }), "{err}");
    }

    #[test]
    fn edge_indexing_round_trips() {
        let g = Grid::square(40.0, 10.0).unwrap(); // 4x4
        for e in 0..g.n_edges() {
            let (i, j) = g.edge_ij(e);
            let back = if g.edge_is_x(e) {
                g.x_edge_id(i, j)
            } else {
                g.y_edge_id(i, j)
            };
            assert_eq!(back, e);
        }
        // Hand-checked midpoints on the 4x4 grid.
        assert_eq!(g.edge_midpoint(g.x_edge_id(0, 0)), (5.0, 0.0));
        assert_eq!(g.edge_midpoint(g.x_edge_id(2, 3)), (25.0, 30.0));
        assert_eq!(g.edge_midpoint(g.y_edge_id(0, 0)), (0.0, 5.0));
        assert_eq!(g.edge_midpoint(g.y_edge_id(4, 2)), (40.0, 25.0));
    }

    #[test]
    fn boundary_masks_count_the_walls() {
        let g = Grid::square(512e3, 8e3).unwrap();
        let nb_edges = (0..g.n_edges()).filter(|&e| g.edge_is_boundary(e)).count();
        assert_eq!(nb_edges, 256);
        let nb_verts = (0..g.n_vertices())
            .filter(|&v| g.vertex_is_boundary(v))
            .count();
        assert_eq!(nb_verts, 4 * 64);
    }

    #[test]
    fn dof_counts_match_the_closed_forms() {
        let g = Grid::square(512e3, 8e3).unwrap();
        let cd = g.dof_counts(Staggering::Cd1);
        assert_eq!(cd.velocity_dof, 16_384); // 8N/2
        assert_eq!(cd.velocity_dof_exact, 2 * g.n_edges());
        assert_eq!(cd.tracer_dof, 8192);
        let b = g.dof_counts(Staggering::B);
        assert_eq!(b.velocity_dof, 8192); // 8N/4
        assert_eq!(b.velocity_dof_exact, 2 * 65 * 65);
    }

    #[test]
    fn doubled_cell_vertex_grid_matches_edge_staggering_dof() {
        // A 2N-cell grid with square domain: 128 x 64 cells of 4 km x 8 km.
        let g2 = Grid::rect(512e3, 512e3, 4e3, 8e3).unwrap();
        assert_eq!(g2.n_cells(), 8192);
        let b = g2.dof_counts(Staggering::B);
        let base = Grid::square(512e3, 8e3).unwrap().dof_counts(Staggering::Cd1);
        assert_eq!(b.velocity_dof, base.velocity_dof);
        assert_eq!(b.velocity_dof, 16_384);
    }

    #[test]
    fn diamond_mesh_2x2_enumeration() {
        // Hand enumeration for the 2x2 grid: 4 cell-centered diamonds, one
        // interior-vertex diamond, and 8 boundary triangles (4 wall cuts +
        // 4 corner cuts), tiling the domain exactly.
        let g = Grid::square(2.0, 1.0).unwrap();
        let dm = g.diamond_mesh().unwrap();
        assert_eq!(dm.n_full(), 5);
        assert_eq!(dm.n_triangles(), 8);
        assert_eq!(dm.n_triangles(), g.n_boundary_edges());
        assert_eq!(dm.nodes.len(), g.n_edges());
        assert_relative_eq!(dm.total_area(), 4.0, max_relative = 1e-12);
    }

    #[test]
    fn diamond_counts_on_a_larger_grid() {
        let g = Grid::square(512e3, 8e3).unwrap();
        let dm = g.diamond_mesh().unwrap();
        assert_eq!(dm.n_full(), 4096 + 63 * 63);
        assert_eq!(dm.n_triangles(), 256);
        assert_eq!(dm.elems.len(), g.dof_counts(Staggering::Cd2).elements);
        assert_relative_eq!(dm.total_area(), 512e3 * 512e3, max_relative = 1e-12);
    }

    #[test]
    fn full_diamonds_have_side_h_over_sqrt2() {
        let g = Grid::square(32e3, 8e3).unwrap();
        let dm = g.diamond_mesh().unwrap();
        let side = 8e3 / 2.0f64.sqrt();
        for e in dm.elems.iter().filter(|e| e.shape == DiamondShape::Full) {
            for k in 0..4 {
                let a = dm.nodes[e.nodes[k] as usize];
                let b = dm.nodes[e.nodes[(k + 1) % 4] as usize];
                let len = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
                assert_relative_eq!(len, side, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn diamond_nodes_are_exactly_the_edge_midpoints() {
        let g = Grid::square(48.0, 8.0).unwrap();
        let dm = g.diamond_mesh().unwrap();
        assert_eq!(dm.nodes.len(), g.n_edges());
        for e in 0..g.n_edges() {
            assert_eq!(dm.nodes[e], g.edge_midpoint(e));
            assert_eq!(dm.node_boundary[e], g.edge_is_boundary(e));
        }
    }

    #[test]
    fn diamond_point_lookup_agrees_with_geometry() {
        let g = Grid::square(40.0, 8.0).unwrap();
        let dm = g.diamond_mesh().unwrap();
        // Sample a dense lattice of interior points and verify the chosen
        // element's center is within L1 distance h/2 (containment).
        let mut n = 0usize;
        for jy in 0..37 {
            for ix in 0..37 {
                let (x, y) = (0.55 + ix as f64 * 1.07, 0.45 + jy as f64 * 1.06);
                let e = dm.elem_of_point(x, y);
                let anchor_xy = match dm.elems[e].anchor {
                    DiamondAnchor::Cell(c) => g.cell_center(c as usize),
                    DiamondAnchor::Vertex(v) => g.vertex_xy(v as usize),
                };
                let l1 = (x - anchor_xy.0).abs() + (y - anchor_xy.1).abs();
                assert!(
                    l1 <= 4.0 + 1e-9,
                    "point ({x}, {y}) mapped to element {e} with L1 distance {l1}"
                );
                n += 1;
            }
        }
        assert_eq!(n, 37 * 37);
    }

    #[test]
    fn diamond_requires_square_cells_and_two_cells_per_axis() {
        let rect = Grid::rect(40.0, 40.0, 10.0, 8.0).unwrap();
        assert!(matches!(
            rect.diamond_mesh().unwrap_err(),
            Error::NonSquareCells { .. }
        ));
        let tiny = Grid::square(8.0, 8.0).unwrap();
        assert!(matches!(
            tiny.diamond_mesh().unwrap_err(),
            Error::GridTooSmall { .. }
        ));
    }

    #[test]
    fn tracer_weights_sum_to_one_on_every_diamond() {
        let g = Grid::square(48.0, 8.0).unwrap();
        let dm = g.diamond_mesh().unwrap();
        for e in &dm.elems {
            let s: f64 = e.tracer_weights[..e.n_tracer as usize].iter().sum();
            assert_relative_eq!(s, 1.0, max_relative = 1e-15);
        }
    }
}
