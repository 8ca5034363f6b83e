//! Sea-ice dynamics on structured quadrilateral grids.
//!
//! The crate solves the vertically integrated viscous-plastic momentum
//! equation for sea ice together with upwind transport of ice thickness and
//! concentration, on a square domain with velocity unknowns placed either at
//! cell vertices (B staggering) or at edge midpoints (CD staggerings).  Three
//! momentum solvers are provided (implicit Picard, EVP subcycling, mEVP
//! iteration), plus an image-based detector that counts linear kinematic
//! features in the simulated deformation field.
//!
//! Modules:
//! - [`grid`]: structured grid entities, staggerings, degree-of-freedom counts
//! - [`rheology`]: pointwise viscous-plastic constitutive kernels
//! - [`fem`]: strain, stress divergence, lumped mass, edge stabilization
//! - [`momentum`]: the three momentum solvers and their telemetry
//! - [`transport`]: donor-cell upwind advection of tracers
//! - [`benchmark`]: the moving-cyclone experiment (forcing, time loop)
//! - [`lkf`]: deformation regridding and kinematic-feature detection
//! - [`io`]: field dumps, sidecars, telemetry and summary tables
//! - [`experiment`]: multi-run matrices and summary aggregation

pub mod benchmark;
pub mod error;
pub mod experiment;
pub mod fem;
pub mod grid;
pub mod io;
pub mod lkf;
pub mod momentum;
pub mod rheology;
pub mod transport;

pub use benchmark::{BenchmarkConfig, RunResult};
pub use error::{Error, Result};
pub use experiment::{ExperimentMatrix, MatrixReport};
pub use fem::Operators;
pub use grid::{DofReport, Grid, Staggering};
pub use io::{RunReader, RunWriter, SummaryRow};
pub use lkf::{DeformationImage, DetectorParams, LkfSegment, LkfStats};
pub use momentum::{MomentumParams, SolverConfig, SolverScheme};
pub use rheology::{RheologyParams, StrainRate, Stress};
