//! Gaussian random fields defined by elliptic precision operators on bounded
//! intervals and rectangles.
//!
//! Boundary conditions and internal interfaces are part of the model: they
//! enter the assembled precision, hence the covariance (its inverse), the
//! variogram, and every kriging prediction built on it.
//!
//! Module map:
//! - [`mesh`]: interval meshes and structured grids with boundary/interface tags
//! - [`kernels`]: closed-form 1D Green kernels used as reference solutions
//! - [`assembly`]: Galerkin precision assembly and interval × circle modes
//! - [`gaussian`]: conditioning, Schur/DtN reduction, sampling
//! - [`inference`]: marginal likelihood and Nelder–Mead fitting
//! - [`variogram`]: exact/empirical variograms and pair-class diagnostics
//! - [`sparse`]: CSR storage and the sparse Cholesky backend

pub mod assembly;
pub mod error;
pub mod gaussian;
pub mod inference;
pub mod kernels;
pub mod mesh;
pub mod sparse;
pub mod variogram;

pub use assembly::{
    assemble, assemble_1d, assemble_2d, BoundaryCondition, CircleFactor, ModeSystem, OperatorSpec,
    ScalarField, SparsePrecision,
};
pub use error::{FieldError, Result};
pub use gaussian::{ObservationSet, Posterior};

pub use mesh::{Coord, Grid2D, Mesh, Mesh1D};
pub use sparse::{CsrMatrix, SparseCholesky};
