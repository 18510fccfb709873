//! Fixed problem instances for the criterion benches.

use bvfield::assembly::{BoundaryCondition, OperatorSpec};
use bvfield::gaussian::ObservationSet;
use bvfield::mesh::{Grid2D, Mesh, Mesh1D};
use bvfield::{assemble, Result, SparsePrecision};

/// An assembled model together with the mesh and operator that built it.
pub struct Instance {
    pub mesh: Mesh,
    pub spec: OperatorSpec,
    pub precision: SparsePrecision,
}

impl Instance {
    fn build(mesh: Mesh, spec: OperatorSpec) -> Result<Self> {
        let precision = assemble(&mesh, &spec)?;
        Ok(Instance { mesh, spec, precision })
    }

    /// Dirichlet interval `(0, 1)` with one interface at 0.5.
    pub fn interval(elements: usize) -> Result<Self> {
        let mesh = Mesh::Interval(Mesh1D::uniform_interval(1.0, elements, &[0.5])?);
        let spec = OperatorSpec::whittle(2.0)
            .with_all_bcs(&mesh, BoundaryCondition::Dirichlet)
            .with_all_interfaces(&mesh, 5.0);
        Self::build(mesh, spec)
    }

    /// `2 × 1` grid with mixed boundary conditions and an interface at x = 1.
    pub fn grid(nx: usize) -> Result<Self> {
        let mesh = Mesh::Grid(Grid2D::uniform_grid(2.0, 1.0, nx, nx / 2, &[1.0])?);
        let spec = OperatorSpec::whittle(3.0)
            .with_all_bcs(&mesh, BoundaryCondition::Neumann)
            .with_bc("left", BoundaryCondition::Dirichlet)
            .with_all_interfaces(&mesh, 5.0);
        Self::build(mesh, spec)
    }

    /// `k` noisy point observations spread across the domain.
    pub fn observations(&self, k: usize) -> Result<ObservationSet> {
        let two_d = self.mesh.dim() == 2;
        let (w, h) = if two_d { (2.0, 1.0) } else { (1.0, 0.0) };
        let points: Vec<[f64; 2]> = (0..k)
            .map(|i| {
                let u = (i as f64 + 0.5) / k as f64;
                [w * u, h * (0.5 + 0.4 * (7.0 * u).sin())]
            })
            .collect();
        let values: Vec<f64> = points.iter().map(|p| (3.0 * p[0]).sin() + p[1]).collect();
        ObservationSet::point_observations(&self.precision, &self.mesh, &points, &values, &vec![0.1; k])
    }
}
