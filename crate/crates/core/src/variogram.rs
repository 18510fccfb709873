//! Exact and empirical variograms, boundary/interface pair classes, pullback
//! covariances, and the Dirichlet/Neumann and interface-penalty comparisons.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble, assemble_1d, BoundaryCondition, DiffusionField, OperatorSpec, ScalarField};
use crate::error::{FieldError, Result};
use crate::kernels::{green_dirichlet_1d, green_interface_1d, green_neumann_1d, CovarianceKernel, Kernel1DParams};
use crate::mesh::{Coord, InterfaceCut, Mesh, Mesh1D};

/// Largest node count accepted by the dense comparisons.
pub const MAX_DENSE_NODES: usize = 2000;

/// `γ_ij = ½(C_ii + C_jj − 2C_ij)` over all indices of `c`, clamped at zero.
pub fn variogram_matrix(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if c.nrows() != c.ncols() {
        return Err(FieldError::Domain(format!("covariance is {}x{}", c.nrows(), c.ncols())));
    }
    let n = c.nrows();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            (0.5 * (c[(i, i)] + c[(j, j)] - 2.0 * c[(i, j)])).max(0.0)
        }
    }))
}

/// [`variogram_matrix`] restricted to the listed indices.
pub fn variogram_at(c: &DMatrix<f64>, idx: &[usize]) -> Result<DMatrix<f64>> {
    if let Some(&i) = idx.iter().find(|&&i| i >= c.nrows()) {
        return Err(FieldError::Domain(format!("index {i} outside a {}-point covariance", c.nrows())));
    }
    variogram_matrix(&c.select_rows(idx).select_columns(idx))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairClass {
    All,
    Interior,
    NearBoundary,
    SameSide,
    CrossInterface,
}

impl PairClass {
    pub const ORDER: [PairClass; 5] = [
        PairClass::All,
        PairClass::Interior,
        PairClass::NearBoundary,
        PairClass::SameSide,
        PairClass::CrossInterface,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PairClass::All => "all",
            PairClass::Interior => "interior",
            PairClass::NearBoundary => "near_boundary",
            PairClass::SameSide => "same_side",
            PairClass::CrossInterface => "cross_interface",
        }
    }
}

/// Lag bin edges, strictly increasing. The last bin is closed on the right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagBins {
    edges: Vec<f64>,
}

impl LagBins {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) || edges.iter().any(|e| !e.is_finite()) {
            return Err(FieldError::Config("lag bin edges must be finite and strictly increasing".into()));
        }
        Ok(LagBins { edges })
    }

    /// `count` equal bins on `[0, max_lag]`.
    pub fn uniform(max_lag: f64, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(FieldError::Config("need at least one lag bin".into()));
        }
        Self::new((0..=count).map(|i| max_lag * i as f64 / count as f64).collect())
    }

    /// 15 bins up to half the mesh diameter.
    pub fn default_for(mesh: &Mesh) -> Self {
        Self::uniform(0.5 * mesh.diameter(), 15).expect("mesh diameter is positive")
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn center(&self, bin: usize) -> f64 {
        0.5 * (self.edges[bin] + self.edges[bin + 1])
    }

    pub fn bin_of(&self, lag: f64) -> Option<usize> {
        let last = *self.edges.last()?;
        if lag < self.edges[0] || lag > last {
            return None;
        }
        if lag == last {
            return Some(self.len() - 1);
        }
        Some(self.edges.partition_point(|&e| e <= lag) - 1)
    }
}

/// Axis-aligned bounding box of the domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub dim: usize,
    pub lo: Coord,
    pub hi: Coord,
}

impl DomainBox {
    pub fn of(mesh: &Mesh) -> Self {
        match mesh {
            Mesh::Interval(m) => {
                let (a, b) = m.domain();
                DomainBox { dim: 1, lo: [a, 0.0], hi: [b, 0.0] }
            }
            Mesh::Grid(g) => {
                let (xs, ys) = (g.x_nodes(), g.y_nodes());
                DomainBox { dim: 2, lo: [xs[0], ys[0]], hi: [xs[xs.len() - 1], ys[ys.len() - 1]] }
            }
        }
    }

    pub fn boundary_distance(&self, p: &Coord) -> f64 {
        let mut d = (p[0] - self.lo[0]).min(self.hi[0] - p[0]);
        if self.dim == 2 {
            d = d.min(p[1] - self.lo[1]).min(self.hi[1] - p[1]);
        }
        d
    }
}

/// Pair-class rules: a pair is near the boundary if either endpoint lies
/// within `buffer` of it, and crosses an interface if some cut separates it.
#[derive(Debug, Clone, PartialEq)]
pub struct PairClassConfig {
    pub buffer: f64,
    pub cuts: Vec<InterfaceCut>,
    pub domain: DomainBox,
}

impl PairClassConfig {
    /// Buffer `1/m` and the mesh's own interfaces.
    pub fn for_mesh(mesh: &Mesh, m: f64) -> Self {
        PairClassConfig { buffer: 1.0 / m, cuts: mesh.interface_cuts(), domain: DomainBox::of(mesh) }
    }

    pub fn with_buffer(self, buffer: f64) -> Self {
        PairClassConfig { buffer, ..self }
    }

    pub fn near_boundary(&self, p: &Coord) -> bool {
        self.domain.boundary_distance(p) < self.buffer
    }

    pub fn crosses(&self, a: &Coord, b: &Coord) -> bool {
        self.cuts.iter().any(|c| c.separates(a, b))
    }

    /// Every class the pair belongs to; `All` first.
    pub fn classes(&self, a: &Coord, b: &Coord) -> [PairClass; 3] {
        let zone = if self.near_boundary(a) || self.near_boundary(b) {
            PairClass::NearBoundary
        } else {
            PairClass::Interior
        };
        let side = if self.crosses(a, b) { PairClass::CrossInterface } else { PairClass::SameSide };
        [PairClass::All, zone, side]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariogramRow {
    pub lag: f64,
    pub class: PairClass,
    pub count: usize,
    pub semivariance: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VariogramTable {
    pub rows: Vec<VariogramRow>,
}

impl VariogramTable {
    pub fn get(&self, class: PairClass, lag: f64) -> Option<&VariogramRow> {
        self.rows.iter().find(|r| r.class == class && r.lag == lag)
    }

    pub fn class_rows(&self, class: PairClass) -> impl Iterator<Item = &VariogramRow> {
        self.rows.iter().filter(move |r| r.class == class)
    }

    /// `lag,class,count,semivariance` with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lag,class,count,semivariance\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.lag, r.class.as_str(), r.count, r.semivariance);
        }
        out
    }
}

/// Empirical semivariances from `samples` (one row per point, one column per
/// realization), averaged over pairs and realizations per class and lag bin.
/// Empty class/bin cells are left out.
pub fn empirical_variogram(
    samples: &DMatrix<f64>,
    points: &[Coord],
    bins: &LagBins,
    classes: &PairClassConfig,
) -> Result<VariogramTable> {
    if samples.nrows() != points.len() {
        return Err(FieldError::Domain(format!(
            "{} sample rows for {} points",
            samples.nrows(),
            points.len()
        )));
    }
    if samples.ncols() < 2 {
        return Err(FieldError::Domain("need at least two samples".into()));
    }
    let ns = samples.ncols() as f64;
    let nb = bins.len();
    let mut sums = vec![0.0; PairClass::ORDER.len() * nb];
    let mut counts = vec![0usize; PairClass::ORDER.len() * nb];
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let (a, b) = (&points[i], &points[j]);
            let lag = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            let Some(bin) = bins.bin_of(lag) else { continue };
            let g: f64 = samples
                .row(i)
                .iter()
                .zip(samples.row(j).iter())
                .map(|(x, y)| 0.5 * (x - y) * (x - y))
                .sum::<f64>()
                / ns;
            for class in classes.classes(a, b) {
                let k = class as usize * nb + bin;
                sums[k] += g;
                counts[k] += 1;
            }
        }
    }
    let mut rows = Vec::new();
    for class in PairClass::ORDER {
        for bin in 0..nb {
            let k = class as usize * nb + bin;
            if counts[k] > 0 {
                rows.push(VariogramRow {
                    lag: bins.center(bin),
                    class,
                    count: counts[k],
                    semivariance: sums[k] / counts[k] as f64,
                });
            }
        }
    }
    Ok(VariogramTable { rows })
}

/// `C_Z(x, x′) = C_W(f(x), f(x′))` over `points`. Errors from `f` or from
/// the kernel (a mapped point outside its domain) are passed through.
pub fn pullback_covariance<P, Q, K, F>(kernel: &K, f: F, points: &[P]) -> Result<DMatrix<f64>>
where
    K: CovarianceKernel<Q> + ?Sized,
    F: Fn(&P) -> Result<Q>,
{
    let mapped = points.iter().map(&f).collect::<Result<Vec<Q>>>()?;
    let n = mapped.len();
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = kernel.covariance(&mapped[i], &mapped[j])?;
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    Ok(c)
}

/// Node-indexed covariance `Q⁻¹` with zero rows/columns at eliminated
/// (Dirichlet) nodes.
pub fn nodal_covariance(mesh: &Mesh, spec: &OperatorSpec) -> Result<DMatrix<f64>> {
    let n = mesh.node_count();
    if n > MAX_DENSE_NODES {
        return Err(FieldError::Config(format!("{n} nodes exceed the dense limit of {MAX_DENSE_NODES}")));
    }
    let q = assemble(mesh, spec)?;
    let c = q.factor()?.inverse();
    let mut out = DMatrix::zeros(n, n);
    for a in 0..q.dim() {
        for b in 0..q.dim() {
            out[(q.dof_node(a), q.dof_node(b))] = c[(a, b)];
        }
    }
    Ok(out)
}

/// Constant `(a, c)` of a 1D operator, or `None` when coefficients vary.
fn constant_coefficients(spec: &OperatorSpec) -> Option<(f64, f64)> {
    let a = match &spec.diffusion {
        DiffusionField::Isotropic(ScalarField::Constant { value }) => *value,
        _ => return None,
    };
    let c = match &spec.reaction {
        ScalarField::Constant { value } => *value,
        _ => return None,
    };
    Some((a * spec.diffusion_scale, c))
}

fn uniform_bc(mesh: &Mesh1D, spec: &OperatorSpec) -> Option<BoundaryCondition> {
    let l = spec.bcs.get(mesh.boundary_left())?;
    let r = spec.bcs.get(mesh.boundary_right())?;
    (l == r).then_some(*l)
}

/// Closed-form covariance of a constant-coefficient 1D model when one
/// exists: uniform Dirichlet or Neumann ends and no interfaces, or Dirichlet
/// ends on a symmetric interval with a single interface at its midpoint.
pub fn analytic_covariance_1d(mesh: &Mesh1D, spec: &OperatorSpec) -> Option<impl Fn(f64, f64) -> Result<f64>> {
    let (a, c) = constant_coefficients(spec)?;
    if !(a > 0.0 && c > 0.0) {
        return None;
    }
    let m = (c / a).sqrt();
    let (lo, hi) = mesh.domain();
    let bc = uniform_bc(mesh, spec)?;
    let ifaces = mesh.interfaces();
    #[derive(Clone, Copy)]
    enum Form {
        D,
        N,
        I,
    }
    let (form, params, shift) = match (bc, ifaces.len()) {
        (BoundaryCondition::Dirichlet, 0) => (Form::D, Kernel1DParams::new(m, hi - lo).ok()?, lo),
        (BoundaryCondition::Neumann, 0) => (Form::N, Kernel1DParams::new(m, hi - lo).ok()?, lo),
        (BoundaryCondition::Dirichlet, 1) => {
            let x0 = mesh.nodes()[ifaces[0].node];
            let half = 0.5 * (hi - lo);
            if (lo + hi).abs() > 1e-12 * half || x0.abs() > 1e-12 * half {
                return None;
            }
            let alpha = spec.interface_penalties.get(&ifaces[0].id).copied().unwrap_or(0.0) / a;
            (Form::I, Kernel1DParams::with_alpha(m, half, alpha).ok()?, 0.0)
        }
        _ => return None,
    };
    Some(move |x: f64, y: f64| {
        let (x, y) = (x - shift, y - shift);
        let g = match form {
            Form::D => green_dirichlet_1d(&params, x, y)?,
            Form::N => green_neumann_1d(&params, x, y)?,
            Form::I => green_interface_1d(&params, x, y)?,
        };
        Ok(g / a)
    })
}

/// One node's row of the boundary-condition comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BcSummaryRow {
    pub coord: Coord,
    pub boundary_distance: f64,
    /// Semivariance to the reference node under each model.
    pub gamma_d: f64,
    pub gamma_n: f64,
    /// Largest `|γ_D − γ_N|` over the node's row.
    pub max_abs_diff: f64,
    pub analytic_d: Option<f64>,
    pub analytic_n: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcComparison {
    pub coords: Vec<Coord>,
    pub gamma_d: DMatrix<f64>,
    pub gamma_n: DMatrix<f64>,
    /// Node closest to the domain centre, the reference of the summary.
    pub reference: usize,
    pub summary: Vec<BcSummaryRow>,
}

impl BcComparison {
    pub fn difference(&self) -> DMatrix<f64> {
        &self.gamma_d - &self.gamma_n
    }

    /// Node pair where `|γ_D − γ_N|` is largest.
    pub fn argmax_difference(&self) -> (usize, usize) {
        let d = self.difference().abs();
        let mut best = (0, 0);
        for i in 0..d.nrows() {
            for j in 0..d.ncols() {
                if d[(i, j)] > d[best] {
                    best = (i, j);
                }
            }
        }
        best
    }

    pub fn summary_csv(&self, dim: usize) -> String {
        let mut out = String::from(if dim == 1 { "x," } else { "x,y," });
        out.push_str("boundary_distance,gamma_d,gamma_n,diff,max_abs_diff,analytic_gamma_d,analytic_gamma_n\n");
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.summary {
            if dim == 1 {
                let _ = write!(out, "{},", r.coord[0]);
            } else {
                let _ = write!(out, "{},{},", r.coord[0], r.coord[1]);
            }
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.boundary_distance,
                r.gamma_d,
                r.gamma_n,
                r.gamma_d - r.gamma_n,
                r.max_abs_diff,
                opt(r.analytic_d),
                opt(r.analytic_n)
            );
        }
        out
    }
}

/// Assembles `dirichlet` and `neumann` on the same mesh, inverts both
/// densely and compares their nodal variograms.
pub fn bc_compare(mesh: &Mesh, dirichlet: &OperatorSpec, neumann: &OperatorSpec) -> Result<BcComparison> {
    let cd = nodal_covariance(mesh, dirichlet)?;
    let cn = nodal_covariance(mesh, neumann)?;
    let gamma_d = variogram_matrix(&cd)?;
    let gamma_n = variogram_matrix(&cn)?;
    let n = mesh.node_count();
    let coords: Vec<Coord> = (0..n).map(|i| mesh.coord(i)).collect();
    let dbox = DomainBox::of(mesh);
    let centre = [0.5 * (dbox.lo[0] + dbox.hi[0]), 0.5 * (dbox.lo[1] + dbox.hi[1])];
    let reference = (0..n)
        .min_by(|&a, &b| {
            let da = (coords[a][0] - centre[0]).hypot(coords[a][1] - centre[1]);
            let db = (coords[b][0] - centre[0]).hypot(coords[b][1] - centre[1]);
            da.total_cmp(&db)
        })
        .unwrap_or(0);
    let analytic = |spec: &OperatorSpec, i: usize| -> Option<f64> {
        let Mesh::Interval(m1) = mesh else { return None };
        let k = analytic_covariance_1d(m1, spec)?;
        let (x, r) = (coords[i][0], coords[reference][0]);
        let g = 0.5 * (k(x, x).ok()? + k(r, r).ok()? - 2.0 * k(x, r).ok()?);
        Some(g.max(0.0))
    };
    let summary = (0..n)
        .map(|i| BcSummaryRow {
            coord: coords[i],
            boundary_distance: mesh.boundary_distance(&coords[i]),
            gamma_d: gamma_d[(i, reference)],
            gamma_n: gamma_n[(i, reference)],
            max_abs_diff: (0..n).map(|j| (gamma_d[(i, j)] - gamma_n[(i, j)]).abs()).fold(0.0, f64::max),
            analytic_d: analytic(dirichlet, i),
            analytic_n: analytic(neumann, i),
        })
        .collect();
    Ok(BcComparison { coords, gamma_d, gamma_n, reference, summary })
}

/// `base` with every boundary piece set to Dirichlet, and to Neumann.
pub fn bc_pair(mesh: &Mesh, base: &OperatorSpec) -> (OperatorSpec, OperatorSpec) {
    (
        base.clone().with_all_bcs(mesh, BoundaryCondition::Dirichlet),
        base.clone().with_all_bcs(mesh, BoundaryCondition::Neumann),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub x: f64,
    pub fem: f64,
    pub analytic: Option<f64>,
    pub cross_interface: bool,
}

/// Covariance between a fixed source point and every node, for one `α`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCurve {
    pub alpha: f64,
    pub points: Vec<SweepPoint>,
}

/// For each `α`, assembles `base` with every interface at `α` and reports
/// the covariance column of the node nearest `source`, with the closed-form
/// value alongside when [`analytic_covariance_1d`] applies.
pub fn interface_sweep(mesh: &Mesh1D, base: &OperatorSpec, alphas: &[f64], source: f64) -> Result<Vec<SweepCurve>> {
    if mesh.interfaces().is_empty() {
        return Err(FieldError::Config("interface sweep needs a mesh with an interface".into()));
    }
    let wrapped = Mesh::Interval(mesh.clone());
    let w = mesh.interpolation_weights(source)?;
    let src_node = w.iter().max_by(|a, b| a.1.total_cmp(&b.1)).map(|p| p.0).unwrap_or(0);
    let src_x = mesh.nodes()[src_node];
    let cuts = wrapped.interface_cuts();
    alphas
        .iter()
        .map(|&alpha| {
            if !(alpha >= 0.0) {
                return Err(FieldError::Model(format!("alpha must be nonnegative, got {alpha}")));
            }
            let spec = base.clone().with_all_interfaces(&wrapped, alpha);
            let q = assemble_1d(mesh, &spec)?;
            let Some(sd) = q.node_dof(src_node) else {
                return Err(FieldError::Domain(format!("source {source} sits on an eliminated boundary node")));
            };
            let mut e = vec![0.0; q.dim()];
            e[sd] = 1.0;
            let col = q.factor()?.solve(&e);
            let analytic = analytic_covariance_1d(mesh, &spec);
            let points = (0..mesh.nodes().len())
                .map(|node| {
                    let x = mesh.nodes()[node];
                    let fem = q.node_dof(node).map_or(0.0, |d| col[d]);
                    let analytic = analytic.as_ref().and_then(|k| k(src_x, x).ok());
                    let cross_interface = cuts.iter().any(|c| c.separates(&[src_x, 0.0], &[x, 0.0]));
                    Ok(SweepPoint { x, fem, analytic, cross_interface })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SweepCurve { alpha, points })
        })
        .collect()
}

/// `alpha,x,fem_cov,analytic_cov,cross_interface` rows for every curve.
pub fn sweep_csv(curves: &[SweepCurve]) -> String {
    let mut out = String::from("alpha,x,fem_cov,analytic_cov,cross_interface\n");
    for c in curves {
        for p in &c.points {
            let a = p.analytic.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{}", c.alpha, p.x, p.fem, a, u8::from(p.cross_interface));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{FnKernel, Kernel1D};
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_covariance() {
        let g = variogram_matrix(&DMatrix::identity(4, 4)).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(g[(i, j)], if i == j { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn constant_diagonal_reduces_to_difference() {
        let c = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 2.0, 0.7, 0.1, 0.7, 2.0]);
        let g = variogram_matrix(&c).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_abs_diff_eq!(g[(i, j)], c[(i, i)] - c[(i, j)], epsilon = 1e-15);
                }
            }
        }
        assert_eq!(variogram_at(&c, &[2, 0]).unwrap()[(0, 1)], g[(2, 0)]);
        assert!(variogram_at(&c, &[3]).is_err());
    }

    #[test]
    fn bins() {
        let b = LagBins::uniform(1.0, 4).unwrap();
        assert_eq!(b.bin_of(0.0), Some(0));
        assert_eq!(b.bin_of(0.25), Some(1));
        assert_eq!(b.bin_of(1.0), Some(3));
        assert_eq!(b.bin_of(1.01), None);
        assert_eq!(b.center(0), 0.125);
        assert!(LagBins::new(vec![0.0, 0.5, 0.5]).is_err());
        let mesh = Mesh::Interval(Mesh1D::uniform_interval(3.0, 10, &[]).unwrap());
        let d = LagBins::default_for(&mesh);
        assert_eq!(d.len(), 15);
        assert_abs_diff_eq!(*d.edges().last().unwrap(), 1.5, epsilon = 1e-15);
    }

    #[test]
    fn duplicated_sample_reproduces_increments() {
        let points: Vec<Coord> = [0.1, 0.4, 0.5, 0.9].iter().map(|&x| [x, 0.0]).collect();
        let z = [1.0, -0.5, 2.0, 0.25];
        let samples = DMatrix::from_fn(4, 2, |i, _| z[i]);
        let mesh = Mesh::Interval(Mesh1D::uniform_interval(1.0, 10, &[]).unwrap());
        let bins = LagBins::new(vec![0.0, 0.15, 0.35, 0.45, 0.85]).unwrap();
        let table = empirical_variogram(&samples, &points, &bins, &PairClassConfig::for_mesh(&mesh, 1.0)).unwrap();
        // bin [0,0.15): only the pair (0.4, 0.5)
        let r = table.get(PairClass::All, bins.center(0)).unwrap();
        assert_eq!(r.count, 1);
        assert_eq!(r.semivariance, 0.5 * (z[1] - z[2]) * (z[1] - z[2]));
        assert!(table.rows.iter().all(|r| r.count >= 1 && r.semivariance >= 0.0));
        assert!(table.to_csv().starts_with("lag,class,count,semivariance\n"));
    }

    #[test]
    fn pair_classes_partition() {
        let mesh = Mesh::Interval(Mesh1D::symmetric_interval(1.0, 20, &[0.0]).unwrap());
        let cfg = PairClassConfig::for_mesh(&mesh, 4.0);
        assert_eq!(cfg.classes(&[-0.9, 0.0], &[-0.5, 0.0])[1], PairClass::NearBoundary);
        assert_eq!(cfg.classes(&[-0.5, 0.0], &[0.5, 0.0]), [PairClass::All, PairClass::Interior, PairClass::CrossInterface]);
        assert_eq!(cfg.classes(&[-0.5, 0.0], &[-0.2, 0.0])[2], PairClass::SameSide);
    }

    #[test]
    fn too_few_samples() {
        let mesh = Mesh::Interval(Mesh1D::uniform_interval(1.0, 4, &[]).unwrap());
        let err = empirical_variogram(
            &DMatrix::zeros(2, 1),
            &[[0.1, 0.0], [0.2, 0.0]],
            &LagBins::default_for(&mesh),
            &PairClassConfig::for_mesh(&mesh, 1.0),
        );
        assert!(matches!(err, Err(FieldError::Domain(_))));
    }

    #[test]
    fn pullback_identity_contraction_and_nonstationarity() {
        let k = Kernel1D::dirichlet(Kernel1DParams::new(1.0, 1.0).unwrap());
        let pts = [0.1, 0.3, 0.8];
        let c = pullback_covariance(&k, |x: &f64| Ok(*x), &pts).unwrap();
        assert_eq!(c[(0, 2)], k.eval(0.1, 0.8).unwrap());
        let half = pullback_covariance(&k, |x: &f64| Ok(x / 2.0), &pts).unwrap();
        assert_eq!(half[(1, 2)], k.eval(0.15, 0.4).unwrap());
        assert!(matches!(pullback_covariance(&k, |x: &f64| Ok(x * 2.0), &pts), Err(FieldError::Domain(_))));

        let expo = FnKernel(|a: &f64, b: &f64| Ok((-(a - b).abs()).exp()));
        let c = pullback_covariance(&expo, |x: &f64| Ok(x * x), &[0.0, 0.5, 1.0]).unwrap();
        assert_abs_diff_eq!(c[(0, 1)], (-0.25f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(c[(1, 2)], (-0.75f64).exp(), epsilon = 1e-15);
        assert!((c[(0, 1)] - c[(1, 2)]).abs() > 0.1);
    }

    #[test]
    fn dirichlet_fem_variogram_matches_kernel() {
        let mesh = Mesh::Interval(Mesh1D::uniform_interval(1.0, 200, &[]).unwrap());
        let spec = OperatorSpec::whittle(1.0).with_all_bcs(&mesh, BoundaryCondition::Dirichlet);
        let c = nodal_covariance(&mesh, &spec).unwrap();
        let g = variogram_matrix(&c).unwrap();
        assert!((g[(50, 150)] - 0.1224594).abs() < 1e-3);
    }

    #[test]
    fn bc_compare_small() {
        let mesh = Mesh::Interval(Mesh1D::uniform_interval(1.0, 40, &[]).unwrap());
        let (d, n) = bc_pair(&mesh, &OperatorSpec::whittle(1.0));
        let cmp = bc_compare(&mesh, &d, &n).unwrap();
        assert_ne!(cmp.gamma_d, cmp.gamma_n);
        assert!(cmp.gamma_d.diagonal().iter().all(|&v| v == 0.0));
        assert!(cmp.gamma_n.diagonal().iter().all(|&v| v == 0.0));
        assert_eq!(cmp.reference, 20);
        for r in &cmp.summary {
            assert!((r.gamma_n - r.analytic_n.unwrap()).abs() < 2e-3);
            assert!((r.gamma_d - r.analytic_d.unwrap()).abs() < 2e-3);
        }
        assert_eq!(cmp.summary_csv(1).lines().count(), 42);
    }

    #[test]
    fn sweep_is_monotone_across_interface() {
        let mesh = Mesh1D::symmetric_interval(1.0, 100, &[0.0]).unwrap();
        let base = OperatorSpec::whittle(1.0).with_all_bcs(&Mesh::Interval(mesh.clone()), BoundaryCondition::Dirichlet);
        let curves = interface_sweep(&mesh, &base, &[0.0, 1.0, 10.0, 100.0], -0.3).unwrap();
        for k in 0..curves[0].points.len() {
            if curves[0].points[k].cross_interface {
                for w in curves.windows(2) {
                    assert!(w[1].points[k].fem <= w[0].points[k].fem + 1e-15);
                }
            }
        }
        for c in &curves {
            for p in &c.points {
                assert!((p.fem - p.analytic.unwrap()).abs() < 2e-3);
            }
        }
    }
}
