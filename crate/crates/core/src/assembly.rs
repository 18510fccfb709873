//! Galerkin assembly of precision matrices from the bilinear form
//! `a(u,v) = ∫ ∇u·A∇v + ∫ c·u·v` plus boundary and interface terms, and the
//! mode decomposition of operators on `interval × circle`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FieldError, Result};
use crate::mesh::{Coord, Grid2D, Mesh, Mesh1D};
use crate::sparse::{CsrMatrix, SparseCholesky};

/// Scalar coefficient field over the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScalarField {
    Constant { value: f64 },
    /// `values[k]` holds on the k-th slab cut by the ascending `breaks` in x.
    PiecewiseX { breaks: Vec<f64>, values: Vec<f64> },
    /// `c0 + cx·x + cy·y`.
    Affine {
        c0: f64,
        cx: f64,
        #[serde(default)]
        cy: f64,
    },
}

impl ScalarField {
    pub fn constant(value: f64) -> Self {
        ScalarField::Constant { value }
    }

    pub fn eval(&self, p: &Coord) -> f64 {
        match self {
            ScalarField::Constant { value } => *value,
            ScalarField::PiecewiseX { breaks, values } => {
                values[breaks.partition_point(|&b| b <= p[0])]
            }
            ScalarField::Affine { c0, cx, cy } => c0 + cx * p[0] + cy * p[1],
        }
    }

    fn validate(&self) -> Result<()> {
        if let ScalarField::PiecewiseX { breaks, values } = self {
            if values.len() != breaks.len() + 1 {
                return Err(FieldError::Config(format!(
                    "piecewise_x needs {} values for {} breaks",
                    breaks.len() + 1,
                    breaks.len()
                )));
            }
            if breaks.windows(2).any(|w| w[1] <= w[0]) {
                return Err(FieldError::Config("piecewise_x breaks must increase".into()));
            }
        }
        Ok(())
    }
}

/// Diffusion coefficient: a scalar multiple of the identity, or a constant
/// symmetric 2×2 tensor (2D only). In files a tensor is written
/// `{"type": "tensor", "xx": .., "xy": .., "yy": ..}`; anything else is read
/// as a scalar field.
#[derive(Debug, Clone, PartialEq)]
pub enum DiffusionField {
    Tensor(TensorCoefficient),
    Isotropic(ScalarField),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorCoefficient {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Serialize for DiffusionField {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            DiffusionField::Isotropic(f) => f.serialize(s),
            DiffusionField::Tensor(t) => serde_json::json!({
                "type": "tensor", "xx": t.xx, "xy": t.xy, "yy": t.yy
            })
            .serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for DiffusionField {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let mut value = serde_json::Value::deserialize(d)?;
        if let Some(v) = value.as_f64() {
            return Ok(DiffusionField::Isotropic(ScalarField::constant(v)));
        }
        let is_tensor = value.get("type").and_then(|t| t.as_str()) == Some("tensor");
        if is_tensor {
            value.as_object_mut().map(|o| o.remove("type"));
            serde_json::from_value(value).map(DiffusionField::Tensor).map_err(D::Error::custom)
        } else {
            serde_json::from_value(value).map(DiffusionField::Isotropic).map_err(D::Error::custom)
        }
    }
}

impl DiffusionField {
    /// `[[xx, xy], [xy, yy]]` at `p`.
    pub fn eval(&self, p: &Coord) -> [f64; 3] {
        match self {
            DiffusionField::Isotropic(f) => {
                let a = f.eval(p);
                [a, 0.0, a]
            }
            DiffusionField::Tensor(t) => [t.xx, t.xy, t.yy],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BoundaryCondition {
    /// Homogeneous `u = 0`, enforced by eliminating the boundary nodes.
    Dirichlet,
    /// Natural condition; contributes nothing.
    Neumann,
    /// Adds `β ∫_∂ u v`.
    Robin { beta: f64 },
}

/// Coefficients, boundary conditions and interface penalties of an operator
/// `-∇·(s·A∇u) + c·u`, with `s` the diffusion scale.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatorSpec {
    pub diffusion: DiffusionField,
    /// Multiplies the diffusion; `1/(2πα′)` in the `α′, m` parameterization.
    pub diffusion_scale: f64,
    pub reaction: ScalarField,
    pub bcs: BTreeMap<String, BoundaryCondition>,
    pub interface_penalties: BTreeMap<String, f64>,
}

impl OperatorSpec {
    /// `-Δ + m²` with no boundary conditions attached yet.
    pub fn whittle(m: f64) -> Self {
        OperatorSpec {
            diffusion: DiffusionField::Isotropic(ScalarField::constant(1.0)),
            diffusion_scale: 1.0,
            reaction: ScalarField::constant(m * m),
            bcs: BTreeMap::new(),
            interface_penalties: BTreeMap::new(),
        }
    }

    /// `-(1/(2πα′))Δ + m²`.
    pub fn from_alpha_prime(alpha_prime: f64, m: f64) -> Self {
        OperatorSpec {
            diffusion_scale: 1.0 / (2.0 * std::f64::consts::PI * alpha_prime),
            ..Self::whittle(m)
        }
    }

    pub fn with_bc(mut self, piece: impl Into<String>, bc: BoundaryCondition) -> Self {
        self.bcs.insert(piece.into(), bc);
        self
    }

    /// Applies `bc` to every boundary piece of `mesh`.
    pub fn with_all_bcs(mut self, mesh: &Mesh, bc: BoundaryCondition) -> Self {
        self.bcs = mesh.boundary_pieces().into_iter().map(|p| (p, bc)).collect();
        self
    }

    pub fn with_interface(mut self, id: impl Into<String>, alpha: f64) -> Self {
        self.interface_penalties.insert(id.into(), alpha);
        self
    }

    /// Sets every interface of `mesh` to the same penalty.
    pub fn with_all_interfaces(mut self, mesh: &Mesh, alpha: f64) -> Self {
        self.interface_penalties = mesh.interface_ids().into_iter().map(|id| (id, alpha)).collect();
        self
    }

    pub fn has_dirichlet(&self) -> bool {
        self.bcs.values().any(|bc| matches!(bc, BoundaryCondition::Dirichlet))
    }

    fn has_positive_robin(&self) -> bool {
        self.bcs
            .values()
            .any(|bc| matches!(bc, BoundaryCondition::Robin { beta } if *beta > 0.0))
    }

    fn penalty(&self, id: &str) -> f64 {
        self.interface_penalties.get(id).copied().unwrap_or(0.0)
    }

    /// Checks tags against the mesh and the scalar parameters for range.
    fn validate_against(&self, mesh: &Mesh) -> Result<()> {
        self.reaction.validate()?;
        if let DiffusionField::Isotropic(f) = &self.diffusion {
            f.validate()?;
        }
        if !(self.diffusion_scale > 0.0 && self.diffusion_scale.is_finite()) {
            return Err(FieldError::Model(format!(
                "diffusion scale must be positive, got {}",
                self.diffusion_scale
            )));
        }
        let pieces = mesh.boundary_pieces();
        for piece in &pieces {
            if !self.bcs.contains_key(piece) {
                return Err(FieldError::Config(format!("no boundary condition for piece '{piece}'")));
            }
        }
        for (piece, bc) in &self.bcs {
            if !pieces.contains(piece) {
                return Err(FieldError::Config(format!("boundary tag '{piece}' does not exist on the mesh")));
            }
            if let BoundaryCondition::Robin { beta } = bc {
                if !(*beta >= 0.0 && beta.is_finite()) {
                    return Err(FieldError::Model(format!("Robin coefficient on '{piece}' must be >= 0")));
                }
            }
        }
        let ids = mesh.interface_ids();
        for (id, alpha) in &self.interface_penalties {
            if !ids.contains(id) {
                return Err(FieldError::Config(format!("interface '{id}' does not exist on the mesh")));
            }
            if !(*alpha >= 0.0 && alpha.is_finite()) {
                return Err(FieldError::Model(format!("interface penalty on '{id}' must be >= 0, got {alpha}")));
            }
        }
        if mesh.dim() == 1 && matches!(self.diffusion, DiffusionField::Tensor(_)) {
            return Err(FieldError::Config("tensor diffusion requires a 2D mesh".into()));
        }
        Ok(())
    }

    /// Parses a model file (schema in `docs/schema.md`).
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| FieldError::Config(format!("model file: {e}")))?;
        file.into_spec()
    }

    /// Canonical JSON, used for hashing and round-trips.
    pub fn to_json(&self) -> String {
        let file = ModelFile {
            diffusion: Some(self.diffusion.clone()),
            diffusion_scale: Some(self.diffusion_scale),
            alpha_prime: None,
            mass: None,
            reaction: Some(self.reaction.clone()),
            boundary: self.bcs.clone(),
            interfaces: self.interface_penalties.clone(),
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum ScalarInput {
    Number(f64),
    Field(ScalarField),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    diffusion: Option<DiffusionField>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    diffusion_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha_prime: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mass: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none", deserialize_with = "de_scalar")]
    reaction: Option<ScalarField>,
    #[serde(default)]
    boundary: BTreeMap<String, BoundaryCondition>,
    #[serde(default)]
    interfaces: BTreeMap<String, f64>,
}

fn de_scalar<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<ScalarField>, D::Error> {
    Ok(Some(match ScalarInput::deserialize(d)? {
        ScalarInput::Number(v) => ScalarField::constant(v),
        ScalarInput::Field(f) => f,
    }))
}

impl ModelFile {
    fn into_spec(self) -> Result<OperatorSpec> {
        let reaction = match (self.mass, self.reaction) {
            (Some(m), None) => {
                if !(m > 0.0 && m.is_finite()) {
                    return Err(FieldError::Config(format!("mass must be positive, got {m}")));
                }
                ScalarField::constant(m * m)
            }
            (None, Some(r)) => r,
            _ => return Err(FieldError::Config("model needs exactly one of 'mass' or 'reaction'".into())),
        };
        let diffusion_scale = match (self.alpha_prime, self.diffusion_scale) {
            (Some(ap), None) => {
                if !(ap > 0.0 && ap.is_finite()) {
                    return Err(FieldError::Config(format!("alpha_prime must be positive, got {ap}")));
                }
                1.0 / (2.0 * std::f64::consts::PI * ap)
            }
            (None, Some(s)) => s,
            (None, None) => 1.0,
            (Some(_), Some(_)) => {
                return Err(FieldError::Config("give either 'alpha_prime' or 'diffusion_scale', not both".into()))
            }
        };
        Ok(OperatorSpec {
            diffusion: self
                .diffusion
                .unwrap_or(DiffusionField::Isotropic(ScalarField::constant(1.0))),
            diffusion_scale,
            reaction,
            bcs: self.boundary,
            interface_penalties: self.interfaces,
        })
    }
}

/// Symmetric positive-definite precision over the free (non-Dirichlet) nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePrecision {
    matrix: CsrMatrix,
    dof_nodes: Vec<usize>,
    node_dofs: Vec<Option<usize>>,
    coords: Vec<Coord>,
}

impl SparsePrecision {
    /// Wraps a matrix whose dof `k` sits on mesh node `dof_nodes[k]` at
    /// `coords[k]`; `node_count` is the size of the underlying mesh.
    pub fn from_parts(matrix: CsrMatrix, dof_nodes: Vec<usize>, coords: Vec<Coord>, node_count: usize) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() != dof_nodes.len() || coords.len() != dof_nodes.len() {
            return Err(FieldError::Config("precision matrix and dof map sizes disagree".into()));
        }
        let mut node_dofs = vec![None; node_count];
        for (dof, &node) in dof_nodes.iter().enumerate() {
            if node >= node_count || node_dofs[node].is_some() {
                return Err(FieldError::Config(format!("invalid dof map entry for node {node}")));
            }
            node_dofs[node] = Some(dof);
        }
        Ok(SparsePrecision { matrix, dof_nodes, node_dofs, coords })
    }

    /// Precision with one dof per "node" and no geometry, for matrices that
    /// do not come from a mesh.
    pub fn from_matrix(matrix: CsrMatrix) -> Result<Self> {
        let n = matrix.nrows();
        Self::from_parts(matrix, (0..n).collect(), (0..n).map(|i| [i as f64, 0.0]).collect(), n)
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.dof_nodes.len()
    }

    pub fn dof_node(&self, dof: usize) -> usize {
        self.dof_nodes[dof]
    }

    pub fn dof_nodes(&self) -> &[usize] {
        &self.dof_nodes
    }

    pub fn node_dof(&self, node: usize) -> Option<usize> {
        self.node_dofs.get(node).copied().flatten()
    }

    pub fn dof_coord(&self, dof: usize) -> Coord {
        self.coords[dof]
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    pub fn node_count(&self) -> usize {
        self.node_dofs.len()
    }

    /// Nodes removed by Dirichlet elimination.
    pub fn eliminated_nodes(&self) -> Vec<usize> {
        (0..self.node_dofs.len()).filter(|&n| self.node_dofs[n].is_none()).collect()
    }

    pub fn factor(&self) -> Result<SparseCholesky> {
        SparseCholesky::factor(&self.matrix)
    }

    /// Restriction to a subset of dofs (in the given order), keeping geometry.
    pub fn restricted(&self, matrix: CsrMatrix, dofs: &[usize]) -> Result<Self> {
        Self::from_parts(
            matrix,
            dofs.iter().map(|&d| self.dof_nodes[d]).collect(),
            dofs.iter().map(|&d| self.coords[d]).collect(),
            self.node_dofs.len(),
        )
    }
}

const GAUSS_2: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];

/// Drops Dirichlet nodes and renumbers the rest.
fn reduce(mesh: &Mesh, triplets: Vec<(usize, usize, f64)>, dirichlet: &[bool]) -> Result<SparsePrecision> {
    let n_nodes = mesh.node_count();
    let dof_nodes: Vec<usize> = (0..n_nodes).filter(|&i| !dirichlet[i]).collect();
    if dof_nodes.is_empty() {
        return Err(FieldError::Model("every node is eliminated by Dirichlet conditions".into()));
    }
    let mut map = vec![usize::MAX; n_nodes];
    for (dof, &node) in dof_nodes.iter().enumerate() {
        map[node] = dof;
    }
    let reduced: Vec<_> = triplets
        .into_iter()
        .filter(|&(i, j, _)| !dirichlet[i] && !dirichlet[j])
        .map(|(i, j, v)| (map[i], map[j], v))
        .collect();
    let n = dof_nodes.len();
    let coords = dof_nodes.iter().map(|&node| mesh.coord(node)).collect();
    SparsePrecision::from_parts(CsrMatrix::from_triplets(n, n, &reduced), dof_nodes, coords, n_nodes)
}

fn push_segment_mass(triplets: &mut Vec<(usize, usize, f64)>, a: usize, b: usize, length: f64, weight: f64) {
    let d = weight * length / 3.0;
    let o = weight * length / 6.0;
    triplets.extend([(a, a, d), (b, b, d), (a, b, o), (b, a, o)]);
}

fn check_coercive(spec: &OperatorSpec, min_reaction: f64) -> Result<()> {
    if min_reaction <= 0.0 && !spec.has_dirichlet() && !spec.has_positive_robin() {
        return Err(FieldError::Model(
            "reaction vanishes somewhere and no Dirichlet or Robin boundary makes the form coercive".into(),
        ));
    }
    Ok(())
}

fn assembly_terms_1d(mesh: &Mesh1D, spec: &OperatorSpec, unit_mass_only: bool) -> Result<Vec<(usize, usize, f64)>> {
    let nodes = mesh.nodes();
    let mut triplets = Vec::with_capacity(4 * nodes.len() + 4);
    let mut min_reaction = f64::INFINITY;
    for e in 0..mesh.element_count() {
        let (x0, x1) = (nodes[e], nodes[e + 1]);
        let h = x1 - x0;
        let mid = [0.5 * (x0 + x1), 0.0];
        let (a_e, c_e) = if unit_mass_only {
            (0.0, 1.0)
        } else {
            let a = spec.diffusion.eval(&mid)[0] * spec.diffusion_scale;
            let c = spec.reaction.eval(&mid);
            if !(a > 0.0 && a.is_finite()) {
                return Err(FieldError::Model(format!("diffusion {a} is not positive at x = {}", mid[0])));
            }
            if !(c >= 0.0 && c.is_finite()) {
                return Err(FieldError::Model(format!("reaction {c} is negative at x = {}", mid[0])));
            }
            min_reaction = min_reaction.min(c);
            (a, c)
        };
        let k = a_e / h;
        let md = c_e * h / 3.0;
        let mo = c_e * h / 6.0;
        triplets.extend([
            (e, e, k + md),
            (e, e + 1, -k + mo),
            (e + 1, e, -k + mo),
            (e + 1, e + 1, k + md),
        ]);
    }
    if unit_mass_only {
        return Ok(triplets);
    }
    check_coercive(spec, min_reaction)?;
    let last = mesh.element_count();
    for (node, piece) in [(0, mesh.boundary_left()), (last, mesh.boundary_right())] {
        if let Some(BoundaryCondition::Robin { beta }) = spec.bcs.get(piece) {
            triplets.push((node, node, *beta));
        }
    }
    for iface in mesh.interfaces() {
        let alpha = spec.penalty(&iface.id);
        if alpha != 0.0 {
            triplets.push((iface.node, iface.node, alpha));
        }
    }
    Ok(triplets)
}

fn dirichlet_nodes_1d(mesh: &Mesh1D, spec: &OperatorSpec) -> Vec<bool> {
    let mut mask = vec![false; mesh.nodes().len()];
    let last = mesh.element_count();
    for (node, piece) in [(0, mesh.boundary_left()), (last, mesh.boundary_right())] {
        if matches!(spec.bcs.get(piece), Some(BoundaryCondition::Dirichlet)) {
            mask[node] = true;
        }
    }
    mask
}

/// Piecewise-linear Galerkin precision on an interval mesh.
pub fn assemble_1d(mesh: &Mesh1D, spec: &OperatorSpec) -> Result<SparsePrecision> {
    let wrapped = Mesh::Interval(mesh.clone());
    spec.validate_against(&wrapped)?;
    let triplets = assembly_terms_1d(mesh, spec, false)?;
    reduce(&wrapped, triplets, &dirichlet_nodes_1d(mesh, spec))
}

fn dirichlet_nodes_2d(grid: &Grid2D, spec: &OperatorSpec) -> Vec<bool> {
    let mut mask = vec![false; grid.node_count()];
    for (piece, chain) in grid.boundary_edges() {
        if matches!(spec.bcs.get(piece), Some(BoundaryCondition::Dirichlet)) {
            for node in chain {
                mask[node] = true;
            }
        }
    }
    mask
}

fn assembly_terms_2d(grid: &Grid2D, spec: &OperatorSpec, unit_mass_only: bool) -> Result<Vec<(usize, usize, f64)>> {
    let (xs, ys) = (grid.x_nodes(), grid.y_nodes());
    let corners: [(f64, f64); 4] = [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)];
    let mut triplets = Vec::with_capacity(16 * grid.nx() * grid.ny());
    let mut min_reaction = f64::INFINITY;
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            let (hx, hy) = (xs[i + 1] - xs[i], ys[j + 1] - ys[j]);
            let ids = [
                grid.node_index(i, j),
                grid.node_index(i + 1, j),
                grid.node_index(i, j + 1),
                grid.node_index(i + 1, j + 1),
            ];
            let det = 0.25 * hx * hy;
            let mut local = [[0.0f64; 4]; 4];
            for &gx in &GAUSS_2 {
                for &gy in &GAUSS_2 {
                    let p = [
                        xs[i] + 0.5 * (gx + 1.0) * hx,
                        ys[j] + 0.5 * (gy + 1.0) * hy,
                    ];
                    let (tensor, c) = if unit_mass_only {
                        ([0.0; 3], 1.0)
                    } else {
                        let [axx, axy, ayy] = spec.diffusion.eval(&p).map(|v| v * spec.diffusion_scale);
                        let tr = axx + ayy;
                        let disc = ((axx - ayy) * (axx - ayy) + 4.0 * axy * axy).sqrt();
                        let lambda_min = 0.5 * (tr - disc);
                        if !(lambda_min > 0.0) || !tr.is_finite() {
                            return Err(FieldError::Model(format!(
                                "diffusion tensor is not uniformly elliptic at ({}, {})",
                                p[0], p[1]
                            )));
                        }
                        let c = spec.reaction.eval(&p);
                        if !(c >= 0.0 && c.is_finite()) {
                            return Err(FieldError::Model(format!(
                                "reaction {c} is negative at ({}, {})",
                                p[0], p[1]
                            )));
                        }
                        min_reaction = min_reaction.min(c);
                        ([axx, axy, ayy], c)
                    };
                    let mut phi = [0.0; 4];
                    let mut grad = [[0.0; 2]; 4];
                    for (a, &(xa, ya)) in corners.iter().enumerate() {
                        phi[a] = 0.25 * (1.0 + xa * gx) * (1.0 + ya * gy);
                        grad[a] = [
                            0.25 * xa * (1.0 + ya * gy) * 2.0 / hx,
                            0.25 * ya * (1.0 + xa * gx) * 2.0 / hy,
                        ];
                    }
                    for a in 0..4 {
                        let ag = [
                            tensor[0] * grad[a][0] + tensor[1] * grad[a][1],
                            tensor[1] * grad[a][0] + tensor[2] * grad[a][1],
                        ];
                        for b in a..4 {
                            let stiff = ag[0] * grad[b][0] + ag[1] * grad[b][1];
                            local[a][b] += det * (stiff + c * phi[a] * phi[b]);
                        }
                    }
                }
            }
            for a in 0..4 {
                for b in 0..4 {
                    let v = if a <= b { local[a][b] } else { local[b][a] };
                    triplets.push((ids[a], ids[b], v));
                }
            }
        }
    }
    if unit_mass_only {
        return Ok(triplets);
    }
    check_coercive(spec, min_reaction)?;
    for (piece, chain) in grid.boundary_edges() {
        if let Some(BoundaryCondition::Robin { beta }) = spec.bcs.get(piece) {
            for w in chain.windows(2) {
                let (pa, pb) = (grid.coord(w[0]), grid.coord(w[1]));
                push_segment_mass(&mut triplets, w[0], w[1], (pb[0] - pa[0]).hypot(pb[1] - pa[1]), *beta);
            }
        }
    }
    // corner nodes shared by two interface lines collect both penalties
    for line in grid.interface_lines() {
        let alpha = spec.penalty(&line.id);
        if alpha == 0.0 {
            continue;
        }
        let chain = grid.interface_nodes(line);
        for w in chain.windows(2) {
            let (pa, pb) = (grid.coord(w[0]), grid.coord(w[1]));
            push_segment_mass(&mut triplets, w[0], w[1], (pb[0] - pa[0]).hypot(pb[1] - pa[1]), alpha);
        }
    }
    Ok(triplets)
}

/// Bilinear quadrilateral Galerkin precision on a structured grid.
pub fn assemble_2d(grid: &Grid2D, spec: &OperatorSpec) -> Result<SparsePrecision> {
    let wrapped = Mesh::Grid(grid.clone());
    spec.validate_against(&wrapped)?;
    let triplets = assembly_terms_2d(grid, spec, false)?;
    reduce(&wrapped, triplets, &dirichlet_nodes_2d(grid, spec))
}

pub fn assemble(mesh: &Mesh, spec: &OperatorSpec) -> Result<SparsePrecision> {
    match mesh {
        Mesh::Interval(m) => assemble_1d(m, spec),
        Mesh::Grid(g) => assemble_2d(g, spec),
    }
}

/// Unit-coefficient mass matrix over the same free dofs `assemble` produces.
pub fn assemble_mass(mesh: &Mesh, spec: &OperatorSpec) -> Result<SparsePrecision> {
    spec.validate_against(mesh)?;
    match mesh {
        Mesh::Interval(m) => reduce(mesh, assembly_terms_1d(m, spec, true)?, &dirichlet_nodes_1d(m, spec)),
        Mesh::Grid(g) => reduce(mesh, assembly_terms_2d(g, spec, true)?, &dirichlet_nodes_2d(g, spec)),
    }
}

/// Compact factor `K` = circle of the given radius, truncated to Fourier
/// modes `0..=modes`.
///
/// The circle carries the normalized measure `dθ/2π`, so the eigenbasis is
/// `1, √2 cos nθ, √2 sin nθ` with eigenvalues `(n/r)²`; mode 0 of the product
/// covariance is then exactly the interval covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleFactor {
    pub radius: f64,
    pub modes: usize,
}

impl CircleFactor {
    pub const DEFAULT_MODES: usize = 16;

    pub fn new(radius: f64, modes: usize) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(FieldError::Domain(format!("circle radius must be positive, got {radius}")));
        }
        Ok(CircleFactor { radius, modes })
    }

    pub fn eigenvalue(&self, n: usize) -> f64 {
        let k = n as f64 / self.radius;
        k * k
    }

    pub fn multiplicity(n: usize) -> usize {
        if n == 0 {
            1
        } else {
            2
        }
    }

    /// `Σ_k φ_k(θ) φ_k(θ′)` over the basis functions of mode `n`.
    pub fn mode_weight(n: usize, dtheta: f64) -> f64 {
        if n == 0 {
            1.0
        } else {
            2.0 * (n as f64 * dtheta).cos()
        }
    }
}

/// Per-mode factorizations of `Q_base + λ_n M` on `interval × circle`.
#[derive(Debug, Clone)]
pub struct ModeSystem {
    base: SparsePrecision,
    mass: CsrMatrix,
    circle: CircleFactor,
    factors: Vec<SparseCholesky>,
    min_reaction: f64,
}

impl ModeSystem {
    pub fn new(mesh: &Mesh1D, spec: &OperatorSpec, circle: CircleFactor) -> Result<Self> {
        let base = assemble_1d(mesh, spec)?;
        let mass = assemble_mass(&Mesh::Interval(mesh.clone()), spec)?.matrix().clone();
        let factors = (0..=circle.modes)
            .map(|n| {
                let shifted = base.matrix().add_scaled(&mass, circle.eigenvalue(n));
                SparseCholesky::factor(&shifted)
                    .map_err(|e| FieldError::Numeric(format!("mode {n} system is singular: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let nodes = mesh.nodes();
        let min_reaction = (0..mesh.element_count())
            .map(|e| spec.reaction.eval(&[0.5 * (nodes[e] + nodes[e + 1]), 0.0]))
            .fold(f64::INFINITY, f64::min);
        Ok(ModeSystem { base, mass, circle, factors, min_reaction })
    }

    pub fn base(&self) -> &SparsePrecision {
        &self.base
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    pub fn circle(&self) -> CircleFactor {
        self.circle
    }

    /// Solves `(Q_base + λ_n M) u_n = f_n` for each supplied mode.
    pub fn solve(&self, rhs_modes: &BTreeMap<usize, Vec<f64>>) -> Result<BTreeMap<usize, Vec<f64>>> {
        rhs_modes
            .iter()
            .map(|(&n, rhs)| {
                let factor = self.factors.get(n).ok_or_else(|| {
                    FieldError::Domain(format!("mode {n} exceeds truncation {}", self.circle.modes))
                })?;
                if rhs.len() != self.base.dim() {
                    return Err(FieldError::Domain(format!(
                        "mode {n} right-hand side has length {}, expected {}",
                        rhs.len(),
                        self.base.dim()
                    )));
                }
                Ok((n, factor.solve(rhs)))
            })
            .collect()
    }

    /// Factor of `Q_base + λ_n M`.
    pub fn mode_factor(&self, n: usize) -> Option<&SparseCholesky> {
        self.factors.get(n)
    }

    /// Dense `(Q_base + λ_n M)⁻¹`.
    pub fn mode_covariance(&self, n: usize) -> DMatrix<f64> {
        self.factors[n].inverse()
    }

    /// Covariance between product points `(σ_a, θ_a)` and `(σ_b, θ_b)`, each
    /// σ given as interpolation weights over the interval dofs.
    pub fn covariance(&self, a: (&[(usize, f64)], f64), b: (&[(usize, f64)], f64)) -> f64 {
        let n = self.base.dim();
        let mut rhs = vec![0.0; n];
        for &(dof, w) in b.0 {
            rhs[dof] += w;
        }
        (0..=self.circle.modes)
            .map(|mode| {
                let col = self.factors[mode].solve(&rhs);
                let g: f64 = a.0.iter().map(|&(dof, w)| w * col[dof]).sum();
                CircleFactor::mode_weight(mode, a.1 - b.1) * g
            })
            .sum()
    }

    /// Upper bound on the pointwise variance carried by the discarded modes
    /// `n > N`. Uses `Q_base ⪰ c_min M`, so each mode's diagonal is at most
    /// `(M⁻¹)_ii / (c_min + λ_n)`, and bounds the mode sum by an integral.
    pub fn tail_bound(&self) -> f64 {
        let mass_factor = match SparseCholesky::factor(&self.mass) {
            Ok(f) => f,
            Err(_) => return f64::INFINITY,
        };
        let mass_inv_diag = mass_factor.inverse_diagonal().into_iter().fold(0.0, f64::max);
        let r = self.circle.radius;
        let big_n = self.circle.modes as f64;
        let mu = self.min_reaction.max(0.0);
        let tail = if mu > 0.0 {
            let s = r * mu.sqrt();
            (r / mu.sqrt()) * (std::f64::consts::FRAC_PI_2 - (big_n / s).atan())
        } else if self.circle.modes > 0 {
            r * r / big_n
        } else {
            f64::INFINITY
        };
        2.0 * mass_inv_diag * tail
    }
}

/// Solves each supplied mode of the product operator on `interval × circle`.
pub fn product_mode_solve(
    mesh: &Mesh1D,
    spec: &OperatorSpec,
    circle: CircleFactor,
    rhs_modes: &BTreeMap<usize, Vec<f64>>,
) -> Result<BTreeMap<usize, Vec<f64>>> {
    ModeSystem::new(mesh, spec, circle)?.solve(rhs_modes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{green_dirichlet_1d, green_neumann_1d, Kernel1DParams};
    use crate::mesh::Axis;

    fn dirichlet(mesh: &Mesh, m: f64) -> OperatorSpec {
        OperatorSpec::whittle(m).with_all_bcs(mesh, BoundaryCondition::Dirichlet)
    }

    fn smallest_eigenvalue(q: &CsrMatrix) -> f64 {
        q.to_dense().symmetric_eigen().eigenvalues.min()
    }

    #[test]
    fn two_element_hand_assembly() {
        let mesh = Mesh1D::uniform_interval(1.0, 2, &[]).unwrap();
        let spec = OperatorSpec {
            reaction: ScalarField::constant(0.0),
            ..OperatorSpec::whittle(0.0)
        }
        .with_all_bcs(&Mesh::Interval(mesh.clone()), BoundaryCondition::Dirichlet);
        let q = assemble_1d(&mesh, &spec).unwrap();
        assert_eq!(q.dim(), 1);
        assert_eq!(q.matrix().get(0, 0), 4.0);
        assert_eq!(q.eliminated_nodes(), vec![0, 2]);
    }

    #[test]
    fn zero_penalty_matches_no_interface() {
        let with = Mesh1D::uniform_interval(1.0, 10, &[0.3]).unwrap();
        let without = Mesh1D::uniform_interval(1.0, 10, &[]).unwrap();
        let spec = OperatorSpec::whittle(1.5)
            .with_bc("left", BoundaryCondition::Dirichlet)
            .with_bc("right", BoundaryCondition::Neumann);
        let a = assemble_1d(&with, &spec.clone().with_interface("s0", 0.0)).unwrap();
        let b = assemble_1d(&without, &spec).unwrap();
        assert_eq!(a.matrix(), b.matrix());
    }

    #[test]
    fn dirichlet_green_column_matches_kernel() {
        let mesh = Mesh1D::uniform_interval(1.0, 200, &[]).unwrap();
        let q = assemble_1d(&mesh, &dirichlet(&Mesh::Interval(mesh.clone()), 1.0)).unwrap();
        let chol = q.factor().unwrap();
        let src = q.node_dof(100).unwrap();
        let mut e = vec![0.0; q.dim()];
        e[src] = 1.0;
        let col = chol.solve(&e);
        let p = Kernel1DParams::new(1.0, 1.0).unwrap();
        let err = (0..q.dim())
            .map(|d| (col[d] - green_dirichlet_1d(&p, q.dof_coord(d)[0], 0.5).unwrap()).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "max error {err}");
    }

    #[test]
    fn robin_interpolates_between_neumann_and_dirichlet() {
        let mesh = Mesh1D::uniform_interval(1.0, 40, &[]).unwrap();
        let var_at_edge = |bc: BoundaryCondition| {
            let spec = OperatorSpec::whittle(1.0).with_bc("left", bc).with_bc("right", bc);
            let q = assemble_1d(&mesh, &spec).unwrap();
            match q.node_dof(1) {
                Some(d) => q.factor().unwrap().inverse_diagonal()[d],
                None => 0.0,
            }
        };
        let n = var_at_edge(BoundaryCondition::Neumann);
        let r = var_at_edge(BoundaryCondition::Robin { beta: 2.0 });
        let d = var_at_edge(BoundaryCondition::Dirichlet);
        assert!(n > r && r > d);
        // Neumann end variance approaches coth(1) as h shrinks
        let spec = OperatorSpec::whittle(1.0).with_all_bcs(&Mesh::Interval(mesh.clone()), BoundaryCondition::Neumann);
        let q = assemble_1d(&mesh, &spec).unwrap();
        let v0 = q.factor().unwrap().inverse_diagonal()[0];
        let p = Kernel1DParams::new(1.0, 1.0).unwrap();
        assert!((v0 - green_neumann_1d(&p, 0.0, 0.0).unwrap()).abs() < 1e-3);
    }

    #[test]
    fn errors_on_bad_specs() {
        let mesh = Mesh1D::uniform_interval(1.0, 4, &[0.5]).unwrap();
        let ok = OperatorSpec::whittle(1.0)
            .with_bc("left", BoundaryCondition::Neumann)
            .with_bc("right", BoundaryCondition::Neumann);
        assert!(matches!(
            assemble_1d(&mesh, &ok.clone().with_bc("top", BoundaryCondition::Neumann)),
            Err(FieldError::Config(_))
        ));
        let missing = OperatorSpec::whittle(1.0).with_bc("left", BoundaryCondition::Neumann);
        assert!(matches!(assemble_1d(&mesh, &missing), Err(FieldError::Config(_))));
        let massless = OperatorSpec { reaction: ScalarField::constant(0.0), ..ok.clone() };
        assert!(matches!(assemble_1d(&mesh, &massless), Err(FieldError::Model(_))));
        let negative = OperatorSpec { diffusion: DiffusionField::Isotropic(ScalarField::Affine { c0: 1.0, cx: -4.0, cy: 0.0 }), ..ok.clone() };
        assert!(matches!(assemble_1d(&mesh, &negative), Err(FieldError::Model(_))));
        assert!(matches!(assemble_1d(&mesh, &ok.clone().with_interface("s9", 1.0)), Err(FieldError::Config(_))));
        assert!(matches!(assemble_1d(&mesh, &ok.with_interface("s0", -1.0)), Err(FieldError::Model(_))));
    }

    #[test]
    fn interface_penalty_is_a_diagonal_bump() {
        let mesh = Mesh1D::symmetric_interval(1.0, 20, &[0.0]).unwrap();
        let wrapped = Mesh::Interval(mesh.clone());
        let base = dirichlet(&wrapped, 1.0);
        let q0 = assemble_1d(&mesh, &base).unwrap();
        let q3 = assemble_1d(&mesh, &base.with_interface("s0", 3.0)).unwrap();
        let diff = q3.matrix().add_scaled(q0.matrix(), -1.0);
        let s = q0.node_dof(10).unwrap();
        for (i, j, v) in diff.iter() {
            if i == s && j == s {
                assert!((v - 3.0).abs() < 1e-12);
            } else {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn unit_square_mass_identity() {
        let g = Grid2D::uniform_grid(1.0, 1.0, 2, 2, &[]).unwrap();
        let mesh = Mesh::Grid(g.clone());
        let spec = OperatorSpec::whittle(1.0).with_all_bcs(&mesh, BoundaryCondition::Neumann);
        let q = assemble_2d(&g, &spec).unwrap();
        assert_eq!(q.dim(), 9);
        assert!(q.matrix().is_symmetric());
        let ones = vec![1.0; 9];
        assert!((q.matrix().quadratic_form(&ones) - 1.0).abs() < 1e-14);
        // stiffness annihilates constants, so the row sums are the lumped mass
        let row_sum: f64 = q.matrix().mul_vec(&ones).iter().sum();
        assert!((row_sum - 1.0).abs() < 1e-14);
        assert!(smallest_eigenvalue(q.matrix()) > 0.0);
    }

    #[test]
    fn single_element_reference_patch() {
        // A=I, c=1 on the unit square: the classical Q1 element matrices
        let g = Grid2D::uniform_grid(2.0, 2.0, 2, 2, &[]).unwrap();
        let mesh = Mesh::Grid(g.clone());
        let spec = OperatorSpec::whittle(1.0).with_all_bcs(&mesh, BoundaryCondition::Neumann);
        let q = assemble_2d(&g, &spec).unwrap().matrix().to_dense();
        // corner node 0 only touches element (0,0): K_00 = 2/3, M_00 = 1/9
        assert!((q[(0, 0)] - (2.0 / 3.0 + 1.0 / 9.0)).abs() < 1e-14);
        // diagonal neighbour: K = -1/3, M = 1/36
        assert!((q[(0, 4)] - (-1.0 / 3.0 + 1.0 / 36.0)).abs() < 1e-14);
        // edge neighbour: K = -1/6, M = 1/18
        assert!((q[(0, 1)] - (-1.0 / 6.0 + 1.0 / 18.0)).abs() < 1e-14);
    }

    #[test]
    fn all_dirichlet_grid_keeps_interior() {
        let g = Grid2D::uniform_grid(1.0, 1.0, 4, 4, &[]).unwrap();
        let q = assemble_2d(&g, &dirichlet(&Mesh::Grid(g.clone()), 1.0)).unwrap();
        assert_eq!(q.dim(), 9);
        assert!(smallest_eigenvalue(q.matrix()) > 0.0);
    }

    #[test]
    fn grid_interface_penalty_is_psd_and_local() {
        let g = Grid2D::uniform_grid(1.0, 1.0, 4, 4, &[0.5]).unwrap();
        let mesh = Mesh::Grid(g.clone());
        let spec = OperatorSpec::whittle(1.0).with_all_bcs(&mesh, BoundaryCondition::Neumann);
        let q0 = assemble_2d(&g, &spec).unwrap();
        let q2 = assemble_2d(&g, &spec.with_interface("s0", 2.0)).unwrap();
        let diff = q2.matrix().add_scaled(q0.matrix(), -1.0);
        let line: Vec<usize> = g.interface_nodes(&g.interface_lines()[0]);
        for (i, j, v) in diff.iter() {
            if v.abs() > 1e-14 {
                assert!(line.contains(&q0.dof_node(i)) && line.contains(&q0.dof_node(j)));
            }
        }
        assert!(smallest_eigenvalue(&diff) > -1e-12);
        // the penalty integrates α·u² over a unit-length line
        let ones = vec![1.0; q0.dim()];
        assert!((diff.quadratic_form(&ones) - 2.0).abs() < 1e-12);
        assert_eq!(g.interface_lines()[0].axis, Axis::X);
    }

    #[test]
    fn anisotropic_tensor_and_robin_edges() {
        let g = Grid2D::uniform_grid(1.0, 2.0, 3, 4, &[]).unwrap();
        let mesh = Mesh::Grid(g.clone());
        let spec = OperatorSpec {
            diffusion: DiffusionField::Tensor(TensorCoefficient { xx: 2.0, xy: 0.3, yy: 0.5 }),
            reaction: ScalarField::constant(0.0),
            ..OperatorSpec::whittle(0.0)
        }
        .with_all_bcs(&mesh, BoundaryCondition::Robin { beta: 1.5 });
        let q = assemble_2d(&g, &spec).unwrap();
        assert!(q.matrix().is_symmetric());
        // constants only see the Robin term: β · perimeter
        let ones = vec![1.0; q.dim()];
        assert!((q.matrix().quadratic_form(&ones) - 1.5 * 6.0).abs() < 1e-12);
        assert!(smallest_eigenvalue(q.matrix()) > 0.0);

        let bad = OperatorSpec {
            diffusion: DiffusionField::Tensor(TensorCoefficient { xx: 1.0, xy: 2.0, yy: 1.0 }),
            ..spec
        };
        assert!(matches!(assemble_2d(&g, &bad), Err(FieldError::Model(_))));
    }

    #[test]
    fn model_file_parsing() {
        let text = r#"{
            "mass": 2.0,
            "alpha_prime": 0.5,
            "boundary": {"left": {"kind": "dirichlet"}, "right": {"kind": "robin", "beta": 0.5}},
            "interfaces": {"s0": 1.5}
        }"#;
        let spec = OperatorSpec::from_json(text).unwrap();
        assert_eq!(spec.reaction, ScalarField::constant(4.0));
        assert!((spec.diffusion_scale - 1.0 / std::f64::consts::PI).abs() < 1e-15);
        assert_eq!(spec.bcs["right"], BoundaryCondition::Robin { beta: 0.5 });
        assert_eq!(OperatorSpec::from_json(&spec.to_json()).unwrap(), spec);

        let piecewise = r#"{"diffusion": {"type": "piecewise_x", "breaks": [0.5], "values": [1, 3]},
                             "reaction": {"type": "affine", "c0": 1, "cx": 1}, "boundary": {}}"#;
        let spec = OperatorSpec::from_json(piecewise).unwrap();
        assert_eq!(spec.diffusion.eval(&[0.7, 0.0])[0], 3.0);
        assert_eq!(spec.reaction.eval(&[0.5, 0.0]), 1.5);
        let tensor = r#"{"diffusion": {"type": "tensor", "xx": 1, "xy": 0, "yy": 4}, "mass": 1}"#;
        assert!(matches!(
            OperatorSpec::from_json(tensor).unwrap().diffusion,
            DiffusionField::Tensor(_)
        ));
        assert!(OperatorSpec::from_json(r#"{"mass": 1, "reaction": 1}"#).is_err());
        assert!(OperatorSpec::from_json(r#"{"mass": 1, "bogus": 1}"#).is_err());
    }

    #[test]
    fn mode_zero_is_plain_solve() {
        let mesh = Mesh1D::uniform_interval(1.0, 16, &[]).unwrap();
        let spec = dirichlet(&Mesh::Interval(mesh.clone()), 1.0);
        let circle = CircleFactor::new(1.0, 3).unwrap();
        let rhs: Vec<f64> = (0..15).map(|i| (i as f64).sin()).collect();
        let out = product_mode_solve(&mesh, &spec, circle, &BTreeMap::from([(0, rhs.clone())])).unwrap();
        let plain = assemble_1d(&mesh, &spec).unwrap().factor().unwrap().solve(&rhs);
        assert_eq!(out[&0], plain);
        assert!(product_mode_solve(&mesh, &spec, circle, &BTreeMap::from([(4, rhs)])).is_err());
    }

    #[test]
    fn mode_shift_matches_effective_mass() {
        // with a Neumann interval, mode n of -Δ + m² is the interval operator
        // with m_n² = m² + (n/r)²
        let mesh = Mesh1D::uniform_interval(1.0, 16, &[]).unwrap();
        let wrapped = Mesh::Interval(mesh.clone());
        let m: f64 = 0.7;
        let r = 0.5;
        let spec = OperatorSpec::whittle(m).with_all_bcs(&wrapped, BoundaryCondition::Neumann);
        let system = ModeSystem::new(&mesh, &spec, CircleFactor::new(r, 3).unwrap()).unwrap();
        for n in 0..=3usize {
            let m_n = (m * m + (n as f64 / r).powi(2)).sqrt();
            let direct = assemble_1d(&mesh, &OperatorSpec::whittle(m_n).with_all_bcs(&wrapped, BoundaryCondition::Neumann))
                .unwrap()
                .factor()
                .unwrap()
                .inverse();
            assert!((system.mode_covariance(n) - direct).amax() < 1e-12);
        }
    }

    #[test]
    fn antipodal_covariance_is_smaller() {
        let mesh = Mesh1D::uniform_interval(1.0, 32, &[]).unwrap();
        let spec = dirichlet(&Mesh::Interval(mesh.clone()), 1.0);
        let system = ModeSystem::new(&mesh, &spec, CircleFactor::new(1.0, 8).unwrap()).unwrap();
        let mid = system.base().node_dof(16).unwrap();
        let at = [(mid, 1.0)];
        let same = system.covariance((&at, 0.0), (&at, 0.0));
        let opposite = system.covariance((&at, 0.0), (&at, std::f64::consts::PI));
        assert!(opposite < same);
        assert!(system.tail_bound().is_finite() && system.tail_bound() > 0.0);
    }
}
