//! Interval meshes and structured rectangular grids, with boundary pieces
//! and node-aligned internal interfaces.

use serde::{Deserialize, Serialize};

use crate::error::{FieldError, Result};

/// Physical node coordinates; `y` is zero on interval meshes.
pub type Coord = [f64; 2];

/// Relative tolerance used to decide that two snap candidates are equidistant.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceNode {
    pub node: usize,
    pub id: String,
    #[serde(default)]
    pub snap_distance: f64,
}

/// Interval mesh `x_0 < x_1 < … < x_n` with two boundary pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh1D {
    nodes: Vec<f64>,
    boundary_left: String,
    boundary_right: String,
    interfaces: Vec<InterfaceNode>,
}

fn check_increasing(coords: &[f64], what: &str) -> Result<()> {
    if coords.len() < 3 {
        return Err(FieldError::Domain(format!(
            "{what} needs at least 2 elements, got {}",
            coords.len().saturating_sub(1)
        )));
    }
    if coords.iter().any(|v| !v.is_finite()) {
        return Err(FieldError::Domain(format!("{what} contains a non-finite coordinate")));
    }
    if coords.windows(2).any(|w| w[1] <= w[0]) {
        return Err(FieldError::Domain(format!("{what} coordinates are not strictly increasing")));
    }
    Ok(())
}

/// `count + 1` equally spaced coordinates on `[start, end]`.
fn linspace(start: f64, end: f64, count: usize) -> Vec<f64> {
    (0..=count)
        .map(|i| {
            if i == count {
                end
            } else {
                start + (end - start) * (i as f64) / (count as f64)
            }
        })
        .collect()
}

/// Index of the coordinate nearest to `p`; ties go to the smaller index.
fn nearest_index(coords: &[f64], p: f64) -> (usize, f64) {
    let scale = (coords[coords.len() - 1] - coords[0]).abs().max(1.0);
    let mut best = (0, (coords[0] - p).abs());
    for (i, &c) in coords.iter().enumerate().skip(1) {
        let d = (c - p).abs();
        if d < best.1 - TIE_TOLERANCE * scale {
            best = (i, d);
        }
    }
    best
}

/// Snaps each position to an interior coordinate and assigns ids `s0, s1, …`.
fn snap_positions(coords: &[f64], positions: &[f64]) -> Result<Vec<(usize, String, f64)>> {
    let (lo, hi) = (coords[0], coords[coords.len() - 1]);
    let mut out: Vec<(usize, String, f64)> = Vec::with_capacity(positions.len());
    for (k, &p) in positions.iter().enumerate() {
        if !(p > lo && p < hi) {
            return Err(FieldError::Domain(format!(
                "interface position {p} is outside the open domain ({lo}, {hi})"
            )));
        }
        if positions[..k].contains(&p) {
            return Err(FieldError::Conflict(format!("interface position {p} given twice")));
        }
        let (idx, dist) = nearest_index(coords, p);
        if idx == 0 || idx == coords.len() - 1 {
            return Err(FieldError::Domain(format!(
                "interface position {p} snaps onto the boundary node {}",
                coords[idx]
            )));
        }
        if let Some(prev) = out.iter().find(|s| s.0 == idx) {
            return Err(FieldError::Conflict(format!(
                "interfaces {} and s{k} both snap to node {idx}",
                prev.1
            )));
        }
        out.push((idx, format!("s{k}"), dist));
    }
    Ok(out)
}

impl Mesh1D {
    /// Validating constructor.
    pub fn new(
        nodes: Vec<f64>,
        boundary_left: impl Into<String>,
        boundary_right: impl Into<String>,
        interfaces: Vec<InterfaceNode>,
    ) -> Result<Self> {
        check_increasing(&nodes, "interval mesh")?;
        let n = nodes.len() - 1;
        for (k, iface) in interfaces.iter().enumerate() {
            if iface.node == 0 || iface.node >= n {
                return Err(FieldError::Domain(format!(
                    "interface {} at node {} is not interior",
                    iface.id, iface.node
                )));
            }
            if let Some(other) = interfaces[..k].iter().find(|o| o.node == iface.node) {
                return Err(FieldError::Conflict(format!(
                    "node {} carries interfaces {} and {}",
                    iface.node, other.id, iface.id
                )));
            }
            if interfaces[..k].iter().any(|o| o.id == iface.id) {
                return Err(FieldError::Conflict(format!("interface id {} used twice", iface.id)));
            }
        }
        Ok(Mesh1D {
            nodes,
            boundary_left: boundary_left.into(),
            boundary_right: boundary_right.into(),
            interfaces,
        })
    }

    /// Equally spaced mesh of `(0, length)` with `elements` elements. Interface
    /// positions are snapped to the nearest node.
    pub fn uniform_interval(length: f64, elements: usize, interfaces: &[f64]) -> Result<Self> {
        Self::uniform_on(0.0, length, elements, interfaces)
    }

    /// Equally spaced mesh of `(-half_length, half_length)`.
    pub fn symmetric_interval(half_length: f64, elements: usize, interfaces: &[f64]) -> Result<Self> {
        Self::uniform_on(-half_length, half_length, elements, interfaces)
    }

    fn uniform_on(start: f64, end: f64, elements: usize, interfaces: &[f64]) -> Result<Self> {
        if !(end > start) || !start.is_finite() || !end.is_finite() {
            return Err(FieldError::Domain(format!("interval length must be positive and finite")));
        }
        if elements < 2 {
            return Err(FieldError::Domain(format!("need at least 2 elements, got {elements}")));
        }
        let nodes = linspace(start, end, elements);
        let snapped = snap_positions(&nodes, interfaces)?;
        let interfaces = snapped
            .into_iter()
            .map(|(node, id, snap_distance)| InterfaceNode { node, id, snap_distance })
            .collect();
        Self::new(nodes, "left", "right", interfaces)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn element_count(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn boundary_left(&self) -> &str {
        &self.boundary_left
    }

    pub fn boundary_right(&self) -> &str {
        &self.boundary_right
    }

    pub fn interfaces(&self) -> &[InterfaceNode] {
        &self.interfaces
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.nodes[0], self.nodes[self.nodes.len() - 1])
    }

    /// Renames the interface ids in order of appearance.
    pub fn with_interface_ids<S: Into<String>>(mut self, ids: impl IntoIterator<Item = S>) -> Self {
        for (iface, id) in self.interfaces.iter_mut().zip(ids) {
            iface.id = id.into();
        }
        self
    }

    /// Hat-function weights of the point `x`; zero weights are dropped.
    pub fn interpolation_weights(&self, x: f64) -> Result<Vec<(usize, f64)>> {
        let (a, b) = self.domain();
        if !(x >= a && x <= b) {
            return Err(FieldError::Domain(format!("point {x} outside mesh domain [{a}, {b}]")));
        }
        let e = match self.nodes.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => return Ok(vec![(i, 1.0)]),
            Err(i) => i - 1,
        };
        let (x0, x1) = (self.nodes[e], self.nodes[e + 1]);
        let t = (x - x0) / (x1 - x0);
        Ok(vec![(e, 1.0 - t), (e + 1, t)])
    }
}

/// Orientation of a grid interface line: `X` lines are `x = const`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceLine {
    pub axis: Axis,
    pub index: usize,
    pub id: String,
    #[serde(default)]
    pub snap_distance: f64,
}

/// Boundary-piece id for each side of the rectangle. Sides may share an id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeTags {
    pub left: String,
    pub right: String,
    pub bottom: String,
    pub top: String,
}

impl Default for EdgeTags {
    fn default() -> Self {
        EdgeTags {
            left: "left".into(),
            right: "right".into(),
            bottom: "bottom".into(),
            top: "top".into(),
        }
    }
}

/// Tensor-product grid; node `(i, j)` has index `j * (nx + 1) + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    x_nodes: Vec<f64>,
    y_nodes: Vec<f64>,
    edge_tags: EdgeTags,
    interface_lines: Vec<InterfaceLine>,
}

impl Grid2D {
    pub fn new(
        x_nodes: Vec<f64>,
        y_nodes: Vec<f64>,
        edge_tags: EdgeTags,
        interface_lines: Vec<InterfaceLine>,
    ) -> Result<Self> {
        check_increasing(&x_nodes, "grid x axis")?;
        check_increasing(&y_nodes, "grid y axis")?;
        for (k, line) in interface_lines.iter().enumerate() {
            let count = match line.axis {
                Axis::X => x_nodes.len() - 1,
                Axis::Y => y_nodes.len() - 1,
            };
            if line.index == 0 || line.index >= count {
                return Err(FieldError::Domain(format!(
                    "interface line {} is not an interior grid line",
                    line.id
                )));
            }
            if interface_lines[..k]
                .iter()
                .any(|o| o.axis == line.axis && o.index == line.index)
            {
                return Err(FieldError::Conflict(format!(
                    "two interfaces on the same grid line as {}",
                    line.id
                )));
            }
            if interface_lines[..k].iter().any(|o| o.id == line.id) {
                return Err(FieldError::Conflict(format!("interface id {} used twice", line.id)));
            }
        }
        Ok(Grid2D { x_nodes, y_nodes, edge_tags, interface_lines })
    }

    /// Uniform `nx × ny` element grid of `[0, lx] × [0, ly]` with vertical
    /// interface lines snapped to the nearest x grid line.
    pub fn uniform_grid(lx: f64, ly: f64, nx: usize, ny: usize, interface_x_positions: &[f64]) -> Result<Self> {
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(FieldError::Domain("grid extents must be positive and finite".into()));
        }
        if nx < 2 || ny < 2 {
            return Err(FieldError::Domain(format!("need at least 2 elements per axis, got {nx}x{ny}")));
        }
        let x_nodes = linspace(0.0, lx, nx);
        let y_nodes = linspace(0.0, ly, ny);
        let lines = snap_positions(&x_nodes, interface_x_positions)?
            .into_iter()
            .map(|(index, id, snap_distance)| InterfaceLine { axis: Axis::X, index, id, snap_distance })
            .collect();
        Self::new(x_nodes, y_nodes, EdgeTags::default(), lines)
    }

    pub fn x_nodes(&self) -> &[f64] {
        &self.x_nodes
    }

    pub fn y_nodes(&self) -> &[f64] {
        &self.y_nodes
    }

    pub fn edge_tags(&self) -> &EdgeTags {
        &self.edge_tags
    }

    pub fn interface_lines(&self) -> &[InterfaceLine] {
        &self.interface_lines
    }

    pub fn nx(&self) -> usize {
        self.x_nodes.len() - 1
    }

    pub fn ny(&self) -> usize {
        self.y_nodes.len() - 1
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx() + 1) + i
    }

    pub fn node_count(&self) -> usize {
        self.x_nodes.len() * self.y_nodes.len()
    }

    pub fn coord(&self, node: usize) -> Coord {
        let w = self.nx() + 1;
        [self.x_nodes[node % w], self.y_nodes[node / w]]
    }

    /// Node chains along each side, tagged with the side's boundary piece.
    pub fn boundary_edges(&self) -> Vec<(&str, Vec<usize>)> {
        let (nx, ny) = (self.nx(), self.ny());
        vec![
            (self.edge_tags.left.as_str(), (0..=ny).map(|j| self.node_index(0, j)).collect()),
            (self.edge_tags.right.as_str(), (0..=ny).map(|j| self.node_index(nx, j)).collect()),
            (self.edge_tags.bottom.as_str(), (0..=nx).map(|i| self.node_index(i, 0)).collect()),
            (self.edge_tags.top.as_str(), (0..=nx).map(|i| self.node_index(i, ny)).collect()),
        ]
    }

    /// Ordered node chain of an interface line.
    pub fn interface_nodes(&self, line: &InterfaceLine) -> Vec<usize> {
        match line.axis {
            Axis::X => (0..=self.ny()).map(|j| self.node_index(line.index, j)).collect(),
            Axis::Y => (0..=self.nx()).map(|i| self.node_index(i, line.index)).collect(),
        }
    }

    /// Bilinear interpolation weights of `(x, y)`; zero weights are dropped.
    pub fn interpolation_weights(&self, x: f64, y: f64) -> Result<Vec<(usize, f64)>> {
        let locate = |coords: &[f64], v: f64| -> Result<(usize, f64)> {
            let (a, b) = (coords[0], coords[coords.len() - 1]);
            if !(v >= a && v <= b) {
                return Err(FieldError::Domain(format!("coordinate {v} outside grid range [{a}, {b}]")));
            }
            let e = coords.partition_point(|&c| c <= v).clamp(1, coords.len() - 1) - 1;
            Ok((e, (v - coords[e]) / (coords[e + 1] - coords[e])))
        };
        let (i, tx) = locate(&self.x_nodes, x)?;
        let (j, ty) = locate(&self.y_nodes, y)?;
        let candidates = [
            (self.node_index(i, j), (1.0 - tx) * (1.0 - ty)),
            (self.node_index(i + 1, j), tx * (1.0 - ty)),
            (self.node_index(i, j + 1), (1.0 - tx) * ty),
            (self.node_index(i + 1, j + 1), tx * ty),
        ];
        Ok(candidates.into_iter().filter(|&(_, w)| w != 0.0).collect())
    }
}

/// An interface seen as a cut of the domain, for pair classification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterfaceCut {
    pub axis: Axis,
    pub position: f64,
}

impl InterfaceCut {
    /// True when `a` and `b` lie strictly on opposite sides of the cut.
    pub fn separates(&self, a: &Coord, b: &Coord) -> bool {
        let k = match self.axis {
            Axis::X => 0,
            Axis::Y => 1,
        };
        let (sa, sb) = (a[k] - self.position, b[k] - self.position);
        (sa < 0.0 && sb > 0.0) || (sa > 0.0 && sb < 0.0)
    }
}

/// Either kind of mesh, as read from a mesh file.
#[derive(Debug, Clone, PartialEq)]
pub enum Mesh {
    Interval(Mesh1D),
    Grid(Grid2D),
}

impl Mesh {
    pub fn dim(&self) -> usize {
        match self {
            Mesh::Interval(_) => 1,
            Mesh::Grid(_) => 2,
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Mesh::Interval(m) => m.nodes().len(),
            Mesh::Grid(g) => g.node_count(),
        }
    }

    pub fn coord(&self, node: usize) -> Coord {
        match self {
            Mesh::Interval(m) => [m.nodes()[node], 0.0],
            Mesh::Grid(g) => g.coord(node),
        }
    }

    /// Distinct boundary-piece ids in declaration order.
    pub fn boundary_pieces(&self) -> Vec<String> {
        let raw: Vec<&str> = match self {
            Mesh::Interval(m) => vec![m.boundary_left(), m.boundary_right()],
            Mesh::Grid(g) => g.boundary_edges().into_iter().map(|(id, _)| id).collect(),
        };
        let mut out: Vec<String> = Vec::new();
        for id in raw {
            if !out.iter().any(|o| o == id) {
                out.push(id.to_string());
            }
        }
        out
    }

    pub fn interface_ids(&self) -> Vec<String> {
        match self {
            Mesh::Interval(m) => m.interfaces().iter().map(|i| i.id.clone()).collect(),
            Mesh::Grid(g) => g.interface_lines().iter().map(|l| l.id.clone()).collect(),
        }
    }

    /// All nodes lying on the outer boundary, ascending.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        let mut nodes = match self {
            Mesh::Interval(m) => vec![0, m.element_count()],
            Mesh::Grid(g) => g.boundary_edges().into_iter().flat_map(|(_, n)| n).collect(),
        };
        nodes.sort_unstable();
        nodes.dedup();
        nodes
    }

    pub fn interface_cuts(&self) -> Vec<InterfaceCut> {
        match self {
            Mesh::Interval(m) => m
                .interfaces()
                .iter()
                .map(|i| InterfaceCut { axis: Axis::X, position: m.nodes()[i.node] })
                .collect(),
            Mesh::Grid(g) => g
                .interface_lines()
                .iter()
                .map(|l| InterfaceCut {
                    axis: l.axis,
                    position: match l.axis {
                        Axis::X => g.x_nodes()[l.index],
                        Axis::Y => g.y_nodes()[l.index],
                    },
                })
                .collect(),
        }
    }

    /// Distance from `p` to the outer boundary.
    pub fn boundary_distance(&self, p: &Coord) -> f64 {
        match self {
            Mesh::Interval(m) => {
                let (a, b) = m.domain();
                (p[0] - a).min(b - p[0])
            }
            Mesh::Grid(g) => {
                let (xs, ys) = (g.x_nodes(), g.y_nodes());
                (p[0] - xs[0])
                    .min(xs[xs.len() - 1] - p[0])
                    .min(p[1] - ys[0])
                    .min(ys[ys.len() - 1] - p[1])
            }
        }
    }

    /// Largest distance between two points of the domain.
    pub fn diameter(&self) -> f64 {
        match self {
            Mesh::Interval(m) => {
                let (a, b) = m.domain();
                b - a
            }
            Mesh::Grid(g) => {
                let (xs, ys) = (g.x_nodes(), g.y_nodes());
                (xs[xs.len() - 1] - xs[0]).hypot(ys[ys.len() - 1] - ys[0])
            }
        }
    }

    pub fn interpolation_weights(&self, p: &Coord) -> Result<Vec<(usize, f64)>> {
        match self {
            Mesh::Interval(m) => m.interpolation_weights(p[0]),
            Mesh::Grid(g) => g.interpolation_weights(p[0], p[1]),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MeshFile = serde_json::from_str(text)
            .map_err(|e| FieldError::Config(format!("mesh file: {e}")))?;
        file.into_mesh()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&MeshFile::from_mesh(self)).expect("mesh serializes")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum InterfaceRecord {
    Node(InterfaceNode),
    Line(InterfaceLine),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UniformSpec {
    /// Interval length (or half-length when `symmetric`), or grid x extent.
    length: f64,
    #[serde(default)]
    height: Option<f64>,
    elements: usize,
    #[serde(default)]
    elements_y: Option<usize>,
    #[serde(default)]
    interfaces: Vec<f64>,
    #[serde(default)]
    symmetric: bool,
}

/// On-disk mesh schema, documented in `docs/schema.md`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeshFile {
    dim: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nodes: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x_nodes: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y_nodes: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    uniform: Option<UniformSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    boundary: Option<std::collections::BTreeMap<String, String>>,
    #[serde(default)]
    interfaces: Vec<InterfaceRecord>,
}

impl MeshFile {
    fn from_mesh(mesh: &Mesh) -> Self {
        match mesh {
            Mesh::Interval(m) => MeshFile {
                dim: 1,
                nodes: Some(m.nodes.clone()),
                x_nodes: None,
                y_nodes: None,
                uniform: None,
                boundary: Some(
                    [("left", &m.boundary_left), ("right", &m.boundary_right)]
                        .into_iter()
                        .map(|(k, v)| (k.to_string(), v.clone()))
                        .collect(),
                ),
                interfaces: m.interfaces.iter().cloned().map(InterfaceRecord::Node).collect(),
            },
            Mesh::Grid(g) => MeshFile {
                dim: 2,
                nodes: None,
                x_nodes: Some(g.x_nodes.clone()),
                y_nodes: Some(g.y_nodes.clone()),
                uniform: None,
                boundary: Some(
                    [
                        ("left", &g.edge_tags.left),
                        ("right", &g.edge_tags.right),
                        ("bottom", &g.edge_tags.bottom),
                        ("top", &g.edge_tags.top),
                    ]
                    .into_iter()
                    .map(|(k, v)| (k.to_string(), v.clone()))
                    .collect(),
                ),
                interfaces: g.interface_lines.iter().cloned().map(InterfaceRecord::Line).collect(),
            },
        }
    }

    fn into_mesh(self) -> Result<Mesh> {
        let boundary = self.boundary.unwrap_or_default();
        let tag = |side: &str| boundary.get(side).cloned().unwrap_or_else(|| side.to_string());
        for side in boundary.keys() {
            let allowed: &[&str] = if self.dim == 1 {
                &["left", "right"]
            } else {
                &["left", "right", "bottom", "top"]
            };
            if !allowed.contains(&side.as_str()) {
                return Err(FieldError::Config(format!("unknown boundary side '{side}'")));
            }
        }
        match self.dim {
            1 => {
                let mut mesh = match (self.nodes, self.uniform) {
                    (Some(nodes), None) => {
                        let ifaces = self
                            .interfaces
                            .into_iter()
                            .map(|r| match r {
                                InterfaceRecord::Node(n) => Ok(n),
                                InterfaceRecord::Line(_) => Err(FieldError::Config(
                                    "1D interfaces are given as {node, id}".into(),
                                )),
                            })
                            .collect::<Result<Vec<_>>>()?;
                        return Mesh1D::new(nodes, tag("left"), tag("right"), ifaces).map(Mesh::Interval);
                    }
                    (None, Some(u)) => {
                        if u.symmetric {
                            Mesh1D::symmetric_interval(u.length, u.elements, &u.interfaces)?
                        } else {
                            Mesh1D::uniform_interval(u.length, u.elements, &u.interfaces)?
                        }
                    }
                    _ => {
                        return Err(FieldError::Config(
                            "1D mesh needs exactly one of 'nodes' or 'uniform'".into(),
                        ))
                    }
                };
                mesh.boundary_left = tag("left");
                mesh.boundary_right = tag("right");
                Ok(Mesh::Interval(mesh))
            }
            2 => {
                let tags = EdgeTags {
                    left: tag("left"),
                    right: tag("right"),
                    bottom: tag("bottom"),
                    top: tag("top"),
                };
                match (self.x_nodes, self.y_nodes, self.uniform) {
                    (Some(xs), Some(ys), None) => {
                        let lines = self
                            .interfaces
                            .into_iter()
                            .map(|r| match r {
                                InterfaceRecord::Line(l) => Ok(l),
                                InterfaceRecord::Node(_) => Err(FieldError::Config(
                                    "2D interfaces are given as {axis, index, id}".into(),
                                )),
                            })
                            .collect::<Result<Vec<_>>>()?;
                        Grid2D::new(xs, ys, tags, lines).map(Mesh::Grid)
                    }
                    (None, None, Some(u)) => {
                        let ly = u.height.ok_or_else(|| {
                            FieldError::Config("uniform 2D mesh needs 'height'".into())
                        })?;
                        let ny = u.elements_y.unwrap_or(u.elements);
                        let mut g = Grid2D::uniform_grid(u.length, ly, u.elements, ny, &u.interfaces)?;
                        g.edge_tags = tags;
                        Ok(Mesh::Grid(g))
                    }
                    _ => Err(FieldError::Config(
                        "2D mesh needs 'x_nodes' and 'y_nodes', or 'uniform'".into(),
                    )),
                }
            }
            d => Err(FieldError::Config(format!("unsupported mesh dimension {d}"))),
        }
    }
}
