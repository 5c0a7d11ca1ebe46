//! Structured quadrilateral meshes, bilinear shape functions and 2×2 Gauss
//! quadrature.
//!
//! Elements are 4-node bilinear quads numbered counter-clockwise. A notch is
//! represented by deleting the elements whose centroids fall strictly inside a
//! rectangle, which leaves a slit with free faces on both sides.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Abscissa of the two-point Gauss rule on [-1, 1].
pub const GAUSS_ABSCISSA: f64 = 0.577_350_269_189_625_8;

/// Local (ξ, η) of the four Gauss points, in element order.
pub const GAUSS_LOCAL: [[f64; 2]; 4] = [
    [-GAUSS_ABSCISSA, -GAUSS_ABSCISSA],
    [GAUSS_ABSCISSA, -GAUSS_ABSCISSA],
    [GAUSS_ABSCISSA, GAUSS_ABSCISSA],
    [-GAUSS_ABSCISSA, GAUSS_ABSCISSA],
];

const NODE_XI: [[f64; 2]; 4] = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];

/// Local node pairs of the four element edges: bottom, right, top, left.
pub const EDGE_NODES: [[usize; 2]; 4] = [[0, 1], [1, 2], [2, 3], [3, 0]];

/// Rectangular region whose elements are removed to form a slit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Notch {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Notch {
    fn contains(&self, x: f64, y: f64) -> bool {
        x > self.x_min && x < self.x_max && y > self.y_min && y < self.y_max
    }
}

/// One free element edge with its outward unit normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryEdge {
    pub element: usize,
    pub edge: usize,
    pub normal: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetKind {
    Nodes,
    Edges,
}

/// Named group of node ids or boundary-edge ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdSet {
    pub kind: SetKind,
    pub ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    #[serde(default)]
    pub id: String,
    pub nodes: Vec<[f64; 2]>,
    pub elements: Vec<[usize; 4]>,
    pub boundary: Vec<BoundaryEdge>,
    pub sets: BTreeMap<String, IdSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notch: Option<Notch>,
}

/// Shape function values, physical gradients and Jacobian determinant at a
/// local point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeEval {
    pub n: [f64; 4],
    /// `dndx[i] = [dN_i/dx, dN_i/dy]`
    pub dndx: [[f64; 2]; 4],
    pub det_j: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussPoint {
    pub element: usize,
    pub xi: f64,
    pub eta: f64,
    pub weight: f64,
    pub x: f64,
    pub y: f64,
    pub n: [f64; 4],
    pub dndx: [[f64; 2]; 4],
    pub det_j: f64,
}

impl GaussPoint {
    /// Quadrature weight times the Jacobian determinant.
    pub fn dv(&self) -> f64 {
        self.weight * self.det_j
    }
}

/// A point on a boundary edge used for Neumann collocation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryPoint {
    pub element: usize,
    pub edge: usize,
    pub xi: f64,
    pub eta: f64,
    pub x: f64,
    pub y: f64,
    pub normal: [f64; 2],
}

/// Bilinear shape functions and their local derivatives at (ξ, η).
pub fn shape_local(xi: f64, eta: f64) -> ([f64; 4], [[f64; 2]; 4]) {
    let mut n = [0.0; 4];
    let mut dn = [[0.0; 2]; 4];
    for (i, [xa, ea]) in NODE_XI.iter().enumerate() {
        n[i] = 0.25 * (1.0 + xa * xi) * (1.0 + ea * eta);
        dn[i][0] = 0.25 * xa * (1.0 + ea * eta);
        dn[i][1] = 0.25 * ea * (1.0 + xa * xi);
    }
    (n, dn)
}

/// Shape evaluation for an element given its nodal coordinates. `element` is
/// only used to label the error.
pub fn shape_eval_coords(coords: &[[f64; 2]; 4], element: usize, xi: f64, eta: f64) -> Result<ShapeEval> {
    let (n, dn) = shape_local(xi, eta);
    // J = [[dx/dξ, dy/dξ], [dx/dη, dy/dη]]
    let mut j = [[0.0; 2]; 2];
    for (a, c) in coords.iter().enumerate() {
        j[0][0] += dn[a][0] * c[0];
        j[0][1] += dn[a][0] * c[1];
        j[1][0] += dn[a][1] * c[0];
        j[1][1] += dn[a][1] * c[1];
    }
    let det_j = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    if !(det_j > 0.0) {
        return Err(Error::DegenerateElement { element, det_j });
    }
    let inv = [
        [j[1][1] / det_j, -j[0][1] / det_j],
        [-j[1][0] / det_j, j[0][0] / det_j],
    ];
    let mut dndx = [[0.0; 2]; 4];
    for a in 0..4 {
        dndx[a][0] = inv[0][0] * dn[a][0] + inv[0][1] * dn[a][1];
        dndx[a][1] = inv[1][0] * dn[a][0] + inv[1][1] * dn[a][1];
    }
    Ok(ShapeEval { n, dndx, det_j })
}

/// Shape evaluation for element `element` of `mesh`.
pub fn shape_eval(mesh: &Mesh, element: usize, xi: f64, eta: f64) -> Result<ShapeEval> {
    if !(-1.0..=1.0).contains(&xi) || !(-1.0..=1.0).contains(&eta) {
        return Err(Error::InvalidArgument(format!(
            "local coordinates ({xi}, {eta}) outside the reference square"
        )));
    }
    let coords = mesh.element_coords(element);
    shape_eval_coords(&coords, element, xi, eta)
}

/// Build a `width` × `height` rectangle of `nx` × `ny` square-ish elements,
/// optionally with a notch cut out.
pub fn build_rect_mesh(width: f64, height: f64, nx: usize, ny: usize, notch: Option<Notch>) -> Result<Mesh> {
    if nx < 2 || ny < 2 {
        return Err(Error::InvalidMesh(format!("need nx, ny >= 2, got {nx} x {ny}")));
    }
    if !(width > 0.0 && height > 0.0) {
        return Err(Error::InvalidMesh("width and height must be positive".into()));
    }
    let hx = width / nx as f64;
    let hy = height / ny as f64;

    let mut removed = vec![false; nx * ny];
    if let Some(nt) = &notch {
        if nt.x_min < 0.0 || nt.y_min < 0.0 || nt.x_max > width || nt.y_max > height || nt.x_min >= nt.x_max || nt.y_min >= nt.y_max {
            return Err(Error::InvalidMesh(format!("notch {nt:?} does not lie inside the domain")));
        }
        for j in 0..ny {
            for i in 0..nx {
                let cx = (i as f64 + 0.5) * hx;
                let cy = (j as f64 + 0.5) * hy;
                if nt.contains(cx, cy) {
                    removed[j * nx + i] = true;
                }
            }
        }
        if !removed.iter().any(|&r| r) {
            return Err(Error::InvalidMesh(format!("notch {nt:?} removes no elements")));
        }
        if (0..ny).any(|j| (0..nx).all(|i| removed[j * nx + i])) || (0..nx).any(|i| (0..ny).all(|j| removed[j * nx + i])) {
            return Err(Error::InvalidMesh("notch spans the full domain and disconnects it".into()));
        }
    }

    let grid_node = |i: usize, j: usize| j * (nx + 1) + i;
    let mut used = vec![false; (nx + 1) * (ny + 1)];
    let mut grid_elems = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            if removed[j * nx + i] {
                continue;
            }
            let conn = [grid_node(i, j), grid_node(i + 1, j), grid_node(i + 1, j + 1), grid_node(i, j + 1)];
            for &c in &conn {
                used[c] = true;
            }
            grid_elems.push(conn);
        }
    }

    let mut renumber = vec![usize::MAX; used.len()];
    let mut nodes = Vec::new();
    let mut grid_ij = Vec::new();
    for j in 0..=ny {
        for i in 0..=nx {
            let g = grid_node(i, j);
            if used[g] {
                renumber[g] = nodes.len();
                nodes.push([i as f64 * hx, j as f64 * hy]);
                grid_ij.push((i, j));
            }
        }
    }
    // Exact boundary coordinates regardless of rounding in i * hx.
    for (node, &(i, j)) in nodes.iter_mut().zip(&grid_ij) {
        if i == nx {
            node[0] = width;
        }
        if j == ny {
            node[1] = height;
        }
    }
    let elements: Vec<[usize; 4]> = grid_elems.iter().map(|c| c.map(|g| renumber[g])).collect();

    check_connected(&elements)?;

    let mut sets = BTreeMap::new();
    let mut node_set = |name: &str, pred: &dyn Fn(usize, usize) -> bool| {
        let ids: Vec<usize> = grid_ij.iter().enumerate().filter(|(_, &(i, j))| pred(i, j)).map(|(k, _)| k).collect();
        sets.insert(name.to_string(), IdSet { kind: SetKind::Nodes, ids });
    };
    node_set("bottom", &|_, j| j == 0);
    node_set("top", &|_, j| j == ny);
    node_set("left", &|i, _| i == 0);
    node_set("right", &|i, _| i == nx);
    node_set("bottom_right", &|i, j| i == nx && j == 0);

    let mut mesh = Mesh {
        id: mesh_id(width, height, nx, ny, notch.as_ref()),
        nodes,
        elements,
        boundary: Vec::new(),
        sets,
        notch,
    };
    mesh.boundary = find_boundary_edges(&mesh);

    let same_outer_side = |a: [f64; 2], b: [f64; 2]| {
        (a[0] == b[0] && (a[0] == 0.0 || a[0] == width)) || (a[1] == b[1] && (a[1] == 0.0 || a[1] == height))
    };
    let notch_edges: Vec<usize> = mesh
        .boundary
        .iter()
        .enumerate()
        .filter(|(_, e)| {
            let [a, b] = mesh.edge_node_ids(e.element, e.edge);
            !same_outer_side(mesh.nodes[a], mesh.nodes[b])
        })
        .map(|(k, _)| k)
        .collect();
    mesh.sets.insert("notch".into(), IdSet { kind: SetKind::Edges, ids: notch_edges });

    mesh.validate()?;
    Ok(mesh)
}

fn mesh_id(width: f64, height: f64, nx: usize, ny: usize, notch: Option<&Notch>) -> String {
    let mut id = format!("rect-{width}x{height}-{nx}x{ny}");
    if let Some(n) = notch {
        id.push_str(&format!("-notch[{},{}]x[{},{}]", n.x_min, n.x_max, n.y_min, n.y_max));
    }
    id
}

fn check_connected(elements: &[[usize; 4]]) -> Result<()> {
    if elements.is_empty() {
        return Err(Error::InvalidMesh("mesh has no elements".into()));
    }
    let mut edge_owner: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (e, conn) in elements.iter().enumerate() {
        for [a, b] in EDGE_NODES {
            let (p, q) = (conn[a], conn[b]);
            edge_owner.entry((p.min(q), p.max(q))).or_default().push(e);
        }
    }
    let mut adj = vec![Vec::new(); elements.len()];
    for owners in edge_owner.values() {
        if let [a, b] = owners[..] {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    let mut seen = vec![false; elements.len()];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(e) = queue.pop_front() {
        for &n in &adj[e] {
            if !seen[n] {
                seen[n] = true;
                queue.push_back(n);
            }
        }
    }
    if seen.iter().all(|&s| s) {
        Ok(())
    } else {
        Err(Error::InvalidMesh("element set is disconnected".into()))
    }
}

/// Edges referenced by exactly one element, in element/edge order.
fn find_boundary_edges(mesh: &Mesh) -> Vec<BoundaryEdge> {
    let mut count: HashMap<(usize, usize), usize> = HashMap::new();
    for conn in &mesh.elements {
        for [a, b] in EDGE_NODES {
            let (p, q) = (conn[a], conn[b]);
            *count.entry((p.min(q), p.max(q))).or_default() += 1;
        }
    }
    let mut out = Vec::new();
    for (e, conn) in mesh.elements.iter().enumerate() {
        for (k, [a, b]) in EDGE_NODES.iter().enumerate() {
            let (p, q) = (conn[*a], conn[*b]);
            if count[&(p.min(q), p.max(q))] == 1 {
                out.push(BoundaryEdge {
                    element: e,
                    edge: k,
                    normal: outward_normal(mesh.nodes[p], mesh.nodes[q]),
                });
            }
        }
    }
    out
}

/// Outward normal of a counter-clockwise edge running from `a` to `b`.
fn outward_normal(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len = dx.hypot(dy);
    [dy / len, -dx / len]
}

impl Mesh {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    pub fn dof_count(&self) -> usize {
        2 * self.nodes.len()
    }

    pub fn gauss_point_count(&self) -> usize {
        4 * self.elements.len()
    }

    pub fn element_coords(&self, element: usize) -> [[f64; 2]; 4] {
        self.elements[element].map(|n| self.nodes[n])
    }

    pub fn edge_node_ids(&self, element: usize, edge: usize) -> [usize; 2] {
        let conn = self.elements[element];
        EDGE_NODES[edge].map(|a| conn[a])
    }

    /// Ids from a named node set.
    pub fn node_set(&self, name: &str) -> Result<&[usize]> {
        match self.sets.get(name) {
            Some(IdSet { kind: SetKind::Nodes, ids }) => Ok(ids),
            _ => Err(Error::InvalidMesh(format!("no node set named {name:?}"))),
        }
    }

    /// Axis-aligned bounding box `[[x_min, y_min], [x_max, y_max]]`.
    pub fn bounding_box(&self) -> [[f64; 2]; 2] {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.nodes {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        [lo, hi]
    }

    /// All Gauss points, four per element in element order.
    pub fn gauss_points(&self) -> Result<Vec<GaussPoint>> {
        let mut out = Vec::with_capacity(self.gauss_point_count());
        for e in 0..self.elements.len() {
            let coords = self.element_coords(e);
            for [xi, eta] in GAUSS_LOCAL {
                let s = shape_eval_coords(&coords, e, xi, eta)?;
                let (x, y) = interpolate_coords(&coords, &s.n);
                out.push(GaussPoint {
                    element: e,
                    xi,
                    eta,
                    weight: 1.0,
                    x,
                    y,
                    n: s.n,
                    dndx: s.dndx,
                    det_j: s.det_j,
                });
            }
        }
        Ok(out)
    }

    /// Two Gauss points per boundary edge.
    pub fn boundary_points(&self) -> Vec<BoundaryPoint> {
        let mut out = Vec::with_capacity(2 * self.boundary.len());
        for be in &self.boundary {
            let [a, b] = EDGE_NODES[be.edge];
            let (pa, pb) = (NODE_XI[a], NODE_XI[b]);
            for t in [-GAUSS_ABSCISSA, GAUSS_ABSCISSA] {
                let s = 0.5 * (1.0 + t);
                let xi = pa[0] + s * (pb[0] - pa[0]);
                let eta = pa[1] + s * (pb[1] - pa[1]);
                let (n, _) = shape_local(xi, eta);
                let (x, y) = interpolate_coords(&self.element_coords(be.element), &n);
                out.push(BoundaryPoint {
                    element: be.element,
                    edge: be.edge,
                    xi,
                    eta,
                    x,
                    y,
                    normal: be.normal,
                });
            }
        }
        out
    }

    /// Check the structural invariants: connectivity in range, positive
    /// Jacobians at every Gauss point, unit boundary normals.
    pub fn validate(&self) -> Result<()> {
        for (e, conn) in self.elements.iter().enumerate() {
            if conn.iter().any(|&n| n >= self.nodes.len()) {
                return Err(Error::InvalidMesh(format!("element {e} references a missing node")));
            }
        }
        for be in &self.boundary {
            if be.element >= self.elements.len() || be.edge >= 4 {
                return Err(Error::InvalidMesh(format!("bad boundary edge {be:?}")));
            }
            let len = be.normal[0].hypot(be.normal[1]);
            if (len - 1.0).abs() >= 1e-12 {
                return Err(Error::InvalidMesh(format!("boundary normal {:?} not unit", be.normal)));
            }
        }
        if let Some(nt) = &self.notch {
            for (e, _) in self.elements.iter().enumerate() {
                let c = self.element_coords(e);
                let cx = c.iter().map(|p| p[0]).sum::<f64>() / 4.0;
                let cy = c.iter().map(|p| p[1]).sum::<f64>() / 4.0;
                if nt.contains(cx, cy) {
                    return Err(Error::InvalidMesh(format!("element {e} lies inside the notch")));
                }
            }
        }
        self.gauss_points().map(|_| ())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Mesh> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mesh: Mesh = serde_json::from_str(&text)?;
        mesh.validate()?;
        Ok(mesh)
    }
}

fn interpolate_coords(coords: &[[f64; 2]; 4], n: &[f64; 4]) -> (f64, f64) {
    let mut x = 0.0;
    let mut y = 0.0;
    for (c, ni) in coords.iter().zip(n) {
        x += ni * c[0];
        y += ni * c[1];
    }
    (x, y)
}
