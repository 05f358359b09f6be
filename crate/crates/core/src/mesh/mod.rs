//! Closed, consistently oriented triangle meshes and the discrete geometry
//! every surface integral in the crate is built on.
//!
//! A [`TriMesh`] splits into a shared [`Topology`] (faces, edges, adjacency)
//! and per-snapshot geometry (positions, face areas, barycentric dual areas,
//! vertex normals). Moving vertices only rebuilds the geometry, so a flow
//! step never re-validates connectivity.
//!
//! Open meshes (with boundary) are supported through
//! [`TriMesh::new_with_boundary`] for flat fixtures and clipped pieces.
//! Curvature at boundary vertices is reported as zero.

pub mod clip;
pub mod curvature;
pub mod io;
pub mod quadrature;
pub mod remesh;
pub mod shapes;

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::Vector3;
use thiserror::Error;

pub use curvature::{compute_curvature, CurvatureField};
pub use quadrature::{integrate_point_fn, integrate_scalar, quadrature_points, QuadPoint, ScalarField};

/// A point (or vector) in R³.
pub type Point = Vector3<f64>;

/// Relative face-area floor below which a triangle counts as degenerate.
pub const DEGENERATE_AREA_RATIO: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("face {face} references vertex {vertex}, but the mesh has {count} vertices")]
    InvalidIndex { face: usize, vertex: usize, count: usize },
    #[error("non-manifold edge ({0}, {1}): {2} incident faces")]
    NonManifold(usize, usize, usize),
    #[error("degenerate face {face} (area {area:e})")]
    DegenerateFace { face: usize, area: f64 },
    #[error("inconsistent orientation across edge ({0}, {1})")]
    InconsistentOrientation(usize, usize),
    #[error("cotangent weight {weight:e} on edge ({i}, {j}) exceeds the degeneracy limit")]
    NumericalDegeneracy { i: usize, j: usize, weight: f64 },
    #[error("non-finite input value at index {0}")]
    NonFiniteInput(usize),
    #[error("field has {got} entries, expected {expected}")]
    FieldLength { got: usize, expected: usize },
    #[error("mesh I/O: {0}")]
    Io(String),
    #[error("mesh parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Undirected edge with up to two incident faces.
///
/// `apex[0]` is the vertex opposite the edge in the face that traverses it as
/// `v[0] -> v[1]`; `apex[1]` belongs to the face traversing `v[1] -> v[0]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub v: [usize; 2],
    pub apex: [Option<usize>; 2],
    pub faces: [Option<usize>; 2],
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.faces[0].is_none() || self.faces[1].is_none()
    }
}

/// Connectivity shared by every snapshot of a flow.
#[derive(Debug, Clone)]
pub struct Topology {
    n_vertices: usize,
    faces: Vec<[usize; 3]>,
    edges: Vec<Edge>,
    vertex_faces: Vec<Vec<usize>>,
    vertex_neighbors: Vec<Vec<usize>>,
    boundary_vertex: Vec<bool>,
    closed: bool,
}

impl Topology {
    fn build(n_vertices: usize, faces: Vec<[usize; 3]>, allow_boundary: bool) -> Result<Self, MeshError> {
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                if v >= n_vertices {
                    return Err(MeshError::InvalidIndex { face: fi, vertex: v, count: n_vertices });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[2] == f[0] {
                return Err(MeshError::DegenerateFace { face: fi, area: 0.0 });
            }
        }

        let mut edge_index: HashMap<(usize, usize), usize> = HashMap::with_capacity(faces.len() * 2);
        let mut edges: Vec<Edge> = Vec::with_capacity(faces.len() * 3 / 2 + 1);
        let mut incidence: Vec<usize> = Vec::new();
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b, apex) = (f[k], f[(k + 1) % 3], f[(k + 2) % 3]);
                let key = (a.min(b), a.max(b));
                let ei = *edge_index.entry(key).or_insert_with(|| {
                    edges.push(Edge { v: [key.0, key.1], apex: [None, None], faces: [None, None] });
                    incidence.push(0);
                    edges.len() - 1
                });
                incidence[ei] += 1;
                if incidence[ei] > 2 {
                    return Err(MeshError::NonManifold(key.0, key.1, incidence[ei]));
                }
                let slot = if a == key.0 { 0 } else { 1 };
                let e = &mut edges[ei];
                if e.faces[slot].is_some() {
                    return Err(MeshError::InconsistentOrientation(key.0, key.1));
                }
                e.faces[slot] = Some(fi);
                e.apex[slot] = Some(apex);
            }
        }

        let mut boundary_vertex = vec![false; n_vertices];
        let mut closed = true;
        for e in &edges {
            if e.is_boundary() {
                if !allow_boundary {
                    return Err(MeshError::NonManifold(e.v[0], e.v[1], 1));
                }
                closed = false;
                boundary_vertex[e.v[0]] = true;
                boundary_vertex[e.v[1]] = true;
            }
        }

        let mut vertex_faces = vec![Vec::new(); n_vertices];
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                vertex_faces[v].push(fi);
            }
        }
        let mut vertex_neighbors = vec![Vec::new(); n_vertices];
        for e in &edges {
            vertex_neighbors[e.v[0]].push(e.v[1]);
            vertex_neighbors[e.v[1]].push(e.v[0]);
        }

        Ok(Self { n_vertices, faces, edges, vertex_faces, vertex_neighbors, boundary_vertex, closed })
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn vertex_faces(&self, v: usize) -> &[usize] {
        &self.vertex_faces[v]
    }

    /// One-ring neighbours of `v`.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.vertex_neighbors[v]
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary_vertex[v]
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// V − E + F over the whole mesh. Isolated vertices are not counted.
    pub fn euler_characteristic(&self) -> i64 {
        let used = self.vertex_faces.iter().filter(|f| !f.is_empty()).count();
        used as i64 - self.edges.len() as i64 + self.faces.len() as i64
    }

    /// Face-connected components, as a component label per face.
    pub fn face_components(&self) -> (usize, Vec<usize>) {
        let mut label = vec![usize::MAX; self.faces.len()];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..self.faces.len() {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = count;
            stack.push(start);
            while let Some(f) = stack.pop() {
                for &v in &self.faces[f] {
                    for &g in &self.vertex_faces[v] {
                        if label[g] == usize::MAX {
                            label[g] = count;
                            stack.push(g);
                        }
                    }
                }
            }
            count += 1;
        }
        (count, label)
    }
}

/// Triangulated surface with cached geometry.
#[derive(Debug, Clone)]
pub struct TriMesh {
    topo: Arc<Topology>,
    positions: Vec<Point>,
    face_areas: Vec<f64>,
    dual_areas: Vec<f64>,
    vertex_normals: Vec<Vector3<f64>>,
    total_area: f64,
}

/// Builds a closed, consistently oriented mesh and checks every invariant.
pub fn build_mesh(vertices: Vec<Point>, faces: Vec<[usize; 3]>) -> Result<TriMesh, MeshError> {
    TriMesh::new(vertices, faces)
}

impl TriMesh {
    /// Closed manifold mesh; any boundary edge is rejected as `NonManifold`.
    pub fn new(vertices: Vec<Point>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let topo = Topology::build(vertices.len(), faces, false)?;
        Self::from_topology(Arc::new(topo), vertices)
    }

    /// Oriented manifold mesh that may have boundary edges.
    pub fn new_with_boundary(vertices: Vec<Point>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let topo = Topology::build(vertices.len(), faces, true)?;
        Self::from_topology(Arc::new(topo), vertices)
    }

    /// Geometry for new positions on an existing topology.
    pub fn from_topology(topo: Arc<Topology>, positions: Vec<Point>) -> Result<Self, MeshError> {
        if positions.len() != topo.n_vertices {
            return Err(MeshError::FieldLength { got: positions.len(), expected: topo.n_vertices });
        }
        for (i, p) in positions.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(MeshError::NonFiniteInput(i));
            }
        }
        let nf = topo.faces.len();
        let mut face_areas = Vec::with_capacity(nf);
        let mut dual_areas = vec![0.0; topo.n_vertices];
        let mut normal_acc = vec![Vector3::zeros(); topo.n_vertices];
        for f in &topo.faces {
            let (a, b, c) = (positions[f[0]], positions[f[1]], positions[f[2]]);
            let cross = (b - a).cross(&(c - a));
            let area = 0.5 * cross.norm();
            face_areas.push(area);
            for &v in f {
                dual_areas[v] += area / 3.0;
                normal_acc[v] += cross;
            }
        }
        let total_area: f64 = face_areas.iter().sum();
        if nf > 0 {
            let floor = DEGENERATE_AREA_RATIO * total_area / nf as f64;
            for (fi, &a) in face_areas.iter().enumerate() {
                if !(a > floor) {
                    return Err(MeshError::DegenerateFace { face: fi, area: a });
                }
            }
        }
        let vertex_normals = normal_acc
            .into_iter()
            .map(|n| {
                let len = n.norm();
                if len > 0.0 {
                    n / len
                } else {
                    n
                }
            })
            .collect();
        Ok(Self { topo, positions, face_areas, dual_areas, vertex_normals, total_area })
    }

    /// Same topology, new positions.
    pub fn with_positions(&self, positions: Vec<Point>) -> Result<Self, MeshError> {
        Self::from_topology(Arc::clone(&self.topo), positions)
    }

    /// Applies `f` to every vertex.
    pub fn mapped(&self, f: impl Fn(&Point) -> Point) -> Result<Self, MeshError> {
        self.with_positions(self.positions.iter().map(f).collect())
    }

    pub fn translated(&self, v: &Point) -> Result<Self, MeshError> {
        self.mapped(|p| p + v)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, MeshError> {
        self.mapped(|p| p * factor)
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topo
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.topo.faces
    }

    pub fn n_vertices(&self) -> usize {
        self.positions.len()
    }

    pub fn n_faces(&self) -> usize {
        self.topo.faces.len()
    }

    pub fn is_closed(&self) -> bool {
        self.topo.closed
    }

    pub fn face_areas(&self) -> &[f64] {
        &self.face_areas
    }

    /// Barycentric dual areas (a third of each incident face).
    pub fn dual_areas(&self) -> &[f64] {
        &self.dual_areas
    }

    /// Area-weighted unit vertex normals, outward for positively oriented closed surfaces.
    pub fn vertex_normals(&self) -> &[Vector3<f64>] {
        &self.vertex_normals
    }

    pub fn total_area(&self) -> f64 {
        self.total_area
    }

    pub fn face_normal(&self, f: usize) -> Vector3<f64> {
        let [a, b, c] = self.topo.faces[f];
        let (a, b, c) = (self.positions[a], self.positions[b], self.positions[c]);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn face_centroid(&self, f: usize) -> Point {
        let [a, b, c] = self.topo.faces[f];
        (self.positions[a] + self.positions[b] + self.positions[c]) / 3.0
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.topo.euler_characteristic()
    }

    /// Volume enclosed by a closed mesh, via the divergence theorem.
    pub fn enclosed_volume(&self) -> f64 {
        self.topo
            .faces
            .iter()
            .map(|f| {
                let (a, b, c) = (self.positions[f[0]], self.positions[f[1]], self.positions[f[2]]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn mean_edge_length(&self) -> f64 {
        let edges = self.topo.edges();
        if edges.is_empty() {
            return 0.0;
        }
        edges.iter().map(|e| (self.positions[e.v[0]] - self.positions[e.v[1]]).norm()).sum::<f64>()
            / edges.len() as f64
    }

    pub fn min_edge_length(&self) -> f64 {
        self.topo
            .edges()
            .iter()
            .map(|e| (self.positions[e.v[0]] - self.positions[e.v[1]]).norm())
            .fold(f64::INFINITY, f64::min)
    }

    /// Mean length of the edges incident to each vertex.
    pub fn local_edge_lengths(&self) -> Vec<f64> {
        let mut sum = vec![0.0; self.n_vertices()];
        let mut count = vec![0usize; self.n_vertices()];
        for e in self.topo.edges() {
            let len = (self.positions[e.v[0]] - self.positions[e.v[1]]).norm();
            for &v in &e.v {
                sum[v] += len;
                count[v] += 1;
            }
        }
        sum.iter().zip(&count).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect()
    }

    /// Axis-aligned bounds `(min, max)`; `None` for an empty mesh.
    pub fn bounding_box(&self) -> Option<(Point, Point)> {
        let first = *self.positions.first()?;
        Some(self.positions.iter().fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
    }

    /// Diagonal of the bounding box.
    pub fn diameter(&self) -> f64 {
        self.bounding_box().map(|(lo, hi)| (hi - lo).norm()).unwrap_or(0.0)
    }

    pub fn centroid(&self) -> Point {
        if self.positions.is_empty() {
            return Point::zeros();
        }
        self.positions.iter().sum::<Point>() / self.positions.len() as f64
    }

    /// Disjoint union of two meshes. The result is closed only if both are.
    pub fn union(&self, other: &TriMesh) -> Result<TriMesh, MeshError> {
        let offset = self.n_vertices();
        let mut positions = self.positions.clone();
        positions.extend_from_slice(&other.positions);
        let mut faces = self.faces().to_vec();
        faces.extend(other.faces().iter().map(|f| [f[0] + offset, f[1] + offset, f[2] + offset]));
        if self.is_closed() && other.is_closed() {
            TriMesh::new(positions, faces)
        } else {
            TriMesh::new_with_boundary(positions, faces)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::shapes::{icosahedron, icosphere, torus};
    use super::*;

    #[test]
    fn icosahedron_is_valid_sphere() {
        let m = icosahedron(1.0);
        assert_eq!(m.n_vertices(), 12);
        assert_eq!(m.n_faces(), 20);
        assert_eq!(m.euler_characteristic(), 2);
        assert!(m.enclosed_volume() > 0.0);
    }

    #[test]
    fn missing_face_is_non_manifold() {
        let m = icosahedron(1.0);
        let mut faces = m.faces().to_vec();
        faces.pop();
        let err = TriMesh::new(m.positions().to_vec(), faces).unwrap_err();
        assert!(matches!(err, MeshError::NonManifold(_, _, 1)), "{err}");
    }

    #[test]
    fn flipped_face_is_inconsistent() {
        let m = icosahedron(1.0);
        let mut faces = m.faces().to_vec();
        faces[3].swap(1, 2);
        let err = TriMesh::new(m.positions().to_vec(), faces).unwrap_err();
        assert!(matches!(err, MeshError::InconsistentOrientation(..)), "{err}");
    }

    #[test]
    fn triple_edge_is_non_manifold() {
        let m = icosahedron(1.0);
        let mut faces = m.faces().to_vec();
        let [a, b, _] = faces[0];
        let mut positions = m.positions().to_vec();
        positions.push(Point::new(3.0, 3.0, 3.0));
        faces.push([b, a, positions.len() - 1]);
        let err = TriMesh::new(positions, faces).unwrap_err();
        assert!(matches!(err, MeshError::NonManifold(_, _, _) | MeshError::InconsistentOrientation(..)));
    }

    #[test]
    fn collapsed_face_is_degenerate() {
        let m = icosahedron(1.0);
        let mut positions = m.positions().to_vec();
        let [a, b, c] = m.faces()[0];
        positions[c] = (positions[a] + positions[b]) * 0.5;
        // Collapsing one vertex onto an edge midpoint zeroes that face's area.
        let err = TriMesh::new(positions, m.faces().to_vec()).unwrap_err();
        assert!(matches!(err, MeshError::DegenerateFace { .. }), "{err}");
    }

    #[test]
    fn torus_has_zero_euler_characteristic() {
        let m = torus(2.0, 0.7, 32, 16);
        assert_eq!(m.euler_characteristic(), 0);
        assert!(m.is_closed());
    }

    #[test]
    fn dual_areas_sum_to_total_area() {
        let m = icosphere(2.0, 3);
        let sum: f64 = m.dual_areas().iter().sum();
        assert!(((sum - m.total_area()) / m.total_area()).abs() < 1e-12);
    }

    #[test]
    fn invalid_index_rejected() {
        let err = TriMesh::new(vec![Point::zeros(); 3], vec![[0, 1, 5]]).unwrap_err();
        assert!(matches!(err, MeshError::InvalidIndex { vertex: 5, .. }));
    }
}
