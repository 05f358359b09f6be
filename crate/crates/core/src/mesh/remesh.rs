//! Optional mesh-quality pass: Delaunay edge flips and tangential smoothing.
//!
//! Off by default. Flips change connectivity and smoothing slides vertices
//! along the surface, so both perturb every measure being tracked.

use std::collections::HashSet;

use super::{MeshError, Point, TriMesh};

/// Flips are only made across nearly flat hinges (cosine of the dihedral angle).
const FLAT_HINGE: f64 = 0.98;

fn angle_at(apex: &Point, a: &Point, b: &Point) -> f64 {
    let (u, v) = (a - apex, b - apex);
    u.cross(&v).norm().atan2(u.dot(&v))
}

/// One pass of Delaunay flips followed by one tangential smoothing sweep.
pub fn improve(mesh: &TriMesh) -> Result<TriMesh, MeshError> {
    let flipped = flip_edges(mesh)?;
    tangential_smooth(&flipped, 0.5)
}

pub fn flip_edges(mesh: &TriMesh) -> Result<TriMesh, MeshError> {
    let pos = mesh.positions();
    let topo = mesh.topology();
    let mut faces = mesh.faces().to_vec();
    let mut touched = vec![false; faces.len()];
    let mut valence: Vec<usize> = (0..mesh.n_vertices()).map(|v| topo.neighbors(v).len()).collect();
    let mut existing: HashSet<(usize, usize)> = topo.edges().iter().map(|e| (e.v[0], e.v[1])).collect();
    let mut changed = false;
    for e in topo.edges() {
        let ([i, j], [Some(k), Some(l)], [Some(fa), Some(fb)]) = (e.v, e.apex, e.faces) else { continue };
        if touched[fa] || touched[fb] || k == l || valence[i] <= 3 || valence[j] <= 3 {
            continue;
        }
        if angle_at(&pos[k], &pos[i], &pos[j]) + angle_at(&pos[l], &pos[i], &pos[j]) <= std::f64::consts::PI + 1e-12 {
            continue;
        }
        if mesh.face_normal(fa).dot(&mesh.face_normal(fb)) < FLAT_HINGE {
            continue;
        }
        let key = (k.min(l), k.max(l));
        if existing.contains(&key) {
            continue;
        }
        // face fa traverses i -> j with apex k, face fb traverses j -> i with apex l
        faces[fa] = [l, j, k];
        faces[fb] = [k, i, l];
        touched[fa] = true;
        touched[fb] = true;
        valence[i] -= 1;
        valence[j] -= 1;
        valence[k] += 1;
        valence[l] += 1;
        existing.remove(&(i, j));
        existing.insert(key);
        changed = true;
    }
    if !changed {
        return Ok(mesh.clone());
    }
    if mesh.is_closed() {
        TriMesh::new(pos.to_vec(), faces)
    } else {
        TriMesh::new_with_boundary(pos.to_vec(), faces)
    }
}

/// Moves each interior vertex a fraction `lambda` towards its neighbour
/// average, with the normal component removed.
pub fn tangential_smooth(mesh: &TriMesh, lambda: f64) -> Result<TriMesh, MeshError> {
    let pos = mesh.positions();
    let topo = mesh.topology();
    let normals = mesh.vertex_normals();
    let moved: Vec<Point> = (0..mesh.n_vertices())
        .map(|v| {
            let nb = topo.neighbors(v);
            if topo.is_boundary_vertex(v) || nb.is_empty() {
                return pos[v];
            }
            let avg = nb.iter().map(|&u| pos[u]).sum::<Point>() / nb.len() as f64;
            let d = avg - pos[v];
            let n = normals[v];
            pos[v] + (d - n * d.dot(&n)) * lambda
        })
        .collect();
    mesh.with_positions(moved)
}
