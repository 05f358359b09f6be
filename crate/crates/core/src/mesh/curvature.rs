//! Per-vertex curvature from the cotangent area gradient and the angle defect.
//!
//! H⃗ is normalized by the mixed Voronoi area of each vertex, which keeps it
//! pointwise consistent at irregular vertices (the barycentric area is off by
//! ~15% at the valence-5 vertices of an icosphere). K is normalized by the
//! barycentric area, so integrating it with the mesh quadrature reproduces
//! 2πχ exactly.
//!
//! Sign convention: `mean_vector` is the mean curvature vector H⃗ (it points
//! inward on a round sphere) and `mean` is the scalar H = −H⃗·n, positive on
//! spheres with outward normal n.

use std::f64::consts::PI;

use nalgebra::Vector3;

use super::{MeshError, TriMesh};

/// Cotangent weights larger than this indicate a near-zero angle.
pub const MAX_COTANGENT: f64 = 1e8;

#[derive(Debug, Clone)]
pub struct CurvatureField {
    /// Mean curvature vector H⃗ (1/length).
    pub mean_vector: Vec<Vector3<f64>>,
    /// Scalar mean curvature H = −H⃗·n.
    pub mean: Vec<f64>,
    /// Gaussian curvature from the angle defect over the dual area.
    pub gaussian: Vec<f64>,
    /// Squared norm of the second fundamental form, H² − 2K clamped below at |H⃗|²/2.
    pub a2: Vec<f64>,
    pub normals: Vec<Vector3<f64>>,
}

impl CurvatureField {
    pub fn max_a2(&self) -> f64 {
        self.a2.iter().copied().fold(0.0, f64::max)
    }

    /// Vertex index of the largest |A|².
    pub fn argmax_a2(&self) -> Option<usize> {
        self.a2
            .iter()
            .enumerate()
            .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
                Some((_, b)) if b >= v => best,
                _ => Some((i, v)),
            })
            .map(|(i, _)| i)
    }

    pub fn mean_norm_squared(&self) -> Vec<f64> {
        self.mean_vector.iter().map(|h| h.norm_squared()).collect()
    }
}

/// Corner dot products (p_{k+1} − p_k)·(p_{k+2} − p_k) of one face.
#[inline]
fn corner_dots(p: &[Vector3<f64>; 3]) -> [f64; 3] {
    std::array::from_fn(|k| (p[(k + 1) % 3] - p[k]).dot(&(p[(k + 2) % 3] - p[k])))
}

#[inline]
fn add_mixed_area(out: &mut [f64], f: &[usize; 3], p: &[Vector3<f64>; 3], dots: &[f64; 3], area: f64) {
    if let Some(obtuse) = dots.iter().position(|&d| d < 0.0) {
        for k in 0..3 {
            out[f[k]] += if k == obtuse { 0.5 * area } else { 0.25 * area };
        }
        return;
    }
    for k in 0..3 {
        let (q, r) = ((k + 1) % 3, (k + 2) % 3);
        let (cot_q, cot_r) = (dots[q] / (2.0 * area), dots[r] / (2.0 * area));
        out[f[k]] += ((p[r] - p[k]).norm_squared() * cot_q + (p[q] - p[k]).norm_squared() * cot_r) / 8.0;
    }
}

/// Mixed Voronoi vertex areas: circumcentric where triangles are
/// non-obtuse, otherwise half/quarter splits of the obtuse triangle.
pub fn mixed_areas(mesh: &TriMesh) -> Vec<f64> {
    let pos = mesh.positions();
    let mut out = vec![0.0; mesh.n_vertices()];
    for (f, &area) in mesh.faces().iter().zip(mesh.face_areas()) {
        let p = [pos[f[0]], pos[f[1]], pos[f[2]]];
        add_mixed_area(&mut out, f, &p, &corner_dots(&p), area);
    }
    out
}

/// Solves the symmetric positive definite 5×5 system in place; `None` if not SPD.
#[allow(clippy::needless_range_loop)]
fn solve_spd5(mut a: [[f64; 5]; 5], mut b: [f64; 5]) -> Option<[f64; 5]> {
    for j in 0..5 {
        let mut d = a[j][j];
        for k in 0..j {
            d -= a[j][k] * a[j][k];
        }
        if !(d > 1e-300) {
            return None;
        }
        let d = d.sqrt();
        a[j][j] = d;
        for i in j + 1..5 {
            let mut s = a[i][j];
            for k in 0..j {
                s -= a[i][k] * a[j][k];
            }
            a[i][j] = s / d;
        }
    }
    for i in 0..5 {
        for k in 0..i {
            b[i] -= a[i][k] * b[k];
        }
        b[i] /= a[i][i];
    }
    for i in (0..5).rev() {
        for k in i + 1..5 {
            b[i] -= a[k][i] * b[k];
        }
        b[i] /= a[i][i];
    }
    Some(b)
}

/// Vertex normals from a least-squares height-function fit
/// w = a u² + b uv + c v² + d u + e v over the one-ring (two-ring when the
/// one-ring has fewer than five vertices), in a frame aligned with the
/// area-weighted normal. Falls back to the area-weighted normal on boundary
/// vertices and when the fit is singular.
pub fn fitted_normals(mesh: &TriMesh) -> Vec<Vector3<f64>> {
    let pos = mesh.positions();
    let topo = mesh.topology();
    let base = mesh.vertex_normals();
    let mut ring: Vec<usize> = Vec::new();
    (0..mesh.n_vertices())
        .map(|v| {
            let n0 = base[v];
            if topo.is_boundary_vertex(v) || n0 == Vector3::zeros() {
                return n0;
            }
            ring.clear();
            ring.extend_from_slice(topo.neighbors(v));
            if ring.len() < 5 {
                for &u in topo.neighbors(v) {
                    ring.extend(topo.neighbors(u).iter().filter(|&&w| w != v));
                }
                ring.sort_unstable();
                ring.dedup();
            }
            let e1 = if n0.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
            let e1 = (e1 - n0 * e1.dot(&n0)).normalize();
            let e2 = n0.cross(&e1);
            let mut ata = [[0.0; 5]; 5];
            let mut atb = [0.0; 5];
            for &u in ring.iter() {
                let d = pos[u] - pos[v];
                let (x, y, z) = (d.dot(&e1), d.dot(&e2), d.dot(&n0));
                let row = [x * x, x * y, y * y, x, y];
                for i in 0..5 {
                    for j in 0..=i {
                        ata[i][j] += row[i] * row[j];
                    }
                    atb[i] += row[i] * z;
                }
            }
            match solve_spd5(ata, atb) {
                Some(c) => (n0 - e1 * c[3] - e2 * c[4]).normalize(),
                None => n0,
            }
        })
        .collect()
}

pub fn compute_curvature(mesh: &TriMesh) -> Result<CurvatureField, MeshError> {
    let n = mesh.n_vertices();
    let pos = mesh.positions();
    let topo = mesh.topology();

    // one pass over faces: cotangent Laplacian, angle sums, mixed areas
    let mut laplace = vec![Vector3::zeros(); n];
    let mut angle_sum = vec![0.0; n];
    let mut voronoi = vec![0.0; n];
    for (f, &area) in mesh.faces().iter().zip(mesh.face_areas()) {
        let p = [pos[f[0]], pos[f[1]], pos[f[2]]];
        let dots = corner_dots(&p);
        let twice = 2.0 * area;
        for k in 0..3 {
            let (i, j) = (f[(k + 1) % 3], f[(k + 2) % 3]);
            let c = dots[k] / twice;
            if !c.is_finite() || c.abs() > MAX_COTANGENT {
                return Err(MeshError::NumericalDegeneracy { i: i.min(j), j: i.max(j), weight: c });
            }
            let d = (p[(k + 2) % 3] - p[(k + 1) % 3]) * (0.5 * c);
            laplace[i] += d;
            laplace[j] -= d;
        }
        // the third angle follows from the angle sum of a triangle
        let (a0, a1) = (twice.atan2(dots[0]), twice.atan2(dots[1]));
        angle_sum[f[0]] += a0;
        angle_sum[f[1]] += a1;
        angle_sum[f[2]] += (PI - a0 - a1).max(0.0);
        add_mixed_area(&mut voronoi, f, &p, &dots, area);
    }

    let areas = mesh.dual_areas();
    let normals = fitted_normals(mesh);
    let mut mean_vector = Vec::with_capacity(n);
    let mut mean = Vec::with_capacity(n);
    let mut gaussian = Vec::with_capacity(n);
    let mut a2 = Vec::with_capacity(n);
    for v in 0..n {
        if topo.is_boundary_vertex(v) || areas[v] <= 0.0 {
            mean_vector.push(Vector3::zeros());
            mean.push(0.0);
            gaussian.push(0.0);
            a2.push(0.0);
            continue;
        }
        let h = laplace[v] / voronoi[v];
        let hs = -h.dot(&normals[v]);
        let k = (2.0 * PI - angle_sum[v]) / areas[v];
        let h2 = h.norm_squared();
        mean_vector.push(h);
        mean.push(hs);
        gaussian.push(k);
        a2.push((hs * hs - 2.0 * k).max(0.5 * h2));
    }
    Ok(CurvatureField { mean_vector, mean, gaussian, a2, normals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::integrate_scalar;
    use crate::mesh::shapes::{closed_box, capped_cylinder, icosphere, torus};
    use crate::mesh::ScalarField;

    #[test]
    fn sphere_mean_curvature_matches_two_over_radius() {
        let m = icosphere(2.0, 4);
        let c = compute_curvature(&m).unwrap();
        let worst = c.mean.iter().map(|h| (h - 1.0).abs()).fold(0.0, f64::max);
        assert!(worst < 0.02, "max relative error {worst}");
    }

    #[test]
    fn flat_box_face_interior_is_flat() {
        let m = closed_box(4.0, 4.0, 4.0, 16);
        let c = compute_curvature(&m).unwrap();
        let mut checked = 0;
        for (v, p) in m.positions().iter().enumerate() {
            // interior of the top face, at least two cells from its rim
            if (p.z - 2.0).abs() < 1e-12 && p.x.abs() < 1.4 && p.y.abs() < 1.4 {
                assert!(c.mean_vector[v].norm() < 1e-9);
                assert!(c.gaussian[v].abs() < 1e-9);
                checked += 1;
            }
        }
        assert!(checked > 20);
    }

    #[test]
    fn cylinder_wall_has_unit_mean_and_zero_gauss() {
        let m = capped_cylinder(1.0, 6.0, 64, 48);
        let c = compute_curvature(&m).unwrap();
        let mut checked = 0;
        for (v, p) in m.positions().iter().enumerate() {
            if p.z.abs() < 1.5 && ((p.x * p.x + p.y * p.y).sqrt() - 1.0).abs() < 1e-9 {
                assert!((c.mean[v] - 1.0).abs() < 0.02, "H = {}", c.mean[v]);
                assert!(c.gaussian[v].abs() < 1e-6, "K = {}", c.gaussian[v]);
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn discrete_gauss_bonnet_is_exact() {
        for (m, chi) in [(icosphere(2.0, 3), 2.0), (torus(2.0, 0.6, 40, 20), 0.0)] {
            let c = compute_curvature(&m).unwrap();
            let total = integrate_scalar(&m, ScalarField::Vertex(&c.gaussian)).unwrap();
            let expect = 2.0 * PI * chi;
            assert!((total - expect).abs() <= 1e-9 * expect.abs().max(1.0), "{total} vs {expect}");
        }
    }

    #[test]
    fn a2_dominates_half_mean_squared() {
        let m = torus(2.0, 0.6, 40, 20);
        let c = compute_curvature(&m).unwrap();
        for v in 0..m.n_vertices() {
            assert!(c.a2[v] >= 0.0);
            assert!(c.a2[v] + 1e-12 >= 0.5 * c.mean_vector[v].norm_squared());
        }
    }

    #[test]
    fn sphere_mean_vector_is_normal() {
        let m = icosphere(2.0, 4);
        let c = compute_curvature(&m).unwrap();
        for v in 0..m.n_vertices() {
            let cos = (-c.mean_vector[v]).normalize().dot(&c.normals[v]);
            assert!(cos.clamp(-1.0, 1.0).acos() < 0.2);
        }
    }
}
