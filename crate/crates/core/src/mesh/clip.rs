//! Exact triangle–ball clipping and ball-restricted integrals.
//!
//! A ball cuts the plane of a triangle in a disk, so the clipped area is the
//! area of a triangle–disk intersection in 2D. That is computed exactly as a
//! signed sum over the triangle's edges of (origin, edge) wedges intersected
//! with the disk, each wedge being a union of flat triangles and circular
//! sectors.

use std::collections::HashMap;

use nalgebra::Vector2;

use super::{Point, TriMesh};

type V2 = Vector2<f64>;

fn cross2(a: &V2, b: &V2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Signed area of triangle (0, a, b) intersected with the disk |p| ≤ r.
fn wedge_disk_area(a: V2, b: V2, r: f64) -> f64 {
    let d = b - a;
    let (qa, qb, qc) = (d.dot(&d), a.dot(&d), a.dot(&a) - r * r);
    let mut cuts = [0.0, 1.0, 1.0, 1.0];
    let mut n = 1;
    if qa > 0.0 {
        let disc = qb * qb - qa * qc;
        if disc > 0.0 {
            let s = disc.sqrt();
            for t in [(-qb - s) / qa, (-qb + s) / qa] {
                if t > 0.0 && t < 1.0 {
                    cuts[n] = t;
                    n += 1;
                }
            }
        }
    }
    cuts[n] = 1.0;
    let mut total = 0.0;
    for k in 0..n {
        let (p, q) = (a + d * cuts[k], a + d * cuts[k + 1]);
        let mid = (p + q) * 0.5;
        if mid.norm_squared() <= r * r {
            total += 0.5 * cross2(&p, &q);
        } else {
            total += 0.5 * r * r * cross2(&p, &q).atan2(p.dot(&q));
        }
    }
    total
}

/// Area of the triangle (a, b, c) inside the closed ball B_r(center).
pub fn triangle_ball_area(a: &Point, b: &Point, c: &Point, center: &Point, r: f64) -> f64 {
    let n = (b - a).cross(&(c - a));
    let twice = n.norm();
    if twice == 0.0 || r <= 0.0 {
        return 0.0;
    }
    let n = n / twice;
    let dist = (center - a).dot(&n);
    let rho2 = r * r - dist * dist;
    if rho2 <= 0.0 {
        return 0.0;
    }
    let foot = center - n * dist;
    // orthonormal frame in the plane
    let e1 = (b - a).normalize();
    let e2 = n.cross(&e1);
    let to2 = |p: &Point| {
        let v = p - foot;
        V2::new(v.dot(&e1), v.dot(&e2))
    };
    let (pa, pb, pc) = (to2(a), to2(b), to2(c));
    let rho = rho2.sqrt();
    let area = wedge_disk_area(pa, pb, rho) + wedge_disk_area(pb, pc, rho) + wedge_disk_area(pc, pa, rho);
    area.abs().min(0.5 * twice)
}

/// Uniform hash grid over face bounding boxes for ball queries.
#[derive(Debug, Clone)]
pub struct FaceGrid {
    cell: f64,
    cells: HashMap<(i64, i64, i64), Vec<usize>>,
}

impl FaceGrid {
    pub fn new(mesh: &TriMesh, cell: f64) -> Self {
        let cell = if cell > 0.0 { cell } else { mesh.mean_edge_length().max(1e-12) * 2.0 };
        let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        let pos = mesh.positions();
        for (fi, f) in mesh.faces().iter().enumerate() {
            let lo = pos[f[0]].inf(&pos[f[1]]).inf(&pos[f[2]]);
            let hi = pos[f[0]].sup(&pos[f[1]]).sup(&pos[f[2]]);
            let (a, b) = (Self::key(&lo, cell), Self::key(&hi, cell));
            for i in a.0..=b.0 {
                for j in a.1..=b.1 {
                    for k in a.2..=b.2 {
                        cells.entry((i, j, k)).or_default().push(fi);
                    }
                }
            }
        }
        Self { cell, cells }
    }

    fn key(p: &Point, cell: f64) -> (i64, i64, i64) {
        ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64)
    }

    /// Faces whose bounding box may touch B_r(center), sorted ascending.
    pub fn candidates(&self, center: &Point, r: f64) -> Vec<usize> {
        let off = Point::repeat(r);
        let (a, b) = (Self::key(&(center - off), self.cell), Self::key(&(center + off), self.cell));
        let span = ((b.0 - a.0 + 1) * (b.1 - a.1 + 1) * (b.2 - a.2 + 1)) as usize;
        let mut out = Vec::new();
        if span > self.cells.len() {
            for faces in self.cells.values() {
                out.extend_from_slice(faces);
            }
        } else {
            for i in a.0..=b.0 {
                for j in a.1..=b.1 {
                    for k in a.2..=b.2 {
                        if let Some(faces) = self.cells.get(&(i, j, k)) {
                            out.extend_from_slice(faces);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Ball-restricted area and integrals on one mesh.
#[derive(Debug, Clone)]
pub struct BallQuery<'a> {
    mesh: &'a TriMesh,
    grid: FaceGrid,
}

/// Subdivision depth for crossing triangles in [`BallQuery::integral`].
const SPLIT_DEPTH: u32 = 3;

impl<'a> BallQuery<'a> {
    pub fn new(mesh: &'a TriMesh) -> Self {
        Self { mesh, grid: FaceGrid::new(mesh, 0.0) }
    }

    pub fn mesh(&self) -> &'a TriMesh {
        self.mesh
    }

    fn classify(&self, f: usize, center: &Point, r: f64) -> Coverage {
        let [a, b, c] = self.mesh.faces()[f];
        let p = self.mesh.positions();
        let d = [(p[a] - center).norm(), (p[b] - center).norm(), (p[c] - center).norm()];
        if d.iter().all(|&x| x <= r) {
            return Coverage::Inside;
        }
        let g = self.mesh.face_centroid(f);
        let rad = (p[a] - g).norm().max((p[b] - g).norm()).max((p[c] - g).norm());
        if (g - center).norm() > r + rad {
            Coverage::Outside
        } else {
            Coverage::Crossing
        }
    }

    /// μ(B_r(center)), exact up to roundoff.
    pub fn area(&self, center: &Point, r: f64) -> f64 {
        let p = self.mesh.positions();
        self.grid
            .candidates(center, r)
            .into_iter()
            .map(|f| match self.classify(f, center, r) {
                Coverage::Inside => self.mesh.face_areas()[f],
                Coverage::Outside => 0.0,
                Coverage::Crossing => {
                    let [a, b, c] = self.mesh.faces()[f];
                    triangle_ball_area(&p[a], &p[b], &p[c], center, r)
                }
            })
            .sum()
    }

    /// Faces meeting B_r(center) (bounding test plus exact clip for crossing ones).
    pub fn faces_meeting(&self, center: &Point, r: f64) -> Vec<usize> {
        let p = self.mesh.positions();
        self.grid
            .candidates(center, r)
            .into_iter()
            .filter(|&f| match self.classify(f, center, r) {
                Coverage::Inside => true,
                Coverage::Outside => false,
                Coverage::Crossing => {
                    let [a, b, c] = self.mesh.faces()[f];
                    triangle_ball_area(&p[a], &p[b], &p[c], center, r) > 1e-12 * self.mesh.face_areas()[f]
                }
            })
            .collect()
    }

    /// ∫_{B_r(center)} f dμ for a linearly interpolated vertex field.
    ///
    /// Inside faces use the exact linear rule; crossing faces are split
    /// [`SPLIT_DEPTH`] times and each leaf contributes its exact clipped area
    /// times the field at the leaf centroid.
    pub fn integral(&self, values: &[f64], center: &Point, r: f64) -> f64 {
        let p = self.mesh.positions();
        let mut total = 0.0;
        for f in self.grid.candidates(center, r) {
            let [a, b, c] = self.mesh.faces()[f];
            match self.classify(f, center, r) {
                Coverage::Outside => {}
                Coverage::Inside => total += self.mesh.face_areas()[f] * (values[a] + values[b] + values[c]) / 3.0,
                Coverage::Crossing => {
                    total += split_integral([p[a], p[b], p[c]], [values[a], values[b], values[c]], center, r, SPLIT_DEPTH)
                }
            }
        }
        total
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Coverage {
    Inside,
    Outside,
    Crossing,
}

fn split_integral(x: [Point; 3], v: [f64; 3], center: &Point, r: f64, depth: u32) -> f64 {
    let area = triangle_ball_area(&x[0], &x[1], &x[2], center, r);
    if area == 0.0 {
        return 0.0;
    }
    let full = 0.5 * (x[1] - x[0]).cross(&(x[2] - x[0])).norm();
    if depth == 0 || area >= full * (1.0 - 1e-14) {
        return area * (v[0] + v[1] + v[2]) / 3.0;
    }
    let m = [(x[0] + x[1]) * 0.5, (x[1] + x[2]) * 0.5, (x[2] + x[0]) * 0.5];
    let w = [(v[0] + v[1]) * 0.5, (v[1] + v[2]) * 0.5, (v[2] + v[0]) * 0.5];
    split_integral([x[0], m[0], m[2]], [v[0], w[0], w[2]], center, r, depth - 1)
        + split_integral([x[1], m[1], m[0]], [v[1], w[1], w[0]], center, r, depth - 1)
        + split_integral([x[2], m[2], m[1]], [v[2], w[2], w[1]], center, r, depth - 1)
        + split_integral([m[0], m[1], m[2]], [w[0], w[1], w[2]], center, r, depth - 1)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::mesh::shapes::{icosphere, square_patch};

    #[test]
    fn disk_inside_triangle() {
        let (a, b, c) = (Point::new(-10.0, -10.0, 0.0), Point::new(10.0, -10.0, 0.0), Point::new(0.0, 10.0, 0.0));
        let area = triangle_ball_area(&a, &b, &c, &Point::new(0.0, 0.0, 0.6), 1.0);
        assert!((area - PI * 0.64).abs() < 1e-12);
    }

    #[test]
    fn triangle_inside_ball_and_far_away() {
        let (a, b, c) = (Point::new(0.0, 0.0, 0.0), Point::new(0.1, 0.0, 0.0), Point::new(0.0, 0.1, 0.0));
        assert!((triangle_ball_area(&a, &b, &c, &Point::zeros(), 1.0) - 0.005).abs() < 1e-15);
        assert!(triangle_ball_area(&a, &b, &c, &Point::new(5.0, 0.0, 0.0), 1.0) < 1e-15);
    }

    #[test]
    fn half_disk_on_triangle_edge() {
        // ball centred on the straight edge of a big triangle
        let (a, b, c) = (Point::new(-10.0, 0.0, 0.0), Point::new(10.0, 0.0, 0.0), Point::new(0.0, 10.0, 0.0));
        let area = triangle_ball_area(&a, &b, &c, &Point::zeros(), 1.0);
        assert!((area - PI / 2.0).abs() < 1e-12, "{area}");
    }

    #[test]
    fn plane_and_sphere_ball_areas() {
        let plane = square_patch(2.0, 20);
        let q = BallQuery::new(&plane);
        let area = q.area(&Point::new(0.13, -0.07, 0.0), 0.77);
        assert!((area - PI * 0.77 * 0.77).abs() < 1e-12);

        // cap of height h on a radius-R sphere has area 2πRh
        let sphere = icosphere(2.0, 5);
        let q = BallQuery::new(&sphere);
        let pole = Point::new(0.0, 0.0, 2.0);
        let r: f64 = 1.0;
        let h = r * r / 4.0;
        let area = q.area(&pole, r);
        assert!((area - 2.0 * PI * 2.0 * h).abs() / (4.0 * PI * h) < 2e-3, "{area}");
        let ones = vec![1.0; sphere.n_vertices()];
        assert!((q.integral(&ones, &pole, r) - area).abs() < 1e-10);
        assert!((q.area(&Point::zeros(), 3.0) - sphere.total_area()).abs() < 1e-10);
    }

    #[test]
    fn linear_field_integral_on_plane() {
        let plane = square_patch(2.0, 16);
        let q = BallQuery::new(&plane);
        let f: Vec<f64> = plane.positions().iter().map(|p| 1.0 + p.x).collect();
        // ∫_{disk} (1 + x) = area + x̄·area with x̄ the disk centre
        let c = Point::new(0.3, 0.1, 0.0);
        let v = q.integral(&f, &c, 0.5);
        let expect = PI * 0.25 * 1.3;
        assert!((v - expect).abs() / expect < 2e-3, "{v} vs {expect}");
    }
}
