//! Builtin surface generators and test fixtures.
//!
//! Closed generators return outward-oriented meshes. The flat fixtures
//! (`square_patch`, `parallel_sheets`, `bump_patch`) are open meshes.

use std::collections::HashMap;
use std::f64::consts::PI;

use super::{Point, TriMesh};

fn closed(vertices: Vec<Point>, faces: Vec<[usize; 3]>) -> TriMesh {
    TriMesh::new(vertices, faces).expect("generator produced an invalid closed mesh")
}

fn open(vertices: Vec<Point>, faces: Vec<[usize; 3]>) -> TriMesh {
    TriMesh::new_with_boundary(vertices, faces).expect("generator produced an invalid mesh")
}

/// Regular icosahedron inscribed in the sphere of the given radius.
pub fn icosahedron(radius: f64) -> TriMesh {
    let (v, f) = icosahedron_raw();
    closed(v.into_iter().map(|p| p * radius).collect(), f)
}

fn icosahedron_raw() -> (Vec<Point>, Vec<[usize; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let v = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    let verts = v.iter().map(|p| Point::new(p[0], p[1], p[2]).normalize()).collect();
    (verts, faces)
}

/// Icosahedron subdivided `level` times with vertices projected onto the sphere.
pub fn icosphere(radius: f64, level: u32) -> TriMesh {
    let (mut verts, mut faces) = icosahedron_raw();
    for _ in 0..level {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Point>| {
            *midpoint.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    closed(verts.into_iter().map(|p| p * radius).collect(), faces)
}

/// Torus around the z axis: `major` radius of the core circle, `minor` tube radius.
pub fn torus(major: f64, minor: f64, n_major: usize, n_minor: usize) -> TriMesh {
    let mut verts = Vec::with_capacity(n_major * n_minor);
    for i in 0..n_major {
        let u = 2.0 * PI * i as f64 / n_major as f64;
        for j in 0..n_minor {
            let v = 2.0 * PI * j as f64 / n_minor as f64;
            let rho = major + minor * v.cos();
            verts.push(Point::new(rho * u.cos(), rho * u.sin(), minor * v.sin()));
        }
    }
    let idx = |i: usize, j: usize| (i % n_major) * n_minor + (j % n_minor);
    let mut faces = Vec::with_capacity(2 * n_major * n_minor);
    for i in 0..n_major {
        for j in 0..n_minor {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    closed(verts, faces)
}

/// Surface of revolution about the z axis.
///
/// `profile` lists `(z, rho)` samples from one pole to the other; the first
/// and last entries must have `rho == 0`, the rest `rho > 0`.
pub fn revolve(profile: &[(f64, f64)], segments: usize) -> TriMesh {
    assert!(profile.len() >= 3, "profile needs two poles and at least one ring");
    let rings = &profile[1..profile.len() - 1];
    let mut verts = vec![Point::new(0.0, 0.0, profile[0].0)];
    for &(z, rho) in rings {
        for k in 0..segments {
            let phi = 2.0 * PI * k as f64 / segments as f64;
            verts.push(Point::new(rho * phi.cos(), rho * phi.sin(), z));
        }
    }
    let top = verts.len();
    verts.push(Point::new(0.0, 0.0, profile[profile.len() - 1].0));

    let ring = |r: usize, k: usize| 1 + r * segments + (k % segments);
    let mut faces = Vec::new();
    for k in 0..segments {
        faces.push([0, ring(0, k + 1), ring(0, k)]);
    }
    for r in 0..rings.len() - 1 {
        for k in 0..segments {
            let (a, b, c, d) = (ring(r, k), ring(r, k + 1), ring(r + 1, k + 1), ring(r + 1, k));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    let last = rings.len() - 1;
    for k in 0..segments {
        faces.push([top, ring(last, k), ring(last, k + 1)]);
    }
    orient_outward(verts, faces)
}

fn orient_outward(verts: Vec<Point>, mut faces: Vec<[usize; 3]>) -> TriMesh {
    let vol: f64 = faces.iter().map(|f| verts[f[0]].dot(&verts[f[1]].cross(&verts[f[2]]))).sum();
    if vol < 0.0 {
        for f in &mut faces {
            f.swap(1, 2);
        }
    }
    closed(verts, faces)
}

/// Resamples a parametric profile so consecutive samples are `spacing(rho)` apart in arclength.
fn arclength_profile(curve: impl Fn(f64) -> (f64, f64), spacing: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
    const FINE: usize = 20_000;
    let pts: Vec<(f64, f64)> = (0..=FINE).map(|i| curve(i as f64 / FINE as f64)).collect();
    let mut out = vec![pts[0]];
    let mut acc = 0.0;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        acc += ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        if acc >= spacing(b.1) {
            out.push(b);
            acc = 0.0;
        }
    }
    let end = pts[FINE];
    // the final ring appended before the pole must not sit on the pole
    if out.last().map(|p| p.1 < 1e-9).unwrap_or(false) && out.len() > 1 {
        out.pop();
    }
    if out.len() > 2 && acc < 0.5 * spacing(end.1) {
        out.pop();
    }
    out.push(end);
    out.first_mut().unwrap().1 = 0.0;
    out.last_mut().unwrap().1 = 0.0;
    out
}

/// Capsule along z: a cylinder of `length` (between cap centres) with hemispherical caps.
pub fn capsule(length: f64, radius: f64, segments: usize) -> TriMesh {
    let half = 0.5 * length;
    let quarter = 0.5 * PI * radius;
    let total = 2.0 * quarter + length;
    let curve = move |u: f64| {
        let s = u * total;
        if s < quarter {
            let th = s / radius;
            (-half - radius * th.cos(), radius * th.sin())
        } else if s < quarter + length {
            (-half + (s - quarter), radius)
        } else {
            let th = (s - quarter - length) / radius;
            (half + radius * th.sin(), radius * th.cos())
        }
    };
    let ds = 2.0 * PI * radius / segments as f64;
    let profile = arclength_profile(curve, move |rho| (ds * (rho / radius).max(0.25)).max(0.25 * ds));
    revolve(&profile, segments)
}

/// Dumbbell along z: two bulbs of radius ≈ 1 joined by a neck of radius `neck`.
///
/// Profile: rho(z)² = (1 − z²/L²)(neck² + 4 z²/L²) with L = 2.2.
pub fn dumbbell(neck: f64, segments: usize) -> TriMesh {
    const HALF: f64 = 2.2;
    const BULB: f64 = 4.0;
    let rho = move |z: f64| {
        let u = (z / HALF).powi(2);
        ((1.0 - u).max(0.0) * (neck * neck + BULB * u)).sqrt()
    };
    // parametrize by angle so both poles are resolved
    let curve = move |s: f64| {
        let z = -HALF * (PI * s).cos();
        (z, rho(z))
    };
    let circ = 2.0 * PI / segments as f64;
    let profile = arclength_profile(curve, move |r| (circ * r).clamp(0.25 * circ * neck, 0.12));
    revolve(&profile, segments)
}

/// Cylinder of `radius` and `length` along z, closed by flat discs.
pub fn capped_cylinder(radius: f64, length: f64, segments: usize, axial: usize) -> TriMesh {
    let half = 0.5 * length;
    let cap_rings = (segments / 8).max(2);
    let mut profile = vec![(-half, 0.0)];
    for k in 1..=cap_rings {
        profile.push((-half, radius * k as f64 / cap_rings as f64));
    }
    for k in 1..axial {
        profile.push((-half + length * k as f64 / axial as f64, radius));
    }
    for k in (1..=cap_rings).rev() {
        profile.push((half, radius * k as f64 / cap_rings as f64));
    }
    profile.push((half, 0.0));
    revolve(&profile, segments)
}

/// Axis-aligned box centred at the origin; each face is an `n × n` grid.
pub fn closed_box(wx: f64, wy: f64, wz: f64, n: usize) -> TriMesh {
    let mut index: HashMap<(usize, usize, usize), usize> = HashMap::new();
    let mut verts = Vec::new();
    let mut vid = |p: (usize, usize, usize), verts: &mut Vec<Point>| {
        *index.entry(p).or_insert_with(|| {
            let s = |c: usize, w: f64| w * (c as f64 / n as f64 - 0.5);
            verts.push(Point::new(s(p.0, wx), s(p.1, wy), s(p.2, wz)));
            verts.len() - 1
        })
    };
    let mut faces = Vec::new();
    // (axis, side): lattice point for face-local (i, j)
    for axis in 0..3 {
        for side in [0, n] {
            for i in 0..n {
                for j in 0..n {
                    let at = |a: usize, b: usize| -> (usize, usize, usize) {
                        match axis {
                            0 => (side, a, b),
                            1 => (b, side, a),
                            _ => (a, b, side),
                        }
                    };
                    let q = [at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)];
                    let q: Vec<usize> = q.iter().map(|&p| vid(p, &mut verts)).collect();
                    let (t1, t2) = ([q[0], q[1], q[2]], [q[0], q[2], q[3]]);
                    if side == 0 {
                        faces.push([t1[0], t1[2], t1[1]]);
                        faces.push([t2[0], t2[2], t2[1]]);
                    } else {
                        faces.push(t1);
                        faces.push(t2);
                    }
                }
            }
        }
    }
    closed(verts, faces)
}

/// Open square grid in the plane z = 0 on the given 1D node coordinates.
pub fn grid_patch(nodes: &[f64], height: impl Fn(f64, f64) -> f64) -> TriMesh {
    let n = nodes.len();
    let mut verts = Vec::with_capacity(n * n);
    for &y in nodes {
        for &x in nodes {
            verts.push(Point::new(x, y, height(x, y)));
        }
    }
    let mut faces = Vec::with_capacity(2 * (n - 1) * (n - 1));
    for j in 0..n - 1 {
        for i in 0..n - 1 {
            let (a, b, c, d) = (j * n + i, j * n + i + 1, (j + 1) * n + i + 1, (j + 1) * n + i);
            // alternate diagonals so the lattice is symmetric about the centre
            if (i + j) % 2 == 0 {
                faces.push([a, b, c]);
                faces.push([a, c, d]);
            } else {
                faces.push([a, b, d]);
                faces.push([b, c, d]);
            }
        }
    }
    open(verts, faces)
}

/// Uniform 1D nodes on [−half, half].
pub fn uniform_nodes(half: f64, cells: usize) -> Vec<f64> {
    (0..=cells).map(|i| -half + 2.0 * half * i as f64 / cells as f64).collect()
}

/// Symmetric 1D nodes: spacing `fine` inside |x| < `core`, then growing by `growth` up to `half`.
pub fn graded_nodes(half: f64, core: f64, fine: f64, growth: f64) -> Vec<f64> {
    let mut pos = vec![0.0];
    let mut h = fine;
    let mut x = 0.0;
    while x + h < half {
        x += h;
        pos.push(x);
        if x >= core {
            h *= growth;
        }
    }
    if half - x < 0.3 * h {
        pos.pop();
    }
    pos.push(half);
    let mut nodes: Vec<f64> = pos.iter().skip(1).rev().map(|v| -v).collect();
    nodes.extend(pos);
    nodes
}

/// Flat open square of half-width `half` with `cells × cells` quads.
pub fn square_patch(half: f64, cells: usize) -> TriMesh {
    grid_patch(&uniform_nodes(half, cells), |_, _| 0.0)
}

/// Two parallel flat squares at z = 0 and z = `gap`.
pub fn parallel_sheets(half: f64, cells: usize, gap: f64) -> TriMesh {
    let a = square_patch(half, cells);
    let b = a.translated(&Point::new(0.0, 0.0, gap)).unwrap();
    a.union(&b).unwrap()
}

/// Flat square with a Gaussian bump of the given height and width at the origin.
pub fn bump_patch(half: f64, height: f64, width: f64) -> TriMesh {
    let nodes = graded_nodes(half, 3.0 * width, width / 8.0, 1.15);
    grid_patch(&nodes, |x, y| height * (-(x * x + y * y) / (2.0 * width * width)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_closed_and_oriented() {
        for (m, chi) in [
            (icosphere(1.0, 2), 2),
            (capsule(20.0, 0.1, 24), 2),
            (dumbbell(0.3, 32), 2),
            (capped_cylinder(1.0, 4.0, 32, 16), 2),
            (closed_box(2.0, 3.0, 1.0, 6), 2),
            (torus(2.0, 0.5, 24, 12), 0),
        ] {
            assert!(m.is_closed());
            assert_eq!(m.euler_characteristic(), chi);
            assert!(m.enclosed_volume() > 0.0);
        }
    }

    #[test]
    fn flat_fixtures_are_open() {
        let p = square_patch(1.0, 8);
        assert!(!p.is_closed());
        assert_eq!(p.euler_characteristic(), 1);
        let s = parallel_sheets(1.0, 8, 0.01);
        assert_eq!(s.topology().face_components().0, 2);
        let b = bump_patch(1.0, 0.04, 0.02);
        let top = b.positions().iter().map(|p| p.z).fold(0.0, f64::max);
        assert!((top - 0.04).abs() < 1e-12);
    }

    #[test]
    fn dumbbell_has_thin_neck() {
        let m = dumbbell(0.3, 32);
        let waist = m
            .positions()
            .iter()
            .filter(|p| p.z.abs() < 0.05)
            .map(|p| (p.x * p.x + p.y * p.y).sqrt())
            .fold(f64::INFINITY, f64::min);
        assert!((waist - 0.3).abs() < 0.01, "{waist}");
    }
}
