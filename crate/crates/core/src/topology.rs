//! Topological and regularity screens: genus and component counts of
//! clipped pieces, the local Gauss-Bonnet inequality, time-integrated |A|²,
//! Allard-type density flags and the area-pinching corollary.

use std::collections::HashMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::Snapshot;
use crate::mesh::clip::{triangle_ball_area, BallQuery};
use crate::mesh::{compute_curvature, MeshError, Point, TriMesh};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("no surface inside the inner ball")]
    InnerBallEmpty,
    #[error("outer radius ratio must exceed 1, got {0}")]
    BadRadius(f64),
    #[error("window [{start}, {end}] holds fewer than two snapshots")]
    WindowNotCovered { start: f64, end: f64 },
    #[error("∫|A|² over B_2r is {measured}, above ε² = {allowed}")]
    PreconditionUnverified { measured: f64, allowed: f64 },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Ball region for clipping: faces with centroid inside `radius` are kept;
/// components counted in c′ must meet the concentric ball of `inner_radius`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub center: Point,
    pub radius: f64,
    pub inner_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentTopology {
    pub faces: usize,
    pub euler: i64,
    pub boundary_loops: usize,
    pub genus: usize,
    pub meets_inner: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyReport {
    pub components: Vec<ComponentTopology>,
    /// Genus per component, from χ = 2 − 2g − b.
    pub genus: Vec<usize>,
    /// Components meeting the inner ball (all components without a region).
    pub c_prime: usize,
}

impl TopologyReport {
    pub fn count(&self) -> usize {
        self.components.len()
    }

    pub fn total_genus(&self) -> usize {
        self.genus.iter().sum()
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        parent[ra.max(rb)] = ra.min(rb);
    }
}

/// Per-component χ, boundary loops and genus of a face subset.
/// Faces are joined only across shared edges.
fn face_set_topology(mesh: &TriMesh, keep: &[usize], meets: impl Fn(usize) -> bool) -> TopologyReport {
    let faces = mesh.faces();
    let mut edge_faces: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (slot, &f) in keep.iter().enumerate() {
        let t = faces[f];
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            edge_faces.entry((a.min(b), a.max(b))).or_default().push(slot);
        }
    }
    let mut parent: Vec<usize> = (0..keep.len()).collect();
    for fs in edge_faces.values() {
        for w in fs.windows(2) {
            union(&mut parent, w[0], w[1]);
        }
    }
    let mut roots: Vec<usize> = (0..keep.len()).map(|i| find(&mut parent, i)).collect();
    let mut id: HashMap<usize, usize> = HashMap::new();
    for r in roots.iter_mut() {
        let n = id.len();
        *r = *id.entry(*r).or_insert(n);
    }
    let n = id.len();
    let mut counts = vec![(0usize, 0usize, 0usize); n];
    let mut verts: Vec<HashMap<usize, ()>> = vec![HashMap::new(); n];
    let mut meets_inner = vec![false; n];
    for (slot, &f) in keep.iter().enumerate() {
        let c = roots[slot];
        counts[c].2 += 1;
        for &v in &faces[f] {
            verts[c].insert(v, ());
        }
        meets_inner[c] |= meets(f);
    }
    // boundary loops: components of the boundary-edge graph
    let mut bverts: HashMap<usize, usize> = HashMap::new();
    let mut bedges: Vec<(usize, usize, usize)> = Vec::new();
    for (&(a, b), fs) in &edge_faces {
        let c = roots[fs[0]];
        counts[c].1 += 1;
        if fs.len() == 1 {
            for v in [a, b] {
                let k = bverts.len();
                bverts.entry(v).or_insert(k);
            }
            bedges.push((a, b, c));
        }
    }
    let mut bparent: Vec<usize> = (0..bverts.len()).collect();
    for &(a, b, _) in &bedges {
        union(&mut bparent, bverts[&a], bverts[&b]);
    }
    let mut loops: Vec<HashMap<usize, ()>> = vec![HashMap::new(); n];
    for &(a, _, c) in &bedges {
        let r = find(&mut bparent, bverts[&a]);
        loops[c].insert(r, ());
    }
    let mut components = Vec::with_capacity(n);
    for c in 0..n {
        let (v, e, f) = (verts[c].len() as i64, counts[c].1 as i64, counts[c].2 as i64);
        let euler = v - e + f;
        let b = loops[c].len();
        let genus = ((2 - euler - b as i64) / 2).max(0) as usize;
        components.push(ComponentTopology { faces: f as usize, euler, boundary_loops: b, genus, meets_inner: meets_inner[c] });
    }
    // order components by their smallest face for determinism
    let mut first = vec![usize::MAX; n];
    for (slot, &f) in keep.iter().enumerate() {
        first[roots[slot]] = first[roots[slot]].min(f);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&c| first[c]);
    let components: Vec<ComponentTopology> = order.into_iter().map(|c| components[c].clone()).collect();
    TopologyReport {
        genus: components.iter().map(|c| c.genus).collect(),
        c_prime: components.iter().filter(|c| c.meets_inner).count(),
        components,
    }
}

/// Component count, per-component genus and c′ of the mesh or of its piece inside a ball.
pub fn genus_and_components(mesh: &TriMesh, region: Option<&Region>) -> Result<TopologyReport, TopologyError> {
    let pos = mesh.positions();
    let faces = mesh.faces();
    match region {
        None => {
            let keep: Vec<usize> = (0..faces.len()).collect();
            Ok(face_set_topology(mesh, &keep, |_| true))
        }
        Some(reg) => {
            let keep: Vec<usize> = (0..faces.len()).filter(|&f| (mesh.face_centroid(f) - reg.center).norm() <= reg.radius).collect();
            Ok(face_set_topology(mesh, &keep, |f| {
                let [a, b, c] = faces[f];
                triangle_ball_area(&pos[a], &pos[b], &pos[c], &reg.center, reg.inner_radius) > 0.0
            }))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussBonnetReport {
    pub radius_ratio: f64,
    pub eps: f64,
    /// (1 − ε)∫_{B₁}|A|².
    pub lhs: f64,
    pub h2: f64,
    pub genus: usize,
    pub c_prime: usize,
    pub rhs: f64,
    /// (RHS − LHS)/RHS.
    pub margin: f64,
    /// sup over r ∈ [1, R] of μ(B_r)/(πr²), reported only.
    pub d_prime: f64,
    pub holds: bool,
}

/// The local Gauss-Bonnet inequality for the ball pair B_ρ(x) ⊂ B_{Rρ}(x),
/// evaluated after scaling B_ρ to the unit ball. Holds when LHS ≤ RHS·(1 + tol).
pub fn local_gauss_bonnet_check(mesh: &TriMesh, center: &Point, inner_radius: f64, radius_ratio: f64, eps: f64, tol: f64) -> Result<GaussBonnetReport, TopologyError> {
    if !(radius_ratio > 1.0) {
        return Err(TopologyError::BadRadius(radius_ratio));
    }
    let unit = mesh.mapped(|p| (p - center) / inner_radius)?;
    let query = BallQuery::new(&unit);
    let origin = Point::zeros();
    if query.faces_meeting(&origin, 1.0).is_empty() {
        return Err(TopologyError::InnerBallEmpty);
    }
    let c = compute_curvature(&unit)?;
    let h2: Vec<f64> = c.mean.iter().map(|h| h * h).collect();
    let lhs = (1.0 - eps) * query.integral(&c.a2, &origin, 1.0);
    let h2_int = query.integral(&h2, &origin, radius_ratio);
    let topo = genus_and_components(&unit, Some(&Region { center: origin, radius: radius_ratio, inner_radius: 1.0 }))?;
    let (g, cp) = (topo.total_genus(), topo.c_prime);
    let r = radius_ratio;
    let rhs = h2_int + 8.0 * PI * g as f64 - 8.0 * PI * cp as f64 + 24.0 * PI * r * r / (eps * (r - 1.0) * (r - 1.0));
    let d_prime = (0..=16)
        .map(|k| {
            let rr = 1.0 + (r - 1.0) * k as f64 / 16.0;
            query.area(&origin, rr) / (PI * rr * rr)
        })
        .fold(0.0, f64::max);
    Ok(GaussBonnetReport {
        radius_ratio,
        eps,
        lhs,
        h2: h2_int,
        genus: g,
        c_prime: cp,
        rhs,
        margin: (rhs - lhs) / rhs.abs().max(1e-300),
        d_prime,
        holds: lhs <= rhs + tol * rhs.abs(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeIntegratedA2Report {
    pub lhs: f64,
    pub c: f64,
    pub tau: f64,
    pub radius: f64,
    pub genus: usize,
    pub entropy: f64,
    pub residual_budget: f64,
    /// C·τ(R² + 8πg + λ) + residual budget.
    pub rhs: f64,
    pub holds: bool,
}

pub const C_A2: f64 = 16.0;

/// ∫_window ∫_{B_R(x)} |A|² dμ dt (trapezoid) against C·τ(R² + 8πg(M₀) + λ(M₀)) + budget.
#[allow(clippy::too_many_arguments)]
pub fn time_integrated_a2_check(
    snapshots: &[Snapshot],
    ball: (Point, f64),
    window: (f64, f64),
    c: f64,
    genus0: usize,
    entropy0: f64,
    residual_budget: f64,
) -> Result<TimeIntegratedA2Report, TopologyError> {
    let (start, end) = window;
    let eps = 1e-12 * start.abs().max(end.abs()).max(1.0);
    let inside: Vec<&Snapshot> = snapshots.iter().filter(|s| s.t >= start - eps && s.t <= end + eps).collect();
    if inside.len() < 2 {
        return Err(TopologyError::WindowNotCovered { start, end });
    }
    let (x, radius) = ball;
    let mut rows = Vec::with_capacity(inside.len());
    for s in &inside {
        let curv = compute_curvature(&s.mesh)?;
        rows.push((s.t, BallQuery::new(&s.mesh).integral(&curv.a2, &x, radius)));
    }
    let lhs: f64 = rows.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum();
    let tau = end - start;
    let rhs = c * tau * (radius * radius + 8.0 * PI * genus0 as f64 + entropy0) + residual_budget;
    Ok(TimeIntegratedA2Report { lhs, c, tau, radius, genus: genus0, entropy: entropy0, residual_budget, rhs, holds: lhs <= rhs })
}

/// Relative slack on |H⃗| ≤ ε_A/r, for discretization noise at equality.
pub const ALLARD_H_SLACK: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllardScan {
    pub eps_a: f64,
    /// (vertex, smallest certifying radius).
    pub certified: Vec<(usize, f64)>,
    /// Vertices with no certifying radius on the ladder.
    pub uncertified: Vec<usize>,
}

/// Per vertex x and radius r: |H| ≤ ε_A/r at every vertex in B_r(x), and μ(B_r(x)) ≤ (1 + ε_A)πr².
pub fn allard_condition_scan(mesh: &TriMesh, radii: &[f64], eps_a: f64) -> Result<AllardScan, TopologyError> {
    let c = compute_curvature(mesh)?;
    let query = BallQuery::new(mesh);
    let pos = mesh.positions();
    let faces = mesh.faces();
    let mut certified = Vec::new();
    let mut uncertified = Vec::new();
    for (v, x) in pos.iter().enumerate() {
        let hit = radii.iter().copied().find(|&r| {
            let area = query.area(x, r);
            if area > (1.0 + eps_a) * PI * r * r {
                return false;
            }
            let h_max = query
                .faces_meeting(x, r)
                .iter()
                .flat_map(|&f| faces[f])
                .filter(|&u| (pos[u] - x).norm() <= r)
                .map(|u| c.mean[u].abs())
                .fold(0.0, f64::max);
            h_max <= eps_a / r * (1.0 + ALLARD_H_SLACK)
        });
        match hit {
            Some(r) => certified.push((v, r)),
            None => uncertified.push(v),
        }
    }
    Ok(AllardScan { eps_a, certified, uncertified })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PinchingConstants {
    pub c: f64,
    pub gamma: f64,
}

impl Default for PinchingConstants {
    fn default() -> Self {
        Self { c: 10.0, gamma: 1.0 / 6.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinchingReport {
    pub area: f64,
    pub lower: f64,
    pub upper: f64,
    /// ∫_{B_2r}|A|², the verified precondition.
    pub a2_mass: f64,
    pub holds: bool,
}

fn segment_distance(p: &Point, a: &Point, b: &Point) -> f64 {
    let d = b - a;
    let t = ((p - a).dot(&d) / d.norm_squared().max(1e-300)).clamp(0.0, 1.0);
    (a + d * t - p).norm()
}

/// Area of the component of M ∩ B_r(x) through x, against
/// πr²(1 − Cε^{2γ}) ≤ area ≤ πr²(1 + Cε^γ). The precondition
/// ∫_{B_2r(x)}|A|² ≤ ε² is measured and enforced.
pub fn area_pinching_check(mesh: &TriMesh, x: &Point, r: f64, eps: f64, consts: &PinchingConstants) -> Result<PinchingReport, TopologyError> {
    let curv = compute_curvature(mesh)?;
    let query = BallQuery::new(mesh);
    let a2_mass = query.integral(&curv.a2, x, 2.0 * r);
    if a2_mass > eps * eps {
        return Err(TopologyError::PreconditionUnverified { measured: a2_mass, allowed: eps * eps });
    }
    let pos = mesh.positions();
    let faces = mesh.faces();
    let meeting = query.faces_meeting(x, r);
    if meeting.is_empty() {
        return Err(TopologyError::InnerBallEmpty);
    }
    let slot: HashMap<usize, usize> = meeting.iter().enumerate().map(|(i, &f)| (f, i)).collect();
    let mut parent: Vec<usize> = (0..meeting.len()).collect();
    let topo = mesh.topology();
    for e in topo.edges() {
        if let [Some(fa), Some(fb)] = e.faces {
            if let (Some(&a), Some(&b)) = (slot.get(&fa), slot.get(&fb)) {
                if segment_distance(x, &pos[e.v[0]], &pos[e.v[1]]) < r {
                    union(&mut parent, a, b);
                }
            }
        }
    }
    // the component through x: the face nearest to x
    let nearest = (0..meeting.len())
        .min_by(|&a, &b| {
            let d = |i: usize| (mesh.face_centroid(meeting[i]) - x).norm();
            d(a).total_cmp(&d(b))
        })
        .unwrap();
    let root = find(&mut parent, nearest);
    let mut area = 0.0;
    for i in 0..meeting.len() {
        if find(&mut parent, i) == root {
            let [a, b, c] = faces[meeting[i]];
            area += triangle_ball_area(&pos[a], &pos[b], &pos[c], x, r);
        }
    }
    let disk = PI * r * r;
    let lower = disk * (1.0 - consts.c * eps.powf(2.0 * consts.gamma));
    let upper = disk * (1.0 + consts.c * eps.powf(consts.gamma));
    Ok(PinchingReport { area, lower, upper, a2_mass, holds: lower <= area && area <= upper })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes::{bump_patch, icosphere, parallel_sheets, square_patch, torus};

    #[test]
    fn torus_and_two_spheres() {
        let t = genus_and_components(&torus(2.0, 0.5, 24, 12), None).unwrap();
        assert_eq!((t.count(), t.genus.clone()), (1, vec![1]));
        let a = icosphere(1.0, 2);
        let u = a.union(&a.translated(&Point::new(5.0, 0.0, 0.0)).unwrap()).unwrap();
        let t = genus_and_components(&u, None).unwrap();
        assert_eq!((t.count(), t.genus.clone()), (2, vec![0, 0]));
    }

    #[test]
    fn sphere_clipped_at_pole_is_a_disk() {
        let m = icosphere(1.0, 3);
        let reg = Region { center: Point::new(0.0, 0.0, 1.0), radius: 0.6, inner_radius: 0.3 };
        let t = genus_and_components(&m, Some(&reg)).unwrap();
        assert_eq!(t.count(), 1);
        assert_eq!(t.components[0].euler, 1);
        assert_eq!(t.components[0].boundary_loops, 1);
        assert_eq!(t.c_prime, 1);
    }

    #[test]
    fn topology_is_invariant_under_rigid_motion() {
        let m = torus(2.0, 0.5, 24, 12);
        let moved = m.mapped(|p| Point::new(-p.y, p.x, p.z) + Point::new(1.0, 2.0, 3.0)).unwrap();
        assert_eq!(genus_and_components(&m, None).unwrap(), genus_and_components(&moved, None).unwrap());
    }

    #[test]
    fn gauss_bonnet_on_sphere_plane_and_torus() {
        let s = icosphere(2.0, 4);
        let rep = local_gauss_bonnet_check(&s, &Point::new(0.0, 0.0, 2.0), 1.0, 2.0, 0.5, 0.05).unwrap();
        // closed forms: |A|² = 1/2 and H² = 1 on caps of area π·1² and π·2²
        assert!((rep.lhs - 0.5 * 0.5 * PI).abs() / (0.25 * PI) < 0.02, "{rep:?}");
        assert!((rep.h2 - 4.0 * PI).abs() / (4.0 * PI) < 0.02, "{rep:?}");
        assert!(rep.holds && rep.c_prime == 1);

        let p = square_patch(3.0, 24);
        let rep = local_gauss_bonnet_check(&p, &Point::zeros(), 1.0, 2.0, 0.5, 0.05).unwrap();
        assert!(rep.lhs.abs() < 1e-12 && rep.holds);

        let t = torus(2.0, 0.5, 48, 24);
        let rep = local_gauss_bonnet_check(&t, &Point::new(2.5, 0.0, 0.0), 1.0, 10.0, 0.5, 0.05).unwrap();
        assert_eq!(rep.genus, 1);
        assert!(rep.holds);
        assert!(matches!(
            local_gauss_bonnet_check(&s, &Point::new(0.0, 0.0, 10.0), 1.0, 2.0, 0.5, 0.05),
            Err(TopologyError::InnerBallEmpty)
        ));
    }

    #[test]
    fn allard_scan_fixtures() {
        let s = icosphere(2.0, 4);
        let scan = allard_condition_scan(&s, &[0.1], 0.1).unwrap();
        assert!(scan.uncertified.is_empty(), "{}", scan.uncertified.len());
        let sheets = parallel_sheets(1.0, 16, 0.01);
        let scan = allard_condition_scan(&sheets, &[0.2], 0.1).unwrap();
        let boundary = |v: usize| sheets.topology().is_boundary_vertex(v);
        assert!(scan.certified.iter().all(|&(v, _)| {
            let p = sheets.positions()[v];
            boundary(v) || p.x.abs().max(p.y.abs()) > 0.8
        }));
        let plane = square_patch(1.0, 12);
        assert!(allard_condition_scan(&plane, &[0.1, 0.3], 0.05).unwrap().uncertified.is_empty());
    }

    #[test]
    fn allard_flags_are_monotone_in_eps() {
        let m = torus(2.0, 0.5, 32, 16);
        let a = allard_condition_scan(&m, &[0.1, 0.2], 0.05).unwrap();
        let b = allard_condition_scan(&m, &[0.1, 0.2], 0.2).unwrap();
        let set: std::collections::HashSet<usize> = b.certified.iter().map(|c| c.0).collect();
        assert!(a.certified.iter().all(|c| set.contains(&c.0)));
    }

    #[test]
    fn pinching_on_disk_cap_and_tentacle() {
        let plane = square_patch(1.0, 16);
        let rep = area_pinching_check(&plane, &Point::zeros(), 0.3, 0.01, &PinchingConstants::default()).unwrap();
        assert!((rep.area - PI * 0.09).abs() < 1e-12 && rep.holds);
        let s = icosphere(2.0, 4);
        let x = s.positions()[0];
        let rep = area_pinching_check(&s, &x, 0.2, 0.6, &PinchingConstants::default()).unwrap();
        assert!(rep.holds, "{rep:?}");
        let spike = bump_patch(1.0, 0.5, 0.03);
        assert!(matches!(
            area_pinching_check(&spike, &Point::new(0.0, 0.0, 0.5), 0.2, 0.3, &PinchingConstants::default()),
            Err(TopologyError::PreconditionUnverified { .. })
        ));
    }
}
