//! Explicit time integration of ∂x/∂t = H⃗ + β.

use std::collections::VecDeque;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::force::{eval_force, ForceError, ForceSpec};
use crate::mesh::{compute_curvature, remesh, CurvatureField, MeshError, Point, TriMesh};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("mesh degenerated after update (dt = {dt:e}): {source}")]
    MeshDegenerated { dt: f64, source: MeshError },
    #[error(transparent)]
    Force(#[from] ForceError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("invalid step policy: {0}")]
    InvalidPolicy(String),
    #[error("trajectory has {0} dense snapshots, at least 8 are needed")]
    InsufficientTail(usize),
    #[error("trajectory did not end in a singularity")]
    NotSingular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepPolicy {
    /// dt ≤ safety / max|A|².
    pub safety: f64,
    pub dt_max: f64,
    /// Steps below this count as a singularity.
    pub dt_min: f64,
    /// Largest vertex displacement per step, as a fraction of the local mean edge length.
    pub max_displacement: f64,
    /// Singular once max|A|² > blowup_factor / (mean edge length)².
    pub blowup_factor: f64,
    /// Record every n-th step.
    pub snapshot_every: usize,
    /// Number of trailing steps always kept.
    pub dense_tail: usize,
    /// Run an edge-flip and tangential smoothing pass every n steps (0 = never).
    pub remesh_every: usize,
}

impl Default for StepPolicy {
    fn default() -> Self {
        Self {
            safety: 1.25e-4,
            dt_max: 1e-3,
            dt_min: 2e-7,
            max_displacement: 0.1,
            blowup_factor: 64.0,
            snapshot_every: 100,
            dense_tail: 200,
            remesh_every: 0,
        }
    }
}

impl StepPolicy {
    pub fn validate(&self) -> Result<(), FlowError> {
        let bad = |field: &str| Err(FlowError::InvalidPolicy(format!("{field} must be positive")));
        for (name, v) in [
            ("safety", self.safety),
            ("dt_max", self.dt_max),
            ("dt_min", self.dt_min),
            ("max_displacement", self.max_displacement),
            ("blowup_factor", self.blowup_factor),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(name);
            }
        }
        if self.safety >= 1.0 {
            return Err(FlowError::InvalidPolicy("safety must be below 1".into()));
        }
        if self.dt_min >= self.dt_max {
            return Err(FlowError::InvalidPolicy("dt_min must be below dt_max".into()));
        }
        if self.snapshot_every == 0 {
            return bad("snapshot_every");
        }
        Ok(())
    }

    /// The same policy for a flow scaled by λ in space (λ² in time).
    pub fn scaled(&self, lambda: f64) -> Self {
        Self { dt_max: self.dt_max * lambda * lambda, dt_min: self.dt_min * lambda * lambda, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum FlowStatus {
    Running,
    SingularAt { t: f64, location: [f64; 3], reason: String },
    Completed { t: f64 },
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub step: usize,
    pub mesh: TriMesh,
    pub max_a2: f64,
    /// Part of the every-step record near the end of the run.
    pub dense: bool,
}

impl Snapshot {
    pub fn curvature(&self) -> Result<CurvatureField, MeshError> {
        compute_curvature(&self.mesh)
    }
}

#[derive(Debug, Clone)]
pub struct FlowTrajectory {
    pub snapshots: Vec<Snapshot>,
    pub force: ForceSpec,
    pub t0: f64,
    pub status: FlowStatus,
    pub steps: usize,
    /// max|A|² at which the run counts as singular (for the initial mesh).
    pub blowup_threshold: f64,
}

impl FlowTrajectory {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().expect("trajectory has at least the initial snapshot")
    }

    /// Snapshot nearest in time to `t`.
    pub fn nearest(&self, t: f64) -> &Snapshot {
        let i = self.snapshots.partition_point(|s| s.t < t);
        let candidates = [i.saturating_sub(1), i.min(self.snapshots.len() - 1)];
        let best = candidates
            .iter()
            .copied()
            .min_by(|&a, &b| {
                let (da, db) = ((self.snapshots[a].t - t).abs(), (self.snapshots[b].t - t).abs());
                da.total_cmp(&db)
            })
            .unwrap();
        &self.snapshots[best]
    }

    pub fn span(&self) -> (f64, f64) {
        (self.snapshots[0].t, self.last().t)
    }
}

/// Velocity (H⃗·n)n + β at every vertex, with n the fitted normal.
///
/// The tangential part of the discrete H⃗ is dropped: in the continuum it
/// vanishes, and on a mesh it only slides vertices along the surface,
/// which degrades triangle shape over long runs.
pub fn velocity(mesh: &TriMesh, curvature: &CurvatureField, force: &ForceSpec) -> Result<Vec<Vector3<f64>>, FlowError> {
    let beta = eval_force(force, mesh, curvature)?;
    Ok(curvature
        .mean_vector
        .iter()
        .zip(&curvature.normals)
        .zip(&beta)
        .map(|((h, n), b)| n * h.dot(n) + b)
        .collect())
}

fn advance(mesh: &TriMesh, vel: &[Vector3<f64>], dt: f64) -> Result<TriMesh, FlowError> {
    let positions: Vec<Point> = mesh.positions().iter().zip(vel).map(|(x, v)| x + v * dt).collect();
    mesh.with_positions(positions).map_err(|source| FlowError::MeshDegenerated { dt, source })
}

/// One forward Euler step x ← x + dt·(H⃗ + β).
pub fn step(mesh: &TriMesh, force: &ForceSpec, dt: f64) -> Result<TriMesh, FlowError> {
    if !(dt > 0.0) {
        return Err(FlowError::NonPositiveStep(dt));
    }
    let curvature = compute_curvature(mesh)?;
    let vel = velocity(mesh, &curvature, force)?;
    advance(mesh, &vel, dt)
}

fn step_size(policy: &StepPolicy, mesh: &TriMesh, max_a2: f64, vel: &[Vector3<f64>]) -> f64 {
    let mut dt = policy.dt_max;
    if max_a2 > 0.0 {
        dt = dt.min(policy.safety / max_a2);
    }
    let h = mesh.local_edge_lengths();
    for (v, len) in vel.iter().zip(&h) {
        let speed = v.norm();
        if speed > 0.0 {
            dt = dt.min(policy.max_displacement * len / speed);
        }
    }
    dt
}

fn singular(t: f64, mesh: &TriMesh, curvature: Option<&CurvatureField>, reason: String) -> FlowStatus {
    let location = curvature
        .and_then(|c| c.argmax_a2())
        .map(|v| mesh.positions()[v])
        .unwrap_or_else(|| mesh.centroid());
    FlowStatus::SingularAt { t, location: [location.x, location.y, location.z], reason }
}

/// Integrates from `t0` until `t_end` or a detected singularity.
pub fn evolve(initial: TriMesh, force: &ForceSpec, policy: &StepPolicy, t0: f64, t_end: f64) -> Result<FlowTrajectory, FlowError> {
    policy.validate()?;
    let threshold = policy.blowup_factor / initial.mean_edge_length().powi(2);
    let mut mesh = initial;
    let mut t = t0;
    let mut n = 0usize;
    let mut snapshots: Vec<Snapshot> = Vec::new();
    let mut tail: VecDeque<Snapshot> = VecDeque::with_capacity(policy.dense_tail + 1);
    let mut dense_phase = false;
    let end_tol = 1e-12 * t_end.abs().max(1.0);

    let status = loop {
        let curvature = match compute_curvature(&mesh) {
            Ok(c) => c,
            Err(e @ MeshError::NumericalDegeneracy { .. }) => break singular(t, &mesh, None, e.to_string()),
            Err(e) => return Err(e.into()),
        };
        let max_a2 = curvature.max_a2();
        let snap = Snapshot { t, step: n, mesh: mesh.clone(), max_a2, dense: false };
        if !dense_phase && max_a2 > 0.5 * threshold {
            dense_phase = true;
        }
        if n == 0 || dense_phase || n.is_multiple_of(policy.snapshot_every) {
            snapshots.push(Snapshot { dense: dense_phase, ..snap.clone() });
        }
        if policy.dense_tail > 0 {
            if tail.len() == policy.dense_tail {
                tail.pop_front();
            }
            tail.push_back(snap);
        }

        if t >= t_end - end_tol {
            break FlowStatus::Completed { t };
        }
        if max_a2 > threshold {
            break singular(t, &mesh, Some(&curvature), format!("max|A|² {max_a2:e} above {threshold:e}"));
        }
        let vel = velocity(&mesh, &curvature, force)?;
        let dt = step_size(policy, &mesh, max_a2, &vel);
        if dt < policy.dt_min {
            break singular(t, &mesh, Some(&curvature), format!("time step {dt:e} below floor"));
        }
        let dt = dt.min(t_end - t);
        mesh = match advance(&mesh, &vel, dt) {
            Ok(m) => m,
            Err(FlowError::MeshDegenerated { source, .. }) => break singular(t, &mesh, Some(&curvature), source.to_string()),
            Err(e) => return Err(e),
        };
        if policy.remesh_every > 0 && (n + 1).is_multiple_of(policy.remesh_every) {
            mesh = remesh::improve(&mesh)?;
        }
        t = if t_end - (t + dt) <= end_tol { t_end } else { t + dt };
        n += 1;
    };

    // every trailing step not already recorded joins the record as dense
    let last_recorded = snapshots.last().map(|s| s.step);
    for s in tail {
        match snapshots.binary_search_by_key(&s.step, |x| x.step) {
            Ok(i) => snapshots[i].dense = true,
            Err(i) => snapshots.insert(i, Snapshot { dense: true, ..s }),
        }
    }
    debug_assert!(last_recorded.is_some());

    Ok(FlowTrajectory { snapshots, force: force.clone(), t0, status, steps: n, blowup_threshold: threshold })
}

/// (y, s): linear extrapolation of 1/max|A|² to zero over the dense tail,
/// and the |A|²-weighted centroid of the top-decile vertices of the last snapshot.
pub fn singular_point_estimate(traj: &FlowTrajectory) -> Result<(Point, f64), FlowError> {
    if !matches!(traj.status, FlowStatus::SingularAt { .. }) {
        return Err(FlowError::NotSingular);
    }
    let dense: Vec<&Snapshot> = traj.snapshots.iter().filter(|s| s.dense && s.max_a2 > 0.0).collect();
    if dense.len() < 8 {
        return Err(FlowError::InsufficientTail(dense.len()));
    }
    // at most 32 samples, evenly spread over the tail
    let k = dense.len().min(32);
    let picks: Vec<&Snapshot> = (0..k).map(|i| dense[i * (dense.len() - 1) / (k - 1)]).collect();
    let t_ref = picks.last().unwrap().t;
    let (mut st, mut sy, mut stt, mut sty) = (0.0, 0.0, 0.0, 0.0);
    for s in &picks {
        let (x, y) = (s.t - t_ref, 1.0 / s.max_a2);
        st += x;
        sy += y;
        stt += x * x;
        sty += x * y;
    }
    let kf = k as f64;
    let slope = (kf * sty - st * sy) / (kf * stt - st * st);
    let intercept = (sy - slope * st) / kf;
    let s = if slope < 0.0 { t_ref - intercept / slope } else { t_ref };

    let last = traj.last();
    let c = last.curvature()?;
    let mut order: Vec<usize> = (0..c.a2.len()).collect();
    order.sort_by(|&a, &b| c.a2[b].total_cmp(&c.a2[a]).then(a.cmp(&b)));
    let top = &order[..(order.len() / 10).max(1)];
    let w: f64 = top.iter().map(|&v| c.a2[v]).sum();
    let y = if w > 0.0 {
        top.iter().map(|&v| last.mesh.positions()[v] * c.a2[v]).sum::<Point>() / w
    } else {
        last.mesh.centroid()
    };
    Ok((y, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes::{icosphere, square_patch};

    fn radius(m: &TriMesh) -> f64 {
        let c = m.centroid();
        m.positions().iter().map(|p| (p - c).norm()).sum::<f64>() / m.n_vertices() as f64
    }

    #[test]
    fn one_step_matches_sphere_law() {
        let m = icosphere(2.0, 4);
        let next = step(&m, &ForceSpec::Zero, 1e-4).unwrap();
        let expect = (4.0 - 4.0 * 1e-4f64).sqrt();
        for p in next.positions() {
            assert!((p.norm() - expect).abs() / expect < 1e-6, "{}", p.norm());
        }
    }

    #[test]
    fn flat_patch_does_not_move() {
        let m = square_patch(1.0, 6);
        let next = step(&m, &ForceSpec::Zero, 1e-2).unwrap();
        assert_eq!(next.positions(), m.positions());
    }

    #[test]
    fn shrinker_sphere_is_stationary_for_one_step() {
        let m = icosphere(2.0, 4);
        let next = step(&m, &ForceSpec::RescaledMcf { domain_radius: 4.0 }, 1e-3).unwrap();
        assert!((radius(&next) - radius(&m)).abs() < 1e-4);
    }

    #[test]
    fn policy_validation() {
        assert!(StepPolicy::default().validate().is_ok());
        let p = StepPolicy { dt_min: -1.0, ..StepPolicy::default() };
        assert!(matches!(p.validate(), Err(FlowError::InvalidPolicy(msg)) if msg.contains("dt_min")));
        let p = StepPolicy { dt_min: 1.0, dt_max: 0.5, ..StepPolicy::default() };
        assert!(p.validate().is_err());
        assert!(matches!(step(&icosphere(1.0, 1), &ForceSpec::Zero, 0.0), Err(FlowError::NonPositiveStep(_))));
    }

    #[test]
    fn snapshot_times_increase_and_tail_is_dense() {
        let policy = StepPolicy { safety: 1e-2, snapshot_every: 7, dense_tail: 10, ..StepPolicy::default() };
        let traj = evolve(icosphere(1.0, 2), &ForceSpec::Zero, &policy, 0.0, 0.05).unwrap();
        assert!(matches!(traj.status, FlowStatus::Completed { .. }));
        assert!(traj.snapshots.windows(2).all(|w| w[1].t > w[0].t));
        assert_eq!(traj.snapshots.iter().filter(|s| s.dense).count(), 10);
        assert!((traj.last().t - 0.05).abs() < 1e-15);
    }

    #[test]
    fn area_never_increases_without_force() {
        let policy = StepPolicy { safety: 1e-2, snapshot_every: 1, ..StepPolicy::default() };
        let traj = evolve(icosphere(1.0, 3), &ForceSpec::Zero, &policy, 0.0, 0.1).unwrap();
        for w in traj.snapshots.windows(2) {
            let (a, b) = (w[0].mesh.total_area(), w[1].mesh.total_area());
            assert!(b <= a * (1.0 + 1e-8));
        }
    }
}
