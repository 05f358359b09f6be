//! Parabolic blow-up about a singular point: rescaled slices, time-slice
//! selection, shrinker residuals, self-similarity and concentration points.
//!
//! Rescaling about (y, s) by α maps x ↦ (x − y)/α and t ↦ (t − s)/α².
//! Rescaled times of interest are negative, with the window [−1 − τ, −1]
//! used for slice selection.

use std::collections::{HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{FlowTrajectory, Snapshot};
use crate::force::{rescale_force, ForceError, ForceSpec};
use crate::gaussian::{entropy, monotonicity_ledger, EntropySearch, GaussianError, GaussianEvaluator, KernelCenter, LedgerCheck};
use crate::mesh::clip::BallQuery;
use crate::mesh::{compute_curvature, CurvatureField, MeshError, Point, TriMesh};

/// Largest gap (in rescaled time) between a target time and the snapshot used for it.
pub const RESCALED_TIME_TOL: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BlowupError {
    #[error("no snapshot within {tol} (rescaled) of rescaled time {target}")]
    NoSnapshotNearTarget { target: f64, tol: f64 },
    #[error("rescaled window [{start}, {end}] holds no snapshot")]
    WindowNotCovered { start: f64, end: f64 },
    #[error("rescaled time must be negative, got {0}")]
    NonNegativeTime(f64),
    #[error("slice has no vertices")]
    EmptySlice,
    #[error("scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error(transparent)]
    Force(#[from] ForceError),
}

#[derive(Debug, Clone)]
pub struct RescaledSlice {
    pub alpha: f64,
    /// Rescaled time (t − s)/α² of the snapshot used.
    pub t_rescaled: f64,
    /// Original time of the snapshot used.
    pub source_t: f64,
    pub mesh: TriMesh,
    pub curvature: CurvatureField,
    pub residual: f64,
}

impl RescaledSlice {
    /// Wraps a mesh already in rescaled coordinates.
    pub fn from_mesh(mesh: TriMesh, alpha: f64, t_rescaled: f64) -> Result<Self, BlowupError> {
        if !(t_rescaled < 0.0) {
            return Err(BlowupError::NonNegativeTime(t_rescaled));
        }
        let curvature = compute_curvature(&mesh)?;
        let residual = residual_of(&mesh, &curvature, t_rescaled);
        Ok(Self { alpha, t_rescaled, source_t: t_rescaled, mesh, curvature, residual })
    }

    /// ∫_{B_R(0)} |A|² dμ.
    pub fn a2_mass(&self, radius: f64) -> f64 {
        BallQuery::new(&self.mesh).integral(&self.curvature.a2, &Point::zeros(), radius)
    }
}

fn residual_of(mesh: &TriMesh, c: &CurvatureField, t: f64) -> f64 {
    let pos = mesh.positions();
    let field: Vec<_> = (0..pos.len())
        .map(|v| {
            let n = c.normals[v];
            n * (pos[v].dot(&n) / (-2.0 * t) - c.mean[v])
        })
        .collect();
    GaussianEvaluator::new(mesh).weighted_norm2(&Point::zeros(), -t, &field)
}

/// ∫ρ_{0,0}(x, t)|H⃗ + x⊥/(−2t)|² dμ over the slice, with H⃗ through its normal part.
pub fn shrinker_residual(slice: &RescaledSlice) -> Result<f64, BlowupError> {
    if !(slice.t_rescaled < 0.0) {
        return Err(BlowupError::NonNegativeTime(slice.t_rescaled));
    }
    Ok(residual_of(&slice.mesh, &slice.curvature, slice.t_rescaled))
}

fn rescale_mesh(mesh: &TriMesh, y: &Point, alpha: f64) -> Result<TriMesh, MeshError> {
    let inv = 1.0 / alpha;
    mesh.mapped(|p| (p - y) * inv)
}

fn slice_of(snap: &Snapshot, y: &Point, s: f64, alpha: f64) -> Result<RescaledSlice, BlowupError> {
    let t_rescaled = (snap.t - s) / (alpha * alpha);
    if !(t_rescaled < 0.0) {
        return Err(BlowupError::NonNegativeTime(t_rescaled));
    }
    let mesh = rescale_mesh(&snap.mesh, y, alpha)?;
    let curvature = compute_curvature(&mesh)?;
    let residual = residual_of(&mesh, &curvature, t_rescaled);
    Ok(RescaledSlice { alpha, t_rescaled, source_t: snap.t, mesh, curvature, residual })
}

/// The snapshot nearest to rescaled time `t_target`, in rescaled coordinates.
pub fn rescale_slice(traj: &FlowTrajectory, y: &Point, s: f64, alpha: f64, t_target: f64) -> Result<RescaledSlice, BlowupError> {
    if !(alpha > 0.0) {
        return Err(BlowupError::NonPositiveScale(alpha));
    }
    let target = s + alpha * alpha * t_target;
    let snap = traj.nearest(target);
    if (snap.t - target).abs() > RESCALED_TIME_TOL * alpha * alpha {
        return Err(BlowupError::NoSnapshotNearTarget { target: t_target, tol: RESCALED_TIME_TOL });
    }
    slice_of(snap, y, s, alpha)
}

/// Snapshots inside the rescaled window, mapped to rescaled space-time.
pub fn rescale_window(traj: &FlowTrajectory, y: &Point, s: f64, alpha: f64, start: f64, end: f64) -> Result<Vec<Snapshot>, BlowupError> {
    let a2 = alpha * alpha;
    let (lo, hi) = (s + a2 * start, s + a2 * end);
    let eps = 1e-12 * s.abs().max(1.0);
    traj.snapshots
        .iter()
        .filter(|snap| snap.t >= lo - eps && snap.t <= hi + eps)
        .map(|snap| {
            let mesh = rescale_mesh(&snap.mesh, y, alpha)?;
            Ok(Snapshot { t: (snap.t - s) / a2, step: snap.step, mesh, max_a2: snap.max_a2 * a2, dense: snap.dense })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionFlag {
    /// Both criteria hold.
    Qualified,
    /// No slice met both; the least-excess slice was taken.
    BestEffort,
    /// Only one snapshot in the window.
    LowResolution,
}

#[derive(Debug, Clone)]
pub struct SelectedSlice {
    pub slice: RescaledSlice,
    pub flag: SelectionFlag,
    /// Number of snapshots in the window.
    pub candidates: usize,
    /// ∫_{B_R}|A|² of the chosen slice, per radius of the ladder.
    pub a2_masses: Vec<f64>,
    pub a2_averages: Vec<f64>,
    pub residual_average: f64,
}

/// Time-weighted mean of samples (trapezoid); plain mean when all times coincide.
fn window_average(times: &[f64], values: &[f64]) -> f64 {
    let span = times.last().unwrap() - times[0];
    if times.len() < 2 || !(span > 0.0) {
        return values.iter().sum::<f64>() / values.len() as f64;
    }
    let mut acc = 0.0;
    for k in 1..times.len() {
        acc += 0.5 * (times[k] - times[k - 1]) * (values[k] + values[k - 1]);
    }
    acc / span
}

/// Chooses a slice in the rescaled window [−1 − τ, −1] whose ball |A|²
/// masses (over `radii`) and shrinker residual are each at most 3/2 of
/// their window averages. Among qualifying slices the one nearest the
/// window midpoint is returned.
pub fn select_time_slice(traj: &FlowTrajectory, y: &Point, s: f64, alpha: f64, tau: f64, radii: &[f64]) -> Result<SelectedSlice, BlowupError> {
    if !(alpha > 0.0) {
        return Err(BlowupError::NonPositiveScale(alpha));
    }
    let (start, end) = (-1.0 - tau, -1.0);
    let a2 = alpha * alpha;
    let (lo, hi) = (s + a2 * start, s + a2 * end);
    let eps = 1e-12 * s.abs().max(1.0);
    let snaps: Vec<&Snapshot> = traj.snapshots.iter().filter(|x| x.t >= lo - eps && x.t <= hi + eps).collect();
    if snaps.is_empty() {
        return Err(BlowupError::WindowNotCovered { start, end });
    }
    let mut slices = Vec::with_capacity(snaps.len());
    let mut masses = Vec::with_capacity(snaps.len());
    for snap in &snaps {
        let slice = slice_of(snap, y, s, alpha)?;
        let q = BallQuery::new(&slice.mesh);
        masses.push(radii.iter().map(|&r| q.integral(&slice.curvature.a2, &Point::zeros(), r)).collect::<Vec<f64>>());
        slices.push(slice);
    }
    let times: Vec<f64> = slices.iter().map(|x| x.t_rescaled).collect();
    let residuals: Vec<f64> = slices.iter().map(|x| x.residual).collect();
    let res_avg = window_average(&times, &residuals);
    let mass_avg: Vec<f64> =
        (0..radii.len()).map(|k| window_average(&times, &masses.iter().map(|m| m[k]).collect::<Vec<_>>())).collect();

    // excess = max over criteria of value / (3/2 · average); qualifies when ≤ 1
    let ratio = |v: f64, avg: f64| if avg > 0.0 { v / (1.5 * avg) } else if v > 0.0 { f64::INFINITY } else { 0.0 };
    let excess: Vec<f64> = (0..slices.len())
        .map(|i| {
            let mut e = ratio(residuals[i], res_avg);
            for k in 0..radii.len() {
                e = e.max(ratio(masses[i][k], mass_avg[k]));
            }
            e
        })
        .collect();
    let mid = 0.5 * (start + end);
    let qualifying: Vec<usize> = (0..slices.len()).filter(|&i| excess[i] <= 1.0).collect();
    let (pick, flag) = if slices.len() == 1 {
        (0, SelectionFlag::LowResolution)
    } else if let Some(&i) = qualifying.iter().min_by(|&&a, &&b| (times[a] - mid).abs().total_cmp(&(times[b] - mid).abs())) {
        (i, SelectionFlag::Qualified)
    } else {
        ((0..slices.len()).min_by(|&a, &b| excess[a].total_cmp(&excess[b])).unwrap(), SelectionFlag::BestEffort)
    };
    let candidates = slices.len();
    let a2_masses = masses.swap_remove(pick);
    Ok(SelectedSlice {
        slice: slices.swap_remove(pick),
        flag,
        candidates,
        a2_masses,
        a2_averages: mass_avg,
        residual_average: res_avg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfSimilarity {
    /// Symmetric vertex-set Hausdorff distance over the bounding radius of slice a.
    pub hausdorff: f64,
    /// |λ⁻²·μ_b − μ_a| / μ_a after matching times.
    pub area_mismatch: f64,
    /// Sum of the two.
    pub error: f64,
}

/// Compares two slices after mapping b to a's time by the self-similar scaling √(t_a/t_b).
pub fn self_similarity_error(a: &RescaledSlice, b: &RescaledSlice) -> Result<SelfSimilarity, BlowupError> {
    if a.mesh.n_vertices() == 0 || b.mesh.n_vertices() == 0 {
        return Err(BlowupError::EmptySlice);
    }
    for t in [a.t_rescaled, b.t_rescaled] {
        if !(t < 0.0) {
            return Err(BlowupError::NonNegativeTime(t));
        }
    }
    let lambda = (a.t_rescaled / b.t_rescaled).sqrt();
    let pb: Vec<Point> = b.mesh.positions().iter().map(|p| p * lambda).collect();
    let pa = a.mesh.positions();
    let radius = pa.iter().map(|p| p.norm()).fold(0.0, f64::max).max(1e-300);
    let hausdorff = directed_hausdorff(pa, &pb).max(directed_hausdorff(&pb, pa)) / radius;
    let area_b = b.mesh.total_area() * lambda * lambda;
    let area_a = a.mesh.total_area();
    let area_mismatch = (area_b - area_a).abs() / area_a.max(1e-300);
    Ok(SelfSimilarity { hausdorff, area_mismatch, error: hausdorff + area_mismatch })
}

fn directed_hausdorff(from: &[Point], to: &[Point]) -> f64 {
    from.iter()
        .map(|p| to.iter().map(|q| (q - p).norm_squared()).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationPoint {
    pub point: [f64; 3],
    /// Largest single-ball |A|² mass in the cluster.
    pub mass: f64,
    pub balls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub eps0: f64,
    pub r_cover: f64,
    pub points: Vec<ConcentrationPoint>,
    /// Radius of the ball about the origin used for the counting bound.
    pub count_radius: f64,
    pub genus: usize,
    pub entropy_lb: f64,
    pub c_count: f64,
    /// C·(R² + 8πg + λ)/ε₀.
    pub count_bound: f64,
    pub count_ok: bool,
}

/// Counting constants and the entropy search used for λ in the bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConcentrationPlan {
    pub eps0: f64,
    pub r_cover: f64,
    pub c_count: f64,
    pub search: EntropySearch,
}

impl Default for ConcentrationPlan {
    fn default() -> Self {
        Self { eps0: 0.25, r_cover: 0.2, c_count: 1.0, search: EntropySearch::default() }
    }
}

/// Curvature-concentration points of the finest-scale slice.
///
/// Balls of radius r_cover sit on the lattice r_cover·Z³ (neighbouring balls
/// overlap by half). A ball is flagged when its |A|² mass reaches ε₀; flagged
/// balls that touch in the 26-neighbourhood form one point, placed at the
/// mass-weighted mean of the |A|²-centroids of its balls.
pub fn detect_concentration(slices: &[&RescaledSlice], plan: &ConcentrationPlan) -> Result<ConcentrationReport, BlowupError> {
    let (eps0, r) = (plan.eps0, plan.r_cover);
    let empty = |entropy_lb: f64| ConcentrationReport {
        eps0,
        r_cover: r,
        points: Vec::new(),
        count_radius: 0.0,
        genus: 0,
        entropy_lb,
        c_count: plan.c_count,
        count_bound: 0.0,
        count_ok: true,
    };
    let Some(slice) = slices.iter().min_by(|a, b| a.alpha.total_cmp(&b.alpha)) else {
        return Ok(empty(0.0));
    };
    let mesh = &slice.mesh;
    let Some((lo, hi)) = mesh.bounding_box() else {
        return Ok(empty(0.0));
    };
    if !(r > 0.0) {
        return Err(BlowupError::NonPositiveScale(r));
    }
    let a2 = &slice.curvature.a2;
    let pos = mesh.positions();
    let weighted: [Vec<f64>; 3] = std::array::from_fn(|k| (0..pos.len()).map(|v| a2[v] * pos[v][k]).collect());
    let query = BallQuery::new(mesh);
    let range = |k: usize| ((lo[k] - r) / r).floor() as i64..=((hi[k] + r) / r).ceil() as i64;
    let mut flagged: HashMap<[i64; 3], (f64, Point)> = HashMap::new();
    for i in range(0) {
        for j in range(1) {
            for k in range(2) {
                let c = Point::new(i as f64, j as f64, k as f64) * r;
                if query.faces_meeting(&c, r).is_empty() {
                    continue;
                }
                let m = query.integral(a2, &c, r);
                if m >= eps0 {
                    let g = Point::from_fn(|d, _| query.integral(&weighted[d], &c, r)) / m;
                    flagged.insert([i, j, k], (m, g));
                }
            }
        }
    }
    let mut keys: Vec<[i64; 3]> = flagged.keys().copied().collect();
    keys.sort();
    let mut seen: HashSet<[i64; 3]> = HashSet::new();
    let mut points = Vec::new();
    for start in keys {
        if !seen.insert(start) {
            continue;
        }
        let (mut total, mut acc, mut peak, mut balls) = (0.0, Point::zeros(), 0.0f64, 0);
        let mut queue = VecDeque::from([start]);
        while let Some(key) = queue.pop_front() {
            let (m, g) = flagged[&key];
            total += m;
            acc += g * m;
            peak = peak.max(m);
            balls += 1;
            for d in 0..27 {
                let off = [d / 9 - 1, (d / 3) % 3 - 1, d % 3 - 1];
                let nb = [key[0] + off[0], key[1] + off[1], key[2] + off[2]];
                if flagged.contains_key(&nb) && seen.insert(nb) {
                    queue.push_back(nb);
                }
            }
        }
        let p = acc / total;
        points.push(ConcentrationPoint { point: [p.x, p.y, p.z], mass: peak, balls });
    }

    let count_radius = pos.iter().map(|p| p.norm()).fold(0.0, f64::max);
    let genus = closed_genus(mesh);
    let entropy_lb = entropy(mesh, &plan.search)?.value;
    let count_bound = plan.c_count * (count_radius * count_radius + 8.0 * std::f64::consts::PI * genus as f64 + entropy_lb) / eps0;
    let inside = points.iter().filter(|q| Point::from(q.point).norm() <= count_radius).count();
    Ok(ConcentrationReport {
        eps0,
        r_cover: r,
        count_ok: inside as f64 <= count_bound,
        points,
        count_radius,
        genus,
        entropy_lb,
        c_count: plan.c_count,
        count_bound,
    })
}

/// Total genus of the closed components (components with boundary count 0).
fn closed_genus(mesh: &TriMesh) -> usize {
    crate::topology::genus_and_components(mesh, None).map(|t| t.total_genus()).unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImprovedH2Report {
    /// ∫∫_{B_r(x)} |H⃗|² dμ dt over the rescaled window.
    pub lhs: f64,
    pub c_h: f64,
    /// ∫ ε_shrink dt over the window.
    pub residual_budget: f64,
    /// C_H·τ(r² + rR) + residual budget.
    pub rhs: f64,
    pub holds: bool,
}

pub const C_H: f64 = 64.0;

/// Space-time |H⃗|² in B_r(x) over the rescaled window [−1 − τ, −1], against
/// C_H·τ(r² + r·R) plus the time-integrated shrinker residual. Trapezoid in time.
#[allow(clippy::too_many_arguments)]
pub fn improved_h2_check(
    traj: &FlowTrajectory,
    y: &Point,
    s: f64,
    alpha: f64,
    ball: (Point, f64),
    outer_radius: f64,
    tau: f64,
    c_h: f64,
) -> Result<ImprovedH2Report, BlowupError> {
    let (start, end) = (-1.0 - tau, -1.0);
    let snaps = rescale_window(traj, y, s, alpha, start, end)?;
    if snaps.is_empty() {
        return Err(BlowupError::WindowNotCovered { start, end });
    }
    let (x, r) = ball;
    let mut rows = Vec::with_capacity(snaps.len());
    for snap in &snaps {
        let c = compute_curvature(&snap.mesh)?;
        let h2: Vec<f64> = c.mean.iter().map(|h| h * h).collect();
        let lhs = BallQuery::new(&snap.mesh).integral(&h2, &x, r);
        rows.push((snap.t, lhs, residual_of(&snap.mesh, &c, snap.t)));
    }
    let (mut lhs, mut budget) = (0.0, 0.0);
    for w in rows.windows(2) {
        let h = 0.5 * (w[1].0 - w[0].0);
        lhs += h * (w[0].1 + w[1].1);
        budget += h * (w[0].2 + w[1].2);
    }
    if rows.len() == 1 {
        // a single sample stands for the whole window
        lhs = rows[0].1 * tau;
        budget = rows[0].2 * tau;
    }
    let rhs = c_h * tau * (r * r + r * outer_radius) + budget;
    Ok(ImprovedH2Report { lhs, c_h, residual_budget: budget, rhs, holds: lhs <= rhs })
}

/// Which blow-up checks to run and with what constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlowupPlan {
    /// Explicit singular point (y, s); estimated from the run when absent.
    pub center: Option<([f64; 3], f64)>,
    pub alpha0: f64,
    /// Ladder length: α_j = α₀·2^{−j} for j < levels.
    pub levels: usize,
    /// Radii (rescaled) for the |A|² criterion of slice selection.
    pub selection_radii: Vec<f64>,
    pub concentration: ConcentrationPlan,
    /// Rescaled window for the rescaled ledger and source-term scaling.
    pub ledger_window: (f64, f64),
    pub c_h: f64,
    /// Inner radius r of the improved H² check (outer radius 2r).
    pub h2_radius: f64,
    pub c_test: f64,
    pub residual_tol: f64,
    pub self_similarity_tol: f64,
    pub ledger_tol: f64,
    /// Also compute the entropy of every selected slice.
    pub slice_entropy: bool,
}

impl Default for BlowupPlan {
    fn default() -> Self {
        Self {
            center: None,
            alpha0: 0.4,
            levels: 4,
            selection_radii: vec![1.0, 2.0, 4.0],
            concentration: ConcentrationPlan::default(),
            ledger_window: (-2.0, -1.0),
            c_h: C_H,
            h2_radius: 0.25,
            c_test: crate::gaussian::C_TEST,
            residual_tol: 1e-3,
            self_similarity_tol: 0.015,
            ledger_tol: 0.02,
            slice_entropy: true,
        }
    }
}

impl BlowupPlan {
    pub fn ladder(&self) -> Vec<f64> {
        (0..self.levels).map(|j| self.alpha0 * 0.5f64.powi(j as i32)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderEntry {
    pub alpha: f64,
    pub tau: f64,
    /// Rescaled time of the selected slice.
    pub t_selected: f64,
    pub source_t: f64,
    pub flag: SelectionFlag,
    pub candidates: usize,
    pub residual: f64,
    pub a2_masses: Vec<f64>,
    pub entropy_lb: Option<f64>,
    /// ∫S dt of the rescaled ledger over the ledger window.
    pub source_integral: f64,
    pub ledger: Option<LedgerCheck>,
    pub h2: Option<ImprovedH2Report>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupVerdicts {
    pub residuals_small: bool,
    pub self_similar: bool,
    pub ledger_holds: bool,
    pub count_ok: bool,
    pub entropy_uniform: Option<bool>,
    /// Fitted slope of ln(source) against ln α (present when the force is non-zero).
    pub source_slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupReport {
    pub y: [f64; 3],
    pub s: f64,
    pub ladder: Vec<LadderEntry>,
    pub self_similarity: Vec<SelfSimilarity>,
    pub concentration: ConcentrationReport,
    pub entropy_initial: Option<f64>,
    pub verdicts: BlowupVerdicts,
    pub plan: BlowupPlan,
}

/// Least-squares slope of ln v against ln u.
pub fn log_log_slope(u: &[f64], v: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = u.iter().zip(v).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (a.ln(), b.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    let (mx, my) = (sx / n, sy / n);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in &pts {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    (sxx > 0.0).then(|| sxy / sxx)
}

/// The full ladder analysis. Returns the report and the selected slices.
pub fn analyze_blowup(traj: &FlowTrajectory, y: &Point, s: f64, plan: &BlowupPlan) -> Result<(BlowupReport, Vec<RescaledSlice>), BlowupError> {
    let mut entries = Vec::new();
    let mut slices = Vec::new();
    for alpha in plan.ladder() {
        let tau = alpha.sqrt();
        let sel = select_time_slice(traj, y, s, alpha, tau, &plan.selection_radii)?;
        let entropy_lb = if plan.slice_entropy { Some(entropy(&sel.slice.mesh, &plan.concentration.search)?.value) } else { None };

        let force = rescale_force(&traj.force, y, alpha)?;
        let window = rescale_window(traj, y, s, alpha, plan.ledger_window.0, plan.ledger_window.1)?;
        let (source_integral, ledger) = if window.len() >= 2 {
            let l = monotonicity_ledger(&window, &KernelCenter::new(Point::zeros(), 0.0), &force)?;
            (l.rows.last().unwrap().int_s, Some(l.check(plan.ledger_tol)))
        } else {
            (0.0, None)
        };
        // ball about the slice point nearest the singular point
        let x = sel.slice.mesh.positions().iter().copied().min_by(|a, b| a.norm().total_cmp(&b.norm()));
        let h2 = match x {
            Some(x) => Some(improved_h2_check(traj, y, s, alpha, (x, plan.h2_radius), 2.0 * plan.h2_radius, tau, plan.c_h)?),
            None => None,
        };
        entries.push(LadderEntry {
            alpha,
            tau,
            t_selected: sel.slice.t_rescaled,
            source_t: sel.slice.source_t,
            flag: sel.flag,
            candidates: sel.candidates,
            residual: sel.slice.residual,
            a2_masses: sel.a2_masses.clone(),
            entropy_lb,
            source_integral,
            ledger,
            h2,
        });
        slices.push(sel.slice);
    }
    let self_similarity = slices.windows(2).map(|w| self_similarity_error(&w[0], &w[1])).collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&RescaledSlice> = slices.iter().collect();
    let concentration = detect_concentration(&refs, &plan.concentration)?;

    let entropy_initial = if plan.slice_entropy { Some(entropy(&traj.snapshots[0].mesh, &plan.concentration.search)?.value) } else { None };
    let entropy_uniform = entropy_initial.map(|e0| entries.iter().all(|e| e.entropy_lb.unwrap_or(0.0) <= 1.02 * plan.c_test * e0));
    let source_slope = if traj.force.is_zero() {
        None
    } else {
        let alphas: Vec<f64> = entries.iter().map(|e| e.alpha).collect();
        let sources: Vec<f64> = entries.iter().map(|e| e.source_integral).collect();
        log_log_slope(&alphas, &sources)
    };
    let verdicts = BlowupVerdicts {
        residuals_small: entries.iter().all(|e| e.residual < plan.residual_tol),
        self_similar: self_similarity.iter().all(|e| e.error < plan.self_similarity_tol),
        ledger_holds: entries.iter().all(|e| e.ledger.is_none_or(|l| l.holds)),
        count_ok: concentration.count_ok,
        entropy_uniform,
        source_slope,
    };
    let report = BlowupReport {
        y: [y.x, y.y, y.z],
        s,
        ladder: entries,
        self_similarity,
        concentration,
        entropy_initial,
        verdicts,
        plan: plan.clone(),
    };
    Ok((report, slices))
}

/// Force of the rescaled flow, for callers building rescaled ledgers themselves.
pub fn rescaled_force(force: &ForceSpec, y: &Point, alpha: f64) -> Result<ForceSpec, BlowupError> {
    Ok(rescale_force(force, y, alpha)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowStatus;
    use crate::mesh::shapes::{bump_patch, icosphere, square_patch};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn exact_sphere_trajectory(times: &[f64], noisy: impl Fn(f64) -> bool) -> FlowTrajectory {
        let base = icosphere(1.0, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let snapshots = times
            .iter()
            .enumerate()
            .map(|(step, &t)| {
                let r = (-4.0 * t).sqrt();
                let mut mesh = base.scaled(r).unwrap();
                if noisy(t) {
                    let pos: Vec<Point> = mesh.positions().iter().map(|p| p * (1.0 + 0.03 * (rng.gen::<f64>() - 0.5))).collect();
                    mesh = mesh.with_positions(pos).unwrap();
                }
                Snapshot { t, step, max_a2: 0.0, mesh, dense: false }
            })
            .collect();
        FlowTrajectory {
            snapshots,
            force: ForceSpec::Zero,
            t0: times[0],
            status: FlowStatus::Completed { t: *times.last().unwrap() },
            steps: times.len(),
            blowup_threshold: f64::INFINITY,
        }
    }

    #[test]
    fn rescaled_sphere_is_radius_two_shrinker() {
        let times: Vec<f64> = (0..=36).map(|i| -0.5 + 0.0125 * i as f64).collect();
        let traj = exact_sphere_trajectory(&times, |_| false);
        let sl = rescale_slice(&traj, &Point::zeros(), 0.0, 0.5, -1.0).unwrap();
        assert!((sl.t_rescaled + 1.0).abs() < 1e-12);
        let mean_r = sl.mesh.positions().iter().map(|p| p.norm()).sum::<f64>() / sl.mesh.n_vertices() as f64;
        assert!((mean_r - 2.0).abs() < 1e-12);
        assert!(sl.residual < 1e-3, "{}", sl.residual);
    }

    #[test]
    fn identity_rescaling_keeps_vertices() {
        let m = square_patch(1.0, 6);
        let traj = FlowTrajectory {
            snapshots: vec![Snapshot { t: -1.0, step: 0, max_a2: 0.0, mesh: m.clone(), dense: false }],
            force: ForceSpec::Zero,
            t0: -1.0,
            status: FlowStatus::Completed { t: -1.0 },
            steps: 0,
            blowup_threshold: f64::INFINITY,
        };
        let sl = rescale_slice(&traj, &Point::zeros(), 0.0, 1.0, -1.0).unwrap();
        assert_eq!(sl.mesh.positions(), m.positions());
        assert!(sl.residual < 1e-3);
        assert!(matches!(rescale_slice(&traj, &Point::zeros(), 0.0, 1.0, -3.0), Err(BlowupError::NoSnapshotNearTarget { .. })));
    }

    #[test]
    fn residual_detects_wrong_radius() {
        let m = icosphere(2.4, 3);
        let sl = RescaledSlice::from_mesh(m, 1.0, -1.0).unwrap();
        assert!(shrinker_residual(&sl).unwrap() > 0.01);
        assert!(matches!(RescaledSlice::from_mesh(icosphere(2.0, 1), 1.0, 0.0), Err(BlowupError::NonNegativeTime(_))));
    }

    #[test]
    fn selection_on_exact_sphere_takes_midpoint() {
        let times: Vec<f64> = (0..=40).map(|i| -2.0 + 0.025 * i as f64).collect();
        let traj = exact_sphere_trajectory(&times, |_| false);
        let sel = select_time_slice(&traj, &Point::zeros(), 0.0, 1.0, 0.5, &[1.0, 2.0, 4.0]).unwrap();
        assert_eq!(sel.flag, SelectionFlag::Qualified);
        assert!((sel.slice.t_rescaled + 1.25).abs() < 0.0126, "{}", sel.slice.t_rescaled);
    }

    #[test]
    fn selection_avoids_noise_spike() {
        let times: Vec<f64> = (0..=40).map(|i| -2.0 + 0.025 * i as f64).collect();
        // spike over the middle quarter of the window [-1.5, -1]
        let traj = exact_sphere_trajectory(&times, |t| (-1.3125..=-1.1875).contains(&t));
        let sel = select_time_slice(&traj, &Point::zeros(), 0.0, 1.0, 0.5, &[1.0, 2.0, 4.0]).unwrap();
        assert!(!(-1.3125..=-1.1875).contains(&sel.slice.t_rescaled), "{}", sel.slice.t_rescaled);
    }

    #[test]
    fn single_snapshot_window_is_low_resolution() {
        let traj = exact_sphere_trajectory(&[-1.2, -0.5], |_| false);
        let sel = select_time_slice(&traj, &Point::zeros(), 0.0, 1.0, 0.5, &[1.0]).unwrap();
        assert_eq!(sel.flag, SelectionFlag::LowResolution);
        assert!(matches!(
            select_time_slice(&traj, &Point::zeros(), 0.0, 1.0, 0.1, &[1.0]),
            Err(BlowupError::WindowNotCovered { .. })
        ));
    }

    #[test]
    fn self_similarity_of_sphere_slices() {
        let a = RescaledSlice::from_mesh(icosphere(2.0, 3), 1.0, -1.0).unwrap();
        let b = RescaledSlice::from_mesh(icosphere(6f64.sqrt(), 3), 1.0, -1.5).unwrap();
        assert!(self_similarity_error(&a, &b).unwrap().error < 0.01);
        assert!(self_similarity_error(&a, &a).unwrap().error < 1e-15);
        let c = RescaledSlice::from_mesh(icosphere(2.0, 3).translated(&Point::new(0.2, 0.0, 0.0)).unwrap(), 1.0, -1.0).unwrap();
        let e = self_similarity_error(&a, &c).unwrap();
        assert!(e.hausdorff > 0.05 && e.hausdorff < 0.11, "{e:?}");
    }

    #[test]
    fn sphere_has_no_concentration() {
        let sl = RescaledSlice::from_mesh(icosphere(2.0, 3), 0.1, -1.0).unwrap();
        let rep = detect_concentration(&[&sl], &ConcentrationPlan::default()).unwrap();
        assert!(rep.points.is_empty());
        assert!(rep.count_ok);
    }

    #[test]
    fn bump_has_one_concentration_point_at_apex() {
        let m = bump_patch(1.0, 0.05, 0.05);
        let sl = RescaledSlice::from_mesh(m, 0.1, -1.0).unwrap();
        let rep = detect_concentration(&[&sl], &ConcentrationPlan::default()).unwrap();
        assert_eq!(rep.points.len(), 1, "{:?}", rep.points);
        let q = Point::from(rep.points[0].point);
        assert!((q - Point::new(0.0, 0.0, 0.05)).norm() < 0.05, "{q:?}");
        assert!(detect_concentration(&[], &ConcentrationPlan::default()).unwrap().points.is_empty());
    }

    #[test]
    fn improved_h2_on_exact_sphere() {
        let times: Vec<f64> = (0..=40).map(|i| -2.0 + 0.025 * i as f64).collect();
        let traj = exact_sphere_trajectory(&times, |_| false);
        let rep = improved_h2_check(&traj, &Point::zeros(), 0.0, 1.0, (Point::new(0.0, 0.0, 2.0), 0.25), 0.5, 0.5, C_H).unwrap();
        assert!(rep.lhs > 0.0 && rep.holds, "{rep:?}");
    }

    #[test]
    fn slope_of_power_law() {
        let u = [0.4, 0.2, 0.1, 0.05];
        let v: Vec<f64> = u.iter().map(|a| 3.0 * a * a).collect();
        assert!((log_log_slope(&u, &v).unwrap() - 2.0).abs() < 1e-12);
    }
}
