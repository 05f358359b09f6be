//! Declarative scenarios: config parsing, the run pipeline, artifact
//! writing and re-verification of stored artifacts.
//!
//! A run directory holds `manifest.json` (the list of every file written),
//! `scenario.json` (the normalized config), `snapshots/NNNNN.off`,
//! `diagnostics.csv` (one row per recorded snapshot), `ledger_K.csv` for
//! additional kernel centres, `diagnostics.json` and, for singular runs
//! with a blow-up plan, `blowup_report.json` plus `slices/*.off`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blowup::{analyze_blowup, BlowupPlan, BlowupReport};
use crate::flow::{evolve, singular_point_estimate, FlowStatus, FlowTrajectory, StepPolicy};
use crate::force::ForceSpec;
use crate::gaussian::{
    area_ratio_sup, entropy, local_area_bound_check, monotonicity_ledger, EntropySearch, KernelCenter, LedgerCheck, LedgerRow,
    LocalAreaReport, MonotonicityLedger,
};
use crate::mesh::io::{read_mesh, to_off_string};
use crate::mesh::shapes;
use crate::mesh::{Point, TriMesh};
use crate::topology::{local_gauss_bonnet_check, GaussBonnetReport};

/// Environment variable overriding the output root.
pub const OUTPUT_ROOT_ENV: &str = "MCFLAB_OUTPUT_ROOT";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid config at `{path}`: {msg}")]
    ConfigInvalid { path: String, msg: String },
    #[error("scenario `{scenario}`: {msg}")]
    Numerical { scenario: String, msg: String },
    #[error("missing or incomplete artifact: {0}")]
    MissingArtifacts(String),
    #[error("i/o error on {path}: {msg}")]
    Io { path: String, msg: String },
}

impl ScenarioError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::ConfigInvalid { .. } => 2,
            ScenarioError::Numerical { .. } | ScenarioError::Io { .. } => 3,
            ScenarioError::MissingArtifacts(_) => 4,
        }
    }
}

fn invalid(path: &str, msg: impl Into<String>) -> ScenarioError {
    ScenarioError::ConfigInvalid { path: path.to_string(), msg: msg.into() }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ScenarioError {
    ScenarioError::Io { path: path.display().to_string(), msg: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurfaceSpec {
    Sphere { radius: f64, level: u32 },
    Torus { major: f64, minor: f64, n_major: usize, n_minor: usize },
    Capsule { length: f64, radius: f64, segments: usize },
    Dumbbell { neck: f64, segments: usize },
    /// OFF or OBJ file, relative to the config file's directory.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CenterSpec {
    pub y: [f64; 3],
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussBonnetProbe {
    pub center: [f64; 3],
    pub inner_radius: f64,
    pub radius_ratio: f64,
    pub eps: f64,
    /// Snapshot time (nearest recorded); the initial surface when absent.
    #[serde(default)]
    pub t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalAreaProbe {
    pub x0: [f64; 3],
    pub r: f64,
    pub t0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsPlan {
    pub ledger: bool,
    /// Explicit kernel centres; the first one feeds diagnostics.csv.
    pub centers: Vec<CenterSpec>,
    /// Add the estimated singular point as a kernel centre.
    pub auto_center: bool,
    /// Ledger rows need s − t at least this large.
    pub min_tau: f64,
    /// Ledger tolerance as a fraction of G(t₁).
    pub tol: f64,
    /// Entropy lower bound at every n-th snapshot (0 = off).
    pub entropy_every: usize,
    /// Area-ratio lower bound at every n-th snapshot (0 = off).
    pub area_ratio_every: usize,
    pub area_ratio_samples: usize,
    pub search: EntropySearch,
    pub gauss_bonnet: Vec<GaussBonnetProbe>,
    pub gauss_bonnet_tol: f64,
    pub local_area: Vec<LocalAreaProbe>,
    /// Constant of the local area bound; 1 + B² when absent.
    pub c_lemma: Option<f64>,
    /// Write every n-th snapshot mesh (the last one always).
    pub snapshot_stride: usize,
}

impl Default for DiagnosticsPlan {
    fn default() -> Self {
        Self {
            ledger: true,
            centers: Vec::new(),
            auto_center: true,
            min_tau: 1e-3,
            tol: 0.02,
            entropy_every: 50,
            area_ratio_every: 100,
            area_ratio_samples: 0,
            search: EntropySearch::default(),
            gauss_bonnet: Vec::new(),
            gauss_bonnet_tol: 0.05,
            local_area: Vec::new(),
            c_lemma: None,
            snapshot_stride: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub surface: SurfaceSpec,
    /// Translation applied to the generated surface.
    #[serde(default)]
    pub offset: [f64; 3],
    #[serde(default)]
    pub force: ForceSpec,
    #[serde(default)]
    pub policy: StepPolicy,
    #[serde(default)]
    pub t0: f64,
    pub t_end: f64,
    #[serde(default)]
    pub diagnostics: DiagnosticsPlan,
    #[serde(default)]
    pub blowup: Option<BlowupPlan>,
    /// Output root when the environment does not override it.
    #[serde(default)]
    pub output_root: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    /// Directory of the config file, for relative paths.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Scenario {
    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ScenarioError> {
        let mut sc: Scenario = if text.trim_start().starts_with('{') {
            let de = &mut serde_json::Deserializer::from_str(text);
            serde_path_to_error::deserialize(de).map_err(|e| invalid(&e.path().to_string(), e.inner().to_string()))?
        } else {
            let de = toml::Deserializer::parse(text).map_err(|e| invalid(".", e.to_string()))?;
            serde_path_to_error::deserialize(de).map_err(|e| invalid(&e.path().to_string(), e.inner().message().to_string()))?
        };
        sc.base_dir = base_dir.to_path_buf();
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path).map_err(|e| invalid("", format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let positive = |path: &str, v: f64| if v > 0.0 && v.is_finite() { Ok(()) } else { Err(invalid(path, format!("must be positive, got {v}"))) };
        let count = |path: &str, v: usize, min: usize| if v >= min { Ok(()) } else { Err(invalid(path, format!("must be at least {min}, got {v}"))) };
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return Err(invalid("name", "must be a plain, non-empty directory name"));
        }
        match &self.surface {
            SurfaceSpec::Sphere { radius, level } => {
                positive("surface.radius", *radius)?;
                if *level > 7 {
                    return Err(invalid("surface.level", "at most 7"));
                }
            }
            SurfaceSpec::Torus { major, minor, n_major, n_minor } => {
                positive("surface.major", *major)?;
                positive("surface.minor", *minor)?;
                if minor >= major {
                    return Err(invalid("surface.minor", "must be below surface.major"));
                }
                count("surface.n_major", *n_major, 3)?;
                count("surface.n_minor", *n_minor, 3)?;
            }
            SurfaceSpec::Capsule { length, radius, segments } => {
                positive("surface.length", *length)?;
                positive("surface.radius", *radius)?;
                count("surface.segments", *segments, 3)?;
            }
            SurfaceSpec::Dumbbell { neck, segments } => {
                positive("surface.neck", *neck)?;
                count("surface.segments", *segments, 3)?;
            }
            SurfaceSpec::File { path } => {
                let p = self.base_dir.join(path);
                if !p.is_file() {
                    return Err(invalid("surface.path", format!("{} does not exist", p.display())));
                }
            }
        }
        let p = &self.policy;
        positive("policy.safety", p.safety)?;
        if p.safety >= 1.0 {
            return Err(invalid("policy.safety", "must be below 1"));
        }
        positive("policy.dt_max", p.dt_max)?;
        positive("policy.dt_min", p.dt_min)?;
        if p.dt_min >= p.dt_max {
            return Err(invalid("policy.dt_min", "must be below policy.dt_max"));
        }
        positive("policy.max_displacement", p.max_displacement)?;
        positive("policy.blowup_factor", p.blowup_factor)?;
        count("policy.snapshot_every", p.snapshot_every, 1)?;
        if !(self.t_end > self.t0) {
            return Err(invalid("t_end", "must exceed t0"));
        }
        let d = &self.diagnostics;
        positive("diagnostics.min_tau", d.min_tau)?;
        positive("diagnostics.tol", d.tol)?;
        count("diagnostics.snapshot_stride", d.snapshot_stride, 1)?;
        for (i, c) in d.centers.iter().enumerate() {
            if !c.s.is_finite() || c.y.iter().any(|v| !v.is_finite()) {
                return Err(invalid(&format!("diagnostics.centers[{i}]"), "must be finite"));
            }
        }
        for (i, g) in d.gauss_bonnet.iter().enumerate() {
            positive(&format!("diagnostics.gauss_bonnet[{i}].inner_radius"), g.inner_radius)?;
            if !(g.radius_ratio > 1.0) {
                return Err(invalid(&format!("diagnostics.gauss_bonnet[{i}].radius_ratio"), "must exceed 1"));
            }
            if !(g.eps > 0.0 && g.eps < 1.0) {
                return Err(invalid(&format!("diagnostics.gauss_bonnet[{i}].eps"), "must lie in (0, 1)"));
            }
        }
        for (i, l) in d.local_area.iter().enumerate() {
            positive(&format!("diagnostics.local_area[{i}].r"), l.r)?;
            if l.t0 - l.r * l.r / 16.0 < self.t0 || l.t0 > self.t_end {
                return Err(invalid(&format!("diagnostics.local_area[{i}].t0"), "window [t0 − r²/16, t0] must lie inside [scenario t0, t_end]"));
            }
        }
        if let Some(c) = d.c_lemma {
            positive("diagnostics.c_lemma", c)?;
        }
        if let Some(b) = &self.blowup {
            positive("blowup.alpha0", b.alpha0)?;
            count("blowup.levels", b.levels, 1)?;
            positive("blowup.concentration.eps0", b.concentration.eps0)?;
            positive("blowup.concentration.r_cover", b.concentration.r_cover)?;
            for (i, r) in b.selection_radii.iter().enumerate() {
                positive(&format!("blowup.selection_radii[{i}]"), *r)?;
            }
            if !(b.ledger_window.0 < b.ledger_window.1 && b.ledger_window.1 < 0.0) {
                return Err(invalid("blowup.ledger_window", "must be an increasing pair of negative times"));
            }
        }
        Ok(())
    }

    pub fn initial_mesh(&self) -> Result<TriMesh, ScenarioError> {
        let mesh = match &self.surface {
            SurfaceSpec::Sphere { radius, level } => shapes::icosphere(*radius, *level),
            SurfaceSpec::Torus { major, minor, n_major, n_minor } => shapes::torus(*major, *minor, *n_major, *n_minor),
            SurfaceSpec::Capsule { length, radius, segments } => shapes::capsule(*length, *radius, *segments),
            SurfaceSpec::Dumbbell { neck, segments } => shapes::dumbbell(*neck, *segments),
            SurfaceSpec::File { path } => read_mesh(&self.base_dir.join(path)).map_err(|e| invalid("surface.path", e.to_string()))?,
        };
        let offset = Point::from(self.offset);
        if offset == Point::zeros() {
            Ok(mesh)
        } else {
            mesh.translated(&offset).map_err(|e| invalid("offset", e.to_string()))
        }
    }

    /// Output root: the environment override, else the config value, else `runs`
    /// next to the config file.
    pub fn output_root(&self) -> PathBuf {
        if let Some(root) = std::env::var_os(OUTPUT_ROOT_ENV) {
            return PathBuf::from(root);
        }
        match &self.output_root {
            Some(p) if p.is_absolute() => p.clone(),
            Some(p) => self.base_dir.join(p),
            None => self.base_dir.join("runs"),
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_root().join(&self.name)
    }
}

/// One row of diagnostics.csv.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub index: usize,
    pub t: f64,
    pub step: usize,
    pub dense: bool,
    pub max_a2: f64,
    pub area: f64,
    pub volume: f64,
    #[serde(rename = "G")]
    pub g: Option<f64>,
    #[serde(rename = "D")]
    pub d: Option<f64>,
    #[serde(rename = "S")]
    pub s: Option<f64>,
    #[serde(rename = "int_D")]
    pub int_d: Option<f64>,
    #[serde(rename = "int_S")]
    pub int_s: Option<f64>,
    #[serde(rename = "D1")]
    pub d_one_sided: Option<f64>,
    #[serde(rename = "S1")]
    pub s_one_sided: Option<f64>,
    #[serde(rename = "int_D1")]
    pub int_d_one_sided: Option<f64>,
    #[serde(rename = "int_S1")]
    pub int_s_one_sided: Option<f64>,
    pub entropy_lb: Option<f64>,
    pub area_ratio_lb: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSnapshot {
    pub index: usize,
    pub t: f64,
    pub step: usize,
    pub file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub status: FlowStatus,
    pub steps: usize,
    pub singular_point: Option<([f64; 3], f64)>,
    pub centers: Vec<CenterSpec>,
    pub snapshots: Vec<ManifestSnapshot>,
    /// Every file written, relative to the run directory (the manifest excluded).
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussBonnetEntry {
    pub t: f64,
    pub probe: GaussBonnetProbe,
    pub report: GaussBonnetReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub force_bound: f64,
    pub ledger_tol: f64,
    pub c_lemma: f64,
    pub gauss_bonnet_tol: f64,
    pub ledger_checks: Vec<(CenterSpec, LedgerCheck, LedgerCheck)>,
    pub gauss_bonnet: Vec<GaussBonnetEntry>,
    pub local_area: Vec<LocalAreaReport>,
    pub notes: Vec<String>,
}

/// What a finished run produced.
#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub trajectory: FlowTrajectory,
    pub diagnostics: Diagnostics,
    pub blowup: Option<BlowupReport>,
}

struct ArtifactWriter {
    dir: PathBuf,
    files: Vec<String>,
}

impl ArtifactWriter {
    fn write(&mut self, rel: &str, contents: &[u8]) -> Result<(), ScenarioError> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        fs::write(&path, contents).map_err(|e| io_err(&path, e))?;
        self.files.push(rel.to_string());
        Ok(())
    }
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, ScenarioError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| ScenarioError::Io { path: "csv".into(), msg: e.to_string() })?;
    }
    w.into_inner().map_err(|e| ScenarioError::Io { path: "csv".into(), msg: e.to_string() })
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, ScenarioError> {
    let mut v = serde_json::to_vec_pretty(value).map_err(|e| ScenarioError::Io { path: "json".into(), msg: e.to_string() })?;
    v.push(b'\n');
    Ok(v)
}

fn numerical(sc: &Scenario, e: impl std::fmt::Display) -> ScenarioError {
    ScenarioError::Numerical { scenario: sc.name.clone(), msg: e.to_string() }
}

/// Runs the flow, diagnostics and (when singular) the blow-up analysis,
/// and writes the run directory under `sc.run_dir()`.
pub fn run_scenario(sc: &Scenario) -> Result<RunOutcome, ScenarioError> {
    let initial = sc.initial_mesh()?;
    let traj = evolve(initial, &sc.force, &sc.policy, sc.t0, sc.t_end).map_err(|e| numerical(sc, e))?;
    let mut notes = Vec::new();

    let singular = match &traj.status {
        FlowStatus::SingularAt { .. } => match singular_point_estimate(&traj) {
            Ok((y, s)) => Some((y, s)),
            Err(e) => {
                notes.push(format!("singular point estimate unavailable: {e}"));
                None
            }
        },
        _ => None,
    };

    let plan = &sc.diagnostics;
    let mut centers: Vec<CenterSpec> = plan.centers.clone();
    if plan.auto_center {
        if let Some((y, s)) = singular {
            centers.push(CenterSpec { y: [y.x, y.y, y.z], s });
        }
    }

    let n = traj.snapshots.len();
    let mut ledgers: Vec<Option<(Vec<usize>, MonotonicityLedger)>> = Vec::new();
    let mut ledger_checks = Vec::new();
    if plan.ledger {
        for c in &centers {
            let idx: Vec<usize> = (0..n).filter(|&i| c.s - traj.snapshots[i].t >= plan.min_tau).collect();
            if idx.len() < 2 {
                notes.push(format!("centre {:?} has fewer than two admissible snapshots", c));
                ledgers.push(None);
                continue;
            }
            let snaps: Vec<_> = idx.iter().map(|&i| traj.snapshots[i].clone()).collect();
            let center = KernelCenter::new(Point::from(c.y), c.s);
            let l = monotonicity_ledger(&snaps, &center, &traj.force).map_err(|e| numerical(sc, e))?;
            ledger_checks.push((c.clone(), l.check(plan.tol), l.check_one_sided(plan.tol)));
            ledgers.push(Some((idx, l)));
        }
    }

    let strided = |every: usize, i: usize| every > 0 && (i.is_multiple_of(every) || i + 1 == n);
    let mut rows: Vec<DiagnosticsRow> = Vec::with_capacity(n);
    for (i, snap) in traj.snapshots.iter().enumerate() {
        let entropy_lb = if strided(plan.entropy_every, i) {
            Some(entropy(&snap.mesh, &plan.search).map_err(|e| numerical(sc, e))?.value)
        } else {
            None
        };
        let area_ratio_lb = strided(plan.area_ratio_every, i).then(|| area_ratio_sup(&snap.mesh, plan.area_ratio_samples, sc.seed).value);
        rows.push(DiagnosticsRow {
            index: i,
            t: snap.t,
            step: snap.step,
            dense: snap.dense,
            max_a2: snap.max_a2,
            area: snap.mesh.total_area(),
            volume: snap.mesh.enclosed_volume(),
            g: None,
            d: None,
            s: None,
            int_d: None,
            int_s: None,
            d_one_sided: None,
            s_one_sided: None,
            int_d_one_sided: None,
            int_s_one_sided: None,
            entropy_lb,
            area_ratio_lb,
        });
    }
    if let Some(Some((idx, l))) = ledgers.first() {
        for (&i, r) in idx.iter().zip(&l.rows) {
            let row = &mut rows[i];
            row.g = Some(r.g);
            row.d = Some(r.d);
            row.s = Some(r.s);
            row.int_d = Some(r.int_d);
            row.int_s = Some(r.int_s);
            row.d_one_sided = Some(r.d_one_sided);
            row.s_one_sided = Some(r.s_one_sided);
            row.int_d_one_sided = Some(r.int_d_one_sided);
            row.int_s_one_sided = Some(r.int_s_one_sided);
        }
    }

    let mut gauss_bonnet = Vec::new();
    for probe in &plan.gauss_bonnet {
        let snap = match probe.t {
            Some(t) => traj.nearest(t),
            None => &traj.snapshots[0],
        };
        let report = local_gauss_bonnet_check(&snap.mesh, &Point::from(probe.center), probe.inner_radius, probe.radius_ratio, probe.eps, plan.gauss_bonnet_tol)
            .map_err(|e| numerical(sc, e))?;
        gauss_bonnet.push(GaussBonnetEntry { t: snap.t, probe: probe.clone(), report });
    }
    let bound = sc.force.bound();
    let c_lemma = plan.c_lemma.unwrap_or(1.0 + bound * bound);
    let mut local_area = Vec::new();
    for probe in &plan.local_area {
        let rep = local_area_bound_check(&traj.snapshots, &Point::from(probe.x0), probe.r, probe.t0, c_lemma).map_err(|e| numerical(sc, e))?;
        local_area.push(rep);
    }

    let blowup = match (&sc.blowup, singular) {
        (Some(bp), found) => {
            let center = bp.center.map(|(y, s)| (Point::from(y), s)).or(found);
            match center {
                Some((y, s)) => Some(analyze_blowup(&traj, &y, s, bp).map_err(|e| numerical(sc, e))?),
                None => {
                    notes.push("blow-up analysis skipped: the run is not singular".into());
                    None
                }
            }
        }
        (None, _) => None,
    };

    let diagnostics = Diagnostics {
        force_bound: bound,
        ledger_tol: plan.tol,
        c_lemma,
        gauss_bonnet_tol: plan.gauss_bonnet_tol,
        ledger_checks,
        gauss_bonnet,
        local_area,
        notes,
    };

    // artifacts
    let dir = sc.run_dir();
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    }
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let mut out = ArtifactWriter { dir: dir.clone(), files: Vec::new() };
    out.write("scenario.json", &json_bytes(sc)?)?;
    let mut manifest_snaps = Vec::with_capacity(n);
    for (i, snap) in traj.snapshots.iter().enumerate() {
        let file = (i % plan.snapshot_stride == 0 || i + 1 == n).then(|| format!("snapshots/{i:05}.off"));
        if let Some(f) = &file {
            out.write(f, to_off_string(&snap.mesh).as_bytes())?;
        }
        manifest_snaps.push(ManifestSnapshot { index: i, t: snap.t, step: snap.step, file });
    }
    out.write("diagnostics.csv", &csv_bytes(&rows)?)?;
    for (k, l) in ledgers.iter().enumerate().skip(1) {
        if let Some((_, l)) = l {
            out.write(&format!("ledger_{k}.csv"), &csv_bytes(&l.rows)?)?;
        }
    }
    out.write("diagnostics.json", &json_bytes(&diagnostics)?)?;
    let report = match blowup {
        Some((report, slices)) => {
            for (j, sl) in slices.iter().enumerate() {
                out.write(&format!("slices/alpha_{j}.off"), to_off_string(&sl.mesh).as_bytes())?;
            }
            out.write("blowup_report.json", &json_bytes(&report)?)?;
            Some(report)
        }
        None => None,
    };
    let manifest = Manifest {
        name: sc.name.clone(),
        status: traj.status.clone(),
        steps: traj.steps,
        singular_point: singular.map(|(y, s)| ([y.x, y.y, y.z], s)),
        centers,
        snapshots: manifest_snaps,
        files: out.files.clone(),
    };
    out.write("manifest.json", &json_bytes(&manifest)?)?;
    Ok(RunOutcome { dir, manifest, trajectory: traj, diagnostics, blowup: report })
}

/// One line of the verification table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub check: String,
    pub label: String,
    pub margin: f64,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub run_dir: PathBuf,
    pub rows: Vec<CheckRow>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<28} {:<34} {:>12}  {:<4}  detail", "check", "inequality", "margin", "ok");
        for r in &self.rows {
            let _ = writeln!(s, "{:<28} {:<34} {:>12.4e}  {:<4}  {}", r.check, r.label, r.margin, if r.pass { "pass" } else { "FAIL" }, r.detail);
        }
        s
    }
}

fn read_listed(dir: &Path, manifest: &Manifest, rel: &str) -> Result<Option<String>, ScenarioError> {
    if !manifest.files.iter().any(|f| f == rel) {
        return Ok(None);
    }
    let p = dir.join(rel);
    fs::read_to_string(&p).map(Some).map_err(|_| ScenarioError::MissingArtifacts(p.display().to_string()))
}

fn read_csv<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<Vec<T>, ScenarioError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(|e| ScenarioError::MissingArtifacts(format!("{what}: {e}")))
}

fn ledger_rows(check: &str, centre: &CenterSpec, ledger: &MonotonicityLedger, tol: f64) -> Vec<CheckRow> {
    let two = ledger.check(tol);
    let one = ledger.check_one_sided(tol);
    let source = ledger.rows.last().map_or(0.0, |r| r.int_s);
    let c = format!("y = {:?}, s = {:.6}", centre.y, centre.s);
    vec![
        CheckRow {
            check: check.to_string(),
            label: "G(t2) + ∫D ≤ G(t1) + ∫S + tol·G(t1)".into(),
            margin: two.worst_margin,
            pass: two.holds,
            detail: format!("{c}; ∫S = {source:.4e}; worst pair {:?}", two.worst_pair),
        },
        CheckRow {
            check: format!("{check} (one-sided)"),
            label: "G(t2) + ½∫∫ρ|A|² ≤ G(t1) + ½∫∫ρ|β|² + tol".into(),
            margin: one.worst_margin,
            pass: one.holds,
            detail: format!("{c}; worst pair {:?}", one.worst_pair),
        },
    ]
}

/// Re-checks every stored inequality of a completed run.
pub fn verify_suite(sc: &Scenario) -> Result<VerifyReport, ScenarioError> {
    verify_run_dir(&sc.run_dir())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, ScenarioError> {
    let mp = dir.join("manifest.json");
    let text = fs::read_to_string(&mp).map_err(|_| ScenarioError::MissingArtifacts(mp.display().to_string()))?;
    serde_json::from_str(&text).map_err(|e| ScenarioError::MissingArtifacts(format!("manifest.json: {e}")))
}

pub fn verify_run_dir(dir: &Path) -> Result<VerifyReport, ScenarioError> {
    let manifest = read_manifest(dir)?;
    for f in &manifest.files {
        if !dir.join(f).is_file() {
            return Err(ScenarioError::MissingArtifacts(dir.join(f).display().to_string()));
        }
    }
    let diag_text = read_listed(dir, &manifest, "diagnostics.json")?.ok_or_else(|| ScenarioError::MissingArtifacts("diagnostics.json".into()))?;
    let diag: Diagnostics = serde_json::from_str(&diag_text).map_err(|e| ScenarioError::MissingArtifacts(format!("diagnostics.json: {e}")))?;
    let csv_text = read_listed(dir, &manifest, "diagnostics.csv")?.ok_or_else(|| ScenarioError::MissingArtifacts("diagnostics.csv".into()))?;
    let rows: Vec<DiagnosticsRow> = read_csv(&csv_text, "diagnostics.csv")?;
    if rows.len() != manifest.snapshots.len() || rows.iter().enumerate().any(|(i, r)| r.index != i) {
        return Err(ScenarioError::MissingArtifacts(format!(
            "diagnostics.csv has {} rows, the manifest lists {} snapshots",
            rows.len(),
            manifest.snapshots.len()
        )));
    }

    let mut out = Vec::new();
    // ledgers: the first centre lives in diagnostics.csv, the rest in ledger_K.csv
    for (k, centre) in manifest.centers.iter().enumerate() {
        let lrows: Vec<LedgerRow> = if k == 0 {
            rows.iter()
                .filter_map(|r| {
                    Some(LedgerRow {
                        t: r.t,
                        g: r.g?,
                        d: r.d?,
                        s: r.s?,
                        d_one_sided: r.d_one_sided?,
                        s_one_sided: r.s_one_sided?,
                        int_d: r.int_d?,
                        int_s: r.int_s?,
                        int_d_one_sided: r.int_d_one_sided?,
                        int_s_one_sided: r.int_s_one_sided?,
                    })
                })
                .collect()
        } else {
            match read_listed(dir, &manifest, &format!("ledger_{k}.csv"))? {
                Some(text) => read_csv(&text, &format!("ledger_{k}.csv"))?,
                None => Vec::new(),
            }
        };
        if lrows.len() < 2 {
            continue;
        }
        let ledger = MonotonicityLedger { y: centre.y, s: centre.s, rows: lrows };
        out.extend(ledger_rows(&format!("monotonicity[{k}]"), centre, &ledger, diag.ledger_tol));
    }

    // entropy growth along the stored lower bounds
    let ent: Vec<(f64, f64)> = rows.iter().filter_map(|r| Some((r.t, r.entropy_lb?))).collect();
    if ent.len() >= 2 && diag.force_bound.is_finite() {
        let (t0, e0) = ent[0];
        let b2 = diag.force_bound * diag.force_bound;
        let worst = ent.iter().map(|&(t, e)| e / ((b2 * (t - t0) / 4.0).exp() * e0 * 1.02)).fold(0.0, f64::max);
        out.push(CheckRow {
            check: "entropy growth".into(),
            label: "λ(t) ≤ e^{B²(t−t0)/4}·λ(t0)·1.02".into(),
            margin: 1.0 - worst,
            pass: worst <= 1.0,
            detail: format!("B = {}, {} samples", diag.force_bound, ent.len()),
        });
    }

    for (i, la) in diag.local_area.iter().enumerate() {
        let worst = la.rows.iter().map(|&(_, a, b)| if b > 0.0 { a / b } else { f64::INFINITY }).fold(0.0, f64::max);
        out.push(CheckRow {
            check: format!("local area[{i}]"),
            label: "μ(B_r/2) ≤ 8e^{(C+C/r)Δt}μ(B_r)".into(),
            margin: 1.0 - worst,
            pass: la.rows.iter().all(|&(_, a, b)| a <= b),
            detail: format!("C = {}, window [{:.4}, {:.4}]", la.c_lemma, la.start, la.end),
        });
    }
    for (i, g) in diag.gauss_bonnet.iter().enumerate() {
        let r = &g.report;
        out.push(CheckRow {
            check: format!("gauss-bonnet[{i}]"),
            label: "(1−ε)∫_{B1}|A|² ≤ RHS".into(),
            margin: r.margin,
            pass: r.lhs <= r.rhs + diag.gauss_bonnet_tol * r.rhs.abs(),
            detail: format!("t = {:.4}, g = {}, c' = {}, D' = {:.4}", g.t, r.genus, r.c_prime, r.d_prime),
        });
    }

    if let Some(text) = read_listed(dir, &manifest, "blowup_report.json")? {
        let rep: BlowupReport = serde_json::from_str(&text).map_err(|e| ScenarioError::MissingArtifacts(format!("blowup_report.json: {e}")))?;
        let c = &rep.concentration;
        let count = c.points.iter().filter(|q| Point::from(q.point).norm() <= c.count_radius).count();
        out.push(CheckRow {
            check: "concentration count".into(),
            label: "|Q ∩ B_R| ≤ C(R² + 8πg + λ)/ε0".into(),
            margin: c.count_bound - count as f64,
            pass: count as f64 <= c.count_bound,
            detail: format!("{} points, ε0 = {}, r = {}", c.points.len(), c.eps0, c.r_cover),
        });
        for e in &rep.ladder {
            if let Some(l) = &e.ledger {
                out.push(CheckRow {
                    check: format!("rescaled monotonicity α={}", e.alpha),
                    label: "ledger with source α²|β|²/4".into(),
                    margin: l.worst_margin,
                    pass: l.holds,
                    detail: format!("∫S = {:.4e}", e.source_integral),
                });
            }
            if let Some(h) = &e.h2 {
                out.push(CheckRow {
                    check: format!("improved H² α={}", e.alpha),
                    label: "∫∫|H|² ≤ C_H τ(r² + rR) + δ".into(),
                    margin: (h.rhs - h.lhs) / h.rhs,
                    pass: h.holds,
                    detail: format!("C_H = {}", h.c_h),
                });
            }
        }
        let worst_res = rep.ladder.iter().map(|e| e.residual).fold(0.0, f64::max);
        out.push(CheckRow {
            check: "shrinker residual".into(),
            label: "ε_shrink(α_j) recorded".into(),
            margin: rep.plan.residual_tol - worst_res,
            pass: true,
            detail: format!("max {:.3e} against {:.1e} (report only)", worst_res, rep.plan.residual_tol),
        });
        if let Some(slope) = rep.verdicts.source_slope {
            out.push(CheckRow {
                check: "source scaling".into(),
                label: "∫S ∝ α² across the ladder".into(),
                margin: 0.1 - (slope - 2.0).abs(),
                pass: (slope - 2.0).abs() <= 0.1,
                detail: format!("slope {slope:.4}"),
            });
        }
    }
    Ok(VerifyReport { run_dir: dir.to_path_buf(), rows: out })
}

/// Renders SVG line charts of the stored ledger and blow-up ladder into `plots/`.
pub fn plot_run(dir: &Path) -> Result<Vec<PathBuf>, ScenarioError> {
    let manifest = read_manifest(dir)?;
    let csv_text = read_listed(dir, &manifest, "diagnostics.csv")?.ok_or_else(|| ScenarioError::MissingArtifacts("diagnostics.csv".into()))?;
    let rows: Vec<DiagnosticsRow> = read_csv(&csv_text, "diagnostics.csv")?;
    let plots = dir.join("plots");
    fs::create_dir_all(&plots).map_err(|e| io_err(&plots, e))?;
    let mut written = Vec::new();

    let series = |f: &dyn Fn(&DiagnosticsRow) -> Option<f64>| -> Vec<(f64, f64)> { rows.iter().filter_map(|r| Some((r.t, f(r)?))).collect() };
    let ledger = vec![
        ("G", series(&|r| r.g)),
        ("∫D", series(&|r| r.int_d)),
        ("∫S", series(&|r| r.int_s)),
        ("G + ∫D − ∫S", series(&|r| Some(r.g? + r.int_d? - r.int_s?))),
    ];
    let p = plots.join("ledger.svg");
    fs::write(&p, svg_chart("Gaussian ledger", "t", &ledger, false)).map_err(|e| io_err(&p, e))?;
    written.push(p);

    if let Some(text) = read_listed(dir, &manifest, "blowup_report.json")? {
        let rep: BlowupReport = serde_json::from_str(&text).map_err(|e| ScenarioError::MissingArtifacts(format!("blowup_report.json: {e}")))?;
        let ladder = vec![
            ("ε_shrink", rep.ladder.iter().map(|e| (e.alpha.log10(), e.residual.max(1e-300).log10())).collect::<Vec<_>>()),
            ("∫S", rep.ladder.iter().filter(|e| e.source_integral > 0.0).map(|e| (e.alpha.log10(), e.source_integral.log10())).collect()),
        ];
        let p = plots.join("residuals.svg");
        fs::write(&p, svg_chart("Blow-up ladder (log10 against log10 α)", "log10 α", &ladder, true)).map_err(|e| io_err(&p, e))?;
        written.push(p);
    }
    Ok(written)
}

fn svg_chart(title: &str, xlabel: &str, series: &[(&str, Vec<(f64, f64)>)], markers: bool) -> String {
    const W: f64 = 720.0;
    const H: f64 = 420.0;
    const M: f64 = 60.0;
    const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let pts = series.iter().flat_map(|s| s.1.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        if x.is_finite() && y.is_finite() {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    if !(x1 > x0) {
        x1 = x0 + 1.0;
    }
    if !(y1 > y0) {
        y1 = y0 + 1.0;
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{title}</text>"#, W / 2.0);
    let _ = writeln!(s, r#"<rect x="{M}" y="{M}" width="{}" height="{}" fill="none" stroke="black"/>"#, W - 2.0 * M, H - 2.0 * M);
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.3e}</text>"#, sx(xv), H - M + 18.0, xv);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.3e}</text>"#, M - 6.0, sy(yv) + 4.0, yv);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, W / 2.0, H - 12.0);
    for (k, (name, data)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let path: String = data
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{path}"/>"#);
        if markers {
            for &(x, y) in data.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(x), sy(y));
            }
        }
        let ly = M + 16.0 + 16.0 * k as f64;
        let _ = writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, W - M - 150.0, W - M - 130.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{name}</text>"#, W - M - 124.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Reloads the trajectory of a stored run by re-running its archived scenario.
/// Runs are deterministic, so this reproduces the original snapshots exactly.
pub fn replay(dir: &Path) -> Result<(Scenario, FlowTrajectory), ScenarioError> {
    let manifest = read_manifest(dir)?;
    let text = read_listed(dir, &manifest, "scenario.json")?.ok_or_else(|| ScenarioError::MissingArtifacts("scenario.json".into()))?;
    let mut sc: Scenario = serde_json::from_str(&text).map_err(|e| ScenarioError::MissingArtifacts(format!("scenario.json: {e}")))?;
    let archived: Scenario = sc.clone();
    sc.base_dir = archived.base_dir;
    let traj = evolve(sc.initial_mesh()?, &sc.force, &sc.policy, sc.t0, sc.t_end).map_err(|e| numerical(&sc, e))?;
    Ok((sc, traj))
}

/// Blow-up analysis of a stored singular run with an optional custom α ladder.
pub fn blowup_from_run(dir: &Path, ladder: Option<&[f64]>) -> Result<BlowupReport, ScenarioError> {
    let manifest = read_manifest(dir)?;
    let (sc, traj) = replay(dir)?;
    let mut plan = sc.blowup.clone().unwrap_or_default();
    let (y, s) = match (plan.center, manifest.singular_point) {
        (Some((y, s)), _) | (None, Some((y, s))) => (Point::from(y), s),
        (None, None) => return Err(numerical(&sc, "the run is not singular and no blow-up centre is configured")),
    };
    let (report, slices) = match ladder {
        Some(alphas) => custom_ladder(&traj, &y, s, &mut plan, alphas),
        None => analyze_blowup(&traj, &y, s, &plan),
    }
    .map_err(|e| numerical(&sc, e))?;
    let mut files = manifest.files.clone();
    let mut out = ArtifactWriter { dir: dir.to_path_buf(), files: Vec::new() };
    for (j, sl) in slices.iter().enumerate() {
        out.write(&format!("slices/alpha_{j}.off"), to_off_string(&sl.mesh).as_bytes())?;
    }
    out.write("blowup_report.json", &json_bytes(&report)?)?;
    for f in out.files {
        if !files.contains(&f) {
            files.push(f);
        }
    }
    let manifest = Manifest { files, ..manifest };
    fs::write(dir.join("manifest.json"), json_bytes(&manifest)?).map_err(|e| io_err(dir, e))?;
    Ok(report)
}

fn custom_ladder(
    traj: &FlowTrajectory,
    y: &Point,
    s: f64,
    plan: &mut BlowupPlan,
    alphas: &[f64],
) -> Result<(BlowupReport, Vec<crate::blowup::RescaledSlice>), crate::blowup::BlowupError> {
    // a geometric ladder is the only shape the plan can express; anything else is analysed level by level
    let geometric = alphas.len() >= 2 && alphas.windows(2).all(|w| ((w[1] / w[0]) - 0.5).abs() < 1e-12);
    if geometric || alphas.len() == 1 {
        plan.alpha0 = alphas[0];
        plan.levels = alphas.len();
        return analyze_blowup(traj, y, s, plan);
    }
    let mut merged: Option<(BlowupReport, Vec<crate::blowup::RescaledSlice>)> = None;
    for &a in alphas {
        let single = BlowupPlan { alpha0: a, levels: 1, ..plan.clone() };
        let (rep, sl) = analyze_blowup(traj, y, s, &single)?;
        merged = Some(match merged {
            None => (rep, sl),
            Some((mut acc, mut acc_sl)) => {
                acc.ladder.extend(rep.ladder);
                acc_sl.extend(sl);
                (acc, acc_sl)
            }
        });
    }
    let (mut rep, slices) = merged.expect("ladder is non-empty");
    rep.self_similarity = slices.windows(2).map(|w| crate::blowup::self_similarity_error(&w[0], &w[1])).collect::<Result<_, _>>()?;
    let refs: Vec<&crate::blowup::RescaledSlice> = slices.iter().collect();
    rep.concentration = crate::blowup::detect_concentration(&refs, &plan.concentration)?;
    rep.verdicts.self_similar = rep.self_similarity.iter().all(|e| e.error < plan.self_similarity_tol);
    rep.verdicts.residuals_small = rep.ladder.iter().all(|e| e.residual < plan.residual_tol);
    rep.verdicts.ledger_holds = rep.ladder.iter().all(|e| e.ledger.is_none_or(|l| l.holds));
    rep.verdicts.count_ok = rep.concentration.count_ok;
    rep.verdicts.source_slope = if traj.force.is_zero() {
        None
    } else {
        let a: Vec<f64> = rep.ladder.iter().map(|e| e.alpha).collect();
        let v: Vec<f64> = rep.ladder.iter().map(|e| e.source_integral).collect();
        crate::blowup::log_log_slope(&a, &v)
    };
    rep.plan = plan.clone();
    Ok((rep, slices))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negative_dt_floor_names_the_field() {
        let text = "name = \"x\"\nt_end = 1.0\n[surface]\nkind = \"sphere\"\nradius = 2.0\nlevel = 2\n[policy]\ndt_min = -1e-7\n";
        match Scenario::parse(text, Path::new(".")) {
            Err(ScenarioError::ConfigInvalid { path, .. }) => assert_eq!(path, "policy.dt_min"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_and_mistyped_fields_are_located() {
        let text = "name = \"x\"\nt_end = 1.0\n[surface]\nkind = \"sphere\"\nradius = 2.0\nlevel = 2\n[policy]\nsafty = 0.1\n";
        match Scenario::parse(text, Path::new(".")) {
            Err(ScenarioError::ConfigInvalid { path, msg }) => assert!(path.starts_with("policy") && msg.contains("safty"), "{path}: {msg}"),
            other => panic!("{other:?}"),
        }
        let text = "name = \"x\"\nt_end = \"soon\"\n[surface]\nkind = \"sphere\"\nradius = 2.0\nlevel = 2\n";
        match Scenario::parse(text, Path::new(".")) {
            Err(ScenarioError::ConfigInvalid { path, .. }) => assert_eq!(path, "t_end"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn json_and_toml_agree() {
        let toml_text = "name = \"s\"\nt_end = 0.5\n[surface]\nkind = \"sphere\"\nradius = 2.0\nlevel = 2\n[force]\nkind = \"constant\"\nvector = [0.0, 0.0, -0.1]\n";
        let json_text = r#"{"name":"s","t_end":0.5,"surface":{"kind":"sphere","radius":2.0,"level":2},"force":{"kind":"constant","vector":[0.0,0.0,-0.1]}}"#;
        let a = Scenario::parse(toml_text, Path::new(".")).unwrap();
        let b = Scenario::parse(json_text, Path::new(".")).unwrap();
        assert_eq!(a, b);
        assert_eq!(ScenarioError::ConfigInvalid { path: String::new(), msg: String::new() }.exit_code(), 2);
    }
}
