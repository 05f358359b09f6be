use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mcflab::mesh::io::read_mesh;

fn mcflab(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcflab")).args(args).env("MCFLAB_OUTPUT_ROOT", root).output().unwrap()
}

fn bundled(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name).display().to_string()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn csv_column(path: &Path, name: &str) -> Vec<(f64, Option<f64>)> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let h = r.headers().unwrap().clone();
    let (ti, ci) = (h.iter().position(|x| x == "t").unwrap(), h.iter().position(|x| x == name).unwrap());
    r.records().map(|rec| {
        let rec = rec.unwrap();
        (rec[ti].parse().unwrap(), rec[ci].parse().ok())
    }).collect()
}

const SMALL: &str = r#"
name = "small"
t_end = 2.0
seed = 3

[surface]
kind = "sphere"
radius = 2.0
level = 2

[force]
kind = "constant"
vector = [0.0, 0.0, -0.1]

[diagnostics]
min_tau = 0.01
entropy_every = 40
area_ratio_every = 0

[[diagnostics.local_area]]
x0 = [0.0, 0.0, 1.8]
r = 0.5
t0 = 0.5

[blowup]
levels = 2
"#;

#[test]
fn negative_dt_floor_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, SMALL.replace("[diagnostics]", "[policy]\ndt_min = -1e-7\n\n[diagnostics]")).unwrap();
    let out = mcflab(dir.path(), &["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", text(&out));
    assert!(text(&out).contains("policy.dt_min"), "{}", text(&out));
    assert!(!dir.path().join("small").exists());
}

#[test]
fn run_verify_plot_blowup_and_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    fs::write(&cfg, SMALL).unwrap();
    let out = mcflab(dir.path(), &["run", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out));
    let run = dir.path().join("small");
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(run.join("manifest.json")).unwrap()).unwrap();
    for f in manifest["files"].as_array().unwrap() {
        assert!(run.join(f.as_str().unwrap()).is_file(), "{f}");
    }
    for f in ["diagnostics.csv", "diagnostics.json", "blowup_report.json", "scenario.json"] {
        assert!(manifest["files"].as_array().unwrap().iter().any(|x| x == f), "{f} not listed");
    }

    let out = mcflab(dir.path(), &["verify", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out));
    let table = text(&out);
    assert!(table.contains("monotonicity[0]") && table.contains("local area[0]") && table.contains("concentration count"), "{table}");
    assert!(!table.contains("FAIL"), "{table}");

    let out = mcflab(dir.path(), &["plot", run.to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out));
    for f in ["plots/ledger.svg", "plots/residuals.svg"] {
        assert!(fs::read_to_string(run.join(f)).unwrap().starts_with("<svg"), "{f}");
    }

    let out = mcflab(dir.path(), &["blowup", run.to_str().unwrap(), "--alpha-ladder", "0.4,0.3"]);
    assert!(out.status.success(), "{}", text(&out));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(run.join("blowup_report.json")).unwrap()).unwrap();
    let alphas: Vec<f64> = report["ladder"].as_array().unwrap().iter().map(|e| e["alpha"].as_f64().unwrap()).collect();
    assert_eq!(alphas, [0.4, 0.3]);

    // drop the last rows of the CSV
    let csv_path = run.join("diagnostics.csv");
    let body = fs::read_to_string(&csv_path).unwrap();
    let keep: Vec<&str> = body.lines().collect();
    fs::write(&csv_path, keep[..keep.len() / 2].join("\n")).unwrap();
    let out = mcflab(dir.path(), &["verify", run.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4), "{}", text(&out));
    assert!(text(&out).contains("missing or incomplete"), "{}", text(&out));

    fs::remove_file(run.join("diagnostics.json")).unwrap();
    assert_eq!(mcflab(dir.path(), &["verify", run.to_str().unwrap()]).status.code(), Some(4));
}

#[test]
fn bundled_sphere_shrink_keeps_gaussian_area_constant() {
    let dir = tempfile::tempdir().unwrap();
    let out = mcflab(dir.path(), &["run", &bundled("sphere_shrink.cfg")]);
    assert!(out.status.success(), "{}", text(&out));
    // the first kernel centre is (0, 1)
    let g: Vec<f64> = csv_column(&dir.path().join("sphere_shrink/diagnostics.csv"), "G").into_iter().filter_map(|r| r.1).collect();
    assert!(g.len() > 100);
    let (lo, hi) = g.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    assert!((hi - lo) / lo < 0.01, "{lo} {hi}");
    let out = mcflab(dir.path(), &["verify", &bundled("sphere_shrink.cfg")]);
    assert!(out.status.success(), "{}", text(&out));
}

#[test]
fn bundled_rescaled_sphere_is_stationary() {
    let dir = tempfile::tempdir().unwrap();
    let out = mcflab(dir.path(), &["run", &bundled("rescaled_sphere.cfg")]);
    assert!(out.status.success(), "{}", text(&out));
    let run = dir.path().join("rescaled_sphere");
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(run.join("manifest.json")).unwrap()).unwrap();
    let snaps = manifest["snapshots"].as_array().unwrap();
    assert!(snaps.last().unwrap()["t"].as_f64().unwrap() >= 1.0 - 1e-12);
    for s in snaps.iter().filter(|s| !s["file"].is_null()) {
        let m = read_mesh(&run.join(s["file"].as_str().unwrap())).unwrap();
        let r = m.positions().iter().map(|p| p.norm()).sum::<f64>() / m.n_vertices() as f64;
        assert!((r / 2.0 - 1.0).abs() < 0.01, "t = {}: r = {r}", s["t"]);
    }
    let out = mcflab(dir.path(), &["verify", run.to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out));
}

#[test]
fn gravity_run_verifies_with_source_terms() {
    let dir = tempfile::tempdir().unwrap();
    let out = mcflab(dir.path(), &["run", &bundled("gravity_sphere.cfg")]);
    assert!(out.status.success(), "{}", text(&out));
    let run = dir.path().join("gravity_sphere");
    let int_s: Vec<f64> = csv_column(&run.join("diagnostics.csv"), "int_S").into_iter().filter_map(|r| r.1).collect();
    assert!(*int_s.last().unwrap() > 0.0);
    let out = mcflab(dir.path(), &["verify", run.to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out));
    let table = text(&out);
    assert!(table.contains("source scaling") && table.contains("entropy growth"), "{table}");
}

#[test]
fn batch_runs_isolated_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfgs = Vec::new();
    for name in ["b1", "b2"] {
        let p = dir.path().join(format!("{name}.cfg"));
        fs::write(&p, SMALL.replace("name = \"small\"", &format!("name = \"{name}\"")).replace("[blowup]\nlevels = 2\n", "")).unwrap();
        cfgs.push(p.display().to_string());
    }
    let mut args = vec!["batch", "--jobs", "2"];
    args.extend(cfgs.iter().map(String::as_str));
    let out = mcflab(dir.path(), &args);
    assert!(out.status.success(), "{}", text(&out));
    let a = fs::read(dir.path().join("b1/diagnostics.csv")).unwrap();
    let b = fs::read(dir.path().join("b2/diagnostics.csv")).unwrap();
    assert_eq!(a, b);
}
