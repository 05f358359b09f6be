use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use clap::{Parser, Subcommand};
use mcflab::scenario::{blowup_from_run, plot_run, run_scenario, verify_run_dir, verify_suite, Scenario, ScenarioError};
use mcflab::FlowStatus;

#[derive(Parser)]
#[command(name = "mcflab", version, about = "Mean curvature flow with forces: runs, diagnostics and blow-up analysis")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Evolve a scenario and write its artifact tree.
    Run { config: PathBuf },
    /// Re-check every stored inequality of a completed run.
    Verify {
        /// Scenario config or run directory.
        target: PathBuf,
    },
    /// Re-run the blow-up analysis of a singular run.
    Blowup {
        run_dir: PathBuf,
        /// Comma-separated α values, e.g. 0.4,0.2,0.1,0.05
        #[arg(long, value_delimiter = ',')]
        alpha_ladder: Option<Vec<f64>>,
    },
    /// Render SVG charts of a run into its plots/ directory.
    Plot { run_dir: PathBuf },
    /// Run several scenarios in parallel worker processes.
    Batch {
        configs: Vec<PathBuf>,
        #[arg(long, default_value_t = 2)]
        jobs: usize,
    },
}

fn fail(e: ScenarioError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn run(config: &Path) -> Result<(), ScenarioError> {
    let sc = Scenario::load(config)?;
    let out = run_scenario(&sc)?;
    match &out.trajectory.status {
        FlowStatus::SingularAt { t, location, reason } => println!("{}: singular at t = {t:.6} near {location:?} ({reason})", sc.name),
        status => println!("{}: {status:?}", sc.name),
    }
    println!("{} steps, {} snapshots -> {}", out.trajectory.steps, out.trajectory.snapshots.len(), out.dir.display());
    if let Some((y, s)) = out.manifest.singular_point {
        println!("singular point estimate y = {y:?}, s = {s:.6}");
    }
    for (c, two, one) in &out.diagnostics.ledger_checks {
        println!("ledger y = {:?}, s = {:.6}: worst margin {:.4e} ({}), one-sided {:.4e}", c.y, c.s, two.worst_margin, verdict(two.holds), one.worst_margin);
    }
    if let Some(b) = &out.blowup {
        for e in &b.ladder {
            println!("alpha {:<6} t = {:.4} {:?} residual {:.3e}", e.alpha, e.t_selected, e.flag, e.residual);
        }
        println!("concentration points: {}", b.concentration.points.len());
    }
    for n in &out.diagnostics.notes {
        println!("note: {n}");
    }
    Ok(())
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "holds"
    } else {
        "violated"
    }
}

fn verify(target: &Path) -> Result<bool, ScenarioError> {
    let report = if target.is_dir() { verify_run_dir(target)? } else { verify_suite(&Scenario::load(target)?)? };
    print!("{}", report.table());
    Ok(report.all_pass())
}

fn batch(configs: &[PathBuf], jobs: usize) -> Result<ExitCode, ScenarioError> {
    // validate everything up front so one bad file does not waste the others' runs
    let mut dirs = Vec::new();
    for c in configs {
        let sc = Scenario::load(c)?;
        let dir = sc.run_dir();
        if dirs.contains(&dir) {
            return Err(ScenarioError::ConfigInvalid { path: "name".into(), msg: format!("{} shares its output directory with another scenario", c.display()) });
        }
        dirs.push(dir);
    }
    let exe = std::env::current_exe().map_err(|e| ScenarioError::Io { path: "current_exe".into(), msg: e.to_string() })?;
    let mut worst = 0u8;
    for chunk in configs.chunks(jobs.max(1)) {
        let children: Vec<_> = chunk
            .iter()
            .map(|c| Command::new(&exe).arg("run").arg(c).spawn().map(|ch| (c, ch)))
            .collect::<Result<_, _>>()
            .map_err(|e| ScenarioError::Io { path: exe.display().to_string(), msg: e.to_string() })?;
        for (c, mut ch) in children {
            let code = ch.wait().ok().and_then(|s| s.code()).unwrap_or(3) as u8;
            println!("{}: exit {code}", c.display());
            worst = worst.max(code);
        }
    }
    Ok(ExitCode::from(worst))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Run { config } => run(config).map(|_| ExitCode::SUCCESS),
        Cmd::Verify { target } => verify(target).map(|ok| if ok { ExitCode::SUCCESS } else { ExitCode::from(4) }),
        Cmd::Blowup { run_dir, alpha_ladder } => blowup_from_run(run_dir, alpha_ladder.as_deref()).map(|rep| {
            for e in &rep.ladder {
                println!("alpha {:<6} t = {:.4} {:?} residual {:.3e} source {:.4e}", e.alpha, e.t_selected, e.flag, e.residual, e.source_integral);
            }
            for (k, s) in rep.self_similarity.iter().enumerate() {
                println!("self-similarity {k}->{}: {:.4e}", k + 1, s.error);
            }
            println!("concentration points: {}", rep.concentration.points.len());
            ExitCode::SUCCESS
        }),
        Cmd::Plot { run_dir } => plot_run(run_dir).map(|files| {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }),
        Cmd::Batch { configs, jobs } => batch(configs, *jobs),
    };
    result.unwrap_or_else(fail)
}
