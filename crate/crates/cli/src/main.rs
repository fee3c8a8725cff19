//! Config-driven experiment runner: integrate a gradient flow, run the named
//! residual checks against it, and write CSV reports. Exit code 0 means all
//! requested checks passed, 1 means at least one failed, 2 means the
//! configuration or the flow itself could not be set up.

mod checks;
mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use weylflow::flows::{flow_summary, integrate_eta_flow, integrate_theta_flow, Trajectory};
use weylflow::geodesics::pregeodesic_convergence_study;
use weylflow::potentials::builtin_models;
use weylflow::{Chart, Point};

use crate::checks::{run_check, CheckOutcome};
use crate::config::{Experiment, ALL_CHECKS};

/// Gradient flows of convex potentials, checked against their dually flat
/// and Weyl-geometric structure.
#[derive(Parser)]
#[command(name = "weylflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the configured flow and run its checks.
    Run { config: PathBuf },
    /// List the built-in potential models.
    ListModels,
    /// Step-halving convergence study of the pre-geodesic residual.
    Sweep { config: PathBuf },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config } => run(&config),
        Command::ListModels => list_models(),
        Command::Sweep { config } => sweep(&config),
    }
}

fn load_experiment(path: &Path) -> Result<Experiment, ExitCode> {
    let exp = config::load(path).map_err(|e| {
        eprintln!("{e}");
        ExitCode::from(2)
    })?;
    std::fs::create_dir_all(&exp.outdir).map_err(|e| {
        eprintln!("cannot create {}: {e}", exp.outdir.display());
        ExitCode::from(2)
    })?;
    Ok(exp)
}

fn run(path: &Path) -> ExitCode {
    let exp = match load_experiment(path) {
        Ok(e) => e,
        Err(code) => return code,
    };
    let p0 = Point::from_vector(exp.chart, exp.initial.clone());
    let traj = match exp.chart {
        Chart::Theta => integrate_theta_flow(&exp.model, &p0, &exp.flow),
        Chart::Eta => integrate_eta_flow(&exp.model, &p0, &exp.flow),
    };
    let traj = match traj {
        Ok(t) => t,
        Err(e) => {
            eprintln!("flow failed: {e}");
            return ExitCode::from(2);
        }
    };
    let summary_text = flow_summary(&exp.model, &traj);
    if let Err(e) = write_run_artifacts(&exp.outdir, &traj, &summary_text) {
        eprintln!("cannot write outputs under {}: {e}", exp.outdir.display());
        return ExitCode::from(2);
    }
    print!("{summary_text}");

    // Stencil-based checks need uniform spacing; a boundary exit leaves
    // bisected tail samples, so they run on the uniform head of the run.
    let prefix = traj.uniform_prefix();
    let mut outcomes: Vec<CheckOutcome> = Vec::new();
    for name in ALL_CHECKS {
        if exp.checks.contains(&name) {
            outcomes.push(run_check(
                name,
                &exp.model,
                &traj,
                &prefix,
                exp.seed,
                &exp.outdir,
            ));
        }
    }
    match write_summary(&exp.outdir, &outcomes) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("cannot write summary: {e}");
            return ExitCode::from(2);
        }
    }
    let mut failures = 0;
    for o in &outcomes {
        let status = if o.passed { "pass" } else { "fail" };
        println!(
            "{}: {status} (max residual {:e}, tolerance {:e})",
            o.name,
            o.max_residual,
            o.name.tolerance()
        );
        if !o.passed {
            failures += 1;
        }
    }
    if failures == 0 {
        println!("all {} checks passed", outcomes.len());
        ExitCode::SUCCESS
    } else {
        println!("{failures} of {} checks failed", outcomes.len());
        ExitCode::from(1)
    }
}

fn write_run_artifacts(outdir: &Path, traj: &Trajectory, summary: &str) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(outdir.join("trajectory.csv"))?);
    traj.write_csv(&mut w)?;
    w.flush()?;
    std::fs::write(outdir.join("run.txt"), summary)
}

fn write_summary(outdir: &Path, outcomes: &[CheckOutcome]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(outdir.join("summary.csv"))?);
    writeln!(w, "check,max_residual,tolerance,status")?;
    for o in outcomes {
        writeln!(
            w,
            "{},{},{},{}",
            o.name,
            o.max_residual,
            o.name.tolerance(),
            if o.passed { "pass" } else { "fail" }
        )?;
    }
    w.flush()
}

fn list_models() -> ExitCode {
    for m in builtin_models() {
        println!("{} (dim {}, {})", m.name(), m.dim(), m.domain_description());
    }
    ExitCode::SUCCESS
}

fn sweep(path: &Path) -> ExitCode {
    let exp = match load_experiment(path) {
        Ok(e) => e,
        Err(code) => return code,
    };
    if exp.chart != Chart::Theta {
        eprintln!("config error: the convergence sweep is defined for theta-chart runs");
        return ExitCode::from(2);
    }
    let p0 = Point::from_vector(Chart::Theta, exp.initial.clone());
    let study = match pregeodesic_convergence_study(
        &exp.model,
        &p0,
        &exp.flow,
        &exp.sweep_steps,
        (0.1, 0.9),
    ) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("sweep failed: {e}");
            return ExitCode::from(2);
        }
    };
    let write = || -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(exp.outdir.join("sweep.csv"))?);
        writeln!(w, "step,max_residual")?;
        for (s, r) in study.steps.iter().zip(&study.max_residuals) {
            writeln!(w, "{s},{r}")?;
        }
        w.flush()
    };
    if let Err(e) = write() {
        eprintln!("cannot write sweep.csv: {e}");
        return ExitCode::from(2);
    }
    for (s, r) in study.steps.iter().zip(&study.max_residuals) {
        println!("step {s}: max residual {r:e}");
    }
    println!("log-log slope: {:.3}", study.slope);
    if study.slope >= 1.9 {
        ExitCode::SUCCESS
    } else {
        println!("slope below the second-order threshold 1.9");
        ExitCode::from(1)
    }
}
