//! `fddlm`: batch front end for the fictitious-domain solver.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use fddlm::mesh::build_mesh;
use fddlm::norms::{error_norms, multiplier_integral, ErrorNorms};
use fddlm::problem::{discretize, solve_level, Case, ElementChoice, Example, ProblemConfig};
use fddlm::study::{convergence_study, infsup_sweep};
use fddlm::system::RESIDUAL_TOLERANCE;
use fddlm::vtk::{fragments_vtk, mesh_vtk};

#[derive(Parser)]
#[command(name = "fddlm", version, about = "Fictitious domain solver with a distributed Lagrange multiplier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; every field is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir` from the config).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Worker threads for assembly and parallel levels.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Solve refinement levels concurrently (needs memory for all of them).
    #[arg(long, global = true)]
    parallel_levels: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Solve one level and write VTK fields and a JSON summary.
    Solve,
    /// Refinement study with least-squares rates.
    Convergence,
    /// Inf-sup estimates on the immersed meshes.
    Infsup,
    /// Write the meshes and the intersection fragments of one level.
    MeshExport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    example: Example,
    case: Case,
    element: ElementChoice,
    levels: usize,
    ratio: f64,
    base_cells: usize,
    output_dir: PathBuf,
    /// Level for `solve` and `mesh-export`; the finest of `levels` if absent.
    level: Option<usize>,
    f: f64,
    f2: f64,
    residual_tolerance: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            example: Example::Disk,
            case: Case::Mild,
            element: ElementChoice::Elm1,
            levels: 4,
            ratio: 1.0,
            base_cells: 16,
            output_dir: PathBuf::from("output"),
            level: None,
            f: 1.0,
            f2: 1.0,
            residual_tolerance: RESIDUAL_TOLERANCE,
        }
    }
}

impl RunConfig {
    fn problem(&self) -> ProblemConfig {
        ProblemConfig {
            example: self.example,
            case: self.case,
            element: self.element,
            base_cells: self.base_cells,
            ratio: self.ratio,
            f: self.f,
            f2: self.f2,
            residual_tolerance: self.residual_tolerance,
        }
    }

    fn level(&self) -> usize {
        self.level.unwrap_or(self.levels.saturating_sub(1))
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.levels == 0 {
            return Err("levels must be at least 1".into());
        }
        self.problem().validate().map_err(|e| e.to_string())
    }

    fn json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

/// Failures before any work starts; reported with exit code 2.
struct UsageError(String);

fn load_config(cli: &Cli) -> std::result::Result<RunConfig, UsageError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str::<RunConfig>(&text).map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.output {
        cfg.output_dir = out.clone();
    }
    cfg.validate().map_err(UsageError)?;
    Ok(cfg)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn title(cmd: &str, cfg: &RunConfig) -> String {
    format!("fddlm {cmd} {}", cfg.json())
}

/// Level-0 resolutions derived from the config.
#[derive(Serialize)]
struct Resolution {
    background_cells_per_side: usize,
    /// Cells per side (rectangles, patches) or per block edge (L-shape, disk, flower).
    immersed_base_cells: usize,
    immersed_cells: usize,
    h: f64,
    h2: f64,
}

fn resolution(cfg: &RunConfig) -> Result<Resolution> {
    let problem = cfg.problem();
    let spec = problem.immersed_spec()?;
    let bg = build_mesh(&problem.background_spec(), 0)?;
    let t2 = build_mesh(&spec, 0)?;
    Ok(Resolution {
        background_cells_per_side: cfg.base_cells,
        immersed_base_cells: spec.base_cells,
        immersed_cells: t2.num_cells(),
        h: bg.h,
        h2: t2.h,
    })
}

/// Header for CSV files: the resolved config and the level-0 resolution.
fn csv_header(cmd: &str, cfg: &RunConfig) -> Result<String> {
    Ok(format!("{}\nresolution {}", title(cmd, cfg), serde_json::to_string(&resolution(cfg)?)?))
}

#[derive(Serialize)]
struct SolveSummary<'a> {
    config: &'a RunConfig,
    resolution: Resolution,
    level: usize,
    h: f64,
    h2: f64,
    dofs_u: usize,
    dofs_u2: usize,
    dofs_lambda: usize,
    fragments: usize,
    relative_residual: f64,
    constraint_residual: f64,
    lambda_integral: f64,
    /// Present when the exact solution is known.
    errors: Option<ErrorNorms>,
}

fn cmd_solve(cfg: &RunConfig) -> Result<()> {
    let level = cfg.level();
    let problem = cfg.problem();
    let s = solve_level(&problem, level)?;
    let (d, sol) = (&s.disc, &s.solution);
    let errors = problem.exact_solution().map(|ex| {
        ex.with_fields(|outer, inner| error_norms(&d.vh, &sol.u, &d.v2, &sol.u2, &d.coupling, outer, inner))
    });
    let summary = SolveSummary {
        config: cfg,
        resolution: resolution(cfg)?,
        level,
        h: d.h(),
        h2: d.h2(),
        dofs_u: d.vh.ndofs(),
        dofs_u2: d.v2.ndofs(),
        dofs_lambda: d.lambda.ndofs(),
        fragments: d.coupling.num_fragments(),
        relative_residual: sol.relative_residual,
        constraint_residual: sol.constraint_residual,
        lambda_integral: multiplier_integral(&sol.lambda, &d.immersed),
        errors,
    };
    let dir = &cfg.output_dir;
    let t = title("solve", cfg);
    write(dir, "solution_background.vtk", &mesh_vtk(&d.background, &t, &[("u", &sol.u)], &[])?)?;
    write(
        dir,
        "solution_immersed.vtk",
        &mesh_vtk(&d.immersed, &t, &[("u2", &sol.u2)], &[("lambda", &sol.lambda)])?,
    )?;
    write(dir, "fragments.vtk", &fragments_vtk(&d.coupling, &t))?;
    write(dir, "solve.json", &serde_json::to_string_pretty(&summary)?)?;
    println!(
        "level {level}: relative residual {:.3e}, constraint residual {:.3e}",
        sol.relative_residual, sol.constraint_residual
    );
    if let Some(e) = errors {
        println!("errors: L2(u) {:.6e}  H1(u) {:.6e}  L2(u2) {:.6e}  H1(u2) {:.6e}", e.l2_u, e.h1_u, e.l2_u2, e.h1_u2);
    }
    Ok(())
}

fn cmd_convergence(cfg: &RunConfig, parallel_levels: bool) -> Result<()> {
    anyhow::ensure!(cfg.levels >= 3, "a convergence study needs at least 3 levels, got {}", cfg.levels);
    let table = convergence_study(&cfg.problem(), cfg.levels, parallel_levels)?;
    write(&cfg.output_dir, "convergence.csv", &table.to_csv(&csv_header("convergence", cfg)?))?;
    let json = serde_json::json!({ "config": cfg, "resolution": resolution(cfg)?, "table": table });
    write(&cfg.output_dir, "convergence.json", &serde_json::to_string_pretty(&json)?)?;
    if let Some(r) = table.rates {
        println!("rates: L2(u) {:.3}  H1(u) {:.3}  L2(u2) {:.3}  H1(u2) {:.3}", r.l2_u, r.h1_u, r.l2_u2, r.h1_u2);
    }
    Ok(())
}

fn cmd_infsup(cfg: &RunConfig) -> Result<()> {
    let report = infsup_sweep(&cfg.problem(), cfg.levels)?;
    write(&cfg.output_dir, "infsup.csv", &report.to_csv(&csv_header("infsup", cfg)?))?;
    let json = serde_json::json!({
        "config": cfg,
        "resolution": resolution(cfg)?,
        "report": report,
        "decay_ratio": report.decay_ratio(),
        "verdict": report.verdict(),
    });
    write(&cfg.output_dir, "infsup.json", &serde_json::to_string_pretty(&json)?)?;
    print!("{}", report.log_table());
    println!("verdict: {:?}", report.verdict());
    Ok(())
}

fn cmd_mesh_export(cfg: &RunConfig) -> Result<()> {
    let problem = cfg.problem();
    let d = discretize(&problem, cfg.level())?;
    let t = title("mesh-export", cfg);
    let areas = d.immersed.cell_areas();
    write(&cfg.output_dir, "background.vtk", &mesh_vtk(&d.background, &t, &[], &[])?)?;
    write(&cfg.output_dir, "immersed.vtk", &mesh_vtk(&d.immersed, &t, &[], &[("area", &areas)])?)?;
    write(&cfg.output_dir, "fragments.vtk", &fragments_vtk(&d.coupling, &t))?;
    let res = resolution(cfg)?;
    write(
        &cfg.output_dir,
        "mesh.json",
        &serde_json::to_string_pretty(&serde_json::json!({
            "config": cfg,
            "resolution": res,
            "level": cfg.level(),
            "background_cells": d.background.num_cells(),
            "immersed_cells": d.immersed.num_cells(),
            "fragments": d.coupling.num_fragments(),
        }))?,
    )?;
    println!(
        "background {} cells, immersed {} cells, {} fragments",
        d.background.num_cells(),
        d.immersed.num_cells(),
        d.coupling.num_fragments()
    );
    Ok(())
}

fn run(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    match cli.command {
        Command::Solve => cmd_solve(cfg),
        Command::Convergence => cmd_convergence(cfg, cli.parallel_levels),
        Command::Infsup => cmd_infsup(cfg),
        Command::MeshExport => cmd_mesh_export(cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(UsageError(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
