//! Command-line front door: runs solves, scans, probes, and mesh builds from
//! a declarative JSON configuration, emitting CSV/JSON/OBJ artifacts.
//!
//! Exit codes: 0 success with all verdicts true, 1 verdict failure
//! (counterexample found), 2 configuration error, 3 solver failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use afgauss::analysis::{curvature_report, Verdict};
use afgauss::convexity::{
    ball_bounds_probe, concavity_check, default_concavity_tol, midpoint_domination_gap,
    segment_convexity_probe, segment_scan, ConvexityReport,
};
use afgauss::immersion::{export_mesh, integrate_frame, write_minkowski_csv};
use afgauss::io::atomic_write;
use afgauss::solver::{estimate_disc_error, solve, solve_auto, Method, SolveParams};
use afgauss::{DiskGrid, QuadDiff};

#[derive(Parser)]
#[command(name = "afgauss", about = "Minimal-surface laboratory for the hyperbolic disk")]
struct Cli {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the membership level λ ∈ (0, 1].
    #[arg(long)]
    lambda: Option<f64>,
    /// Override the sampling seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the grid as `n_rho,n_theta,rho_max`.
    #[arg(long)]
    grid: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Command {
    Solve,
    Scan,
    Bounds,
    Convexity,
    Mesh,
    Report,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct GridConfig {
    n_rho: usize,
    n_theta: usize,
    rho_max: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            n_rho: 96,
            n_theta: 192,
            rho_max: 8.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    command: Command,
    #[serde(default)]
    grid: GridConfig,
    #[serde(default)]
    phi: Option<QuadDiff>,
    #[serde(default)]
    phi1: Option<QuadDiff>,
    #[serde(default)]
    solver: SolverConfig,
    #[serde(default)]
    lambda: Option<f64>,
    #[serde(default)]
    seed: u64,
    output_dir: PathBuf,
    #[serde(default = "default_n_samples")]
    n_samples: usize,
    #[serde(default = "default_n_pairs")]
    n_pairs: usize,
    #[serde(default = "default_n_t")]
    n_t: usize,
    #[serde(default)]
    write_minkowski_csv: bool,
}

fn default_n_samples() -> usize {
    50
}
fn default_n_pairs() -> usize {
    25
}
fn default_n_t() -> usize {
    17
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct SolverConfig {
    tolerance: f64,
    max_iters: usize,
    /// Absent means automatic: Newton inside the guaranteed ball,
    /// continuation outside.
    method: Option<Method>,
    continuation_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let p = SolveParams::default();
        SolverConfig {
            tolerance: p.tolerance,
            max_iters: p.max_iters,
            method: None,
            continuation_steps: p.continuation_steps,
        }
    }
}

impl SolverConfig {
    fn params(&self) -> SolveParams {
        SolveParams {
            tolerance: self.tolerance,
            max_iters: self.max_iters,
            method: self.method.unwrap_or(Method::Newton),
            continuation_steps: self.continuation_steps,
        }
    }
}

enum RunError {
    Config(String),
    Verdict(String),
    Solver(String),
}

impl RunError {
    fn code(&self) -> ExitCode {
        match self {
            RunError::Config(_) => ExitCode::from(2),
            RunError::Verdict(_) => ExitCode::from(1),
            RunError::Solver(_) => ExitCode::from(3),
        }
    }
    fn message(&self) -> &str {
        match self {
            RunError::Config(m) | RunError::Verdict(m) | RunError::Solver(m) => m,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(threads) = std::env::var("AFGAUSS_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("afgauss: {}", e.message());
            e.code()
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, RunError> {
    let text = std::fs::read_to_string(&cli.config)
        .map_err(|e| RunError::Config(format!("cannot read {}: {e}", cli.config.display())))?;
    let mut config: RunConfig =
        serde_json::from_str(&text).map_err(|e| RunError::Config(format!("config parse: {e}")))?;
    if let Some(lambda) = cli.lambda {
        config.lambda = Some(lambda);
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(grid) = &cli.grid {
        let parts: Vec<&str> = grid.split(',').collect();
        if parts.len() != 3 {
            return Err(RunError::Config(format!(
                "--grid expects n_rho,n_theta,rho_max, got `{grid}`"
            )));
        }
        let parse = |s: &str, what: &str| -> Result<f64, RunError> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| RunError::Config(format!("--grid {what}: {e}")))
        };
        config.grid = GridConfig {
            n_rho: parse(parts[0], "n_rho")? as usize,
            n_theta: parse(parts[1], "n_theta")? as usize,
            rho_max: parse(parts[2], "rho_max")?,
        };
    }
    if let Some(lambda) = config.lambda {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(RunError::Config(format!("lambda = {lambda} must lie in (0, 1]")));
        }
    }
    if !(config.solver.tolerance > 0.0) {
        return Err(RunError::Config("solver.tolerance must be positive".into()));
    }
    if config.solver.max_iters == 0 || config.solver.continuation_steps == 0 {
        return Err(RunError::Config(
            "solver.max_iters and solver.continuation_steps must be at least 1".into(),
        ));
    }
    Ok(config)
}

fn config_hash(config: &RunConfig) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    format!("{:x}", hasher.finalize())
}

fn run(cli: &Cli) -> Result<(), RunError> {
    let config = load_config(cli)?;
    let hash = config_hash(&config);
    std::fs::create_dir_all(&config.output_dir)
        .map_err(|e| RunError::Config(format!("cannot create output dir: {e}")))?;
    let grid = DiskGrid::new(config.grid.n_rho, config.grid.n_theta, config.grid.rho_max)
        .map_err(|e| RunError::Config(e.to_string()))?;
    match config.command {
        Command::Solve => cmd_solve(&config, &grid, &hash),
        Command::Scan => cmd_scan(&config, &grid, &hash),
        Command::Bounds => cmd_bounds(&config, &grid, &hash),
        Command::Convexity => cmd_convexity(&config, &grid, &hash),
        Command::Mesh => cmd_mesh(&config, &grid, &hash),
        Command::Report => cmd_report(&config, &hash),
    }
}

fn require_phi(config: &RunConfig) -> Result<&QuadDiff, RunError> {
    config
        .phi
        .as_ref()
        .ok_or_else(|| RunError::Config("this command requires `phi`".into()))
}

fn lambda_or_default(config: &RunConfig) -> f64 {
    config.lambda.unwrap_or(1.0)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| RunError::Config(format!("serialize: {e}")))?;
    text.push('\n');
    atomic_write(path, text.as_bytes()).map_err(|e| RunError::Config(format!("write: {e}")))
}

fn solve_with(
    config: &RunConfig,
    grid: &Arc<DiskGrid>,
    phi: &QuadDiff,
) -> Result<afgauss::SolveResult, RunError> {
    let params = config.solver.params();
    let result = if config.solver.method.is_some() {
        solve(grid, phi, &params)
    } else {
        solve_auto(grid, phi, &params)
    };
    result.map_err(|e| RunError::Solver(e.to_string()))
}

#[derive(Serialize)]
struct SolveArtifact {
    residual_norm: f64,
    iterations: usize,
    shape_sup: f64,
    converged: bool,
    lambda: f64,
    membership: Verdict,
    k_bound: Option<f64>,
    config_hash: String,
}

fn cmd_solve(config: &RunConfig, grid: &Arc<DiskGrid>, hash: &str) -> Result<(), RunError> {
    let phi = require_phi(config)?;
    let result = solve_with(config, grid, phi)?;
    let lambda = lambda_or_default(config);
    let report = curvature_report(grid, &result, phi, lambda);

    let mut csv = Vec::new();
    result
        .u
        .write_csv(&mut csv)
        .map_err(|e| RunError::Config(e.to_string()))?;
    atomic_write(&config.output_dir.join("u.csv"), &csv)
        .map_err(|e| RunError::Config(e.to_string()))?;
    for (name, field) in [("kappa_ext", &report.kappa_ext), ("kappa_int", &report.kappa_int)] {
        let mut kappa_csv = Vec::new();
        field
            .write_csv(&mut kappa_csv)
            .map_err(|e| RunError::Config(e.to_string()))?;
        atomic_write(&config.output_dir.join(format!("{name}.csv")), &kappa_csv)
            .map_err(|e| RunError::Config(e.to_string()))?;
    }

    let summary = result.summary();
    write_json(
        &config.output_dir.join("solve.json"),
        &SolveArtifact {
            residual_norm: summary.residual_norm,
            iterations: summary.iterations,
            shape_sup: summary.shape_sup,
            converged: summary.converged,
            lambda,
            membership: report.membership,
            k_bound: report.k_bound,
            config_hash: hash.to_string(),
        },
    )
}

#[derive(Serialize)]
struct ScanArtifact {
    t: Vec<f64>,
    converged: Vec<bool>,
    shape_sup: Vec<f64>,
    max_abs_kappa: f64,
    eps_disc: f64,
    concavity: ConvexityReport,
    midpoint_domination_gap: f64,
    verdict: bool,
    config_hash: String,
}

fn cmd_scan(config: &RunConfig, grid: &Arc<DiskGrid>, hash: &str) -> Result<(), RunError> {
    let phi0 = require_phi(config)?;
    let phi1 = config
        .phi1
        .as_ref()
        .ok_or_else(|| RunError::Config("scan requires `phi1`".into()))?;
    let params = config.solver.params();
    let scan = segment_scan(grid, phi0, phi1, config.n_t, &params)
        .map_err(|e| RunError::Config(e.to_string()))?;
    if !scan.is_complete() {
        return Err(RunError::Solver(format!(
            "scan incomplete: {} of {} solves failed",
            scan.failures.len(),
            scan.n_t()
        )));
    }

    let dir = config.output_dir.join("scan");
    std::fs::create_dir_all(&dir).map_err(|e| RunError::Config(e.to_string()))?;
    for j in 0..scan.n_t() {
        for (name, field) in [
            ("u", &scan.results[j].as_ref().unwrap().u),
            ("kappa", scan.kappa[j].as_ref().unwrap()),
        ] {
            let mut csv = Vec::new();
            field
                .write_csv(&mut csv)
                .map_err(|e| RunError::Config(e.to_string()))?;
            atomic_write(&dir.join(format!("t{j:03}_{name}.csv")), &csv)
                .map_err(|e| RunError::Config(e.to_string()))?;
        }
    }

    let eps_disc = estimate_disc_error(grid, &scan.phi_at(scan.n_t() / 2), &params)
        .map_err(|e| RunError::Solver(e.to_string()))?;
    let tol = default_concavity_tol(&scan, eps_disc).map_err(|e| RunError::Solver(e.to_string()))?;
    let concavity = concavity_check(&scan, tol).map_err(|e| RunError::Solver(e.to_string()))?;
    let midpoint = midpoint_domination_gap(&scan).map_err(|e| RunError::Solver(e.to_string()))?;
    let verdict = concavity.verdict && midpoint <= tol;

    let max_abs_kappa = scan
        .kappa
        .iter()
        .flatten()
        .map(|k| k.sup_norm())
        .fold(0.0, f64::max);
    write_json(
        &config.output_dir.join("scan.json"),
        &ScanArtifact {
            t: scan.t.clone(),
            converged: scan.results.iter().map(|r| r.as_ref().is_some_and(|r| r.converged)).collect(),
            shape_sup: scan
                .results
                .iter()
                .map(|r| r.as_ref().map_or(f64::NAN, |r| r.shape_sup))
                .collect(),
            max_abs_kappa,
            eps_disc,
            concavity,
            midpoint_domination_gap: midpoint,
            verdict,
            config_hash: hash.to_string(),
        },
    )?;
    if !verdict {
        return Err(RunError::Verdict("concavity verdict failed".into()));
    }
    Ok(())
}

fn cmd_bounds(config: &RunConfig, grid: &Arc<DiskGrid>, hash: &str) -> Result<(), RunError> {
    let lambda = config
        .lambda
        .ok_or_else(|| RunError::Config("bounds requires `lambda`".into()))?;
    let params = config.solver.params();
    let summary = ball_bounds_probe(grid, lambda, config.n_samples, config.seed, &params);

    #[derive(Serialize)]
    struct BoundsArtifact<'a> {
        #[serde(flatten)]
        summary: &'a afgauss::convexity::BallBoundsSummary,
        config_hash: &'a str,
    }
    write_json(
        &config.output_dir.join("bounds.json"),
        &BoundsArtifact {
            summary: &summary,
            config_hash: hash,
        },
    )?;
    if !summary.verdict {
        return Err(RunError::Verdict(format!(
            "{} counterexamples to the ball bounds",
            summary.counterexamples.len()
        )));
    }
    Ok(())
}

fn cmd_convexity(config: &RunConfig, grid: &Arc<DiskGrid>, hash: &str) -> Result<(), RunError> {
    let lambda = config
        .lambda
        .ok_or_else(|| RunError::Config("convexity requires `lambda`".into()))?;
    let params = config.solver.params();
    let probe = segment_convexity_probe(grid, lambda, config.n_pairs, config.n_t, config.seed, &params)
        .map_err(|e| RunError::Config(e.to_string()))?;

    // when a segment is supplied, also produce its concavity report
    let concavity = match (&config.phi, &config.phi1) {
        (Some(phi0), Some(phi1)) => {
            let scan = segment_scan(grid, phi0, phi1, config.n_t, &params)
                .map_err(|e| RunError::Config(e.to_string()))?;
            if !scan.is_complete() {
                return Err(RunError::Solver("segment scan incomplete".into()));
            }
            let eps = estimate_disc_error(grid, &scan.phi_at(scan.n_t() / 2), &params)
                .map_err(|e| RunError::Solver(e.to_string()))?;
            let tol = default_concavity_tol(&scan, eps).map_err(|e| RunError::Solver(e.to_string()))?;
            Some(concavity_check(&scan, tol).map_err(|e| RunError::Solver(e.to_string()))?)
        }
        _ => None,
    };
    let verdict = probe.verdict && concavity.as_ref().map_or(true, |c| c.verdict);

    #[derive(Serialize)]
    struct ConvexityArtifact<'a> {
        probe: &'a afgauss::convexity::SegmentConvexitySummary,
        concavity: &'a Option<ConvexityReport>,
        verdict: bool,
        config_hash: &'a str,
    }
    write_json(
        &config.output_dir.join("convexity.json"),
        &ConvexityArtifact {
            probe: &probe,
            concavity: &concavity,
            verdict,
            config_hash: hash,
        },
    )?;
    if !verdict {
        return Err(RunError::Verdict("convexity verdict failed".into()));
    }
    Ok(())
}

fn cmd_mesh(config: &RunConfig, grid: &Arc<DiskGrid>, hash: &str) -> Result<(), RunError> {
    let phi = require_phi(config)?;
    let result = solve_with(config, grid, phi)?;
    let frame = integrate_frame(&result.u, phi).map_err(|e| RunError::Solver(e.to_string()))?;
    let obj_path = config.output_dir.join("surface.obj");
    let mesh = export_mesh(&frame, &obj_path).map_err(|e| RunError::Config(e.to_string()))?;
    // prepend provenance as an OBJ comment
    let body = std::fs::read_to_string(&obj_path).map_err(|e| RunError::Config(e.to_string()))?;
    let with_header = format!("# config_hash {hash}\n{body}");
    atomic_write(&obj_path, with_header.as_bytes()).map_err(|e| RunError::Config(e.to_string()))?;

    if config.write_minkowski_csv {
        let mut csv = Vec::new();
        write_minkowski_csv(&frame, &mut csv).map_err(|e| RunError::Config(e.to_string()))?;
        atomic_write(&config.output_dir.join("minkowski.csv"), &csv)
            .map_err(|e| RunError::Config(e.to_string()))?;
    }

    #[derive(Serialize)]
    struct MeshArtifact {
        vertices: usize,
        faces: usize,
        max_drift: f64,
        shape_sup: f64,
        config_hash: String,
    }
    write_json(
        &config.output_dir.join("mesh.json"),
        &MeshArtifact {
            vertices: mesh.vertices.len(),
            faces: mesh.faces.len(),
            max_drift: frame.max_drift,
            shape_sup: result.shape_sup,
            config_hash: hash.to_string(),
        },
    )
}

fn cmd_report(config: &RunConfig, hash: &str) -> Result<(), RunError> {
    #[derive(Serialize)]
    struct Report {
        verdicts: Vec<(String, bool)>,
        all_pass: bool,
        config_hash: String,
    }
    let mut verdicts = Vec::new();
    for name in ["solve", "scan", "bounds", "convexity"] {
        let path = config.output_dir.join(format!("{name}.json"));
        if let Ok(text) = std::fs::read_to_string(&path) {
            let value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| RunError::Config(format!("{name}.json: {e}")))?;
            let verdict = match name {
                "solve" => value.get("converged").and_then(|v| v.as_bool()),
                _ => value.get("verdict").and_then(|v| v.as_bool()),
            };
            if let Some(v) = verdict {
                verdicts.push((name.to_string(), v));
            }
        }
    }
    if verdicts.is_empty() {
        return Err(RunError::Config(
            "no prior artifacts found in output_dir".into(),
        ));
    }
    let all_pass = verdicts.iter().all(|(_, v)| *v);
    write_json(
        &config.output_dir.join("report.json"),
        &Report {
            verdicts,
            all_pass,
            config_hash: hash.to_string(),
        },
    )?;
    if !all_pass {
        return Err(RunError::Verdict("aggregated verdicts contain failures".into()));
    }
    Ok(())
}
