//! Command-line pipeline: train shape manifolds from SDF grids, generate
//! synthetic tracks with ground truth, fit shape and trajectory to tracks,
//! and score fits. Exit codes: 0 success, 1 runtime failure, 2 bad input.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use shapetrack::cloud::save_ply;
use shapetrack::error::{Error, Result};
use shapetrack::eval::{
    pose_score, shape_score, surface_points_world, write_gnuplot_data, write_scores_csv,
    EvalReport,
};
use shapetrack::ingest::load_track;
use shapetrack::optimizer::{solve, EnergyConfig, FitResult};
use shapetrack::sdf_grid::SdfGrid;
use shapetrack::shape_manifold::ShapeManifold;
use shapetrack::synth::{
    self, default_training_manifold, write_scenario, GroundTruth, ScenarioSpec,
    DEFAULT_SHAPE_COMPONENTS,
};

#[derive(Parser)]
#[command(
    name = "shapetrack",
    version,
    about = "Joint shape and trajectory estimation for tracked rigid objects"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a low-dimensional shape manifold from truncated SDF grids
    BuildManifold(BuildManifoldArgs),
    /// Generate a synthetic track with ground-truth annotations
    Gen(GenArgs),
    /// Fit shape and trajectory to one track or a directory of tracks
    Fit(FitArgs),
    /// Score a fit against its ground truth
    Eval(EvalArgs),
}

#[derive(Args)]
struct BuildManifoldArgs {
    /// SDF grid files (.sdfg), or directories scanned for them
    #[arg(long, required = true, num_args = 1..)]
    shapes: Vec<PathBuf>,
    /// Output manifold file
    #[arg(long)]
    out: PathBuf,
    /// Number of shape components to keep
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    dim: u32,
    /// Required lattice as nx,ny,nz,voxel_m,truncation_m; inputs on any
    /// other lattice are rejected
    #[arg(long)]
    grid: Option<String>,
}

#[derive(Args)]
struct GenArgs {
    /// Name of a shipped preset
    #[arg(long, conflicts_with = "spec")]
    preset: Option<String>,
    /// Scenario description file (.toml or .json)
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory for track.json, gt.json and the clouds
    #[arg(long)]
    out: PathBuf,
    /// Overrides the scenario's random seed
    #[arg(long)]
    seed: Option<u64>,
    /// Manifold to draw the shape from; defaults to the built-in vehicle
    /// family, and the manifold used is always copied next to the track
    #[arg(long)]
    manifold: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// A track.json file, or a directory whose subdirectories hold tracks
    #[arg(long)]
    track: PathBuf,
    /// Trained shape manifold
    #[arg(long)]
    manifold: PathBuf,
    /// Output fit file (single track) or directory (directory mode)
    #[arg(long)]
    out: PathBuf,
    /// Solver configuration TOML; explicit flags override file values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Reassociation rounds after the first solve
    #[arg(long)]
    em_passes: Option<usize>,
    /// Iteration cap per solver pass
    #[arg(long)]
    max_iters: Option<usize>,
    /// Also write a per-iteration energy log next to each fit
    #[arg(long)]
    report: bool,
    /// Directory for per-frame fitted-surface point clouds (ASCII PLY); in
    /// directory mode each track gets a subdirectory
    #[arg(long)]
    export_surfaces: Option<PathBuf>,
    /// CSV of the fitted trajectory (frame, time, pose, velocities); a file
    /// for a single track, a directory in directory mode
    #[arg(long)]
    export_trajectory: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Fit result JSON
    #[arg(long)]
    fit: PathBuf,
    /// Ground-truth JSON written by `gen`
    #[arg(long)]
    gt: PathBuf,
    /// Manifold the fit was computed against
    #[arg(long)]
    manifold: PathBuf,
    /// Comma-separated surface thresholds in meters
    #[arg(long, default_value = "0.2")]
    tau: String,
    /// Output CSV; a .json and .dat report with the same stem are
    /// written alongside
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::BuildManifold(args) => run_build_manifold(args),
        Command::Gen(args) => run_gen(args),
        Command::Fit(args) => run_fit(args),
        Command::Eval(args) => run_eval(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input() { 2u8 } else { 1u8 })
        }
    }
}

/// Log level comes from the SAMP_LOG environment variable (same syntax as
/// RUST_LOG); defaults to warnings only.
fn init_logging() {
    use tracing_subscriber::EnvFilter;
    let filter =
        EnvFilter::try_from_env("SAMP_LOG").unwrap_or_else(|_| EnvFilter::new("warn"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

// ---------------------------------------------------------------------------
// build-manifold

fn collect_grid_paths(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(input)
                .map_err(|e| Error::io(input.display().to_string(), e))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "sdfg"))
                .collect();
            found.sort();
            paths.extend(found);
        } else {
            paths.push(input.clone());
        }
    }
    Ok(paths)
}

fn parse_grid_flag(text: &str) -> Result<(usize, usize, usize, f64, f64)> {
    let parts: Vec<&str> = text.split(',').collect();
    let bad = || Error::GridSpec(format!("--grid wants nx,ny,nz,voxel_m,truncation_m, got {text:?}"));
    if parts.len() != 5 {
        return Err(bad());
    }
    let nx = parts[0].trim().parse().map_err(|_| bad())?;
    let ny = parts[1].trim().parse().map_err(|_| bad())?;
    let nz = parts[2].trim().parse().map_err(|_| bad())?;
    let voxel = parts[3].trim().parse().map_err(|_| bad())?;
    let trunc = parts[4].trim().parse().map_err(|_| bad())?;
    Ok((nx, ny, nz, voxel, trunc))
}

fn run_build_manifold(args: BuildManifoldArgs) -> Result<()> {
    let paths = collect_grid_paths(&args.shapes)?;
    if paths.len() < 2 {
        return Err(Error::Manifold(format!(
            "need at least 2 training shapes, found {}",
            paths.len()
        )));
    }
    let required = args.grid.as_deref().map(parse_grid_flag).transpose()?;
    let mut grids = Vec::with_capacity(paths.len());
    for path in &paths {
        let grid = SdfGrid::load(path)?;
        if let Some((nx, ny, nz, voxel, trunc)) = required {
            let s = grid.spec();
            let matches = s.dims == (nx, ny, nz)
                && (s.voxel_size - voxel).abs() < 1e-9
                && (s.truncation - trunc).abs() < 1e-9;
            if !matches {
                return Err(Error::GridSpec(format!(
                    "{}: lattice {:?} voxel {} truncation {} does not match --grid",
                    path.display(),
                    s.dims,
                    s.voxel_size,
                    s.truncation
                )));
            }
        }
        if let Some(first) = grids.first() {
            let first: &SdfGrid = first;
            if !first.spec().compatible(grid.spec()) {
                return Err(Error::GridSpec(format!(
                    "{}: lattice differs from {}",
                    path.display(),
                    paths[0].display()
                )));
            }
        }
        grids.push(grid);
    }

    // full spectrum first so the printed shares cover every component
    let full = ShapeManifold::train(&grids, grids.len() - 1)?;
    let eigenvalues = full.eigenvalues();
    let total: f64 = eigenvalues.iter().sum();
    println!("components  eigenvalue  cumulative variance");
    let mut acc = 0.0;
    for (i, lambda) in eigenvalues.iter().enumerate() {
        acc += lambda;
        println!("{:>10}  {:>10.4}  {:>18.2}%", i + 1, lambda, 100.0 * acc / total);
    }

    let manifold = ShapeManifold::train(&grids, args.dim as usize)?;
    manifold.save(&args.out)?;
    println!(
        "trained {} components from {} shapes -> {}",
        args.dim,
        grids.len(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// gen

fn load_scenario_spec(path: &Path) -> Result<ScenarioSpec> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(&name, e))?;
    if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| Error::Schema {
            path: name,
            message: e.to_string(),
        })
    } else {
        serde_json::from_str(&text).map_err(|e| Error::Schema {
            path: name,
            message: e.to_string(),
        })
    }
}

fn run_gen(args: GenArgs) -> Result<()> {
    let mut spec = match (&args.preset, &args.spec) {
        (Some(name), None) => synth::preset(name).ok_or_else(|| {
            Error::Scenario(format!(
                "unknown preset {name:?}; available: {}",
                synth::preset_names().join(", ")
            ))
        })?,
        (None, Some(path)) => load_scenario_spec(path)?,
        _ => {
            return Err(Error::Scenario(
                "pass exactly one of --preset or --spec".to_string(),
            ))
        }
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let manifold = match &args.manifold {
        Some(path) => ShapeManifold::load(path)?,
        None => default_training_manifold(DEFAULT_SHAPE_COMPONENTS)?,
    };
    let paths = write_scenario(&args.out, &spec, &manifold)?;
    let manifold_path = args.out.join("manifold.sman");
    manifold.save(&manifold_path)?;
    println!(
        "generated {:?} ({} frames) -> {}, ground truth {}, manifold {}",
        spec.name,
        spec.frames,
        paths.track.display(),
        paths.ground_truth.display(),
        manifold_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// fit

#[derive(Serialize)]
struct EnergyLog<'a> {
    track_id: &'a str,
    /// One entry per solver pass: energy at the start, then after each
    /// accepted step.
    passes: &'a [Vec<f64>],
    iterations: usize,
    converged: bool,
}

fn build_config(args: &FitArgs) -> Result<EnergyConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let name = path.display().to_string();
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(&name, e))?;
            toml::from_str(&text).map_err(|e| Error::Schema {
                path: name,
                message: e.to_string(),
            })?
        }
        None => EnergyConfig::default(),
    };
    if let Some(n) = args.em_passes {
        config.em_passes = n;
    }
    if let Some(n) = args.max_iters {
        config.max_iterations = n;
    }
    config.validate()?;
    Ok(config)
}

/// Per-track export destinations, already resolved for directory mode.
struct ExportPaths {
    surfaces: Option<PathBuf>,
    trajectory: Option<PathBuf>,
}

fn fit_one(
    track_path: &Path,
    manifold: &ShapeManifold,
    config: &EnergyConfig,
    out: &Path,
    report: bool,
    exports: &ExportPaths,
) -> Result<FitResult> {
    let mut track = load_track(track_path)?;
    let fit = solve(&mut track, manifold, config)?;
    fit.save(out)?;
    if report {
        let log = EnergyLog {
            track_id: &fit.track_id,
            passes: &fit.energy_history,
            iterations: fit.iterations,
            converged: fit.converged,
        };
        let path = out.with_extension("report.json");
        let text = serde_json::to_string_pretty(&log).expect("log serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    if let Some(dir) = &exports.surfaces {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let z = fit.shape_code();
        for (t, pose) in fit.poses.iter().enumerate() {
            let points = surface_points_world(manifold, &z, pose, 2000, t as u64);
            save_ply(dir.join(format!("frame_{t:03}.ply")), &points)?;
        }
    }
    if let Some(path) = &exports.trajectory {
        let mut text = String::from("frame,t_s,t_x,t_y,t_z,yaw_rad,v_mps,omega_radps\n");
        for (frame, pose) in track.frames.iter().zip(&fit.poses) {
            text.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                frame.index, frame.t_s, pose.t.x, pose.t.y, pose.t.z, pose.theta, pose.v,
                pose.omega
            ));
        }
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    println!(
        "fit {:?}: energy {:.6e}, {} iterations, converged {} -> {}",
        fit.track_id,
        fit.energy,
        fit.iterations,
        fit.converged,
        out.display()
    );
    Ok(fit)
}

fn run_fit(args: FitArgs) -> Result<()> {
    let config = build_config(&args)?;
    let manifold = ShapeManifold::load(&args.manifold)?;

    if args.track.is_dir() {
        // directory mode: every immediate subdirectory with a track.json,
        // plus a track.json directly inside
        let mut jobs: Vec<(String, PathBuf)> = Vec::new();
        let direct = args.track.join("track.json");
        if direct.is_file() {
            let stem = args
                .track
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "track".to_string());
            jobs.push((stem, direct));
        }
        let entries = std::fs::read_dir(&args.track)
            .map_err(|e| Error::io(args.track.display().to_string(), e))?;
        for entry in entries.filter_map(|e| e.ok()) {
            let candidate = entry.path().join("track.json");
            if candidate.is_file() {
                jobs.push((entry.file_name().to_string_lossy().into_owned(), candidate));
            }
        }
        jobs.sort();
        if jobs.is_empty() {
            return Err(Error::Track(format!(
                "no track.json found under {}",
                args.track.display()
            )));
        }
        std::fs::create_dir_all(&args.out)
            .map_err(|e| Error::io(args.out.display().to_string(), e))?;
        if let Some(dir) = &args.export_trajectory {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        }
        jobs.par_iter().try_for_each(|(name, path)| {
            let out = args.out.join(format!("{name}.fit.json"));
            let exports = ExportPaths {
                surfaces: args.export_surfaces.as_ref().map(|d| d.join(name)),
                trajectory: args
                    .export_trajectory
                    .as_ref()
                    .map(|d| d.join(format!("{name}.trajectory.csv"))),
            };
            fit_one(path, &manifold, &config, &out, args.report, &exports).map(|_| ())
        })
    } else {
        let exports = ExportPaths {
            surfaces: args.export_surfaces.clone(),
            trajectory: args.export_trajectory.clone(),
        };
        fit_one(&args.track, &manifold, &config, &args.out, args.report, &exports).map(|_| ())
    }
}

// ---------------------------------------------------------------------------
// eval

fn parse_taus(text: &str) -> Result<Vec<f64>> {
    let taus: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Eval(format!("--tau wants comma-separated meters, got {text:?}")))?;
    if taus.is_empty() || taus.iter().any(|t| *t <= 0.0 || !t.is_finite()) {
        return Err(Error::Eval(format!("thresholds must be positive: {text:?}")));
    }
    Ok(taus)
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let taus = parse_taus(&args.tau)?;
    let fit = FitResult::load(&args.fit)?;
    let gt = GroundTruth::load(&args.gt)?;
    let manifold = ShapeManifold::load(&args.manifold)?;

    let pose = pose_score(&fit.poses, &gt.poses)?;

    // full decoded surfaces, posed per frame into the world, so the score
    // reflects shape and trajectory together
    let frames = fit.poses.len();
    let rays_per_frame = (20_000 / frames.max(1)).clamp(500, 4000);
    let z_fit = fit.shape_code();
    let z_gt = gt.shape_code();
    let mut recon = Vec::new();
    let mut truth = Vec::new();
    for t in 0..frames {
        // distinct seed per frame so repeated poses (a standing object) still
        // accumulate coverage, and disjoint parity so a perfect fit is never
        // matched against its own sample
        recon.extend(surface_points_world(
            &manifold,
            &z_fit,
            &fit.poses[t],
            rays_per_frame,
            2 * t as u64 + 1,
        ));
        truth.extend(surface_points_world(
            &manifold,
            &z_gt,
            &gt.poses[t],
            rays_per_frame,
            2 * t as u64 + 2,
        ));
    }
    let shape: Vec<_> = taus.iter().map(|&tau| shape_score(&truth, &recon, tau)).collect();

    let report = EvalReport {
        track_id: fit.track_id.clone(),
        shape,
        pose,
    };
    write_scores_csv(&args.out, std::slice::from_ref(&report))?;
    report.save(args.out.with_extension("json"))?;
    write_gnuplot_data(args.out.with_extension("dat"), std::slice::from_ref(&report))?;
    for s in &report.shape {
        println!(
            "eval {:?} tau {:.2}: completeness {:.2}%, accuracy {:.2}%, F1 {:.2}%",
            report.track_id, s.tau, s.completeness, s.accuracy, s.f1
        );
    }
    println!(
        "pose: median translation {:.4} m, median rotation {:.4} deg -> {}",
        shapetrack::eval::median(&report.pose.translation_errors_m),
        shapetrack::eval::median(&report.pose.rotation_errors_rad).to_degrees(),
        args.out.display()
    );
    Ok(())
}
