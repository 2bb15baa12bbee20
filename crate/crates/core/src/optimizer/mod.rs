//! Joint shape-and-trajectory estimation: a robustified nonlinear
//! least-squares energy over the shape code and all frame poses, minimized
//! with Levenberg-Marquardt inside a hard-EM alternation that re-associates
//! observations around the optimized trajectory.
//!
//! The energy averages per-frame data and motion terms over the track
//! (each frame's data term is itself the mean over its points), and adds
//! the shape prior once:
//! `E = (1/T) sum_t [ (1/N_t) sum_x rho(phi(q)/sigma_d) + ||L^{-1}(xi_t -
//! g(xi_{t-1}))||^2 + plane ] + sum_i (z_i/sigma_i)^2`.

mod lm;
mod problem;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::ingest::{self, InitState, Track};
use crate::motion::{classify, MotionNoise, MotionRegime, MotionThresholds, Pose};
use crate::shape_manifold::ShapeManifold;

pub use problem::{huber_rho, huber_weight, Problem};

/// Tuning knobs of the energy and its solver. Defaults reproduce the
/// reference setup; everything is plain data so configurations serialize
/// into fit reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyConfig {
    /// Huber threshold on whitened residuals.
    pub huber_delta: f64,
    pub noise: MotionNoise,
    pub thresholds: MotionThresholds,
    /// Depth-noise inflation for the first solve pass (>= 1); later passes
    /// trust the depths at face value.
    pub inflation: f64,
    pub max_iterations: usize,
    pub initial_damping: f64,
    /// Convergence: max-abs gradient entry.
    pub gradient_tol: f64,
    /// Convergence: relative energy drop of an accepted step.
    pub cost_tol: f64,
    /// Convergence: step norm relative to the state norm.
    pub step_tol: f64,
    /// Reassociate-and-resolve rounds after the initial pass.
    pub em_passes: usize,
    /// Observation ball radius used when reassociating.
    pub filter_radius: f64,
    /// Scale on the motion and plane terms; 0 removes them (diagnostics).
    pub motion_weight: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            huber_delta: 1.345,
            noise: MotionNoise::default(),
            thresholds: MotionThresholds::default(),
            inflation: 2.0,
            max_iterations: 100,
            initial_damping: 1e-4,
            gradient_tol: 1e-8,
            cost_tol: 1e-10,
            step_tol: 1e-10,
            em_passes: 1,
            filter_radius: ingest::DEFAULT_FILTER_RADIUS,
            motion_weight: 1.0,
        }
    }
}

impl EnergyConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.huber_delta > 0.0
            && self.inflation >= 1.0
            && self.max_iterations > 0
            && self.initial_damping > 0.0
            && self.gradient_tol > 0.0
            && self.cost_tol > 0.0
            && self.step_tol > 0.0
            && self.filter_radius > 0.0
            && self.motion_weight >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Track(
                "energy config: tolerances and damping must be positive, inflation >= 1"
                    .to_string(),
            ))
        }
    }
}

/// Energy split by term; parts sum to the reported total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub data: f64,
    pub motion: f64,
    pub shape: f64,
}

impl EnergyBreakdown {
    pub fn total(&self) -> f64 {
        self.data + self.motion + self.shape
    }
}

/// Everything the solver concluded about one track.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub track_id: String,
    /// Shape code in manifold coordinates.
    pub z: Vec<f64>,
    pub poses: Vec<Pose>,
    /// Regime classified from the optimized velocities.
    pub regime: MotionRegime,
    /// Exact energy at the solution, uninflated.
    pub energy: f64,
    pub breakdown: EnergyBreakdown,
    /// Total damped iterations across all passes.
    pub iterations: usize,
    pub converged: bool,
    /// Whitened data RMS per frame; None where observation-free.
    pub frame_rms: Vec<Option<f64>>,
    /// Accepted-step energies, one list per solve pass. Monotone
    /// non-increasing within each pass by construction.
    pub energy_history: Vec<Vec<f64>>,
    pub config: EnergyConfig,
}

impl FitResult {
    pub fn shape_code(&self) -> DVector<f64> {
        DVector::from_vec(self.z.clone())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("fit result serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(&name, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Schema {
            path: name,
            message: e.to_string(),
        })
    }
}

/// Track-level regime from per-frame velocities (lower medians, robust to
/// a few outlier frames).
pub fn classify_track(poses: &[Pose], thresholds: &MotionThresholds) -> MotionRegime {
    let v = ingest::lower_median(poses.iter().map(|p| p.v).collect());
    let omega = ingest::lower_median(poses.iter().map(|p| p.omega).collect());
    classify(v, omega, thresholds)
}

/// Evaluates the full uninflated energy at an arbitrary state, with motion
/// whiteners linearized at the given poses.
pub fn total_energy(
    track: &Track,
    manifold: &ShapeManifold,
    z: &DVector<f64>,
    poses: &[Pose],
    config: &EnergyConfig,
) -> Result<EnergyBreakdown> {
    let regime = classify_track(poses, &config.thresholds);
    let problem = Problem::new(track, manifold, config, regime, poses, 1.0)?;
    let state = problem.pack(z, poses);
    let (_, breakdown) = problem.energy(&state)?;
    Ok(breakdown)
}

/// Full pipeline from a detection-seeded initialization: associates the
/// raw clouds around the detections, then optimizes.
pub fn solve(track: &mut Track, manifold: &ShapeManifold, config: &EnergyConfig) -> Result<FitResult> {
    config.validate()?;
    ingest::filter_track(track, config.filter_radius);
    let init = ingest::initialize(track, manifold, &config.thresholds)?;
    solve_from(track, manifold, config, init)
}

/// Runs the solver from an explicit starting state: one inflated pass,
/// then `em_passes` rounds of reassociation and re-solving. The motion
/// whiteners are frozen at each pass's starting poses so that every pass
/// minimizes a fixed objective.
pub fn solve_from(
    track: &mut Track,
    manifold: &ShapeManifold,
    config: &EnergyConfig,
    init: InitState,
) -> Result<FitResult> {
    config.validate()?;
    let InitState {
        mut z,
        mut poses,
        mut regime,
    } = init;
    if poses.len() != track.len() {
        return Err(Error::Track(format!(
            "initialization carries {} poses for {} frames",
            poses.len(),
            track.len()
        )));
    }

    let mut energy_history = Vec::with_capacity(config.em_passes + 1);
    let mut iterations = 0;
    let mut converged = false;
    for pass in 0..=config.em_passes {
        if pass > 0 {
            ingest::reassociate(track, &poses, config.filter_radius);
            regime = classify_track(&poses, &config.thresholds);
        }
        let inflation = if pass == 0 { config.inflation } else { 1.0 };
        let problem = Problem::new(track, manifold, config, regime, &poses, inflation)?;
        let x0 = problem.pack(&z, &poses);
        let outcome = lm::minimize(&problem, x0)?;
        (z, poses) = problem.unpack(&outcome.state);
        energy_history.push(outcome.energy_history);
        iterations += outcome.iterations;
        converged = outcome.converged;
        tracing::debug!(
            pass,
            iterations = outcome.iterations,
            converged = outcome.converged,
            energy = energy_history.last().and_then(|h| h.last()).copied(),
            "solve pass finished"
        );
    }

    // report under the final linearization, uninflated
    let final_regime = classify_track(&poses, &config.thresholds);
    let problem = Problem::new(track, manifold, config, final_regime, &poses, 1.0)?;
    let state = problem.pack(&z, &poses);
    let (energy, breakdown) = problem.energy(&state)?;
    let frame_rms = problem.frame_rms(&state);

    Ok(FitResult {
        track_id: track.id.clone(),
        z: z.iter().copied().collect(),
        poses,
        regime: final_regime,
        energy,
        breakdown,
        iterations,
        converged,
        frame_rms,
        energy_history,
        config: *config,
    })
}
