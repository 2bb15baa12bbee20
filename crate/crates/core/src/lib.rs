//! Joint 3D shape and trajectory estimation for rigid tracked vehicles from
//! noisy depth observations.
//!
//! The pipeline: learn a low-dimensional shape space over truncated signed
//! distance grids ([`shape_manifold`]), load a track of per-frame depth
//! observations with detection seeds ([`ingest`]), and jointly optimize a
//! shape code plus per-frame poses under kinematic motion priors
//! ([`optimizer`]). [`synth`] generates ground-truth scenarios for testing
//! and [`eval`] scores reconstructions and trajectories.

pub mod cloud;
pub mod error;
pub mod eval;
pub mod geom;
pub mod ingest;
pub mod motion;
pub mod optimizer;
pub mod sdf_grid;
pub mod shape_manifold;
pub mod synth;

pub use error::{Error, Result};
pub use eval::{EvalReport, PoseScore, ShapeScore};
pub use geom::PinholeCamera;
pub use ingest::{Calibration, Detection, Frame, InitState, Track};
pub use motion::{GroundPlane, MotionNoise, MotionRegime, MotionThresholds, Pose};
pub use optimizer::{EnergyBreakdown, EnergyConfig, FitResult};
pub use sdf_grid::{GridSpec, SdfField, SdfGrid};
pub use shape_manifold::ShapeManifold;
pub use synth::{GroundTruth, Scenario, ScenarioSpec};
