//! Synthetic ground-truth scenes: a shape drawn from the manifold, moved
//! along an exact kinematic trajectory, observed by a virtual stereo depth
//! camera with disparity-domain noise, and written out as a track file plus
//! ground-truth annotations.
//!
//! The world frame coincides with the (static) camera frame: y-down, the
//! camera at the origin looking along +z, the road plane at y = ground_y.

use std::path::{Path, PathBuf};

use nalgebra::{DVector, Point3, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::cloud::{save_cloud, PointCloud};
use crate::error::{Error, Result};
use crate::geom::{heading_direction, PinholeCamera};
use crate::ingest::{Calibration, DetectionFile, FrameFile, TrackFile, DEFAULT_FILTER_RADIUS};
use crate::motion::{predict, MotionRegime, Pose};
use crate::sdf_grid::{render_depth, GridSpec, RenderOptions, SdfField, SdfGrid};
use crate::shape_manifold::ShapeManifold;

/// Default road elevation below the camera (y-down).
pub const DEFAULT_GROUND_Y: f64 = 1.6;

/// Number of parametric vehicles in the built-in training family.
pub const TRAINING_FAMILY_SIZE: usize = 12;

/// Default number of manifold components for the built-in family.
pub const DEFAULT_SHAPE_COMPONENTS: usize = 5;

/// Stereo camera constants of the virtual rig.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraSpec {
    pub f_px: f64,
    pub b_m: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self {
            f_px: 721.0,
            b_m: 0.54,
            cx: 621.0,
            cy: 187.5,
            width: 1242,
            height: 375,
        }
    }
}

impl CameraSpec {
    /// Pinhole at full resolution.
    pub fn camera(&self) -> PinholeCamera {
        PinholeCamera {
            f: self.f_px,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
        }
    }

    /// Same field of view sampled every `stride`-th pixel: a cheaper but
    /// equally valid set of sight lines through the scene.
    pub fn sampling_camera(&self, stride: usize) -> PinholeCamera {
        let k = stride.max(1) as f64;
        PinholeCamera {
            f: self.f_px / k,
            cx: self.cx / k,
            cy: self.cy / k,
            width: self.width / stride.max(1),
            height: self.height / stride.max(1),
        }
    }
}

/// How the scenario picks its ground-truth shape code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeChoice {
    /// Explicit manifold coordinates.
    Code { values: Vec<f64> },
    /// Per-component uniform draw within +- k standard deviations.
    Random { k_sigma: f64 },
}

/// Complete description of one synthetic scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub name: String,
    pub shape: ShapeChoice,
    pub regime: MotionRegime,
    /// Ground-truth forward speed (m/s).
    pub v: f64,
    /// Ground-truth yaw rate (rad/s).
    pub omega: f64,
    pub frames: usize,
    pub dt: f64,
    pub start_x: f64,
    pub start_z: f64,
    pub start_theta: f64,
    pub camera: CameraSpec,
    /// Disparity noise in pixels; 0 renders exact surface points.
    pub sigma_disp_px: f64,
    /// Detection-seed translation noise (m, isotropic).
    pub detection_sigma_t: f64,
    /// Detection-seed yaw noise (rad).
    pub detection_sigma_yaw: f64,
    /// Systematic detection offset along the heading (m).
    pub detection_bias_forward: f64,
    /// Ground clutter density (points per square meter of road).
    pub clutter_density: f64,
    /// Radius of the clutter disc around the object (m).
    pub clutter_radius: f64,
    /// Frames whose object observations are dropped entirely.
    pub occluded_frames: Vec<usize>,
    pub ground_y: f64,
    pub max_points_per_frame: usize,
    /// Pixel stride of the depth sampling (1 = every pixel).
    pub render_stride: usize,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            name: "unnamed".into(),
            shape: ShapeChoice::Random { k_sigma: 1.0 },
            regime: MotionRegime::Straight,
            v: 5.0,
            omega: 0.0,
            frames: 20,
            dt: 0.1,
            start_x: 0.0,
            start_z: 6.0,
            start_theta: std::f64::consts::PI,
            camera: CameraSpec::default(),
            sigma_disp_px: 0.0,
            detection_sigma_t: 0.05,
            detection_sigma_yaw: 0.01,
            detection_bias_forward: 0.0,
            clutter_density: 0.0,
            clutter_radius: 10.0,
            occluded_frames: Vec::new(),
            ground_y: DEFAULT_GROUND_Y,
            max_points_per_frame: 1200,
            render_stride: 2,
            seed: 7,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let c = &self.camera;
        let ok = self.frames >= 2
            && self.dt > 0.0
            && c.f_px > 0.0
            && c.b_m > 0.0
            && c.width > 0
            && c.height > 0
            && self.sigma_disp_px >= 0.0
            && self.detection_sigma_t >= 0.0
            && self.detection_sigma_yaw >= 0.0
            && self.clutter_density >= 0.0
            && self.max_points_per_frame >= 8
            && self.render_stride >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Scenario(format!(
                "invalid scenario {:?}: need >= 2 frames, positive camera constants and dt",
                self.name
            )))
        }
    }

    /// Ground-truth trajectory by exact repeated prediction.
    pub fn trajectory(&self) -> Vec<Pose> {
        let mut poses = Vec::with_capacity(self.frames);
        let mut pose = Pose::new(
            Vector3::new(self.start_x, self.ground_y, self.start_z),
            self.start_theta,
            self.v,
            self.omega,
        );
        poses.push(pose);
        for _ in 1..self.frames {
            pose = predict(&pose, self.dt, self.regime);
            poses.push(pose);
        }
        poses
    }
}

/// Everything the generator knows and the estimator is not told.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: ScenarioSpec,
    pub z: Vec<f64>,
    pub poses: Vec<Pose>,
    pub regime: MotionRegime,
    pub ground_y: f64,
    /// Per frame, per cloud point: true when the point was rendered off the
    /// object surface (false for clutter).
    pub masks: Vec<Vec<bool>>,
}

impl GroundTruth {
    pub fn shape_code(&self) -> DVector<f64> {
        DVector::from_vec(self.z.clone())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("ground truth serializes");
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

/// One generated scene, in memory.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub track: TrackFile,
    pub clouds: Vec<PointCloud>,
    pub gt: GroundTruth,
}

// ---------------------------------------------------------------------------
// built-in training family

#[derive(Debug, Clone, Copy)]
struct CarParams {
    width: f64,
    height: f64,
    body_height: f64,
    length: f64,
    cabin_length: f64,
    /// Cabin center offset along +z (toward the rear).
    cabin_z: f64,
    rounding: f64,
}

/// Hand-picked spread of sedan/wagon/SUV-ish proportions.
const CAR_TABLE: [CarParams; TRAINING_FAMILY_SIZE] = [
    CarParams { width: 1.78, height: 1.45, body_height: 0.75, length: 4.45, cabin_length: 2.3, cabin_z: 0.18, rounding: 0.08 },
    CarParams { width: 1.70, height: 1.40, body_height: 0.72, length: 4.10, cabin_length: 2.1, cabin_z: 0.10, rounding: 0.06 },
    CarParams { width: 1.88, height: 1.60, body_height: 0.85, length: 4.80, cabin_length: 2.6, cabin_z: 0.25, rounding: 0.10 },
    CarParams { width: 1.62, height: 1.38, body_height: 0.70, length: 3.80, cabin_length: 1.9, cabin_z: 0.05, rounding: 0.05 },
    CarParams { width: 1.95, height: 1.72, body_height: 0.95, length: 4.95, cabin_length: 2.9, cabin_z: 0.30, rounding: 0.12 },
    CarParams { width: 1.75, height: 1.50, body_height: 0.80, length: 4.30, cabin_length: 2.2, cabin_z: 0.00, rounding: 0.07 },
    CarParams { width: 1.82, height: 1.42, body_height: 0.74, length: 4.60, cabin_length: 2.4, cabin_z: 0.35, rounding: 0.09 },
    CarParams { width: 1.68, height: 1.55, body_height: 0.82, length: 4.00, cabin_length: 2.0, cabin_z: -0.10, rounding: 0.06 },
    CarParams { width: 1.90, height: 1.48, body_height: 0.78, length: 4.70, cabin_length: 2.5, cabin_z: 0.20, rounding: 0.11 },
    CarParams { width: 1.72, height: 1.65, body_height: 0.90, length: 4.20, cabin_length: 2.3, cabin_z: 0.12, rounding: 0.08 },
    CarParams { width: 1.85, height: 1.52, body_height: 0.76, length: 4.55, cabin_length: 2.45, cabin_z: 0.28, rounding: 0.07 },
    CarParams { width: 1.66, height: 1.44, body_height: 0.73, length: 3.95, cabin_length: 2.05, cabin_z: -0.05, rounding: 0.05 },
];

/// Signed distance to an axis-aligned rounded box.
fn rounded_box(p: &Point3<f64>, center: &Point3<f64>, half: &Vector3<f64>, r: f64) -> f64 {
    let q = (p - center).abs() - (half - Vector3::repeat(r));
    let outside = q.map(|v| v.max(0.0)).norm();
    let inside = q.max().min(0.0);
    outside + inside - r
}

/// Two-box car in the canonical frame: ground contact at y = 0 (y-down,
/// body above means smaller y), nose toward -z.
fn car_distance(p: &Point3<f64>, c: &CarParams) -> f64 {
    let body = rounded_box(
        p,
        &Point3::new(0.0, -c.body_height / 2.0, 0.0),
        &Vector3::new(c.width / 2.0, c.body_height / 2.0, c.length / 2.0),
        c.rounding,
    );
    let cab_h = c.height - c.body_height;
    let cabin = rounded_box(
        p,
        // sunk slightly into the body so the union stays connected
        &Point3::new(0.0, -c.body_height - cab_h / 2.0 + 0.02, c.cabin_z),
        &Vector3::new(
            c.width / 2.0 - 0.12,
            cab_h / 2.0 + 0.02,
            c.cabin_length / 2.0,
        ),
        c.rounding + 0.04,
    );
    body.min(cabin)
}

/// Truncated SDF grids of the built-in vehicle family.
pub fn car_shape_family(spec: &GridSpec, count: usize) -> Result<Vec<SdfGrid>> {
    if count < 2 || count > TRAINING_FAMILY_SIZE {
        return Err(Error::Scenario(format!(
            "training family supports 2..={TRAINING_FAMILY_SIZE} shapes, asked for {count}"
        )));
    }
    CAR_TABLE[..count]
        .iter()
        .map(|c| SdfGrid::from_fn(*spec, |p| car_distance(p, c)))
        .collect()
}

/// Trains the default manifold over the full family on the standard
/// vehicle lattice. Deterministic.
pub fn default_training_manifold(components: usize) -> Result<ShapeManifold> {
    let grids = car_shape_family(&GridSpec::default_vehicle(), TRAINING_FAMILY_SIZE)?;
    ShapeManifold::train(&grids, components)
}

// ---------------------------------------------------------------------------
// generation

/// Axis-aligned bounds of the decoded zero level set in the object frame,
/// from the sign of the decoded grid values.
pub fn shape_bbox(
    manifold: &ShapeManifold,
    z: &DVector<f64>,
) -> Result<(Point3<f64>, Point3<f64>)> {
    let grid = manifold.decode(z)?;
    let spec = grid.spec();
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    let (nx, ny, nz) = spec.dims;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if grid.value(i, j, k) < 0.0 {
                    let c = spec.voxel_center(i, j, k).coords;
                    lo = lo.inf(&c);
                    hi = hi.sup(&c);
                }
            }
        }
    }
    if !lo.x.is_finite() {
        return Err(Error::Scenario(
            "decoded ground-truth shape has no interior".to_string(),
        ));
    }
    let half = Vector3::repeat(spec.voxel_size / 2.0);
    Ok((Point3::from(lo - half), Point3::from(hi + half)))
}

/// Stereo depth observation: true depth to disparity, Gaussian pixel
/// noise, back to depth. Reproduces the quadratic growth of depth error.
pub fn perturb_depth<R: Rng>(d: f64, bf: f64, sigma_px: f64, rng: &mut R) -> f64 {
    if sigma_px == 0.0 {
        return d;
    }
    let noise = Normal::new(0.0, sigma_px).expect("valid sigma");
    let disparity = bf / d + noise.sample(rng);
    bf / disparity.max(0.2)
}

pub fn generate(spec: &ScenarioSpec, manifold: &ShapeManifold) -> Result<Scenario> {
    spec.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);

    let z = match &spec.shape {
        ShapeChoice::Code { values } => {
            if values.len() != manifold.num_components() {
                return Err(Error::DimensionMismatch {
                    expected: manifold.num_components(),
                    actual: values.len(),
                });
            }
            DVector::from_vec(values.clone())
        }
        ShapeChoice::Random { k_sigma } => {
            let sig = manifold.stddevs();
            DVector::from_fn(manifold.num_components(), |i, _| {
                master.random_range(-k_sigma..*k_sigma) * sig[i]
            })
        }
    };
    let (bb_lo, bb_hi) = shape_bbox(manifold, &z)?;
    let size = bb_hi - bb_lo;
    let center_obj = Point3::from((bb_lo.coords + bb_hi.coords) / 2.0);

    let poses = spec.trajectory();
    let frame_seeds: Vec<u64> = (0..spec.frames).map(|_| master.random()).collect();

    let shape = manifold.shape(&z);
    let cam = spec.camera.sampling_camera(spec.render_stride);
    let bf = spec.camera.b_m * spec.camera.f_px;
    let opts = RenderOptions::default();

    let mut frames = Vec::with_capacity(spec.frames);
    let mut clouds = Vec::with_capacity(spec.frames);
    let mut masks = Vec::with_capacity(spec.frames);
    for (t, pose) in poses.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(frame_seeds[t]);
        let occluded = spec.occluded_frames.contains(&t);
        let object_to_camera = pose.object_to_world(); // camera frame == world

        // detection seed: box center with bias along the heading plus noise
        let center_true = object_to_camera.transform_point(&center_obj);
        let heading = heading_direction(pose.theta);
        let tn = Normal::new(0.0, spec.detection_sigma_t.max(1e-300)).unwrap();
        let yn = Normal::new(0.0, spec.detection_sigma_yaw.max(1e-300)).unwrap();
        let center_seed = center_true
            + heading * spec.detection_bias_forward
            + Vector3::new(tn.sample(&mut rng), tn.sample(&mut rng), tn.sample(&mut rng));
        let yaw_seed = pose.theta + yn.sample(&mut rng);

        let mut points: Vec<Point3<f64>> = Vec::new();
        let mut depths: Vec<f64> = Vec::new();
        let mut mask: Vec<bool> = Vec::new();

        if !occluded {
            let dm = render_depth(&shape, &cam, &object_to_camera, &opts);
            if dm.camera_inside {
                return Err(Error::Scenario(format!(
                    "{}: camera inside the object at frame {t}",
                    spec.name
                )));
            }
            // Sphere tracing polishes most hits to ~1e-10 m but grazing rays
            // can stall anywhere inside the tracer's surface band; keep only
            // points that genuinely sit on the zero level set so noise-free
            // clouds carry no synthetic residue.
            let to_object = object_to_camera.inverse();
            let surface: Vec<Point3<f64>> = dm
                .to_points()
                .into_iter()
                .filter(|p| shape.distance(&to_object.transform_point(p)).abs() < 1e-6)
                .collect();
            if surface.is_empty() {
                return Err(Error::Scenario(format!(
                    "{}: object not visible at frame {t}",
                    spec.name
                )));
            }
            let chosen: Vec<&Point3<f64>> = surface
                .iter()
                .collect::<Vec<_>>()
                .choose_multiple(&mut rng, spec.max_points_per_frame)
                .copied()
                .collect();
            for p in chosen {
                let d_true = p.z;
                let d_obs = perturb_depth(d_true, bf, spec.sigma_disp_px, &mut rng);
                points.push(Point3::from(p.coords * (d_obs / d_true)));
                depths.push(d_obs);
                mask.push(true);
            }
        }

        if spec.clutter_density > 0.0 {
            let area = std::f64::consts::PI * spec.clutter_radius * spec.clutter_radius;
            let n_clutter = (spec.clutter_density * area).round() as usize;
            for _ in 0..n_clutter {
                let radius = spec.clutter_radius * rng.random::<f64>().sqrt();
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let x = pose.t.x + radius * angle.cos();
                let zc = pose.t.z + radius * angle.sin();
                let y = spec.ground_y + rng.random_range(-0.02..0.02);
                if zc <= 0.5 {
                    continue; // behind or at the camera
                }
                let p = Point3::new(x, y, zc);
                if occluded && (p - center_seed).norm() <= DEFAULT_FILTER_RADIUS + 0.3 {
                    continue; // keep occluded frames observation-free
                }
                points.push(p);
                depths.push(p.z);
                mask.push(false);
            }
        }

        if points.is_empty() {
            return Err(Error::Scenario(format!(
                "{}: frame {t} would have an empty cloud; occluded frames need clutter",
                spec.name
            )));
        }

        frames.push(FrameFile {
            index: t as u64,
            t_s: t as f64 * spec.dt,
            cloud: format!("clouds/frame_{t:03}.xyz"),
            detection: DetectionFile {
                center: [center_seed.x, center_seed.y, center_seed.z],
                yaw: yaw_seed,
                size: [size.x, size.y, size.z],
                score: 1.0,
            },
            plane: Some([0.0, 1.0, 0.0, -spec.ground_y]),
        });
        clouds.push(PointCloud {
            points,
            normals: None,
            depths: Some(depths),
        });
        masks.push(mask);
    }

    let track = TrackFile {
        id: spec.name.clone(),
        calib: Calibration {
            f_px: spec.camera.f_px,
            b_m: spec.camera.b_m,
            // the data term divides by this; keep a tiny floor so exact
            // synthetic depths stay usable. The floor must be small enough
            // that on noise-free tracks the data term dominates the shape
            // prior, otherwise the prior drags the recovered poses off the
            // generator state by more than the sub-millimetre level.
            sigma_disp_px: spec.sigma_disp_px.max(1e-3),
        },
        frames,
    };
    let gt = GroundTruth {
        spec: spec.clone(),
        z: z.iter().copied().collect(),
        poses,
        regime: spec.regime,
        ground_y: spec.ground_y,
        masks,
    };
    Ok(Scenario {
        track,
        clouds,
        gt,
    })
}

/// Files produced by [`write_scenario`].
pub struct ScenarioPaths {
    pub track: PathBuf,
    pub ground_truth: PathBuf,
}

/// Generates and persists a scenario: `track.json`, `gt.json` and one
/// cloud file per frame under `clouds/`.
pub fn write_scenario(
    dir: impl AsRef<Path>,
    spec: &ScenarioSpec,
    manifold: &ShapeManifold,
) -> Result<ScenarioPaths> {
    let dir = dir.as_ref();
    let scenario = generate(spec, manifold)?;
    let clouds_dir = dir.join("clouds");
    std::fs::create_dir_all(&clouds_dir)
        .map_err(|e| Error::io(clouds_dir.display().to_string(), e))?;
    for (frame, cloud) in scenario.track.frames.iter().zip(&scenario.clouds) {
        save_cloud(dir.join(&frame.cloud), cloud)?;
    }
    let track_path = dir.join("track.json");
    let text = serde_json::to_string_pretty(&scenario.track).expect("track serializes");
    std::fs::write(&track_path, text)
        .map_err(|e| Error::io(track_path.display().to_string(), e))?;
    let gt_path = dir.join("gt.json");
    scenario.gt.save(&gt_path)?;
    Ok(ScenarioPaths {
        track: track_path,
        ground_truth: gt_path,
    })
}

// ---------------------------------------------------------------------------
// presets

/// Named scenario presets spanning the motion regimes plus the stress
/// cases: occlusion, long range, single-sided views, biased seeds.
pub fn preset_suite() -> Vec<ScenarioSpec> {
    let mut straight = ScenarioSpec {
        name: "straight-20-frames".into(),
        shape: ShapeChoice::Random { k_sigma: 1.0 },
        regime: MotionRegime::Straight,
        v: 5.0,
        omega: 0.0,
        start_x: 0.0,
        start_z: 6.0,
        start_theta: std::f64::consts::PI,
        detection_sigma_t: 0.05,
        detection_sigma_yaw: 0.01,
        seed: 101,
        ..ScenarioSpec::default()
    };
    straight.sigma_disp_px = 0.0;

    let turn = ScenarioSpec {
        name: "turn-20-frames".into(),
        shape: ShapeChoice::Random { k_sigma: 1.0 },
        regime: MotionRegime::Turning,
        v: 5.0,
        omega: 0.3,
        start_x: -3.0,
        start_z: 8.0,
        start_theta: std::f64::consts::PI,
        seed: 102,
        ..straight.clone()
    };

    let static_spec = ScenarioSpec {
        name: "static-20-frames".into(),
        // mean shape: an all-zero code keeps the full energy of a perfect
        // fit at zero, which downstream checks rely on
        shape: ShapeChoice::Code {
            values: vec![0.0; DEFAULT_SHAPE_COMPONENTS],
        },
        regime: MotionRegime::Standing,
        v: 0.0,
        omega: 0.0,
        start_x: 0.5,
        start_z: 7.0,
        start_theta: 0.4,
        detection_sigma_t: 0.02,
        detection_sigma_yaw: 0.005,
        seed: 103,
        ..straight.clone()
    };

    let occluded = ScenarioSpec {
        name: "occluded-mid-track".into(),
        v: 4.0,
        sigma_disp_px: 0.5,
        clutter_density: 2.0,
        clutter_radius: 6.0,
        occluded_frames: vec![9, 10, 11],
        seed: 104,
        ..straight.clone()
    };

    let far = ScenarioSpec {
        name: "far-range".into(),
        v: 10.0,
        start_z: 42.0,
        sigma_disp_px: 1.0,
        detection_sigma_t: 1.0,
        detection_sigma_yaw: 5.0_f64.to_radians(),
        max_points_per_frame: 400,
        render_stride: 1,
        seed: 105,
        ..straight.clone()
    };

    let one_sided = ScenarioSpec {
        name: "one-sided-static".into(),
        shape: ShapeChoice::Random { k_sigma: 1.0 },
        regime: MotionRegime::Standing,
        v: 0.0,
        omega: 0.0,
        start_x: 0.0,
        start_z: 8.0,
        start_theta: std::f64::consts::FRAC_PI_2,
        detection_sigma_t: 0.02,
        detection_sigma_yaw: 0.005,
        seed: 106,
        ..straight.clone()
    };

    let biased = ScenarioSpec {
        name: "biased-clutter".into(),
        v: 4.0,
        start_z: 7.0,
        sigma_disp_px: 0.3,
        detection_sigma_t: 0.05,
        detection_bias_forward: 1.0,
        clutter_density: 4.0,
        clutter_radius: 6.0,
        seed: 107,
        ..straight.clone()
    };

    vec![straight, turn, static_spec, occluded, far, one_sided, biased]
}

/// Looks up a preset by name.
pub fn preset(name: &str) -> Option<ScenarioSpec> {
    preset_suite().into_iter().find(|s| s.name == name)
}

/// All preset names, for error messages.
pub fn preset_names() -> Vec<String> {
    preset_suite().into_iter().map(|s| s.name).collect()
}
