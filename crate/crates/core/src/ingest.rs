//! Track loading, observation filtering, state initialization and the
//! hard-EM reassociation step.
//!
//! A track file is JSON referencing one external point cloud per frame:
//! `{ "id", "calib": {"f_px","b_m","sigma_disp_px"}, "frames": [ {"index",
//! "t_s", "cloud", "detection": {"center","yaw","size","score"},
//! "plane": [a,b,c,d] (optional)} ] }`. Geometry is world-frame, y-down,
//! meters/radians. Each cloud point must carry the camera depth it was
//! observed at (the 4th column), which drives the stereo noise model.

use std::path::Path;
#[cfg(test)]
use std::path::PathBuf;

use nalgebra::{DVector, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::cloud::load_cloud;
use crate::error::{Error, Result};
use crate::geom::heading_from_direction;
use crate::motion::{
    classify, fit_ground_plane, GroundPlane, MotionRegime, MotionThresholds, Pose,
    PLANE_SIGMA2_FLOOR,
};
use crate::shape_manifold::ShapeManifold;

/// Radius of the observation ball around the detection center.
pub const DEFAULT_FILTER_RADIUS: f64 = 3.0;

/// Stereo rig constants of the depth source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Focal length in pixels.
    pub f_px: f64,
    /// Stereo baseline in meters.
    pub b_m: f64,
    /// Disparity noise in pixels.
    pub sigma_disp_px: f64,
}

impl Calibration {
    /// Depth standard deviation at camera depth `d`: disparity noise pushed
    /// through d = b f / delta grows quadratically with distance.
    pub fn sigma_d(&self, d: f64) -> f64 {
        d * d * self.sigma_disp_px / (self.b_m * self.f_px)
    }
}

/// Detector output used to seed the optimization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// 3D box center (world, mid-height).
    pub center: Point3<f64>,
    pub yaw: f64,
    /// Box dimensions (width, height, length).
    pub size: Vector3<f64>,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct Frame {
    pub index: u64,
    pub t_s: f64,
    /// Cloud reference exactly as written in the track file.
    pub cloud_ref: String,
    /// Full observation pool (world frame); never shrunk, the Hard-EM loop
    /// only rewrites `active`.
    pub points: Vec<Point3<f64>>,
    /// Camera depth per point, same order.
    pub depths: Vec<f64>,
    pub detection: Detection,
    pub plane: GroundPlane,
    /// Set if the plane came from the file rather than estimation.
    pub plane_given: bool,
    /// Indices into `points` currently associated with the object.
    pub active: Vec<usize>,
}

impl Frame {
    pub fn is_observation_free(&self) -> bool {
        self.active.is_empty()
    }

    pub fn active_points(&self) -> impl Iterator<Item = (&Point3<f64>, f64)> + '_ {
        self.active.iter().map(|&i| (&self.points[i], self.depths[i]))
    }
}

#[derive(Debug, Clone)]
pub struct Track {
    pub id: String,
    pub calib: Calibration,
    pub frames: Vec<Frame>,
}

impl Track {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Step duration before frame `t` (1-based semantics: dt(t) spans
    /// frames t-1 -> t).
    pub fn dt(&self, t: usize) -> f64 {
        self.frames[t].t_s - self.frames[t - 1].t_s
    }
}

/// Serialization mirror of the on-disk track schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackFile {
    pub id: String,
    pub calib: Calibration,
    pub frames: Vec<FrameFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameFile {
    pub index: u64,
    pub t_s: f64,
    pub cloud: String,
    pub detection: DetectionFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plane: Option<[f64; 4]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionFile {
    pub center: [f64; 3],
    pub yaw: f64,
    pub size: [f64; 3],
    pub score: f64,
}

pub fn load_track(path: impl AsRef<Path>) -> Result<Track> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(&name, e))?;
    let file: TrackFile = serde_json::from_str(&text).map_err(|e| Error::Schema {
        path: name.clone(),
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    track_from_file(file, base, &name)
}

/// Builds the runtime track from the parsed schema, resolving cloud
/// references against `base`.
pub fn track_from_file(file: TrackFile, base: &Path, origin: &str) -> Result<Track> {
    let schema = |message: String| Error::Schema {
        path: origin.to_string(),
        message,
    };

    if file.frames.len() < 2 {
        return Err(schema(format!(
            "track {:?} has {} frames, need at least 2",
            file.id,
            file.frames.len()
        )));
    }
    if !(file.calib.f_px > 0.0 && file.calib.b_m > 0.0 && file.calib.sigma_disp_px > 0.0) {
        return Err(schema(format!(
            "calibration must be positive: f_px={}, b_m={}, sigma_disp_px={}",
            file.calib.f_px, file.calib.b_m, file.calib.sigma_disp_px
        )));
    }

    let mut seen = std::collections::HashSet::new();
    let mut frames = Vec::with_capacity(file.frames.len());
    let mut prev_t = f64::NEG_INFINITY;
    for ff in file.frames {
        if !seen.insert(ff.index) {
            return Err(schema(format!("duplicate frame index {}", ff.index)));
        }
        if ff.t_s <= prev_t {
            return Err(schema(format!(
                "timestamps must strictly increase: frame {} has t_s = {} after {}",
                ff.index, ff.t_s, prev_t
            )));
        }
        prev_t = ff.t_s;

        let d = &ff.detection;
        if !(d.size.iter().all(|s| *s > 0.0)) {
            return Err(schema(format!(
                "frame {}: detection size must be positive, got {:?}",
                ff.index, d.size
            )));
        }
        if !(0.0..=1.0).contains(&d.score) {
            return Err(schema(format!(
                "frame {}: detection score {} outside [0, 1]",
                ff.index, d.score
            )));
        }
        let detection = Detection {
            center: Point3::new(d.center[0], d.center[1], d.center[2]),
            yaw: d.yaw,
            size: Vector3::new(d.size[0], d.size[1], d.size[2]),
            score: d.score,
        };

        let cloud_path = base.join(&ff.cloud);
        let cloud = load_cloud(&cloud_path)?;
        let Some(depths) = cloud.depths else {
            return Err(schema(format!(
                "frame {}: cloud {:?} lacks the per-point camera-depth column",
                ff.index, ff.cloud
            )));
        };
        if let Some(bad) = depths.iter().position(|d| *d <= 0.0) {
            return Err(schema(format!(
                "frame {}: point {bad} has non-positive camera depth",
                ff.index
            )));
        }

        let (plane, plane_given) = match ff.plane {
            Some(coeffs) => (GroundPlane::from_coeffs(coeffs, PLANE_SIGMA2_FLOOR)?, true),
            None => (estimate_frame_plane(&cloud.points, &detection), false),
        };

        let n = cloud.points.len();
        frames.push(Frame {
            index: ff.index,
            t_s: ff.t_s,
            cloud_ref: ff.cloud,
            points: cloud.points,
            depths,
            detection,
            plane,
            plane_given,
            active: (0..n).collect(),
        });
    }

    Ok(Track {
        id: file.id,
        calib: file.calib,
        frames,
    })
}

/// Writes the track JSON (cloud files are referenced, not copied).
pub fn save_track(path: impl AsRef<Path>, track: &Track) -> Result<()> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let file = TrackFile {
        id: track.id.clone(),
        calib: track.calib,
        frames: track
            .frames
            .iter()
            .map(|f| FrameFile {
                index: f.index,
                t_s: f.t_s,
                cloud: f.cloud_ref.clone(),
                detection: DetectionFile {
                    center: [f.detection.center.x, f.detection.center.y, f.detection.center.z],
                    yaw: f.detection.yaw,
                    size: [f.detection.size.x, f.detection.size.y, f.detection.size.z],
                    score: f.detection.score,
                },
                plane: f.plane_given.then_some(f.plane.coeffs),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&file).expect("track schema serializes");
    std::fs::write(path, text).map_err(|e| Error::io(&name, e))
}

/// Plane estimation when the file carries none: RANSAC over points in a
/// band around the detection box bottom, horizontally near the object.
fn estimate_frame_plane(points: &[Point3<f64>], detection: &Detection) -> GroundPlane {
    let bottom = detection.center.y + detection.size.y / 2.0;
    let candidates: Vec<Point3<f64>> = points
        .iter()
        .filter(|p| {
            let dx = p.x - detection.center.x;
            let dz = p.z - detection.center.z;
            p.y >= bottom - 0.05
                && p.y <= bottom + 0.2
                && (dx * dx + dz * dz).sqrt() <= 2.0 * DEFAULT_FILTER_RADIUS
        })
        .copied()
        .collect();
    fit_ground_plane(&candidates)
}

/// Recomputes an association: points above `plane` and within `radius` of
/// `center`.
fn associated_indices(
    points: &[Point3<f64>],
    plane: &GroundPlane,
    center: &Point3<f64>,
    radius: f64,
) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| plane.is_above(p) && (*p - center).norm() <= radius)
        .map(|(i, _)| i)
        .collect()
}

/// Select the observations belonging to the object: above the road plane
/// and within `radius` of the detection center. Empty results just flag the
/// frame observation-free; the motion terms still apply.
pub fn filter_observations(frame: &mut Frame, radius: f64) {
    frame.active =
        associated_indices(&frame.points, &frame.plane, &frame.detection.center, radius);
}

/// Applies [`filter_observations`] to every frame.
pub fn filter_track(track: &mut Track, radius: f64) {
    for frame in &mut track.frames {
        filter_observations(frame, radius);
    }
}

/// Re-selects observations around optimized poses instead of the detection
/// seeds (the E-step of the hard-EM alternation). The plane is re-anchored
/// vertically through the optimized pose height so the ground cutoff follows
/// the fit. Returns true when any association changed.
pub fn reassociate(track: &mut Track, poses: &[Pose], radius: f64) -> bool {
    let mut changed = false;
    for (frame, pose) in track.frames.iter_mut().zip(poses) {
        let mut plane = frame.plane;
        // shift d so that elevation(t_x, t_z) == t_y
        let [a, b, c, _] = plane.coeffs;
        plane.coeffs[3] = -(a * pose.t.x + b * pose.t.y + c * pose.t.z);
        let next = associated_indices(&frame.points, &plane, &Point3::from(pose.t), radius);
        if next != frame.active {
            frame.active = next;
            changed = true;
        }
    }
    changed
}

/// Initial optimization state: mean shape, detection-seeded poses, regime.
#[derive(Debug, Clone)]
pub struct InitState {
    pub z: DVector<f64>,
    pub poses: Vec<Pose>,
    pub regime: MotionRegime,
}

/// Lower median: permutation-invariant, never averages two samples.
pub(crate) fn lower_median(mut xs: Vec<f64>) -> f64 {
    assert!(!xs.is_empty());
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs[(xs.len() - 1) / 2]
}

/// Seeds the optimizer: zero shape code; translations at the detection
/// centers dropped vertically onto the plane; v and omega as medians of
/// finite-difference velocities between successive detections; heading from
/// the detection yaws when standing, else from the first-to-last segment.
pub fn initialize(
    track: &Track,
    manifold: &ShapeManifold,
    thresholds: &MotionThresholds,
) -> Result<InitState> {
    if track.len() < 2 {
        return Err(Error::Track(format!(
            "track {:?} has {} frames, need at least 2",
            track.id,
            track.len()
        )));
    }

    let mut speeds = Vec::with_capacity(track.len() - 1);
    let mut yaw_rates = Vec::with_capacity(track.len() - 1);
    for t in 1..track.len() {
        let dt = track.dt(t);
        let prev = &track.frames[t - 1].detection;
        let curr = &track.frames[t].detection;
        let d = curr.center - prev.center;
        speeds.push((d.x * d.x + d.z * d.z).sqrt() / dt);
        yaw_rates.push(crate::geom::angle_diff(curr.yaw, prev.yaw) / dt);
    }
    let v = lower_median(speeds);
    let omega = lower_median(yaw_rates);
    let regime = classify(v, omega, thresholds);

    let segment = track.frames.last().unwrap().detection.center
        - track.frames.first().unwrap().detection.center;
    let segment_heading = heading_from_direction(&segment);

    let poses = track
        .frames
        .iter()
        .map(|f| {
            let c = f.detection.center;
            let theta = match regime {
                MotionRegime::Standing => f.detection.yaw,
                _ => segment_heading,
            };
            Pose::new(
                Vector3::new(c.x, f.plane.elevation(c.x, c.z), c.z),
                theta,
                v,
                omega,
            )
        })
        .collect();

    Ok(InitState {
        z: DVector::zeros(manifold.num_components()),
        poses,
        regime,
    })
}
