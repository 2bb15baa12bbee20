//! Scoring fitted shapes and trajectories against ground truth: symmetric
//! nearest-neighbor surface scores (completeness / accuracy / F1), per-frame
//! pose errors with distance-binned summaries, and flat CSV / gnuplot
//! emitters for the evaluation reports.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DVector, Point3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{angle_diff, PinholeCamera};
use crate::ingest::Track;
use crate::motion::Pose;
use crate::sdf_grid::{extract_surface_points, render_depth, RenderOptions};
use crate::shape_manifold::ShapeManifold;

/// Default surface-score threshold (m).
pub const DEFAULT_TAU: f64 = 0.2;

/// Width of the camera-distance bins in pose summaries (m).
pub const DISTANCE_BIN_WIDTH: f64 = 20.0;

// ---------------------------------------------------------------------------
// surface score

/// Symmetric nearest-neighbor surface comparison at threshold `tau`.
/// All three rates are percentages in [0, 100].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeScore {
    /// Share of ground-truth points with a reconstruction point within tau.
    pub completeness: f64,
    /// Share of reconstruction points with a ground-truth point within tau.
    pub accuracy: f64,
    /// Harmonic mean of the two; zero when either is zero.
    pub f1: f64,
    pub tau: f64,
    pub gt_count: usize,
    pub recon_count: usize,
    /// Set when either point set was empty; all rates are zero then.
    pub degenerate: bool,
}

/// Harmonic mean of two percentages; defined as zero when the product is
/// zero so empty reconstructions never divide by zero.
pub fn f1_percent(completeness: f64, accuracy: f64) -> f64 {
    if completeness * accuracy == 0.0 {
        0.0
    } else {
        2.0 * completeness * accuracy / (completeness + accuracy)
    }
}

/// Uniform grid over 3D with cell edge `tau`: any pair of points within
/// Euclidean distance tau lives in the same or an adjacent cell, so the
/// 27-cell probe below is exact.
struct CellIndex {
    cells: HashMap<(i64, i64, i64), Vec<usize>>,
    tau: f64,
}

impl CellIndex {
    fn build(points: &[Point3<f64>], tau: f64) -> Self {
        let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, tau)).or_default().push(i);
        }
        Self { cells, tau }
    }

    fn key(p: &Point3<f64>, tau: f64) -> (i64, i64, i64) {
        (
            (p.x / tau).floor() as i64,
            (p.y / tau).floor() as i64,
            (p.z / tau).floor() as i64,
        )
    }

    fn has_neighbor(&self, q: &Point3<f64>, points: &[Point3<f64>]) -> bool {
        let (cx, cy, cz) = Self::key(q, self.tau);
        let tau2 = self.tau * self.tau;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        if bucket
                            .iter()
                            .any(|&i| (points[i] - q).norm_squared() <= tau2)
                        {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

fn covered_fraction(queries: &[Point3<f64>], targets: &[Point3<f64>], tau: f64) -> f64 {
    let index = CellIndex::build(targets, tau);
    let hits = queries
        .iter()
        .filter(|q| index.has_neighbor(q, targets))
        .count();
    100.0 * hits as f64 / queries.len() as f64
}

/// Scores a reconstructed point set against a ground-truth surface set.
/// Either set empty yields an all-zero, degenerate score.
pub fn shape_score(gt: &[Point3<f64>], recon: &[Point3<f64>], tau: f64) -> ShapeScore {
    if gt.is_empty() || recon.is_empty() {
        return ShapeScore {
            completeness: 0.0,
            accuracy: 0.0,
            f1: 0.0,
            tau,
            gt_count: gt.len(),
            recon_count: recon.len(),
            degenerate: true,
        };
    }
    let completeness = covered_fraction(gt, recon, tau);
    let accuracy = covered_fraction(recon, gt, tau);
    ShapeScore {
        completeness,
        accuracy,
        f1: f1_percent(completeness, accuracy),
        tau,
        gt_count: gt.len(),
        recon_count: recon.len(),
        degenerate: false,
    }
}

// ---------------------------------------------------------------------------
// pose score

/// One camera-distance bin of pose errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceBin {
    pub lo_m: f64,
    pub hi_m: f64,
    pub count: usize,
    pub mean_translation_m: f64,
    pub median_translation_m: f64,
    pub mean_rotation_rad: f64,
    pub median_rotation_rad: f64,
}

/// Per-frame trajectory errors plus distance-binned summaries. Rotation
/// errors are wrapped yaw differences in [0, pi]; distances are measured
/// from the camera origin to the ground-truth pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseScore {
    pub translation_errors_m: Vec<f64>,
    pub rotation_errors_rad: Vec<f64>,
    pub bins: Vec<DistanceBin>,
}

/// Median as the average of the two middle order statistics, so single
/// outliers cannot move it.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty slice");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn pose_score(estimated: &[Pose], ground_truth: &[Pose]) -> Result<PoseScore> {
    if estimated.len() != ground_truth.len() {
        return Err(Error::DimensionMismatch {
            expected: ground_truth.len(),
            actual: estimated.len(),
        });
    }
    if estimated.is_empty() {
        return Err(Error::Track("pose score needs at least one frame".into()));
    }
    let translation: Vec<f64> = estimated
        .iter()
        .zip(ground_truth)
        .map(|(e, g)| (e.t - g.t).norm())
        .collect();
    let rotation: Vec<f64> = estimated
        .iter()
        .zip(ground_truth)
        .map(|(e, g)| angle_diff(e.theta, g.theta).abs())
        .collect();

    let mut grouped: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, g) in ground_truth.iter().enumerate() {
        let bin = (g.t.norm() / DISTANCE_BIN_WIDTH).floor() as usize;
        grouped.entry(bin).or_default().push(i);
    }
    let mut keys: Vec<usize> = grouped.keys().copied().collect();
    keys.sort_unstable();
    let bins = keys
        .into_iter()
        .map(|k| {
            let idx = &grouped[&k];
            let t: Vec<f64> = idx.iter().map(|&i| translation[i]).collect();
            let r: Vec<f64> = idx.iter().map(|&i| rotation[i]).collect();
            DistanceBin {
                lo_m: k as f64 * DISTANCE_BIN_WIDTH,
                hi_m: (k + 1) as f64 * DISTANCE_BIN_WIDTH,
                count: idx.len(),
                mean_translation_m: mean(&t),
                median_translation_m: median(&t),
                mean_rotation_rad: mean(&r),
                median_rotation_rad: median(&r),
            }
        })
        .collect();
    Ok(PoseScore {
        translation_errors_m: translation,
        rotation_errors_rad: rotation,
        bins,
    })
}

// ---------------------------------------------------------------------------
// reconstruction extraction

/// Depth-renders the decoded shape at a fitted pose and back-projects the
/// valid pixels into world points. `gt_mask`, when given, must have one
/// entry per pixel (row-major) and restricts the output to pixels where
/// the ground-truth render was valid, so the comparison covers the same
/// image support. The world frame is the camera frame.
pub fn reconstructed_points_from_fit(
    manifold: &ShapeManifold,
    z: &DVector<f64>,
    pose: &Pose,
    camera: &PinholeCamera,
    gt_mask: Option<&[bool]>,
    opts: &RenderOptions,
) -> Result<Vec<Point3<f64>>> {
    if let Some(mask) = gt_mask {
        if mask.len() != camera.width * camera.height {
            return Err(Error::DimensionMismatch {
                expected: camera.width * camera.height,
                actual: mask.len(),
            });
        }
    }
    let shape = manifold.shape(z);
    let dm = render_depth(&shape, camera, &pose.object_to_world(), opts);
    let mut pts = Vec::new();
    for v in 0..camera.height {
        for u in 0..camera.width {
            let i = v * camera.width + u;
            if let Some(mask) = gt_mask {
                if !mask[i] {
                    continue;
                }
            }
            let d = dm.depths[i];
            if d.is_finite() {
                pts.push(camera.back_project(u as f64, v as f64, d));
            }
        }
    }
    Ok(pts)
}

/// Per-pixel validity of a depth render; the synthetic ground-truth mask
/// for [`reconstructed_points_from_fit`].
pub fn render_valid_mask(
    manifold: &ShapeManifold,
    z: &DVector<f64>,
    pose: &Pose,
    camera: &PinholeCamera,
    opts: &RenderOptions,
) -> Vec<bool> {
    let shape = manifold.shape(z);
    let dm = render_depth(&shape, camera, &pose.object_to_world(), opts);
    dm.depths.iter().map(|d| d.is_finite()).collect()
}

/// All-around surface samples of a decoded shape posed into the world;
/// covers the sides no single depth render can see.
pub fn surface_points_world(
    manifold: &ShapeManifold,
    z: &DVector<f64>,
    pose: &Pose,
    n_rays: usize,
    seed: u64,
) -> Vec<Point3<f64>> {
    let shape = manifold.shape(z);
    let iso = pose.object_to_world();
    extract_surface_points(&shape, n_rays, seed)
        .iter()
        .map(|p| iso.transform_point(p))
        .collect()
}

/// Per-frame count of active points that the generator marked as true
/// object surface; the oracle for association quality.
pub fn retained_true_points(track: &Track, masks: &[Vec<bool>]) -> Result<Vec<usize>> {
    if masks.len() != track.len() {
        return Err(Error::DimensionMismatch {
            expected: track.len(),
            actual: masks.len(),
        });
    }
    track
        .frames
        .iter()
        .zip(masks)
        .enumerate()
        .map(|(t, (frame, mask))| {
            if mask.len() != frame.points.len() {
                return Err(Error::Track(format!(
                    "frame {t}: mask has {} entries for {} points",
                    mask.len(),
                    frame.points.len()
                )));
            }
            Ok(frame.active.iter().filter(|&&i| mask[i]).count())
        })
        .collect()
}

// ---------------------------------------------------------------------------
// report emission

/// Full evaluation of one fitted track: one surface score per threshold
/// plus the trajectory errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub track_id: String,
    pub shape: Vec<ShapeScore>,
    pub pose: PoseScore,
}

impl EvalReport {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Flat CSV: one row per track per threshold, pose summary repeated.
pub fn write_scores_csv(path: impl AsRef<Path>, reports: &[EvalReport]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from(
        "track_id,tau_m,completeness_pct,accuracy_pct,f1_pct,gt_count,recon_count,\
         mean_translation_m,median_translation_m,mean_rotation_deg,median_rotation_deg\n",
    );
    for report in reports {
        let t = &report.pose.translation_errors_m;
        let r = &report.pose.rotation_errors_rad;
        for s in &report.shape {
            out.push_str(&format!(
                "{},{:.4},{:.4},{:.4},{:.4},{},{},{:.6},{:.6},{:.6},{:.6}\n",
                report.track_id,
                s.tau,
                s.completeness,
                s.accuracy,
                s.f1,
                s.gt_count,
                s.recon_count,
                mean(t),
                median(t),
                mean(r).to_degrees(),
                median(r).to_degrees(),
            ));
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Gnuplot data file: one indexed block per track with the threshold
/// sweep, then one block per track with the distance-binned pose errors.
pub fn write_gnuplot_data(path: impl AsRef<Path>, reports: &[EvalReport]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    let emit = |w: &mut dyn std::io::Write| -> std::io::Result<()> {
        for report in reports {
            writeln!(w, "# track {} surface scores", report.track_id)?;
            writeln!(w, "# tau_m completeness_pct accuracy_pct f1_pct")?;
            for s in &report.shape {
                writeln!(
                    w,
                    "{:.4} {:.4} {:.4} {:.4}",
                    s.tau, s.completeness, s.accuracy, s.f1
                )?;
            }
            writeln!(w)?;
            writeln!(w)?;
        }
        for report in reports {
            writeln!(w, "# track {} pose errors by camera distance", report.track_id)?;
            writeln!(
                w,
                "# bin_center_m median_translation_m median_rotation_deg count"
            )?;
            for b in &report.pose.bins {
                writeln!(
                    w,
                    "{:.1} {:.6} {:.6} {}",
                    (b.lo_m + b.hi_m) / 2.0,
                    b.median_translation_m,
                    b.median_rotation_rad.to_degrees(),
                    b.count
                )?;
            }
            writeln!(w)?;
            writeln!(w)?;
        }
        Ok(())
    };
    emit(&mut w).map_err(|e| Error::io(path.display().to_string(), e))
}
