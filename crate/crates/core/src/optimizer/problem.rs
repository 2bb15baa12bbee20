//! Residuals, Jacobians and normal-equation assembly for the joint
//! shape-and-trajectory energy.
//!
//! The state vector stacks the shape code first, then one 6-vector per
//! frame: `[z_1..z_R, (t_x t_y t_z theta v omega)_1, ..., (...)_T]`.
//! Residual rows are ordered shape prior first, then per frame: data
//! points, ground-plane offset, and (from the second frame on) the six
//! whitened kinematic components.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Point3, Vector6};
#[cfg(test)]
use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::ingest::Track;
use crate::motion::{
    predict_jacobian, prediction_error, propagate_covariance, whitener, MotionRegime, Pose,
};
use crate::shape_manifold::ShapeManifold;

use super::{EnergyBreakdown, EnergyConfig};

/// Huber loss on a whitened residual: quadratic inside the threshold,
/// linear outside.
pub fn huber_rho(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        r * r
    } else {
        2.0 * delta * a - delta * delta
    }
}

/// IRLS weight w(r) = rho'(r) / (2r), folding the robust loss into
/// weighted least squares.
pub fn huber_weight(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        1.0
    } else {
        delta / a
    }
}

/// World-to-object rotation (transpose of the object-to-world yaw).
fn world_to_object(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Derivative of [`world_to_object`] with respect to the yaw.
fn world_to_object_dtheta(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

/// Normal equations plus the exact robust energy at the linearization
/// point.
pub struct Assembly {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub energy: f64,
    pub breakdown: EnergyBreakdown,
}

/// One linearization of the full energy over a fixed association and a
/// fixed set of motion whiteners. The whiteners are frozen from the poses
/// the problem was built with, which keeps the per-pass energy an honest
/// least-squares objective.
pub struct Problem<'a> {
    track: &'a Track,
    manifold: &'a ShapeManifold,
    config: &'a EnergyConfig,
    regime: MotionRegime,
    /// Inverse Cholesky factors per step t in 1..T (entry 0 unused).
    whiteners: Vec<Matrix6<f64>>,
    /// Depth-noise inflation in effect for this pass (>= 1).
    inflation: f64,
    stddevs: DVector<f64>,
}

impl<'a> Problem<'a> {
    pub fn new(
        track: &'a Track,
        manifold: &'a ShapeManifold,
        config: &'a EnergyConfig,
        regime: MotionRegime,
        linearization: &[Pose],
        inflation: f64,
    ) -> Result<Self> {
        assert_eq!(linearization.len(), track.len());
        let mut whiteners = vec![Matrix6::identity(); track.len()];
        for t in 1..track.len() {
            let sigma =
                propagate_covariance(&linearization[t - 1], track.dt(t), regime, &config.noise);
            whiteners[t] = whitener(&sigma)?;
        }
        Ok(Self {
            track,
            manifold,
            config,
            regime,
            whiteners,
            inflation,
            stddevs: manifold.stddevs(),
        })
    }

    pub fn regime(&self) -> MotionRegime {
        self.regime
    }

    pub fn config(&self) -> &EnergyConfig {
        self.config
    }

    pub fn num_codes(&self) -> usize {
        self.manifold.num_components()
    }

    pub fn num_frames(&self) -> usize {
        self.track.len()
    }

    pub fn state_len(&self) -> usize {
        self.num_codes() + 6 * self.num_frames()
    }

    pub fn num_residuals(&self) -> usize {
        let data: usize = self.track.frames.iter().map(|f| f.active.len()).sum();
        self.num_codes() + data + self.num_frames() + 6 * (self.num_frames() - 1)
    }

    pub fn pack(&self, z: &DVector<f64>, poses: &[Pose]) -> DVector<f64> {
        let r = self.num_codes();
        let mut x = DVector::zeros(self.state_len());
        x.rows_mut(0, r).copy_from(z);
        for (t, pose) in poses.iter().enumerate() {
            x.fixed_rows_mut::<6>(r + 6 * t).copy_from(&pose.as_vector());
        }
        x
    }

    pub fn unpack(&self, state: &DVector<f64>) -> (DVector<f64>, Vec<Pose>) {
        let r = self.num_codes();
        let z = state.rows(0, r).into_owned();
        let poses = (0..self.num_frames())
            .map(|t| Pose::from_vector(&state.fixed_rows::<6>(r + 6 * t).into_owned()))
            .collect();
        (z, poses)
    }

    fn pose_at(&self, state: &DVector<f64>, t: usize) -> Pose {
        Pose::from_vector(&state.fixed_rows::<6>(self.num_codes() + 6 * t).into_owned())
    }

    /// sqrt of the per-frame data averaging weight 1/(T * N_t).
    fn data_scale(&self, n_t: usize) -> f64 {
        1.0 / ((self.track.len() as f64) * (n_t as f64)).sqrt()
    }

    /// sqrt of the motion averaging weight w_m / T.
    fn motion_scale(&self) -> f64 {
        (self.config.motion_weight / self.track.len() as f64).sqrt()
    }

    /// Plain whitened residual vector (no robust weighting), in a fixed
    /// deterministic row order. This is the function the Jacobian is
    /// differentiated against.
    pub fn residuals(&self, state: &DVector<f64>) -> Result<DVector<f64>> {
        let r = self.num_codes();
        let z = state.rows(0, r).into_owned();
        let mut out = DVector::zeros(self.num_residuals());
        let mut row = 0;

        for i in 0..r {
            out[row] = state[i] / self.stddevs[i];
            row += 1;
        }

        let ms = self.motion_scale();
        for (t, frame) in self.track.frames.iter().enumerate() {
            let pose = self.pose_at(state, t);
            let to_obj = world_to_object(pose.theta);
            let ds = self.data_scale(frame.active.len().max(1));
            for (p, d) in frame.active_points() {
                let sigma = self.track.calib.sigma_d(d) * self.inflation;
                let q = Point3::from(to_obj * (p.coords - pose.t));
                out[row] = ds * self.manifold.phi(&q, &z) / sigma;
                row += 1;
            }

            let elev = frame.plane.elevation(pose.t.x, pose.t.z);
            out[row] = ms * (pose.t.y - elev) / frame.plane.sigma2.sqrt();
            row += 1;

            if t > 0 {
                let prev = self.pose_at(state, t - 1);
                let e = prediction_error(&pose, &prev, self.track.dt(t), self.regime);
                let k = self.whiteners[t] * e;
                out.fixed_rows_mut::<6>(row).copy_from(&(ms * k));
                row += 6;
            }
        }
        debug_assert_eq!(row, self.num_residuals());
        Ok(out)
    }

    /// Dense Jacobian of [`Problem::residuals`], row-aligned with it.
    /// Intended for diagnostics and finite-difference verification; the
    /// solver assembles normal equations directly.
    pub fn jacobian(&self, state: &DVector<f64>) -> Result<DMatrix<f64>> {
        let r = self.num_codes();
        let z = state.rows(0, r).into_owned();
        let mut jac = DMatrix::zeros(self.num_residuals(), self.state_len());
        let mut row = 0;

        for i in 0..r {
            jac[(row, i)] = 1.0 / self.stddevs[i];
            row += 1;
        }

        let ms = self.motion_scale();
        for (t, frame) in self.track.frames.iter().enumerate() {
            let pose = self.pose_at(state, t);
            let base = r + 6 * t;
            let to_obj = world_to_object(pose.theta);
            let dto_obj = world_to_object_dtheta(pose.theta);
            let ds = self.data_scale(frame.active.len().max(1));

            for (p, d) in frame.active_points() {
                let sigma = self.track.calib.sigma_d(d) * self.inflation;
                let c = ds / sigma;
                let rel = p.coords - pose.t;
                let q = Point3::from(to_obj * rel);
                let ev = self.manifold.evaluate(&q, &z);
                for i in 0..r {
                    jac[(row, i)] = c * ev.grad_z[i];
                }
                let grad_t = -(to_obj.transpose() * ev.grad_x);
                for i in 0..3 {
                    jac[(row, base + i)] = c * grad_t[i];
                }
                jac[(row, base + 3)] = c * ev.grad_x.dot(&(dto_obj * rel));
                row += 1;
            }

            let (de_dx, de_dz) = frame.plane.elevation_gradient();
            let sp = frame.plane.sigma2.sqrt();
            jac[(row, base)] = -ms * de_dx / sp;
            jac[(row, base + 1)] = ms / sp;
            jac[(row, base + 2)] = -ms * de_dz / sp;
            row += 1;

            if t > 0 {
                let prev = self.pose_at(state, t - 1);
                let l_inv = &self.whiteners[t];
                let d_prev = -(l_inv * predict_jacobian(&prev, self.track.dt(t), self.regime));
                for i in 0..6 {
                    for j in 0..6 {
                        jac[(row + i, base - 6 + j)] = ms * d_prev[(i, j)];
                        jac[(row + i, base + j)] = ms * l_inv[(i, j)];
                    }
                }
                row += 6;
            }
        }
        debug_assert_eq!(row, self.num_residuals());
        Ok(jac)
    }

    /// Exact robustified energy with its per-term breakdown.
    pub fn energy(&self, state: &DVector<f64>) -> Result<(f64, EnergyBreakdown)> {
        let r = self.num_codes();
        let z = state.rows(0, r).into_owned();
        let t_count = self.track.len() as f64;
        let delta = self.config.huber_delta;

        let mut shape = 0.0;
        for i in 0..r {
            let u = state[i] / self.stddevs[i];
            shape += u * u;
        }
        if !shape.is_finite() {
            return Err(Error::NonFiniteEnergy {
                term: "shape",
                frame: 0,
            });
        }

        let mut data = 0.0;
        let mut motion = 0.0;
        for (t, frame) in self.track.frames.iter().enumerate() {
            let pose = self.pose_at(state, t);
            let to_obj = world_to_object(pose.theta);
            let mut frame_data = 0.0;
            for (p, d) in frame.active_points() {
                let sigma = self.track.calib.sigma_d(d) * self.inflation;
                let q = Point3::from(to_obj * (p.coords - pose.t));
                frame_data += huber_rho(self.manifold.phi(&q, &z) / sigma, delta);
            }
            if !frame.active.is_empty() {
                frame_data /= frame.active.len() as f64;
            }
            if !frame_data.is_finite() {
                return Err(Error::NonFiniteEnergy {
                    term: "data",
                    frame: t,
                });
            }
            data += frame_data / t_count;

            let elev = frame.plane.elevation(pose.t.x, pose.t.z);
            let pr = (pose.t.y - elev) / frame.plane.sigma2.sqrt();
            let mut frame_motion = pr * pr;
            if t > 0 {
                let prev = self.pose_at(state, t - 1);
                let e = prediction_error(&pose, &prev, self.track.dt(t), self.regime);
                frame_motion += (self.whiteners[t] * e).norm_squared();
            }
            if !frame_motion.is_finite() {
                return Err(Error::NonFiniteEnergy {
                    term: "motion",
                    frame: t,
                });
            }
            motion += self.config.motion_weight * frame_motion / t_count;
        }

        let breakdown = EnergyBreakdown {
            data,
            motion,
            shape,
        };
        Ok((breakdown.total(), breakdown))
    }

    /// Whitened data-term RMS per frame (no robust weighting, no
    /// inflation); `None` for observation-free frames.
    pub fn frame_rms(&self, state: &DVector<f64>) -> Vec<Option<f64>> {
        let r = self.num_codes();
        let z = state.rows(0, r).into_owned();
        self.track
            .frames
            .iter()
            .enumerate()
            .map(|(t, frame)| {
                if frame.active.is_empty() {
                    return None;
                }
                let pose = self.pose_at(state, t);
                let to_obj = world_to_object(pose.theta);
                let mut sum = 0.0;
                for (p, d) in frame.active_points() {
                    let sigma = self.track.calib.sigma_d(d);
                    let q = Point3::from(to_obj * (p.coords - pose.t));
                    let u = self.manifold.phi(&q, &z) / sigma;
                    sum += u * u;
                }
                Some((sum / frame.active.len() as f64).sqrt())
            })
            .collect()
    }

    /// Gauss-Newton normal equations with IRLS robust weights, plus the
    /// exact energy at `state`. H and g carry the same averaging weights
    /// as the energy so that H dx = -g is the damped step equation.
    pub fn normal_equations(&self, state: &DVector<f64>) -> Result<Assembly> {
        let r = self.num_codes();
        let n = self.state_len();
        let z = state.rows(0, r).into_owned();
        let delta = self.config.huber_delta;
        let mut h = DMatrix::zeros(n, n);
        let mut g = DVector::zeros(n);

        let ms = self.motion_scale();
        for (t, frame) in self.track.frames.iter().enumerate() {
            let pose = self.pose_at(state, t);
            let base = r + 6 * t;
            let to_obj = world_to_object(pose.theta);
            let dto_obj = world_to_object_dtheta(pose.theta);
            let ds = self.data_scale(frame.active.len().max(1));

            // data block: each row touches z and the frame's pose
            let mut jz = DVector::zeros(r);
            for (p, d) in frame.active_points() {
                let sigma = self.track.calib.sigma_d(d) * self.inflation;
                let rel = p.coords - pose.t;
                let q = Point3::from(to_obj * rel);
                let ev = self.manifold.evaluate(&q, &z);
                let raw = ev.value / sigma;
                let w = huber_weight(raw, delta);
                let c = ds / sigma;
                let res = ds * raw;
                for i in 0..r {
                    jz[i] = c * ev.grad_z[i];
                }
                let grad_t = -(to_obj.transpose() * ev.grad_x);
                let mut jp = Vector6::zeros();
                jp[0] = c * grad_t[0];
                jp[1] = c * grad_t[1];
                jp[2] = c * grad_t[2];
                jp[3] = c * ev.grad_x.dot(&(dto_obj * rel));

                for a in 0..r {
                    let wa = w * jz[a];
                    for b in a..r {
                        h[(a, b)] += wa * jz[b];
                    }
                    for b in 0..4 {
                        h[(a, base + b)] += wa * jp[b];
                    }
                    g[a] += wa * res;
                }
                for a in 0..4 {
                    let wa = w * jp[a];
                    for b in a..4 {
                        h[(base + a, base + b)] += wa * jp[b];
                    }
                    g[base + a] += wa * res;
                }
            }

            // ground-plane row
            let (de_dx, de_dz) = frame.plane.elevation_gradient();
            let sp = frame.plane.sigma2.sqrt();
            let elev = frame.plane.elevation(pose.t.x, pose.t.z);
            let pres = ms * (pose.t.y - elev) / sp;
            let jp3 = [-ms * de_dx / sp, ms / sp, -ms * de_dz / sp];
            for a in 0..3 {
                for b in a..3 {
                    h[(base + a, base + b)] += jp3[a] * jp3[b];
                }
                g[base + a] += jp3[a] * pres;
            }

            // kinematic rows couple this pose with the previous one
            if t > 0 {
                let prev = self.pose_at(state, t - 1);
                let l_inv = &self.whiteners[t];
                let e = prediction_error(&pose, &prev, self.track.dt(t), self.regime);
                let res = ms * (l_inv * e);
                let b_cur = ms * l_inv;
                let a_prev = -ms * (l_inv * predict_jacobian(&prev, self.track.dt(t), self.regime));

                let haa = a_prev.transpose() * a_prev;
                let hab = a_prev.transpose() * b_cur;
                let hbb = b_cur.transpose() * b_cur;
                let ga = a_prev.transpose() * res;
                let gb = b_cur.transpose() * res;
                let prev_base = base - 6;
                for a in 0..6 {
                    // diagonal blocks are symmetric: upper triangle only,
                    // like every other contribution
                    for b in a..6 {
                        h[(prev_base + a, prev_base + b)] += haa[(a, b)];
                        h[(base + a, base + b)] += hbb[(a, b)];
                    }
                    // the cross block lies entirely above the diagonal
                    for b in 0..6 {
                        h[(prev_base + a, base + b)] += hab[(a, b)];
                    }
                    g[prev_base + a] += ga[a];
                    g[base + a] += gb[a];
                }
            }
        }

        // shape prior: diagonal on the code block
        for i in 0..r {
            let inv = 1.0 / self.stddevs[i];
            h[(i, i)] += inv * inv;
            g[i] += state[i] * inv * inv;
        }

        // everything above accumulated the upper triangle; mirror it
        for a in 0..n {
            for b in (a + 1)..n {
                h[(b, a)] = h[(a, b)];
            }
        }

        let (energy, breakdown) = self.energy(state)?;
        Ok(Assembly {
            h,
            g,
            energy,
            breakdown,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Calibration, Detection, Frame, Track};
    use crate::motion::{GroundPlane, MotionRegime};
    use crate::sdf_grid::{GridSpec, SdfGrid};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn sphere_manifold() -> ShapeManifold {
        let spec = GridSpec::centered((12, 12, 12), 0.25, Vector3::zeros(), 0.75).unwrap();
        let grids: Vec<SdfGrid> = [0.7, 0.85, 1.0, 1.15]
            .iter()
            .map(|&r| SdfGrid::from_fn(spec, |p| p.coords.norm() - r).unwrap())
            .collect();
        ShapeManifold::train(&grids, 2).unwrap()
    }

    /// Points roughly on a radius-0.85 sphere around `center`, with depths.
    fn sphere_frame(index: u64, t_s: f64, center: Vector3<f64>, n: usize) -> Frame {
        let mut rng = StdRng::seed_from_u64(17 + index);
        let points: Vec<Point3<f64>> = (0..n)
            .map(|_| {
                let v = Vector3::new(
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                )
                .normalize();
                Point3::from(center + 0.85 * v)
            })
            .collect();
        let depths = points.iter().map(|p| p.coords.norm().max(1.0)).collect();
        Frame {
            index,
            t_s,
            cloud_ref: String::new(),
            points: points.clone(),
            depths,
            detection: Detection {
                center: Point3::from(center),
                yaw: 0.0,
                size: Vector3::new(1.8, 1.7, 1.8),
                score: 1.0,
            },
            plane: GroundPlane::from_coeffs([0.0, 1.0, 0.0, -1.6], 0.01).unwrap(),
            plane_given: true,
            active: (0..n).collect(),
        }
    }

    fn small_track(frames: usize, step: Vector3<f64>) -> Track {
        Track {
            id: "test".into(),
            calib: Calibration {
                f_px: 721.0,
                b_m: 0.54,
                sigma_disp_px: 1.0,
            },
            frames: (0..frames)
                .map(|t| {
                    sphere_frame(
                        t as u64,
                        t as f64 * 0.1,
                        Vector3::new(0.0, 0.5, 6.0) + step * t as f64,
                        8,
                    )
                })
                .collect(),
        }
    }

    fn random_state(problem: &Problem, rng: &mut StdRng) -> DVector<f64> {
        let mut x = DVector::zeros(problem.state_len());
        let r = problem.num_codes();
        for i in 0..r {
            x[i] = rng.random_range(-1.0..1.0);
        }
        for t in 0..problem.num_frames() {
            let b = r + 6 * t;
            x[b] = rng.random_range(-0.5..0.5);
            x[b + 1] = 0.5 + rng.random_range(-0.3..0.3);
            x[b + 2] = 6.0 + rng.random_range(-0.5..0.5) + 0.3 * t as f64;
            x[b + 3] = rng.random_range(-0.6..0.6);
            x[b + 4] = rng.random_range(0.5..3.0);
            x[b + 5] = rng.random_range(-0.4..0.4);
        }
        x
    }

    #[test]
    fn huber_is_continuous_and_smooth_at_the_threshold() {
        let d = 1.345;
        let eps = 1e-9;
        assert!((huber_rho(d - eps, d) - huber_rho(d + eps, d)).abs() < 1e-7);
        // one-sided derivatives at the junction
        let h = 1e-6;
        let left = (huber_rho(d, d) - huber_rho(d - h, d)) / h;
        let right = (huber_rho(d + h, d) - huber_rho(d, d)) / h;
        assert!((left - right).abs() < 1e-4, "{left} vs {right}");
        assert!((left - 2.0 * d).abs() < 1e-4);
        // weight continuity
        assert!((huber_weight(d - eps, d) - huber_weight(d + eps, d)).abs() < 1e-8);
    }

    #[test]
    fn world_to_object_matches_pose_isometry() {
        let pose = Pose::new(Vector3::new(1.0, -0.5, 3.0), 0.7, 0.0, 0.0);
        let p = Point3::new(2.5, 0.3, -1.0);
        let via_iso = pose.object_to_world().inverse_transform_point(&p);
        let via_mat = Point3::from(world_to_object(pose.theta) * (p - pose.t));
        assert!((via_iso - via_mat).norm() < 1e-12);
    }

    fn fd_check(problem: &Problem, state: &DVector<f64>) -> f64 {
        let jac = problem.jacobian(state).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for col in 0..problem.state_len() {
            let mut sp = state.clone();
            let mut sm = state.clone();
            sp[col] += h;
            sm[col] -= h;
            let rp = problem.residuals(&sp).unwrap();
            let rm = problem.residuals(&sm).unwrap();
            for row in 0..problem.num_residuals() {
                let fd = (rp[row] - rm[row]) / (2.0 * h);
                let an = jac[(row, col)];
                let denom = an.abs().max(fd.abs()).max(1e-3);
                worst = worst.max((fd - an).abs() / denom);
            }
        }
        worst
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let manifold = sphere_manifold();
        let track = small_track(4, Vector3::new(0.05, 0.0, -0.3));
        let config = EnergyConfig::default();
        for regime in [
            MotionRegime::Turning,
            MotionRegime::Straight,
            MotionRegime::Standing,
        ] {
            let lin: Vec<Pose> = (0..4)
                .map(|t| {
                    Pose::new(Vector3::new(0.0, 0.5, 6.0 - 0.3 * t as f64), 0.1, 2.0, 0.2)
                })
                .collect();
            let problem =
                Problem::new(&track, &manifold, &config, regime, &lin, 1.0).unwrap();
            let mut rng = StdRng::seed_from_u64(3);
            for _ in 0..5 {
                let state = random_state(&problem, &mut rng);
                let worst = fd_check(&problem, &state);
                assert!(worst < 1e-4, "{regime:?}: rel err {worst}");
            }
        }
    }

    #[test]
    fn data_rows_only_touch_their_frame() {
        let manifold = sphere_manifold();
        let track = small_track(3, Vector3::new(0.0, 0.0, -0.3));
        let config = EnergyConfig::default();
        let lin: Vec<Pose> = (0..3)
            .map(|t| Pose::new(Vector3::new(0.0, 0.5, 6.0 - 0.3 * t as f64), 0.0, 3.0, 0.0))
            .collect();
        let problem =
            Problem::new(&track, &manifold, &config, MotionRegime::Straight, &lin, 1.0).unwrap();
        let state = problem.pack(&DVector::zeros(2), &lin);
        let jac = problem.jacobian(&state).unwrap();
        let r = problem.num_codes();
        // frame 0's data rows start right after the shape rows
        let n0 = track.frames[0].active.len();
        for row in r..r + n0 {
            for t in 1..3 {
                for j in 0..6 {
                    assert_eq!(jac[(row, r + 6 * t + j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn standing_motion_block_is_negative_whitener() {
        let manifold = sphere_manifold();
        let mut track = small_track(2, Vector3::zeros());
        for f in &mut track.frames {
            f.active.clear(); // isolate the motion rows
        }
        let config = EnergyConfig::default();
        let lin = vec![Pose::new(Vector3::new(0.0, 0.5, 6.0), 0.0, 0.0, 0.0); 2];
        let problem =
            Problem::new(&track, &manifold, &config, MotionRegime::Standing, &lin, 1.0).unwrap();
        let state = problem.pack(&DVector::zeros(2), &lin);
        let jac = problem.jacobian(&state).unwrap();
        // rows: 2 shape, 0 data, plane(frame0), plane(frame1), 6 kinematic
        let row0 = 2 + 2;
        let base_prev = 2;
        // standing prediction is the identity, so the previous-pose block is
        // -L^{-1} (up to the 1/sqrt(T) energy averaging)
        let scale = (track.len() as f64).sqrt();
        for i in 0..6 {
            for j in 0..6 {
                let got = jac[(row0 + i, base_prev + j)] * scale;
                let want = -problem.whiteners[1][(i, j)];
                assert!((got - want).abs() < 1e-12, "({i},{j}): {got} vs {want}");
            }
        }
    }

    #[test]
    fn normal_equations_match_explicit_products() {
        let manifold = sphere_manifold();
        let track = small_track(3, Vector3::new(0.0, 0.0, -0.3));
        let config = EnergyConfig::default();
        let lin: Vec<Pose> = (0..3)
            .map(|t| Pose::new(Vector3::new(0.0, 0.5, 6.0 - 0.3 * t as f64), 0.05, 3.0, 0.1))
            .collect();
        let problem =
            Problem::new(&track, &manifold, &config, MotionRegime::Turning, &lin, 1.0).unwrap();
        let mut rng = StdRng::seed_from_u64(11);
        let state = random_state(&problem, &mut rng);

        let asm = problem.normal_equations(&state).unwrap();
        let res = problem.residuals(&state).unwrap();
        let jac = problem.jacobian(&state).unwrap();
        // weight rows exactly as the assembly does
        let mut w = DVector::from_element(problem.num_residuals(), 1.0);
        let r = problem.num_codes();
        let mut row = r;
        for frame in &track.frames {
            for _ in 0..frame.active.len() {
                let ds = problem.data_scale(frame.active.len());
                w[row] = huber_weight(res[row] / ds, config.huber_delta);
                row += 1;
            }
            row += 1; // plane row: unweighted
            if frame.index > 0 {
                row += 6;
            }
        }
        let wd = DMatrix::from_diagonal(&w);
        let h_ref = jac.transpose() * &wd * &jac;
        let g_ref = jac.transpose() * &wd * &res;
        assert!((&asm.h - &h_ref).amax() < 1e-9, "{}", (&asm.h - &h_ref).amax());
        assert!((&asm.g - &g_ref).amax() < 1e-9);
    }

    #[test]
    fn energy_breakdown_sums_to_total() {
        let manifold = sphere_manifold();
        let track = small_track(3, Vector3::new(0.0, 0.0, -0.3));
        let config = EnergyConfig::default();
        let lin: Vec<Pose> = (0..3)
            .map(|t| Pose::new(Vector3::new(0.0, 0.5, 6.0 - 0.3 * t as f64), 0.0, 3.0, 0.0))
            .collect();
        let problem =
            Problem::new(&track, &manifold, &config, MotionRegime::Straight, &lin, 1.0).unwrap();
        let mut rng = StdRng::seed_from_u64(5);
        let state = random_state(&problem, &mut rng);
        let (total, b) = problem.energy(&state).unwrap();
        assert!((b.data + b.motion + b.shape - total).abs() < 1e-9);
        assert!(b.data > 0.0 && b.motion > 0.0 && b.shape > 0.0);
    }

    #[test]
    fn non_finite_data_is_reported_with_the_frame() {
        let manifold = sphere_manifold();
        let track = small_track(2, Vector3::zeros());
        let config = EnergyConfig::default();
        let lin = vec![Pose::new(Vector3::new(0.0, 0.5, 6.0), 0.0, 0.0, 0.0); 2];
        let problem =
            Problem::new(&track, &manifold, &config, MotionRegime::Standing, &lin, 1.0).unwrap();
        let mut state = problem.pack(&DVector::zeros(2), &lin);
        state[problem.num_codes() + 6] = f64::NAN; // frame 1 t_x
        match problem.energy(&state).unwrap_err() {
            Error::NonFiniteEnergy { term, frame } => {
                assert_eq!(term, "data");
                assert_eq!(frame, 1);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
