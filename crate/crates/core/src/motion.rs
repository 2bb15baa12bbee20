//! Vehicle pose state, the three kinematic regimes, first-order covariance
//! propagation of velocity noise, and the ground-plane prior.
//!
//! A pose holds six scalars [t_x, t_y, t_z, theta, v, omega]: world
//! translation, yaw about the (downward) vertical axis, forward speed and
//! yaw rate. Prediction integrates exactly along a circular arc (or a line,
//! or stays put), never via Euler steps.

use nalgebra::{Matrix6, Matrix6x2, Point3, SVector, Vector3, Vector6};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{angle_diff, wrap_angle};

/// Per-frame object state: translation, yaw, forward speed, yaw rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub t: Vector3<f64>,
    /// Yaw about the vertical axis, wrapped to (-pi, pi]; zero faces -z.
    pub theta: f64,
    /// Forward speed (m/s), signed along the heading.
    pub v: f64,
    /// Yaw rate (rad/s).
    pub omega: f64,
}

impl Pose {
    pub fn new(t: Vector3<f64>, theta: f64, v: f64, omega: f64) -> Self {
        Self {
            t,
            theta: wrap_angle(theta),
            v,
            omega,
        }
    }

    /// State as [t_x, t_y, t_z, theta, v, omega], the optimizer's layout.
    pub fn as_vector(&self) -> Vector6<f64> {
        Vector6::new(self.t.x, self.t.y, self.t.z, self.theta, self.v, self.omega)
    }

    pub fn from_vector(x: &Vector6<f64>) -> Self {
        Self::new(Vector3::new(x[0], x[1], x[2]), x[3], x[4], x[5])
    }

    /// Object-to-world rigid transform of this pose.
    pub fn object_to_world(&self) -> nalgebra::Isometry3<f64> {
        crate::geom::object_to_world(&self.t, self.theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MotionRegime {
    Turning,
    Straight,
    Standing,
}

/// Classification thresholds on the median velocities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionThresholds {
    pub eps_v: f64,
    pub eps_omega: f64,
}

impl Default for MotionThresholds {
    fn default() -> Self {
        // parked and lane-keeping cars classify as intended at 10 Hz
        Self {
            eps_v: 0.5,
            eps_omega: 0.03,
        }
    }
}

/// Standing wins over Straight wins over Turning; the raw case conditions
/// overlap (slow *and* straight), so precedence makes them exhaustive.
pub fn classify(v: f64, omega: f64, thresholds: &MotionThresholds) -> MotionRegime {
    if v.abs() < thresholds.eps_v {
        MotionRegime::Standing
    } else if omega.abs() < thresholds.eps_omega {
        MotionRegime::Straight
    } else {
        MotionRegime::Turning
    }
}

/// Velocity noise per prediction step plus the constant additive floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionNoise {
    pub sigma_v: f64,
    pub sigma_omega: f64,
    /// Diagonal of the floor covariance, state order [t, theta, v, omega].
    pub floor: Vector6<f64>,
}

impl Default for MotionNoise {
    fn default() -> Self {
        Self {
            sigma_v: 1.0,
            sigma_omega: 0.1,
            floor: Vector6::new(
                0.05 * 0.05,
                0.05 * 0.05,
                0.05 * 0.05,
                0.02 * 0.02,
                0.5 * 0.5,
                0.05 * 0.05,
            ),
        }
    }
}

/// sin(u)/u with a series branch for small arguments.
fn sinc(u: f64) -> f64 {
    if u.abs() < 1e-4 {
        let u2 = u * u;
        1.0 - u2 / 6.0 + u2 * u2 / 120.0
    } else {
        u.sin() / u
    }
}

/// d/du [sin(u)/u], series branch avoids the cos/u - sin/u^2 cancellation.
fn sinc_deriv(u: f64) -> f64 {
    if u.abs() < 1e-3 {
        let u2 = u * u;
        -u / 3.0 + u * u2 / 30.0
    } else {
        (u * u.cos() - u.sin()) / (u * u)
    }
}

/// Translation increment of the circular-arc model, stable for small
/// |omega * dt|. Algebraically equal to
/// dx = (v/w)(cos theta - cos(theta+w dt)), dz = (v/w)(sin theta - sin(theta+w dt)),
/// which integrates the heading (sin theta, -cos theta) and so collapses onto
/// the straight-line step as omega -> 0.
fn arc_displacement(theta: f64, v: f64, omega: f64, dt: f64) -> (f64, f64) {
    let a = omega * dt;
    let s = v * dt * sinc(a / 2.0);
    let mid = theta + a / 2.0;
    (s * mid.sin(), -s * mid.cos())
}

/// One prediction step of the active kinematic model. Preserves t_y, v and
/// omega exactly in every regime.
pub fn predict(pose: &Pose, dt: f64, regime: MotionRegime) -> Pose {
    match regime {
        MotionRegime::Standing => *pose,
        MotionRegime::Straight => {
            let d = pose.v * dt;
            Pose::new(
                pose.t + Vector3::new(d * pose.theta.sin(), 0.0, -d * pose.theta.cos()),
                pose.theta,
                pose.v,
                pose.omega,
            )
        }
        MotionRegime::Turning => {
            let (dx, dz) = arc_displacement(pose.theta, pose.v, pose.omega, dt);
            Pose::new(
                pose.t + Vector3::new(dx, 0.0, dz),
                pose.theta + pose.omega * dt,
                pose.v,
                pose.omega,
            )
        }
    }
}

/// Full Jacobian of the prediction map with respect to the previous state,
/// state order [t_x, t_y, t_z, theta, v, omega]. Identity plus the
/// displacement partials; velocities pass through unchanged.
pub fn predict_jacobian(pose: &Pose, dt: f64, regime: MotionRegime) -> Matrix6<f64> {
    let mut j = Matrix6::identity();
    match regime {
        MotionRegime::Standing => {}
        MotionRegime::Straight => {
            let (sin_t, cos_t) = pose.theta.sin_cos();
            j[(0, 3)] = pose.v * dt * cos_t;
            j[(2, 3)] = pose.v * dt * sin_t;
            j[(0, 4)] = dt * sin_t;
            j[(2, 4)] = -dt * cos_t;
        }
        MotionRegime::Turning => {
            let a = pose.omega * dt;
            let (dx, dz) = arc_displacement(pose.theta, pose.v, pose.omega, dt);
            // d(dx)/d(theta) = -dz, d(dz)/d(theta) = dx (rotation structure)
            j[(0, 3)] = -dz;
            j[(2, 3)] = dx;
            // displacement is linear in v
            let s = dt * sinc(a / 2.0);
            let mid = pose.theta + a / 2.0;
            j[(0, 4)] = s * mid.sin();
            j[(2, 4)] = -s * mid.cos();
            // omega enters through both the sinc amplitude and the midpoint angle
            let sp = sinc_deriv(a / 2.0);
            j[(0, 5)] = pose.v * dt * dt / 2.0 * (sp * mid.sin() + sinc(a / 2.0) * mid.cos());
            j[(2, 5)] = -pose.v * dt * dt / 2.0 * (sp * mid.cos() - sinc(a / 2.0) * mid.sin());
            j[(3, 5)] = dt;
        }
    }
    j
}

/// Sensitivity of the predicted placement (translation + yaw rows only) to
/// the step's velocity noise; the velocity rows stay zero so that Standing
/// propagates exactly the floor covariance.
pub fn velocity_jacobian(pose: &Pose, dt: f64, regime: MotionRegime) -> Matrix6x2<f64> {
    let mut g = Matrix6x2::zeros();
    if regime == MotionRegime::Standing {
        return g;
    }
    let j = predict_jacobian(pose, dt, regime);
    for row in 0..4 {
        g[(row, 0)] = j[(row, 4)];
        g[(row, 1)] = j[(row, 5)];
    }
    g
}

/// Motion-step covariance: velocity noise pushed through the model to first
/// order, plus the constant floor. Always symmetric positive definite.
pub fn propagate_covariance(
    pose: &Pose,
    dt: f64,
    regime: MotionRegime,
    noise: &MotionNoise,
) -> Matrix6<f64> {
    let g = velocity_jacobian(pose, dt, regime);
    let diag = nalgebra::Matrix2::new(
        noise.sigma_v * noise.sigma_v,
        0.0,
        0.0,
        noise.sigma_omega * noise.sigma_omega,
    );
    let mut sigma = g * diag * g.transpose();
    for i in 0..6 {
        sigma[(i, i)] += noise.floor[i];
    }
    sigma
}

/// Inverse Cholesky factor L^{-1} with Sigma = L L^T, so that
/// ||L^{-1} a||^2 = a^T Sigma^{-1} a.
pub fn whitener(sigma: &Matrix6<f64>) -> Result<Matrix6<f64>> {
    let chol = nalgebra::Cholesky::new(*sigma).ok_or(Error::SingularCovariance)?;
    chol.l()
        .solve_lower_triangular(&Matrix6::identity())
        .ok_or(Error::SingularCovariance)
}

/// Pose deviation from the prediction, with the yaw difference wrapped.
pub fn prediction_error(curr: &Pose, prev: &Pose, dt: f64, regime: MotionRegime) -> Vector6<f64> {
    let g = predict(prev, dt, regime);
    let mut e = curr.as_vector() - g.as_vector();
    e[3] = angle_diff(curr.theta, g.theta);
    e
}

/// Whitened 7-component motion residual: six kinematic components
/// L^{-1} (xi_t - g(xi_{t-1})) plus the ground-plane offset over sigma_gp.
pub fn motion_residual(
    curr: &Pose,
    prev: &Pose,
    dt: f64,
    regime: MotionRegime,
    noise: &MotionNoise,
    plane: &GroundPlane,
) -> Result<SVector<f64, 7>> {
    let sigma = propagate_covariance(prev, dt, regime, noise);
    let l_inv = whitener(&sigma)?;
    let kinematic = l_inv * prediction_error(curr, prev, dt, regime);
    let mut r = SVector::<f64, 7>::zeros();
    r.fixed_rows_mut::<6>(0).copy_from(&kinematic);
    r[6] = (curr.t.y - plane.elevation(curr.t.x, curr.t.z)) / plane.sigma2.sqrt();
    Ok(r)
}

/// Road surface as a plane a x + b y + c z + d = 0 with unit normal, plus
/// the elevation variance used to weight the prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundPlane {
    /// [a, b, c, d], normal (a, b, c) unit length with b > 0.
    pub coeffs: [f64; 4],
    /// Variance of the elevation estimate (m^2).
    pub sigma2: f64,
    /// Set when estimation fell back to the world y = 0 plane.
    pub fallback: bool,
}

/// Elevation variance floor; estimated planes never claim to be tighter.
pub const PLANE_SIGMA2_FLOOR: f64 = 0.05 * 0.05;

/// Maximum tilt from vertical a plausible road normal may have.
const MAX_TILT_COS: f64 = std::f64::consts::FRAC_1_SQRT_2;

impl GroundPlane {
    /// Validates and normalizes raw coefficients: unit normal, b > 0,
    /// within 45 degrees of vertical.
    pub fn from_coeffs(raw: [f64; 4], sigma2: f64) -> Result<Self> {
        let n = Vector3::new(raw[0], raw[1], raw[2]);
        let len = n.norm();
        if !len.is_finite() || len < 1e-12 {
            return Err(Error::Track("ground plane has a zero normal".into()));
        }
        if n.y.abs() / len < MAX_TILT_COS {
            return Err(Error::Track(
                "ground plane normal is tilted more than 45 degrees from vertical".into(),
            ));
        }
        let flip = if raw[1] < 0.0 { -1.0 } else { 1.0 };
        Ok(Self {
            coeffs: [
                flip * raw[0] / len,
                flip * raw[1] / len,
                flip * raw[2] / len,
                flip * raw[3] / len,
            ],
            sigma2: sigma2.max(PLANE_SIGMA2_FLOOR),
            fallback: false,
        })
    }

    /// The world y = 0 plane with inflated variance, used when estimation
    /// has too little support.
    pub fn fallback() -> Self {
        Self {
            coeffs: [0.0, 1.0, 0.0, 0.0],
            sigma2: 1.0,
            fallback: true,
        }
    }

    /// Road height (y value) under a ground position.
    pub fn elevation(&self, x: f64, z: f64) -> f64 {
        let [a, b, c, d] = self.coeffs;
        -(a * x + c * z + d) / b
    }

    /// (d elevation / dx, d elevation / dz).
    pub fn elevation_gradient(&self) -> (f64, f64) {
        let [a, b, c, _] = self.coeffs;
        (-a / b, -c / b)
    }

    /// True when the point lies on the sky side of the plane (y-down:
    /// smaller y is higher).
    pub fn is_above(&self, p: &Point3<f64>) -> bool {
        p.y < self.elevation(p.x, p.z)
    }
}

/// Robust plane fit: RANSAC over point triples followed by least-squares
/// refinement on the consensus set. Deterministic (fixed internal seed).
/// Fewer than 50 candidates falls back to the world y = 0 plane, flagged.
pub fn fit_ground_plane(points: &[Point3<f64>]) -> GroundPlane {
    const MIN_POINTS: usize = 50;
    const ITERATIONS: usize = 300;
    const INLIER_TOL: f64 = 0.05;

    if points.len() < MIN_POINTS {
        return GroundPlane::fallback();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9);
    let mut best: Option<(usize, Vector3<f64>, f64)> = None;
    for _ in 0..ITERATIONS {
        let i = rng.random_range(0..points.len());
        let j = rng.random_range(0..points.len());
        let k = rng.random_range(0..points.len());
        if i == j || j == k || i == k {
            continue;
        }
        let n = (points[j] - points[i]).cross(&(points[k] - points[i]));
        let len = n.norm();
        if len < 1e-9 {
            continue;
        }
        let n = n / len;
        if n.y.abs() < MAX_TILT_COS {
            continue;
        }
        let d = -n.dot(&points[i].coords);
        let inliers = points
            .iter()
            .filter(|p| (n.dot(&p.coords) + d).abs() < INLIER_TOL)
            .count();
        if best.map_or(true, |(c, _, _)| inliers > c) {
            best = Some((inliers, n, d));
        }
    }

    let Some((count, mut normal, mut offset)) = best else {
        return GroundPlane::fallback();
    };
    if count < MIN_POINTS / 2 {
        return GroundPlane::fallback();
    }

    // two rounds of least-squares refinement on the consensus set
    let mut variance = 0.0;
    for _ in 0..2 {
        let inliers: Vec<&Point3<f64>> = points
            .iter()
            .filter(|p| (normal.dot(&p.coords) + offset).abs() < INLIER_TOL)
            .collect();
        if inliers.len() < 3 {
            break;
        }
        let centroid = inliers
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p.coords)
            / inliers.len() as f64;
        let mut scatter = nalgebra::Matrix3::zeros();
        for p in &inliers {
            let r = p.coords - centroid;
            scatter += r * r.transpose();
        }
        let eig = scatter.symmetric_eigen();
        let min_idx = eig.eigenvalues.imin();
        let n = eig.eigenvectors.column(min_idx).into_owned();
        if n.y.abs() < MAX_TILT_COS {
            break;
        }
        normal = n.normalize();
        offset = -normal.dot(&centroid);
        variance = inliers
            .iter()
            .map(|p| (normal.dot(&p.coords) + offset).powi(2))
            .sum::<f64>()
            / inliers.len() as f64;
    }

    GroundPlane::from_coeffs([normal.x, normal.y, normal.z, offset], variance)
        .unwrap_or_else(|_| GroundPlane::fallback())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pose(t: (f64, f64, f64), theta: f64, v: f64, omega: f64) -> Pose {
        Pose::new(Vector3::new(t.0, t.1, t.2), theta, v, omega)
    }

    #[test]
    fn classify_cases() {
        let th = MotionThresholds::default();
        assert_eq!(classify(0.0, 0.0, &th), MotionRegime::Standing);
        let th2 = MotionThresholds {
            eps_v: 0.5,
            eps_omega: 0.05,
        };
        assert_eq!(classify(10.0, 0.001, &th2), MotionRegime::Straight);
        assert_eq!(classify(10.0, 0.2, &th2), MotionRegime::Turning);
        // standing takes precedence over the omega condition
        assert_eq!(classify(0.1, 10.0, &th), MotionRegime::Standing);
    }

    #[test]
    fn standing_is_identity() {
        let p = pose((1.0, 2.0, 3.0), 0.7, 0.1, 0.05);
        let q = predict(&p, 0.1, MotionRegime::Standing);
        assert_eq!(p, q);
    }

    #[test]
    fn straight_step_matches_reference() {
        let p = pose((0.0, 0.0, 0.0), 0.0, 2.0, 0.0);
        let q = predict(&p, 0.1, MotionRegime::Straight);
        assert_relative_eq!(q.t.x, 0.0, epsilon = 1e-15);
        assert_relative_eq!(q.t.z, -0.2, epsilon = 1e-15);
        assert_eq!(q.theta, 0.0);
    }

    #[test]
    fn turning_step_matches_reference() {
        let p = pose((0.0, 0.0, 0.0), 0.0, 1.0, 0.5);
        let q = predict(&p, 1.0, MotionRegime::Turning);
        // radius v/w = 2; positive yaw rate curves the -z heading toward +x
        assert_relative_eq!(q.t.x, 2.0 - 2.0 * 0.5f64.cos(), epsilon = 1e-12);
        assert_relative_eq!(q.t.z, -2.0 * 0.5f64.sin(), epsilon = 1e-12);
        assert_relative_eq!(q.theta, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn predict_preserves_height_and_velocities() {
        let p = pose((1.0, -0.8, 2.0), 0.4, 3.0, 0.2);
        for regime in [
            MotionRegime::Standing,
            MotionRegime::Straight,
            MotionRegime::Turning,
        ] {
            let q = predict(&p, 0.1, regime);
            assert_eq!(q.t.y, p.t.y);
            assert_eq!(q.v, p.v);
            assert_eq!(q.omega, p.omega);
        }
    }

    #[test]
    fn turning_approaches_straight_linearly_in_omega() {
        // the two models agree as omega -> 0 at any heading; the
        // discrepancy shrinks linearly with omega
        let dt = 0.1;
        let mut errs = Vec::new();
        for omega in [1e-2, 1e-3, 1e-4] {
            let p = pose((0.0, 0.0, 0.0), 0.7, 2.0, omega);
            let a = predict(&p, dt, MotionRegime::Turning);
            let b = predict(&p, dt, MotionRegime::Straight);
            errs.push((a.as_vector() - b.as_vector()).norm());
        }
        for w in errs.windows(2) {
            let ratio = w[1] / w[0];
            assert!((ratio - 0.1).abs() < 0.03, "decay ratio {ratio}");
        }
    }

    #[test]
    fn tiny_omega_turning_is_finite_and_matches_series_limit() {
        let p = pose((0.0, 0.0, 0.0), 0.3, 5.0, 1e-13);
        let q = predict(&p, 0.1, MotionRegime::Turning);
        assert!(q.t.iter().all(|c| c.is_finite()));
        // limit of the arc model: dx -> v dt sin(theta), dz -> -v dt cos(theta)
        assert_relative_eq!(q.t.x, 0.5 * 0.3f64.sin(), epsilon = 1e-9);
        assert_relative_eq!(q.t.z, -0.5 * 0.3f64.cos(), epsilon = 1e-9);
    }

    #[test]
    fn arc_composition_telescopes() {
        let p = pose((1.0, 0.5, -2.0), 0.3, 5.0, 0.4);
        let dt = 0.8;
        let one = predict(&p, dt, MotionRegime::Turning);
        let k = 16;
        let mut stepped = p;
        for _ in 0..k {
            stepped = predict(&stepped, dt / k as f64, MotionRegime::Turning);
        }
        assert!((one.as_vector() - stepped.as_vector()).norm() < 1e-9);
    }

    #[test]
    fn predict_jacobian_matches_finite_differences() {
        let h = 1e-6;
        for (regime, p) in [
            (MotionRegime::Standing, pose((1.0, 2.0, 3.0), 0.5, 0.1, 0.0)),
            (MotionRegime::Straight, pose((0.5, -1.0, 2.0), 0.8, 4.0, 0.0)),
            (MotionRegime::Turning, pose((-2.0, 0.2, 1.0), -0.6, 6.0, 0.35)),
            (MotionRegime::Turning, pose((0.0, 0.0, 0.0), 0.1, 3.0, 1e-5)),
        ] {
            let j = predict_jacobian(&p, 0.1, regime);
            let x0 = p.as_vector();
            for col in 0..6 {
                let mut hi = x0;
                let mut lo = x0;
                hi[col] += h;
                lo[col] -= h;
                let fhi = predict(&Pose::from_vector(&hi), 0.1, regime).as_vector();
                let flo = predict(&Pose::from_vector(&lo), 0.1, regime).as_vector();
                let fd = (fhi - flo) / (2.0 * h);
                for row in 0..6 {
                    let scale = j[(row, col)].abs().max(1.0);
                    assert!(
                        (j[(row, col)] - fd[row]).abs() / scale < 1e-6,
                        "{regime:?} J[{row},{col}] = {} vs fd {}",
                        j[(row, col)],
                        fd[row]
                    );
                }
            }
        }
    }

    #[test]
    fn standing_covariance_is_exactly_the_floor() {
        let noise = MotionNoise::default();
        let p = pose((0.0, 0.0, 0.0), 0.2, 0.0, 0.0);
        let sigma = propagate_covariance(&p, 0.1, MotionRegime::Standing, &noise);
        assert_eq!(sigma, Matrix6::from_diagonal(&noise.floor));
    }

    #[test]
    fn straight_covariance_puts_velocity_noise_on_z_only() {
        let noise = MotionNoise::default();
        let dt = 0.1;
        let p = pose((0.0, 0.0, 0.0), 0.0, 5.0, 0.0);
        let sigma = propagate_covariance(&p, dt, MotionRegime::Straight, &noise);
        let expect_zz = noise.floor[2] + (noise.sigma_v * dt).powi(2);
        assert_relative_eq!(sigma[(2, 2)], expect_zz, epsilon = 1e-15);
        for i in 0..6 {
            for j in 0..6 {
                if (i, j) != (2, 2) {
                    let expect = if i == j { noise.floor[i] } else { 0.0 };
                    assert_relative_eq!(sigma[(i, j)], expect, epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn covariance_is_spd_in_all_regimes() {
        let noise = MotionNoise::default();
        for regime in [
            MotionRegime::Standing,
            MotionRegime::Straight,
            MotionRegime::Turning,
        ] {
            let p = pose((3.0, -1.0, 7.0), 1.1, 8.0, 0.4);
            let sigma = propagate_covariance(&p, 0.1, regime, &noise);
            assert_relative_eq!((sigma - sigma.transpose()).norm(), 0.0, epsilon = 1e-12);
            assert!(nalgebra::Cholesky::new(sigma).is_some(), "{regime:?}");
        }
    }

    #[test]
    fn residual_of_exact_prediction_is_zero() {
        let noise = MotionNoise::default();
        let plane = GroundPlane::from_coeffs([0.0, 1.0, 0.0, 0.0], 0.01).unwrap();
        let prev = pose((0.0, 0.0, 0.0), 0.2, 3.0, 0.1);
        let curr = predict(&prev, 0.1, MotionRegime::Turning);
        let r = motion_residual(&curr, &prev, 0.1, MotionRegime::Turning, &noise, &plane).unwrap();
        assert!(r.norm() < 1e-12, "residual {r}");
    }

    #[test]
    fn whitened_norm_equals_mahalanobis() {
        let noise = MotionNoise::default();
        let prev = pose((1.0, 0.3, -2.0), 0.5, 4.0, 0.2);
        let sigma = propagate_covariance(&prev, 0.1, MotionRegime::Turning, &noise);
        let l_inv = whitener(&sigma).unwrap();
        let a = Vector6::new(0.3, -0.1, 0.2, 0.05, -0.4, 0.02);
        let whitened = (l_inv * a).norm_squared();
        let direct = (a.transpose() * sigma.try_inverse().unwrap() * a)[0];
        assert_relative_eq!(whitened, direct, max_relative = 1e-9);
    }

    #[test]
    fn doubling_sigma_v_halves_a_velocity_induced_deviation() {
        // negligible floor isolates the whitening algebra
        let floor = Vector6::repeat(1e-12);
        let dt = 0.1;
        let prev = pose((0.0, 0.0, 0.0), 0.0, 5.0, 0.0);
        let residual_for = |sigma_v: f64| {
            let noise = MotionNoise {
                sigma_v,
                sigma_omega: 0.1,
                floor,
            };
            let sigma = propagate_covariance(&prev, dt, MotionRegime::Straight, &noise);
            let l_inv = whitener(&sigma).unwrap();
            // deviation caused purely by a forward-velocity error
            let dev = Vector6::new(0.0, 0.0, -dt * 0.7, 0.0, 0.0, 0.0);
            (l_inv * dev).norm()
        };
        let r1 = residual_for(1.0);
        let r2 = residual_for(2.0);
        assert_relative_eq!(r2 / r1, 0.5, max_relative = 1e-5);
    }

    #[test]
    fn yaw_difference_in_residual_wraps() {
        let noise = MotionNoise::default();
        let plane = GroundPlane::from_coeffs([0.0, 1.0, 0.0, 0.0], 0.01).unwrap();
        let prev = pose((0.0, 0.0, 0.0), 3.1, 0.0, 0.0);
        let mut curr = predict(&prev, 0.1, MotionRegime::Standing);
        curr.theta = wrap_angle(3.1 + 0.2); // wraps past pi
        let r =
            motion_residual(&curr, &prev, 0.1, MotionRegime::Standing, &noise, &plane).unwrap();
        // the theta component must reflect 0.2 rad, not ~2pi - 0.2
        let expected = 0.2 / noise.floor[3].sqrt();
        assert_relative_eq!(r[3], expected, max_relative = 1e-9);
    }

    fn disc_points(
        n: usize,
        seed: u64,
        elev: impl Fn(f64, f64) -> f64,
        noise_sd: f64,
    ) -> Vec<Point3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let x = rng.random_range(-8.0..8.0);
                let z = rng.random_range(-8.0..8.0);
                let dy = if noise_sd > 0.0 {
                    rng.sample::<f64, _>(rand_distr::StandardNormal) * noise_sd
                } else {
                    0.0
                };
                Point3::new(x, elev(x, z) + dy, z)
            })
            .collect()
    }

    #[test]
    fn plane_fit_recovers_flat_road() {
        let pts = disc_points(500, 1, |_, _| 1.6, 0.01);
        let plane = fit_ground_plane(&pts);
        assert!(!plane.fallback);
        assert!((plane.elevation(0.0, 0.0) - 1.6).abs() < 0.02);
        assert!((plane.elevation(5.0, -3.0) - 1.6).abs() < 0.02);
        assert!(plane.sigma2 >= PLANE_SIGMA2_FLOOR);
    }

    #[test]
    fn plane_fit_recovers_sloped_road() {
        let pts = disc_points(800, 2, |x, _| 1.5 + 0.08 * x, 0.005);
        let plane = fit_ground_plane(&pts);
        assert!(!plane.fallback);
        assert!((plane.elevation(2.0, 0.0) - 1.66).abs() < 0.02);
        let (gx, gz) = plane.elevation_gradient();
        assert!((gx - 0.08).abs() < 0.01, "gx {gx}");
        assert!(gz.abs() < 0.01, "gz {gz}");
    }

    #[test]
    fn ransac_picks_the_majority_plane() {
        let mut pts = disc_points(400, 3, |_, _| 1.6, 0.005);
        pts.extend(disc_points(100, 4, |_, _| 0.4, 0.005));
        let plane = fit_ground_plane(&pts);
        assert!(!plane.fallback);
        assert!((plane.elevation(0.0, 0.0) - 1.6).abs() < 0.03);
    }

    #[test]
    fn too_few_points_falls_back_flagged() {
        let pts = disc_points(10, 5, |_, _| 1.6, 0.0);
        let plane = fit_ground_plane(&pts);
        assert!(plane.fallback);
        assert_eq!(plane.elevation(3.0, 3.0), 0.0);
        assert!(plane.sigma2 >= 1.0);
    }

    #[test]
    fn steep_plane_coefficients_are_rejected() {
        assert!(GroundPlane::from_coeffs([1.0, 0.5, 0.0, 0.0], 0.01).is_err());
        assert!(GroundPlane::from_coeffs([0.0, 0.0, 0.0, 1.0], 0.01).is_err());
    }

    #[test]
    fn is_above_uses_y_down() {
        let plane = GroundPlane::from_coeffs([0.0, 1.0, 0.0, -1.6], 0.01).unwrap();
        assert_relative_eq!(plane.elevation(0.0, 0.0), 1.6);
        // car point 1 m above the road has smaller y
        assert!(plane.is_above(&Point3::new(0.0, 0.6, 0.0)));
        assert!(!plane.is_above(&Point3::new(0.0, 1.7, 0.0)));
    }
}
