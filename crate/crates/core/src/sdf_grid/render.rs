//! Depth rendering and surface sampling by sphere tracing.

use nalgebra::{Isometry3, Point3, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::geom::PinholeCamera;
use super::SdfField;

#[derive(Debug, Clone, Copy)]
pub struct RenderOptions {
    /// Fraction of the queried distance to advance per step; below 1 to
    /// tolerate interpolated fields that are not exact distances.
    pub step_safety: f64,
    pub max_steps: usize,
    /// Absolute distance at which a march counts as a surface hit.
    pub surface_tol: f64,
    /// Extra damped-Newton iterations after a hit to land on the zero
    /// crossing itself rather than the tolerance shell.
    pub polish_steps: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            step_safety: 0.9,
            max_steps: 128,
            surface_tol: 1e-3,
            polish_steps: 40,
        }
    }
}

/// Per-pixel z-depth in the camera frame; misses are NaN.
#[derive(Debug, Clone)]
pub struct DepthMap {
    pub camera: PinholeCamera,
    /// Row-major, `width * height`; depth along the camera z axis.
    pub depths: Vec<f64>,
    /// Set when the camera origin was inside the object; all pixels invalid.
    pub camera_inside: bool,
}

impl DepthMap {
    pub fn depth_at(&self, u: usize, v: usize) -> f64 {
        self.depths[v * self.camera.width + u]
    }

    pub fn valid_count(&self) -> usize {
        self.depths.iter().filter(|d| d.is_finite()).count()
    }

    /// Back-projects every valid pixel into a camera-frame point.
    pub fn to_points(&self) -> Vec<Point3<f64>> {
        let mut pts = Vec::with_capacity(self.valid_count());
        for v in 0..self.camera.height {
            for u in 0..self.camera.width {
                let d = self.depth_at(u, v);
                if d.is_finite() {
                    pts.push(self.camera.back_project(u as f64, v as f64, d));
                }
            }
        }
        pts
    }
}

/// Marches from `origin` along unit `dir`, returning the arc length of the
/// first zero crossing within `[t_near, t_far]`.
fn march(
    field: &dyn SdfField,
    origin: &Point3<f64>,
    dir: &Vector3<f64>,
    t_near: f64,
    t_far: f64,
    opts: &RenderOptions,
) -> Option<f64> {
    let mut s = t_near;
    for _ in 0..opts.max_steps {
        if s > t_far {
            return None;
        }
        let mut phi = field.distance(&(origin + s * dir));
        if phi < opts.surface_tol {
            // damped Newton on s: the directional derivative of a distance
            // field along an incoming ray is ~1, so s += safety * phi
            // converges linearly from either side of the crossing
            for _ in 0..opts.polish_steps {
                if phi.abs() < 1e-10 {
                    break;
                }
                s += opts.step_safety * phi;
                phi = field.distance(&(origin + s * dir));
            }
            if phi.abs() <= opts.surface_tol && s >= t_near && s <= t_far {
                return Some(s);
            }
            // grazing pass: polish drifted off; resume marching from here
            if phi <= 0.0 {
                return None;
            }
        }
        s += opts.step_safety * phi;
    }
    None
}

/// Entry/exit arc lengths of a ray against a sphere, if it intersects.
fn ray_sphere(
    origin: &Point3<f64>,
    dir: &Vector3<f64>,
    center: &Point3<f64>,
    radius: f64,
) -> Option<(f64, f64)> {
    let oc = origin - center;
    let b = oc.dot(dir);
    let c = oc.norm_squared() - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t1 = -b + sq;
    if t1 < 0.0 {
        return None;
    }
    Some(((-b - sq).max(0.0), t1))
}

/// Renders a z-depth map of `field` as seen by `camera`, where
/// `object_to_camera` maps the field's frame into the camera frame.
pub fn render_depth(
    field: &dyn SdfField,
    camera: &PinholeCamera,
    object_to_camera: &Isometry3<f64>,
    opts: &RenderOptions,
) -> DepthMap {
    let mut depths = vec![f64::NAN; camera.width * camera.height];
    let camera_to_object = object_to_camera.inverse();
    let origin = camera_to_object * Point3::origin();
    if field.distance(&origin) < 0.0 {
        return DepthMap {
            camera: *camera,
            depths,
            camera_inside: true,
        };
    }
    let (bc, br) = field.bounding_sphere();

    for v in 0..camera.height {
        for u in 0..camera.width {
            let d_cam = camera.ray_direction(u as f64, v as f64);
            let cos_z = d_cam.z / d_cam.norm();
            let dir = (camera_to_object.rotation * d_cam).normalize();
            let Some((t0, t1)) = ray_sphere(&origin, &dir, &bc, br) else {
                continue;
            };
            if let Some(s) = march(field, &origin, &dir, t0.max(1e-6), t1, opts) {
                depths[v * camera.width + u] = s * cos_z;
            }
        }
    }
    DepthMap {
        camera: *camera,
        depths,
        camera_inside: false,
    }
}

/// Samples points on the zero level set by casting seeded random rays from
/// the bounding sphere toward jittered interior targets. Deterministic for a
/// given seed; returns however many of the `n_rays` casts hit.
pub fn extract_surface_points(
    field: &dyn SdfField,
    n_rays: usize,
    seed: u64,
) -> Vec<Point3<f64>> {
    let (center, radius) = field.bounding_sphere();
    let opts = RenderOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::new();
    for _ in 0..n_rays {
        let o: [f64; 3] = rand_distr::UnitSphere.sample(&mut rng);
        let origin = center + Vector3::new(o[0], o[1], o[2]) * radius;
        let j: [f64; 3] = rand_distr::UnitBall.sample(&mut rng);
        let target = center + Vector3::new(j[0], j[1], j[2]) * (0.25 * radius);
        let dir = (target - origin).normalize();
        if let Some(s) = march(field, &origin, &dir, 0.0, 2.0 * radius, &opts) {
            let p = origin + s * dir;
            if field.distance(&p).abs() <= opts.surface_tol {
                pts.push(p);
            }
        }
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Analytic sphere for exercising the tracer without grid error.
    struct Sphere {
        center: Point3<f64>,
        radius: f64,
    }

    impl SdfField for Sphere {
        fn distance(&self, p: &Point3<f64>) -> f64 {
            (p - self.center).norm() - self.radius
        }
        fn gradient(&self, p: &Point3<f64>) -> Vector3<f64> {
            (p - self.center).normalize()
        }
        fn bounding_sphere(&self) -> (Point3<f64>, f64) {
            (self.center, self.radius + 0.1)
        }
    }

    #[test]
    fn center_pixel_depth_matches_sphere_front_face() {
        let cam = PinholeCamera {
            f: 100.0,
            cx: 16.0,
            cy: 12.0,
            width: 32,
            height: 24,
        };
        let sphere = Sphere {
            center: Point3::new(0.0, 0.0, 5.0),
            radius: 1.0,
        };
        // object frame == camera frame
        let map = render_depth(&sphere, &cam, &Isometry3::identity(), &RenderOptions::default());
        assert!(!map.camera_inside);
        // principal ray: pixel centers are offset by 0.5, so (15, 11) + 0.5 = (15.5, 11.5)
        // is not exactly the axis; find the best pixel instead
        let mut best = f64::INFINITY;
        for d in &map.depths {
            if d.is_finite() && *d < best {
                best = *d;
            }
        }
        // nearest visible depth approaches center distance minus radius
        assert!((best - 4.0).abs() < 2e-3, "nearest depth {best}");
    }

    #[test]
    fn depth_is_z_depth_not_range() {
        let cam = PinholeCamera {
            f: 50.0,
            cx: 32.0,
            cy: 32.0,
            width: 64,
            height: 64,
        };
        let sphere = Sphere {
            center: Point3::new(0.0, 0.0, 10.0),
            radius: 3.0,
        };
        let map = render_depth(&sphere, &cam, &Isometry3::identity(), &RenderOptions::default());
        for v in 0..cam.height {
            for u in 0..cam.width {
                let d = map.depth_at(u, v);
                if !d.is_finite() {
                    continue;
                }
                let p = cam.back_project(u as f64, v as f64, d);
                // on the surface within the hit tolerance (grazing rays
                // terminate anywhere inside the tolerance shell)
                assert_relative_eq!((p - sphere.center).norm(), 3.0, epsilon = 2e-3);
            }
        }
        assert!(map.valid_count() > 100);
    }

    #[test]
    fn rays_missing_the_object_are_invalid() {
        let cam = PinholeCamera {
            f: 10.0,
            cx: 16.0,
            cy: 16.0,
            width: 32,
            height: 32,
        };
        // tiny sphere far off axis: nothing visible
        let sphere = Sphere {
            center: Point3::new(100.0, 0.0, 10.0),
            radius: 0.5,
        };
        let map = render_depth(&sphere, &cam, &Isometry3::identity(), &RenderOptions::default());
        assert_eq!(map.valid_count(), 0);
    }

    #[test]
    fn camera_inside_object_is_flagged() {
        let cam = PinholeCamera {
            f: 10.0,
            cx: 8.0,
            cy: 8.0,
            width: 16,
            height: 16,
        };
        let sphere = Sphere {
            center: Point3::new(0.0, 0.0, 0.2),
            radius: 1.0,
        };
        let map = render_depth(&sphere, &cam, &Isometry3::identity(), &RenderOptions::default());
        assert!(map.camera_inside);
        assert_eq!(map.valid_count(), 0);
    }

    #[test]
    fn object_pose_moves_the_silhouette() {
        let cam = PinholeCamera {
            f: 60.0,
            cx: 32.0,
            cy: 32.0,
            width: 64,
            height: 64,
        };
        let sphere = Sphere {
            center: Point3::origin(),
            radius: 1.0,
        };
        let pose = Isometry3::translation(2.0, 0.0, 8.0);
        let map = render_depth(&sphere, &cam, &pose, &RenderOptions::default());
        assert!(map.valid_count() > 0);
        // all hits must back-project onto the transformed sphere
        for v in 0..cam.height {
            for u in 0..cam.width {
                let d = map.depth_at(u, v);
                if d.is_finite() {
                    let p_cam = cam.back_project(u as f64, v as f64, d);
                    let p_obj = pose.inverse() * p_cam;
                    assert_relative_eq!(p_obj.coords.norm(), 1.0, epsilon = 2e-3);
                }
            }
        }
    }

    #[test]
    fn extracted_surface_points_lie_on_level_set() {
        let sphere = Sphere {
            center: Point3::new(0.3, -0.2, 0.1),
            radius: 0.8,
        };
        let pts = extract_surface_points(&sphere, 2000, 7);
        assert!(pts.len() > 1500, "only {} hits", pts.len());
        for p in &pts {
            assert!(((p - sphere.center).norm() - 0.8).abs() < 1e-3);
        }
        // determinism
        let again = extract_surface_points(&sphere, 2000, 7);
        assert_eq!(pts.len(), again.len());
        assert_eq!(pts[0], again[0]);
    }

    #[test]
    fn surface_points_cover_the_sphere_broadly() {
        let sphere = Sphere {
            center: Point3::origin(),
            radius: 1.0,
        };
        let pts = extract_surface_points(&sphere, 4000, 3);
        // every octant should receive samples
        let mut octants = [0usize; 8];
        for p in &pts {
            let idx = (p.x > 0.0) as usize | ((p.y > 0.0) as usize) << 1 | ((p.z > 0.0) as usize) << 2;
            octants[idx] += 1;
        }
        assert!(octants.iter().all(|&c| c > 100), "octants {octants:?}");
    }
}
