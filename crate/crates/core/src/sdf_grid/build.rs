//! Builds a truncated signed distance grid from a sampled surface.
//!
//! Within the truncation band every voxel stores the exact distance to its
//! nearest sample point, signed by one of the strategies in [`SignSource`].
//! Voxels outside the band get `±truncation` with the sign flooded outward
//! from the band, so the field stays consistent without computing distances
//! everywhere.

use std::collections::VecDeque;

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};
use super::{GridSpec, SdfGrid};

/// How to decide inside vs outside for voxels near the surface.
pub enum SignSource<'a> {
    /// Outward unit normals, one per sample point; a voxel is inside when it
    /// lies behind the plane of its nearest sample.
    Normals(&'a [Vector3<f64>]),
    /// Ground-truth interior predicate (analytic shapes in tests and the
    /// synthetic generator).
    Oracle(&'a dyn Fn(&Point3<f64>) -> bool),
    /// Treat everything as exterior (unsigned distance, e.g. thin shells).
    AllOutside,
    /// Vote on axis-aligned ray crossing parity against the thickened point
    /// set. Fallback when no normals are available.
    RayParity,
}

/// Builds a truncated signed distance grid from surface samples.
///
/// Every sample must fall within the grid interior expanded by one
/// truncation distance; points further out cannot influence any stored
/// voxel and indicate a mis-sized grid.
pub fn build_sdf_from_points(
    points: &[Point3<f64>],
    spec: &GridSpec,
    sign: SignSource<'_>,
) -> Result<SdfGrid> {
    spec.validate()?;
    if points.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    if let SignSource::Normals(normals) = &sign {
        if normals.len() != points.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                actual: normals.len(),
            });
        }
        if normals.iter().all(|n| n.norm() < 1e-9) {
            return Err(Error::DegenerateNormals);
        }
    }

    let lo = spec.min_corner();
    let hi = spec.max_corner();
    let margin = spec.truncation;
    for (idx, p) in points.iter().enumerate() {
        let ok = (0..3).all(|a| p[a].is_finite() && p[a] >= lo[a] - margin && p[a] <= hi[a] + margin);
        if !ok {
            return Err(Error::PointOutOfBounds { index: idx });
        }
    }

    let (nx, ny, nz) = spec.dims;
    let n_vox = spec.num_voxels();
    // nearest surface sample per voxel, exact within the truncation band
    let mut best_d2 = vec![f64::INFINITY; n_vox];
    let mut best_pt = vec![usize::MAX; n_vox];

    // Splat radius: a voxel at distance <= truncation from a point is at most
    // ceil(truncation/voxel)+1 cells away from the point's cell in any axis.
    let reach = (spec.truncation / spec.voxel_size).ceil() as isize + 1;
    for (pi, p) in points.iter().enumerate() {
        let g = spec.grid_coords(p);
        let ci = g.x.round() as isize;
        let cj = g.y.round() as isize;
        let ck = g.z.round() as isize;
        let i_range = ((ci - reach).max(0) as usize)..=((ci + reach).min(nx as isize - 1).max(0) as usize);
        for i in i_range {
            let j_range =
                ((cj - reach).max(0) as usize)..=((cj + reach).min(ny as isize - 1).max(0) as usize);
            for j in j_range {
                let k_range = ((ck - reach).max(0) as usize)
                    ..=((ck + reach).min(nz as isize - 1).max(0) as usize);
                for k in k_range {
                    let c = spec.voxel_center(i, j, k);
                    let d2 = (c - p).norm_squared();
                    let idx = spec.index(i, j, k);
                    if d2 < best_d2[idx] {
                        best_d2[idx] = d2;
                        best_pt[idx] = pi;
                    }
                }
            }
        }
    }

    let trunc = spec.truncation;
    let mut values = vec![f64::NAN; n_vox];
    let mut queue = VecDeque::new();
    let parity = match &sign {
        SignSource::RayParity => Some(ParityOracle::new(points, spec)),
        _ => None,
    };

    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let idx = spec.index(i, j, k);
                if best_pt[idx] == usize::MAX {
                    continue;
                }
                let c = spec.voxel_center(i, j, k);
                let d = best_d2[idx].sqrt().min(trunc);
                let inside = match &sign {
                    SignSource::Normals(normals) => {
                        let pi = best_pt[idx];
                        (c - points[pi]).dot(&normals[pi]) < 0.0
                    }
                    SignSource::Oracle(f) => f(&c),
                    SignSource::AllOutside => false,
                    SignSource::RayParity => parity.as_ref().unwrap().is_inside(&c),
                };
                values[idx] = if inside { -d } else { d };
                queue.push_back(idx);
            }
        }
    }

    // Flood the sign outward; unreached voxels take +-truncation exactly.
    let strides = [1isize, nx as isize, (nx * ny) as isize];
    while let Some(idx) = queue.pop_front() {
        let sign_here = values[idx].signum();
        let i = idx % nx;
        let j = (idx / nx) % ny;
        let k = idx / (nx * ny);
        let coords = [i as isize, j as isize, k as isize];
        let lims = [nx as isize, ny as isize, nz as isize];
        for a in 0..3 {
            for step in [-1isize, 1] {
                let c = coords[a] + step;
                if c < 0 || c >= lims[a] {
                    continue;
                }
                let nidx = (idx as isize + step * strides[a]) as usize;
                if values[nidx].is_nan() {
                    values[nidx] = sign_here * trunc;
                    queue.push_back(nidx);
                }
            }
        }
    }

    SdfGrid::new(*spec, values)
}

/// Inside/outside test by majority vote over 14 rays (axes plus corner
/// diagonals): a ray starting inside a closed surface crosses it an odd
/// number of times. Crossings are detected as clusters of sample points
/// within a thin tube around the ray.
struct ParityOracle<'a> {
    points: &'a [Point3<f64>],
    /// point indices bucketed by voxel cell for fast lookup along rays
    cells: std::collections::HashMap<(i32, i32, i32), Vec<usize>>,
    spec: GridSpec,
    directions: Vec<Vector3<f64>>,
    max_range: f64,
}

impl<'a> ParityOracle<'a> {
    fn new(points: &'a [Point3<f64>], spec: &GridSpec) -> Self {
        let mut cells: std::collections::HashMap<(i32, i32, i32), Vec<usize>> =
            std::collections::HashMap::new();
        for (i, p) in points.iter().enumerate() {
            let g = spec.grid_coords(p);
            cells
                .entry((g.x.round() as i32, g.y.round() as i32, g.z.round() as i32))
                .or_default()
                .push(i);
        }
        let mut directions = Vec::with_capacity(14);
        for axis in 0..3 {
            for s in [-1.0, 1.0] {
                let mut d = Vector3::zeros();
                d[axis] = s;
                directions.push(d);
            }
        }
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    directions.push(Vector3::new(sx, sy, sz).normalize());
                }
            }
        }
        // rays must reach past the lattice and its truncation margin
        let max_range = (spec.max_corner() - spec.min_corner()).norm()
            + 2.0 * (spec.truncation + spec.voxel_size);
        Self {
            points,
            cells,
            spec: *spec,
            directions,
            max_range,
        }
    }

    fn is_inside(&self, origin: &Point3<f64>) -> bool {
        let mut inside_votes = 0;
        for d in &self.directions {
            if self.crossings(origin, d) % 2 == 1 {
                inside_votes += 1;
            }
        }
        2 * inside_votes > self.directions.len()
    }

    /// Number of surface crossings along a ray, i.e. clusters of nearby
    /// sample points separated by gaps of more than two voxels.
    fn crossings(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> usize {
        let voxel = self.spec.voxel_size;
        let tube = voxel;

        let mut seen = std::collections::HashSet::new();
        let mut offsets: Vec<f64> = Vec::new();
        let steps = (self.max_range / voxel).ceil() as usize;
        for s in 0..=steps {
            let pos = origin + dir * (s as f64 * voxel);
            let g = self.spec.grid_coords(&pos);
            let (ci, cj, ck) = (g.x.round() as i32, g.y.round() as i32, g.z.round() as i32);
            for di in -1..=1 {
                for dj in -1..=1 {
                    for dk in -1..=1 {
                        let Some(ids) = self.cells.get(&(ci + di, cj + dj, ck + dk)) else {
                            continue;
                        };
                        for &pi in ids {
                            if !seen.insert(pi) {
                                continue;
                            }
                            let rel = self.points[pi] - origin;
                            let along = rel.dot(dir);
                            if along >= 0.0 && (rel - along * dir).norm() <= tube {
                                offsets.push(along);
                            }
                        }
                    }
                }
            }
        }

        offsets.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut clusters = 0;
        let mut last = f64::NEG_INFINITY;
        for &o in &offsets {
            if o - last > 2.0 * voxel {
                clusters += 1;
            }
            last = o;
        }
        clusters
    }
}
