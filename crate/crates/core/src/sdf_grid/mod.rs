//! Truncated signed distance fields on a regular voxel lattice.
//!
//! The canonical object frame is y-down: x lateral (width), y vertical
//! (height, positive down), z longitudinal (length). The object is centered
//! at the grid center. Values are stored x-fastest, then y, then z.

mod build;
mod render;

pub use build::{build_sdf_from_points, SignSource};
pub use render::{extract_surface_points, render_depth, DepthMap, RenderOptions};

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SDF_MAGIC: &[u8; 4] = b"SDFG";
pub const SDF_VERSION: u32 = 1;

/// Geometry of a regular voxel lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Voxel counts along x, y, z.
    pub dims: (usize, usize, usize),
    /// Edge length of a voxel in meters.
    pub voxel_size: f64,
    /// Position of the center of voxel (0,0,0) in the canonical frame.
    pub origin: Vector3<f64>,
    /// Maximum stored absolute distance in meters.
    pub truncation: f64,
}

impl GridSpec {
    pub fn new(
        dims: (usize, usize, usize),
        voxel_size: f64,
        origin: Vector3<f64>,
        truncation: f64,
    ) -> Result<Self> {
        let spec = Self {
            dims,
            voxel_size,
            origin,
            truncation,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Grid centered at `center`, dimensions in voxels.
    pub fn centered(
        dims: (usize, usize, usize),
        voxel_size: f64,
        center: Vector3<f64>,
        truncation: f64,
    ) -> Result<Self> {
        let half = Vector3::new(
            (dims.0 - 1) as f64 / 2.0 * voxel_size,
            (dims.1 - 1) as f64 / 2.0 * voxel_size,
            (dims.2 - 1) as f64 / 2.0 * voxel_size,
        );
        Self::new(dims, voxel_size, center - half, truncation)
    }

    /// Default lattice for a passenger vehicle: 60x40x100 voxels at 0.06 m
    /// (3.6 x 2.4 x 6.0 m), truncation 0.3 m.
    ///
    /// The canonical origin sits at the vehicle's ground-contact point
    /// (bottom-center); the grid is centered on the body at half the nominal
    /// height, leaving margin below the ground line and above the roof.
    pub fn default_vehicle() -> Self {
        Self::centered(
            (60, 40, 100),
            0.06,
            Vector3::new(0.0, -0.75, 0.0),
            0.3,
        )
        .expect("default vehicle spec is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let (nx, ny, nz) = self.dims;
        if nx < 2 || ny < 2 || nz < 2 {
            return Err(Error::GridSpec(format!(
                "dims must be at least 2 per axis, got ({nx}, {ny}, {nz})"
            )));
        }
        if !(self.voxel_size > 0.0) {
            return Err(Error::GridSpec(format!(
                "voxel_size must be positive, got {}",
                self.voxel_size
            )));
        }
        if self.truncation < self.voxel_size {
            return Err(Error::GridSpec(format!(
                "truncation {} must be at least one voxel ({})",
                self.truncation, self.voxel_size
            )));
        }
        if !self.origin.iter().all(|c| c.is_finite()) {
            return Err(Error::GridSpec("origin must be finite".into()));
        }
        Ok(())
    }

    pub fn num_voxels(&self) -> usize {
        self.dims.0 * self.dims.1 * self.dims.2
    }

    /// Flat index, x-fastest.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims.0 * (j + self.dims.1 * k)
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Point3<f64> {
        Point3::from(
            self.origin
                + Vector3::new(i as f64, j as f64, k as f64) * self.voxel_size,
        )
    }

    /// Continuous grid coordinates of a canonical-frame point; voxel centers
    /// map to integer coordinates.
    #[inline]
    pub fn grid_coords(&self, p: &Point3<f64>) -> Vector3<f64> {
        (p.coords - self.origin) / self.voxel_size
    }

    /// Center of voxel (0,0,0); lower corner of the interpolable interior.
    pub fn min_corner(&self) -> Point3<f64> {
        Point3::from(self.origin)
    }

    /// Center of the last voxel; upper corner of the interpolable interior.
    pub fn max_corner(&self) -> Point3<f64> {
        self.voxel_center(self.dims.0 - 1, self.dims.1 - 1, self.dims.2 - 1)
    }

    /// True when `p` lies within the interpolable interior.
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        let lo = self.min_corner();
        let hi = self.max_corner();
        (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a])
    }

    /// Clamps `p` to the interpolable interior.
    pub fn clamp_to_interior(&self, p: &Point3<f64>) -> Point3<f64> {
        let lo = self.min_corner();
        let hi = self.max_corner();
        Point3::new(
            p.x.clamp(lo.x, hi.x),
            p.y.clamp(lo.y, hi.y),
            p.z.clamp(lo.z, hi.z),
        )
    }

    /// Same lattice up to the f32 precision of the file formats; use this
    /// instead of `==` when one side may have been through disk.
    pub fn compatible(&self, other: &GridSpec) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-5 * a.abs().max(b.abs()).max(1.0);
        self.dims == other.dims
            && close(self.voxel_size, other.voxel_size)
            && close(self.truncation, other.truncation)
            && (0..3).all(|a| close(self.origin[a], other.origin[a]))
    }

    pub fn center(&self) -> Point3<f64> {
        Point3::from(self.origin + (self.max_corner() - self.min_corner()) / 2.0)
    }

    /// Radius of a sphere around `center()` containing the whole lattice.
    pub fn bounding_radius(&self) -> f64 {
        ((self.max_corner() - self.min_corner()) / 2.0).norm() + self.voxel_size
    }
}

/// Sparse handle on the 8 lattice corners enclosing a query point, with the
/// trilinear weights. Shared by the grid and the manifold evaluators.
#[derive(Debug, Clone, Copy)]
pub struct CellStencil {
    /// Flat indices of the 8 cell corners, x-fastest local order.
    pub corners: [usize; 8],
    /// Trilinear weights, same order; they sum to 1.
    pub weights: [f64; 8],
    /// Fractional coordinates within the cell.
    pub frac: Vector3<f64>,
    /// Voxel edge length, for converting per-cell to per-meter derivatives.
    pub voxel_size: f64,
}

impl CellStencil {
    /// Stencil for a point inside the interpolable interior. Callers must
    /// clamp beforehand; coordinates are clamped defensively to the last cell.
    pub fn new(spec: &GridSpec, p: &Point3<f64>) -> Self {
        let g = spec.grid_coords(p);
        let (nx, ny, nz) = spec.dims;
        let i0 = (g.x.floor() as isize).clamp(0, nx as isize - 2) as usize;
        let j0 = (g.y.floor() as isize).clamp(0, ny as isize - 2) as usize;
        let k0 = (g.z.floor() as isize).clamp(0, nz as isize - 2) as usize;
        let frac = Vector3::new(
            (g.x - i0 as f64).clamp(0.0, 1.0),
            (g.y - j0 as f64).clamp(0.0, 1.0),
            (g.z - k0 as f64).clamp(0.0, 1.0),
        );
        let mut corners = [0usize; 8];
        let mut weights = [0f64; 8];
        let (fx, fy, fz) = (frac.x, frac.y, frac.z);
        let wx = [1.0 - fx, fx];
        let wy = [1.0 - fy, fy];
        let wz = [1.0 - fz, fz];
        let mut c = 0;
        for dk in 0..2 {
            for dj in 0..2 {
                for di in 0..2 {
                    corners[c] = spec.index(i0 + di, j0 + dj, k0 + dk);
                    weights[c] = wx[di] * wy[dj] * wz[dk];
                    c += 1;
                }
            }
        }
        CellStencil {
            corners,
            weights,
            frac,
            voxel_size: spec.voxel_size,
        }
    }

    /// Blends 8 corner values with the stencil weights.
    #[inline]
    pub fn interpolate(&self, corner_values: &[f64; 8]) -> f64 {
        let mut acc = 0.0;
        for c in 0..8 {
            acc += self.weights[c] * corner_values[c];
        }
        acc
    }

    /// Spatial gradient (per meter) of the trilinear blend of 8 corner values.
    pub fn gradient(&self, v: &[f64; 8]) -> Vector3<f64> {
        let (fx, fy, fz) = (self.frac.x, self.frac.y, self.frac.z);
        // corner order: index bit 0 = x, bit 1 = y, bit 2 = z
        let dx = (v[1] - v[0]) * (1.0 - fy) * (1.0 - fz)
            + (v[3] - v[2]) * fy * (1.0 - fz)
            + (v[5] - v[4]) * (1.0 - fy) * fz
            + (v[7] - v[6]) * fy * fz;
        let dy = (v[2] - v[0]) * (1.0 - fx) * (1.0 - fz)
            + (v[3] - v[1]) * fx * (1.0 - fz)
            + (v[6] - v[4]) * (1.0 - fx) * fz
            + (v[7] - v[5]) * fx * fz;
        let dz = (v[4] - v[0]) * (1.0 - fx) * (1.0 - fy)
            + (v[5] - v[1]) * fx * (1.0 - fy)
            + (v[6] - v[2]) * (1.0 - fx) * fy
            + (v[7] - v[3]) * fx * fy;
        Vector3::new(dx, dy, dz) / self.voxel_size
    }
}

/// Result of a distance query under the clamp-with-overshoot exterior policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub distance: f64,
    /// True when the query point was outside the interpolable interior; the
    /// returned distance then includes the Euclidean overshoot.
    pub outside: bool,
}

/// Discretized truncated signed distance function.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfGrid {
    spec: GridSpec,
    values: Vec<f64>,
}

impl SdfGrid {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.num_voxels() {
            return Err(Error::DimensionMismatch {
                expected: spec.num_voxels(),
                actual: values.len(),
            });
        }
        // No truncation-bound check here: decoded manifold shapes may
        // overshoot +-truncation slightly and must stay storable.
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::GridSpec(format!(
                "non-finite value at flat index {bad}"
            )));
        }
        Ok(Self { spec, values })
    }

    /// Fills a grid by evaluating `f` at every voxel center, clamping to the
    /// truncation bound.
    pub fn from_fn(spec: GridSpec, f: impl Fn(&Point3<f64>) -> f64) -> Result<Self> {
        spec.validate()?;
        let (nx, ny, nz) = spec.dims;
        let trunc = spec.truncation;
        let mut values = Vec::with_capacity(spec.num_voxels());
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    values.push(f(&spec.voxel_center(i, j, k)).clamp(-trunc, trunc));
                }
            }
        }
        Ok(Self { spec, values })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.spec.index(i, j, k)]
    }

    fn gather(&self, stencil: &CellStencil) -> [f64; 8] {
        let mut v = [0.0; 8];
        for c in 0..8 {
            v[c] = self.values[stencil.corners[c]];
        }
        v
    }

    /// Trilinear interpolation; errors when `p` is outside the interior.
    pub fn trilinear(&self, p: &Point3<f64>) -> Result<f64> {
        if !self.spec.contains(p) {
            return Err(Error::OutsideGrid);
        }
        let st = CellStencil::new(&self.spec, p);
        Ok(st.interpolate(&self.gather(&st)))
    }

    /// Analytic spatial gradient of the trilinear blend; errors outside.
    pub fn trilinear_gradient(&self, p: &Point3<f64>) -> Result<Vector3<f64>> {
        if !self.spec.contains(p) {
            return Err(Error::OutsideGrid);
        }
        let st = CellStencil::new(&self.spec, p);
        Ok(st.gradient(&self.gather(&st)))
    }

    /// Total-domain query: clamps the point to the interior and adds the
    /// Euclidean overshoot to the interpolated value, so exterior queries
    /// stay smooth and repelling.
    pub fn sample(&self, p: &Point3<f64>) -> Sample {
        let q = self.spec.clamp_to_interior(p);
        let st = CellStencil::new(&self.spec, &q);
        let base = st.interpolate(&self.gather(&st));
        let overshoot = (p - q).norm();
        Sample {
            distance: base + overshoot,
            outside: overshoot > 0.0,
        }
    }

    /// Gradient consistent with [`SdfGrid::sample`]: interior components of
    /// the trilinear gradient plus the overshoot direction outside.
    pub fn sample_gradient(&self, p: &Point3<f64>) -> Vector3<f64> {
        let q = self.spec.clamp_to_interior(p);
        let st = CellStencil::new(&self.spec, &q);
        let mut grad = st.gradient(&self.gather(&st));
        let over = p - q;
        let norm = over.norm();
        if norm > 0.0 {
            for a in 0..3 {
                if over[a] != 0.0 {
                    grad[a] = 0.0;
                }
            }
            grad += over / norm;
        }
        grad
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(SDF_MAGIC)?;
        w.write_u32::<LittleEndian>(SDF_VERSION)?;
        write_spec(&mut w, &self.spec)?;
        for v in &self.values {
            w.write_f32::<LittleEndian>(*v as f32)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        self.write(BufWriter::new(file))
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read<R: Read>(mut r: R, origin_name: &str) -> Result<Self> {
        let fmt = |m: String| Error::Format {
            path: origin_name.to_string(),
            message: m,
        };
        let io = |e: std::io::Error| Error::io(origin_name, e);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != SDF_MAGIC {
            return Err(fmt(format!("bad magic {magic:?}, expected \"SDFG\"")));
        }
        let version = r.read_u32::<LittleEndian>().map_err(io)?;
        if version != SDF_VERSION {
            return Err(fmt(format!("unsupported version {version}")));
        }
        let spec = read_spec(&mut r).map_err(io)?;
        let n = spec.num_voxels();
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(r.read_f32::<LittleEndian>().map_err(io)? as f64);
        }
        SdfGrid::new(spec, values)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::read(BufReader::new(file), &path.display().to_string())
    }
}

pub(crate) fn write_spec<W: Write>(w: &mut W, spec: &GridSpec) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(spec.dims.0 as u32)?;
    w.write_u32::<LittleEndian>(spec.dims.1 as u32)?;
    w.write_u32::<LittleEndian>(spec.dims.2 as u32)?;
    w.write_f32::<LittleEndian>(spec.voxel_size as f32)?;
    for a in 0..3 {
        w.write_f32::<LittleEndian>(spec.origin[a] as f32)?;
    }
    w.write_f32::<LittleEndian>(spec.truncation as f32)
}

pub(crate) fn read_spec<R: Read>(r: &mut R) -> std::io::Result<GridSpec> {
    let nx = r.read_u32::<LittleEndian>()? as usize;
    let ny = r.read_u32::<LittleEndian>()? as usize;
    let nz = r.read_u32::<LittleEndian>()? as usize;
    let voxel_size = r.read_f32::<LittleEndian>()? as f64;
    let origin = Vector3::new(
        r.read_f32::<LittleEndian>()? as f64,
        r.read_f32::<LittleEndian>()? as f64,
        r.read_f32::<LittleEndian>()? as f64,
    );
    let truncation = r.read_f32::<LittleEndian>()? as f64;
    Ok(GridSpec {
        dims: (nx, ny, nz),
        voxel_size,
        origin,
        truncation,
    })
}

/// Anything that answers signed-distance queries over all of R^3 (grids and
/// decoded manifold shapes use the clamp-with-overshoot policy outside their
/// lattice; analytic shapes are global).
pub trait SdfField {
    fn distance(&self, p: &Point3<f64>) -> f64;

    fn gradient(&self, p: &Point3<f64>) -> Vector3<f64>;

    /// Sphere guaranteed to contain the zero level set.
    fn bounding_sphere(&self) -> (Point3<f64>, f64);
}

impl SdfField for SdfGrid {
    fn distance(&self, p: &Point3<f64>) -> f64 {
        self.sample(p).distance
    }

    fn gradient(&self, p: &Point3<f64>) -> Vector3<f64> {
        self.sample_gradient(p)
    }

    fn bounding_sphere(&self) -> (Point3<f64>, f64) {
        (self.spec.center(), self.spec.bounding_radius())
    }
}
