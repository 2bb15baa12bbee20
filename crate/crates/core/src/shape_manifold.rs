//! Low-dimensional shape space: PCA over stacked signed-distance grids.
//!
//! Training shapes share one lattice; each grid is flattened (x-fastest)
//! into a column, the mean is removed, and the leading principal directions
//! are taken as the basis. A shape code `z` decodes to `mean + basis * z`,
//! and the point evaluator interpolates that decoded field lazily so a
//! single query costs O(8 R) instead of a full decode.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, DVector, Point3, Vector3};

use crate::error::{Error, Result};
use crate::sdf_grid::{read_spec, write_spec, CellStencil, GridSpec, SdfField, SdfGrid};

pub const MANIFOLD_MAGIC: &[u8; 4] = b"SMAN";
pub const MANIFOLD_VERSION: u32 = 1;

/// PCA shape space over flattened signed-distance grids.
#[derive(Debug, Clone)]
pub struct ShapeManifold {
    spec: GridSpec,
    /// Flattened mean shape, length `spec.num_voxels()`.
    mean: DVector<f64>,
    /// Per-component variances, descending.
    eigenvalues: DVector<f64>,
    /// Orthonormal basis, one column per retained component.
    basis: DMatrix<f64>,
}

/// Value and derivatives of the decoded field at one point, sharing a single
/// interpolation stencil.
#[derive(Debug, Clone)]
pub struct PointEval {
    pub value: f64,
    /// Spatial gradient (per meter), exterior policy as in [`SdfGrid`].
    pub grad_x: Vector3<f64>,
    /// Derivative of the value with respect to the shape code.
    pub grad_z: DVector<f64>,
    pub outside: bool,
}

impl ShapeManifold {
    /// Learns an `r`-dimensional space from training grids on a shared
    /// lattice. At most `n - 1` components are extractable from `n` shapes.
    pub fn train(grids: &[SdfGrid], r: usize) -> Result<Self> {
        if grids.len() < 2 {
            return Err(Error::Manifold(format!(
                "need at least 2 training shapes, got {}",
                grids.len()
            )));
        }
        let spec = *grids[0].spec();
        for (i, g) in grids.iter().enumerate().skip(1) {
            if !g.spec().compatible(&spec) {
                return Err(Error::Manifold(format!(
                    "training shape {i} uses a different lattice than shape 0"
                )));
            }
        }
        let n = grids.len();
        if r == 0 || r > n - 1 {
            return Err(Error::Manifold(format!(
                "requested {r} components, but {n} shapes span at most {}",
                n - 1
            )));
        }

        let m = spec.num_voxels();
        let mut mean = DVector::zeros(m);
        for g in grids {
            for (acc, v) in mean.iter_mut().zip(g.values()) {
                *acc += v;
            }
        }
        mean /= n as f64;

        // centered data, one column per shape
        let mut data = DMatrix::zeros(m, n);
        for (j, g) in grids.iter().enumerate() {
            for (i, v) in g.values().iter().enumerate() {
                data[(i, j)] = v - mean[i];
            }
        }

        // eigen-decompose the small Gram matrix instead of the huge covariance
        let gram = data.transpose() * &data;
        let eig = gram.symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());

        let scale = eig.eigenvalues[order[0]].max(1e-300);
        let mut basis = DMatrix::zeros(m, r);
        let mut eigenvalues = DVector::zeros(r);
        for c in 0..r {
            let lam = eig.eigenvalues[order[c]];
            if lam <= scale * 1e-12 {
                return Err(Error::Manifold(format!(
                    "training set rank {c} is below the requested {r} components \
                     (duplicate or near-duplicate shapes)"
                )));
            }
            let mut u = &data * eig.eigenvectors.column(order[c]);
            u /= u.norm();
            // canonical sign: largest-magnitude entry positive
            let imax = u.iamax();
            if u[imax] < 0.0 {
                u = -u;
            }
            basis.set_column(c, &u);
            eigenvalues[c] = lam / (n as f64 - 1.0);
        }

        Ok(Self {
            spec,
            mean,
            eigenvalues,
            basis,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn num_components(&self) -> usize {
        self.basis.ncols()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Per-component standard deviations, the natural scale of shape codes.
    pub fn stddevs(&self) -> DVector<f64> {
        self.eigenvalues.map(f64::sqrt)
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Projects a flattened grid onto the shape space.
    pub fn encode(&self, values: &[f64]) -> Result<DVector<f64>> {
        if values.len() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                actual: values.len(),
            });
        }
        let centered = DVector::from_iterator(
            values.len(),
            values.iter().zip(self.mean.iter()).map(|(v, m)| v - m),
        );
        Ok(self.basis.tr_mul(&centered))
    }

    pub fn encode_grid(&self, grid: &SdfGrid) -> Result<DVector<f64>> {
        if !grid.spec().compatible(&self.spec) {
            return Err(Error::Manifold(
                "grid lattice differs from the manifold lattice".into(),
            ));
        }
        self.encode(grid.values())
    }

    /// Reconstructs the full grid for a shape code.
    pub fn decode(&self, z: &DVector<f64>) -> Result<SdfGrid> {
        self.check_code(z)?;
        let mut values = self.mean.clone();
        values.gemv(1.0, &self.basis, z, 1.0);
        SdfGrid::new(self.spec, values.data.into())
    }

    fn check_code(&self, z: &DVector<f64>) -> Result<()> {
        if z.len() != self.num_components() {
            return Err(Error::DimensionMismatch {
                expected: self.num_components(),
                actual: z.len(),
            });
        }
        Ok(())
    }

    /// Decoded corner values for a stencil, computed lazily.
    fn corner_values(&self, st: &CellStencil, z: &DVector<f64>) -> [f64; 8] {
        let mut v = [0.0; 8];
        for c in 0..8 {
            let row = st.corners[c];
            let mut acc = self.mean[row];
            for j in 0..z.len() {
                acc += self.basis[(row, j)] * z[j];
            }
            v[c] = acc;
        }
        v
    }

    /// Decoded field value at `p` under the clamp-with-overshoot policy.
    pub fn phi(&self, p: &Point3<f64>, z: &DVector<f64>) -> f64 {
        let q = self.spec.clamp_to_interior(p);
        let st = CellStencil::new(&self.spec, &q);
        st.interpolate(&self.corner_values(&st, z)) + (p - q).norm()
    }

    /// Value plus spatial and code gradients at `p`, one stencil for all.
    pub fn evaluate(&self, p: &Point3<f64>, z: &DVector<f64>) -> PointEval {
        let q = self.spec.clamp_to_interior(p);
        let st = CellStencil::new(&self.spec, &q);
        let corners = self.corner_values(&st, z);
        let value = st.interpolate(&corners);
        let mut grad_x = st.gradient(&corners);

        // code gradient: stencil-weighted combination of basis rows; the
        // overshoot term does not depend on z
        let r = self.num_components();
        let mut grad_z = DVector::zeros(r);
        for c in 0..8 {
            let row = st.corners[c];
            let w = st.weights[c];
            for j in 0..r {
                grad_z[j] += w * self.basis[(row, j)];
            }
        }

        let over = p - q;
        let norm = over.norm();
        if norm > 0.0 {
            for a in 0..3 {
                if over[a] != 0.0 {
                    grad_x[a] = 0.0;
                }
            }
            grad_x += over / norm;
        }

        PointEval {
            value: value + norm,
            grad_x,
            grad_z,
            outside: norm > 0.0,
        }
    }

    /// Borrowed view of one shape code as a distance field.
    pub fn shape<'a>(&'a self, z: &'a DVector<f64>) -> CodedShape<'a> {
        CodedShape { manifold: self, z }
    }

    /// Consistency checks for deserialized manifolds: orthonormal basis,
    /// positive descending eigenvalues, matching dimensions.
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let m = self.spec.num_voxels();
        if self.mean.len() != m || self.basis.nrows() != m {
            return Err(Error::Manifold(format!(
                "lattice has {m} voxels but mean/basis have {}/{} rows",
                self.mean.len(),
                self.basis.nrows()
            )));
        }
        let r = self.basis.ncols();
        if self.eigenvalues.len() != r {
            return Err(Error::Manifold(format!(
                "{r} basis columns but {} eigenvalues",
                self.eigenvalues.len()
            )));
        }
        for j in 0..r {
            if self.eigenvalues[j] <= 0.0 {
                return Err(Error::Manifold(format!(
                    "eigenvalue {j} is not positive: {}",
                    self.eigenvalues[j]
                )));
            }
            if j > 0 && self.eigenvalues[j] > self.eigenvalues[j - 1] * (1.0 + 1e-9) {
                return Err(Error::Manifold("eigenvalues are not descending".into()));
            }
        }
        let gram = self.basis.tr_mul(&self.basis);
        for i in 0..r {
            for j in 0..r {
                let expect = if i == j { 1.0 } else { 0.0 };
                if (gram[(i, j)] - expect).abs() > 1e-5 {
                    return Err(Error::Manifold(format!(
                        "basis is not orthonormal: gram[{i},{j}] = {}",
                        gram[(i, j)]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MANIFOLD_MAGIC)?;
        w.write_u32::<LittleEndian>(MANIFOLD_VERSION)?;
        write_spec(&mut w, &self.spec)?;
        w.write_u32::<LittleEndian>(self.num_components() as u32)?;
        for v in self.mean.iter() {
            w.write_f32::<LittleEndian>(*v as f32)?;
        }
        for v in self.eigenvalues.iter() {
            w.write_f32::<LittleEndian>(*v as f32)?;
        }
        // column-major: component after component
        for c in self.basis.column_iter() {
            for v in c.iter() {
                w.write_f32::<LittleEndian>(*v as f32)?;
            }
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
        if &magic != MANIFOLD_MAGIC {
            return Err(fmt(format!("bad magic {magic:?}, expected \"SMAN\"")));
        }
        let version = r.read_u32::<LittleEndian>().map_err(io)?;
        if version != MANIFOLD_VERSION {
            return Err(fmt(format!("unsupported version {version}")));
        }
        let spec = read_spec(&mut r).map_err(io)?;
        spec.validate()?;
        let rank = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let m = spec.num_voxels();
        let mut read_vec = |len: usize| -> std::io::Result<DVector<f64>> {
            let mut v = DVector::zeros(len);
            for i in 0..len {
                v[i] = r.read_f32::<LittleEndian>()? as f64;
            }
            Ok(v)
        };
        let mean = read_vec(m).map_err(io)?;
        let eigenvalues = read_vec(rank).map_err(io)?;
        let mut basis = DMatrix::zeros(m, rank);
        for c in 0..rank {
            let col = read_vec(m).map_err(io)?;
            basis.set_column(c, &col);
        }
        let out = Self {
            spec,
            mean,
            eigenvalues,
            basis,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::read(BufReader::new(file), &path.display().to_string())
    }
}

/// A shape code viewed as a distance field, evaluated lazily.
pub struct CodedShape<'a> {
    manifold: &'a ShapeManifold,
    z: &'a DVector<f64>,
}

impl SdfField for CodedShape<'_> {
    fn distance(&self, p: &Point3<f64>) -> f64 {
        self.manifold.phi(p, self.z)
    }

    fn gradient(&self, p: &Point3<f64>) -> Vector3<f64> {
        self.manifold.evaluate(p, self.z).grad_x
    }

    fn bounding_sphere(&self) -> (Point3<f64>, f64) {
        (self.manifold.spec.center(), self.manifold.spec.bounding_radius())
    }
}
