//! Scalar and vector volumes on regular 3D grids.
//!
//! Samples are stored X-fastest: the linear index of voxel `(x, y, z)` is
//! `x + nx * (y + ny * z)`. World coordinates are in millimetres, with
//! voxel `(0, 0, 0)` centred on [`Grid::origin`].

mod metaimage;

pub use metaimage::{load_volume, save_volume, ElementType};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Geometry shared by volumes, vector fields and masks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("grid dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::invalid(format!(
                "grid spacing must be positive and finite, got {spacing:?}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::invalid(format!("grid origin must be finite, got {origin:?}")));
        }
        Ok(Grid {
            dims,
            spacing,
            origin,
        })
    }

    /// Unit-spaced grid at the world origin.
    pub fn unit(dims: [usize; 3]) -> Result<Self> {
        Grid::new(dims, [1.0; 3], [0.0; 3])
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let x = idx % self.dims[0];
        let yz = idx / self.dims[0];
        [x, yz % self.dims[1], yz / self.dims[1]]
    }

    /// True when the signed voxel coordinate lies on the grid.
    #[inline]
    pub fn contains(&self, p: [i64; 3]) -> bool {
        (0..3).all(|a| p[a] >= 0 && (p[a] as usize) < self.dims[a])
    }

    pub fn world(&self, ijk: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| self.origin[a] + ijk[a] * self.spacing[a])
    }

    pub fn continuous_index(&self, world: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| (world[a] - self.origin[a]) / self.spacing[a])
    }

    /// World-space bounds of the voxel footprints: `[lo, hi]` per axis.
    pub fn extent(&self) -> ([f64; 3], [f64; 3]) {
        let lo = std::array::from_fn(|a| self.origin[a] - 0.5 * self.spacing[a]);
        let hi = std::array::from_fn(|a| {
            self.origin[a] + (self.dims[a] as f64 - 0.5) * self.spacing[a]
        });
        (lo, hi)
    }

    /// Isotropic grid with spacing `t` that covers this grid's voxel centres.
    pub fn isotropic(&self, t: f64) -> Result<Grid> {
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::invalid(format!("target spacing must be positive, got {t}")));
        }
        let dims = std::array::from_fn(|a| {
            let n = (self.dims[a] as f64 * self.spacing[a] / t - 1e-9).ceil();
            (n as usize).max(1)
        });
        Grid::new(dims, [t; 3], self.origin)
    }

    /// Smallest grid at `spacing` whose footprint covers both inputs' footprints.
    pub fn union(&self, other: &Grid, spacing: f64) -> Result<Grid> {
        let (alo, ahi) = self.extent();
        let (blo, bhi) = other.extent();
        let mut dims = [0; 3];
        let mut origin = [0.0; 3];
        for a in 0..3 {
            let lo = alo[a].min(blo[a]);
            let hi = ahi[a].max(bhi[a]);
            origin[a] = lo + 0.5 * spacing;
            dims[a] = (((hi - lo) / spacing) - 1e-9).ceil().max(1.0) as usize;
        }
        Grid::new(dims, [spacing; 3], origin)
    }

    /// Grid of `factor`-sized blocks; each output voxel sits at its block centre.
    pub fn coarsened(&self, factor: usize) -> Grid {
        let f = factor as f64;
        Grid {
            dims: std::array::from_fn(|a| self.dims[a].div_ceil(factor)),
            spacing: std::array::from_fn(|a| self.spacing[a] * f),
            origin: std::array::from_fn(|a| self.origin[a] + 0.5 * (f - 1.0) * self.spacing[a]),
        }
    }
}

/// Dense scalar volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    grid: Grid,
    data: Vec<f64>,
}

impl Volume {
    pub fn new(grid: Grid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::invalid(format!(
                "volume data holds {} samples, grid needs {}",
                data.len(),
                grid.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Volume { grid, data })
    }

    pub fn filled(grid: Grid, value: f64) -> Self {
        Volume {
            grid,
            data: vec![value; grid.len()],
        }
    }

    /// Builds a volume by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(grid: Grid, f: impl Fn(usize, usize, usize) -> f64 + Sync) -> Self {
        let [nx, ny, _] = grid.dims;
        let data = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let x = i % nx;
                let yz = i / nx;
                f(x, yz % ny, yz / ny)
            })
            .collect();
        Volume { grid, data }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.grid.index(x, y, z)]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Volume {
        Volume {
            grid: self.grid,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Trilinear sample at a continuous voxel index.
    ///
    /// Positions outside the voxel footprints (`[-0.5, n - 0.5]` per axis)
    /// return 0; positions inside are clamped to the outermost voxel centres.
    pub fn sample_index(&self, c: [f64; 3]) -> f64 {
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let n = self.grid.dims[a];
            let ca = c[a];
            if !(ca >= -0.5 && ca <= n as f64 - 0.5) {
                return 0.0;
            }
            let ca = ca.clamp(0.0, (n - 1) as f64);
            let mut i0 = ca.floor() as usize;
            if n > 1 && i0 > n - 2 {
                i0 = n - 2;
            }
            base[a] = i0;
            frac[a] = if n > 1 { ca - i0 as f64 } else { 0.0 };
        }
        let step = |a: usize| usize::from(self.grid.dims[a] > 1);
        let (sx, sy, sz) = (step(0), step(1), step(2));
        let [x0, y0, z0] = base;
        let [fx, fy, fz] = frac;
        let g = &self.grid;
        let v = |dx: usize, dy: usize, dz: usize| self.data[g.index(x0 + dx, y0 + dy, z0 + dz)];
        let lerp = |a: f64, b: f64, t: f64| a * (1.0 - t) + b * t;
        let c00 = lerp(v(0, 0, 0), v(sx, 0, 0), fx);
        let c10 = lerp(v(0, sy, 0), v(sx, sy, 0), fx);
        let c01 = lerp(v(0, 0, sz), v(sx, 0, sz), fx);
        let c11 = lerp(v(0, sy, sz), v(sx, sy, sz), fx);
        lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz)
    }

    /// Trilinear sample at a world position (mm).
    pub fn sample_world(&self, p: [f64; 3]) -> f64 {
        self.sample_index(self.grid.continuous_index(p))
    }
}

/// Dense field of 3-vectors, e.g. an intensity gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    data: Vec<[f64; 3]>,
}

impl VectorField {
    pub fn new(grid: Grid, data: Vec<[f64; 3]>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::invalid(format!(
                "vector field holds {} vectors, grid needs {}",
                data.len(),
                grid.len()
            )));
        }
        if data.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite vector component"));
        }
        Ok(VectorField { grid, data })
    }

    /// Same vector at every voxel.
    pub fn uniform(grid: Grid, v: [f64; 3]) -> Self {
        VectorField {
            grid,
            data: vec![v; grid.len()],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn data(&self) -> &[[f64; 3]] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        self.data[self.grid.index(x, y, z)]
    }

    pub fn map(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> VectorField {
        VectorField {
            grid: self.grid,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn norms(&self) -> Vec<f64> {
        self.data.iter().map(|v| norm3(*v)).collect()
    }
}

#[inline]
pub(crate) fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Samples `src` on `target`, with `out(p) = src(p - offset_mm)`.
pub fn resample_onto(src: &Volume, target: &Grid, offset_mm: [f64; 3]) -> Volume {
    if src.grid == *target && offset_mm == [0.0; 3] {
        return src.clone();
    }
    let sg = src.grid;
    Volume::from_fn(*target, |x, y, z| {
        let p = target.world([x as f64, y as f64, z as f64]);
        let q = std::array::from_fn(|a| p[a] - offset_mm[a]);
        src.sample_index(sg.continuous_index(q))
    })
}

/// Resamples to an isotropic grid with voxel edge `target_spacing` mm.
pub fn resample_isotropic(v: &Volume, target_spacing: f64) -> Result<Volume> {
    let target = v.grid.isotropic(target_spacing)?;
    Ok(resample_onto(v, &target, [0.0; 3]))
}

/// Block-mean down-sampling by an integer factor per axis.
pub fn downsample(v: &Volume, factor: usize) -> Result<Volume> {
    if factor < 1 {
        return Err(Error::invalid("down-sampling factor must be >= 1"));
    }
    if factor == 1 {
        return Ok(v.clone());
    }
    let src = v.grid;
    let out = src.coarsened(factor);
    Ok(Volume::from_fn(out, |x, y, z| {
        let lo = [x * factor, y * factor, z * factor];
        let hi: [usize; 3] = std::array::from_fn(|a| (lo[a] + factor).min(src.dims[a]));
        let mut sum = 0.0;
        for zz in lo[2]..hi[2] {
            for yy in lo[1]..hi[1] {
                let row = src.index(0, yy, zz);
                sum += v.data[row + lo[0]..row + hi[0]].iter().sum::<f64>();
            }
        }
        let count = (hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2]);
        sum / count as f64
    }))
}

/// Spacing-normalised finite-difference gradient.
///
/// Central differences in the interior, one-sided at the borders.
pub fn gradient(v: &Volume) -> Result<VectorField> {
    let g = v.grid;
    if g.dims.iter().any(|&d| d < 2) {
        return Err(Error::invalid(format!(
            "gradient needs at least 2 voxels per axis, got {:?}",
            g.dims
        )));
    }
    let strides = [1, g.dims[0], g.dims[0] * g.dims[1]];
    let data = (0..g.len())
        .into_par_iter()
        .map(|i| {
            let c = g.coords(i);
            std::array::from_fn(|a| {
                let n = g.dims[a];
                let s = strides[a];
                let h = g.spacing[a];
                if c[a] == 0 {
                    (v.data[i + s] - v.data[i]) / h
                } else if c[a] == n - 1 {
                    (v.data[i] - v.data[i - s]) / h
                } else {
                    (v.data[i + s] - v.data[i - s]) / (2.0 * h)
                }
            })
        })
        .collect();
    Ok(VectorField { grid: g, data })
}

/// Translates the content by `shift_mm`: `out(p) = v(p - shift_mm)`, 0 outside.
pub fn translate(v: &Volume, shift_mm: [f64; 3]) -> Result<Volume> {
    if shift_mm.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid(format!("non-finite shift {shift_mm:?}")));
    }
    Ok(resample_onto(v, &v.grid, shift_mm))
}
