//! Patch distances: multi-modal edge alignment and the intensity L2 baseline.
//!
//! Both are scored over the part of the cubic patch where the reference
//! voxel and its shifted counterpart fall inside their grids.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::volume::{self, norm3, Grid, Volume, VectorField};

/// Cubic patch of edge `2 * radius + 1` voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSpec {
    pub radius: usize,
}

impl PatchSpec {
    pub fn with_radius(radius: usize) -> Self {
        PatchSpec { radius }
    }

    /// From an odd edge length (3, 5, 7, ...).
    pub fn with_edge(edge: usize) -> Result<Self> {
        if edge % 2 == 0 {
            return Err(Error::invalid(format!("patch edge must be odd, got {edge}")));
        }
        Ok(PatchSpec { radius: edge / 2 })
    }

    pub fn edge(&self) -> usize {
        2 * self.radius + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    EdgeAlignment,
    L2,
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::EdgeAlignment => "ea",
            MetricKind::L2 => "l2",
        })
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ea" | "edge" | "edge-alignment" => Ok(MetricKind::EdgeAlignment),
            "l2" | "ssd" => Ok(MetricKind::L2),
            _ => Err(Error::Config(format!("unknown metric '{s}' (expected ea or l2)"))),
        }
    }
}

/// A patch distance between a reference grid and a moving grid; lower is better.
pub trait PatchDistance: Sync {
    /// Dims of the reference grid the centres live on.
    fn reference_dims(&self) -> [usize; 3];

    fn moving_dims(&self) -> [usize; 3];

    /// Distance between the patch at `center` and the moving patch at `center + shift`.
    fn distance(&self, center: [usize; 3], shift: [i64; 3]) -> f64;
}

/// Per-axis offset ranges where both the reference and the shifted voxel are in-grid.
#[inline]
fn overlap(
    center: [usize; 3],
    shift: [i64; 3],
    radius: usize,
    ref_dims: [usize; 3],
    mov_dims: [usize; 3],
) -> Option<([i64; 3], [i64; 3])> {
    let r = radius as i64;
    let mut lo = [0i64; 3];
    let mut hi = [0i64; 3];
    for a in 0..3 {
        let c = center[a] as i64;
        let m = c + shift[a];
        lo[a] = (-r).max(-c).max(-m);
        hi[a] = r
            .min(ref_dims[a] as i64 - 1 - c)
            .min(mov_dims[a] as i64 - 1 - m);
        if lo[a] > hi[a] {
            return None;
        }
    }
    Some((lo, hi))
}

/// Walks the overlap row by row, handing `(ref_index, mov_index, run_length)`
/// for every contiguous X run.
#[inline]
fn for_each_run(
    center: [usize; 3],
    shift: [i64; 3],
    lo: [i64; 3],
    hi: [i64; 3],
    ref_dims: [usize; 3],
    mov_dims: [usize; 3],
    mut f: impl FnMut(usize, usize, usize),
) {
    let run = (hi[0] - lo[0] + 1) as usize;
    let c = center.map(|v| v as i64);
    for oz in lo[2]..=hi[2] {
        for oy in lo[1]..=hi[1] {
            let (rx, ry, rz) = (c[0] + lo[0], c[1] + oy, c[2] + oz);
            let (mx, my, mz) = (rx + shift[0], ry + shift[1], rz + shift[2]);
            let ri = rx as usize + ref_dims[0] * (ry as usize + ref_dims[1] * rz as usize);
            let mi = mx as usize + mov_dims[0] * (my as usize + mov_dims[1] * mz as usize);
            f(ri, mi, run);
        }
    }
}

/// Edge-alignment distance with precomputed gradients and gradient norms.
///
/// `D = -sum |gI . gJ| / sum |gI| |gJ|`, in `[-1, 0]`. A zero denominator
/// (flat patches) or an empty overlap scores 0, the worst value.
#[derive(Debug, Clone)]
pub struct EdgeAlignment {
    gi: VectorField,
    gj: VectorField,
    ni: Vec<f64>,
    nj: Vec<f64>,
    patch: PatchSpec,
}

impl EdgeAlignment {
    pub fn new(i: &Volume, j: &Volume, patch: PatchSpec) -> Result<Self> {
        Ok(Self::from_gradients(volume::gradient(i)?, volume::gradient(j)?, patch))
    }

    pub fn from_gradients(gi: VectorField, gj: VectorField, patch: PatchSpec) -> Self {
        let ni = gi.norms();
        let nj = gj.norms();
        EdgeAlignment {
            gi,
            gj,
            ni,
            nj,
            patch,
        }
    }

    pub fn patch(&self) -> PatchSpec {
        self.patch
    }
}

#[inline]
fn ea_ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        // Cauchy-Schwarz holds per voxel; clamp guards the last ulp.
        (-num / den).clamp(-1.0, 0.0)
    } else {
        0.0
    }
}

impl PatchDistance for EdgeAlignment {
    fn reference_dims(&self) -> [usize; 3] {
        self.gi.grid().dims
    }

    fn moving_dims(&self) -> [usize; 3] {
        self.gj.grid().dims
    }

    #[inline]
    fn distance(&self, center: [usize; 3], shift: [i64; 3]) -> f64 {
        let (rd, md) = (self.reference_dims(), self.moving_dims());
        let Some((lo, hi)) = overlap(center, shift, self.patch.radius, rd, md) else {
            return 0.0;
        };
        let (gi, gj) = (self.gi.data(), self.gj.data());
        let (mut num, mut den) = (0.0, 0.0);
        for_each_run(center, shift, lo, hi, rd, md, |ri, mi, n| {
            let a = &gi[ri..ri + n];
            let b = &gj[mi..mi + n];
            let na = &self.ni[ri..ri + n];
            let nb = &self.nj[mi..mi + n];
            for k in 0..n {
                let (u, v) = (a[k], b[k]);
                num += (u[0] * v[0] + u[1] * v[1] + u[2] * v[2]).abs();
                den += na[k] * nb[k];
            }
        });
        ea_ratio(num, den)
    }
}

/// Mean squared intensity difference; empty overlaps score `+inf`.
#[derive(Debug, Clone)]
pub struct L2Distance {
    i: Volume,
    j: Volume,
    patch: PatchSpec,
}

impl L2Distance {
    pub fn new(i: &Volume, j: &Volume, patch: PatchSpec) -> Self {
        L2Distance {
            i: i.clone(),
            j: j.clone(),
            patch,
        }
    }
}

impl PatchDistance for L2Distance {
    fn reference_dims(&self) -> [usize; 3] {
        self.i.dims()
    }

    fn moving_dims(&self) -> [usize; 3] {
        self.j.dims()
    }

    #[inline]
    fn distance(&self, center: [usize; 3], shift: [i64; 3]) -> f64 {
        let (rd, md) = (self.reference_dims(), self.moving_dims());
        let Some((lo, hi)) = overlap(center, shift, self.patch.radius, rd, md) else {
            return f64::INFINITY;
        };
        let (a, b) = (self.i.data(), self.j.data());
        let mut sum = 0.0;
        let mut count = 0usize;
        for_each_run(center, shift, lo, hi, rd, md, |ri, mi, n| {
            for (x, y) in a[ri..ri + n].iter().zip(&b[mi..mi + n]) {
                let d = x - y;
                sum += d * d;
            }
            count += n;
        });
        sum / count as f64
    }
}

fn check_center(grid: &Grid, center: [usize; 3]) -> Result<()> {
    if (0..3).any(|a| center[a] >= grid.dims[a]) {
        return Err(Error::invalid(format!(
            "patch centre {center:?} outside grid {:?}",
            grid.dims
        )));
    }
    Ok(())
}

/// Edge-alignment distance between raw gradient fields.
pub fn ea_distance(
    gi: &VectorField,
    gj: &VectorField,
    center: [usize; 3],
    shift: [i64; 3],
    patch: PatchSpec,
) -> Result<f64> {
    check_center(gi.grid(), center)?;
    let (rd, md) = (gi.grid().dims, gj.grid().dims);
    let Some((lo, hi)) = overlap(center, shift, patch.radius, rd, md) else {
        return Ok(0.0);
    };
    let (a, b) = (gi.data(), gj.data());
    let (mut num, mut den) = (0.0, 0.0);
    for_each_run(center, shift, lo, hi, rd, md, |ri, mi, n| {
        for k in 0..n {
            let (u, v) = (a[ri + k], b[mi + k]);
            num += (u[0] * v[0] + u[1] * v[1] + u[2] * v[2]).abs();
            den += norm3(u) * norm3(v);
        }
    });
    Ok(ea_ratio(num, den))
}

/// Mean squared intensity difference between patches of `i` and `j`.
pub fn l2_distance(
    i: &Volume,
    j: &Volume,
    center: [usize; 3],
    shift: [i64; 3],
    patch: PatchSpec,
) -> Result<f64> {
    check_center(i.grid(), center)?;
    Ok(L2Distance::new(i, j, patch).distance(center, shift))
}
