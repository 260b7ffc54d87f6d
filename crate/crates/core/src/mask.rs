//! Binary organ masks, cubic morphology and the admissible search box.

use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::{self, Grid, Volume};

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    grid: Grid,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(grid: Grid, data: Vec<bool>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::invalid(format!(
                "mask holds {} voxels, grid needs {}",
                data.len(),
                grid.len()
            )));
        }
        Ok(BinaryMask { grid, data })
    }

    pub fn empty(grid: Grid) -> Self {
        BinaryMask {
            grid,
            data: vec![false; grid.len()],
        }
    }

    pub fn full(grid: Grid) -> Self {
        BinaryMask {
            grid,
            data: vec![true; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(usize, usize, usize) -> bool) -> Self {
        let data = (0..grid.len())
            .map(|i| {
                let [x, y, z] = grid.coords(i);
                f(x, y, z)
            })
            .collect();
        BinaryMask { grid, data }
    }

    /// Nonzero support of a volume.
    pub fn support(v: &Volume) -> Self {
        BinaryMask {
            grid: *v.grid(),
            data: v.data().iter().map(|&s| s != 0.0).collect(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[self.grid.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = self.grid.index(x, y, z);
        self.data[i] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn to_volume(&self) -> Volume {
        Volume::new(
            self.grid,
            self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
        .expect("mask grid is valid")
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        check_same_grid(self, other)?;
        Ok(BinaryMask {
            grid: self.grid,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect(),
        })
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.grid.dims == other.grid.dims
            && self.data.iter().zip(&other.data).all(|(a, b)| !*a || *b)
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            grid: self.grid,
            data: self.data.iter().map(|b| !b).collect(),
        }
    }

    pub fn iter_true(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| self.grid.coords(i))
    }
}

pub(crate) fn check_same_grid(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if a.grid.dims != b.grid.dims {
        return Err(Error::GridMismatch(format!(
            "mask dims {:?} vs {:?}",
            a.grid.dims, b.grid.dims
        )));
    }
    Ok(())
}

/// True where the sample exceeds `t`.
pub fn threshold_mask(v: &Volume, t: f64) -> BinaryMask {
    BinaryMask {
        grid: *v.grid(),
        data: v.data().iter().map(|&s| s > t).collect(),
    }
}

/// Binarises an interpolated mask: true where the value is at least 0.5.
pub fn binarize(v: &Volume) -> BinaryMask {
    BinaryMask {
        grid: *v.grid(),
        data: v.data().iter().map(|&s| s >= 0.5).collect(),
    }
}

/// Samples the mask on `target`, shifted by `offset_mm`, keeping binarity.
pub fn resample_mask(m: &BinaryMask, target: &Grid, offset_mm: [f64; 3]) -> BinaryMask {
    if m.grid == *target && offset_mm == [0.0; 3] {
        return m.clone();
    }
    binarize(&volume::resample_onto(&m.to_volume(), target, offset_mm))
}

/// Block-mean down-sampling followed by the 0.5 threshold.
pub fn downsample_mask(m: &BinaryMask, factor: usize) -> Result<BinaryMask> {
    Ok(binarize(&volume::downsample(&m.to_volume(), factor)?))
}

/// Translates mask content by `shift_mm` on its own grid.
pub fn translate_mask(m: &BinaryMask, shift_mm: [f64; 3]) -> Result<BinaryMask> {
    Ok(binarize(&volume::translate(&m.to_volume(), shift_mm)?))
}

fn check_kernel(kernel_edge: usize) -> Result<usize> {
    if kernel_edge == 0 || kernel_edge % 2 == 0 {
        return Err(Error::invalid(format!(
            "kernel edge must be odd and positive, got {kernel_edge}"
        )));
    }
    Ok(kernel_edge / 2)
}

/// One axis pass of cubic morphology. `all` selects erosion (every sample in
/// the window true and in-domain) over dilation (any sample true).
fn line_pass(m: &BinaryMask, axis: usize, radius: usize, all: bool) -> Vec<bool> {
    let g = m.grid;
    let n = g.dims[axis];
    let stride = [1, g.dims[0], g.dims[0] * g.dims[1]][axis];
    let mut out = vec![false; g.len()];
    for (i, slot) in out.iter_mut().enumerate() {
        let c = g.coords(i)[axis];
        let lo = c as i64 - radius as i64;
        let hi = c as i64 + radius as i64;
        let base = i - c * stride;
        *slot = if all {
            lo >= 0 && hi < n as i64 && (lo..=hi).all(|k| m.data[base + k as usize * stride])
        } else {
            (lo.max(0)..=hi.min(n as i64 - 1)).any(|k| m.data[base + k as usize * stride])
        };
    }
    out
}

fn morph(m: &BinaryMask, kernel_edge: usize, all: bool) -> Result<BinaryMask> {
    let radius = check_kernel(kernel_edge)?;
    let mut cur = m.clone();
    if radius == 0 {
        return Ok(cur);
    }
    for axis in 0..3 {
        cur.data = line_pass(&cur, axis, radius, all);
    }
    Ok(cur)
}

/// Binary erosion with a cubic structuring element; the outside counts as false.
pub fn erode(m: &BinaryMask, kernel_edge: usize) -> Result<BinaryMask> {
    morph(m, kernel_edge, true)
}

/// Binary dilation with a cubic structuring element.
pub fn dilate(m: &BinaryMask, kernel_edge: usize) -> Result<BinaryMask> {
    morph(m, kernel_edge, false)
}

/// Inclusive voxel bounding box on the working grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl SearchBox {
    pub fn new(lo: [usize; 3], hi: [usize; 3]) -> Result<Self> {
        if (0..3).any(|a| lo[a] > hi[a]) {
            return Err(Error::invalid(format!("search box lo {lo:?} exceeds hi {hi:?}")));
        }
        Ok(SearchBox { lo, hi })
    }

    /// The whole grid.
    pub fn full(dims: [usize; 3]) -> Self {
        SearchBox {
            lo: [0; 3],
            hi: [dims[0] - 1, dims[1] - 1, dims[2] - 1],
        }
    }

    #[inline]
    pub fn contains(&self, p: [i64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.lo[a] as i64 && p[a] <= self.hi[a] as i64)
    }

    pub fn extent(&self) -> [usize; 3] {
        std::array::from_fn(|a| self.hi[a] - self.lo[a] + 1)
    }

    pub fn voxel_count(&self) -> usize {
        self.extent().iter().product()
    }

    pub fn fits(&self, dims: [usize; 3]) -> bool {
        (0..3).all(|a| self.hi[a] < dims[a])
    }

    /// Grown by `margin` voxels per side, clipped to a grid of `dims`.
    pub fn padded(&self, margin: usize, dims: [usize; 3]) -> SearchBox {
        SearchBox {
            lo: self.lo.map(|l| l.saturating_sub(margin)),
            hi: std::array::from_fn(|a| (self.hi[a] + margin).min(dims[a] - 1)),
        }
    }
}

/// Tightest box around the union of the organ mask and the moving image support.
pub fn search_box(mask: &BinaryMask, j_support: &BinaryMask) -> Result<SearchBox> {
    check_same_grid(mask, j_support)?;
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for (i, (&a, &b)) in mask.data.iter().zip(&j_support.data).enumerate() {
        if a || b {
            any = true;
            let c = mask.grid.coords(i);
            for ax in 0..3 {
                lo[ax] = lo[ax].min(c[ax]);
                hi[ax] = hi[ax].max(c[ax]);
            }
        }
    }
    if !any {
        return Err(Error::EmptyMask(
            "organ mask and moving-image support are both empty".into(),
        ));
    }
    SearchBox::new(lo, hi)
}

/// Loads a mask stored as a MetaImage volume; any nonzero sample is true.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    Ok(BinaryMask::support(&volume::load_volume(path)?))
}

/// Saves a mask as a `{0, 1}` MetaImage volume.
pub fn save_mask(m: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    volume::save_volume(&m.to_volume(), path)
}
