//! From shift-field realizations to one global translation: vector median,
//! per-axis histograms inside the organ mask, and mode selection.

use std::fmt;
use std::io::Write;

use crate::error::{Error, Result};
use crate::mask::{self, BinaryMask, SearchBox};
use crate::metric::{EdgeAlignment, L2Distance, MetricKind};
use crate::patchmatch::{self, PMParams, ShiftField};
use crate::volume::{self, Grid, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        })
    }
}

/// Vector median per voxel: the realization value with the smallest sum of
/// Euclidean distances to all realization values at that voxel. Ties go to
/// the lowest realization index.
pub fn median_field(realizations: &[ShiftField]) -> Result<ShiftField> {
    let first = realizations
        .first()
        .ok_or_else(|| Error::invalid("median of an empty realization list"))?;
    let dims = first.dims();
    if let Some(bad) = realizations.iter().find(|f| f.dims() != dims) {
        return Err(Error::GridMismatch(format!(
            "realization dims {:?} vs {:?}",
            bad.dims(),
            dims
        )));
    }
    if realizations.len() == 1 {
        return Ok(first.clone());
    }
    let mut candidates = Vec::with_capacity(realizations.len());
    let shifts = (0..first.len())
        .map(|i| {
            candidates.clear();
            candidates.extend(realizations.iter().map(|f| f.shifts()[i]));
            vector_median(&candidates)
        })
        .collect();
    ShiftField::unscored(dims, shifts)
}

fn vector_median(candidates: &[[i64; 3]]) -> [i64; 3] {
    let mut best = candidates[0];
    let mut best_sum = f64::INFINITY;
    for &c in candidates {
        if c == best && best_sum.is_finite() {
            continue;
        }
        let sum: f64 = candidates
            .iter()
            .map(|o| {
                let d: [f64; 3] = std::array::from_fn(|a| (c[a] - o[a]) as f64);
                (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
            })
            .sum();
        if sum < best_sum {
            best = c;
            best_sum = sum;
        }
    }
    best
}

/// Uniform histogram of one shift component, in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftHistogram {
    pub axis: Axis,
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl ShiftHistogram {
    pub fn new(axis: Axis, lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid(format!(
                "histogram needs bins >= 1 and lo < hi, got {bins} bins over [{lo}, {hi}]"
            )));
        }
        Ok(ShiftHistogram {
            axis,
            lo,
            hi,
            counts: vec![0; bins],
        })
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.bins() as f64
    }

    pub fn bin_center(&self, k: usize) -> f64 {
        self.lo + (k as f64 + 0.5) * self.bin_width()
    }

    /// Bin index of `value`; values outside `[lo, hi)` clamp to the end bins.
    pub fn bin_of(&self, value: f64) -> usize {
        let k = ((value - self.lo) / self.bin_width()).floor();
        if k < 0.0 {
            0
        } else {
            (k as usize).min(self.bins() - 1)
        }
    }

    pub fn add(&mut self, value: f64) {
        let k = self.bin_of(value);
        self.counts[k] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

fn empty_histograms(lo: f64, hi: f64, bins: usize) -> Result<[ShiftHistogram; 3]> {
    Ok([
        ShiftHistogram::new(Axis::X, lo, hi, bins)?,
        ShiftHistogram::new(Axis::Y, lo, hi, bins)?,
        ShiftHistogram::new(Axis::Z, lo, hi, bins)?,
    ])
}

fn tally(
    hists: &mut [ShiftHistogram; 3],
    field: &ShiftField,
    mask: &BinaryMask,
    spacing_mm: [f64; 3],
) -> Result<()> {
    if field.dims() != mask.grid().dims {
        return Err(Error::GridMismatch(format!(
            "shift field dims {:?} vs mask dims {:?}",
            field.dims(),
            mask.grid().dims
        )));
    }
    for (s, _) in field.shifts().iter().zip(mask.data()).filter(|(_, &m)| m) {
        for (a, h) in hists.iter_mut().enumerate() {
            h.add(s[a] as f64 * spacing_mm[a]);
        }
    }
    Ok(())
}

/// Per-axis histograms of the shift components (converted to mm) over the mask voxels.
pub fn shift_histogram(
    field: &ShiftField,
    mask: &BinaryMask,
    spacing_mm: [f64; 3],
    lo: f64,
    hi: f64,
    bins: usize,
) -> Result<[ShiftHistogram; 3]> {
    shift_histogram_pooled(std::slice::from_ref(field), mask, spacing_mm, lo, hi, bins)
}

/// Histograms over the mask voxels of several fields at once.
pub fn shift_histogram_pooled(
    fields: &[ShiftField],
    mask: &BinaryMask,
    spacing_mm: [f64; 3],
    lo: f64,
    hi: f64,
    bins: usize,
) -> Result<[ShiftHistogram; 3]> {
    if mask.is_empty() {
        return Err(Error::EmptyMask("no mask voxel on the working grid".into()));
    }
    let mut hists = empty_histograms(lo, hi, bins)?;
    for f in fields {
        tally(&mut hists, f, mask, spacing_mm)?;
    }
    Ok(hists)
}

/// The estimated translation: per-axis histogram modes (bin centres, mm).
///
/// The moving image is approximately the fixed image translated by
/// `shift_mm`; translating the moving image by `-shift_mm` aligns it.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalShift {
    pub shift_mm: [f64; 3],
    pub mode_counts: [u64; 3],
    pub histograms: [ShiftHistogram; 3],
}

impl GlobalShift {
    /// Histogram dump: `axis,bin_center_mm,count` with a header row.
    pub fn write_histogram_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "axis,bin_center_mm,count")?;
        for h in &self.histograms {
            for (k, c) in h.counts.iter().enumerate() {
                writeln!(out, "{},{},{}", h.axis, h.bin_center(k), c)?;
            }
        }
        Ok(())
    }
}

/// Picks the maximal bin per axis; ties go to the centre closest to 0, then the lower centre.
pub fn mode_shift(histograms: [ShiftHistogram; 3]) -> Result<GlobalShift> {
    let mut shift_mm = [0.0; 3];
    let mut mode_counts = [0; 3];
    for (a, h) in histograms.iter().enumerate() {
        let max = h.counts.iter().copied().max().unwrap_or(0);
        if max == 0 {
            return Err(Error::invalid(format!("{} histogram is empty", h.axis)));
        }
        let best = (0..h.bins())
            .filter(|&k| h.counts[k] == max)
            .map(|k| h.bin_center(k))
            .min_by(|p, q| p.abs().total_cmp(&q.abs()).then(p.total_cmp(q)))
            .expect("at least one maximal bin");
        shift_mm[a] = best;
        mode_counts[a] = max;
    }
    Ok(GlobalShift {
        shift_mm,
        mode_counts,
        histograms,
    })
}

/// Inputs resampled to the common isotropic grid and down-sampled.
#[derive(Debug, Clone)]
pub struct WorkingSet {
    pub fixed: Volume,
    pub moving: Volume,
    pub mask: BinaryMask,
    pub search_box: SearchBox,
}

impl WorkingSet {
    pub fn grid(&self) -> &Grid {
        self.fixed.grid()
    }
}

/// Resamples `fixed`, `moving` and `mask` onto the isotropic grid spanning both
/// images, down-samples them, and derives the search box.
pub fn prepare(fixed: &Volume, moving: &Volume, mask: &BinaryMask, params: &PMParams) -> Result<WorkingSet> {
    params.validate()?;
    let common = fixed.grid().union(moving.grid(), params.resample_spacing_mm)?;
    let i = volume::resample_onto(fixed, &common, [0.0; 3]);
    let j = volume::resample_onto(moving, &common, [0.0; 3]);
    let m = mask::resample_mask(mask, &common, [0.0; 3]);

    let f = params.downsample_factor;
    let i = volume::downsample(&i, f)?;
    let j = volume::downsample(&j, f)?;
    let m = mask::downsample_mask(&m, f)?;
    if m.is_empty() {
        return Err(Error::EmptyMask(format!(
            "organ mask vanished on the {:?} working grid",
            i.dims()
        )));
    }
    let bx = mask::search_box(&m, &BinaryMask::support(&j))?.padded(params.box_margin, m.grid().dims);
    Ok(WorkingSet {
        fixed: i,
        moving: j,
        mask: m,
        search_box: bx,
    })
}

/// Full estimate with the intermediate products kept.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub global: GlobalShift,
    pub working: WorkingSet,
    pub realizations: Vec<ShiftField>,
    pub median: ShiftField,
}

pub fn estimate_detailed(
    fixed: &Volume,
    moving: &Volume,
    mask: &BinaryMask,
    params: &PMParams,
) -> Result<Estimate> {
    let working = prepare(fixed, moving, mask, params)?;
    let bx = working.search_box;
    let realizations = match params.metric {
        MetricKind::EdgeAlignment => {
            let d = EdgeAlignment::new(&working.fixed, &working.moving, params.patch)?;
            patchmatch::run_realizations(&d, &bx, params)?
        }
        MetricKind::L2 => {
            let d = L2Distance::new(&working.fixed, &working.moving, params.patch);
            patchmatch::run_realizations(&d, &bx, params)?
        }
    };
    let median = median_field(&realizations)?;
    let spacing = working.grid().spacing;
    let (lo, hi, bins) = (params.hist_lo_mm, params.hist_hi_mm, params.bins);
    let hists = if params.pooled_histogram {
        shift_histogram_pooled(&realizations, &working.mask, spacing, lo, hi, bins)?
    } else {
        shift_histogram(&median, &working.mask, spacing, lo, hi, bins)?
    };
    Ok(Estimate {
        global: mode_shift(hists)?,
        working,
        realizations,
        median,
    })
}

/// Estimates the global translation taking the organ in `fixed` (delineated by
/// `mask`) to its position in `moving`.
pub fn estimate_global_shift(
    fixed: &Volume,
    moving: &Volume,
    mask: &BinaryMask,
    params: &PMParams,
) -> Result<GlobalShift> {
    Ok(estimate_detailed(fixed, moving, mask, params)?.global)
}
