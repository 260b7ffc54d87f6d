//! 3D PatchMatch: random initialisation, raster-order propagation and
//! exponentially shrinking random search.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mask::SearchBox;
use crate::metric::{MetricKind, PatchDistance, PatchSpec};

/// All tunables of the shift estimation pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PMParams {
    /// Isotropic spacing (mm) the inputs are resampled to before down-sampling.
    pub resample_spacing_mm: f64,
    pub downsample_factor: usize,
    pub patch: PatchSpec,
    pub iterations: usize,
    /// Ratio between successive random-search radii.
    pub alpha: f64,
    pub realizations: usize,
    pub seed: u64,
    pub metric: MetricKind,
    pub hist_lo_mm: f64,
    pub hist_hi_mm: f64,
    pub bins: usize,
    /// Histogram every realization instead of their vector median.
    pub pooled_histogram: bool,
    /// Voxels added on every side of the tight search box.
    pub box_margin: usize,
}

impl Default for PMParams {
    fn default() -> Self {
        PMParams {
            resample_spacing_mm: 1.0,
            downsample_factor: 8,
            patch: PatchSpec::with_radius(4),
            iterations: 2,
            alpha: 0.5,
            realizations: 8,
            seed: 0,
            metric: MetricKind::EdgeAlignment,
            hist_lo_mm: -100.0,
            hist_hi_mm: 100.0,
            bins: 50,
            pooled_histogram: false,
            box_margin: 0,
        }
    }
}

impl PMParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.resample_spacing_mm.is_finite() && self.resample_spacing_mm > 0.0) {
            return fail(format!("resample spacing must be positive, got {}", self.resample_spacing_mm));
        }
        if self.downsample_factor < 1 {
            return fail("downsample factor must be >= 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.iterations < 1 {
            return fail("iterations must be >= 1".into());
        }
        if self.realizations < 1 {
            return fail("realizations must be >= 1".into());
        }
        if self.bins < 1 {
            return fail("bins must be >= 1".into());
        }
        if !(self.hist_lo_mm.is_finite() && self.hist_hi_mm.is_finite() && self.hist_lo_mm < self.hist_hi_mm) {
            return fail(format!(
                "histogram bounds must satisfy lo < hi, got [{}, {}]",
                self.hist_lo_mm, self.hist_hi_mm
            ));
        }
        Ok(())
    }
}

/// Integer voxel displacement per working-grid voxel, with its current distance.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftField {
    dims: [usize; 3],
    shifts: Vec<[i64; 3]>,
    scores: Vec<f64>,
}

impl ShiftField {
    pub fn new(dims: [usize; 3], shifts: Vec<[i64; 3]>, scores: Vec<f64>) -> Result<Self> {
        let n = dims.iter().product::<usize>();
        if shifts.len() != n || scores.len() != n {
            return Err(Error::invalid(format!(
                "shift field needs {n} entries, got {} shifts and {} scores",
                shifts.len(),
                scores.len()
            )));
        }
        Ok(ShiftField { dims, shifts, scores })
    }

    /// Field without meaningful scores (NaN), e.g. after aggregation.
    pub fn unscored(dims: [usize; 3], shifts: Vec<[i64; 3]>) -> Result<Self> {
        let n = shifts.len();
        ShiftField::new(dims, shifts, vec![f64::NAN; n])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.shifts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts.is_empty()
    }

    pub fn shifts(&self) -> &[[i64; 3]] {
        &self.shifts
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
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

    pub fn shift_at(&self, x: usize, y: usize, z: usize) -> [i64; 3] {
        self.shifts[self.index(x, y, z)]
    }

    /// True when every `r + V(r)` lies in `bx`.
    pub fn is_feasible(&self, bx: &SearchBox) -> bool {
        self.shifts.iter().enumerate().all(|(i, s)| {
            let r = self.coords(i);
            bx.contains(target(r, *s))
        })
    }
}

#[inline]
fn target(r: [usize; 3], s: [i64; 3]) -> [i64; 3] {
    [r[0] as i64 + s[0], r[1] as i64 + s[1], r[2] as i64 + s[2]]
}

/// Per-realization generator: a ChaCha stream keyed by `(seed, realization)`.
pub fn realization_rng(seed: u64, realization: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(realization);
    rng
}

/// Search radii `w * alpha^i` while they stay at or above one voxel.
pub fn search_radii(w: f64, alpha: f64) -> Vec<f64> {
    let mut radii = Vec::new();
    let mut r = w;
    while r >= 1.0 {
        radii.push(r);
        r *= alpha;
    }
    radii
}

/// Matches every voxel to a uniformly drawn voxel of the search box.
pub fn init_field<D: PatchDistance, R: Rng>(
    dist: &D,
    bx: &SearchBox,
    rng: &mut R,
) -> Result<ShiftField> {
    let dims = dist.reference_dims();
    if !bx.fits(dist.moving_dims()) {
        return Err(Error::invalid(format!(
            "search box {bx:?} does not fit moving grid {:?}",
            dist.moving_dims()
        )));
    }
    let n: usize = dims.iter().product();
    let mut shifts = Vec::with_capacity(n);
    for i in 0..n {
        let x = i % dims[0];
        let yz = i / dims[0];
        let r = [x, yz % dims[1], yz / dims[1]];
        let q: [usize; 3] = std::array::from_fn(|a| rng.random_range(bx.lo[a]..=bx.hi[a]));
        shifts.push(std::array::from_fn(|a| q[a] as i64 - r[a] as i64));
    }
    let scores = shifts
        .par_iter()
        .enumerate()
        .map(|(i, &s)| {
            let x = i % dims[0];
            let yz = i / dims[0];
            dist.distance([x, yz % dims[1], yz / dims[1]], s)
        })
        .collect();
    ShiftField::new(dims, shifts, scores)
}

/// One raster-order pass (X fastest, then Y, then Z) of propagation followed
/// by random search. Only strict improvements are accepted, so every score
/// is non-increasing and every shift stays inside `bx`.
pub fn sweep<D: PatchDistance, R: Rng>(
    field: &mut ShiftField,
    dist: &D,
    bx: &SearchBox,
    alpha: f64,
    rng: &mut R,
) {
    let dims = field.dims;
    let w = dims.iter().copied().max().unwrap_or(1) as f64;
    let radii = search_radii(w, alpha);
    let strides = [1, dims[0], dims[0] * dims[1]];

    let mut idx = 0;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let r = [x, y, z];
                let mut best = field.shifts[idx];
                let mut best_score = field.scores[idx];

                // propagation from the three already-visited neighbours
                let mut tried: [Option<[i64; 3]>; 3] = [None; 3];
                for a in 0..3 {
                    if r[a] == 0 {
                        continue;
                    }
                    let cand = field.shifts[idx - strides[a]];
                    if cand == field.shifts[idx] || tried.contains(&Some(cand)) {
                        continue;
                    }
                    tried[a] = Some(cand);
                    if !bx.contains(target(r, cand)) {
                        continue;
                    }
                    let d = dist.distance(r, cand);
                    if d < best_score {
                        best = cand;
                        best_score = d;
                    }
                }

                // random search around the propagated shift
                let center = best;
                for &radius in &radii {
                    let offset: [i64; 3] =
                        std::array::from_fn(|_| (radius * rng.random_range(-1.0..=1.0)).round() as i64);
                    if offset == [0; 3] {
                        continue;
                    }
                    let cand = [center[0] + offset[0], center[1] + offset[1], center[2] + offset[2]];
                    if cand == best || !bx.contains(target(r, cand)) {
                        continue;
                    }
                    let d = dist.distance(r, cand);
                    if d < best_score {
                        best = cand;
                        best_score = d;
                    }
                }

                field.shifts[idx] = best;
                field.scores[idx] = best_score;
                idx += 1;
            }
        }
    }
}

/// Initialisation plus `params.iterations` sweeps, seeded by `(params.seed, realization)`.
pub fn run_realization<D: PatchDistance>(
    dist: &D,
    bx: &SearchBox,
    params: &PMParams,
    realization: u64,
) -> Result<ShiftField> {
    params.validate()?;
    let mut rng = realization_rng(params.seed, realization);
    let mut field = init_field(dist, bx, &mut rng)?;
    for _ in 0..params.iterations {
        sweep(&mut field, dist, bx, params.alpha, &mut rng);
    }
    Ok(field)
}

/// Runs `params.realizations` independent realizations on the current rayon pool.
/// The result order is the realization index, regardless of scheduling.
pub fn run_realizations<D: PatchDistance>(
    dist: &D,
    bx: &SearchBox,
    params: &PMParams,
) -> Result<Vec<ShiftField>> {
    (0..params.realizations as u64)
        .into_par_iter()
        .map(|k| run_realization(dist, bx, params, k))
        .collect()
}
