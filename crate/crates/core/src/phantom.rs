//! Synthetic multi-modal volume pairs with a known translation.
//!
//! The scene is a body ellipsoid holding background blobs and an organ
//! ellipsoid textured with vessel tubes and lesion spheres. The fixed image
//! renders the scene directly; the moving image renders it translated by the
//! ground-truth shift through an intensity transfer, then applies a
//! cylindrical field of view, needle streaks, noise and a cropped grid.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kv;
use crate::mask::BinaryMask;
use crate::patchmatch::realization_rng;
use crate::volume::{Grid, Volume};

const STREAM_SCENE: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_NEEDLES: u64 = 3;
const STREAM_CASE: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Structure {
    Sphere {
        center_mm: [f64; 3],
        radius_mm: f64,
        delta: f64,
    },
    Tube {
        start_mm: [f64; 3],
        end_mm: [f64; 3],
        radius_mm: f64,
        delta: f64,
    },
}

impl Structure {
    fn contains(&self, p: [f64; 3]) -> bool {
        match *self {
            Structure::Sphere { center_mm, radius_mm, .. } => {
                dist2(p, center_mm) <= radius_mm * radius_mm
            }
            Structure::Tube { start_mm, end_mm, radius_mm, .. } => {
                segment_dist2(p, start_mm, end_mm) <= radius_mm * radius_mm
            }
        }
    }

    fn delta(&self) -> f64 {
        match *self {
            Structure::Sphere { delta, .. } | Structure::Tube { delta, .. } => delta,
        }
    }

    fn radius(&self) -> f64 {
        match *self {
            Structure::Sphere { radius_mm, .. } | Structure::Tube { radius_mm, .. } => radius_mm,
        }
    }

    fn to_config(&self) -> String {
        match *self {
            Structure::Sphere { center_mm: c, radius_mm, delta } => {
                format!("sphere = {} {} {} {} {}", c[0], c[1], c[2], radius_mm, delta)
            }
            Structure::Tube { start_mm: a, end_mm: b, radius_mm, delta } => format!(
                "tube = {} {} {} {} {} {} {} {}",
                a[0], a[1], a[2], b[0], b[1], b[2], radius_mm, delta
            ),
        }
    }
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum()
}

fn segment_dist2(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab: [f64; 3] = std::array::from_fn(|i| b[i] - a[i]);
    let ap: [f64; 3] = std::array::from_fn(|i| p[i] - a[i]);
    let len2: f64 = ab.iter().map(|v| v * v).sum();
    let t = if len2 > 0.0 {
        ((0..3).map(|i| ab[i] * ap[i]).sum::<f64>() / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    dist2(p, std::array::from_fn(|i| a[i] + t * ab[i]))
}

fn in_ellipsoid(p: [f64; 3], c: [f64; 3], r: [f64; 3]) -> bool {
    (0..3).map(|i| ((p[i] - c[i]) / r[i]).powi(2)).sum::<f64>() <= 1.0
}

/// Intensity mapping from the scene to the moving modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferKind {
    /// `gain * x + bias`
    Affine,
    /// `gain * (-x) + bias`
    Inverted,
    /// `gain * x^gamma + bias`
    Gamma,
}

impl std::str::FromStr for TransferKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "affine" | "affine_gain_bias" => Ok(TransferKind::Affine),
            "inverted" => Ok(TransferKind::Inverted),
            "gamma" => Ok(TransferKind::Gamma),
            _ => Err(Error::Config(format!("unknown transfer '{s}'"))),
        }
    }
}

impl std::fmt::Display for TransferKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TransferKind::Affine => "affine",
            TransferKind::Inverted => "inverted",
            TransferKind::Gamma => "gamma",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transfer {
    pub kind: TransferKind,
    pub gain: f64,
    pub bias: f64,
    pub gamma: f64,
}

impl Transfer {
    pub fn identity() -> Self {
        Transfer {
            kind: TransferKind::Affine,
            gain: 1.0,
            bias: 0.0,
            gamma: 1.0,
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        match self.kind {
            TransferKind::Affine => self.gain * x + self.bias,
            TransferKind::Inverted => self.gain * (-x) + self.bias,
            TransferKind::Gamma => self.gain * x.max(0.0).powf(self.gamma) + self.bias,
        }
    }
}

/// Parameters of one synthetic pair. Positions are world mm in the fixed frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub grid_dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub organ_center_mm: [f64; 3],
    pub organ_radii_mm: [f64; 3],
    pub organ_intensity: f64,
    pub body_intensity: f64,
    /// Explicit structures, added on top of everything else.
    pub structures: Vec<Structure>,
    /// Seeded vessels and lesions drawn inside the organ.
    pub organ_structures: usize,
    /// Seeded blobs drawn inside the body, under the organ.
    pub background_structures: usize,
    pub truth_shift_mm: [f64; 3],
    pub transfer: Transfer,
    pub noise_sigma: f64,
    /// Radius of the transverse (XY) circular field of view of the moving image.
    pub cylinder_fov_mm: Option<f64>,
    pub needles: usize,
    /// Per-axis margin removed from both ends of the moving grid.
    pub crop_b_mm: [f64; 3],
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            grid_dims: [96, 96, 96],
            spacing_mm: [1.0; 3],
            organ_center_mm: [47.5, 47.5, 47.5],
            organ_radii_mm: [28.0, 22.0, 20.0],
            organ_intensity: 0.7,
            body_intensity: 0.3,
            structures: Vec::new(),
            organ_structures: 10,
            background_structures: 6,
            truth_shift_mm: [0.0; 3],
            transfer: Transfer::identity(),
            noise_sigma: 0.0,
            cylinder_fov_mm: None,
            needles: 0,
            crop_b_mm: [0.0; 3],
            seed: 0,
        }
    }
}

/// Output of [`generate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub fixed: Volume,
    pub moving: Volume,
    /// Organ support on the fixed grid.
    pub mask: BinaryMask,
    /// Organ support on the moving grid (before any field-of-view cut).
    pub moving_mask: BinaryMask,
    pub truth_mm: [f64; 3],
}

impl PhantomSpec {
    pub fn fixed_grid(&self) -> Result<Grid> {
        Grid::new(self.grid_dims, self.spacing_mm, [0.0; 3])
    }

    /// The cropped grid the moving image lives on.
    pub fn moving_grid(&self) -> Result<Grid> {
        let mut dims = [0; 3];
        let mut origin = [0.0; 3];
        for a in 0..3 {
            let margin = (self.crop_b_mm[a] / self.spacing_mm[a]).round() as usize;
            if 2 * margin + 2 > self.grid_dims[a] {
                return Err(Error::invalid(format!(
                    "crop margin {} mm leaves fewer than 2 voxels on axis {a}",
                    self.crop_b_mm[a]
                )));
            }
            dims[a] = self.grid_dims[a] - 2 * margin;
            origin[a] = margin as f64 * self.spacing_mm[a];
        }
        Grid::new(dims, self.spacing_mm, origin)
    }

    fn extent_mm(&self) -> [f64; 3] {
        std::array::from_fn(|a| (self.grid_dims[a] - 1) as f64 * self.spacing_mm[a])
    }

    pub fn validate(&self) -> Result<()> {
        let fixed = self.fixed_grid()?;
        self.moving_grid()?;
        if fixed.dims.iter().any(|&d| d < 2) {
            return Err(Error::invalid("phantom grid needs at least 2 voxels per axis"));
        }
        if self.organ_radii_mm.iter().any(|&r| !(r.is_finite() && r > 0.0)) {
            return Err(Error::invalid(format!("organ radii must be positive, got {:?}", self.organ_radii_mm)));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::invalid(format!("noise sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if let Some(r) = self.cylinder_fov_mm {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::invalid(format!("cylinder radius must be positive, got {r}")));
            }
        }
        if self.crop_b_mm.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::invalid("crop margins must be >= 0"));
        }
        if self.truth_shift_mm.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("truth shift must be finite"));
        }
        if !(self.transfer.gain.is_finite() && self.transfer.bias.is_finite() && self.transfer.gamma > 0.0) {
            return Err(Error::invalid("transfer needs finite gain and bias and gamma > 0"));
        }
        for s in &self.structures {
            if !(s.radius() > 0.0) {
                return Err(Error::invalid("structure radii must be positive"));
            }
        }
        let ext = self.extent_mm();
        for a in 0..3 {
            for c in [self.organ_center_mm[a], self.organ_center_mm[a] + self.truth_shift_mm[a]] {
                if c - self.organ_radii_mm[a] < 0.0 || c + self.organ_radii_mm[a] > ext[a] {
                    return Err(Error::invalid(format!(
                        "organ (centre {:?}, radii {:?}) shifted by {:?} leaves the {:?} mm grid",
                        self.organ_center_mm, self.organ_radii_mm, self.truth_shift_mm, ext
                    )));
                }
            }
        }
        Ok(())
    }

    /// Seeded member of the benchmark family: random truth shift in
    /// `[-max_shift_mm, max_shift_mm]^3`, organ placed so both images hold it,
    /// random transfer parameters and noise up to `max_noise`.
    pub fn random_case(
        seed: u64,
        size: usize,
        max_shift_mm: f64,
        kind: TransferKind,
        max_noise: f64,
    ) -> PhantomSpec {
        let mut rng = realization_rng(seed, STREAM_CASE);
        let ext = (size - 1) as f64;
        let truth: [f64; 3] = std::array::from_fn(|_| rng.random_range(-max_shift_mm..=max_shift_mm));
        let scale = size as f64 / 192.0;
        let radii: [f64; 3] = [
            rng.random_range(50.0..54.0) * scale,
            rng.random_range(42.0..46.0) * scale,
            rng.random_range(38.0..42.0) * scale,
        ];
        let center = std::array::from_fn(|a| ext / 2.0 - truth[a] / 2.0);
        let (gain, bias) = match kind {
            TransferKind::Inverted => (rng.random_range(0.8..1.2), rng.random_range(0.9..1.1)),
            _ => (rng.random_range(0.6..1.4), rng.random_range(0.0..0.2)),
        };
        PhantomSpec {
            grid_dims: [size; 3],
            spacing_mm: [1.0; 3],
            organ_center_mm: center,
            organ_radii_mm: radii,
            organ_structures: 12,
            background_structures: 8,
            truth_shift_mm: truth,
            transfer: Transfer {
                kind,
                gain,
                bias,
                gamma: rng.random_range(0.6..1.6),
            },
            noise_sigma: rng.random_range(0.0..=max_noise),
            crop_b_mm: [8.0 * scale; 3],
            seed,
            ..PhantomSpec::default()
        }
    }

    fn body(&self) -> ([f64; 3], [f64; 3]) {
        let ext = self.extent_mm();
        let c = ext.map(|e| e / 2.0);
        let r = [0.48 * ext[0], 0.42 * ext[1], 0.62 * ext[2]];
        (c, r)
    }

    /// Background blobs and organ structures drawn from the seed.
    fn seeded_structures(&self) -> (Vec<Structure>, Vec<Structure>) {
        let mut rng = realization_rng(self.seed, STREAM_SCENE);
        let (bc, br) = self.body();
        let oc = self.organ_center_mm;
        let or = self.organ_radii_mm;
        let min_r = or.iter().copied().fold(f64::INFINITY, f64::min);

        let point_in = |rng: &mut ChaCha8Rng, c: [f64; 3], r: [f64; 3], shrink: f64| loop {
            let u: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            if u.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
                break std::array::from_fn::<f64, 3, _>(|a| c[a] + shrink * r[a] * u[a]);
            }
        };

        let mut background = Vec::with_capacity(self.background_structures);
        for _ in 0..self.background_structures {
            let center = point_in(&mut rng, bc, br, 0.85);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            background.push(Structure::Sphere {
                center_mm: center,
                radius_mm: rng.random_range(0.08..0.18) * br[0],
                delta: sign * rng.random_range(0.12..0.25),
            });
        }

        let mut organ = Vec::with_capacity(self.organ_structures);
        for k in 0..self.organ_structures {
            if k % 2 == 0 {
                let a = point_in(&mut rng, oc, or, 0.9);
                let b = point_in(&mut rng, oc, or, 0.9);
                organ.push(Structure::Tube {
                    start_mm: a,
                    end_mm: b,
                    radius_mm: rng.random_range(0.07..0.14) * min_r,
                    delta: rng.random_range(0.15..0.3),
                });
            } else {
                organ.push(Structure::Sphere {
                    center_mm: point_in(&mut rng, oc, or, 0.7),
                    radius_mm: rng.random_range(0.12..0.28) * min_r,
                    delta: -rng.random_range(0.15..0.35),
                });
            }
        }
        (background, organ)
    }

    /// Sets one named field to `value`.
    pub fn set_parameter(&mut self, name: &str, value: f64) -> Result<()> {
        let count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("{name} needs a non-negative integer, got {v}")))
            }
        };
        match name {
            "noise_sigma" => self.noise_sigma = value,
            "needles" => self.needles = count(value)?,
            "truth_x_mm" => self.truth_shift_mm[0] = value,
            "truth_y_mm" => self.truth_shift_mm[1] = value,
            "truth_z_mm" => self.truth_shift_mm[2] = value,
            "gain" => self.transfer.gain = value,
            "bias" => self.transfer.bias = value,
            "gamma" => self.transfer.gamma = value,
            "cylinder_fov_mm" => self.cylinder_fov_mm = (value > 0.0).then_some(value),
            "crop_b_mm" => self.crop_b_mm = [value; 3],
            "organ_structures" => self.organ_structures = count(value)?,
            "background_structures" => self.background_structures = count(value)?,
            "organ_intensity" => self.organ_intensity = value,
            "body_intensity" => self.body_intensity = value,
            _ => return Err(Error::Config(format!("unknown phantom parameter '{name}'"))),
        }
        Ok(())
    }

    pub fn from_entries(entries: &[(String, String)]) -> Result<Self> {
        let mut s = PhantomSpec {
            organ_structures: 0,
            background_structures: 0,
            ..PhantomSpec::default()
        };
        for (k, v) in entries {
            let k = k.as_str();
            match k {
                "grid_dims" => s.grid_dims = kv::parse_triple(k, v)?,
                "spacing_mm" => s.spacing_mm = kv::parse_triple(k, v)?,
                "organ_center_mm" => s.organ_center_mm = kv::parse_triple(k, v)?,
                "organ_radii_mm" => s.organ_radii_mm = kv::parse_triple(k, v)?,
                "truth_shift_mm" => s.truth_shift_mm = kv::parse_triple(k, v)?,
                "crop_b_mm" => s.crop_b_mm = kv::parse_triple(k, v)?,
                "transfer" => s.transfer.kind = v.parse()?,
                "seed" => s.seed = kv::parse_value(k, v)?,
                "cylinder_fov_mm" => {
                    s.cylinder_fov_mm = if v == "none" { None } else { Some(kv::parse_value(k, v)?) }
                }
                "sphere" | "tube" => {
                    let n: Vec<f64> = v
                        .split_whitespace()
                        .map(|t| kv::parse_value(k, t))
                        .collect::<Result<_>>()?;
                    let st = match (k, n.as_slice()) {
                        ("sphere", &[x, y, z, r, d]) => Structure::Sphere {
                            center_mm: [x, y, z],
                            radius_mm: r,
                            delta: d,
                        },
                        ("tube", &[x0, y0, z0, x1, y1, z1, r, d]) => Structure::Tube {
                            start_mm: [x0, y0, z0],
                            end_mm: [x1, y1, z1],
                            radius_mm: r,
                            delta: d,
                        },
                        _ => return Err(Error::Config(format!("{k}: wrong number of values in '{v}'"))),
                    };
                    s.structures.push(st);
                }
                _ => {
                    let value = kv::parse_value(k, v)?;
                    s.set_parameter(k, value)?;
                }
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_entries(&kv::read(path)?)
    }

    pub fn to_config(&self) -> String {
        let t = |a: [f64; 3]| format!("{} {} {}", a[0], a[1], a[2]);
        let mut out = String::new();
        let _ = writeln!(out, "grid_dims = {} {} {}", self.grid_dims[0], self.grid_dims[1], self.grid_dims[2]);
        let _ = writeln!(out, "spacing_mm = {}", t(self.spacing_mm));
        let _ = writeln!(out, "organ_center_mm = {}", t(self.organ_center_mm));
        let _ = writeln!(out, "organ_radii_mm = {}", t(self.organ_radii_mm));
        let _ = writeln!(out, "organ_intensity = {}", self.organ_intensity);
        let _ = writeln!(out, "body_intensity = {}", self.body_intensity);
        let _ = writeln!(out, "organ_structures = {}", self.organ_structures);
        let _ = writeln!(out, "background_structures = {}", self.background_structures);
        for s in &self.structures {
            let _ = writeln!(out, "{}", s.to_config());
        }
        let _ = writeln!(out, "truth_shift_mm = {}", t(self.truth_shift_mm));
        let _ = writeln!(out, "transfer = {}", self.transfer.kind);
        let _ = writeln!(out, "gain = {}", self.transfer.gain);
        let _ = writeln!(out, "bias = {}", self.transfer.bias);
        let _ = writeln!(out, "gamma = {}", self.transfer.gamma);
        let _ = writeln!(out, "noise_sigma = {}", self.noise_sigma);
        match self.cylinder_fov_mm {
            Some(r) => {
                let _ = writeln!(out, "cylinder_fov_mm = {r}");
            }
            None => out.push_str("cylinder_fov_mm = none\n"),
        }
        let _ = writeln!(out, "needles = {}", self.needles);
        let _ = writeln!(out, "crop_b_mm = {}", t(self.crop_b_mm));
        let _ = writeln!(out, "seed = {}", self.seed);
        out
    }
}

/// Scene intensity at world position `p` (fixed frame).
struct Scene<'a> {
    spec: &'a PhantomSpec,
    body: ([f64; 3], [f64; 3]),
    background: Vec<Structure>,
    organ: Vec<Structure>,
}

impl<'a> Scene<'a> {
    fn new(spec: &'a PhantomSpec) -> Self {
        let (background, organ) = spec.seeded_structures();
        Scene {
            spec,
            body: spec.body(),
            background,
            organ,
        }
    }

    fn in_organ(&self, p: [f64; 3]) -> bool {
        in_ellipsoid(p, self.spec.organ_center_mm, self.spec.organ_radii_mm)
    }

    fn value(&self, p: [f64; 3]) -> f64 {
        let s = self.spec;
        let mut v = 0.0;
        if in_ellipsoid(p, self.body.0, self.body.1) {
            v = s.body_intensity;
            for b in self.background.iter().filter(|b| b.contains(p)) {
                v += b.delta();
            }
        }
        if self.in_organ(p) {
            v = s.organ_intensity;
            for o in self.organ.iter().filter(|o| o.contains(p)) {
                v += o.delta();
            }
        }
        for e in s.structures.iter().filter(|e| e.contains(p)) {
            v += e.delta();
        }
        v
    }
}

struct Needle {
    tip: [f64; 3],
    dir: [f64; 3],
    /// Streak segments through the tip: unit direction and amplitude.
    streaks: Vec<([f64; 3], f64)>,
}

const NEEDLE_LENGTH_MM: f64 = 120.0;
const NEEDLE_RADIUS_MM: f64 = 1.0;
const NEEDLE_DELTA: f64 = 1.0;
const STREAKS_PER_NEEDLE: usize = 6;
const STREAK_HALF_LENGTH_MM: f64 = 40.0;
const STREAK_WIDTH_MM: f64 = 1.5;

/// Mostly transverse unit vector: uniform angle in XY, small random tilt in z.
fn transverse_dir(rng: &mut impl Rng, half_turn: bool) -> [f64; 3] {
    let span = if half_turn { std::f64::consts::PI } else { std::f64::consts::TAU };
    let theta: f64 = rng.random_range(0.0..span);
    let tilt: f64 = rng.random_range(-0.2..0.2);
    let n = (1.0 + tilt * tilt).sqrt();
    [theta.cos() / n, theta.sin() / n, tilt / n]
}

fn needles(spec: &PhantomSpec) -> Vec<Needle> {
    let mut rng = realization_rng(spec.seed, STREAM_NEEDLES);
    (0..spec.needles)
        .map(|_| {
            let tip = std::array::from_fn(|a| {
                spec.organ_center_mm[a]
                    + spec.truth_shift_mm[a]
                    + rng.random_range(-0.4..0.4) * spec.organ_radii_mm[a]
            });
            let dir = transverse_dir(&mut rng, false);
            let streaks = (0..STREAKS_PER_NEEDLE)
                .map(|_| (transverse_dir(&mut rng, true), rng.random_range(0.2..0.4)))
                .collect();
            Needle { tip, dir, streaks }
        })
        .collect()
}

impl Needle {
    fn artifact(&self, p: [f64; 3]) -> f64 {
        let end = std::array::from_fn(|a| self.tip[a] + NEEDLE_LENGTH_MM * self.dir[a]);
        let mut v = 0.0;
        if segment_dist2(p, self.tip, end) <= NEEDLE_RADIUS_MM * NEEDLE_RADIUS_MM {
            v += NEEDLE_DELTA;
        }
        let reach = STREAK_HALF_LENGTH_MM + 4.0 * STREAK_WIDTH_MM;
        if (0..3).any(|a| (p[a] - self.tip[a]).abs() > reach) {
            return v;
        }
        for &(d, amp) in &self.streaks {
            let a = std::array::from_fn(|k| self.tip[k] - STREAK_HALF_LENGTH_MM * d[k]);
            let b = std::array::from_fn(|k| self.tip[k] + STREAK_HALF_LENGTH_MM * d[k]);
            let d2 = segment_dist2(p, a, b);
            v += amp * (-d2 / (2.0 * STREAK_WIDTH_MM * STREAK_WIDTH_MM)).exp();
        }
        v
    }
}

/// Renders the pair described by `spec`.
pub fn generate(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let fixed_grid = spec.fixed_grid()?;
    let moving_grid = spec.moving_grid()?;
    let scene = Scene::new(spec);
    let t = spec.truth_shift_mm;
    let world = |g: &Grid, x: usize, y: usize, z: usize| g.world([x as f64, y as f64, z as f64]);
    let back = |p: [f64; 3]| -> [f64; 3] { std::array::from_fn(|a| p[a] - t[a]) };

    let fixed = Volume::from_fn(fixed_grid, |x, y, z| scene.value(world(&fixed_grid, x, y, z)));
    let mask = BinaryMask::from_fn(fixed_grid, |x, y, z| scene.in_organ(world(&fixed_grid, x, y, z)));
    let moving_mask =
        BinaryMask::from_fn(moving_grid, |x, y, z| scene.in_organ(back(world(&moving_grid, x, y, z))));

    let (lo, hi) = moving_grid.extent();
    let axis_center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let in_fov = |p: [f64; 3]| match spec.cylinder_fov_mm {
        Some(r) => {
            let (dx, dy) = (p[0] - axis_center[0], p[1] - axis_center[1]);
            dx * dx + dy * dy <= r * r
        }
        None => true,
    };
    let needles = needles(spec);
    let moving = Volume::from_fn(moving_grid, |x, y, z| {
        let p = world(&moving_grid, x, y, z);
        if !in_fov(p) {
            return 0.0;
        }
        let mut v = spec.transfer.apply(scene.value(back(p)));
        for n in &needles {
            v += n.artifact(p);
        }
        v
    });

    let moving = if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| Error::invalid(format!("noise distribution: {e}")))?;
        let mut rng = realization_rng(spec.seed, STREAM_NOISE);
        let mut data = moving.into_data();
        for (i, s) in data.iter_mut().enumerate() {
            let [x, y, z] = moving_grid.coords(i);
            if in_fov(world(&moving_grid, x, y, z)) {
                *s += normal.sample(&mut rng);
            }
        }
        Volume::new(moving_grid, data)?
    } else {
        moving
    };

    Ok(Phantom {
        fixed,
        moving,
        mask,
        moving_mask,
        truth_mm: t,
    })
}

/// Copies of `base` with `parameter` set to each value; seeds offset by the item index.
pub fn sweep_specs(base: &PhantomSpec, parameter: &str, values: &[f64]) -> Result<Vec<PhantomSpec>> {
    // reject unknown names even for an empty sweep
    base.clone().set_parameter(parameter, 0.0)?;
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut s = base.clone();
            s.set_parameter(parameter, v)?;
            s.seed = base.seed.wrapping_add(i as u64);
            Ok(s)
        })
        .collect()
}

/// Ground-truth file: `truth_x_mm: v` lines.
pub fn truth_file_contents(truth_mm: [f64; 3]) -> String {
    format!(
        "truth_x_mm: {}\ntruth_y_mm: {}\ntruth_z_mm: {}\n",
        truth_mm[0], truth_mm[1], truth_mm[2]
    )
}

pub fn read_truth_file(path: impl AsRef<Path>) -> Result<[f64; 3]> {
    let entries = kv::read(path)?;
    let mut out = [None; 3];
    for (k, v) in &entries {
        let a = match k.as_str() {
            "truth_x_mm" => 0,
            "truth_y_mm" => 1,
            "truth_z_mm" => 2,
            _ => continue,
        };
        out[a] = Some(kv::parse_value::<f64>(k, v)?);
    }
    match out {
        [Some(x), Some(y), Some(z)] => Ok([x, y, z]),
        _ => Err(Error::Config("truth file needs truth_x_mm, truth_y_mm and truth_z_mm".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask;
    use crate::volume;

    fn small() -> PhantomSpec {
        PhantomSpec {
            grid_dims: [40, 40, 40],
            organ_center_mm: [19.5, 19.5, 19.5],
            organ_radii_mm: [12.0, 10.0, 9.0],
            organ_structures: 4,
            background_structures: 3,
            seed: 3,
            ..PhantomSpec::default()
        }
    }

    #[test]
    fn identity_pair_is_identical() {
        let p = generate(&small()).unwrap();
        assert_eq!(p.fixed, p.moving);
        assert_eq!(p.mask, p.moving_mask);
    }

    #[test]
    fn inverted_transfer_definition() {
        let spec = PhantomSpec {
            transfer: Transfer { kind: TransferKind::Inverted, gain: 0.8, bias: 1.1, gamma: 1.0 },
            ..small()
        };
        let p = generate(&spec).unwrap();
        for (m, f) in p.moving.data().iter().zip(p.fixed.data()) {
            assert_eq!(*m, 0.8 * (-f) + 1.1);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = PhantomSpec {
            noise_sigma: 0.05,
            needles: 2,
            cylinder_fov_mm: Some(15.0),
            truth_shift_mm: [3.0, -2.5, 1.0],
            crop_b_mm: [2.0, 3.0, 0.0],
            ..small()
        };
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = PhantomSpec { seed: 4, ..spec.clone() };
        assert_ne!(generate(&spec).unwrap().moving, generate(&other).unwrap().moving);
    }

    #[test]
    fn moving_is_transferred_translated_scene() {
        let spec = PhantomSpec {
            truth_shift_mm: [4.0, -3.0, 2.5],
            transfer: Transfer { kind: TransferKind::Gamma, gain: 1.2, bias: 0.1, gamma: 0.7 },
            crop_b_mm: [3.0, 2.0, 4.0],
            ..small()
        };
        let p = generate(&spec).unwrap();
        let scene = Scene::new(&spec);
        let g = *p.moving.grid();
        assert_eq!(g.dims, [34, 36, 32]);
        assert_eq!(g.origin, [3.0, 2.0, 4.0]);
        for (i, &m) in p.moving.data().iter().enumerate() {
            let [x, y, z] = g.coords(i);
            let w = g.world([x as f64, y as f64, z as f64]);
            let q = [w[0] - 4.0, w[1] + 3.0, w[2] - 2.5];
            assert_eq!(m, spec.transfer.apply(scene.value(q)));
        }
    }

    #[test]
    fn cylinder_and_noise_stay_inside_fov() {
        let spec = PhantomSpec {
            cylinder_fov_mm: Some(12.0),
            noise_sigma: 0.1,
            ..small()
        };
        let p = generate(&spec).unwrap();
        let g = *p.moving.grid();
        for (i, &m) in p.moving.data().iter().enumerate() {
            let [x, y, _] = g.coords(i);
            let (dx, dy) = (x as f64 - 19.5, y as f64 - 19.5);
            if dx * dx + dy * dy > 144.0 {
                assert_eq!(m, 0.0);
            }
        }
    }

    #[test]
    fn needles_add_bright_streaks() {
        let base = small();
        let with = PhantomSpec { needles: 3, ..base.clone() };
        let a = generate(&base).unwrap().moving;
        let b = generate(&with).unwrap().moving;
        let diff: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| y - x).collect();
        assert!(diff.iter().all(|&d| d >= 0.0));
        assert!(diff.iter().cloned().fold(0.0, f64::max) >= NEEDLE_DELTA);
    }

    #[test]
    fn organ_boundary_carries_the_gradient() {
        let spec = PhantomSpec { grid_dims: [64, 64, 64], organ_center_mm: [31.5; 3], organ_radii_mm: [22.0, 18.0, 16.0], ..small() };
        let p = generate(&spec).unwrap();
        let grad = volume::gradient(&p.fixed).unwrap();
        let norms = grad.norms();
        let inner = mask::erode(&p.mask, 3).unwrap();
        let (mut shell, mut ns, mut interior, mut ni) = (0.0, 0, 0.0, 0);
        for (i, (&m, &e)) in p.mask.data().iter().zip(inner.data()).enumerate() {
            if m && !e {
                shell += norms[i];
                ns += 1;
            } else if e {
                interior += norms[i];
                ni += 1;
            }
        }
        let (shell, interior) = (shell / ns as f64, interior / ni as f64);
        assert!(shell > 5.0 * interior, "shell {shell} interior {interior}");
    }

    #[test]
    fn invalid_specs() {
        let bad = [
            PhantomSpec { organ_radii_mm: [0.0, 1.0, 1.0], ..small() },
            PhantomSpec { noise_sigma: -1.0, ..small() },
            PhantomSpec { truth_shift_mm: [15.0, 0.0, 0.0], ..small() },
            PhantomSpec { crop_b_mm: [30.0, 0.0, 0.0], ..small() },
        ];
        for s in bad {
            assert!(generate(&s).is_err(), "{s:?}");
        }
    }

    #[test]
    fn sweeps() {
        let base = small();
        let specs = sweep_specs(&base, "noise_sigma", &[0.0, 0.05, 0.1]).unwrap();
        assert_eq!(specs.len(), 3);
        for (i, s) in specs.iter().enumerate() {
            assert_eq!(s.seed, base.seed + i as u64);
            let mut expect = base.clone();
            expect.noise_sigma = [0.0, 0.05, 0.1][i];
            expect.seed = s.seed;
            assert_eq!(*s, expect);
        }
        assert!(sweep_specs(&base, "noise_sigma", &[]).unwrap().is_empty());
        assert!(sweep_specs(&base, "wibble", &[1.0]).is_err());
        assert!(sweep_specs(&base, "wibble", &[]).is_err());
    }

    #[test]
    fn config_round_trip() {
        let mut spec = PhantomSpec::random_case(5, 64, 20.0, TransferKind::Gamma, 0.05);
        spec.cylinder_fov_mm = Some(30.0);
        spec.needles = 2;
        spec.structures.push(Structure::Sphere { center_mm: [30.0, 31.0, 32.0], radius_mm: 4.0, delta: 0.2 });
        spec.structures.push(Structure::Tube { start_mm: [20.0; 3], end_mm: [40.0; 3], radius_mm: 2.0, delta: -0.1 });
        let text = spec.to_config();
        let back = PhantomSpec::from_entries(&kv::parse(&text).unwrap()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn random_cases_are_valid() {
        for seed in 0..40 {
            PhantomSpec::random_case(seed, 192, 80.0, TransferKind::Affine, 0.05)
                .validate()
                .unwrap();
        }
    }

    #[test]
    fn truth_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("truth.txt");
        std::fs::write(&p, truth_file_contents([24.0, -16.5, 8.0])).unwrap();
        assert_eq!(read_truth_file(&p).unwrap(), [24.0, -16.5, 8.0]);
    }
}
