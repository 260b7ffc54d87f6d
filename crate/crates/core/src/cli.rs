//! Command-line front end: `register`, `phantom`, `dice` and `bench`.
//!
//! Every estimation flag can also be given in a `key = value` file passed with
//! `--config`; keys are the long flag names with `-` replaced by `_`. Flags on
//! the command line win over the file.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::aggregate::estimate_global_shift;
use crate::error::{Error, Result};
use crate::evaluation::{dice, dsc_before_after, shift_error, EvalReport};
use crate::kv;
use crate::mask;
use crate::metric::{MetricKind, PatchSpec};
use crate::patchmatch::PMParams;
use crate::phantom::{self, PhantomSpec, TransferKind};
use crate::volume;

#[derive(Debug, Parser)]
#[command(name = "fovmatch", version, about = "Global translation between two 3D volumes of different modality")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the translation of the organ from the fixed to the moving volume.
    Register(RegisterArgs),
    /// Write a synthetic volume pair with a known translation.
    Phantom(PhantomArgs),
    /// Print the Dice coefficient of two mask files.
    Dice(DiceArgs),
    /// Run a parameter sweep over a family of synthetic pairs and write a CSV table.
    Bench(BenchArgs),
}

/// Estimation parameters; each maps to one `PMParams` field.
#[derive(Debug, Clone, Default, Args)]
pub struct EstimationArgs {
    /// Isotropic spacing of the common grid (mm)
    #[arg(long)]
    pub resample_spacing_mm: Option<f64>,
    /// Block size of the mean down-sampling
    #[arg(long, visible_alias = "downsample")]
    pub downsample_factor: Option<usize>,
    /// Odd patch edge length in working-grid voxels
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Ratio between successive random-search radii
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub realizations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Patch distance: ea or l2
    #[arg(long)]
    pub metric: Option<MetricKind>,
    #[arg(long, allow_negative_numbers = true)]
    pub hist_lo_mm: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub hist_hi_mm: Option<f64>,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Histogram all realizations instead of their vector median
    #[arg(long, visible_alias = "pooled")]
    pub pooled_histogram: bool,
    /// Voxels added around the tight search box
    #[arg(long)]
    pub box_margin: Option<usize>,
}

const ESTIMATION_KEYS: &[&str] = &[
    "resample_spacing_mm",
    "downsample_factor",
    "patch_size",
    "iterations",
    "alpha",
    "realizations",
    "seed",
    "metric",
    "hist_lo_mm",
    "hist_hi_mm",
    "bins",
    "pooled_histogram",
    "box_margin",
    "threads",
];

#[derive(Debug, Clone, Args)]
pub struct RegisterArgs {
    #[arg(long)]
    pub fixed: Option<PathBuf>,
    #[arg(long)]
    pub moving: Option<PathBuf>,
    /// Organ mask on the fixed volume's grid
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Organ mask on the moving grid; enables the Dice lines of the report
    #[arg(long)]
    pub moving_mask: Option<PathBuf>,
    /// Truth file with truth_x_mm, truth_y_mm, truth_z_mm; enables the error lines
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Report path (default: <out-dir>/report.txt)
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Histogram CSV path (default: <out-dir>/histogram.csv)
    #[arg(long)]
    pub histogram: Option<PathBuf>,
    /// Also write the moving volume translated back onto the fixed position
    #[arg(long)]
    pub shifted: Option<PathBuf>,
    /// key = value file with defaults for any flag
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: available processors)
    #[arg(long)]
    pub threads: Option<usize>,
    #[command(flatten)]
    pub estimation: EstimationArgs,
}

const REGISTER_KEYS: &[&str] = &[
    "fixed",
    "moving",
    "mask",
    "moving_mask",
    "truth",
    "out_dir",
    "report",
    "histogram",
    "shifted",
];

#[derive(Debug, Clone, Args)]
pub struct PhantomArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Phantom description (key = value)
    #[arg(long, conflicts_with = "family_seed")]
    pub spec: Option<PathBuf>,
    /// Draw the description from the benchmark family with this seed
    #[arg(long)]
    pub family_seed: Option<u64>,
    #[arg(long, default_value_t = 192)]
    pub size: usize,
    #[arg(long, default_value_t = 80.0)]
    pub max_shift_mm: f64,
    #[arg(long, default_value = "affine")]
    pub transfer: TransferKind,
    #[arg(long, default_value_t = 0.05)]
    pub max_noise: f64,
    /// Override a parameter, e.g. `--set needles=4` (repeatable)
    #[arg(long = "set", value_name = "NAME=VALUE")]
    pub overrides: Vec<String>,
    /// Write one pair per value of this parameter into case_NNN subdirectories
    #[arg(long, requires = "values")]
    pub sweep: Option<String>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct DiceArgs {
    pub a: PathBuf,
    pub b: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// downsample, patch, bins, mask (negative: erosions, positive: dilations)
    /// or any phantom parameter
    #[arg(long)]
    pub sweep: Option<String>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub values: Vec<f64>,
    /// Phantom pairs per sweep value
    #[arg(long)]
    pub cases: Option<usize>,
    /// Edge length of the cubic phantom grid (voxels of 1 mm)
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub max_shift_mm: Option<f64>,
    #[arg(long)]
    pub transfer: Option<TransferKind>,
    #[arg(long)]
    pub max_noise: Option<f64>,
    #[arg(long)]
    pub family_seed: Option<u64>,
    /// Edge of the cubic structuring element of the mask sweep
    #[arg(long)]
    pub mask_kernel: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[command(flatten)]
    pub estimation: EstimationArgs,
}

const BENCH_KEYS: &[&str] = &[
    "sweep",
    "values",
    "cases",
    "size",
    "max_shift_mm",
    "transfer",
    "max_noise",
    "family_seed",
    "mask_kernel",
    "out",
];

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("fovmatch: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Register(a) => cmd_register(&a).map(|_| ()),
        Command::Phantom(a) => cmd_phantom(&a),
        Command::Dice(a) => cmd_dice(&a),
        Command::Bench(a) => cmd_bench(&a),
    }
}

/// Values read from a `--config` file.
#[derive(Debug, Default)]
struct ConfigFile {
    entries: Vec<(String, String)>,
}

impl ConfigFile {
    fn load(path: Option<&Path>, allowed: &[&[&str]]) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let entries: Vec<(String, String)> = kv::read(path)?
            .into_iter()
            .map(|(k, v)| (k.replace('-', "_"), v))
            .collect();
        for (k, _) in &entries {
            if !allowed.iter().any(|keys| keys.contains(&k.as_str())) {
                return Err(Error::Config(format!("{}: unknown key '{k}'", path.display())));
            }
        }
        Ok(ConfigFile { entries })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.entries.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key).map(|v| kv::parse_value(key, v)).transpose()
    }

    /// Command-line value if given, else the file's.
    fn pick<T: FromStr>(&self, cli: Option<T>, key: &str) -> Result<Option<T>> {
        match cli {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }

    fn path(&self, cli: &Option<PathBuf>, key: &str) -> Option<PathBuf> {
        cli.clone().or_else(|| self.raw(key).map(PathBuf::from))
    }
}

fn bool_value(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got '{v}'"))),
    }
}

impl EstimationArgs {
    fn resolve(&self, file: &ConfigFile) -> Result<PMParams> {
        let d = PMParams::default();
        let patch = match file.pick(self.patch_size, "patch_size")? {
            Some(edge) => PatchSpec::with_edge(edge).map_err(|e| Error::Config(e.to_string()))?,
            None => d.patch,
        };
        let pooled = if self.pooled_histogram {
            true
        } else {
            match file.raw("pooled_histogram") {
                Some(v) => bool_value("pooled_histogram", v)?,
                None => d.pooled_histogram,
            }
        };
        let p = PMParams {
            resample_spacing_mm: file.pick(self.resample_spacing_mm, "resample_spacing_mm")?.unwrap_or(d.resample_spacing_mm),
            downsample_factor: file.pick(self.downsample_factor, "downsample_factor")?.unwrap_or(d.downsample_factor),
            patch,
            iterations: file.pick(self.iterations, "iterations")?.unwrap_or(d.iterations),
            alpha: file.pick(self.alpha, "alpha")?.unwrap_or(d.alpha),
            realizations: file.pick(self.realizations, "realizations")?.unwrap_or(d.realizations),
            seed: file.pick(self.seed, "seed")?.unwrap_or(d.seed),
            metric: file.pick(self.metric, "metric")?.unwrap_or(d.metric),
            hist_lo_mm: file.pick(self.hist_lo_mm, "hist_lo_mm")?.unwrap_or(d.hist_lo_mm),
            hist_hi_mm: file.pick(self.hist_hi_mm, "hist_hi_mm")?.unwrap_or(d.hist_hi_mm),
            bins: file.pick(self.bins, "bins")?.unwrap_or(d.bins),
            pooled_histogram: pooled,
            box_margin: file.pick(self.box_margin, "box_margin")?.unwrap_or(d.box_margin),
        };
        p.validate()?;
        Ok(p)
    }
}

/// `key: value` lines echoing every estimation parameter.
pub fn params_lines(p: &PMParams) -> Vec<String> {
    vec![
        format!("metric: {}", p.metric),
        format!("resample_spacing_mm: {}", p.resample_spacing_mm),
        format!("downsample_factor: {}", p.downsample_factor),
        format!("patch_size: {}", p.patch.edge()),
        format!("iterations: {}", p.iterations),
        format!("alpha: {}", p.alpha),
        format!("realizations: {}", p.realizations),
        format!("seed: {}", p.seed),
        format!("hist_lo_mm: {}", p.hist_lo_mm),
        format!("hist_hi_mm: {}", p.hist_hi_mm),
        format!("bins: {}", p.bins),
        format!("pooled_histogram: {}", p.pooled_histogram),
        format!("box_margin: {}", p.box_margin),
    ]
}

fn thread_count(cli: Option<usize>, file: &ConfigFile) -> Result<usize> {
    let n = file.pick(cli, "threads")?.unwrap_or(0);
    Ok(if n == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        n
    })
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {threads} threads: {e}")))?
        .install(f)
}

fn required(p: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    p.ok_or_else(|| Error::Config(format!("missing required --{flag}")))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Runs `register` and returns the report text.
pub fn cmd_register(a: &RegisterArgs) -> Result<String> {
    let file = ConfigFile::load(a.config.as_deref(), &[REGISTER_KEYS, ESTIMATION_KEYS])?;
    let params = a.estimation.resolve(&file)?;
    let threads = thread_count(a.threads, &file)?;
    let fixed_path = required(file.path(&a.fixed, "fixed"), "fixed")?;
    let moving_path = required(file.path(&a.moving, "moving"), "moving")?;
    let mask_path = required(file.path(&a.mask, "mask"), "mask")?;
    let moving_mask_path = file.path(&a.moving_mask, "moving_mask");
    let truth_path = file.path(&a.truth, "truth");
    let out_dir = file.path(&a.out_dir, "out_dir").unwrap_or_else(|| PathBuf::from("."));
    let report_path = file.path(&a.report, "report").unwrap_or_else(|| out_dir.join("report.txt"));
    let hist_path = file.path(&a.histogram, "histogram").unwrap_or_else(|| out_dir.join("histogram.csv"));
    let shifted_path = file.path(&a.shifted, "shifted");

    let fixed = volume::load_volume(&fixed_path)?;
    let moving = volume::load_volume(&moving_path)?;
    let mask = mask::load_mask(&mask_path)?;
    let moving_mask = moving_mask_path.as_ref().map(mask::load_mask).transpose()?;
    let truth = truth_path.as_ref().map(phantom::read_truth_file).transpose()?;

    let (global, runtime) = with_threads(threads, || {
        let start = Instant::now();
        let g = estimate_global_shift(&fixed, &moving, &mask, &params)?;
        Ok((g, start.elapsed().as_secs_f64()))
    })?;
    let s = global.shift_mm;

    let mut lines = vec![
        "command: register".to_string(),
        format!("fixed: {}", fixed_path.display()),
        format!("moving: {}", moving_path.display()),
        format!("mask: {}", mask_path.display()),
    ];
    if let Some(p) = &moving_mask_path {
        lines.push(format!("moving_mask: {}", p.display()));
    }
    if let Some(p) = &truth_path {
        lines.push(format!("truth: {}", p.display()));
    }
    lines.push(format!("threads: {threads}"));
    lines.extend(params_lines(&params));
    lines.push(format!("shift_x_mm: {}", s[0]));
    lines.push(format!("shift_y_mm: {}", s[1]));
    lines.push(format!("shift_z_mm: {}", s[2]));
    lines.push(format!("mode_count_x: {}", global.mode_counts[0]));
    lines.push(format!("mode_count_y: {}", global.mode_counts[1]));
    lines.push(format!("mode_count_z: {}", global.mode_counts[2]));
    if let Some(t) = truth {
        lines.push(format!("truth_x_mm: {}", t[0]));
        lines.push(format!("truth_y_mm: {}", t[1]));
        lines.push(format!("truth_z_mm: {}", t[2]));
    }
    if let Some(mm) = &moving_mask {
        let (before, after) = dsc_before_after(&mask, mm, s)?;
        let eval = EvalReport {
            dsc_before: before,
            dsc_after: after,
            shift_error_mm: truth.map(|t| shift_error(s, t)),
            runtime_seconds: runtime,
        };
        lines.extend(eval.report_lines());
    } else if let Some(t) = truth {
        let e = shift_error(s, t);
        lines.push(format!("shift_error_x_mm: {}", e[0]));
        lines.push(format!("shift_error_y_mm: {}", e[1]));
        lines.push(format!("shift_error_z_mm: {}", e[2]));
    }
    lines.push(format!("runtime_seconds: {runtime:.6}"));
    let report = lines.join("\n") + "\n";

    let mut csv = Vec::new();
    global
        .write_histogram_csv(&mut csv)
        .map_err(|e| Error::io(&hist_path, e))?;
    write_file(&hist_path, &csv)?;
    if let Some(p) = &shifted_path {
        let back = volume::translate(&moving, s.map(|v| -v))?;
        if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        volume::save_volume(&back, p)?;
    }
    write_file(&report_path, report.as_bytes())?;
    print!("{report}");
    Ok(report)
}

fn apply_override(spec: &mut PhantomSpec, item: &str) -> Result<()> {
    let (k, v) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set expects NAME=VALUE, got '{item}'")))?;
    let (k, v) = (k.trim(), v.trim());
    if k == "seed" {
        spec.seed = kv::parse_value(k, v)?;
        return Ok(());
    }
    if k == "transfer" {
        spec.transfer.kind = v.parse()?;
        return Ok(());
    }
    spec.set_parameter(k, kv::parse_value(k, v)?)
}

/// Writes the outputs of one generated pair into `dir`.
pub fn write_phantom(spec: &PhantomSpec, dir: &Path) -> Result<()> {
    let p = phantom::generate(spec)?;
    create_dir(dir)?;
    volume::save_volume(&p.fixed, dir.join("fixed.mhd"))?;
    volume::save_volume(&p.moving, dir.join("moving.mhd"))?;
    mask::save_mask(&p.mask, dir.join("mask.mhd"))?;
    mask::save_mask(&p.moving_mask, dir.join("moving_mask.mhd"))?;
    write_file(&dir.join("truth.txt"), phantom::truth_file_contents(p.truth_mm).as_bytes())?;
    write_file(&dir.join("phantom.cfg"), spec.to_config().as_bytes())
}

pub fn cmd_phantom(a: &PhantomArgs) -> Result<()> {
    let mut spec = match (&a.spec, a.family_seed) {
        (Some(path), _) => PhantomSpec::load(path)?,
        (None, Some(seed)) => {
            if a.size < 8 {
                return Err(Error::Config(format!("--size must be at least 8, got {}", a.size)));
            }
            PhantomSpec::random_case(seed, a.size, a.max_shift_mm, a.transfer, a.max_noise)
        }
        (None, None) => PhantomSpec::default(),
    };
    for o in &a.overrides {
        apply_override(&mut spec, o)?;
    }
    match &a.sweep {
        Some(name) => {
            let specs = phantom::sweep_specs(&spec, name, &a.values)?;
            for s in &specs {
                s.validate()?;
            }
            for (i, s) in specs.iter().enumerate() {
                write_phantom(s, &a.out_dir.join(format!("case_{i:03}")))?;
            }
            println!("wrote {} pairs to {}", specs.len(), a.out_dir.display());
        }
        None => {
            write_phantom(&spec, &a.out_dir)?;
            println!("wrote pair to {}", a.out_dir.display());
        }
    }
    Ok(())
}

pub fn cmd_dice(a: &DiceArgs) -> Result<()> {
    let x = mask::load_mask(&a.a)?;
    let y = mask::load_mask(&a.b)?;
    println!("dice: {:.6}", dice(&x, &y)?);
    Ok(())
}

/// One cell of a bench sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub sweep: String,
    pub value: f64,
    pub case: usize,
    pub seed: u64,
    pub truth_mm: [f64; 3],
    pub shift_mm: [f64; 3],
    pub error_mm: [f64; 3],
    pub dsc_before: f64,
    pub dsc_after: f64,
    pub runtime_seconds: f64,
}

pub const BENCH_HEADER: &str = "sweep,value,case,seed,truth_x_mm,truth_y_mm,truth_z_mm,\
shift_x_mm,shift_y_mm,shift_z_mm,error_x_mm,error_y_mm,error_z_mm,dsc_before,dsc_after,runtime_seconds";

impl BenchRow {
    pub fn csv(&self) -> String {
        let mut s = format!("{},{},{},{}", self.sweep, self.value, self.case, self.seed);
        for v in self.truth_mm.iter().chain(&self.shift_mm).chain(&self.error_mm) {
            let _ = write!(s, ",{v}");
        }
        let _ = write!(s, ",{},{},{:.6}", self.dsc_before, self.dsc_after, self.runtime_seconds);
        s
    }
}

/// Settings of a bench run after merging flags, config file and defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchPlan {
    pub sweep: String,
    pub values: Vec<f64>,
    pub cases: usize,
    pub size: usize,
    pub max_shift_mm: f64,
    pub transfer: TransferKind,
    pub max_noise: f64,
    pub family_seed: u64,
    pub mask_kernel: usize,
    pub params: PMParams,
}

fn integer(name: &str, v: f64) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(Error::Config(format!("{name} sweep needs non-negative integers, got {v}")))
    }
}

/// Runs every cell of `plan`, value-major.
pub fn run_bench(plan: &BenchPlan) -> Result<Vec<BenchRow>> {
    let name = plan.sweep.as_str();
    let estimation_side = matches!(name, "downsample" | "patch" | "bins" | "mask");
    let specs: Vec<PhantomSpec> = (0..plan.cases)
        .map(|c| {
            PhantomSpec::random_case(
                plan.family_seed + c as u64,
                plan.size,
                plan.max_shift_mm,
                plan.transfer,
                plan.max_noise,
            )
        })
        .collect();
    // check every cell before the long run starts
    for &v in &plan.values {
        let mut p = plan.params.clone();
        match name {
            "downsample" => p.downsample_factor = integer(name, v)?,
            "patch" => p.patch = PatchSpec::with_edge(integer(name, v)?)?,
            "bins" => p.bins = integer(name, v)?,
            "mask" => {
                if v.fract() != 0.0 {
                    return Err(Error::Config(format!("mask sweep needs integers, got {v}")));
                }
            }
            _ => {
                for s in &specs {
                    let mut s = s.clone();
                    s.set_parameter(name, v)?;
                    s.validate()?;
                }
            }
        }
        p.validate()?;
    }

    // case-major so at most one pair is held in memory; rows are reordered value-major below
    let mut cells = Vec::with_capacity(plan.values.len() * specs.len());
    for (c, base) in specs.iter().enumerate() {
        let shared = if estimation_side { Some(phantom::generate(base)?) } else { None };
        for (vi, &v) in plan.values.iter().enumerate() {
            let mut params = plan.params.clone();
            let owned;
            let pair = match &shared {
                Some(p) => p,
                None => {
                    let mut s = base.clone();
                    s.set_parameter(name, v)?;
                    owned = phantom::generate(&s)?;
                    &owned
                }
            };
            let mut roi = pair.mask.clone();
            match name {
                "downsample" => params.downsample_factor = v as usize,
                "patch" => params.patch = PatchSpec::with_edge(v as usize)?,
                "bins" => params.bins = v as usize,
                "mask" => {
                    for _ in 0..(v.abs() as usize) {
                        roi = if v > 0.0 {
                            mask::dilate(&roi, plan.mask_kernel)?
                        } else {
                            mask::erode(&roi, plan.mask_kernel)?
                        };
                    }
                }
                _ => {}
            }
            let start = Instant::now();
            let g = estimate_global_shift(&pair.fixed, &pair.moving, &roi, &params)?;
            let runtime = start.elapsed().as_secs_f64();
            let (before, after) = dsc_before_after(&pair.mask, &pair.moving_mask, g.shift_mm)?;
            cells.push((vi, c, BenchRow {
                sweep: plan.sweep.clone(),
                value: v,
                case: c,
                seed: base.seed,
                truth_mm: pair.truth_mm,
                shift_mm: g.shift_mm,
                error_mm: shift_error(g.shift_mm, pair.truth_mm),
                dsc_before: before,
                dsc_after: after,
                runtime_seconds: runtime,
            }));
        }
    }
    cells.sort_by_key(|&(vi, c, _)| (vi, c));
    Ok(cells.into_iter().map(|(_, _, r)| r).collect())
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(BENCH_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv());
        out.push('\n');
    }
    out
}

pub fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let file = ConfigFile::load(a.config.as_deref(), &[BENCH_KEYS, ESTIMATION_KEYS])?;
    let params = a.estimation.resolve(&file)?;
    let threads = thread_count(a.threads, &file)?;
    let sweep = match &a.sweep {
        Some(s) => s.clone(),
        None => file
            .raw("sweep")
            .map(str::to_string)
            .ok_or_else(|| Error::Config("missing required --sweep".into()))?,
    };
    let values = if !a.values.is_empty() {
        a.values.clone()
    } else {
        match file.raw("values") {
            Some(v) => v
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| kv::parse_value("values", s))
                .collect::<Result<_>>()?,
            None => return Err(Error::Config("missing required --values".into())),
        }
    };
    let out = required(file.path(&a.out, "out"), "out")?;
    let plan = BenchPlan {
        sweep,
        values,
        cases: file.pick(a.cases, "cases")?.unwrap_or(3),
        size: file.pick(a.size, "size")?.unwrap_or(96),
        max_shift_mm: file.pick(a.max_shift_mm, "max_shift_mm")?.unwrap_or(20.0),
        transfer: file.pick(a.transfer, "transfer")?.unwrap_or(TransferKind::Affine),
        max_noise: file.pick(a.max_noise, "max_noise")?.unwrap_or(0.05),
        family_seed: file.pick(a.family_seed, "family_seed")?.unwrap_or(0),
        mask_kernel: file.pick(a.mask_kernel, "mask_kernel")?.unwrap_or(5),
        params,
    };
    if plan.size < 8 {
        return Err(Error::Config(format!("size must be at least 8, got {}", plan.size)));
    }
    let rows = with_threads(threads, || run_bench(&plan))?;
    write_file(&out, bench_csv(&rows).as_bytes())?;
    let mut stdout = std::io::stdout();
    let _ = writeln!(stdout, "wrote {} rows to {}", rows.len(), out.display());
    Ok(())
}
