//! Config-driven experiment runner behind the `fracphase` binary.
//!
//! Exit codes: 0 success, 1 invalid input or I/O failure, 2 blow-up,
//! 3 a dissipation flag or certification failed (outputs are still written).

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::energy::{dissipation_report, EnergyReport, ReportOptions, WeightFunction};
use crate::fractime::{
    default_grading, run, run_dealiased, FracError, Linearization, ModelParams, Operator, Potential,
    Spacing, TimeGrid, Trajectory, DEFAULT_STABILIZER,
};
use crate::kernelcert::{
    certify_kernel, check_p_properties, default_tolerance, monotone_cholesky, KernelFn, PDCertificate,
    PropertyReport, SymMatrix,
};
use crate::spectral::{Field, PeriodicGrid};

pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_BLOWUP: i32 = 2;
pub const EXIT_FLAG_FAILURE: i32 = 3;

/// Env var capping sweep parallelism.
pub const THREADS_ENV: &str = "FRACPHASE_THREADS";

pub const ENERGY_CSV: &str = "energy.csv";
pub const REPORT_JSON: &str = "report.json";
pub const MANIFEST_JSON: &str = "manifest.json";
pub const SNAPSHOT_DIR: &str = "snapshots";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid `{key}`: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("solution blew up at step {step} (max |phi| = {max_abs:e})")]
    BlowUp { step: usize, max_abs: f64 },
    #[error("I/O error on {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{0}")]
    Numerics(String),
}

impl SimError {
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::BlowUp { .. } => EXIT_BLOWUP,
            _ => EXIT_INVALID,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SimError + '_ {
    move |e| SimError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialSpec {
    DoubleWell,
    Zero,
}

fn default_gamma() -> f64 {
    1.0
}

fn default_potential() -> PotentialSpec {
    PotentialSpec::DoubleWell
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub alpha: f64,
    pub epsilon: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    pub operator: Operator,
    #[serde(default = "default_potential")]
    pub potential: PotentialSpec,
}

fn default_stabilizer() -> f64 {
    DEFAULT_STABILIZER
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_stabilizer")]
    pub stabilizer: f64,
    #[serde(default)]
    pub linearization: Linearization,
    /// 2/3-rule filter on the nonlinear term.
    #[serde(default)]
    pub dealiasing: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            stabilizer: DEFAULT_STABILIZER,
            linearization: Linearization::default(),
            dealiasing: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub n: usize,
    pub length: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpacingConfig {
    #[default]
    Uniform,
    /// `t_k = T (k/N)^r`; `r` defaults to `(2-α)/α`.
    Graded {
        #[serde(default)]
        exponent: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub t_final: f64,
    pub n_steps: usize,
    #[serde(default)]
    pub spacing: SpacingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    Constant {
        value: f64,
    },
    /// `offset + amplitude cos(2π (m_x x + m_y y) / L)`.
    SingleMode {
        amplitude: f64,
        mode: [i64; 2],
        #[serde(default)]
        offset: f64,
    },
    /// `mean + amplitude U(-1, 1)` per grid point, drawn in index order from
    /// ChaCha8 seeded with `seed`.
    Random {
        seed: u64,
        amplitude: f64,
        #[serde(default)]
        mean: f64,
    },
    /// `tanh((R - d) / (√2 w))` with `d` the distance from the domain
    /// center (1D: a slab of half-width `R`, 2D: a disk of radius `R`).
    Tanh {
        width: f64,
        radius: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightSpec {
    Beta,
    Power,
    /// `θ^p (1-θ)^q h(θ)` with `h` linear between the table nodes.
    Tabulated {
        name: String,
        exponents: [f64; 2],
        theta: Vec<f64>,
        values: Vec<f64>,
    },
}

impl WeightSpec {
    pub fn build(&self, alpha: f64) -> Option<WeightFunction> {
        match self {
            WeightSpec::Beta => Some(WeightFunction::beta(alpha)),
            WeightSpec::Power => Some(WeightFunction::power(alpha)),
            WeightSpec::Tabulated {
                name,
                exponents,
                theta,
                values,
            } => WeightFunction::tabulated(
                name.clone(),
                (exponents[0], exponents[1]),
                theta.clone(),
                values.clone(),
            ),
        }
    }

    fn name(&self) -> &str {
        match self {
            WeightSpec::Beta => "beta",
            WeightSpec::Power => "power",
            WeightSpec::Tabulated { name, .. } => name,
        }
    }
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    #[serde(default = "default_stride")]
    pub report_stride: usize,
    /// Snapshot every this many steps; `None` keeps only the first and last.
    #[serde(default)]
    pub snapshot_stride: Option<usize>,
    #[serde(default)]
    pub skip_first_interior: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub model: ModelConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    pub grid: GridConfig,
    pub time: TimeConfig,
    pub initial: InitialCondition,
    pub weights: Vec<WeightSpec>,
    pub output: OutputConfig,
}

fn finite(key: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(key, format!("must be finite, got {v}")))
    }
}

fn positive(key: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(key, format!("must be positive and finite, got {v}")))
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Ok(Self::from_json(&text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical (compact) JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        let m = &self.model;
        if !(m.alpha > 0.0 && m.alpha < 1.0) {
            return Err(invalid("model.alpha", format!("must lie in (0, 1), got {}", m.alpha)));
        }
        positive("model.epsilon", m.epsilon)?;
        positive("model.gamma", m.gamma)?;
        let s = &self.solver;
        if !(s.stabilizer >= 0.0 && s.stabilizer.is_finite()) {
            return Err(invalid(
                "solver.stabilizer",
                format!("must be nonnegative and finite, got {}", s.stabilizer),
            ));
        }
        let g = &self.grid;
        if !(g.dim == 1 || g.dim == 2) {
            return Err(invalid("grid.dim", format!("must be 1 or 2, got {}", g.dim)));
        }
        if g.n < 8 || !g.n.is_power_of_two() {
            return Err(invalid("grid.n", format!("must be a power of two >= 8, got {}", g.n)));
        }
        positive("grid.length", g.length)?;
        let t = &self.time;
        positive("time.t_final", t.t_final)?;
        if t.n_steps < 2 {
            return Err(invalid("time.n_steps", format!("must be >= 2, got {}", t.n_steps)));
        }
        if let SpacingConfig::Graded { exponent: Some(r) } = t.spacing {
            if !(r >= 1.0 && r.is_finite()) {
                return Err(invalid("time.spacing.exponent", format!("must be >= 1, got {r}")));
            }
        }
        match &self.initial {
            InitialCondition::Constant { value } => finite("initial.value", *value)?,
            InitialCondition::SingleMode { amplitude, offset, .. } => {
                finite("initial.amplitude", *amplitude)?;
                finite("initial.offset", *offset)?;
            }
            InitialCondition::Random { amplitude, mean, .. } => {
                if !(*amplitude >= 0.0 && amplitude.is_finite()) {
                    return Err(invalid(
                        "initial.amplitude",
                        format!("must be nonnegative and finite, got {amplitude}"),
                    ));
                }
                finite("initial.mean", *mean)?;
            }
            InitialCondition::Tanh { width, radius } => {
                positive("initial.width", *width)?;
                positive("initial.radius", *radius)?;
            }
        }
        let mut seen = Vec::new();
        for (i, w) in self.weights.iter().enumerate() {
            let key = format!("weights[{i}]");
            let name = w.name();
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(invalid(&key, format!("name {name:?} must be nonempty [A-Za-z0-9_-]")));
            }
            if seen.contains(&name) {
                return Err(invalid(&key, format!("duplicate weight name {name:?}")));
            }
            seen.push(name);
            if w.build(m.alpha).is_none() {
                return Err(invalid(
                    &key,
                    "tabulated weight needs exponents > -1, >= 2 increasing nodes covering [0, 1] and finite values",
                ));
            }
        }
        if self.output.report_stride == 0 {
            return Err(invalid("output.report_stride", "must be >= 1"));
        }
        if self.output.snapshot_stride == Some(0) {
            return Err(invalid("output.snapshot_stride", "must be >= 1"));
        }
        Ok(())
    }

    pub fn model_params(&self) -> Result<ModelParams, ConfigError> {
        let m = &self.model;
        let potential = match m.potential {
            PotentialSpec::DoubleWell => Potential::DoubleWell,
            PotentialSpec::Zero => Potential::Zero,
        };
        ModelParams::new(m.alpha, m.epsilon, m.gamma, m.operator)
            .and_then(|p| p.with_stabilizer(self.solver.stabilizer))
            .map(|p| p.with_potential(potential).with_linearization(self.solver.linearization))
            .map_err(|e| invalid("model", e.to_string()))
    }

    pub fn spatial_grid(&self) -> Result<PeriodicGrid, ConfigError> {
        PeriodicGrid::new(self.grid.dim, self.grid.n, self.grid.length).map_err(|e| invalid("grid", e.to_string()))
    }

    pub fn time_grid(&self) -> Result<TimeGrid, ConfigError> {
        let spacing = match self.time.spacing {
            SpacingConfig::Uniform => Spacing::Uniform,
            SpacingConfig::Graded { exponent } => {
                Spacing::Graded(exponent.unwrap_or_else(|| default_grading(self.model.alpha)))
            }
        };
        TimeGrid::new(self.time.t_final, self.time.n_steps, spacing).map_err(|e| invalid("time", e.to_string()))
    }

    pub fn weight_functions(&self) -> Vec<WeightFunction> {
        self.weights
            .iter()
            .map(|w| w.build(self.model.alpha).expect("validated"))
            .collect()
    }
}

pub fn initial_field(ic: &InitialCondition, grid: PeriodicGrid) -> Field {
    let l = grid.length();
    let tau = 2.0 * std::f64::consts::PI;
    let build = |f: &dyn Fn(f64, f64) -> f64| Field::from_fn(grid, f).expect("initial data is finite");
    match *ic {
        InitialCondition::Constant { value } => Field::constant(grid, value),
        InitialCondition::SingleMode { amplitude, mode, offset } => build(&|x, y| {
            offset + amplitude * (tau * (mode[0] as f64 * x + mode[1] as f64 * y) / l).cos()
        }),
        InitialCondition::Random { seed, amplitude, mean } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values = (0..grid.point_count())
                .map(|_| mean + amplitude * (2.0 * rng.gen::<f64>() - 1.0))
                .collect();
            Field::new(grid, values).expect("initial data is finite")
        }
        InitialCondition::Tanh { width, radius } => {
            let c = 0.5 * l;
            let dim = grid.dim();
            build(&|x, y| {
                let d = if dim == 1 {
                    (x - c).abs()
                } else {
                    ((x - c).powi(2) + (y - c).powi(2)).sqrt()
                };
                ((radius - d) / (std::f64::consts::SQRT_2 * width)).tanh()
            })
        }
    }
}

pub const SNAPSHOT_MAGIC: [u8; 8] = *b"FPFIELD1";

/// 32-byte header (magic, `u32` dim, `u32` n, `f64` L, `f64` t) followed by
/// the field values, all little-endian, in `iy * n + ix` order.
pub fn encode_snapshot(field: &Field, t: f64) -> Vec<u8> {
    let grid = field.grid();
    let mut out = Vec::with_capacity(32 + 8 * grid.point_count());
    out.extend_from_slice(&SNAPSHOT_MAGIC);
    out.extend_from_slice(&(grid.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.n() as u32).to_le_bytes());
    out.extend_from_slice(&grid.length().to_le_bytes());
    out.extend_from_slice(&t.to_le_bytes());
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Inverse of [`encode_snapshot`]; `None` on a malformed buffer.
pub fn decode_snapshot(bytes: &[u8]) -> Option<(Field, f64)> {
    if bytes.len() < 32 || bytes[..8] != SNAPSHOT_MAGIC {
        return None;
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let grid = PeriodicGrid::new(u32_at(8), u32_at(12), f64_at(16)).ok()?;
    let t = f64_at(24);
    if bytes.len() != 32 + 8 * grid.point_count() {
        return None;
    }
    let values = bytes[32..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Some((Field::new(grid, values).ok()?, t))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileChecksum {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub artifact_version: String,
    pub wall_clock_seconds: f64,
    pub exit_code: i32,
    pub files: Vec<FileChecksum>,
}

/// Checks every listed file against its recorded checksum.
pub fn verify_manifest(dir: &Path) -> Result<bool, SimError> {
    let path = dir.join(MANIFEST_JSON);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: RunManifest =
        serde_json::from_str(&text).map_err(|e| SimError::Numerics(format!("bad manifest: {e}")))?;
    for f in &manifest.files {
        let p = dir.join(&f.path);
        let bytes = fs::read(&p).map_err(io_err(&p))?;
        if sha256_hex(&bytes) != f.sha256 || bytes.len() as u64 != f.bytes {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, Serialize)]
struct RunSummary<'a> {
    config_hash: String,
    exit_code: i32,
    all_asserted_pass: bool,
    max_mass_drift: f64,
    report: &'a EnergyReport,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub directory: PathBuf,
    pub trajectory: Trajectory,
    pub report: EnergyReport,
}

fn write_file(dir: &Path, rel: &str, bytes: &[u8], files: &mut Vec<FileChecksum>) -> Result<(), SimError> {
    let path = dir.join(rel);
    let mut f = fs::File::create(&path).map_err(io_err(&path))?;
    f.write_all(bytes).map_err(io_err(&path))?;
    files.push(FileChecksum {
        path: rel.to_string(),
        sha256: sha256_hex(bytes),
        bytes: bytes.len() as u64,
    });
    Ok(())
}

/// Runs one configuration and writes its outputs to `out_dir` (the
/// config's directory unless overridden).
pub fn simulate(config: &RunConfig, out_dir: Option<&Path>) -> Result<RunOutcome, SimError> {
    let started = Instant::now();
    config.validate()?;
    let params = config.model_params()?;
    let grid = config.spatial_grid()?;
    let time_grid = config.time_grid()?;
    let omegas = config.weight_functions();
    let dir = out_dir.map_or_else(|| config.output.directory.clone(), Path::to_path_buf);

    fs::create_dir_all(dir.join(SNAPSHOT_DIR)).map_err(io_err(&dir))?;
    // a manifest from an earlier run must not vouch for this one
    let stale = dir.join(MANIFEST_JSON);
    if stale.exists() {
        fs::remove_file(&stale).map_err(io_err(&stale))?;
    }

    let phi0 = initial_field(&config.initial, grid);
    let result = if config.solver.dealiasing {
        run_dealiased(phi0, &params, &time_grid)
    } else {
        run(phi0, &params, &time_grid)
    };
    let traj = match result {
        Ok(t) => t,
        Err(FracError::BlowUp { step, max_abs }) => return Err(SimError::BlowUp { step, max_abs }),
        Err(e) => return Err(SimError::Numerics(e.to_string())),
    };

    let options = ReportOptions {
        stride: config.output.report_stride,
        skip_first_interior: config.output.skip_first_interior,
        ..Default::default()
    };
    let report =
        dissipation_report(&traj, &omegas, &params, &options).map_err(|e| SimError::Numerics(e.to_string()))?;
    let exit_code = if report.all_asserted_pass() {
        EXIT_OK
    } else {
        EXIT_FLAG_FAILURE
    };

    let mut files = Vec::new();
    let n_steps = time_grid.n_steps();
    let stride = config.output.snapshot_stride.unwrap_or(n_steps);
    for k in (0..=n_steps).filter(|&k| k % stride == 0 || k == n_steps) {
        let rel = format!("{SNAPSHOT_DIR}/phi_{k:06}.bin");
        write_file(&dir, &rel, &encode_snapshot(&traj.fields()[k], traj.times()[k]), &mut files)?;
    }
    write_file(&dir, ENERGY_CSV, report.to_csv().as_bytes(), &mut files)?;
    let m0 = traj.masses()[0];
    let summary = RunSummary {
        config_hash: config.hash(),
        exit_code,
        all_asserted_pass: report.all_asserted_pass(),
        max_mass_drift: traj.masses().iter().map(|m| (m - m0).abs()).fold(0.0, f64::max),
        report: &report,
    };
    let summary_json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_file(&dir, REPORT_JSON, summary_json.as_bytes(), &mut files)?;
    write_file(&dir, "config.json", config.to_json().as_bytes(), &mut files)?;

    let manifest = RunManifest {
        config_hash: config.hash(),
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        exit_code,
        files,
    };
    let path = dir.join(MANIFEST_JSON);
    fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes")).map_err(io_err(&path))?;

    Ok(RunOutcome {
        exit_code,
        directory: dir,
        trajectory: traj,
        report,
    })
}

pub fn cmd_simulate(config_path: &Path, out_dir: Option<&Path>) -> i32 {
    let config = match RunConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    match simulate(&config, out_dir) {
        Ok(outcome) => {
            println!(
                "{}: E(0) = {:.6e}, E(T) = {:.6e}, flags {}",
                outcome.directory.display(),
                outcome.report.initial_energy,
                outcome.report.final_energy,
                if outcome.exit_code == EXIT_OK { "pass" } else { "FAIL" }
            );
            outcome.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

// ---- sweeps ----

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(default)]
    pub alpha: Option<Vec<f64>>,
    #[serde(default)]
    pub epsilon: Option<Vec<f64>>,
    #[serde(default)]
    pub gamma: Option<Vec<f64>>,
    #[serde(default)]
    pub operator: Option<Vec<Operator>>,
    /// Only valid with a `random` initial condition.
    #[serde(default)]
    pub seed: Option<Vec<u64>>,
    #[serde(default)]
    pub n_steps: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub schema_version: u32,
    /// Template; its `output.directory` is replaced per run.
    pub base: RunConfig,
    pub axes: SweepAxes,
    pub output_directory: PathBuf,
}

fn axis<T: Clone>(values: &Option<Vec<T>>, current: T, key: &str) -> Result<Vec<T>, ConfigError> {
    match values {
        None => Ok(vec![current]),
        Some(v) if v.is_empty() => Err(invalid(key, "axis must not be empty")),
        Some(v) => Ok(v.clone()),
    }
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: SweepConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", cfg.schema_version),
            ));
        }
        cfg.expand()?;
        Ok(cfg)
    }

    /// Cartesian product in the fixed order alpha, epsilon, gamma,
    /// operator, seed, n_steps (last axis varies fastest).
    pub fn expand(&self) -> Result<Vec<RunConfig>, ConfigError> {
        let b = &self.base;
        let seed0 = match b.initial {
            InitialCondition::Random { seed, .. } => Some(seed),
            _ => None,
        };
        if self.axes.seed.is_some() && seed0.is_none() {
            return Err(invalid("axes.seed", "needs a random initial condition in `base`"));
        }
        let alphas = axis(&self.axes.alpha, b.model.alpha, "axes.alpha")?;
        let epsilons = axis(&self.axes.epsilon, b.model.epsilon, "axes.epsilon")?;
        let gammas = axis(&self.axes.gamma, b.model.gamma, "axes.gamma")?;
        let operators = axis(&self.axes.operator, b.model.operator, "axes.operator")?;
        let seeds = axis(&self.axes.seed, seed0.unwrap_or(0), "axes.seed")?;
        let steps = axis(&self.axes.n_steps, b.time.n_steps, "axes.n_steps")?;
        let mut out = Vec::new();
        for &alpha in &alphas {
            for &epsilon in &epsilons {
                for &gamma in &gammas {
                    for &operator in &operators {
                        for &seed in &seeds {
                            for &n_steps in &steps {
                                let mut c = b.clone();
                                c.model.alpha = alpha;
                                c.model.epsilon = epsilon;
                                c.model.gamma = gamma;
                                c.model.operator = operator;
                                if let InitialCondition::Random { seed: s, .. } = &mut c.initial {
                                    *s = seed;
                                }
                                c.time.n_steps = n_steps;
                                c.output.directory = self.output_directory.join(format!("run_{:04}", out.len()));
                                c.validate().map_err(|e| match e {
                                    ConfigError::Invalid { key, message } => ConfigError::Invalid {
                                        key: format!("base.{key} (run {})", out.len()),
                                        message,
                                    },
                                    other => other,
                                })?;
                                out.push(c);
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Worker count for sweeps: `FRACPHASE_THREADS` if set to a positive
/// integer, otherwise rayon's default.
pub fn sweep_threads() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub config: RunConfig,
    pub exit_code: i32,
    pub initial_energy: Option<f64>,
    pub final_energy: Option<f64>,
}

/// Runs every expanded configuration, writes `summary.csv`, and returns
/// the per-run rows plus the aggregate exit code (the largest per-run code).
pub fn sweep(config: &SweepConfig) -> Result<(Vec<SweepRow>, i32), SimError> {
    let runs = config.expand()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = sweep_threads() {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| SimError::Numerics(e.to_string()))?;
    let rows: Vec<SweepRow> = pool.install(|| {
        runs.into_par_iter()
            .map(|c| match simulate(&c, None) {
                Ok(o) => SweepRow {
                    exit_code: o.exit_code,
                    initial_energy: Some(o.report.initial_energy),
                    final_energy: Some(o.report.final_energy),
                    config: c,
                },
                Err(e) => {
                    eprintln!("{}: {e}", c.output.directory.display());
                    SweepRow {
                        exit_code: e.exit_code(),
                        initial_energy: None,
                        final_energy: None,
                        config: c,
                    }
                }
            })
            .collect()
    });

    let mut csv = String::from("run,alpha,epsilon,gamma,operator,seed,n_steps,exit_code,E0,E_final\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.17e}"));
    for (i, r) in rows.iter().enumerate() {
        let c = &r.config;
        let seed = match c.initial {
            InitialCondition::Random { seed, .. } => seed.to_string(),
            _ => String::new(),
        };
        let op = match c.model.operator {
            Operator::AllenCahn => "allen_cahn",
            Operator::CahnHilliard => "cahn_hilliard",
        };
        csv.push_str(&format!(
            "{i},{},{},{},{op},{seed},{},{},{},{}\n",
            c.model.alpha,
            c.model.epsilon,
            c.model.gamma,
            c.time.n_steps,
            r.exit_code,
            opt(r.initial_energy),
            opt(r.final_energy)
        ));
    }
    let path = config.output_directory.join("summary.csv");
    fs::create_dir_all(&config.output_directory).map_err(io_err(&config.output_directory))?;
    fs::write(&path, csv).map_err(io_err(&path))?;
    let code = rows.iter().map(|r| r.exit_code).max().unwrap_or(EXIT_OK);
    Ok((rows, code))
}

pub fn cmd_sweep(config_path: &Path) -> i32 {
    let loaded = fs::read_to_string(config_path)
        .map_err(io_err(config_path))
        .and_then(|t| Ok(SweepConfig::from_json(&t)?));
    let config = match loaded {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    match sweep(&config) {
        Ok((rows, code)) => {
            let ok = rows.iter().filter(|r| r.exit_code == EXIT_OK).count();
            println!("{ok}/{} runs passed; summary in {}", rows.len(), config.output_directory.join("summary.csv").display());
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

// ---- certification ----

#[derive(Debug, Clone, PartialEq)]
pub struct CertifyOptions {
    /// `abel`, `kappa-weighted`, `kappa-energy`, or a path to a matrix file.
    pub target: String,
    pub points: Option<Vec<f64>>,
    /// Number of random points when `points` is absent.
    pub random: Option<usize>,
    pub seed: u64,
    pub alpha: f64,
    /// `beta` or `power`, for `kappa-weighted`.
    pub weight: String,
    /// Final time for `kappa-energy`.
    pub t: f64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            target: "abel".into(),
            points: None,
            random: None,
            seed: 0,
            alpha: 0.5,
            weight: "beta".into(),
            t: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct MatrixCertification {
    source: String,
    matrix: SymMatrix,
    properties: Option<PropertyReport>,
    certificate: Option<PDCertificate>,
    failure: Option<String>,
}

/// Sorted, distinct points drawn uniformly from the inner 98% of `(lo, hi)`
/// (`[0, 4)` for unbounded domains).
pub fn random_points(count: usize, domain: (f64, f64), seed: u64) -> Vec<f64> {
    let (lo, hi) = if domain.0.is_finite() && domain.1.is_finite() {
        domain
    } else {
        (0.0, 4.0)
    };
    let margin = 0.01 * (hi - lo);
    let min_gap = 1e-3 * (hi - lo);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts: Vec<f64> = Vec::with_capacity(count);
    while pts.len() < count {
        let x = lo + margin + (hi - lo - 2.0 * margin) * rng.gen::<f64>();
        if pts.iter().all(|p| (p - x).abs() >= min_gap) {
            pts.push(x);
        }
    }
    pts.sort_by(f64::total_cmp);
    pts
}

/// Reads a symmetric matrix as JSON rows (`[[..], ..]`) or as text with
/// one row per line, entries separated by commas or whitespace.
pub fn parse_matrix(text: &str) -> Result<SymMatrix, String> {
    let rows: Vec<Vec<f64>> = match serde_json::from_str(text) {
        Ok(rows) => rows,
        Err(_) => text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| {
                l.split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<f64>().map_err(|e| format!("bad entry {s:?}: {e}")))
                    .collect()
            })
            .collect::<Result<_, _>>()?,
    };
    if rows.is_empty() || rows.iter().any(|r| r.len() != rows.len()) {
        return Err("matrix must be square and nonempty".into());
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err("matrix entries must be finite".into());
    }
    SymMatrix::from_rows(&rows).map_err(|e| e.to_string())
}

/// Runs one certification; returns the exit code and the JSON report.
pub fn certify(opts: &CertifyOptions) -> (i32, String) {
    let fail = |msg: String| (EXIT_INVALID, serde_json::json!({ "error": msg }).to_string());
    let kernel = match opts.target.as_str() {
        "abel" => Ok(KernelFn::abel()),
        "kappa-weighted" => {
            if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
                return fail(format!("--alpha must lie in (0, 1), got {}", opts.alpha));
            }
            let omega = match opts.weight.as_str() {
                "beta" => WeightFunction::beta(opts.alpha),
                "power" => WeightFunction::power(opts.alpha),
                other => return fail(format!("unknown --weight {other:?} (beta | power)")),
            };
            KernelFn::kappa_weighted(omega, opts.alpha)
        }
        "kappa-energy" => KernelFn::kappa_energy(opts.alpha, opts.t),
        path => {
            let text = match fs::read_to_string(path) {
                Ok(t) => t,
                Err(e) => return fail(format!("{path}: not a known kernel and not readable ({e})")),
            };
            return match parse_matrix(&text) {
                Ok(m) => certify_matrix(path, m),
                Err(e) => fail(format!("{path}: {e}")),
            };
        }
    };
    let kernel = match kernel {
        Ok(k) => k,
        Err(e) => return fail(e.to_string()),
    };
    let mut points = match (&opts.points, opts.random) {
        (Some(p), _) => p.clone(),
        (None, Some(n)) if n >= 1 => random_points(n, kernel.domain(), opts.seed),
        _ => return fail("give --points or --random <count>".into()),
    };
    if points.iter().any(|p| !p.is_finite()) {
        return fail("points must be finite".into());
    }
    points.sort_by(f64::total_cmp);
    if points.windows(2).any(|w| w[0] == w[1]) {
        return fail("points must be distinct".into());
    }
    match certify_kernel(&kernel, &points) {
        Ok(c) => {
            let code = if c.is_certified() { EXIT_OK } else { EXIT_FLAG_FAILURE };
            (code, serde_json::to_string_pretty(&c).expect("certification serializes"))
        }
        Err(e) => fail(e.to_string()),
    }
}

fn certify_matrix(source: &str, matrix: SymMatrix) -> (i32, String) {
    let tol = default_tolerance(&matrix);
    let mut out = MatrixCertification {
        source: source.to_string(),
        matrix: matrix.clone(),
        properties: None,
        certificate: None,
        failure: None,
    };
    match check_p_properties(&matrix, tol) {
        Ok(p) => out.properties = Some(p),
        Err(e) => out.failure = Some(e.to_string()),
    }
    if out.failure.is_none() {
        match monotone_cholesky(&matrix, tol) {
            Ok(c) => {
                if !c.is_valid(&matrix) {
                    out.failure = Some("certificate checks failed".into());
                }
                out.certificate = Some(c);
            }
            Err(e) => out.failure = Some(e.to_string()),
        }
    }
    let code = if out.failure.is_none() { EXIT_OK } else { EXIT_FLAG_FAILURE };
    (code, serde_json::to_string_pretty(&out).expect("certification serializes"))
}

pub fn cmd_certify(opts: &CertifyOptions) -> i32 {
    let (code, json) = certify(opts);
    if code == EXIT_INVALID {
        eprintln!("{json}");
    } else {
        println!("{json}");
    }
    code
}
