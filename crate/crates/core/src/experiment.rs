//! Experiment configuration, orchestration and the CSV/SVG artifacts.
//!
//! Every CSV starts with a `# config_hash=... tolerances=...` line, then a
//! header row. Numbers are written in fixed `{:.12e}` form, so a rerun of
//! the same configuration reproduces the files byte for byte.

use std::f64::consts::PI;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::evolution::{solve_desitter_direct, DirectSolveConfig, EvolutionError, Outcome};
use crate::field::{random_bandlimited, FieldError, PeriodicGrid, SpectralField, Trajectory};
use crate::kernels::{self, KernelArgs, KernelError, ModelParams};
use crate::semilinear::{
    lifespan_sweep, picard_solve, LifespanOptions, LifespanSolver, NonlinearSpec, PicardConfig, PicardReport,
    SemilinearError,
};
use crate::specfun::C64;
use crate::transform::{linear_trajectory, LinearProblem, QuadratureSpec, TransformError};
use crate::verify::{
    self, check_appendix_lemma, AppendixReport, BoundCheckSpec, BoundReport, DecayCase, DecaySetup, LemmaId,
    VerifyError,
};

pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_NON_CONVERGENCE: i32 = 4;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{0}")]
    NonConvergence(String),
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
}

impl ExperimentError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config { .. } => EXIT_CONFIG,
            ExperimentError::Numerical(_) | ExperimentError::Output { .. } => EXIT_NUMERICAL,
            ExperimentError::NonConvergence(_) => EXIT_NON_CONVERGENCE,
        }
    }
}

fn config_err(path: &str, message: impl fmt::Display) -> ExperimentError {
    ExperimentError::Config {
        path: path.to_string(),
        message: message.to_string(),
    }
}

fn numerical(e: impl fmt::Display) -> ExperimentError {
    ExperimentError::Numerical(e.to_string())
}

impl From<FieldError> for ExperimentError {
    fn from(e: FieldError) -> Self {
        match e {
            FieldError::InvalidGrid { .. } => config_err("grid", e),
            other => numerical(other),
        }
    }
}

impl From<KernelError> for ExperimentError {
    fn from(e: KernelError) -> Self {
        match e {
            KernelError::Model(_) => config_err("model", e),
            other => numerical(other),
        }
    }
}

impl From<TransformError> for ExperimentError {
    fn from(e: TransformError) -> Self {
        match e {
            TransformError::Quadrature { .. } => config_err("quad", e),
            TransformError::Field(f) => f.into(),
            other => numerical(other),
        }
    }
}

impl From<EvolutionError> for ExperimentError {
    fn from(e: EvolutionError) -> Self {
        match e {
            EvolutionError::Config(_) => config_err("solve", e),
            EvolutionError::Field(f) => f.into(),
            other => numerical(other),
        }
    }
}

impl From<SemilinearError> for ExperimentError {
    fn from(e: SemilinearError) -> Self {
        match e {
            SemilinearError::Spec(_) => config_err("nonlinearity", e),
            SemilinearError::SobolevIndex { .. } => config_err("model.s", e),
            SemilinearError::Config(_) | SemilinearError::TimeGrid(_) => config_err("picard", e),
            SemilinearError::NotBlowupRegime { .. } => config_err("model.M", e),
            SemilinearError::NonConvergence { .. } => ExperimentError::NonConvergence(e.to_string()),
            SemilinearError::Transform(t) => t.into(),
            SemilinearError::Evolution(v) => v.into(),
            SemilinearError::Field(f) => f.into(),
        }
    }
}

impl From<VerifyError> for ExperimentError {
    fn from(e: VerifyError) -> Self {
        match e {
            VerifyError::Hypothesis { .. } | VerifyError::EmptyGrid { .. } | VerifyError::DegenerateWindow { .. } => {
                config_err("bounds", e)
            }
            VerifyError::Point { .. } => config_err("bounds", e),
            VerifyError::Evolution(v) => v.into(),
            other => numerical(other),
        }
    }
}

/// A complex number written either as a real or as `[re, im]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CNum {
    Real(f64),
    Pair([f64; 2]),
}

impl CNum {
    pub fn value(self) -> C64 {
        match self {
            CNum::Real(x) => Complex64::new(x, 0.0),
            CNum::Pair([re, im]) => Complex64::new(re, im),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub n: u32,
    /// Mass squared.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m2: Option<CNum>,
    /// Principal root of n^2/4 - m2.
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub m: Option<CNum>,
    #[serde(default = "default_s")]
    pub s: f64,
}

fn default_s() -> f64 {
    1.0
}

impl ModelSection {
    pub fn params(&self) -> Result<ModelParams, ExperimentError> {
        if self.n == 0 {
            return Err(config_err("model.n", "n must be positive"));
        }
        let p = match (self.m2, self.m) {
            (None, None) => return Err(config_err("model", "one of `m2` or `M` is required")),
            (None, Some(m)) => {
                if m.value().re < 0.0 {
                    return Err(config_err("model.M", "M must be the principal root (Re M >= 0)"));
                }
                ModelParams::from_eff_mass(self.n, m.value(), self.s)
            }
            (Some(m2), None) => ModelParams::new(self.n, m2.value(), self.s),
            (Some(m2), Some(m)) => {
                let p = ModelParams {
                    eff_mass: m.value(),
                    ..ModelParams::new(self.n, m2.value(), self.s)
                };
                p.validate()
                    .map_err(|e| config_err("model.M", format!("invariant M^2 = n^2/4 - m2 violated: {e}")))?;
                p
            }
        };
        if !p.s.is_finite() {
            return Err(config_err("model.s", "s must be finite"));
        }
        p.validate().map_err(|e| config_err("model", e))?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_npts")]
    pub npts: usize,
}

fn default_d() -> usize {
    1
}
fn default_npts() -> usize {
    256
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            d: default_d(),
            npts: default_npts(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Run {
    KernelEval,
    SolveLinear,
    /// The pseudo-spectral solver alone, with the nonlinearity if one is given.
    SolveDirect,
    SolveSemilinear,
    LifespanSweep,
    VerifyDecay,
    VerifyBounds,
    VerifyAppendix,
}

impl fmt::Display for Run {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).map_err(|_| fmt::Error)?;
        f.write_str(v.as_str().unwrap_or_default())
    }
}

/// Shape of an initial datum. Bumps and Gaussians are centred at pi in
/// every direction; `random` is drawn from the config seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum Profile {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    /// amp * prod (1 + cos x_i) / 2
    Bump {
        #[serde(default = "one")]
        amp: f64,
    },
    Gaussian {
        #[serde(default = "one")]
        amp: f64,
        sigma: f64,
    },
    /// amp * cos(k x)
    Cosine {
        #[serde(default = "one")]
        amp: f64,
        k: i64,
    },
    /// Band-limited random field scaled to H^s norm `amp`.
    Random {
        #[serde(default = "one")]
        amp: f64,
        kmax: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl Profile {
    pub fn field(&self, grid: PeriodicGrid, s: f64, rng: &mut ChaCha8Rng) -> SpectralField {
        let d2 = grid.d == 2;
        let r = |x: f64| Complex64::new(x, 0.0);
        match *self {
            Profile::Zero => SpectralField::zeros(grid),
            Profile::Constant { value } => SpectralField::constant(grid, r(value)),
            Profile::Bump { amp } => SpectralField::from_fn(grid, |x, y| {
                let by = if d2 { 0.5 * (1.0 + (y - PI).cos()) } else { 1.0 };
                r(amp * 0.5 * (1.0 + (x - PI).cos()) * by)
            }),
            Profile::Gaussian { amp, sigma } => SpectralField::from_fn(grid, |x, y| {
                let dy = if d2 { (y - PI).powi(2) } else { 0.0 };
                r(amp * (-((x - PI).powi(2) + dy) / (2.0 * sigma * sigma)).exp())
            }),
            Profile::Cosine { amp, k } => SpectralField::from_fn(grid, |x, _| r(amp * (k as f64 * x).cos())),
            Profile::Random { amp, kmax } => {
                let f = random_bandlimited(grid, kmax, rng);
                let norm = f.sobolev_norm(s);
                if norm > 0.0 {
                    f.scale(r(amp / norm))
                } else {
                    f
                }
            }
        }
    }

    fn validate(&self, path: &str) -> Result<(), ExperimentError> {
        let finite = |x: f64| x.is_finite();
        let ok = match *self {
            Profile::Zero => true,
            Profile::Constant { value } => finite(value),
            Profile::Bump { amp } => finite(amp),
            Profile::Gaussian { amp, sigma } => finite(amp) && sigma > 0.0 && finite(sigma),
            Profile::Cosine { amp, .. } => finite(amp),
            Profile::Random { amp, kmax } => finite(amp) && kmax >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(config_err(
                path,
                "profile parameters must be finite (sigma > 0, kmax >= 0)",
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    #[serde(default = "default_psi0")]
    pub psi0: Profile,
    #[serde(default)]
    pub psi1: Profile,
}

fn default_psi0() -> Profile {
    Profile::Gaussian { amp: 1.0, sigma: 0.5 }
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            psi0: default_psi0(),
            psi1: Profile::Zero,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Transform,
    Direct,
    #[default]
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSection {
    #[serde(default = "default_t_final")]
    pub t_final: f64,
    /// Equispaced samples on [0, t_final], both ends included.
    #[serde(default = "default_n_times")]
    pub n_times: usize,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default = "default_solve_rtol")]
    pub rtol: f64,
    #[serde(default = "default_solve_atol")]
    pub atol: f64,
    /// Largest relative H^s discrepancy accepted between the two solvers.
    #[serde(default = "default_discrepancy_tol")]
    pub discrepancy_tol: f64,
}

fn default_t_final() -> f64 {
    4.0
}
fn default_n_times() -> usize {
    41
}
fn default_solve_rtol() -> f64 {
    1e-10
}
fn default_solve_atol() -> f64 {
    1e-14
}
fn default_discrepancy_tol() -> f64 {
    1e-3
}

impl Default for SolveSection {
    fn default() -> Self {
        Self {
            t_final: default_t_final(),
            n_times: default_n_times(),
            method: Method::Both,
            data: DataSpec::default(),
            rtol: default_solve_rtol(),
            atol: default_solve_atol(),
            discrepancy_tol: default_discrepancy_tol(),
        }
    }
}

impl SolveSection {
    pub fn times(&self) -> Vec<f64> {
        (0..self.n_times)
            .map(|i| self.t_final * i as f64 / (self.n_times - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum KernelKind {
    /// E(r, t; t0)
    #[default]
    E,
    /// K0(z, t), with z read from `r`
    K0,
    /// K1(z, t), with z read from `r`
    K1,
    /// dE/dt (r, t; b), with b read from `t0`
    #[serde(rename = "dE_dt")]
    DeDt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelPoint {
    pub r: f64,
    pub t: f64,
    #[serde(default)]
    pub t0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    #[serde(default)]
    pub which: KernelKind,
    #[serde(default = "default_points")]
    pub points: Vec<KernelPoint>,
}

fn default_points() -> Vec<KernelPoint> {
    vec![
        KernelPoint {
            r: 0.0,
            t: 1.0,
            t0: 0.0,
        },
        KernelPoint {
            r: 0.3,
            t: 1.0,
            t0: 0.0,
        },
        KernelPoint {
            r: 0.1,
            t: 2.0,
            t0: 0.5,
        },
    ]
}

impl Default for KernelSection {
    fn default() -> Self {
        Self {
            which: KernelKind::E,
            points: default_points(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifespanSection {
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    #[serde(default = "default_solver")]
    pub solver: LifespanSolver,
    #[serde(default)]
    pub options: LifespanOptions,
    /// Accepted relative deviation of the fitted slope from theory.
    #[serde(default = "default_slope_tol")]
    pub slope_tol: f64,
}

fn default_eps() -> Vec<f64> {
    vec![1e-2, 3e-3, 1e-3, 3e-4, 1e-4]
}
fn default_solver() -> LifespanSolver {
    LifespanSolver::Direct
}
fn default_slope_tol() -> f64 {
    0.2
}

impl Default for LifespanSection {
    fn default() -> Self {
        Self {
            eps: default_eps(),
            solver: default_solver(),
            options: LifespanOptions::default(),
            slope_tol: default_slope_tol(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaySection {
    /// Chosen from M when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case: Option<DecayCase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setup: Option<DecaySetup>,
    /// Accepted rel_dev; 0.10 below Re M = 1/2 and at 1/2, 0.15 above.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub quad: QuadratureSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonlinearity: Option<NonlinearSpec>,
    pub run: Run,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub kernel: KernelSection,
    #[serde(default)]
    pub solve: SolveSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub picard: Option<PicardConfig>,
    #[serde(default)]
    pub lifespan: LifespanSection,
    #[serde(default)]
    pub decay: DecaySection,
    /// Checks to run; the run kind supplies a default list when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<BoundCheckSpec>>,
    #[serde(default = "default_svg")]
    pub svg: bool,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_svg() -> bool {
    true
}

impl ExperimentConfig {
    pub fn params(&self) -> Result<ModelParams, ExperimentError> {
        let p = self.model.params()?;
        Ok(match &self.nonlinearity {
            Some(f) => p.with_alpha(f.alpha()),
            None => p,
        })
    }

    pub fn periodic_grid(&self) -> Result<PeriodicGrid, ExperimentError> {
        Ok(PeriodicGrid::new(self.grid.d, self.grid.npts)?)
    }

    /// SHA-256 of the canonical JSON of the config, output directory excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let text = serde_json::to_string(&c).expect("config serialises");
        Sha256::digest(text.as_bytes())
            .iter()
            .fold(String::with_capacity(64), |mut s, b| {
                let _ = write!(s, "{b:02x}");
                s
            })
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let params = self.params()?;
        self.periodic_grid()?;
        self.quad.validate().map_err(|e| config_err("quad", e))?;
        if let Some(f) = &self.nonlinearity {
            f.validate().map_err(|e| config_err("nonlinearity", e))?;
        }
        let needs_nonlinearity = matches!(self.run, Run::SolveSemilinear | Run::LifespanSweep);
        if needs_nonlinearity && self.nonlinearity.is_none() {
            return Err(config_err(
                "nonlinearity",
                format!("run `{}` needs a nonlinearity", self.run),
            ));
        }
        match self.run {
            Run::KernelEval => {
                if self.kernel.points.is_empty() {
                    return Err(config_err("kernel.points", "at least one point is required"));
                }
            }
            Run::SolveLinear | Run::SolveDirect | Run::SolveSemilinear => {
                let s = &self.solve;
                if !(s.t_final > 0.0 && s.t_final.is_finite()) {
                    return Err(config_err("solve.t_final", "must be positive"));
                }
                if s.n_times < 2 {
                    return Err(config_err("solve.n_times", "at least 2 samples are required"));
                }
                if !(s.rtol > 0.0 && s.atol > 0.0 && s.discrepancy_tol > 0.0) {
                    return Err(config_err("solve", "rtol, atol and discrepancy_tol must be positive"));
                }
                s.data.psi0.validate("solve.data.psi0")?;
                s.data.psi1.validate("solve.data.psi1")?;
            }
            _ => {}
        }
        if self.run == Run::SolveSemilinear {
            let cfg = self
                .picard
                .as_ref()
                .ok_or_else(|| config_err("picard", "run `solve_semilinear` needs a `picard` section"))?;
            cfg.validate().map_err(|e| config_err("picard", e))?;
            let half_d = 0.5 * self.grid.d as f64;
            if params.s <= half_d {
                return Err(config_err(
                    "model.s",
                    format!("s = {} must exceed d/2 = {half_d} for the semilinear problem", params.s),
                ));
            }
        }
        if self.run == Run::LifespanSweep {
            let l = &self.lifespan;
            if l.eps.is_empty() || l.eps.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
                return Err(config_err(
                    "lifespan.eps",
                    "a non-empty list of positive values is required",
                ));
            }
            PeriodicGrid::new(1, l.options.npts).map_err(|e| config_err("lifespan.options.npts", e))?;
        }
        if let Some(tol) = self.decay.tol {
            if !(tol > 0.0) {
                return Err(config_err("decay.tol", "must be positive"));
            }
        }
        if let Some(specs) = &self.bounds {
            for (i, s) in specs.iter().enumerate() {
                if !(s.a > -1.0) {
                    return Err(config_err(&format!("bounds[{i}].a"), "a must exceed -1"));
                }
                if s.resolution == 0 {
                    return Err(config_err(&format!("bounds[{i}].resolution"), "must be at least 1"));
                }
            }
        }
        Ok(())
    }
}

/// Parses and validates a config; errors name the offending field path.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ExperimentError> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(|e| config_err("<root>", e))?;
    config_from_value(v)
}

/// Schema errors carry the JSON path of the offending field.
pub fn config_from_value(v: serde_json::Value) -> Result<ExperimentConfig, ExperimentError> {
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(v).map_err(|e| {
        let path = e.path().to_string();
        config_err(
            if path.is_empty() || path == "." {
                "<root>"
            } else {
                &path
            },
            e.into_inner(),
        )
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ExperimentError> {
    let text = fs::read_to_string(path).map_err(|e| config_err(&path.display().to_string(), e))?;
    parse_config(&text)
}

/// One pass/fail line of a run, with the tolerance it was judged against.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(
            f,
            "{tag} {}: value {:.6e}, tolerance {:.3e}",
            self.name, self.value, self.tolerance
        )?;
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub run: Run,
    pub config_hash: String,
    pub checks: Vec<Check>,
    /// Human-readable result lines.
    pub report: Vec<String>,
    pub files: Vec<String>,
}

impl RunSummary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            EXIT_CHECK_FAILED
        }
    }
}

struct Outputs {
    dir: PathBuf,
    hash: String,
    run: Run,
    files: Vec<String>,
}

impl Outputs {
    fn write(&mut self, name: &str, body: &str) -> Result<(), ExperimentError> {
        let path = self.dir.join(name);
        fs::write(&path, body).map_err(|source| ExperimentError::Output { path, source })?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn header(&self, tolerances: &[(&str, f64)]) -> String {
        let tol: Vec<String> = tolerances.iter().map(|(k, v)| format!("{k}={v:e}")).collect();
        let tol = if tol.is_empty() {
            "none".to_string()
        } else {
            tol.join(";")
        };
        format!("# config_hash={} run={} tolerances={tol}\n", self.hash, self.run)
    }

    fn csv(
        &mut self,
        name: &str,
        tolerances: &[(&str, f64)],
        columns: &str,
        rows: &[String],
    ) -> Result<(), ExperimentError> {
        let mut body = self.header(tolerances);
        body.push_str(columns);
        body.push('\n');
        for r in rows {
            body.push_str(r);
            body.push('\n');
        }
        self.write(name, &body)
    }

    fn trajectory(&mut self, name: &str, traj: &Trajectory, tolerances: &[(&str, f64)]) -> Result<(), ExperimentError> {
        let mut buf = Vec::new();
        let comment = self.header(tolerances);
        let comment = comment.trim_start_matches("# ").trim_end();
        traj.write_csv(&mut buf, Some(comment))
            .map_err(|source| ExperimentError::Output {
                path: self.dir.join(name),
                source,
            })?;
        self.write(name, &String::from_utf8(buf).expect("csv is utf-8"))
    }
}

fn e12(x: f64) -> String {
    format!("{x:.12e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(e12).unwrap_or_default()
}

/// Runs the configured experiment and writes its artifacts under `output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary, ExperimentError> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir).map_err(|source| ExperimentError::Output {
        path: cfg.output_dir.clone(),
        source,
    })?;
    let mut out = Outputs {
        dir: cfg.output_dir.clone(),
        hash: cfg.hash(),
        run: cfg.run,
        files: Vec::new(),
    };
    let mut checks = Vec::new();
    let mut report = Vec::new();
    if cfg.model.n < 2 {
        report.push(format!(
            "note: n = {} is outside the existence and decay theory (n >= 2); results are empirical",
            cfg.model.n
        ));
    }
    let result = match cfg.run {
        Run::KernelEval => run_kernel_eval(cfg, &mut out, &mut checks, &mut report),
        Run::SolveLinear => run_solve_linear(cfg, &mut out, &mut checks, &mut report),
        Run::SolveDirect => run_solve_direct(cfg, &mut out, &mut checks, &mut report),
        Run::SolveSemilinear => run_solve_semilinear(cfg, &mut out, &mut checks, &mut report),
        Run::LifespanSweep => run_lifespan(cfg, &mut out, &mut checks, &mut report),
        Run::VerifyDecay => run_verify_decay(cfg, &mut out, &mut checks, &mut report),
        Run::VerifyBounds | Run::VerifyAppendix => run_verify_bounds(cfg, &mut out, &mut checks, &mut report),
    };
    result?;
    let mut summary = RunSummary {
        run: cfg.run,
        config_hash: out.hash.clone(),
        checks,
        report,
        files: Vec::new(),
    };
    summary.files = out.files.clone();
    summary.files.push("summary.json".into());
    let json = serde_json::to_string_pretty(&summary).map_err(numerical)?;
    out.write("summary.json", &(json + "\n"))?;
    Ok(summary)
}

fn run_kernel_eval(
    cfg: &ExperimentConfig,
    out: &mut Outputs,
    checks: &mut Vec<Check>,
    report: &mut Vec<String>,
) -> Result<(), ExperimentError> {
    let m = cfg.params()?.eff_mass;
    let which = cfg.kernel.which;
    let mut rows = Vec::new();
    let mut worst_half: f64 = 0.0;
    for (i, p) in cfg.kernel.points.iter().enumerate() {
        let path = format!("kernel.points[{i}]");
        let v = match which {
            KernelKind::E => kernels::kernel_e_eval(
                KernelArgs {
                    r: p.r,
                    t: p.t,
                    t0: p.t0,
                },
                m,
            ),
            KernelKind::K0 => kernels::kernel_k0_eval(p.r, p.t, m),
            KernelKind::K1 => kernels::kernel_e_eval(
                KernelArgs {
                    r: p.r,
                    t: p.t,
                    t0: 0.0,
                },
                m,
            ),
            KernelKind::DeDt => kernels::kernel_de_dt_eval(p.r, p.t, p.t0, m),
        }
        .map_err(|e| match e {
            KernelError::Domain { .. } | KernelError::Times { .. } | KernelError::Singular { .. } => {
                config_err(&path, e)
            }
            other => numerical(other),
        })?;
        let branch = serde_json::to_value(v.branch)
            .ok()
            .and_then(|b| b.as_str().map(String::from))
            .unwrap_or_default();
        let name = serde_json::to_value(which)
            .ok()
            .and_then(|b| b.as_str().map(String::from))
            .unwrap_or_default();
        report.push(format!(
            "{name}(r={}, t={}, t0={}; M={m}) = {:.15e} {:+.15e}i [{branch}]",
            p.r, p.t, p.t0, v.value.re, v.value.im
        ));
        rows.push(format!(
            "{},{},{},{},{},{},{}",
            e12(p.r),
            e12(p.t),
            e12(p.t0),
            e12(v.value.re),
            e12(v.value.im),
            branch,
            e12(v.est_abs_error)
        ));
        if which == KernelKind::E && (m - 0.5).norm() == 0.0 {
            let closed = kernels::closed_form::e_half(p.t, p.t0);
            worst_half = worst_half.max((v.value - closed).norm() / closed.abs());
        }
    }
    if which == KernelKind::E && (m - 0.5).norm() == 0.0 {
        checks.push(Check {
            name: "E matches e^{(t0+t)/2}/2 at M = 1/2".into(),
            passed: worst_half <= 1e-12,
            value: worst_half,
            tolerance: 1e-12,
            detail: String::new(),
        });
    }
    out.csv("kernel.csv", &[], "r,t,t0,re,im,branch,est_abs_error", &rows)
}

fn initial_data(cfg: &ExperimentConfig, grid: PeriodicGrid, s: f64) -> (SpectralField, SpectralField) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let psi0 = cfg.solve.data.psi0.field(grid, s, &mut rng);
    let psi1 = cfg.solve.data.psi1.field(grid, s, &mut rng);
    (psi0, psi1)
}

fn direct_config(
    cfg: &ExperimentConfig,
    params: ModelParams,
    nonlinearity: Option<NonlinearSpec>,
) -> DirectSolveConfig {
    DirectSolveConfig {
        rtol: cfg.solve.rtol,
        atol: cfg.solve.atol,
        nonlinearity,
        output_times: cfg.solve.times(),
        ..DirectSolveConfig::new(params, cfg.solve.t_final)
    }
}

fn norm_plot(
    out: &mut Outputs,
    cfg: &ExperimentConfig,
    name: &str,
    title: &str,
    series: Vec<Series>,
) -> Result<(), ExperimentError> {
    if cfg.svg {
        out.write(name, &svg_line_plot(title, "t", "H^s norm", &series, true))?;
    }
    Ok(())
}

fn traj_series(label: &str, traj: &Trajectory) -> Series {
    Series {
        label: label.into(),
        points: traj.times.iter().copied().zip(traj.hs_norms.iter().copied()).collect(),
    }
}

fn run_solve_linear(
    cfg: &ExperimentConfig,
    out: &mut Outputs,
    checks: &mut Vec<Check>,
    report: &mut Vec<String>,
) -> Result<(), ExperimentError> {
    let params = cfg.model.params()?;
    let grid = cfg.periodic_grid()?;
    let (psi0, psi1) = initial_data(cfg, grid, params.s);
    let times = cfg.solve.times();
    let method = cfg.solve.method;
    let tol = cfg.solve.discrepancy_tol;
    let mut series = Vec::new();
    let transform = if method != Method::Direct {
        let problem = LinearProblem::new(params, psi0.clone(), psi1.clone()).with_quad(cfg.quad);
        let traj = linear_trajectory(&problem, &times)?;
        out.trajectory("trajectory_transform.csv", &traj, &[])?;
        series.push(traj_series("transform", &traj));
        Some(traj)
    } else {
        None
    };
    let direct = if method != Method::Transform {
        let sol = solve_desitter_direct(&psi0, &psi1, &direct_config(cfg, params, None))?;
        out.trajectory("trajectory_direct.csv", &sol.trajectory, &[])?;
        series.push(traj_series("direct", &sol.trajectory));
        Some(sol.trajectory)
    } else {
        None
    };
    if let (Some(a), Some(b)) = (&transform, &direct) {
        let mut rows = Vec::new();
        let mut worst: f64 = 0.0;
        for ((t, fa), fb) in a.times.iter().zip(&a.fields).zip(&b.fields) {
            let diff = fa.sub(fb)?.sobolev_norm(params.s);
            let scale = fb.sobolev_norm(params.s);
            let rel = if scale > 0.0 { diff / scale } else { diff };
            worst = worst.max(rel);
            rows.push(format!("{},{}", e12(*t), e12(rel)));
        }
        out.csv("discrepancy.csv", &[("max_rel_err", tol)], "t,rel_err", &rows)?;
        report.push(format!("max relative H^s discrepancy {worst:.3e}"));
        checks.push(Check {
            name: "transform and direct solutions agree".into(),
            passed: worst <= tol,
            value: worst,
            tolerance: tol,
            detail: format!("nb={} nr={} ns={}", cfg.quad.nb, cfg.quad.nr, cfg.quad.ns),
        });
    }
    for (label, traj) in [("transform", &transform), ("direct", &direct)] {
        if let Some(t) = traj {
            report.push(format!(
                "{label}: |psi(T)|_H^s = {:.6e}",
                t.hs_norms.last().copied().unwrap_or(f64::NAN)
            ));
        }
    }
    norm_plot(out, cfg, "trajectory.svg", "linear solution", series)
}

fn run_solve_direct(
    cfg: &ExperimentConfig,
    out: &mut Outputs,
    _checks: &mut Vec<Check>,
    report: &mut Vec<String>,
) -> Result<(), ExperimentError> {
    let params = cfg.params()?;
    let grid = cfg.periodic_grid()?;
    let (psi0, psi1) = initial_data(cfg, grid, params.s);
    let sol = solve_desitter_direct(&psi0, &psi1, &direct_config(cfg, params, cfg.nonlinearity))?;
    out.trajectory("trajectory.csv", &sol.trajectory, &[])?;
    match sol.outcome {
        Outcome::Completed => report.push(format!("completed to t = {}", cfg.solve.t_final)),
        Outcome::Blowup { t } => report.push(format!("blow-up: |psi|_inf crossed the threshold at t = {t:.10}")),
    }
    report.push(format!(
        "steps: {} accepted, {} rejected",
        sol.accepted_steps, sol.rejected_steps
    ));
    norm_plot(
        out,
        cfg,
        "trajectory.svg",
        "direct solution",
        vec![traj_series("direct", &sol.trajectory)],
    )
}

fn picard_rows(rep: &PicardReport) -> Vec<String> {
    rep.distances
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let ratio = if i == 0 { None } else { rep.ratios.get(i - 1).copied() };
            format!("{},{},{}", i + 1, e12(*d), opt(ratio))
        })
        .collect()
}

fn run_solve_semilinear(
    cfg: &ExperimentConfig,
    out: &mut Outputs,
    checks: &mut Vec<Check>,
    report: &mut Vec<String>,
) -> Result<(), ExperimentError> {
    let params = cfg.params()?;
    let grid = cfg.periodic_grid()?;
    let pc = cfg.picard.expect("validated");
    let f = cfg.nonlinearity.expect("validated");
    let (psi0, psi1) = initial_data(cfg, grid, params.s);
    // data scaled so that |psi0| + |psi1| = eps
    let size = psi0.sobolev_norm(params.s) + psi1.sobolev_norm(params.s);
    if !(size > 0.0) {
        return Err(config_err("solve.data", "semilinear runs need non-zero data"));
    }
    let k = Complex64::new(pc.eps / size, 0.0);
    let problem = LinearProblem::new(params, psi0.scale(k), psi1.scale(k)).with_quad(pc.quad);
    let free = linear_trajectory(&problem, &pc.time_grid())?;
    let tol = [("tol", pc.tol), ("residual", 2.0 * pc.tol), ("R", pc.radius())];
    match picard_solve(&free, &f, &pc, &params) {
        Ok((traj, rep)) => {
            out.trajectory("trajectory.csv", &traj, &tol)?;
            out.csv("picard.csv", &tol, "iteration,distance,ratio", &picard_rows(&rep))?;
            report.push(format!(
                "converged in {} iterations, contraction ratio {:.3e}, weighted norm {:.6e}",
                rep.iterations,
                rep.contraction_ratio(),
                rep.weighted_norm
            ));
            checks.push(Check {
                name: "Picard iteration converged".into(),
                passed: rep.converged,
                value: rep.iterations as f64,
                tolerance: pc.max_iter as f64,
                detail: String::new(),
            });
            checks.push(Check {
                name: "residual within 2 tol".into(),
                passed: rep.residual <= 2.0 * pc.tol,
                value: rep.residual,
                tolerance: 2.0 * pc.tol,
                detail: String::new(),
            });
            checks.push(Check {
                name: "solution stays in the ball".into(),
                passed: rep.within_ball,
                value: rep.weighted_norm,
                tolerance: rep.radius,
                detail: format!("tail e^(gamma T)|psi(T)| = {:.3e}", rep.tail_weighted),
            });
            norm_plot(
                out,
                cfg,
                "trajectory.svg",
                "Picard solution",
                vec![traj_series("picard", &traj), traj_series("free", &free)],
            )
        }
        Err(SemilinearError::NonConvergence {
            iterations,
            last_distance,
            ratio,
            report: rep,
        }) => {
            out.csv("picard.csv", &tol, "iteration,distance,ratio", &picard_rows(&rep))?;
            Err(ExperimentError::NonConvergence(format!(
                "Picard iteration did not converge after {iterations} iterations (last distance {last_distance:e}, ratio {ratio:.3})"
            )))
        }
        Err(e) => Err(e.into()),
    }
}

fn run_lifespan(
    cfg: &ExperimentConfig,
    out: &mut Outputs,
    checks: &mut Vec<Check>,
    report: &mut Vec<String>,
) -> Result<(), ExperimentError> {
    let params = cfg.params()?;
    let f = cfg.nonlinearity.expect("validated");
    let l = &cfg.lifespan;
    let res = lifespan_sweep(&f, &params, &l.eps, l.solver, &l.options)?;
    let tol = [("slope_rel", l.slope_tol), ("line", l.options.line_tolerance)];
    let rows: Vec<String> = res
        .eps_values
        .iter()
        .zip(&res.t_blowup)
        .map(|(e, t)| {
            format!(
                "{},{},{}",
                e12(*e),
                t.map(e12).unwrap_or_else(|| "nan".into()),
                t.is_none()
            )
        })
        .collect();
    out.csv("lifespan.csv", &tol, "eps,T_blowup,censored", &rows)?;
    let rel = (res.slope_fit - res.theory_slope).abs() / res.theory_slope.abs();
    report.push(format!(
        "slope {:.6} (theory {:.6}), intercept {:.6}, lower-bound constant {:.6}",
        res.slope_fit, res.theory_slope, res.intercept_fit, res.c_fit
    ));
    checks.push(Check {
        name: "lifespan slope matches theory".into(),
        passed: rel <= l.slope_tol,
        value: rel,
        tolerance: l.slope_tol,
        detail: format!("slope {:.4}", res.slope_fit),
    });
    // worst relative shortfall of a measured lifespan below the line
    let shortfall = res
        .eps_values
        .iter()
        .zip(&res.t_blowup)
        .filter_map(|(e, t)| {
            let line = res.theory_slope * (1.0 / e).ln() - res.c_fit;
            t.map(|t| (line - t) / line.abs())
        })
        .fold(0.0, f64::max);
    checks.push(Check {
        name: "lifespans on or above the lower-bound line".into(),
        passed: res.lower_bound_holds,
        value: shortfall,
        tolerance: l.options.line_tolerance,
        detail: format!("line constant {:.4}", res.c_fit),
    });
    checks.push(Check {
        name: "lifespan grows as eps shrinks".into(),
        passed: res.monotone,
        value: res.censored().iter().filter(|c| **c).count() as f64,
        tolerance: 0.0,
        detail: "value counts censored runs".into(),
    });
    if cfg.svg {
        let measured: Vec<(f64, f64)> = res
            .eps_values
            .iter()
            .zip(&res.t_blowup)
            .filter_map(|(e, t)| t.map(|t| ((1.0 / e).ln(), t)))
            .collect();
        let xs: Vec<f64> = res.eps_values.iter().map(|e| (1.0 / e).ln()).collect();
        let line: Vec<(f64, f64)> = xs.iter().map(|&x| (x, res.slope_fit * x + res.intercept_fit)).collect();
        let bound: Vec<(f64, f64)> = xs.iter().map(|&x| (x, res.theory_slope * x - res.c_fit)).collect();
        let series = vec![
            Series {
                label: "measured".into(),
                points: measured,
            },
            Series {
                label: "fit".into(),
                points: line,
            },
            Series {
                label: "lower bound".into(),
                points: bound,
            },
        ];
        out.write(
            "lifespan.svg",
            &svg_line_plot("lifespan", "ln(1/eps)", "T", &series, false),
        )?;
    }
    Ok(())
}

fn run_verify_decay(
    cfg: &ExperimentConfig,
    out: &mut Outputs,
    checks: &mut Vec<Check>,
    report: &mut Vec<String>,
) -> Result<(), ExperimentError> {
    let params = cfg.model.params()?;
    let re_m = params.eff_mass.re;
    let case = cfg.decay.case.unwrap_or(if re_m < 0.5 {
        DecayCase::HomogeneousI
    } else {
        DecayCase::HomogeneousIi
    });
    let setup = cfg.decay.setup.unwrap_or_else(|| DecaySetup::for_mass(&params));
    let tol = cfg.decay.tol.unwrap_or(if re_m <= 0.5 { 0.10 } else { 0.15 });
    let (times, norms) = verify::decay_norms(&params, case, &setup)?;
    let fit = verify::fit_decay_series(&times, &norms, setup.window, verify::decay_theory_rate(&params))?;
    let rows: Vec<String> = times
        .iter()
        .zip(&norms)
        .map(|(t, n)| format!("{},{}", e12(*t), e12(*n)))
        .collect();
    out.csv(
        "decay.csv",
        &[("rel_dev", tol), ("r_squared", 0.99)],
        "t,hs_norm",
        &rows,
    )?;
    report.push(format!(
        "gamma_fit {:.6} on [{}, {}], theory {:.6}, rel_dev {:.4}, r^2 {:.6}",
        fit.gamma_fit, fit.window.0, fit.window.1, fit.theory_rate, fit.rel_dev, fit.r_squared
    ));
    match case {
        DecayCase::Derivative => {
            // the estimate bounds psi_t from above, so only slower decay is a failure
            let shortfall = ((fit.theory_rate - fit.gamma_fit) / fit.theory_rate).max(0.0);
            checks.push(Check {
                name: "psi_t decays at least at the theory rate".into(),
                passed: shortfall <= tol,
                value: shortfall,
                tolerance: tol,
                detail: format!("rel_dev {:.4}", fit.rel_dev),
            });
        }
        _ => {
            checks.push(Check {
                name: "decay rate matches theory".into(),
                passed: fit.rel_dev <= tol,
                value: fit.rel_dev,
                tolerance: tol,
                detail: format!("gamma_fit {:.4}", fit.gamma_fit),
            });
            checks.push(Check {
                name: "log-linear fit quality".into(),
                passed: fit.r_squared >= 0.99,
                value: fit.r_squared,
                tolerance: 0.99,
                detail: String::new(),
            });
        }
    }
    if cfg.svg {
        let series = vec![Series {
            label: "norm".into(),
            points: times
                .iter()
                .copied()
                .zip(norms.iter().copied())
                .filter(|p| p.1 > 0.0)
                .collect(),
        }];
        out.write("decay.svg", &svg_line_plot("decay", "t", "H^s norm", &series, true))?;
    }
    Ok(())
}

/// Check lists used when a config gives none.
pub fn default_bound_specs(run: Run) -> Vec<BoundCheckSpec> {
    let lemmas: &[LemmaId] = match run {
        Run::VerifyAppendix => &[LemmaId::A2L1_9, LemmaId::A3LA2b, LemmaId::A4L1_9b, LemmaId::A5LA5],
        _ => &[LemmaId::L2_3, LemmaId::LK0, LemmaId::PropZones, LemmaId::P2_2],
    };
    let mut specs = Vec::new();
    if run == Run::VerifyAppendix {
        specs.push(BoundCheckSpec::default_for(LemmaId::A1Limits, 0.0));
    }
    for &l in lemmas {
        for a in [-0.5, 0.0, 1.0] {
            specs.push(BoundCheckSpec::default_for(l, a));
        }
    }
    specs
}

fn run_verify_bounds(
    cfg: &ExperimentConfig,
    out: &mut Outputs,
    checks: &mut Vec<Check>,
    report: &mut Vec<String>,
) -> Result<(), ExperimentError> {
    let specs = cfg.bounds.clone().unwrap_or_else(|| default_bound_specs(cfg.run));
    let mut bound_rows = Vec::new();
    let mut limit_rows = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        let rep = check_appendix_lemma_any(spec).map_err(|e| match ExperimentError::from(e) {
            ExperimentError::Config { message, .. } => config_err(&format!("bounds[{i}]"), message),
            other => other,
        })?;
        match rep {
            AppendixReport::Bound(b) => {
                bound_summary(&b, checks, report);
                bound_rows.extend(bound_csv_rows(&b));
            }
            AppendixReport::Limits { a, rows } => {
                for r in &rows {
                    let kind = serde_json::to_value(r.kind)
                        .ok()
                        .and_then(|v| v.as_str().map(String::from))
                        .unwrap_or_default();
                    report.push(format!(
                        "{} a={a} M={}: {kind} limit {:.6e}, deviations {:?}",
                        spec.lemma_id,
                        r.m,
                        r.limit.re,
                        r.deviations.iter().map(|d| format!("{d:.3e}")).collect::<Vec<_>>()
                    ));
                    checks.push(Check {
                        name: format!("{} a={a} M={} ({kind})", spec.lemma_id, r.m),
                        passed: r.passed,
                        value: r.final_deviation,
                        tolerance: verify::LIMIT_TOL,
                        detail: if r.decreasing {
                            "deviation strictly decreasing".into()
                        } else {
                            "deviation not decreasing".into()
                        },
                    });
                    for ((z, v), dev) in r.z.iter().zip(&r.values).zip(&r.deviations) {
                        limit_rows.push(format!(
                            "{},{},{},{kind},{},{},{},{},{},{}",
                            e12(a),
                            e12(r.m.re),
                            e12(r.m.im),
                            e12(*z),
                            e12(v.re),
                            e12(v.im),
                            e12(r.limit.re),
                            e12(r.limit.im),
                            e12(*dev)
                        ));
                    }
                }
            }
        }
    }
    if !bound_rows.is_empty() {
        out.csv(
            "bounds.csv",
            &[("stability", verify::STABILITY_TOL)],
            BOUND_COLUMNS,
            &bound_rows,
        )?;
    }
    if !limit_rows.is_empty() {
        out.csv(
            "limits.csv",
            &[("final_rel_dev", verify::LIMIT_TOL)],
            "a,M_re,M_im,kind,z,value_re,value_im,limit_re,limit_im,rel_dev",
            &limit_rows,
        )?;
    }
    Ok(())
}

fn check_appendix_lemma_any(spec: &BoundCheckSpec) -> Result<AppendixReport, VerifyError> {
    match spec.lemma_id {
        LemmaId::A1Limits | LemmaId::A2L1_9 | LemmaId::A3LA2b | LemmaId::A4L1_9b | LemmaId::A5LA5 => {
            check_appendix_lemma(spec)
        }
        _ => Ok(AppendixReport::Bound(verify::check_kernel_integral_bound(spec)?)),
    }
}

const BOUND_COLUMNS: &str = "lemma,a,M_re,M_im,t,b,z,integral,bound,ratio,ratio_refined,rel_change";

fn bound_csv_rows(b: &BoundReport) -> Vec<String> {
    b.rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                b.lemma_id,
                e12(b.a),
                e12(r.m.re),
                e12(r.m.im),
                opt(r.t),
                opt(r.b),
                opt(r.z),
                e12(r.integral),
                e12(r.bound),
                e12(r.ratio),
                e12(r.ratio_refined),
                e12(r.rel_change)
            )
        })
        .collect()
}

fn bound_summary(b: &BoundReport, checks: &mut Vec<Check>, report: &mut Vec<String>) {
    let worst = &b.rows[b.argmax];
    report.push(format!(
        "{} a={}: max ratio {:.4e} at M={}{}; growth {:.3e}{}",
        b.lemma_id,
        b.a,
        b.max_ratio,
        worst.m,
        [("t", worst.t), ("b", worst.b), ("z", worst.z)]
            .iter()
            .filter_map(|(k, v)| v.map(|v| format!(" {k}={v}")))
            .collect::<String>(),
        b.growth,
        if b.diverging {
            " (ratio grows across the grid)"
        } else {
            ""
        }
    ));
    checks.push(Check {
        name: format!("{} a={} ratios finite and refinement-stable", b.lemma_id, b.a),
        passed: b.finite && b.stable,
        value: b.max_rel_change,
        tolerance: verify::STABILITY_TOL,
        detail: format!("max ratio {:.4e}", b.max_ratio),
    });
}

/// A labelled polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Self-contained SVG line plot; non-finite points (and non-positive ones
/// on a log axis) are skipped.
pub fn svg_line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series], log_y: bool) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (70.0, 20.0, 30.0, 50.0);
    let fy = |y: f64| if log_y { y.log10() } else { y };
    let pts: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            s.points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite() && (!log_y || *y > 0.0))
                .map(|&(x, y)| (x, fy(y)))
                .collect()
        })
        .collect();
    let all = pts.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = all.fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |a, &(x, y)| (a.0.min(x), a.1.max(x), a.2.min(y), a.3.max(y)),
    );
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let sy = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        w / 2.0,
        xml(title)
    );
    let _ = writeln!(
        s,
        r#"<path d="M{left:.1},{top:.1} V{:.1} H{:.1}" fill="none" stroke="black"/>"#,
        h - bottom,
        w - right
    );
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fyv = y0 + (y1 - y0) * i as f64 / 4.0;
        let ylab = if log_y {
            format!("1e{fyv:.1}")
        } else {
            format!("{fyv:.3}")
        };
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{fx:.3}</text>"#,
            sx(fx),
            h - bottom + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{ylab}</text>"#,
            left - 4.0,
            sy(fyv) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (left + w - right) / 2.0,
        h - 12.0,
        xml(xlabel)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        xml(ylabel)
    );
    for (k, (ser, p)) in series.iter().zip(&pts).enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        if !path.is_empty() {
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#,
                path.join(" ")
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" fill="{colour}">{}</text>"#,
            w - right - 120.0,
            top + 14.0 * (k as f64 + 1.0),
            xml(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
