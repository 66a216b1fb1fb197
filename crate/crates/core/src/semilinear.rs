//! Nonlinearities, Picard iteration for the semilinear integral equation and
//! lifespan sweeps in the blow-up regime.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evolution::{solve_desitter_direct, DirectSolveConfig, EvolutionError, Outcome, DEFAULT_BLOWUP_THRESHOLD};
use crate::field::{random_bandlimited, FieldError, PeriodicGrid, SpectralField, Trajectory};
use crate::kernels::ModelParams;
use crate::quadrature::gauss_legendre;
use crate::specfun::C64;
use crate::transform::{linear_trajectory, source_weights, LinearProblem, ModeLevels, QuadratureSpec, TransformError};

#[derive(Debug, Error)]
pub enum SemilinearError {
    #[error("invalid nonlinearity: {0}")]
    Spec(String),
    #[error("Sobolev index s = {s} must exceed d/2 = {half_d}")]
    SobolevIndex { s: f64, half_d: f64 },
    #[error("invalid Picard configuration: {0}")]
    Config(String),
    #[error("free trajectory does not match the Picard time grid: {0}")]
    TimeGrid(String),
    #[error("Picard iteration did not converge after {iterations} iterations (last distance {last_distance:e}, ratio {ratio:.3})")]
    NonConvergence {
        iterations: usize,
        last_distance: f64,
        ratio: f64,
        report: Box<PicardReport>,
    },
    #[error("lifespan sweep needs Re M > n/2, got Re M = {re_m}, n = {n}")]
    NotBlowupRegime { re_m: f64, n: u32 },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
}

/// Catalog of admissible F(psi), each with F(0) = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NonlinearSpec {
    /// sign * |psi|^alpha * psi
    PowerSigned { sign: f64, alpha: f64 },
    /// sign * |psi|^(alpha + 1)
    PowerAbs { sign: f64, alpha: f64 },
    /// -lambda * psi^3
    Cubic { lambda: f64 },
}

impl NonlinearSpec {
    pub fn alpha(&self) -> f64 {
        match *self {
            NonlinearSpec::PowerSigned { alpha, .. } | NonlinearSpec::PowerAbs { alpha, .. } => alpha,
            NonlinearSpec::Cubic { .. } => 2.0,
        }
    }

    pub fn validate(&self) -> Result<(), SemilinearError> {
        match *self {
            NonlinearSpec::PowerSigned { sign, alpha } | NonlinearSpec::PowerAbs { sign, alpha } => {
                if sign != 1.0 && sign != -1.0 {
                    return Err(SemilinearError::Spec(format!("sign must be +1 or -1, got {sign}")));
                }
                if !(alpha > 0.0 && alpha.is_finite()) {
                    return Err(SemilinearError::Spec(format!("alpha must be positive, got {alpha}")));
                }
            }
            NonlinearSpec::Cubic { lambda } => {
                if !lambda.is_finite() {
                    return Err(SemilinearError::Spec("lambda must be finite".into()));
                }
            }
        }
        Ok(())
    }

    /// Whether F is a polynomial in (psi, conj psi), in which case the
    /// pseudo-spectral product is dealiased.
    pub fn is_polynomial(&self) -> bool {
        let even = |x: f64| x > 0.0 && x.fract() == 0.0 && (x as i64) % 2 == 0;
        match *self {
            NonlinearSpec::PowerSigned { alpha, .. } => even(alpha),
            NonlinearSpec::PowerAbs { alpha, .. } => even(alpha + 1.0),
            NonlinearSpec::Cubic { .. } => true,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(*self, NonlinearSpec::Cubic { lambda } if lambda == 0.0)
    }

    pub fn pointwise(&self, psi: C64) -> C64 {
        match *self {
            NonlinearSpec::PowerSigned { sign, alpha } => sign * psi.norm().powf(alpha) * psi,
            NonlinearSpec::PowerAbs { sign, alpha } => Complex64::new(sign * psi.norm().powf(alpha + 1.0), 0.0),
            NonlinearSpec::Cubic { lambda } => -lambda * psi * psi * psi,
        }
    }
}

pub fn eval_nonlinearity(f: &NonlinearSpec, psi: &SpectralField) -> SpectralField {
    if f.is_zero() {
        return SpectralField::zeros(*psi.grid());
    }
    if f.is_polynomial() {
        psi.dealias().map_values(|v| f.pointwise(v)).dealias()
    } else {
        psi.map_values(|v| f.pointwise(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LipschitzEstimate {
    pub c_emp: f64,
    pub alpha_emp: f64,
}

/// Empirical constant and exponent of
/// |F(u) - F(v)| <= C |u - v| (|u|^alpha + |v|^alpha) in H^s.
pub fn lipschitz_probe(
    f: &NonlinearSpec,
    s: f64,
    n_samples: usize,
    radius: f64,
    grid: PeriodicGrid,
    seed: u64,
) -> Result<LipschitzEstimate, SemilinearError> {
    f.validate()?;
    let half_d = grid.d as f64 / 2.0;
    if s <= half_d {
        return Err(SemilinearError::SobolevIndex { s, half_d });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha = f.alpha();
    let kmax = grid.npts as f64 / 6.0;
    let mut c_emp: f64 = 0.0;
    let mut slopes = Vec::with_capacity(n_samples);
    let diff_ratio = |u: &SpectralField, v: &SpectralField| -> Result<f64, SemilinearError> {
        let num = eval_nonlinearity(f, u).sub(&eval_nonlinearity(f, v))?.sobolev_norm(s);
        Ok(num / u.sub(v)?.sobolev_norm(s))
    };
    for _ in 0..n_samples {
        let u = random_bandlimited(grid, kmax, &mut rng);
        let v = random_bandlimited(grid, kmax, &mut rng);
        let ru = radius * rand::Rng::gen_range(&mut rng, 0.05..1.0);
        let rv = radius * rand::Rng::gen_range(&mut rng, 0.05..1.0);
        let u = u.scale(Complex64::new(ru / u.sobolev_norm(s), 0.0));
        let v = v.scale(Complex64::new(rv / v.sobolev_norm(s), 0.0));
        let ratio = diff_ratio(&u, &v)? / (u.sobolev_norm(s).powf(alpha) + v.sobolev_norm(s).powf(alpha));
        c_emp = c_emp.max(ratio);
        let lo = 0.125;
        let q_lo = diff_ratio(&u.scale(Complex64::new(lo, 0.0)), &v.scale(Complex64::new(lo, 0.0)))?;
        let q_hi = diff_ratio(&u, &v)?;
        slopes.push((q_hi / q_lo).ln() / (1.0 / lo).ln());
    }
    slopes.sort_by(f64::total_cmp);
    let alpha_emp = if slopes.is_empty() {
        f64::NAN
    } else {
        slopes[slopes.len() / 2]
    };
    Ok(LipschitzEstimate { c_emp, alpha_emp })
}

/// Gauss–Legendre nodes per time panel of the Picard grid.
pub const PANEL_ORDER: usize = 8;
/// Width ratio of consecutive panels.
pub const PANEL_GROWTH: f64 = 1.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardConfig {
    /// Size of the data in H^s.
    pub eps: f64,
    /// Radius of the ball the iterates should stay in; 2 eps when absent.
    #[serde(rename = "R", default)]
    pub radius: Option<f64>,
    /// Weight exponent of the sup norm `sup_t e^{gamma t} |psi(t)|_{H^s}`.
    pub gamma: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default)]
    pub quad: QuadratureSpec,
    #[serde(default = "default_samples")]
    pub n_time_samples: usize,
}

fn default_tol() -> f64 {
    1e-10
}
fn default_max_iter() -> usize {
    50
}
fn default_samples() -> usize {
    64
}

impl PicardConfig {
    pub fn new(eps: f64, gamma: f64, horizon: f64) -> Self {
        Self {
            eps,
            radius: None,
            gamma,
            tol: default_tol(),
            max_iter: default_max_iter(),
            horizon,
            quad: QuadratureSpec::default(),
            n_time_samples: default_samples(),
        }
    }

    pub fn radius(&self) -> f64 {
        self.radius.unwrap_or(2.0 * self.eps)
    }

    pub fn validate(&self) -> Result<(), SemilinearError> {
        let bad = |m: String| Err(SemilinearError::Config(m));
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.radius() > self.eps) {
            return bad(format!("R = {} must exceed eps = {}", self.radius(), self.eps));
        }
        if !(self.tol > 0.0) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("T must be positive, got {}", self.horizon));
        }
        if self.max_iter == 0 || self.n_time_samples == 0 {
            return bad("max_iter and n_time_samples must be positive".into());
        }
        if !self.gamma.is_finite() {
            return bad("gamma must be finite".into());
        }
        self.quad.validate().map_err(|e| SemilinearError::Config(e.to_string()))
    }

    pub fn panels(&self) -> usize {
        self.n_time_samples.div_ceil(PANEL_ORDER)
    }

    /// Sample times: 0 followed by Gauss nodes on geometrically growing panels.
    pub fn time_grid(&self) -> Vec<f64> {
        let p = self.panels();
        let edges = panel_edges(self.horizon, p);
        let rule = gauss_legendre(PANEL_ORDER);
        let mut times = vec![0.0];
        for w in edges.windows(2) {
            times.extend(rule.on(w[0], w[1]).map(|(x, _)| x));
        }
        times
    }
}

fn panel_edges(horizon: f64, panels: usize) -> Vec<f64> {
    let denom = PANEL_GROWTH.powi(panels as i32) - 1.0;
    let mut e: Vec<f64> = (0..=panels)
        .map(|m| horizon * (PANEL_GROWTH.powi(m as i32) - 1.0) / denom)
        .collect();
    e[panels] = horizon;
    e
}

fn lagrange_basis(nodes: &[f64], x: f64) -> Vec<f64> {
    (0..nodes.len())
        .map(|i| {
            nodes
                .iter()
                .enumerate()
                .filter(|&(m, _)| m != i)
                .map(|(_, &xm)| (x - xm) / (nodes[i] - xm))
                .product()
        })
        .collect()
}

/// The source operator on the Picard grid, precomputed once: row j maps
/// spectral samples at the grid nodes to the value at node j.
pub struct GridPropagator {
    levels: ModeLevels,
    times: Vec<f64>,
    rows: Vec<Vec<(usize, Vec<C64>)>>,
}

impl GridPropagator {
    pub fn new(cfg: &PicardConfig, params: &ModelParams, grid: &PeriodicGrid) -> Result<Self, SemilinearError> {
        let levels = ModeLevels::new(grid);
        let times = cfg.time_grid();
        let edges = panel_edges(cfg.horizon, cfg.panels());
        let gl = gauss_legendre(PANEL_ORDER);
        let half_n = 0.5 * params.nf();
        let m = params.eff_mass;
        let weights: Vec<f64> = edges
            .windows(2)
            .flat_map(|w| gl.on(w[0], w[1]).map(|(_, wt)| wt).collect::<Vec<_>>())
            .collect();
        let rows = (0..times.len())
            .into_par_iter()
            .map(|j| -> Result<Vec<(usize, Vec<C64>)>, SemilinearError> {
                if j == 0 {
                    return Ok(Vec::new());
                }
                let t = times[j];
                let scale = 2.0 * (-half_n * t).exp();
                let panel = (j - 1) / PANEL_ORDER;
                let mut row = Vec::new();
                for i in 1..1 + panel * PANEL_ORDER {
                    let b = times[i];
                    let (w, _) = source_weights(&levels, t, b, m, cfg.quad.nr, false)?;
                    let g = scale * weights[i - 1] * (half_n * b).exp();
                    row.push((i, w.into_iter().map(|x| g * x).collect::<Vec<_>>()));
                }
                let first = 1 + panel * PANEL_ORDER;
                let local = &times[first..first + PANEL_ORDER];
                let mut partial = vec![vec![Complex64::new(0.0, 0.0); levels.len()]; PANEL_ORDER];
                for (b, wb) in gauss_legendre(cfg.quad.nb).on(edges[panel], t) {
                    let (w, _) = source_weights(&levels, t, b, m, cfg.quad.nr, false)?;
                    let g = scale * wb * (half_n * b).exp();
                    for (i, li) in lagrange_basis(local, b).into_iter().enumerate() {
                        partial[i].iter_mut().zip(&w).for_each(|(p, x)| *p += g * li * x);
                    }
                }
                row.extend(partial.into_iter().enumerate().map(|(i, w)| (first + i, w)));
                Ok(row)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { levels, times, rows })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Source term at every node, given the spectral source at every node.
    pub fn apply(&self, source: &[SpectralField]) -> Vec<SpectralField> {
        let grid = *source[0].grid();
        self.rows
            .par_iter()
            .map(|row| {
                let mut acc = vec![Complex64::new(0.0, 0.0); grid.len()];
                for (i, w) in row {
                    let f = source[*i].coeffs();
                    for (j, a) in acc.iter_mut().enumerate() {
                        *a += w[self.levels.level_of[j]] * f[j];
                    }
                }
                SpectralField::from_coeffs(grid, acc)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PicardReport {
    pub iterations: usize,
    /// X-norm distance between successive iterates.
    pub distances: Vec<f64>,
    /// Successive distance ratios, the empirical contraction constant.
    pub ratios: Vec<f64>,
    pub converged: bool,
    /// X-norm of psi - psi_free - G[F(psi)] for the returned iterate.
    pub residual: f64,
    /// X-norm of the returned iterate.
    pub weighted_norm: f64,
    pub radius: f64,
    pub within_ball: bool,
    pub horizon: f64,
    /// e^{gamma T} |psi(T)|: the part of the X-norm sup beyond T is not sampled.
    pub tail_weighted: f64,
}

impl PicardReport {
    pub fn contraction_ratio(&self) -> f64 {
        self.ratios.last().copied().unwrap_or(0.0)
    }
}

fn x_distance(a: &[SpectralField], b: &[SpectralField], times: &[f64], gamma: f64, s: f64) -> Result<f64, FieldError> {
    let mut d: f64 = 0.0;
    for ((x, y), t) in a.iter().zip(b).zip(times) {
        d = d.max((gamma * t).exp() * x.sub(y)?.sobolev_norm(s));
    }
    Ok(d)
}

/// Fixed-point iteration psi <- psi_free + G[F(psi)] on the panel grid of `cfg`,
/// starting from psi_free.
pub fn picard_solve(
    psi0_free: &Trajectory,
    f: &NonlinearSpec,
    cfg: &PicardConfig,
    params: &ModelParams,
) -> Result<(Trajectory, PicardReport), SemilinearError> {
    cfg.validate()?;
    f.validate()?;
    let times = cfg.time_grid();
    if psi0_free.len() != times.len()
        || psi0_free
            .times
            .iter()
            .zip(&times)
            .any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + b))
    {
        return Err(SemilinearError::TimeGrid(format!(
            "expected {} samples from PicardConfig::time_grid, got {}",
            times.len(),
            psi0_free.len()
        )));
    }
    let grid = *psi0_free.fields[0].grid();
    let prop = GridPropagator::new(cfg, params, &grid)?;
    let free = &psi0_free.fields;
    let s = params.s;
    let step = |psi: &[SpectralField]| -> Result<Vec<SpectralField>, SemilinearError> {
        let src: Vec<SpectralField> = psi.par_iter().map(|p| eval_nonlinearity(f, p)).collect();
        Ok(prop
            .apply(&src)
            .iter()
            .zip(free)
            .map(|(g, u)| u.add(g))
            .collect::<Result<Vec<_>, _>>()?)
    };
    let mut psi = free.clone();
    let mut distances = Vec::new();
    let mut ratios = Vec::new();
    let mut converged = false;
    let blowup = 1e6 * cfg.radius().max(1.0);
    for _ in 0..cfg.max_iter {
        let next = step(&psi)?;
        let d = x_distance(&next, &psi, &times, cfg.gamma, s)?;
        if let Some(&prev) = distances.last() {
            ratios.push(if prev > 0.0 { d / prev } else { 0.0 });
        }
        distances.push(d);
        psi = next;
        if d < cfg.tol {
            converged = true;
            break;
        }
        if !d.is_finite() || d > blowup {
            break;
        }
    }
    let residual_step = step(&psi)?;
    let residual = x_distance(&residual_step, &psi, &times, cfg.gamma, s)?;
    let mut traj = Trajectory::new(*params);
    for (t, p) in times.iter().zip(psi) {
        traj.push(*t, p)?;
    }
    let weighted_norm = traj.weighted_sup_norm(cfg.gamma)?;
    let last = traj.len() - 1;
    let report = PicardReport {
        iterations: distances.len(),
        converged,
        residual,
        weighted_norm,
        radius: cfg.radius(),
        within_ball: weighted_norm <= cfg.radius(),
        horizon: cfg.horizon,
        tail_weighted: (cfg.gamma * traj.times[last]).exp() * traj.hs_norms[last],
        ratios,
        distances,
    };
    if !converged {
        return Err(SemilinearError::NonConvergence {
            iterations: report.iterations,
            last_distance: report.distances.last().copied().unwrap_or(f64::NAN),
            ratio: report.contraction_ratio(),
            report: Box::new(report),
        });
    }
    Ok((traj, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifespanSolver {
    Direct,
    Picard,
}

/// Discretisation of a lifespan sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifespanOptions {
    #[serde(default = "default_ls_npts")]
    pub npts: usize,
    /// Runs without blow-up before this time are censored.
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default = "default_threshold")]
    pub blowup_threshold: f64,
    #[serde(default = "default_ls_rtol")]
    pub rtol: f64,
    /// Relative distance below the fitted lower-bound line still counted as on it.
    #[serde(default = "default_line_tol")]
    pub line_tolerance: f64,
    /// Bisection steps on the Picard horizon.
    #[serde(default = "default_bisection")]
    pub bisection_steps: usize,
    #[serde(default = "default_picard_quad")]
    pub picard_quad: QuadratureSpec,
    #[serde(default)]
    pub profile: LifespanProfile,
}

/// Shape of the data, scaled by eps; psi_1 = 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifespanProfile {
    /// (1 + cos x) / 2
    #[default]
    Bump,
    /// 1, which reduces the equation to an ODE
    Constant,
}

fn default_ls_npts() -> usize {
    32
}
fn default_t_max() -> f64 {
    40.0
}
fn default_threshold() -> f64 {
    DEFAULT_BLOWUP_THRESHOLD
}
fn default_ls_rtol() -> f64 {
    1e-10
}
fn default_line_tol() -> f64 {
    0.05
}
fn default_bisection() -> usize {
    8
}
fn default_picard_quad() -> QuadratureSpec {
    QuadratureSpec::uniform(16)
}

impl Default for LifespanOptions {
    fn default() -> Self {
        Self {
            npts: default_ls_npts(),
            t_max: default_t_max(),
            blowup_threshold: default_threshold(),
            rtol: default_ls_rtol(),
            line_tolerance: default_line_tol(),
            bisection_steps: default_bisection(),
            picard_quad: default_picard_quad(),
            profile: LifespanProfile::Bump,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LifespanResult {
    pub eps_values: Vec<f64>,
    /// Measured lifespan, `None` when censored at `t_max`.
    #[serde(rename = "T_blowup")]
    pub t_blowup: Vec<Option<f64>>,
    /// Least-squares fit `T = slope_fit * ln(1/eps) + intercept_fit`.
    pub slope_fit: f64,
    pub intercept_fit: f64,
    pub theory_slope: f64,
    /// Constant of the lower-bound line `theory_slope * ln(1/eps) - c_fit`,
    /// least squares with the slope held at theory.
    pub c_fit: f64,
    /// Whether every finite lifespan sits on or above that line within the tolerance.
    pub lower_bound_holds: bool,
    /// Lifespans strictly decrease as eps grows.
    pub monotone: bool,
    pub solver: LifespanSolver,
}

impl LifespanResult {
    pub fn censored(&self) -> Vec<bool> {
        self.t_blowup.iter().map(Option::is_none).collect()
    }
}

pub fn lifespan_profile(grid: PeriodicGrid, profile: LifespanProfile, eps: f64) -> SpectralField {
    match profile {
        LifespanProfile::Bump => SpectralField::from_fn(grid, |x, _| Complex64::new(eps * 0.5 * (1.0 + x.cos()), 0.0)),
        LifespanProfile::Constant => SpectralField::constant(grid, Complex64::new(eps, 0.0)),
    }
}

fn direct_lifespan(
    f: &NonlinearSpec,
    params: &ModelParams,
    eps: f64,
    opts: &LifespanOptions,
) -> Result<Option<f64>, SemilinearError> {
    let grid = PeriodicGrid::new(1, opts.npts)?;
    let cfg = DirectSolveConfig {
        rtol: opts.rtol,
        atol: opts.rtol * 1e-3 * eps,
        blowup_threshold: opts.blowup_threshold,
        nonlinearity: Some(*f),
        output_times: vec![0.0, opts.t_max],
        ..DirectSolveConfig::new(*params, opts.t_max)
    };
    let sol = solve_desitter_direct(
        &lifespan_profile(grid, opts.profile, eps),
        &SpectralField::zeros(grid),
        &cfg,
    )?;
    Ok(match sol.outcome {
        Outcome::Blowup { t } => Some(t),
        Outcome::Completed => None,
    })
}

// Largest horizon on which the Picard iteration still converges.
fn picard_lifespan(
    f: &NonlinearSpec,
    params: &ModelParams,
    eps: f64,
    opts: &LifespanOptions,
) -> Result<Option<f64>, SemilinearError> {
    let grid = PeriodicGrid::new(1, opts.npts)?;
    let data = lifespan_profile(grid, opts.profile, eps);
    let converges = |horizon: f64| -> Result<bool, SemilinearError> {
        let cfg = PicardConfig {
            radius: Some(f64::MAX),
            tol: 1e-8 * eps,
            max_iter: 60,
            quad: opts.picard_quad,
            n_time_samples: 32,
            ..PicardConfig::new(eps, 0.0, horizon)
        };
        let problem = LinearProblem::new(*params, data.clone(), SpectralField::zeros(grid)).with_quad(opts.picard_quad);
        let free = linear_trajectory(&problem, &cfg.time_grid())?;
        match picard_solve(&free, f, &cfg, params) {
            Ok(_) => Ok(true),
            Err(SemilinearError::NonConvergence { .. }) => Ok(false),
            Err(e) => Err(e),
        }
    };
    if converges(opts.t_max)? {
        return Ok(None);
    }
    let (mut lo, mut hi) = (0.0, opts.t_max);
    for _ in 0..opts.bisection_steps {
        let mid = 0.5 * (lo + hi);
        if converges(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}

/// Least-squares line through (x, y); `None` with fewer than two points.
pub fn least_squares(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Lifespan of the data `eps * profile` for each eps, and fits against ln(1/eps).
pub fn lifespan_sweep(
    f: &NonlinearSpec,
    params: &ModelParams,
    eps_grid: &[f64],
    solver: LifespanSolver,
    opts: &LifespanOptions,
) -> Result<LifespanResult, SemilinearError> {
    f.validate()?;
    let half_n = 0.5 * params.nf();
    if !(params.eff_mass.re > half_n) {
        return Err(SemilinearError::NotBlowupRegime {
            re_m: params.eff_mass.re,
            n: params.n,
        });
    }
    if eps_grid.iter().any(|&e| !(e > 0.0)) {
        return Err(SemilinearError::Config("eps values must be positive".into()));
    }
    let t_blowup = eps_grid
        .par_iter()
        .map(|&eps| match solver {
            LifespanSolver::Direct => direct_lifespan(f, params, eps, opts),
            LifespanSolver::Picard => picard_lifespan(f, params, eps, opts),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let theory_slope = 1.0 / (params.eff_mass.re - half_n);
    let (x, y): (Vec<f64>, Vec<f64>) = eps_grid
        .iter()
        .zip(&t_blowup)
        .filter_map(|(e, t)| t.map(|t| ((1.0 / e).ln(), t)))
        .unzip();
    let (slope_fit, intercept_fit) = least_squares(&x, &y).unwrap_or((f64::NAN, f64::NAN));
    let c_fit = if x.is_empty() {
        f64::NAN
    } else {
        x.iter().zip(&y).map(|(l, t)| theory_slope * l - t).sum::<f64>() / x.len() as f64
    };
    let lower_bound_holds = !x.is_empty()
        && x.iter().zip(&y).all(|(l, t)| {
            let line = theory_slope * l - c_fit;
            *t >= line - opts.line_tolerance * line.abs()
        });
    let mut order: Vec<usize> = (0..eps_grid.len()).filter(|&i| t_blowup[i].is_some()).collect();
    order.sort_by(|&a, &b| eps_grid[a].total_cmp(&eps_grid[b]));
    let monotone = order
        .windows(2)
        .all(|w| t_blowup[w[0]].unwrap() > t_blowup[w[1]].unwrap());
    Ok(LifespanResult {
        eps_values: eps_grid.to_vec(),
        t_blowup,
        slope_fit,
        intercept_fit,
        theory_slope,
        c_fit,
        lower_bound_holds,
        monotone,
        solver,
    })
}
