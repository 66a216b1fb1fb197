//! Time steppers: the constant-coefficient wave problem used inside the
//! transform, and a direct integrator of the full de Sitter equation
//! psi_tt + n psi_t - e^{-2t} Lap psi + m^2 psi = F(psi) + f.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldError, SpectralField, Trajectory};
use crate::kernels::ModelParams;
use crate::semilinear::{eval_nonlinearity, NonlinearSpec};
use crate::specfun::C64;

pub const DEFAULT_BLOWUP_THRESHOLD: f64 = 1e8;
pub const MIN_STEP: f64 = 1e-12;

// RK4 is stable on the imaginary axis up to |h omega| = 2 sqrt 2
const RK4_IMAG_LIMIT: f64 = 2.0 * std::f64::consts::SQRT_2;

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("wave radius r = {0} outside [0, 1]")]
    Radius(f64),
    #[error("CFL number {cfl} exceeds the RK4 stability limit 1")]
    CflViolated { cfl: f64 },
    #[error("variable coefficient must be positive and sized to the grid: {0}")]
    Coefficient(String),
    #[error("step size {h:e} fell below {MIN_STEP:e} at t = {t} without crossing the blow-up threshold (|psi|_inf = {linf:e})")]
    StepUnderflow { t: f64, h: f64, linf: f64 },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// The spatial operator A in v_rr = A v.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpatialOperator {
    Laplacian,
    /// d/dx (c(x) d/dx) on a 1-D grid, c sampled at the grid points.
    Variable1d {
        coeff: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct WaveProblem {
    pub initial: SpectralField,
    pub operator: SpatialOperator,
}

fn check_radius(r: f64) -> Result<(), EvolutionError> {
    if !(0.0..=1.0).contains(&r) {
        return Err(EvolutionError::Radius(r));
    }
    Ok(())
}

/// v(r) for v_rr = A v, v(0) = f, v_r(0) = 0.
pub fn solve_wave(p: &WaveProblem, r: f64) -> Result<SpectralField, EvolutionError> {
    check_radius(r)?;
    match &p.operator {
        SpatialOperator::Laplacian => {
            let k = p.initial.grid().k_abs();
            Ok(p.initial.map_coeffs(|j, c| c * (k[j] * r).cos()))
        }
        SpatialOperator::Variable1d { coeff } => {
            let zero = SpectralField::zeros(*p.initial.grid());
            Ok(solve_wave_variable(&p.initial, &zero, coeff, r, 0.5)?.0)
        }
    }
}

/// Laplacian wave with both data: v0 cos(|k| r) + v1 sin(|k| r)/|k|.
pub fn solve_wave_with_velocity(
    v0: &SpectralField,
    v1: &SpectralField,
    r: f64,
) -> Result<SpectralField, EvolutionError> {
    Ok(wave_state(v0, v1, r)?.0)
}

/// (v, v_r) at radius r for the Laplacian.
pub fn wave_state(
    v0: &SpectralField,
    v1: &SpectralField,
    r: f64,
) -> Result<(SpectralField, SpectralField), EvolutionError> {
    check_radius(r)?;
    if v0.grid() != v1.grid() {
        return Err(FieldError::GridMismatch.into());
    }
    let k = v0.grid().k_abs();
    let c1 = v1.coeffs();
    let v = v0.map_coeffs(|j, c| {
        let kk = k[j];
        let sinc = if kk == 0.0 { r } else { (kk * r).sin() / kk };
        c * (kk * r).cos() + c1[j] * sinc
    });
    let vr = v0.map_coeffs(|j, c| {
        let kk = k[j];
        -c * kk * (kk * r).sin() + c1[j] * (kk * r).cos()
    });
    Ok((v, vr))
}

/// |v_r|^2 + |grad v|^2 integrated over the torus.
pub fn wave_energy(v: &SpectralField, vr: &SpectralField) -> f64 {
    let grid = v.grid();
    let k2 = grid.k_squared();
    let sum: f64 = v
        .coeffs()
        .iter()
        .zip(vr.coeffs())
        .zip(&k2)
        .map(|((a, b), k2)| b.norm_sqr() + k2 * a.norm_sqr())
        .sum();
    grid.length().powi(grid.d as i32) * sum
}

fn apply_variable(v: &[C64], coeff: &[f64], ik: &[f64], grid: crate::field::PeriodicGrid) -> Vec<C64> {
    let dv = SpectralField::from_values(grid, v.to_vec()).map_coeffs(|j, c| Complex64::new(0.0, ik[j]) * c);
    let flux: Vec<C64> = dv.values().iter().zip(coeff).map(|(d, c)| d * c).collect();
    SpectralField::from_values(grid, flux)
        .map_coeffs(|j, c| Complex64::new(0.0, ik[j]) * c)
        .values()
        .to_vec()
}

/// Method of lines with classical RK4 for v_rr = (c v_x)_x in 1-D.
/// `cfl` is the step as a fraction of the RK4 stability limit.
pub fn solve_wave_variable(
    v0: &SpectralField,
    v1: &SpectralField,
    coeff: &[f64],
    r: f64,
    cfl: f64,
) -> Result<(SpectralField, SpectralField), EvolutionError> {
    check_radius(r)?;
    let grid = *v0.grid();
    if grid.d != 1 || coeff.len() != grid.npts {
        return Err(EvolutionError::Coefficient(format!(
            "need {} samples on a 1-D grid",
            grid.npts
        )));
    }
    if coeff.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
        return Err(EvolutionError::Coefficient("coefficient must be positive".into()));
    }
    if !(cfl > 0.0) || cfl > 1.0 {
        return Err(EvolutionError::CflViolated { cfl });
    }
    // first derivative symbol; the Nyquist mode has no odd derivative
    let ik: Vec<f64> = (0..grid.npts)
        .map(|i| {
            if i == grid.npts / 2 {
                0.0
            } else {
                grid.wavenumber(i) as f64
            }
        })
        .collect();
    let cmax = coeff.iter().cloned().fold(0.0, f64::max);
    let omega = cmax.sqrt() * (grid.npts / 2) as f64;
    let steps = ((r * omega / (cfl * RK4_IMAG_LIMIT)).ceil() as usize).max(1);
    let h = r / steps as f64;
    let mut v = v0.values().to_vec();
    let mut w = v1.values().to_vec();
    let axpy = |x: &[C64], a: f64, y: &[C64]| -> Vec<C64> { x.iter().zip(y).map(|(x, y)| x + a * y).collect() };
    for _ in 0..steps {
        let k1v = w.clone();
        let k1w = apply_variable(&v, coeff, &ik, grid);
        let k2v = axpy(&w, 0.5 * h, &k1w);
        let k2w = apply_variable(&axpy(&v, 0.5 * h, &k1v), coeff, &ik, grid);
        let k3v = axpy(&w, 0.5 * h, &k2w);
        let k3w = apply_variable(&axpy(&v, 0.5 * h, &k2v), coeff, &ik, grid);
        let k4v = axpy(&w, h, &k3w);
        let k4w = apply_variable(&axpy(&v, h, &k3v), coeff, &ik, grid);
        for j in 0..v.len() {
            v[j] += h / 6.0 * (k1v[j] + 2.0 * k2v[j] + 2.0 * k3v[j] + k4v[j]);
            w[j] += h / 6.0 * (k1w[j] + 2.0 * k2w[j] + 2.0 * k3w[j] + k4w[j]);
        }
    }
    Ok((SpectralField::from_values(grid, v), SpectralField::from_values(grid, w)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectSolveConfig {
    pub params: ModelParams,
    pub t_final: f64,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
    #[serde(default = "default_dt_init")]
    pub dt_init: f64,
    #[serde(default = "default_threshold")]
    pub blowup_threshold: f64,
    #[serde(default)]
    pub nonlinearity: Option<NonlinearSpec>,
    /// Sample times; empty means 101 equispaced points on [0, t_final].
    #[serde(default)]
    pub output_times: Vec<f64>,
}

fn default_rtol() -> f64 {
    1e-9
}
fn default_atol() -> f64 {
    1e-12
}
fn default_dt_init() -> f64 {
    1e-3
}
fn default_threshold() -> f64 {
    DEFAULT_BLOWUP_THRESHOLD
}

impl DirectSolveConfig {
    pub fn new(params: ModelParams, t_final: f64) -> Self {
        Self {
            params,
            t_final,
            rtol: default_rtol(),
            atol: default_atol(),
            dt_init: default_dt_init(),
            blowup_threshold: DEFAULT_BLOWUP_THRESHOLD,
            nonlinearity: None,
            output_times: Vec::new(),
        }
    }

    pub fn sample_times(&self) -> Vec<f64> {
        if self.output_times.is_empty() {
            (0..=100).map(|i| self.t_final * i as f64 / 100.0).collect()
        } else {
            self.output_times.clone()
        }
    }

    pub fn validate(&self) -> Result<(), EvolutionError> {
        let bad = |m: &str| Err(EvolutionError::Config(m.to_string()));
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return bad("t_final must be positive");
        }
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return bad("rtol and atol must be positive");
        }
        if !(self.dt_init > 0.0) {
            return bad("dt_init must be positive");
        }
        if !(self.blowup_threshold > 0.0) {
            return bad("blowup_threshold must be positive");
        }
        let times = self.sample_times();
        if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|&t| !(0.0..=self.t_final).contains(&t)) {
            return bad("output_times must be strictly increasing within [0, t_final]");
        }
        if let Some(f) = &self.nonlinearity {
            f.validate().map_err(|e| EvolutionError::Config(e.to_string()))?;
        }
        self.params
            .validate()
            .map_err(|e| EvolutionError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    /// |psi|_inf crossed the threshold at `t`.
    Blowup {
        t: f64,
    },
}

#[derive(Debug, Clone)]
pub struct DirectSolution {
    pub trajectory: Trajectory,
    /// psi_t at the same sample times.
    pub velocities: Vec<SpectralField>,
    pub outcome: Outcome,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

// Dormand-Prince 5(4)
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

type Source<'a> = &'a (dyn Fn(f64) -> SpectralField + Sync);

struct System<'a> {
    cfg: &'a DirectSolveConfig,
    grid: crate::field::PeriodicGrid,
    k2: Vec<f64>,
    half_n: f64,
    m2: C64,
    source: Option<Source<'a>>,
}

impl System<'_> {
    fn psi(&self, t: f64, u: &[C64]) -> SpectralField {
        let damp = (-self.half_n * t).exp();
        SpectralField::from_coeffs(self.grid, u.iter().map(|c| c * damp).collect())
    }

    // state layout: [u_hat; u_hat'] with u = e^{nt/2} psi
    fn rhs(&self, t: f64, y: &[C64], out: &mut [C64]) {
        let n = self.k2.len();
        let (u, du) = y.split_at(n);
        let e2 = (-2.0 * t).exp();
        let grow = (self.half_n * t).exp();
        let forcing: Option<Vec<C64>> = match (&self.cfg.nonlinearity, &self.source) {
            (None, None) => None,
            (nl, src) => {
                let mut acc = vec![Complex64::new(0.0, 0.0); n];
                if let Some(f) = nl {
                    let fp = eval_nonlinearity(f, &self.psi(t, u));
                    acc.iter_mut().zip(fp.coeffs()).for_each(|(a, c)| *a += c);
                }
                if let Some(src) = src {
                    acc.iter_mut().zip(src(t).coeffs()).for_each(|(a, c)| *a += c);
                }
                Some(acc)
            }
        };
        let (o_u, o_du) = out.split_at_mut(n);
        o_u.copy_from_slice(du);
        for j in 0..n {
            o_du[j] = (self.m2 - e2 * self.k2[j]) * u[j];
            if let Some(f) = &forcing {
                o_du[j] += grow * f[j];
            }
        }
    }

    fn velocity(&self, t: f64, y: &[C64]) -> SpectralField {
        let n = self.k2.len();
        let damp = (-self.half_n * t).exp();
        let coeffs = (0..n).map(|j| damp * (y[n + j] - self.half_n * y[j])).collect();
        SpectralField::from_coeffs(self.grid, coeffs)
    }
}

pub fn solve_desitter_direct(
    psi0: &SpectralField,
    psi1: &SpectralField,
    cfg: &DirectSolveConfig,
) -> Result<DirectSolution, EvolutionError> {
    solve_desitter_direct_with_source(psi0, psi1, cfg, None)
}

/// Adaptive Dormand-Prince integration in the variables u = e^{nt/2} psi,
/// mode by mode in Fourier space.
pub fn solve_desitter_direct_with_source(
    psi0: &SpectralField,
    psi1: &SpectralField,
    cfg: &DirectSolveConfig,
    source: Option<Source<'_>>,
) -> Result<DirectSolution, EvolutionError> {
    cfg.validate()?;
    if psi0.grid() != psi1.grid() {
        return Err(FieldError::GridMismatch.into());
    }
    if psi0.coeffs().iter().chain(psi1.coeffs()).any(|c| !c.is_finite()) {
        return Err(EvolutionError::NonFinite { t: 0.0 });
    }
    let grid = *psi0.grid();
    let params = cfg.params;
    let half_n = 0.5 * params.nf();
    let sys = System {
        cfg,
        grid,
        k2: grid.k_squared(),
        half_n,
        m2: params.eff_mass * params.eff_mass,
        source,
    };
    let n = grid.len();
    let mut y: Vec<C64> = psi0.coeffs().to_vec();
    y.extend(psi0.coeffs().iter().zip(psi1.coeffs()).map(|(p, v)| v + half_n * p));

    let samples = cfg.sample_times();
    let mut next = 0;
    let mut traj = Trajectory::new(params);
    let mut velocities = Vec::new();
    let mut t = 0.0;
    if samples.first() == Some(&0.0) {
        traj.push(0.0, sys.psi(0.0, &y[..n]))?;
        velocities.push(sys.velocity(0.0, &y));
        next = 1;
    }

    let mut k: Vec<Vec<C64>> = vec![vec![Complex64::new(0.0, 0.0); 2 * n]; 7];
    sys.rhs(t, &y, &mut k[0]);
    let mut h = cfg.dt_init.min(cfg.t_final);
    let mut tmp = vec![Complex64::new(0.0, 0.0); 2 * n];
    let mut y_new = vec![Complex64::new(0.0, 0.0); 2 * n];
    let (mut accepted, mut rejected) = (0usize, 0usize);
    let mut prev_psi = psi0.clone();
    let tiny = 1e-14 * cfg.t_final.max(1.0);

    while t < cfg.t_final - tiny {
        let target = samples.get(next).copied().unwrap_or(cfg.t_final);
        let clipped = h >= target - t;
        let step = if clipped { target - t } else { h };
        if step < MIN_STEP {
            return Err(EvolutionError::StepUnderflow {
                t,
                h: step,
                linf: sys.psi(t, &y[..n]).linf_norm(),
            });
        }
        let stage = |coefs: &[(usize, f64)], k: &[Vec<C64>], tmp: &mut Vec<C64>| {
            for j in 0..2 * n {
                let mut acc = y[j];
                for &(s, a) in coefs {
                    acc += step * a * k[s][j];
                }
                tmp[j] = acc;
            }
        };
        stage(&[(0, A21)], &k, &mut tmp);
        sys.rhs(t + C2 * step, &tmp, &mut k[1]);
        stage(&[(0, A31), (1, A32)], &k, &mut tmp);
        sys.rhs(t + C3 * step, &tmp, &mut k[2]);
        stage(&[(0, A41), (1, A42), (2, A43)], &k, &mut tmp);
        sys.rhs(t + C4 * step, &tmp, &mut k[3]);
        stage(&[(0, A51), (1, A52), (2, A53), (3, A54)], &k, &mut tmp);
        sys.rhs(t + C5 * step, &tmp, &mut k[4]);
        stage(&[(0, A61), (1, A62), (2, A63), (3, A64), (4, A65)], &k, &mut tmp);
        sys.rhs(t + step, &tmp, &mut k[5]);
        for j in 0..2 * n {
            y_new[j] = y[j] + step * (B1 * k[0][j] + B3 * k[2][j] + B4 * k[3][j] + B5 * k[4][j] + B6 * k[5][j]);
        }
        sys.rhs(t + step, &y_new, &mut k[6]);

        let mut err_sq = 0.0;
        for j in 0..2 * n {
            let e = step * (E1 * k[0][j] + E3 * k[2][j] + E4 * k[3][j] + E5 * k[4][j] + E6 * k[5][j] + E7 * k[6][j]);
            let sc = cfg.atol + cfg.rtol * y[j].norm().max(y_new[j].norm());
            err_sq += (e.norm() / sc).powi(2);
        }
        let err = (err_sq / (2 * n) as f64).sqrt();
        if !err.is_finite() {
            h = step * 0.2;
            rejected += 1;
            continue;
        }
        let fac = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        if err > 1.0 {
            h = step * fac.min(1.0);
            rejected += 1;
            continue;
        }
        accepted += 1;
        let t_new = if clipped { target } else { t + step };
        std::mem::swap(&mut y, &mut y_new);
        k.swap(0, 6);
        if !clipped || fac > 1.0 {
            h = step * fac;
        }

        let psi = sys.psi(t_new, &y[..n]);
        if psi.linf_bound() > cfg.blowup_threshold {
            let linf = psi.linf_norm();
            if linf > cfg.blowup_threshold {
                // log-linear interpolation of the crossing inside the step
                let l0 = prev_psi.linf_norm().max(f64::MIN_POSITIVE).ln();
                let l1 = linf.ln();
                let frac = ((cfg.blowup_threshold.ln() - l0) / (l1 - l0)).clamp(0.0, 1.0);
                return Ok(DirectSolution {
                    trajectory: traj,
                    velocities,
                    outcome: Outcome::Blowup {
                        t: t + frac * (t_new - t),
                    },
                    accepted_steps: accepted,
                    rejected_steps: rejected,
                });
            }
        }
        t = t_new;
        if clipped && next < samples.len() {
            traj.push(t, psi.clone())?;
            velocities.push(sys.velocity(t, &y));
            next += 1;
        }
        prev_psi = psi;
    }
    Ok(DirectSolution {
        trajectory: traj,
        velocities,
        outcome: Outcome::Completed,
        accepted_steps: accepted,
        rejected_steps: rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::PeriodicGrid;

    fn cx(re: f64) -> C64 {
        Complex64::new(re, 0.0)
    }

    fn g1(n: usize) -> PeriodicGrid {
        PeriodicGrid::new(1, n).unwrap()
    }

    fn max_diff(a: &SpectralField, b: &SpectralField) -> f64 {
        a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn wave_closed_forms() {
        let g = g1(32);
        let c = SpectralField::constant(g, cx(2.5));
        let p = WaveProblem {
            initial: c.clone(),
            operator: SpatialOperator::Laplacian,
        };
        assert!(max_diff(&solve_wave(&p, 0.7).unwrap(), &c) < 1e-14);
        let f = SpectralField::from_fn(g, |x, _| cx((3.0 * x).cos()));
        let p = WaveProblem {
            initial: f,
            operator: SpatialOperator::Laplacian,
        };
        let want = SpectralField::from_fn(g, |x, _| cx((3.0 * 0.4f64).cos() * (3.0 * x).cos()));
        assert!(max_diff(&solve_wave(&p, 0.4).unwrap(), &want) < 1e-14);
        assert!(matches!(solve_wave(&p, 1.5), Err(EvolutionError::Radius(_))));

        let zero = SpectralField::zeros(g);
        let got = solve_wave_with_velocity(&zero, &c, 0.3).unwrap();
        assert!(max_diff(&got, &c.scale(cx(0.3))) < 1e-14);
        let v1 = SpectralField::from_fn(g, |x, _| cx((2.0 * x).cos()));
        let got = solve_wave_with_velocity(&zero, &v1, 0.3).unwrap();
        let want = SpectralField::from_fn(g, |x, _| cx((0.6f64).sin() * (2.0 * x).cos() / 2.0));
        assert!(max_diff(&got, &want) < 1e-14);
    }

    #[test]
    fn wave_energy_conserved() {
        let g = PeriodicGrid::new(2, 16).unwrap();
        let v0 = SpectralField::from_fn(g, |x, y| cx((-(x - 3.0).powi(2) - (y - 2.0).powi(2)).exp()));
        let v1 = SpectralField::from_fn(g, |x, y| cx((x + 2.0 * y).sin()));
        let e0 = {
            let (v, vr) = wave_state(&v0, &v1, 0.0).unwrap();
            wave_energy(&v, &vr)
        };
        for r in [0.1, 0.5, 1.0] {
            let (v, vr) = wave_state(&v0, &v1, r).unwrap();
            assert!((wave_energy(&v, &vr) - e0).abs() < 1e-10 * e0);
        }
    }

    #[test]
    fn variable_coefficient_matches_refined_grid() {
        let coarse = g1(64);
        let fine = g1(256);
        let bump = |x: f64, _| cx((-(x - 3.0).powi(2) / (2.0 * 0.3f64.powi(2))).exp());
        let coeff = |g: PeriodicGrid| (0..g.npts).map(|j| 1.0 + 0.1 * g.point(j)[0].sin()).collect::<Vec<_>>();
        let a = SpectralField::from_fn(coarse, bump);
        let b = SpectralField::from_fn(fine, bump);
        let (va, _) = solve_wave_variable(&a, &SpectralField::zeros(coarse), &coeff(coarse), 0.5, 0.5).unwrap();
        let (vb, _) = solve_wave_variable(&b, &SpectralField::zeros(fine), &coeff(fine), 0.5, 0.1).unwrap();
        let sq: f64 = va
            .values()
            .iter()
            .enumerate()
            .map(|(j, v)| (v - vb.values()[4 * j]).norm_sqr())
            .sum();
        let l2 = (coarse.dx() * sq).sqrt();
        assert!(l2 < 1e-4, "L2 discrepancy {l2:e}");
        // constant coefficient reduces to the exact Laplacian propagator
        let ones = vec![1.0; 64];
        let (vc, _) = solve_wave_variable(&a, &SpectralField::zeros(coarse), &ones, 0.5, 0.1).unwrap();
        let exact = solve_wave(
            &WaveProblem {
                initial: a.clone(),
                operator: SpatialOperator::Laplacian,
            },
            0.5,
        )
        .unwrap();
        let dv = max_diff(&vc, &exact);
        assert!(dv < 1e-6, "{dv:e}");
        assert!(matches!(
            solve_wave_variable(&a, &SpectralField::zeros(coarse), &ones, 0.5, 1.5),
            Err(EvolutionError::CflViolated { .. })
        ));
    }

    #[test]
    fn zero_mode_matches_ode() {
        let g = g1(16);
        let params = ModelParams::new(3, cx(2.0), 1.0);
        let mut cfg = DirectSolveConfig::new(params, 3.0);
        cfg.rtol = 1e-11;
        cfg.atol = 1e-14;
        let c = 0.7;
        let sol = solve_desitter_direct(&SpectralField::constant(g, cx(c)), &SpectralField::zeros(g), &cfg).unwrap();
        assert_eq!(sol.outcome, Outcome::Completed);
        assert_eq!(sol.trajectory.len(), 101);
        for (t, f) in sol.trajectory.times.iter().zip(&sol.trajectory.fields) {
            let want = c * (2.0 * (-t).exp() - (-2.0 * t).exp());
            assert!((f.coeffs()[0].re - want).abs() < 1e-9, "t={t}");
        }
        let sol = solve_desitter_direct(&SpectralField::zeros(g), &SpectralField::constant(g, cx(c)), &cfg).unwrap();
        let t = *sol.trajectory.times.last().unwrap();
        let want = c * ((-t).exp() - (-2.0 * t).exp());
        assert!((sol.trajectory.fields.last().unwrap().coeffs()[0].re - want).abs() < 1e-9);
    }

    #[test]
    fn linear_solutions_decay() {
        let g = g1(32);
        let data = SpectralField::from_fn(g, |x, _| cx((-(x - 3.0).powi(2)).exp()));
        for m in [0.25, 0.5, 1.2] {
            let params = ModelParams::from_eff_mass(3, cx(m), 1.0);
            let cfg = DirectSolveConfig {
                output_times: vec![0.0, 6.0],
                ..DirectSolveConfig::new(params, 6.0)
            };
            let sol = solve_desitter_direct(&data, &SpectralField::zeros(g), &cfg).unwrap();
            assert!(sol.trajectory.hs_norms[1] < sol.trajectory.hs_norms[0]);
        }
    }

    #[test]
    fn tolerance_halving_is_consistent() {
        let g = g1(32);
        let data = SpectralField::from_fn(g, |x, _| cx((-(x - 3.0).powi(2)).exp()));
        let params = ModelParams::from_eff_mass(3, cx(0.3), 1.0);
        let run = |rtol: f64| {
            let cfg = DirectSolveConfig {
                rtol,
                atol: rtol * 1e-3,
                output_times: vec![4.0],
                ..DirectSolveConfig::new(params, 4.0)
            };
            *solve_desitter_direct(&data, &SpectralField::zeros(g), &cfg)
                .unwrap()
                .trajectory
                .hs_norms
                .last()
                .unwrap()
        };
        let (a, b, c) = (run(1e-6), run(5e-7), run(1e-11));
        // error shrinks with the tolerance and stays within a few local tolerances
        assert!((a - c).abs() / c < 5e-5 && (b - c).abs() <= (a - c).abs() * 1.5 + 1e-12);
    }

    #[test]
    fn focusing_cubic_blows_up() {
        let g = g1(16);
        let params = ModelParams::new(3, cx(-1.0), 1.0);
        let cfg = DirectSolveConfig {
            nonlinearity: Some(NonlinearSpec::Cubic { lambda: -1.0 }),
            ..DirectSolveConfig::new(params, 20.0)
        };
        let data = SpectralField::from_fn(g, |x, _| cx(3.0 * (1.0 + x.cos()) / 2.0));
        let sol = solve_desitter_direct(&data, &SpectralField::zeros(g), &cfg).unwrap();
        match sol.outcome {
            Outcome::Blowup { t } => assert!(t > 0.0 && t < 20.0),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let params = ModelParams::new(3, cx(2.0), 1.0);
        let mut cfg = DirectSolveConfig::new(params, 1.0);
        cfg.output_times = vec![0.5, 0.2];
        assert!(cfg.validate().is_err());
        cfg.output_times = vec![];
        cfg.rtol = 0.0;
        assert!(cfg.validate().is_err());
    }
}
