//! Fields on the periodic torus [0, 2pi)^d, their Fourier coefficients and
//! Sobolev norms.
//!
//! Coefficients follow f(x) = sum_k c_k e^{ikx}, so c_k = N^{-d} sum_j f(x_j) e^{-ikx_j}.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use rand::Rng;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::ModelParams;
use crate::specfun::C64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("grid must have d in {{1, 2}} and npts a power of two >= 16 (got d = {d}, npts = {npts})")]
    InvalidGrid { d: usize, npts: usize },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("time {t} does not follow {prev}")]
    NonIncreasingTime { t: f64, prev: f64 },
    #[error("expected {expected} samples, got {got}")]
    Length { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PeriodicGrid {
    pub d: usize,
    pub npts: usize,
}

impl PeriodicGrid {
    pub fn new(d: usize, npts: usize) -> Result<Self, FieldError> {
        let g = Self { d, npts };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if !(self.d == 1 || self.d == 2) || self.npts < 16 || !self.npts.is_power_of_two() {
            return Err(FieldError::InvalidGrid {
                d: self.d,
                npts: self.npts,
            });
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        2.0 * PI
    }

    pub fn dx(&self) -> f64 {
        2.0 * PI / self.npts as f64
    }

    pub fn len(&self) -> usize {
        self.npts.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Signed integer wavenumber of an index along one axis.
    pub fn wavenumber(&self, i: usize) -> i64 {
        if i < self.npts / 2 {
            i as i64
        } else {
            i as i64 - self.npts as i64
        }
    }

    /// Multi-index of a flat position (row-major, last axis fastest).
    pub fn unflatten(&self, j: usize) -> [usize; 2] {
        if self.d == 1 {
            [j, 0]
        } else {
            [j / self.npts, j % self.npts]
        }
    }

    pub fn wavevector(&self, j: usize) -> [i64; 2] {
        let [i0, i1] = self.unflatten(j);
        if self.d == 1 {
            [self.wavenumber(i0), 0]
        } else {
            [self.wavenumber(i0), self.wavenumber(i1)]
        }
    }

    /// |k|^2 for every flat index.
    pub fn k_squared(&self) -> Vec<f64> {
        (0..self.len())
            .map(|j| {
                let [a, b] = self.wavevector(j);
                (a * a + b * b) as f64
            })
            .collect()
    }

    pub fn k_abs(&self) -> Vec<f64> {
        self.k_squared().into_iter().map(f64::sqrt).collect()
    }

    /// Grid point coordinates of a flat index.
    pub fn point(&self, j: usize) -> [f64; 2] {
        let [i0, i1] = self.unflatten(j);
        [i0 as f64 * self.dx(), i1 as f64 * self.dx()]
    }

    /// Keep-mask of the 2/3 rule: modes with any |k_i| > npts/3 are dropped.
    pub fn two_thirds_mask(&self) -> Vec<bool> {
        let cut = self.npts as i64 / 3;
        (0..self.len())
            .map(|j| {
                let [a, b] = self.wavevector(j);
                a.abs() <= cut && b.abs() <= cut
            })
            .collect()
    }
}

// keyed by (length, inverse)
type PlanCache = HashMap<(usize, bool), Arc<dyn Fft<f64>>>;

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, PlanCache)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cell| {
        let mut guard = cell.borrow_mut();
        let (planner, cache) = &mut *guard;
        cache
            .entry((n, inverse))
            .or_insert_with(|| {
                if inverse {
                    planner.plan_fft_inverse(n)
                } else {
                    planner.plan_fft_forward(n)
                }
            })
            .clone()
    })
}

fn transform(grid: &PeriodicGrid, data: &mut [C64], inverse: bool) {
    let n = grid.npts;
    let fft = plan(n, inverse);
    // rows are contiguous, so one call covers all of them
    fft.process(data);
    if grid.d == 2 {
        let mut col = vec![Complex64::new(0.0, 0.0); n];
        for i1 in 0..n {
            for i0 in 0..n {
                col[i0] = data[i0 * n + i1];
            }
            fft.process(&mut col);
            for i0 in 0..n {
                data[i0 * n + i1] = col[i0];
            }
        }
    }
    if !inverse {
        let scale = 1.0 / grid.len() as f64;
        data.iter_mut().for_each(|v| *v *= scale);
    }
}

/// A complex field with point values and Fourier coefficients; whichever
/// side is missing is computed on first access.
#[derive(Debug, Clone)]
pub struct SpectralField {
    grid: PeriodicGrid,
    values: OnceLock<Vec<C64>>,
    coeffs: OnceLock<Vec<C64>>,
}

impl SpectralField {
    pub fn from_values(grid: PeriodicGrid, values: Vec<C64>) -> Self {
        assert_eq!(values.len(), grid.len(), "value array does not match grid");
        Self {
            grid,
            values: OnceLock::from(values),
            coeffs: OnceLock::new(),
        }
    }

    pub fn from_coeffs(grid: PeriodicGrid, coeffs: Vec<C64>) -> Self {
        assert_eq!(coeffs.len(), grid.len(), "coefficient array does not match grid");
        Self {
            grid,
            values: OnceLock::new(),
            coeffs: OnceLock::from(coeffs),
        }
    }

    pub fn zeros(grid: PeriodicGrid) -> Self {
        Self::from_coeffs(grid, vec![Complex64::new(0.0, 0.0); grid.len()])
    }

    pub fn constant(grid: PeriodicGrid, c: C64) -> Self {
        let mut coeffs = vec![Complex64::new(0.0, 0.0); grid.len()];
        coeffs[0] = c;
        Self::from_coeffs(grid, coeffs)
    }

    /// Samples `f` at the grid points; `f` receives (x, y) with y = 0 in 1-D.
    pub fn from_fn(grid: PeriodicGrid, f: impl Fn(f64, f64) -> C64) -> Self {
        let values = (0..grid.len())
            .map(|j| {
                let [x, y] = grid.point(j);
                f(x, y)
            })
            .collect();
        Self::from_values(grid, values)
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn values(&self) -> &[C64] {
        self.values.get_or_init(|| {
            let mut data = self.coeffs.get().expect("field has no representation").clone();
            transform(&self.grid, &mut data, true);
            data
        })
    }

    pub fn coeffs(&self) -> &[C64] {
        self.coeffs.get_or_init(|| {
            let mut data = self.values.get().expect("field has no representation").clone();
            transform(&self.grid, &mut data, false);
            data
        })
    }

    pub fn values_mut(&mut self) -> &mut Vec<C64> {
        self.values();
        self.coeffs.take();
        self.values.get_mut().expect("values synchronized above")
    }

    pub fn coeffs_mut(&mut self) -> &mut Vec<C64> {
        self.coeffs();
        self.values.take();
        self.coeffs.get_mut().expect("coefficients synchronized above")
    }

    pub fn into_coeffs(mut self) -> Vec<C64> {
        self.coeffs();
        self.coeffs.take().expect("coefficients synchronized above")
    }

    pub fn to_spectral(&self) -> SpectralField {
        Self::from_coeffs(self.grid, self.coeffs().to_vec())
    }

    pub fn to_physical(&self) -> SpectralField {
        Self::from_values(self.grid, self.values().to_vec())
    }

    pub fn sobolev_norm(&self, s: f64) -> f64 {
        let weights = self.grid.k_squared();
        let sum: f64 = self
            .coeffs()
            .iter()
            .zip(&weights)
            .map(|(c, k2)| (1.0 + k2).powf(s) * c.norm_sqr())
            .sum();
        (self.grid.length().powi(self.grid.d as i32) * sum).sqrt()
    }

    /// L2 norm from point values, sqrt(dx^d sum |f_j|^2).
    pub fn l2_norm_physical(&self) -> f64 {
        let sum: f64 = self.values().iter().map(|v| v.norm_sqr()).sum();
        (self.grid.dx().powi(self.grid.d as i32) * sum).sqrt()
    }

    pub fn linf_norm(&self) -> f64 {
        self.values().iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Upper bound on the sup norm that needs no transform.
    pub fn linf_bound(&self) -> f64 {
        match self.values.get() {
            Some(v) => v.iter().map(|v| v.norm()).fold(0.0, f64::max),
            None => self.coeffs().iter().map(|c| c.norm()).sum(),
        }
    }

    fn check(&self, other: &SpectralField) -> Result<(), FieldError> {
        if self.grid != other.grid {
            Err(FieldError::GridMismatch)
        } else {
            Ok(())
        }
    }

    /// self + a * other, in coefficient space.
    pub fn axpy(&self, a: C64, other: &SpectralField) -> Result<SpectralField, FieldError> {
        self.check(other)?;
        let coeffs = self
            .coeffs()
            .iter()
            .zip(other.coeffs())
            .map(|(x, y)| x + a * y)
            .collect();
        Ok(Self::from_coeffs(self.grid, coeffs))
    }

    pub fn add(&self, other: &SpectralField) -> Result<SpectralField, FieldError> {
        self.axpy(Complex64::new(1.0, 0.0), other)
    }

    pub fn sub(&self, other: &SpectralField) -> Result<SpectralField, FieldError> {
        self.axpy(Complex64::new(-1.0, 0.0), other)
    }

    pub fn scale(&self, a: C64) -> SpectralField {
        Self::from_coeffs(self.grid, self.coeffs().iter().map(|c| a * c).collect())
    }

    /// Pointwise product, computed in physical space.
    pub fn mul(&self, other: &SpectralField) -> Result<SpectralField, FieldError> {
        self.check(other)?;
        let values = self.values().iter().zip(other.values()).map(|(x, y)| x * y).collect();
        Ok(Self::from_values(self.grid, values))
    }

    pub fn map_coeffs(&self, f: impl Fn(usize, C64) -> C64) -> SpectralField {
        let coeffs = self.coeffs().iter().enumerate().map(|(j, &c)| f(j, c)).collect();
        Self::from_coeffs(self.grid, coeffs)
    }

    pub fn map_values(&self, f: impl Fn(C64) -> C64) -> SpectralField {
        Self::from_values(self.grid, self.values().iter().map(|&v| f(v)).collect())
    }

    pub fn dealias(&self) -> SpectralField {
        let mask = self.grid.two_thirds_mask();
        self.map_coeffs(|j, c| if mask[j] { c } else { Complex64::new(0.0, 0.0) })
    }

    /// Writes `x[,y],re,im` rows after the optional comment line.
    pub fn write_csv(&self, mut w: impl Write, comment: Option<&str>) -> std::io::Result<()> {
        if let Some(c) = comment {
            writeln!(w, "# {c}")?;
        }
        if self.grid.d == 1 {
            writeln!(w, "x,re,im")?;
        } else {
            writeln!(w, "x,y,re,im")?;
        }
        for (j, v) in self.values().iter().enumerate() {
            let [x, y] = self.grid.point(j);
            if self.grid.d == 1 {
                writeln!(w, "{x:.12e},{:.12e},{:.12e}", v.re, v.im)?;
            } else {
                writeln!(w, "{x:.12e},{y:.12e},{:.12e},{:.12e}", v.re, v.im)?;
            }
        }
        Ok(())
    }
}

/// Random field with Gaussian coefficients on |k| <= kmax, decaying like
/// (1 + |k|^2)^{-1}.
pub fn random_bandlimited(grid: PeriodicGrid, kmax: f64, rng: &mut impl Rng) -> SpectralField {
    let k2 = grid.k_squared();
    let coeffs = k2
        .iter()
        .map(|&k2| {
            let re: f64 = rng.gen_range(-1.0..1.0);
            let im: f64 = rng.gen_range(-1.0..1.0);
            if k2 <= kmax * kmax {
                Complex64::new(re, im) / (1.0 + k2)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    SpectralField::from_coeffs(grid, coeffs)
}

/// Time-indexed snapshots with cached Sobolev norms.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub params: ModelParams,
    pub times: Vec<f64>,
    pub fields: Vec<SpectralField>,
    pub hs_norms: Vec<f64>,
}

impl Trajectory {
    pub fn new(params: ModelParams) -> Self {
        Self {
            params,
            times: Vec::new(),
            fields: Vec::new(),
            hs_norms: Vec::new(),
        }
    }

    pub fn push(&mut self, t: f64, field: SpectralField) -> Result<(), FieldError> {
        if let Some(&prev) = self.times.last() {
            if !(t > prev) {
                return Err(FieldError::NonIncreasingTime { t, prev });
            }
            if field.grid() != self.fields[0].grid() {
                return Err(FieldError::GridMismatch);
            }
        }
        self.hs_norms.push(field.sobolev_norm(self.params.s));
        self.times.push(t);
        self.fields.push(field);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn weighted_sup_norm(&self, gamma: f64) -> Result<f64, FieldError> {
        weighted_sup(&self.times, &self.hs_norms, gamma)
    }

    /// Writes `t,hs_norm,linf` rows after the optional comment line.
    pub fn write_csv(&self, mut w: impl Write, comment: Option<&str>) -> std::io::Result<()> {
        if let Some(c) = comment {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "t,hs_norm,linf")?;
        for ((t, n), f) in self.times.iter().zip(&self.hs_norms).zip(&self.fields) {
            writeln!(w, "{t:.12e},{n:.12e},{:.12e}", f.linf_norm())?;
        }
        Ok(())
    }
}

pub fn weighted_sup_norm(traj: &Trajectory, gamma: f64) -> Result<f64, FieldError> {
    traj.weighted_sup_norm(gamma)
}

/// max_i e^{gamma t_i} norms_i
pub fn weighted_sup(times: &[f64], norms: &[f64], gamma: f64) -> Result<f64, FieldError> {
    if times.is_empty() {
        return Err(FieldError::EmptyTrajectory);
    }
    if times.len() != norms.len() {
        return Err(FieldError::Length {
            expected: times.len(),
            got: norms.len(),
        });
    }
    Ok(times
        .iter()
        .zip(norms)
        .map(|(t, n)| (gamma * t).exp() * n)
        .fold(f64::NEG_INFINITY, f64::max))
}
