//! Hypergeometric kernels of the transform that maps free wave solutions to
//! de Sitter Klein-Gordon solutions.
//!
//! `E(r, t; 0, t0; M)` is the source kernel, `K1(z, t) = E(z, t; 0, 0)` and
//! `K0(z, t) = -dE/db` at `b = 0` are the data kernels.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::specfun::{self, Branch, HypParams, SpecFunError, C64};

/// K0 refuses points this close to its singular edge z = 1 - e^{-t}.
pub const K0_EDGE_GUARD: f64 = 1e-12;

const DOMAIN_SLACK: f64 = 1e-13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("r = {r} outside [0, {reach}] (t = {t}, t0 = {t0})")]
    Domain { r: f64, reach: f64, t: f64, t0: f64 },
    #[error("z = {z} within {K0_EDGE_GUARD:e} of the singular edge {edge} of K0")]
    Singular { z: f64, edge: f64 },
    #[error("invalid times t = {t}, t0 = {t0}")]
    Times { t: f64, t0: f64 },
    #[error("model invariant violated: {0}")]
    Model(String),
    #[error(transparent)]
    SpecFun(#[from] SpecFunError),
}

/// Physical configuration: damping `n`, mass squared and the derived
/// principal root `eff_mass = sqrt(n^2/4 - mass_sq)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n: u32,
    pub mass_sq: C64,
    pub eff_mass: C64,
    /// Sobolev index of every norm computed for this model.
    pub s: f64,
    /// Exponent of the nonlinearity, when one is attached.
    #[serde(default)]
    pub alpha: f64,
}

impl ModelParams {
    pub fn new(n: u32, mass_sq: C64, s: f64) -> Self {
        let quarter = 0.25 * (n as f64) * (n as f64);
        Self {
            n,
            mass_sq,
            eff_mass: (quarter - mass_sq).sqrt(),
            s,
            alpha: 0.0,
        }
    }

    /// Model with a prescribed root; the mass is recovered from it.
    pub fn from_eff_mass(n: u32, eff_mass: C64, s: f64) -> Self {
        let quarter = 0.25 * (n as f64) * (n as f64);
        Self {
            n,
            mass_sq: quarter - eff_mass * eff_mass,
            eff_mass,
            s,
            alpha: 0.0,
        }
    }

    pub fn with_alpha(self, alpha: f64) -> Self {
        Self { alpha, ..self }
    }

    pub fn nf(&self) -> f64 {
        self.n as f64
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        let quarter = 0.25 * self.nf() * self.nf();
        let gap = (self.eff_mass * self.eff_mass - (quarter - self.mass_sq)).norm();
        if gap > 1e-12 * (1.0 + self.mass_sq.norm()) {
            return Err(KernelError::Model(format!(
                "eff_mass^2 must equal n^2/4 - mass_sq (off by {gap:e})"
            )));
        }
        if self.eff_mass.re < 0.0 {
            return Err(KernelError::Model(
                "eff_mass must be the principal root (Re >= 0)".into(),
            ));
        }
        if self.n == 0 {
            return Err(KernelError::Model("n must be positive".into()));
        }
        if !(self.s.is_finite() && self.alpha >= 0.0) {
            return Err(KernelError::Model("s must be finite and alpha >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelArgs {
    pub r: f64,
    pub t: f64,
    pub t0: f64,
}

/// Value with the hypergeometric branch that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelValue {
    pub value: C64,
    pub branch: Branch,
    pub est_abs_error: f64,
}

fn c(re: f64) -> C64 {
    Complex64::new(re, 0.0)
}

struct Geometry {
    // e^{-t}, e^{-t0}
    p: f64,
    q: f64,
    base: f64,
    zeta: f64,
    w: f64,
}

fn geometry(args: KernelArgs) -> Result<Geometry, KernelError> {
    let KernelArgs { r, t, t0 } = args;
    if !(t0 >= 0.0 && t >= t0 && t.is_finite()) {
        return Err(KernelError::Times { t, t0 });
    }
    let p = (-t).exp();
    let q = (-t0).exp();
    let reach = -q * (-(t - t0)).exp_m1();
    if !(r >= 0.0 && r <= reach * (1.0 + DOMAIN_SLACK) + DOMAIN_SLACK * 1e-3) {
        return Err(KernelError::Domain { r, reach, t, t0 });
    }
    let r = r.min(reach);
    let base = (p + q - r) * (p + q + r);
    assert!(base > 0.0, "kernel base must be positive on the domain");
    let num = ((reach - r) * (reach + r)).max(0.0);
    Ok(Geometry {
        p,
        q,
        base,
        zeta: num / base,
        w: 4.0 * p * q / base,
    })
}

fn f_half(m: C64, g: &Geometry) -> Result<specfun::EvalResult, SpecFunError> {
    let a = 0.5 - m;
    specfun::hyp2f1(&HypParams {
        a,
        b: a,
        c: c(1.0),
        z: g.zeta,
        one_minus_z: g.w,
    })
}

// 4^{-M} e^{M(t0+t)} base^{M-1/2}
fn prefactor(m: C64, t_sum: f64, base: f64) -> C64 {
    (m * t_sum - m * 4f64.ln() + (m - 0.5) * base.ln()).exp()
}

pub fn kernel_e_eval(args: KernelArgs, m: C64) -> Result<KernelValue, KernelError> {
    let g = geometry(args)?;
    let f = f_half(m, &g)?;
    let pre = prefactor(m, args.t0 + args.t, g.base);
    Ok(KernelValue {
        value: pre * f.value,
        branch: f.branch,
        est_abs_error: pre.norm() * f.est_abs_error,
    })
}

pub fn kernel_e(args: KernelArgs, m: C64) -> Result<C64, KernelError> {
    kernel_e_eval(args, m).map(|k| k.value)
}

pub fn kernel_k1(z: f64, t: f64, m: C64) -> Result<C64, KernelError> {
    kernel_e(KernelArgs { r: z, t, t0: 0.0 }, m)
}

pub fn kernel_k0_eval(z: f64, t: f64, m: C64) -> Result<KernelValue, KernelError> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(KernelError::Times { t, t0: 0.0 });
    }
    let e = (-t).exp();
    let edge = -(-t).exp_m1();
    if !(z >= 0.0 && z <= edge) {
        return Err(KernelError::Domain {
            r: z,
            reach: edge,
            t,
            t0: 0.0,
        });
    }
    if edge - z < K0_EDGE_GUARD {
        return Err(KernelError::Singular { z, edge });
    }
    let base = (1.0 + e - z) * (1.0 + e + z);
    let gap = (edge - z) * (edge + z);
    let g = Geometry {
        p: e,
        q: 1.0,
        base,
        zeta: gap / base,
        w: 4.0 * e / base,
    };
    let f0 = f_half(m, &g)?;
    let f1 = specfun::hyp2f1(&HypParams {
        a: -0.5 - m,
        b: 0.5 - m,
        c: c(1.0),
        z: g.zeta,
        one_minus_z: g.w,
    })?;
    let lin = e - 1.0 + m * (e * e - 1.0 - z * z);
    let quad = (1.0 - e * e + z * z) * (0.5 + m);
    let bracket = lin * f0.value + quad * f1.value;
    let pre = prefactor(m, t, base) / gap;
    let err = pre.norm() * (lin.norm() * f0.est_abs_error + quad.norm() * f1.est_abs_error);
    let branch = if f0.branch == Branch::DirectSeries {
        f1.branch
    } else {
        f0.branch
    };
    Ok(KernelValue {
        value: pre * bracket,
        branch,
        est_abs_error: err,
    })
}

pub fn kernel_k0(z: f64, t: f64, m: C64) -> Result<C64, KernelError> {
    kernel_k0_eval(z, t, m).map(|k| k.value)
}

/// Time derivative of E(r, t; 0, b; M) by the product rule, with
/// d/dz F(a, a; 1; z) = a^2 F(a + 1, a + 1; 2; z).
pub fn kernel_de_dt_eval(r: f64, t: f64, b: f64, m: C64) -> Result<KernelValue, KernelError> {
    if !(b < t) {
        return Err(KernelError::Times { t, t0: b });
    }
    let g = geometry(KernelArgs { r, t, t0: b })?;
    let (p, q) = (g.p, g.q);
    let f0 = f_half(m, &g)?;
    let pre = prefactor(m, b + t, g.base);
    let d_base = -2.0 * p * (p + q);
    let mut value = (m + (m - 0.5) * d_base / g.base) * f0.value;
    let mut err = (m + (m - 0.5) * d_base / g.base).norm() * f0.est_abs_error;
    let a = 0.5 - m;
    if a != c(0.0) {
        let num = g.zeta * g.base;
        let d_num = 2.0 * p * (q - p);
        let d_zeta = (d_num * g.base - num * d_base) / (g.base * g.base);
        let f1 = specfun::hyp2f1(&HypParams {
            a: a + 1.0,
            b: a + 1.0,
            c: c(2.0),
            z: g.zeta,
            one_minus_z: g.w,
        })?;
        value += a * a * f1.value * d_zeta;
        err += (a * a).norm() * d_zeta.abs() * f1.est_abs_error;
    }
    Ok(KernelValue {
        value: pre * value,
        branch: f0.branch,
        est_abs_error: pre.norm() * err,
    })
}

pub fn kernel_de_dt(r: f64, t: f64, b: f64, m: C64) -> Result<C64, KernelError> {
    kernel_de_dt_eval(r, t, b, m).map(|k| k.value)
}

/// Closed forms at the two masses where the hypergeometric factor is a
/// polynomial.
pub mod closed_form {
    pub fn e_half(t: f64, t0: f64) -> f64 {
        0.5 * (0.5 * (t0 + t)).exp()
    }

    pub fn k0_half(t: f64) -> f64 {
        -0.25 * (0.5 * t).exp()
    }

    pub fn k1_half(t: f64) -> f64 {
        0.5 * (0.5 * t).exp()
    }

    pub fn de_dt_half(t: f64, b: f64) -> f64 {
        0.25 * (0.5 * (b + t)).exp()
    }

    pub fn e_three_halves(r: f64, t: f64, b: f64) -> f64 {
        let e2b = (2.0 * b).exp();
        let e2t = (2.0 * t).exp();
        0.25 * (-0.5 * b - 0.5 * t).exp() * (e2b + e2t - r * r * e2b * e2t)
    }

    pub fn de_dt_three_halves(r: f64, t: f64, b: f64) -> f64 {
        let e2b = (2.0 * b).exp();
        let e2t = (2.0 * t).exp();
        0.125 * (-0.5 * b - 0.5 * t).exp() * (3.0 * e2t - 3.0 * r * r * e2b * e2t - e2b)
    }

    pub fn k1_three_halves(z: f64, t: f64) -> f64 {
        e_three_halves(z, t, 0.0)
    }

    pub fn k0_three_halves(z: f64, t: f64) -> f64 {
        let e2t = (2.0 * t).exp();
        0.125 * (-0.5 * t).exp() * (e2t + 3.0 * z * z * e2t - 3.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cm(re: f64, im: f64) -> C64 {
        Complex64::new(re, im)
    }

    fn rel(a: C64, b: C64) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn model_params_roundtrip() {
        let p = ModelParams::new(3, cm(2.0, 0.0), 2.0);
        assert!((p.eff_mass - cm(0.5, 0.0)).norm() < 1e-15);
        p.validate().unwrap();
        let q = ModelParams::from_eff_mass(3, cm(0.25, 0.0), 2.0);
        assert!((q.mass_sq.re - 2.1875).abs() < 1e-15);
        let bad = ModelParams {
            eff_mass: cm(0.3, 0.0),
            ..p
        };
        assert!(bad.validate().is_err());
        // imaginary root for heavy fields, principal branch
        let heavy = ModelParams::new(3, cm(4.0, 0.0), 2.0);
        assert!(heavy.eff_mass.re.abs() < 1e-15 && heavy.eff_mass.im > 0.0);
    }

    #[test]
    fn oracle_values() {
        // mpmath at 40 digits
        let k1 = kernel_k1(0.3, 1.0, cm(0.25, 0.0)).unwrap();
        assert!(rel(k1, cm(0.795_117_133_030_958_657_26, 0.0)) < 1e-12);
        let k1 = kernel_k1(0.2, 2.0, cm(0.3, 0.5)).unwrap();
        assert!(rel(k1, cm(0.914_561_899_056_955_605_93, 0.280_363_485_360_865_147_55)) < 1e-12);
        let e = kernel_e(
            KernelArgs {
                r: 0.1,
                t: 1.0,
                t0: 0.2,
            },
            cm(0.3, 0.0),
        )
        .unwrap();
        assert!(rel(e, cm(0.889_502_720_621_027_265_78, 0.0)) < 1e-12);
        let k0 = kernel_k0(0.1, 2.0, cm(1.25, 0.0)).unwrap();
        assert!(rel(k0, cm(0.768_861_219_033_421_126_32, 0.0)) < 1e-11);
        let k0 = kernel_k0(0.5, 1.5, cm(0.4, 0.3)).unwrap();
        assert!(rel(k0, cm(-0.684_873_440_411_790_548_22, 0.188_214_067_785_607_144_61)) < 1e-11);
        let d = kernel_de_dt(0.1, 1.0, 0.2, cm(0.3, 0.0)).unwrap();
        assert!(rel(d, cm(0.390_677_852_993_868_618_27, 0.0)) < 1e-11);
        let d = kernel_de_dt(0.05, 2.0, 0.5, cm(0.7, 0.2)).unwrap();
        assert!(rel(d, cm(1.167_660_183_610_247_592_6, 0.476_158_802_948_515_132_92)) < 1e-11);
    }

    #[test]
    fn half_mass_constants() {
        let m = cm(0.5, 0.0);
        for &(r, t, t0) in &[(0.0, 1.0, 0.0), (0.1, 2.0, 0.3), (0.25, 0.5, 0.1)] {
            let e = kernel_e(KernelArgs { r, t, t0 }, m).unwrap();
            assert!(rel(e, cm(closed_form::e_half(t, t0), 0.0)) < 1e-14);
        }
        assert!(rel(kernel_k0(0.2, 2.0, m).unwrap(), cm(closed_form::k0_half(2.0), 0.0)) < 1e-13);
        assert!(rel(kernel_k1(0.2, 2.0, m).unwrap(), cm(closed_form::k1_half(2.0), 0.0)) < 1e-14);
        let d = kernel_de_dt(0.1, 1.5, 0.2, m).unwrap();
        assert!(rel(d, cm(closed_form::de_dt_half(1.5, 0.2), 0.0)) < 1e-13);
    }

    #[test]
    fn three_halves_forms() {
        let m = cm(1.5, 0.0);
        let (t, b): (f64, f64) = (1.3, 0.4);
        let reach = (-b).exp() - (-t).exp();
        for i in 0..5 {
            let r = reach * i as f64 / 4.0;
            let e = kernel_e(KernelArgs { r, t, t0: b }, m).unwrap();
            assert!(rel(e, cm(closed_form::e_three_halves(r, t, b), 0.0)) < 1e-13);
            let d = kernel_de_dt(r, t, b, m).unwrap();
            assert!(rel(d, cm(closed_form::de_dt_three_halves(r, t, b), 0.0)) < 1e-12);
        }
        let k0 = kernel_k0(0.3, 1.0, m).unwrap();
        assert!(rel(k0, cm(closed_form::k0_three_halves(0.3, 1.0), 0.0)) < 1e-12);
    }

    #[test]
    fn k0_is_minus_db_of_e() {
        let (m, z, t, h) = (cm(0.3, 0.0), 0.2, 1.0, 1e-5);
        // one-sided, b >= 0 only
        let e = |b: f64| kernel_e(KernelArgs { r: z, t, t0: b }, m).unwrap();
        let fd = -(-3.0 * e(0.0) + 4.0 * e(h) - e(2.0 * h)) / (2.0 * h);
        let k0 = kernel_k0(z, t, m).unwrap();
        assert!(rel(fd, k0) < 1e-5, "{fd} vs {k0}");
    }

    #[test]
    fn de_dt_matches_finite_difference() {
        let (m, r, b, t, h) = (cm(0.3, 0.0), 0.1, 0.2, 1.0, 1e-5);
        let e = |t: f64| kernel_e(KernelArgs { r, t, t0: b }, m).unwrap();
        let fd = (e(t + h) - e(t - h)) / (2.0 * h);
        assert!(rel(fd, kernel_de_dt(r, t, b, m).unwrap()) < 1e-5);
    }

    #[test]
    fn hypergeometric_factor_is_bounded() {
        // sup over zeta in [0, 1) of |F(1/2 - M, 1/2 - M; 1; zeta)|
        let sup = |m: C64| {
            (0..=2000)
                .map(|i| {
                    let w = 10f64.powf(-12.0 * i as f64 / 2000.0);
                    let a = cm(0.5, 0.0) - m;
                    specfun::hyp2f1(&HypParams::from_complement(a, a, cm(1.0, 0.0), w))
                        .unwrap()
                        .value
                        .norm()
                })
                .fold(0.0, f64::max)
        };
        // real M: coefficients (a)_k^2 / k!^2 are positive, so the sup is the
        // Gauss value at zeta = 1
        for m in [0.1, 0.25, 0.4, 0.7, 1.5, 2.4] {
            let gauss = specfun::complex_gamma(cm(2.0 * m, 0.0)).unwrap().re
                / specfun::complex_gamma(cm(m + 0.5, 0.0)).unwrap().re.powi(2);
            let s = sup(cm(m, 0.0));
            assert!(s <= gauss * (1.0 + 1e-12) && s > 0.99 * gauss, "M={m}: {s} vs {gauss}");
        }
        for m in [cm(0.3, 0.5), cm(1.0, 1.0), cm(0.05, 2.0)] {
            let s = sup(m);
            assert!(s.is_finite() && s < 10.0, "M={m}: {s}");
        }
    }

    #[test]
    fn boundary_identity() {
        for &mre in &[0.1, 0.25, 0.7, 1.0, 1.9, 2.5] {
            for &mim in &[0.0, 0.5] {
                let (b, t): (f64, f64) = (0.3, 2.1);
                let r = (-b).exp() - (-t).exp();
                let e = kernel_e(KernelArgs { r, t, t0: b }, cm(mre, mim)).unwrap();
                assert!(rel(e, cm(closed_form::e_half(t, b), 0.0)) < 1e-12);
            }
        }
        let t: f64 = 1.7;
        let z = -(-t).exp_m1();
        let k1 = kernel_k1(z, t, cm(0.8, -0.3)).unwrap();
        assert!(rel(k1, cm(closed_form::k1_half(t), 0.0)) < 1e-12);
    }

    #[test]
    fn domain_errors() {
        let m = cm(0.3, 0.0);
        assert!(matches!(
            kernel_e(
                KernelArgs {
                    r: 0.9,
                    t: 1.0,
                    t0: 0.0
                },
                m
            ),
            Err(KernelError::Domain { .. })
        ));
        assert!(matches!(kernel_k1(0.9, 1.0, m), Err(KernelError::Domain { .. })));
        let edge = -(-1.0f64).exp_m1();
        assert!(matches!(kernel_k0(edge, 1.0, m), Err(KernelError::Singular { .. })));
        assert!(matches!(
            kernel_k0(edge - 1e-13, 1.0, m),
            Err(KernelError::Singular { .. })
        ));
        assert!(kernel_k0(edge - 1e-6, 1.0, m).is_ok());
        assert!(matches!(kernel_de_dt(0.0, 1.0, 1.0, m), Err(KernelError::Times { .. })));
    }

    #[test]
    fn conjugation_symmetry() {
        let m = cm(0.7, 0.4);
        let a = kernel_e(
            KernelArgs {
                r: 0.2,
                t: 1.5,
                t0: 0.1,
            },
            m,
        )
        .unwrap();
        let b = kernel_e(
            KernelArgs {
                r: 0.2,
                t: 1.5,
                t0: 0.1,
            },
            m.conj(),
        )
        .unwrap();
        assert!((a - b.conj()).norm() < 1e-12 * a.norm());
    }
}
