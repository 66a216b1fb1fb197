//! Complex gamma, digamma and the Gauss hypergeometric function 2F1 on
//! the real segment z in [0, 1).

use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;

/// Hard cap on the number of series terms summed by any branch.
pub const TERM_BUDGET: usize = 4000;

/// Above this argument the series is re-expanded around z = 1.
pub const BRANCH_SWITCH: f64 = 0.5;

/// Distance from an integer at which c - a - b is treated as degenerate.
pub const NEAR_INTEGER_TOL: f64 = 1e-6;

/// Half-step of the two-sided shift in c used for degenerate exponents.
/// Smaller shifts lose more to cancellation between the two connection
/// terms (each grows like 1/shift) than they gain in truncation.
pub const DEGENERATE_SHIFT: f64 = 1e-3;

const SERIES_RTOL: f64 = 1e-17;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecFunError {
    #[error("pole of gamma/digamma at z = {0}")]
    Pole(C64),
    #[error("argument z = {0} outside [0, 1)")]
    Domain(f64),
    #[error("c = {0} is a non-positive integer")]
    InvalidC(C64),
    #[error("{branch:?} did not converge within {terms} terms (last term {last:e})")]
    NonConvergence { branch: Branch, terms: usize, last: f64 },
    #[error("log-case expansion needs 1 - z < 0.5, got z = {0}")]
    Region(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    DirectSeries,
    Connection,
    LogCase,
}

/// Parameters of F(a, b; c; z). `one_minus_z` is carried separately so
/// callers that know 1 - z to full relative precision can pass it in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypParams {
    pub a: C64,
    pub b: C64,
    pub c: C64,
    pub z: f64,
    pub one_minus_z: f64,
}

impl HypParams {
    pub fn new(a: C64, b: C64, c: C64, z: f64) -> Self {
        Self {
            a,
            b,
            c,
            z,
            one_minus_z: 1.0 - z,
        }
    }

    /// Builds the parameters from w = 1 - z.
    pub fn from_complement(a: C64, b: C64, c: C64, w: f64) -> Self {
        Self {
            a,
            b,
            c,
            z: 1.0 - w,
            one_minus_z: w,
        }
    }

    pub fn real(a: f64, b: f64, c: f64, z: f64) -> Self {
        Self::new(C64::new(a, 0.0), C64::new(b, 0.0), C64::new(c, 0.0), z)
    }

    fn with_c(self, c: C64) -> Self {
        Self { c, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub value: C64,
    pub est_abs_error: f64,
    pub branch: Branch,
}

pub fn is_nonpositive_integer(z: C64) -> bool {
    z.im == 0.0 && z.re <= 0.0 && z.re == z.re.round()
}

fn nonpositive_integer_index(z: C64) -> Option<usize> {
    is_nonpositive_integer(z).then(|| (-z.re) as usize)
}

// Lanczos coefficients for g = 607/128, 15 terms (Godfrey).
const LANCZOS_G: f64 = 607.0 / 128.0;
const LANCZOS: [f64; 15] = [
    0.999_999_999_999_997_091_82,
    57.156_235_665_862_923_517,
    -59.597_960_355_475_491_248,
    14.136_097_974_741_747_174,
    -0.491_913_816_097_620_199_78,
    0.339_946_499_848_118_886_99e-4,
    0.465_236_289_270_485_756_65e-4,
    -0.983_744_753_048_795_646_77e-4,
    0.158_088_703_224_912_488_84e-3,
    -0.210_264_441_724_104_883_19e-3,
    0.217_439_618_115_212_643_20e-3,
    -0.164_318_106_536_763_890_22e-3,
    0.844_182_239_838_527_432_93e-4,
    -0.261_908_384_015_814_086_70e-4,
    0.368_991_826_595_316_227_04e-5,
];

fn ln_gamma_right(z: C64) -> C64 {
    let zm = z - 1.0;
    let mut acc = C64::new(LANCZOS[0], 0.0);
    for (k, &coef) in LANCZOS.iter().enumerate().skip(1) {
        acc += coef / (zm + k as f64);
    }
    let t = zm + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (zm + 0.5) * t.ln() - t + acc.ln()
}

/// log Gamma(z) on some branch; only exp() of the result is meaningful.
pub fn ln_gamma(z: C64) -> Result<C64, SpecFunError> {
    if is_nonpositive_integer(z) {
        return Err(SpecFunError::Pole(z));
    }
    if z.re >= 0.5 {
        Ok(ln_gamma_right(z))
    } else {
        let s = (PI * z).sin();
        Ok(C64::new(PI.ln(), 0.0) - s.ln() - ln_gamma_right(1.0 - z))
    }
}

pub fn complex_gamma(z: C64) -> Result<C64, SpecFunError> {
    if is_nonpositive_integer(z) {
        return Err(SpecFunError::Pole(z));
    }
    if z.re >= 0.5 {
        Ok(ln_gamma_right(z).exp())
    } else {
        Ok(PI / ((PI * z).sin() * ln_gamma_right(1.0 - z).exp()))
    }
}

/// 1/Gamma(z), which is entire: zero at the poles of Gamma.
pub fn rgamma(z: C64) -> C64 {
    if is_nonpositive_integer(z) {
        C64::new(0.0, 0.0)
    } else if z.re >= 0.5 {
        (-ln_gamma_right(z)).exp()
    } else {
        (PI * z).sin() * ln_gamma_right(1.0 - z).exp() / PI
    }
}

// B_{2k} / (2k) for k = 1..8
const DIGAMMA_ASYMPT: [f64; 8] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
    -3617.0 / 8160.0,
];

pub fn digamma(z: C64) -> Result<C64, SpecFunError> {
    if is_nonpositive_integer(z) {
        return Err(SpecFunError::Pole(z));
    }
    if z.re < 0.5 {
        let cot = (PI * z).cos() / (PI * z).sin();
        return Ok(digamma(1.0 - z)? - PI * cot);
    }
    let mut acc = C64::new(0.0, 0.0);
    let mut w = z;
    while w.norm() < 15.0 {
        acc -= 1.0 / w;
        w += 1.0;
    }
    let inv2 = 1.0 / (w * w);
    let mut pow = inv2;
    let mut series = C64::new(0.0, 0.0);
    for coef in DIGAMMA_ASYMPT {
        series += coef * pow;
        pow *= inv2;
    }
    Ok(acc + w.ln() - 0.5 / w - series)
}

/// Neumaier-compensated complex accumulator.
#[derive(Debug, Clone, Copy, Default)]
struct KahanSum {
    re: f64,
    im: f64,
    cre: f64,
    cim: f64,
    abs_sum: f64,
}

fn neumaier(sum: &mut f64, comp: &mut f64, x: f64) {
    let t = *sum + x;
    if sum.abs() >= x.abs() {
        *comp += (*sum - t) + x;
    } else {
        *comp += (x - t) + *sum;
    }
    *sum = t;
}

impl KahanSum {
    fn add(&mut self, x: C64) {
        neumaier(&mut self.re, &mut self.cre, x.re);
        neumaier(&mut self.im, &mut self.cim, x.im);
        self.abs_sum += x.norm();
    }

    fn value(&self) -> C64 {
        C64::new(self.re + self.cre, self.im + self.cim)
    }

    fn rounding(&self) -> f64 {
        4.0 * f64::EPSILON * self.abs_sum
    }
}

fn validate(p: &HypParams) -> Result<(), SpecFunError> {
    if !(p.z >= 0.0 && p.z < 1.0) || !(p.one_minus_z > 0.0) {
        return Err(SpecFunError::Domain(p.z));
    }
    if is_nonpositive_integer(p.c) {
        return Err(SpecFunError::InvalidC(p.c));
    }
    Ok(())
}

/// Plain power series, any z in [0, 1) but only practical well below 1.
pub fn hyp2f1_direct(p: &HypParams) -> Result<EvalResult, SpecFunError> {
    validate(p)?;
    let (a, b, c, z) = (p.a, p.b, p.c, p.z);
    let mut sum = KahanSum::default();
    let mut term = C64::new(1.0, 0.0);
    let terminating = nonpositive_integer_index(a)
        .into_iter()
        .chain(nonpositive_integer_index(b))
        .min();
    for n in 0..TERM_BUDGET {
        if let Some(deg) = terminating {
            if n > deg {
                return Ok(EvalResult {
                    value: sum.value(),
                    est_abs_error: sum.rounding(),
                    branch: Branch::DirectSeries,
                });
            }
        } else if n > 0 && (n as f64) + c.re > 0.0 {
            let nf = n as f64;
            let q = z * (1.0 + (a - c).norm() / (nf + c.re)) * (1.0 + (b - 1.0).norm() / (nf + 1.0));
            if q < 1.0 {
                let tail = term.norm() / (1.0 - q);
                if tail <= SERIES_RTOL * sum.value().norm() || tail == 0.0 {
                    return Ok(EvalResult {
                        value: sum.value(),
                        est_abs_error: tail + sum.rounding(),
                        branch: Branch::DirectSeries,
                    });
                }
            }
        }
        sum.add(term);
        let nf = n as f64;
        term *= (a + nf) * (b + nf) / ((c + nf) * (nf + 1.0)) * z;
    }
    Err(SpecFunError::NonConvergence {
        branch: Branch::DirectSeries,
        terms: TERM_BUDGET,
        last: term.norm(),
    })
}

/// Connection formula about z = 1, valid when c - a - b is not an integer.
fn connection(p: &HypParams) -> Result<EvalResult, SpecFunError> {
    let (a, b, c) = (p.a, p.b, p.c);
    let w = p.one_minus_z;
    let s = c - a - b;
    let g_c = ln_gamma(c)?;
    let first = if is_nonpositive_integer(c - a) || is_nonpositive_integer(c - b) {
        C64::new(0.0, 0.0)
    } else {
        (g_c + ln_gamma(s)? - ln_gamma(c - a)? - ln_gamma(c - b)?).exp()
    };
    let second = if is_nonpositive_integer(a) || is_nonpositive_integer(b) {
        C64::new(0.0, 0.0)
    } else {
        (g_c + ln_gamma(-s)? - ln_gamma(a)? - ln_gamma(b)? + s * w.ln()).exp()
    };
    let mut value = C64::new(0.0, 0.0);
    let mut err = 0.0;
    if first != C64::new(0.0, 0.0) {
        let f1 = hyp2f1_direct(&HypParams::from_complement(a, b, 1.0 - s, 1.0 - w))?;
        value += first * f1.value;
        err += first.norm() * (f1.est_abs_error + 4.0 * f64::EPSILON * f1.value.norm());
    }
    if second != C64::new(0.0, 0.0) {
        let f2 = hyp2f1_direct(&HypParams::from_complement(c - a, c - b, s + 1.0, 1.0 - w))?;
        value += second * f2.value;
        err += second.norm() * (f2.est_abs_error + 4.0 * f64::EPSILON * f2.value.norm());
    }
    Ok(EvalResult {
        value,
        est_abs_error: err,
        branch: Branch::Connection,
    })
}

/// Re-expansion about z = 1. Degenerate exponents c - a - b are routed to
/// the logarithmic series (exactly zero) or to a Richardson-combined
/// two-sided shift of c (otherwise).
pub fn hyp2f1_transformed(p: &HypParams) -> Result<EvalResult, SpecFunError> {
    validate(p)?;
    if p.z == 0.0 {
        return Ok(EvalResult {
            value: C64::new(1.0, 0.0),
            est_abs_error: 0.0,
            branch: Branch::Connection,
        });
    }
    let s = p.c - p.a - p.b;
    let k = s.re.round();
    if (s - k).norm() >= NEAR_INTEGER_TOL {
        return connection(p);
    }
    if s == C64::new(0.0, 0.0) && p.one_minus_z < 0.5 {
        return log_case(p.a, p.b, p.one_minus_z);
    }
    shifted_connection(p, DEGENERATE_SHIFT)
}

fn shifted_connection(p: &HypParams, d: f64) -> Result<EvalResult, SpecFunError> {
    let avg = |h: f64| -> Result<(C64, f64), SpecFunError> {
        let up = connection(&p.with_c(p.c + h))?;
        let dn = connection(&p.with_c(p.c - h))?;
        Ok((0.5 * (up.value + dn.value), 0.5 * (up.est_abs_error + dn.est_abs_error)))
    };
    let (v1, e1) = avg(d)?;
    let (v2, e2) = avg(2.0 * d)?;
    let value = (4.0 * v1 - v2) / 3.0;
    // the discarded O(d^4) term is roughly d^2 times the O(d^2) one
    let est = (4.0 * e1 + e2) / 3.0 + (v1 - v2).norm() * d * d;
    Ok(EvalResult {
        value,
        est_abs_error: est,
        branch: Branch::Connection,
    })
}

fn log_case(a: C64, b: C64, w: f64) -> Result<EvalResult, SpecFunError> {
    let pre = (ln_gamma(a + b)? - ln_gamma(a)? - ln_gamma(b)?).exp();
    let ln_w = w.ln();
    let mut psi_n1 = digamma(C64::new(1.0, 0.0))?;
    let mut psi_a = digamma(a)?;
    let mut psi_b = digamma(b)?;
    let mut coef = C64::new(1.0, 0.0);
    let mut sum = KahanSum::default();
    for n in 0..TERM_BUDGET {
        let nf = n as f64;
        let bracket = 2.0 * psi_n1 - psi_a - psi_b - ln_w;
        let term = coef * bracket;
        if n > 0 && nf + a.re > 0.0 && nf + b.re > 0.0 {
            let q = w * (1.0 + (a - 1.0).norm() / (nf + 1.0)) * (1.0 + (b - 1.0).norm() / (nf + 1.0));
            if q < 1.0 {
                let delta = ((1.0 - a).norm() / (nf + a.re) + (1.0 - b).norm() / (nf + b.re)) / (nf + 1.0);
                let tail = coef.norm() * (bracket.norm() / (1.0 - q) + delta * q / ((1.0 - q) * (1.0 - q)));
                if tail <= SERIES_RTOL * sum.value().norm() || tail == 0.0 {
                    return Ok(EvalResult {
                        value: pre * sum.value(),
                        est_abs_error: pre.norm() * (tail + sum.rounding()),
                        branch: Branch::LogCase,
                    });
                }
            }
        }
        sum.add(term);
        coef *= (a + nf) * (b + nf) / ((nf + 1.0) * (nf + 1.0)) * w;
        psi_n1 += 1.0 / (nf + 1.0);
        psi_a += 1.0 / (a + nf);
        psi_b += 1.0 / (b + nf);
    }
    Err(SpecFunError::NonConvergence {
        branch: Branch::LogCase,
        terms: TERM_BUDGET,
        last: coef.norm(),
    })
}

/// F(a, b; a + b; z) through the logarithmic expansion about z = 1.
pub fn hyp2f1_log_case(a: C64, b: C64, z: f64) -> Result<C64, SpecFunError> {
    hyp2f1_log_case_eval(a, b, 1.0 - z).map(|r| r.value)
}

/// As [`hyp2f1_log_case`] but taking w = 1 - z and returning the error estimate.
pub fn hyp2f1_log_case_eval(a: C64, b: C64, w: f64) -> Result<EvalResult, SpecFunError> {
    if !(w > 0.0 && w < 0.5) {
        return Err(SpecFunError::Region(1.0 - w));
    }
    if is_nonpositive_integer(a) || is_nonpositive_integer(b) {
        return hyp2f1_direct(&HypParams::from_complement(a, b, a + b, w));
    }
    log_case(a, b, w)
}

pub fn hyp2f1(p: &HypParams) -> Result<EvalResult, SpecFunError> {
    validate(p)?;
    if p.z == 0.0 {
        return Ok(EvalResult {
            value: C64::new(1.0, 0.0),
            est_abs_error: 0.0,
            branch: Branch::DirectSeries,
        });
    }
    if is_nonpositive_integer(p.a) || is_nonpositive_integer(p.b) {
        return hyp2f1_direct(p);
    }
    // Euler transform turns these into polynomials times (1-z)^(c-a-b)
    if is_nonpositive_integer(p.c - p.a) || is_nonpositive_integer(p.c - p.b) {
        let q = HypParams {
            a: p.c - p.a,
            b: p.c - p.b,
            ..*p
        };
        let poly = hyp2f1_direct(&q)?;
        let factor = ((p.c - p.a - p.b) * p.one_minus_z.ln()).exp();
        return Ok(EvalResult {
            value: factor * poly.value,
            est_abs_error: factor.norm() * poly.est_abs_error,
            branch: Branch::DirectSeries,
        });
    }
    if p.z <= BRANCH_SWITCH {
        hyp2f1_direct(p)
    } else {
        hyp2f1_transformed(p)
    }
}
