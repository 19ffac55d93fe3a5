//! Gamma and upper incomplete gamma functions.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GammaError {
    #[error("shape parameter must be positive, got {0}")]
    NonPositiveShape(f64),
    #[error("lower limit must be non-negative, got {0}")]
    NegativeArgument(f64),
}

const MAX_ITER: usize = 500;
const EPS: f64 = 1e-15;
const TINY: f64 = 1e-300;

// Lanczos approximation, g = 7, n = 9.
const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Complete gamma function Γ(x) for x > 0.
pub fn gamma(x: f64) -> f64 {
    ln_gamma(x).exp()
}

/// Regularized upper incomplete gamma `Q(a, z) = Γ(a, z) / Γ(a)`.
pub fn regularized_upper(a: f64, z: f64) -> Result<f64, GammaError> {
    check(a, z)?;
    if z == 0.0 {
        return Ok(1.0);
    }
    if z.is_infinite() {
        return Ok(0.0);
    }
    let log_prefactor = -z + a * z.ln() - ln_gamma(a);
    if z < a + 1.0 {
        match lower_series(a, z) {
            Some(s) => Ok((1.0 - s * log_prefactor.exp()).clamp(0.0, 1.0)),
            None => Ok(quadrature_upper(a, z) / gamma(a)),
        }
    } else {
        match upper_continued_fraction(a, z) {
            Some(cf) => Ok((cf * log_prefactor.exp()).clamp(0.0, 1.0)),
            None => Ok(quadrature_upper(a, z) / gamma(a)),
        }
    }
}

/// Upper incomplete gamma `Γ(a, z) = ∫_z^∞ e^{−x} x^{a−1} dx`.
pub fn upper_incomplete_gamma(a: f64, z: f64) -> Result<f64, GammaError> {
    Ok(regularized_upper(a, z)? * gamma(a))
}

fn check(a: f64, z: f64) -> Result<(), GammaError> {
    if !(a > 0.0) {
        return Err(GammaError::NonPositiveShape(a));
    }
    if !(z >= 0.0) {
        return Err(GammaError::NegativeArgument(z));
    }
    Ok(())
}

/// `Σ z^n / (a (a+1) … (a+n))`, so that `P(a, z) = prefactor · sum`.
fn lower_series(a: f64, z: f64) -> Option<f64> {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= z / ap;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            return Some(sum);
        }
    }
    None
}

/// Modified Lentz evaluation of the continued fraction for `Q(a, z)`
/// without its prefactor.
fn upper_continued_fraction(a: f64, z: f64) -> Option<f64> {
    let mut b = z + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..=MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            return Some(h);
        }
    }
    None
}

/// Adaptive Simpson on `∫_z^∞ e^{−x} x^{a−1} dx`, used only when the series
/// or continued fraction fails to converge.
fn quadrature_upper(a: f64, z: f64) -> f64 {
    // x = z + u/(1−u) maps [0,1) onto [z,∞)
    let f = |u: f64| {
        if u >= 1.0 {
            return 0.0;
        }
        let w = 1.0 - u;
        let x = z + u / w;
        if x <= 0.0 {
            return 0.0;
        }
        (-x + (a - 1.0) * x.ln()).exp() / (w * w)
    };
    // split off the integrable singularity at x = 0 for a < 1
    let lo = if z == 0.0 { 1e-12 } else { 0.0 };
    adaptive_simpson(&f, lo, 1.0, 1e-13, 60)
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let c = 0.5 * (a + b);
    let (fa, fb, fc) = (f(a), f(b), f(c));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
    simpson_step(f, a, b, fa, fb, fc, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    fc: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let c = 0.5 * (a + b);
    let d = 0.5 * (a + c);
    let e = 0.5 * (c + b);
    let (fd, fe) = (f(d), f(e));
    let left = (c - a) / 6.0 * (fa + 4.0 * fd + fc);
    let right = (b - c) / 6.0 * (fc + 4.0 * fe + fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        return left + right + (left + right - whole) / 15.0;
    }
    simpson_step(f, a, c, fa, fc, fd, left, tol / 2.0, depth - 1)
        + simpson_step(f, c, b, fc, fb, fe, right, tol / 2.0, depth - 1)
}
