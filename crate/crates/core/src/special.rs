//! Complex Gamma and digamma.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 607.0 / 128.0;
const LANCZOS: [f64; 15] = [
    0.999_999_999_999_997_1,
    57.156_235_665_862_92,
    -59.597_960_355_475_49,
    14.136_097_974_741_746,
    -0.491_913_816_097_620_2,
    3.399_464_998_481_189e-5,
    4.652_362_892_704_858e-5,
    -9.837_447_530_487_956e-5,
    1.580_887_032_249_125e-4,
    -2.102_644_417_241_048_8e-4,
    2.174_396_181_152_126_5e-4,
    -1.643_181_065_367_639e-4,
    8.441_822_398_385_275e-5,
    -2.619_083_840_158_141e-5,
    3.689_918_265_953_162_4e-6,
];

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

fn check_pole(z: Complex64) -> Result<()> {
    if z.im == 0.0 && z.re <= 0.0 && z.re == z.re.round() {
        return Err(Error::Pole(z));
    }
    Ok(())
}

/// log Γ on Re z ≥ 1/2 (principal branch of the Lanczos sum, not the analytic continuation).
fn ln_gamma_right(z: Complex64) -> Complex64 {
    let z = z - 1.0;
    let mut x = Complex64::new(LANCZOS[0], 0.0);
    for (k, &c) in LANCZOS.iter().enumerate().skip(1) {
        x += c / (z + k as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (z + 0.5) * t.ln() - t + x.ln()
}

pub fn gamma(z: Complex64) -> Result<Complex64> {
    check_pole(z)?;
    if z.re < 0.5 {
        let s = (PI * z).sin();
        Ok(PI / (s * ln_gamma_right(1.0 - z).exp()))
    } else {
        Ok(ln_gamma_right(z).exp())
    }
}

pub fn gamma_real(x: f64) -> Result<f64> {
    Ok(gamma(Complex64::new(x, 0.0))?.re)
}

/// Log-derivative of the Lanczos representation, with reflection for Re z < 1/2.
pub fn digamma(z: Complex64) -> Result<Complex64> {
    check_pole(z)?;
    if z.re < 0.5 {
        let cot = (PI * z).cos() / (PI * z).sin();
        return Ok(digamma(1.0 - z)? - PI * cot);
    }
    let w = z - 1.0;
    let mut x = Complex64::new(LANCZOS[0], 0.0);
    let mut dx = Complex64::new(0.0, 0.0);
    for (k, &c) in LANCZOS.iter().enumerate().skip(1) {
        let d = w + k as f64;
        x += c / d;
        dx -= c / (d * d);
    }
    let t = w + LANCZOS_G + 0.5;
    Ok(t.ln() + (w + 0.5) / t - 1.0 + dx / x)
}

/// Ψ(z) = −γ + Σ_{n≥0} (1/(n+1) − 1/(n+z)), summed to `n_terms` with an
/// Euler–Maclaurin remainder.
pub fn digamma_series(z: Complex64, n_terms: usize) -> Result<Complex64> {
    check_pole(z)?;
    let mut s = Complex64::new(-EULER_GAMMA, 0.0);
    for n in 0..n_terms {
        let n = n as f64;
        s += 1.0 / (n + 1.0) - 1.0 / (n + z);
    }
    // Σ_{n≥N} f(n) with f(n) = 1/(n+1) − 1/(n+z): ∫_N^∞ f + f(N)/2 − f'(N)/12 + f'''(N)/720
    let n = n_terms as f64;
    let a = Complex64::new(n + 1.0, 0.0);
    let b = n + z;
    let integral = (b / a).ln();
    let f = 1.0 / a - 1.0 / b;
    let f1 = -1.0 / (a * a) + 1.0 / (b * b);
    let f3 = -6.0 / (a * a * a * a) + 6.0 / (b * b * b * b);
    let f5 = -120.0 / a.powi(6) + 120.0 / b.powi(6);
    Ok(s + integral + f / 2.0 - f1 / 12.0 + f3 / 720.0 - f5 / 30240.0)
}
