//! Fiberwise Fourier analysis of boundary data: Hilbert transform and parity split.

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::xray::{AngleGrid, FanBeamData};

fn check_full(d: &FanBeamData) -> Result<()> {
    if d.grid != AngleGrid::FullCircle {
        return Err(Error::NotFullCircle);
    }
    if !d.n_angles.is_power_of_two() || d.n_angles < 2 {
        return Err(Error::GridMismatch(format!(
            "fiber size {} is not a power of two",
            d.n_angles
        )));
    }
    Ok(())
}

/// Signed frequency of FFT bin `j` on `n` points; the Nyquist bin maps to n/2.
#[inline]
fn freq(j: usize, n: usize) -> i64 {
    if j <= n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// Fourier coefficients ω_k per boundary sample, ordered as FFT bins.
pub fn fiber_spectrum(d: &FanBeamData) -> Result<Vec<Vec<Complex64>>> {
    check_full(d)?;
    let n = d.n_angles;
    let fft = FftPlanner::new().plan_fft_forward(n);
    Ok(d.values
        .chunks(n)
        .map(|row| {
            let mut buf: Vec<Complex64> = row.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            fft.process(&mut buf);
            buf.iter_mut().for_each(|c| *c /= n as f64);
            buf
        })
        .collect())
}

/// Multiplier −i·sign(k) on every fiber; the Nyquist mode is dropped.
pub fn hilbert_fiber(d: &FanBeamData) -> Result<FanBeamData> {
    check_full(d)?;
    let n = d.n_angles;
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut out = d.clone();
    let resid = out
        .values
        .par_chunks_mut(n)
        .map_init(
            || vec![Complex64::new(0.0, 0.0); n],
            |buf, row| {
                for (b, &v) in buf.iter_mut().zip(row.iter()) {
                    *b = Complex64::new(v, 0.0);
                }
                fwd.process(buf);
                for (j, b) in buf.iter_mut().enumerate() {
                    let k = freq(j, n);
                    *b = if k == 0 || 2 * k.unsigned_abs() as usize == n {
                        Complex64::new(0.0, 0.0)
                    } else {
                        *b * Complex64::new(0.0, -(k.signum() as f64))
                    };
                }
                inv.process(buf);
                let mut worst: f64 = 0.0;
                let scale = row.iter().fold(1.0f64, |a, v| a.max(v.abs()));
                for (r, b) in row.iter_mut().zip(buf.iter()) {
                    *r = b.re / n as f64;
                    worst = worst.max((b.im / n as f64).abs() / scale);
                }
                worst
            },
        )
        .reduce(|| 0.0, f64::max);
    debug_assert!(resid < 1e-10, "imaginary residue {resid}");
    Ok(out)
}

/// (odd, even) parts under θ ↦ θ + π.
pub fn odd_even_split(d: &FanBeamData) -> Result<(FanBeamData, FanBeamData)> {
    if d.grid != AngleGrid::FullCircle {
        return Err(Error::NotFullCircle);
    }
    let n = d.n_angles;
    if n % 2 != 0 {
        return Err(Error::GridMismatch("odd fiber size".into()));
    }
    let mut odd = d.clone();
    let mut even = d.clone();
    for (r, row) in d.values.chunks(n).enumerate() {
        for k in 0..n {
            let a = row[k];
            let b = row[(k + n / 2) % n];
            odd.values[r * n + k] = (a - b) / 2.0;
            even.values[r * n + k] = (a + b) / 2.0;
        }
    }
    Ok((odd, even))
}

/// Removes the fiber mean from every row.
pub fn remove_mean(d: &FanBeamData) -> FanBeamData {
    let n = d.n_angles;
    let mut out = d.clone();
    for row in out.values.chunks_mut(n) {
        let m = row.iter().sum::<f64>() / n as f64;
        row.iter_mut().for_each(|v| *v -= m);
    }
    out
}

/// Band-limits every fiber by dropping the Nyquist mode.
pub fn drop_nyquist(d: &FanBeamData) -> Result<FanBeamData> {
    check_full(d)?;
    let n = d.n_angles;
    let mut out = d.clone();
    for row in out.values.chunks_mut(n) {
        let alt: f64 = row
            .iter()
            .enumerate()
            .map(|(k, v)| if k % 2 == 0 { *v } else { -*v })
            .sum::<f64>()
            / n as f64;
        for (k, v) in row.iter_mut().enumerate() {
            *v -= if k % 2 == 0 { alt } else { -alt };
        }
    }
    Ok(out)
}
