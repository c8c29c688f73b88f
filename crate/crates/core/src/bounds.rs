//! Norm estimates: the spectral function H_λ, the operator norm of Π₀^λ on
//! convex co-compact hyperbolic quotients, the W bound, and truncated group
//! sums of the Π₀ kernel.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::hypgeo::{cosh_distance, C64};
use crate::special::{gamma, gamma_real};
use crate::surface::{ModelGeometry, SurfaceModel};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralParams {
    pub lambda: f64,
    pub delta: f64,
    pub kappa0: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl SpectralParams {
    /// Parameters with λ = 1 − λ₁λ₂.
    pub fn from_comparison(delta: f64, lambda1: f64, lambda2: f64, kappa0: f64) -> Result<Self> {
        let p = SpectralParams {
            lambda: 1.0 - lambda1 * lambda2,
            delta,
            kappa0,
            lambda1,
            lambda2,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.lambda1 * self.lambda2;
        if !(self.lambda1 > 0.0 && self.lambda1 <= 1.0 && self.lambda2 > 0.0 && self.lambda2 <= 1.0) {
            return Err(invalid("lambda1/lambda2", "must lie in (0, 1]"));
        }
        if !(l > self.delta.max(0.5)) {
            return Err(invalid(
                "lambda1*lambda2",
                format!("{l} must exceed max(delta, 1/2) = {}", self.delta.max(0.5)),
            ));
        }
        if (1.0 - self.lambda - l).abs() > 1e-12 {
            return Err(invalid("lambda", "must equal 1 - lambda1*lambda2"));
        }
        if !(self.kappa0 > 0.0) {
            return Err(invalid("kappa0", "must be positive"));
        }
        Ok(())
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..0.5).contains(&lambda) {
        return Err(invalid("lambda", format!("{lambda} outside [0, 1/2)")));
    }
    Ok(())
}

/// H_λ(z), with the square root taken on the principal branch.
pub fn h_lambda(z: Complex64, lambda: f64) -> Result<Complex64> {
    check_lambda(lambda)?;
    let w = 0.5 - lambda;
    if z.re <= z.im * z.im - w * w {
        return Err(invalid("z", format!("{z} outside the holomorphy region")));
    }
    let hr = z.sqrt() * Complex64::new(0.0, 0.5);
    let mut num = Complex64::new(1.0, 0.0);
    let mut den = Complex64::new(1.0, 0.0);
    for s in [-1.0, 1.0] {
        num *= gamma((1.0 - 2.0 * lambda) / 4.0 + s * hr)?;
        num *= gamma((1.0 + 2.0 * lambda) / 4.0 + s * hr)?;
        den *= gamma(0.25 + s * hr)?;
        den *= gamma(0.75 + s * hr)?;
    }
    Ok(4.0 * num / den)
}

/// F_λ(r) = Γ(1/4 − ir/2 − λ/2) Γ(1/4 − ir/2 + λ/2) / Γ(1/2 − ir).
pub fn f_lambda(r: Complex64, lambda: f64) -> Result<Complex64> {
    let ir2 = Complex64::new(0.0, 0.5) * r;
    Ok(gamma(0.25 - ir2 - lambda / 2.0)? * gamma(0.25 - ir2 + lambda / 2.0)?
        / gamma(0.5 - 2.0 * ir2)?)
}

/// θ(t) = H_λ(4t²).
pub fn theta_fn(t: f64, lambda: f64) -> Result<f64> {
    Ok(h_lambda(Complex64::new(4.0 * t * t, 0.0), lambda)?.re)
}

/// ρ(t), the Gamma quotient whose value at t = i·(spectral shift) gives the second branch.
pub fn rho_fn(t: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    let a = (1.0 - 2.0 * lambda) / 4.0;
    let b = (1.0 + 2.0 * lambda) / 4.0;
    if !(t >= 0.0 && t < a) {
        return Err(invalid("t", format!("{t} outside [0, {a})")));
    }
    let num = gamma_real(a - t)? * gamma_real(a + t)? * gamma_real(b + t)? * gamma_real(b - t)?;
    let den = gamma_real(0.75 - t)? * gamma_real(0.25 - t)? * gamma_real(0.75 + t)? * gamma_real(0.25 + t)?;
    Ok(num / den)
}

/// ‖Π₀^λ‖ for δ_Γ ≤ 1/2.
pub fn pi0_norm_low(lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    let q = gamma_real((1.0 - 2.0 * lambda) / 4.0)? * gamma_real((1.0 + 2.0 * lambda) / 4.0)?
        / (gamma_real(0.25)? * gamma_real(0.75)?);
    Ok(4.0 * q * q)
}

/// ‖Π₀^λ‖ for δ_Γ ≥ 1/2: H_λ at the spectral point r = i(δ − 1/2).
pub fn pi0_norm_high(delta: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    if !(delta >= 0.5 && delta < 1.0 - lambda) {
        return Err(invalid(
            "delta",
            format!("{delta} outside [1/2, 1 - lambda) for lambda = {lambda}"),
        ));
    }
    let num = gamma_real((delta - lambda) / 2.0)?
        * gamma_real((delta + lambda) / 2.0)?
        * gamma_real((1.0 - lambda - delta) / 2.0)?
        * gamma_real((1.0 + lambda - delta) / 2.0)?;
    let den = gamma_real((1.0 - delta) / 2.0)?
        * gamma_real(delta / 2.0)?
        * gamma_real(1.0 - delta / 2.0)?
        * gamma_real((1.0 + delta) / 2.0)?;
    Ok(4.0 * num / den)
}

pub fn pi0_norm(delta: f64, lambda: f64) -> Result<f64> {
    if delta <= 0.5 {
        pi0_norm_low(lambda)
    } else {
        pi0_norm_high(delta, lambda)
    }
}

/// The unit-curvature norm rescaled by λ₂/(√κ₀ λ₁⁴) for a metric comparable to g₀.
pub fn pi0_norm_comparison(p: &SpectralParams) -> Result<f64> {
    p.validate()?;
    Ok(p.lambda2 / (p.kappa0.sqrt() * p.lambda1.powi(4)) * pi0_norm(p.delta, p.lambda)?)
}

/// A(δ, λ₁, λ₂) = 3λ₁⁴ / (λ₂ C(δ, λ)) with 1 − λ = λ₁λ₂.
pub fn theorem2_constant(delta: f64, lambda1: f64, lambda2: f64) -> Result<f64> {
    let p = SpectralParams::from_comparison(delta, lambda1, lambda2, 1.0)?;
    Ok(3.0 * lambda1.powi(4) / (lambda2 * pi0_norm(delta, p.lambda)?))
}

/// ‖W‖ ≤ |dκ|∞ / (3κ₀) · ‖Π₀‖.
pub fn w_norm_bound(dkappa_sup: f64, kappa0: f64, pi0: f64) -> f64 {
    dkappa_sup / (3.0 * kappa0) * pi0
}

/// The warped-cylinder chain: λ₁ = 1/cosh ε, λ₂ = 1, κ₀ = 1, δ = 0, |dκ| ≤ 2ε(1+ε).
pub fn cylinder_w_bound(eps: f64) -> Result<f64> {
    if eps == 0.0 {
        return Ok(0.0);
    }
    let p = SpectralParams::from_comparison(0.0, 1.0 / eps.cosh(), 1.0, 1.0)?;
    Ok(w_norm_bound(
        2.0 * eps * (1.0 + eps),
        1.0,
        pi0_norm_comparison(&p)?,
    ))
}

/// (8/3) ε (1+ε) cosh⁴ε · (Γ(½(1/cosh ε − ½)) Γ(¾ − 1/(2 cosh ε)) / (Γ(¼)Γ(¾)))².
pub fn cylinder_w_bound_closed(eps: f64) -> Result<f64> {
    let ch = eps.cosh();
    let q = gamma_real(0.5 * (1.0 / ch - 0.5))? * gamma_real(0.75 - 0.5 / ch)?
        / (gamma_real(0.25)? * gamma_real(0.75)?);
    Ok(8.0 / 3.0 * eps * (1.0 + eps) * ch.powi(4) * q * q)
}

/// e^{3s/2} ∫_s^∞ e^{−3u/2}/√sinh u du, with u = s + w².
fn scaled_inner(s: f64) -> f64 {
    let f = |w: f64| {
        let u = s + w * w;
        if u < 1e-300 {
            return 2.0;
        }
        2.0 * w * (-1.5 * w * w).exp() / u.sinh().sqrt()
    };
    quadrature::integrate(f, 0.0, 7.0, 1e-14).integral
}

/// Upper bound for ∫_S^∞ e^{3s} (∫_s^∞ e^{−3u/2}/√sinh u du)² ds, from sinh u ≥ (1 − e^{−2S}) e^u / 2.
pub fn universal_constant_tail_bound(s_cut: f64) -> f64 {
    (-s_cut).exp() / (2.0 * (1.0 - (-2.0 * s_cut).exp()))
}

/// ∫_0^∞ e^{3s} (∫_s^∞ e^{−3u/2}/√sinh u du)² ds.
pub fn universal_constant() -> f64 {
    let outer = |s: f64| {
        let v = scaled_inner(s);
        v * v
    };
    let mut total = 0.0;
    let knots = [0.0, 0.5, 2.0, 6.0, 15.0, 40.0];
    for w in knots.windows(2) {
        total += quadrature::integrate(outer, w[0], w[1], 1e-13).integral;
    }
    total
}

/// ∫_s^∞ e^{−3u/2}/√sinh u du.
pub fn inner_integral(s: f64) -> f64 {
    (-1.5 * s).exp() * scaled_inner(s)
}

#[derive(Clone, Debug)]
pub struct SchurBound {
    /// Sup over sample points of the truncated kernel mass, for word lengths 0..=L.
    pub by_length: Vec<f64>,
    pub argmax: Vec<C64>,
}

impl SchurBound {
    pub fn value(&self) -> f64 {
        *self.by_length.last().expect("nonempty")
    }

    pub fn increments(&self) -> Vec<f64> {
        self.by_length.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// sup_{x̃} Σ_{|γ| ≤ L} ∫_F 2√κ₀ cosh(λd)/sinh(d) dvol, with the sum over
/// reduced words and the integral by the midpoint rule on the model grid.
/// The cell containing x̃ is integrated exactly in geodesic polar coordinates.
pub fn schur_bound(model: &SurfaceModel, lambda: f64, max_len: usize, sup_stride: usize) -> Result<SchurBound> {
    check_lambda(lambda)?;
    let (group, kappa0) = match &model.geometry {
        ModelGeometry::Disk(d) => match (&d.group, model.kappa0()) {
            (Some(g), Some(k)) => (g, k),
            _ => return Err(invalid("model", "needs a constant-curvature Schottky model")),
        },
        _ => return Err(invalid("model", "needs a constant-curvature Schottky model")),
    };
    let grid = model.grid_spec();
    let cell = grid.cell;
    let mut nodes: Vec<(C64, f64)> = Vec::new();
    for j in 0..grid.n {
        for i in 0..grid.n {
            if model.mask[j * grid.n + i] {
                let z = grid.center(i, j);
                let w = (2.0 / (1.0 - z.norm_sqr())).powi(2) / kappa0 * cell * cell;
                nodes.push((z, w));
            }
        }
    }
    let words = group.reduced_words(max_len);
    let maps: Vec<(usize, crate::hypgeo::Mobius)> = words
        .iter()
        .map(|w| (w.len(), group.word_transform(w)))
        .collect();
    let sk = kappa0.sqrt();
    let kernel = |ch: f64| {
        // d in unit-curvature units; K = 2√κ₀ cosh(λ d)/sinh(d)
        let sh = (ch * ch - 1.0).sqrt();
        if lambda == 0.0 {
            2.0 * sk / sh
        } else {
            2.0 * sk * (lambda * ch.acosh()).cosh() / sh
        }
    };
    // Exact integral over a square cell of half-width h·e^φ (geodesic polar, Euclidean approximation of the small cell).
    let ln1s2 = (1.0 + 2f64.sqrt()).ln();
    let samples: Vec<usize> = (0..nodes.len()).step_by(sup_stride.max(1)).collect();
    let per_sample: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|&si| {
            let (x, _) = nodes[si];
            let mut by_len = vec![0.0; max_len + 1];
            for (len, m) in &maps {
                let gx = m.eval(x);
                let mut acc = 0.0;
                for (k, &(y, w)) in nodes.iter().enumerate() {
                    if *len == 0 && k == si {
                        let e_phi = 2.0 / (1.0 - y.norm_sqr()) / sk;
                        // ∫ over the cell of 2√κ₀/(√κ₀ ρ) ρ dρ dα = 2 · (perimeter-weighted radius) = 2 · 8 ln(1+√2) · half-width
                        acc += 2.0 * 8.0 * ln1s2 * 0.5 * cell * e_phi;
                        continue;
                    }
                    acc += kernel(cosh_distance(gx, y)) * w;
                }
                by_len[*len] += acc;
            }
            by_len
        })
        .collect();
    let mut by_length = vec![0.0; max_len + 1];
    let mut argmax = vec![C64::new(0.0, 0.0); max_len + 1];
    for (k, v) in per_sample.iter().enumerate() {
        let mut cum = 0.0;
        for l in 0..=max_len {
            cum += v[l];
            if cum > by_length[l] {
                by_length[l] = cum;
                argmax[l] = nodes[samples[k]].0;
            }
        }
    }
    Ok(SchurBound { by_length, argmax })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    const H00: f64 = 35.015_033_843_623_63;

    #[test]
    fn h_lambda_at_zero() {
        let g = gamma_real(0.25).unwrap() / gamma_real(0.75).unwrap();
        let h0 = h_lambda(Complex64::new(0.0, 0.0), 0.0).unwrap();
        assert!((h0.re - 4.0 * g * g).abs() < 1e-10);
        assert!((h0.re - 35.02).abs() < 5e-3);
        for lam in [0.0, 0.1, 0.2, 0.3, 0.45] {
            let h = h_lambda(Complex64::new(0.0, 0.0), lam).unwrap();
            let b = pi0_norm_low(lam).unwrap();
            assert!((h.re - b).abs() < 1e-10 * b, "lambda {lam}");
            assert!(h.im.abs() < 1e-12);
        }
    }

    #[test]
    fn frozen_value() {
        // 4 (Γ(1/4)/Γ(3/4))², Γ(1/4) = 3.625609908221908, Γ(3/4) = 1.225416702465178
        let g = 3.625_609_908_221_908 / 1.225_416_702_465_178;
        assert!((4.0 * g * g - pi0_norm_low(0.0).unwrap()).abs() < 1e-11);
        assert!((pi0_norm_low(0.0).unwrap() - H00).abs() < 1e-10);
    }

    #[test]
    fn branches_meet_at_half() {
        for lam in [0.0, 0.1, 0.2, 0.3, 0.45] {
            let a = pi0_norm_low(lam).unwrap();
            let b = pi0_norm_high(0.5, lam).unwrap();
            assert!((a - b).abs() < 1e-9 * a, "lambda {lam}: {a} vs {b}");
        }
    }

    #[test]
    fn second_branch_is_h_at_imaginary_point() {
        for (d, lam) in [(0.6, 0.1), (0.75, 0.0), (0.55, 0.3)] {
            let r = Complex64::new(0.0, d - 0.5);
            let h = h_lambda(r * r, lam).unwrap();
            assert!((h.re - pi0_norm_high(d, lam).unwrap()).abs() < 1e-9 * h.re);
        }
    }

    #[test]
    fn theorem2_constant_values() {
        let a = theorem2_constant(0.3, 1.0, 1.0).unwrap();
        assert!((a - 3.0 / pi0_norm_low(0.0).unwrap()).abs() < 1e-15);
        assert!((a - 0.0857).abs() < 1e-4);
        let l1 = 0.9;
        let l2 = 0.95;
        assert_eq!(
            theorem2_constant(0.1, l1, l2).unwrap(),
            theorem2_constant(0.3, l1, l2).unwrap()
        );
        let l = l1 * l2;
        let near = theorem2_constant(l - 1e-9, l1, l2).unwrap();
        let far = theorem2_constant(0.6, l1, l2).unwrap();
        assert!(near < 1e-6 * far);
        assert!(theorem2_constant(0.9, l1, l2).is_err());
        assert!(theorem2_constant(0.1, 0.6, 0.7).is_err());
    }

    #[test]
    fn cylinder_chain() {
        for eps in [0.01, 0.1, 0.4, 1.0] {
            let a = cylinder_w_bound(eps).unwrap();
            let b = cylinder_w_bound_closed(eps).unwrap();
            assert!((a - b).abs() < 1e-12 * b);
        }
        assert_eq!(cylinder_w_bound(0.0).unwrap(), 0.0);
        assert!(cylinder_w_bound(1e-6).unwrap() < 1e-4);
        assert_eq!(w_norm_bound(0.0, 1.0, 35.0), 0.0);
        // mpmath: 18.74974980605983859, crossing one at ε = 0.04101261772387813
        assert!((cylinder_w_bound(0.4).unwrap() - 18.749_749_806_059_84).abs() < 1e-10);
        assert!(cylinder_w_bound(0.041).unwrap() < 1.0);
        assert!(cylinder_w_bound(0.0411).unwrap() > 1.0);
        assert!(cylinder_w_bound(2.0f64.acosh() + 0.01).is_err());
    }

    #[test]
    fn universal_constant_value() {
        let v = universal_constant();
        assert!((v - 2.0 / 3.0).abs() < 1e-4, "{v}");
        assert!(universal_constant_tail_bound(20.0) < 1e-8);
        for s in [0.0, 0.1, 1.0, 10.0, 30.0] {
            assert!(inner_integral(s) > 0.0);
        }
        // direct check of the substitution at s = 1
        let direct = quadrature::integrate(|u: f64| (-1.5 * u).exp() / u.sinh().sqrt(), 1.0, 40.0, 1e-13).integral;
        assert!((direct - inner_integral(1.0)).abs() < 1e-10);
    }

    #[test]
    fn factorized_form() {
        let mut rng = 0x2545F4914F6CDD1Du64;
        for _ in 0..50 {
            rng ^= rng << 13;
            rng ^= rng >> 7;
            rng ^= rng << 17;
            let r = (rng % 10_000) as f64 / 500.0;
            for lam in [0.0, 0.2, 0.4] {
                let rc = Complex64::new(r, 0.0);
                let h = h_lambda(rc * rc, lam).unwrap();
                let f = 2.0 / PI * f_lambda(rc, lam).unwrap() * f_lambda(-rc, lam).unwrap();
                assert!((h - f).norm() < 1e-9 * h.norm(), "r={r} lam={lam}");
            }
        }
    }

    #[test]
    fn theta_decreasing_rho_increasing() {
        for lam in [0.0, 0.1, 0.25, 0.45] {
            let mut prev = f64::INFINITY;
            for k in 0..=400 {
                let t = k as f64 * 0.025;
                let v = theta_fn(t, lam).unwrap();
                assert!(v > 0.0 && v < prev, "theta lam={lam} t={t}");
                prev = v;
            }
            let a = (1.0 - 2.0 * lam) / 4.0;
            let mut prev = 0.0;
            for k in 0..200 {
                let t = a * k as f64 / 200.0;
                let v = rho_fn(t, lam).unwrap();
                assert!(v > prev, "rho lam={lam} t={t}");
                prev = v;
            }
        }
    }

    fn torus(n: usize) -> SurfaceModel {
        use crate::surface::{ModelConfig, ModelKind};
        SurfaceModel::build(&ModelConfig::new(ModelKind::SchottkyTorus { x: -0.6 }, n)).unwrap()
    }

    #[test]
    fn schur_monotone_and_geometric() {
        let m = torus(32);
        let s = schur_bound(&m, 0.0, 5, 4).unwrap();
        assert!(s.by_length[0].is_finite() && s.by_length[0] > 0.0);
        let inc = s.increments();
        assert!(inc.iter().all(|&d| d > 0.0));
        for w in inc.windows(2).skip(2) {
            assert!(w[0] / w[1] > 1.5, "{inc:?}");
        }
        // a Schur row bound dominates the L² operator norm
        assert!(s.value() >= pi0_norm(0.49, 0.0).unwrap());
        let lam = schur_bound(&m, 0.3, 2, 4).unwrap();
        assert!(lam.by_length[2] > s.by_length[2]);
    }

    #[test]
    fn schur_rejects_bad_input() {
        use crate::surface::{ModelConfig, ModelKind};
        let m = torus(32);
        assert!(schur_bound(&m, 0.5, 2, 4).is_err());
        let disk = SurfaceModel::build(&ModelConfig::new(ModelKind::HyperbolicDisk { radius: 0.5 }, 32)).unwrap();
        assert!(schur_bound(&disk, 0.0, 2, 4).is_err());
        let cyl = SurfaceModel::build(&ModelConfig::new(ModelKind::Cylinder { eps: 0.4 }, 32)).unwrap();
        assert!(schur_bound(&cyl, 0.0, 2, 4).is_err());
    }

    proptest! {
        #[test]
        fn pi0_norm_monotone_in_lambda(delta in 0.0..0.95f64, a in 0.0..1.0f64, b in 0.0..1.0f64) {
            let top = 0.5f64.min(1.0 - delta);
            let (l1, l2) = if a < b { (a * top, b * top) } else { (b * top, a * top) };
            prop_assume!(l2 < top - 1e-6);
            let n1 = pi0_norm(delta, l1).unwrap();
            let n2 = pi0_norm(delta, l2).unwrap();
            prop_assert!(n2 >= n1 * (1.0 - 1e-12));
        }
    }
}
