//! Geodesic flow: Heun integration with side identifications, exit detection,
//! escape rates and Jacobi fields.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::f64::consts::{PI, TAU};
use std::io::Write;

use crate::error::{invalid, Error, Result};
use crate::hypgeo::{normalizing_map, HCircle, Letter, C64};
use crate::surface::{wrap_pi, Metric, ModelGeometry, SurfaceModel};

const EXIT_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseState {
    pub x: f64,
    pub y: f64,
    /// Frame angle: v = (cos θ / P, sin θ / Q).
    pub theta: f64,
    pub word: Vec<Letter>,
}

impl PhaseState {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        PhaseState {
            x,
            y,
            theta,
            word: Vec::new(),
        }
    }

    pub fn arr(&self) -> [f64; 3] {
        [self.x, self.y, self.theta]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowParams {
    pub h: f64,
    pub t_max: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams { h: 1e-3, t_max: 30.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExitPoint {
    pub component: usize,
    pub s: f64,
    pub pos: C64,
    pub theta: f64,
    /// Angle of the exit direction from the inner normal, in (−π, π].
    pub beta: f64,
    pub cut: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FlowEnd {
    Exited { exit: ExitPoint, time: f64 },
    Capped { time: f64 },
}

impl FlowEnd {
    pub fn time(&self) -> f64 {
        match *self {
            FlowEnd::Exited { time, .. } | FlowEnd::Capped { time } => time,
        }
    }

    pub fn exit(&self) -> Option<ExitPoint> {
        match *self {
            FlowEnd::Exited { exit, .. } => Some(exit),
            FlowEnd::Capped { .. } => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GeodesicTrace {
    pub samples: Vec<(f64, [f64; 3])>,
    pub end: FlowEnd,
    pub word: Vec<Letter>,
}

pub fn geodesic_rhs(model: &SurfaceModel, s: &[f64; 3]) -> [f64; 3] {
    model.metric.rhs(s[0], s[1], s[2])
}

#[inline]
fn heun(metric: &Metric, s: &[f64; 3], h: f64) -> [f64; 3] {
    let k1 = metric.rhs(s[0], s[1], s[2]);
    let k2 = metric.rhs(s[0] + h * k1[0], s[1] + h * k1[1], s[2] + h * k1[2]);
    [
        s[0] + 0.5 * h * (k1[0] + k2[0]),
        s[1] + 0.5 * h * (k1[1] + k2[1]),
        s[2] + 0.5 * h * (k1[2] + k2[2]),
    ]
}

#[inline]
fn fold(model: &SurfaceModel, s: &mut [f64; 3], word: Option<&mut Vec<Letter>>) -> Result<()> {
    let [x, y, th] = s;
    model.fold_state(x, y, th, word)?;
    Ok(())
}

fn exit_point(model: &SurfaceModel, s: &[f64; 3]) -> ExitPoint {
    let (_, cut) = model.exit_function(s[0], s[1]);
    let pos = C64::new(s[0], s[1]);
    let (component, sp) = model.boundary_locate(pos, cut);
    let beta = wrap_pi(s[2] - model.normal_angle_at(pos, cut));
    ExitPoint {
        component,
        s: sp,
        pos,
        theta: s[2].rem_euclid(TAU),
        beta,
        cut,
    }
}

/// Flows `start` until it leaves the surface or reaches `t_max`; `visit` sees every accepted sample.
pub fn flow<F: FnMut(f64, &[f64; 3])>(
    model: &SurfaceModel,
    start: [f64; 3],
    params: &FlowParams,
    mut word: Option<&mut Vec<Letter>>,
    mut visit: F,
) -> Result<FlowEnd> {
    let h = params.h;
    if !(h > 0.0) {
        return Err(Error::NonPositiveStep(h));
    }
    let metric = model.metric;
    let mut s = start;
    fold(model, &mut s, word.as_deref_mut())?;
    let mut t = 0.0;
    let mut steps: u64 = 0;
    let t_stop = params.t_max - 1e-9 * h;
    visit(t, &s);
    loop {
        if t >= t_stop {
            return Ok(FlowEnd::Capped { time: t });
        }
        let raw = heun(&metric, &s, h);
        let mut n = raw;
        fold(model, &mut n, None)?;
        if model.exit_function(n[0], n[1]).0 < 0.0 {
            let (mut lo, mut hi) = (0.0, h);
            while hi - lo > EXIT_TOL {
                let mid = 0.5 * (lo + hi);
                let mut m = heun(&metric, &s, mid);
                fold(model, &mut m, None)?;
                if model.exit_function(m[0], m[1]).0 < 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let mut last = heun(&metric, &s, hi);
            fold(model, &mut last, word.as_deref_mut())?;
            visit(t + hi, &last);
            return Ok(FlowEnd::Exited {
                exit: exit_point(model, &last),
                time: t + hi,
            });
        }
        if word.is_some() {
            n = raw;
            fold(model, &mut n, word.as_deref_mut())?;
        }
        steps += 1;
        t = steps as f64 * h;
        s = n;
        visit(t, &s);
    }
}

pub fn integrate(model: &SurfaceModel, state: &PhaseState, params: &FlowParams) -> Result<GeodesicTrace> {
    let mut samples = Vec::new();
    let mut word = state.word.clone();
    let end = flow(model, state.arr(), params, Some(&mut word), |t, s| samples.push((t, *s)))?;
    Ok(GeodesicTrace { samples, end, word })
}

/// Exit time only.
pub fn escape_time(model: &SurfaceModel, start: [f64; 3], params: &FlowParams) -> Result<FlowEnd> {
    flow(model, start, params, None, |_, _| {})
}

/// Frame angle of the direction at angle `alpha` from the inner normal of a boundary sample.
pub fn influx_theta(model: &SurfaceModel, comp: usize, s: f64, alpha: f64) -> (C64, f64) {
    let b = model.boundary_point(comp, s);
    (b.pos, b.normal_angle + alpha)
}

/// Exit data of the geodesic entering at (comp, s) with angle α from the inner normal.
pub fn scattering_endpoint(
    model: &SurfaceModel,
    comp: usize,
    s: f64,
    alpha: f64,
    params: &FlowParams,
) -> Result<FlowEnd> {
    if !(alpha.abs() < PI / 2.0) {
        return Err(invalid("alpha", format!("{alpha} not an influx angle")));
    }
    let (p, th) = influx_theta(model, comp, s, alpha);
    escape_time(model, [p.re, p.im, th], params)
}

fn first_crossing(c: &HCircle, n: &crate::hypgeo::Mobius, u_min: f64) -> Option<f64> {
    // q restricted to the real diameter of the normalized frame
    let h = c.transform(n);
    let (a, b, cc) = (h.a, h.b.re, h.c);
    let mut roots = Vec::with_capacity(2);
    if a.abs() < 1e-14 {
        if b.abs() > 0.0 {
            roots.push(-cc / (2.0 * b));
        }
    } else {
        let disc = b * b - a * cc;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            roots.push((-b - sq) / a);
            roots.push((-b + sq) / a);
        }
    }
    roots
        .into_iter()
        .filter(|&u| u > u_min && u < 1.0)
        .filter(|&u| 2.0 * a * u + 2.0 * b < 0.0)
        .fold(None, |acc: Option<f64>, u| Some(acc.map_or(u, |m| m.min(u))))
}

/// Exact exit of a constant-curvature disk model, following circular arcs through the walls.
pub fn exact_exit(model: &SurfaceModel, z: C64, theta: f64) -> Result<FlowEnd> {
    let kappa0 = model
        .kappa0()
        .ok_or_else(|| invalid("model", "exact flow needs constant curvature"))?;
    let ModelGeometry::Disk(d) = &model.geometry else {
        return Err(invalid("model", "exact flow needs a disk model"));
    };
    let mut z = z;
    let mut theta = theta;
    let mut t = 0.0;
    let mut u_min = 0.0;
    for _ in 0..crate::hypgeo::FOLD_CAP {
        let n = normalizing_map(z, theta);
        let back = n.inverse();
        let mut best: Option<(f64, bool, usize)> = None;
        for (k, c) in d.cuts.iter().enumerate() {
            if let Some(u) = first_crossing(c, &n, u_min) {
                if best.is_none_or(|b| u < b.0) {
                    best = Some((u, true, k));
                }
            }
        }
        if let Some(g) = &d.group {
            for (k, w) in g.walls.iter().enumerate() {
                if let Some(u) = first_crossing(&w.circle, &n, u_min) {
                    if best.is_none_or(|b| u < b.0) {
                        best = Some((u, false, k));
                    }
                }
            }
        }
        let Some((u, is_cut, k)) = best else {
            return Err(invalid("state", "geodesic never meets the boundary"));
        };
        let uc = C64::new(u, 0.0);
        let p = back.eval(uc);
        let dir = back.derivative(uc).arg();
        t += 2.0 * u.atanh() / kappa0.sqrt();
        if is_cut {
            let s = [p.re, p.im, dir];
            let mut e = exit_point(model, &s);
            e.cut = k;
            return Ok(FlowEnd::Exited { exit: e, time: t });
        }
        let w = &d.group.as_ref().expect("walls").walls[k];
        theta = dir + w.fold.derivative(p).arg();
        z = w.fold.eval(p);
        u_min = 1e-9;
    }
    Err(Error::FoldCapExceeded(crate::hypgeo::FOLD_CAP))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct JacobiState {
    pub a: f64,
    pub da: f64,
    pub b: f64,
    pub db: f64,
    pub va: f64,
    pub dva: f64,
    pub vb: f64,
    pub dvb: f64,
}

impl JacobiState {
    pub fn initial() -> Self {
        JacobiState {
            a: 1.0,
            db: 1.0,
            ..Default::default()
        }
    }

    pub fn wronskian(&self) -> f64 {
        self.a * self.db - self.da * self.b
    }

    /// V(a/b) = (A b − a B)/b².
    pub fn v_ratio(&self) -> f64 {
        (self.va * self.b - self.a * self.vb) / (self.b * self.b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JacobiSample {
    pub t: f64,
    pub pos: [f64; 3],
    pub kappa: f64,
    pub kappa_perp: f64,
    pub j: JacobiState,
}

fn jacobi_rhs(metric: &Metric, y: &[f64; 11]) -> [f64; 11] {
    let [x, yy, th, a, da, b, db, va, dva, vb, dvb] = *y;
    let p = metric.rhs(x, yy, th);
    let k = metric.curvature(x, yy);
    let kp = metric.dkappa_perp(x, yy, th);
    [
        p[0],
        p[1],
        p[2],
        da,
        -k * a,
        db,
        -k * b,
        dva,
        -k * va - b * kp * a,
        dvb,
        -k * vb - b * b * kp,
    ]
}

fn axpy(y: &[f64; 11], h: f64, k: &[f64; 11]) -> [f64; 11] {
    std::array::from_fn(|i| y[i] + h * k[i])
}

/// Jacobi fields and their vertical derivatives along the geodesic, by RK4; stops at the boundary.
pub fn jacobi_propagate(model: &SurfaceModel, start: [f64; 3], t_max: f64, h: f64) -> Result<Vec<JacobiSample>> {
    if !(h > 0.0) {
        return Err(Error::NonPositiveStep(h));
    }
    let metric = model.metric;
    let j0 = JacobiState::initial();
    let mut y = [
        start[0], start[1], start[2], j0.a, j0.da, j0.b, j0.db, j0.va, j0.dva, j0.vb, j0.dvb,
    ];
    let sample = |t: f64, y: &[f64; 11]| JacobiSample {
        t,
        pos: [y[0], y[1], y[2]],
        kappa: metric.curvature(y[0], y[1]),
        kappa_perp: metric.dkappa_perp(y[0], y[1], y[2]),
        j: JacobiState {
            a: y[3],
            da: y[4],
            b: y[5],
            db: y[6],
            va: y[7],
            dva: y[8],
            vb: y[9],
            dvb: y[10],
        },
    };
    let steps = (t_max / h).round() as usize;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(sample(0.0, &y));
    for i in 1..=steps {
        let k1 = jacobi_rhs(&metric, &y);
        let k2 = jacobi_rhs(&metric, &axpy(&y, h / 2.0, &k1));
        let k3 = jacobi_rhs(&metric, &axpy(&y, h / 2.0, &k2));
        let k4 = jacobi_rhs(&metric, &axpy(&y, h, &k3));
        let mut n: [f64; 11] = std::array::from_fn(|k| y[k] + h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]));
        let (mut x, mut yy, mut th) = (n[0], n[1], n[2]);
        model.fold_state(&mut x, &mut yy, &mut th, None)?;
        n[..3].copy_from_slice(&[x, yy, th]);
        if model.exit_function(n[0], n[1]).0 < 0.0 {
            break;
        }
        y = n;
        out.push(sample(i as f64 * h, &y));
    }
    Ok(out)
}

/// V(a/b)(t) along the geodesic from `start`.
pub fn w_kernel_probe(model: &SurfaceModel, start: [f64; 3], t: f64, h: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(invalid("t", "must be positive"));
    }
    let trace = jacobi_propagate(model, start, t, h)?;
    let last = trace.last().expect("initial sample");
    if (last.t - t).abs() > h / 2.0 {
        return Err(Error::OutsideSurface);
    }
    Ok(last.j.v_ratio())
}

/// −b(t)⁻² ∫₀ᵗ (a(s)b(t) − a(t)b(s))² b(s) κ_⊥(s) ds by Simpson's rule on the trace samples.
pub fn duhamel_v_ratio(trace: &[JacobiSample], upto: usize) -> f64 {
    let last = &trace[upto];
    let f = |s: &JacobiSample| {
        let w = s.j.a * last.j.b - last.j.a * s.j.b;
        w * w * s.j.b * s.kappa_perp
    };
    let n = upto;
    let h = if n > 0 { trace[1].t - trace[0].t } else { 0.0 };
    let mut acc = 0.0;
    if n % 2 == 0 {
        for k in 0..n / 2 {
            acc += h / 3.0 * (f(&trace[2 * k]) + 4.0 * f(&trace[2 * k + 1]) + f(&trace[2 * k + 2]));
        }
    } else {
        for k in 0..n {
            acc += h / 2.0 * (f(&trace[k]) + f(&trace[k + 1]));
        }
    }
    -acc / (last.j.b * last.j.b)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EscapeCurve {
    pub t: Vec<f64>,
    pub v: Vec<f64>,
    pub n_samples: usize,
}

impl EscapeCurve {
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "t,V")?;
        for (t, v) in self.t.iter().zip(&self.v) {
            writeln!(w, "{t:e},{v:e}")?;
        }
        Ok(())
    }
}

/// Points distributed by the Liouville measure: area measure times uniform fiber angle.
pub fn sample_liouville(model: &SurfaceModel, n: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ([x0, x1, y0, y1], dmax) = model.sampling_box();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x = rng.gen_range(x0..x1);
        let y = rng.gen_range(y0..y1);
        let u: f64 = rng.gen();
        let th = rng.gen_range(0.0..TAU);
        let p = C64::new(x, y);
        if !model.contains(p) {
            continue;
        }
        if u * dmax <= model.metric.volume_density(x, y) {
            out.push([x, y, th]);
        }
    }
    out
}

/// Survival fraction V(t) of Liouville-distributed samples on t = 0, Δ, 2Δ, … ≤ t_max.
pub fn escape_rate(
    model: &SurfaceModel,
    n_samples: usize,
    t_max: f64,
    bin: f64,
    h: f64,
    seed: u64,
) -> Result<EscapeCurve> {
    if n_samples == 0 || !(bin > 0.0) || !(t_max > 0.0) {
        return Err(invalid("escape_rate", "needs positive sample count, bin width and horizon"));
    }
    let starts = sample_liouville(model, n_samples, seed);
    let params = FlowParams { h, t_max };
    let times = starts
        .par_iter()
        .map(|s| {
            escape_time(model, *s, &params).map(|e| match e {
                FlowEnd::Exited { time, .. } => time,
                FlowEnd::Capped { .. } => f64::INFINITY,
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut sorted = times;
    sorted.sort_by(f64::total_cmp);
    let nb = (t_max / bin).floor() as usize;
    let mut t = Vec::with_capacity(nb + 1);
    let mut v = Vec::with_capacity(nb + 1);
    for k in 0..=nb {
        let tk = k as f64 * bin;
        let alive = sorted.len() - sorted.partition_point(|&x| x <= tk);
        t.push(tk);
        v.push(alive as f64 / n_samples as f64);
    }
    if let Some(v0) = v.first_mut() {
        *v0 = 1.0;
    }
    Ok(EscapeCurve { t, v, n_samples })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitWindow {
    /// Fit starts where V first drops below this value.
    pub v_start: f64,
    /// Fit stops once fewer samples than this survive.
    pub min_survivors: usize,
}

impl Default for FitWindow {
    fn default() -> Self {
        FitWindow {
            v_start: 0.5,
            min_survivors: 200,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeltaFit {
    /// δ̂ clamped to [0, 1).
    pub delta: f64,
    /// 1 − slope, unclamped.
    pub raw: f64,
    pub slope: f64,
    pub t0: f64,
    pub t1: f64,
    pub points: usize,
}

/// Least-squares slope of −log V on the fit window.
pub fn estimate_delta_gamma(curve: &EscapeCurve, window: &FitWindow) -> Result<DeltaFit> {
    let v_min = window.min_survivors as f64 / curve.n_samples as f64;
    let start = curve
        .v
        .iter()
        .position(|&v| v < window.v_start)
        .ok_or_else(|| Error::DegenerateFit("V never drops below the start level".into()))?;
    let pts: Vec<(f64, f64)> = curve.t[start..]
        .iter()
        .zip(&curve.v[start..])
        .take_while(|(_, &v)| v > 0.0 && v >= v_min)
        .map(|(&t, &v)| (t, -v.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::DegenerateFit(format!("{} points in the fit window", pts.len())));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let slope = sxy / sxx;
    let raw = 1.0 - slope;
    Ok(DeltaFit {
        delta: raw.clamp(0.0, 1.0 - f64::EPSILON),
        raw,
        slope,
        t0: pts[0].0,
        t1: pts[pts.len() - 1].0,
        points: pts.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypgeo::{exact_geodesic_flow, hyperbolic_distance};
    use crate::surface::{ModelConfig, ModelKind};
    use proptest::prelude::*;

    fn build(kind: ModelKind) -> SurfaceModel {
        SurfaceModel::build(&ModelConfig::new(kind, 32)).unwrap()
    }

    #[test]
    fn unit_speed() {
        for m in [
            build(ModelKind::HyperbolicDisk { radius: 0.8 }),
            build(ModelKind::Cylinder { eps: 0.4 }),
            build(ModelKind::FlatDisk { radius: 0.8 }),
        ] {
            for (x, y, th) in [(0.1, 0.2, 0.3), (0.5, -0.3, 2.0), (-0.2, 0.7, 5.0)] {
                let v = m.metric.rhs(x, y, th);
                let (p, q) = m.metric.coframe(x, y);
                assert!(((p * v[0]).powi(2) + (q * v[1]).powi(2) - 1.0).abs() < 1e-12);
            }
        }
        let f = build(ModelKind::FlatDisk { radius: 0.8 });
        assert_eq!(f.metric.rhs(0.1, 0.2, 1.0)[2], 0.0);
    }

    #[test]
    fn flat_exit_time_is_chord() {
        let m = build(ModelKind::FlatDisk { radius: 0.8 });
        let p = FlowParams { h: 1e-3, t_max: 10.0 };
        let z = C64::new(0.1, -0.2);
        let th = 0.7f64;
        let end = escape_time(&m, [z.re, z.im, th], &p).unwrap();
        // |z + t e^{iθ}| = 0.8
        let e = C64::from_polar(1.0, th);
        let b = (z.conj() * e).re;
        let t = -b + (b * b - z.norm_sqr() + 0.64).sqrt();
        assert!((end.time() - t).abs() < 1e-9);
        let ex = end.exit().unwrap();
        assert!((ex.pos.norm() - 0.8).abs() < 1e-9);
        assert!(ex.beta.abs() > PI / 2.0);
    }

    #[test]
    fn disk_flow_matches_exact() {
        let m = build(ModelKind::HyperbolicDisk { radius: 0.9 });
        let z = C64::new(0.2, -0.1);
        let th = 1.1;
        let tr = integrate(&m, &PhaseState::new(z.re, z.im, th), &FlowParams { h: 1e-3, t_max: 1.0 }).unwrap();
        let (t, s) = *tr.samples.iter().rev().find(|(t, _)| (*t - 1.0).abs() < 1e-9).unwrap();
        let (w, _) = exact_geodesic_flow(z, th, t, 1.0).unwrap();
        assert!(hyperbolic_distance(w, C64::new(s[0], s[1])).unwrap() < 1e-6);
    }

    #[test]
    fn cylinder_vertical_geodesic() {
        let m = build(ModelKind::Cylinder { eps: 0.0 });
        let end = scattering_endpoint(&m, 0, 0.3, 0.0, &FlowParams { h: 1e-3, t_max: 10.0 }).unwrap();
        let ex = end.exit().unwrap();
        assert_eq!(ex.component, 1);
        assert!((ex.s - 0.3).abs() < 1e-9);
        assert!((end.time() - 2.0).abs() < 1e-9);
        assert!((ex.beta.abs() - PI).abs() < 1e-9);
    }

    #[test]
    fn trapped_axis_is_capped() {
        let m = build(ModelKind::SchottkyOneGen { x: -0.3 });
        let end = escape_time(&m, [0.0, 0.0, 0.0], &FlowParams { h: 1e-2, t_max: 20.0 }).unwrap();
        assert!(matches!(end, FlowEnd::Capped { .. }));
        let trace = integrate(&m, &PhaseState::new(0.0, 0.0, 0.0), &FlowParams { h: 1e-2, t_max: 5.0 }).unwrap();
        assert!(!trace.word.is_empty());
        assert!(trace.samples.iter().all(|(_, s)| s[1].abs() < 1e-12));
    }

    #[test]
    fn scattering_matches_exact_flow() {
        let m = build(ModelKind::SchottkyTorus { x: -0.6 });
        let p = FlowParams { h: 1e-3, t_max: 30.0 };
        for (c, s, a) in [(0, 0.1, 0.2), (0, 0.55, -0.4), (0, 0.8, 0.9)] {
            let (pos, th) = influx_theta(&m, c, s, a);
            let num = escape_time(&m, [pos.re, pos.im, th], &p).unwrap();
            let ex = exact_exit(&m, pos, th).unwrap();
            if let (FlowEnd::Exited { exit: e1, time: t1 }, FlowEnd::Exited { exit: e2, time: t2 }) = (num, ex) {
                assert!((t1 - t2).abs() < 1e-4, "{t1} {t2}");
                assert!((e1.pos - e2.pos).norm() < 1e-4);
                assert_eq!(e1.component, e2.component);
            } else {
                panic!("both flows exit");
            }
        }
    }

    #[test]
    fn reversibility() {
        let m = build(ModelKind::Cylinder { eps: 0.4 });
        let p = FlowParams { h: 1e-3, t_max: 30.0 };
        let end = scattering_endpoint(&m, 0, 0.4, 0.6, &p).unwrap();
        let ex = end.exit().unwrap();
        let back = escape_time(&m, [ex.pos.re, ex.pos.im, ex.theta + PI], &p).unwrap();
        let bx = back.exit().unwrap();
        assert_eq!(bx.component, 0);
        assert!((bx.s - 0.4).abs() < 1e-5);
        assert!((wrap_pi(bx.beta - PI) - 0.6).abs() < 1e-5);
    }

    #[test]
    fn exits_are_outflux_and_deterministic() {
        let m = build(ModelKind::SchottkyPants { x: -0.6 });
        let p = FlowParams { h: 5e-3, t_max: 30.0 };
        for k in 0..40 {
            let s = (k as f64 + 0.5) / 40.0;
            let a = -1.2 + 2.4 * ((k * 7) % 40) as f64 / 40.0;
            let e1 = scattering_endpoint(&m, k % 3, s, a, &p).unwrap();
            let e2 = scattering_endpoint(&m, k % 3, s, a, &p).unwrap();
            assert_eq!(e1, e2);
            if let Some(e) = e1.exit() {
                assert!(e.beta.cos() <= 1e-6, "{e:?}");
            }
        }
    }

    #[test]
    fn rejects_bad_step() {
        let m = build(ModelKind::FlatDisk { radius: 0.5 });
        assert!(matches!(
            escape_time(&m, [0.0, 0.0, 0.0], &FlowParams { h: 0.0, t_max: 1.0 }),
            Err(Error::NonPositiveStep(_))
        ));
    }

    #[test]
    fn jacobi_constant_curvature() {
        let m = build(ModelKind::SchottkyOneGen { x: -0.3 });
        let tr = jacobi_propagate(&m, [0.0, 0.0, 0.0], 1.0, 1e-3).unwrap();
        let last = tr.last().unwrap();
        assert!((last.j.b - 1f64.sinh()).abs() < 1e-8);
        assert!((last.j.a - 1f64.cosh()).abs() < 1e-8);
        for s in &tr {
            assert!(s.j.va == 0.0 && s.j.vb == 0.0);
        }
        let mut c = ModelConfig::new(ModelKind::HyperbolicDisk { radius: 0.9 }, 32);
        c.kappa0 = 2.0;
        let m2 = SurfaceModel::build(&c).unwrap();
        let tr = jacobi_propagate(&m2, [0.0, 0.0, 0.5], 1.0, 1e-3).unwrap();
        let b = tr.last().unwrap().j.b;
        assert!((b - (2f64.sqrt()).sinh() / 2f64.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn jacobi_cylinder_properties() {
        let eps = 0.4;
        let m = build(ModelKind::Cylinder { eps });
        let k0 = 1.0 + eps * eps;
        let bound = m.curvature_gradient_sup() / k0 * (2.0 / 3.0);
        for (y, th) in [(0.05, 0.1), (-0.1, 0.05), (0.3, -0.2), (0.0, 0.02)] {
            let tr = jacobi_propagate(&m, [0.5, y, th], 6.0, 1e-3).unwrap();
            assert!(tr.len() > 100);
            for (i, s) in tr.iter().enumerate().skip(1) {
                assert!((s.j.wronskian() - 1.0).abs() < 1e-6);
                assert!(s.j.db / s.j.b >= k0.sqrt() - 1e-6);
                assert!(s.j.b >= (k0.sqrt() * s.t).sinh() / k0.sqrt() - 1e-6);
                assert!(s.j.v_ratio().abs() <= bound, "{} {}", s.j.v_ratio(), bound);
                if i % 97 == 0 {
                    assert!((duhamel_v_ratio(&tr, i) - s.j.v_ratio()).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn probe_errors() {
        let m = build(ModelKind::Cylinder { eps: 0.4 });
        assert!(w_kernel_probe(&m, [0.5, 0.0, 0.1], 0.0, 1e-3).is_err());
        assert!(w_kernel_probe(&m, [0.5, 0.0, 1.5], 5.0, 1e-3).is_err());
        let v = w_kernel_probe(&m, [0.5, 0.0, 0.1], 1e-2, 1e-3).unwrap();
        assert!(v.abs() < 1e-2);
    }

    #[test]
    fn synthetic_escape_fit() {
        let t: Vec<f64> = (0..400).map(|k| k as f64 * 0.05).collect();
        let v: Vec<f64> = t.iter().map(|t| (-0.35 * t).exp()).collect();
        let c = EscapeCurve { t, v, n_samples: usize::MAX };
        let fit = estimate_delta_gamma(&c, &FitWindow::default()).unwrap();
        assert!((fit.delta - 0.65).abs() < 1e-6);
        let dead = EscapeCurve { t: vec![0.0, 1.0, 2.0], v: vec![1.0, 0.0, 0.0], n_samples: 10 };
        assert!(matches!(estimate_delta_gamma(&dead, &FitWindow::default()), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn escape_curve_basics() {
        let m = build(ModelKind::Cylinder { eps: 0.0 });
        let c = escape_rate(&m, 2000, 5.0, 0.1, 1e-2, 3).unwrap();
        assert_eq!(c.v[0], 1.0);
        assert!(c.v.windows(2).all(|w| w[1] <= w[0]));
        assert!(c.v[1] > 0.9);
        let d = escape_rate(&m, 2000, 5.0, 0.1, 1e-2, 3).unwrap();
        assert_eq!(c, d);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn liouville_samples_inside(seed in 0u64..1000) {
            let m = build(ModelKind::SchottkyTorus { x: -0.6 });
            for s in sample_liouville(&m, 50, seed) {
                prop_assert!(m.contains(C64::new(s[0], s[1])));
                prop_assert!((0.0..TAU).contains(&s[2]));
            }
        }

        #[test]
        fn constant_curvature_null_kernel(x in -0.3..0.3f64, y in -0.2..0.2f64, th in 0.0..TAU) {
            let m = build(ModelKind::SchottkyOneGen { x: -0.3 });
            prop_assume!(m.contains(C64::new(x, y)));
            let tr = jacobi_propagate(&m, [x, y, th], 3.0, 1e-2).unwrap();
            for s in tr.iter().skip(1) {
                prop_assert!(s.j.v_ratio().abs() < 1e-6);
                prop_assert!((s.j.wronskian() - 1.0).abs() < 1e-6);
            }
        }
    }
}
