//! Surface models: metrics, curvature, boundary parameterization, masks.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};

use crate::error::{invalid, Error, Result};
use crate::grid::GridSpec;
use crate::hypgeo::{
    hyperbolic_distance, orthogonal_wall_real, HCircle, Letter, FOLD_CAP, Mobius, SchottkyGroup, C64,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    /// D²/⟨T_a⟩ with walls through ±x on the real axis.
    SchottkyOneGen { x: f64 },
    /// D²/⟨T_a, T_{ia}⟩.
    SchottkyTorus { x: f64 },
    /// D²/⟨iT_a, −iT_{ia}⟩.
    SchottkyPants { x: f64 },
    /// R/2Z × (−1, 1) with metric cosh²y cosh²(εy) dx² + dy².
    Cylinder { eps: f64 },
    /// Hyperbolic disk {|z| < radius} without identifications.
    HyperbolicDisk { radius: f64 },
    /// Euclidean disk {|z| < radius}.
    FlatDisk { radius: f64 },
}

fn default_kappa0() -> f64 {
    1.0
}

fn default_n() -> usize {
    150
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(flatten)]
    pub kind: ModelKind,
    #[serde(default = "default_kappa0")]
    pub kappa0: f64,
    #[serde(default = "default_n")]
    pub n: usize,
    /// Distance of the boundary cut from the convex core (disk models with walls).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cut_distance: Option<f64>,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, n: usize) -> Self {
        ModelConfig {
            kind,
            kappa0: 1.0,
            n,
            cut_distance: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Metric {
    Hyperbolic { kappa0: f64 },
    Flat,
    Warped { eps: f64 },
}

impl Metric {
    /// (P, Q) with g = P² dx² + Q² dy².
    #[inline]
    pub fn coframe(&self, x: f64, y: f64) -> (f64, f64) {
        match *self {
            Metric::Hyperbolic { kappa0 } => {
                let e = 2.0 / ((1.0 - x * x - y * y) * kappa0.sqrt());
                (e, e)
            }
            Metric::Flat => (1.0, 1.0),
            Metric::Warped { eps } => ((y.cosh()) * (eps * y).cosh(), 1.0),
        }
    }

    /// Conformal factor φ and its partials, for isothermal metrics.
    pub fn conformal(&self, x: f64, y: f64) -> Option<(f64, f64, f64)> {
        match *self {
            Metric::Hyperbolic { kappa0 } => {
                let w = 1.0 - x * x - y * y;
                Some(((2.0 / w).ln() - 0.5 * kappa0.ln(), 2.0 * x / w, 2.0 * y / w))
            }
            Metric::Flat => Some((0.0, 0.0, 0.0)),
            Metric::Warped { .. } => None,
        }
    }

    /// Phase velocity (ẋ, ẏ, θ̇) of the unit-speed geodesic flow.
    #[inline]
    pub fn rhs(&self, x: f64, y: f64, theta: f64) -> [f64; 3] {
        let (s, c) = theta.sin_cos();
        match *self {
            Metric::Hyperbolic { kappa0 } => {
                let w = 1.0 - x * x - y * y;
                let em = 0.5 * w * kappa0.sqrt();
                let (px, py) = (2.0 * x / w, 2.0 * y / w);
                [em * c, em * s, em * (-px * s + py * c)]
            }
            Metric::Flat => [c, s, 0.0],
            Metric::Warped { eps } => {
                let h = y.cosh() * (eps * y).cosh();
                let dlogh = y.tanh() + eps * (eps * y).tanh();
                [c / h, s, dlogh * c]
            }
        }
    }

    pub fn curvature(&self, _x: f64, y: f64) -> f64 {
        match *self {
            Metric::Hyperbolic { kappa0 } => -kappa0,
            Metric::Flat => 0.0,
            Metric::Warped { eps } => -1.0 - eps * eps - 2.0 * eps * y.tanh() * (eps * y).tanh(),
        }
    }

    /// Coordinate partials (∂ₓκ, ∂_yκ).
    pub fn curvature_grad(&self, _x: f64, y: f64) -> [f64; 2] {
        match *self {
            Metric::Hyperbolic { .. } | Metric::Flat => [0.0, 0.0],
            Metric::Warped { eps } => {
                let t = y.tanh();
                let te = (eps * y).tanh();
                [0.0, -2.0 * eps * ((1.0 - t * t) * te + eps * t * (1.0 - te * te))]
            }
        }
    }

    /// dκ(Jv) where Jv is v rotated by +π/2.
    #[inline]
    pub fn dkappa_perp(&self, x: f64, y: f64, theta: f64) -> f64 {
        let [kx, ky] = self.curvature_grad(x, y);
        if kx == 0.0 && ky == 0.0 {
            return 0.0;
        }
        let (p, q) = self.coframe(x, y);
        let (s, c) = theta.sin_cos();
        -kx * s / p + ky * c / q
    }

    /// |dκ|_g.
    pub fn dkappa_norm(&self, x: f64, y: f64) -> f64 {
        let [kx, ky] = self.curvature_grad(x, y);
        let (p, q) = self.coframe(x, y);
        ((kx / p).powi(2) + (ky / q).powi(2)).sqrt()
    }

    /// Riemannian area density √det g.
    #[inline]
    pub fn volume_density(&self, x: f64, y: f64) -> f64 {
        let (p, q) = self.coframe(x, y);
        p * q
    }
}

/// One arc of a boundary cut, oriented along its component.
#[derive(Clone, Debug)]
pub struct ArcPiece {
    pub cut: usize,
    pub center: C64,
    pub radius: f64,
    pub a0: f64,
    pub sweep: f64,
    pub offset: f64,
    pub length: f64,
    cum: Vec<f64>,
}

impl ArcPiece {
    #[inline]
    fn point(&self, u: f64) -> C64 {
        self.center + C64::from_polar(self.radius, self.a0 + self.sweep * u)
    }

    fn u_of_length(&self, l: f64) -> f64 {
        let k = self.cum.len() - 1;
        let idx = self.cum.partition_point(|&c| c <= l).clamp(1, k);
        let (c0, c1) = (self.cum[idx - 1], self.cum[idx]);
        let t = if c1 > c0 { (l - c0) / (c1 - c0) } else { 0.0 };
        ((idx - 1) as f64 + t.clamp(0.0, 1.0)) / k as f64
    }

    fn length_of_u(&self, u: f64) -> f64 {
        let k = self.cum.len() - 1;
        let f = u.clamp(0.0, 1.0) * k as f64;
        let i = (f as usize).min(k - 1);
        let t = f - i as f64;
        self.cum[i] * (1.0 - t) + self.cum[i + 1] * t
    }

    fn u_of_point(&self, p: C64) -> f64 {
        let a = (p - self.center).arg();
        if (self.sweep.abs() - TAU).abs() < 1e-12 {
            return (a - self.a0).rem_euclid(TAU) / TAU * self.sweep.signum().max(0.0)
                + (1.0 - (a - self.a0).rem_euclid(TAU) / TAU) * (-self.sweep.signum()).max(0.0);
        }
        let d = wrap_pi(a - self.a0);
        (d / self.sweep).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Debug)]
pub struct BoundaryComponent {
    pub pieces: Vec<ArcPiece>,
    pub length: f64,
}

#[derive(Clone, Debug)]
pub struct DiskDomain {
    pub group: Option<SchottkyGroup>,
    /// Removed side has q < 0.
    pub cuts: Vec<HCircle>,
    pub components: Vec<BoundaryComponent>,
    /// cut index → (component, piece)
    pub cut_piece: Vec<(usize, usize)>,
}

#[derive(Clone, Debug)]
pub enum ModelGeometry {
    Disk(DiskDomain),
    Cylinder { eps: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundarySample {
    pub component: usize,
    pub s: f64,
    pub pos: C64,
    /// Frame angle of the inner normal.
    pub normal_angle: f64,
    /// Inner unit normal in coordinates.
    pub normal: [f64; 2],
    /// Unit tangent in coordinates.
    pub tangent: [f64; 2],
}

#[derive(Clone, Debug)]
pub struct SurfaceModel {
    pub config: ModelConfig,
    pub metric: Metric,
    pub geometry: ModelGeometry,
    pub mask: Vec<bool>,
    pub hash: String,
    grid: GridSpec,
}

#[inline]
pub fn wrap_pi(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(TAU) - PI;
    if r <= -PI {
        r + TAU
    } else {
        r
    }
}

fn a_of(x: f64) -> f64 {
    2.0 * x / (x * x + 1.0)
}

/// Hypercycle at distance d from the geodesic orthogonal to the ray at angle ψ through radius m,
/// on the side away from the origin; the far side is negative.
fn hypercycle_cut(psi: f64, m: f64, d: f64) -> HCircle {
    let h = (d / 2.0).tanh();
    let k = (h * h - 1.0) / (2.0 * h);
    let rho = (1.0 + h * h) / (2.0 * h);
    let std = HCircle::from_circle(C64::new(0.0, k), rho, false);
    let to_m = Mobius::translation(C64::new(0.0, -m)).expect("interior");
    std.transform(&Mobius::rotation(psi - FRAC_PI_2).compose(&to_m))
}

fn circle_intersections(c1: C64, r1: f64, c2: C64, r2: f64) -> Vec<C64> {
    let d = (c2 - c1).norm();
    if d > r1 + r2 || d < (r1 - r2).abs() || d == 0.0 {
        return vec![];
    }
    let a = (r1 * r1 - r2 * r2 + d * d) / (2.0 * d);
    let h = (r1 * r1 - a * a).max(0.0).sqrt();
    let u = (c2 - c1) / d;
    let base = c1 + u * a;
    let perp = C64::new(-u.im, u.re);
    vec![base + perp * h, base - perp * h]
}

/// Default cut distance for the one-generator model: the cut meets the wall at half its Euclidean height.
pub fn one_gen_default_cut(x: f64) -> f64 {
    let (c, r) = orthogonal_wall_real(x);
    let c = c.re;
    let top = (1.0 - 1.0 / (c * c)).sqrt();
    let y = top / 2.0;
    let px = c + c.signum() * -1.0 * (r * r - y * y).sqrt();
    hyperbolic_distance(C64::new(x, 0.0), C64::new(px, y)).expect("interior")
}

pub const TWO_GEN_DEFAULT_CUT: f64 = 1.0;

impl SurfaceModel {
    pub fn build(config: &ModelConfig) -> Result<SurfaceModel> {
        if config.n < 16 {
            return Err(invalid("n", format!("grid size {} below 16", config.n)));
        }
        if !(config.kappa0 > 0.0 && config.kappa0.is_finite()) {
            return Err(invalid("kappa0", "must be positive"));
        }
        let k0 = config.kappa0;
        let (metric, geometry, grid) = match config.kind {
            ModelKind::SchottkyOneGen { x } => {
                check_x(x)?;
                let d = cut_distance(config, one_gen_default_cut(x))?;
                let a = a_of(x);
                let gens = vec![Mobius::translation(C64::new(a, 0.0))?];
                let (c, r) = orthogonal_wall_real(x);
                let group = SchottkyGroup::new(gens, vec![(c, r), (-c, r)])?;
                let cuts = vec![hypercycle_cut(FRAC_PI_2, 0.0, d), hypercycle_cut(-FRAC_PI_2, 0.0, d)];
                let dom = disk_domain(Some(group), cuts, Metric::Hyperbolic { kappa0: k0 })?;
                (Metric::Hyperbolic { kappa0: k0 }, ModelGeometry::Disk(dom), GridSpec::square(config.n))
            }
            ModelKind::SchottkyTorus { x } | ModelKind::SchottkyPants { x } => {
                check_x(x)?;
                if x.abs() <= 2f64.sqrt() - 1.0 {
                    return Err(Error::IntersectingWalls(x));
                }
                let d = cut_distance(config, TWO_GEN_DEFAULT_CUT)?;
                let a = a_of(x);
                let ta = Mobius::translation(C64::new(a, 0.0))?;
                let tia = Mobius::translation(C64::new(0.0, a))?;
                let gens = if matches!(config.kind, ModelKind::SchottkyTorus { .. }) {
                    vec![ta, tia]
                } else {
                    vec![
                        Mobius::rotation(FRAC_PI_2).compose(&ta),
                        Mobius::rotation(-FRAC_PI_2).compose(&tia),
                    ]
                };
                let (c, r) = orthogonal_wall_real(x);
                let walls = vec![(c, r), (-c, r), (c * C64::i(), r), (-c * C64::i(), r)];
                let group = SchottkyGroup::new(gens, walls)?;
                let cp = 2f64.sqrt() / c.norm();
                let m = cp - (cp * cp - 1.0).sqrt();
                let cuts = (0..4)
                    .map(|k| hypercycle_cut(FRAC_PI_4 + k as f64 * FRAC_PI_2, m, d))
                    .collect();
                let dom = disk_domain(Some(group), cuts, Metric::Hyperbolic { kappa0: k0 })?;
                (Metric::Hyperbolic { kappa0: k0 }, ModelGeometry::Disk(dom), GridSpec::square(config.n))
            }
            ModelKind::Cylinder { eps } => {
                if !(0.0..=2f64.acosh()).contains(&eps) {
                    return Err(invalid("eps", format!("{eps} outside [0, arccosh 2]")));
                }
                (Metric::Warped { eps }, ModelGeometry::Cylinder { eps }, GridSpec::cylinder(config.n))
            }
            ModelKind::HyperbolicDisk { radius } | ModelKind::FlatDisk { radius } => {
                if !(radius > 0.0 && radius < 1.0) {
                    return Err(invalid("radius", format!("{radius} outside (0, 1)")));
                }
                let metric = if matches!(config.kind, ModelKind::FlatDisk { .. }) {
                    Metric::Flat
                } else {
                    Metric::Hyperbolic { kappa0: k0 }
                };
                let cuts = vec![HCircle::from_circle(C64::new(0.0, 0.0), radius, false)];
                let dom = disk_domain(None, cuts, metric)?;
                (metric, ModelGeometry::Disk(dom), GridSpec::square(config.n))
            }
        };
        let mut model = SurfaceModel {
            config: config.clone(),
            metric,
            geometry,
            mask: Vec::new(),
            hash: model_hash(config),
            grid,
        };
        model.mask = (0..grid.len())
            .map(|k| model.contains(grid.center(k % grid.n, k / grid.n)))
            .collect();
        Ok(model)
    }

    pub fn grid_spec(&self) -> GridSpec {
        self.grid
    }

    /// Curvature scale of constant-curvature hyperbolic models.
    pub fn kappa0(&self) -> Option<f64> {
        match self.metric {
            Metric::Hyperbolic { kappa0 } => Some(kappa0),
            _ => None,
        }
    }

    pub fn disk(&self) -> Option<&DiskDomain> {
        match &self.geometry {
            ModelGeometry::Disk(d) => Some(d),
            _ => None,
        }
    }

    pub fn group(&self) -> Option<&SchottkyGroup> {
        self.disk().and_then(|d| d.group.as_ref())
    }

    /// Inside the unit disk and on the kept side of every cut (walls ignored).
    #[inline]
    pub fn inside_cuts(&self, p: C64) -> bool {
        match &self.geometry {
            ModelGeometry::Disk(d) => p.norm_sqr() < 1.0 && d.cuts.iter().all(|c| c.q(p) >= 0.0),
            ModelGeometry::Cylinder { .. } => p.im.abs() <= 1.0,
        }
    }

    #[inline]
    pub fn contains(&self, p: C64) -> bool {
        if !self.inside_cuts(p) {
            return false;
        }
        match self.group() {
            Some(g) => g.contains(p),
            None => true,
        }
    }

    pub fn curvature(&self, p: C64) -> Result<f64> {
        if !self.contains(p) {
            return Err(Error::OutsideSurface);
        }
        Ok(self.metric.curvature(p.re, p.im))
    }

    /// −e^{−2φ}Δφ (isothermal) or −h''/h (warped) by central differences.
    pub fn curvature_fd(&self, p: C64, h: f64) -> f64 {
        let (x, y) = (p.re, p.im);
        match self.metric.conformal(x, y) {
            Some((phi, _, _)) => {
                let f = |a: f64, b: f64| self.metric.conformal(a, b).expect("isothermal").0;
                let lap = (f(x + h, y) + f(x - h, y) + f(x, y + h) + f(x, y - h) - 4.0 * phi) / (h * h);
                -(-2.0 * phi).exp() * lap
            }
            None => {
                let f = |b: f64| self.metric.coframe(x, b).0;
                -(f(y + h) - 2.0 * f(y) + f(y - h)) / (h * h) / f(y)
            }
        }
    }

    pub fn curvature_gradient_sup(&self) -> f64 {
        let g = self.grid;
        (0..g.len())
            .filter(|&k| self.mask[k])
            .map(|k| {
                let p = g.center(k % g.n, k / g.n);
                self.metric.dkappa_norm(p.re, p.im)
            })
            .fold(0.0, f64::max)
    }

    pub fn n_components(&self) -> usize {
        match &self.geometry {
            ModelGeometry::Disk(d) => d.components.len(),
            ModelGeometry::Cylinder { .. } => 2,
        }
    }

    pub fn boundary_length(&self, comp: usize) -> f64 {
        match &self.geometry {
            ModelGeometry::Disk(d) => d.components[comp].length,
            ModelGeometry::Cylinder { .. } => 2.0 * self.metric.coframe(0.0, 1.0).0,
        }
    }

    fn sample_at(&self, comp: usize, s: f64, pos: C64, normal_angle: f64) -> BoundarySample {
        let (p, q) = self.metric.coframe(pos.re, pos.im);
        let (sn, cn) = normal_angle.sin_cos();
        BoundarySample {
            component: comp,
            s,
            pos,
            normal_angle,
            normal: [cn / p, sn / q],
            tangent: [sn / p, -cn / q],
        }
    }

    /// Inner normal frame angle at a boundary point on cut `cut` (disk) or side y = ±1 (cylinder).
    pub fn normal_angle_at(&self, p: C64, cut: usize) -> f64 {
        match &self.geometry {
            ModelGeometry::Disk(d) => d.cuts[cut].grad(p).arg(),
            ModelGeometry::Cylinder { .. } => {
                if cut == 0 {
                    FRAC_PI_2
                } else {
                    -FRAC_PI_2
                }
            }
        }
    }

    pub fn boundary_point(&self, comp: usize, s: f64) -> BoundarySample {
        let s = s.rem_euclid(1.0);
        match &self.geometry {
            ModelGeometry::Disk(d) => {
                let c = &d.components[comp];
                let target = s * c.length;
                let k = c
                    .pieces
                    .partition_point(|p| p.offset <= target)
                    .clamp(1, c.pieces.len())
                    - 1;
                let piece = &c.pieces[k];
                let u = piece.u_of_length(target - piece.offset);
                let pos = piece.point(u);
                self.sample_at(comp, s, pos, self.normal_angle_at(pos, piece.cut))
            }
            ModelGeometry::Cylinder { .. } => {
                let y = if comp == 0 { -1.0 } else { 1.0 };
                let pos = C64::new(2.0 * s, y);
                self.sample_at(comp, s, pos, self.normal_angle_at(pos, comp))
            }
        }
    }

    /// (component, s) of a point on cut `cut`.
    pub fn boundary_locate(&self, p: C64, cut: usize) -> (usize, f64) {
        match &self.geometry {
            ModelGeometry::Disk(d) => {
                let (comp, k) = d.cut_piece[cut];
                let c = &d.components[comp];
                let piece = &c.pieces[k];
                let l = piece.offset + piece.length_of_u(piece.u_of_point(p));
                let s = l / c.length;
                (comp, if s >= 1.0 { s - 1.0 } else { s })
            }
            ModelGeometry::Cylinder { .. } => {
                let s = (p.re / 2.0).rem_euclid(1.0);
                (cut, if s >= 1.0 { 0.0 } else { s })
            }
        }
    }

    /// `n` samples per component at s = (i + ½)/n.
    pub fn boundary_parameterize(&self, n: usize) -> Vec<BoundarySample> {
        (0..self.n_components())
            .flat_map(|c| (0..n).map(move |i| (c, (i as f64 + 0.5) / n as f64)))
            .map(|(c, s)| self.boundary_point(c, s))
            .collect()
    }

    /// Geodesic curvature of the boundary with respect to the inner normal, by three-point differences.
    pub fn boundary_geodesic_curvature(&self, comp: usize, s: f64) -> f64 {
        let ds = 1e-4;
        let b = self.boundary_point(comp, s);
        let p0 = self.boundary_point(comp, s - ds).pos;
        let p2 = self.boundary_point(comp, s + ds).pos;
        let p1 = b.pos;
        match self.metric.conformal(p1.re, p1.im) {
            Some((phi, px, py)) => {
                // Euclidean curvature of the circle through three points, signed toward the inner normal.
                let a = (p1 - p0).norm();
                let bb = (p2 - p1).norm();
                let c = (p2 - p0).norm();
                let cross = ((p1 - p0).conj() * (p2 - p0)).im;
                let ke = 2.0 * cross.abs() / (a * bb * c);
                let mid = (p0 + p2) / 2.0 - p1;
                let n = C64::from_polar(1.0, b.normal_angle);
                let sign = if (mid.conj() * n).re >= 0.0 { 1.0 } else { -1.0 };
                let dn_phi = px * n.re + py * n.im;
                (-phi).exp() * (sign * ke - dn_phi)
            }
            None => {
                let h = |y: f64| self.metric.coframe(0.0, y).0;
                let y = p1.im;
                let dlogh = (h(y + 1e-6).ln() - h(y - 1e-6).ln()) / 2e-6;
                -dlogh * b.normal[1]
            }
        }
    }

    /// Applies side identifications to a phase state; returns the letters used.
    #[inline]
    pub fn fold_state(
        &self,
        x: &mut f64,
        y: &mut f64,
        theta: &mut f64,
        mut word: Option<&mut Vec<Letter>>,
    ) -> Result<u32> {
        match &self.geometry {
            ModelGeometry::Disk(d) => {
                let Some(g) = &d.group else { return Ok(0) };
                let mut z = C64::new(*x, *y);
                let mut count = 0u32;
                while let Some(w) = g.walls.iter().find(|w| w.circle.q(z) < 0.0) {
                    *theta += w.fold.derivative(z).arg();
                    z = w.fold.eval(z);
                    if let (Some(word), Some(l)) = (word.as_deref_mut(), w.fold.label) {
                        word.push(l.inverse());
                    }
                    count += 1;
                    if count as usize > FOLD_CAP {
                        return Err(Error::FoldCapExceeded(FOLD_CAP));
                    }
                }
                *x = z.re;
                *y = z.im;
                Ok(count)
            }
            ModelGeometry::Cylinder { .. } => {
                if !(0.0..2.0).contains(x) {
                    *x = x.rem_euclid(2.0);
                    Ok(1)
                } else {
                    Ok(0)
                }
            }
        }
    }

    /// Smallest cut function value (negative once outside); `(value, cut index)`.
    #[inline]
    pub fn exit_function(&self, x: f64, y: f64) -> (f64, usize) {
        match &self.geometry {
            ModelGeometry::Disk(d) => {
                let z = C64::new(x, y);
                let mut best = (f64::INFINITY, 0);
                for (k, c) in d.cuts.iter().enumerate() {
                    let q = c.q(z);
                    if q < best.0 {
                        best = (q, k);
                    }
                }
                best
            }
            ModelGeometry::Cylinder { .. } => {
                if y < 0.0 {
                    (1.0 + y, 0)
                } else {
                    (1.0 - y, 1)
                }
            }
        }
    }

    /// Upper bound on the area density over the domain and the bounding box, for rejection sampling.
    pub fn sampling_box(&self) -> ([f64; 4], f64) {
        match &self.geometry {
            ModelGeometry::Disk(d) => {
                let mut rmax: f64 = 0.0;
                for c in 0..d.components.len() {
                    for k in 0..2000 {
                        rmax = rmax.max(self.boundary_point(c, k as f64 / 2000.0).pos.norm());
                    }
                }
                for k in 0..self.grid.len() {
                    if self.mask[k] {
                        rmax = rmax.max(self.grid.center(k % self.grid.n, k / self.grid.n).norm());
                    }
                }
                let r = (rmax + self.grid.cell).min(1.0 - 1e-9);
                (
                    [-r, r, -r, r],
                    self.metric.volume_density(r, 0.0),
                )
            }
            ModelGeometry::Cylinder { .. } => ([0.0, 2.0, -1.0, 1.0], self.metric.volume_density(0.0, 1.0)),
        }
    }
}

fn check_x(x: f64) -> Result<()> {
    if !(x > -1.0 && x < 0.0) {
        return Err(invalid("x", format!("{x} outside (-1, 0)")));
    }
    Ok(())
}

fn cut_distance(config: &ModelConfig, default: f64) -> Result<f64> {
    let d = config.cut_distance.unwrap_or(default);
    if !(d > 0.0 && d.is_finite()) {
        return Err(invalid("cut_distance", "must be positive"));
    }
    Ok(d)
}

fn model_hash(config: &ModelConfig) -> String {
    let desc = format!(
        "{:?}|kappa0={:016x}|n={}|cut={:?}",
        config.kind,
        config.kappa0.to_bits(),
        config.n,
        config.cut_distance.map(f64::to_bits)
    );
    hex::encode(&Sha256::digest(desc.as_bytes())[..8])
}

fn in_domain(group: &Option<SchottkyGroup>, cuts: &[HCircle], p: C64, skip_cut: usize) -> bool {
    p.norm_sqr() < 1.0
        && cuts
            .iter()
            .enumerate()
            .all(|(k, c)| k == skip_cut || c.q(p) >= -1e-12)
        && group
            .as_ref()
            .is_none_or(|g| g.walls.iter().all(|w| w.circle.q(p) >= -1e-12))
}

fn arc_table(center: C64, radius: f64, a0: f64, sweep: f64, metric: Metric) -> Vec<f64> {
    const K: usize = 4096;
    let speed = |u: f64| {
        let p = center + C64::from_polar(radius, a0 + sweep * u);
        metric.coframe(p.re, p.im).0 * radius * sweep.abs()
    };
    let mut cum = Vec::with_capacity(K + 1);
    cum.push(0.0);
    let mut prev = speed(0.0);
    for i in 1..=K {
        // Simpson on each subinterval
        let u0 = (i - 1) as f64 / K as f64;
        let u1 = i as f64 / K as f64;
        let mid = speed(0.5 * (u0 + u1));
        let next = speed(u1);
        let last = *cum.last().expect("nonempty");
        cum.push(last + (u1 - u0) / 6.0 * (prev + 4.0 * mid + next));
        prev = next;
    }
    cum
}

fn disk_domain(group: Option<SchottkyGroup>, cuts: Vec<HCircle>, metric: Metric) -> Result<DiskDomain> {
    struct Raw {
        cut: usize,
        center: C64,
        radius: f64,
        ends: [(C64, usize); 2],
    }
    let mut raws = Vec::new();
    let mut closed = Vec::new();
    for (k, cut) in cuts.iter().enumerate() {
        let (center, radius) = cut
            .center_radius()
            .ok_or_else(|| invalid("cut", "degenerate cut circle"))?;
        let mut ends = Vec::new();
        if let Some(g) = &group {
            for (wi, w) in g.walls.iter().enumerate() {
                for p in circle_intersections(center, radius, w.center, w.radius) {
                    if in_domain(&group, &cuts, p, k) && cuts[k].q(p).abs() < 1e-9 {
                        ends.push((p, wi));
                    }
                }
            }
        }
        match ends.len() {
            0 => closed.push(k),
            2 => raws.push(Raw {
                cut: k,
                center,
                radius,
                ends: [ends[0], ends[1]],
            }),
            n => return Err(invalid("cut", format!("cut {k} meets the walls {n} times"))),
        }
    }
    let mut components = Vec::new();
    let mut cut_piece = vec![(0, 0); cuts.len()];
    for k in closed {
        let (center, radius) = cuts[k].center_radius().expect("checked");
        let cum = arc_table(center, radius, 0.0, TAU, metric);
        let length = *cum.last().expect("nonempty");
        cut_piece[k] = (components.len(), 0);
        components.push(BoundaryComponent {
            pieces: vec![ArcPiece {
                cut: k,
                center,
                radius,
                a0: 0.0,
                sweep: TAU,
                offset: 0.0,
                length,
                cum,
            }],
            length,
        });
    }
    if let Some(g) = &group {
        let mut visited = vec![false; raws.len()];
        for start in 0..raws.len() {
            if visited[start] {
                continue;
            }
            let mut pieces = Vec::new();
            let mut cur = start;
            let mut from = 0usize;
            let mut offset = 0.0;
            loop {
                if visited[cur] {
                    return Err(invalid("cut", "boundary arcs do not close up"));
                }
                visited[cur] = true;
                let r = &raws[cur];
                let (pa, _) = r.ends[from];
                let (pb, wb) = r.ends[1 - from];
                let aa = (pa - r.center).arg();
                let ab = (pb - r.center).arg();
                let mut sweep = wrap_pi(ab - aa);
                let mid = r.center + C64::from_polar(r.radius, aa + sweep / 2.0);
                if !in_domain(&group, &cuts, mid, r.cut) {
                    sweep -= sweep.signum() * TAU;
                }
                let cum = arc_table(r.center, r.radius, aa, sweep, metric);
                let length = *cum.last().expect("nonempty");
                cut_piece[r.cut] = (components.len(), pieces.len());
                pieces.push(ArcPiece {
                    cut: r.cut,
                    center: r.center,
                    radius: r.radius,
                    a0: aa,
                    sweep,
                    offset,
                    length,
                    cum,
                });
                offset += length;
                let wall = &g.walls[wb];
                let q = wall.fold.eval(pb);
                let next = raws.iter().enumerate().find_map(|(i, rr)| {
                    (0..2).find_map(|e| {
                        (rr.ends[e].1 == wall.partner && (rr.ends[e].0 - q).norm() < 1e-7).then_some((i, e))
                    })
                });
                let (ni, ne) = next.ok_or_else(|| invalid("cut", "glued arc endpoint not found"))?;
                if ni == start {
                    break;
                }
                cur = ni;
                from = ne;
            }
            components.push(BoundaryComponent {
                pieces,
                length: offset,
            });
        }
    }
    Ok(DiskDomain {
        group,
        cuts,
        components,
        cut_piece,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn build(kind: ModelKind, n: usize) -> SurfaceModel {
        SurfaceModel::build(&ModelConfig::new(kind, n)).unwrap()
    }

    #[test]
    fn component_counts() {
        assert_eq!(build(ModelKind::SchottkyOneGen { x: -0.3 }, 32).n_components(), 2);
        assert_eq!(build(ModelKind::SchottkyTorus { x: -0.6 }, 32).n_components(), 1);
        assert_eq!(build(ModelKind::SchottkyTorus { x: -0.5 }, 32).n_components(), 1);
        assert_eq!(build(ModelKind::SchottkyPants { x: -0.6 }, 32).n_components(), 3);
        assert_eq!(build(ModelKind::Cylinder { eps: 0.4 }, 32).n_components(), 2);
        assert_eq!(build(ModelKind::HyperbolicDisk { radius: 0.6 }, 32).n_components(), 1);
    }

    #[test]
    fn torus_has_four_walls() {
        let m = build(ModelKind::SchottkyTorus { x: -0.5 }, 32);
        let g = m.group().unwrap();
        assert_eq!(g.walls.len(), 4);
        let feet: Vec<C64> = g.walls.iter().map(|w| w.center - w.center / w.center.norm() * w.radius).collect();
        for target in [C64::new(-0.5, 0.0), C64::new(0.5, 0.0), C64::new(0.0, -0.5), C64::new(0.0, 0.5)] {
            assert!(feet.iter().any(|f| (f - target).norm() < 1e-12));
        }
    }

    #[test]
    fn parameter_validation() {
        assert!(SurfaceModel::build(&ModelConfig::new(ModelKind::SchottkyTorus { x: -0.3 }, 32)).is_err());
        assert!(SurfaceModel::build(&ModelConfig::new(ModelKind::SchottkyOneGen { x: 0.3 }, 32)).is_err());
        assert!(SurfaceModel::build(&ModelConfig::new(ModelKind::Cylinder { eps: 1.4 }, 32)).is_err());
        assert!(SurfaceModel::build(&ModelConfig::new(ModelKind::Cylinder { eps: 0.4 }, 8)).is_err());
        assert!(matches!(
            SurfaceModel::build(&ModelConfig::new(ModelKind::SchottkyPants { x: -0.4 }, 32)),
            Err(Error::IntersectingWalls(_))
        ));
    }

    #[test]
    fn curvature_values() {
        let c0 = build(ModelKind::Cylinder { eps: 0.0 }, 32);
        for y in [-0.9, 0.0, 0.5] {
            assert!((c0.curvature(C64::new(1.0, y)).unwrap() + 1.0).abs() < 1e-15);
        }
        let c = build(ModelKind::Cylinder { eps: 0.4 }, 32);
        assert!((c.curvature(C64::new(0.3, 0.0)).unwrap() + 1.16).abs() < 1e-15);
        for k in 0..=40 {
            let y = -1.0 + k as f64 / 20.0;
            let kap = c.curvature(C64::new(0.7, y)).unwrap();
            assert!(kap >= -(1.4f64).powi(2) && kap <= -1.16 + 1e-15);
            assert!((c.curvature_fd(C64::new(0.7, y), 1e-4) - kap).abs() < 1e-6);
        }
        let m = build(ModelKind::SchottkyOneGen { x: -0.3 }, 64);
        let mut state = 7u64;
        let mut count = 0;
        while count < 10 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let p = C64::new(((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5, ((state >> 3) % 1000) as f64 / 1000.0 - 0.5);
            if m.contains(p) {
                assert!((m.curvature(p).unwrap() + 1.0).abs() < 1e-8);
                assert!((m.curvature_fd(p, 1e-4) + 1.0).abs() < 1e-5);
                count += 1;
            }
        }
        assert!(m.curvature(C64::new(0.0, 0.99)).is_err());
    }

    #[test]
    fn curvature_gradient_bounds() {
        let c = build(ModelKind::Cylinder { eps: 0.4 }, 64);
        let s = c.curvature_gradient_sup();
        assert!(s > 0.0 && s <= 2.0 * 0.4 * 1.4);
        assert_eq!(build(ModelKind::Cylinder { eps: 0.0 }, 32).curvature_gradient_sup(), 0.0);
        assert!(build(ModelKind::SchottkyOneGen { x: -0.3 }, 32).curvature_gradient_sup().abs() < 1e-8);
    }

    #[test]
    fn cylinder_normals_unit() {
        let c = build(ModelKind::Cylinder { eps: 0.4 }, 32);
        for b in c.boundary_parameterize(10) {
            let (p, q) = c.metric.coframe(b.pos.re, b.pos.im);
            let nn = (p * b.normal[0]).powi(2) + (q * b.normal[1]).powi(2);
            assert!((nn - 1.0).abs() < 1e-10);
            let expect = if b.component == 0 { 1.0 } else { -1.0 };
            assert_eq!(b.normal[1], expect);
        }
    }

    #[test]
    fn hypercycle_boundary_curvature() {
        let d = 0.9;
        let mut cfg = ModelConfig::new(ModelKind::SchottkyOneGen { x: -0.3 }, 32);
        cfg.cut_distance = Some(d);
        let m = SurfaceModel::build(&cfg).unwrap();
        for c in 0..2 {
            for k in 0..7 {
                let kg = m.boundary_geodesic_curvature(c, (k as f64 + 0.3) / 7.0);
                assert!((kg - d.tanh()).abs() < 1e-4, "{kg}");
            }
        }
    }

    #[test]
    fn boundaries_strictly_convex() {
        for kind in [
            ModelKind::SchottkyOneGen { x: -0.3 },
            ModelKind::SchottkyTorus { x: -0.6 },
            ModelKind::SchottkyPants { x: -0.6 },
            ModelKind::Cylinder { eps: 0.4 },
            ModelKind::HyperbolicDisk { radius: 0.6 },
        ] {
            let m = build(kind, 32);
            for c in 0..m.n_components() {
                for k in 0..50 {
                    assert!(m.boundary_geodesic_curvature(c, (k as f64 + 0.5) / 50.0) > 0.0, "{kind:?}");
                }
            }
        }
    }

    #[test]
    fn boundary_samples_consistent() {
        for kind in [
            ModelKind::SchottkyOneGen { x: -0.3 },
            ModelKind::SchottkyTorus { x: -0.6 },
            ModelKind::SchottkyPants { x: -0.6 },
            ModelKind::Cylinder { eps: 0.4 },
            ModelKind::HyperbolicDisk { radius: 0.6 },
            ModelKind::FlatDisk { radius: 0.7 },
        ] {
            let m = build(kind, 64);
            let cell = m.grid_spec().cell;
            for b in m.boundary_parameterize(40) {
                let (p, q) = m.metric.coframe(b.pos.re, b.pos.im);
                let ip = p * p * b.normal[0] * b.tangent[0] + q * q * b.normal[1] * b.tangent[1];
                assert!(ip.abs() < 1e-10);
                let inward = b.pos + C64::new(b.normal[0] / p.max(q) , b.normal[1] / p.max(q)) * 1e-3 * p.min(q);
                assert!(m.contains(inward), "{kind:?} {b:?}");
                // near the mask edge: some masked cell within one cell width
                let near = (0..m.mask.len()).any(|k| {
                    m.mask[k] && {
                        let c = m.grid_spec().center(k % 64, k / 64);
                        let mut dx = (c.re - b.pos.re).abs();
                        if m.grid_spec().periodic_x {
                            dx = dx.min(2.0 - dx);
                        }
                        dx <= cell && (c.im - b.pos.im).abs() <= cell
                    }
                });
                assert!(near, "{kind:?} {b:?}");
                let (comp, s) = m.boundary_locate(b.pos, cut_of(&m, &b));
                assert_eq!(comp, b.component);
                let ds = (s - b.s).abs();
                assert!(ds.min(1.0 - ds) < 1e-6, "{kind:?} {s} {}", b.s);
            }
        }
    }

    fn cut_of(m: &SurfaceModel, b: &BoundarySample) -> usize {
        match &m.geometry {
            ModelGeometry::Disk(d) => (0..d.cuts.len())
                .min_by(|&i, &j| d.cuts[i].q(b.pos).abs().partial_cmp(&d.cuts[j].q(b.pos).abs()).unwrap())
                .unwrap(),
            ModelGeometry::Cylinder { .. } => b.component,
        }
    }

    #[test]
    fn one_gen_default_cut_height() {
        let x = -0.3;
        let d = one_gen_default_cut(x);
        let m = build(ModelKind::SchottkyOneGen { x }, 32);
        // the top cut crosses the left wall at half the wall's height
        let g = m.group().unwrap();
        let w = g.walls.iter().find(|w| w.center.re < 0.0).unwrap();
        let dd = m.disk().unwrap();
        let (c, r) = dd.cuts[0].center_radius().unwrap();
        let hit = circle_intersections(c, r, w.center, w.radius)
            .into_iter()
            .find(|p| p.norm() < 1.0)
            .unwrap();
        let top = (1.0 - 1.0 / w.center.re.powi(2)).sqrt();
        assert!((hit.im - top / 2.0).abs() < 1e-9, "{d} {hit}");
    }

    #[test]
    fn hash_distinguishes_models() {
        let a = build(ModelKind::SchottkyOneGen { x: -0.3 }, 32).hash;
        let b = build(ModelKind::SchottkyOneGen { x: -0.31 }, 32).hash;
        let c = build(ModelKind::SchottkyOneGen { x: -0.3 }, 33).hash;
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, build(ModelKind::SchottkyOneGen { x: -0.3 }, 32).hash);
        assert_eq!(a.len(), 16);
    }

    proptest! {
        #[test]
        fn cylinder_periodic(x in 0.0..2.0f64, y in -1.0..1.0f64, th in 0.0..6.3f64, eps in 0.0..1.3f64) {
            let m = Metric::Warped { eps };
            prop_assert_eq!(m.rhs(x, y, th), m.rhs(x + 2.0, y, th));
            prop_assert_eq!(m.coframe(x, y), m.coframe(x + 2.0, y));
            prop_assert_eq!(m.curvature(x, y), m.curvature(x + 2.0, y));
        }

        #[test]
        fn deck_transforms_are_isometries(re in -0.5..0.5f64, im in -0.5..0.5f64) {
            let m = build(ModelKind::SchottkyTorus { x: -0.6 }, 32);
            let g = m.group().unwrap();
            let z = C64::new(re, im);
            for gen in &g.generators {
                // e^{φ(γz)} |γ'(z)| = e^{φ(z)}
                let w = gen.eval(z);
                let lhs = m.metric.coframe(w.re, w.im).0 * gen.derivative(z).norm();
                let rhs = m.metric.coframe(z.re, z.im).0;
                prop_assert!((lhs / rhs - 1.0).abs() < 1e-10);
            }
        }
    }
}
