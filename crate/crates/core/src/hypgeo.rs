//! Hyperbolic geometry of the Poincaré disk: Möbius transforms in SU(1,1)
//! form, distances, exact geodesics, generalized circles and Schottky groups.

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};

pub type C64 = Complex64;

pub const FOLD_CAP: usize = 200;

/// A generator letter: `gen` indexes the group's generators, `inv` selects the inverse.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Letter {
    pub gen: u8,
    pub inv: bool,
}

impl Letter {
    pub fn new(gen: u8, inv: bool) -> Self {
        Letter { gen, inv }
    }

    pub fn inverse(self) -> Self {
        Letter {
            gen: self.gen,
            inv: !self.inv,
        }
    }
}

/// z ↦ (αz + β)/(β̄z + ᾱ) with |α|² − |β|² = 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mobius {
    pub alpha: C64,
    pub beta: C64,
    pub label: Option<Letter>,
}

impl Mobius {
    pub fn identity() -> Self {
        Mobius {
            alpha: C64::new(1.0, 0.0),
            beta: C64::new(0.0, 0.0),
            label: None,
        }
    }

    /// Builds from raw coefficients and rescales onto the unit-determinant sheet.
    pub fn new(alpha: C64, beta: C64) -> Result<Self> {
        let det = alpha.norm_sqr() - beta.norm_sqr();
        if !(det > 0.0) || !det.is_finite() {
            return Err(invalid("mobius", "|alpha|^2 - |beta|^2 must be positive"));
        }
        let s = det.sqrt();
        Ok(Mobius {
            alpha: alpha / s,
            beta: beta / s,
            label: None,
        })
    }

    /// The translation z ↦ (z − a)/(1 − āz), sending a to 0.
    pub fn translation(a: C64) -> Result<Self> {
        if a.norm() >= 1.0 {
            return Err(Error::OutsideDisk(a));
        }
        Mobius::new(C64::new(1.0, 0.0), -a)
    }

    /// z ↦ e^{iψ} z.
    pub fn rotation(psi: f64) -> Self {
        Mobius {
            alpha: C64::from_polar(1.0, psi / 2.0),
            beta: C64::new(0.0, 0.0),
            label: None,
        }
    }

    pub fn with_label(mut self, label: Letter) -> Self {
        self.label = Some(label);
        self
    }

    pub fn det(&self) -> f64 {
        self.alpha.norm_sqr() - self.beta.norm_sqr()
    }

    #[inline]
    pub fn eval(&self, z: C64) -> C64 {
        (self.alpha * z + self.beta) / (self.beta.conj() * z + self.alpha.conj())
    }

    pub fn apply(&self, z: C64) -> Result<C64> {
        if !(z.norm_sqr() < 1.0) {
            return Err(Error::OutsideDisk(z));
        }
        Ok(self.eval(z))
    }

    #[inline]
    pub fn derivative(&self, z: C64) -> C64 {
        let d = self.beta.conj() * z + self.alpha.conj();
        1.0 / (d * d)
    }

    pub fn inverse(&self) -> Self {
        Mobius {
            alpha: self.alpha.conj(),
            beta: -self.beta,
            label: self.label.map(Letter::inverse),
        }
    }

    /// `self ∘ other`, renormalized.
    pub fn compose(&self, other: &Mobius) -> Self {
        let alpha = self.alpha * other.alpha + self.beta * other.beta.conj();
        let beta = self.alpha * other.beta + self.beta * other.alpha.conj();
        let s = (alpha.norm_sqr() - beta.norm_sqr()).sqrt();
        Mobius {
            alpha: alpha / s,
            beta: beta / s,
            label: None,
        }
    }

    /// Distance to another transform as projective matrices (sign ambiguity removed).
    pub fn distance(&self, other: &Mobius) -> f64 {
        let d1 = (self.alpha - other.alpha).norm() + (self.beta - other.beta).norm();
        let d2 = (self.alpha + other.alpha).norm() + (self.beta + other.beta).norm();
        d1.min(d2)
    }

    fn matrix(&self) -> [[C64; 2]; 2] {
        [
            [self.alpha, self.beta],
            [self.beta.conj(), self.alpha.conj()],
        ]
    }
}

/// Hyperbolic distance in the unit-curvature disk.
pub fn hyperbolic_distance(z: C64, w: C64) -> Result<f64> {
    for p in [z, w] {
        if !(p.norm_sqr() < 1.0) {
            return Err(Error::OutsideDisk(p));
        }
    }
    Ok(distance_unchecked(z, w))
}

#[inline]
pub(crate) fn distance_unchecked(z: C64, w: C64) -> f64 {
    let num = 2.0 * (z - w).norm_sqr();
    let den = (1.0 - z.norm_sqr()) * (1.0 - w.norm_sqr());
    (1.0 + num / den).acosh()
}

/// cosh of the unit-curvature distance, without the arccosh.
#[inline]
pub(crate) fn cosh_distance(z: C64, w: C64) -> f64 {
    1.0 + 2.0 * (z - w).norm_sqr() / ((1.0 - z.norm_sqr()) * (1.0 - w.norm_sqr()))
}

/// Distance in the disk of curvature −κ₀.
pub fn scaled_distance(z: C64, w: C64, kappa0: f64) -> Result<f64> {
    Ok(hyperbolic_distance(z, w)? / kappa0.sqrt())
}

/// Isometry sending (z, θ) to (0, 0): translate z to the origin, then rotate the direction onto +1.
pub fn normalizing_map(z: C64, theta: f64) -> Mobius {
    let t = Mobius::new(C64::new(1.0, 0.0), -z).expect("interior point");
    Mobius::rotation(-theta).compose(&t)
}

/// Geodesic flow for time `t` in the disk of curvature −κ₀. Returns (z(t), θ(t)).
pub fn exact_geodesic_flow(z: C64, theta: f64, t: f64, kappa0: f64) -> Result<(C64, f64)> {
    if !(z.norm_sqr() < 1.0) {
        return Err(Error::OutsideDisk(z));
    }
    if !(kappa0 > 0.0) {
        return Err(invalid("kappa0", "must be positive"));
    }
    let u = (kappa0.sqrt() * t / 2.0).tanh();
    let back = normalizing_map(z, theta).inverse();
    let w = back.eval(C64::new(u, 0.0));
    let dir = back.derivative(C64::new(u, 0.0)).arg();
    Ok((w, wrap_angle(dir)))
}

/// Maps an angle into [0, 2π).
#[inline]
pub fn wrap_angle(a: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let r = a.rem_euclid(tau);
    if r >= tau {
        0.0
    } else {
        r
    }
}

/// Generalized circle {q = 0} with q(z) = a|z|² + 2Re(b̄z) + c.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HCircle {
    pub a: f64,
    pub b: C64,
    pub c: f64,
}

impl HCircle {
    /// Circle with q < 0 strictly inside when `inside_negative`, strictly outside otherwise.
    pub fn from_circle(center: C64, radius: f64, inside_negative: bool) -> Self {
        let s = if inside_negative { 1.0 } else { -1.0 };
        HCircle {
            a: s,
            b: -center * s,
            c: s * (center.norm_sqr() - radius * radius),
        }
    }

    #[inline]
    pub fn q(&self, z: C64) -> f64 {
        self.a * z.norm_sqr() + 2.0 * (self.b.conj() * z).re + self.c
    }

    /// Image circle under `m`, with the sign of q carried along.
    pub fn transform(&self, m: &Mobius) -> HCircle {
        let n = m.inverse().matrix();
        let h = [
            [C64::new(self.a, 0.0), self.b],
            [self.b.conj(), C64::new(self.c, 0.0)],
        ];
        // N^* H N
        let mut hn = [[C64::new(0.0, 0.0); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                hn[i][j] = h[i][0] * n[0][j] + h[i][1] * n[1][j];
            }
        }
        let mut out = [[C64::new(0.0, 0.0); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = n[0][i].conj() * hn[0][j] + n[1][i].conj() * hn[1][j];
            }
        }
        HCircle {
            a: out[0][0].re,
            b: out[0][1],
            c: out[1][1].re,
        }
    }

    /// Scale-free representative for comparisons (sign preserved).
    pub fn normalized(&self) -> HCircle {
        let s = (self.a * self.a + 2.0 * self.b.norm_sqr() + self.c * self.c).sqrt();
        HCircle {
            a: self.a / s,
            b: self.b / s,
            c: self.c / s,
        }
    }

    pub fn center_radius(&self) -> Option<(C64, f64)> {
        if self.a.abs() < 1e-14 {
            return None;
        }
        let center = -self.b / self.a;
        let r2 = center.norm_sqr() - self.c / self.a;
        (r2 > 0.0).then(|| (center, r2.sqrt()))
    }

    /// Euclidean gradient of q.
    #[inline]
    pub fn grad(&self, z: C64) -> C64 {
        2.0 * (self.a * z + self.b)
    }
}

/// Circle orthogonal to the unit circle crossing the real axis at `x` (0 < |x| < 1).
pub fn orthogonal_wall_real(x: f64) -> (C64, f64) {
    let c = (1.0 + x * x) / (2.0 * x);
    (C64::new(c, 0.0), (c * c - 1.0).sqrt())
}

/// Wall of a Schottky fundamental domain; beyond the wall q < 0.
#[derive(Clone, Debug)]
pub struct Wall {
    pub circle: HCircle,
    pub center: C64,
    pub radius: f64,
    /// Transform mapping the far side of this wall back across the partner wall.
    pub fold: Mobius,
    pub partner: usize,
}

#[derive(Clone, Debug)]
pub struct SchottkyGroup {
    pub generators: Vec<Mobius>,
    pub walls: Vec<Wall>,
}

impl SchottkyGroup {
    /// Pairs walls by generators: each generator must carry one wall onto another.
    pub fn new(generators: Vec<Mobius>, walls: Vec<(C64, f64)>) -> Result<Self> {
        let circles: Vec<HCircle> = walls
            .iter()
            .map(|&(c, r)| HCircle::from_circle(c, r, true))
            .collect();
        for i in 0..walls.len() {
            for j in i + 1..walls.len() {
                let d = (walls[i].0 - walls[j].0).norm();
                if d <= walls[i].1 + walls[j].1 {
                    return Err(invalid("walls", "wall arcs intersect"));
                }
            }
        }
        let gens: Vec<Mobius> = generators
            .into_iter()
            .enumerate()
            .map(|(k, g)| g.with_label(Letter::new(k as u8, false)))
            .collect();
        let mut out: Vec<Option<Wall>> = vec![None; walls.len()];
        for g in &gens {
            for cand in [*g, g.inverse()] {
                // cand sends the far side of wall i onto the near side of wall j
                for i in 0..walls.len() {
                    let img = circles[i].transform(&cand).normalized();
                    for j in 0..walls.len() {
                        let target = circles[j].normalized();
                        let flipped = HCircle {
                            a: -target.a,
                            b: -target.b,
                            c: -target.c,
                        };
                        let err = (img.a - flipped.a).abs()
                            + (img.b - flipped.b).norm()
                            + (img.c - flipped.c).abs();
                        if err < 1e-9 && i != j {
                            out[i] = Some(Wall {
                                circle: circles[i],
                                center: walls[i].0,
                                radius: walls[i].1,
                                fold: cand,
                                partner: j,
                            });
                        }
                    }
                }
            }
        }
        let walls = out
            .into_iter()
            .enumerate()
            .map(|(i, w)| w.ok_or_else(|| invalid("walls", format!("wall {i} has no pairing"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(SchottkyGroup {
            generators: gens,
            walls,
        })
    }

    pub fn element(&self, letter: Letter) -> Mobius {
        let g = self.generators[letter.gen as usize];
        if letter.inv {
            g.inverse()
        } else {
            g
        }
    }

    pub fn word_transform(&self, word: &[Letter]) -> Mobius {
        word.iter()
            .fold(Mobius::identity(), |acc, &l| acc.compose(&self.element(l)))
    }

    pub fn contains(&self, z: C64) -> bool {
        self.walls.iter().all(|w| w.circle.q(z) >= 0.0)
    }

    /// Folds z into the fundamental domain; the returned word W satisfies W(z′) = z.
    pub fn fold(&self, z: C64) -> Result<(C64, Vec<Letter>)> {
        if !(z.norm_sqr() < 1.0) {
            return Err(Error::OutsideDisk(z));
        }
        let mut p = z;
        let mut word = Vec::new();
        for _ in 0..FOLD_CAP {
            match self.walls.iter().find(|w| w.circle.q(p) < 0.0) {
                None => return Ok((p, word)),
                Some(w) => {
                    p = w.fold.eval(p);
                    word.push(w.fold.label.expect("labelled").inverse());
                }
            }
        }
        Err(Error::FoldCapExceeded(FOLD_CAP))
    }

    /// Reduced words of length ≤ `max_len`, breadth-first, identity first.
    pub fn reduced_words(&self, max_len: usize) -> Vec<Vec<Letter>> {
        let letters: Vec<Letter> = (0..self.generators.len() as u8)
            .flat_map(|g| [Letter::new(g, false), Letter::new(g, true)])
            .collect();
        let mut all = vec![Vec::new()];
        let mut frontier = vec![Vec::new()];
        for _ in 0..max_len {
            let mut next = Vec::new();
            for w in &frontier {
                for &l in &letters {
                    if w.last().is_some_and(|&p: &Letter| p == l.inverse()) {
                        continue;
                    }
                    let mut nw = w.clone();
                    nw.push(l);
                    next.push(nw);
                }
            }
            all.extend(next.iter().cloned());
            frontier = next;
        }
        all
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn a_of(x: f64) -> f64 {
        2.0 * x / (x * x + 1.0)
    }

    fn disk_point() -> impl Strategy<Value = C64> {
        (0.0..0.95f64, 0.0..std::f64::consts::TAU).prop_map(|(r, t)| C64::from_polar(r, t))
    }

    #[test]
    fn translation_maps_x_to_minus_x() {
        let x = -0.3;
        assert!((a_of(x) + 0.550459).abs() < 1e-6);
        let t = Mobius::translation(C64::new(a_of(x), 0.0)).unwrap();
        let z = t.apply(C64::new(x, 0.0)).unwrap();
        assert!((z - C64::new(0.3, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn identity_and_inverse() {
        let id = Mobius::translation(C64::new(0.0, 0.0)).unwrap();
        let z = C64::new(0.2, 0.1);
        assert_eq!(id.apply(z).unwrap(), z);
        let t = Mobius::translation(C64::new(a_of(-0.3), 0.0)).unwrap();
        let back = t.inverse().apply(t.apply(z).unwrap()).unwrap();
        assert!((back - z).norm() < 1e-12);
        assert!(t.compose(&t.inverse()).distance(&Mobius::identity()) < 1e-12);
        assert!(t.compose(&Mobius::identity()).distance(&t) < 1e-15);
        assert!(t.apply(C64::new(1.0, 0.0)).is_err());
    }

    #[test]
    fn composition_matches_sequential() {
        let t = Mobius::translation(C64::new(a_of(-0.3), 0.0)).unwrap();
        let x = C64::new(-0.3, 0.0);
        let seq = t.eval(t.eval(x));
        assert!((t.compose(&t).eval(x) - seq).norm() < 1e-12);
    }

    #[test]
    fn distance_closed_forms() {
        let o = C64::new(0.0, 0.0);
        assert_eq!(hyperbolic_distance(o, o).unwrap(), 0.0);
        let d = hyperbolic_distance(o, C64::new(0.5, 0.0)).unwrap();
        assert!((d - 3f64.ln()).abs() < 1e-14);
        // arclength of the diameter: ∫₀^½ 2/(1−r²) dr
        let q = quadrature::integrate(|r| 2.0 / (1.0 - r * r), 0.0, 0.5, 1e-14).integral;
        assert!((q - d).abs() < 1e-12);
        assert!(hyperbolic_distance(o, C64::new(0.0, 1.0)).is_err());
        let ds = scaled_distance(o, C64::new(0.5, 0.0), 4.0).unwrap();
        assert!((ds - d / 2.0).abs() < 1e-15);
    }

    #[test]
    fn radial_flow() {
        for t in [0.1, 1.0, 3.0] {
            let (z, th) = exact_geodesic_flow(C64::new(0.0, 0.0), 0.0, t, 1.0).unwrap();
            assert!((z - C64::new((t / 2.0).tanh(), 0.0)).norm() < 1e-14);
            assert!(th.abs() < 1e-14 || (th - std::f64::consts::TAU).abs() < 1e-14);
            let d = hyperbolic_distance(C64::new(0.0, 0.0), z).unwrap();
            assert!((d - t).abs() < 1e-12);
        }
        let z0 = C64::new(0.1, -0.4);
        let (z, th) = exact_geodesic_flow(z0, 1.3, 0.0, 2.0).unwrap();
        assert!((z - z0).norm() < 1e-15 && (th - 1.3).abs() < 1e-14);
    }

    #[test]
    fn hcircle_transform_tracks_points() {
        let t = Mobius::translation(C64::new(0.3, -0.2)).unwrap();
        let circ = HCircle::from_circle(C64::new(1.4, 0.2), 0.9, true);
        let img = circ.transform(&t);
        for k in 0..12 {
            let p = C64::new(1.4, 0.2) + C64::from_polar(0.9, k as f64 * 0.5);
            if p.norm() < 1.0 {
                assert!(img.q(t.eval(p)).abs() < 1e-12);
            }
        }
        let inside = C64::new(0.8, 0.2);
        assert!(circ.q(inside) < 0.0 && img.q(t.eval(inside)) < 0.0);
    }

    fn torus(x: f64) -> SchottkyGroup {
        let a = a_of(x);
        let ta = Mobius::translation(C64::new(a, 0.0)).unwrap();
        let tia = Mobius::translation(C64::new(0.0, a)).unwrap();
        let (cl, rl) = orthogonal_wall_real(x);
        let walls = vec![
            (cl, rl),
            (-cl, rl),
            (cl * C64::i(), rl),
            (-cl * C64::i(), rl),
        ];
        SchottkyGroup::new(vec![ta, tia], walls).unwrap()
    }

    #[test]
    fn walls_pair_exactly() {
        let g = torus(-0.6);
        for (i, w) in g.walls.iter().enumerate() {
            let p = &g.walls[w.partner];
            for k in 0..20 {
                let pt = w.center + C64::from_polar(w.radius, k as f64 * 0.31);
                if pt.norm() < 0.999 {
                    let img = w.fold.eval(pt);
                    assert!(((img - p.center).norm() - p.radius).abs() < 1e-10, "wall {i}");
                }
            }
        }
        for gen in &g.generators {
            assert!(gen.compose(&gen.inverse()).distance(&Mobius::identity()) < 1e-12);
        }
    }

    #[test]
    fn intersecting_walls_rejected() {
        let (cl, rl) = orthogonal_wall_real(-0.3);
        let walls = vec![(cl, rl), (-cl, rl), (cl * C64::i(), rl), (-cl * C64::i(), rl)];
        let a = a_of(-0.3);
        let gens = vec![
            Mobius::translation(C64::new(a, 0.0)).unwrap(),
            Mobius::translation(C64::new(0.0, a)).unwrap(),
        ];
        assert!(SchottkyGroup::new(gens, walls).is_err());
    }

    #[test]
    fn fold_constructed_point() {
        let g = torus(-0.6);
        let z0 = C64::new(0.1, 0.05);
        assert_eq!(g.fold(z0).unwrap(), (z0, vec![]));
        let ta = g.generators[0];
        let z = ta.eval(z0);
        let (p, word) = g.fold(z).unwrap();
        assert!((p - z0).norm() < 1e-10);
        assert_eq!(word, vec![Letter::new(0, false)]);
    }

    #[test]
    fn reduced_word_counts() {
        let g = torus(-0.6);
        let w = g.reduced_words(3);
        assert_eq!(w.len(), 1 + 4 + 12 + 36);
        for word in &w {
            for pair in word.windows(2) {
                assert_ne!(pair[0], pair[1].inverse());
            }
        }
    }

    proptest! {
        #[test]
        fn isometry_invariance(z in disk_point(), w in disk_point(), a in disk_point(), psi in 0.0..6.3f64) {
            let t = Mobius::rotation(psi).compose(&Mobius::translation(a * 0.9).unwrap());
            let d0 = hyperbolic_distance(z, w).unwrap();
            let d1 = hyperbolic_distance(t.eval(z), t.eval(w)).unwrap();
            prop_assert!((d0 - d1).abs() < 1e-10 * (1.0 + d0));
            prop_assert!(t.eval(z).norm() < 1.0);
            prop_assert!((t.det() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn flow_additivity(z in disk_point(), th in 0.0..6.28f64, s in -5.0..5.0f64, t in -5.0..5.0f64) {
            let z = z * 0.8;
            let (z1, th1) = exact_geodesic_flow(z, th, s, 1.0).unwrap();
            let (z2, th2) = exact_geodesic_flow(z1, th1, t, 1.0).unwrap();
            let (z3, th3) = exact_geodesic_flow(z, th, s + t, 1.0).unwrap();
            let dth = (th2 - th3).sin().abs() + (1.0 - (th2 - th3).cos());
            prop_assert!(distance_unchecked(z2, z3) < 1e-9);
            prop_assert!(dth < 1e-7);
        }

        #[test]
        fn flow_reversible(z in disk_point(), th in 0.0..6.28f64, t in -4.0..4.0f64, k in 0.3..3.0f64) {
            let (z1, th1) = exact_geodesic_flow(z, th, t, k).unwrap();
            let (z2, th2) = exact_geodesic_flow(z1, th1, -t, k).unwrap();
            prop_assert!(distance_unchecked(z, z2) < 1e-9);
            prop_assert!((th2 - th).sin().abs() < 1e-8);
        }

        #[test]
        fn curvature_scaling(z in disk_point(), w in disk_point(), k in 0.1..5.0f64) {
            let d = hyperbolic_distance(z, w).unwrap();
            prop_assert!((scaled_distance(z, w, k).unwrap() * k.sqrt() - d).abs() < 1e-12 * (1.0 + d));
        }

        #[test]
        fn fold_roundtrip_and_idempotent(z in disk_point()) {
            let g = torus(-0.6);
            let z = z * 0.95;
            if let Ok((p, word)) = g.fold(z) {
                prop_assert!(g.contains(p));
                let back = g.word_transform(&word).eval(p);
                prop_assert!((back - z).norm() < 1e-9);
                let (p2, w2) = g.fold(p).unwrap();
                prop_assert_eq!(p2, p);
                prop_assert!(w2.is_empty());
            }
        }
    }
}
