//! Fan-beam X-ray transforms I₀, I₁, the odd extension and the adjoint I₀*.

use rayon::prelude::*;
use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{invalid, parse_err, Error, Result};
use crate::geoflow::{exact_exit, flow, FlowEnd, FlowParams};
use crate::grid::{GridField, GridSpec};
use crate::hypgeo::C64;
use crate::surface::{wrap_pi, ModelGeometry, SurfaceModel};

const FANBEAM_MAGIC: &str = "# trapxray fanbeam v1";
const MAX_ENTRIES: usize = 1 << 26;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AngleGrid {
    /// α_j = −w + (j + ½)·2w/n, measured from the inner normal.
    Influx { half_width: f64 },
    /// φ_j = 2πj/n, measured from the inner normal.
    FullCircle,
}

impl fmt::Display for AngleGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AngleGrid::Influx { half_width } => write!(f, "influx:{half_width:e}"),
            AngleGrid::FullCircle => write!(f, "full"),
        }
    }
}

impl FromStr for AngleGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(AngleGrid::FullCircle);
        }
        let w = s
            .strip_prefix("influx:")
            .ok_or_else(|| parse_err("angle convention", s))?
            .parse::<f64>()
            .map_err(|e| parse_err("angle convention", e.to_string()))?;
        if !(w > 0.0 && w <= FRAC_PI_2) {
            return Err(parse_err("angle convention", format!("half width {w} outside (0, π/2]")));
        }
        Ok(AngleGrid::Influx { half_width: w })
    }
}

/// Boundary data sampled at s_i = (i + ½)/n_pts on every component.
#[derive(Clone, Debug, PartialEq)]
pub struct FanBeamData {
    pub model_hash: String,
    pub grid: AngleGrid,
    pub components: usize,
    pub n_pts: usize,
    pub n_angles: usize,
    pub values: Vec<f64>,
    /// Time-capped rays (values hold NaN until imputed).
    pub capped: Vec<bool>,
}

impl FanBeamData {
    pub fn zeros(model_hash: &str, grid: AngleGrid, components: usize, n_pts: usize, n_angles: usize) -> Self {
        let len = components * n_pts * n_angles;
        FanBeamData {
            model_hash: model_hash.to_string(),
            grid,
            components,
            n_pts,
            n_angles,
            values: vec![0.0; len],
            capped: vec![false; len],
        }
    }

    #[inline]
    pub fn idx(&self, c: usize, i: usize, j: usize) -> usize {
        (c * self.n_pts + i) * self.n_angles + j
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.values[self.idx(c, i, j)]
    }

    #[inline]
    pub fn s_of(&self, i: usize) -> f64 {
        (i as f64 + 0.5) / self.n_pts as f64
    }

    #[inline]
    pub fn angle(&self, j: usize) -> f64 {
        match self.grid {
            AngleGrid::Influx { half_width: w } => -w + (j as f64 + 0.5) * 2.0 * w / self.n_angles as f64,
            AngleGrid::FullCircle => TAU * j as f64 / self.n_angles as f64,
        }
    }

    pub fn same_layout(&self, other: &FanBeamData) -> bool {
        self.grid == other.grid
            && self.components == other.components
            && self.n_pts == other.n_pts
            && self.n_angles == other.n_angles
    }

    pub fn check_layout(&self, other: &FanBeamData) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::GridMismatch("fan-beam layouts differ".into()));
        }
        Ok(())
    }

    pub fn lincomb(&self, a: f64, other: &FanBeamData, b: f64) -> Result<FanBeamData> {
        self.check_layout(other)?;
        let mut out = self.clone();
        for (k, o) in out.values.iter_mut().enumerate() {
            *o = a * self.values[k] + b * other.values[k];
        }
        for (k, c) in out.capped.iter_mut().enumerate() {
            *c = self.capped[k] || other.capped[k];
        }
        Ok(out)
    }

    pub fn n_capped(&self) -> usize {
        self.capped.iter().filter(|&&c| c).count()
    }

    #[inline]
    fn s_stencil(&self, s: f64) -> (usize, usize, f64) {
        let u = s.rem_euclid(1.0) * self.n_pts as f64 - 0.5;
        let f = u.floor();
        let t = u - f;
        let n = self.n_pts as i64;
        let i0 = (f as i64).rem_euclid(n) as usize;
        (i0, (i0 + 1) % self.n_pts, t)
    }

    /// Bilinear lookup on influx data: periodic in s, linear in α; zero outside the cone,
    /// decaying to zero at glancing when the cone is the full half circle.
    pub fn sample_influx(&self, c: usize, s: f64, alpha: f64) -> f64 {
        let AngleGrid::Influx { half_width: w } = self.grid else {
            return f64::NAN;
        };
        if alpha.abs() >= w {
            return 0.0;
        }
        let (i0, i1, ts) = self.s_stencil(s);
        let n = self.n_angles;
        let v = (alpha + w) / (2.0 * w) * n as f64 - 0.5;
        let full = w >= FRAC_PI_2 - 1e-12;
        let col = |i: usize| -> f64 {
            if v < 0.0 {
                let e = self.get(c, i, 0);
                if full {
                    e * (v + 0.5) / 0.5
                } else {
                    e
                }
            } else if v > (n - 1) as f64 {
                let e = self.get(c, i, n - 1);
                if full {
                    e * ((n as f64 - 0.5) - v) / 0.5
                } else {
                    e
                }
            } else {
                let j0 = (v.floor() as usize).min(n.saturating_sub(2));
                let ta = v - j0 as f64;
                if n == 1 {
                    self.get(c, i, 0)
                } else {
                    self.get(c, i, j0) * (1.0 - ta) + self.get(c, i, j0 + 1) * ta
                }
            }
        };
        col(i0) * (1.0 - ts) + col(i1) * ts
    }

    /// Bilinear lookup on full-circle data, periodic in both variables.
    #[inline]
    pub fn sample_full(&self, c: usize, s: f64, phi: f64) -> f64 {
        let (i0, i1, ts) = self.s_stencil(s);
        let n = self.n_angles;
        let v = phi.rem_euclid(TAU) / TAU * n as f64;
        let f = v.floor();
        let ta = v - f;
        let j0 = (f as usize) % n;
        let j1 = (j0 + 1) % n;
        let a = self.get(c, i0, j0) * (1.0 - ta) + self.get(c, i0, j1) * ta;
        let b = self.get(c, i1, j0) * (1.0 - ta) + self.get(c, i1, j1) * ta;
        a * (1.0 - ts) + b * ts
    }

    /// Σ a·b·|cos α|·Δs·Δα with arclength steps from `lengths`; capped entries skipped.
    pub fn mu_inner(&self, other: &FanBeamData, lengths: &[f64]) -> Result<f64> {
        self.check_layout(other)?;
        let AngleGrid::Influx { half_width: w } = self.grid else {
            return Err(invalid("grid", "μ_ν pairing needs influx data"));
        };
        if lengths.len() != self.components {
            return Err(Error::GridMismatch("component count".into()));
        }
        let da = 2.0 * w / self.n_angles as f64;
        let mut acc = 0.0;
        for (c, &len) in lengths.iter().enumerate() {
            let ds = len / self.n_pts as f64;
            for i in 0..self.n_pts {
                for j in 0..self.n_angles {
                    let k = self.idx(c, i, j);
                    if self.capped[k] || other.capped[k] {
                        continue;
                    }
                    acc += self.values[k] * other.values[k] * mu_nu(self.angle(j)) * ds * da;
                }
            }
        }
        Ok(acc)
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{FANBEAM_MAGIC}")?;
        writeln!(w, "# model_hash={}", self.model_hash)?;
        writeln!(w, "# angle_convention={}", self.grid)?;
        writeln!(w, "# components={}", self.components)?;
        for c in 0..self.components {
            writeln!(w, "# component={c},{},{}", self.n_pts, self.n_angles)?;
        }
        writeln!(w, "component,point_index,angle_index,value,flag")?;
        for c in 0..self.components {
            for i in 0..self.n_pts {
                for j in 0..self.n_angles {
                    let k = self.idx(c, i, j);
                    let flag = if self.capped[k] { "capped" } else { "ok" };
                    writeln!(w, "{c},{i},{j},{:e},{flag}", self.values[k])?;
                }
            }
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("ascii")
    }

    pub fn parse_csv(text: &str) -> Result<FanBeamData> {
        let mut lines = text.lines();
        if lines.next() != Some(FANBEAM_MAGIC) {
            return Err(parse_err("fan-beam file", "missing magic line"));
        }
        let mut hash = None;
        let mut grid = None;
        let mut components = None;
        let mut dims: Vec<(usize, usize)> = Vec::new();
        let mut body_start = FANBEAM_MAGIC.len() + 1;
        for line in lines {
            let Some(meta) = line.strip_prefix("# ") else {
                break;
            };
            body_start += line.len() + 1;
            let (key, val) = meta
                .split_once('=')
                .ok_or_else(|| parse_err("fan-beam header", line))?;
            match key {
                "model_hash" => hash = Some(val.to_string()),
                "angle_convention" => grid = Some(val.parse::<AngleGrid>()?),
                "components" => {
                    components = Some(val.parse::<usize>().map_err(|e| parse_err("components", e.to_string()))?)
                }
                "component" => {
                    let parts: Vec<&str> = val.split(',').collect();
                    let num = |s: &str| s.parse::<usize>().map_err(|e| parse_err("component line", e.to_string()));
                    if parts.len() != 3 || num(parts[0])? != dims.len() {
                        return Err(parse_err("component line", val));
                    }
                    dims.push((num(parts[1])?, num(parts[2])?));
                }
                _ => return Err(parse_err("fan-beam header", format!("unknown key {key}"))),
            }
        }
        let (Some(hash), Some(grid), Some(components)) = (hash, grid, components) else {
            return Err(parse_err("fan-beam header", "incomplete"));
        };
        if components == 0 || dims.len() != components {
            return Err(parse_err("fan-beam header", "component count mismatch"));
        }
        let (n_pts, n_angles) = dims[0];
        if dims.iter().any(|&d| d != (n_pts, n_angles)) || n_pts == 0 || n_angles == 0 {
            return Err(parse_err("fan-beam header", "components must share a positive layout"));
        }
        let total = components
            .checked_mul(n_pts)
            .and_then(|v| v.checked_mul(n_angles))
            .filter(|&v| v <= MAX_ENTRIES)
            .ok_or_else(|| parse_err("fan-beam header", "too many entries"))?;
        let mut out = FanBeamData::zeros(&hash, grid, components, n_pts, n_angles);
        let mut seen = vec![false; total];
        let body = text.get(body_start.min(text.len())..).unwrap_or("");
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
        {
            let headers = rdr.headers().map_err(|e| parse_err("fan-beam rows", e.to_string()))?;
            if headers != vec!["component", "point_index", "angle_index", "value", "flag"] {
                return Err(parse_err("fan-beam rows", "unexpected column header"));
            }
        }
        for rec in rdr.records() {
            let rec = rec.map_err(|e| parse_err("fan-beam rows", e.to_string()))?;
            if rec.len() != 5 {
                return Err(parse_err("fan-beam rows", "expected five fields"));
            }
            let num = |k: usize| rec[k].parse::<usize>().map_err(|e| parse_err("fan-beam index", e.to_string()));
            let (c, i, j) = (num(0)?, num(1)?, num(2)?);
            if c >= components || i >= n_pts || j >= n_angles {
                return Err(parse_err("fan-beam rows", "index out of range"));
            }
            let v: f64 = rec[3].parse().map_err(|_| parse_err("fan-beam value", &rec[3]))?;
            let capped = match &rec[4] {
                "ok" => false,
                "capped" => true,
                other => return Err(parse_err("fan-beam flag", other)),
            };
            let k = out.idx(c, i, j);
            if std::mem::replace(&mut seen[k], true) {
                return Err(parse_err("fan-beam rows", "duplicate entry"));
            }
            out.values[k] = v;
            out.capped[k] = capped;
        }
        if seen.iter().any(|&s| !s) {
            return Err(parse_err("fan-beam rows", "missing entries"));
        }
        Ok(out)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(f)
    }

    pub fn load(path: &std::path::Path) -> Result<FanBeamData> {
        FanBeamData::parse_csv(&std::fs::read_to_string(path)?)
    }
}

#[inline]
pub fn mu_nu(alpha: f64) -> f64 {
    alpha.cos().abs()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayGrid {
    pub pts: usize,
    pub n_influx: usize,
    pub half_width: f64,
}

impl RayGrid {
    pub fn validate(&self) -> Result<()> {
        if self.pts == 0 || self.n_influx == 0 {
            return Err(invalid("rays", "counts must be positive"));
        }
        if !(self.half_width > 0.0 && self.half_width <= FRAC_PI_2) {
            return Err(invalid("half_width", "cone must lie in (−π/2, π/2)"));
        }
        Ok(())
    }
}

fn check_hash(model: &SurfaceModel, found: &str) -> Result<()> {
    if model.hash != found {
        return Err(Error::GeometryMismatch {
            expected: model.hash.clone(),
            found: found.to_string(),
        });
    }
    Ok(())
}

/// Integrates every field along every influx ray (trapezoid rule in t).
fn forward_generic<F>(
    model: &SurfaceModel,
    rays: &RayGrid,
    params: &FlowParams,
    n_out: usize,
    integrand: F,
) -> Result<Vec<FanBeamData>>
where
    F: Fn(&[f64; 3], &mut [f64]) + Sync,
{
    rays.validate()?;
    let nc = model.n_components();
    let proto = FanBeamData::zeros(
        &model.hash,
        AngleGrid::Influx {
            half_width: rays.half_width,
        },
        nc,
        rays.pts,
        rays.n_influx,
    );
    let total = nc * rays.pts * rays.n_influx;
    let per_ray: Vec<(Vec<f64>, bool)> = (0..total)
        .into_par_iter()
        .map(|k| {
            let j = k % rays.n_influx;
            let i = (k / rays.n_influx) % rays.pts;
            let c = k / (rays.n_influx * rays.pts);
            let b = model.boundary_point(c, proto.s_of(i));
            let start = [b.pos.re, b.pos.im, b.normal_angle + proto.angle(j)];
            let mut acc = vec![0.0; n_out];
            let mut prev = vec![0.0; n_out];
            let mut cur = vec![0.0; n_out];
            let mut prev_t = 0.0;
            let mut first = true;
            let end = flow(model, start, params, None, |t, s| {
                integrand(s, &mut cur);
                if !first {
                    let dt = t - prev_t;
                    for q in 0..n_out {
                        acc[q] += 0.5 * dt * (prev[q] + cur[q]);
                    }
                }
                first = false;
                prev_t = t;
                std::mem::swap(&mut prev, &mut cur);
            })?;
            Ok(match end {
                FlowEnd::Exited { .. } => (acc, false),
                FlowEnd::Capped { .. } => (vec![f64::NAN; n_out], true),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = vec![proto; n_out];
    for (k, (vals, capped)) in per_ray.into_iter().enumerate() {
        for (q, d) in out.iter_mut().enumerate() {
            d.values[k] = vals[q];
            d.capped[k] = capped;
        }
    }
    Ok(out)
}

/// I₀ of several scalar fields on a shared ray set.
pub fn forward_i0_batch(
    model: &SurfaceModel,
    fields: &[&GridField],
    rays: &RayGrid,
    params: &FlowParams,
) -> Result<Vec<FanBeamData>> {
    for f in fields {
        check_hash(model, &f.model_hash)?;
    }
    forward_generic(model, rays, params, fields.len(), |s, out| {
        for (o, f) in out.iter_mut().zip(fields) {
            *o = f.sample(s[0], s[1])[0];
        }
    })
}

pub fn forward_i0(model: &SurfaceModel, f: &GridField, rays: &RayGrid, params: &FlowParams) -> Result<FanBeamData> {
    Ok(forward_i0_batch(model, &[f], rays, params)?.remove(0))
}

/// I₁ of a 1-form u = u_x dx + u_y dy.
pub fn forward_i1(model: &SurfaceModel, u: &GridField, rays: &RayGrid, params: &FlowParams) -> Result<FanBeamData> {
    check_hash(model, &u.model_hash)?;
    if u.comps != 2 {
        return Err(Error::GridMismatch("I₁ needs a two-component field".into()));
    }
    let metric = model.metric;
    Ok(forward_generic(model, rays, params, 1, |s, out| {
        let v = metric.rhs(s[0], s[1], s[2]);
        let w = u.sample(s[0], s[1]);
        out[0] = w[0] * v[0] + w[1] * v[1];
    })?
    .remove(0))
}

/// Extends influx data to the full circle: u(x, v) = −u(x, −v) on outflux, 0 at glancing.
/// Capped entries are imputed as 0 and stay flagged.
pub fn odd_extension(d: &FanBeamData, n_full: usize) -> Result<FanBeamData> {
    if !matches!(d.grid, AngleGrid::Influx { .. }) {
        return Err(Error::GridMismatch("odd extension needs influx data".into()));
    }
    if n_full < 4 || n_full % 4 != 0 {
        return Err(invalid("n_full", "full-circle size must be a positive multiple of 4"));
    }
    let mut out = FanBeamData::zeros(&d.model_hash, AngleGrid::FullCircle, d.components, d.n_pts, n_full);
    let mut clean = d.clone();
    for (v, &c) in clean.values.iter_mut().zip(&d.capped) {
        if c || !v.is_finite() {
            *v = 0.0;
        }
    }
    let half = n_full / 2;
    for c in 0..d.components {
        for i in 0..d.n_pts {
            let s = d.s_of(i);
            for k in 0..n_full {
                let a = wrap_pi(out.angle(k));
                if a.abs() >= FRAC_PI_2 {
                    continue;
                }
                let val = clean.sample_influx(c, s, a);
                let kk = (k + half) % n_full;
                let (i0, k0) = (out.idx(c, i, k), out.idx(c, i, kk));
                out.values[i0] = val;
                out.values[k0] = -val;
                let capped = near_capped(d, c, s, a);
                out.capped[i0] = capped;
                out.capped[k0] = capped;
            }
        }
    }
    Ok(out)
}

fn near_capped(d: &FanBeamData, c: usize, s: f64, a: f64) -> bool {
    let AngleGrid::Influx { half_width: w } = d.grid else {
        return false;
    };
    if a.abs() >= w {
        return false;
    }
    let (i0, i1, _) = d.s_stencil(s);
    let v = ((a + w) / (2.0 * w) * d.n_angles as f64 - 0.5).clamp(0.0, (d.n_angles - 1) as f64);
    let j0 = v.floor() as usize;
    let j1 = (j0 + 1).min(d.n_angles - 1);
    [(i0, j0), (i0, j1), (i1, j0), (i1, j1)]
        .iter()
        .any(|&(i, j)| d.capped[d.idx(c, i, j)])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExitSolver {
    Heun(FlowParams),
    /// Closed-form geodesics of constant-curvature disk models.
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExitEntry {
    /// u16::MAX marks a capped direction.
    pub comp: u16,
    pub s: f32,
    pub beta: f32,
}

const NO_EXIT: u16 = u16::MAX;

/// Forward exits of (pixel centre, θ_k = 2πk/n) for a set of pixels.
#[derive(Clone, Debug)]
pub struct ExitTable {
    pub spec: GridSpec,
    pub n_angles: usize,
    pub pixels: Vec<bool>,
    row_of: Vec<u32>,
    entries: Vec<ExitEntry>,
    /// Cylinder rows are shared along x.
    translate: bool,
}

impl ExitTable {
    pub fn build(model: &SurfaceModel, pixels: &[bool], n_angles: usize, solver: ExitSolver) -> Result<ExitTable> {
        let spec = model.grid_spec();
        if pixels.len() != spec.len() {
            return Err(Error::GridMismatch("pixel set size".into()));
        }
        if n_angles == 0 || n_angles % 2 != 0 {
            return Err(invalid("n_angles", "must be positive and even"));
        }
        if matches!(solver, ExitSolver::Exact) && model.kappa0().is_none() {
            return Err(invalid("solver", "exact exits need constant curvature"));
        }
        let translate = matches!(model.geometry, ModelGeometry::Cylinder { .. });
        let mut row_of = vec![u32::MAX; spec.len()];
        let mut starts: Vec<C64> = Vec::new();
        for j in 0..spec.n {
            if translate {
                if (0..spec.n).any(|i| pixels[spec.index(i, j)]) {
                    for i in 0..spec.n {
                        row_of[spec.index(i, j)] = starts.len() as u32;
                    }
                    starts.push(spec.center(0, j));
                }
            } else {
                for i in 0..spec.n {
                    let k = spec.index(i, j);
                    if pixels[k] {
                        row_of[k] = starts.len() as u32;
                        starts.push(spec.center(i, j));
                    }
                }
            }
        }
        let entries = (0..starts.len() * n_angles)
            .into_par_iter()
            .map(|q| {
                let p = starts[q / n_angles];
                let th = TAU * (q % n_angles) as f64 / n_angles as f64;
                let end = match solver {
                    ExitSolver::Heun(params) => flow(model, [p.re, p.im, th], &params, None, |_, _| {})?,
                    ExitSolver::Exact => match {
                        let (mut x, mut y, mut t) = (p.re, p.im, th);
                        model.fold_state(&mut x, &mut y, &mut t, None)?;
                        exact_exit(model, C64::new(x, y), t)
                    } {
                        Ok(e) => e,
                        Err(Error::FoldCapExceeded(_)) | Err(Error::InvalidParameter { .. }) => {
                            FlowEnd::Capped { time: f64::INFINITY }
                        }
                        Err(e) => return Err(e),
                    },
                };
                Ok(match end {
                    FlowEnd::Exited { exit, .. } => ExitEntry {
                        comp: exit.component as u16,
                        s: exit.s as f32,
                        beta: exit.beta as f32,
                    },
                    FlowEnd::Capped { .. } => ExitEntry {
                        comp: NO_EXIT,
                        s: 0.0,
                        beta: 0.0,
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ExitTable {
            spec,
            n_angles,
            pixels: pixels.to_vec(),
            row_of,
            entries,
            translate,
        })
    }

    /// (component, s, β) of the forward exit of (pixel, θ_k).
    #[inline]
    pub fn get(&self, pixel: usize, k: usize) -> Option<(usize, f64, f64)> {
        let row = self.row_of[pixel];
        if row == u32::MAX {
            return None;
        }
        let e = self.entries[row as usize * self.n_angles + k];
        if e.comp == NO_EXIT {
            return None;
        }
        let mut s = e.s as f64;
        if self.translate {
            let i = pixel % self.spec.n;
            s = (s + i as f64 * self.spec.cell / self.spec.period()).rem_euclid(1.0);
        }
        Some((e.comp as usize, s, e.beta as f64))
    }

    pub fn n_capped(&self) -> usize {
        self.entries.iter().filter(|e| e.comp == NO_EXIT).count()
    }
}

/// I₀*ω(x) = Σ_k ω(backward exit of (x, θ_k)) Δθ.
pub fn adjoint_i0(model: &SurfaceModel, table: &ExitTable, omega: &FanBeamData) -> Result<GridField> {
    check_hash(model, &omega.model_hash)?;
    if !matches!(omega.grid, AngleGrid::Influx { .. }) {
        return Err(Error::GridMismatch("adjoint expects influx data".into()));
    }
    let spec = model.grid_spec();
    let n = table.n_angles;
    let dth = TAU / n as f64;
    let mut clean = omega.clone();
    for (v, &c) in clean.values.iter_mut().zip(&omega.capped) {
        if c || !v.is_finite() {
            *v = 0.0;
        }
    }
    let vals: Vec<f64> = (0..spec.len())
        .into_par_iter()
        .map(|p| {
            if !model.mask[p] {
                return 0.0;
            }
            let mut acc = 0.0;
            for k in 0..n {
                if let Some((c, s, beta)) = table.get(p, (k + n / 2) % n) {
                    let alpha = wrap_pi(beta - PI);
                    if alpha.abs() < FRAC_PI_2 {
                        acc += clean.sample_influx(c, s, alpha);
                    }
                }
            }
            acc * dth
        })
        .collect();
    let mut out = GridField::zeros(spec, 1, model.mask.clone(), &model.hash);
    out.values = vals;
    Ok(out)
}

/// ⟨f, g⟩ in L²(M, dvol) over the model mask.
pub fn l2_inner(model: &SurfaceModel, f: &GridField, g: &GridField) -> Result<f64> {
    f.check_layout(g)?;
    let spec = model.grid_spec();
    let mut acc = 0.0;
    for j in 0..spec.n {
        for i in 0..spec.n {
            let k = spec.index(i, j);
            if model.mask[k] {
                let p = spec.center(i, j);
                acc += f.values[k * f.comps] * g.values[k * g.comps]
                    * model.metric.volume_density(p.re, p.im)
                    * spec.cell
                    * spec.cell;
            }
        }
    }
    Ok(acc)
}

pub fn boundary_lengths(model: &SurfaceModel) -> Vec<f64> {
    (0..model.n_components()).map(|c| model.boundary_length(c)).collect()
}
