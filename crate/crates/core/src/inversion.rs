//! Reconstruction: backprojection with the fiber curl, one-shot inversion and Neumann correction.

use rayon::prelude::*;
use std::f64::consts::{PI, TAU};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::fiberharm::hilbert_fiber;
use crate::geoflow::FlowParams;
use crate::grid::GridField;
use crate::surface::{ModelGeometry, SurfaceModel};
use crate::xray::{forward_i0, odd_extension, AngleGrid, ExitSolver, ExitTable, FanBeamData, RayGrid};

/// Mask pixels plus their neighbours across the walls (still inside the cuts).
pub fn extended_pixels(model: &SurfaceModel) -> Vec<bool> {
    let spec = model.grid_spec();
    let mut ext = model.mask.clone();
    let has_walls = model.group().is_some();
    if !has_walls {
        return ext;
    }
    let n = spec.n as i64;
    for j in 0..n {
        for i in 0..n {
            let k = spec.index(i as usize, j as usize);
            if model.mask[k] {
                continue;
            }
            let p = spec.center(i as usize, j as usize);
            if !model.inside_cuts(p) {
                continue;
            }
            let near = (-1..=1).any(|dj| {
                (-1..=1).any(|di| {
                    let (a, b) = (i + di, j + dj);
                    a >= 0 && b >= 0 && a < n && b < n && model.mask[spec.index(a as usize, b as usize)]
                })
            });
            ext[k] = near;
        }
    }
    ext
}

/// Mask pixels whose 5×5 neighbourhood stays inside the cuts.
pub fn metric_mask(model: &SurfaceModel, collar: usize) -> Vec<bool> {
    let spec = model.grid_spec();
    let n = spec.n as i64;
    let c = collar as i64;
    let mut out = vec![false; spec.len()];
    for j in 0..n {
        for i in 0..n {
            let k = spec.index(i as usize, j as usize);
            if !model.mask[k] {
                continue;
            }
            out[k] = (-c..=c).all(|dj| {
                (-c..=c).all(|di| {
                    let p = spec.center(0, 0)
                        + crate::hypgeo::C64::new((i + di) as f64 * spec.cell, (j + dj) as f64 * spec.cell);
                    model.inside_cuts(p)
                })
            });
        }
    }
    out
}

/// Angular moments (∫cos θ w, ∫sin θ w) of w at the forward exits, per pixel of the table.
pub fn fiber_moments(table: &ExitTable, w: &FanBeamData) -> Result<Vec<[f64; 2]>> {
    if w.grid != AngleGrid::FullCircle {
        return Err(Error::NotFullCircle);
    }
    let n = table.n_angles;
    let dth = TAU / n as f64;
    let trig: Vec<(f64, f64)> = (0..n).map(|k| (TAU * k as f64 / n as f64).sin_cos()).collect();
    Ok((0..table.spec.len())
        .into_par_iter()
        .map(|p| {
            if !table.pixels[p] {
                return [0.0, 0.0];
            }
            let mut m = [0.0, 0.0];
            for (k, &(s, c)) in trig.iter().enumerate() {
                if let Some((comp, sp, beta)) = table.get(p, k) {
                    let v = w.sample_full(comp, sp, beta);
                    m[0] += c * v;
                    m[1] += s * v;
                }
            }
            [m[0] * dth, m[1] * dth]
        })
        .collect())
}

/// *d of the 1-form P·C dx + Q·S dy: (∂ₓ(Q·S) − ∂_y(P·C)) / (PQ) on the model mask.
/// Centred differences, one-sided at the edge of `pixels`.
pub fn fiber_curl(model: &SurfaceModel, pixels: &[bool], moments: &[[f64; 2]]) -> GridField {
    let spec = model.grid_spec();
    let n = spec.n as i64;
    let periodic = spec.periodic_x;
    let at = |i: i64, j: i64| -> Option<usize> {
        let i = if periodic { i.rem_euclid(n) } else { i };
        if i < 0 || j < 0 || i >= n || j >= n {
            return None;
        }
        let k = spec.index(i as usize, j as usize);
        pixels[k].then_some(k)
    };
    let flux = |k: usize| -> [f64; 2] {
        let p = spec.center(k % spec.n, k / spec.n);
        let (pp, qq) = model.metric.coframe(p.re, p.im);
        [pp * moments[k][0], qq * moments[k][1]]
    };
    let deriv = |i: i64, j: i64, di: i64, dj: i64, comp: usize| -> f64 {
        let c = at(i, j).expect("centre pixel");
        match (at(i + di, j + dj), at(i - di, j - dj)) {
            (Some(a), Some(b)) => (flux(a)[comp] - flux(b)[comp]) / (2.0 * spec.cell),
            (Some(a), None) => (flux(a)[comp] - flux(c)[comp]) / spec.cell,
            (None, Some(b)) => (flux(c)[comp] - flux(b)[comp]) / spec.cell,
            (None, None) => 0.0,
        }
    };
    let mut out = GridField::zeros(spec, 1, model.mask.clone(), &model.hash);
    for j in 0..n {
        for i in 0..n {
            let k = spec.index(i as usize, j as usize);
            if !model.mask[k] || !pixels[k] {
                continue;
            }
            let p = spec.center(i as usize, j as usize);
            let jac = model.metric.volume_density(p.re, p.im);
            out.values[k] = (deriv(i, j, 1, 0, 1) - deriv(i, j, 0, 1, 0)) / jac;
        }
    }
    out
}

pub fn backproject_and_curl(model: &SurfaceModel, table: &ExitTable, w: &FanBeamData) -> Result<GridField> {
    if w.model_hash != model.hash {
        return Err(Error::GeometryMismatch {
            expected: model.hash.clone(),
            found: w.model_hash.clone(),
        });
    }
    let m = fiber_moments(table, w)?;
    Ok(fiber_curl(model, &table.pixels, &m))
}

/// Precomputed exit table and masks for repeated inversions on one model.
pub struct Reconstructor<'a> {
    pub model: &'a SurfaceModel,
    pub rays: RayGrid,
    pub flow: FlowParams,
    pub table: ExitTable,
    pub metric_mask: Vec<bool>,
}

impl<'a> Reconstructor<'a> {
    pub fn new(
        model: &'a SurfaceModel,
        rays: RayGrid,
        flow: FlowParams,
        n_full: usize,
        solver: ExitSolver,
    ) -> Result<Self> {
        if !n_full.is_power_of_two() || n_full < 4 {
            return Err(Error::GridMismatch(format!("full-circle size {n_full} is not a power of two")));
        }
        rays.validate()?;
        let ext = extended_pixels(model);
        let table = ExitTable::build(model, &ext, n_full, solver)?;
        Ok(Reconstructor {
            model,
            rays,
            flow,
            table,
            metric_mask: metric_mask(model, 2),
        })
    }

    pub fn forward(&self, f: &GridField) -> Result<FanBeamData> {
        forward_i0(self.model, f, &self.rays, &self.flow)
    }

    /// A₀ d = −(1/4π)·curl backprojection of H(d^od).
    pub fn a0(&self, data: &FanBeamData) -> Result<GridField> {
        one_shot_invert(self.model, &self.table, data)
    }

    pub fn neumann(&self, data: &FanBeamData, iters: usize, truth: Option<&GridField>) -> Result<ReconstructionReport> {
        let a0d = self.a0(data)?;
        neumann_loop(a0d, iters, truth, self.model, &self.metric_mask, |f| {
            self.a0(&self.forward(f)?)
        })
    }

    pub fn errors(&self, rec: &GridField, truth: &GridField) -> Result<(f64, f64)> {
        relative_errors(self.model, &self.metric_mask, rec, truth)
    }
}

pub fn one_shot_invert(model: &SurfaceModel, table: &ExitTable, data: &FanBeamData) -> Result<GridField> {
    if data.model_hash != model.hash {
        return Err(Error::GeometryMismatch {
            expected: model.hash.clone(),
            found: data.model_hash.clone(),
        });
    }
    if data.components != model.n_components() {
        return Err(Error::GridMismatch("component count differs from the model".into()));
    }
    let od = odd_extension(data, table.n_angles)?;
    let h = hilbert_fiber(&od)?;
    Ok(backproject_and_curl(model, table, &h)?.scaled(-1.0 / (4.0 * PI)))
}

/// (relative L², relative sup) over `mask`, weighted by the area density.
pub fn relative_errors(model: &SurfaceModel, mask: &[bool], rec: &GridField, truth: &GridField) -> Result<(f64, f64)> {
    rec.check_layout(truth)?;
    let spec = model.grid_spec();
    let (mut num, mut den, mut sup, mut fmax) = (0.0, 0.0, 0.0f64, 0.0f64);
    for k in 0..spec.len() {
        if !mask[k] {
            continue;
        }
        let p = spec.center(k % spec.n, k / spec.n);
        let w = model.metric.volume_density(p.re, p.im);
        let (r, t) = (rec.values[k], truth.values[k]);
        num += w * (r - t).powi(2);
        den += w * t * t;
        sup = sup.max((r - t).abs());
        fmax = fmax.max(t.abs());
    }
    if den == 0.0 || fmax == 0.0 {
        return Err(Error::GridMismatch("reference field vanishes on the metric mask".into()));
    }
    Ok(((num / den).sqrt(), sup / fmax))
}

#[derive(Clone, Debug)]
pub struct ReconstructionReport {
    pub reconstruction: GridField,
    pub iterates: Vec<GridField>,
    pub rel_l2: Vec<f64>,
    pub rel_sup: Vec<f64>,
    /// ‖f_{k+1} − f_k‖ in L².
    pub updates: Vec<f64>,
    pub iterations: usize,
    pub diverged: bool,
    pub seconds: f64,
}

fn l2_norm(model: &SurfaceModel, mask: &[bool], f: &GridField) -> f64 {
    let spec = model.grid_spec();
    (0..spec.len())
        .filter(|&k| mask[k])
        .map(|k| {
            let p = spec.center(k % spec.n, k / spec.n);
            model.metric.volume_density(p.re, p.im) * f.values[k].powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// f₀ = A₀d, f_{k+1} = A₀d + f_k − A₀I₀f_k, where `a0i0` applies A₀I₀.
pub fn neumann_loop(
    a0d: GridField,
    iters: usize,
    truth: Option<&GridField>,
    model: &SurfaceModel,
    mask: &[bool],
    mut a0i0: impl FnMut(&GridField) -> Result<GridField>,
) -> Result<ReconstructionReport> {
    let start = Instant::now();
    let mut f = a0d.clone();
    let mut iterates = vec![f.clone()];
    let mut rel_l2 = Vec::new();
    let mut rel_sup = Vec::new();
    let mut updates = Vec::new();
    let record = |f: &GridField, l2: &mut Vec<f64>, sup: &mut Vec<f64>| -> Result<()> {
        if let Some(t) = truth {
            let (a, b) = relative_errors(model, mask, f, t)?;
            l2.push(a);
            sup.push(b);
        }
        Ok(())
    };
    record(&f, &mut rel_l2, &mut rel_sup)?;
    let mut diverged = false;
    let mut growth = 0;
    for _ in 0..iters {
        let af = a0i0(&f)?;
        let next = a0d.lincomb(1.0, &f.lincomb(1.0, &af, -1.0)?, 1.0)?;
        updates.push(l2_norm(model, mask, &next.lincomb(1.0, &f, -1.0)?));
        f = next;
        record(&f, &mut rel_l2, &mut rel_sup)?;
        iterates.push(f.clone());
        let series: &[f64] = if truth.is_some() { &rel_l2 } else { &updates };
        if series.len() >= 2 && series[series.len() - 1] > series[series.len() - 2] {
            growth += 1;
            if growth >= 2 {
                diverged = true;
            }
        } else {
            growth = 0;
        }
    }
    Ok(ReconstructionReport {
        reconstruction: f,
        iterates,
        rel_l2,
        rel_sup,
        updates,
        iterations: iters,
        diverged,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Cylinder and constant-curvature disks get the closed-form solver where available.
pub fn default_solver(model: &SurfaceModel, flow: FlowParams, exact: bool) -> ExitSolver {
    if exact && model.kappa0().is_some() && matches!(model.geometry, ModelGeometry::Disk(_)) {
        ExitSolver::Exact
    } else {
        ExitSolver::Heun(flow)
    }
}
