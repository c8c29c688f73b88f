//! Uniform cell-centred grids, masked fields on them, and their file formats.

use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{invalid, parse_err, Error, Result};
use crate::hypgeo::C64;

pub const GRID_MAGIC: &[u8; 8] = b"TXGRID\x00\x01";
const MAX_GRID_N: usize = 1 << 14;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub n: usize,
    pub x0: f64,
    pub y0: f64,
    pub cell: f64,
    pub periodic_x: bool,
}

impl GridSpec {
    pub fn square(n: usize) -> Self {
        GridSpec {
            n,
            x0: -1.0,
            y0: -1.0,
            cell: 2.0 / n as f64,
            periodic_x: false,
        }
    }

    pub fn cylinder(n: usize) -> Self {
        GridSpec {
            n,
            x0: 0.0,
            y0: -1.0,
            cell: 2.0 / n as f64,
            periodic_x: true,
        }
    }

    #[inline]
    pub fn center(&self, i: usize, j: usize) -> C64 {
        C64::new(
            self.x0 + (i as f64 + 0.5) * self.cell,
            self.y0 + (j as f64 + 0.5) * self.cell,
        )
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn period(&self) -> f64 {
        self.n as f64 * self.cell
    }

    /// Index of the cell containing (x, y), if on the grid.
    pub fn locate(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let mut fx = (x - self.x0) / self.cell;
        if self.periodic_x {
            fx = fx.rem_euclid(self.n as f64);
        }
        let fy = (y - self.y0) / self.cell;
        if fx < 0.0 || fy < 0.0 {
            return None;
        }
        let (i, j) = (fx as usize, fy as usize);
        (i < self.n && j < self.n).then_some((i, j))
    }
}

/// A scalar or 2-vector field on a grid, zero outside its mask.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    pub spec: GridSpec,
    pub comps: usize,
    pub mask: Vec<bool>,
    pub values: Vec<f64>,
    pub model_hash: String,
}

impl GridField {
    pub fn zeros(spec: GridSpec, comps: usize, mask: Vec<bool>, model_hash: &str) -> Self {
        assert_eq!(mask.len(), spec.len());
        GridField {
            spec,
            comps,
            mask,
            values: vec![0.0; spec.len() * comps],
            model_hash: model_hash.to_string(),
        }
    }

    /// Evaluates `f` at masked cell centres.
    pub fn from_fn(
        spec: GridSpec,
        mask: Vec<bool>,
        model_hash: &str,
        comps: usize,
        mut f: impl FnMut(C64) -> [f64; 2],
    ) -> Self {
        let mut g = GridField::zeros(spec, comps, mask, model_hash);
        for j in 0..spec.n {
            for i in 0..spec.n {
                let k = spec.index(i, j);
                if g.mask[k] {
                    let v = f(spec.center(i, j));
                    for c in 0..comps {
                        g.values[k * comps + c] = v[c];
                    }
                }
            }
        }
        g
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.values[self.spec.index(i, j) * self.comps + c]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, c: usize, v: f64) {
        let k = self.spec.index(i, j);
        if self.mask[k] {
            self.values[k * self.comps + c] = v;
        }
    }

    pub fn same_layout(&self, other: &GridField) -> bool {
        self.spec == other.spec && self.comps == other.comps && self.mask == other.mask
    }

    pub fn check_layout(&self, other: &GridField) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::GridMismatch("fields live on different grids".into()));
        }
        Ok(())
    }

    /// a·self + b·other.
    pub fn lincomb(&self, a: f64, other: &GridField, b: f64) -> Result<GridField> {
        self.check_layout(other)?;
        let mut out = self.clone();
        for (o, (x, y)) in out.values.iter_mut().zip(self.values.iter().zip(&other.values)) {
            *o = a * x + b * y;
        }
        Ok(out)
    }

    pub fn scaled(&self, a: f64) -> GridField {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= a);
        out
    }

    /// Bilinear interpolation renormalized over in-mask corners; zero if none.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> [f64; 2] {
        let s = &self.spec;
        let fx = (x - s.x0) / s.cell - 0.5;
        let fy = (y - s.y0) / s.cell - 0.5;
        let i0 = fx.floor();
        let j0 = fy.floor();
        let tx = fx - i0;
        let ty = fy - j0;
        let n = s.n as i64;
        let mut acc = [0.0; 2];
        let mut wsum = 0.0;
        for (dj, wy) in [(0i64, 1.0 - ty), (1, ty)] {
            let j = j0 as i64 + dj;
            if j < 0 || j >= n || wy == 0.0 {
                continue;
            }
            for (di, wx) in [(0i64, 1.0 - tx), (1, tx)] {
                let mut i = i0 as i64 + di;
                if s.periodic_x {
                    i = i.rem_euclid(n);
                } else if i < 0 || i >= n {
                    continue;
                }
                let w = wx * wy;
                if w == 0.0 {
                    continue;
                }
                let k = (j * n + i) as usize;
                if !self.mask[k] {
                    continue;
                }
                wsum += w;
                for c in 0..self.comps {
                    acc[c] += w * self.values[k * self.comps + c];
                }
            }
        }
        if wsum > 0.0 {
            [acc[0] / wsum, acc[1] / wsum]
        } else {
            [0.0, 0.0]
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let n = self.spec.n;
        let mut out = Vec::with_capacity(64 + n * n / 8 + self.values.len() * 8);
        out.extend_from_slice(GRID_MAGIC);
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.extend_from_slice(&(self.comps as u32).to_le_bytes());
        out.extend_from_slice(&self.spec.x0.to_le_bytes());
        out.extend_from_slice(&self.spec.y0.to_le_bytes());
        out.extend_from_slice(&self.spec.cell.to_le_bytes());
        out.push(self.spec.periodic_x as u8);
        out.extend_from_slice(&(self.model_hash.len() as u16).to_le_bytes());
        out.extend_from_slice(self.model_hash.as_bytes());
        let mut bits = vec![0u8; (n * n).div_ceil(8)];
        for (k, &m) in self.mask.iter().enumerate() {
            if m {
                bits[k / 8] |= 1 << (k % 8);
            }
        }
        out.extend_from_slice(&bits);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<GridField> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != GRID_MAGIC {
            return Err(parse_err("grid field", "bad magic"));
        }
        let n = r.u32()? as usize;
        let comps = r.u32()? as usize;
        if n == 0 || n > MAX_GRID_N {
            return Err(parse_err("grid field", format!("grid size {n} out of range")));
        }
        if comps != 1 && comps != 2 {
            return Err(parse_err("grid field", format!("{comps} components")));
        }
        let x0 = r.f64()?;
        let y0 = r.f64()?;
        let cell = r.f64()?;
        if !(x0.is_finite() && y0.is_finite() && cell.is_finite() && cell > 0.0) {
            return Err(parse_err("grid field", "bad geometry"));
        }
        let periodic_x = match r.take(1)?[0] {
            0 => false,
            1 => true,
            b => return Err(parse_err("grid field", format!("bad periodic flag {b}"))),
        };
        let hlen = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
        let model_hash = std::str::from_utf8(r.take(hlen)?)
            .map_err(|_| parse_err("grid field", "hash is not utf-8"))?
            .to_string();
        let cells = n * n;
        let need = cells.div_ceil(8) + cells * comps * 8;
        if bytes.len() - r.pos != need {
            return Err(parse_err(
                "grid field",
                format!("expected {need} payload bytes, found {}", bytes.len() - r.pos),
            ));
        }
        let bits = r.take(cells.div_ceil(8))?;
        let mask: Vec<bool> = (0..cells).map(|k| bits[k / 8] >> (k % 8) & 1 == 1).collect();
        let mut values = Vec::with_capacity(cells * comps);
        for k in 0..cells * comps {
            let v = r.f64()?;
            if !v.is_finite() {
                return Err(parse_err("grid field", format!("non-finite value at {k}")));
            }
            if !mask[k / comps] && v != 0.0 {
                return Err(parse_err("grid field", format!("nonzero value outside mask at {k}")));
            }
            values.push(v);
        }
        Ok(GridField {
            spec: GridSpec {
                n,
                x0,
                y0,
                cell,
                periodic_x,
            },
            comps,
            mask,
            values,
            model_hash,
        })
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "# model_hash={}", self.model_hash)?;
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["i", "j", "x", "y", "mask", "value"];
        if self.comps == 2 {
            header.push("value2");
        }
        wtr.write_record(&header).map_err(csv_io)?;
        for j in 0..self.spec.n {
            for i in 0..self.spec.n {
                let p = self.spec.center(i, j);
                let k = self.spec.index(i, j);
                let mut rec = vec![
                    i.to_string(),
                    j.to_string(),
                    format!("{:e}", p.re),
                    format!("{:e}", p.im),
                    (self.mask[k] as u8).to_string(),
                ];
                for c in 0..self.comps {
                    rec.push(format!("{:e}", self.values[k * self.comps + c]));
                }
                wtr.write_record(&rec).map_err(csv_io)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// 8-bit greyscale preview of component `c`, top row = largest y; returns (min, max) used.
    pub fn write_pgm(&self, c: usize, mut w: impl Write) -> Result<(f64, f64)> {
        let n = self.spec.n;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for k in 0..n * n {
            if self.mask[k] {
                let v = self.values[k * self.comps + c];
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if !lo.is_finite() {
            lo = 0.0;
            hi = 0.0;
        }
        let span = if hi > lo { hi - lo } else { 1.0 };
        write!(w, "P5\n{n} {n}\n255\n")?;
        let mut row = vec![0u8; n];
        for j in (0..n).rev() {
            for (i, px) in row.iter_mut().enumerate() {
                let k = self.spec.index(i, j);
                *px = if self.mask[k] {
                    let t = (self.values[k * self.comps + c] - lo) / span;
                    (t * 255.0).round().clamp(0.0, 255.0) as u8
                } else {
                    0
                };
            }
            w.write_all(&row)?;
        }
        Ok((lo, hi))
    }

    /// Writes `<stem>.grid`, `<stem>.csv`, `<stem>.pgm` and the `<stem>.pgm.scale` sidecar.
    pub fn save_all(&self, stem: &std::path::Path) -> Result<()> {
        let with = |ext: &str| {
            let mut p = stem.as_os_str().to_owned();
            p.push(ext);
            std::path::PathBuf::from(p)
        };
        std::fs::write(with(".grid"), self.encode())?;
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(with(".csv"))?))?;
        let mut buf = Vec::new();
        let (lo, hi) = self.write_pgm(0, &mut buf)?;
        std::fs::write(with(".pgm"), buf)?;
        std::fs::write(
            with(".pgm.scale"),
            format!("model_hash={}\nmin={lo:e}\nmax={hi:e}\n", self.model_hash),
        )?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<GridField> {
        GridField::decode(&std::fs::read(path)?)
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < k {
            return Err(parse_err("grid field", "truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub center: [f64; 2],
    pub width: f64,
    pub amplitude: f64,
}

impl Gaussian {
    pub fn eval(&self, p: C64, period_x: Option<f64>) -> f64 {
        let mut dx = p.re - self.center[0];
        if let Some(per) = period_x {
            dx -= per * (dx / per).round();
        }
        let dy = p.im - self.center[1];
        self.amplitude * (-(dx * dx + dy * dy) / (2.0 * self.width * self.width)).exp()
    }
}

/// Sum of Gaussians in coordinates, masked.
pub fn gaussian_phantom(spec: GridSpec, mask: Vec<bool>, model_hash: &str, bumps: &[Gaussian]) -> Result<GridField> {
    for g in bumps {
        if !(g.width > 0.0) {
            return Err(invalid("width", "Gaussian width must be positive"));
        }
    }
    let per = spec.periodic_x.then(|| spec.period());
    Ok(GridField::from_fn(spec, mask, model_hash, 1, |p| {
        [bumps.iter().map(|g| g.eval(p, per)).sum(), 0.0]
    }))
}
