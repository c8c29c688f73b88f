//! Run configuration: one TOML file with model, rays, inversion, escape and phantom blocks.

use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use std::path::{Path, PathBuf};

use crate::error::{invalid, parse_err, Result};
use crate::geoflow::{FitWindow, FlowParams};
use crate::grid::Gaussian;
use crate::surface::{ModelConfig, ModelKind};
use crate::xray::RayGrid;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaysConfig {
    /// Boundary points per component.
    pub pts: usize,
    pub n_influx: usize,
    /// Influx cone is (−half_width, half_width) about the inner normal.
    pub half_width: f64,
    /// Fiber size for the Hilbert transform and backprojection.
    pub n_full: usize,
    pub h: f64,
    pub t_max: f64,
    /// Closed-form exits for backprojection on constant-curvature disk models.
    #[serde(default = "yes")]
    pub exact_exits: bool,
}

fn yes() -> bool {
    true
}

impl Default for RaysConfig {
    fn default() -> Self {
        RaysConfig {
            pts: 200,
            n_influx: 256,
            half_width: FRAC_PI_2,
            n_full: 512,
            h: 1e-3,
            t_max: 30.0,
            exact_exits: true,
        }
    }
}

impl RaysConfig {
    pub fn grid(&self) -> RayGrid {
        RayGrid {
            pts: self.pts,
            n_influx: self.n_influx,
            half_width: self.half_width,
        }
    }

    pub fn flow(&self) -> FlowParams {
        FlowParams {
            h: self.h,
            t_max: self.t_max,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InversionConfig {
    pub iters: usize,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig { iters: 2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EscapeConfig {
    pub samples: usize,
    pub t_max: f64,
    pub bin: f64,
    pub h: f64,
    pub v_start: f64,
    pub min_survivors: usize,
}

impl Default for EscapeConfig {
    fn default() -> Self {
        EscapeConfig {
            samples: 100_000,
            t_max: 12.0,
            bin: 0.05,
            h: 1e-2,
            v_start: 0.5,
            min_survivors: 200,
        }
    }
}

impl EscapeConfig {
    pub fn window(&self) -> FitWindow {
        FitWindow {
            v_start: self.v_start,
            min_survivors: self.min_survivors,
        }
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub model: ModelConfig,
    #[serde(default)]
    pub rays: RaysConfig,
    #[serde(default)]
    pub inversion: InversionConfig,
    #[serde(default)]
    pub escape: EscapeConfig,
    #[serde(default)]
    pub phantom: Vec<Gaussian>,
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(invalid(name, format!("{v} is not a positive finite number")));
    }
    Ok(())
}

fn nonzero(name: &'static str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(invalid(name, "must be positive"));
    }
    Ok(())
}

impl RunConfig {
    pub fn new(model: ModelConfig) -> Self {
        RunConfig {
            seed: 0,
            output: default_output(),
            model,
            rays: RaysConfig::default(),
            inversion: InversionConfig::default(),
            escape: EscapeConfig::default(),
            phantom: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        nonzero("model.n", self.model.n)?;
        positive("model.kappa0", self.model.kappa0)?;
        let r = &self.rays;
        nonzero("rays.pts", r.pts)?;
        nonzero("rays.n_influx", r.n_influx)?;
        if !(r.half_width > 0.0 && r.half_width <= FRAC_PI_2) {
            return Err(invalid("rays.half_width", "cone must lie in (−π/2, π/2)"));
        }
        if !r.n_full.is_power_of_two() || r.n_full < 4 {
            return Err(invalid("rays.n_full", "must be a power of two, at least 4"));
        }
        positive("rays.h", r.h)?;
        positive("rays.t_max", r.t_max)?;
        let e = &self.escape;
        nonzero("escape.samples", e.samples)?;
        nonzero("escape.min_survivors", e.min_survivors)?;
        positive("escape.t_max", e.t_max)?;
        positive("escape.bin", e.bin)?;
        positive("escape.h", e.h)?;
        if !(e.v_start > 0.0 && e.v_start <= 1.0) {
            return Err(invalid("escape.v_start", "must lie in (0, 1]"));
        }
        for g in &self.phantom {
            positive("phantom.width", g.width)?;
            if !(g.amplitude.is_finite() && g.center.iter().all(|c| c.is_finite())) {
                return Err(invalid("phantom", "non-finite Gaussian parameters"));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let c: RunConfig = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| parse_err("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    /// Desk-scale settings for the five numerical experiments.
    pub fn experiment(n: u8) -> Result<RunConfig> {
        let bump = |x: f64, y: f64, w: f64, a: f64| Gaussian {
            center: [x, y],
            width: w,
            amplitude: a,
        };
        let two_gen = |kind: ModelKind, phantom: Vec<Gaussian>| {
            let mut c = RunConfig::new(ModelConfig::new(kind, 150));
            c.rays.pts = 600;
            c.rays.n_influx = 400;
            c.rays.h = 1e-2;
            c.inversion.iters = 0;
            c.phantom = phantom;
            c
        };
        let mut c = match n {
            1 => {
                let mut c = RunConfig::new(ModelConfig::new(ModelKind::SchottkyOneGen { x: -0.3 }, 150));
                c.rays.n_influx = 400;
                c.rays.h = 1e-2;
                c.inversion.iters = 0;
                c.phantom = vec![bump(0.0, 0.3, 0.09, 1.0), bump(0.05, -0.25, 0.07, 0.6)];
                c
            }
            2 => two_gen(
                ModelKind::SchottkyTorus { x: -0.6 },
                vec![bump(0.1, 0.1, 0.08, 1.0), bump(-0.15, -0.1, 0.06, 0.7)],
            ),
            3 => two_gen(
                ModelKind::SchottkyPants { x: -0.6 },
                vec![bump(-0.1, 0.12, 0.08, 1.0), bump(0.12, -0.05, 0.06, 0.7)],
            ),
            4 => two_gen(
                ModelKind::SchottkyTorus { x: -0.5 },
                vec![bump(0.1, 0.1, 0.08, 1.0), bump(-0.15, -0.1, 0.06, 0.7)],
            ),
            5 => {
                let mut c = RunConfig::new(ModelConfig::new(ModelKind::Cylinder { eps: 0.4 }, 150));
                c.rays.n_influx = 400;
                c.rays.h = 1e-2;
                c.phantom = vec![bump(-0.4, 0.2, 0.18, 1.0), bump(0.5, -0.3, 0.14, 0.8)];
                c
            }
            _ => return Err(invalid("experiment", format!("{n} is not in 1..=5"))),
        };
        c.output = PathBuf::from(format!("experiment{n}"));
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_fill_in() {
        let c = RunConfig::from_toml_str("[model]\nkind = \"cylinder\"\neps = 0.4\n").unwrap();
        assert_eq!(c.model.n, 150);
        assert_eq!(c.rays, RaysConfig::default());
        assert_eq!(c.inversion.iters, 2);
        assert!(c.phantom.is_empty());
    }

    #[test]
    fn rejects_bad_values() {
        let base = RunConfig::new(ModelConfig::new(ModelKind::Cylinder { eps: 0.4 }, 32));
        let mut c = base.clone();
        c.rays.half_width = 1.6;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.rays.n_full = 500;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.rays.pts = 0;
        assert!(c.validate().is_err());
        let mut c = base;
        c.phantom.push(Gaussian {
            center: [0.0, 0.0],
            width: 0.0,
            amplitude: 1.0,
        });
        assert!(c.validate().is_err());
        assert!(RunConfig::from_toml_str("[model]\nkind = \"cylinder\"\neps = 0.4\n[rays]\nbogus = 1\n").is_err());
        assert!(RunConfig::from_toml_str("[model]\nkind = \"sphere\"\n").is_err());
    }

    #[test]
    fn presets_are_valid() {
        for n in 1..=5 {
            RunConfig::experiment(n).unwrap();
        }
        assert!(RunConfig::experiment(6).is_err());
    }

    fn arb_kind() -> impl Strategy<Value = ModelKind> {
        prop_oneof![
            (-0.9..-0.05f64).prop_map(|x| ModelKind::SchottkyOneGen { x }),
            (-0.9..-0.05f64).prop_map(|x| ModelKind::SchottkyTorus { x }),
            (-0.9..-0.05f64).prop_map(|x| ModelKind::SchottkyPants { x }),
            (0.0..1.3f64).prop_map(|eps| ModelKind::Cylinder { eps }),
        ]
    }

    proptest! {
        #[test]
        fn toml_round_trip(
            kind in arb_kind(),
            n in 1usize..400,
            cut in prop::option::of(0.1..3.0f64),
            hw in 0.01..FRAC_PI_2,
            h in 1e-5..1e-1f64,
            seed in 0..=i64::MAX as u64,
            bumps in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, 1e-3..1.0f64, -5.0..5.0f64), 0..4),
        ) {
            let mut c = RunConfig::new(ModelConfig::new(kind, n));
            c.model.cut_distance = cut;
            c.rays.half_width = hw;
            c.rays.h = h;
            c.seed = seed;
            c.phantom = bumps.into_iter().map(|(x, y, w, a)| Gaussian { center: [x, y], width: w, amplitude: a }).collect();
            let text = c.to_toml_string().unwrap();
            let back = RunConfig::from_toml_str(&text).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(back.to_toml_string().unwrap(), text);
        }
    }
}
