//! Command-line pipeline: phantom, forward, invert, neumann, escape, norms, experiment.

use clap::{Args, Parser, Subcommand};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::bounds::{pi0_norm, pi0_norm_comparison, pi0_norm_low, theorem2_constant, w_norm_bound, SpectralParams};
use crate::config::RunConfig;
use crate::error::{invalid, Error, Result};
use crate::geoflow::{escape_rate, estimate_delta_gamma, DeltaFit};
use crate::grid::{gaussian_phantom, GridField};
use crate::inversion::{default_solver, ReconstructionReport, Reconstructor};
use crate::surface::SurfaceModel;
use crate::xray::{AngleGrid, FanBeamData};

#[derive(Debug, Parser)]
#[command(name = "trapxray", version, about = "Geodesic X-ray transform inversion on surfaces with trapping")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalOpts {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Neumann iterations; overrides the config.
    #[arg(long, global = true)]
    pub iters: Option<usize>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Random seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sum of Gaussians on the model grid.
    Phantom,
    /// Fan-beam data I₀f of a field.
    Forward {
        /// Field file (.grid); defaults to <out>/phantom.grid.
        #[arg(long)]
        field: Option<PathBuf>,
    },
    /// One-shot reconstruction A₀d.
    Invert {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Reference field for error metrics.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// A₀d followed by Neumann iterations.
    Neumann {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Escape-rate curve V(t) and the δ_Γ estimate.
    Escape,
    /// Table of spectral and error-operator bounds.
    Norms(NormsArgs),
    /// Full artifact set for one of the preset experiments.
    Experiment {
        #[arg(value_parser = clap::value_parser!(u8).range(1..=5))]
        n: u8,
    },
}

#[derive(Debug, Clone, Args)]
pub struct NormsArgs {
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub delta: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub lambda: Vec<f64>,
    /// λ₂; λ₁ is then (1 − λ)/λ₂.
    #[arg(long, default_value_t = 1.0)]
    pub lambda2: f64,
    #[arg(long, default_value_t = 1.0)]
    pub kappa0: f64,
    /// sup |dκ| for the ‖W‖ column.
    #[arg(long, default_value_t = 0.0)]
    pub dkappa: f64,
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.global.threads {
        if t == 0 {
            return Err(invalid("threads", "must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| invalid("threads", e.to_string()))?;
    }
    let g = &cli.global;
    match &cli.command {
        Command::Norms(a) => {
            let table = cmd_norms(a)?;
            print!("{table}");
            if let Some(out) = &g.out {
                std::fs::create_dir_all(out)?;
                std::fs::write(out.join("norms.csv"), table)?;
            }
            Ok(())
        }
        Command::Experiment { n } => {
            let mut cfg = RunConfig::experiment(*n)?;
            apply_overrides(&mut cfg, g);
            let m = cmd_experiment(&cfg)?;
            println!("experiment {n}: rel_l2={:e} rel_sup={:e}", m.rel_l2, m.rel_sup);
            Ok(())
        }
        cmd => {
            let path = g
                .config
                .as_ref()
                .ok_or_else(|| invalid("config", "--config is required for this command"))?;
            let mut cfg = RunConfig::load(path)?;
            apply_overrides(&mut cfg, g);
            std::fs::create_dir_all(&cfg.output)?;
            let out = cfg.output.clone();
            match cmd {
                Command::Phantom => cmd_phantom(&cfg)?.save_all(&out.join("phantom")),
                Command::Forward { field } => {
                    let field = field.clone().unwrap_or_else(|| out.join("phantom.grid"));
                    cmd_forward(&cfg, &GridField::load(&field)?)?.save(&out.join("sinogram.csv"))
                }
                Command::Invert { data, truth } | Command::Neumann { data, truth } => {
                    let iters = if matches!(cmd, Command::Invert { .. }) {
                        0
                    } else {
                        cfg.inversion.iters
                    };
                    let data = FanBeamData::load(&data.clone().unwrap_or_else(|| out.join("sinogram.csv")))?;
                    let truth = truth.as_deref().map(GridField::load).transpose()?;
                    let rep = cmd_neumann(&cfg, &data, iters, truth.as_ref())?;
                    write_report(&out, &rep, truth.as_ref())
                }
                Command::Escape => {
                    let fit = cmd_escape(&cfg)?;
                    println!("delta_hat={:e} raw={:e}", fit.delta, fit.raw);
                    Ok(())
                }
                Command::Norms(_) | Command::Experiment { .. } => unreachable!(),
            }
        }
    }
}

fn apply_overrides(cfg: &mut RunConfig, g: &GlobalOpts) {
    if let Some(o) = &g.out {
        cfg.output = o.clone();
    }
    if let Some(k) = g.iters {
        cfg.inversion.iters = k;
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
}

pub fn cmd_phantom(cfg: &RunConfig) -> Result<GridField> {
    cfg.validate()?;
    let m = SurfaceModel::build(&cfg.model)?;
    gaussian_phantom(m.grid_spec(), m.mask.clone(), &m.hash, &cfg.phantom)
}

pub fn cmd_forward(cfg: &RunConfig, field: &GridField) -> Result<FanBeamData> {
    cfg.validate()?;
    let m = SurfaceModel::build(&cfg.model)?;
    crate::xray::forward_i0(&m, field, &cfg.rays.grid(), &cfg.rays.flow())
}

fn check_rays(cfg: &RunConfig, d: &FanBeamData) -> Result<()> {
    let want = AngleGrid::Influx {
        half_width: cfg.rays.half_width,
    };
    if d.grid != want || d.n_pts != cfg.rays.pts || d.n_angles != cfg.rays.n_influx {
        return Err(Error::GridMismatch(format!(
            "data sampled as {} x {} on {}, config asks for {} x {} on {}",
            d.n_pts, d.n_angles, d.grid, cfg.rays.pts, cfg.rays.n_influx, want
        )));
    }
    Ok(())
}

pub fn cmd_neumann(
    cfg: &RunConfig,
    data: &FanBeamData,
    iters: usize,
    truth: Option<&GridField>,
) -> Result<ReconstructionReport> {
    cfg.validate()?;
    let m = SurfaceModel::build(&cfg.model)?;
    if data.model_hash != m.hash {
        return Err(Error::GeometryMismatch {
            expected: m.hash.clone(),
            found: data.model_hash.clone(),
        });
    }
    check_rays(cfg, data)?;
    if let Some(t) = truth {
        if t.model_hash != m.hash {
            return Err(Error::GeometryMismatch {
                expected: m.hash.clone(),
                found: t.model_hash.clone(),
            });
        }
    }
    let flow = cfg.rays.flow();
    let r = Reconstructor::new(
        &m,
        cfg.rays.grid(),
        flow,
        cfg.rays.n_full,
        default_solver(&m, flow, cfg.rays.exact_exits),
    )?;
    r.neumann(data, iters, truth)
}

fn write_report(out: &Path, rep: &ReconstructionReport, truth: Option<&GridField>) -> Result<()> {
    rep.reconstruction.save_all(&out.join("reconstruction"))?;
    for (k, f) in rep.iterates.iter().enumerate().skip(1) {
        f.save_all(&out.join(format!("iterate{k}")))?;
    }
    if let Some(t) = truth {
        rep.reconstruction.lincomb(1.0, t, -1.0)?.save_all(&out.join("error"))?;
    }
    std::fs::write(out.join("report.csv"), report_csv(rep))?;
    Ok(())
}

/// Per-iteration errors and update norms; NaN where no reference was given.
pub fn report_csv(rep: &ReconstructionReport) -> String {
    let mut s = format!("# diverged={}\niteration,rel_l2,rel_sup,update_l2\n", rep.diverged);
    for k in 0..=rep.iterations {
        let l2 = rep.rel_l2.get(k).copied().unwrap_or(f64::NAN);
        let sup = rep.rel_sup.get(k).copied().unwrap_or(f64::NAN);
        let upd = if k == 0 {
            f64::NAN
        } else {
            rep.updates[k - 1]
        };
        let _ = writeln!(s, "{k},{l2:e},{sup:e},{upd:e}");
    }
    s
}

pub fn cmd_escape(cfg: &RunConfig) -> Result<DeltaFit> {
    cfg.validate()?;
    let m = SurfaceModel::build(&cfg.model)?;
    let e = &cfg.escape;
    let curve = escape_rate(&m, e.samples, e.t_max, e.bin, e.h, cfg.seed)?;
    std::fs::create_dir_all(&cfg.output)?;
    let mut buf = format!("# model_hash={}\n", m.hash).into_bytes();
    curve.write_csv(&mut buf)?;
    std::fs::write(cfg.output.join("escape.csv"), buf)?;
    let fit = estimate_delta_gamma(&curve, &e.window())?;
    std::fs::write(
        cfg.output.join("delta.csv"),
        format!(
            "# model_hash={}\ndelta_hat,raw,slope,t0,t1,points\n{:e},{:e},{:e},{:e},{:e},{}\n",
            m.hash, fit.delta, fit.raw, fit.slope, fit.t0, fit.t1, fit.points
        ),
    )?;
    Ok(fit)
}

pub fn cmd_norms(a: &NormsArgs) -> Result<String> {
    let mut s = String::from(
        "delta,lambda,lambda1,lambda2,kappa0,pi0_low,pi0_norm,pi0_comparison,theorem2_constant,dkappa,w_bound\n",
    );
    for &delta in &a.delta {
        for &lambda in &a.lambda {
            let lambda1 = (1.0 - lambda) / a.lambda2;
            let p = SpectralParams::from_comparison(delta, lambda1, a.lambda2, a.kappa0)?;
            let pc = pi0_norm_comparison(&p)?;
            let _ = writeln!(
                s,
                "{delta},{lambda},{lambda1},{},{},{:.10e},{:.10e},{:.10e},{:.10e},{},{:.10e}",
                a.lambda2,
                a.kappa0,
                pi0_norm_low(lambda)?,
                pi0_norm(delta, lambda)?,
                pc,
                theorem2_constant(delta, lambda1, a.lambda2)?,
                a.dkappa,
                w_norm_bound(a.dkappa, a.kappa0, pc),
            );
        }
    }
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExperimentMetrics {
    pub rel_l2: f64,
    pub rel_sup: f64,
    pub seconds: f64,
}

/// Phantom, sinogram, reconstruction (with iterates), pointwise error and metrics.csv.
pub fn cmd_experiment(cfg: &RunConfig) -> Result<ExperimentMetrics> {
    let start = Instant::now();
    std::fs::create_dir_all(&cfg.output)?;
    let out = &cfg.output;
    cfg.save(&out.join("config.toml"))?;
    let f = cmd_phantom(cfg)?;
    f.save_all(&out.join("phantom"))?;
    let d = cmd_forward(cfg, &f)?;
    d.save(&out.join("sinogram.csv"))?;
    let rep = cmd_neumann(cfg, &d, cfg.inversion.iters, Some(&f))?;
    write_report(out, &rep, Some(&f))?;
    let seconds = start.elapsed().as_secs_f64();
    let mut s = format!("# model_hash={}\niteration,rel_l2,rel_sup,runtime_s\n", f.model_hash);
    for k in 0..rep.rel_l2.len() {
        let _ = writeln!(s, "{k},{:e},{:e},{seconds:.3}", rep.rel_l2[k], rep.rel_sup[k]);
    }
    std::fs::write(out.join("metrics.csv"), s)?;
    Ok(ExperimentMetrics {
        rel_l2: *rep.rel_l2.last().expect("at least the one-shot iterate"),
        rel_sup: *rep.rel_sup.last().expect("at least the one-shot iterate"),
        seconds,
    })
}
