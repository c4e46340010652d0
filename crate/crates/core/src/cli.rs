//! Command-line front end: config files, presets and the subcommands.
//!
//! `DOA_SEED` is reserved for future stochastic features and is currently
//! ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::atlas::{self, OrbitStatus, PeriodicOrbit};
use crate::branch::{DelayFamily, DEFAULT_DTAU};
use crate::cusp::{count_check, CuspError};
use crate::field::{FieldError, FieldSpec, DEFAULT_R_MAX};
use crate::glue::{build_family_graph, trace_family, GlueError, Policy};
use crate::report::{self, emit_curve_csv, FamilySummary, Gate, ReportError, RunReport, SvgOptions};
use crate::verify::{self, ClosedOrbit, VerifyError, RESIDUAL_GATE};

pub const DEFAULT_TAU_SPAN: (f64, f64) = (-0.25, 1.75);
pub const CLOSURE_GATE: f64 = 1e-7;
pub const ORDER_GATE: f64 = 3.8;
pub const DEFAULT_H: f64 = 1e-3;
pub const DEFAULT_VERIFY_TAUS: [f64; 2] = [0.1, 0.3];
/// Delay-equation checkpoints per τ sample in the residual sweep.
const RESIDUAL_CHECKS: usize = 8;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad config file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("missing {0}: give it in the config, as a flag, or pick a preset")]
    Missing(&'static str),
    #[error("need tau_min < tau_max and tau_step > 0, got [{min}, {max}] step {step}")]
    BadTau { min: f64, max: f64, step: f64 },
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Atlas(#[from] atlas::AtlasError),
    #[error(transparent)]
    Glue(#[from] GlueError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PolicyArg {
    Switch,
    Reflect,
}

impl From<PolicyArg> for Policy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Switch => Policy::SwitchSides,
            PolicyArg::Reflect => Policy::Reflect,
        }
    }
}

/// A named example field with its default orbit and plotting choices.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: String,
    pub f: String,
    pub g: String,
    pub r_max: f64,
    pub alpha: Option<f64>,
    pub rho: Option<f64>,
    pub tau_span: Option<(f64, f64)>,
    pub reference_circles: Vec<f64>,
    pub r_cut: Option<f64>,
}

pub const PRESET_NAMES: &[&str] = &["fig4", "fig5a", "fig5b", "fig6a", "fig6b", "trig{k}", "poly"];

fn preset_base(name: &str, f: &str, g: &str) -> Preset {
    Preset {
        name: name.to_string(),
        f: f.to_string(),
        g: g.to_string(),
        r_max: DEFAULT_R_MAX,
        alpha: None,
        rho: None,
        tau_span: None,
        reference_circles: Vec::new(),
        r_cut: None,
    }
}

fn trig_k(name: &str) -> Option<u32> {
    let rest = name.strip_prefix("trig")?;
    let digits = rest.trim_start_matches(['{', '-', ':']).trim_end_matches('}');
    digits.parse().ok().filter(|k| *k > 0)
}

pub fn preset(name: &str) -> Result<Preset, ConfigError> {
    const LINEAR: &str = "2*pi*theta - pi";
    let alpha_linear = (1.0 + std::f64::consts::PI) / std::f64::consts::TAU;
    let mut p = match name {
        "fig4" => {
            let mut p = preset_base(name, "2*cos(10*pi*theta)*sin(4*pi*theta)", "exp(r)*sin(2*pi*r)");
            p.alpha = Some(0.1702);
            p.rho = Some(3.5);
            p.tau_span = Some((0.0, 1.0));
            p.reference_circles = vec![3.5];
            p
        }
        "fig5a" => {
            let mut p = preset_base(name, "3*theta - 1.5", "2*pi*r*(r-1)");
            p.alpha = Some(5.0 / 6.0);
            p.rho = Some(1.0);
            p
        }
        "fig5b" => {
            let mut p = preset_base(name, LINEAR, "3*pi*r*(r-1)");
            p.alpha = Some(alpha_linear);
            p.rho = Some(1.0);
            p
        }
        "fig6a" => {
            let mut p = preset_base(name, LINEAR, "-2*pi*r*(r-1)");
            p.alpha = Some(alpha_linear);
            p.rho = Some(1.0);
            p
        }
        "fig6b" => {
            let mut p = preset_base(name, LINEAR, "10/5*(r^3 + 1)*sin(4/5*pi*r)");
            p.alpha = Some(alpha_linear);
            p.rho = Some(1.25);
            p
        }
        "poly" => {
            let mut p = preset_base(name, "512*(theta - 1/4)^2*(theta - 3/4)^2 - 1", "2*pi*r*(r-1)");
            p.tau_span = Some((-0.25, 4.25));
            p
        }
        _ => match trig_k(name) {
            Some(k) => {
                let mut p = preset_base(name, &format!("sin(2*pi*{k}*theta)"), "2*pi*r*cos(2*pi*r)");
                p.r_max = 3.0;
                p.r_cut = Some(5.0);
                p
            }
            None => return Err(ConfigError::UnknownPreset(name.to_string())),
        },
    };
    p.name = name.to_string();
    Ok(p)
}

/// The flat key-value config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub f: Option<String>,
    pub g: Option<String>,
    pub tau_min: Option<f64>,
    pub tau_max: Option<f64>,
    pub tau_step: Option<f64>,
    pub r_max: Option<f64>,
    pub preset: Option<String>,
    pub output: Option<PathBuf>,
    pub policy: Option<PolicyArg>,
    pub alpha: Option<f64>,
    pub rho: Option<f64>,
    pub r_cut: Option<f64>,
    pub reference_circles: Option<Vec<f64>>,
    pub verify_taus: Option<Vec<f64>>,
    pub h: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(toml::from_str(&text)?)
    }

    /// Fields set in `over` win.
    fn overlay(self, over: FileConfig) -> FileConfig {
        FileConfig {
            f: over.f.or(self.f),
            g: over.g.or(self.g),
            tau_min: over.tau_min.or(self.tau_min),
            tau_max: over.tau_max.or(self.tau_max),
            tau_step: over.tau_step.or(self.tau_step),
            r_max: over.r_max.or(self.r_max),
            preset: over.preset.or(self.preset),
            output: over.output.or(self.output),
            policy: over.policy.or(self.policy),
            alpha: over.alpha.or(self.alpha),
            rho: over.rho.or(self.rho),
            r_cut: over.r_cut.or(self.r_cut),
            reference_circles: over.reference_circles.or(self.reference_circles),
            verify_taus: over.verify_taus.or(self.verify_taus),
            h: over.h.or(self.h),
        }
    }
}

/// A fully resolved run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub f: String,
    pub g: String,
    pub tau_min: f64,
    pub tau_max: f64,
    pub tau_step: f64,
    pub r_max: f64,
    pub preset: Option<String>,
    pub output: PathBuf,
    pub policy: Policy,
    pub alpha: Option<f64>,
    pub rho: Option<f64>,
    pub r_cut: Option<f64>,
    pub reference_circles: Vec<f64>,
    pub verify_taus: Vec<f64>,
    pub h: f64,
}

impl RunConfig {
    /// Resolve file and flag settings; a preset supplies defaults and always
    /// fixes `f` and `g`.
    pub fn resolve(cfg: FileConfig) -> Result<Self, ConfigError> {
        let p = cfg.preset.as_deref().map(preset).transpose()?;
        let (f, g) = match &p {
            Some(p) => (p.f.clone(), p.g.clone()),
            None => (
                cfg.f.clone().ok_or(ConfigError::Missing("f"))?,
                cfg.g.clone().ok_or(ConfigError::Missing("g"))?,
            ),
        };
        let span = p.as_ref().and_then(|p| p.tau_span).unwrap_or(DEFAULT_TAU_SPAN);
        let out = RunConfig {
            f,
            g,
            tau_min: cfg.tau_min.unwrap_or(span.0),
            tau_max: cfg.tau_max.unwrap_or(span.1),
            tau_step: cfg.tau_step.unwrap_or(DEFAULT_DTAU),
            r_max: cfg.r_max.or(p.as_ref().map(|p| p.r_max)).unwrap_or(DEFAULT_R_MAX),
            preset: cfg.preset.clone(),
            output: cfg.output.clone().unwrap_or_else(|| PathBuf::from("out")),
            policy: cfg.policy.unwrap_or(PolicyArg::Switch).into(),
            alpha: cfg.alpha.or(p.as_ref().and_then(|p| p.alpha)),
            rho: cfg.rho.or(p.as_ref().and_then(|p| p.rho)),
            r_cut: cfg.r_cut.or(p.as_ref().and_then(|p| p.r_cut)),
            reference_circles: cfg
                .reference_circles
                .clone()
                .or(p.as_ref().map(|p| p.reference_circles.clone()))
                .unwrap_or_default(),
            verify_taus: cfg.verify_taus.clone().unwrap_or(DEFAULT_VERIFY_TAUS.to_vec()),
            h: cfg.h.unwrap_or(DEFAULT_H),
        };
        if !(out.tau_step > 0.0) || !(out.tau_min < out.tau_max) {
            return Err(ConfigError::BadTau {
                min: out.tau_min,
                max: out.tau_max,
                step: out.tau_step,
            });
        }
        Ok(out)
    }

    pub fn from_preset(name: &str) -> Result<Self, ConfigError> {
        RunConfig::resolve(FileConfig {
            preset: Some(name.to_string()),
            ..Default::default()
        })
    }

    pub fn spec(&self) -> Result<FieldSpec, ConfigError> {
        Ok(FieldSpec::parse(&self.f, &self.g, self.r_max)?)
    }

    pub fn tau_span(&self) -> (f64, f64) {
        (self.tau_min, self.tau_max)
    }

    fn report(&self, spec: &FieldSpec) -> RunReport {
        RunReport::new(RunReport::echo(
            spec,
            self.tau_span(),
            self.tau_step,
            self.policy,
            self.preset.as_deref(),
        ))
    }
}

#[derive(Debug, Parser)]
#[command(name = "doa", version, about = "Periodic delay orbits of a planar vector field")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Flat TOML config file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// fig4 | fig5a | fig5b | fig6a | fig6b | trig{k} | poly
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: logical cores)
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub policy: Option<PolicyArg>,
    #[arg(long, global = true)]
    pub dtau: Option<f64>,
    #[arg(long, global = true)]
    pub rmax: Option<f64>,
    /// Angular formula in theta
    #[arg(long, global = true)]
    pub f: Option<String>,
    /// Radial formula in r
    #[arg(long, global = true)]
    pub g: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub tau_min: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub tau_max: Option<f64>,
    /// Trace only the family through this alpha
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Trace only the family through this rho
    #[arg(long, global = true)]
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// List the periodic ODE orbits and their degeneracy
    Scan,
    /// Trace, glue and check delay families; writes CSV, SVG and report.json
    Trace,
    /// Integrate the delay equation and the monodromy of each orbit
    Verify {
        /// Finest step of the convergence study
        #[arg(long)]
        h: Option<f64>,
        /// Delays to integrate at
        #[arg(long, value_delimiter = ',')]
        tau: Option<Vec<f64>>,
    },
    /// Draw the families and the graphs of f and g/r
    Plot,
}

impl CommonArgs {
    pub fn to_config(&self) -> Result<FileConfig, ConfigError> {
        let file = match &self.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        Ok(file.overlay(FileConfig {
            f: self.f.clone(),
            g: self.g.clone(),
            tau_min: self.tau_min,
            tau_max: self.tau_max,
            tau_step: self.dtau,
            r_max: self.rmax,
            preset: self.preset.clone(),
            output: self.out.clone(),
            policy: self.policy,
            alpha: self.alpha,
            rho: self.rho,
            ..Default::default()
        }))
    }
}

/// A command's report, its printable summary and whether every gate passed.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: RunReport,
    pub summary: String,
    pub ok: bool,
}

pub fn cmd_scan(cfg: &RunConfig) -> Result<Outcome> {
    let spec = cfg.spec()?;
    let mut report = cfg.report(&spec);
    let mut summary = String::new();
    let _ = writeln!(summary, "{:>12} {:>12}  classification", "alpha", "rho");
    for orbit in atlas::enumerate_periodic_orbits(&spec)? {
        match orbit {
            PeriodicOrbit::Constant => {
                let _ = writeln!(summary, "{:>12} {:>12}  constant", "-", "0");
            }
            PeriodicOrbit::Rotating(c) => {
                let status = match &c.status {
                    OrbitStatus::NonDegenerate => "non-degenerate".to_string(),
                    OrbitStatus::Degenerate(why) => format!("degenerate {why:?}"),
                };
                let _ = writeln!(summary, "{:>12.8} {:>12.8}  {status}", c.alpha.location, c.rho.location);
                report.atlas.push(c);
            }
        }
    }
    Ok(Outcome { report, summary, ok: true })
}

/// The family through the configured orbit, or every maximal family.
pub fn trace_families(cfg: &RunConfig, spec: &FieldSpec) -> Result<Vec<DelayFamily>> {
    let span = cfg.tau_span();
    match (cfg.alpha, cfg.rho) {
        (Some(a), Some(r)) => Ok(vec![trace_family(spec, a, r, span, cfg.tau_step, cfg.policy, (None, None))?]),
        _ => Ok(build_family_graph(spec, span, cfg.tau_step, cfg.policy)?.maximal_families),
    }
}

/// `max dde_residual` over every sample of a family.
pub fn family_residual(spec: &FieldSpec, family: &DelayFamily) -> Result<f64, VerifyError> {
    family
        .tau()
        .par_iter()
        .map(|tau| verify::dde_residual(spec, family, *tau, RESIDUAL_CHECKS))
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
}

fn csv_name(k: usize) -> String {
    format!("family_{k}.csv")
}

pub fn cmd_trace(cfg: &RunConfig) -> Result<Outcome> {
    let spec = cfg.spec()?;
    let mut report = cmd_scan(cfg)?.report;
    let families = trace_families(cfg, &spec)?;
    fs::create_dir_all(&cfg.output)?;
    let mut summary = String::new();
    for (k, fam) in families.iter().enumerate() {
        let mut s = FamilySummary::of(fam);
        let res = family_residual(&spec, fam)?;
        s.max_residual = Some(res);
        report
            .verification
            .gates
            .push(Gate::at_most(format!("residual {}", fam.label), res, RESIDUAL_GATE));
        if fam.is_circle_family {
            let violated = matches!(count_check(fam), Err(CuspError::PropertyViolation(_)));
            report
                .verification
                .gates
                .push(Gate::at_most(format!("cusp count {}", fam.label), violated as u8 as f64, 0.0));
        }
        if let Some(e) = &fam.cusp_error {
            report
                .verification
                .gates
                .push(Gate::at_most(format!("cusp classification {}: {e}", fam.label), 1.0, 0.0));
        }
        let name = csv_name(k);
        emit_curve_csv(fam, &cfg.output.join(&name), cfg.r_cut)?;
        s.csv = Some(name);
        let period = fam.period.map(|p| p.to_string()).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            summary,
            "{}: {} samples, period {period}, {} cusps {:?}, residual {res:.2e}",
            fam.label,
            fam.len(),
            fam.cusps.len(),
            fam.cusps.iter().map(|c| (c.tau_star, c.condition)).collect::<Vec<_>>(),
        );
        report.families.push(s);
    }
    let opts = svg_options(cfg);
    report::emit_svg(&families, &opts, &cfg.output.join("families.svg"))?;
    report.write(&cfg.output.join("report.json"))?;
    let ok = report.verification.all_pass();
    Ok(Outcome { report, summary, ok })
}

fn svg_options(cfg: &RunConfig) -> SvgOptions {
    SvgOptions {
        reference_circles: cfg.reference_circles.clone(),
        r_cut: cfg.r_cut,
        ..Default::default()
    }
}

pub fn cmd_verify(cfg: &RunConfig) -> Result<Outcome> {
    let spec = cfg.spec()?;
    let mut report = cfg.report(&spec);
    let mut summary = String::new();
    let (alphas, rhos) = atlas::orbit_seeds(&spec, atlas::DEFAULT_N_GRID)?;
    let pairs: Vec<_> = alphas.points.iter().flat_map(|a| rhos.points.iter().map(move |r| (*a, *r))).collect();
    let table = pairs
        .par_iter()
        .map(|(a, r)| -> Result<_> {
            Ok((verify::monodromy(&spec, a.location, r.location)?, atlas::classify_orbit(&spec, *a, *r)?))
        })
        .collect::<Result<Vec<_>>>()?;
    for (m, c) in table {
        let (a, r) = (m.alpha, m.rho);
        let _ = writeln!(
            summary,
            "monodromy alpha={a:.8} rho={r:.8}: eigenvalues {:.6e} {:.6e}, deviation {:?}",
            m.eigenvalues.0, m.eigenvalues.1, m.deviation
        );
        if let Some(d) = m.deviation {
            let name = format!("monodromy alpha={a:.6} rho={r:.6}");
            report.verification.gates.push(Gate::at_most(name, d, verify::MONODROMY_TOL));
        }
        let agree = m.nondegenerate == !c.is_degenerate();
        report.verification.gates.push(Gate::at_most(
            format!("degeneracy predicate alpha={a:.6} rho={r:.6}"),
            (!agree) as u8 as f64,
            0.0,
        ));
        report.atlas.push(c);
        report.push_monodromy(m);
    }

    let families = trace_families(cfg, &spec)?;
    let h = cfg.h;
    let steps = [4.0 * h, 2.0 * h, h];
    for fam in &families {
        let (lo, hi) = (fam.tau()[0], fam.tau()[fam.len() - 1]);
        for &tau in cfg.verify_taus.iter().filter(|t| **t >= lo && **t <= hi) {
            let res = verify::dde_residual(&spec, fam, tau, 64)?;
            report
                .verification
                .gates
                .push(Gate::at_most(format!("residual {} tau={tau}", fam.label), res, RESIDUAL_GATE));
            let orbit = ClosedOrbit::of_family(fam, tau)?;
            if orbit.radius <= 0.0 {
                continue;
            }
            let conv = verify::convergence_study(&spec, &orbit, tau, 1.0, &steps)?;
            let close = verify::closure(&spec, &orbit, tau, h)?;
            let _ = writeln!(
                summary,
                "{} tau={tau}: errors {:?}, observed order {:.3}, closure {close:.3e}",
                fam.label,
                conv.errors,
                conv.min_order()
            );
            let order = conv.min_order();
            report.verification.gates.push(Gate {
                name: format!("order {} tau={tau}", fam.label),
                value: order,
                tol: ORDER_GATE,
                pass: order >= ORDER_GATE,
            });
            report
                .verification
                .gates
                .push(Gate::at_most(format!("closure {} tau={tau}", fam.label), close, CLOSURE_GATE));
            report.verification.convergence.push(conv);
        }
        report.families.push(FamilySummary::of(fam));
    }
    fs::create_dir_all(&cfg.output)?;
    report.write(&cfg.output.join("verify.json"))?;
    let ok = report.verification.all_pass();
    Ok(Outcome { report, summary, ok })
}

pub fn cmd_plot(cfg: &RunConfig) -> Result<Outcome> {
    let spec = cfg.spec()?;
    let report = cfg.report(&spec);
    let families = trace_families(cfg, &spec)?;
    fs::create_dir_all(&cfg.output)?;
    report::emit_svg(&families, &svg_options(cfg), &cfg.output.join("families.svg"))?;
    let gt = report::render_function_svg(&spec.gt, 0.0, spec.r_max, 2000)?;
    fs::write(cfg.output.join("g_tilde.svg"), gt)?;
    let f = report::render_function_svg(&spec.f, 0.0, 1.0, 2000)?;
    fs::write(cfg.output.join("f.svg"), f)?;
    let summary = format!("{} families plotted to {}\n", families.len(), cfg.output.display());
    Ok(Outcome { report, summary, ok: true })
}

pub fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    let mut file = cli.common.to_config()?;
    if let Command::Verify { h, tau } = &cli.command {
        file = file.overlay(FileConfig {
            h: *h,
            verify_taus: tau.clone(),
            ..Default::default()
        });
    }
    let cfg = RunConfig::resolve(file)?;
    Ok(match cli.command {
        Command::Scan => cmd_scan(&cfg)?,
        Command::Trace => cmd_trace(&cfg)?,
        Command::Verify { .. } => cmd_verify(&cfg)?,
        Command::Plot => cmd_plot(&cfg)?,
    })
}
