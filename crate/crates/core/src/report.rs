//! CSV curves, the JSON run report and SVG plots.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::atlas::{self, AtlasError, LevelPoint, OrbitClassification, ScanDomain, DEFAULT_N_GRID};
use crate::branch::{DelayFamily, Terminal};
use crate::cusp::CuspRecord;
use crate::expr::ScalarFunction;
use crate::field::{FieldSpec, PlanarPoint};
use crate::glue::{GlueEvent, Policy};
use crate::verify::{ConvergenceReport, MonodromyReport};

pub const SCHEMA: &str = "delay-orbit-atlas/1";
pub const CSV_HEADER: &str = "tau,t,r,x,y,is_cusp,glue_event";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("family {0} has no samples")]
    EmptyFamily(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unsupported schema {0:?}")]
    Schema(String),
    #[error(transparent)]
    Atlas(#[from] AtlasError),
}

pub type Result<T, E = ReportError> = std::result::Result<T, E>;

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub tau: f64,
    pub t: f64,
    pub r: f64,
    pub x: f64,
    pub y: f64,
    pub is_cusp: bool,
    pub glue_event: String,
}

fn nearest(tau: &[f64], at: f64) -> usize {
    let k = tau.partition_point(|x| *x < at);
    if k == 0 {
        0
    } else if k == tau.len() || (at - tau[k - 1]) <= (tau[k] - at) {
        k - 1
    } else {
        k
    }
}

fn event_label(e: &GlueEvent) -> String {
    format!("{:?}", e.kind)
}

/// The rows of a family, dropping samples with `r > r_cut`.
pub fn curve_rows(family: &DelayFamily, r_cut: Option<f64>) -> Result<Vec<CurveRow>> {
    if family.is_empty() {
        return Err(ReportError::EmptyFamily(family.label.clone()));
    }
    let tau = family.tau();
    let mut cusp = vec![false; tau.len()];
    for c in &family.cusps {
        cusp[nearest(tau, c.tau_star)] = true;
    }
    let mut glue = vec![String::new(); tau.len()];
    for e in family.angular.events.iter().chain(&family.radial.events) {
        if e.at_tau < tau[0] || e.at_tau > tau[tau.len() - 1] {
            continue;
        }
        let cell = &mut glue[nearest(tau, e.at_tau)];
        if !cell.is_empty() {
            cell.push(';');
        }
        cell.push_str(&event_label(e));
    }
    let mut rows = Vec::with_capacity(tau.len());
    for i in 0..tau.len() {
        let r = family.radial.values[i];
        if r_cut.is_some_and(|c| !(r <= c)) {
            continue;
        }
        rows.push(CurveRow {
            tau: tau[i],
            t: family.angular.values[i],
            r,
            x: family.curve[i].x,
            y: family.curve[i].y,
            is_cusp: cusp[i],
            glue_event: std::mem::take(&mut glue[i]),
        });
    }
    Ok(rows)
}

pub fn write_curve_csv(rows: &[CurveRow], out: &mut impl Write) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
            r.tau, r.t, r.r, r.x, r.y, r.is_cusp as u8, r.glue_event
        )?;
    }
    Ok(())
}

/// Write one family as CSV; returns the number of rows.
pub fn emit_curve_csv(family: &DelayFamily, path: &Path, r_cut: Option<f64>) -> Result<usize> {
    let rows = curve_rows(family, r_cut)?;
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_curve_csv(&rows, &mut w)?;
    w.flush()?;
    Ok(rows.len())
}

pub fn parse_curve_csv(input: impl BufRead) -> Result<Vec<CurveRow>> {
    let mut rows = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let err = |msg: String| ReportError::Parse { line: i + 1, msg };
        if i == 0 {
            if line != CSV_HEADER {
                return Err(err(format!("expected header {CSV_HEADER:?}")));
            }
            continue;
        }
        let cols: Vec<&str> = line.splitn(7, ',').collect();
        if cols.len() != 7 {
            return Err(err(format!("expected 7 columns, got {}", cols.len())));
        }
        let num = |k: usize| cols[k].parse::<f64>().map_err(|e| err(format!("column {k}: {e}")));
        rows.push(CurveRow {
            tau: num(0)?,
            t: num(1)?,
            r: num(2)?,
            x: num(3)?,
            y: num(4)?,
            is_cusp: match cols[5] {
                "0" => false,
                "1" => true,
                other => return Err(err(format!("bad is_cusp {other:?}"))),
            },
            glue_event: cols[6].to_string(),
        });
    }
    Ok(rows)
}

pub fn read_curve_csv(path: &Path) -> Result<Vec<CurveRow>> {
    parse_curve_csv(io::BufReader::new(fs::File::open(path)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecEcho {
    pub f: String,
    pub g: String,
    pub r_max: f64,
    pub tau_span: (f64, f64),
    pub dtau: f64,
    pub policy: Policy,
    pub preset: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySummary {
    pub label: String,
    pub tau_span: (f64, f64),
    pub samples: usize,
    pub angular_seed: LevelPoint,
    pub radial_seed: LevelPoint,
    pub angular_ends: (Terminal, Terminal),
    pub radial_ends: (Terminal, Terminal),
    pub period: Option<u32>,
    pub is_circle_family: bool,
    pub glue_events: Vec<GlueEvent>,
    pub cusps: Vec<CuspRecord>,
    pub cusp_error: Option<String>,
    pub max_residual: Option<f64>,
    pub csv: Option<String>,
}

impl FamilySummary {
    pub fn of(family: &DelayFamily) -> Self {
        let tau = family.tau();
        let (a, r) = (&family.angular, &family.radial);
        FamilySummary {
            label: family.label.clone(),
            tau_span: (tau.first().copied().unwrap_or(f64::NAN), tau.last().copied().unwrap_or(f64::NAN)),
            samples: tau.len(),
            angular_seed: a.seed,
            radial_seed: r.seed,
            angular_ends: (a.low_end, a.high_end),
            radial_ends: (r.low_end, r.high_end),
            period: family.period,
            is_circle_family: family.is_circle_family,
            glue_events: a.events.iter().chain(&r.events).copied().collect(),
            cusps: family.cusps.clone(),
            cusp_error: family.cusp_error.as_ref().map(|e| e.to_string()),
            max_residual: None,
            csv: None,
        }
    }
}

/// A named pass/fail check with its measured value and tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub name: String,
    pub value: f64,
    pub tol: f64,
    pub pass: bool,
}

impl Gate {
    pub fn at_most(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Gate {
            name: name.into(),
            value,
            tol,
            pass: value <= tol,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub monodromy: Vec<MonodromyReport>,
    pub convergence: Vec<ConvergenceReport>,
    pub gates: Vec<Gate>,
}

impl Verification {
    pub fn all_pass(&self) -> bool {
        self.gates.iter().all(|g| g.pass)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub spec_echo: SpecEcho,
    pub atlas: Vec<OrbitClassification>,
    pub families: Vec<FamilySummary>,
    pub verification: Verification,
}

fn all_finite(v: &serde_json::Value) -> bool {
    match v {
        serde_json::Value::Number(n) => n.as_f64().is_some_and(f64::is_finite),
        serde_json::Value::Array(a) => a.iter().all(all_finite),
        serde_json::Value::Object(o) => o.values().all(all_finite),
        _ => true,
    }
}

impl RunReport {
    pub fn new(spec_echo: SpecEcho) -> Self {
        RunReport {
            schema: SCHEMA.to_string(),
            spec_echo,
            atlas: Vec::new(),
            families: Vec::new(),
            verification: Verification::default(),
        }
    }

    pub fn echo(spec: &FieldSpec, tau_span: (f64, f64), dtau: f64, policy: Policy, preset: Option<&str>) -> SpecEcho {
        SpecEcho {
            f: spec.f.source().to_string(),
            g: spec.g.source().to_string(),
            r_max: spec.r_max,
            tau_span,
            dtau,
            policy,
            preset: preset.map(str::to_string),
        }
    }

    /// Monodromy rows with non-finite entries are dropped, since JSON has no
    /// representation for them.
    pub fn push_monodromy(&mut self, m: MonodromyReport) {
        if serde_json::to_value(&m).is_ok_and(|v| all_finite(&v)) && m.y1.iter().flatten().all(|x| x.is_finite()) {
            self.verification.monodromy.push(m);
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: RunReport = serde_json::from_str(s)?;
        if r.schema != SCHEMA {
            return Err(ReportError::Schema(r.schema));
        }
        Ok(r)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvgOptions {
    pub reference_circles: Vec<f64>,
    pub r_cut: Option<f64>,
    /// Width and height in pixels.
    pub size: u32,
}

impl Default for SvgOptions {
    fn default() -> Self {
        SvgOptions {
            reference_circles: Vec::new(),
            r_cut: None,
            size: 600,
        }
    }
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

fn svg_open(out: &mut String, w: u32, h: u32, view: (f64, f64, f64, f64)) {
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="{:.6} {:.6} {:.6} {:.6}">"#,
        view.0, view.1, view.2, view.3
    );
}

/// Runs of plottable points: finite and, with a cut, inside it.
fn polylines(family: &DelayFamily, r_cut: Option<f64>) -> Vec<Vec<PlanarPoint>> {
    let mut runs = Vec::new();
    let mut cur = Vec::new();
    for (p, r) in family.curve.iter().zip(&family.radial.values) {
        if p.is_finite() && r_cut.is_none_or(|c| *r <= c) {
            cur.push(*p);
        } else if !cur.is_empty() {
            runs.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        runs.push(cur);
    }
    runs
}

/// Curves in the plane, one colour per family, cusps circled.
pub fn render_svg(families: &[DelayFamily], opts: &SvgOptions) -> String {
    let lines: Vec<Vec<Vec<PlanarPoint>>> = families.iter().map(|f| polylines(f, opts.r_cut)).collect();
    let mut extent: f64 = opts.reference_circles.iter().copied().filter(|r| r.is_finite()).fold(0.0, f64::max);
    for p in lines.iter().flatten().flatten() {
        extent = extent.max(p.x.abs()).max(p.y.abs());
    }
    let ext = if extent > 0.0 { 1.05 * extent } else { 1.0 };
    let stroke = ext / 250.0;
    let mut out = String::new();
    svg_open(&mut out, opts.size, opts.size, (-ext, -ext, 2.0 * ext, 2.0 * ext));
    let _ = writeln!(
        out,
        r#"<rect x="{:.6}" y="{:.6}" width="{:.6}" height="{:.6}" fill="white"/>"#,
        -ext,
        -ext,
        2.0 * ext,
        2.0 * ext
    );
    for r in &opts.reference_circles {
        let _ = writeln!(
            out,
            r#"<circle cx="0" cy="0" r="{r:.6}" fill="none" stroke="red" stroke-width="{stroke:.6}"/>"#
        );
    }
    for (k, (fam, runs)) in families.iter().zip(&lines).enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let _ = writeln!(out, r#"<g id="family-{k}" data-label="{}">"#, escape(&fam.label));
        for run in runs {
            out.push_str(r#"<polyline fill="none" stroke=""#);
            out.push_str(color);
            let _ = write!(out, r#"" stroke-width="{stroke:.6}" points=""#);
            for (i, p) in run.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                // y axis points up
                let _ = write!(out, "{:.6},{:.6}", p.x, -p.y);
            }
            out.push_str("\"/>\n");
        }
        for c in &fam.cusps {
            if let Ok((t, r)) = fam.state_at(c.tau_star) {
                let p = PlanarPoint::from_polar(r, t + c.tau_star);
                let _ = writeln!(
                    out,
                    r#"<circle class="cusp" cx="{:.6}" cy="{:.6}" r="{:.6}" fill="none" stroke="black" stroke-width="{stroke:.6}"/>"#,
                    p.x,
                    -p.y,
                    4.0 * stroke
                );
            }
        }
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn emit_svg(families: &[DelayFamily], opts: &SvgOptions, path: &Path) -> Result<()> {
    fs::write(path, render_svg(families, opts))?;
    Ok(())
}

/// Graph of `func` on `[lo, hi]` with its zeros and extrema marked.
pub fn render_function_svg(func: &ScalarFunction, lo: f64, hi: f64, n: usize) -> Result<String> {
    let n = n.max(2);
    let xs: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|x| func.eval(*x).unwrap_or(f64::NAN)).collect();
    let domain = ScanDomain::Interval { lo, hi };
    let zeros = atlas::scan_levels(func, 0.0, domain, DEFAULT_N_GRID)?.points;
    let extrema = atlas::critical_points(func, domain, DEFAULT_N_GRID)?;

    let (mut ymin, mut ymax) = (0.0f64, 0.0f64);
    for y in ys.iter().filter(|y| y.is_finite()) {
        ymin = ymin.min(*y);
        ymax = ymax.max(*y);
    }
    if ymax - ymin <= 0.0 {
        ymax = ymin + 1.0;
    }
    let (w, h, m) = (800.0, 400.0, 40.0);
    let px = |x: f64| m + (x - lo) / (hi - lo) * (w - 2.0 * m);
    let py = |y: f64| h - m - (y - ymin) / (ymax - ymin) * (h - 2.0 * m);

    let mut out = String::new();
    svg_open(&mut out, w as u32, h as u32, (0.0, 0.0, w, h));
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<line x1="{:.6}" y1="{:.6}" x2="{:.6}" y2="{:.6}" stroke="gray" stroke-width="1"/>"#,
        px(lo),
        py(0.0),
        px(hi),
        py(0.0)
    );
    let _ = writeln!(out, r#"<g id="graph" data-label="{}">"#, escape(func.source()));
    let mut run = String::new();
    let flush = |run: &mut String, out: &mut String| {
        if !run.is_empty() {
            let _ = writeln!(out, r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#, PALETTE[0], run.trim_end());
            run.clear();
        }
    };
    for (x, y) in xs.iter().zip(&ys) {
        if y.is_finite() {
            let _ = write!(run, "{:.6},{:.6} ", px(*x), py(*y));
        } else {
            flush(&mut run, &mut out);
        }
    }
    flush(&mut run, &mut out);
    out.push_str("</g>\n");
    for z in &zeros {
        let _ = writeln!(
            out,
            r#"<circle class="zero" cx="{:.6}" cy="{:.6}" r="4" fill="none" stroke="black"/>"#,
            px(z.location),
            py(0.0)
        );
    }
    for e in &extrema {
        let _ = writeln!(
            out,
            r#"<circle class="extremum" cx="{:.6}" cy="{:.6}" r="4" fill="{}"/>"#,
            px(e.location),
            py(e.level),
            PALETTE[1]
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glue::trace_family;

    fn fig5a() -> (FieldSpec, DelayFamily) {
        let spec = FieldSpec::parse("3*theta - 1.5", "2*pi*r*(r-1)", 10.0).unwrap();
        let fam = trace_family(&spec, 5.0 / 6.0, 1.0, (-0.25, 1.75), 1e-3, Policy::SwitchSides, (None, None)).unwrap();
        (spec, fam)
    }

    #[test]
    fn csv_round_trips_bit_exactly() {
        let (_, fam) = fig5a();
        let rows = curve_rows(&fam, None).unwrap();
        assert_eq!(rows.len(), fam.len());
        let mut buf = Vec::new();
        write_curve_csv(&rows, &mut buf).unwrap();
        let back = parse_curve_csv(&buf[..]).unwrap();
        assert_eq!(back.len(), rows.len());
        for (a, b) in rows.iter().zip(&back) {
            for (u, v) in [(a.tau, b.tau), (a.t, b.t), (a.r, b.r), (a.x, b.x), (a.y, b.y)] {
                assert_eq!(u.to_bits(), v.to_bits());
            }
            assert_eq!((a.is_cusp, &a.glue_event), (b.is_cusp, &b.glue_event));
        }
        assert_eq!(rows.iter().filter(|r| r.is_cusp).count(), fam.cusps.len());
    }

    #[test]
    fn csv_cut_drops_large_radii() {
        let (_, fam) = fig5a();
        let rows = curve_rows(&fam, Some(0.5)).unwrap();
        assert!(rows.len() < fam.len());
        assert!(rows.iter().all(|r| r.r <= 0.5));
    }

    #[test]
    fn bad_csv_is_rejected() {
        assert!(parse_curve_csv(&b"tau,t\n"[..]).is_err());
        let s = format!("{CSV_HEADER}\n1,2,3\n");
        assert!(matches!(parse_curve_csv(s.as_bytes()), Err(ReportError::Parse { line: 2, .. })));
    }

    #[test]
    fn svg_is_deterministic_and_marks_cusps() {
        let (_, fam) = fig5a();
        let opts = SvgOptions {
            reference_circles: vec![1.0],
            ..Default::default()
        };
        let a = render_svg(std::slice::from_ref(&fam), &opts);
        let b = render_svg(std::slice::from_ref(&fam), &opts);
        assert_eq!(a, b);
        assert_eq!(a.matches("class=\"cusp\"").count(), fam.cusps.len());
        assert!(a.contains("<polyline"));
    }

    #[test]
    fn empty_svg_is_a_canvas() {
        let s = render_svg(&[], &SvgOptions::default());
        assert!(s.starts_with("<?xml") && s.trim_end().ends_with("</svg>"));
        assert!(!s.contains("<polyline"));
    }

    #[test]
    fn function_plot_marks_zeros_and_extrema() {
        let f = ScalarFunction::parse("cos(2*pi*r)", "r").unwrap();
        let s = render_function_svg(&f, 0.1, 1.9, 400).unwrap();
        assert_eq!(s.matches("class=\"zero\"").count(), 4);
        assert_eq!(s.matches("class=\"extremum\"").count(), 3);
    }

    #[test]
    fn report_round_trips() {
        let (spec, fam) = fig5a();
        let mut rep = RunReport::new(RunReport::echo(&spec, (-0.25, 1.75), 1e-3, Policy::SwitchSides, Some("fig5a")));
        let a = LevelPoint::at(&spec.f, 5.0 / 6.0).unwrap();
        let r = LevelPoint::at(&spec.g, 1.0).unwrap();
        rep.atlas.push(crate::atlas::classify_orbit(&spec, a, r).unwrap());
        rep.families.push(FamilySummary::of(&fam));
        rep.push_monodromy(crate::verify::monodromy(&spec, 5.0 / 6.0, 1.0).unwrap());
        rep.verification.gates.push(Gate::at_most("residual", 1e-12, 1e-8));
        let json = rep.to_json().unwrap();
        assert!(json.contains("\"schema\": \"delay-orbit-atlas/1\""));
        assert_eq!(RunReport::from_json(&json).unwrap(), rep);
    }
}
