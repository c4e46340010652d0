// Acceptance run: one line per criterion.
//
// Two criteria cannot be met as stated and are reported as FAIL with the
// measured numbers. For those the run checks that the failure is the
// analyzed one (see EXPECTED_DEVIATIONS); anything else exits nonzero.

use std::fs;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use delay_orbit_atlas::atlas::{self, LevelPoint, PointKind};
use delay_orbit_atlas::branch::{trace_radial, DelayFamily, Landscape, Side, Terminal};
use delay_orbit_atlas::cli::{cmd_trace, family_residual, trace_families, RunConfig};
use delay_orbit_atlas::cusp::{count_check, reversal_error, CuspCondition, CuspRecord};
use delay_orbit_atlas::field::FieldSpec;
use delay_orbit_atlas::glue::{build_family_graph, closed_form_oracle, trace_family, trace_glued, Fixture, Gluing, Policy, Variant};
use delay_orbit_atlas::verify::{self, ClosedOrbit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const DTAU: f64 = 1e-3;
const ORACLE_TOL: f64 = 1e-6;
const PERIOD_TOL: f64 = 1e-8;
const ANGLE_TOL: f64 = 1e-3;
const RESIDUAL_TOL: f64 = 1e-8;
const MONODROMY_TOL: f64 = 1e-6;
const MIN_ORBITS: usize = 10;
const ORDER_MIN: f64 = 3.8;
const CLOSURE_TOL: f64 = 1e-7;
const RANDOM_PAIRS: usize = 50;
const RANDOM_SEED: u64 = 20240917;

const PRESETS: [&str; 7] = ["fig4", "fig5a", "fig5b", "fig6a", "fig6b", "poly", "trig5"];

struct Outcome {
    pass: bool,
    detail: String,
    /// For a criterion that cannot pass: whether the observed failure is the
    /// analyzed one.
    expected_failure: Option<bool>,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Outcome { pass, detail, expected_failure: None }
    }
}

fn family(name: &str) -> (FieldSpec, DelayFamily) {
    let cfg = RunConfig::from_preset(name).unwrap();
    let spec = cfg.spec().unwrap();
    let fam = trace_family(
        &spec,
        cfg.alpha.unwrap(),
        cfg.rho.unwrap(),
        cfg.tau_span(),
        DTAU,
        Policy::SwitchSides,
        (None, None),
    )
    .unwrap();
    (spec, fam)
}

fn wrap(x: f64) -> f64 {
    x - x.round()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let spec = FieldSpec::parse("sin(2*pi*5*theta)", "2*pi*r*cos(2*pi*r)", 10.0).unwrap();
    let span = (-0.25, 5.75);
    let fam = trace_family(&spec, 0.05, 0.25, span, DTAU, Policy::SwitchSides, (Some(Variant::LeftRight), None)).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let (mut et, mut er) = (0.0f64, 0.0f64);
    for (i, tau) in fam.tau().iter().enumerate() {
        let (t, r) = closed_form_oracle(Fixture::Trig { k: 5 }, Gluing::Lr, Gluing::Lr, *tau);
        et = et.max((fam.angular.values[i] - t).abs());
        er = er.max((fam.radial.values[i] - r).abs());
    }
    let covered = fam.tau()[0] <= span.0 + 1e-12 && fam.tau()[fam.len() - 1] >= span.1 - 1e-12;
    Outcome::new(
        et <= ORACLE_TOL && er <= ORACLE_TOL && covered && secs < 5.0,
        format!("trig k=5 on [-1/4, 5.75]: |t - (tau+1/4)/5| = {et:.1e}, |r - (tau+1/4)| = {er:.1e}, {secs:.2} s"),
    )
}

fn criterion_2() -> Outcome {
    let spec = FieldSpec::parse("512*(theta - 1/4)^2*(theta - 3/4)^2 - 1", "2*pi*r*(r-1)", 10.0).unwrap();
    let graph = build_family_graph(&spec, (-0.25, 4.25), DTAU, Policy::SwitchSides).unwrap();
    if graph.maximal_families.len() != 1 {
        return Outcome::new(false, format!("{} families, expected 1", graph.maximal_families.len()));
    }
    let fam = &graph.maximal_families[0];
    // the four arcs are the oracle up to a whole-unit shift of tau
    let mut best = f64::INFINITY;
    for s in 0..4 {
        let e = fam
            .tau()
            .iter()
            .zip(&fam.angular.values)
            .map(|(tau, t)| wrap(t - closed_form_oracle(Fixture::Poly, Gluing::Lr, Gluing::Lr, tau + s as f64).0).abs())
            .fold(0.0, f64::max);
        best = best.min(e);
    }
    let er = fam
        .tau()
        .iter()
        .zip(&fam.radial.values)
        .map(|(tau, r)| (r - closed_form_oracle(Fixture::Poly, Gluing::Lr, Gluing::Lr, *tau).1).abs())
        .fold(0.0, f64::max);
    let mut closure = 0.0f64;
    for k in 0..=500 {
        let tau = -0.25 + 0.5 * k as f64 / 500.0;
        let a = fam.angular.value_at(tau).unwrap();
        let b = fam.angular.value_at(tau + 4.0).unwrap();
        closure = closure.max(wrap(b - a).abs());
    }
    Outcome::new(
        best <= ORACLE_TOL && er <= ORACLE_TOL && closure <= PERIOD_TOL && fam.period == Some(4),
        format!(
            "poly: arcs {best:.1e}, r = 1 - sin 2 pi tau {er:.1e}, period {:?}, closure after 4 {closure:.1e}",
            fam.period
        ),
    )
}

fn coset_distance(tau: f64) -> f64 {
    // distance to 1/4 + Z/2
    (wrap((tau - 0.25) * 2.0) / 2.0).abs()
}

fn distinct_mod_one(cusps: &[CuspRecord]) -> Vec<CuspRecord> {
    let mut out: Vec<CuspRecord> = Vec::new();
    for c in cusps {
        if !out.iter().any(|d| wrap(d.tau_star - c.tau_star).abs() < 4.0 * DTAU) {
            out.push(*c);
        }
    }
    out
}

fn criterion_3() -> Outcome {
    let want: [(&str, usize, usize); 4] = [("fig5a", 1, 0), ("fig5b", 0, 1), ("fig6a", 1, 1), ("fig6b", 1, 1)];
    let mut parts = Vec::new();
    let mut pass = true;
    let mut fig6b_as_analyzed = false;
    for (name, want_zero, want_slope) in want {
        let (_, fam) = family(name);
        let cusps = distinct_mod_one(&fam.cusps);
        let zero = cusps.iter().filter(|c| c.condition == CuspCondition::RadiusZero).count();
        let slope = cusps.len() - zero;
        let placed = fam.cusps.iter().all(|c| coset_distance(c.tau_star) <= 2.0 * DTAU);
        let angles = fam.cusps.iter().all(|c| reversal_error(c) <= ANGLE_TOL);
        let classified = fam.cusp_error.is_none();
        let ok = zero == want_zero && slope == want_slope && placed && angles && classified;
        if fam.is_circle_family {
            pass &= count_check(&fam).is_ok();
        }
        if name == "fig6b" && !ok {
            // the radial branch through rho = 5/4 meets r = 0 with nonzero
            // slope, so the family ends there and the origin cusp never forms
            let ends_at_origin = matches!(fam.radial.low_end, Terminal::HitZeroRadius { .. })
                && matches!(fam.radial.high_end, Terminal::HitZeroRadius { .. });
            fig6b_as_analyzed = ends_at_origin && zero == 0 && slope == 1 && placed && angles && classified;
        }
        pass &= ok;
        parts.push(format!("{name}: (i) {zero} (ii) {slope}"));
    }
    Outcome {
        pass,
        detail: parts.join(", "),
        expected_failure: Some(fig6b_as_analyzed),
    }
}

fn preset_families(name: &str) -> (FieldSpec, Vec<DelayFamily>) {
    let cfg = RunConfig::from_preset(name).unwrap();
    let spec = cfg.spec().unwrap();
    let fams = trace_families(&cfg, &spec).unwrap();
    (spec, fams)
}

fn criterion_4() -> Outcome {
    let mut worst = 0.0f64;
    let mut count = 0;
    let mut samples = 0;
    for name in PRESETS {
        let (spec, fams) = preset_families(name);
        for fam in &fams {
            worst = worst.max(family_residual(&spec, fam).unwrap());
            count += 1;
            samples += fam.len();
        }
    }
    Outcome::new(
        worst <= RESIDUAL_TOL,
        format!("{count} families, {samples} samples, max residual {worst:.1e}"),
    )
}

fn criterion_5() -> Outcome {
    let mut checked = 0;
    let mut worst = 0.0f64;
    let mut agree = true;
    for name in PRESETS {
        let spec = RunConfig::from_preset(name).unwrap().spec().unwrap();
        let (alphas, rhos) = atlas::orbit_seeds(&spec, atlas::DEFAULT_N_GRID).unwrap();
        let pairs: Vec<(LevelPoint, LevelPoint)> =
            alphas.points.iter().flat_map(|a| rhos.points.iter().map(move |r| (*a, *r))).collect();
        let rows: Vec<_> = pairs
            .par_iter()
            .map(|(a, r)| {
                let m = verify::monodromy(&spec, a.location, r.location).unwrap();
                let c = atlas::classify_orbit(&spec, *a, *r).unwrap();
                (m, c)
            })
            .collect();
        for (m, c) in rows {
            agree &= m.nondegenerate == !c.is_degenerate();
            if let Some(d) = m.deviation {
                worst = worst.max(d);
                checked += 1;
            }
        }
    }
    Outcome::new(
        checked >= MIN_ORBITS && worst <= MONODROMY_TOL && agree,
        format!("{checked} orbits integrated, max relative deviation {worst:.1e}, predicate agrees: {agree}"),
    )
}

fn criterion_6() -> Outcome {
    let (spec, fam) = family("fig4");
    let mut parts = Vec::new();
    let mut orders_ok = true;
    let mut closure_ok = true;
    let mut fast = true;
    for tau in [0.1, 0.3] {
        let start = Instant::now();
        let orbit = ClosedOrbit::of_family(&fam, tau).unwrap();
        let study = verify::convergence_study(&spec, &orbit, tau, 1.0, &[4e-3, 2e-3, 1e-3]).unwrap();
        let close = verify::closure(&spec, &orbit, tau, 1e-3).unwrap();
        let secs = start.elapsed().as_secs_f64();
        orders_ok &= study.min_order() >= ORDER_MIN;
        closure_ok &= close <= CLOSURE_TOL;
        fast &= secs < 10.0;
        parts.push(format!("tau={tau}: order {:.2}, closure {close:.1e} ({secs:.2} s)", study.min_order()));
    }
    Outcome {
        pass: orders_ok && closure_ok && fast,
        detail: parts.join("; "),
        // the orbit repels strongly; the h^4 error at t = 1 stays above 1e-7
        expected_failure: Some(orders_ok && fast && !closure_ok),
    }
}

/// A random field whose scans are transverse. A third of the draws use a
/// linear `f` of slope 2π, a third a `g` with `g̃(0) = −2π`; those produce
/// cusps of either kind.
fn random_pair(rng: &mut ChaCha8Rng) -> Option<FieldSpec> {
    let f = if rng.random_bool(1.0 / 3.0) {
        let alpha: f64 = rng.random_range(0.1..0.9);
        format!("2*pi*(theta - {alpha}) + 1")
    } else {
        let k = rng.random_range(1..=3);
        let b: f64 = rng.random_range(0.8..3.0);
        let a: f64 = rng.random_range((1.0 - 0.8 * b)..(1.0 + 0.8 * b));
        let c: f64 = rng.random_range(-0.3..0.3);
        let j = rng.random_range(1..=4);
        let phase: f64 = rng.random_range(0.0..1.0);
        format!("{a} + {b}*sin(2*pi*({k}*theta + {phase})) + {c}*cos(2*pi*{j}*theta)")
    };
    let g = match rng.random_range(0..4) {
        0 => {
            let s: f64 = rng.random_range(1.0..8.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let p: f64 = rng.random_range(0.5..3.0);
            format!("{s}*r*(r - {p})")
        }
        1 => {
            // g̃(0) = −2π: the family touches the origin
            let p: f64 = rng.random_range(0.5..3.0);
            format!("2*pi/{p}*r*(r - {p})")
        }
        2 => {
            let s: f64 = rng.random_range(1.0..6.0);
            let w: f64 = rng.random_range(1.0..4.0);
            format!("{s}*r*sin({w}*r)")
        }
        _ => {
            let s: f64 = rng.random_range(0.5..4.0);
            let p: f64 = rng.random_range(0.5..1.5);
            let q: f64 = rng.random_range(2.0..3.5);
            format!("{s}*r*(r - {p})*({q} - r)")
        }
    };
    let spec = FieldSpec::parse(&f, &g, 5.0).ok()?;
    let (alphas, rhos) = atlas::orbit_seeds(&spec, atlas::DEFAULT_N_GRID).ok()?;
    let transverse = |ps: &[LevelPoint]| !ps.is_empty() && ps.iter().all(|p| p.kind == PointKind::Transverse);
    (transverse(&alphas.points) && transverse(&rhos.points)).then_some(spec)
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(RANDOM_SEED);
    let mut specs = Vec::new();
    while specs.len() < RANDOM_PAIRS {
        if let Some(s) = random_pair(&mut rng) {
            specs.push(s);
        }
    }
    let results: Vec<(usize, bool, bool)> = specs
        .par_iter()
        .map(|spec| {
            let graph = build_family_graph(spec, (-0.25, 1.75), DTAU, Policy::SwitchSides).unwrap();
            let mut n = 0;
            let mut placed = true;
            let mut classified = true;
            for fam in &graph.maximal_families {
                classified &= fam.cusp_error.is_none();
                for c in &fam.cusps {
                    n += 1;
                    placed &= coset_distance(c.tau_star) <= 2.0 * DTAU;
                }
            }
            (n, placed, classified)
        })
        .collect();
    let singular: usize = results.iter().map(|r| r.0).sum();
    let placed = results.iter().all(|r| r.1);
    let unclassified = results.iter().filter(|r| !r.2).count();
    Outcome::new(
        placed && unclassified == 0,
        format!("{RANDOM_PAIRS} random fields, {singular} singular points, all on cosets: {placed}, unclassified: {unclassified}"),
    )
}

fn criterion_8() -> Outcome {
    // angular minimum on the level 1
    let spec = FieldSpec::parse("2 - cos(2*pi*theta)", "2*pi*r*(r-1)", 10.0).unwrap();
    let graph = build_family_graph(&spec, (-0.25, 1.75), DTAU, Policy::SwitchSides).unwrap();
    let land = Arc::new(Landscape::angular(&spec.f).unwrap());
    let seed = LevelPoint::at(&spec.f, 0.0).unwrap();
    let stuck = [Variant::LeftRight, Variant::RightLeft].iter().all(|v| {
        trace_glued(land.clone(), seed, *v, (-0.25, 1.75), DTAU, Policy::SwitchSides)
            .map(|(b, _)| {
                let (lo, hi) = b.tau_span();
                let dead = |t: &Terminal| matches!(t, Terminal::HitExtremum { continuable: false, .. });
                lo == 0.0 && hi == 0.0 && dead(&b.low_end) && dead(&b.high_end)
            })
            .unwrap_or(false)
    });
    let isolated = graph.isolated.len() == 1 && graph.maximal_families.is_empty() && stuck;

    // g̃ = ±2π (r − 1)²: an extremum on the zero level at ρ = 1
    let one_sided = |g: &str| {
        let gt = delay_orbit_atlas::expr::ScalarFunction::parse(g, "r").unwrap().g_tilde().unwrap();
        let seed = LevelPoint::at(&gt, 1.0).unwrap();
        let mut spans = Vec::new();
        for side in [Side::Left, Side::Right] {
            let b = trace_radial(&gt, 10.0, seed, side, (-0.5, 0.5), DTAU).unwrap();
            spans.push(b.tau_span());
        }
        (seed.kind, spans)
    };
    let (kmin, smin) = one_sided("2*pi*r*(r-1)^2");
    let (kmax, smax) = one_sided("-2*pi*r*(r-1)^2");
    let before = smin.iter().all(|(lo, hi)| *hi <= 1e-12 && *lo < -0.1);
    let after = smax.iter().all(|(lo, hi)| *lo >= -1e-12 && *hi > 0.1);
    let radial = kmin == PointKind::LocalMin && kmax == PointKind::LocalMax && before && after;
    Outcome::new(
        isolated && radial,
        format!(
            "minimum of f at level 1 isolated: {isolated}; radial minimum spans {smin:?}, maximum spans {smax:?}"
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut same = true;
    let mut files = 0;
    for name in PRESETS {
        let runs: Vec<Vec<(String, Vec<u8>)>> = (0..2)
            .map(|_| {
                let dir = tempfile::tempdir().unwrap();
                let mut cfg = RunConfig::from_preset(name).unwrap();
                cfg.output = dir.path().to_path_buf();
                cmd_trace(&cfg).unwrap();
                let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir.path())
                    .unwrap()
                    .map(|e| e.unwrap().path())
                    .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "svg")))
                    .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
                    .collect();
                out.sort();
                out
            })
            .collect();
        files += runs[0].len();
        same &= runs[0] == runs[1] && !runs[0].is_empty();
    }
    Outcome::new(same, format!("{files} CSV/SVG files over {} presets byte-identical: {same}", PRESETS.len()))
}

const EXPECTED_DEVIATIONS: [(usize, &str); 2] = [
    (3, "fig6b: the radial branch through rho = 5/4 crosses r = 0 transversally, the family ends there"),
    (6, "fig4: unstable orbit, closure error at h = 1e-3 is the h^4 error amplified over one period"),
];

fn main() -> ExitCode {
    let criteria: [(usize, fn() -> Outcome); 9] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
    ];
    let mut ok = true;
    for (n, run) in criteria {
        let out = run();
        let status = if out.pass { "PASS" } else { "FAIL" };
        println!("{status} criterion {n}: {}", out.detail);
        if !out.pass {
            let known = EXPECTED_DEVIATIONS.iter().find(|(k, _)| *k == n);
            match (known, out.expected_failure) {
                (Some((_, why)), Some(true)) => println!("     known limitation: {why}"),
                _ => {
                    println!("     unexpected failure");
                    ok = false;
                }
            }
        }
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
