//! Continuation of branches through tangential contacts, and the maximal
//! families obtained by repeating it.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::atlas::{scan_levels, LevelPoint, PointKind, DERIV_TOL, DEFAULT_N_GRID, MIN_RADIUS};
use crate::branch::{
    assemble_family, sin_cos_turns, tau_grid, trace_half, trace_on, walk, Branch, BranchError,
    BranchKind, DelayFamily, Direction, End, Landscape, Piece, Side, Terminal,
};
use crate::field::FieldSpec;

/// Agreement used to identify two branches that differ by a shift.
pub const SHIFT_TOL: f64 = 1e-8;
/// Agreement of values when matching a seed state on a coarse trace.
const STATE_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GlueError {
    #[error(transparent)]
    Branch(#[from] BranchError),
    #[error("branch end is not a continuable contact: {0:?}")]
    NotAtContact(Terminal),
    #[error("contact at {location} has vanishing second derivative {d2}")]
    DegenerateContact { location: f64, d2: f64 },
}

impl From<crate::expr::ExprError> for GlueError {
    fn from(e: crate::expr::ExprError) -> Self {
        GlueError::Branch(e.into())
    }
}

impl From<crate::atlas::AtlasError> for GlueError {
    fn from(e: crate::atlas::AtlasError) -> Self {
        GlueError::Branch(e.into())
    }
}

pub type Result<T, E = GlueError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Policy {
    /// Continue on the local inverse across the contact (smooth).
    SwitchSides,
    /// Continue on the same local inverse (a kink).
    Reflect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GlueKind {
    AngularMax,
    AngularMin,
    RadialMax,
    RadialMin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlueEvent {
    pub at_tau: f64,
    pub contact: LevelPoint,
    pub from_side: Side,
    pub to_side: Side,
    pub kind: GlueKind,
    pub policy: Policy,
}

fn side_of(piece: &Piece, e: f64) -> Side {
    if (piece.hi - e).abs() <= (piece.lo - e).abs() {
        Side::Left
    } else {
        Side::Right
    }
}

fn glue_kind(kind: BranchKind, contact: &LevelPoint) -> GlueKind {
    match (kind, contact.d2 < 0.0) {
        (BranchKind::Angular, true) => GlueKind::AngularMax,
        (BranchKind::Angular, false) => GlueKind::AngularMin,
        (BranchKind::Radial, true) => GlueKind::RadialMax,
        (BranchKind::Radial, false) => GlueKind::RadialMin,
    }
}

/// Continue `branch` past the contact at its `end` (`Lo` = low τ end). The
/// returned branch starts at the contact sample and runs on in the same τ
/// direction.
pub fn extend_through(branch: &Branch, end: End, policy: Policy) -> Result<(Branch, GlueEvent)> {
    let terminal = match end {
        End::Lo => branch.low_end,
        End::Hi => branch.high_end,
    };
    let Terminal::HitExtremum { contact, tau, continuable: true } = terminal else {
        return Err(GlueError::NotAtContact(terminal));
    };
    if contact.d2.abs() <= DERIV_TOL {
        return Err(GlueError::DegenerateContact {
            location: contact.location,
            d2: contact.d2,
        });
    }
    let land = &branch.landscape;
    let (piece, x) = match end {
        End::Lo => (branch.segments[0], branch.values[0]),
        End::Hi => (*branch.segments.last().expect("contact ends a segment"), *branch.values.last().unwrap()),
    };
    let from_side = side_of(&piece, x);
    let next = match policy {
        Policy::Reflect => piece,
        Policy::SwitchSides => {
            let across = if from_side == Side::Left { End::Hi } else { End::Lo };
            land.neighbour(&piece, across)?.ok_or(GlueError::NotAtContact(terminal))?
        }
    };
    let to_side = side_of(&next, x);
    let (dir, grid) = {
        let g = tau_grid(branch.kind, branch.range, branch.dtau, &[tau]);
        match end {
            End::Hi => (Direction::Forward, g.into_iter().filter(|t| *t > tau).collect::<Vec<_>>()),
            End::Lo => (
                Direction::Backward,
                g.into_iter().rev().filter(|t| *t < tau).collect::<Vec<_>>(),
            ),
        }
    };
    let w = walk(land, next, tau, x, &grid, dir)?;
    let slope = {
        let c2 = branch.kind.target(tau)[2];
        (c2 / contact.d2).abs().sqrt()
    };
    let outward = if to_side == Side::Right { 1.0 } else { -1.0 };
    let d0 = dir.sign() * outward * slope;

    let mut cont = branch.clone();
    cont.side = to_side;
    cont.events = Vec::new();
    cont.low_end = Terminal::RanOut;
    cont.high_end = Terminal::RanOut;
    match dir {
        Direction::Forward => {
            cont.tau = std::iter::once(tau).chain(w.tau).collect();
            cont.values = std::iter::once(x).chain(w.values).collect();
            cont.d_values = std::iter::once(d0).chain(w.d_values).collect();
            cont.segments = w.segments;
            cont.high_end = w.end;
        }
        Direction::Backward => {
            cont.tau = w.tau.iter().rev().copied().chain(std::iter::once(tau)).collect();
            cont.values = w.values.iter().rev().copied().chain(std::iter::once(x)).collect();
            cont.d_values = w.d_values.iter().rev().copied().chain(std::iter::once(d0)).collect();
            cont.segments = w.segments.iter().rev().copied().collect();
            cont.low_end = w.end;
        }
    }
    let event = GlueEvent {
        at_tau: tau,
        contact,
        from_side,
        to_side,
        kind: glue_kind(branch.kind, &contact),
        policy,
    };
    Ok((cont, event))
}

/// Join a continuation produced by `extend_through` onto `branch`.
pub fn stitch(branch: &Branch, cont: &Branch, end: End, event: GlueEvent) -> Branch {
    let mut out = branch.clone();
    match end {
        End::Hi => {
            out.tau.extend(&cont.tau[1..]);
            out.values.extend(&cont.values[1..]);
            out.d_values.extend(&cont.d_values[1..]);
            out.segments.extend(&cont.segments);
            if event.policy == Policy::SwitchSides {
                let k = branch.len() - 1;
                out.d_values[k] = cont.d_values[0];
            }
            out.high_end = cont.high_end;
        }
        End::Lo => {
            let n = cont.len() - 1;
            out.tau = cont.tau[..n].iter().chain(&branch.tau).copied().collect();
            out.values = cont.values[..n].iter().chain(&branch.values).copied().collect();
            let mut d: Vec<f64> = cont.d_values[..n].iter().chain(&branch.d_values).copied().collect();
            if event.policy == Policy::SwitchSides {
                d[n] = cont.d_values[n];
            }
            out.d_values = d;
            out.segments = cont.segments.iter().chain(&branch.segments).copied().collect();
            out.low_end = cont.low_end;
        }
    }
    out.events.push(event);
    out.events.sort_by(|a, b| a.at_tau.total_cmp(&b.at_tau));
    out
}

fn continuable_inside(t: Terminal, range: (f64, f64)) -> bool {
    matches!(t, Terminal::HitExtremum { continuable: true, tau, .. } if tau > range.0 && tau < range.1)
}

/// Extend both ends through every continuable contact inside the range.
/// Returns the glued branch and the pieces it was built from.
pub fn continue_fully(branch: Branch, policy: Policy) -> Result<(Branch, Vec<Branch>)> {
    let mut b = branch;
    let mut nodes = vec![b.clone()];
    for end in [End::Hi, End::Lo] {
        loop {
            let t = match end {
                End::Hi => b.high_end,
                End::Lo => b.low_end,
            };
            if !continuable_inside(t, b.range) {
                break;
            }
            let (cont, event) = match extend_through(&b, end, policy) {
                Ok(x) => x,
                Err(GlueError::DegenerateContact { .. }) => break,
                Err(e) => return Err(e),
            };
            b = stitch(&b, &cont, end, event);
            nodes.push(cont);
        }
    }
    if b.low_end == Terminal::RanOut && b.high_end == Terminal::RanOut {
        let (a, z) = b.tau_span();
        b.close_up(((z - a).floor() as u32).max(1))?;
    }
    Ok((b, nodes))
}

/// Which local inverses a seed is traced on before and after its start time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// A transverse seed: one local inverse.
    Through,
    /// Left before the start time, right after it.
    LeftRight,
    /// Right before the start time, left after it.
    RightLeft,
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::Through => "t",
            Variant::LeftRight => "lr",
            Variant::RightLeft => "rl",
        }
    }

    pub fn for_seed(kind: PointKind) -> &'static [Variant] {
        match kind {
            PointKind::Transverse => &[Variant::Through],
            PointKind::LocalMax | PointKind::LocalMin => &[Variant::LeftRight, Variant::RightLeft],
            PointKind::Saddle => &[],
        }
    }
}

/// Trace a seed with the given variant and continue it through all contacts.
pub fn trace_glued(
    land: Arc<Landscape>,
    seed: LevelPoint,
    variant: Variant,
    range: (f64, f64),
    dtau: f64,
    policy: Policy,
) -> Result<(Branch, Vec<Branch>)> {
    let b = match variant {
        Variant::Through => trace_on(land, seed, Side::Transverse, range, dtau)?,
        Variant::LeftRight | Variant::RightLeft => {
            let (before, after) = if variant == Variant::LeftRight {
                (Side::Left, Side::Right)
            } else {
                (Side::Right, Side::Left)
            };
            let back = trace_half(land.clone(), seed, before, range, dtau, Direction::Backward)?;
            let fwd = trace_half(land, seed, after, range, dtau, Direction::Forward)?;
            join_halves(back, fwd)
        }
    };
    continue_fully(b, policy)
}

fn join_halves(back: Branch, fwd: Branch) -> Branch {
    let mut out = fwd.clone();
    let n = back.len() - 1;
    out.tau = back.tau[..n].iter().chain(&fwd.tau).copied().collect();
    out.values = back.values[..n].iter().chain(&fwd.values).copied().collect();
    out.d_values = back.d_values[..n].iter().chain(&fwd.d_values).copied().collect();
    out.segments = back.segments.iter().chain(&fwd.segments).copied().collect();
    out.low_end = back.low_end;
    out.side = Side::Transverse;
    out
}

/// Integer `(m, n)` with `a(τ) = b(τ + m) + n` on the overlap, `n = 0` unless
/// the branch lives on the circle.
pub fn shift_between(a: &Branch, b: &Branch) -> Result<Option<(i64, i64)>> {
    let (a0, a1) = a.tau_span();
    let (b0, b1) = b.tau_span();
    let reach = ((a1 - a0).max(b1 - b0)).ceil() as i64;
    for m in -reach..=reach {
        let mf = m as f64;
        let (lo, hi) = (a0.max(b0 - mf), a1.min(b1 - mf));
        if hi - lo < 0.5 {
            continue;
        }
        let n = if a.landscape.periodic {
            (a.value_at(lo)? - b.value_at(lo + mf)?).round()
        } else {
            0.0
        };
        let mut same = true;
        for j in 0..=32 {
            let t = lo + (hi - lo) * j as f64 / 32.0;
            if (a.value_at(t)? - b.value_at(t + mf)? - n).abs() > SHIFT_TOL {
                same = false;
                break;
            }
        }
        if same {
            return Ok(Some((m, n as i64)));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone)]
pub struct FamilyGraph {
    pub nodes: Vec<Branch>,
    pub edges: Vec<GlueEvent>,
    pub maximal_families: Vec<DelayFamily>,
    /// Seeds at which no family passes through (minima of `f` at level 1).
    pub isolated: Vec<LevelPoint>,
}

/// A traced seed: label, seed, variant and the glued branch.
type Traced = (String, LevelPoint, Variant, Branch);

fn trace_seeds(
    land: &Arc<Landscape>,
    seeds: &[LevelPoint],
    name: &str,
    range: (f64, f64),
    dtau: f64,
    policy: Policy,
) -> Result<Vec<(Traced, Vec<Branch>)>> {
    let jobs: Vec<(LevelPoint, Variant)> = seeds
        .iter()
        .flat_map(|s| Variant::for_seed(s.kind).iter().map(move |v| (*s, *v)))
        .collect();
    jobs.par_iter()
        .map(|(s, v)| {
            let (b, nodes) = trace_glued(land.clone(), *s, *v, range, dtau, policy)?;
            let label = format!("{name}={:.6} {}", s.location, v.label());
            Ok(((label, *s, *v, b), nodes))
        })
        .collect()
}

/// Whether `a` passes through the state `(τ, x, dx/dτ)` up to integer shifts
/// of τ (and of `x` on the circle).
pub fn passes_through(a: &Branch, state: (f64, f64, f64)) -> Result<bool> {
    let (tau, x, d) = state;
    let (a0, a1) = a.tau_span();
    let (m0, m1) = ((a0 - tau).ceil() as i64, (a1 - tau).floor() as i64);
    for m in m0..=m1 {
        let t = tau + m as f64;
        let v = a.value_at(t)?;
        let n = if a.landscape.periodic { (v - x).round() } else { 0.0 };
        if (v - x - n).abs() > STATE_TOL {
            continue;
        }
        let da = a.derivative_at(t)?;
        if (da - d).abs() <= 1e-6 * (1.0 + d.abs()) || (da.is_infinite() && da == d) {
            return Ok(true);
        }
    }
    Ok(false)
}

fn seed_state(b: &Branch) -> Result<(f64, f64, f64)> {
    Ok((b.tau0, b.value_at(b.tau0)?, b.derivative_at(b.tau0)?))
}

/// Group traced seeds into classes of seeds lying on the same maximal family.
fn classes(traced: Vec<Traced>) -> Result<Vec<Traced>> {
    let mut reps: Vec<Traced> = Vec::new();
    for t in traced {
        let mut seen = false;
        for r in &reps {
            if passes_through(&r.3, seed_state(&t.3)?)? || passes_through(&t.3, seed_state(&r.3)?)? {
                seen = true;
                break;
            }
        }
        if !seen {
            reps.push(t);
        }
    }
    Ok(reps)
}

/// Half-width of the τ window used to discover maximal families: long
/// enough to pass every piece twice.
fn discovery_reach(land: &Landscape, span: (f64, f64)) -> f64 {
    let pieces = land.critical.len() as f64 + 1.0;
    span.0.abs().max(span.1.abs()) + 2.0 * pieces + 2.0
}

const DISCOVERY_DTAU: f64 = 1e-2;

fn representatives(
    land: &Arc<Landscape>,
    seeds: &[LevelPoint],
    name: &str,
    span: (f64, f64),
    policy: Policy,
) -> Result<Vec<Traced>> {
    let reach = discovery_reach(land, span);
    let found = trace_seeds(land, seeds, name, (-reach, reach), DISCOVERY_DTAU, policy)?;
    classes(found.into_iter().map(|(t, _)| t).collect())
}

/// Trace every seed of `spec`, glue through contacts and assemble the
/// maximal families: one per pair of an angular and a radial class, where a
/// class collects the seeds lying on one maximal glued branch.
pub fn build_family_graph(
    spec: &FieldSpec,
    tau_span: (f64, f64),
    dtau: f64,
    policy: Policy,
) -> Result<FamilyGraph> {
    let (ang, rad) = rayon::join(
        || Landscape::angular(&spec.f).map(Arc::new),
        || Landscape::radial(&spec.gt, spec.r_max).map(Arc::new),
    );
    let (ang, rad) = (ang?, rad?);
    let adom = crate::atlas::angular_scan_domain(spec);
    let rdom = crate::atlas::radial_scan_domain(spec);
    let mut alphas = scan_levels(&spec.f, 1.0, adom, DEFAULT_N_GRID)?.points;
    if alphas.is_empty() {
        alphas = scan_levels(&spec.f, -1.0, adom, DEFAULT_N_GRID)?.points;
    }
    let isolated: Vec<LevelPoint> = alphas
        .iter()
        .filter(|a| a.kind == PointKind::LocalMin && (a.level - 1.0).abs() < 1e-6)
        .copied()
        .collect();
    alphas.retain(|a| !isolated.contains(a));
    let mut rhos = scan_levels(&spec.gt, 0.0, rdom, DEFAULT_N_GRID)?.points;
    rhos.retain(|r| r.location >= MIN_RADIUS);

    let (ra, rr) = rayon::join(
        || representatives(&ang, &alphas, "alpha", tau_span, policy),
        || representatives(&rad, &rhos, "rho", tau_span, policy),
    );
    let (ra, rr) = (ra?, rr?);
    let fine = |land: &Arc<Landscape>, reps: &[Traced]| -> Result<Vec<(String, Branch, Vec<Branch>)>> {
        reps.par_iter()
            .map(|(l, s, v, _)| {
                let (b, nodes) = trace_glued(land.clone(), *s, *v, tau_span, dtau, policy)?;
                Ok((l.clone(), b, nodes))
            })
            .collect()
    };
    let (fa, fr) = rayon::join(|| fine(&ang, &ra), || fine(&rad, &rr));
    let (fa, fr) = (fa?, fr?);

    let mut nodes = Vec::new();
    let mut edges: Vec<GlueEvent> = Vec::new();
    for (_, b, n) in fa.iter().chain(&fr) {
        nodes.extend(n.iter().cloned());
        edges.extend(&b.events);
    }
    let pairs: Vec<(&(String, Branch, Vec<Branch>), &(String, Branch, Vec<Branch>))> = fa
        .iter()
        .flat_map(|a| fr.iter().map(move |r| (a, r)))
        .collect();
    let families: Vec<Result<DelayFamily>> = pairs
        .par_iter()
        .map(|((la, a, _), (lr, r, _))| {
            let mut fam = assemble_family(a, r)?;
            fam.label = format!("{la} / {lr}");
            Ok(fam)
        })
        .collect();
    let maximal_families = families.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(FamilyGraph {
        nodes,
        edges,
        maximal_families,
        isolated,
    })
}

/// The scan point nearest `near` among `f = level` solutions, within `tol`.
pub fn snap_seed(
    func: &crate::expr::ScalarFunction,
    level: f64,
    domain: crate::atlas::ScanDomain,
    near: f64,
    tol: f64,
) -> Result<LevelPoint> {
    let pts = scan_levels(func, level, domain, DEFAULT_N_GRID)?.points;
    pts.into_iter()
        .filter(|p| (p.location - near).abs() <= tol)
        .min_by(|a, b| (a.location - near).abs().total_cmp(&(b.location - near).abs()))
        .ok_or_else(|| {
            GlueError::Branch(BranchError::SeedNotOnLevel {
                location: near,
                value: func.eval(near).unwrap_or(f64::NAN),
            })
        })
}

/// Seeds within this distance of a requested `α` or `ρ` are accepted.
pub const SEED_SNAP: f64 = 1e-3;

/// The family through the orbit `(α, ρ)`, glued through every contact.
/// `variants` picks the local inverses at extremum seeds (default `lr`).
pub fn trace_family(
    spec: &FieldSpec,
    alpha: f64,
    rho: f64,
    tau_span: (f64, f64),
    dtau: f64,
    policy: Policy,
    variants: (Option<Variant>, Option<Variant>),
) -> Result<DelayFamily> {
    let a = snap_seed(&spec.f, 1.0, crate::atlas::angular_scan_domain(spec), alpha, SEED_SNAP)?;
    let r = snap_seed(&spec.gt, 0.0, crate::atlas::radial_scan_domain(spec), rho, SEED_SNAP)?;
    let pick = |p: &LevelPoint, v: Option<Variant>| {
        v.filter(|v| Variant::for_seed(p.kind).contains(v))
            .or_else(|| Variant::for_seed(p.kind).first().copied())
            .ok_or(GlueError::DegenerateContact { location: p.location, d2: p.d2 })
    };
    let (va, vr) = (pick(&a, variants.0)?, pick(&r, variants.1)?);
    let ang = Arc::new(Landscape::angular(&spec.f)?);
    let rad = Arc::new(Landscape::radial(&spec.gt, spec.r_max)?);
    let (ba, br) = rayon::join(
        || trace_glued(ang, a, va, tau_span, dtau, policy),
        || trace_glued(rad, r, vr, tau_span, dtau, policy),
    );
    let (ba, br) = (ba?.0, br?.0);
    let mut fam = assemble_family(&ba, &br)?;
    fam.label = format!("alpha={:.6} {} / rho={:.6} {}", a.location, va.label(), r.location, vr.label());
    Ok(fam)
}

/// Fixtures with explicit glued families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fixture {
    /// `f = sin(2πkθ)`, `g = 2πr cos(2πr)`.
    Trig { k: u32 },
    /// `f = 512(θ−¼)²(θ−¾)² − 1`, `g = 2πr(r−1)`.
    Poly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gluing {
    Lr,
    Rl,
}

/// Explicit `(t, r)` of the glued families. For `Poly` the gluing choices
/// are ignored: there is a single family.
pub fn closed_form_oracle(fixture: Fixture, angular: Gluing, radial: Gluing, tau: f64) -> (f64, f64) {
    match fixture {
        Fixture::Trig { k } => {
            let k = k as f64;
            let t = match angular {
                Gluing::Lr => (tau + 0.25) / k,
                Gluing::Rl => (0.25 - tau) / k,
            };
            let r = match radial {
                Gluing::Lr => tau + 0.25,
                Gluing::Rl => 0.75 - tau,
            };
            (t, r)
        }
        Fixture::Poly => {
            let n = tau.floor().rem_euclid(4.0) as u8;
            let s = tau - tau.floor();
            let c = (std::f64::consts::PI * s).cos();
            let t = match n {
                0 => 0.5 - (1.0 - c).sqrt() / 4.0,
                1 => 0.5 - (1.0 + c).sqrt() / 4.0,
                2 => 0.5 + (1.0 - c).sqrt() / 4.0,
                _ => 0.5 + (1.0 + c).sqrt() / 4.0,
            };
            (t, 1.0 - sin_cos_turns(tau).0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::branch::DEFAULT_DTAU;

    fn trig(k: u32, r_max: f64) -> FieldSpec {
        FieldSpec::parse(&format!("sin(2*pi*{k}*theta)"), "2*pi*r*cos(2*pi*r)", r_max).unwrap()
    }

    #[test]
    fn oracle_examples() {
        assert_eq!(closed_form_oracle(Fixture::Trig { k: 5 }, Gluing::Lr, Gluing::Lr, 0.0), (0.05, 0.25));
        let (a, _) = closed_form_oracle(Fixture::Trig { k: 3 }, Gluing::Rl, Gluing::Rl, 0.3);
        let (b, _) = closed_form_oracle(Fixture::Trig { k: 3 }, Gluing::Rl, Gluing::Rl, 3.3);
        assert!(((a - b) - 1.0).abs() < 1e-12);
        let below = closed_form_oracle(Fixture::Poly, Gluing::Lr, Gluing::Lr, 2.0 - 1e-12).0;
        let at = closed_form_oracle(Fixture::Poly, Gluing::Lr, Gluing::Lr, 2.0).0;
        assert_eq!(at, 0.5);
        assert!((below - at).abs() < 1e-6);
    }

    #[test]
    fn trig_gluing_produces_straight_lines() {
        let spec = trig(5, 10.0);
        let land = Arc::new(Landscape::angular(&spec.f).unwrap());
        let seed = LevelPoint::at(&spec.f, 0.05).unwrap();
        let (b, _) = trace_glued(land, seed, Variant::LeftRight, (-0.25, 5.75), DEFAULT_DTAU, Policy::SwitchSides).unwrap();
        for (t, x) in b.tau.iter().zip(&b.values) {
            assert!((x - (t + 0.25) / 5.0).abs() < 1e-9, "{t}: {x}");
        }
        assert!(b.events.iter().all(|e| {
            let q = match e.kind {
                GlueKind::AngularMax => e.at_tau,
                GlueKind::AngularMin => e.at_tau - 0.5,
                _ => f64::NAN,
            };
            q == q.round()
        }));
        for w in b.d_values.iter() {
            assert!((w - 0.2).abs() < 1e-6);
        }
    }

    #[test]
    fn reflect_policy_kinks_the_radius() {
        let spec = trig(1, 10.0);
        let land = Arc::new(Landscape::radial(&spec.gt, spec.r_max).unwrap());
        let seed = LevelPoint::at(&spec.gt, 0.25).unwrap();
        let (b, _) = trace_glued(land, seed, Variant::Through, (0.0, 2.0), DEFAULT_DTAU, Policy::Reflect).unwrap();
        // slope +1 up to the minimum of g̃ at r = 1/2, then back down to the origin
        let k = b.tau.iter().position(|t| *t == 0.25).unwrap();
        assert!((b.values[k] - 0.5).abs() < 1e-12);
        assert!((b.value_at(0.5).unwrap() - 0.25).abs() < 1e-9);
        assert_eq!(b.events[0].kind, GlueKind::RadialMin);
        assert_eq!(b.events[0].from_side, b.events[0].to_side);
        assert_eq!(b.high_end, Terminal::HitZeroRadius { tau: 0.75 });
    }

    #[test]
    fn switching_sides_keeps_the_radius_straight() {
        let spec = trig(1, 10.0);
        let land = Arc::new(Landscape::radial(&spec.gt, spec.r_max).unwrap());
        let seed = LevelPoint::at(&spec.gt, 0.25).unwrap();
        let (b, _) = trace_glued(land, seed, Variant::Through, (-0.25, 2.0), DEFAULT_DTAU, Policy::SwitchSides).unwrap();
        for (t, r) in b.tau.iter().zip(&b.values) {
            assert!((r - (t + 0.25)).abs() < 1e-9);
        }
        let kinds: Vec<_> = b.events.iter().map(|e| (e.at_tau, e.kind)).collect();
        assert_eq!(kinds[0], (0.25, GlueKind::RadialMin));
        assert_eq!(kinds[1], (0.75, GlueKind::RadialMax));
        assert_eq!(b.low_end, Terminal::HitZeroRadius { tau: -0.25 });
    }

    #[test]
    fn non_contact_end_cannot_be_extended() {
        let spec = trig(1, 10.0);
        let land = Arc::new(Landscape::radial(&spec.gt, spec.r_max).unwrap());
        let seed = LevelPoint::at(&spec.gt, 0.25).unwrap();
        let b = trace_on(land, seed, Side::Transverse, (0.0, 0.2), DEFAULT_DTAU).unwrap();
        assert!(matches!(extend_through(&b, End::Hi, Policy::SwitchSides), Err(GlueError::NotAtContact(_))));
    }

    #[test]
    fn trig_graph_has_four_families() {
        let graph = build_family_graph(&trig(2, 10.0), (-0.25, 3.75), DEFAULT_DTAU, Policy::SwitchSides).unwrap();
        assert_eq!(graph.maximal_families.len(), 4, "{:?}", graph.maximal_families.iter().map(|f| &f.label).collect::<Vec<_>>());
        assert!(graph.isolated.is_empty());
    }

    #[test]
    fn minimum_at_level_one_is_isolated() {
        let spec = FieldSpec::parse("2 - cos(2*pi*theta)", "2*pi*r*(r-1)", 10.0).unwrap();
        let graph = build_family_graph(&spec, (-0.25, 1.75), 1e-2, Policy::SwitchSides).unwrap();
        assert_eq!(graph.isolated.len(), 1);
        assert!(graph.isolated[0].location.abs() < 1e-9);
        assert!(graph.maximal_families.is_empty());
    }
}
