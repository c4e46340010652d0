//! Continuation in τ of the two scalar equations behind a delay family:
//!
//! `f(t) = cos 2πτ` (angular) and `g̃(r) = −2π sin 2πτ` (radial).
//!
//! Each equation is solved on a fixed monotone piece of the function (a
//! local inverse), with a bracketed Newton corrector at every τ. A branch ends
//! where the target leaves the range of its piece (a fold, no solution beyond)
//! or where the target touches a critical value tangentially (a contact, where
//! the glue module decides how to go on).

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::atlas::{
    critical_points, AtlasError, LevelPoint, PointKind, ScanDomain, CONTACT_TOL, DEFAULT_N_GRID,
    DERIV_TOL,
};
use crate::cusp::{detect_cusps, CuspError, CuspRecord};
use crate::expr::{ExprError, ScalarFunction};
use crate::field::PlanarPoint;
use crate::glue::GlueEvent;
use crate::roots::{bisect, newton_bisect};

pub const DEFAULT_DTAU: f64 = 1e-3;
pub const MAX_DTAU: f64 = 1e-2;
pub const R_FLOOR: f64 = 1e-9;
/// Agreement required for τ-periodicity of a traced branch.
pub const PERIOD_TOL: f64 = 1e-8;
const SNAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BranchError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Atlas(#[from] AtlasError),
    #[error("seed {location} gives {value}, not a level this branch can start from")]
    SeedNotOnLevel { location: f64, value: f64 },
    #[error("side {side:?} does not fit seed {location} (kind {kind:?})")]
    SideMismatch { location: f64, side: Side, kind: PointKind },
    #[error("no start time of the seed lies in [{lo}, {hi}]")]
    SeedOutsideRange { lo: f64, hi: f64 },
    #[error("dtau must lie in (0, {MAX_DTAU}], got {0}")]
    BadStep(f64),
    #[error("corrector failed at tau = {0}")]
    StepRejected(f64),
    #[error("the function has no monotone pieces (it is constant)")]
    DegenerateFunction,
    #[error("tau ranges do not overlap")]
    EmptyOverlap,
    #[error("tau = {0} lies outside the branch")]
    OutOfRange(f64),
}

pub type Result<T, E = BranchError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BranchKind {
    Angular,
    Radial,
}

/// `sin 2πτ` and `cos 2πτ`, exact at quarter turns.
pub fn sin_cos_turns(tau: f64) -> (f64, f64) {
    let s = tau.rem_euclid(1.0);
    let q = 4.0 * s;
    if q == q.round() {
        return match q as i64 % 4 {
            0 => (0.0, 1.0),
            1 => (1.0, 0.0),
            2 => (0.0, -1.0),
            _ => (-1.0, 0.0),
        };
    }
    (TAU * s).sin_cos()
}

impl BranchKind {
    /// The right-hand side `c(τ)` with its first two derivatives.
    pub fn target(self, tau: f64) -> [f64; 3] {
        let (s, c) = sin_cos_turns(tau);
        match self {
            BranchKind::Angular => [c, -TAU * s, -TAU * TAU * c],
            BranchKind::Radial => [-TAU * s, -TAU * TAU * c, 8.0 * PI.powi(3) * s],
        }
    }

    /// Offset of the first extremum of `c` in `[0, 1/2)`; extrema repeat every 1/2.
    fn extreme_offset(self) -> f64 {
        match self {
            BranchKind::Angular => 0.0,
            BranchKind::Radial => 0.25,
        }
    }

    pub fn is_target_extreme(self, tau: f64) -> bool {
        let q = 2.0 * (tau - self.extreme_offset());
        q == q.round()
    }

    /// The representative start time in `[0, 1)` of a seed at `level`.
    pub fn base_start(self, level: f64) -> Option<f64> {
        let near = |a: f64, b: f64| (a - b).abs() <= CONTACT_TOL * (1.0 + b.abs());
        match self {
            BranchKind::Angular if near(level, 1.0) => Some(0.0),
            BranchKind::Angular if near(level, -1.0) => Some(0.5),
            BranchKind::Radial if near(level, 0.0) => Some(0.0),
            BranchKind::Radial if near(level, -TAU) => Some(0.25),
            BranchKind::Radial if near(level, TAU) => Some(0.75),
            _ => None,
        }
    }
}

/// A maximal monotone interval of the traced function. Values on the circle
/// are unwrapped, so pieces may lie outside `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub lo: f64,
    pub hi: f64,
    pub f_lo: f64,
    pub f_hi: f64,
    pub lo_critical: bool,
    pub hi_critical: bool,
    pub lo_boundary: bool,
    pub hi_boundary: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum End {
    Lo,
    Hi,
}

impl Piece {
    pub fn at(&self, end: End) -> (f64, f64, bool, bool) {
        match end {
            End::Lo => (self.lo, self.f_lo, self.lo_critical, self.lo_boundary),
            End::Hi => (self.hi, self.f_hi, self.hi_critical, self.hi_boundary),
        }
    }

    fn range(&self) -> (f64, f64) {
        (self.f_lo.min(self.f_hi), self.f_lo.max(self.f_hi))
    }

    /// `+1` when the piece lies to the right of `end`.
    fn outward(end: End) -> f64 {
        match end {
            End::Lo => 1.0,
            End::Hi => -1.0,
        }
    }
}

/// The traced function cut into monotone pieces.
#[derive(Debug, Clone)]
pub struct Landscape {
    pub kind: BranchKind,
    pub func: ScalarFunction,
    pub periodic: bool,
    pub lo: f64,
    pub hi: f64,
    pub critical: Vec<LevelPoint>,
}

impl Landscape {
    /// `f` on the circle when it carries period 1, else on `[0, 1]`.
    pub fn angular(f: &ScalarFunction) -> Result<Self> {
        let periodic = f.period().is_some();
        let domain = if periodic {
            ScanDomain::Circle
        } else {
            ScanDomain::Interval { lo: 0.0, hi: 1.0 }
        };
        let critical = critical_points(f, domain, DEFAULT_N_GRID)?;
        if periodic && critical.is_empty() {
            return Err(BranchError::DegenerateFunction);
        }
        Ok(Landscape {
            kind: BranchKind::Angular,
            func: f.clone(),
            periodic,
            lo: 0.0,
            hi: 1.0,
            critical,
        })
    }

    /// `g̃` on `[0, r_max]`.
    pub fn radial(gt: &ScalarFunction, r_max: f64) -> Result<Self> {
        let critical = critical_points(gt, ScanDomain::Interval { lo: 0.0, hi: r_max }, DEFAULT_N_GRID)?;
        Ok(Landscape {
            kind: BranchKind::Radial,
            func: gt.clone(),
            periodic: false,
            lo: 0.0,
            hi: r_max,
            critical,
        })
    }

    /// Breakpoints `(x, critical, boundary)` around `x`.
    fn breakpoints(&self, x: f64) -> Vec<(f64, bool, bool)> {
        if self.periodic {
            let n = x.floor();
            let mut v = Vec::with_capacity(3 * self.critical.len() + 1);
            for shift in [n - 1.0, n, n + 1.0] {
                for c in &self.critical {
                    v.push((c.location + shift, true, false));
                }
            }
            v.push((self.critical[0].location + n + 2.0, true, false));
            v
        } else {
            let near = |a: f64, b: f64| (a - b).abs() <= SNAP;
            let lo_c = self.critical.iter().any(|c| near(c.location, self.lo));
            let hi_c = self.critical.iter().any(|c| near(c.location, self.hi));
            let mut v = vec![(self.lo, lo_c, true)];
            for c in &self.critical {
                if !near(c.location, self.lo) && !near(c.location, self.hi) {
                    v.push((c.location, true, false));
                }
            }
            v.push((self.hi, hi_c, true));
            v
        }
    }

    fn piece(&self, a: (f64, bool, bool), b: (f64, bool, bool)) -> Result<Piece> {
        Ok(Piece {
            lo: a.0,
            hi: b.0,
            f_lo: self.func.eval(a.0)?,
            f_hi: self.func.eval(b.0)?,
            lo_critical: a.1,
            hi_critical: b.1,
            lo_boundary: a.2,
            hi_boundary: b.2,
        })
    }

    /// The piece holding `x` in its interior.
    pub fn piece_containing(&self, x: f64) -> Result<Option<Piece>> {
        let bp = self.breakpoints(x);
        for w in bp.windows(2) {
            if x > w[0].0 + SNAP && x < w[1].0 - SNAP {
                return self.piece(w[0], w[1]).map(Some);
            }
        }
        Ok(None)
    }

    /// The piece having `x` as its `end` endpoint.
    pub fn piece_with_end(&self, x: f64, end: End) -> Result<Option<Piece>> {
        let bp = self.breakpoints(x);
        for w in bp.windows(2) {
            let e = match end {
                End::Lo => w[0].0,
                End::Hi => w[1].0,
            };
            if (e - x).abs() <= SNAP {
                return self.piece(w[0], w[1]).map(Some);
            }
        }
        Ok(None)
    }

    /// The piece across the `end` endpoint of `p`.
    pub fn neighbour(&self, p: &Piece, end: End) -> Result<Option<Piece>> {
        match end {
            End::Lo => self.piece_with_end(p.lo, End::Hi),
            End::Hi => self.piece_with_end(p.hi, End::Lo),
        }
    }

    fn contact_point(&self, x: f64) -> Result<LevelPoint> {
        Ok(LevelPoint::at(&self.func, x)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
    Transverse,
}

/// How a branch ends on one side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Terminal {
    /// The τ range was exhausted.
    RanOut,
    /// The target met a critical value of the function. At a tangential
    /// contact the branch can be continued (`continuable`); at a fold there is
    /// no solution beyond `tau`.
    HitExtremum {
        contact: LevelPoint,
        tau: f64,
        continuable: bool,
    },
    HitZeroRadius { tau: f64 },
    /// The branch closes up after `period` units of τ.
    Periodic { period: u32 },
    /// The solution left the domain of the function (`r_max`, or the ends of
    /// `[0, 1]` for a non-periodic `f`).
    DomainEdge { tau: f64, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }
}

/// Samples `values[i]` solving the branch equation at `tau[i]`.
#[derive(Debug, Clone)]
pub struct Branch {
    pub kind: BranchKind,
    pub seed: LevelPoint,
    pub side: Side,
    pub tau: Vec<f64>,
    pub values: Vec<f64>,
    pub d_values: Vec<f64>,
    /// `segments[i]` is the piece used on `[tau[i], tau[i+1]]`.
    pub segments: Vec<Piece>,
    pub low_end: Terminal,
    pub high_end: Terminal,
    pub events: Vec<GlueEvent>,
    pub dtau: f64,
    pub range: (f64, f64),
    /// Start time of the seed.
    pub tau0: f64,
    pub landscape: Arc<Landscape>,
}

/// The τ grid: multiples of `dtau` (as `i/N` when `dtau = 1/N`), extrema of
/// the target, the range ends and `extra`.
pub fn tau_grid(kind: BranchKind, range: (f64, f64), dtau: f64, extra: &[f64]) -> Vec<f64> {
    let (a, b) = range;
    let mut v = Vec::new();
    let n = (1.0 / dtau).round();
    if (n * dtau - 1.0).abs() < 1e-12 {
        let (i0, i1) = ((a * n).ceil() as i64, (b * n).floor() as i64);
        v.extend((i0..=i1).map(|i| i as f64 / n));
    } else {
        let (i0, i1) = ((a / dtau).ceil() as i64, (b / dtau).floor() as i64);
        v.extend((i0..=i1).map(|i| i as f64 * dtau));
    }
    let off = kind.extreme_offset();
    let (j0, j1) = ((2.0 * (a - off)).ceil() as i64, (2.0 * (b - off)).floor() as i64);
    v.extend((j0..=j1).map(|j| off + j as f64 / 2.0));
    v.push(a);
    v.push(b);
    v.extend(extra.iter().copied().filter(|t| *t >= a && *t <= b));
    v.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::with_capacity(v.len());
    for t in v {
        match out.last_mut() {
            Some(last) if t - *last < 1e-12 => {
                // prefer the exact extremum
                if kind.is_target_extreme(t) {
                    *last = t;
                }
            }
            _ => out.push(t),
        }
    }
    out
}

/// The first start time `τ₀ ∈ base + ℤ` inside `range`.
pub fn start_tau(kind: BranchKind, level: f64, range: (f64, f64)) -> Result<f64> {
    let base = kind.base_start(level).ok_or(BranchError::SeedNotOnLevel {
        location: f64::NAN,
        value: level,
    })?;
    let t = if base >= range.0 && base <= range.1 {
        base
    } else {
        base + (range.0 - base).ceil()
    };
    if t > range.1 {
        return Err(BranchError::SeedOutsideRange { lo: range.0, hi: range.1 });
    }
    Ok(t)
}

pub(crate) struct Walk {
    pub tau: Vec<f64>,
    pub values: Vec<f64>,
    pub d_values: Vec<f64>,
    pub segments: Vec<Piece>,
    pub end: Terminal,
}

fn contact_slope(kind: BranchKind, land: &Landscape, tau: f64, e: f64) -> Result<f64> {
    let c2 = kind.target(tau)[2];
    let f2 = land.func.jet2(e)?.d2;
    Ok((c2 / f2).abs().sqrt())
}

/// Walk from `(tau0, x0)` on `piece` over `grid` (already in walking order,
/// not containing `tau0`). The start sample is not included in the result.
pub(crate) fn walk(
    land: &Landscape,
    mut piece: Piece,
    tau0: f64,
    x0: f64,
    grid: &[f64],
    dir: Direction,
) -> Result<Walk> {
    let kind = land.kind;
    let sgn = dir.sign();
    let mut w = Walk {
        tau: Vec::new(),
        values: Vec::new(),
        d_values: Vec::new(),
        segments: Vec::new(),
        end: Terminal::RanOut,
    };
    let (mut tau, mut x) = (tau0, x0);
    for &tn in grid {
        let [c, dc, _] = kind.target(tn);
        let (fmin, fmax) = piece.range();
        if c > fmax + CONTACT_TOL || c < fmin - CONTACT_TOL {
            // fold: the target crosses an end value of the piece before tn
            let edge = if c > fmax { fmax } else { fmin };
            let end = if piece.f_hi == edge { End::Hi } else { End::Lo };
            let (e, fe, critical, boundary) = piece.at(end);
            let tc = bisect(|s| Ok::<_, BranchError>(kind.target(s)[0] - fe), tau, tn)?;
            w.tau.push(tc);
            w.values.push(e);
            w.d_values.push(-Piece::outward(end) * sgn * f64::INFINITY);
            w.segments.push(piece);
            w.end = if critical && !boundary {
                Terminal::HitExtremum {
                    contact: land.contact_point(e)?,
                    tau: tc,
                    continuable: false,
                }
            } else if kind == BranchKind::Radial && end == End::Lo && boundary {
                Terminal::HitZeroRadius { tau: tc }
            } else {
                Terminal::DomainEdge { tau: tc, value: e }
            };
            return Ok(w);
        }

        // a contact with an end of the piece at an extremum of the target
        let touching = if kind.is_target_extreme(tn) {
            [End::Lo, End::Hi]
                .into_iter()
                .find(|&end| (piece.at(end).1 - c).abs() <= CONTACT_TOL)
        } else {
            None
        };

        let xn = if let Some(end) = touching {
            piece.at(end).0
        } else if c >= fmax || c <= fmin {
            if (c - piece.f_hi).abs() <= (c - piece.f_lo).abs() {
                piece.hi
            } else {
                piece.lo
            }
        } else {
            let j = land.func.jet2(x)?;
            let guess = if j.d1.abs() > DERIV_TOL {
                x + dc / j.d1 * (tn - tau)
            } else {
                let side = if (x - piece.lo).abs() < (x - piece.hi).abs() { End::Lo } else { End::Hi };
                x + Piece::outward(side) * contact_slope(kind, land, tau, x)? * (tn - tau).abs()
            };
            let (ha, hb) = (piece.f_lo - c, piece.f_hi - c);
            let root = newton_bisect(
                |s| land.func.jet2(s).map(|j| (j.value - c, j.d1)),
                piece.lo,
                piece.hi,
                ha,
                hb,
                guess,
                1e-14 * (1.0 + c.abs()),
            )?;
            if !root.is_finite() {
                return Err(BranchError::StepRejected(tn));
            }
            root
        };

        let mut d = dc / land.func.jet2(xn)?.d1;
        let mut stop = None;
        if let Some(end) = touching {
            let (e, _, critical, boundary) = piece.at(end);
            if critical {
                d = -sgn * Piece::outward(end) * contact_slope(kind, land, tn, e)?;
                stop = Some(if boundary {
                    if kind == BranchKind::Radial && end == End::Lo {
                        Terminal::HitZeroRadius { tau: tn }
                    } else {
                        Terminal::DomainEdge { tau: tn, value: e }
                    }
                } else {
                    let contact = land.contact_point(e)?;
                    Terminal::HitExtremum {
                        contact,
                        tau: tn,
                        continuable: contact.d2.abs() > DERIV_TOL,
                    }
                });
            } else if kind == BranchKind::Radial && end == End::Lo {
                // the radius touches zero and turns back
                d = 0.0;
            } else {
                // nothing is known beyond an artificial edge
                stop = Some(Terminal::DomainEdge { tau: tn, value: e });
            }
        }
        w.tau.push(tn);
        w.values.push(xn);
        w.d_values.push(d);
        w.segments.push(piece);
        if let Some(t) = stop {
            w.end = t;
            return Ok(w);
        }
        tau = tn;
        x = xn;
        let _ = &mut piece;
    }
    Ok(w)
}

/// The piece a seed starts on.
pub fn seed_piece(land: &Landscape, seed: &LevelPoint, side: Side) -> Result<Piece> {
    let mismatch = || BranchError::SideMismatch {
        location: seed.location,
        side,
        kind: seed.kind,
    };
    let found = match (side, seed.kind) {
        (Side::Transverse, PointKind::Transverse) => land.piece_containing(seed.location)?,
        (Side::Left, PointKind::LocalMax | PointKind::LocalMin) => {
            land.piece_with_end(seed.location, End::Hi)?
        }
        (Side::Right, PointKind::LocalMax | PointKind::LocalMin) => {
            land.piece_with_end(seed.location, End::Lo)?
        }
        _ => None,
    };
    found.ok_or_else(mismatch)
}

impl Branch {
    fn from_walks(
        land: Arc<Landscape>,
        seed: LevelPoint,
        side: Side,
        start: (f64, f64, f64),
        back: Option<Walk>,
        fwd: Option<Walk>,
        dtau: f64,
        range: (f64, f64),
    ) -> Branch {
        let mut b = Branch {
            kind: land.kind,
            seed,
            side,
            tau: Vec::new(),
            values: Vec::new(),
            d_values: Vec::new(),
            segments: Vec::new(),
            low_end: Terminal::RanOut,
            high_end: Terminal::RanOut,
            events: Vec::new(),
            dtau,
            range,
            tau0: start.0,
            landscape: land,
        };
        if let Some(w) = back {
            b.tau.extend(w.tau.iter().rev());
            b.values.extend(w.values.iter().rev());
            b.d_values.extend(w.d_values.iter().rev());
            b.segments.extend(w.segments.iter().rev());
            b.low_end = w.end;
        }
        b.tau.push(start.0);
        b.values.push(start.1);
        b.d_values.push(start.2);
        if let Some(w) = fwd {
            b.tau.extend(w.tau);
            b.values.extend(w.values);
            b.d_values.extend(w.d_values);
            b.segments.extend(w.segments);
            b.high_end = w.end;
        }
        b
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    pub fn tau_span(&self) -> (f64, f64) {
        (self.tau[0], self.tau[self.tau.len() - 1])
    }

    /// Residual of the defining equation at sample `i`.
    pub fn residual(&self, i: usize) -> Result<f64> {
        let c = self.kind.target(self.tau[i])[0];
        Ok(self.landscape.func.eval(self.values[i])? - c)
    }

    fn segment_index(&self, tau: f64) -> Result<usize> {
        let (a, b) = self.tau_span();
        if !(tau >= a - 1e-12 && tau <= b + 1e-12) {
            return Err(BranchError::OutOfRange(tau));
        }
        let k = self.tau.partition_point(|t| *t <= tau);
        Ok(k.saturating_sub(1).min(self.segments.len().saturating_sub(1)))
    }

    /// The branch value at any τ in its span, solved afresh on the piece used
    /// there.
    pub fn value_at(&self, tau: f64) -> Result<f64> {
        let i = self.segment_index(tau)?;
        if self.segments.is_empty() || tau == self.tau[i] {
            return Ok(self.values[i]);
        }
        if tau == self.tau[i + 1] {
            return Ok(self.values[i + 1]);
        }
        let p = self.segments[i];
        let c = self.kind.target(tau)[0];
        let (fmin, fmax) = p.range();
        if c >= fmax || c <= fmin {
            return Ok(if (c - p.f_hi).abs() <= (c - p.f_lo).abs() { p.hi } else { p.lo });
        }
        let (t0, t1) = (self.tau[i], self.tau[i + 1]);
        let s = (tau - t0) / (t1 - t0);
        let guess = self.values[i] + s * (self.values[i + 1] - self.values[i]);
        let func = &self.landscape.func;
        Ok(newton_bisect(
            |x| func.jet2(x).map(|j| (j.value - c, j.d1)),
            p.lo,
            p.hi,
            p.f_lo - c,
            p.f_hi - c,
            guess,
            1e-14 * (1.0 + c.abs()),
        )?)
    }

    /// `dx/dτ` from the implicit-function formula; stored one-sided limits at
    /// samples where it does not apply.
    pub fn derivative_at(&self, tau: f64) -> Result<f64> {
        let i = self.segment_index(tau)?;
        for k in [i, i + 1] {
            if k < self.tau.len() && self.tau[k] == tau {
                return Ok(self.d_values[k]);
            }
        }
        let x = self.value_at(tau)?;
        Ok(self.kind.target(tau)[1] / self.landscape.func.jet2(x)?.d1)
    }

    /// `d²x/dτ²` from differentiating the defining equation twice.
    pub fn second_derivative_at(&self, tau: f64, x: f64, d: f64) -> Result<f64> {
        let [_, _, c2] = self.kind.target(tau);
        let j = self.landscape.func.jet2(x)?;
        Ok((c2 - j.d2 * d * d) / j.d1)
    }

    /// Smallest integer `P ≤ max_period` with `x(τ + P) = x(τ) + m`, `m`
    /// integer (zero off the circle), over one full period.
    pub fn detect_period(&self, max_period: u32) -> Result<Option<u32>> {
        let (a, b) = self.tau_span();
        for p in 1..=max_period {
            let pf = p as f64;
            if b - a < pf - 1e-12 {
                break;
            }
            let shift = self.value_at(a + pf)? - self.value_at(a)?;
            let m = if self.landscape.periodic { shift.round() } else { 0.0 };
            if (shift - m).abs() > PERIOD_TOL {
                continue;
            }
            let samples = 64 * p as usize;
            let mut ok = true;
            for j in 0..samples {
                let s = a + (b - a - pf).min(pf) * j as f64 / samples as f64;
                let lhs = self.value_at(s + pf)?;
                let rhs = self.value_at(s)? + m;
                if (lhs - rhs).abs() > PERIOD_TOL {
                    ok = false;
                    break;
                }
            }
            if ok {
                return Ok(Some(p));
            }
        }
        Ok(None)
    }

    /// Mark a branch that covers at least one period and never terminated as
    /// periodic.
    pub fn close_up(&mut self, max_period: u32) -> Result<()> {
        if self.low_end != Terminal::RanOut || self.high_end != Terminal::RanOut {
            return Ok(());
        }
        if let Some(period) = self.detect_period(max_period)? {
            self.low_end = Terminal::Periodic { period };
            self.high_end = Terminal::Periodic { period };
        }
        Ok(())
    }

    pub fn period(&self) -> Option<u32> {
        match (self.low_end, self.high_end) {
            (Terminal::Periodic { period }, Terminal::Periodic { .. }) => Some(period),
            _ => None,
        }
    }

    /// Resample onto `grid` (inside the span) by exact re-solves.
    pub fn resample(&self, grid: &[f64]) -> Result<Branch> {
        let mut out = self.clone();
        out.tau = grid.to_vec();
        out.values = Vec::with_capacity(grid.len());
        out.d_values = Vec::with_capacity(grid.len());
        out.segments = Vec::with_capacity(grid.len().saturating_sub(1));
        for (k, &t) in grid.iter().enumerate() {
            out.values.push(self.value_at(t)?);
            out.d_values.push(self.derivative_at(t)?);
            if k + 1 < grid.len() {
                let mid = 0.5 * (t + grid[k + 1]);
                out.segments.push(self.segments[self.segment_index(mid)?]);
            }
        }
        Ok(out)
    }
}

fn check_dtau(dtau: f64) -> Result<()> {
    if !(dtau > 0.0 && dtau <= MAX_DTAU) {
        return Err(BranchError::BadStep(dtau));
    }
    Ok(())
}

/// Trace one direction from the seed's start time.
pub fn trace_half(
    land: Arc<Landscape>,
    seed: LevelPoint,
    side: Side,
    range: (f64, f64),
    dtau: f64,
    dir: Direction,
) -> Result<Branch> {
    trace_dirs(land, seed, side, range, dtau, matches!(dir, Direction::Backward), matches!(dir, Direction::Forward))
}

/// Trace both directions from the seed's start time on the piece given by
/// `side`.
pub fn trace_on(
    land: Arc<Landscape>,
    seed: LevelPoint,
    side: Side,
    range: (f64, f64),
    dtau: f64,
) -> Result<Branch> {
    trace_dirs(land, seed, side, range, dtau, true, true)
}

fn trace_dirs(
    land: Arc<Landscape>,
    seed: LevelPoint,
    side: Side,
    range: (f64, f64),
    dtau: f64,
    back: bool,
    fwd: bool,
) -> Result<Branch> {
    check_dtau(dtau)?;
    let value = land.func.eval(seed.location)?;
    let kind = land.kind;
    let tau0 = start_tau(kind, value, range).map_err(|e| match e {
        BranchError::SeedNotOnLevel { .. } => BranchError::SeedNotOnLevel {
            location: seed.location,
            value,
        },
        e => e,
    })?;
    let piece = seed_piece(&land, &seed, side)?;
    let x0 = match side {
        Side::Left => piece.hi,
        Side::Right => piece.lo,
        Side::Transverse => seed.location,
    };
    let grid = tau_grid(kind, range, dtau, &[tau0]);
    let k0 = grid.iter().position(|t| *t == tau0).expect("start time is on the grid");
    let d0 = match side {
        Side::Transverse => kind.target(tau0)[1] / land.func.jet2(x0)?.d1,
        Side::Left => -contact_slope(kind, &land, tau0, x0)?,
        Side::Right => contact_slope(kind, &land, tau0, x0)?,
    };
    let back_walk = if back {
        let g: Vec<f64> = grid[..k0].iter().rev().copied().collect();
        Some(walk(&land, piece, tau0, x0, &g, Direction::Backward)?)
    } else {
        None
    };
    let fwd_walk = if fwd {
        Some(walk(&land, piece, tau0, x0, &grid[k0 + 1..], Direction::Forward)?)
    } else {
        None
    };
    let mut b = Branch::from_walks(
        land,
        seed,
        side,
        (tau0, x0, d0),
        back_walk,
        fwd_walk,
        dtau,
        range,
    );
    if back && fwd {
        b.close_up(1)?;
    }
    Ok(b)
}

/// Trace `f(t) = cos 2πτ` from an angular seed.
pub fn trace_angular(
    f: &ScalarFunction,
    seed: LevelPoint,
    side: Side,
    range: (f64, f64),
    dtau: f64,
) -> Result<Branch> {
    trace_on(Arc::new(Landscape::angular(f)?), seed, side, range, dtau)
}

/// Trace `g̃(r) = −2π sin 2πτ` from a radial seed.
pub fn trace_radial(
    gt: &ScalarFunction,
    r_max: f64,
    seed: LevelPoint,
    side: Side,
    range: (f64, f64),
    dtau: f64,
) -> Result<Branch> {
    trace_on(Arc::new(Landscape::radial(gt, r_max)?), seed, side, range, dtau)
}

/// A delay family: angular and radial branches on a common τ grid and the
/// curve `γ(τ) = r e^{2πi(t + τ)}` they trace.
#[derive(Debug, Clone)]
pub struct DelayFamily {
    pub label: String,
    pub angular: Branch,
    pub radial: Branch,
    pub curve: Vec<PlanarPoint>,
    pub cusps: Vec<CuspRecord>,
    /// The cusp search failed to classify a singular point.
    pub cusp_error: Option<CuspError>,
    pub is_circle_family: bool,
    /// τ-period of the closed family.
    pub period: Option<u32>,
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub fn assemble_family(angular: &Branch, radial: &Branch) -> Result<DelayFamily> {
    let (a0, a1) = angular.tau_span();
    let (r0, r1) = radial.tau_span();
    let (lo, hi) = (a0.max(r0), a1.min(r1));
    if lo > hi {
        return Err(BranchError::EmptyOverlap);
    }
    let (angular, radial) = if angular.tau == radial.tau {
        (angular.clone(), radial.clone())
    } else {
        let mut grid: Vec<f64> = angular
            .tau
            .iter()
            .chain(&radial.tau)
            .copied()
            .filter(|t| *t >= lo && *t <= hi)
            .collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        (angular.resample(&grid)?, radial.resample(&grid)?)
    };
    let curve = angular
        .tau
        .iter()
        .zip(&angular.values)
        .zip(&radial.values)
        .map(|((tau, t), r)| PlanarPoint::from_polar(*r, t + tau))
        .collect();
    let period = match (angular.period(), radial.period()) {
        (Some(p), Some(q)) => Some(p / gcd(p, q) * q),
        _ => None,
    };
    let mut fam = DelayFamily {
        label: String::new(),
        angular,
        radial,
        curve,
        cusps: Vec::new(),
        cusp_error: None,
        is_circle_family: period.is_some(),
        period,
    };
    match detect_cusps(&fam) {
        Ok(c) => fam.cusps = c,
        Err(e) => fam.cusp_error = Some(e),
    }
    Ok(fam)
}

impl DelayFamily {
    pub fn len(&self) -> usize {
        self.curve.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curve.is_empty()
    }

    pub fn tau(&self) -> &[f64] {
        &self.angular.tau
    }

    /// `(t, r)` at any τ of the family.
    pub fn state_at(&self, tau: f64) -> Result<(f64, f64)> {
        Ok((self.angular.value_at(tau)?, self.radial.value_at(tau)?))
    }
}

/// The delay orbit of parameter `tau`, evaluated at time `t`.
pub fn orbit_at(family: &DelayFamily, tau: f64, t: f64) -> Result<PlanarPoint> {
    let (ta, r) = family.state_at(tau)?;
    Ok(PlanarPoint::from_polar(r, ta + tau + t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn angular(src: &str) -> Arc<Landscape> {
        let (f, _) = parse(src, "theta").unwrap().with_period(1.0).unwrap();
        Arc::new(Landscape::angular(&f).unwrap())
    }

    fn radial(g: &str, r_max: f64) -> Arc<Landscape> {
        let gt = parse(g, "r").unwrap().g_tilde().unwrap();
        Arc::new(Landscape::radial(&gt, r_max).unwrap())
    }

    fn check_residuals(b: &Branch) {
        for i in 0..b.len() {
            assert!(b.residual(i).unwrap().abs() <= 1e-10, "sample {i}: {}", b.residual(i).unwrap());
        }
    }

    #[test]
    fn exact_quarter_turns() {
        assert_eq!(sin_cos_turns(0.25), (1.0, 0.0));
        assert_eq!(sin_cos_turns(-0.5), (0.0, -1.0));
        assert_eq!(sin_cos_turns(3.75), (-1.0, 0.0));
        let (s, c) = sin_cos_turns(0.1);
        assert!((s - (0.2 * PI).sin()).abs() < 1e-16 && (c - (0.2 * PI).cos()).abs() < 1e-16);
    }

    #[test]
    fn grid_contains_quarters_and_extra_points() {
        let g = tau_grid(BranchKind::Radial, (-0.25, 1.0), 1e-3, &[0.1234]);
        assert!(g.contains(&-0.25) && g.contains(&0.25) && g.contains(&0.75) && g.contains(&0.1234));
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        let g = tau_grid(BranchKind::Angular, (0.0, 1.0), 0.003, &[]);
        assert!(g.contains(&0.5));
    }

    #[test]
    fn radial_quadratic_family_is_periodic() {
        let land = radial("2*pi*r*(r-1)", 10.0);
        let seed = LevelPoint::at(&land.func, 1.0).unwrap();
        let b = trace_on(land, seed, Side::Transverse, (-0.25, 1.75), 1e-3).unwrap();
        check_residuals(&b);
        for (t, r) in b.tau.iter().zip(&b.values) {
            assert!((r - (1.0 - sin_cos_turns(*t).0)).abs() < 1e-12);
        }
        assert_eq!(b.period(), Some(1));
        // passes through the origin at τ = 1/4 without terminating
        let k = b.tau.iter().position(|t| *t == 0.25).unwrap();
        assert_eq!(b.values[k], 0.0);
    }

    #[test]
    fn transverse_angular_branch_is_periodic() {
        let land = angular("2*cos(10*pi*theta)*sin(4*pi*theta)");
        let seed = crate::atlas::scan_levels(&land.func, 1.0, ScanDomain::Circle, 2048)
            .unwrap()
            .points[0];
        assert!((seed.location - 0.170214).abs() < 1e-5);
        let b = trace_on(land, seed, Side::Transverse, (-0.25, 1.75), 1e-3).unwrap();
        check_residuals(&b);
        assert_eq!(b.period(), Some(1));
    }

    #[test]
    fn quartic_left_branch_matches_closed_form() {
        let land = angular("512*(theta-1/4)^2*(theta-3/4)^2-1");
        let seed = LevelPoint::at(&land.func, 0.25).unwrap();
        let b = trace_half(land, seed, Side::Left, (0.0, 0.5), 1e-3, Direction::Backward).unwrap();
        check_residuals(&b);
        for (t, x) in b.tau.iter().zip(&b.values) {
            let want = 0.5 - (1.0 + (PI * t).cos()).sqrt() / 4.0;
            assert!((x - want).abs() < 1e-9, "tau {t}: {x} vs {want}");
        }
        assert_eq!(b.low_end, Terminal::RanOut);
    }

    #[test]
    fn fold_stops_a_branch() {
        // f only reaches down to 0.7
        let land = angular("0.9 + 0.2*sin(2*pi*theta)");
        let seed = crate::atlas::scan_levels(&land.func, 1.0, ScanDomain::Circle, 2048)
            .unwrap()
            .points[0];
        let b = trace_on(land, seed, Side::Transverse, (-0.5, 0.5), 1e-3).unwrap();
        check_residuals(&b);
        let want = (0.7f64).acos() / TAU;
        match b.high_end {
            Terminal::HitExtremum { tau, continuable: false, .. } => assert!((tau - want).abs() < 1e-12),
            t => panic!("{t:?}"),
        }
        assert!(b.d_values.last().unwrap().is_infinite());
    }

    #[test]
    fn implicit_derivatives_match_differences() {
        let land = radial("exp(r)*sin(2*pi*r)", 10.0);
        let seed = crate::atlas::scan_levels(&land.func, 0.0, ScanDomain::Interval { lo: 0.0, hi: 10.0 }, 2048)
            .unwrap()
            .points
            .into_iter()
            .find(|p| (p.location - 3.5).abs() < 1e-6)
            .unwrap();
        let b = trace_on(land, seed, Side::Transverse, (0.0, 1.0), 1e-3).unwrap();
        for i in 1..b.len() - 1 {
            let fd = (b.values[i + 1] - b.values[i - 1]) / (b.tau[i + 1] - b.tau[i - 1]);
            assert!((fd - b.d_values[i]).abs() < 1e-3 * (1.0 + fd.abs()), "{i}");
        }
    }

    #[test]
    fn value_at_matches_equation() {
        let land = radial("2*pi*r*(r-1)", 10.0);
        let seed = LevelPoint::at(&land.func, 1.0).unwrap();
        let b = trace_on(land, seed, Side::Transverse, (0.0, 1.0), 1e-2).unwrap();
        for t in [0.0123, 0.2499, 0.5, 0.777] {
            let r = b.value_at(t).unwrap();
            assert!((r - (1.0 - sin_cos_turns(t).0)).abs() < 1e-12);
        }
        assert_eq!(b.value_at(1.5), Err(BranchError::OutOfRange(1.5)));
    }

    #[test]
    fn seed_errors() {
        let land = radial("2*pi*r*(r-1)", 10.0);
        let seed = LevelPoint::at(&land.func, 0.7).unwrap();
        assert!(matches!(
            trace_on(land.clone(), seed, Side::Transverse, (0.0, 1.0), 1e-3),
            Err(BranchError::SeedNotOnLevel { .. })
        ));
        let seed = LevelPoint::at(&land.func, 1.0).unwrap();
        assert!(matches!(
            trace_on(land.clone(), seed, Side::Left, (0.0, 1.0), 1e-3),
            Err(BranchError::SideMismatch { .. })
        ));
        assert_eq!(
            trace_on(land, seed, Side::Transverse, (0.0, 1.0), 0.1).unwrap_err(),
            BranchError::BadStep(0.1)
        );
    }
}
