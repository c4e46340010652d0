//! Level sets of `f` and `g̃`, their tangential contacts, and the 1-periodic
//! orbits `z(t) = ρ e^{2πi(α + t)}` they produce.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{ExprError, ScalarFunction};
use crate::field::FieldSpec;
use crate::roots::{bisect, newton_bisect};

pub const ROOT_TOL: f64 = 1e-12;
pub const DERIV_TOL: f64 = 1e-8;
pub const CONTACT_TOL: f64 = 1e-8;
pub const DEFAULT_N_GRID: usize = 2048;
/// Points closer than this are the same point.
pub const DEDUPE_TOL: f64 = 1e-9;
/// Radii below this are treated as the origin.
pub const MIN_RADIUS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AtlasError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("n_grid must be at least 16, got {0}")]
    GridTooSmall(usize),
    #[error("empty scan interval [{lo}, {hi}]")]
    EmptyDomain { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointKind {
    Transverse,
    LocalMax,
    LocalMin,
    Saddle,
}

impl PointKind {
    pub fn from_derivatives(d1: f64, d2: f64) -> Self {
        if d1.abs() > DERIV_TOL {
            PointKind::Transverse
        } else if d2 < -DERIV_TOL {
            PointKind::LocalMax
        } else if d2 > DERIV_TOL {
            PointKind::LocalMin
        } else {
            PointKind::Saddle
        }
    }

    pub fn is_contact(self) -> bool {
        self != PointKind::Transverse
    }
}

/// A point where a scalar function attains a level of interest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelPoint {
    pub location: f64,
    /// The value actually attained at `location`.
    pub level: f64,
    pub kind: PointKind,
    pub d1: f64,
    pub d2: f64,
}

impl LevelPoint {
    pub fn at(func: &ScalarFunction, location: f64) -> Result<Self, ExprError> {
        let j = func.jet2(location)?;
        Ok(LevelPoint {
            location,
            level: j.value,
            kind: PointKind::from_derivatives(j.d1, j.d2),
            d1: j.d1,
            d2: j.d2,
        })
    }
}

/// Where a scan runs. `Circle` is `ℝ/ℤ` with representatives in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ScanDomain {
    Circle,
    Interval { lo: f64, hi: f64 },
}

impl ScanDomain {
    fn bounds(self) -> (f64, f64) {
        match self {
            ScanDomain::Circle => (0.0, 1.0),
            ScanDomain::Interval { lo, hi } => (lo, hi),
        }
    }

    pub fn length(self) -> f64 {
        let (lo, hi) = self.bounds();
        hi - lo
    }

    fn canonical(self, x: f64) -> f64 {
        match self {
            ScanDomain::Circle => {
                let y = x.rem_euclid(1.0);
                if y >= 1.0 {
                    0.0
                } else {
                    y
                }
            }
            ScanDomain::Interval { .. } => x,
        }
    }

    fn distance(self, a: f64, b: f64) -> f64 {
        match self {
            ScanDomain::Circle => {
                let d = (a - b).rem_euclid(1.0);
                d.min(1.0 - d)
            }
            ScanDomain::Interval { .. } => (a - b).abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ScanWarning {
    /// Two results closer than one grid cell; the grid may have merged roots.
    GridTooCoarse { near: f64, spacing: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelScan {
    pub points: Vec<LevelPoint>,
    pub warnings: Vec<ScanWarning>,
}

struct Grid {
    x: Vec<f64>,
    value: Vec<f64>,
    slope: Vec<f64>,
    spacing: f64,
}

fn sample(func: &ScalarFunction, domain: ScanDomain, n_grid: usize) -> Result<Grid, AtlasError> {
    if n_grid < 16 {
        return Err(AtlasError::GridTooSmall(n_grid));
    }
    let (lo, hi) = domain.bounds();
    if !(hi > lo) {
        return Err(AtlasError::EmptyDomain { lo, hi });
    }
    let spacing = (hi - lo) / n_grid as f64;
    let mut g = Grid {
        x: Vec::with_capacity(n_grid + 1),
        value: Vec::with_capacity(n_grid + 1),
        slope: Vec::with_capacity(n_grid + 1),
        spacing,
    };
    for i in 0..=n_grid {
        let x = if i == n_grid { hi } else { lo + i as f64 * spacing };
        // on the circle the last node is the first one again
        let j = if i == n_grid && domain == ScanDomain::Circle {
            func.jet2(lo)?
        } else {
            func.jet2(x)?
        };
        g.x.push(x);
        g.value.push(j.value);
        g.slope.push(j.d1);
    }
    Ok(g)
}

fn sorted_dedupe(domain: ScanDomain, mut pts: Vec<LevelPoint>) -> Vec<LevelPoint> {
    pts.sort_by(|a, b| a.location.total_cmp(&b.location));
    let mut out: Vec<LevelPoint> = Vec::with_capacity(pts.len());
    for p in pts {
        match out.last_mut() {
            Some(q) if domain.distance(p.location, q.location) < DEDUPE_TOL => {
                if p.kind.is_contact() && !q.kind.is_contact() {
                    *q = p;
                }
            }
            _ => out.push(p),
        }
    }
    if out.len() > 1 && domain == ScanDomain::Circle {
        let (first, last) = (out[0], out[out.len() - 1]);
        if domain.distance(first.location, last.location) < DEDUPE_TOL {
            if last.kind.is_contact() && !first.kind.is_contact() {
                out[0] = last;
            }
            out.pop();
        }
    }
    out
}

/// Critical points of `func` on `domain`: sign changes and exact zeros of the
/// derivative, refined by bisection. Returned as level points whose `level` is
/// the critical value.
pub fn critical_points(
    func: &ScalarFunction,
    domain: ScanDomain,
    n_grid: usize,
) -> Result<Vec<LevelPoint>, AtlasError> {
    let g = sample(func, domain, n_grid)?;
    critical_from_grid(func, domain, &g)
}

fn critical_from_grid(
    func: &ScalarFunction,
    domain: ScanDomain,
    g: &Grid,
) -> Result<Vec<LevelPoint>, AtlasError> {
    let n = g.x.len() - 1;
    let mut found = Vec::new();
    for i in 0..=n {
        if g.slope[i] == 0.0 && !(i == n && domain == ScanDomain::Circle) {
            found.push(g.x[i]);
        }
        if i < n && g.slope[i] * g.slope[i + 1] < 0.0 {
            let c = bisect(|x| func.jet2(x).map(|j| j.d1), g.x[i], g.x[i + 1])?;
            found.push(c);
        }
    }
    let mut pts = Vec::with_capacity(found.len());
    for c in found {
        let c = domain.canonical(c);
        pts.push(LevelPoint::at(func, c)?);
    }
    Ok(sorted_dedupe(domain, pts))
}

/// All points of `domain` where `func` attains `level`: simple roots by
/// bracketing plus safeguarded Newton, and tangential contacts from the
/// critical points.
pub fn scan_levels(
    func: &ScalarFunction,
    level: f64,
    domain: ScanDomain,
    n_grid: usize,
) -> Result<LevelScan, AtlasError> {
    let g = sample(func, domain, n_grid)?;
    let n = g.x.len() - 1;
    let h: Vec<f64> = g.value.iter().map(|v| v - level).collect();

    let contacts: Vec<LevelPoint> = critical_from_grid(func, domain, &g)?
        .into_iter()
        .filter(|c| (c.level - level).abs() <= CONTACT_TOL)
        .collect();

    let mut roots = Vec::new();
    for i in 0..=n {
        if h[i] == 0.0 && !(i == n && domain == ScanDomain::Circle) {
            roots.push(g.x[i]);
        }
        if i < n && h[i] * h[i + 1] < 0.0 {
            let guess = g.x[i] - h[i] * (g.x[i + 1] - g.x[i]) / (h[i + 1] - h[i]);
            let x = newton_bisect(
                |x| func.jet2(x).map(|j| (j.value - level, j.d1)),
                g.x[i],
                g.x[i + 1],
                h[i],
                h[i + 1],
                guess,
                ROOT_TOL,
            )?;
            roots.push(x);
        }
    }

    let mut pts = contacts.clone();
    for x in roots {
        let x = domain.canonical(x);
        // near a contact the bracket only resolves rounding noise of the double root
        if contacts
            .iter()
            .any(|c| domain.distance(c.location, x) <= g.spacing)
        {
            continue;
        }
        pts.push(LevelPoint::at(func, x)?);
    }
    let points = sorted_dedupe(domain, pts);

    let mut warnings = Vec::new();
    let m = points.len();
    let pairs = match domain {
        ScanDomain::Circle if m > 1 => m,
        _ => m.saturating_sub(1),
    };
    for k in 0..pairs {
        let (a, b) = (points[k], points[(k + 1) % m]);
        if domain.distance(a.location, b.location) < g.spacing {
            warnings.push(ScanWarning::GridTooCoarse {
                near: a.location,
                spacing: g.spacing,
            });
        }
    }
    Ok(LevelScan { points, warnings })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Degeneracy {
    /// `f′(α) = 0`: the Floquet multiplier `e^{-f′(α)}` equals 1.
    AngularSlope { f_prime: f64 },
    /// `g′(ρ) = 0`: the Floquet multiplier `e^{-g′(ρ)}` equals 1.
    RadialSlope { g_prime: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OrbitStatus {
    NonDegenerate,
    Degenerate(Vec<Degeneracy>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitClassification {
    pub alpha: LevelPoint,
    pub rho: LevelPoint,
    pub status: OrbitStatus,
}

impl OrbitClassification {
    pub fn is_degenerate(&self) -> bool {
        matches!(self.status, OrbitStatus::Degenerate(_))
    }
}

/// Decide degeneracy of `z(t) = ρ e^{2πi(α + t)}` from `f′(α)` and `g′(ρ)`.
pub fn classify_orbit(
    spec: &FieldSpec,
    alpha: LevelPoint,
    rho: LevelPoint,
) -> Result<OrbitClassification, AtlasError> {
    let f_prime = spec.f.jet2(alpha.location)?.d1;
    let g_prime = spec.g.jet2(rho.location)?.d1;
    let mut reasons = Vec::new();
    if f_prime.abs() <= DERIV_TOL {
        reasons.push(Degeneracy::AngularSlope { f_prime });
    }
    if g_prime.abs() <= DERIV_TOL {
        reasons.push(Degeneracy::RadialSlope { g_prime });
    }
    let status = if reasons.is_empty() {
        OrbitStatus::NonDegenerate
    } else {
        OrbitStatus::Degenerate(reasons)
    };
    Ok(OrbitClassification { alpha, rho, status })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PeriodicOrbit {
    /// `z ≡ 0`.
    Constant,
    Rotating(OrbitClassification),
}

/// The scan domain of the angular function: the circle when `f` is periodic,
/// else `[0, 1]`.
pub fn angular_scan_domain(spec: &FieldSpec) -> ScanDomain {
    match spec.angular_domain() {
        crate::field::AngularDomain::Circle => ScanDomain::Circle,
        crate::field::AngularDomain::UnitInterval => ScanDomain::Interval { lo: 0.0, hi: 1.0 },
    }
}

pub fn radial_scan_domain(spec: &FieldSpec) -> ScanDomain {
    ScanDomain::Interval {
        lo: 0.0,
        hi: spec.r_max,
    }
}

/// `α ∈ f⁻¹(1)` and `ρ ∈ g̃⁻¹(0)` with `ρ > 0`.
pub fn orbit_seeds(
    spec: &FieldSpec,
    n_grid: usize,
) -> Result<(LevelScan, LevelScan), AtlasError> {
    let (alphas, rhos) = rayon::join(
        || scan_levels(&spec.f, 1.0, angular_scan_domain(spec), n_grid),
        || scan_levels(&spec.gt, 0.0, radial_scan_domain(spec), n_grid),
    );
    let alphas = alphas?;
    let mut rhos = rhos?;
    rhos.points.retain(|p| p.location >= MIN_RADIUS);
    Ok((alphas, rhos))
}

/// Every 1-periodic orbit of the ODE: the constant one and one rotating orbit
/// per pair `(α, ρ)`.
pub fn enumerate_periodic_orbits(spec: &FieldSpec) -> Result<Vec<PeriodicOrbit>, AtlasError> {
    let (alphas, rhos) = orbit_seeds(spec, DEFAULT_N_GRID)?;
    let mut out = vec![PeriodicOrbit::Constant];
    for a in &alphas.points {
        for r in &rhos.points {
            out.push(PeriodicOrbit::Rotating(classify_orbit(spec, *a, *r)?));
        }
    }
    Ok(out)
}
