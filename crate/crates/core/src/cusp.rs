//! Singular points of the curve `γ(τ) = r e^{2πi(t + τ)}`.
//!
//! With `E = e^{2πi(t+τ)}` and `B = r′ + 2πi r (t′ + 1)`:
//! `γ′ = B E` and `γ″ = (B′ + 2πi (t′ + 1) B) E`, where
//! `B′ = r″ + 2πi (r′ (t′ + 1) + r t″)`.
//! `γ′` vanishes exactly when `r = 0` and `r′ = 0`, or when `r′ = 0` and
//! `t′ = −1`.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::branch::{BranchError, DelayFamily, R_FLOOR};
use crate::field::PlanarPoint;
use crate::roots::golden_min;

/// Relative speed below which a sample is treated as singular.
pub const SPEED_TOL_REL: f64 = 1e-4;
pub const ANGLE_TOL: f64 = 1e-3;
/// Relative tolerance on `f′ = ±2π`.
pub const SLOPE_TOL: f64 = 1e-6;
pub const MIN_SAMPLES: usize = 32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CuspError {
    #[error(transparent)]
    Branch(#[from] BranchError),
    #[error("family has {0} samples, at least {MIN_SAMPLES} are needed")]
    TooFewSamples(usize),
    #[error("singular point at tau = {tau} satisfies neither cusp condition")]
    UnclassifiedSingularity { tau: f64, records: Vec<CuspRecord> },
    #[error("speed {speed} at tau = {tau} is above the singular threshold {tol}")]
    NotACusp { tau: f64, speed: f64, tol: f64 },
    #[error("second derivative vanishes at tau = {0}")]
    FlatCusp(f64),
    #[error("count check needs a closed family")]
    NotACircleFamily,
    #[error("cusp count property violated: {0}")]
    PropertyViolation(String),
}

impl From<crate::expr::ExprError> for CuspError {
    fn from(e: crate::expr::ExprError) -> Self {
        CuspError::Branch(e.into())
    }
}

pub type Result<T, E = CuspError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CuspCondition {
    /// The family passes through the origin.
    RadiusZero,
    /// `f′(t) = 2π` at `τ ∈ 1/4 + ℤ`.
    AngularSlope2Pi,
    /// `f′(t) = −2π` at `τ ∈ 3/4 + ℤ`.
    AngularSlopeMinus2Pi,
    Unclassified,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CuspRecord {
    pub tau_star: f64,
    pub condition: CuspCondition,
    pub tangent_in: PlanarPoint,
    pub tangent_out: PlanarPoint,
    pub reversal_angle: f64,
    pub second_deriv_norm: f64,
}

/// Position, velocity and acceleration of `γ` at `tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveJet {
    pub point: PlanarPoint,
    pub velocity: PlanarPoint,
    pub acceleration: PlanarPoint,
}

pub fn curve_jet(family: &DelayFamily, tau: f64) -> Result<CurveJet> {
    let (a, r) = (&family.angular, &family.radial);
    let t = a.value_at(tau)?;
    let rv = r.value_at(tau)?;
    let t1 = a.derivative_at(tau)?;
    let r1 = r.derivative_at(tau)?;
    let e = PlanarPoint::from_polar(1.0, t + tau);
    let w = TAU * (t1 + 1.0);
    let b = PlanarPoint::new(r1, rv * w);
    let velocity = b.cmul(e);
    let acceleration = if velocity.is_finite() {
        let t2 = a.second_derivative_at(tau, t, t1)?;
        let r2 = r.second_derivative_at(tau, rv, r1)?;
        let b1 = PlanarPoint::new(r2, TAU * (r1 * (t1 + 1.0) + rv * t2));
        (b1 + PlanarPoint::new(0.0, w).cmul(b)).cmul(e)
    } else {
        PlanarPoint::new(f64::NAN, f64::NAN)
    };
    Ok(CurveJet {
        point: rv * e,
        velocity,
        acceleration,
    })
}

pub fn speed_at(family: &DelayFamily, tau: f64) -> Result<f64> {
    Ok(curve_jet(family, tau)?.velocity.norm())
}

/// Speeds at the samples; non-finite where a branch folds.
pub fn sample_speeds(family: &DelayFamily) -> Vec<f64> {
    let (a, r) = (&family.angular, &family.radial);
    (0..family.len())
        .map(|i| {
            let w = TAU * (a.d_values[i] + 1.0);
            PlanarPoint::new(r.d_values[i], r.values[i] * w).norm()
        })
        .collect()
}

pub fn speed_tol(family: &DelayFamily) -> f64 {
    let max = sample_speeds(family)
        .into_iter()
        .filter(|s| s.is_finite())
        .fold(0.0, f64::max);
    SPEED_TOL_REL * max
}

fn unit(p: PlanarPoint) -> PlanarPoint {
    (1.0 / p.norm()) * p
}

fn angle_between(a: PlanarPoint, b: PlanarPoint) -> f64 {
    a.cross(b).abs().atan2(a.dot(b))
}

/// The angle between the tangents on both sides of `tau_star`, extrapolated
/// to zero offset, and `γ″(τ*)`.
pub fn certify_reversal(family: &DelayFamily, tau_star: f64) -> Result<(f64, PlanarPoint)> {
    let tol = speed_tol(family);
    let jet = curve_jet(family, tau_star)?;
    let speed = jet.velocity.norm();
    if !(speed <= tol) {
        return Err(CuspError::NotACusp { tau: tau_star, speed, tol });
    }
    let (angle, _, _) = reversal(family, tau_star)?;
    if !(jet.acceleration.norm() > 0.0) {
        return Err(CuspError::FlatCusp(tau_star));
    }
    Ok((angle, jet.acceleration))
}

fn reversal(family: &DelayFamily, tau_star: f64) -> Result<(f64, PlanarPoint, PlanarPoint)> {
    let h = family.angular.dtau;
    let tangents = |eps: f64| -> Result<(PlanarPoint, PlanarPoint)> {
        let tin = unit(curve_jet(family, tau_star - eps)?.velocity);
        let tout = unit(curve_jet(family, tau_star + eps)?.velocity);
        Ok((tin, tout))
    };
    let (i4, o4) = tangents(4.0 * h)?;
    let (i8, o8) = tangents(8.0 * h)?;
    let angle = 2.0 * angle_between(i4, o4) - angle_between(i8, o8);
    Ok((angle, i4, o4))
}

fn classify(family: &DelayFamily, tau: f64) -> Result<CuspCondition> {
    let r = family.radial.value_at(tau)?;
    if r < R_FLOOR {
        return Ok(CuspCondition::RadiusZero);
    }
    let t = family.angular.value_at(tau)?;
    let fp = family.angular.landscape.func.jet2(t)?.d1;
    Ok(if (fp - TAU).abs() <= SLOPE_TOL * TAU {
        CuspCondition::AngularSlope2Pi
    } else if (fp + TAU).abs() <= SLOPE_TOL * TAU {
        CuspCondition::AngularSlopeMinus2Pi
    } else {
        CuspCondition::Unclassified
    })
}

/// Find, refine, classify and certify every singular point of the family.
pub fn detect_cusps(family: &DelayFamily) -> Result<Vec<CuspRecord>> {
    let n = family.len();
    if n < MIN_SAMPLES {
        return Err(CuspError::TooFewSamples(n));
    }
    let tau = family.tau();
    let h = family.angular.dtau;
    let speeds = sample_speeds(family);
    let tol = speed_tol(family);
    let (lo, hi) = (tau[0] + 8.0 * h, tau[n - 1] - 8.0 * h);

    // runs of consecutive slow samples
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for (i, s) in speeds.iter().enumerate() {
        if *s < tol {
            match runs.last_mut() {
                Some((_, end)) if *end + 1 == i => *end = i,
                _ => runs.push((i, i)),
            }
        }
    }

    let mut records = Vec::new();
    let mut unclassified = None;
    for (a, b) in runs {
        let k = (a..=b)
            .min_by(|x, y| speeds[*x].total_cmp(&speeds[*y]))
            .expect("non-empty run");
        let (l, r) = (tau[k.saturating_sub(1)], tau[(k + 1).min(n - 1)]);
        let mut star = golden_min(|s| speed_at(family, s), l, r, 1e-12)?;
        // prefer an exact quarter turn when it is at least as slow
        let q = 0.25 + ((star - 0.25) * 2.0).round() / 2.0;
        if (q - star).abs() <= 2.0 * h && q >= tau[0] && q <= tau[n - 1] {
            if speed_at(family, q)? <= speed_at(family, star)? {
                star = q;
            }
        }
        if star < lo || star > hi {
            continue;
        }
        let condition = classify(family, star)?;
        let jet = curve_jet(family, star)?;
        let (angle, tin, tout) = reversal(family, star)?;
        let rec = CuspRecord {
            tau_star: star,
            condition,
            tangent_in: tin,
            tangent_out: tout,
            reversal_angle: angle,
            second_deriv_norm: jet.acceleration.norm(),
        };
        if condition == CuspCondition::Unclassified && unclassified.is_none() {
            unclassified = Some(star);
        }
        records.push(rec);
    }
    if let Some(tau) = unclassified {
        return Err(CuspError::UnclassifiedSingularity { tau, records });
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountReport {
    /// Distinct cusps modulo the family period.
    pub count: usize,
    pub radius_zero: usize,
    pub angular_slope: usize,
    pub taus: Vec<f64>,
}

/// Check that a closed smooth family has at most two cusps, one of each
/// condition when there are two.
pub fn count_check(family: &DelayFamily) -> Result<CountReport> {
    let Some(period) = family.period.filter(|_| family.is_circle_family) else {
        return Err(CuspError::NotACircleFamily);
    };
    let p = period as f64;
    let mut distinct: Vec<CuspRecord> = Vec::new();
    for c in &family.cusps {
        let same = distinct.iter().any(|d| {
            let x = (d.tau_star - c.tau_star).rem_euclid(p);
            x.min(p - x) < 4.0 * family.angular.dtau
        });
        if !same {
            distinct.push(*c);
        }
    }
    let radius_zero = distinct.iter().filter(|c| c.condition == CuspCondition::RadiusZero).count();
    let angular_slope = distinct
        .iter()
        .filter(|c| {
            matches!(
                c.condition,
                CuspCondition::AngularSlope2Pi | CuspCondition::AngularSlopeMinus2Pi
            )
        })
        .count();
    let report = CountReport {
        count: distinct.len(),
        radius_zero,
        angular_slope,
        taus: distinct.iter().map(|c| c.tau_star).collect(),
    };
    if period == 1 {
        if report.count > 2 || (report.count == 2 && (radius_zero != 1 || angular_slope != 1)) {
            return Err(CuspError::PropertyViolation(format!("{report:?} in family {}", family.label)));
        }
    }
    Ok(report)
}

/// `|angle − π|` for a record.
pub fn reversal_error(rec: &CuspRecord) -> f64 {
    (rec.reversal_angle - PI).abs()
}
