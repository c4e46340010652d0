//! The planar vector field built from an angular function `f` and a radial
//! function `g`:
//!
//! `X_t(z) = g(|z|) z/|z| + f(arg(z)/2π - t) · 2πi z`, with `X_t(0) = 0`.
//!
//! Angles are measured in turns, `θ ∈ [0, 1)`, with the branch cut on the
//! positive x-axis.

use std::f64::consts::TAU;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{ExprError, ScalarFunction};

pub const DEFAULT_R_MAX: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("polar form needs r > 0, got {0}")]
    NonPositiveRadius(f64),
}

/// A point of the plane, also read as the complex number `x + iy`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanarPoint {
    pub x: f64,
    pub y: f64,
}

impl PlanarPoint {
    pub const ORIGIN: PlanarPoint = PlanarPoint { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        PlanarPoint { x, y }
    }

    /// `r · e^{2πi·turns}`.
    pub fn from_polar(r: f64, turns: f64) -> Self {
        let (s, c) = (TAU * turns).sin_cos();
        PlanarPoint { x: r * c, y: r * s }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Argument in turns, in `[0, 1)`.
    pub fn turns(self) -> f64 {
        let a = self.y.atan2(self.x) / TAU;
        let a = a.rem_euclid(1.0);
        if a >= 1.0 {
            0.0
        } else {
            a
        }
    }

    /// Multiplication by `i`.
    pub fn rotate_quarter(self) -> Self {
        PlanarPoint {
            x: -self.y,
            y: self.x,
        }
    }

    pub fn cmul(self, o: PlanarPoint) -> Self {
        PlanarPoint {
            x: self.x * o.x - self.y * o.y,
            y: self.x * o.y + self.y * o.x,
        }
    }

    pub fn dot(self, o: PlanarPoint) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: PlanarPoint) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for PlanarPoint {
    type Output = PlanarPoint;
    fn add(self, o: PlanarPoint) -> PlanarPoint {
        PlanarPoint::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for PlanarPoint {
    type Output = PlanarPoint;
    fn sub(self, o: PlanarPoint) -> PlanarPoint {
        PlanarPoint::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<PlanarPoint> for f64 {
    type Output = PlanarPoint;
    fn mul(self, p: PlanarPoint) -> PlanarPoint {
        PlanarPoint::new(self * p.x, self * p.y)
    }
}

/// Where the angular function lives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AngularDomain {
    /// `f` passed the periodicity check: a function on the circle.
    Circle,
    /// `f` is only meaningful on `[0, 1]`; the field reads it through
    /// `θ mod 1`.
    UnitInterval,
}

/// The pair `(f, g)` with the derived `g̃(r) = g(r)/r`.
#[derive(Debug, Clone)]
pub struct FieldSpec {
    pub f: ScalarFunction,
    pub g: ScalarFunction,
    pub gt: ScalarFunction,
    pub r_max: f64,
}

impl FieldSpec {
    /// Build from already parsed functions. Fails when `g(0) ≠ 0`.
    pub fn new(f: ScalarFunction, g: ScalarFunction, r_max: f64) -> Result<Self, FieldError> {
        let gt = g.g_tilde()?;
        Ok(FieldSpec { f, g, gt, r_max })
    }

    /// Parse `f(theta)` and `g(r)`; `f` is declared 1-periodic when it passes
    /// the sample check.
    pub fn parse(f: &str, g: &str, r_max: f64) -> Result<Self, FieldError> {
        let (f, _) = ScalarFunction::parse(f, "theta")?.with_period(1.0)?;
        let g = ScalarFunction::parse(g, "r")?;
        Self::new(f, g, r_max)
    }

    pub fn angular_domain(&self) -> AngularDomain {
        if self.f.period().is_some() {
            AngularDomain::Circle
        } else {
            AngularDomain::UnitInterval
        }
    }

    /// `f` read as a function on `S¹ = ℝ/ℤ`.
    pub fn f_on_circle(&self, theta: f64) -> Result<f64, ExprError> {
        self.f.eval(theta.rem_euclid(1.0))
    }

    pub fn eval(&self, t: f64, z: PlanarPoint) -> Result<PlanarPoint, FieldError> {
        eval_field(self, t, z)
    }
}

/// Cartesian evaluation of `X_t(z)`.
pub fn eval_field(spec: &FieldSpec, t: f64, z: PlanarPoint) -> Result<PlanarPoint, FieldError> {
    let r = z.norm();
    if r == 0.0 {
        return Ok(PlanarPoint::ORIGIN);
    }
    let radial = (spec.g.eval(r)? / r) * z;
    let angular = (spec.f_on_circle(z.turns() - t)? * TAU) * z.rotate_quarter();
    Ok(radial + angular)
}

/// Polar evaluation: `(dr/dt, dθ/dt) = (g(r), f(θ - t))`, θ in turns.
pub fn eval_field_polar(
    spec: &FieldSpec,
    t: f64,
    r: f64,
    theta: f64,
) -> Result<(f64, f64), FieldError> {
    if r <= 0.0 || r.is_nan() {
        return Err(FieldError::NonPositiveRadius(r));
    }
    Ok((spec.g.eval(r)?, spec.f_on_circle(theta - t)?))
}
