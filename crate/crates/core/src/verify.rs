//! Independent checks of traced families: the delay equation residual of the
//! closed-form orbits, a method-of-steps integration of
//! `ż(t) = X_t(z(t − τ))`, and the time-1 fundamental system of the ODE
//! orbits.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::branch::{BranchError, DelayFamily};
use crate::expr::ExprError;
use crate::field::{eval_field, eval_field_polar, FieldError, FieldSpec, PlanarPoint};

pub const RESIDUAL_GATE: f64 = 1e-8;
pub const EIG_TOL: f64 = 1e-8;
/// Relative agreement of the integrated and analytic monodromy.
pub const MONODROMY_TOL: f64 = 1e-6;
/// Orbits with `|f′(α)|` or `|g′(ρ)|` beyond this are not integrated.
pub const MAX_EXPONENT: f64 = 300.0;
const ORBIT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Branch(#[from] BranchError),
    #[error("step {h} exceeds tau/8 = {}", tau / 8.0)]
    StepTooLarge { h: f64, tau: f64 },
    #[error("history does not cover [{}, 0]", -tau)]
    HistoryGap { tau: f64 },
    #[error("delay must be positive, got {0}")]
    NonPositiveDelay(f64),
    #[error("(alpha, rho) = ({alpha}, {rho}) is not a periodic orbit: f(alpha) = {f_alpha}, g(rho) = {g_rho}")]
    NotAnOrbit { alpha: f64, rho: f64, f_alpha: f64, g_rho: f64 },
}

impl From<ExprError> for VerifyError {
    fn from(e: ExprError) -> Self {
        VerifyError::Field(e.into())
    }
}

pub type Result<T, E = VerifyError> = std::result::Result<T, E>;

/// The closed-form delay orbit of parameter `tau`, as a function of time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedOrbit {
    pub radius: f64,
    /// Phase in turns at time 0.
    pub phase: f64,
}

impl ClosedOrbit {
    pub fn of_family(family: &DelayFamily, tau: f64) -> Result<Self> {
        let (t, r) = family.state_at(tau)?;
        Ok(ClosedOrbit { radius: r, phase: t + tau })
    }

    pub fn at(&self, t: f64) -> PlanarPoint {
        PlanarPoint::from_polar(self.radius, self.phase + t)
    }

    pub fn velocity(&self, t: f64) -> PlanarPoint {
        TAU * self.at(t).rotate_quarter()
    }
}

/// `max_j |ż(t_j) − X_{t_j}(z(t_j − τ))|` over `n_check` times in `[0, 1)`.
pub fn dde_residual(spec: &FieldSpec, family: &DelayFamily, tau: f64, n_check: usize) -> Result<f64> {
    let orbit = ClosedOrbit::of_family(family, tau)?;
    orbit_residual(spec, &orbit, tau, n_check)
}

pub fn orbit_residual(spec: &FieldSpec, orbit: &ClosedOrbit, tau: f64, n_check: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for j in 0..n_check.max(1) {
        let t = j as f64 / n_check.max(1) as f64;
        let x = eval_field(spec, t, orbit.at(t - tau))?;
        worst = worst.max((orbit.velocity(t) - x).norm());
    }
    Ok(worst)
}

/// Samples with derivatives and a cubic Hermite interpolant between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t_grid: Vec<f64>,
    pub points: Vec<PlanarPoint>,
    pub velocities: Vec<PlanarPoint>,
}

impl Trajectory {
    pub fn from_fn(t_grid: Vec<f64>, f: impl Fn(f64) -> (PlanarPoint, PlanarPoint)) -> Self {
        let (points, velocities) = t_grid.iter().map(|t| f(*t)).unzip();
        Trajectory { t_grid, points, velocities }
    }

    /// The closed-form orbit on `[−τ, 0]` with `n` equal steps.
    pub fn history(orbit: &ClosedOrbit, tau: f64, n: usize) -> Self {
        let grid = (0..=n).map(|k| -tau + tau * k as f64 / n as f64).collect();
        Trajectory::from_fn(grid, |t| (orbit.at(t), orbit.velocity(t)))
    }

    pub fn span(&self) -> (f64, f64) {
        (self.t_grid[0], self.t_grid[self.t_grid.len() - 1])
    }

    /// Hermite interpolation; `None` outside the grid.
    pub fn eval(&self, t: f64) -> Option<PlanarPoint> {
        let (a, b) = self.span();
        let slack = 1e-12 * (1.0 + b.abs().max(a.abs()));
        if t < a - slack || t > b + slack {
            return None;
        }
        let n = self.t_grid.len();
        let k = self.t_grid.partition_point(|x| *x <= t).clamp(1, n - 1) - 1;
        Some(hermite(
            (self.t_grid[k], self.points[k], self.velocities[k]),
            (self.t_grid[k + 1], self.points[k + 1], self.velocities[k + 1]),
            t,
        ))
    }
}

fn hermite(
    (t0, p0, v0): (f64, PlanarPoint, PlanarPoint),
    (t1, p1, v1): (f64, PlanarPoint, PlanarPoint),
    t: f64,
) -> PlanarPoint {
    let h = t1 - t0;
    let s = (t - t0) / h;
    let (s2, s3) = (s * s, s * s * s);
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    h00 * p0 + (h10 * h) * v0 + h01 * p1 + (h11 * h) * v1
}

/// Integrate `ż(t) = X_t(z(t − τ))` on `[0, T]` by the method of steps.
///
/// The step is shrunk to `τ/n` with `n = ⌈τ/h⌉`, so delayed nodes fall on
/// earlier nodes; half steps read the Hermite interpolant. With a right-hand
/// side independent of `z(t)`, classical RK4 reduces to Simpson's rule.
/// The returned trajectory starts with the history nodes.
pub fn integrate_dde(
    spec: &FieldSpec,
    tau: f64,
    history: &Trajectory,
    t_end: f64,
    h: f64,
) -> Result<Trajectory> {
    if !(tau > 0.0) {
        return Err(VerifyError::NonPositiveDelay(tau));
    }
    if h > tau / 8.0 {
        return Err(VerifyError::StepTooLarge { h, tau });
    }
    let (a, b) = history.span();
    let slack = 1e-12 * (1.0 + tau);
    if a > -tau + slack || b < -slack {
        return Err(VerifyError::HistoryGap { tau });
    }
    let n = (tau / h).ceil() as usize;
    let step = tau / n as f64;
    let steps = (t_end / step).ceil() as usize;
    let node = |k: isize| k as f64 * step;

    let mut out = Trajectory {
        t_grid: Vec::with_capacity(n + steps + 1),
        points: Vec::with_capacity(n + steps + 1),
        velocities: Vec::with_capacity(n + steps + 1),
    };
    for j in 0..=n {
        let t = node(j as isize - n as isize);
        let p = history.eval(t).ok_or(VerifyError::HistoryGap { tau })?;
        out.t_grid.push(t);
        out.points.push(p);
    }
    // velocities of the history from its own interpolant
    for j in 0..=n {
        let t = out.t_grid[j];
        let e = 1e-6 * step;
        let v = match (history.eval(t - e), history.eval(t + e)) {
            (Some(l), Some(r)) => (1.0 / (2.0 * e)) * (r - l),
            _ => exact_velocity(history, t),
        };
        out.velocities.push(v);
    }
    // node k (k ≥ 0) sits at index k + n; its delayed node at index k
    let v0 = eval_field(spec, 0.0, out.points[0])?;
    out.velocities[n] = v0;
    for k in 0..steps {
        let t = node(k as isize);
        let i = k + n;
        let k1 = out.velocities[i];
        let mid = hermite(
            (out.t_grid[k], out.points[k], out.velocities[k]),
            (out.t_grid[k + 1], out.points[k + 1], out.velocities[k + 1]),
            out.t_grid[k] + 0.5 * step,
        );
        let k2 = eval_field(spec, t + 0.5 * step, mid)?;
        let t1 = node(k as isize + 1);
        let k4 = eval_field(spec, t1, out.points[k + 1])?;
        let z = out.points[i] + (step / 6.0) * (k1 + 4.0 * k2 + k4);
        out.t_grid.push(t1);
        out.points.push(z);
        out.velocities.push(k4);
    }
    Ok(out)
}

fn exact_velocity(history: &Trajectory, t: f64) -> PlanarPoint {
    let k = history
        .t_grid
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
        .map(|(k, _)| k)
        .unwrap_or(0);
    history.velocities[k]
}

/// Sup-norm deviation of an integrated trajectory from the closed form on
/// `[0, T]`.
pub fn deviation(traj: &Trajectory, orbit: &ClosedOrbit) -> f64 {
    traj.t_grid
        .iter()
        .zip(&traj.points)
        .filter(|(t, _)| **t >= 0.0)
        .map(|(t, p)| (*p - orbit.at(*t)).norm())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub tau: f64,
    pub t_end: f64,
    pub steps: Vec<f64>,
    pub errors: Vec<f64>,
    /// `log2(e_k / e_{k+1})` for consecutive halvings.
    pub orders: Vec<f64>,
}

impl ConvergenceReport {
    pub fn min_order(&self) -> f64 {
        self.orders.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Integrate the exact history at each step size and measure the error.
pub fn convergence_study(
    spec: &FieldSpec,
    orbit: &ClosedOrbit,
    tau: f64,
    t_end: f64,
    steps: &[f64],
) -> Result<ConvergenceReport> {
    let mut errors = Vec::with_capacity(steps.len());
    for &h in steps {
        let n = (tau / h).ceil() as usize;
        let hist = Trajectory::history(orbit, tau, n);
        let traj = integrate_dde(spec, tau, &hist, t_end, h)?;
        errors.push(deviation(&traj, orbit));
    }
    let orders = errors
        .windows(2)
        .zip(steps.windows(2))
        .map(|(e, h)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln())
        .collect();
    Ok(ConvergenceReport {
        tau,
        t_end,
        steps: steps.to_vec(),
        errors,
        orders,
    })
}

/// `|z(1) − z(0)|` after integrating the exact history with step `h`.
pub fn closure(spec: &FieldSpec, orbit: &ClosedOrbit, tau: f64, h: f64) -> Result<f64> {
    let n = (tau / h).ceil() as usize;
    let hist = Trajectory::history(orbit, tau, n);
    let traj = integrate_dde(spec, tau, &hist, 1.0, h)?;
    let z0 = traj.eval(0.0).expect("0 is a node");
    let z1 = traj.eval(1.0).ok_or(VerifyError::HistoryGap { tau })?;
    Ok((z1 - z0).norm())
}

pub type Matrix2 = [[f64; 2]; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonodromyReport {
    pub alpha: f64,
    pub rho: f64,
    pub y1: Matrix2,
    /// Real parts of the eigenvalues of `y1`.
    pub eigenvalues: (f64, f64),
    pub analytic: Matrix2,
    pub nondegenerate: bool,
    /// Largest entrywise deviation of `y1` from `analytic`, relative to
    /// `max(1, |analytic|)`; `None` when an exponent is out of range.
    pub deviation: Option<f64>,
}

impl MonodromyReport {
    pub fn agrees(&self) -> bool {
        self.deviation.is_some_and(|d| d <= MONODROMY_TOL)
    }
}

fn mat_mul(a: &Matrix2, b: &Matrix2) -> Matrix2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

fn mat_axpy(y: &Matrix2, s: f64, k: &Matrix2) -> Matrix2 {
    let mut c = *y;
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] += s * k[i][j];
        }
    }
    c
}

/// Jacobian of the polar field `(g(r), f(θ − t))` in `(r, θ)` by
/// Richardson-extrapolated central differences.
fn polar_jacobian(spec: &FieldSpec, t: f64, r: f64, theta: f64) -> Result<Matrix2> {
    let d = |h: f64, which: usize| -> Result<(f64, f64)> {
        let (rp, tp, rm, tm) = if which == 0 {
            (r + h, theta, r - h, theta)
        } else {
            (r, theta + h, r, theta - h)
        };
        let p = eval_field_polar(spec, t, rp, tp)?;
        let m = eval_field_polar(spec, t, rm, tm)?;
        Ok(((p.0 - m.0) / (2.0 * h), (p.1 - m.1) / (2.0 * h)))
    };
    let mut jac = [[0.0; 2]; 2];
    for which in 0..2 {
        let h = 1e-4 * if which == 0 { r.min(1.0) } else { 1.0 };
        let (a1, b1) = d(h, which)?;
        let (a2, b2) = d(h / 2.0, which)?;
        jac[0][which] = (4.0 * a2 - a1) / 3.0;
        jac[1][which] = (4.0 * b2 - b1) / 3.0;
    }
    Ok(jac)
}

fn eigenvalues(m: &Matrix2) -> (f64, f64) {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = tr * tr / 4.0 - det;
    if disc >= 0.0 {
        let s = disc.sqrt();
        (tr / 2.0 + s, tr / 2.0 - s)
    } else {
        (tr / 2.0, tr / 2.0)
    }
}

/// The time-1 fundamental system `Ẏ = A Y`, `Y(0) = 1`, with `A = −dXᵀ`
/// along `z(t) = ρ e^{2πi(α + t)}` in polar coordinates, integrated
/// numerically and compared with `diag(e^{−g′(ρ)}, e^{−f′(α)})`.
pub fn monodromy(spec: &FieldSpec, alpha: f64, rho: f64) -> Result<MonodromyReport> {
    let f_alpha = spec.f_on_circle(alpha)?;
    let g_rho = spec.g.eval(rho)?;
    if !(rho > 0.0) || (f_alpha - 1.0).abs() > ORBIT_TOL || g_rho.abs() > ORBIT_TOL * rho.max(1.0) {
        return Err(VerifyError::NotAnOrbit { alpha, rho, f_alpha, g_rho });
    }
    let fp = spec.f.jet2(alpha.rem_euclid(1.0))?.d1;
    let gp = spec.g.jet2(rho)?.d1;
    let analytic = [[(-gp).exp(), 0.0], [0.0, (-fp).exp()]];

    let a_of = |t: f64| -> Result<Matrix2> {
        let j = polar_jacobian(spec, t, rho, alpha + t)?;
        Ok([[-j[0][0], -j[1][0]], [-j[0][1], -j[1][1]]])
    };
    let nondegenerate = (analytic[0][0] - 1.0).abs() > EIG_TOL && (analytic[1][1] - 1.0).abs() > EIG_TOL;
    let scale = fp.abs().max(gp.abs());
    if scale > MAX_EXPONENT {
        // y(1) over- or underflows; nothing to compare
        return Ok(MonodromyReport {
            alpha,
            rho,
            y1: [[f64::NAN; 2]; 2],
            eigenvalues: (f64::NAN, f64::NAN),
            analytic,
            nondegenerate,
            deviation: None,
        });
    }
    let steps = 1000usize.max((200.0 * scale).ceil() as usize);
    let h = 1.0 / steps as f64;
    let mut y: Matrix2 = [[1.0, 0.0], [0.0, 1.0]];
    let mut a0 = a_of(0.0)?;
    for k in 0..steps {
        let t = k as f64 * h;
        let am = a_of(t + 0.5 * h)?;
        let a1 = a_of(t + h)?;
        let k1 = mat_mul(&a0, &y);
        let k2 = mat_mul(&am, &mat_axpy(&y, 0.5 * h, &k1));
        let k3 = mat_mul(&am, &mat_axpy(&y, 0.5 * h, &k2));
        let k4 = mat_mul(&a1, &mat_axpy(&y, h, &k3));
        for i in 0..2 {
            for j in 0..2 {
                y[i][j] += h / 6.0 * (k1[i][j] + 2.0 * k2[i][j] + 2.0 * k3[i][j] + k4[i][j]);
            }
        }
        a0 = a1;
    }
    let mut d: f64 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            d = d.max((y[i][j] - analytic[i][j]).abs() / analytic[i][j].abs().max(1.0));
        }
    }
    let deviation = Some(d);
    Ok(MonodromyReport {
        alpha,
        rho,
        y1: y,
        eigenvalues: eigenvalues(&y),
        analytic,
        nondegenerate,
        deviation,
    })
}
