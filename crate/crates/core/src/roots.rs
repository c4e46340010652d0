//! Scalar root finding and minimization on brackets.

const MAX_ITER: usize = 200;

fn collapsed(a: f64, b: f64) -> bool {
    (b - a).abs() <= 4.0 * f64::EPSILON * a.abs().max(b.abs()).max(1e-300)
}

/// Solve `h(x) = 0` on `[a, b]` given `h(a)` and `h(b)` of opposite sign (or
/// one of them zero). `h` returns `(value, derivative)`. Newton steps are
/// taken from `guess` and replaced by bisection whenever they leave the
/// bracket. Stops at `|h| <= tol` or when the bracket collapses.
pub fn newton_bisect<E>(
    mut h: impl FnMut(f64) -> Result<(f64, f64), E>,
    a: f64,
    b: f64,
    ha: f64,
    hb: f64,
    guess: f64,
    tol: f64,
) -> Result<f64, E> {
    if ha == 0.0 {
        return Ok(a);
    }
    if hb == 0.0 {
        return Ok(b);
    }
    if (ha < 0.0) == (hb < 0.0) {
        return Ok(if ha.abs() < hb.abs() { a } else { b });
    }
    // orient so that h(lo) < 0 < h(hi); lo may exceed hi
    let (mut lo, mut hi) = if ha < 0.0 { (a, b) } else { (b, a) };
    let inside = |x: f64, lo: f64, hi: f64| x > lo.min(hi) && x < lo.max(hi);
    let mut x = if inside(guess, lo, hi) { guess } else { 0.5 * (lo + hi) };
    let mut best = (f64::INFINITY, x);
    for _ in 0..MAX_ITER {
        let (hx, dx) = h(x)?;
        if hx.abs() < best.0 {
            best = (hx.abs(), x);
        }
        if hx == 0.0 {
            return Ok(x);
        }
        if hx.abs() <= tol {
            // one polishing step; Newton is quadratic this close
            let polished = x - hx / dx;
            if dx != 0.0 && polished.is_finite() && (polished - x).abs() <= (lo - hi).abs() {
                if h(polished)?.0.abs() <= hx.abs() {
                    return Ok(polished);
                }
            }
            return Ok(x);
        }
        if hx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if collapsed(lo, hi) {
            return Ok(best.1);
        }
        let newton = x - hx / dx;
        x = if dx != 0.0 && newton.is_finite() && inside(newton, lo, hi) {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok(best.1)
}

/// Locate a sign change of `h` on `[a, b]` by bisection to full precision.
pub fn bisect<E>(mut h: impl FnMut(f64) -> Result<f64, E>, mut a: f64, mut b: f64) -> Result<f64, E> {
    let mut ha = h(a)?;
    let hb = h(b)?;
    if ha == 0.0 {
        return Ok(a);
    }
    if hb == 0.0 {
        return Ok(b);
    }
    for _ in 0..MAX_ITER {
        let m = 0.5 * (a + b);
        if m <= a.min(b) || m >= a.max(b) {
            break;
        }
        let hm = h(m)?;
        if hm == 0.0 {
            return Ok(m);
        }
        if (hm < 0.0) == (ha < 0.0) {
            a = m;
            ha = hm;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

/// Golden-section minimization of `h` on `[a, b]`.
pub fn golden_min<E>(
    mut h: impl FnMut(f64) -> Result<f64, E>,
    mut a: f64,
    mut b: f64,
    tol: f64,
) -> Result<f64, E> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut hc = h(c)?;
    let mut hd = h(d)?;
    for _ in 0..MAX_ITER {
        if (b - a).abs() <= tol {
            break;
        }
        if hc < hd {
            b = d;
            d = c;
            hd = hc;
            c = b - inv_phi * (b - a);
            hc = h(c)?;
        } else {
            a = c;
            c = d;
            hc = hd;
            d = a + inv_phi * (b - a);
            hd = h(d)?;
        }
    }
    Ok(if hc < hd { c } else { d })
}
