//! Bracketing scalar root finder (Brent's method).

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root<T> {
    pub x: T,
    pub fx: T,
    /// Final bracket, sorted.
    pub bracket: (T, T),
    pub iterations: usize,
}

/// Finds a zero of `f` in `[a, b]` given `f(a)` and `f(b)` of opposite sign.
///
/// Stops when half the bracket is below `2 eps |x| + tol(x) / 2`.
pub fn brent<T, F, G>(
    mut f: F,
    mut a: T,
    mut b: T,
    mut fa: T,
    mut fb: T,
    tol: G,
    max_iter: usize,
) -> Result<Root<T>>
where
    T: Real,
    F: FnMut(T) -> Result<T>,
    G: Fn(T) -> T,
{
    if fa == T::zero() {
        return Ok(Root { x: a, fx: fa, bracket: (a, a), iterations: 0 });
    }
    if fb == T::zero() {
        return Ok(Root { x: b, fx: fb, bracket: (b, b), iterations: 0 });
    }
    if (fa > T::zero()) == (fb > T::zero()) {
        return Err(Error::InvalidInput(format!(
            "root not bracketed: f({a}) = {fa:e}, f({b}) = {fb:e}"
        )));
    }
    let two = T::lit(2.0);
    let three = T::lit(3.0);
    let half = T::lit(0.5);
    let eps = T::epsilon();

    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for iter in 1..=max_iter {
        if (fb > T::zero()) == (fc > T::zero()) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = two * eps * b.abs() + half * tol(b);
        let xm = half * (c - b);
        if xm.abs() <= tol1 || fb == T::zero() {
            let bracket = if b < c { (b, c) } else { (c, b) };
            return Ok(Root { x: b, fx: fb, bracket, iterations: iter });
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = two * xm * s;
                q = T::one() - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (two * xm * qq * (qq - r) - (b - a) * (r - T::one()));
                q = (qq - T::one()) * (r - T::one()) * (s - T::one());
            }
            if p > T::zero() {
                q = -q;
            }
            p = p.abs();
            if two * p < (three * xm * q - (tol1 * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b)?;
        if !fb.is_finite() {
            return Err(Error::NonFinite(format!("function value at {b}")));
        }
    }
    Err(Error::NoConvergence(format!("Brent iteration exceeded {max_iter} steps")))
}
