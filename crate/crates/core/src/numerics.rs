//! Small numerical kernels shared by the solvers: composite Simpson
//! quadrature and a bracketed bisection/secant root finder.

use crate::error::{Error, Result};

/// Composite Simpson rule on `panels` uniform panels over `[a, b]`.
/// `panels` is rounded up to the next even number.
pub fn simpson<F>(f: F, a: f64, b: f64, panels: usize) -> f64
where
    F: Fn(f64) -> f64,
{
    try_simpson(|s| Ok(f(s)), a, b, panels).expect("infallible integrand")
}

/// Fallible variant of [`simpson`]; the first integrand error aborts.
pub fn try_simpson<F>(f: F, a: f64, b: f64, panels: usize) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    if a == b {
        return Ok(0.0);
    }
    let n = even_panels(panels);
    let h = (b - a) / n as f64;
    let mut acc = f(a)? + f(b)?;
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h)?;
    }
    Ok(acc * h / 3.0)
}

/// Simpson nodes and weights for `[a, b]`, for callers that reuse the
/// same rule against many integrands.
pub fn simpson_rule(a: f64, b: f64, panels: usize) -> Vec<(f64, f64)> {
    let n = even_panels(panels);
    let h = (b - a) / n as f64;
    (0..=n)
        .map(|i| {
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            (a + i as f64 * h, w * h / 3.0)
        })
        .collect()
}

fn even_panels(panels: usize) -> usize {
    let n = panels.max(2);
    n + n % 2
}

/// Tolerances for [`find_root`].
#[derive(Debug, Clone, Copy)]
pub struct RootOptions {
    pub x_tol: f64,
    pub max_iter: usize,
}

impl Default for RootOptions {
    fn default() -> Self {
        Self {
            x_tol: 1e-12,
            max_iter: 200,
        }
    }
}

/// Locates a root of `f` inside `[lo, hi]`, which must bracket a sign
/// change. Secant steps are taken when they land inside the bracket and
/// shrink it fast enough; otherwise the step falls back to bisection.
pub fn find_root<F>(f: F, lo: f64, hi: f64, what: &'static str, opts: RootOptions) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    if !(fa.is_finite() && fb.is_finite()) || fa.signum() == fb.signum() && fa != 0.0 && fb != 0.0 {
        return Err(Error::NumericalBracket {
            what,
            lo,
            hi,
            f_lo: fa,
            f_hi: fb,
        });
    }
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    let mut bisect_next = false;
    for _ in 0..opts.max_iter {
        let width = b - a;
        if width <= opts.x_tol {
            break;
        }
        let secant = b - fb * (b - a) / (fb - fa);
        let x = if !bisect_next && secant > a && secant < b {
            secant
        } else {
            0.5 * (a + b)
        };
        if x <= a || x >= b {
            // bracket exhausted at floating-point resolution
            break;
        }
        let fx = f(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if fx.signum() == fa.signum() {
            a = x;
            fa = fx;
        } else {
            b = x;
            fb = fx;
        }
        bisect_next = (b - a) > 0.5 * width;
    }
    Ok(if fa.abs() < fb.abs() { a } else { b })
}
