//! Adaptive Gauss–Legendre quadrature and Brent's root finder.

use crate::error::{Result, UqeError};
use std::sync::OnceLock;

/// Nodes per Gauss–Legendre panel.
pub const GL_NODES: usize = 64;

const MAX_DEPTH: usize = 40;

/// Nodes and weights of the n-point Gauss–Legendre rule on [-1, 1],
/// computed by Newton iteration on the Legendre polynomial.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(GL_NODES))
}

/// One 64-node Gauss–Legendre panel on [a, b].
pub fn gl_panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let (x, w) = rule();
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut s = 0.0;
    for (xi, wi) in x.iter().zip(w) {
        s += wi * f(mid + half * xi);
    }
    s * half
}

/// Integrate `f` over [a, b], starting from `panels` equal panels and
/// bisecting any panel whose estimate disagrees with the sum over its halves
/// by more than its share of `tol`.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    panels: usize,
    tol: f64,
) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(UqeError::QuadratureFailure(format!(
            "integration limits [{a}, {b}] are not finite"
        )));
    }
    if a == b {
        return Ok(0.0);
    }
    let panels = panels.max(1);
    let width = (b - a) / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let lo = a + k as f64 * width;
        let hi = if k + 1 == panels { b } else { lo + width };
        let whole = gl_panel(&f, lo, hi);
        total += refine(&f, lo, hi, whole, tol / panels as f64, 0)?;
    }
    if !total.is_finite() {
        return Err(UqeError::QuadratureFailure(format!(
            "non-finite integral over [{a}, {b}]"
        )));
    }
    Ok(total)
}

fn refine<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> Result<f64> {
    let mid = 0.5 * (a + b);
    let left = gl_panel(f, a, mid);
    let right = gl_panel(f, mid, b);
    let sum = left + right;
    let err = (sum - whole).abs();
    if err <= tol.max(1e-15 * sum.abs()) {
        return Ok(sum);
    }
    if depth >= MAX_DEPTH {
        return Err(UqeError::QuadratureFailure(format!(
            "no convergence on [{a}, {b}] (error estimate {err:.3e})"
        )));
    }
    Ok(refine(f, a, mid, left, 0.5 * tol, depth + 1)? + refine(f, mid, b, right, 0.5 * tol, depth + 1)?)
}

/// Brent's method for a root of `f` in [a, b]; `f(a)` and `f(b)` must
/// bracket zero.
pub fn brent<F: FnMut(f64) -> f64>(
    mut f: F,
    mut a: f64,
    mut b: f64,
    tol: f64,
    max_iter: usize,
) -> Result<f64> {
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(UqeError::QuadratureFailure(format!(
            "root not bracketed in [{a}, {b}] (f = {fa:.3e}, {fb:.3e})"
        )));
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
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
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
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
        fb = f(b);
    }
    Err(UqeError::QuadratureFailure(format!(
        "Brent iteration did not converge within {max_iter} steps"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(GL_NODES);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
        // x^126 integrates to 2/127 on [-1, 1]
        let s: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(126)).sum();
        assert!((s - 2.0 / 127.0).abs() < 1e-13);
        let (x5, w5) = gauss_legendre(5);
        let s: f64 = x5.iter().zip(&w5).map(|(xi, wi)| wi * xi.powi(8)).sum();
        assert!((s - 2.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn adaptive_handles_kinks() {
        let v = integrate_adaptive(|x: f64| x.abs(), -1.0, 2.0, 3, 1e-12).unwrap();
        assert!((v - 2.5).abs() < 1e-12);
        let v = integrate_adaptive(|x: f64| x.sqrt(), 0.0, 1.0, 1, 1e-10).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn brent_finds_roots() {
        let r = brent(|x| x * x - 2.0, 0.0, 2.0, 1e-14, 200).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-12);
        let r = brent(|x: f64| x.cos() - x, 0.0, 1.0, 1e-14, 200).unwrap();
        assert!((r - 0.739_085_133_215_160_6).abs() < 1e-12);
        assert!(brent(|x| x * x + 1.0, -1.0, 1.0, 1e-10, 100).is_err());
    }
}
