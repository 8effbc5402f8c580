//! Univariate real polynomials: real-root isolation and least-squares fits.
//!
//! Coefficients are stored lowest degree first, `c[0] + c[1] x + ... + c[p] x^p`.

use crate::error::{Error, Result};

/// Relative size below which leading coefficients are treated as zero.
pub const TRIM_RELATIVE: f64 = 1e-12;
/// Roots closer than this are reported once.
pub const MERGE_DISTANCE: f64 = 1e-7;

/// Horner evaluation.
pub fn eval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn magnitude(coeffs: &[f64], x: f64) -> f64 {
    let ax = x.abs();
    coeffs.iter().rev().fold(0.0, |acc, c| acc * ax + c.abs())
}

fn derivative(coeffs: &[f64]) -> Vec<f64> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, c)| k as f64 * c)
        .collect()
}

/// Drops leading coefficients with `|c| < 1e-12 max|c|`.
pub fn trim(coeffs: &[f64]) -> Result<Vec<f64>> {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Degenerate("all polynomial coefficients vanish".into()));
    }
    let mut out = coeffs.to_vec();
    while out.len() > 1 && out.last().is_some_and(|c| c.abs() < TRIM_RELATIVE * scale) {
        out.pop();
    }
    Ok(out)
}

/// All real roots of the polynomial, ascending, with near-duplicates merged.
///
/// Roots of the derivative split the real line into monotone pieces; every
/// piece with a sign change holds exactly one root, found by bisection and
/// polished with Newton steps. Critical points where the polynomial itself
/// vanishes (even-multiplicity roots) are reported too.
pub fn polynomial_real_roots(coeffs: &[f64]) -> Result<Vec<f64>> {
    let c = trim(coeffs)?;
    let mut roots = real_roots_trimmed(&c);
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|b, a| (*b - *a).abs() <= MERGE_DISTANCE);
    Ok(roots)
}

fn real_roots_trimmed(c: &[f64]) -> Vec<f64> {
    let degree = c.len() - 1;
    match degree {
        0 => Vec::new(),
        1 => vec![-c[0] / c[1]],
        _ => {
            let lead = c[degree];
            let bound = 1.0 + c[..degree].iter().fold(0.0f64, |m, ci| m.max((ci / lead).abs()));
            let d = derivative(c);
            let mut critical = real_roots_trimmed(&d);
            critical.retain(|x| x.abs() < bound);
            critical.sort_by(f64::total_cmp);

            let mut knots = Vec::with_capacity(critical.len() + 2);
            knots.push(-bound);
            knots.extend(critical.iter().copied());
            knots.push(bound);

            let mut roots = Vec::new();
            for &x in &critical {
                if eval(c, x).abs() <= 64.0 * f64::EPSILON * magnitude(c, x) {
                    roots.push(x);
                }
            }
            for w in knots.windows(2) {
                let (a, b) = (w[0], w[1]);
                let (fa, fb) = (eval(c, a), eval(c, b));
                if fa == 0.0 {
                    roots.push(a);
                    continue;
                }
                if fa.signum() != fb.signum() && fb != 0.0 {
                    roots.push(bisect(c, &d, a, b, fa));
                }
            }
            roots
        }
    }
}

fn bisect(c: &[f64], d: &[f64], mut a: f64, mut b: f64, mut fa: f64) -> f64 {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = eval(c, m);
        if fm == 0.0 {
            return m;
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    let mut x = 0.5 * (a + b);
    // Newton polish, kept only while it stays inside the bracket.
    for _ in 0..3 {
        let dx = eval(d, x);
        if dx == 0.0 {
            break;
        }
        let next = x - eval(c, x) / dx;
        if !(next >= a && next <= b) {
            break;
        }
        x = next;
    }
    x
}

/// Least-squares polynomial fit in the centred, scaled variable
/// `t = (x - center) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyFit {
    pub center: f64,
    pub scale: f64,
    pub coeffs: Vec<f64>,
    pub r_squared: f64,
}

impl PolyFit {
    pub fn eval(&self, x: f64) -> f64 {
        eval(&self.coeffs, (x - self.center) / self.scale)
    }
}

/// Fits a degree-`degree` polynomial to `(xs, ys)` by Householder QR and
/// reports the coefficient of determination.
pub fn poly_fit(xs: &[f64], ys: &[f64], degree: usize) -> Result<PolyFit> {
    if xs.len() != ys.len() {
        return Err(Error::Shape("xs and ys differ in length".into()));
    }
    let n = xs.len();
    let cols = degree + 1;
    if n < cols {
        return Err(Error::Precondition(format!(
            "{n} points cannot determine a degree-{degree} fit"
        )));
    }
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let center = 0.5 * (lo + hi);
    let scale = if hi > lo { 0.5 * (hi - lo) } else { 1.0 };

    // column-major Vandermonde
    let mut a: Vec<Vec<f64>> = (0..cols)
        .map(|k| xs.iter().map(|x| ((x - center) / scale).powi(k as i32)).collect())
        .collect();
    let mut b = ys.to_vec();
    for k in 0..cols {
        let alpha = -a[k][k..].iter().map(|v| v * v).sum::<f64>().sqrt().copysign(a[k][k]);
        if alpha == 0.0 {
            return Err(Error::Degenerate("rank-deficient design matrix".into()));
        }
        let mut v: Vec<f64> = a[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            for col in a.iter_mut().skip(k) {
                let s = 2.0 * dot_tail(&v, &col[k..]) / vnorm2;
                for (x, vi) in col[k..].iter_mut().zip(&v) {
                    *x -= s * vi;
                }
            }
            let s = 2.0 * dot_tail(&v, &b[k..]) / vnorm2;
            for (x, vi) in b[k..].iter_mut().zip(&v) {
                *x -= s * vi;
            }
        }
    }
    let mut coeffs = vec![0.0; cols];
    for k in (0..cols).rev() {
        let mut s = b[k];
        for j in (k + 1)..cols {
            s -= a[j][k] * coeffs[j];
        }
        coeffs[k] = s / a[k][k];
    }

    let mean = ys.iter().sum::<f64>() / n as f64;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - eval(&coeffs, (x - center) / scale)).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(PolyFit {
        center,
        scale,
        coeffs,
        r_squared,
    })
}

fn dot_tail(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
