//! Small polynomial helpers shared by the boundary-value solver and the
//! trajectory optimizer: evaluation, derivatives, products, Gram matrices
//! of derivative bases over an interval, and bracketed real-root
//! extraction.

use nalgebra::SMatrix;

/// Evaluates `sum coeffs[i] t^i` (Horner).
pub fn eval(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

/// Evaluates the `order`-th derivative of the polynomial at `t`.
pub fn eval_deriv(coeffs: &[f64], order: usize, t: f64) -> f64 {
    let mut acc = 0.0;
    for (i, &c) in coeffs.iter().enumerate().skip(order) {
        let mut f = 1.0;
        for k in 0..order {
            f *= (i - k) as f64;
        }
        acc += c * f * t.powi((i - order) as i32);
    }
    acc
}

/// Product of two coefficient vectors.
pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

/// Adds `b` into `a`, extending as needed.
pub fn add_into(a: &mut Vec<f64>, b: &[f64]) {
    if b.len() > a.len() {
        a.resize(b.len(), 0.0);
    }
    for (ai, &bi) in a.iter_mut().zip(b) {
        *ai += bi;
    }
}

/// Gram matrix `G[i][j] = integral over [t0, t1] of D^k(t^i) D^k(t^j) dt`
/// for the 6-dimensional quintic power basis and derivative order `k`.
pub fn gram_quintic(order: usize, t0: f64, t1: f64) -> SMatrix<f64, 6, 6> {
    let mut g = SMatrix::<f64, 6, 6>::zeros();
    for i in 0..6 {
        for j in 0..6 {
            if i < order || j < order {
                continue;
            }
            let mut f = 1.0;
            for k in 0..order {
                f *= ((i - k) * (j - k)) as f64;
            }
            let pow = i + j - 2 * order;
            let exp = (pow + 1) as i32;
            g[(i, j)] = f * (t1.powi(exp) - t0.powi(exp)) / (pow as f64 + 1.0);
        }
    }
    g
}

/// Real roots of the polynomial inside `(lo, hi)`, found by a sign scan
/// over a fine grid followed by bisection. Roots without a sign change
/// (even multiplicity) are extrema touches and are not reported; callers
/// comparing function values at roots plus interval endpoints are
/// unaffected by that.
pub fn real_roots_in(coeffs: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    const SCAN: usize = 256;
    let mut roots = Vec::new();
    let mut prev_t = lo;
    let mut prev_v = eval(coeffs, lo);
    for k in 1..=SCAN {
        let t = lo + (hi - lo) * k as f64 / SCAN as f64;
        let v = eval(coeffs, t);
        if prev_v == 0.0 {
            roots.push(prev_t);
        } else if prev_v * v < 0.0 {
            let (mut a, mut b, mut fa) = (prev_t, t, prev_v);
            for _ in 0..80 {
                let mid = 0.5 * (a + b);
                let fm = eval(coeffs, mid);
                if fa * fm <= 0.0 {
                    b = mid;
                } else {
                    a = mid;
                    fa = fm;
                }
            }
            roots.push(0.5 * (a + b));
        }
        prev_t = t;
        prev_v = v;
    }
    if prev_v == 0.0 {
        roots.push(hi);
    }
    roots
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn eval_and_derivatives() {
        // f(t) = 1 + 2t + 3t^2
        let c = [1.0, 2.0, 3.0];
        assert_relative_eq!(eval(&c, 2.0), 17.0);
        assert_relative_eq!(eval_deriv(&c, 1, 2.0), 14.0);
        assert_relative_eq!(eval_deriv(&c, 2, 2.0), 6.0);
        assert_relative_eq!(eval_deriv(&c, 3, 2.0), 0.0);
    }

    #[test]
    fn gram_matches_quadrature() {
        // integral over [0.3, 1.7] of f'' g'' for f = t^3, g = t^4
        let g = gram_quintic(2, 0.3, 1.7);
        let n = 200_000;
        let (a, b) = (0.3, 1.7);
        let h = (b - a) / n as f64;
        let mut acc = 0.0;
        for k in 0..n {
            let t = a + (k as f64 + 0.5) * h;
            acc += (6.0 * t) * (12.0 * t * t) * h;
        }
        assert_relative_eq!(g[(3, 4)], acc, max_relative = 1e-6);
    }

    #[test]
    fn bracketed_roots() {
        // (t - 1)(t - 2)(t + 3) = t^3 - 7t + 6
        let roots = real_roots_in(&[6.0, -7.0, 0.0, 1.0], -5.0, 5.0);
        assert_eq!(roots.len(), 3);
        assert_relative_eq!(roots[0], -3.0, epsilon = 1e-9);
        assert_relative_eq!(roots[1], 1.0, epsilon = 1e-9);
        assert_relative_eq!(roots[2], 2.0, epsilon = 1e-9);

        // x^6 - 3600: the equally-spaced-eigenvalue case that defeats
        // shifted-QR companion solvers.
        let mut sextic = vec![0.0; 7];
        sextic[0] = -3600.0;
        sextic[6] = 1.0;
        let roots = real_roots_in(&sextic, 0.1, 60.0);
        assert_eq!(roots.len(), 1);
        assert_relative_eq!(roots[0], 3600.0f64.powf(1.0 / 6.0), epsilon = 1e-9);
    }
}
