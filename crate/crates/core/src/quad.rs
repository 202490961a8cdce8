//! Quadrature: Gauss–Legendre rules, tensor panels, composite Simpson, and
//! doubling refinement with a relative stopping test.

use crate::error::{Error, Result};
use std::cell::RefCell;
use std::collections::HashMap;

/// Nodes and weights of the n-point Gauss–Legendre rule on [-1, 1],
/// computed by Newton iteration on P_n with the usual cosine initial guess.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_and_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x.abs();
        nodes[n - 1 - i] = x.abs();
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
        let (_, d) = legendre_and_derivative(n, 0.0);
        weights[n / 2] = 2.0 / (d * d);
    }
    (nodes, weights)
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

type Rule1d = (Vec<f64>, Vec<f64>);

thread_local! {
    static GL_CACHE: RefCell<HashMap<usize, Rule1d>> = RefCell::new(HashMap::new());
}

/// Cached Gauss–Legendre rule mapped to [a, b].
pub fn gl_on_interval(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    GL_CACHE.with(|cache| {
        let mut cache = cache.borrow_mut();
        let (nodes, weights) = cache
            .entry(n)
            .or_insert_with(|| gauss_legendre(n))
            .clone();
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        (
            nodes.iter().map(|&t| mid + half * t).collect(),
            weights.iter().map(|&w| w * half).collect(),
        )
    })
}

/// Tensor Gauss–Legendre rule over a d-dimensional box, n points per axis.
pub fn gl_tensor(n: usize, lo: &[f64], hi: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let d = lo.len();
    let per_axis: Vec<(Vec<f64>, Vec<f64>)> = (0..d)
        .map(|j| gl_on_interval(n, lo[j], hi[j]))
        .collect();
    let total: usize = per_axis.iter().map(|(x, _)| x.len()).product();
    let mut points = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    let mut idx = vec![0usize; d];
    loop {
        let mut p = Vec::with_capacity(d);
        let mut w = 1.0;
        for j in 0..d {
            p.push(per_axis[j].0[idx[j]]);
            w *= per_axis[j].1[idx[j]];
        }
        points.push(p);
        weights.push(w);
        let mut axis = d;
        loop {
            if axis == 0 {
                return (points, weights);
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < per_axis[axis].0.len() {
                break;
            }
            idx[axis] = 0;
        }
    }
}

/// Integrates `f` over [a, b]^{via points} with an n-point GL rule doubled
/// until the relative change drops below `tol`.
pub fn gl_refine(
    lo: &[f64],
    hi: &[f64],
    start_n: usize,
    tol: f64,
    max_levels: usize,
    mut f: impl FnMut(&[f64]) -> f64,
) -> Result<f64> {
    let mut n = start_n;
    let mut prev = f64::NAN;
    let mut last_change = f64::NAN;
    for _ in 0..max_levels {
        let (pts, ws) = gl_tensor(n, lo, hi);
        let val: f64 = pts.iter().zip(&ws).map(|(p, &w)| w * f(p)).sum();
        if prev.is_finite() {
            last_change = (val - prev).abs() / val.abs().max(1e-300);
            if last_change < tol {
                return Ok(val);
            }
        }
        prev = val;
        n *= 2;
    }
    Err(Error::QuadratureNonConvergence {
        levels: max_levels,
        last_change,
    })
}

/// Composite Simpson rule on [0, T] with `intervals` (even) subintervals.
pub fn simpson(t_end: f64, intervals: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
    assert!(intervals >= 2 && intervals.is_multiple_of(2));
    let h = t_end / intervals as f64;
    let mut acc = f(0.0) + f(t_end);
    for k in 1..intervals {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(k as f64 * h);
    }
    acc * h / 3.0
}

/// Simpson with interval doubling until the relative change is below `tol`.
pub fn simpson_refine(
    t_end: f64,
    start_intervals: usize,
    tol: f64,
    max_levels: usize,
    mut f: impl FnMut(f64) -> f64,
) -> Result<f64> {
    let mut n = start_intervals.max(2);
    if n % 2 == 1 {
        n += 1;
    }
    let mut prev = f64::NAN;
    let mut last_change = f64::NAN;
    for _ in 0..max_levels {
        let val = simpson(t_end, n, &mut f);
        if prev.is_finite() {
            last_change = (val - prev).abs() / val.abs().max(1e-300);
            if last_change < tol {
                return Ok(val);
            }
        }
        prev = val;
        n *= 2;
    }
    Err(Error::QuadratureNonConvergence {
        levels: max_levels,
        last_change,
    })
}

/// Simpson weights (t_k, w_k) on [0, T]; handy when many integrands share
/// the same time nodes.
pub fn simpson_nodes(t_end: f64, intervals: usize) -> Vec<(f64, f64)> {
    assert!(intervals >= 2 && intervals.is_multiple_of(2));
    let h = t_end / intervals as f64;
    (0..=intervals)
        .map(|k| {
            let w = if k == 0 || k == intervals {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            (k as f64 * h, w * h / 3.0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gl_exact_on_polynomials() {
        // n-point GL is exact up to degree 2n-1
        let (x, w) = gl_on_interval(5, 0.0, 1.0);
        let int_x9: f64 = x.iter().zip(&w).map(|(&xi, &wi)| wi * xi.powi(9)).sum();
        assert_relative_eq!(int_x9, 0.1, max_relative = 1e-14);
    }

    #[test]
    fn gl_gaussian_integral() {
        // int_R e^{-x^2} dx = sqrt(pi); truncate at +-8
        let v = gl_refine(&[-8.0], &[8.0], 16, 1e-12, 10, |p| (-p[0] * p[0]).exp()).unwrap();
        assert_relative_eq!(v, std::f64::consts::PI.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn gl_tensor_2d_volume() {
        let (pts, ws) = gl_tensor(3, &[0.0, -1.0], &[2.0, 1.0]);
        assert_eq!(pts.len(), 9);
        let vol: f64 = ws.iter().sum();
        assert_relative_eq!(vol, 4.0, max_relative = 1e-14);
    }

    #[test]
    fn simpson_converges_on_exponential() {
        let v = simpson_refine(1.0, 4, 1e-12, 20, |t| (2.0 * t).exp()).unwrap();
        assert_relative_eq!(v, (std::f64::consts::E.powi(2) - 1.0) / 2.0, max_relative = 1e-11);
    }

    #[test]
    fn refinement_reports_nonconvergence() {
        // a discontinuous integrand cannot reach 1e-14 in 3 levels
        let r = gl_refine(&[0.0], &[1.0], 2, 1e-14, 3, |p| if p[0] < 0.3 { 1.0 } else { 0.0 });
        assert!(matches!(r, Err(Error::QuadratureNonConvergence { .. })));
    }
}
