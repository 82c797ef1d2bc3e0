//! BFGS minimization with Armijo backtracking.

use serde::Serialize;

const ARMIJO_C1: f64 = 1e-4;
const SHRINK: f64 = 0.5;
const MAX_HALVINGS: usize = 40;
/// Cap on the first trial step in sup norm.
const MAX_STEP: f64 = 5.0;
/// Relative rounding level assumed for objective values.
const F_NOISE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitStatus {
    Converged,
    MaxIter,
    LineSearchFailed,
    BoundaryHit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub status: FitStatus,
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f`, which returns the value and gradient or `None` outside its domain.
///
/// Stops when `‖∇f‖∞ ≤ grad_tol`, after `max_iter` iterations, when the line
/// search fails twice in a row (the second time from a steepest-descent
/// direction), or when `stop(x)` reports a boundary.
pub fn bfgs(
    f: impl Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
    x0: &[f64],
    max_iter: usize,
    grad_tol: f64,
    stop: impl Fn(&[f64]) -> bool,
) -> Option<Minimum> {
    let n = x0.len();
    let (mut fx, mut g) = f(x0)?;
    let mut x = x0.to_vec();
    let mut hinv = identity(n);
    let mut fresh = true;
    let mut status = FitStatus::MaxIter;
    let mut iterations = 0;
    while iterations < max_iter {
        if sup(&g) <= grad_tol {
            status = FitStatus::Converged;
            break;
        }
        if stop(&x) {
            status = FitStatus::BoundaryHit;
            break;
        }
        iterations += 1;
        let mut d: Vec<f64> = (0..n).map(|i| -dot(&hinv[i], &g)).collect();
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            hinv = identity(n);
            fresh = true;
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        let mut t = (MAX_STEP / sup(&d)).min(1.0);
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            if let Some((fn_, gn)) = f(&xn) {
                let armijo = fn_ <= fx + ARMIJO_C1 * t * slope;
                // near the optimum the decrease drowns in rounding of f; accept
                // steps that leave f unchanged up to noise but flatten the slope
                let flat = fn_ <= fx + F_NOISE * fx.abs().max(1.0) && dot(&gn, &d).abs() < slope.abs();
                if fn_.is_finite() && (armijo || flat) {
                    accepted = Some((xn, fn_, gn));
                    break;
                }
            }
            t *= SHRINK;
        }
        let Some((xn, fn_, gn)) = accepted else {
            if fresh {
                status = FitStatus::LineSearchFailed;
                break;
            }
            hinv = identity(n);
            fresh = true;
            continue;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let ys = dot(&y, &s);
        if ys > 1e-12 {
            if fresh {
                let scale = ys / dot(&y, &y);
                for (i, row) in hinv.iter_mut().enumerate() {
                    row.iter_mut().for_each(|v| *v = 0.0);
                    row[i] = scale;
                }
            }
            update(&mut hinv, &s, &y, ys);
            fresh = false;
        }
        x = xn;
        fx = fn_;
        g = gn;
    }
    if status == FitStatus::MaxIter && sup(&g) <= grad_tol {
        status = FitStatus::Converged;
    }
    Some(Minimum {
        x,
        value: fx,
        grad: g,
        iterations,
        status,
    })
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let mut r = vec![0.0; n];
            r[i] = 1.0;
            r
        })
        .collect()
}

/// `H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ`.
fn update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], ys: f64) {
    let n = s.len();
    let rho = 1.0 / ys;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| {
            let v = (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
            let g = vec![
                -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]),
                200.0 * (x[1] - x[0] * x[0]),
            ];
            Some((v, g))
        };
        let m = bfgs(f, &[-1.2, 1.0], 500, 1e-8, |_| false).unwrap();
        assert_eq!(m.status, FitStatus::Converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn respects_domain() {
        // minimum of x − ln x at 1, undefined for x ≤ 0
        let f = |x: &[f64]| (x[0] > 0.0).then(|| (x[0] - x[0].ln(), vec![1.0 - 1.0 / x[0]]));
        let m = bfgs(f, &[5.0], 100, 1e-10, |_| false).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn empty_problem_converges_immediately() {
        let m = bfgs(|_| Some((3.0, vec![])), &[], 10, 1e-6, |_| false).unwrap();
        assert_eq!(m.status, FitStatus::Converged);
        assert_eq!(m.iterations, 0);
    }
}
