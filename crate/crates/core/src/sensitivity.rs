//! Derivative filters, analytic score and Hessian, and finite-difference oracles.

use serde::Serialize;

use crate::error::{GhmmError, Result};
use crate::ghmm::{log_likelihood, Ghmm, LogLikDerivs};
use crate::multi_index::MultiIndexSet;

/// Relative asymmetry above which a Hessian is flagged.
pub const ASYMMETRY_WARN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct DerivBundle<S> {
    pub order: usize,
    pub stat: S,
    pub log_norm: f64,
    pub t: usize,
}

pub fn init_sensitivity<M: Ghmm>(model: &M, theta: &[f64], y0: &M::Obs, order: usize) -> Result<DerivBundle<M::Sens>> {
    let p = model.bind(theta, order)?;
    let (stat, inc) = model.sens_init(&p, y0)?;
    Ok(DerivBundle {
        order,
        stat,
        log_norm: inc,
        t: 0,
    })
}

pub fn sensitivity_step<M: Ghmm>(
    model: &M,
    theta: &[f64],
    bundle: &DerivBundle<M::Sens>,
    y_prev: &M::Obs,
    y: &M::Obs,
) -> Result<DerivBundle<M::Sens>> {
    let p = model.bind(theta, bundle.order)?;
    let (stat, inc) = model.sens_update(&p, &bundle.stat, y_prev, y)?;
    Ok(DerivBundle {
        order: bundle.order,
        stat,
        log_norm: bundle.log_norm + inc,
        t: bundle.t + 1,
    })
}

/// Log-likelihood derivatives read from a bundle.
pub fn bundle_derivs<M: Ghmm>(model: &M, theta: &[f64], bundle: &DerivBundle<M::Sens>) -> Result<LogLikDerivs> {
    let p = model.bind(theta, bundle.order)?;
    Ok(model.sens_derivs(&p, &bundle.stat))
}

/// Runs the derivative filter over `y`; `visit(t, log-lik increment, cumulative derivatives)`.
pub fn for_each_derivative<M: Ghmm>(
    model: &M,
    p: &M::Params,
    y: &[M::Obs],
    mut visit: impl FnMut(usize, f64, &LogLikDerivs),
) -> Result<()> {
    let Some(y0) = y.first() else {
        return Err(GhmmError::EmptySequence);
    };
    let (mut s, inc) = model.sens_init(p, y0).map_err(|e| e.at(0))?;
    visit(0, inc, &model.sens_derivs(p, &s));
    for t in 1..y.len() {
        let (next, inc) = model.sens_update(p, &s, &y[t - 1], &y[t]).map_err(|e| e.at(t))?;
        s = next;
        visit(t, inc, &model.sens_derivs(p, &s));
    }
    Ok(())
}

/// Log-likelihood with its final derivatives up to `order`.
pub fn log_likelihood_with_derivs<M: Ghmm>(model: &M, p: &M::Params, y: &[M::Obs]) -> Result<(f64, LogLikDerivs)> {
    let Some(y0) = y.first() else {
        return Err(GhmmError::EmptySequence);
    };
    let (mut s, mut ll) = model.sens_init(p, y0).map_err(|e| e.at(0))?;
    for t in 1..y.len() {
        let (next, inc) = model.sens_update(p, &s, &y[t - 1], &y[t]).map_err(|e| e.at(t))?;
        s = next;
        ll += inc;
    }
    Ok((ll, model.sens_derivs(p, &s)))
}

pub fn score<M: Ghmm>(model: &M, theta: &[f64], y: &[M::Obs]) -> Result<Vec<f64>> {
    let p = model.bind(theta, 1)?;
    Ok(log_likelihood_with_derivs(model, &p, y)?.1.score)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HessianResult {
    /// Row-major, symmetrized.
    pub matrix: Vec<f64>,
    pub dim: usize,
    /// `max|H − Hᵀ| / max(max|H|, 1)` before symmetrization.
    pub asymmetry: f64,
    pub asymmetry_warning: bool,
}

impl HessianResult {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.dim + j]
    }
}

/// Symmetrizes a row-major square matrix and reports its relative asymmetry.
pub fn symmetrize(h: &[f64], q: usize) -> HessianResult {
    let scale = h.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut asym = 0.0f64;
    let mut out = h.to_vec();
    for i in 0..q {
        for j in (i + 1)..q {
            asym = asym.max((h[i * q + j] - h[j * q + i]).abs());
            let v = 0.5 * (h[i * q + j] + h[j * q + i]);
            out[i * q + j] = v;
            out[j * q + i] = v;
        }
    }
    let asymmetry = asym / scale;
    HessianResult {
        matrix: out,
        dim: q,
        asymmetry,
        asymmetry_warning: asymmetry > ASYMMETRY_WARN,
    }
}

pub fn hessian<M: Ghmm>(model: &M, theta: &[f64], y: &[M::Obs]) -> Result<HessianResult> {
    let p = model.bind(theta, 2)?;
    let h = log_likelihood_with_derivs(model, &p, y)?.1.hessian;
    Ok(symmetrize(&h, model.param_dim()))
}

fn check_step(h: f64, value: f64) -> Result<()> {
    let limit = 64.0 * f64::EPSILON * value.abs().max(1.0);
    if !(h >= limit) {
        return Err(GhmmError::StepTooSmall { step: h, limit });
    }
    Ok(())
}

fn central(f: &impl Fn(&[f64]) -> Result<f64>, theta: &[f64], a: usize, h: f64) -> Result<f64> {
    let mut tp = theta.to_vec();
    tp[a] += h;
    let mut tm = theta.to_vec();
    tm[a] -= h;
    Ok((f(&tp)? - f(&tm)?) / (2.0 * h))
}

/// Central-difference gradient of `f`; truncation error `O(h²)`, or `O(h⁴)`
/// with one Richardson step combining `h` and `h/2`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> Result<f64>, theta: &[f64], h: f64, richardson: bool) -> Result<Vec<f64>> {
    check_step(h, f(theta)?)?;
    (0..theta.len())
        .map(|a| {
            let d = central(&f, theta, a, h)?;
            if richardson {
                let d2 = central(&f, theta, a, 0.5 * h)?;
                Ok((4.0 * d2 - d) / 3.0)
            } else {
                Ok(d)
            }
        })
        .collect()
}

/// Central second differences of `f`, row-major; truncation error `O(h²)`.
pub fn fd_hessian_of(f: impl Fn(&[f64]) -> Result<f64>, theta: &[f64], h: f64) -> Result<Vec<f64>> {
    let f0 = f(theta)?;
    check_step(h, f0)?;
    let q = theta.len();
    let mut out = vec![0.0; q * q];
    let eval = |da: &[(usize, f64)]| -> Result<f64> {
        let mut t = theta.to_vec();
        for &(a, s) in da {
            t[a] += s;
        }
        f(&t)
    };
    for a in 0..q {
        let v = (eval(&[(a, h)])? - 2.0 * f0 + eval(&[(a, -h)])?) / (h * h);
        out[a * q + a] = v;
        for b in (a + 1)..q {
            let v = (eval(&[(a, h), (b, h)])? - eval(&[(a, h), (b, -h)])? - eval(&[(a, -h), (b, h)])?
                + eval(&[(a, -h), (b, -h)])?)
                / (4.0 * h * h);
            out[a * q + b] = v;
            out[b * q + a] = v;
        }
    }
    Ok(out)
}

/// Central-difference score of the filter log-likelihood (with Richardson refinement).
pub fn fd_score<M: Ghmm>(model: &M, theta: &[f64], y: &[M::Obs], h: f64) -> Result<Vec<f64>> {
    fd_gradient(|t| log_likelihood(model, t, y), theta, h, true)
}

/// Central-difference Hessian of the filter log-likelihood.
pub fn fd_hessian<M: Ghmm>(model: &M, theta: &[f64], y: &[M::Obs], h: f64) -> Result<Vec<f64>> {
    fd_hessian_of(|t| log_likelihood(model, t, y), theta, h)
}

/// One entry of the step operator for a scalar parameter: `coef · D^order P(y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OperatorEntry {
    pub coef: u64,
    pub order: usize,
}

/// Block structure of the one-step operator acting on `(W^0, …, W^r)` for `q = 1`.
///
/// Entry `(i, j)` is `C(i, j) D^{i−j} P` for `j ≤ i` and zero above the diagonal.
pub fn scalar_step_operator(r: usize) -> Vec<Vec<Option<OperatorEntry>>> {
    let set = MultiIndexSet::new(1, r);
    let mut out = vec![vec![None; set.len()]; set.len()];
    for (i, row) in out.iter_mut().enumerate() {
        for sp in set.splits(i) {
            row[sp.part] = Some(OperatorEntry {
                coef: sp.coef as u64,
                order: set.degree(sp.rest),
            });
        }
    }
    out
}
