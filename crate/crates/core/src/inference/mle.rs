//! Multi-start maximum likelihood and likelihood-ratio statistics.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use super::optimize::{bfgs, FitStatus};
use super::reparam::Reparam;
use crate::error::{GhmmError, Result};
use crate::ghmm::Ghmm;
use crate::montecarlo::StreamKey;
use crate::sensitivity::log_likelihood_with_derivs;

/// Tolerance for a restricted fit exceeding the full one.
pub const NESTING_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Sup-norm tolerance on the gradient in optimizer coordinates.
    pub grad_tol: f64,
    /// Starts per initial point; the first is unjittered.
    pub restarts: usize,
    /// Jitter standard deviation, multiplied by the reparametrization's scales.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-6,
            restarts: 5,
            jitter: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub theta: Vec<f64>,
    pub log_lik: f64,
    /// `‖∂ℓ/∂u‖∞` at the returned point.
    pub grad_norm: f64,
    pub iterations: usize,
    pub status: FitStatus,
    /// Index of the winning start.
    pub start: usize,
}

impl FitResult {
    pub fn converged(&self) -> bool {
        self.status == FitStatus::Converged
    }
}

fn objective<'a, M: Ghmm>(
    model: &'a M,
    y: &'a [M::Obs],
    reparam: &'a Reparam,
    base: &'a [f64],
) -> impl Fn(&[f64]) -> Option<(f64, Vec<f64>)> + 'a {
    move |u| {
        let theta = reparam.to_theta(u, base);
        let p = model.bind(&theta, 1).ok()?;
        let (ll, d) = log_likelihood_with_derivs(model, &p, y).ok()?;
        if !ll.is_finite() {
            return None;
        }
        let g = reparam.pull_back(&theta, &d.score);
        Some((-ll, g.into_iter().map(|v| -v).collect()))
    }
}

fn single_start<M: Ghmm>(
    model: &M,
    y: &[M::Obs],
    reparam: &Reparam,
    base: &[f64],
    u0: &[f64],
    opts: &FitOptions,
    start: usize,
) -> Option<FitResult> {
    let f = objective(model, y, reparam, base);
    let m = bfgs(f, u0, opts.max_iter, opts.grad_tol, |u| reparam.at_boundary(u))?;
    Some(FitResult {
        theta: reparam.to_theta(&m.x, base),
        log_lik: -m.value,
        grad_norm: m.grad.iter().fold(0.0, |a, v| a.max(v.abs())),
        iterations: m.iterations,
        status: m.status,
        start,
    })
}

/// Maximizes the log-likelihood from `theta_init` and `opts.restarts − 1` jittered copies.
pub fn mle_fit<M: Ghmm>(
    model: &M,
    y: &[M::Obs],
    theta_init: &[f64],
    reparam: &Reparam,
    opts: &FitOptions,
) -> Result<FitResult> {
    mle_fit_multi(model, y, &[theta_init.to_vec()], reparam, opts)
}

/// Like [`mle_fit`] with several initial points; each gets its own jittered starts.
/// The best log-likelihood wins, ties going to the earliest start.
pub fn mle_fit_multi<M: Ghmm>(
    model: &M,
    y: &[M::Obs],
    inits: &[Vec<f64>],
    reparam: &Reparam,
    opts: &FitOptions,
) -> Result<FitResult> {
    if y.is_empty() {
        return Err(GhmmError::EmptySequence);
    }
    if inits.is_empty() {
        return Err(GhmmError::InvalidArgument("no initial point".into()));
    }
    let q = model.param_dim();
    if reparam.dim() != q {
        return Err(GhmmError::DimensionMismatch(format!(
            "reparametrization covers {} coordinates, model has {q}",
            reparam.dim()
        )));
    }
    let restarts = opts.restarts.max(1);
    let mut starts = Vec::with_capacity(inits.len() * restarts);
    for (i, init) in inits.iter().enumerate() {
        model.check_dim(init)?;
        let p = model.bind(init, 1)?;
        log_likelihood_with_derivs(model, &p, y)?;
        let u0 = reparam.to_u(init)?;
        for r in 0..restarts {
            let mut u = u0.clone();
            if r > 0 {
                let mut rng = StreamKey::new(opts.seed, (i * restarts + r) as u64).rng();
                for (v, s) in u.iter_mut().zip(reparam.scales()) {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v += opts.jitter * s * z;
                }
            }
            starts.push((i, u));
        }
    }
    let fits: Vec<Option<FitResult>> = starts
        .par_iter()
        .enumerate()
        .map(|(k, (i, u))| single_start(model, y, reparam, &inits[*i], u, opts, k))
        .collect();
    fits.into_iter()
        .flatten()
        .reduce(|best, f| if f.log_lik > best.log_lik { f } else { best })
        .ok_or_else(|| GhmmError::NonFinite("log-likelihood at every start".into()))
}

/// `2 (ℓ̂_full − ℓ̂_restricted)`.
pub fn lr_stat(full: &FitResult, restricted: &FitResult) -> Result<f64> {
    if restricted.log_lik > full.log_lik + NESTING_TOL {
        return Err(GhmmError::NestingViolation {
            full: full.log_lik,
            restricted: restricted.log_lik,
        });
    }
    Ok(2.0 * (full.log_lik - restricted.log_lik))
}
