//! Model interface and the normalized forward filter.
//!
//! Every family binds a parameter vector once (validating it and
//! precomputing primitive derivatives), then advances a filter statistic one
//! observation at a time. Each step returns the log of the normalizer, so the
//! log-likelihood is the sum of the per-step increments.

use std::fmt::Debug;

use crate::error::{GhmmError, Result};
use crate::montecarlo::StreamKey;

/// Observation sequence and optional hidden path drawn from a model.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPath<O> {
    pub obs: Vec<O>,
    pub hidden: Option<Vec<usize>>,
}

/// Cumulative derivatives of the log-likelihood read from a bundle.
///
/// `hessian` is row-major `q × q` and empty for first-order bundles.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LogLikDerivs {
    pub score: Vec<f64>,
    pub hessian: Vec<f64>,
}

pub trait Ghmm: Sync {
    type Obs: Clone + Debug + Send + Sync;
    /// Parameter-bound primitives, including derivatives up to the bound order.
    type Params: Send + Sync;
    /// Filter statistic: weights for finite chains, σ² for GARCH, moments for Kalman.
    type Filter: Clone + Debug + Send;
    /// Filter statistic stacked with its parameter derivatives.
    type Sens: Clone + Debug + Send;

    fn param_dim(&self) -> usize;

    /// Highest derivative order the family supplies analytically.
    fn max_order(&self) -> usize;

    fn bind(&self, theta: &[f64], order: usize) -> Result<Self::Params>;

    fn filter_init(&self, p: &Self::Params, y0: &Self::Obs) -> Result<(Self::Filter, f64)>;

    fn filter_update(
        &self,
        p: &Self::Params,
        f: &Self::Filter,
        y_prev: &Self::Obs,
        y: &Self::Obs,
    ) -> Result<(Self::Filter, f64)>;

    fn sens_init(&self, p: &Self::Params, y0: &Self::Obs) -> Result<(Self::Sens, f64)>;

    fn sens_update(
        &self,
        p: &Self::Params,
        s: &Self::Sens,
        y_prev: &Self::Obs,
        y: &Self::Obs,
    ) -> Result<(Self::Sens, f64)>;

    fn sens_derivs(&self, p: &Self::Params, s: &Self::Sens) -> LogLikDerivs;

    fn simulate(&self, p: &Self::Params, n: usize, key: StreamKey, x0: Option<usize>)
        -> Result<SampledPath<Self::Obs>>;

    /// Rejects orders beyond [`Ghmm::max_order`].
    fn check_order(&self, order: usize) -> Result<()> {
        if order > self.max_order() {
            return Err(GhmmError::UnsupportedOrder {
                requested: order,
                max: self.max_order(),
            });
        }
        Ok(())
    }

    fn check_dim(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.param_dim() {
            return Err(GhmmError::DimensionMismatch(format!(
                "parameter vector has length {}, model expects {}",
                theta.len(),
                self.param_dim()
            )));
        }
        if let Some(i) = theta.iter().position(|v| !v.is_finite()) {
            return Err(GhmmError::param(format!("theta[{i}]"), "not finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState<F> {
    pub stat: F,
    /// Log-likelihood of the observations processed so far.
    pub log_norm: f64,
    pub t: usize,
}

pub fn init_filter<M: Ghmm>(model: &M, theta: &[f64], y0: &M::Obs) -> Result<FilterState<M::Filter>> {
    let p = model.bind(theta, 0)?;
    let (stat, inc) = model.filter_init(&p, y0)?;
    Ok(FilterState {
        stat,
        log_norm: inc,
        t: 0,
    })
}

pub fn filter_step<M: Ghmm>(
    model: &M,
    theta: &[f64],
    state: &FilterState<M::Filter>,
    y_prev: &M::Obs,
    y: &M::Obs,
) -> Result<FilterState<M::Filter>> {
    let p = model.bind(theta, 0)?;
    let (stat, inc) = model.filter_update(&p, &state.stat, y_prev, y)?;
    Ok(FilterState {
        stat,
        log_norm: state.log_norm + inc,
        t: state.t + 1,
    })
}

/// Runs the filter over `y`, handing each log-normalizer increment to `visit`.
pub fn for_each_increment<M: Ghmm>(
    model: &M,
    p: &M::Params,
    y: &[M::Obs],
    mut visit: impl FnMut(usize, f64),
) -> Result<()> {
    let Some(y0) = y.first() else {
        return Err(GhmmError::EmptySequence);
    };
    let (mut f, inc) = model.filter_init(p, y0).map_err(|e| e.at(0))?;
    visit(0, inc);
    for t in 1..y.len() {
        let (next, inc) = model.filter_update(p, &f, &y[t - 1], &y[t]).map_err(|e| e.at(t))?;
        visit(t, inc);
        f = next;
    }
    Ok(())
}

pub fn log_likelihood<M: Ghmm>(model: &M, theta: &[f64], y: &[M::Obs]) -> Result<f64> {
    let p = model.bind(theta, 0)?;
    log_likelihood_bound(model, &p, y)
}

pub fn log_likelihood_bound<M: Ghmm>(model: &M, p: &M::Params, y: &[M::Obs]) -> Result<f64> {
    let mut total = 0.0;
    for_each_increment(model, p, y, |_, inc| total += inc)?;
    Ok(total)
}

/// Per-observation log-likelihood increments.
pub fn log_likelihood_increments<M: Ghmm>(model: &M, theta: &[f64], y: &[M::Obs]) -> Result<Vec<f64>> {
    let p = model.bind(theta, 0)?;
    let mut out = Vec::with_capacity(y.len());
    for_each_increment(model, &p, y, |_, inc| out.push(inc))?;
    Ok(out)
}

/// Normalizes `w` in place and returns the log of its former sum.
pub(crate) fn normalize(w: &mut [f64]) -> Result<f64> {
    let c: f64 = w.iter().sum();
    if !c.is_finite() {
        return Err(GhmmError::NonFinite("filter weights".into()));
    }
    if c <= 0.0 {
        return Err(GhmmError::AllZeroWeights);
    }
    let inv = 1.0 / c;
    w.iter_mut().for_each(|v| *v *= inv);
    Ok(c.ln())
}
