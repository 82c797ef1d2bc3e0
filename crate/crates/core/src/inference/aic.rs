//! AIC selection of the hidden chain's order and of its number of states.

use serde::Serialize;

use super::korder::{EmissionFamily, KorderModel};
use super::mle::{mle_fit_multi, FitOptions, FitResult};
use super::optimize::FitStatus;
use super::reparam::Reparam;
use crate::error::{GhmmError, Result};

/// AIC values closer than this count as tied; ties go to the smaller candidate.
pub const AIC_TIE: f64 = 1e-9;

/// `t^j − t^(j−1)`.
pub fn penalty_delta(t: u64, j: u32) -> u64 {
    if j == 0 {
        return 0;
    }
    t.pow(j) - t.pow(j - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    Order,
    States,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AicRow {
    pub k: usize,
    pub log_lik: f64,
    pub penalty: u64,
    /// `−2 ℓ̂ + 2 Δ`.
    pub aic: f64,
    /// Number of fitted parameters.
    pub n_params: usize,
    pub converged: bool,
    pub status: FitStatus,
    pub iterations: usize,
    pub grad_norm: f64,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AicReport {
    pub selection: Selection,
    pub rows: Vec<AicRow>,
    pub selected: usize,
}

fn row(k: usize, penalty: u64, fit: FitResult) -> AicRow {
    AicRow {
        k,
        log_lik: fit.log_lik,
        penalty,
        aic: -2.0 * fit.log_lik + 2.0 * penalty as f64,
        n_params: fit.theta.len(),
        converged: fit.converged(),
        status: fit.status,
        iterations: fit.iterations,
        grad_norm: fit.grad_norm,
        theta: fit.theta,
    }
}

/// Smallest AIC among converged rows (all rows if none converged).
fn select(rows: &[AicRow]) -> usize {
    let any = rows.iter().any(|r| r.converged);
    let mut best: Option<&AicRow> = None;
    for r in rows.iter().filter(|r| r.converged || !any) {
        if best.is_none_or(|b| r.aic < b.aic - AIC_TIE) {
            best = Some(r);
        }
    }
    best.map_or(0, |r| r.k)
}

fn fit(m: &KorderModel, y: &[f64], inits: Vec<Vec<f64>>, opts: &FitOptions, salt: u64) -> Result<FitResult> {
    let reparam = Reparam::identity(m.param_dim()).with_scales(m.jitter_scales())?;
    let opts = FitOptions {
        seed: opts.seed.wrapping_add(salt.wrapping_mul(0x9E37_79B9)),
        ..*opts
    };
    mle_fit_multi(&m.model, y, &inits, &reparam, &opts)
}

/// Fits orders `1..=k_max` of an `l`-state chain. Each larger order starts from
/// the lifted smaller-order estimate (and from a cold start), so fitted
/// log-likelihoods do not decrease.
pub fn aic_order_select(
    y: &[f64],
    l: usize,
    k_max: usize,
    family: EmissionFamily,
    opts: &FitOptions,
) -> Result<AicReport> {
    if k_max == 0 {
        return Err(GhmmError::InvalidArgument("k_max must be at least 1".into()));
    }
    let mut rows = Vec::with_capacity(k_max);
    let mut prev: Option<(KorderModel, Vec<f64>)> = None;
    for k in 1..=k_max {
        let m = KorderModel::new(l, k, family)?;
        let mut inits = Vec::new();
        if let Some((pm, pt)) = &prev {
            inits.push(pm.lift_order(pt)?.1);
        }
        inits.push(m.default_init(y));
        let f = fit(&m, y, inits, opts, k as u64)?;
        let theta = f.theta.clone();
        rows.push(row(k, penalty_delta(l as u64, k as u32 + 1), f));
        prev = Some((m, theta));
    }
    let selected = select(&rows);
    Ok(AicReport {
        selection: Selection::Order,
        rows,
        selected,
    })
}

/// Fits state counts in `k_range` for an order-`m` chain, penalty `Δ_k^{m+1}`.
/// For first-order chains each larger state count also starts from every
/// one-state split of the previous estimate.
pub fn aic_state_select(
    y: &[f64],
    m: usize,
    k_range: std::ops::RangeInclusive<usize>,
    family: EmissionFamily,
    opts: &FitOptions,
) -> Result<AicReport> {
    if k_range.is_empty() || *k_range.start() == 0 {
        return Err(GhmmError::InvalidArgument(
            "state counts must be a non-empty range of positive integers".into(),
        ));
    }
    let mut rows = Vec::new();
    let mut prev: Option<(KorderModel, Vec<f64>)> = None;
    for k in k_range {
        let model = KorderModel::new(k, m, family)?;
        let mut inits = Vec::new();
        if let Some((pm, pt)) = &prev {
            if m == 1 && pm.embedding.l + 1 == k {
                for s in 0..pm.embedding.l {
                    inits.push(pm.split_state(pt, s)?.1);
                }
            }
        }
        inits.push(model.default_init(y));
        let f = fit(&model, y, inits, opts, 1000 + k as u64)?;
        let theta = f.theta.clone();
        rows.push(row(k, penalty_delta(k as u64, m as u32 + 1), f));
        prev = Some((model, theta));
    }
    let selected = select(&rows);
    Ok(AicReport {
        selection: Selection::States,
        rows,
        selected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn penalties() {
        assert_eq!(penalty_delta(2, 2), 2);
        assert_eq!(penalty_delta(2, 3), 4);
        assert_eq!(penalty_delta(1, 2), 0);
        for t in 1..=5u64 {
            for j in 1..=5u32 {
                assert_eq!(penalty_delta(t, j), t.pow(j) - t.pow(j - 1));
            }
        }
    }

    fn dummy(k: usize, aic: f64, converged: bool) -> AicRow {
        AicRow {
            k,
            log_lik: 0.0,
            penalty: 0,
            aic,
            n_params: 0,
            converged,
            status: if converged {
                FitStatus::Converged
            } else {
                FitStatus::MaxIter
            },
            iterations: 0,
            grad_norm: 0.0,
            theta: vec![],
        }
    }

    #[test]
    fn ties_go_to_smaller_k() {
        let rows = vec![dummy(1, 10.0, true), dummy(2, 10.0 - 1e-12, true), dummy(3, 11.0, true)];
        assert_eq!(select(&rows), 1);
    }

    #[test]
    fn non_converged_rows_skipped_when_possible() {
        let rows = vec![dummy(1, 10.0, true), dummy(2, 5.0, false)];
        assert_eq!(select(&rows), 1);
        let rows = vec![dummy(1, 10.0, false), dummy(2, 5.0, false)];
        assert_eq!(select(&rows), 2);
    }
}
