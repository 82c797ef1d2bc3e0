//! Temporal restricted Boltzmann machines as exact finite HMMs.
//!
//! Hidden configurations `h ∈ {0,1}^P` and visible configurations
//! `y ∈ {0,1}^D` are encoded as integers with bit `i` holding unit `i`. For a
//! previous hidden state `h'` the pair `(y, h)` has probability proportional to
//! `exp(yᵀ b_Y + yᵀ W h + hᵀ (b_H + W' h'))`. Summing over `y` gives the hidden
//! transition; conditioning on `h` gives `P(y|h) ∝ exp(yᵀ b_Y + yᵀ W h)`, which
//! does not depend on `h'`.
//!
//! Parameter layout: `W` (D×P, row-major), `W'` (P×P, row-major, entry
//! `(p, p')` couples `h_p` with `h'_{p'}`), `b_Y`, `b_H`.

use nalgebra::{DMatrix, DVector};

use super::finite::{Emission, FiniteHmm, InitialLaw, Transition};
use super::loglinear::{LogLinearTable, Outcome};
use crate::error::{GhmmError, Result};

pub const MAX_UNITS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct TrbmSpec {
    /// D×P visible-hidden couplings.
    pub w: DMatrix<f64>,
    /// P×P hidden-to-previous-hidden couplings.
    pub w_prime: DMatrix<f64>,
    pub b_y: DVector<f64>,
    pub b_h: DVector<f64>,
}

impl TrbmSpec {
    pub fn zeros(p: usize, d: usize) -> Self {
        Self {
            w: DMatrix::zeros(d, p),
            w_prime: DMatrix::zeros(p, p),
            b_y: DVector::zeros(d),
            b_h: DVector::zeros(p),
        }
    }

    pub fn hidden_units(&self) -> usize {
        self.b_h.len()
    }

    pub fn visible_units(&self) -> usize {
        self.b_y.len()
    }

    pub fn theta(&self) -> Vec<f64> {
        let mut t = Vec::new();
        for i in 0..self.w.nrows() {
            t.extend(self.w.row(i).iter());
        }
        for i in 0..self.w_prime.nrows() {
            t.extend(self.w_prime.row(i).iter());
        }
        t.extend(self.b_y.iter());
        t.extend(self.b_h.iter());
        t
    }
}

fn bit(v: usize, i: usize) -> bool {
    (v >> i) & 1 == 1
}

/// Builds the finite HMM (stationary initial law) and returns it with θ.
pub fn trbm_to_hmm(spec: &TrbmSpec) -> Result<(FiniteHmm, Vec<f64>)> {
    let p = spec.hidden_units();
    let d = spec.visible_units();
    if p == 0 || d == 0 {
        return Err(GhmmError::DimensionMismatch(
            "TRBM needs hidden and visible units".into(),
        ));
    }
    if p > MAX_UNITS || d > MAX_UNITS {
        return Err(GhmmError::StateSpaceTooLarge(format!(
            "P = {p}, D = {d}; both must be at most {MAX_UNITS}"
        )));
    }
    if spec.w.shape() != (d, p) || spec.w_prime.shape() != (p, p) {
        return Err(GhmmError::DimensionMismatch(format!(
            "W must be {d}x{p} and W' {p}x{p}"
        )));
    }
    let idx_w = |dd: usize, pp: usize| dd * p + pp;
    let idx_wp = |pp: usize, qq: usize| d * p + pp * p + qq;
    let idx_by = |dd: usize| d * p + p * p + dd;
    let idx_bh = |pp: usize| d * p + p * p + d + pp;
    let q = d * p + p * p + d + p;
    let (nh, ny) = (1usize << p, 1usize << d);

    let visible_features = |y: usize, h: usize| -> Vec<(usize, f64)> {
        let mut f = Vec::new();
        for dd in (0..d).filter(|&dd| bit(y, dd)) {
            f.push((idx_by(dd), 1.0));
            for pp in (0..p).filter(|&pp| bit(h, pp)) {
                f.push((idx_w(dd, pp), 1.0));
            }
        }
        f
    };

    let transition = (0..nh)
        .map(|prev| {
            let mut row = Vec::with_capacity(nh * ny);
            for h in 0..nh {
                let mut hidden = Vec::new();
                for pp in (0..p).filter(|&pp| bit(h, pp)) {
                    hidden.push((idx_bh(pp), 1.0));
                    for qq in (0..p).filter(|&qq| bit(prev, qq)) {
                        hidden.push((idx_wp(pp, qq), 1.0));
                    }
                }
                for y in 0..ny {
                    let mut features = visible_features(y, h);
                    features.extend(hidden.iter().copied());
                    row.push(Outcome {
                        col: h,
                        offset: 0.0,
                        features,
                    });
                }
            }
            row
        })
        .collect();
    let emission = (0..nh)
        .map(|h| {
            (0..ny)
                .map(|y| Outcome {
                    col: y,
                    offset: 0.0,
                    features: visible_features(y, h),
                })
                .collect()
        })
        .collect();
    let model = FiniteHmm::new(
        nh,
        q,
        Transition::LogLinear(LogLinearTable::new(nh, nh, transition, q)?),
        Emission::LogLinear(LogLinearTable::new(nh, ny, emission, q)?),
        InitialLaw::Stationary,
    )?;
    Ok((model, spec.theta()))
}
