//! Higher-order hidden chains embedded as first-order chains on tuples.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GhmmError, Result};
use crate::models::finite::{Emission, FiniteHmm, InitialLaw, MeanSource, Transition};
use crate::models::loglinear::{LogLinearTable, Outcome};

pub const KORDER_CAP: u128 = 10_000;

/// Tuples `(x_1, …, x_k)` encoded base `l` with `x_1` most significant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct KorderEmbedding {
    pub l: usize,
    pub k: usize,
    pub size: usize,
}

pub fn embed_korder(l: usize, k: usize) -> Result<KorderEmbedding> {
    if l == 0 || k == 0 {
        return Err(GhmmError::InvalidArgument(
            "need at least one state and order at least one".into(),
        ));
    }
    let size = (l as u128).checked_pow(k as u32).unwrap_or(u128::MAX);
    if size > KORDER_CAP {
        return Err(GhmmError::SizeCap { size, cap: KORDER_CAP });
    }
    Ok(KorderEmbedding {
        l,
        k,
        size: size as usize,
    })
}

impl KorderEmbedding {
    pub fn tuple(&self, idx: usize) -> Vec<usize> {
        let mut t = vec![0; self.k];
        let mut v = idx;
        for slot in t.iter_mut().rev() {
            *slot = v % self.l;
            v /= self.l;
        }
        t
    }

    pub fn index(&self, tuple: &[usize]) -> usize {
        tuple.iter().fold(0, |acc, &x| acc * self.l + x)
    }

    /// Tuple reached from `idx` when the next state is `z`: drop the first element, append `z`.
    pub fn successor(&self, idx: usize, z: usize) -> usize {
        (idx * self.l) % self.size + z
    }

    pub fn successors(&self, idx: usize) -> Vec<usize> {
        (0..self.l).map(|z| self.successor(idx, z)).collect()
    }

    pub fn admissible(&self, from: usize, to: usize) -> bool {
        let (a, b) = (self.tuple(from), self.tuple(to));
        a[1..] == b[..self.k - 1]
    }

    pub fn last(&self, idx: usize) -> usize {
        idx % self.l
    }

    /// Free transition probabilities: `l − 1` per tuple.
    pub fn free_params(&self) -> usize {
        self.size * (self.l - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EmissionFamily {
    /// `N(μ_x, sd²)` with free means and known `sd`.
    Gaussian { sd: f64 },
    /// Softmax over symbols `0..symbols` relative to symbol 0.
    Categorical { symbols: usize },
}

/// Order-`k` chain on `l` states with emissions depending on the current state.
///
/// θ holds the transition logits first, `log P(z | u) − log P(0 | u)` at
/// `u·(l−1) + z − 1`, then the emission parameters per state.
#[derive(Debug, Clone, PartialEq)]
pub struct KorderModel {
    pub embedding: KorderEmbedding,
    pub family: EmissionFamily,
    pub model: FiniteHmm,
}

impl KorderModel {
    pub fn new(l: usize, k: usize, family: EmissionFamily) -> Result<Self> {
        let e = embed_korder(l, k)?;
        let nt = e.free_params();
        let ne = match family {
            EmissionFamily::Gaussian { .. } => l,
            EmissionFamily::Categorical { symbols } => {
                if symbols < 2 {
                    return Err(GhmmError::InvalidArgument(
                        "categorical emission needs two symbols".into(),
                    ));
                }
                l * (symbols - 1)
            }
        };
        let q = nt + ne;
        let outcomes = (0..e.size)
            .map(|u| {
                (0..l)
                    .map(|z| Outcome {
                        col: e.successor(u, z),
                        offset: 0.0,
                        features: if z == 0 {
                            vec![]
                        } else {
                            vec![(u * (l - 1) + z - 1, 1.0)]
                        },
                    })
                    .collect()
            })
            .collect();
        let transition = Transition::LogLinear(LogLinearTable::new(e.size, e.size, outcomes, q)?);
        let emission = match family {
            EmissionFamily::Gaussian { sd } => Emission::Gaussian {
                means: (0..e.size).map(|u| MeanSource::Param(nt + e.last(u))).collect(),
                sd,
            },
            EmissionFamily::Categorical { symbols } => {
                let rows = (0..e.size)
                    .map(|u| {
                        (0..symbols)
                            .map(|c| Outcome {
                                col: c,
                                offset: 0.0,
                                features: if c == 0 {
                                    vec![]
                                } else {
                                    vec![(nt + e.last(u) * (symbols - 1) + c - 1, 1.0)]
                                },
                            })
                            .collect()
                    })
                    .collect();
                Emission::LogLinear(LogLinearTable::new(e.size, symbols, rows, q)?)
            }
        };
        let model = FiniteHmm::new(e.size, q, transition, emission, InitialLaw::Stationary)?;
        Ok(Self {
            embedding: e,
            family,
            model,
        })
    }

    pub fn n_transition_params(&self) -> usize {
        self.embedding.free_params()
    }

    pub fn param_dim(&self) -> usize {
        use crate::ghmm::Ghmm;
        self.model.param_dim()
    }

    /// Next-state probabilities per tuple (`size × l`) encoded by θ.
    pub fn next_state_probs(&self, theta: &[f64]) -> DMatrix<f64> {
        let l = self.embedding.l;
        DMatrix::from_fn(self.embedding.size, l, |u, z| {
            let logit = |z: usize| if z == 0 { 0.0 } else { theta[u * (l - 1) + z - 1] };
            let m = (0..l).map(logit).fold(f64::NEG_INFINITY, f64::max);
            let z_sum: f64 = (0..l).map(|j| (logit(j) - m).exp()).sum();
            (logit(z) - m).exp() / z_sum
        })
    }

    fn logits(probs: &DMatrix<f64>) -> Vec<f64> {
        let mut out = Vec::with_capacity(probs.nrows() * (probs.ncols() - 1));
        for r in 0..probs.nrows() {
            for z in 1..probs.ncols() {
                out.push((probs[(r, z)] / probs[(r, 0)]).ln());
            }
        }
        out
    }

    fn emission_params<'a>(&self, theta: &'a [f64]) -> &'a [f64] {
        &theta[self.n_transition_params()..]
    }

    /// Emission parameters per state.
    fn per_state(&self) -> usize {
        match self.family {
            EmissionFamily::Gaussian { .. } => 1,
            EmissionFamily::Categorical { symbols } => symbols - 1,
        }
    }

    /// Uniform transitions; Gaussian means at the data quantiles `(i + ½)/l`,
    /// categorical logits at the empirical symbol frequencies.
    pub fn default_init(&self, y: &[f64]) -> Vec<f64> {
        let l = self.embedding.l;
        let mut theta = vec![0.0; self.n_transition_params()];
        match self.family {
            EmissionFamily::Gaussian { .. } => {
                let mut s: Vec<f64> = y.iter().copied().filter(|v| v.is_finite()).collect();
                s.sort_by(f64::total_cmp);
                for i in 0..l {
                    let pos = ((i as f64 + 0.5) / l as f64 * s.len() as f64) as usize;
                    theta.push(s.get(pos.min(s.len().saturating_sub(1))).copied().unwrap_or(0.0));
                }
            }
            EmissionFamily::Categorical { symbols } => {
                let mut counts = vec![1.0f64; symbols];
                for &v in y {
                    if v >= 0.0 && (v as usize) < symbols {
                        counts[v as usize] += 1.0;
                    }
                }
                for _ in 0..l {
                    theta.extend((1..symbols).map(|c| (counts[c] / counts[0]).ln()));
                }
            }
        }
        theta
    }

    /// Jitter scales: 1 for logits, `sd/5` for Gaussian means.
    pub fn jitter_scales(&self) -> Vec<f64> {
        let mut s = vec![1.0; self.param_dim()];
        if let EmissionFamily::Gaussian { sd } = self.family {
            s[self.n_transition_params()..].iter_mut().for_each(|v| *v = 0.2 * sd);
        }
        s
    }

    /// θ of the order-`k+1` model with the same law: each tuple inherits the
    /// next-state distribution of its length-`k` suffix.
    pub fn lift_order(&self, theta: &[f64]) -> Result<(KorderModel, Vec<f64>)> {
        let e = self.embedding;
        let next = KorderModel::new(e.l, e.k + 1, self.family)?;
        let w = e.l - 1;
        let mut out = Vec::with_capacity(next.param_dim());
        for u in 0..next.embedding.size {
            let suffix = u % e.size;
            out.extend_from_slice(&theta[suffix * w..(suffix + 1) * w]);
        }
        out.extend_from_slice(self.emission_params(theta));
        Ok((next, out))
    }

    /// θ of the first-order model with one more state, `s` split in two copies
    /// sharing its incoming mass equally; the observation law is unchanged.
    pub fn split_state(&self, theta: &[f64], s: usize) -> Result<(KorderModel, Vec<f64>)> {
        let e = self.embedding;
        if e.k != 1 || s >= e.l {
            return Err(GhmmError::InvalidArgument(
                "state splitting needs a first-order model and a valid state".into(),
            ));
        }
        let next = KorderModel::new(e.l + 1, 1, self.family)?;
        let a = self.next_state_probs(theta);
        let b = DMatrix::from_fn(e.l + 1, e.l + 1, |r, c| {
            let src = if r == e.l { s } else { r };
            if c == s || c == e.l {
                a[(src, s)] / 2.0
            } else {
                a[(src, c)]
            }
        });
        let mut out = Self::logits(&b);
        let em = self.emission_params(theta);
        let w = self.per_state();
        out.extend_from_slice(em);
        out.extend_from_slice(&em[s * w..(s + 1) * w]);
        Ok((next, out))
    }
}
