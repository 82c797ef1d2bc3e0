//! Row-wise softmax tables with sparse linear scores.
//!
//! Each row is a distribution over a list of outcomes; outcome `o` has score
//! `offset_o + Σ_a c_{o,a} θ_a` and lands in column `col_o`. Several outcomes
//! may share a column, which realizes marginalization (TRBM transitions sum
//! the joint softmax over visible configurations). Derivatives follow from
//! the cumulants of the feature vector under the row's softmax law:
//! with centered features `d = c − E[c]`,
//!
//! ```text
//! ∂_a p_o    = p_o d_a
//! ∂_ab p_o   = p_o (d_a d_b − κ_ab)
//! ∂_abc p_o  = p_o (d_a d_b d_c − d_a κ_bc − d_b κ_ac − d_c κ_ab − κ_abc)
//! ```

use crate::error::{GhmmError, Result};
use crate::multi_index::MultiIndexSet;

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub col: usize,
    pub offset: f64,
    pub features: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogLinearTable {
    rows: usize,
    cols: usize,
    outcomes: Vec<Vec<Outcome>>,
}

/// A table and its parameter derivatives in sparse triplet form.
#[derive(Debug, Clone, Default)]
pub struct TableJet {
    /// Nonzero entries per row as `(col, value)`.
    pub rows: Vec<Vec<(usize, f64)>>,
    /// Entries `(row, col, value)` of `D^ν` for each multi-index; slot 0 is empty.
    pub derivs: Vec<Vec<(usize, usize, f64)>>,
}

impl TableJet {
    pub fn dense(&self, cols: usize) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| {
                let mut v = vec![0.0; cols];
                for &(c, x) in r {
                    v[c] += x;
                }
                v
            })
            .collect()
    }
}

impl LogLinearTable {
    pub fn new(rows: usize, cols: usize, outcomes: Vec<Vec<Outcome>>, q: usize) -> Result<Self> {
        if outcomes.len() != rows {
            return Err(GhmmError::DimensionMismatch(format!(
                "log-linear table has {} outcome rows, expected {rows}",
                outcomes.len()
            )));
        }
        for (r, row) in outcomes.iter().enumerate() {
            if row.is_empty() {
                return Err(GhmmError::InvalidStochasticMatrix(format!("row {r} has no outcomes")));
            }
            for o in row {
                if o.col >= cols {
                    return Err(GhmmError::DimensionMismatch(format!(
                        "row {r} outcome column {} out of range {cols}",
                        o.col
                    )));
                }
                if let Some(&(a, _)) = o.features.iter().find(|(a, _)| *a >= q) {
                    return Err(GhmmError::DimensionMismatch(format!(
                        "feature refers to parameter {a}, dimension is {q}"
                    )));
                }
            }
        }
        Ok(Self { rows, cols, outcomes })
    }

    /// Softmax over columns with column 0 as the zero-logit reference.
    ///
    /// Parameter `first_param + r·(cols−1) + (c−1)` is the logit of column `c` in row `r`.
    pub fn reference_softmax(rows: usize, cols: usize, first_param: usize) -> Self {
        let outcomes = (0..rows)
            .map(|r| {
                (0..cols)
                    .map(|c| Outcome {
                        col: c,
                        offset: 0.0,
                        features: if c == 0 {
                            Vec::new()
                        } else {
                            vec![(first_param + r * (cols - 1) + c - 1, 1.0)]
                        },
                    })
                    .collect()
            })
            .collect();
        Self { rows, cols, outcomes }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn outcomes(&self, row: usize) -> &[Outcome] {
        &self.outcomes[row]
    }

    /// Table values, plus derivatives for every multi-index in `set` when given.
    pub fn evaluate(&self, theta: &[f64], set: Option<&MultiIndexSet>) -> Result<TableJet> {
        let k = set.map_or(1, MultiIndexSet::len);
        let mut jet = TableJet {
            rows: Vec::with_capacity(self.rows),
            derivs: vec![Vec::new(); k],
        };
        let mut col_acc = vec![0.0; self.cols];
        for (r, row) in self.outcomes.iter().enumerate() {
            let scores: Vec<f64> = row
                .iter()
                .map(|o| o.offset + o.features.iter().map(|&(a, c)| c * theta[a]).sum::<f64>())
                .collect();
            let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !top.is_finite() {
                return Err(GhmmError::NonFinite(format!("log-linear scores in row {r}")));
            }
            let mut p: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
            let z: f64 = p.iter().sum();
            p.iter_mut().for_each(|v| *v /= z);

            col_acc.iter_mut().for_each(|v| *v = 0.0);
            for (o, &po) in row.iter().zip(&p) {
                col_acc[o.col] += po;
            }
            jet.rows.push(
                col_acc
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(c, &v)| (c, v))
                    .collect(),
            );

            if let Some(set) = set.filter(|s| s.order() > 0) {
                self.row_derivs(r, &p, set, &mut col_acc, &mut jet.derivs);
            }
        }
        Ok(jet)
    }

    fn row_derivs(
        &self,
        r: usize,
        p: &[f64],
        set: &MultiIndexSet,
        col_acc: &mut [f64],
        out: &mut [Vec<(usize, usize, f64)>],
    ) {
        let row = &self.outcomes[r];
        let mut support: Vec<usize> = row.iter().flat_map(|o| o.features.iter().map(|&(a, _)| a)).collect();
        support.sort_unstable();
        support.dedup();
        let m = support.len();
        if m == 0 {
            return;
        }
        // centered features d[o][j] for support parameter j
        let mut d = vec![vec![0.0; m]; row.len()];
        for (o, out) in row.iter().zip(d.iter_mut()) {
            for &(a, c) in &o.features {
                let j = support.binary_search(&a).unwrap();
                out[j] += c;
            }
        }
        let mut mean = vec![0.0; m];
        for (dr, &po) in d.iter().zip(p) {
            for j in 0..m {
                mean[j] += po * dr[j];
            }
        }
        for dr in d.iter_mut() {
            for j in 0..m {
                dr[j] -= mean[j];
            }
        }
        let kappa2 = |a: usize, b: usize| -> f64 { d.iter().zip(p).map(|(dr, &po)| po * dr[a] * dr[b]).sum() };
        let kappa3 =
            |a: usize, b: usize, c: usize| -> f64 { d.iter().zip(p).map(|(dr, &po)| po * dr[a] * dr[b] * dr[c]).sum() };

        let mut emit = |local: &[usize], per_outcome: &dyn Fn(&[f64]) -> f64| {
            let global: Vec<usize> = local.iter().map(|&j| support[j]).collect();
            let Some(idx) = set.index_of_params(&global) else {
                return;
            };
            col_acc.iter_mut().for_each(|v| *v = 0.0);
            let mut touched = false;
            for ((o, dr), &po) in row.iter().zip(&d).zip(p) {
                let v = po * per_outcome(dr);
                if v != 0.0 {
                    col_acc[o.col] += v;
                    touched = true;
                }
            }
            if touched {
                for (c, &v) in col_acc.iter().enumerate() {
                    if v != 0.0 {
                        out[idx].push((r, c, v));
                    }
                }
            }
        };

        for a in 0..m {
            emit(&[a], &|dr| dr[a]);
        }
        if set.order() >= 2 {
            for a in 0..m {
                for b in a..m {
                    let k_ab = kappa2(a, b);
                    emit(&[a, b], &|dr| dr[a] * dr[b] - k_ab);
                }
            }
        }
        if set.order() >= 3 {
            for a in 0..m {
                for b in a..m {
                    for c in b..m {
                        let (k_ab, k_ac, k_bc) = (kappa2(a, b), kappa2(a, c), kappa2(b, c));
                        let k_abc = kappa3(a, b, c);
                        emit(&[a, b, c], &|dr| {
                            dr[a] * dr[b] * dr[c] - dr[a] * k_bc - dr[b] * k_ac - dr[c] * k_ab - k_abc
                        });
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_entry(jet: &TableJet, idx: usize, r: usize, c: usize) -> f64 {
        jet.derivs[idx]
            .iter()
            .filter(|t| t.0 == r && t.1 == c)
            .map(|t| t.2)
            .sum()
    }

    fn table() -> LogLinearTable {
        // two rows; row 1 has two outcomes sharing column 0
        LogLinearTable::new(
            2,
            2,
            vec![
                vec![
                    Outcome {
                        col: 0,
                        offset: 0.0,
                        features: vec![],
                    },
                    Outcome {
                        col: 1,
                        offset: 0.3,
                        features: vec![(0, 1.0), (1, -0.5)],
                    },
                ],
                vec![
                    Outcome {
                        col: 0,
                        offset: 0.0,
                        features: vec![(1, 2.0)],
                    },
                    Outcome {
                        col: 0,
                        offset: -0.2,
                        features: vec![(0, 1.0), (1, 1.0)],
                    },
                    Outcome {
                        col: 1,
                        offset: 0.1,
                        features: vec![(0, -1.0)],
                    },
                ],
            ],
            2,
        )
        .unwrap()
    }

    #[test]
    fn rows_are_distributions() {
        let jet = table().evaluate(&[0.4, -1.1], None).unwrap();
        for row in jet.dense(2) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let t = table();
        let set = MultiIndexSet::new(2, 3);
        let theta = [0.4, -1.1];
        let jet = t.evaluate(&theta, Some(&set)).unwrap();
        let h = 1e-4;
        for idx in 1..set.len() {
            let params = set.params(idx);
            // derivative of order |ν| via recursive central differences on the last parameter
            let last = *params.last().unwrap();
            let lower = set.lower(idx, last).unwrap();
            for r in 0..2 {
                for c in 0..2 {
                    let mut tp = theta;
                    tp[last] += h;
                    let mut tm = theta;
                    tm[last] -= h;
                    let val = |th: &[f64]| {
                        let j = t.evaluate(th, Some(&set)).unwrap();
                        if lower == 0 {
                            j.dense(2)[r][c]
                        } else {
                            dense_entry(&j, lower, r, c)
                        }
                    };
                    let fd = (val(&tp) - val(&tm)) / (2.0 * h);
                    let an = dense_entry(&jet, idx, r, c);
                    assert!((fd - an).abs() < 1e-6, "ν={params:?} r={r} c={c}: {an} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn derivative_rows_sum_to_zero() {
        let set = MultiIndexSet::new(2, 2);
        let jet = table().evaluate(&[0.7, 0.2], Some(&set)).unwrap();
        for idx in 1..set.len() {
            for r in 0..2 {
                let s: f64 = jet.derivs[idx].iter().filter(|t| t.0 == r).map(|t| t.2).sum();
                assert!(s.abs() < 1e-14);
            }
        }
    }
}
