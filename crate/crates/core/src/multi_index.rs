//! Multi-index bookkeeping for derivative bundles.
//!
//! A multi-index `ν = (ν₁, …, ν_q)` selects the partial derivative
//! `∂^{|ν|} / ∂θ₁^{ν₁} ⋯ ∂θ_q^{ν_q}`. The set of all `ν` with `|ν| ≤ r` is
//! stored in graded lexicographic order: by total degree first, then
//! lexicographically with larger leading exponents first. For `q = 2, r = 2`
//! this gives `00, 10, 01, 20, 11, 02`.

use std::collections::HashMap;

/// One Leibniz split `ν = part + rest` with coefficient `ν! / (part! rest!)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub part: usize,
    pub rest: usize,
    pub coef: f64,
}

#[derive(Debug, Clone)]
pub struct MultiIndexSet {
    q: usize,
    order: usize,
    items: Vec<Vec<u8>>,
    lookup: HashMap<Vec<u8>, usize>,
    splits: Vec<Vec<Split>>,
}

fn binomial(n: u8, k: u8) -> f64 {
    let mut c = 1.0;
    for i in 0..k {
        c = c * f64::from(n - i) / f64::from(i + 1);
    }
    c
}

/// Number of multi-indices with `|ν| ≤ r` in `q` variables: `(r+q)! / (r! q!)`.
pub fn bundle_size(q: usize, r: usize) -> usize {
    let mut c: u128 = 1;
    for i in 0..r as u128 {
        c = c * (q as u128 + i + 1) / (i + 1);
    }
    c as usize
}

fn compositions(q: usize, degree: usize, prefix: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
    if prefix.len() + 1 == q {
        prefix.push(degree as u8);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for first in (0..=degree).rev() {
        prefix.push(first as u8);
        compositions(q, degree - first, prefix, out);
        prefix.pop();
    }
}

impl MultiIndexSet {
    pub fn new(q: usize, order: usize) -> Self {
        let mut items = Vec::with_capacity(bundle_size(q, order));
        if q == 0 {
            items.push(Vec::new());
        } else {
            for degree in 0..=order {
                compositions(q, degree, &mut Vec::with_capacity(q), &mut items);
            }
        }
        let lookup: HashMap<Vec<u8>, usize> = items.iter().enumerate().map(|(i, v)| (v.clone(), i)).collect();
        let splits = items
            .iter()
            .map(|nu| {
                let support: Vec<usize> = (0..q).filter(|&a| nu[a] > 0).collect();
                let mut part = vec![0u8; q];
                let mut out = Vec::new();
                loop {
                    let rest: Vec<u8> = nu.iter().zip(&part).map(|(n, p)| n - p).collect();
                    let coef = support.iter().map(|&a| binomial(nu[a], part[a])).product();
                    out.push(Split {
                        part: lookup[&part],
                        rest: lookup[&rest],
                        coef,
                    });
                    // odometer over 0..=nu[a] on the support
                    let mut k = 0;
                    while k < support.len() {
                        let a = support[k];
                        if part[a] < nu[a] {
                            part[a] += 1;
                            break;
                        }
                        part[a] = 0;
                        k += 1;
                    }
                    if k == support.len() {
                        break;
                    }
                }
                out.sort_by_key(|sp| sp.part);
                out
            })
            .collect();
        Self {
            q,
            order,
            items,
            lookup,
            splits,
        }
    }

    pub fn param_dim(&self) -> usize {
        self.q
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn exponents(&self, i: usize) -> &[u8] {
        &self.items[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.items[i].iter().map(|&e| e as usize).sum()
    }

    pub fn index_of(&self, exponents: &[u8]) -> Option<usize> {
        self.lookup.get(exponents).copied()
    }

    /// Index of the multi-index whose parameter multiset is `params`.
    pub fn index_of_params(&self, params: &[usize]) -> Option<usize> {
        let mut e = vec![0u8; self.q];
        for &a in params {
            e[a] += 1;
        }
        self.index_of(&e)
    }

    /// Parameters of `ν` listed with multiplicity, in increasing order.
    pub fn params(&self, i: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for (a, &e) in self.items[i].iter().enumerate() {
            out.extend(std::iter::repeat_n(a, e as usize));
        }
        out
    }

    /// Index of the unit multi-index `e_a`.
    pub fn unit(&self, a: usize) -> usize {
        1 + a
    }

    /// Index of `e_a + e_b`; requires order ≥ 2.
    pub fn pair(&self, a: usize, b: usize) -> usize {
        self.index_of_params(&[a, b]).expect("order ≥ 2")
    }

    /// Index of `ν − e_a`, if `ν_a > 0`.
    pub fn lower(&self, i: usize, a: usize) -> Option<usize> {
        let nu = &self.items[i];
        if nu[a] == 0 {
            return None;
        }
        let mut e = nu.clone();
        e[a] -= 1;
        self.index_of(&e)
    }

    /// All Leibniz splits of `ν_i`, including `(0, ν)` and `(ν, 0)`.
    pub fn splits(&self, i: usize) -> &[Split] {
        &self.splits[i]
    }
}
