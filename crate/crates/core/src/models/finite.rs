//! Finite hidden-state models.
//!
//! The filter statistic is a normalized weight vector over states. The
//! derivative bundle stores `W^ν = D^ν[unnormalized filter]` for every
//! multi-index, all divided by the base normalizer, so that
//! `∂_a log L = Σ_x W^{e_a}(x)` and
//! `∂_ab log L = Σ_x W^{e_a+e_b}(x) − ∂_a log L · ∂_b log L`.
//!
//! One step applies the Leibniz expansion in two stages: the prediction
//! `U^μ(x) = Σ_{α+β=μ} C(μ,α) Σ_s W^α(s) D^β A(s,x)`, then the emission
//! `W^ν(x) = Σ_{μ+γ=ν} C(ν,μ) D^γ f(y|x) U^μ(x)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::loglinear::{LogLinearTable, TableJet};
use crate::error::{GhmmError, Result};
use crate::ghmm::{normalize, Ghmm, LogLikDerivs, SampledPath};
use crate::montecarlo::StreamKey;
use crate::multi_index::MultiIndexSet;

const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum Transition {
    Fixed(DMatrix<f64>),
    LogLinear(LogLinearTable),
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeanSource {
    Fixed(f64),
    Param(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Emission {
    /// Two-symbol emission with labels 1 and 2: `P(Y=1|x) = base_x + slope_x θ_param`.
    /// `bounds` is the open admissible interval for the parameter.
    AffineBernoulli {
        base: Vec<f64>,
        slope: Vec<f64>,
        param: usize,
        bounds: (f64, f64),
    },
    /// Rows are states, columns are symbols `0..m`.
    Fixed(DMatrix<f64>),
    /// Rows are states, columns are symbols `0..m`.
    LogLinear(LogLinearTable),
    /// `N(mean_x, sd²)`.
    Gaussian { means: Vec<MeanSource>, sd: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialLaw {
    Stationary,
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteHmm {
    n_states: usize,
    q: usize,
    transition: Transition,
    emission: Emission,
    initial: InitialLaw,
}

#[derive(Debug, Clone)]
enum EmissionBound {
    Bernoulli {
        prob: Vec<f64>,
        slope: Vec<f64>,
        unit: Option<usize>,
    },
    /// `probs[symbol][ν][x]`.
    Table {
        probs: Vec<Vec<Vec<f64>>>,
        nonzero: Vec<bool>,
    },
    Gaussian {
        means: Vec<f64>,
        source: Vec<Option<usize>>,
        sd: f64,
    },
}

/// Primitives of a [`FiniteHmm`] bound to one parameter vector.
#[derive(Debug, Clone)]
pub struct FiniteParams {
    set: MultiIndexSet,
    /// Transition rows as `(col, prob)`.
    rows: Vec<Vec<(usize, f64)>>,
    trans_derivs: Vec<Vec<(usize, usize, f64)>>,
    init: Vec<Vec<f64>>,
    init_nonzero: Vec<bool>,
    emission: EmissionBound,
}

impl FiniteParams {
    pub fn set(&self) -> &MultiIndexSet {
        &self.set
    }

    pub fn initial_law(&self) -> &[f64] {
        &self.init[0]
    }

    pub fn transition_dense(&self) -> DMatrix<f64> {
        let d = self.rows.len();
        let mut a = DMatrix::zeros(d, d);
        for (s, row) in self.rows.iter().enumerate() {
            for &(x, v) in row {
                a[(s, x)] += v;
            }
        }
        a
    }

    /// `D^ν A` as a dense matrix.
    pub fn transition_deriv_dense(&self, idx: usize) -> DMatrix<f64> {
        let d = self.rows.len();
        let mut a = DMatrix::zeros(d, d);
        if idx == 0 {
            return self.transition_dense();
        }
        for &(s, x, v) in &self.trans_derivs[idx] {
            a[(s, x)] += v;
        }
        a
    }

    pub fn initial_deriv(&self, idx: usize) -> &[f64] {
        &self.init[idx]
    }
}

/// Scratch for emission derivatives at one observation: `vals[ν][x]`.
#[derive(Debug, Clone)]
struct EmissionJet {
    vals: Vec<Vec<f64>>,
    nonzero: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteSens {
    /// `W^ν` for each multi-index, scaled so that `Σ_x W^0(x) = 1`.
    pub w: Vec<Vec<f64>>,
}

fn check_stochastic(m: &DMatrix<f64>, what: &str) -> Result<()> {
    for (r, row) in m.row_iter().enumerate() {
        if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(GhmmError::InvalidStochasticMatrix(format!(
                "{what} row {r} has a negative or non-finite entry"
            )));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > PROB_TOL {
            return Err(GhmmError::InvalidStochasticMatrix(format!(
                "{what} row {r} sums to {s}"
            )));
        }
    }
    Ok(())
}

/// Integer symbol index for a categorical observation, if in range.
pub fn symbol_index(y: f64, m: usize) -> Option<usize> {
    (y >= 0.0 && y.fract() == 0.0 && (y as usize) < m).then_some(y as usize)
}

fn sample_index(u: f64, probs: impl Iterator<Item = (usize, f64)>) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs {
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Probabilists' Hermite polynomial `He_k(z)`, k ≤ 3.
fn hermite(k: usize, z: f64) -> f64 {
    match k {
        0 => 1.0,
        1 => z,
        2 => z * z - 1.0,
        3 => z * z * z - 3.0 * z,
        _ => unreachable!("order capped at 3"),
    }
}

/// Stationary law `π A = π` and its derivatives, in graded order.
fn stationary_jet(
    d: usize,
    rows: &[Vec<(usize, f64)>],
    derivs: &[Vec<(usize, usize, f64)>],
    set: &MultiIndexSet,
) -> Result<Vec<Vec<f64>>> {
    // Solve B π = e_last where B = (A − I)ᵀ with the last row replaced by ones.
    let mut b = DMatrix::<f64>::zeros(d, d);
    for (s, row) in rows.iter().enumerate() {
        for &(x, v) in row {
            b[(x, s)] += v;
        }
    }
    for i in 0..d {
        b[(i, i)] -= 1.0;
    }
    for j in 0..d {
        b[(d - 1, j)] = 1.0;
    }
    let lu = b.lu();
    let mut rhs = DVector::zeros(d);
    rhs[d - 1] = 1.0;
    let pi = lu
        .solve(&rhs)
        .ok_or_else(|| GhmmError::InvalidStochasticMatrix("transition matrix has no unique stationary law".into()))?;
    let mut out = vec![pi.iter().copied().collect::<Vec<f64>>()];
    for nu in 1..set.len() {
        // Σ_{μ+β=ν, β≠0} C(ν,μ) (D^β A)ᵀ D^μ π, moved to the right-hand side
        let mut r = DVector::zeros(d);
        for sp in set.splits(nu) {
            if sp.rest == 0 {
                continue;
            }
            for &(s, x, v) in &derivs[sp.rest] {
                r[x] -= sp.coef * v * out[sp.part][s];
            }
        }
        r[d - 1] = 0.0;
        let sol = lu
            .solve(&r)
            .ok_or_else(|| GhmmError::InvalidStochasticMatrix("singular stationary system".into()))?;
        out.push(sol.iter().copied().collect());
    }
    Ok(out)
}

impl FiniteHmm {
    pub fn new(
        n_states: usize,
        q: usize,
        transition: Transition,
        emission: Emission,
        initial: InitialLaw,
    ) -> Result<Self> {
        if n_states == 0 {
            return Err(GhmmError::DimensionMismatch("model needs at least one state".into()));
        }
        match &transition {
            Transition::Fixed(a) => {
                if a.nrows() != n_states || a.ncols() != n_states {
                    return Err(GhmmError::DimensionMismatch(format!(
                        "transition is {}x{}, expected {n_states}x{n_states}",
                        a.nrows(),
                        a.ncols()
                    )));
                }
                check_stochastic(a, "transition")?;
            }
            Transition::LogLinear(t) => {
                if t.rows() != n_states || t.cols() != n_states {
                    return Err(GhmmError::DimensionMismatch("transition table shape".into()));
                }
            }
        }
        match &emission {
            Emission::AffineBernoulli { base, slope, param, .. } => {
                if base.len() != n_states || slope.len() != n_states || *param >= q {
                    return Err(GhmmError::DimensionMismatch("affine Bernoulli emission shape".into()));
                }
            }
            Emission::Fixed(e) => {
                if e.nrows() != n_states {
                    return Err(GhmmError::DimensionMismatch("emission rows must equal states".into()));
                }
                check_stochastic(e, "emission")?;
            }
            Emission::LogLinear(t) => {
                if t.rows() != n_states {
                    return Err(GhmmError::DimensionMismatch("emission rows must equal states".into()));
                }
            }
            Emission::Gaussian { means, sd } => {
                if means.len() != n_states {
                    return Err(GhmmError::DimensionMismatch("one mean per state required".into()));
                }
                if !(*sd > 0.0 && sd.is_finite()) {
                    return Err(GhmmError::param("sd", "must be positive"));
                }
                if means.iter().any(|m| matches!(m, MeanSource::Param(a) if *a >= q)) {
                    return Err(GhmmError::DimensionMismatch("mean parameter out of range".into()));
                }
            }
        }
        if let InitialLaw::Fixed(v) = &initial {
            if v.len() != n_states {
                return Err(GhmmError::DimensionMismatch("initial law length".into()));
            }
            let s: f64 = v.iter().sum();
            if v.iter().any(|x| *x < 0.0 || !x.is_finite()) || (s - 1.0).abs() > PROB_TOL {
                return Err(GhmmError::InvalidStochasticMatrix(format!("initial law sums to {s}")));
            }
        }
        Ok(Self {
            n_states,
            q,
            transition,
            emission,
            initial,
        })
    }

    /// Three-state chain with uniform transitions and `P(Y=1|x) = (1, 0.5+δ, 0)`; `θ = (δ)`.
    pub fn three_state() -> Self {
        Self::new(
            3,
            1,
            Transition::Fixed(DMatrix::from_element(3, 3, 1.0 / 3.0)),
            Emission::AffineBernoulli {
                base: vec![1.0, 0.5, 0.0],
                slope: vec![0.0, 1.0, 0.0],
                param: 0,
                bounds: (-0.5, 0.5),
            },
            InitialLaw::Stationary,
        )
        .expect("static model is valid")
    }

    /// Bernoulli emission family with one scalar parameter; the admissible
    /// interval is the open set keeping every `P(Y=1|x)` inside `[0, 1]`.
    pub fn affine_bernoulli(
        transition: DMatrix<f64>,
        base: Vec<f64>,
        slope: Vec<f64>,
        initial: InitialLaw,
    ) -> Result<Self> {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for (&b, &s) in base.iter().zip(&slope) {
            if !(0.0..=1.0).contains(&b) && s == 0.0 {
                return Err(GhmmError::param("q_base", "fixed emission probability outside [0, 1]"));
            }
            if s != 0.0 {
                let (a, c) = ((0.0 - b) / s, (1.0 - b) / s);
                lo = lo.max(a.min(c));
                hi = hi.min(a.max(c));
            }
        }
        Self::new(
            base.len(),
            1,
            Transition::Fixed(transition),
            Emission::AffineBernoulli {
                base,
                slope,
                param: 0,
                bounds: (lo, hi),
            },
            initial,
        )
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn transition(&self) -> &Transition {
        &self.transition
    }

    pub fn emission(&self) -> &Emission {
        &self.emission
    }

    /// Finite observation alphabet, or `None` for continuous emissions.
    pub fn alphabet(&self) -> Option<Vec<f64>> {
        match &self.emission {
            Emission::AffineBernoulli { .. } => Some(vec![1.0, 2.0]),
            Emission::Fixed(e) => Some((0..e.ncols()).map(|s| s as f64).collect()),
            Emission::LogLinear(t) => Some((0..t.cols()).map(|s| s as f64).collect()),
            Emission::Gaussian { .. } => None,
        }
    }

    /// `f(y|x)` for every state.
    pub fn emission_values(&self, p: &FiniteParams, y: f64, out: &mut [f64]) {
        match &p.emission {
            EmissionBound::Bernoulli { prob, .. } => {
                for (o, &q) in out.iter_mut().zip(prob) {
                    *o = if y == 1.0 {
                        q
                    } else if y == 2.0 {
                        1.0 - q
                    } else {
                        0.0
                    };
                }
            }
            EmissionBound::Table { probs, .. } => match symbol_index(y, probs.len()) {
                Some(s) => out.copy_from_slice(&probs[s][0]),
                None => out.iter_mut().for_each(|o| *o = 0.0),
            },
            EmissionBound::Gaussian { means, sd, .. } => {
                let norm = 1.0 / (sd * (2.0 * std::f64::consts::PI).sqrt());
                for (o, &mu) in out.iter_mut().zip(means) {
                    let z = (y - mu) / sd;
                    *o = norm * (-0.5 * z * z).exp();
                }
            }
        }
    }

    fn emission_jet(&self, p: &FiniteParams, y: f64, jet: &mut EmissionJet) {
        let k = p.set.len();
        let d = self.n_states;
        jet.nonzero.iter_mut().for_each(|v| *v = false);
        jet.nonzero[0] = true;
        self.emission_values(p, y, &mut jet.vals[0]);
        match &p.emission {
            EmissionBound::Bernoulli { slope, unit, .. } => {
                if let Some(u) = *unit {
                    let sign = if y == 1.0 {
                        1.0
                    } else if y == 2.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    for (o, &s) in jet.vals[u].iter_mut().zip(slope) {
                        *o = sign * s;
                    }
                    jet.nonzero[u] = sign != 0.0;
                }
            }
            EmissionBound::Table { probs, nonzero } => {
                if let Some(s) = symbol_index(y, probs.len()) {
                    for nu in 1..k {
                        if nonzero[nu] {
                            jet.vals[nu].copy_from_slice(&probs[s][nu]);
                            jet.nonzero[nu] = true;
                        }
                    }
                }
            }
            EmissionBound::Gaussian { means, source, sd } => {
                for nu in 1..k {
                    let params = p.set.params(nu);
                    let a = params[0];
                    if params.iter().any(|&b| b != a) {
                        continue;
                    }
                    let order = params.len();
                    let mut any = false;
                    for x in 0..d {
                        jet.vals[nu][x] = if source[x] == Some(a) {
                            let z = (y - means[x]) / sd;
                            any = true;
                            jet.vals[0][x] * hermite(order, z) / sd.powi(order as i32)
                        } else {
                            0.0
                        };
                    }
                    jet.nonzero[nu] = any;
                }
            }
        }
    }

    fn new_jet(&self, k: usize) -> EmissionJet {
        EmissionJet {
            vals: vec![vec![0.0; self.n_states]; k],
            nonzero: vec![false; k],
        }
    }

    fn bind_emission(&self, theta: &[f64], set: &MultiIndexSet) -> Result<EmissionBound> {
        let d = self.n_states;
        Ok(match &self.emission {
            Emission::AffineBernoulli {
                base,
                slope,
                param,
                bounds,
            } => {
                let v = theta[*param];
                if !(v > bounds.0 && v < bounds.1) {
                    return Err(GhmmError::param(
                        "delta",
                        format!("{v} outside the open interval ({}, {})", bounds.0, bounds.1),
                    ));
                }
                let prob: Vec<f64> = base.iter().zip(slope).map(|(b, s)| b + s * v).collect();
                EmissionBound::Bernoulli {
                    prob,
                    slope: slope.clone(),
                    unit: (set.order() >= 1).then(|| set.unit(*param)),
                }
            }
            Emission::Fixed(e) => {
                let mut nonzero = vec![false; set.len()];
                nonzero[0] = true;
                let probs = (0..e.ncols())
                    .map(|s| {
                        let mut per = vec![vec![0.0; d]; set.len()];
                        per[0] = e.column(s).iter().copied().collect();
                        per
                    })
                    .collect();
                EmissionBound::Table { probs, nonzero }
            }
            Emission::LogLinear(t) => {
                let jet = t.evaluate(theta, (set.order() > 0).then_some(set))?;
                let m = t.cols();
                let mut probs = vec![vec![vec![0.0; d]; set.len()]; m];
                for (x, row) in jet.rows.iter().enumerate() {
                    for &(s, v) in row {
                        probs[s][0][x] = v;
                    }
                }
                let mut nonzero = vec![false; set.len()];
                nonzero[0] = true;
                for (nu, entries) in jet.derivs.iter().enumerate().skip(1) {
                    for &(x, s, v) in entries {
                        probs[s][nu][x] += v;
                        nonzero[nu] = true;
                    }
                }
                EmissionBound::Table { probs, nonzero }
            }
            Emission::Gaussian { means, sd } => EmissionBound::Gaussian {
                means: means
                    .iter()
                    .map(|m| match m {
                        MeanSource::Fixed(v) => *v,
                        MeanSource::Param(a) => theta[*a],
                    })
                    .collect(),
                source: means
                    .iter()
                    .map(|m| match m {
                        MeanSource::Fixed(_) => None,
                        MeanSource::Param(a) => Some(*a),
                    })
                    .collect(),
                sd: *sd,
            },
        })
    }

    fn bind_transition(&self, theta: &[f64], set: &MultiIndexSet) -> Result<TableJet> {
        Ok(match &self.transition {
            Transition::Fixed(a) => TableJet {
                rows: a
                    .row_iter()
                    .map(|r| {
                        r.iter()
                            .enumerate()
                            .filter(|(_, v)| **v != 0.0)
                            .map(|(c, &v)| (c, v))
                            .collect()
                    })
                    .collect(),
                derivs: vec![Vec::new(); set.len()],
            },
            Transition::LogLinear(t) => t.evaluate(theta, (set.order() > 0).then_some(set))?,
        })
    }

    fn run_leibniz(&self, p: &FiniteParams, prev: &[Vec<f64>], e: &EmissionJet) -> Vec<Vec<f64>> {
        let d = self.n_states;
        let k = p.set.len();
        let mut u = vec![vec![0.0; d]; k];
        for (mu, um) in u.iter_mut().enumerate() {
            for sp in p.set.splits(mu) {
                let w = &prev[sp.part];
                if sp.rest == 0 {
                    for (s, row) in p.rows.iter().enumerate() {
                        let ws = w[s];
                        if ws != 0.0 {
                            for &(x, a) in row {
                                um[x] += ws * a;
                            }
                        }
                    }
                } else {
                    for &(s, x, a) in &p.trans_derivs[sp.rest] {
                        um[x] += sp.coef * w[s] * a;
                    }
                }
            }
        }
        self.apply_emission(p, &u, e)
    }

    fn apply_emission(&self, p: &FiniteParams, u: &[Vec<f64>], e: &EmissionJet) -> Vec<Vec<f64>> {
        let d = self.n_states;
        let k = p.set.len();
        let mut w = vec![vec![0.0; d]; k];
        for (nu, wn) in w.iter_mut().enumerate() {
            for sp in p.set.splits(nu) {
                if !e.nonzero[sp.rest] {
                    continue;
                }
                let f = &e.vals[sp.rest];
                let um = &u[sp.part];
                for x in 0..d {
                    wn[x] += sp.coef * f[x] * um[x];
                }
            }
        }
        w
    }

    /// Draws one symbol (or value) for hidden state `x`.
    fn sample_emission(&self, p: &FiniteParams, x: usize, rng: &mut impl Rng) -> f64 {
        match &p.emission {
            EmissionBound::Bernoulli { prob, .. } => {
                if rng.random::<f64>() < prob[x] {
                    1.0
                } else {
                    2.0
                }
            }
            EmissionBound::Table { probs, .. } => {
                let u = rng.random::<f64>();
                sample_index(u, probs.iter().enumerate().map(|(s, pr)| (s, pr[0][x]))) as f64
            }
            EmissionBound::Gaussian { means, sd, .. } => {
                let z: f64 = StandardNormal.sample(rng);
                means[x] + sd * z
            }
        }
    }
}

fn scale_all(w: &mut [Vec<f64>]) -> Result<f64> {
    let c: f64 = w[0].iter().sum();
    if !c.is_finite() || w.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
        return Err(GhmmError::NonFinite("derivative filter".into()));
    }
    if c <= 0.0 {
        return Err(GhmmError::AllZeroWeights);
    }
    let inv = 1.0 / c;
    for v in w.iter_mut() {
        v.iter_mut().for_each(|x| *x *= inv);
    }
    Ok(c.ln())
}

impl Ghmm for FiniteHmm {
    type Obs = f64;
    type Params = FiniteParams;
    type Filter = Vec<f64>;
    type Sens = FiniteSens;

    fn param_dim(&self) -> usize {
        self.q
    }

    fn max_order(&self) -> usize {
        3
    }

    fn bind(&self, theta: &[f64], order: usize) -> Result<FiniteParams> {
        self.check_dim(theta)?;
        self.check_order(order)?;
        let set = MultiIndexSet::new(self.q, order);
        let trans = self.bind_transition(theta, &set)?;
        let emission = self.bind_emission(theta, &set)?;
        let d = self.n_states;
        let init = match &self.initial {
            InitialLaw::Stationary => stationary_jet(d, &trans.rows, &trans.derivs, &set)?,
            InitialLaw::Fixed(v) => {
                let mut out = vec![vec![0.0; d]; set.len()];
                out[0] = v.clone();
                out
            }
        };
        let init_nonzero = init.iter().map(|v| v.iter().any(|x| *x != 0.0)).collect();
        Ok(FiniteParams {
            set,
            rows: trans.rows,
            trans_derivs: trans.derivs,
            init,
            init_nonzero,
            emission,
        })
    }

    fn filter_init(&self, p: &FiniteParams, y0: &f64) -> Result<(Vec<f64>, f64)> {
        let mut w = vec![0.0; self.n_states];
        self.emission_values(p, *y0, &mut w);
        for (wx, pi) in w.iter_mut().zip(&p.init[0]) {
            *wx *= pi;
        }
        let inc = normalize(&mut w)?;
        Ok((w, inc))
    }

    fn filter_update(&self, p: &FiniteParams, f: &Vec<f64>, _y_prev: &f64, y: &f64) -> Result<(Vec<f64>, f64)> {
        let mut w = vec![0.0; self.n_states];
        for (s, row) in p.rows.iter().enumerate() {
            let ws = f[s];
            if ws != 0.0 {
                for &(x, a) in row {
                    w[x] += ws * a;
                }
            }
        }
        let mut e = vec![0.0; self.n_states];
        self.emission_values(p, *y, &mut e);
        for (wx, ex) in w.iter_mut().zip(&e) {
            *wx *= ex;
        }
        let inc = normalize(&mut w)?;
        Ok((w, inc))
    }

    fn sens_init(&self, p: &FiniteParams, y0: &f64) -> Result<(FiniteSens, f64)> {
        let mut e = self.new_jet(p.set.len());
        self.emission_jet(p, *y0, &mut e);
        let mut init = p.init.clone();
        for (v, nz) in init.iter_mut().zip(&p.init_nonzero) {
            if !nz {
                v.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        let mut w = self.apply_emission(p, &init, &e);
        let inc = scale_all(&mut w)?;
        Ok((FiniteSens { w }, inc))
    }

    fn sens_update(&self, p: &FiniteParams, s: &FiniteSens, _y_prev: &f64, y: &f64) -> Result<(FiniteSens, f64)> {
        let mut e = self.new_jet(p.set.len());
        self.emission_jet(p, *y, &mut e);
        let mut w = self.run_leibniz(p, &s.w, &e);
        let inc = scale_all(&mut w)?;
        Ok((FiniteSens { w }, inc))
    }

    fn sens_derivs(&self, p: &FiniteParams, s: &FiniteSens) -> LogLikDerivs {
        let q = self.q;
        let set = &p.set;
        if set.order() == 0 {
            return LogLikDerivs::default();
        }
        let score: Vec<f64> = (0..q).map(|a| s.w[set.unit(a)].iter().sum()).collect();
        let hessian = if set.order() >= 2 {
            let mut h = vec![0.0; q * q];
            for a in 0..q {
                for b in a..q {
                    let v = s.w[set.pair(a, b)].iter().sum::<f64>() - score[a] * score[b];
                    h[a * q + b] = v;
                    h[b * q + a] = v;
                }
            }
            h
        } else {
            Vec::new()
        };
        LogLikDerivs { score, hessian }
    }

    fn simulate(&self, p: &FiniteParams, n: usize, key: StreamKey, x0: Option<usize>) -> Result<SampledPath<f64>> {
        let mut rng = key.rng();
        let d = self.n_states;
        let mut x = match x0 {
            Some(x) if x >= d => {
                return Err(GhmmError::InvalidArgument(format!("x0 = {x} outside 0..{d}")));
            }
            Some(x) => x,
            None => {
                let u = rng.random::<f64>();
                sample_index(u, p.init[0].iter().copied().enumerate())
            }
        };
        let mut obs = Vec::with_capacity(n);
        let mut hidden = Vec::with_capacity(n);
        for t in 0..n {
            if t > 0 {
                let u = rng.random::<f64>();
                x = sample_index(u, p.rows[x].iter().copied());
            }
            hidden.push(x);
            obs.push(self.sample_emission(p, x, &mut rng));
        }
        Ok(SampledPath {
            obs,
            hidden: Some(hidden),
        })
    }
}

/// Transition/emission matrices with softmax logits relative to the first positive column.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteHmmSpec {
    pub transition: DMatrix<f64>,
    /// Rows are states, columns are symbols `0..m`.
    pub emission: DMatrix<f64>,
    pub initial: Option<Vec<f64>>,
}

fn softmax_table(m: &DMatrix<f64>, first_param: usize, theta: &mut Vec<f64>) -> Vec<Vec<super::loglinear::Outcome>> {
    m.row_iter()
        .map(|row| {
            let reference = row.iter().position(|v| *v > 0.0).unwrap_or(0);
            let base = row[reference];
            row.iter()
                .enumerate()
                .filter(|(_, v)| **v > 0.0)
                .map(|(c, &v)| {
                    if c == reference {
                        super::loglinear::Outcome {
                            col: c,
                            offset: 0.0,
                            features: vec![],
                        }
                    } else {
                        let a = first_param + theta.len();
                        theta.push((v / base).ln());
                        super::loglinear::Outcome {
                            col: c,
                            offset: 0.0,
                            features: vec![(a, 1.0)],
                        }
                    }
                })
                .collect()
        })
        .collect()
}

/// Softmax-parametrized discrete HMM; returns the model and the θ reproducing `spec`.
///
/// Zero entries are structural and carry no parameter. Transition logits come
/// first (row by row), then emission logits.
pub fn discrete_hmm(spec: &DiscreteHmmSpec) -> Result<(FiniteHmm, Vec<f64>)> {
    let d = spec.transition.nrows();
    if spec.transition.ncols() != d || spec.emission.nrows() != d {
        return Err(GhmmError::DimensionMismatch("discrete HMM shapes".into()));
    }
    check_stochastic(&spec.transition, "transition")?;
    check_stochastic(&spec.emission, "emission")?;
    let mut theta = Vec::new();
    let trans = softmax_table(&spec.transition, 0, &mut theta);
    let n_trans = theta.len();
    let mut emis_theta = Vec::new();
    let emis = softmax_table(&spec.emission, n_trans, &mut emis_theta);
    theta.extend(emis_theta);
    let q = theta.len();
    let model = FiniteHmm::new(
        d,
        q,
        Transition::LogLinear(LogLinearTable::new(d, d, trans, q)?),
        Emission::LogLinear(LogLinearTable::new(d, spec.emission.ncols(), emis, q)?),
        match &spec.initial {
            Some(v) => InitialLaw::Fixed(v.clone()),
            None => InitialLaw::Stationary,
        },
    )?;
    Ok((model, theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ghmm::{filter_step, init_filter, log_likelihood};

    const LN_HALF: f64 = -std::f64::consts::LN_2;

    #[test]
    fn three_state_initial_weights() {
        let m = FiniteHmm::three_state();
        let s = init_filter(&m, &[0.0], &1.0).unwrap();
        let expect = [2.0 / 3.0, 1.0 / 3.0, 0.0];
        for (a, b) in s.stat.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((s.log_norm - LN_HALF).abs() < 1e-15);
    }

    #[test]
    fn three_state_step_and_loglik() {
        let m = FiniteHmm::three_state();
        let s0 = init_filter(&m, &[0.0], &1.0).unwrap();
        let s1 = filter_step(&m, &[0.0], &s0, &1.0, &2.0).unwrap();
        let expect = [0.0, 1.0 / 3.0, 2.0 / 3.0];
        for (a, b) in s1.stat.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((s1.log_norm - s0.log_norm - LN_HALF).abs() < 1e-15);
        let ll = log_likelihood(&m, &[0.0], &[1.0, 2.0]).unwrap();
        assert!((ll + 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_emission_is_an_error() {
        let m = FiniteHmm::affine_bernoulli(
            DMatrix::from_element(3, 3, 1.0 / 3.0),
            vec![1.0; 3],
            vec![0.0; 3],
            InitialLaw::Stationary,
        )
        .unwrap();
        assert_eq!(init_filter(&m, &[0.0], &2.0).unwrap_err(), GhmmError::AllZeroWeights);
    }

    #[test]
    fn constant_emission_keeps_initial_law() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.4, 0.6]);
        let e = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let m = FiniteHmm::new(
            2,
            0,
            Transition::Fixed(a),
            Emission::Fixed(e),
            InitialLaw::Fixed(vec![0.3, 0.7]),
        )
        .unwrap();
        let s = init_filter(&m, &[], &1.0).unwrap();
        assert_eq!(s.stat, vec![0.3, 0.7]);
    }

    #[test]
    fn identity_transition_leaves_weights() {
        let e = DMatrix::from_row_slice(2, 2, &[0.25, 0.75, 0.25, 0.75]);
        let m = FiniteHmm::new(
            2,
            0,
            Transition::Fixed(DMatrix::identity(2, 2)),
            Emission::Fixed(e),
            InitialLaw::Fixed(vec![0.3, 0.7]),
        )
        .unwrap();
        let s0 = init_filter(&m, &[], &0.0).unwrap();
        let s1 = filter_step(&m, &[], &s0, &0.0, &1.0).unwrap();
        assert_eq!(s1.stat, s0.stat);
        assert!((s1.log_norm - s0.log_norm - 0.75f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn three_state_boundary_rejected() {
        let m = FiniteHmm::three_state();
        assert!(m.bind(&[0.5], 0).is_err());
        assert!(m.bind(&[-0.5], 0).is_err());
        assert!(m.bind(&[0.499], 0).is_ok());
    }

    #[test]
    fn three_state_marginal_and_stationary() {
        let m = FiniteHmm::three_state();
        let p = m.bind(&[0.0], 1).unwrap();
        for v in p.initial_law() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(p.initial_deriv(1).iter().all(|v| v.abs() < 1e-15));
        let mut e = [0.0; 3];
        m.emission_values(&p, 1.0, &mut e);
        let marginal: f64 = e.iter().zip(p.initial_law()).map(|(a, b)| a * b).sum();
        assert!((marginal - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_rows() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, 0.4, 0.6]);
        let e = DMatrix::from_element(2, 2, 0.5);
        let r = FiniteHmm::new(2, 0, Transition::Fixed(a), Emission::Fixed(e), InitialLaw::Stationary);
        assert!(matches!(r, Err(GhmmError::InvalidStochasticMatrix(_))));
    }

    #[test]
    fn stationary_derivatives_match_finite_differences() {
        let spec = DiscreteHmmSpec {
            transition: DMatrix::from_row_slice(3, 3, &[0.6, 0.3, 0.1, 0.2, 0.5, 0.3, 0.25, 0.25, 0.5]),
            emission: DMatrix::from_row_slice(3, 2, &[0.9, 0.1, 0.5, 0.5, 0.2, 0.8]),
            initial: None,
        };
        let (m, theta) = discrete_hmm(&spec).unwrap();
        let p = m.bind(&theta, 2).unwrap();
        let h = 1e-5;
        for a in 0..6 {
            let mut tp = theta.clone();
            tp[a] += h;
            let mut tm = theta.clone();
            tm[a] -= h;
            let pp = m.bind(&tp, 0).unwrap();
            let pm = m.bind(&tm, 0).unwrap();
            for x in 0..3 {
                let fd = (pp.initial_law()[x] - pm.initial_law()[x]) / (2.0 * h);
                assert!((fd - p.initial_deriv(p.set().unit(a))[x]).abs() < 1e-8);
            }
        }
        for v in (1..p.set().len()).map(|i| p.initial_deriv(i)) {
            assert!(v.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn discrete_spec_round_trips_probabilities() {
        let spec = DiscreteHmmSpec {
            transition: DMatrix::from_row_slice(2, 2, &[0.8, 0.2, 0.3, 0.7]),
            emission: DMatrix::from_row_slice(2, 3, &[0.6, 0.4, 0.0, 0.1, 0.2, 0.7]),
            initial: None,
        };
        let (m, theta) = discrete_hmm(&spec).unwrap();
        assert_eq!(theta.len(), 2 + 1 + 2);
        let p = m.bind(&theta, 0).unwrap();
        assert!((p.transition_dense() - &spec.transition).abs().max() < 1e-15);
        let mut e = [0.0; 2];
        m.emission_values(&p, 2.0, &mut e);
        assert!((e[0]).abs() < 1e-300 && (e[1] - 0.7).abs() < 1e-15);
    }
}
