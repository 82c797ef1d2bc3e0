//! GARCH(1,1) and its linear-RNN generalization.
//!
//! `Y_t = σ_t ε_t`, `σ_t² = δ + α φ(Y_{t−1}) + β σ_{t−1}²` with `θ = (δ, α, β)`.
//! `φ(y) = y²` is GARCH(1,1); `φ(y) = |y|` is a linear recurrent variance
//! update on the absolute observation. The filter statistic is `σ_t²`, which is
//! a deterministic function of past observations.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{GhmmError, Result};
use crate::ghmm::{Ghmm, LogLikDerivs, SampledPath};
use crate::montecarlo::{BatchMeans, McRun, StreamKey};
use crate::multi_index::MultiIndexSet;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InputMap {
    Square,
    Abs,
}

impl InputMap {
    pub fn apply(self, y: f64) -> f64 {
        match self {
            InputMap::Square => y * y,
            InputMap::Abs => y.abs(),
        }
    }
}

/// Initial variance convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sigma0 {
    /// `δ / (1 − α − β)`, differentiated with respect to θ.
    StationaryMean,
    /// A constant with zero parameter derivatives.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Garch11Spec {
    pub delta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub sigma0: Sigma0,
}

impl Garch11Spec {
    pub fn theta(&self) -> [f64; 3] {
        [self.delta, self.alpha, self.beta]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Garch11 {
    pub sigma0: Sigma0,
    pub input: InputMap,
}

#[derive(Debug, Clone)]
pub struct GarchParams {
    delta: f64,
    alpha: f64,
    beta: f64,
    set: MultiIndexSet,
    /// `D^ν σ₀²` per multi-index.
    s0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GarchSens {
    /// `D^ν σ_t²` per multi-index (slot 0 is σ_t² itself).
    pub ds: Vec<f64>,
    pub score: Vec<f64>,
    pub hessian: Vec<f64>,
}

/// Validates the spec and returns the model with its parameter vector.
pub fn garch11(spec: &Garch11Spec) -> Result<(Garch11, Vec<f64>)> {
    let model = Garch11 {
        sigma0: spec.sigma0,
        input: InputMap::Square,
    };
    let theta = spec.theta().to_vec();
    model.bind(&theta, 0)?;
    Ok((model, theta))
}

fn log_density(y: f64, s: f64) -> f64 {
    -0.5 * (LN_2PI + s.ln() + y * y / s)
}

fn factorial(m: usize) -> f64 {
    (1..=m).map(|i| i as f64).product()
}

impl Garch11 {
    pub fn new(sigma0: Sigma0) -> Self {
        Self {
            sigma0,
            input: InputMap::Square,
        }
    }

    pub fn linear_rnn(sigma0: Sigma0, input: InputMap) -> Self {
        Self { sigma0, input }
    }

    fn validate(&self, theta: &[f64]) -> Result<()> {
        for (name, v) in ["delta", "alpha", "beta"].iter().zip(theta) {
            if *v <= 0.0 {
                return Err(GhmmError::param(*name, format!("{v} must be positive")));
            }
        }
        if theta[1] + theta[2] >= 1.0 {
            return Err(GhmmError::NonstationaryParameters {
                field: "beta".into(),
                reason: format!("alpha + beta = {} must be below 1", theta[1] + theta[2]),
            });
        }
        if let Sigma0::Fixed(v) = self.sigma0 {
            if !(v > 0.0 && v.is_finite()) {
                return Err(GhmmError::param("sigma0_sq", "must be positive"));
            }
        }
        Ok(())
    }

    fn absorb(&self, p: &GarchParams, s: &mut GarchSens, y: f64) {
        let q = 3;
        let v = s.ds[0];
        let d1 = 0.5 * (y * y - v) / (v * v);
        if p.set.order() >= 1 {
            for a in 0..q {
                s.score[a] += d1 * s.ds[p.set.unit(a)];
            }
        }
        if p.set.order() >= 2 {
            let d2 = 0.5 / (v * v) - y * y / (v * v * v);
            for a in 0..q {
                for b in a..q {
                    let h = d1 * s.ds[p.set.pair(a, b)] + d2 * s.ds[p.set.unit(a)] * s.ds[p.set.unit(b)];
                    s.hessian[a * q + b] += h;
                    if a != b {
                        s.hessian[b * q + a] += h;
                    }
                }
            }
        }
    }
}

impl Ghmm for Garch11 {
    type Obs = f64;
    type Params = GarchParams;
    type Filter = f64;
    type Sens = GarchSens;

    fn param_dim(&self) -> usize {
        3
    }

    fn max_order(&self) -> usize {
        3
    }

    fn bind(&self, theta: &[f64], order: usize) -> Result<GarchParams> {
        self.check_dim(theta)?;
        self.check_order(order)?;
        self.validate(theta)?;
        let (delta, alpha, beta) = (theta[0], theta[1], theta[2]);
        let set = MultiIndexSet::new(3, order);
        let s0 = (0..set.len())
            .map(|i| match self.sigma0 {
                Sigma0::Fixed(v) => {
                    if i == 0 {
                        v
                    } else {
                        0.0
                    }
                }
                Sigma0::StationaryMean => {
                    let e = set.exponents(i);
                    let m = (e[1] + e[2]) as usize;
                    let u = 1.0 - alpha - beta;
                    let g = factorial(m) / u.powi(m as i32 + 1);
                    match e[0] {
                        0 => delta * g,
                        1 => g,
                        _ => 0.0,
                    }
                }
            })
            .collect();
        Ok(GarchParams {
            delta,
            alpha,
            beta,
            set,
            s0,
        })
    }

    fn filter_init(&self, p: &GarchParams, y0: &f64) -> Result<(f64, f64)> {
        let s = p.s0[0];
        Ok((s, log_density(*y0, s)))
    }

    fn filter_update(&self, p: &GarchParams, s: &f64, y_prev: &f64, y: &f64) -> Result<(f64, f64)> {
        let next = p.delta + p.alpha * self.input.apply(*y_prev) + p.beta * s;
        if !next.is_finite() {
            return Err(GhmmError::NonFinite("sigma^2".into()));
        }
        Ok((next, log_density(*y, next)))
    }

    fn sens_init(&self, p: &GarchParams, y0: &f64) -> Result<(GarchSens, f64)> {
        let mut s = GarchSens {
            ds: p.s0.clone(),
            score: vec![0.0; 3],
            hessian: vec![0.0; 9],
        };
        self.absorb(p, &mut s, *y0);
        Ok((s.clone(), log_density(*y0, s.ds[0])))
    }

    fn sens_update(&self, p: &GarchParams, s: &GarchSens, y_prev: &f64, y: &f64) -> Result<(GarchSens, f64)> {
        let phi = self.input.apply(*y_prev);
        let set = &p.set;
        let mut ds = vec![0.0; set.len()];
        for (i, out) in ds.iter_mut().enumerate() {
            let mut v = p.beta * s.ds[i];
            if let Some(j) = set.lower(i, 2) {
                v += f64::from(set.exponents(i)[2]) * s.ds[j];
            }
            match set.degree(i) {
                0 => v += p.delta + p.alpha * phi,
                1 if i == set.unit(0) => v += 1.0,
                1 if i == set.unit(1) => v += phi,
                _ => {}
            }
            *out = v;
        }
        if !ds.iter().all(|v| v.is_finite()) {
            return Err(GhmmError::NonFinite("sigma^2 derivatives".into()));
        }
        let mut next = GarchSens {
            ds,
            score: s.score.clone(),
            hessian: s.hessian.clone(),
        };
        self.absorb(p, &mut next, *y);
        let inc = log_density(*y, next.ds[0]);
        Ok((next, inc))
    }

    fn sens_derivs(&self, p: &GarchParams, s: &GarchSens) -> LogLikDerivs {
        LogLikDerivs {
            score: if p.set.order() >= 1 {
                s.score.clone()
            } else {
                Vec::new()
            },
            hessian: if p.set.order() >= 2 {
                s.hessian.clone()
            } else {
                Vec::new()
            },
        }
    }

    fn simulate(&self, p: &GarchParams, n: usize, key: StreamKey, _x0: Option<usize>) -> Result<SampledPath<f64>> {
        let mut rng = key.rng();
        let mut s = p.s0[0];
        let mut obs = Vec::with_capacity(n);
        for t in 0..n {
            if t > 0 {
                s = p.delta + p.alpha * self.input.apply(obs[t - 1]) + p.beta * s;
            }
            let z: f64 = StandardNormal.sample(&mut rng);
            obs.push(s.sqrt() * z);
        }
        Ok(SampledPath { obs, hidden: None })
    }
}

/// Variance path `σ_t²` implied by observations under `theta`.
pub fn variance_path(model: &Garch11, theta: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let p = model.bind(theta, 0)?;
    let mut out = Vec::with_capacity(y.len());
    let mut s = p.s0[0];
    for t in 0..y.len() {
        if t > 0 {
            s = p.delta + p.alpha * model.input.apply(y[t - 1]) + p.beta * s;
        }
        out.push(s);
    }
    Ok(out)
}

/// Monte Carlo value with its batch-means standard error.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SeriesEstimate {
    pub value: f64,
    pub se: f64,
    pub truncation: usize,
}

/// Number of lags kept: the smallest `k` with `β^k < 1e-12`.
pub fn series_truncation(beta: f64) -> usize {
    if beta <= 0.0 {
        return 1;
    }
    let mut k = 1;
    let mut b = beta;
    while b >= 1e-12 {
        b *= beta;
        k += 1;
    }
    k
}

/// Long-run average of `(Σ_{k=1}^{K} β^{k−1} σ_{t−k}²)² / (2 σ_t⁴)` along a variance path.
///
/// Each term is summed explicitly, without reusing the derivative recursion.
pub fn beta_series_from_path(sigma2: &[f64], beta: f64, burn_in: usize) -> Result<SeriesEstimate> {
    let k = series_truncation(beta);
    let start = burn_in.max(k);
    if sigma2.len() <= start {
        return Err(GhmmError::TooShort {
            len: sigma2.len(),
            needed: start,
        });
    }
    let powers: Vec<f64> = (0..k).map(|j| beta.powi(j as i32)).collect();
    let mut bm = BatchMeans::new(sigma2.len() - start, 1)?;
    for t in start..sigma2.len() {
        let sum: f64 = powers.iter().enumerate().map(|(j, b)| b * sigma2[t - 1 - j]).sum();
        let v = sigma2[t];
        bm.push(&[sum * sum / (2.0 * v * v)]);
    }
    let (m, se) = bm.finish()?;
    Ok(SeriesEstimate {
        value: m[0],
        se: se[0],
        truncation: k,
    })
}

/// Series estimate of the (β, β) Fisher entry from one simulated stationary path.
pub fn garch_fisher_series(spec: &Garch11Spec, run: &McRun) -> Result<SeriesEstimate> {
    let (model, theta) = garch11(spec)?;
    let p = model.bind(&theta, 0)?;
    let path = model.simulate(&p, run.n, run.key(), None)?;
    let sigma2 = variance_path(&model, &theta, &path.obs)?;
    beta_series_from_path(&sigma2, spec.beta, run.burn_in)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ghmm::{filter_step, init_filter};
    use crate::sensitivity::init_sensitivity;

    fn spec() -> Garch11Spec {
        Garch11Spec {
            delta: 0.1,
            alpha: 0.2,
            beta: 0.7,
            sigma0: Sigma0::Fixed(1.0),
        }
    }

    #[test]
    fn one_step_recursion() {
        let (m, th) = garch11(&spec()).unwrap();
        let s0 = init_filter(&m, &th, &0.5).unwrap();
        let s1 = filter_step(&m, &th, &s0, &0.5, &0.0).unwrap();
        assert!((s1.stat - 0.85).abs() < 1e-15);
    }

    #[test]
    fn one_step_beta_derivative() {
        let (m, th) = garch11(&spec()).unwrap();
        let p = m.bind(&th, 1).unwrap();
        let b = init_sensitivity(&m, &th, &0.5, 1).unwrap();
        let (s1, _) = m.sens_update(&p, &b.stat, &0.5, &0.3).unwrap();
        assert!((s1.ds[p.set.unit(2)] - 1.0).abs() < 1e-15);
        assert!((s1.ds[p.set.unit(0)] - 1.0).abs() < 1e-15);
        assert!((s1.ds[p.set.unit(1)] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn stationary_mean_default() {
        let m = Garch11::new(Sigma0::StationaryMean);
        let p = m.bind(&[0.1, 0.2, 0.7], 0).unwrap();
        assert!((p.s0[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nonstationary_rejected_with_field() {
        let err = garch11(&Garch11Spec {
            delta: 0.1,
            alpha: 0.3,
            beta: 0.7,
            sigma0: Sigma0::StationaryMean,
        })
        .unwrap_err();
        assert_eq!(err.field(), Some("beta"));
    }

    #[test]
    fn initial_variance_derivatives_match_finite_differences() {
        let m = Garch11::new(Sigma0::StationaryMean);
        let th = [0.1, 0.2, 0.7];
        let p = m.bind(&th, 2).unwrap();
        let h = 1e-6;
        for a in 0..3 {
            let mut tp = th;
            tp[a] += h;
            let mut tm = th;
            tm[a] -= h;
            let pp = m.bind(&tp, 1).unwrap();
            let pm = m.bind(&tm, 1).unwrap();
            let fd = (pp.s0[0] - pm.s0[0]) / (2.0 * h);
            assert!((fd - p.s0[p.set.unit(a)]).abs() < 1e-7);
            for b in 0..3 {
                let fd2 = (pp.s0[pp.set.unit(b)] - pm.s0[pm.set.unit(b)]) / (2.0 * h);
                assert!((fd2 - p.s0[p.set.pair(a, b)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn variance_stays_above_delta() {
        let (m, th) = garch11(&spec()).unwrap();
        let t = crate::montecarlo::simulate(&m, &th, 5000, 3, None).unwrap();
        let v = variance_path(&m, &th, &t.obs).unwrap();
        assert!(v.iter().skip(1).all(|&s| s >= 0.1));
    }

    #[test]
    fn constant_variance_series() {
        let c = 2.0;
        let beta = 0.6;
        let est = beta_series_from_path(&vec![c; 2000], beta, 0).unwrap();
        let exact = 1.0 / (2.0 * (1.0 - beta) * (1.0 - beta));
        assert!((est.value - exact).abs() < 1e-9);
        assert!(est.se < 1e-12);
    }

    #[test]
    fn tiny_beta_series_keeps_first_term() {
        let path: Vec<f64> = (0..500).map(|i| 1.0 + (i % 3) as f64).collect();
        let est = beta_series_from_path(&path, 1e-13, 0).unwrap();
        let direct: f64 = (1..500)
            .map(|t| path[t - 1].powi(2) / (2.0 * path[t].powi(2)))
            .sum::<f64>()
            / 499.0;
        assert!((est.value - direct).abs() < 1e-9);
    }
}
