//! Linear state space models, VARMA embedding and Kalman filtering.
//!
//! `X_{n+1} = Φ X_n + F ε_n`, `Y_n = H X_n + ε_n`, `ε_n ~ N(0, Σ)`. The same
//! noise drives state and observation, so the one-step predictor uses the
//! correlated-noise gain `K = (Φ P Hᵀ + F Σ) S⁻¹` with `S = H P Hᵀ + Σ`, and
//! `P ← Φ P Φᵀ + F Σ Fᵀ − K S Kᵀ`. The first predictive covariance solves
//! `P = Φ P Φᵀ + F Σ Fᵀ`.
//!
//! Parametrized models are affine in θ (as VARMA coefficients are), so
//! derivative recursions are Leibniz products of matrix jets.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{GhmmError, Result};
use crate::ghmm::{Ghmm, LogLikDerivs, SampledPath};
use crate::info::FisherEstimate;
use crate::montecarlo::{BatchMeans, McRun, StreamKey};
use crate::multi_index::MultiIndexSet;

const LN_2PI: f64 = 1.837_877_066_409_345_3;
/// Eigenvalues below `−PSD_TOL` count as a covariance defect.
pub const PSD_TOL: f64 = 1e-10;
pub const RICCATI_TOL: f64 = 1e-12;
pub const RICCATI_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct LssmSpec {
    pub phi: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

impl LssmSpec {
    pub fn state_dim(&self) -> usize {
        self.phi.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let (s, m) = (self.state_dim(), self.obs_dim());
        if self.phi.shape() != (s, s)
            || self.f.shape() != (s, m)
            || self.h.shape() != (m, s)
            || self.sigma.shape() != (m, m)
        {
            return Err(GhmmError::DimensionMismatch(format!(
                "need Φ {s}x{s}, F {s}x{m}, H {m}x{s}, Σ {m}x{m}"
            )));
        }
        if self.sigma.clone().cholesky().is_none() || (&self.sigma - self.sigma.transpose()).abs().max() > 1e-12 {
            return Err(GhmmError::param(
                "sigma",
                "noise covariance must be symmetric positive definite",
            ));
        }
        if s > 0 {
            let rho = self
                .phi
                .complex_eigenvalues()
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
            if rho >= 1.0 {
                return Err(GhmmError::NonstationaryParameters {
                    field: "alphas".into(),
                    reason: format!("spectral radius of Φ is {rho}"),
                });
            }
        }
        Ok(())
    }
}

/// Block-companion embedding of `Y_n + Σ α_j Y_{n−j} = ε_n + Σ β_j ε_{n−j}`.
///
/// `Φ` has `−α_j` down its first block column and identities on the block
/// superdiagonal, `F` stacks `β_j − α_j`, and `H = (I, 0, …, 0)`.
pub fn varma_to_lssm(alphas: &[DMatrix<f64>], betas: &[DMatrix<f64>], sigma: &DMatrix<f64>) -> Result<LssmSpec> {
    let m = sigma.nrows();
    if sigma.ncols() != m {
        return Err(GhmmError::DimensionMismatch("Σ must be square".into()));
    }
    if let Some(bad) = alphas.iter().chain(betas).find(|a| a.shape() != (m, m)) {
        return Err(GhmmError::DimensionMismatch(format!(
            "coefficient matrix is {}x{}, expected {m}x{m}",
            bad.nrows(),
            bad.ncols()
        )));
    }
    let h = alphas.len().max(betas.len());
    let s = h * m;
    let mut phi = DMatrix::zeros(s, s);
    let mut f = DMatrix::zeros(s, m);
    for j in 0..h {
        let alpha = alphas.get(j).cloned().unwrap_or_else(|| DMatrix::zeros(m, m));
        let beta = betas.get(j).cloned().unwrap_or_else(|| DMatrix::zeros(m, m));
        phi.view_mut((j * m, 0), (m, m)).copy_from(&(-&alpha));
        if j + 1 < h {
            phi.view_mut((j * m, (j + 1) * m), (m, m)).fill_with_identity();
        }
        f.view_mut((j * m, 0), (m, m)).copy_from(&(beta - alpha));
    }
    let mut hm = DMatrix::zeros(m, s);
    if s > 0 {
        hm.view_mut((0, 0), (m, m)).fill_with_identity();
    }
    Ok(LssmSpec {
        phi,
        f,
        h: hm,
        sigma: sigma.clone(),
    })
}

/// Solves `P = Φ P Φᵀ + R` through `vec(P) = (I − Φ⊗Φ)⁻¹ vec(R)`.
struct Lyapunov {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    s: usize,
}

impl Lyapunov {
    fn new(phi: &DMatrix<f64>) -> Self {
        let s = phi.nrows();
        let a = DMatrix::identity(s * s, s * s) - phi.kronecker(phi);
        Self { lu: a.lu(), s }
    }

    fn solve(&self, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if self.s == 0 {
            return Ok(DMatrix::zeros(0, 0));
        }
        let v = DVector::from_column_slice(r.as_slice());
        let sol = self.lu.solve(&v).ok_or_else(|| GhmmError::NonstationaryParameters {
            field: "alphas".into(),
            reason: "Lyapunov equation is singular".into(),
        })?;
        Ok(symmetrized(DMatrix::from_column_slice(self.s, self.s, sol.as_slice())))
    }
}

fn symmetrized(p: DMatrix<f64>) -> DMatrix<f64> {
    (&p + p.transpose()) * 0.5
}

/// Symmetrizes and clips negative eigenvalues; returns whether the defect exceeded [`PSD_TOL`].
fn psd_repair(p: DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let p = symmetrized(p);
    match p.nrows() {
        0 => (p, false),
        1 => {
            let v = p[(0, 0)];
            (DMatrix::from_element(1, 1, v.max(0.0)), v < -PSD_TOL)
        }
        _ => {
            let eig = p.clone().symmetric_eigen();
            let min = eig.eigenvalues.min();
            if min >= 0.0 {
                return (p, false);
            }
            let clipped = eig.eigenvalues.map(|v| v.max(0.0));
            let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
            (symmetrized(rebuilt), min < -PSD_TOL)
        }
    }
}

fn stationary_cov(spec: &LssmSpec) -> Result<DMatrix<f64>> {
    let q = &spec.f * &spec.sigma * spec.f.transpose();
    Lyapunov::new(&spec.phi).solve(&q)
}

struct StepOut {
    e: DVector<f64>,
    s: DMatrix<f64>,
    inc: f64,
    x: DVector<f64>,
    p: DMatrix<f64>,
    defect: bool,
}

fn kalman_step(spec: &LssmSpec, x: &DVector<f64>, p: &DMatrix<f64>, y: &DVector<f64>) -> Result<StepOut> {
    if y.len() != spec.obs_dim() {
        return Err(GhmmError::DimensionMismatch(format!(
            "observation has {} components, model expects {}",
            y.len(),
            spec.obs_dim()
        )));
    }
    let e = y - &spec.h * x;
    let s = symmetrized(&spec.h * p * spec.h.transpose() + &spec.sigma);
    let chol = s
        .clone()
        .cholesky()
        .ok_or_else(|| GhmmError::NonPsdCovariance("innovation covariance".into()))?;
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let quad = e.dot(&chol.solve(&e));
    let inc = -0.5 * (spec.obs_dim() as f64 * LN_2PI + logdet + quad);
    if !inc.is_finite() {
        return Err(GhmmError::NonFinite("Gaussian log-density".into()));
    }
    let g = &spec.phi * p * spec.h.transpose() + &spec.f * &spec.sigma;
    let k = chol.solve(&g.transpose()).transpose();
    let x_next = &spec.phi * x + &k * &e;
    let p_next = &spec.phi * p * spec.phi.transpose() + &spec.f * &spec.sigma * spec.f.transpose() - &k * g.transpose();
    let (p_next, defect) = psd_repair(p_next);
    Ok(StepOut {
        e,
        s,
        inc,
        x: x_next,
        p: p_next,
        defect,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanOutput {
    pub innovations: Vec<DVector<f64>>,
    pub innovation_covs: Vec<DMatrix<f64>>,
    pub log_likelihood: f64,
    /// Steps whose covariance had an eigenvalue below `−1e-10` before clipping.
    pub psd_defects: usize,
}

/// Time-varying Kalman filter from the stationary initial covariance.
pub fn kalman_filter(spec: &LssmSpec, y: &[DVector<f64>]) -> Result<KalmanOutput> {
    spec.validate()?;
    let mut x = DVector::zeros(spec.state_dim());
    let mut p = stationary_cov(spec)?;
    let mut out = KalmanOutput {
        innovations: Vec::with_capacity(y.len()),
        innovation_covs: Vec::with_capacity(y.len()),
        log_likelihood: 0.0,
        psd_defects: 0,
    };
    for (t, yt) in y.iter().enumerate() {
        let st = kalman_step(spec, &x, &p, yt).map_err(|e| e.at(t))?;
        out.log_likelihood += st.inc;
        out.psd_defects += usize::from(st.defect);
        out.innovations.push(st.e);
        out.innovation_covs.push(st.s);
        x = st.x;
        p = st.p;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub p: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub innovation_cov: DMatrix<f64>,
    pub iterations: usize,
}

/// Fixed-point iteration of the Riccati recursion from the stationary covariance.
pub fn steady_state(spec: &LssmSpec) -> Result<SteadyState> {
    spec.validate()?;
    let m = spec.obs_dim();
    let mut p = stationary_cov(spec)?;
    let zero_x = DVector::zeros(spec.state_dim());
    let zero_y = DVector::zeros(m);
    for it in 1..=RICCATI_MAX_ITER {
        let st = kalman_step(spec, &zero_x, &p, &zero_y)?;
        let delta = (&st.p - &p).abs().max();
        p = st.p;
        if delta < RICCATI_TOL {
            let s = symmetrized(&spec.h * &p * spec.h.transpose() + &spec.sigma);
            let g = &spec.phi * &p * spec.h.transpose() + &spec.f * &spec.sigma;
            let chol = s
                .clone()
                .cholesky()
                .ok_or_else(|| GhmmError::NonPsdCovariance("steady-state S".into()))?;
            let gain = chol.solve(&g.transpose()).transpose();
            return Ok(SteadyState {
                p,
                gain,
                innovation_cov: s,
                iterations: it,
            });
        }
    }
    Err(GhmmError::RiccatiNoConvergence(RICCATI_MAX_ITER))
}

/// Kalman filter run with the steady-state gain and innovation covariance.
pub fn kalman_filter_steady(spec: &LssmSpec, y: &[DVector<f64>]) -> Result<KalmanOutput> {
    let ss = steady_state(spec)?;
    let chol = ss.innovation_cov.clone().cholesky().expect("checked in steady_state");
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let mut x = DVector::zeros(spec.state_dim());
    let mut out = KalmanOutput {
        innovations: Vec::with_capacity(y.len()),
        innovation_covs: Vec::with_capacity(y.len()),
        log_likelihood: 0.0,
        psd_defects: 0,
    };
    for yt in y {
        let e = yt - &spec.h * &x;
        out.log_likelihood += -0.5 * (spec.obs_dim() as f64 * LN_2PI + logdet + e.dot(&chol.solve(&e)));
        x = &spec.phi * &x + &ss.gain * &e;
        out.innovations.push(e);
        out.innovation_covs.push(ss.innovation_cov.clone());
    }
    Ok(out)
}

type Jet = Vec<DMatrix<f64>>;

fn is_zero(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| *v == 0.0)
}

/// Leibniz product `D^ν (A B) = Σ C(ν, μ) D^μ A D^{ν−μ} B`.
fn jet_mul(set: &MultiIndexSet, a: &Jet, b: &Jet) -> Jet {
    let (r, c) = (a[0].nrows(), b[0].ncols());
    let za: Vec<bool> = a.iter().map(is_zero).collect();
    let zb: Vec<bool> = b.iter().map(is_zero).collect();
    (0..set.len())
        .map(|nu| {
            let mut out = DMatrix::zeros(r, c);
            for sp in set.splits(nu) {
                if za[sp.part] || zb[sp.rest] {
                    continue;
                }
                out += (&a[sp.part] * &b[sp.rest]) * sp.coef;
            }
            out
        })
        .collect()
}

fn jet_const(m: &DMatrix<f64>, k: usize) -> Jet {
    let mut j = vec![DMatrix::zeros(m.nrows(), m.ncols()); k];
    j[0] = m.clone();
    j
}

fn jet_t(a: &Jet) -> Jet {
    a.iter().map(|m| m.transpose()).collect()
}

fn jet_add(a: &Jet, b: &Jet) -> Jet {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn jet_sub(a: &Jet, b: &Jet) -> Jet {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// VARMA-style model affine in θ: `Φ(θ) = Φ₀ + Σ θ_a Φ_a`, likewise `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct LssmModel {
    phi0: DMatrix<f64>,
    phi_d: Vec<DMatrix<f64>>,
    f0: DMatrix<f64>,
    f_d: Vec<DMatrix<f64>>,
    h: DMatrix<f64>,
    sigma: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct LssmParams {
    spec: LssmSpec,
    set: MultiIndexSet,
    phi: Jet,
    f: Jet,
    p1: Jet,
}

impl LssmParams {
    pub fn spec(&self) -> &LssmSpec {
        &self.spec
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    /// Predicted state mean for the next observation.
    pub x: DVector<f64>,
    /// Predicted state covariance for the next observation.
    pub p: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanSens {
    pub x: Vec<DMatrix<f64>>,
    pub p: Vec<DMatrix<f64>>,
    pub score: Vec<f64>,
    pub hessian: Vec<f64>,
}

impl LssmModel {
    /// Model without free parameters.
    pub fn fixed(spec: &LssmSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            phi0: spec.phi.clone(),
            phi_d: Vec::new(),
            f0: spec.f.clone(),
            f_d: Vec::new(),
            h: spec.h.clone(),
            sigma: spec.sigma.clone(),
        })
    }

    /// VARMA(p, q) in dimension `m` with θ = (vec α₁, …, vec α_p, vec β₁, …, vec β_q),
    /// each `vec` stacking columns.
    pub fn varma(m: usize, p: usize, q: usize, sigma: &DMatrix<f64>) -> Result<Self> {
        if sigma.shape() != (m, m) {
            return Err(GhmmError::DimensionMismatch("Σ must be m×m".into()));
        }
        let zeros_a = vec![DMatrix::zeros(m, m); p];
        let zeros_b = vec![DMatrix::zeros(m, m); q];
        let base = varma_to_lssm(&zeros_a, &zeros_b, sigma)?;
        let mut phi_d = Vec::new();
        let mut f_d = Vec::new();
        for which in 0..(p + q) {
            for c in 0..m {
                for r in 0..m {
                    let mut a = zeros_a.clone();
                    let mut b = zeros_b.clone();
                    if which < p {
                        a[which][(r, c)] = 1.0;
                    } else {
                        b[which - p][(r, c)] = 1.0;
                    }
                    let unit = varma_to_lssm(&a, &b, sigma)?;
                    phi_d.push(&unit.phi - &base.phi);
                    f_d.push(&unit.f - &base.f);
                }
            }
        }
        Ok(Self {
            phi0: base.phi,
            phi_d,
            f0: base.f,
            f_d,
            h: base.h,
            sigma: sigma.clone(),
        })
    }

    /// θ for given VARMA coefficient matrices (column-stacked).
    pub fn varma_theta(alphas: &[DMatrix<f64>], betas: &[DMatrix<f64>]) -> Vec<f64> {
        alphas.iter().chain(betas).flat_map(|a| a.as_slice().to_vec()).collect()
    }

    pub fn spec_at(&self, theta: &[f64]) -> LssmSpec {
        let mut phi = self.phi0.clone();
        let mut f = self.f0.clone();
        for (a, &t) in theta.iter().enumerate() {
            phi += &self.phi_d[a] * t;
            f += &self.f_d[a] * t;
        }
        LssmSpec {
            phi,
            f,
            h: self.h.clone(),
            sigma: self.sigma.clone(),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.sigma.nrows()
    }

    fn absorb(&self, p: &LssmParams, s: &KalmanSens, y: &DVector<f64>) -> Result<(KalmanSens, f64)> {
        let set = &p.set;
        let k = set.len();
        let q = self.phi_d.len();
        let spec = &p.spec;
        let m = self.obs_dim();
        if y.len() != m {
            return Err(GhmmError::DimensionMismatch(format!(
                "observation has {} components, model expects {m}",
                y.len()
            )));
        }
        let h = jet_const(&spec.h, k);
        let ht = jet_const(&spec.h.transpose(), k);
        let sigma = jet_const(&spec.sigma, k);
        let mut e: Jet = jet_mul(set, &h, &s.x).into_iter().map(|v| -v).collect();
        e[0] += y;
        let mut sj = jet_add(&jet_mul(set, &jet_mul(set, &h, &s.p), &ht), &sigma);
        sj.iter_mut().for_each(|v| *v = symmetrized(v.clone()));
        let chol = sj[0]
            .clone()
            .cholesky()
            .ok_or_else(|| GhmmError::NonPsdCovariance("innovation covariance".into()))?;
        let s0_inv = chol.inverse();
        let mut sinv: Jet = vec![s0_inv.clone()];
        for nu in 1..k {
            let mut acc = DMatrix::zeros(m, m);
            for sp in set.splits(nu) {
                if sp.part != nu {
                    acc += (&sj[sp.rest] * &sinv[sp.part]) * sp.coef;
                }
            }
            sinv.push(-(&s0_inv * acc));
        }
        let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let quad = jet_mul(set, &jet_t(&e), &jet_mul(set, &sinv, &e));
        let inc = -0.5 * (m as f64 * LN_2PI + logdet + quad[0][(0, 0)]);
        if !inc.is_finite() {
            return Err(GhmmError::NonFinite("Gaussian log-density".into()));
        }
        let mut score = s.score.clone();
        let mut hessian = s.hessian.clone();
        if set.order() >= 1 {
            for a in 0..q {
                let ua = set.unit(a);
                let ld = (&s0_inv * &sj[ua]).trace();
                score[a] += -0.5 * (ld + quad[ua][(0, 0)]);
            }
        }
        if set.order() >= 2 {
            for a in 0..q {
                for b in a..q {
                    let ab = set.pair(a, b);
                    let ld = (&s0_inv * &sj[ab]).trace() + (&sinv[set.unit(b)] * &sj[set.unit(a)]).trace();
                    let v = -0.5 * (ld + quad[ab][(0, 0)]);
                    hessian[a * q + b] += v;
                    if a != b {
                        hessian[b * q + a] += v;
                    }
                }
            }
        }
        let phi_p = jet_mul(set, &p.phi, &s.p);
        let g = jet_add(&jet_mul(set, &phi_p, &ht), &jet_mul(set, &p.f, &sigma));
        let gain = jet_mul(set, &g, &sinv);
        let x = jet_add(&jet_mul(set, &p.phi, &s.x), &jet_mul(set, &gain, &e));
        let pn = jet_sub(
            &jet_add(
                &jet_mul(set, &phi_p, &jet_t(&p.phi)),
                &jet_mul(set, &jet_mul(set, &p.f, &sigma), &jet_t(&p.f)),
            ),
            &jet_mul(set, &jet_mul(set, &gain, &sj), &jet_t(&gain)),
        );
        let mut pn: Jet = pn.into_iter().map(symmetrized).collect();
        pn[0] = psd_repair(pn[0].clone()).0;
        Ok((
            KalmanSens {
                x,
                p: pn,
                score,
                hessian,
            },
            inc,
        ))
    }

    /// Riccati recursion of `(P, ∂P)` without data until both settle; returns
    /// the gain jet, the innovation covariance jet and the iteration count.
    fn steady_jet(&self, p: &LssmParams) -> Result<(Jet, Jet, usize)> {
        let set = &p.set;
        let k = set.len();
        let ht = jet_const(&p.spec.h.transpose(), k);
        let h = jet_const(&p.spec.h, k);
        let sigma = jet_const(&p.spec.sigma, k);
        let mut pj = p.p1.clone();
        for it in 1..=RICCATI_MAX_ITER {
            let sj: Jet = jet_add(&jet_mul(set, &jet_mul(set, &h, &pj), &ht), &sigma)
                .into_iter()
                .map(symmetrized)
                .collect();
            let s0_inv = sj[0]
                .clone()
                .cholesky()
                .ok_or_else(|| GhmmError::NonPsdCovariance("innovation covariance".into()))?
                .inverse();
            let mut sinv: Jet = vec![s0_inv.clone()];
            for nu in 1..k {
                let mut acc = DMatrix::zeros(s0_inv.nrows(), s0_inv.ncols());
                for sp in set.splits(nu) {
                    if sp.part != nu {
                        acc += (&sj[sp.rest] * &sinv[sp.part]) * sp.coef;
                    }
                }
                sinv.push(-(&s0_inv * acc));
            }
            let phi_p = jet_mul(set, &p.phi, &pj);
            let g = jet_add(&jet_mul(set, &phi_p, &ht), &jet_mul(set, &p.f, &sigma));
            let gain = jet_mul(set, &g, &sinv);
            let next: Jet = jet_sub(
                &jet_add(
                    &jet_mul(set, &phi_p, &jet_t(&p.phi)),
                    &jet_mul(set, &jet_mul(set, &p.f, &sigma), &jet_t(&p.f)),
                ),
                &jet_mul(set, &jet_mul(set, &gain, &sj), &jet_t(&gain)),
            )
            .into_iter()
            .map(symmetrized)
            .collect();
            let delta = next
                .iter()
                .zip(&pj)
                .map(|(a, b)| (a - b).abs().max())
                .fold(0.0, f64::max);
            pj = next;
            if delta < RICCATI_TOL {
                return Ok((gain, sj, it));
            }
        }
        Err(GhmmError::RiccatiNoConvergence(RICCATI_MAX_ITER))
    }
}

impl Ghmm for LssmModel {
    type Obs = DVector<f64>;
    type Params = LssmParams;
    type Filter = KalmanState;
    type Sens = KalmanSens;

    fn param_dim(&self) -> usize {
        self.phi_d.len()
    }

    fn max_order(&self) -> usize {
        2
    }

    fn bind(&self, theta: &[f64], order: usize) -> Result<LssmParams> {
        self.check_dim(theta)?;
        self.check_order(order)?;
        let spec = self.spec_at(theta);
        spec.validate()?;
        let set = MultiIndexSet::new(self.param_dim(), order);
        let k = set.len();
        let mut phi = jet_const(&spec.phi, k);
        let mut f = jet_const(&spec.f, k);
        if order >= 1 {
            for a in 0..self.param_dim() {
                phi[set.unit(a)] = self.phi_d[a].clone();
                f[set.unit(a)] = self.f_d[a].clone();
            }
        }
        let lyap = Lyapunov::new(&spec.phi);
        let sigma = jet_const(&spec.sigma, k);
        let q_jet = jet_mul(&set, &jet_mul(&set, &f, &sigma), &jet_t(&f));
        let s = spec.state_dim();
        let mut p1: Jet = vec![DMatrix::zeros(s, s); k];
        for nu in 0..k {
            // all Leibniz terms except Φ D^ν P Φᵀ, with D^ν P still zero
            let rest = jet_mul(&set, &jet_mul(&set, &phi, &p1), &jet_t(&phi));
            p1[nu] = lyap.solve(&(&rest[nu] + &q_jet[nu]))?;
        }
        Ok(LssmParams { spec, set, phi, f, p1 })
    }

    fn filter_init(&self, p: &LssmParams, y0: &DVector<f64>) -> Result<(KalmanState, f64)> {
        let x = DVector::zeros(p.spec.state_dim());
        let st = kalman_step(&p.spec, &x, &p.p1[0], y0)?;
        Ok((KalmanState { x: st.x, p: st.p }, st.inc))
    }

    fn filter_update(
        &self,
        p: &LssmParams,
        f: &KalmanState,
        _y_prev: &DVector<f64>,
        y: &DVector<f64>,
    ) -> Result<(KalmanState, f64)> {
        let st = kalman_step(&p.spec, &f.x, &f.p, y)?;
        Ok((KalmanState { x: st.x, p: st.p }, st.inc))
    }

    fn sens_init(&self, p: &LssmParams, y0: &DVector<f64>) -> Result<(KalmanSens, f64)> {
        let q = self.param_dim();
        let s = KalmanSens {
            x: vec![DMatrix::zeros(p.spec.state_dim(), 1); p.set.len()],
            p: p.p1.clone(),
            score: vec![0.0; q],
            hessian: vec![0.0; q * q],
        };
        self.absorb(p, &s, y0)
    }

    fn sens_update(
        &self,
        p: &LssmParams,
        s: &KalmanSens,
        _y_prev: &DVector<f64>,
        y: &DVector<f64>,
    ) -> Result<(KalmanSens, f64)> {
        self.absorb(p, s, y)
    }

    fn sens_derivs(&self, p: &LssmParams, s: &KalmanSens) -> LogLikDerivs {
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

    fn simulate(
        &self,
        p: &LssmParams,
        n: usize,
        key: StreamKey,
        _x0: Option<usize>,
    ) -> Result<SampledPath<DVector<f64>>> {
        let mut rng = key.rng();
        let spec = &p.spec;
        let (s, m) = (spec.state_dim(), spec.obs_dim());
        let mut normal = |len: usize| DVector::from_fn(len, |_, _| StandardNormal.sample(&mut rng));
        let root = if s > 0 {
            let eig = symmetrized(p.p1[0].clone()).symmetric_eigen();
            &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()))
        } else {
            DMatrix::zeros(0, 0)
        };
        let noise_root = spec.sigma.clone().cholesky().expect("validated").l();
        let mut x = &root * normal(s);
        let mut obs = Vec::with_capacity(n);
        for _ in 0..n {
            let eps = &noise_root * normal(m);
            obs.push(&spec.h * &x + &eps);
            x = &spec.phi * &x + &spec.f * &eps;
        }
        Ok(SampledPath { obs, hidden: None })
    }
}

/// Fisher information from innovation derivatives under the steady-state filter:
/// the long-run average of `∂ε̂ᵀ S⁻¹ ∂ε̂ + ½ tr(S⁻¹ ∂S S⁻¹ ∂S)` with `S` the
/// steady-state innovation covariance (the trace term vanishes when `S = Σ`).
pub fn lssm_fisher(model: &LssmModel, theta: &[f64], run: &McRun) -> Result<FisherEstimate> {
    let q = model.param_dim();
    let window = run.window()?;
    let p = model.bind(theta, 1)?;
    let (gain, sj, _) = model.steady_jet(&p)?;
    let set = &p.set;
    let spec = &p.spec;
    let s_inv = sj[0]
        .clone()
        .cholesky()
        .ok_or_else(|| GhmmError::NonPsdCovariance("steady-state S".into()))?
        .inverse();
    let trace_term: Vec<f64> = (0..q * q)
        .map(|ij| {
            let (i, j) = (ij / q, ij % q);
            0.5 * (&s_inv * &sj[set.unit(i)] * &s_inv * &sj[set.unit(j)]).trace()
        })
        .collect();
    let path = model.simulate(&p, run.n, run.key(), None)?;
    let st = spec.state_dim();
    let mut x = DVector::zeros(st);
    let mut dx = vec![DVector::zeros(st); q];
    let mut bm = BatchMeans::new(window, q * q)?;
    let mut inc = vec![0.0; q * q];
    for (t, y) in path.obs.iter().enumerate() {
        let e = y - &spec.h * &x;
        let de: Vec<DVector<f64>> = dx.iter().map(|d| -(&spec.h * d)).collect();
        if t >= run.burn_in {
            for i in 0..q {
                let w = &s_inv * &de[i];
                for j in 0..q {
                    inc[i * q + j] = de[j].dot(&w) + trace_term[i * q + j];
                }
            }
            bm.push(&inc);
        }
        for a in 0..q {
            let ua = set.unit(a);
            dx[a] = &p.phi[ua] * &x + &spec.phi * &dx[a] + &gain[ua] * &e + &gain[0] * &de[a];
        }
        x = &spec.phi * &x + &gain[0] * &e;
    }
    let (mean, se) = bm.finish()?;
    Ok(FisherEstimate::from_parts(
        q,
        mean,
        se,
        run,
        crate::info::FisherMethod::SteadyStateInnovations,
    ))
}
