//! Fisher information, KL divergence and Cramér–Rao bounds.
//!
//! Stationary expectations are long-run averages over one simulated
//! trajectory after burn-in, with batch-means standard errors.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{GhmmError, Result};
use crate::ghmm::{for_each_increment, Ghmm};
use crate::models::finite::FiniteHmm;
use crate::models::product::ProductModel;
use crate::montecarlo::{enumerate_likelihoods, enumeration_size, simulate_run, BatchMeans, McRun};
use crate::sensitivity::{for_each_derivative, symmetrize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FisherMethod {
    HessianAverage,
    ScoreOuter,
    SteadyStateInnovations,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FisherEstimate {
    pub dim: usize,
    /// Row-major `dim × dim`, symmetric.
    pub matrix: Vec<f64>,
    /// Batch-means standard errors, row-major.
    pub se: Vec<f64>,
    pub n: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub stream: u64,
    pub method: FisherMethod,
}

impl FisherEstimate {
    pub(crate) fn from_parts(dim: usize, mean: Vec<f64>, se: Vec<f64>, run: &McRun, method: FisherMethod) -> Self {
        let matrix = symmetrize(&mean, dim).matrix;
        let se = symmetrize(&se, dim).matrix;
        Self {
            dim,
            matrix,
            se,
            n: run.n,
            burn_in: run.burn_in,
            seed: run.seed,
            stream: run.stream,
            method,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.dim + j]
    }

    pub fn se_at(&self, i: usize, j: usize) -> f64 {
        self.se[i * self.dim + j]
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.matrix)
    }

    /// `vᵀ I v` and a first-order standard error from the entrywise ones.
    pub fn quadratic_form(&self, v: &[f64]) -> (f64, f64) {
        let q = self.dim;
        let mut val = 0.0;
        let mut var = 0.0;
        for i in 0..q {
            for j in 0..q {
                val += v[i] * v[j] * self.get(i, j);
                var += (v[i] * v[j] * self.se_at(i, j)).powi(2);
            }
        }
        (val, var.sqrt())
    }
}

/// `−` average per-step Hessian increment over the post-burn-in window.
pub fn fisher_hessian_estimate<M: Ghmm>(model: &M, theta0: &[f64], run: &McRun) -> Result<FisherEstimate> {
    fisher_estimate(model, theta0, run, FisherMethod::HessianAverage)
}

/// Average outer product of per-step score increments over the window.
pub fn fisher_score_estimate<M: Ghmm>(model: &M, theta0: &[f64], run: &McRun) -> Result<FisherEstimate> {
    fisher_estimate(model, theta0, run, FisherMethod::ScoreOuter)
}

fn fisher_estimate<M: Ghmm>(model: &M, theta0: &[f64], run: &McRun, method: FisherMethod) -> Result<FisherEstimate> {
    let q = model.param_dim();
    let window = run.window()?;
    let order = match method {
        FisherMethod::HessianAverage => 2,
        _ => 1,
    };
    let p = model.bind(theta0, order)?;
    if q == 0 {
        return Ok(FisherEstimate::from_parts(0, Vec::new(), Vec::new(), run, method));
    }
    let path = model.simulate(&p, run.n, run.key(), run.x0)?;
    let mut bm = BatchMeans::new(window, q * q)?;
    let mut prev_score = vec![0.0; q];
    let mut prev_hess = vec![0.0; q * q];
    let mut inc = vec![0.0; q * q];
    let mut g = vec![0.0; q];
    for_each_derivative(model, &p, &path.obs, |t, _, d| {
        match method {
            FisherMethod::HessianAverage => {
                for (i, v) in inc.iter_mut().enumerate() {
                    *v = prev_hess[i] - d.hessian[i];
                }
                prev_hess.copy_from_slice(&d.hessian);
            }
            _ => {
                for (a, v) in g.iter_mut().enumerate() {
                    *v = d.score[a] - prev_score[a];
                }
                prev_score.copy_from_slice(&d.score);
                for i in 0..q {
                    for j in 0..q {
                        inc[i * q + j] = g[i] * g[j];
                    }
                }
            }
        }
        if t >= run.burn_in {
            bm.push(&inc);
        }
    })?;
    let (mean, se) = bm.finish()?;
    Ok(FisherEstimate::from_parts(q, mean, se, run, method))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KlEstimate {
    /// `+∞` when θ₀ assigns zero likelihood to the trajectory.
    pub value: f64,
    pub se: f64,
    pub infinite: bool,
    /// Window averages of the log-likelihood increments under θ₁ and θ₀.
    pub mean_ll_theta1: f64,
    pub mean_ll_theta0: f64,
    pub n: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub stream: u64,
}

/// Per-observation log-likelihood ratio of θ₁ against θ₀ on one θ₁-trajectory.
pub fn kl_estimate<M: Ghmm>(model: &M, theta1: &[f64], theta0: &[f64], run: &McRun) -> Result<KlEstimate> {
    let window = run.window()?;
    let p0 = model.bind(theta0, 0)?;
    let path = simulate_run(model, theta1, run)?;
    let p1 = model.bind(theta1, 0)?;
    let mut inc1 = Vec::with_capacity(run.n);
    for_each_increment(model, &p1, &path.obs, |_, v| inc1.push(v))?;
    let mut bm = BatchMeans::new(window, 3)?;
    let mut infinite = false;
    let walk = for_each_increment(model, &p0, &path.obs, |t, v0| {
        if v0 == f64::NEG_INFINITY {
            infinite = true;
        }
        if t >= run.burn_in && !infinite {
            bm.push(&[inc1[t] - v0, inc1[t], v0]);
        }
    });
    match walk {
        Err(e) if e.root() == &GhmmError::AllZeroWeights => infinite = true,
        other => other?,
    }
    let out = |value, se, m1, m0| KlEstimate {
        value,
        se,
        infinite,
        mean_ll_theta1: m1,
        mean_ll_theta0: m0,
        n: run.n,
        burn_in: run.burn_in,
        seed: run.seed,
        stream: run.stream,
    };
    if infinite {
        return Ok(out(f64::INFINITY, 0.0, f64::NAN, f64::NEG_INFINITY));
    }
    let (mean, se) = bm.finish()?;
    Ok(out(mean[0], se[0], mean[1], mean[2]))
}

/// KL estimates on replicate streams `0..reps` in parallel.
pub fn kl_replicates<M: Ghmm>(
    model: &M,
    theta1: &[f64],
    theta0: &[f64],
    run: &McRun,
    reps: usize,
) -> Result<Vec<KlEstimate>> {
    (0..reps as u64)
        .into_par_iter()
        .map(|r| kl_estimate(model, theta1, theta0, &run.stream(r)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub theta1: Vec<f64>,
    /// Replicate average.
    pub value: f64,
    /// `sqrt(Σ se_r²) / R`.
    pub se: f64,
    pub replicates: Vec<KlEstimate>,
}

/// KL at each θ₁ of a grid against a fixed θ₀. Replicate `r` uses stream `r`
/// at every grid point, so neighbouring points share random numbers.
pub fn kl_sweep<M: Ghmm>(
    model: &M,
    grid: &[Vec<f64>],
    theta0: &[f64],
    run: &McRun,
    reps: usize,
) -> Result<Vec<SweepPoint>> {
    if reps == 0 {
        return Err(GhmmError::InvalidArgument("at least one replicate".into()));
    }
    grid.iter()
        .map(|t1| {
            let replicates = kl_replicates(model, t1, theta0, run, reps)?;
            let r = reps as f64;
            let value = replicates.iter().map(|k| k.value).sum::<f64>() / r;
            let se = replicates.iter().map(|k| k.se * k.se).sum::<f64>().sqrt() / r;
            Ok(SweepPoint {
                theta1: t1.clone(),
                value,
                se,
                replicates,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SecondDifference {
    /// `K_{i−1} − 2K_i + K_{i+1}` of the replicate averages.
    pub value: f64,
    /// Standard error treating the three points as independent.
    pub se_independent: f64,
    /// Standard error from the spread of per-replicate second differences,
    /// which keeps the common-random-number correlation; `NaN` below two replicates.
    pub se_paired: f64,
}

/// Interior second differences of a sweep.
pub fn second_differences(points: &[SweepPoint]) -> Vec<SecondDifference> {
    points
        .windows(3)
        .map(|w| {
            let value = w[0].value - 2.0 * w[1].value + w[2].value;
            let se_independent = (w[0].se.powi(2) + 4.0 * w[1].se.powi(2) + w[2].se.powi(2)).sqrt();
            let reps = w[0]
                .replicates
                .len()
                .min(w[1].replicates.len())
                .min(w[2].replicates.len());
            let d: Vec<f64> = (0..reps)
                .map(|r| w[0].replicates[r].value - 2.0 * w[1].replicates[r].value + w[2].replicates[r].value)
                .collect();
            let se_paired = if reps < 2 {
                f64::NAN
            } else {
                let m = d.iter().sum::<f64>() / reps as f64;
                let var = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (reps - 1) as f64;
                (var / reps as f64).sqrt()
            };
            SecondDifference {
                value,
                se_independent,
                se_paired,
            }
        })
        .collect()
}

/// Exact `(1/n) Σ_y L(θ₁;y)·log(L(θ₁;y)/L(θ₀;y))` over all sequences of `n` observations.
pub fn kl_exact_small(model: &FiniteHmm, theta1: &[f64], theta0: &[f64], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(GhmmError::EmptySequence);
    }
    let alphabet = model
        .alphabet()
        .ok_or_else(|| GhmmError::InvalidArgument("exact KL needs a finite alphabet".into()))?;
    enumeration_size(alphabet.len(), n)?;
    let mut total = 0.0;
    let mut infinite = false;
    enumerate_likelihoods(model, &[theta1, theta0], n - 1, |_, lik| {
        if lik[0] > 0.0 {
            if lik[1] > 0.0 {
                total += lik[0] * (lik[0].ln() - lik[1].ln());
            } else {
                infinite = true;
            }
        }
    })?;
    Ok(if infinite { f64::INFINITY } else { total / n as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadraticRow {
    pub eps: f64,
    pub kl: f64,
    pub kl_se: f64,
    /// `ε² vᵀIv / 2`.
    pub predicted: f64,
    pub rho: f64,
    pub rho_se: f64,
    /// `|ρ − 1|`.
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadraticCheck {
    pub fisher: FisherEstimate,
    pub curvature: f64,
    pub curvature_se: f64,
    pub rows: Vec<QuadraticRow>,
    /// `|ρ − 1|` strictly decreases down the grid.
    pub decreasing: bool,
    /// Each step down the grid increases `|ρ − 1|` by at most twice its se.
    pub decreasing_within_noise: bool,
}

/// Ratio of `K(θ₀ + εv, θ₀)` to its quadratic approximation along a strictly decreasing ε grid.
pub fn quadratic_check<M: Ghmm>(
    model: &M,
    theta0: &[f64],
    v: &[f64],
    eps_grid: &[f64],
    run: &McRun,
) -> Result<QuadraticCheck> {
    if v.len() != model.param_dim() {
        return Err(GhmmError::DimensionMismatch(format!(
            "direction has {} entries, model has {}",
            v.len(),
            model.param_dim()
        )));
    }
    if eps_grid.is_empty() || eps_grid.iter().any(|e| *e <= 0.0) || eps_grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(GhmmError::InvalidArgument(
            "ε grid must be positive and strictly decreasing".into(),
        ));
    }
    let fisher = fisher_hessian_estimate(model, theta0, run)?;
    let (curvature, curvature_se) = fisher.quadratic_form(v);
    let rows = eps_grid
        .par_iter()
        .map(|&eps| {
            let theta1: Vec<f64> = theta0.iter().zip(v).map(|(t, d)| t + eps * d).collect();
            let kl = kl_estimate(model, &theta1, theta0, run)?;
            let predicted = 0.5 * eps * eps * curvature;
            let rho = kl.value / predicted;
            let rho_se = rho.abs() * ((kl.se / kl.value).powi(2) + (curvature_se / curvature).powi(2)).sqrt();
            Ok(QuadraticRow {
                eps,
                kl: kl.value,
                kl_se: kl.se,
                predicted,
                rho,
                rho_se,
                deviation: (rho - 1.0).abs(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let decreasing = rows.windows(2).all(|w| w[1].deviation < w[0].deviation);
    let decreasing_within_noise = rows
        .windows(2)
        .all(|w| w[1].deviation <= w[0].deviation + 2.0 * w[1].rho_se);
    Ok(QuadraticCheck {
        fisher,
        curvature,
        curvature_se,
        rows,
        decreasing,
        decreasing_within_noise,
    })
}

/// Condition number beyond which the information is treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrlbReport {
    /// `vᵀ I⁻¹ v`.
    pub classical: f64,
    /// `‖v‖² / (16 vᵀ I v)`.
    pub minimax: f64,
    /// `(n, vᵀ I⁻¹ v / n)`.
    pub per_n: Vec<(usize, f64)>,
    pub condition_number: f64,
    /// A pseudo-inverse was used.
    pub singular: bool,
}

pub fn crlb_report(info: &DMatrix<f64>, v: &[f64], ns: &[usize]) -> Result<CrlbReport> {
    let q = info.nrows();
    if info.ncols() != q || v.len() != q {
        return Err(GhmmError::DimensionMismatch(
            "information must be square and match the direction".into(),
        ));
    }
    if q == 0 {
        return Err(GhmmError::InvalidArgument("empty information matrix".into()));
    }
    let v = DVector::from_column_slice(v);
    let svd = info.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition_number = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let singular = condition_number > SINGULAR_CONDITION;
    let inv = svd
        .pseudo_inverse(smax * q as f64 * f64::EPSILON)
        .map_err(|e| GhmmError::InvalidArgument(e.into()))?;
    let classical = v.dot(&(&inv * &v));
    let minimax = v.norm_squared() / (16.0 * v.dot(&(info * &v)));
    Ok(CrlbReport {
        classical,
        minimax,
        per_n: ns.iter().map(|&n| (n, classical / n as f64)).collect(),
        condition_number,
        singular,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdditivityCheck {
    pub k_product: KlEstimate,
    pub k_a: KlEstimate,
    pub k_b: KlEstimate,
    pub k_sum: f64,
    pub difference: f64,
    /// `sqrt(se_product² + se_a² + se_b²)`.
    pub combined_se: f64,
}

/// KL of a product model against the sum of its components' KLs, each
/// component run on the stream the product model hands it.
pub fn kl_additivity_check<A: Ghmm, B: Ghmm>(
    model: &ProductModel<A, B>,
    theta1: &[f64],
    theta0: &[f64],
    run: &McRun,
) -> Result<AdditivityCheck> {
    if run.x0.is_some() {
        return Err(GhmmError::InvalidArgument(
            "additivity check draws initial states from the initial law".into(),
        ));
    }
    let k_product = kl_estimate(model, theta1, theta0, run)?;
    let (a1, b1) = model.split(theta1);
    let (a0, b0) = model.split(theta0);
    let k_a = kl_estimate(&model.a, a1, a0, run)?;
    let kb = model.key_b(run.key());
    let k_b = kl_estimate(
        &model.b,
        b1,
        b0,
        &McRun {
            stream: kb.stream,
            seed: kb.seed,
            ..*run
        },
    )?;
    let k_sum = k_a.value + k_b.value;
    Ok(AdditivityCheck {
        difference: k_product.value - k_sum,
        combined_se: (k_product.se.powi(2) + k_a.se.powi(2) + k_b.se.powi(2)).sqrt(),
        k_sum,
        k_product,
        k_a,
        k_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crlb_scalar() {
        let r = crlb_report(&DMatrix::from_element(1, 1, 4.0), &[1.0], &[100]).unwrap();
        assert!((r.classical - 0.25).abs() < 1e-15);
        assert!((r.minimax - 1.0 / 64.0).abs() < 1e-15);
        assert_eq!(r.per_n, vec![(100, 0.0025)]);
        assert!(!r.singular);
    }

    #[test]
    fn crlb_scaling() {
        let i = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let a = crlb_report(&i, &[0.3, -0.7], &[]).unwrap();
        let b = crlb_report(&i, &[0.9, -2.1], &[]).unwrap();
        assert!((b.classical - 9.0 * a.classical).abs() < 1e-12);
        assert!((b.minimax - a.minimax).abs() < 1e-15);
    }

    #[test]
    fn crlb_singular_uses_pseudo_inverse() {
        let i = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let r = crlb_report(&i, &[1.0, 0.0], &[]).unwrap();
        assert!(r.singular);
        assert!((r.classical - 1.0).abs() < 1e-15);
    }

    #[test]
    fn kl_self_is_zero() {
        let m = FiniteHmm::three_state();
        let k = kl_estimate(&m, &[0.1], &[0.1], &McRun::new(2000, 3)).unwrap();
        assert_eq!(k.value, 0.0);
        assert_eq!(kl_exact_small(&m, &[0.1], &[0.1], 6).unwrap(), 0.0);
    }

    #[test]
    fn exact_kl_is_nonnegative() {
        let m = FiniteHmm::three_state();
        for (a, b) in [(0.2, 0.0), (-0.3, 0.4), (0.0, 0.49)] {
            assert!(kl_exact_small(&m, &[a], &[b], 8).unwrap() >= 0.0);
        }
    }

    #[test]
    fn exact_kl_cap() {
        let m = FiniteHmm::three_state();
        assert!(matches!(
            kl_exact_small(&m, &[0.2], &[0.0], 20),
            Err(GhmmError::TooLarge { .. })
        ));
    }

    #[test]
    fn quadratic_grid_validation() {
        let m = FiniteHmm::three_state();
        let run = McRun::new(1000, 1);
        assert!(quadratic_check(&m, &[0.1], &[1.0], &[0.1, 0.0], &run).is_err());
        assert!(quadratic_check(&m, &[0.1], &[1.0], &[0.1, 0.2], &run).is_err());
    }
}
