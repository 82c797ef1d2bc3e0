//! Maps between an unconstrained optimizer space `u` and the parameter vector θ.

use crate::error::{GhmmError, Result};

/// Magnitude of a constrained coordinate in `u` beyond which a fit is reported as pinned to the boundary.
pub const BOUNDARY_U: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub enum Block {
    /// θ_i = u.
    Identity(usize),
    /// θ_i = exp(u).
    Log(usize),
    /// θ_i = a + (b − a)·logistic(u).
    Interval(usize, f64, f64),
    /// θ_{i_j} = exp(u_j) / (1 + Σ_k exp(u_k)): the listed coordinates stay positive with sum below one.
    SimplexTail(Vec<usize>),
    /// θ_i stays at its initial value.
    Fixed(usize),
}

/// A reparametrization covering every coordinate of θ exactly once.
#[derive(Debug, Clone, PartialEq)]
pub struct Reparam {
    dim: usize,
    blocks: Vec<Block>,
    /// Jitter scale per `u` coordinate.
    scales: Vec<f64>,
}

fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

impl Reparam {
    pub fn new(dim: usize, blocks: Vec<Block>) -> Result<Self> {
        let mut seen = vec![false; dim];
        let mut mark = |i: usize| -> Result<()> {
            match seen.get_mut(i) {
                Some(s) if !*s => {
                    *s = true;
                    Ok(())
                }
                _ => Err(GhmmError::InvalidArgument(format!(
                    "coordinate {i} missing or covered twice"
                ))),
            }
        };
        for b in &blocks {
            match b {
                Block::Identity(i) | Block::Log(i) | Block::Fixed(i) => mark(*i)?,
                Block::Interval(i, lo, hi) => {
                    if !(lo < hi) {
                        return Err(GhmmError::InvalidArgument(format!("empty interval for coordinate {i}")));
                    }
                    mark(*i)?
                }
                Block::SimplexTail(idx) => idx.iter().try_for_each(|&i| mark(i))?,
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(GhmmError::InvalidArgument(format!("coordinate {i} not covered")));
        }
        let mut r = Self {
            dim,
            blocks,
            scales: Vec::new(),
        };
        r.scales = vec![1.0; r.u_dim()];
        Ok(r)
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(dim, (0..dim).map(Block::Identity).collect()).expect("covers every coordinate")
    }

    /// Per-coordinate jitter scales in `u`.
    pub fn with_scales(mut self, scales: Vec<f64>) -> Result<Self> {
        if scales.len() != self.u_dim() {
            return Err(GhmmError::DimensionMismatch(
                "one jitter scale per free coordinate".into(),
            ));
        }
        self.scales = scales;
        Ok(self)
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn u_dim(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| match b {
                Block::Fixed(_) => 0,
                Block::SimplexTail(idx) => idx.len(),
                _ => 1,
            })
            .sum()
    }

    pub fn to_u(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let mut u = Vec::with_capacity(self.u_dim());
        for b in &self.blocks {
            match *b {
                Block::Identity(i) => u.push(theta[i]),
                Block::Log(i) => {
                    if !(theta[i] > 0.0) {
                        return Err(GhmmError::param(format!("theta[{i}]"), "must be positive"));
                    }
                    u.push(theta[i].ln());
                }
                Block::Interval(i, lo, hi) => {
                    let s = (theta[i] - lo) / (hi - lo);
                    if !(s > 0.0 && s < 1.0) {
                        return Err(GhmmError::param(
                            format!("theta[{i}]"),
                            format!("must lie in ({lo}, {hi})"),
                        ));
                    }
                    u.push((s / (1.0 - s)).ln());
                }
                Block::SimplexTail(ref idx) => {
                    let rest = 1.0 - idx.iter().map(|&i| theta[i]).sum::<f64>();
                    if !(rest > 0.0) || idx.iter().any(|&i| !(theta[i] > 0.0)) {
                        return Err(GhmmError::param(
                            format!("theta[{}]", idx[0]),
                            "coordinates must be positive with sum below one",
                        ));
                    }
                    u.extend(idx.iter().map(|&i| (theta[i] / rest).ln()));
                }
                Block::Fixed(_) => {}
            }
        }
        Ok(u)
    }

    /// θ from `u`; fixed coordinates are copied from `base`.
    pub fn to_theta(&self, u: &[f64], base: &[f64]) -> Vec<f64> {
        let mut theta = base.to_vec();
        let mut k = 0;
        for b in &self.blocks {
            match *b {
                Block::Identity(i) => {
                    theta[i] = u[k];
                    k += 1;
                }
                Block::Log(i) => {
                    theta[i] = u[k].exp();
                    k += 1;
                }
                Block::Interval(i, lo, hi) => {
                    theta[i] = lo + (hi - lo) * logistic(u[k]);
                    k += 1;
                }
                Block::SimplexTail(ref idx) => {
                    let uu = &u[k..k + idx.len()];
                    let m = uu.iter().fold(0.0f64, |a, v| a.max(*v));
                    let z = (-m).exp() + uu.iter().map(|v| (v - m).exp()).sum::<f64>();
                    for (&i, v) in idx.iter().zip(uu) {
                        theta[i] = (v - m).exp() / z;
                    }
                    k += idx.len();
                }
                Block::Fixed(_) => {}
            }
        }
        theta
    }

    /// `∂L/∂u = Jᵀ ∂L/∂θ` at `u`, given θ = `to_theta(u)`.
    pub fn pull_back(&self, theta: &[f64], grad_theta: &[f64]) -> Vec<f64> {
        let mut g = Vec::with_capacity(self.u_dim());
        for b in &self.blocks {
            match *b {
                Block::Identity(i) => g.push(grad_theta[i]),
                Block::Log(i) => g.push(grad_theta[i] * theta[i]),
                Block::Interval(i, lo, hi) => {
                    let s = (theta[i] - lo) / (hi - lo);
                    g.push(grad_theta[i] * (hi - lo) * s * (1.0 - s));
                }
                Block::SimplexTail(ref idx) => {
                    // ∂θ_i/∂u_j = θ_i (δ_ij − θ_j)
                    let dot: f64 = idx.iter().map(|&i| theta[i] * grad_theta[i]).sum();
                    g.extend(idx.iter().map(|&j| theta[j] * (grad_theta[j] - dot)));
                }
                Block::Fixed(_) => {}
            }
        }
        g
    }

    /// Whether any constrained coordinate of `u` exceeds [`BOUNDARY_U`] in magnitude.
    pub fn at_boundary(&self, u: &[f64]) -> bool {
        let mut k = 0;
        for b in &self.blocks {
            let width = match b {
                Block::Fixed(_) => 0,
                Block::SimplexTail(idx) => idx.len(),
                _ => 1,
            };
            if !matches!(b, Block::Identity(_)) && u[k..k + width].iter().any(|v| v.abs() > BOUNDARY_U) {
                return true;
            }
            k += width;
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Reparam {
        Reparam::new(
            5,
            vec![
                Block::Log(0),
                Block::SimplexTail(vec![1, 2]),
                Block::Interval(3, -0.5, 0.5),
                Block::Fixed(4),
            ],
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let r = sample();
        let theta = [0.1, 0.2, 0.7 - 1e-3, 0.25, 9.0];
        let u = r.to_u(&theta).unwrap();
        assert_eq!(u.len(), 4);
        let back = r.to_theta(&u, &theta);
        for (a, b) in theta.iter().zip(&back) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn pull_back_matches_fd() {
        let r = sample();
        let base = [0.1, 0.2, 0.5, 0.25, 9.0];
        let u = r.to_u(&base).unwrap();
        let f = |t: &[f64]| t[0] * t[1] + t[2].powi(2) - 3.0 * t[3] + t[4];
        let theta = r.to_theta(&u, &base);
        let grad = [theta[1], theta[0], 2.0 * theta[2], -3.0, 1.0];
        let g = r.pull_back(&theta, &grad);
        for k in 0..u.len() {
            let h = 1e-6;
            let mut up = u.clone();
            up[k] += h;
            let mut um = u.clone();
            um[k] -= h;
            let fd = (f(&r.to_theta(&up, &base)) - f(&r.to_theta(&um, &base))) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_infeasible_and_bad_cover() {
        let r = sample();
        assert!(r.to_u(&[0.1, 0.5, 0.6, 0.0, 0.0]).is_err());
        assert!(Reparam::new(2, vec![Block::Identity(0)]).is_err());
        assert!(Reparam::new(1, vec![Block::Identity(0), Block::Log(0)]).is_err());
    }

    #[test]
    fn boundary_detection_ignores_identity() {
        let r = Reparam::new(2, vec![Block::Identity(0), Block::Log(1)]).unwrap();
        assert!(!r.at_boundary(&[100.0, 0.0]));
        assert!(r.at_boundary(&[0.0, -31.0]));
    }
}
