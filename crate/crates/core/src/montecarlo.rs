//! Seeded simulation, long-run averages and exhaustive enumeration oracles.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{GhmmError, Result};
use crate::ghmm::Ghmm;
use crate::models::finite::FiniteHmm;

/// Number of batches for batch-means standard errors.
pub const BATCHES: usize = 20;

/// Enumeration cap on the number of observation sequences.
pub const ENUMERATION_CAP: u128 = 1_000_000;

/// Identifies one independent random stream: ChaCha8 keyed by `seed`, stream id `stream`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StreamKey {
    pub seed: u64,
    pub stream: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl StreamKey {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn rng(self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Deterministic sub-stream for component `i` of a composite draw.
    pub fn child(self, i: u64) -> Self {
        Self {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(i.wrapping_add(1))),
        }
    }
}

/// Monte Carlo run settings shared by the estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McRun {
    pub n: usize,
    pub seed: u64,
    pub stream: u64,
    pub burn_in: usize,
    pub x0: Option<usize>,
}

impl McRun {
    /// `n` observations, stream 0, burn-in `n/10`, hidden start drawn from the initial law.
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            stream: 0,
            burn_in: n / 10,
            x0: None,
        }
    }

    pub fn burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    pub fn x0(mut self, x0: Option<usize>) -> Self {
        self.x0 = x0;
        self
    }

    pub fn key(&self) -> StreamKey {
        StreamKey::new(self.seed, self.stream)
    }

    /// Length of the post-burn-in window; errors unless it holds at least one step per batch.
    pub fn window(&self) -> Result<usize> {
        if self.n <= self.burn_in || self.n - self.burn_in < BATCHES {
            return Err(GhmmError::TooShort {
                len: self.n,
                needed: self.burn_in + BATCHES - 1,
            });
        }
        Ok(self.n - self.burn_in)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory<O> {
    pub obs: Vec<O>,
    pub hidden: Option<Vec<usize>>,
    pub theta: Vec<f64>,
    pub seed: u64,
    pub stream: u64,
    pub n: usize,
}

pub fn simulate<M: Ghmm>(
    model: &M,
    theta: &[f64],
    n: usize,
    seed: u64,
    x0: Option<usize>,
) -> Result<Trajectory<M::Obs>> {
    simulate_run(model, theta, &McRun::new(n, seed).x0(x0))
}

pub fn simulate_run<M: Ghmm>(model: &M, theta: &[f64], run: &McRun) -> Result<Trajectory<M::Obs>> {
    let p = model.bind(theta, 0)?;
    let path = model.simulate(&p, run.n, run.key(), run.x0)?;
    Ok(Trajectory {
        obs: path.obs,
        hidden: path.hidden,
        theta: theta.to_vec(),
        seed: run.seed,
        stream: run.stream,
        n: run.n,
    })
}

/// Streaming batch-means accumulator for vector-valued increments.
///
/// The window of `len` items is cut into [`BATCHES`] contiguous batches whose
/// sizes differ by at most one.
#[derive(Debug, Clone)]
pub struct BatchMeans {
    len: usize,
    dim: usize,
    seen: usize,
    batch: usize,
    batch_count: usize,
    total: Vec<f64>,
    current: Vec<f64>,
    means: Vec<Vec<f64>>,
}

impl BatchMeans {
    pub fn new(len: usize, dim: usize) -> Result<Self> {
        if len < BATCHES {
            return Err(GhmmError::TooShort {
                len,
                needed: BATCHES - 1,
            });
        }
        Ok(Self {
            len,
            dim,
            seen: 0,
            batch: 0,
            batch_count: 0,
            total: vec![0.0; dim],
            current: vec![0.0; dim],
            means: Vec::with_capacity(BATCHES),
        })
    }

    fn batch_end(&self, b: usize) -> usize {
        (b + 1) * self.len / BATCHES
    }

    pub fn push(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.dim);
        for i in 0..self.dim {
            self.current[i] += x[i];
            self.total[i] += x[i];
        }
        self.seen += 1;
        self.batch_count += 1;
        if self.seen == self.batch_end(self.batch) {
            let c = self.batch_count as f64;
            self.means.push(self.current.iter().map(|v| v / c).collect());
            self.current.iter_mut().for_each(|v| *v = 0.0);
            self.batch_count = 0;
            self.batch += 1;
        }
    }

    /// Window mean and batch-means standard error per coordinate.
    pub fn finish(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.seen != self.len {
            return Err(GhmmError::TooShort {
                len: self.seen,
                needed: self.len - 1,
            });
        }
        let n = self.len as f64;
        let mean: Vec<f64> = self.total.iter().map(|v| v / n).collect();
        let b = BATCHES as f64;
        let se = (0..self.dim)
            .map(|i| {
                let mb: f64 = self.means.iter().map(|m| m[i]).sum::<f64>() / b;
                let var: f64 = self.means.iter().map(|m| (m[i] - mb).powi(2)).sum::<f64>() / (b - 1.0);
                (var / b).sqrt()
            })
            .collect();
        Ok((mean, se))
    }
}

/// Post-burn-in mean and batch-means standard error of a scalar stream.
pub fn long_run_average(stream: &[f64], burn_in: usize) -> Result<(f64, f64)> {
    if stream.len() <= burn_in {
        return Err(GhmmError::TooShort {
            len: stream.len(),
            needed: burn_in,
        });
    }
    let mut bm = BatchMeans::new(stream.len() - burn_in, 1)?;
    for &x in &stream[burn_in..] {
        bm.push(&[x]);
    }
    let (m, se) = bm.finish()?;
    Ok((m[0], se[0]))
}

/// Tables of a finite model with a finite alphabet at one parameter value.
struct ExactTables {
    init: Vec<f64>,
    trans: Vec<Vec<f64>>,
    /// `emis[symbol][x]`
    emis: Vec<Vec<f64>>,
}

fn exact_tables(model: &FiniteHmm, theta: &[f64], alphabet: &[f64]) -> Result<ExactTables> {
    let p = model.bind(theta, 0)?;
    let d = model.n_states();
    let a = p.transition_dense();
    let emis = alphabet
        .iter()
        .map(|&y| {
            let mut e = vec![0.0; d];
            model.emission_values(&p, y, &mut e);
            e
        })
        .collect();
    Ok(ExactTables {
        init: p.initial_law().to_vec(),
        trans: (0..d).map(|s| a.row(s).iter().copied().collect()).collect(),
        emis,
    })
}

pub(crate) fn enumeration_size(alphabet: usize, n: usize) -> Result<u128> {
    let mut size: u128 = 1;
    for _ in 0..=n {
        size = size.saturating_mul(alphabet as u128);
    }
    if size > ENUMERATION_CAP {
        return Err(GhmmError::TooLarge {
            size,
            cap: ENUMERATION_CAP,
        });
    }
    Ok(size)
}

/// Depth-first walk over every observation sequence `y_{0:n}`, carrying the
/// weight of every individual hidden path (no collapsing by state). At each
/// leaf, `visit` receives the sequence (as symbol indices) and `L(θ_j; y)` for
/// every parameter vector.
fn walk_sequences(
    d: usize,
    tables: &[ExactTables],
    n: usize,
    depth: usize,
    prefix: &mut Vec<usize>,
    paths: &[Vec<f64>],
    visit: &mut dyn FnMut(&[usize], &[f64]),
) {
    let m = tables[0].emis.len();
    for sym in 0..m {
        prefix.push(sym);
        let next: Vec<Vec<f64>> = tables
            .iter()
            .zip(paths)
            .map(|(tb, w)| {
                if depth == 0 {
                    (0..d).map(|x| tb.init[x] * tb.emis[sym][x]).collect()
                } else {
                    let mut out = vec![0.0; w.len() * d];
                    for (path, &wp) in w.iter().enumerate() {
                        let last = path % d;
                        for x in 0..d {
                            out[path * d + x] = wp * tb.trans[last][x] * tb.emis[sym][x];
                        }
                    }
                    out
                }
            })
            .collect();
        if depth == n {
            let lik: Vec<f64> = next.iter().map(|w| w.iter().sum()).collect();
            visit(prefix, &lik);
        } else {
            walk_sequences(d, tables, n, depth + 1, prefix, &next, visit);
        }
        prefix.pop();
    }
}

/// Calls `visit(y, [L(θ_j; y)]_j)` for every sequence of `n+1` observations.
///
/// Likelihoods are exhaustive sums over hidden paths, independent of the filter.
pub fn enumerate_likelihoods(
    model: &FiniteHmm,
    thetas: &[&[f64]],
    n: usize,
    mut visit: impl FnMut(&[f64], &[f64]),
) -> Result<()> {
    let alphabet = model
        .alphabet()
        .ok_or_else(|| GhmmError::InvalidArgument("enumeration needs a finite alphabet".into()))?;
    enumeration_size(alphabet.len(), n)?;
    let tables: Vec<ExactTables> = thetas
        .iter()
        .map(|th| exact_tables(model, th, &alphabet))
        .collect::<Result<_>>()?;
    let mut ys = vec![0.0; n + 1];
    let mut adapter = |idx: &[usize], lik: &[f64]| {
        for (y, &i) in ys.iter_mut().zip(idx) {
            *y = alphabet[i];
        }
        visit(&ys, lik);
    };
    let empty = vec![Vec::new(); tables.len()];
    walk_sequences(
        model.n_states(),
        &tables,
        n,
        0,
        &mut Vec::with_capacity(n + 1),
        &empty,
        &mut adapter,
    );
    Ok(())
}

/// Exact `Σ_y L(θ_gen; y)·functional(y, L(θ_gen; y))` over sequences `y_{0:n}`.
pub fn enumerate_expectation(
    model: &FiniteHmm,
    theta_gen: &[f64],
    functional: impl Fn(&[f64], f64) -> f64,
    n: usize,
) -> Result<f64> {
    let mut total = 0.0;
    enumerate_likelihoods(model, &[theta_gen], n, |y, lik| {
        if lik[0] > 0.0 {
            total += lik[0] * functional(y, lik[0]);
        }
    })?;
    Ok(total)
}

/// Exhaustive hidden-path likelihood of a single observation sequence.
pub fn path_sum_likelihood(model: &FiniteHmm, theta: &[f64], y: &[f64]) -> Result<f64> {
    let p = model.bind(theta, 0)?;
    let d = model.n_states();
    let a = p.transition_dense();
    let emis: Vec<Vec<f64>> = y
        .iter()
        .map(|&v| {
            let mut e = vec![0.0; d];
            model.emission_values(&p, v, &mut e);
            e
        })
        .collect();
    let init = p.initial_law();
    fn rec(t: usize, last: usize, w: f64, a: &nalgebra::DMatrix<f64>, emis: &[Vec<f64>]) -> f64 {
        if t == emis.len() {
            return w;
        }
        (0..a.ncols())
            .map(|x| rec(t + 1, x, w * a[(last, x)] * emis[t][x], a, emis))
            .sum()
    }
    if y.is_empty() {
        return Err(GhmmError::EmptySequence);
    }
    Ok((0..d).map(|x| rec(1, x, init[x] * emis[0][x], &a, &emis)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ghmm::log_likelihood;

    #[test]
    fn constant_stream() {
        let (m, se) = long_run_average(&[2.5; 400], 40).unwrap();
        assert_eq!(m, 2.5);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn alternating_stream() {
        let s: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let (m, se) = long_run_average(&s, 0).unwrap();
        assert!(m.abs() <= 3.0 * se + 1e-15);
    }

    #[test]
    fn ar1_stream_recovers_mean() {
        use rand::Rng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = StreamKey::new(11, 0).rng();
        let mut x = 2.0;
        let s: Vec<f64> = (0..100_000)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                x = 2.0 + 0.8 * (x - 2.0) + z;
                let _ = rng.random::<u8>();
                x
            })
            .collect();
        let (m, se) = long_run_average(&s, 1000).unwrap();
        assert!((m - 2.0).abs() < 3.0 * se, "{m} ± {se}");
    }

    #[test]
    fn too_short_stream() {
        assert!(matches!(
            long_run_average(&[1.0; 10], 0),
            Err(GhmmError::TooShort { .. })
        ));
        assert!(matches!(
            long_run_average(&[1.0; 10], 10),
            Err(GhmmError::TooShort { .. })
        ));
    }

    #[test]
    fn simulation_is_deterministic() {
        let m = FiniteHmm::three_state();
        let a = simulate(&m, &[0.1], 500, 3, None).unwrap();
        let b = simulate(&m, &[0.1], 500, 3, None).unwrap();
        assert_eq!(a, b);
        let c = simulate(&m, &[0.1], 500, 4, None).unwrap();
        assert_ne!(a.obs, c.obs);
    }

    #[test]
    fn three_state_marginal_frequency() {
        let m = FiniteHmm::three_state();
        let t = simulate(&m, &[0.0], 100_000, 1, None).unwrap();
        let f = t.obs.iter().filter(|&&y| y == 1.0).count() as f64 / 1e5;
        assert!((0.495..=0.505).contains(&f), "{f}");
    }

    #[test]
    fn deterministic_emission() {
        let m = FiniteHmm::affine_bernoulli(
            nalgebra::DMatrix::from_element(3, 3, 1.0 / 3.0),
            vec![1.0; 3],
            vec![0.0; 3],
            crate::models::InitialLaw::Stationary,
        )
        .unwrap();
        let t = simulate(&m, &[0.0], 1000, 9, None).unwrap();
        assert!(t.obs.iter().all(|&y| y == 1.0));
    }

    #[test]
    fn enumeration_totals_and_entropy() {
        let m = FiniteHmm::three_state();
        let one = enumerate_expectation(&m, &[0.0], |_, _| 1.0, 5).unwrap();
        assert!((one - 1.0).abs() < 1e-10);
        let ell = enumerate_expectation(&m, &[0.0], |_, l| l.ln(), 0).unwrap();
        assert!((ell + std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn enumeration_matches_filter_pathwise() {
        let m = FiniteHmm::three_state();
        let theta = [0.17];
        enumerate_likelihoods(&m, &[&theta], 6, |y, l| {
            let ll = log_likelihood(&m, &theta, y).unwrap();
            assert!((ll - l[0].ln()).abs() < 1e-10);
        })
        .unwrap();
    }

    #[test]
    fn enumeration_cap() {
        let m = FiniteHmm::three_state();
        assert!(matches!(
            enumerate_expectation(&m, &[0.0], |_, _| 1.0, 20),
            Err(GhmmError::TooLarge { .. })
        ));
    }

    #[test]
    fn child_streams_differ() {
        let k = StreamKey::new(5, 2);
        assert_ne!(k.child(0), k.child(1));
        assert_eq!(k.child(0), StreamKey::new(5, 2).child(0));
    }
}
