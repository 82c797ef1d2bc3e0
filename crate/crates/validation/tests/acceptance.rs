//! Acceptance criteria. Each test reports one `CRITERION <id> PASS|FAIL` line
//! and then asserts.

use std::path::Path;
use std::time::Instant;

use ghmm::ghmm::log_likelihood;
use ghmm::inference::{
    aic_order_select, aic_state_select, lr_stat, mle_fit, Block, EmissionFamily, FitOptions, Reparam,
};
use ghmm::info::{
    fisher_hessian_estimate, fisher_score_estimate, kl_additivity_check, kl_estimate, kl_exact_small, kl_sweep,
    quadratic_check, second_differences, KlEstimate,
};
use ghmm::models::{
    discrete_hmm, garch11, garch_fisher_series, lssm_fisher, trbm_to_hmm, DiscreteHmmSpec, Emission, FiniteHmm,
    Garch11Spec, InitialLaw, LssmModel, MeanSource, ProductModel, Sigma0, StreamPolicy, Transition, TrbmSpec,
};
use ghmm::montecarlo::{path_sum_likelihood, simulate};
use ghmm::sensitivity::{fd_hessian, fd_hessian_of, fd_score, hessian, score};
use ghmm::{Ghmm, McRun, StreamKey};
use ghmm_validation::{random_stochastic, report};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

// ---------------------------------------------------------------- 1

#[test]
fn criterion_1_three_state_sweep() {
    const N: usize = 50_000;
    const SEEDS: usize = 10;
    const K_SE: f64 = 3.0;
    const MAX_SECONDS: f64 = 120.0;
    let start = Instant::now();
    let m = FiniteHmm::three_state();
    let grid: Vec<Vec<f64>> = [0.10, 0.125, 0.15, 0.175, 0.20].iter().map(|d| vec![*d]).collect();
    let run = McRun::new(N, 2024).x0(Some(0));
    let points = kl_sweep(&m, &grid, &[0.0], &run, SEEDS).unwrap();
    let secs = start.elapsed().as_secs_f64();

    let all_positive = points.iter().all(|p| p.replicates.iter().all(|k| k.value > 0.0));
    let increasing = points.windows(2).all(|w| w[1].value > w[0].value);
    let second = second_differences(&points);
    let witness = second
        .iter()
        .any(|s| s.value < 0.0 && s.value.abs() > K_SE * s.se_independent);
    let values: Vec<String> = points.iter().map(|p| format!("{:.3e}", p.value)).collect();
    let sd: Vec<String> = second
        .iter()
        .map(|s| {
            format!(
                "{:.2e} (se {:.1e}, paired {:.1e})",
                s.value, s.se_independent, s.se_paired
            )
        })
        .collect();
    report("1a", all_positive, &format!("K_hat = {values:?}"));
    report("1b", increasing, "seed-averaged K_hat strictly increasing");
    report("1c", witness, &format!("second differences {sd:?}"));
    report("1-runtime", secs < MAX_SECONDS, &format!("{secs:.1}s"));
    assert!(all_positive && increasing && secs < MAX_SECONDS);
    assert!(witness, "no negative second difference beyond {K_SE} se: {sd:?}");
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_2_quadratic_link() {
    const N: usize = 200_000;
    const RHO_BAND: (f64, f64) = (0.9, 1.1);
    const MAX_SECONDS: f64 = 300.0;
    let start = Instant::now();
    let m = FiniteHmm::three_state();
    let chk = quadratic_check(&m, &[0.1], &[1.0], &[0.2, 0.1, 0.05, 0.025], &McRun::new(N, 77)).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let last = chk.rows.last().unwrap();
    let in_band = (RHO_BAND.0..=RHO_BAND.1).contains(&last.rho);
    let rows: Vec<String> = chk
        .rows
        .iter()
        .map(|r| format!("eps={} rho={:.3}±{:.3}", r.eps, r.rho, r.rho_se))
        .collect();
    let pass = chk.decreasing && in_band && secs < MAX_SECONDS;
    report(
        "2",
        pass,
        &format!("I={:.4} {rows:?} ({secs:.1}s)", chk.fisher.get(0, 0)),
    );
    assert!(chk.decreasing, "|rho-1| not decreasing: {rows:?}");
    assert!(in_band, "rho(0.025) = {} outside {RHO_BAND:?}", last.rho);
    assert!(secs < MAX_SECONDS);
}

// ---------------------------------------------------------------- 3

/// Exact Gaussian AR(1) log-likelihood with unit innovations and a stationary start.
fn ar1_exact_loglik(a: f64, y: &[f64]) -> f64 {
    let c = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let v0 = 1.0 / (1.0 - a * a);
    let head = -c - 0.5 * v0.ln() - 0.5 * y[0] * y[0] / v0;
    head + y.windows(2).map(|w| -c - 0.5 * (w[1] - a * w[0]).powi(2)).sum::<f64>()
}

#[test]
fn criterion_3a_ar1_fisher() {
    const A: f64 = 0.5;
    const TARGET: f64 = 4.0 / 3.0;
    const REL_TOL: f64 = 0.02;
    // one path of n=5000 has sampling sd ~ sqrt(2/n)·I ≈ 2.7%
    const ORACLE_TOL: f64 = 0.1;
    const MAX_SECONDS: f64 = 300.0;
    let start = Instant::now();
    let model = LssmModel::varma(1, 1, 0, &DMatrix::identity(1, 1)).unwrap();
    let theta = [-A];

    let y: Vec<f64> = simulate(&model, &theta, 5000, 5, None)
        .unwrap()
        .obs
        .iter()
        .map(|v| v[0])
        .collect();
    let h = fd_hessian_of(|t| Ok(ar1_exact_loglik(t[0], &y)), &[A], 1e-4).unwrap();
    let oracle = -h[0] / y.len() as f64;

    let run = McRun::new(200_000, 31);
    let steady = lssm_fisher(&model, &theta, &run).unwrap().get(0, 0);
    let generic = fisher_hessian_estimate(&model, &theta, &run).unwrap().get(0, 0);
    let secs = start.elapsed().as_secs_f64();
    let rel = |v: f64| (v - TARGET).abs() / TARGET;
    let pass = rel(oracle) < ORACLE_TOL && rel(steady) < REL_TOL && rel(generic) < REL_TOL && secs < MAX_SECONDS;
    report(
        "3a",
        pass,
        &format!(
            "oracle={oracle:.4} steady-state={steady:.4} hessian-average={generic:.4} target={TARGET:.4} ({secs:.1}s)"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_3b_garch_fisher() {
    const N: usize = 200_000;
    const K_SE: f64 = 3.0;
    const BETA: usize = 2;
    let spec = Garch11Spec {
        delta: 0.1,
        alpha: 0.2,
        beta: 0.7,
        sigma0: Sigma0::StationaryMean,
    };
    let (m, theta) = garch11(&spec).unwrap();
    let run = McRun::new(N, 99);
    let h = fisher_hessian_estimate(&m, &theta, &run).unwrap();
    let s = fisher_score_estimate(&m, &theta, &run).unwrap();
    let series = garch_fisher_series(&spec, &run).unwrap();
    let est = [
        ("hessian-average", h.get(BETA, BETA), h.se_at(BETA, BETA)),
        ("score-outer", s.get(BETA, BETA), s.se_at(BETA, BETA)),
        ("series", series.value, series.se),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for i in 0..3 {
        for j in (i + 1)..3 {
            let comb = est[i].2.hypot(est[j].2);
            let diff = (est[i].1 - est[j].1).abs();
            pass &= diff <= K_SE * comb;
            detail.push(format!(
                "{}/{}: |{:.3}-{:.3}|={diff:.3} vs {:.3}",
                est[i].0,
                est[j].0,
                est[i].1,
                est[j].1,
                K_SE * comb
            ));
        }
    }
    report("3b", pass, &detail.join("; "));
    assert!(pass);
}

// ---------------------------------------------------------------- 4

#[test]
fn criterion_4_path_sum_oracle() {
    const CASES: usize = 25;
    const LL_TOL: f64 = 1e-10;
    let mut rng = StreamKey::new(4, 0).rng();
    let mut worst = 0.0f64;
    let mut kl_ok = true;
    for _ in 0..CASES {
        let d = rng.random_range(1..=4);
        let m = rng.random_range(2..=3);
        let n = rng.random_range(1..=8);
        let spec = DiscreteHmmSpec {
            transition: random_stochastic(&mut rng, d, d),
            emission: random_stochastic(&mut rng, d, m),
            initial: None,
        };
        let (model, theta) = discrete_hmm(&spec).unwrap();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..m) as f64).collect();
        let ll = log_likelihood(&model, &theta, &y).unwrap();
        let exact = path_sum_likelihood(&model, &theta, &y).unwrap().ln();
        worst = worst.max((ll - exact).abs());
        let theta1: Vec<f64> = theta.iter().map(|t| t + rng.random_range(-0.5..0.5)).collect();
        let k = kl_exact_small(&model, &theta1, &theta, n).unwrap();
        let k0 = kl_exact_small(&model, &theta, &theta, n).unwrap();
        kl_ok &= k >= 0.0 && k0 == 0.0;
    }
    let pass = worst < LL_TOL && kl_ok;
    report(
        "4",
        pass,
        &format!("max |filter - path sum| = {worst:.2e}; exact KL >= 0 and zero at theta0: {kl_ok}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 5

const SCORE_TOL: f64 = 1e-5;
const HESS_TOL: f64 = 1e-4;
const ASYM_TOL: f64 = 1e-8;
const FD_STEP_SCORE: f64 = 1e-5;
const FD_STEP_HESS: f64 = 1e-4;
const CASES_PER_FAMILY: usize = 20;

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// Model, θ and an observation path.
type Case<M> = (M, Vec<f64>, Vec<<M as Ghmm>::Obs>);

/// Worst score, Hessian and asymmetry errors over the cases.
fn derivative_errors<M: Ghmm + Sync>(cases: &[Case<M>]) -> [f64; 3] {
    cases
        .par_iter()
        .map(|(m, theta, y)| {
            let s = score(m, theta, y).unwrap();
            let fs = fd_score(m, theta, y, FD_STEP_SCORE).unwrap();
            let h = hessian(m, theta, y).unwrap();
            let fh = fd_hessian(m, theta, y, FD_STEP_HESS).unwrap();
            [rel_err(&s, &fs), rel_err(&h.matrix, &fh), h.asymmetry]
        })
        .reduce(|| [0.0; 3], |a, b| [a[0].max(b[0]), a[1].max(b[1]), a[2].max(b[2])])
}

fn cases<M: Ghmm>(family: u64, mut make: impl FnMut(&mut rand_chacha::ChaCha8Rng) -> (M, Vec<f64>)) -> Vec<Case<M>> {
    (0..CASES_PER_FAMILY as u64)
        .map(|i| {
            let mut rng = StreamKey::new(50 + family, i).rng();
            let (m, theta) = make(&mut rng);
            let n = rng.random_range(20..60);
            let y = simulate(&m, &theta, n, 1000 * family + i, None).unwrap().obs;
            (m, theta, y)
        })
        .collect()
}

#[test]
fn criterion_5_derivatives() {
    let mut results: Vec<(&str, [f64; 3])> = Vec::new();
    results.push((
        "categorical",
        derivative_errors(&cases(0, |rng| {
            let d = rng.random_range(2..=3);
            let m = rng.random_range(2..=3);
            let spec = DiscreteHmmSpec {
                transition: random_stochastic(rng, d, d),
                emission: random_stochastic(rng, d, m),
                initial: None,
            };
            discrete_hmm(&spec).unwrap()
        })),
    ));
    results.push((
        "bernoulli",
        derivative_errors(&cases(1, |rng| {
            let d = rng.random_range(2..=3);
            let base: Vec<f64> = (0..d).map(|_| rng.random_range(0.3..0.7)).collect();
            let slope: Vec<f64> = (0..d).map(|_| rng.random_range(-0.5..0.5)).collect();
            let m =
                FiniteHmm::affine_bernoulli(random_stochastic(rng, d, d), base, slope, InitialLaw::Stationary).unwrap();
            (m, vec![rng.random_range(-0.3..0.3)])
        })),
    ));
    results.push((
        "gaussian-hmm",
        derivative_errors(&cases(2, |rng| {
            let d = rng.random_range(2..=3);
            let m = FiniteHmm::new(
                d,
                d,
                Transition::Fixed(random_stochastic(rng, d, d)),
                Emission::Gaussian {
                    means: (0..d).map(MeanSource::Param).collect(),
                    sd: rng.random_range(0.7..1.5),
                },
                InitialLaw::Stationary,
            )
            .unwrap();
            let theta = (0..d).map(|i| i as f64 * 1.5 + rng.random_range(-0.5..0.5)).collect();
            (m, theta)
        })),
    ));
    results.push((
        "garch11",
        derivative_errors(&cases(3, |rng| {
            let alpha = rng.random_range(0.05..0.3);
            let beta = rng.random_range(0.3..(0.95 - alpha));
            let spec = Garch11Spec {
                delta: rng.random_range(0.05..0.3),
                alpha,
                beta,
                sigma0: Sigma0::StationaryMean,
            };
            garch11(&spec).unwrap()
        })),
    ));
    results.push((
        "varma",
        derivative_errors(&cases(4, |rng| {
            let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.8]);
            let model = LssmModel::varma(2, 1, 1, &sigma).unwrap();
            let a = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-0.35..0.35));
            let b = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-0.35..0.35));
            (model, LssmModel::varma_theta(&[a], &[b]))
        })),
    ));
    results.push((
        "trbm",
        derivative_errors(&cases(5, |rng| {
            let mut spec = TrbmSpec::zeros(2, 2);
            spec.w = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
            spec.w_prime = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
            spec.b_y = DVector::from_fn(2, |_, _| rng.random_range(-0.5..0.5));
            spec.b_h = DVector::from_fn(2, |_, _| rng.random_range(-0.5..0.5));
            trbm_to_hmm(&spec).unwrap()
        })),
    ));
    let pass = results
        .iter()
        .all(|(_, e)| e[0] < SCORE_TOL && e[1] < HESS_TOL && e[2] < ASYM_TOL);
    let detail: Vec<String> = results
        .iter()
        .map(|(name, e)| format!("{name}: score {:.1e} hessian {:.1e} asym {:.1e}", e[0], e[1], e[2]))
        .collect();
    report("5", pass, &detail.join("; "));
    assert!(pass);
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_6_kl_properties() {
    const K_SE: f64 = 3.0;
    const SHARED_TOL: f64 = 1e-12;
    let run = McRun::new(50_000, 606);
    let three = FiniteHmm::three_state();
    let garch_spec = Garch11Spec {
        delta: 0.1,
        alpha: 0.2,
        beta: 0.7,
        sigma0: Sigma0::StationaryMean,
    };
    let (garch, g0) = garch11(&garch_spec).unwrap();
    let g1 = vec![0.12, 0.25, 0.6];
    let (cat, c0) = discrete_hmm(&DiscreteHmmSpec {
        transition: DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]),
        emission: DMatrix::from_row_slice(2, 3, &[0.7, 0.2, 0.1, 0.1, 0.3, 0.6]),
        initial: None,
    })
    .unwrap();
    let c1: Vec<f64> = c0.iter().map(|t| t + 0.1).collect();
    let ar = LssmModel::varma(1, 1, 0, &DMatrix::identity(1, 1)).unwrap();

    let mut estimates: Vec<(String, KlEstimate)> = Vec::new();
    for d in [0.0, 0.01, 0.05, 0.2] {
        estimates.push((
            format!("three-state d={d}"),
            kl_estimate(&three, &[d], &[0.0], &run).unwrap(),
        ));
    }
    estimates.push(("garch".into(), kl_estimate(&garch, &g1, &g0, &run).unwrap()));
    estimates.push(("garch reversed".into(), kl_estimate(&garch, &g0, &g1, &run).unwrap()));
    estimates.push(("categorical".into(), kl_estimate(&cat, &c1, &c0, &run).unwrap()));
    estimates.push(("ar1".into(), kl_estimate(&ar, &[-0.4], &[-0.5], &run).unwrap()));
    let nonneg = estimates.iter().all(|(_, k)| k.value >= -K_SE * k.se);

    let shared = ProductModel::new(three.clone(), three.clone(), StreamPolicy::Shared);
    let s = kl_additivity_check(&shared, &[0.15, 0.15], &[0.0, 0.0], &run).unwrap();
    let shared_ok = s.difference.abs() < SHARED_TOL && (s.k_product.value - 2.0 * s.k_a.value).abs() < SHARED_TOL;

    let mixed = ProductModel::new(three, garch, StreamPolicy::Independent);
    let theta1: Vec<f64> = [vec![0.15], g1].concat();
    let theta0: Vec<f64> = [vec![0.0], g0].concat();
    let x = kl_additivity_check(&mixed, &theta1, &theta0, &run).unwrap();
    let mixed_ok = x.difference.abs() < K_SE * x.combined_se;

    let pass = nonneg && shared_ok && mixed_ok;
    let list: Vec<String> = estimates
        .iter()
        .map(|(n, k)| format!("{n}: {:.2e}±{:.1e}", k.value, k.se))
        .collect();
    report(
        "6",
        pass,
        &format!(
            "{}; shared diff {:.1e}; mixed diff {:.2e} (3se {:.2e})",
            list.join(", "),
            s.difference,
            x.difference,
            K_SE * x.combined_se
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 7

const AIC_REPS: u64 = 50;
const AIC_N: usize = 2000;
const AIC_MIN_HITS: usize = 40;

fn two_state_data(seed: u64) -> Vec<f64> {
    let m = FiniteHmm::new(
        2,
        2,
        Transition::Fixed(DMatrix::from_row_slice(2, 2, &[0.8, 0.2, 0.3, 0.7])),
        Emission::Gaussian {
            means: vec![MeanSource::Param(0), MeanSource::Param(1)],
            sd: 1.0,
        },
        InitialLaw::Stationary,
    )
    .unwrap();
    simulate(&m, &[-2.0, 2.0], AIC_N, seed, None).unwrap().obs
}

#[test]
fn criterion_7_aic_selection() {
    const MAX_SECONDS: f64 = 600.0;
    let start = Instant::now();
    let family = EmissionFamily::Gaussian { sd: 1.0 };
    let picks: Vec<(usize, usize)> = (0..AIC_REPS)
        .into_par_iter()
        .map(|r| {
            let y = two_state_data(7000 + r);
            let opts = FitOptions {
                restarts: 3,
                seed: r,
                ..FitOptions::default()
            };
            let order = aic_order_select(&y, 2, 3, family, &opts).unwrap().selected;
            let states = aic_state_select(&y, 1, 1..=3, family, &opts).unwrap().selected;
            (order, states)
        })
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let order_hits = picks.iter().filter(|p| p.0 == 1).count();
    let state_hits = picks.iter().filter(|p| p.1 == 2).count();
    let pass = order_hits >= AIC_MIN_HITS && state_hits >= AIC_MIN_HITS && secs < MAX_SECONDS;
    report(
        "7",
        pass,
        &format!("order k=1 in {order_hits}/{AIC_REPS}; states k=2 in {state_hits}/{AIC_REPS} ({secs:.1}s)"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 8

#[test]
fn criterion_8_lr_mean() {
    const REPS: u64 = 200;
    const N: usize = 2000;
    const BAND: (f64, f64) = (0.7, 1.3);
    let m = FiniteHmm::three_state();
    let full = Reparam::new(1, vec![Block::Interval(0, -0.5, 0.5)]).unwrap();
    let restricted = Reparam::new(1, vec![Block::Fixed(0)]).unwrap();
    let opts = FitOptions {
        restarts: 1,
        ..FitOptions::default()
    };
    let stats: Vec<f64> = (0..REPS)
        .into_par_iter()
        .map(|r| {
            let y = simulate(&m, &[0.0], N, 8000 + r, None).unwrap().obs;
            let f = mle_fit(&m, &y, &[0.0], &full, &opts).unwrap();
            let g = mle_fit(&m, &y, &[0.0], &restricted, &opts).unwrap();
            lr_stat(&f, &g).unwrap()
        })
        .collect();
    let mean = stats.iter().sum::<f64>() / stats.len() as f64;
    let pass = (BAND.0..=BAND.1).contains(&mean);
    report("8", pass, &format!("mean LR over {REPS} replications = {mean:.3}"));
    assert!(pass);
}

// ---------------------------------------------------------------- 9

const DETERMINISM_CONFIG: &str = r#"
seed = 11

[model]
family = "categorical"
transition = [[0.9, 0.1], [0.2, 0.8]]
emission = [[0.7, 0.2, 0.1], [0.1, 0.3, 0.6]]

[estimator]
n = 4000
replicates = 3
grid = [0.5, 1.0, 1.5]
sweep_index = 5
eps_grid = [0.4, 0.2]
direction = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0]

[data]
path = "y.csv"

[aic]
emission = { kind = "categorical", symbols = 3 }
k_max = 2
states = 2
state_range = [1, 2]
restarts = 2
"#;

fn ghmm(dir: &Path, args: &[&str]) {
    let config = dir.join("run.toml");
    let mut argv = vec![
        "ghmm".as_ref(),
        "--config".as_ref(),
        config.as_os_str(),
        "--out".as_ref(),
        dir.as_os_str(),
    ];
    argv.extend(args.iter().map(|a| std::ffi::OsStr::new(*a)));
    let code = ghmm_cli::run_from_args(argv);
    assert_eq!(code, 0, "ghmm {args:?} exited with {code}");
}

fn run_all(dir: &Path, commands: &[&str]) {
    std::fs::write(dir.join("run.toml"), DETERMINISM_CONFIG).unwrap();
    ghmm(dir, &["simulate"]);
    std::fs::copy(dir.join("simulate.csv"), dir.join("y.csv")).unwrap();
    for c in commands {
        ghmm(dir, &[c]);
    }
}

#[test]
fn criterion_9_determinism() {
    let commands = [
        "loglik",
        "score",
        "hessian",
        "fisher",
        "kl",
        "kl-sweep",
        "quad-check",
        "crlb",
        "aic-order",
        "aic-states",
    ];
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_all(a.path(), &commands);
    run_all(b.path(), &commands);
    let mut differing = Vec::new();
    for c in std::iter::once(&"simulate").chain(commands.iter()) {
        let name = format!("{c}.csv");
        let x = std::fs::read(a.path().join(&name)).unwrap();
        let y = std::fs::read(b.path().join(&name)).unwrap();
        if x != y || x.is_empty() {
            differing.push(name);
        }
    }
    let pass = differing.is_empty();
    report(
        "9",
        pass,
        &format!("{} commands compared; differing: {differing:?}", commands.len() + 1),
    );
    assert!(pass);
}
