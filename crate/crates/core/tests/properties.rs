use approx::assert_relative_eq;
use ghmm::inference::{embed_korder, penalty_delta, Block, Reparam};
use ghmm::info::kl_exact_small;
use ghmm::models::{discrete_hmm, DiscreteHmmSpec, FiniteHmm};
use ghmm::montecarlo::{long_run_average, path_sum_likelihood, BatchMeans};
use ghmm::multi_index::bundle_size;
use ghmm::sensitivity::{hessian, score};
use ghmm::{log_likelihood, MultiIndexSet};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn stochastic(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(0.05f64..1.0, rows * cols).prop_map(move |v| {
        let mut m = DMatrix::from_row_slice(rows, cols, &v);
        for mut r in m.row_iter_mut() {
            let s = r.sum();
            r /= s;
        }
        m
    })
}

/// A discrete HMM with `d ≤ 3` states over `m ≤ 3` symbols and an observation string of length ≤ 6.
fn small_hmm() -> impl Strategy<Value = (FiniteHmm, Vec<f64>, Vec<f64>)> {
    (1usize..=3, 2usize..=3, 1usize..=6).prop_flat_map(|(d, m, n)| {
        (stochastic(d, d), stochastic(d, m), prop::collection::vec(0..m, n)).prop_map(|(t, e, y)| {
            let (model, theta) = discrete_hmm(&DiscreteHmmSpec {
                transition: t,
                emission: e,
                initial: None,
            })
            .unwrap();
            (model, theta, y.into_iter().map(|s| s as f64).collect())
        })
    })
}

proptest! {
    #[test]
    fn multi_index_set_is_graded_and_indexable(q in 1usize..5, r in 0usize..=3) {
        let set = MultiIndexSet::new(q, r);
        prop_assert_eq!(set.len(), bundle_size(q, r));
        for i in 0..set.len() {
            prop_assert_eq!(set.index_of(set.exponents(i)), Some(i));
            if i > 0 {
                prop_assert!(set.degree(i) >= set.degree(i - 1));
            }
        }
    }

    #[test]
    fn filter_matches_path_sum((model, theta, y) in small_hmm()) {
        let ll = log_likelihood(&model, &theta, &y).unwrap();
        let exact = path_sum_likelihood(&model, &theta, &y).unwrap().ln();
        prop_assert!((ll - exact).abs() < 1e-10);
    }

    #[test]
    fn hessian_is_symmetric_and_score_finite((model, theta, y) in small_hmm()) {
        let s = score(&model, &theta, &y).unwrap();
        prop_assert!(s.iter().all(|v| v.is_finite()));
        let h = hessian(&model, &theta, &y).unwrap();
        prop_assert!(h.asymmetry < 1e-8);
    }

    #[test]
    fn exact_kl_is_nonnegative((model, theta, y) in small_hmm(), shift in -1.0f64..1.0) {
        let theta1: Vec<f64> = theta.iter().enumerate().map(|(i, t)| t + shift / (i + 1) as f64).collect();
        let k = kl_exact_small(&model, &theta1, &theta, y.len()).unwrap();
        prop_assert!(k >= -1e-12);
        prop_assert_eq!(kl_exact_small(&model, &theta, &theta, y.len()).unwrap(), 0.0);
    }

    #[test]
    fn reparam_round_trips(x in -3.0f64..3.0, p in 0.01f64..10.0, w in 0.01f64..0.99, a in 0.05f64..0.45, b in 0.05f64..0.45) {
        let r = Reparam::new(5, vec![
            Block::Identity(0),
            Block::Log(1),
            Block::Interval(2, 0.0, 1.0),
            Block::SimplexTail(vec![3, 4]),
        ]).unwrap();
        let theta = [x, p, w, a, b];
        let u = r.to_u(&theta).unwrap();
        let back = r.to_theta(&u, &theta);
        for (t, s) in theta.iter().zip(&back) {
            prop_assert!((t - s).abs() < 1e-9 * t.abs().max(1.0));
        }
    }

    #[test]
    fn korder_tuples_round_trip(l in 1usize..4, k in 1usize..4) {
        let e = embed_korder(l, k).unwrap();
        prop_assert_eq!(e.size, l.pow(k as u32));
        for i in 0..e.size {
            prop_assert_eq!(e.index(&e.tuple(i)), i);
            for z in 0..l {
                prop_assert!(e.admissible(i, e.successor(i, z)));
                prop_assert_eq!(e.last(e.successor(i, z)), z);
            }
        }
    }

    #[test]
    fn penalty_telescopes(t in 1u64..6, j in 1u32..6) {
        let total: u64 = (1..=j).map(|i| penalty_delta(t, i)).sum();
        prop_assert_eq!(total, t.pow(j) - 1);
    }

    #[test]
    fn batch_means_mean_is_the_window_mean(xs in prop::collection::vec(-10.0f64..10.0, 20..200)) {
        let mut bm = BatchMeans::new(xs.len(), 1).unwrap();
        for x in &xs {
            bm.push(&[*x]);
        }
        let (mean, se) = bm.finish().unwrap();
        let direct = xs.iter().sum::<f64>() / xs.len() as f64;
        prop_assert!((mean[0] - direct).abs() < 1e-12);
        prop_assert!(se[0] >= 0.0);
    }
}

#[test]
fn constant_stream_has_zero_se() {
    let (m, se) = long_run_average(&[2.5; 100], 10).unwrap();
    assert_relative_eq!(m, 2.5);
    assert_eq!(se, 0.0);
}
