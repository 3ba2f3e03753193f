use graphssl::autodiff::softmax_rows;
use graphssl::batching::{epoch_draws, epoch_schedule};
use graphssl::data::{make_two_moons, select_labeled};
use graphssl::eval::{error_rate, knn_query, mse_vs_ideal, Measure, SimilarityMatrix};
use graphssl::losses::loss_unsup;
use graphssl::trainer::rampup;
use graphssl::{Architecture, BatchSpec, Matrix, ModelState};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(lo..hi, rows * cols).prop_map(move |v| Matrix::new(rows, cols, v).unwrap())
}

fn sized_matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| matrix(r, c, -50.0, 50.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(a in sized_matrix(6, 6)) {
        let p = softmax_rows(&a);
        for r in p.iter_rows() {
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(r.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn rampup_is_bounded_and_monotone(max in 0.0..10.0f64, ramp in 0usize..100, delay in 0usize..100) {
        let mut prev = 0.0;
        for epoch in 1..=250 {
            let v = rampup(epoch, max, ramp, delay);
            prop_assert!((0.0..=max).contains(&v));
            prop_assert!(v >= prev);
            prev = v;
        }
        prop_assert_eq!(rampup(delay + ramp.max(1), max, ramp, delay), max);
    }

    #[test]
    fn unsup_loss_is_affine_in_the_weights(
        fi in matrix(5, 2, 0.0, 1.0),
        fj in matrix(5, 2, 0.0, 1.0),
        w0 in prop::collection::vec(0.0..1.0f64, 5),
        w1 in prop::collection::vec(0.0..1.0f64, 5),
        t in 0.0..1.0f64,
        beta in 0.1..5.0f64,
    ) {
        let mix: Vec<f64> = w0.iter().zip(&w1).map(|(a, b)| t * a + (1.0 - t) * b).collect();
        let lhs = loss_unsup(&fi, &fj, &mix, beta).unwrap();
        let rhs = t * loss_unsup(&fi, &fj, &w0, beta).unwrap() + (1.0 - t) * loss_unsup(&fi, &fj, &w1, beta).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0));
        prop_assert!(lhs >= 0.0);
    }

    #[test]
    fn mse_against_the_ideal_lies_in_the_unit_interval(
        values in matrix(6, 6, 0.0, 1.0),
        labels in prop::collection::vec(0usize..2, 6),
    ) {
        let s = SimilarityMatrix { values, indices: (0..6).collect(), labels };
        let e = mse_vs_ideal(&s);
        prop_assert!((0.0..=1.0).contains(&e));
    }

    #[test]
    fn every_sample_is_drawn_each_epoch(n in 20usize..200, b1 in 1usize..10, seed in any::<u64>()) {
        let spec = BatchSpec::new(2 * b1, 1).unwrap();
        prop_assume!(n >= spec.b1());
        let draws = epoch_draws(n, &spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(draws.len(), epoch_schedule(n, &spec));
        let mut seen = vec![false; n];
        for d in &draws {
            prop_assert_eq!(d.len(), spec.b1());
            let mut sorted = d.clone();
            sorted.sort_unstable();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), d.len());
            for &i in d {
                seen[i] = true;
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn labeled_subsets_are_balanced(half in 1usize..20, seed in any::<u64>()) {
        let ds = select_labeled(&make_two_moons(200, 0.1, seed).unwrap(), 2 * half, seed).unwrap();
        let ones = ds.labeled.iter().filter(|&&i| ds.labels[i] == 1).count();
        prop_assert_eq!(ds.labeled.len(), 2 * half);
        prop_assert_eq!(ones, half);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gaussian_neighbour_scores_are_symmetric(seed in any::<u64>(), a in 0usize..60, b in 0usize..60) {
        prop_assume!(a != b);
        let ds = make_two_moons(60, 0.15, seed).unwrap();
        let state = ModelState::init(&Architecture::with_widths(2, 4, 2, &[4], &[0.0]), seed, 0.99).unwrap();
        let measure = Measure::Gaussian { beta: 3.0 };
        let score = |t: usize, other: usize| {
            knn_query(&state, &ds, t, 59, measure).unwrap().neighbors.iter().find(|n| n.index == other).unwrap().score
        };
        prop_assert_eq!(score(a, b), score(b, a));
    }

    #[test]
    fn error_rate_ignores_positive_logit_scaling(seed in any::<u64>(), scale in 0.1..10.0f64) {
        let ds = make_two_moons(100, 0.15, seed).unwrap();
        let state = ModelState::init(&Architecture::with_widths(2, 8, 2, &[4], &[0.0]), seed, 0.99).unwrap();
        let mut scaled = state.clone();
        let last = scaled.classifier.layers.last_mut().unwrap();
        for v in last.weight.data_mut().iter_mut().chain(last.bias.data_mut()) {
            *v *= scale;
        }
        prop_assert_eq!(error_rate(&state, &ds).unwrap(), error_rate(&scaled, &ds).unwrap());
    }
}
