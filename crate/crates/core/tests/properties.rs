mod common;

use std::collections::HashSet;

use flekd_core::checkpoint::{decode, encode};
use flekd_core::data::{
    dirichlet_partition, proxy_class_counts, synth_generate, Dataset, FeatureSchema,
};
use flekd_core::distillation::ensemble_weights;
use flekd_core::federation::fuse_models;
use flekd_core::metrics::{prf1, ConfusionMatrix};
use flekd_core::nn::{
    backward, cross_entropy_loss, forward, kl_distill_loss, softmax_temp, Logits, ModelParams,
};
use ndarray::{concatenate, Array2, Axis};
use proptest::prelude::*;

use common::{ce_check, kl_check, random_matrix, random_params, rng};

fn logits_row() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30.0f64..30.0, 1..12)
}

proptest! {
    #[test]
    fn softmax_lies_on_the_simplex(z in logits_row(), t in 0.05f64..10.0) {
        let p = softmax_temp(&z, t).unwrap();
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_ignores_a_common_shift(z in logits_row(), t in 0.1f64..5.0, c in -100.0f64..100.0) {
        let a = softmax_temp(&z, t).unwrap();
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        let b = softmax_temp(&shifted, t).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn distillation_loss_is_non_negative(seed in any::<u64>(), n in 1usize..8, c in 2usize..6, t in 0.5f64..4.0) {
        let mut r = rng(seed);
        let s = Logits::new(random_matrix(n, c, 5.0, &mut r)).unwrap();
        let q = Logits::new(random_matrix(n, c, 5.0, &mut r)).unwrap();
        let (loss, _) = kl_distill_loss(&s, &q, t).unwrap();
        prop_assert!(loss >= 0.0);
        let (self_loss, g) = kl_distill_loss(&s, &s, t).unwrap();
        prop_assert!(self_loss.abs() < 1e-12);
        prop_assert!(g.iter().all(|v| v.abs() < 1e-15));
    }
}

fn model_family() -> impl Strategy<Value = (Vec<ModelParams>, Vec<usize>)> {
    (1usize..6, 1usize..5, 1usize..4, 1usize..6, any::<u64>()).prop_flat_map(|(i, h, c, k, seed)| {
        let models: Vec<ModelParams> = (0..k)
            .map(|m| random_params(i, h, c, seed.wrapping_add(m as u64)))
            .collect();
        (Just(models), prop::collection::vec(1usize..500, k))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn fusing_copies_returns_the_model((models, counts) in model_family()) {
        let copies: Vec<&ModelParams> = counts.iter().map(|_| &models[0]).collect();
        prop_assert_eq!(fuse_models(&copies, &counts).unwrap(), models[0].clone());
    }

    #[test]
    fn fusion_ignores_input_order((models, counts) in model_family(), shuffle in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..models.len()).collect();
        order.shuffle(&mut rng(shuffle));
        let a = fuse_models(&models.iter().collect::<Vec<_>>(), &counts).unwrap();
        let permuted: Vec<&ModelParams> = order.iter().map(|&i| &models[i]).collect();
        let permuted_counts: Vec<usize> = order.iter().map(|&i| counts[i]).collect();
        let b = fuse_models(&permuted, &permuted_counts).unwrap();
        prop_assert!(a.values().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn fusion_is_a_convex_combination((models, counts) in model_family()) {
        let fused = fuse_models(&models.iter().collect::<Vec<_>>(), &counts).unwrap();
        let columns: Vec<Vec<f64>> = models.iter().map(|m| m.values().copied().collect()).collect();
        for (k, &v) in fused.values().enumerate() {
            let lo = columns.iter().map(|c| c[k]).fold(f64::INFINITY, f64::min);
            let hi = columns.iter().map(|c| c[k]).fold(f64::NEG_INFINITY, f64::max);
            let tol = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
            prop_assert!(v >= lo - tol && v <= hi + tol, "{} outside [{}, {}]", v, lo, hi);
        }
    }
}

fn accuracies() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, 1..12)
}

proptest! {
    #[test]
    fn ensemble_weights_form_a_distribution(acc in accuracies(), dt in 0.05f64..5.0) {
        let w = ensemble_weights(&acc, dt).unwrap().weights;
        prop_assert!(w.iter().all(|&v| v > 0.0 && v <= 1.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ensemble_weights_follow_accuracy(acc in accuracies(), dt in 0.05f64..5.0, c in -1.0f64..1.0) {
        let w = ensemble_weights(&acc, dt).unwrap().weights;
        for i in 0..acc.len() {
            for j in 0..acc.len() {
                if acc[i] > acc[j] {
                    prop_assert!(w[i] > w[j]);
                }
            }
        }
        let shifted: Vec<f64> = acc.iter().map(|a| a + c).collect();
        let ws = ensemble_weights(&shifted, dt).unwrap().weights;
        for (x, y) in w.iter().zip(&ws) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}

fn partition_case() -> impl Strategy<Value = (usize, usize, usize, f64, u64)> {
    (1usize..40, 2usize..8, 1usize..12, 0.05f64..100.0, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn partitions_are_disjoint_and_cover_every_client((npc, c, k, alpha, seed) in partition_case()) {
        let d = synth_generate(npc, c, 8.max(c), seed).unwrap();
        prop_assume!(d.n_rows() >= k);
        let p = dirichlet_partition(&d, k, alpha, seed).unwrap();
        prop_assert_eq!(p.n_clients(), k);
        let mut seen = HashSet::new();
        for rows in &p.client_indices {
            prop_assert!(!rows.is_empty());
            for &r in rows {
                prop_assert!(r < d.n_rows());
                prop_assert!(seen.insert(r), "row {} assigned twice", r);
            }
        }
        prop_assert_eq!(seen.len(), d.n_rows());
    }

    #[test]
    fn proxy_counts_sum_to_the_request(total in 7usize..5000, c in 2usize..10, minority in any::<prop::sample::Index>()) {
        prop_assume!(total >= 3 * c);
        let m = minority.index(c);
        let counts = proxy_class_counts(total, c, Some(m)).unwrap();
        prop_assert_eq!(counts.iter().sum::<usize>(), total);
        let others: Vec<usize> = (0..c).filter(|&k| k != m).map(|k| counts[k]).collect();
        prop_assert!(others.windows(2).all(|w| w[0] == w[1]));
        prop_assert!(counts[m] <= others[0]);
    }

    #[test]
    fn padding_is_idempotent_and_keeps_the_prefix(seed in any::<u64>(), d in 1usize..12, n in 1usize..10) {
        let full = 12;
        let schema = FeatureSchema::numbered(full).unwrap();
        let x = random_matrix(n, full, 3.0, &mut rng(seed));
        let ds = Dataset::new(x, None, schema, vec!["a".into()]).unwrap();
        let cut = ds.truncate_to_prefix(d).unwrap();
        let once = cut.pad_to_canonical().unwrap();
        prop_assert_eq!(once.pad_to_canonical().unwrap(), once.clone());
        prop_assert_eq!(once.dim(), full);
        for (i, row) in once.features().rows().into_iter().enumerate() {
            for j in 0..full {
                let expected = if j < d { ds.features()[[i, j]] } else { 0.0 };
                prop_assert_eq!(row[j], expected);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn small_net_gradients_match_finite_differences(seed in any::<u64>(), n in 1usize..6, t in 0.5f64..3.0) {
        let params = random_params(5, 4, 3, seed);
        let mut r = rng(seed ^ 1);
        let x = random_matrix(n, 5, 2.0, &mut r);
        let y: Vec<usize> = (0..n).map(|i| (seed as usize + i) % 3).collect();
        let teacher = Logits::new(random_matrix(n, 3, 3.0, &mut r)).unwrap();
        prop_assert!(ce_check(&params, &x, &y, 1e-5) < 1e-4);
        prop_assert!(kl_check(&params, &x, &teacher, t, 1e-5) < 1e-4);
    }

    #[test]
    fn duplicating_the_batch_leaves_the_gradient_unchanged(seed in any::<u64>(), n in 1usize..8) {
        let params = random_params(6, 5, 4, seed);
        let mut r = rng(seed ^ 2);
        let x = random_matrix(n, 6, 2.0, &mut r);
        let y: Vec<usize> = (0..n).map(|i| (i * 7 + seed as usize) % 4).collect();
        let grad_on = |x: &Array2<f64>, y: &[usize]| {
            let (_, g) = cross_entropy_loss(&forward(&params, x.view()).unwrap(), y).unwrap();
            backward(&params, x.view(), &g).unwrap()
        };
        let doubled = concatenate(Axis(0), &[x.view(), x.view()]).unwrap();
        let yy: Vec<usize> = y.iter().chain(&y).copied().collect();
        let a = grad_on(&x, &y);
        let b = grad_on(&doubled, &yy);
        prop_assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn checkpoints_round_trip_bit_exactly(seed in any::<u64>(), i in 1usize..20, h in 1usize..20, c in 1usize..8) {
        let p = random_params(i, h, c, seed);
        let q = decode(&encode(&p).unwrap()).unwrap();
        prop_assert!(p.values().zip(q.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

fn confusion() -> impl Strategy<Value = Vec<Vec<u64>>> {
    (1usize..6).prop_flat_map(|c| prop::collection::vec(prop::collection::vec(0u64..40, c), c))
}

proptest! {
    #[test]
    fn class_scores_are_bounded(counts in confusion()) {
        let m = ConfusionMatrix { counts };
        let s = prf1(&m);
        prop_assert_eq!(m.accuracy() + m.error_rate(), if m.total() == 0 { 0.0 } else { 1.0 });
        for (k, cs) in s.per_class.iter().enumerate() {
            for v in [cs.precision, cs.recall, cs.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if m.counts[k][k] == 0 {
                prop_assert_eq!(cs.f1, 0.0);
            } else {
                let eps = 1e-12;
                prop_assert!(cs.f1 >= cs.precision.min(cs.recall) - eps);
                prop_assert!(cs.f1 <= cs.precision.max(cs.recall) + eps);
            }
        }
    }

    #[test]
    fn class_scores_follow_a_relabeling(counts in confusion(), shuffle in any::<u64>()) {
        use rand::seq::SliceRandom;
        let c = counts.len();
        let mut perm: Vec<usize> = (0..c).collect();
        perm.shuffle(&mut rng(shuffle));
        let mut relabeled = vec![vec![0; c]; c];
        for t in 0..c {
            for p in 0..c {
                relabeled[perm[t]][perm[p]] = counts[t][p];
            }
        }
        let a = prf1(&ConfusionMatrix { counts });
        let b = prf1(&ConfusionMatrix { counts: relabeled });
        for k in 0..c {
            prop_assert_eq!(a.per_class[k], b.per_class[perm[k]]);
        }
        prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
    }
}

#[test]
fn full_width_gradients_match_on_sampled_coordinates() {
    use rand::Rng;
    let params = random_params(82, 128, 7, 9);
    let mut r = rng(10);
    let x = random_matrix(16, 82, 2.0, &mut r);
    let y: Vec<usize> = (0..16).map(|i| i % 7).collect();
    let teacher = Logits::new(random_matrix(16, 7, 3.0, &mut r)).unwrap();
    let coords: Vec<usize> = (0..200).map(|_| r.random_range(0..params.num_values())).collect();

    let logits = forward(&params, x.view()).unwrap();
    let (_, g) = cross_entropy_loss(&logits, &y).unwrap();
    let analytic: Vec<f64> = backward(&params, x.view(), &g).unwrap().values().copied().collect();
    let numeric = common::numeric_gradient_at(&params, &coords, 1e-5, |p| {
        cross_entropy_loss(&forward(p, x.view()).unwrap(), &y).unwrap().0
    });
    for (&k, &n) in coords.iter().zip(&numeric) {
        assert!(common::rel_err(analytic[k], n) < 1e-4, "ce coordinate {k}: {} vs {n}", analytic[k]);
    }

    let (_, g) = kl_distill_loss(&logits, &teacher, 1.5).unwrap();
    let analytic: Vec<f64> = backward(&params, x.view(), &g).unwrap().values().copied().collect();
    let numeric = common::numeric_gradient_at(&params, &coords, 1e-5, |p| {
        kl_distill_loss(&forward(p, x.view()).unwrap(), &teacher, 1.5).unwrap().0
    });
    for (&k, &n) in coords.iter().zip(&numeric) {
        assert!(common::rel_err(analytic[k], n) < 1e-4, "kl coordinate {k}: {} vs {n}", analytic[k]);
    }
}
