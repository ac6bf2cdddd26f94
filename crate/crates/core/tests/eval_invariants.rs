use goalfactor::evalharness::{
    decision_tree_probe, hit_at_k_recommendation, next_action_accuracy, LabeledRepresentation, Similarity, TreeParams,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn reps(rng: &mut ChaCha8Rng, prefix: &str, n: usize, dim: usize, items: usize) -> Vec<LabeledRepresentation> {
    (0..n)
        .map(|i| {
            let item = format!("i{}", rng.gen_range(0..items));
            let class = rng.gen_range(0..3).to_string();
            LabeledRepresentation::new(format!("{prefix}{i}"), (0..dim).map(|_| gauss(rng)).collect())
                .with_gold(&[item.as_str()])
                .with_label("y", &class)
        })
        .collect()
}

/// Random orthogonal matrix by Gram-Schmidt on Gaussian columns.
fn orthogonal(rng: &mut ChaCha8Rng, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while basis.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| gauss(rng)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

fn mapped(reps: &[LabeledRepresentation], f: impl Fn(&[f64]) -> Vec<f64>) -> Vec<LabeledRepresentation> {
    reps.iter()
        .map(|r| LabeledRepresentation {
            vector: f(&r.vector),
            ..r.clone()
        })
        .collect()
}

const KS: [usize; 4] = [1, 3, 5, 10];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rotation_leaves_every_metric_unchanged(seed in any::<u64>(), dim in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let train = reps(&mut rng, "tr", 60, dim, 8);
        let test = reps(&mut rng, "te", 25, dim, 8);
        let q = orthogonal(&mut rng, dim);
        let rotate = |v: &[f64]| q.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect();
        let (rtrain, rtest) = (mapped(&train, rotate), mapped(&test, rotate));
        for sim in [Similarity::Cosine, Similarity::InnerProduct] {
            let a = hit_at_k_recommendation(&train, &test, 7, &KS, sim).unwrap();
            let b = hit_at_k_recommendation(&rtrain, &rtest, 7, &KS, sim).unwrap();
            prop_assert_eq!(a.metrics, b.metrics);
            let a = next_action_accuracy(&train, &test, sim).unwrap();
            let b = next_action_accuracy(&rtrain, &rtest, sim).unwrap();
            prop_assert_eq!(a.metrics, b.metrics);
        }
    }

    #[test]
    fn cosine_ignores_positive_rescaling(seed in any::<u64>(), dim in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let train = reps(&mut rng, "tr", 50, dim, 6);
        let test = reps(&mut rng, "te", 20, dim, 6);
        // a different positive scale per vector
        let scales: Vec<f64> = (0..70).map(|_| rng.gen_range(0.1..10.0)).collect();
        let scale_all = |rs: &[LabeledRepresentation], off: usize| -> Vec<LabeledRepresentation> {
            rs.iter()
                .enumerate()
                .map(|(i, r)| LabeledRepresentation {
                    vector: r.vector.iter().map(|x| x * scales[off + i]).collect(),
                    ..r.clone()
                })
                .collect()
        };
        let (strain, stest) = (scale_all(&train, 0), scale_all(&test, 50));
        let a = hit_at_k_recommendation(&train, &test, 5, &KS, Similarity::Cosine).unwrap();
        let b = hit_at_k_recommendation(&strain, &stest, 5, &KS, Similarity::Cosine).unwrap();
        prop_assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn hit_at_k_is_bounded_and_monotone(seed in any::<u64>(), neighbors in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let train = reps(&mut rng, "tr", 40, 4, 12);
        let test = reps(&mut rng, "te", 15, 4, 12);
        let ks: Vec<usize> = (1..=15).collect();
        let r = hit_at_k_recommendation(&train, &test, neighbors, &ks, Similarity::Cosine).unwrap();
        let hits: Vec<f64> = ks.iter().map(|k| r.metric(&format!("hit@{k}")).unwrap()).collect();
        prop_assert!(hits.windows(2).all(|w| w[0] <= w[1]), "{:?}", hits);
        prop_assert!(hits.iter().all(|h| (0.0..=100.0).contains(h)));
    }

    #[test]
    fn results_are_deterministic_and_order_free(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let train = reps(&mut rng, "tr", 45, 3, 5);
        let mut test = reps(&mut rng, "te", 18, 3, 5);
        let a = hit_at_k_recommendation(&train, &test, 6, &KS, Similarity::Cosine).unwrap();
        let b = hit_at_k_recommendation(&train, &test, 6, &KS, Similarity::Cosine).unwrap();
        prop_assert_eq!(&a, &b);
        // test order does not matter; each case is scored on its own
        test.reverse();
        let c = hit_at_k_recommendation(&train, &test, 6, &KS, Similarity::Cosine).unwrap();
        prop_assert_eq!(a.metrics, c.metrics);
    }

    #[test]
    fn test_copies_of_training_points_are_matched(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let train = reps(&mut rng, "tr", 30, 5, 10);
        let test: Vec<LabeledRepresentation> = train
            .iter()
            .map(|r| LabeledRepresentation { doc_id: format!("copy-{}", r.doc_id), ..r.clone() })
            .collect();
        let r = next_action_accuracy(&train, &test, Similarity::Cosine).unwrap();
        prop_assert_eq!(r.metric("accuracy"), Some(100.0));
    }
}

#[test]
fn probe_is_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let data = reps(&mut rng, "p", 120, 3, 4);
    let params = TreeParams::default();
    let a = decision_tree_probe(&data, "y", 5, 1, &params).unwrap();
    let b = decision_tree_probe(&data, "y", 5, 1, &params).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.config["folds"], serde_json::json!(5));
    let score = a.metric("balanced_accuracy").unwrap();
    assert!((0.0..=100.0).contains(&score));
}

#[test]
fn probe_is_invariant_to_monotone_feature_transforms() {
    // axis-aligned thresholds only see the order of each feature
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let data: Vec<LabeledRepresentation> = (0..150)
        .map(|i| {
            let x: Vec<f64> = (0..3).map(|_| gauss(&mut rng)).collect();
            let class = if x[0] + 0.5 * x[1] > 0.0 { "a" } else { "b" };
            LabeledRepresentation::new(format!("m{i}"), x).with_label("y", class)
        })
        .collect();
    let warped = mapped(&data, |v| v.iter().map(|x| x.exp() * 3.0 + 1.0).collect());
    let params = TreeParams::default();
    let a = decision_tree_probe(&data, "y", 5, 4, &params).unwrap();
    let b = decision_tree_probe(&warped, "y", 5, 4, &params).unwrap();
    assert_eq!(a.metrics, b.metrics);
}
