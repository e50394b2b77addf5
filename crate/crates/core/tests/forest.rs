mod common;

use common::{enumerate_weights, path_product, random_distributions};
use ndf::autodiff::{Graph, Tensor};
use ndf::forest::{self, update_classification_leaves, AssignmentScheme, Forest, LeafInit};
use ndf::network::{LayerSpec, Network};
use ndf::tree::{self, arrival_probabilities, trace_max_path, LeafStore, TreeTopology};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scores_strategy(max_depth: usize) -> impl Strategy<Value = (usize, Vec<f64>)> {
    (1..=max_depth).prop_flat_map(|d| (Just(d), prop::collection::vec(0.0f64..=1.0, (1 << d) - 1)))
}

proptest! {
    #[test]
    fn leaf_weights_lie_on_the_simplex((depth, scores) in scores_strategy(10)) {
        let top = TreeTopology::new(depth).unwrap();
        let w = tree::leaf_weights(top, &scores);
        prop_assert_eq!(w.len(), 1 << depth);
        prop_assert!(w.iter().all(|&v| v >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let oracle = enumerate_weights(depth, &scores);
        for (a, b) in w.iter().zip(&oracle) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn tape_weights_match_direct((depth, scores) in scores_strategy(6)) {
        let top = TreeTopology::new(depth).unwrap();
        let mut g = Graph::new();
        let s = g.constant(Tensor::new(vec![1, scores.len()], scores.clone()).unwrap());
        let w = forest::leaf_weights(&mut g, top, s).unwrap();
        let direct = tree::leaf_weights(top, &scores);
        for (a, b) in g.value(w).data.iter().zip(&direct) {
            prop_assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn greedy_path_products_are_exact((depth, scores) in scores_strategy(3)) {
        let top = TreeTopology::new(depth).unwrap();
        let path = trace_max_path(top, &scores);
        prop_assert_eq!(path.len(), depth + 1);
        prop_assert_eq!(path[0].node, 1);
        prop_assert!(top.is_leaf(path[depth].node));
        let mu = arrival_probabilities(top, &scores);
        for step in &path {
            prop_assert_eq!(step.probability, path_product(&scores, step.node));
            prop_assert_eq!(step.probability, mu[step.node]);
        }
    }

    #[test]
    fn leaf_update_stays_on_simplex(
        seed in any::<u64>(),
        depth in 1usize..5,
        classes in 2usize..6,
        n in 1usize..40,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let top = TreeTopology::new(depth).unwrap();
        let mut leaves = LeafStore::uniform(top.leaf_count(), classes);
        leaves.values = random_distributions(top.leaf_count(), classes, &mut rng);
        let mut weights = Vec::new();
        for _ in 0..n {
            let s: Vec<f64> = (0..top.split_count()).map(|_| rng.gen::<f64>()).collect();
            weights.extend(tree::leaf_weights(top, &s));
        }
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        for _ in 0..5 {
            update_classification_leaves(&mut leaves, &weights, &labels);
            prop_assert!(leaves.simplex_error() < 1e-9);
        }
    }
}

#[test]
fn spec_weight_and_prediction_examples() {
    let top = TreeTopology::new(2).unwrap();
    let w = tree::leaf_weights(top, &[0.8, 0.6, 0.3]);
    let expected = [0.48, 0.32, 0.06, 0.14];
    for (a, b) in w.iter().zip(expected) {
        assert!((a - b).abs() < 1e-15, "{w:?}");
    }
    let leaves = LeafStore {
        mode: tree::LeafMode::Classification,
        dim: 2,
        values: vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0],
    };
    let p = tree::predict(&w, &leaves);
    assert!((p[0] - 0.54).abs() < 1e-15 && (p[1] - 0.46).abs() < 1e-15);
    let path = trace_max_path(top, &[0.8, 0.6, 0.3]);
    let nodes: Vec<(usize, f64)> = path.iter().map(|s| (s.node, s.probability)).collect();
    assert_eq!(nodes[..2], [(1, 1.0), (2, 0.8)]);
    assert_eq!(nodes[2].0, 4);
    assert!((nodes[2].1 - 0.48).abs() < 1e-15);
}

#[test]
fn greedy_leaf_is_the_heaviest_when_enumeration_agrees() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    for _ in 0..500 {
        let depth = rng.gen_range(1..=3);
        let top = TreeTopology::new(depth).unwrap();
        let scores: Vec<f64> = (0..top.split_count())
            .map(|_| {
                if rng.gen() {
                    rng.gen_range(0.55..1.0)
                } else {
                    rng.gen_range(0.0..0.45)
                }
            })
            .collect();
        let oracle = enumerate_weights(depth, &scores);
        let (best, _) =
            oracle
                .iter()
                .enumerate()
                .fold((0, f64::MIN), |b, (i, &w)| if w > b.1 { (i, w) } else { b });
        let path = trace_max_path(top, &scores);
        let leaf = path.last().unwrap();
        if top.leaf_position(leaf.node) == best {
            checked += 1;
            assert_eq!(leaf.probability, path_product(&scores, leaf.node));
        }
    }
    assert!(checked > 0);
}

fn dense_forest(inputs: usize, depth: usize, trees: usize, init: LeafInit, seed: u64) -> Forest {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let units = trees * ((1 << depth) - 1);
    let net = Network::new(
        vec![inputs],
        vec![
            LayerSpec::Dense {
                inputs,
                outputs: 12,
            },
            LayerSpec::Relu,
            LayerSpec::Dense {
                inputs: 12,
                outputs: units,
            },
        ],
        &mut rng,
    )
    .unwrap();
    Forest::new(net, depth, trees, init, AssignmentScheme::Random, &mut rng).unwrap()
}

#[test]
fn forest_mean_matches_per_tree_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut f = dense_forest(5, 3, 4, LeafInit::Classification(3), 1);
    for t in &mut f.trees {
        t.leaves.values = random_distributions(8, 3, &mut rng);
    }
    for _ in 0..20 {
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let p = f.predict(&x).unwrap();
        let routing = f.routing(&x).unwrap();
        let mut oracle = [0.0; 3];
        for (t, r) in f.trees.iter().zip(&routing) {
            let w = enumerate_weights(3, &r.scores);
            for (l, wl) in w.iter().enumerate() {
                for c in 0..3 {
                    oracle[c] += wl * t.leaves.leaf(l)[c] / 4.0;
                }
            }
        }
        for c in 0..3 {
            assert!((p[c] - oracle[c]).abs() < 1e-12);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn batched_prediction_matches_single() {
    let f = dense_forest(4, 2, 2, LeafInit::Classification(2), 3);
    let data: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
    let samples = ndf::Samples::new(vec![4], data.clone()).unwrap();
    let batched = f.predict_samples(&samples).unwrap();
    for i in 0..10 {
        assert_eq!(
            &batched[2 * i..2 * i + 2],
            &f.predict(&data[4 * i..4 * i + 4]).unwrap()[..]
        );
    }
    let scores = f.scores_samples(&samples).unwrap();
    let direct = forest::mean_prediction(
        &f.trees,
        &[scores[0][..3].to_vec(), scores[1][..3].to_vec()],
    )
    .unwrap();
    for (a, b) in direct.iter().zip(&batched[..2]) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn random_assignment_is_injective_per_tree() {
    let f = dense_forest(3, 3, 3, LeafInit::Regression(2), 11);
    for t in &f.trees {
        let mut u = t.assignment.units.clone();
        u.sort_unstable();
        u.dedup();
        assert_eq!(u.len(), 7);
    }
}

#[test]
fn saturated_count_ratio_and_single_class_pull() {
    // scores of exactly 1 send every sample to the leftmost leaf
    let top = TreeTopology::new(2).unwrap();
    let w = tree::leaf_weights(top, &[1.0, 1.0, 1.0]);
    let weights: Vec<f64> = w.iter().cycle().take(16).copied().collect();
    let mut leaves = LeafStore::uniform(4, 2);
    update_classification_leaves(&mut leaves, &weights, &[0, 0, 1, 0]);
    assert!((leaves.leaf(0)[0] - 0.75).abs() < 1e-15);
    assert_eq!(leaves.leaf(1), &[0.5, 0.5]);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut weights = Vec::new();
    for _ in 0..12 {
        let s: Vec<f64> = (0..3).map(|_| rng.gen_range(0.1..0.9)).collect();
        weights.extend(tree::leaf_weights(top, &s));
    }
    let mut leaves = LeafStore::uniform(4, 3);
    for _ in 0..30 {
        update_classification_leaves(&mut leaves, &weights, &[0; 12]);
    }
    for l in 0..4 {
        let p = leaves.leaf(l);
        assert!(p[0] > p[1] && p[0] > p[2]);
    }
}

#[test]
fn leaf_update_does_not_increase_tree_nll() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let top = TreeTopology::new(4).unwrap();
    let mut leaves = LeafStore::uniform(16, 4);
    leaves.values = random_distributions(16, 4, &mut rng);
    let mut weights = Vec::new();
    for _ in 0..64 {
        let s: Vec<f64> = (0..top.split_count()).map(|_| rng.gen::<f64>()).collect();
        weights.extend(tree::leaf_weights(top, &s));
    }
    let labels: Vec<usize> = (0..64).map(|_| rng.gen_range(0..4)).collect();
    let mut prev = forest::tree_nll(&leaves, &weights, &labels);
    for _ in 0..20 {
        update_classification_leaves(&mut leaves, &weights, &labels);
        let next = forest::tree_nll(&leaves, &weights, &labels);
        assert!(next <= prev + 1e-12, "{next} > {prev}");
        prev = next;
    }
}

#[test]
fn forest_rejects_bad_construction() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = Network::mlp(vec![3], &[], 2, &mut rng).unwrap();
    assert!(Forest::new(
        net.clone(),
        2,
        1,
        LeafInit::Classification(2),
        AssignmentScheme::Sequential,
        &mut rng
    )
    .is_err());
    assert!(Forest::new(
        net.clone(),
        1,
        0,
        LeafInit::Classification(2),
        AssignmentScheme::Sequential,
        &mut rng
    )
    .is_err());
    assert!(Forest::new(
        net,
        1,
        1,
        LeafInit::Classification(1),
        AssignmentScheme::Sequential,
        &mut rng
    )
    .is_err());
    assert!(TreeTopology::new(0).is_err());
}
