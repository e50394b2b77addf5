mod common;

use common::{central_difference, random_distributions, relative_error, tiny_cnn_forest};
use ndf::autodiff::{sigmoid, Tensor};
use ndf::forest::{AssignmentScheme, Forest, LeafInit, Tree};
use ndf::network::{LayerSpec, Network};
use ndf::saliency::{
    collect_score_histogram, compute_dsm, dsm_along_path, normalize_dsm, ScoreHistogram,
};
use ndf::tree::{trace_max_path, LeafStore, SplitAssignment, TreeTopology};
use ndf::{NdfError, Samples};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dot_forest(w: &[f64]) -> Forest {
    let n = w.len();
    let net = Network::from_parts(
        vec![n],
        vec![LayerSpec::Dense {
            inputs: n,
            outputs: 1,
        }],
        vec![
            Tensor::new(vec![n, 1], w.to_vec()).unwrap(),
            Tensor::zeros(&[1]),
        ],
    )
    .unwrap();
    let top = TreeTopology::new(1).unwrap();
    let tree = Tree {
        topology: top,
        assignment: SplitAssignment::sequential(top, 0),
        leaves: LeafStore::uniform(2, 2),
    };
    Forest::from_parts(net, vec![tree]).unwrap()
}

#[test]
fn dot_product_split_has_closed_form_dsm() {
    let w = [0.7, -1.2, 0.4, 2.0];
    let x = [0.3, 0.1, -0.8, 0.25];
    let f = dot_forest(&w);
    let s = sigmoid(w.iter().zip(&x).map(|(a, b)| a * b).sum());
    let map = compute_dsm(&f, &x, 0, 1).unwrap();
    assert_eq!(map.raw.shape, vec![4]);
    assert!((map.score - s).abs() < 1e-15);
    for (g, wi) in map.raw.data.iter().zip(w) {
        assert!((g - s * (1.0 - s) * wi).abs() < 1e-15);
    }
}

#[test]
fn zero_input_gives_quarter_weight_column() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let net = Network::new(
        vec![1, 8, 8],
        vec![
            LayerSpec::Flatten,
            LayerSpec::Dense {
                inputs: 64,
                outputs: 3,
            },
        ],
        &mut rng,
    )
    .unwrap();
    let f = Forest::new(
        net,
        2,
        1,
        LeafInit::Classification(2),
        AssignmentScheme::Sequential,
        &mut rng,
    )
    .unwrap();
    let x = vec![0.0; 64];
    for node in 1..=3 {
        let map = compute_dsm(&f, &x, 0, node).unwrap();
        assert_eq!(map.raw.shape, vec![1, 8, 8]);
        let unit = f.trees[0].assignment.unit(node);
        let w = &f.extractor.params[0].data;
        for (p, g) in map.raw.data.iter().enumerate() {
            assert!((g - 0.25 * w[p * 3 + unit]).abs() < 1e-15);
        }
        let mut s = |x: &[f64]| f.routing(x).unwrap()[0].scores[node - 1];
        let numeric: Vec<f64> = (0..64)
            .map(|i| central_difference(&mut s, &x, i, 1e-4))
            .collect();
        assert!(relative_error(&map.raw.data, &numeric) < 1e-3);
    }
}

#[test]
fn dsm_matches_finite_differences_on_cnn_crops() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..5 {
        let depth = rng.gen_range(1..=3);
        let f = tiny_cnn_forest(8, depth, 2, LeafInit::Classification(3), &mut rng);
        let x: Vec<f64> = (0..64).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let tree = rng.gen_range(0..2);
        let node = rng.gen_range(1..1 << depth);
        let map = compute_dsm(&f, &x, tree, node).unwrap();
        let mut s = |x: &[f64]| f.routing(x).unwrap()[tree].scores[node - 1];
        let numeric: Vec<f64> = (0..64)
            .map(|i| central_difference(&mut s, &x, i, 1e-4))
            .collect();
        let err = relative_error(&map.raw.data, &numeric);
        assert!(err < 1e-3, "depth {depth}, node {node}: {err}");
    }
}

#[test]
fn dsm_ignores_leaf_contents() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut f = tiny_cnn_forest(8, 2, 1, LeafInit::Classification(4), &mut rng);
    let x: Vec<f64> = (0..64).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let before = compute_dsm(&f, &x, 0, 2).unwrap();
    f.trees[0].leaves.values = random_distributions(4, 4, &mut rng);
    assert_eq!(compute_dsm(&f, &x, 0, 2).unwrap(), before);
}

#[test]
fn path_maps_follow_the_greedy_trace() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = tiny_cnn_forest(8, 3, 1, LeafInit::Classification(2), &mut rng);
    let x: Vec<f64> = (0..64).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let maps = dsm_along_path(&f, &x, 0).unwrap();
    assert_eq!(maps.len(), 3);
    let scores = f.routing(&x).unwrap()[0].scores.clone();
    let path = trace_max_path(f.trees[0].topology, &scores);
    for (m, step) in maps.iter().zip(&path) {
        assert_eq!(m.node, step.node);
        assert_eq!(m.arrival_probability, step.probability);
        assert_eq!(m, &compute_dsm(&f, &x, 0, m.node).unwrap());
    }
}

#[test]
fn leaf_nodes_and_missing_trees_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let f = tiny_cnn_forest(8, 2, 1, LeafInit::Classification(2), &mut rng);
    let x = vec![0.0; 64];
    assert!(matches!(
        compute_dsm(&f, &x, 0, 4),
        Err(NdfError::NotASplit { node: 4, depth: 2 })
    ));
    assert!(compute_dsm(&f, &x, 0, 0).is_err());
    assert!(compute_dsm(&f, &x, 1, 1).is_err());
}

#[test]
fn untrained_zero_extractor_piles_scores_at_one_half() {
    let net = Network::from_parts(
        vec![3],
        vec![LayerSpec::Dense {
            inputs: 3,
            outputs: 7,
        }],
        vec![Tensor::zeros(&[3, 7]), Tensor::zeros(&[7])],
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let f = Forest::new(
        net,
        3,
        1,
        LeafInit::Classification(2),
        AssignmentScheme::Sequential,
        &mut rng,
    )
    .unwrap();
    let samples = Samples::new(vec![3], (0..30).map(|i| i as f64).collect()).unwrap();
    let h = collect_score_histogram(&f, &samples, 10).unwrap();
    assert_eq!(h.total, 10 * 7);
    assert_eq!(h.counts[5], 70);
    assert_eq!(h.counts.iter().sum::<u64>(), h.total);
    assert!(collect_score_histogram(&f, &samples, 1).is_err());
}

proptest! {
    #[test]
    fn normalized_maps_are_bounded_and_idempotent(values in prop::collection::vec(-5.0f64..5.0, 2..40)) {
        let m = Tensor::vector(&values);
        let n = normalize_dsm(&m);
        prop_assert!(n.data.iter().all(|v| (0.0..=1.0).contains(v)));
        let lo = n.data.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = n.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            prop_assert_eq!(normalize_dsm(&n), n);
        }
    }

    #[test]
    fn histogram_total_matches_inputs(scores in prop::collection::vec(0.0f64..=1.0, 0..200), bins in 2usize..60) {
        let h = ScoreHistogram::from_scores(&scores, bins).unwrap();
        prop_assert_eq!(h.total as usize, scores.len());
        prop_assert_eq!(h.counts.iter().sum::<u64>(), h.total);
        prop_assert_eq!(h.edges.len(), bins + 1);
        prop_assert_eq!(h.edges[0], 0.0);
        prop_assert_eq!(h.edges[bins], 1.0);
    }
}
