mod common;

use common::{central_difference, random_distributions, relative_error, tiny_cnn_forest};
use ndf::autodiff::{Graph, Tensor};
use ndf::data::{ClassificationSet, RegressionSet, Samples};
use ndf::forest::{AssignmentScheme, Forest, GradTargets, LeafInit};
use ndf::network::Network;
use ndf::training::{
    accuracy, classification_step, nll_loss, regression_loss, regression_step, squared_loss,
    train_classifier, train_regressor, AdamState, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn blobs(n: usize, seed: u64) -> ClassificationSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % 2;
        let c = if y == 0 { -1.5 } else { 1.5 };
        data.push(c + rng.gen_range(-0.6..0.6));
        data.push(c + rng.gen_range(-0.6..0.6));
        labels.push(y);
    }
    ClassificationSet::new(Samples::new(vec![2], data).unwrap(), labels, 2).unwrap()
}

fn blob_forest(seed: u64) -> Forest {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Network::mlp(vec![2], &[16], 7, &mut rng).unwrap();
    Forest::new(
        net,
        3,
        1,
        LeafInit::Classification(2),
        AssignmentScheme::Sequential,
        &mut rng,
    )
    .unwrap()
}

fn blob_config() -> TrainConfig {
    TrainConfig {
        epochs: 20,
        batch_size: 16,
        lr: 1e-2,
        leaf_update_period: 10,
        ..TrainConfig::default()
    }
}

#[test]
fn separable_blobs_reach_99_percent() {
    let data = blobs(400, 1);
    let mut f = blob_forest(0);
    let metrics = train_classifier(&mut f, &data, &blob_config()).unwrap();
    assert_eq!(metrics.len(), 20);
    let acc = accuracy(&f, &data).unwrap();
    assert!(acc >= 0.99, "train accuracy {acc}");
    for t in &f.trees {
        assert!(t.leaves.simplex_error() < 1e-9);
    }
}

#[test]
fn training_is_deterministic() {
    let data = blobs(100, 2);
    let config = TrainConfig {
        epochs: 3,
        ..blob_config()
    };
    let run = || {
        let mut f = blob_forest(7);
        let m = train_classifier(&mut f, &data, &config).unwrap();
        (m.last().unwrap().loss.to_bits(), f)
    };
    let (a, fa) = run();
    let (b, fb) = run();
    assert_eq!(a, b);
    assert_eq!(fa, fb);
}

#[test]
fn zero_epochs_leave_forest_unchanged() {
    let data = blobs(20, 3);
    let mut f = blob_forest(1);
    let before = f.clone();
    let config = TrainConfig {
        epochs: 0,
        ..blob_config()
    };
    assert!(train_classifier(&mut f, &data, &config).unwrap().is_empty());
    assert_eq!(f, before);
}

#[test]
fn classification_step_never_touches_leaves() {
    let data = blobs(32, 4);
    let mut f = blob_forest(2);
    f.leaf_update_classification(&data.inputs, &data.labels, &(0..32).collect::<Vec<_>>(), 5)
        .unwrap();
    let leaves: Vec<_> = f.trees.iter().map(|t| t.leaves.clone()).collect();
    let mut adam = AdamState::for_tensors(&f.extractor.params, 1e-3);
    let out = classification_step(&mut f, &mut adam, &data, &(0..16).collect::<Vec<_>>()).unwrap();
    assert_eq!(out.leaf_grad_mass, 0.0);
    assert!(out.loss.is_finite());
    assert_eq!(
        f.trees.iter().map(|t| t.leaves.clone()).collect::<Vec<_>>(),
        leaves
    );
}

#[test]
fn empty_dataset_is_rejected() {
    let data = ClassificationSet::new(Samples::new(vec![2], vec![]).unwrap(), vec![], 2).unwrap();
    let mut f = blob_forest(0);
    assert!(matches!(
        train_classifier(&mut f, &data, &blob_config()),
        Err(ndf::NdfError::EmptyDataset)
    ));
}

fn step_regression(n: usize) -> RegressionSet {
    let xs: Vec<f64> = (0..n)
        .map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64)
        .collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| if x < 0.0 { 0.0 } else { 1.0 })
        .collect();
    RegressionSet::new(Samples::new(vec![1], xs).unwrap(), ys, 1).unwrap()
}

fn regression_forest(seed: u64) -> Forest {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Network::mlp(vec![1], &[8], 3, &mut rng).unwrap();
    Forest::new(
        net,
        2,
        1,
        LeafInit::Regression(1),
        AssignmentScheme::Sequential,
        &mut rng,
    )
    .unwrap()
}

#[test]
fn step_function_regression_drops_below_ten_percent() {
    let data = step_regression(64);
    let mut f = regression_forest(0);
    let initial = regression_loss(&f, &data).unwrap();
    let config = TrainConfig {
        epochs: 200,
        batch_size: 16,
        lr: 1e-2,
        leaf_lr: 5e-2,
        ..TrainConfig::default()
    };
    train_regressor(&mut f, &data, &config).unwrap();
    let fin = regression_loss(&f, &data).unwrap();
    assert!(fin < 0.1 * initial, "{fin} vs initial {initial}");
}

#[test]
fn zero_targets_with_zero_leaves_do_not_drift() {
    let mut data = step_regression(16);
    data.targets.iter_mut().for_each(|t| *t = 0.0);
    let mut f = regression_forest(1);
    let before = f.clone();
    let metrics = train_regressor(
        &mut f,
        &data,
        &TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    assert!(metrics.iter().all(|m| m.loss == 0.0));
    assert_eq!(f, before);
}

#[test]
fn small_lr_steps_mostly_decrease_loss() {
    let data = step_regression(32);
    let mut f = regression_forest(3);
    for t in &mut f.trees {
        t.leaves.values = vec![0.2, -0.1, 0.9, 0.4];
    }
    let batch: Vec<usize> = (0..32).collect();
    let mut adam = AdamState::for_tensors(&f.extractor.params, 1e-4);
    let mut leaf_adam = AdamState::new(&[4], 1e-4);
    let mut losses = vec![regression_loss(&f, &data).unwrap()];
    for _ in 0..50 {
        regression_step(&mut f, &mut adam, &mut leaf_adam, &data, &batch).unwrap();
        losses.push(regression_loss(&f, &data).unwrap());
    }
    let down = losses.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(down >= 45, "{down}/50 non-increasing");
}

#[test]
fn nan_input_is_reported_as_numeric_failure() {
    let mut data = step_regression(8);
    data.inputs.data[3] = f64::NAN;
    let mut f = regression_forest(0);
    let err = train_regressor(
        &mut f,
        &data,
        &TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        },
    )
    .unwrap_err();
    assert!(err.is_numeric(), "{err}");
}

#[test]
fn loss_examples() {
    let mut g = Graph::new();
    let p = g.constant(Tensor::new(vec![2, 2], vec![0.5, 0.5, 0.75, 0.25]).unwrap());
    let l = nll_loss(&mut g, p, &[0, 1]).unwrap();
    // (ln 2 + ln 4) / 2
    assert!((g.value(l).data[0] - 1.0397207708399179).abs() < 1e-15);
    let p = g.constant(Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap());
    let y = g.constant(Tensor::zeros(&[1, 2]));
    let l = squared_loss(&mut g, p, y).unwrap();
    assert_eq!(g.value(l).data[0], 12.5);
}

/// End-to-end loss gradient against central differences on every extractor parameter.
#[test]
fn end_to_end_parameter_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..4 {
        let classify = trial % 2 == 0;
        let init = if classify {
            LeafInit::Classification(3)
        } else {
            LeafInit::Regression(2)
        };
        let mut f = tiny_cnn_forest(8, 2, 2, init, &mut rng);
        for t in &mut f.trees {
            if classify {
                t.leaves.values = random_distributions(4, 3, &mut rng);
            } else {
                t.leaves
                    .values
                    .iter_mut()
                    .for_each(|v| *v = rng.gen_range(-1.0..1.0));
            }
        }
        let x = Tensor::new(
            vec![3, 1, 8, 8],
            (0..192).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        )
        .unwrap();
        let labels = [0usize, 2, 1];
        let targets = Tensor::new(
            vec![3, 2],
            (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let loss_of = |f: &Forest, g: &mut Graph, grads: GradTargets| {
            let fg = f.forward(g, x.clone(), grads).unwrap();
            let loss = if classify {
                nll_loss(g, fg.prediction, &labels).unwrap()
            } else {
                let t = g.constant(targets.clone());
                squared_loss(g, fg.prediction, t).unwrap()
            };
            (fg, loss)
        };
        let mut g = Graph::new();
        let grads = GradTargets {
            extractor: true,
            ..GradTargets::NONE
        };
        let (fg, loss) = loss_of(&f, &mut g, grads);
        g.backward(loss).unwrap();
        for (pi, &pv) in fg.params.iter().enumerate() {
            let analytic = g.grad(pv).unwrap().to_vec();
            let base = f.extractor.params[pi].data.clone();
            let mut probe = f.clone();
            let mut eval = |theta: &[f64]| {
                probe.extractor.params[pi].data = theta.to_vec();
                let mut g = Graph::new();
                let (_, l) = loss_of(&probe, &mut g, GradTargets::NONE);
                g.value(l).data[0]
            };
            let numeric: Vec<f64> = (0..base.len())
                .map(|i| central_difference(&mut eval, &base, i, 1e-5))
                .collect();
            let err = relative_error(&analytic, &numeric);
            assert!(
                err < 1e-4,
                "trial {trial}, param {pi}: relative error {err}"
            );
        }
    }
}
