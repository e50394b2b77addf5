#![allow(dead_code)]

use std::path::PathBuf;

use ndf::forest::{AssignmentScheme, Forest, LeafInit};
use ndf::network::{LayerSpec, Network};
use rand::Rng;

/// Path weights by walking each leaf's bit pattern from the root, an
/// independent enumeration of every root-to-leaf path.
pub fn enumerate_weights(depth: usize, scores: &[f64]) -> Vec<f64> {
    (0..1usize << depth)
        .map(|leaf| {
            let (mut node, mut w) = (1usize, 1.0);
            for level in 0..depth {
                let s = scores[node - 1];
                if (leaf >> (depth - 1 - level)) & 1 == 0 {
                    w *= s;
                    node = 2 * node;
                } else {
                    w *= 1.0 - s;
                    node = 2 * node + 1;
                }
            }
            w
        })
        .collect()
}

/// Arrival probability of `node` as the product of routing factors from the root.
pub fn path_product(scores: &[f64], node: usize) -> f64 {
    let mut chain = Vec::new();
    let mut n = node;
    while n > 1 {
        chain.push(n);
        n /= 2;
    }
    chain.iter().rev().fold(1.0, |acc, &c| {
        if c % 2 == 0 {
            acc * scores[c / 2 - 1]
        } else {
            acc * (1.0 - scores[c / 2 - 1])
        }
    })
}

/// Central finite difference of `f` along coordinate `i` of `x`.
pub fn central_difference(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += h;
    let up = f(&xp);
    xp[i] -= 2.0 * h;
    let down = f(&xp);
    (up - down) / (2.0 * h)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub fn mnist_dir() -> PathBuf {
    ndf::io::default_mnist_dir(concat!(env!("CARGO_MANIFEST_DIR"), "/../.."))
}

pub fn mnist_available() -> bool {
    ndf::io::idx::MNIST_FILES
        .iter()
        .all(|f| mnist_dir().join(f).exists())
}

/// Forest over `[1, side, side]` inputs with a tiny CNN extractor.
pub fn tiny_cnn_forest(
    side: usize,
    depth: usize,
    trees: usize,
    init: LeafInit,
    rng: &mut impl Rng,
) -> Forest {
    let units = trees * ((1 << depth) - 1);
    let pooled = (side - 2) / 2;
    let layers = vec![
        LayerSpec::Conv2d {
            in_channels: 1,
            out_channels: 2,
            kernel: 3,
            stride: 1,
            padding: 0,
        },
        LayerSpec::Relu,
        LayerSpec::MaxPool2d { size: 2 },
        LayerSpec::Flatten,
        LayerSpec::Dense {
            inputs: 2 * pooled * pooled,
            outputs: units,
        },
    ];
    let net = Network::new(vec![1, side, side], layers, rng).unwrap();
    Forest::new(net, depth, trees, init, AssignmentScheme::Sequential, rng).unwrap()
}

/// Random simplex rows.
pub fn random_distributions(rows: usize, classes: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * classes);
    for _ in 0..rows {
        let raw: Vec<f64> = (0..classes).map(|_| rng.gen_range(0.05..1.0)).collect();
        let z: f64 = raw.iter().sum();
        out.extend(raw.iter().map(|v| v / z));
    }
    out
}
