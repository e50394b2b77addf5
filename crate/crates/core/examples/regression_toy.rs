//! Joint training of extractor and real-valued leaves on a 1-D curve.
//!
//! cargo run --release -p ndf --example regression_toy

use ndf::forest::{AssignmentScheme, Forest, LeafInit};
use ndf::network::Network;
use ndf::training::{regression_loss, train_regressor, TrainConfig};
use ndf::{RegressionSet, Samples};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn curve(x: f64) -> f64 {
    (3.0 * x).sin() + 0.5 * x
}

fn dataset(n: usize, rng: &mut impl Rng) -> ndf::Result<RegressionSet> {
    let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let ys = xs.iter().map(|&x| curve(x)).collect();
    RegressionSet::new(Samples::new(vec![1], xs)?, ys, 1)
}

fn main() -> ndf::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let train = dataset(1000, &mut rng)?;
    let test = dataset(200, &mut rng)?;

    let trees = 4;
    let depth = 4;
    let extractor = Network::mlp(vec![1], &[32], trees * ((1 << depth) - 1), &mut rng)?;
    let mut forest = Forest::new(
        extractor,
        depth,
        trees,
        LeafInit::Regression(1),
        AssignmentScheme::Sequential,
        &mut rng,
    )?;
    println!(
        "untrained test loss {:.4}",
        regression_loss(&forest, &test)?
    );

    let config = TrainConfig {
        epochs: 60,
        batch_size: 32,
        lr: 1e-2,
        leaf_lr: 5e-2,
        ..TrainConfig::default()
    };
    for m in train_regressor(&mut forest, &train, &config)?
        .iter()
        .filter(|m| (m.epoch + 1) % 10 == 0)
    {
        println!("epoch {:2}: train loss {:.4}", m.epoch + 1, m.loss);
    }
    println!("test loss {:.4}", regression_loss(&forest, &test)?);
    for x in [-1.5, -0.5, 0.0, 0.5, 1.5] {
        println!(
            "f({x:+.1}) = {:+.3}  target {:+.3}",
            forest.predict(&[x])?[0],
            curve(x)
        );
    }
    Ok(())
}
