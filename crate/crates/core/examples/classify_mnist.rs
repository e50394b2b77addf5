//! Trains a single depth-9 tree on a shallow CNN over MNIST and reports
//! test accuracy.
//!
//! cargo run --release -p ndf --example classify_mnist -- [train_images] [epochs]

use std::time::Instant;

use ndf::forest::{AssignmentScheme, Forest, LeafInit};
use ndf::io::{default_mnist_dir, load_mnist};
use ndf::network::Network;
use ndf::training::{accuracy, train_classifier_with, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse())
        .collect::<Result<_, _>>()?;
    let train_images = args.first().copied().unwrap_or(10_000);
    let epochs = args.get(1).copied().unwrap_or(10);

    let dir = default_mnist_dir(concat!(env!("CARGO_MANIFEST_DIR"), "/../.."));
    let mut mnist = load_mnist(&dir)?;
    mnist.train.truncate(train_images);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let depth = 9;
    let extractor = Network::shallow_cnn([1, 28, 28], (1 << depth) - 1, &mut rng)?;
    let mut forest = Forest::new(
        extractor,
        depth,
        1,
        LeafInit::Classification(10),
        AssignmentScheme::Sequential,
        &mut rng,
    )?;
    let config = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };

    let start = Instant::now();
    train_classifier_with(&mut forest, &mnist.train, &config, |m| {
        println!(
            "epoch {} loss {:.4} train acc {:.4} ({:.0}s)",
            m.epoch,
            m.loss,
            m.accuracy.unwrap_or(0.0),
            start.elapsed().as_secs_f64()
        );
    })?;
    println!("test accuracy {:.4}", accuracy(&forest, &mnist.test)?);
    Ok(())
}
