//! Decision saliency maps along maximum-probability paths, and how much of
//! their mass sits on the digit strokes.
//!
//! cargo run --release -p ndf --example saliency_trace -- [MODEL.json] [OUT_DIR]
//!
//! Without a model file a small forest is trained first (2000 images, 2 epochs).

use ndf::forest::{AssignmentScheme, Forest, LeafInit};
use ndf::io::{default_mnist_dir, load_mnist, load_model, write_trace};
use ndf::network::Network;
use ndf::saliency::{dsm_along_path, foreground_contrast};
use ndf::training::{train_classifier, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let dir = default_mnist_dir(concat!(env!("CARGO_MANIFEST_DIR"), "/../.."));
    let mut mnist = load_mnist(&dir)?;
    let forest = match args.first() {
        Some(path) => load_model(path)?.0,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let extractor = Network::shallow_cnn([1, 28, 28], 511, &mut rng)?;
            let mut forest = Forest::new(
                extractor,
                9,
                1,
                LeafInit::Classification(10),
                AssignmentScheme::Sequential,
                &mut rng,
            )?;
            mnist.train.truncate(2000);
            let config = TrainConfig {
                epochs: 2,
                ..TrainConfig::default()
            };
            train_classifier(&mut forest, &mnist.train, &config)?;
            forest
        }
    };

    let out = std::path::PathBuf::from(args.get(1).map_or("target/saliency_trace", String::as_str));
    for i in 0..3 {
        let record = write_trace(
            &forest,
            mnist.test.inputs.sample(i),
            0,
            out.join(format!("image{i}")),
        )?;
        let files: Vec<&str> = record.maps.iter().map(|m| m.file.as_str()).collect();
        println!(
            "image {i} (label {}): {}",
            mnist.test.labels[i],
            files.join(" ")
        );
    }

    let (mut wins, mut pairs) = (0, 0);
    for i in 0..100 {
        let x = mnist.test.inputs.sample(i);
        let intensity: Vec<f64> = x.iter().map(|v| v + 0.5).collect();
        for map in dsm_along_path(&forest, x, 0)? {
            if let Some((fg, bg)) = foreground_contrast(&map.raw, &intensity, 0.2) {
                pairs += 1;
                if fg > bg {
                    wins += 1;
                }
            }
        }
    }
    println!(
        "foreground |DSM| exceeds background in {wins}/{pairs} (image, node) pairs ({:.1}%)",
        100.0 * wins as f64 / pairs as f64
    );
    Ok(())
}
