//! Trains a tiny classifier, saves it, loads it back and checks predictions
//! are bitwise identical; also writes the score histogram and metrics files.
//!
//! cargo run --release -p ndf --example model_roundtrip -- [OUT_DIR]

use std::path::PathBuf;

use ndf::forest::{AssignmentScheme, Forest, LeafInit};
use ndf::io::{export_histogram_csv, export_metrics_jsonl, load_model, save_model, TrainingMeta};
use ndf::network::Network;
use ndf::saliency::{collect_score_histogram, collect_scores, decisive_fraction};
use ndf::training::{train_classifier, TrainConfig};
use ndf::{ClassificationSet, Samples};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let out = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "target/model_roundtrip".into()),
    );
    std::fs::create_dir_all(&out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    // label = quadrant of the point
    let n = 600;
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let (x, y): (f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        data.extend([x, y]);
        labels.push(usize::from(x > 0.0) + 2 * usize::from(y > 0.0));
    }
    let set = ClassificationSet::new(Samples::new(vec![2], data)?, labels, 4)?;

    let extractor = Network::mlp(vec![2], &[16], 2 * 7, &mut rng)?;
    let mut forest = Forest::new(
        extractor,
        3,
        2,
        LeafInit::Classification(4),
        AssignmentScheme::Sequential,
        &mut rng,
    )?;
    let config = TrainConfig {
        epochs: 15,
        batch_size: 32,
        lr: 1e-2,
        ..TrainConfig::default()
    };
    let metrics = train_classifier(&mut forest, &set, &config)?;
    let last = metrics.last().expect("at least one epoch");
    println!(
        "after {} epochs: loss {:.4}, accuracy {:.3}",
        metrics.len(),
        last.loss,
        last.accuracy.unwrap_or(f64::NAN)
    );

    let meta = TrainingMeta {
        seed: config.seed,
        epochs: config.epochs,
        batch_size: Some(config.batch_size),
        lr: Some(config.lr),
        ..TrainingMeta::default()
    };
    let path = out.join("model.json");
    save_model(&forest, &meta, &path)?;
    let (back, meta_back) = load_model(&path)?;
    assert_eq!(meta_back, meta);
    let same = (0..set.len())
        .filter(|&i| {
            let x = set.inputs.sample(i);
            let (a, b) = (forest.predict(x).unwrap(), back.predict(x).unwrap());
            a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits())
        })
        .count();
    println!(
        "{same}/{} predictions bitwise identical after reload from {}",
        set.len(),
        path.display()
    );

    export_metrics_jsonl(&metrics, out.join("metrics.jsonl"))?;
    export_histogram_csv(
        &collect_score_histogram(&back, &set.inputs, 50)?,
        out.join("scores.csv"),
    )?;
    let decisive = decisive_fraction(&collect_scores(&back, &set.inputs)?, 0.05);
    println!(
        "{:.1}% of routing scores within 0.05 of 0 or 1; files in {}",
        100.0 * decisive,
        out.display()
    );
    Ok(())
}
