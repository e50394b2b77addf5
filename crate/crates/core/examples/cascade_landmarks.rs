//! Cascaded regression forests locating five landmarks on synthetic faces.
//! Prints per-stage train/test error and writes per-stage score histograms.
//!
//! cargo run --release -p ndf --example cascade_landmarks -- [train] [test] [epochs_per_stage]

use std::time::Instant;

use ndf::cascade::{synth_range, train_cascade_with, CascadeConfig};
use ndf::io::export_histogram_csv;

fn main() -> anyhow::Result<()> {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse())
        .collect::<Result<_, _>>()?;
    let n_train = args.first().copied().unwrap_or(1000);
    let n_test = args.get(1).copied().unwrap_or(200);
    let mut config = CascadeConfig::default();
    if let Some(&e) = args.get(2) {
        config.train.epochs = e;
    }

    let train = synth_range(0, 0, n_train);
    let test = synth_range(0, n_train, n_test);

    let start = Instant::now();
    let (model, _) = train_cascade_with(&train, &config, |r| {
        println!(
            "stage {:2}: train error {:.3} px ({:.0}s)",
            r.stage,
            r.train_error,
            start.elapsed().as_secs_f64()
        );
    })?;

    let errors = model.stage_errors(&test)?;
    println!("test error by stage (0 = mean shape):");
    for (k, e) in errors.iter().enumerate() {
        println!("  {k:2}: {e:.6} px");
    }
    let final_ratio = errors.last().unwrap() / errors[0];
    let non_increasing = errors.windows(2).filter(|w| w[1] <= w[0]).count();
    println!(
        "final / initial = {final_ratio:.3}; non-increasing stages {non_increasing}/{}",
        errors.len() - 1
    );

    let out = std::path::Path::new("target/cascade_landmarks");
    std::fs::create_dir_all(out)?;
    for (k, h) in model
        .stage_score_histograms(&test.images, 20)?
        .iter()
        .enumerate()
    {
        export_histogram_csv(h, out.join(format!("stage{k}_scores.csv")))?;
    }
    println!("histograms in {}", out.display());
    Ok(())
}
