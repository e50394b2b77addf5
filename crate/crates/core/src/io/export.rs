//! PGM images, histogram CSVs and JSON-lines training metrics.

use std::io::Write;
use std::path::Path;

use ndf_autodiff::Tensor;

use crate::error::{NdfError, Result};
use crate::saliency::ScoreHistogram;
use crate::training::EpochMetrics;

/// Binary P5 encoding of a `[H, W]` (or `[1, H, W]`) map with values in `[0, 1]`.
pub fn encode_pgm(map: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match map.shape[..] {
        [h, w] | [1, h, w] => (h, w),
        _ => {
            return Err(NdfError::Export(format!(
                "PGM needs a 2-D map, got shape {:?}",
                map.shape
            )))
        }
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for &v in &map.data {
        if !(0.0..=1.0).contains(&v) {
            return Err(NdfError::Export(format!(
                "value {v} outside [0, 1]; normalize first"
            )));
        }
        out.push((v * 255.0 + 0.5).floor() as u8);
    }
    Ok(out)
}

pub fn export_pgm(map: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_pgm(map)?)?;
    Ok(())
}

pub fn histogram_csv(hist: &ScoreHistogram) -> String {
    let mut out = String::from("bin_start,bin_end,count\n");
    for (i, c) in hist.counts.iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", hist.edges[i], hist.edges[i + 1], c));
    }
    out
}

pub fn export_histogram_csv(hist: &ScoreHistogram, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, histogram_csv(hist))?;
    Ok(())
}

/// Appends one JSON object per line.
pub fn write_metrics_line(out: &mut impl Write, metrics: &EpochMetrics) -> Result<()> {
    serde_json::to_writer(&mut *out, metrics)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn export_metrics_jsonl(metrics: &[EpochMetrics], path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    for m in metrics {
        write_metrics_line(&mut buf, m)?;
    }
    std::fs::write(path, buf)?;
    Ok(())
}
