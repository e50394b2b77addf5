//! Writes the saliency maps along an input's maximum-probability path.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::forest::Forest;
use crate::io::export::export_pgm;
use crate::saliency::{dsm_along_path, normalize_dsm};
use crate::tree::PathStep;

/// `dsm_node{a}_p{b}.pgm`, `b` being the arrival probability to three decimals.
pub fn dsm_file_name(node: usize, arrival_probability: f64) -> String {
    format!("dsm_node{node}_p{arrival_probability:.3}.pgm")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracedMap {
    pub node: usize,
    pub arrival_probability: f64,
    pub score: f64,
    pub file: String,
}

/// Contents of `path.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    pub tree: usize,
    pub prediction: Vec<f64>,
    /// Root to leaf, with arrival probabilities.
    pub path: Vec<PathStep>,
    pub maps: Vec<TracedMap>,
}

impl TraceRecord {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Exports one normalized DSM per splitting node on the path of `input`
/// through tree `tree` into `out_dir` (created if missing).
pub fn write_trace(
    forest: &Forest,
    input: &[f64],
    tree: usize,
    out_dir: impl AsRef<Path>,
) -> Result<TraceRecord> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let routing = forest.routing(input)?;
    let maps = dsm_along_path(forest, input, tree)?;
    let mut traced = Vec::with_capacity(maps.len());
    for m in &maps {
        let file = dsm_file_name(m.node, m.arrival_probability);
        export_pgm(&normalize_dsm(&m.raw), out_dir.join(&file))?;
        traced.push(TracedMap {
            node: m.node,
            arrival_probability: m.arrival_probability,
            score: m.score,
            file,
        });
    }
    Ok(TraceRecord {
        input_index: None,
        label: None,
        tree,
        prediction: forest.predict(input)?,
        path: routing[tree].max_path.clone(),
        maps: traced,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_names_round_probability() {
        assert_eq!(dsm_file_name(1, 1.0), "dsm_node1_p1.000.pgm");
        assert_eq!(dsm_file_name(5, 0.48249), "dsm_node5_p0.482.pgm");
    }
}
