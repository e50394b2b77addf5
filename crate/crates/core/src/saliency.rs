//! Decision saliency maps: gradients of a routing probability with respect to
//! the input, traced along the maximum-probability path, and histograms of
//! routing scores.

use ndf_autodiff::{Graph, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::Samples;
use crate::error::{NdfError, Result};
use crate::forest::{Forest, GradTargets};
use crate::tree::{arrival_probabilities, trace_max_path};

/// `∂s_node/∂x` for one input, shaped like the input.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    pub raw: Tensor,
    pub tree: usize,
    pub node: usize,
    /// Probability that the input reaches `node`.
    pub arrival_probability: f64,
    /// Routing probability `s_node` itself.
    pub score: f64,
}

/// Forward once, then one reverse sweep per requested node.
fn node_gradients(
    forest: &Forest,
    input: &[f64],
    tree: usize,
    nodes: Option<&[usize]>,
) -> Result<Vec<SaliencyMap>> {
    let t = forest
        .trees
        .get(tree)
        .ok_or_else(|| NdfError::Config(format!("forest has no tree {tree}")))?;
    if let Some(nodes) = nodes {
        for &n in nodes {
            t.topology.check_split(n)?;
        }
    }
    let shape = forest.extractor.input_shape.clone();
    let mut batch_shape = vec![1];
    batch_shape.extend_from_slice(&shape);
    let mut g = Graph::new();
    let grads = GradTargets {
        input: true,
        ..GradTargets::NONE
    };
    let fg = forest.forward(&mut g, Tensor::new(batch_shape, input.to_vec())?, grads)?;
    let scores = g.value(fg.scores[tree]).data.clone();
    let mu = arrival_probabilities(t.topology, &scores);
    let nodes: Vec<usize> = match nodes {
        Some(n) => n.to_vec(),
        None => trace_max_path(t.topology, &scores)
            .iter()
            .map(|s| s.node)
            .filter(|&n| t.topology.is_split(n))
            .collect(),
    };
    let mut maps = Vec::with_capacity(nodes.len());
    for node in nodes {
        g.zero_grad();
        let picked = g.slice(fg.scores[tree], 1, vec![node - 1])?;
        let root = g.sum(picked)?;
        g.backward(root)?;
        let grad = g.grad_of(root, fg.input)?;
        maps.push(SaliencyMap {
            raw: grad.tensor.reshaped(&shape)?,
            tree,
            node,
            arrival_probability: mu[node],
            score: scores[node - 1],
        });
    }
    Ok(maps)
}

/// Decision saliency map of splitting node `node` in tree `tree`.
pub fn compute_dsm(
    forest: &Forest,
    input: &[f64],
    tree: usize,
    node: usize,
) -> Result<SaliencyMap> {
    Ok(node_gradients(forest, input, tree, Some(&[node]))?.remove(0))
}

/// One map per splitting node on the greedy maximum-probability path, root first.
pub fn dsm_along_path(forest: &Forest, input: &[f64], tree: usize) -> Result<Vec<SaliencyMap>> {
    node_gradients(forest, input, tree, None)
}

/// Visualisation form: absolute value, max over channels for `[C, H, W]`
/// maps, then min-max scaling to `[0, 1]`. Constant maps become zeros.
pub fn normalize_dsm(map: &Tensor) -> Tensor {
    let (shape, mut values): (Vec<usize>, Vec<f64>) = if map.rank() == 3 {
        let (c, plane) = (map.shape[0], map.shape[1] * map.shape[2]);
        let reduced = (0..plane)
            .map(|p| {
                (0..c)
                    .map(|ch| map.data[ch * plane + p].abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        (map.shape[1..].to_vec(), reduced)
    } else {
        (
            map.shape.clone(),
            map.data.iter().map(|v| v.abs()).collect(),
        )
    };
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        let span = hi - lo;
        values.iter_mut().for_each(|v| *v = (*v - lo) / span);
    } else {
        values.iter_mut().for_each(|v| *v = 0.0);
    }
    Tensor::new(shape, values).expect("shape preserved")
}

/// Mean `|DSM|` over foreground pixels (intensity above `threshold`) and over
/// the rest. `None` when either region is empty.
pub fn foreground_contrast(map: &Tensor, intensity: &[f64], threshold: f64) -> Option<(f64, f64)> {
    assert_eq!(map.numel(), intensity.len(), "map and image sizes differ");
    let (mut fg, mut nf, mut bg, mut nb) = (0.0, 0usize, 0.0, 0usize);
    for (&d, &v) in map.data.iter().zip(intensity) {
        if v > threshold {
            fg += d.abs();
            nf += 1;
        } else {
            bg += d.abs();
            nb += 1;
        }
    }
    (nf > 0 && nb > 0).then(|| (fg / nf as f64, bg / nb as f64))
}

/// Uniform-width histogram of routing probabilities over `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
}

pub const DEFAULT_BINS: usize = 50;

impl ScoreHistogram {
    pub fn empty(bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(NdfError::Config(format!(
                "histogram needs at least 2 bins, got {bins}"
            )));
        }
        Ok(Self {
            edges: (0..=bins).map(|i| i as f64 / bins as f64).collect(),
            counts: vec![0; bins],
            total: 0,
        })
    }

    pub fn from_scores(scores: &[f64], bins: usize) -> Result<Self> {
        let mut h = Self::empty(bins)?;
        h.extend(scores);
        Ok(h)
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn add(&mut self, score: f64) {
        let bins = self.bins();
        let b = ((score.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        self.counts[b] += 1;
        self.total += 1;
    }

    pub fn extend(&mut self, scores: &[f64]) {
        scores.iter().for_each(|&s| self.add(s));
    }
}

/// Every routing probability of every tree for every sample.
pub fn collect_scores(forest: &Forest, samples: &Samples) -> Result<Vec<f64>> {
    Ok(forest
        .scores_samples(samples)?
        .into_iter()
        .flatten()
        .collect())
}

pub fn collect_score_histogram(
    forest: &Forest,
    samples: &Samples,
    bins: usize,
) -> Result<ScoreHistogram> {
    let mut h = ScoreHistogram::empty(bins)?;
    h.extend(&collect_scores(forest, samples)?);
    Ok(h)
}

/// Share of scores within `margin` of 0 or 1.
pub fn decisive_fraction(scores: &[f64], margin: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let n = scores
        .iter()
        .filter(|&&s| s <= margin || s >= 1.0 - margin)
        .count();
    n as f64 / scores.len() as f64
}
