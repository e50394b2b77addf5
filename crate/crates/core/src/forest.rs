//! Neural decision forest: a shared feature extractor feeding the splitting
//! nodes of one or more soft-routing trees.

use ndf_autodiff::{Graph, Tensor, Var};
use rand::Rng;

use crate::data::Samples;
use crate::error::{NdfError, Result};
use crate::network::Network;
use crate::tree::{self, LeafMode, LeafStore, RoutingState, SplitAssignment, TreeTopology};

/// Floor applied to `P(y|x)` before dividing or taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Samples per forward pass when evaluating large sample sets.
const EVAL_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    pub topology: TreeTopology,
    pub assignment: SplitAssignment,
    pub leaves: LeafStore,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LeafInit {
    /// Uniform distributions over this many classes.
    Classification(usize),
    /// Zero vectors of this dimension.
    Regression(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AssignmentScheme {
    /// Tree `t`, node `i` reads unit `t * split_count + i - 1`.
    #[default]
    Sequential,
    /// Each tree draws distinct random units from the whole extractor output.
    Random,
}

/// Which tape leaves should receive gradients.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GradTargets {
    pub input: bool,
    pub extractor: bool,
    pub leaves: bool,
}

impl GradTargets {
    pub const NONE: Self = Self {
        input: false,
        extractor: false,
        leaves: false,
    };
}

/// Handles to everything a forest forward pass records on the tape.
#[derive(Clone, Debug)]
pub struct ForestGraph {
    pub input: Var,
    pub params: Vec<Var>,
    pub features: Var,
    /// Per tree, `[N, split_count]` routing probabilities (column `i - 1` is node `i`).
    pub scores: Vec<Var>,
    /// Per tree, `[N, leaf_count]` path weights.
    pub weights: Vec<Var>,
    /// Per tree, `[leaf_count, dim]` leaf vectors.
    pub leaves: Vec<Var>,
    pub tree_predictions: Vec<Var>,
    /// `[N, dim]` mean of the tree predictions.
    pub prediction: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Forest {
    pub extractor: Network,
    pub trees: Vec<Tree>,
}

/// Routing probabilities `sigmoid(features[:, unit(i)])` for every splitting node.
pub fn routing_scores(g: &mut Graph, assignment: &SplitAssignment, features: Var) -> Result<Var> {
    let picked = g.slice(features, 1, assignment.units.clone())?;
    Ok(g.sigmoid(picked)?)
}

/// Path weights on the tape, built level by level: each node's arrival
/// probability splits into `mu * s` (left child) and `mu * (1 - s)` (right).
pub fn leaf_weights(g: &mut Graph, topology: TreeTopology, scores: Var) -> Result<Var> {
    let n = g.value(scores).shape[0];
    let mut mu = g.constant(Tensor::ones(&[n, 1]));
    for level in 0..topology.depth() {
        let width = 1usize << level;
        let s = g.slice_range(scores, 1, width - 1, width)?;
        let ones = g.constant(Tensor::ones(&[n, width]));
        let not_s = g.sub(ones, s)?;
        let left = g.mul(mu, s)?;
        let right = g.mul(mu, not_s)?;
        let left = g.reshape(left, &[n, width, 1])?;
        let right = g.reshape(right, &[n, width, 1])?;
        let pair = g.concat(&[left, right], 2)?;
        mu = g.reshape(pair, &[n, 2 * width])?;
    }
    Ok(mu)
}

impl Forest {
    pub fn new(
        extractor: Network,
        depth: usize,
        tree_count: usize,
        init: LeafInit,
        scheme: AssignmentScheme,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if tree_count == 0 {
            return Err(NdfError::EmptyForest);
        }
        let topology = TreeTopology::new(depth)?;
        let units = extractor.output_len();
        if units < tree_count * topology.split_count() {
            return Err(NdfError::Config(format!(
                "extractor emits {units} units but {tree_count} trees of depth {depth} need {}",
                tree_count * topology.split_count()
            )));
        }
        let pool: Vec<usize> = (0..units).collect();
        let mut trees = Vec::with_capacity(tree_count);
        for t in 0..tree_count {
            let assignment = match scheme {
                AssignmentScheme::Sequential => {
                    SplitAssignment::sequential(topology, t * topology.split_count())
                }
                AssignmentScheme::Random => SplitAssignment::from_pool(topology, &pool, rng)?,
            };
            let leaves = match init {
                LeafInit::Classification(c) if c >= 2 => {
                    LeafStore::uniform(topology.leaf_count(), c)
                }
                LeafInit::Classification(c) => {
                    return Err(NdfError::Config(format!(
                        "classification needs at least 2 classes, got {c}"
                    )))
                }
                LeafInit::Regression(d) if d >= 1 => LeafStore::zeros(topology.leaf_count(), d),
                LeafInit::Regression(_) => {
                    return Err(NdfError::Config(
                        "regression dimension must be positive".into(),
                    ))
                }
            };
            trees.push(Tree {
                topology,
                assignment,
                leaves,
            });
        }
        Self::from_parts(extractor, trees)
    }

    /// Assembles a forest, checking every cross-component invariant.
    pub fn from_parts(extractor: Network, trees: Vec<Tree>) -> Result<Self> {
        let first = trees.first().ok_or(NdfError::EmptyForest)?;
        let (mode, dim) = (first.leaves.mode, first.leaves.dim);
        let units = extractor.output_len();
        let total: usize = trees.iter().map(|t| t.topology.split_count()).sum();
        if units < total {
            return Err(NdfError::Config(format!(
                "extractor emits {units} units, trees need {total}"
            )));
        }
        for t in &trees {
            t.assignment.validate(t.topology, units)?;
            t.leaves.validate()?;
            if t.leaves.mode != mode
                || t.leaves.dim != dim
                || t.leaves.leaf_count() != t.topology.leaf_count()
            {
                return Err(NdfError::Config("trees disagree on leaf layout".into()));
            }
        }
        Ok(Self { extractor, trees })
    }

    pub fn mode(&self) -> LeafMode {
        self.trees[0].leaves.mode
    }

    /// Length of a prediction vector.
    pub fn output_dim(&self) -> usize {
        self.trees[0].leaves.dim
    }

    pub fn total_splits(&self) -> usize {
        self.trees.iter().map(|t| t.topology.split_count()).sum()
    }

    fn input_tensor(&self, data: &[f64], n: usize) -> Result<Tensor> {
        let mut shape = vec![n];
        shape.extend_from_slice(&self.extractor.input_shape);
        Ok(Tensor::new(shape, data.to_vec())?)
    }

    /// Records the full forward pass for a `[N, ..input_shape]` batch.
    pub fn forward(&self, g: &mut Graph, input: Tensor, grads: GradTargets) -> Result<ForestGraph> {
        if self.trees.is_empty() {
            return Err(NdfError::EmptyForest);
        }
        if input.shape.get(1..) != Some(&self.extractor.input_shape[..]) {
            return Err(NdfError::Config(format!(
                "input batch shape {:?} does not match extractor input {:?}",
                input.shape, self.extractor.input_shape
            )));
        }
        let input = if grads.input {
            g.param(input)
        } else {
            g.constant(input)
        };
        let params = self.extractor.bind(g, grads.extractor);
        let features = self.extractor.forward(g, input, &params)?;
        let mut out = ForestGraph {
            input,
            params,
            features,
            scores: Vec::new(),
            weights: Vec::new(),
            leaves: Vec::new(),
            tree_predictions: Vec::new(),
            prediction: features,
        };
        for t in &self.trees {
            let scores = routing_scores(g, &t.assignment, features)?;
            let weights = leaf_weights(g, t.topology, scores)?;
            let leaf_tensor = Tensor::new(
                vec![t.leaves.leaf_count(), t.leaves.dim],
                t.leaves.values.clone(),
            )?;
            let leaves = if grads.leaves {
                g.param(leaf_tensor)
            } else {
                g.constant(leaf_tensor)
            };
            let pred = g.matmul(weights, leaves)?;
            out.scores.push(scores);
            out.weights.push(weights);
            out.leaves.push(leaves);
            out.tree_predictions.push(pred);
        }
        let mut sum = out.tree_predictions[0];
        for &p in &out.tree_predictions[1..] {
            sum = g.add(sum, p)?;
        }
        out.prediction = if self.trees.len() == 1 {
            sum
        } else {
            g.scale(sum, 1.0 / self.trees.len() as f64)?
        };
        Ok(out)
    }

    /// Forest prediction for every sample, `N × dim` row-major.
    pub fn predict_samples(&self, samples: &Samples) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(samples.len() * self.output_dim());
        self.for_chunks(samples, |g, fg| {
            out.extend_from_slice(&g.value(fg.prediction).data);
        })?;
        Ok(out)
    }

    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let fg = self.forward(&mut g, self.input_tensor(input, 1)?, GradTargets::NONE)?;
        Ok(g.value(fg.prediction).data.clone())
    }

    /// Routing state of one input in every tree.
    pub fn routing(&self, input: &[f64]) -> Result<Vec<RoutingState>> {
        let mut g = Graph::new();
        let fg = self.forward(&mut g, self.input_tensor(input, 1)?, GradTargets::NONE)?;
        Ok(self
            .trees
            .iter()
            .zip(&fg.scores)
            .map(|(t, &s)| RoutingState::from_scores(t.topology, g.value(s).data.clone()))
            .collect())
    }

    /// Per tree, `N × split_count` routing probabilities.
    pub fn scores_samples(&self, samples: &Samples) -> Result<Vec<Vec<f64>>> {
        let mut out = vec![Vec::new(); self.trees.len()];
        self.for_chunks(samples, |g, fg| {
            for (o, &s) in out.iter_mut().zip(&fg.scores) {
                o.extend_from_slice(&g.value(s).data);
            }
        })?;
        Ok(out)
    }

    /// Per tree, `N × leaf_count` path weights for the selected samples.
    pub fn weights_samples(&self, samples: &Samples, indices: &[usize]) -> Result<Vec<Vec<f64>>> {
        let mut out = vec![Vec::new(); self.trees.len()];
        for chunk in indices.chunks(EVAL_CHUNK) {
            let mut g = Graph::new();
            let fg = self.forward(&mut g, samples.batch(chunk), GradTargets::NONE)?;
            for (o, &w) in out.iter_mut().zip(&fg.weights) {
                o.extend_from_slice(&g.value(w).data);
            }
        }
        Ok(out)
    }

    fn for_chunks(&self, samples: &Samples, mut f: impl FnMut(&Graph, &ForestGraph)) -> Result<()> {
        if samples.shape != self.extractor.input_shape {
            return Err(NdfError::Config(format!(
                "sample shape {:?} does not match extractor input {:?}",
                samples.shape, self.extractor.input_shape
            )));
        }
        let n = samples.len();
        let size = samples.sample_size();
        let mut start = 0;
        while start < n {
            let end = (start + EVAL_CHUNK).min(n);
            let mut g = Graph::new();
            let input = self.input_tensor(&samples.data[start * size..end * size], end - start)?;
            let fg = self.forward(&mut g, input, GradTargets::NONE)?;
            f(&g, &fg);
            start = end;
        }
        Ok(())
    }

    /// Alternating-optimisation leaf step for classification: routes the
    /// selected samples once, then applies `iterations` multiplicative updates
    /// to every tree's leaf distributions with the routing held fixed.
    pub fn leaf_update_classification(
        &mut self,
        samples: &Samples,
        labels: &[usize],
        indices: &[usize],
        iterations: usize,
    ) -> Result<()> {
        if self.mode() != LeafMode::Classification {
            return Err(NdfError::Config(
                "leaf update rule applies to classification forests".into(),
            ));
        }
        if indices.is_empty() {
            return Err(NdfError::EmptyDataset);
        }
        let weights = self.weights_samples(samples, indices)?;
        let batch_labels: Vec<usize> = indices.iter().map(|&i| labels[i]).collect();
        for (t, w) in self.trees.iter_mut().zip(&weights) {
            for _ in 0..iterations {
                update_classification_leaves(&mut t.leaves, w, &batch_labels);
            }
        }
        Ok(())
    }
}

/// One multiplicative leaf update given fixed path weights (`N × leaf_count`):
///
/// `π_l(y) ← (1/Z_l) Σ_{n: y_n = y} w_l(x_n) π_l(y) / P(y_n | x_n)`
///
/// Leaves that receive no mass keep their distribution.
pub fn update_classification_leaves(leaves: &mut LeafStore, weights: &[f64], labels: &[usize]) {
    let (l_count, c) = (leaves.leaf_count(), leaves.dim);
    assert_eq!(
        weights.len(),
        labels.len() * l_count,
        "weights must be N × leaf_count"
    );
    let mut acc = vec![0.0; l_count * c];
    for (n, &y) in labels.iter().enumerate() {
        let w = &weights[n * l_count..(n + 1) * l_count];
        let p: f64 = w
            .iter()
            .enumerate()
            .map(|(l, &wl)| wl * leaves.values[l * c + y])
            .sum();
        let p = p.max(PROB_FLOOR);
        for (l, &wl) in w.iter().enumerate() {
            if wl > 0.0 {
                acc[l * c + y] += wl * leaves.values[l * c + y] / p;
            }
        }
    }
    for l in 0..l_count {
        let row = &acc[l * c..(l + 1) * c];
        let z: f64 = row.iter().sum();
        if z > 0.0 && z.is_finite() {
            for (dst, &v) in leaves.leaf_mut(l).iter_mut().zip(row) {
                *dst = v / z;
            }
        }
    }
}

/// Mean negative log-likelihood of `labels` under a tree's leaf distributions.
pub fn tree_nll(leaves: &LeafStore, weights: &[f64], labels: &[usize]) -> f64 {
    let l_count = leaves.leaf_count();
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(n, &y)| {
            let w = &weights[n * l_count..(n + 1) * l_count];
            let p: f64 = w
                .iter()
                .enumerate()
                .map(|(l, &wl)| wl * leaves.leaf(l)[y])
                .sum();
            -p.max(PROB_FLOOR).ln()
        })
        .sum();
    total / labels.len() as f64
}

/// Tape-free forest mean over per-tree predictions from precomputed scores.
pub fn mean_prediction(trees: &[Tree], scores: &[Vec<f64>]) -> Result<Vec<f64>> {
    if trees.is_empty() {
        return Err(NdfError::EmptyForest);
    }
    let mut out = vec![0.0; trees[0].leaves.dim];
    for (t, s) in trees.iter().zip(scores) {
        let p = tree::predict(&tree::leaf_weights(t.topology, s), &t.leaves);
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    let k = trees.len() as f64;
    Ok(out.into_iter().map(|v| v / k).collect())
}
