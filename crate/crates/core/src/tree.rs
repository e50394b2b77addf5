//! Full binary tree topology, split assignment, leaf stores and the
//! tape-free routing arithmetic (path weights, prediction, max path).
//!
//! Nodes are numbered from 1 at the root; node `i` has children `2i` (left)
//! and `2i + 1` (right). For depth `d`, nodes `1..2^d` are splitting nodes and
//! `2^d..2^(d+1)` are leaves. A score `s_i` is the probability of routing left.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NdfError, Result};

pub const MAX_DEPTH: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeTopology {
    depth: usize,
}

impl TreeTopology {
    pub fn new(depth: usize) -> Result<Self> {
        if depth == 0 || depth > MAX_DEPTH {
            return Err(NdfError::Config(format!(
                "tree depth must be in 1..={MAX_DEPTH}, got {depth}"
            )));
        }
        Ok(Self { depth })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn split_count(&self) -> usize {
        (1 << self.depth) - 1
    }

    pub fn leaf_count(&self) -> usize {
        1 << self.depth
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        node >= self.leaf_count() && node < 2 * self.leaf_count()
    }

    pub fn is_split(&self, node: usize) -> bool {
        node >= 1 && node < self.leaf_count()
    }

    /// Position of a leaf node in left-to-right order.
    pub fn leaf_position(&self, node: usize) -> usize {
        debug_assert!(self.is_leaf(node));
        node - self.leaf_count()
    }

    pub fn leaf_node(&self, position: usize) -> usize {
        position + self.leaf_count()
    }

    pub fn check_split(&self, node: usize) -> Result<()> {
        if self.is_split(node) {
            Ok(())
        } else {
            Err(NdfError::NotASplit {
                node,
                depth: self.depth,
            })
        }
    }
}

/// Which extractor output unit feeds each splitting node (`units[i - 1]` for node `i`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub units: Vec<usize>,
}

impl SplitAssignment {
    /// Node `i` reads unit `offset + i - 1`.
    pub fn sequential(topology: TreeTopology, offset: usize) -> Self {
        Self {
            units: (offset..offset + topology.split_count()).collect(),
        }
    }

    /// Distinct units drawn from `pool` in random order.
    pub fn from_pool(topology: TreeTopology, pool: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let n = topology.split_count();
        if pool.len() < n {
            return Err(NdfError::Config(format!(
                "{} units cannot feed {n} splitting nodes",
                pool.len()
            )));
        }
        let mut units = pool.to_vec();
        units.shuffle(rng);
        units.truncate(n);
        Ok(Self { units })
    }

    pub fn unit(&self, node: usize) -> usize {
        self.units[node - 1]
    }

    /// Injective and within `feature_len`.
    pub fn validate(&self, topology: TreeTopology, feature_len: usize) -> Result<()> {
        if self.units.len() != topology.split_count() {
            return Err(NdfError::Config(format!(
                "assignment covers {} nodes, tree has {}",
                self.units.len(),
                topology.split_count()
            )));
        }
        let mut seen = vec![false; feature_len];
        for &u in &self.units {
            if u >= feature_len {
                return Err(NdfError::Config(format!(
                    "unit {u} outside extractor output of {feature_len}"
                )));
            }
            if std::mem::replace(&mut seen[u], true) {
                return Err(NdfError::Config(format!(
                    "unit {u} assigned to more than one node"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafMode {
    Classification,
    Regression,
}

/// One prediction vector per leaf, left to right, `dim` entries each.
#[derive(Clone, Debug, PartialEq)]
pub struct LeafStore {
    pub mode: LeafMode,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl LeafStore {
    /// Uniform class distributions.
    pub fn uniform(leaves: usize, classes: usize) -> Self {
        Self {
            mode: LeafMode::Classification,
            dim: classes,
            values: vec![1.0 / classes as f64; leaves * classes],
        }
    }

    pub fn zeros(leaves: usize, dim: usize) -> Self {
        Self {
            mode: LeafMode::Regression,
            dim,
            values: vec![0.0; leaves * dim],
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn leaf(&self, position: usize) -> &[f64] {
        &self.values[position * self.dim..(position + 1) * self.dim]
    }

    pub fn leaf_mut(&mut self, position: usize) -> &mut [f64] {
        &mut self.values[position * self.dim..(position + 1) * self.dim]
    }

    /// Largest deviation of any leaf's mass from 1 (classification invariant).
    pub fn simplex_error(&self) -> f64 {
        (0..self.leaf_count())
            .map(|l| {
                let p = self.leaf(l);
                if p.iter().any(|&v| v < 0.0) {
                    f64::INFINITY
                } else {
                    (p.iter().sum::<f64>() - 1.0).abs()
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.values.len() % self.dim != 0 {
            return Err(NdfError::Config("leaf store shape is ragged".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(NdfError::Config(
                "leaf store holds non-finite values".into(),
            ));
        }
        if self.mode == LeafMode::Classification && self.simplex_error() > 1e-9 {
            return Err(NdfError::Config(
                "classification leaf is off the probability simplex".into(),
            ));
        }
        Ok(())
    }
}

/// One step of a traced computation path: the node reached and the
/// probability of arriving there.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathStep {
    pub node: usize,
    pub probability: f64,
}

/// Routing summary for one input through one tree.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutingState {
    pub scores: Vec<f64>,
    pub leaf_weights: Vec<f64>,
    pub max_path: Vec<PathStep>,
}

impl RoutingState {
    pub fn from_scores(topology: TreeTopology, scores: Vec<f64>) -> Self {
        let leaf_weights = leaf_weights(topology, &scores);
        let max_path = trace_max_path(topology, &scores);
        Self {
            scores,
            leaf_weights,
            max_path,
        }
    }
}

/// Probability of reaching every node; index 0 is unused.
pub fn arrival_probabilities(topology: TreeTopology, scores: &[f64]) -> Vec<f64> {
    assert_eq!(
        scores.len(),
        topology.split_count(),
        "one score per splitting node"
    );
    let mut mu = vec![0.0; 2 * topology.leaf_count()];
    mu[1] = 1.0;
    for node in 1..topology.leaf_count() {
        let s = scores[node - 1];
        mu[2 * node] = mu[node] * s;
        mu[2 * node + 1] = mu[node] * (1.0 - s);
    }
    mu
}

/// Leaf weights: product of `s` (left turns) and `1 - s` (right turns) along
/// each root-to-leaf path, left to right.
pub fn leaf_weights(topology: TreeTopology, scores: &[f64]) -> Vec<f64> {
    let mu = arrival_probabilities(topology, scores);
    mu[topology.leaf_count()..].to_vec()
}

/// Greedy descent following the larger routing factor (ties go left). The
/// returned path starts at the root with probability 1 and ends at a leaf.
pub fn trace_max_path(topology: TreeTopology, scores: &[f64]) -> Vec<PathStep> {
    assert_eq!(
        scores.len(),
        topology.split_count(),
        "one score per splitting node"
    );
    let mut path = Vec::with_capacity(topology.depth() + 1);
    let mut node = 1;
    let mut probability = 1.0;
    path.push(PathStep { node, probability });
    while topology.is_split(node) {
        let s = scores[node - 1];
        if s >= 0.5 {
            probability *= s;
            node *= 2;
        } else {
            probability *= 1.0 - s;
            node = 2 * node + 1;
        }
        path.push(PathStep { node, probability });
    }
    path
}

/// Convex combination `Σ w_l p_l` of the leaf vectors.
pub fn predict(weights: &[f64], leaves: &LeafStore) -> Vec<f64> {
    assert_eq!(weights.len(), leaves.leaf_count(), "one weight per leaf");
    let mut out = vec![0.0; leaves.dim];
    for (l, &w) in weights.iter().enumerate() {
        for (o, &p) in out.iter_mut().zip(leaves.leaf(l)) {
            *o += w * p;
        }
    }
    out
}
