//! Losses, Adam, and the training loops.
//!
//! Classification alternates between two phases: Adam steps on the extractor
//! with the leaves frozen, and periodic multiplicative leaf updates over a
//! buffer of recent batches. Regression trains extractor and leaf vectors
//! jointly by gradient descent on the squared loss.

use std::collections::VecDeque;

use ndf_autodiff::{Graph, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ClassificationSet, RegressionSet};
use crate::error::{NdfError, Result};
use crate::forest::{Forest, GradTargets, PROB_FLOOR};
use crate::tree::LeafMode;

/// Mean negative log-likelihood of `labels` under `[N, C]` probabilities.
pub fn nll_loss(g: &mut Graph, predictions: Var, labels: &[usize]) -> Result<Var> {
    let shape = g.value(predictions).shape.clone();
    let (n, c) = match shape[..] {
        [n, c] if n == labels.len() => (n, c),
        _ => {
            return Err(NdfError::Config(format!(
                "predictions {shape:?} do not match {} labels",
                labels.len()
            )))
        }
    };
    let mut onehot = vec![0.0; n * c];
    for (i, &y) in labels.iter().enumerate() {
        onehot[i * c + y] = 1.0;
    }
    let mask = g.constant(Tensor::new(vec![n, c], onehot)?);
    let logp = g.log(predictions, PROB_FLOOR)?;
    let picked = g.mul(logp, mask)?;
    let total = g.sum(picked)?;
    Ok(g.scale(total, -1.0 / n as f64)?)
}

/// Half the batch-mean squared Euclidean distance between `[N, D]` tensors.
pub fn squared_loss(g: &mut Graph, predictions: Var, targets: Var) -> Result<Var> {
    let n = g.value(predictions).shape[0];
    if g.value(predictions).shape != g.value(targets).shape {
        return Err(NdfError::Config(format!(
            "prediction shape {:?} differs from target shape {:?}",
            g.value(predictions).shape,
            g.value(targets).shape
        )));
    }
    let diff = g.sub(predictions, targets)?;
    let sq = g.mul(diff, diff)?;
    let total = g.sum(sq)?;
    Ok(g.scale(total, 0.5 / n as f64)?)
}

/// Per-parameter Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(shapes: &[usize], lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_tensors(params: &[Tensor], lr: f64) -> Self {
        Self::new(&params.iter().map(Tensor::numel).collect::<Vec<_>>(), lr)
    }

    /// Bias-corrected Adam update. Nothing is modified when a gradient is
    /// non-finite; the caller gets `Err(())`.
    pub fn step(
        &mut self,
        params: &mut [&mut [f64]],
        grads: &[&[f64]],
    ) -> std::result::Result<(), ()> {
        assert_eq!(
            params.len(),
            self.m.len(),
            "one moment buffer per parameter"
        );
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(());
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: f64,
    /// Batches between classification leaf updates.
    pub leaf_update_period: usize,
    /// Multiplicative update sweeps per leaf update.
    pub leaf_update_iterations: usize,
    /// Adam learning rate for regression leaf vectors.
    pub leaf_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            seed: 0,
            lr: 1e-3,
            leaf_update_period: 50,
            leaf_update_iterations: 20,
            leaf_lr: 1e-2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.leaf_update_period == 0 || self.leaf_update_iterations == 0
        {
            return Err(NdfError::Config(
                "batch size, leaf update period and iterations must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.leaf_lr > 0.0) {
            return Err(NdfError::Config("learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// One JSON-lines record per epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accuracy: Option<f64>,
}

/// Outcome of one gradient step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub correct: usize,
    /// Sum of absolute leaf gradients seen on the tape (zero when leaves are frozen).
    pub leaf_grad_mass: f64,
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        })
        .0
}

/// Extractor-only Adam step on one classification batch (leaves stay constant).
pub fn classification_step(
    forest: &mut Forest,
    adam: &mut AdamState,
    data: &ClassificationSet,
    batch: &[usize],
) -> std::result::Result<StepOutcome, StepError> {
    let mut g = Graph::new();
    let grads = GradTargets {
        input: false,
        extractor: true,
        leaves: false,
    };
    let fg = forest.forward(&mut g, data.inputs.batch(batch), grads)?;
    let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
    let loss = nll_loss(&mut g, fg.prediction, &labels)?;
    g.backward(loss)?;
    let loss_value = g.value(loss).data[0];
    if !loss_value.is_finite() {
        return Err(StepError::NonFinite("loss"));
    }
    let pred = g.value(fg.prediction);
    let c = forest.output_dim();
    let correct = labels
        .iter()
        .enumerate()
        .filter(|(i, &y)| argmax(&pred.data[i * c..(i + 1) * c]) == y)
        .count();
    let leaf_grad_mass = fg
        .leaves
        .iter()
        .filter_map(|&v| g.grad(v))
        .flat_map(|gr| gr.iter())
        .map(|v| v.abs())
        .sum();
    let zeros: Vec<Vec<f64>> = fg
        .params
        .iter()
        .map(|&p| vec![0.0; g.value(p).numel()])
        .collect();
    let grad_refs: Vec<&[f64]> = fg
        .params
        .iter()
        .zip(&zeros)
        .map(|(&p, z)| g.grad(p).unwrap_or(z))
        .collect();
    let mut param_refs: Vec<&mut [f64]> = forest
        .extractor
        .params
        .iter_mut()
        .map(|t| t.data.as_mut_slice())
        .collect();
    adam.step(&mut param_refs, &grad_refs)
        .map_err(|_| StepError::NonFinite("gradient"))?;
    Ok(StepOutcome {
        loss: loss_value,
        correct,
        leaf_grad_mass,
    })
}

/// Joint Adam step on extractor parameters and leaf vectors for one regression batch.
pub fn regression_step(
    forest: &mut Forest,
    adam: &mut AdamState,
    leaf_adam: &mut AdamState,
    data: &RegressionSet,
    batch: &[usize],
) -> std::result::Result<f64, StepError> {
    let mut g = Graph::new();
    let grads = GradTargets {
        input: false,
        extractor: true,
        leaves: true,
    };
    let fg = forest.forward(&mut g, data.inputs.batch(batch), grads)?;
    let targets = g.constant(data.target_batch(batch));
    let loss = squared_loss(&mut g, fg.prediction, targets)?;
    g.backward(loss)?;
    let loss_value = g.value(loss).data[0];
    if !loss_value.is_finite() {
        return Err(StepError::NonFinite("loss"));
    }
    let collect = |vars: &[Var]| -> Vec<Vec<f64>> {
        vars.iter()
            .map(|&v| {
                g.grad(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; g.value(v).numel()])
            })
            .collect()
    };
    let param_grads = collect(&fg.params);
    let leaf_grads = collect(&fg.leaves);
    {
        let refs: Vec<&[f64]> = param_grads.iter().map(Vec::as_slice).collect();
        let mut params: Vec<&mut [f64]> = forest
            .extractor
            .params
            .iter_mut()
            .map(|t| t.data.as_mut_slice())
            .collect();
        adam.step(&mut params, &refs)
            .map_err(|_| StepError::NonFinite("gradient"))?;
    }
    let refs: Vec<&[f64]> = leaf_grads.iter().map(Vec::as_slice).collect();
    let mut leaves: Vec<&mut [f64]> = forest
        .trees
        .iter_mut()
        .map(|t| t.leaves.values.as_mut_slice())
        .collect();
    leaf_adam
        .step(&mut leaves, &refs)
        .map_err(|_| StepError::NonFinite("leaf gradient"))?;
    Ok(loss_value)
}

/// Step-level failure, promoted to [`NdfError`] with epoch/batch context by the loops.
#[derive(Debug)]
pub enum StepError {
    NonFinite(&'static str),
    Other(NdfError),
}

impl<E: Into<NdfError>> From<E> for StepError {
    fn from(e: E) -> Self {
        StepError::Other(e.into())
    }
}

impl StepError {
    fn at(self, epoch: usize, batch: usize) -> NdfError {
        match self {
            StepError::NonFinite(what) => NdfError::NonFinite { what, epoch, batch },
            StepError::Other(e) => e,
        }
    }
}

fn shuffled_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

pub fn train_classifier(
    forest: &mut Forest,
    data: &ClassificationSet,
    config: &TrainConfig,
) -> Result<Vec<EpochMetrics>> {
    train_classifier_with(forest, data, config, |_| {})
}

/// Alternating training; `on_epoch` sees each epoch's metrics as they land.
pub fn train_classifier_with(
    forest: &mut Forest,
    data: &ClassificationSet,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    config.validate()?;
    if forest.mode() != LeafMode::Classification {
        return Err(NdfError::Config(
            "train_classifier needs a classification forest".into(),
        ));
    }
    if data.is_empty() {
        return Err(NdfError::EmptyDataset);
    }
    if data.classes != forest.output_dim() {
        return Err(NdfError::Config(format!(
            "dataset has {} classes, forest predicts {}",
            data.classes,
            forest.output_dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::for_tensors(&forest.extractor.params, config.lr);
    let mut recent: VecDeque<Vec<usize>> = VecDeque::with_capacity(config.leaf_update_period);
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let batches = shuffled_batches(data.len(), config.batch_size, &mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, batch) in batches.iter().enumerate() {
            if step % config.leaf_update_period == 0 {
                // The very first update has no history yet, so it uses the
                // batches about to be seen.
                let buffer: Vec<usize> = if recent.is_empty() {
                    batches
                        .iter()
                        .take(config.leaf_update_period)
                        .flatten()
                        .copied()
                        .collect()
                } else {
                    recent.iter().flatten().copied().collect()
                };
                forest.leaf_update_classification(
                    &data.inputs,
                    &data.labels,
                    &buffer,
                    config.leaf_update_iterations,
                )?;
            }
            let out =
                classification_step(forest, &mut adam, data, batch).map_err(|e| e.at(epoch, b))?;
            loss_sum += out.loss * batch.len() as f64;
            correct += out.correct;
            if recent.len() == config.leaf_update_period {
                recent.pop_front();
            }
            recent.push_back(batch.clone());
            step += 1;
        }
        let m = EpochMetrics {
            epoch,
            loss: loss_sum / data.len() as f64,
            accuracy: Some(correct as f64 / data.len() as f64),
        };
        on_epoch(&m);
        metrics.push(m);
    }
    Ok(metrics)
}

pub fn train_regressor(
    forest: &mut Forest,
    data: &RegressionSet,
    config: &TrainConfig,
) -> Result<Vec<EpochMetrics>> {
    train_regressor_with(forest, data, config, |_| {})
}

pub fn train_regressor_with(
    forest: &mut Forest,
    data: &RegressionSet,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    config.validate()?;
    if forest.mode() != LeafMode::Regression {
        return Err(NdfError::Config(
            "train_regressor needs a regression forest".into(),
        ));
    }
    if data.is_empty() {
        return Err(NdfError::EmptyDataset);
    }
    if data.dim != forest.output_dim() {
        return Err(NdfError::Config(format!(
            "targets have dimension {}, forest predicts {}",
            data.dim,
            forest.output_dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::for_tensors(&forest.extractor.params, config.lr);
    let leaf_sizes: Vec<usize> = forest.trees.iter().map(|t| t.leaves.values.len()).collect();
    let mut leaf_adam = AdamState::new(&leaf_sizes, config.leaf_lr);
    let mut metrics = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut loss_sum = 0.0;
        for (b, batch) in shuffled_batches(data.len(), config.batch_size, &mut rng)
            .iter()
            .enumerate()
        {
            let loss = regression_step(forest, &mut adam, &mut leaf_adam, data, batch)
                .map_err(|e| e.at(epoch, b))?;
            loss_sum += loss * batch.len() as f64;
        }
        let m = EpochMetrics {
            epoch,
            loss: loss_sum / data.len() as f64,
            accuracy: None,
        };
        on_epoch(&m);
        metrics.push(m);
    }
    Ok(metrics)
}

/// Classification accuracy of the forest on `data`.
pub fn accuracy(forest: &Forest, data: &ClassificationSet) -> Result<f64> {
    if data.is_empty() {
        return Err(NdfError::EmptyDataset);
    }
    let c = forest.output_dim();
    let preds = forest.predict_samples(&data.inputs)?;
    let correct = data
        .labels
        .iter()
        .enumerate()
        .filter(|(i, &y)| argmax(&preds[i * c..(i + 1) * c]) == y)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Mean of `½‖P − y‖²` over `data`.
pub fn regression_loss(forest: &Forest, data: &RegressionSet) -> Result<f64> {
    if data.is_empty() {
        return Err(NdfError::EmptyDataset);
    }
    let preds = forest.predict_samples(&data.inputs)?;
    let total: f64 = preds
        .iter()
        .zip(&data.targets)
        .map(|(p, y)| (p - y) * (p - y))
        .sum();
    Ok(0.5 * total / data.len() as f64)
}
