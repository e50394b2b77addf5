//! In-memory datasets: flat sample storage plus labels or regression targets.

use ndf_autodiff::Tensor;

use crate::error::{NdfError, Result};

/// `len` samples of identical `shape`, stored back to back.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Samples {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let size: usize = shape.iter().product();
        if size == 0 || data.len() % size != 0 {
            return Err(NdfError::Config(format!(
                "{} values cannot be split into samples of shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn sample_size(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.sample_size()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let n = self.sample_size();
        &self.data[i * n..(i + 1) * n]
    }

    /// Stacks the selected samples into a `[indices.len(), ..shape]` tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.sample_size());
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.shape);
        Tensor::new(shape, data).expect("batch shape matches its data")
    }

    /// Keeps the first `n` samples.
    pub fn truncate(&mut self, n: usize) {
        let size = self.sample_size();
        self.data.truncate(n * size);
    }
}

#[derive(Clone, Debug)]
pub struct ClassificationSet {
    pub inputs: Samples,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl ClassificationSet {
    pub fn new(inputs: Samples, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(NdfError::Config(format!(
                "{} samples but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(NdfError::Config(format!(
                "label {bad} outside {classes} classes"
            )));
        }
        Ok(Self {
            inputs,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn truncate(&mut self, n: usize) {
        self.inputs.truncate(n);
        self.labels.truncate(n);
    }
}

#[derive(Clone, Debug)]
pub struct RegressionSet {
    pub inputs: Samples,
    /// `len × dim` targets, row-major.
    pub targets: Vec<f64>,
    pub dim: usize,
}

impl RegressionSet {
    pub fn new(inputs: Samples, targets: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || targets.len() != inputs.len() * dim {
            return Err(NdfError::Config(format!(
                "{} samples need {} targets of dimension {dim}, got {}",
                inputs.len(),
                inputs.len() * dim,
                targets.len()
            )));
        }
        Ok(Self {
            inputs,
            targets,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.dim..(i + 1) * self.dim]
    }

    pub fn target_batch(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.target(i));
        }
        Tensor::new(vec![indices.len(), self.dim], data).expect("target batch shape")
    }
}

/// Maps 8-bit intensities to `[-0.5, 0.5]`.
pub fn normalize_pixel(v: u8) -> f64 {
    f64::from(v) / 255.0 - 0.5
}
