//! Sequential feature extractors expressed on the autodiff tape.

use ndf_autodiff::{Graph, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NdfError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool2d {
        size: usize,
    },
    Relu,
    Flatten,
    Dense {
        inputs: usize,
        outputs: usize,
    },
}

impl LayerSpec {
    /// Shapes of the trainable tensors this layer owns.
    fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
            ],
            LayerSpec::Dense { inputs, outputs } => vec![vec![inputs, outputs], vec![outputs]],
            _ => Vec::new(),
        }
    }

    /// Per-sample output shape, or `None` if `input` is incompatible.
    fn output_shape(&self, input: &[usize]) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let [c, h, w] = input else { return None };
                if *c != in_channels
                    || h + 2 * padding < kernel
                    || w + 2 * padding < kernel
                    || !(1..=2).contains(&stride)
                {
                    return None;
                }
                Some(vec![
                    out_channels,
                    (h + 2 * padding - kernel) / stride + 1,
                    (w + 2 * padding - kernel) / stride + 1,
                ])
            }
            LayerSpec::MaxPool2d { size } => {
                let [c, h, w] = input else { return None };
                (size > 0 && *h >= size && *w >= size).then(|| vec![*c, h / size, w / size])
            }
            LayerSpec::Relu => Some(input.to_vec()),
            LayerSpec::Flatten => Some(vec![input.iter().product()]),
            LayerSpec::Dense { inputs, outputs } => (input == [inputs]).then(|| vec![outputs]),
        }
    }
}

/// A feed-forward extractor: layer list plus flat parameter tensors in layer order.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub params: Vec<Tensor>,
}

impl Network {
    /// Builds a network with Glorot-uniform weights and zero biases.
    pub fn new(
        input_shape: Vec<usize>,
        layers: Vec<LayerSpec>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let shapes = Self::validate(&input_shape, &layers)?;
        let mut params = Vec::new();
        for layer in &layers {
            for (k, shape) in layer.param_shapes().into_iter().enumerate() {
                let t = if k == 0 {
                    let (fan_in, fan_out) = match *layer {
                        LayerSpec::Conv2d {
                            in_channels,
                            out_channels,
                            kernel,
                            ..
                        } => (
                            in_channels * kernel * kernel,
                            out_channels * kernel * kernel,
                        ),
                        LayerSpec::Dense { inputs, outputs } => (inputs, outputs),
                        _ => unreachable!("only conv and dense own parameters"),
                    };
                    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let n = shape.iter().product();
                    Tensor::new(
                        shape,
                        (0..n).map(|_| rng.gen_range(-bound..bound)).collect(),
                    )?
                } else {
                    Tensor::zeros(&shape)
                };
                params.push(t);
            }
        }
        debug_assert!(!shapes.is_empty());
        Ok(Self {
            input_shape,
            layers,
            params,
        })
    }

    /// Rebuilds a network from stored parameters, checking every shape.
    pub fn from_parts(
        input_shape: Vec<usize>,
        layers: Vec<LayerSpec>,
        params: Vec<Tensor>,
    ) -> Result<Self> {
        Self::validate(&input_shape, &layers)?;
        let expected: Vec<Vec<usize>> = layers.iter().flat_map(|l| l.param_shapes()).collect();
        if expected.len() != params.len()
            || expected.iter().zip(&params).any(|(s, p)| *s != p.shape)
        {
            return Err(NdfError::Config(format!(
                "parameter shapes {:?} do not match layers (expected {:?})",
                params.iter().map(|p| &p.shape).collect::<Vec<_>>(),
                expected
            )));
        }
        Ok(Self {
            input_shape,
            layers,
            params,
        })
    }

    /// Per-sample shapes after each layer; the first entry is the input.
    fn validate(input_shape: &[usize], layers: &[LayerSpec]) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![input_shape.to_vec()];
        for layer in layers {
            let next = layer
                .output_shape(shapes.last().expect("non-empty"))
                .ok_or_else(|| {
                    NdfError::Config(format!(
                        "layer {layer:?} cannot consume shape {:?}",
                        shapes.last().unwrap()
                    ))
                })?;
            shapes.push(next);
        }
        match shapes.last().map(Vec::len) {
            Some(1) => Ok(shapes),
            _ => Err(NdfError::Config(
                "extractor must end in a flat feature vector".into(),
            )),
        }
    }

    /// Two conv/relu/pool blocks (8 then 16 channels, 3×3 kernels) and a dense
    /// layer to `outputs` units.
    pub fn shallow_cnn(
        input_shape: [usize; 3],
        outputs: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let [c, h, w] = input_shape;
        let after = |n: usize| ((n - 2) / 2 - 2) / 2;
        if h < 10 || w < 10 {
            return Err(NdfError::Config(format!(
                "shallow CNN needs at least 10×10 inputs, got {h}×{w}"
            )));
        }
        let flat = 16 * after(h) * after(w);
        let layers = vec![
            LayerSpec::Conv2d {
                in_channels: c,
                out_channels: 8,
                kernel: 3,
                stride: 1,
                padding: 0,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool2d { size: 2 },
            LayerSpec::Conv2d {
                in_channels: 8,
                out_channels: 16,
                kernel: 3,
                stride: 1,
                padding: 0,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool2d { size: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense {
                inputs: flat,
                outputs,
            },
        ];
        Self::new(input_shape.to_vec(), layers, rng)
    }

    /// Fully connected network over flattened inputs with relu between layers.
    pub fn mlp(
        input_shape: Vec<usize>,
        hidden: &[usize],
        outputs: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        if input_shape.len() != 1 {
            layers.push(LayerSpec::Flatten);
        }
        let mut width: usize = input_shape.iter().product();
        for &h in hidden {
            layers.push(LayerSpec::Dense {
                inputs: width,
                outputs: h,
            });
            layers.push(LayerSpec::Relu);
            width = h;
        }
        layers.push(LayerSpec::Dense {
            inputs: width,
            outputs,
        });
        Self::new(input_shape, layers, rng)
    }

    pub fn output_len(&self) -> usize {
        let shapes =
            Self::validate(&self.input_shape, &self.layers).expect("validated at construction");
        shapes.last().expect("non-empty")[0]
    }

    pub fn input_size(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Places the parameters on the tape.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    g.param(p.clone())
                } else {
                    g.constant(p.clone())
                }
            })
            .collect()
    }

    /// Runs the layers on a `[N, ..input_shape]` batch, returning `[N, output_len]`.
    pub fn forward(&self, g: &mut Graph, input: Var, params: &[Var]) -> Result<Var> {
        let batch = g.value(input).shape[0];
        let mut x = input;
        let mut next = params.iter();
        for layer in &self.layers {
            x = match *layer {
                LayerSpec::Conv2d {
                    stride, padding, ..
                } => {
                    let k = *next.next().expect("conv kernel");
                    let b = *next.next().expect("conv bias");
                    g.conv2d(x, k, Some(b), stride, padding)?
                }
                LayerSpec::MaxPool2d { size } => g.maxpool2d(x, size)?,
                LayerSpec::Relu => g.relu(x)?,
                LayerSpec::Flatten => {
                    let n = g.value(x).numel() / batch;
                    g.reshape(x, &[batch, n])?
                }
                LayerSpec::Dense { .. } => {
                    let w = *next.next().expect("dense weight");
                    let b = *next.next().expect("dense bias");
                    let z = g.matmul(x, w)?;
                    g.add(z, b)?
                }
            };
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shallow_cnn_on_mnist_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Network::shallow_cnn([1, 28, 28], 511, &mut rng).unwrap();
        assert_eq!(net.output_len(), 511);
        // 8*1*9+8 + 16*8*9+16 + 400*511+511
        assert_eq!(net.param_count(), 80 + 1168 + 400 * 511 + 511);
        let mut g = Graph::new();
        let params = net.bind(&mut g, false);
        let x = g.constant(Tensor::zeros(&[3, 1, 28, 28]));
        let y = net.forward(&mut g, x, &params).unwrap();
        assert_eq!(g.value(y).shape, vec![3, 511]);
    }

    #[test]
    fn glorot_bounds_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::mlp(vec![20], &[], 30, &mut rng).unwrap();
        let bound = (6.0f64 / 50.0).sqrt();
        assert!(net.params[0].data.iter().all(|v| v.abs() < bound));
        assert!(net.params[1].data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_incompatible_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bad = vec![LayerSpec::Dense {
            inputs: 5,
            outputs: 3,
        }];
        assert!(Network::new(vec![4], bad, &mut rng).is_err());
        let unflattened = vec![LayerSpec::Relu];
        assert!(Network::new(vec![1, 4, 4], unflattened, &mut rng).is_err());
    }

    #[test]
    fn from_parts_checks_parameter_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Network::mlp(vec![4], &[3], 2, &mut rng).unwrap();
        let ok = Network::from_parts(
            net.input_shape.clone(),
            net.layers.clone(),
            net.params.clone(),
        );
        assert!(ok.is_ok());
        let mut params = net.params.clone();
        params.pop();
        assert!(Network::from_parts(net.input_shape.clone(), net.layers.clone(), params).is_err());
    }
}
