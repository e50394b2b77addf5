//! Eager computation graph with a recorded tape and a reverse sweep.

use crate::error::{AutodiffError, Result};
use crate::kernels;
use crate::tensor::Tensor;

/// The closed set of differentiable primitives.
#[derive(Clone, Debug, PartialEq)]
pub enum PrimitiveKind {
    /// Elementwise sum; the right operand may broadcast over trailing axes.
    Add,
    Sub,
    /// Elementwise product, same broadcasting rule as `Add`.
    Mul,
    MatMul,
    /// `[N,C,H,W] * [O,C,KH,KW] (+ [O])`, zero padding.
    Conv2d {
        stride: usize,
        padding: usize,
    },
    /// Non-overlapping window, stride equal to `size`.
    MaxPool2d {
        size: usize,
    },
    Relu,
    Sigmoid,
    /// `ln(max(x, floor))`; zero derivative where the floor is active.
    Log {
        floor: f64,
    },
    Sum,
    Reshape {
        shape: Vec<usize>,
    },
    /// Gathers `indices` along `axis` (a contiguous range is the common case).
    Slice {
        axis: usize,
        indices: Vec<usize>,
    },
    Concat {
        axis: usize,
    },
    Scale {
        factor: f64,
    },
}

impl PrimitiveKind {
    pub fn name(&self) -> &'static str {
        match self {
            PrimitiveKind::Add => "add",
            PrimitiveKind::Sub => "sub",
            PrimitiveKind::Mul => "mul",
            PrimitiveKind::MatMul => "matmul",
            PrimitiveKind::Conv2d { .. } => "conv2d",
            PrimitiveKind::MaxPool2d { .. } => "maxpool2d",
            PrimitiveKind::Relu => "relu",
            PrimitiveKind::Sigmoid => "sigmoid",
            PrimitiveKind::Log { .. } => "log",
            PrimitiveKind::Sum => "sum",
            PrimitiveKind::Reshape { .. } => "reshape",
            PrimitiveKind::Slice { .. } => "slice",
            PrimitiveKind::Concat { .. } => "concat",
            PrimitiveKind::Scale { .. } => "scale",
        }
    }
}

/// Handle to a tensor recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NodeOp {
    /// Externally supplied tensor (input, parameter or constant).
    Input,
    Primitive(PrimitiveKind),
}

#[derive(Clone, Debug)]
pub struct GraphNode {
    pub op: NodeOp,
    pub parents: Vec<Var>,
    pub output: Tensor,
    saved: Option<Vec<usize>>,
}

/// Gradient lookup result. `reached` is false when the reverse sweep never
/// touched `wrt`; the tensor is then all zeros.
#[derive(Clone, Debug)]
pub struct Gradient {
    pub tensor: Tensor,
    pub reached: bool,
}

/// Append-only tape. Nodes are stored in creation order, which is a valid
/// topological order since parents always precede children.
#[derive(Default, Clone, Debug)]
pub struct Graph {
    nodes: Vec<GraphNode>,
    last_root: Option<Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    /// Records an external tensor. Any stale gradient on it is dropped.
    pub fn input(&mut self, mut tensor: Tensor) -> Var {
        tensor.grad = None;
        debug_assert!(tensor.check());
        self.nodes.push(GraphNode {
            op: NodeOp::Input,
            parents: Vec::new(),
            output: tensor,
            saved: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a tensor that never receives a gradient.
    pub fn constant(&mut self, mut tensor: Tensor) -> Var {
        tensor.requires_grad = false;
        self.input(tensor)
    }

    /// Records a differentiation target.
    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.input(tensor.with_grad())
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].output
    }

    pub fn try_value(&self, v: Var) -> Result<&Tensor> {
        self.nodes
            .get(v.0)
            .map(|n| &n.output)
            .ok_or(AutodiffError::UnknownVar(v.0))
    }

    /// Evaluates `kind` eagerly on `inputs` and appends the result.
    pub fn apply(&mut self, kind: PrimitiveKind, inputs: &[Var]) -> Result<Var> {
        for v in inputs {
            if v.0 >= self.nodes.len() {
                return Err(AutodiffError::UnknownVar(v.0));
            }
        }
        let values: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].output).collect();
        let (mut output, saved) = kernels::forward(&kind, &values)?;
        output.requires_grad = values.iter().any(|t| t.requires_grad);
        self.nodes.push(GraphNode {
            op: NodeOp::Primitive(kind),
            parents: inputs.to_vec(),
            output,
            saved,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(PrimitiveKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(PrimitiveKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(PrimitiveKind::Mul, &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(PrimitiveKind::MatMul, &[a, b])
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let mut inputs = vec![x, kernel];
        inputs.extend(bias);
        self.apply(PrimitiveKind::Conv2d { stride, padding }, &inputs)
    }

    pub fn maxpool2d(&mut self, x: Var, size: usize) -> Result<Var> {
        self.apply(PrimitiveKind::MaxPool2d { size }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.apply(PrimitiveKind::Relu, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.apply(PrimitiveKind::Sigmoid, &[x])
    }

    pub fn log(&mut self, x: Var, floor: f64) -> Result<Var> {
        self.apply(PrimitiveKind::Log { floor }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.apply(PrimitiveKind::Sum, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.apply(
            PrimitiveKind::Reshape {
                shape: shape.to_vec(),
            },
            &[x],
        )
    }

    pub fn slice(&mut self, x: Var, axis: usize, indices: Vec<usize>) -> Result<Var> {
        self.apply(PrimitiveKind::Slice { axis, indices }, &[x])
    }

    pub fn slice_range(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.slice(x, axis, (start..start + len).collect())
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        self.apply(PrimitiveKind::Concat { axis }, xs)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.apply(PrimitiveKind::Scale { factor }, &[x])
    }

    /// Clears every gradient buffer on the tape.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.output.grad = None;
        }
        self.last_root = None;
    }

    /// Reverse sweep from a scalar `root`. Gradients accumulate into existing
    /// buffers, so call [`Graph::zero_grad`] between independent sweeps.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let r = self.try_value(root)?;
        if !r.is_scalar() {
            return Err(AutodiffError::NonScalarRoot(r.shape.clone()));
        }
        let live = r.requires_grad;
        self.last_root = Some(root);
        if !live {
            return Ok(());
        }
        let mut cot: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        cot[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let Some(g) = cot[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let NodeOp::Primitive(kind) = &node.op {
                let need: Vec<bool> = node
                    .parents
                    .iter()
                    .map(|p| self.nodes[p.0].output.requires_grad)
                    .collect();
                if need.iter().any(|&b| b) {
                    let inputs: Vec<&Tensor> = node
                        .parents
                        .iter()
                        .map(|p| &self.nodes[p.0].output)
                        .collect();
                    let grads = kernels::vjp(
                        kind,
                        &inputs,
                        &node.output,
                        node.saved.as_deref(),
                        &g,
                        &need,
                    );
                    for (p, pg) in node.parents.iter().zip(grads) {
                        if let Some(pg) = pg {
                            match &mut cot[p.0] {
                                Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                                slot => *slot = Some(pg),
                            }
                        }
                    }
                }
            }
            let out = &mut self.nodes[idx].output;
            match &mut out.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Gradient of the last backward root with respect to `wrt`, shaped like `wrt`.
    pub fn grad_of(&self, target: Var, wrt: Var) -> Result<Gradient> {
        if self.last_root != Some(target) {
            return Err(AutodiffError::NotDifferentiated(target.0));
        }
        let t = self.try_value(wrt)?;
        Ok(Gradient {
            reached: t.grad.is_some(),
            tensor: t.grad_tensor(),
        })
    }

    /// Raw gradient buffer of `v`, if the last sweep reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes.get(v.0).and_then(|n| n.output.grad.as_deref())
    }

    /// Recomputes every primitive output from the recorded inputs.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                NodeOp::Input => node.output.clone(),
                NodeOp::Primitive(kind) => {
                    let inputs: Vec<&Tensor> = node.parents.iter().map(|p| &values[p.0]).collect();
                    kernels::forward(kind, &inputs)?.0
                }
            };
            values.push(v);
        }
        Ok(values)
    }
}
