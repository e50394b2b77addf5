//! Eager reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records every primitive as it is evaluated. [`Graph::backward`]
//! sweeps the tape in reverse from a scalar root and leaves gradients on every
//! tensor created with `requires_grad`, including inputs, which is what input
//! saliency needs.
//!
//! ```
//! use ndf_autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::scalar(3.0));
//! let y = g.mul(x, x).unwrap();
//! g.backward(y).unwrap();
//! assert_eq!(g.grad(x).unwrap(), &[6.0]);
//! ```

mod error;
mod graph;
mod kernels;
mod tensor;

pub use error::{AutodiffError, Result};
pub use graph::{Gradient, Graph, GraphNode, NodeOp, PrimitiveKind, Var};
pub use kernels::sigmoid;
pub use tensor::Tensor;
