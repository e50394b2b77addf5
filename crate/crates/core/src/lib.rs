//! Deep neural decision forests on a small reverse-mode autodiff engine.
//!
//! A feature extractor (CNN or MLP) drives the splitting nodes of one or
//! more soft binary trees. Every input reaches every leaf with a path weight,
//! and the prediction is the weight-averaged leaf content. On top of that
//! sit decision saliency maps (input gradients of individual routing
//! probabilities), score histograms, and a cascade of regression forests for
//! landmark localization.
//!
//! ```
//! use ndf::tree::{leaf_weights, TreeTopology};
//!
//! let top = TreeTopology::new(2).unwrap();
//! let w = leaf_weights(top, &[0.6, 0.8, 0.3]);
//! assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
//! ```

pub mod cascade;
pub mod data;
pub mod error;
pub mod forest;
pub mod io;
pub mod network;
pub mod saliency;
pub mod training;
pub mod tree;

pub use ndf_autodiff as autodiff;

pub use cascade::{CascadeConfig, CascadeModel, CascadeTrace, GrayImage, LandmarkSet, Shape};
pub use data::{ClassificationSet, RegressionSet, Samples};
pub use error::{NdfError, Result};
pub use forest::{AssignmentScheme, Forest, GradTargets, LeafInit, Tree};
pub use network::{LayerSpec, Network};
pub use saliency::{compute_dsm, dsm_along_path, normalize_dsm, SaliencyMap, ScoreHistogram};
pub use training::{AdamState, EpochMetrics, TrainConfig};
pub use tree::{LeafMode, LeafStore, PathStep, SplitAssignment, TreeTopology};
