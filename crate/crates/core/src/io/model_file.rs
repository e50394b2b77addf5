//! JSON model files with a version field and a SHA-256 checksum over the model body.

use std::path::Path;

use ndf_autodiff::Tensor;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::cascade::{CascadeModel, Shape};
use crate::error::{NdfError, Result};
use crate::forest::{Forest, Tree};
use crate::network::{LayerSpec, Network};
use crate::tree::{LeafMode, LeafStore, SplitAssignment, TreeTopology};

pub const FORMAT_VERSION: u32 = 1;

/// Provenance stored next to the parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    /// `"mnist"` or `"synth"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct TopologyDoc {
    trees: usize,
    depth: usize,
}

#[derive(Serialize, Deserialize)]
struct ParamDoc {
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ExtractorDoc {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    params: Vec<ParamDoc>,
}

#[derive(Serialize, Deserialize)]
struct ForestDoc {
    mode: LeafMode,
    topology: TopologyDoc,
    /// Per tree, the extractor unit of each splitting node.
    assignment: Vec<Vec<usize>>,
    extractor: ExtractorDoc,
    leaf_dim: usize,
    /// Per tree, leaf vectors concatenated left to right.
    leaves: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ForestBody {
    #[serde(flatten)]
    forest: ForestDoc,
    training: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct CascadeBody {
    mean_shape: Shape,
    patch_side: usize,
    stages: Vec<ForestDoc>,
    training: TrainingMeta,
}

fn forest_doc(forest: &Forest) -> Result<ForestDoc> {
    let depth = forest.trees[0].topology.depth();
    if forest.trees.iter().any(|t| t.topology.depth() != depth) {
        return Err(NdfError::Export("all trees must share one depth".into()));
    }
    Ok(ForestDoc {
        mode: forest.mode(),
        topology: TopologyDoc {
            trees: forest.trees.len(),
            depth,
        },
        assignment: forest
            .trees
            .iter()
            .map(|t| t.assignment.units.clone())
            .collect(),
        extractor: ExtractorDoc {
            input_shape: forest.extractor.input_shape.clone(),
            layers: forest.extractor.layers.clone(),
            params: forest
                .extractor
                .params
                .iter()
                .map(|p| ParamDoc {
                    shape: p.shape.clone(),
                    values: p.data.clone(),
                })
                .collect(),
        },
        leaf_dim: forest.output_dim(),
        leaves: forest
            .trees
            .iter()
            .map(|t| t.leaves.values.clone())
            .collect(),
    })
}

fn forest_from_doc(doc: ForestDoc) -> Result<Forest> {
    let topology = TreeTopology::new(doc.topology.depth)?;
    if doc.assignment.len() != doc.topology.trees || doc.leaves.len() != doc.topology.trees {
        return Err(NdfError::ModelFormat(format!(
            "topology declares {} trees but file has {} assignments and {} leaf arrays",
            doc.topology.trees,
            doc.assignment.len(),
            doc.leaves.len()
        )));
    }
    let params = doc
        .extractor
        .params
        .into_iter()
        .map(|p| Tensor::new(p.shape, p.values))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let extractor = Network::from_parts(doc.extractor.input_shape, doc.extractor.layers, params)?;
    let trees = doc
        .assignment
        .into_iter()
        .zip(doc.leaves)
        .map(|(units, values)| {
            if units.len() != topology.split_count()
                || values.len() != topology.leaf_count() * doc.leaf_dim
            {
                return Err(NdfError::ModelFormat(
                    "tree arrays do not match the declared depth".into(),
                ));
            }
            Ok(Tree {
                topology,
                assignment: SplitAssignment { units },
                leaves: LeafStore {
                    mode: doc.mode,
                    dim: doc.leaf_dim,
                    values,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Forest::from_parts(extractor, trees)
}

fn checksum(body: &Value) -> String {
    // serde_json maps are sorted, so this serialization is canonical
    let digest = Sha256::digest(body.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn envelope(kind: &str, body: impl Serialize) -> Result<String> {
    let body = serde_json::to_value(body)?;
    let doc = serde_json::json!({
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "checksum": checksum(&body),
        "model": body,
    });
    Ok(doc.to_string())
}

fn open_envelope(text: &str, kind: &str) -> Result<Value> {
    let mut doc: Value = serde_json::from_str(text)?;
    let version = doc
        .get("format_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| NdfError::ModelFormat("missing format_version".into()))?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(NdfError::UnsupportedVersion {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            supported: FORMAT_VERSION,
        });
    }
    let found = doc
        .get("kind")
        .and_then(Value::as_str)
        .unwrap_or("<missing>");
    if found != kind {
        return Err(NdfError::ModelFormat(format!(
            "expected a {kind} model, file holds {found}"
        )));
    }
    let stored = doc
        .get("checksum")
        .and_then(Value::as_str)
        .ok_or_else(|| NdfError::ModelFormat("missing checksum".into()))?
        .to_string();
    let body = doc
        .get_mut("model")
        .map(Value::take)
        .ok_or_else(|| NdfError::ModelFormat("missing model body".into()))?;
    let computed = checksum(&body);
    if computed != stored {
        return Err(NdfError::Checksum { stored, computed });
    }
    Ok(body)
}

pub fn forest_to_json(forest: &Forest, meta: &TrainingMeta) -> Result<String> {
    envelope(
        "forest",
        ForestBody {
            forest: forest_doc(forest)?,
            training: meta.clone(),
        },
    )
}

pub fn forest_from_json(text: &str) -> Result<(Forest, TrainingMeta)> {
    let body: ForestBody = serde_json::from_value(open_envelope(text, "forest")?)?;
    Ok((forest_from_doc(body.forest)?, body.training))
}

pub fn save_model(forest: &Forest, meta: &TrainingMeta, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, forest_to_json(forest, meta)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(Forest, TrainingMeta)> {
    forest_from_json(&std::fs::read_to_string(path)?)
}

pub fn cascade_to_json(model: &CascadeModel, meta: &TrainingMeta) -> Result<String> {
    envelope(
        "cascade",
        CascadeBody {
            mean_shape: model.mean_shape.clone(),
            patch_side: model.patch_side,
            stages: model.stages.iter().map(forest_doc).collect::<Result<_>>()?,
            training: meta.clone(),
        },
    )
}

pub fn cascade_from_json(text: &str) -> Result<(CascadeModel, TrainingMeta)> {
    let body: CascadeBody = serde_json::from_value(open_envelope(text, "cascade")?)?;
    let model = CascadeModel {
        stages: body
            .stages
            .into_iter()
            .map(forest_from_doc)
            .collect::<Result<_>>()?,
        mean_shape: body.mean_shape,
        patch_side: body.patch_side,
    };
    model.validate()?;
    Ok((model, body.training))
}

pub fn save_cascade(
    model: &CascadeModel,
    meta: &TrainingMeta,
    path: impl AsRef<Path>,
) -> Result<()> {
    std::fs::write(path, cascade_to_json(model, meta)?)?;
    Ok(())
}

pub fn load_cascade(path: impl AsRef<Path>) -> Result<(CascadeModel, TrainingMeta)> {
    cascade_from_json(&std::fs::read_to_string(path)?)
}
