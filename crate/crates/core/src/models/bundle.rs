//! Model files: a versioned JSON document holding a GBDT and, for bundles,
//! the likelihood table and subflow size it was calibrated for.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::gbdt::{GbdtModel, GbdtParams, Tree};
use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::likelihood::{ConfusionCounts, LikelihoodTable};

pub const FORMAT_VERSION: u32 = 1;
const MODEL_TYPE: &str = "gbdt";

/// Subflow size, table and the counts it was fit from.
type Calibration = (usize, LikelihoodTable, ConfusionCounts);

/// Everything `classify` needs to turn a capture into flow decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub model: GbdtModel,
    pub subflow_size: usize,
    pub likelihood_table: LikelihoodTable,
    pub calibration_counts: ConfusionCounts,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    format_version: u32,
    model_type: String,
    schema: FeatureSet,
    params: GbdtParams,
    base_score: f64,
    learning_rate: f64,
    trees: Vec<Tree>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    subflow_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    likelihood_table: Option<LikelihoodTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    calibration_counts: Option<ConfusionCounts>,
}

impl ModelDocument {
    fn from_model(model: &GbdtModel) -> Self {
        ModelDocument {
            format_version: FORMAT_VERSION,
            model_type: MODEL_TYPE.to_string(),
            schema: model.schema,
            params: model.params,
            base_score: model.base_score,
            learning_rate: model.learning_rate,
            trees: model.trees.clone(),
            subflow_size: None,
            likelihood_table: None,
            calibration_counts: None,
        }
    }

    fn into_model(self) -> Result<(GbdtModel, Option<Calibration>)> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.model_type != MODEL_TYPE {
            return Err(Error::ModelFormat(format!(
                "unsupported model_type {:?}",
                self.model_type
            )));
        }
        if !self.base_score.is_finite() || !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::ModelFormat("non-finite base_score or learning_rate".into()));
        }
        for (i, tree) in self.trees.iter().enumerate() {
            tree.validate(self.schema.arity())
                .map_err(|e| Error::ModelFormat(format!("tree {i}: {e}")))?;
            if tree.depth() > self.params.max_depth {
                return Err(Error::ModelFormat(format!(
                    "tree {i} deeper than max_depth {}",
                    self.params.max_depth
                )));
            }
        }
        let extras = match (self.subflow_size, self.likelihood_table, self.calibration_counts) {
            (Some(n), Some(t), Some(c)) => Some((n, t, c)),
            (None, None, None) => None,
            _ => {
                return Err(Error::ModelFormat(
                    "bundle fields must appear together".into(),
                ))
            }
        };
        let model = GbdtModel {
            schema: self.schema,
            params: self.params,
            base_score: self.base_score,
            learning_rate: self.learning_rate,
            trees: self.trees,
        };
        Ok((model, extras))
    }
}

fn write_doc(doc: &ModelDocument, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(doc)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_doc(path: &Path) -> Result<ModelDocument> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::ModelFormat(e.to_string()))
}

impl ModelBundle {
    pub fn to_json(&self) -> Result<String> {
        let mut doc = ModelDocument::from_model(&self.model);
        doc.subflow_size = Some(self.subflow_size);
        doc.likelihood_table = Some(self.likelihood_table);
        doc.calibration_counts = Some(self.calibration_counts);
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument =
            serde_json::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
        match doc.into_model()? {
            (model, Some((subflow_size, likelihood_table, calibration_counts))) => {
                Ok(ModelBundle {
                    model,
                    subflow_size,
                    likelihood_table,
                    calibration_counts,
                })
            }
            (_, None) => Err(Error::ModelFormat(
                "model file has no likelihood table; train a bundle first".into(),
            )),
        }
    }
}

pub fn save_model(model: &GbdtModel, path: impl AsRef<Path>) -> Result<()> {
    write_doc(&ModelDocument::from_model(model), path.as_ref())
}

/// Loads the GBDT from a model file or a bundle.
pub fn load_model(path: impl AsRef<Path>) -> Result<GbdtModel> {
    Ok(read_doc(path.as_ref())?.into_model()?.0)
}

pub fn save_bundle(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, bundle.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<ModelBundle> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ModelBundle::from_json(&text)
}
