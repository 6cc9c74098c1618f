//! Subflow classifiers. The gradient-boosted tree ensemble is the one used
//! downstream; Gaussian naive Bayes and KNN are kept as baselines.
//!
//! Scores are always the probability of class `unknown`.

mod bundle;
mod gbdt;
mod knn;
mod naive_bayes;

pub use bundle::{load_bundle, load_model, save_bundle, save_model, ModelBundle, FORMAT_VERSION};
pub use gbdt::{loss_curve, predict_gbdt, train_gbdt, GbdtModel, GbdtParams, Tree, TreeNode};
pub use knn::{knn_predict, Knn};
pub use naive_bayes::{train_predict_nb, GaussianNb};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureSet, FeatureVector};
use crate::flow::ClassLabel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubflowPrediction {
    pub label: ClassLabel,
    /// Probability of `unknown`.
    pub score: f64,
}

impl SubflowPrediction {
    pub fn from_score(score: f64) -> Self {
        let label = if score >= 0.5 {
            ClassLabel::Unknown
        } else {
            ClassLabel::Known
        };
        SubflowPrediction { label, score }
    }
}

pub trait SubflowClassifier {
    fn schema(&self) -> FeatureSet;

    /// Scores a raw feature row laid out per [`Self::schema`].
    fn predict_row(&self, row: &[f64]) -> SubflowPrediction;

    fn predict(&self, v: &FeatureVector) -> Result<SubflowPrediction> {
        if v.schema != self.schema() {
            return Err(Error::SchemaMismatch {
                expected: self.schema(),
                found: v.schema,
            });
        }
        if v.values.len() != v.schema.arity() {
            return Err(Error::invalid(format!(
                "feature vector has {} values, {} expects {}",
                v.values.len(),
                v.schema,
                v.schema.arity()
            )));
        }
        Ok(self.predict_row(&v.values))
    }
}

/// Row-major labeled feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub schema: FeatureSet,
    values: Vec<f64>,
    labels: Vec<ClassLabel>,
}

impl LabeledDataset {
    pub fn new(schema: FeatureSet) -> Self {
        LabeledDataset {
            schema,
            values: Vec::new(),
            labels: Vec::new(),
        }
    }

    /// Every vector must share `schema`, carry a label and hold finite values.
    pub fn from_vectors<'a, I>(schema: FeatureSet, vectors: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a FeatureVector>,
    {
        let mut data = LabeledDataset::new(schema);
        for (i, v) in vectors.into_iter().enumerate() {
            let name = || match &v.subflow_ref {
                Some(r) => format!("vector {i} ({} #{})", r.flow_key, r.index),
                None => format!("vector {i}"),
            };
            if v.schema != schema {
                return Err(Error::SchemaMismatch {
                    expected: schema,
                    found: v.schema,
                });
            }
            let label = v
                .label
                .ok_or_else(|| Error::Training(format!("{} is unlabeled", name())))?;
            data.push(&v.values, label).map_err(|e| match e {
                Error::Training(msg) => Error::Training(format!("{}: {msg}", name())),
                other => other,
            })?;
        }
        Ok(data)
    }

    pub fn push(&mut self, row: &[f64], label: ClassLabel) -> Result<()> {
        if row.len() != self.schema.arity() {
            return Err(Error::Training(format!(
                "row has {} values, {} expects {}",
                row.len(),
                self.schema,
                self.schema.arity()
            )));
        }
        if let Some(j) = row.iter().position(|x| !x.is_finite()) {
            return Err(Error::Training(format!(
                "non-finite value {} in feature {}",
                row[j],
                self.schema.names()[j]
            )));
        }
        self.values.extend_from_slice(row);
        self.labels.push(label);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn arity(&self) -> usize {
        self.schema.arity()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.arity();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn label(&self, i: usize) -> ClassLabel {
        self.labels[i]
    }

    pub fn labels(&self) -> &[ClassLabel] {
        &self.labels
    }

    pub fn count(&self, class: ClassLabel) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], ClassLabel)> + '_ {
        self.values
            .chunks_exact(self.arity())
            .zip(self.labels.iter().copied())
    }

    /// Both classes must be present.
    pub(crate) fn require_both_classes(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Training("empty training set".into()));
        }
        for class in ClassLabel::ALL {
            if self.count(class) == 0 {
                return Err(Error::Training(format!(
                    "training set has no {class} examples; both classes are required"
                )));
            }
        }
        Ok(())
    }
}

/// Fraction of rows whose predicted label matches.
pub fn accuracy<C: SubflowClassifier + ?Sized>(model: &C, data: &LabeledDataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let correct = data
        .iter()
        .filter(|(row, label)| model.predict_row(row).label == *label)
        .count();
    correct as f64 / data.len() as f64
}
