use super::{LabeledDataset, SubflowClassifier, SubflowPrediction};
use crate::error::{Error, Result};
use crate::features::{FeatureSet, FeatureVector};
use crate::flow::ClassLabel;

/// K-nearest-neighbours over z-score standardized features.
#[derive(Debug, Clone)]
pub struct Knn {
    pub schema: FeatureSet,
    pub k: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
    points: Vec<f64>,
    labels: Vec<ClassLabel>,
}

impl Knn {
    pub fn fit(data: &LabeledDataset, k: usize) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Training("KNN needs at least one training point".into()));
        }
        if k == 0 || k > data.len() {
            return Err(Error::Training(format!(
                "k = {k} is invalid for {} training points",
                data.len()
            )));
        }
        if k.is_multiple_of(2) {
            log::warn!("KNN with even k = {k}; ties resolve to unknown");
        }
        let d = data.arity();
        let n = data.len() as f64;
        let mut mean = vec![0.0; d];
        for (row, _) in data.iter() {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x / n;
            }
        }
        let mut scale = vec![0.0; d];
        for (row, _) in data.iter() {
            for j in 0..d {
                scale[j] += (row[j] - mean[j]).powi(2) / n;
            }
        }
        for s in &mut scale {
            *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
        }
        let mut points = Vec::with_capacity(data.len() * d);
        for (row, _) in data.iter() {
            points.extend(row.iter().zip(&mean).zip(&scale).map(|((x, m), s)| (x - m) / s));
        }
        Ok(Knn {
            schema: data.schema,
            k,
            mean,
            scale,
            points,
            labels: data.labels().to_vec(),
        })
    }

    pub fn standardize(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    /// Indices of the `k` nearest training points, nearest first; equal
    /// distances are ordered by training index.
    pub fn neighbours(&self, row: &[f64]) -> Vec<usize> {
        let z = self.standardize(row);
        let d = z.len();
        let mut dist: Vec<(f64, usize)> = self
            .points
            .chunks_exact(d)
            .enumerate()
            .map(|(i, p)| {
                let s: f64 = p.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum();
                (s, i)
            })
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < dist.len() {
            dist.select_nth_unstable_by(self.k - 1, cmp);
            dist.truncate(self.k);
        }
        dist.sort_by(cmp);
        dist.into_iter().map(|(_, i)| i).collect()
    }
}

impl SubflowClassifier for Knn {
    fn schema(&self) -> FeatureSet {
        self.schema
    }

    fn predict_row(&self, row: &[f64]) -> SubflowPrediction {
        let nbrs = self.neighbours(row);
        let unknown = nbrs
            .iter()
            .filter(|&&i| self.labels[i] == ClassLabel::Unknown)
            .count();
        // score >= 0.5 maps to unknown, so an even split goes to unknown
        SubflowPrediction::from_score(unknown as f64 / nbrs.len() as f64)
    }
}

pub fn knn_predict(data: &LabeledDataset, v: &FeatureVector, k: usize) -> Result<SubflowPrediction> {
    Knn::fit(data, k)?.predict(v)
}
