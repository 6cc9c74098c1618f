use serde::{Deserialize, Serialize};

use super::{LabeledDataset, SubflowClassifier, SubflowPrediction};
use crate::error::Result;
use crate::features::{FeatureSet, FeatureVector};
use crate::flow::ClassLabel;

pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Per-class, per-feature Gaussian likelihoods with empirical class priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNb {
    pub schema: FeatureSet,
    /// Indexed `[known, unknown]`.
    pub log_priors: [f64; 2],
    pub means: [Vec<f64>; 2],
    pub variances: [Vec<f64>; 2],
}

fn slot(label: ClassLabel) -> usize {
    match label {
        ClassLabel::Known => 0,
        ClassLabel::Unknown => 1,
    }
}

impl GaussianNb {
    pub fn fit(data: &LabeledDataset) -> Result<Self> {
        data.require_both_classes()?;
        let d = data.arity();
        let mut counts = [0usize; 2];
        let mut means = [vec![0.0; d], vec![0.0; d]];
        for (row, label) in data.iter() {
            let c = slot(label);
            counts[c] += 1;
            for (m, x) in means[c].iter_mut().zip(row) {
                *m += x;
            }
        }
        for c in 0..2 {
            for m in &mut means[c] {
                *m /= counts[c] as f64;
            }
        }
        let mut variances = [vec![0.0; d], vec![0.0; d]];
        for (row, label) in data.iter() {
            let c = slot(label);
            for j in 0..d {
                let dx = row[j] - means[c][j];
                variances[c][j] += dx * dx;
            }
        }
        for c in 0..2 {
            for v in &mut variances[c] {
                *v = (*v / counts[c] as f64).max(VARIANCE_FLOOR);
            }
        }
        let n = data.len() as f64;
        Ok(GaussianNb {
            schema: data.schema,
            log_priors: [
                (counts[0] as f64 / n).ln(),
                (counts[1] as f64 / n).ln(),
            ],
            means,
            variances,
        })
    }

    fn log_joint(&self, c: usize, row: &[f64]) -> f64 {
        let mut lj = self.log_priors[c];
        for ((x, m), v) in row.iter().zip(&self.means[c]).zip(&self.variances[c]) {
            let dx = x - m;
            lj -= 0.5 * (2.0 * std::f64::consts::PI * v).ln() + dx * dx / (2.0 * v);
        }
        lj
    }
}

impl SubflowClassifier for GaussianNb {
    fn schema(&self) -> FeatureSet {
        self.schema
    }

    fn predict_row(&self, row: &[f64]) -> SubflowPrediction {
        let diff = self.log_joint(1, row) - self.log_joint(0, row);
        SubflowPrediction::from_score(super::gbdt::logistic(diff))
    }
}

pub fn train_predict_nb(data: &LabeledDataset, v: &FeatureVector) -> Result<SubflowPrediction> {
    GaussianNb::fit(data)?.predict(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dataset(rows: &[(Vec<f64>, ClassLabel)]) -> LabeledDataset {
        let mut d = LabeledDataset::new(FeatureSet::Core8);
        for (r, l) in rows {
            d.push(r, *l).unwrap();
        }
        d
    }

    #[test]
    fn far_means_classify_to_own_class() {
        let rows: Vec<_> = (0..20)
            .map(|i| {
                let jitter = if i % 4 < 2 { -1.0 } else { 1.0 };
                let label = if i % 2 == 0 { ClassLabel::Known } else { ClassLabel::Unknown };
                let centre = if label == ClassLabel::Known { 0.0 } else { 100.0 };
                (vec![centre + jitter; 8], label)
            })
            .collect();
        let nb = GaussianNb::fit(&dataset(&rows)).unwrap();
        assert_eq!(nb.predict_row(&[0.0; 8]).label, ClassLabel::Known);
        assert_eq!(nb.predict_row(&[100.0; 8]).label, ClassLabel::Unknown);
    }

    #[test]
    fn midpoint_of_symmetric_classes_scores_half() {
        let rows = vec![
            (vec![-1.0; 8], ClassLabel::Known),
            (vec![1.0; 8], ClassLabel::Known),
            (vec![9.0; 8], ClassLabel::Unknown),
            (vec![11.0; 8], ClassLabel::Unknown),
        ];
        let nb = GaussianNb::fit(&dataset(&rows)).unwrap();
        assert!((nb.predict_row(&[5.0; 8]).score - 0.5).abs() < 1e-9);
    }

    #[test]
    fn constant_features_hit_variance_floor() {
        let rows = vec![
            (vec![1.0; 8], ClassLabel::Known),
            (vec![1.0; 8], ClassLabel::Known),
            (vec![2.0; 8], ClassLabel::Unknown),
        ];
        let nb = GaussianNb::fit(&dataset(&rows)).unwrap();
        assert_eq!(nb.variances[0][0], VARIANCE_FLOOR);
        assert_eq!(nb.predict_row(&[1.0; 8]).label, ClassLabel::Known);
        let v = FeatureVector::new(FeatureSet::Core8, vec![2.0; 8]);
        assert_eq!(train_predict_nb(&dataset(&rows), &v).unwrap().label, ClassLabel::Unknown);
    }

    /// Direct density oracle: evaluate each Gaussian pdf and multiply.
    fn oracle_score(rows: &[(Vec<f64>, ClassLabel)], x: &[f64]) -> f64 {
        let d = x.len();
        let mut joint = [0.0f64; 2];
        for (c, class) in ClassLabel::ALL.iter().enumerate() {
            let members: Vec<&Vec<f64>> = rows.iter().filter(|(_, l)| l == class).map(|(r, _)| r).collect();
            let n = members.len() as f64;
            let mut p = n / rows.len() as f64;
            for j in 0..d {
                let mean = members.iter().map(|r| r[j]).sum::<f64>() / n;
                let var = (members.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n).max(VARIANCE_FLOOR);
                p *= (-(x[j] - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
            }
            joint[c] = p;
        }
        joint[1] / (joint[0] + joint[1])
    }

    proptest! {
        #[test]
        fn matches_density_oracle(
            points in prop::collection::vec((prop::collection::vec(-2.0f64..2.0, 8), any::<bool>()), 4..30),
            x in prop::collection::vec(-1.5f64..1.5, 8),
        ) {
            let mut rows: Vec<(Vec<f64>, ClassLabel)> = points
                .into_iter()
                .map(|(r, u)| (r, if u { ClassLabel::Unknown } else { ClassLabel::Known }))
                .collect();
            rows[0].1 = ClassLabel::Known;
            rows[1].1 = ClassLabel::Unknown;
            let nb = GaussianNb::fit(&dataset(&rows)).unwrap();
            let expected = oracle_score(&rows, &x);
            prop_assume!(expected.is_finite() && expected > 1e-200 && expected < 1.0 - 1e-12);
            let got = nb.predict_row(&x).score;
            prop_assert!((got - expected).abs() <= 1e-9, "{} vs {}", got, expected);
        }
    }
}
