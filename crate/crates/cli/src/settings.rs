use std::fs;
use std::path::Path;

use anyhow::Context;
use flowcert::classify::DecisionMode;
use flowcert::features::FeatureSet;
use flowcert::synth::Preset;
use serde::Deserialize;

/// Optional TOML config. Every key mirrors a command-line flag (with `_`
/// for `-`); flags win when both are given.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSettings {
    pub seed: Option<u64>,
    pub idle_timeout_s: Option<f64>,
    pub bidirectional: Option<bool>,
    pub n: Option<usize>,
    pub features: Option<FeatureSet>,
    pub certainty: Option<f64>,
    pub certainty_known: Option<f64>,
    pub certainty_unknown: Option<f64>,
    pub min_subflows: Option<usize>,
    pub mode: Option<DecisionMode>,
    pub modes: Option<Vec<DecisionMode>>,
    pub alpha: Option<f64>,
    pub trees: Option<usize>,
    pub max_depth: Option<usize>,
    pub learning_rate: Option<f64>,
    pub min_leaf: Option<usize>,
    pub subsample: Option<f64>,
    pub calibration_fraction: Option<f64>,
    pub calibrate_on_train: Option<bool>,
    pub max_train_subflows: Option<usize>,
    pub preset: Option<Preset>,
    pub flows_per_class: Option<usize>,
    pub sizes: Option<Vec<usize>>,
    pub fractions: Option<Vec<f64>>,
    pub split_fraction: Option<f64>,
    pub feature: Option<String>,
}

impl FileSettings {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(FileSettings::default());
        };
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| {
            anyhow::Error::new(flowcert::Error::invalid(format!(
                "config {}: {e}",
                path.display()
            )))
        })
    }
}

/// Flag value, else config value, else default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
