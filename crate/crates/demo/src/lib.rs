//! WebAssembly bindings for the static demo page in `www/`.
//!
//! The plain Rust functions return serializable structs and are tested
//! natively; the `#[wasm_bindgen]` wrappers hand them to JavaScript as JSON.

use flowcert::classify::{classify, DecisionMode, DecisionPolicy};
use flowcert::features::{emit_cdf, FeatureExtractor, FeatureSet};
use flowcert::flow::ClassLabel;
use flowcert::likelihood::{certainty_to_ratio, ConfusionCounts, LikelihoodState, LikelihoodTable};
use flowcert::synth::{generate, Preset};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioInfo {
    pub certainty: f64,
    pub ratio: f64,
    pub log_ratio: f64,
    /// Identical subflows with likelihoods `(p, 1 - p)` needed to reach the
    /// ratio, for a few `p`.
    pub subflows_needed: Vec<(f64, Option<u32>)>,
}

pub fn certainty_info(certainty: f64) -> Result<RatioInfo, String> {
    let ratio = certainty_to_ratio(certainty).map_err(|e| e.to_string())?;
    let log_ratio = ratio.ln();
    let subflows_needed = [0.6, 0.75, 0.9, 0.99]
        .iter()
        .map(|&p: &f64| {
            let step = (p / (1.0 - p)).ln();
            let m = (log_ratio / step - 1e-9).ceil().max(1.0);
            (p, (m <= 1e6).then_some(m as u32))
        })
        .collect();
    Ok(RatioInfo {
        certainty,
        ratio,
        log_ratio,
        subflows_needed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeDecision {
    pub mode: DecisionMode,
    pub verdict: String,
    pub subflows_used: usize,
    pub subflows_available: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceResult {
    pub table: LikelihoodTable,
    /// `ln(L_K / L_U)` after each subflow.
    pub log_ratios: Vec<f64>,
    pub log_threshold_known: f64,
    pub log_threshold_unknown: f64,
    pub min_subflows: usize,
    pub decisions: Vec<ModeDecision>,
}

/// Parses `K`/`U` characters (case-insensitive; other characters ignored).
pub fn parse_predictions(text: &str) -> Result<Vec<ClassLabel>, String> {
    let labels: Vec<ClassLabel> = text
        .chars()
        .filter_map(|c| match c.to_ascii_uppercase() {
            'K' => Some(ClassLabel::Known),
            'U' => Some(ClassLabel::Unknown),
            _ => None,
        })
        .collect();
    if labels.is_empty() {
        return Err("enter at least one subflow prediction (K or U)".into());
    }
    Ok(labels)
}

/// Likelihood trace of a flow whose subflows were predicted `predictions`,
/// with the table fit from calibration counts `[n_kk, n_ku, n_uk, n_uu]`.
pub fn likelihood_trace(
    counts: [u64; 4],
    alpha: f64,
    predictions: &str,
    certainty_known: f64,
    certainty_unknown: f64,
    min_subflows: usize,
) -> Result<TraceResult, String> {
    let err = |e: flowcert::Error| e.to_string();
    let counts = ConfusionCounts {
        n_kk: counts[0],
        n_ku: counts[1],
        n_uk: counts[2],
        n_uu: counts[3],
    };
    let table = LikelihoodTable::fit(&counts, alpha).map_err(err)?;
    let labels = parse_predictions(predictions)?;
    let seq: Vec<(f64, f64)> = labels.iter().map(|&l| table.likelihoods(l)).collect();

    let mut state = LikelihoodState::new();
    let mut log_ratios = Vec::with_capacity(seq.len());
    for &(pk, pu) in &seq {
        state = state.accumulate(pk, pu).map_err(err)?;
        log_ratios.push(state.log_ratio_known());
    }
    let base = DecisionPolicy::from_certainty(
        certainty_known,
        certainty_unknown,
        min_subflows,
        DecisionMode::Strict,
    )
    .map_err(err)?;
    let decisions = DecisionMode::ALL
        .iter()
        .map(|&mode| {
            let d = classify(&seq, &base.with_mode(mode)).map_err(err)?;
            Ok(ModeDecision {
                mode,
                verdict: d.verdict.to_string(),
                subflows_used: d.subflows_used,
                subflows_available: d.subflows_available,
            })
        })
        .collect::<Result<_, String>>()?;
    Ok(TraceResult {
        table,
        log_ratios,
        log_threshold_known: base.threshold_known.ln(),
        log_threshold_unknown: -base.threshold_unknown.ln(),
        min_subflows,
        decisions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CdfSeries {
    pub class: ClassLabel,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CdfResult {
    pub feature: String,
    pub subflows: usize,
    pub series: Vec<CdfSeries>,
}

/// Largest flow the demo generates; keeps the page responsive.
const DEMO_MAX_PACKETS: usize = 3_000;

/// Per-class CDF of one feature over a small synthetic trace.
pub fn feature_cdf(
    preset: &str,
    flows_per_class: usize,
    n: usize,
    feature: &str,
    seed: u64,
) -> Result<CdfResult, String> {
    let preset: Preset = preset.parse().map_err(|e: flowcert::Error| e.to_string())?;
    if !(1..=50).contains(&flows_per_class) {
        return Err("flows per class must be between 1 and 50".into());
    }
    if !(2..=1000).contains(&n) {
        return Err("subflow size must be between 2 and 1000".into());
    }
    let schema = FeatureSet::Ext14;
    let index = schema.feature_index(feature).map_err(|e| e.to_string())?;
    let mut profiles = preset.profiles();
    for p in &mut profiles {
        // keep the preset's mix of sub-profiles, scaled to the requested size
        let share = (p.profile.flows as f64 / 200.0 * flows_per_class as f64).round() as usize;
        p.profile.flows = share.max(1);
        let (lo, hi) = p.profile.packets_per_flow;
        p.profile.packets_per_flow = (lo.min(DEMO_MAX_PACKETS / 2).max(n), hi.min(DEMO_MAX_PACKETS).max(n));
    }
    let trace = generate(&profiles, seed).map_err(|e| e.to_string())?;
    let mut extractor = FeatureExtractor::new(schema);
    let vectors: Vec<_> = trace
        .flows
        .iter()
        .flat_map(|f| {
            f.subflows(n)
                .map(|sf| extractor.extract(&sf).with_label(f.label))
                .collect::<Vec<_>>()
        })
        .collect();
    let series = emit_cdf(&vectors, index)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|(class, points)| CdfSeries { class, points })
        .collect();
    Ok(CdfResult {
        feature: schema.names()[index].to_string(),
        subflows: vectors.len(),
        series,
    })
}

pub fn feature_names() -> Vec<&'static str> {
    FeatureSet::Ext14.names().to_vec()
}

fn to_js<T: Serialize>(result: Result<T, String>) -> Result<String, JsValue> {
    result
        .and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = certaintyInfo)]
pub fn certainty_info_js(certainty: f64) -> Result<String, JsValue> {
    to_js(certainty_info(certainty))
}

#[wasm_bindgen(js_name = likelihoodTrace)]
#[allow(clippy::too_many_arguments)]
pub fn likelihood_trace_js(
    n_kk: u32,
    n_ku: u32,
    n_uk: u32,
    n_uu: u32,
    alpha: f64,
    predictions: &str,
    certainty_known: f64,
    certainty_unknown: f64,
    min_subflows: u32,
) -> Result<String, JsValue> {
    to_js(likelihood_trace(
        [n_kk, n_ku, n_uk, n_uu].map(u64::from),
        alpha,
        predictions,
        certainty_known,
        certainty_unknown,
        min_subflows as usize,
    ))
}

#[wasm_bindgen(js_name = featureCdf)]
pub fn feature_cdf_js(
    preset: &str,
    flows_per_class: u32,
    n: u32,
    feature: &str,
    seed: u32,
) -> Result<String, JsValue> {
    to_js(feature_cdf(preset, flows_per_class as usize, n as usize, feature, u64::from(seed)))
}

#[wasm_bindgen(js_name = featureNames)]
pub fn feature_names_js() -> String {
    serde_json::to_string(&feature_names()).expect("names serialize")
}
