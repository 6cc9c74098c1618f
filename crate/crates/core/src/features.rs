//! Per-subflow statistical features and CDF export.
//!
//! Inter-arrival times are the `N - 1` gaps inside a subflow, in seconds.
//! Standard deviations are population deviations.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{ClassLabel, FlowKey, Subflow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSet {
    Core8,
    Ext14,
}

const CORE8_NAMES: [&str; 8] = [
    "iat_max", "iat_min", "iat_mean", "iat_std", "size_max", "size_min", "size_mean", "size_std",
];

const EXT14_NAMES: [&str; 14] = [
    "total_bytes",
    "size_max",
    "size_min",
    "ack_count",
    "rwnd_min",
    "rwnd_max",
    "size_std",
    "size_mean",
    "iat_mean",
    "iat_std",
    "iat_max",
    "iat_min",
    "pkt_throughput",
    "byte_throughput",
];

impl FeatureSet {
    pub fn arity(self) -> usize {
        self.names().len()
    }

    pub fn names(self) -> &'static [&'static str] {
        match self {
            FeatureSet::Core8 => &CORE8_NAMES,
            FeatureSet::Ext14 => &EXT14_NAMES,
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            FeatureSet::Core8 => "core8",
            FeatureSet::Ext14 => "ext14",
        }
    }

    /// Accepts either a column index or a feature name.
    pub fn feature_index(self, name_or_index: &str) -> Result<usize> {
        if let Ok(i) = name_or_index.parse::<usize>() {
            if i < self.arity() {
                return Ok(i);
            }
        }
        self.names()
            .iter()
            .position(|n| *n == name_or_index)
            .ok_or_else(|| {
                Error::invalid(format!("{self} has no feature {name_or_index:?}"))
            })
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "core8" => Ok(FeatureSet::Core8),
            "ext14" => Ok(FeatureSet::Ext14),
            other => Err(Error::invalid(format!("unknown feature set {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubflowRef {
    pub flow_key: FlowKey,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub schema: FeatureSet,
    pub subflow_ref: Option<SubflowRef>,
    pub label: Option<ClassLabel>,
}

impl FeatureVector {
    pub fn new(schema: FeatureSet, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), schema.arity());
        FeatureVector {
            values,
            schema,
            subflow_ref: None,
            label: None,
        }
    }

    pub fn with_label(mut self, label: Option<ClassLabel>) -> Self {
        self.label = label;
        self
    }
}

/// Single-pass min/max/mean/variance (Welford).
#[derive(Debug, Clone, Copy)]
struct Summary {
    count: u64,
    min: f64,
    max: f64,
    mean: f64,
    m2: f64,
}

impl Summary {
    fn new() -> Self {
        Summary {
            count: 0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            mean: 0.0,
            m2: 0.0,
        }
    }

    fn push(&mut self, x: f64) {
        self.count += 1;
        self.min = self.min.min(x);
        self.max = self.max.max(x);
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn std(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).max(0.0).sqrt()
        }
    }

    /// Guards the ordering `min <= mean <= max` against last-ulp drift.
    fn mean(&self) -> f64 {
        self.mean.clamp(self.min, self.max)
    }
}

struct SubflowStats {
    iat: Summary,
    size: Summary,
    total_bytes: f64,
    ack_count: u32,
    rwnd_min: u32,
    rwnd_max: u32,
    span_us: u64,
}

fn summarize(subflow: &Subflow<'_>) -> SubflowStats {
    let packets = subflow.packets;
    let mut iat = Summary::new();
    let mut size = Summary::new();
    let mut total_bytes = 0u64;
    let mut ack_count = 0u32;
    let mut rwnd_min = u32::MAX;
    let mut rwnd_max = 0u32;
    for (i, p) in packets.iter().enumerate() {
        if i > 0 {
            let gap_us = p.timestamp_us.saturating_sub(packets[i - 1].timestamp_us);
            iat.push(gap_us as f64 / 1e6);
        }
        size.push(f64::from(p.size_bytes));
        total_bytes += u64::from(p.size_bytes);
        ack_count += u32::from(p.has_ack());
        rwnd_min = rwnd_min.min(p.recv_window_bytes);
        rwnd_max = rwnd_max.max(p.recv_window_bytes);
    }
    let span_us = match (packets.first(), packets.last()) {
        (Some(a), Some(b)) => b.timestamp_us.saturating_sub(a.timestamp_us),
        _ => 0,
    };
    SubflowStats {
        iat,
        size,
        total_bytes: total_bytes as f64,
        ack_count,
        rwnd_min,
        rwnd_max,
        span_us,
    }
}

fn tagged(subflow: &Subflow<'_>, schema: FeatureSet, values: Vec<f64>) -> FeatureVector {
    FeatureVector {
        values,
        schema,
        subflow_ref: Some(SubflowRef {
            flow_key: subflow.flow_key,
            index: subflow.index,
        }),
        label: None,
    }
}

/// `[iat_max, iat_min, iat_mean, iat_std, size_max, size_min, size_mean, size_std]`
pub fn extract_core8(subflow: &Subflow<'_>) -> FeatureVector {
    assert!(subflow.len() >= 2, "subflows need at least two packets");
    let s = summarize(subflow);
    let values = vec![
        s.iat.max,
        s.iat.min,
        s.iat.mean(),
        s.iat.std(),
        s.size.max,
        s.size.min,
        s.size.mean(),
        s.size.std(),
    ];
    tagged(subflow, FeatureSet::Core8, values)
}

/// Zero-span subflows (all timestamps equal) get zero throughputs.
pub fn extract_ext14(subflow: &Subflow<'_>) -> FeatureVector {
    assert!(subflow.len() >= 2, "subflows need at least two packets");
    let s = summarize(subflow);
    let (pkt_rate, byte_rate) = if s.span_us == 0 {
        (0.0, 0.0)
    } else {
        let secs = s.span_us as f64 / 1e6;
        (subflow.len() as f64 / secs, s.total_bytes / secs)
    };
    let values = vec![
        s.total_bytes,
        s.size.max,
        s.size.min,
        f64::from(s.ack_count),
        f64::from(s.rwnd_min),
        f64::from(s.rwnd_max),
        s.size.std(),
        s.size.mean(),
        s.iat.mean(),
        s.iat.std(),
        s.iat.max,
        s.iat.min,
        pkt_rate,
        byte_rate,
    ];
    tagged(subflow, FeatureSet::Ext14, values)
}

pub fn is_degenerate(subflow: &Subflow<'_>) -> bool {
    match (subflow.packets.first(), subflow.packets.last()) {
        (Some(a), Some(b)) => a.timestamp_us == b.timestamp_us,
        _ => true,
    }
}

/// Extraction for a fixed schema, counting zero-span subflows.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    pub schema: FeatureSet,
    pub degenerate_subflows: u64,
}

impl FeatureExtractor {
    pub fn new(schema: FeatureSet) -> Self {
        FeatureExtractor {
            schema,
            degenerate_subflows: 0,
        }
    }

    pub fn extract(&mut self, subflow: &Subflow<'_>) -> FeatureVector {
        match self.schema {
            FeatureSet::Core8 => extract_core8(subflow),
            FeatureSet::Ext14 => {
                if is_degenerate(subflow) {
                    self.degenerate_subflows += 1;
                }
                extract_ext14(subflow)
            }
        }
    }
}

/// Sorted distinct values with the fraction of samples `<=` each.
pub type Cdf = Vec<(f64, f64)>;

pub fn cdf_of(values: &[f64]) -> Cdf {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut out: Cdf = Vec::new();
    for (i, v) in sorted.iter().enumerate() {
        if i + 1 < n && sorted[i + 1] == *v {
            continue;
        }
        out.push((*v, (i + 1) as f64 / n as f64));
    }
    out
}

/// Per-class CDFs of one feature. Unlabeled vectors are ignored; a class
/// with no vectors yields an empty list.
pub fn emit_cdf(vectors: &[FeatureVector], feature_index: usize) -> Result<Vec<(ClassLabel, Cdf)>> {
    if let Some(v) = vectors.iter().find(|v| feature_index >= v.values.len()) {
        return Err(Error::invalid(format!(
            "feature index {feature_index} out of range for {}",
            v.schema
        )));
    }
    Ok(ClassLabel::ALL
        .iter()
        .map(|&class| {
            let values: Vec<f64> = vectors
                .iter()
                .filter(|v| v.label == Some(class))
                .map(|v| v.values[feature_index])
                .collect();
            (class, cdf_of(&values))
        })
        .collect())
}

/// `class value fraction`, one point per line.
pub fn write_cdf<W: Write>(cdfs: &[(ClassLabel, Cdf)], mut out: W) -> io::Result<()> {
    for (class, points) in cdfs {
        for (v, frac) in points {
            writeln!(out, "{class} {v} {frac}")?;
        }
    }
    out.flush()
}

fn label_str(label: Option<ClassLabel>) -> &'static str {
    label.map_or("unlabeled", ClassLabel::as_str)
}

/// `label,flow_key,index,v0,v1,...` with a header row naming the columns.
pub fn write_feature_dump<W: Write>(vectors: &[FeatureVector], mut out: W) -> io::Result<()> {
    if let Some(first) = vectors.first() {
        writeln!(out, "label,flow_key,index,{}", first.schema.names().join(","))?;
    }
    for v in vectors {
        let (key, index) = match &v.subflow_ref {
            Some(r) => (r.flow_key.to_string(), r.index.to_string()),
            None => (String::new(), String::new()),
        };
        write!(out, "{},{},{}", label_str(v.label), key, index)?;
        for x in &v.values {
            write!(out, ",{x}")?;
        }
        writeln!(out)?;
    }
    out.flush()
}
