//! Flow verdicts from per-subflow likelihood pairs.
//!
//! * `strict` accumulates every subflow and requires a threshold crossing.
//! * `majority` is strict, with an uncertain outcome resolved toward the
//!   larger joint likelihood (exact ties resolve to unknown).
//! * `incremental_*` stop at the first crossing once at least
//!   `min_subflows` subflows have been seen.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::ClassLabel;
use crate::likelihood::{certainty_to_ratio, LikelihoodState};

pub const DEFAULT_MIN_SUBFLOWS: usize = 15;

/// Slack, in nats, when comparing a log-ratio with a log-threshold. Evidence
/// that equals the threshold up to rounding counts as reaching it.
pub const LOG_THRESHOLD_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionMode {
    Strict,
    Majority,
    IncrementalStrict,
    IncrementalMajority,
}

impl DecisionMode {
    pub const ALL: [DecisionMode; 4] = [
        DecisionMode::Strict,
        DecisionMode::Majority,
        DecisionMode::IncrementalStrict,
        DecisionMode::IncrementalMajority,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DecisionMode::Strict => "strict",
            DecisionMode::Majority => "majority",
            DecisionMode::IncrementalStrict => "incremental_strict",
            DecisionMode::IncrementalMajority => "incremental_majority",
        }
    }

    pub fn is_incremental(self) -> bool {
        matches!(self, DecisionMode::IncrementalStrict | DecisionMode::IncrementalMajority)
    }

    /// Majority variants never return `Uncertain`.
    pub fn resolves_ties(self) -> bool {
        matches!(self, DecisionMode::Majority | DecisionMode::IncrementalMajority)
    }
}

impl fmt::Display for DecisionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DecisionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DecisionMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown decision mode {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionPolicy {
    pub threshold_known: f64,
    pub threshold_unknown: f64,
    pub min_subflows: usize,
    pub mode: DecisionMode,
}

impl DecisionPolicy {
    pub fn new(
        threshold_known: f64,
        threshold_unknown: f64,
        min_subflows: usize,
        mode: DecisionMode,
    ) -> Result<Self> {
        if !(threshold_known > 1.0 && threshold_unknown > 1.0) {
            return Err(Error::invalid(format!(
                "ratio thresholds must exceed 1, got {threshold_known} / {threshold_unknown}"
            )));
        }
        if min_subflows == 0 {
            return Err(Error::invalid("min_subflows must be at least 1"));
        }
        Ok(DecisionPolicy {
            threshold_known,
            threshold_unknown,
            min_subflows,
            mode,
        })
    }

    pub fn from_certainty(
        certainty_known: f64,
        certainty_unknown: f64,
        min_subflows: usize,
        mode: DecisionMode,
    ) -> Result<Self> {
        Self::new(
            certainty_to_ratio(certainty_known)?,
            certainty_to_ratio(certainty_unknown)?,
            min_subflows,
            mode,
        )
    }

    pub fn with_mode(self, mode: DecisionMode) -> Self {
        DecisionPolicy { mode, ..self }
    }

    fn crossing(&self, log_ratio_known: f64) -> Option<Verdict> {
        if log_ratio_known >= self.threshold_known.ln() - LOG_THRESHOLD_TOLERANCE {
            Some(Verdict::Known)
        } else if -log_ratio_known >= self.threshold_unknown.ln() - LOG_THRESHOLD_TOLERANCE {
            Some(Verdict::Unknown)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Known,
    Unknown,
    Uncertain,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Known => "known",
            Verdict::Unknown => "unknown",
            Verdict::Uncertain => "uncertain",
        }
    }

    pub fn class(self) -> Option<ClassLabel> {
        match self {
            Verdict::Known => Some(ClassLabel::Known),
            Verdict::Unknown => Some(ClassLabel::Unknown),
            Verdict::Uncertain => None,
        }
    }

    fn majority(log_ratio_known: f64) -> Verdict {
        if log_ratio_known > 0.0 {
            Verdict::Known
        } else {
            Verdict::Unknown
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowDecision {
    pub verdict: Verdict,
    pub log_ratio_known: f64,
    pub subflows_used: usize,
    pub subflows_available: usize,
    pub mode: DecisionMode,
}

impl FlowDecision {
    /// `verdict log_ratio subflows_used subflows_available mode`; callers
    /// prefix the flow key.
    pub fn fields(&self) -> String {
        format!(
            "{} {} {} {} {}",
            self.verdict, self.log_ratio_known, self.subflows_used, self.subflows_available, self.mode
        )
    }
}

fn fold_all(seq: &[(f64, f64)]) -> Result<LikelihoodState> {
    if seq.is_empty() {
        return Err(Error::invalid("cannot classify a flow with no subflows"));
    }
    seq.iter()
        .try_fold(LikelihoodState::new(), |s, &(pk, pu)| s.accumulate(pk, pu))
}

pub fn classify_strict(seq: &[(f64, f64)], policy: &DecisionPolicy) -> Result<FlowDecision> {
    let state = fold_all(seq)?;
    let lr = state.log_ratio_known();
    Ok(FlowDecision {
        verdict: policy.crossing(lr).unwrap_or(Verdict::Uncertain),
        log_ratio_known: lr,
        subflows_used: seq.len(),
        subflows_available: seq.len(),
        mode: DecisionMode::Strict,
    })
}

pub fn classify_majority(seq: &[(f64, f64)], policy: &DecisionPolicy) -> Result<FlowDecision> {
    let strict = classify_strict(seq, policy)?;
    let verdict = match strict.verdict {
        Verdict::Uncertain => Verdict::majority(strict.log_ratio_known),
        decided => decided,
    };
    Ok(FlowDecision {
        verdict,
        mode: DecisionMode::Majority,
        ..strict
    })
}

/// Checks both thresholds after every subflow once
/// `min(min_subflows, available)` subflows have been consumed. The
/// majority fallback applies only when `policy.mode` is
/// `IncrementalMajority`.
pub fn classify_incremental(seq: &[(f64, f64)], policy: &DecisionPolicy) -> Result<FlowDecision> {
    if seq.is_empty() {
        return Err(Error::invalid("cannot classify a flow with no subflows"));
    }
    let mode = if policy.mode == DecisionMode::IncrementalMajority {
        DecisionMode::IncrementalMajority
    } else {
        DecisionMode::IncrementalStrict
    };
    let floor = policy.min_subflows.min(seq.len());
    let mut state = LikelihoodState::new();
    for (i, &(pk, pu)) in seq.iter().enumerate() {
        state = state.accumulate(pk, pu)?;
        let used = i + 1;
        if used < floor {
            continue;
        }
        let lr = state.log_ratio_known();
        if let Some(verdict) = policy.crossing(lr) {
            return Ok(FlowDecision {
                verdict,
                log_ratio_known: lr,
                subflows_used: used,
                subflows_available: seq.len(),
                mode,
            });
        }
    }
    let lr = state.log_ratio_known();
    let verdict = if mode == DecisionMode::IncrementalMajority {
        Verdict::majority(lr)
    } else {
        Verdict::Uncertain
    };
    Ok(FlowDecision {
        verdict,
        log_ratio_known: lr,
        subflows_used: seq.len(),
        subflows_available: seq.len(),
        mode,
    })
}

/// Dispatches on `policy.mode`.
pub fn classify(seq: &[(f64, f64)], policy: &DecisionPolicy) -> Result<FlowDecision> {
    match policy.mode {
        DecisionMode::Strict => classify_strict(seq, policy),
        DecisionMode::Majority => classify_majority(seq, policy),
        DecisionMode::IncrementalStrict | DecisionMode::IncrementalMajority => {
            classify_incremental(seq, policy)
        }
    }
}
