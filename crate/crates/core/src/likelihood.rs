//! Flow-class likelihoods from subflow confusion counts, and joint
//! log-likelihood accumulation.
//!
//! Each subflow prediction is mapped to a pair `(p_K, p_U)`: the estimated
//! probability that a subflow carrying that prediction belongs to a known or
//! an unknown flow. Pairs are multiplied across a flow's subflows under an
//! independence assumption; the ratio of the two products is the evidence
//! used by [`crate::classify`]. Everything is accumulated in natural-log
//! space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::ClassLabel;

/// `n_xy` = subflows predicted `x` whose true class is `y`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub n_kk: u64,
    pub n_ku: u64,
    pub n_uk: u64,
    pub n_uu: u64,
}

impl ConfusionCounts {
    pub fn from_pairs<I>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (ClassLabel, ClassLabel)>,
    {
        let mut c = ConfusionCounts::default();
        for (predicted, truth) in pairs {
            c.add(predicted, truth);
        }
        c
    }

    pub fn add(&mut self, predicted: ClassLabel, truth: ClassLabel) {
        use ClassLabel::*;
        match (predicted, truth) {
            (Known, Known) => self.n_kk += 1,
            (Known, Unknown) => self.n_ku += 1,
            (Unknown, Known) => self.n_uk += 1,
            (Unknown, Unknown) => self.n_uu += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.n_kk + self.n_ku + self.n_uk + self.n_uu
    }
}

/// Class likelihoods conditioned on the predicted label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodTable {
    /// P(true known | predicted known)
    pub p_kk: f64,
    /// P(true unknown | predicted known)
    pub p_ku: f64,
    /// P(true known | predicted unknown)
    pub p_uk: f64,
    /// P(true unknown | predicted unknown)
    pub p_uu: f64,
    pub smoothing_alpha: f64,
}

impl LikelihoodTable {
    /// Laplace-smoothed fit. With `alpha == 0` both predicted-label strata
    /// must be non-empty.
    pub fn fit(counts: &ConfusionCounts, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!("smoothing alpha must be >= 0, got {alpha}")));
        }
        let stratum = |hit: u64, miss: u64, name: &str| -> Result<(f64, f64)> {
            let denom = (hit + miss) as f64 + 2.0 * alpha;
            if denom == 0.0 {
                return Err(Error::invalid(format!(
                    "no subflows predicted {name} and alpha = 0; cannot estimate likelihoods"
                )));
            }
            Ok(((hit as f64 + alpha) / denom, (miss as f64 + alpha) / denom))
        };
        let (p_kk, p_ku) = stratum(counts.n_kk, counts.n_ku, "known")?;
        let (p_uk, p_uu) = stratum(counts.n_uk, counts.n_uu, "unknown")?;
        Ok(LikelihoodTable {
            p_kk,
            p_ku,
            p_uk,
            p_uu,
            smoothing_alpha: alpha,
        })
    }

    /// `(p_K, p_U)` for a subflow with the given predicted label.
    pub fn likelihoods(&self, predicted: ClassLabel) -> (f64, f64) {
        match predicted {
            ClassLabel::Known => (self.p_kk, self.p_ku),
            ClassLabel::Unknown => (self.p_uk, self.p_uu),
        }
    }
}

pub fn fit_likelihood_table<I>(pred_true_pairs: I, alpha: f64) -> Result<LikelihoodTable>
where
    I: IntoIterator<Item = (ClassLabel, ClassLabel)>,
{
    LikelihoodTable::fit(&ConfusionCounts::from_pairs(pred_true_pairs), alpha)
}

pub fn subflow_likelihoods(table: &LikelihoodTable, predicted: ClassLabel) -> (f64, f64) {
    table.likelihoods(predicted)
}

/// Running `ln L_K`, `ln L_U` over `m` subflows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodState {
    pub log_lk: f64,
    pub log_lu: f64,
    pub m: u64,
}

impl LikelihoodState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accumulate(self, p_known: f64, p_unknown: f64) -> Result<Self> {
        let valid = |p: f64| p > 0.0 && p < 1.0;
        if !valid(p_known) || !valid(p_unknown) {
            return Err(Error::invalid(format!(
                "subflow likelihoods must lie in (0, 1), got ({p_known}, {p_unknown})"
            )));
        }
        Ok(LikelihoodState {
            log_lk: self.log_lk + p_known.ln(),
            log_lu: self.log_lu + p_unknown.ln(),
            m: self.m + 1,
        })
    }

    /// Combines states built over disjoint subflow sets.
    pub fn merge(self, other: Self) -> Self {
        LikelihoodState {
            log_lk: self.log_lk + other.log_lk,
            log_lu: self.log_lu + other.log_lu,
            m: self.m + other.m,
        }
    }

    /// `ln(L_K / L_U)`, unchecked.
    pub fn log_ratio_known(&self) -> f64 {
        self.log_lk - self.log_lu
    }

    /// `(ln(L_K/L_U), ln(L_U/L_K))`.
    pub fn certainty_ratio(&self) -> Result<(f64, f64)> {
        if self.m == 0 {
            return Err(Error::invalid("likelihood ratio of an empty subflow sequence"));
        }
        let known = self.log_ratio_known();
        Ok((known, -known))
    }
}

/// Ratio threshold equivalent to certainty `c`, i.e. `c / (1 - c)`.
///
/// `c` is read as the decimal it prints as, so `0.95` maps to exactly `19`
/// and `0.99` to exactly `99`.
pub fn certainty_to_ratio(c: f64) -> Result<f64> {
    if !(c > 0.5 && c < 1.0) {
        return Err(Error::invalid(format!("certainty must lie in (0.5, 1), got {c}")));
    }
    if let Some((num, den)) = decimal_fraction(c) {
        return Ok(num as f64 / (den - num) as f64);
    }
    Ok(c / (1.0 - c))
}

/// `c = num / den` with `den` a power of ten, when both fit in an f64
/// mantissa.
fn decimal_fraction(c: f64) -> Option<(u64, u64)> {
    let text = format!("{c}");
    let digits = text.strip_prefix("0.")?;
    if digits.is_empty() || digits.len() > 15 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let num: u64 = digits.parse().ok()?;
    let den = 10u64.pow(digits.len() as u32);
    Some((num, den))
}

/// Inverse of [`certainty_to_ratio`].
pub fn ratio_to_certainty(ratio: f64) -> f64 {
    ratio / (1.0 + ratio)
}
