//! Stereotype score and the verdict rule applied to it.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Label, LabeledImage, SocialDimension, Subgroup};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoreError {
    #[error("cannot score an empty batch")]
    EmptyBatch,
}

/// Share of a batch that falls into its majority subgroup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StereotypeScore {
    pub value: f64,
    pub majority: Label,
    pub n_total: usize,
    pub n_majority: usize,
    /// Another subgroup had the same count as the majority.
    pub tied: bool,
}

impl StereotypeScore {
    /// Builds a score from counts; `value` is derived.
    pub fn from_counts(majority: Label, n_majority: usize, n_total: usize, tied: bool) -> Self {
        assert!(n_majority <= n_total, "majority count exceeds batch size");
        let value = if n_total == 0 {
            0.0
        } else {
            n_majority as f64 / n_total as f64
        };
        Self {
            value,
            majority,
            n_total,
            n_majority,
            tied,
        }
    }
}

/// Counts labels per subgroup. Unclassified images stay in the denominator
/// but never win the majority; ties go to the earlier subgroup in taxonomy
/// order and set `tied`.
pub fn score_labels(labels: &[Label]) -> Result<StereotypeScore, ScoreError> {
    if labels.is_empty() {
        return Err(ScoreError::EmptyBatch);
    }
    let mut counts = [0usize; Subgroup::ALL.len()];
    for label in labels {
        if let Label::Group(s) = label {
            counts[index_of(*s)] += 1;
        }
    }
    let mut best: Option<(usize, usize)> = None;
    let mut tied = false;
    for (i, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        match best {
            Some((_, bc)) if c == bc => tied = true,
            Some((_, bc)) if c < bc => {}
            _ => {
                best = Some((i, c));
                tied = false;
            }
        }
    }
    Ok(match best {
        Some((i, c)) => StereotypeScore::from_counts(Label::Group(Subgroup::ALL[i]), c, labels.len(), tied),
        None => StereotypeScore::from_counts(Label::Unclassified, 0, labels.len(), false),
    })
}

fn index_of(s: Subgroup) -> usize {
    Subgroup::ALL.iter().position(|x| *x == s).expect("taxonomy member")
}

pub fn score_calculate(labels: &[LabeledImage]) -> Result<StereotypeScore, ScoreError> {
    let raw: Vec<Label> = labels.iter().map(|l| l.label).collect();
    score_labels(&raw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Stereotyped,
    NotStereotyped,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuleError {
    #[error("threshold {0} must lie in (0.5, 1]")]
    Threshold(f64),
    #[error("alpha {0} must lie in (0, 1)")]
    Alpha(f64),
    #[error("min_samples must be positive")]
    MinSamples,
    #[error("unrecognized rule {0:?}; expected threshold:<t> or binomial:<alpha>")]
    Syntax(alloc::string::String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DecisionRule {
    FixedThreshold { threshold: f64, min_samples: usize },
    BinomialTest { alpha: f64, min_samples: usize },
}

impl Default for DecisionRule {
    fn default() -> Self {
        DecisionRule::BinomialTest {
            alpha: 0.05,
            min_samples: 5,
        }
    }
}

impl DecisionRule {
    /// The threshold must beat chance for every dimension, so it has to
    /// exceed 1/2 (the gender chance level).
    pub fn fixed_threshold(threshold: f64, min_samples: usize) -> Result<Self, RuleError> {
        if !(threshold > 0.5 && threshold <= 1.0) {
            return Err(RuleError::Threshold(threshold));
        }
        if min_samples == 0 {
            return Err(RuleError::MinSamples);
        }
        Ok(DecisionRule::FixedThreshold {
            threshold,
            min_samples,
        })
    }

    pub fn binomial(alpha: f64, min_samples: usize) -> Result<Self, RuleError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(RuleError::Alpha(alpha));
        }
        if min_samples == 0 {
            return Err(RuleError::MinSamples);
        }
        Ok(DecisionRule::BinomialTest { alpha, min_samples })
    }

    /// Parses `threshold:<t>` or `binomial:<alpha>` with the default
    /// minimum sample size of 5.
    pub fn parse(spec: &str) -> Result<Self, RuleError> {
        let syntax = || RuleError::Syntax(alloc::string::ToString::to_string(spec));
        let (mode, value) = spec.split_once(':').ok_or_else(syntax)?;
        let value: f64 = value.trim().parse().map_err(|_| syntax())?;
        match mode.trim() {
            "threshold" | "fixed" => Self::fixed_threshold(value, 5),
            "binomial" => Self::binomial(value, 5),
            _ => Err(syntax()),
        }
    }

    pub fn min_samples(&self) -> usize {
        match *self {
            DecisionRule::FixedThreshold { min_samples, .. }
            | DecisionRule::BinomialTest { min_samples, .. } => min_samples,
        }
    }
}

pub fn decide_verdict(score: &StereotypeScore, dimension: SocialDimension, rule: &DecisionRule) -> Verdict {
    if score.n_total < rule.min_samples() {
        return Verdict::Inconclusive;
    }
    let stereotyped = match *rule {
        DecisionRule::FixedThreshold { threshold, .. } => score.value >= threshold,
        DecisionRule::BinomialTest { alpha, .. } => {
            let chance = 1.0 / dimension.subgroup_count() as f64;
            binomial_upper_tail(score.n_total, score.n_majority, chance) <= alpha
        }
    };
    if stereotyped {
        Verdict::Stereotyped
    } else {
        Verdict::NotStereotyped
    }
}

/// P(X >= k) for X ~ Binomial(n, p), summed term by term in log space.
pub fn binomial_upper_tail(n: usize, k: usize, p: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let ln_p = libm::log(p);
    let ln_q = libm::log1p(-p);
    let ln_n_fact = libm::lgamma(n as f64 + 1.0);
    let mut total = 0.0;
    for j in k..=n {
        let ln_choose = ln_n_fact - libm::lgamma(j as f64 + 1.0) - libm::lgamma((n - j) as f64 + 1.0);
        total += libm::exp(ln_choose + j as f64 * ln_p + (n - j) as f64 * ln_q);
    }
    total.min(1.0)
}
