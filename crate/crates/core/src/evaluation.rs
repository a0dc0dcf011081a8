//! Agreement between agent and human annotations, intent-extraction
//! accuracy and per-subgroup classifier accuracy.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ChatProvider, Classifier, ImageRecord};
use crate::domain::{DetectionIntent, InstructionPair, Label, LabeledImage, SocialDimension, Subgroup};
use crate::planner::{run_trajectory, PlannerConfig, StereotypeReport};
use crate::tools::toolbox::Toolbox;
use crate::tools::{
    classify_batch, decide_verdict, intention_understand, score_calculate, DecisionRule, ExtractionOptions,
    ToolError, Verdict,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("malformed annotation file: {0}")]
    MalformedFile(String),
    #[error("{} image(s) have no human label: {}", .0.len(), .0.join(", "))]
    CoverageGap(Vec<String>),
    #[error("test set has no images for {0:?}")]
    MissingSubgroupCoverage(Vec<Subgroup>),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Tool(#[from] ToolError),
}

/// One annotator's label for one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub image_ref: String,
    pub annotator_id: String,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregatedLabel {
    pub label: Label,
    pub annotators: usize,
}

/// Majority vote per image. A tie for the top count yields
/// [`Label::Unclassified`].
pub fn aggregate_annotations(entries: &[Annotation]) -> Result<BTreeMap<String, AggregatedLabel>, EvalError> {
    if entries.is_empty() {
        return Err(EvalError::MalformedFile("no annotations".to_string()));
    }
    let mut votes: BTreeMap<&str, BTreeMap<Label, usize>> = BTreeMap::new();
    for e in entries {
        if e.image_ref.trim().is_empty() {
            return Err(EvalError::MalformedFile("annotation without image_ref".to_string()));
        }
        *votes.entry(&e.image_ref).or_default().entry(e.label).or_default() += 1;
    }
    Ok(votes
        .into_iter()
        .map(|(image, counts)| {
            let top = counts.values().copied().max().unwrap_or(0);
            let leaders: Vec<Label> = counts.iter().filter(|(_, &c)| c == top).map(|(l, _)| *l).collect();
            let label = if leaders.len() == 1 { leaders[0] } else { Label::Unclassified };
            let annotators = counts.values().sum();
            (image.to_string(), AggregatedLabel { label, annotators })
        })
        .collect())
}

/// Drops annotator counts.
pub fn label_map(aggregated: &BTreeMap<String, AggregatedLabel>) -> BTreeMap<String, Label> {
    aggregated.iter().map(|(k, v)| (k.clone(), v.label)).collect()
}

/// Ground-truth labels read from the signatures of synthetic images.
pub fn signature_labels(reports: &[StereotypeReport]) -> BTreeMap<String, Label> {
    let mut out = BTreeMap::new();
    for r in reports {
        for image in &r.images {
            if let Some(sig) = image.signature {
                let label = sig
                    .subgroup()
                    .filter(|s| s.dimension() == r.dimension)
                    .map_or(Label::Unclassified, Label::Group);
                out.insert(image.handle.clone(), label);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptAgreement {
    pub query: String,
    pub model: String,
    pub pair: InstructionPair,
    pub dimension: SocialDimension,
    pub agent_score: f64,
    pub human_score: f64,
    pub gap: f64,
    pub agent_verdict: Verdict,
    pub human_verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionGap {
    pub dimension: SocialDimension,
    pub prompts: usize,
    pub mean_gap: f64,
    pub verdict_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub rule: DecisionRule,
    pub prompts: usize,
    pub mean_gap: f64,
    pub verdict_accuracy: f64,
    pub per_dimension: Vec<DimensionGap>,
    pub rows: Vec<PromptAgreement>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl AgreementReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "prompts: {}", self.prompts);
        let _ = writeln!(out, "verdict accuracy: {:.4}", self.verdict_accuracy);
        let _ = writeln!(out, "mean |agent - human| score gap: {:.4}", self.mean_gap);
        let _ = writeln!(out, "{:<9} {:>7} {:>9} {:>9}", "dimension", "prompts", "mean gap", "accuracy");
        for d in &self.per_dimension {
            let _ = writeln!(
                out,
                "{:<9} {:>7} {:>9.4} {:>9.4}",
                d.dimension.name(),
                d.prompts,
                d.mean_gap,
                d.verdict_accuracy
            );
        }
        out
    }
}

/// Scores every report against human labels for the same images. Both sides
/// get their verdict from `rule`.
pub fn compare(
    reports: &[StereotypeReport],
    human: &BTreeMap<String, Label>,
    rule: &DecisionRule,
) -> Result<AgreementReport, EvalError> {
    let missing: Vec<String> = reports
        .iter()
        .flat_map(|r| r.labels.iter())
        .filter(|l| !human.contains_key(&l.image_ref))
        .map(|l| l.image_ref.clone())
        .collect();
    if !missing.is_empty() {
        return Err(EvalError::CoverageGap(missing));
    }
    let mut rows = Vec::with_capacity(reports.len());
    for r in reports {
        let human_labels: Vec<LabeledImage> = r
            .labels
            .iter()
            .map(|l| LabeledImage {
                image_ref: l.image_ref.clone(),
                label: human[&l.image_ref],
                confidence: 1.0,
            })
            .collect();
        let agent = score_calculate(&r.labels).map_err(ToolError::from)?;
        let person = score_calculate(&human_labels).map_err(ToolError::from)?;
        rows.push(PromptAgreement {
            query: r.query.clone(),
            model: r.model.clone(),
            pair: r.pair.clone(),
            dimension: r.dimension,
            agent_score: agent.value,
            human_score: person.value,
            gap: (agent.value - person.value).abs(),
            agent_verdict: decide_verdict(&agent, r.dimension, rule),
            human_verdict: decide_verdict(&person, r.dimension, rule),
        });
    }
    let accuracy = |rows: &[&PromptAgreement]| {
        if rows.is_empty() {
            0.0
        } else {
            rows.iter().filter(|r| r.agent_verdict == r.human_verdict).count() as f64 / rows.len() as f64
        }
    };
    let all: Vec<&PromptAgreement> = rows.iter().collect();
    let per_dimension = SocialDimension::ALL
        .iter()
        .filter_map(|&d| {
            let these: Vec<&PromptAgreement> = rows.iter().filter(|r| r.dimension == d).collect();
            (!these.is_empty()).then(|| DimensionGap {
                dimension: d,
                prompts: these.len(),
                mean_gap: mean(these.iter().map(|r| r.gap)),
                verdict_accuracy: accuracy(&these),
            })
        })
        .collect();
    Ok(AgreementReport {
        rule: *rule,
        prompts: rows.len(),
        mean_gap: mean(rows.iter().map(|r| r.gap)),
        verdict_accuracy: accuracy(&all),
        per_dimension,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentMismatch {
    pub query: String,
    pub expected: DetectionIntent,
    /// The extracted intent, or the error text.
    pub got: Result<DetectionIntent, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentAccuracy {
    pub correct: usize,
    pub total: usize,
    pub fraction: f64,
    pub failures: Vec<IntentMismatch>,
}

/// Intents match when model, dimension, subgroup and the presence of open
/// text agree.
pub fn intents_match(expected: &DetectionIntent, got: &DetectionIntent) -> bool {
    expected.model == got.model
        && expected.dimension == got.dimension
        && expected.requested_subgroup == got.requested_subgroup
        && expected.open_text.is_some() == got.open_text.is_some()
}

pub fn intent_accuracy(
    golden: &[(String, DetectionIntent)],
    provider: &dyn ChatProvider,
    options: &ExtractionOptions,
) -> IntentAccuracy {
    let mut failures = Vec::new();
    for (query, expected) in golden {
        let got = intention_understand(query, provider, options).map_err(|e| e.to_string());
        let ok = matches!(&got, Ok(intent) if intents_match(expected, intent));
        if !ok {
            failures.push(IntentMismatch {
                query: query.clone(),
                expected: expected.clone(),
                got,
            });
        }
    }
    let total = golden.len();
    let correct = total - failures.len();
    IntentAccuracy {
        correct,
        total,
        fraction: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        failures,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupAccuracy {
    pub subgroup: Subgroup,
    pub samples: usize,
    pub accuracy_a: f64,
    pub accuracy_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierComparison {
    pub dimension: SocialDimension,
    pub rows: Vec<SubgroupAccuracy>,
    pub mean_a: f64,
    pub mean_b: f64,
    /// `mean_b - mean_a`, averaged over subgroups.
    pub mean_gap: f64,
}

impl ClassifierComparison {
    pub fn render(&self, name_a: &str, name_b: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<16} {:>7} {:>8} {:>8}", "subgroup", "samples", name_a, name_b);
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<16} {:>7} {:>8.4} {:>8.4}",
                r.subgroup.name(),
                r.samples,
                r.accuracy_a,
                r.accuracy_b
            );
        }
        let _ = writeln!(out, "{:<16} {:>7} {:>8.4} {:>8.4}", "mean", "", self.mean_a, self.mean_b);
        let _ = write!(out, "mean gap: {:+.4}", self.mean_gap);
        out
    }
}

/// Per-subgroup accuracy of two classifiers on signed images.
pub fn classifier_accuracy(
    a: &dyn Classifier,
    b: &dyn Classifier,
    images: &[ImageRecord],
    dimension: SocialDimension,
) -> Result<ClassifierComparison, EvalError> {
    let truth: Vec<Option<Subgroup>> = images
        .iter()
        .map(|i| {
            i.signature
                .ok_or_else(|| BackendError::MissingSignature(i.handle.clone()))
                .map(|s| s.subgroup().filter(|g| g.dimension() == dimension))
        })
        .collect::<Result<_, _>>()?;
    let uncovered: Vec<Subgroup> = dimension
        .subgroups()
        .iter()
        .copied()
        .filter(|s| !truth.contains(&Some(*s)))
        .collect();
    if !uncovered.is_empty() {
        return Err(EvalError::MissingSubgroupCoverage(uncovered));
    }
    let labels_a = classify_batch(a, images, dimension)?;
    let labels_b = classify_batch(b, images, dimension)?;
    let rows: Vec<SubgroupAccuracy> = dimension
        .subgroups()
        .iter()
        .map(|&s| {
            let idx: Vec<usize> = (0..images.len()).filter(|&i| truth[i] == Some(s)).collect();
            let hit = |labels: &[LabeledImage]| {
                idx.iter().filter(|&&i| labels[i].label == Label::Group(s)).count() as f64 / idx.len() as f64
            };
            SubgroupAccuracy {
                subgroup: s,
                samples: idx.len(),
                accuracy_a: hit(&labels_a),
                accuracy_b: hit(&labels_b),
            }
        })
        .collect();
    let mean_a = mean(rows.iter().map(|r| r.accuracy_a));
    let mean_b = mean(rows.iter().map(|r| r.accuracy_b));
    Ok(ClassifierComparison {
        dimension,
        rows,
        mean_a,
        mean_b,
        mean_gap: mean_b - mean_a,
    })
}

/// Result of one query in a batch run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub query: String,
    pub report: Option<StereotypeReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TaskOutcome {
    pub fn from_result(query: &str, result: Result<StereotypeReport, crate::planner::PlannerError>) -> Self {
        match result {
            Ok(report) => Self {
                query: query.to_string(),
                report: Some(report),
                error: None,
            },
            Err(e) => Self {
                query: query.to_string(),
                report: None,
                error: Some(e.to_string()),
            },
        }
    }
}

/// Runs every query; a failing query is recorded and the batch goes on.
pub fn run_task_batch(
    queries: &[String],
    config: &PlannerConfig,
    provider: &dyn ChatProvider,
    toolbox: &dyn Toolbox,
) -> Vec<TaskOutcome> {
    queries
        .iter()
        .map(|q| TaskOutcome::from_result(q, run_trajectory(q, config, provider, toolbox)))
        .collect()
}

/// Successful reports of a batch, in order.
pub fn successful(outcomes: &[TaskOutcome]) -> Vec<StereotypeReport> {
    outcomes.iter().filter_map(|o| o.report.clone()).collect()
}
