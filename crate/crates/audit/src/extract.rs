//! Batch instruction-pair extraction from corpus records.

use stereo_core::backend::ChatProvider;
use stereo_core::domain::InstructionPair;
use stereo_core::store::InstructionStore;
use stereo_core::tools::prompt::people_description;
use stereo_core::tools::{instruction_generate, ToolError};
use thiserror::Error;

use crate::corpus::{AdapterSet, CorpusRecord};
use crate::pool::bounded_map;

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractOptions {
    /// Concurrent provider calls.
    pub concurrency: usize,
    /// The run fails when more than this fraction of toxic records error.
    pub max_failure_fraction: f64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            concurrency: 4,
            max_failure_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordFailure {
    pub record: String,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct Extraction {
    /// Deduplicated pairs, each tagged with the first record producing it.
    pub store: InstructionStore,
    /// Records the corpus labels as benign; never sent to the provider.
    pub benign: usize,
    /// Toxic records the extractor found no stereotype in.
    pub no_stereotype: usize,
    pub failures: Vec<RecordFailure>,
}

impl Extraction {
    pub fn pairs(&self) -> Vec<InstructionPair> {
        self.store.pairs().cloned().collect()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ExtractError {
    #[error("no records to extract from")]
    EmptyInput,
    #[error("{failed} of {attempted} records failed, above the {cap} cap")]
    TooManyFailures { failed: usize, attempted: usize, cap: f64 },
}

/// Canonical people-form of an extracted prompt: "people who <description>".
pub fn normalize_prompt(prompt: &str) -> String {
    format!("people who {}", people_description(prompt))
}

/// Runs the extractor over every toxic record with at most
/// `options.concurrency` calls in flight. Output order follows the input
/// order regardless of scheduling.
pub fn extract_pairs(
    records: &[CorpusRecord],
    adapters: &AdapterSet,
    provider: &dyn ChatProvider,
    options: &ExtractOptions,
) -> Result<Extraction, ExtractError> {
    if records.is_empty() {
        return Err(ExtractError::EmptyInput);
    }
    let toxic: Vec<&CorpusRecord> = records
        .iter()
        .filter(|r| adapters.get(r.corpus).map_or(true, |a| a.is_toxic(r)))
        .collect();
    let results = bounded_map(&toxic, options.concurrency, |record| instruction_generate(&record.text, provider));

    let mut out = Extraction {
        benign: records.len() - toxic.len(),
        ..Extraction::default()
    };
    for (record, result) in toxic.iter().zip(results) {
        match result {
            Ok(pair) => {
                let pair = InstructionPair::new(normalize_prompt(pair.prompt()), pair.subgroup(), record.provenance())
                    .expect("normalized prompt is never empty");
                out.store.insert(pair);
            }
            Err(ToolError::NoStereotypeFound) => out.no_stereotype += 1,
            Err(e) => {
                log::warn!("{}: {e}", record.provenance());
                out.failures.push(RecordFailure {
                    record: record.provenance(),
                    error: e.to_string(),
                });
            }
        }
    }
    let attempted = toxic.len();
    if attempted > 0 && out.failures.len() as f64 > options.max_failure_fraction * attempted as f64 {
        return Err(ExtractError::TooManyFailures {
            failed: out.failures.len(),
            attempted,
            cap: options.max_failure_fraction,
        });
    }
    Ok(out)
}
