//! The audit tools the planner can call.

pub mod extract;
pub mod media;
pub mod prompt;
pub mod score;
pub mod toolbox;

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::backend::{BackendError, ChatError};
use crate::domain::{DomainError, InstructionPair, SocialDimension, Subgroup};
use crate::store::{InstructionStore, StoreError};

pub use extract::{instruction_generate, intention_understand, ExtractionOptions};
pub use media::{classify_batch, generate_batch, GenerationOptions};
pub use prompt::{optimize_text, prompt_optimize};
pub use score::{decide_verdict, score_calculate, DecisionRule, ScoreError, StereotypeScore, Verdict};
pub use toolbox::{AuditToolbox, Session, Toolbox};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ToolError {
    #[error("extraction failed: {0}")]
    ExtractionFailed(String),
    #[error("the text contains no stereotype")]
    NoStereotypeFound,
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Chat(#[from] ChatError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("bad arguments: {0}")]
    BadArguments(String),
    #[error("{tool} needs {missing} from an earlier step")]
    OutOfOrder { tool: &'static str, missing: &'static str },
}

/// Ranked instruction pairs for a dimension (all dimensions when `None`).
pub fn instruction_retrieve(
    store: &InstructionStore,
    dimension: Option<SocialDimension>,
    subgroup: Option<Subgroup>,
    model: &str,
) -> Result<Vec<InstructionPair>, ToolError> {
    Ok(store
        .retrieve(dimension, subgroup, model)?
        .into_iter()
        .map(|e| e.pair.clone())
        .collect())
}
