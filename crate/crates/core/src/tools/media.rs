//! Image generation and subgroup classification dispatch.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::backend::{BackendError, Classifier, GenerationRequest, ImageBackend, ImageRecord, Lora};
use crate::domain::{is_unspecified, Label, LabeledImage, SocialDimension};

use super::ToolError;

#[derive(Debug, Clone, Default)]
pub struct GenerationOptions {
    /// Extra attempts after a transient failure or a short batch.
    pub max_retries: usize,
    pub negative_prompt: Option<String>,
    pub lora: Vec<Lora>,
}

/// Requests exactly `n` images, re-asking for the remainder after transient
/// failures or short batches.
pub fn generate_batch(
    backend: &dyn ImageBackend,
    model: &str,
    optimized_prompt: &str,
    n: usize,
    seed: u64,
    options: &GenerationOptions,
) -> Result<Vec<ImageRecord>, ToolError> {
    if n == 0 {
        return Err(BackendError::InvalidRequest("batch size must be at least 1".into()).into());
    }
    let mut records: Vec<ImageRecord> = Vec::with_capacity(n);
    let mut failures = 0usize;
    let mut last_error: Option<BackendError> = None;
    while records.len() < n && failures <= options.max_retries {
        let request = GenerationRequest {
            model: model.into(),
            prompt: optimized_prompt.into(),
            negative_prompt: options.negative_prompt.clone(),
            n: n - records.len(),
            seed,
            first_index: records.len(),
            lora: options.lora.clone(),
        };
        match backend.generate(&request) {
            Ok(batch) if batch.is_empty() => failures += 1,
            Ok(batch) => {
                let room = n - records.len();
                if batch.len() < room {
                    failures += 1;
                }
                records.extend(batch.into_iter().take(room));
            }
            Err(e) if e.is_transient() || matches!(e, BackendError::PartialBatch { .. }) => {
                log::debug!("generation attempt failed: {e}");
                failures += 1;
                last_error = Some(e);
            }
            Err(e) => {
                if records.is_empty() {
                    return Err(e.into());
                }
                last_error = Some(e);
                break;
            }
        }
    }
    if records.len() == n {
        return Ok(records);
    }
    if records.is_empty() {
        let cause = last_error.map_or_else(|| String::from("no images returned"), |e| format!("{e}"));
        return Err(BackendError::Unavailable(format!("{cause} after {failures} attempts")).into());
    }
    Err(BackendError::PartialBatch {
        got: records.len(),
        requested: n,
    }
    .into())
}

/// Labels every image against the dimension's taxonomy, in input order.
/// Classifier output outside the taxonomy becomes [`Label::Unclassified`].
pub fn classify_batch(
    classifier: &dyn Classifier,
    images: &[ImageRecord],
    dimension: SocialDimension,
) -> Result<Vec<LabeledImage>, ToolError> {
    if images.is_empty() {
        return Err(BackendError::InvalidRequest("no images to classify".into()).into());
    }
    let raw = classifier.classify(images, dimension, dimension.subgroups())?;
    if raw.len() != images.len() {
        return Err(BackendError::BadResponse(format!(
            "{} labels for {} images",
            raw.len(),
            images.len()
        ))
        .into());
    }
    Ok(images
        .iter()
        .zip(raw)
        .map(|(image, out)| {
            let label = Label::classify_text(dimension, &out.label);
            if label == Label::Unclassified && !is_unspecified(&out.label) {
                log::warn!(
                    "classifier label {:?} for {} is outside {dimension}; marking unclassified",
                    out.label,
                    image.handle
                );
            }
            LabeledImage {
                image_ref: image.handle.clone(),
                label,
                confidence: out.confidence.clamp(0.0, 1.0),
            }
        })
        .collect())
}
