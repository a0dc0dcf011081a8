//! Tool dispatch: turns a validated [`ToolAction`] into an observation,
//! carrying intermediate results between steps in a [`Session`].

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::backend::{ChatProvider, Classifier, ImageBackend, ImageRecord};
use crate::domain::{
    is_unspecified, parse_instruction_pair, resolve_subgroup, DetectionIntent, InstructionPair, Label,
    LabeledImage, SocialDimension, USER_TEXT_SOURCE,
};
use crate::notation::Value;
use crate::store::InstructionStore;
use crate::synth::mix_seed;
use crate::trajectory::{ToolAction, ToolKind};

use super::{
    classify_batch, generate_batch, instruction_generate, instruction_retrieve, intention_understand,
    prompt_optimize, score_calculate, ExtractionOptions, GenerationOptions, StereotypeScore, ToolError,
};

/// Intermediate results of one trajectory.
#[derive(Debug, Clone, Default)]
pub struct Session {
    pub intent: Option<DetectionIntent>,
    pub pair: Option<InstructionPair>,
    pub model: Option<String>,
    pub optimized_prompt: Option<String>,
    pub generation_seed: Option<u64>,
    pub images: Vec<ImageRecord>,
    pub dimension: Option<SocialDimension>,
    pub labels: Vec<LabeledImage>,
    pub score: Option<StereotypeScore>,
}

/// Executes tool actions. Implementations must be shareable across
/// concurrently running trajectories.
pub trait Toolbox: Sync {
    fn dispatch(&self, session: &mut Session, action: &ToolAction) -> Result<Value, ToolError>;
}

impl<T: Toolbox + ?Sized> Toolbox for &T {
    fn dispatch(&self, session: &mut Session, action: &ToolAction) -> Result<Value, ToolError> {
        (**self).dispatch(session, action)
    }
}

/// The production toolbox: chat-backed extraction, the instruction store,
/// an image backend and a classifier.
pub struct AuditToolbox<'a> {
    pub chat: &'a dyn ChatProvider,
    pub images: &'a dyn ImageBackend,
    pub classifier: &'a dyn Classifier,
    pub store: &'a InstructionStore,
    pub extraction: ExtractionOptions,
    pub generation: GenerationOptions,
    /// Images per instruction pair.
    pub n_images: usize,
    pub seed: u64,
}

pub const DEFAULT_IMAGES_PER_PROMPT: usize = 10;

impl<'a> AuditToolbox<'a> {
    pub fn new(
        chat: &'a dyn ChatProvider,
        images: &'a dyn ImageBackend,
        classifier: &'a dyn Classifier,
        store: &'a InstructionStore,
    ) -> Self {
        Self {
            chat,
            images,
            classifier,
            store,
            extraction: ExtractionOptions::default(),
            generation: GenerationOptions::default(),
            n_images: DEFAULT_IMAGES_PER_PROMPT,
            seed: 0,
        }
    }

    fn model_arg(&self, action: &ToolAction, session: &Session) -> Result<String, ToolError> {
        let raw = action
            .arg_text("model")
            .filter(|m| !is_unspecified(m))
            .map(ToString::to_string)
            .or_else(|| session.intent.as_ref().map(|i| i.model.clone()))
            .unwrap_or_else(|| self.extraction.default_model.clone());
        Ok(self
            .extraction
            .catalog
            .canonical_id(&raw)
            .map_or(raw, ToString::to_string))
    }

    fn retrieve(&self, session: &mut Session, action: &ToolAction) -> Result<Value, ToolError> {
        let model = self.model_arg(action, session)?;
        let dimension = optional_dimension(action)?;
        let subgroup = match action.arg_text("subgroup") {
            Some(s) if !is_unspecified(s) => Some(resolve_subgroup(s)?),
            _ => session.intent.as_ref().and_then(|i| i.requested_subgroup),
        };
        let pair = instruction_retrieve(self.store, dimension, subgroup, &model)?
            .into_iter()
            .next()
            .expect("retrieval returns at least one pair");
        let observation = pair.to_notation();
        session.model = Some(model);
        session.pair = Some(pair);
        Ok(observation)
    }

    fn generate(&self, session: &mut Session, action: &ToolAction) -> Result<Value, ToolError> {
        let model = self.model_arg(action, session)?;
        let pair = pair_arg(action, session)?;
        let prompt = prompt_optimize(&pair);
        let seed = mix_seed(self.seed, &[&model, &prompt]);
        let mut options = self.generation.clone();
        if let Some(target) = self.extraction.catalog.get(&model) {
            options.lora.extend(target.lora.iter().cloned());
        }
        let images = generate_batch(self.images, &model, &prompt, self.n_images, seed, &options)?;
        let observation = Value::Set(images.iter().map(|i| Value::quoted(&i.handle)).collect());
        session.dimension = optional_dimension(action)?.or(Some(pair.dimension()));
        session.model = Some(model);
        session.pair = Some(pair);
        session.optimized_prompt = Some(prompt);
        session.generation_seed = Some(seed);
        session.images = images;
        session.labels.clear();
        Ok(observation)
    }

    fn detect(&self, session: &mut Session, action: &ToolAction) -> Result<Value, ToolError> {
        if session.images.is_empty() {
            return Err(ToolError::OutOfOrder {
                tool: ToolKind::SubgroupDetection.wire_name(),
                missing: "generated images",
            });
        }
        let dimension = optional_dimension(action)?
            .or(session.dimension)
            .or_else(|| session.pair.as_ref().map(InstructionPair::dimension))
            .ok_or_else(|| ToolError::BadArguments("no dimension to classify under".to_string()))?;
        let labels = classify_batch(self.classifier, &session.images, dimension)?;
        let observation = label_map(&labels);
        session.dimension = Some(dimension);
        session.labels = labels;
        Ok(observation)
    }
}

impl Toolbox for AuditToolbox<'_> {
    fn dispatch(&self, session: &mut Session, action: &ToolAction) -> Result<Value, ToolError> {
        match action.tool {
            ToolKind::IntentionUnderstanding => {
                let task = action
                    .arg_text("task description")
                    .ok_or_else(|| ToolError::BadArguments("task description must be text".to_string()))?;
                let intent = intention_understand(task, self.chat, &self.extraction)?;
                let observation = intent.to_notation();
                session.intent = Some(intent);
                Ok(observation)
            }
            ToolKind::InstructionRetrieval => self.retrieve(session, action),
            ToolKind::InstructionGeneration => {
                let text = action
                    .arg_text("text")
                    .ok_or_else(|| ToolError::BadArguments("text must be a string".to_string()))?;
                let pair = instruction_generate(text, self.chat)?;
                let observation = pair.to_notation();
                session.pair = Some(pair);
                Ok(observation)
            }
            ToolKind::ImageGeneration => self.generate(session, action),
            ToolKind::SubgroupDetection => self.detect(session, action),
            ToolKind::StereotypeScoreCalculator => score_step(session, action),
        }
    }
}

fn optional_dimension(action: &ToolAction) -> Result<Option<SocialDimension>, ToolError> {
    match action.arg_text("dimension") {
        Some(d) if !is_unspecified(d) => Ok(Some(SocialDimension::parse(d)?)),
        _ => Ok(None),
    }
}

/// The pair named in an `instruction_pair` argument. Provenance is kept
/// when it matches the pair already in the session.
fn pair_arg(action: &ToolAction, session: &Session) -> Result<InstructionPair, ToolError> {
    let parsed = match action.arg("instruction_pair") {
        Some(Value::Map(_)) => InstructionPair::from_notation(action.arg("instruction_pair").unwrap(), USER_TEXT_SOURCE)?,
        Some(other) => match other.as_text() {
            Some(text) => parse_instruction_pair(text)?,
            None => return Err(ToolError::BadArguments("instruction_pair must be a map".to_string())),
        },
        None => return Err(ToolError::BadArguments("missing instruction_pair".to_string())),
    };
    Ok(match &session.pair {
        Some(known) if known.prompt() == parsed.prompt() && known.subgroup() == parsed.subgroup() => known.clone(),
        _ => parsed,
    })
}

/// `{'image_1.png': 'African', ...}`
pub fn label_map(labels: &[LabeledImage]) -> Value {
    Value::Map(
        labels
            .iter()
            .map(|l| (Value::quoted(&l.image_ref), Value::quoted(l.label.display_name())))
            .collect(),
    )
}

/// Reads a label map back into labeled images. Unknown names count as
/// unclassified.
pub fn labels_from_map(value: &Value) -> Result<Vec<LabeledImage>, ToolError> {
    let entries = value
        .entries()
        .ok_or_else(|| ToolError::BadArguments("label must be a map of image to subgroup".to_string()))?;
    Ok(entries
        .iter()
        .map(|(k, v)| LabeledImage {
            image_ref: k.as_text().unwrap_or_default().to_string(),
            label: v.as_text().and_then(|t| Label::parse(t).ok()).unwrap_or(Label::Unclassified),
            confidence: 1.0,
        })
        .collect())
}

/// `{Score: 0.900}`
pub fn score_observation(score: &StereotypeScore) -> Value {
    Value::Map(alloc::vec![(Value::bare("Score"), Value::bare(format!("{:.3}", score.value)))])
}

fn score_step(session: &mut Session, action: &ToolAction) -> Result<Value, ToolError> {
    // The session's own labels are authoritative; the argument map is only
    // read when no detection step ran in this session.
    if session.labels.is_empty() {
        let arg = action
            .arg("label")
            .ok_or_else(|| ToolError::BadArguments("missing label".to_string()))?;
        session.labels = labels_from_map(arg)?;
    }
    let score = score_calculate(&session.labels)?;
    session.score = Some(score);
    Ok(score_observation(&score))
}
