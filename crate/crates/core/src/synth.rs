//! Deterministic test doubles: a scripted and a rule-based chat provider,
//! a synthetic image generator with an embedded ground-truth signature, an
//! oracle classifier and a confusion-matrix classifier.
//!
//! Every random draw comes from its own ChaCha stream keyed by the inputs,
//! so results do not depend on call order or thread scheduling.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{
    contains_phrase, BackendError, ChatError, ChatProvider, ChatRequest, Classifier, GenerationRequest,
    ImageBackend, ImageRecord, ModelCatalog, RawLabel, Role,
};
use crate::domain::{
    normalize_token, resolve_subgroup, subgroup_spellings, DetectionIntent, Label, LabeledImage, SocialDimension,
    Subgroup,
};
use crate::notation::{self, Value};
use crate::tools::extract::{INSTRUCTION_GENERATION_PROMPT, INTENTION_PROMPT};
use crate::trajectory::{render_head, ToolAction, ToolKind};
use crate::vocabulary::{find_descriptor, DESCRIPTORS};

/// FNV-1a over `base` and `parts`, finished with a splitmix64 round.
pub fn mix_seed(base: u64, parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |b: u8| {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    };
    for b in base.to_le_bytes() {
        eat(b);
    }
    for part in parts {
        for b in part.bytes() {
            eat(b);
        }
        eat(0xff);
    }
    let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn unit_draw(seed: u64, stream: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.random::<f64>()
}

// ---------------------------------------------------------------------------
// Chat doubles

/// Replays a fixed list of replies, one per call, and fails once exhausted.
#[derive(Debug, Default)]
pub struct ScriptedProvider {
    replies: Vec<String>,
    cursor: AtomicUsize,
}

impl ScriptedProvider {
    pub fn new<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self {
            replies: replies.into_iter().map(Into::into).collect(),
            cursor: AtomicUsize::new(0),
        }
    }

    /// Number of replies handed out so far.
    pub fn calls(&self) -> usize {
        self.cursor.load(Ordering::SeqCst).min(self.replies.len())
    }
}

impl ChatProvider for ScriptedProvider {
    fn complete(&self, _request: &ChatRequest) -> Result<String, ChatError> {
        let at = self.cursor.fetch_add(1, Ordering::SeqCst);
        self.replies
            .get(at)
            .cloned()
            .ok_or(ChatError::ScriptExhausted(self.replies.len()))
    }
}

/// Rule-based stand-in for a chat model. It recognizes the planner prefix,
/// the intent prompt and the extractor prompt and answers each the way a
/// well-behaved model would.
#[derive(Debug, Clone)]
pub struct SimulatedChat {
    pub catalog: ModelCatalog,
}

impl Default for SimulatedChat {
    fn default() -> Self {
        Self {
            catalog: ModelCatalog::builtin(),
        }
    }
}

impl ChatProvider for SimulatedChat {
    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError> {
        let first = request
            .messages
            .first()
            .ok_or_else(|| ChatError::InvalidRequest("no messages".into()))?;
        if request.system == INTENTION_PROMPT {
            Ok(self.intent_reply(&first.content))
        } else if request.system == INSTRUCTION_GENERATION_PROMPT {
            Ok(extract_reply(&first.content))
        } else {
            self.planner_reply(request)
        }
    }
}

const THOUGHTS: [&str; 5] = [
    "I first identify the model and social dimensions to detect.",
    "After identify the model and dimensions, the next step is to generate instructions from dataset.",
    "After getting specific instructions, use the corresponding model to generate the corresponding images.",
    "Next, each image needs to be classified into subgroups.",
    "Calculate stereotype score based on classification results.",
];
const GENERATION_THOUGHT: &str = "Since there is text to be processed, I need to extract the instruction pair.";

/// Text after a `Task specific:` label, or the whole message.
pub fn task_text(message: &str) -> &str {
    let trimmed = message.trim();
    match trimmed.get(..14) {
        Some(head) if head.eq_ignore_ascii_case("task specific:") => trimmed[14..].trim(),
        _ => trimmed,
    }
}

fn observation_of(message: &str) -> Option<Value> {
    let (_, rest) = message.split_once(':')?;
    notation::parse_prefix(rest.trim()).ok().map(|(v, _)| v)
}

impl SimulatedChat {
    fn planner_reply(&self, request: &ChatRequest) -> Result<String, ChatError> {
        let query = task_text(&request.messages[0].content).to_string();
        let observations: Vec<Value> = request
            .messages
            .iter()
            .skip(1)
            .filter(|m| m.role == Role::User)
            .filter_map(|m| observation_of(&m.content))
            .collect();
        let step = observations.len() + 1;
        let bad = |what: &str| ChatError::BadResponse(format!("cannot plan step {step}: {what}"));
        let text = |v: Option<&Value>| v.and_then(Value::as_text).map(ToString::to_string);
        let (thought, tool, args): (&str, ToolKind, Vec<(&str, Value)>) = match step {
            1 => (THOUGHTS[0], ToolKind::IntentionUnderstanding, alloc::vec![("task description", Value::quoted(query))]),
            2 => {
                let intent = &observations[0];
                if let Some(t) = text(intent.get("text")) {
                    (GENERATION_THOUGHT, ToolKind::InstructionGeneration, alloc::vec![("text", Value::quoted(t))])
                } else {
                    let mut args = alloc::vec![
                        ("model", Value::quoted(text(intent.get("model")).ok_or_else(|| bad("no model"))?)),
                        ("dimension", Value::quoted(text(intent.get("dimension")).unwrap_or_else(|| "Any".into()))),
                    ];
                    if let Some(s) = text(intent.get("subgroup")) {
                        args.push(("subgroup", Value::quoted(s)));
                    }
                    (THOUGHTS[1], ToolKind::InstructionRetrieval, args)
                }
            }
            3 => {
                let model = text(observations[0].get("model")).ok_or_else(|| bad("no model"))?;
                (
                    THOUGHTS[2],
                    ToolKind::ImageGeneration,
                    alloc::vec![("model", Value::quoted(model)), ("instruction_pair", observations[1].clone())],
                )
            }
            4 => {
                let subgroup = text(observations[1].get("subgroup")).ok_or_else(|| bad("no subgroup"))?;
                let dimension = resolve_subgroup(&subgroup).map_err(|e| bad(&e.to_string()))?.dimension();
                (
                    THOUGHTS[3],
                    ToolKind::SubgroupDetection,
                    alloc::vec![("image_path", Value::quoted("./")), ("dimension", Value::quoted(dimension.name()))],
                )
            }
            5 => (THOUGHTS[4], ToolKind::StereotypeScoreCalculator, alloc::vec![("label", observations[3].clone())]),
            _ => return Err(bad("the task is already finished")),
        };
        let action = ToolAction::new(tool, args).map_err(|e| bad(&e.to_string()))?;
        Ok(render_head(step, thought, &action))
    }

    fn intent_reply(&self, task: &str) -> String {
        let open_text = quoted_span(task);
        let request = match open_text {
            Some(t) => task.replacen(t, " ", 1),
            None => task.to_string(),
        };
        let norm = normalize_token(&request);
        let model = self.catalog.find_in(&request);
        let subgroup = mentioned_subgroup(&norm);
        let dimension = dimension_keyword(&norm)
            .or(subgroup.map(Subgroup::dimension))
            .or_else(|| open_text.and_then(extract_pair).map(|(_, s)| s.dimension()));
        let mut entries = alloc::vec![
            (Value::bare("Model"), Value::quoted(model.unwrap_or("None"))),
            (Value::bare("Dimension"), Value::quoted(dimension.map_or("None", SocialDimension::name))),
        ];
        if let Some(s) = subgroup {
            entries.push((Value::bare("Subgroup"), Value::quoted(s.display_name())));
        }
        if let Some(t) = open_text {
            entries.push((Value::bare("text"), Value::quoted(t)));
        }
        Value::Map(entries).render()
    }
}

/// Renders the reply a chat model would give to the intent prompt for a
/// known intent.
pub fn intent_reply_for(intent: &DetectionIntent) -> String {
    intent.to_notation().render()
}

/// First span inside double or curly quotes.
fn quoted_span(text: &str) -> Option<&str> {
    for (open, close) in [('"', '"'), ('\u{201c}', '\u{201d}')] {
        if let Some(start) = text.find(open) {
            let body = start + open.len_utf8();
            if let Some(len) = text[body..].find(close) {
                let span = text[body..body + len].trim();
                if !span.is_empty() {
                    return Some(span);
                }
            }
        }
    }
    None
}

fn dimension_keyword(norm: &str) -> Option<SocialDimension> {
    const KEYWORDS: &[(&str, SocialDimension)] = &[
        ("gender", SocialDimension::Gender),
        ("genders", SocialDimension::Gender),
        ("sex", SocialDimension::Gender),
        ("sexist", SocialDimension::Gender),
        ("sexism", SocialDimension::Gender),
        ("race", SocialDimension::Race),
        ("races", SocialDimension::Race),
        ("racial", SocialDimension::Race),
        ("racially", SocialDimension::Race),
        ("ethnic", SocialDimension::Race),
        ("ethnicity", SocialDimension::Race),
        ("religion", SocialDimension::Religion),
        ("religions", SocialDimension::Religion),
        ("religious", SocialDimension::Religion),
        ("religiously", SocialDimension::Religion),
    ];
    KEYWORDS
        .iter()
        .find(|(k, _)| contains_phrase(norm, k))
        .map(|(_, d)| *d)
}

fn mentioned_subgroup(norm: &str) -> Option<Subgroup> {
    subgroup_spellings()
        .filter(|s| contains_phrase(norm, s))
        .max_by_key(|s| s.len())
        .and_then(|s| resolve_subgroup(s).ok())
}

/// Words that point at a subgroup when they modify a noun ("black cotton
/// picker").
const CUES: &[(&str, Subgroup)] = &[
    ("black", Subgroup::African),
    ("african", Subgroup::African),
    ("white", Subgroup::European),
    ("european", Subgroup::European),
    ("asian", Subgroup::Asian),
    ("chinese", Subgroup::Asian),
    ("mexican", Subgroup::Latino),
    ("latino", Subgroup::Latino),
    ("arab", Subgroup::MiddleEastern),
    ("muslim", Subgroup::Muslim),
    ("jewish", Subgroup::Jew),
    ("christian", Subgroup::Christian),
    ("catholic", Subgroup::Catholic),
    ("hindu", Subgroup::Hindu),
    ("buddhist", Subgroup::Buddhist),
];

/// The rule-based extractor behind the simulated instruction generator.
pub fn extract_pair(text: &str) -> Option<(String, Subgroup)> {
    let lower = text.to_lowercase();
    let clause = lower.split([',', '.', '!', '?', ';']).collect::<Vec<_>>();
    // "<subject> are all <group>"
    for part in &clause {
        if let Some((subject, group)) = part.split_once(" are all ") {
            let subject = subject.trim();
            let subject = subject.strip_prefix("the ").unwrap_or(subject).trim();
            let group = group.trim();
            if let (false, Ok(s)) = (subject.is_empty(), resolve_subgroup(group)) {
                return Some((format!("People who are {subject}"), s));
            }
        }
    }
    if let Some(d) = find_descriptor(text) {
        return Some((format!("People who {}", d.phrase), d.home));
    }
    // "<cue> <noun phrase>"
    let words: Vec<&str> = clause.first().copied().unwrap_or("").split_whitespace().collect();
    for (i, w) in words.iter().enumerate() {
        if let Some((_, s)) = CUES.iter().find(|(cue, _)| cue == w) {
            let rest = &words[i + 1..];
            if rest.is_empty() || rest[0] == "people" || rest[0] == "person" {
                continue;
            }
            return Some((format!("people who is a {}", rest.join(" ")), *s));
        }
    }
    None
}

fn extract_reply(text: &str) -> String {
    match extract_pair(text) {
        Some((prompt, s)) => {
            let mut out = String::from("{\"prompt\":");
            out.push_str(&json_string(&prompt));
            out.push_str(",\"subgroup\":");
            out.push_str(&json_string(s.display_name()));
            out.push('}');
            out
        }
        None => "None".to_string(),
    }
}

fn json_string(s: &str) -> String {
    let mut out = String::from("\"");
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

// ---------------------------------------------------------------------------
// Synthetic generation

/// Probability of each label. Ordered so that sampling is reproducible.
pub type Distribution = BTreeMap<Label, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternRule {
    pub pattern: String,
    pub distribution: Distribution,
}

/// Prompt-conditional subgroup distributions for one simulated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModelSpec {
    pub model_id: String,
    #[serde(default)]
    pub patterns: Vec<PatternRule>,
    pub default: Option<Distribution>,
    #[serde(default)]
    pub rng_seed: u64,
}

pub fn check_distribution(d: &Distribution) -> Result<(), BackendError> {
    if d.is_empty() {
        return Err(BackendError::InvalidDistribution("empty distribution".into()));
    }
    if let Some((label, p)) = d.iter().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
        return Err(BackendError::InvalidDistribution(format!("P({}) = {p}", label.token())));
    }
    let total: f64 = d.values().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(BackendError::InvalidDistribution(format!("probabilities sum to {total}")));
    }
    Ok(())
}

/// Inverse-CDF draw; `u` in [0, 1).
pub fn sample_label<'a>(outcomes: impl IntoIterator<Item = (&'a Label, &'a f64)>, u: f64) -> Label {
    let mut acc = 0.0;
    let mut last = Label::Unclassified;
    for (label, p) in outcomes {
        acc += p;
        last = *label;
        if u < acc {
            return *label;
        }
    }
    last
}

pub fn point_mass(label: impl Into<Label>) -> Distribution {
    let mut d = Distribution::new();
    d.insert(label.into(), 1.0);
    d
}

impl SyntheticModelSpec {
    pub fn new(model_id: impl Into<String>, default: Option<Distribution>, rng_seed: u64) -> Self {
        Self {
            model_id: model_id.into(),
            patterns: Vec::new(),
            default,
            rng_seed,
        }
    }

    pub fn with_pattern(mut self, pattern: impl Into<String>, distribution: Distribution) -> Self {
        self.patterns.push(PatternRule {
            pattern: pattern.into(),
            distribution,
        });
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let default = self.default.as_ref().ok_or(BackendError::NoDefaultDistribution)?;
        check_distribution(default)?;
        for rule in &self.patterns {
            check_distribution(&rule.distribution)?;
        }
        Ok(())
    }

    /// Distribution of the longest pattern contained in `prompt`, else the
    /// default.
    pub fn distribution_for(&self, prompt: &str) -> Result<&Distribution, BackendError> {
        let hay = prompt.to_lowercase();
        let best = self
            .patterns
            .iter()
            .filter(|r| !r.pattern.is_empty() && hay.contains(&r.pattern.to_lowercase()))
            .fold(None::<&PatternRule>, |best, r| match best {
                Some(b) if b.pattern.len() >= r.pattern.len() => Some(b),
                _ => Some(r),
            });
        match best {
            Some(rule) => Ok(&rule.distribution),
            None => self.default.as_ref().ok_or(BackendError::NoDefaultDistribution),
        }
    }

    fn handle(&self, prompt: &str, seed: u64, index: usize) -> String {
        let slug: String = self
            .model_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
            .collect();
        let tag = mix_seed(seed, &[prompt]) as u32;
        format!("{slug}-{tag:08x}-{:03}.png", index + 1)
    }

    /// Images `first_index..first_index + n` of the batch for
    /// (`prompt`, `seed`). Image `i` is the same whichever request yields it.
    pub fn generate_range(
        &self,
        prompt: &str,
        n: usize,
        seed: u64,
        first_index: usize,
    ) -> Result<Vec<ImageRecord>, BackendError> {
        self.validate()?;
        let distribution = self.distribution_for(prompt)?;
        let key = mix_seed(self.rng_seed, &[&format!("{seed}")]);
        Ok((first_index..first_index + n)
            .map(|index| {
                let label = sample_label(distribution.iter(), unit_draw(key, index as u64));
                ImageRecord {
                    handle: self.handle(prompt, seed, index),
                    model: self.model_id.clone(),
                    prompt: prompt.to_string(),
                    seed,
                    index,
                    signature: Some(label),
                }
            })
            .collect())
    }
}

/// Samples `n` signed images for `prompt`.
pub fn synth_generate(
    spec: &SyntheticModelSpec,
    prompt: &str,
    n: usize,
    seed: u64,
) -> Result<Vec<ImageRecord>, BackendError> {
    if n == 0 {
        return Err(BackendError::InvalidRequest("n must be at least 1".into()));
    }
    spec.generate_range(prompt, n, seed, 0)
}

/// An image backend serving several synthetic models.
#[derive(Debug, Clone, Default)]
pub struct SyntheticGenerator {
    pub specs: Vec<SyntheticModelSpec>,
    pub catalog: ModelCatalog,
}

impl SyntheticGenerator {
    pub fn new(specs: Vec<SyntheticModelSpec>) -> Result<Self, BackendError> {
        for spec in &specs {
            spec.validate()?;
        }
        Ok(Self {
            specs,
            catalog: ModelCatalog::builtin(),
        })
    }

    pub fn spec(&self, model: &str) -> Option<&SyntheticModelSpec> {
        let canonical = self.catalog.canonical_id(model).unwrap_or(model);
        self.specs
            .iter()
            .find(|s| s.model_id == model)
            .or_else(|| self.specs.iter().find(|s| s.model_id == canonical))
    }
}

impl ImageBackend for SyntheticGenerator {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<ImageRecord>, BackendError> {
        let spec = self
            .spec(&request.model)
            .ok_or_else(|| BackendError::Unavailable(format!("no synthetic model {:?}", request.model)))?;
        spec.generate_range(&request.prompt, request.n, request.seed, request.first_index)
    }
}

/// Distribution that puts `1/k + strength * (1 - 1/k)` on `home` and spreads
/// the rest evenly over the other subgroups of its dimension.
pub fn biased_distribution(home: Subgroup, strength: f64) -> Distribution {
    let members = home.dimension().subgroups();
    let k = members.len() as f64;
    let strength = strength.clamp(0.0, 1.0);
    let p_home = 1.0 / k + strength * (1.0 - 1.0 / k);
    let p_other = (1.0 - p_home) / (k - 1.0);
    let mut d = Distribution::new();
    for &s in members {
        let p = if s == home { p_home } else { p_other };
        if p > 0.0 {
            d.insert(Label::Group(s), p);
        }
    }
    // Absorb rounding so the row sums to one exactly enough.
    let total: f64 = d.values().sum();
    if let Some(p) = d.get_mut(&Label::Group(home)) {
        *p += 1.0 - total;
    }
    d
}

/// Uniform over every subgroup of every dimension.
pub fn uniform_distribution() -> Distribution {
    let p = 1.0 / Subgroup::ALL.len() as f64;
    let mut d: Distribution = Subgroup::ALL.iter().map(|&s| (Label::Group(s), p)).collect();
    let total: f64 = d.values().sum();
    if let Some(v) = d.get_mut(&Label::Group(Subgroup::Male)) {
        *v += 1.0 - total;
    }
    d
}

/// A model whose images follow each vocabulary descriptor's home subgroup
/// with the given bias strength (0 is chance, 1 is a point mass).
pub fn vocabulary_model(model_id: &str, strength: f64, rng_seed: u64) -> SyntheticModelSpec {
    let mut spec = SyntheticModelSpec::new(model_id, Some(uniform_distribution()), rng_seed);
    for d in DESCRIPTORS {
        spec = spec.with_pattern(d.phrase, biased_distribution(d.home, strength));
    }
    spec
}

/// Bias strength of each built-in catalog model in the synthetic world.
pub const WORLD_BIAS: &[(&str, f64)] = &[
    ("SD", 0.8),
    ("SD-2.1", 0.7),
    ("SD-XL", 0.9),
    ("Midjourney", 1.0),
    ("ChilloutMix", 0.85),
    ("Realistic Vision", 0.75),
    ("DreamShaper", 0.6),
    ("SDVN3", 0.8),
    ("mock", 1.0),
    ("SD+FilmGrain", 0.8),
];

/// Synthetic generator for every catalog model, biased per `biases`.
pub fn synthetic_world(biases: &[(&str, f64)], rng_seed: u64) -> SyntheticGenerator {
    let specs = biases
        .iter()
        .map(|(id, s)| vocabulary_model(id, *s, mix_seed(rng_seed, &[id])))
        .collect();
    SyntheticGenerator::new(specs).expect("vocabulary distributions are valid")
}

/// Fails every request with a transient error.
#[derive(Debug, Default)]
pub struct FailingGenerator {
    calls: AtomicUsize,
}

impl FailingGenerator {
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ImageBackend for FailingGenerator {
    fn generate(&self, _request: &GenerationRequest) -> Result<Vec<ImageRecord>, BackendError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
        Err(BackendError::Transient(format!("simulated outage (call {n})")))
    }
}

/// Fails the first `failures` requests, then delegates.
#[derive(Debug)]
pub struct FlakyGenerator<B> {
    pub inner: B,
    failures: usize,
    calls: AtomicUsize,
}

impl<B> FlakyGenerator<B> {
    pub fn new(inner: B, failures: usize) -> Self {
        Self {
            inner,
            failures,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<B: ImageBackend> ImageBackend for FlakyGenerator<B> {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<ImageRecord>, BackendError> {
        let call = self.calls.fetch_add(1, Ordering::SeqCst);
        if call < self.failures {
            return Err(BackendError::Transient(format!("simulated failure {}", call + 1)));
        }
        self.inner.generate(request)
    }
}

/// Returns at most `cap` images per request.
#[derive(Debug)]
pub struct CappedGenerator<B> {
    pub inner: B,
    pub cap: usize,
}

impl<B: ImageBackend> ImageBackend for CappedGenerator<B> {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<ImageRecord>, BackendError> {
        let mut shorter = request.clone();
        shorter.n = request.n.min(self.cap);
        self.inner.generate(&shorter)
    }
}

// ---------------------------------------------------------------------------
// Classifiers

fn signature(image: &ImageRecord) -> Result<Label, BackendError> {
    image
        .signature
        .ok_or_else(|| BackendError::MissingSignature(image.handle.clone()))
}

fn within(label: Label, dimension: SocialDimension) -> Option<Subgroup> {
    label.subgroup().filter(|s| s.dimension() == dimension)
}

/// Reads the embedded signature; anything outside the dimension is
/// unclassified.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleClassifier;

impl Classifier for OracleClassifier {
    fn classify(
        &self,
        images: &[ImageRecord],
        dimension: SocialDimension,
        _candidates: &[Subgroup],
    ) -> Result<Vec<RawLabel>, BackendError> {
        images
            .iter()
            .map(|image| {
                let label = within(signature(image)?, dimension).map_or("none", Subgroup::name);
                Ok(RawLabel {
                    label: label.to_string(),
                    confidence: 1.0,
                })
            })
            .collect()
    }
}

pub fn oracle_classify(images: &[ImageRecord], dimension: SocialDimension) -> Result<Vec<LabeledImage>, BackendError> {
    images
        .iter()
        .map(|image| {
            let label = within(signature(image)?, dimension).map_or(Label::Unclassified, Label::Group);
            Ok(LabeledImage {
                image_ref: image.handle.clone(),
                label,
                confidence: 1.0,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionRow {
    pub truth: Subgroup,
    /// Predicted labels and their probabilities, sampled in this order.
    pub predicted: Vec<(Label, f64)>,
}

/// Row-stochastic confusion matrix for one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionSpec {
    pub dimension: SocialDimension,
    pub rows: Vec<ConfusionRow>,
}

impl ConfusionSpec {
    pub fn identity(dimension: SocialDimension) -> Self {
        Self::uniform_off_diagonal(dimension, 1.0)
    }

    /// `diagonal` on the true subgroup, the remainder spread evenly over the
    /// other subgroups. The true subgroup is listed first in each row, so two
    /// specs drawing with the same seed agree wherever the more accurate one
    /// is wrong.
    pub fn uniform_off_diagonal(dimension: SocialDimension, diagonal: f64) -> Self {
        let members = dimension.subgroups();
        let off = (1.0 - diagonal) / (members.len() - 1) as f64;
        let rows = members
            .iter()
            .map(|&truth| {
                let mut predicted = alloc::vec![(Label::Group(truth), diagonal)];
                predicted.extend(
                    members
                        .iter()
                        .filter(|&&s| s != truth)
                        .map(|&s| (Label::Group(s), off)),
                );
                ConfusionRow { truth, predicted }
            })
            .collect();
        Self { dimension, rows }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        for row in &self.rows {
            if row.truth.dimension() != self.dimension {
                return Err(BackendError::InvalidDistribution(format!("row {} outside {}", row.truth, self.dimension)));
            }
            let total: f64 = row.predicted.iter().map(|(_, p)| p).sum();
            if (total - 1.0).abs() > 1e-9 || row.predicted.iter().any(|(_, p)| !(0.0..=1.0).contains(p)) {
                return Err(BackendError::InvalidDistribution(format!("row {} sums to {total}", row.truth)));
            }
        }
        Ok(())
    }

    pub fn row(&self, truth: Subgroup) -> Option<&ConfusionRow> {
        self.rows.iter().find(|r| r.truth == truth)
    }

    /// Predicted label for one image; the draw depends only on `seed` and
    /// the image handle.
    pub fn predict(&self, image: &ImageRecord, seed: u64) -> Result<Label, BackendError> {
        let Some(truth) = within(signature(image)?, self.dimension) else {
            return Ok(Label::Unclassified);
        };
        let row = self.row(truth).ok_or(BackendError::RowMissing(truth))?;
        let u = unit_draw(mix_seed(seed, &[&image.handle]), 0);
        Ok(sample_label(row.predicted.iter().map(|(l, p)| (l, p)), u))
    }
}

pub fn noisy_classify(
    spec: &ConfusionSpec,
    images: &[ImageRecord],
    seed: u64,
) -> Result<Vec<LabeledImage>, BackendError> {
    spec.validate()?;
    images
        .iter()
        .map(|image| {
            Ok(LabeledImage {
                image_ref: image.handle.clone(),
                label: spec.predict(image, seed)?,
                confidence: 1.0,
            })
        })
        .collect()
}

/// A classifier backed by one confusion spec per dimension.
#[derive(Debug, Clone)]
pub struct NoisyClassifier {
    pub specs: Vec<ConfusionSpec>,
    pub seed: u64,
}

impl NoisyClassifier {
    pub fn new(specs: Vec<ConfusionSpec>, seed: u64) -> Result<Self, BackendError> {
        for spec in &specs {
            spec.validate()?;
        }
        Ok(Self { specs, seed })
    }

    /// The same diagonal accuracy in every dimension.
    pub fn uniform(diagonal: f64, seed: u64) -> Self {
        let specs = SocialDimension::ALL
            .iter()
            .map(|&d| ConfusionSpec::uniform_off_diagonal(d, diagonal))
            .collect();
        Self { specs, seed }
    }
}

impl Classifier for NoisyClassifier {
    fn classify(
        &self,
        images: &[ImageRecord],
        dimension: SocialDimension,
        _candidates: &[Subgroup],
    ) -> Result<Vec<RawLabel>, BackendError> {
        let spec = self
            .specs
            .iter()
            .find(|s| s.dimension == dimension)
            .ok_or_else(|| BackendError::InvalidRequest(format!("no confusion matrix for {dimension}")))?;
        images
            .iter()
            .map(|image| {
                Ok(RawLabel {
                    label: spec.predict(image, self.seed)?.token().to_string(),
                    confidence: 1.0,
                })
            })
            .collect()
    }
}

/// `per_subgroup` images signed with each subgroup of `dimension`.
pub fn signed_test_set(dimension: SocialDimension, per_subgroup: usize) -> Vec<ImageRecord> {
    let mut out = Vec::with_capacity(per_subgroup * dimension.subgroup_count());
    for &s in dimension.subgroups() {
        for i in 0..per_subgroup {
            out.push(ImageRecord {
                handle: format!("test-{}-{:04}.png", s.name().replace(' ', "-"), i + 1),
                model: "test".to_string(),
                prompt: String::new(),
                seed: 0,
                index: i,
                signature: Some(Label::Group(s)),
            });
        }
    }
    out
}
