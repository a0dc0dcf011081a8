//! Shared vocabulary: social dimensions, the subgroup taxonomy, instruction
//! pairs, detection intents and per-image labels.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::de::{self, Deserializer};
use serde::ser::{SerializeStruct, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::notation::{self, Value};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("unknown subgroup {name:?} for dimension {dimension}")]
    UnknownSubgroup {
        name: String,
        dimension: DimensionScope,
    },
    #[error("subgroup {name:?} matches more than one dimension")]
    AmbiguousSubgroup { name: String },
    #[error("unknown social dimension {0:?}")]
    UnknownDimension(String),
    #[error("no instruction pair found in reply")]
    NoPairFound,
    #[error("instruction prompt is empty")]
    EmptyPrompt,
    #[error("target model identifier is empty")]
    EmptyModel,
    #[error("requested subgroup {subgroup} is outside dimension {dimension}")]
    SubgroupOutsideDimension {
        subgroup: Subgroup,
        dimension: SocialDimension,
    },
}

/// Where a lookup was scoped when it failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DimensionScope {
    One(SocialDimension),
    Any,
}

impl fmt::Display for DimensionScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DimensionScope::One(d) => write!(f, "{d}"),
            DimensionScope::Any => f.write_str("any"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SocialDimension {
    Gender,
    Race,
    Religion,
}

impl SocialDimension {
    pub const ALL: [SocialDimension; 3] = [Self::Gender, Self::Race, Self::Religion];

    pub fn name(self) -> &'static str {
        match self {
            Self::Gender => "Gender",
            Self::Race => "Race",
            Self::Religion => "Religion",
        }
    }

    /// Canonical lowercase token used in serialized files.
    pub fn token(self) -> &'static str {
        match self {
            Self::Gender => "gender",
            Self::Race => "race",
            Self::Religion => "religion",
        }
    }

    /// Subgroups of this dimension in canonical taxonomy order.
    pub fn subgroups(self) -> &'static [Subgroup] {
        use Subgroup::*;
        match self {
            Self::Gender => &[Male, Female],
            Self::Race => &[African, European, Asian, Latino, MiddleEastern],
            Self::Religion => &[Christian, Muslim, Buddhist, Hindu, Catholic, Jew],
        }
    }

    /// Number of subgroups; the chance level of a uniform model is `1 / k`.
    pub fn subgroup_count(self) -> usize {
        self.subgroups().len()
    }

    /// Parses a dimension name, accepting the "sex" and "ethnicity" wording
    /// used interchangeably with gender and race.
    pub fn parse(name: &str) -> Result<Self, DomainError> {
        let key = normalize_token(name);
        match key.as_str() {
            "gender" | "sex" | "gender/sexuality" | "gender and sex" | "sexuality" => {
                Ok(Self::Gender)
            }
            "race" | "ethnicity" | "race/ethnicity" | "race and ethnicity" | "racial" => {
                Ok(Self::Race)
            }
            "religion" | "religious" => Ok(Self::Religion),
            _ => Err(DomainError::UnknownDimension(name.to_string())),
        }
    }
}

impl fmt::Display for SocialDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for SocialDimension {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.token())
    }
}

impl<'de> Deserialize<'de> for SocialDimension {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        SocialDimension::parse(&raw).map_err(de::Error::custom)
    }
}

/// A demographic category. The taxonomy is closed: each variant belongs to
/// exactly one [`SocialDimension`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Subgroup {
    Male,
    Female,
    African,
    European,
    Asian,
    Latino,
    MiddleEastern,
    Christian,
    Muslim,
    Buddhist,
    Hindu,
    Catholic,
    Jew,
}

impl Subgroup {
    /// Every subgroup, grouped by dimension in canonical order.
    pub const ALL: [Subgroup; 13] = [
        Self::Male,
        Self::Female,
        Self::African,
        Self::European,
        Self::Asian,
        Self::Latino,
        Self::MiddleEastern,
        Self::Christian,
        Self::Muslim,
        Self::Buddhist,
        Self::Hindu,
        Self::Catholic,
        Self::Jew,
    ];

    pub fn dimension(self) -> SocialDimension {
        use Subgroup::*;
        match self {
            Male | Female => SocialDimension::Gender,
            African | European | Asian | Latino | MiddleEastern => SocialDimension::Race,
            Christian | Muslim | Buddhist | Hindu | Catholic | Jew => SocialDimension::Religion,
        }
    }

    /// Canonical lowercase token.
    pub fn name(self) -> &'static str {
        use Subgroup::*;
        match self {
            Male => "male",
            Female => "female",
            African => "african",
            European => "european",
            Asian => "asian",
            Latino => "latino",
            MiddleEastern => "middle eastern",
            Christian => "christian",
            Muslim => "muslim",
            Buddhist => "buddhist",
            Hindu => "hindu",
            Catholic => "catholic",
            Jew => "jew",
        }
    }

    /// Title-cased form used in observations and chat replies.
    pub fn display_name(self) -> &'static str {
        use Subgroup::*;
        match self {
            Male => "Male",
            Female => "Female",
            African => "African",
            European => "European",
            Asian => "Asian",
            Latino => "Latino",
            MiddleEastern => "Middle Eastern",
            Christian => "Christian",
            Muslim => "Muslim",
            Buddhist => "Buddhist",
            Hindu => "Hindu",
            Catholic => "Catholic",
            Jew => "Jew",
        }
    }

    /// Position within the dimension's canonical order.
    pub fn ordinal(self) -> usize {
        self.dimension()
            .subgroups()
            .iter()
            .position(|s| *s == self)
            .expect("subgroup listed under its own dimension")
    }

    fn from_canonical(token: &str) -> Option<Subgroup> {
        Subgroup::ALL.iter().copied().find(|s| s.name() == token)
    }
}

impl fmt::Display for Subgroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.dimension().token(), self.name())
    }
}

impl Serialize for Subgroup {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Subgroup {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        resolve_subgroup(&raw).map_err(de::Error::custom)
    }
}

/// Spelling variants and typos seen in model and classifier output.
const ALIASES: &[(&str, Subgroup)] = &[
    ("men", Subgroup::Male),
    ("man", Subgroup::Male),
    ("males", Subgroup::Male),
    ("women", Subgroup::Female),
    ("woman", Subgroup::Female),
    ("females", Subgroup::Female),
    ("afrcian", Subgroup::African),
    ("africans", Subgroup::African),
    ("europeans", Subgroup::European),
    ("asians", Subgroup::Asian),
    ("latinos", Subgroup::Latino),
    ("latina", Subgroup::Latino),
    ("latinx", Subgroup::Latino),
    ("middleeastern", Subgroup::MiddleEastern),
    ("middle easterner", Subgroup::MiddleEastern),
    ("middle easterners", Subgroup::MiddleEastern),
    ("christians", Subgroup::Christian),
    ("muslims", Subgroup::Muslim),
    ("moslem", Subgroup::Muslim),
    ("buddhists", Subgroup::Buddhist),
    ("hindus", Subgroup::Hindu),
    ("catholics", Subgroup::Catholic),
    ("jews", Subgroup::Jew),
    ("jewish", Subgroup::Jew),
];

/// Lowercases, strips quotes and surrounding punctuation, maps `-`/`_` to
/// spaces and collapses whitespace.
pub fn normalize_token(raw: &str) -> String {
    let trimmed = raw.trim_matches(|c: char| {
        c.is_whitespace() || matches!(c, '\'' | '"' | '`' | '‘' | '’' | '“' | '”' | '.' | ',')
    });
    let mut out = String::with_capacity(trimmed.len());
    let mut pending_space = false;
    for c in trimmed.chars() {
        let c = if c == '-' || c == '_' { ' ' } else { c };
        if c.is_whitespace() {
            pending_space = !out.is_empty();
            continue;
        }
        if pending_space {
            out.push(' ');
            pending_space = false;
        }
        out.extend(c.to_lowercase());
    }
    out
}

/// Every canonical subgroup name and accepted alias.
pub fn subgroup_spellings() -> impl Iterator<Item = &'static str> {
    Subgroup::ALL
        .iter()
        .map(|s| s.name())
        .chain(ALIASES.iter().map(|(alias, _)| *alias))
}

fn lookup(token: &str) -> Option<Subgroup> {
    Subgroup::from_canonical(token).or_else(|| {
        ALIASES
            .iter()
            .find(|(alias, _)| *alias == token)
            .map(|(_, s)| *s)
    })
}

/// Maps `name` onto the canonical subgroup of `dimension`.
pub fn validate_subgroup(dimension: SocialDimension, name: &str) -> Result<Subgroup, DomainError> {
    match lookup(&normalize_token(name)) {
        Some(s) if s.dimension() == dimension => Ok(s),
        _ => Err(DomainError::UnknownSubgroup {
            name: name.to_string(),
            dimension: DimensionScope::One(dimension),
        }),
    }
}

/// Resolves a subgroup name across every dimension; the match must be unique.
pub fn resolve_subgroup(name: &str) -> Result<Subgroup, DomainError> {
    let mut found: Option<Subgroup> = None;
    for dimension in SocialDimension::ALL {
        if let Ok(s) = validate_subgroup(dimension, name) {
            if found.is_some_and(|prev| prev != s) {
                return Err(DomainError::AmbiguousSubgroup {
                    name: name.to_string(),
                });
            }
            found = Some(s);
        }
    }
    found.ok_or_else(|| DomainError::UnknownSubgroup {
        name: name.to_string(),
        dimension: DimensionScope::Any,
    })
}

/// The classified subgroup of one image, or the unclassifiable marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Group(Subgroup),
    Unclassified,
}

impl Label {
    pub fn subgroup(self) -> Option<Subgroup> {
        match self {
            Label::Group(s) => Some(s),
            Label::Unclassified => None,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Label::Group(s) => s.name(),
            Label::Unclassified => "none",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Label::Group(s) => s.display_name(),
            Label::Unclassified => "None",
        }
    }

    /// Validates free-form classifier output against `dimension`; anything
    /// outside the taxonomy becomes [`Label::Unclassified`].
    pub fn classify_text(dimension: SocialDimension, raw: &str) -> Label {
        validate_subgroup(dimension, raw)
            .map(Label::Group)
            .unwrap_or(Label::Unclassified)
    }

    /// Parses a token written by [`Label::token`] or [`Label::display_name`].
    pub fn parse(raw: &str) -> Result<Label, DomainError> {
        if normalize_token(raw) == "none" {
            return Ok(Label::Unclassified);
        }
        resolve_subgroup(raw).map(Label::Group)
    }
}

impl From<Subgroup> for Label {
    fn from(s: Subgroup) -> Self {
        Label::Group(s)
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.token())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Label::parse(&raw).map_err(de::Error::custom)
    }
}

pub const USER_TEXT_SOURCE: &str = "user-text";

/// A (prompt, subgroup) stereotype hypothesis.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InstructionPair {
    prompt: String,
    subgroup: Subgroup,
    source: String,
}

impl InstructionPair {
    pub fn new(
        prompt: impl Into<String>,
        subgroup: Subgroup,
        source: impl Into<String>,
    ) -> Result<Self, DomainError> {
        let prompt = prompt.into().trim().to_string();
        if prompt.is_empty() {
            return Err(DomainError::EmptyPrompt);
        }
        Ok(Self {
            prompt,
            subgroup,
            source: source.into(),
        })
    }

    pub fn prompt(&self) -> &str {
        &self.prompt
    }

    pub fn subgroup(&self) -> Subgroup {
        self.subgroup
    }

    pub fn dimension(&self) -> SocialDimension {
        self.subgroup.dimension()
    }

    /// Provenance tag: `corpus:record` or [`USER_TEXT_SOURCE`].
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }

    /// Notation map used in observations and tool arguments.
    pub fn to_notation(&self) -> Value {
        Value::map([
            ("prompt", Value::quoted(&self.prompt)),
            ("subgroup", Value::quoted(self.subgroup.display_name())),
        ])
    }

    /// Reads a `{'prompt': .., 'subgroup': ..}` map.
    pub fn from_notation(value: &Value, source: &str) -> Result<Self, DomainError> {
        let prompt = value
            .get("prompt")
            .and_then(Value::as_text)
            .ok_or(DomainError::NoPairFound)?;
        let subgroup = value
            .get("subgroup")
            .and_then(Value::as_text)
            .ok_or(DomainError::NoPairFound)?;
        InstructionPair::new(prompt, resolve_subgroup(subgroup)?, source)
    }
}

impl Serialize for InstructionPair {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("InstructionPair", 4)?;
        st.serialize_field("prompt", &self.prompt)?;
        st.serialize_field("subgroup", self.subgroup.name())?;
        st.serialize_field("dimension", self.subgroup.dimension().token())?;
        st.serialize_field("source", &self.source)?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for InstructionPair {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            prompt: String,
            subgroup: String,
            dimension: Option<String>,
            #[serde(default)]
            source: String,
        }
        let raw = Raw::deserialize(d)?;
        let subgroup = match raw.dimension {
            Some(dim) => {
                let dimension = SocialDimension::parse(&dim).map_err(de::Error::custom)?;
                validate_subgroup(dimension, &raw.subgroup).map_err(de::Error::custom)?
            }
            None => resolve_subgroup(&raw.subgroup).map_err(de::Error::custom)?,
        };
        InstructionPair::new(raw.prompt, subgroup, raw.source).map_err(de::Error::custom)
    }
}

/// Extracts the first well-formed `{prompt, subgroup}` object from a chat
/// reply, ignoring any surrounding prose.
pub fn parse_instruction_pair(text: &str) -> Result<InstructionPair, DomainError> {
    let mut offset = 0;
    while let Some(rel) = text[offset..].find('{') {
        let start = offset + rel;
        if let Ok((value, _)) = notation::parse_prefix(&text[start..]) {
            let has_fields = value.get("prompt").and_then(Value::as_text).is_some()
                && value.get("subgroup").and_then(Value::as_text).is_some();
            if has_fields {
                return InstructionPair::from_notation(&value, USER_TEXT_SOURCE);
            }
        }
        offset = start + 1;
    }
    Err(DomainError::NoPairFound)
}

/// Structured form of a user's detection request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionIntent {
    pub model: String,
    pub dimension: Option<SocialDimension>,
    pub open_text: Option<String>,
    pub requested_subgroup: Option<Subgroup>,
}

impl DetectionIntent {
    pub fn new(
        model: impl Into<String>,
        dimension: Option<SocialDimension>,
        open_text: Option<String>,
        requested_subgroup: Option<Subgroup>,
    ) -> Result<Self, DomainError> {
        let model = model.into().trim().to_string();
        if model.is_empty() {
            return Err(DomainError::EmptyModel);
        }
        // A requested subgroup pins the dimension.
        let dimension = match (dimension, requested_subgroup) {
            (Some(d), Some(s)) if s.dimension() != d => {
                return Err(DomainError::SubgroupOutsideDimension {
                    subgroup: s,
                    dimension: d,
                })
            }
            (None, Some(s)) => Some(s.dimension()),
            (d, _) => d,
        };
        let open_text = open_text
            .map(|t| t.trim().to_string())
            .filter(|t| !t.is_empty());
        Ok(Self {
            model,
            dimension,
            open_text,
            requested_subgroup,
        })
    }

    /// Observation map in the `{Model: .., Dimension: ..}` shape.
    pub fn to_notation(&self) -> Value {
        let mut entries = Vec::new();
        entries.push((Value::bare("Model"), Value::quoted(&self.model)));
        let dim = self.dimension.map(SocialDimension::name).unwrap_or("Any");
        entries.push((Value::bare("Dimension"), Value::quoted(dim)));
        if let Some(s) = self.requested_subgroup {
            entries.push((Value::bare("Subgroup"), Value::quoted(s.display_name())));
        }
        if let Some(text) = &self.open_text {
            entries.push((Value::bare("text"), Value::quoted(text)));
        }
        Value::Map(entries)
    }

    /// Reads an intent observation; a missing model falls back to
    /// `default_model`.
    pub fn from_notation(value: &Value, default_model: &str) -> Result<Self, DomainError> {
        let model = value
            .get("model")
            .and_then(Value::as_text)
            .filter(|m| !is_unspecified(m))
            .unwrap_or(default_model);
        let dimension = match value.get("dimension").and_then(Value::as_text) {
            Some(d) if !is_unspecified(d) => Some(SocialDimension::parse(d)?),
            _ => None,
        };
        let requested_subgroup = match value.get("subgroup").and_then(Value::as_text) {
            Some(s) if !is_unspecified(s) => Some(resolve_subgroup(s)?),
            _ => None,
        };
        let open_text = value
            .get("text")
            .and_then(Value::as_text)
            .filter(|t| !is_unspecified(t))
            .map(ToString::to_string);
        DetectionIntent::new(model, dimension, open_text, requested_subgroup)
    }
}

/// `None`, `Any`, `all`, `unspecified` and empty strings mean "not given".
pub fn is_unspecified(text: &str) -> bool {
    matches!(
        normalize_token(text).as_str(),
        "" | "none" | "any" | "all" | "unspecified" | "null" | "n/a"
    )
}

/// One generated image and its classified subgroup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledImage {
    pub image_ref: String,
    pub label: Label,
    pub confidence: f64,
}
