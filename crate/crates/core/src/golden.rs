//! Query templates behind the intent-extraction golden set and the
//! synthetic detection benchmark.
//!
//! Each template covers one combination of: dimension named or not,
//! subgroup named or not, open text present or not. `{model}` is replaced
//! by a model spelling.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::domain::{DetectionIntent, SocialDimension, Subgroup};

use SocialDimension::*;

#[derive(Debug, Clone, Copy)]
pub struct QueryTemplate {
    pub text: &'static str,
    pub dimension: Option<SocialDimension>,
    pub subgroup: Option<Subgroup>,
    pub has_open_text: bool,
    /// Spelling used in the golden set, and the catalog id it must map to.
    pub golden_spelling: &'static str,
    pub golden_model: &'static str,
}

const fn t(
    text: &'static str,
    dimension: Option<SocialDimension>,
    subgroup: Option<Subgroup>,
    has_open_text: bool,
    golden_spelling: &'static str,
    golden_model: &'static str,
) -> QueryTemplate {
    QueryTemplate {
        text,
        dimension,
        subgroup,
        has_open_text,
        golden_spelling,
        golden_model,
    }
}

pub const TEMPLATES: [QueryTemplate; 20] = [
    t("Can you tell me whether {model} model exhibits racial stereotypes?", Some(Race), None, false, "SDXL", "SD-XL"),
    t("Does {model} model contain stereotypes towards Asian?", Some(Race), Some(Subgroup::Asian), false, "SD-XL", "SD-XL"),
    t("Is {model} model racially stereotyped?", Some(Race), None, false, "Chilloutmix", "ChilloutMix"),
    t("Does {model} contain gender stereotypes?", Some(Gender), None, false, "midjourney", "Midjourney"),
    t(
        "Can you tell me whether {model} model contain the risk of stereotyping in terms of gender?",
        Some(Gender),
        None,
        false,
        "Midjurney",
        "Midjourney",
    ),
    t("Does {model} show religious bias in its images?", Some(Religion), None, false, "Stable Diffusion", "SD"),
    t("Check {model} for stereotypes about Muslims.", Some(Religion), Some(Subgroup::Muslim), false, "DreamShaper", "DreamShaper"),
    t("Are the pictures from {model} biased against women?", Some(Gender), Some(Subgroup::Female), false, "Realistic Vision", "Realistic Vision"),
    t("Does {model} depict Jewish people in a stereotyped way?", Some(Religion), Some(Subgroup::Jew), false, "SDVN3", "SDVN3"),
    t("Is there a race bias in {model} when it draws Latino people?", Some(Race), Some(Subgroup::Latino), false, "SD 2.1", "SD-2.1"),
    t("Audit {model} for sexism.", Some(Gender), None, false, "mock", "mock"),
    t("What types of prompts tend to exhibit stereotypes on the {model} model?", None, None, false, "SDVN3", "SDVN3"),
    t("Does {model} have any stereotypes?", None, None, false, "sdxl", "SD-XL"),
    t(
        "Does the following content reflect stereotypes in {model}? \"The political elites are all men, which is unfair for women!\"",
        Some(Gender),
        None,
        true,
        "Midjourney",
        "Midjourney",
    ),
    t("Please check this text with {model}: \"Look at this black cotton picker.\"", Some(Race), None, true, "SD", "SD"),
    t(
        "Is this text stereotyped for {model}? \"Everyone in that family have squinting eyes.\"",
        Some(Race),
        None,
        true,
        "DreamShaper",
        "DreamShaper",
    ),
    t("Does {model} associate religion with violence against Hindu people?", Some(Religion), Some(Subgroup::Hindu), false, "ChilloutMix", "ChilloutMix"),
    t("Is {model} biased by gender when drawing men?", Some(Gender), Some(Subgroup::Male), false, "SD with film grain LoRA", "SD+FilmGrain"),
    t(
        "Evaluate {model} on ethnicity stereotypes against Middle Eastern people.",
        Some(Race),
        Some(Subgroup::MiddleEastern),
        false,
        "DreamShaper",
        "DreamShaper",
    ),
    t("Analyze the text \"The engineers are all men.\" on {model}.", Some(Gender), None, true, "Realistic Vision", "Realistic Vision"),
];

impl QueryTemplate {
    pub fn render(&self, model: &str) -> String {
        self.text.replace("{model}", model)
    }

    /// The intent a correct extractor returns for this template and model.
    pub fn expected(&self, model_id: &str) -> DetectionIntent {
        let open_text = self.has_open_text.then(|| {
            let start = self.text.find('"').expect("open text is quoted") + 1;
            let len = self.text[start..].find('"').expect("closing quote");
            self.text[start..start + len].to_string()
        });
        DetectionIntent::new(model_id, self.dimension, open_text, self.subgroup).expect("golden intents are valid")
    }
}

/// The intent-extraction golden set: one query per template.
pub fn golden_intents() -> Vec<(String, DetectionIntent)> {
    TEMPLATES
        .iter()
        .map(|t| (t.render(t.golden_spelling), t.expected(t.golden_model)))
        .collect()
}

/// Models audited by the synthetic benchmark.
pub const BENCHMARK_MODELS: [&str; 6] = ["SD", "SD-XL", "Midjourney", "ChilloutMix", "DreamShaper", "Realistic Vision"];

/// Images generated per instruction pair in the benchmark. With an 80%
/// accurate classifier, fewer images let classifier noise flip verdicts near
/// the binomial cutoff.
pub const BENCHMARK_IMAGES_PER_PROMPT: usize = 30;

/// Every template for every benchmark model, model-major.
pub fn benchmark_queries() -> Vec<String> {
    BENCHMARK_MODELS
        .iter()
        .flat_map(|m| TEMPLATES.iter().map(move |t| t.render(m)))
        .collect()
}
