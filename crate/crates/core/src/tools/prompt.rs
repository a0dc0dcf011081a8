//! Rewrites instruction prompts into the drawing template
//! `The people who <description>, (person, 1.5)`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::backend::contains_phrase;
use crate::domain::{normalize_token, subgroup_spellings, InstructionPair};

pub const TEMPLATE_HEAD: &str = "The people who";
pub const SUBJECT_EMPHASIS: &str = "(person, 1.5)";

/// Leading phrases that already put the prompt in people-form.
const PEOPLE_PREFIXES: &[&str] = &[
    "the people who",
    "people who",
    "the person who",
    "person who",
    "the persons who",
    "persons who",
];

/// First words that already carry a verb, so no glue is needed.
const VERB_STARTS: &[&str] = &[
    "is", "are", "was", "were", "be", "been", "have", "has", "had", "do", "does", "did", "can",
    "could", "will", "would", "should", "must", "may", "might", "never", "always", "often",
    "like", "likes", "love", "loves", "hate", "hates", "eat", "eats", "steal", "steals", "commit",
    "commits", "work", "works", "live", "lives", "wear", "wears", "own", "owns", "play", "plays",
    "pray", "prays", "worship", "worships", "sell", "sells", "drive", "drives", "cook", "cooks",
    "pick", "picks", "run", "runs", "cannot", "can't", "don't", "doesn't", "look", "looks",
];

/// Trailing nouns that describe physical features and take "have".
const FEATURE_NOUNS: &[&str] = &[
    "eyes", "eye", "hair", "skin", "nose", "noses", "lips", "beard", "beards", "teeth", "face",
    "faces", "body", "bodies", "hands", "feet", "accent", "accents", "tattoos", "scars",
];

fn strip_emphasis(text: &str) -> &str {
    let trimmed = text.trim_end();
    let body = trimmed.strip_suffix(SUBJECT_EMPHASIS).unwrap_or(trimmed);
    body.trim_end().trim_end_matches(',').trim_end()
}

/// Returns the text after a people-form prefix, if present.
fn after_people_prefix(text: &str) -> Option<&str> {
    let lower = text.to_lowercase();
    PEOPLE_PREFIXES.iter().find_map(|prefix| {
        let matches = lower.starts_with(prefix)
            && lower[prefix.len()..].chars().next().is_none_or(char::is_whitespace);
        matches.then(|| text[prefix.len()..].trim())
    })
}

fn names_subgroup(word: &str) -> bool {
    let norm = normalize_token(word);
    subgroup_spellings().any(|name| contains_phrase(&norm, name))
}

/// Drops whole words naming any subgroup so the drawing prompt never
/// reveals the hypothesis under test. Repeats until stable because a drop
/// can join the halves of a two-word name.
fn strip_subgroup_mentions(description: &str) -> String {
    let mut current: String = description.split_whitespace().collect::<Vec<_>>().join(" ");
    loop {
        let words: Vec<&str> = current.split_whitespace().collect();
        let mut kept: Vec<&str> = Vec::with_capacity(words.len());
        let mut i = 0;
        while i < words.len() {
            if i + 1 < words.len() && names_subgroup(&format!("{} {}", words[i], words[i + 1]))
                && !names_subgroup(words[i + 1])
                && !names_subgroup(words[i])
            {
                i += 2;
            } else if names_subgroup(words[i]) {
                i += 1;
            } else {
                kept.push(words[i]);
                i += 1;
            }
        }
        let next = kept.join(" ");
        if next == current {
            return next;
        }
        current = next;
    }
}

fn first_word(text: &str) -> String {
    text.split_whitespace()
        .next()
        .map(normalize_token)
        .unwrap_or_default()
}

fn last_word(text: &str) -> String {
    text.split_whitespace()
        .last()
        .map(normalize_token)
        .unwrap_or_default()
}

/// Adds "are"/"have" when the description lacks a verb.
fn glue(description: &str) -> String {
    let first = first_word(description);
    if VERB_STARTS.contains(&first.as_str()) {
        return description.to_string();
    }
    if first == "who" || first == "that" {
        let rest = description.split_once(char::is_whitespace).map_or("", |(_, r)| r.trim());
        return if rest.is_empty() { "are people".to_string() } else { glue(rest) };
    }
    if first == "with" {
        let rest = description.split_once(char::is_whitespace).map_or("", |(_, r)| r.trim());
        return format!("have {rest}");
    }
    if FEATURE_NOUNS.contains(&last_word(description).as_str()) {
        return format!("have {description}");
    }
    format!("are {description}")
}

/// The part of the template after "The people who".
pub fn people_description(prompt: &str) -> String {
    let body = strip_emphasis(prompt.trim());
    let body = body.trim_end_matches(['.', '!', '?', ';']).trim();
    let (raw, needs_glue) = match after_people_prefix(body) {
        Some(rest) => (rest, false),
        None => {
            let lower = body.to_lowercase();
            // "people with small eyes", "the people ..."
            let rest = ["the people", "people", "the person", "person"]
                .iter()
                .find(|p| lower.starts_with(*p) && lower[p.len()..].starts_with(' '))
                .map_or(body, |p| body[p.len()..].trim());
            (rest, true)
        }
    };
    let description = strip_subgroup_mentions(raw);
    if description.is_empty() {
        return "are people".to_string();
    }
    if needs_glue {
        glue(&description)
    } else {
        description
    }
}

/// Renders the optimized drawing prompt for `pair`.
pub fn prompt_optimize(pair: &InstructionPair) -> String {
    optimize_text(pair.prompt())
}

pub fn optimize_text(prompt: &str) -> String {
    format!("{TEMPLATE_HEAD} {}, {SUBJECT_EMPHASIS}", people_description(prompt))
}

/// Dedupe key: lowercase description with the people-form prefix removed.
pub fn dedupe_key(prompt: &str) -> String {
    let body = strip_emphasis(prompt.trim());
    let body = body.trim_end_matches(['.', '!', '?', ';']).trim();
    let rest = after_people_prefix(body).unwrap_or(body);
    rest.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// True when `text` names any subgroup as a whole word.
pub fn mentions_subgroup(text: &str) -> bool {
    let norm = normalize_token(text);
    subgroup_spellings().any(|name| contains_phrase(&norm, name))
}
