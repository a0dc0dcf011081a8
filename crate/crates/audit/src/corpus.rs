//! Toxicity corpus ingestion.
//!
//! Raw corpora are user-supplied; each is read through an [`Adapter`] that
//! names the file format and the id, text and label columns. Rows that do
//! not fit the adapter are skipped and reported as [`Diagnostic`]s.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Corpus {
    Sbic,
    HateExplain,
    Dynahate,
    Ihc,
    Smtd,
}

impl Corpus {
    pub const ALL: [Corpus; 5] = [Self::Sbic, Self::HateExplain, Self::Dynahate, Self::Ihc, Self::Smtd];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sbic => "sbic",
            Self::HateExplain => "hateexplain",
            Self::Dynahate => "dynahate",
            Self::Ihc => "ihc",
            Self::Smtd => "smtd",
        }
    }
}

impl fmt::Display for Corpus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Corpus {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_lowercase();
        Corpus::ALL
            .into_iter()
            .find(|c| c.name() == key)
            .ok_or_else(|| CorpusError::UnknownCorpus(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub corpus: Corpus,
    pub record_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toxicity_label: Option<String>,
}

impl CorpusRecord {
    /// Provenance tag stored on extracted pairs.
    pub fn provenance(&self) -> String {
        format!("{}:{}", self.corpus, self.record_id)
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {message}")]
    UnreadableFile { path: PathBuf, message: String },
    #[error("unknown corpus {0:?} (expected one of sbic, hateexplain, dynahate, ihc, smtd)")]
    UnknownCorpus(String),
    #[error("{corpus}: all {rejected} rows rejected")]
    AllRowsRejected { corpus: Corpus, rejected: usize },
    #[error("bad adapter config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

/// Column mapping for one corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Adapter {
    pub format: Format,
    #[serde(default = "comma")]
    pub delimiter: char,
    /// Record id column; the 1-based row number when absent.
    #[serde(default)]
    pub id: Option<String>,
    pub text: String,
    #[serde(default)]
    pub label: Option<String>,
    /// Label values marking a row toxic. Every row counts as toxic when
    /// either this or `label` is unset.
    #[serde(default)]
    pub toxic_values: Vec<String>,
}

fn comma() -> char {
    ','
}

impl Adapter {
    pub fn is_toxic(&self, record: &CorpusRecord) -> bool {
        if self.label.is_none() || self.toxic_values.is_empty() {
            return true;
        }
        record.toxicity_label.as_deref().is_some_and(|l| {
            let l = l.trim();
            self.toxic_values.iter().any(|v| v.eq_ignore_ascii_case(l))
        })
    }
}

/// Adapters keyed by corpus, as read from an `adapters.toml`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterSet(pub BTreeMap<Corpus, Adapter>);

pub const DEFAULT_ADAPTERS: &str = include_str!("../fixtures/corpora/adapters.toml");

impl AdapterSet {
    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        let raw: BTreeMap<String, Adapter> = toml::from_str(text).map_err(|e| CorpusError::BadConfig(e.to_string()))?;
        raw.into_iter()
            .map(|(name, adapter)| Ok((name.parse::<Corpus>()?, adapter)))
            .collect::<Result<_, CorpusError>>()
            .map(AdapterSet)
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(|e| CorpusError::UnreadableFile {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// Adapters matching the bundled fixture files.
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_ADAPTERS).expect("bundled adapters parse")
    }

    pub fn get(&self, corpus: Corpus) -> Result<&Adapter, CorpusError> {
        self.0
            .get(&corpus)
            .ok_or_else(|| CorpusError::BadConfig(format!("no adapter for {corpus}")))
    }
}

/// One skipped row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    /// 1-based data row (header excluded for CSV).
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ingested {
    pub records: Vec<CorpusRecord>,
    pub diagnostics: Vec<Diagnostic>,
}

pub fn ingest(corpus: Corpus, path: &Path, adapter: &Adapter) -> Result<Ingested, CorpusError> {
    let bytes = fs::read(path).map_err(|e| CorpusError::UnreadableFile {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    ingest_bytes(corpus, &bytes, adapter)
}

pub fn ingest_bytes(corpus: Corpus, bytes: &[u8], adapter: &Adapter) -> Result<Ingested, CorpusError> {
    let mut out = Ingested {
        records: Vec::new(),
        diagnostics: Vec::new(),
    };
    match adapter.format {
        Format::Csv => read_csv(corpus, bytes, adapter, &mut out)?,
        Format::Jsonl => read_jsonl(corpus, bytes, adapter, &mut out),
    }
    for d in &out.diagnostics {
        log::warn!("{corpus} row {}: {}", d.row, d.reason);
    }
    if out.records.is_empty() {
        return Err(CorpusError::AllRowsRejected {
            corpus,
            rejected: out.diagnostics.len(),
        });
    }
    Ok(out)
}

fn build(corpus: Corpus, row: usize, adapter: &Adapter, field: impl Fn(&str) -> Option<String>) -> Result<CorpusRecord, String> {
    let text = field(&adapter.text).ok_or_else(|| format!("missing text column {:?}", adapter.text))?;
    let text = text.trim().to_string();
    if text.is_empty() {
        return Err("empty text".into());
    }
    let record_id = match &adapter.id {
        Some(col) => field(col)
            .filter(|v| !v.trim().is_empty())
            .ok_or_else(|| format!("missing id column {col:?}"))?,
        None => row.to_string(),
    };
    Ok(CorpusRecord {
        corpus,
        record_id: record_id.trim().to_string(),
        text,
        toxicity_label: adapter.label.as_ref().and_then(|col| field(col)),
    })
}

fn read_csv(corpus: Corpus, bytes: &[u8], adapter: &Adapter, out: &mut Ingested) -> Result<(), CorpusError> {
    let delimiter = u8::try_from(adapter.delimiter)
        .map_err(|_| CorpusError::BadConfig(format!("delimiter {:?} is not a single byte", adapter.delimiter)))?;
    let mut reader = csv::ReaderBuilder::new().delimiter(delimiter).from_reader(bytes);
    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        // An empty file has no header; it falls through to AllRowsRejected.
        Err(_) => return Ok(()),
    };
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let result = row
            .map_err(|e| e.to_string())
            .and_then(|r| build(corpus, row_no, adapter, |col| column(col).and_then(|j| r.get(j)).map(str::to_string)));
        match result {
            Ok(rec) => out.records.push(rec),
            Err(reason) => out.diagnostics.push(Diagnostic { row: row_no, reason }),
        }
    }
    Ok(())
}

fn json_field(value: &serde_json::Value, name: &str) -> Option<String> {
    match value.get(name)? {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Null => None,
        // Token lists such as HateExplain's post_tokens.
        serde_json::Value::Array(items) => Some(
            items
                .iter()
                .map(|v| v.as_str().map_or_else(|| v.to_string(), str::to_string))
                .collect::<Vec<_>>()
                .join(" "),
        ),
        other => Some(other.to_string()),
    }
}

fn read_jsonl(corpus: Corpus, bytes: &[u8], adapter: &Adapter, out: &mut Ingested) {
    let text = String::from_utf8_lossy(bytes);
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row_no = i + 1;
        let result = serde_json::from_str::<serde_json::Value>(line)
            .map_err(|e| e.to_string())
            .and_then(|v| build(corpus, row_no, adapter, |col| json_field(&v, col)));
        match result {
            Ok(rec) => out.records.push(rec),
            Err(reason) => out.diagnostics.push(Diagnostic { row: row_no, reason }),
        }
    }
}

/// A `corpus=path` command-line spec.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSpec {
    pub corpus: Corpus,
    pub path: PathBuf,
}

impl FromStr for CorpusSpec {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, path) = s
            .split_once('=')
            .ok_or_else(|| CorpusError::BadConfig(format!("expected corpus=path, got {s:?}")))?;
        Ok(Self {
            corpus: name.parse()?,
            path: PathBuf::from(path),
        })
    }
}
