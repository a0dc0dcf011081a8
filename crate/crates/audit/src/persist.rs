//! JSONL persistence for the instruction store.
//!
//! The first line is a header naming the format version and a hash of the
//! taxonomy the file was written against; each further line is one entry.
//! Loading a file written for a different taxonomy fails instead of
//! silently mislabelling pairs.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stereo_core::domain::{InstructionPair, SocialDimension};
use stereo_core::store::{taxonomy_fingerprint, BenchmarkScore, InstructionStore, StoreEntry};
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("store file is empty or has no header")]
    MissingHeader,
    #[error("store format version {found} is not supported (expected {FORMAT_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("store was written for another taxonomy (hash {found}, expected {expected})")]
    TaxonomyHashMismatch { expected: String, found: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub spig_version: u32,
    pub taxonomy_hash: String,
}

impl Header {
    pub fn current() -> Self {
        Self {
            spig_version: FORMAT_VERSION,
            taxonomy_hash: taxonomy_hash(),
        }
    }
}

pub fn taxonomy_hash() -> String {
    hex(&Sha256::digest(taxonomy_fingerprint().as_bytes()))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn one() -> u32 {
    1
}

fn is_one(v: &u32) -> bool {
    *v == 1
}

#[derive(Debug, Serialize, Deserialize)]
struct Line {
    prompt: String,
    subgroup: String,
    dimension: String,
    #[serde(default)]
    source: String,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    frequency: u32,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    scores: BTreeMap<String, BenchmarkScore>,
}

impl Line {
    fn from_entry(e: &StoreEntry) -> Self {
        Self {
            prompt: e.pair.prompt().to_string(),
            subgroup: e.pair.subgroup().name().to_string(),
            dimension: e.pair.dimension().token().to_string(),
            source: e.pair.source().to_string(),
            frequency: e.frequency,
            scores: e.scores.clone(),
        }
    }

    fn into_entry(self) -> Result<StoreEntry, String> {
        let dimension = SocialDimension::parse(&self.dimension).map_err(|e| e.to_string())?;
        let subgroup = stereo_core::domain::validate_subgroup(dimension, &self.subgroup).map_err(|e| e.to_string())?;
        let pair = InstructionPair::new(self.prompt, subgroup, self.source).map_err(|e| e.to_string())?;
        Ok(StoreEntry {
            pair,
            frequency: self.frequency,
            scores: self.scores,
        })
    }
}

pub fn write_store<W: Write>(store: &InstructionStore, mut out: W) -> io::Result<()> {
    serde_json::to_writer(&mut out, &Header::current())?;
    out.write_all(b"\n")?;
    for entry in store.entries() {
        serde_json::to_writer(&mut out, &Line::from_entry(entry))?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn store_to_string(store: &InstructionStore) -> String {
    let mut buf = Vec::new();
    write_store(store, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("serde_json writes UTF-8")
}

pub fn read_store<R: Read>(input: R) -> Result<InstructionStore, PersistError> {
    let mut lines = BufReader::new(input).lines().enumerate();
    let io_err = |source| PersistError::Io {
        path: PathBuf::from("<input>"),
        source,
    };
    let header = loop {
        match lines.next() {
            None => return Err(PersistError::MissingHeader),
            Some((_, line)) => {
                let line = line.map_err(io_err)?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str::<Header>(&line).map_err(|_| PersistError::MissingHeader)?;
            }
        }
    };
    if header.spig_version != FORMAT_VERSION {
        return Err(PersistError::VersionMismatch {
            found: header.spig_version,
        });
    }
    let expected = taxonomy_hash();
    if header.taxonomy_hash != expected {
        return Err(PersistError::TaxonomyHashMismatch {
            expected,
            found: header.taxonomy_hash,
        });
    }
    let mut store = InstructionStore::new();
    for (i, line) in lines {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| PersistError::Malformed { line: i + 1, message };
        let parsed: Line = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        store.insert_entry(parsed.into_entry().map_err(malformed)?);
    }
    Ok(store)
}

pub fn load_store(path: &Path) -> Result<InstructionStore, PersistError> {
    let file = fs::File::open(path).map_err(|source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_store(file).map_err(|e| match e {
        PersistError::Io { source, .. } => PersistError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

/// Writes through a sibling temp file so a crash never leaves half a store.
pub fn save_store(store: &InstructionStore, path: &Path) -> Result<(), PersistError> {
    let wrap = |source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(wrap)?;
    }
    let tmp = path.with_extension("jsonl.tmp");
    let file = fs::File::create(&tmp).map_err(wrap)?;
    write_store(store, io::BufWriter::new(file)).map_err(wrap)?;
    fs::rename(&tmp, path).map_err(wrap)
}

/// The bundled 584-pair fixture.
pub const FIXTURE_JSONL: &str = include_str!("../fixtures/spig_fixture.jsonl");

pub fn fixture_store() -> InstructionStore {
    read_store(FIXTURE_JSONL.as_bytes()).expect("bundled fixture is valid")
}
