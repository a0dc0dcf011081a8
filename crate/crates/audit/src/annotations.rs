//! Human annotation files: CSV with header `image_ref,annotator_id,label`.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stereo_core::domain::Label;
use stereo_core::evaluation::Annotation;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("cannot read {path}: {message}")]
    Unreadable { path: PathBuf, message: String },
    #[error("annotation row {row}: {message}")]
    Malformed { row: usize, message: String },
    #[error("annotation file has no rows")]
    Empty,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    image_ref: String,
    annotator_id: String,
    label: String,
}

pub fn read_annotations<R: Read>(input: R) -> Result<Vec<Annotation>, AnnotationError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let malformed = |message: String| AnnotationError::Malformed { row: i + 1, message };
        let row = row.map_err(|e| malformed(e.to_string()))?;
        let label = Label::parse(&row.label).map_err(|e| malformed(e.to_string()))?;
        out.push(Annotation {
            image_ref: row.image_ref,
            annotator_id: row.annotator_id,
            label,
        });
    }
    if out.is_empty() {
        return Err(AnnotationError::Empty);
    }
    Ok(out)
}

pub fn load_annotations(path: &Path) -> Result<Vec<Annotation>, AnnotationError> {
    let file = std::fs::File::open(path).map_err(|e| AnnotationError::Unreadable {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    read_annotations(file)
}

pub fn write_annotations<W: Write>(rows: &[Annotation], out: W) -> std::io::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for a in rows {
        writer.serialize(Row {
            image_ref: a.image_ref.clone(),
            annotator_id: a.annotator_id.clone(),
            label: a.label.token().to_string(),
        })?;
    }
    writer.flush()
}
