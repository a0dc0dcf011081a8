//! Signed PNG files: a tiny image whose metadata block names the subgroup
//! it depicts, so an oracle classifier can label it without looking at
//! pixels.

use std::fs::File;
use std::io::{BufWriter, Cursor, Read};
use std::path::Path;

use stereo_core::backend::{BackendError, Classifier, ImageRecord, RawLabel};
use stereo_core::domain::{Label, SocialDimension, Subgroup};

/// tEXt keyword holding the label token.
pub const SIGNATURE_KEY: &str = "stereo-signature";

const SIDE: u32 = 8;

/// Encodes an 8x8 PNG carrying `label` in a tEXt chunk. The pixel colour is
/// derived from the label so signed files differ visibly too.
pub fn signed_png(label: Label) -> Vec<u8> {
    let shade = match label {
        Label::Group(s) => 40 + 16 * s.ordinal() as u8,
        Label::Unclassified => 0,
    };
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, SIDE, SIDE);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        encoder
            .add_text_chunk(SIGNATURE_KEY.to_string(), label.token().to_string())
            .expect("keyword is valid latin-1");
        let mut writer = encoder.write_header().expect("in-memory header");
        writer
            .write_image_data(&[shade; (SIDE * SIDE) as usize])
            .expect("in-memory image data");
    }
    out
}

pub fn write_signed_png(path: &Path, label: Label) -> std::io::Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut w = file;
    std::io::Write::write_all(&mut w, &signed_png(label))
}

/// Reads the signature from PNG bytes. `Ok(None)` for a valid PNG without
/// one.
pub fn read_signature(bytes: &[u8]) -> Result<Option<Label>, BackendError> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let reader = decoder
        .read_info()
        .map_err(|e| BackendError::BadResponse(format!("not a PNG: {e}")))?;
    let info = reader.info();
    let text = info
        .uncompressed_latin1_text
        .iter()
        .find(|c| c.keyword == SIGNATURE_KEY)
        .map(|c| c.text.clone());
    match text {
        Some(t) => Label::parse(&t)
            .map(Some)
            .map_err(|e| BackendError::BadResponse(format!("bad signature {t:?}: {e}"))),
        None => Ok(None),
    }
}

pub fn read_signature_file(path: &Path) -> Result<Option<Label>, BackendError> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| BackendError::Unavailable(format!("{}: {e}", path.display())))?;
    read_signature(&bytes)
}

/// Oracle over image files: the image handle is a path to a signed PNG.
#[derive(Debug, Clone, Copy, Default)]
pub struct FileOracleClassifier;

impl Classifier for FileOracleClassifier {
    fn classify(
        &self,
        images: &[ImageRecord],
        dimension: SocialDimension,
        _candidates: &[Subgroup],
    ) -> Result<Vec<RawLabel>, BackendError> {
        images
            .iter()
            .map(|image| {
                let label = match image.signature {
                    Some(l) => l,
                    None => read_signature_file(Path::new(&image.handle))?
                        .ok_or_else(|| BackendError::MissingSignature(image.handle.clone()))?,
                };
                let label = label.subgroup().filter(|s| s.dimension() == dimension);
                Ok(RawLabel {
                    label: label.map_or("none", Subgroup::name).to_string(),
                    confidence: 1.0,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signature_round_trips() {
        for s in Subgroup::ALL {
            let bytes = signed_png(Label::Group(s));
            assert_eq!(read_signature(&bytes).unwrap(), Some(Label::Group(s)));
        }
        assert_eq!(read_signature(&signed_png(Label::Unclassified)).unwrap(), Some(Label::Unclassified));
    }

    #[test]
    fn garbage_is_not_a_png() {
        assert!(matches!(read_signature(b"nope"), Err(BackendError::BadResponse(_))));
    }
}
