//! FUNSD ingestion and the dataset adapter hook.
//!
//! FUNSD ships `annotations/*.json` next to `images/*.png`. Each annotation
//! is a list of labeled blocks (`form`), each with its word boxes in pixel
//! coordinates. Page size comes from the PNG header when the image is
//! present, otherwise from the extent of the boxes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{Corpus, Provenance};
use crate::doc_model::{BBox, Document, EntitySchema, EntitySpan, Token};
use crate::error::{NatError, Result};

pub const FUNSD_LABELS: [&str; 4] = ["header", "question", "answer", "other"];

/// Converts one dataset's native annotation files into documents.
pub trait DatasetAdapter {
    fn schema(&self) -> EntitySchema;

    /// Annotation files under `dir`, in any order.
    fn annotation_files(&self, dir: &Path) -> Result<Vec<PathBuf>>;

    fn parse_file(&self, path: &Path) -> Result<Document>;
}

/// Load every annotation file through `adapter`; documents are ordered by id.
pub fn load_with_adapter(adapter: &dyn DatasetAdapter, dir: impl AsRef<Path>) -> Result<Corpus> {
    let dir = dir.as_ref();
    let files = adapter.annotation_files(dir)?;
    if files.is_empty() {
        return Err(NatError::NoAnnotations(dir.to_path_buf()));
    }
    let mut documents = files
        .iter()
        .map(|f| adapter.parse_file(f))
        .collect::<Result<Vec<_>>>()?;
    documents.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(Corpus::new(adapter.schema(), Provenance::Human).with_documents(documents))
}

pub fn load_funsd(dir: impl AsRef<Path>) -> Result<Corpus> {
    load_with_adapter(&FunsdAdapter, dir)
}

pub struct FunsdAdapter;

#[derive(Deserialize)]
struct FunsdFile {
    form: Vec<FunsdBlock>,
}

#[derive(Deserialize)]
struct FunsdBlock {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    label: String,
    #[serde(default)]
    words: Vec<FunsdWord>,
}

#[derive(Deserialize)]
struct FunsdWord {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    text: String,
}

fn annotation_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("annotations");
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

/// Width and height from a PNG IHDR chunk.
fn png_dimensions(path: &Path) -> Option<(u32, u32)> {
    let bytes = fs::read(path).ok()?;
    if bytes.len() < 24 || &bytes[..8] != b"\x89PNG\r\n\x1a\n" || &bytes[12..16] != b"IHDR" {
        return None;
    }
    let w = u32::from_be_bytes(bytes[16..20].try_into().ok()?);
    let h = u32::from_be_bytes(bytes[20..24].try_into().ok()?);
    (w > 0 && h > 0).then_some((w, h))
}

impl DatasetAdapter for FunsdAdapter {
    fn schema(&self) -> EntitySchema {
        EntitySchema::new("form", FUNSD_LABELS.iter().map(|s| s.to_string()).collect())
            .expect("static schema")
    }

    fn annotation_files(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let ann = annotation_dir(dir);
        let entries = fs::read_dir(&ann).map_err(|e| NatError::io(&ann, e))?;
        let mut files = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| NatError::io(&ann, e))?.path();
            if path.extension().is_some_and(|e| e == "json") {
                files.push(path);
            }
        }
        files.sort();
        Ok(files)
    }

    fn parse_file(&self, path: &Path) -> Result<Document> {
        let bad = |message: String| NatError::Annotation {
            path: path.to_path_buf(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| NatError::io(path, e))?;
        let file: FunsdFile = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| bad("file name is not utf-8".into()))?
            .to_string();

        let image = path
            .parent()
            .and_then(Path::parent)
            .map(|p| p.join("images").join(format!("{stem}.png")));
        let (page_w, page_h) = match image.as_deref().and_then(png_dimensions) {
            Some((w, h)) => (w as f64, h as f64),
            None => {
                let w = file.form.iter().flat_map(|b| b.words.iter().map(|w| w.bbox[2])).fold(1.0, f64::max);
                let h = file.form.iter().flat_map(|b| b.words.iter().map(|w| w.bbox[3])).fold(1.0, f64::max);
                (w.ceil(), h.ceil())
            }
        };

        let schema = self.schema();
        let mut blocks: Vec<&FunsdBlock> = file.form.iter().collect();
        for b in &blocks {
            if schema.index_of(&b.label).is_none() {
                return Err(bad(format!("unknown label `{}`", b.label)));
            }
        }
        // blocks in reading order; words keep their in-block order so each
        // block maps onto one contiguous token run
        blocks.sort_by(|a, b| a.bbox[1].total_cmp(&b.bbox[1]).then(a.bbox[0].total_cmp(&b.bbox[0])));

        let norm = |v: f64, size: f64| (v / size).clamp(0.0, 1.0);
        let mut tokens = Vec::new();
        let mut spans = Vec::new();
        for block in blocks {
            let start = tokens.len();
            for w in &block.words {
                let text = w.text.trim();
                if text.is_empty() {
                    continue;
                }
                let [x0, y0, x1, y1] = w.bbox;
                let bbox = BBox::new(
                    norm(x0.min(x1), page_w),
                    norm(y0.min(y1), page_h),
                    norm(x0.max(x1), page_w),
                    norm(y0.max(y1), page_h),
                );
                tokens.push(Token::new(text, bbox));
            }
            if tokens.len() > start {
                spans.push(EntitySpan::new(block.label.clone(), start, tokens.len()));
            }
        }
        Ok(Document::new(stem, page_w, page_h, tokens).with_spans(spans))
    }
}
