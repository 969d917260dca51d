//! Canonical corpus file: one JSON record per line, a schema header first.
//!
//! ```text
//! {"kind":"schema","doc_type":"invoice","entity_types":[...],"provenance":"human"}
//! {"kind":"doc","id":"inv-0001","page_width":850.0,"page_height":1100.0,
//!  "tokens":[{"text":"Total","x0":0.100000,...,"page":0}],
//!  "spans":[{"type":"total_billed_amount","start":12,"end":13}],
//!  "weights":[...],"provenance":"human","lineage":{...}}
//! ```
//!
//! Span `end` is exclusive. Coordinates are written with six decimals;
//! `weights` and `lineage` are omitted when absent.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};

use super::{Corpus, Provenance};
use crate::doc_model::{validate_document, BBox, Document, EntitySchema, EntitySpan, Lineage, Token};
use crate::error::{NatError, Result};

struct Coord(f64);

impl Serialize for Coord {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let raw = RawValue::from_string(format!("{:.6}", self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(serializer)
    }
}

#[derive(Serialize)]
struct TokenOut<'a> {
    text: &'a str,
    x0: Coord,
    y0: Coord,
    x1: Coord,
    y1: Coord,
    page: u32,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum RecordOut<'a> {
    Schema {
        doc_type: &'a str,
        entity_types: &'a [String],
        provenance: &'a Provenance,
    },
    Doc {
        id: &'a str,
        page_width: f64,
        page_height: f64,
        tokens: Vec<TokenOut<'a>>,
        spans: &'a [EntitySpan],
        #[serde(skip_serializing_if = "Option::is_none")]
        weights: Option<&'a [f64]>,
        provenance: &'a Provenance,
        #[serde(skip_serializing_if = "Option::is_none")]
        lineage: Option<&'a Lineage>,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TokenIn {
    text: String,
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    #[serde(default)]
    page: u32,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum RecordIn {
    Schema {
        doc_type: String,
        entity_types: Vec<String>,
        #[serde(default = "default_provenance")]
        provenance: Provenance,
    },
    Doc {
        id: String,
        page_width: f64,
        page_height: f64,
        tokens: Vec<TokenIn>,
        #[serde(default)]
        spans: Vec<EntitySpan>,
        #[serde(default)]
        weights: Option<Vec<f64>>,
        provenance: Provenance,
        #[serde(default)]
        lineage: Option<Lineage>,
    },
}

fn default_provenance() -> Provenance {
    Provenance::Human
}

fn write_records<W: Write>(corpus: &Corpus, mut out: W) -> std::io::Result<()> {
    let header = RecordOut::Schema {
        doc_type: &corpus.schema.doc_type,
        entity_types: &corpus.schema.entity_types,
        provenance: &corpus.provenance,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for doc in &corpus.documents {
        let rec = RecordOut::Doc {
            id: &doc.id,
            page_width: doc.page_width,
            page_height: doc.page_height,
            tokens: doc
                .tokens
                .iter()
                .map(|t| TokenOut {
                    text: &t.text,
                    x0: Coord(t.bbox.x0),
                    y0: Coord(t.bbox.y0),
                    x1: Coord(t.bbox.x1),
                    y1: Coord(t.bbox.y1),
                    page: t.page,
                })
                .collect(),
            spans: &doc.gold_spans,
            weights: doc.weights.as_deref(),
            provenance: &corpus.provenance,
            lineage: doc.lineage.as_ref(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn corpus_to_string(corpus: &Corpus) -> String {
    let mut buf = Vec::new();
    write_records(corpus, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("json is utf-8")
}

pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| NatError::io(parent, e))?;
    }
    let file = fs::File::create(path).map_err(|e| NatError::io(path, e))?;
    write_records(corpus, BufWriter::new(file)).map_err(|e| NatError::io(path, e))
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| NatError::io(path, e))?;
    read_corpus_str(&text)
}

/// Parse the canonical format. Line numbers in errors are 1-based.
pub fn read_corpus_str(text: &str) -> Result<Corpus> {
    let mut corpus: Option<Corpus> = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| NatError::MalformedLine {
            line: line_no,
            message,
        };
        let record: RecordIn = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        match record {
            RecordIn::Schema {
                doc_type,
                entity_types,
                provenance,
            } => {
                if corpus.is_some() {
                    return Err(malformed("second schema record".into()));
                }
                let schema = EntitySchema::new(doc_type, entity_types)
                    .map_err(|e| malformed(e.to_string()))?;
                corpus = Some(Corpus::new(schema, provenance));
            }
            RecordIn::Doc {
                id,
                page_width,
                page_height,
                tokens,
                spans,
                weights,
                provenance,
                lineage,
            } => {
                let corpus = corpus
                    .as_mut()
                    .ok_or_else(|| malformed("document before schema record".into()))?;
                if provenance != corpus.provenance {
                    return Err(malformed(format!(
                        "document provenance {provenance} differs from corpus provenance {}",
                        corpus.provenance
                    )));
                }
                let tokens = tokens
                    .into_iter()
                    .map(|t| Token {
                        text: t.text,
                        bbox: BBox::new(t.x0, t.y0, t.x1, t.y1),
                        page: t.page,
                    })
                    .collect();
                let doc = Document {
                    id,
                    page_width,
                    page_height,
                    tokens,
                    gold_spans: spans,
                    weights,
                    lineage,
                };
                let report = validate_document(&doc, &corpus.schema);
                if let Some(v) = report.violations.first() {
                    return Err(NatError::SchemaMismatch(format!(
                        "line {line_no}: document {}: {v}",
                        doc.id
                    )));
                }
                corpus.documents.push(doc);
            }
        }
    }
    corpus.ok_or_else(|| NatError::MalformedLine {
        line: 1,
        message: "missing schema record".into(),
    })
}

/// SHA-256 of the canonical serialization, hex encoded.
pub fn corpus_checksum(corpus: &Corpus) -> String {
    hex::encode(Sha256::digest(corpus_to_string(corpus).as_bytes()))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn schema() -> EntitySchema {
        EntitySchema::new("form", vec!["header".into(), "question".into()]).unwrap()
    }

    fn sample() -> Corpus {
        let tokens = vec![
            Token::new("Name:", BBox::new(0.1, 0.1, 0.2, 0.12)),
            Token::new("Ada", BBox::new(0.21, 0.1, 0.3, 0.12)),
            Token::new("\"quoted\" é", BBox::new(1.0 / 3.0, 0.5, 0.9, 0.6)),
        ];
        let mut doc = Document::new("d1", 612.0, 792.0, tokens)
            .with_spans(vec![EntitySpan::new("question", 0, 2)]);
        doc.weights = Some(vec![1.0, 0.9312345678, 0.0]);
        Corpus::new(schema(), Provenance::Weak("src".into())).with_documents(vec![doc])
    }

    #[test]
    fn round_trip_is_identity() {
        let c = sample();
        let text = corpus_to_string(&c);
        assert!(text.contains("\"x0\":0.333333"));
        let back = read_corpus_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(corpus_to_string(&back), text);
    }

    #[test]
    fn empty_corpus_is_just_a_header() {
        let c = Corpus::new(schema(), Provenance::Human);
        let text = corpus_to_string(&c);
        assert_eq!(text.lines().count(), 1);
        assert_eq!(read_corpus_str(&text).unwrap(), c);
    }

    #[test]
    fn malformed_line_is_cited() {
        let mut text = corpus_to_string(&sample());
        text.push_str("{\"kind\":\"doc\",\"id\":\n");
        match read_corpus_str(&text).unwrap_err() {
            NatError::MalformedLine { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unknown_entity_type_is_a_schema_mismatch() {
        let text = corpus_to_string(&sample()).replace("\"question\",\"start\"", "\"total\",\"start\"");
        assert!(matches!(
            read_corpus_str(&text).unwrap_err(),
            NatError::SchemaMismatch(_)
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/c.jsonl");
        write_corpus(&sample(), &path).unwrap();
        assert_eq!(read_corpus(&path).unwrap(), sample());
    }

    proptest! {
        #[test]
        fn arbitrary_coordinates_and_weights_round_trip(
            coords in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..0.5, 0.0f64..0.5), 1..6),
            weight in 0.0f64..=1.0,
            text in "[a-zA-Z0-9 $€.,:/-]{1,12}",
        ) {
            let tokens: Vec<Token> = coords
                .iter()
                .map(|&(x, y, w, h)| Token::new(text.clone() + "x", BBox::new(x * 0.5, y * 0.5, x * 0.5 + w, y * 0.5 + h)))
                .collect();
            let n = tokens.len();
            let mut doc = Document::new("p", 100.0, 200.0, tokens);
            doc.weights = Some(vec![weight; n]);
            let c = Corpus::new(schema(), Provenance::Human).with_documents(vec![doc]);
            let text = corpus_to_string(&c);
            let back = read_corpus_str(&text).unwrap();
            prop_assert_eq!(&back, &c);
        }
    }
}
