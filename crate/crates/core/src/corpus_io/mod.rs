//! Corpora: the canonical line-delimited format, dataset ingestion,
//! the synthetic mini-invoice generator and deterministic splitting.

mod format;
mod funsd;
mod mini_invoice;
mod split;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::doc_model::{validate_document, Document, EntitySchema, ValidationReport, Violation};
use crate::error::{NatError, Result};

pub use format::{corpus_checksum, corpus_to_string, read_corpus, read_corpus_str, write_corpus};
pub use funsd::{load_funsd, load_with_adapter, DatasetAdapter, FunsdAdapter, FUNSD_LABELS};
pub use mini_invoice::{generate_mini_invoices, MiniInvoiceConfig, MINI_INVOICE_ENTITIES};
pub use split::{split_corpus, Partition, PartitionSpec};

/// Label provenance of a corpus and of each document in it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Provenance {
    Human,
    Unlabeled,
    Weak(String),
    Synthetic,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Human => f.write_str("human"),
            Provenance::Unlabeled => f.write_str("unlabeled"),
            Provenance::Weak(id) => write!(f, "weak:{id}"),
            Provenance::Synthetic => f.write_str("synthetic"),
        }
    }
}

impl FromStr for Provenance {
    type Err = NatError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "human" => Ok(Provenance::Human),
            "unlabeled" => Ok(Provenance::Unlabeled),
            "synthetic" => Ok(Provenance::Synthetic),
            _ => match s.strip_prefix("weak:") {
                Some(id) if !id.is_empty() => Ok(Provenance::Weak(id.to_string())),
                _ => Err(NatError::Invalid(format!("unknown provenance `{s}`"))),
            },
        }
    }
}

impl TryFrom<String> for Provenance {
    type Error = NatError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Provenance> for String {
    fn from(p: Provenance) -> String {
        p.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub schema: EntitySchema,
    pub provenance: Provenance,
    pub documents: Vec<Document>,
}

impl Corpus {
    pub fn new(schema: EntitySchema, provenance: Provenance) -> Self {
        Corpus {
            schema,
            provenance,
            documents: Vec::new(),
        }
    }

    pub fn with_documents(mut self, documents: Vec<Document>) -> Self {
        self.documents = documents;
        self
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    /// Reports for every document that violates an invariant.
    pub fn validate(&self) -> Vec<ValidationReport> {
        self.documents
            .iter()
            .map(|d| {
                let mut r = validate_document(d, &self.schema);
                if self.provenance == Provenance::Unlabeled && d.is_labeled() {
                    r.violations.push(Violation::UnexpectedSpans);
                }
                r
            })
            .filter(|r| !r.is_valid())
            .collect()
    }

    /// Copy with gold spans removed, marked unlabeled.
    pub fn stripped(&self) -> Corpus {
        Corpus {
            schema: self.schema.clone(),
            provenance: Provenance::Unlabeled,
            documents: self.documents.iter().map(Document::stripped).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn provenance_text_round_trip() {
        for p in [
            Provenance::Human,
            Provenance::Unlabeled,
            Provenance::Weak("attn".into()),
            Provenance::Synthetic,
        ] {
            assert_eq!(p.to_string().parse::<Provenance>().unwrap(), p);
        }
        assert!("weak:".parse::<Provenance>().is_err());
        assert!("gold".parse::<Provenance>().is_err());
    }
}
