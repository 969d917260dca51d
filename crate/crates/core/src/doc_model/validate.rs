use std::fmt;

use serde::Serialize;

use super::{Document, EntitySchema};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    BboxOutOfRange { token: usize },
    BboxInverted { token: usize },
    EmptyText { token: usize },
    BadPageSize,
    SpanOutOfRange { span: String },
    EmptySpan { span: String },
    UnknownEntityType { span: String },
    SpanOverlap { first: String, second: String },
    WeightCount { expected: usize, found: usize },
    WeightOutOfRange { token: usize },
    UnexpectedSpans,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::BboxOutOfRange { token } => write!(f, "token {token}: bbox outside [0,1]"),
            Violation::BboxInverted { token } => write!(f, "token {token}: bbox corners inverted"),
            Violation::EmptyText { token } => write!(f, "token {token}: empty text"),
            Violation::BadPageSize => write!(f, "page size must be positive"),
            Violation::SpanOutOfRange { span } => write!(f, "span {span}: out of range"),
            Violation::EmptySpan { span } => write!(f, "span {span}: empty"),
            Violation::UnknownEntityType { span } => write!(f, "span {span}: unknown entity type"),
            Violation::SpanOverlap { first, second } => {
                write!(f, "spans {first} and {second} overlap")
            }
            Violation::WeightCount { expected, found } => {
                write!(f, "expected {expected} weights, found {found}")
            }
            Violation::WeightOutOfRange { token } => write!(f, "token {token}: weight outside [0,1]"),
            Violation::UnexpectedSpans => write!(f, "unlabeled document carries gold spans"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ValidationReport {
    pub document: String,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Every invariant violation in `doc`, in token order then span order.
pub fn validate_document(doc: &Document, schema: &EntitySchema) -> ValidationReport {
    let mut violations = Vec::new();
    if !(doc.page_width > 0.0 && doc.page_height > 0.0) {
        violations.push(Violation::BadPageSize);
    }
    for (i, tok) in doc.tokens.iter().enumerate() {
        if tok.text.trim().is_empty() {
            violations.push(Violation::EmptyText { token: i });
        }
        if !tok.bbox.is_in_range() {
            violations.push(Violation::BboxOutOfRange { token: i });
        }
        if !tok.bbox.is_ordered() {
            violations.push(Violation::BboxInverted { token: i });
        }
    }
    let n = doc.tokens.len();
    for span in &doc.gold_spans {
        if span.is_empty() {
            violations.push(Violation::EmptySpan {
                span: span.to_string(),
            });
        } else if span.end > n {
            violations.push(Violation::SpanOutOfRange {
                span: span.to_string(),
            });
        }
        if schema.index_of(&span.entity_type).is_none() {
            violations.push(Violation::UnknownEntityType {
                span: span.to_string(),
            });
        }
    }
    for (i, a) in doc.gold_spans.iter().enumerate() {
        for b in &doc.gold_spans[i + 1..] {
            if a.overlaps(b) {
                violations.push(Violation::SpanOverlap {
                    first: a.to_string(),
                    second: b.to_string(),
                });
            }
        }
    }
    if let Some(w) = &doc.weights {
        if w.len() != n {
            violations.push(Violation::WeightCount {
                expected: n,
                found: w.len(),
            });
        }
        for (i, v) in w.iter().enumerate() {
            if !(0.0..=1.0).contains(v) {
                violations.push(Violation::WeightOutOfRange { token: i });
            }
        }
    }
    ValidationReport {
        document: doc.id.clone(),
        violations,
    }
}
