//! Documents, entity spans and the BIOES tag codec.

mod bioes;
mod validate;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{NatError, Result};

pub use bioes::{decode_bioes, encode_bioes, Decoded, Tag, TagSequence};
pub(crate) use bioes::repair;
pub use validate::{validate_document, ValidationReport, Violation};

/// Coordinates are kept on a 1e-6 grid so they survive the six-decimal
/// text encoding bit-exactly.
pub const COORD_SCALE: f64 = 1e6;

#[inline]
pub fn quantize(v: f64) -> f64 {
    (v * COORD_SCALE).round() / COORD_SCALE
}

#[inline]
pub fn to_micros(v: f64) -> i64 {
    (v * COORD_SCALE).round() as i64
}

#[inline]
pub fn from_micros(v: i64) -> f64 {
    v as f64 / COORD_SCALE
}

/// Normalized page box, `[0,1]` on both axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    /// Builds a quantized box. Range is checked by [`validate_document`].
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BBox {
            x0: quantize(x0),
            y0: quantize(y0),
            x1: quantize(x1),
            y1: quantize(y1),
        }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn is_in_range(&self) -> bool {
        [self.x0, self.y0, self.x1, self.y1]
            .iter()
            .all(|v| (0.0..=1.0).contains(v))
    }

    pub fn is_ordered(&self) -> bool {
        self.x0 <= self.x1 && self.y0 <= self.y1
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    pub fn micros(&self) -> [i64; 4] {
        [
            to_micros(self.x0),
            to_micros(self.y0),
            to_micros(self.x1),
            to_micros(self.y1),
        ]
    }

    pub fn from_micros(m: [i64; 4]) -> Self {
        BBox {
            x0: from_micros(m[0]),
            y0: from_micros(m[1]),
            x1: from_micros(m[2]),
            y1: from_micros(m[3]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub bbox: BBox,
    #[serde(default)]
    pub page: u32,
}

impl Token {
    pub fn new(text: impl Into<String>, bbox: BBox) -> Self {
        Token {
            text: text.into(),
            bbox,
            page: 0,
        }
    }
}

/// The target document type and its ordered entity inventory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySchema {
    pub doc_type: String,
    pub entity_types: Vec<String>,
}

impl EntitySchema {
    pub fn new(doc_type: impl Into<String>, entity_types: Vec<String>) -> Result<Self> {
        if entity_types.is_empty() {
            return Err(NatError::SchemaMismatch("entity type list is empty".into()));
        }
        for (i, name) in entity_types.iter().enumerate() {
            if entity_types[..i].contains(name) {
                return Err(NatError::SchemaMismatch(format!(
                    "duplicate entity type `{name}`"
                )));
            }
        }
        Ok(EntitySchema {
            doc_type: doc_type.into(),
            entity_types,
        })
    }

    pub fn index_of(&self, entity_type: &str) -> Option<usize> {
        self.entity_types.iter().position(|e| e == entity_type)
    }

    pub fn len(&self) -> usize {
        self.entity_types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entity_types.is_empty()
    }

    /// Number of BIOES classes: `O` plus four per entity type.
    pub fn n_tags(&self) -> usize {
        1 + 4 * self.entity_types.len()
    }
}

/// A contiguous run of tokens `start..end` carrying one entity type.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntitySpan {
    #[serde(rename = "type")]
    pub entity_type: String,
    pub start: usize,
    pub end: usize,
}

impl EntitySpan {
    pub fn new(entity_type: impl Into<String>, start: usize, end: usize) -> Self {
        EntitySpan {
            entity_type: entity_type.into(),
            start,
            end,
        }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn token_indices(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }

    pub fn overlaps(&self, other: &EntitySpan) -> bool {
        self.start < other.end && other.start < self.end
    }
}

impl fmt::Display for EntitySpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}..{})", self.entity_type, self.start, self.end)
    }
}

/// Where a synthetic document came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    pub source_id: String,
    pub rule: String,
    pub pass: usize,
    pub seed: u64,
    /// Number of edits the rule made; zero marks an identity output.
    pub changes: usize,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub skipped: usize,
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

impl Lineage {
    pub fn is_identity(&self) -> bool {
        self.changes == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub page_width: f64,
    pub page_height: f64,
    pub tokens: Vec<Token>,
    pub gold_spans: Vec<EntitySpan>,
    /// Per-token training weights, present on weakly labeled documents.
    pub weights: Option<Vec<f64>>,
    pub lineage: Option<Lineage>,
}

impl Document {
    pub fn new(id: impl Into<String>, page_width: f64, page_height: f64, tokens: Vec<Token>) -> Self {
        Document {
            id: id.into(),
            page_width,
            page_height,
            tokens,
            gold_spans: Vec::new(),
            weights: None,
            lineage: None,
        }
    }

    pub fn with_spans(mut self, spans: Vec<EntitySpan>) -> Self {
        self.gold_spans = spans;
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        !self.gold_spans.is_empty()
    }

    /// Copy without gold spans, weights or lineage.
    pub fn stripped(&self) -> Document {
        Document {
            gold_spans: Vec::new(),
            weights: None,
            lineage: None,
            ..self.clone()
        }
    }

    pub fn text(&self) -> String {
        self.tokens
            .iter()
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Permutation that puts tokens in reading order: top-to-bottom, then
/// left-to-right, by upper-left corner. Ties keep their input order.
pub fn reading_order(boxes: &[BBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        boxes[a]
            .y0
            .total_cmp(&boxes[b].y0)
            .then(boxes[a].x0.total_cmp(&boxes[b].x0))
    });
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bbox_quantizes_to_micro_grid() {
        let b = BBox::new(0.1234567, 0.0, 0.5, 1.0);
        assert_eq!(b.x0, 0.123457);
        assert_eq!(BBox::from_micros(b.micros()), b);
    }

    #[test]
    fn schema_rejects_duplicates_and_empty() {
        assert!(EntitySchema::new("t", vec![]).is_err());
        assert!(EntitySchema::new("t", vec!["a".into(), "a".into()]).is_err());
        let s = EntitySchema::new("t", vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(s.n_tags(), 9);
        assert_eq!(s.index_of("b"), Some(1));
    }

    #[test]
    fn reading_order_is_top_down_then_left_right() {
        let boxes = vec![
            BBox::new(0.5, 0.1, 0.6, 0.2),
            BBox::new(0.1, 0.5, 0.2, 0.6),
            BBox::new(0.1, 0.1, 0.2, 0.2),
        ];
        assert_eq!(reading_order(&boxes), vec![2, 0, 1]);
    }
}
