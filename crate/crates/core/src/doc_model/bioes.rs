use std::fmt;

use super::{EntitySchema, EntitySpan};
use crate::error::{NatError, Result};

/// One BIOES tag; entity tags carry the schema index of their type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    O,
    B(u16),
    I(u16),
    E(u16),
    S(u16),
}

impl Tag {
    pub fn entity(self) -> Option<u16> {
        match self {
            Tag::O => None,
            Tag::B(e) | Tag::I(e) | Tag::E(e) | Tag::S(e) => Some(e),
        }
    }

    /// Dense class index: `O` is 0, then `B,I,E,S` for entity 0, entity 1, ...
    pub fn class_index(self) -> usize {
        match self {
            Tag::O => 0,
            Tag::B(e) => 1 + 4 * e as usize,
            Tag::I(e) => 2 + 4 * e as usize,
            Tag::E(e) => 3 + 4 * e as usize,
            Tag::S(e) => 4 + 4 * e as usize,
        }
    }

    pub fn from_class_index(idx: usize) -> Tag {
        if idx == 0 {
            return Tag::O;
        }
        let e = ((idx - 1) / 4) as u16;
        match (idx - 1) % 4 {
            0 => Tag::B(e),
            1 => Tag::I(e),
            2 => Tag::E(e),
            _ => Tag::S(e),
        }
    }

    pub fn label(self, schema: &EntitySchema) -> String {
        let name = |e: u16| {
            schema
                .entity_types
                .get(e as usize)
                .map(String::as_str)
                .unwrap_or("?")
        };
        match self {
            Tag::O => "O".to_string(),
            Tag::B(e) => format!("B-{}", name(e)),
            Tag::I(e) => format!("I-{}", name(e)),
            Tag::E(e) => format!("E-{}", name(e)),
            Tag::S(e) => format!("S-{}", name(e)),
        }
    }

    pub fn parse(label: &str, schema: &EntitySchema) -> Result<Tag> {
        if label == "O" {
            return Ok(Tag::O);
        }
        let (prefix, name) = label
            .split_once('-')
            .ok_or_else(|| NatError::Invalid(format!("bad tag `{label}`")))?;
        let e = schema
            .index_of(name)
            .ok_or_else(|| NatError::UnknownEntityType(name.to_string()))? as u16;
        match prefix {
            "B" => Ok(Tag::B(e)),
            "I" => Ok(Tag::I(e)),
            "E" => Ok(Tag::E(e)),
            "S" => Ok(Tag::S(e)),
            _ => Err(NatError::Invalid(format!("bad tag `{label}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TagSequence(pub Vec<Tag>);

impl TagSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Tag> {
        self.0.iter()
    }

    /// Whether every `B` is closed by a matching `E` with only matching `I`
    /// in between, and no `I`/`E` appears outside a span.
    pub fn is_valid(&self) -> bool {
        let mut open: Option<u16> = None;
        for &tag in &self.0 {
            open = match (open, tag) {
                (None, Tag::O) | (None, Tag::S(_)) => None,
                (None, Tag::B(e)) => Some(e),
                (Some(o), Tag::I(e)) if o == e => Some(o),
                (Some(o), Tag::E(e)) if o == e => None,
                _ => return false,
            };
        }
        open.is_none()
    }

    pub fn labels(&self, schema: &EntitySchema) -> Vec<String> {
        self.0.iter().map(|t| t.label(schema)).collect()
    }
}

impl fmt::Display for TagSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|t| format!("{t:?}")).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

/// Encode contiguous spans as BIOES tags over `n_tokens` tokens.
pub fn encode_bioes(
    spans: &[EntitySpan],
    n_tokens: usize,
    schema: &EntitySchema,
) -> Result<TagSequence> {
    let mut tags = vec![Tag::O; n_tokens];
    let mut owner: Vec<Option<usize>> = vec![None; n_tokens];
    for (si, span) in spans.iter().enumerate() {
        if span.is_empty() || span.end > n_tokens {
            return Err(NatError::SpanOutOfRange {
                span: span.to_string(),
                n_tokens,
            });
        }
        let e = schema
            .index_of(&span.entity_type)
            .ok_or_else(|| NatError::UnknownEntityType(span.entity_type.clone()))?
            as u16;
        for i in span.token_indices() {
            if let Some(prev) = owner[i] {
                return Err(NatError::OverlappingSpans {
                    first: spans[prev].to_string(),
                    second: span.to_string(),
                });
            }
            owner[i] = Some(si);
        }
        if span.len() == 1 {
            tags[span.start] = Tag::S(e);
        } else {
            tags[span.start] = Tag::B(e);
            for t in &mut tags[span.start + 1..span.end - 1] {
                *t = Tag::I(e);
            }
            tags[span.end - 1] = Tag::E(e);
        }
    }
    Ok(TagSequence(tags))
}

/// Spans recovered from a tag sequence plus the number of repairs applied.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Decoded {
    pub spans: Vec<EntitySpan>,
    pub repairs: usize,
}

/// Total BIOES decoding.
///
/// Repairs: a leading `I` (or lone `E`) opens a span as if it were `B`;
/// a `B`/`I` run that is not closed by `E` ends at its last same-type tag;
/// a type change inside a span splits it.
pub fn decode_bioes(tags: &TagSequence, schema: &EntitySchema) -> Decoded {
    let mut out = Decoded::default();
    let mut open: Option<(u16, usize)> = None;
    let name = |e: u16| {
        schema
            .entity_types
            .get(e as usize)
            .cloned()
            .unwrap_or_else(|| format!("#{e}"))
    };
    let close = |out: &mut Decoded, e: u16, start: usize, end: usize| {
        out.spans.push(EntitySpan::new(name(e), start, end));
    };

    for (i, &tag) in tags.0.iter().enumerate() {
        match tag {
            Tag::O => {
                if let Some((e, s)) = open.take() {
                    close(&mut out, e, s, i);
                    out.repairs += 1;
                }
            }
            Tag::B(t) => {
                if let Some((e, s)) = open.take() {
                    close(&mut out, e, s, i);
                    out.repairs += 1;
                }
                open = Some((t, i));
            }
            Tag::I(t) => match open {
                Some((e, _)) if e == t => {}
                Some((e, s)) => {
                    close(&mut out, e, s, i);
                    out.repairs += 2;
                    open = Some((t, i));
                }
                None => {
                    out.repairs += 1;
                    open = Some((t, i));
                }
            },
            Tag::E(t) => match open.take() {
                Some((e, s)) if e == t => close(&mut out, e, s, i + 1),
                Some((e, s)) => {
                    close(&mut out, e, s, i);
                    close(&mut out, t, i, i + 1);
                    out.repairs += 2;
                }
                None => {
                    close(&mut out, t, i, i + 1);
                    out.repairs += 1;
                }
            },
            Tag::S(t) => {
                if let Some((e, s)) = open.take() {
                    close(&mut out, e, s, i);
                    out.repairs += 1;
                }
                close(&mut out, t, i, i + 1);
            }
        }
    }
    if let Some((e, s)) = open {
        close(&mut out, e, s, tags.len());
        out.repairs += 1;
    }
    out
}

/// Decode then re-encode, yielding the nearest BIOES-valid sequence.
pub(crate) fn repair(tags: &TagSequence, schema: &EntitySchema) -> TagSequence {
    let decoded = decode_bioes(tags, schema);
    encode_bioes(&decoded.spans, tags.len(), schema).expect("decoded spans are well formed")
}
