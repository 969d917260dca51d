//! Rule-based synthetic documents.
//!
//! Four rule families rewrite a labeled document while keeping its gold
//! spans pointing at the same fields: key-phrase synonyms, value format
//! substitution, span-level coordinate shifts and bounding-box expansion.
//! [`build_synthetic_corpus`] applies every enabled family to every
//! document once per pass.

pub mod formats;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus_io::{Corpus, Provenance};
use crate::doc_model::{to_micros, validate_document, BBox, Document, EntitySpan, Lineage, Token};
use crate::error::{NatError, Result};
use crate::rng::{derive_seed, substream, Rng};
use formats::{parse_value, ValueKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynonymRule {
    /// Phrases to look for, matched case-insensitively on whole tokens.
    pub keys: Vec<String>,
    /// Replacements, one drawn uniformly per occurrence.
    pub synonyms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormatRule {
    pub entity_type: String,
    pub kind: ValueKind,
    pub templates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoordinateRule {
    pub enabled: bool,
    /// Largest shift as a fraction of the page, per axis.
    pub max_shift: f64,
    /// Chance that a span (or a token, in per-token mode) is moved.
    pub probability: f64,
    /// Move tokens independently instead of whole spans.
    pub per_token: bool,
}

impl Default for CoordinateRule {
    fn default() -> Self {
        CoordinateRule {
            enabled: true,
            max_shift: 0.1,
            probability: 0.5,
            per_token: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BBoxRule {
    pub enabled: bool,
    pub max_expansion: f64,
    pub probability: f64,
}

impl Default for BBoxRule {
    fn default() -> Self {
        BBoxRule {
            enabled: true,
            max_expansion: 0.2,
            probability: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationRuleSet {
    pub n_passes: usize,
    pub synonyms: Vec<SynonymRule>,
    pub formats: Vec<FormatRule>,
    /// Chance that a parseable span is rewritten at all.
    pub format_probability: f64,
    pub coordinate: CoordinateRule,
    pub bbox: BBoxRule,
}

impl Default for AugmentationRuleSet {
    fn default() -> Self {
        AugmentationRuleSet {
            n_passes: 5,
            synonyms: Vec::new(),
            formats: Vec::new(),
            format_probability: 1.0,
            coordinate: CoordinateRule::default(),
            bbox: BBoxRule::default(),
        }
    }
}

/// A rule family of the rule set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Synonym,
    Format,
    Coordinate,
    BBox,
}

impl RuleKind {
    pub fn name(self) -> &'static str {
        match self {
            RuleKind::Synonym => "synonym",
            RuleKind::Format => "format",
            RuleKind::Coordinate => "coordinate",
            RuleKind::BBox => "bbox",
        }
    }
}

const INVOICE_RULES: &str = include_str!("../../config/invoice_rules.toml");

impl AugmentationRuleSet {
    /// The shipped rules for the mini-invoice schema.
    pub fn invoice() -> Self {
        Self::from_toml(INVOICE_RULES).expect("shipped rules parse")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let rules: Self = toml::from_str(text).map_err(|e| NatError::Config(format!("augmentation rules: {e}")))?;
        rules.validate()?;
        Ok(rules)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NatError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| NatError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NatError::Config(format!("augmentation: {m}")));
        for s in &self.synonyms {
            if s.keys.is_empty() || s.synonyms.is_empty() {
                return bad("synonym rules need keys and synonyms");
            }
            if s.keys.iter().chain(&s.synonyms).any(|p| p.split_whitespace().next().is_none()) {
                return bad("synonym phrases must not be blank");
            }
        }
        for f in &self.formats {
            if f.templates.is_empty() {
                return bad("format rules need at least one template");
            }
        }
        let frac = |v: f64| v > 0.0 && v <= 1.0;
        let prob = |v: f64| (0.0..=1.0).contains(&v);
        if !frac(self.coordinate.max_shift) || !frac(self.bbox.max_expansion) {
            return bad("fractions must be in (0, 1]");
        }
        if !prob(self.coordinate.probability) || !prob(self.bbox.probability) || !prob(self.format_probability) {
            return bad("probabilities must be in [0, 1]");
        }
        Ok(())
    }

    /// Enabled rule families, in application order; `|R|` is its length.
    pub fn rules(&self) -> Vec<RuleKind> {
        let mut r = Vec::with_capacity(4);
        if !self.synonyms.is_empty() {
            r.push(RuleKind::Synonym);
        }
        if !self.formats.is_empty() {
            r.push(RuleKind::Format);
        }
        if self.coordinate.enabled {
            r.push(RuleKind::Coordinate);
        }
        if self.bbox.enabled {
            r.push(RuleKind::BBox);
        }
        r
    }
}

/// Outcome counts of one rule application.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Edits {
    pub changes: usize,
    pub skipped: usize,
}

/// Splits `region` into one box per word, widths proportional to word
/// lengths in characters.
fn divide_region(region: BBox, words: &[String]) -> Vec<BBox> {
    let lens: Vec<usize> = words.iter().map(|w| w.chars().count().max(1)).collect();
    let total: usize = lens.iter().sum();
    let [x0, y0, x1, y1] = region.micros();
    let width = x1 - x0;
    let mut acc = 0usize;
    lens.iter()
        .map(|&l| {
            let a = x0 + (width as i128 * acc as i128 / total as i128) as i64;
            acc += l;
            let b = x0 + (width as i128 * acc as i128 / total as i128) as i64;
            BBox::from_micros([a, y0, b, y1])
        })
        .collect()
}

/// Replaces token runs `[start, end)` by new words and re-projects spans.
/// Runs must be sorted, disjoint, and never straddle a span boundary.
fn apply_replacements(doc: &Document, runs: &[(usize, usize, Vec<String>)]) -> Document {
    let mut tokens = Vec::with_capacity(doc.len());
    let mut cursor = 0;
    for (start, end, words) in runs {
        tokens.extend_from_slice(&doc.tokens[cursor..*start]);
        let region = doc.tokens[*start..*end]
            .iter()
            .map(|t| t.bbox)
            .reduce(|a, b| a.union(&b))
            .expect("non-empty run");
        let page = doc.tokens[*start].page;
        for (w, b) in words.iter().zip(divide_region(region, words)) {
            tokens.push(Token {
                text: w.clone(),
                bbox: b,
                page,
            });
        }
        cursor = *end;
    }
    tokens.extend_from_slice(&doc.tokens[cursor..]);
    let map = |b: usize| -> usize {
        let delta: isize = runs
            .iter()
            .filter(|(_, e, _)| *e <= b)
            .map(|(s, e, w)| w.len() as isize - (e - s) as isize)
            .sum();
        (b as isize + delta) as usize
    };
    let mut out = doc.clone();
    out.tokens = tokens;
    out.gold_spans = doc
        .gold_spans
        .iter()
        .map(|s| EntitySpan::new(s.entity_type.clone(), map(s.start), map(s.end)))
        .collect();
    out.weights = None;
    out
}

fn straddles(spans: &[EntitySpan], start: usize, end: usize) -> bool {
    spans.iter().any(|s| {
        let overlaps = s.start < end && start < s.end;
        let inside = s.start <= start && end <= s.end;
        let covers = start <= s.start && s.end <= end;
        overlaps && !inside && !covers
    })
}

fn words(phrase: &str) -> Vec<String> {
    phrase.split_whitespace().map(str::to_string).collect()
}

/// Replaces every key-phrase occurrence with a uniformly drawn synonym.
pub fn synonym_substitute(doc: &Document, rules: &[SynonymRule], rng: &mut Rng) -> (Document, Edits) {
    let lower: Vec<String> = doc.tokens.iter().map(|t| t.text.to_lowercase()).collect();
    let mut keys: Vec<(Vec<String>, usize)> = rules
        .iter()
        .enumerate()
        .flat_map(|(r, rule)| {
            rule.keys
                .iter()
                .map(move |k| (k.split_whitespace().map(str::to_lowercase).collect(), r))
        })
        .collect();
    keys.sort_by_key(|k| std::cmp::Reverse(k.0.len()));
    let mut runs = Vec::new();
    let mut edits = Edits::default();
    let mut i = 0;
    while i < lower.len() {
        let hit = keys
            .iter()
            .find(|(k, _)| i + k.len() <= lower.len() && lower[i..i + k.len()] == k[..]);
        let Some((k, r)) = hit else {
            i += 1;
            continue;
        };
        let end = i + k.len();
        if straddles(&doc.gold_spans, i, end) {
            edits.skipped += 1;
        } else {
            let syn = rules[*r].synonyms.choose(rng).expect("validated");
            let new = words(syn);
            let old: Vec<&str> = doc.tokens[i..end].iter().map(|t| t.text.as_str()).collect();
            if old != new.iter().map(String::as_str).collect::<Vec<_>>() {
                edits.changes += 1;
            }
            runs.push((i, end, new));
        }
        i = end;
    }
    (apply_replacements(doc, &runs), edits)
}

/// Rewrites every span of a configured entity type into one of its
/// templates, chosen with equal probability.
pub fn format_substitute(
    doc: &Document,
    rules: &[FormatRule],
    probability: f64,
    rng: &mut Rng,
) -> (Document, Edits) {
    let mut runs = Vec::new();
    let mut edits = Edits::default();
    for span in &doc.gold_spans {
        let Some(rule) = rules.iter().find(|r| r.entity_type == span.entity_type) else {
            continue;
        };
        let text = doc.tokens[span.token_indices()]
            .iter()
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        let Some(value) = parse_value(&text, rule.kind, &rule.templates) else {
            edits.skipped += 1;
            continue;
        };
        if !rng.gen_bool(probability) {
            continue;
        }
        let template = rule.templates.choose(rng).expect("validated");
        let new = value.format(template);
        if new != text {
            edits.changes += 1;
        }
        runs.push((span.start, span.end, words(&new)));
    }
    runs.sort_by_key(|r| r.0);
    (apply_replacements(doc, &runs), edits)
}

fn shift_box(b: BBox, dx: i64, dy: i64) -> BBox {
    let [x0, y0, x1, y1] = b.micros();
    BBox::from_micros([x0 + dx, y0 + dy, x1 + dx, y1 + dy])
}

/// `d` limited so that `[lo + d, hi + d]` stays within the unit interval.
fn clamp_shift(d: i64, lo: i64, hi: i64) -> i64 {
    d.clamp(-lo, to_micros(1.0) - hi)
}

/// Moves whole spans (or single tokens, in per-token mode) by a random
/// fraction of the page, clamped to stay on the page.
pub fn transform_coordinates(doc: &Document, rule: &CoordinateRule, rng: &mut Rng) -> (Document, Edits) {
    let mut out = doc.clone();
    out.weights = None;
    let mut edits = Edits::default();
    let f = rule.max_shift;
    let groups: Vec<std::ops::Range<usize>> = if rule.per_token {
        (0..doc.len()).map(|i| i..i + 1).collect()
    } else {
        doc.gold_spans.iter().map(EntitySpan::token_indices).collect()
    };
    for g in groups {
        if !rng.gen_bool(rule.probability) {
            continue;
        }
        let dx = to_micros(rng.gen_range(-f..=f));
        let dy = to_micros(rng.gen_range(-f..=f));
        let union = doc.tokens[g.clone()]
            .iter()
            .map(|t| t.bbox)
            .reduce(|a, b| a.union(&b))
            .unwrap();
        let [ux0, uy0, ux1, uy1] = union.micros();
        let (dx, dy) = (clamp_shift(dx, ux0, ux1), clamp_shift(dy, uy0, uy1));
        if dx != 0 || dy != 0 {
            edits.changes += 1;
        }
        for i in g {
            out.tokens[i].bbox = shift_box(doc.tokens[i].bbox, dx, dy);
        }
    }
    (out, edits)
}

/// Grows `b` about its center by `fx` of its width and `fy` of its height,
/// clamped to the page.
pub fn expand_bbox(b: BBox, fx: f64, fy: f64) -> BBox {
    let (cx, cy) = b.center();
    let (hw, hh) = (b.width() * (1.0 + fx) / 2.0, b.height() * (1.0 + fy) / 2.0);
    BBox::new(
        (cx - hw).max(0.0),
        (cy - hh).max(0.0),
        (cx + hw).min(1.0),
        (cy + hh).min(1.0),
    )
}

/// Expands every token box of each selected span by independent fractions.
pub fn expand_bboxes(doc: &Document, rule: &BBoxRule, rng: &mut Rng) -> (Document, Edits) {
    let mut out = doc.clone();
    out.weights = None;
    let mut edits = Edits::default();
    let f = rule.max_expansion;
    for span in &doc.gold_spans {
        if !rng.gen_bool(rule.probability) {
            continue;
        }
        for i in span.token_indices() {
            let (fx, fy) = (rng.gen_range(0.0..=f), rng.gen_range(0.0..=f));
            let b = expand_bbox(doc.tokens[i].bbox, fx, fy);
            if b != doc.tokens[i].bbox {
                edits.changes += 1;
            }
            out.tokens[i].bbox = b;
        }
    }
    (out, edits)
}

/// Applies one rule family to one document.
pub fn apply_rule(doc: &Document, rules: &AugmentationRuleSet, kind: RuleKind, rng: &mut Rng) -> (Document, Edits) {
    match kind {
        RuleKind::Synonym => synonym_substitute(doc, &rules.synonyms, rng),
        RuleKind::Format => format_substitute(doc, &rules.formats, rules.format_probability, rng),
        RuleKind::Coordinate => transform_coordinates(doc, &rules.coordinate, rng),
        RuleKind::BBox => expand_bboxes(doc, &rules.bbox, rng),
    }
}

/// Stream label for one synthetic document.
pub fn stream_label(pass: usize, rule: RuleKind, doc_id: &str) -> String {
    format!("augment/pass{pass}/{}/doc{doc_id}", rule.name())
}

/// `n_passes x |R| x |H|` synthetic documents, identity outputs included
/// and recognizable by `lineage.changes == 0`.
pub fn build_synthetic_corpus(h: &Corpus, rules: &AugmentationRuleSet, seed: u64) -> Result<Corpus> {
    rules.validate()?;
    let kinds = rules.rules();
    let mut docs = Vec::with_capacity(rules.n_passes * kinds.len() * h.len());
    for pass in 1..=rules.n_passes {
        for &kind in &kinds {
            for src in &h.documents {
                if !src.is_labeled() {
                    return Err(NatError::Unlabeled(src.id.clone()));
                }
                let label = stream_label(pass, kind, &src.id);
                let mut rng = substream(seed, &label);
                let (mut d, edits) = apply_rule(src, rules, kind, &mut rng);
                d.id = format!("{}~p{pass}~{}", src.id, kind.name());
                d.lineage = Some(Lineage {
                    source_id: src.id.clone(),
                    rule: kind.name().to_string(),
                    pass,
                    seed: derive_seed(seed, &label),
                    changes: edits.changes,
                    skipped: edits.skipped,
                });
                let report = validate_document(&d, &h.schema);
                if !report.is_valid() {
                    return Err(NatError::Invalid(format!(
                        "synthetic document {} is invalid: {:?}",
                        d.id, report.violations
                    )));
                }
                docs.push(d);
            }
        }
    }
    Ok(Corpus::new(h.schema.clone(), Provenance::Synthetic).with_documents(docs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus_io::{corpus_to_string, generate_mini_invoices, MiniInvoiceConfig};
    use crate::doc_model::EntitySchema;
    use std::collections::BTreeMap;

    fn line(words: &[&str]) -> Document {
        let tokens = words
            .iter()
            .enumerate()
            .map(|(i, w)| Token::new(*w, BBox::new(0.1 + 0.1 * i as f64, 0.2, 0.18 + 0.1 * i as f64, 0.22)))
            .collect();
        Document::new("d", 850.0, 1100.0, tokens)
    }

    fn texts(d: &Document) -> Vec<&str> {
        d.tokens.iter().map(|t| t.text.as_str()).collect()
    }

    fn schema() -> EntitySchema {
        MiniInvoiceConfig::default().schema().unwrap()
    }

    #[test]
    fn total_is_replaced_by_a_synonym() {
        let d = line(&["Total", "12.00"]).with_spans(vec![EntitySpan::new("total_billed_amount", 1, 2)]);
        let rule = SynonymRule {
            keys: vec!["Total".into()],
            synonyms: vec!["Amount".into(), "Tot.".into()],
        };
        let mut seen = std::collections::BTreeSet::new();
        for s in 0..20 {
            let (out, e) = synonym_substitute(&d, std::slice::from_ref(&rule), &mut substream(s, "t"));
            assert_eq!(e.changes, 1);
            assert_eq!(out.tokens[1].text, "12.00");
            assert_eq!(out.gold_spans, d.gold_spans);
            assert!(validate_document(&out, &schema()).is_valid());
            seen.insert(out.tokens[0].text.clone());
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec!["Amount", "Tot."]);
    }

    #[test]
    fn no_key_phrase_is_identity() {
        let d = line(&["Invoice", "4711"]).with_spans(vec![EntitySpan::new("invoice_number", 1, 2)]);
        let rule = SynonymRule {
            keys: vec!["Total".into()],
            synonyms: vec!["Amount".into()],
        };
        let (out, e) = synonym_substitute(&d, &[rule], &mut substream(1, "t"));
        assert_eq!(out, d);
        assert_eq!(e, Edits::default());
    }

    #[test]
    fn three_word_key_to_one_word_shifts_later_spans() {
        let d = line(&["Total", "Amount", "Due", "12.00", "Ref", "77"])
            .with_spans(vec![EntitySpan::new("total_billed_amount", 3, 4), EntitySpan::new("invoice_number", 5, 6)]);
        let rule = SynonymRule {
            keys: vec!["total amount due".into()],
            synonyms: vec!["Tot.".into()],
        };
        let (out, _) = synonym_substitute(&d, &[rule], &mut substream(1, "t"));
        assert_eq!(texts(&out), ["Tot.", "12.00", "Ref", "77"]);
        assert_eq!(
            out.gold_spans,
            vec![EntitySpan::new("total_billed_amount", 1, 2), EntitySpan::new("invoice_number", 3, 4)]
        );
        // the replacement keeps the phrase's region
        assert_eq!(out.tokens[0].bbox, BBox::new(0.1, 0.2, 0.38, 0.22));
        assert_eq!(out.tokens[1].bbox, d.tokens[3].bbox);
    }

    #[test]
    fn replacement_words_split_the_region_by_length() {
        let region = BBox::new(0.0, 0.0, 0.6, 0.1);
        let boxes = divide_region(region, &words("ab abcd"));
        assert_eq!(boxes[0], BBox::new(0.0, 0.0, 0.2, 0.1));
        assert_eq!(boxes[1], BBox::new(0.2, 0.0, 0.6, 0.1));
    }

    fn date_rule() -> FormatRule {
        FormatRule {
            entity_type: "purchase_date".into(),
            kind: ValueKind::Date,
            templates: vec!["%m/%d/%y".into(), "%m-%d-%y".into(), "%o %b, %y".into()],
        }
    }

    #[test]
    fn purchase_date_takes_one_of_three_forms_uniformly() {
        let d = line(&["Date", "11/19/90"]).with_spans(vec![EntitySpan::new("purchase_date", 1, 2)]);
        let rule = date_rule();
        let mut counts = BTreeMap::new();
        let n = 3000;
        for s in 0..n {
            let (out, _) = format_substitute(&d, std::slice::from_ref(&rule), 1.0, &mut substream(s, "fmt"));
            let span = &out.gold_spans[0];
            let text = texts(&out)[span.token_indices()].join(" ");
            *counts.entry(text).or_insert(0usize) += 1;
            assert!(validate_document(&out, &schema()).is_valid());
        }
        let keys: Vec<&str> = counts.keys().map(String::as_str).collect();
        assert_eq!(keys, ["11-19-90", "11/19/90", "19th Nov, 90"]);
        for c in counts.values() {
            assert!((*c as f64 / n as f64 - 1.0 / 3.0).abs() <= 0.03, "{counts:?}");
        }
    }

    #[test]
    fn single_matching_template_leaves_text_unchanged() {
        let d = line(&["Date", "11/19/90"]).with_spans(vec![EntitySpan::new("purchase_date", 1, 2)]);
        let rule = FormatRule {
            templates: vec!["%m/%d/%y".into()],
            ..date_rule()
        };
        let (out, e) = format_substitute(&d, &[rule], 1.0, &mut substream(0, "fmt"));
        assert_eq!(texts(&out), texts(&d));
        assert_eq!(e.changes, 0);
        let garbage = line(&["Date", "soon"]).with_spans(vec![EntitySpan::new("purchase_date", 1, 2)]);
        let (_, e) = format_substitute(&garbage, &[date_rule()], 1.0, &mut substream(0, "fmt"));
        assert_eq!(e.skipped, 1);
    }

    #[test]
    fn zero_shift_and_zero_expansion_are_identities() {
        let d = line(&["a", "b", "c"]).with_spans(vec![EntitySpan::new("vendor_name", 0, 2)]);
        let zero_shift = CoordinateRule {
            max_shift: 0.0,
            probability: 1.0,
            ..Default::default()
        };
        assert_eq!(transform_coordinates(&d, &zero_shift, &mut substream(1, "c")).0, d);
        let zero_grow = BBoxRule {
            max_expansion: 0.0,
            probability: 1.0,
            ..Default::default()
        };
        assert_eq!(expand_bboxes(&d, &zero_grow, &mut substream(1, "b")).0, d);
    }

    #[test]
    fn exact_center_preserving_expansion() {
        let b = expand_bbox(BBox::new(0.4, 0.4, 0.6, 0.6), 0.5, 0.5);
        assert_eq!(b, BBox::new(0.35, 0.35, 0.65, 0.65));
        let clamped = expand_bbox(BBox::new(0.0, 0.9, 0.2, 1.0), 1.0, 1.0);
        assert!(clamped.is_in_range() && clamped.is_ordered());
    }

    #[test]
    fn shifted_spans_keep_their_internal_layout() {
        let corpus = generate_mini_invoices(
            &MiniInvoiceConfig {
                n_documents: 20,
                ..Default::default()
            },
            2,
        )
        .unwrap();
        let rule = CoordinateRule {
            max_shift: 0.3,
            probability: 1.0,
            ..Default::default()
        };
        for (k, d) in corpus.documents.iter().enumerate() {
            let (out, _) = transform_coordinates(d, &rule, &mut substream(k as u64, "c"));
            assert!(validate_document(&out, &corpus.schema).is_valid());
            assert_eq!(texts(&out), texts(d));
            for s in &d.gold_spans {
                let (a, b) = (s.start, s.end - 1);
                let off = |doc: &Document| {
                    let (p, q) = (doc.tokens[a].bbox.micros(), doc.tokens[b].bbox.micros());
                    [q[0] - p[0], q[1] - p[1], q[2] - p[2], q[3] - p[3]]
                };
                assert_eq!(off(&out), off(d));
            }
        }
    }

    #[test]
    fn reference_counts_and_determinism() {
        let h = generate_mini_invoices(
            &MiniInvoiceConfig {
                n_documents: 10,
                ..Default::default()
            },
            7,
        )
        .unwrap();
        let rules = AugmentationRuleSet::invoice();
        assert_eq!(rules.rules().len(), 4);
        let s = build_synthetic_corpus(&h, &rules, 3).unwrap();
        assert_eq!(s.len(), 200);
        assert!(s.validate().is_empty());
        assert_eq!(corpus_to_string(&s), corpus_to_string(&build_synthetic_corpus(&h, &rules, 3).unwrap()));
        for d in &s.documents {
            let src = h.get(&d.lineage.as_ref().unwrap().source_id).unwrap();
            let types = |x: &Document| {
                let mut v: Vec<String> = x.gold_spans.iter().map(|s| s.entity_type.clone()).collect();
                v.sort();
                v
            };
            assert_eq!(types(d), types(src));
        }
        let changed = s.documents.iter().filter(|d| !d.lineage.as_ref().unwrap().is_identity()).count();
        assert!(changed > 150, "{changed}");
        let none = AugmentationRuleSet {
            n_passes: 0,
            ..rules
        };
        assert!(build_synthetic_corpus(&h, &none, 3).unwrap().is_empty());
    }
}
