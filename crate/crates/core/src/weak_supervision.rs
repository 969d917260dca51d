//! Weak label sources: two model-based taggers of different architecture
//! fitted on the human-labeled corpus, and a phrase dictionary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus_io::{Corpus, Provenance};
use crate::doc_model::{decode_bioes, encode_bioes, Document, EntitySchema, EntitySpan, Tag};
use crate::error::{NatError, Result};
use crate::noise_aware::{make_human_weighted, weight_and_threshold, WeightedDocument};
use crate::rng::substream;
use crate::tagger::{
    init_params, predict, token_accuracy, Arch, ArchConfig, LossSpec, OptConfig, Prediction, TrainExample, Trainer,
    WindowConfig,
};
use crate::Params;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeakSourceKind {
    ModelAttention,
    ModelWindow,
    Dictionary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeakSourceSpec {
    pub source_id: String,
    pub kind: WeakSourceKind,
    /// Training epochs on H; defaults to 40 (attention) or 50 (window).
    #[serde(default)]
    pub epochs: Option<usize>,
    /// Offset mixed into the run seed for this source.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    /// Overrides the run-wide threshold C.
    #[serde(default)]
    pub threshold: Option<f64>,
    /// Probability of re-typing each predicted span, to emulate a noisier
    /// source. Confidences are left as predicted.
    #[serde(default)]
    pub label_noise: f64,
    #[serde(default = "default_match_confidence")]
    pub match_confidence: f64,
    #[serde(default = "default_other_confidence")]
    pub default_confidence: f64,
    #[serde(default)]
    pub window: Option<WindowConfig>,
    #[serde(default)]
    pub optimizer: OptConfig,
}

fn default_match_confidence() -> f64 {
    1.0
}

fn default_other_confidence() -> f64 {
    0.95
}

impl WeakSourceSpec {
    pub fn new(source_id: impl Into<String>, kind: WeakSourceKind) -> Self {
        WeakSourceSpec {
            source_id: source_id.into(),
            kind,
            epochs: None,
            seed: 0,
            lexicon: None,
            threshold: None,
            label_noise: 0.0,
            match_confidence: default_match_confidence(),
            default_confidence: default_other_confidence(),
            window: None,
            optimizer: OptConfig::default(),
        }
    }

    pub fn epochs(&self) -> usize {
        self.epochs.unwrap_or(match self.kind {
            WeakSourceKind::ModelAttention => 40,
            WeakSourceKind::ModelWindow => 50,
            WeakSourceKind::Dictionary => 0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NatError::Config(format!("weak source `{}`: {m}", self.source_id)));
        if self.source_id.is_empty() || self.source_id.contains(char::is_whitespace) {
            return bad("source_id must be a non-empty word".into());
        }
        if let Some(c) = self.threshold {
            if !(0.0..=1.0).contains(&c) {
                return bad("threshold must be in [0, 1]".into());
            }
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return bad("label_noise must be in [0, 1]".into());
        }
        for c in [self.match_confidence, self.default_confidence] {
            if !(c > 0.0 && c <= 1.0) {
                return bad("dictionary confidences must be in (0, 1]".into());
            }
        }
        if self.kind == WeakSourceKind::Dictionary && self.lexicon.is_none() {
            return bad("dictionary sources need a lexicon".into());
        }
        self.optimizer.validate()
    }
}

/// Case-normalized phrase table, longest match first.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    /// `(lowercased words, entity type)`, sorted by descending length.
    entries: Vec<(Vec<String>, String)>,
}

impl Lexicon {
    pub fn new(map: &BTreeMap<String, String>, schema: &EntitySchema) -> Result<Self> {
        let mut entries = Vec::with_capacity(map.len());
        for (phrase, ty) in map {
            if schema.index_of(ty).is_none() {
                return Err(NatError::UnknownEntityType(ty.clone()));
            }
            let words: Vec<String> = phrase.split_whitespace().map(str::to_lowercase).collect();
            if !words.is_empty() {
                entries.push((words, ty.clone()));
            }
        }
        if entries.is_empty() {
            return Err(NatError::Config("lexicon is empty".into()));
        }
        entries.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        Ok(Lexicon { entries })
    }

    /// Reads a TOML table mapping phrases to entity types.
    pub fn load(path: &Path, schema: &EntitySchema) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NatError::io(path, e))?;
        let map: BTreeMap<String, String> =
            toml::from_str(&text).map_err(|e| NatError::Config(format!("{}: {e}", path.display())))?;
        Self::new(&map, schema)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Non-overlapping matches, scanning left to right and preferring the
    /// longest phrase at each position.
    pub fn matches(&self, doc: &Document) -> Vec<EntitySpan> {
        let words: Vec<String> = doc.tokens.iter().map(|t| t.text.to_lowercase()).collect();
        let mut spans = Vec::new();
        let mut i = 0;
        while i < words.len() {
            let hit = self
                .entries
                .iter()
                .find(|(p, _)| i + p.len() <= words.len() && words[i..i + p.len()] == p[..]);
            match hit {
                Some((p, ty)) => {
                    spans.push(EntitySpan::new(ty.clone(), i, i + p.len()));
                    i += p.len();
                }
                None => i += 1,
            }
        }
        spans
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceModel {
    Tagger(Params),
    Lexicon(Lexicon),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakSource {
    pub spec: WeakSourceSpec,
    pub model: SourceModel,
    /// Token accuracy on H after fitting; `None` for dictionaries.
    pub train_accuracy: Option<f64>,
    /// Fitting epochs actually run; fewer than configured when the
    /// deadline cut fitting short.
    pub epochs_run: usize,
}

impl WeakSource {
    /// Wraps already-trained parameters, e.g. a teacher model.
    pub fn from_params(spec: WeakSourceSpec, params: Params) -> Self {
        WeakSource {
            spec,
            model: SourceModel::Tagger(params),
            train_accuracy: None,
            epochs_run: 0,
        }
    }

    pub fn params(&self) -> Option<&Params> {
        match &self.model {
            SourceModel::Tagger(p) => Some(p),
            SourceModel::Lexicon(_) => None,
        }
    }
}

/// Settings shared by all sources of a run.
#[derive(Debug, Clone)]
pub struct FitContext<'a> {
    pub seed: u64,
    pub arch: ArchConfig,
    /// Pre-trained encoder for the attention kind; random init otherwise.
    pub init: Option<&'a Params>,
    /// No epoch starts once it would end past this instant.
    pub deadline: Option<Instant>,
}

pub fn human_examples(h: &Corpus, vocab_size: usize) -> Result<Vec<TrainExample>> {
    h.documents
        .iter()
        .map(|d| make_human_weighted(d, &h.schema)?.to_example(vocab_size))
        .collect()
}

/// Fits one source on the human-labeled corpus.
pub fn fit_weak_source(spec: &WeakSourceSpec, h: &Corpus, ctx: &FitContext<'_>) -> Result<WeakSource> {
    spec.validate()?;
    let seed = crate::rng::derive_seed(ctx.seed, &format!("weak/{}/{}", spec.source_id, spec.seed));
    let arch = match spec.kind {
        WeakSourceKind::Dictionary => {
            let path = spec.lexicon.as_ref().expect("validated");
            return Ok(WeakSource {
                spec: spec.clone(),
                model: SourceModel::Lexicon(Lexicon::load(path, &h.schema)?),
                train_accuracy: None,
                epochs_run: 0,
            });
        }
        WeakSourceKind::ModelAttention => Arch::Attention(ArchConfig {
            n_tags: h.schema.n_tags(),
            ..ctx.arch.clone()
        }),
        WeakSourceKind::ModelWindow => Arch::Window(WindowConfig {
            n_tags: h.schema.n_tags(),
            ..spec.window.clone().unwrap_or_default()
        }),
    };
    if h.is_empty() {
        return Err(NatError::EmptyCorpus(format!("weak source `{}` needs human labels", spec.source_id)));
    }
    let mut params = match (spec.kind, ctx.init) {
        (WeakSourceKind::ModelAttention, Some(p)) => {
            let mut p = p.clone();
            p.epoch = 0;
            p
        }
        _ => init_params(&arch, seed)?,
    };
    let examples = human_examples(h, params.arch.vocab_size())?;
    let mut trainer = Trainer::new(LossSpec::cross_entropy(), spec.optimizer.clone(), seed);
    let mut epochs_run = 0;
    let mut last = Duration::ZERO;
    for _ in 0..spec.epochs() {
        if ctx.deadline.is_some_and(|d| Instant::now() + last > d) {
            log::warn!("weak source {}: deadline reached after {epochs_run} epochs", spec.source_id);
            break;
        }
        let t = Instant::now();
        trainer.epoch(&mut params, &examples)?;
        last = t.elapsed();
        epochs_run += 1;
    }
    let acc = token_accuracy(&params, &examples);
    log::info!("weak source {}: {} epochs, train token accuracy {acc:.3}", spec.source_id, spec.epochs());
    Ok(WeakSource {
        spec: spec.clone(),
        model: SourceModel::Tagger(params),
        train_accuracy: Some(acc),
        epochs_run,
    })
}

/// Summary of one inference run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakReport {
    pub source_id: String,
    pub threshold: f64,
    pub n_documents: usize,
    pub n_tokens: usize,
    pub retained_fraction: f64,
    pub spans_per_type: BTreeMap<String, usize>,
    pub relabeled_spans: usize,
}

/// Re-types each span with probability `rate`.
fn corrupt(pred: &mut Prediction, rate: f64, schema: &EntitySchema, rng: &mut crate::rng::Rng) -> usize {
    if rate <= 0.0 || schema.len() < 2 {
        return 0;
    }
    let mut spans = decode_bioes(&pred.tags, schema).spans;
    let mut changed = 0;
    for s in &mut spans {
        if rng.gen_bool(rate) {
            let cur = schema.index_of(&s.entity_type).unwrap();
            let other = (cur + rng.gen_range(1..schema.len())) % schema.len();
            s.entity_type = schema.entity_types[other].clone();
            changed += 1;
        }
    }
    pred.tags = encode_bioes(&spans, pred.tags.len(), schema).expect("spans from a valid decode");
    changed
}

fn dictionary_prediction(lex: &Lexicon, spec: &WeakSourceSpec, doc: &Document, schema: &EntitySchema) -> Prediction {
    let spans = lex.matches(doc);
    let tags = encode_bioes(&spans, doc.len(), schema).expect("lexicon matches do not overlap");
    let confidences = tags
        .iter()
        .map(|t| if *t == Tag::O { spec.default_confidence } else { spec.match_confidence })
        .collect();
    Prediction { tags, confidences }
}

/// Labels every document of `u`, weights tokens by confidence and masks
/// those below `c_min`.
pub fn infer_weak_labels(
    source: &WeakSource,
    u: &Corpus,
    c_min: f64,
    seed: u64,
) -> Result<(Vec<WeightedDocument>, WeakReport)> {
    let schema = &u.schema;
    let id = &source.spec.source_id;
    let mut out = Vec::with_capacity(u.len());
    let mut spans_per_type: BTreeMap<String, usize> = schema.entity_types.iter().map(|e| (e.clone(), 0)).collect();
    let (mut kept, mut total, mut relabeled) = (0usize, 0usize, 0usize);
    for doc in &u.documents {
        let mut pred = match &source.model {
            SourceModel::Tagger(p) => predict(p, doc, schema)?,
            SourceModel::Lexicon(l) => dictionary_prediction(l, &source.spec, doc, schema),
        };
        let mut rng = substream(seed, &format!("weak/{id}/noise/doc{}", doc.id));
        relabeled += corrupt(&mut pred, source.spec.label_noise, schema, &mut rng);
        let (wd, _) = weight_and_threshold(doc, &pred, id, c_min, schema);
        for s in decode_bioes(&wd.tags, schema).spans {
            if s.token_indices().all(|i| wd.weights[i] > 0.0) {
                *spans_per_type.get_mut(&s.entity_type).unwrap() += 1;
            }
        }
        kept += wd.weights.iter().filter(|&&w| w > 0.0).count();
        total += wd.weights.len();
        out.push(wd);
    }
    let report = WeakReport {
        source_id: id.clone(),
        threshold: c_min,
        n_documents: out.len(),
        n_tokens: total,
        retained_fraction: if total == 0 { 0.0 } else { kept as f64 / total as f64 },
        spans_per_type,
        relabeled_spans: relabeled,
    };
    log::info!(
        "weak source {id}: {} docs, retained {:.3} of tokens at C={c_min}",
        report.n_documents,
        report.retained_fraction
    );
    Ok((out, report))
}

/// Weakly labeled documents as a corpus in the canonical format.
pub fn weak_corpus(docs: &[WeightedDocument], schema: &EntitySchema, source_id: &str) -> Corpus {
    Corpus::new(schema.clone(), Provenance::Weak(source_id.to_string()))
        .with_documents(docs.iter().map(|d| d.to_document(schema)).collect())
}

pub fn weighted_from_corpus(corpus: &Corpus) -> Result<Vec<WeightedDocument>> {
    corpus
        .documents
        .iter()
        .map(|d| WeightedDocument::from_document(d, &corpus.schema, corpus.provenance.clone()))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    /// `None` when nothing was retained.
    pub precision: Option<f64>,
    pub recall: f64,
    pub predicted: usize,
    pub correct: usize,
    pub gold: usize,
}

impl PrecisionRecall {
    fn finish(predicted: usize, correct: usize, gold: usize) -> Self {
        PrecisionRecall {
            precision: (predicted > 0).then(|| correct as f64 / predicted as f64),
            recall: if gold == 0 { 0.0 } else { correct as f64 / gold as f64 },
            predicted,
            correct,
            gold,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WeakScore {
    pub token: PrecisionRecall,
    pub span: PrecisionRecall,
    pub token_per_type: BTreeMap<String, PrecisionRecall>,
    pub span_per_type: BTreeMap<String, PrecisionRecall>,
}

/// Scores retained weak labels against sealed gold spans.
///
/// Token level counts entity-tagged tokens: a retained token predicted as
/// entity type `e` is correct when the gold tag at that position has the
/// same BIOES tag. Span level counts predicted spans whose tokens are all
/// retained, matched exactly against gold spans.
pub fn score_weak_labels(weak: &[WeightedDocument], sealed: &Corpus) -> Result<WeakScore> {
    let schema = &sealed.schema;
    if weak.len() != sealed.len() {
        return Err(NatError::IdMismatch(format!(
            "{} weak documents vs {} gold documents",
            weak.len(),
            sealed.len()
        )));
    }
    let n = schema.len();
    let (mut tp, mut tc, mut tg) = (vec![0usize; n], vec![0usize; n], vec![0usize; n]);
    let (mut sp, mut sc, mut sg) = (vec![0usize; n], vec![0usize; n], vec![0usize; n]);
    for (w, g) in weak.iter().zip(&sealed.documents) {
        if w.document.id != g.id || w.tags.len() != g.len() {
            return Err(NatError::IdMismatch(format!("{} vs {}", w.document.id, g.id)));
        }
        let gold_tags = encode_bioes(&g.gold_spans, g.len(), schema)?;
        for (i, (&p, &t)) in w.tags.iter().zip(gold_tags.iter()).enumerate() {
            if let Some(e) = t.entity() {
                tg[e as usize] += 1;
            }
            if let Some(e) = p.entity() {
                if w.weights[i] > 0.0 {
                    tp[e as usize] += 1;
                    if p == t {
                        tc[e as usize] += 1;
                    }
                }
            }
        }
        for s in &g.gold_spans {
            sg[schema.index_of(&s.entity_type).unwrap()] += 1;
        }
        for s in decode_bioes(&w.tags, schema).spans {
            if s.token_indices().all(|i| w.weights[i] > 0.0) {
                let e = schema.index_of(&s.entity_type).unwrap();
                sp[e] += 1;
                if g.gold_spans.contains(&s) {
                    sc[e] += 1;
                }
            }
        }
    }
    let sum = |v: &[usize]| v.iter().sum::<usize>();
    let per_type = |p: &[usize], c: &[usize], g: &[usize]| {
        schema
            .entity_types
            .iter()
            .enumerate()
            .map(|(e, name)| (name.clone(), PrecisionRecall::finish(p[e], c[e], g[e])))
            .collect()
    };
    Ok(WeakScore {
        token: PrecisionRecall::finish(sum(&tp), sum(&tc), sum(&tg)),
        span: PrecisionRecall::finish(sum(&sp), sum(&sc), sum(&sg)),
        token_per_type: per_type(&tp, &tc, &tg),
        span_per_type: per_type(&sp, &sc, &sg),
    })
}

/// Tags as predicted by the gold spans; handy for oracles.
pub fn gold_prediction(doc: &Document, schema: &EntitySchema) -> Result<Prediction> {
    Ok(Prediction {
        tags: encode_bioes(&doc.gold_spans, doc.len(), schema)?,
        confidences: vec![1.0; doc.len()],
    })
}
