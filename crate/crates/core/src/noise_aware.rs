//! Confidence weighting, thresholding and the opposite-model regularizer.
//!
//! The opposite of a parameter set reflects every tensor through its own
//! extrema, `p' = max + min - p`. The noise-aware loss of one token is
//! `c * CE(main, y) + lambda * CE(opposite, y)`, where the second term only
//! counts for tokens with `c > 0`.

use serde::{Deserialize, Serialize};

use crate::corpus_io::Provenance;
use crate::doc_model::{decode_bioes, encode_bioes, Document, EntitySchema, TagSequence};
use crate::error::{NatError, Result};
use crate::scalar::Scalar;
use crate::tagger::{cross_entropy, Matrix, Prediction, TaggerParams, TrainExample};

/// How the opposite-model term contributes to the gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// The opposite model is a fixed reference for the epoch; its term is
    /// reported in the loss but carries no gradient.
    #[default]
    Detached,
    /// Gradient flows through the reflection with the extrema held fixed,
    /// contributing `-lambda * dL0/dp'`.
    FlowThrough,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseAwareConfig {
    pub lambda: f64,
    /// Threshold used by sources that do not set their own.
    pub threshold: f64,
    pub gradient_mode: GradientMode,
}

impl Default for NoiseAwareConfig {
    fn default() -> Self {
        NoiseAwareConfig {
            lambda: 0.1,
            threshold: 0.9,
            gradient_mode: GradientMode::Detached,
        }
    }
}

impl NoiseAwareConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(NatError::Config("noise_aware.lambda must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(NatError::Config("noise_aware.threshold must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// `(max, min)` of every tensor, in storage order.
pub fn layer_extrema<T: Scalar>(params: &TaggerParams<T>) -> Result<Vec<(T, T)>> {
    params
        .tensors
        .iter()
        .map(|t| {
            if t.data.is_empty() {
                return Err(NatError::EmptyTensor(t.name.clone()));
            }
            if !t.data.iter().all(|v| v.is_finite()) {
                return Err(NatError::NonFinite(format!("tensor `{}`", t.name)));
            }
            let max = t.data.iter().copied().fold(T::neg_infinity(), T::max);
            let min = t.data.iter().copied().fold(T::infinity(), T::min);
            Ok((max, min))
        })
        .collect()
}

/// Error-free sum: `a + b == s + e` exactly.
fn two_sum<T: Scalar>(a: T, b: T) -> (T, T) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Reflection of `params` through the given extrema.
///
/// `max + min - v` is evaluated with compensated sums so each output is
/// rounded once: the extrema map exactly onto each other and a constant
/// tensor is left untouched.
pub fn reflect_with<T: Scalar>(params: &TaggerParams<T>, extrema: &[(T, T)]) -> TaggerParams<T> {
    let mut out = params.clone();
    for (t, &(max, min)) in out.tensors.iter_mut().zip(extrema) {
        let (s, e) = two_sum(max, min);
        t.data.iter_mut().for_each(|v| {
            let (h, l) = two_sum(s, -*v);
            *v = h + (l + e);
        });
    }
    out
}

pub fn opposite_params<T: Scalar>(params: &TaggerParams<T>) -> Result<TaggerParams<T>> {
    Ok(reflect_with(params, &layer_extrema(params)?))
}

fn loss_terms<T: Scalar>(
    main: &Matrix<T>,
    opposite: &Matrix<T>,
    targets: &[usize],
    weights: &[f64],
    lambda: f64,
) -> Result<(f64, f64)> {
    if main.rows != targets.len() || opposite.rows != targets.len() || weights.len() != targets.len() {
        return Err(NatError::Invalid("logits, targets and weights must align".into()));
    }
    if !main.is_finite() || !opposite.is_finite() || !weights.iter().all(|w| w.is_finite()) {
        return Err(NatError::NonFinite("noise-aware loss inputs".into()));
    }
    let (mut sum, mut norm) = (0.0, 0.0);
    for (i, (&y, &c)) in targets.iter().zip(weights).enumerate() {
        if c == 0.0 {
            continue;
        }
        sum += c * cross_entropy(main.row(i), y).f64() + lambda * cross_entropy(opposite.row(i), y).f64();
        norm += c;
    }
    Ok((sum, norm))
}

/// Weight-normalized noise-aware loss; zero when every weight is zero.
pub fn noise_aware_loss<T: Scalar>(
    main: &Matrix<T>,
    opposite: &Matrix<T>,
    targets: &TagSequence,
    weights: &[f64],
    config: &NoiseAwareConfig,
) -> Result<f64> {
    let targets: Vec<usize> = targets.iter().map(|t| t.class_index()).collect();
    let (sum, norm) = loss_terms(main, opposite, &targets, weights, config.lambda)?;
    Ok(if norm > 0.0 { sum / norm } else { 0.0 })
}

/// Unnormalized form: the plain sum of per-token contributions.
pub fn noise_aware_loss_sum<T: Scalar>(
    main: &Matrix<T>,
    opposite: &Matrix<T>,
    targets: &TagSequence,
    weights: &[f64],
    config: &NoiseAwareConfig,
) -> Result<f64> {
    let targets: Vec<usize> = targets.iter().map(|t| t.class_index()).collect();
    loss_terms(main, opposite, &targets, weights, config.lambda).map(|(s, _)| s)
}

/// A document with assigned tags, per-token weights and label provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDocument {
    pub document: Document,
    pub tags: TagSequence,
    pub weights: Vec<f64>,
    pub provenance: Provenance,
}

impl WeightedDocument {
    pub fn retained_fraction(&self) -> f64 {
        if self.weights.is_empty() {
            return 0.0;
        }
        self.weights.iter().filter(|&&w| w > 0.0).count() as f64 / self.weights.len() as f64
    }

    pub fn to_example(&self, vocab_size: usize) -> Result<TrainExample> {
        TrainExample::new(&self.document, &self.tags, &self.weights, vocab_size)
    }

    /// The document with spans taken from the assigned tags and weights
    /// attached, for serialization.
    pub fn to_document(&self, schema: &EntitySchema) -> Document {
        let mut d = self.document.clone();
        d.gold_spans = decode_bioes(&self.tags, schema).spans;
        d.weights = Some(self.weights.clone());
        d
    }

    /// Inverse of [`WeightedDocument::to_document`]; missing weights read
    /// as 1.0.
    pub fn from_document(doc: &Document, schema: &EntitySchema, provenance: Provenance) -> Result<Self> {
        let tags = encode_bioes(&doc.gold_spans, doc.len(), schema)?;
        let weights = doc.weights.clone().unwrap_or_else(|| vec![1.0; doc.len()]);
        let mut document = doc.clone();
        document.weights = None;
        Ok(WeightedDocument {
            document,
            tags,
            weights,
            provenance,
        })
    }
}

/// Weights a prediction by its confidences and masks tokens below `c_min`.
/// A predicted span with any token below the threshold is masked as a
/// whole. Returns the weighted document and its retained-token fraction.
pub fn weight_and_threshold(
    doc: &Document,
    predicted: &Prediction,
    source_id: &str,
    c_min: f64,
    schema: &EntitySchema,
) -> (WeightedDocument, f64) {
    let conf = &predicted.confidences;
    let mut weights: Vec<f64> = conf.iter().map(|&c| if c >= c_min { c } else { 0.0 }).collect();
    for span in decode_bioes(&predicted.tags, schema).spans {
        if span.token_indices().any(|i| conf[i] < c_min) {
            span.token_indices().for_each(|i| weights[i] = 0.0);
        }
    }
    let mut document = doc.stripped();
    document.weights = None;
    let wd = WeightedDocument {
        document,
        tags: predicted.tags.clone(),
        weights,
        provenance: Provenance::Weak(source_id.to_string()),
    };
    let retained = wd.retained_fraction();
    (wd, retained)
}

/// Gold labels with weight exactly 1.0 on every token.
pub fn make_human_weighted(doc: &Document, schema: &EntitySchema) -> Result<WeightedDocument> {
    if !doc.is_labeled() {
        return Err(NatError::Unlabeled(doc.id.clone()));
    }
    let tags = encode_bioes(&doc.gold_spans, doc.len(), schema)?;
    let mut document = doc.clone();
    document.weights = None;
    Ok(WeightedDocument {
        document,
        tags,
        weights: vec![1.0; doc.len()],
        provenance: Provenance::Human,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc_model::{BBox, EntitySpan, Tag, Token};
    use crate::tagger::{Arch, Tensor, WindowConfig};

    fn one_layer(data: Vec<f64>) -> TaggerParams<f64> {
        TaggerParams {
            arch: Arch::Window(WindowConfig::default()),
            tensors: vec![Tensor {
                name: "w".into(),
                shape: vec![data.len()],
                data,
            }],
            epoch: 3,
        }
    }

    #[test]
    fn reflection_of_a_small_layer() {
        let p = one_layer(vec![0.2, 0.5, 0.8]);
        let o = opposite_params(&p).unwrap();
        let want = [0.8, 0.5, 0.2];
        for (a, b) in o.tensors[0].data.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(o.epoch, 3);
        assert_eq!(p.tensors[0].data, vec![0.2, 0.5, 0.8]);
        let c = one_layer(vec![0.3; 4]);
        assert_eq!(opposite_params(&c).unwrap(), c);
        assert!(matches!(opposite_params(&one_layer(vec![])), Err(NatError::EmptyTensor(_))));
    }

    fn schema() -> EntitySchema {
        EntitySchema::new("t", vec!["q".into(), "h".into()]).unwrap()
    }

    fn doc(n: usize) -> Document {
        let tokens = (0..n)
            .map(|i| Token::new(format!("w{i}"), BBox::new(0.1 * i as f64, 0.1, 0.1 * i as f64 + 0.05, 0.12)))
            .collect();
        Document::new("d", 100.0, 100.0, tokens)
    }

    #[test]
    fn single_token_sum_form() {
        // CE = 2 for the main row, 1 for the opposite row, target class 0
        let row = |ce: f64| {
            // two classes: logits [0, z] with log(1 + e^z) = ce
            let z = (ce.exp() - 1.0).ln();
            Matrix::from_vec(1, 2, vec![0.0, z])
        };
        let cfg = NoiseAwareConfig {
            lambda: 0.1,
            ..Default::default()
        };
        let tags = TagSequence(vec![Tag::O]);
        let s = noise_aware_loss_sum(&row(2.0), &row(1.0), &tags, &[0.5], &cfg).unwrap();
        assert!((s - 1.1).abs() < 1e-12);
        let m = noise_aware_loss(&row(2.0), &row(1.0), &tags, &[0.5], &cfg).unwrap();
        assert!((m - 2.2).abs() < 1e-12);
        let zero = NoiseAwareConfig {
            lambda: 0.0,
            ..Default::default()
        };
        assert_eq!(noise_aware_loss(&row(2.0), &row(1.0), &tags, &[0.0], &zero).unwrap(), 0.0);
    }

    #[test]
    fn thresholding_examples() {
        let d = doc(3);
        let s = schema();
        let pred = Prediction {
            tags: TagSequence(vec![Tag::O; 3]),
            confidences: vec![0.95, 0.40, 0.92],
        };
        let (w, r) = weight_and_threshold(&d, &pred, "src", 0.9, &s);
        assert_eq!(w.weights, vec![0.95, 0.0, 0.92]);
        assert!((r - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(w.provenance, Provenance::Weak("src".into()));
        let (w0, _) = weight_and_threshold(&d, &pred, "src", 0.0, &s);
        assert_eq!(w0.weights, pred.confidences);

        let span = Prediction {
            tags: TagSequence(vec![Tag::B(0), Tag::I(0), Tag::E(0)]),
            confidences: vec![0.95, 0.85, 0.95],
        };
        let (w, r) = weight_and_threshold(&d, &span, "src", 0.9, &s);
        assert_eq!(w.weights, vec![0.0; 3]);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn human_weights() {
        let s = schema();
        let d = doc(4).with_spans(vec![EntitySpan::new("q", 0, 2), EntitySpan::new("h", 3, 4)]);
        let w = make_human_weighted(&d, &s).unwrap();
        assert_eq!(w.weights, vec![1.0; 4]);
        assert_eq!(decode_bioes(&w.tags, &s).spans, d.gold_spans);
        assert!(matches!(make_human_weighted(&doc(4), &s), Err(NatError::Unlabeled(_))));
        let back = WeightedDocument::from_document(&w.to_document(&s), &s, Provenance::Human).unwrap();
        assert_eq!(back, w);
    }
}
