//! The extractor: a compact layout-aware token tagger.
//!
//! Two architectures share one parameter container and one training loop:
//! a self-attention encoder over word and box features (the main
//! extractor), and a windowed feed-forward tagger that looks at each
//! token with its two neighbours on either side.

mod attention;
mod checkpoint;
mod ops;
mod pretrain;
mod train;
mod window;

use std::hash::Hasher;

use fnv::FnvHasher;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::doc_model::{repair, Document, EntitySchema, Tag, TagSequence};
use crate::error::{NatError, Result};
use crate::rng::substream;
use crate::scalar::Scalar;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, parse_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint,
    CHECKPOINT_MAGIC,
};
pub use ops::{cross_entropy, log_sum_exp, softmax_rows, Matrix};
pub use pretrain::{
    masked_token_accuracy, pretrain_masked, pretrain_masked_with_head, PretrainConfig, Pretrainer, ReconstructionHead,
};
pub use train::{
    grad, token_accuracy, train_epoch, Adam, Gradients, LossKind, LossSpec, OptConfig, Reduction, TrainExample, Trainer,
};

/// Word id reserved for masked positions.
pub const MASK_ID: usize = 0;
/// Number of geometry features per token: `x0, y0, x1, y1, width, height`.
pub const GEOMETRY_DIM: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub word_dim: usize,
    pub bbox_dim: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub n_tags: usize,
    pub max_seq_len: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            word_dim: 64,
            bbox_dim: 16,
            model_dim: 128,
            ff_dim: 256,
            n_blocks: 2,
            n_heads: 4,
            vocab_size: 8192,
            n_tags: 0,
            max_seq_len: 512,
        }
    }
}

impl ArchConfig {
    pub fn for_schema(schema: &EntitySchema) -> Self {
        ArchConfig {
            n_tags: schema.n_tags(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("word_dim", self.word_dim),
            ("bbox_dim", self.bbox_dim),
            ("model_dim", self.model_dim),
            ("ff_dim", self.ff_dim),
            ("n_blocks", self.n_blocks),
            ("n_heads", self.n_heads),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(NatError::Config(format!("arch.{name} must be positive")));
            }
        }
        if !self.model_dim.is_multiple_of(self.n_heads) {
            return Err(NatError::Config("arch.model_dim must be divisible by arch.n_heads".into()));
        }
        if self.vocab_size < 2 {
            return Err(NatError::Config("arch.vocab_size must be at least 2".into()));
        }
        if self.n_tags < 2 {
            return Err(NatError::Config("arch.n_tags must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub word_dim: usize,
    pub hidden_dim: usize,
    /// Neighbours on each side.
    pub radius: usize,
    pub vocab_size: usize,
    pub n_tags: usize,
    pub max_seq_len: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            word_dim: 32,
            hidden_dim: 128,
            radius: 2,
            vocab_size: 8192,
            n_tags: 0,
            max_seq_len: 512,
        }
    }
}

impl WindowConfig {
    pub fn for_schema(schema: &EntitySchema) -> Self {
        WindowConfig {
            n_tags: schema.n_tags(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.word_dim == 0 || self.hidden_dim == 0 || self.max_seq_len == 0 {
            return Err(NatError::Config("window dimensions must be positive".into()));
        }
        if self.vocab_size < 2 || self.n_tags < 2 {
            return Err(NatError::Config("window vocab_size and n_tags must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Arch {
    Attention(ArchConfig),
    Window(WindowConfig),
}

impl Arch {
    pub fn n_tags(&self) -> usize {
        match self {
            Arch::Attention(a) => a.n_tags,
            Arch::Window(w) => w.n_tags,
        }
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            Arch::Attention(a) => a.vocab_size,
            Arch::Window(w) => w.vocab_size,
        }
    }

    pub fn max_seq_len(&self) -> usize {
        match self {
            Arch::Attention(a) => a.max_seq_len,
            Arch::Window(w) => w.max_seq_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Arch::Attention(a) => a.validate(),
            Arch::Window(w) => w.validate(),
        }
    }

    /// Tensor names, shapes and initializers in storage order.
    pub(crate) fn layout(&self) -> Vec<TensorSpec> {
        match self {
            Arch::Attention(a) => attention::layout(a),
            Arch::Window(w) => window::layout(w),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Init {
    Zeros,
    Ones,
    /// Uniform in `[-a, a]`.
    Uniform(f64),
}

#[derive(Debug, Clone)]
pub(crate) struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl TensorSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        TensorSpec {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }

    /// Glorot-uniform matrix `fan_in x fan_out`.
    pub fn glorot(name: impl Into<String>, fan_in: usize, fan_out: usize) -> Self {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self::new(name, &[fan_in, fan_out], Init::Uniform(a))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Named parameter tensors of one tagger, in a fixed order, plus the epoch
/// counter.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggerParams<T> {
    pub arch: Arch,
    pub tensors: Vec<Tensor<T>>,
    pub epoch: u64,
}

impl<T: Scalar> TaggerParams<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|t| t.name.as_str())
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Element-type conversion, e.g. `f32` training weights to `f64`.
    pub fn cast<U: Scalar>(&self) -> TaggerParams<U> {
        TaggerParams {
            arch: self.arch.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|&v| U::c(v.f64())).collect(),
                })
                .collect(),
            epoch: self.epoch,
        }
    }

    pub(crate) fn check_shapes(&self) -> Result<()> {
        let layout = self.arch.layout();
        if layout.len() != self.tensors.len() {
            return Err(NatError::Checkpoint(format!(
                "expected {} tensors, found {}",
                layout.len(),
                self.tensors.len()
            )));
        }
        for (spec, t) in layout.iter().zip(&self.tensors) {
            if spec.name != t.name || spec.shape != t.shape || t.data.len() != spec.shape.iter().product::<usize>() {
                return Err(NatError::Checkpoint(format!("tensor `{}` does not match the architecture", t.name)));
            }
        }
        Ok(())
    }
}

/// Fresh parameters: weights scaled-uniform, biases zero, layer-norm gains
/// one, epoch 0. Each tensor draws from its own named stream.
pub fn init_params<T: Scalar>(arch: &Arch, seed: u64) -> Result<TaggerParams<T>> {
    arch.validate()?;
    let tensors = arch
        .layout()
        .into_iter()
        .map(|spec| {
            let n: usize = spec.shape.iter().product();
            let data = match spec.init {
                Init::Zeros => vec![T::zero(); n],
                Init::Ones => vec![T::one(); n],
                Init::Uniform(a) => {
                    let mut rng = substream(seed, &format!("init/{}", spec.name));
                    (0..n).map(|_| T::c(rng.gen_range(-a..=a))).collect()
                }
            };
            Tensor {
                name: spec.name,
                shape: spec.shape,
                data,
            }
        })
        .collect();
    Ok(TaggerParams {
        arch: arch.clone(),
        tensors,
        epoch: 0,
    })
}

/// Hashed word id in `1..vocab_size`; `0` is reserved for the mask.
/// Text is lowercased and digits collapse to `0` before hashing.
pub fn word_id(text: &str, vocab_size: usize) -> usize {
    let mut h = FnvHasher::default();
    for c in text.chars().flat_map(char::to_lowercase) {
        let c = if c.is_ascii_digit() { '0' } else { c };
        let mut buf = [0u8; 4];
        h.write(c.encode_utf8(&mut buf).as_bytes());
    }
    1 + (h.finish() % (vocab_size as u64 - 1)) as usize
}

/// Per-token model inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenFeatures {
    pub word_ids: Vec<usize>,
    pub geometry: Vec<[f64; GEOMETRY_DIM]>,
}

impl TokenFeatures {
    pub fn len(&self) -> usize {
        self.word_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_ids.is_empty()
    }

    pub(crate) fn geometry_matrix<T: Scalar>(&self) -> Matrix<T> {
        Matrix::from_vec(
            self.len(),
            GEOMETRY_DIM,
            self.geometry.iter().flat_map(|g| g.iter().map(|&v| T::c(v))).collect(),
        )
    }
}

pub fn featurize(doc: &Document, vocab_size: usize) -> TokenFeatures {
    TokenFeatures {
        word_ids: doc.tokens.iter().map(|t| word_id(&t.text, vocab_size)).collect(),
        geometry: doc
            .tokens
            .iter()
            .map(|t| {
                let b = t.bbox;
                [b.x0, b.y0, b.x1, b.y1, b.width(), b.height()]
            })
            .collect(),
    }
}

/// Encoder state at the input of the tag head.
pub(crate) enum EncoderCache<T> {
    Attention(attention::Cache<T>),
    Window(window::Cache<T>),
}

pub(crate) fn encode<T: Scalar>(params: &TaggerParams<T>, feats: &TokenFeatures) -> (Matrix<T>, EncoderCache<T>) {
    match &params.arch {
        Arch::Attention(a) => {
            let (z, c) = attention::encode(a, params, feats);
            (z, EncoderCache::Attention(c))
        }
        Arch::Window(w) => {
            let (z, c) = window::encode(w, params, feats);
            (z, EncoderCache::Window(c))
        }
    }
}

pub(crate) fn encode_backward<T: Scalar>(
    params: &TaggerParams<T>,
    feats: &TokenFeatures,
    cache: &EncoderCache<T>,
    dz: &Matrix<T>,
    grads: &mut Gradients<T>,
) {
    match (&params.arch, cache) {
        (Arch::Attention(a), EncoderCache::Attention(c)) => attention::encode_backward(a, params, feats, c, dz, grads),
        (Arch::Window(w), EncoderCache::Window(c)) => window::encode_backward(w, params, feats, c, dz, grads),
        _ => unreachable!("cache built by a different architecture"),
    }
}

/// Index of the tag-head weight; the bias follows it.
fn head_index<T>(params: &TaggerParams<T>) -> usize {
    params.tensors.len() - 2
}

pub(crate) struct Pass<T> {
    pub z: Matrix<T>,
    pub cache: EncoderCache<T>,
    pub logits: Matrix<T>,
}

pub(crate) fn forward_pass<T: Scalar>(params: &TaggerParams<T>, feats: &TokenFeatures) -> Pass<T> {
    let (z, cache) = encode(params, feats);
    let h = head_index(params);
    let logits = ops::linear(&z, &params.tensors[h].data, &params.tensors[h + 1].data);
    Pass { z, cache, logits }
}

pub(crate) fn backward_pass<T: Scalar>(
    params: &TaggerParams<T>,
    feats: &TokenFeatures,
    pass: &Pass<T>,
    dlogits: &Matrix<T>,
    grads: &mut Gradients<T>,
) {
    let h = head_index(params);
    let (dw, db) = grads.pair_mut(h);
    let dz = ops::linear_backward(&pass.z, &params.tensors[h].data, dlogits, dw, db, true).unwrap();
    encode_backward(params, feats, &pass.cache, &dz, grads);
}

pub(crate) fn check_length<T>(params: &TaggerParams<T>, doc: &Document) -> Result<()> {
    let max = params.arch.max_seq_len();
    if doc.len() > max {
        return Err(NatError::SequenceTooLong {
            id: doc.id.clone(),
            len: doc.len(),
            max,
        });
    }
    if doc.is_empty() {
        return Err(NatError::Invalid(format!("document {} has no tokens", doc.id)));
    }
    Ok(())
}

/// Per-token logits and their softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct TagDistribution<T> {
    pub logits: Matrix<T>,
    pub probs: Matrix<T>,
}

pub fn forward<T: Scalar>(params: &TaggerParams<T>, doc: &Document) -> Result<TagDistribution<T>> {
    check_length(params, doc)?;
    let feats = featurize(doc, params.arch.vocab_size());
    let logits = forward_pass(params, &feats).logits;
    let probs = softmax_rows(&logits);
    Ok(TagDistribution { logits, probs })
}

/// Greedy tags with their softmax confidence, repaired to a valid BIOES
/// sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub tags: TagSequence,
    pub confidences: Vec<f64>,
}

pub fn predict<T: Scalar>(params: &TaggerParams<T>, doc: &Document, schema: &EntitySchema) -> Result<Prediction> {
    let dist = forward(params, doc)?;
    Ok(prediction_from_probs(&dist.probs, schema))
}

pub(crate) fn prediction_from_probs<T: Scalar>(probs: &Matrix<T>, schema: &EntitySchema) -> Prediction {
    let n_classes = probs.cols.min(schema.n_tags());
    let mut tags = Vec::with_capacity(probs.rows);
    let mut confidences = Vec::with_capacity(probs.rows);
    for i in 0..probs.rows {
        let row = &probs.row(i)[..n_classes];
        let (best, p) = row
            .iter()
            .enumerate()
            .fold((0, T::neg_infinity()), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc });
        tags.push(Tag::from_class_index(best));
        confidences.push(p.f64());
    }
    Prediction {
        tags: repair(&TagSequence(tags), schema),
        confidences,
    }
}
