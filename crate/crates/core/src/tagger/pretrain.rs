//! Masked-token pre-training: a fraction of word ids per document is
//! replaced by [`MASK_ID`] and a reconstruction head predicts the original
//! hashed ids from the encoder output. The head is discarded afterwards.

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::ops::{linear, linear_backward, softmax_in_place, Matrix};
use super::train::{Adam, Gradients, OptConfig};
use super::{encode, encode_backward, featurize, Arch, TaggerParams, TokenFeatures, MASK_ID};
use crate::doc_model::Document;
use crate::error::{NatError, Result};
use crate::rng::substream;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub mask_rate: f64,
    pub optimizer: OptConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 5,
            mask_rate: 0.15,
            optimizer: OptConfig::default(),
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mask_rate) {
            return Err(NatError::Config("pretrain.mask_rate must be in [0, 1]".into()));
        }
        self.optimizer.validate()
    }
}

/// Linear map from encoder output to the hashed vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionHead<T> {
    pub in_dim: usize,
    pub vocab_size: usize,
    pub w: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> ReconstructionHead<T> {
    pub fn new(arch: &Arch, seed: u64) -> Self {
        let in_dim = encoder_width(arch);
        let vocab_size = arch.vocab_size();
        let a = (6.0 / (in_dim + vocab_size) as f64).sqrt();
        let mut rng = substream(seed, "init/pretrain.head.w");
        ReconstructionHead {
            in_dim,
            vocab_size,
            w: (0..in_dim * vocab_size).map(|_| T::c(rng.gen_range(-a..=a))).collect(),
            b: vec![T::zero(); vocab_size],
        }
    }
}

fn encoder_width(arch: &Arch) -> usize {
    match arch {
        Arch::Attention(a) => a.model_dim,
        Arch::Window(w) => w.hidden_dim,
    }
}

/// Masked copy of the features plus the masked positions, sorted.
fn mask(feats: &TokenFeatures, rate: f64, rng: &mut crate::rng::Rng) -> (TokenFeatures, Vec<usize>) {
    let n = feats.len();
    let k = ((rate * n as f64).round() as usize).min(n);
    let mut positions = index::sample(rng, n, k).into_vec();
    positions.sort_unstable();
    let mut masked = feats.clone();
    for &p in &positions {
        masked.word_ids[p] = MASK_ID;
    }
    (masked, positions)
}

fn gather_rows<T: Scalar>(z: &Matrix<T>, rows: &[usize]) -> Matrix<T> {
    let mut out = Matrix::zeros(rows.len(), z.cols);
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).copy_from_slice(z.row(r));
    }
    out
}

/// Epoch-by-epoch masked pre-training, so callers can check a time budget
/// between epochs.
pub struct Pretrainer<T> {
    pub params: TaggerParams<T>,
    pub head: ReconstructionHead<T>,
    pub losses: Vec<f64>,
    config: PretrainConfig,
    seed: u64,
    docs: Vec<(String, TokenFeatures)>,
    adam: Adam<T>,
}

impl<T: Scalar> Pretrainer<T> {
    pub fn new(params: TaggerParams<T>, docs: &[Document], config: &PretrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let vocab = params.arch.vocab_size();
        let mut feats = Vec::with_capacity(docs.len());
        for d in docs {
            super::check_length(&params, d)?;
            feats.push((d.id.clone(), featurize(d, vocab)));
        }
        Ok(Pretrainer {
            head: ReconstructionHead::new(&params.arch, seed),
            params,
            losses: Vec::new(),
            config: config.clone(),
            seed,
            docs: feats,
            adam: Adam::new(config.optimizer.clone()),
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.losses.len()
    }

    /// Mean masked-token cross-entropy over the epoch's batches.
    pub fn run_epoch(&mut self) -> Result<f64> {
        let e = self.losses.len();
        let mut order: Vec<usize> = (0..self.docs.len()).collect();
        order.shuffle(&mut substream(self.seed, &format!("pretrain/order{e}")));
        let (mut total, mut n_batches) = (0.0, 0usize);
        for chunk in order.chunks(self.config.optimizer.batch_size) {
            let mut grads = Gradients::zeros_like(&self.params);
            let mut gw = vec![T::zero(); self.head.w.len()];
            let mut gb = vec![T::zero(); self.head.b.len()];
            let mut batch: Vec<usize> = chunk.to_vec();
            batch.sort_by(|&a, &b| self.docs[a].0.cmp(&self.docs[b].0));
            let masked: Vec<_> = batch
                .iter()
                .map(|&i| {
                    let (id, f) = &self.docs[i];
                    let mut rng = substream(self.seed, &format!("pretrain/epoch{e}/doc{id}"));
                    (i, mask(f, self.config.mask_rate, &mut rng))
                })
                .collect();
            let count: usize = masked.iter().map(|(_, (_, p))| p.len()).sum();
            if count == 0 {
                continue;
            }
            let scale = T::one() / T::c(count as f64);
            let mut loss = 0.0;
            for (i, (feats, positions)) in &masked {
                if positions.is_empty() {
                    continue;
                }
                let original = &self.docs[*i].1.word_ids;
                let (z, cache) = encode(&self.params, feats);
                let zm = gather_rows(&z, positions);
                let mut logits = linear(&zm, &self.head.w, &self.head.b);
                for (r, &p) in positions.iter().enumerate() {
                    let target = original[p];
                    let row = logits.row_mut(r);
                    let ce = super::ops::cross_entropy(row, target);
                    loss += ce.f64();
                    softmax_in_place(row);
                    row[target] -= T::one();
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                let dzm = linear_backward(&zm, &self.head.w, &logits, &mut gw, &mut gb, true).unwrap();
                let mut dz = Matrix::zeros(z.rows, z.cols);
                for (r, &p) in positions.iter().enumerate() {
                    dz.row_mut(p).copy_from_slice(dzm.row(r));
                }
                encode_backward(&self.params, feats, &cache, &dz, &mut grads);
            }
            let loss = loss / count as f64;
            if !loss.is_finite() {
                return Err(NatError::NonFiniteLoss(self.docs[batch[0]].0.clone()));
            }
            total += loss;
            n_batches += 1;
            // the tag head gets no gradient here; keep it out of the moments
            let h = self.params.tensors.len() - 2;
            self.adam.begin_step();
            for (slot, (t, g)) in self.params.tensors.iter_mut().zip(&grads.data).enumerate().take(h) {
                self.adam.update(slot, &mut t.data, g);
            }
            self.adam.update(h, &mut self.head.w, &gw);
            self.adam.update(h + 1, &mut self.head.b, &gb);
        }
        let mean = if n_batches == 0 { 0.0 } else { total / n_batches as f64 };
        self.losses.push(mean);
        Ok(mean)
    }

    pub fn finish(self) -> (TaggerParams<T>, ReconstructionHead<T>) {
        (self.params, self.head)
    }
}

/// Pre-trains for `config.epochs` and returns the encoder together with the
/// reconstruction head and per-epoch losses.
pub fn pretrain_masked_with_head<T: Scalar>(
    params: TaggerParams<T>,
    docs: &[Document],
    config: &PretrainConfig,
    seed: u64,
) -> Result<(TaggerParams<T>, ReconstructionHead<T>, Vec<f64>)> {
    let mut p = Pretrainer::new(params, docs, config, seed)?;
    for _ in 0..config.epochs {
        p.run_epoch()?;
    }
    let losses = p.losses.clone();
    let (params, head) = p.finish();
    Ok((params, head, losses))
}

pub fn pretrain_masked<T: Scalar>(
    params: TaggerParams<T>,
    docs: &[Document],
    config: &PretrainConfig,
    seed: u64,
) -> Result<TaggerParams<T>> {
    pretrain_masked_with_head(params, docs, config, seed).map(|(p, _, _)| p)
}

/// Share of masked positions whose original id is the head's argmax.
pub fn masked_token_accuracy<T: Scalar>(
    params: &TaggerParams<T>,
    head: &ReconstructionHead<T>,
    docs: &[Document],
    mask_rate: f64,
    seed: u64,
) -> f64 {
    let (mut hit, mut n) = (0usize, 0usize);
    for d in docs {
        let feats = featurize(d, params.arch.vocab_size());
        let mut rng = substream(seed, &format!("pretrain/eval/doc{}", d.id));
        let (masked, positions) = mask(&feats, mask_rate, &mut rng);
        if positions.is_empty() {
            continue;
        }
        let (z, _) = encode(params, &masked);
        let logits = linear(&gather_rows(&z, &positions), &head.w, &head.b);
        for (r, &p) in positions.iter().enumerate() {
            let row = logits.row(r);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            hit += usize::from(best == feats.word_ids[p]);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        hit as f64 / n as f64
    }
}
