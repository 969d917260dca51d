//! Losses, gradients and the optimizer loop.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::ops::{cross_entropy, softmax_in_place, Matrix};
use super::{backward_pass, featurize, forward_pass, TaggerParams, TokenFeatures};
use crate::doc_model::{Document, TagSequence};
use crate::error::{NatError, Result};
use crate::noise_aware::{layer_extrema, reflect_with, GradientMode};
use crate::rng::substream;
use crate::scalar::Scalar;

/// Gradient tensors aligned with a parameter set's tensor order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub data: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(params: &TaggerParams<T>) -> Self {
        Gradients {
            data: params.tensors.iter().map(|t| vec![T::zero(); t.data.len()]).collect(),
        }
    }

    /// Mutable views of tensors `i` and `i + 1` (a weight and its bias).
    pub fn pair_mut(&mut self, i: usize) -> (&mut [T], &mut [T]) {
        let (a, b) = self.data.split_at_mut(i + 1);
        (&mut a[i], &mut b[0])
    }

    pub fn scale(&mut self, k: T) {
        self.data.iter_mut().flatten().for_each(|g| *g *= k);
    }

    /// `self += k * other`.
    pub fn add_scaled(&mut self, other: &Gradients<T>, k: T) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += k * y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().flatten().all(|g| g.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().flatten().map(|g| g.f64() * g.f64()).sum::<f64>().sqrt()
    }
}

/// One training document: features, target class per token and weight per
/// token.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub id: String,
    pub features: TokenFeatures,
    pub targets: Vec<usize>,
    pub weights: Vec<f64>,
}

impl TrainExample {
    pub fn new(doc: &Document, tags: &TagSequence, weights: &[f64], vocab_size: usize) -> Result<Self> {
        if tags.len() != doc.len() || weights.len() != doc.len() {
            return Err(NatError::Invalid(format!(
                "document {}: {} tokens, {} tags, {} weights",
                doc.id,
                doc.len(),
                tags.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(NatError::Invalid(format!("document {}: weight {w} outside [0, 1]", doc.id)));
        }
        Ok(TrainExample {
            id: doc.id.clone(),
            features: featurize(doc, vocab_size),
            targets: tags.0.iter().map(|t| t.class_index()).collect(),
            weights: weights.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// How per-token contributions are aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Divide by the sum of token weights.
    #[default]
    WeightMean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    /// `c * CE` per token.
    CrossEntropy,
    /// `c * CE + lambda * [c > 0] * CE_opposite` per token.
    NoiseAware { lambda: f64, mode: GradientMode },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    pub reduction: Reduction,
}

impl LossSpec {
    pub fn cross_entropy() -> Self {
        LossSpec {
            kind: LossKind::CrossEntropy,
            reduction: Reduction::WeightMean,
        }
    }

    pub fn noise_aware(lambda: f64, mode: GradientMode) -> Self {
        LossSpec {
            kind: LossKind::NoiseAware { lambda, mode },
            reduction: Reduction::WeightMean,
        }
    }

    pub fn with_reduction(mut self, reduction: Reduction) -> Self {
        self.reduction = reduction;
        self
    }
}

/// Accumulates `dlogits` for `scale * CE(softmax(logits), target)` and
/// returns the unscaled cross-entropy.
fn ce_row<T: Scalar>(logits: &[T], target: usize, scale: T, dlogits: &mut [T]) -> T {
    let mut p = logits.to_vec();
    softmax_in_place(&mut p);
    let ce = cross_entropy(logits, target);
    for (d, &pj) in dlogits.iter_mut().zip(&p) {
        *d += scale * pj;
    }
    dlogits[target] -= scale;
    ce
}

/// Loss and its gradient over a batch.
///
/// For the noise-aware loss `opposite` must be the opposite parameter set.
/// In flow-through mode it must be the reflection of `params` under frozen
/// extrema, and the returned gradient includes `-lambda * dL0/dp'`.
pub fn grad<T: Scalar>(
    params: &TaggerParams<T>,
    batch: &[&TrainExample],
    spec: &LossSpec,
    opposite: Option<&TaggerParams<T>>,
) -> Result<(f64, Gradients<T>)> {
    let mut grads = Gradients::zeros_like(params);
    let (lambda, mode) = match spec.kind {
        LossKind::CrossEntropy => (0.0, GradientMode::Detached),
        LossKind::NoiseAware { lambda, mode } => (lambda, mode),
    };
    let opposite = match (spec.kind, opposite) {
        (LossKind::NoiseAware { .. }, None) => {
            return Err(NatError::Invalid("noise-aware loss needs the opposite model".into()))
        }
        (LossKind::NoiseAware { .. }, Some(o)) => Some(o),
        _ => None,
    };
    let max = params.arch.max_seq_len();
    for ex in batch {
        if ex.len() > max {
            return Err(NatError::SequenceTooLong {
                id: ex.id.clone(),
                len: ex.len(),
                max,
            });
        }
    }

    let total_weight: f64 = batch.iter().flat_map(|e| e.weights.iter()).sum();
    if total_weight <= 0.0 {
        return Ok((0.0, grads));
    }
    let norm = match spec.reduction {
        Reduction::WeightMean => 1.0 / total_weight,
        Reduction::Sum => 1.0,
    };
    let mut opp_grads = match (opposite, mode) {
        (Some(o), GradientMode::FlowThrough) => Some(Gradients::zeros_like(o)),
        _ => None,
    };

    let mut loss = 0.0;
    for ex in batch {
        if ex.weights.iter().all(|&w| w == 0.0) {
            continue;
        }
        let pass = forward_pass(params, &ex.features);
        let n_tags = pass.logits.cols;
        let mut dlogits = Matrix::zeros(ex.len(), n_tags);
        let mut doc_loss = 0.0;
        for (i, (&y, &c)) in ex.targets.iter().zip(&ex.weights).enumerate() {
            if c == 0.0 {
                continue;
            }
            let ce = ce_row(pass.logits.row(i), y, T::c(c * norm), dlogits.row_mut(i));
            doc_loss += c * ce.f64();
        }
        if let Some(opp) = opposite {
            let opp_pass = forward_pass(opp, &ex.features);
            let mut dopp = Matrix::zeros(ex.len(), n_tags);
            for (i, (&y, &c)) in ex.targets.iter().zip(&ex.weights).enumerate() {
                if c == 0.0 {
                    continue;
                }
                let ce = ce_row(opp_pass.logits.row(i), y, T::c(lambda * norm), dopp.row_mut(i));
                doc_loss += lambda * ce.f64();
            }
            if let Some(og) = opp_grads.as_mut() {
                backward_pass(opp, &ex.features, &opp_pass, &dopp, og);
            }
        }
        if !doc_loss.is_finite() {
            return Err(NatError::NonFiniteLoss(ex.id.clone()));
        }
        loss += doc_loss * norm;
        backward_pass(params, &ex.features, &pass, &dlogits, &mut grads);
    }
    if let Some(og) = opp_grads {
        // p' = max + min - p, so dp'/dp = -1
        grads.add_scaled(&og, -T::one());
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 8,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr < 0.0 || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(NatError::Config("optimizer: lr >= 0, betas in [0, 1), eps > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(NatError::Config("optimizer.batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Adaptive-moment optimizer state. Moment buffers are indexed by tensor
/// slot and allocated on first use.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    config: OptConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: OptConfig) -> Self {
        Adam {
            config,
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
        }
    }

    pub fn config(&self) -> &OptConfig {
        &self.config
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Starts a new step; call once before the per-tensor updates.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn update(&mut self, slot: usize, param: &mut [T], grad: &[T]) {
        if self.m.len() <= slot {
            self.m.resize(slot + 1, Vec::new());
            self.v.resize(slot + 1, Vec::new());
        }
        if self.m[slot].len() != param.len() {
            self.m[slot] = vec![T::zero(); param.len()];
            self.v[slot] = vec![T::zero(); param.len()];
        }
        let c = &self.config;
        let (b1, b2) = (T::c(c.beta1), T::c(c.beta2));
        let bc1 = T::one() - T::c(c.beta1.powi(self.step));
        let bc2 = T::one() - T::c(c.beta2.powi(self.step));
        let (lr, eps) = (T::c(c.lr), T::c(c.eps));
        let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
        for i in 0..param.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + (T::one() - b1) * g;
            v[i] = b2 * v[i] + (T::one() - b2) * g * g;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            param[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }

    pub fn step(&mut self, params: &mut TaggerParams<T>, grads: &Gradients<T>) {
        self.begin_step();
        for (slot, (t, g)) in params.tensors.iter_mut().zip(&grads.data).enumerate() {
            self.update(slot, &mut t.data, g);
        }
    }
}

/// One pass over `examples` in a shuffled order drawn from the
/// `train/epoch{t}` stream. The opposite model is rebuilt from `params` at
/// the start of the epoch. Returns the mean batch loss and advances the
/// epoch counter.
pub fn train_epoch<T: Scalar>(
    params: &mut TaggerParams<T>,
    examples: &[TrainExample],
    spec: &LossSpec,
    adam: &mut Adam<T>,
    seed: u64,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(NatError::EmptyCorpus("no training examples".into()));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut substream(seed, &format!("train/epoch{}", params.epoch)));

    let extrema = match spec.kind {
        LossKind::NoiseAware { .. } => Some(layer_extrema(params)?),
        LossKind::CrossEntropy => None,
    };
    let detached = match (&extrema, spec.kind) {
        (Some(e), LossKind::NoiseAware { mode: GradientMode::Detached, .. }) => Some(reflect_with(params, e)),
        _ => None,
    };

    let mut total = 0.0;
    let mut n_batches = 0;
    for chunk in order.chunks(adam.config().batch_size) {
        let mut batch: Vec<&TrainExample> = chunk.iter().map(|&i| &examples[i]).collect();
        batch.sort_by(|a, b| a.id.cmp(&b.id));
        let flowing;
        let opposite = match (&detached, &extrema) {
            (Some(d), _) => Some(d),
            (None, Some(e)) => {
                flowing = reflect_with(params, e);
                Some(&flowing)
            }
            (None, None) => None,
        };
        let (loss, grads) = grad(params, &batch, spec, opposite)?;
        total += loss;
        n_batches += 1;
        if batch.iter().all(|e| e.weights.iter().all(|&w| w == 0.0)) {
            continue;
        }
        adam.step(params, &grads);
    }
    params.epoch += 1;
    Ok(total / n_batches as f64)
}

/// Optimizer state plus loss choice for a fine-tuning stage.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub spec: LossSpec,
    pub seed: u64,
    adam: Adam<T>,
    pub losses: Vec<f64>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(spec: LossSpec, opt: OptConfig, seed: u64) -> Self {
        Trainer {
            spec,
            seed,
            adam: Adam::new(opt),
            losses: Vec::new(),
        }
    }

    pub fn epoch(&mut self, params: &mut TaggerParams<T>, examples: &[TrainExample]) -> Result<f64> {
        let loss = train_epoch(params, examples, &self.spec, &mut self.adam, self.seed)?;
        self.losses.push(loss);
        Ok(loss)
    }
}

/// Fraction of tokens whose argmax class equals the target.
pub fn token_accuracy<T: Scalar>(params: &TaggerParams<T>, examples: &[TrainExample]) -> f64 {
    let (mut hit, mut n) = (0usize, 0usize);
    for ex in examples {
        let logits = forward_pass(params, &ex.features).logits;
        for (i, &y) in ex.targets.iter().enumerate() {
            let row = logits.row(i);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            hit += usize::from(best == y);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        hit as f64 / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::{small_arch, toy_doc};
    use super::super::{init_params, Arch, WindowConfig};
    use super::*;
    use crate::doc_model::Tag;
    use rand::Rng as _;

    fn example(words: &[&str], tags: Vec<Tag>, weights: Vec<f64>, vocab: usize) -> TrainExample {
        TrainExample::new(&toy_doc(words), &TagSequence(tags), &weights, vocab).unwrap()
    }

    fn batch(vocab: usize) -> Vec<TrainExample> {
        vec![
            example(
                &["Invoice", "No", "4711", "Total"],
                vec![Tag::O, Tag::B(0), Tag::E(0), Tag::S(1)],
                vec![1.0, 0.7, 0.95, 0.0],
                vocab,
            ),
            example(&["Date", "11/19/90", "x"], vec![Tag::O, Tag::S(0), Tag::O], vec![0.5, 1.0, 0.9], vocab),
        ]
    }

    /// Checks analytic against central differences on sampled coordinates of
    /// every tensor; returns the number of coordinates checked.
    fn check(params: &TaggerParams<f64>, spec: &LossSpec, per_tensor: usize, seed: u64) -> usize {
        let vocab = params.arch.vocab_size();
        let exs = batch(vocab);
        let refs: Vec<&TrainExample> = exs.iter().collect();
        let extrema = layer_extrema(params).unwrap();
        let fixed_opp = reflect_with(params, &extrema);
        let flow = matches!(spec.kind, LossKind::NoiseAware { mode: GradientMode::FlowThrough, .. });
        let loss_at = |p: &TaggerParams<f64>| {
            let opp = if flow { reflect_with(p, &extrema) } else { fixed_opp.clone() };
            grad(p, &refs, spec, Some(&opp)).unwrap()
        };
        let (_, g) = loss_at(params);
        let mut rng = crate::rng::substream(seed, "fd");
        let h = 1e-4;
        let mut n = 0;
        for (ti, t) in params.tensors.iter().enumerate() {
            for _ in 0..per_tensor {
                let k = if t.name == "embed.word" {
                    // rows that the batch actually touches
                    let ids: Vec<usize> = exs.iter().flat_map(|e| e.features.word_ids.clone()).collect();
                    let dim = t.shape[1];
                    ids[rng.gen_range(0..ids.len())] * dim + rng.gen_range(0..dim)
                } else {
                    rng.gen_range(0..t.data.len())
                };
                let mut plus = params.clone();
                plus.tensors[ti].data[k] += h;
                let mut minus = params.clone();
                minus.tensors[ti].data[k] -= h;
                let fd = (loss_at(&plus).0 - loss_at(&minus).0) / (2.0 * h);
                let a = g.data[ti][k];
                assert!(
                    (a - fd).abs() <= 1e-6 + 1e-3 * fd.abs(),
                    "{} [{k}]: analytic {a} vs numeric {fd}",
                    t.name
                );
                n += 1;
            }
        }
        n
    }

    fn perturbed(arch: &Arch, seed: u64) -> TaggerParams<f64> {
        let mut p = init_params::<f64>(arch, seed).unwrap();
        // nonzero biases and gains so every term is exercised
        let mut rng = crate::rng::substream(seed, "perturb");
        for t in &mut p.tensors {
            for v in &mut t.data {
                *v += rng.gen_range(-0.2..0.2);
            }
        }
        p
    }

    #[test]
    fn attention_gradients_match_finite_differences() {
        let p = perturbed(&small_arch(9), 5);
        let specs = [
            LossSpec::cross_entropy(),
            LossSpec::noise_aware(0.3, GradientMode::Detached),
            LossSpec::noise_aware(0.3, GradientMode::FlowThrough),
            LossSpec::cross_entropy().with_reduction(Reduction::Sum),
        ];
        for (i, s) in specs.iter().enumerate() {
            assert!(check(&p, s, 3, i as u64) > 100);
        }
    }

    #[test]
    fn window_gradients_match_finite_differences() {
        let arch = Arch::Window(WindowConfig {
            word_dim: 4,
            hidden_dim: 6,
            radius: 2,
            vocab_size: 40,
            n_tags: 9,
            max_seq_len: 16,
        });
        let p = perturbed(&arch, 8);
        check(&p, &LossSpec::cross_entropy(), 6, 1);
        check(&p, &LossSpec::noise_aware(0.5, GradientMode::FlowThrough), 6, 2);
    }

    #[test]
    fn zero_weights_give_zero_loss_and_gradient() {
        let p = init_params::<f64>(&small_arch(9), 1).unwrap();
        let mut ex = batch(50);
        ex.iter_mut().for_each(|e| e.weights.iter_mut().for_each(|w| *w = 0.0));
        let refs: Vec<&TrainExample> = ex.iter().collect();
        let opp = crate::noise_aware::opposite_params(&p).unwrap();
        let (l, g) = grad(&p, &refs, &LossSpec::noise_aware(0.1, GradientMode::FlowThrough), Some(&opp)).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicate_document_leaves_mean_loss_unchanged() {
        let p = init_params::<f64>(&small_arch(9), 1).unwrap();
        let ex = batch(50);
        let (a, _) = grad(&p, &[&ex[0]], &LossSpec::cross_entropy(), None).unwrap();
        let (b, _) = grad(&p, &[&ex[0], &ex[0]], &LossSpec::cross_entropy(), None).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_only_advances_the_epoch() {
        let mut p = init_params::<f32>(&small_arch(9), 1).unwrap();
        let before = p.clone();
        let mut adam = Adam::new(OptConfig {
            lr: 0.0,
            ..Default::default()
        });
        train_epoch(&mut p, &batch(50), &LossSpec::cross_entropy(), &mut adam, 3).unwrap();
        assert_eq!(p.tensors, before.tensors);
        assert_eq!(p.epoch, 1);
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut p = init_params::<f32>(&small_arch(9), 1).unwrap();
            let mut adam = Adam::new(OptConfig::default());
            let spec = LossSpec::noise_aware(0.1, GradientMode::Detached);
            for _ in 0..3 {
                train_epoch(&mut p, &batch(50), &spec, &mut adam, 3).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn scaling_weights_scales_the_sum_loss() {
        let p = init_params::<f64>(&small_arch(9), 2).unwrap();
        let ex = batch(50);
        let mut half = ex.clone();
        half.iter_mut().for_each(|e| e.weights.iter_mut().for_each(|w| *w *= 0.5));
        let spec = LossSpec::cross_entropy().with_reduction(Reduction::Sum);
        let (a, ga) = grad(&p, &ex.iter().collect::<Vec<_>>(), &spec, None).unwrap();
        let (b, gb) = grad(&p, &half.iter().collect::<Vec<_>>(), &spec, None).unwrap();
        assert!((b - 0.5 * a).abs() < 1e-12);
        for (x, y) in ga.data.iter().flatten().zip(gb.data.iter().flatten()) {
            assert!((0.5 * x - y).abs() < 1e-12);
        }
    }
}
