//! The three-phase training pipeline, its baselines and the ablation grid.
//!
//! Phase I initializes the extractor (masked-token pre-training on U, a
//! checkpoint, or random weights). Phase II fits every weak source on H,
//! labels U with it and fine-tunes on H ∪ W_i with the noise-aware loss,
//! one source after the other. Phase III fine-tunes on H ∪ S, where S is
//! the rule-based synthetic corpus built from H.
//!
//! The wall clock is checked before every epoch: an epoch only starts if
//! the previous epoch's duration still fits under `t_max`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::augmentation::{build_synthetic_corpus, AugmentationRuleSet};
use crate::corpus_io::{
    corpus_checksum, generate_mini_invoices, read_corpus, split_corpus, Corpus, MiniInvoiceConfig, PartitionSpec,
    Provenance,
};
use crate::error::{NatError, Result};
use crate::evaluation::{
    curve_spearman, evaluate_model, label_efficiency_curve, macro_f1, mean_std, saved_labels, CorpusScores, Counts,
    CurvePoint,
    EntityScore, SavedLabels,
};
use crate::noise_aware::{make_human_weighted, NoiseAwareConfig, WeightedDocument};
use crate::rng::{derive_seed, substream};
use crate::tagger::{
    init_params, load_checkpoint, save_checkpoint, Arch, ArchConfig, LossSpec, OptConfig, PretrainConfig, Pretrainer,
    TrainExample, Trainer,
};
use crate::weak_supervision::{
    fit_weak_source, infer_weak_labels, score_weak_labels, weak_corpus, FitContext, WeakReport, WeakScore, WeakSource,
    WeakSourceKind, WeakSourceSpec,
};
use crate::Params;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub h: Option<PathBuf>,
    pub u: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Gold labels of U, used only to score weak labels.
    pub sealed_u: Option<PathBuf>,
}

/// Generated mini-invoice corpora, used instead of `[data]` when present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub n_h: usize,
    pub n_u: usize,
    pub n_test: usize,
    pub seed: u64,
    pub generator: MiniInvoiceConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            n_h: 30,
            n_u: 100,
            n_test: 100,
            seed: 7,
            generator: MiniInvoiceConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase1Mode {
    #[default]
    Pretrain,
    Checkpoint,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseConfig {
    pub phase1: Phase1Mode,
    pub checkpoint: Option<PathBuf>,
    pub phase2: bool,
    pub phase3: bool,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        PhaseConfig {
            phase1: Phase1Mode::Pretrain,
            checkpoint: None,
            phase2: true,
            phase3: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpochConfig {
    /// Fine-tuning epochs on each H ∪ W_i.
    pub weak_stage: usize,
    /// Fine-tuning epochs on H ∪ S.
    pub synthetic_stage: usize,
    /// Fine-tuning epochs on H alone for the transfer baseline.
    pub tx: usize,
    /// Student epochs per self-training round.
    pub st_student: usize,
}

impl Default for EpochConfig {
    fn default() -> Self {
        EpochConfig {
            weak_stage: 5,
            synthetic_stage: 1,
            tx: 40,
            st_student: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct AugmentationConfig {
    /// Rule-set file; the shipped invoice rules when absent.
    pub rules: Option<PathBuf>,
    pub n_passes: Option<usize>,
    /// Leave synthetic documents that no rule changed out of S.
    pub drop_identity: bool,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub st_rounds: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { st_rounds: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Wall-clock budget in seconds.
    pub t_max: f64,
    pub data: DataConfig,
    pub benchmark: Option<BenchmarkConfig>,
    pub arch: ArchConfig,
    pub phases: PhaseConfig,
    pub epochs: EpochConfig,
    pub pretrain: PretrainConfig,
    pub optimizer: OptConfig,
    pub noise_aware: NoiseAwareConfig,
    pub weak_sources: Vec<WeakSourceSpec>,
    pub augmentation: AugmentationConfig,
    pub baseline: BaselineConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 1,
            t_max: 1800.0,
            data: DataConfig::default(),
            benchmark: None,
            arch: ArchConfig::default(),
            phases: PhaseConfig::default(),
            epochs: EpochConfig::default(),
            pretrain: PretrainConfig::default(),
            optimizer: OptConfig::default(),
            noise_aware: NoiseAwareConfig::default(),
            weak_sources: vec![
                WeakSourceSpec::new("attention", WeakSourceKind::ModelAttention),
                WeakSourceSpec::new("window", WeakSourceKind::ModelWindow),
            ],
            augmentation: AugmentationConfig::default(),
            baseline: BaselineConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// The mini-invoice reference setup: 30 H, 100 U and 100 test
    /// documents, two model sources whose labels are partly re-typed.
    pub fn reference() -> Self {
        let mut c = PipelineConfig {
            benchmark: Some(BenchmarkConfig::default()),
            ..Default::default()
        };
        for s in &mut c.weak_sources {
            s.label_noise = 0.1;
        }
        c
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| NatError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_max.is_nan() || self.t_max <= 0.0 {
            return Err(NatError::Config("t_max must be positive".into()));
        }
        let p = &self.phases;
        if p.phase1 == Phase1Mode::Checkpoint && p.checkpoint.is_none() {
            return Err(NatError::Config("phases.phase1 = \"checkpoint\" needs phases.checkpoint".into()));
        }
        let mut ids: Vec<&str> = self.weak_sources.iter().map(|s| s.source_id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(NatError::Config("weak source ids must be unique".into()));
        }
        for s in &self.weak_sources {
            s.validate()?;
        }
        self.noise_aware.validate()?;
        self.pretrain.validate()?;
        self.optimizer.validate()?;
        if self.benchmark.is_none() && self.data.h.is_none() {
            return Err(NatError::Config("either [benchmark] or data.h is required".into()));
        }
        Ok(())
    }

    /// Resolves relative paths against `base`, typically the directory of
    /// the config file.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p.as_mut() {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        fix(&mut self.data.h);
        fix(&mut self.data.u);
        fix(&mut self.data.test);
        fix(&mut self.data.sealed_u);
        fix(&mut self.phases.checkpoint);
        fix(&mut self.augmentation.rules);
        for s in &mut self.weak_sources {
            fix(&mut s.lexicon);
        }
    }

    pub fn rules(&self) -> Result<AugmentationRuleSet> {
        let mut r = match &self.augmentation.rules {
            Some(p) => AugmentationRuleSet::load(p)?,
            None => AugmentationRuleSet::invoice(),
        };
        if let Some(n) = self.augmentation.n_passes {
            r.n_passes = n;
        }
        Ok(r)
    }

    fn threshold(&self, spec: &WeakSourceSpec) -> f64 {
        spec.threshold.unwrap_or(self.noise_aware.threshold)
    }
}

/// The corpora a run reads.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpora {
    pub h: Corpus,
    pub u: Corpus,
    pub test: Option<Corpus>,
    pub sealed_u: Option<Corpus>,
}

impl Corpora {
    /// Copy whose H holds `k` documents drawn by `seed`, kept in id order.
    pub fn with_h_subset(&self, k: usize, seed: u64) -> Result<Corpora> {
        if k > self.h.len() {
            return Err(NatError::OverSubscribed {
                requested: k,
                available: self.h.len(),
            });
        }
        let mut picked = index::sample(&mut substream(seed, &format!("curve/h{k}")), self.h.len(), k).into_vec();
        picked.sort_unstable();
        let mut c = self.clone();
        c.h.documents = picked.into_iter().map(|i| self.h.documents[i].clone()).collect();
        Ok(c)
    }
}

pub fn benchmark_corpora(b: &BenchmarkConfig) -> Result<Corpora> {
    let generator = MiniInvoiceConfig {
        n_documents: b.n_h + b.n_u + b.n_test,
        ..b.generator.clone()
    };
    let all = generate_mini_invoices(&generator, b.seed)?;
    let mut parts = split_corpus(
        &all,
        &[
            PartitionSpec::labeled("h", b.n_h),
            PartitionSpec::unlabeled("u", b.n_u),
            PartitionSpec::labeled("test", b.n_test),
        ],
        b.seed,
    )?
    .into_iter();
    let (h, u, test) = (parts.next().unwrap(), parts.next().unwrap(), parts.next().unwrap());
    Ok(Corpora {
        h: Corpus {
            provenance: Provenance::Human,
            ..h.corpus
        },
        u: u.corpus,
        test: Some(Corpus {
            provenance: Provenance::Human,
            ..test.corpus
        }),
        sealed_u: u.sealed,
    })
}

/// Reads or generates the corpora named by the config.
pub fn load_corpora(config: &PipelineConfig) -> Result<Corpora> {
    if let Some(b) = &config.benchmark {
        return benchmark_corpora(b);
    }
    let d = &config.data;
    let h = read_corpus(d.h.as_ref().ok_or_else(|| NatError::Config("data.h is required".into()))?)?;
    let u = match &d.u {
        Some(p) => read_corpus(p)?,
        None => Corpus::new(h.schema.clone(), Provenance::Unlabeled),
    };
    let test = d.test.as_ref().map(read_corpus).transpose()?;
    let sealed_u = d.sealed_u.as_ref().map(read_corpus).transpose()?;
    let c = Corpora { h, u, test, sealed_u };
    check_corpora(&c)?;
    Ok(c)
}

fn check_corpora(c: &Corpora) -> Result<()> {
    let others = [Some(&c.u), c.test.as_ref(), c.sealed_u.as_ref()];
    for o in others.into_iter().flatten() {
        if o.schema != c.h.schema {
            return Err(NatError::SchemaMismatch(format!(
                "corpus schemas differ: {:?} vs {:?}",
                o.schema.entity_types, c.h.schema.entity_types
            )));
        }
    }
    for corpus in [Some(&c.h), Some(&c.u), c.test.as_ref()].into_iter().flatten() {
        if let Some(r) = corpus.validate().first() {
            return Err(NatError::SchemaMismatch(format!(
                "document {} is invalid: {:?}",
                r.document, r.violations
            )));
        }
    }
    if c.h.documents.iter().any(|d| !d.is_labeled()) {
        log::warn!("H contains documents without gold spans");
    }
    Ok(())
}

/// Wall-clock guard checked at epoch boundaries.
#[derive(Debug, Clone)]
pub struct Budget {
    start: Instant,
    t_max: Duration,
    last_epoch: Duration,
    exhausted: bool,
}

impl Budget {
    pub fn new(t_max_seconds: f64) -> Self {
        Self::resumed(t_max_seconds, Duration::ZERO)
    }

    /// A budget of which `spent` has already been used by earlier stages.
    pub fn resumed(t_max_seconds: f64, spent: Duration) -> Self {
        let now = Instant::now();
        Budget {
            start: now.checked_sub(spent).unwrap_or(now),
            t_max: Duration::from_secs_f64(t_max_seconds),
            last_epoch: Duration::ZERO,
            exhausted: false,
        }
    }

    pub fn deadline(&self) -> Instant {
        self.start + self.t_max
    }

    pub fn mark_exhausted(&mut self) {
        self.exhausted = true;
    }

    pub fn elapsed(&self) -> Duration {
        self.start.elapsed()
    }

    /// Whether another epoch, assumed as long as the last one, still fits.
    pub fn allow_epoch(&mut self) -> bool {
        if !self.exhausted && self.elapsed() + self.last_epoch > self.t_max {
            self.exhausted = true;
        }
        !self.exhausted
    }

    pub fn record_epoch(&mut self, d: Duration) {
        self.last_epoch = d;
    }

    pub fn is_exhausted(&self) -> bool {
        self.exhausted
    }
}

/// Wall clock and losses of one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub name: String,
    pub epochs_planned: usize,
    pub epochs_run: usize,
    pub losses: Vec<f64>,
    pub started_s: f64,
    pub finished_s: f64,
}

struct Clock<'a> {
    budget: &'a mut Budget,
    phases: &'a mut Vec<PhaseRecord>,
}

impl Clock<'_> {
    /// Runs up to `epochs` epochs of `step`, stopping early on budget.
    fn stage(&mut self, name: &str, epochs: usize, mut step: impl FnMut() -> Result<f64>) -> Result<()> {
        let mut rec = PhaseRecord {
            name: name.to_string(),
            epochs_planned: epochs,
            epochs_run: 0,
            losses: Vec::new(),
            started_s: self.budget.elapsed().as_secs_f64(),
            finished_s: 0.0,
        };
        for _ in 0..epochs {
            if !self.budget.allow_epoch() {
                log::warn!("{name}: budget exhausted after {} of {epochs} epochs", rec.epochs_run);
                break;
            }
            let t = Instant::now();
            let loss = step()?;
            self.budget.record_epoch(t.elapsed());
            rec.losses.push(loss);
            rec.epochs_run += 1;
            log::debug!("{name}: epoch {} loss {loss:.5}", rec.epochs_run);
        }
        rec.finished_s = self.budget.elapsed().as_secs_f64();
        log::info!(
            "{name}: {} epochs in {:.1}s (elapsed {:.1}s of t_max {:.0}s)",
            rec.epochs_run,
            rec.finished_s - rec.started_s,
            rec.finished_s,
            self.budget.t_max.as_secs_f64()
        );
        self.phases.push(rec);
        Ok(())
    }
}

/// Output of Phase I, shared by every scenario run with the same seed.
#[derive(Debug, Clone)]
pub struct Phase1 {
    pub params: Params,
    pub record: Option<PhaseRecord>,
    pub budget_exhausted: bool,
    pub elapsed: Duration,
}

fn arch_for(config: &PipelineConfig, corpora: &Corpora) -> Arch {
    Arch::Attention(ArchConfig {
        n_tags: corpora.h.schema.n_tags(),
        ..config.arch.clone()
    })
}

pub fn run_phase1(config: &PipelineConfig, corpora: &Corpora) -> Result<Phase1> {
    let seed = derive_seed(config.seed, "phase1");
    let arch = arch_for(config, corpora);
    let mut budget = Budget::new(config.t_max);
    match config.phases.phase1 {
        Phase1Mode::Random => Ok(Phase1 {
            params: init_params(&arch, seed)?,
            record: None,
            budget_exhausted: false,
            elapsed: budget.elapsed(),
        }),
        Phase1Mode::Checkpoint => {
            let path = config.phases.checkpoint.as_ref().expect("validated");
            let params: Params = load_checkpoint(path)?;
            if params.arch.n_tags() != arch.n_tags() {
                return Err(NatError::SchemaMismatch(format!(
                    "checkpoint has {} tags, schema needs {}",
                    params.arch.n_tags(),
                    arch.n_tags()
                )));
            }
            Ok(Phase1 {
                params,
                record: None,
                budget_exhausted: false,
                elapsed: budget.elapsed(),
            })
        }
        Phase1Mode::Pretrain => {
            let params = init_params(&arch, seed)?;
            if corpora.u.is_empty() {
                return Ok(Phase1 {
                    params,
                    record: None,
                    budget_exhausted: false,
                    elapsed: budget.elapsed(),
                });
            }
            let mut pt = Pretrainer::new(params, &corpora.u.documents, &config.pretrain, seed)?;
            let mut phases = Vec::new();
            Clock {
                budget: &mut budget,
                phases: &mut phases,
            }
            .stage("phase1/pretrain", config.pretrain.epochs, || pt.run_epoch())?;
            Ok(Phase1 {
                params: pt.finish().0,
                record: phases.pop(),
                budget_exhausted: budget.is_exhausted(),
                elapsed: budget.elapsed(),
            })
        }
    }
}

/// A weakly labeled copy of U from one source.
#[derive(Debug, Clone)]
pub struct WeakLabels {
    pub source_id: String,
    pub threshold: f64,
    pub docs: Vec<WeightedDocument>,
    pub report: WeakReport,
    pub score: Option<WeakScore>,
    pub train_accuracy: Option<f64>,
    pub fit_epochs: usize,
    /// Checksum of the weak corpus in canonical form.
    pub checksum: String,
}

impl WeakLabels {
    pub fn corpus(&self, schema: &crate::doc_model::EntitySchema) -> Corpus {
        weak_corpus(&self.docs, schema, &self.source_id)
    }
}

/// Weak labels of every source, with the time spent producing them.
#[derive(Debug, Clone)]
pub struct WeakStage {
    pub labels: Vec<WeakLabels>,
    pub elapsed: Duration,
    pub budget_exhausted: bool,
}

/// Fits every configured source on H and labels U with it. Sources are
/// fitted once, up front, from the same H. Fitting stops at the budget's
/// deadline; a source cut short still labels U.
pub fn prepare_weak_labels(config: &PipelineConfig, corpora: &Corpora, phase1: &Phase1) -> Result<WeakStage> {
    let mut budget = Budget::resumed(config.t_max, phase1.elapsed);
    let ctx = FitContext {
        seed: config.seed,
        arch: ArchConfig {
            n_tags: corpora.h.schema.n_tags(),
            ..config.arch.clone()
        },
        init: Some(&phase1.params),
        deadline: Some(budget.deadline()),
    };
    let mut labels = Vec::with_capacity(config.weak_sources.len());
    for spec in &config.weak_sources {
        let source = fit_weak_source(spec, &corpora.h, &ctx)?;
        if source.epochs_run < spec.epochs() && spec.kind != WeakSourceKind::Dictionary {
            budget.mark_exhausted();
        }
        labels.push(label_with(config, corpora, &source)?);
    }
    Ok(WeakStage {
        elapsed: budget.elapsed() - phase1.elapsed,
        budget_exhausted: budget.is_exhausted(),
        labels,
    })
}

fn label_with(config: &PipelineConfig, corpora: &Corpora, source: &WeakSource) -> Result<WeakLabels> {
    let c = config.threshold(&source.spec);
    let seed = derive_seed(config.seed, &format!("weak/{}", source.spec.source_id));
    let (docs, report) = infer_weak_labels(source, &corpora.u, c, seed)?;
    let score = match &corpora.sealed_u {
        Some(g) => Some(score_weak_labels(&docs, g)?),
        None => None,
    };
    if let Some(s) = &score {
        log::info!(
            "weak source {}: token precision {:?}, recall {:.3}",
            source.spec.source_id,
            s.token.precision,
            s.token.recall
        );
    }
    let checksum = corpus_checksum(&weak_corpus(&docs, &corpora.u.schema, &source.spec.source_id));
    Ok(WeakLabels {
        source_id: source.spec.source_id.clone(),
        threshold: c,
        docs,
        report,
        score,
        train_accuracy: source.train_accuracy,
        fit_epochs: source.epochs_run,
        checksum,
    })
}

/// Named pipeline variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// The full pipeline.
    Full,
    /// Thresholding kept, confidence weights and the opposite term dropped.
    NoNa,
    /// Phase III skipped.
    NoSynth,
    /// Phase II skipped.
    NoWeak,
    /// Phase I then fine-tuning on H only.
    Tx,
    /// Phase II and III with plain cross-entropy on hard weak labels.
    Ss,
    /// Teacher-student self-training started from the transfer baseline.
    St,
}

impl Scenario {
    pub const ABLATION: [Scenario; 4] = [Scenario::Full, Scenario::NoNa, Scenario::NoSynth, Scenario::NoWeak];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Full => "full",
            Scenario::NoNa => "no_na",
            Scenario::NoSynth => "no_synth",
            Scenario::NoWeak => "no_weak",
            Scenario::Tx => "tx",
            Scenario::Ss => "ss",
            Scenario::St => "st",
        }
    }

    fn uses_weak_labels(self, config: &PipelineConfig) -> bool {
        match self {
            Scenario::Full | Scenario::NoNa | Scenario::NoSynth | Scenario::Ss => config.phases.phase2,
            Scenario::NoWeak | Scenario::Tx | Scenario::St => false,
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = NatError;

    fn from_str(s: &str) -> Result<Self> {
        [
            Scenario::Full,
            Scenario::NoNa,
            Scenario::NoSynth,
            Scenario::NoWeak,
            Scenario::Tx,
            Scenario::Ss,
            Scenario::St,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| NatError::Config(format!("unknown scenario `{s}`")))
    }
}

/// Test-set scores of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub macro_f1: f64,
    pub per_entity: BTreeMap<String, EntityScore>,
    pub counts: BTreeMap<String, Counts>,
}

impl EvalSummary {
    pub fn from_scores(scores: &CorpusScores) -> Self {
        EvalSummary {
            macro_f1: macro_f1(scores),
            per_entity: scores.per_entity(),
            counts: scores.entity_types.iter().cloned().zip(scores.counts.iter().copied()).collect(),
        }
    }

    pub fn table(&self) -> String {
        let mut rows: Vec<Vec<String>> = self
            .per_entity
            .iter()
            .map(|(k, e)| {
                vec![
                    k.clone(),
                    format!("{:.4}", e.precision),
                    format!("{:.4}", e.recall),
                    format!("{:.4}", e.f1),
                ]
            })
            .collect();
        rows.push(vec!["macro".into(), String::new(), String::new(), format!("{:.4}", self.macro_f1)]);
        crate::evaluation::text_table(&["entity", "precision", "recall", "f1"], &rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakSummary {
    pub report: WeakReport,
    pub fit_epochs: usize,
    pub score: Option<WeakScore>,
    pub train_accuracy: Option<f64>,
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: Scenario,
    pub seed: u64,
    pub config: PipelineConfig,
    pub phases: Vec<PhaseRecord>,
    pub weak: Vec<WeakSummary>,
    pub n_synthetic: usize,
    pub evaluation: Option<EvalSummary>,
    pub checkpoint: Option<PathBuf>,
    pub budget_exhausted: bool,
    /// Seconds from the start of Phase I to checkpoint emission.
    pub wall_clock_s: f64,
}

impl RunRecord {
    /// The record with every wall-clock field zeroed, for byte comparisons.
    pub fn without_timing(&self) -> RunRecord {
        let mut r = self.clone();
        r.wall_clock_s = 0.0;
        for p in &mut r.phases {
            p.started_s = 0.0;
            p.finished_s = 0.0;
        }
        r
    }

    pub fn macro_f1(&self) -> Option<f64> {
        self.evaluation.as_ref().map(|e| e.macro_f1)
    }
}

fn human_examples(h: &Corpus, vocab: usize) -> Result<Vec<TrainExample>> {
    h.documents
        .iter()
        .filter(|d| d.is_labeled())
        .map(|d| make_human_weighted(d, &h.schema)?.to_example(vocab))
        .collect()
}

/// Weak documents as training examples; `hard` replaces every retained
/// weight by 1.
fn weak_examples(docs: &[WeightedDocument], hard: bool, vocab: usize) -> Result<Vec<TrainExample>> {
    docs.iter()
        .map(|d| {
            let mut ex = d.to_example(vocab)?;
            if hard {
                ex.weights.iter_mut().for_each(|w| *w = if *w > 0.0 { 1.0 } else { 0.0 });
            }
            Ok(ex)
        })
        .collect()
}

/// The synthetic corpus S that Phase III trains on.
pub fn synthetic_corpus(config: &PipelineConfig, h: &Corpus) -> Result<Corpus> {
    let rules = config.rules()?;
    let mut s = build_synthetic_corpus(h, &rules, derive_seed(config.seed, "augment"))?;
    if config.augmentation.drop_identity {
        s.documents.retain(|d| d.lineage.as_ref().is_none_or(|l| !l.is_identity()));
    }
    Ok(s)
}

fn synthetic_examples(config: &PipelineConfig, h: &Corpus, vocab: usize) -> Result<(Vec<TrainExample>, usize)> {
    let s = synthetic_corpus(config, h)?;
    Ok((human_examples(&s, vocab)?, s.len()))
}

/// Fine-tunes on H ∪ weak labels with hard targets and plain
/// cross-entropy; the stage shared by the semi-supervised and
/// self-training baselines.
#[allow(clippy::too_many_arguments)]
pub fn ss_style_fine_tune(
    params: &mut Params,
    h: &Corpus,
    weak: &[WeightedDocument],
    opt: &OptConfig,
    epochs: usize,
    seed: u64,
    budget: &mut Budget,
    phases: &mut Vec<PhaseRecord>,
    name: &str,
) -> Result<()> {
    let vocab = params.arch.vocab_size();
    let mut examples = human_examples(h, vocab)?;
    examples.extend(weak_examples(weak, true, vocab)?);
    let mut trainer = Trainer::new(LossSpec::cross_entropy(), opt.clone(), seed);
    Clock { budget, phases }.stage(name, epochs, || trainer.epoch(params, &examples))
}

/// One scenario from a given Phase I result. Weak labels are produced
/// here unless `weak` already holds them; the time that shared stages
/// took is charged to this run's budget either way.
pub fn run_scenario(
    config: &PipelineConfig,
    corpora: &Corpora,
    scenario: Scenario,
    phase1: &Phase1,
    weak: Option<&WeakStage>,
    out_dir: Option<&Path>,
) -> Result<(RunRecord, Params)> {
    config.validate()?;
    let mut exhausted = phase1.budget_exhausted;
    let owned;
    let weak = match weak {
        _ if !scenario.uses_weak_labels(config) || exhausted => None,
        Some(w) => Some(w),
        None => {
            owned = prepare_weak_labels(config, corpora, phase1)?;
            Some(&owned)
        }
    };
    let spent = phase1.elapsed + weak.map_or(Duration::ZERO, |w| w.elapsed);
    exhausted |= weak.is_some_and(|w| w.budget_exhausted);
    let mut budget = Budget::resumed(config.t_max, spent);
    let mut phases: Vec<PhaseRecord> = phase1.record.iter().cloned().collect();
    let mut params = phase1.params.clone();
    params.epoch = 0;
    let vocab = params.arch.vocab_size();
    let h = &corpora.h;
    let seed = config.seed;
    let mut weak_summary = Vec::new();
    let mut n_synthetic = 0;
    let phase3 = config.phases.phase3 && !matches!(scenario, Scenario::NoSynth | Scenario::Tx);

    if let Some(weak) = weak.filter(|_| !exhausted) {
        for w in &weak.labels {
            weak_summary.push(WeakSummary {
                report: w.report.clone(),
                fit_epochs: w.fit_epochs,
                score: w.score.clone(),
                train_accuracy: w.train_accuracy,
                checksum: w.checksum.clone(),
            });
            let stage_seed = derive_seed(seed, &format!("phase2/{}", w.source_id));
            let name = format!("phase2/{}", w.source_id);
            match scenario {
                Scenario::Full | Scenario::NoSynth => {
                    let mut examples = human_examples(h, vocab)?;
                    examples.extend(weak_examples(&w.docs, false, vocab)?);
                    let na = &config.noise_aware;
                    let spec = LossSpec::noise_aware(na.lambda, na.gradient_mode);
                    let mut trainer = Trainer::new(spec, config.optimizer.clone(), stage_seed);
                    Clock {
                        budget: &mut budget,
                        phases: &mut phases,
                    }
                    .stage(&name, config.epochs.weak_stage, || trainer.epoch(&mut params, &examples))?;
                }
                _ => ss_style_fine_tune(
                    &mut params,
                    h,
                    &w.docs,
                    &config.optimizer,
                    config.epochs.weak_stage,
                    stage_seed,
                    &mut budget,
                    &mut phases,
                    &name,
                )?,
            }
        }
        exhausted |= budget.is_exhausted();
    }

    if (scenario == Scenario::Tx || scenario == Scenario::St) && !exhausted {
        let examples = human_examples(h, vocab)?;
        let mut trainer = Trainer::new(LossSpec::cross_entropy(), config.optimizer.clone(), derive_seed(seed, "tx"));
        Clock {
            budget: &mut budget,
            phases: &mut phases,
        }
        .stage("tx", config.epochs.tx, || trainer.epoch(&mut params, &examples))?;
    }

    if scenario == Scenario::St {
        for round in 1..=config.baseline.st_rounds {
            if exhausted || budget.is_exhausted() {
                break;
            }
            let teacher = WeakSource::from_params(
                WeakSourceSpec::new(format!("teacher{round}"), WeakSourceKind::ModelAttention),
                params.clone(),
            );
            let labels = label_with(config, corpora, &teacher)?;
            weak_summary.push(WeakSummary {
                report: labels.report.clone(),
                fit_epochs: 0,
                score: labels.score.clone(),
                train_accuracy: None,
                checksum: labels.checksum.clone(),
            });
            let mut student = phase1.params.clone();
            student.epoch = 0;
            ss_style_fine_tune(
                &mut student,
                h,
                &labels.docs,
                &config.optimizer,
                config.epochs.st_student,
                derive_seed(seed, &format!("st/round{round}")),
                &mut budget,
                &mut phases,
                &format!("st/round{round}"),
            )?;
            params = student;
        }
    }

    if phase3 && !exhausted && !budget.is_exhausted() {
        let (mut examples, n) = synthetic_examples(config, h, vocab)?;
        n_synthetic = n;
        examples.extend(human_examples(h, vocab)?);
        let mut trainer =
            Trainer::new(LossSpec::cross_entropy(), config.optimizer.clone(), derive_seed(seed, "phase3"));
        Clock {
            budget: &mut budget,
            phases: &mut phases,
        }
        .stage("phase3", config.epochs.synthetic_stage, || trainer.epoch(&mut params, &examples))?;
    }
    exhausted |= budget.is_exhausted();

    let checkpoint = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| NatError::io(dir, e))?;
            let path = dir.join(format!("{}.ckpt", scenario.name()));
            save_checkpoint(&params, &path)?;
            Some(path)
        }
        None => None,
    };
    let wall_clock_s = budget.elapsed().as_secs_f64();
    let evaluation = match &corpora.test {
        Some(t) if !t.is_empty() => Some(EvalSummary::from_scores(&evaluate_model(&params, t)?)),
        _ => None,
    };
    if let Some(e) = &evaluation {
        log::info!("{}: macro-F1 {:.4}", scenario.name(), e.macro_f1);
    }
    let record = RunRecord {
        scenario,
        seed,
        config: config.clone(),
        phases,
        weak: weak_summary,
        n_synthetic,
        evaluation,
        checkpoint,
        budget_exhausted: exhausted,
        wall_clock_s,
    };
    Ok((record, params))
}

/// The full pipeline: Phase I, then every weak source in configured
/// order, then synthetic documents.
pub fn run_nat(config: &PipelineConfig, corpora: &Corpora, out_dir: Option<&Path>) -> Result<(RunRecord, Params)> {
    config.validate()?;
    let phase1 = run_phase1(config, corpora)?;
    run_scenario(config, corpora, Scenario::Full, &phase1, None, out_dir)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Tx,
    Ss,
    St,
}

impl BaselineKind {
    pub fn scenario(self) -> Scenario {
        match self {
            BaselineKind::Tx => Scenario::Tx,
            BaselineKind::Ss => Scenario::Ss,
            BaselineKind::St => Scenario::St,
        }
    }
}

pub fn run_baseline(
    kind: BaselineKind,
    config: &PipelineConfig,
    corpora: &Corpora,
    out_dir: Option<&Path>,
) -> Result<(RunRecord, Params)> {
    config.validate()?;
    let phase1 = run_phase1(config, corpora)?;
    run_scenario(config, corpora, kind.scenario(), &phase1, None, out_dir)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub scenario: Scenario,
    pub mean_macro_f1: f64,
    pub std_macro_f1: f64,
    /// Drop against the full pipeline in F1 points; positive means the
    /// ablated variant is worse.
    pub delta_points: f64,
    pub per_seed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, s: Scenario) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.scenario == s)
    }

    pub fn table(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.scenario.name().to_string(),
                    format!("{:.4}", r.mean_macro_f1),
                    format!("{:.4}", r.std_macro_f1),
                    format!("{:+.2}", r.delta_points),
                ]
            })
            .collect();
        crate::evaluation::text_table(&["scenario", "macro_f1", "std", "delta_f1_points"], &rows)
    }
}

/// Per-seed results of several scenarios sharing Phase I and weak labels.
#[derive(Debug, Clone)]
pub struct SeedRuns {
    pub seed: u64,
    pub records: BTreeMap<Scenario, RunRecord>,
    pub phase1_checksum: String,
}

/// Runs `scenarios` for one seed with a single Phase I and a single set
/// of weak labels.
pub fn run_scenarios(
    config: &PipelineConfig,
    corpora: &Corpora,
    scenarios: &[Scenario],
    out_dir: Option<&Path>,
) -> Result<SeedRuns> {
    config.validate()?;
    let phase1 = run_phase1(config, corpora)?;
    let phase1_checksum = {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(crate::tagger::checkpoint_bytes(&phase1.params)))
    };
    let weak = if scenarios.iter().any(|s| s.uses_weak_labels(config)) && !phase1.budget_exhausted {
        Some(prepare_weak_labels(config, corpora, &phase1)?)
    } else {
        None
    };
    let mut records = BTreeMap::new();
    for &s in scenarios {
        let (r, _) = run_scenario(config, corpora, s, &phase1, weak.as_ref(), out_dir)?;
        records.insert(s, r);
    }
    Ok(SeedRuns {
        seed: config.seed,
        records,
        phase1_checksum,
    })
}

/// Builds the ablation table from per-seed runs of the four scenarios.
pub fn ablation_report(runs: &[SeedRuns]) -> Result<AblationReport> {
    let f1 = |s: Scenario| -> Result<Vec<f64>> {
        runs.iter()
            .map(|r| {
                r.records
                    .get(&s)
                    .and_then(RunRecord::macro_f1)
                    .ok_or_else(|| NatError::Invalid(format!("scenario {} has no evaluation", s.name())))
            })
            .collect()
    };
    let full = f1(Scenario::Full)?;
    let (full_mean, _) = mean_std(&full);
    let rows = Scenario::ABLATION
        .iter()
        .map(|&s| {
            let v = f1(s)?;
            let (m, sd) = mean_std(&v);
            Ok(AblationRow {
                scenario: s,
                mean_macro_f1: m,
                std_macro_f1: sd,
                delta_points: (full_mean - m) * 100.0,
                per_seed: v,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationReport {
        seeds: runs.iter().map(|r| r.seed).collect(),
        rows,
    })
}

/// The four ablation scenarios on identical corpora, one Phase I per seed.
pub fn run_ablation(config: &PipelineConfig, corpora: &Corpora, seeds: &[u64]) -> Result<AblationReport> {
    let runs = seeds
        .iter()
        .map(|&s| {
            let c = PipelineConfig {
                seed: s,
                ..config.clone()
            };
            run_scenarios(&c, corpora, &Scenario::ABLATION, None)
        })
        .collect::<Result<Vec<_>>>()?;
    ablation_report(&runs)
}

/// NAT and transfer-baseline F1 against the size of H.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    pub seeds: Vec<u64>,
    pub nat: Vec<CurvePoint>,
    pub tx: Vec<CurvePoint>,
    pub nat_spearman: Option<f64>,
    pub tx_spearman: Option<f64>,
    /// Baseline labels needed to match NAT, one entry per NAT size.
    pub saved_labels: Vec<SavedLabels>,
}

impl CurveReport {
    pub fn csv(&self) -> String {
        let mut s = String::from("h_size,nat_mean,nat_std,tx_mean,tx_std\n");
        for (n, t) in self.nat.iter().zip(&self.tx) {
            s.push_str(&format!("{},{:.6},{:.6},{:.6},{:.6}\n", n.h_size, n.mean, n.std, t.mean, t.std));
        }
        s
    }
}

/// Runs NAT and the transfer baseline on H subsets of each size, one
/// trial per seed. Full-size runs found in `prior` are reused.
pub fn run_curve(
    config: &PipelineConfig,
    corpora: &Corpora,
    sizes: &[usize],
    seeds: &[u64],
    prior: &[SeedRuns],
) -> Result<CurveReport> {
    let mut f1: BTreeMap<(usize, u64), (f64, f64)> = BTreeMap::new();
    let mut sorted = sizes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for &k in &sorted {
        for &seed in seeds {
            let reuse = prior.iter().find(|r| r.seed == seed && k == corpora.h.len()).and_then(|r| {
                Some((
                    r.records.get(&Scenario::Full)?.macro_f1()?,
                    r.records.get(&Scenario::Tx)?.macro_f1()?,
                ))
            });
            let pair = match reuse {
                Some(p) => p,
                None => {
                    let sub = corpora.with_h_subset(k, seed)?;
                    let c = PipelineConfig {
                        seed,
                        ..config.clone()
                    };
                    let runs = run_scenarios(&c, &sub, &[Scenario::Full, Scenario::Tx], None)?;
                    let get = |s: Scenario| {
                        runs.records[&s]
                            .macro_f1()
                            .ok_or_else(|| NatError::Invalid("curve runs need a test corpus".into()))
                    };
                    (get(Scenario::Full)?, get(Scenario::Tx)?)
                }
            };
            log::info!("curve |H|={k} seed {seed}: nat {:.4} tx {:.4}", pair.0, pair.1);
            f1.insert((k, seed), pair);
        }
    }
    let points = |pick: fn(&(f64, f64)) -> f64| -> Result<Vec<CurvePoint>> {
        label_efficiency_curve(&sorted, seeds.len(), 0, |k, trial| Ok(pick(&f1[&(k, seeds[trial as usize])])))
    };
    let nat = points(|p| p.0)?;
    let tx = points(|p| p.1)?;
    let saved = nat.iter().filter_map(|p| saved_labels(p.h_size, p.mean, &tx)).collect();
    Ok(CurveReport {
        seeds: seeds.to_vec(),
        nat_spearman: curve_spearman(&nat),
        tx_spearman: curve_spearman(&tx),
        nat,
        tx,
        saved_labels: saved,
    })
}
