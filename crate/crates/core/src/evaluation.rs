//! Span scoring, repeated trials and label-efficiency curves.
//!
//! A predicted span is a true positive when its type and exact token range
//! match a gold span not matched before. Counts are accumulated over the
//! whole corpus per entity type; the macro average runs over the types
//! that occur in gold or prediction at least once.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::corpus_io::Corpus;
use crate::doc_model::{decode_bioes, EntitySchema, EntitySpan};
use crate::error::{NatError, Result};
use crate::scalar::Scalar;
use crate::tagger::{predict, TaggerParams};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    /// Whether the type occurs in gold or prediction.
    pub fn is_present(&self) -> bool {
        self.tp + self.fp + self.fn_ > 0
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntityScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl From<Counts> for EntityScore {
    fn from(c: Counts) -> Self {
        EntityScore {
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
        }
    }
}

/// Per-type match counts, in schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusScores {
    pub entity_types: Vec<String>,
    pub counts: Vec<Counts>,
}

impl CorpusScores {
    pub fn new(schema: &EntitySchema) -> Self {
        CorpusScores {
            entity_types: schema.entity_types.clone(),
            counts: vec![Counts::default(); schema.len()],
        }
    }

    /// Adds the matches of one document.
    pub fn add(&mut self, pred: &[EntitySpan], gold: &[EntitySpan]) {
        let index = |t: &str| self.entity_types.iter().position(|e| e == t);
        let mut matched = vec![false; gold.len()];
        for p in pred {
            let Some(e) = index(&p.entity_type) else { continue };
            match gold.iter().enumerate().position(|(k, g)| !matched[k] && g == p) {
                Some(k) => {
                    matched[k] = true;
                    self.counts[e].tp += 1;
                }
                None => self.counts[e].fp += 1,
            }
        }
        for (g, m) in gold.iter().zip(matched) {
            if let (false, Some(e)) = (m, index(&g.entity_type)) {
                self.counts[e].fn_ += 1;
            }
        }
    }

    pub fn per_entity(&self) -> BTreeMap<String, EntityScore> {
        self.entity_types
            .iter()
            .zip(&self.counts)
            .map(|(t, c)| (t.clone(), EntityScore::from(*c)))
            .collect()
    }

    pub fn merge(&mut self, other: &CorpusScores) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            a.tp += b.tp;
            a.fp += b.fp;
            a.fn_ += b.fn_;
        }
    }
}

/// Scores for a single document.
pub fn span_scores(pred: &[EntitySpan], gold: &[EntitySpan], schema: &EntitySchema) -> CorpusScores {
    let mut s = CorpusScores::new(schema);
    s.add(pred, gold);
    s
}

/// Unweighted mean F1 over the types present in gold or prediction; zero
/// when no type is present.
pub fn macro_f1(scores: &CorpusScores) -> f64 {
    let present: Vec<f64> = scores.counts.iter().filter(|c| c.is_present()).map(Counts::f1).collect();
    if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

/// Predicts every document of a labeled corpus and scores the spans.
pub fn evaluate_model<T: Scalar>(params: &TaggerParams<T>, test: &Corpus) -> Result<CorpusScores> {
    let mut scores = CorpusScores::new(&test.schema);
    for d in &test.documents {
        let pred = predict(params, d, &test.schema)?;
        scores.add(&decode_bioes(&pred.tags, &test.schema).spans, &d.gold_spans);
    }
    Ok(scores)
}

/// Mean and sample standard deviation; the deviation of fewer than two
/// values is zero.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    if values.iter().all(|&v| v == values[0]) {
        return (values[0], 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Result of one seeded trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub seed: u64,
    pub macro_f1: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_entity: BTreeMap<String, EntityScore>,
}

impl TrialOutcome {
    pub fn from_scores(seed: u64, scores: &CorpusScores) -> Self {
        TrialOutcome {
            seed,
            macro_f1: macro_f1(scores),
            per_entity: scores.per_entity(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub n_trials: usize,
    pub seeds: Vec<u64>,
    pub trials: Vec<TrialOutcome>,
    pub mean_macro_f1: f64,
    pub std_macro_f1: f64,
    /// Per-type scores averaged over trials.
    pub per_entity: BTreeMap<String, EntityScore>,
}

impl TrialReport {
    pub fn from_trials(trials: Vec<TrialOutcome>) -> Self {
        let f1: Vec<f64> = trials.iter().map(|t| t.macro_f1).collect();
        let (mean, std) = mean_std(&f1);
        let mut per_entity: BTreeMap<String, EntityScore> = BTreeMap::new();
        for t in &trials {
            for (k, s) in &t.per_entity {
                let e = per_entity.entry(k.clone()).or_insert(EntityScore {
                    precision: 0.0,
                    recall: 0.0,
                    f1: 0.0,
                });
                e.precision += s.precision / trials.len() as f64;
                e.recall += s.recall / trials.len() as f64;
                e.f1 += s.f1 / trials.len() as f64;
            }
        }
        TrialReport {
            n_trials: trials.len(),
            seeds: trials.iter().map(|t| t.seed).collect(),
            trials,
            mean_macro_f1: mean,
            std_macro_f1: std,
            per_entity,
        }
    }
}

pub const DEFAULT_TRIALS: usize = 9;

/// A trial failed; the trials before it are kept.
#[derive(Debug)]
pub struct TrialsAborted {
    pub partial: TrialReport,
    pub seed: u64,
    pub error: NatError,
}

impl fmt::Display for TrialsAborted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "trial with seed {} failed after {} completed: {}",
            self.seed, self.partial.n_trials, self.error
        )
    }
}

impl std::error::Error for TrialsAborted {}

/// Runs `run` with seeds `base_seed .. base_seed + n_trials`
/// ([`DEFAULT_TRIALS`] when `None`).
pub fn run_trials(
    mut run: impl FnMut(u64) -> Result<TrialOutcome>,
    n_trials: Option<usize>,
    base_seed: u64,
) -> std::result::Result<TrialReport, TrialsAborted> {
    let n = n_trials.unwrap_or(DEFAULT_TRIALS);
    let mut done = Vec::with_capacity(n);
    for seed in base_seed..base_seed + n as u64 {
        match run(seed) {
            Ok(mut t) => {
                t.seed = seed;
                done.push(t);
            }
            Err(error) => {
                return Err(TrialsAborted {
                    partial: TrialReport::from_trials(done),
                    seed,
                    error,
                })
            }
        }
    }
    Ok(TrialReport::from_trials(done))
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; `None` if either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let (mx, _) = mean_std(&rx);
    let (my, _) = mean_std(&ry);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub h_size: usize,
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

/// Runs `run(h_size, seed)` for every size and trial; rows come out sorted
/// by size.
pub fn label_efficiency_curve(
    h_sizes: &[usize],
    n_trials: usize,
    base_seed: u64,
    mut run: impl FnMut(usize, u64) -> Result<f64>,
) -> Result<Vec<CurvePoint>> {
    let mut sizes = h_sizes.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    let mut out = Vec::with_capacity(sizes.len());
    for h in sizes {
        let values = (base_seed..base_seed + n_trials as u64)
            .map(|s| run(h, s))
            .collect::<Result<Vec<f64>>>()?;
        let (mean, std) = mean_std(&values);
        out.push(CurvePoint {
            h_size: h,
            mean,
            std,
            values,
        });
    }
    Ok(out)
}

/// Spearman correlation of `(|H|, F1)` over every trial of a curve.
pub fn curve_spearman(curve: &[CurvePoint]) -> Option<f64> {
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for p in curve {
        for &v in &p.values {
            x.push(p.h_size as f64);
            y.push(v);
        }
    }
    spearman(&x, &y)
}

/// How many labels the baseline needs to match a run trained on `h_nat`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SavedLabels {
    pub h_nat: usize,
    pub f1_nat: f64,
    /// Interpolated baseline size reaching `f1_nat`.
    pub h_tx_equiv: f64,
    /// `1 - h_nat / h_tx_equiv`.
    pub saved_fraction: f64,
    /// The baseline never reached `f1_nat` on the measured sizes; the
    /// figures are lower bounds taken at the largest size.
    pub lower_bound: bool,
}

/// Smallest baseline size whose mean F1 reaches `f1_nat`, interpolated
/// linearly between neighbouring curve points.
pub fn saved_labels(h_nat: usize, f1_nat: f64, tx_curve: &[CurvePoint]) -> Option<SavedLabels> {
    let first = tx_curve.first()?;
    let finish = |h: f64, lower_bound| SavedLabels {
        h_nat,
        f1_nat,
        h_tx_equiv: h,
        saved_fraction: if h > 0.0 { 1.0 - h_nat as f64 / h } else { 0.0 },
        lower_bound,
    };
    if first.mean >= f1_nat {
        return Some(finish(first.h_size as f64, false));
    }
    for w in tx_curve.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.mean < f1_nat && b.mean >= f1_nat {
            let t = (f1_nat - a.mean) / (b.mean - a.mean);
            let h = a.h_size as f64 + t * (b.h_size as f64 - a.h_size as f64);
            return Some(finish(h, false));
        }
    }
    Some(finish(tx_curve.last()?.h_size as f64, true))
}

/// `h_size,mean,std` rows.
pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from("h_size,mean,std\n");
    for p in curve {
        writeln!(s, "{},{:.6},{:.6}", p.h_size, p.mean, p.std).unwrap();
    }
    s
}

/// Left-aligned plain-text table.
pub fn text_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ");
        s.truncate(s.trim_end().len());
        s + "\n"
    };
    let mut out = line(header.to_vec());
    out += &line(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect());
    for r in rows {
        out += &line(r.iter().map(String::as_str).collect());
    }
    out
}

pub fn report_table(report: &TrialReport) -> String {
    let mut rows: Vec<Vec<String>> = report
        .per_entity
        .iter()
        .map(|(k, s)| vec![k.clone(), format!("{:.4}", s.precision), format!("{:.4}", s.recall), format!("{:.4}", s.f1)])
        .collect();
    rows.push(vec![
        "macro".into(),
        String::new(),
        String::new(),
        format!("{:.4} ± {:.4}", report.mean_macro_f1, report.std_macro_f1),
    ]);
    text_table(&["entity", "precision", "recall", "f1"], &rows)
}
