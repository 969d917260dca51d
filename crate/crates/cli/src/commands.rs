use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nat::corpus_io::{load_funsd, read_corpus, split_corpus, write_corpus, Corpus, PartitionSpec};
use nat::evaluation::evaluate_model;
use nat::pipeline::{
    ablation_report, benchmark_corpora, load_corpora, prepare_weak_labels, run_curve, run_phase1, run_scenario,
    run_scenarios, synthetic_corpus, BaselineKind, EvalSummary, PipelineConfig, PhaseRecord, RunRecord, Scenario,
    SeedRuns, WeakSummary,
};
use nat::tagger::{load_checkpoint, save_checkpoint};
use nat::Params;
use serde::Serialize;

use crate::config::{load_config, ConfigArgs};
use crate::{BaselineArg, Command, GlobalArgs, Outcome};

/// The output directory.
struct Out {
    dir: PathBuf,
}

impl Out {
    fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Out { dir: dir.to_path_buf() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn text(&self, name: &str, body: &str) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, body).with_context(|| format!("writing {}", p.display()))
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.text(name, &s)
    }

    fn corpus(&self, name: &str, corpus: &Corpus) -> Result<()> {
        write_corpus(corpus, self.path(name))?;
        log::info!("wrote {} ({} documents)", self.path(name).display(), corpus.len());
        Ok(())
    }

    fn snapshot(&self, config: &PipelineConfig) -> Result<()> {
        self.text("config.toml", &config.to_toml())
    }

    /// Writes the timing-free record plus a separate timing file, with
    /// checkpoint paths made relative to the output directory.
    fn record(&self, stem: &str, record: &RunRecord) -> Result<()> {
        let mut r = record.clone();
        if let Some(p) = &r.checkpoint {
            r.checkpoint = Some(p.strip_prefix(&self.dir).unwrap_or(p).to_path_buf());
        }
        self.json(&format!("{stem}.json"), &r.without_timing())?;
        self.json(&format!("{stem}.timings.json"), &Timings::of(record))
    }
}

#[derive(Serialize)]
struct Timings<'a> {
    wall_clock_s: f64,
    budget_exhausted: bool,
    phases: &'a [PhaseRecord],
}

impl<'a> Timings<'a> {
    fn of(r: &'a RunRecord) -> Self {
        Timings {
            wall_clock_s: r.wall_clock_s,
            budget_exhausted: r.budget_exhausted,
            phases: &r.phases,
        }
    }
}

fn outcome(degraded: bool) -> Outcome {
    if degraded {
        log::warn!("time budget exhausted; outputs are partial");
        Outcome::Degraded
    } else {
        Outcome::Complete
    }
}

pub fn dispatch(g: &GlobalArgs, command: Command) -> Result<Outcome> {
    let load = || {
        load_config(&ConfigArgs {
            path: g.config.as_deref(),
            sets: &g.sets,
            seed: g.seed,
            max_seconds: g.max_seconds,
        })
    };
    match command {
        Command::Validate { corpora } => validate(&corpora, &Out::create(&g.out)?),
        Command::Ingest { dir, h, u } => ingest(&dir, h, u, g.seed.unwrap_or(1), &Out::create(&g.out)?),
        Command::Evaluate { checkpoint, test } => {
            let config = load()?;
            evaluate(&config, &checkpoint, test.as_deref(), &Out::create(&g.out)?)
        }
        other => {
            let config = load()?;
            let out = Out::create(&g.out)?;
            out.snapshot(&config)?;
            log::info!("seed {}, t_max {:.0}s, output {}", config.seed, config.t_max, out.dir.display());
            match other {
                Command::GenSynth => gen_synth(&config, &out),
                Command::Pretrain => pretrain(&config, &out),
                Command::WeakLabel => weak_label(&config, &out),
                Command::Augment => augment(&config, &out),
                Command::Train => scenario(&config, Scenario::Full, &out),
                Command::Baseline { kind } => {
                    let kind = match kind {
                        BaselineArg::Tx => BaselineKind::Tx,
                        BaselineArg::Ss => BaselineKind::Ss,
                        BaselineArg::St => BaselineKind::St,
                    };
                    scenario(&config, kind.scenario(), &out)
                }
                Command::Ablate { seeds } => ablate(&config, &seeds, g.jobs, &out),
                Command::Curve { sizes, seeds } => curve(&config, &sizes, &seeds, &out),
                Command::Validate { .. } | Command::Ingest { .. } | Command::Evaluate { .. } => unreachable!(),
            }
        }
    }
}

fn validate(paths: &[PathBuf], out: &Out) -> Result<Outcome> {
    #[derive(Serialize)]
    struct Entry {
        corpus: PathBuf,
        documents: usize,
        reports: Vec<nat::doc_model::ValidationReport>,
    }
    let mut entries = Vec::new();
    for p in paths {
        let c = read_corpus(p).with_context(|| format!("reading {}", p.display()))?;
        let reports = c.validate();
        for r in &reports {
            for v in &r.violations {
                eprintln!("{}: document {}: {v}", p.display(), r.document);
            }
        }
        entries.push(Entry {
            corpus: p.clone(),
            documents: c.len(),
            reports,
        });
    }
    out.json("validation.json", &entries)?;
    let bad: usize = entries.iter().map(|e| e.reports.len()).sum();
    if bad == 0 {
        println!("all documents valid");
        Ok(Outcome::Complete)
    } else {
        println!("{bad} invalid documents");
        Ok(Outcome::Failed)
    }
}

fn ingest(dir: &Path, h: Option<usize>, u: Option<usize>, seed: u64, out: &Out) -> Result<Outcome> {
    let corpus = load_funsd(dir)?;
    out.corpus("corpus.jsonl", &corpus)?;
    if h.is_none() && u.is_none() {
        return Ok(Outcome::Complete);
    }
    let (h, u) = (h.unwrap_or(0), u.unwrap_or(0));
    if h + u > corpus.len() {
        bail!("--h {h} and --u {u} exceed the {} documents available", corpus.len());
    }
    let parts = split_corpus(
        &corpus,
        &[
            PartitionSpec::labeled("h", h),
            PartitionSpec::unlabeled("u", u),
            PartitionSpec::labeled("rest", corpus.len() - h - u),
        ],
        seed,
    )?;
    for p in parts {
        out.corpus(&format!("{}.jsonl", p.name), &p.corpus)?;
        if let Some(s) = &p.sealed {
            out.corpus(&format!("{}_gold.jsonl", p.name), s)?;
        }
    }
    Ok(Outcome::Complete)
}

fn gen_synth(config: &PipelineConfig, out: &Out) -> Result<Outcome> {
    let b = config.benchmark.clone().unwrap_or_default();
    let c = benchmark_corpora(&b)?;
    out.corpus("h.jsonl", &c.h)?;
    out.corpus("u.jsonl", &c.u)?;
    if let Some(s) = &c.sealed_u {
        out.corpus("u_gold.jsonl", s)?;
    }
    if let Some(t) = &c.test {
        out.corpus("test.jsonl", t)?;
    }
    Ok(Outcome::Complete)
}

fn pretrain(config: &PipelineConfig, out: &Out) -> Result<Outcome> {
    let corpora = load_corpora(config)?;
    let p1 = run_phase1(config, &corpora)?;
    save_checkpoint(&p1.params, &out.path("phase1.ckpt"))?;
    #[derive(Serialize)]
    struct Report {
        epochs_run: usize,
        losses: Vec<f64>,
        budget_exhausted: bool,
    }
    let rec = p1.record.as_ref();
    out.json(
        "pretrain.json",
        &Report {
            epochs_run: rec.map_or(0, |r| r.epochs_run),
            losses: rec.map_or_else(Vec::new, |r| r.losses.clone()),
            budget_exhausted: p1.budget_exhausted,
        },
    )?;
    Ok(outcome(p1.budget_exhausted))
}

fn weak_label(config: &PipelineConfig, out: &Out) -> Result<Outcome> {
    let corpora = load_corpora(config)?;
    let p1 = run_phase1(config, &corpora)?;
    let stage = prepare_weak_labels(config, &corpora, &p1)?;
    let mut summaries = Vec::new();
    for w in &stage.labels {
        out.corpus(&format!("weak_{}.jsonl", w.source_id), &w.corpus(&corpora.u.schema))?;
        summaries.push(WeakSummary {
            report: w.report.clone(),
            fit_epochs: w.fit_epochs,
            score: w.score.clone(),
            train_accuracy: w.train_accuracy,
            checksum: w.checksum.clone(),
        });
    }
    out.json("weak_report.json", &summaries)?;
    Ok(outcome(p1.budget_exhausted || stage.budget_exhausted))
}

fn augment(config: &PipelineConfig, out: &Out) -> Result<Outcome> {
    let corpora = load_corpora(config)?;
    let s = synthetic_corpus(config, &corpora.h)?;
    out.corpus("synthetic.jsonl", &s)?;
    Ok(Outcome::Complete)
}

fn scenario(config: &PipelineConfig, scenario: Scenario, out: &Out) -> Result<Outcome> {
    let corpora = load_corpora(config)?;
    let p1 = run_phase1(config, &corpora)?;
    let (rec, _) = run_scenario(config, &corpora, scenario, &p1, None, Some(&out.dir))?;
    out.record("record", &rec)?;
    if let Some(e) = &rec.evaluation {
        out.text("evaluation.txt", &e.table())?;
        println!("{}: macro-F1 {:.4}", scenario.name(), e.macro_f1);
    }
    Ok(outcome(rec.budget_exhausted))
}

fn ablate(config: &PipelineConfig, seeds: &[u64], jobs: usize, out: &Out) -> Result<Outcome> {
    if seeds.is_empty() {
        bail!("--seeds must name at least one seed");
    }
    let corpora = load_corpora(config)?;
    let one = |seed: u64| -> Result<SeedRuns> {
        let c = PipelineConfig {
            seed,
            ..config.clone()
        };
        Ok(run_scenarios(&c, &corpora, &Scenario::ABLATION, None)?)
    };
    let runs: Vec<SeedRuns> = if jobs <= 1 {
        seeds.iter().map(|&s| one(s)).collect::<Result<_>>()?
    } else {
        let mut slots: Vec<Option<Result<SeedRuns>>> = (0..seeds.len()).map(|_| None).collect();
        for (chunk_seeds, chunk_slots) in seeds.chunks(jobs).zip(slots.chunks_mut(jobs)) {
            std::thread::scope(|s| {
                for (&seed, slot) in chunk_seeds.iter().zip(chunk_slots.iter_mut()) {
                    let one = &one;
                    s.spawn(move || *slot = Some(one(seed)));
                }
            });
        }
        slots.into_iter().map(|r| r.expect("every worker fills its slot")).collect::<Result<_>>()?
    };
    let report = ablation_report(&runs)?;
    out.json("ablation.json", &report)?;
    out.text("ablation.txt", &report.table())?;
    let records: Vec<RunRecord> = runs
        .iter()
        .flat_map(|r| r.records.values().map(RunRecord::without_timing))
        .collect();
    out.json("records.json", &records)?;
    print!("{}", report.table());
    Ok(outcome(runs.iter().flat_map(|r| r.records.values()).any(|r| r.budget_exhausted)))
}

fn curve(config: &PipelineConfig, sizes: &[usize], seeds: &[u64], out: &Out) -> Result<Outcome> {
    if sizes.is_empty() || seeds.is_empty() {
        bail!("--sizes and --seeds must be non-empty");
    }
    let corpora = load_corpora(config)?;
    let report = run_curve(config, &corpora, sizes, seeds, &[])?;
    out.json("curve.json", &report)?;
    out.text("curve.csv", &report.csv())?;
    print!("{}", report.csv());
    Ok(Outcome::Complete)
}

fn evaluate(config: &PipelineConfig, checkpoint: &Path, test: Option<&Path>, out: &Out) -> Result<Outcome> {
    let params: Params = load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let test = match test {
        Some(p) => read_corpus(p)?,
        None => load_corpora(config)?
            .test
            .context("no test corpus: pass --test or set data.test")?,
    };
    if params.arch.n_tags() != test.schema.n_tags() {
        bail!(
            "checkpoint predicts {} tags but the test schema has {}",
            params.arch.n_tags(),
            test.schema.n_tags()
        );
    }
    let summary = EvalSummary::from_scores(&evaluate_model(&params, &test)?);
    out.json("evaluation.json", &summary)?;
    out.text("evaluation.txt", &summary.table())?;
    print!("{}", summary.table());
    Ok(Outcome::Complete)
}
