use nat::corpus_io::{corpus_checksum, write_corpus};
use nat::evaluation::{evaluate_model, macro_f1};
use nat::pipeline::*;
use nat::rng::derive_seed;
use nat::tagger::{checkpoint_bytes, load_checkpoint, ArchConfig};
use nat::weak_supervision::{infer_weak_labels, WeakSource, WeakSourceKind, WeakSourceSpec};
use nat::Params;

fn tiny() -> PipelineConfig {
    let mut c = PipelineConfig::reference();
    c.benchmark = Some(BenchmarkConfig {
        n_h: 6,
        n_u: 8,
        n_test: 6,
        ..Default::default()
    });
    c.arch = ArchConfig {
        word_dim: 16,
        bbox_dim: 8,
        model_dim: 32,
        ff_dim: 64,
        n_blocks: 1,
        n_heads: 2,
        vocab_size: 1024,
        ..Default::default()
    };
    c.pretrain.epochs = 1;
    c.epochs = EpochConfig {
        weak_stage: 1,
        synthetic_stage: 1,
        tx: 2,
        st_student: 1,
    };
    c.augmentation.n_passes = Some(1);
    for s in &mut c.weak_sources {
        s.epochs = Some(2);
    }
    c.baseline.st_rounds = 2;
    c
}

#[test]
fn config_round_trips_through_toml() {
    let c = tiny();
    let back = PipelineConfig::from_toml(&c.to_toml()).unwrap();
    assert_eq!(back, c);
}

#[test]
fn config_rejects_bad_values() {
    let mut c = tiny();
    c.t_max = 0.0;
    assert!(c.validate().is_err());

    let mut c = tiny();
    c.weak_sources[1].source_id = c.weak_sources[0].source_id.clone();
    assert!(c.validate().is_err());

    let mut c = tiny();
    c.phases.phase1 = Phase1Mode::Checkpoint;
    assert!(c.validate().is_err());

    assert!(PipelineConfig::from_toml("seed = 1\nbogus = 2\n").is_err());
}

#[test]
fn nat_run_orders_phases_and_emits_checkpoint() {
    let c = tiny();
    let corpora = load_corpora(&c).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (rec, params) = run_nat(&c, &corpora, Some(dir.path())).unwrap();
    let names: Vec<&str> = rec.phases.iter().map(|p| p.name.as_str()).collect();
    assert_eq!(names, ["phase1/pretrain", "phase2/attention", "phase2/window", "phase3"]);
    assert!(!rec.budget_exhausted);
    assert_eq!(rec.n_synthetic, 4 * 6);
    assert_eq!(rec.weak.len(), 2);
    let mut last = 0.0;
    for p in &rec.phases {
        assert!(p.started_s >= last && p.finished_s >= p.started_s);
        last = p.finished_s;
    }
    let f1 = rec.macro_f1().unwrap();
    assert!((0.0..=1.0).contains(&f1));
    let loaded: Params = load_checkpoint(rec.checkpoint.as_ref().unwrap()).unwrap();
    assert_eq!(checkpoint_bytes(&loaded), checkpoint_bytes(&params));
}

#[test]
fn nat_run_is_deterministic() {
    let c = tiny();
    let corpora = load_corpora(&c).unwrap();
    let (a, pa) = run_nat(&c, &corpora, None).unwrap();
    let (b, pb) = run_nat(&c, &corpora, None).unwrap();
    assert_eq!(checkpoint_bytes(&pa), checkpoint_bytes(&pb));
    assert_eq!(
        serde_json::to_string(&a.without_timing()).unwrap(),
        serde_json::to_string(&b.without_timing()).unwrap()
    );
}

#[test]
fn tiny_budget_degrades_but_still_writes_checkpoint() {
    let mut c = tiny();
    c.t_max = 1e-6;
    let corpora = load_corpora(&c).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (rec, _) = run_nat(&c, &corpora, Some(dir.path())).unwrap();
    assert!(rec.budget_exhausted);
    assert!(rec.phases.iter().all(|p| !p.name.starts_with("phase2") && p.name != "phase3"));
    let p: Params = load_checkpoint(&rec.checkpoint.unwrap()).unwrap();
    assert!(p.is_finite());
}

#[test]
fn ss_and_nat_infer_identical_weak_corpora() {
    let c = tiny();
    let corpora = load_corpora(&c).unwrap();
    let runs = run_scenarios(&c, &corpora, &[Scenario::Full, Scenario::Ss], None).unwrap();
    let sum = |s: Scenario| runs.records[&s].weak.iter().map(|w| w.checksum.clone()).collect::<Vec<_>>();
    assert_eq!(sum(Scenario::Full), sum(Scenario::Ss));

    let (nat, _) = run_nat(&c, &corpora, None).unwrap();
    let (ss, _) = run_baseline(BaselineKind::Ss, &c, &corpora, None).unwrap();
    let sums = |r: &RunRecord| r.weak.iter().map(|w| w.checksum.clone()).collect::<Vec<_>>();
    assert_eq!(sums(&nat), sums(&ss));
}

#[test]
fn phase1_is_identical_across_scenarios() {
    let c = tiny();
    let corpora = load_corpora(&c).unwrap();
    let a = run_phase1(&c, &corpora).unwrap();
    let b = run_phase1(&c, &corpora).unwrap();
    assert_eq!(checkpoint_bytes(&a.params), checkpoint_bytes(&b.params));
}

#[test]
fn tx_with_zero_epochs_evaluates_phase1_model() {
    let mut c = tiny();
    c.epochs.tx = 0;
    let corpora = load_corpora(&c).unwrap();
    let phase1 = run_phase1(&c, &corpora).unwrap();
    let (rec, _) = run_scenario(&c, &corpora, Scenario::Tx, &phase1, None, None).unwrap();
    let want = macro_f1(&evaluate_model(&phase1.params, corpora.test.as_ref().unwrap()).unwrap());
    assert_eq!(rec.macro_f1(), Some(want));
}

#[test]
fn single_round_self_training_equals_ss_style_fine_tune() {
    let mut c = tiny();
    c.baseline.st_rounds = 1;
    c.phases.phase3 = false;
    let corpora = load_corpora(&c).unwrap();
    let phase1 = run_phase1(&c, &corpora).unwrap();
    let (_, st) = run_scenario(&c, &corpora, Scenario::St, &phase1, None, None).unwrap();

    let (_, teacher) = run_scenario(&c, &corpora, Scenario::Tx, &phase1, None, None).unwrap();
    let source = WeakSource::from_params(WeakSourceSpec::new("teacher1", WeakSourceKind::ModelAttention), teacher);
    let seed = derive_seed(c.seed, "weak/teacher1");
    let (weak, _) = infer_weak_labels(&source, &corpora.u, c.noise_aware.threshold, seed).unwrap();
    let mut student = phase1.params.clone();
    student.epoch = 0;
    let mut budget = Budget::new(c.t_max);
    let mut phases = Vec::new();
    ss_style_fine_tune(
        &mut student,
        &corpora.h,
        &weak,
        &c.optimizer,
        c.epochs.st_student,
        derive_seed(c.seed, "st/round1"),
        &mut budget,
        &mut phases,
        "st",
    )
    .unwrap();
    assert_eq!(checkpoint_bytes(&st), checkpoint_bytes(&student));
}

#[test]
fn ablation_reports_exactly_four_scenarios() {
    let c = tiny();
    let corpora = load_corpora(&c).unwrap();
    let report = run_ablation(&c, &corpora, &[1]).unwrap();
    let names: Vec<&str> = report.rows.iter().map(|r| r.scenario.name()).collect();
    assert_eq!(names, ["full", "no_na", "no_synth", "no_weak"]);
    assert_eq!(report.row(Scenario::Full).unwrap().delta_points, 0.0);
    assert!(report.table().contains("no_weak"));
}

#[test]
fn h_subsets_are_deterministic_and_id_sorted() {
    let c = tiny();
    let corpora = load_corpora(&c).unwrap();
    let a = corpora.with_h_subset(3, 9).unwrap();
    let b = corpora.with_h_subset(3, 9).unwrap();
    assert_eq!(a.h, b.h);
    assert_eq!(a.h.len(), 3);
    let pos: Vec<usize> = a
        .h
        .documents
        .iter()
        .map(|d| corpora.h.documents.iter().position(|x| x.id == d.id).unwrap())
        .collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]));
    assert!(corpora.with_h_subset(7, 9).is_err());
}

#[test]
fn file_corpora_match_generated_ones() {
    let c = tiny();
    let corpora = load_corpora(&c).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = |n: &str| dir.path().join(n);
    write_corpus(&corpora.h, path("h.jsonl")).unwrap();
    write_corpus(&corpora.u, path("u.jsonl")).unwrap();
    write_corpus(corpora.test.as_ref().unwrap(), path("test.jsonl")).unwrap();
    let toml = "seed = 1\n[data]\nh = \"h.jsonl\"\nu = \"u.jsonl\"\ntest = \"test.jsonl\"\n".to_string();
    std::fs::write(path("run.toml"), toml).unwrap();
    let mut fc = PipelineConfig::from_toml(&std::fs::read_to_string(path("run.toml")).unwrap()).unwrap();
    fc.resolve_paths(dir.path());
    let loaded = load_corpora(&fc).unwrap();
    assert_eq!(corpus_checksum(&loaded.h), corpus_checksum(&corpora.h));
    assert_eq!(corpus_checksum(&loaded.u), corpus_checksum(&corpora.u));
    assert!(loaded.sealed_u.is_none());
}
