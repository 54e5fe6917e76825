use std::path::Path;

use alcd::bench::{generate_corpus, ContextCue, Split, TaskSpec};
use alcd::harness::{self, ExperimentConfig, RunManifest, TrainSpec};
use alcd::Error;

fn task() -> TaskSpec {
    TaskSpec {
        name: "tiny".into(),
        instruction: "find {labels}".into(),
        mentions: vec!["kav".into(), "mol".into(), "tesu".into(), "dun".into()],
        labels: vec!["dis".into(), "sym".into()],
        assignments: None,
        pairs_min: 1,
        pairs_max: 2,
        distractor_alphabet: "xy ".into(),
        distractor_min: 0,
        distractor_max: 2,
        label_noise: 0.0,
        cue: Some(ContextCue {
            text: "no ".into(),
            label: "sym".into(),
            rate: 0.3,
        }),
        seed: 5,
    }
}

fn tiny_config(dir: &Path) -> ExperimentConfig {
    let task_path = dir.join("task.json");
    std::fs::write(&task_path, serde_json::to_string(&task()).unwrap()).unwrap();
    let mut cfg = ExperimentConfig::new(task_path);
    cfg.splits.train = 60;
    cfg.splits.valid = 12;
    cfg.splits.test = 12;
    cfg.model.context_window = 24;
    cfg.model.embedding_dim = 4;
    cfg.model.hidden_dim = 8;
    let spec = TrainSpec {
        steps: 20,
        batch_size: 4,
        ..TrainSpec::default()
    };
    cfg.train.normal = spec;
    cfg.train.classification = spec;
    cfg.train.identification = spec;
    cfg.warmup = Some(TrainSpec { steps: 10, ..spec });
    cfg.checkpoint_every = 10;
    cfg.alpha_grid = vec![0.1, 0.5];
    cfg.beta_grid = vec![0.4, 0.65];
    cfg.decode.max_length = 24;
    cfg.out_dir = dir.join("out");
    cfg.seed = 9;
    cfg
}

fn run_all(cfg: &ExperimentConfig) -> Vec<RunManifest> {
    let mut ms = vec![harness::cmd_gen(cfg).unwrap(), harness::cmd_train(cfg).unwrap()];
    ms.push(harness::cmd_eval(cfg, &[], Split::Test).unwrap().0);
    ms.push(harness::cmd_grid(cfg, true).unwrap().0);
    ms.push(harness::cmd_ablate(cfg).unwrap().0);
    ms.push(harness::cmd_sweep_steps(cfg, true).unwrap().0);
    ms
}

#[test]
fn full_pipeline_writes_complete_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let ms = run_all(&cfg);
    for m in &ms {
        m.verify().unwrap();
        assert!(!m.artifacts.is_empty(), "{}", m.command);
        assert!(cfg.layout().manifest(&m.command).exists());
    }
    let layout = cfg.layout();
    for model in harness::MODELS {
        for step in [0, 10, 20] {
            assert!(layout.checkpoint(model, step).exists(), "{model} {step}");
        }
    }
    let ablate = std::fs::read_to_string(layout.reports_dir().join("ablate.csv")).unwrap();
    assert_eq!(ablate.lines().count(), 1 + 4);
    let grid = std::fs::read_to_string(layout.reports_dir().join("grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 4);
    let eval = std::fs::read_to_string(layout.reports_dir().join("eval.csv")).unwrap();
    assert_eq!(eval.lines().count(), 1 + alcd::decoding::Strategy::IDS.len());
    assert!(layout.plots_dir().join("grid-alpha.tsv").exists());
    let sweep: Vec<harness::SweepPoint> =
        serde_json::from_str(&std::fs::read_to_string(layout.reports_dir().join("sweep-steps.json")).unwrap()).unwrap();
    assert_eq!(sweep.iter().map(|p| p.step).collect::<Vec<_>>(), vec![0, 10, 20]);
    assert!(layout.traces("alcd-test").exists());
}

#[test]
fn rerun_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = run_all(&tiny_config(a.path()));
    let mb = run_all(&tiny_config(b.path()));
    for (x, y) in ma.iter().zip(&mb) {
        let hx: Vec<&String> = x.artifacts.iter().map(|a| &a.sha256).collect();
        let hy: Vec<&String> = y.artifacts.iter().map(|a| &a.sha256).collect();
        assert_eq!(hx, hy, "{}", x.command);
    }
}

#[test]
fn same_seed_same_corpus_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ga = harness::cmd_gen(&tiny_config(a.path())).unwrap();
    let gb = harness::cmd_gen(&tiny_config(b.path())).unwrap();
    assert_eq!(
        ga.artifacts.iter().map(|x| &x.sha256).collect::<Vec<_>>(),
        gb.artifacts.iter().map(|x| &x.sha256).collect::<Vec<_>>()
    );
    let mut other = tiny_config(b.path());
    other.seed = 10;
    let gc = harness::cmd_gen(&other).unwrap();
    assert_ne!(ga.artifacts[0].sha256, gc.artifacts[0].sha256);
}

#[test]
fn missing_artifacts_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    match harness::cmd_train(&cfg) {
        Err(Error::MissingArtifact(p)) => assert!(p.ends_with("vocab.json"), "{}", p.display()),
        other => panic!("expected missing artifact, got {other:?}"),
    }
    harness::cmd_gen(&cfg).unwrap();
    match harness::cmd_ablate(&cfg) {
        Err(Error::MissingArtifact(p)) => assert!(p.to_string_lossy().contains("checkpoints")),
        other => panic!("expected missing checkpoint, got {other:?}"),
    }
}

#[test]
fn full_sizes() {
    let t = task();
    let v = harness::build_vocab(&t, None).unwrap();
    let s = harness::SplitSizes::FULL;
    let (a, b, c) = generate_corpus(&t, &v, s.train, s.valid, s.test).unwrap();
    assert_eq!((a.len(), b.len(), c.len()), (4600, 400, 400));
}

#[test]
fn amateur_is_the_half_step_normal_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let data = harness::generate(&cfg).unwrap();
    let run = harness::train_models(&cfg, &data).unwrap();
    let ck = harness::Checkpoints::from_run(&run).unwrap();
    assert_eq!(ck.amateur.steps(), 10);
    assert_eq!(ck.normal.steps(), 20);
    assert_eq!(run.normal.checkpoints[0].params(), run.classification.checkpoints[0].params());
}
