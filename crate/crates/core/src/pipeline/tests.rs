use std::path::Path;

use super::*;
use crate::synthgen::{generate_corpus, CorpusKind, GenParams};

fn corpus(dir: &Path, kind: CorpusKind, n: usize, classes: usize) {
    let params = GenParams {
        seed: 3,
        category_weights: GenParams::uniform_weights(classes),
        ..Default::default()
    };
    generate_corpus(&params, kind, n, 2, dir, Parallelism::Sequential).unwrap();
}

fn tiny(task: Task, corpus: &Path, classes: usize) -> RunConfig {
    let text = format!(
        r#"
task = "{}"
seed = 11
epochs = 1
batch_size = 4

[data]
corpus = "{}"
num_classes = {classes}
split_ratio = 0.5

[model.backbone]
window_len = 400
window_stride = 400
temporal_kernel = 3
layers = [{{ channels = 4, stride = 2 }}, {{ channels = 8, stride = 4 }}]

[model.statt]
blocks = 1
embed_dim = 8
heads = 2

[model.gar]
hidden = 8

[model.tgal]
hidden = 8
"#,
        match task {
            Task::Gar => "gar",
            Task::Tgal => "tgal",
        },
        corpus.display()
    );
    let mut cfg = RunConfig::from_toml(&text).unwrap();
    if task == Task::Tgal {
        cfg.data.pad_frames = Some(800);
    }
    cfg
}

#[test]
fn seed_is_mandatory_and_unknown_keys_fail() {
    let base = "task = \"gar\"\n[data]\ncorpus = \"x\"\n";
    assert!(matches!(RunConfig::from_toml(base), Err(PipelineError::Config(_))));
    let ok = format!("seed = 1\n{base}");
    let cfg = RunConfig::from_toml(&ok).unwrap();
    assert_eq!((cfg.batch(), cfg.pad_frames(), cfg.optimizer.lr), (64, 400, 0.01));
    assert!(RunConfig::from_toml(&format!("seed = 1\nbogus = 2\n{base}")).is_err());
    assert!(RunConfig::from_toml(&format!("{ok}[model]\nmystery = true\n")).is_err());
}

#[test]
fn config_round_trips_and_overrides() {
    let cfg = RunConfig::from_toml("task = \"tgal\"\nseed = 5\n[data]\ncorpus = \"c\"\n").unwrap();
    assert_eq!(cfg.batch(), 8);
    assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    let o = cfg.with_override("optimizer.lr=0.5").unwrap();
    assert_eq!(o.optimizer.lr, 0.5);
    let o = o.with_override("model.pretrained=weights.sgaw").unwrap();
    assert_eq!(o.model.pretrained, "weights.sgaw");
    let o = o.with_override("model.statt.embed_dim=64").unwrap();
    assert_eq!(o.model.statt.embed_dim, 64);
    assert!(cfg.with_override("model.statt.embed_dim=63").is_err());
    assert!(cfg.with_override("model.nonsense=1").is_err());
    assert!(cfg.with_override("no_equals").is_err());
}

#[test]
fn error_classes_map_to_exit_codes() {
    assert_eq!(PipelineError::Config("x".into()).exit_code(), 2);
    assert_eq!(PipelineError::Data("x".into()).exit_code(), 3);
    assert_eq!(PipelineError::Numeric("x".into()).exit_code(), 4);
}

#[test]
fn missing_paths_are_config_errors() {
    let cfg = RunConfig::from_toml("task = \"gar\"\nseed = 1\n[data]\ncorpus = \"/nonexistent/c\"\n").unwrap();
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(run_train(&cfg, dir.path()), Err(PipelineError::Config(_))));
}

#[test]
fn gar_smoke_run_is_deterministic_and_evaluable() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    corpus(&data, CorpusKind::Gar, 10, 2);
    let cfg = tiny(Task::Gar, &data, 2);
    let a = run_train(&cfg, &dir.path().join("a")).unwrap();
    assert!(a.run_dir.join(CHECKPOINT_FILE).exists());
    assert!(a.log[0].loss.is_finite());
    assert_eq!(a.train_size + a.test_size, 10);
    let b = run_train(&cfg, &dir.path().join("b")).unwrap();
    assert_eq!(a.log, b.log);
    for f in ["summary.csv", "confusion.csv", "predictions.csv"] {
        let fa = std::fs::read(a.run_dir.join("eval").join(f)).unwrap();
        assert_eq!(fa, std::fs::read(b.run_dir.join("eval").join(f)).unwrap(), "{f}");
    }
    assert_eq!(
        std::fs::read(a.run_dir.join(TRAIN_LOG)).unwrap(),
        std::fs::read(b.run_dir.join(TRAIN_LOG)).unwrap()
    );

    // evaluating the checkpoint reproduces the library metrics on the same samples
    let out = dir.path().join("ev");
    let ev = run_eval(&cfg, &a.run_dir.join(CHECKPOINT_FILE), None, &out).unwrap();
    let acc = ev.report.gar.as_ref().unwrap();
    let labels: Vec<usize> = ev.predictions.iter().map(|p| p.1).collect();
    let hits = ev.predictions.iter().filter(|p| p.1 == p.2).count();
    assert_eq!(labels.len(), a.test_size);
    assert!((acc.oacc - 100.0 * hits as Real / labels.len() as Real).abs() < 1e-9);

    // a checkpoint for two classes cannot serve a three-class config
    let mut wrong = cfg.clone();
    wrong.data.num_classes = 3;
    assert!(matches!(
        run_eval(&wrong, &a.run_dir.join(CHECKPOINT_FILE), None, &out),
        Err(PipelineError::Data(m)) if m.contains("categories")
    ));
}

#[test]
fn different_seed_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    corpus(&data, CorpusKind::Gar, 8, 2);
    let cfg = tiny(Task::Gar, &data, 2);
    let a = run_train(&cfg, &dir.path().join("a")).unwrap();
    let mut other = cfg.clone();
    other.seed = 12;
    let b = run_train(&other, &dir.path().join("b")).unwrap();
    assert_ne!(a.log[0].loss, b.log[0].loss);
}

#[test]
fn tgal_smoke_with_every_toggle() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    corpus(&data, CorpusKind::Tgal, 6, 2);
    let mut cfg = tiny(Task::Tgal, &data, 2);
    cfg.augment.spatial = true;
    cfg.augment.temporal = true;
    cfg.model.aux.use_ball = false;
    cfg.model.aux.use_team = false;
    let a = run_train(&cfg, &dir.path().join("a")).unwrap();
    assert!(a.log[0].loss.is_finite());
    let names: Vec<_> = ["summary.csv", "ap_grid.csv", "map_curve.csv", "detections.csv"]
        .iter()
        .map(|f| a.run_dir.join("eval").join(f))
        .collect();
    assert!(names.iter().all(|p| p.exists()));

    // the trained backbone serves as pretrained weights for another run
    let mut b = cfg.clone();
    b.model.pretrained = a.run_dir.join(CHECKPOINT_FILE).display().to_string();
    b.model.train_backbone = true;
    b.augment = AugmentSection::default();
    let out = run_train(&b, &dir.path().join("b")).unwrap();
    assert!(out.log[0].loss.is_finite());
}

#[test]
fn frozen_backbone_is_untouched_by_training() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    corpus(&data, CorpusKind::Gar, 6, 2);
    let mut cfg = tiny(Task::Gar, &data, 2);
    cfg.epochs = 2;
    let out = run_train(&cfg, &dir.path().join("a")).unwrap();
    let (model, init) = One2Many::new(&cfg.model, Task::Gar, 2, cfg.seed).unwrap();
    let trained = crate::numerics::read_weights(&std::fs::read(out.run_dir.join(CHECKPOINT_FILE)).unwrap()).unwrap();
    let mut moved = false;
    for (name, t) in trained {
        let id = init.id(&name).unwrap();
        let diff = t.max_abs_diff(init.get(id));
        if name.starts_with("backbone.") {
            // f32 storage only
            assert!(diff < 1e-6, "{name} moved by {diff}");
        } else {
            moved |= diff > 1e-6;
        }
    }
    assert!(moved);
    assert_eq!(model.backbone_params(&init).len(), init.ids().filter(|&i| init.name(i).starts_with("backbone")).count());
}

#[test]
fn two_d_projection_ablation_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    corpus(&data, CorpusKind::Gar, 6, 2);
    let mut cfg = tiny(Task::Gar, &data, 2);
    cfg.model.input_view = Some(View::Side);
    cfg.model.modeling = Modeling::Identity;
    assert!(run_train(&cfg, &dir.path().join("a")).unwrap().log[0].loss.is_finite());
}
