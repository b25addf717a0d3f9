use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Label, ModelOutput, One2Many, Prepared, Sample};
use super::{PipelineError, RunConfig, Task};
use crate::augment::{augment_clip, augment_round, sample_seed};
use crate::data::{make_split, CourtBounds, SplitSpec, Vocabulary};
use crate::heads::{decode_tgal, TgalHeatmaps};
use crate::metrics::{gar_accuracy, tgal_map, tiou_grid, write_detections, EvalReport, GroundTruth, ScoredDetection};
use crate::numerics::{Graph, ParamStore, Real, Tensor};
use crate::par::{self, Parallelism};
use crate::statt::ForwardCtx;
use crate::synthgen::load_corpus;

pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const SPLIT_FILE: &str = "split.toml";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.sgaw";
pub const PREDICTIONS_CSV: &str = "predictions.csv";
pub const EVAL_DIR: &str = "eval";

/// Loads and validates a corpus as model samples (GAR: one sample per
/// annotated instance; TGAL: one per round).
pub fn load_samples(dir: &Path, task: Task, num_classes: usize, par: Parallelism) -> Result<Vec<Sample>, PipelineError> {
    let (_, rounds) = load_corpus(dir, par)?;
    let bounds = CourtBounds::default();
    let mut out = Vec::new();
    for r in rounds {
        r.validate(&bounds, num_classes)?;
        match task {
            Task::Gar => out.extend(r.trim_to_gar_clips().into_iter().map(Sample::from_clip)),
            Task::Tgal => out.push(Sample::from_round(r)),
        }
    }
    if out.is_empty() {
        return Err(PipelineError::Data(format!("{} holds no samples", dir.display())));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: Real,
    /// Held-out GAR mAcc or TGAL mAP@0.5 (percent) when evaluated.
    pub score: Option<Real>,
}

pub struct EvalOutcome {
    pub report: EvalReport,
    /// GAR mAcc or TGAL mAP@0.5, percent.
    pub score: Real,
    pub detections: Vec<ScoredDetection>,
    /// GAR `(id, label, prediction)`.
    pub predictions: Vec<(String, usize, usize)>,
}

pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub log: Vec<EpochLog>,
    /// First epoch whose held-out score reached `stop_at`.
    pub reached: Option<usize>,
    pub eval: EvalOutcome,
    pub train_size: usize,
    pub test_size: usize,
}

fn category_names(n: usize) -> Vec<String> {
    Vocabulary::first(n)
        .map(|v| v.names())
        .unwrap_or_else(|_| (0..n).map(|c| format!("c{c}")).collect())
}

/// Runs every prepared sample through the model and scores the task.
pub fn evaluate(model: &One2Many, store: &ParamStore, items: &[Prepared], par: Parallelism) -> Result<EvalOutcome, PipelineError> {
    let outs = par::try_map_range(par, items.len(), |i| {
        let p = &items[i];
        let mut g = Graph::inference();
        let out = model.forward(&mut g, store, p, &mut ForwardCtx::eval())?;
        Ok::<_, PipelineError>(match out {
            ModelOutput::Gar(v) => (Some(g.value(v).data().to_vec()), None),
            ModelOutput::Tgal(hv) => (None, Some(TgalHeatmaps::from_graph(&g, &hv))),
        })
    })?;
    let nc = model.num_classes;
    match model.task {
        Task::Gar => {
            let mut logits = Vec::with_capacity(items.len());
            let mut labels = Vec::with_capacity(items.len());
            let mut predictions = Vec::with_capacity(items.len());
            for (p, (l, _)) in items.iter().zip(outs) {
                let l = l.expect("GAR output");
                if l.iter().any(|v| !v.is_finite()) {
                    return Err(PipelineError::Numeric(format!("{}: non-finite logits", p.id)));
                }
                let Label::Gar(c) = p.label else { unreachable!("GAR sample") };
                predictions.push((p.id.clone(), c, crate::heads::argmax(&l).unwrap_or(0)));
                logits.push(l);
                labels.push(c);
            }
            let acc = gar_accuracy(&logits, &labels, nc)?;
            Ok(EvalOutcome {
                score: acc.macc,
                report: EvalReport {
                    gar: Some(acc),
                    tgal: None,
                },
                detections: Vec::new(),
                predictions,
            })
        }
        Task::Tgal => {
            let ds = model.backbone.cfg.downsample();
            let mut dets = Vec::new();
            let mut gts = Vec::new();
            for (p, (_, hm)) in items.iter().zip(outs) {
                let hm = hm.expect("TGAL output");
                if !hm.cls.is_finite() {
                    return Err(PipelineError::Numeric(format!("{}: non-finite heatmap", p.id)));
                }
                for d in decode_tgal(&hm, &model.cfg.decode, ds, p.frames) {
                    dets.push(ScoredDetection {
                        round_id: p.id.clone(),
                        start: d.start,
                        end: d.end,
                        category: d.category,
                        score: d.score,
                    });
                }
                let Label::Tgal(inst) = &p.label else { unreachable!("TGAL sample") };
                gts.extend(inst.iter().map(|i| GroundTruth {
                    round_id: p.id.clone(),
                    start: i.start as Real,
                    end: i.end as Real,
                    category: i.category,
                }));
            }
            let rep = tgal_map(&dets, &gts, nc, &tiou_grid())?;
            Ok(EvalOutcome {
                score: rep.map_per_threshold[0],
                report: EvalReport {
                    gar: None,
                    tgal: Some(rep),
                },
                detections: dets,
                predictions: Vec::new(),
            })
        }
    }
}

/// Writes the metric CSVs (plus detections or predictions) into `dir`.
pub fn write_eval(outcome: &EvalOutcome, num_classes: usize, dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(PipelineError::io(dir))?;
    outcome.report.write_csv(dir, &category_names(num_classes))?;
    if outcome.report.tgal.is_some() {
        write_detections(&dir.join(crate::metrics::DETECTIONS_CSV), &outcome.detections)?;
    }
    if outcome.report.gar.is_some() {
        let path = dir.join(PREDICTIONS_CSV);
        let mut w = csv::Writer::from_path(&path).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
        let werr = |e: csv::Error| PipelineError::Data(format!("{}: {e}", path.display()));
        w.write_record(["id", "label", "prediction"]).map_err(werr)?;
        for (id, l, p) in &outcome.predictions {
            w.write_record([id.clone(), l.to_string(), p.to_string()]).map_err(werr)?;
        }
        w.flush().map_err(PipelineError::io(&path))?;
    }
    Ok(())
}

fn split_samples(samples: Vec<Sample>, cfg: &RunConfig) -> Result<(Vec<Sample>, Vec<Sample>, SplitSpec), PipelineError> {
    let mut items: Vec<(String, usize)> = samples.iter().map(|s| (s.id.clone(), s.stratum())).collect();
    if cfg.task == Task::Tgal {
        // rounds mix categories, so rare first-instance strata are pooled
        let mut count: HashMap<usize, usize> = HashMap::new();
        for (_, s) in &items {
            *count.entry(*s).or_default() += 1;
        }
        let rare: usize = count.values().filter(|&&c| c < 2).sum();
        let largest = count.iter().max_by_key(|(s, c)| (**c, std::cmp::Reverse(**s))).map_or(0, |(s, _)| *s);
        let pool = if rare >= 2 { usize::MAX } else { largest };
        for (_, s) in items.iter_mut() {
            if count[s] < 2 {
                *s = pool;
            }
        }
    }
    let spec = make_split(&items, cfg.data.split_ratio, cfg.seed)?;
    let test: std::collections::HashSet<&str> = spec.test_ids.iter().map(String::as_str).collect();
    let (te, tr): (Vec<Sample>, Vec<Sample>) = samples.into_iter().partition(|s| test.contains(s.id.as_str()));
    Ok((tr, te, spec))
}

/// Train and test samples as a run with this config sees them.
fn datasets(cfg: &RunConfig) -> Result<(Vec<Sample>, Vec<Sample>, Option<SplitSpec>), PipelineError> {
    let nc = cfg.data.num_classes;
    let all = load_samples(&cfg.data.corpus, cfg.task, nc, cfg.parallelism)?;
    match &cfg.data.test_corpus {
        Some(t) => Ok((all, load_samples(t, cfg.task, nc, cfg.parallelism)?, None)),
        None => {
            let (tr, te, spec) = split_samples(all, cfg)?;
            Ok((tr, te, Some(spec)))
        }
    }
}

fn prepare_all(model: &One2Many, store: &ParamStore, samples: &[Sample], pad: usize, par: Parallelism) -> Result<Vec<Prepared>, PipelineError> {
    // parallelism goes to the outer loop; per-sample extraction stays serial
    par::try_map_range(par, samples.len(), |i| model.prepare(store, &samples[i], pad, Parallelism::Sequential))
}

fn augmented(cfg: &RunConfig, s: &Sample, seed: u64) -> Result<Sample, PipelineError> {
    let a = cfg.augment.config(cfg.seed);
    let on = cfg.augment.toggles();
    Ok(match cfg.task {
        Task::Gar => Sample::from_clip(augment_clip(&s.to_clip().expect("GAR sample"), &a, on, seed)?),
        Task::Tgal => Sample::from_round(augment_round(&s.to_round().expect("TGAL sample"), &a, on, seed)?),
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), PipelineError> {
    std::fs::write(path, text).map_err(PipelineError::io(path))
}

/// Trains from scratch (or from pretrained backbone weights) and writes the
/// config snapshot, split, per-epoch log, checkpoint, and held-out reports
/// into `run_dir`.
pub fn run_train(cfg: &RunConfig, run_dir: &Path) -> Result<TrainOutcome, PipelineError> {
    cfg.validate()?;
    cfg.check_paths()?;
    std::fs::create_dir_all(run_dir).map_err(PipelineError::io(run_dir))?;
    write_file(&run_dir.join(CONFIG_SNAPSHOT), &cfg.to_toml())?;

    let (train, test, spec) = datasets(cfg)?;
    if let Some(spec) = &spec {
        write_file(&run_dir.join(SPLIT_FILE), &toml::to_string(spec).expect("split serializes"))?;
    }
    let nc = cfg.data.num_classes;
    let (model, mut store) = One2Many::new(&cfg.model, cfg.task, nc, cfg.seed)?;
    if let Some(path) = cfg.model.pretrained_path() {
        let bytes = std::fs::read(path).map_err(PipelineError::io(path))?;
        let n = model.load_backbone(&mut store, &bytes)?;
        log::info!("loaded {n} pretrained backbone tensors from {}", path.display());
    }
    let mut opt = crate::numerics::SgdState::new(&store, cfg.optimizer.lr, cfg.optimizer.momentum, cfg.optimizer.weight_decay);
    if !cfg.model.train_backbone {
        for id in model.backbone_params(&store) {
            opt.freeze(id, true);
        }
    }

    let pad = cfg.pad_frames();
    let par = cfg.parallelism;
    let t0 = Instant::now();
    let augmenting = cfg.augment.spatial || cfg.augment.temporal;
    let cached = if augmenting || cfg.model.train_backbone {
        None
    } else {
        Some(prepare_all(&model, &store, &train, pad, par)?)
    };
    let mut test_prepared = if cfg.model.train_backbone {
        None
    } else {
        Some(prepare_all(&model, &store, &test, pad, par)?)
    };
    log::info!("prepared {} train / {} test samples in {:.1?}", train.len(), test.len(), t0.elapsed());

    let mut log_rows = Vec::new();
    let mut reached = None;
    let batch = cfg.batch();
    let mut last_eval: Option<EvalOutcome> = None;
    for epoch in 1..=cfg.epochs {
        let te = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(batch) {
            let results = par::try_map_range(par, chunk.len(), |k| {
                let i = chunk[k];
                let seed = sample_seed(cfg.seed, epoch, i);
                let fresh;
                let p = match &cached {
                    Some(c) => &c[i],
                    None => {
                        let s = if augmenting { augmented(cfg, &train[i], seed)? } else { train[i].clone() };
                        fresh = model.prepare(&store, &s, pad, Parallelism::Sequential)?;
                        &fresh
                    }
                };
                let mut g = Graph::new();
                let out = model.forward(&mut g, &store, p, &mut ForwardCtx::train(seed))?;
                let loss = model.loss(&mut g, &out, p)?;
                let l = g.value(loss).item();
                if !l.is_finite() {
                    return Err(PipelineError::Numeric(format!("epoch {epoch}: loss {l} on {}", p.id)));
                }
                Ok((l, g.backward(loss)?.param_grads()))
            })?;
            let mut sum: Vec<Option<Tensor>> = vec![None; store.len()];
            for (l, grads) in results {
                loss_sum += l;
                for (id, gt) in grads {
                    match &mut sum[id.0] {
                        Some(acc) => acc.add_assign(&gt),
                        slot => *slot = Some(gt),
                    }
                }
            }
            let inv = 1.0 / chunk.len() as Real;
            let grads: Vec<_> = store
                .ids()
                .filter_map(|id| sum[id.0].take().map(|t| (id, t.map(|v| v * inv))))
                .collect();
            if grads.iter().any(|(_, t)| !t.is_finite()) {
                return Err(PipelineError::Numeric(format!("epoch {epoch}: non-finite gradient")));
            }
            opt.step(&mut store, &grads)?;
        }
        let loss = loss_sum / train.len() as Real;
        let eval_now = epoch == cfg.epochs || (cfg.eval_every > 0 && epoch % cfg.eval_every == 0);
        let mut score = None;
        if eval_now {
            if cfg.model.train_backbone {
                test_prepared = Some(prepare_all(&model, &store, &test, pad, par)?);
            }
            let ev = evaluate(&model, &store, test_prepared.as_ref().expect("test prepared"), par)?;
            score = Some(ev.score);
            last_eval = Some(ev);
        }
        log::info!("epoch {epoch}: loss {loss:.5} score {score:?} ({:.1?})", te.elapsed());
        log_rows.push(EpochLog { epoch, loss, score });
        if let (Some(target), Some(s)) = (cfg.stop_at, score) {
            if s >= target {
                reached = Some(epoch);
                break;
            }
        }
    }
    write_log(&run_dir.join(TRAIN_LOG), &log_rows)?;
    store.save(&run_dir.join(CHECKPOINT_FILE), "")?;
    let eval = match last_eval {
        Some(e) => e,
        None => {
            let prepared = prepare_all(&model, &store, &test, pad, par)?;
            evaluate(&model, &store, &prepared, par)?
        }
    };
    write_eval(&eval, nc, &run_dir.join(EVAL_DIR))?;
    Ok(TrainOutcome {
        run_dir: run_dir.to_path_buf(),
        log: log_rows,
        reached,
        eval,
        train_size: train.len(),
        test_size: test.len(),
    })
}

fn write_log(path: &Path, rows: &[EpochLog]) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
    let werr = |e: csv::Error| PipelineError::Data(format!("{}: {e}", path.display()));
    w.write_record(["epoch", "loss", "score"]).map_err(werr)?;
    for r in rows {
        w.write_record([r.epoch.to_string(), r.loss.to_string(), r.score.map_or_else(String::new, |s| s.to_string())])
            .map_err(werr)?;
    }
    w.flush().map_err(PipelineError::io(path))
}

/// Class count a checkpoint's head was trained for.
fn checkpoint_classes(bytes: &[u8]) -> Result<Option<usize>, PipelineError> {
    let tensors = crate::numerics::read_weights(bytes)?;
    let names: HashMap<&str, &Tensor> = tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
    Ok(["heads.gar.fc2.b", "heads.tgal.cls.b"]
        .iter()
        .find_map(|n| names.get(n).map(|t| t.shape()[0])))
}

/// Evaluates a checkpoint on `data` (every sample) or, without it, on the
/// held-out split the training run used; writes reports into `out_dir`.
pub fn run_eval(cfg: &RunConfig, checkpoint: &Path, data: Option<&Path>, out_dir: &Path) -> Result<EvalOutcome, PipelineError> {
    cfg.validate()?;
    let nc = cfg.data.num_classes;
    let bytes = std::fs::read(checkpoint).map_err(PipelineError::io(checkpoint))?;
    match checkpoint_classes(&bytes)? {
        Some(k) if k != nc => {
            return Err(PipelineError::Data(format!(
                "checkpoint predicts {k} categories but the config declares {nc}"
            )))
        }
        None => return Err(PipelineError::Data("checkpoint has no task head".into())),
        _ => {}
    }
    let samples = match data {
        Some(d) => load_samples(d, cfg.task, nc, cfg.parallelism)?,
        None => {
            cfg.check_paths()?;
            datasets(cfg)?.1
        }
    };
    let (model, mut store) = One2Many::new(&cfg.model, cfg.task, nc, cfg.seed)?;
    let tensors = crate::numerics::read_weights(&bytes)?;
    for (name, t) in tensors {
        let id = store
            .id(&name)
            .ok_or_else(|| PipelineError::Data(format!("checkpoint tensor {name} does not fit the configured model")))?;
        if store.get(id).shape() != t.shape() {
            return Err(PipelineError::Data(format!("checkpoint tensor {name} has shape {:?}", t.shape())));
        }
        *store.get_mut(id) = t;
    }
    let prepared = prepare_all(&model, &store, &samples, cfg.pad_frames(), cfg.parallelism)?;
    let out = evaluate(&model, &store, &prepared, cfg.parallelism)?;
    write_eval(&out, nc, out_dir)?;
    Ok(out)
}
