use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelSection, Modeling, PipelineError, Task};
use crate::backbone::{
    aggregate, plan_windows, pool_ball, randn_param, const_param, scene_layout, window_features_in_graph, window_inputs,
    AggMode, AuxEmbedding, Backbone, SceneLayout, SkeletonGraph, WindowPlan,
};
use crate::data::{ActivityInstance, BallCarrier, GarClip, SkeletonSequence, TgalRound, NUM_COORDS, NUM_JOINTS};
use crate::error::ModelError;
use crate::geometry::project_to_view;
use crate::heads::{encode_tgal_targets, gar_loss, tgal_loss, GarHead, HeatmapVars, TgalHead, TgalTargets};
use crate::numerics::{read_weights, Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::par::Parallelism;
use crate::statt::{ForwardCtx, IdentityModel, SceneModel, Statt};

#[derive(Clone, Debug, PartialEq)]
pub enum Label {
    Gar(usize),
    Tgal(Vec<ActivityInstance>),
}

/// One clip or round ready for the model (not yet padded).
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub sequence: SkeletonSequence,
    pub ball: BallCarrier,
    pub team: Vec<bool>,
    pub label: Label,
}

impl Sample {
    pub fn from_clip(c: GarClip) -> Self {
        Self {
            id: c.clip_id,
            sequence: c.sequence,
            ball: c.ball,
            team: c.team,
            label: Label::Gar(c.category),
        }
    }

    pub fn from_round(r: TgalRound) -> Self {
        Self {
            id: r.round_id,
            sequence: r.sequence,
            ball: r.ball,
            team: r.team,
            label: Label::Tgal(r.instances),
        }
    }

    pub fn frames(&self) -> usize {
        self.sequence.frames()
    }

    /// Category used to stratify splits (first instance for rounds).
    pub fn stratum(&self) -> usize {
        match &self.label {
            Label::Gar(c) => *c,
            Label::Tgal(i) => i.first().map_or(0, |i| i.category),
        }
    }

    pub fn to_clip(&self) -> Option<GarClip> {
        match self.label {
            Label::Gar(category) => Some(GarClip {
                clip_id: self.id.clone(),
                sequence: self.sequence.clone(),
                category,
                ball: self.ball.clone(),
                team: self.team.clone(),
            }),
            Label::Tgal(_) => None,
        }
    }

    pub fn to_round(&self) -> Option<TgalRound> {
        match &self.label {
            Label::Tgal(instances) => Some(TgalRound {
                round_id: self.id.clone(),
                sequence: self.sequence.clone(),
                instances: instances.clone(),
                ball: self.ball.clone(),
                team: self.team.clone(),
            }),
            Label::Gar(_) => None,
        }
    }
}

/// Everything a forward pass needs, computed once per sample.
pub struct Prepared {
    pub id: String,
    /// Frames before padding.
    pub frames: usize,
    pub padded: usize,
    pub plan: WindowPlan,
    pub layout: SceneLayout,
    pub ball: Tensor,
    pub team: Vec<bool>,
    /// Cached backbone features `[window][person]` (frozen backbone).
    pub features: Option<Vec<Vec<Tensor>>>,
    /// Padded sequence for in-graph backbone passes.
    pub sequence: Option<SkeletonSequence>,
    pub label: Label,
    pub targets: Option<TgalTargets>,
}

pub enum ModelOutput {
    Gar(Var),
    Tgal(HeatmapVars),
}

enum Head {
    Gar(GarHead),
    Tgal(TgalHead),
}

/// Backbone, aggregation, auxiliary embeddings, scene modeling, and one
/// task head.
pub struct One2Many {
    pub task: Task,
    pub num_classes: usize,
    pub cfg: ModelSection,
    pub backbone: Backbone,
    aux: AuxEmbedding,
    proj: Option<(ParamId, ParamId)>,
    scene: Box<dyn SceneModel>,
    head: Head,
}

impl One2Many {
    /// Builds the model and its randomly initialized parameters.
    pub fn new(cfg: &ModelSection, task: Task, num_classes: usize, seed: u64) -> Result<(Self, ParamStore), ModelError> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let in_channels = if cfg.input_view.is_some() { 2 } else { NUM_COORDS };
        let backbone = Backbone::new(&mut store, cfg.backbone.clone(), SkeletonGraph::default(), in_channels, &mut rng)?;
        let c_b = cfg.backbone.out_channels();
        let c = cfg.statt.embed_dim;
        let aux = AuxEmbedding::new(&mut store, cfg.aux.clone(), c_b, &mut rng)?;
        let proj = if c_b != c {
            Some((
                randn_param(&mut store, "proj.w".into(), &[c_b, c], (1.0 / c_b as Real).sqrt(), &mut rng)?,
                const_param(&mut store, "proj.b".into(), &[c], 0.0)?,
            ))
        } else {
            None
        };
        let scene: Box<dyn SceneModel> = match cfg.modeling {
            Modeling::Statt => Box::new(Statt::new(&mut store, cfg.statt.clone(), &mut rng)?),
            Modeling::Identity => Box::new(IdentityModel),
        };
        let head = match task {
            Task::Gar => Head::Gar(GarHead::new(&mut store, cfg.gar.clone(), c, num_classes, &mut rng)?),
            Task::Tgal => Head::Tgal(TgalHead::new(&mut store, cfg.tgal.clone(), c, num_classes, &mut rng)?),
        };
        Ok((
            Self {
                task,
                num_classes,
                cfg: cfg.clone(),
                backbone,
                aux,
                proj,
                scene,
                head,
            },
            store,
        ))
    }

    pub fn backbone_params(&self, store: &ParamStore) -> Vec<ParamId> {
        store.ids().filter(|&id| store.name(id).starts_with("backbone.")).collect()
    }

    /// Copies `backbone.*` tensors from an SGAW file; other tensors in the
    /// file are ignored. Returns how many were loaded.
    pub fn load_backbone(&self, store: &mut ParamStore, bytes: &[u8]) -> Result<usize, PipelineError> {
        let mut n = 0;
        for (name, t) in read_weights(bytes)? {
            if !name.starts_with("backbone.") {
                continue;
            }
            let id = store
                .id(&name)
                .ok_or_else(|| PipelineError::Data(format!("pretrained tensor {name} has no counterpart in the model")))?;
            if store.get(id).shape() != t.shape() {
                return Err(PipelineError::Data(format!(
                    "pretrained tensor {name}: shape {:?}, model expects {:?}",
                    t.shape(),
                    store.get(id).shape()
                )));
            }
            *store.get_mut(id) = t;
            n += 1;
        }
        if n == 0 {
            return Err(PipelineError::Data("weight file holds no backbone.* tensors".into()));
        }
        Ok(n)
    }

    fn mode(&self) -> AggMode {
        match self.task {
            Task::Gar => AggMode::GarConcat,
            Task::Tgal => AggMode::TgalAverage,
        }
    }

    /// Pads, plans windows, pools the ball vector, encodes targets, and
    /// (frozen backbone) extracts features.
    pub fn prepare(&self, store: &ParamStore, sample: &Sample, pad: usize, par: Parallelism) -> Result<Prepared, PipelineError> {
        let frames = sample.frames();
        if frames > pad {
            return Err(PipelineError::Data(format!("{}: {frames} frames exceed the pad length {pad}", sample.id)));
        }
        if sample.sequence.joints() != NUM_JOINTS || sample.sequence.channels() != NUM_COORDS {
            return Err(PipelineError::Data(format!("{}: expected {NUM_JOINTS}×{NUM_COORDS} joints", sample.id)));
        }
        let mut seq = sample.sequence.padded(pad)?;
        if let Some(view) = self.cfg.input_view {
            seq = project_to_view(&seq, view);
        }
        let ball = sample.ball.padded(pad);
        let bcfg = &self.backbone.cfg;
        let plan = plan_windows(pad, bcfg)?;
        let layout = scene_layout(&seq, &plan, bcfg, self.mode());
        if !layout.any_valid() {
            return Err(PipelineError::Data(format!("{}: no tracked person", sample.id)));
        }
        let ds = bcfg.downsample();
        let ball_t = pool_ball(&ball, &seq, &layout, ds);
        let targets = match &sample.label {
            Label::Tgal(inst) => Some(encode_tgal_targets(inst, frames, ds, layout.frames(), self.num_classes)?),
            Label::Gar(c) if *c >= self.num_classes => {
                return Err(PipelineError::Data(format!("{}: category {c} not below {}", sample.id, self.num_classes)))
            }
            Label::Gar(_) => None,
        };
        let (features, sequence) = if self.cfg.train_backbone {
            (None, Some(seq))
        } else {
            (Some(self.backbone.extract(store, &seq, &plan, par)?), None)
        };
        Ok(Prepared {
            id: sample.id.clone(),
            frames,
            padded: pad,
            plan,
            layout,
            ball: ball_t,
            team: sample.team.clone(),
            features,
            sequence,
            label: sample.label.clone(),
            targets,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, p: &Prepared, ctx: &mut ForwardCtx) -> Result<ModelOutput, ModelError> {
        let windows = match (&p.features, &p.sequence) {
            (Some(f), _) => window_inputs(g, f)?,
            (None, Some(seq)) => window_features_in_graph(g, store, &self.backbone, seq, &p.plan)?,
            (None, None) => return Err(ModelError::Config("prepared sample has neither features nor sequence".into())),
        };
        let ds = self.backbone.cfg.downsample();
        let x = aggregate(g, &windows, &p.plan, p.padded, ds, self.mode())?;
        let x = self.aux.forward(g, store, x, &p.layout, &p.ball, &p.team)?;
        let x = match self.proj {
            Some((w, b)) => {
                let (w, b) = (g.param(store, w), g.param(store, b));
                let y = g.matmul(x, w)?;
                g.add(y, b)?
            }
            None => x,
        };
        let x = self.scene.forward(g, store, x, ctx)?;
        Ok(match &self.head {
            Head::Gar(h) => ModelOutput::Gar(h.forward(g, store, x, &p.layout.valid)?),
            Head::Tgal(h) => ModelOutput::Tgal(h.forward(g, store, x)?),
        })
    }

    pub fn loss(&self, g: &mut Graph, out: &ModelOutput, p: &Prepared) -> Result<Var, ModelError> {
        match (&self.head, out, &p.label) {
            (Head::Gar(h), ModelOutput::Gar(logits), Label::Gar(c)) => gar_loss(g, *logits, *c, &h.cfg.focal),
            (Head::Tgal(h), ModelOutput::Tgal(hm), Label::Tgal(_)) => {
                let t = p.targets.as_ref().expect("targets encoded for rounds");
                Ok(tgal_loss(g, hm, t, &h.cfg)?.total)
            }
            _ => Err(ModelError::Config("task of sample and model differ".into())),
        }
    }
}
