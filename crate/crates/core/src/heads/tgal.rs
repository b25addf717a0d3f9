use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{FocalConfig, TgalTargets};
use crate::backbone::{const_param, randn_param};
use crate::error::{shape_err, ModelError};
use crate::numerics::{Graph, ParamId, ParamStore, Real, Tensor, Var};

const KERNEL: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TgalHeadConfig {
    pub hidden: usize,
    /// Initial foreground probability of the class map.
    pub prior: Real,
    pub focal: FocalConfig,
    /// Exponent of the `(1 − target)` weight on negatives.
    pub negative_penalty: Real,
    /// Weight of the DIoU term.
    pub diou_weight: Real,
}

impl Default for TgalHeadConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            prior: 0.01,
            focal: FocalConfig::default(),
            negative_penalty: 4.0,
            diou_weight: 1.0,
        }
    }
}

/// Graph handles of the three heatmaps.
#[derive(Clone, Copy, Debug)]
pub struct HeatmapVars {
    /// `[T_f, N_cls]` in (0, 1).
    pub cls: Var,
    /// `[T_f]` half-widths, nonnegative.
    pub reg: Var,
    /// `[T_f]` offsets in (−1, 1).
    pub off: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TgalHeatmaps {
    pub cls: Tensor,
    pub reg: Vec<Real>,
    pub off: Vec<Real>,
}

impl TgalHeatmaps {
    pub fn from_graph(g: &Graph, v: &HeatmapVars) -> Self {
        Self {
            cls: g.value(v.cls).clone(),
            reg: g.value(v.reg).data().to_vec(),
            off: g.value(v.off).data().to_vec(),
        }
    }

    pub fn frames(&self) -> usize {
        self.reg.len()
    }

    pub fn num_classes(&self) -> usize {
        self.cls.shape().get(1).copied().unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    w: ParamId,
    b: ParamId,
}

/// Persons mean-pooled, two shared kernel-3 conv layers, then one kernel-3
/// conv per heatmap.
pub struct TgalHead {
    pub cfg: TgalHeadConfig,
    pub num_classes: usize,
    trunk: [Conv; 2],
    cls: Conv,
    reg: Conv,
    off: Conv,
}

impl TgalHead {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        cfg: TgalHeadConfig,
        channels: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        let h = cfg.hidden;
        let mut conv = |name: &str, cin: usize, cout: usize, std: Real, bias: Real| -> Result<Conv, ModelError> {
            Ok(Conv {
                w: randn_param(store, format!("heads.tgal.{name}.w"), &[KERNEL, cin, cout], std, rng)?,
                b: const_param(store, format!("heads.tgal.{name}.b"), &[cout], bias)?,
            })
        };
        let he = |cin: usize| (2.0 / (KERNEL * cin) as Real).sqrt();
        let prior = cfg.prior.clamp(1e-6, 1.0 - 1e-6);
        let trunk = [conv("trunk0", channels, h, he(channels), 0.0)?, conv("trunk1", h, h, he(h), 0.0)?];
        let cls = conv("cls", h, num_classes, 0.01, -((1.0 - prior) / prior).ln())?;
        let reg = conv("reg", h, 1, 0.01, 0.0)?;
        let off = conv("off", h, 1, 0.01, 0.0)?;
        Ok(Self {
            cfg,
            num_classes,
            trunk,
            cls,
            reg,
            off,
        })
    }

    fn apply(g: &mut Graph, store: &ParamStore, c: Conv, x: Var) -> Result<Var, ModelError> {
        let (w, b) = (g.param(store, c.w), g.param(store, c.b));
        Ok(g.conv1d(x, w, Some(b), 1, KERNEL / 2)?)
    }

    /// `feature: [T_f, N, C]` → heatmaps.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, feature: Var) -> Result<HeatmapVars, ModelError> {
        let s = g.shape(feature).to_vec();
        if s.len() != 3 {
            return shape_err(format!("TGAL feature {s:?} is not [T_f, N, C]"));
        }
        let t = s[0];
        if t < KERNEL {
            return shape_err(format!("TGAL needs at least {KERNEL} feature frames, got {t}"));
        }
        let x = g.mean(feature, 1)?;
        let mut x = g.reshape(x, &[t, 1, s[2]])?;
        for c in self.trunk {
            x = Self::apply(g, store, c, x)?;
            x = g.relu(x);
        }
        let cls = Self::apply(g, store, self.cls, x)?;
        let cls = g.reshape(cls, &[t, self.num_classes])?;
        let cls = g.sigmoid(cls);
        let reg = Self::apply(g, store, self.reg, x)?;
        let reg = g.reshape(reg, &[t])?;
        let reg = g.softplus(reg);
        let off = Self::apply(g, store, self.off, x)?;
        let off = g.reshape(off, &[t])?;
        let off = g.tanh(off);
        Ok(HeatmapVars { cls, reg, off })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TgalLossParts {
    pub total: Var,
    pub focal: Var,
    pub diou: Option<Var>,
}

/// Penalty-reduced focal loss over the class map, normalized by the number
/// of positives, plus weighted DIoU at the instance centers.
pub fn tgal_loss(
    g: &mut Graph,
    hm: &HeatmapVars,
    targets: &TgalTargets,
    cfg: &TgalHeadConfig,
) -> Result<TgalLossParts, ModelError> {
    let norm = targets.num_positive().max(1) as Real;
    let focal = g.focal(hm.cls, &targets.cls, cfg.focal.params(Some(cfg.negative_penalty)), norm)?;
    if targets.centers.is_empty() || cfg.diou_weight == 0.0 {
        return Ok(TgalLossParts {
            total: focal,
            focal,
            diou: None,
        });
    }
    let t = g.shape(hm.reg)[0];
    let k = targets.centers.len();
    let idx: Vec<usize> = targets.centers.iter().map(|c| c.index).collect();
    let gather = |g: &mut Graph, v: Var| -> Result<Var, ModelError> {
        let col = g.reshape(v, &[t, 1])?;
        let e = g.embedding(col, &idx)?;
        Ok(g.reshape(e, &[k])?)
    };
    let half = gather(g, hm.reg)?;
    let off = gather(g, hm.off)?;
    let base = g.input(Tensor::from_fn(&[k], |i| idx[i] as Real));
    let center = g.add(base, off)?;
    let gt: Vec<(Real, Real)> = targets.centers.iter().map(|c| c.interval()).collect();
    let diou = g.diou(center, half, &gt)?;
    let weighted = g.scale(diou, cfg.diou_weight);
    let total = g.add(focal, weighted)?;
    Ok(TgalLossParts {
        total,
        focal,
        diou: Some(diou),
    })
}
