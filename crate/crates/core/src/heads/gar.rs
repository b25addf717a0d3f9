use rand::Rng;
use serde::{Deserialize, Serialize};

use super::FocalConfig;
use crate::backbone::{const_param, randn_param};
use crate::error::{shape_err, ModelError};
use crate::numerics::{Graph, ParamId, ParamStore, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pool {
    #[default]
    Mean,
    Max,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GarHeadConfig {
    pub hidden: usize,
    pub pool: Pool,
    pub focal: FocalConfig,
}

impl Default for GarHeadConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            pool: Pool::Mean,
            focal: FocalConfig::default(),
        }
    }
}

/// Masked pooling over time and persons followed by a two-layer perceptron.
pub struct GarHead {
    pub cfg: GarHeadConfig,
    pub num_classes: usize,
    pub fc1: (ParamId, ParamId),
    pub fc2: (ParamId, ParamId),
}

impl GarHead {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        cfg: GarHeadConfig,
        channels: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        let h = cfg.hidden;
        let fc1 = (
            randn_param(store, "heads.gar.fc1.w".into(), &[channels, h], (2.0 / channels as Real).sqrt(), rng)?,
            const_param(store, "heads.gar.fc1.b".into(), &[h], 0.0)?,
        );
        let fc2 = (
            randn_param(store, "heads.gar.fc2.w".into(), &[h, num_classes], (1.0 / h as Real).sqrt(), rng)?,
            const_param(store, "heads.gar.fc2.b".into(), &[num_classes], 0.0)?,
        );
        Ok(Self {
            cfg,
            num_classes,
            fc1,
            fc2,
        })
    }

    /// Pooled `[C]` vector of the rows with `mask[t·N + n]` set.
    pub fn pool(&self, g: &mut Graph, feature: Var, mask: &[bool]) -> Result<Var, ModelError> {
        let s = g.shape(feature).to_vec();
        if s.len() != 3 || mask.len() != s[0] * s[1] {
            return shape_err(format!("GAR feature {s:?} with mask of {}", mask.len()));
        }
        let rows: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        if rows.is_empty() {
            return shape_err("GAR pooling mask has no valid entry");
        }
        let flat = g.reshape(feature, &[s[0] * s[1], s[2]])?;
        let picked = g.embedding(flat, &rows)?;
        Ok(match self.cfg.pool {
            Pool::Mean => g.mean(picked, 0)?,
            Pool::Max => g.max(picked, 0)?,
        })
    }

    /// `feature: [T_f, N, C]` → logits `[N_cls]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, feature: Var, mask: &[bool]) -> Result<Var, ModelError> {
        let pooled = self.pool(g, feature, mask)?;
        let c = g.shape(pooled)[0];
        let x = g.reshape(pooled, &[1, c])?;
        let (w1, b1) = (g.param(store, self.fc1.0), g.param(store, self.fc1.1));
        let h = g.matmul(x, w1)?;
        let h = g.add(h, b1)?;
        let h = g.relu(h);
        let (w2, b2) = (g.param(store, self.fc2.0), g.param(store, self.fc2.1));
        let y = g.matmul(h, w2)?;
        let y = g.add(y, b2)?;
        Ok(g.reshape(y, &[self.num_classes])?)
    }
}

/// Focal loss on softmax probabilities against the one-hot label, summed
/// over class channels.
pub fn gar_loss(g: &mut Graph, logits: Var, label: usize, focal: &FocalConfig) -> Result<Var, ModelError> {
    let n = g.shape(logits).to_vec();
    if n.len() != 1 || label >= n[0] {
        return shape_err(format!("label {label} for logits {n:?}"));
    }
    let probs = g.softmax(logits, 0)?;
    let target = Tensor::from_fn(&n, |i| if i == label { 1.0 } else { 0.0 });
    Ok(g.focal(probs, &target, focal.params(None), 1.0)?)
}
