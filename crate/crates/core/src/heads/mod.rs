//! Task heads: GAR classification, TGAL heatmaps with their target encoding
//! and decoding, and the training losses.

mod decode;
mod gar;
mod targets;
mod tgal;


pub use decode::{decode_tgal, soft_nms, DecodeConfig, Detection};
pub use gar::{gar_loss, GarHead, GarHeadConfig, Pool};
pub use targets::{encode_tgal_targets, CenterTarget, TgalTargets};
pub use tgal::{tgal_loss, HeatmapVars, TgalHead, TgalHeadConfig, TgalHeatmaps, TgalLossParts};

use serde::{Deserialize, Serialize};

use crate::numerics::{FocalParams, Real};

/// Focal loss settings as they appear in configuration files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FocalConfig {
    pub gamma: Real,
    pub alpha: Real,
}

impl Default for FocalConfig {
    fn default() -> Self {
        Self { gamma: 2.0, alpha: 0.25 }
    }
}

impl FocalConfig {
    pub fn params(&self, negative_penalty: Option<Real>) -> FocalParams {
        FocalParams {
            gamma: self.gamma,
            alpha: self.alpha,
            negative_penalty,
        }
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[Real]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Indices of the `k` largest scores, best first, ties to the lowest index.
pub fn top_k(scores: &[Real], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}
