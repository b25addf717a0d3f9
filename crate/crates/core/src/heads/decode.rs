use serde::{Deserialize, Serialize};

use super::TgalHeatmaps;
use crate::numerics::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub top_n: usize,
    /// Peaks must score strictly above this.
    pub score_threshold: Real,
    /// Keep only entries not exceeded by their temporal neighbors.
    pub local_max: bool,
    pub soft_nms: bool,
    pub soft_nms_sigma: Real,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            top_n: 100,
            score_threshold: 0.0,
            local_max: true,
            soft_nms: false,
            soft_nms_sigma: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Peak position in feature frames.
    pub index: usize,
    pub category: usize,
    pub score: Real,
    /// Half-width read from the regression map (feature frames).
    pub half: Real,
    /// Offset read from the offset map (feature frames).
    pub offset: Real,
    /// Boundary in input frames.
    pub start: Real,
    pub end: Real,
}

fn order(a: &Detection, b: &Detection) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.index.cmp(&b.index))
        .then(a.category.cmp(&b.category))
}

fn tiou(a: &Detection, b: &Detection) -> Real {
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = (a.end - a.start) + (b.end - b.start) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Gaussian soft suppression within each category; returns the rescored
/// list in decode order.
pub fn soft_nms(mut dets: Vec<Detection>, sigma: Real) -> Vec<Detection> {
    let mut out = Vec::with_capacity(dets.len());
    while !dets.is_empty() {
        dets.sort_by(order);
        let best = dets.remove(0);
        for d in dets.iter_mut().filter(|d| d.category == best.category) {
            let o = tiou(&best, d);
            d.score *= (-o * o / sigma).exp();
        }
        out.push(best);
    }
    out
}

/// Top-N peaks of the class map turned into boundaries over `frames` input
/// frames; sorted by score, then lower index, then lower class.
pub fn decode_tgal(hm: &TgalHeatmaps, cfg: &DecodeConfig, ds: usize, frames: usize) -> Vec<Detection> {
    let (t, c) = (hm.frames(), hm.num_classes());
    let score = |i: usize, k: usize| hm.cls.data()[i * c + k];
    let last = frames.saturating_sub(1) as Real;
    let mut dets = Vec::new();
    for i in 0..t {
        for k in 0..c {
            let s = score(i, k);
            if s <= cfg.score_threshold {
                continue;
            }
            if cfg.local_max && ((i > 0 && score(i - 1, k) > s) || (i + 1 < t && score(i + 1, k) > s)) {
                continue;
            }
            let (w, o) = (hm.reg[i], hm.off[i]);
            let center = i as Real + o;
            dets.push(Detection {
                index: i,
                category: k,
                score: s,
                half: w,
                offset: o,
                start: ((center - w) * ds as Real).clamp(0.0, last),
                end: ((center + w) * ds as Real).clamp(0.0, last),
            });
        }
    }
    if cfg.soft_nms {
        dets = soft_nms(dets, cfg.soft_nms_sigma);
    }
    dets.sort_by(order);
    dets.truncate(cfg.top_n);
    dets
}
