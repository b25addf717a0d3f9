//! Training-time spatial and temporal augmentation of skeleton data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::COCO_MIRROR_PAIRS;
use crate::data::{ActivityInstance, GarClip, SkeletonSequence, TgalRound, NUM_JOINTS};

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error("invalid augmentation setting: {0}")]
    Invalid(String),
    #[error("frame extraction keeps {kept} frame(s), need at least 2")]
    TooShort { kept: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    /// Fraction of frames masked per person.
    pub mask_ratio: f64,
    /// Fraction of frames kept by frame extraction.
    pub keep_fraction: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            mask_ratio: 0.1,
            keep_fraction: 0.8,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(AugmentError::Invalid(format!("flip_prob {} not in [0, 1]", self.flip_prob)));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(AugmentError::Invalid(format!("mask_ratio {} not in [0, 1)", self.mask_ratio)));
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(AugmentError::Invalid(format!("keep_fraction {} not in (0, 1]", self.keep_fraction)));
        }
        Ok(())
    }
}

/// Mirror across the court's long axis: `x ← −x`, and on COCO-17 poses the
/// left/right joints trade places so the skeleton stays anatomically labeled.
pub fn flip_court(seq: &SkeletonSequence) -> SkeletonSequence {
    let [t, n, j, c] = seq.dims();
    let mut out = seq.clone();
    if c == 0 {
        return out;
    }
    for ti in 0..t {
        for ni in 0..n {
            let pose = out.pose_mut(ti, ni);
            for joint in pose.chunks_exact_mut(c) {
                joint[0] = -joint[0];
            }
            if j == NUM_JOINTS {
                for (l, r) in COCO_MIRROR_PAIRS {
                    for k in 0..c {
                        pose.swap(l * c + k, r * c + k);
                    }
                }
            }
        }
    }
    out
}

/// Per person, `⌊ratio·T⌋` distinct frames drawn at random. Row `n` lists the
/// masked frames of person `n` in increasing order.
pub fn mask_plan(frames: usize, persons: usize, ratio: f64, seed: u64) -> Vec<Vec<usize>> {
    let k = ((ratio * frames as f64).floor() as usize).min(frames);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..persons)
        .map(|_| {
            let mut idx = rand::seq::index::sample(&mut rng, frames, k).into_vec();
            idx.sort_unstable();
            idx
        })
        .collect()
}

fn apply_mask(seq: &mut SkeletonSequence, plan: &[Vec<usize>]) {
    for (n, rows) in plan.iter().enumerate() {
        for &t in rows {
            seq.pose_mut(t, n).fill(0.0);
            seq.set_valid(t, n, false);
        }
    }
}

/// Zeroes and invalidates `⌊ratio·T⌋` random frames of each person
/// independently.
pub fn mask_frames(seq: &SkeletonSequence, ratio: f64, seed: u64) -> SkeletonSequence {
    let mut out = seq.clone();
    apply_mask(&mut out, &mask_plan(seq.frames(), seq.persons(), ratio, seed));
    out
}

/// Sorted random subset of `⌈keep·T⌉` source frame indices.
pub fn extraction_plan(frames: usize, keep: f64, seed: u64) -> Result<Vec<usize>, AugmentError> {
    if !(keep > 0.0 && keep <= 1.0) {
        return Err(AugmentError::Invalid(format!("keep_fraction {keep} not in (0, 1]")));
    }
    let k = ((keep * frames as f64).ceil() as usize).min(frames);
    if k < 2 {
        return Err(AugmentError::TooShort { kept: k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, frames, k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Keeps a sorted random subset of frames; returns the new sequence and the
/// retained source indices.
pub fn extract_frames(seq: &SkeletonSequence, keep: f64, seed: u64) -> Result<(SkeletonSequence, Vec<usize>), AugmentError> {
    let kept = extraction_plan(seq.frames(), keep, seed)?;
    Ok((seq.select_frames(&kept), kept))
}

/// Instance on the retained timeline: from the first retained frame at or
/// after its start to the last retained frame at or before its end. `None`
/// when no retained frame falls inside.
pub fn remap_instance(inst: &ActivityInstance, kept: &[usize]) -> Option<ActivityInstance> {
    let start = kept.partition_point(|&f| f < inst.start);
    let end = kept.partition_point(|&f| f <= inst.end);
    (start < end).then_some(ActivityInstance {
        start,
        end: end - 1,
        category: inst.category,
    })
}

pub fn flip_round(round: &TgalRound) -> TgalRound {
    TgalRound {
        sequence: flip_court(&round.sequence),
        ..round.clone()
    }
}

/// Masks frames and clears ball possession on them.
pub fn mask_round(round: &TgalRound, ratio: f64, seed: u64) -> TgalRound {
    let mut out = round.clone();
    let plan = mask_plan(round.frames(), round.sequence.persons(), ratio, seed);
    apply_mask(&mut out.sequence, &plan);
    for (n, rows) in plan.iter().enumerate() {
        for &t in rows {
            out.ball.set(t, n, false);
        }
    }
    out
}

/// Frame extraction with instances and ball flags carried to the new
/// timeline. Instances left without frames are dropped.
pub fn extract_round(round: &TgalRound, keep: f64, seed: u64) -> Result<TgalRound, AugmentError> {
    let kept = extraction_plan(round.frames(), keep, seed)?;
    Ok(TgalRound {
        sequence: round.sequence.select_frames(&kept),
        ball: round.ball.select_frames(&kept),
        instances: round.instances.iter().filter_map(|i| remap_instance(i, &kept)).collect(),
        ..round.clone()
    })
}

pub fn flip_clip(clip: &GarClip) -> GarClip {
    GarClip {
        sequence: flip_court(&clip.sequence),
        ..clip.clone()
    }
}

pub fn mask_clip(clip: &GarClip, ratio: f64, seed: u64) -> GarClip {
    let mut out = clip.clone();
    let plan = mask_plan(clip.frames(), clip.sequence.persons(), ratio, seed);
    apply_mask(&mut out.sequence, &plan);
    for (n, rows) in plan.iter().enumerate() {
        for &t in rows {
            out.ball.set(t, n, false);
        }
    }
    out
}

pub fn extract_clip(clip: &GarClip, keep: f64, seed: u64) -> Result<GarClip, AugmentError> {
    let kept = extraction_plan(clip.frames(), keep, seed)?;
    Ok(GarClip {
        sequence: clip.sequence.select_frames(&kept),
        ball: clip.ball.select_frames(&kept),
        ..clip.clone()
    })
}

/// Which augmentation families are active.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AugmentToggles {
    /// Court flip.
    pub spatial: bool,
    /// Frame masking and frame extraction.
    pub temporal: bool,
}

/// Seed for sample `index` of `epoch`; keeps every draw independent of
/// processing order.
pub fn sample_seed(base: u64, epoch: usize, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base ^ 0x9e37_79b9_7f4a_7c15);
    rng.set_stream(((epoch as u64) << 32) | index as u64);
    rng.gen()
}

pub fn augment_clip(clip: &GarClip, cfg: &AugmentConfig, on: AugmentToggles, seed: u64) -> Result<GarClip, AugmentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = clip.clone();
    if on.spatial && rng.gen_bool(cfg.flip_prob) {
        out = flip_clip(&out);
    }
    if on.temporal {
        let (m, e) = (rng.gen(), rng.gen());
        if cfg.mask_ratio > 0.0 {
            out = mask_clip(&out, cfg.mask_ratio, m);
        }
        if cfg.keep_fraction < 1.0 && out.frames() >= 2 {
            out = extract_clip(&out, cfg.keep_fraction, e)?;
        }
    }
    Ok(out)
}

pub fn augment_round(round: &TgalRound, cfg: &AugmentConfig, on: AugmentToggles, seed: u64) -> Result<TgalRound, AugmentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = round.clone();
    if on.spatial && rng.gen_bool(cfg.flip_prob) {
        out = flip_round(&out);
    }
    if on.temporal {
        let (m, e) = (rng.gen(), rng.gen());
        if cfg.mask_ratio > 0.0 {
            out = mask_round(&out, cfg.mask_ratio, m);
        }
        if cfg.keep_fraction < 1.0 {
            out = extract_round(&out, cfg.keep_fraction, e)?;
        }
    }
    Ok(out)
}
