//! Deterministic procedural tactic data.
//!
//! A round is planned first (categories, durations, jittered scripts,
//! transitions) and then rendered (defense, skeletons, noise). Both phases
//! draw from one ChaCha stream per round, so [`plan_corpus`] reproduces the
//! labels of [`generate_corpus`] without rendering any joints.

mod script;
mod skeleton;

use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

pub use script::{script_for, TacticScript, Track, HOOP_Y, SCRIPTED};
pub use skeleton::{Gait, BODY_HEIGHT};

use crate::data::{
    save_round, ActivityInstance, BallCarrier, DataError, GarClip, SkeletonSequence, TgalRound, DEFAULT_FPS,
    NUM_COORDS, NUM_JOINTS, NUM_PERSONS,
};
use crate::par::{self, Parallelism};

pub const MAX_ROUND_FRAMES: usize = 800;
pub const MIN_ACTIVITY_FRAMES: usize = 30;
pub const TRANSITION_RANGE: (usize, usize) = (20, 60);
/// Defenders trail their attacker by this many frames.
pub const DEFENSE_LAG: usize = 10;
/// Defenders stand this far from their attacker, toward the hoop.
pub const DEFENSE_GAP: f64 = 1.0;
/// Ground positions are kept this far inside the court lines.
pub const INNER_MARGIN: f64 = 1.0;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
    #[error("no script for category {0}")]
    UnknownCategory(usize),
    #[error("{requested} activities do not fit into {budget} frames")]
    Budget { requested: usize, budget: usize },
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenParams {
    pub seed: u64,
    /// Per-joint Gaussian noise, meters.
    pub noise_sigma: f64,
    /// Uniform waypoint perturbation half-width, meters.
    pub waypoint_jitter: f64,
    pub gait_amplitude: f64,
    /// Stride cycles per meter.
    pub gait_frequency: f64,
    /// Sampling weights indexed by category id.
    pub category_weights: Vec<f64>,
    pub shuffle_persons: bool,
    pub fps: u32,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            seed: 0,
            noise_sigma: 0.01,
            waypoint_jitter: 0.4,
            gait_amplitude: 0.45,
            gait_frequency: 0.7,
            category_weights: vec![1.0 / SCRIPTED as f64; SCRIPTED],
            shuffle_persons: true,
            fps: DEFAULT_FPS,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidParams(m));
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} must be >= 0", self.noise_sigma));
        }
        if !(self.waypoint_jitter >= 0.0 && self.waypoint_jitter.is_finite()) {
            return bad(format!("waypoint_jitter {} must be >= 0", self.waypoint_jitter));
        }
        if self.category_weights.is_empty() || self.category_weights.iter().any(|w| !(*w >= 0.0)) {
            return bad("category_weights must be non-empty and non-negative".into());
        }
        let sum: f64 = self.category_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return bad(format!("category_weights sum to {sum}, not 1"));
        }
        if self.fps == 0 {
            return bad("fps must be positive".into());
        }
        for (c, &w) in self.category_weights.iter().enumerate() {
            if w > 0.0 {
                script_for(c)?;
            }
        }
        Ok(())
    }

    /// Uniform weights over the first `n` categories.
    pub fn uniform_weights(n: usize) -> Vec<f64> {
        vec![1.0 / n as f64; n]
    }

    /// Geometric long-tail weights `∝ decay^c` over `n` categories.
    pub fn long_tail_weights(n: usize, decay: f64) -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|c| decay.powi(c as i32)).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / s).collect()
    }

    fn gait(&self) -> Gait {
        Gait {
            amplitude: self.gait_amplitude,
            frequency: self.gait_frequency,
        }
    }
}

/// The generator stream for round `index` under `seed`.
pub fn round_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Clone, Debug)]
enum Segment {
    Activity(TacticScript, usize),
    /// Wander toward `target` (or toward the next activity's start).
    Transition(usize, Option<[[f64; 2]; 3]>),
}

#[derive(Clone, Debug)]
struct RoundPlan {
    segments: Vec<Segment>,
    start: [[f64; 2]; 3],
}

impl RoundPlan {
    fn frames(&self) -> usize {
        self.segments
            .iter()
            .map(|s| match s {
                Segment::Activity(_, d) | Segment::Transition(d, _) => *d,
            })
            .sum()
    }

    fn instances(&self) -> Vec<ActivityInstance> {
        let mut t = 0;
        let mut out = Vec::new();
        for s in &self.segments {
            match s {
                Segment::Activity(sc, d) => {
                    out.push(ActivityInstance {
                        start: t,
                        end: t + d - 1,
                        category: sc.category,
                    });
                    t += d;
                }
                Segment::Transition(d, _) => t += d,
            }
        }
        out
    }
}

fn wander_positions<R: Rng>(rng: &mut R) -> [[f64; 2]; 3] {
    [0, 1, 2].map(|_| [rng.gen_range(-5.0..5.0), rng.gen_range(-3.5..3.5)])
}

fn plan_activity<R: Rng>(rng: &mut R, category: usize, cap: usize, params: &GenParams) -> Result<Segment, SynthError> {
    let script = script_for(category)?;
    let (lo, hi) = script.duration;
    let d = rng.gen_range(lo..=hi).min(cap).max(MIN_ACTIVITY_FRAMES);
    Ok(Segment::Activity(script.jittered(rng, params.waypoint_jitter), d))
}

fn sample_category<R: Rng>(rng: &mut R, params: &GenParams) -> Result<usize, SynthError> {
    let dist = WeightedIndex::new(&params.category_weights).map_err(|e| SynthError::InvalidParams(e.to_string()))?;
    Ok(dist.sample(rng))
}

fn plan_clip<R: Rng>(rng: &mut R, category: usize, params: &GenParams) -> Result<RoundPlan, SynthError> {
    let seg = plan_activity(rng, category, usize::MAX, params)?;
    let start = match &seg {
        Segment::Activity(s, _) => s.start_positions(),
        Segment::Transition(..) => unreachable!(),
    };
    Ok(RoundPlan {
        segments: vec![seg],
        start,
    })
}

fn plan_round<R: Rng>(rng: &mut R, categories: &[usize], params: &GenParams) -> Result<RoundPlan, SynthError> {
    let n = categories.len();
    let (tmin, tmax) = TRANSITION_RANGE;
    let budget = MAX_ROUND_FRAMES;
    if n == 0 || n * MIN_ACTIVITY_FRAMES + (n + 1) * tmin > budget {
        return Err(SynthError::Budget { requested: n, budget });
    }
    let trans_cap = (budget - n * MIN_ACTIVITY_FRAMES) / (n + 1);
    let trans: Vec<usize> = (0..=n).map(|_| rng.gen_range(tmin..=tmax).min(trans_cap)).collect();
    let cap = (budget - trans.iter().sum::<usize>()) / n;
    let start = wander_positions(rng);
    let mut segments = Vec::with_capacity(2 * n + 1);
    for (i, &c) in categories.iter().enumerate() {
        segments.push(Segment::Transition(trans[i], None));
        segments.push(plan_activity(rng, c, cap, params)?);
    }
    segments.push(Segment::Transition(trans[n], Some(wander_positions(rng))));
    Ok(RoundPlan { segments, start })
}

fn clamp_inner(p: [f64; 2]) -> [f64; 2] {
    let b = crate::data::CourtBounds::default();
    let (hx, hy) = (b.half_width - INNER_MARGIN, b.half_depth - INNER_MARGIN);
    [p[0].clamp(-hx, hx), p[1].clamp(-hy, hy)]
}

/// Ground tracks of the three attackers plus per-frame possession.
fn attacker_tracks(plan: &RoundPlan) -> ([Vec<[f64; 2]>; 3], Vec<Option<usize>>) {
    let total = plan.frames();
    let mut tracks: [Vec<[f64; 2]>; 3] = Default::default();
    let mut carrier = Vec::with_capacity(total);
    let mut cur = plan.start;
    for (k, seg) in plan.segments.iter().enumerate() {
        match seg {
            Segment::Activity(sc, d) => {
                for i in 0..*d {
                    let s = if *d > 1 { i as f64 / (*d - 1) as f64 } else { 0.0 };
                    for (a, tr) in tracks.iter_mut().enumerate() {
                        tr.push(sc.position(a, s));
                    }
                    carrier.push(sc.carrier(s));
                }
                cur = sc.end_positions();
            }
            Segment::Transition(len, target) => {
                let (goal, holder) = match target {
                    Some(t) => (*t, carrier.last().copied().flatten()),
                    None => match plan.segments.get(k + 1) {
                        Some(Segment::Activity(next, _)) => (next.start_positions(), next.carrier(0.0)),
                        _ => (cur, None),
                    },
                };
                for i in 0..*len {
                    let u = (i + 1) as f64 / (*len + 1) as f64;
                    let w = u * u * (3.0 - 2.0 * u);
                    for (a, tr) in tracks.iter_mut().enumerate() {
                        tr.push([cur[a][0] + w * (goal[a][0] - cur[a][0]), cur[a][1] + w * (goal[a][1] - cur[a][1])]);
                    }
                    carrier.push(holder);
                }
                cur = goal;
            }
        }
    }
    for tr in &mut tracks {
        for p in tr.iter_mut() {
            *p = clamp_inner(*p);
        }
    }
    (tracks, carrier)
}

fn defender_track(attacker: &[[f64; 2]]) -> Vec<[f64; 2]> {
    (0..attacker.len())
        .map(|t| {
            let o = attacker[t.saturating_sub(DEFENSE_LAG)];
            let to_hoop = [-o[0], HOOP_Y - o[1]];
            let len = to_hoop[0].hypot(to_hoop[1]);
            let p = if len > 1e-9 {
                [o[0] + DEFENSE_GAP * to_hoop[0] / len, o[1] + DEFENSE_GAP * to_hoop[1] / len]
            } else {
                o
            };
            clamp_inner(p)
        })
        .collect()
}

struct Rendered {
    sequence: SkeletonSequence,
    ball: BallCarrier,
    team: Vec<bool>,
}

fn render<R: Rng>(rng: &mut R, plan: &RoundPlan, params: &GenParams) -> Result<Rendered, SynthError> {
    let (att, carrier) = attacker_tracks(plan);
    let frames = carrier.len();
    let mut agents: Vec<Vec<[f64; 2]>> = att.to_vec();
    for a in 0..3 {
        agents.push(defender_track(&att[a]));
    }
    let mut perm: Vec<usize> = (0..NUM_PERSONS).collect();
    if params.shuffle_persons {
        perm.shuffle(rng);
    }
    let noise = Normal::new(0.0, params.noise_sigma).map_err(|e| SynthError::InvalidParams(e.to_string()))?;
    let fps = params.fps as f64;
    let mut seq = SkeletonSequence::zeros(frames, NUM_PERSONS, NUM_JOINTS, NUM_COORDS, params.fps);
    let mut joints = Vec::with_capacity(frames * NUM_JOINTS);
    for (person, &agent) in perm.iter().enumerate() {
        let root = &agents[agent];
        let facing = (HOOP_Y - root[0][1]).atan2(-root[0][0]);
        joints.clear();
        skeleton::render_track(root, fps, params.gait(), facing, &mut joints);
        for t in 0..frames {
            seq.set_valid(t, person, true);
            for j in 0..NUM_JOINTS {
                let p = joints[t * NUM_JOINTS + j];
                let out = seq.joint_mut(t, person, j);
                for c in 0..NUM_COORDS {
                    let e = if params.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
                    out[c] = (p[c] + e) as f32;
                }
            }
        }
    }
    let mut inv = [0usize; NUM_PERSONS];
    for (person, &agent) in perm.iter().enumerate() {
        inv[agent] = person;
    }
    let carriers: Vec<Option<usize>> = carrier.iter().map(|c| c.map(|a| inv[a])).collect();
    Ok(Rendered {
        sequence: seq,
        ball: BallCarrier::from_carriers(&carriers, NUM_PERSONS),
        team: perm.iter().map(|&a| a < 3).collect(),
    })
}

fn clip_from(rng: &mut ChaCha8Rng, category: usize, params: &GenParams, id: String) -> Result<GarClip, SynthError> {
    let plan = plan_clip(rng, category, params)?;
    let r = render(rng, &plan, params)?;
    Ok(GarClip {
        clip_id: id,
        sequence: r.sequence,
        category,
        ball: r.ball,
        team: r.team,
    })
}

/// One trimmed clip of `category`, drawn from stream 0 of `params.seed`.
pub fn generate_gar_clip(category: usize, params: &GenParams) -> Result<GarClip, SynthError> {
    params.validate()?;
    script_for(category)?;
    clip_from(&mut round_rng(params.seed, 0), category, params, format!("clip-{category}"))
}

fn tgal_from(rng: &mut ChaCha8Rng, categories: &[usize], params: &GenParams, id: String) -> Result<TgalRound, SynthError> {
    let plan = plan_round(rng, categories, params)?;
    let r = render(rng, &plan, params)?;
    Ok(TgalRound {
        round_id: id,
        instances: plan.instances(),
        sequence: r.sequence,
        ball: r.ball,
        team: r.team,
    })
}

/// An untrimmed round of `n_activities` weighted-random activities
/// separated by unlabeled transitions.
pub fn generate_tgal_round(params: &GenParams, n_activities: usize) -> Result<TgalRound, SynthError> {
    params.validate()?;
    let mut rng = round_rng(params.seed, 0);
    let cats = (0..n_activities)
        .map(|_| sample_category(&mut rng, params))
        .collect::<Result<Vec<_>, _>>()?;
    tgal_from(&mut rng, &cats, params, "round".into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusKind {
    /// One trimmed clip per round file, annotated as a single full-length
    /// instance.
    Gar,
    /// Untrimmed rounds holding `1..=max_activities` activities.
    Tgal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRound {
    pub round_id: String,
    pub stream: u64,
    pub frames: usize,
    pub instances: Vec<ActivityInstance>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub kind: CorpusKind,
    pub rounds: Vec<ManifestRound>,
}

impl Manifest {
    pub fn category_histogram(&self, num_classes: usize) -> Vec<usize> {
        let mut h = vec![0; num_classes];
        for r in &self.rounds {
            for i in &r.instances {
                h[i.category] += 1;
            }
        }
        h
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(path).map_err(|e| DataError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        toml::from_str(&text).map_err(|e| DataError::Malformed {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
    }
}

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const ROUNDS_DIR: &str = "rounds";
pub const DEFAULT_MAX_ACTIVITIES: usize = 3;

fn round_id(kind: CorpusKind, i: usize) -> String {
    match kind {
        CorpusKind::Gar => format!("gar{i:05}"),
        CorpusKind::Tgal => format!("tgal{i:05}"),
    }
}

fn round_categories(rng: &mut ChaCha8Rng, kind: CorpusKind, max_activities: usize, params: &GenParams) -> Result<Vec<usize>, SynthError> {
    let n = match kind {
        CorpusKind::Gar => 1,
        CorpusKind::Tgal => rng.gen_range(1..=max_activities.max(1)),
    };
    (0..n).map(|_| sample_category(rng, params)).collect()
}

fn corpus_round(params: &GenParams, kind: CorpusKind, max_activities: usize, i: usize, render_it: bool) -> Result<(ManifestRound, Option<TgalRound>), SynthError> {
    let mut rng = round_rng(params.seed, i as u64);
    let cats = round_categories(&mut rng, kind, max_activities, params)?;
    let id = round_id(kind, i);
    let plan = match kind {
        CorpusKind::Gar => plan_clip(&mut rng, cats[0], params)?,
        CorpusKind::Tgal => plan_round(&mut rng, &cats, params)?,
    };
    let entry = ManifestRound {
        round_id: id.clone(),
        stream: i as u64,
        frames: plan.frames(),
        instances: plan.instances(),
    };
    if !render_it {
        return Ok((entry, None));
    }
    let r = render(&mut rng, &plan, params)?;
    let round = TgalRound {
        round_id: id,
        sequence: r.sequence,
        instances: entry.instances.clone(),
        ball: r.ball,
        team: r.team,
    };
    Ok((entry, Some(round)))
}

/// Labels of the corpus [`generate_corpus`] would write, without rendering.
pub fn plan_corpus(params: &GenParams, kind: CorpusKind, n_rounds: usize, max_activities: usize) -> Result<Manifest, SynthError> {
    params.validate()?;
    let rounds = (0..n_rounds)
        .map(|i| corpus_round(params, kind, max_activities, i, false).map(|r| r.0))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Manifest {
        seed: params.seed,
        kind,
        rounds,
    })
}

/// Generates rounds in memory, one ChaCha stream per round index.
pub fn generate_rounds(
    params: &GenParams,
    kind: CorpusKind,
    n_rounds: usize,
    max_activities: usize,
    mode: Parallelism,
) -> Result<(Manifest, Vec<TgalRound>), SynthError> {
    params.validate()?;
    let out = par::try_map_range(mode, n_rounds, |i| corpus_round(params, kind, max_activities, i, true))?;
    let mut rounds = Vec::with_capacity(n_rounds);
    let mut entries = Vec::with_capacity(n_rounds);
    for (e, r) in out {
        entries.push(e);
        rounds.push(r.expect("rendered"));
    }
    Ok((
        Manifest {
            seed: params.seed,
            kind,
            rounds: entries,
        },
        rounds,
    ))
}

/// Writes `rounds/<id>.{toml,sgai}` and `manifest.toml` under `dir`.
pub fn generate_corpus(
    params: &GenParams,
    kind: CorpusKind,
    n_rounds: usize,
    max_activities: usize,
    dir: &Path,
    mode: Parallelism,
) -> Result<Manifest, SynthError> {
    let (manifest, rounds) = generate_rounds(params, kind, n_rounds, max_activities, mode)?;
    let rdir = dir.join(ROUNDS_DIR);
    for r in &rounds {
        save_round(r, &rdir)?;
    }
    let text = toml::to_string(&manifest).map_err(|e| SynthError::InvalidParams(e.to_string()))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(manifest)
}

/// Loads every round listed in a corpus manifest, in manifest order.
pub fn load_corpus(dir: &Path, mode: Parallelism) -> Result<(Manifest, Vec<TgalRound>), DataError> {
    let manifest = Manifest::load(&dir.join(MANIFEST_FILE))?;
    let rdir = dir.join(ROUNDS_DIR);
    let rounds = par::try_map_range(mode, manifest.rounds.len(), |i| {
        crate::data::load_round(&rdir.join(format!("{}.{}", manifest.rounds[i].round_id, crate::data::ROUND_META_EXT)))
    })?;
    Ok((manifest, rounds))
}

#[cfg(test)]
mod tests;
