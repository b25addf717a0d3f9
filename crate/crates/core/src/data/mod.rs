//! Skeleton sequences, activity annotations, vocabulary, splits, and the
//! on-disk round format.
//!
//! Coordinates are meters in a court-centered frame: origin at the court
//! center, x along the baseline, y toward the far side, z up.

mod io;
mod split;
mod vocab;

pub use io::{load_round, load_round_with, read_tensor_file, save_round, write_tensor_file, ROUND_META_EXT, ROUND_TENSOR_EXT};
pub use split::{make_split, SplitSpec};
pub use vocab::{Category, Vocabulary, DEFAULT_NUM_CLASSES};

pub const NUM_JOINTS: usize = 17;
pub const NUM_PERSONS: usize = 6;
pub const NUM_COORDS: usize = 3;
pub const DEFAULT_FPS: u32 = 50;
pub const OFFENSE_SIZE: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: malformed: {msg}")]
    Malformed { path: String, msg: String },
    #[error("{field}: dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch {
        field: String,
        expected: usize,
        found: usize,
    },
    #[error("{field}: non-finite value at flat index {index}")]
    NonFinite { field: String, index: usize },
    #[error("{field}: {msg}")]
    Invariant { field: String, msg: String },
    #[error("sequence of {frames} frames exceeds target length {target}")]
    Overflow { frames: usize, target: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) fn invariant(field: impl Into<String>, msg: impl Into<String>) -> DataError {
    DataError::Invariant {
        field: field.into(),
        msg: msg.into(),
    }
}

/// Court extent used for validation and filtering.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CourtBounds {
    /// Half of the baseline width (x extent), meters.
    pub half_width: f64,
    /// Half of the court depth (y extent), meters.
    pub half_depth: f64,
    /// Slack allowed outside the lines.
    pub margin: f64,
}

impl Default for CourtBounds {
    fn default() -> Self {
        Self {
            half_width: 7.5,
            half_depth: 5.5,
            margin: 0.5,
        }
    }
}

impl CourtBounds {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x.abs() <= self.half_width + self.margin && y.abs() <= self.half_depth + self.margin
    }

    /// Same check without the margin.
    pub fn contains_strict(&self, x: f64, y: f64) -> bool {
        x.abs() <= self.half_width && y.abs() <= self.half_depth
    }
}

/// Dense `T × N × J × C` joint coordinates with a `T × N` validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence {
    frames: usize,
    persons: usize,
    joints: usize,
    channels: usize,
    data: Vec<f32>,
    valid: Vec<bool>,
    pub fps: u32,
}

impl SkeletonSequence {
    pub fn new(
        dims: [usize; 4],
        data: Vec<f32>,
        valid: Vec<bool>,
        fps: u32,
    ) -> Result<Self, DataError> {
        let [t, n, j, c] = dims;
        if data.len() != t * n * j * c {
            return Err(DataError::DimensionMismatch {
                field: "sequence.data".into(),
                expected: t * n * j * c,
                found: data.len(),
            });
        }
        if valid.len() != t * n {
            return Err(DataError::DimensionMismatch {
                field: "sequence.valid".into(),
                expected: t * n,
                found: valid.len(),
            });
        }
        Ok(Self {
            frames: t,
            persons: n,
            joints: j,
            channels: c,
            data,
            valid,
            fps,
        })
    }

    pub fn zeros(frames: usize, persons: usize, joints: usize, channels: usize, fps: u32) -> Self {
        Self {
            frames,
            persons,
            joints,
            channels,
            data: vec![0.0; frames * persons * joints * channels],
            valid: vec![false; frames * persons],
            fps,
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn persons(&self) -> usize {
        self.persons
    }
    pub fn joints(&self) -> usize {
        self.joints
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn dims(&self) -> [usize; 4] {
        [self.frames, self.persons, self.joints, self.channels]
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn is_valid(&self, t: usize, n: usize) -> bool {
        self.valid[t * self.persons + n]
    }

    pub fn set_valid(&mut self, t: usize, n: usize, v: bool) {
        self.valid[t * self.persons + n] = v;
    }

    fn offset(&self, t: usize, n: usize, j: usize) -> usize {
        ((t * self.persons + n) * self.joints + j) * self.channels
    }

    pub fn joint(&self, t: usize, n: usize, j: usize) -> &[f32] {
        let o = self.offset(t, n, j);
        &self.data[o..o + self.channels]
    }

    pub fn joint_mut(&mut self, t: usize, n: usize, j: usize) -> &mut [f32] {
        let o = self.offset(t, n, j);
        &mut self.data[o..o + self.channels]
    }

    /// All joints of one person in one frame, `J × C` values.
    pub fn pose(&self, t: usize, n: usize) -> &[f32] {
        let o = self.offset(t, n, 0);
        &self.data[o..o + self.joints * self.channels]
    }

    pub fn pose_mut(&mut self, t: usize, n: usize) -> &mut [f32] {
        let o = self.offset(t, n, 0);
        let len = self.joints * self.channels;
        &mut self.data[o..o + len]
    }

    /// Frames `[start, end)` as a new sequence.
    pub fn slice_frames(&self, start: usize, end: usize) -> Self {
        let per = self.persons * self.joints * self.channels;
        Self {
            frames: end - start,
            persons: self.persons,
            joints: self.joints,
            channels: self.channels,
            data: self.data[start * per..end * per].to_vec(),
            valid: self.valid[start * self.persons..end * self.persons].to_vec(),
            fps: self.fps,
        }
    }

    /// Keeps the listed source frames, in order.
    pub fn select_frames(&self, frames: &[usize]) -> Self {
        let per = self.persons * self.joints * self.channels;
        let mut data = Vec::with_capacity(frames.len() * per);
        let mut valid = Vec::with_capacity(frames.len() * self.persons);
        for &f in frames {
            data.extend_from_slice(&self.data[f * per..(f + 1) * per]);
            valid.extend_from_slice(&self.valid[f * self.persons..(f + 1) * self.persons]);
        }
        Self {
            frames: frames.len(),
            data,
            valid,
            ..*self
        }
    }

    /// Zero-padded to `target` frames; padding frames are marked invalid.
    pub fn padded(&self, target: usize) -> Result<Self, DataError> {
        if self.frames > target {
            return Err(DataError::Overflow {
                frames: self.frames,
                target,
            });
        }
        let per = self.persons * self.joints * self.channels;
        let mut out = self.clone();
        out.frames = target;
        out.data.resize(target * per, 0.0);
        out.valid.resize(target * self.persons, false);
        Ok(out)
    }

    /// Shape and payload checks for dataset-conformant sequences.
    pub fn validate(&self, bounds: &CourtBounds) -> Result<(), DataError> {
        if self.persons != NUM_PERSONS {
            return Err(DataError::DimensionMismatch {
                field: "sequence.persons".into(),
                expected: NUM_PERSONS,
                found: self.persons,
            });
        }
        if self.joints != NUM_JOINTS {
            return Err(DataError::DimensionMismatch {
                field: "sequence.joints".into(),
                expected: NUM_JOINTS,
                found: self.joints,
            });
        }
        if self.channels != NUM_COORDS {
            return Err(DataError::DimensionMismatch {
                field: "sequence.channels".into(),
                expected: NUM_COORDS,
                found: self.channels,
            });
        }
        if let Some(index) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite {
                field: "sequence.data".into(),
                index,
            });
        }
        for t in 0..self.frames {
            for n in 0..self.persons {
                if !self.is_valid(t, n) {
                    continue;
                }
                for j in 0..self.joints {
                    let p = self.joint(t, n, j);
                    if !bounds.contains(p[0] as f64, p[1] as f64) {
                        return Err(invariant(
                            format!("sequence[{t}][{n}][{j}]"),
                            format!("joint ({}, {}) outside court bounds", p[0], p[1]),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// One labeled group activity `[start, end]` (inclusive frame indices).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct ActivityInstance {
    pub start: usize,
    pub end: usize,
    pub category: usize,
}

impl ActivityInstance {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Per-frame, per-person ball possession (`T × N`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BallCarrier {
    persons: usize,
    flags: Vec<bool>,
}

impl BallCarrier {
    pub fn none(frames: usize, persons: usize) -> Self {
        Self {
            persons,
            flags: vec![false; frames * persons],
        }
    }

    /// Builds from one optional carrier index per frame.
    pub fn from_carriers(carriers: &[Option<usize>], persons: usize) -> Self {
        let mut b = Self::none(carriers.len(), persons);
        for (t, c) in carriers.iter().enumerate() {
            if let Some(p) = c {
                b.flags[t * persons + p] = true;
            }
        }
        b
    }

    pub fn frames(&self) -> usize {
        self.flags.len() / self.persons.max(1)
    }

    pub fn persons(&self) -> usize {
        self.persons
    }

    pub fn get(&self, t: usize, n: usize) -> bool {
        self.flags[t * self.persons + n]
    }

    pub fn set(&mut self, t: usize, n: usize, v: bool) {
        self.flags[t * self.persons + n] = v;
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    /// Carrier of frame `t`, if exactly one person holds the ball.
    pub fn carrier(&self, t: usize) -> Option<usize> {
        (0..self.persons).find(|&n| self.get(t, n))
    }

    pub fn carriers_per_frame(&self) -> impl Iterator<Item = usize> + '_ {
        self.flags.chunks(self.persons).map(|row| row.iter().filter(|&&b| b).count())
    }

    pub fn slice_frames(&self, start: usize, end: usize) -> Self {
        Self {
            persons: self.persons,
            flags: self.flags[start * self.persons..end * self.persons].to_vec(),
        }
    }

    pub fn select_frames(&self, frames: &[usize]) -> Self {
        let mut flags = Vec::with_capacity(frames.len() * self.persons);
        for &f in frames {
            flags.extend_from_slice(&self.flags[f * self.persons..(f + 1) * self.persons]);
        }
        Self {
            persons: self.persons,
            flags,
        }
    }

    pub fn padded(&self, target: usize) -> Self {
        let mut flags = self.flags.clone();
        flags.resize(target * self.persons, false);
        Self {
            persons: self.persons,
            flags,
        }
    }

    fn validate(&self, frames: usize, persons: usize) -> Result<(), DataError> {
        if self.persons != persons || self.flags.len() != frames * persons {
            return Err(DataError::DimensionMismatch {
                field: "ball_carrier".into(),
                expected: frames * persons,
                found: self.flags.len(),
            });
        }
        if let Some(t) = self.carriers_per_frame().position(|c| c > 1) {
            return Err(invariant(format!("ball_carrier[{t}]"), "more than one ball carrier"));
        }
        Ok(())
    }
}

fn validate_team(team: &[bool], persons: usize) -> Result<(), DataError> {
    if team.len() != persons {
        return Err(DataError::DimensionMismatch {
            field: "team".into(),
            expected: persons,
            found: team.len(),
        });
    }
    let offense = team.iter().filter(|&&b| b).count();
    if offense != OFFENSE_SIZE {
        return Err(invariant("team", format!("{offense} offensive players, expected {OFFENSE_SIZE}")));
    }
    Ok(())
}

/// An untrimmed game round with its activity instances.
#[derive(Clone, Debug, PartialEq)]
pub struct TgalRound {
    pub round_id: String,
    pub sequence: SkeletonSequence,
    pub instances: Vec<ActivityInstance>,
    pub ball: BallCarrier,
    pub team: Vec<bool>,
}

impl TgalRound {
    pub fn frames(&self) -> usize {
        self.sequence.frames()
    }

    pub fn validate(&self, bounds: &CourtBounds, num_classes: usize) -> Result<(), DataError> {
        self.sequence.validate(bounds)?;
        let t = self.frames();
        for (i, inst) in self.instances.iter().enumerate() {
            if inst.start > inst.end || inst.end >= t {
                return Err(invariant(
                    format!("instances[{i}]"),
                    format!("[{}, {}] not within [0, {t})", inst.start, inst.end),
                ));
            }
            if inst.category >= num_classes {
                return Err(invariant(
                    format!("instances[{i}].category"),
                    format!("{} not below {num_classes}", inst.category),
                ));
            }
            if i > 0 && self.instances[i - 1].start > inst.start {
                return Err(invariant(format!("instances[{i}].start"), "instances not sorted by start"));
            }
        }
        self.ball.validate(t, self.sequence.persons())?;
        validate_team(&self.team, self.sequence.persons())
    }

    /// One trimmed clip per instance (`end − start + 1` frames each).
    pub fn trim_to_gar_clips(&self) -> Vec<GarClip> {
        self.instances
            .iter()
            .enumerate()
            .map(|(i, inst)| GarClip {
                clip_id: format!("{}#{i}", self.round_id),
                sequence: self.sequence.slice_frames(inst.start, inst.end + 1),
                category: inst.category,
                ball: self.ball.slice_frames(inst.start, inst.end + 1),
                team: self.team.clone(),
            })
            .collect()
    }

    /// Round padded to `target` frames (annotations unchanged).
    pub fn padded(&self, target: usize) -> Result<Self, DataError> {
        Ok(Self {
            sequence: self.sequence.padded(target)?,
            ball: self.ball.padded(target),
            ..self.clone()
        })
    }
}

/// A trimmed single-activity clip.
#[derive(Clone, Debug, PartialEq)]
pub struct GarClip {
    pub clip_id: String,
    pub sequence: SkeletonSequence,
    pub category: usize,
    pub ball: BallCarrier,
    pub team: Vec<bool>,
}

impl GarClip {
    pub fn frames(&self) -> usize {
        self.sequence.frames()
    }

    pub fn padded(&self, target: usize) -> Result<Self, DataError> {
        Ok(Self {
            sequence: self.sequence.padded(target)?,
            ball: self.ball.padded(target),
            ..self.clone()
        })
    }

    pub fn validate(&self, bounds: &CourtBounds, num_classes: usize) -> Result<(), DataError> {
        self.sequence.validate(bounds)?;
        if self.category >= num_classes {
            return Err(invariant("category", format!("{} not below {num_classes}", self.category)));
        }
        self.ball.validate(self.frames(), self.sequence.persons())?;
        validate_team(&self.team, self.sequence.persons())
    }
}

/// Pads a sequence to `target` frames; the validity mask marks padding.
pub fn pad_sequence(seq: &SkeletonSequence, target: usize) -> Result<SkeletonSequence, DataError> {
    seq.padded(target)
}
