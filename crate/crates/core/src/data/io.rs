//! Round files: a TOML metadata document plus a sibling binary tensor.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ActivityInstance, BallCarrier, CourtBounds, DataError, SkeletonSequence, TgalRound, Vocabulary};

pub const ROUND_META_EXT: &str = "toml";
pub const ROUND_TENSOR_EXT: &str = "sgai";
const MAGIC: &[u8; 4] = b"SGAI";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoundMeta {
    round_id: String,
    fps: u32,
    tensor: String,
    team: Vec<u8>,
    /// `[start, length, person]`, person −1 for no carrier.
    ball_runs: Vec<[i64; 3]>,
    #[serde(default)]
    instances: Vec<ActivityInstance>,
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn malformed(path: &Path, msg: impl Into<String>) -> DataError {
    DataError::Malformed {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

pub fn write_tensor_file(path: &Path, seq: &SkeletonSequence) -> Result<(), DataError> {
    let mut buf = Vec::with_capacity(24 + seq.data().len() * 4 + seq.validity().len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for d in seq.dims() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in seq.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend(seq.validity().iter().map(|&b| b as u8));
    fs::write(path, buf).map_err(|e| io_err(path, e))
}

pub fn read_tensor_file(path: &Path, fps: u32) -> Result<SkeletonSequence, DataError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() < 24 || &bytes[..4] != MAGIC {
        return Err(malformed(path, "missing SGAI header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    if word(0) != VERSION {
        return Err(malformed(path, format!("unsupported version {}", word(0))));
    }
    let dims = [word(1) as usize, word(2) as usize, word(3) as usize, word(4) as usize];
    let count = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| malformed(path, "dimension product overflows"))?;
    let tn = dims[0] * dims[1];
    let expected = 24 + count * 4 + tn;
    if bytes.len() != expected {
        return Err(DataError::DimensionMismatch {
            field: format!("{}: payload bytes", path.display()),
            expected,
            found: bytes.len(),
        });
    }
    let data: Vec<f32> = bytes[24..24 + count * 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut valid = Vec::with_capacity(tn);
    for (i, &b) in bytes[24 + count * 4..].iter().enumerate() {
        match b {
            0 => valid.push(false),
            1 => valid.push(true),
            _ => return Err(malformed(path, format!("validity byte {i} is {b}"))),
        }
    }
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(DataError::NonFinite {
            field: format!("{}: data", path.display()),
            index,
        });
    }
    SkeletonSequence::new(dims, data, valid, fps)
}

fn encode_runs(ball: &BallCarrier) -> Vec<[i64; 3]> {
    let mut runs: Vec<[i64; 3]> = Vec::new();
    for t in 0..ball.frames() {
        let who = ball.carrier(t).map_or(-1, |p| p as i64);
        match runs.last_mut() {
            Some(r) if r[2] == who => r[1] += 1,
            _ => runs.push([t as i64, 1, who]),
        }
    }
    runs
}

fn decode_runs(runs: &[[i64; 3]], frames: usize, persons: usize, path: &Path) -> Result<BallCarrier, DataError> {
    let mut ball = BallCarrier::none(frames, persons);
    let mut next = 0i64;
    for (i, &[start, len, who]) in runs.iter().enumerate() {
        if start != next || len < 1 {
            return Err(malformed(path, format!("ball_runs[{i}] does not continue the previous run")));
        }
        if who < -1 || who >= persons as i64 {
            return Err(malformed(path, format!("ball_runs[{i}] person {who} out of range")));
        }
        next = start + len;
        if next > frames as i64 {
            return Err(malformed(path, format!("ball_runs[{i}] extends past frame {frames}")));
        }
        if who >= 0 {
            for t in start..next {
                ball.set(t as usize, who as usize, true);
            }
        }
    }
    if next != frames as i64 {
        return Err(malformed(path, format!("ball_runs cover {next} of {frames} frames")));
    }
    Ok(ball)
}

/// Writes `<round_id>.toml` and `<round_id>.sgai` into `dir`; returns the
/// metadata path.
pub fn save_round(round: &TgalRound, dir: &Path) -> Result<PathBuf, DataError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let tensor = format!("{}.{ROUND_TENSOR_EXT}", round.round_id);
    let meta = RoundMeta {
        round_id: round.round_id.clone(),
        fps: round.sequence.fps,
        tensor: tensor.clone(),
        team: round.team.iter().map(|&b| b as u8).collect(),
        ball_runs: encode_runs(&round.ball),
        instances: round.instances.clone(),
    };
    let text = toml::to_string(&meta).map_err(|e| malformed(dir, e.to_string()))?;
    let meta_path = dir.join(format!("{}.{ROUND_META_EXT}", round.round_id));
    fs::write(&meta_path, text).map_err(|e| io_err(&meta_path, e))?;
    write_tensor_file(&dir.join(tensor), &round.sequence)?;
    Ok(meta_path)
}

/// Loads and validates a round against default court bounds and the full
/// vocabulary size.
pub fn load_round(path: &Path) -> Result<TgalRound, DataError> {
    load_round_with(path, &CourtBounds::default(), Vocabulary::full().len())
}

pub fn load_round_with(path: &Path, bounds: &CourtBounds, num_classes: usize) -> Result<TgalRound, DataError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let meta: RoundMeta = toml::from_str(&text).map_err(|e| malformed(path, e.to_string()))?;
    let tensor_path = path.parent().unwrap_or(Path::new(".")).join(&meta.tensor);
    let sequence = read_tensor_file(&tensor_path, meta.fps)?;
    let [t, n, ..] = sequence.dims();
    if meta.team.len() != n {
        return Err(DataError::DimensionMismatch {
            field: "team".into(),
            expected: n,
            found: meta.team.len(),
        });
    }
    let team = meta
        .team
        .iter()
        .enumerate()
        .map(|(i, &b)| match b {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(malformed(path, format!("team[{i}] is {b}"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let round = TgalRound {
        round_id: meta.round_id,
        ball: decode_runs(&meta.ball_runs, t, n, path)?,
        sequence,
        instances: meta.instances,
        team,
    };
    round.validate(bounds, num_classes)?;
    Ok(round)
}
