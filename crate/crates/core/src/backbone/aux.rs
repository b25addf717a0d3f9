use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{const_param, randn_param, SceneLayout};
use crate::data::{BallCarrier, SkeletonSequence};
use crate::error::{shape_err, ModelError};
use crate::numerics::{Graph, ParamId, ParamStore, Real, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuxConfig {
    pub use_time: bool,
    pub use_ball: bool,
    pub use_team: bool,
    /// Rows of the learned time table (downsampled positions).
    pub time_table_len: usize,
    /// Standard deviation of the initial embeddings; 0 gives an identity
    /// at initialization.
    pub init_std: Real,
}

impl Default for AuxConfig {
    fn default() -> Self {
        Self {
            use_time: true,
            use_ball: true,
            use_team: true,
            time_table_len: 256,
            init_std: 0.02,
        }
    }
}

/// Fractional ball possession per scene row and person, `[T_f, N, 1]`:
/// the mean over the row's `ds` source frames, with padding and untracked
/// frames counting as zero.
pub fn pool_ball(ball: &BallCarrier, seq: &SkeletonSequence, layout: &SceneLayout, ds: usize) -> Tensor {
    let n = layout.persons;
    let t = seq.frames().min(ball.frames());
    let mut out = Tensor::zeros(&[layout.frames(), n, 1]);
    for (row, &p) in layout.positions.iter().enumerate() {
        for person in 0..n {
            let held = (p * ds..((p + 1) * ds).min(t))
                .filter(|&f| seq.is_valid(f, person) && ball.get(f, person))
                .count();
            out.data_mut()[row * n + person] = held as Real / ds as Real;
        }
    }
    out
}

/// Additive time, ball, and team embeddings.
pub struct AuxEmbedding {
    pub cfg: AuxConfig,
    time: ParamId,
    ball_w: ParamId,
    ball_b: ParamId,
    team: ParamId,
}

impl AuxEmbedding {
    pub fn new<R: Rng>(store: &mut ParamStore, cfg: AuxConfig, channels: usize, rng: &mut R) -> Result<Self, ModelError> {
        let s = cfg.init_std;
        let time = randn_param(store, "aux.time".into(), &[cfg.time_table_len, channels], s, rng)?;
        let ball_w = randn_param(store, "aux.ball.w".into(), &[1, channels], s, rng)?;
        let ball_b = const_param(store, "aux.ball.b".into(), &[channels], 0.0)?;
        let team = randn_param(store, "aux.team".into(), &[2, channels], s, rng)?;
        Ok(Self {
            cfg,
            time,
            ball_w,
            ball_b,
            team,
        })
    }

    /// `feature: [T_f, N, C]`, `ball: [T_f, N, 1]` from [`pool_ball`],
    /// `team`: one bit per person.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        feature: Var,
        layout: &SceneLayout,
        ball: &Tensor,
        team: &[bool],
    ) -> Result<Var, ModelError> {
        let s = g.shape(feature).to_vec();
        let (tf, n) = (layout.frames(), layout.persons);
        if s.len() != 3 || s[0] != tf || s[1] != n {
            return shape_err(format!("aux feature {s:?} vs layout {tf}×{n}"));
        }
        if ball.shape() != [tf, n, 1] || team.len() != n {
            return shape_err(format!("aux ball {:?} / team {} vs {tf}×{n}", ball.shape(), team.len()));
        }
        let c = s[2];
        let mut out = feature;
        if self.cfg.use_time {
            let rows = self.cfg.time_table_len;
            if let Some(&p) = layout.positions.iter().find(|&&p| p >= rows) {
                return shape_err(format!("time table of {rows} rows cannot index position {p}"));
            }
            let idx: Vec<usize> = layout.positions.iter().flat_map(|&p| std::iter::repeat_n(p, n)).collect();
            let table = g.param(store, self.time);
            let e = g.embedding(table, &idx)?;
            let e = g.reshape(e, &[tf, n, c])?;
            out = g.add(out, e)?;
        }
        if self.cfg.use_ball {
            let b = g.input(ball.clone());
            let (w, bias) = (g.param(store, self.ball_w), g.param(store, self.ball_b));
            let e = g.matmul(b, w)?;
            let e = g.add(e, bias)?;
            out = g.add(out, e)?;
        }
        if self.cfg.use_team {
            let idx: Vec<usize> = (0..tf).flat_map(|_| team.iter().map(|&b| b as usize)).collect();
            let table = g.param(store, self.team);
            let e = g.embedding(table, &idx)?;
            let e = g.reshape(e, &[tf, n, c])?;
            out = g.add(out, e)?;
        }
        Ok(out)
    }
}
