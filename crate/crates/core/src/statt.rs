//! Spatial-temporal attention over the scene feature.
//!
//! Each block runs temporal self-attention (persons folded into the batch),
//! spatial self-attention (time folded into the batch), and two cross
//! attentions between the results; its output is the sum of the two cross
//! attentions and has the shape of its input.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{const_param, randn_param, LN_EPS};
use crate::error::{config_err, shape_err, ModelError};
use crate::numerics::{Graph, ParamId, ParamStore, Real, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StattConfig {
    pub blocks: usize,
    pub embed_dim: usize,
    pub heads: usize,
    /// Dropout on attention outputs during training.
    pub dropout: Real,
    /// Layer normalization on every attention input.
    pub pre_norm: bool,
    /// Adds a residual feed-forward sublayer after the cross-attention sum.
    pub ffn: bool,
    pub ffn_mult: usize,
}

impl Default for StattConfig {
    fn default() -> Self {
        Self {
            blocks: 3,
            embed_dim: 256,
            heads: 4,
            dropout: 0.0,
            pre_norm: true,
            ffn: false,
            ffn_mult: 2,
        }
    }
}

impl StattConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.blocks == 0 {
            return config_err("STAtt needs at least one block");
        }
        if self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return config_err(format!("embed_dim {} not divisible by {} heads", self.embed_dim, self.heads));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return config_err(format!("dropout {} not in [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// Per-forward state: training flag and the dropout stream.
pub struct ForwardCtx {
    pub train: bool,
    rng: ChaCha8Rng,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        Self {
            train: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn train(seed: u64) -> Self {
        Self {
            train: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Inverted dropout: keeps entries with probability `1 − p`, rescaled.
    pub fn dropout(&mut self, g: &mut Graph, x: Var, p: Real) -> Result<Var, ModelError> {
        if !self.train || p <= 0.0 {
            return Ok(x);
        }
        let shape = g.shape(x).to_vec();
        let keep = 1.0 - p;
        let rng = &mut self.rng;
        let mask = Tensor::from_fn(&shape, |_| if rng.gen::<Real>() < keep { 1.0 / keep } else { 0.0 });
        let m = g.input(mask);
        Ok(g.mul(x, m)?)
    }
}

/// A modeling stage mapping a `T_f × N × C` scene feature to one of the same
/// shape.
pub trait SceneModel: Send + Sync {
    fn name(&self) -> &'static str;
    fn forward(&self, g: &mut Graph, store: &ParamStore, feature: Var, ctx: &mut ForwardCtx) -> Result<Var, ModelError>;
}

/// Passes the feature through unchanged (no group modeling).
pub struct IdentityModel;

impl SceneModel for IdentityModel {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn forward(&self, _: &mut Graph, _: &ParamStore, feature: Var, _: &mut ForwardCtx) -> Result<Var, ModelError> {
        Ok(feature)
    }
}

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    fn new<R: Rng>(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, rng: &mut R) -> Result<Self, ModelError> {
        Ok(Self {
            w: randn_param(store, format!("{name}.w"), &[c_in, c_out], (1.0 / c_in as Real).sqrt(), rng)?,
            b: const_param(store, format!("{name}.b"), &[c_out], 0.0)?,
        })
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, ModelError> {
        let (w, b) = (g.param(store, self.w), g.param(store, self.b));
        let y = g.matmul(x, w)?;
        Ok(g.add(y, b)?)
    }
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    g: ParamId,
    b: ParamId,
}

impl Norm {
    fn new(store: &mut ParamStore, name: &str, c: usize) -> Result<Self, ModelError> {
        Ok(Self {
            g: const_param(store, format!("{name}.g"), &[c], 1.0)?,
            b: const_param(store, format!("{name}.b"), &[c], 0.0)?,
        })
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, ModelError> {
        let (gamma, beta) = (g.param(store, self.g), g.param(store, self.b));
        Ok(g.layer_norm(x, gamma, beta, LN_EPS)?)
    }
}

/// Multi-head scaled dot-product attention with query/key/value/output
/// projections.
#[derive(Clone, Debug)]
pub struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
    dim: usize,
}

impl Attention {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut R) -> Result<Self, ModelError> {
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, rng)?,
            k: Linear::new(store, &format!("{name}.k"), dim, dim, rng)?,
            v: Linear::new(store, &format!("{name}.v"), dim, dim, rng)?,
            o: Linear::new(store, &format!("{name}.o"), dim, dim, rng)?,
            heads,
            dim,
        })
    }

    /// Parameter ids of the four projections, `(weight, bias)` each.
    pub fn projections(&self) -> [(ParamId, ParamId); 4] {
        [self.q, self.k, self.v, self.o].map(|l| (l.w, l.b))
    }

    fn split_heads(&self, g: &mut Graph, x: Var, b: usize, l: usize) -> Result<Var, ModelError> {
        let d = self.dim / self.heads;
        let x = g.reshape(x, &[b, l, self.heads, d])?;
        let x = g.permute(x, &[0, 2, 1, 3])?;
        Ok(g.reshape(x, &[b * self.heads, l, d])?)
    }

    /// `query: [B, Lq, C]`, `context: [B, Lk, C]` → (`[B, Lq, C]`, attention
    /// weights `[B·H, Lq, Lk]`).
    pub fn forward_with_weights(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        query: Var,
        context: Var,
    ) -> Result<(Var, Var), ModelError> {
        let (sq, sk) = (g.shape(query).to_vec(), g.shape(context).to_vec());
        if sq.len() != 3 || sk.len() != 3 || sq[0] != sk[0] || sq[2] != self.dim || sk[2] != self.dim {
            return shape_err(format!("attention query {sq:?} / context {sk:?} with dim {}", self.dim));
        }
        let (b, lq, lk) = (sq[0], sq[1], sk[1]);
        let d = self.dim / self.heads;
        let q = self.q.forward(g, store, query)?;
        let k = self.k.forward(g, store, context)?;
        let v = self.v.forward(g, store, context)?;
        let q = self.split_heads(g, q, b, lq)?;
        let k = self.split_heads(g, k, b, lk)?;
        let v = self.split_heads(g, v, b, lk)?;
        let s = g.matmul_t(q, k)?;
        let s = g.scale(s, 1.0 / (d as Real).sqrt());
        let a = g.softmax(s, 2)?;
        let y = g.matmul(a, v)?;
        let y = g.reshape(y, &[b, self.heads, lq, d])?;
        let y = g.permute(y, &[0, 2, 1, 3])?;
        let y = g.reshape(y, &[b, lq, self.dim])?;
        Ok((self.o.forward(g, store, y)?, a))
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, query: Var, context: Var) -> Result<Var, ModelError> {
        Ok(self.forward_with_weights(g, store, query, context)?.0)
    }
}

/// Intermediate results of one block, exposed for inspection.
pub struct BlockTrace {
    pub temporal: Var,
    pub spatial: Var,
    pub st: Var,
    pub ts: Var,
    pub weights: [Var; 4],
    pub output: Var,
}

pub struct StBlock {
    pub temporal: Attention,
    pub spatial: Attention,
    pub st: Attention,
    pub ts: Attention,
    norms: Option<[Norm; 4]>,
    ffn: Option<(Norm, Linear, Linear)>,
    dropout: Real,
}

impl StBlock {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cfg: &StattConfig, rng: &mut R) -> Result<Self, ModelError> {
        let (c, h) = (cfg.embed_dim, cfg.heads);
        let norms = if cfg.pre_norm {
            Some([
                Norm::new(store, &format!("{name}.ln_t"), c)?,
                Norm::new(store, &format!("{name}.ln_s"), c)?,
                Norm::new(store, &format!("{name}.ln_ta"), c)?,
                Norm::new(store, &format!("{name}.ln_sa"), c)?,
            ])
        } else {
            None
        };
        let ffn = if cfg.ffn {
            let hidden = c * cfg.ffn_mult.max(1);
            Some((
                Norm::new(store, &format!("{name}.ln_ffn"), c)?,
                Linear::new(store, &format!("{name}.ffn1"), c, hidden, rng)?,
                Linear::new(store, &format!("{name}.ffn2"), hidden, c, rng)?,
            ))
        } else {
            None
        };
        Ok(Self {
            temporal: Attention::new(store, &format!("{name}.temporal"), c, h, rng)?,
            spatial: Attention::new(store, &format!("{name}.spatial"), c, h, rng)?,
            st: Attention::new(store, &format!("{name}.st"), c, h, rng)?,
            ts: Attention::new(store, &format!("{name}.ts"), c, h, rng)?,
            norms,
            ffn,
            dropout: cfg.dropout,
        })
    }

    fn norm(&self, g: &mut Graph, store: &ParamStore, which: usize, x: Var) -> Result<Var, ModelError> {
        match &self.norms {
            Some(n) => n[which].forward(g, store, x),
            None => Ok(x),
        }
    }

    /// `feature: [T, N, C]` → `[T, N, C]` with all intermediates.
    pub fn trace(&self, g: &mut Graph, store: &ParamStore, feature: Var, ctx: &mut ForwardCtx) -> Result<BlockTrace, ModelError> {
        if g.shape(feature).len() != 3 {
            return shape_err(format!("STBlock input {:?} is not [T, N, C]", g.shape(feature)));
        }
        // temporal self-attention: sequences over T, one per person
        let x_t = g.permute(feature, &[1, 0, 2])?;
        let x_t = self.norm(g, store, 0, x_t)?;
        let (temporal, w_t) = self.temporal.forward_with_weights(g, store, x_t, x_t)?;
        let temporal = ctx.dropout(g, temporal, self.dropout)?;
        // spatial self-attention: sequences over N, one per frame
        let x_s = self.norm(g, store, 1, feature)?;
        let (spatial, w_s) = self.spatial.forward_with_weights(g, store, x_s, x_s)?;
        let spatial = ctx.dropout(g, spatial, self.dropout)?;

        let ta = self.norm(g, store, 2, temporal)?;
        let sa = self.norm(g, store, 3, spatial)?;
        // spatial result queries the temporal result along T
        let q_st = g.permute(sa, &[1, 0, 2])?;
        let (st, w_st) = self.st.forward_with_weights(g, store, q_st, ta)?;
        let st = ctx.dropout(g, st, self.dropout)?;
        // temporal result queries the spatial result along N
        let q_ts = g.permute(ta, &[1, 0, 2])?;
        let (ts, w_ts) = self.ts.forward_with_weights(g, store, q_ts, sa)?;
        let ts = ctx.dropout(g, ts, self.dropout)?;

        let st_back = g.permute(st, &[1, 0, 2])?;
        let mut output = g.add(st_back, ts)?;
        if let Some((ln, l1, l2)) = &self.ffn {
            let h = ln.forward(g, store, output)?;
            let h = l1.forward(g, store, h)?;
            let h = g.relu(h);
            let h = l2.forward(g, store, h)?;
            output = g.add(output, h)?;
        }
        Ok(BlockTrace {
            temporal,
            spatial,
            st,
            ts,
            weights: [w_t, w_s, w_st, w_ts],
            output,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, feature: Var, ctx: &mut ForwardCtx) -> Result<Var, ModelError> {
        Ok(self.trace(g, store, feature, ctx)?.output)
    }
}

/// `N_ST` stacked blocks.
pub struct Statt {
    pub cfg: StattConfig,
    pub blocks: Vec<StBlock>,
}

impl Statt {
    /// Registers parameters under `statt.*`.
    pub fn new<R: Rng>(store: &mut ParamStore, cfg: StattConfig, rng: &mut R) -> Result<Self, ModelError> {
        cfg.validate()?;
        let blocks = (0..cfg.blocks)
            .map(|i| StBlock::new(store, &format!("statt.b{i}"), &cfg, rng))
            .collect::<Result<_, _>>()?;
        Ok(Self { cfg, blocks })
    }
}

impl SceneModel for Statt {
    fn name(&self) -> &'static str {
        "statt"
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, feature: Var, ctx: &mut ForwardCtx) -> Result<Var, ModelError> {
        if self.blocks.is_empty() {
            return config_err("STAtt needs at least one block");
        }
        let mut x = feature;
        for b in &self.blocks {
            x = b.forward(g, store, x, ctx)?;
        }
        Ok(x)
    }
}
