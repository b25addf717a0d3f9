//! Per-person ST-GCN features over sliding windows, their aggregation into a
//! scene feature, and the ball/team/time embeddings.

mod aux;
mod skeleton_graph;

pub use aux::{pool_ball, AuxConfig, AuxEmbedding};
pub use skeleton_graph::{SkeletonGraph, COCO_EDGES, COCO_MIRROR_PAIRS};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::SkeletonSequence;
use crate::error::{config_err, shape_err, ModelError};
use crate::numerics::{Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::par::{self, Parallelism};

pub const LN_EPS: Real = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub channels: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub window_len: usize,
    pub window_stride: usize,
    pub temporal_kernel: usize,
    pub layers: Vec<LayerSpec>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            window_len: 300,
            window_stride: 100,
            temporal_kernel: 9,
            layers: vec![
                LayerSpec { channels: 64, stride: 1 },
                LayerSpec { channels: 128, stride: 2 },
                LayerSpec { channels: 256, stride: 2 },
            ],
        }
    }
}

impl BackboneConfig {
    /// Temporal reduction of the whole stack.
    pub fn downsample(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.channels)
    }

    /// Feature frames produced per window.
    pub fn window_out_len(&self) -> usize {
        self.window_len / self.downsample()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.layers.is_empty() || self.layers.iter().any(|l| l.channels == 0 || l.stride == 0) {
            return config_err("backbone needs at least one layer with positive channels and stride");
        }
        let ds = self.downsample();
        if self.window_len == 0 || !self.window_len.is_multiple_of(ds) {
            return config_err(format!("window_len {} not divisible by downsample {ds}", self.window_len));
        }
        if self.window_stride == 0 || self.window_stride > self.window_len {
            return config_err(format!("window_stride {} must be in 1..={}", self.window_stride, self.window_len));
        }
        if !self.window_stride.is_multiple_of(ds) {
            return config_err(format!("window_stride {} not divisible by downsample {ds}", self.window_stride));
        }
        if self.temporal_kernel.is_multiple_of(2) {
            return config_err("temporal_kernel must be odd");
        }
        Ok(())
    }
}

/// Sliding windows `[start, end)` over a sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowPlan {
    pub windows: Vec<(usize, usize)>,
}

impl WindowPlan {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

/// `N_w = ⌊(T − W_l)/W_s⌋ + 1` windows of length `W_l`, stride `W_s`.
pub fn plan_windows(frames: usize, cfg: &BackboneConfig) -> Result<WindowPlan, ModelError> {
    let (wl, ws) = (cfg.window_len, cfg.window_stride);
    if ws == 0 {
        return config_err("window_stride must be positive");
    }
    if frames < wl {
        return shape_err(format!("{frames} frames shorter than window length {wl}"));
    }
    let n = (frames - wl) / ws + 1;
    Ok(WindowPlan {
        windows: (0..n).map(|i| (i * ws, i * ws + wl)).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggMode {
    /// Windows concatenated along time: `T_f = N_w · W_l / ds`.
    GarConcat,
    /// Windows averaged onto the global timeline: `T_f = ⌈T / ds⌉`.
    TgalAverage,
}

/// Bookkeeping that travels with a `T_f × N × C` scene feature.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneLayout {
    pub mode: AggMode,
    pub persons: usize,
    /// Global downsampled position (source frame / ds) of every row.
    pub positions: Vec<usize>,
    /// `T_f × N`: the person is tracked somewhere in the row's frames.
    pub valid: Vec<bool>,
}

impl SceneLayout {
    pub fn frames(&self) -> usize {
        self.positions.len()
    }

    pub fn any_valid(&self) -> bool {
        self.valid.iter().any(|&v| v)
    }
}

/// The aggregated feature `𝓕 ∈ ℝ^{T_f × N × C_f}`.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneFeature {
    pub data: Tensor,
    pub layout: SceneLayout,
}

impl SceneFeature {
    pub fn is_finite(&self) -> bool {
        self.data.is_finite()
    }
}

struct Block {
    gcn_w: ParamId,
    gcn_b: ParamId,
    ln1: (ParamId, ParamId),
    tcn_w: ParamId,
    tcn_b: ParamId,
    ln2: (ParamId, ParamId),
    res_w: Option<ParamId>,
    stride: usize,
}

/// ST-GCN style network applied to one person's window.
pub struct Backbone {
    pub cfg: BackboneConfig,
    pub graph: SkeletonGraph,
    in_channels: usize,
    blocks: Vec<Block>,
}

pub(crate) fn randn_param<R: Rng>(
    store: &mut ParamStore,
    name: String,
    shape: &[usize],
    std: Real,
    rng: &mut R,
) -> Result<ParamId, ModelError> {
    Ok(store.insert(name, Tensor::randn(shape, std, rng))?)
}

pub(crate) fn const_param(store: &mut ParamStore, name: String, shape: &[usize], v: Real) -> Result<ParamId, ModelError> {
    Ok(store.insert(name, Tensor::full(shape, v))?)
}

impl Backbone {
    /// Registers randomly initialized weights under `backbone.*`.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        cfg: BackboneConfig,
        graph: SkeletonGraph,
        in_channels: usize,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        cfg.validate()?;
        let k = cfg.temporal_kernel;
        let mut blocks = Vec::with_capacity(cfg.layers.len());
        let mut c_in = in_channels;
        for (i, l) in cfg.layers.iter().enumerate() {
            let p = format!("backbone.l{i}");
            let c = l.channels;
            let gcn_w = randn_param(store, format!("{p}.gcn.w"), &[c_in, c], (2.0 / c_in as Real).sqrt(), rng)?;
            let gcn_b = const_param(store, format!("{p}.gcn.b"), &[c], 0.0)?;
            let ln1 = (
                const_param(store, format!("{p}.ln1.g"), &[c], 1.0)?,
                const_param(store, format!("{p}.ln1.b"), &[c], 0.0)?,
            );
            let tcn_w = randn_param(store, format!("{p}.tcn.w"), &[k, c, c], (2.0 / (k * c) as Real).sqrt(), rng)?;
            let tcn_b = const_param(store, format!("{p}.tcn.b"), &[c], 0.0)?;
            let ln2 = (
                const_param(store, format!("{p}.ln2.g"), &[c], 1.0)?,
                const_param(store, format!("{p}.ln2.b"), &[c], 0.0)?,
            );
            let res_w = if c_in != c || l.stride != 1 {
                Some(randn_param(store, format!("{p}.res.w"), &[1, c_in, c], (1.0 / c_in as Real).sqrt(), rng)?)
            } else {
                None
            };
            blocks.push(Block {
                gcn_w,
                gcn_b,
                ln1,
                tcn_w,
                tcn_b,
                ln2,
                res_w,
                stride: l.stride,
            });
            c_in = c;
        }
        Ok(Self {
            cfg,
            graph,
            in_channels,
            blocks,
        })
    }

    /// `x: [W_l, J, C_in]` → `[W_l / ds, C_out]` (joints mean-pooled).
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, ModelError> {
        let want = [self.cfg.window_len, self.graph.nodes, self.in_channels];
        if g.shape(x) != want {
            return shape_err(format!("backbone input {:?}, expected {want:?}", g.shape(x)));
        }
        let pad = self.cfg.temporal_kernel / 2;
        let mut h = x;
        for b in &self.blocks {
            let a = g.graph_conv(h, &self.graph.adjacency)?;
            let (w, bias) = (g.param(store, b.gcn_w), g.param(store, b.gcn_b));
            let a = g.matmul(a, w)?;
            let a = g.add(a, bias)?;
            let (lg, lb) = (g.param(store, b.ln1.0), g.param(store, b.ln1.1));
            let a = g.layer_norm(a, lg, lb, LN_EPS)?;
            let a = g.relu(a);
            let (tw, tb) = (g.param(store, b.tcn_w), g.param(store, b.tcn_b));
            let t = g.conv1d(a, tw, Some(tb), b.stride, pad)?;
            let (lg, lb) = (g.param(store, b.ln2.0), g.param(store, b.ln2.1));
            let t = g.layer_norm(t, lg, lb, LN_EPS)?;
            let r = match b.res_w {
                Some(rw) => {
                    let rw = g.param(store, rw);
                    g.conv1d(h, rw, None, b.stride, 0)?
                }
                None => h,
            };
            let s = g.add(t, r)?;
            h = g.relu(s);
        }
        Ok(g.mean(h, 1)?)
    }

    /// Backbone input for `person` over frames `[start, end)`.
    pub fn window_input(seq: &SkeletonSequence, person: usize, start: usize, end: usize) -> Tensor {
        let (j, c) = (seq.joints(), seq.channels());
        let mut data = Vec::with_capacity((end - start) * j * c);
        for t in start..end {
            data.extend(seq.pose(t, person).iter().map(|&v| v as Real));
        }
        Tensor::new(&[end - start, j, c], data).expect("window shape")
    }

    /// Per-window, per-person features `[W_l / ds, C]` computed without
    /// gradient tracking; indexed `[window][person]`.
    pub fn extract(
        &self,
        store: &ParamStore,
        seq: &SkeletonSequence,
        plan: &WindowPlan,
        mode: Parallelism,
    ) -> Result<Vec<Vec<Tensor>>, ModelError> {
        let n = seq.persons();
        let flat = par::try_map_range(mode, plan.len() * n, |k| {
            let (w, p) = (k / n, k % n);
            let (s, e) = plan.windows[w];
            let mut g = Graph::inference();
            let x = g.input(Self::window_input(seq, p, s, e));
            let y = self.forward(&mut g, store, x)?;
            Ok::<_, ModelError>(g.value(y).clone())
        })?;
        let mut out = vec![Vec::with_capacity(n); plan.len()];
        for (k, t) in flat.into_iter().enumerate() {
            out[k / n].push(t);
        }
        Ok(out)
    }
}

/// Row layout (positions and validity) of the aggregated feature.
pub fn scene_layout(seq: &SkeletonSequence, plan: &WindowPlan, cfg: &BackboneConfig, mode: AggMode) -> SceneLayout {
    let ds = cfg.downsample();
    let l = cfg.window_out_len();
    let n = seq.persons();
    let t = seq.frames();
    let positions: Vec<usize> = match mode {
        AggMode::GarConcat => plan.windows.iter().flat_map(|&(s, _)| (0..l).map(move |i| s / ds + i)).collect(),
        AggMode::TgalAverage => (0..t.div_ceil(ds)).collect(),
    };
    let covered = |p: usize| match mode {
        AggMode::GarConcat => true,
        AggMode::TgalAverage => plan.windows.iter().any(|&(s, _)| p >= s / ds && p < s / ds + l),
    };
    let mut valid = vec![false; positions.len() * n];
    for (row, &p) in positions.iter().enumerate() {
        if !covered(p) {
            continue;
        }
        for person in 0..n {
            valid[row * n + person] = (p * ds..((p + 1) * ds).min(t)).any(|f| seq.is_valid(f, person));
        }
    }
    SceneLayout {
        mode,
        persons: n,
        positions,
        valid,
    }
}

/// Combines per-window features `[L, N, C]` into the scene feature
/// `[T_f, N, C]` inside a graph.
pub fn aggregate(
    g: &mut Graph,
    windows: &[Var],
    plan: &WindowPlan,
    frames: usize,
    downsample: usize,
    mode: AggMode,
) -> Result<Var, ModelError> {
    if windows.is_empty() || windows.len() != plan.len() {
        return shape_err(format!("{} window features for {} windows", windows.len(), plan.len()));
    }
    let s0 = g.shape(windows[0]).to_vec();
    if s0.len() != 3 || windows.iter().any(|&w| g.shape(w) != s0.as_slice()) {
        return shape_err("window features must share one [L, N, C] shape");
    }
    match mode {
        AggMode::GarConcat => Ok(g.concat(windows, 0)?),
        AggMode::TgalAverage => {
            let (l, n, c) = (s0[0], s0[1], s0[2]);
            let tf = frames.div_ceil(downsample);
            let mut count = vec![0usize; tf];
            let mut sum: Option<Var> = None;
            for (&w, &(s, _)) in windows.iter().zip(&plan.windows) {
                let p0 = s / downsample;
                let len = l.min(tf.saturating_sub(p0));
                if len == 0 {
                    continue;
                }
                let body = if len < l { g.slice(w, 0, 0, len)? } else { w };
                let mut parts = Vec::with_capacity(3);
                if p0 > 0 {
                    parts.push(g.input(Tensor::zeros(&[p0, n, c])));
                }
                parts.push(body);
                if p0 + len < tf {
                    parts.push(g.input(Tensor::zeros(&[tf - p0 - len, n, c])));
                }
                let placed = if parts.len() == 1 { parts[0] } else { g.concat(&parts, 0)? };
                sum = Some(match sum {
                    Some(acc) => g.add(acc, placed)?,
                    None => placed,
                });
                for k in count.iter_mut().skip(p0).take(len) {
                    *k += 1;
                }
            }
            let sum = match sum {
                Some(s) => s,
                None => return shape_err("no window overlaps the timeline"),
            };
            let inv = Tensor::from_fn(&[tf, n, c], |i| {
                let k = count[i / (n * c)];
                if k == 0 {
                    0.0
                } else {
                    1.0 / k as Real
                }
            });
            let inv = g.input(inv);
            Ok(g.mul(sum, inv)?)
        }
    }
}

/// Stacks `[window][person]` feature tensors into per-window `[L, N, C]`
/// graph inputs.
pub fn window_inputs(g: &mut Graph, feats: &[Vec<Tensor>]) -> Result<Vec<Var>, ModelError> {
    feats
        .iter()
        .map(|persons| {
            let l = persons[0].shape()[0];
            let c = persons[0].shape()[1];
            let n = persons.len();
            let mut data = vec![0.0; l * n * c];
            for (p, t) in persons.iter().enumerate() {
                for r in 0..l {
                    data[(r * n + p) * c..(r * n + p + 1) * c].copy_from_slice(&t.data()[r * c..(r + 1) * c]);
                }
            }
            Ok(g.input(Tensor::new(&[l, n, c], data)?))
        })
        .collect()
}

/// Runs the backbone on every window and person inside `g` so gradients
/// reach the backbone weights; returns per-window `[L, N, C]` nodes.
pub fn window_features_in_graph(
    g: &mut Graph,
    store: &ParamStore,
    backbone: &Backbone,
    seq: &SkeletonSequence,
    plan: &WindowPlan,
) -> Result<Vec<Var>, ModelError> {
    let n = seq.persons();
    let l = backbone.cfg.window_out_len();
    let c = backbone.cfg.out_channels();
    plan.windows
        .iter()
        .map(|&(s, e)| {
            let mut cols = Vec::with_capacity(n);
            for p in 0..n {
                let x = g.input(Backbone::window_input(seq, p, s, e));
                let y = backbone.forward(g, store, x)?;
                cols.push(g.reshape(y, &[l, 1, c])?);
            }
            Ok(g.concat(&cols, 1)?)
        })
        .collect()
}

#[cfg(test)]
mod tests;
