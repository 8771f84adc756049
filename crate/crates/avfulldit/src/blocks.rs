//! Unimodal transformer blocks: multi-head self-attention with rotary
//! positions, cross-attention to condition tokens, a silu feed-forward, and
//! timestep modulation (shift/scale/gate per sub-layer, projected from
//! sinusoidal timestep features). Pre-norm residual wiring throughout, so a
//! block with all-zero modulation weights is exactly the identity map.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Additive mask value: large enough that exp underflows to exactly 0.0
/// after row-max subtraction, small enough to stay finite.
pub const MASK_NEG: f64 = -1e30;

/// Sinusoidal features for a timestep in [0,1], shaped `[1, dim]`.
/// The timestep is stretched by 1000 so the frequency bank covers it well.
pub fn t_features(t: f64, dim: usize) -> Tensor {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    let ts = t * 1000.0;
    for i in 0..half {
        let freq = 10000f64.powf(-(i as f64) / half as f64);
        out.push((ts * freq).cos());
        out.push((ts * freq).sin());
    }
    if dim % 2 == 1 {
        out.push(1.0);
    }
    Tensor::new(vec![1, dim], out).expect("length matches dim")
}

/// Timestep plus its projected features.
#[derive(Debug, Clone)]
pub struct TimestepEmbedding {
    pub t: f64,
    pub features: Tensor,
}

impl TimestepEmbedding {
    pub fn new(t: f64, dim: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Contract(format!("timestep {t} outside [0,1]")));
        }
        Ok(TimestepEmbedding { t, features: t_features(t, dim) })
    }
}

/// Condition token sequence with its modality tag.
#[derive(Debug, Clone)]
pub struct ConditionTokens {
    pub tokens: Tensor,
    pub modality: &'static str,
}

// ── weight bindings (graph vars) ────────────────────────────────────────

#[derive(Clone, Copy)]
pub struct AttnVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

#[derive(Clone, Copy)]
pub struct CrossVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

#[derive(Clone, Copy)]
pub struct FfnVars {
    pub w1: Var,
    pub w2: Var,
}

#[derive(Clone, Copy)]
pub struct NormVars {
    pub gain: Var,
    pub bias: Var,
}

/// One block's weights, bound into a graph.
#[derive(Clone, Copy)]
pub struct BlockVars {
    pub norm_sa: NormVars,
    pub sa: AttnVars,
    pub norm_ca: NormVars,
    pub ca: CrossVars,
    pub norm_ffn: NormVars,
    pub ffn: FfnVars,
    pub mod_w: Var,
    pub mod_b: Var,
    pub heads: usize,
}

/// Precomputed cos/sin angle tables for one sequence.
#[derive(Clone)]
pub struct RopeTables {
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

impl RopeTables {
    pub fn new(positions: &[f64], cfg: &crate::rope::RopeConfig) -> Self {
        let (cos, sin) = crate::rope::rope_tables(positions, cfg);
        RopeTables { cos, sin }
    }
}

// ── attention primitives ────────────────────────────────────────────────

/// Multi-head scaled-dot-product attention over already-projected q/k/v of
/// width C = heads·head_dim. Optional rotary tables rotate q and k; the
/// optional mask is added to logits (shape `[L_q, L_k]`).
pub fn attention_core(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    rope_q: Option<&RopeTables>,
    rope_k: Option<&RopeTables>,
    mask: Option<Var>,
) -> Result<Var> {
    let (lq, c) = (g.shape(q)[0], g.shape(q)[1]);
    let lk = g.shape(k)[0];
    if c % heads != 0 {
        return Err(Error::InvalidDim {
            op: "attention",
            msg: format!("width {c} not divisible by {heads} heads"),
        });
    }
    let dh = c / heads;

    let mut q3 = g.reshape(q, &[lq, heads, dh])?;
    if let Some(rt) = rope_q {
        q3 = g.rope(q3, &rt.cos, &rt.sin)?;
    }
    let mut k3 = g.reshape(k, &[lk, heads, dh])?;
    if let Some(rt) = rope_k {
        k3 = g.rope(k3, &rt.cos, &rt.sin)?;
    }
    let v3 = g.reshape(v, &[lk, heads, dh])?;
    attention_heads(g, q3, k3, v3, mask)
}

/// Attention over per-head token tensors `[L, heads, head_dim]` (rotary, if
/// any, already applied). Returns the mixed sequence flattened to `[L_q, C]`.
pub fn attention_heads(g: &mut Graph, q3: Var, k3: Var, v3: Var, mask: Option<Var>) -> Result<Var> {
    let (lq, heads, dh) = (g.shape(q3)[0], g.shape(q3)[1], g.shape(q3)[2]);
    let qh = g.swap_axes(q3, 0, 1)?; // [H, Lq, dh]
    let kh = g.swap_axes(k3, 0, 1)?;
    let kt = g.swap_axes(kh, 1, 2)?; // [H, dh, Lk]
    let vh = g.swap_axes(v3, 0, 1)?;

    let logits = g.matmul(qh, kt)?; // [H, Lq, Lk]
    let mut scaled = g.scale(logits, 1.0 / (dh as f64).sqrt())?;
    if let Some(m) = mask {
        scaled = g.add(scaled, m)?;
    }
    let weights = g.softmax(scaled, 2)?;
    let mixed = g.matmul(weights, vh)?; // [H, Lq, dh]
    let back = g.swap_axes(mixed, 0, 1)?;
    g.reshape(back, &[lq, heads * dh])
}

/// Standard multi-head self-attention with rotary q/k. Residual is added by
/// the caller.
pub fn self_attention(
    g: &mut Graph,
    h: Var,
    w: &AttnVars,
    heads: usize,
    rope: Option<&RopeTables>,
) -> Result<Var> {
    let q = g.matmul(h, w.wq)?;
    let k = g.matmul(h, w.wk)?;
    let v = g.matmul(h, w.wv)?;
    let attended = attention_core(g, q, k, v, heads, rope, rope, None)?;
    g.matmul(attended, w.wo)
}

/// Queries from the hidden sequence, keys/values from condition tokens.
/// No rotary on the condition axis.
pub fn cross_attention(
    g: &mut Graph,
    h: Var,
    cond: Var,
    w: &CrossVars,
    heads: usize,
) -> Result<Var> {
    let q = g.matmul(h, w.wq)?;
    let k = g.matmul(cond, w.wk)?;
    let v = g.matmul(cond, w.wv)?;
    let attended = attention_core(g, q, k, v, heads, None, None, None)?;
    g.matmul(attended, w.wo)
}

/// linear → silu → linear.
pub fn ffn(g: &mut Graph, h: Var, w: &FfnVars) -> Result<Var> {
    let up = g.matmul(h, w.w1)?;
    let act = g.silu(up)?;
    g.matmul(act, w.w2)
}

/// Project timestep features to shift/scale/gate triples for `n_sublayers`
/// sub-layers; returns 3·n vectors of width `c` in (shift, scale, gate) order
/// per sub-layer.
pub fn modulation(
    g: &mut Graph,
    t_feat: Var,
    mod_w: Var,
    mod_b: Var,
    c: usize,
    n_sublayers: usize,
) -> Result<Vec<Var>> {
    let raw = g.matmul(t_feat, mod_w)?; // [1, 3n·C]
    let biased = g.add(raw, mod_b)?;
    let flat = g.reshape(biased, &[3 * n_sublayers * c])?;
    g.split(flat, 0, &vec![c; 3 * n_sublayers])
}

/// `h·(1 + scale) + shift` with per-channel vectors.
pub fn modulate(g: &mut Graph, h: Var, shift: Var, scale: Var) -> Result<Var> {
    let scaled = g.mul(h, scale)?;
    let grown = g.add(h, scaled)?;
    g.add(grown, shift)
}

/// One pre-norm DiT block: gated self-attention, gated cross-attention to
/// condition tokens, gated feed-forward. All-zero modulation weights make
/// this the identity map.
pub fn unimodal_block(
    g: &mut Graph,
    h: Var,
    cond: Var,
    t_feat: Var,
    w: &BlockVars,
    rope: Option<&RopeTables>,
) -> Result<Var> {
    let c = g.shape(h)[1];
    let m = modulation(g, t_feat, w.mod_w, w.mod_b, c, 3)?;

    let n1 = g.layer_norm(h, w.norm_sa.gain, w.norm_sa.bias, LAYER_NORM_EPS)?;
    let x1 = modulate(g, n1, m[0], m[1])?;
    let a1 = self_attention(g, x1, &w.sa, w.heads, rope)?;
    let g1 = g.mul(a1, m[2])?;
    let h1 = g.add(h, g1)?;

    let n2 = g.layer_norm(h1, w.norm_ca.gain, w.norm_ca.bias, LAYER_NORM_EPS)?;
    let x2 = modulate(g, n2, m[3], m[4])?;
    let a2 = cross_attention(g, x2, cond, &w.ca, w.heads)?;
    let g2 = g.mul(a2, m[5])?;
    let h2 = g.add(h1, g2)?;

    let n3 = g.layer_norm(h2, w.norm_ffn.gain, w.norm_ffn.bias, LAYER_NORM_EPS)?;
    let x3 = modulate(g, n3, m[6], m[7])?;
    let f = ffn(g, x3, &w.ffn)?;
    let g3 = g.mul(f, m[8])?;
    g.add(h2, g3)
}
