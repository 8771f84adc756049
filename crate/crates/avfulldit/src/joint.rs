//! Joint audio–video attention: one multi-head self-attention over the
//! concatenation of both token sequences, run at the video channel width.
//!
//! The audio tower is narrower (C_a ≤ C_v), so its q/k/v projections are
//! widened by adapter matrices concatenated beside the originals — output
//! `h_a · [W_a ; W_an]` has its first C_a channels from the original
//! projection and the rest from the adapter. The attended audio rows are
//! projected back down with a stacked `[W_o ; W_o_an]`. With zero adapters
//! the extended key/value channels are exactly zero, so audio content reaches
//! video queries only through the original C_a channels.
//!
//! A per-modality cross-attention layer (video queries over audio keys and
//! vice versa) is provided as the ablation baseline.

use crate::blocks::{attention_heads, AttnVars, RopeTables, MASK_NEG};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Width-bridging adapter weights for one joint block.
/// Input adapters are `[C_a, C_v − C_a]`; the output adapter is transposed.
#[derive(Clone, Copy)]
pub struct AdapterVars {
    pub wq_an: Var,
    pub wk_an: Var,
    pub wv_an: Var,
    pub wo_an: Var,
}

/// Which modality's tokens come first in the concatenated sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConcatOrder {
    VideoFirst,
    AudioFirst,
}

/// Count of parameters added on top of the two donor towers:
/// three input adapters and one output adapter per joint block.
pub fn new_parameter_count(c_v: usize, c_a: usize, n_joint_blocks: usize) -> usize {
    n_joint_blocks * 4 * c_a * (c_v - c_a)
}

/// Plain q/k/v projections of the video sequence.
pub fn project_video_qkv(g: &mut Graph, h_v: Var, w: &AttnVars) -> Result<(Var, Var, Var)> {
    Ok((g.matmul(h_v, w.wq)?, g.matmul(h_v, w.wk)?, g.matmul(h_v, w.wv)?))
}

fn project_expanded(g: &mut Graph, h_a: Var, w: Var, adapter: Option<Var>) -> Result<Var> {
    let base = g.matmul(h_a, w)?;
    match adapter {
        Some(an) => {
            let ext = g.matmul(h_a, an)?;
            g.concat(&[base, ext], 1)
        }
        None => Ok(base),
    }
}

/// Audio q/k/v at the joint width: `h_a · [W ; W_an]` per projection.
/// `adapters` must be `Some` exactly when C_v > C_a.
pub fn project_audio_qkv_expanded(
    g: &mut Graph,
    h_a: Var,
    w: &AttnVars,
    adapters: Option<&AdapterVars>,
) -> Result<(Var, Var, Var)> {
    let q = project_expanded(g, h_a, w.wq, adapters.map(|a| a.wq_an))?;
    let k = project_expanded(g, h_a, w.wk, adapters.map(|a| a.wk_an))?;
    let v = project_expanded(g, h_a, w.wv, adapters.map(|a| a.wv_an))?;
    Ok((q, k, v))
}

/// Additive `[L, L]` mask that sends every cross-modal logit to `MASK_NEG`
/// (which underflows to an exact zero attention weight).
pub fn cross_modal_mask(l_v: usize, l_a: usize, order: ConcatOrder) -> Tensor {
    let l = l_v + l_a;
    let l_first = match order {
        ConcatOrder::VideoFirst => l_v,
        ConcatOrder::AudioFirst => l_a,
    };
    let mut data = vec![0.0; l * l];
    for i in 0..l {
        for j in 0..l {
            if (i < l_first) != (j < l_first) {
                data[i * l + j] = MASK_NEG;
            }
        }
    }
    Tensor::new(vec![l, l], data).expect("mask shape")
}

/// Joint multi-head attention over the concatenated sequences.
///
/// Rotary tables must be built for the joint head geometry (C_v / heads) with
/// each modality's own positions. The optional mask is `[L, L]` over the
/// concatenated sequence in the given order. Returns per-modality outputs at
/// their native widths.
#[allow(clippy::too_many_arguments)]
pub fn avfull_attention(
    g: &mut Graph,
    h_v: Var,
    h_a: Var,
    video_w: &AttnVars,
    audio_w: &AttnVars,
    adapters: Option<&AdapterVars>,
    heads: usize,
    rope_v: &RopeTables,
    rope_a: &RopeTables,
    mask: Option<Var>,
    order: ConcatOrder,
) -> Result<(Var, Var)> {
    let (l_v, c_v) = (g.shape(h_v)[0], g.shape(h_v)[1]);
    let (l_a, c_a) = (g.shape(h_a)[0], g.shape(h_a)[1]);
    if c_v < c_a {
        return Err(Error::Config(format!(
            "joint attention requires C_v >= C_a, got C_v={c_v} C_a={c_a}"
        )));
    }
    if (c_v > c_a) != adapters.is_some() {
        return Err(Error::Config(format!(
            "adapters must be present exactly when C_v > C_a (C_v={c_v}, C_a={c_a})"
        )));
    }
    if c_v % heads != 0 {
        return Err(Error::InvalidDim {
            op: "avfull_attention",
            msg: format!("joint width {c_v} not divisible by {heads} heads"),
        });
    }
    let dh = c_v / heads;

    let (q_v, k_v, v_v) = project_video_qkv(g, h_v, video_w)?;
    let (q_a, k_a, v_a) = project_audio_qkv_expanded(g, h_a, audio_w, adapters)?;

    // per-modality rotary before concatenation
    let q_v3 = g.reshape(q_v, &[l_v, heads, dh])?;
    let q_v3 = g.rope(q_v3, &rope_v.cos, &rope_v.sin)?;
    let k_v3 = g.reshape(k_v, &[l_v, heads, dh])?;
    let k_v3 = g.rope(k_v3, &rope_v.cos, &rope_v.sin)?;
    let v_v3 = g.reshape(v_v, &[l_v, heads, dh])?;
    let q_a3 = g.reshape(q_a, &[l_a, heads, dh])?;
    let q_a3 = g.rope(q_a3, &rope_a.cos, &rope_a.sin)?;
    let k_a3 = g.reshape(k_a, &[l_a, heads, dh])?;
    let k_a3 = g.rope(k_a3, &rope_a.cos, &rope_a.sin)?;
    let v_a3 = g.reshape(v_a, &[l_a, heads, dh])?;

    let (q, k, v, sizes) = match order {
        ConcatOrder::VideoFirst => (
            g.concat(&[q_v3, q_a3], 0)?,
            g.concat(&[k_v3, k_a3], 0)?,
            g.concat(&[v_v3, v_a3], 0)?,
            [l_v, l_a],
        ),
        ConcatOrder::AudioFirst => (
            g.concat(&[q_a3, q_v3], 0)?,
            g.concat(&[k_a3, k_v3], 0)?,
            g.concat(&[v_a3, v_v3], 0)?,
            [l_a, l_v],
        ),
    };

    let joint = attention_heads(g, q, k, v, mask)?; // [L, C_v]
    let parts = g.split(joint, 0, &sizes)?;
    let (a_v, a_a) = match order {
        ConcatOrder::VideoFirst => (parts[0], parts[1]),
        ConcatOrder::AudioFirst => (parts[1], parts[0]),
    };

    let o_v = g.matmul(a_v, video_w.wo)?;
    let o_a = match adapters {
        Some(ad) => {
            let wo_full = g.concat(&[audio_w.wo, ad.wo_an], 0)?; // [C_v, C_a]
            g.matmul(a_a, wo_full)?
        }
        None => g.matmul(a_a, audio_w.wo)?,
    };
    Ok((o_v, o_a))
}

/// Adapter weights for the cross-attention baseline's audio side.
#[derive(Clone, Copy)]
pub struct CrossModalAdapters {
    pub a_wq_an: Var,
    pub a_wk_an: Var,
    pub a_wv_an: Var,
    pub a_wo_an: Var,
}

/// Weights for one cross-modal cross-attention layer (the §-ablation
/// baseline): each modality queries the other's keys/values.
pub struct CrossModalVars {
    pub v_wq: Var,
    pub v_wk: Var,
    pub v_wv: Var,
    pub v_wo: Var,
    pub a_wq: Var,
    pub a_wk: Var,
    pub a_wv: Var,
    pub a_wo: Var,
    pub adapters: Option<CrossModalAdapters>,
}

/// Cross-attention baseline: video queries attend to audio keys/values and
/// vice versa, with the same width-bridging adapter scheme. Returns
/// per-modality outputs at native widths; gating and residuals belong to the
/// caller.
pub fn cross_attention_baseline(
    g: &mut Graph,
    h_v: Var,
    h_a: Var,
    w: &CrossModalVars,
    heads: usize,
    rope_v: &RopeTables,
    rope_a: &RopeTables,
) -> Result<(Var, Var)> {
    let (l_v, c_v) = (g.shape(h_v)[0], g.shape(h_v)[1]);
    let (l_a, c_a) = (g.shape(h_a)[0], g.shape(h_a)[1]);
    if (c_v > c_a) != w.adapters.is_some() {
        return Err(Error::Config(format!(
            "baseline adapters must be present exactly when C_v > C_a (C_v={c_v}, C_a={c_a})"
        )));
    }
    let dh = c_v / heads;

    // video queries ← audio keys/values
    let q_v = g.matmul(h_v, w.v_wq)?;
    let k_a = project_expanded(g, h_a, w.a_wk, w.adapters.map(|a| a.a_wk_an))?;
    let v_a = project_expanded(g, h_a, w.a_wv, w.adapters.map(|a| a.a_wv_an))?;
    let q_v3 = g.reshape(q_v, &[l_v, heads, dh])?;
    let q_v3 = g.rope(q_v3, &rope_v.cos, &rope_v.sin)?;
    let k_a3 = g.reshape(k_a, &[l_a, heads, dh])?;
    let k_a3 = g.rope(k_a3, &rope_a.cos, &rope_a.sin)?;
    let v_a3 = g.reshape(v_a, &[l_a, heads, dh])?;
    let mixed_v = attention_heads(g, q_v3, k_a3, v_a3, None)?;
    let o_v = g.matmul(mixed_v, w.v_wo)?;

    // audio queries ← video keys/values
    let q_a = project_expanded(g, h_a, w.a_wq, w.adapters.map(|a| a.a_wq_an))?;
    let k_v = g.matmul(h_v, w.v_wk)?;
    let v_v = g.matmul(h_v, w.v_wv)?;
    let q_a3 = g.reshape(q_a, &[l_a, heads, dh])?;
    let q_a3 = g.rope(q_a3, &rope_a.cos, &rope_a.sin)?;
    let k_v3 = g.reshape(k_v, &[l_v, heads, dh])?;
    let k_v3 = g.rope(k_v3, &rope_v.cos, &rope_v.sin)?;
    let v_v3 = g.reshape(v_v, &[l_v, heads, dh])?;
    let mixed_a = attention_heads(g, q_a3, k_v3, v_v3, None)?;
    let o_a = match w.adapters {
        Some(ad) => {
            let wo_full = g.concat(&[w.a_wo, ad.a_wo_an], 0)?;
            g.matmul(mixed_a, wo_full)?
        }
        None => g.matmul(mixed_a, w.a_wo)?,
    };
    Ok((o_v, o_a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::self_attention;
    use crate::rope::{RopeConfig, RopeVariant, DEFAULT_ROPE_BASE};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect()).unwrap()
    }

    fn attn_vars(g: &mut Graph, rows: usize, cols: usize, seed: u64) -> AttnVars {
        AttnVars {
            wq: g.leaf(&rng_tensor(&[rows, cols], seed), false),
            wk: g.leaf(&rng_tensor(&[rows, cols], seed + 1), false),
            wv: g.leaf(&rng_tensor(&[rows, cols], seed + 2), false),
            wo: g.leaf(&rng_tensor(&[cols, rows], seed + 3), false),
        }
    }

    fn adapter_vars(g: &mut Graph, c_a: usize, c_v: usize, seed: u64, zero: bool) -> AdapterVars {
        let mk = |g: &mut Graph, shape: &[usize], s: u64| {
            if zero {
                g.leaf(&Tensor::zeros(shape), false)
            } else {
                g.leaf(&rng_tensor(shape, s), false)
            }
        };
        AdapterVars {
            wq_an: mk(g, &[c_a, c_v - c_a], seed),
            wk_an: mk(g, &[c_a, c_v - c_a], seed + 1),
            wv_an: mk(g, &[c_a, c_v - c_a], seed + 2),
            wo_an: mk(g, &[c_v - c_a, c_a], seed + 3),
        }
    }

    fn tables(l: usize, head_dim: usize, scale: f64) -> RopeTables {
        let cfg = RopeConfig::new(head_dim, DEFAULT_ROPE_BASE, RopeVariant::Vanilla).unwrap();
        let pos: Vec<f64> = (0..l).map(|i| i as f64 * scale).collect();
        RopeTables::new(&pos, &cfg)
    }

    #[test]
    fn video_qkv_identity_and_zero() {
        let c = 4;
        let h = rng_tensor(&[3, c], 1);
        let mut g = Graph::new();
        let hv = g.constant(&h);
        let eye = {
            let mut t = Tensor::zeros(&[c, c]);
            for i in 0..c {
                t.set(&[i, i], 1.0);
            }
            t
        };
        let id = AttnVars {
            wq: g.leaf(&eye, false),
            wk: g.leaf(&eye, false),
            wv: g.leaf(&eye, false),
            wo: g.leaf(&eye, false),
        };
        let (q, k, v) = project_video_qkv(&mut g, hv, &id).unwrap();
        assert_eq!(g.data(q), h.data());
        assert_eq!(g.data(k), h.data());
        assert_eq!(g.data(v), h.data());

        let zero = AttnVars {
            wq: g.leaf(&Tensor::zeros(&[c, c]), false),
            wk: g.leaf(&Tensor::zeros(&[c, c]), false),
            wv: g.leaf(&Tensor::zeros(&[c, c]), false),
            wo: g.leaf(&Tensor::zeros(&[c, c]), false),
        };
        let (q0, _, _) = project_video_qkv(&mut g, hv, &zero).unwrap();
        assert!(g.data(q0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn expanded_projection_matches_concatenated_matrix_oracle() {
        let (c_a, c_v, l_a) = (3, 5, 4);
        let h_a = rng_tensor(&[l_a, c_a], 2);
        let w = rng_tensor(&[c_a, c_a], 3);
        let an = rng_tensor(&[c_a, c_v - c_a], 4);
        // explicit [W ; W_an] then a triple-loop multiply
        let mut wide = Tensor::zeros(&[c_a, c_v]);
        for i in 0..c_a {
            for j in 0..c_a {
                wide.set(&[i, j], w.get(&[i, j]));
            }
            for j in 0..(c_v - c_a) {
                wide.set(&[i, c_a + j], an.get(&[i, j]));
            }
        }
        let mut expect = Tensor::zeros(&[l_a, c_v]);
        for i in 0..l_a {
            for j in 0..c_v {
                let mut s = 0.0;
                for p in 0..c_a {
                    s += h_a.get(&[i, p]) * wide.get(&[p, j]);
                }
                expect.set(&[i, j], s);
            }
        }
        let mut g = Graph::new();
        let hv = g.constant(&h_a);
        let wv = g.constant(&w);
        let anv = g.constant(&an);
        let got = project_expanded(&mut g, hv, wv, Some(anv)).unwrap();
        assert!(g.tensor(got).max_abs_diff(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn zero_adapters_zero_extended_channels() {
        let (c_a, c_v, l_a) = (4, 6, 3);
        let h_a = rng_tensor(&[l_a, c_a], 5);
        let mut g = Graph::new();
        let hv = g.constant(&h_a);
        let w = attn_vars(&mut g, c_a, c_a, 10);
        let ad = adapter_vars(&mut g, c_a, c_v, 20, true);
        let (q, k, v) = project_audio_qkv_expanded(&mut g, hv, &w, Some(&ad)).unwrap();
        for &var in &[q, k, v] {
            let t = g.tensor(var);
            assert_eq!(t.shape(), &[l_a, c_v]);
            for i in 0..l_a {
                for j in c_a..c_v {
                    assert_eq!(t.get(&[i, j]), 0.0, "extended channel must be exactly zero");
                }
            }
        }
        // first C_a channels equal the unexpanded projection
        let plain = g.matmul(hv, w.wq).unwrap();
        let pt = g.tensor(plain);
        let qt = g.tensor(q);
        for i in 0..l_a {
            for j in 0..c_a {
                assert_eq!(qt.get(&[i, j]), pt.get(&[i, j]));
            }
        }
    }

    #[test]
    fn equal_widths_skip_adapters() {
        let c = 4;
        let h_a = rng_tensor(&[3, c], 6);
        let mut g = Graph::new();
        let hv = g.constant(&h_a);
        let w = attn_vars(&mut g, c, c, 30);
        let (q, _, _) = project_audio_qkv_expanded(&mut g, hv, &w, None).unwrap();
        let plain = g.matmul(hv, w.wq).unwrap();
        assert_eq!(g.data(q), g.data(plain));
    }

    #[test]
    fn masked_joint_attention_equals_unimodal_video() {
        let (c_v, c_a, l_v, l_a, heads) = (8, 6, 5, 7, 2);
        let h_v = rng_tensor(&[l_v, c_v], 7);
        let h_a = rng_tensor(&[l_a, c_a], 8);
        let mut g = Graph::new();
        let hv = g.constant(&h_v);
        let ha = g.constant(&h_a);
        let vw = attn_vars(&mut g, c_v, c_v, 40);
        let aw = attn_vars(&mut g, c_a, c_a, 50);
        let ad = adapter_vars(&mut g, c_a, c_v, 60, false);
        let rv = tables(l_v, c_v / heads, 1.0);
        let ra = tables(l_a, c_v / heads, 0.25);
        let mask = cross_modal_mask(l_v, l_a, ConcatOrder::VideoFirst);
        let mv = g.constant(&mask);
        let (o_v, _o_a) = avfull_attention(
            &mut g, hv, ha, &vw, &aw, Some(&ad), heads, &rv, &ra, Some(mv),
            ConcatOrder::VideoFirst,
        )
        .unwrap();
        let uni = self_attention(&mut g, hv, &vw, heads, Some(&rv)).unwrap();
        let diff = g.tensor(o_v).max_abs_diff(&g.tensor(uni)).unwrap();
        assert!(diff < 1e-10, "masked joint vs unimodal: {diff}");
    }

    #[test]
    fn concat_order_does_not_change_outputs() {
        let (c_v, c_a, l_v, l_a, heads) = (8, 6, 4, 6, 2);
        let h_v = rng_tensor(&[l_v, c_v], 9);
        let h_a = rng_tensor(&[l_a, c_a], 10);
        let run = |order: ConcatOrder| {
            let mut g = Graph::new();
            let hv = g.constant(&h_v);
            let ha = g.constant(&h_a);
            let vw = attn_vars(&mut g, c_v, c_v, 70);
            let aw = attn_vars(&mut g, c_a, c_a, 80);
            let ad = adapter_vars(&mut g, c_a, c_v, 90, false);
            let rv = tables(l_v, c_v / heads, 1.0);
            let ra = tables(l_a, c_v / heads, 0.25);
            let (o_v, o_a) =
                avfull_attention(&mut g, hv, ha, &vw, &aw, Some(&ad), heads, &rv, &ra, None, order)
                    .unwrap();
            (g.tensor(o_v), g.tensor(o_a))
        };
        let (v1, a1) = run(ConcatOrder::VideoFirst);
        let (v2, a2) = run(ConcatOrder::AudioFirst);
        assert!(v1.max_abs_diff(&v2).unwrap() < 1e-12);
        assert!(a1.max_abs_diff(&a2).unwrap() < 1e-12);
    }

    #[test]
    fn two_token_zero_query_uniform_mixture() {
        // one token per modality, zero wq → logits all zero → weights (½, ½)
        let (c_v, c_a, heads) = (4, 4, 1);
        let h_v = rng_tensor(&[1, c_v], 11);
        let h_a = rng_tensor(&[1, c_a], 12);
        let mut g = Graph::new();
        let hv = g.constant(&h_v);
        let ha = g.constant(&h_a);
        let zero_q = g.constant(&Tensor::zeros(&[c_v, c_v]));
        let vw = AttnVars {
            wq: zero_q,
            wk: g.leaf(&rng_tensor(&[c_v, c_v], 101), false),
            wv: g.leaf(&rng_tensor(&[c_v, c_v], 102), false),
            wo: g.leaf(&rng_tensor(&[c_v, c_v], 103), false),
        };
        let aw = AttnVars {
            wq: zero_q,
            wk: g.leaf(&rng_tensor(&[c_a, c_a], 104), false),
            wv: g.leaf(&rng_tensor(&[c_a, c_a], 105), false),
            wo: g.leaf(&rng_tensor(&[c_a, c_a], 106), false),
        };
        let rv = tables(1, c_v / heads, 1.0);
        let ra = tables(1, c_v / heads, 0.25);
        let (o_v, o_a) = avfull_attention(
            &mut g, hv, ha, &vw, &aw, None, heads, &rv, &ra, None, ConcatOrder::VideoFirst,
        )
        .unwrap();
        // hand-compute: mixed = (h_v·wv_v + h_a·wv_a) / 2
        let v_v = g.matmul(hv, vw.wv).unwrap();
        let v_a = g.matmul(ha, aw.wv).unwrap();
        let sum = g.add(v_v, v_a).unwrap();
        let mixed = g.scale(sum, 0.5).unwrap();
        let expect_v = g.matmul(mixed, vw.wo).unwrap();
        let expect_a = g.matmul(mixed, aw.wo).unwrap();
        assert!(g.tensor(o_v).max_abs_diff(&g.tensor(expect_v)).unwrap() < 1e-12);
        assert!(g.tensor(o_a).max_abs_diff(&g.tensor(expect_a)).unwrap() < 1e-12);
    }

    #[test]
    fn parameter_count_closed_form() {
        assert_eq!(new_parameter_count(8, 8, 3), 0);
        assert_eq!(new_parameter_count(8, 6, 2), 96);
    }

    #[test]
    fn baseline_single_token_hand_case() {
        // L_v = L_a = 1: softmax over one key → weight 1 on both sides
        let (c_v, c_a, heads) = (4, 4, 1);
        let h_v = rng_tensor(&[1, c_v], 13);
        let h_a = rng_tensor(&[1, c_a], 14);
        let mut g = Graph::new();
        let hv = g.constant(&h_v);
        let ha = g.constant(&h_a);
        let w = CrossModalVars {
            v_wq: g.leaf(&rng_tensor(&[c_v, c_v], 110), false),
            v_wk: g.leaf(&rng_tensor(&[c_v, c_v], 111), false),
            v_wv: g.leaf(&rng_tensor(&[c_v, c_v], 112), false),
            v_wo: g.leaf(&rng_tensor(&[c_v, c_v], 113), false),
            a_wq: g.leaf(&rng_tensor(&[c_a, c_a], 114), false),
            a_wk: g.leaf(&rng_tensor(&[c_a, c_a], 115), false),
            a_wv: g.leaf(&rng_tensor(&[c_a, c_a], 116), false),
            a_wo: g.leaf(&rng_tensor(&[c_a, c_a], 117), false),
            adapters: None,
        };
        let rv = tables(1, c_v / heads, 1.0);
        let ra = tables(1, c_v / heads, 0.25);
        let (o_v, o_a) = cross_attention_baseline(&mut g, hv, ha, &w, heads, &rv, &ra).unwrap();
        // o_v = (h_a·a_wv)·v_wo; o_a = (h_v·v_wv)·a_wo
        let av = g.matmul(ha, w.a_wv).unwrap();
        let ev = g.matmul(av, w.v_wo).unwrap();
        let vv = g.matmul(hv, w.v_wv).unwrap();
        let ea = g.matmul(vv, w.a_wo).unwrap();
        assert!(g.tensor(o_v).max_abs_diff(&g.tensor(ev)).unwrap() < 1e-12);
        assert!(g.tensor(o_a).max_abs_diff(&g.tensor(ea)).unwrap() < 1e-12);
    }

    #[test]
    fn masked_mixture_is_exact_zero_weight() {
        // the mask constant must underflow to an exact 0.0 attention weight
        let logits = [0.3, MASK_NEG, -0.2];
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|x| (x - mx).exp()).collect();
        assert_eq!(e[1], 0.0);
    }
}
