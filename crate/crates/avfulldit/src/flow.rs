//! Rectified-flow training and Euler sampling.
//!
//! Forward process: `x_t = (1−t)·x0 + t·ε`, regression target `v = ε − x0`.
//! Sampling integrates from t=1 (pure noise) down to t=0 with explicit Euler
//! steps `x ← x − Δt·v̂(x, t)`. Guidance mixes a conditioned and a
//! null-conditioned velocity per modality; scale 1 short-circuits to the
//! conditioned branch exactly (no negative forward is run), scale 0 to the
//! null branch.

use indexmap::IndexMap;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::model::{Model, ModelKind};
use crate::optim::AdamW;
use crate::tensor::{fnv1a64, Tensor};

/// Validation always scores this fixed timestep grid.
pub const VALIDATION_T_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// A noised training example.
#[derive(Debug, Clone)]
pub struct NoisySample {
    pub x_t: Tensor,
    pub noise: Tensor,
    pub target_v: Tensor,
}

/// Linear interpolation toward noise plus the velocity target.
pub fn make_noisy(x0: &Tensor, noise: &Tensor, t: f64) -> Result<NoisySample> {
    if x0.shape() != noise.shape() {
        return Err(Error::ShapeMismatch {
            op: "make_noisy",
            lhs: x0.shape().to_vec(),
            rhs: noise.shape().to_vec(),
        });
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Contract(format!("timestep {t} outside [0,1]")));
    }
    let n = x0.numel();
    let mut x_t = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for i in 0..n {
        let x = x0.data()[i];
        let e = noise.data()[i];
        x_t.push((1.0 - t) * x + t * e);
        v.push(e - x);
    }
    Ok(NoisySample {
        x_t: Tensor::new(x0.shape().to_vec(), x_t)?,
        noise: noise.clone(),
        target_v: Tensor::new(x0.shape().to_vec(), v)?,
    })
}

/// Standard-normal tensor from the given stream.
pub fn noise_like<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

/// Per-modality loss weights.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub video: f64,
    pub audio: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { video: 1.0, audio: 1.0 }
    }
}

/// Guidance scales and the null descriptors used for the negative branch.
#[derive(Debug, Clone)]
pub struct GuidanceSpec {
    pub s_video: f64,
    pub s_audio: f64,
    pub null_video: Vec<usize>,
    pub null_audio: Vec<usize>,
}

impl Default for GuidanceSpec {
    fn default() -> Self {
        GuidanceSpec { s_video: 5.0, s_audio: 4.5, null_video: vec![0], null_audio: vec![0] }
    }
}

/// Scalar statistics for one optimization or validation pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss_video: f64,
    pub loss_audio: f64,
    pub loss: f64,
}

/// One clip of a joint training batch (borrowed views).
#[derive(Debug, Clone, Copy)]
pub struct ClipBatchItem<'a> {
    pub x0_video: &'a Tensor,
    pub x0_audio: &'a Tensor,
    pub desc_video: &'a [usize],
    pub desc_audio: &'a [usize],
}

/// One clip of a single-modality batch.
#[derive(Debug, Clone, Copy)]
pub struct MonoItem<'a> {
    pub x0: &'a Tensor,
    pub desc: &'a [usize],
}

fn collect_grads(g: &Graph, b: &crate::model::Binding) -> IndexMap<String, Tensor> {
    let mut grads = IndexMap::new();
    for (name, var) in b.names() {
        if let Some(gr) = g.grad(*var) {
            grads.insert(name.clone(), gr);
        }
    }
    grads
}

/// One AdamW step on a joint model. Per item the stream is consumed in a
/// fixed order — t, video noise, audio noise, condition-drop draw — so a
/// seeded stream reproduces the step exactly. With probability `null_prob`
/// both descriptors are replaced by the guidance nulls (classifier-free
/// negatives).
#[allow(clippy::too_many_arguments)]
pub fn train_step_joint<R: Rng>(
    model: &mut Model,
    opt: &mut AdamW,
    items: &[ClipBatchItem],
    weights: &LossWeights,
    null_prob: f64,
    null_video: &[usize],
    null_audio: &[usize],
    rng: &mut R,
) -> Result<StepStats> {
    if items.is_empty() {
        return Err(Error::Contract("training batch must be non-empty".into()));
    }
    if model.kind != ModelKind::Joint {
        return Err(Error::Contract("train_step_joint needs a joint model".into()));
    }
    let mut g = Graph::new();
    let b = model.bind(&mut g, true);
    let mut total: Option<Var> = None;
    let mut sum_v = 0.0;
    let mut sum_a = 0.0;
    for item in items {
        let t: f64 = rng.gen();
        let noise_v = noise_like(item.x0_video.shape(), rng);
        let noise_a = noise_like(item.x0_audio.shape(), rng);
        let drop: f64 = rng.gen();
        let nv = make_noisy(item.x0_video, &noise_v, t)?;
        let na = make_noisy(item.x0_audio, &noise_a, t)?;
        let (cv, ca) = if drop < null_prob {
            (null_video, null_audio)
        } else {
            (item.desc_video, item.desc_audio)
        };
        let (pv, pa) = model.forward_joint_vars(&mut g, &b, &nv.x_t, &na.x_t, cv, ca, t, false)?;
        let tv = g.constant(&nv.target_v);
        let ta = g.constant(&na.target_v);
        let lv = g.mse(pv, tv)?;
        let la = g.mse(pa, ta)?;
        sum_v += g.data(lv)[0];
        sum_a += g.data(la)[0];
        let wlv = g.scale(lv, weights.video)?;
        let wla = g.scale(la, weights.audio)?;
        let li = g.add(wlv, wla)?;
        total = Some(match total {
            None => li,
            Some(acc) => g.add(acc, li)?,
        });
    }
    let n = items.len() as f64;
    let total = g.scale(total.expect("non-empty batch"), 1.0 / n)?;
    g.backward(total)?;
    let grads = collect_grads(&g, &b);
    let loss = g.data(total)[0];
    opt.step(&mut model.params, &grads)?;
    Ok(StepStats { loss_video: sum_v / n, loss_audio: sum_a / n, loss })
}

/// Single-modality counterpart (video-only or audio-only twins). Stream
/// order per item: t, noise, condition-drop draw.
pub fn train_step_mono<R: Rng>(
    model: &mut Model,
    opt: &mut AdamW,
    items: &[MonoItem],
    null_desc: &[usize],
    null_prob: f64,
    rng: &mut R,
) -> Result<StepStats> {
    if items.is_empty() {
        return Err(Error::Contract("training batch must be non-empty".into()));
    }
    let mut g = Graph::new();
    let b = model.bind(&mut g, true);
    let mut total: Option<Var> = None;
    let mut sum = 0.0;
    for item in items {
        let t: f64 = rng.gen();
        let noise = noise_like(item.x0.shape(), rng);
        let drop: f64 = rng.gen();
        let ns = make_noisy(item.x0, &noise, t)?;
        let desc = if drop < null_prob { null_desc } else { item.desc };
        let pred = match model.kind {
            ModelKind::VideoOnly => model.forward_video_vars(&mut g, &b, &ns.x_t, desc, t)?,
            ModelKind::AudioOnly => model.forward_audio_vars(&mut g, &b, &ns.x_t, desc, t)?,
            ModelKind::Joint => {
                return Err(Error::Contract("train_step_mono needs a single-modality model".into()))
            }
        };
        let tgt = g.constant(&ns.target_v);
        let l = g.mse(pred, tgt)?;
        sum += g.data(l)[0];
        total = Some(match total {
            None => l,
            Some(acc) => g.add(acc, l)?,
        });
    }
    let n = items.len() as f64;
    let total = g.scale(total.expect("non-empty batch"), 1.0 / n)?;
    g.backward(total)?;
    let grads = collect_grads(&g, &b);
    let loss = g.data(total)[0];
    opt.step(&mut model.params, &grads)?;
    let (loss_video, loss_audio) = match model.kind {
        ModelKind::VideoOnly => (sum / n, 0.0),
        _ => (0.0, sum / n),
    };
    Ok(StepStats { loss_video, loss_audio, loss })
}

fn axpy(x: &Tensor, c: f64, v: &Tensor) -> Result<Tensor> {
    if x.shape() != v.shape() {
        return Err(Error::ShapeMismatch {
            op: "euler_step",
            lhs: x.shape().to_vec(),
            rhs: v.shape().to_vec(),
        });
    }
    let data = x.data().iter().zip(v.data()).map(|(a, b)| a + c * b).collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Euler integration of a single latent from t=1 to t=0.
pub fn euler_sample<F>(x1: Tensor, n_steps: usize, mut velocity: F) -> Result<Tensor>
where
    F: FnMut(&Tensor, f64) -> Result<Tensor>,
{
    if n_steps == 0 {
        return Err(Error::Contract("sampling needs at least one step".into()));
    }
    let dt = 1.0 / n_steps as f64;
    let mut x = x1;
    for k in 0..n_steps {
        let t = 1.0 - k as f64 * dt;
        let v = velocity(&x, t)?;
        x = axpy(&x, -dt, &v)?;
    }
    Ok(x)
}

/// Euler integration of the coupled (video, audio) pair.
pub fn euler_sample_pair<F>(
    x1_v: Tensor,
    x1_a: Tensor,
    n_steps: usize,
    mut velocity: F,
) -> Result<(Tensor, Tensor)>
where
    F: FnMut(&Tensor, &Tensor, f64) -> Result<(Tensor, Tensor)>,
{
    if n_steps == 0 {
        return Err(Error::Contract("sampling needs at least one step".into()));
    }
    let dt = 1.0 / n_steps as f64;
    let mut xv = x1_v;
    let mut xa = x1_a;
    for k in 0..n_steps {
        let t = 1.0 - k as f64 * dt;
        let (vv, va) = velocity(&xv, &xa, t)?;
        xv = axpy(&xv, -dt, &vv)?;
        xa = axpy(&xa, -dt, &va)?;
    }
    Ok((xv, xa))
}

/// Mix conditioned/null velocities: `neg + s·(pos − neg)`, with scale 1 and
/// scale 0 returning the respective branch untouched.
pub fn guided_velocity(pos: &Tensor, neg: &Tensor, s: f64) -> Result<Tensor> {
    if s == 1.0 {
        return Ok(pos.clone());
    }
    if s == 0.0 {
        return Ok(neg.clone());
    }
    if pos.shape() != neg.shape() {
        return Err(Error::ShapeMismatch {
            op: "guided_velocity",
            lhs: pos.shape().to_vec(),
            rhs: neg.shape().to_vec(),
        });
    }
    let data = pos
        .data()
        .iter()
        .zip(neg.data())
        .map(|(p, n)| n + s * (p - n))
        .collect();
    Tensor::new(pos.shape().to_vec(), data)
}

fn combine(pos: Option<&Tensor>, neg: Option<&Tensor>, s: f64) -> Result<Tensor> {
    match (pos, neg) {
        (Some(p), _) if s == 1.0 => Ok(p.clone()),
        (_, Some(n)) if s == 0.0 => Ok(n.clone()),
        (Some(p), Some(n)) => guided_velocity(p, n, s),
        _ => Err(Error::Contract("guidance branch missing a forward pass".into())),
    }
}

/// Draw noise and integrate a joint sample. The stream draws the video
/// latent first, then the audio latent, so a video-only sampler with the
/// same seed starts from the identical video noise.
pub fn sample_joint(
    model: &Model,
    c_v: &[usize],
    c_a: &[usize],
    guidance: &GuidanceSpec,
    n_steps: usize,
    seed: u64,
) -> Result<(Tensor, Tensor)> {
    if model.kind != ModelKind::Joint {
        return Err(Error::Contract("sample_joint needs a joint model".into()));
    }
    let cfg = &model.config;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x1v = noise_like(&[cfg.f_v, cfg.c_lat_v], &mut rng);
    let x1a = noise_like(&[cfg.f_a, cfg.c_lat_a], &mut rng);
    let need_pos = guidance.s_video != 0.0 || guidance.s_audio != 0.0;
    let need_neg = guidance.s_video != 1.0 || guidance.s_audio != 1.0;
    euler_sample_pair(x1v, x1a, n_steps, |xv, xa, t| {
        let pos = if need_pos {
            Some(model.forward_joint(xv, xa, c_v, c_a, t, false)?)
        } else {
            None
        };
        let neg = if need_neg {
            Some(model.forward_joint(xv, xa, &guidance.null_video, &guidance.null_audio, t, false)?)
        } else {
            None
        };
        let vv = combine(
            pos.as_ref().map(|p| &p.0),
            neg.as_ref().map(|n| &n.0),
            guidance.s_video,
        )?;
        let va = combine(
            pos.as_ref().map(|p| &p.1),
            neg.as_ref().map(|n| &n.1),
            guidance.s_audio,
        )?;
        Ok((vv, va))
    })
}

/// Video-only sampling for the twin (or any model exposing the video tower).
pub fn sample_video(
    model: &Model,
    c_v: &[usize],
    s: f64,
    null_video: &[usize],
    n_steps: usize,
    seed: u64,
) -> Result<Tensor> {
    let cfg = &model.config;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x1 = noise_like(&[cfg.f_v, cfg.c_lat_v], &mut rng);
    euler_sample(x1, n_steps, |x, t| {
        let pos = if s != 0.0 { Some(model.forward_video_only(x, c_v, t)?) } else { None };
        let neg = if s != 1.0 { Some(model.forward_video_only(x, null_video, t)?) } else { None };
        combine(pos.as_ref(), neg.as_ref(), s)
    })
}

/// Audio-only sampling for the audio twin.
pub fn sample_audio(
    model: &Model,
    c_a: &[usize],
    s: f64,
    null_audio: &[usize],
    n_steps: usize,
    seed: u64,
) -> Result<Tensor> {
    let cfg = &model.config;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x1 = noise_like(&[cfg.f_a, cfg.c_lat_a], &mut rng);
    euler_sample(x1, n_steps, |x, t| {
        let pos = if s != 0.0 { Some(model.forward_audio_only(x, c_a, t)?) } else { None };
        let neg = if s != 1.0 { Some(model.forward_audio_only(x, null_audio, t)?) } else { None };
        combine(pos.as_ref(), neg.as_ref(), s)
    })
}

fn mean_sq_diff(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "validation_mse",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let n = a.numel() as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

fn val_noise(shape: &[usize], noise_seed: u64, clip_ix: usize, t_ix: usize) -> Tensor {
    let tag = format!("val.clip{clip_ix}.t{t_ix}");
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed ^ fnv1a64(tag.as_bytes()));
    noise_like(shape, &mut rng)
}

/// Validation loss on the fixed timestep grid, with per-(clip, t) noise
/// derived from `noise_seed` — bit-reproducible across runs and independent
/// of evaluation order.
pub fn validation_loss_joint(
    model: &Model,
    items: &[ClipBatchItem],
    weights: &LossWeights,
    noise_seed: u64,
) -> Result<StepStats> {
    if items.is_empty() {
        return Err(Error::Contract("validation set must be non-empty".into()));
    }
    let mut sum_v = 0.0;
    let mut sum_a = 0.0;
    let mut count = 0usize;
    for (ci, item) in items.iter().enumerate() {
        for (ti, &t) in VALIDATION_T_GRID.iter().enumerate() {
            let noise_v = val_noise(item.x0_video.shape(), noise_seed, ci, ti);
            let noise_a = val_noise(item.x0_audio.shape(), noise_seed.wrapping_add(1), ci, ti);
            let nv = make_noisy(item.x0_video, &noise_v, t)?;
            let na = make_noisy(item.x0_audio, &noise_a, t)?;
            let (pv, pa) =
                model.forward_joint(&nv.x_t, &na.x_t, item.desc_video, item.desc_audio, t, false)?;
            sum_v += mean_sq_diff(&pv, &nv.target_v)?;
            sum_a += mean_sq_diff(&pa, &na.target_v)?;
            count += 1;
        }
    }
    let n = count as f64;
    Ok(StepStats {
        loss_video: sum_v / n,
        loss_audio: sum_a / n,
        loss: weights.video * sum_v / n + weights.audio * sum_a / n,
    })
}

/// Single-modality validation loss on the same grid and noise schedule.
pub fn validation_loss_mono(model: &Model, items: &[MonoItem], noise_seed: u64) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Contract("validation set must be non-empty".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (ci, item) in items.iter().enumerate() {
        for (ti, &t) in VALIDATION_T_GRID.iter().enumerate() {
            let noise = val_noise(item.x0.shape(), noise_seed, ci, ti);
            let ns = make_noisy(item.x0, &noise, t)?;
            let pred = match model.kind {
                ModelKind::AudioOnly => model.forward_audio_only(&ns.x_t, item.desc, t)?,
                _ => model.forward_video_only(&ns.x_t, item.desc, t)?,
            };
            sum += mean_sq_diff(&pred, &ns.target_v)?;
            count += 1;
        }
    }
    Ok(sum / count as f64)
}
