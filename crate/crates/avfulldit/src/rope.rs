//! Rotary positional encodings with audio/video synchronization rescaling.
//!
//! Video and audio latent frames cover different spans of real time. With
//! integer token indices on both sides, tokens at the same wall-clock instant
//! carry different rotary phases. The `shrink_audio` variant divides audio
//! indices by the frame-duration ratio τ = Δt_v/Δt_a so that video index p and
//! audio index τ·p share the same phase; `expand_video` multiplies video
//! indices by τ instead, which aligns the same pairs at a different scale.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_ROPE_BASE: f64 = 10000.0;

/// Temporal geometry of the two latent streams.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncSpec {
    /// Seconds of real time covered by one video latent frame.
    pub delta_t_video: f64,
    /// Seconds of real time covered by one audio latent frame.
    pub delta_t_audio: f64,
}

impl SyncSpec {
    pub fn new(delta_t_video: f64, delta_t_audio: f64) -> Result<Self> {
        if !(delta_t_video > 0.0) || !(delta_t_audio > 0.0) {
            return Err(Error::Config(format!(
                "latent frame durations must be positive, got video {delta_t_video}, audio {delta_t_audio}"
            )));
        }
        Ok(SyncSpec { delta_t_video, delta_t_audio })
    }

    /// τ = Δt_v / Δt_a, always recomputed from its parts.
    pub fn tau(&self) -> f64 {
        self.delta_t_video / self.delta_t_audio
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RopeVariant {
    /// Integer indices on both modalities (unaligned).
    Vanilla,
    /// Audio indices divided by τ so they land on the video scale.
    ShrinkAudio,
    /// Video indices multiplied by τ so they land on the audio scale.
    ExpandVideo,
}

impl RopeVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(RopeVariant::Vanilla),
            "shrink_audio" => Ok(RopeVariant::ShrinkAudio),
            "expand_video" => Ok(RopeVariant::ExpandVideo),
            other => Err(Error::Config(format!(
                "unknown rope variant {other:?} (expected vanilla | shrink_audio | expand_video)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RopeVariant::Vanilla => "vanilla",
            RopeVariant::ShrinkAudio => "shrink_audio",
            RopeVariant::ExpandVideo => "expand_video",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RopeConfig {
    pub head_dim: usize,
    pub base: f64,
    pub variant: RopeVariant,
}

impl RopeConfig {
    pub fn new(head_dim: usize, base: f64, variant: RopeVariant) -> Result<Self> {
        if head_dim == 0 || head_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "rope head_dim must be even and positive, got {head_dim}"
            )));
        }
        Ok(RopeConfig { head_dim, base, variant })
    }
}

/// Phase angles for one position: angle_i = position / base^(2i / head_dim),
/// one angle per feature pair.
pub fn rope_phase(position: f64, cfg: &RopeConfig) -> Vec<f64> {
    let half = cfg.head_dim / 2;
    (0..half)
        .map(|i| position / cfg.base.powf(2.0 * i as f64 / cfg.head_dim as f64))
        .collect()
}

/// Positions for video latent frames. Integer indices, except `expand_video`
/// multiplies them by τ.
pub fn video_positions(num_latent_frames: usize, sync: &SyncSpec, variant: RopeVariant) -> Vec<f64> {
    let tau = sync.tau();
    (0..num_latent_frames)
        .map(|i| match variant {
            RopeVariant::ExpandVideo => i as f64 * tau,
            _ => i as f64,
        })
        .collect()
}

/// Positions for audio latent frames. Integer indices, except `shrink_audio`
/// divides them by τ.
pub fn audio_positions(num_latent_frames: usize, sync: &SyncSpec, variant: RopeVariant) -> Vec<f64> {
    let tau = sync.tau();
    (0..num_latent_frames)
        .map(|i| match variant {
            RopeVariant::ShrinkAudio => i as f64 / tau,
            _ => i as f64,
        })
        .collect()
}

/// Row-major `L x (head_dim/2)` cos/sin tables for a position vector, in the
/// layout the graph's rope op consumes.
pub fn rope_tables(positions: &[f64], cfg: &RopeConfig) -> (Vec<f64>, Vec<f64>) {
    let half = cfg.head_dim / 2;
    let mut cos = Vec::with_capacity(positions.len() * half);
    let mut sin = Vec::with_capacity(positions.len() * half);
    for &p in positions {
        for angle in rope_phase(p, cfg) {
            cos.push(angle.cos());
            sin.push(angle.sin());
        }
    }
    (cos, sin)
}

/// Rotate `[L, heads, head_dim]` tokens by their positions' phases.
/// Consecutive feature pairs (2i, 2i+1) rotate by angle_i.
pub fn apply_rope(tokens: &Tensor, positions: &[f64], cfg: &RopeConfig) -> Result<Tensor> {
    let shape = tokens.shape();
    if shape.len() != 3 || shape[2] != cfg.head_dim {
        return Err(Error::InvalidDim {
            op: "apply_rope",
            msg: format!(
                "expected [L, heads, {}], got {:?}",
                cfg.head_dim, shape
            ),
        });
    }
    if positions.len() != shape[0] {
        return Err(Error::InvalidDim {
            op: "apply_rope",
            msg: format!(
                "positions length {} does not match sequence length {}",
                positions.len(),
                shape[0]
            ),
        });
    }
    let (l, h, d) = (shape[0], shape[1], shape[2]);
    let half = d / 2;
    let (cos, sin) = rope_tables(positions, cfg);
    let src = tokens.data();
    let mut out = vec![0.0; src.len()];
    for t in 0..l {
        for head in 0..h {
            let base = (t * h + head) * d;
            for p in 0..half {
                let (c, s) = (cos[t * half + p], sin[t * half + p]);
                let x0 = src[base + 2 * p];
                let x1 = src[base + 2 * p + 1];
                out[base + 2 * p] = x0 * c - x1 * s;
                out[base + 2 * p + 1] = x0 * s + x1 * c;
            }
        }
    }
    Tensor::new(shape.to_vec(), out)
}
