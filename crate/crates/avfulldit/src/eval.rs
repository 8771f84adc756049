//! Clip-level metrics and report aggregation.
//!
//! All three metrics run on decoded (physical-unit) tensors: the occupancy
//! grid `[f_v, cells]` and the audio feature track `[f_a, 4]`. A wrapper
//! scores encoded latents by decoding first, so the same code paths serve
//! ground-truth clips and model samples.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::world::{decode_audio, decode_video, Encoders, WorldConfig, AUDIO_FEATURES};

/// Decoded values at or above this count as "occupied" / "onset".
pub const OCC_THRESHOLD: f64 = 0.5;

/// Cross-correlation search half-width, in audio frames.
pub const MAX_LAG_FRAMES: usize = 8;

/// Mean L2 of consecutive-frame differences, normalized by sqrt(cells) so
/// the value reads as per-cell RMS change per frame step.
pub fn motion_magnitude(occ: &Tensor) -> Result<f64> {
    let shape = occ.shape();
    if shape.len() != 2 || shape[0] < 2 {
        return Err(Error::InvalidDim {
            op: "motion_magnitude",
            msg: format!("need [frames >= 2, cells], got {shape:?}"),
        });
    }
    let (f, c) = (shape[0], shape[1]);
    let data = occ.data();
    let mut total = 0.0;
    for t in 1..f {
        let mut sq = 0.0;
        for j in 0..c {
            let d = data[t * c + j] - data[(t - 1) * c + j];
            sq += d * d;
        }
        total += sq.sqrt();
    }
    Ok(total / ((f - 1) as f64) / (c as f64).sqrt())
}

/// Fraction of clicks whose video frame (±1) has the floor cell occupied.
/// Returns `None` when there are no clicks to check.
pub fn contact_score(occ: &Tensor, clicks: &[f64], world: &WorldConfig) -> Option<f64> {
    if clicks.is_empty() {
        return None;
    }
    let f_v = occ.shape()[0];
    let cells = occ.shape()[1];
    let dt_v = world.delta_t_video();
    let mut hits = 0usize;
    for &t in clicks {
        let frame = ((t / dt_v).floor() as isize).clamp(0, f_v as isize - 1);
        let lo = (frame - 1).max(0) as usize;
        let hi = ((frame + 1) as usize).min(f_v - 1);
        let hit = (lo..=hi).any(|f| occ.data()[f * cells] >= OCC_THRESHOLD);
        if hit {
            hits += 1;
        }
    }
    Some(hits as f64 / clicks.len() as f64)
}

/// Click times read off a decoded audio track: centers of frames whose
/// onset channel crosses the threshold.
pub fn click_times_from_audio(audio: &Tensor, world: &WorldConfig) -> Vec<f64> {
    let f_a = audio.shape()[0];
    let dt = world.delta_t_audio();
    let mut out = Vec::new();
    for f in 0..f_a {
        if audio.data()[f * AUDIO_FEATURES + 2] >= OCC_THRESHOLD {
            out.push((f as f64 + 0.5) * dt);
        }
    }
    out
}

/// Audio-video offset in seconds, from the cross-correlation of the video
/// floor-contact track (upsampled to audio rate) with the audio click-
/// amplitude track. Positive means audio lags video. Lags are visited in
/// order of increasing magnitude and only a strictly larger correlation
/// replaces the argmax, so ties resolve toward zero. Returns `None` when
/// either track is all zero.
pub fn sync_offset(occ: &Tensor, audio: &Tensor, world: &WorldConfig) -> Result<Option<f64>> {
    let f_v = occ.shape()[0];
    let cells = occ.shape()[1];
    let f_a = audio.shape()[0];
    if f_a % f_v != 0 {
        return Err(Error::InvalidDim {
            op: "sync_offset",
            msg: format!("audio frames {f_a} not a multiple of video frames {f_v}"),
        });
    }
    let ratio = f_a / f_v;
    let video_track: Vec<f64> = (0..f_a)
        .map(|af| {
            if occ.data()[(af / ratio) * cells] >= OCC_THRESHOLD {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let audio_track: Vec<f64> = (0..f_a).map(|f| audio.data()[f * AUDIO_FEATURES + 3]).collect();
    if video_track.iter().all(|&v| v == 0.0) || audio_track.iter().all(|&v| v == 0.0) {
        return Ok(None);
    }
    let corr = |lag: isize| -> f64 {
        let mut c = 0.0;
        for t in 0..f_a as isize {
            let u = t + lag;
            if u >= 0 && u < f_a as isize {
                c += video_track[t as usize] * audio_track[u as usize];
            }
        }
        c
    };
    let mut best_lag = 0isize;
    let mut best = corr(0);
    for k in 1..=MAX_LAG_FRAMES as isize {
        for lag in [-k, k] {
            let c = corr(lag);
            if c > best {
                best = c;
                best_lag = lag;
            }
        }
    }
    Ok(Some(best_lag as f64 * world.delta_t_audio()))
}

/// Per-clip metric values; `None` marks a metric with nothing to measure.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipScores {
    pub motion: Option<f64>,
    pub contact: Option<f64>,
    pub sync: Option<f64>,
}

/// Decode a latent pair and score it. Ground-truth click times are used
/// when given; otherwise clicks are read off the decoded audio onsets.
pub fn score_latents(
    video_latent: &Tensor,
    audio_latent: &Tensor,
    clicks: Option<&[f64]>,
    world: &WorldConfig,
    enc: &Encoders,
) -> Result<ClipScores> {
    let occ = decode_video(video_latent, enc)?;
    let audio = decode_audio(audio_latent, enc)?;
    let owned;
    let clicks: &[f64] = match clicks {
        Some(c) => c,
        None => {
            owned = click_times_from_audio(&audio, world);
            &owned
        }
    };
    Ok(ClipScores {
        motion: Some(motion_magnitude(&occ)?),
        contact: contact_score(&occ, clicks, world),
        sync: sync_offset(&occ, &audio, world)?,
    })
}

// ── aggregation ────────────────────────────────────────────────────────

/// One report row: `subset|metric|n|mean|std`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportLine {
    pub subset: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

impl ReportLine {
    pub fn emit(&self) -> String {
        format!("{}|{}|{}|{:?}|{:?}", self.subset, self.metric, self.n, self.mean, self.std)
    }

    pub fn parse(line: &str) -> Result<ReportLine> {
        let parts: Vec<&str> = line.split('|').collect();
        if parts.len() != 5 {
            return Err(Error::Config(format!(
                "report line has {} fields, expected 5: {line:?}",
                parts.len()
            )));
        }
        Ok(ReportLine {
            subset: parts[0].to_string(),
            metric: parts[1].to_string(),
            n: parts[2]
                .parse()
                .map_err(|_| Error::Config(format!("bad count in report line {line:?}")))?,
            mean: parts[3]
                .parse()
                .map_err(|_| Error::Config(format!("bad mean in report line {line:?}")))?,
            std: parts[4]
                .parse()
                .map_err(|_| Error::Config(format!("bad std in report line {line:?}")))?,
        })
    }
}

pub const METRIC_NAMES: [&str; 3] = ["motion_magnitude", "contact_score", "sync_offset"];

#[derive(Debug, Clone, Copy, Default)]
struct Acc {
    n: usize,
    sum: f64,
    sumsq: f64,
}

impl Acc {
    fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.sumsq += v * v;
    }

    fn line(&self, subset: &str, metric: &str) -> ReportLine {
        let (mean, std) = if self.n == 0 {
            (0.0, 0.0)
        } else {
            let mean = self.sum / self.n as f64;
            let var = (self.sumsq / self.n as f64 - mean * mean).max(0.0);
            (mean, var.sqrt())
        };
        ReportLine { subset: subset.to_string(), metric: metric.to_string(), n: self.n, mean, std }
    }
}

/// Aggregate per-clip scores into report rows: one row per
/// (subset, metric) in subset-alphabetical order, then an `all` row per
/// metric computed from the pooled sums, so the overall mean equals
/// Σ nᵢ·meanᵢ / Σ nᵢ exactly.
pub fn score_set(items: &[(String, ClipScores)]) -> Vec<ReportLine> {
    let mut subsets: Vec<String> = items.iter().map(|(s, _)| s.clone()).collect();
    subsets.sort();
    subsets.dedup();

    let mut lines = Vec::new();
    let mut all = [Acc::default(); 3];
    let mut per: std::collections::BTreeMap<String, [Acc; 3]> = subsets
        .iter()
        .map(|s| (s.clone(), [Acc::default(); 3]))
        .collect();
    for (subset, scores) in items {
        let accs = per.get_mut(subset).expect("subset registered");
        for (i, v) in [scores.motion, scores.contact, scores.sync].iter().enumerate() {
            if let Some(v) = v {
                accs[i].push(*v);
                all[i].push(*v);
            }
        }
    }
    for subset in &subsets {
        let accs = &per[subset];
        for (i, name) in METRIC_NAMES.iter().enumerate() {
            lines.push(accs[i].line(subset, name));
        }
    }
    for (i, name) in METRIC_NAMES.iter().enumerate() {
        lines.push(all[i].line("all", name));
    }
    lines
}
