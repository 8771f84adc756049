//! Synthetic causal audio-video world: a ball drops in a 1-D column, every
//! floor contact emits a click. Video is a column-occupancy grid, audio a
//! small per-frame feature track; both are pushed through fixed invertible
//! linear encoders so models train in latent space while evaluation can
//! decode back to physical units.
//!
//! All kinematics are closed form. A drop from height `h` first hits the
//! floor at `T0 = sqrt(2h/g)`; with restitution `e` the k-th contact is at
//!
//! ```text
//! t_k = T0 · (1 + 2·Σ_{i=1..k−1} e^i)
//! ```
//!
//! and the k-th click amplitude is `e^(k−1)·sqrt(h/h_max)` (impact speed,
//! normalized). Contacts are enumerated until the amplitude falls under
//! `AMP_FLOOR`; past that the ball rests on the floor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

// ── descriptor vocabulary ──────────────────────────────────────────────

pub const SYM_NULL: usize = 0;
pub const SYM_SCEN_BOUNCE: usize = 1;
pub const SYM_SCEN_DRIFT: usize = 2;
pub const SYM_SCEN_AMBIENT: usize = 3;
pub const SYM_HEIGHT_LOW: usize = 4;
pub const SYM_HEIGHT_MID: usize = 5;
pub const SYM_HEIGHT_HIGH: usize = 6;
pub const SYM_CONTACT_NO: usize = 7;
pub const SYM_CONTACT_YES: usize = 8;
pub const SYM_CLICKS_NO: usize = 9;
pub const SYM_CLICKS_YES: usize = 10;
pub const SYM_COUNT_ZERO: usize = 11;
pub const SYM_COUNT_ONE: usize = 12;
pub const SYM_COUNT_FEW: usize = 13;
pub const SYM_COUNT_MANY: usize = 14;

/// Total symbol count (one spare slot above the last used symbol).
pub const DESCRIPTOR_VOCAB: usize = 16;

pub fn symbol_name(sym: usize) -> &'static str {
    match sym {
        SYM_NULL => "null",
        SYM_SCEN_BOUNCE => "bouncing_ball",
        SYM_SCEN_DRIFT => "silent_drift",
        SYM_SCEN_AMBIENT => "ambient_only",
        SYM_HEIGHT_LOW => "height_low",
        SYM_HEIGHT_MID => "height_mid",
        SYM_HEIGHT_HIGH => "height_high",
        SYM_CONTACT_NO => "contact_no",
        SYM_CONTACT_YES => "contact_yes",
        SYM_CLICKS_NO => "clicks_no",
        SYM_CLICKS_YES => "clicks_yes",
        SYM_COUNT_ZERO => "count_zero",
        SYM_COUNT_ONE => "count_one",
        SYM_COUNT_FEW => "count_few",
        SYM_COUNT_MANY => "count_many",
        _ => "unused",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    BouncingBall,
    SilentDrift,
    AmbientOnly,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::BouncingBall => "bouncing_ball",
            Scenario::SilentDrift => "silent_drift",
            Scenario::AmbientOnly => "ambient_only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bouncing_ball" => Ok(Scenario::BouncingBall),
            "silent_drift" => Ok(Scenario::SilentDrift),
            "ambient_only" => Ok(Scenario::AmbientOnly),
            other => Err(Error::Config(format!("unknown scenario {other:?}"))),
        }
    }

    pub fn symbol(self) -> usize {
        match self {
            Scenario::BouncingBall => SYM_SCEN_BOUNCE,
            Scenario::SilentDrift => SYM_SCEN_DRIFT,
            Scenario::AmbientOnly => SYM_SCEN_AMBIENT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeightBucket {
    Low,
    Mid,
    High,
}

impl HeightBucket {
    pub fn symbol(self) -> usize {
        match self {
            HeightBucket::Low => SYM_HEIGHT_LOW,
            HeightBucket::Mid => SYM_HEIGHT_MID,
            HeightBucket::High => SYM_HEIGHT_HIGH,
        }
    }

    /// Fraction-of-h_max range the start height is drawn from.
    fn range(self) -> (f64, f64) {
        match self {
            HeightBucket::Low => (0.20, 0.40),
            HeightBucket::Mid => (0.45, 0.65),
            HeightBucket::High => (0.70, 0.95),
        }
    }
}

/// Build the 3-symbol video descriptor.
pub fn video_descriptor(scenario: Scenario, height: HeightBucket, contact_visible: bool) -> Vec<usize> {
    vec![
        scenario.symbol(),
        height.symbol(),
        if contact_visible { SYM_CONTACT_YES } else { SYM_CONTACT_NO },
    ]
}

/// Build the 2-symbol audio descriptor.
pub fn audio_descriptor(click_count: usize) -> Vec<usize> {
    let present = if click_count > 0 { SYM_CLICKS_YES } else { SYM_CLICKS_NO };
    let bucket = match click_count {
        0 => SYM_COUNT_ZERO,
        1 => SYM_COUNT_ONE,
        2..=3 => SYM_COUNT_FEW,
        _ => SYM_COUNT_MANY,
    };
    vec![present, bucket]
}

/// Mismatch a video descriptor for the corrupted-conditioning ablation:
/// the clip is re-labelled as contactless drift. Applying it twice gives
/// the same result as applying it once.
pub fn corrupt_video_descriptor(desc: &[usize]) -> Result<Vec<usize>> {
    if desc.len() != 3 {
        return Err(Error::Contract(format!(
            "video descriptor has 3 symbols, got {}",
            desc.len()
        )));
    }
    Ok(vec![SYM_SCEN_DRIFT, desc[1], SYM_CONTACT_NO])
}

// ── world configuration ────────────────────────────────────────────────

/// Physics, timing, and encoding parameters for clip generation.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub gravity: f64,
    pub h_max: f64,
    pub clip_seconds: f64,
    /// Raw video frame rate; latent video pools `temporal_factor` raw frames.
    pub fps: usize,
    pub temporal_factor: usize,
    /// Audio latent frames per clip.
    pub f_a: usize,
    /// Vertical occupancy cells (= video latent channels).
    pub cells: usize,
    /// Restitution is drawn per clip from this range.
    pub restitution: (f64, f64),
    /// Click energy decay constant, seconds.
    pub click_decay: f64,
    /// Ambient noise-floor level for ambient_only clips.
    pub ambient_level: f64,
    /// Seed for the fixed invertible encoders.
    pub encoder_seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            gravity: 9.8,
            h_max: 1.0,
            clip_seconds: 2.0,
            fps: 8,
            temporal_factor: 2,
            f_a: 32,
            cells: 16,
            restitution: (0.35, 0.70),
            click_decay: 0.08,
            ambient_level: 0.02,
            encoder_seed: 7,
        }
    }
}

/// Ignore clicks quieter than this fraction of the loudest possible click.
pub const AMP_FLOOR: f64 = 0.05;

/// Audio latent channels: [env at frame center, env at frame start,
/// onset flag, summed click amplitude in frame].
pub const AUDIO_FEATURES: usize = 4;

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gravity > 0.0 && self.h_max > 0.0 && self.clip_seconds > 0.0) {
            return Err(Error::Config("gravity, h_max, clip_seconds must be positive".into()));
        }
        if self.fps == 0 || self.temporal_factor == 0 || self.f_a == 0 || self.cells == 0 {
            return Err(Error::Config("frame counts must be nonzero".into()));
        }
        let raw = self.fps as f64 * self.clip_seconds;
        if raw.fract() != 0.0 || (raw as usize) % self.temporal_factor != 0 {
            return Err(Error::Config(format!(
                "fps·clip_seconds = {raw} must be a whole multiple of temporal_factor {}",
                self.temporal_factor
            )));
        }
        let (lo, hi) = self.restitution;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return Err(Error::Config(format!(
                "restitution range ({lo}, {hi}) must satisfy 0 < lo <= hi < 1"
            )));
        }
        if !(self.click_decay > 0.0) {
            return Err(Error::Config("click_decay must be positive".into()));
        }
        Ok(())
    }

    /// Latent video frames per clip.
    pub fn f_v(&self) -> usize {
        (self.fps as f64 * self.clip_seconds) as usize / self.temporal_factor
    }

    /// Seconds per latent video frame.
    pub fn delta_t_video(&self) -> f64 {
        self.temporal_factor as f64 / self.fps as f64
    }

    /// Seconds per latent audio frame.
    pub fn delta_t_audio(&self) -> f64 {
        self.clip_seconds / self.f_a as f64
    }
}

// ── kinematics ─────────────────────────────────────────────────────────

/// Ball trajectory for one clip: release delay, drop height, restitution,
/// and the enumerated contact times/amplitudes.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub h0: f64,
    pub t0: f64,
    pub restitution: f64,
    /// (time, amplitude) per audible contact, in order.
    pub contacts: Vec<(f64, f64)>,
    rest_time: Option<f64>,
    gravity: f64,
}

/// Contact times for a drop at `t0` from `h0`: closed-form geometric series,
/// truncated at the clip end, the amplitude floor, or 64 bounces.
pub fn contact_times(h0: f64, t0: f64, e: f64, gravity: f64, h_max: f64, until: f64) -> Vec<(f64, f64)> {
    let t_first = (2.0 * h0 / gravity).sqrt();
    let base_amp = (h0 / h_max).sqrt();
    let mut out = Vec::new();
    let mut t = t0 + t_first;
    let mut amp = base_amp;
    let mut k = 0usize;
    while t < until && amp >= AMP_FLOOR && k < 64 {
        out.push((t, amp));
        let flight = 2.0 * e.powi(k as i32 + 1) * t_first;
        t += flight;
        amp = base_amp * e.powi(k as i32 + 1);
        k += 1;
    }
    out
}

impl Trajectory {
    pub fn new(h0: f64, t0: f64, e: f64, world: &WorldConfig) -> Self {
        let contacts = contact_times(h0, t0, e, world.gravity, world.h_max, world.clip_seconds);
        // once the remaining bounce amplitude dips under the floor the ball
        // is treated as resting
        let rest_time = {
            let t_first = (2.0 * h0 / world.gravity).sqrt();
            let base_amp = (h0 / world.h_max).sqrt();
            let mut t = t0 + t_first;
            let mut k = 0usize;
            let mut rest = None;
            loop {
                let amp = base_amp * e.powi(k as i32);
                if amp < AMP_FLOOR || k >= 64 {
                    rest = Some(t);
                    break;
                }
                if t >= world.clip_seconds {
                    break;
                }
                t += 2.0 * e.powi(k as i32 + 1) * t_first;
                k += 1;
            }
            rest
        };
        Trajectory { h0, t0, restitution: e, contacts, rest_time, gravity: world.gravity }
    }

    /// Height at absolute clip time `t` (piecewise parabolas).
    pub fn height_at(&self, t: f64) -> f64 {
        if t < self.t0 {
            return self.h0;
        }
        if let Some(rest) = self.rest_time {
            if t >= rest {
                return 0.0;
            }
        }
        let g = self.gravity;
        let t_first = (2.0 * self.h0 / g).sqrt();
        let first_contact = self.t0 + t_first;
        if t < first_contact {
            let tau = t - self.t0;
            return (self.h0 - 0.5 * g * tau * tau).max(0.0);
        }
        // find the latest contact at or before t (k-th, 0-based)
        let v0 = (2.0 * g * self.h0).sqrt();
        let mut c = first_contact;
        let mut k = 0usize;
        loop {
            let flight = 2.0 * self.restitution.powi(k as i32 + 1) * t_first;
            if t < c + flight || k >= 64 {
                let tau = t - c;
                let v_up = self.restitution.powi(k as i32 + 1) * v0;
                return (v_up * tau - 0.5 * g * tau * tau).max(0.0);
            }
            c += flight;
            k += 1;
        }
    }
}

// ── encoders ───────────────────────────────────────────────────────────

/// Fixed invertible linear encoders shared by every clip of a world.
#[derive(Debug, Clone)]
pub struct Encoders {
    pub video_fwd: Tensor,
    pub video_inv: Tensor,
    pub audio_fwd: Tensor,
    pub audio_inv: Tensor,
}

/// Gauss-Jordan inverse with partial pivoting (square, row-major).
fn invert(mat: &Tensor) -> Result<Tensor> {
    let n = mat.shape()[0];
    if mat.shape() != [n, n] {
        return Err(Error::InvalidDim { op: "invert", msg: format!("not square: {:?}", mat.shape()) });
    }
    let mut a: Vec<f64> = mat.data().to_vec();
    let mut inv: Vec<f64> = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        // pivot
        let mut best = col;
        for r in col + 1..n {
            if a[r * n + col].abs() > a[best * n + col].abs() {
                best = r;
            }
        }
        if a[best * n + col].abs() < 1e-12 {
            return Err(Error::Contract("encoder matrix is singular".into()));
        }
        if best != col {
            for j in 0..n {
                a.swap(col * n + j, best * n + j);
                inv.swap(col * n + j, best * n + j);
            }
        }
        let p = a[col * n + col];
        for j in 0..n {
            a[col * n + j] /= p;
            inv[col * n + j] /= p;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[r * n + col];
            if f != 0.0 {
                for j in 0..n {
                    a[r * n + j] -= f * a[col * n + j];
                    inv[r * n + j] -= f * inv[col * n + j];
                }
            }
        }
    }
    Tensor::new(vec![n, n], inv)
}

/// Latents are kept well below unit scale; small targets speed up early
/// flow-matching descent considerably.
pub const LATENT_SCALE: f64 = 0.5;

fn mixing_matrix(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    // scaled near-identity keeps the inverse well conditioned
    let mut data = vec![0.0; n * n];
    for (i, v) in data.iter_mut().enumerate() {
        let noise: f64 = StandardNormal.sample(rng);
        *v = 0.05 * noise / (n as f64).sqrt();
        if i % (n + 1) == 0 {
            *v += 1.0;
        }
        *v *= LATENT_SCALE;
    }
    Tensor::new(vec![n, n], data).expect("shape matches")
}

impl Encoders {
    pub fn build(world: &WorldConfig) -> Result<Encoders> {
        let mut rng = ChaCha8Rng::seed_from_u64(world.encoder_seed);
        let video_fwd = mixing_matrix(world.cells, &mut rng);
        let audio_fwd = mixing_matrix(AUDIO_FEATURES, &mut rng);
        let video_inv = invert(&video_fwd)?;
        let audio_inv = invert(&audio_fwd)?;
        Ok(Encoders { video_fwd, video_inv, audio_fwd, audio_inv })
    }
}

fn matmul2(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "encode",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a.data()[i * k + p];
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += av * b.data()[p * n + j];
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

pub fn encode_video(raw: &Tensor, enc: &Encoders) -> Result<Tensor> {
    matmul2(raw, &enc.video_fwd)
}

pub fn decode_video(latent: &Tensor, enc: &Encoders) -> Result<Tensor> {
    matmul2(latent, &enc.video_inv)
}

pub fn encode_audio(raw: &Tensor, enc: &Encoders) -> Result<Tensor> {
    matmul2(raw, &enc.audio_fwd)
}

pub fn decode_audio(latent: &Tensor, enc: &Encoders) -> Result<Tensor> {
    matmul2(latent, &enc.audio_inv)
}

// ── clip generation ────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct ClipSpec {
    pub scenario: Scenario,
    pub height: HeightBucket,
    pub seed: u64,
}

/// One generated clip: encoded latents, descriptors, and ground truth.
#[derive(Debug, Clone)]
pub struct LatentClip {
    pub id: String,
    pub scenario: Scenario,
    pub video: Tensor,
    pub audio: Tensor,
    pub desc_video: Vec<usize>,
    pub desc_audio: Vec<usize>,
    /// Ground-truth contact times, seconds.
    pub contact_times: Vec<f64>,
    /// Loudest click amplitude (manifest volume).
    pub volume: f64,
}

/// Raw (pre-encoder) fields, exposed for oracle tests.
#[derive(Debug, Clone)]
pub struct RawClip {
    pub video_occupancy: Tensor,
    pub audio_features: Tensor,
}

fn cell_of(y: f64, world: &WorldConfig) -> usize {
    let c = ((y / world.h_max) * world.cells as f64).floor() as isize;
    c.clamp(0, world.cells as isize - 1) as usize
}

fn render_video(traj: Option<&Trajectory>, world: &WorldConfig) -> Tensor {
    let f_v = world.f_v();
    let cells = world.cells;
    let mut occ = vec![0.0; f_v * cells];
    if let Some(tr) = traj {
        let raw_frames = (world.fps as f64 * world.clip_seconds) as usize;
        for r in 0..raw_frames {
            // swept coverage: mark every cell the ball passes through during
            // the raw frame, so a contact inside the frame always marks the
            // floor cell (a center sample would miss the brief touch)
            let t_lo = r as f64 / world.fps as f64;
            let t_hi = (r + 1) as f64 / world.fps as f64;
            const SUB: usize = 32;
            let mut y_min = f64::INFINITY;
            let mut y_max = f64::NEG_INFINITY;
            for j in 0..=SUB {
                let t = t_lo + (t_hi - t_lo) * j as f64 / SUB as f64;
                let y = tr.height_at(t);
                y_min = y_min.min(y);
                y_max = y_max.max(y);
            }
            for &(ct, _) in &tr.contacts {
                if ct >= t_lo && ct < t_hi {
                    y_min = 0.0;
                }
            }
            let latent_frame = r / world.temporal_factor;
            // max-pool over the raw frames inside a latent frame
            for c in cell_of(y_min, world)..=cell_of(y_max, world) {
                occ[latent_frame * cells + c] = 1.0;
            }
        }
    }
    Tensor::new(vec![f_v, cells], occ).expect("shape matches")
}

fn render_audio(contacts: &[(f64, f64)], ambient: f64, world: &WorldConfig) -> Tensor {
    let f_a = world.f_a;
    let dt = world.delta_t_audio();
    let lambda = world.click_decay;
    let env = |t: f64| -> f64 {
        let mut e = ambient;
        for &(ct, amp) in contacts {
            if t >= ct {
                e += amp * (-(t - ct) / lambda).exp();
            }
        }
        e
    };
    let mut data = vec![0.0; f_a * AUDIO_FEATURES];
    for f in 0..f_a {
        let start = f as f64 * dt;
        let center = start + dt / 2.0;
        let mut onset = 0.0;
        let mut amp_sum = 0.0;
        for &(ct, amp) in contacts {
            if ct >= start && ct < start + dt {
                onset = 1.0;
                amp_sum += amp;
            }
        }
        data[f * AUDIO_FEATURES] = env(center);
        data[f * AUDIO_FEATURES + 1] = env(start);
        data[f * AUDIO_FEATURES + 2] = onset;
        data[f * AUDIO_FEATURES + 3] = amp_sum;
    }
    Tensor::new(vec![f_a, AUDIO_FEATURES], data).expect("shape matches")
}

/// Generate the raw (pre-encoder) clip for a spec.
pub fn generate_raw(spec: &ClipSpec, world: &WorldConfig) -> Result<(RawClip, Trajectory, Vec<usize>, Vec<usize>, f64)> {
    world.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (lo, hi) = spec.height.range();
    let h0 = world.h_max * rng.gen_range(lo..hi);
    let t0 = rng.gen_range(0.0..0.3);
    let e = rng.gen_range(world.restitution.0..world.restitution.1);

    match spec.scenario {
        Scenario::BouncingBall => {
            let traj = Trajectory::new(h0, t0, e, world);
            let contacts = traj.contacts.clone();
            let video = render_video(Some(&traj), world);
            let audio = render_audio(&contacts, 0.0, world);
            let visible = !contacts.is_empty();
            let desc_v = video_descriptor(spec.scenario, spec.height, visible);
            let desc_a = audio_descriptor(contacts.len());
            let volume = contacts.iter().map(|c| c.1).fold(0.0, f64::max);
            Ok((
                RawClip { video_occupancy: video, audio_features: audio },
                traj,
                desc_v,
                desc_a,
                volume,
            ))
        }
        Scenario::SilentDrift => {
            // constant slow descent that never reaches the floor
            let drift = 0.2 * h0 / world.clip_seconds;
            let mut traj = Trajectory::new(h0, 0.0, e, world);
            traj.contacts.clear();
            traj.rest_time = None;
            // overwrite heights by closure semantics: drift is handled in
            // rendering through a dedicated trajectory-free path
            let f_v = world.f_v();
            let cells = world.cells;
            let mut occ = vec![0.0; f_v * cells];
            let raw_frames = (world.fps as f64 * world.clip_seconds) as usize;
            for r in 0..raw_frames {
                let y_hi = (h0 - drift * (r as f64 / world.fps as f64)).max(0.0);
                let y_lo = (h0 - drift * ((r + 1) as f64 / world.fps as f64)).max(0.0);
                let lf = r / world.temporal_factor;
                for c in cell_of(y_lo, world)..=cell_of(y_hi, world) {
                    occ[lf * cells + c] = 1.0;
                }
            }
            let video = Tensor::new(vec![f_v, cells], occ)?;
            let audio = render_audio(&[], 0.0, world);
            let desc_v = video_descriptor(spec.scenario, spec.height, false);
            let desc_a = audio_descriptor(0);
            Ok((
                RawClip { video_occupancy: video, audio_features: audio },
                traj,
                desc_v,
                desc_a,
                0.0,
            ))
        }
        Scenario::AmbientOnly => {
            let mut traj = Trajectory::new(h0, 0.0, e, world);
            traj.contacts.clear();
            let video = render_video(None, world);
            let audio = render_audio(&[], world.ambient_level, world);
            let desc_v = video_descriptor(spec.scenario, spec.height, false);
            let desc_a = audio_descriptor(0);
            Ok((
                RawClip { video_occupancy: video, audio_features: audio },
                traj,
                desc_v,
                desc_a,
                world.ambient_level,
            ))
        }
    }
}

/// Generate one encoded clip.
pub fn generate_clip(spec: &ClipSpec, world: &WorldConfig, enc: &Encoders) -> Result<LatentClip> {
    let (raw, traj, desc_v, desc_a, volume) = generate_raw(spec, world)?;
    let contact_times: Vec<f64> = match spec.scenario {
        Scenario::BouncingBall => traj.contacts.iter().map(|c| c.0).collect(),
        _ => Vec::new(),
    };
    Ok(LatentClip {
        id: format!("{}-{:016x}", spec.scenario.name(), spec.seed),
        scenario: spec.scenario,
        video: encode_video(&raw.video_occupancy, enc)?,
        audio: encode_audio(&raw.audio_features, enc)?,
        desc_video: desc_v,
        desc_audio: desc_a,
        contact_times,
        volume,
    })
}

// ── manifest and curation ──────────────────────────────────────────────

/// One curation-manifest row: `id|group|volume|width|height|category`.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub group: String,
    pub volume: f64,
    pub width: u32,
    pub height: u32,
    pub category: String,
}

impl ManifestEntry {
    pub fn emit_line(&self) -> String {
        format!(
            "{}|{}|{:?}|{}|{}|{}",
            self.id, self.group, self.volume, self.width, self.height, self.category
        )
    }

    pub fn parse_line(line: &str) -> Result<ManifestEntry> {
        let parts: Vec<&str> = line.split('|').collect();
        if parts.len() != 6 {
            return Err(Error::Config(format!(
                "manifest line has {} fields, expected 6: {line:?}",
                parts.len()
            )));
        }
        Ok(ManifestEntry {
            id: parts[0].to_string(),
            group: parts[1].to_string(),
            volume: parts[2]
                .parse()
                .map_err(|_| Error::Config(format!("bad volume in manifest line {line:?}")))?,
            width: parts[3]
                .parse()
                .map_err(|_| Error::Config(format!("bad width in manifest line {line:?}")))?,
            height: parts[4]
                .parse()
                .map_err(|_| Error::Config(format!("bad height in manifest line {line:?}")))?,
            category: parts[5].to_string(),
        })
    }
}

/// Entries quieter than this fraction of the reference amplitude are silent.
pub const SILENT_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterStats {
    pub dropped_duplicate: usize,
    pub dropped_silent: usize,
    pub dropped_portrait: usize,
}

/// Why a manifest row was dropped. Rules apply in this order and the first
/// match wins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    Duplicate,
    Silent,
    Portrait,
}

impl DropReason {
    pub fn name(self) -> &'static str {
        match self {
            DropReason::Duplicate => "duplicate",
            DropReason::Silent => "silent",
            DropReason::Portrait => "portrait",
        }
    }
}

/// Per-record curation verdicts: `None` keeps the row, otherwise the first
/// matching drop rule. Input order is preserved.
pub fn filter_decisions(
    entries: &[ManifestEntry],
    reference_amplitude: f64,
) -> Vec<(ManifestEntry, Option<DropReason>)> {
    let mut seen = std::collections::HashSet::new();
    let threshold = SILENT_FRACTION * reference_amplitude;
    entries
        .iter()
        .map(|e| {
            let reason = if !seen.insert(e.id.clone()) {
                Some(DropReason::Duplicate)
            } else if e.volume < threshold {
                Some(DropReason::Silent)
            } else if e.height > e.width {
                Some(DropReason::Portrait)
            } else {
                None
            };
            (e.clone(), reason)
        })
        .collect()
}

/// Curation pass: drop repeated ids, clips quieter than
/// `SILENT_FRACTION · reference_amplitude`, and portrait clips
/// (height > width). First matching rule wins for the counts; input order
/// is preserved.
pub fn filter_manifest(
    entries: &[ManifestEntry],
    reference_amplitude: f64,
) -> (Vec<ManifestEntry>, FilterStats) {
    let mut kept = Vec::new();
    let mut stats = FilterStats::default();
    for (e, reason) in filter_decisions(entries, reference_amplitude) {
        match reason {
            None => kept.push(e),
            Some(DropReason::Duplicate) => stats.dropped_duplicate += 1,
            Some(DropReason::Silent) => stats.dropped_silent += 1,
            Some(DropReason::Portrait) => stats.dropped_portrait += 1,
        }
    }
    (kept, stats)
}

/// Manifest row for a generated clip (synthetic clips are landscape).
pub fn manifest_entry_for(clip: &LatentClip) -> ManifestEntry {
    ManifestEntry {
        id: clip.id.clone(),
        group: clip.scenario.name().to_string(),
        volume: clip.volume,
        width: 16,
        height: 9,
        category: clip.scenario.name().to_string(),
    }
}

// ── dataset assembly ───────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<LatentClip>,
    pub eval: Vec<LatentClip>,
    pub filter_stats: FilterStats,
}

const SCENARIO_CYCLE: [Scenario; 3] =
    [Scenario::BouncingBall, Scenario::SilentDrift, Scenario::AmbientOnly];
const BUCKET_CYCLE: [HeightBucket; 3] = [HeightBucket::Low, HeightBucket::Mid, HeightBucket::High];

/// Generate a curated dataset. Candidates cycle scenario × height bucket;
/// the manifest filter is applied when `filtered` is set (dropping the
/// silent drift clips), and the eval split takes equal counts per surviving
/// category before the remainder fills the train split.
pub fn make_dataset(
    world: &WorldConfig,
    n_train: usize,
    n_eval: usize,
    seed: u64,
    filtered: bool,
) -> Result<Dataset> {
    world.validate()?;
    let enc = Encoders::build(world)?;
    let categories: Vec<Scenario> = if filtered {
        vec![Scenario::BouncingBall, Scenario::AmbientOnly]
    } else {
        SCENARIO_CYCLE.to_vec()
    };
    let per_cat_eval = n_eval / categories.len();
    let eval_remainder = n_eval % categories.len();

    let mut stats = FilterStats::default();
    let mut by_cat: std::collections::HashMap<Scenario, Vec<LatentClip>> =
        std::collections::HashMap::new();
    let mut train = Vec::new();
    let mut seen_ids = std::collections::HashSet::new();

    let reference_amplitude = 1.0; // loudest possible click: full-height drop
    let budget = 20 * (n_train + n_eval) + 60;
    let mut produced_eval = 0usize;
    for i in 0..budget {
        if train.len() >= n_train && produced_eval >= n_eval {
            break;
        }
        let spec = ClipSpec {
            scenario: SCENARIO_CYCLE[i % 3],
            height: BUCKET_CYCLE[(i / 3) % 3],
            seed: seed.wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        };
        let clip = generate_clip(&spec, world, &enc)?;
        if filtered {
            let entry = manifest_entry_for(&clip);
            let (kept, s) = filter_manifest(
                std::slice::from_ref(&entry),
                reference_amplitude,
            );
            stats.dropped_silent += s.dropped_silent;
            stats.dropped_portrait += s.dropped_portrait;
            if kept.is_empty() {
                continue;
            }
        }
        if !seen_ids.insert(clip.id.clone()) {
            stats.dropped_duplicate += 1;
            continue;
        }
        // eval fills its per-category quota first; everything else trains
        let quota = per_cat_eval
            + if categories.iter().position(|c| *c == clip.scenario).unwrap_or(0) < eval_remainder {
                1
            } else {
                0
            };
        let bucket = by_cat.entry(clip.scenario).or_default();
        if bucket.len() < quota {
            bucket.push(clip);
            produced_eval += 1;
        } else if train.len() < n_train {
            train.push(clip);
        }
    }
    if train.len() < n_train || produced_eval < n_eval {
        return Err(Error::Contract(format!(
            "dataset generation exhausted its budget: got {} train / {} eval, wanted {n_train}/{n_eval}",
            train.len(),
            produced_eval
        )));
    }
    let mut eval = Vec::new();
    for cat in &categories {
        if let Some(clips) = by_cat.remove(cat) {
            eval.extend(clips);
        }
    }
    Ok(Dataset { train, eval, filter_stats: stats })
}

impl Dataset {
    /// Manifest rows for every clip (train split then eval split).
    pub fn manifest(&self) -> Vec<ManifestEntry> {
        self.train.iter().chain(self.eval.iter()).map(manifest_entry_for).collect()
    }
}

// ── dataset container round trip ───────────────────────────────────────

fn clip_blobs(prefix: &str, clip: &LatentClip, out: &mut Vec<(String, Tensor)>) {
    out.push((format!("{prefix}.video"), clip.video.clone()));
    out.push((format!("{prefix}.audio"), clip.audio.clone()));
    out.push((
        format!("{prefix}.desc_video"),
        Tensor::new(
            vec![clip.desc_video.len()],
            clip.desc_video.iter().map(|&s| s as f64).collect(),
        )
        .expect("shape matches"),
    ));
    out.push((
        format!("{prefix}.desc_audio"),
        Tensor::new(
            vec![clip.desc_audio.len()],
            clip.desc_audio.iter().map(|&s| s as f64).collect(),
        )
        .expect("shape matches"),
    ));
    out.push((
        format!("{prefix}.events"),
        Tensor::new(vec![clip.contact_times.len()], clip.contact_times.clone())
            .expect("shape matches"),
    ));
    out.push((
        format!("{prefix}.volume"),
        Tensor::new(vec![1], vec![clip.volume]).expect("shape matches"),
    ));
}

impl Dataset {
    /// Write the dataset as a container file (same framing as checkpoints).
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut header = String::new();
        header.push_str(&format!("clips.eval = {}\n", self.eval.len()));
        header.push_str(&format!("clips.train = {}\n", self.train.len()));
        for (i, clip) in self.train.iter().chain(self.eval.iter()).enumerate() {
            header.push_str(&format!("clip{i}.id = {}\n", clip.id));
            header.push_str(&format!("clip{i}.scenario = {}\n", clip.scenario.name()));
        }
        let mut blobs = Vec::new();
        for (i, clip) in self.train.iter().chain(self.eval.iter()).enumerate() {
            clip_blobs(&format!("clip{i}"), clip, &mut blobs);
        }
        let pairs: Vec<(String, Tensor)> = blobs;
        crate::checkpoint::save_container(path, &header, pairs.iter().map(|(k, v)| (k, v)))
    }

    /// Read a dataset container back.
    pub fn load(path: &std::path::Path) -> Result<Dataset> {
        let c = crate::checkpoint::load_container(path)?;
        let mut kv = std::collections::HashMap::new();
        for line in c.header.lines() {
            if let Some((k, v)) = line.split_once('=') {
                kv.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let n_train: usize = kv
            .get("clips.train")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Checkpoint("dataset header missing clips.train".into()))?;
        let n_eval: usize = kv
            .get("clips.eval")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Checkpoint("dataset header missing clips.eval".into()))?;
        let blob: std::collections::HashMap<String, Tensor> = c.blobs.into_iter().collect();
        let get = |name: String| -> Result<&Tensor> {
            blob.get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("dataset missing blob {name:?}")))
        };
        let mut clips = Vec::new();
        for i in 0..n_train + n_eval {
            let id = kv
                .get(&format!("clip{i}.id"))
                .ok_or_else(|| Error::Checkpoint(format!("dataset missing clip{i}.id")))?
                .clone();
            let scenario = Scenario::parse(
                kv.get(&format!("clip{i}.scenario"))
                    .ok_or_else(|| Error::Checkpoint(format!("dataset missing clip{i}.scenario")))?,
            )?;
            let video = get(format!("clip{i}.video"))?.clone();
            let audio = get(format!("clip{i}.audio"))?.clone();
            let desc_video: Vec<usize> =
                get(format!("clip{i}.desc_video"))?.data().iter().map(|&v| v as usize).collect();
            let desc_audio: Vec<usize> =
                get(format!("clip{i}.desc_audio"))?.data().iter().map(|&v| v as usize).collect();
            let contact_times = get(format!("clip{i}.events"))?.data().to_vec();
            let volume = get(format!("clip{i}.volume"))?.data()[0];
            clips.push(LatentClip {
                id,
                scenario,
                video,
                audio,
                desc_video,
                desc_audio,
                contact_times,
                volume,
            });
        }
        let eval = clips.split_off(n_train);
        Ok(Dataset { train: clips, eval, filter_stats: FilterStats::default() })
    }
}
