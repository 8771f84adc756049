//! Model assembly: the video-only tower, the audio-only tower, and the joint
//! model grafted from both.
//!
//! Parameters live in a flat name → tensor map. Names are the contract:
//! the joint model's video-side parameters carry exactly the names the
//! video-only twin uses (`video.block3.sa.wq`, ...), so grafting is a copy by
//! name and the matched-twin property (identical video-tower init for the
//! joint model and its video-only control) falls out of per-name seeding.
//!
//! Initialization draws each tensor from a ChaCha stream seeded by
//! `global_seed ^ fnv1a64(name)` — independent of enumeration order.
//! Adapters, modulation projections, and un-embeddings start at zero, making
//! every tower the identity at init and the initial velocity prediction
//! exactly zero.

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::blocks::{
    self, modulate, modulation, t_features, unimodal_block, AttnVars, BlockVars, CrossVars,
    FfnVars, NormVars, RopeTables, LAYER_NORM_EPS,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::joint::{
    avfull_attention, cross_attention_baseline, cross_modal_mask, AdapterVars, ConcatOrder,
    CrossModalAdapters, CrossModalVars,
};
use crate::rope::{audio_positions, video_positions, RopeConfig, RopeVariant, SyncSpec};
use crate::tensor::{fnv1a64, Tensor};

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionVariant {
    AvFull,
    CrossBaseline,
}

impl AttentionVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "avfull" => Ok(AttentionVariant::AvFull),
            "cross_baseline" => Ok(AttentionVariant::CrossBaseline),
            other => Err(Error::Config(format!(
                "unknown attention variant {other:?} (expected avfull | cross_baseline)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AttentionVariant::AvFull => "avfull",
            AttentionVariant::CrossBaseline => "cross_baseline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Joint,
    VideoOnly,
    AudioOnly,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(ModelKind::Joint),
            "video_only" => Ok(ModelKind::VideoOnly),
            "audio_only" => Ok(ModelKind::AudioOnly),
            other => Err(Error::Config(format!("unknown model kind {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Joint => "joint",
            ModelKind::VideoOnly => "video_only",
            ModelKind::AudioOnly => "audio_only",
        }
    }
}

/// Widths, depths, and latent geometry for one model family.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureConfig {
    pub c_v: usize,
    pub c_a: usize,
    pub n_v: usize,
    pub n_a: usize,
    pub n_av: usize,
    pub heads_v: usize,
    pub heads_a: usize,
    pub c_text_v: usize,
    pub c_text_a: usize,
    pub c_lat_v: usize,
    pub c_lat_a: usize,
    pub f_v: usize,
    pub f_a: usize,
    pub vocab: usize,
    pub t_feat: usize,
    pub rope_base: f64,
    pub rope_variant: RopeVariant,
    pub attention: AttentionVariant,
    pub sync: SyncSpec,
}

impl ArchitectureConfig {
    /// Desk-scale default: wide enough that C_v ≠ C_a exercises the adapter
    /// path, small enough for CPU finite-difference checks.
    pub fn toy_default() -> Self {
        ArchitectureConfig {
            c_v: 64,
            c_a: 48,
            n_v: 2,
            n_a: 2,
            n_av: 2,
            heads_v: 2,
            heads_a: 2,
            c_text_v: 16,
            c_text_a: 16,
            c_lat_v: 16,
            c_lat_a: 4,
            f_v: 8,
            f_a: 32,
            vocab: 16,
            t_feat: 16,
            rope_base: crate::rope::DEFAULT_ROPE_BASE,
            rope_variant: RopeVariant::ShrinkAudio,
            attention: AttentionVariant::AvFull,
            sync: SyncSpec { delta_t_video: 0.25, delta_t_audio: 0.0625 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_v < self.c_a {
            return Err(Error::Config(format!(
                "C_v must be >= C_a, got C_v={} C_a={}",
                self.c_v, self.c_a
            )));
        }
        if self.n_av < 1 {
            return Err(Error::Config("n_av must be >= 1".into()));
        }
        for (label, c, heads) in [("video", self.c_v, self.heads_v), ("audio", self.c_a, self.heads_a)] {
            if heads == 0 || c % heads != 0 {
                return Err(Error::Config(format!(
                    "{label} width {c} not divisible by {heads} heads"
                )));
            }
            if (c / heads) % 2 != 0 {
                return Err(Error::Config(format!(
                    "{label} head_dim {} must be even for rotary pairs",
                    c / heads
                )));
            }
        }
        if (self.c_v / self.heads_v) % 2 != 0 {
            return Err(Error::Config("joint head_dim must be even".into()));
        }
        if self.f_v == 0 || self.f_a == 0 || self.c_lat_v == 0 || self.c_lat_a == 0 {
            return Err(Error::Config("latent shapes must be nonzero".into()));
        }
        if self.vocab == 0 || self.t_feat == 0 || self.c_text_v == 0 || self.c_text_a == 0 {
            return Err(Error::Config("embedding widths must be nonzero".into()));
        }
        SyncSpec::new(self.sync.delta_t_video, self.sync.delta_t_audio)?;
        Ok(())
    }

    /// Canonical key-sorted text form, used as the checkpoint header.
    pub fn header_text(&self, kind: ModelKind) -> String {
        let mut pairs: Vec<(String, String)> = vec![
            ("arch.attention".into(), self.attention.name().into()),
            ("arch.c_a".into(), self.c_a.to_string()),
            ("arch.c_lat_a".into(), self.c_lat_a.to_string()),
            ("arch.c_lat_v".into(), self.c_lat_v.to_string()),
            ("arch.c_text_a".into(), self.c_text_a.to_string()),
            ("arch.c_text_v".into(), self.c_text_v.to_string()),
            ("arch.c_v".into(), self.c_v.to_string()),
            ("arch.delta_t_audio".into(), format!("{:?}", self.sync.delta_t_audio)),
            ("arch.delta_t_video".into(), format!("{:?}", self.sync.delta_t_video)),
            ("arch.f_a".into(), self.f_a.to_string()),
            ("arch.f_v".into(), self.f_v.to_string()),
            ("arch.heads_a".into(), self.heads_a.to_string()),
            ("arch.heads_v".into(), self.heads_v.to_string()),
            ("arch.n_a".into(), self.n_a.to_string()),
            ("arch.n_av".into(), self.n_av.to_string()),
            ("arch.n_v".into(), self.n_v.to_string()),
            ("arch.rope_base".into(), format!("{:?}", self.rope_base)),
            ("arch.rope_variant".into(), self.rope_variant.name().into()),
            ("arch.t_feat".into(), self.t_feat.to_string()),
            ("arch.vocab".into(), self.vocab.to_string()),
            ("kind".into(), kind.name().into()),
        ];
        pairs.sort();
        pairs
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Parse the canonical header back into a config and model kind.
    pub fn from_header_text(text: &str) -> Result<(Self, ModelKind)> {
        let mut map = IndexMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Checkpoint(format!("malformed header line {line:?}"))
            })?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |key: &str| -> Result<&String> {
            map.get(key)
                .ok_or_else(|| Error::Checkpoint(format!("header missing key {key:?}")))
        };
        let usize_of = |key: &str| -> Result<usize> {
            get(key)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad integer for {key:?}")))
        };
        let f64_of = |key: &str| -> Result<f64> {
            get(key)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad number for {key:?}")))
        };
        let cfg = ArchitectureConfig {
            c_v: usize_of("arch.c_v")?,
            c_a: usize_of("arch.c_a")?,
            n_v: usize_of("arch.n_v")?,
            n_a: usize_of("arch.n_a")?,
            n_av: usize_of("arch.n_av")?,
            heads_v: usize_of("arch.heads_v")?,
            heads_a: usize_of("arch.heads_a")?,
            c_text_v: usize_of("arch.c_text_v")?,
            c_text_a: usize_of("arch.c_text_a")?,
            c_lat_v: usize_of("arch.c_lat_v")?,
            c_lat_a: usize_of("arch.c_lat_a")?,
            f_v: usize_of("arch.f_v")?,
            f_a: usize_of("arch.f_a")?,
            vocab: usize_of("arch.vocab")?,
            t_feat: usize_of("arch.t_feat")?,
            rope_base: f64_of("arch.rope_base")?,
            rope_variant: RopeVariant::parse(get("arch.rope_variant")?)?,
            attention: AttentionVariant::parse(get("arch.attention")?)?,
            sync: SyncSpec::new(f64_of("arch.delta_t_video")?, f64_of("arch.delta_t_audio")?)?,
        };
        let kind = ModelKind::parse(get("kind")?)?;
        cfg.validate()?;
        Ok((cfg, kind))
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Full schema: (name, shape, init) for every parameter.
fn param_schema(cfg: &ArchitectureConfig, kind: ModelKind) -> Vec<(String, Vec<usize>, Init)> {
    let mut out = Vec::new();
    let mut tower = |m: &str, c: usize, c_text: usize, c_lat: usize, blocks: usize| {
        out.push((format!("{m}.embed.w"), vec![c_lat, c], Init::Normal));
        out.push((format!("{m}.unembed.w"), vec![c, c_lat], Init::Zeros));
        out.push((format!("{m}.cond.table"), vec![cfg.vocab, c_text], Init::Normal));
        for i in 0..blocks {
            let p = format!("{m}.block{i}");
            out.push((format!("{p}.norm_sa.gain"), vec![c], Init::Ones));
            out.push((format!("{p}.norm_sa.bias"), vec![c], Init::Zeros));
            for w in ["wq", "wk", "wv", "wo"] {
                out.push((format!("{p}.sa.{w}"), vec![c, c], Init::Normal));
            }
            out.push((format!("{p}.norm_ca.gain"), vec![c], Init::Ones));
            out.push((format!("{p}.norm_ca.bias"), vec![c], Init::Zeros));
            out.push((format!("{p}.ca.wq"), vec![c, c], Init::Normal));
            out.push((format!("{p}.ca.wk"), vec![c_text, c], Init::Normal));
            out.push((format!("{p}.ca.wv"), vec![c_text, c], Init::Normal));
            out.push((format!("{p}.ca.wo"), vec![c, c], Init::Normal));
            out.push((format!("{p}.norm_ffn.gain"), vec![c], Init::Ones));
            out.push((format!("{p}.norm_ffn.bias"), vec![c], Init::Zeros));
            out.push((format!("{p}.ffn.w1"), vec![c, 4 * c], Init::Normal));
            out.push((format!("{p}.ffn.w2"), vec![4 * c, c], Init::Normal));
            out.push((format!("{p}.mod.w"), vec![cfg.t_feat, 9 * c], Init::Zeros));
            out.push((format!("{p}.mod.b"), vec![9 * c], Init::Zeros));
        }
    };

    match kind {
        ModelKind::VideoOnly => {
            tower("video", cfg.c_v, cfg.c_text_v, cfg.c_lat_v, cfg.n_v + cfg.n_av);
        }
        ModelKind::AudioOnly => {
            tower("audio", cfg.c_a, cfg.c_text_a, cfg.c_lat_a, cfg.n_a + cfg.n_av);
        }
        ModelKind::Joint => {
            tower("video", cfg.c_v, cfg.c_text_v, cfg.c_lat_v, cfg.n_v + cfg.n_av);
            tower("audio", cfg.c_a, cfg.c_text_a, cfg.c_lat_a, cfg.n_a + cfg.n_av);
            let gap = cfg.c_v - cfg.c_a;
            for j in 0..cfg.n_av {
                let p = format!("joint.block{j}");
                match cfg.attention {
                    AttentionVariant::AvFull => {
                        if gap > 0 {
                            for w in ["wq_an", "wk_an", "wv_an"] {
                                out.push((format!("{p}.adapter.{w}"), vec![cfg.c_a, gap], Init::Zeros));
                            }
                            out.push((format!("{p}.adapter.wo_an"), vec![gap, cfg.c_a], Init::Zeros));
                        }
                    }
                    AttentionVariant::CrossBaseline => {
                        for w in ["v_wq", "v_wk", "v_wv", "v_wo"] {
                            out.push((format!("{p}.x.{w}"), vec![cfg.c_v, cfg.c_v], Init::Normal));
                        }
                        for w in ["a_wq", "a_wk", "a_wv", "a_wo"] {
                            out.push((format!("{p}.x.{w}"), vec![cfg.c_a, cfg.c_a], Init::Normal));
                        }
                        if gap > 0 {
                            for w in ["a_wq_an", "a_wk_an", "a_wv_an"] {
                                out.push((format!("{p}.x.{w}"), vec![cfg.c_a, gap], Init::Zeros));
                            }
                            out.push((format!("{p}.x.a_wo_an"), vec![gap, cfg.c_a], Init::Zeros));
                        }
                        out.push((format!("{p}.xnorm.video.gain"), vec![cfg.c_v], Init::Ones));
                        out.push((format!("{p}.xnorm.video.bias"), vec![cfg.c_v], Init::Zeros));
                        out.push((format!("{p}.xnorm.audio.gain"), vec![cfg.c_a], Init::Ones));
                        out.push((format!("{p}.xnorm.audio.bias"), vec![cfg.c_a], Init::Zeros));
                        out.push((format!("{p}.xmod.video.w"), vec![cfg.t_feat, 3 * cfg.c_v], Init::Zeros));
                        out.push((format!("{p}.xmod.video.b"), vec![3 * cfg.c_v], Init::Zeros));
                        out.push((format!("{p}.xmod.audio.w"), vec![cfg.t_feat, 3 * cfg.c_a], Init::Zeros));
                        out.push((format!("{p}.xmod.audio.b"), vec![3 * cfg.c_a], Init::Zeros));
                    }
                }
            }
        }
    }
    out
}

fn init_tensor(name: &str, shape: &[usize], init: Init, seed: u64) -> Tensor {
    match init {
        Init::Zeros => Tensor::zeros(shape),
        Init::Ones => Tensor::full(shape, 1.0),
        Init::Normal => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(name.as_bytes()));
            let dist = Normal::new(0.0, INIT_STD).expect("valid std");
            let n: usize = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(&mut rng)).collect())
                .expect("shape matches")
        }
    }
}

/// A model: its architecture, its role, and a name-keyed parameter map
/// (keys kept sorted).
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ArchitectureConfig,
    pub kind: ModelKind,
    pub params: IndexMap<String, Tensor>,
}

/// Name → graph var map for one bound forward pass.
pub struct Binding {
    vars: IndexMap<String, Var>,
}

impl Binding {
    /// Assemble a binding from explicit leaves. Verification harnesses use
    /// this to rebind a subset of parameters to externally-driven vars.
    pub fn from_vars(vars: IndexMap<String, Var>) -> Binding {
        Binding { vars }
    }

    pub fn get(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name:?} not bound"))
    }

    pub fn names(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

fn bind_block(b: &Binding, prefix: &str, heads: usize) -> BlockVars {
    BlockVars {
        norm_sa: NormVars {
            gain: b.get(&format!("{prefix}.norm_sa.gain")),
            bias: b.get(&format!("{prefix}.norm_sa.bias")),
        },
        sa: AttnVars {
            wq: b.get(&format!("{prefix}.sa.wq")),
            wk: b.get(&format!("{prefix}.sa.wk")),
            wv: b.get(&format!("{prefix}.sa.wv")),
            wo: b.get(&format!("{prefix}.sa.wo")),
        },
        norm_ca: NormVars {
            gain: b.get(&format!("{prefix}.norm_ca.gain")),
            bias: b.get(&format!("{prefix}.norm_ca.bias")),
        },
        ca: CrossVars {
            wq: b.get(&format!("{prefix}.ca.wq")),
            wk: b.get(&format!("{prefix}.ca.wk")),
            wv: b.get(&format!("{prefix}.ca.wv")),
            wo: b.get(&format!("{prefix}.ca.wo")),
        },
        norm_ffn: NormVars {
            gain: b.get(&format!("{prefix}.norm_ffn.gain")),
            bias: b.get(&format!("{prefix}.norm_ffn.bias")),
        },
        ffn: FfnVars {
            w1: b.get(&format!("{prefix}.ffn.w1")),
            w2: b.get(&format!("{prefix}.ffn.w2")),
        },
        mod_w: b.get(&format!("{prefix}.mod.w")),
        mod_b: b.get(&format!("{prefix}.mod.b")),
        heads,
    }
}

/// One-hot rows for a descriptor sequence, for table lookup by matmul.
fn onehot(indices: &[usize], vocab: usize) -> Result<Tensor> {
    if indices.is_empty() {
        return Err(Error::Contract("descriptor sequence must be non-empty".into()));
    }
    let mut data = vec![0.0; indices.len() * vocab];
    for (row, &ix) in indices.iter().enumerate() {
        if ix >= vocab {
            return Err(Error::Config(format!(
                "descriptor symbol {ix} outside vocabulary of size {vocab}"
            )));
        }
        data[row * vocab + ix] = 1.0;
    }
    Tensor::new(vec![indices.len(), vocab], data)
}

impl Model {
    /// Deterministic initialization from a seed. Same (config, kind, seed)
    /// twice gives bit-identical weights.
    pub fn build(config: &ArchitectureConfig, kind: ModelKind, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut params = IndexMap::new();
        for (name, shape, init) in param_schema(config, kind) {
            let t = init_tensor(&name, &shape, init, seed);
            params.insert(name, t);
        }
        params.sort_keys();
        Ok(Model { config: config.clone(), kind, params })
    }

    /// Assemble the joint model from two donor towers: every donor parameter
    /// is copied verbatim under its own name; bridge parameters (adapters and
    /// any cross-modal baseline weights) start at zero, so the donors'
    /// behavior is preserved at initialization.
    pub fn graft(video: &Model, audio: &Model, config: &ArchitectureConfig) -> Result<Model> {
        config.validate()?;
        if video.kind != ModelKind::VideoOnly || audio.kind != ModelKind::AudioOnly {
            return Err(Error::Config(format!(
                "graft donors must be (video_only, audio_only), got ({}, {})",
                video.kind.name(),
                audio.kind.name()
            )));
        }
        for (donor, c, n_uni, label) in [
            (video, config.c_v, config.n_v, "video"),
            (audio, config.c_a, config.n_a, "audio"),
        ] {
            let donor_c = if label == "video" { donor.config.c_v } else { donor.config.c_a };
            let donor_depth = if label == "video" {
                donor.config.n_v + donor.config.n_av
            } else {
                donor.config.n_a + donor.config.n_av
            };
            if donor_c != c {
                return Err(Error::Config(format!(
                    "graft width mismatch: {label} donor width {donor_c}, config wants {c}"
                )));
            }
            if donor_depth != n_uni + config.n_av {
                return Err(Error::Config(format!(
                    "graft depth mismatch: {label} donor has {donor_depth} blocks, config wants {}",
                    n_uni + config.n_av
                )));
            }
            if donor_depth < config.n_av {
                return Err(Error::Config(format!(
                    "graft needs at least {} blocks in the {label} donor",
                    config.n_av
                )));
            }
        }
        let mut params = IndexMap::new();
        for (name, shape, _init) in param_schema(config, ModelKind::Joint) {
            let t = if let Some(donor) = name
                .starts_with("video.")
                .then_some(video)
                .or_else(|| name.starts_with("audio.").then_some(audio))
            {
                let src = donor.params.get(&name).ok_or_else(|| {
                    Error::Config(format!("graft donor missing parameter {name:?}"))
                })?;
                if src.shape() != shape.as_slice() {
                    return Err(Error::Config(format!(
                        "graft shape mismatch for {name:?}: donor {:?}, config wants {:?}",
                        src.shape(),
                        shape
                    )));
                }
                src.clone()
            } else {
                Tensor::zeros(&shape)
            };
            params.insert(name, t);
        }
        params.sort_keys();
        Ok(Model { config: config.clone(), kind: ModelKind::Joint, params })
    }

    /// Total parameter count.
    pub fn parameter_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Bind every parameter into a graph; trainable bindings receive
    /// gradients on backward.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Binding {
        let mut vars = IndexMap::new();
        for (name, t) in &self.params {
            vars.insert(name.clone(), g.leaf(t, trainable));
        }
        Binding { vars }
    }

    fn rope_cfg(&self, head_dim: usize) -> RopeConfig {
        RopeConfig {
            head_dim,
            base: self.config.rope_base,
            variant: self.config.rope_variant,
        }
    }

    fn video_tables(&self) -> RopeTables {
        let cfg = self.rope_cfg(self.config.c_v / self.config.heads_v);
        let pos = video_positions(self.config.f_v, &self.config.sync, self.config.rope_variant);
        RopeTables::new(&pos, &cfg)
    }

    fn audio_tables(&self, head_dim: usize) -> RopeTables {
        let cfg = self.rope_cfg(head_dim);
        let pos = audio_positions(self.config.f_a, &self.config.sync, self.config.rope_variant);
        RopeTables::new(&pos, &cfg)
    }

    fn check_latent(&self, x: &Tensor, frames: usize, channels: usize, label: &str) -> Result<()> {
        if x.shape() != [frames, channels] {
            return Err(Error::ShapeMismatch {
                op: match label {
                    "video" => "forward(video latent)",
                    _ => "forward(audio latent)",
                },
                lhs: x.shape().to_vec(),
                rhs: vec![frames, channels],
            });
        }
        Ok(())
    }

    /// Joint forward on a bound graph. `mask_cross_modal` forces all
    /// audio↔video attention logits off, isolating the video path.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_joint_vars(
        &self,
        g: &mut Graph,
        b: &Binding,
        x_v: &Tensor,
        x_a: &Tensor,
        c_v_desc: &[usize],
        c_a_desc: &[usize],
        t: f64,
        mask_cross_modal: bool,
    ) -> Result<(Var, Var)> {
        if self.kind != ModelKind::Joint {
            return Err(Error::Contract(format!(
                "forward_joint on a {} model",
                self.kind.name()
            )));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Contract(format!("timestep {t} outside [0,1]")));
        }
        let cfg = &self.config;
        self.check_latent(x_v, cfg.f_v, cfg.c_lat_v, "video")?;
        self.check_latent(x_a, cfg.f_a, cfg.c_lat_a, "audio")?;

        let tf = g.constant(&t_features(t, cfg.t_feat));
        let oh_v = g.constant(&onehot(c_v_desc, cfg.vocab)?);
        let oh_a = g.constant(&onehot(c_a_desc, cfg.vocab)?);
        let cond_v = g.matmul(oh_v, b.get("video.cond.table"))?;
        let cond_a = g.matmul(oh_a, b.get("audio.cond.table"))?;

        let xv = g.constant(x_v);
        let xa = g.constant(x_a);
        let mut h_v = g.matmul(xv, b.get("video.embed.w"))?;
        let mut h_a = g.matmul(xa, b.get("audio.embed.w"))?;

        let rt_v = self.video_tables();
        let rt_a_uni = self.audio_tables(cfg.c_a / cfg.heads_a);
        let rt_a_joint = self.audio_tables(cfg.c_v / cfg.heads_v);

        for i in 0..cfg.n_v {
            let bw = bind_block(b, &format!("video.block{i}"), cfg.heads_v);
            h_v = unimodal_block(g, h_v, cond_v, tf, &bw, Some(&rt_v))?;
        }
        for i in 0..cfg.n_a {
            let bw = bind_block(b, &format!("audio.block{i}"), cfg.heads_a);
            h_a = unimodal_block(g, h_a, cond_a, tf, &bw, Some(&rt_a_uni))?;
        }

        let mask = if mask_cross_modal {
            Some(g.constant(&cross_modal_mask(cfg.f_v, cfg.f_a, ConcatOrder::VideoFirst)))
        } else {
            None
        };

        for j in 0..cfg.n_av {
            let vb = bind_block(b, &format!("video.block{}", cfg.n_v + j), cfg.heads_v);
            let ab = bind_block(b, &format!("audio.block{}", cfg.n_a + j), cfg.heads_a);
            let jp = format!("joint.block{j}");

            match cfg.attention {
                AttentionVariant::AvFull => {
                    let m_v = modulation(g, tf, vb.mod_w, vb.mod_b, cfg.c_v, 3)?;
                    let m_a = modulation(g, tf, ab.mod_w, ab.mod_b, cfg.c_a, 3)?;

                    let n_v1 = g.layer_norm(h_v, vb.norm_sa.gain, vb.norm_sa.bias, LAYER_NORM_EPS)?;
                    let x_v1 = modulate(g, n_v1, m_v[0], m_v[1])?;
                    let n_a1 = g.layer_norm(h_a, ab.norm_sa.gain, ab.norm_sa.bias, LAYER_NORM_EPS)?;
                    let x_a1 = modulate(g, n_a1, m_a[0], m_a[1])?;

                    let adapters = (cfg.c_v > cfg.c_a).then(|| AdapterVars {
                        wq_an: b.get(&format!("{jp}.adapter.wq_an")),
                        wk_an: b.get(&format!("{jp}.adapter.wk_an")),
                        wv_an: b.get(&format!("{jp}.adapter.wv_an")),
                        wo_an: b.get(&format!("{jp}.adapter.wo_an")),
                    });
                    let (o_v, o_a) = avfull_attention(
                        g,
                        x_v1,
                        x_a1,
                        &vb.sa,
                        &ab.sa,
                        adapters.as_ref(),
                        cfg.heads_v,
                        &rt_v,
                        &rt_a_joint,
                        mask,
                        ConcatOrder::VideoFirst,
                    )?;
                    let g_v = g.mul(o_v, m_v[2])?;
                    h_v = g.add(h_v, g_v)?;
                    let g_a = g.mul(o_a, m_a[2])?;
                    h_a = g.add(h_a, g_a)?;

                    h_v = self.finish_block(g, h_v, cond_v, &vb, &m_v)?;
                    h_a = self.finish_block(g, h_a, cond_a, &ab, &m_a)?;
                }
                AttentionVariant::CrossBaseline => {
                    // unimodal self-attention per modality
                    let m_v = modulation(g, tf, vb.mod_w, vb.mod_b, cfg.c_v, 3)?;
                    let m_a = modulation(g, tf, ab.mod_w, ab.mod_b, cfg.c_a, 3)?;
                    let n_v1 = g.layer_norm(h_v, vb.norm_sa.gain, vb.norm_sa.bias, LAYER_NORM_EPS)?;
                    let x_v1 = modulate(g, n_v1, m_v[0], m_v[1])?;
                    let a_v = blocks::self_attention(g, x_v1, &vb.sa, cfg.heads_v, Some(&rt_v))?;
                    let g_v = g.mul(a_v, m_v[2])?;
                    h_v = g.add(h_v, g_v)?;
                    let n_a1 = g.layer_norm(h_a, ab.norm_sa.gain, ab.norm_sa.bias, LAYER_NORM_EPS)?;
                    let x_a1 = modulate(g, n_a1, m_a[0], m_a[1])?;
                    let a_a = blocks::self_attention(g, x_a1, &ab.sa, cfg.heads_a, Some(&rt_a_uni))?;
                    let g_a = g.mul(a_a, m_a[2])?;
                    h_a = g.add(h_a, g_a)?;

                    // cross-modal cross-attention sublayer (skipped under mask:
                    // the masked forward isolates the video path exactly)
                    if !mask_cross_modal {
                        let xm_v = modulation(
                            g,
                            tf,
                            b.get(&format!("{jp}.xmod.video.w")),
                            b.get(&format!("{jp}.xmod.video.b")),
                            cfg.c_v,
                            1,
                        )?;
                        let xm_a = modulation(
                            g,
                            tf,
                            b.get(&format!("{jp}.xmod.audio.w")),
                            b.get(&format!("{jp}.xmod.audio.b")),
                            cfg.c_a,
                            1,
                        )?;
                        let xn_v = g.layer_norm(
                            h_v,
                            b.get(&format!("{jp}.xnorm.video.gain")),
                            b.get(&format!("{jp}.xnorm.video.bias")),
                            LAYER_NORM_EPS,
                        )?;
                        let xx_v = modulate(g, xn_v, xm_v[0], xm_v[1])?;
                        let xn_a = g.layer_norm(
                            h_a,
                            b.get(&format!("{jp}.xnorm.audio.gain")),
                            b.get(&format!("{jp}.xnorm.audio.bias")),
                            LAYER_NORM_EPS,
                        )?;
                        let xx_a = modulate(g, xn_a, xm_a[0], xm_a[1])?;
                        let adapters = (cfg.c_v > cfg.c_a).then(|| CrossModalAdapters {
                            a_wq_an: b.get(&format!("{jp}.x.a_wq_an")),
                            a_wk_an: b.get(&format!("{jp}.x.a_wk_an")),
                            a_wv_an: b.get(&format!("{jp}.x.a_wv_an")),
                            a_wo_an: b.get(&format!("{jp}.x.a_wo_an")),
                        });
                        let xw = CrossModalVars {
                            v_wq: b.get(&format!("{jp}.x.v_wq")),
                            v_wk: b.get(&format!("{jp}.x.v_wk")),
                            v_wv: b.get(&format!("{jp}.x.v_wv")),
                            v_wo: b.get(&format!("{jp}.x.v_wo")),
                            a_wq: b.get(&format!("{jp}.x.a_wq")),
                            a_wk: b.get(&format!("{jp}.x.a_wk")),
                            a_wv: b.get(&format!("{jp}.x.a_wv")),
                            a_wo: b.get(&format!("{jp}.x.a_wo")),
                            adapters,
                        };
                        let (o_v, o_a) = cross_attention_baseline(
                            g,
                            xx_v,
                            xx_a,
                            &xw,
                            cfg.heads_v,
                            &rt_v,
                            &rt_a_joint,
                        )?;
                        let gx_v = g.mul(o_v, xm_v[2])?;
                        h_v = g.add(h_v, gx_v)?;
                        let gx_a = g.mul(o_a, xm_a[2])?;
                        h_a = g.add(h_a, gx_a)?;
                    }

                    h_v = self.finish_block(g, h_v, cond_v, &vb, &m_v)?;
                    h_a = self.finish_block(g, h_a, cond_a, &ab, &m_a)?;
                }
            }
        }

        let v_v = g.matmul(h_v, b.get("video.unembed.w"))?;
        let v_a = g.matmul(h_a, b.get("audio.unembed.w"))?;
        Ok((v_v, v_a))
    }

    /// Cross-attention + FFN tail shared by the joint block variants
    /// (modulation vectors indexed as in `unimodal_block`).
    fn finish_block(
        &self,
        g: &mut Graph,
        h: Var,
        cond: Var,
        bw: &BlockVars,
        m: &[Var],
    ) -> Result<Var> {
        let n2 = g.layer_norm(h, bw.norm_ca.gain, bw.norm_ca.bias, LAYER_NORM_EPS)?;
        let x2 = modulate(g, n2, m[3], m[4])?;
        let a2 = blocks::cross_attention(g, x2, cond, &bw.ca, bw.heads)?;
        let g2 = g.mul(a2, m[5])?;
        let h2 = g.add(h, g2)?;
        let n3 = g.layer_norm(h2, bw.norm_ffn.gain, bw.norm_ffn.bias, LAYER_NORM_EPS)?;
        let x3 = modulate(g, n3, m[6], m[7])?;
        let f = blocks::ffn(g, x3, &bw.ffn)?;
        let g3 = g.mul(f, m[8])?;
        g.add(h2, g3)
    }

    /// Single-modality forward for the video tower (all blocks unimodal).
    pub fn forward_video_vars(
        &self,
        g: &mut Graph,
        b: &Binding,
        x_v: &Tensor,
        c_v_desc: &[usize],
        t: f64,
    ) -> Result<Var> {
        if self.kind == ModelKind::AudioOnly {
            return Err(Error::Contract("forward_video on an audio_only model".into()));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Contract(format!("timestep {t} outside [0,1]")));
        }
        let cfg = &self.config;
        self.check_latent(x_v, cfg.f_v, cfg.c_lat_v, "video")?;
        let tf = g.constant(&t_features(t, cfg.t_feat));
        let oh = g.constant(&onehot(c_v_desc, cfg.vocab)?);
        let cond = g.matmul(oh, b.get("video.cond.table"))?;
        let xv = g.constant(x_v);
        let mut h = g.matmul(xv, b.get("video.embed.w"))?;
        let rt = self.video_tables();
        for i in 0..cfg.n_v + cfg.n_av {
            let bw = bind_block(b, &format!("video.block{i}"), cfg.heads_v);
            h = unimodal_block(g, h, cond, tf, &bw, Some(&rt))?;
        }
        g.matmul(h, b.get("video.unembed.w"))
    }

    /// Single-modality forward for the audio tower.
    pub fn forward_audio_vars(
        &self,
        g: &mut Graph,
        b: &Binding,
        x_a: &Tensor,
        c_a_desc: &[usize],
        t: f64,
    ) -> Result<Var> {
        if self.kind == ModelKind::VideoOnly {
            return Err(Error::Contract("forward_audio on a video_only model".into()));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Contract(format!("timestep {t} outside [0,1]")));
        }
        let cfg = &self.config;
        self.check_latent(x_a, cfg.f_a, cfg.c_lat_a, "audio")?;
        let tf = g.constant(&t_features(t, cfg.t_feat));
        let oh = g.constant(&onehot(c_a_desc, cfg.vocab)?);
        let cond = g.matmul(oh, b.get("audio.cond.table"))?;
        let xa = g.constant(x_a);
        let mut h = g.matmul(xa, b.get("audio.embed.w"))?;
        let rt = self.audio_tables(cfg.c_a / cfg.heads_a);
        for i in 0..cfg.n_a + cfg.n_av {
            let bw = bind_block(b, &format!("audio.block{i}"), cfg.heads_a);
            h = unimodal_block(g, h, cond, tf, &bw, Some(&rt))?;
        }
        g.matmul(h, b.get("audio.unembed.w"))
    }

    /// Convenience tensor-in/tensor-out joint forward.
    pub fn forward_joint(
        &self,
        x_v: &Tensor,
        x_a: &Tensor,
        c_v_desc: &[usize],
        c_a_desc: &[usize],
        t: f64,
        mask_cross_modal: bool,
    ) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let (v, a) = self.forward_joint_vars(&mut g, &b, x_v, x_a, c_v_desc, c_a_desc, t, mask_cross_modal)?;
        Ok((g.tensor(v), g.tensor(a)))
    }

    /// Convenience tensor-in/tensor-out video forward.
    pub fn forward_video_only(&self, x_v: &Tensor, c_v_desc: &[usize], t: f64) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let v = self.forward_video_vars(&mut g, &b, x_v, c_v_desc, t)?;
        Ok(g.tensor(v))
    }

    /// Convenience tensor-in/tensor-out audio forward.
    pub fn forward_audio_only(&self, x_a: &Tensor, c_a_desc: &[usize], t: f64) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let a = self.forward_audio_vars(&mut g, &b, x_a, c_a_desc, t)?;
        Ok(g.tensor(a))
    }
}
