//! Experiment configuration: every knob of a run in one flat
//! `key = value` file with dotted section prefixes. Emission is canonical
//! (sorted keys, shortest-roundtrip floats), so parse → emit → parse is
//! the identity and two configs compare byte-for-byte.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::model::{ArchitectureConfig, AttentionVariant, ModelKind};
use crate::rope::{RopeVariant, SyncSpec};
use crate::tensor::fnv1a64;
use crate::world::{WorldConfig, AUDIO_FEATURES, DESCRIPTOR_VOCAB};

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub train_clips: usize,
    pub eval_clips: usize,
    pub seed: u64,
    pub filtered: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub lambda_v: f64,
    pub lambda_a: f64,
    pub seed: u64,
    pub null_prob: f64,
    pub checkpoint_every: usize,
    pub val_every: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferConfig {
    pub steps: usize,
    pub scale_v: f64,
    pub scale_a: f64,
    pub seed: u64,
    /// Sampling-seed count behind the report confidence intervals.
    pub sample_seeds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleConfig {
    pub n: usize,
    pub checkpoint: String,
    pub desc_video: Vec<String>,
    pub desc_audio: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblateConfig {
    pub attention: Vec<String>,
    pub rope: Vec<String>,
    pub lambda_a: Vec<f64>,
    pub scale_a: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub arch: ArchitectureConfig,
    pub kind: ModelKind,
    pub world: WorldConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub infer: InferConfig,
    pub sample: SampleConfig,
    pub ablate: AblateConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let world = WorldConfig::default();
        let mut arch = ArchitectureConfig::toy_default();
        arch.c_lat_v = world.cells;
        arch.c_lat_a = AUDIO_FEATURES;
        arch.f_v = world.f_v();
        arch.f_a = world.f_a;
        arch.vocab = DESCRIPTOR_VOCAB;
        arch.sync = SyncSpec::new(world.delta_t_video(), world.delta_t_audio())
            .expect("default rates are valid");
        ExperimentConfig {
            arch,
            kind: ModelKind::Joint,
            world,
            data: DataConfig { train_clips: 512, eval_clips: 96, seed: 1, filtered: true },
            train: TrainConfig {
                steps: 2000,
                batch: 8,
                lr: 1e-3,
                lambda_v: 1.0,
                lambda_a: 1.0,
                seed: 2,
                null_prob: 0.1,
                checkpoint_every: 500,
                val_every: 200,
            },
            infer: InferConfig { steps: 50, scale_v: 5.0, scale_a: 4.5, seed: 3, sample_seeds: 5 },
            sample: SampleConfig {
                n: 4,
                checkpoint: String::new(),
                desc_video: vec![
                    "bouncing_ball".into(),
                    "height_mid".into(),
                    "contact_yes".into(),
                ],
                desc_audio: vec!["clicks_yes".into(), "count_many".into()],
            },
            ablate: AblateConfig {
                attention: vec!["avfull".into()],
                rope: vec!["shrink_audio".into(), "vanilla".into()],
                lambda_a: vec![1.0],
                scale_a: vec![4.5],
            },
        }
    }
}

impl ExperimentConfig {
    /// Small, fast preset used by smoke runs and tests.
    pub fn smoke() -> Self {
        let mut cfg = ExperimentConfig::default();
        cfg.arch.c_v = 32;
        cfg.arch.c_a = 16;
        cfg.arch.n_v = 1;
        cfg.arch.n_a = 1;
        cfg.arch.n_av = 1;
        cfg.arch.heads_v = 2;
        cfg.arch.heads_a = 2;
        cfg.arch.c_text_v = 8;
        cfg.arch.c_text_a = 8;
        cfg.arch.t_feat = 8;
        cfg.data.train_clips = 48;
        cfg.data.eval_clips = 12;
        cfg.train.steps = 300;
        cfg.train.batch = 4;
        cfg.train.lr = 1e-2;
        cfg.train.checkpoint_every = 150;
        cfg.train.val_every = 100;
        cfg.infer.steps = 10;
        cfg.infer.sample_seeds = 5;
        cfg.sample.n = 2;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.world.validate()?;
        let check = |name: &str, got: usize, want: usize| -> Result<()> {
            if got != want {
                return Err(Error::Config(format!(
                    "{name} = {got} does not match the world ({want})"
                )));
            }
            Ok(())
        };
        check("arch.c_lat_v", self.arch.c_lat_v, self.world.cells)?;
        check("arch.c_lat_a", self.arch.c_lat_a, AUDIO_FEATURES)?;
        check("arch.f_v", self.arch.f_v, self.world.f_v())?;
        check("arch.f_a", self.arch.f_a, self.world.f_a)?;
        if self.arch.vocab < DESCRIPTOR_VOCAB {
            return Err(Error::Config(format!(
                "arch.vocab = {} is smaller than the descriptor vocabulary ({DESCRIPTOR_VOCAB})",
                self.arch.vocab
            )));
        }
        if self.arch.sync.delta_t_video != self.world.delta_t_video()
            || self.arch.sync.delta_t_audio != self.world.delta_t_audio()
        {
            return Err(Error::Config(
                "arch.delta_t_{video,audio} must equal the world's latent frame rates".into(),
            ));
        }
        if self.train.steps == 0 || self.train.batch == 0 {
            return Err(Error::Config("train.steps and train.batch must be nonzero".into()));
        }
        if !(self.train.lr > 0.0) {
            return Err(Error::Config("train.lr must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.train.null_prob) {
            return Err(Error::Config("train.null_prob must lie in [0, 1]".into()));
        }
        if self.train.lambda_v < 0.0 || self.train.lambda_a < 0.0 {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        if self.train.checkpoint_every == 0 || self.train.val_every == 0 {
            return Err(Error::Config(
                "train.checkpoint_every and train.val_every must be nonzero".into(),
            ));
        }
        if self.infer.steps == 0 {
            return Err(Error::Config("infer.steps must be nonzero".into()));
        }
        if self.infer.sample_seeds == 0 {
            return Err(Error::Config("infer.sample_seeds must be nonzero".into()));
        }
        if self.data.train_clips == 0 || self.data.eval_clips == 0 {
            return Err(Error::Config("data.train_clips and data.eval_clips must be nonzero".into()));
        }
        for v in &self.ablate.attention {
            AttentionVariant::parse(v)?;
        }
        for v in &self.ablate.rope {
            RopeVariant::parse(v)?;
        }
        if self.ablate.attention.is_empty()
            || self.ablate.rope.is_empty()
            || self.ablate.lambda_a.is_empty()
            || self.ablate.scale_a.is_empty()
        {
            return Err(Error::Config("ablate axes must be non-empty".into()));
        }
        Ok(())
    }

    /// Canonical text form: one sorted `key = value` line per field.
    pub fn emit(&self) -> String {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for line in self.arch.header_text(self.kind).lines() {
            let (k, v) = line.split_once(" = ").expect("canonical header line");
            let key = if k == "kind" { "model.kind".to_string() } else { k.to_string() };
            pairs.push((key, v.to_string()));
        }
        let w = &self.world;
        pairs.push(("world.ambient_level".into(), format!("{:?}", w.ambient_level)));
        pairs.push(("world.cells".into(), w.cells.to_string()));
        pairs.push(("world.click_decay".into(), format!("{:?}", w.click_decay)));
        pairs.push(("world.clip_seconds".into(), format!("{:?}", w.clip_seconds)));
        pairs.push(("world.encoder_seed".into(), w.encoder_seed.to_string()));
        pairs.push(("world.f_a".into(), w.f_a.to_string()));
        pairs.push(("world.fps".into(), w.fps.to_string()));
        pairs.push(("world.gravity".into(), format!("{:?}", w.gravity)));
        pairs.push(("world.h_max".into(), format!("{:?}", w.h_max)));
        pairs.push(("world.restitution_hi".into(), format!("{:?}", w.restitution.1)));
        pairs.push(("world.restitution_lo".into(), format!("{:?}", w.restitution.0)));
        pairs.push(("world.temporal_factor".into(), w.temporal_factor.to_string()));
        let d = &self.data;
        pairs.push(("data.eval_clips".into(), d.eval_clips.to_string()));
        pairs.push(("data.filtered".into(), d.filtered.to_string()));
        pairs.push(("data.seed".into(), d.seed.to_string()));
        pairs.push(("data.train_clips".into(), d.train_clips.to_string()));
        let t = &self.train;
        pairs.push(("train.batch".into(), t.batch.to_string()));
        pairs.push(("train.checkpoint_every".into(), t.checkpoint_every.to_string()));
        pairs.push(("train.lambda_a".into(), format!("{:?}", t.lambda_a)));
        pairs.push(("train.lambda_v".into(), format!("{:?}", t.lambda_v)));
        pairs.push(("train.lr".into(), format!("{:?}", t.lr)));
        pairs.push(("train.null_prob".into(), format!("{:?}", t.null_prob)));
        pairs.push(("train.seed".into(), t.seed.to_string()));
        pairs.push(("train.steps".into(), t.steps.to_string()));
        pairs.push(("train.val_every".into(), t.val_every.to_string()));
        let i = &self.infer;
        pairs.push(("infer.sample_seeds".into(), i.sample_seeds.to_string()));
        pairs.push(("infer.scale_a".into(), format!("{:?}", i.scale_a)));
        pairs.push(("infer.scale_v".into(), format!("{:?}", i.scale_v)));
        pairs.push(("infer.seed".into(), i.seed.to_string()));
        pairs.push(("infer.steps".into(), i.steps.to_string()));
        let s = &self.sample;
        pairs.push(("sample.checkpoint".into(), s.checkpoint.clone()));
        pairs.push(("sample.desc_audio".into(), s.desc_audio.join(",")));
        pairs.push(("sample.desc_video".into(), s.desc_video.join(",")));
        pairs.push(("sample.n".into(), s.n.to_string()));
        let a = &self.ablate;
        pairs.push(("ablate.attention".into(), a.attention.join(",")));
        pairs.push((
            "ablate.lambda_a".into(),
            a.lambda_a.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(","),
        ));
        pairs.push(("ablate.rope".into(), a.rope.join(",")));
        pairs.push((
            "ablate.scale_a".into(),
            a.scale_a.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(","),
        ));
        pairs.sort();
        pairs.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// FNV-1a of the canonical text; reports cite this digest.
    pub fn digest(&self) -> u64 {
        fnv1a64(self.emit().as_bytes())
    }

    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let mut kv: IndexMap<String, String> = IndexMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got {raw:?}", lineno + 1))
            })?;
            let key = k.trim().to_string();
            if kv.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("duplicate key {key:?}")));
            }
        }
        let mut cfg = ExperimentConfig::default();
        let mut arch_kind = cfg.arch.header_text(cfg.kind);
        // fold recognized keys into the canonical arch header, rebuild from it
        {
            let mut lines: IndexMap<String, String> = arch_kind
                .lines()
                .map(|l| {
                    let (k, v) = l.split_once(" = ").expect("canonical header line");
                    (k.to_string(), v.to_string())
                })
                .collect();
            for (k, v) in &kv {
                if let Some(stripped) = k.strip_prefix("arch.") {
                    let full = format!("arch.{stripped}");
                    if !lines.contains_key(&full) {
                        return Err(Error::Config(format!("unknown key {k:?}")));
                    }
                    lines.insert(full, v.clone());
                } else if k == "model.kind" {
                    lines.insert("kind".into(), v.clone());
                }
            }
            let mut sorted: Vec<(String, String)> =
                lines.into_iter().collect();
            sorted.sort();
            arch_kind =
                sorted.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect::<String>();
        }
        let (arch, kind) = ArchitectureConfig::from_header_text(&arch_kind)?;
        cfg.arch = arch;
        cfg.kind = kind;

        fn get_parsed<T: std::str::FromStr>(kv: &IndexMap<String, String>, key: &str, into: &mut T) -> Result<()> {
            if let Some(v) = kv.get(key) {
                *into = v
                    .parse()
                    .map_err(|_| Error::Config(format!("bad value for {key}: {v:?}")))?;
            }
            Ok(())
        }
        fn get_list(kv: &IndexMap<String, String>, key: &str, into: &mut Vec<String>) {
            if let Some(v) = kv.get(key) {
                *into = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(|s| s.trim().to_string()).collect()
                };
            }
        }
        fn get_f64_list(kv: &IndexMap<String, String>, key: &str, into: &mut Vec<f64>) -> Result<()> {
            if let Some(v) = kv.get(key) {
                let mut out = Vec::new();
                for part in v.split(',') {
                    out.push(part.trim().parse().map_err(|_| {
                        Error::Config(format!("bad value for {key}: {part:?}"))
                    })?);
                }
                *into = out;
            }
            Ok(())
        }

        get_parsed(&kv, "world.gravity", &mut cfg.world.gravity)?;
        get_parsed(&kv, "world.h_max", &mut cfg.world.h_max)?;
        get_parsed(&kv, "world.clip_seconds", &mut cfg.world.clip_seconds)?;
        get_parsed(&kv, "world.fps", &mut cfg.world.fps)?;
        get_parsed(&kv, "world.temporal_factor", &mut cfg.world.temporal_factor)?;
        get_parsed(&kv, "world.f_a", &mut cfg.world.f_a)?;
        get_parsed(&kv, "world.cells", &mut cfg.world.cells)?;
        get_parsed(&kv, "world.restitution_lo", &mut cfg.world.restitution.0)?;
        get_parsed(&kv, "world.restitution_hi", &mut cfg.world.restitution.1)?;
        get_parsed(&kv, "world.click_decay", &mut cfg.world.click_decay)?;
        get_parsed(&kv, "world.ambient_level", &mut cfg.world.ambient_level)?;
        get_parsed(&kv, "world.encoder_seed", &mut cfg.world.encoder_seed)?;
        get_parsed(&kv, "data.train_clips", &mut cfg.data.train_clips)?;
        get_parsed(&kv, "data.eval_clips", &mut cfg.data.eval_clips)?;
        get_parsed(&kv, "data.seed", &mut cfg.data.seed)?;
        get_parsed(&kv, "data.filtered", &mut cfg.data.filtered)?;
        get_parsed(&kv, "train.steps", &mut cfg.train.steps)?;
        get_parsed(&kv, "train.batch", &mut cfg.train.batch)?;
        get_parsed(&kv, "train.lr", &mut cfg.train.lr)?;
        get_parsed(&kv, "train.lambda_v", &mut cfg.train.lambda_v)?;
        get_parsed(&kv, "train.lambda_a", &mut cfg.train.lambda_a)?;
        get_parsed(&kv, "train.seed", &mut cfg.train.seed)?;
        get_parsed(&kv, "train.null_prob", &mut cfg.train.null_prob)?;
        get_parsed(&kv, "train.checkpoint_every", &mut cfg.train.checkpoint_every)?;
        get_parsed(&kv, "train.val_every", &mut cfg.train.val_every)?;
        get_parsed(&kv, "infer.steps", &mut cfg.infer.steps)?;
        get_parsed(&kv, "infer.scale_v", &mut cfg.infer.scale_v)?;
        get_parsed(&kv, "infer.scale_a", &mut cfg.infer.scale_a)?;
        get_parsed(&kv, "infer.seed", &mut cfg.infer.seed)?;
        get_parsed(&kv, "infer.sample_seeds", &mut cfg.infer.sample_seeds)?;
        get_parsed(&kv, "sample.n", &mut cfg.sample.n)?;
        if let Some(v) = kv.get("sample.checkpoint") {
            cfg.sample.checkpoint = v.clone();
        }
        get_list(&kv, "sample.desc_video", &mut cfg.sample.desc_video);
        get_list(&kv, "sample.desc_audio", &mut cfg.sample.desc_audio);
        get_list(&kv, "ablate.attention", &mut cfg.ablate.attention);
        get_list(&kv, "ablate.rope", &mut cfg.ablate.rope);
        get_f64_list(&kv, "ablate.lambda_a", &mut cfg.ablate.lambda_a)?;
        get_f64_list(&kv, "ablate.scale_a", &mut cfg.ablate.scale_a)?;

        // reject unknown keys so typos surface instead of silently using defaults
        let known: std::collections::HashSet<String> =
            cfg.emit().lines().filter_map(|l| l.split_once(" = ").map(|(k, _)| k.to_string())).collect();
        for k in kv.keys() {
            if !known.contains(k) {
                return Err(Error::Config(format!("unknown key {k:?}")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        ExperimentConfig::parse(&text)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.emit()).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Map a symbol name (or bare number) to its descriptor symbol.
pub fn parse_symbol(s: &str) -> Result<usize> {
    if let Ok(n) = s.parse::<usize>() {
        if n < DESCRIPTOR_VOCAB {
            return Ok(n);
        }
        return Err(Error::Config(format!(
            "descriptor symbol {n} outside vocabulary 0..{DESCRIPTOR_VOCAB}"
        )));
    }
    for sym in 0..DESCRIPTOR_VOCAB {
        if crate::world::symbol_name(sym) == s {
            return Ok(sym);
        }
    }
    Err(Error::Config(format!("unknown descriptor symbol {s:?}")))
}

pub fn parse_descriptor(names: &[String]) -> Result<Vec<usize>> {
    names.iter().map(|n| parse_symbol(n)).collect()
}
