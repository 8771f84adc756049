//! Experiment orchestration: train a run directory, train matched twins and
//! compare them, sample from a checkpoint, and sweep the ablation grid.
//!
//! Every run directory contains the canonical config copy, per-step logs,
//! checkpoints, a report, and a deviations header. Reports carry no wall
//! times (those live in train_log.txt only), so a rerun of the same config
//! reproduces every report byte for byte.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{parse_descriptor, ExperimentConfig};
use crate::error::{Error, Result};
use crate::eval::{contact_score, motion_magnitude, score_latents, score_set, ClipScores};
use crate::flow::{
    sample_joint, sample_video, train_step_joint, train_step_mono, validation_loss_joint,
    validation_loss_mono, ClipBatchItem, GuidanceSpec, LossWeights, MonoItem,
};
use crate::model::{Model, ModelKind};
use crate::optim::AdamW;
use crate::par::par_map;
use crate::rope::RopeVariant;
use crate::tensor::{fnv1a64, fnv1a64_f64, Tensor};
use crate::world::{
    corrupt_video_descriptor, decode_video, make_dataset, Dataset, Encoders, Scenario, SYM_NULL,
};

/// Standing deviations from the source protocol, stamped into every run.
pub const DEVIATIONS: &str = "\
uniform timestep sampling
per-modality mean mse (lambda 1:1 is scale balanced)
from-scratch toy learning rate (default 1e-3)
fixed invertible linear encoders stand in for pretrained latent codecs
null descriptors (symbol 0) stand in for negative prompts
";

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

fn write_file(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).map_err(|e| Error::io(path.display().to_string(), e))
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Digest of the video-tower parameters, for matched-init bookkeeping.
pub fn video_tower_digest(model: &Model) -> u64 {
    let mut acc = FNV_OFFSET;
    for (name, t) in &model.params {
        if name.starts_with("video.") {
            acc = fnv1a64_f64(acc, t.data());
        }
    }
    acc
}

/// Digest of all latents in a dataset (train split then eval split).
pub fn dataset_digest(ds: &Dataset) -> u64 {
    let mut acc = FNV_OFFSET;
    for clip in ds.train.iter().chain(ds.eval.iter()) {
        acc = fnv1a64_f64(acc, clip.video.data());
        acc = fnv1a64_f64(acc, clip.audio.data());
    }
    acc
}

fn null_video() -> Vec<usize> {
    vec![SYM_NULL; 3]
}

fn null_audio() -> Vec<usize> {
    vec![SYM_NULL; 2]
}

fn guidance_for(cfg: &ExperimentConfig) -> GuidanceSpec {
    GuidanceSpec {
        s_video: cfg.infer.scale_v,
        s_audio: cfg.infer.scale_a,
        null_video: null_video(),
        null_audio: null_audio(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValPoint {
    pub step: usize,
    pub video: f64,
    pub audio: f64,
    pub total: f64,
}

/// Everything a caller needs after cmd_train, kept in memory so compare and
/// ablate can evaluate without reloading.
pub struct TrainArtifacts {
    pub dir: PathBuf,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub val_curve: Vec<ValPoint>,
    pub init_video_digest: u64,
    pub data_digest: u64,
    pub model: Model,
    pub dataset: Dataset,
}

/// Train one model per the config into `out`: dataset, model, AdamW loop,
/// per-step logs, periodic checkpoints and validation, final checkpoint and
/// run report.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainArtifacts> {
    cfg.validate()?;
    ensure_dir(out)?;
    write_file(&out.join("config.txt"), &cfg.emit())?;
    write_file(&out.join("deviations.txt"), DEVIATIONS)?;

    let ds = make_dataset(
        &cfg.world,
        cfg.data.train_clips,
        cfg.data.eval_clips,
        cfg.data.seed,
        cfg.data.filtered,
    )?;
    let data_digest = dataset_digest(&ds);
    let mut model = Model::build(&cfg.arch, cfg.kind, cfg.train.seed)?;
    let init_video_digest = video_tower_digest(&model);
    let mut opt = AdamW::new(cfg.train.lr);
    let weights = LossWeights { video: cfg.train.lambda_v, audio: cfg.train.lambda_a };
    let nv = null_video();
    let na = null_audio();
    let val_seed = cfg.data.seed ^ fnv1a64(b"val.noise");

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed ^ fnv1a64(b"train.noise"));
    let mut batch_rng = ChaCha8Rng::seed_from_u64(cfg.train.seed ^ fnv1a64(b"train.batch"));

    let mut train_log = String::new();
    let mut loss_log = String::new();
    let mut val_log = String::new();
    let mut val_curve = Vec::new();
    let mut initial_loss = 0.0;
    let mut final_loss = 0.0;

    for step in 1..=cfg.train.steps {
        let t0 = Instant::now();
        let idx: Vec<usize> =
            (0..cfg.train.batch).map(|_| batch_rng.gen_range(0..ds.train.len())).collect();
        let stats = match cfg.kind {
            ModelKind::Joint => {
                let items: Vec<ClipBatchItem> = idx
                    .iter()
                    .map(|&i| {
                        let c = &ds.train[i];
                        ClipBatchItem {
                            x0_video: &c.video,
                            x0_audio: &c.audio,
                            desc_video: &c.desc_video,
                            desc_audio: &c.desc_audio,
                        }
                    })
                    .collect();
                train_step_joint(
                    &mut model,
                    &mut opt,
                    &items,
                    &weights,
                    cfg.train.null_prob,
                    &nv,
                    &na,
                    &mut rng,
                )?
            }
            ModelKind::VideoOnly => {
                let items: Vec<MonoItem> = idx
                    .iter()
                    .map(|&i| {
                        let c = &ds.train[i];
                        MonoItem { x0: &c.video, desc: &c.desc_video }
                    })
                    .collect();
                train_step_mono(&mut model, &mut opt, &items, &nv, cfg.train.null_prob, &mut rng)?
            }
            ModelKind::AudioOnly => {
                let items: Vec<MonoItem> = idx
                    .iter()
                    .map(|&i| {
                        let c = &ds.train[i];
                        MonoItem { x0: &c.audio, desc: &c.desc_audio }
                    })
                    .collect();
                train_step_mono(&mut model, &mut opt, &items, &na, cfg.train.null_prob, &mut rng)?
            }
        };
        let wall_ms = t0.elapsed().as_millis();
        if step == 1 {
            initial_loss = stats.loss;
        }
        final_loss = stats.loss;
        let body = format!(
            "step={step} loss_v={:?} loss_a={:?} loss={:?}",
            stats.loss_video, stats.loss_audio, stats.loss
        );
        train_log.push_str(&format!("{body} wall_ms={wall_ms}\n"));
        loss_log.push_str(&body);
        loss_log.push('\n');

        if step % cfg.train.val_every == 0 || step == cfg.train.steps {
            let vp = match cfg.kind {
                ModelKind::Joint => {
                    let items: Vec<ClipBatchItem> = ds
                        .eval
                        .iter()
                        .map(|c| ClipBatchItem {
                            x0_video: &c.video,
                            x0_audio: &c.audio,
                            desc_video: &c.desc_video,
                            desc_audio: &c.desc_audio,
                        })
                        .collect();
                    let s = validation_loss_joint(&model, &items, &weights, val_seed)?;
                    ValPoint { step, video: s.loss_video, audio: s.loss_audio, total: s.loss }
                }
                ModelKind::VideoOnly => {
                    let items: Vec<MonoItem> = ds
                        .eval
                        .iter()
                        .map(|c| MonoItem { x0: &c.video, desc: &c.desc_video })
                        .collect();
                    let v = validation_loss_mono(&model, &items, val_seed)?;
                    ValPoint { step, video: v, audio: 0.0, total: v }
                }
                ModelKind::AudioOnly => {
                    let items: Vec<MonoItem> = ds
                        .eval
                        .iter()
                        .map(|c| MonoItem { x0: &c.audio, desc: &c.desc_audio })
                        .collect();
                    let a = validation_loss_mono(&model, &items, val_seed)?;
                    ValPoint { step, video: 0.0, audio: a, total: a }
                }
            };
            val_log.push_str(&format!(
                "step={step} val_v={:?} val_a={:?} val={:?}\n",
                vp.video, vp.audio, vp.total
            ));
            val_curve.push(vp);
        }
        if step % cfg.train.checkpoint_every == 0 && step != cfg.train.steps {
            model.save(&out.join(format!("ckpt_step{step}.avfd")))?;
        }
    }
    model.save(&out.join("model.avfd"))?;
    write_file(&out.join("train_log.txt"), &train_log)?;
    write_file(&out.join("loss_log.txt"), &loss_log)?;
    write_file(&out.join("val_log.txt"), &val_log)?;

    let mut report = String::new();
    report.push_str("schema = avfd.train.v1\n");
    report.push_str(&format!("config_digest = {:016x}\n", cfg.digest()));
    report.push_str(&format!("kind = {}\n", cfg.kind.name()));
    report.push_str(&format!("parameters = {}\n", model.parameter_count()));
    report.push_str(&format!("init_video_digest = {init_video_digest:016x}\n"));
    report.push_str(&format!("data_digest = {data_digest:016x}\n"));
    report.push_str(&format!("initial_loss = {initial_loss:?}\n"));
    report.push_str(&format!("final_loss = {final_loss:?}\n"));
    if let Some(vp) = val_curve.last() {
        report.push_str(&format!("final_val = {:?}\n", vp.total));
    }
    write_file(&out.join("report.txt"), &report)?;

    Ok(TrainArtifacts {
        dir: out.to_path_buf(),
        initial_loss,
        final_loss,
        val_curve,
        init_video_digest,
        data_digest,
        model,
        dataset: ds,
    })
}

// ── sample evaluation shared by compare and ablate ─────────────────────

/// Scores for one generated sample. `gt` references the conditioning
/// clip's true click times for contact_score; `self_audio` (joint models
/// only) references the sample's own decoded audio instead. sync_offset is
/// always video-vs-own-audio; motion is identical in both.
#[derive(Debug, Clone)]
pub struct SampleScore {
    pub seed_ix: usize,
    pub subset: String,
    pub gt: ClipScores,
    pub self_audio: Option<ClipScores>,
}

/// Sample from `model` once per (eval clip, sampling seed) and score.
/// With `corrupt` set, only bounce clips are used and their video
/// descriptors are mismatched first. Sampling seeds depend on (seed index,
/// clip index, corruption) but not on the model, so twins see identical
/// starting noise.
pub fn evaluate_samples(
    model: &Model,
    ds: &Dataset,
    cfg: &ExperimentConfig,
    corrupt: bool,
) -> Result<Vec<SampleScore>> {
    let enc = Encoders::build(&cfg.world)?;
    let guidance = guidance_for(cfg);
    let mut jobs = Vec::new();
    for (ci, clip) in ds.eval.iter().enumerate() {
        if corrupt && clip.scenario != Scenario::BouncingBall {
            continue;
        }
        for s in 0..cfg.infer.sample_seeds {
            jobs.push((ci, s));
        }
    }
    let world = cfg.world.clone();
    let outs = par_map(jobs, |(ci, s)| -> Result<SampleScore> {
        let clip = &ds.eval[ci];
        let desc_v = if corrupt {
            corrupt_video_descriptor(&clip.desc_video)?
        } else {
            clip.desc_video.clone()
        };
        let seed =
            cfg.infer.seed ^ fnv1a64(format!("sample.s{s}.clip{ci}.corrupt{corrupt}").as_bytes());
        match model.kind {
            ModelKind::Joint => {
                let (v, a) =
                    sample_joint(model, &desc_v, &clip.desc_audio, &guidance, cfg.infer.steps, seed)?;
                let gt = score_latents(&v, &a, Some(clip.contact_times.as_slice()), &world, &enc)?;
                let self_audio = score_latents(&v, &a, None, &world, &enc)?;
                Ok(SampleScore {
                    seed_ix: s,
                    subset: clip.scenario.name().to_string(),
                    gt,
                    self_audio: Some(self_audio),
                })
            }
            ModelKind::VideoOnly => {
                let v = sample_video(
                    model,
                    &desc_v,
                    guidance.s_video,
                    &guidance.null_video,
                    cfg.infer.steps,
                    seed,
                )?;
                let occ = decode_video(&v, &enc)?;
                let gt = ClipScores {
                    motion: Some(motion_magnitude(&occ)?),
                    contact: contact_score(&occ, &clip.contact_times, &world),
                    sync: None,
                };
                Ok(SampleScore {
                    seed_ix: s,
                    subset: clip.scenario.name().to_string(),
                    gt,
                    self_audio: None,
                })
            }
            ModelKind::AudioOnly => Err(Error::Contract(
                "sample evaluation over the eval split needs a video tower".into(),
            )),
        }
    });
    outs.into_iter().collect()
}

fn metric_table(items: &[(String, ClipScores)]) -> String {
    let mut out = String::from("subset|metric|n|mean|std\n");
    for line in score_set(items) {
        out.push_str(&line.emit());
        out.push('\n');
    }
    out
}

/// Per-seed means of one metric over one subset; seeds with no data are None.
fn per_seed_means(
    scores: &[SampleScore],
    seeds: usize,
    subset: &str,
    f: impl Fn(&SampleScore) -> Option<f64>,
) -> Vec<Option<f64>> {
    (0..seeds)
        .map(|s| {
            let vals: Vec<f64> = scores
                .iter()
                .filter(|x| x.seed_ix == s && x.subset == subset)
                .filter_map(&f)
                .collect();
            if vals.is_empty() {
                None
            } else {
                Some(vals.iter().sum::<f64>() / vals.len() as f64)
            }
        })
        .collect()
}

/// Normal-approximation 95% interval over per-seed values.
fn ci(values: &[f64]) -> (f64, f64, f64) {
    let k = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / k;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    let half = 1.96 * sd / k.sqrt();
    (mean, mean - half, mean + half)
}

fn sign_of(v: f64) -> &'static str {
    if v > 0.0 {
        "+"
    } else if v < 0.0 {
        "-"
    } else {
        "0"
    }
}

fn finding_line(name: &str, per_seed_pairs: &[(f64, f64)]) -> String {
    let deltas: Vec<f64> = per_seed_pairs.iter().map(|(a, b)| a - b).collect();
    let (mean, lo, hi) = ci(&deltas);
    format!("{name}|{}|{mean:?}|{lo:?}|{hi:?}|{}\n", deltas.len(), sign_of(mean))
}

fn paired(a: &[Option<f64>], b: &[Option<f64>]) -> Vec<(f64, f64)> {
    a.iter()
        .zip(b)
        .filter_map(|(x, y)| match (x, y) {
            (Some(x), Some(y)) => Some((*x, *y)),
            _ => None,
        })
        .collect()
}

const BOUNCE: &str = "bouncing_ball";

/// Train the matched T2AV/T2V twins plus a vanilla-RoPE T2AV twin, sample
/// and score all three under shared seeds, and assemble the comparison
/// report. Returns the report path.
pub fn cmd_compare(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    ensure_dir(out)?;
    write_file(&out.join("config.txt"), &cfg.emit())?;
    write_file(&out.join("deviations.txt"), DEVIATIONS)?;

    let mut cfg_t2av = cfg.clone();
    cfg_t2av.kind = ModelKind::Joint;
    let mut cfg_van = cfg_t2av.clone();
    cfg_van.arch.rope_variant = RopeVariant::Vanilla;
    let mut cfg_t2v = cfg.clone();
    cfg_t2v.kind = ModelKind::VideoOnly;

    let art_av = cmd_train(&cfg_t2av, &out.join("t2av"))?;
    let art_van = cmd_train(&cfg_van, &out.join("t2av_vanilla"))?;
    let art_v = cmd_train(&cfg_t2v, &out.join("t2v"))?;
    if art_av.data_digest != art_v.data_digest || art_av.data_digest != art_van.data_digest {
        return Err(Error::Contract("twin runs saw different datasets".into()));
    }

    let seeds = cfg.infer.sample_seeds;
    let clean_av = evaluate_samples(&art_av.model, &art_av.dataset, &cfg_t2av, false)?;
    let corrupt_av = evaluate_samples(&art_av.model, &art_av.dataset, &cfg_t2av, true)?;
    let clean_van = evaluate_samples(&art_van.model, &art_van.dataset, &cfg_van, false)?;
    let corrupt_van = evaluate_samples(&art_van.model, &art_van.dataset, &cfg_van, true)?;
    let clean_v = evaluate_samples(&art_v.model, &art_v.dataset, &cfg_t2v, false)?;
    let corrupt_v = evaluate_samples(&art_v.model, &art_v.dataset, &cfg_t2v, true)?;

    let mut r = String::new();
    r.push_str("schema = avfd.compare.v1\n");
    r.push_str(&format!("config_digest = {:016x}\n", cfg.digest()));
    r.push_str(&format!("data_digest = {:016x}\n", art_av.data_digest));
    r.push_str("models = t2av, t2av_vanilla, t2v\n");
    r.push_str(&format!("t2av.init_video_digest = {:016x}\n", art_av.init_video_digest));
    r.push_str(&format!("t2av_vanilla.init_video_digest = {:016x}\n", art_van.init_video_digest));
    r.push_str(&format!("t2v.init_video_digest = {:016x}\n", art_v.init_video_digest));
    r.push_str(&format!(
        "matched_init = {}\n",
        art_av.init_video_digest == art_v.init_video_digest
    ));
    for line in DEVIATIONS.lines() {
        r.push_str(&format!("deviation = {line}\n"));
    }

    // validation curves on one shared step grid
    r.push_str("\n[val_loss]\n");
    r.push_str("step|t2av_video|t2av_audio|t2av_total|t2av_vanilla_video|t2av_vanilla_audio|t2av_vanilla_total|t2v_video\n");
    if art_av.val_curve.len() != art_v.val_curve.len()
        || art_av.val_curve.len() != art_van.val_curve.len()
    {
        return Err(Error::Contract("validation grids differ between twin runs".into()));
    }
    for ((a, n), v) in art_av.val_curve.iter().zip(&art_van.val_curve).zip(&art_v.val_curve) {
        if a.step != v.step || a.step != n.step {
            return Err(Error::Contract("validation grids differ between twin runs".into()));
        }
        r.push_str(&format!(
            "{}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}\n",
            a.step, a.video, a.audio, a.total, n.video, n.audio, n.total, v.video
        ));
    }

    // pooled metric tables
    let gt_items = |scores: &[SampleScore]| -> Vec<(String, ClipScores)> {
        scores.iter().map(|s| (s.subset.clone(), s.gt.clone())).collect()
    };
    let self_items = |scores: &[SampleScore]| -> Vec<(String, ClipScores)> {
        scores
            .iter()
            .filter_map(|s| s.self_audio.clone().map(|sc| (s.subset.clone(), sc)))
            .collect()
    };
    for (label, clean, corrupt, joint) in [
        ("t2av", &clean_av, &corrupt_av, true),
        ("t2av_vanilla", &clean_van, &corrupt_van, true),
        ("t2v", &clean_v, &corrupt_v, false),
    ] {
        r.push_str(&format!("\n[metrics model={label} cond=clean contact=ground_truth]\n"));
        r.push_str(&metric_table(&gt_items(clean)));
        if joint {
            r.push_str(&format!("\n[metrics model={label} cond=clean contact=self_audio]\n"));
            r.push_str(&metric_table(&self_items(clean)));
        }
        r.push_str(&format!("\n[metrics model={label} cond=corrupted contact=ground_truth]\n"));
        r.push_str(&metric_table(&gt_items(corrupt)));
    }

    // per-seed confidence intervals on the bounce subset
    for (label, clean) in
        [("t2av", &clean_av), ("t2av_vanilla", &clean_van), ("t2v", &clean_v)]
    {
        r.push_str(&format!("\n[ci model={label} cond=clean subset={BOUNCE}]\n"));
        r.push_str("metric|seeds|mean|lo|hi\n");
        for (metric, f) in [
            ("motion_magnitude", (|s: &SampleScore| s.gt.motion) as fn(&SampleScore) -> Option<f64>),
            ("contact_score", |s: &SampleScore| s.gt.contact),
            ("sync_offset_abs", |s: &SampleScore| s.gt.sync.map(f64::abs)),
        ] {
            let vals: Vec<f64> =
                per_seed_means(clean, seeds, BOUNCE, f).into_iter().flatten().collect();
            let (mean, lo, hi) = ci(&vals);
            r.push_str(&format!("{metric}|{}|{mean:?}|{lo:?}|{hi:?}\n", vals.len()));
        }
    }

    // directional findings, reported with sign and interval, never asserted
    r.push_str("\n[findings]\n");
    r.push_str("finding|seeds|mean|lo|hi|sign\n");
    let av_contact = per_seed_means(&clean_av, seeds, BOUNCE, |s| s.gt.contact);
    let v_contact = per_seed_means(&clean_v, seeds, BOUNCE, |s| s.gt.contact);
    r.push_str(&finding_line(
        "contact_gt_bounce_t2av_minus_t2v",
        &paired(&av_contact, &v_contact),
    ));
    let av_corrupt = per_seed_means(&corrupt_av, seeds, BOUNCE, |s| s.gt.contact);
    let v_corrupt = per_seed_means(&corrupt_v, seeds, BOUNCE, |s| s.gt.contact);
    r.push_str(&finding_line(
        "contact_gt_corrupted_t2av_minus_t2v",
        &paired(&av_corrupt, &v_corrupt),
    ));
    let van_sync = per_seed_means(&clean_van, seeds, BOUNCE, |s| s.gt.sync.map(f64::abs));
    let av_sync = per_seed_means(&clean_av, seeds, BOUNCE, |s| s.gt.sync.map(f64::abs));
    r.push_str(&finding_line(
        "sync_abs_bounce_vanilla_minus_shrink",
        &paired(&van_sync, &av_sync),
    ));

    let path = out.join("report.txt");
    write_file(&path, &r)?;
    Ok(path)
}

/// Sample `sample.n` clips from a checkpoint, write them as a container
/// plus a score report. Returns the report path.
pub fn cmd_sample(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    ensure_dir(out)?;
    if cfg.sample.checkpoint.is_empty() {
        return Err(Error::Config("sample.checkpoint is not set".into()));
    }
    let model = Model::load(Path::new(&cfg.sample.checkpoint))?;
    let desc_v = parse_descriptor(&cfg.sample.desc_video)?;
    let desc_a = parse_descriptor(&cfg.sample.desc_audio)?;
    for &sym in desc_v.iter().chain(desc_a.iter()) {
        if sym >= model.config.vocab {
            return Err(Error::Config(format!(
                "descriptor symbol {sym} outside the checkpoint vocabulary {}",
                model.config.vocab
            )));
        }
    }
    let w = &cfg.world;
    if model.config.c_lat_v != w.cells
        || model.config.f_v != w.f_v()
        || model.config.c_lat_a != crate::world::AUDIO_FEATURES
        || model.config.f_a != w.f_a
    {
        return Err(Error::Config(
            "checkpoint latent geometry does not match the configured world".into(),
        ));
    }
    let enc = Encoders::build(w)?;
    let guidance = guidance_for(cfg);

    let jobs: Vec<usize> = (0..cfg.sample.n).collect();
    let world = w.clone();
    let results = par_map(jobs, |i| -> Result<(Option<(Tensor, Tensor)>, ClipScores)> {
        let seed = cfg.infer.seed ^ fnv1a64(format!("sample.clip{i}").as_bytes());
        match model.kind {
            ModelKind::Joint => {
                let (v, a) = sample_joint(&model, &desc_v, &desc_a, &guidance, cfg.infer.steps, seed)?;
                let scores = score_latents(&v, &a, None, &world, &enc)?;
                Ok((Some((v, a)), scores))
            }
            ModelKind::VideoOnly => {
                let v = sample_video(
                    &model,
                    &desc_v,
                    guidance.s_video,
                    &guidance.null_video,
                    cfg.infer.steps,
                    seed,
                )?;
                let occ = decode_video(&v, &enc)?;
                let scores = ClipScores {
                    motion: Some(motion_magnitude(&occ)?),
                    contact: None,
                    sync: None,
                };
                let silent = Tensor::zeros(&[model.config.f_a, model.config.c_lat_a]);
                Ok((Some((v, silent)), scores))
            }
            ModelKind::AudioOnly => {
                let a = crate::flow::sample_audio(
                    &model,
                    &desc_a,
                    guidance.s_audio,
                    &guidance.null_audio,
                    cfg.infer.steps,
                    seed,
                )?;
                let empty = Tensor::zeros(&[model.config.f_v, model.config.c_lat_v]);
                Ok((
                    Some((empty, a)),
                    ClipScores { motion: None, contact: None, sync: None },
                ))
            }
        }
    });
    let mut blobs: Vec<(String, Tensor)> = Vec::new();
    let mut items: Vec<(String, ClipScores)> = Vec::new();
    for (i, res) in results.into_iter().enumerate() {
        let (tensors, scores) = res?;
        if let Some((v, a)) = tensors {
            blobs.push((format!("sample{i}.video"), v.clone()));
            blobs.push((format!("sample{i}.audio"), a.clone()));
            blobs.push((format!("sample{i}.video_decoded"), decode_video(&v, &enc)?));
            blobs.push((format!("sample{i}.audio_decoded"), crate::world::decode_audio(&a, &enc)?));
        }
        items.push(("sample".to_string(), scores));
    }
    let header = format!(
        "count = {}\ndesc_audio = {}\ndesc_video = {}\nkind = {}\nseed = {}\n",
        cfg.sample.n,
        cfg.sample.desc_audio.join(","),
        cfg.sample.desc_video.join(","),
        model.kind.name(),
        cfg.infer.seed,
    );
    crate::checkpoint::save_container(
        &out.join("samples.avfd"),
        &header,
        blobs.iter().map(|(k, v)| (k, v)),
    )?;
    let mut report = String::from("schema = avfd.sample.v1\n");
    report.push_str(&format!("config_digest = {:016x}\n", cfg.digest()));
    report.push_str(&format!("n = {}\n\n", cfg.sample.n));
    report.push_str("subset|metric|n|mean|std\n");
    for line in score_set(&items) {
        report.push_str(&line.emit());
        report.push('\n');
    }
    let path = out.join("sample_report.txt");
    write_file(&path, &report)?;
    Ok(path)
}

/// One ablation-grid cell.
#[derive(Debug, Clone)]
pub struct AblateCell {
    pub attention: String,
    pub rope: String,
    pub lambda_a: f64,
    pub scale_a: f64,
}

impl AblateCell {
    fn label(&self) -> String {
        format!(
            "attention={} rope={} lambda_a={:?} scale_a={:?}",
            self.attention, self.rope, self.lambda_a, self.scale_a
        )
    }

    fn apply(&self, cfg: &ExperimentConfig) -> Result<ExperimentConfig> {
        let mut c = cfg.clone();
        c.arch.attention = crate::model::AttentionVariant::parse(&self.attention)?;
        c.arch.rope_variant = RopeVariant::parse(&self.rope)?;
        c.train.lambda_a = self.lambda_a;
        c.infer.scale_a = self.scale_a;
        c.validate()?;
        Ok(c)
    }
}

/// Run the ablation grid from the config: every cell trains on the same
/// dataset and seeds, then samples and scores. Infeasible cells are listed
/// with their rejection reason instead of running.
pub fn cmd_ablate(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    ensure_dir(out)?;
    write_file(&out.join("config.txt"), &cfg.emit())?;
    write_file(&out.join("deviations.txt"), DEVIATIONS)?;

    let mut cells = Vec::new();
    for att in &cfg.ablate.attention {
        for rope in &cfg.ablate.rope {
            for &la in &cfg.ablate.lambda_a {
                for &sa in &cfg.ablate.scale_a {
                    cells.push(AblateCell {
                        attention: att.clone(),
                        rope: rope.clone(),
                        lambda_a: la,
                        scale_a: sa,
                    });
                }
            }
        }
    }

    let mut r = String::new();
    r.push_str("schema = avfd.ablate.v1\n");
    r.push_str(&format!("config_digest = {:016x}\n", cfg.digest()));
    r.push_str(&format!("cells = {}\n", cells.len()));
    for (ix, cell) in cells.iter().enumerate() {
        r.push_str(&format!("\n[cell {ix}]\n"));
        r.push_str(&format!("axes = {}\n", cell.label()));
        let cell_cfg = match cell.apply(cfg) {
            Ok(c) => c,
            Err(e) => {
                r.push_str(&format!("status = infeasible\nreason = {e}\n"));
                continue;
            }
        };
        let art = cmd_train(&cell_cfg, &out.join(format!("cell{ix}")))?;
        let scores = evaluate_samples(&art.model, &art.dataset, &cell_cfg, false)?;
        r.push_str("status = ran\n");
        r.push_str(&format!("data_digest = {:016x}\n", art.data_digest));
        r.push_str(&format!("final_train_loss = {:?}\n", art.final_loss));
        if let Some(vp) = art.val_curve.last() {
            r.push_str(&format!("final_val = {:?}\n", vp.total));
        }
        r.push_str("subset|metric|n|mean|std\n");
        let items: Vec<(String, ClipScores)> =
            scores.iter().map(|s| (s.subset.clone(), s.gt.clone())).collect();
        for line in score_set(&items) {
            r.push_str(&line.emit());
            r.push('\n');
        }
        let sync_abs: Vec<f64> = per_seed_means(&scores, cell_cfg.infer.sample_seeds, BOUNCE, |s| {
            s.gt.sync.map(f64::abs)
        })
        .into_iter()
        .flatten()
        .collect();
        let (mean, lo, hi) = ci(&sync_abs);
        r.push_str(&format!(
            "sync_offset_abs_ci = {}|{mean:?}|{lo:?}|{hi:?}\n",
            sync_abs.len()
        ));
    }
    let path = out.join("ablate_report.txt");
    write_file(&path, &r)?;
    Ok(path)
}

/// Parse one `key = value` line back out of a report or log.
pub fn report_value<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines().find_map(|l| {
        let (k, v) = l.split_once(" = ")?;
        (k == key).then_some(v)
    })
}
