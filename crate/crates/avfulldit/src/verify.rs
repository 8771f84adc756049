//! Executable invariant suite: every exact contract in the crate as a named
//! pass/fail check, plus seeded fault injection (`Mutation`) that plants one
//! defect so a check can demonstrate it has teeth.
//!
//! Output is deterministic — no timings, no paths — so two runs of the same
//! build print identical text.

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::{score_set, ClipScores};
use crate::flow::{euler_sample, guided_velocity, sample_video};
use crate::gradcheck::finite_difference_check;
use crate::model::{ArchitectureConfig, AttentionVariant, Binding, Model, ModelKind};
use crate::rope::{audio_positions, video_positions, RopeVariant, SyncSpec};
use crate::tensor::Tensor;
use crate::world::{
    contact_times, filter_decisions, DropReason, Encoders, ManifestEntry, WorldConfig, AMP_FLOOR,
    AUDIO_FEATURES,
};

/// One seeded defect to plant before running the checks. Each kind makes
/// exactly one named check fail; `None` is the clean run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    None,
    Grad,
    Rope,
    Mask,
    Count,
    Sampler,
    Encoder,
    Filter,
    Checkpoint,
    Kinematics,
}

impl Mutation {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "grad" => Ok(Mutation::Grad),
            "rope" => Ok(Mutation::Rope),
            "mask" => Ok(Mutation::Mask),
            "count" => Ok(Mutation::Count),
            "sampler" => Ok(Mutation::Sampler),
            "encoder" => Ok(Mutation::Encoder),
            "filter" => Ok(Mutation::Filter),
            "checkpoint" => Ok(Mutation::Checkpoint),
            "kinematics" => Ok(Mutation::Kinematics),
            other => Err(Error::Config(format!(
                "unknown mutation {other:?} (expected one of: {})",
                Mutation::all()
                    .iter()
                    .map(|m| m.name())
                    .collect::<Vec<_>>()
                    .join(", ")
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mutation::None => "none",
            Mutation::Grad => "grad",
            Mutation::Rope => "rope",
            Mutation::Mask => "mask",
            Mutation::Count => "count",
            Mutation::Sampler => "sampler",
            Mutation::Encoder => "encoder",
            Mutation::Filter => "filter",
            Mutation::Checkpoint => "checkpoint",
            Mutation::Kinematics => "kinematics",
        }
    }

    /// Every plantable defect, in check order.
    pub fn all() -> [Mutation; 9] {
        [
            Mutation::Grad,
            Mutation::Rope,
            Mutation::Mask,
            Mutation::Count,
            Mutation::Sampler,
            Mutation::Encoder,
            Mutation::Filter,
            Mutation::Checkpoint,
            Mutation::Kinematics,
        ]
    }

    /// The check this mutation is aimed at.
    pub fn target(self) -> &'static str {
        match self {
            Mutation::None => "",
            Mutation::Grad => "gradients",
            Mutation::Rope => "rope_alignment",
            Mutation::Mask => "masked_equivalence",
            Mutation::Count => "parameter_count",
            Mutation::Sampler => "sampler_exactness",
            Mutation::Encoder => "encoder_roundtrip",
            Mutation::Filter => "filter_rules",
            Mutation::Checkpoint => "checkpoint_roundtrip",
            Mutation::Kinematics => "kinematics",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = std::result::Result<String, String>;

fn tiny_arch() -> ArchitectureConfig {
    ArchitectureConfig {
        c_v: 12,
        c_a: 8,
        n_v: 1,
        n_a: 1,
        n_av: 1,
        heads_v: 2,
        heads_a: 2,
        c_text_v: 6,
        c_text_a: 6,
        c_lat_v: 5,
        c_lat_a: 3,
        f_v: 2,
        f_a: 8,
        vocab: 16,
        t_feat: 6,
        rope_base: crate::rope::DEFAULT_ROPE_BASE,
        rope_variant: RopeVariant::ShrinkAudio,
        attention: AttentionVariant::AvFull,
        sync: SyncSpec { delta_t_video: 0.25, delta_t_audio: 0.0625 },
    }
}

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .expect("shape/data agree")
}

// ── individual checks ──────────────────────────────────────────────────

fn check_gradients(m: Mutation) -> Check {
    let cfg = tiny_arch();
    let mut model =
        Model::build(&cfg, ModelKind::Joint, 11).map_err(|e| e.to_string())?;
    // non-zero modulation/output/adapter weights so gradients reach everything
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for (name, t) in model.params.iter_mut() {
        if name.contains(".mod.") || name.contains("unembed") || name.contains("adapter") {
            for v in t.data_mut() {
                *v = rng.gen_range(-0.05..0.05);
            }
        }
    }
    let x_v = rand_tensor(&[cfg.f_v, cfg.c_lat_v], 13);
    let x_a = rand_tensor(&[cfg.f_a, cfg.c_lat_a], 14);
    let tgt_v = rand_tensor(&[cfg.f_v, cfg.c_lat_v], 15);
    let tgt_a = rand_tensor(&[cfg.f_a, cfg.c_lat_a], 16);
    let picked = [
        "video.block0.sa.wq",
        "audio.block0.sa.wv",
        "joint.block0.adapter.wk_an",
        "video.block1.ffn.w1",
        "audio.block0.mod.w",
        "video.embed.w",
        "audio.unembed.w",
    ];
    for name in picked {
        if !model.params.contains_key(name) {
            return Err(format!("gradient check lost parameter {name:?}"));
        }
    }
    let params: Vec<Tensor> = picked.iter().map(|n| model.params[*n].clone()).collect();
    let worst = finite_difference_check(
        |g, vars| {
            if m == Mutation::Grad {
                // planted defect: silu's backward rule is corrupted, so the
                // analytic pass disagrees with the forward evaluations
                g.debug_corrupt_silu_backward(true);
            }
            let mut binding_vars = IndexMap::new();
            for (name, t) in &model.params {
                if let Some(pos) = picked.iter().position(|p| p == name) {
                    binding_vars.insert(name.clone(), vars[pos]);
                } else {
                    binding_vars.insert(name.clone(), g.leaf(t, false));
                }
            }
            let b = Binding::from_vars(binding_vars);
            let (v_v, v_a) =
                model.forward_joint_vars(g, &b, &x_v, &x_a, &[1, 5, 8], &[10, 13], 0.4, false)?;
            let tv = g.constant(&tgt_v);
            let ta = g.constant(&tgt_a);
            let l_v = g.mse(v_v, tv)?;
            let l_a = g.mse(v_a, ta)?;
            g.add(l_v, l_a)
        },
        &params,
        1e-4,
        96,
        53,
    )
    .map_err(|e| e.to_string())?;
    if worst < 1e-4 {
        Ok(format!("worst rel err {worst:.1e} over 96 sampled coordinates"))
    } else {
        Err(format!("finite differences disagree: worst rel err {worst:.1e} >= 1e-4"))
    }
}

fn check_rope_alignment(m: Mutation) -> Check {
    let sync = SyncSpec::new(0.25, 0.0625).map_err(|e| e.to_string())?;
    let tau = sync.tau();
    if tau != 4.0 {
        return Err(format!("expected tau 4, got {tau}"));
    }
    // planted defect: the aligned variant is silently wired to vanilla
    let variant = if m == Mutation::Rope { RopeVariant::Vanilla } else { RopeVariant::ShrinkAudio };
    let vp = video_positions(8, &sync, variant);
    let ap = audio_positions(32, &sync, variant);
    for k in 0..8 {
        if ap[4 * k] != vp[k] {
            return Err(format!(
                "audio frame {} sits at position {} but video frame {k} at {}",
                4 * k,
                ap[4 * k],
                vp[k]
            ));
        }
    }
    // expand_video aligns the same instants on the audio index scale
    let vp_exp = video_positions(8, &sync, RopeVariant::ExpandVideo);
    let ap_int = audio_positions(32, &sync, RopeVariant::Vanilla);
    for k in 0..8 {
        if vp_exp[k] != ap_int[4 * k] {
            return Err(format!("expand_video misaligns at video frame {k}"));
        }
    }
    // vanilla must NOT align, otherwise the variants are indistinguishable
    let ap_van = audio_positions(32, &sync, RopeVariant::Vanilla);
    let vp_van = video_positions(8, &sync, RopeVariant::Vanilla);
    if (1..8).all(|k| ap_van[4 * k] == vp_van[k]) {
        return Err("vanilla indices align; rescaling would be vacuous".into());
    }
    Ok("synchronous frames share positions exactly (tau 4, both rescaled variants)".into())
}

fn check_masked_equivalence(m: Mutation) -> Check {
    let cfg = tiny_arch();
    let mut video = Model::build(&cfg, ModelKind::VideoOnly, 31).map_err(|e| e.to_string())?;
    let mut audio = Model::build(&cfg, ModelKind::AudioOnly, 32).map_err(|e| e.to_string())?;
    // fresh towers leave modulation and unembed at zero, which would make
    // every forward output zero and the comparison vacuous — randomize them
    // on the donors so the graft inherits non-trivial weights
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for donor in [&mut video, &mut audio] {
        for (name, t) in donor.params.iter_mut() {
            if name.contains(".mod.") || name.contains("unembed") {
                for v in t.data_mut() {
                    *v = rng.gen_range(-0.05..0.05);
                }
            }
        }
    }
    let mut joint = Model::graft(&video, &audio, &cfg).map_err(|e| e.to_string())?;
    // planted defect: the mask flag is silently dropped
    let mask = m != Mutation::Mask;
    // the guarantee is video-side only: grafted audio rides in expanded
    // heads whose partition and scale differ from the solo audio tower by
    // construction, so only the video output can match its donor.
    // phase 1: adapters as grafted (zero)
    let mut worst = 0.0f64;
    for trial in 0..6 {
        let x_v = rand_tensor(&[cfg.f_v, cfg.c_lat_v], 340 + trial);
        let x_a = rand_tensor(&[cfg.f_a, cfg.c_lat_a], 350 + trial);
        let t = trial as f64 / 6.0;
        let (jv, _) = joint
            .forward_joint(&x_v, &x_a, &[1, 5, 8], &[10, 13], t, mask)
            .map_err(|e| e.to_string())?;
        let dv = video
            .forward_video_only(&x_v, &[1, 5, 8], t)
            .map_err(|e| e.to_string())?;
        worst = worst.max(jv.max_abs_diff(&dv).map_err(|e| e.to_string())?);
        if trial == 0 {
            // anti-vacuity: with the mask open the modalities must actually
            // mix, otherwise the flag under test is decorative
            let (open_v, _) = joint
                .forward_joint(&x_v, &x_a, &[1, 5, 8], &[10, 13], t, false)
                .map_err(|e| e.to_string())?;
            let mixed = open_v.max_abs_diff(&dv).map_err(|e| e.to_string())?;
            if mixed <= 1e-10 {
                return Err(format!(
                    "unmasked joint forward matches the solo tower ({mixed:.1e}); cross-modal path is inert"
                ));
            }
        }
    }
    if worst >= 1e-8 {
        return Err(format!(
            "masked video forward deviates from the donor tower by {worst:.1e} (>= 1e-8)"
        ));
    }
    // phase 2: the video path never touches the adapters, so masked video
    // equality must survive arbitrary adapter values
    for (name, t) in joint.params.iter_mut() {
        if name.contains(".adapter.") {
            for v in t.data_mut() {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
    }
    let mut worst_v = 0.0f64;
    for trial in 0..6 {
        let x_v = rand_tensor(&[cfg.f_v, cfg.c_lat_v], 360 + trial);
        let x_a = rand_tensor(&[cfg.f_a, cfg.c_lat_a], 370 + trial);
        let t = trial as f64 / 6.0;
        let (jv, _) = joint
            .forward_joint(&x_v, &x_a, &[1, 5, 8], &[10, 13], t, mask)
            .map_err(|e| e.to_string())?;
        let dv = video
            .forward_video_only(&x_v, &[1, 5, 8], t)
            .map_err(|e| e.to_string())?;
        worst_v = worst_v.max(jv.max_abs_diff(&dv).map_err(|e| e.to_string())?);
    }
    if worst_v < 1e-8 {
        Ok(format!(
            "masked equivalence: zero adapters worst |Δ| {worst:.1e}; video under random adapters {worst_v:.1e}"
        ))
    } else {
        Err(format!(
            "masked video forward deviates under random adapters by {worst_v:.1e} (>= 1e-8)"
        ))
    }
}

fn check_graft_preservation(_m: Mutation) -> Check {
    let cfg = tiny_arch();
    let video = Model::build(&cfg, ModelKind::VideoOnly, 41).map_err(|e| e.to_string())?;
    let audio = Model::build(&cfg, ModelKind::AudioOnly, 42).map_err(|e| e.to_string())?;
    let joint = Model::graft(&video, &audio, &cfg).map_err(|e| e.to_string())?;
    let bits_equal = |a: &Tensor, b: &Tensor| {
        a.shape() == b.shape()
            && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
    };
    // every donor tensor must land in the graft exactly once, bit for bit
    let mut used = vec![false; joint.params.len()];
    for (name, donor_t) in video.params.iter().chain(audio.params.iter()) {
        let mut found = 0usize;
        for (ji, (_, jt)) in joint.params.iter().enumerate() {
            if !used[ji] && bits_equal(donor_t, jt) {
                used[ji] = true;
                found = 1;
                break;
            }
        }
        if found == 0 {
            return Err(format!("donor parameter {name:?} not preserved in the graft"));
        }
    }
    // everything the graft adds beyond the donors must start at zero
    for (flag, (name, t)) in used.iter().zip(joint.params.iter()) {
        if !flag && t.data().iter().any(|&v| v != 0.0) {
            return Err(format!("grafted parameter {name:?} is new but not zero-initialized"));
        }
    }
    let adapters: usize = joint
        .params
        .iter()
        .filter(|(n, _)| n.contains(".adapter."))
        .map(|(_, t)| t.numel())
        .sum();
    let formula = crate::joint::new_parameter_count(cfg.c_v, cfg.c_a, cfg.n_av);
    if adapters != formula {
        return Err(format!("graft added {adapters} adapter weights, formula says {formula}"));
    }
    Ok(format!(
        "all {} donor tensors preserved bitwise; {} new weights all zero",
        video.params.len() + audio.params.len(),
        formula
    ))
}

fn check_parameter_count(m: Mutation) -> Check {
    let grid: [(usize, usize, usize, usize, usize); 5] = [
        // (c_v, c_a, n_av, heads_v, heads_a)
        (12, 8, 1, 2, 2),
        (8, 8, 1, 2, 2),
        (16, 8, 2, 2, 2),
        (12, 4, 3, 2, 2),
        (10, 6, 1, 1, 1),
    ];
    for (ix, (c_v, c_a, n_av, heads_v, heads_a)) in grid.into_iter().enumerate() {
        let mut cfg = tiny_arch();
        cfg.c_v = c_v;
        cfg.c_a = c_a;
        cfg.n_av = n_av;
        cfg.heads_v = heads_v;
        cfg.heads_a = heads_a;
        let mut model =
            Model::build(&cfg, ModelKind::Joint, 50 + ix as u64).map_err(|e| e.to_string())?;
        if ix == 0 && m == Mutation::Count {
            // planted defect: one adapter built with the wrong shape
            let gap = c_v - c_a;
            model
                .params
                .insert("joint.block0.adapter.wq_an".into(), Tensor::zeros(&[c_a, gap + 1]));
        }
        let enumerated: usize = model
            .params
            .iter()
            .filter(|(n, _)| n.contains(".adapter."))
            .map(|(_, t)| t.numel())
            .sum();
        let formula = crate::joint::new_parameter_count(c_v, c_a, n_av);
        if enumerated != formula {
            return Err(format!(
                "config {ix} (C_v={c_v}, C_a={c_a}, N_av={n_av}): enumerated {enumerated} adapter weights, formula says {formula}"
            ));
        }
        if c_v == c_a && enumerated != 0 {
            return Err("equal widths must have zero adapter weights".into());
        }
    }
    Ok("adapter enumeration matches 4·C_a·(C_v−C_a)·N_av on 5 configs (incl. C_v=C_a)".into())
}

fn check_sampler_exactness(m: Mutation) -> Check {
    // along the straight interpolation path the target velocity is the
    // constant ε − x0, so Euler recovers x0 exactly at any step count
    let x0 = rand_tensor(&[3, 4], 61);
    let eps = rand_tensor(&[3, 4], 62);
    let v = Tensor::new(
        vec![3, 4],
        eps.data().iter().zip(x0.data()).map(|(e, x)| e - x).collect(),
    )
    .map_err(|e| e.to_string())?;
    // planted defect: the velocity the integrator sees is scaled, as a
    // miswired guidance combination would
    let v_used = if m == Mutation::Sampler {
        Tensor::new(vec![3, 4], v.data().iter().map(|x| x * (1.0 + 1e-3)).collect())
            .map_err(|e| e.to_string())?
    } else {
        v.clone()
    };
    let mut worst = 0.0f64;
    for n in [1usize, 10, 50] {
        let got = euler_sample(eps.clone(), n, |_, _| Ok(v_used.clone()))
            .map_err(|e| e.to_string())?;
        worst = worst.max(got.max_abs_diff(&x0).map_err(|e| e.to_string())?);
    }
    if worst > 1e-12 {
        return Err(format!(
            "constant-velocity integration misses x0 by {worst:.1e} (> 1e-12)"
        ));
    }
    // guidance degeneracies are exact short-circuits, not approximations
    let p = rand_tensor(&[2, 3], 63);
    let ng = rand_tensor(&[2, 3], 64);
    let at1 = guided_velocity(&p, &ng, 1.0).map_err(|e| e.to_string())?;
    let at0 = guided_velocity(&p, &ng, 0.0).map_err(|e| e.to_string())?;
    if at1.max_abs_diff(&p).map_err(|e| e.to_string())? != 0.0 {
        return Err("scale 1 must return the conditioned branch bitwise".into());
    }
    if at0.max_abs_diff(&ng).map_err(|e| e.to_string())? != 0.0 {
        return Err("scale 0 must return the null branch bitwise".into());
    }
    // end to end: at scale 1 the null descriptor must be unreachable, at
    // scale 0 the conditioning must be
    let cfg = tiny_arch();
    let model = Model::build(&cfg, ModelKind::VideoOnly, 65).map_err(|e| e.to_string())?;
    let a = sample_video(&model, &[1, 5, 8], 1.0, &[0, 0, 0], 3, 66).map_err(|e| e.to_string())?;
    let b = sample_video(&model, &[1, 5, 8], 1.0, &[2, 4, 7], 3, 66).map_err(|e| e.to_string())?;
    if a.max_abs_diff(&b).map_err(|e| e.to_string())? != 0.0 {
        return Err("scale 1 sample depends on the null descriptor".into());
    }
    let c = sample_video(&model, &[1, 5, 8], 0.0, &[0, 0, 0], 3, 66).map_err(|e| e.to_string())?;
    let d = sample_video(&model, &[2, 4, 7], 0.0, &[0, 0, 0], 3, 66).map_err(|e| e.to_string())?;
    if c.max_abs_diff(&d).map_err(|e| e.to_string())? != 0.0 {
        return Err("scale 0 sample depends on the conditioning".into());
    }
    Ok(format!(
        "Euler exact on constant fields (worst |Δ| {worst:.1e} over 1/10/50 steps); CFG degeneracies bitwise"
    ))
}

fn check_encoder_roundtrip(m: Mutation) -> Check {
    let world = WorldConfig::default();
    let mut enc = Encoders::build(&world).map_err(|e| e.to_string())?;
    if m == Mutation::Encoder {
        // planted defect: one decoder coefficient drifts, as a stale
        // cached inverse would
        enc.video_inv.data_mut()[0] += 1e-6;
    }
    let occ = rand_tensor(&[world.f_v(), world.cells], 71);
    let audio = rand_tensor(&[world.f_a, AUDIO_FEATURES], 72);
    let occ2 = crate::world::decode_video(
        &crate::world::encode_video(&occ, &enc).map_err(|e| e.to_string())?,
        &enc,
    )
    .map_err(|e| e.to_string())?;
    let audio2 = crate::world::decode_audio(
        &crate::world::encode_audio(&audio, &enc).map_err(|e| e.to_string())?,
        &enc,
    )
    .map_err(|e| e.to_string())?;
    let worst = occ2
        .max_abs_diff(&occ)
        .map_err(|e| e.to_string())?
        .max(audio2.max_abs_diff(&audio).map_err(|e| e.to_string())?);
    if worst < 1e-9 {
        Ok(format!("decode∘encode identity holds, worst |Δ| {worst:.1e}"))
    } else {
        Err(format!("decode∘encode drifts by {worst:.1e} (>= 1e-9)"))
    }
}

/// The constructed curation manifest: 10 records, of which 2 are duplicate
/// ids, 1 is silent, and 1 is portrait-shaped. Exactly 6 survive.
pub fn demo_manifest() -> Vec<ManifestEntry> {
    let row = |id: &str, volume: f64, width: u32, height: u32| ManifestEntry {
        id: id.into(),
        group: "demo".into(),
        volume,
        width,
        height,
        category: "bouncing_ball".into(),
    };
    vec![
        row("clip-a", 0.90, 16, 9),
        row("clip-b", 0.40, 16, 9),
        row("clip-a", 0.90, 16, 9),  // duplicate of clip-a
        row("clip-c", 0.001, 16, 9), // silent: below 1% of reference
        row("clip-d", 0.70, 9, 16),  // portrait
        row("clip-e", 0.55, 16, 9),
        row("clip-b", 0.40, 16, 9), // duplicate of clip-b
        row("clip-f", 0.25, 16, 9),
        row("clip-g", 0.60, 4, 3),
        row("clip-h", 0.15, 16, 9),
    ]
}

fn check_filter_rules(m: Mutation) -> Check {
    let entries = demo_manifest();
    // planted defect: the loudness reference is misread 100× too loud
    let reference = if m == Mutation::Filter { 100.0 } else { 1.0 };
    let decisions = filter_decisions(&entries, reference);
    let expected: [Option<DropReason>; 10] = [
        None,
        None,
        Some(DropReason::Duplicate),
        Some(DropReason::Silent),
        Some(DropReason::Portrait),
        None,
        Some(DropReason::Duplicate),
        None,
        None,
        None,
    ];
    for (i, ((entry, got), want)) in decisions.iter().zip(expected.iter()).enumerate() {
        if got != want {
            let show = |r: &Option<DropReason>| match r {
                None => "keep".to_string(),
                Some(d) => format!("drop ({})", d.name()),
            };
            return Err(format!(
                "record {i} ({}): expected {}, got {}",
                entry.id,
                show(want),
                show(got)
            ));
        }
    }
    let kept = decisions.iter().filter(|(_, r)| r.is_none()).count();
    if kept != 6 {
        return Err(format!("expected 6 kept records, got {kept}"));
    }
    Ok("10-record manifest: 2 duplicates, 1 silent, 1 portrait dropped; 6 kept".into())
}

fn check_checkpoint_roundtrip(m: Mutation) -> Check {
    let scratch = std::env::temp_dir().join(format!("avfd_verify_{}", std::process::id()));
    std::fs::create_dir_all(&scratch).map_err(|e| format!("scratch dir: {e}"))?;
    let result = checkpoint_roundtrip_inner(m, &scratch);
    let _ = std::fs::remove_dir_all(&scratch);
    result
}

fn checkpoint_roundtrip_inner(m: Mutation, scratch: &std::path::Path) -> Check {
    let cfg = tiny_arch();
    let model = Model::build(&cfg, ModelKind::Joint, 81).map_err(|e| e.to_string())?;
    let path = scratch.join("model.avfd");
    model.save(&path).map_err(|e| e.to_string())?;
    if m == Mutation::Checkpoint {
        // planted defect: one byte of the file flips at rest
        let mut bytes = std::fs::read(&path).map_err(|e| format!("reread: {e}"))?;
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        std::fs::write(&path, &bytes).map_err(|e| format!("rewrite: {e}"))?;
    }
    let loaded = match Model::load(&path) {
        Ok(l) => l,
        Err(e) => return Err(format!("reload failed: {e}")),
    };
    if loaded.config != model.config || loaded.kind != model.kind {
        return Err("reloaded header differs".into());
    }
    for ((an, at), (bn, bt)) in model.params.iter().zip(loaded.params.iter()) {
        if an != bn {
            return Err(format!("parameter order changed: {an:?} vs {bn:?}"));
        }
        if at.shape() != bt.shape()
            || at.data().iter().zip(bt.data()).any(|(x, y)| x.to_bits() != y.to_bits())
        {
            return Err(format!("parameter {an:?} not bit-identical after reload"));
        }
    }
    // a second save must reproduce the file byte for byte
    let path2 = scratch.join("model2.avfd");
    loaded.save(&path2).map_err(|e| e.to_string())?;
    let b1 = std::fs::read(&path).map_err(|e| e.to_string())?;
    let b2 = std::fs::read(&path2).map_err(|e| e.to_string())?;
    if b1 != b2 {
        return Err("re-saved checkpoint differs from the original bytes".into());
    }
    // and corruption must be rejected, not silently accepted
    let mut corrupted = b1.clone();
    let mid = corrupted.len() / 2;
    corrupted[mid] ^= 0x01;
    let path3 = scratch.join("model3.avfd");
    std::fs::write(&path3, &corrupted).map_err(|e| e.to_string())?;
    if Model::load(&path3).is_ok() {
        return Err("corrupted checkpoint loaded without complaint".into());
    }
    Ok("save/load bit-exact; re-save byte-identical; corruption rejected".into())
}

/// Numerically simulate the drop-and-bounce trajectory: RK4 between floor
/// crossings (exact for ballistic arcs), quadratic solve at each crossing.
/// Shares no code with the closed-form series.
fn simulate_bounces(
    h0: f64,
    t0: f64,
    e: f64,
    gravity: f64,
    h_max: f64,
    until: f64,
) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut t = t0;
    let mut y = h0;
    let mut v = 0.0f64;
    let dt = 1e-4;
    while t < until && out.len() < 64 {
        // one RK4 step of (y' = v, v' = -g)
        let k1y = v;
        let k2y = v - gravity * dt / 2.0;
        let k3y = k2y;
        let k4y = v - gravity * dt;
        let y_next = y + dt / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
        let v_next = v - gravity * dt;
        if y_next <= 0.0 && v_next < 0.0 {
            // crossing inside this step: y + v·τ − g·τ²/2 = 0
            let tau = (v + (v * v + 2.0 * gravity * y).sqrt()) / gravity;
            let impact_speed = (v - gravity * tau).abs();
            let amp = impact_speed / (2.0 * gravity * h_max).sqrt();
            t += tau;
            if t >= until {
                break;
            }
            if amp < AMP_FLOOR {
                break;
            }
            out.push((t, amp));
            y = 0.0;
            v = e * impact_speed;
        } else {
            y = y_next;
            v = v_next;
            t += dt;
        }
    }
    out
}

fn check_kinematics(m: Mutation) -> Check {
    let world = WorldConfig::default();
    // planted defect: the closed form computed under the wrong gravity
    let closed_gravity = if m == Mutation::Kinematics { world.gravity + 0.1 } else { world.gravity };
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    let mut worst = 0.0f64;
    let mut total = 0usize;
    for _ in 0..5 {
        let h0 = world.h_max * rng.gen_range(0.2..0.95);
        let t0 = rng.gen_range(0.0..0.3);
        let e = rng.gen_range(world.restitution.0..world.restitution.1);
        let closed =
            contact_times(h0, t0, e, closed_gravity, world.h_max, world.clip_seconds);
        let numeric = simulate_bounces(h0, t0, e, world.gravity, world.h_max, world.clip_seconds);
        if closed.len() != numeric.len() {
            return Err(format!(
                "h0={h0:.3} e={e:.3}: closed form predicts {} contacts, simulation {}",
                closed.len(),
                numeric.len()
            ));
        }
        for ((tc, ac), (tn, an)) in closed.iter().zip(numeric.iter()) {
            worst = worst.max((tc - tn).abs()).max((ac - an).abs());
        }
        total += closed.len();
    }
    if worst < 1e-9 {
        Ok(format!(
            "closed-form contact times/amplitudes match an RK4 simulation on {total} contacts, worst |Δ| {worst:.1e}"
        ))
    } else {
        Err(format!("closed form deviates from simulation by {worst:.1e} (>= 1e-9)"))
    }
}

fn check_report_recombination(_m: Mutation) -> Check {
    // pooled "all" rows must recombine exactly from per-subset sums
    let mut rng = ChaCha8Rng::seed_from_u64(95);
    let subsets = ["alpha", "beta", "gamma"];
    let mut items = Vec::new();
    for (si, name) in subsets.iter().enumerate() {
        for _ in 0..(3 + si * 2) {
            items.push((
                name.to_string(),
                ClipScores {
                    motion: Some(rng.gen_range(0.0..1.0)),
                    contact: Some(rng.gen_range(0.0..1.0)),
                    sync: Some(rng.gen_range(-0.5..0.5)),
                },
            ));
        }
    }
    let lines = score_set(&items);
    for metric in crate::eval::METRIC_NAMES {
        let all = lines
            .iter()
            .find(|l| l.subset == "all" && l.metric == metric)
            .ok_or_else(|| format!("missing all row for {metric}"))?;
        let parts: Vec<_> = lines
            .iter()
            .filter(|l| l.subset != "all" && l.metric == metric)
            .collect();
        let n: usize = parts.iter().map(|l| l.n).sum();
        if n != all.n {
            return Err(format!("{metric}: subset counts sum to {n}, all row says {}", all.n));
        }
        let weighted: f64 =
            parts.iter().map(|l| l.n as f64 * l.mean).sum::<f64>() / n as f64;
        if (weighted - all.mean).abs() > 1e-12 {
            return Err(format!(
                "{metric}: weighted subset means give {weighted}, all row says {}",
                all.mean
            ));
        }
    }
    Ok("pooled rows equal weighted recombination of subset rows (|Δ| ≤ 1e-12)".into())
}

// ── suite driver ───────────────────────────────────────────────────────

/// Run every check with `mutation` planted ([`Mutation::None`] for a clean
/// run). Order is fixed; output text is deterministic.
pub fn run_all(mutation: Mutation) -> Vec<CheckResult> {
    let checks: [(&'static str, fn(Mutation) -> Check); 11] = [
        ("gradients", check_gradients),
        ("rope_alignment", check_rope_alignment),
        ("masked_equivalence", check_masked_equivalence),
        ("graft_preservation", check_graft_preservation),
        ("parameter_count", check_parameter_count),
        ("sampler_exactness", check_sampler_exactness),
        ("encoder_roundtrip", check_encoder_roundtrip),
        ("filter_rules", check_filter_rules),
        ("checkpoint_roundtrip", check_checkpoint_roundtrip),
        ("kinematics", check_kinematics),
        ("report_recombination", check_report_recombination),
    ];
    checks
        .into_iter()
        .map(|(name, f)| match f(mutation) {
            Ok(detail) => CheckResult { name, passed: true, detail },
            Err(detail) => CheckResult { name, passed: false, detail },
        })
        .collect()
}

/// Render results as the printable listing; second value is overall pass.
pub fn render(results: &[CheckResult], mutation: Mutation) -> (String, bool) {
    let mut out = String::new();
    if mutation != Mutation::None {
        out.push_str(&format!("mutation = {}\n", mutation.name()));
    }
    let mut all_pass = true;
    for r in results {
        if r.passed {
            out.push_str(&format!("{}: pass ({})\n", r.name, r.detail));
        } else {
            all_pass = false;
            out.push_str(&format!("{}: FAIL ({})\n", r.name, r.detail));
        }
    }
    out.push_str(if all_pass { "verdict: all checks passed\n" } else { "verdict: FAILURES\n" });
    (out, all_pass)
}
