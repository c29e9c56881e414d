//! Cross-assembly: persisting trained networks, rewiring their condition
//! modules onto the shared backbone for UV→UV inference, and the
//! application operations (partial-view batching, local editing, feature
//! interpolation).

use crate::color::transfer_stats;
use crate::diffusion::{
    ddim_sample, from_diffusion_domain, sampler::Denoiser, tensor_to_raster, CondModel,
    EncodedConds, NoiseSchedule,
};
use crate::error::{Error, Result};
use crate::img::Raster;
use crate::nn::{AttnKind, NetConfig, ParamSet};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{read_checkpoint, write_checkpoint, Checkpoint, Tensor};
use crate::train::fingerprint_prefix;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Manifest stored inside every network checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetManifest {
    pub kind: String,
    pub attention: AttnKind,
    pub use_landmarks: bool,
    pub direction: String,
    pub net: NetConfig,
    pub train_steps: usize,
    pub backbone_fingerprint: u64,
    pub modules: Vec<String>,
}

/// Write a trained network (backbone + psi + ctrl) as one archive.
pub fn save_network<T: Scalar>(
    path: &Path,
    params: &ParamSet<T>,
    manifest: &NetManifest,
) -> Result<()> {
    let ckpt = Checkpoint {
        manifest: serde_json::to_string(manifest).expect("manifest json"),
        entries: params.map().clone(),
    };
    write_checkpoint(path, &ckpt)
}

pub fn load_network<T: Scalar>(path: &Path) -> Result<(ParamSet<T>, NetManifest)> {
    let ckpt = read_checkpoint::<T>(path)?;
    let manifest: NetManifest = serde_json::from_str(&ckpt.manifest).map_err(|e| Error::Format {
        what: "checkpoint manifest",
        msg: e.to_string(),
    })?;
    Ok((ParamSet::from_map(ckpt.entries), manifest))
}

/// Which source provides each module of the inference model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssemblySpec {
    pub extractor_from: String,
    pub control_from: String,
    pub backbone_from: String,
}

impl AssemblySpec {
    /// The production wiring: appearance extractor + structure control.
    pub fn default_cross(appearance: &str, structure: &str) -> Self {
        AssemblySpec {
            extractor_from: appearance.to_string(),
            control_from: structure.to_string(),
            backbone_from: appearance.to_string(),
        }
    }
}

/// Wire an inference model from named sources. Backbones must agree across
/// sources (they all descend from one frozen warm-up); mismatched module
/// shapes are reported by tensor name.
pub fn assemble<T: Scalar>(
    spec: &AssemblySpec,
    sources: &[(&str, &ParamSet<T>, &NetManifest)],
) -> Result<CondModel<T>> {
    let find = |name: &str| -> Result<(&ParamSet<T>, &NetManifest)> {
        sources
            .iter()
            .find(|(n, _, _)| *n == name)
            .map(|(_, p, m)| (*p, *m))
            .ok_or_else(|| Error::invalid("assemble", format!("unknown source `{name}`")))
    };
    let (ext_params, ext_manifest) = find(&spec.extractor_from)?;
    let (ctrl_params, ctrl_manifest) = find(&spec.control_from)?;
    let (bb_params, bb_manifest) = find(&spec.backbone_from)?;

    let mut params = ParamSet::new();
    params.adopt_prefix(bb_params, "backbone.");
    params.adopt_prefix(ext_params, "psi.");
    params.adopt_prefix(ctrl_params, "ctrl.");

    let cfg = NetConfig {
        psi_attention: ext_manifest.attention,
        control_in: ctrl_manifest.net.control_in,
        ..bb_manifest.net
    };

    // backbone compatibility: all sources descend from the same warm-up
    for (name, p, m) in sources {
        let fp = fingerprint_prefix(p, "backbone.");
        if fp != bb_manifest.backbone_fingerprint && m.backbone_fingerprint != bb_manifest.backbone_fingerprint
        {
            return Err(Error::invalid(
                "assemble",
                format!("source `{name}` carries a different backbone (fingerprint {fp:#x})"),
            ));
        }
    }
    validate_assembly(&params, &cfg)?;
    Ok(CondModel { cfg, params })
}

/// Shape-check the assembled modules against the architecture; failures
/// list the offending tensors.
fn validate_assembly<T: Scalar>(params: &ParamSet<T>, cfg: &NetConfig) -> Result<()> {
    let [w0, w1, w2] = cfg.widths;
    let expects: Vec<(String, Vec<usize>)> = vec![
        ("backbone.stem.w".into(), vec![w0, cfg.in_channels, 3, 3]),
        ("ctrl.stem.w".into(), vec![w0, cfg.control_in, 3, 3]),
        ("ctrl.fuse0.w".into(), vec![w0, w0, 1, 1]),
        ("ctrl.fuse1.w".into(), vec![w1, w1, 1, 1]),
        ("ctrl.fuse2.w".into(), vec![w2, w2, 1, 1]),
        ("ctrl.fuse_mid.w".into(), vec![w2, w2, 1, 1]),
        ("psi.proj.w".into(), vec![
            cfg.token_dim,
            cfg.extractor_widths[1] * 2 + cfg.extractor_widths[2],
            1,
            1,
        ]),
        ("psi.attn32.wq".into(), vec![w1, cfg.attn_dim]),
        ("psi.attn16.wq".into(), vec![w2, cfg.attn_dim]),
        ("psi.pos".into(), vec![cfg.n_tokens(), cfg.token_dim]),
    ];
    let mut offending = Vec::new();
    for (name, want) in expects {
        match params.map().get(&name) {
            None => offending.push(format!("{name} (missing)")),
            Some(t) if t.shape() != want.as_slice() => offending.push(format!(
                "{name} (shape {:?}, expected {:?})",
                t.shape(),
                want
            )),
            _ => {}
        }
    }
    if offending.is_empty() {
        Ok(())
    } else {
        Err(Error::invalid(
            "assemble",
            format!("incompatible checkpoints: {}", offending.join(", ")),
        ))
    }
}

/// One UV→UV recovery request.
#[derive(Clone)]
pub struct RecoveryRequest<T> {
    /// Partial unwrapped textures with their masks (≥ 1).
    pub views: Vec<(Raster<T>, Raster<T>)>,
    /// Complete UV position map Υ_uv.
    pub position_map: Raster<T>,
    pub guidance: f64,
    pub steps: usize,
    pub seed: u64,
    pub color_adjust: bool,
    /// Reference image and mask for the Lab statistics (typically I_w, M_I).
    pub reference: Option<(Raster<T>, Raster<T>)>,
}

pub struct RecoveryInfo {
    pub clamped: usize,
    pub color_adjusted: bool,
    pub wall_seconds: f64,
}

struct ModelDenoiser<'a, T> {
    model: &'a CondModel<T>,
    conds: &'a EncodedConds<T>,
}

impl<T: Scalar> Denoiser<T> for ModelDenoiser<'_, T> {
    fn predict(&self, x_t: &Tensor<T>, t: usize, conditioned: bool) -> Result<Tensor<T>> {
        if conditioned {
            self.model.predict_noise(x_t, t, Some(self.conds))
        } else {
            self.model.predict_noise(x_t, t, None)
        }
    }
    fn has_conditions(&self) -> bool {
        true
    }
}

/// Encode a request's conditions: every partial view feeds the detail
/// extractor as one batch entry; the complete position map feeds the
/// control branch (padded with zero channels when the branch was trained
/// with extra inputs, e.g. landmarks that do not exist in UV space).
pub fn encode_request<T: Scalar>(
    model: &CondModel<T>,
    req: &RecoveryRequest<T>,
) -> Result<EncodedConds<T>> {
    if req.views.is_empty() {
        return Err(Error::invalid("recover_uv", "at least one partial view required"));
    }
    let views: Vec<Raster<T>> = req
        .views
        .iter()
        .map(|(tex, mask)| concat_ch(tex, mask))
        .collect();
    let control = adapt_control_channels(&req.position_map, model.cfg.control_in)?;
    model.encode_conditions(&views, Some(&control))
}

fn concat_ch<T: Scalar>(a: &Raster<T>, b: &Raster<T>) -> Raster<T> {
    let mut out = Raster::zeros(a.height(), a.width(), a.channels() + b.channels());
    for y in 0..a.height() {
        for x in 0..a.width() {
            for c in 0..a.channels() {
                out.set(y, x, c, a.get(y, x, c));
            }
            for c in 0..b.channels() {
                out.set(y, x, a.channels() + c, b.get(y, x, c));
            }
        }
    }
    out
}

fn adapt_control_channels<T: Scalar>(map: &Raster<T>, want: usize) -> Result<Raster<T>> {
    if map.channels() == want {
        return Ok(map.clone());
    }
    if map.channels() > want {
        return Err(Error::shape(
            "recover_uv",
            format!("control with <= {want} channels"),
            format!("{}", map.channels()),
        ));
    }
    let mut out = Raster::zeros(map.height(), map.width(), want);
    for y in 0..map.height() {
        for x in 0..map.width() {
            for c in 0..map.channels() {
                out.set(y, x, c, map.get(y, x, c));
            }
        }
    }
    Ok(out)
}

/// Full recovery: DDIM sampling conditioned on the request, masked to the
/// atlas validity region, optionally color-matched to the reference.
pub fn recover_uv<T: Scalar>(
    model: &CondModel<T>,
    req: &RecoveryRequest<T>,
) -> Result<(Raster<T>, RecoveryInfo)> {
    let conds = encode_request(model, req)?;
    recover_with_conditions(model, &conds, req)
}

/// Sampling + post-processing with externally supplied conditions (used by
/// feature interpolation, which blends token sequences).
pub fn recover_with_conditions<T: Scalar>(
    model: &CondModel<T>,
    conds: &EncodedConds<T>,
    req: &RecoveryRequest<T>,
) -> Result<(Raster<T>, RecoveryInfo)> {
    let t0 = std::time::Instant::now();
    let schedule = NoiseSchedule::<T>::linear(1000, 1e-4, 0.02)?;
    let size = model.cfg.image_size;
    let mut rng = Rng::new(req.seed);
    let init = Tensor::randn(&[1, model.cfg.in_channels, size, size], &mut rng);
    let den = ModelDenoiser { model, conds };
    let out = ddim_sample(&den, &schedule, req.steps, req.guidance, init)?;
    let mut tex = tensor_to_raster(&out.map(from_diffusion_domain))?;

    // complete over the atlas validity mask, zero elsewhere
    let validity = validity_from_position_map(&req.position_map);
    tex = tex.masked(&validity)?;

    let mut info = RecoveryInfo {
        clamped: 0,
        color_adjusted: false,
        wall_seconds: 0.0,
    };
    if req.color_adjust {
        let (reference, ref_mask) = req.reference.as_ref().ok_or_else(|| {
            Error::invalid("recover_uv", "color_adjust requires a reference image")
        })?;
        let (adjusted, report) = transfer_stats(&tex, &validity, reference, ref_mask)?;
        tex = adjusted.masked(&validity)?;
        info.clamped = report.clamped;
        info.color_adjusted = true;
    }
    info.wall_seconds = t0.elapsed().as_secs_f64();
    Ok((tex, info))
}

/// Valid atlas texels have a nonzero encoded position.
pub fn validity_from_position_map<T: Scalar>(map: &Raster<T>) -> Raster<T> {
    let mut v = Raster::zeros(map.height(), map.width(), 1);
    for y in 0..map.height() {
        for x in 0..map.width() {
            let any = (0..map.channels()).any(|c| map.get(y, x, c) != T::zero());
            if any {
                v.set(y, x, 0, T::one());
            }
        }
    }
    v
}

/// Spherical interpolation between two token sequences, row by row.
/// Endpoints are exact; (near-)parallel, antipodal or zero-norm rows fall
/// back to linear interpolation.
pub fn slerp_embeddings<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, tau: f64) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "slerp_embeddings",
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid("slerp_embeddings", format!("tau {tau} outside [0,1]")));
    }
    if tau == 0.0 {
        return Ok(a.clone());
    }
    if tau == 1.0 {
        return Ok(b.clone());
    }
    let d = *a.shape().last().unwrap();
    let rows = a.numel() / d;
    let mut out = vec![T::zero(); a.numel()];
    for r in 0..rows {
        let av = &a.data()[r * d..(r + 1) * d];
        let bv = &b.data()[r * d..(r + 1) * d];
        let na = av.iter().map(|v| v.to_f64_c().powi(2)).sum::<f64>().sqrt();
        let nb = bv.iter().map(|v| v.to_f64_c().powi(2)).sum::<f64>().sqrt();
        let dot: f64 = av
            .iter()
            .zip(bv)
            .map(|(x, y)| x.to_f64_c() * y.to_f64_c())
            .sum();
        let slot = &mut out[r * d..(r + 1) * d];
        if na < 1e-12 || nb < 1e-12 {
            lerp_into(av, bv, tau, slot);
            continue;
        }
        let cos = (dot / (na * nb)).clamp(-1.0, 1.0);
        let omega = cos.acos();
        if omega.sin().abs() < 1e-6 {
            // parallel or antipodal
            lerp_into(av, bv, tau, slot);
            continue;
        }
        let wa = ((1.0 - tau) * omega).sin() / omega.sin();
        let wb = (tau * omega).sin() / omega.sin();
        for ((o, &x), &y) in slot.iter_mut().zip(av).zip(bv) {
            *o = T::from_f64_c(wa * x.to_f64_c() + wb * y.to_f64_c());
        }
    }
    Tensor::new(a.shape().to_vec(), out)
}

fn lerp_into<T: Scalar>(a: &[T], b: &[T], tau: f64, out: &mut [T]) {
    let t = T::from_f64_c(tau);
    let one_t = T::from_f64_c(1.0 - tau);
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o = one_t * x + t * y;
    }
}

/// Layer partial textures over a base: later layers overwrite earlier ones
/// inside their masks; the combined mask is the union.
pub fn compose_edit<T: Scalar>(
    base: (&Raster<T>, &Raster<T>),
    layers: &[(Raster<T>, Raster<T>)],
) -> Result<(Raster<T>, Raster<T>)> {
    let (mut tex, mut mask) = (base.0.clone(), base.1.clone());
    let half = T::from_f64_c(0.5);
    for (ltex, lmask) in layers {
        if ltex.height() != tex.height()
            || ltex.width() != tex.width()
            || lmask.height() != tex.height()
        {
            return Err(Error::shape(
                "compose_edit",
                format!("{}x{}", tex.height(), tex.width()),
                format!("{}x{}", ltex.height(), ltex.width()),
            ));
        }
        for y in 0..tex.height() {
            for x in 0..tex.width() {
                if lmask.get(y, x, 0) > half {
                    for c in 0..tex.channels() {
                        tex.set(y, x, c, ltex.get(y, x, c));
                    }
                    mask.set(y, x, 0, T::one());
                }
            }
        }
    }
    Ok((tex, mask))
}
