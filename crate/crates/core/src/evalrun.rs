//! Recovery evaluation: render-and-compare against the original photo over
//! the combined skin mask, direct comparison against the held-out ground
//! truth UV texture, the mean-fill baseline, and the ablation matrix runner.

use crate::assembly::{recover_uv, validity_from_position_map, RecoveryRequest};
use crate::corpus::Corpus;
use crate::diffusion::CondModel;
use crate::error::{Error, Result};
use crate::geom::proxy::ProxyHead;
use crate::img::{io as imgio, Raster};
use crate::metrics::{masked_metrics, psnr_to_string, MaskedMetrics};
use crate::raster::{rasterize, render_texture};
use crate::scalar::Scalar;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    pub guidance: f64,
    pub steps: usize,
    pub seed: u64,
    pub color_adjust: bool,
    /// Cap on evaluated faces (take the first N of the eval split).
    pub max_faces: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            guidance: 1.4,
            steps: 30,
            seed: 1,
            color_adjust: true,
            max_faces: 50,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleEval {
    pub id: u64,
    /// Rendered recovery vs original photo over the skin mask.
    pub image: MaskedMetrics,
    /// Recovered texture vs ground-truth UV over the atlas validity mask.
    pub gt_uv: MaskedMetrics,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub arm: String,
    pub config: EvalConfig,
    pub samples: Vec<SampleEval>,
    pub mean_image_rmse: f64,
    pub mean_image_psnr: f64,
    pub mean_image_ssim: f64,
    pub mean_gt_rmse: f64,
    pub failures: usize,
    pub total_wall_seconds: f64,
}

impl MetricsReport {
    fn from_samples(arm: &str, config: &EvalConfig, samples: Vec<SampleEval>, failures: usize) -> Self {
        let n = samples.len().max(1) as f64;
        let finite_psnr: Vec<f64> = samples
            .iter()
            .map(|s| s.image.psnr)
            .filter(|p| p.is_finite())
            .collect();
        MetricsReport {
            arm: arm.to_string(),
            config: config.clone(),
            mean_image_rmse: samples.iter().map(|s| s.image.rmse).sum::<f64>() / n,
            mean_image_psnr: finite_psnr.iter().sum::<f64>() / finite_psnr.len().max(1) as f64,
            mean_image_ssim: samples.iter().map(|s| s.image.ssim).sum::<f64>() / n,
            mean_gt_rmse: samples.iter().map(|s| s.gt_uv.rmse).sum::<f64>() / n,
            total_wall_seconds: samples.iter().map(|s| s.wall_seconds).sum(),
            samples,
            failures,
        }
    }

    /// CSV rows (one per sample) plus a JSON summary string.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "id,image_rmse,image_psnr,image_ssim,gt_uv_rmse,gt_uv_psnr,gt_uv_ssim,wall_seconds\n",
        );
        for s in &self.samples {
            out.push_str(&format!(
                "{},{:.6},{},{:.6},{:.6},{},{:.6},{:.3}\n",
                s.id,
                s.image.rmse,
                psnr_to_string(s.image.psnr),
                s.image.ssim,
                s.gt_uv.rmse,
                psnr_to_string(s.gt_uv.psnr),
                s.gt_uv.ssim,
                s.wall_seconds,
            ));
        }
        out
    }
}

/// Build the standard recovery request for one eval record.
pub fn request_for_sample<T: Scalar>(
    corpus: &Corpus,
    idx: usize,
    cfg: &EvalConfig,
) -> Result<RecoveryRequest<T>> {
    let s = corpus.load_training::<T>(idx)?;
    Ok(RecoveryRequest {
        views: vec![(s.t_w.clone(), s.m_t.clone())],
        position_map: s.y_uv.clone(),
        guidance: cfg.guidance,
        steps: cfg.steps,
        seed: cfg.seed ^ corpus.records[idx].id,
        color_adjust: cfg.color_adjust,
        reference: Some((s.i_w.clone(), s.m_i.clone())),
    })
}

/// Evaluate one recovered texture against photo and ground truth.
pub fn evaluate_recovery<T: Scalar>(
    corpus: &Corpus,
    idx: usize,
    recovered: &Raster<T>,
) -> Result<(MaskedMetrics, MaskedMetrics)> {
    let rec = &corpus.records[idx];
    let s = corpus.load_training::<T>(idx)?;
    let gt = corpus.load_gt_uv::<T>(idx)?;
    // render through the true scene and compare to the photo over M_I
    let head = ProxyHead::<T>::new();
    let mesh = head.build_mesh(&rec.params_true);
    let frag = rasterize(&mesh, &rec.scene_true, corpus.header.config.image_size);
    let rendered = render_texture(&frag, recovered, [1.0, 1.0, 1.0]);
    // the photo (I over M_I) is exactly I_w
    let image_metrics = masked_metrics(&rendered.masked(&s.m_i)?, &s.i_w, &s.m_i)?;
    let validity = validity_from_position_map(&s.y_uv);
    let gt_metrics = masked_metrics(recovered, &gt.masked(&validity)?, &validity)?;
    Ok((image_metrics, gt_metrics))
}

/// Mean-fill baseline: keep the unwrapped texels, write the masked mean
/// color into every missing texel of the validity region.
pub fn mean_fill_baseline<T: Scalar>(
    t_w: &Raster<T>,
    m_t: &Raster<T>,
    validity: &Raster<T>,
) -> Result<Raster<T>> {
    let means = t_w
        .masked_channel_means(m_t)
        .ok_or_else(|| Error::invalid("mean_fill", "empty unwrap mask"))?;
    let mut out = t_w.clone();
    let half = T::from_f64_c(0.5);
    for y in 0..out.height() {
        for x in 0..out.width() {
            if validity.get(y, x, 0) > half && m_t.get(y, x, 0) <= half {
                for c in 0..out.channels() {
                    out.set(y, x, c, T::from_f64_c(means[c]));
                }
            }
        }
    }
    Ok(out)
}

/// Run recovery over the eval split and aggregate; failures are logged,
/// excluded and counted.
pub fn eval_recovery<T: Scalar>(
    corpus: &Corpus,
    model: &CondModel<T>,
    cfg: &EvalConfig,
    arm_name: &str,
) -> Result<MetricsReport> {
    let eval_idx: Vec<usize> = corpus
        .split_indices("eval")
        .into_iter()
        .take(cfg.max_faces)
        .collect();
    if eval_idx.is_empty() {
        return Err(Error::invalid("eval_recovery", "empty eval split"));
    }
    let results: Vec<Result<SampleEval>> = eval_idx
        .par_iter()
        .map(|&idx| {
            let t0 = std::time::Instant::now();
            let req = request_for_sample::<T>(corpus, idx, cfg)?;
            let (recovered, _info) = recover_uv(model, &req)?;
            let (image, gt_uv) = evaluate_recovery(corpus, idx, &recovered)?;
            Ok(SampleEval {
                id: corpus.records[idx].id,
                image,
                gt_uv,
                wall_seconds: t0.elapsed().as_secs_f64(),
            })
        })
        .collect();
    let mut samples = Vec::new();
    let mut failures = 0usize;
    for r in results {
        match r {
            Ok(s) => samples.push(s),
            Err(_) => failures += 1,
        }
    }
    Ok(MetricsReport::from_samples(arm_name, cfg, samples, failures))
}

/// Mean-fill report over the same protocol (no network involved).
pub fn eval_mean_fill<T: Scalar>(corpus: &Corpus, cfg: &EvalConfig) -> Result<MetricsReport> {
    let eval_idx: Vec<usize> = corpus
        .split_indices("eval")
        .into_iter()
        .take(cfg.max_faces)
        .collect();
    let results: Vec<Result<SampleEval>> = eval_idx
        .par_iter()
        .map(|&idx| {
            let t0 = std::time::Instant::now();
            let s = corpus.load_training::<T>(idx)?;
            let validity = validity_from_position_map(&s.y_uv);
            let filled = mean_fill_baseline(&s.t_w, &s.m_t, &validity)?;
            let (image, gt_uv) = evaluate_recovery(corpus, idx, &filled)?;
            Ok(SampleEval {
                id: corpus.records[idx].id,
                image,
                gt_uv,
                wall_seconds: t0.elapsed().as_secs_f64(),
            })
        })
        .collect();
    let mut samples = Vec::new();
    let mut failures = 0usize;
    for r in results {
        match r {
            Ok(s) => samples.push(s),
            Err(_) => failures += 1,
        }
    }
    Ok(MetricsReport::from_samples("mean-fill", cfg, samples, failures))
}

/// Write a report next to PNG contact sheets for the first few faces.
pub fn write_report<T: Scalar>(
    report: &MetricsReport,
    corpus: &Corpus,
    model: Option<&CondModel<T>>,
    out_dir: &Path,
    sheets: usize,
) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let csv_path = out_dir.join(format!("{}_per_sample.csv", report.arm));
    std::fs::write(&csv_path, report.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
    let json_path = out_dir.join(format!("{}_summary.json", report.arm));
    std::fs::write(
        &json_path,
        serde_json::to_string_pretty(&report).expect("report json"),
    )
    .map_err(|e| Error::io(&json_path, e))?;
    if let Some(model) = model {
        let cfg = &report.config;
        for (i, &idx) in corpus
            .split_indices("eval")
            .iter()
            .take(sheets)
            .enumerate()
        {
            let s = corpus.load_training::<T>(idx)?;
            let req = request_for_sample::<T>(corpus, idx, cfg)?;
            let (recovered, _) = recover_uv(model, &req)?;
            let rec = &corpus.records[idx];
            let head = ProxyHead::<T>::new();
            let mesh = head.build_mesh(&rec.params_true);
            let frag = rasterize(&mesh, &rec.scene_true, corpus.header.config.image_size);
            let rendered = render_texture(&frag, &recovered, [1.0, 1.0, 1.0]);
            let gt = corpus.load_gt_uv::<T>(idx)?;
            let sheet =
                imgio::contact_sheet(&[&s.i_w, &s.t_w, &recovered, &rendered, &gt])?;
            let p = out_dir.join(format!("{}_sheet_{i}.png", report.arm));
            imgio::write_png(&p, &sheet)?;
        }
    }
    Ok(())
}

/// One ablation arm: a name plus the checkpoints it assembles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationArm {
    pub name: String,
    pub appearance_ckpt: String,
    pub structure_ckpt: String,
    pub color_adjust: bool,
}

/// Table 3 style arm list over a directory of trained checkpoints.
pub fn standard_arms() -> Vec<AblationArm> {
    let mk = |name: &str, a: &str, s: &str, adj: bool| AblationArm {
        name: name.to_string(),
        appearance_ckpt: a.to_string(),
        structure_ckpt: s.to_string(),
        color_adjust: adj,
    };
    vec![
        mk("a_ch+s_self", "phi_a_ch.uvck", "phi_s_self.uvck", true),
        mk("a_self+s_self", "phi_a_self.uvck", "phi_s_self.uvck", true),
        mk("a_self+s_ch", "phi_a_self.uvck", "phi_s_ch.uvck", true),
        mk("a_ch+s_ch", "phi_a_ch.uvck", "phi_s_ch.uvck", true),
        mk("wo_lm", "phi_a_ch_nolm.uvck", "phi_s_self.uvck", true),
        mk("wo_adj", "phi_a_ch.uvck", "phi_s_self.uvck", false),
    ]
}

/// Run every arm whose checkpoints exist; missing arms are skipped with a
/// notice line in the returned log.
pub fn run_ablation_matrix<T: Scalar>(
    corpus: &Corpus,
    models_dir: &Path,
    arms: &[AblationArm],
    cfg: &EvalConfig,
) -> Result<(Vec<MetricsReport>, Vec<String>)> {
    use crate::assembly::{assemble, load_network, AssemblySpec};
    let mut reports = Vec::new();
    let mut log = Vec::new();
    for arm in arms {
        let a_path = models_dir.join(&arm.appearance_ckpt);
        let s_path = models_dir.join(&arm.structure_ckpt);
        if !a_path.exists() || !s_path.exists() {
            log.push(format!(
                "arm `{}` skipped: missing checkpoint {}",
                arm.name,
                if a_path.exists() { s_path.display() } else { a_path.display() }
            ));
            continue;
        }
        let (a_params, a_manifest) = load_network::<T>(&a_path)?;
        let (s_params, s_manifest) = load_network::<T>(&s_path)?;
        let spec = AssemblySpec::default_cross("appearance", "structure");
        let model = assemble(
            &spec,
            &[
                ("appearance", &a_params, &a_manifest),
                ("structure", &s_params, &s_manifest),
            ],
        )?;
        let arm_cfg = EvalConfig {
            color_adjust: arm.color_adjust,
            ..cfg.clone()
        };
        let report = eval_recovery(corpus, &model, &arm_cfg, &arm.name)?;
        log.push(format!(
            "arm `{}`: image RMSE {:.4}, SSIM {:.4}, PSNR {:.2}, gt-uv RMSE {:.4} over {} faces",
            arm.name,
            report.mean_image_rmse,
            report.mean_image_ssim,
            report.mean_image_psnr,
            report.mean_gt_rmse,
            report.samples.len()
        ));
        reports.push(report);
    }
    Ok((reports, log))
}

/// Ranking table: arms sorted by mean image RMSE ascending.
pub fn ranking_table(reports: &[MetricsReport]) -> String {
    let mut rows: Vec<&MetricsReport> = reports.iter().collect();
    rows.sort_by(|a, b| a.mean_image_rmse.total_cmp(&b.mean_image_rmse));
    let mut out = String::from("arm,image_rmse,image_ssim,image_psnr,gt_uv_rmse,faces\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.4},{:.6},{}\n",
            r.arm,
            r.mean_image_rmse,
            r.mean_image_ssim,
            r.mean_image_psnr,
            r.mean_gt_rmse,
            r.samples.len()
        ));
    }
    out
}
