//! Subcommand implementations over the core library.

use crate::args::{parse_sample_id, Args};
use crate::config::RunConfig;
use crate::runs::{open_run, RunDir};
use crate::CliError;
use std::path::{Path, PathBuf};
use uvforge_core::assembly::{
    assemble, compose_edit, encode_request, load_network, recover_uv, recover_with_conditions,
    save_network, slerp_embeddings, AssemblySpec, NetManifest, RecoveryRequest,
};
use uvforge_core::corpus::{generate_corpus, Corpus, CorpusConfig, SceneConfig, TextureConfig};
use uvforge_core::dataprep::FitPerturbation;
use uvforge_core::diffusion::{CondModel, EncodedConds};
use uvforge_core::evalrun::{
    eval_mean_fill, eval_recovery, ranking_table, request_for_sample, run_ablation_matrix,
    standard_arms, write_report, EvalConfig,
};
use uvforge_core::geom::proxy::Region;
use uvforge_core::img::{io as imgio, Raster};
use uvforge_core::nn::AttnKind;
use uvforge_core::train::{
    fingerprint_prefix, train_arm, warmup_backbone, NetworkKind, TrainConfig, TrainDirection,
};
use uvforge_core::Real;

pub fn dispatch(args: &Args) -> Result<(), CliError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|_| CliError::missing(format!("config file {}", path.display())))?;
            RunConfig::parse(&text)
                .map_err(|e| CliError::config(format!("at `{}`: {}", e.key, e.msg)))?
        }
        None => RunConfig::defaults(),
    };
    for (k, v) in &args.sets {
        cfg.set(k, v)
            .map_err(|e| CliError::config(format!("at `{}`: {}", e.key, e.msg)))?;
    }
    // dedicated flags override config keys
    let section = match args.subcommand.as_str() {
        "recover" | "edit" | "interp" => "sample",
        "eval" | "ablate" => "eval",
        "train-appearance" => "train_a",
        "train-structure" => "train_s",
        _ => "corpus",
    };
    if let Some(seed) = args.seed {
        cfg.set(&format!("{section}.seed"), &seed.to_string())
            .map_err(|e| CliError::config(e.msg))?;
    }
    if let Some(views) = args.views {
        cfg.set("sample.views", &views.to_string())
            .map_err(|e| CliError::config(e.msg))?;
    }
    if let Some(tau) = args.tau {
        cfg.set("interp.tau", &tau.to_string())
            .map_err(|e| CliError::config(e.msg))?;
    }
    if let Some(arms) = &args.arms {
        cfg.set("ablate.arms", arms)
            .map_err(|e| CliError::config(e.msg))?;
    }

    match args.subcommand.as_str() {
        "corpus" => cmd_corpus(args, &cfg),
        "train-appearance" => cmd_train(args, &cfg, NetworkKind::Appearance),
        "train-structure" => cmd_train(args, &cfg, NetworkKind::Structure),
        "recover" => cmd_recover(args, &cfg),
        "edit" => cmd_edit(args, &cfg),
        "interp" => cmd_interp(args, &cfg),
        "eval" => cmd_eval(args, &cfg),
        "ablate" => cmd_ablate(args, &cfg),
        other => Err(CliError::config(format!("unknown subcommand {other}"))),
    }
}

fn corpus_config(cfg: &RunConfig) -> CorpusConfig {
    CorpusConfig {
        train_count: cfg.int("corpus.train_count") as usize,
        eval_count: cfg.int("corpus.eval_count") as usize,
        image_size: cfg.int("corpus.image_size") as usize,
        uv_size: cfg.int("corpus.uv_size") as usize,
        seed: cfg.int("corpus.seed") as u64,
        scene: SceneConfig {
            image_size: cfg.int("corpus.image_size") as usize,
            yaw_range_deg: cfg.float("corpus.yaw_range_deg"),
            pitch_range_deg: cfg.float("corpus.pitch_range_deg"),
            roll_range_deg: cfg.float("corpus.roll_range_deg"),
            occluder_prob: cfg.float("corpus.occluder_prob"),
        },
        texture: TextureConfig {
            freckle_prob: cfg.float("corpus.freckle_prob"),
            wrinkle_prob: cfg.float("corpus.wrinkle_prob"),
            beard_prob: cfg.float("corpus.beard_prob"),
            makeup_prob: cfg.float("corpus.makeup_prob"),
        },
        perturbation: FitPerturbation {
            sigma_shape: cfg.float("corpus.sigma_shape"),
            sigma_expr: cfg.float("corpus.sigma_expr"),
            sigma_rot_deg: cfg.float("corpus.sigma_rot_deg"),
            sigma_trans_px: cfg.float("corpus.sigma_trans_px"),
        },
        preview_count: cfg.int("corpus.preview_count") as usize,
    }
}

fn train_config(cfg: &RunConfig, section: &str) -> Result<TrainConfig, CliError> {
    let attention = match cfg.str(&format!("{section}.attention")).as_str() {
        "channel" | "ch" => AttnKind::Channel,
        "self" => AttnKind::SelfAttn,
        other => {
            return Err(CliError::config(format!(
                "at `{section}.attention`: unknown attention `{other}`"
            )))
        }
    };
    let direction = match cfg.str(&format!("{section}.direction")).as_str() {
        "forward" => TrainDirection::Forward,
        "reversed" | "uv_to_2d" => TrainDirection::Reversed,
        other => {
            return Err(CliError::config(format!(
                "at `{section}.direction`: unknown direction `{other}`"
            )))
        }
    };
    Ok(TrainConfig {
        steps: cfg.int(&format!("{section}.steps")) as usize,
        warmup_steps: cfg.int(&format!("{section}.warmup_steps")) as usize,
        batch_size: cfg.int(&format!("{section}.batch_size")) as usize,
        lr: cfg.float(&format!("{section}.lr")),
        warmup_lr: cfg.float(&format!("{section}.warmup_lr")),
        seed: cfg.int(&format!("{section}.seed")) as u64,
        t_count: cfg.int(&format!("{section}.t_count")) as usize,
        beta_min: cfg.float(&format!("{section}.beta_min")),
        beta_max: cfg.float(&format!("{section}.beta_max")),
        dropout_prob: cfg.float(&format!("{section}.dropout_prob")),
        attention,
        use_landmarks: cfg.bool(&format!("{section}.use_landmarks")),
        direction,
    })
}

fn eval_config(cfg: &RunConfig) -> EvalConfig {
    EvalConfig {
        guidance: cfg.float("eval.guidance"),
        steps: cfg.int("eval.steps") as usize,
        seed: cfg.int("eval.seed") as u64,
        color_adjust: cfg.bool("eval.color_adjust"),
        max_faces: cfg.int("eval.max_faces") as usize,
    }
}

fn need_corpus(args: &Args) -> Result<Corpus, CliError> {
    let dir = args
        .corpus
        .as_ref()
        .ok_or_else(|| CliError::config("--corpus DIR is required"))?;
    Ok(Corpus::open(dir)?)
}

fn need_model_dir(args: &Args) -> Result<&PathBuf, CliError> {
    args.model
        .as_ref()
        .ok_or_else(|| CliError::config("--model DIR is required"))
}

fn cmd_corpus(args: &Args, cfg: &RunConfig) -> Result<(), CliError> {
    let mut run = open_run(args.out.as_deref(), cfg).map_err(|e| CliError::run(e.to_string()))?;
    let ccfg = corpus_config(cfg);
    let manifest = generate_corpus::<Real>(&ccfg, &run.path)?;
    run.log(
        "corpus",
        &[
            ("train", manifest.header.train_count.to_string()),
            ("eval", manifest.header.eval_count.to_string()),
            ("skipped", manifest.header.skipped.to_string()),
        ],
    );
    println!(
        "corpus: {} train / {} eval samples written to {}",
        manifest.header.train_count,
        manifest.header.eval_count,
        run.path.display()
    );
    run.release();
    Ok(())
}

/// The frozen backbone is deterministic in (corpus, warmup config); cache it
/// in the models directory so both trainings share one file.
fn obtain_backbone(
    corpus: &Corpus,
    tc: &TrainConfig,
    models_dir: &Path,
    run: &mut RunDir,
) -> Result<(uvforge_core::nn::ParamSet<Real>, u64), CliError> {
    let path = models_dir.join("backbone.uvck");
    if path.exists() {
        let (params, manifest) = load_network::<Real>(&path)?;
        run.log("backbone", &[("source", "\"cached\"".into())]);
        return Ok((params, manifest.backbone_fingerprint));
    }
    let net = uvforge_core::train::default_net_config(corpus.header.config.image_size);
    let mut last = 0usize;
    let outcome = {
        let mut cb = |step: usize, loss: f64| {
            if step % 50 == 0 || step + 1 == tc.warmup_steps {
                run.log(
                    "warmup_step",
                    &[("step", step.to_string()), ("loss", format!("{loss:.6}"))],
                );
            }
            last = step;
        };
        warmup_backbone::<Real>(corpus, tc, &net, Some(&mut cb))?
    };
    if let Some(step) = outcome.halted_at {
        return Err(CliError::run(format!(
            "warmup halted on non-finite loss at step {step}"
        )));
    }
    let fp = fingerprint_prefix(&outcome.params, "backbone.");
    let manifest = NetManifest {
        kind: "backbone".into(),
        attention: AttnKind::Channel,
        use_landmarks: true,
        direction: "forward".into(),
        net,
        train_steps: tc.warmup_steps,
        backbone_fingerprint: fp,
        modules: vec!["backbone".into()],
    };
    save_network(&path, &outcome.params, &manifest)?;
    run.log("backbone", &[("source", "\"warmup\"".into()), ("fingerprint", format!("{fp}"))]);
    Ok((outcome.params, fp))
}

fn arm_file_name(kind: NetworkKind, tc: &TrainConfig) -> String {
    let prefix = match kind {
        NetworkKind::Appearance => "phi_a",
        NetworkKind::Structure => "phi_s",
    };
    let attn = match tc.attention {
        AttnKind::Channel => "ch",
        AttnKind::SelfAttn => "self",
    };
    let mut name = format!("{prefix}_{attn}");
    if kind == NetworkKind::Appearance && !tc.use_landmarks {
        name.push_str("_nolm");
    }
    if tc.direction == TrainDirection::Reversed {
        name.push_str("_rev");
    }
    format!("{name}.uvck")
}

fn cmd_train(args: &Args, cfg: &RunConfig, kind: NetworkKind) -> Result<(), CliError> {
    let corpus = need_corpus(args)?;
    let section = match kind {
        NetworkKind::Appearance => "train_a",
        NetworkKind::Structure => "train_s",
    };
    let tc = train_config(cfg, section)?;
    let mut run = open_run(args.out.as_deref(), cfg).map_err(|e| CliError::run(e.to_string()))?;
    let models_dir = run.path.clone();
    let (backbone, fp) = obtain_backbone(&corpus, &tc, &models_dir, &mut run)?;

    let outcome = {
        let mut cb = |step: usize, loss: f64| {
            if step % 25 == 0 || step + 1 == tc.steps {
                run.log(
                    "train_step",
                    &[
                        ("step", step.to_string()),
                        ("loss", format!("{loss:.6}")),
                        ("lr", format!("{}", tc.lr)),
                    ],
                );
            }
        };
        train_arm::<Real>(&corpus, kind, &tc, &backbone, Some(&mut cb))?
    };
    if let Some(step) = outcome.halted_at {
        run.log("halted", &[("step", step.to_string())]);
        eprintln!("training halted on non-finite loss at step {step}; last good checkpoint kept");
    }
    let manifest = NetManifest {
        kind: match kind {
            NetworkKind::Appearance => "appearance".into(),
            NetworkKind::Structure => "structure".into(),
        },
        attention: tc.attention,
        use_landmarks: tc.use_landmarks,
        direction: match tc.direction {
            TrainDirection::Forward => "forward".into(),
            TrainDirection::Reversed => "reversed".into(),
        },
        net: outcome.net,
        train_steps: outcome.losses.len(),
        backbone_fingerprint: fp,
        modules: vec!["backbone".into(), "psi".into(), "ctrl".into()],
    };
    let fname = arm_file_name(kind, &tc);
    save_network(&models_dir.join(&fname), &outcome.params, &manifest)?;
    // loss history for the record
    let csv: String = outcome
        .losses
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{i},{l:.6}\n"))
        .collect();
    std::fs::write(models_dir.join(format!("{fname}.loss.csv")), csv)
        .map_err(|e| CliError::run(e.to_string()))?;
    println!(
        "trained {} for {} steps -> {}",
        fname,
        outcome.losses.len(),
        models_dir.join(&fname).display()
    );
    run.release();
    Ok(())
}

/// Load the default cross-assembly from a models directory.
fn load_default_assembly(models_dir: &Path) -> Result<CondModel<Real>, CliError> {
    let a_path = models_dir.join("phi_a_ch.uvck");
    let s_path = models_dir.join("phi_s_self.uvck");
    for p in [&a_path, &s_path] {
        if !p.exists() {
            return Err(CliError::missing(format!("checkpoint {}", p.display())));
        }
    }
    let (a_params, a_manifest) = load_network::<Real>(&a_path)?;
    let (s_params, s_manifest) = load_network::<Real>(&s_path)?;
    let spec = AssemblySpec::default_cross("appearance", "structure");
    Ok(assemble(
        &spec,
        &[
            ("appearance", &a_params, &a_manifest),
            ("structure", &s_params, &s_manifest),
        ],
    )?)
}

/// Split one unwrapped view into n vertical-strip partial views.
pub fn split_views(
    tex: &Raster<Real>,
    mask: &Raster<Real>,
    n: usize,
) -> Vec<(Raster<Real>, Raster<Real>)> {
    if n <= 1 {
        return vec![(tex.clone(), mask.clone())];
    }
    let w = tex.width();
    let mut views = Vec::with_capacity(n);
    for k in 0..n {
        let x0 = k * w / n;
        let x1 = (k + 1) * w / n;
        let mut m = Raster::zeros(mask.height(), w, 1);
        for y in 0..mask.height() {
            for x in x0..x1 {
                m.set(y, x, 0, mask.get(y, x, 0));
            }
        }
        let t = tex.masked(&m).expect("same dims");
        views.push((t, m));
    }
    views
}

fn find_record(corpus: &Corpus, id: u64) -> Result<usize, CliError> {
    corpus
        .records
        .iter()
        .position(|r| r.id == id)
        .ok_or_else(|| CliError::missing(format!("sample {id} not in corpus")))
}

fn sample_request(
    corpus: &Corpus,
    idx: usize,
    cfg: &RunConfig,
) -> Result<RecoveryRequest<Real>, CliError> {
    let e = EvalConfig {
        guidance: cfg.float("sample.guidance"),
        steps: cfg.int("sample.steps") as usize,
        seed: cfg.int("sample.seed") as u64,
        color_adjust: cfg.bool("sample.color_adjust"),
        max_faces: 1,
    };
    Ok(request_for_sample::<Real>(corpus, idx, &e)?)
}

fn write_recovery_outputs(
    run: &mut RunDir,
    corpus: &Corpus,
    idx: usize,
    recovered: &Raster<Real>,
    tag: &str,
) -> Result<(), CliError> {
    let s = corpus.load_training::<Real>(idx)?;
    imgio::write_uvf(&run.path.join(format!("{tag}.uvf")), recovered)?;
    imgio::write_png(&run.path.join(format!("{tag}.png")), recovered)?;
    let sheet = imgio::contact_sheet(&[&s.i_w, &s.t_w, recovered])?;
    imgio::write_png(&run.path.join(format!("{tag}_sheet.png")), &sheet)?;
    Ok(())
}

fn cmd_recover(args: &Args, cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = need_corpus(args)?;
    let model = load_default_assembly(need_model_dir(args)?)?;
    let id = parse_sample_id(
        args.input
            .as_deref()
            .ok_or_else(|| CliError::config("--input ID is required"))?,
    )
    .map_err(CliError::config)?;
    let idx = find_record(&corpus, id)?;
    let mut run = open_run(args.out.as_deref(), cfg).map_err(|e| CliError::run(e.to_string()))?;
    let mut req = sample_request(&corpus, idx, cfg)?;
    let n_views = cfg.int("sample.views").max(1) as usize;
    if n_views > 1 {
        let (tex, mask) = req.views[0].clone();
        req.views = split_views(&tex, &mask, n_views);
    }
    let (recovered, info) = recover_uv(&model, &req)?;
    write_recovery_outputs(&mut run, &corpus, idx, &recovered, "recovered")?;
    run.log(
        "recover",
        &[
            ("id", id.to_string()),
            ("views", req.views.len().to_string()),
            ("clamped", info.clamped.to_string()),
            ("seconds", format!("{:.2}", info.wall_seconds)),
        ],
    );
    println!(
        "recovered sample {id} with {} view(s) -> {}",
        req.views.len(),
        run.path.join("recovered.png").display()
    );
    run.release();
    Ok(())
}

fn cmd_edit(args: &Args, cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = need_corpus(args)?;
    let model = load_default_assembly(need_model_dir(args)?)?;
    let base_str = args
        .base
        .clone()
        .or_else(|| {
            let b = cfg.str("edit.base");
            if b.is_empty() {
                None
            } else {
                Some(b)
            }
        })
        .ok_or_else(|| CliError::config("--base ID is required"))?;
    let base_id = parse_sample_id(&base_str).map_err(CliError::config)?;
    let base_idx = find_record(&corpus, base_id)?;
    let mut layer_specs = args.layers.clone();
    if layer_specs.is_empty() {
        let from_cfg = cfg.str("edit.layers");
        if !from_cfg.is_empty() {
            layer_specs = from_cfg.split(',').map(|s| s.trim().to_string()).collect();
        }
    }
    let base = corpus.load_training::<Real>(base_idx)?;
    let uv_size = corpus.header.config.uv_size;
    let mut layers = Vec::new();
    for spec in &layer_specs {
        let (id_str, region_str) = spec
            .split_once(':')
            .ok_or_else(|| CliError::config(format!("layer `{spec}` must be ID:REGION")))?;
        let lid = parse_sample_id(id_str).map_err(CliError::config)?;
        let lidx = find_record(&corpus, lid)?;
        let region = Region::parse(region_str)
            .ok_or_else(|| CliError::config(format!("unknown region `{region_str}`")))?;
        let ls = corpus.load_training::<Real>(lidx)?;
        let rmask = region.mask::<Real>(uv_size);
        let lmask = uvforge_core::img::compose_masks(&rmask, &ls.m_t)?;
        layers.push((ls.t_w.masked(&lmask)?, lmask));
    }
    let (tex, mask) = compose_edit((&base.t_w, &base.m_t), &layers)?;
    let mut run = open_run(args.out.as_deref(), cfg).map_err(|e| CliError::run(e.to_string()))?;
    let mut req = sample_request(&corpus, base_idx, cfg)?;
    req.views = vec![(tex.clone(), mask)];
    let (recovered, _) = recover_uv(&model, &req)?;
    imgio::write_png(&run.path.join("edit_input.png"), &tex)?;
    write_recovery_outputs(&mut run, &corpus, base_idx, &recovered, "edited")?;
    run.log(
        "edit",
        &[
            ("base", base_id.to_string()),
            ("layers", layer_specs.len().to_string()),
        ],
    );
    println!(
        "edited sample {base_id} with {} layer(s) -> {}",
        layer_specs.len(),
        run.path.join("edited.png").display()
    );
    run.release();
    Ok(())
}

fn cmd_interp(args: &Args, cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = need_corpus(args)?;
    let model = load_default_assembly(need_model_dir(args)?)?;
    let get = |flag: Option<&String>, key: &str| -> Result<u64, CliError> {
        let s = flag
            .cloned()
            .or_else(|| {
                let v = cfg.str(key);
                if v.is_empty() {
                    None
                } else {
                    Some(v)
                }
            })
            .ok_or_else(|| CliError::config(format!("{key} is required")))?;
        parse_sample_id(&s).map_err(CliError::config)
    };
    let id_a = get(args.input_a.as_ref(), "interp.input_a")?;
    let id_b = get(args.input_b.as_ref(), "interp.input_b")?;
    let tau = cfg.float("interp.tau");
    let idx_a = find_record(&corpus, id_a)?;
    let idx_b = find_record(&corpus, id_b)?;
    let mut run = open_run(args.out.as_deref(), cfg).map_err(|e| CliError::run(e.to_string()))?;
    let req_a = sample_request(&corpus, idx_a, cfg)?;
    let req_b = sample_request(&corpus, idx_b, cfg)?;
    let enc_a = encode_request(&model, &req_a)?;
    let enc_b = encode_request(&model, &req_b)?;
    let tokens = slerp_embeddings(
        enc_a.tokens.as_ref().expect("tokens"),
        enc_b.tokens.as_ref().expect("tokens"),
        tau,
    )?;
    let conds = EncodedConds {
        tokens: Some(tokens),
        residuals: enc_a.residuals,
    };
    let (recovered, _) = recover_with_conditions(&model, &conds, &req_a)?;
    write_recovery_outputs(&mut run, &corpus, idx_a, &recovered, "interpolated")?;
    run.log(
        "interp",
        &[
            ("a", id_a.to_string()),
            ("b", id_b.to_string()),
            ("tau", format!("{tau}")),
        ],
    );
    println!(
        "interpolated {id_a} -> {id_b} at tau {tau} -> {}",
        run.path.join("interpolated.png").display()
    );
    run.release();
    Ok(())
}

fn cmd_eval(args: &Args, cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = need_corpus(args)?;
    let model = load_default_assembly(need_model_dir(args)?)?;
    let ecfg = eval_config(cfg);
    let mut run = open_run(args.out.as_deref(), cfg).map_err(|e| CliError::run(e.to_string()))?;
    let report = eval_recovery(&corpus, &model, &ecfg, "default")?;
    let baseline = eval_mean_fill::<Real>(&corpus, &ecfg)?;
    let sheets = cfg.int("eval.sheets") as usize;
    write_report(&report, &corpus, Some(&model), &run.path, sheets)?;
    write_report::<Real>(&baseline, &corpus, None, &run.path, 0)?;
    let table = ranking_table(&[report.clone(), baseline.clone()]);
    std::fs::write(run.path.join("ranking.csv"), &table)
        .map_err(|e| CliError::run(e.to_string()))?;
    run.log(
        "eval",
        &[
            ("faces", report.samples.len().to_string()),
            ("image_rmse", format!("{:.6}", report.mean_image_rmse)),
            ("gt_uv_rmse", format!("{:.6}", report.mean_gt_rmse)),
            ("baseline_gt_uv_rmse", format!("{:.6}", baseline.mean_gt_rmse)),
        ],
    );
    println!(
        "eval over {} faces: image RMSE {:.4}, gt-uv RMSE {:.4} (mean-fill {:.4}) -> {}",
        report.samples.len(),
        report.mean_image_rmse,
        report.mean_gt_rmse,
        baseline.mean_gt_rmse,
        run.path.display()
    );
    run.release();
    Ok(())
}

fn cmd_ablate(args: &Args, cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = need_corpus(args)?;
    let models_dir = need_model_dir(args)?;
    let ecfg = eval_config(cfg);
    let arm_filter = cfg.str("ablate.arms");
    let mut arms = standard_arms();
    if arm_filter != "all" {
        let wanted: Vec<&str> = arm_filter.split(',').map(|s| s.trim()).collect();
        arms.retain(|a| wanted.contains(&a.name.as_str()));
        if arms.is_empty() {
            return Err(CliError::config(format!(
                "no known arms in `{arm_filter}`"
            )));
        }
    }
    let mut run = open_run(args.out.as_deref(), cfg).map_err(|e| CliError::run(e.to_string()))?;
    let (reports, log) = run_ablation_matrix::<Real>(&corpus, models_dir, &arms, &ecfg)?;
    for line in &log {
        println!("{line}");
        run.log("ablate_arm", &[("line", format!("{line:?}"))]);
    }
    let table = ranking_table(&reports);
    std::fs::write(run.path.join("ablation.csv"), &table)
        .map_err(|e| CliError::run(e.to_string()))?;
    for r in &reports {
        write_report::<Real>(r, &corpus, None, &run.path, 0)?;
    }
    println!("{table}");
    println!("ablation table -> {}", run.path.join("ablation.csv").display());
    run.release();
    Ok(())
}
