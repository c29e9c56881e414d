use std::time::Instant;
use uvforge_core::assembly::{assemble, AssemblySpec, NetManifest};
use uvforge_core::corpus::{Corpus, CorpusConfig, generate_corpus};
use uvforge_core::diffusion::{denoising_loss, CondModel, NoiseSchedule};
use uvforge_core::evalrun::{eval_mean_fill, eval_recovery, write_report, EvalConfig};
use uvforge_core::nn::AttnKind;
use uvforge_core::rng::Rng;
use uvforge_core::train::{
    fingerprint_prefix, loss_item_for, train_arm, warmup_backbone, NetworkKind, TrainConfig,
    TrainDirection, default_net_config,
};

/// conditional vs unconditional loss on held-out samples at fixed timesteps
fn conditioning_uptake(
    corpus: &Corpus,
    model: &CondModel<f32>,
    kind: NetworkKind,
) -> (f64, f64) {
    let sched = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
    let eval_idx = corpus.split_indices("eval");
    let mut cond_total = 0.0;
    let mut unc_total = 0.0;
    let mut n = 0.0;
    for (k, &idx) in eval_idx.iter().take(8).enumerate() {
        let s = corpus.load_training::<f32>(idx).unwrap();
        let item = loss_item_for(kind, TrainDirection::Forward, true, &s);
        for (j, drop) in [(0u64, false), (1, true)] {
            let mut rng = Rng::new(900 + k as u64 * 7 + j);
            let fwd = denoising_loss(&model.params, &model.cfg, &|_| false, &item, &sched, &mut rng,
                if drop { 1.0 } else { 0.0 }).unwrap();
            let l = fwd.graph.value(fwd.loss).item() as f64;
            if drop { unc_total += l } else { cond_total += l }
        }
        n += 1.0;
    }
    (cond_total / n, unc_total / n)
}

#[test]
fn pilot_medium_training() {
    let dir = std::env::temp_dir().join("uvforge-pilot2");
    if !dir.join("manifest.jsonl").exists() {
        let cfg = CorpusConfig { train_count: 512, eval_count: 24, preview_count: 2, ..CorpusConfig::default() };
        generate_corpus::<f32>(&cfg, &dir).unwrap();
    }
    let corpus = Corpus::open(&dir).unwrap();

    let tc = TrainConfig { warmup_steps: 400, steps: 600, lr: 2e-3, ..TrainConfig::default() };
    let net = default_net_config(64);
    let t0 = Instant::now();
    let wu = warmup_backbone::<f32>(&corpus, &tc, &net, None).unwrap();
    println!("warmup 400: {:.0}s, loss {:.3} -> {:.3}", t0.elapsed().as_secs_f64(),
        wu.losses[..20].iter().sum::<f64>()/20.0, wu.losses[380..].iter().sum::<f64>()/20.0);
    let fp = fingerprint_prefix(&wu.params, "backbone.");

    let t0 = Instant::now();
    let tc_a = TrainConfig { attention: AttnKind::Channel, ..tc.clone() };
    let arm_a = train_arm::<f32>(&corpus, NetworkKind::Appearance, &tc_a, &wu.params, None).unwrap();
    println!("appearance 600: {:.0}s, loss w0 {:.4} w2 {:.4} w5 {:.4}",
        t0.elapsed().as_secs_f64(),
        arm_a.losses[..100].iter().sum::<f64>()/100.0,
        arm_a.losses[200..300].iter().sum::<f64>()/100.0,
        arm_a.losses[500..600].iter().sum::<f64>()/100.0);
    let model_a = CondModel { cfg: arm_a.net, params: arm_a.params.clone() };
    let (c, u) = conditioning_uptake(&corpus, &model_a, NetworkKind::Appearance);
    println!("appearance uptake: cond {:.4} vs uncond {:.4} (ratio {:.2})", c, u, c/u);

    let t0 = Instant::now();
    let arm_s = train_arm::<f32>(&corpus, NetworkKind::Structure, &tc, &wu.params, None).unwrap();
    println!("structure 600: {:.0}s, loss w0 {:.4} w5 {:.4}",
        t0.elapsed().as_secs_f64(),
        arm_s.losses[..100].iter().sum::<f64>()/100.0,
        arm_s.losses[500..600].iter().sum::<f64>()/100.0);
    let model_s = CondModel { cfg: arm_s.net, params: arm_s.params.clone() };
    let (c, u) = conditioning_uptake(&corpus, &model_s, NetworkKind::Structure);
    println!("structure uptake: cond {:.4} vs uncond {:.4} (ratio {:.2})", c, u, c/u);

    let man = |kind: &str, attn, net, steps| NetManifest {
        kind: kind.into(), attention: attn, use_landmarks: true, direction: "forward".into(),
        net, train_steps: steps, backbone_fingerprint: fp,
        modules: vec!["backbone".into(), "psi".into(), "ctrl".into()],
    };
    let ma = man("appearance", AttnKind::Channel, arm_a.net, 600);
    let ms = man("structure", AttnKind::SelfAttn, arm_s.net, 600);
    let spec = AssemblySpec::default_cross("appearance", "structure");
    let model = assemble(&spec, &[("appearance", &arm_a.params, &ma), ("structure", &arm_s.params, &ms)]).unwrap();

    let ecfg = EvalConfig { max_faces: 12, ..EvalConfig::default() };
    let t0 = Instant::now();
    let rep = eval_recovery(&corpus, &model, &ecfg, "pilot").unwrap();
    println!("eval 12 faces: {:.0}s -> image RMSE {:.4} SSIM {:.3}, gt RMSE {:.4}",
        t0.elapsed().as_secs_f64(), rep.mean_image_rmse, rep.mean_image_ssim, rep.mean_gt_rmse);
    let base = eval_mean_fill::<f32>(&corpus, &ecfg).unwrap();
    println!("mean-fill: image RMSE {:.4}, gt RMSE {:.4}", base.mean_image_rmse, base.mean_gt_rmse);
    println!("RATIO gt: {:.3} (need <= 0.8)", rep.mean_gt_rmse / base.mean_gt_rmse);
    let sheet_dir = std::env::temp_dir().join("uvforge-pilot2-sheets");
    write_report(&rep, &corpus, Some(&model), &sheet_dir, 3).unwrap();
    println!("sheets at {}", sheet_dir.display());
}
