//! Training: unconditional backbone warm-up (shared by both networks, then
//! frozen) and the two condition-arm trainings. Batch elements run as
//! independent graphs; their gradients are summed in slot order so results
//! are bitwise identical however the work is scheduled.

use crate::corpus::Corpus;
use crate::diffusion::{denoising_loss, LossBatchItem, NoiseSchedule, CONDITION_DROPOUT_PROB};
use crate::error::{Error, Result};
use crate::img::Raster;
use crate::nn::{
    grads_by_name, init_backbone, init_control, init_extractor, AttnKind, NetConfig, ParamSet,
};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{AdamParams, AdamState, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    Appearance,
    Structure,
}

/// Input→output direction; `Reversed` trains the structure network on the
/// UV→2D task (an ablation arm).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainDirection {
    Forward,
    Reversed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_lr: f64,
    pub seed: u64,
    pub t_count: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub dropout_prob: f64,
    pub attention: AttnKind,
    pub use_landmarks: bool,
    pub direction: TrainDirection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            warmup_steps: 1200,
            batch_size: 4,
            lr: 3e-3,
            warmup_lr: 2e-3,
            seed: 11,
            t_count: 1000,
            beta_min: 1e-4,
            beta_max: 0.02,
            dropout_prob: CONDITION_DROPOUT_PROB,
            attention: AttnKind::SelfAttn,
            use_landmarks: true,
            direction: TrainDirection::Forward,
        }
    }
}

/// Net sizing shared across the pipeline at a given resolution.
pub fn default_net_config(image_size: usize) -> NetConfig {
    NetConfig {
        image_size,
        ..NetConfig::default()
    }
}

fn concat_channels<T: Scalar>(a: &Raster<T>, b: &Raster<T>) -> Raster<T> {
    debug_assert_eq!(a.height(), b.height());
    debug_assert_eq!(a.width(), b.width());
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

/// Map one prepared sample onto the loss inputs of a network kind.
pub fn loss_item_for<T: Scalar>(
    kind: NetworkKind,
    direction: TrainDirection,
    use_landmarks: bool,
    s: &crate::dataprep::TrainingSample<T>,
) -> LossBatchItem<T> {
    match (kind, direction) {
        (NetworkKind::Appearance, _) => LossBatchItem {
            target: s.i_w.clone(),
            views: vec![concat_channels(&s.t_w, &s.m_t)],
            control: if use_landmarks {
                concat_channels(&s.i_uv, &s.i_lm)
            } else {
                s.i_uv.clone()
            },
        },
        (NetworkKind::Structure, TrainDirection::Forward) => LossBatchItem {
            target: s.t_m.clone(),
            views: vec![concat_channels(&s.i_m, &s.m_i)],
            control: s.t_uv.clone(),
        },
        (NetworkKind::Structure, TrainDirection::Reversed) => LossBatchItem {
            target: s.i_m.clone(),
            views: vec![concat_channels(&s.t_m, &s.m_t)],
            control: s.i_uv.clone(),
        },
    }
}

/// Control-branch input channel count for a configuration.
pub fn control_channels(kind: NetworkKind, direction: TrainDirection, use_landmarks: bool) -> usize {
    match (kind, direction) {
        (NetworkKind::Appearance, _) => {
            if use_landmarks {
                4
            } else {
                3
            }
        }
        (NetworkKind::Structure, _) => 3,
    }
}

pub struct TrainOutcome<T> {
    pub params: ParamSet<T>,
    pub net: NetConfig,
    pub losses: Vec<f64>,
    /// Step at which a non-finite loss halted training, if any.
    pub halted_at: Option<usize>,
}

/// Unconditional warm-up over both target domains (masked images and proxy
/// textures alternate). Deterministic in the seed, so the appearance and
/// structure trainings recompute an identical frozen backbone.
pub fn warmup_backbone<T: Scalar>(
    corpus: &Corpus,
    cfg: &TrainConfig,
    net: &NetConfig,
    mut on_step: Option<&mut dyn FnMut(usize, f64)>,
) -> Result<TrainOutcome<T>> {
    let mut rng = Rng::new(cfg.seed ^ 0x5eed_baba);
    let mut params = ParamSet::new();
    init_backbone(&mut params, net, &mut rng);
    let schedule = NoiseSchedule::linear(cfg.t_count, cfg.beta_min, cfg.beta_max)?;
    let train_idx = corpus.split_indices("train");
    if train_idx.is_empty() {
        return Err(Error::invalid("warmup", "no training samples"));
    }
    let mut adam = AdamState::new(AdamParams {
        lr: cfg.warmup_lr,
        ..AdamParams::default()
    })?;
    let trainable = |_: &str| true;
    let mut losses = Vec::with_capacity(cfg.warmup_steps);
    for step in 0..cfg.warmup_steps {
        let step_rng = rng.child(step as u64);
        let items: Vec<LossBatchItem<T>> = (0..cfg.batch_size)
            .map(|slot| {
                let mut r = step_rng.child(slot as u64);
                let idx = train_idx[r.below(train_idx.len() as u64) as usize];
                let s = corpus.load_training::<T>(idx)?;
                // alternate the two target domains
                let target = if (step + slot) % 2 == 0 { s.i_w } else { s.t_m };
                Ok(LossBatchItem {
                    target,
                    views: Vec::new(),
                    control: Raster::zeros(1, 1, 1),
                })
            })
            .collect::<Result<_>>()?;
        match batch_step(
            &mut params,
            net,
            &trainable,
            &items,
            &schedule,
            &step_rng,
            1.0, // unconditional: always drop conditions
            &mut adam,
        ) {
            Ok(loss) => {
                losses.push(loss);
                if let Some(cb) = on_step.as_deref_mut() {
                    cb(step, loss);
                }
            }
            Err(Error::NonFinite { .. }) => {
                return Ok(TrainOutcome {
                    params,
                    net: *net,
                    losses,
                    halted_at: Some(step),
                })
            }
            Err(e) => return Err(e),
        }
    }
    Ok(TrainOutcome {
        params,
        net: *net,
        losses,
        halted_at: None,
    })
}

/// Train one condition arm (extractor + injection sites + control branch)
/// on the frozen warm-up backbone.
pub fn train_arm<T: Scalar>(
    corpus: &Corpus,
    kind: NetworkKind,
    cfg: &TrainConfig,
    backbone: &ParamSet<T>,
    mut on_step: Option<&mut dyn FnMut(usize, f64)>,
) -> Result<TrainOutcome<T>> {
    let image_size = corpus.header.config.image_size;
    let net = NetConfig {
        control_in: control_channels(kind, cfg.direction, cfg.use_landmarks),
        psi_attention: cfg.attention,
        ..default_net_config(image_size)
    };
    let arm_tag = match kind {
        NetworkKind::Appearance => 0xa99u64,
        NetworkKind::Structure => 0x57du64,
    };
    let mut rng = Rng::new(cfg.seed ^ arm_tag);
    let mut params = ParamSet::new();
    params.adopt_prefix(backbone, "backbone.");
    init_extractor(&mut params, &net, &mut rng);
    let bb = params.clone();
    init_control(&mut params, &net, &bb, &mut rng);

    let schedule = NoiseSchedule::linear(cfg.t_count, cfg.beta_min, cfg.beta_max)?;
    let train_idx = corpus.split_indices("train");
    if train_idx.is_empty() {
        return Err(Error::invalid("train_arm", "no training samples"));
    }
    let mut adam = AdamState::new(AdamParams {
        lr: cfg.lr,
        ..AdamParams::default()
    })?;
    // the backbone stays frozen; arms and injection sites learn
    let trainable = |name: &str| !name.starts_with("backbone.");
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let step_rng = rng.child(step as u64);
        let items: Vec<LossBatchItem<T>> = (0..cfg.batch_size)
            .map(|slot| {
                let mut r = step_rng.child(slot as u64);
                let idx = train_idx[r.below(train_idx.len() as u64) as usize];
                let s = corpus.load_training::<T>(idx)?;
                Ok(loss_item_for(kind, cfg.direction, cfg.use_landmarks, &s))
            })
            .collect::<Result<_>>()?;
        match batch_step(
            &mut params,
            &net,
            &trainable,
            &items,
            &schedule,
            &step_rng,
            cfg.dropout_prob,
            &mut adam,
        ) {
            Ok(loss) => {
                losses.push(loss);
                if let Some(cb) = on_step.as_deref_mut() {
                    cb(step, loss);
                }
            }
            Err(Error::NonFinite { .. }) => {
                return Ok(TrainOutcome {
                    params,
                    net,
                    losses,
                    halted_at: Some(step),
                })
            }
            Err(e) => return Err(e),
        }
    }
    Ok(TrainOutcome {
        params,
        net,
        losses,
        halted_at: None,
    })
}

/// One optimizer step over a batch: per-sample graphs evaluated in
/// parallel, gradients averaged in slot order.
#[allow(clippy::too_many_arguments)]
fn batch_step<T: Scalar>(
    params: &mut ParamSet<T>,
    net: &NetConfig,
    trainable: &(dyn Fn(&str) -> bool + Sync),
    items: &[LossBatchItem<T>],
    schedule: &NoiseSchedule<T>,
    step_rng: &Rng,
    dropout_prob: f64,
    adam: &mut AdamState<T>,
) -> Result<f64> {
    let results: Vec<Result<(f64, BTreeMap<String, Tensor<T>>)>> = items
        .par_iter()
        .enumerate()
        .map(|(slot, item)| {
            let mut r = step_rng.child(0x10_0000 + slot as u64);
            let fwd = denoising_loss(params, net, trainable, item, schedule, &mut r, dropout_prob)?;
            let loss = fwd.graph.value(fwd.loss).item().to_f64_c();
            let grads = fwd.graph.backward(fwd.loss)?;
            let by_name = grads_by_name(params, &fwd.bound, &grads, trainable)?;
            Ok((loss, by_name))
        })
        .collect();
    let mut total_loss = 0.0;
    let mut summed: BTreeMap<String, Tensor<T>> = BTreeMap::new();
    let inv = T::from_f64_c(1.0 / items.len() as f64);
    for r in results {
        let (loss, grads) = r?;
        total_loss += loss;
        for (name, g) in grads {
            match summed.get_mut(&name) {
                None => {
                    summed.insert(name, g);
                }
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += *b;
                    }
                }
            }
        }
    }
    for g in summed.values_mut() {
        for v in g.data_mut() {
            *v *= inv;
        }
    }
    adam.step(params.map_mut(), &summed)?;
    Ok(total_loss / items.len() as f64)
}

/// 64-bit fingerprint of a parameter subset, for backbone compatibility
/// checks at assembly time.
pub fn fingerprint_prefix<T: Scalar>(params: &ParamSet<T>, prefix: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for (name, t) in params.iter() {
        if !name.starts_with(prefix) {
            continue;
        }
        for b in name.as_bytes() {
            h = (h ^ *b as u64).wrapping_mul(0x100_0000_01b3);
        }
        for v in t.data() {
            let mut buf = Vec::with_capacity(8);
            v.write_le(&mut buf);
            for b in buf {
                h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
            }
        }
    }
    h
}
