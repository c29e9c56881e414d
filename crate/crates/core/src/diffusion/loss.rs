//! Denoising losses. Both networks share one loss form: draw a timestep and
//! a noise sample, corrupt the target, predict the noise under the sample's
//! conditions, and take the mean squared error. With 10% probability all
//! conditions are dropped so the unconditional branch used by
//! classifier-free guidance stays trained.

use super::model::{raster_to_nchw, training_forward};
use super::{forward_diffuse, to_diffusion_domain, NoiseSchedule};
use crate::error::Result;
use crate::img::Raster;
use crate::nn::{bind_all, Bound, NetConfig};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Graph, NodeId, Tensor};

pub const CONDITION_DROPOUT_PROB: f64 = 0.1;

/// One sample's loss inputs: the generation target plus its condition set.
pub struct LossBatchItem<T> {
    pub target: Raster<T>,
    pub views: Vec<Raster<T>>,
    pub control: Raster<T>,
}

/// A built loss graph ready for backward.
pub struct TrainForward<T> {
    pub graph: Graph<T>,
    pub bound: Bound,
    pub loss: NodeId,
    pub t: usize,
    pub dropped_conditions: bool,
}

/// Build the per-sample loss graph: ‖ε − ε̂‖² mean over elements.
pub fn denoising_loss<T: Scalar>(
    params: &crate::nn::ParamSet<T>,
    cfg: &NetConfig,
    trainable: &dyn Fn(&str) -> bool,
    item: &LossBatchItem<T>,
    schedule: &NoiseSchedule<T>,
    rng: &mut Rng,
    dropout_prob: f64,
) -> Result<TrainForward<T>> {
    let t = 1 + rng.below(schedule.steps() as u64) as usize;
    let x0 = raster_to_nchw(&item.target).map(to_diffusion_domain);
    let eps = Tensor::randn(x0.shape(), rng);
    let x_t = forward_diffuse(&x0, t, &eps, schedule)?;
    let dropped = rng.bernoulli(dropout_prob);

    let mut g = Graph::new();
    let bound = bind_all(&mut g, params, trainable)?;
    let x_t_node = g.leaf(x_t, false)?;
    let eps_node = g.leaf(eps, false)?;
    let (view_nodes, control_node) = if dropped {
        (Vec::new(), None)
    } else {
        let mut vn = Vec::with_capacity(item.views.len());
        for v in &item.views {
            vn.push(g.leaf(raster_to_nchw(v), false)?);
        }
        let cn = g.leaf(raster_to_nchw(&item.control), false)?;
        (vn, Some(cn))
    };
    let fwd = training_forward(&mut g, &bound, cfg, x_t_node, t, &view_nodes, control_node)?;
    let diff = g.sub(eps_node, fwd.prediction)?;
    let sq = g.mul(diff, diff)?;
    let loss = g.mean_all(sq)?;
    Ok(TrainForward {
        graph: g,
        bound,
        loss,
        t,
        dropped_conditions: dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_backbone, init_control, init_extractor, AttnKind, NetConfig, ParamSet};

    fn tiny_setup() -> (NetConfig, ParamSet<f32>, LossBatchItem<f32>) {
        let cfg = NetConfig {
            image_size: 16,
            in_channels: 3,
            widths: [8, 8, 8],
            temb_dim: 16,
            token_dim: 8,
            attn_dim: 8,
            groups: 4,
            extractor_in: 4,
            extractor_widths: [4, 4, 8],
            control_in: 3,
            psi_attention: AttnKind::Channel,
        };
        let mut rng = Rng::new(66);
        let mut params = ParamSet::new();
        init_backbone(&mut params, &cfg, &mut rng);
        init_extractor(&mut params, &cfg, &mut rng);
        let bb = params.clone();
        init_control(&mut params, &cfg, &bb, &mut rng);
        let mut target = Raster::zeros(16, 16, 3);
        let mut view = Raster::zeros(16, 16, 4);
        let mut control = Raster::zeros(16, 16, 3);
        for v in target
            .data_mut()
            .iter_mut()
            .chain(view.data_mut())
            .chain(control.data_mut())
        {
            *v = rng.uniform() as f32;
        }
        (
            cfg,
            params,
            LossBatchItem {
                target,
                views: vec![view],
                control,
            },
        )
    }

    #[test]
    fn untrained_loss_is_mean_eps_squared() {
        // zero-init output conv ⇒ ε̂ ≡ 0 ⇒ loss = mean ε² ≈ 1 for unit noise
        let (cfg, params, item) = tiny_setup();
        let sched = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        let mut losses = Vec::new();
        let mut rng = Rng::new(7);
        for _ in 0..40 {
            let fwd = denoising_loss(&params, &cfg, &|_| false, &item, &sched, &mut rng, 0.1)
                .unwrap();
            losses.push(fwd.graph.value(fwd.loss).item() as f64);
        }
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        // E‖ε‖²/n = 1, χ²_n/n concentrates near 1 with n = 768
        assert!((mean - 1.0).abs() < 0.1, "mean loss {mean}");
    }

    #[test]
    fn oracle_prediction_gives_zero_loss() {
        // feed ε̂ = ε through the same loss arithmetic the trainer uses
        let mut g = Graph::<f32>::new();
        let mut rng = Rng::new(9);
        let eps = Tensor::randn(&[1, 3, 8, 8], &mut rng);
        let e1 = g.leaf(eps.clone(), false).unwrap();
        let e2 = g.leaf(eps, false).unwrap();
        let d = g.sub(e1, e2).unwrap();
        let sq = g.mul(d, d).unwrap();
        let loss = g.mean_all(sq).unwrap();
        assert_eq!(g.value(loss).item(), 0.0);
    }

    #[test]
    fn trainable_arm_parameters_receive_gradients() {
        let (cfg, mut params, item) = tiny_setup();
        // move the zero-initialized gates off zero so gradient reaches the
        // extractor pyramid (at init the gates soak up the gradient alone)
        let mut grng = Rng::new(99);
        for name in [
            "psi.attn32.gate",
            "psi.attn16.gate",
            "psi.attnmid.gate",
            // the zero-init output conv blocks all upstream gradient until
            // warmup moves it; emulate a warmed backbone here
            "backbone.out.conv.w",
        ] {
            let shape = params.get(name).unwrap().shape().to_vec();
            params.insert(name, Tensor::randn_std(&shape, 0.2, &mut grng));
        }
        let sched = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
        let mut rng = Rng::new(13);
        // no dropout so the condition arms participate
        let fwd =
            denoising_loss(&params, &cfg, &|n| !n.starts_with("backbone."), &item, &sched, &mut rng, 0.0)
                .unwrap();
        let grads = fwd.graph.backward(fwd.loss).unwrap();
        let by_name =
            crate::nn::grads_by_name(&params, &fwd.bound, &grads, &|n| !n.starts_with("backbone."))
                .unwrap();
        // the extractor pyramid must see nonzero gradient
        let g1 = &by_name["psi.c1.w"];
        assert!(g1.sq_norm() > 0.0, "psi.c1.w gradient is zero");
        let gc = &by_name["ctrl.fuse2.w"];
        assert!(gc.sq_norm() > 0.0, "ctrl.fuse2.w gradient is zero");
        assert!(!by_name.contains_key("backbone.stem.w"));
    }

    #[test]
    fn same_seed_same_loss() {
        let (cfg, params, item) = tiny_setup();
        let sched = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
        let run = || {
            let mut rng = Rng::new(21);
            let fwd = denoising_loss(&params, &cfg, &|_| false, &item, &sched, &mut rng, 0.1)
                .unwrap();
            fwd.graph.value(fwd.loss).item().to_bits()
        };
        assert_eq!(run(), run());
    }
}
