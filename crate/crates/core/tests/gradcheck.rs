//! Central finite-difference checks for every differentiable layer type.
//!
//! The oracle rebuilds the forward pass from scratch for each perturbed
//! parameter element; it never touches the backward implementation it
//! verifies. Checks run at f64 where the h=1e-3 stencil leaves plenty of
//! headroom below the 1e-3 relative-error bar.

use uvforge_core::nn::{
    self, bind_all, channel_attention, grads_by_name, spatial_self_attention, AttnKind, Bound,
    NetConfig, ParamSet, Slots,
};
use uvforge_core::rng::Rng;
use uvforge_core::tensor::{Graph, NodeId, Tensor};

const H: f64 = 1e-3;
const TOL: f64 = 1e-3;
const SEEDS: u64 = 20;

/// Builds the loss for a given parameter set; called once for the analytic
/// path and 2·P times for the stencil.
type LossFn = dyn Fn(&mut Graph<f64>, &Bound) -> NodeId;

fn forward_loss(ps: &ParamSet<f64>, build: &LossFn) -> f64 {
    let mut g = Graph::new();
    let b = bind_all(&mut g, ps, &|_| false).unwrap();
    let loss = build(&mut g, &b);
    g.value(loss).item()
}

fn check_case(name: &str, ps: &ParamSet<f64>, build: &LossFn) {
    let mut g = Graph::new();
    let b = bind_all(&mut g, ps, &|_| true).unwrap();
    let loss = build(&mut g, &b);
    let grads = g.backward(loss).unwrap();
    let analytic = grads_by_name(ps, &b, &grads, &|_| true).unwrap();

    let mut worst = 0.0_f64;
    for (pname, tensor) in ps.iter() {
        let ga = &analytic[pname];
        for i in 0..tensor.numel() {
            let orig = tensor.data()[i];
            let mut plus = ps.clone();
            plus.map_mut().get_mut(pname).unwrap().data_mut()[i] = orig + H;
            let lp = forward_loss(&plus, build);
            let mut minus = ps.clone();
            minus.map_mut().get_mut(pname).unwrap().data_mut()[i] = orig - H;
            let lm = forward_loss(&minus, build);
            let numeric = (lp - lm) / (2.0 * H);
            let a = ga.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            if rel > worst {
                worst = rel;
            }
            assert!(
                rel < TOL,
                "{name}: param `{pname}`[{i}] analytic {a} vs numeric {numeric} (rel {rel:.2e})"
            );
        }
    }
    // keep the worst case visible when run with --nocapture
    println!("gradcheck {name}: max rel err {worst:.3e}");
}

fn mse_loss(g: &mut Graph<f64>, pred: NodeId, target: NodeId) -> NodeId {
    let d = g.sub(pred, target).unwrap();
    let sq = g.mul(d, d).unwrap();
    g.mean_all(sq).unwrap()
}

#[test]
fn conv2d_gradients() {
    for seed in 0..SEEDS {
        let mut rng = Rng::new(100 + seed);
        let mut ps = ParamSet::<f64>::new();
        ps.conv("conv", 3, 2, 3, &mut rng);
        // conv() zero-initializes biases; give them mass for the check
        *ps.map_mut().get_mut("conv.b").unwrap() = Tensor::randn(&[3], &mut rng);
        let x = Tensor::randn(&[2, 2, 5, 5], &mut rng);
        let t = Tensor::randn(&[2, 3, 5, 5], &mut rng);
        for &(stride, pad, oh) in &[(1usize, 1usize, 5usize), (2, 1, 3)] {
            let t = if stride == 1 {
                t.clone()
            } else {
                Tensor::randn(&[2, 3, oh, oh], &mut rng)
            };
            let x = x.clone();
            check_case("conv2d", &ps, &move |g, b| {
                let xn = g.leaf(x.clone(), false).unwrap();
                let tn = g.leaf(t.clone(), false).unwrap();
                let y = g
                    .conv2d(
                        xn,
                        b.id("conv.w").unwrap(),
                        Some(b.id("conv.b").unwrap()),
                        stride,
                        pad,
                    )
                    .unwrap();
                mse_loss(g, y, tn)
            });
        }
    }
}

#[test]
fn linear_and_activation_gradients() {
    for seed in 0..SEEDS {
        let mut rng = Rng::new(200 + seed);
        let mut ps = ParamSet::<f64>::new();
        ps.linear("l1", 4, 6, &mut rng);
        ps.linear("l2", 6, 3, &mut rng);
        let x = Tensor::randn(&[5, 4], &mut rng);
        let t = Tensor::randn(&[5, 3], &mut rng);
        check_case("linear+silu+sigmoid", &ps, &move |g, b| {
            let xn = g.leaf(x.clone(), false).unwrap();
            let tn = g.leaf(t.clone(), false).unwrap();
            let h = g.matmul(xn, b.id("l1.w").unwrap()).unwrap();
            let h = g.add_bias_row(h, b.id("l1.b").unwrap()).unwrap();
            let h = g.silu(h).unwrap();
            let h = g.matmul(h, b.id("l2.w").unwrap()).unwrap();
            let h = g.add_bias_row(h, b.id("l2.b").unwrap()).unwrap();
            let h = g.sigmoid(h).unwrap();
            mse_loss(g, h, tn)
        });
    }
}

#[test]
fn relu_gradients_away_from_kink() {
    for seed in 0..SEEDS {
        let mut rng = Rng::new(300 + seed);
        let mut ps = ParamSet::<f64>::new();
        ps.insert("w", Tensor::randn(&[6], &mut rng));
        // keep pre-activations away from the kink so the stencil is valid
        let shift = ps
            .get("w")
            .unwrap()
            .map(|v| if v >= 0.0 { v + 0.05 } else { v - 0.05 });
        *ps.map_mut().get_mut("w").unwrap() = shift;
        check_case("relu", &ps, &|g, b| {
            let h = g.relu(b.id("w").unwrap()).unwrap();
            let sq = g.mul(h, h).unwrap();
            g.mean_all(sq).unwrap()
        });
    }
}

#[test]
fn softmax_gradients() {
    for seed in 0..SEEDS {
        let mut rng = Rng::new(400 + seed);
        let mut ps = ParamSet::<f64>::new();
        ps.insert("x", Tensor::randn(&[4, 5], &mut rng));
        let t = Tensor::randn(&[4, 5], &mut rng);
        check_case("softmax", &ps, &move |g, b| {
            let y = g.softmax_last(b.id("x").unwrap()).unwrap();
            let tn = g.leaf(t.clone(), false).unwrap();
            mse_loss(g, y, tn)
        });
    }
}

#[test]
fn group_norm_gradients() {
    for seed in 0..SEEDS {
        let mut rng = Rng::new(500 + seed);
        let mut ps = ParamSet::<f64>::new();
        ps.norm("gn", 4);
        ps.insert("x", Tensor::randn(&[2, 4, 3, 3], &mut rng));
        let t = Tensor::randn(&[2, 4, 3, 3], &mut rng);
        check_case("group_norm", &ps, &move |g, b| {
            let y = nn_group_norm(g, b, 2);
            let tn = g.leaf(t.clone(), false).unwrap();
            mse_loss(g, y, tn)
        });
    }
}

// group_norm is private to nn::layers; rebuild the same composite here
fn nn_group_norm(g: &mut Graph<f64>, b: &Bound, groups: usize) -> NodeId {
    let x = b.id("x").unwrap();
    let shape = g.shape(x).to_vec();
    let mu = g.mean_groups(x, groups).unwrap();
    let mu_b = g.broadcast_groups(mu, &shape).unwrap();
    let centered = g.sub(x, mu_b).unwrap();
    let sq = g.mul(centered, centered).unwrap();
    let var = g.mean_groups(sq, groups).unwrap();
    let inv = g.rsqrt_eps(var, 1e-5).unwrap();
    let inv_b = g.broadcast_groups(inv, &shape).unwrap();
    let normed = g.mul(centered, inv_b).unwrap();
    let scaled = g.scale_c(normed, b.id("gn.g").unwrap()).unwrap();
    g.bias_c(scaled, b.id("gn.b").unwrap()).unwrap()
}

#[test]
fn channel_attention_gradients() {
    for seed in 0..SEEDS {
        let mut rng = Rng::new(600 + seed);
        let mut ps = ParamSet::<f64>::new();
        ps.linear("se.fc1", 4, 2, &mut rng);
        ps.linear("se.fc2", 2, 4, &mut rng);
        ps.insert("x", Tensor::randn(&[1, 4, 3, 3], &mut rng));
        let t = Tensor::randn(&[1, 4, 3, 3], &mut rng);
        check_case("channel_attention", &ps, &move |g, b| {
            let y = channel_attention(g, b, "se", b.id("x").unwrap()).unwrap();
            let tn = g.leaf(t.clone(), false).unwrap();
            mse_loss(g, y, tn)
        });
    }
}

#[test]
fn self_attention_gradients() {
    for seed in 0..SEEDS {
        let mut rng = Rng::new(700 + seed);
        let mut ps = ParamSet::<f64>::new();
        for nm in ["sa.wq", "sa.wk", "sa.wv"] {
            ps.insert(nm, Tensor::randn_std(&[4, 4], 0.5, &mut rng));
        }
        ps.insert("x", Tensor::randn(&[1, 4, 2, 3], &mut rng));
        let t = Tensor::randn(&[1, 4, 2, 3], &mut rng);
        check_case("self_attention", &ps, &move |g, b| {
            let y = spatial_self_attention(g, b, "sa", b.id("x").unwrap()).unwrap();
            let tn = g.leaf(t.clone(), false).unwrap();
            mse_loss(g, y, tn)
        });
    }
}

#[test]
fn upsample_and_pool_gradients() {
    for seed in 0..SEEDS {
        let mut rng = Rng::new(800 + seed);
        let mut ps = ParamSet::<f64>::new();
        ps.insert("x", Tensor::randn(&[1, 3, 3, 3], &mut rng));
        let t = Tensor::randn(&[1, 3, 6, 6], &mut rng);
        check_case("upsample2", &ps, &move |g, b| {
            let y = g.upsample2(b.id("x").unwrap()).unwrap();
            let tn = g.leaf(t.clone(), false).unwrap();
            mse_loss(g, y, tn)
        });
        check_case("global_avg_pool", &ps, &|g, b| {
            let y = g.global_avg_pool(b.id("x").unwrap()).unwrap();
            let sq = g.mul(y, y).unwrap();
            g.mean_all(sq).unwrap()
        });
    }
}

#[test]
fn concat_and_broadcast_gradients() {
    for seed in 0..SEEDS {
        let mut rng = Rng::new(900 + seed);
        let mut ps = ParamSet::<f64>::new();
        ps.insert("a", Tensor::randn(&[1, 2, 3, 3], &mut rng));
        ps.insert("b", Tensor::randn(&[1, 3, 3, 3], &mut rng));
        ps.insert("s", Tensor::randn(&[1, 5], &mut rng));
        check_case("concat+mul_nc+add_nc", &ps, &|g, b| {
            let cat = g.concat_channels(b.id("a").unwrap(), b.id("b").unwrap()).unwrap();
            let scaled = g.mul_nc(cat, b.id("s").unwrap()).unwrap();
            let shifted = g.add_nc(scaled, b.id("s").unwrap()).unwrap();
            let sq = g.mul(shifted, shifted).unwrap();
            g.mean_all(sq).unwrap()
        });
    }
}

/// Full micro-net: a tiny backbone with both condition slots filled, the
/// composite case the per-layer checks build toward.
#[test]
fn composite_net_gradients() {
    let cfg = NetConfig {
        image_size: 8,
        in_channels: 2,
        widths: [4, 4, 8],
        temb_dim: 8,
        token_dim: 6,
        attn_dim: 4,
        groups: 2,
        extractor_in: 2,
        extractor_widths: [4, 4, 4],
        control_in: 2,
        psi_attention: AttnKind::Channel,
    };
    for seed in 0..3 {
        let mut rng = Rng::new(1000 + seed);
        let mut ps = ParamSet::<f64>::new();
        nn::init_backbone(&mut ps, &cfg, &mut rng);
        nn::init_extractor(&mut ps, &cfg, &mut rng);
        let backbone = ps.clone();
        nn::init_control(&mut ps, &cfg, &backbone, &mut rng);
        // zero-initialized pieces (gates, fusion convs, out conv) get random
        // mass so their gradients are exercised at a generic point
        for name in [
            "backbone.out.conv.w",
            "psi.attn32.gate",
            "psi.attn16.gate",
            "psi.attnmid.gate",
            "ctrl.fuse0.w",
            "ctrl.fuse1.w",
            "ctrl.fuse2.w",
            "ctrl.fuse_mid.w",
        ] {
            let shape = ps.get(name).unwrap().shape().to_vec();
            ps.insert(name, Tensor::randn_std(&shape, 0.3, &mut rng));
        }
        let x = Tensor::randn(&[1, 2, 8, 8], &mut rng);
        let view = Tensor::randn(&[1, 2, 8, 8], &mut rng);
        let cond = Tensor::randn(&[1, 2, 8, 8], &mut rng);
        let eps = Tensor::randn(&[1, 2, 8, 8], &mut rng);
        check_case("composite_net", &ps, &move |g, b| {
            let xn = g.leaf(x.clone(), false).unwrap();
            let vn = g.leaf(view.clone(), false).unwrap();
            let cn = g.leaf(cond.clone(), false).unwrap();
            let en = g.leaf(eps.clone(), false).unwrap();
            let tokens = nn::extract_tokens(g, b, &cfg, &[vn]).unwrap();
            let residuals = nn::control_residuals(g, b, &cfg, cn).unwrap();
            let pred = nn::backbone_forward(
                g,
                b,
                &cfg,
                xn,
                17,
                Slots {
                    tokens: Some(tokens),
                    residuals: Some(residuals),
                },
            )
            .unwrap();
            mse_loss(g, pred, en)
        });
    }
}
