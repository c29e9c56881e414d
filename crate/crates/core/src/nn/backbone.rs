//! Encoder-decoder denoiser over three resolutions with skip connections,
//! a time embedding, and two condition injection slots: detail tokens enter
//! through gated cross-attention at the two lowest resolutions, control
//! residuals add into the encoder stages.

use super::layers::{conv, dec_block, gated_cross_attention, group_norm, linear, resblock};
use super::{Bound, NetConfig, ParamSet};
use crate::error::Result;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Graph, NodeId, Tensor};

pub fn init_backbone<T: Scalar>(ps: &mut ParamSet<T>, cfg: &NetConfig, rng: &mut Rng) {
    let [w0, w1, w2] = cfg.widths;
    let td = cfg.temb_dim;
    ps.linear("backbone.temb.l1", td, td, rng);
    ps.conv("backbone.stem", w0, cfg.in_channels, 3, rng);
    ps.conv("backbone.down0", w1, w0, 3, rng);
    init_resblock(ps, "backbone.rb1", w1, Some(td), cfg, rng);
    ps.conv("backbone.down1", w2, w1, 3, rng);
    init_resblock(ps, "backbone.rb2", w2, Some(td), cfg, rng);
    init_resblock(ps, "backbone.mid", w2, Some(td), cfg, rng);
    ps.conv("backbone.up1", w1, w2, 1, rng);
    init_dec_block(ps, "backbone.dec1", 2 * w1, w1, cfg, rng);
    ps.conv("backbone.up0", w0, w1, 1, rng);
    init_dec_block(ps, "backbone.dec0", 2 * w0, w0, cfg, rng);
    ps.norm("backbone.out.gn", w0);
    // zero-init output conv: the untrained net predicts zero noise
    ps.conv_zero("backbone.out.conv", cfg.in_channels, w0, 3);
}

fn init_resblock<T: Scalar>(
    ps: &mut ParamSet<T>,
    name: &str,
    c: usize,
    temb: Option<usize>,
    _cfg: &NetConfig,
    rng: &mut Rng,
) {
    ps.norm(&format!("{name}.gn"), c);
    ps.conv(&format!("{name}.conv"), c, c, 3, rng);
    if let Some(td) = temb {
        ps.linear(&format!("{name}.temb"), td, c, rng);
    }
}

fn init_dec_block<T: Scalar>(
    ps: &mut ParamSet<T>,
    name: &str,
    cin: usize,
    cout: usize,
    cfg: &NetConfig,
    rng: &mut Rng,
) {
    ps.conv(&format!("{name}.conv"), cout, cin, 3, rng);
    ps.linear(&format!("{name}.temb"), cfg.temb_dim, cout, rng);
    ps.norm(&format!("{name}.gn"), cout);
}

/// Gated cross-attention injection sites. They couple detail tokens into
/// the backbone but are owned by the detail arm: trained with it and
/// carried by it at assembly time.
pub fn init_injection_sites<T: Scalar>(ps: &mut ParamSet<T>, cfg: &NetConfig, rng: &mut Rng) {
    let [_, w1, w2] = cfg.widths;
    for (site, c) in [("attn32", w1), ("attn16", w2), ("attnmid", w2)] {
        init_cross_attn(ps, &format!("psi.{site}"), c, cfg, rng);
    }
}

fn init_cross_attn<T: Scalar>(
    ps: &mut ParamSet<T>,
    name: &str,
    c: usize,
    cfg: &NetConfig,
    rng: &mut Rng,
) {
    let d = cfg.attn_dim;
    ps.insert(
        format!("{name}.wq"),
        Tensor::randn_std(&[c, d], (1.0 / c as f64).sqrt(), rng),
    );
    ps.insert(
        format!("{name}.wk"),
        Tensor::randn_std(&[cfg.token_dim, d], (1.0 / cfg.token_dim as f64).sqrt(), rng),
    );
    ps.insert(
        format!("{name}.wv"),
        Tensor::randn_std(&[cfg.token_dim, d], (1.0 / cfg.token_dim as f64).sqrt(), rng),
    );
    ps.insert(
        format!("{name}.wo"),
        Tensor::randn_std(&[d, c], (1.0 / d as f64).sqrt(), rng),
    );
    // small gates: near no-op at attach, with headroom to open quickly
    ps.insert(format!("{name}.gate"), Tensor::full(&[c], T::from_f64_c(0.05)));
}

/// Sinusoidal embedding of the (integer) diffusion timestep.
pub fn time_embedding<T: Scalar>(t: usize, dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let mut v = vec![T::zero(); dim];
    for i in 0..half {
        let freq = (-(10_000.0_f64.ln()) * i as f64 / (half.max(2) - 1) as f64).exp();
        let arg = t as f64 * freq;
        v[i] = T::from_f64_c(arg.sin());
        v[half + i] = T::from_f64_c(arg.cos());
    }
    Tensor::new(vec![1, dim], v).expect("temb shape")
}

/// Condition slots for one forward pass.
#[derive(Clone, Copy, Default)]
pub struct Slots {
    /// Detail token sequence [L, token_dim], already on the graph.
    pub tokens: Option<NodeId>,
    /// Control residuals: three encoder stages plus the mid block.
    pub residuals: Option<[NodeId; 4]>,
}

/// Predict noise for x_t at step t. Both slots empty is the valid
/// unconditional form.
pub fn backbone_forward<T: Scalar>(
    g: &mut Graph<T>,
    b: &Bound,
    cfg: &NetConfig,
    x_t: NodeId,
    t: usize,
    slots: Slots,
) -> Result<NodeId> {
    let temb_in = g.leaf(time_embedding::<T>(t, cfg.temb_dim), false)?;
    let temb = linear(g, b, "backbone.temb.l1", temb_in)?;
    let temb = g.silu(temb)?;

    let mut s0 = conv(g, b, "backbone.stem", x_t, 1, 1)?;
    if let Some(r) = slots.residuals {
        s0 = g.add(s0, r[0])?;
    }
    let d0 = conv(g, b, "backbone.down0", s0, 2, 1)?;
    let mut h1 = resblock(g, b, "backbone.rb1", d0, Some(temb), cfg)?;
    if let Some(r) = slots.residuals {
        h1 = g.add(h1, r[1])?;
    }
    if let Some(tok) = slots.tokens {
        h1 = gated_cross_attention(g, b, "psi.attn32", h1, tok)?;
    }
    let d1 = conv(g, b, "backbone.down1", h1, 2, 1)?;
    let mut h2 = resblock(g, b, "backbone.rb2", d1, Some(temb), cfg)?;
    if let Some(r) = slots.residuals {
        h2 = g.add(h2, r[2])?;
    }
    if let Some(tok) = slots.tokens {
        h2 = gated_cross_attention(g, b, "psi.attn16", h2, tok)?;
    }
    let mut m = resblock(g, b, "backbone.mid", h2, Some(temb), cfg)?;
    if let Some(r) = slots.residuals {
        m = g.add(m, r[3])?;
    }
    if let Some(tok) = slots.tokens {
        m = gated_cross_attention(g, b, "psi.attnmid", m, tok)?;
    }

    let u1 = g.upsample2(m)?;
    let u1 = conv(g, b, "backbone.up1", u1, 1, 0)?;
    let dec1 = dec_block(g, b, "backbone.dec1", u1, h1, temb, cfg)?;
    let u0 = g.upsample2(dec1)?;
    let u0 = conv(g, b, "backbone.up0", u0, 1, 0)?;
    let dec0 = dec_block(g, b, "backbone.dec0", u0, s0, temb, cfg)?;

    let out = group_norm(g, b, "backbone.out.gn", dec0, cfg.groups)?;
    let out = g.silu(out)?;
    conv(g, b, "backbone.out.conv", out, 1, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::bind_all;

    #[test]
    fn untrained_backbone_predicts_zero_and_preserves_shape() {
        let cfg = NetConfig {
            image_size: 16,
            ..NetConfig::default()
        };
        let mut rng = Rng::new(77);
        let mut ps = ParamSet::<f32>::new();
        init_backbone(&mut ps, &cfg, &mut rng);
        let mut g = Graph::new();
        let b = bind_all(&mut g, &ps, &|_| false).unwrap();
        let x = g
            .leaf(Tensor::randn(&[1, 3, 16, 16], &mut rng), false)
            .unwrap();
        let y = backbone_forward(&mut g, &b, &cfg, x, 500, Slots::default()).unwrap();
        assert_eq!(g.shape(y), &[1, 3, 16, 16]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn time_embedding_distinguishes_steps() {
        let a = time_embedding::<f32>(1, 64);
        let b = time_embedding::<f32>(999, 64);
        assert!(a.max_abs_diff(&b) > 0.5);
    }
}
