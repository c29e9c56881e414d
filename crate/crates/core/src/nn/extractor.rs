//! Detail extractor: a small conv pyramid over each condition image,
//! features from the three depths fused at the token grid and concatenated
//! along the feature axis, attention over the concatenation, projection to
//! embedding tokens. A batch of condition views yields one token sequence
//! with the per-view tokens concatenated.

use super::layers::{channel_attention, conv, spatial_self_attention};
use super::{AttnKind, Bound, NetConfig, ParamSet};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Graph, NodeId, Tensor};

pub fn init_extractor<T: Scalar>(ps: &mut ParamSet<T>, cfg: &NetConfig, rng: &mut Rng) {
    super::backbone::init_injection_sites(ps, cfg, rng);
    let [e0, e1, e2] = cfg.extractor_widths;
    ps.conv("psi.c1", e0, cfg.extractor_in, 3, rng);
    ps.conv("psi.c2", e1, e0, 3, rng);
    ps.conv("psi.c3", e2, e1, 3, rng);
    // align the shallow and deep depths to the token grid
    ps.conv("psi.p1", e1, e0, 3, rng);
    let fused = e1 + e1 + e2;
    match cfg.psi_attention {
        AttnKind::Channel => {
            ps.linear("psi.se.fc1", fused, fused / 4, rng);
            ps.linear("psi.se.fc2", fused / 4, fused, rng);
        }
        AttnKind::SelfAttn => {
            let std = (1.0 / fused as f64).sqrt();
            ps.insert("psi.sa.wq", Tensor::randn_std(&[fused, fused], std, rng));
            ps.insert("psi.sa.wk", Tensor::randn_std(&[fused, fused], std, rng));
            ps.insert("psi.sa.wv", Tensor::randn_std(&[fused, fused], std, rng));
        }
    }
    ps.conv("psi.proj", cfg.token_dim, fused, 1, rng);
    // token positions start as the sinusoidal table (trainable from there)
    // so positional key/query matching works from the first step
    let side = cfg.token_side();
    ps.insert(
        "psi.pos",
        super::layers::posenc_2d::<T>(side, side, cfg.token_dim),
    );
}

/// Tokens for one batch of condition views; output is [views·L, token_dim].
pub fn extract_tokens<T: Scalar>(
    g: &mut Graph<T>,
    b: &Bound,
    cfg: &NetConfig,
    views: &[NodeId],
) -> Result<NodeId> {
    if views.is_empty() {
        return Err(Error::invalid("extract_tokens", "at least one condition view required"));
    }
    let mut all: Option<NodeId> = None;
    for &view in views {
        let s = g.shape(view);
        if s.len() != 4 || s[1] != cfg.extractor_in || s[2] != cfg.image_size {
            return Err(Error::shape(
                "extract_tokens",
                format!("[1,{},{},{}]", cfg.extractor_in, cfg.image_size, cfg.image_size),
                format!("{:?}", s),
            ));
        }
        let tok = extract_one(g, b, cfg, view)?;
        all = Some(match all {
            None => tok,
            Some(prev) => g.concat_rows(prev, tok)?,
        });
    }
    Ok(all.unwrap())
}

fn extract_one<T: Scalar>(
    g: &mut Graph<T>,
    b: &Bound,
    cfg: &NetConfig,
    view: NodeId,
) -> Result<NodeId> {
    let c1 = conv(g, b, "psi.c1", view, 2, 1)?;
    let c1 = g.silu(c1)?;
    let c2 = conv(g, b, "psi.c2", c1, 2, 1)?;
    let c2 = g.silu(c2)?;
    let c3 = conv(g, b, "psi.c3", c2, 2, 1)?;
    let c3 = g.silu(c3)?;
    // bring every depth to the token grid and concat along features
    let p1 = conv(g, b, "psi.p1", c1, 2, 1)?;
    let p1 = g.silu(p1)?;
    let p3 = g.upsample2(c3)?;
    let f = g.concat_channels(p1, c2)?;
    let f = g.concat_channels(f, p3)?;
    let f = match cfg.psi_attention {
        AttnKind::Channel => channel_attention(g, b, "psi.se", f)?,
        AttnKind::SelfAttn => {
            let a = spatial_self_attention(g, b, "psi.sa", f)?;
            g.add(f, a)?
        }
    };
    let side = cfg.token_side();
    let proj = conv(g, b, "psi.proj", f, 1, 0)?;
    let rows = g.nchw_to_rows(proj)?;
    let _ = side;
    g.add(rows, b.id("psi.pos")?)
}
