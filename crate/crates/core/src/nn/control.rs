//! Structure aligner: a trainable copy of the backbone encoder consuming
//! the spatial condition, with zero-initialized fusion convs producing
//! additive residuals for each backbone encoder stage. At initialization
//! every residual is exactly zero, so attaching a fresh aligner leaves the
//! backbone's behavior unchanged.

use super::layers::{conv, resblock};
use super::{Bound, NetConfig, ParamSet};
use crate::error::Result;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Graph, NodeId};

/// Initialize the control branch. Encoder weights whose shapes match the
/// backbone encoder start as copies of it; the condition stem (different
/// input channels) is freshly initialized and the fusion convs are zero.
pub fn init_control<T: Scalar>(
    ps: &mut ParamSet<T>,
    cfg: &NetConfig,
    backbone: &ParamSet<T>,
    rng: &mut Rng,
) {
    let [w0, w1, w2] = cfg.widths;
    ps.conv("ctrl.stem", w0, cfg.control_in, 3, rng);
    for (src, dst) in [
        ("backbone.down0", "ctrl.down0"),
        ("backbone.down1", "ctrl.down1"),
    ] {
        copy_conv(ps, backbone, src, dst);
    }
    for (src, dst) in [
        ("backbone.rb1", "ctrl.rb1"),
        ("backbone.rb2", "ctrl.rb2"),
        ("backbone.mid", "ctrl.mid"),
    ] {
        copy_resblock(ps, backbone, src, dst);
    }
    ps.conv_zero("ctrl.fuse0", w0, w0, 1);
    ps.conv_zero("ctrl.fuse1", w1, w1, 1);
    ps.conv_zero("ctrl.fuse2", w2, w2, 1);
    ps.conv_zero("ctrl.fuse_mid", w2, w2, 1);
}

fn copy_conv<T: Scalar>(ps: &mut ParamSet<T>, src_set: &ParamSet<T>, src: &str, dst: &str) {
    for suffix in [".w", ".b"] {
        let t = src_set
            .get(&format!("{src}{suffix}"))
            .expect("backbone initialized before control")
            .clone();
        ps.insert(format!("{dst}{suffix}"), t);
    }
}

fn copy_resblock<T: Scalar>(ps: &mut ParamSet<T>, src_set: &ParamSet<T>, src: &str, dst: &str) {
    for suffix in [".gn.g", ".gn.b", ".conv.w", ".conv.b"] {
        let t = src_set
            .get(&format!("{src}{suffix}"))
            .expect("backbone initialized before control")
            .clone();
        ps.insert(format!("{dst}{suffix}"), t);
    }
}

/// Residuals for the backbone encoder stages and the mid block, computed
/// once per condition (they do not depend on the noisy sample or the
/// timestep).
pub fn control_residuals<T: Scalar>(
    g: &mut Graph<T>,
    b: &Bound,
    cfg: &NetConfig,
    cond: NodeId,
) -> Result<[NodeId; 4]> {
    let s0 = conv(g, b, "ctrl.stem", cond, 1, 1)?;
    let d0 = conv(g, b, "ctrl.down0", s0, 2, 1)?;
    let h1 = resblock(g, b, "ctrl.rb1", d0, None, cfg)?;
    let d1 = conv(g, b, "ctrl.down1", h1, 2, 1)?;
    let h2 = resblock(g, b, "ctrl.rb2", d1, None, cfg)?;
    let hm = resblock(g, b, "ctrl.mid", h2, None, cfg)?;
    Ok([
        conv(g, b, "ctrl.fuse0", s0, 1, 0)?,
        conv(g, b, "ctrl.fuse1", h1, 1, 0)?,
        conv(g, b, "ctrl.fuse2", h2, 1, 0)?,
        conv(g, b, "ctrl.fuse_mid", hm, 1, 0)?,
    ])
}
