//! The conditional denoiser bundle: backbone + detail extractor + control
//! branch parameters with the shared forward wiring used by both training
//! and inference.

use crate::error::{Error, Result};
use crate::img::Raster;
use crate::nn::{
    backbone_forward, bind_all, control_residuals, extract_tokens, Bound, NetConfig, ParamSet,
    Slots,
};
use crate::scalar::Scalar;
use crate::tensor::{Graph, NodeId, Tensor};

/// [H,W,C] raster → [1,C,H,W] tensor.
pub fn raster_to_nchw<T: Scalar>(r: &Raster<T>) -> Tensor<T> {
    let (h, w, c) = (r.height(), r.width(), r.channels());
    let mut data = vec![T::zero(); h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                data[(ch * h + y) * w + x] = r.get(y, x, ch);
            }
        }
    }
    Tensor::new(vec![1, c, h, w], data).expect("raster shape")
}

/// [1,C,H,W] tensor → [H,W,C] raster.
pub fn tensor_to_raster<T: Scalar>(t: &Tensor<T>) -> Result<Raster<T>> {
    let s = t.shape();
    if s.len() != 4 || s[0] != 1 {
        return Err(Error::shape(
            "tensor_to_raster",
            "[1,C,H,W]".to_string(),
            format!("{:?}", s),
        ));
    }
    let (c, h, w) = (s[1], s[2], s[3]);
    let mut out = Raster::zeros(h, w, c);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out.set(y, x, ch, t.data()[(ch * h + y) * w + x]);
            }
        }
    }
    Ok(out)
}

/// Architecture plus parameters of one denoiser (with both condition arms).
pub struct CondModel<T> {
    pub cfg: NetConfig,
    pub params: ParamSet<T>,
}

/// Condition tensors precomputed once per request: tokens from the detail
/// views, per-stage residuals from the control image. Neither depends on
/// the noisy sample or the timestep.
pub struct EncodedConds<T> {
    pub tokens: Option<Tensor<T>>,
    pub residuals: Option<[Tensor<T>; 4]>,
}

impl<T: Scalar> CondModel<T> {
    /// Run the condition arms once, detached from any training graph.
    pub fn encode_conditions(
        &self,
        views: &[Raster<T>],
        control: Option<&Raster<T>>,
    ) -> Result<EncodedConds<T>> {
        let mut g = Graph::new();
        let bound = bind_all(&mut g, &self.params, &|_| false)?;
        let tokens = if views.is_empty() {
            None
        } else {
            let nodes: Vec<NodeId> = views
                .iter()
                .map(|v| g.leaf(raster_to_nchw(v), false))
                .collect::<Result<_>>()?;
            let tok = extract_tokens(&mut g, &bound, &self.cfg, &nodes)?;
            Some(g.value(tok).clone())
        };
        let residuals = match control {
            None => None,
            Some(c) => {
                let cn = g.leaf(raster_to_nchw(c), false)?;
                let rs = control_residuals(&mut g, &bound, &self.cfg, cn)?;
                Some([
                    g.value(rs[0]).clone(),
                    g.value(rs[1]).clone(),
                    g.value(rs[2]).clone(),
                    g.value(rs[3]).clone(),
                ])
            }
        };
        Ok(EncodedConds { tokens, residuals })
    }

    /// ε̂ for x_t at step t under the given (possibly empty) conditions.
    pub fn predict_noise(
        &self,
        x_t: &Tensor<T>,
        t: usize,
        conds: Option<&EncodedConds<T>>,
    ) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let bound = bind_all(&mut g, &self.params, &|_| false)?;
        let x = g.leaf(x_t.clone(), false)?;
        let slots = match conds {
            None => Slots::default(),
            Some(ec) => {
                let tokens = match &ec.tokens {
                    None => None,
                    Some(tk) => Some(g.leaf(tk.clone(), false)?),
                };
                let residuals = match &ec.residuals {
                    None => None,
                    Some([r0, r1, r2, r3]) => Some([
                        g.leaf(r0.clone(), false)?,
                        g.leaf(r1.clone(), false)?,
                        g.leaf(r2.clone(), false)?,
                        g.leaf(r3.clone(), false)?,
                    ]),
                };
                Slots { tokens, residuals }
            }
        };
        let out = backbone_forward(&mut g, &bound, &self.cfg, x, t, slots)?;
        Ok(g.value(out).clone())
    }
}

/// In-graph forward used by training: condition arms plus backbone in one
/// tape so gradients reach every trainable module.
pub struct TrainForwardNodes {
    pub prediction: NodeId,
}

#[allow(clippy::too_many_arguments)]
pub fn training_forward<T: Scalar>(
    g: &mut Graph<T>,
    bound: &Bound,
    cfg: &NetConfig,
    x_t: NodeId,
    t: usize,
    view_nodes: &[NodeId],
    control_node: Option<NodeId>,
) -> Result<TrainForwardNodes> {
    let tokens = if view_nodes.is_empty() {
        None
    } else {
        Some(extract_tokens(g, bound, cfg, view_nodes)?)
    };
    let residuals = match control_node {
        None => None,
        Some(c) => Some(control_residuals(g, bound, cfg, c)?),
    };
    let prediction = backbone_forward(g, bound, cfg, x_t, t, Slots { tokens, residuals })?;
    Ok(TrainForwardNodes { prediction })
}
