//! Network modules: parameter storage, layer composites, the denoiser
//! backbone and its two condition arms.

mod backbone;
mod control;
mod extractor;
mod layers;

pub use backbone::{backbone_forward, init_backbone, time_embedding, Slots};
pub use control::{control_residuals, init_control};
pub use extractor::{extract_tokens, init_extractor};
pub use layers::{channel_attention, posenc_2d, spatial_self_attention};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Gradients, Graph, NodeId, Tensor};
use std::collections::BTreeMap;

/// Attention flavor used inside a detail extractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum AttnKind {
    #[serde(rename = "channel")]
    Channel,
    #[serde(rename = "self")]
    SelfAttn,
}

impl std::fmt::Display for AttnKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AttnKind::Channel => write!(f, "ch"),
            AttnKind::SelfAttn => write!(f, "self"),
        }
    }
}

/// Static architecture description shared by backbone, extractor and
/// control branch.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NetConfig {
    pub image_size: usize,
    pub in_channels: usize,
    pub widths: [usize; 3],
    pub temb_dim: usize,
    pub token_dim: usize,
    pub attn_dim: usize,
    pub groups: usize,
    pub extractor_in: usize,
    pub extractor_widths: [usize; 3],
    pub control_in: usize,
    pub psi_attention: AttnKind,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            image_size: 64,
            in_channels: 3,
            widths: [24, 48, 96],
            temb_dim: 64,
            token_dim: 64,
            attn_dim: 32,
            groups: 8,
            extractor_in: 4,
            extractor_widths: [16, 32, 64],
            control_in: 3,
            psi_attention: AttnKind::Channel,
        }
    }
}

impl NetConfig {
    /// Token grid side; extractor features are fused at this resolution.
    pub fn token_side(&self) -> usize {
        self.image_size / 4
    }

    pub fn n_tokens(&self) -> usize {
        self.token_side() * self.token_side()
    }
}

/// Named parameter tensors in deterministic (sorted) order.
#[derive(Clone)]
pub struct ParamSet<T> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            map: BTreeMap::new(),
        }
    }

    pub fn from_map(map: BTreeMap<String, Tensor<T>>) -> Self {
        ParamSet { map }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.map.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.map
            .get(name)
            .ok_or_else(|| Error::invalid("params", format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.map.iter()
    }

    pub fn map(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.map
    }

    pub fn map_mut(&mut self) -> &mut BTreeMap<String, Tensor<T>> {
        &mut self.map
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.map.values().map(|t| t.numel()).sum()
    }

    /// Copy every entry under `prefix` from `other` (same names).
    pub fn adopt_prefix(&mut self, other: &ParamSet<T>, prefix: &str) {
        for (k, v) in other.map.range(prefix.to_string()..) {
            if !k.starts_with(prefix) {
                break;
            }
            self.map.insert(k.clone(), v.clone());
        }
    }

    /// He-normal conv kernel [O,C,KH,KW] plus zero bias.
    pub fn conv(&mut self, name: &str, o: usize, c: usize, k: usize, rng: &mut Rng) {
        let fan_in = (c * k * k) as f64;
        let std = (2.0 / fan_in).sqrt();
        self.insert(format!("{name}.w"), Tensor::randn_std(&[o, c, k, k], std, rng));
        self.insert(format!("{name}.b"), Tensor::zeros(&[o]));
    }

    /// Zero-initialized conv (fusion layers, final output conv).
    pub fn conv_zero(&mut self, name: &str, o: usize, c: usize, k: usize) {
        self.insert(format!("{name}.w"), Tensor::zeros(&[o, c, k, k]));
        self.insert(format!("{name}.b"), Tensor::zeros(&[o]));
    }

    /// Xavier-normal linear [In,Out] plus zero bias.
    pub fn linear(&mut self, name: &str, i: usize, o: usize, rng: &mut Rng) {
        let std = (1.0 / i as f64).sqrt();
        self.insert(format!("{name}.w"), Tensor::randn_std(&[i, o], std, rng));
        self.insert(format!("{name}.b"), Tensor::zeros(&[o]));
    }

    /// Group-norm affine pair.
    pub fn norm(&mut self, name: &str, c: usize) {
        self.insert(format!("{name}.g"), Tensor::full(&[c], T::one()));
        self.insert(format!("{name}.b"), Tensor::zeros(&[c]));
    }
}

/// Parameter nodes bound into one graph, looked up by name during forward.
pub struct Bound {
    ids: BTreeMap<String, NodeId>,
}

impl Bound {
    pub fn id(&self, name: &str) -> Result<NodeId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid("bound", format!("unbound parameter `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.ids.keys()
    }
}

/// Insert every parameter as a graph leaf; `trainable` decides which leaves
/// are differentiation targets.
pub fn bind_all<T: Scalar>(
    g: &mut Graph<T>,
    ps: &ParamSet<T>,
    trainable: &dyn Fn(&str) -> bool,
) -> Result<Bound> {
    let mut ids = BTreeMap::new();
    for (name, t) in ps.iter() {
        let id = g.leaf(t.clone(), trainable(name))?;
        ids.insert(name.clone(), id);
    }
    Ok(Bound { ids })
}

/// Collect gradients for the trainable subset by parameter name; parameters
/// the loss never touched get zeros.
pub fn grads_by_name<T: Scalar>(
    ps: &ParamSet<T>,
    bound: &Bound,
    grads: &Gradients<T>,
    trainable: &dyn Fn(&str) -> bool,
) -> Result<BTreeMap<String, Tensor<T>>> {
    let mut out = BTreeMap::new();
    for (name, t) in ps.iter() {
        if trainable(name) {
            let id = bound.id(name)?;
            out.insert(name.clone(), grads.get_or_zero(id, t.shape()));
        }
    }
    Ok(out)
}
