//! Adam optimizer with bias-corrected moment estimates.

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first/second moments plus the shared step counter.
pub struct AdamState<T> {
    pub hyper: AdamParams,
    step: u64,
    moments: BTreeMap<String, (Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(hyper: AdamParams) -> Result<Self> {
        if hyper.lr <= 0.0 {
            return Err(Error::invalid("adam", format!("lr must be > 0, got {}", hyper.lr)));
        }
        Ok(AdamState {
            hyper,
            step: 0,
            moments: BTreeMap::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over a set of named parameters and their gradients.
    /// Parameters without a gradient entry are left untouched.
    pub fn step(
        &mut self,
        params: &mut BTreeMap<String, Tensor<T>>,
        grads: &BTreeMap<String, Tensor<T>>,
    ) -> Result<()> {
        for (name, g) in grads {
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    op: "adam_step",
                    context: format!("gradient for `{name}`"),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64_c(self.hyper.beta1);
        let b2 = T::from_f64_c(self.hyper.beta2);
        let lr = T::from_f64_c(self.hyper.lr);
        let eps = T::from_f64_c(self.hyper.eps);
        let c1 = T::one() - T::from_f64_c(self.hyper.beta1.powi(t));
        let c2 = T::one() - T::from_f64_c(self.hyper.beta2.powi(t));

        for (name, g) in grads {
            let p = params.get_mut(name).ok_or_else(|| {
                Error::invalid("adam_step", format!("gradient for unknown parameter `{name}`"))
            })?;
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("{:?} for `{name}`", p.shape()),
                    format!("{:?}", g.shape()),
                ));
            }
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            for ((pv, &gv), (mv, vv)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv = *pv - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
