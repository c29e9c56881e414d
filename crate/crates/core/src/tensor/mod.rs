//! Dense row-major tensors and the reverse-mode graph built on them.

mod adam;
mod checkpoint;
mod gemm;
mod graph;

pub use adam::{AdamParams, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CKPT_VERSION};
pub use graph::{Gradients, Graph, NodeId};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Dense tensor: extents plus row-major data.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor::new",
                format!("{} elements for shape {:?}", n, shape),
                format!("{}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn from_f64_slice(shape: &[usize], vals: &[f64]) -> Result<Self> {
        let data = vals.iter().map(|&v| T::from_f64_c(v)).collect();
        Tensor::new(shape.to_vec(), data)
    }

    /// Standard normal entries.
    pub fn randn(shape: &[usize], rng: &mut Rng) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64_c(rng.normal())).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Normal entries with the given standard deviation.
    pub fn randn_std(shape: &[usize], std: f64, rng: &mut Rng) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64_c(rng.normal() * std))
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Single value of a one-element tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(
                "tensor::reshape",
                format!("{:?} ({} elements)", self.shape, self.data.len()),
                format!("{:?} ({} elements)", shape, n),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Fixed-order (sequential row-major) sum; the documented reduction order.
    pub fn sum(&self) -> T {
        let mut acc = T::zero();
        for &v in &self.data {
            acc += v;
        }
        acc
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_f64_c(self.numel() as f64)
    }

    /// Squared L2 norm, summed in fixed order.
    pub fn sq_norm(&self) -> T {
        let mut acc = T::zero();
        for &v in &self.data {
            acc += v * v;
        }
        acc
    }

    /// Elementwise check against another tensor, max absolute difference.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        debug_assert_eq!(self.shape, other.shape);
        let mut m = T::zero();
        for (&a, &b) in self.data.iter().zip(&other.data) {
            let d = (a - b).abs();
            if d > m {
                m = d;
            }
        }
        m
    }
}
