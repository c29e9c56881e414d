//! Linear beta schedule with cumulative-product alphas.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// β_t for t = 1..=T, ᾱ_t = Π(1−β_s) with ᾱ_0 := 1. Accumulation runs in
//  f64 before narrowing to the working scalar.
pub struct NoiseSchedule<T> {
    betas: Vec<T>,
    alpha_bar: Vec<T>,
    sqrt_ab: Vec<T>,
    sqrt_omab: Vec<T>,
}

impl<T: Scalar> NoiseSchedule<T> {
    pub fn linear(t_count: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if t_count == 0 {
            return Err(Error::invalid("make_schedule", "T must be >= 1"));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::invalid(
                "make_schedule",
                format!("need 0 < beta_min <= beta_max < 1, got {beta_min}..{beta_max}"),
            ));
        }
        let mut betas = Vec::with_capacity(t_count);
        let mut alpha_bar = Vec::with_capacity(t_count + 1);
        let mut sqrt_ab = Vec::with_capacity(t_count + 1);
        let mut sqrt_omab = Vec::with_capacity(t_count + 1);
        alpha_bar.push(T::one());
        sqrt_ab.push(T::one());
        sqrt_omab.push(T::zero());
        let mut prod = 1.0f64;
        for i in 0..t_count {
            let beta = if t_count == 1 {
                beta_min
            } else {
                beta_min + (beta_max - beta_min) * i as f64 / (t_count - 1) as f64
            };
            prod *= 1.0 - beta;
            betas.push(T::from_f64_c(beta));
            alpha_bar.push(T::from_f64_c(prod));
            sqrt_ab.push(T::from_f64_c(prod.sqrt()));
            sqrt_omab.push(T::from_f64_c((1.0 - prod).sqrt()));
        }
        Ok(NoiseSchedule {
            betas,
            alpha_bar,
            sqrt_ab,
            sqrt_omab,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> T {
        self.betas[t - 1]
    }

    /// ᾱ_t, valid for t in 0..=T with ᾱ_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> T {
        self.alpha_bar[t]
    }

    pub fn sqrt_alpha_bar(&self, t: usize) -> T {
        self.sqrt_ab[t]
    }

    pub fn sqrt_one_minus_alpha_bar(&self, t: usize) -> T {
        self.sqrt_omab[t]
    }
}
