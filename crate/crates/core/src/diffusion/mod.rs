//! Denoising diffusion machinery: schedule, forward process, the
//! conditional denoiser with pluggable condition arms, training losses,
//! classifier-free guidance and DDIM sampling.

mod loss;
mod model;
pub mod sampler;
mod schedule;

pub use loss::{denoising_loss, LossBatchItem, TrainForward, CONDITION_DROPOUT_PROB};
pub use model::{raster_to_nchw, tensor_to_raster, CondModel, EncodedConds};
pub use sampler::{cfg_combine, ddim_sample, ddim_timesteps};
pub use schedule::NoiseSchedule;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε
pub fn forward_diffuse<T: Scalar>(
    x0: &Tensor<T>,
    t: usize,
    eps: &Tensor<T>,
    schedule: &NoiseSchedule<T>,
) -> Result<Tensor<T>> {
    if x0.shape() != eps.shape() {
        return Err(Error::shape(
            "forward_diffuse",
            format!("{:?}", x0.shape()),
            format!("{:?}", eps.shape()),
        ));
    }
    if t == 0 || t > schedule.steps() {
        return Err(Error::invalid(
            "forward_diffuse",
            format!("t={t} outside 1..={}", schedule.steps()),
        ));
    }
    let sa = schedule.sqrt_alpha_bar(t);
    let sb = schedule.sqrt_one_minus_alpha_bar(t);
    let data = x0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&x, &e)| sa * x + sb * e)
        .collect();
    Tensor::new(x0.shape().to_vec(), data)
}

/// Map a [0,1] raster channelwise into the [-1,1] diffusion domain.
pub fn to_diffusion_domain<T: Scalar>(v: T) -> T {
    v + v - T::one()
}

/// Inverse of [`to_diffusion_domain`], clamped to [0,1].
pub fn from_diffusion_domain<T: Scalar>(v: T) -> T {
    let half = T::from_f64_c(0.5);
    (v * half + half).max(T::zero()).min(T::one())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn forward_diffuse_zero_noise_scales_by_sqrt_alpha_bar() {
        let sched = NoiseSchedule::<f32>::linear(1000, 1e-4, 0.02).unwrap();
        let x0 = Tensor::full(&[4], 1.0);
        let eps = Tensor::zeros(&[4]);
        let xt = forward_diffuse(&x0, 600, &eps, &sched).unwrap();
        for &v in xt.data() {
            assert_eq!(v, sched.sqrt_alpha_bar(600));
        }
    }

    #[test]
    fn forward_diffuse_at_t1_is_close_to_x0() {
        let sched = NoiseSchedule::<f32>::linear(1000, 1e-4, 0.02).unwrap();
        let mut rng = Rng::new(3);
        let x0 = Tensor::randn(&[16], &mut rng);
        let eps = Tensor::randn(&[16], &mut rng);
        let xt = forward_diffuse(&x0, 1, &eps, &sched).unwrap();
        let beta1: f32 = 1e-4;
        for (a, b) in xt.data().iter().zip(x0.data()) {
            // |x_1 − x0| ≤ |x0|·(1−√(1−β)) + √β·|ε| ≲ √β·(|x0|+|ε|)
            assert!((a - b).abs() <= beta1.sqrt() * 4.0);
        }
    }

    #[test]
    fn forward_diffuse_rejects_out_of_range_t() {
        let sched = NoiseSchedule::<f32>::linear(10, 1e-4, 0.02).unwrap();
        let x0 = Tensor::zeros(&[2]);
        let eps = Tensor::zeros(&[2]);
        assert!(forward_diffuse(&x0, 0, &eps, &sched).is_err());
        assert!(forward_diffuse(&x0, 11, &eps, &sched).is_err());
    }
}
