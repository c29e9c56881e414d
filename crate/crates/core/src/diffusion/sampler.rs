//! Deterministic (η = 0) DDIM sampling with classifier-free guidance.

use super::NoiseSchedule;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// ε̂ = ε_uncond + scale·(ε_cond − ε_uncond)
pub fn cfg_combine<T: Scalar>(
    eps_uncond: &Tensor<T>,
    eps_cond: &Tensor<T>,
    scale: f64,
) -> Result<Tensor<T>> {
    if eps_uncond.shape() != eps_cond.shape() {
        return Err(Error::shape(
            "cfg_combine",
            format!("{:?}", eps_uncond.shape()),
            format!("{:?}", eps_cond.shape()),
        ));
    }
    // endpoint scales return the corresponding branch bit-exactly
    if scale == 1.0 {
        return Ok(eps_cond.clone());
    }
    if scale == 0.0 {
        return Ok(eps_uncond.clone());
    }
    let s = T::from_f64_c(scale);
    let data = eps_uncond
        .data()
        .iter()
        .zip(eps_cond.data())
        .map(|(&u, &c)| u + s * (c - u))
        .collect();
    Tensor::new(eps_uncond.shape().to_vec(), data)
}

/// Uniform descending timestep subsequence: t_i = round(i·T/steps) for
/// i = steps..1, ending at the t→0 boundary.
pub fn ddim_timesteps(t_count: usize, steps: usize) -> Vec<usize> {
    let steps = steps.min(t_count).max(1);
    (1..=steps)
        .rev()
        .map(|i| ((i * t_count) as f64 / steps as f64).round() as usize)
        .map(|t| t.max(1))
        .collect()
}

/// One denoiser evaluation: ε̂(x_t, t) with or without conditions.
pub trait Denoiser<T> {
    fn predict(&self, x_t: &Tensor<T>, t: usize, conditioned: bool) -> Result<Tensor<T>>;
    /// Whether a conditional branch exists; unconditional models skip the
    /// second evaluation and guidance entirely.
    fn has_conditions(&self) -> bool;
}

/// Deterministic DDIM trajectory from the given initial noise:
/// x̂0 = (x_t − √(1−ᾱ_t)·ε̂)/√ᾱ_t, then
/// x_prev = √ᾱ_prev·x̂0 + √(1−ᾱ_prev)·ε̂.
pub fn ddim_sample<T: Scalar, D: Denoiser<T>>(
    denoiser: &D,
    schedule: &NoiseSchedule<T>,
    steps: usize,
    guidance_scale: f64,
    init: Tensor<T>,
) -> Result<Tensor<T>> {
    if steps == 0 || steps > schedule.steps() {
        return Err(Error::invalid(
            "ddim_sample",
            format!("steps {steps} outside 1..={}", schedule.steps()),
        ));
    }
    let ts = ddim_timesteps(schedule.steps(), steps);
    let mut x = init;
    for (k, &t) in ts.iter().enumerate() {
        let t_prev = if k + 1 < ts.len() { ts[k + 1] } else { 0 };
        let eps_hat = if denoiser.has_conditions() {
            let eps_u = denoiser.predict(&x, t, false)?;
            let eps_c = denoiser.predict(&x, t, true)?;
            cfg_combine(&eps_u, &eps_c, guidance_scale)?
        } else {
            denoiser.predict(&x, t, false)?
        };
        let sa_t = schedule.sqrt_alpha_bar(t);
        let sb_t = schedule.sqrt_one_minus_alpha_bar(t);
        let sa_p = schedule.sqrt_alpha_bar(t_prev);
        let sb_p = schedule.sqrt_one_minus_alpha_bar(t_prev);
        let inv_sa_t = sa_t.recip();
        let mut next = vec![T::zero(); x.numel()];
        for ((n, &xv), &ev) in next.iter_mut().zip(x.data()).zip(eps_hat.data()) {
            let x0_hat = (xv - sb_t * ev) * inv_sa_t;
            *n = sa_p * x0_hat + sb_p * ev;
        }
        x = Tensor::new(x.shape().to_vec(), next)?;
        if !x.is_finite() {
            return Err(Error::SamplerAbort {
                step: k,
                msg: format!("non-finite state at t={t}"),
            });
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn cfg_scale_one_returns_conditional_exactly() {
        let mut rng = Rng::new(4);
        let u = Tensor::<f32>::randn(&[8], &mut rng);
        let c = Tensor::<f32>::randn(&[8], &mut rng);
        let out = cfg_combine(&u, &c, 1.0).unwrap();
        for (o, w) in out.data().iter().zip(c.data()) {
            assert_eq!(o.to_bits(), w.to_bits());
        }
    }

    #[test]
    fn cfg_scale_zero_returns_unconditional_exactly() {
        let mut rng = Rng::new(5);
        let u = Tensor::<f32>::randn(&[8], &mut rng);
        let c = Tensor::<f32>::randn(&[8], &mut rng);
        let out = cfg_combine(&u, &c, 0.0).unwrap();
        for (o, w) in out.data().iter().zip(u.data()) {
            assert_eq!(o.to_bits(), w.to_bits());
        }
    }

    #[test]
    fn cfg_formula_matches_independent_recompute() {
        let mut rng = Rng::new(6);
        let u = Tensor::<f64>::randn(&[32], &mut rng);
        let c = Tensor::<f64>::randn(&[32], &mut rng);
        let out = cfg_combine(&u, &c, 1.4).unwrap();
        for i in 0..32 {
            let want = u.data()[i] + 1.4 * (c.data()[i] - u.data()[i]);
            assert!((out.data()[i] - want).abs() < 1e-7);
        }
    }

    #[test]
    fn cfg_identical_inputs_fixed_point() {
        let mut rng = Rng::new(7);
        let a = Tensor::<f32>::randn(&[16], &mut rng);
        for s in [0.0, 0.7, 1.4, 5.0] {
            let out = cfg_combine(&a, &a, s).unwrap();
            for (o, w) in out.data().iter().zip(a.data()) {
                assert_eq!(o.to_bits(), w.to_bits());
            }
        }
    }

    #[test]
    fn timesteps_are_uniform_descending_and_hit_t() {
        let ts = ddim_timesteps(1000, 30);
        assert_eq!(ts.len(), 30);
        assert_eq!(ts[0], 1000);
        for w in ts.windows(2) {
            assert!(w[0] > w[1]);
        }
        let full = ddim_timesteps(10, 10);
        assert_eq!(full, vec![10, 9, 8, 7, 6, 5, 4, 3, 2, 1]);
    }
}
