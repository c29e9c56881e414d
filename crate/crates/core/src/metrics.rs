//! Masked image metrics: RMSE, PSNR (−20·log10 RMSE for unit-range data),
//! and SSIM over 8×8 uniform windows fully inside the mask.

use crate::error::{Error, Result};
use crate::img::Raster;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

pub const SSIM_WINDOW: usize = 8;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskedMetrics {
    pub rmse: f64,
    /// +∞ when the inputs agree exactly; serialized as the string "inf".
    pub psnr: f64,
    pub ssim: f64,
}

/// Metrics over mask support only. Errors on an empty mask.
pub fn masked_metrics<T: Scalar>(
    a: &Raster<T>,
    b: &Raster<T>,
    mask: &Raster<T>,
) -> Result<MaskedMetrics> {
    if !a.same_dims(b) || a.height() != mask.height() || a.width() != mask.width() {
        return Err(Error::shape(
            "masked_metrics",
            format!("{}x{}x{}", a.height(), a.width(), a.channels()),
            format!(
                "{}x{}x{} / mask {}x{}",
                b.height(),
                b.width(),
                b.channels(),
                mask.height(),
                mask.width()
            ),
        ));
    }
    let half = T::from_f64_c(0.5);
    let mut se = 0.0;
    let mut n = 0usize;
    for y in 0..a.height() {
        for x in 0..a.width() {
            if mask.get(y, x, 0) <= half {
                continue;
            }
            for c in 0..a.channels() {
                let d = a.get(y, x, c).to_f64_c() - b.get(y, x, c).to_f64_c();
                se += d * d;
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::invalid("masked_metrics", "empty mask"));
    }
    let rmse = (se / (n * a.channels()) as f64).sqrt();
    let psnr = if rmse == 0.0 {
        f64::INFINITY
    } else {
        -20.0 * rmse.log10()
    };
    let ssim = masked_ssim(a, b, mask)?;
    Ok(MaskedMetrics { rmse, psnr, ssim })
}

/// Mean SSIM over all 8×8 windows whose pixels all lie inside the mask,
/// averaged over channels; K1=0.01, K2=0.03, dynamic range 1. Returns 1.0
/// when no window fits but the inputs agree on the mask, else falls back
/// to a single-pixel-statistics estimate.
fn masked_ssim<T: Scalar>(a: &Raster<T>, b: &Raster<T>, mask: &Raster<T>) -> Result<f64> {
    let (h, w) = (a.height(), a.width());
    let win = SSIM_WINDOW;
    let c1 = (SSIM_K1 * 1.0_f64).powi(2);
    let c2 = (SSIM_K2 * 1.0_f64).powi(2);
    let half = T::from_f64_c(0.5);
    let mut total = 0.0;
    let mut count = 0usize;
    if h >= win && w >= win {
        for y0 in 0..=h - win {
            'next: for x0 in 0..=w - win {
                for y in y0..y0 + win {
                    for x in x0..x0 + win {
                        if mask.get(y, x, 0) <= half {
                            continue 'next;
                        }
                    }
                }
                let mut win_ssim = 0.0;
                for c in 0..a.channels() {
                    let mut ma = 0.0;
                    let mut mb = 0.0;
                    for y in y0..y0 + win {
                        for x in x0..x0 + win {
                            ma += a.get(y, x, c).to_f64_c();
                            mb += b.get(y, x, c).to_f64_c();
                        }
                    }
                    let n = (win * win) as f64;
                    ma /= n;
                    mb /= n;
                    let mut va = 0.0;
                    let mut vb = 0.0;
                    let mut cov = 0.0;
                    for y in y0..y0 + win {
                        for x in x0..x0 + win {
                            let da = a.get(y, x, c).to_f64_c() - ma;
                            let db = b.get(y, x, c).to_f64_c() - mb;
                            va += da * da;
                            vb += db * db;
                            cov += da * db;
                        }
                    }
                    va /= n;
                    vb /= n;
                    cov /= n;
                    win_ssim += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                        / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                }
                total += win_ssim / a.channels() as f64;
                count += 1;
            }
        }
    }
    if count > 0 {
        return Ok(total / count as f64);
    }
    // no complete window: treat the masked pixels as one window
    let mut ma = 0.0;
    let mut mb = 0.0;
    let mut n = 0.0;
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x, 0) <= half {
                continue;
            }
            for c in 0..a.channels() {
                ma += a.get(y, x, c).to_f64_c();
                mb += b.get(y, x, c).to_f64_c();
                n += 1.0;
            }
        }
    }
    ma /= n;
    mb /= n;
    let mut va = 0.0;
    let mut vb = 0.0;
    let mut cov = 0.0;
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x, 0) <= half {
                continue;
            }
            for c in 0..a.channels() {
                let da = a.get(y, x, c).to_f64_c() - ma;
                let db = b.get(y, x, c).to_f64_c() - mb;
                va += da * da;
                vb += db * db;
                cov += da * db;
            }
        }
    }
    va /= n;
    vb /= n;
    cov /= n;
    Ok(((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
}

/// "inf"-aware serialization helper for reports.
pub fn psnr_to_string(psnr: f64) -> String {
    if psnr.is_infinite() {
        "inf".to_string()
    } else {
        format!("{psnr:.4}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn full_mask(h: usize, w: usize) -> Raster<f32> {
        Raster::full(h, w, 1, 1.0)
    }

    #[test]
    fn identical_inputs_give_zero_rmse_inf_psnr_unit_ssim() {
        let mut rng = Rng::new(4);
        let mut a = Raster::<f32>::zeros(16, 16, 3);
        for v in a.data_mut() {
            *v = rng.uniform() as f32;
        }
        let m = masked_metrics(&a, &a, &full_mask(16, 16)).unwrap();
        assert_eq!(m.rmse, 0.0);
        assert!(m.psnr.is_infinite());
        assert!((m.ssim - 1.0).abs() < 1e-9);
        assert_eq!(psnr_to_string(m.psnr), "inf");
    }

    #[test]
    fn constant_offset_gives_exact_closed_form() {
        let a = Raster::<f32>::full(16, 16, 3, 0.4);
        let b = Raster::<f32>::full(16, 16, 3, 0.5);
        let m = masked_metrics(&a, &b, &full_mask(16, 16)).unwrap();
        assert!((m.rmse - 0.1).abs() < 1e-7);
        assert!((m.psnr - 20.0).abs() < 1e-5);
    }

    #[test]
    fn psnr_rmse_identity_holds() {
        let mut rng = Rng::new(9);
        let mut a = Raster::<f32>::zeros(16, 16, 3);
        let mut b = Raster::<f32>::zeros(16, 16, 3);
        for v in a.data_mut() {
            *v = rng.uniform() as f32;
        }
        for v in b.data_mut() {
            *v = rng.uniform() as f32;
        }
        let m = masked_metrics(&a, &b, &full_mask(16, 16)).unwrap();
        assert!((m.psnr - (-20.0 * m.rmse.log10())).abs() < 1e-9);
        assert!((-1.0..=1.0).contains(&m.ssim));
    }

    #[test]
    fn metrics_match_straight_line_oracle() {
        let mut rng = Rng::new(11);
        let mut a = Raster::<f32>::zeros(12, 12, 3);
        let mut b = Raster::<f32>::zeros(12, 12, 3);
        let mut mask = Raster::<f32>::zeros(12, 12, 1);
        for v in a.data_mut() {
            *v = rng.uniform() as f32;
        }
        for v in b.data_mut() {
            *v = rng.uniform() as f32;
        }
        for v in mask.data_mut() {
            *v = if rng.bernoulli(0.6) { 1.0 } else { 0.0 };
        }
        if mask.mask_area() == 0 {
            mask.set(0, 0, 0, 1.0);
        }
        let m = masked_metrics(&a, &b, &mask).unwrap();
        // independent per-pixel accumulation
        let mut se = 0.0f64;
        let mut n = 0usize;
        for y in 0..12 {
            for x in 0..12 {
                if mask.get(y, x, 0) > 0.5 {
                    n += 1;
                    for c in 0..3 {
                        let d = a.get(y, x, c) as f64 - b.get(y, x, c) as f64;
                        se += d * d;
                    }
                }
            }
        }
        let want = (se / (3 * n) as f64).sqrt();
        assert!((m.rmse - want).abs() < 1e-6);
    }

    #[test]
    fn empty_mask_is_error() {
        let a = Raster::<f32>::zeros(8, 8, 3);
        let empty = Raster::<f32>::zeros(8, 8, 1);
        assert!(masked_metrics(&a, &a, &empty).is_err());
    }
}
