//! H×W×C float rasters for the 2-D image and UV domains, with bilinear
//! sampling and the on-disk formats (lossless float sidecar + 8-bit PNG).

pub mod io;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major H×W×C raster (channels interleaved).
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<T>,
}

impl<T: Scalar> Raster<T> {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Raster {
            h,
            w,
            c,
            data: vec![T::zero(); h * w * c],
        }
    }

    pub fn full(h: usize, w: usize, c: usize, v: T) -> Self {
        Raster {
            h,
            w,
            c,
            data: vec![v; h * w * c],
        }
    }

    pub fn from_data(h: usize, w: usize, c: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != h * w * c {
            return Err(Error::shape(
                "raster::from_data",
                format!("{}x{}x{} = {}", h, w, c, h * w * c),
                format!("{}", data.len()),
            ));
        }
        Ok(Raster { h, w, c, data })
    }

    pub fn height(&self) -> usize {
        self.h
    }
    pub fn width(&self) -> usize {
        self.w
    }
    pub fn channels(&self) -> usize {
        self.c
    }
    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, ch: usize) -> T {
        self.data[(y * self.w + x) * self.c + ch]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, ch: usize, v: T) {
        self.data[(y * self.w + x) * self.c + ch] = v;
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[T] {
        &self.data[(y * self.w + x) * self.c..(y * self.w + x + 1) * self.c]
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        self.h == other.h && self.w == other.w && self.c == other.c
    }

    /// Bilinear sample at continuous pixel coordinates; texel (x,y) covers
    /// [x, x+1)×[y, y+1) with its center at (x+0.5, y+0.5). Edge-clamped.
    pub fn sample_bilinear(&self, x: T, y: T, ch: usize) -> T {
        let half = T::from_f64_c(0.5);
        let xf = x - half;
        let yf = y - half;
        let x0f = xf.floor();
        let y0f = yf.floor();
        let fx = xf - x0f;
        let fy = yf - y0f;
        let clamp = |v: f64, hi: usize| -> usize {
            if v < 0.0 {
                0
            } else if v as usize >= hi {
                hi - 1
            } else {
                v as usize
            }
        };
        let x0 = clamp(x0f.to_f64_c(), self.w);
        let x1 = clamp(x0f.to_f64_c() + 1.0, self.w);
        let y0 = clamp(y0f.to_f64_c(), self.h);
        let y1 = clamp(y0f.to_f64_c() + 1.0, self.h);
        let one = T::one();
        let v00 = self.get(y0, x0, ch);
        let v01 = self.get(y0, x1, ch);
        let v10 = self.get(y1, x0, ch);
        let v11 = self.get(y1, x1, ch);
        let top = v00 * (one - fx) + v01 * fx;
        let bot = v10 * (one - fx) + v11 * fx;
        top * (one - fy) + bot * fy
    }

    /// True when all four bilinear source texels at (x,y) carry mask 1
    /// (within 1e-3); used to keep unwrapped texels off mask boundaries.
    pub fn full_support(&self, x: T, y: T) -> bool {
        debug_assert_eq!(self.c, 1);
        let half = T::from_f64_c(0.5);
        let xf = (x - half).floor().to_f64_c();
        let yf = (y - half).floor().to_f64_c();
        let thresh = T::from_f64_c(0.999);
        for dy in 0..2 {
            for dx in 0..2 {
                let xx = (xf + dx as f64).clamp(0.0, (self.w - 1) as f64) as usize;
                let yy = (yf + dy as f64).clamp(0.0, (self.h - 1) as f64) as usize;
                if self.get(yy, xx, 0) < thresh {
                    return false;
                }
            }
        }
        true
    }

    /// Elementwise product against a 1-channel mask.
    pub fn masked(&self, mask: &Raster<T>) -> Result<Raster<T>> {
        if mask.c != 1 || mask.h != self.h || mask.w != self.w {
            return Err(Error::shape(
                "raster::masked",
                format!("{}x{}x1", self.h, self.w),
                format!("{}x{}x{}", mask.h, mask.w, mask.c),
            ));
        }
        let mut out = self.clone();
        for y in 0..self.h {
            for x in 0..self.w {
                let m = mask.get(y, x, 0);
                for ch in 0..self.c {
                    let v = out.get(y, x, ch);
                    out.set(y, x, ch, v * m);
                }
            }
        }
        Ok(out)
    }

    /// Count of mask texels above 0.5.
    pub fn mask_area(&self) -> usize {
        debug_assert_eq!(self.c, 1);
        self.data
            .iter()
            .filter(|&&v| v > T::from_f64_c(0.5))
            .count()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn clamp01(&mut self) -> usize {
        let mut clamped = 0;
        for v in &mut self.data {
            if *v < T::zero() {
                *v = T::zero();
                clamped += 1;
            } else if *v > T::one() {
                *v = T::one();
                clamped += 1;
            }
        }
        clamped
    }

    /// Mean of each channel over a mask (1-channel, >0.5); None on empty mask.
    pub fn masked_channel_means(&self, mask: &Raster<T>) -> Option<Vec<f64>> {
        let mut sums = vec![0.0; self.c];
        let mut n = 0usize;
        for y in 0..self.h {
            for x in 0..self.w {
                if mask.get(y, x, 0) > T::from_f64_c(0.5) {
                    n += 1;
                    for ch in 0..self.c {
                        sums[ch] += self.get(y, x, ch).to_f64_c();
                    }
                }
            }
        }
        if n == 0 {
            return None;
        }
        Some(sums.into_iter().map(|s| s / n as f64).collect())
    }
}

impl<T: Scalar> Raster<T> {
    /// Separable [1/4, 1/2, 1/4] blur, edge-clamped, applied `passes` times.
    pub fn blur3(&self, passes: usize) -> Raster<T> {
        let mut cur = self.clone();
        let q = T::from_f64_c(0.25);
        let h2 = T::from_f64_c(0.5);
        for _ in 0..passes {
            let mut tmp = cur.clone();
            for y in 0..self.h {
                for x in 0..self.w {
                    let xm = x.saturating_sub(1);
                    let xp = (x + 1).min(self.w - 1);
                    for ch in 0..self.c {
                        let v = q * cur.get(y, xm, ch)
                            + h2 * cur.get(y, x, ch)
                            + q * cur.get(y, xp, ch);
                        tmp.set(y, x, ch, v);
                    }
                }
            }
            let mut out = tmp.clone();
            for y in 0..self.h {
                let ym = y.saturating_sub(1);
                let yp = (y + 1).min(self.h - 1);
                for x in 0..self.w {
                    for ch in 0..self.c {
                        let v = q * tmp.get(ym, x, ch)
                            + h2 * tmp.get(y, x, ch)
                            + q * tmp.get(yp, x, ch);
                        out.set(y, x, ch, v);
                    }
                }
            }
            cur = out;
        }
        cur
    }
}

/// Elementwise AND of two masks (product for soft masks).
pub fn compose_masks<T: Scalar>(a: &Raster<T>, b: &Raster<T>) -> Result<Raster<T>> {
    if !a.same_dims(b) || a.channels() != 1 {
        return Err(Error::shape(
            "compose_masks",
            format!("{}x{}x1", a.height(), a.width()),
            format!("{}x{}x{}", b.height(), b.width(), b.channels()),
        ));
    }
    let mut out = a.clone();
    for (o, &bv) in out.data_mut().iter_mut().zip(b.data()) {
        *o = *o * bv;
    }
    Ok(out)
}
