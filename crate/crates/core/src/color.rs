//! CIELAB (D65) conversions and masked mean/std color transfer.
//!
//! The white-point-relative RGB→XYZ rows are evaluated in the affine form
//! `r + a·(g−r) + b·(b−r)`, so gray inputs map to a = b = 0 exactly.

use crate::error::{Error, Result};
use crate::img::Raster;
use crate::scalar::Scalar;

// sRGB → XYZ (D65). The white point is the exact row sums, so the
// normalized rows sum to 1 and the affine evaluation is exact on grays.
const M_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];
const XN: f64 = M_XYZ[0][0] + M_XYZ[0][1] + M_XYZ[0][2];
const YN: f64 = M_XYZ[1][0] + M_XYZ[1][1] + M_XYZ[1][2];
const ZN: f64 = M_XYZ[2][0] + M_XYZ[2][1] + M_XYZ[2][2];
const ROW_X: [f64; 3] = [M_XYZ[0][0] / XN, M_XYZ[0][1] / XN, M_XYZ[0][2] / XN];
const ROW_Y: [f64; 3] = [M_XYZ[1][0] / YN, M_XYZ[1][1] / YN, M_XYZ[1][2] / YN];
const ROW_Z: [f64; 3] = [M_XYZ[2][0] / ZN, M_XYZ[2][1] / ZN, M_XYZ[2][2] / ZN];

const EPSILON: f64 = 216.0 / 24389.0;
const KAPPA: f64 = 24389.0 / 27.0;

fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(v: f64) -> f64 {
    if v <= 0.003_130_8 {
        v * 12.92
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

fn lab_f(t: f64) -> f64 {
    if t > EPSILON {
        t.cbrt()
    } else {
        (KAPPA * t + 16.0) / 116.0
    }
}

fn lab_f_inv(f: f64) -> f64 {
    let f3 = f * f * f;
    if f3 > EPSILON {
        f3
    } else {
        (116.0 * f - 16.0) / KAPPA
    }
}

/// One sRGB pixel (components in [0,1]) to L*a*b*.
pub fn rgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let r = srgb_to_linear(rgb[0]);
    let g = srgb_to_linear(rgb[1]);
    let b = srgb_to_linear(rgb[2]);
    // affine-in-differences evaluation: exact on the neutral axis
    let xr = r + ROW_X[1] * (g - r) + ROW_X[2] * (b - r);
    let yr = r + ROW_Y[1] * (g - r) + ROW_Y[2] * (b - r);
    let zr = r + ROW_Z[1] * (g - r) + ROW_Z[2] * (b - r);
    let fx = lab_f(xr);
    let fy = lab_f(yr);
    let fz = lab_f(zr);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Inverse of [`rgb_to_lab`]; out-of-gamut components are clamped to [0,1]
/// and counted.
pub fn lab_to_rgb(lab: [f64; 3], clamp_count: &mut usize) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let xr = lab_f_inv(fx);
    let yr = lab_f_inv(fy);
    let zr = lab_f_inv(fz);
    // un-normalize and invert the linear map
    let x = xr * XN;
    let y = yr * YN;
    let z = zr * ZN;
    let rl = 3.240_454_2 * x - 1.537_138_5 * y - 0.498_531_4 * z;
    let gl = -0.969_266_0 * x + 1.876_010_8 * y + 0.041_556_0 * z;
    let bl = 0.055_643_4 * x - 0.204_025_9 * y + 1.057_225_2 * z;
    let mut out = [linear_to_srgb(rl), linear_to_srgb(gl), linear_to_srgb(bl)];
    for v in &mut out {
        if *v < 0.0 {
            *v = 0.0;
            *clamp_count += 1;
        } else if *v > 1.0 {
            *v = 1.0;
            *clamp_count += 1;
        }
    }
    out
}

/// Per-channel Lab mean and standard deviation over a mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LabStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
    pub count: usize,
}

pub fn lab_stats<T: Scalar>(image: &Raster<T>, mask: &Raster<T>) -> Result<LabStats> {
    if image.channels() != 3 {
        return Err(Error::invalid("lab_stats", "3-channel image required"));
    }
    let half = T::from_f64_c(0.5);
    let mut labs = Vec::new();
    for y in 0..image.height() {
        for x in 0..image.width() {
            if mask.get(y, x, 0) <= half {
                continue;
            }
            let px = image.pixel(y, x);
            labs.push(rgb_to_lab([
                px[0].to_f64_c(),
                px[1].to_f64_c(),
                px[2].to_f64_c(),
            ]));
        }
    }
    if labs.is_empty() {
        return Err(Error::invalid("lab_stats", "empty mask"));
    }
    let n = labs.len() as f64;
    let mut mean = [0.0; 3];
    for lab in &labs {
        for c in 0..3 {
            mean[c] += lab[c];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    // two-pass variance: exact zero for flat channels
    let mut var = [0.0; 3];
    for lab in &labs {
        for c in 0..3 {
            let d = lab[c] - mean[c];
            var[c] += d * d;
        }
    }
    let std = [
        (var[0] / n).sqrt(),
        (var[1] / n).sqrt(),
        (var[2] / n).sqrt(),
    ];
    Ok(LabStats {
        mean,
        std,
        count: labs.len(),
    })
}

/// Outcome diagnostics of a stats transfer: clamped components and the
/// post-clamp deviation from the pre-clamp target stats.
#[derive(Debug, Clone, Default)]
pub struct TransferReport {
    pub clamped: usize,
    /// Per-channel scale fell back to 1 for a flat source channel.
    pub flat_channels: [bool; 3],
    /// Largest |achieved − target| over Lab channel means and stds after
    /// clamping; zero-ish unless clamping moved pixels.
    pub post_clamp_stat_delta: f64,
}

/// Match the source's masked Lab mean/std to the reference's: per channel
/// `out = (in − μ_src)·(σ_ref/σ_src) + μ_ref` over the source mask; pixels
/// outside the mask are untouched. A source channel with σ < 1e-6 keeps
/// scale 1 (flat-source degenerate case), reported in the result.
pub fn transfer_stats<T: Scalar>(
    source: &Raster<T>,
    source_mask: &Raster<T>,
    reference: &Raster<T>,
    reference_mask: &Raster<T>,
) -> Result<(Raster<T>, TransferReport)> {
    let src_stats = lab_stats(source, source_mask)?;
    let ref_stats = lab_stats(reference, reference_mask)?;
    let mut report = TransferReport::default();
    let mut scale = [0.0; 3];
    for c in 0..3 {
        if src_stats.std[c] < 1e-6 {
            scale[c] = 1.0;
            report.flat_channels[c] = true;
        } else {
            scale[c] = ref_stats.std[c] / src_stats.std[c];
        }
    }
    let mut out = source.clone();
    let half = T::from_f64_c(0.5);
    for y in 0..source.height() {
        for x in 0..source.width() {
            if source_mask.get(y, x, 0) <= half {
                continue;
            }
            let px = source.pixel(y, x);
            let lab = rgb_to_lab([px[0].to_f64_c(), px[1].to_f64_c(), px[2].to_f64_c()]);
            let mut adj = [0.0; 3];
            for c in 0..3 {
                adj[c] = (lab[c] - src_stats.mean[c]) * scale[c] + ref_stats.mean[c];
            }
            let rgb = lab_to_rgb(adj, &mut report.clamped);
            for c in 0..3 {
                out.set(y, x, c, T::from_f64_c(rgb[c]));
            }
        }
    }
    // the match is exact pre-clamp by construction; report what clamping did
    let achieved = lab_stats(&out, source_mask)?;
    for c in 0..3 {
        let target_std = if report.flat_channels[c] {
            src_stats.std[c]
        } else {
            ref_stats.std[c]
        };
        report.post_clamp_stat_delta = report
            .post_clamp_stat_delta
            .max((achieved.mean[c] - ref_stats.mean[c]).abs())
            .max((achieved.std[c] - target_std).abs());
    }
    Ok((out, report))
}
