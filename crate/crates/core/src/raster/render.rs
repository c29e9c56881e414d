//! Forward rendering from fragment buffers.

use super::FragmentBuffer;
use crate::img::Raster;
use crate::scalar::Scalar;

/// Bilinear texture lookup per covered pixel, scaled by per-channel gain;
/// uncovered pixels stay zero.
pub fn render_texture<T: Scalar>(
    frag: &FragmentBuffer<T>,
    tex: &Raster<T>,
    gain: [f64; 3],
) -> Raster<T> {
    let c = tex.channels();
    let mut out = Raster::zeros(frag.height, frag.width, c);
    let (tw, th) = (tex.width() as f64, tex.height() as f64);
    for y in 0..frag.height {
        for x in 0..frag.width {
            let f = frag.at(y, x);
            if f.face < 0 {
                continue;
            }
            let sx = T::from_f64_c(f.uv[0].to_f64_c() * tw);
            let sy = T::from_f64_c(f.uv[1].to_f64_c() * th);
            for ch in 0..c {
                let g = T::from_f64_c(gain[ch.min(2)]);
                out.set(y, x, ch, tex.sample_bilinear(sx, sy, ch) * g);
            }
        }
    }
    out
}

/// Image-domain twin of the UV position map: covered pixels carry the
/// interpolated (u, v) and a constant 0.5 third channel.
pub fn render_uv_position<T: Scalar>(frag: &FragmentBuffer<T>) -> Raster<T> {
    let mut out = Raster::zeros(frag.height, frag.width, 3);
    let half = T::from_f64_c(0.5);
    for y in 0..frag.height {
        for x in 0..frag.width {
            let f = frag.at(y, x);
            if f.face < 0 {
                continue;
            }
            out.set(y, x, 0, f.uv[0]);
            out.set(y, x, 1, f.uv[1]);
            out.set(y, x, 2, half);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::proxy::{FaceParams, ProxyHead};
    use crate::geom::Scene;
    use crate::raster::rasterize;

    #[test]
    fn constant_texture_renders_constant_over_coverage() {
        let head = ProxyHead::<f32>::new();
        let mesh = head.build_mesh(&FaceParams::zero());
        let scene = Scene::frontal(32);
        let frag = rasterize(&mesh, &scene, 32);
        let tex = Raster::full(32, 32, 3, 0.63);
        let img = render_texture(&frag, &tex, [1.0, 1.0, 1.0]);
        for y in 0..32 {
            for x in 0..32 {
                if frag.at(y, x).face >= 0 {
                    for c in 0..3 {
                        assert!((img.get(y, x, c) - 0.63).abs() < 1e-6);
                    }
                } else {
                    for c in 0..3 {
                        assert_eq!(img.get(y, x, c), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn gain_scales_linearly() {
        let head = ProxyHead::<f32>::new();
        let mesh = head.build_mesh(&FaceParams::zero());
        let scene = Scene::frontal(32);
        let frag = rasterize(&mesh, &scene, 32);
        let tex = Raster::full(32, 32, 3, 0.8);
        let full = render_texture(&frag, &tex, [1.0, 1.0, 1.0]);
        let half = render_texture(&frag, &tex, [0.5, 0.5, 0.5]);
        for (h, f) in half.data().iter().zip(full.data()) {
            assert!((h - 0.5 * f).abs() < 1e-6);
        }
    }

    #[test]
    fn uv_position_channels_are_uv_and_constant() {
        let head = ProxyHead::<f32>::new();
        let mesh = head.build_mesh(&FaceParams::zero());
        let scene = Scene::frontal(32);
        let frag = rasterize(&mesh, &scene, 32);
        let pos = render_uv_position(&frag);
        for y in 0..32 {
            for x in 0..32 {
                let f = frag.at(y, x);
                if f.face >= 0 {
                    assert_eq!(pos.get(y, x, 0), f.uv[0]);
                    assert_eq!(pos.get(y, x, 1), f.uv[1]);
                    assert_eq!(pos.get(y, x, 2), 0.5);
                } else {
                    assert_eq!(pos.get(y, x, 2), 0.0);
                }
            }
        }
    }
}
