//! Landmark projection and the Gaussian blob raster used as the alignment
//! guide image.

use super::unwrap::RayTester;
use crate::geom::{Mesh, Scene};
use crate::img::Raster;
use crate::scalar::Scalar;

pub const BLOB_SIGMA: f64 = 1.5;

#[derive(Debug, Clone)]
pub struct LandmarkSet<T> {
    /// Projected pixel positions, one per landmark vertex.
    pub points: Vec<[T; 2]>,
    pub visible: Vec<bool>,
    /// Gaussian blobs (σ = 1.5 px) for each visible landmark, max-combined.
    pub image: Raster<T>,
}

/// Project landmark vertices, resolve visibility by depth test against the
/// front-facing surface, and rasterize blobs for the visible ones.
pub fn project_landmarks<T: Scalar>(
    mesh: &Mesh<T>,
    scene: &Scene,
    image_size: usize,
    jitter: Option<&mut crate::rng::Rng>,
    jitter_sigma_px: f64,
) -> LandmarkSet<T> {
    let proj = scene.projector();
    let extent = 4.0 * scene.scale + scene.trans[0].abs() + scene.trans[1].abs() + 64.0;
    let tester = RayTester::new(mesh, scene, extent);
    let mut points = Vec::with_capacity(mesh.landmarks.len());
    let mut visible = Vec::with_capacity(mesh.landmarks.len());
    let mut rng = jitter;
    for &vi in &mesh.landmarks {
        let q = proj.project(mesh.vertices[vi as usize]);
        let depth = q[2];
        // visible iff nothing front-facing is strictly nearer at this point
        let vis = match tester.hit(q[0], q[1]) {
            Some((_, d)) => d.to_f64_c() >= depth.to_f64_c() - 1e-4,
            None => false,
        };
        let (mut px, mut py) = (q[0].to_f64_c(), q[1].to_f64_c());
        if let Some(r) = rng.as_deref_mut() {
            px += r.normal() * jitter_sigma_px;
            py += r.normal() * jitter_sigma_px;
        }
        let in_bounds = px >= 0.0 && py >= 0.0 && px < image_size as f64 && py < image_size as f64;
        points.push([T::from_f64_c(px), T::from_f64_c(py)]);
        visible.push(vis && in_bounds);
    }
    let mut image = Raster::zeros(image_size, image_size, 1);
    for (p, &vis) in points.iter().zip(&visible) {
        if !vis {
            continue;
        }
        splat_blob(&mut image, p[0].to_f64_c(), p[1].to_f64_c());
    }
    LandmarkSet {
        points,
        visible,
        image,
    }
}

fn splat_blob<T: Scalar>(img: &mut Raster<T>, cx: f64, cy: f64) {
    let r = (BLOB_SIGMA * 3.0).ceil() as i64;
    let (h, w) = (img.height() as i64, img.width() as i64);
    let x0 = ((cx - 0.5).round() as i64 - r).max(0);
    let x1 = ((cx - 0.5).round() as i64 + r).min(w - 1);
    let y0 = ((cy - 0.5).round() as i64 - r).max(0);
    let y1 = ((cy - 0.5).round() as i64 + r).min(h - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dx = (x as f64 + 0.5) - cx;
            let dy = (y as f64 + 0.5) - cy;
            let g = (-(dx * dx + dy * dy) / (2.0 * BLOB_SIGMA * BLOB_SIGMA)).exp();
            let cur = img.get(y as usize, x as usize, 0).to_f64_c();
            if g > cur {
                img.set(y as usize, x as usize, 0, T::from_f64_c(g));
            }
        }
    }
}
