//! Deterministic rasterization and its inverse.
//!
//! Coverage rule shared by everything in this module: pixel/texel centers,
//! counter-clockwise (positive area) triangles, top-left edge ownership,
//! z-buffer keeps the strictly smaller depth with ties going to the lower
//! face id. Back-facing (negative area) triangles are culled; projected
//! triangles with |area| < 1e-12 are skipped and counted as degenerate.

mod landmarks;
mod render;
mod unwrap;

pub use landmarks::{project_landmarks, LandmarkSet};
pub use render::{render_texture, render_uv_position};
pub use unwrap::{unwrap, uv_coverage, uv_fragments, uv_position_map, uv_visibility, UvPositionMap};

use crate::geom::{Mesh, Scene};
use crate::scalar::Scalar;

/// Per-pixel rasterization output.
#[derive(Debug, Clone, Copy)]
pub struct Fragment<T> {
    /// Covering face id, -1 when empty.
    pub face: i32,
    pub bary: [T; 3],
    pub depth: T,
    pub uv: [T; 2],
}

impl<T: Scalar> Default for Fragment<T> {
    fn default() -> Self {
        Fragment {
            face: -1,
            bary: [T::zero(); 3],
            depth: T::infinity(),
            uv: [T::zero(); 2],
        }
    }
}

#[derive(Debug, Clone)]
pub struct FragmentBuffer<T> {
    pub width: usize,
    pub height: usize,
    pub frags: Vec<Fragment<T>>,
    /// Projected triangles skipped for |area| < 1e-12.
    pub degenerate_count: usize,
}

impl<T: Scalar> FragmentBuffer<T> {
    pub fn at(&self, y: usize, x: usize) -> &Fragment<T> {
        &self.frags[y * self.width + x]
    }

    /// 1 where a face covers the pixel.
    pub fn coverage(&self) -> crate::img::Raster<T> {
        let mut m = crate::img::Raster::zeros(self.height, self.width, 1);
        for (i, f) in self.frags.iter().enumerate() {
            if f.face >= 0 {
                m.data_mut()[i] = T::one();
            }
        }
        m
    }
}

/// Edge function: positive when p is on the interior side of a→b for a
/// positive-area triangle (y grows downward).
#[inline]
pub(crate) fn edge<T: Scalar>(ax: T, ay: T, bx: T, by: T, px: T, py: T) -> T {
    (bx - ax) * (py - ay) - (by - ay) * (px - ax)
}

/// Top-left ownership for boundary points of a positive-area triangle.
#[inline]
pub(crate) fn edge_owned<T: Scalar>(ax: T, ay: T, bx: T, by: T) -> bool {
    let dx = bx - ax;
    let dy = by - ay;
    dy < T::zero() || (dy == T::zero() && dx > T::zero())
}

/// Coverage of a single point against a projected triangle; returns
/// barycentrics when covered. `verts` are projected (x, y, depth).
#[inline]
pub(crate) fn point_in_triangle<T: Scalar>(
    verts: &[[T; 3]; 3],
    area2: T,
    px: T,
    py: T,
) -> Option<[T; 3]> {
    let [a, b, c] = verts;
    let w0 = edge(b[0], b[1], c[0], c[1], px, py);
    if w0 < T::zero() || (w0 == T::zero() && !edge_owned(b[0], b[1], c[0], c[1])) {
        return None;
    }
    let w1 = edge(c[0], c[1], a[0], a[1], px, py);
    if w1 < T::zero() || (w1 == T::zero() && !edge_owned(c[0], c[1], a[0], a[1])) {
        return None;
    }
    let w2 = edge(a[0], a[1], b[0], b[1], px, py);
    if w2 < T::zero() || (w2 == T::zero() && !edge_owned(a[0], a[1], b[0], b[1])) {
        return None;
    }
    let inv = area2.recip();
    Some([w0 * inv, w1 * inv, w2 * inv])
}

/// Project all vertices of a mesh through a scene.
pub(crate) fn project_vertices<T: Scalar>(mesh: &Mesh<T>, scene: &Scene) -> Vec<[T; 3]> {
    let proj = scene.projector();
    mesh.vertices.iter().map(|&v| proj.project(v)).collect()
}

pub(crate) fn degenerate_eps<T: Scalar>() -> T {
    T::from_f64_c(1e-12)
}

/// Z-buffered rasterization of a mesh into an image-size fragment buffer.
pub fn rasterize<T: Scalar>(mesh: &Mesh<T>, scene: &Scene, size: usize) -> FragmentBuffer<T> {
    let projected = project_vertices(mesh, scene);
    let mut buf = FragmentBuffer {
        width: size,
        height: size,
        frags: vec![Fragment::default(); size * size],
        degenerate_count: 0,
    };
    let half = T::from_f64_c(0.5);
    for (fi, tri) in mesh.triangles.iter().enumerate() {
        let verts = [
            projected[tri[0] as usize],
            projected[tri[1] as usize],
            projected[tri[2] as usize],
        ];
        let [a, b, c] = &verts;
        let area2 = edge(a[0], a[1], b[0], b[1], c[0], c[1]);
        if area2.abs() < degenerate_eps::<T>() {
            buf.degenerate_count += 1;
            continue;
        }
        if area2 < T::zero() {
            continue; // back-facing
        }
        let fmax = T::from_f64_c((size - 1) as f64);
        let x_lo = (a[0].min(b[0]).min(c[0]) - half).floor().max(T::zero());
        let x_hi = (a[0].max(b[0]).max(c[0]) - half).ceil().min(fmax);
        let y_lo = (a[1].min(b[1]).min(c[1]) - half).floor().max(T::zero());
        let y_hi = (a[1].max(b[1]).max(c[1]) - half).ceil().min(fmax);
        if x_hi < x_lo || y_hi < y_lo {
            continue;
        }
        let (x0, x1) = (x_lo.to_f64_c() as usize, x_hi.to_f64_c() as usize);
        let (y0, y1) = (y_lo.to_f64_c() as usize, y_hi.to_f64_c() as usize);
        let uv = [
            mesh.uv[tri[0] as usize],
            mesh.uv[tri[1] as usize],
            mesh.uv[tri[2] as usize],
        ];
        for py in y0..=y1 {
            let cy = T::from_f64_c(py as f64) + half;
            for px in x0..=x1 {
                let cx = T::from_f64_c(px as f64) + half;
                if let Some(bary) = point_in_triangle(&verts, area2, cx, cy) {
                    let depth = bary[0] * a[2] + bary[1] * b[2] + bary[2] * c[2];
                    let frag = &mut buf.frags[py * size + px];
                    // strict improvement only: equal depth keeps the lower id
                    if depth < frag.depth {
                        frag.face = fi as i32;
                        frag.depth = depth;
                        frag.bary = bary;
                        frag.uv = [
                            bary[0] * uv[0][0] + bary[1] * uv[1][0] + bary[2] * uv[2][0],
                            bary[0] * uv[0][1] + bary[1] * uv[1][1] + bary[2] * uv[2][1],
                        ];
                    }
                }
            }
        }
    }
    buf
}
