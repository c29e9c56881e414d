//! UV-domain rasterization, the position map, self-occlusion visibility and
//! image→UV unwrapping.

use super::{degenerate_eps, edge, point_in_triangle, project_vertices, Fragment};
use crate::geom::{Mesh, Scene};
use crate::img::Raster;
use crate::scalar::Scalar;

/// Per-texel (face, bary) assignment from rasterizing the mesh in atlas
/// space. The atlas is non-overlapping by construction, so no depth test.
pub fn uv_fragments<T: Scalar>(mesh: &Mesh<T>, uv_size: usize) -> Vec<Fragment<T>> {
    let mut frags = vec![Fragment::default(); uv_size * uv_size];
    let half = T::from_f64_c(0.5);
    let sz = T::from_f64_c(uv_size as f64);
    for (fi, tri) in mesh.triangles.iter().enumerate() {
        let verts = [
            uv_vert(mesh, tri[0], sz),
            uv_vert(mesh, tri[1], sz),
            uv_vert(mesh, tri[2], sz),
        ];
        let [a, b, c] = &verts;
        let area2 = edge(a[0], a[1], b[0], b[1], c[0], c[1]);
        if area2 <= degenerate_eps::<T>() {
            continue;
        }
        let fmax = T::from_f64_c((uv_size - 1) as f64);
        let x0 = (a[0].min(b[0]).min(c[0]) - half).floor().max(T::zero()).to_f64_c() as usize;
        let x1 = (a[0].max(b[0]).max(c[0]) - half).ceil().min(fmax).to_f64_c() as usize;
        let y0 = (a[1].min(b[1]).min(c[1]) - half).floor().max(T::zero()).to_f64_c() as usize;
        let y1 = (a[1].max(b[1]).max(c[1]) - half).ceil().min(fmax).to_f64_c() as usize;
        for ty in y0..=y1 {
            let cy = T::from_f64_c(ty as f64) + half;
            for tx in x0..=x1 {
                let cx = T::from_f64_c(tx as f64) + half;
                if let Some(bary) = point_in_triangle(&verts, area2, cx, cy) {
                    let f = &mut frags[ty * uv_size + tx];
                    f.face = fi as i32;
                    f.bary = bary;
                    f.depth = T::zero();
                    f.uv = [cx / sz, cy / sz];
                }
            }
        }
    }
    frags
}

fn uv_vert<T: Scalar>(mesh: &Mesh<T>, i: u32, sz: T) -> [T; 3] {
    let uv = mesh.uv[i as usize];
    [uv[0] * sz, uv[1] * sz, T::zero()]
}

/// Validity mask: texels inside some UV triangle.
pub fn uv_coverage<T: Scalar>(mesh: &Mesh<T>, uv_size: usize) -> Raster<T> {
    let frags = uv_fragments(mesh, uv_size);
    let mut m = Raster::zeros(uv_size, uv_size, 1);
    for (i, f) in frags.iter().enumerate() {
        if f.face >= 0 {
            m.data_mut()[i] = T::one();
        }
    }
    m
}

/// UV-resolution raster of mesh surface positions (object coordinates
/// normalized into [0,1] by a fixed box) plus its validity mask.
pub struct UvPositionMap<T> {
    pub positions: Raster<T>,
    pub validity: Raster<T>,
}

pub fn uv_position_map<T: Scalar>(
    mesh: &Mesh<T>,
    uv_size: usize,
    pos_box: ([f64; 3], [f64; 3]),
) -> UvPositionMap<T> {
    let frags = uv_fragments(mesh, uv_size);
    let mut positions = Raster::zeros(uv_size, uv_size, 3);
    let mut validity = Raster::zeros(uv_size, uv_size, 1);
    let (lo, hi) = pos_box;
    for ty in 0..uv_size {
        for tx in 0..uv_size {
            let f = &frags[ty * uv_size + tx];
            if f.face < 0 {
                continue;
            }
            validity.set(ty, tx, 0, T::one());
            let p = surface_point(mesh, f);
            for a in 0..3 {
                let norm = (p[a].to_f64_c() - lo[a]) / (hi[a] - lo[a]);
                positions.set(ty, tx, a, T::from_f64_c(norm));
            }
        }
    }
    UvPositionMap {
        positions,
        validity,
    }
}

pub(crate) fn surface_point<T: Scalar>(mesh: &Mesh<T>, f: &Fragment<T>) -> [T; 3] {
    let tri = mesh.triangles[f.face as usize];
    let mut p = [T::zero(); 3];
    for (k, &vi) in tri.iter().enumerate() {
        let v = mesh.vertices[vi as usize];
        for a in 0..3 {
            p[a] = p[a] + f.bary[k] * v[a];
        }
    }
    p
}

/// Minimum-depth face at an exact image point, over front-facing triangles,
/// ties to the lower face id; shared by visibility and landmark tests.
pub(crate) struct RayTester<T> {
    projected: Vec<[T; 3]>,
    tris: Vec<(usize, [usize; 3], T)>,
    grid: Vec<Vec<u32>>,
    cell: f64,
    cells_x: usize,
    cells_y: usize,
}

impl<T: Scalar> RayTester<T> {
    pub fn new(mesh: &Mesh<T>, scene: &Scene, extent: f64) -> Self {
        let projected = project_vertices(mesh, scene);
        let cell = 8.0;
        let cells_x = (extent / cell).ceil() as usize + 2;
        let cells_y = cells_x;
        let mut grid: Vec<Vec<u32>> = vec![Vec::new(); cells_x * cells_y];
        let mut tris = Vec::new();
        for (fi, tri) in mesh.triangles.iter().enumerate() {
            let idx = [tri[0] as usize, tri[1] as usize, tri[2] as usize];
            let (a, b, c) = (projected[idx[0]], projected[idx[1]], projected[idx[2]]);
            let area2 = edge(a[0], a[1], b[0], b[1], c[0], c[1]);
            if area2 < degenerate_eps::<T>() {
                continue; // degenerate or back-facing
            }
            let t_slot = tris.len();
            tris.push((fi, idx, area2));
            let xs = [a[0].to_f64_c(), b[0].to_f64_c(), c[0].to_f64_c()];
            let ys = [a[1].to_f64_c(), b[1].to_f64_c(), c[1].to_f64_c()];
            let gx0 = ((xs.iter().cloned().fold(f64::MAX, f64::min)) / cell).floor().max(0.0) as usize;
            let gx1 = ((xs.iter().cloned().fold(f64::MIN, f64::max)) / cell).floor().max(0.0) as usize;
            let gy0 = ((ys.iter().cloned().fold(f64::MAX, f64::min)) / cell).floor().max(0.0) as usize;
            let gy1 = ((ys.iter().cloned().fold(f64::MIN, f64::max)) / cell).floor().max(0.0) as usize;
            for gy in gy0..=gy1.min(cells_y - 1) {
                for gx in gx0..=gx1.min(cells_x - 1) {
                    grid[gy * cells_x + gx].push(t_slot as u32);
                }
            }
        }
        RayTester {
            projected,
            tris,
            grid,
            cell,
            cells_x,
            cells_y,
        }
    }

    /// (face, depth) of the nearest front-facing triangle covering the point.
    pub fn hit(&self, px: T, py: T) -> Option<(usize, T)> {
        let gx = (px.to_f64_c() / self.cell).floor();
        let gy = (py.to_f64_c() / self.cell).floor();
        if gx < 0.0 || gy < 0.0 || gx as usize >= self.cells_x || gy as usize >= self.cells_y {
            return None;
        }
        let mut best: Option<(usize, T)> = None;
        for &slot in &self.grid[gy as usize * self.cells_x + gx as usize] {
            let (fi, idx, area2) = self.tris[slot as usize];
            let verts = [
                self.projected[idx[0]],
                self.projected[idx[1]],
                self.projected[idx[2]],
            ];
            if let Some(bary) = point_in_triangle(&verts, area2, px, py) {
                let depth =
                    bary[0] * verts[0][2] + bary[1] * verts[1][2] + bary[2] * verts[2][2];
                // candidates arrive in ascending face id, so strict
                // improvement keeps the lower id on ties
                best = match best {
                    Some((_, bd)) if depth >= bd => best,
                    _ => Some((fi, depth)),
                };
            }
        }
        best
    }
}

/// Per-texel self-occlusion visibility: a texel is visible iff the nearest
/// front-facing triangle at its projected surface point is its own triangle.
pub fn uv_visibility<T: Scalar>(mesh: &Mesh<T>, scene: &Scene, uv_size: usize) -> Raster<T> {
    let frags = uv_fragments(mesh, uv_size);
    visibility_from_frags(mesh, scene, uv_size, &frags)
}

pub(crate) fn visibility_from_frags<T: Scalar>(
    mesh: &Mesh<T>,
    scene: &Scene,
    uv_size: usize,
    frags: &[Fragment<T>],
) -> Raster<T> {
    let extent = 4.0 * scene.scale + scene.trans[0].abs() + scene.trans[1].abs() + 64.0;
    let tester = RayTester::new(mesh, scene, extent);
    let proj = scene.projector();
    let mut vis = Raster::zeros(uv_size, uv_size, 1);
    for ty in 0..uv_size {
        for tx in 0..uv_size {
            let f = &frags[ty * uv_size + tx];
            if f.face < 0 {
                continue;
            }
            let p = surface_point(mesh, f);
            let q = proj.project(p);
            if q[0] < T::zero() || q[1] < T::zero() {
                continue;
            }
            if let Some((face, _)) = tester.hit(q[0], q[1]) {
                if face as i32 == f.face {
                    vis.set(ty, tx, 0, T::one());
                }
            }
        }
    }
    vis
}

/// Sample a masked image back into UV space through the (fitted) geometry.
/// A texel lands in the unwrap mask when it is self-occlusion visible and
/// all four bilinear source pixels lie inside the image mask; its value is
/// the bilinear image sample. Everything else stays zero.
pub fn unwrap<T: Scalar>(
    image: &Raster<T>,
    image_mask: &Raster<T>,
    mesh: &Mesh<T>,
    scene: &Scene,
    uv_size: usize,
) -> (Raster<T>, Raster<T>) {
    let frags = uv_fragments(mesh, uv_size);
    let vis = visibility_from_frags(mesh, scene, uv_size, &frags);
    let proj = scene.projector();
    let mut tex = Raster::zeros(uv_size, uv_size, image.channels());
    let mut mask = Raster::zeros(uv_size, uv_size, 1);
    for ty in 0..uv_size {
        for tx in 0..uv_size {
            if vis.get(ty, tx, 0) < T::one() {
                continue;
            }
            let f = &frags[ty * uv_size + tx];
            let p = surface_point(mesh, f);
            let q = proj.project(p);
            let inside = q[0].to_f64_c() >= 0.0
                && q[1].to_f64_c() >= 0.0
                && q[0].to_f64_c() <= image.width() as f64
                && q[1].to_f64_c() <= image.height() as f64;
            if !inside || !image_mask.full_support(q[0], q[1]) {
                continue;
            }
            mask.set(ty, tx, 0, T::one());
            for ch in 0..image.channels() {
                tex.set(ty, tx, ch, image.sample_bilinear(q[0], q[1], ch));
            }
        }
    }
    (tex, mask)
}
