//! Weak-perspective camera, per-channel light gain, and 2-D occluder
//! polygons standing in for hair/glasses/hats.

use crate::img::Raster;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OccluderKind {
    Hair,
    Glasses,
    Hat,
}

/// Convex polygon in image pixel coordinates, vertices in order.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Occluder {
    pub kind: OccluderKind,
    pub polygon: Vec<[f64; 2]>,
}

impl Occluder {
    pub fn contains(&self, px: f64, py: f64) -> bool {
        let n = self.polygon.len();
        if n < 3 {
            return false;
        }
        let mut sign = 0.0;
        for i in 0..n {
            let a = self.polygon[i];
            let b = self.polygon[(i + 1) % n];
            let e = (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0]);
            if e.abs() < 1e-12 {
                continue;
            }
            if sign == 0.0 {
                sign = e.signum();
            } else if e.signum() != sign {
                return false;
            }
        }
        true
    }
}

/// Weak-perspective pose: rotation (yaw/pitch/roll), uniform scale in pixels
/// per object unit, 2-D pixel translation; plus per-channel light gain and
/// occluders.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Scene {
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    pub roll_deg: f64,
    pub scale: f64,
    pub trans: [f64; 2],
    pub light_gain: [f64; 3],
    pub occluders: Vec<Occluder>,
}

impl Scene {
    pub fn frontal(image_size: usize) -> Self {
        Scene {
            yaw_deg: 0.0,
            pitch_deg: 0.0,
            roll_deg: 0.0,
            scale: image_size as f64 * 0.40,
            trans: [image_size as f64 / 2.0, image_size as f64 / 2.0],
            light_gain: [1.0, 1.0, 1.0],
            occluders: Vec::new(),
        }
    }

    /// Row-major object→camera rotation, R = Rz(roll)·Rx(pitch)·Ry(yaw).
    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let (sy, cy) = self.yaw_deg.to_radians().sin_cos();
        let (sp, cp) = self.pitch_deg.to_radians().sin_cos();
        let (sr, cr) = self.roll_deg.to_radians().sin_cos();
        // positive yaw turns the head's right side toward the camera
        let ry = [[cy, 0.0, -sy], [0.0, 1.0, 0.0], [sy, 0.0, cy]];
        let rx = [[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]];
        let rz = [[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]];
        mat_mul(&rz, &mat_mul(&rx, &ry))
    }

    /// Project an object-space point: pixel x/y plus depth (smaller = nearer).
    pub fn project<T: Scalar>(&self, p: [T; 3]) -> [T; 3] {
        self.projector().project(p)
    }

    /// Cached projection (rotation computed once).
    pub fn projector(&self) -> Projector {
        Projector {
            r: self.rotation(),
            scale: self.scale,
            trans: self.trans,
        }
    }

    /// 1 where any occluder covers the pixel center.
    pub fn occluder_mask<T: Scalar>(&self, h: usize, w: usize) -> Raster<T> {
        let mut m = Raster::zeros(h, w, 1);
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                if self.occluders.iter().any(|o| o.contains(px, py)) {
                    m.set(y, x, 0, T::one());
                }
            }
        }
        m
    }
}

/// Weak-perspective projection with the rotation matrix fixed.
pub struct Projector {
    r: [[f64; 3]; 3],
    scale: f64,
    trans: [f64; 2],
}

impl Projector {
    pub fn project<T: Scalar>(&self, p: [T; 3]) -> [T; 3] {
        let pf = [p[0].to_f64_c(), p[1].to_f64_c(), p[2].to_f64_c()];
        let r = &self.r;
        let cam = [
            r[0][0] * pf[0] + r[0][1] * pf[1] + r[0][2] * pf[2],
            r[1][0] * pf[0] + r[1][1] * pf[1] + r[1][2] * pf[2],
            r[2][0] * pf[0] + r[2][1] * pf[1] + r[2][2] * pf[2],
        ];
        let x = self.scale * cam[0] + self.trans[0];
        let y = -self.scale * cam[1] + self.trans[1];
        [T::from_f64_c(x), T::from_f64_c(y), T::from_f64_c(-cam[2])]
    }
}

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}
