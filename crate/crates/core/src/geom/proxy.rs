//! Procedural parametric head: an open lon/lat shell over an ellipsoid with
//! a nose, jaw taper, and smooth blendshape lobes. Topology, UV atlas and
//! landmark ids are identical across all faces; only vertex positions move.

use super::mesh::Mesh;
use crate::error::Result;
use crate::img::Raster;
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Longitude half-extent in degrees; the shell spans ±LON_MAX.
pub const LON_MAX: f64 = 110.0;
/// Latitude half-extent in degrees.
pub const LAT_MAX: f64 = 70.0;
/// Grid resolution: quads along longitude / latitude.
pub const N_LON: usize = 24;
pub const N_LAT: usize = 20;
/// Margin of the UV atlas inside [0,1]².
pub const UV_MARGIN: f64 = 0.05;
/// Blendshape counts.
pub const N_SHAPE: usize = 8;
pub const N_EXPR: usize = 4;
pub const N_LANDMARKS: usize = 16;

/// Blendshape coefficients, clamped to [-1, 1].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FaceParams {
    pub shape: Vec<f64>,
    pub expression: Vec<f64>,
}

impl FaceParams {
    pub fn zero() -> Self {
        FaceParams {
            shape: vec![0.0; N_SHAPE],
            expression: vec![0.0; N_EXPR],
        }
    }

    pub fn clamped(mut self) -> Self {
        for v in self.shape.iter_mut().chain(self.expression.iter_mut()) {
            *v = v.clamp(-1.0, 1.0);
        }
        self
    }

    /// Coefficients i.i.d. uniform in [-1, 1].
    pub fn sample(rng: &mut Rng) -> Self {
        FaceParams {
            shape: (0..N_SHAPE).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
            expression: (0..N_EXPR).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
        }
    }
}

enum LobeDir {
    /// Along the local radial direction.
    Radial,
    /// Along ±x with the sign of the longitude (outward on each side).
    OutwardX,
    /// Fixed axis.
    Y(f64),
    Z(f64),
}

struct Lobe {
    lon: f64,
    lat: f64,
    sigma_lon: f64,
    sigma_lat: f64,
    amp: f64,
    dir: LobeDir,
    mirrored: bool,
}

impl Lobe {
    fn eval(&self, lon: f64, lat: f64, dir_hat: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        let mut centers = vec![self.lon];
        if self.mirrored && self.lon != 0.0 {
            centers.push(-self.lon);
        }
        for c in centers {
            let dl = (lon - c) / self.sigma_lon;
            let dt = (lat - self.lat) / self.sigma_lat;
            let g = (-0.5 * (dl * dl + dt * dt)).exp();
            let v = match self.dir {
                LobeDir::Radial => [dir_hat[0], dir_hat[1], dir_hat[2]],
                LobeDir::OutwardX => [if c >= 0.0 { 1.0 } else { -1.0 }, 0.0, 0.0],
                LobeDir::Y(s) => [0.0, s, 0.0],
                LobeDir::Z(s) => [0.0, 0.0, s],
            };
            for a in 0..3 {
                out[a] += self.amp * g * v[a];
            }
        }
        out
    }
}

fn shape_lobes() -> Vec<Lobe> {
    vec![
        // head width
        Lobe { lon: 60.0, lat: 0.0, sigma_lon: 35.0, sigma_lat: 40.0, amp: 0.07, dir: LobeDir::Radial, mirrored: true },
        // skull/chin height
        Lobe { lon: 0.0, lat: 58.0, sigma_lon: 60.0, sigma_lat: 25.0, amp: 0.07, dir: LobeDir::Y(1.0), mirrored: false },
        // overall depth
        Lobe { lon: 0.0, lat: 0.0, sigma_lon: 60.0, sigma_lat: 50.0, amp: 0.05, dir: LobeDir::Z(1.0), mirrored: false },
        // cheek fullness
        Lobe { lon: 45.0, lat: -15.0, sigma_lon: 18.0, sigma_lat: 18.0, amp: 0.06, dir: LobeDir::Radial, mirrored: true },
        // jaw width
        Lobe { lon: 70.0, lat: -45.0, sigma_lon: 20.0, sigma_lat: 20.0, amp: 0.06, dir: LobeDir::Radial, mirrored: true },
        // nose size
        Lobe { lon: 0.0, lat: -8.0, sigma_lon: 10.0, sigma_lat: 9.0, amp: 0.06, dir: LobeDir::Z(1.0), mirrored: false },
        // brow ridge
        Lobe { lon: 0.0, lat: 30.0, sigma_lon: 30.0, sigma_lat: 10.0, amp: 0.04, dir: LobeDir::Z(1.0), mirrored: false },
        // chin prominence
        Lobe { lon: 0.0, lat: -60.0, sigma_lon: 16.0, sigma_lat: 12.0, amp: 0.05, dir: LobeDir::Radial, mirrored: false },
    ]
}

fn expression_lobes() -> Vec<Lobe> {
    vec![
        // jaw drop
        Lobe { lon: 0.0, lat: -50.0, sigma_lon: 25.0, sigma_lat: 15.0, amp: 0.05, dir: LobeDir::Y(-1.0), mirrored: false },
        // smile spread
        Lobe { lon: 30.0, lat: -32.0, sigma_lon: 10.0, sigma_lat: 8.0, amp: 0.04, dir: LobeDir::OutwardX, mirrored: true },
        // brow raise
        Lobe { lon: 22.0, lat: 34.0, sigma_lon: 12.0, sigma_lat: 8.0, amp: 0.035, dir: LobeDir::Y(1.0), mirrored: true },
        // cheek puff
        Lobe { lon: 40.0, lat: -20.0, sigma_lon: 15.0, sigma_lat: 12.0, amp: 0.04, dir: LobeDir::Radial, mirrored: true },
    ]
}

/// Atlas coordinate of a (lon, lat) pair in degrees.
pub fn lonlat_to_uv(lon: f64, lat: f64) -> [f64; 2] {
    let u = UV_MARGIN + (1.0 - 2.0 * UV_MARGIN) * (lon / LON_MAX + 1.0) / 2.0;
    let v = UV_MARGIN + (1.0 - 2.0 * UV_MARGIN) * (1.0 - (lat / LAT_MAX + 1.0) / 2.0);
    [u, v]
}

fn grid_vertex(lon: f64, lat: f64) -> u32 {
    let col = ((lon / LON_MAX + 1.0) / 2.0 * N_LON as f64).round() as usize;
    let row = ((lat / LAT_MAX + 1.0) / 2.0 * N_LAT as f64).round() as usize;
    (row.min(N_LAT) * (N_LON + 1) + col.min(N_LON)) as u32
}

/// The bundled head: neutral geometry, shared topology/atlas, blendshape
/// displacement bases, landmark ids.
pub struct ProxyHead<T> {
    base: Vec<[T; 3]>,
    basis: Vec<Vec<[T; 3]>>,
    triangles: Vec<[u32; 3]>,
    uv: Vec<[T; 2]>,
    landmarks: Vec<u32>,
}

impl<T: Scalar> Default for ProxyHead<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ProxyHead<T> {
    pub fn new() -> Self {
        let cols = N_LON + 1;
        let rows = N_LAT + 1;
        let mut base = Vec::with_capacity(rows * cols);
        let mut uv = Vec::with_capacity(rows * cols);
        let mut dirs = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let lat = -LAT_MAX + 2.0 * LAT_MAX * r as f64 / N_LAT as f64;
            for c in 0..cols {
                let lon = -LON_MAX + 2.0 * LON_MAX * c as f64 / N_LON as f64;
                let (p, d) = neutral_point(lon, lat);
                base.push([T::from_f64_c(p[0]), T::from_f64_c(p[1]), T::from_f64_c(p[2])]);
                dirs.push(d);
                let q = lonlat_to_uv(lon, lat);
                uv.push([T::from_f64_c(q[0]), T::from_f64_c(q[1])]);
            }
        }
        let mut triangles = Vec::with_capacity(N_LON * N_LAT * 2);
        for r in 0..N_LAT {
            for c in 0..N_LON {
                let v00 = (r * cols + c) as u32;
                let v01 = v00 + 1;
                let v10 = v00 + cols as u32;
                let v11 = v10 + 1;
                // wound so projected area is positive for front faces
                triangles.push([v00, v11, v01]);
                triangles.push([v00, v10, v11]);
            }
        }
        let all_lobes: Vec<Lobe> = shape_lobes().into_iter().chain(expression_lobes()).collect();
        let mut basis = Vec::with_capacity(all_lobes.len());
        for lobe in &all_lobes {
            let mut disp = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                let lat = -LAT_MAX + 2.0 * LAT_MAX * r as f64 / N_LAT as f64;
                for c in 0..cols {
                    let lon = -LON_MAX + 2.0 * LON_MAX * c as f64 / N_LON as f64;
                    let d = lobe.eval(lon, lat, dirs[r * cols + c]);
                    disp.push([T::from_f64_c(d[0]), T::from_f64_c(d[1]), T::from_f64_c(d[2])]);
                }
            }
            basis.push(disp);
        }
        let landmarks = vec![
            grid_vertex(-45.0, 16.0),
            grid_vertex(-20.0, 16.0),
            grid_vertex(20.0, 16.0),
            grid_vertex(45.0, 16.0),
            grid_vertex(0.0, -7.0),
            grid_vertex(-27.0, -34.0),
            grid_vertex(27.0, -34.0),
            grid_vertex(0.0, -28.0),
            grid_vertex(0.0, -63.0),
            grid_vertex(-62.0, -42.0),
            grid_vertex(62.0, -42.0),
            grid_vertex(-24.0, 34.0),
            grid_vertex(24.0, 34.0),
            grid_vertex(0.0, 53.0),
            grid_vertex(-85.0, 5.0),
            grid_vertex(85.0, 5.0),
        ];
        debug_assert_eq!(landmarks.len(), N_LANDMARKS);
        ProxyHead {
            base,
            basis,
            triangles,
            uv,
            landmarks,
        }
    }

    /// vertices = base + Σ wᵢ·Δᵢ; topology, atlas and landmarks constant.
    pub fn build_mesh(&self, params: &FaceParams) -> Mesh<T> {
        let p = params.clone().clamped();
        let mut verts = self.base.clone();
        let weights: Vec<f64> = p.shape.iter().chain(p.expression.iter()).copied().collect();
        for (w, disp) in weights.iter().zip(&self.basis) {
            if *w == 0.0 {
                continue;
            }
            let wt = T::from_f64_c(*w);
            for (v, d) in verts.iter_mut().zip(disp) {
                for a in 0..3 {
                    v[a] = v[a] + wt * d[a];
                }
            }
        }
        Mesh {
            vertices: verts,
            triangles: self.triangles.clone(),
            uv: self.uv.clone(),
            landmarks: self.landmarks.clone(),
        }
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.base.len()
    }

    /// Fixed normalization box for UV position map encoding.
    pub fn position_box() -> ([f64; 3], [f64; 3]) {
        ([-1.2, -1.3, -1.2], [1.2, 1.3, 1.4])
    }
}

/// Neutral surface point and its unit radial direction for (lon, lat) degrees.
fn neutral_point(lon: f64, lat: f64) -> ([f64; 3], [f64; 3]) {
    let (phi, theta) = (lon.to_radians(), lat.to_radians());
    let d = [phi.sin() * theta.cos(), theta.sin(), phi.cos() * theta.cos()];
    // ellipsoid radii: width, height, depth
    let (rx, ry, rz) = (0.78, 1.0, 0.88);
    let mut p = [rx * d[0], ry * d[1], rz * d[2]];
    // nose
    let g_nose = gauss2(lon, lat, 0.0, -8.0, 13.0, 10.0);
    p[2] += 0.16 * g_nose;
    // shallow eye sockets
    let g_eyes = gauss2(lon, lat, 24.0, 14.0, 9.0, 7.0) + gauss2(lon, lat, -24.0, 14.0, 9.0, 7.0);
    p[2] -= 0.02 * g_eyes;
    // jaw taper below the cheekbones
    if lat < -35.0 {
        let s = smoothstep(((-35.0 - lat) / 35.0).clamp(0.0, 1.0));
        p[0] *= 1.0 - 0.16 * s;
        p[2] *= 1.0 - 0.10 * s;
    }
    (p, d)
}

fn gauss2(lon: f64, lat: f64, c_lon: f64, c_lat: f64, s_lon: f64, s_lat: f64) -> f64 {
    let dl = (lon - c_lon) / s_lon;
    let dt = (lat - c_lat) / s_lat;
    (-0.5 * (dl * dl + dt * dt)).exp()
}

fn smoothstep(x: f64) -> f64 {
    x * x * (3.0 - 2.0 * x)
}

/// Named atlas regions used by texture synthesis, editing and tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Lips,
    LeftEye,
    RightEye,
    Brows,
    Beard,
    Forehead,
    Nose,
    LeftCheek,
    RightCheek,
    /// Far-side strips beyond ±95° longitude; back-facing at frontal pose.
    RearRims,
}

impl Region {
    pub const ALL: [Region; 10] = [
        Region::Lips,
        Region::LeftEye,
        Region::RightEye,
        Region::Brows,
        Region::Beard,
        Region::Forehead,
        Region::Nose,
        Region::LeftCheek,
        Region::RightCheek,
        Region::RearRims,
    ];

    pub fn parse(s: &str) -> Option<Region> {
        Some(match s {
            "lips" => Region::Lips,
            "left-eye" | "left_eye" => Region::LeftEye,
            "right-eye" | "right_eye" => Region::RightEye,
            "brows" => Region::Brows,
            "beard" => Region::Beard,
            "forehead" => Region::Forehead,
            "nose" => Region::Nose,
            "left-cheek" | "left_cheek" => Region::LeftCheek,
            "right-cheek" | "right_cheek" => Region::RightCheek,
            "rear-rims" | "rear_rims" => Region::RearRims,
            _ => return None,
        })
    }

    /// Inclusion boxes in (lon, lat) degrees, minus exclusion boxes.
    fn boxes(self) -> (Vec<[f64; 4]>, Vec<[f64; 4]>) {
        // [lon_min, lon_max, lat_min, lat_max]
        match self {
            Region::Lips => (vec![[-30.0, 30.0, -42.0, -24.0]], vec![]),
            Region::LeftEye => (vec![[-36.0, -12.0, 8.0, 24.0]], vec![]),
            Region::RightEye => (vec![[12.0, 36.0, 8.0, 24.0]], vec![]),
            Region::Brows => (vec![[-38.0, 38.0, 28.0, 42.0]], vec![]),
            Region::Beard => (
                vec![[-75.0, 75.0, -70.0, -25.0]],
                vec![[-30.0, 30.0, -42.0, -24.0]],
            ),
            Region::Forehead => (vec![[-45.0, 45.0, 42.0, 70.0]], vec![]),
            Region::Nose => (vec![[-12.0, 12.0, -18.0, 8.0]], vec![]),
            Region::LeftCheek => (vec![[-75.0, -32.0, -24.0, 12.0]], vec![]),
            Region::RightCheek => (vec![[32.0, 75.0, -24.0, 12.0]], vec![]),
            Region::RearRims => (
                vec![[-110.0, -95.0, -70.0, 70.0], [95.0, 110.0, -70.0, 70.0]],
                vec![],
            ),
        }
    }

    /// Region test in atlas coordinates.
    pub fn contains_uv(self, u: f64, v: f64) -> bool {
        let (inc, exc) = self.boxes();
        let inside = |b: &[f64; 4]| {
            let lo = lonlat_to_uv(b[0], b[3]);
            let hi = lonlat_to_uv(b[1], b[2]);
            u >= lo[0] && u <= hi[0] && v >= lo[1] && v <= hi[1]
        };
        inc.iter().any(inside) && !exc.iter().any(inside)
    }

    /// Binary mask over a uv_size² atlas raster.
    pub fn mask<T: Scalar>(self, uv_size: usize) -> Raster<T> {
        let mut m = Raster::zeros(uv_size, uv_size, 1);
        for y in 0..uv_size {
            let v = (y as f64 + 0.5) / uv_size as f64;
            for x in 0..uv_size {
                let u = (x as f64 + 0.5) / uv_size as f64;
                if self.contains_uv(u, v) {
                    m.set(y, x, 0, T::one());
                }
            }
        }
        m
    }
}

/// Deterministic mesh validation helper shared by tests.
pub fn validate_head<T: Scalar>(head: &ProxyHead<T>) -> Result<()> {
    head.build_mesh(&FaceParams::zero()).validate()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_size_matches_contract() {
        let head = ProxyHead::<f32>::new();
        assert_eq!(head.vertex_count(), (N_LON + 1) * (N_LAT + 1));
        assert_eq!(head.triangle_count(), N_LON * N_LAT * 2);
        assert!(head.vertex_count() >= 500 && head.vertex_count() <= 600);
        assert!(head.triangle_count() >= 900 && head.triangle_count() <= 1000);
        validate_head(&head).unwrap();
    }

    #[test]
    fn zero_weights_give_base_mesh() {
        let head = ProxyHead::<f32>::new();
        let m = head.build_mesh(&FaceParams::zero());
        for (v, b) in m.vertices.iter().zip(&head.base) {
            assert_eq!(v, b);
        }
    }

    #[test]
    fn blendshapes_are_linear() {
        let head = ProxyHead::<f64>::new();
        let mut rng = Rng::new(17);
        let p = FaceParams::sample(&mut rng);
        let neg = FaceParams {
            shape: p.shape.iter().map(|v| -v).collect(),
            expression: p.expression.iter().map(|v| -v).collect(),
        };
        let m_pos = head.build_mesh(&p);
        let m_neg = head.build_mesh(&neg);
        let base = head.build_mesh(&FaceParams::zero());
        for i in 0..m_pos.vertices.len() {
            for a in 0..3 {
                let dp = m_pos.vertices[i][a] - base.vertices[i][a];
                let dn = m_neg.vertices[i][a] - base.vertices[i][a];
                assert!((dp + dn).abs() < 1e-12, "negated weights must negate displacement");
            }
        }
        // additivity within the clamp region
        let half_a = FaceParams {
            shape: p.shape.iter().map(|v| v * 0.3).collect(),
            expression: p.expression.iter().map(|v| v * 0.3).collect(),
        };
        let half_b = FaceParams {
            shape: p.shape.iter().map(|v| v * 0.2).collect(),
            expression: p.expression.iter().map(|v| v * 0.2).collect(),
        };
        let sum = FaceParams {
            shape: p.shape.iter().map(|v| v * 0.5).collect(),
            expression: p.expression.iter().map(|v| v * 0.5).collect(),
        };
        let ma = head.build_mesh(&half_a);
        let mb = head.build_mesh(&half_b);
        let ms = head.build_mesh(&sum);
        for i in 0..ms.vertices.len() {
            for a in 0..3 {
                let da = ma.vertices[i][a] - base.vertices[i][a];
                let db = mb.vertices[i][a] - base.vertices[i][a];
                let ds = ms.vertices[i][a] - base.vertices[i][a];
                assert!((da + db - ds).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn extreme_weights_stay_valid() {
        let head = ProxyHead::<f32>::new();
        let ones = FaceParams {
            shape: vec![1.0; N_SHAPE],
            expression: vec![1.0; N_EXPR],
        };
        head.build_mesh(&ones).validate().unwrap();
        let m_ones = head.build_mesh(&FaceParams {
            shape: vec![-1.0; N_SHAPE],
            expression: vec![-1.0; N_EXPR],
        });
        m_ones.validate().unwrap();
    }

    #[test]
    fn clamping_applies_beyond_unit_range() {
        let head = ProxyHead::<f64>::new();
        let big = FaceParams {
            shape: vec![5.0; N_SHAPE],
            expression: vec![5.0; N_EXPR],
        };
        let unit = FaceParams {
            shape: vec![1.0; N_SHAPE],
            expression: vec![1.0; N_EXPR],
        };
        assert_eq!(head.build_mesh(&big).vertices, head.build_mesh(&unit).vertices);
    }

    #[test]
    fn regions_are_inside_atlas_and_disjoint_eyes() {
        let lips = Region::Lips.mask::<f32>(64);
        let le = Region::LeftEye.mask::<f32>(64);
        let re = Region::RightEye.mask::<f32>(64);
        assert!(lips.mask_area() > 0);
        assert!(le.mask_area() > 0 && re.mask_area() > 0);
        for i in 0..64 * 64 {
            assert!(le.data()[i] * re.data()[i] == 0.0);
        }
        // beard excludes lips
        let beard = Region::Beard.mask::<f32>(64);
        for i in 0..64 * 64 {
            assert!(beard.data()[i] * lips.data()[i] == 0.0);
        }
    }

    #[test]
    fn landmarks_are_fixed_and_distinct() {
        let h1 = ProxyHead::<f32>::new();
        let h2 = ProxyHead::<f32>::new();
        let m1 = h1.build_mesh(&FaceParams::zero());
        let mut rng = Rng::new(9);
        let m2 = h2.build_mesh(&FaceParams::sample(&mut rng));
        assert_eq!(m1.landmarks, m2.landmarks);
        let mut sorted = m1.landmarks.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), N_LANDMARKS);
    }
}
