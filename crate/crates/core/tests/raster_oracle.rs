//! Brute-force rasterization oracle: for every pixel, test every triangle
//! and keep the minimum depth (ties to the lower face id). The production
//! rasterizer must agree exactly, tie-breaks included.

use uvforge_core::geom::proxy::{FaceParams, ProxyHead};
use uvforge_core::geom::Scene;
use uvforge_core::raster::rasterize;
use uvforge_core::rng::Rng;

/// Shared coverage definition, written out independently of the production
/// traversal: positive-area triangles, pixel centers, top-left ownership.
fn oracle_pixel(
    projected: &[[f32; 3]],
    triangles: &[[u32; 3]],
    px: f32,
    py: f32,
) -> (i32, f32) {
    let mut best_face = -1i32;
    let mut best_depth = f32::INFINITY;
    for (fi, tri) in triangles.iter().enumerate() {
        let a = projected[tri[0] as usize];
        let b = projected[tri[1] as usize];
        let c = projected[tri[2] as usize];
        let area2 = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        if area2.abs() < 1e-12 || area2 < 0.0 {
            continue;
        }
        let e = |ax: f32, ay: f32, bx: f32, by: f32| -> (f32, bool) {
            let w = (bx - ax) * (py - ay) - (by - ay) * (px - ax);
            let dx = bx - ax;
            let dy = by - ay;
            let owned = dy < 0.0 || (dy == 0.0 && dx > 0.0);
            (w, owned)
        };
        let (w0, o0) = e(b[0], b[1], c[0], c[1]);
        let (w1, o1) = e(c[0], c[1], a[0], a[1]);
        let (w2, o2) = e(a[0], a[1], b[0], b[1]);
        let inside = (w0 > 0.0 || (w0 == 0.0 && o0))
            && (w1 > 0.0 || (w1 == 0.0 && o1))
            && (w2 > 0.0 || (w2 == 0.0 && o2));
        if !inside {
            continue;
        }
        let inv = 1.0 / area2;
        let depth = (w0 * a[2] + w1 * b[2] + w2 * c[2]) * inv;
        if depth < best_depth {
            best_depth = depth;
            best_face = fi as i32;
        }
    }
    (best_face, best_depth)
}

#[test]
fn rasterizer_matches_brute_force_oracle_on_random_scenes() {
    let size = 64usize;
    let head = ProxyHead::<f32>::new();
    let mut rng = Rng::new(2024);
    let t0 = std::time::Instant::now();
    for scene_idx in 0..50 {
        let params = FaceParams::sample(&mut rng);
        let mesh = head.build_mesh(&params);
        let scene = Scene {
            yaw_deg: rng.uniform_in(-60.0, 60.0),
            pitch_deg: rng.uniform_in(-15.0, 15.0),
            roll_deg: rng.uniform_in(-8.0, 8.0),
            scale: size as f64 * rng.uniform_in(0.34, 0.44),
            trans: [
                size as f64 / 2.0 + rng.uniform_in(-2.0, 2.0),
                size as f64 / 2.0 + rng.uniform_in(-2.0, 2.0),
            ],
            light_gain: [1.0, 1.0, 1.0],
            occluders: Vec::new(),
        };
        let buf = rasterize(&mesh, &scene, size);

        let proj = scene.projector();
        let projected: Vec<[f32; 3]> = mesh.vertices.iter().map(|&v| proj.project(v)).collect();
        for y in 0..size {
            for x in 0..size {
                let (face, depth) =
                    oracle_pixel(&projected, &mesh.triangles, x as f32 + 0.5, y as f32 + 0.5);
                let got = buf.at(y, x);
                assert_eq!(
                    got.face, face,
                    "scene {scene_idx} pixel ({x},{y}): face {} vs oracle {face}",
                    got.face
                );
                if face >= 0 {
                    assert!(
                        (got.depth - depth).abs() < 1e-5,
                        "scene {scene_idx} pixel ({x},{y}): depth {} vs {depth}",
                        got.depth
                    );
                }
            }
        }
    }
    let dt = t0.elapsed();
    println!("rasterizer oracle: 50 scenes in {:.2}s", dt.as_secs_f64());
    assert!(dt.as_secs_f64() < 60.0, "oracle run must stay under a minute");
}
