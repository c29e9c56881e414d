//! Training-tuple assembly: mask algebra, the controlled fitting-error
//! perturbation, and the full per-face tensor set. The photo is rendered
//! with the true geometry; every geometry-dependent derivation (unwrap,
//! masks from the mesh, position maps) runs on the perturbed fit, which is
//! exactly how real 3DMM fitting error corrupts unwrapped textures.

use crate::error::{Error, Result};
use crate::geom::proxy::{FaceParams, ProxyHead};
use crate::geom::Scene;
use crate::img::{compose_masks, Raster};
use crate::raster::{
    project_landmarks, rasterize, render_texture, render_uv_position, unwrap, uv_position_map,
    FragmentBuffer,
};
use crate::rng::Rng;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// Fitting-error model: coefficient noise, rotation jitter in degrees,
/// translation jitter in pixels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitPerturbation {
    pub sigma_shape: f64,
    pub sigma_expr: f64,
    pub sigma_rot_deg: f64,
    pub sigma_trans_px: f64,
}

impl Default for FitPerturbation {
    fn default() -> Self {
        FitPerturbation {
            sigma_shape: 0.05,
            sigma_expr: 0.05,
            sigma_rot_deg: 3.0,
            sigma_trans_px: 1.0,
        }
    }
}

impl FitPerturbation {
    pub fn zero() -> Self {
        FitPerturbation {
            sigma_shape: 0.0,
            sigma_expr: 0.0,
            sigma_rot_deg: 0.0,
            sigma_trans_px: 0.0,
        }
    }
}

/// Jitters parameters and pose; light gain and occluders stay with the photo.
pub fn perturb_fit(
    params: &FaceParams,
    scene: &Scene,
    pert: &FitPerturbation,
    rng: &mut Rng,
) -> (FaceParams, Scene) {
    let params_fit = FaceParams {
        shape: params
            .shape
            .iter()
            .map(|v| v + rng.normal() * pert.sigma_shape)
            .collect(),
        expression: params
            .expression
            .iter()
            .map(|v| v + rng.normal() * pert.sigma_expr)
            .collect(),
    }
    .clamped();
    let scene_fit = Scene {
        yaw_deg: scene.yaw_deg + rng.normal() * pert.sigma_rot_deg,
        pitch_deg: scene.pitch_deg + rng.normal() * pert.sigma_rot_deg,
        roll_deg: scene.roll_deg + rng.normal() * pert.sigma_rot_deg,
        trans: [
            scene.trans[0] + rng.normal() * pert.sigma_trans_px,
            scene.trans[1] + rng.normal() * pert.sigma_trans_px,
        ],
        ..scene.clone()
    };
    (params_fit, scene_fit)
}

/// The full training tuple for one face.
#[derive(Debug, Clone)]
pub struct TrainingSample<T> {
    pub id: u64,
    /// Masked skin image (image domain).
    pub i_w: Raster<T>,
    /// Unwrapped masked UV texture.
    pub t_w: Raster<T>,
    /// UV mask of the unwrap.
    pub m_t: Raster<T>,
    /// Masked proxy UV texture (3DMM texture analog).
    pub t_m: Raster<T>,
    /// Masked UV position map.
    pub t_uv: Raster<T>,
    /// Masked rendered proxy image.
    pub i_m: Raster<T>,
    /// Masked rendered 2-D UV position map.
    pub i_uv: Raster<T>,
    /// Landmark blob image.
    pub i_lm: Raster<T>,
    /// Combined image-domain skin mask.
    pub m_i: Raster<T>,
    /// Complete UV position map of the fitted geometry (inference condition).
    pub y_uv: Raster<T>,
}

#[derive(Debug, Clone)]
pub struct PrepConfig {
    pub image_size: usize,
    pub uv_size: usize,
    /// Blur passes producing the detail-free proxy texture.
    pub proxy_blur_passes: usize,
    pub landmark_jitter_px: f64,
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig {
            image_size: 64,
            uv_size: 64,
            proxy_blur_passes: 6,
            landmark_jitter_px: 1.0,
        }
    }
}

/// Wild-image skin mask: head coverage minus occluder polygons. The
/// fragment buffer must come from the true (unperturbed) scene.
pub fn skin_mask_wild<T: Scalar>(scene: &Scene, frag: &FragmentBuffer<T>) -> Raster<T> {
    let coverage = frag.coverage();
    if scene.occluders.is_empty() {
        return coverage;
    }
    let occ = scene.occluder_mask::<T>(frag.height, frag.width);
    let mut out = coverage;
    for (o, &m) in out.data_mut().iter_mut().zip(occ.data()) {
        if m > T::from_f64_c(0.5) {
            *o = T::zero();
        }
    }
    out
}

/// All Fig.-S.1-style tensors for one face. Fails with a diagnostic when
/// the combined skin mask is empty (the manual-filtering analog).
#[allow(clippy::too_many_arguments)]
pub fn prepare_sample<T: Scalar>(
    head: &ProxyHead<T>,
    gt_albedo: &Raster<T>,
    params_true: &FaceParams,
    scene_true: &Scene,
    params_fit: &FaceParams,
    scene_fit: &Scene,
    cfg: &PrepConfig,
    rng: &mut Rng,
) -> Result<TrainingSample<T>> {
    let mesh_true = head.build_mesh(params_true);
    let mesh_fit = head.build_mesh(params_fit);
    let frag_true = rasterize(&mesh_true, scene_true, cfg.image_size);
    let frag_fit = rasterize(&mesh_fit, scene_fit, cfg.image_size);

    // the "photo": gain-lit render of the complete ground-truth texture
    let photo = render_texture(&frag_true, gt_albedo, scene_true.light_gain);

    let m_i_w = skin_mask_wild(scene_true, &frag_true);
    let m_i_m = frag_fit.coverage();
    let m_i = compose_masks(&m_i_w, &m_i_m)?;
    if m_i.mask_area() == 0 {
        return Err(Error::invalid(
            "prepare_sample",
            "combined skin mask is empty",
        ));
    }
    let i_w = photo.masked(&m_i)?;

    // unwrap the masked photo through the FITTED geometry
    let (t_w, m_t) = unwrap(&i_w, &m_i, &mesh_fit, scene_fit, cfg.uv_size);

    // proxy texture: low-frequency detail-free approximation
    let proxy_tex = gt_albedo.blur3(cfg.proxy_blur_passes);
    let t_m = proxy_tex.masked(&m_t)?;

    let pm = uv_position_map(&mesh_fit, cfg.uv_size, ProxyHead::<T>::position_box());
    let t_uv = pm.positions.masked(&m_t)?;
    let y_uv = pm.positions.masked(&pm.validity)?;

    let i_m = render_texture(&frag_fit, &t_m, [1.0, 1.0, 1.0]);
    let i_uv = render_uv_position(&frag_fit).masked(&m_i)?;

    // detected-landmark analog: true projection plus pixel jitter
    let lm = project_landmarks(
        &mesh_true,
        scene_true,
        cfg.image_size,
        Some(rng),
        cfg.landmark_jitter_px,
    );

    Ok(TrainingSample {
        id: 0,
        i_w,
        t_w,
        m_t,
        t_m,
        t_uv,
        i_m,
        i_uv,
        i_lm: lm.image,
        m_i,
        y_uv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthesize_gt_texture, TextureConfig};
    use crate::geom::{Occluder, OccluderKind};

    fn setup() -> (ProxyHead<f32>, Raster<f32>, FaceParams, Scene) {
        let head = ProxyHead::<f32>::new();
        let mut rng = Rng::new(9);
        let (tex, _) = synthesize_gt_texture::<f32>(64, &TextureConfig::default(), &mut rng);
        let params = FaceParams::sample(&mut rng);
        let scene = Scene::frontal(64);
        (head, tex, params, scene)
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let (_, _, params, scene) = setup();
        let mut rng = Rng::new(1);
        let (p, s) = perturb_fit(&params, &scene, &FitPerturbation::zero(), &mut rng);
        assert_eq!(p, params);
        assert_eq!(s, scene);
    }

    #[test]
    fn same_seed_same_jitter() {
        let (_, _, params, scene) = setup();
        let pert = FitPerturbation::default();
        let mut r1 = Rng::new(4);
        let mut r2 = Rng::new(4);
        let (p1, s1) = perturb_fit(&params, &scene, &pert, &mut r1);
        let (p2, s2) = perturb_fit(&params, &scene, &pert, &mut r2);
        assert_eq!(p1, p2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn no_occluders_mask_equals_coverage() {
        let (head, _, params, scene) = setup();
        let mesh = head.build_mesh(&params);
        let frag = rasterize(&mesh, &scene, 64);
        let m = skin_mask_wild(&scene, &frag);
        assert_eq!(m.data(), frag.coverage().data());
    }

    #[test]
    fn full_screen_occluder_empties_mask() {
        let (head, _, params, mut scene) = setup();
        scene.occluders.push(Occluder {
            kind: OccluderKind::Hat,
            polygon: vec![[-1.0, -1.0], [65.0, -1.0], [65.0, 65.0], [-1.0, 65.0]],
        });
        let mesh = head.build_mesh(&params);
        let frag = rasterize(&mesh, &scene, 64);
        let m = skin_mask_wild(&scene, &frag);
        assert_eq!(m.mask_area(), 0);
    }

    #[test]
    fn occluder_mask_area_matches_pixel_scan() {
        let (head, _, params, mut scene) = setup();
        scene.occluders.push(Occluder {
            kind: OccluderKind::Glasses,
            polygon: vec![[20.0, 20.0], [40.0, 22.0], [38.0, 40.0], [18.0, 38.0]],
        });
        let mesh = head.build_mesh(&params);
        let frag = rasterize(&mesh, &scene, 64);
        let m = skin_mask_wild(&scene, &frag);
        // per-pixel oracle: coverage minus covered-polygon overlap
        let cov = frag.coverage();
        let mut want = 0usize;
        for y in 0..64 {
            for x in 0..64 {
                let covered = cov.get(y, x, 0) > 0.5;
                let occluded = scene
                    .occluders
                    .iter()
                    .any(|o| o.contains(x as f64 + 0.5, y as f64 + 0.5));
                if covered && !occluded {
                    want += 1;
                }
            }
        }
        assert_eq!(m.mask_area(), want);
        assert!(m.mask_area() < cov.mask_area());
    }

    #[test]
    fn prepared_sample_respects_mask_postconditions() {
        let (head, tex, params, scene) = setup();
        let pert = FitPerturbation::default();
        let mut rng = Rng::new(31);
        let (pf, sf) = perturb_fit(&params, &scene, &pert, &mut rng);
        let s = prepare_sample(
            &head,
            &tex,
            &params,
            &scene,
            &pf,
            &sf,
            &PrepConfig::default(),
            &mut rng,
        )
        .unwrap();
        // masked tensors are exactly 0 outside their masks
        for i in 0..64 * 64 {
            let m_t = s.m_t.data()[i] > 0.5;
            let m_i = s.m_i.data()[i] > 0.5;
            for c in 0..3 {
                if !m_t {
                    assert_eq!(s.t_w.data()[i * 3 + c], 0.0);
                    assert_eq!(s.t_m.data()[i * 3 + c], 0.0);
                    assert_eq!(s.t_uv.data()[i * 3 + c], 0.0);
                }
                if !m_i {
                    assert_eq!(s.i_w.data()[i * 3 + c], 0.0);
                    assert_eq!(s.i_uv.data()[i * 3 + c], 0.0);
                }
            }
        }
    }

    #[test]
    fn zero_perturbation_frontal_i_m_matches_render_of_t_m() {
        let (head, tex, params, scene) = setup();
        let mut rng = Rng::new(8);
        let s = prepare_sample(
            &head,
            &tex,
            &params,
            &scene,
            &params,
            &scene,
            &PrepConfig::default(),
            &mut rng,
        )
        .unwrap();
        let mesh = head.build_mesh(&params);
        let frag = rasterize(&mesh, &scene, 64);
        let want = render_texture(&frag, &s.t_m, [1.0, 1.0, 1.0]);
        assert_eq!(s.i_m.data(), want.data());
    }

    #[test]
    fn prepare_sample_is_deterministic() {
        let (head, tex, params, scene) = setup();
        let pert = FitPerturbation::default();
        let run = || {
            let mut rng = Rng::new(5);
            let (pf, sf) = perturb_fit(&params, &scene, &pert, &mut rng);
            prepare_sample(
                &head,
                &tex,
                &params,
                &scene,
                &pf,
                &sf,
                &PrepConfig::default(),
                &mut rng,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.t_w.data(), b.t_w.data());
        assert_eq!(a.i_lm.data(), b.i_lm.data());
    }
}
