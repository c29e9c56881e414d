//! Procedural synthetic world: ground-truth textures, scenes, and corpus
//! generation. Ground-truth complete UV textures are written but flagged
//! eval-only; training inputs come exclusively from the derived tensors.

use crate::dataprep::{prepare_sample, FitPerturbation, PrepConfig, TrainingSample};
use crate::error::{Error, Result};
use crate::geom::proxy::{FaceParams, ProxyHead, Region};
use crate::geom::{Occluder, OccluderKind, Scene};
use crate::img::{io as imgio, Raster};
use crate::rng::Rng;
use crate::scalar::Scalar;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

/// Detail probabilities and amplitudes for texture synthesis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TextureConfig {
    pub freckle_prob: f64,
    pub wrinkle_prob: f64,
    pub beard_prob: f64,
    pub makeup_prob: f64,
}

impl Default for TextureConfig {
    fn default() -> Self {
        TextureConfig {
            freckle_prob: 0.7,
            wrinkle_prob: 0.7,
            beard_prob: 0.45,
            makeup_prob: 0.4,
        }
    }
}

impl TextureConfig {
    /// All detail branches off: pure smooth base tone.
    pub fn none() -> Self {
        TextureConfig {
            freckle_prob: 0.0,
            wrinkle_prob: 0.0,
            beard_prob: 0.0,
            makeup_prob: 0.0,
        }
    }
}

/// Which detail branches fired for one face (kept for region tests).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TextureTraits {
    pub freckles: bool,
    pub wrinkles: bool,
    pub beard: bool,
    pub makeup: bool,
}

/// Complete ground-truth albedo texture: smooth skin base, brows/eyes/lips
/// always present, then freckles, wrinkle strokes, beard patch and makeup by
/// probability. Values stay in [0,1].
pub fn synthesize_gt_texture<T: Scalar>(
    uv_size: usize,
    cfg: &TextureConfig,
    rng: &mut Rng,
) -> (Raster<T>, TextureTraits) {
    let n = uv_size;
    // base skin tone with a gentle smooth gradient (baked shading analog)
    let r0 = rng.uniform_in(0.55, 0.85);
    let g0 = r0 * rng.uniform_in(0.78, 0.92);
    let b0 = g0 * rng.uniform_in(0.75, 0.95);
    let gu = rng.uniform_in(-0.06, 0.06);
    let gv = rng.uniform_in(-0.06, 0.06);
    let mut tex = Raster::<f64>::zeros(n, n, 3);
    for y in 0..n {
        let v = (y as f64 + 0.5) / n as f64;
        for x in 0..n {
            let u = (x as f64 + 0.5) / n as f64;
            let shade = gu * (u - 0.5) + gv * (v - 0.5);
            tex.set(y, x, 0, (r0 + shade).clamp(0.02, 0.98));
            tex.set(y, x, 1, (g0 + shade).clamp(0.02, 0.98));
            tex.set(y, x, 2, (b0 + shade).clamp(0.02, 0.98));
        }
    }
    let traits = TextureTraits {
        freckles: rng.bernoulli(cfg.freckle_prob),
        wrinkles: rng.bernoulli(cfg.wrinkle_prob),
        beard: rng.bernoulli(cfg.beard_prob),
        makeup: rng.bernoulli(cfg.makeup_prob),
    };
    let any_detail = cfg.freckle_prob > 0.0
        || cfg.wrinkle_prob > 0.0
        || cfg.beard_prob > 0.0
        || cfg.makeup_prob > 0.0;
    if any_detail {
        paint_features(&mut tex, n, &traits, rng);
    }
    let mut out = Raster::<T>::zeros(n, n, 3);
    for (o, v) in out.data_mut().iter_mut().zip(tex.data()) {
        *o = T::from_f64_c(v.clamp(0.0, 1.0));
    }
    (out, traits)
}

fn region_weight(mask: &Raster<f64>, y: usize, x: usize) -> f64 {
    mask.get(y, x, 0)
}

fn paint_features(tex: &mut Raster<f64>, n: usize, traits: &TextureTraits, rng: &mut Rng) {
    // permanent features: brows, eyes, lips
    let brows = Region::Brows.mask::<f64>(n).blur3(1);
    let brow_amp = rng.uniform_in(0.12, 0.28);
    darken(tex, &brows, brow_amp);
    for eye in [Region::LeftEye, Region::RightEye] {
        let m = eye.mask::<f64>(n);
        let soft = m.blur3(1);
        darken(tex, &soft, 0.08);
        // iris dot at region centroid
        if let Some((cy, cx)) = centroid(&m) {
            splat_dot(tex, cy, cx, 1.1, [0.18, 0.14, 0.12], 0.85);
        }
    }
    let lips = Region::Lips.mask::<f64>(n).blur3(1);
    tint(tex, &lips, [0.62, 0.33, 0.34], 0.3);

    if traits.freckles {
        let density = rng.uniform_in(0.02, 0.06);
        let amp = rng.uniform_in(0.05, 0.10);
        let mut layer = Raster::<f64>::zeros(n, n, 1);
        for y in 0..n {
            for x in 0..n {
                if rng.bernoulli(density) {
                    layer.set(y, x, 0, amp * rng.uniform_in(0.5, 1.0));
                }
            }
        }
        let layer = layer.blur3(1);
        darken(tex, &layer, 1.0);
    }
    if traits.wrinkles {
        let count = 2 + rng.below(4) as usize;
        let mut layer = Raster::<f64>::zeros(n, n, 1);
        for _ in 0..count {
            let cy = rng.uniform_in(0.15, 0.75) * n as f64;
            let cx = rng.uniform_in(0.2, 0.8) * n as f64;
            let len = rng.uniform_in(0.1, 0.3) * n as f64;
            let dir = rng.uniform_in(0.0, std::f64::consts::PI);
            let bend = rng.uniform_in(-0.3, 0.3);
            let depth = rng.uniform_in(0.06, 0.13);
            let steps = (len * 2.0) as usize + 2;
            for s in 0..steps {
                let t = s as f64 / (steps - 1) as f64 - 0.5;
                let ang = dir + bend * t;
                let py = cy + t * len * ang.sin();
                let px = cx + t * len * ang.cos();
                splat_gray(&mut layer, py, px, 0.8, depth);
            }
        }
        let layer = layer.blur3(1);
        darken(tex, &layer, 1.0);
    }
    if traits.beard {
        let beard = Region::Beard.mask::<f64>(n).blur3(2);
        let amp = rng.uniform_in(0.18, 0.38);
        // patchy density field
        let mut noise = Raster::<f64>::zeros(n, n, 1);
        for v in noise.data_mut() {
            *v = rng.uniform_in(0.55, 1.0);
        }
        let noise = noise.blur3(1);
        for y in 0..n {
            for x in 0..n {
                let w = region_weight(&beard, y, x) * noise.get(y, x, 0) * amp;
                for c in 0..3 {
                    let v = tex.get(y, x, c);
                    tex.set(y, x, c, (v - w * v).max(0.0));
                }
            }
        }
    }
    if traits.makeup {
        let lips = Region::Lips.mask::<f64>(n).blur3(1);
        let strength = rng.uniform_in(0.35, 0.7);
        tint(tex, &lips, [0.70, 0.18, 0.25], strength);
        // eyeliner: darken a thin rim under the eye regions
        for eye in [Region::LeftEye, Region::RightEye] {
            let m = eye.mask::<f64>(n);
            let soft = m.blur3(1);
            let mut rim = Raster::<f64>::zeros(n, n, 1);
            for y in 0..n {
                for x in 0..n {
                    let w = (soft.get(y, x, 0) - m.get(y, x, 0)).max(0.0);
                    rim.set(y, x, 0, w * 2.0);
                }
            }
            darken(tex, &rim, rng.uniform_in(0.2, 0.4));
        }
    }
}

fn darken(tex: &mut Raster<f64>, weight: &Raster<f64>, amp: f64) {
    for y in 0..tex.height() {
        for x in 0..tex.width() {
            let w = weight.get(y, x, 0) * amp;
            if w <= 0.0 {
                continue;
            }
            for c in 0..3 {
                let v = tex.get(y, x, c);
                tex.set(y, x, c, (v - w).max(0.0));
            }
        }
    }
}

fn tint(tex: &mut Raster<f64>, weight: &Raster<f64>, color: [f64; 3], strength: f64) {
    for y in 0..tex.height() {
        for x in 0..tex.width() {
            let w = weight.get(y, x, 0) * strength;
            if w <= 0.0 {
                continue;
            }
            for c in 0..3 {
                let v = tex.get(y, x, c);
                tex.set(y, x, c, v * (1.0 - w) + color[c] * w);
            }
        }
    }
}

fn centroid(mask: &Raster<f64>) -> Option<(f64, f64)> {
    let mut sy = 0.0;
    let mut sx = 0.0;
    let mut cnt = 0.0;
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(y, x, 0) > 0.5 {
                sy += y as f64 + 0.5;
                sx += x as f64 + 0.5;
                cnt += 1.0;
            }
        }
    }
    if cnt == 0.0 {
        None
    } else {
        Some((sy / cnt, sx / cnt))
    }
}

fn splat_dot(tex: &mut Raster<f64>, cy: f64, cx: f64, sigma: f64, color: [f64; 3], strength: f64) {
    let r = (3.0 * sigma).ceil() as i64;
    for dy in -r..=r {
        for dx in -r..=r {
            let y = cy as i64 + dy;
            let x = cx as i64 + dx;
            if y < 0 || x < 0 || y >= tex.height() as i64 || x >= tex.width() as i64 {
                continue;
            }
            let d2 = ((y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2))
                / (2.0 * sigma * sigma);
            let w = (-d2).exp() * strength;
            for c in 0..3 {
                let v = tex.get(y as usize, x as usize, c);
                tex.set(y as usize, x as usize, c, v * (1.0 - w) + color[c] * w);
            }
        }
    }
}

fn splat_gray(layer: &mut Raster<f64>, cy: f64, cx: f64, sigma: f64, amp: f64) {
    let r = (3.0 * sigma).ceil() as i64;
    for dy in -r..=r {
        for dx in -r..=r {
            let y = cy as i64 + dy;
            let x = cx as i64 + dx;
            if y < 0 || x < 0 || y >= layer.height() as i64 || x >= layer.width() as i64 {
                continue;
            }
            let d2 = ((y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2))
                / (2.0 * sigma * sigma);
            let w = (-d2).exp() * amp;
            let cur = layer.get(y as usize, x as usize, 0);
            if w > cur {
                layer.set(y as usize, x as usize, 0, w);
            }
        }
    }
}

/// Pose/lighting/occluder sampling ranges.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneConfig {
    pub image_size: usize,
    pub yaw_range_deg: f64,
    pub pitch_range_deg: f64,
    pub roll_range_deg: f64,
    pub occluder_prob: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            image_size: 64,
            yaw_range_deg: 60.0,
            pitch_range_deg: 15.0,
            roll_range_deg: 8.0,
            occluder_prob: 0.3,
        }
    }
}

/// Yaw/pitch uniform in range, light gain dims each channel into [0.8, 1],
/// and 1-2 occluder polygons with the configured probability.
pub fn sample_scene(cfg: &SceneConfig, rng: &mut Rng) -> Scene {
    let size = cfg.image_size as f64;
    let mut scene = Scene {
        yaw_deg: rng.uniform_in(-cfg.yaw_range_deg, cfg.yaw_range_deg),
        pitch_deg: rng.uniform_in(-cfg.pitch_range_deg, cfg.pitch_range_deg),
        roll_deg: rng.uniform_in(-cfg.roll_range_deg, cfg.roll_range_deg),
        scale: size * rng.uniform_in(0.34, 0.42),
        trans: [
            size / 2.0 + rng.uniform_in(-2.0, 2.0),
            size / 2.0 + rng.uniform_in(-2.0, 2.0),
        ],
        light_gain: [
            rng.uniform_in(0.8, 1.0),
            rng.uniform_in(0.8, 1.0),
            rng.uniform_in(0.8, 1.0),
        ],
        occluders: Vec::new(),
    };
    if rng.bernoulli(cfg.occluder_prob) {
        let count = 1 + rng.below(2) as usize;
        for _ in 0..count {
            scene.occluders.push(sample_occluder(cfg, &scene, rng));
        }
    }
    scene
}

fn sample_occluder(cfg: &SceneConfig, scene: &Scene, rng: &mut Rng) -> Occluder {
    let size = cfg.image_size as f64;
    let cx = scene.trans[0];
    let cy = scene.trans[1];
    let head_r = scene.scale; // roughly one object unit
    match rng.below(3) {
        0 => {
            // hair fringe: slanted band across the upper face
            let y0 = cy - head_r * rng.uniform_in(0.55, 0.9);
            let h = rng.uniform_in(0.15, 0.3) * head_r;
            let tilt = rng.uniform_in(-4.0, 4.0);
            Occluder {
                kind: OccluderKind::Hair,
                polygon: vec![
                    [0.0, y0 - tilt],
                    [size, y0 + tilt],
                    [size, y0 + h + tilt],
                    [0.0, y0 + h - tilt],
                ],
            }
        }
        1 => {
            // glasses/hand analog: convex blob near the eye line
            let bx = cx + rng.uniform_in(-0.5, 0.5) * head_r;
            let by = cy + rng.uniform_in(-0.45, 0.1) * head_r;
            let r = rng.uniform_in(0.12, 0.3) * head_r;
            let mut poly = Vec::new();
            for k in 0..6 {
                let a = k as f64 / 6.0 * std::f64::consts::TAU;
                let rr = r * rng.uniform_in(0.85, 1.15);
                poly.push([bx + rr * a.cos(), by + rr * a.sin()]);
            }
            Occluder {
                kind: OccluderKind::Glasses,
                polygon: poly,
            }
        }
        _ => {
            // hat brim: wide band at the top
            let y1 = cy - head_r * rng.uniform_in(0.45, 0.75);
            Occluder {
                kind: OccluderKind::Hat,
                polygon: vec![[0.0, -1.0], [size, -1.0], [size, y1], [0.0, y1]],
            }
        }
    }
}

/// Everything needed to (re)generate a corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub train_count: usize,
    pub eval_count: usize,
    pub image_size: usize,
    pub uv_size: usize,
    pub seed: u64,
    pub scene: SceneConfig,
    pub texture: TextureConfig,
    pub perturbation: FitPerturbation,
    /// PNG previews for the first N samples.
    pub preview_count: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            train_count: 2000,
            eval_count: 200,
            image_size: 64,
            uv_size: 64,
            seed: 7,
            scene: SceneConfig::default(),
            texture: TextureConfig::default(),
            perturbation: FitPerturbation::default(),
            preview_count: 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: u64,
    pub split: String,
    pub seed: u64,
    pub params_true: FaceParams,
    pub scene_true: Scene,
    pub params_fit: FaceParams,
    pub scene_fit: Scene,
    pub traits: TextureTraits,
    /// Training tensor files, name → relative path.
    pub files: std::collections::BTreeMap<String, String>,
    /// Ground-truth UV texture file; never read by training code.
    pub gt_uv_file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub version: String,
    pub config: CorpusConfig,
    pub train_count: usize,
    pub eval_count: usize,
    pub skipped: usize,
}

pub struct CorpusManifest {
    pub header: CorpusHeader,
    pub records: Vec<SampleRecord>,
    pub root: PathBuf,
}

pub const TENSOR_NAMES: [&str; 10] = [
    "I_w", "T_w", "M_T", "T_m", "T_uv", "I_m", "I_uv", "I_lm", "M_I", "Y_uv",
];

/// Generate the full corpus under `out_dir`; per-sample child RNGs keyed by
/// (seed, id) make parallel and serial runs byte-identical.
pub fn generate_corpus<T: Scalar>(cfg: &CorpusConfig, out_dir: &Path) -> Result<CorpusManifest> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let head = ProxyHead::<T>::new();
    let root_rng = Rng::new(cfg.seed);
    let total = cfg.train_count + cfg.eval_count;
    let results: Vec<Result<Option<SampleRecord>>> = (0..total as u64)
        .into_par_iter()
        .map(|id| generate_one::<T>(cfg, &head, &root_rng, id, out_dir))
        .collect();
    let mut records = Vec::new();
    let mut skipped = 0usize;
    for r in results {
        match r? {
            Some(rec) => records.push(rec),
            None => skipped += 1,
        }
    }
    let header = CorpusHeader {
        version: "uvforge-corpus-1".to_string(),
        config: cfg.clone(),
        train_count: records.iter().filter(|r| r.split == "train").count(),
        eval_count: records.iter().filter(|r| r.split == "eval").count(),
        skipped,
    };
    let manifest = CorpusManifest {
        header,
        records,
        root: out_dir.to_path_buf(),
    };
    write_manifest(&manifest)?;
    Ok(manifest)
}

fn generate_one<T: Scalar>(
    cfg: &CorpusConfig,
    head: &ProxyHead<T>,
    root_rng: &Rng,
    id: u64,
    out_dir: &Path,
) -> Result<Option<SampleRecord>> {
    let mut rng = root_rng.child(id);
    let params_true = FaceParams::sample(&mut rng);
    let (gt_albedo, traits) = synthesize_gt_texture::<T>(cfg.uv_size, &cfg.texture, &mut rng);
    let prep_cfg = PrepConfig {
        image_size: cfg.image_size,
        uv_size: cfg.uv_size,
        ..PrepConfig::default()
    };
    // up to 5 scene re-draws when the combined mask comes out empty
    let mut attempt = 0;
    let sample = loop {
        let scene_true = sample_scene(
            &SceneConfig {
                image_size: cfg.image_size,
                ..cfg.scene.clone()
            },
            &mut rng,
        );
        let (params_fit, scene_fit) =
            crate::dataprep::perturb_fit(&params_true, &scene_true, &cfg.perturbation, &mut rng);
        match prepare_sample(
            head,
            &gt_albedo,
            &params_true,
            &scene_true,
            &params_fit,
            &scene_fit,
            &prep_cfg,
            &mut rng,
        ) {
            Ok(s) => break Some((s, scene_true, params_fit, scene_fit)),
            Err(Error::Invalid { op: "prepare_sample", .. }) if attempt < 5 => {
                attempt += 1;
                continue;
            }
            Err(Error::Invalid { op: "prepare_sample", .. }) => break None,
            Err(e) => return Err(e),
        }
    };
    let Some((sample, scene_true, params_fit, scene_fit)) = sample else {
        return Ok(None);
    };

    // gain-baked complete texture: the recovery target in the wild domain
    let mut gt_uv = gt_albedo.clone();
    for y in 0..cfg.uv_size {
        for x in 0..cfg.uv_size {
            for c in 0..3 {
                let v = gt_uv.get(y, x, c);
                gt_uv.set(y, x, c, v * T::from_f64_c(scene_true.light_gain[c]));
            }
        }
    }

    let split = if id < cfg.train_count as u64 { "train" } else { "eval" };
    let mut files = std::collections::BTreeMap::new();
    let tensors: [(&str, &Raster<T>); 10] = [
        ("I_w", &sample.i_w),
        ("T_w", &sample.t_w),
        ("M_T", &sample.m_t),
        ("T_m", &sample.t_m),
        ("T_uv", &sample.t_uv),
        ("I_m", &sample.i_m),
        ("I_uv", &sample.i_uv),
        ("I_lm", &sample.i_lm),
        ("M_I", &sample.m_i),
        ("Y_uv", &sample.y_uv),
    ];
    for (name, raster) in tensors {
        let fname = format!("{id:06}_{name}.uvf");
        imgio::write_uvf(&out_dir.join(&fname), raster)?;
        files.insert(name.to_string(), fname);
    }
    let gt_name = format!("{id:06}_gt_uv.uvf");
    imgio::write_uvf(&out_dir.join(&gt_name), &gt_uv)?;
    if (id as usize) < cfg.preview_count {
        let sheet = imgio::contact_sheet(&[
            &sample.i_w,
            &sample.t_w,
            &sample.t_m,
            &sample.i_m,
            &gt_uv,
        ])?;
        imgio::write_png(&out_dir.join(format!("{id:06}_preview.png")), &sheet)?;
    }
    Ok(Some(SampleRecord {
        id,
        split: split.to_string(),
        seed: cfg.seed,
        params_true,
        scene_true,
        params_fit,
        scene_fit,
        traits,
        files,
        gt_uv_file: gt_name,
    }))
}

pub const MANIFEST_NAME: &str = "manifest.jsonl";

fn write_manifest(m: &CorpusManifest) -> Result<()> {
    let path = m.root.join(MANIFEST_NAME);
    let mut out = String::new();
    out.push_str(&serde_json::to_string(&m.header).expect("header json"));
    out.push('\n');
    for rec in &m.records {
        out.push_str(&serde_json::to_string(rec).expect("record json"));
        out.push('\n');
    }
    std::fs::write(&path, out).map_err(|e| Error::io(path, e))
}

/// Loaded corpus with instrumented file access for the isolation tests.
pub struct Corpus {
    pub header: CorpusHeader,
    pub records: Vec<SampleRecord>,
    pub root: PathBuf,
    accessed: Mutex<Vec<PathBuf>>,
}

impl Corpus {
    pub fn open(dir: &Path) -> Result<Corpus> {
        let path = dir.join(MANIFEST_NAME);
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut lines = text.lines();
        let header: CorpusHeader = serde_json::from_str(lines.next().ok_or(Error::Format {
            what: "manifest",
            msg: "empty".into(),
        })?)
        .map_err(|e| Error::Format {
            what: "manifest",
            msg: e.to_string(),
        })?;
        let mut records = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(line).map_err(|e| Error::Format {
                what: "manifest",
                msg: e.to_string(),
            })?);
        }
        Ok(Corpus {
            header,
            records,
            root: dir.to_path_buf(),
            accessed: Mutex::new(Vec::new()),
        })
    }

    pub fn split_indices(&self, split: &str) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    fn read_raster<T: Scalar>(&self, fname: &str) -> Result<Raster<T>> {
        let path = self.root.join(fname);
        self.accessed.lock().unwrap().push(path.clone());
        imgio::read_uvf(&path)
    }

    /// Training tensors for one record; never touches the eval-only file.
    pub fn load_training<T: Scalar>(&self, idx: usize) -> Result<TrainingSample<T>> {
        let rec = &self.records[idx];
        Ok(TrainingSample {
            id: rec.id,
            i_w: self.read_raster(&rec.files["I_w"])?,
            t_w: self.read_raster(&rec.files["T_w"])?,
            m_t: self.read_raster(&rec.files["M_T"])?,
            t_m: self.read_raster(&rec.files["T_m"])?,
            t_uv: self.read_raster(&rec.files["T_uv"])?,
            i_m: self.read_raster(&rec.files["I_m"])?,
            i_uv: self.read_raster(&rec.files["I_uv"])?,
            i_lm: self.read_raster(&rec.files["I_lm"])?,
            m_i: self.read_raster(&rec.files["M_I"])?,
            y_uv: self.read_raster(&rec.files["Y_uv"])?,
        })
    }

    /// Ground-truth complete UV texture; evaluation only.
    pub fn load_gt_uv<T: Scalar>(&self, idx: usize) -> Result<Raster<T>> {
        let rec = &self.records[idx];
        self.read_raster(&rec.gt_uv_file)
    }

    /// Paths read so far (for the isolation assertion in tests).
    pub fn accessed_files(&self) -> Vec<PathBuf> {
        self.accessed.lock().unwrap().clone()
    }

    pub fn eval_only_files(&self) -> Vec<PathBuf> {
        self.records
            .iter()
            .map(|r| self.root.join(&r.gt_uv_file))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_detail_texture_is_smooth() {
        let mut rng = Rng::new(5);
        let (tex, _) = synthesize_gt_texture::<f32>(64, &TextureConfig::none(), &mut rng);
        for c in 0..3 {
            let vals: Vec<f64> = (0..64 * 64).map(|i| tex.data()[i * 3 + c] as f64).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(var < 1e-3, "channel {c} variance {var}");
        }
    }

    #[test]
    fn same_seed_gives_identical_texture() {
        let cfg = TextureConfig::default();
        let mut r1 = Rng::new(42);
        let mut r2 = Rng::new(42);
        let (a, _) = synthesize_gt_texture::<f32>(64, &cfg, &mut r1);
        let (b, _) = synthesize_gt_texture::<f32>(64, &cfg, &mut r2);
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn texture_values_stay_in_unit_range() {
        let cfg = TextureConfig {
            freckle_prob: 1.0,
            wrinkle_prob: 1.0,
            beard_prob: 1.0,
            makeup_prob: 1.0,
        };
        for seed in 0..5 {
            let mut rng = Rng::new(seed);
            let (tex, traits) = synthesize_gt_texture::<f32>(64, &cfg, &mut rng);
            assert!(traits.beard && traits.makeup);
            for &v in tex.data() {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn beard_darkens_its_region_measurably() {
        let on = TextureConfig {
            beard_prob: 1.0,
            freckle_prob: 0.0,
            wrinkle_prob: 0.0,
            makeup_prob: 0.0,
        };
        let beard_mask = Region::Beard.mask::<f32>(64);
        let cheek_mask = Region::Forehead.mask::<f32>(64);
        let mut lumin_gap = Vec::new();
        for seed in 100..120 {
            let mut rng = Rng::new(seed);
            let (tex, traits) = synthesize_gt_texture::<f32>(64, &on, &mut rng);
            assert!(traits.beard);
            let beard_mean = tex.masked_channel_means(&beard_mask).unwrap();
            let skin_mean = tex.masked_channel_means(&cheek_mask).unwrap();
            let lum = |m: &[f64]| 0.299 * m[0] + 0.587 * m[1] + 0.114 * m[2];
            lumin_gap.push(lum(&skin_mean) - lum(&beard_mean));
        }
        let mean_gap = lumin_gap.iter().sum::<f64>() / lumin_gap.len() as f64;
        // measured margin: beard region sits well below clean skin
        assert!(mean_gap > 0.08, "beard luminance gap {mean_gap}");
    }

    #[test]
    fn face_params_sample_is_centered() {
        let mut rng = Rng::new(77);
        let n = 1000;
        let mut sums = vec![0.0; crate::geom::proxy::N_SHAPE];
        for _ in 0..n {
            let p = FaceParams::sample(&mut rng);
            for (s, v) in sums.iter_mut().zip(&p.shape) {
                *s += v;
            }
        }
        for s in sums {
            let mean = s / n as f64;
            assert!(mean.abs() < 0.1, "coefficient mean {mean}");
        }
    }

    #[test]
    fn scene_sampling_respects_ranges() {
        let cfg = SceneConfig {
            yaw_range_deg: 60.0,
            occluder_prob: 0.0,
            ..SceneConfig::default()
        };
        let mut rng = Rng::new(3);
        let mut min_yaw = f64::MAX;
        let mut max_yaw = f64::MIN;
        for _ in 0..1000 {
            let s = sample_scene(&cfg, &mut rng);
            assert!(s.occluders.is_empty());
            assert!(s.scale > 0.0);
            assert!(s.light_gain.iter().all(|&g| g > 0.0));
            min_yaw = min_yaw.min(s.yaw_deg);
            max_yaw = max_yaw.max(s.yaw_deg);
        }
        assert!(min_yaw < -58.0 && min_yaw >= -60.0, "min yaw {min_yaw}");
        assert!(max_yaw > 58.0 && max_yaw <= 60.0, "max yaw {max_yaw}");
    }

    #[test]
    fn frontal_pose_range_zero_is_frontal() {
        let cfg = SceneConfig {
            yaw_range_deg: 0.0,
            pitch_range_deg: 0.0,
            roll_range_deg: 0.0,
            occluder_prob: 0.0,
            ..SceneConfig::default()
        };
        let mut rng = Rng::new(3);
        let s = sample_scene(&cfg, &mut rng);
        assert_eq!(s.yaw_deg, 0.0);
        assert_eq!(s.pitch_deg, 0.0);
    }

    #[test]
    fn occluder_fraction_tracks_probability() {
        let cfg = SceneConfig {
            occluder_prob: 0.3,
            ..SceneConfig::default()
        };
        let mut rng = Rng::new(11);
        let n = 500;
        let with = (0..n)
            .filter(|_| !sample_scene(&cfg, &mut rng).occluders.is_empty())
            .count();
        let frac = with as f64 / n as f64;
        assert!((0.25..=0.35).contains(&frac), "occluder fraction {frac}");
    }
}
