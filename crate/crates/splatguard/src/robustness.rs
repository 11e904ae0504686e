//! Image-level distortions and the robustness harnesses: watermark recovery
//! under image/model distortions, edit deterrence under model distortions,
//! and watermark recovery after 3D editing.
//!
//! Every distortion is a pure, seed-deterministic function; zero-strength
//! parameters are exact identities. The jpeg_like distortion is a
//! self-contained 8x8 DCT quantization round trip with the standard table
//! scaling and 4:2:0 chroma subsampling, so tables are reproducible without
//! an external codec.

use crate::camera::CameraView;
use crate::editloop::{self, EditConfig};
use crate::editor::SurrogateEditor;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::{clip_metrics, ClipMetrics, EmbedderPair};
use crate::parallel;
use crate::renderer;
use crate::rng;
use crate::scene::{self, GaussianScene};
use crate::watermark::{bit_accuracy, decode_bits, Message, WatermarkKey};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistortionKind {
    Noise,
    Rotation,
    Scaling,
    Blur,
    Crop,
    JpegLike,
}

impl DistortionKind {
    pub fn name(&self) -> &'static str {
        match self {
            DistortionKind::Noise => "noise",
            DistortionKind::Rotation => "rotation",
            DistortionKind::Scaling => "scaling",
            DistortionKind::Blur => "blur",
            DistortionKind::Crop => "crop",
            DistortionKind::JpegLike => "jpeg",
        }
    }
}

impl std::str::FromStr for DistortionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" => Ok(DistortionKind::Noise),
            "rotation" => Ok(DistortionKind::Rotation),
            "scaling" => Ok(DistortionKind::Scaling),
            "blur" => Ok(DistortionKind::Blur),
            "crop" => Ok(DistortionKind::Crop),
            "jpeg" | "jpeg_like" => Ok(DistortionKind::JpegLike),
            other => Err(Error::InvalidParam(format!("unknown distortion {other:?}"))),
        }
    }
}

/// One image distortion: kind, its single parameter (sigma, max angle,
/// scale factor, sigma, kept area fraction, or quality), and a seed for the
/// randomized ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionSpec {
    pub kind: DistortionKind,
    pub parameter: f64,
    pub seed: u64,
}

impl DistortionSpec {
    pub fn new(kind: DistortionKind, parameter: f64, seed: u64) -> DistortionSpec {
        DistortionSpec { kind, parameter, seed }
    }

    fn validate(&self) -> Result<()> {
        let p = self.parameter;
        let ok = match self.kind {
            DistortionKind::Noise | DistortionKind::Blur => p >= 0.0,
            DistortionKind::Rotation => (0.0..=std::f64::consts::PI).contains(&p),
            DistortionKind::Scaling | DistortionKind::Crop => p > 0.0 && p <= 1.0,
            DistortionKind::JpegLike => (1.0..=100.0).contains(&p),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!(
                "parameter {p} out of range for {}",
                self.kind.name()
            )))
        }
    }

    /// The benchmark's six image distortions: noise sigma 0.01, rotation
    /// within +-pi/6, scaling to 75%, blur sigma 0.1, crop to 40% area,
    /// jpeg quality 50.
    pub fn standard_set(seed: u64) -> Vec<DistortionSpec> {
        vec![
            DistortionSpec::new(DistortionKind::Noise, 0.01, seed),
            DistortionSpec::new(DistortionKind::Rotation, std::f64::consts::PI / 6.0, seed),
            DistortionSpec::new(DistortionKind::Scaling, 0.75, seed),
            DistortionSpec::new(DistortionKind::Blur, 0.1, seed),
            DistortionSpec::new(DistortionKind::Crop, 0.40, seed),
            DistortionSpec::new(DistortionKind::JpegLike, 50.0, seed),
        ]
    }
}

/// Apply one distortion. Zero-strength parameters (sigma 0, angle 0,
/// factor 1, fraction 1) return the input unchanged.
pub fn distort_image(image: &Image, spec: &DistortionSpec) -> Result<Image> {
    spec.validate()?;
    let p = spec.parameter;
    match spec.kind {
        DistortionKind::Noise => {
            if p == 0.0 {
                return Ok(image.clone());
            }
            let mut r = rng::stream(spec.seed, "img-noise", 0);
            let mut out = image.clone();
            for v in out.data.iter_mut() {
                *v = (*v + p * rng::normal(&mut r)).clamp(0.0, 1.0);
            }
            Ok(out)
        }
        DistortionKind::Rotation => {
            if p == 0.0 {
                return Ok(image.clone());
            }
            let mut r = rng::stream(spec.seed, "img-rotation", 0);
            let angle = rng::uniform(&mut r, -p, p);
            Ok(rotate_bilinear(image, angle))
        }
        DistortionKind::Scaling => {
            if p == 1.0 {
                return Ok(image.clone());
            }
            let w2 = ((image.width as f64 * p).round() as usize).max(1);
            let h2 = ((image.height as f64 * p).round() as usize).max(1);
            Ok(image.resize(w2, h2).resize(image.width, image.height))
        }
        DistortionKind::Blur => {
            if p == 0.0 {
                return Ok(image.clone());
            }
            Ok(gaussian_blur(image, p))
        }
        DistortionKind::Crop => {
            if p == 1.0 {
                return Ok(image.clone());
            }
            let side = p.sqrt();
            let w2 = ((image.width as f64 * side).round() as usize).clamp(1, image.width);
            let h2 = ((image.height as f64 * side).round() as usize).clamp(1, image.height);
            let mut r = rng::stream(spec.seed, "img-crop", 0);
            let x0 = if image.width > w2 { r.gen_range(0..=image.width - w2) } else { 0 };
            let y0 = if image.height > h2 { r.gen_range(0..=image.height - h2) } else { 0 };
            let mut window = Image::zeros(w2, h2);
            for y in 0..h2 {
                for x in 0..w2 {
                    window.set_pixel(x, y, image.pixel(x0 + x, y0 + y));
                }
            }
            Ok(window.resize(image.width, image.height))
        }
        DistortionKind::JpegLike => Ok(jpeg_like(image, p as u32)),
    }
}

fn rotate_bilinear(image: &Image, angle: f64) -> Image {
    let (w, h) = (image.width, image.height);
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let (sin, cos) = angle.sin_cos();
    let mut out = Image::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            // inverse map: rotate the output pixel back into source coords
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            let sx = cos * dx + sin * dy + cx - 0.5;
            let sy = -sin * dx + cos * dy + cy - 0.5;
            if sx < -0.5 || sy < -0.5 || sx > w as f64 - 0.5 || sy > h as f64 - 0.5 {
                continue; // black fill
            }
            out.set_pixel(x, y, image.sample_bilinear(sx, sy));
        }
    }
    out
}

fn gaussian_blur(image: &Image, sigma: f64) -> Image {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    let mut sum = 0.0;
    for i in -radius..=radius {
        let v = (-(i * i) as f64 / (2.0 * sigma * sigma)).exp();
        kernel.push(v);
        sum += v;
    }
    for v in kernel.iter_mut() {
        *v /= sum;
    }
    let (w, h) = (image.width, image.height);
    let clamp_x = |x: isize| x.clamp(0, w as isize - 1) as usize;
    let clamp_y = |y: isize| y.clamp(0, h as isize - 1) as usize;
    let mut horiz = Image::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for (i, kv) in kernel.iter().enumerate() {
                let sx = clamp_x(x as isize + i as isize - radius);
                let p = image.pixel(sx, y);
                for c in 0..3 {
                    acc[c] += kv * p[c];
                }
            }
            horiz.set_pixel(x, y, acc);
        }
    }
    let mut out = Image::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for (i, kv) in kernel.iter().enumerate() {
                let sy = clamp_y(y as isize + i as isize - radius);
                let p = horiz.pixel(x, sy);
                for c in 0..3 {
                    acc[c] += kv * p[c];
                }
            }
            out.set_pixel(x, y, acc);
        }
    }
    out
}

// standard base quantization tables (luma / chroma)
const QT_LUMA: [f64; 64] = [
    16.0, 11.0, 10.0, 16.0, 24.0, 40.0, 51.0, 61.0, //
    12.0, 12.0, 14.0, 19.0, 26.0, 58.0, 60.0, 55.0, //
    14.0, 13.0, 16.0, 24.0, 40.0, 57.0, 69.0, 56.0, //
    14.0, 17.0, 22.0, 29.0, 51.0, 87.0, 80.0, 62.0, //
    18.0, 22.0, 37.0, 56.0, 68.0, 109.0, 103.0, 77.0, //
    24.0, 35.0, 55.0, 64.0, 81.0, 104.0, 113.0, 92.0, //
    49.0, 64.0, 78.0, 87.0, 103.0, 121.0, 120.0, 101.0, //
    72.0, 92.0, 95.0, 98.0, 112.0, 100.0, 103.0, 99.0,
];
const QT_CHROMA: [f64; 64] = [
    17.0, 18.0, 24.0, 47.0, 99.0, 99.0, 99.0, 99.0, //
    18.0, 21.0, 26.0, 66.0, 99.0, 99.0, 99.0, 99.0, //
    24.0, 26.0, 56.0, 99.0, 99.0, 99.0, 99.0, 99.0, //
    47.0, 66.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0, //
    99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0, //
    99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0, //
    99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0, //
    99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0,
];

// canonical quality-to-table scaling: 5000/Q below 50, 200 - 2Q at or above
fn scaled_table(base: &[f64; 64], quality: u32) -> [f64; 64] {
    let q = quality.clamp(1, 100);
    let scale = if q < 50 { 5000.0 / q as f64 } else { 200.0 - 2.0 * q as f64 };
    let mut out = [0.0; 64];
    for (o, b) in out.iter_mut().zip(base.iter()) {
        *o = ((b * scale + 50.0) / 100.0).floor().clamp(1.0, 255.0);
    }
    out
}

fn dct_8x8(block: &[f64; 64]) -> [f64; 64] {
    let mut out = [0.0; 64];
    for u in 0..8 {
        for v in 0..8 {
            let cu = if u == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
            let cv = if v == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
            let mut acc = 0.0;
            for y in 0..8 {
                for x in 0..8 {
                    acc += block[y * 8 + x]
                        * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos()
                        * ((2 * y + 1) as f64 * v as f64 * std::f64::consts::PI / 16.0).cos();
                }
            }
            out[v * 8 + u] = 0.25 * cu * cv * acc;
        }
    }
    out
}

fn idct_8x8(coeffs: &[f64; 64]) -> [f64; 64] {
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            let mut acc = 0.0;
            for u in 0..8 {
                for v in 0..8 {
                    let cu = if u == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
                    let cv = if v == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
                    acc += cu
                        * cv
                        * coeffs[v * 8 + u]
                        * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos()
                        * ((2 * y + 1) as f64 * v as f64 * std::f64::consts::PI / 16.0).cos();
                }
            }
            out[y * 8 + x] = 0.25 * acc;
        }
    }
    out
}

// quantization round trip of one plane (values around [-128, 127])
fn quantize_plane(plane: &mut Vec<f64>, w: usize, h: usize, table: &[f64; 64]) {
    // pad to multiples of 8 by edge replication
    let pw = w.div_ceil(8) * 8;
    let ph = h.div_ceil(8) * 8;
    let mut padded = vec![0.0; pw * ph];
    for y in 0..ph {
        for x in 0..pw {
            padded[y * pw + x] = plane[y.min(h - 1) * w + x.min(w - 1)];
        }
    }
    for by in (0..ph).step_by(8) {
        for bx in (0..pw).step_by(8) {
            let mut block = [0.0; 64];
            for y in 0..8 {
                for x in 0..8 {
                    block[y * 8 + x] = padded[(by + y) * pw + bx + x];
                }
            }
            let mut coeffs = dct_8x8(&block);
            for (c, q) in coeffs.iter_mut().zip(table.iter()) {
                *c = (*c / q).round() * q;
            }
            let back = idct_8x8(&coeffs);
            for y in 0..8 {
                for x in 0..8 {
                    padded[(by + y) * pw + bx + x] = back[y * 8 + x];
                }
            }
        }
    }
    for y in 0..h {
        for x in 0..w {
            plane[y * w + x] = padded[y * pw + x];
        }
    }
}

/// Block-DCT quantization round trip with 4:2:0 chroma subsampling; a
/// self-contained jpeg-equivalent distortion.
pub fn jpeg_like(image: &Image, quality: u32) -> Image {
    let (w, h) = (image.width, image.height);
    // RGB [0,1] -> YCbCr around [0,255]
    let mut yp = vec![0.0; w * h];
    let mut cb = vec![0.0; w * h];
    let mut cr = vec![0.0; w * h];
    for i in 0..w * h {
        let r = image.data[i * 3] * 255.0;
        let g = image.data[i * 3 + 1] * 255.0;
        let b = image.data[i * 3 + 2] * 255.0;
        yp[i] = 0.299 * r + 0.587 * g + 0.114 * b - 128.0;
        cb[i] = -0.168_736 * r - 0.331_264 * g + 0.5 * b;
        cr[i] = 0.5 * r - 0.418_688 * g - 0.081_312 * b;
    }
    // 4:2:0 subsample chroma by 2x2 averaging
    let cw = w.div_ceil(2);
    let ch = h.div_ceil(2);
    let subsample = |plane: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; cw * ch];
        for y in 0..ch {
            for x in 0..cw {
                let mut acc = 0.0;
                let mut n = 0.0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let sy = 2 * y + dy;
                        let sx = 2 * x + dx;
                        if sy < h && sx < w {
                            acc += plane[sy * w + sx];
                            n += 1.0;
                        }
                    }
                }
                out[y * cw + x] = acc / n;
            }
        }
        out
    };
    let mut cb_s = subsample(&cb);
    let mut cr_s = subsample(&cr);

    let luma_table = scaled_table(&QT_LUMA, quality);
    let chroma_table = scaled_table(&QT_CHROMA, quality);
    quantize_plane(&mut yp, w, h, &luma_table);
    quantize_plane(&mut cb_s, cw, ch, &chroma_table);
    quantize_plane(&mut cr_s, cw, ch, &chroma_table);

    let mut out = Image::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let yy = yp[i] + 128.0;
            let cbv = cb_s[(y / 2) * cw + x / 2];
            let crv = cr_s[(y / 2) * cw + x / 2];
            let r = yy + 1.402 * crv;
            let g = yy - 0.344_136 * cbv - 0.714_136 * crv;
            let b = yy + 1.772 * cbv;
            out.data[i * 3] = (r / 255.0).clamp(0.0, 1.0);
            out.data[i * 3 + 1] = (g / 255.0).clamp(0.0, 1.0);
            out.data[i * 3 + 2] = (b / 255.0).clamp(0.0, 1.0);
        }
    }
    out
}

/// Parameters of the three model-level distortions applied directly to the
/// protected scene.
#[derive(Debug, Clone, Copy)]
pub struct ModelDistortions {
    pub noise_sigma: f64,
    pub prune_fraction: f64,
    pub clone_fraction: f64,
    pub seed: u64,
}

impl Default for ModelDistortions {
    fn default() -> Self {
        ModelDistortions { noise_sigma: 0.05, prune_fraction: 0.1, clone_fraction: 0.1, seed: 33 }
    }
}

pub const MODEL_DISTORTION_NAMES: [&str; 3] = ["model_noise", "model_prune", "model_clone"];

fn apply_model_distortion(
    scene: &GaussianScene,
    name: &str,
    md: &ModelDistortions,
) -> Result<GaussianScene> {
    match name {
        "none" => Ok(scene.clone()),
        "model_noise" => scene::distort_noise(scene, md.noise_sigma, md.seed),
        "model_prune" => scene::distort_prune(scene, md.prune_fraction, md.seed),
        "model_clone" => scene::distort_clone(scene, md.clone_fraction, md.seed),
        other => Err(Error::InvalidParam(format!("unknown model distortion {other:?}"))),
    }
}

/// One harness table: ordered (column, value) cells plus a fixed header.
#[derive(Debug, Clone, PartialEq)]
pub struct HarnessTable {
    pub scene_id: String,
    pub columns: Vec<String>,
    pub values: Vec<f64>,
}

impl HarnessTable {
    pub fn to_csv(&self) -> String {
        format!(
            "scene,{}\n{},{}\n",
            self.columns.join(","),
            self.scene_id,
            self.values.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(",")
        )
    }

    pub fn value(&self, column: &str) -> Option<f64> {
        self.columns.iter().position(|c| c == column).map(|i| self.values[i])
    }
}

fn mean_bit_accuracy(
    scene: &GaussianScene,
    views: &[CameraView],
    key: &WatermarkKey,
    message: &Message,
    image_spec: Option<(&DistortionSpec, u64)>,
) -> Result<f64> {
    let per: Vec<Result<f64>> = parallel::map_chunks(views.len(), |vi| {
        let img = renderer::render(scene, &views[vi], None)?.image;
        let img = match image_spec {
            // distortion randomness is resolved per (view, seed) so tables
            // are reproducible cell by cell
            Some((spec, base_seed)) => {
                let mut s = *spec;
                s.seed = base_seed
                    .wrapping_mul(1_000_003)
                    .wrapping_add(vi as u64);
                distort_image(&img, &s)?
            }
            None => img,
        };
        bit_accuracy(&decode_bits(&img, key)?, message)
    });
    let mut acc = 0.0;
    for r in per {
        acc += r?;
    }
    Ok(acc / views.len() as f64)
}

/// Watermark-recovery robustness table: bit accuracy with no distortion,
/// under each model-level distortion, and under each image distortion.
pub fn wm_robustness_harness(
    protected: &GaussianScene,
    key: &WatermarkKey,
    message: &Message,
    views: &[CameraView],
    image_specs: &[DistortionSpec],
    model: &ModelDistortions,
) -> Result<HarnessTable> {
    if views.is_empty() {
        return Err(Error::InvalidParam("harness needs views".into()));
    }
    let mut columns = vec!["none".to_string()];
    let mut values = vec![mean_bit_accuracy(protected, views, key, message, None)?];
    for name in MODEL_DISTORTION_NAMES {
        let distorted = apply_model_distortion(protected, name, model)?;
        columns.push(name.to_string());
        values.push(mean_bit_accuracy(&distorted, views, key, message, None)?);
    }
    for spec in image_specs {
        columns.push(format!("img_{}", spec.kind.name()));
        values.push(mean_bit_accuracy(protected, views, key, message, Some((spec, spec.seed)))?);
    }
    Ok(HarnessTable { scene_id: protected.scene_id.clone(), columns, values })
}

/// Edit-deterrence robustness: apply each model distortion to the protected
/// scene, run the attack on it, and measure the embedding metrics of the
/// edited outputs against the edited original scene.
pub struct AdvRobustness {
    pub scene_id: String,
    /// (distortion name, metrics) in fixed column order.
    pub cells: Vec<(String, ClipMetrics)>,
}

impl AdvRobustness {
    pub fn to_csv(&self) -> String {
        let mut text = String::from(
            "scene,distortion,clip_orig,clip_method,clip_diff,clipT_orig,clipT_method,clipT_diff,clipD_orig,clipD_method,clipD_diff\n",
        );
        for (name, m) in &self.cells {
            text.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                self.scene_id,
                name,
                m.clip.orig,
                m.clip.method,
                m.clip.diff,
                m.clip_t.orig,
                m.clip_t.method,
                m.clip_t.diff,
                m.clip_d.orig,
                m.clip_d.method,
                m.clip_d.diff,
            ));
        }
        text
    }
}

#[allow(clippy::too_many_arguments)]
pub fn adv_robustness_harness(
    original: &GaussianScene,
    protected: &GaussianScene,
    views: &[CameraView],
    edit_cfg: &EditConfig,
    editor: &SurrogateEditor,
    embedders: &EmbedderPair,
    prompt_src: &str,
    model: &ModelDistortions,
) -> Result<AdvRobustness> {
    let render_all = |scene: &GaussianScene| -> Result<Vec<Image>> {
        let per: Vec<Result<Image>> = parallel::map_chunks(views.len(), |vi| {
            Ok(renderer::render(scene, &views[vi], None)?.image)
        });
        per.into_iter().collect()
    };
    let (edited_orig_scene, _) = editloop::run_edit(original, views, edit_cfg, editor)?;
    let edited_orig = render_all(&edited_orig_scene)?;
    let src_orig = render_all(original)?;

    let mut cells = Vec::new();
    for name in std::iter::once("none").chain(MODEL_DISTORTION_NAMES) {
        let distorted = apply_model_distortion(protected, name, model)?;
        let (edited_scene, _) = editloop::run_edit(&distorted, views, edit_cfg, editor)?;
        let edited_method = render_all(&edited_scene)?;
        let src_method = render_all(&distorted)?;
        let metrics = clip_metrics(
            &edited_orig,
            &edited_method,
            &src_orig,
            &src_method,
            prompt_src,
            &edit_cfg.prompt,
            embedders,
        )?;
        cells.push((name.to_string(), metrics));
    }
    Ok(AdvRobustness { scene_id: protected.scene_id.clone(), cells })
}

/// Bit accuracy before and after 3D editing, with the drop in percentage
/// points (drop = before - after).
pub struct WmAfterEdit {
    pub rows: Vec<(String, f64, f64)>,
}

impl WmAfterEdit {
    pub fn to_csv(&self) -> String {
        let mut text = String::from("scene,before,after,drop_pp\n");
        for (scene_id, before, after) in &self.rows {
            text.push_str(&format!(
                "{},{:.6},{:.6},{:.6}\n",
                scene_id,
                before,
                after,
                (before - after) * 100.0
            ));
        }
        text
    }
}

pub fn wm_after_edit_harness(
    protected_scenes: &[GaussianScene],
    views: &[CameraView],
    key: &WatermarkKey,
    message: &Message,
    edit_cfg: &EditConfig,
    editor: &SurrogateEditor,
) -> Result<WmAfterEdit> {
    let mut rows = Vec::new();
    for scene in protected_scenes {
        let before = mean_bit_accuracy(scene, views, key, message, None)?;
        let (edited, _) = editloop::run_edit(scene, views, edit_cfg, editor)?;
        let after = mean_bit_accuracy(&edited, views, key, message, None)?;
        rows.push((scene.scene_id.clone(), before, after));
    }
    Ok(WmAfterEdit { rows })
}
