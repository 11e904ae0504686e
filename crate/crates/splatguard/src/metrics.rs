//! Fidelity metrics (PSNR, SSIM, feature distance), surrogate embedding
//! similarity metrics for edit deterrence, and the unified-score aggregator.
//!
//! The embedders are frozen seeded random-feature maps into a shared 128-d
//! space. They exercise the full metric arithmetic; their absolute values are
//! not comparable to any pretrained encoder and are never claimed to be.

use crate::editor::{encode_latent, SurrogateEditor};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng;

/// PSNR in dB on linear RGB with MAX = 1, capped at 99 dB so identical
/// images stay representable in CSV output.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_size(b) {
        return Err(Error::SizeMismatch("psnr image pair".into()));
    }
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    Ok((10.0 * (1.0 / mse).log10()).min(99.0))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

// separable Gaussian filter over one channel plane, valid region only
fn filter_valid(plane: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
    let k = ssim_kernel();
    let r = SSIM_WINDOW / 2;
    // horizontal pass on full height, valid width
    let vw = w - 2 * r;
    let vh = h - 2 * r;
    let mut horiz = vec![0.0; vw * h];
    for y in 0..h {
        for x in 0..vw {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * plane[y * w + x + i];
            }
            horiz[y * vw + x] = acc;
        }
    }
    let mut out = vec![0.0; vw * vh];
    for y in 0..vh {
        for x in 0..vw {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * horiz[(y + i) * vw + x];
            }
            out[y * vw + x] = acc;
        }
    }
    (out, vw, vh)
}

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2,
/// C2 = 0.03^2, evaluated on the valid interior and averaged over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_size(b) {
        return Err(Error::SizeMismatch("ssim image pair".into()));
    }
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::InvalidParam(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images"
        )));
    }
    let (w, h) = (a.width, a.height);
    let mut total = 0.0;
    for c in 0..3 {
        let xa: Vec<f64> = a.data.iter().skip(c).step_by(3).cloned().collect();
        let xb: Vec<f64> = b.data.iter().skip(c).step_by(3).cloned().collect();
        let x2: Vec<f64> = xa.iter().map(|v| v * v).collect();
        let y2: Vec<f64> = xb.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = xa.iter().zip(&xb).map(|(x, y)| x * y).collect();
        let (mu_x, vw, vh) = filter_valid(&xa, w, h);
        let (mu_y, _, _) = filter_valid(&xb, w, h);
        let (m_x2, _, _) = filter_valid(&x2, w, h);
        let (m_y2, _, _) = filter_valid(&y2, w, h);
        let (m_xy, _, _) = filter_valid(&xy, w, h);
        let mut acc = 0.0;
        for i in 0..vw * vh {
            let var_x = m_x2[i] - mu_x[i] * mu_x[i];
            let var_y = m_y2[i] - mu_y[i] * mu_y[i];
            let cov = m_xy[i] - mu_x[i] * mu_y[i];
            let num = (2.0 * mu_x[i] * mu_y[i] + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + SSIM_C1) * (var_x + var_y + SSIM_C2);
            acc += num / den;
        }
        total += acc / (vw * vh) as f64;
    }
    Ok(total / 3.0)
}

/// Mean squared surrogate-encoder feature distance; the artifact's
/// perceptual-distance stand-in, shared with the watermark quality loss.
pub fn feat_lpips(a: &Image, b: &Image, editor: &SurrogateEditor) -> Result<f64> {
    if !a.same_size(b) {
        return Err(Error::SizeMismatch("feat_lpips image pair".into()));
    }
    let za = encode_latent(editor, a)?;
    let zb = encode_latent(editor, b)?;
    Ok(za
        .data
        .iter()
        .zip(&zb.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / za.data.len() as f64)
}

pub const EMBED_DIM: usize = 128;
const EMBED_GRID: usize = 16;
// +1 constant column so the zero image still embeds to a unit vector
const IMG_FEATURES: usize = EMBED_GRID * EMBED_GRID * 3 + 1;
const TXT_TOKENS: usize = 8;
const TXT_DIM: usize = 64;

/// Frozen seeded image/text embedders into a shared 128-d space with
/// L2-normalized outputs.
#[derive(Debug, Clone)]
pub struct EmbedderPair {
    pub seed: u64,
    w_img: Vec<f64>, // EMBED_DIM x IMG_FEATURES
    w_txt: Vec<f64>, // EMBED_DIM x TXT_DIM
}

pub fn build_embedders(seed: u64) -> EmbedderPair {
    let mut r = rng::stream(seed, "embedder-weights", 0);
    let w_img = (0..EMBED_DIM * IMG_FEATURES)
        .map(|_| rng::normal(&mut r) / (IMG_FEATURES as f64).sqrt())
        .collect();
    let w_txt = (0..EMBED_DIM * TXT_DIM)
        .map(|_| rng::normal(&mut r) / (TXT_DIM as f64).sqrt())
        .collect();
    EmbedderPair { seed, w_img, w_txt }
}

fn l2_normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v.iter_mut() {
        *x /= n;
    }
}

impl EmbedderPair {
    pub fn embed_image(&self, image: &Image) -> Vec<f64> {
        let small = image.resize(EMBED_GRID, EMBED_GRID);
        let mut features = small.data;
        features.push(1.0);
        let mut out = vec![0.0; EMBED_DIM];
        for (d, o) in out.iter_mut().enumerate() {
            let row = &self.w_img[d * IMG_FEATURES..(d + 1) * IMG_FEATURES];
            *o = row.iter().zip(&features).map(|(w, f)| w * f).sum();
        }
        l2_normalize(&mut out);
        out
    }

    pub fn embed_text(&self, text: &str) -> Vec<f64> {
        let domain = format!("embed-text:{text}");
        let mut pooled = vec![0.0; TXT_DIM];
        for tok in 0..TXT_TOKENS {
            let mut r = rng::stream(self.seed, &domain, tok as u64);
            for p in pooled.iter_mut() {
                *p += rng::normal(&mut r);
            }
        }
        for p in pooled.iter_mut() {
            *p /= TXT_TOKENS as f64;
        }
        let mut out = vec![0.0; EMBED_DIM];
        for (d, o) in out.iter_mut().enumerate() {
            let row = &self.w_txt[d * TXT_DIM..(d + 1) * TXT_DIM];
            *o = row.iter().zip(&pooled).map(|(w, f)| w * f).sum();
        }
        l2_normalize(&mut out);
        out
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipTriplet {
    pub orig: f64,
    pub method: f64,
    pub diff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipMetrics {
    pub clip: ClipTriplet,
    pub clip_t: ClipTriplet,
    pub clip_d: ClipTriplet,
}

/// Embedding-similarity deterrence metrics over aligned view lists.
///
/// clip compares the method's edited renders against the original scene's
/// edited renders (orig column is 1: compared with itself); clip_t compares
/// edited renders against the target prompt embedding; clip_d compares the
/// image-editing direction (edited minus source embedding) against the
/// text-editing direction. Every Diff is orig minus method, so larger
/// positive values mean stronger deterrence.
#[allow(clippy::too_many_arguments)]
pub fn clip_metrics(
    edited_orig: &[Image],
    edited_method: &[Image],
    src_orig: &[Image],
    src_method: &[Image],
    prompt_src: &str,
    prompt_tgt: &str,
    embedders: &EmbedderPair,
) -> Result<ClipMetrics> {
    let n = edited_orig.len();
    if n == 0 {
        return Err(Error::InvalidParam("clip_metrics needs at least one view".into()));
    }
    if edited_method.len() != n || src_orig.len() != n || src_method.len() != n {
        return Err(Error::SizeMismatch("clip_metrics view lists are misaligned".into()));
    }
    let e_orig: Vec<Vec<f64>> = edited_orig.iter().map(|i| embedders.embed_image(i)).collect();
    let e_method: Vec<Vec<f64>> = edited_method.iter().map(|i| embedders.embed_image(i)).collect();
    let s_orig: Vec<Vec<f64>> = src_orig.iter().map(|i| embedders.embed_image(i)).collect();
    let s_method: Vec<Vec<f64>> = src_method.iter().map(|i| embedders.embed_image(i)).collect();
    let f_tgt = embedders.embed_text(prompt_tgt);
    let f_src = embedders.embed_text(prompt_src);

    let nf = n as f64;
    let r_clip = (0..n).map(|v| cosine(&e_method[v], &e_orig[v])).sum::<f64>() / nf;
    let o_clip_t = (0..n).map(|v| cosine(&e_orig[v], &f_tgt)).sum::<f64>() / nf;
    let r_clip_t = (0..n).map(|v| cosine(&e_method[v], &f_tgt)).sum::<f64>() / nf;

    let mut d_t: Vec<f64> = f_tgt.iter().zip(&f_src).map(|(a, b)| a - b).collect();
    l2_normalize(&mut d_t);
    let img_dir = |edited: &[f64], src: &[f64]| -> Vec<f64> {
        let mut d: Vec<f64> = edited.iter().zip(src).map(|(a, b)| a - b).collect();
        l2_normalize(&mut d);
        d
    };
    let o_clip_d =
        (0..n).map(|v| cosine(&img_dir(&e_orig[v], &s_orig[v]), &d_t)).sum::<f64>() / nf;
    let r_clip_d =
        (0..n).map(|v| cosine(&img_dir(&e_method[v], &s_method[v]), &d_t)).sum::<f64>() / nf;

    Ok(ClipMetrics {
        clip: ClipTriplet { orig: 1.0, method: r_clip, diff: 1.0 - r_clip },
        clip_t: ClipTriplet { orig: o_clip_t, method: r_clip_t, diff: o_clip_t - r_clip_t },
        clip_d: ClipTriplet { orig: o_clip_d, method: r_clip_d, diff: o_clip_d - r_clip_d },
    })
}

/// One method's metric row feeding the unified-score aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct SucpsRow {
    pub method: String,
    /// Bit accuracy in [0,1]; None marks a defense-only method (scored at
    /// the chance-level reference 0.5).
    pub bit_acc: Option<f64>,
    pub d_clip: f64,
    pub d_clip_t: f64,
    pub d_clip_d: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub lpips: f64,
}

/// Normalizers shared by every row of one aggregation: best bit accuracy,
/// largest absolute deterrence gap per metric, and the best fidelity values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SucpsNormalizers {
    pub b_max: f64,
    pub max_abs_delta: [f64; 3],
    pub max_psnr: f64,
    pub max_ssim: f64,
    pub min_lpips: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SucpsScore {
    pub method: String,
    pub t: f64,
    pub e: f64,
    pub f: f64,
    pub sucps: f64,
}

fn validate_rows(rows: &[SucpsRow]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidParam("sucps needs at least one row".into()));
    }
    for r in rows {
        if let Some(b) = r.bit_acc {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::InvalidParam(format!("bit accuracy {b} outside [0,1]")));
            }
        }
        if r.lpips <= 0.0 {
            return Err(Error::InvalidParam(format!("lpips must be > 0, got {}", r.lpips)));
        }
        if !(0.0 < r.ssim && r.ssim <= 1.0) {
            return Err(Error::InvalidParam(format!("ssim must be in (0,1], got {}", r.ssim)));
        }
    }
    Ok(())
}

/// Normalizers computed from a row set. At least one row must carry a bit
/// accuracy (it defines b_max).
pub fn normalizers_from_rows(rows: &[SucpsRow]) -> Result<SucpsNormalizers> {
    validate_rows(rows)?;
    let b_max = rows
        .iter()
        .filter_map(|r| r.bit_acc)
        .fold(f64::NEG_INFINITY, f64::max);
    if !b_max.is_finite() {
        return Err(Error::InvalidParam("no row carries a bit accuracy".into()));
    }
    if b_max <= 0.5 {
        return Err(Error::InvalidParam(format!(
            "best bit accuracy {b_max} must exceed the 0.5 chance reference"
        )));
    }
    let mut max_abs_delta = [0.0f64; 3];
    for r in rows {
        max_abs_delta[0] = max_abs_delta[0].max(r.d_clip.abs());
        max_abs_delta[1] = max_abs_delta[1].max(r.d_clip_t.abs());
        max_abs_delta[2] = max_abs_delta[2].max(r.d_clip_d.abs());
    }
    Ok(SucpsNormalizers {
        b_max,
        max_abs_delta,
        max_psnr: rows.iter().map(|r| r.psnr).fold(f64::NEG_INFINITY, f64::max),
        max_ssim: rows.iter().map(|r| r.ssim).fold(f64::NEG_INFINITY, f64::max),
        min_lpips: rows.iter().map(|r| r.lpips).fold(f64::INFINITY, f64::min),
    })
}

fn clip01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

fn geometric_mean3(a: f64, b: f64, c: f64) -> f64 {
    (a * b * c).cbrt()
}

/// Aggregate rows against explicit normalizers. Comparing a small row set
/// against a larger benchmark's normalizers reproduces the ablation-table
/// scores; the plain `sucps` entry point normalizes within the given rows.
///
/// T maps chance-level tracing to 1/2 and the best observed accuracy to 1;
/// E is the geometric mean of the sign-preserving normalized deterrence
/// gaps (a gap metric whose largest magnitude is zero scores a neutral 1/2
/// for everyone); F is the geometric mean of best-relative fidelity ratios;
/// the final score is the harmonic mean of (T, E, F).
pub fn sucps_with_normalizers(
    rows: &[SucpsRow],
    norm: &SucpsNormalizers,
) -> Result<Vec<SucpsScore>> {
    validate_rows(rows)?;
    if norm.b_max <= 0.5 {
        return Err(Error::InvalidParam("normalizer b_max must exceed 0.5".into()));
    }
    let mut out = Vec::with_capacity(rows.len());
    for r in rows {
        let b = r.bit_acc.unwrap_or(0.5);
        let t = clip01(0.5 * (1.0 + (b - 0.5) / (norm.b_max - 0.5)));
        let u = |delta: f64, max_abs: f64| -> f64 {
            if max_abs == 0.0 {
                0.5
            } else {
                clip01(0.5 * (1.0 + delta / max_abs))
            }
        };
        let e = geometric_mean3(
            u(r.d_clip, norm.max_abs_delta[0]),
            u(r.d_clip_t, norm.max_abs_delta[1]),
            u(r.d_clip_d, norm.max_abs_delta[2]),
        );
        let f = geometric_mean3(
            clip01(r.psnr / norm.max_psnr),
            clip01(r.ssim / norm.max_ssim),
            clip01(norm.min_lpips / r.lpips),
        );
        let sucps = if t > 0.0 && e > 0.0 && f > 0.0 {
            3.0 / (1.0 / t + 1.0 / e + 1.0 / f)
        } else {
            0.0
        };
        out.push(SucpsScore { method: r.method.clone(), t, e, f, sucps });
    }
    Ok(out)
}

/// Aggregate with normalizers drawn from the rows themselves.
pub fn sucps(rows: &[SucpsRow]) -> Result<Vec<SucpsScore>> {
    let norm = normalizers_from_rows(rows)?;
    sucps_with_normalizers(rows, &norm)
}

pub const SUCPS_ROW_HEADER: &str = "method,bit_acc,d_clip,d_clipT,d_clipD,psnr,ssim,lpips";

/// Parse rows from the documented CSV layout; bit_acc may be empty or "NA".
pub fn rows_from_csv(text: &str) -> Result<Vec<SucpsRow>> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("method,") {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 8 {
            return Err(Error::Config(format!("metrics row {} has {} fields", lineno + 1, parts.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad number {s:?} on row {}", lineno + 1)))
        };
        let bit_acc = match parts[1].trim() {
            "" | "NA" | "N/A" => None,
            v => Some(num(v)?),
        };
        rows.push(SucpsRow {
            method: parts[0].trim().to_string(),
            bit_acc,
            d_clip: num(parts[2])?,
            d_clip_t: num(parts[3])?,
            d_clip_d: num(parts[4])?,
            psnr: num(parts[5])?,
            ssim: num(parts[6])?,
            lpips: num(parts[7])?,
        });
    }
    Ok(rows)
}

pub fn rows_to_csv(rows: &[SucpsRow]) -> String {
    let mut text = format!("{SUCPS_ROW_HEADER}\n");
    for r in rows {
        let b = r.bit_acc.map_or("NA".to_string(), |v| format!("{v}"));
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.method, b, r.d_clip, r.d_clip_t, r.d_clip_d, r.psnr, r.ssim, r.lpips
        ));
    }
    text
}

pub fn scores_to_csv(scores: &[SucpsScore]) -> String {
    let mut text = String::from("method,T,E,F,sUCPS\n");
    for s in scores {
        text.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6}\n",
            s.method, s.t, s.e, s.f, s.sucps
        ));
    }
    text
}

/// The six benchmark rows used by the aggregation self-test (bit accuracy
/// already scaled to [0,1]).
pub fn benchmark_rows() -> Vec<SucpsRow> {
    let row = |method: &str,
               bit: Option<f64>,
               dc: f64,
               dt: f64,
               dd: f64,
               psnr: f64,
               ssim: f64,
               lpips: f64| SucpsRow {
        method: method.to_string(),
        bit_acc: bit,
        d_clip: dc,
        d_clip_t: dt,
        d_clip_d: dd,
        psnr,
        ssim,
        lpips,
    };
    vec![
        row("3DGSW", Some(0.9900), 0.0371, -0.0001, 0.0068, 33.94, 0.9505, 0.0866),
        row("GaussianMarker", Some(0.9851), 0.0269, -0.0010, -0.0061, 35.37, 0.9710, 0.0597),
        row("GuardSplat", Some(0.9892), 0.0146, 0.0006, -0.0016, 29.34, 0.9225, 0.0627),
        row("DEGauss", None, 0.0750, 0.0112, 0.0208, 30.34, 0.9120, 0.1502),
        row("3DGSW+DEGauss", Some(0.6279), 0.0404, 0.0012, 0.0089, 29.90, 0.8463, 0.1950),
        row("Ours", Some(0.9723), 0.0907, 0.0149, 0.0390, 30.36, 0.8935, 0.1471),
    ]
}

/// The four component-toggle rows scored against the benchmark normalizers.
pub fn component_rows() -> Vec<SucpsRow> {
    let row = |method: &str, bit: f64, dc: f64, dt: f64, dd: f64, psnr: f64, ssim: f64, lpips: f64| {
        SucpsRow {
            method: method.to_string(),
            bit_acc: Some(bit),
            d_clip: dc,
            d_clip_t: dt,
            d_clip_d: dd,
            psnr,
            ssim,
            lpips,
        }
    };
    vec![
        row("neither", 0.6780, 0.1294, 0.0205, 0.0625, 28.73, 0.8159, 0.3069),
        row("selection", 0.9702, 0.0912, 0.0147, 0.0378, 30.22, 0.8801, 0.1503),
        row("modulation", 0.6502, 0.1266, 0.0200, 0.0586, 28.74, 0.8161, 0.3062),
        row("both", 0.9723, 0.0907, 0.0149, 0.0390, 30.36, 0.8935, 0.1471),
    ]
}
