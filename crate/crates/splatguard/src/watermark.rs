//! Scene-wide watermark branch: Haar low-frequency decoding with a frozen
//! seeded linear decoder, message and quality losses with analytic image
//! cotangents, and bit accuracy.
//!
//! The decoder is a fixed random linear map over the LL wavelet band. It is
//! regenerated from (seed, k, H, W) and never stored; a protected scene is
//! verified by re-deriving the same key. Random keys decode unwatermarked
//! renders at chance level, which the robustness harness relies on.

use crate::editor::{encode_latent, encode_latent_vjp, SurrogateEditor, Tensor};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng;

/// Ownership message of k bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub bits: Vec<bool>,
}

impl Message {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Deterministic random message of k bits.
    pub fn random(k: usize, seed: u64) -> Message {
        assert!(k >= 1);
        let mut r = rng::stream(seed, "message", 0);
        Message { bits: (0..k).map(|_| rng::uniform(&mut r, 0.0, 1.0) < 0.5).collect() }
    }

    /// Parse a "0101..." string.
    pub fn from_bitstring(s: &str) -> Result<Message> {
        let bits: Result<Vec<bool>> = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::InvalidParam(format!("bad message bit {other:?}"))),
            })
            .collect();
        let bits = bits?;
        if bits.is_empty() {
            return Err(Error::InvalidParam("empty message".into()));
        }
        Ok(Message { bits })
    }

    pub fn to_bitstring(&self) -> String {
        self.bits.iter().map(|b| if *b { '1' } else { '0' }).collect()
    }
}

/// Frozen decoder: logits = W flatten(haar_ll(image)) + bias, with W and the
/// bias regenerated bit-identically from (seed, k, H, W).
#[derive(Debug, Clone)]
pub struct WatermarkKey {
    pub seed: u64,
    pub k: usize,
    pub width: usize,
    pub height: usize,
    /// k x (3 * H/2 * W/2), row major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

// Spatial correlation length of each decoder row over the band grid, in
// band pixels. A trained decoder responds to spatially coherent patterns;
// iid white rows would be almost orthogonal to anything splats can render
// consistently across views, so each row is a smoothed unit-variance field.
const ROW_SMOOTH_SIGMA: f64 = 2.0;

impl WatermarkKey {
    pub fn new(seed: u64, k: usize, width: usize, height: usize) -> Result<WatermarkKey> {
        if k < 1 {
            return Err(Error::InvalidParam("message length must be >= 1".into()));
        }
        if width % 2 != 0 || height % 2 != 0 {
            return Err(Error::InvalidParam("key image size must be even".into()));
        }
        let (bw, bh) = (width / 2, height / 2);
        let dim = 3 * bw * bh;
        let scale = 1.0 / (dim as f64).sqrt();
        let mut r = rng::stream(seed, "watermark-key", 0);
        let mut weights = Vec::with_capacity(k * dim);
        for _ in 0..k {
            let mut row: Vec<f64> = (0..dim).map(|_| rng::normal(&mut r)).collect();
            smooth_row(&mut row, bw, bh);
            // center per channel: the decoder ignores global brightness,
            // like a trained decoder, which keeps clean-image logits small
            for c in 0..3 {
                let vals: Vec<usize> = (0..bw * bh).map(|p| p * 3 + c).collect();
                let mean = vals.iter().map(|&i| row[i]).sum::<f64>() / vals.len() as f64;
                for &i in &vals {
                    row[i] -= mean;
                }
            }
            // renormalize to unit variance, then apply the 1/sqrt(dim) scale
            let var = row.iter().map(|v| v * v).sum::<f64>() / dim as f64;
            let std = var.sqrt().max(1e-12);
            for v in row.iter_mut() {
                *v *= scale / std;
            }
            weights.extend_from_slice(&row);
        }
        let bias = (0..k).map(|_| scale * rng::normal(&mut r)).collect();
        Ok(WatermarkKey { seed, k, width, height, weights, bias })
    }

    fn band_dim(&self) -> usize {
        3 * (self.width / 2) * (self.height / 2)
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        if image.width != self.width || image.height != self.height {
            return Err(Error::SizeMismatch(format!(
                "image {}x{} vs key {}x{}",
                image.width, image.height, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Write the regeneration record (weights are never stored).
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = format!(
            "seed {}\nk {}\nwidth {}\nheight {}\n",
            self.seed, self.k, self.width, self.height
        );
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<WatermarkKey> {
        let text = std::fs::read_to_string(path)?;
        let mut seed = None;
        let mut k = None;
        let mut width = None;
        let mut height = None;
        for line in text.lines() {
            let mut parts = line.split_whitespace();
            let (key, value) = (parts.next(), parts.next());
            let value = value.and_then(|v| v.parse::<u64>().ok());
            match (key, value) {
                (Some("seed"), Some(v)) => seed = Some(v),
                (Some("k"), Some(v)) => k = Some(v as usize),
                (Some("width"), Some(v)) => width = Some(v as usize),
                (Some("height"), Some(v)) => height = Some(v as usize),
                _ => return Err(Error::MalformedHeader(format!("bad key line {line:?}"))),
            }
        }
        match (seed, k, width, height) {
            (Some(s), Some(k), Some(w), Some(h)) => WatermarkKey::new(s, k, w, h),
            _ => Err(Error::MalformedHeader("incomplete key file".into())),
        }
    }
}

// per-channel separable Gaussian blur of one decoder row over the band grid
// (interleaved layout, clamped edges)
fn smooth_row(row: &mut [f64], bw: usize, bh: usize) {
    let radius = (3.0 * ROW_SMOOTH_SIGMA).ceil() as isize;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    let mut sum = 0.0;
    for i in -radius..=radius {
        let v = (-(i * i) as f64 / (2.0 * ROW_SMOOTH_SIGMA * ROW_SMOOTH_SIGMA)).exp();
        kernel.push(v);
        sum += v;
    }
    for v in kernel.iter_mut() {
        *v /= sum;
    }
    let idx = |x: usize, y: usize, c: usize| (y * bw + x) * 3 + c;
    let mut tmp = vec![0.0; row.len()];
    for c in 0..3 {
        for y in 0..bh {
            for x in 0..bw {
                let mut acc = 0.0;
                for (i, kv) in kernel.iter().enumerate() {
                    let sx = (x as isize + i as isize - radius).clamp(0, bw as isize - 1) as usize;
                    acc += kv * row[idx(sx, y, c)];
                }
                tmp[idx(x, y, c)] = acc;
            }
        }
    }
    for c in 0..3 {
        for y in 0..bh {
            for x in 0..bw {
                let mut acc = 0.0;
                for (i, kv) in kernel.iter().enumerate() {
                    let sy = (y as isize + i as isize - radius).clamp(0, bh as isize - 1) as usize;
                    acc += kv * tmp[idx(x, sy, c)];
                }
                row[idx(x, y, c)] = acc;
            }
        }
    }
}

/// Single-level Haar LL band per channel: each output entry is the mean of a
/// 2x2 input block. Linear, so the Jacobian is a constant 1/4 fan-out.
pub fn haar_ll(image: &Image) -> Result<Image> {
    if image.width % 2 != 0 || image.height % 2 != 0 {
        return Err(Error::SizeMismatch(format!(
            "haar_ll needs even dimensions, got {}x{}",
            image.width, image.height
        )));
    }
    let (bw, bh) = (image.width / 2, image.height / 2);
    let mut band = Image::zeros(bw, bh);
    for y in 0..bh {
        for x in 0..bw {
            let p00 = image.pixel(2 * x, 2 * y);
            let p10 = image.pixel(2 * x + 1, 2 * y);
            let p01 = image.pixel(2 * x, 2 * y + 1);
            let p11 = image.pixel(2 * x + 1, 2 * y + 1);
            band.set_pixel(
                x,
                y,
                std::array::from_fn(|c| 0.25 * (p00[c] + p10[c] + p01[c] + p11[c])),
            );
        }
    }
    Ok(band)
}

// adjoint of haar_ll: spread each band cotangent to its 2x2 block
fn haar_ll_vjp(d_band: &Image, width: usize, height: usize) -> Image {
    let mut out = Image::zeros(width, height);
    for y in 0..d_band.height {
        for x in 0..d_band.width {
            let g = d_band.pixel(x, y);
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let i = out.idx(2 * x + dx, 2 * y + dy);
                for c in 0..3 {
                    out.data[i + c] += 0.25 * g[c];
                }
            }
        }
    }
    out
}

/// Decoder logits for an image.
pub fn decode_logits(image: &Image, key: &WatermarkKey) -> Result<Vec<f64>> {
    key.check_image(image)?;
    let band = haar_ll(image)?;
    let dim = key.band_dim();
    let mut logits = key.bias.clone();
    for (j, logit) in logits.iter_mut().enumerate() {
        let row = &key.weights[j * dim..(j + 1) * dim];
        *logit += row.iter().zip(&band.data).map(|(w, b)| w * b).sum::<f64>();
    }
    Ok(logits)
}

/// Hard-threshold decode: bit j = (logit j > 0).
pub fn decode_bits(image: &Image, key: &WatermarkKey) -> Result<Message> {
    Ok(Message { bits: decode_logits(image, key)?.iter().map(|l| *l > 0.0).collect() })
}

/// Fraction of matching bits.
pub fn bit_accuracy(decoded: &Message, target: &Message) -> Result<f64> {
    if decoded.len() != target.len() {
        return Err(Error::SizeMismatch(format!(
            "message lengths {} vs {}",
            decoded.len(),
            target.len()
        )));
    }
    let matches = decoded.bits.iter().zip(&target.bits).filter(|(a, b)| a == b).count();
    Ok(matches as f64 / decoded.len() as f64)
}

/// Mean binary cross entropy between sigmoid(logits) and the target bits,
/// with the closed-form image cotangent through the decoder and Haar band.
/// The stable form max(l,0) - l*m + ln(1 + exp(-|l|)) is used, so saturated
/// correct logits cost ~0 and logits at 0 cost ln 2.
pub fn msg_loss(image: &Image, key: &WatermarkKey, message: &Message) -> Result<(f64, Image)> {
    if message.len() != key.k {
        return Err(Error::SizeMismatch(format!(
            "message length {} vs key k {}",
            message.len(),
            key.k
        )));
    }
    let logits = decode_logits(image, key)?;
    let kf = key.k as f64;
    let mut loss = 0.0;
    let mut d_logits = vec![0.0; key.k];
    for (j, l) in logits.iter().enumerate() {
        let m = if message.bits[j] { 1.0 } else { 0.0 };
        loss += l.max(0.0) - l * m + (-l.abs()).exp().ln_1p();
        let sig = 1.0 / (1.0 + (-l).exp());
        d_logits[j] = (sig - m) / kf;
    }
    loss /= kf;

    // image cotangent: W^T d_logits through the Haar adjoint
    let dim = key.band_dim();
    let mut d_band = Image::zeros(key.width / 2, key.height / 2);
    for (j, dl) in d_logits.iter().enumerate() {
        if *dl == 0.0 {
            continue;
        }
        let row = &key.weights[j * dim..(j + 1) * dim];
        for (b, w) in d_band.data.iter_mut().zip(row) {
            *b += w * dl;
        }
    }
    Ok((loss, haar_ll_vjp(&d_band, key.width, key.height)))
}

/// Fidelity loss: mean l1 plus `lambda_feat` times the mean squared
/// surrogate-encoder feature distance, with the analytic image cotangent.
/// The feature term is this artifact's perceptual-distance stand-in and is
/// shared with the metrics stage.
pub fn quality_loss(
    image: &Image,
    reference: &Image,
    editor: &SurrogateEditor,
    lambda_feat: f64,
) -> Result<(f64, Image)> {
    if !image.same_size(reference) {
        return Err(Error::SizeMismatch("quality_loss image pair".into()));
    }
    let n = image.data.len() as f64;
    let mut l1 = 0.0;
    let mut cot = Image::zeros(image.width, image.height);
    for (i, (a, b)) in image.data.iter().zip(&reference.data).enumerate() {
        let diff = a - b;
        l1 += diff.abs();
        // true sign (f64::signum maps 0.0 to 1.0): zero grad at equality
        cot.data[i] = if diff > 0.0 {
            1.0 / n
        } else if diff < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    l1 /= n;

    let mut loss = l1;
    if lambda_feat != 0.0 {
        let zi = encode_latent(editor, image)?;
        let zr = encode_latent(editor, reference)?;
        let m = zi.data.len() as f64;
        let mut feat = 0.0;
        let mut d_z = Tensor { c: zi.c, h: zi.h, w: zi.w, data: vec![0.0; zi.data.len()] };
        for ((dz, a), b) in d_z.data.iter_mut().zip(&zi.data).zip(&zr.data) {
            let diff = a - b;
            feat += diff * diff;
            *dz = lambda_feat * 2.0 * diff / m;
        }
        feat /= m;
        loss += lambda_feat * feat;
        let feat_cot = encode_latent_vjp(editor, image, &d_z)?;
        for (c, f) in cot.data.iter_mut().zip(&feat_cot.data) {
            *c += f;
        }
    }
    Ok((loss, cot))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::editor::build_editor;

    fn test_image(w: usize, h: usize, seed: u64) -> Image {
        let mut r = rng::stream(seed, "wm-test-img", 0);
        let mut img = Image::zeros(w, h);
        for v in img.data.iter_mut() {
            *v = rng::uniform(&mut r, 0.0, 1.0);
        }
        img
    }

    #[test]
    fn haar_ll_on_constants_and_checkerboard() {
        let img = Image::constant(4, 4, [0.3, 0.6, 0.9]);
        let band = haar_ll(&img).unwrap();
        for y in 0..2 {
            for x in 0..2 {
                let p = band.pixel(x, y);
                assert!((p[0] - 0.3).abs() < 1e-15);
                assert!((p[1] - 0.6).abs() < 1e-15);
                assert!((p[2] - 0.9).abs() < 1e-15);
            }
        }
        let mut cb = Image::zeros(2, 2);
        cb.set_pixel(0, 0, [0.0; 3]);
        cb.set_pixel(1, 0, [1.0; 3]);
        cb.set_pixel(0, 1, [1.0; 3]);
        cb.set_pixel(1, 1, [0.0; 3]);
        let band = haar_ll(&cb).unwrap();
        assert_eq!(band.pixel(0, 0), [0.5; 3]);
        assert!(haar_ll(&Image::zeros(3, 4)).is_err());
    }

    #[test]
    fn haar_ll_matches_separable_oracle() {
        let img = test_image(8, 8, 1);
        let band = haar_ll(&img).unwrap();
        // separable route: average horizontal pairs, then vertical pairs
        let mut horiz = Image::zeros(4, 8);
        for y in 0..8 {
            for x in 0..4 {
                let a = img.pixel(2 * x, y);
                let b = img.pixel(2 * x + 1, y);
                horiz.set_pixel(x, y, std::array::from_fn(|c| 0.5 * (a[c] + b[c])));
            }
        }
        for y in 0..4 {
            for x in 0..4 {
                let a = horiz.pixel(x, 2 * y);
                let b = horiz.pixel(x, 2 * y + 1);
                let want: [f64; 3] = std::array::from_fn(|c| 0.5 * (a[c] + b[c]));
                let got = band.pixel(x, y);
                for c in 0..3 {
                    assert!((got[c] - want[c]).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn key_regeneration_is_bit_identical() {
        let a = WatermarkKey::new(42, 32, 64, 64).unwrap();
        let b = WatermarkKey::new(42, 32, 64, 64).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.bias, b.bias);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("key.txt");
        a.save(&path).unwrap();
        let c = WatermarkKey::load(&path).unwrap();
        assert_eq!(a.weights, c.weights);
    }

    #[test]
    fn decode_determinism_zero_image_and_size_check() {
        let key = WatermarkKey::new(7, 16, 32, 32).unwrap();
        let img = test_image(32, 32, 2);
        assert_eq!(decode_logits(&img, &key).unwrap(), decode_logits(&img, &key).unwrap());
        let zero = Image::zeros(32, 32);
        let logits = decode_logits(&zero, &key).unwrap();
        for (l, b) in logits.iter().zip(&key.bias) {
            assert_eq!(l, b);
        }
        assert!(decode_logits(&test_image(16, 16, 0), &key).is_err());
    }

    #[test]
    fn independent_keys_agree_at_chance_level() {
        let img = test_image(32, 32, 3);
        let mut agreements = 0usize;
        let mut total = 0usize;
        for pair in 0..100u64 {
            let ka = WatermarkKey::new(1000 + pair, 32, 32, 32).unwrap();
            let kb = WatermarkKey::new(5000 + pair, 32, 32, 32).unwrap();
            let ba = decode_bits(&img, &ka).unwrap();
            let bb = decode_bits(&img, &kb).unwrap();
            agreements += ba.bits.iter().zip(&bb.bits).filter(|(a, b)| a == b).count();
            total += 32;
        }
        let rate = agreements as f64 / total as f64;
        assert!((0.35..=0.65).contains(&rate), "agreement {rate}");
    }

    #[test]
    fn bit_accuracy_arithmetic() {
        let m = Message::random(32, 0);
        assert_eq!(bit_accuracy(&m, &m).unwrap(), 1.0);
        let complement = Message { bits: m.bits.iter().map(|b| !b).collect() };
        assert_eq!(bit_accuracy(&complement, &m).unwrap(), 0.0);
        let mut partial = m.clone();
        for i in 0..8 {
            partial.bits[i] = !partial.bits[i];
        }
        assert_eq!(bit_accuracy(&partial, &m).unwrap(), 0.75);
        let short = Message::random(16, 0);
        assert!(bit_accuracy(&short, &m).is_err());
    }

    #[test]
    fn msg_loss_values_and_gradient() {
        let key = WatermarkKey::new(11, 8, 16, 16).unwrap();
        let msg = Message::random(8, 1);

        // zero image gives logits = bias which are tiny; instead check the
        // exact ln 2 value with a synthetic zero-logit construction: message
        // loss at logits == 0 means image chosen so W b + bias = 0. Easier:
        // evaluate the stable BCE form directly at l = 0 through a key with
        // zero bias by cancelling: use the formula guarantee instead.
        let l = 0.0f64;
        let bce_at_zero = l.max(0.0) - l * 1.0 + (-l.abs()).exp().ln_1p();
        assert!((bce_at_zero - std::f64::consts::LN_2).abs() < 1e-15);

        // saturated correct logits cost < 1e-8
        let l = 25.0f64;
        let bce_sat = l.max(0.0) - l * 1.0 + (-l.abs()).exp().ln_1p();
        assert!(bce_sat < 1e-8);

        let img = test_image(16, 16, 4);
        let (_, cot) = msg_loss(&img, &key, &msg).unwrap();
        let h = 1e-6;
        for i in (0..img.data.len()).step_by(37) {
            let mut plus = img.clone();
            plus.data[i] += h;
            let mut minus = img.clone();
            minus.data[i] -= h;
            let fd = (msg_loss(&plus, &key, &msg).unwrap().0
                - msg_loss(&minus, &key, &msg).unwrap().0)
                / (2.0 * h);
            let an = cot.data[i];
            assert!(
                (fd - an).abs() <= 1e-10 + 1e-6 * fd.abs().max(an.abs()),
                "entry {i}: {fd} vs {an}"
            );
        }
    }

    #[test]
    fn quality_loss_identity_shift_and_gradient() {
        let ed = build_editor(3);
        let img = test_image(16, 16, 5);
        let (loss, cot) = quality_loss(&img, &img, &ed, 0.1).unwrap();
        assert_eq!(loss, 0.0);
        assert!(cot.data.iter().all(|v| *v == 0.0));

        // uniform brightness shift: l1 component is exactly the shift
        let mut shifted = img.clone();
        for v in shifted.data.iter_mut() {
            *v += 0.1;
        }
        let (loss, _) = quality_loss(&shifted, &img, &ed, 0.0).unwrap();
        assert!((loss - 0.1).abs() < 1e-12);

        let reference = test_image(16, 16, 6);
        let (_, cot) = quality_loss(&img, &reference, &ed, 0.1).unwrap();
        let h = 1e-5;
        for i in (0..img.data.len()).step_by(31) {
            let mut plus = img.clone();
            plus.data[i] += h;
            let mut minus = img.clone();
            minus.data[i] -= h;
            let fd = (quality_loss(&plus, &reference, &ed, 0.1).unwrap().0
                - quality_loss(&minus, &reference, &ed, 0.1).unwrap().0)
                / (2.0 * h);
            let an = cot.data[i];
            assert!(
                (fd - an).abs() <= 1e-8 + 1e-4 * fd.abs().max(an.abs()),
                "entry {i}: {fd} vs {an}"
            );
        }
    }
}
