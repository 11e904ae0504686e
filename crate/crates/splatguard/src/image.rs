//! Linear-RGB image buffers and binary PPM/PGM I/O.
//!
//! All internal math is linear f64 in [0,1]. Files are 8-bit binary PPM (P6)
//! for color and PGM (P5) for grayscale masks; color values are gamma 2.2
//! encoded on write and decoded on read.

use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

const GAMMA: f64 = 2.2;

/// H x W x 3 interleaved linear RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize) -> Self {
        Image { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn constant(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut img = Image::zeros(width, height);
        for p in 0..width * height {
            img.data[p * 3..p * 3 + 3].copy_from_slice(&rgb);
        }
        img
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * 3
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = self.idx(x, y);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = self.idx(x, y);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn clamped(&self) -> Image {
        let mut out = self.clone();
        for v in out.data.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        out
    }

    /// Mean absolute difference over all entries.
    pub fn l1(&self, other: &Image) -> f64 {
        assert!(self.same_size(other));
        let n = self.data.len() as f64;
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / n
    }

    /// Bilinear resample to a new size (pixel-center aligned, edge clamped).
    pub fn resize(&self, new_width: usize, new_height: usize) -> Image {
        let mut out = Image::zeros(new_width, new_height);
        let sx = self.width as f64 / new_width as f64;
        let sy = self.height as f64 / new_height as f64;
        for y in 0..new_height {
            let fy = (y as f64 + 0.5) * sy - 0.5;
            for x in 0..new_width {
                let fx = (x as f64 + 0.5) * sx - 0.5;
                out.set_pixel(x, y, self.sample_bilinear(fx, fy));
            }
        }
        out
    }

    /// Bilinear sample at continuous pixel coordinates, clamped to the edge.
    pub fn sample_bilinear(&self, fx: f64, fy: f64) -> [f64; 3] {
        let x0 = fx.floor();
        let y0 = fy.floor();
        let tx = fx - x0;
        let ty = fy - y0;
        let cl = |v: f64, hi: usize| (v.max(0.0) as usize).min(hi - 1);
        let (x0i, x1i) = (cl(x0, self.width), cl(x0 + 1.0, self.width));
        let (y0i, y1i) = (cl(y0, self.height), cl(y0 + 1.0, self.height));
        let p00 = self.pixel(x0i, y0i);
        let p10 = self.pixel(x1i, y0i);
        let p01 = self.pixel(x0i, y1i);
        let p11 = self.pixel(x1i, y1i);
        let mut out = [0.0; 3];
        for c in 0..3 {
            let top = p00[c] * (1.0 - tx) + p10[c] * tx;
            let bot = p01[c] * (1.0 - tx) + p11[c] * tx;
            out[c] = top * (1.0 - ty) + bot * ty;
        }
        out
    }

    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        let mut buf = Vec::with_capacity(self.data.len() + 32);
        buf.extend_from_slice(format!("P6\n{} {}\n255\n", self.width, self.height).as_bytes());
        for v in &self.data {
            let s = v.clamp(0.0, 1.0).powf(1.0 / GAMMA);
            buf.push((s * 255.0).round() as u8);
        }
        file.write_all(&buf)?;
        Ok(())
    }

    pub fn load_ppm(path: &Path) -> Result<Image> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let (magic, w, h, maxval, payload) = parse_pnm_header(&bytes)?;
        if magic != "P6" {
            return Err(Error::MalformedHeader(format!("expected P6, got {magic}")));
        }
        if maxval != 255 {
            return Err(Error::MalformedHeader(format!("unsupported maxval {maxval}")));
        }
        let expected = w * h * 3;
        if payload.len() < expected {
            return Err(Error::TruncatedPayload { expected, got: payload.len() });
        }
        let mut img = Image::zeros(w, h);
        for (v, b) in img.data.iter_mut().zip(payload.iter()) {
            *v = (*b as f64 / 255.0).powf(GAMMA);
        }
        Ok(img)
    }
}

/// H x W grayscale, values in [0,1]. Stored and loaded linearly (no gamma);
/// masks are weights, not colors.
#[derive(Debug, Clone, PartialEq)]
pub struct Gray {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Gray {
    pub fn zeros(width: usize, height: usize) -> Self {
        Gray { width, height, data: vec![0.0; width * height] }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Gray { width, height, data: vec![value; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        let mut buf = Vec::with_capacity(self.data.len() + 32);
        buf.extend_from_slice(format!("P5\n{} {}\n255\n", self.width, self.height).as_bytes());
        for v in &self.data {
            buf.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        file.write_all(&buf)?;
        Ok(())
    }

    pub fn load_pgm(path: &Path) -> Result<Gray> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let (magic, w, h, maxval, payload) = parse_pnm_header(&bytes)?;
        if magic != "P5" {
            return Err(Error::MalformedHeader(format!("expected P5, got {magic}")));
        }
        if maxval != 255 {
            return Err(Error::MalformedHeader(format!("unsupported maxval {maxval}")));
        }
        let expected = w * h;
        if payload.len() < expected {
            return Err(Error::TruncatedPayload { expected, got: payload.len() });
        }
        let mut img = Gray::zeros(w, h);
        for (v, b) in img.data.iter_mut().zip(payload.iter()) {
            *v = *b as f64 / 255.0;
        }
        Ok(img)
    }
}

/// Parse "Px\n<w> <h>\n<maxval>\n" allowing arbitrary whitespace and
/// '#' comments, returning the payload slice after the single whitespace
/// byte that terminates the maxval token.
fn parse_pnm_header(bytes: &[u8]) -> Result<(String, usize, usize, u32, &[u8])> {
    let mut pos = 0usize;
    let mut tokens: Vec<String> = Vec::new();
    while tokens.len() < 4 {
        // skip whitespace and comments
        while pos < bytes.len() {
            let b = bytes[pos];
            if b == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                pos += 1;
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::MalformedHeader("unexpected end of header".into()));
        }
        tokens.push(
            String::from_utf8(bytes[start..pos].to_vec())
                .map_err(|_| Error::MalformedHeader("non-utf8 header".into()))?,
        );
        if tokens.len() == 4 {
            // exactly one whitespace byte separates maxval from payload
            pos += 1;
        }
    }
    let magic = tokens[0].clone();
    let parse = |s: &str| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| Error::MalformedHeader(format!("bad integer {s:?}")))
    };
    let w = parse(&tokens[1])?;
    let h = parse(&tokens[2])?;
    let maxval = parse(&tokens[3])? as u32;
    if w == 0 || h == 0 {
        return Err(Error::MalformedHeader("zero image dimension".into()));
    }
    Ok((magic, w, h, maxval, &bytes[pos.min(bytes.len())..]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_roundtrip_is_8bit_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let mut img = Image::zeros(5, 3);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i % 17) as f64 / 16.0;
        }
        img.save_ppm(&path).unwrap();
        let back = Image::load_ppm(&path).unwrap();
        // quantized once; saving again must be byte-identical
        back.save_ppm(&dir.path().join("img2.ppm")).unwrap();
        let a = std::fs::read(&path).unwrap();
        let b = std::fs::read(dir.path().join("img2.ppm")).unwrap();
        assert_eq!(a, b);
        for (x, y) in img.data.iter().zip(&back.data) {
            assert!((x - y).abs() < 1.0 / 100.0, "{x} vs {y}");
        }
    }

    #[test]
    fn pgm_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let mut g = Gray::zeros(4, 4);
        g.set(1, 2, 1.0);
        g.set(3, 0, 0.5);
        g.save_pgm(&path).unwrap();
        let back = Gray::load_pgm(&path).unwrap();
        assert_eq!(back.get(1, 2), 1.0);
        assert!((back.get(3, 0) - 0.5).abs() < 1.0 / 255.0);
    }

    #[test]
    fn truncated_ppm_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ppm");
        std::fs::write(&path, b"P6\n4 4\n255\nxx").unwrap();
        match Image::load_ppm(&path) {
            Err(Error::TruncatedPayload { .. }) => {}
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn resize_identity_and_mean_preservation() {
        let mut img = Image::zeros(8, 8);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i as f64 * 0.37).sin() * 0.5 + 0.5;
        }
        let same = img.resize(8, 8);
        for (a, b) in img.data.iter().zip(&same.data) {
            assert!((a - b).abs() < 1e-12);
        }
        let down = img.resize(4, 4);
        let mean_a = img.data.iter().sum::<f64>() / img.data.len() as f64;
        let mean_b = down.data.iter().sum::<f64>() / down.data.len() as f64;
        assert!((mean_a - mean_b).abs() < 0.05);
    }
}
