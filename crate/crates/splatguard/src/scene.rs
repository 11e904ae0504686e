//! Gaussian scene data model, serialization, toy scenes, and model-level
//! distortions.
//!
//! Scenes are immutable after construction: every operation returns a new
//! scene, so read-only sharing across workers is safe.

use crate::error::{Error, Result};
use crate::rng;
use std::io::{Read, Write};
use std::path::Path;

/// One anisotropic Gaussian. Covariance is exp(log_scale) along the local
/// axes given by the unit quaternion; opacity and colors live in logit space
/// so the renderer's sigmoid keeps them in range.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub position: [f64; 3],
    pub log_scale: [f64; 3],
    /// Unit quaternion (w, x, y, z); renormalized after every update.
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    pub color_dc: [f64; 3],
    /// Degree-1 spherical-harmonic residual, 3 basis functions x 3 channels,
    /// laid out [basis*3 + channel].
    pub color_rest: [f64; 9],
}

impl Gaussian {
    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.color_dc.iter().all(|v| v.is_finite())
            && self.color_rest.iter().all(|v| v.is_finite())
    }
}

/// Renormalize a quaternion in place. Quaternions already unit to within a
/// few ulp are left untouched so that no-op optimizer steps stay bit-exact.
pub fn normalize_quat(q: &mut [f64; 4]) {
    let s = q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3];
    if (s - 1.0).abs() > 1e-14 {
        let n = s.sqrt();
        for v in q.iter_mut() {
            *v /= n;
        }
    }
}

/// Parameter groups of a Gaussian. Positions are frozen throughout: their
/// role coefficient and learning rate are pinned to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum ParamGroup {
    Position,
    Scale,
    Rotation,
    Opacity,
    ColorDC,
    ColorRest,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::Position,
        ParamGroup::Scale,
        ParamGroup::Rotation,
        ParamGroup::Opacity,
        ParamGroup::ColorDC,
        ParamGroup::ColorRest,
    ];
}

/// Per-group scalar map (role coefficients, learning rates, toggles).
#[derive(Debug, Clone, PartialEq)]
pub struct GroupValues {
    pub scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub color_dc: f64,
    pub color_rest: f64,
}

impl GroupValues {
    pub fn uniform(v: f64) -> Self {
        GroupValues { scale: v, rotation: v, opacity: v, color_dc: v, color_rest: v }
    }

    /// Value for a group; Position is always 0.
    pub fn get(&self, g: ParamGroup) -> f64 {
        match g {
            ParamGroup::Position => 0.0,
            ParamGroup::Scale => self.scale,
            ParamGroup::Rotation => self.rotation,
            ParamGroup::Opacity => self.opacity,
            ParamGroup::ColorDC => self.color_dc,
            ParamGroup::ColorRest => self.color_rest,
        }
    }
}

/// Ordered list of Gaussians; indices identify Gaussians across the whole
/// pipeline (mask coefficients, gradients, saliency rows).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScene {
    pub gaussians: Vec<Gaussian>,
    pub background: [f64; 3],
    pub scene_id: String,
    /// Per-Gaussian label, empty string when unlabelled. Used by the
    /// procedural mask generator.
    pub labels: Vec<String>,
}

impl GaussianScene {
    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.gaussians.is_empty() {
            return Err(Error::EmptyScene);
        }
        if self.labels.len() != self.gaussians.len() {
            return Err(Error::SizeMismatch("labels/gaussians length".into()));
        }
        for (i, g) in self.gaussians.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gaussian {i}")));
            }
            // loose tolerance: renderers normalize internally, and gradient
            // checks probe slightly off-manifold quaternions
            let n = (g.rotation.iter().map(|v| v * v).sum::<f64>()).sqrt();
            if !(n.is_finite() && (n - 1.0).abs() < 1e-3) {
                return Err(Error::InvalidRotation(n, i));
            }
        }
        Ok(())
    }

    pub fn indices_with_label(&self, label: &str) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.as_str() == label)
            .map(|(i, _)| i)
            .collect()
    }
}

const MAGIC: &[u8; 4] = b"GSPL";
const VERSION: u8 = 1;
/// position 3 + log_scale 3 + rotation 4 + opacity 1 + color_dc 3 + color_rest 9
const FLOATS_PER_RECORD: usize = 23;

/// Write a scene to the binary GSPL format: magic, version byte, N as u64,
/// N records of 23 little-endian f64, then a UTF-8 footer carrying the
/// background color, scene id, and labels. Round-trips are bit-exact.
pub fn scene_save(scene: &GaussianScene, path: &Path) -> Result<()> {
    scene.validate()?;
    let mut buf: Vec<u8> = Vec::with_capacity(16 + scene.len() * FLOATS_PER_RECORD * 8);
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.extend_from_slice(&(scene.len() as u64).to_le_bytes());
    for g in &scene.gaussians {
        let mut rec = [0f64; FLOATS_PER_RECORD];
        rec[0..3].copy_from_slice(&g.position);
        rec[3..6].copy_from_slice(&g.log_scale);
        rec[6..10].copy_from_slice(&g.rotation);
        rec[10] = g.opacity_logit;
        rec[11..14].copy_from_slice(&g.color_dc);
        rec[14..23].copy_from_slice(&g.color_rest);
        for v in rec {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut footer = String::new();
    footer.push_str(&format!(
        "bg {} {} {}\n",
        fmt_f64(scene.background[0]),
        fmt_f64(scene.background[1]),
        fmt_f64(scene.background[2])
    ));
    footer.push_str(&format!("id {}\n", scene.scene_id));
    let mut names: Vec<&String> = scene.labels.iter().filter(|l| !l.is_empty()).collect();
    names.sort();
    names.dedup();
    for name in names {
        let idx = scene.indices_with_label(name);
        let list: Vec<String> = idx.iter().map(|i| i.to_string()).collect();
        footer.push_str(&format!("label {} {}\n", name, list.join(" ")));
    }
    buf.extend_from_slice(footer.as_bytes());
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

// f64 Display round-trips exactly in Rust (shortest representation), which
// keeps the text footer as bit-exact as the binary records.
fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn scene_load(path: &Path) -> Result<GaussianScene> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 13 {
        return Err(Error::MalformedHeader("file shorter than header".into()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::MalformedHeader("bad magic".into()));
    }
    let version = bytes[4];
    if version != VERSION {
        return Err(Error::VersionMismatch { expected: VERSION, got: version });
    }
    let n = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
    if n == 0 {
        return Err(Error::EmptyScene);
    }
    let payload = n * FLOATS_PER_RECORD * 8;
    if bytes.len() < 13 + payload {
        return Err(Error::TruncatedPayload { expected: 13 + payload, got: bytes.len() });
    }
    let mut gaussians = Vec::with_capacity(n);
    let mut off = 13;
    for _ in 0..n {
        let mut rec = [0f64; FLOATS_PER_RECORD];
        for v in rec.iter_mut() {
            *v = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
            off += 8;
        }
        gaussians.push(Gaussian {
            position: [rec[0], rec[1], rec[2]],
            log_scale: [rec[3], rec[4], rec[5]],
            rotation: [rec[6], rec[7], rec[8], rec[9]],
            opacity_logit: rec[10],
            color_dc: [rec[11], rec[12], rec[13]],
            color_rest: rec[14..23].try_into().unwrap(),
        });
    }
    let footer = std::str::from_utf8(&bytes[off..])
        .map_err(|_| Error::MalformedHeader("non-utf8 footer".into()))?;
    let mut background = [0.0; 3];
    let mut scene_id = String::new();
    let mut labels = vec![String::new(); n];
    for line in footer.lines() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("bg") => {
                for b in background.iter_mut() {
                    *b = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| Error::MalformedHeader("bad bg line".into()))?;
                }
            }
            Some("id") => scene_id = parts.collect::<Vec<_>>().join(" "),
            Some("label") => {
                let name = parts
                    .next()
                    .ok_or_else(|| Error::MalformedHeader("label line without name".into()))?
                    .to_string();
                for tok in parts {
                    let i: usize = tok
                        .parse()
                        .map_err(|_| Error::MalformedHeader(format!("bad label index {tok:?}")))?;
                    if i >= n {
                        return Err(Error::MalformedHeader(format!("label index {i} out of range")));
                    }
                    labels[i] = name.clone();
                }
            }
            _ => {}
        }
    }
    let scene = GaussianScene { gaussians, background, scene_id, labels };
    scene.validate()?;
    Ok(scene)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyKind {
    Plane,
    ObjectOnPlane,
    Random,
}

impl std::str::FromStr for ToyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plane" => Ok(ToyKind::Plane),
            "object_on_plane" => Ok(ToyKind::ObjectOnPlane),
            "random" => Ok(ToyKind::Random),
            other => Err(Error::InvalidParam(format!("unknown scene kind {other:?}"))),
        }
    }
}

/// Deterministic procedural scene in a ~[-1,1] box, meant to be viewed from
/// the orbit rig at radius 3-4. `object_on_plane` labels roughly 30% of the
/// Gaussians "object", clustered in a ball resting on the ground plane.
pub fn make_toy_scene(kind: ToyKind, n: usize, seed: u64) -> Result<GaussianScene> {
    if n == 0 {
        return Err(Error::InvalidParam("toy scene needs n >= 1".into()));
    }
    let mut r = rng::stream(seed, "toy-scene", 0);
    let mut gaussians = Vec::with_capacity(n);
    let mut labels = vec![String::new(); n];

    let n_object = match kind {
        ToyKind::ObjectOnPlane => ((n as f64) * 0.3).round() as usize,
        _ => 0,
    };

    for i in 0..n {
        let is_object = i < n_object;
        let g = match kind {
            ToyKind::Random => random_gaussian(&mut r),
            ToyKind::Plane => plane_gaussian(&mut r),
            ToyKind::ObjectOnPlane => {
                if is_object {
                    object_gaussian(&mut r)
                } else {
                    plane_gaussian(&mut r)
                }
            }
        };
        if is_object {
            labels[i] = "object".to_string();
        }
        gaussians.push(g);
    }

    let scene = GaussianScene {
        gaussians,
        background: [0.05, 0.05, 0.08],
        scene_id: format!("toy-{kind:?}-{n}-{seed}"),
        labels,
    };
    scene.validate()?;
    Ok(scene)
}

fn random_quat(r: &mut rand_chacha::ChaCha8Rng) -> [f64; 4] {
    let mut q = [rng::normal(r), rng::normal(r), rng::normal(r), rng::normal(r)];
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n < 1e-9 {
        return [1.0, 0.0, 0.0, 0.0];
    }
    for v in q.iter_mut() {
        *v /= n;
    }
    q
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn plane_gaussian(r: &mut rand_chacha::ChaCha8Rng) -> Gaussian {
    let x = rng::uniform(r, -1.2, 1.2);
    let z = rng::uniform(r, -1.2, 1.2);
    let y = -0.4 + 0.01 * rng::normal(r);
    // smooth color field so views have structure for the metrics to see
    let c0 = 0.35 + 0.25 * (2.1 * x).sin() * (1.7 * z).cos();
    let c1 = 0.40 + 0.20 * (1.3 * x + 0.8 * z).sin();
    let c2 = 0.35 + 0.20 * (2.9 * z).cos();
    Gaussian {
        position: [x, y, z],
        log_scale: [
            (0.09 + 0.02 * rng::uniform(r, 0.0, 1.0)).ln(),
            (0.02 + 0.005 * rng::uniform(r, 0.0, 1.0)).ln(),
            (0.09 + 0.02 * rng::uniform(r, 0.0, 1.0)).ln(),
        ],
        rotation: [1.0, 0.0, 0.0, 0.0],
        opacity_logit: logit(rng::uniform(r, 0.45, 0.75)),
        color_dc: [logit(c0.clamp(0.05, 0.95)), logit(c1.clamp(0.05, 0.95)), logit(c2.clamp(0.05, 0.95))],
        color_rest: std::array::from_fn(|_| 0.1 * rng::normal(r)),
    }
}

fn object_gaussian(r: &mut rand_chacha::ChaCha8Rng) -> Gaussian {
    // ball of radius ~0.35 resting on the plane at y = -0.4
    let dir = random_quat(r);
    let radius = 0.35 * rng::uniform(r, 0.0, 1.0_f64).cbrt();
    let p = [dir[1] * radius, dir[2] * radius * 0.9 - 0.05, dir[3] * radius];
    let c0 = 0.75 + 0.15 * rng::normal(r) * 0.3;
    let c1 = 0.30 + 0.10 * rng::normal(r) * 0.3;
    let c2 = 0.25 + 0.10 * rng::normal(r) * 0.3;
    Gaussian {
        position: p,
        log_scale: std::array::from_fn(|_| (0.05 + 0.03 * rng::uniform(r, 0.0, 1.0)).ln()),
        rotation: random_quat(r),
        opacity_logit: logit(rng::uniform(r, 0.55, 0.85)),
        color_dc: [logit(c0.clamp(0.05, 0.95)), logit(c1.clamp(0.05, 0.95)), logit(c2.clamp(0.05, 0.95))],
        color_rest: std::array::from_fn(|_| 0.15 * rng::normal(r)),
    }
}

fn random_gaussian(r: &mut rand_chacha::ChaCha8Rng) -> Gaussian {
    Gaussian {
        position: [
            rng::uniform(r, -1.0, 1.0),
            rng::uniform(r, -1.0, 1.0),
            rng::uniform(r, -1.0, 1.0),
        ],
        log_scale: std::array::from_fn(|_| (0.04 + 0.06 * rng::uniform(r, 0.0, 1.0)).ln()),
        rotation: random_quat(r),
        opacity_logit: logit(rng::uniform(r, 0.3, 0.9)),
        color_dc: std::array::from_fn(|_| logit(rng::uniform(r, 0.1, 0.9))),
        color_rest: std::array::from_fn(|_| 0.15 * rng::normal(r)),
    }
}

/// Add zero-mean Gaussian noise of std `sigma` to every non-position
/// parameter group; quaternions are renormalized afterwards. Positions are
/// untouched and the input scene is not modified.
pub fn distort_noise(scene: &GaussianScene, sigma: f64, seed: u64) -> Result<GaussianScene> {
    if sigma < 0.0 {
        return Err(Error::InvalidParam("noise sigma must be >= 0".into()));
    }
    let mut out = scene.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let mut r = rng::stream(seed, "model-noise", 0);
    for g in out.gaussians.iter_mut() {
        for v in g.log_scale.iter_mut() {
            *v += sigma * rng::normal(&mut r);
        }
        for v in g.rotation.iter_mut() {
            *v += sigma * rng::normal(&mut r);
        }
        normalize_quat(&mut g.rotation);
        g.opacity_logit += sigma * rng::normal(&mut r);
        for v in g.color_dc.iter_mut() {
            *v += sigma * rng::normal(&mut r);
        }
        for v in g.color_rest.iter_mut() {
            *v += sigma * rng::normal(&mut r);
        }
    }
    out.scene_id = format!("{}+noise{}", scene.scene_id, sigma);
    out.validate()?;
    Ok(out)
}

/// Remove floor(fraction * N) uniformly chosen Gaussians.
pub fn distort_prune(scene: &GaussianScene, fraction: f64, seed: u64) -> Result<GaussianScene> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidParam("prune fraction must be in [0,1)".into()));
    }
    let k = (fraction * scene.len() as f64).floor() as usize;
    if k == 0 {
        return Ok(scene.clone());
    }
    let mut r = rng::stream(seed, "model-prune", 0);
    let drop = rng::sample_distinct(&mut r, scene.len(), k);
    let mut dropped = vec![false; scene.len()];
    for i in drop {
        dropped[i] = true;
    }
    let mut out = GaussianScene {
        gaussians: Vec::with_capacity(scene.len() - k),
        background: scene.background,
        scene_id: format!("{}+prune{}", scene.scene_id, fraction),
        labels: Vec::with_capacity(scene.len() - k),
    };
    for i in 0..scene.len() {
        if !dropped[i] {
            out.gaussians.push(scene.gaussians[i].clone());
            out.labels.push(scene.labels[i].clone());
        }
    }
    out.validate()?;
    Ok(out)
}

/// Duplicate floor(fraction * N) uniformly chosen Gaussians. The duplicate
/// gets position jitter of std 1e-3 scene units; opacity is halved on both
/// copies so compositing stays near-neutral. Clones are appended, keeping
/// the original ordering stable.
pub fn distort_clone(scene: &GaussianScene, fraction: f64, seed: u64) -> Result<GaussianScene> {
    if fraction < 0.0 {
        return Err(Error::InvalidParam("clone fraction must be >= 0".into()));
    }
    let k = (fraction * scene.len() as f64).floor() as usize;
    if k == 0 {
        return Ok(scene.clone());
    }
    let mut r = rng::stream(seed, "model-clone", 0);
    let chosen = rng::sample_distinct(&mut r, scene.len(), k);
    let mut out = scene.clone();
    out.scene_id = format!("{}+clone{}", scene.scene_id, fraction);
    for &i in &chosen {
        let half = halve_opacity(out.gaussians[i].opacity_logit);
        out.gaussians[i].opacity_logit = half;
        let mut dup = out.gaussians[i].clone();
        for v in dup.position.iter_mut() {
            *v += 1e-3 * rng::normal(&mut r);
        }
        out.labels.push(out.labels[i].clone());
        out.gaussians.push(dup);
    }
    out.validate()?;
    Ok(out)
}

// alpha' = alpha/2 in opacity space, expressed back in logit space
fn halve_opacity(opacity_logit: f64) -> f64 {
    let a = 1.0 / (1.0 + (-opacity_logit).exp());
    let h = (a / 2.0).clamp(1e-12, 1.0 - 1e-12);
    (h / (1.0 - h)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn save_load_roundtrip_is_field_identical() {
        let scene = make_toy_scene(ToyKind::ObjectOnPlane, 50, 3).unwrap();
        let dir = tmp();
        let path = dir.path().join("s.gspl");
        scene_save(&scene, &path).unwrap();
        let back = scene_load(&path).unwrap();
        assert_eq!(scene, back);
    }

    #[test]
    fn load_rejects_empty_scene() {
        let dir = tmp();
        let path = dir.path().join("empty.gspl");
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.push(VERSION);
        buf.extend_from_slice(&0u64.to_le_bytes());
        std::fs::write(&path, &buf).unwrap();
        assert!(matches!(scene_load(&path), Err(Error::EmptyScene)));
    }

    #[test]
    fn load_rejects_zero_norm_quaternion() {
        let mut scene = make_toy_scene(ToyKind::Random, 2, 1).unwrap();
        let dir = tmp();
        let path = dir.path().join("badrot.gspl");
        scene.gaussians[1].rotation = [0.0; 4];
        // bypass validation in save by writing the payload manually
        let good = make_toy_scene(ToyKind::Random, 2, 1).unwrap();
        scene_save(&good, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let rec_off = 13 + FLOATS_PER_RECORD * 8 + 6 * 8;
        for i in 0..4 {
            bytes[rec_off + i * 8..rec_off + (i + 1) * 8].copy_from_slice(&0f64.to_le_bytes());
        }
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(scene_load(&path), Err(Error::InvalidRotation(_, 1))));
    }

    #[test]
    fn load_rejects_bad_magic_version_truncation() {
        let dir = tmp();
        let scene = make_toy_scene(ToyKind::Plane, 3, 0).unwrap();
        let path = dir.path().join("s.gspl");
        scene_save(&scene, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(dir.path().join("m.gspl"), &bad).unwrap();
        assert!(matches!(scene_load(&dir.path().join("m.gspl")), Err(Error::MalformedHeader(_))));

        let mut bad = bytes.clone();
        bad[4] = 9;
        std::fs::write(dir.path().join("v.gspl"), &bad).unwrap();
        assert!(matches!(
            scene_load(&dir.path().join("v.gspl")),
            Err(Error::VersionMismatch { expected: 1, got: 9 })
        ));

        std::fs::write(dir.path().join("t.gspl"), &bytes[..40]).unwrap();
        assert!(matches!(
            scene_load(&dir.path().join("t.gspl")),
            Err(Error::TruncatedPayload { .. })
        ));
    }

    #[test]
    fn toy_scene_is_deterministic() {
        let a = make_toy_scene(ToyKind::Random, 100, 7).unwrap();
        let b = make_toy_scene(ToyKind::Random, 100, 7).unwrap();
        assert_eq!(a, b);
        assert!(make_toy_scene(ToyKind::Random, 0, 7).is_err());
    }

    #[test]
    fn object_fraction_in_range() {
        let scene = make_toy_scene(ToyKind::ObjectOnPlane, 2000, 1).unwrap();
        let frac = scene.indices_with_label("object").len() as f64 / scene.len() as f64;
        assert!((0.1..=0.5).contains(&frac), "object fraction {frac}");
    }

    #[test]
    fn single_plane_gaussian_has_unit_rotation() {
        let scene = make_toy_scene(ToyKind::Plane, 1, 0).unwrap();
        let n: f64 = scene.gaussians[0].rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn distortions_identity_and_determinism() {
        let scene = make_toy_scene(ToyKind::Random, 100, 5).unwrap();
        assert_eq!(distort_noise(&scene, 0.0, 9).unwrap(), scene);
        assert_eq!(distort_prune(&scene, 0.0, 9).unwrap(), scene);
        assert_eq!(distort_clone(&scene, 0.0, 9).unwrap(), scene);
        assert_eq!(
            distort_noise(&scene, 0.05, 9).unwrap(),
            distort_noise(&scene, 0.05, 9).unwrap()
        );
        assert!(distort_noise(&scene, -0.1, 9).is_err());
        assert!(distort_prune(&scene, 1.0, 9).is_err());
    }

    #[test]
    fn prune_and_clone_counts() {
        let scene = make_toy_scene(ToyKind::Random, 100, 5).unwrap();
        assert_eq!(distort_prune(&scene, 0.5, 1).unwrap().len(), 50);
        assert_eq!(distort_clone(&scene, 0.1, 1).unwrap().len(), 110);
    }

    #[test]
    fn distortions_preserve_invariants_and_input() {
        let scene = make_toy_scene(ToyKind::Random, 60, 2).unwrap();
        let copy = scene.clone();
        let noisy = distort_noise(&scene, 0.3, 4).unwrap();
        let pruned = distort_prune(&scene, 0.25, 4).unwrap();
        let cloned = distort_clone(&scene, 0.25, 4).unwrap();
        assert_eq!(scene, copy);
        for s in [&noisy, &pruned, &cloned] {
            s.validate().unwrap();
        }
        // positions untouched by noise
        for (a, b) in scene.gaussians.iter().zip(&noisy.gaussians) {
            assert_eq!(a.position, b.position);
        }
    }

    #[test]
    fn clone_halves_opacity_on_both_copies() {
        let scene = make_toy_scene(ToyKind::Random, 10, 2).unwrap();
        let cloned = distort_clone(&scene, 0.1, 3).unwrap();
        assert_eq!(cloned.len(), 11);
        let sig = |l: f64| 1.0 / (1.0 + (-l).exp());
        // exactly one original index was halved and its clone appended last
        let changed: Vec<usize> = (0..10)
            .filter(|&i| scene.gaussians[i].opacity_logit != cloned.gaussians[i].opacity_logit)
            .collect();
        assert_eq!(changed.len(), 1);
        let i = changed[0];
        assert!(
            (sig(cloned.gaussians[i].opacity_logit) - sig(scene.gaussians[i].opacity_logit) / 2.0)
                .abs()
                < 1e-12
        );
        assert_eq!(cloned.gaussians[10].opacity_logit, cloned.gaussians[i].opacity_logit);
    }
}
