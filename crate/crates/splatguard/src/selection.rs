//! Update-saliency-motivated Gaussian selection: per-Gaussian mask scores
//! from rasterized contributions, soft/hard update coefficients, procedural
//! ground-truth masks, and the saliency CSV export.
//!
//! The mask is computed once before optimization and stays fixed; it only
//! scales adversarial updates, never watermark updates.

use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::image::Gray;
use crate::renderer::{self, GradientBundle};
use crate::scene::GaussianScene;
use std::path::Path;

pub const SCORE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskMode {
    Soft,
    Hard(f64),
}

/// Per-Gaussian adversarial update coefficients with their provenance.
#[derive(Debug, Clone)]
pub struct SoftMask {
    /// Update coefficient m_i in [0,1]; in hard mode m_i is 0 or 1.
    pub m: Vec<f64>,
    /// Raw mask score s_i in [0,1].
    pub s: Vec<f64>,
    pub tau: f64,
    pub gamma: f64,
    pub mode: MaskMode,
    pub views_used: Vec<String>,
}

impl SoftMask {
    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// All-ones mask (every Gaussian fully selected).
    pub fn full(n: usize) -> SoftMask {
        SoftMask {
            m: vec![1.0; n],
            s: vec![1.0; n],
            tau: 0.0,
            gamma: 1.0,
            mode: MaskMode::Soft,
            views_used: Vec::new(),
        }
    }

    /// CSV export: header line, then one (index, s, m) row per Gaussian.
    /// Provenance rides along in a comment line.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mode = match self.mode {
            MaskMode::Soft => "soft".to_string(),
            MaskMode::Hard(t) => format!("hard:{t}"),
        };
        let mut text = format!(
            "# tau={} gamma={} mode={} views={}\nindex,s,m\n",
            self.tau,
            self.gamma,
            mode,
            self.views_used.join(";")
        );
        for i in 0..self.len() {
            text.push_str(&format!("{},{},{}\n", i, self.s[i], self.m[i]));
        }
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<SoftMask> {
        let text = std::fs::read_to_string(path)?;
        let mut tau = 0.0;
        let mut gamma = 1.0;
        let mut mode = MaskMode::Soft;
        let mut views_used = Vec::new();
        let mut s = Vec::new();
        let mut m = Vec::new();
        for line in text.lines() {
            if let Some(meta) = line.strip_prefix('#') {
                for field in meta.split_whitespace() {
                    if let Some(v) = field.strip_prefix("tau=") {
                        tau = v.parse().map_err(|_| Error::Config("bad tau".into()))?;
                    } else if let Some(v) = field.strip_prefix("gamma=") {
                        gamma = v.parse().map_err(|_| Error::Config("bad gamma".into()))?;
                    } else if let Some(v) = field.strip_prefix("mode=") {
                        mode = match v {
                            "soft" => MaskMode::Soft,
                            other => match other.strip_prefix("hard:") {
                                Some(t) => MaskMode::Hard(
                                    t.parse().map_err(|_| Error::Config("bad threshold".into()))?,
                                ),
                                None => return Err(Error::Config(format!("bad mask mode {v:?}"))),
                            },
                        };
                    } else if let Some(v) = field.strip_prefix("views=") {
                        views_used = v.split(';').filter(|s| !s.is_empty()).map(String::from).collect();
                    }
                }
                continue;
            }
            if line.starts_with("index") || line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 {
                return Err(Error::Config(format!("bad mask row {line:?}")));
            }
            s.push(parts[1].parse().map_err(|_| Error::Config("bad s value".into()))?);
            m.push(parts[2].parse().map_err(|_| Error::Config("bad m value".into()))?);
        }
        if m.is_empty() {
            return Err(Error::Config("mask csv has no rows".into()));
        }
        Ok(SoftMask { m, s, tau, gamma, mode, views_used })
    }
}

/// Mask score per Gaussian: mask-weighted contribution over all views
/// divided by total contribution (plus epsilon). Never-rendered Gaussians
/// score 0; fully in-mask Gaussians approach 1.
pub fn gaussian_scores(
    scene: &GaussianScene,
    views: &[CameraView],
    masks: &[Gray],
) -> Result<Vec<f64>> {
    if views.len() != masks.len() {
        return Err(Error::SizeMismatch(format!(
            "{} views vs {} masks",
            views.len(),
            masks.len()
        )));
    }
    if views.is_empty() {
        return Err(Error::InvalidParam("need at least one mask view".into()));
    }
    let mut num = vec![0.0; scene.len()];
    let mut den = vec![0.0; scene.len()];
    for (view, mask) in views.iter().zip(masks) {
        let r = renderer::render(scene, view, Some(mask))?;
        for i in 0..scene.len() {
            num[i] += r.contrib_mask_num[i];
            den[i] += r.contrib_den[i];
        }
    }
    Ok((0..scene.len()).map(|i| num[i] / (den[i] + SCORE_EPS)).collect())
}

/// Soft update coefficients m_i = min(1, (s_i / (tau + eps))^gamma).
pub fn soft_coefficients(s: &[f64], tau: f64, gamma: f64) -> Result<Vec<f64>> {
    if tau <= 0.0 || gamma <= 0.0 {
        return Err(Error::InvalidParam("tau and gamma must be positive".into()));
    }
    Ok(s.iter()
        .map(|&si| (si / (tau + SCORE_EPS)).powf(gamma).min(1.0))
        .collect())
}

/// Hard selection: m_i = 1 iff s_i >= threshold, threshold in (0,1).
pub fn hard_coefficients(s: &[f64], threshold: f64) -> Result<Vec<f64>> {
    if !(0.0 < threshold && threshold < 1.0) {
        return Err(Error::InvalidParam("hard threshold must be in (0,1)".into()));
    }
    Ok(s.iter().map(|&si| if si >= threshold { 1.0 } else { 0.0 }).collect())
}

/// Build a SoftMask from scores under the given mode.
pub fn build_mask(
    s: Vec<f64>,
    tau: f64,
    gamma: f64,
    mode: MaskMode,
    views_used: Vec<String>,
) -> Result<SoftMask> {
    let m = match mode {
        MaskMode::Soft => soft_coefficients(&s, tau, gamma)?,
        MaskMode::Hard(threshold) => hard_coefficients(&s, threshold)?,
    };
    Ok(SoftMask { m, s, tau, gamma, mode, views_used })
}

/// Ground-truth-style 2D mask for one view: the accumulated compositing
/// weight of the labelled Gaussians within the full scene render, clamped to
/// [0,1]. Occlusion by unlabelled Gaussians therefore suppresses the mask.
pub fn procedural_mask(scene: &GaussianScene, view: &CameraView, label: &str) -> Result<Gray> {
    let selected = scene.indices_with_label(label);
    if selected.is_empty() && !scene.labels.iter().any(|l| l == label) {
        return Err(Error::UnknownLabel(label.to_string()));
    }
    let mut in_label = vec![false; scene.len()];
    for i in selected {
        in_label[i] = true;
    }
    let (_result, weights) = renderer::render_dense_weights(scene, view)?;
    let mut mask = Gray::zeros(view.width, view.height);
    for (i, wv) in weights.iter().enumerate() {
        if !in_label[i] {
            continue;
        }
        for (p, w) in mask.data.iter_mut().zip(wv) {
            *p += w;
        }
    }
    for v in mask.data.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(mask)
}

/// Per-Gaussian L2 norm over every parameter-group gradient, plus a CSV with
/// rows (index, x, y, z, saliency). This is the export behind the
/// "which Gaussians get adversarial updates" visualizations.
pub fn saliency_export(
    bundle: &GradientBundle,
    scene: &GaussianScene,
    path: Option<&Path>,
) -> Result<Vec<f64>> {
    if bundle.n != scene.len() {
        return Err(Error::SizeMismatch(format!(
            "bundle n {} vs scene n {}",
            bundle.n,
            scene.len()
        )));
    }
    let saliency: Vec<f64> = (0..scene.len()).map(|i| bundle.gaussian_norm(i)).collect();
    if let Some(path) = path {
        let mut text = String::from("index,x,y,z,saliency\n");
        for (i, s) in saliency.iter().enumerate() {
            let p = scene.gaussians[i].position;
            text.push_str(&format!("{},{},{},{},{}\n", i, p[0], p[1], p[2], s));
        }
        std::fs::write(path, text)?;
    }
    Ok(saliency)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{default_focal, orbit_rig};
    use crate::scene::{make_toy_scene, ToyKind};

    fn rig(n: usize, size: usize) -> Vec<CameraView> {
        orbit_rig(n, 3.6, 1.4, size, default_focal(size), 0.0, "m")
    }

    #[test]
    fn all_ones_mask_scores_visible_gaussians_near_one() {
        let scene = make_toy_scene(ToyKind::ObjectOnPlane, 200, 1).unwrap();
        let views = rig(4, 32);
        let masks: Vec<Gray> = views.iter().map(|v| Gray::constant(v.width, v.height, 1.0)).collect();
        let s = gaussian_scores(&scene, &views, &masks).unwrap();
        for (i, si) in s.iter().enumerate() {
            assert!((0.0..=1.0).contains(si), "score {si} at {i}");
        }
        // visible Gaussians score ~1 under a full mask
        let visible: Vec<f64> = s.iter().cloned().filter(|v| *v > 0.0).collect();
        assert!(!visible.is_empty());
        for v in &visible {
            assert!(*v > 0.999, "visible score {v}");
        }
        let zero_masks: Vec<Gray> =
            views.iter().map(|v| Gray::constant(v.width, v.height, 0.0)).collect();
        let s0 = gaussian_scores(&scene, &views, &zero_masks).unwrap();
        assert!(s0.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn object_mask_separates_object_from_plane() {
        let scene = make_toy_scene(ToyKind::ObjectOnPlane, 400, 2).unwrap();
        let views = rig(6, 32);
        let masks: Vec<Gray> = views
            .iter()
            .map(|v| procedural_mask(&scene, v, "object").unwrap())
            .collect();
        let s = gaussian_scores(&scene, &views, &masks).unwrap();
        let object = scene.indices_with_label("object");
        let mut mean_obj = 0.0;
        let mut mean_bg = 0.0;
        let mut n_bg = 0;
        for i in 0..scene.len() {
            if object.contains(&i) {
                mean_obj += s[i];
            } else {
                mean_bg += s[i];
                n_bg += 1;
            }
        }
        mean_obj /= object.len() as f64;
        mean_bg /= n_bg as f64;
        assert!(
            mean_obj > mean_bg,
            "object mean {mean_obj} must beat background mean {mean_bg}"
        );
    }

    #[test]
    fn score_is_view_order_invariant() {
        let scene = make_toy_scene(ToyKind::ObjectOnPlane, 120, 3).unwrap();
        let views = rig(4, 24);
        let masks: Vec<Gray> = views
            .iter()
            .map(|v| procedural_mask(&scene, v, "object").unwrap())
            .collect();
        let s1 = gaussian_scores(&scene, &views, &masks).unwrap();
        let rev_views: Vec<CameraView> = views.iter().rev().cloned().collect();
        let rev_masks: Vec<Gray> = masks.iter().rev().cloned().collect();
        let s2 = gaussian_scores(&scene, &rev_views, &rev_masks).unwrap();
        for (a, b) in s1.iter().zip(&s2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn soft_coefficient_formula() {
        let s = vec![0.0, 0.3, 0.6 + SCORE_EPS, 1.0];
        let m = soft_coefficients(&s, 0.6, 2.0).unwrap();
        assert_eq!(m[0], 0.0);
        assert!((m[1] - 0.25).abs() < 1e-7, "(0.3/0.6)^2: got {}", m[1]);
        assert!((m[2] - 1.0).abs() < 1e-12, "saturation point: got {}", m[2]);
        assert_eq!(m[3], 1.0);
        assert!(soft_coefficients(&s, 0.0, 2.0).is_err());
        assert!(soft_coefficients(&s, 0.6, 0.0).is_err());
    }

    #[test]
    fn soft_is_monotone_and_bounded() {
        let s: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        let m = soft_coefficients(&s, 0.35, 3.0).unwrap();
        for w in m.windows(2) {
            assert!(w[1] >= w[0]);
        }
        assert!(m.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn hard_thresholds() {
        let s = vec![0.0, 0.2, 0.5, 0.999, 1.0];
        let m = hard_coefficients(&s, 1e-9).unwrap();
        assert_eq!(m, vec![0.0, 1.0, 1.0, 1.0, 1.0]);
        let m = hard_coefficients(&s, 0.9999999).unwrap();
        assert_eq!(m, vec![0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(hard_coefficients(&s, 0.0).is_err());
        assert!(hard_coefficients(&s, 1.0).is_err());
    }

    #[test]
    fn gamma_limit_matches_hard_selection() {
        let tau = 0.45;
        let s: Vec<f64> = (0..200).map(|i| (i as f64 * 0.005 + 0.001).min(1.0)).collect();
        let soft = soft_coefficients(&s, tau, 64.0).unwrap();
        let hard = hard_coefficients(&s, tau).unwrap();
        let soft_set: Vec<usize> =
            soft.iter().enumerate().filter(|(_, v)| **v == 1.0).map(|(i, _)| i).collect();
        let hard_set: Vec<usize> =
            hard.iter().enumerate().filter(|(_, v)| **v == 1.0).map(|(i, _)| i).collect();
        assert_eq!(soft_set, hard_set);
    }

    #[test]
    fn procedural_mask_full_and_unknown_label() {
        let mut scene = make_toy_scene(ToyKind::ObjectOnPlane, 80, 4).unwrap();
        let view = &rig(1, 24)[0];
        assert!(procedural_mask(&scene, view, "no-such-label").is_err());

        // full label set: mask equals total alpha coverage
        for l in scene.labels.iter_mut() {
            *l = "all".to_string();
        }
        let mask = procedural_mask(&scene, view, "all").unwrap();
        let r = renderer::render(&scene, view, None).unwrap();
        let (_, weights) = renderer::render_dense_weights(&scene, view).unwrap();
        for p in 0..mask.data.len() {
            let coverage: f64 = weights.iter().map(|wv| wv[p]).sum();
            assert!((mask.data[p] - coverage.clamp(0.0, 1.0)).abs() < 1e-12);
        }
        drop(r);
    }

    #[test]
    fn object_mask_support_tracks_projected_centers() {
        let scene = make_toy_scene(ToyKind::ObjectOnPlane, 500, 5).unwrap();
        let view = &rig(1, 48)[0];
        let mask = procedural_mask(&scene, view, "object").unwrap();
        // mean mask value inside the projected object bounding box must beat
        // the outside mean
        let mut min_x = f64::MAX;
        let mut max_x = f64::MIN;
        let mut min_y = f64::MAX;
        let mut max_y = f64::MIN;
        for i in scene.indices_with_label("object") {
            let splat = renderer::project(&scene.gaussians[i], view);
            if !splat.visible {
                continue;
            }
            min_x = min_x.min(splat.mean2d[0]);
            max_x = max_x.max(splat.mean2d[0]);
            min_y = min_y.min(splat.mean2d[1]);
            max_y = max_y.max(splat.mean2d[1]);
        }
        let mut inside = (0.0, 0usize);
        let mut outside = (0.0, 0usize);
        for y in 0..mask.height {
            for x in 0..mask.width {
                let fx = x as f64 + 0.5;
                let fy = y as f64 + 0.5;
                if fx >= min_x && fx <= max_x && fy >= min_y && fy <= max_y {
                    inside.0 += mask.get(x, y);
                    inside.1 += 1;
                } else {
                    outside.0 += mask.get(x, y);
                    outside.1 += 1;
                }
            }
        }
        let mean_in = inside.0 / inside.1.max(1) as f64;
        let mean_out = outside.0 / outside.1.max(1) as f64;
        assert!(mean_in > 2.0 * mean_out, "inside {mean_in} vs outside {mean_out}");
    }

    #[test]
    fn saliency_zero_and_homogeneous() {
        let scene = make_toy_scene(ToyKind::Random, 10, 6).unwrap();
        let zero = GradientBundle::zeros(scene.len());
        let s = saliency_export(&zero, &scene, None).unwrap();
        assert!(s.iter().all(|v| *v == 0.0));

        let mut bundle = GradientBundle::zeros(scene.len());
        for (i, v) in bundle.data.iter_mut().enumerate() {
            *v = ((i * 7 + 3) % 11) as f64 * 0.1;
        }
        let s1 = saliency_export(&bundle, &scene, None).unwrap();
        let mut doubled = bundle.clone();
        doubled.scale(2.0);
        let s2 = saliency_export(&doubled, &scene, None).unwrap();
        for (a, b) in s1.iter().zip(&s2) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.csv");
        let mask = build_mask(
            vec![0.1, 0.5, 0.9],
            0.6,
            2.0,
            MaskMode::Soft,
            vec!["m000".into(), "m001".into()],
        )
        .unwrap();
        mask.save_csv(&path).unwrap();
        let back = SoftMask::load_csv(&path).unwrap();
        assert_eq!(mask.s, back.s);
        assert_eq!(mask.m, back.m);
        assert_eq!(back.tau, 0.6);
        assert_eq!(back.views_used, vec!["m000", "m001"]);
    }
}
