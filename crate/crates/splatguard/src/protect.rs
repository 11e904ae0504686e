//! Joint protection loop: per-view watermark and adversarial losses, soft
//! mask and parameter-role gradient modulation, and the Adam update loop that
//! produces the protected scene.
//!
//! Per iteration a view batch and one (prompt, timestep, noise) triple are
//! sampled; the watermark branch is scene-wide while the adversarial gradient
//! is scaled per Gaussian by the precomputed mask and per group by its role
//! coefficient before the two are combined. Modulation happens on raw
//! gradients, so the Adam moments see the modulated values.

use crate::camera::CameraView;
use crate::editor::{self, PromptEmbedding, SurrogateEditor, Tensor};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics;
use crate::optim::{apply_params, renormalize_quaternions, scene_params, Adam};
use crate::parallel;
use crate::renderer::{self, lane_group, GradientBundle, LANES};
use crate::rng;
use crate::scene::{GaussianScene, GroupValues, ParamGroup};
use crate::selection::SoftMask;
use crate::watermark::{self, Message, WatermarkKey};
use rand::Rng;

/// All protection knobs. Loss weights follow the reference configuration
/// (message 0.1, quality 1.0, diversion terms 1e-4); role coefficients treat
/// opacity and DC color conservatively.
#[derive(Debug, Clone)]
pub struct ProtectConfig {
    pub lambda_adv: f64,
    pub lambda_msg: f64,
    pub lambda_quality: f64,
    /// Feature-term weight inside the quality loss.
    pub lambda_feat: f64,
    pub lambda_lat: f64,
    pub lambda_traj: f64,
    pub lambda_xattn: f64,
    /// Role coefficients rho_k; positions are implicitly 0.
    pub rho: GroupValues,
    pub epochs: usize,
    pub views_per_iter: usize,
    pub lr: GroupValues,
    pub beta1: f64,
    pub beta2: f64,
    /// Diffusion timestep sampling range (inclusive).
    pub t_min: usize,
    pub t_max: usize,
    pub seed: u64,
    /// Parameter-group toggles; a disabled group receives no update at all.
    pub enable_scale: bool,
    pub enable_rotation: bool,
    pub enable_opacity: bool,
    pub enable_color_dc: bool,
    pub enable_color_rest: bool,
}

impl Default for ProtectConfig {
    fn default() -> Self {
        ProtectConfig {
            lambda_adv: 1.0,
            lambda_msg: 0.1,
            lambda_quality: 1.0,
            lambda_feat: 0.1,
            lambda_lat: 1e-4,
            lambda_traj: 1e-4,
            lambda_xattn: 1e-4,
            rho: GroupValues {
                scale: 1.0,
                rotation: 1.0,
                opacity: 0.1,
                color_dc: 0.1,
                color_rest: 1.0,
            },
            epochs: 8,
            views_per_iter: 4,
            lr: GroupValues {
                scale: 2e-3,
                rotation: 2e-3,
                opacity: 5e-3,
                color_dc: 5e-3,
                color_rest: 5e-3,
            },
            beta1: 0.9,
            beta2: 0.999,
            t_min: 200,
            t_max: 800,
            seed: 0,
            enable_scale: true,
            enable_rotation: true,
            enable_opacity: true,
            enable_color_dc: true,
            enable_color_rest: true,
        }
    }
}

impl ProtectConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_adv", self.lambda_adv),
            ("lambda_msg", self.lambda_msg),
            ("lambda_quality", self.lambda_quality),
            ("lambda_feat", self.lambda_feat),
            ("lambda_lat", self.lambda_lat),
            ("lambda_traj", self.lambda_traj),
            ("lambda_xattn", self.lambda_xattn),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::InvalidParam(format!("{name} must be finite and >= 0")));
            }
        }
        if self.epochs < 1 {
            return Err(Error::InvalidParam("epochs must be >= 1".into()));
        }
        if self.views_per_iter < 1 {
            return Err(Error::InvalidParam("views_per_iter must be >= 1".into()));
        }
        if self.t_min < 1 + editor::TRAJ_DELTA || self.t_max > editor::T_MAX || self.t_min > self.t_max {
            return Err(Error::InvalidParam(format!(
                "timestep range [{}, {}] invalid (needs {} <= t_min <= t_max <= {})",
                self.t_min,
                self.t_max,
                1 + editor::TRAJ_DELTA,
                editor::T_MAX
            )));
        }
        Ok(())
    }

    pub fn group_enabled(&self, g: ParamGroup) -> bool {
        match g {
            ParamGroup::Position => false,
            ParamGroup::Scale => self.enable_scale,
            ParamGroup::Rotation => self.enable_rotation,
            ParamGroup::Opacity => self.enable_opacity,
            ParamGroup::ColorDC => self.enable_color_dc,
            ParamGroup::ColorRest => self.enable_color_rest,
        }
    }
}

/// Loss traces and end-of-run summary written next to the protected scene.
#[derive(Debug, Clone, Default)]
pub struct ProtectReport {
    pub iterations: usize,
    pub wm_trace: Vec<f64>,
    pub msg_trace: Vec<f64>,
    pub quality_trace: Vec<f64>,
    pub adv_trace: Vec<f64>,
    pub adv_render_trace: Vec<f64>,
    pub lat_trace: Vec<f64>,
    pub traj_trace: Vec<f64>,
    pub xattn_trace: Vec<f64>,
    pub final_bit_accuracy: f64,
    pub final_psnr: f64,
    pub wall_clock_secs: f64,
}

impl ProtectReport {
    pub fn trace_csv(&self) -> String {
        let mut text =
            String::from("iteration,wm_loss,msg_loss,quality_loss,adv_loss,adv_render,s_lat,s_traj,s_xattn\n");
        for i in 0..self.iterations {
            text.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                i,
                self.wm_trace[i],
                self.msg_trace[i],
                self.quality_trace[i],
                self.adv_trace[i],
                self.adv_render_trace[i],
                self.lat_trace[i],
                self.traj_trace[i],
                self.xattn_trace[i],
            ));
        }
        text
    }

    pub fn summary(&self) -> String {
        format!(
            "iterations {}\nfinal_bit_accuracy {:.4}\nfinal_psnr {:.3}\nwall_clock_secs {:.2}\n",
            self.iterations, self.final_bit_accuracy, self.final_psnr, self.wall_clock_secs
        )
    }
}

/// Scene-wide watermark loss over a view batch: mean of per-view message BCE
/// plus quality loss, with the gradient routed through the renderer VJP.
/// Reference renders must align one-to-one with `views`.
pub fn wm_loss(
    scene: &GaussianScene,
    views: &[CameraView],
    reference_renders: &[Image],
    key: &WatermarkKey,
    message: &Message,
    editor: &SurrogateEditor,
    cfg: &ProtectConfig,
) -> Result<(f64, GradientBundle, f64, f64)> {
    if views.len() != reference_renders.len() {
        return Err(Error::MissingInput(format!(
            "{} views but {} reference renders",
            views.len(),
            reference_renders.len()
        )));
    }
    if views.is_empty() {
        return Err(Error::InvalidParam("wm_loss needs at least one view".into()));
    }
    let per_view: Vec<Result<(f64, f64, GradientBundle)>> = parallel::map_chunks(views.len(), |vi| {
        let view = &views[vi];
        let rendered = renderer::render(scene, view, None)?;
        let (lm, cot_m) = watermark::msg_loss(&rendered.image, key, message)?;
        let (lq, cot_q) =
            watermark::quality_loss(&rendered.image, &reference_renders[vi], editor, cfg.lambda_feat)?;
        let mut cot = Image::zeros(view.width, view.height);
        for i in 0..cot.data.len() {
            cot.data[i] = cfg.lambda_msg * cot_m.data[i] + cfg.lambda_quality * cot_q.data[i];
        }
        let bundle = renderer::render_vjp(scene, view, &cot)?;
        Ok((lm, lq, bundle))
    });
    let inv = 1.0 / views.len() as f64;
    let mut msg_mean = 0.0;
    let mut quality_mean = 0.0;
    let mut bundle = GradientBundle::zeros(scene.len());
    for r in per_view {
        let (lm, lq, b) = r?;
        msg_mean += lm * inv;
        quality_mean += lq * inv;
        bundle.add_scaled(&b, inv);
    }
    let loss = cfg.lambda_msg * msg_mean + cfg.lambda_quality * quality_mean;
    Ok((loss, bundle, msg_mean, quality_mean))
}

/// Per-view adversarial components averaged over the batch.
#[derive(Debug, Clone, Copy, Default)]
pub struct AdvComponents {
    pub render: f64,
    pub lat: f64,
    pub traj: f64,
    pub xattn: f64,
}

/// Adversarial objective over a view batch: reconstruction error toward the
/// frozen reference render minus the weighted diversion terms, all under one
/// shared (prompt, t, eps). Returns the raw (unmodulated) gradient bundle.
#[allow(clippy::too_many_arguments)]
pub fn adv_loss(
    scene: &GaussianScene,
    views: &[CameraView],
    reference_renders: &[Image],
    editor: &SurrogateEditor,
    prompt: &PromptEmbedding,
    t: usize,
    eps: &Tensor,
    cfg: &ProtectConfig,
) -> Result<(f64, GradientBundle, AdvComponents)> {
    if views.len() != reference_renders.len() {
        return Err(Error::MissingInput(format!(
            "{} views but {} reference renders",
            views.len(),
            reference_renders.len()
        )));
    }
    if views.is_empty() {
        return Err(Error::InvalidParam("adv_loss needs at least one view".into()));
    }
    let per_view: Vec<Result<(AdvComponents, GradientBundle)>> =
        parallel::map_chunks(views.len(), |vi| {
            let view = &views[vi];
            let reference = &reference_renders[vi];
            let rendered = renderer::render(scene, view, None)?.image;

            // mean l1 toward the frozen reference, plus its sign cotangent
            let n = rendered.data.len() as f64;
            let mut l_render = 0.0;
            let mut cot = Image::zeros(view.width, view.height);
            for (i, (a, b)) in rendered.data.iter().zip(&reference.data).enumerate() {
                let diff = a - b;
                l_render += diff.abs();
                cot.data[i] = if diff > 0.0 {
                    1.0 / n
                } else if diff < 0.0 {
                    -1.0 / n
                } else {
                    0.0
                };
            }
            l_render /= n;

            let (s_lat, cot_lat) = editor::s_lat(editor, &rendered, reference)?;
            let (s_traj, cot_traj) = editor::s_traj(editor, &rendered, reference, prompt, t, eps)?;
            let (s_xattn, cot_xattn) =
                editor::s_xattn(editor, &rendered, reference, prompt, t, eps)?;
            for i in 0..cot.data.len() {
                cot.data[i] -= cfg.lambda_lat * cot_lat.data[i]
                    + cfg.lambda_traj * cot_traj.data[i]
                    + cfg.lambda_xattn * cot_xattn.data[i];
            }
            let bundle = renderer::render_vjp(scene, view, &cot)?;
            Ok((AdvComponents { render: l_render, lat: s_lat, traj: s_traj, xattn: s_xattn }, bundle))
        });
    let inv = 1.0 / views.len() as f64;
    let mut comps = AdvComponents::default();
    let mut bundle = GradientBundle::zeros(scene.len());
    for r in per_view {
        let (c, b) = r?;
        comps.render += c.render * inv;
        comps.lat += c.lat * inv;
        comps.traj += c.traj * inv;
        comps.xattn += c.xattn * inv;
        bundle.add_scaled(&b, inv);
    }
    let loss = comps.render
        - cfg.lambda_lat * comps.lat
        - cfg.lambda_traj * comps.traj
        - cfg.lambda_xattn * comps.xattn;
    Ok((loss, bundle, comps))
}

/// Combine branch gradients:
///   out[i][k] = wm[i][k] + lambda_adv * m_i * rho_k * adv[i][k].
/// Watermark gradients are never scaled by the mask or role coefficients.
pub fn modulate(
    bundle_adv: &GradientBundle,
    mask: &SoftMask,
    rho: &GroupValues,
    lambda_adv: f64,
    bundle_wm: &GradientBundle,
) -> Result<GradientBundle> {
    if bundle_adv.n != bundle_wm.n || mask.len() != bundle_adv.n {
        return Err(Error::SizeMismatch(format!(
            "modulate shapes: adv {}, wm {}, mask {}",
            bundle_adv.n,
            bundle_wm.n,
            mask.len()
        )));
    }
    let mut lane_rho = [0.0f64; LANES];
    for (lane, lr) in lane_rho.iter_mut().enumerate() {
        *lr = rho.get(lane_group(lane));
    }
    let mut out = GradientBundle::zeros(bundle_wm.n);
    for i in 0..bundle_wm.n {
        let mi = mask.m[i];
        for lane in 0..LANES {
            let idx = i * LANES + lane;
            out.data[idx] =
                bundle_wm.data[idx] + lambda_adv * mi * lane_rho[lane] * bundle_adv.data[idx];
        }
    }
    Ok(out)
}

/// Run the joint optimization and return the protected scene plus its
/// report. The input scene is cloned as the frozen reference; positions are
/// never touched. With lambda_adv = 0 the adversarial branch is skipped
/// entirely, which is the watermark-only mode (the per-iteration random
/// draws are still consumed so both modes share one RNG schedule).
#[allow(clippy::too_many_arguments)]
pub fn protect(
    scene: &GaussianScene,
    cfg: &ProtectConfig,
    key: &WatermarkKey,
    message: &Message,
    mask: &SoftMask,
    editor: &SurrogateEditor,
    prompts: &[String],
    views: &[CameraView],
    heldout_views: &[CameraView],
) -> Result<(GaussianScene, ProtectReport)> {
    cfg.validate()?;
    scene.validate()?;
    if views.is_empty() {
        return Err(Error::InvalidParam("protect needs at least one training view".into()));
    }
    if prompts.is_empty() {
        return Err(Error::MissingInput("prompt library is empty".into()));
    }
    if mask.len() != scene.len() {
        return Err(Error::SizeMismatch(format!(
            "mask has {} entries for {} Gaussians",
            mask.len(),
            scene.len()
        )));
    }
    let start = std::time::Instant::now();

    let reference = scene.clone();
    let reference_renders: Vec<Image> = {
        let per: Vec<Result<Image>> = parallel::map_chunks(views.len(), |vi| {
            Ok(renderer::render(&reference, &views[vi], None)?.image)
        });
        per.into_iter().collect::<Result<Vec<_>>>()?
    };
    let prompt_embeddings: Vec<PromptEmbedding> =
        prompts.iter().map(|p| editor::embed_prompt(editor, p)).collect();

    let mut work = scene.clone();
    let mut params = scene_params(scene);
    let mut adam = Adam::new(scene.len(), &cfg.lr, |g| cfg.group_enabled(g), cfg.beta1, cfg.beta2);
    let use_adv = cfg.lambda_adv != 0.0;

    let mut rng_views = rng::stream(cfg.seed, "protect-views", 0);
    let mut rng_prompt = rng::stream(cfg.seed, "protect-prompt", 0);
    let mut rng_t = rng::stream(cfg.seed, "protect-t", 0);
    let mut rng_eps = rng::stream(cfg.seed, "protect-eps", 0);

    let mut report = ProtectReport::default();
    let latent_h = views[0].height / 8;
    let latent_w = views[0].width / 8;

    for _epoch in 0..cfg.epochs {
        let order = rng::shuffled_indices(&mut rng_views, views.len());
        for batch in order.chunks(cfg.views_per_iter) {
            // per-iteration draws happen in both modes to keep seeds aligned
            let prompt_idx = rng_prompt.gen_range(0..prompt_embeddings.len());
            let t = cfg.t_min + rng_t.gen_range(0..=(cfg.t_max - cfg.t_min));
            let mut eps = Tensor::zeros(editor::LATENT_CHANNELS, latent_h, latent_w);
            for v in eps.data.iter_mut() {
                *v = rng::normal(&mut rng_eps);
            }

            let batch_views: Vec<CameraView> = batch.iter().map(|&i| views[i].clone()).collect();
            let batch_refs: Vec<Image> =
                batch.iter().map(|&i| reference_renders[i].clone()).collect();

            let (wm, wm_bundle, msg_part, quality_part) =
                wm_loss(&work, &batch_views, &batch_refs, key, message, editor, cfg)?;

            let (adv, final_bundle, comps) = if use_adv {
                let (adv, adv_bundle, comps) = adv_loss(
                    &work,
                    &batch_views,
                    &batch_refs,
                    editor,
                    &prompt_embeddings[prompt_idx],
                    t,
                    &eps,
                    cfg,
                )?;
                let combined = modulate(&adv_bundle, mask, &cfg.rho, cfg.lambda_adv, &wm_bundle)?;
                (adv, combined, comps)
            } else {
                (0.0, wm_bundle, AdvComponents::default())
            };

            let total = wm + cfg.lambda_adv * adv;
            if !total.is_finite() || !final_bundle.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss at iteration {} (wm {wm}, adv {adv})",
                    report.iterations
                )));
            }

            adam.step(&mut params, &final_bundle);
            renormalize_quaternions(&mut params);
            apply_params(&mut work, &params);

            report.wm_trace.push(wm);
            report.msg_trace.push(msg_part);
            report.quality_trace.push(quality_part);
            report.adv_trace.push(adv);
            report.adv_render_trace.push(comps.render);
            report.lat_trace.push(comps.lat);
            report.traj_trace.push(comps.traj);
            report.xattn_trace.push(comps.xattn);
            report.iterations += 1;
        }
    }

    work.scene_id = format!("{}+protected", scene.scene_id);
    work.validate()?;

    let eval_views: &[CameraView] = if heldout_views.is_empty() { views } else { heldout_views };
    let mut acc = 0.0;
    let mut snr = 0.0;
    for view in eval_views {
        let img = renderer::render(&work, view, None)?.image;
        acc += watermark::bit_accuracy(&watermark::decode_bits(&img, key)?, message)?;
        let ref_img = renderer::render(&reference, view, None)?.image;
        snr += metrics::psnr(&img, &ref_img)?;
    }
    report.final_bit_accuracy = acc / eval_views.len() as f64;
    report.final_psnr = snr / eval_views.len() as f64;
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok((work, report))
}
