//! Run configuration: one structured text file is the single source of
//! truth for every tunable. Unknown keys are hard errors, so configs cannot
//! silently drift as options change.

use crate::editloop::{EditConfig, EditVariant};
use crate::error::{Error, Result};
use crate::protect::ProtectConfig;
use crate::robustness::ModelDistortions;
use crate::scene::{GroupValues, ToyKind};
use serde::{Deserialize, Serialize};
use std::path::Path;

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub image_size: usize,
    pub workers: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { seed: 7, image_size: 64, workers: 1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSection {
    pub kind: String,
    pub count: usize,
    pub seed: u64,
}

impl Default for SceneSection {
    fn default() -> Self {
        SceneSection { kind: "object_on_plane".into(), count: 2000, seed: 1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ViewsSection {
    pub train: usize,
    pub heldout: usize,
    pub mask: usize,
    pub radius: f64,
    pub height: f64,
}

impl Default for ViewsSection {
    fn default() -> Self {
        ViewsSection { train: 24, heldout: 8, mask: 24, radius: 3.6, height: 1.3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WatermarkSection {
    pub seed: u64,
    pub bits: usize,
    pub message_seed: u64,
    /// Explicit message as a "0101..." string; overrides message_seed.
    pub message: Option<String>,
}

impl Default for WatermarkSection {
    fn default() -> Self {
        WatermarkSection { seed: 42, bits: 32, message_seed: 9, message: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskSection {
    pub label: String,
    pub tau: f64,
    pub gamma: f64,
    pub mode: String,
    /// Threshold for "hard" mode.
    pub threshold: f64,
}

impl Default for MaskSection {
    fn default() -> Self {
        MaskSection { label: "object".into(), tau: 0.6, gamma: 2.0, mode: "soft".into(), threshold: 0.5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtectSection {
    pub lambda_adv: f64,
    pub lambda_msg: f64,
    pub lambda_quality: f64,
    pub lambda_feat: f64,
    pub lambda_lat: f64,
    pub lambda_traj: f64,
    pub lambda_xattn: f64,
    pub rho_scale: f64,
    pub rho_rotation: f64,
    pub rho_opacity: f64,
    pub rho_color_dc: f64,
    pub rho_color_rest: f64,
    pub epochs: usize,
    pub views_per_iter: usize,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub lr_opacity: f64,
    pub lr_color_dc: f64,
    pub lr_color_rest: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub t_min: usize,
    pub t_max: usize,
    #[serde(default = "default_true")]
    pub enable_scale: bool,
    #[serde(default = "default_true")]
    pub enable_rotation: bool,
    #[serde(default = "default_true")]
    pub enable_opacity: bool,
    #[serde(default = "default_true")]
    pub enable_color_dc: bool,
    #[serde(default = "default_true")]
    pub enable_color_rest: bool,
}

impl Default for ProtectSection {
    fn default() -> Self {
        let p = ProtectConfig::default();
        ProtectSection {
            lambda_adv: p.lambda_adv,
            lambda_msg: p.lambda_msg,
            lambda_quality: p.lambda_quality,
            lambda_feat: p.lambda_feat,
            lambda_lat: p.lambda_lat,
            lambda_traj: p.lambda_traj,
            lambda_xattn: p.lambda_xattn,
            rho_scale: p.rho.scale,
            rho_rotation: p.rho.rotation,
            rho_opacity: p.rho.opacity,
            rho_color_dc: p.rho.color_dc,
            rho_color_rest: p.rho.color_rest,
            epochs: p.epochs,
            views_per_iter: p.views_per_iter,
            lr_scale: p.lr.scale,
            lr_rotation: p.lr.rotation,
            lr_opacity: p.lr.opacity,
            lr_color_dc: p.lr.color_dc,
            lr_color_rest: p.lr.color_rest,
            beta1: p.beta1,
            beta2: p.beta2,
            t_min: p.t_min,
            t_max: p.t_max,
            enable_scale: true,
            enable_rotation: true,
            enable_opacity: true,
            enable_color_dc: true,
            enable_color_rest: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EditorSection {
    pub seed: u64,
}

impl Default for EditorSection {
    fn default() -> Self {
        EditorSection { seed: 100 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EditSection {
    pub rounds: usize,
    pub strength: f64,
    pub fit_steps: usize,
    pub variant: String,
    pub prompt: String,
    pub editor_seed: u64,
    pub seed: u64,
    pub t_min: usize,
    pub t_max: usize,
    pub fit_lr_scale: f64,
    pub fit_lr_rotation: f64,
    pub fit_lr_opacity: f64,
    pub fit_lr_color_dc: f64,
    pub fit_lr_color_rest: f64,
}

impl Default for EditSection {
    fn default() -> Self {
        let e = EditConfig::default();
        EditSection {
            rounds: e.rounds,
            strength: e.strength,
            fit_steps: e.fit_steps,
            variant: "dge_like".into(),
            prompt: e.prompt,
            editor_seed: e.editor_seed,
            seed: e.seed,
            t_min: e.t_min,
            t_max: e.t_max,
            fit_lr_scale: e.fit_lr.scale,
            fit_lr_rotation: e.fit_lr.rotation,
            fit_lr_opacity: e.fit_lr.opacity,
            fit_lr_color_dc: e.fit_lr.color_dc,
            fit_lr_color_rest: e.fit_lr.color_rest,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub embedder_seed: u64,
    pub prompt_src: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { embedder_seed: 7, prompt_src: "a photo of a scene".into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistortSection {
    pub model_noise_sigma: f64,
    pub model_prune_fraction: f64,
    pub model_clone_fraction: f64,
    pub seed: u64,
}

impl Default for DistortSection {
    fn default() -> Self {
        let m = ModelDistortions::default();
        DistortSection {
            model_noise_sigma: m.noise_sigma,
            model_prune_fraction: m.prune_fraction,
            model_clone_fraction: m.clone_fraction,
            seed: m.seed,
        }
    }
}

/// Full run configuration (TOML). Every section falls back to defaults;
/// unknown keys anywhere are rejected.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub scene: SceneSection,
    pub views: ViewsSection,
    pub watermark: WatermarkSection,
    pub mask: MaskSection,
    pub protect: ProtectSection,
    pub editor: EditorSection,
    pub edit: EditSection,
    pub eval: EvalSection,
    pub distort: DistortSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::parse(&text)
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn scene_kind(&self) -> Result<ToyKind> {
        self.scene.kind.parse()
    }

    pub fn protect_config(&self) -> ProtectConfig {
        let p = &self.protect;
        ProtectConfig {
            lambda_adv: p.lambda_adv,
            lambda_msg: p.lambda_msg,
            lambda_quality: p.lambda_quality,
            lambda_feat: p.lambda_feat,
            lambda_lat: p.lambda_lat,
            lambda_traj: p.lambda_traj,
            lambda_xattn: p.lambda_xattn,
            rho: GroupValues {
                scale: p.rho_scale,
                rotation: p.rho_rotation,
                opacity: p.rho_opacity,
                color_dc: p.rho_color_dc,
                color_rest: p.rho_color_rest,
            },
            epochs: p.epochs,
            views_per_iter: p.views_per_iter,
            lr: GroupValues {
                scale: p.lr_scale,
                rotation: p.lr_rotation,
                opacity: p.lr_opacity,
                color_dc: p.lr_color_dc,
                color_rest: p.lr_color_rest,
            },
            beta1: p.beta1,
            beta2: p.beta2,
            t_min: p.t_min,
            t_max: p.t_max,
            seed: self.run.seed,
            enable_scale: p.enable_scale,
            enable_rotation: p.enable_rotation,
            enable_opacity: p.enable_opacity,
            enable_color_dc: p.enable_color_dc,
            enable_color_rest: p.enable_color_rest,
        }
    }

    pub fn edit_config(&self) -> Result<EditConfig> {
        let e = &self.edit;
        Ok(EditConfig {
            rounds: e.rounds,
            strength: e.strength,
            fit_steps: e.fit_steps,
            fit_lr: GroupValues {
                scale: e.fit_lr_scale,
                rotation: e.fit_lr_rotation,
                opacity: e.fit_lr_opacity,
                color_dc: e.fit_lr_color_dc,
                color_rest: e.fit_lr_color_rest,
            },
            editor_seed: e.editor_seed,
            prompt: e.prompt.clone(),
            variant: e.variant.parse::<EditVariant>()?,
            seed: e.seed,
            t_min: e.t_min,
            t_max: e.t_max,
        })
    }

    pub fn model_distortions(&self) -> ModelDistortions {
        ModelDistortions {
            noise_sigma: self.distort.model_noise_sigma,
            prune_fraction: self.distort.model_prune_fraction,
            clone_fraction: self.distort.model_clone_fraction,
            seed: self.distort.seed,
        }
    }

    pub fn train_views(&self) -> Vec<crate::camera::CameraView> {
        let size = self.run.image_size;
        crate::camera::orbit_rig(
            self.views.train,
            self.views.radius,
            self.views.height,
            size,
            crate::camera::default_focal(size),
            0.0,
            "train",
        )
    }

    pub fn heldout_views(&self) -> Vec<crate::camera::CameraView> {
        let size = self.run.image_size;
        crate::camera::orbit_rig(
            self.views.heldout,
            self.views.radius,
            self.views.height,
            size,
            crate::camera::default_focal(size),
            0.5,
            "heldout",
        )
    }

    pub fn mask_views(&self) -> Vec<crate::camera::CameraView> {
        let size = self.run.image_size;
        crate::camera::orbit_rig(
            self.views.mask,
            self.views.radius,
            self.views.height,
            size,
            crate::camera::default_focal(size),
            0.25,
            "mask",
        )
    }

    pub fn message(&self) -> Result<crate::watermark::Message> {
        match &self.watermark.message {
            Some(bits) => crate::watermark::Message::from_bitstring(bits),
            None => Ok(crate::watermark::Message::random(
                self.watermark.bits,
                self.watermark.message_seed,
            )),
        }
    }

    pub fn watermark_key(&self) -> Result<crate::watermark::WatermarkKey> {
        crate::watermark::WatermarkKey::new(
            self.watermark.seed,
            self.watermark.bits,
            self.run.image_size,
            self.run.image_size,
        )
    }

    pub fn mask_mode(&self) -> Result<crate::selection::MaskMode> {
        match self.mask.mode.as_str() {
            "soft" => Ok(crate::selection::MaskMode::Soft),
            "hard" => Ok(crate::selection::MaskMode::Hard(self.mask.threshold)),
            other => Err(Error::Config(format!("unknown mask mode {other:?}"))),
        }
    }
}
