//! Adam over the flattened per-Gaussian parameter vector.
//!
//! Parameters use the same 23-lane layout as `GradientBundle`. Each lane
//! carries its group's learning rate; disabled groups (and always the
//! position lanes) are skipped entirely, so their parameters and moments
//! stay bit-identical across the run.

use crate::renderer::{lane_group, GradientBundle, LANES};
use crate::scene::{normalize_quat, GaussianScene, GroupValues, ParamGroup};

pub const ADAM_EPS: f64 = 1e-8;

/// Flatten scene parameters into the 23-lane layout.
pub fn scene_params(scene: &GaussianScene) -> Vec<f64> {
    let mut out = Vec::with_capacity(scene.len() * LANES);
    for g in &scene.gaussians {
        out.extend_from_slice(&g.position);
        out.extend_from_slice(&g.log_scale);
        out.extend_from_slice(&g.rotation);
        out.push(g.opacity_logit);
        out.extend_from_slice(&g.color_dc);
        out.extend_from_slice(&g.color_rest);
    }
    out
}

/// Write flattened parameters back into the scene.
pub fn apply_params(scene: &mut GaussianScene, params: &[f64]) {
    assert_eq!(params.len(), scene.len() * LANES);
    for (i, g) in scene.gaussians.iter_mut().enumerate() {
        let rec = &params[i * LANES..(i + 1) * LANES];
        g.position.copy_from_slice(&rec[0..3]);
        g.log_scale.copy_from_slice(&rec[3..6]);
        g.rotation.copy_from_slice(&rec[6..10]);
        g.opacity_logit = rec[10];
        g.color_dc.copy_from_slice(&rec[11..14]);
        g.color_rest.copy_from_slice(&rec[14..23]);
    }
}

/// Renormalize every quaternion slot of a flattened parameter vector.
pub fn renormalize_quaternions(params: &mut [f64]) {
    for chunk in params.chunks_exact_mut(LANES) {
        let mut q = [chunk[6], chunk[7], chunk[8], chunk[9]];
        normalize_quat(&mut q);
        chunk[6..10].copy_from_slice(&q);
    }
}

pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
    /// Per-lane learning rate (group lr broadcast over lanes).
    lane_lr: [f64; LANES],
    /// Per-lane enable flag; position lanes are always off.
    lane_on: [bool; LANES],
}

impl Adam {
    pub fn new(n: usize, lr: &GroupValues, enabled: impl Fn(ParamGroup) -> bool, beta1: f64, beta2: f64) -> Adam {
        let mut lane_lr = [0.0; LANES];
        let mut lane_on = [false; LANES];
        for lane in 0..LANES {
            let group = lane_group(lane);
            lane_lr[lane] = lr.get(group);
            lane_on[lane] = group != ParamGroup::Position && enabled(group);
        }
        Adam { beta1, beta2, step: 0, m: vec![0.0; n * LANES], v: vec![0.0; n * LANES], lane_lr, lane_on }
    }

    /// One update from a (modulated) gradient bundle.
    pub fn step(&mut self, params: &mut [f64], grads: &GradientBundle) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.data.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let lane = i % LANES;
            if !self.lane_on[lane] {
                continue;
            }
            let g = grads.data[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            *p -= self.lane_lr[lane] * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}
