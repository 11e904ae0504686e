//! Pinhole cameras and the orbit rig used for all evaluations.

use crate::error::{Error, Result};

/// Pinhole camera with world-to-camera extrinsics.
#[derive(Debug, Clone)]
pub struct CameraView {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation, orthonormal within 1e-9.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub width: usize,
    pub height: usize,
    pub view_id: String,
}

impl CameraView {
    pub fn validate(&self) -> Result<()> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidParam("camera focal length must be positive".into()));
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-9 {
                    return Err(Error::InvalidParam(format!(
                        "camera rotation not orthonormal (row {i}.row {j} = {dot})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// World point -> camera frame.
    #[inline]
    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2],
        ]
    }

    /// Camera center in world coordinates (-R^T t).
    pub fn position(&self) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            -(r[0][0] * t[0] + r[1][0] * t[1] + r[2][0] * t[2]),
            -(r[0][1] * t[0] + r[1][1] * t[1] + r[2][1] * t[2]),
            -(r[0][2] * t[0] + r[1][2] * t[1] + r[2][2] * t[2]),
        ]
    }

    /// Camera placed at `eye` looking at `target`, +y-ish up, z forward.
    pub fn look_at(
        eye: [f64; 3],
        target: [f64; 3],
        width: usize,
        height: usize,
        focal: f64,
        view_id: &str,
    ) -> CameraView {
        let fwd = normalize(sub(target, eye));
        let world_up = [0.0, 1.0, 0.0];
        let mut right = cross(fwd, world_up);
        let rl = len(right);
        if rl < 1e-9 {
            right = [1.0, 0.0, 0.0];
        } else {
            right = scale(right, 1.0 / rl);
        }
        let up = cross(right, fwd);
        // rows: camera x = right, y = -up (image y grows downward), z = fwd
        let rotation = [right, [-up[0], -up[1], -up[2]], fwd];
        let translation = [
            -dot(rotation[0], eye),
            -dot(rotation[1], eye),
            -dot(rotation[2], eye),
        ];
        CameraView {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            rotation,
            translation,
            width,
            height,
            view_id: view_id.to_string(),
        }
    }
}

/// Evenly spaced orbit around the origin at the given radius and height.
/// `phase` in [0,1) rotates the whole ring; use a nonzero phase for held-out
/// views that interleave with a training ring.
pub fn orbit_rig(
    count: usize,
    radius: f64,
    height: f64,
    size: usize,
    focal: f64,
    phase: f64,
    id_prefix: &str,
) -> Vec<CameraView> {
    (0..count)
        .map(|i| {
            let angle = std::f64::consts::TAU * (i as f64 + phase) / count as f64;
            let eye = [radius * angle.cos(), height, radius * angle.sin()];
            CameraView::look_at(eye, [0.0, 0.0, 0.0], size, size, focal, &format!("{id_prefix}{i:03}"))
        })
        .collect()
}

/// Default focal for a square image: ~50 degree horizontal field of view.
pub fn default_focal(size: usize) -> f64 {
    size as f64 * 1.1
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
fn len(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}
fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}
fn normalize(a: [f64; 3]) -> [f64; 3] {
    scale(a, 1.0 / len(a))
}
