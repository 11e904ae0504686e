//! Differentiable forward splatting and its vector-Jacobian product.
//!
//! Forward, per pixel p (Gaussians in global mean-depth order):
//!   g_i(p) = exp(-1/2 d^T C_i^{-1} d),   d = p - mean2d_i,  g clipped at 1
//!   u_i(p) = g_i(p) * alpha_i
//!   w_i(p) = u_i(p) * T_i(p),            T_{i+1} = T_i * (1 - u_i)
//!   out(p) = sum_i w_i(p) * c_i(view)  + T_final * background
//! with T_0 = 1 and the scan stopping once T < 1e-4. The per-pixel
//! contribution a_{i,v}(p) is the compositing weight w_i(p); mask-weighted
//! and plain sums of it are accumulated for the selection stage.
//!
//! The 2D covariance is the EWA projection C = J W Sigma W^T J^T + 0.3 I,
//! where Sigma = R diag(exp(ls))^2 R^T from the (normalized) quaternion and
//! log-scales, J is the perspective Jacobian at the mean, and the 0.3 px^2
//! dilation is the usual low-pass guard.
//!
//! The VJP replays the forward scan per pixel (same ordering, same skip and
//! termination decisions) and runs the compositing recurrence backwards, then
//! chains through sigmoid color/opacity, the quadratic form, the covariance
//! projection, and the quaternion normalization. Position gradients are
//! identically zero by contract. Pixels are processed in fixed row chunks and
//! partial sums merged in chunk order, so results are bit-identical for any
//! worker count.

use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::image::{Gray, Image};
use crate::parallel;
use crate::scene::{GaussianScene, ParamGroup};

/// First-order SH basis scale (the constant in front of the linear terms).
pub const SH_C1: f64 = 0.4886025119029199;

/// Transmittance threshold that ends the per-pixel scan.
pub const TERMINATION_T: f64 = 1e-4;

/// Near plane: splats at depth <= this are invisible.
pub const NEAR_PLANE: f64 = 0.01;

// Mahalanobis cutoff: exp(-30) ~ 9e-14 is below the gradient-check floor,
// so skipping these pairs is invisible to both the forward pass and finite
// differences while saving the exp() for almost every distant pixel.
const CUTOFF_Q: f64 = 60.0;

const SINGULAR_DET: f64 = 1e-12;

/// Rows per parallel chunk; fixed so reductions are worker-count independent.
const CHUNK_ROWS: usize = 8;

/// Flat per-Gaussian gradient storage, 23 lanes per Gaussian in scene-file
/// order: position(3), log_scale(3), rotation(4), opacity(1), color_dc(3),
/// color_rest(9). The position lanes stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub n: usize,
    pub data: Vec<f64>,
}

pub const LANES: usize = 23;

/// Lane range of a parameter group within one Gaussian's 23-lane record.
pub fn lane_range(group: ParamGroup) -> std::ops::Range<usize> {
    match group {
        ParamGroup::Position => 0..3,
        ParamGroup::Scale => 3..6,
        ParamGroup::Rotation => 6..10,
        ParamGroup::Opacity => 10..11,
        ParamGroup::ColorDC => 11..14,
        ParamGroup::ColorRest => 14..23,
    }
}

/// Group owning a lane index in 0..23.
pub fn lane_group(lane: usize) -> ParamGroup {
    match lane {
        0..=2 => ParamGroup::Position,
        3..=5 => ParamGroup::Scale,
        6..=9 => ParamGroup::Rotation,
        10 => ParamGroup::Opacity,
        11..=13 => ParamGroup::ColorDC,
        _ => ParamGroup::ColorRest,
    }
}

impl GradientBundle {
    pub fn zeros(n: usize) -> Self {
        GradientBundle { n, data: vec![0.0; n * LANES] }
    }

    #[inline]
    pub fn lane(&self, gaussian: usize, lane: usize) -> f64 {
        self.data[gaussian * LANES + lane]
    }

    #[inline]
    pub fn lane_mut(&mut self, gaussian: usize, lane: usize) -> &mut f64 {
        &mut self.data[gaussian * LANES + lane]
    }

    pub fn add_scaled(&mut self, other: &GradientBundle, factor: f64) {
        assert_eq!(self.n, other.n);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for a in self.data.iter_mut() {
            *a *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// L2 norm over all parameter lanes of one Gaussian.
    pub fn gaussian_norm(&self, gaussian: usize) -> f64 {
        self.data[gaussian * LANES..(gaussian + 1) * LANES]
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Projection of one Gaussian into a view.
#[derive(Debug, Clone)]
pub struct Splat {
    pub mean2d: [f64; 2],
    /// Symmetric 2x2 covariance (row major).
    pub cov2d: [[f64; 2]; 2],
    pub depth: f64,
    pub visible: bool,
}

/// Rendered image plus the per-Gaussian contribution accumulators needed by
/// the mask-scoring stage.
#[derive(Debug, Clone)]
pub struct RenderResult {
    pub image: Image,
    /// sum_p w_i(p) * mask(p); zero-filled when no mask was supplied.
    pub contrib_mask_num: Vec<f64>,
    /// sum_p w_i(p).
    pub contrib_den: Vec<f64>,
    /// Scene indices in compositing (front-to-back) order.
    pub depth_order: Vec<usize>,
    /// Gaussians dropped for a near-singular 2D covariance.
    pub skipped_singular: usize,
}

fn quat_normalize(q: [f64; 4]) -> ([f64; 4], f64) {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    ([q[0] / n, q[1] / n, q[2] / n, q[3] / n], n)
}

fn quat_to_rot(q: [f64; 4]) -> [[f64; 3]; 3] {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Project one Gaussian: splat mean, EWA covariance with the 0.3 px^2
/// dilation, mean depth, and the near-plane visibility flag.
pub fn project(g: &crate::scene::Gaussian, cam: &CameraView) -> Splat {
    let p = cam.to_camera(g.position);
    let (xc, yc, z) = (p[0], p[1], p[2]);
    if z <= NEAR_PLANE {
        return Splat {
            mean2d: [0.0, 0.0],
            cov2d: [[1.0, 0.0], [0.0, 1.0]],
            depth: z,
            visible: false,
        };
    }
    let mean2d = [cam.fx * xc / z + cam.cx, cam.fy * yc / z + cam.cy];

    let (qhat, _) = quat_normalize(g.rotation);
    let rot = quat_to_rot(qhat);
    let s2 = [
        (2.0 * g.log_scale[0]).exp(),
        (2.0 * g.log_scale[1]).exp(),
        (2.0 * g.log_scale[2]).exp(),
    ];
    // Sigma = R diag(s^2) R^T
    let mut sigma = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            sigma[i][j] = (0..3).map(|k| rot[i][k] * s2[k] * rot[j][k]).sum();
        }
    }
    // B = J W, with J the perspective Jacobian at the camera-space mean
    let j = [
        [cam.fx / z, 0.0, -cam.fx * xc / (z * z)],
        [0.0, cam.fy / z, -cam.fy * yc / (z * z)],
    ];
    let w = &cam.rotation;
    let mut b = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            b[r][c] = (0..3).map(|k| j[r][k] * w[k][c]).sum();
        }
    }
    // cov2d = B Sigma B^T + 0.3 I
    let mut cov = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            let mut acc = 0.0;
            for k in 0..3 {
                let mut t = 0.0;
                for l in 0..3 {
                    t += sigma[k][l] * b[c][l];
                }
                acc += b[r][k] * t;
            }
            cov[r][c] = acc;
        }
    }
    cov[0][0] += 0.3;
    cov[1][1] += 0.3;

    Splat { mean2d, cov2d: cov, depth: z, visible: true }
}

// Hot per-splat data for the pixel scan.
struct Prepared {
    idx: usize,
    depth: f64,
    mean: [f64; 2],
    // inverse covariance [[a,b],[b,c]]
    inv: [f64; 3],
    alpha: f64,
    color: [f64; 3],
}

// Cold per-splat data used only by the VJP chain.
struct Chain {
    b: [[f64; 3]; 2],
    rot: [[f64; 3]; 3],
    s2: [f64; 3],
    qhat: [f64; 4],
    qnorm: f64,
    dir: [f64; 3],
}

fn prepare(scene: &GaussianScene, cam: &CameraView) -> (Vec<Prepared>, Vec<Chain>, usize) {
    let cam_pos = cam.position();
    let mut prepared = Vec::with_capacity(scene.len());
    let mut chains = Vec::with_capacity(scene.len());
    let mut skipped = 0usize;
    for (idx, g) in scene.gaussians.iter().enumerate() {
        let splat = project(g, cam);
        if !splat.visible {
            continue;
        }
        let det = splat.cov2d[0][0] * splat.cov2d[1][1] - splat.cov2d[0][1] * splat.cov2d[1][0];
        if det < SINGULAR_DET {
            skipped += 1;
            continue;
        }
        let inv = [splat.cov2d[1][1] / det, -splat.cov2d[0][1] / det, splat.cov2d[0][0] / det];

        let dv = [
            g.position[0] - cam_pos[0],
            g.position[1] - cam_pos[1],
            g.position[2] - cam_pos[2],
        ];
        let dn = (dv[0] * dv[0] + dv[1] * dv[1] + dv[2] * dv[2]).sqrt().max(1e-12);
        let dir = [dv[0] / dn, dv[1] / dn, dv[2] / dn];
        let color = std::array::from_fn(|ch| {
            let raw = g.color_dc[ch]
                + SH_C1
                    * (-dir[1] * g.color_rest[ch]
                        + dir[2] * g.color_rest[3 + ch]
                        - dir[0] * g.color_rest[6 + ch]);
            sigmoid(raw)
        });

        let (qhat, qnorm) = quat_normalize(g.rotation);
        let rot = quat_to_rot(qhat);
        let s2 = [
            (2.0 * g.log_scale[0]).exp(),
            (2.0 * g.log_scale[1]).exp(),
            (2.0 * g.log_scale[2]).exp(),
        ];
        let p_cam = cam.to_camera(g.position);
        let (xc, yc, z) = (p_cam[0], p_cam[1], p_cam[2]);
        let j = [
            [cam.fx / z, 0.0, -cam.fx * xc / (z * z)],
            [0.0, cam.fy / z, -cam.fy * yc / (z * z)],
        ];
        let w = &cam.rotation;
        let mut b = [[0.0; 3]; 2];
        for r in 0..2 {
            for c in 0..3 {
                b[r][c] = (0..3).map(|k| j[r][k] * w[k][c]).sum();
            }
        }

        prepared.push(Prepared {
            idx,
            depth: splat.depth,
            mean: splat.mean2d,
            inv,
            alpha: sigmoid(g.opacity_logit),
            color,
        });
        chains.push(Chain { b, rot, s2, qhat, qnorm, dir });
    }
    // global mean-depth order; index tie-break keeps the sort total
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    order.sort_by(|&a, &b| {
        prepared[a]
            .depth
            .partial_cmp(&prepared[b].depth)
            .unwrap()
            .then(prepared[a].idx.cmp(&prepared[b].idx))
    });
    let prepared: Vec<Prepared> = {
        let mut by_order: Vec<Option<Prepared>> = prepared.into_iter().map(Some).collect();
        order.iter().map(|&i| by_order[i].take().unwrap()).collect()
    };
    let chains: Vec<Chain> = {
        let mut by_order: Vec<Option<Chain>> = chains.into_iter().map(Some).collect();
        order.iter().map(|&i| by_order[i].take().unwrap()).collect()
    };
    (prepared, chains, skipped)
}

/// Front-to-back scan of one pixel. The visitor sees each contributing splat
/// as (slot, g, u, t_before, v) with v = C^{-1} d; returns final T.
#[inline]
fn scan_pixel<F: FnMut(usize, f64, f64, f64, [f64; 2])>(
    prepared: &[Prepared],
    px: f64,
    py: f64,
    mut visit: F,
) -> f64 {
    let mut t = 1.0f64;
    for (slot, p) in prepared.iter().enumerate() {
        let dx = px - p.mean[0];
        let dy = py - p.mean[1];
        let vx = p.inv[0] * dx + p.inv[1] * dy;
        let vy = p.inv[1] * dx + p.inv[2] * dy;
        let q = dx * vx + dy * vy;
        if q > CUTOFF_Q {
            continue;
        }
        let g = (-0.5 * q).exp().min(1.0);
        let u = g * p.alpha;
        visit(slot, g, u, t, [vx, vy]);
        t *= 1.0 - u;
        if t < TERMINATION_T {
            break;
        }
    }
    t
}

/// Render a view. When `mask` is given it must match the camera image size;
/// mask-weighted contribution sums are then filled per Gaussian.
pub fn render(scene: &GaussianScene, cam: &CameraView, mask: Option<&Gray>) -> Result<RenderResult> {
    scene.validate()?;
    cam.validate()?;
    if let Some(m) = mask {
        if m.width != cam.width || m.height != cam.height {
            return Err(Error::SizeMismatch(format!(
                "mask {}x{} vs image {}x{}",
                m.width, m.height, cam.width, cam.height
            )));
        }
        if m.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParam("mask values must lie in [0,1]".into()));
        }
    }
    let (prepared, _chains, skipped) = prepare(scene, cam);
    let (w, h) = (cam.width, cam.height);
    let bg = scene.background;

    let n_chunks = h.div_ceil(CHUNK_ROWS);
    struct ChunkOut {
        pixels: Vec<f64>,
        num: Vec<f64>,
        den: Vec<f64>,
    }
    let chunks: Vec<ChunkOut> = parallel::map_chunks(n_chunks, |ci| {
        let y0 = ci * CHUNK_ROWS;
        let y1 = ((ci + 1) * CHUNK_ROWS).min(h);
        let mut pixels = vec![0.0f64; (y1 - y0) * w * 3];
        let mut num = vec![0.0f64; prepared.len()];
        let mut den = vec![0.0f64; prepared.len()];
        for y in y0..y1 {
            for x in 0..w {
                let mv = mask.map_or(0.0, |m| m.get(x, y));
                let mut rgb = [0.0f64; 3];
                let t_final = scan_pixel(
                    &prepared,
                    x as f64 + 0.5,
                    y as f64 + 0.5,
                    |slot, _g, u, t, _v| {
                        let wgt = u * t;
                        let c = &prepared[slot].color;
                        rgb[0] += wgt * c[0];
                        rgb[1] += wgt * c[1];
                        rgb[2] += wgt * c[2];
                        den[slot] += wgt;
                        num[slot] += wgt * mv;
                    },
                );
                let o = ((y - y0) * w + x) * 3;
                pixels[o] = (rgb[0] + t_final * bg[0]).clamp(0.0, 1.0);
                pixels[o + 1] = (rgb[1] + t_final * bg[1]).clamp(0.0, 1.0);
                pixels[o + 2] = (rgb[2] + t_final * bg[2]).clamp(0.0, 1.0);
            }
        }
        ChunkOut { pixels, num, den }
    });

    let mut image = Image::zeros(w, h);
    let mut num_slot = vec![0.0f64; prepared.len()];
    let mut den_slot = vec![0.0f64; prepared.len()];
    for (ci, chunk) in chunks.into_iter().enumerate() {
        let y0 = ci * CHUNK_ROWS;
        let base = y0 * w * 3;
        image.data[base..base + chunk.pixels.len()].copy_from_slice(&chunk.pixels);
        for (a, b) in num_slot.iter_mut().zip(&chunk.num) {
            *a += b;
        }
        for (a, b) in den_slot.iter_mut().zip(&chunk.den) {
            *a += b;
        }
    }

    let mut contrib_mask_num = vec![0.0f64; scene.len()];
    let mut contrib_den = vec![0.0f64; scene.len()];
    for (slot, p) in prepared.iter().enumerate() {
        contrib_mask_num[p.idx] = num_slot[slot];
        contrib_den[p.idx] = den_slot[slot];
    }
    Ok(RenderResult {
        image,
        contrib_mask_num,
        contrib_den,
        depth_order: prepared.iter().map(|p| p.idx).collect(),
        skipped_singular: skipped,
    })
}

// Mid-level per-splat accumulators gathered over pixels before the cold
// per-Gaussian parameter chain: color cotangent, alpha cotangent, and the
// symmetric 2x2 covariance cotangent (a, b, c).
#[derive(Clone, Copy)]
struct SplatAccum {
    d_color: [f64; 3],
    d_alpha: f64,
    cov_bar: [f64; 3],
}

impl SplatAccum {
    fn zero() -> Self {
        SplatAccum { d_color: [0.0; 3], d_alpha: 0.0, cov_bar: [0.0; 3] }
    }
}

/// Gradient of <cotangent, render(scene, cam).image> with respect to every
/// non-position parameter group. The forward scan (depth order, cutoffs,
/// early termination) is replayed exactly, so the derivative is of the same
/// function the forward pass computes.
///
/// Note the forward's final [0,1] pixel clamp is treated as inactive: the
/// cotangent is propagated through unconditionally. Losses are evaluated on
/// in-gamut renders where the clamp never binds.
pub fn render_vjp(scene: &GaussianScene, cam: &CameraView, cotangent: &Image) -> Result<GradientBundle> {
    scene.validate()?;
    cam.validate()?;
    if cotangent.width != cam.width || cotangent.height != cam.height {
        return Err(Error::SizeMismatch(format!(
            "cotangent {}x{} vs image {}x{}",
            cotangent.width, cotangent.height, cam.width, cam.height
        )));
    }
    if !cotangent.is_finite() {
        return Err(Error::NonFinite("cotangent".into()));
    }
    let (prepared, chains, _skipped) = prepare(scene, cam);
    let (w, h) = (cam.width, cam.height);
    let bg = scene.background;

    let n_chunks = h.div_ceil(CHUNK_ROWS);
    let chunk_accums: Vec<Vec<SplatAccum>> = parallel::map_chunks(n_chunks, |ci| {
        let y0 = ci * CHUNK_ROWS;
        let y1 = ((ci + 1) * CHUNK_ROWS).min(h);
        let mut acc = vec![SplatAccum::zero(); prepared.len()];
        // per-pixel scratch: (slot, g, u, t_before, v)
        let mut trail: Vec<(usize, f64, f64, f64, [f64; 2])> = Vec::with_capacity(64);
        for y in y0..y1 {
            for x in 0..w {
                let o = (y * w + x) * 3;
                let cot = [cotangent.data[o], cotangent.data[o + 1], cotangent.data[o + 2]];
                if cot == [0.0, 0.0, 0.0] {
                    continue;
                }
                trail.clear();
                scan_pixel(&prepared, x as f64 + 0.5, y as f64 + 0.5, |slot, g, u, t, v| {
                    trail.push((slot, g, u, t, v));
                });
                // reverse compositing scan; background seeds the
                // transmittance cotangent
                let mut g_t_next = cot[0] * bg[0] + cot[1] * bg[1] + cot[2] * bg[2];
                for &(slot, g, u, t, v) in trail.iter().rev() {
                    let p = &prepared[slot];
                    let wgt = u * t;
                    let cot_dot_c =
                        cot[0] * p.color[0] + cot[1] * p.color[1] + cot[2] * p.color[2];
                    let a = &mut acc[slot];
                    a.d_color[0] += wgt * cot[0];
                    a.d_color[1] += wgt * cot[1];
                    a.d_color[2] += wgt * cot[2];
                    let d_u = t * cot_dot_c - t * g_t_next;
                    a.d_alpha += d_u * g;
                    if g < 1.0 {
                        // dq = -1/2 g * (alpha * d_u); cov_bar += dq * (-v v^T)
                        let dq = -0.5 * g * (p.alpha * d_u);
                        a.cov_bar[0] -= dq * v[0] * v[0];
                        a.cov_bar[1] -= dq * v[0] * v[1];
                        a.cov_bar[2] -= dq * v[1] * v[1];
                    }
                    g_t_next = u * cot_dot_c + g_t_next * (1.0 - u);
                }
            }
        }
        acc
    });

    let mut accum = vec![SplatAccum::zero(); prepared.len()];
    for chunk in chunk_accums {
        for (a, b) in accum.iter_mut().zip(&chunk) {
            a.d_color[0] += b.d_color[0];
            a.d_color[1] += b.d_color[1];
            a.d_color[2] += b.d_color[2];
            a.d_alpha += b.d_alpha;
            a.cov_bar[0] += b.cov_bar[0];
            a.cov_bar[1] += b.cov_bar[1];
            a.cov_bar[2] += b.cov_bar[2];
        }
    }

    let mut bundle = GradientBundle::zeros(scene.len());
    for (slot, p) in prepared.iter().enumerate() {
        let chain = &chains[slot];
        let acc = &accum[slot];
        let g = &scene.gaussians[p.idx];
        let base = p.idx * LANES;

        // opacity: alpha = sigmoid(logit)
        bundle.data[base + 10] = acc.d_alpha * p.alpha * (1.0 - p.alpha);

        // color: c = sigmoid(dc + SH_C1 * basis . rest)
        let basis = [-chain.dir[1], chain.dir[2], -chain.dir[0]];
        for ch in 0..3 {
            let d_raw = acc.d_color[ch] * p.color[ch] * (1.0 - p.color[ch]);
            bundle.data[base + 11 + ch] = d_raw;
            for (bi, bv) in basis.iter().enumerate() {
                bundle.data[base + 14 + bi * 3 + ch] = d_raw * SH_C1 * bv;
            }
        }

        // covariance chain: Sigma_bar = B^T cov_bar B (cov_bar symmetric)
        let cb = [[acc.cov_bar[0], acc.cov_bar[1]], [acc.cov_bar[1], acc.cov_bar[2]]];
        let b = &chain.b;
        let mut sigma_bar = [[0.0f64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for r in 0..2 {
                    for c in 0..2 {
                        s += b[r][i] * cb[r][c] * b[c][j];
                    }
                }
                sigma_bar[i][j] = s;
            }
        }
        // Sigma = R diag(s2) R^T:
        //   s2_bar_j = (R^T Sigma_bar R)_jj, log_scale_bar = 2 s2 * s2_bar
        //   R_bar    = 2 Sigma_bar R diag(s2)
        let rot = &chain.rot;
        for jax in 0..3 {
            let mut s2b = 0.0;
            for i in 0..3 {
                for k in 0..3 {
                    s2b += rot[i][jax] * sigma_bar[i][k] * rot[k][jax];
                }
            }
            bundle.data[base + 3 + jax] = 2.0 * chain.s2[jax] * s2b;
        }
        let mut rot_bar = [[0.0f64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += sigma_bar[i][k] * rot[k][j];
                }
                rot_bar[i][j] = 2.0 * s * chain.s2[j];
            }
        }
        // rotation matrix -> unit quaternion partials
        let (qw, qx, qy, qz) = (chain.qhat[0], chain.qhat[1], chain.qhat[2], chain.qhat[3]);
        let dr = [
            // dR/dw
            [[0.0, -qz, qy], [qz, 0.0, -qx], [-qy, qx, 0.0]],
            // dR/dx
            [[0.0, qy, qz], [qy, -2.0 * qx, -qw], [qz, qw, -2.0 * qx]],
            // dR/dy
            [[-2.0 * qy, qx, qw], [qx, 0.0, qz], [-qw, qz, -2.0 * qy]],
            // dR/dz
            [[-2.0 * qz, -qw, qx], [qw, -2.0 * qz, qy], [qx, qy, 0.0]],
        ];
        let mut qhat_bar = [0.0f64; 4];
        for (k, d) in dr.iter().enumerate() {
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    s += rot_bar[i][j] * 2.0 * d[i][j];
                }
            }
            qhat_bar[k] = s;
        }
        // through normalization: r_bar = (qhat_bar - (qhat . qhat_bar) qhat) / |r|
        let dotp = (0..4).map(|k| chain.qhat[k] * qhat_bar[k]).sum::<f64>();
        for k in 0..4 {
            bundle.data[base + 6 + k] = (qhat_bar[k] - dotp * chain.qhat[k]) / chain.qnorm;
        }
        let _ = g;
    }
    Ok(bundle)
}

/// Diagnostic render that also stores every per-pixel compositing weight
/// w_i(p), indexed [gaussian][pixel]. Memory is O(N * H * W); intended for
/// small test scenes only.
pub fn render_dense_weights(
    scene: &GaussianScene,
    cam: &CameraView,
) -> Result<(RenderResult, Vec<Vec<f64>>)> {
    let result = render(scene, cam, None)?;
    let (prepared, _chains, _) = prepare(scene, cam);
    let (w, h) = (cam.width, cam.height);
    let mut weights = vec![vec![0.0f64; w * h]; scene.len()];
    for y in 0..h {
        for x in 0..w {
            scan_pixel(&prepared, x as f64 + 0.5, y as f64 + 0.5, |slot, _g, u, t, _v| {
                weights[prepared[slot].idx][y * w + x] = u * t;
            });
        }
    }
    Ok((result, weights))
}
