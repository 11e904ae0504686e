//! Acceptance suite: one test per shipping criterion, each ending with a
//! single `criterion N (...): PASS` line (run with `--nocapture` to see all
//! of them). Tolerances and thresholds are pinned in code.

use splatguard::camera::{default_focal, orbit_rig, CameraView};
use splatguard::editloop::{run_edit, EditConfig, EditVariant};
use splatguard::editor::{
    self, build_editor, embed_prompt, encode_latent, encode_latent_vjp, sample_noise,
};
use splatguard::image::{Gray, Image};
use splatguard::metrics::{
    benchmark_rows, build_embedders, clip_metrics, component_rows, normalizers_from_rows, psnr,
    sucps, sucps_with_normalizers,
};
use splatguard::protect::{modulate, protect, ProtectConfig};
use splatguard::renderer::{render, render_dense_weights, render_vjp, GradientBundle, LANES};
use splatguard::rng;
use splatguard::robustness::{
    distort_image, wm_after_edit_harness, wm_robustness_harness, DistortionKind, DistortionSpec,
    ModelDistortions,
};
use splatguard::scene::{make_toy_scene, GaussianScene, Gaussian, GroupValues, ToyKind};
use splatguard::selection::{
    build_mask, gaussian_scores, hard_coefficients, procedural_mask, soft_coefficients, MaskMode,
    SoftMask,
};
use splatguard::watermark::{
    bit_accuracy, decode_bits, msg_loss, quality_loss, Message, WatermarkKey,
};

fn rig(count: usize, size: usize, phase: f64, prefix: &str) -> Vec<CameraView> {
    orbit_rig(count, 3.6, 1.3, size, default_focal(size), phase, prefix)
}

// ---------------------------------------------------------------- criterion 1

#[test]
fn c1_unified_score_reproduction() {
    let start = std::time::Instant::now();
    let scores = sucps(&benchmark_rows()).unwrap();
    let expected = [
        ("Ours", 0.8622),
        ("3DGSW", 0.7791),
        ("GaussianMarker", 0.7516),
        ("GuardSplat", 0.7489),
        ("DEGauss", 0.6467),
        ("3DGSW+DEGauss", 0.6200),
    ];
    for (method, want) in expected {
        let got = scores.iter().find(|s| s.method == method).unwrap().sucps;
        assert!((got - want).abs() <= 0.002, "{method}: {got:.4} vs printed {want}");
    }
    let norm = normalizers_from_rows(&benchmark_rows()).unwrap();
    let ablation = sucps_with_normalizers(&component_rows(), &norm).unwrap();
    for (s, want) in ablation.iter().zip([0.6776, 0.8566, 0.6683, 0.8622]) {
        assert!((s.sucps - want).abs() <= 0.002, "{}: {:.4} vs printed {want}", s.method, s.sucps);
    }
    assert!(start.elapsed().as_secs_f64() < 1.0, "criterion 1 must run in < 1 s");
    println!("criterion 1 (unified-score reproduction): PASS");
}

// ---------------------------------------------------------------- criterion 2

fn lane_get(g: &Gaussian, lane: usize) -> f64 {
    match lane {
        0..=2 => g.position[lane],
        3..=5 => g.log_scale[lane - 3],
        6..=9 => g.rotation[lane - 6],
        10 => g.opacity_logit,
        11..=13 => g.color_dc[lane - 11],
        _ => g.color_rest[lane - 14],
    }
}

fn lane_set(g: &mut Gaussian, lane: usize, v: f64) {
    match lane {
        0..=2 => g.position[lane] = v,
        3..=5 => g.log_scale[lane - 3] = v,
        6..=9 => g.rotation[lane - 6] = v,
        10 => g.opacity_logit = v,
        11..=13 => g.color_dc[lane - 11] = v,
        _ => g.color_rest[lane - 14] = v,
    }
}

fn gradcheck_scene(seed: u64) -> f64 {
    let mut scene = make_toy_scene(ToyKind::Random, 4, seed).unwrap();
    for g in scene.gaussians.iter_mut() {
        g.opacity_logit = g.opacity_logit.clamp(-1.5, 0.5);
    }
    let cam = rig(1, 16, seed as f64 * 0.13, "g")[0].clone();
    let mut r = rng::stream(seed, "acc-c2-cot", 0);
    let mut cot = Image::zeros(16, 16);
    for v in cot.data.iter_mut() {
        *v = rng::normal(&mut r);
    }
    let bundle = render_vjp(&scene, &cam, &cot).unwrap();
    let f = |s: &GaussianScene| -> f64 {
        render(s, &cam, None)
            .unwrap()
            .image
            .data
            .iter()
            .zip(&cot.data)
            .map(|(a, b)| a * b)
            .sum()
    };
    let h = 1e-5;
    let mut worst = 0.0f64;
    for gi in 0..scene.len() {
        for lane in 3..LANES {
            let base = lane_get(&scene.gaussians[gi], lane);
            let mut plus = scene.clone();
            lane_set(&mut plus.gaussians[gi], lane, base + h);
            let mut minus = scene.clone();
            lane_set(&mut minus.gaussians[gi], lane, base - h);
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            let an = bundle.lane(gi, lane);
            let abs = (fd - an).abs();
            if abs > 1e-8 {
                worst = worst.max(abs / fd.abs().max(an.abs()).max(1e-30));
            }
        }
    }
    worst
}

fn image_fd_worst(f: &dyn Fn(&Image) -> f64, cot: &Image, at: &Image, probes: usize) -> f64 {
    let h = 1e-5;
    let step = (at.data.len() / probes).max(1);
    let mut worst = 0.0f64;
    for i in (0..at.data.len()).step_by(step) {
        let mut plus = at.clone();
        plus.data[i] += h;
        let mut minus = at.clone();
        minus.data[i] -= h;
        let fd = (f(&plus) - f(&minus)) / (2.0 * h);
        let an = cot.data[i];
        let abs = (fd - an).abs();
        if abs > 1e-8 {
            worst = worst.max(abs / fd.abs().max(an.abs()).max(1e-30));
        }
    }
    worst
}

fn random_image(size: usize, seed: u64) -> Image {
    let mut r = rng::stream(seed, "acc-c2-img", 0);
    let mut img = Image::zeros(size, size);
    for v in img.data.iter_mut() {
        *v = rng::uniform(&mut r, 0.05, 0.95);
    }
    img
}

#[test]
fn c2_gradient_integrity() {
    let start = std::time::Instant::now();
    // renderer VJP vs central differences, three random scenes
    for seed in [31, 47, 59] {
        let worst = gradcheck_scene(seed);
        assert!(worst < 1e-4, "renderer gradcheck seed {seed}: worst rel {worst}");
    }
    // watermark losses, three seeds
    for seed in [3, 5, 8] {
        let key = WatermarkKey::new(seed, 12, 16, 16).unwrap();
        let message = Message::random(12, seed);
        let img = random_image(16, seed);
        let reference = random_image(16, seed + 100);
        let ed = build_editor(seed);

        let (_, cot) = msg_loss(&img, &key, &message).unwrap();
        let worst = image_fd_worst(
            &|im| msg_loss(im, &key, &message).unwrap().0,
            &cot,
            &img,
            40,
        );
        assert!(worst < 1e-4, "msg_loss gradcheck seed {seed}: {worst}");

        let (_, cot) = quality_loss(&img, &reference, &ed, 0.1).unwrap();
        let worst = image_fd_worst(
            &|im| quality_loss(im, &reference, &ed, 0.1).unwrap().0,
            &cot,
            &img,
            40,
        );
        assert!(worst < 1e-4, "quality_loss gradcheck seed {seed}: {worst}");
    }
    // the three diversion terms, three seeds each
    for seed in [11, 13, 17] {
        let ed = build_editor(seed);
        let img = random_image(16, seed);
        let reference = random_image(16, seed + 50);
        let prompt = embed_prompt(&ed, "reshape the object");
        let eps = sample_noise(16, 16, seed, 0);
        let t = 450;

        let (_, cot) = editor::s_lat(&ed, &img, &reference).unwrap();
        let worst =
            image_fd_worst(&|im| editor::s_lat(&ed, im, &reference).unwrap().0, &cot, &img, 30);
        assert!(worst < 1e-3, "s_lat gradcheck seed {seed}: {worst}");

        let (_, cot) = editor::s_traj(&ed, &img, &reference, &prompt, t, &eps).unwrap();
        let worst = image_fd_worst(
            &|im| editor::s_traj(&ed, im, &reference, &prompt, t, &eps).unwrap().0,
            &cot,
            &img,
            30,
        );
        assert!(worst < 1e-3, "s_traj gradcheck seed {seed}: {worst}");

        let (_, cot) = editor::s_xattn(&ed, &img, &reference, &prompt, t, &eps).unwrap();
        let worst = image_fd_worst(
            &|im| editor::s_xattn(&ed, im, &reference, &prompt, t, &eps).unwrap().0,
            &cot,
            &img,
            30,
        );
        assert!(worst < 1e-3, "s_xattn gradcheck seed {seed}: {worst}");
    }
    assert!(start.elapsed().as_secs_f64() < 300.0, "criterion 2 must run in < 5 min");
    println!("criterion 2 (gradient integrity): PASS");
}

// ---------------------------------------------------------------- criterion 5

#[test]
fn c5_modulation_algebra() {
    let n = 8;
    let mut r = rng::stream(1, "acc-c5", 0);
    let mut wm = GradientBundle::zeros(n);
    let mut adv = GradientBundle::zeros(n);
    for v in wm.data.iter_mut() {
        *v = rng::normal(&mut r);
    }
    for v in adv.data.iter_mut() {
        *v = rng::normal(&mut r);
    }
    let mut mask = SoftMask::full(n);
    mask.m[3] = 0.0;
    mask.m[5] = 0.25;
    let rho = GroupValues { scale: 0.8, rotation: 1.0, opacity: 0.0, color_dc: 0.1, color_rest: 1.0 };
    let out = modulate(&adv, &mask, &rho, 1.7, &wm).unwrap();
    // m_i = 0 -> exactly the watermark gradient
    for lane in 0..LANES {
        assert_eq!(out.lane(3, lane), wm.lane(3, lane));
    }
    // rho_k = 0 (opacity) -> exactly the watermark gradient for that group
    for i in 0..n {
        assert_eq!(out.lane(i, 10), wm.lane(i, 10));
    }
    // homogeneity in lambda_adv
    let out2 = modulate(&adv, &mask, &rho, 3.4, &wm).unwrap();
    for i in 0..n {
        for lane in 0..LANES {
            let d1 = out.lane(i, lane) - wm.lane(i, lane);
            let d2 = out2.lane(i, lane) - wm.lane(i, lane);
            assert!((d2 - 2.0 * d1).abs() < 1e-12);
        }
    }

    // lambda_adv = 0: protect output bit-identical to the watermark-only run
    let scene = make_toy_scene(ToyKind::ObjectOnPlane, 40, 2).unwrap();
    let views = rig(4, 16, 0.0, "t");
    let key = WatermarkKey::new(5, 8, 16, 16).unwrap();
    let message = Message::random(8, 1);
    let ed = build_editor(9);
    let prompts = vec!["p1".to_string(), "p2".to_string()];
    let full_mask = SoftMask::full(scene.len());
    let wm_only = ProtectConfig { lambda_adv: 0.0, epochs: 2, views_per_iter: 2, seed: 4, ..Default::default() };
    let mut zeroed = ProtectConfig { lambda_adv: 9.9, epochs: 2, views_per_iter: 2, seed: 4, ..Default::default() };
    zeroed.lambda_adv = 0.0;
    let (a, _) = protect(&scene, &wm_only, &key, &message, &full_mask, &ed, &prompts, &views, &[]).unwrap();
    let (b, _) = protect(&scene, &zeroed, &key, &message, &full_mask, &ed, &prompts, &views, &[]).unwrap();
    assert_eq!(a.gaussians, b.gaussians, "lambda_adv = 0 must equal the watermark-only run");

    // positions bit-identical always, also with the adversarial branch on
    let active = ProtectConfig { lambda_adv: 2.0, epochs: 2, views_per_iter: 2, seed: 4, ..Default::default() };
    let (c, _) = protect(&scene, &active, &key, &message, &full_mask, &ed, &prompts, &views, &[]).unwrap();
    for (gc, gs) in c.gaussians.iter().zip(&scene.gaussians) {
        assert_eq!(gc.position, gs.position);
    }
    println!("criterion 5 (modulation algebra): PASS");
}

// ---------------------------------------------------------------- criterion 6

#[test]
fn c6_selection_correctness() {
    let scene = make_toy_scene(ToyKind::ObjectOnPlane, 500, 3).unwrap();
    let views = rig(6, 32, 0.25, "m");
    let masks: Vec<Gray> = views
        .iter()
        .map(|v| procedural_mask(&scene, v, "object").unwrap())
        .collect();
    let s = gaussian_scores(&scene, &views, &masks).unwrap();

    let object = scene.indices_with_label("object");
    let mut mean_obj = 0.0;
    let mut mean_bg = 0.0;
    let mut n_bg = 0usize;
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
    assert!(mean_obj > mean_bg, "object mean {mean_obj} vs background mean {mean_bg}");

    // saturation identity: m = 1 at s = tau + eps
    let tau = 0.6;
    let m = soft_coefficients(&[tau + splatguard::selection::SCORE_EPS], tau, 2.0).unwrap();
    assert!((m[0] - 1.0).abs() < 1e-12);

    // gamma -> infinity limit matches the hard mask as a set
    let soft = soft_coefficients(&s, tau, 64.0).unwrap();
    let hard = hard_coefficients(&s, tau).unwrap();
    let soft_set: Vec<usize> =
        soft.iter().enumerate().filter(|(_, v)| **v == 1.0).map(|(i, _)| i).collect();
    let hard_set: Vec<usize> =
        hard.iter().enumerate().filter(|(_, v)| **v == 1.0).map(|(i, _)| i).collect();
    assert_eq!(soft_set, hard_set);

    // brute-force contribution oracle on a small render
    let small = make_toy_scene(ToyKind::ObjectOnPlane, 60, 4).unwrap();
    let view = &rig(1, 32, 0.0, "o")[0];
    let mask = procedural_mask(&small, view, "object").unwrap();
    let rendered = render(&small, view, Some(&mask)).unwrap();
    let (_, weights) = render_dense_weights(&small, view).unwrap();
    for i in 0..small.len() {
        let den: f64 = weights[i].iter().sum();
        let num: f64 = weights[i].iter().enumerate().map(|(p, w)| w * mask.data[p]).sum();
        assert!((rendered.contrib_den[i] - den).abs() < 1e-9);
        assert!((rendered.contrib_mask_num[i] - num).abs() < 1e-9);
    }
    println!("criterion 6 (selection correctness): PASS");
}

// ---------------------------------------------------------------- criterion 7

#[test]
fn c7_robustness_harness_completeness() {
    let size = 32;
    let views = rig(4, size, 0.5, "e");
    let key = WatermarkKey::new(21, 32, size, size).unwrap();
    let message = Message::random(32, 5);
    let scene = make_toy_scene(ToyKind::ObjectOnPlane, 250, 6).unwrap();

    // watermark table end-to-end with the stable schema
    let table = wm_robustness_harness(
        &scene,
        &key,
        &message,
        &views,
        &DistortionSpec::standard_set(7),
        &ModelDistortions::default(),
    )
    .unwrap();
    assert!(table.to_csv().starts_with(
        "scene,none,model_noise,model_prune,model_clone,img_noise,img_rotation,img_scaling,img_blur,img_crop,img_jpeg\n"
    ));
    // the none column equals direct evaluation
    let mut direct = 0.0;
    for v in &views {
        let img = render(&scene, v, None).unwrap().image;
        direct += bit_accuracy(&decode_bits(&img, &key).unwrap(), &message).unwrap();
    }
    direct /= views.len() as f64;
    assert_eq!(table.value("none").unwrap(), direct);

    // zero-parameter distortions are identities
    let img = render(&scene, &views[0], None).unwrap().image;
    for spec in [
        DistortionSpec::new(DistortionKind::Noise, 0.0, 1),
        DistortionSpec::new(DistortionKind::Rotation, 0.0, 1),
        DistortionSpec::new(DistortionKind::Scaling, 1.0, 1),
        DistortionSpec::new(DistortionKind::Blur, 0.0, 1),
        DistortionSpec::new(DistortionKind::Crop, 1.0, 1),
    ] {
        assert_eq!(distort_image(&img, &spec).unwrap().data, img.data);
    }

    // unprotected decode is chance level over 100 random keys
    let renders: Vec<Image> =
        views.iter().map(|v| render(&scene, v, None).unwrap().image).collect();
    let mut acc = 0.0;
    for k in 0..100u64 {
        let key = WatermarkKey::new(10_000 + k, 32, size, size).unwrap();
        for img in &renders {
            acc += bit_accuracy(&decode_bits(img, &key).unwrap(), &message).unwrap();
        }
    }
    acc /= 100.0 * renders.len() as f64;
    assert!(
        (0.35..=0.65).contains(&acc),
        "unprotected decode should be chance level, got {acc}"
    );

    // after-edit table: zero-strength edit drops at most 2 pp
    let edit_cfg = EditConfig {
        rounds: 1,
        fit_steps: 6,
        strength: 0.0,
        variant: EditVariant::DgeLike,
        ..Default::default()
    };
    let attack_editor = edit_cfg.build_editor();
    let after = wm_after_edit_harness(
        std::slice::from_ref(&scene),
        &views,
        &key,
        &message,
        &edit_cfg,
        &attack_editor,
    )
    .unwrap();
    assert!(after.to_csv().starts_with("scene,before,after,drop_pp\n"));
    let (_, before, after_acc) = &after.rows[0];
    assert!((before - after_acc).abs() * 100.0 <= 2.0, "zero-strength drop too large");
    assert!(*after_acc >= 0.35, "after-edit accuracy {after_acc} below the sanity floor");
    println!("criterion 7 (robustness harness completeness): PASS");
}

// ---------------------------------------------------------------- criterion 8

#[test]
fn c8_determinism_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let run_pipeline = |workers: usize, tag: &str| -> Vec<(String, Vec<u8>)> {
        splatguard::parallel::set_workers(workers);
        let root = dir.path().join(tag);
        std::fs::create_dir_all(&root).unwrap();
        let size = 16;
        let scene = make_toy_scene(ToyKind::ObjectOnPlane, 60, 3).unwrap();
        splatguard::scene::scene_save(&scene, &root.join("scene.gspl")).unwrap();
        let train = rig(4, size, 0.0, "t");
        let mask_views = rig(4, size, 0.25, "m");
        let masks: Vec<Gray> = mask_views
            .iter()
            .map(|v| procedural_mask(&scene, v, "object").unwrap())
            .collect();
        let s = gaussian_scores(&scene, &mask_views, &masks).unwrap();
        let mask = build_mask(
            s,
            0.6,
            2.0,
            MaskMode::Soft,
            mask_views.iter().map(|v| v.view_id.clone()).collect(),
        )
        .unwrap();
        mask.save_csv(&root.join("mask.csv")).unwrap();
        let key = WatermarkKey::new(5, 8, size, size).unwrap();
        let message = Message::random(8, 1);
        let ed = build_editor(9);
        let cfg = ProtectConfig {
            lambda_adv: 1.0,
            epochs: 2,
            views_per_iter: 2,
            seed: 4,
            ..Default::default()
        };
        let prompts = vec!["q".to_string()];
        let (protected, report) =
            protect(&scene, &cfg, &key, &message, &mask, &ed, &prompts, &train, &[]).unwrap();
        splatguard::scene::scene_save(&protected, &root.join("protected.gspl")).unwrap();
        std::fs::write(root.join("trace.csv"), report.trace_csv()).unwrap();
        for v in &train {
            render(&protected, v, None)
                .unwrap()
                .image
                .save_ppm(&root.join(format!("{}.ppm", v.view_id)))
                .unwrap();
        }
        let edit_cfg = EditConfig { rounds: 1, fit_steps: 4, ..Default::default() };
        let attack_editor = edit_cfg.build_editor();
        let (edited, _) = run_edit(&protected, &train, &edit_cfg, &attack_editor).unwrap();
        splatguard::scene::scene_save(&edited, &root.join("edited.gspl")).unwrap();
        let table = wm_robustness_harness(
            &protected,
            &key,
            &message,
            &train,
            &DistortionSpec::standard_set(7),
            &ModelDistortions::default(),
        )
        .unwrap();
        std::fs::write(root.join("wm_robustness.csv"), table.to_csv()).unwrap();

        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&root)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        files
    };
    let w1 = run_pipeline(1, "w1");
    let w4 = run_pipeline(4, "w4");
    let w1_again = run_pipeline(1, "w1b");
    splatguard::parallel::set_workers(1);
    assert_eq!(w1.len(), w4.len());
    for ((name_a, bytes_a), (name_b, bytes_b)) in w1.iter().zip(&w4) {
        assert_eq!(name_a, name_b);
        assert_eq!(bytes_a, bytes_b, "file {name_a} differs across worker counts");
    }
    for ((name_a, bytes_a), (name_b, bytes_b)) in w1.iter().zip(&w1_again) {
        assert_eq!(name_a, name_b);
        assert_eq!(bytes_a, bytes_b, "file {name_a} differs across repeated runs");
    }
    println!("criterion 8 (determinism): PASS");
}
