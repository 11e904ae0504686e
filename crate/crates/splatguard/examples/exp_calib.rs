// temporary calibration probe, removed before release
use splatguard::camera::{default_focal, orbit_rig};
use splatguard::editor::build_editor;
use splatguard::image::Image;
use splatguard::renderer::{render, render_vjp, LANES};
use splatguard::scene::{make_toy_scene, GaussianScene, ToyKind};
use splatguard::watermark::{
    bit_accuracy, decode_bits, msg_loss, quality_loss, Message, WatermarkKey,
};

fn run(scene: &GaussianScene, lr: f64, lambda_msg: f64, steps: usize, use_adam: bool) {
    let size = 64;
    let views = orbit_rig(24, 3.6, 1.3, size, default_focal(size), 0.0, "t");
    let heldout = orbit_rig(8, 3.6, 1.3, size, default_focal(size), 0.5, "h");
    let key = WatermarkKey::new(42, 32, size, size).unwrap();
    let message = Message::random(32, 9);
    let editor = build_editor(100);
    let refs: Vec<Image> = views.iter().map(|v| render(scene, v, None).unwrap().image).collect();

    let mut work = scene.clone();
    let n = scene.len();
    let mut m1 = vec![0.0; n * LANES];
    let mut m2 = vec![0.0; n * LANES];
    let mut step_count = 0;
    for step in 0..steps {
        let mut grad = vec![0.0; n * LANES];
        let mut msg_sum = 0.0;
        for (v, reference) in views.iter().zip(&refs) {
            let img = render(&work, v, None).unwrap().image;
            let (lm, cot_m) = msg_loss(&img, &key, &message).unwrap();
            let (_lq, cot_q) = quality_loss(&img, reference, &editor, 0.1).unwrap();
            msg_sum += lm / views.len() as f64;
            let mut cot = cot_m;
            for (c, q) in cot.data.iter_mut().zip(&cot_q.data) {
                *c = lambda_msg * *c + *q;
            }
            let b = render_vjp(&work, v, &cot).unwrap();
            for (g, bv) in grad.iter_mut().zip(&b.data) {
                *g += bv / views.len() as f64;
            }
        }
        step_count += 1;
        for (i, g) in work.gaussians.iter_mut().enumerate() {
            for c in 0..3 {
                let idx = i * LANES + 11 + c;
                let upd = if use_adam {
                    m1[idx] = 0.9 * m1[idx] + 0.1 * grad[idx];
                    m2[idx] = 0.999 * m2[idx] + 0.001 * grad[idx] * grad[idx];
                    let mh = m1[idx] / (1.0 - 0.9f64.powi(step_count));
                    let vh = m2[idx] / (1.0 - 0.999f64.powi(step_count));
                    mh / (vh.sqrt() + 1e-8)
                } else {
                    grad[idx]
                };
                g.color_dc[c] -= lr * upd;
            }
        }
        if step % 25 == 0 || step == steps - 1 {
            let mut acc = 0.0;
            let mut mse = 0.0;
            for v in &heldout {
                let img = render(&work, v, None).unwrap().image;
                acc += bit_accuracy(&decode_bits(&img, &key).unwrap(), &message).unwrap() / 8.0;
                let r = render(scene, v, None).unwrap().image;
                mse += img
                    .data
                    .iter()
                    .zip(&r.data)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    / (img.data.len() as f64 * 8.0);
            }
            let psnr = 10.0 * (1.0 / mse).log10();
            println!("  step {step}: msg {msg_sum:.4} heldout_acc {acc:.4} psnr {psnr:.1}");
            if acc >= 0.97 && psnr >= 31.0 {
                println!("  early target hit");
                break;
            }
        }
    }
}

fn main() {
    let scene = make_toy_scene(ToyKind::ObjectOnPlane, 2000, 1).unwrap();
    println!("ADAM lr 0.005 lm 10:");
    run(&scene, 0.005, 10.0, 150, true);
    println!("SGD lr 60 lm 10:");
    run(&scene, 60.0, 10.0, 150, false);
}
