//! Build per-Gaussian mask scores from multi-view 2D masks and turn them
//! into soft and hard update coefficients.
//!
//! ```bash
//! cargo run --release --example saliency_selection
//! ```

use splatguard::camera::{default_focal, orbit_rig};
use splatguard::image::Gray;
use splatguard::scene::{make_toy_scene, ToyKind};
use splatguard::selection::{
    build_mask, gaussian_scores, hard_coefficients, procedural_mask, MaskMode,
};

fn main() -> splatguard::Result<()> {
    let out_dir = std::path::PathBuf::from("target/examples-out/saliency_selection");
    std::fs::create_dir_all(&out_dir)?;

    let scene = make_toy_scene(ToyKind::ObjectOnPlane, 1200, 3)?;
    let views = orbit_rig(12, 3.6, 1.3, 48, default_focal(48), 0.25, "mask");

    // ground-truth-style 2D masks from the labelled subset
    let masks: Vec<Gray> = views
        .iter()
        .map(|v| procedural_mask(&scene, v, "object"))
        .collect::<splatguard::Result<_>>()?;
    for (v, m) in views.iter().zip(&masks) {
        m.save_pgm(&out_dir.join(format!("{}.pgm", v.view_id)))?;
    }

    let s = gaussian_scores(&scene, &views, &masks)?;
    let object = scene.indices_with_label("object");
    let mean = |idx: &[usize]| idx.iter().map(|&i| s[i]).sum::<f64>() / idx.len() as f64;
    let background: Vec<usize> = (0..scene.len()).filter(|i| !object.contains(i)).collect();
    println!("mean score: object {:.3}, background {:.3}", mean(&object), mean(&background));

    let mask = build_mask(
        s.clone(),
        0.6,
        2.0,
        MaskMode::Soft,
        views.iter().map(|v| v.view_id.clone()).collect(),
    )?;
    mask.save_csv(&out_dir.join("softmask.csv"))?;
    let saturated = mask.m.iter().filter(|m| **m >= 1.0).count();
    println!("soft mask: {} of {} gaussians saturated", saturated, mask.len());

    let hard = hard_coefficients(&s, 0.6)?;
    println!("hard mask at 0.6 selects {} gaussians", hard.iter().filter(|m| **m == 1.0).count());
    println!("outputs in {}", out_dir.display());
    Ok(())
}
