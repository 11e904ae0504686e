//! Produce the three robustness tables on a small protected scene: watermark
//! recovery under image/model distortions, edit deterrence under model
//! distortions, and watermark recovery after 3D editing.
//!
//! ```bash
//! cargo run --release --example robustness_tables
//! ```

use splatguard::camera::{default_focal, orbit_rig};
use splatguard::editloop::EditConfig;
use splatguard::editor::build_editor;
use splatguard::metrics::build_embedders;
use splatguard::protect::{protect, ProtectConfig};
use splatguard::robustness::{
    adv_robustness_harness, wm_after_edit_harness, wm_robustness_harness, DistortionSpec,
    ModelDistortions,
};
use splatguard::scene::{make_toy_scene, ToyKind};
use splatguard::selection::SoftMask;
use splatguard::watermark::{Message, WatermarkKey};

fn main() -> splatguard::Result<()> {
    let out_dir = std::path::PathBuf::from("target/examples-out/robustness_tables");
    std::fs::create_dir_all(&out_dir)?;
    splatguard::parallel::set_workers(2);

    let size = 48;
    let scene = make_toy_scene(ToyKind::ObjectOnPlane, 500, 7)?;
    let train = orbit_rig(10, 3.6, 1.3, size, default_focal(size), 0.0, "t");
    let eval = orbit_rig(5, 3.6, 1.3, size, default_focal(size), 0.5, "e");
    let key = WatermarkKey::new(42, 32, size, size)?;
    let message = Message::random(32, 9);
    let editor = build_editor(100);

    let cfg = ProtectConfig { epochs: 4, seed: 3, ..Default::default() };
    let prompts = vec!["turn the object into a panda".to_string()];
    let (protected, _) = protect(
        &scene,
        &cfg,
        &key,
        &message,
        &SoftMask::full(scene.len()),
        &editor,
        &prompts,
        &train,
        &eval,
    )?;

    let model = ModelDistortions::default();
    let wm_table = wm_robustness_harness(
        &protected,
        &key,
        &message,
        &eval,
        &DistortionSpec::standard_set(11),
        &model,
    )?;
    std::fs::write(out_dir.join("wm_robustness.csv"), wm_table.to_csv())?;
    println!("watermark robustness:\n{}", wm_table.to_csv());

    let edit_cfg = EditConfig { rounds: 1, fit_steps: 20, ..Default::default() };
    let attack_editor = edit_cfg.build_editor();
    let embedders = build_embedders(7);
    let adv = adv_robustness_harness(
        &scene,
        &protected,
        &eval,
        &edit_cfg,
        &attack_editor,
        &embedders,
        "a photo of a scene",
        &model,
    )?;
    std::fs::write(out_dir.join("adv_robustness.csv"), adv.to_csv())?;
    println!("edit-deterrence robustness written");

    let after = wm_after_edit_harness(
        std::slice::from_ref(&protected),
        &eval,
        &key,
        &message,
        &edit_cfg,
        &attack_editor,
    )?;
    std::fs::write(out_dir.join("wm_after_edit.csv"), after.to_csv())?;
    println!("watermark after edit:\n{}", after.to_csv());
    println!("tables in {}", out_dir.display());
    Ok(())
}
