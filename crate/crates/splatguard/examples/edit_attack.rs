//! Attack a scene with the surrogate render-edit-update pipeline and
//! measure how far the edited result moves, under both attack variants.
//!
//! ```bash
//! cargo run --release --example edit_attack
//! ```

use splatguard::camera::{default_focal, orbit_rig};
use splatguard::editloop::{run_edit, EditConfig, EditVariant};
use splatguard::metrics::{build_embedders, cosine};
use splatguard::renderer::render;
use splatguard::scene::{make_toy_scene, ToyKind};

fn main() -> splatguard::Result<()> {
    let out_dir = std::path::PathBuf::from("target/examples-out/edit_attack");
    std::fs::create_dir_all(&out_dir)?;
    splatguard::parallel::set_workers(2);

    let size = 48;
    let scene = make_toy_scene(ToyKind::ObjectOnPlane, 600, 7)?;
    let views = orbit_rig(8, 3.6, 1.3, size, default_focal(size), 0.0, "v");
    let embedders = build_embedders(7);

    for variant in [EditVariant::DgeLike, EditVariant::GeLike] {
        let cfg = EditConfig {
            rounds: 2,
            fit_steps: 40,
            variant,
            prompt: "turn the object into a panda".into(),
            ..Default::default()
        };
        let editor = cfg.build_editor();
        let (edited, targets) = run_edit(&scene, &views, &cfg, &editor)?;

        // embedding similarity between pre- and post-attack renders
        let mut sim = 0.0;
        for v in &views {
            let before = render(&scene, v, None)?.image;
            let after = render(&edited, v, None)?.image;
            sim += cosine(&embedders.embed_image(&before), &embedders.embed_image(&after));
        }
        sim /= views.len() as f64;
        println!("{variant:?}: post-edit embedding similarity to original {sim:.4}");

        let tag = format!("{variant:?}").to_lowercase();
        render(&edited, &views[0], None)?
            .image
            .save_ppm(&out_dir.join(format!("{tag}_edited.ppm")))?;
        targets[0].save_ppm(&out_dir.join(format!("{tag}_target.ppm")))?;
    }
    println!("renders in {}", out_dir.display());
    Ok(())
}
