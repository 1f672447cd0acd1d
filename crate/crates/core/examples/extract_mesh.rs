//! Meshes an avatar in its rest pose and writes an OBJ.
//!
//! cargo run --release --example extract_mesh -- [checkpoint dir] [out.obj] [resolution] [views]
//!
//! Without a checkpoint the synthetic ground-truth avatar of the mini figure
//! is used.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use surfel_avatar::body::{make_mini_body, Body, MiniBodySpec};
use surfel_avatar::dataset::{ground_truth_avatar, SyntheticConfig};
use surfel_avatar::deform::deform_avatar;
use surfel_avatar::mesh::{extract_avatar_mesh, ExtractConfig};
use surfel_avatar::train::load_checkpoint;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = args.get(1).map_or_else(|| std::env::temp_dir().join("avatar.obj"), PathBuf::from);
    let mut cfg = ExtractConfig::default();
    if let Some(r) = args.get(2) {
        cfg.resolution = r.parse()?;
    }
    if let Some(v) = args.get(3) {
        cfg.views = v.parse()?;
    }

    let splats = match args.first().filter(|a| *a != "-") {
        Some(dir) => {
            let state = load_checkpoint(dir.as_ref())?;
            let rest = state.model.body.bundle.rest_pose();
            state.posed_splats(&rest)?
        }
        None => {
            let body = Arc::new(Body::new(make_mini_body(&MiniBodySpec::figure(), 0)?)?);
            let model = ground_truth_avatar(body.clone(), &SyntheticConfig::default())?;
            let posed = body.pose(&body.bundle.rest_pose())?;
            deform_avatar(&model, &posed, None)?
        }
    };

    let t = Instant::now();
    let report = extract_avatar_mesh(&splats, &cfg)?;
    let m = &report.mesh;
    println!(
        "{} splats -> {} vertices, {} faces in {:.2}s (volume {:?}, voxel {:.4})",
        splats.len(),
        m.vertices.len(),
        m.faces.len(),
        t.elapsed().as_secs_f64(),
        report.volume.dims,
        report.volume.voxel_size
    );
    println!("closed 2-manifold: {}, Euler characteristic {}", m.is_closed_manifold(), m.euler_characteristic());
    m.save_obj(&out)?;
    println!("wrote {}", out.display());
    Ok(())
}
