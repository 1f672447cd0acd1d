//! Writes a synthetic capture (images, masks, poses, camera and body bundle)
//! and reads it back.
//!
//! cargo run --release --example make_synthetic -- [out dir] [arm|figure]

use std::path::PathBuf;
use std::sync::Arc;

use surfel_avatar::body::{make_mini_body, Body, MiniBodySpec};
use surfel_avatar::dataset::{load_frames, load_manifest, make_synthetic_dataset, SyntheticConfig};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = args.first().map_or_else(|| std::env::temp_dir().join("synthetic"), PathBuf::from);
    let spec = match args.get(1).map(String::as_str) {
        None | Some("figure") => MiniBodySpec::figure(),
        Some("arm") => MiniBodySpec::arm(),
        Some(other) => anyhow::bail!("unknown body {other:?}, expected arm or figure"),
    };
    let body = Arc::new(Body::new(make_mini_body(&spec, 0)?)?);
    let cfg = SyntheticConfig::default();
    make_synthetic_dataset(body.clone(), &cfg, &out)?;

    let m = load_manifest(&out)?;
    println!(
        "{}: {} train / {} test frames, {}x{} camera, body with {} vertices and {} joints",
        out.display(),
        m.split.train.len(),
        m.split.test.len(),
        m.camera.width,
        m.camera.height,
        body.bundle.vertex_count(),
        body.bundle.joint_count()
    );
    for f in load_frames(&m, &m.split.test)? {
        let fg = f.mask.iter().filter(|m| **m).count();
        println!("test frame {}: {fg} foreground pixels, root rotation {:.3?}", f.id, f.pose.theta[0]);
    }
    Ok(())
}
