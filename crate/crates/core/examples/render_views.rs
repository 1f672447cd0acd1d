//! Renders the synthetic ground-truth figure from an orbit of cameras and
//! writes colour, alpha and normal images.
//!
//! cargo run --release --example render_views -- [out dir] [views]

use std::path::PathBuf;
use std::sync::Arc;

use surfel_avatar::body::{make_mini_body, Body, MiniBodySpec};
use surfel_avatar::dataset::{ground_truth_avatar, render_avatar, SyntheticConfig};
use surfel_avatar::raster::{normals_to_rgb, save_mask_png, Camera, RgbImage};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = args.first().map_or_else(|| std::env::temp_dir().join("render_views"), PathBuf::from);
    let views: usize = args.get(1).map_or(Ok(6), |a| a.parse())?;
    std::fs::create_dir_all(&out)?;

    let body = Arc::new(Body::new(make_mini_body(&MiniBodySpec::figure(), 0)?)?);
    let avatar = ground_truth_avatar(body.clone(), &SyntheticConfig::default())?;
    let pose = body.bundle.rest_pose();
    let cams = Camera::orbit([0.0, 0.0, 0.0], 2.2, 0.3, views, 0.0, 140.0, 128, 128)?;
    for (i, cam) in cams.iter().enumerate() {
        let r = render_avatar(&avatar, &pose, cam)?;
        let coverage = r.alpha.iter().filter(|a| **a > 0.5).count() as f64 / r.pixel_count() as f64;
        RgbImage::new(r.width, r.height, r.color.clone())?.save_png(&out.join(format!("color_{i}.png")))?;
        save_mask_png(&out.join(format!("alpha_{i}.png")), r.width, r.height, &r.alpha)?;
        RgbImage::new(r.width, r.height, normals_to_rgb(&r.normal, &r.alpha))?.save_png(&out.join(format!("normal_{i}.png")))?;
        println!("view {i}: camera at {:.2?}, {:.1}% covered", cam.center(), 100.0 * coverage);
    }
    println!("{} splats, images in {}", avatar.len(), out.display());
    Ok(())
}
