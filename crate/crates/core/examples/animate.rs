//! Poses the ground-truth figure through a waving motion and writes one
//! frame per pose.
//!
//! cargo run --release --example animate -- [out dir] [frames]

use std::path::PathBuf;
use std::sync::Arc;

use surfel_avatar::body::{make_mini_body, Body, MiniBodySpec};
use surfel_avatar::dataset::{ground_truth_avatar, render_avatar, SyntheticConfig};
use surfel_avatar::raster::{Camera, RgbImage};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = args.first().map_or_else(|| std::env::temp_dir().join("animate"), PathBuf::from);
    let frames: usize = args.get(1).map_or(Ok(12), |a| a.parse())?;
    std::fs::create_dir_all(&out)?;

    let body = Arc::new(Body::new(make_mini_body(&MiniBodySpec::figure(), 0)?)?);
    let avatar = ground_truth_avatar(body.clone(), &SyntheticConfig::default())?;
    let cam = Camera::look_at([0.0, 0.2, 2.4], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], 120.0, 120.0, 128, 128)?;
    let joints = body.bundle.joint_count();
    for i in 0..frames {
        let phase = std::f64::consts::TAU * i as f64 / frames as f64;
        let mut pose = body.bundle.rest_pose();
        // every non-root joint bends about z, alternating direction
        for (j, t) in pose.theta.iter_mut().enumerate().skip(1) {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            *t = [0.0, 0.0, sign * 0.6 * phase.sin()];
        }
        pose.theta[0] = [0.0, 0.3 * phase.sin(), 0.0];
        let r = render_avatar(&avatar, &pose, &cam)?;
        let path = out.join(format!("{i:05}.png"));
        RgbImage::new(r.width, r.height, r.color)?.save_png(&path)?;
    }
    println!("{frames} frames of a {joints}-joint body written to {}", out.display());
    Ok(())
}
