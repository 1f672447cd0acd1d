//! Evaluates every training loss on a small rendered scene and prints the
//! individual terms next to their weights.
//!
//! cargo run --release --example losses

use std::sync::Arc;

use surfel_avatar::body::{make_mini_body, Body, MiniBodySpec};
use surfel_avatar::dataset::{ground_truth_avatar, render_avatar, synthetic_pose, SyntheticConfig};
use surfel_avatar::losses::{normal_loss, psnr, ssim, LossWeights};
use surfel_avatar::raster::{Camera, RgbImage};
use surfel_avatar::train::{compute_gradients, TrainConfig, TrainState};

fn main() -> anyhow::Result<()> {
    let body = Arc::new(Body::new(make_mini_body(&MiniBodySpec::figure(), 0)?)?);
    let synth = SyntheticConfig::default();
    let truth = ground_truth_avatar(body.clone(), &synth)?;
    let cam = Camera::look_at([0.0, 0.2, 2.4], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], 60.0, 60.0, 64, 64)?;
    let pose = synthetic_pose(&body, 0.1, synth.arm_swing);
    let target = render_avatar(&truth, &pose, &cam)?;
    let (n, _) = normal_loss(&target, &cam)?;
    println!("ground truth: normal consistency {n:.5}");

    // a freshly initialised avatar scored against that render
    let cfg = TrainConfig {
        splats: 300,
        joint_radius: 0.06,
        ..TrainConfig::default()
    };
    let state = TrainState::new(cfg, body, vec![])?;
    let frame = surfel_avatar::dataset::FrameSample {
        id: 0,
        image: RgbImage::new(64, 64, target.color.clone())?,
        mask: target.alpha.iter().map(|a| *a > 0.5).collect(),
        pose,
        camera: cam,
    };
    let g = compute_gradients(&state, &frame, None)?;
    let w = LossWeights::default();
    println!("{:#?}", g.loss);
    println!("weights: {w:?}");
    let pred = RgbImage::new(64, 64, g.render.color)?;
    let tgt = frame.composited();
    println!("initial avatar: PSNR {:.2} dB, SSIM {:.3}", psnr(&pred, &tgt)?, ssim(&pred, &tgt)?);
    let norm = g.splat.iter().map(|x| x * x).sum::<f64>().sqrt();
    println!("splat gradient norm {norm:.4e} over {} values", g.splat.len());
    Ok(())
}
