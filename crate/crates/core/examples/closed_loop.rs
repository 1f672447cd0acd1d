//! Generates a synthetic turntable capture of the mini figure, trains an
//! avatar on it, and reports the training-view PSNR.
//!
//! cargo run --release --example closed_loop -- [stage1 iters] [stage2 iters] [out dir] [config.json]

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use surfel_avatar::body::{make_mini_body, Body, MiniBodySpec};
use surfel_avatar::dataset::{
    ground_truth_avatar, load_frames, load_manifest, make_synthetic_dataset, render_avatar, synthetic_pose, SyntheticConfig,
};
use surfel_avatar::losses::{mask_iou, psnr};
use surfel_avatar::raster::RgbImage;
use surfel_avatar::train::{dataset_beta, run_training, LrScale, RunOptions, TrainConfig, TrainState};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let s1: u64 = args.first().map_or(Ok(2000), |a| a.parse())?;
    let s2: u64 = args.get(1).map_or(Ok(500), |a| a.parse())?;
    let out = args.get(2).map_or_else(|| std::env::temp_dir().join("closed_loop"), PathBuf::from);

    let body = Arc::new(Body::new(make_mini_body(&MiniBodySpec::figure(), 0)?)?);
    let data = out.join("data");
    make_synthetic_dataset(body, &SyntheticConfig::default(), &data)?;
    let manifest = load_manifest(&data)?;
    let body = Arc::new(Body::new(surfel_avatar::body::load_body(&data.join("body"))?)?);

    let mut cfg = match args.get(3) {
        Some(path) => TrainConfig::load(path.as_ref())?,
        None => TrainConfig {
            splats: 400,
            joint_radius: 0.06,
            // a small capture needs faster rotation and sliding than the defaults
            lr_scale: LrScale {
                rot: 10.0,
                bary: 1.0,
                ..LrScale::default()
            },
            ..TrainConfig::default()
        },
    };
    cfg.stage1_iters = s1;
    cfg.stage2_iters = s2;
    let beta = dataset_beta(&body, &manifest)?;
    let state = TrainState::new(cfg, body, beta)?;
    let t = Instant::now();
    let opts = RunOptions {
        print_interval: 250,
        ..RunOptions::default()
    };
    let state = run_training(state, &manifest, &out.join("ckpt"), &opts)?;
    println!("trained {} iterations in {:.1}s", state.iteration, t.elapsed().as_secs_f64());

    let mut total = 0.0;
    let frames = load_frames(&manifest, &manifest.split.train)?;
    for f in &frames {
        let r = state.render(&f.pose, &f.camera)?;
        let p = psnr(&RgbImage::new(r.width, r.height, r.color)?, &f.composited())?;
        total += p;
        println!("frame {}: {p:.2} dB", f.id);
    }
    println!("mean training-view PSNR {:.2} dB", total / frames.len() as f64);

    // unseen pose: half-way between two training phases
    let synth = SyntheticConfig::default();
    let truth = ground_truth_avatar(state.model.body.clone(), &synth)?;
    let pose = synthetic_pose(&state.model.body, 0.5 / synth.train_views as f64, synth.arm_swing);
    let a = render_avatar(&truth, &pose, &manifest.camera)?;
    let b = state.render(&pose, &manifest.camera)?;
    println!("novel-pose mask IoU {:.3}", mask_iou(&a.alpha, &b.alpha));
    for (name, r) in [("novel_truth.png", a), ("novel_trained.png", b)] {
        RgbImage::new(r.width, r.height, r.color)?.save_png(&out.join(name))?;
    }
    Ok(())
}
