//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 data error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use surfel_avatar::body::{load_body, make_mini_body, Body, BodyBundle, MiniBodySpec, Pose};
use surfel_avatar::dataset::{load_camera, load_frame, load_manifest, load_poses, make_synthetic_dataset, SyntheticConfig};
use surfel_avatar::eval::evaluate;
use surfel_avatar::mesh::{extract_avatar_mesh, ExtractConfig};
use surfel_avatar::raster::{normals_to_rgb, save_mask_png, Camera, RenderOutput, RgbImage};
use surfel_avatar::train::{dataset_beta, load_checkpoint, run_training, RunOptions, TrainConfig, TrainState};

#[derive(Parser)]
#[command(name = "surfel-avatar", version, about = "Train, render, animate, evaluate and mesh surfel avatars")]
struct Cli {
    /// Worker threads (0: one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit an avatar to a capture and write checkpoints and a training log.
    Train(TrainArgs),
    /// Render one image of a trained avatar.
    Render(RenderArgs),
    /// Render a sequence of poses.
    Animate(AnimateArgs),
    /// Score held-out frames and write a JSON report.
    Eval(EvalArgs),
    /// Fuse rendered depth into a TSDF volume and write the surface as OBJ.
    ExtractMesh(MeshArgs),
    /// Write a synthetic turntable capture of a procedural body.
    MakeSynthetic(SyntheticArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory containing dataset.json.
    #[arg(long)]
    data: PathBuf,
    /// Body bundle: a directory or its body.json.
    #[arg(long)]
    body: PathBuf,
    /// Output directory for checkpoints and train.jsonl.
    #[arg(long)]
    out: PathBuf,
    /// JSON training config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for sampling, initialisation and frame order (config default 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Initial splat count (config default 30000).
    #[arg(long)]
    splats: Option<usize>,
    /// Faces whose centroid is this close to a joint each get a splat (config default 0.1).
    #[arg(long)]
    joint_radius: Option<f64>,
    /// Iterations with the rotation network frozen (config default 30000).
    #[arg(long)]
    stage1_iters: Option<u64>,
    /// Iterations training everything (config default 10000).
    #[arg(long)]
    stage2_iters: Option<u64>,
    /// Continue from the checkpoint in --out instead of starting over.
    #[arg(long)]
    resume: bool,
    /// Extra checkpoint every N iterations (0: stage switch and end only).
    #[arg(long, default_value_t = 0)]
    checkpoint_interval: u64,
    /// Progress line every N iterations (0: quiet).
    #[arg(long, default_value_t = 100)]
    print_interval: u64,
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("posesrc").required(true).args(["pose_frame", "pose"])))]
struct RenderArgs {
    /// Checkpoint directory.
    #[arg(long)]
    ckpt: PathBuf,
    /// Camera JSON (bare camera or dataset.json); defaults to the --data camera.
    #[arg(long)]
    camera: Option<PathBuf>,
    /// Dataset directory, needed by --pose-frame.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Use the pose of this dataset frame.
    #[arg(long)]
    pose_frame: Option<usize>,
    /// Pose JSON file (the first pose is used).
    #[arg(long)]
    pose: Option<PathBuf>,
    /// Output PNG.
    #[arg(long)]
    out: PathBuf,
    /// Also write the alpha mask here.
    #[arg(long)]
    alpha_out: Option<PathBuf>,
    /// Also write the normal map here.
    #[arg(long)]
    normal_out: Option<PathBuf>,
}

#[derive(Args)]
struct AnimateArgs {
    /// Checkpoint directory.
    #[arg(long)]
    ckpt: PathBuf,
    /// JSON array of poses.
    #[arg(long)]
    poses: PathBuf,
    /// Camera JSON (bare camera or dataset.json).
    #[arg(long)]
    camera: PathBuf,
    /// Output directory; frames are written as 00000.png, 00001.png, ...
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint directory.
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset directory containing dataset.json.
    #[arg(long)]
    data: PathBuf,
    /// Which split to score: train or test.
    #[arg(long, default_value = "test")]
    split: String,
    /// Report JSON path.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct MeshArgs {
    /// Checkpoint directory.
    #[arg(long)]
    ckpt: PathBuf,
    /// Output OBJ.
    #[arg(long)]
    out: PathBuf,
    /// Pose JSON (first pose used); default is the body's rest pose.
    #[arg(long)]
    pose: Option<PathBuf>,
    /// Volume samples along the longest axis.
    #[arg(long, default_value_t = 64)]
    resolution: usize,
    /// Depth views fused into the volume.
    #[arg(long, default_value_t = 36)]
    views: usize,
    /// Side of the depth renders in pixels.
    #[arg(long, default_value_t = 128)]
    image_size: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mini {
    Arm,
    Figure,
}

#[derive(Args)]
struct SyntheticArgs {
    /// Output dataset directory (the body bundle goes to OUT/body).
    #[arg(long)]
    out: PathBuf,
    /// Body bundle to use instead of a procedural one.
    #[arg(long)]
    body: Option<PathBuf>,
    /// Procedural body when --body is not given.
    #[arg(long, value_enum, default_value = "figure")]
    mini: Mini,
    /// Seed for the procedural body and the ground-truth avatar.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training views on the turntable.
    #[arg(long, default_value_t = 8)]
    train_views: usize,
    /// Held-out views, placed between training views.
    #[arg(long, default_value_t = 2)]
    test_views: usize,
    /// Image width in pixels.
    #[arg(long, default_value_t = 96)]
    width: usize,
    /// Image height in pixels.
    #[arg(long, default_value_t = 96)]
    height: usize,
    /// Splats in the ground-truth avatar.
    #[arg(long, default_value_t = 400)]
    splats: usize,
}

enum Failure {
    Usage(String),
    Data(surfel_avatar::Error),
}

impl From<surfel_avatar::Error> for Failure {
    fn from(e: surfel_avatar::Error) -> Self {
        Failure::Data(e)
    }
}

type CmdResult = Result<(), Failure>;

fn body_dir(path: &Path) -> PathBuf {
    if path.file_name().is_some_and(|n| n == "body.json") {
        path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
    } else {
        path.to_path_buf()
    }
}

fn first_pose(path: &Path) -> Result<Pose, Failure> {
    Ok(load_poses(path)?.swap_remove(0))
}

fn save_render(out: &RenderOutput, path: &Path) -> surfel_avatar::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    RgbImage::new(out.width, out.height, out.color.clone())?.save_png(path)
}

fn train(a: TrainArgs) -> CmdResult {
    let manifest = load_manifest(&a.data)?;
    let state = if a.resume && a.out.join("state.json").is_file() {
        load_checkpoint(&a.out)?
    } else {
        let mut cfg = match &a.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        if let Some(s) = a.seed {
            cfg.seed = s;
        }
        if let Some(n) = a.splats {
            cfg.splats = n;
        }
        if let Some(r) = a.joint_radius {
            cfg.joint_radius = r;
        }
        if let Some(n) = a.stage1_iters {
            cfg.stage1_iters = n;
        }
        if let Some(n) = a.stage2_iters {
            cfg.stage2_iters = n;
        }
        cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        let body = Arc::new(Body::new(load_body(&body_dir(&a.body))?)?);
        let beta = dataset_beta(&body, &manifest)?;
        TrainState::new(cfg, body, beta)?
    };
    let opts = RunOptions {
        perceptual: None,
        checkpoint_interval: a.checkpoint_interval,
        print_interval: a.print_interval,
    };
    let state = run_training(state, &manifest, &a.out, &opts)?;
    println!("trained {} iterations, {} splats, checkpoint in {}", state.iteration, state.model.len(), a.out.display());
    Ok(())
}

fn render(a: RenderArgs) -> CmdResult {
    let state = load_checkpoint(&a.ckpt)?;
    let manifest = a.data.as_deref().map(load_manifest).transpose()?;
    let (pose, frame_cam) = match (a.pose_frame, &a.pose) {
        (Some(id), _) => {
            let m = manifest.as_ref().ok_or_else(|| Failure::Usage("--pose-frame needs --data".into()))?;
            let f = load_frame(m, id)?;
            (f.pose, Some(f.camera))
        }
        (None, Some(p)) => (first_pose(p)?, manifest.as_ref().map(|m| m.camera)),
        (None, None) => unreachable!("clap requires one pose source"),
    };
    let cam: Camera = match &a.camera {
        Some(p) => load_camera(p)?,
        None => frame_cam.ok_or_else(|| Failure::Usage("give --camera or --data".into()))?,
    };
    let out = state.render(&pose, &cam)?;
    save_render(&out, &a.out)?;
    if let Some(p) = &a.alpha_out {
        save_mask_png(p, out.width, out.height, &out.alpha)?;
    }
    if let Some(p) = &a.normal_out {
        RgbImage::new(out.width, out.height, normals_to_rgb(&out.normal, &out.alpha))?.save_png(p)?;
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn animate(a: AnimateArgs) -> CmdResult {
    let state = load_checkpoint(&a.ckpt)?;
    let poses = load_poses(&a.poses)?;
    let cam = load_camera(&a.camera)?;
    std::fs::create_dir_all(&a.out).map_err(surfel_avatar::Error::from)?;
    for (i, pose) in poses.iter().enumerate() {
        let out = state.render(pose, &cam)?;
        save_render(&out, &a.out.join(format!("{i:05}.png")))?;
    }
    println!("wrote {} frames to {}", poses.len(), a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> CmdResult {
    if a.split != "train" && a.split != "test" {
        return Err(Failure::Usage(format!("--split must be train or test, got {:?}", a.split)));
    }
    let state = load_checkpoint(&a.ckpt)?;
    let manifest = load_manifest(&a.data)?;
    let report = evaluate(&state, &manifest, &a.split, None)?;
    let json = serde_json::to_string_pretty(&report).map_err(surfel_avatar::Error::from)?;
    if let Some(dir) = a.report.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(surfel_avatar::Error::from)?;
    }
    surfel_avatar::util::write_atomic(&a.report, json.as_bytes())?;
    let r = &report.rows[0];
    println!("{} frames: PSNR {:.3} dB, SSIM {:.4}", r.frames, r.psnr, r.ssim);
    Ok(())
}

fn extract_mesh(a: MeshArgs) -> CmdResult {
    let state = load_checkpoint(&a.ckpt)?;
    let pose = match &a.pose {
        Some(p) => first_pose(p)?,
        None => state.model.body.bundle.rest_pose(),
    };
    let cfg = ExtractConfig {
        resolution: a.resolution,
        views: a.views,
        image_size: a.image_size,
        ..ExtractConfig::default()
    };
    let report = extract_avatar_mesh(&state.posed_splats(&pose)?, &cfg)?;
    report.mesh.save_obj(&a.out)?;
    println!(
        "wrote {} ({} vertices, {} faces, closed manifold: {})",
        a.out.display(),
        report.mesh.vertices.len(),
        report.mesh.faces.len(),
        report.mesh.is_closed_manifold()
    );
    Ok(())
}

fn make_synthetic(a: SyntheticArgs) -> CmdResult {
    let bundle: BodyBundle = match &a.body {
        Some(p) => load_body(&body_dir(p))?,
        None => {
            let spec = match a.mini {
                Mini::Arm => MiniBodySpec::arm(),
                Mini::Figure => MiniBodySpec::figure(),
            };
            make_mini_body(&spec, a.seed)?
        }
    };
    let cfg = SyntheticConfig {
        train_views: a.train_views,
        test_views: a.test_views,
        width: a.width,
        height: a.height,
        splats: a.splats,
        seed: a.seed,
        ..SyntheticConfig::default()
    };
    let m = make_synthetic_dataset(Arc::new(Body::new(bundle)?), &cfg, &a.out)?;
    println!("wrote {} frames to {}", m.frames.len(), a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.cmd {
        Command::Train(a) => train(a),
        Command::Render(a) => render(a),
        Command::Animate(a) => animate(a),
        Command::Eval(a) => eval(a),
        Command::ExtractMesh(a) => extract_mesh(a),
        Command::MakeSynthetic(a) => make_synthetic(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
