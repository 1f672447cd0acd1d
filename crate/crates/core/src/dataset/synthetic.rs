//! Turntable captures rendered from a known avatar, for closed-loop tests.

use std::path::Path;
use std::sync::Arc;

use super::{DatasetManifest, FrameRecord, Split};
use crate::body::{joint_tri_set, load_body, save_body, Body, Pose};
use crate::deform::deform_avatar;
use crate::error::{Error, Result};
use crate::math::vec::{self, Vec3};
use crate::math::{Quat, ShCoeffs};
use crate::raster::{render, save_mask_png, Camera, RenderOutput, RgbImage};
use crate::splat::{init_splats, sample_triangles, AvatarModel};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    /// Training views spread evenly over a full turn.
    pub train_views: usize,
    /// Held-out views, half-way between training views.
    pub test_views: usize,
    pub width: usize,
    pub height: usize,
    pub splats: usize,
    pub joint_radius: f64,
    /// Splat scale as a multiple of the nearest-neighbour spacing.
    pub scale_factor: f64,
    /// Peak arm swing in radians.
    pub arm_swing: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            train_views: 8,
            test_views: 2,
            width: 96,
            height: 96,
            splats: 400,
            joint_radius: 0.06,
            scale_factor: 1.0,
            arm_swing: 0.25,
            seed: 0,
        }
    }
}

/// Pose at turntable phase `t` (one full turn per unit): the root spins
/// about the vertical axis and the joints two levels below it swing about
/// the viewing axis, mirrored left to right.
pub fn synthetic_pose(body: &Body, t: f64, arm_swing: f64) -> Pose {
    let b = &body.bundle;
    let mut pose = Pose::rest(b.joint_count(), b.shape_count());
    let angle = std::f64::consts::TAU * t;
    pose.theta[0] = [0.0, angle, 0.0];
    let swing = arm_swing * (std::f64::consts::TAU * t).sin();
    for (j, p) in b.parents.iter().enumerate() {
        // joints two levels below the root
        if let Some(p) = p {
            if b.parents[*p] == Some(0) {
                let side = if b.joint_rest_positions[j][0] >= 0.0 { 1.0 } else { -1.0 };
                pose.theta[j] = [0.0, 0.0, side * swing];
            }
        }
    }
    pose
}

fn round32(x: f64) -> f64 {
    x as f32 as f64
}

/// Rotation whose third column is the face normal and first column the
/// direction of the face's first edge.
fn surface_frame(t: [Vec3; 3]) -> Option<Quat> {
    let a = vec::sub(t[1], t[0]);
    let n = vec::cross(a, vec::sub(t[2], t[0]));
    if vec::norm(a) < 1e-12 || vec::norm(n) < 1e-12 {
        return None;
    }
    let a = vec::normalize(a);
    let n = vec::normalize(n);
    let b = vec::cross(n, a);
    let m = [[a[0], b[0], n[0]], [a[1], b[1], n[1]], [a[2], b[2], n[2]]];
    Some(Quat::from_mat(&m))
}

/// The avatar the synthetic captures are rendered from: splats lie flat on
/// the surface, are nearly opaque, overlap their neighbours, and carry a
/// smooth colour pattern over the canonical body.
pub fn ground_truth_avatar(body: Arc<Body>, cfg: &SyntheticConfig) -> Result<AvatarModel> {
    let js = joint_tri_set(&body.bundle, cfg.joint_radius)?;
    let faces = sample_triangles(&body.bundle, cfg.splats.max(js.len()), &js, cfg.seed ^ 0x5eed)?;
    let mut model = init_splats(body.clone(), &faces, js, cfg.joint_radius, vec![0.0; body.bundle.shape_count()], None, cfg.seed)?;
    let mesh = model.canonical_mesh()?;
    let centers = model.canonical_centers()?;
    for (s, c) in model.splats.iter_mut().zip(centers) {
        let tri = body.bundle.face_vertices(&mesh.vertices, s.face as usize);
        s.rot = surface_frame(tri).unwrap_or(Quat::IDENTITY);
        s.scale = s.scale.map(|x| cfg.scale_factor * x);
        s.opacity = 0.95;
        let rgb = [
            0.5 + 0.35 * (3.0 * c[0] + 1.0).sin(),
            0.5 + 0.3 * (4.0 * c[1]).sin(),
            0.5 + 0.35 * (2.5 * c[0] + 3.0 * c[1]).cos(),
        ];
        s.sh = ShCoeffs::from_rgb(rgb);
    }
    for s in model.splats.iter_mut() {
        s.u = round32(s.u);
        s.v = round32(s.v);
        s.scale = s.scale.map(round32);
        s.rot = Quat::from_array(s.rot.to_array().map(round32));
        s.opacity = round32(s.opacity);
        s.sh = ShCoeffs::from_flat(&s.sh.flat().map(round32));
    }
    model.validate()?;
    Ok(model)
}

/// Fixed camera framing the body's rest bounding box from the front.
pub fn synthetic_camera(body: &Body, width: usize, height: usize) -> Result<Camera> {
    let v = &body.bundle.rest_vertices;
    let lo = v.iter().fold([f64::INFINITY; 3], |a, p| std::array::from_fn(|k| a[k].min(p[k])));
    let hi = v.iter().fold([f64::NEG_INFINITY; 3], |a, p| std::array::from_fn(|k| a[k].max(p[k])));
    let center = vec::scale(vec::add(lo, hi), 0.5);
    let extent = (hi[1] - lo[1]).max(hi[0] - lo[0]).max(hi[2] - lo[2]);
    let dist = 2.0 * extent;
    let eye = [center[0], center[1], center[2] + dist];
    // fit the extent plus a margin into the smaller image side
    let f = width.min(height) as f64 * dist / (1.2 * extent);
    Camera::look_at(eye, center, [0.0, 1.0, 0.0], f, f, width, height)
}

/// Renders `model` under `pose` through `cam`.
pub fn render_avatar(model: &AvatarModel, pose: &Pose, cam: &Camera) -> Result<RenderOutput> {
    let posed = model.body.pose(pose)?;
    let splats = deform_avatar(model, &posed, None)?;
    let mut out = render(&splats, cam)?;
    out.strip_trace();
    Ok(out)
}

/// Writes a synthetic capture of `body` into `out`: the dataset files, the
/// body bundle under `out/body`, and returns the manifest.
pub fn make_synthetic_dataset(body: Arc<Body>, cfg: &SyntheticConfig, out: &Path) -> Result<DatasetManifest> {
    if cfg.train_views == 0 || cfg.width == 0 || cfg.height == 0 {
        return Err(Error::InvalidInput("synthetic capture needs at least one view and a non-empty image".into()));
    }
    std::fs::create_dir_all(out.join("frames"))?;
    std::fs::create_dir_all(out.join("masks"))?;
    save_body(&body.bundle, &out.join("body"))?;
    // render from the stored (32-bit) body so training sees the same geometry
    let body = Arc::new(Body::new(load_body(&out.join("body"))?)?);
    let model = ground_truth_avatar(body.clone(), cfg)?;
    let cam = synthetic_camera(&body, cfg.width, cfg.height)?;
    let phases: Vec<f64> = (0..cfg.train_views)
        .map(|k| k as f64 / cfg.train_views as f64)
        .chain((0..cfg.test_views).map(|k| (k as f64 + 0.5) / cfg.test_views as f64 + 0.5 / cfg.train_views as f64))
        .collect();
    let mut frames = Vec::with_capacity(phases.len());
    for (id, &t) in phases.iter().enumerate() {
        let pose = synthetic_pose(&body, t, cfg.arm_swing);
        let r = render_avatar(&model, &pose, &cam)?;
        let rec = FrameRecord::from_pose(id, &pose)?;
        RgbImage::new(cfg.width, cfg.height, r.color)?.save_png(&out.join(&rec.image))?;
        let mask: Vec<f64> = r.alpha.iter().map(|&a| if a >= 0.5 { 1.0 } else { 0.0 }).collect();
        save_mask_png(&out.join(&rec.mask), cfg.width, cfg.height, &mask)?;
        frames.push(rec);
    }
    let manifest = DatasetManifest {
        dir: out.to_path_buf(),
        camera: cam,
        frames,
        split: Split {
            train: (0..cfg.train_views).collect(),
            test: (cfg.train_views..cfg.train_views + cfg.test_views).collect(),
        },
    };
    manifest.save()?;
    Ok(manifest)
}
