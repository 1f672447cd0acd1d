//! Two-stage optimisation of an avatar against posed captures.
//!
//! Stage 1 fits the splat parameters with skinning alone; stage 2 keeps
//! fitting them and trains the rotation compensation network jointly.
//! Splat parameters are optimised directly with Adam and projected back to
//! their valid ranges after every step (opacity clamped, scales kept
//! positive, rotations renormalised, barycentric coordinates walked onto
//! the surface). All parameters are then rounded to `f32`, the precision
//! of the checkpoint files, so a resumed run continues bit-identically.

mod adam;
mod checkpoint;
mod config;
mod density;
mod run;

pub use adam::{Adam, AdamHyper};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use config::{LrScale, TrainConfig};
pub use density::{density_control, PruneReport};
pub use run::{dataset_beta, frame_for_iteration, run_training, LogRecord, RunOptions};

use std::sync::Arc;

use rayon::prelude::*;

use crate::body::{joint_tri_set, Body, Pose};
use crate::dataset::FrameSample;
use crate::deform::{deform_input, deform_splat, deform_vjp, DeformInput, PosedGrad, PosedSplat};
use crate::error::{Error, Result};
use crate::losses::{
    joint_loss, l1_mse, l1_mse_grad, normal_loss, rcn_loss, scaling_loss, total_loss, LossReport, PerceptualLoss,
};
use crate::math::vec::Vec3;
use crate::math::{GradTape, Quat, ShCoeffs};
use crate::raster::{render, render_backward, ImageGrads, RenderOutput, RgbImage};
use crate::rcn::{rcn_backward, rcn_forward, RcnCache, RcnInput, RcnParams, THETA_DIM};
use crate::splat::{init_splats, sample_triangles, triangle_walk, AvatarModel, SplatEmbedding, WalkOutcome};

/// Optimised values per splat: u, v, d, s0, s1, q (4), opacity, sh (27).
pub const SPLAT_PARAMS: usize = 37;
/// Smallest scale a splat is allowed to shrink to.
pub const MIN_SCALE: f64 = 1e-6;

const U: usize = 0;
const V: usize = 1;
const SH0: usize = 10;

fn pack(e: &SplatEmbedding) -> [f64; SPLAT_PARAMS] {
    let mut p = [0.0; SPLAT_PARAMS];
    let q = e.rot.to_array();
    p[..10].copy_from_slice(&[e.u, e.v, e.d, e.scale[0], e.scale[1], q[0], q[1], q[2], q[3], e.opacity]);
    p[SH0..].copy_from_slice(&e.sh.flat());
    p
}

fn unpack(p: &[f64], e: &mut SplatEmbedding) {
    e.u = p[0];
    e.v = p[1];
    e.d = p[2];
    e.scale = [p[3], p[4]];
    e.rot = Quat::new(p[5], p[6], p[7], p[8]);
    e.opacity = p[9];
    e.sh = ShCoeffs::from_flat(&p[SH0..]);
}

fn lr_multipliers(s: &LrScale) -> [f64; SPLAT_PARAMS] {
    let mut m = [s.sh; SPLAT_PARAMS];
    m[..10].copy_from_slice(&[s.bary, s.bary, s.offset, s.scale, s.scale, s.rot, s.rot, s.rot, s.rot, s.opacity]);
    m
}

fn r32(x: f64) -> f64 {
    x as f32 as f64
}

/// Rounds barycentric coordinates to `f32` without leaving the simplex.
fn round_bary(u: f64, v: f64) -> (f64, f64) {
    let u = (u as f32).max(0.0);
    let mut v = (v as f32).max(0.0);
    while u as f64 + v as f64 > 1.0 && v > 0.0 {
        v = f32::from_bits(v.to_bits() - 1);
    }
    (u as f64, v as f64)
}

/// Clamps a splat into its valid domain and rounds it to storage precision.
fn project(e: &mut SplatEmbedding) {
    e.opacity = r32(e.opacity.clamp(0.0, 1.0));
    e.scale = e.scale.map(|s| r32(s.max(MIN_SCALE)));
    let q = if e.rot.norm() > 1e-12 && e.rot.is_finite() {
        e.rot.normalized()
    } else {
        Quat::IDENTITY
    };
    e.rot = Quat::from_array(q.to_array().map(r32));
    e.d = r32(e.d);
    e.sh = ShCoeffs::from_flat(&e.sh.flat().map(r32));
}

/// Rounds every optimised value of `model` to `f32`.
pub fn round_model(model: &mut AvatarModel) {
    for e in &mut model.splats {
        let (u, v) = round_bary(e.u, e.v);
        e.u = u;
        e.v = v;
        project(e);
    }
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: TrainConfig,
    pub model: AvatarModel,
    pub rcn: RcnParams,
    /// Completed iterations.
    pub iteration: u64,
    pub splat_adam: Adam,
    pub rcn_adam: Adam,
    /// Splat count after each pruning pass, starting with the initial count.
    pub count_history: Vec<(u64, usize)>,
    pub stabilized: bool,
    canonical: Vec<Vec3>,
}

impl TrainState {
    /// Fresh state: splats sampled and initialised on `body`, network at its
    /// identity initialisation.
    pub fn new(config: TrainConfig, body: Arc<Body>, beta: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let js = joint_tri_set(&body.bundle, config.joint_radius)?;
        let faces = sample_triangles(&body.bundle, config.splats, &js, config.seed)?;
        let mut model = init_splats(body.clone(), &faces, js, config.joint_radius, beta, None, config.seed.wrapping_add(1))?;
        round_model(&mut model);
        let rcn = RcnParams::new(body.bundle.face_count(), config.seed.wrapping_add(2));
        Self::from_parts(config, model, rcn, 0)
    }

    /// State around existing parameters with fresh optimiser moments.
    pub fn from_parts(config: TrainConfig, model: AvatarModel, rcn: RcnParams, iteration: u64) -> Result<Self> {
        config.validate()?;
        model.validate()?;
        if rcn.face_count() != model.body.bundle.face_count() {
            return Err(Error::Dimension("network embedding table does not match the body".into()));
        }
        let canonical = model.canonical_mesh()?.vertices;
        let n = model.len();
        Ok(TrainState {
            splat_adam: Adam::new(n * SPLAT_PARAMS),
            rcn_adam: Adam::new(rcn.value_count()),
            count_history: vec![(iteration, n)],
            stabilized: false,
            config,
            model,
            rcn,
            iteration,
            canonical,
        })
    }

    /// 1 while fitting with skinning only, 2 once the network trains.
    pub fn stage(&self) -> u8 {
        if self.iteration < self.config.stage1_iters {
            1
        } else {
            2
        }
    }

    pub fn finished(&self) -> bool {
        self.iteration >= self.config.total_iters()
    }

    fn uses_rcn(&self) -> bool {
        self.stage() == 2
    }

    fn compensation(&self, pose: &Pose) -> Result<Option<(Vec<Quat>, RcnCache)>> {
        if !self.uses_rcn() {
            return Ok(None);
        }
        let inputs: Vec<RcnInput> = self.model.splats.iter().map(RcnInput::from).collect();
        Ok(Some(rcn_forward(&self.rcn, &inputs, &pose.theta_flat(THETA_DIM))?))
    }

    /// Posed splats as the current stage renders them.
    pub fn posed_splats(&self, pose: &Pose) -> Result<Vec<PosedSplat>> {
        let posed = self.model.body.pose(pose)?;
        let comp = self.compensation(pose)?.map(|c| c.0);
        crate::deform::deform_avatar(&self.model, &posed, comp.as_deref())
    }

    pub fn render(&self, pose: &Pose, cam: &crate::raster::Camera) -> Result<RenderOutput> {
        let mut out = render(&self.posed_splats(pose)?, cam)?;
        out.strip_trace();
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    /// Iteration index of this step (before it was counted).
    pub iteration: u64,
    pub stage: u8,
    pub loss: LossReport,
    /// Splats that moved to a neighbouring triangle.
    pub walks: usize,
}

/// Loss value and gradients for one frame, without changing `state`.
pub struct StepGradients {
    pub loss: LossReport,
    /// `SPLAT_PARAMS` values per splat.
    pub splat: Vec<f64>,
    /// Present in stage 2.
    pub rcn: Option<RcnParams>,
    pub render: RenderOutput,
}

/// Forward and backward pass for one frame.
pub fn compute_gradients(
    state: &TrainState,
    frame: &FrameSample,
    perceptual: Option<&dyn PerceptualLoss>,
) -> Result<StepGradients> {
    let w = &state.config.losses;
    let model = &state.model;
    let cam = &frame.camera;
    let faces = &model.body.bundle.faces;
    let n = model.len();
    let posed = model.body.pose(&frame.pose)?;
    let comp = state.compensation(&frame.pose)?;
    let comp_q = |i: usize| comp.as_ref().map_or(Quat::IDENTITY, |c| c.0[i]);
    let inputs: Vec<DeformInput<f64>> = (0..n)
        .into_par_iter()
        .map(|i| deform_input(&model.splats[i], &posed, faces, comp_q(i)))
        .collect::<Result<_>>()?;
    let splats: Vec<PosedSplat> = (0..n)
        .into_par_iter()
        .map(|i| deform_splat(&model.splats[i], i, &posed, faces, Some(comp_q(i))))
        .collect::<Result<_>>()?;
    let out = render(&splats, cam)?;
    let np = out.pixel_count();
    let target = frame.composited();
    let everywhere = vec![true; np];

    let mut loss = LossReport::default();
    (loss.l1, loss.mse) = l1_mse(&out.color, &target.data, &everywhere)?;
    let mut up = ImageGrads::zeros(np);
    up.color = l1_mse_grad(&out.color, &target.data, &everywhere, w.l1, w.mse)?;
    if let Some(p) = perceptual.filter(|_| w.lpips > 0.0) {
        let pred = RgbImage::new(out.width, out.height, out.color.clone())?;
        let (l, g) = p.loss_and_grad(&pred, &target)?;
        if g.len() != up.color.len() {
            return Err(Error::Dimension("perceptual gradient size".into()));
        }
        loss.lpips = l;
        up.color.iter_mut().zip(g).for_each(|(a, b)| *a += w.lpips * b);
    }
    if w.normal > 0.0 {
        let (l, g) = normal_loss(&out, cam)?;
        loss.normal = l;
        for (dst, src) in [(&mut up.alpha, g.alpha), (&mut up.depth, g.depth), (&mut up.normal, g.normal)] {
            dst.iter_mut().zip(src).for_each(|(a, b)| *a += w.normal * b);
        }
    }
    let rg = render_backward(&splats, cam, &out, &up)?;

    let mut pgrads: Vec<PosedGrad> = rg
        .iter()
        .map(|g| PosedGrad {
            center: g.center,
            rot: g.rot,
            lbs_rot: [0.0; 4],
            scale: g.scale,
        })
        .collect();
    if comp.is_some() {
        let q_lbs: Vec<Quat> = splats.iter().map(|s| s.lbs_rot).collect();
        let q_rcn: Vec<Quat> = splats.iter().map(|s| s.rot).collect();
        let (l, g_lbs, g_rcn) = rcn_loss(&q_lbs, &q_rcn)?;
        loss.rcn = l;
        for (p, (a, b)) in pgrads.iter_mut().zip(g_lbs.iter().zip(&g_rcn)) {
            for k in 0..4 {
                p.lbs_rot[k] += w.rcn * a[k];
                p.rot[k] += w.rcn * b[k];
            }
        }
    }
    let eg: Vec<_> = inputs
        .par_iter()
        .zip(pgrads.par_iter())
        .map_init(GradTape::new, |tape, (x, g)| deform_vjp(tape, x, g))
        .collect();

    let mut grad = vec![0.0; n * SPLAT_PARAMS];
    for (i, row) in grad.chunks_exact_mut(SPLAT_PARAMS).enumerate() {
        let e = &eg[i];
        row[..9].copy_from_slice(&[e.u, e.v, e.d, e.scale[0], e.scale[1], e.rot[0], e.rot[1], e.rot[2], e.rot[3]]);
        row[9] = rg[i].opacity;
        for (b, c) in rg[i].sh.iter().enumerate() {
            row[SH0 + 3 * b..SH0 + 3 * b + 3].copy_from_slice(c);
        }
    }

    let scales: Vec<[f64; 2]> = model.splats.iter().map(|s| s.scale).collect();
    let face_ids: Vec<u32> = model.splats.iter().map(|s| s.face).collect();
    let (ls, gs) = scaling_loss(&scales, w.eps_s, w.eps_r);
    let (lj, gj) = joint_loss(&face_ids, &scales, &model.joint_set, w.tau)?;
    loss.scaling = ls;
    loss.joint = lj;
    for (i, row) in grad.chunks_exact_mut(SPLAT_PARAMS).enumerate() {
        for k in 0..2 {
            row[3 + k] += w.scaling * gs[i][k] + w.joint * gj[i][k];
        }
    }

    let rcn_grad = match comp {
        Some((_, cache)) => {
            let upstream: Vec<[f64; 4]> = eg.iter().map(|e| e.comp).collect();
            let g = rcn_backward(&state.rcn, &cache, &upstream)?;
            for (row, gi) in grad.chunks_exact_mut(SPLAT_PARAMS).zip(&g.inputs) {
                for k in 0..3 {
                    row[k] += gi[k];
                }
                for k in 0..4 {
                    row[5 + k] += gi[3 + k];
                }
            }
            Some(g.params)
        }
        None => None,
    };

    let loss = total_loss(loss, w);
    let rcn_finite = rcn_grad
        .as_ref()
        .is_none_or(|g| g.tensors().iter().all(|t| t.iter().all(|x| x.is_finite())));
    if !loss.total.is_finite() || !grad.iter().all(|x| x.is_finite()) || !rcn_finite {
        return Err(Error::NonFinite(format!("loss or gradient at iteration {} (frame {})", state.iteration, frame.id)));
    }
    Ok(StepGradients {
        loss,
        splat: grad,
        rcn: rcn_grad,
        render: out,
    })
}

/// One optimisation step on `frame`, followed by density control when due.
pub fn train_step(
    state: &mut TrainState,
    frame: &FrameSample,
    perceptual: Option<&dyn PerceptualLoss>,
) -> Result<StepReport> {
    let stage = state.stage();
    let g = compute_gradients(state, frame, perceptual)?;
    let cfg = &state.config;
    let hyper = AdamHyper {
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.adam_eps,
    };

    let mut params: Vec<f64> = state.model.splats.iter().flat_map(pack).collect();
    let mult = lr_multipliers(&cfg.lr_scale);
    let lr = cfg.learning_rate;
    state
        .splat_adam
        .update(&mut params, &g.splat, hyper, |i| lr * mult[i % SPLAT_PARAMS]);

    let body = state.model.body.clone();
    let mut walks = 0;
    for (i, e) in state.model.splats.iter_mut().enumerate() {
        let p = &params[i * SPLAT_PARAMS..(i + 1) * SPLAT_PARAMS];
        unpack(p, e);
        let (walked, outcome) = triangle_walk(e, &body.bundle, &body.topology, &state.canonical, e.u, e.v);
        *e = walked;
        if outcome == WalkOutcome::Crossed {
            // moments were measured in the old face's coordinates
            walks += 1;
            for k in [U, V] {
                state.splat_adam.m[i * SPLAT_PARAMS + k] = 0.0;
                state.splat_adam.v[i * SPLAT_PARAMS + k] = 0.0;
            }
        }
        let (u, v) = round_bary(e.u, e.v);
        e.u = u;
        e.v = v;
        project(e);
    }

    if let Some(rg) = &g.rcn {
        let mut flat: Vec<f64> = state.rcn.tensors().iter().flat_map(|t| t.iter().copied()).collect();
        let grads: Vec<f64> = rg.tensors().iter().flat_map(|t| t.iter().copied()).collect();
        let lr = cfg.learning_rate * cfg.lr_scale.rcn;
        state.rcn_adam.update(&mut flat, &grads, hyper, |_| lr);
        let mut it = flat.into_iter();
        for t in state.rcn.tensors_mut() {
            for x in t.iter_mut() {
                *x = r32(it.next().expect("same layout"));
            }
        }
    }

    let report = StepReport {
        iteration: state.iteration,
        stage,
        loss: g.loss,
        walks,
    };
    state.iteration += 1;
    let c = &state.config;
    if stage == 1 && c.prune_interval > 0 && state.iteration % c.prune_interval == 0 {
        density_control(state);
    }
    Ok(report)
}
