//! Per-splat quantities the rasterizer consumes, and the ray–surfel intersection.

use super::Camera;
use crate::deform::PosedSplat;
use crate::math::quat::quat_to_mat;
use crate::math::sh::{sh_eval, SH_COEFFS};
use crate::math::tape::Real;
use crate::math::vec::{self, Vec3};

/// A splat expressed in the camera frame.
///
/// `a` and `b` are the unit tangent axes and `n` the unit normal, so a point
/// with local coordinates `(u, v)` sits at `pc + u·su·a + v·sv·b`. The same
/// struct carries gradients in the backward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SplatParams<S> {
    pub pc: [S; 3],
    pub a: [S; 3],
    pub b: [S; 3],
    pub n: [S; 3],
    pub su: S,
    pub sv: S,
    pub color: [S; 3],
    pub opacity: S,
}

impl SplatParams<f64> {
    pub fn zero() -> Self {
        SplatParams {
            pc: [0.0; 3],
            a: [0.0; 3],
            b: [0.0; 3],
            n: [0.0; 3],
            su: 0.0,
            sv: 0.0,
            color: [0.0; 3],
            opacity: 0.0,
        }
    }

    pub fn add_assign(&mut self, o: &Self) {
        for i in 0..3 {
            self.pc[i] += o.pc[i];
            self.a[i] += o.a[i];
            self.b[i] += o.b[i];
            self.n[i] += o.n[i];
            self.color[i] += o.color[i];
        }
        self.su += o.su;
        self.sv += o.sv;
        self.opacity += o.opacity;
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|x| x.is_finite())
    }

    pub fn as_array(&self) -> [f64; 19] {
        let mut out = [0.0; 19];
        out[..3].copy_from_slice(&self.pc);
        out[3..6].copy_from_slice(&self.a);
        out[6..9].copy_from_slice(&self.b);
        out[9..12].copy_from_slice(&self.n);
        out[12] = self.su;
        out[13] = self.sv;
        out[14..17].copy_from_slice(&self.color);
        out[17] = self.opacity;
        out
    }
}

impl<S: Copy> SplatParams<S> {
    /// Outputs paired with their gradients, for seeding a reverse sweep.
    pub fn zip_grad(&self, g: &SplatParams<f64>) -> Vec<(S, f64)> {
        let mut out = Vec::with_capacity(18);
        for i in 0..3 {
            out.push((self.pc[i], g.pc[i]));
            out.push((self.a[i], g.a[i]));
            out.push((self.b[i], g.b[i]));
            out.push((self.n[i], g.n[i]));
            out.push((self.color[i], g.color[i]));
        }
        out.push((self.su, g.su));
        out.push((self.sv, g.sv));
        out.push((self.opacity, g.opacity));
        out
    }
}

/// Camera-frame set-up of one splat: rotation columns become the tangent
/// axes and normal, and the SH colour is evaluated toward the splat from the
/// camera centre.
pub fn splat_setup<S: Real>(
    center: [S; 3],
    rot: [S; 4],
    scale: [S; 2],
    sh: &[[S; 3]; SH_COEFFS],
    opacity: S,
    cam: &Camera,
) -> SplatParams<S> {
    let r = quat_to_mat(rot);
    let col = |j: usize| [r[0][j], r[1][j], r[2][j]];
    let pc = vec::add(vec::mat_vec_s(&cam.rot, center), vec::lift(cam.trans));
    let view = vec::normalize(vec::sub(center, vec::lift(cam.center())));
    SplatParams {
        pc,
        a: vec::mat_vec_s(&cam.rot, col(0)),
        b: vec::mat_vec_s(&cam.rot, col(1)),
        n: vec::mat_vec_s(&cam.rot, col(2)),
        su: scale[0],
        sv: scale[1],
        color: sh_eval(sh, view),
        opacity,
    }
}

pub fn setup_posed(ps: &PosedSplat, cam: &Camera) -> SplatParams<f64> {
    splat_setup(
        ps.center,
        ps.rot.to_array(),
        ps.scale,
        &ps.sh.coeffs,
        ps.opacity,
        cam,
    )
}

/// World-space homogeneous frame of a surfel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplatGeom {
    /// `[R·S | p; 0 0 0 1]` with `S = diag(su, sv, 0)`.
    pub h: [[f64; 4]; 4],
    pub normal: Vec3,
    /// Camera depth of the centre, filled in when built for a camera.
    pub depth: f64,
}

impl SplatGeom {
    /// World point at local coordinates `(u, v)`.
    pub fn point(&self, u: f64, v: f64) -> Vec3 {
        let x = [u, v, 1.0, 1.0];
        std::array::from_fn(|i| (0..4).map(|j| self.h[i][j] * x[j]).sum())
    }
}

pub fn build_geom(ps: &PosedSplat, cam: Option<&Camera>) -> SplatGeom {
    let r = ps.rot.to_mat();
    let mut h = [[0.0; 4]; 4];
    for i in 0..3 {
        h[i][0] = r[i][0] * ps.scale[0];
        h[i][1] = r[i][1] * ps.scale[1];
        h[i][2] = 0.0;
        h[i][3] = ps.center[i];
    }
    h[3][3] = 1.0;
    let tu = [r[0][0], r[1][0], r[2][0]];
    let tv = [r[0][1], r[1][1], r[2][1]];
    SplatGeom {
        h,
        normal: vec::normalize(vec::cross(tu, tv)),
        depth: cam.map_or(0.0, |c| c.to_camera(ps.center)[2]),
    }
}

/// Ray hit on a surfel plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub u: f64,
    pub v: f64,
    /// Ray parameter; equals the camera-frame depth because rays have unit z.
    pub t: f64,
    pub denom: f64,
    /// Hit point minus the splat centre, camera frame.
    pub r: Vec3,
}

pub const PARALLEL_EPS: f64 = 1e-8;

/// Intersects camera ray `d` with the plane of `p`.
pub fn intersect_params(p: &SplatParams<f64>, d: Vec3) -> Option<Hit> {
    let denom = vec::dot(d, p.n);
    if denom.abs() < PARALLEL_EPS {
        return None;
    }
    let t = vec::dot(p.pc, p.n) / denom;
    if t <= 0.0 {
        return None;
    }
    let r = vec::sub(vec::scale(d, t), p.pc);
    Some(Hit {
        u: vec::dot(r, p.a) / p.su,
        v: vec::dot(r, p.b) / p.sv,
        t,
        denom,
        r,
    })
}

/// `(u, v, depth)` where the ray through pixel centre `(px, py)` meets the surfel.
pub fn intersect(geom: &SplatGeom, cam: &Camera, px: usize, py: usize) -> Option<(f64, f64, f64)> {
    let col = |j: usize| [geom.h[0][j], geom.h[1][j], geom.h[2][j]];
    let (su, sv) = (vec::norm(col(0)), vec::norm(col(1)));
    if su <= 0.0 || sv <= 0.0 {
        return None;
    }
    let p = SplatParams {
        pc: cam.to_camera(col(3)),
        a: cam.dir_to_camera(vec::scale(col(0), 1.0 / su)),
        b: cam.dir_to_camera(vec::scale(col(1), 1.0 / sv)),
        n: cam.dir_to_camera(geom.normal),
        su,
        sv,
        color: [0.0; 3],
        opacity: 0.0,
    };
    let d = cam.ray(px as f64 + 0.5, py as f64 + 0.5);
    intersect_params(&p, d).map(|h| (h.u, h.v, h.t))
}
