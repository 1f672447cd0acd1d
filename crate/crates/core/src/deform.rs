//! Canonical → posed transformation of splats.
//!
//! The posed centre is the barycentric point on the posed triangle lifted by
//! `d` along the interpolated posed normal. The rigid part of the rotation is
//! the barycentric blend of the triangle's vertex quaternions, and both scale
//! axes are multiplied by the posed/canonical area ratio. An optional
//! compensation quaternion is applied last, on the left.

use rayon::prelude::*;

use crate::body::PosedMesh;
use crate::error::{Error, Result};
use crate::math::quat::{quat_mul, quat_normalize};
use crate::math::tape::{GradTape, Real, Var};
use crate::math::vec::{self, Vec3};
use crate::math::{tri, Quat, ShCoeffs};
use crate::splat::{AvatarModel, SplatEmbedding};

/// Inputs to [`deform`] for one splat. Everything that is a `S` can carry
/// derivatives; the canonical area is a constant of the body.
#[derive(Clone, Copy, Debug)]
pub struct DeformInput<S> {
    pub u: S,
    pub v: S,
    pub d: S,
    pub scale: [S; 2],
    pub rot: [S; 4],
    pub comp: [S; 4],
    pub verts: [[S; 3]; 3],
    pub normals: [[S; 3]; 3],
    /// Vertex quaternions, already flipped into a common hemisphere.
    pub vquats: [[S; 4]; 3],
    pub cano_area: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct DeformOutput<S> {
    pub center: [S; 3],
    pub rot: [S; 4],
    /// Rotation without the compensation term.
    pub lbs_rot: [S; 4],
    pub scale: [S; 2],
}

pub fn deform<S: Real>(x: &DeformInput<S>) -> DeformOutput<S> {
    let p = tri::bary_point(x.verts, x.u, x.v);
    let n = tri::bary_normal(x.normals, x.u, x.v);
    let center = vec::add(p, vec::scale(n, x.d));
    let w = S::one() - x.u - x.v;
    let blend: [S; 4] = std::array::from_fn(|i| x.vquats[0][i] * x.u + x.vquats[1][i] * x.v + x.vquats[2][i] * w);
    let dq = quat_normalize(blend);
    let lbs_rot = quat_mul(dq, quat_normalize(x.rot));
    let rot = quat_mul(x.comp, lbs_rot);
    let ratio = tri::area(x.verts) / x.cano_area;
    DeformOutput {
        center,
        rot,
        lbs_rot,
        scale: [x.scale[0] * ratio, x.scale[1] * ratio],
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosedSplat {
    pub center: Vec3,
    pub rot: Quat,
    pub lbs_rot: Quat,
    pub scale: [f64; 2],
    pub opacity: f64,
    pub sh: ShCoeffs,
    pub source: usize,
}

/// Gathers the posed-triangle data of `e` into a [`DeformInput`] of constants.
pub fn deform_input(e: &SplatEmbedding, posed: &PosedMesh, faces: &[[u32; 3]], comp: Quat) -> Result<DeformInput<f64>> {
    let f = e.face as usize;
    let face = faces
        .get(f)
        .ok_or_else(|| Error::InvalidInput(format!("face {f} out of range")))?;
    let cano_area = posed.triangle_areas_canonical[f];
    if cano_area < 1e-12 {
        return Err(Error::Degenerate(format!("canonical face {f} has area {cano_area}")));
    }
    let q0 = posed.vertex_quats[face[0] as usize];
    Ok(DeformInput {
        u: e.u,
        v: e.v,
        d: e.d,
        scale: e.scale,
        rot: e.rot.to_array(),
        comp: comp.to_array(),
        verts: face.map(|i| posed.vertices[i as usize]),
        normals: face.map(|i| posed.vertex_normals[i as usize]),
        vquats: face.map(|i| posed.vertex_quats[i as usize].aligned_to(q0).to_array()),
        cano_area,
    })
}

pub fn deform_splat(
    e: &SplatEmbedding,
    source: usize,
    posed: &PosedMesh,
    faces: &[[u32; 3]],
    comp: Option<Quat>,
) -> Result<PosedSplat> {
    let input = deform_input(e, posed, faces, comp.unwrap_or(Quat::IDENTITY))?;
    let out = deform(&input);
    let center = out.center;
    if !center.iter().all(|c| c.is_finite()) {
        return Err(Error::Degenerate(format!("splat {source}: interpolated normal vanishes")));
    }
    Ok(PosedSplat {
        center,
        rot: Quat::from_array(out.rot).normalized(),
        lbs_rot: Quat::from_array(out.lbs_rot).normalized(),
        scale: out.scale,
        opacity: e.opacity,
        sh: e.sh,
        source,
    })
}

pub fn deform_avatar(model: &AvatarModel, posed: &PosedMesh, comp: Option<&[Quat]>) -> Result<Vec<PosedSplat>> {
    if let Some(c) = comp {
        if c.len() != model.len() {
            return Err(Error::Dimension(format!(
                "{} compensation quaternions for {} splats",
                c.len(),
                model.len()
            )));
        }
    }
    let faces = &model.body.bundle.faces;
    model
        .splats
        .par_iter()
        .enumerate()
        .map(|(i, e)| deform_splat(e, i, posed, faces, comp.map(|c| c[i])))
        .collect()
}

/// Gradients arriving at a posed splat. `rot` and `lbs_rot` refer to the
/// normalised quaternions stored in [`PosedSplat`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PosedGrad {
    pub center: Vec3,
    pub rot: [f64; 4],
    pub lbs_rot: [f64; 4],
    pub scale: [f64; 2],
}

/// Gradients pulled back to the embedding and the compensation quaternion.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EmbeddingGrad {
    pub u: f64,
    pub v: f64,
    pub d: f64,
    pub scale: [f64; 2],
    pub rot: [f64; 4],
    pub comp: [f64; 4],
}

/// Reverse pass of [`deform`] for one splat; mesh quantities are constants.
pub fn deform_vjp(tape: &GradTape, x: &DeformInput<f64>, g: &PosedGrad) -> EmbeddingGrad {
    tape.clear();
    let [u, v, d] = tape.vars([x.u, x.v, x.d]);
    let scale = tape.vars(x.scale);
    let rot = tape.vars(x.rot);
    let comp = tape.vars(x.comp);
    let input = DeformInput {
        u,
        v,
        d,
        scale,
        rot,
        comp,
        verts: x.verts.map(vec::lift),
        normals: x.normals.map(vec::lift),
        vquats: x.vquats.map(|q| q.map(Var::cst)),
        cano_area: x.cano_area,
    };
    let out = deform(&input);
    let r = quat_normalize(out.rot);
    let l = quat_normalize(out.lbs_rot);
    let mut seeds = Vec::with_capacity(13);
    for k in 0..3 {
        seeds.push((out.center[k], g.center[k]));
    }
    for k in 0..4 {
        seeds.push((r[k], g.rot[k]));
        seeds.push((l[k], g.lbs_rot[k]));
    }
    seeds.push((out.scale[0], g.scale[0]));
    seeds.push((out.scale[1], g.scale[1]));
    let adj = tape.backward(&seeds);
    EmbeddingGrad {
        u: adj.of(u),
        v: adj.of(v),
        d: adj.of(d),
        scale: adj.of_all(&scale),
        rot: adj.of_all(&rot),
        comp: adj.of_all(&comp),
    }
}
