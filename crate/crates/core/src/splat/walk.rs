use super::SplatEmbedding;
use crate::body::{BodyBundle, MeshTopology};
use crate::math::tri;
use crate::math::vec::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WalkOutcome {
    /// Coordinates were already inside the face.
    Inside,
    /// The splat moved to the neighbouring face.
    Crossed,
    /// The crossed edge is open; coordinates were clamped on the same face.
    Clamped,
}

/// Applies updated barycentric coordinates to `e`, moving it across at most
/// one edge.
///
/// The crossed edge is the one opposite the most negative of
/// `(u, v, 1 - u - v)`. The surface point implied by the updated coordinates
/// on the old face is projected onto the neighbour and clamped to it, so the
/// result always lies in the closed simplex. All other parameters are kept.
pub fn triangle_walk(
    e: &SplatEmbedding,
    bundle: &BodyBundle,
    topo: &MeshTopology,
    canonical: &[Vec3],
    u: f64,
    v: f64,
) -> (SplatEmbedding, WalkOutcome) {
    let mut out = *e;
    let w = 1.0 - u - v;
    if u >= 0.0 && v >= 0.0 && w >= 0.0 {
        out.u = u;
        out.v = v;
        return (out, WalkOutcome::Inside);
    }
    let coords = [u, v, w];
    let corner = (0..3)
        .min_by(|&a, &b| coords[a].total_cmp(&coords[b]))
        .unwrap_or(0);
    let old = bundle.face_vertices(canonical, e.face as usize);
    let world = tri::bary_point(old, u, v);
    match topo.face_neighbors[e.face as usize][corner] {
        Some(next) => {
            let t = bundle.face_vertices(canonical, next as usize);
            let (nu, nv) = tri::closest_point_bary(t, world);
            out.face = next;
            out.u = nu;
            out.v = nv;
            (out, WalkOutcome::Crossed)
        }
        None => {
            let (nu, nv) = tri::closest_point_bary(old, world);
            out.u = nu;
            out.v = nv;
            (out, WalkOutcome::Clamped)
        }
    }
}
