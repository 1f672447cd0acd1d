//! Canonical avatar: 2D Gaussian surfels embedded on body triangles.
//!
//! A splat is anchored by a face index and barycentric coordinates, lifted
//! off the surface along the interpolated vertex normal by `d`. Its rotation
//! and tangent-axis scales live in the canonical frame.

mod io;
mod walk;

pub use io::{load_avatar, save_avatar, AVATAR_FORMAT_VERSION, AVATAR_FLOATS_PER_SPLAT};
pub use walk::{triangle_walk, WalkOutcome};

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::body::{Body, BodyBundle, CanonicalMesh, JointTriSet};
use crate::error::{Error, Result};
use crate::math::vec::{self, Vec3};
use crate::math::{tri, Quat, ShCoeffs};

pub const INIT_OPACITY: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplatEmbedding {
    pub face: u32,
    pub u: f64,
    pub v: f64,
    /// Offset along the interpolated normal, scene units.
    pub d: f64,
    /// Extents along the two tangent axes, scene units.
    pub scale: [f64; 2],
    pub rot: Quat,
    pub opacity: f64,
    pub sh: ShCoeffs,
}

impl SplatEmbedding {
    pub fn validate(&self, face_count: usize) -> Result<()> {
        if self.face as usize >= face_count {
            return Err(Error::InvalidInput(format!("face {} out of range", self.face)));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(Error::InvalidInput(format!("opacity {} outside [0, 1]", self.opacity)));
        }
        if !(self.scale[0] > 0.0 && self.scale[1] > 0.0) {
            return Err(Error::InvalidInput(format!("non-positive scale {:?}", self.scale)));
        }
        if (self.rot.norm() - 1.0).abs() > 1e-5 {
            return Err(Error::InvalidInput("rotation is not a unit quaternion".into()));
        }
        let finite = [self.u, self.v, self.d].iter().all(|x| x.is_finite())
            && self.sh.flat().iter().all(|x| x.is_finite());
        if !finite {
            return Err(Error::NonFinite("splat parameters".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AvatarModel {
    pub body: Arc<Body>,
    pub splats: Vec<SplatEmbedding>,
    pub joint_set: JointTriSet,
    pub joint_radius: f64,
    /// Shape coefficients of the canonical mesh.
    pub beta: Vec<f64>,
}

impl AvatarModel {
    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    pub fn canonical_mesh(&self) -> Result<CanonicalMesh> {
        self.body.canonical(&self.beta)
    }

    pub fn validate(&self) -> Result<()> {
        if self.splats.is_empty() {
            return Err(Error::InvalidInput("avatar has no splats".into()));
        }
        let nf = self.body.bundle.face_count();
        for (i, s) in self.splats.iter().enumerate() {
            s.validate(nf).map_err(|e| Error::InvalidInput(format!("splat {i}: {e}")))?;
        }
        Ok(())
    }

    /// Canonical-space centres of all splats.
    pub fn canonical_centers(&self) -> Result<Vec<Vec3>> {
        let mesh = self.canonical_mesh()?;
        self.splats
            .iter()
            .map(|s| splat_center_canonical(s, &self.body.bundle, &mesh))
            .collect()
    }
}

/// Every joint-set face once, then uniform draws (with replacement) from all faces.
pub fn sample_triangles(bundle: &BodyBundle, n: usize, joint_set: &JointTriSet, seed: u64) -> Result<Vec<u32>> {
    if n < joint_set.len() {
        return Err(Error::InvalidInput(format!(
            "{n} splats requested but the joint set has {} faces",
            joint_set.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nf = bundle.face_count() as u32;
    let mut out = joint_set.members().to_vec();
    out.extend((joint_set.len()..n).map(|_| rng.gen_range(0..nf)));
    Ok(out)
}

/// Uniform point on the 2-simplex.
pub fn sample_simplex(rng: &mut impl Rng) -> (f64, f64) {
    let (a, b): (f64, f64) = (rng.gen(), rng.gen());
    if a + b > 1.0 {
        (1.0 - a, 1.0 - b)
    } else {
        (a, b)
    }
}

/// Canonical centre: surface point plus `d` along the interpolated normal.
pub fn splat_center_canonical(e: &SplatEmbedding, bundle: &BodyBundle, mesh: &CanonicalMesh) -> Result<Vec3> {
    let f = e.face as usize;
    let t = tri::Tri::new(bundle.face_vertices(&mesh.vertices, f), bundle.face_vertices(&mesh.normals, f));
    let p = t.bary_point(e.u, e.v);
    if e.d == 0.0 {
        return Ok(p);
    }
    Ok(vec::add(p, vec::scale(t.bary_normal(e.u, e.v)?, e.d)))
}

/// Distance from each point to its nearest other point (`None` when alone).
pub fn nearest_neighbor_distances(points: &[Vec3]) -> Vec<Option<f64>> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a][0].total_cmp(&points[b][0]).then(a.cmp(&b)));
    let mut best = vec![f64::INFINITY; points.len()];
    for (rank, &i) in order.iter().enumerate() {
        let p = points[i];
        let mut visit = |j: usize| {
            let dx = points[j][0] - p[0];
            if dx * dx >= best[i] {
                return false;
            }
            let d = vec::sub(points[j], p);
            best[i] = best[i].min(vec::dot(d, d));
            true
        };
        // scan outward in x until the x gap alone exceeds the best distance
        for &j in &order[rank + 1..] {
            if !visit(j) {
                break;
            }
        }
        for &j in order[..rank].iter().rev() {
            if !visit(j) {
                break;
            }
        }
    }
    best.into_iter().map(|b| b.is_finite().then(|| b.sqrt())).collect()
}

fn mean_edge_length(t: [Vec3; 3]) -> f64 {
    (vec::dist(t[0], t[1]) + vec::dist(t[1], t[2]) + vec::dist(t[2], t[0])) / 3.0
}

/// Places one splat per listed face with the documented initial values.
/// `color` sets the view-independent starting colour (mid grey when `None`).
pub fn init_splats(
    body: Arc<Body>,
    faces: &[u32],
    joint_set: JointTriSet,
    joint_radius: f64,
    beta: Vec<f64>,
    color: Option<Vec3>,
    seed: u64,
) -> Result<AvatarModel> {
    if faces.is_empty() {
        return Err(Error::InvalidInput("no faces to embed splats on".into()));
    }
    let bundle = &body.bundle;
    if let Some(&f) = faces.iter().find(|&&f| f as usize >= bundle.face_count()) {
        return Err(Error::InvalidInput(format!("face {f} out of range")));
    }
    let mesh = body.canonical(&beta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sh = color.map_or_else(ShCoeffs::default, ShCoeffs::from_rgb);
    let mut splats: Vec<SplatEmbedding> = faces
        .iter()
        .map(|&face| {
            let (u, v) = sample_simplex(&mut rng);
            SplatEmbedding {
                face,
                u,
                v,
                d: 0.0,
                scale: [1.0, 1.0],
                rot: Quat::IDENTITY,
                opacity: INIT_OPACITY,
                sh,
            }
        })
        .collect();
    let centers: Vec<Vec3> = splats
        .iter()
        .map(|s| splat_center_canonical(s, bundle, &mesh))
        .collect::<Result<_>>()?;
    let nn = nearest_neighbor_distances(&centers);
    for (s, d) in splats.iter_mut().zip(nn) {
        let fallback = || mean_edge_length(bundle.face_vertices(&mesh.vertices, s.face as usize));
        let r = match d {
            Some(d) if d > 1e-9 => d,
            _ => fallback(),
        };
        s.scale = [r, r];
    }
    Ok(AvatarModel {
        body,
        splats,
        joint_set,
        joint_radius,
        beta,
    })
}
