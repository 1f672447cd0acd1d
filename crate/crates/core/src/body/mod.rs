//! Skinned parametric body: rest mesh, kinematic tree, skinning weights and an
//! optional linear shape basis.
//!
//! Posing follows plain linear blend skinning. Every vertex is moved by the
//! skin-weighted sum of the forward-kinematics transforms of the joints; pose
//! corrective blend shapes are not modelled. Posing also produces the
//! per-triangle canonical→posed rotations and their area-weighted per-vertex
//! averages that drive the splat deformation.

mod io;
mod mini;
mod topology;

pub use io::{bundle_hash, load_body, save_body, BODY_FORMAT_VERSION};
pub use mini::{make_mini_body, MiniBodySpec, TubeSpec};
pub use topology::MeshTopology;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::vec::{self, Mat3, Vec3};
use crate::math::{tri, Quat};

/// Number of joints in the SMPL skeleton; pose vectors are padded to this size.
pub const SMPL_JOINTS: usize = 24;

/// Joint-region radius used when none is configured (scene units).
pub const DEFAULT_JOINT_RADIUS: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct BodyBundle {
    pub rest_vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub joint_rest_positions: Vec<Vec3>,
    /// `None` for the root joint.
    pub parents: Vec<Option<usize>>,
    /// Row-major `V × J`.
    pub skin_weights: Vec<f64>,
    /// Row-major `V × 3 × S` linear displacement basis.
    pub shape_basis: Option<Vec<f64>>,
    /// Row-major `J × V` regressor of joint positions from shaped vertices.
    pub joint_regressor: Option<Vec<f64>>,
}

impl BodyBundle {
    pub fn vertex_count(&self) -> usize {
        self.rest_vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn joint_count(&self) -> usize {
        self.joint_rest_positions.len()
    }

    pub fn shape_count(&self) -> usize {
        match &self.shape_basis {
            Some(b) if !self.rest_vertices.is_empty() => b.len() / (3 * self.rest_vertices.len()),
            _ => 0,
        }
    }

    pub fn weight(&self, vertex: usize, joint: usize) -> f64 {
        self.skin_weights[vertex * self.joint_count() + joint]
    }

    /// Checks every structural invariant of the bundle.
    pub fn validate(&self) -> Result<()> {
        let (nv, nj) = (self.vertex_count(), self.joint_count());
        if nv == 0 || self.faces.is_empty() || nj == 0 {
            return Err(Error::InvalidInput("body bundle has no vertices, faces or joints".into()));
        }
        if self.parents.len() != nj {
            return Err(Error::Dimension(format!(
                "{} parents for {nj} joints",
                self.parents.len()
            )));
        }
        if self.parents[0].is_some() {
            return Err(Error::InvalidInput("joint 0 must be the root".into()));
        }
        for (j, p) in self.parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < j => {}
                _ => {
                    return Err(Error::InvalidInput(format!(
                        "joint {j} must have a parent with a smaller index, got {p:?}"
                    )))
                }
            }
        }
        if self.skin_weights.len() != nv * nj {
            return Err(Error::Dimension(format!(
                "skin weights hold {} values, expected {nv} x {nj}",
                self.skin_weights.len()
            )));
        }
        for v in 0..nv {
            let row = &self.skin_weights[v * nj..(v + 1) * nj];
            if row.iter().any(|w| *w < 0.0 || !w.is_finite()) {
                return Err(Error::InvalidInput(format!("vertex {v} has a negative or non-finite weight")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-5 {
                return Err(Error::InvalidInput(format!("weights of vertex {v} sum to {s}")));
            }
        }
        for (f, face) in self.faces.iter().enumerate() {
            if face.iter().any(|&i| i as usize >= nv) {
                return Err(Error::InvalidInput(format!("face {f} indexes a missing vertex")));
            }
        }
        if let Some(b) = &self.shape_basis {
            if b.len() % (3 * nv) != 0 {
                return Err(Error::Dimension("shape basis is not V x 3 x S".into()));
            }
        }
        if let Some(r) = &self.joint_regressor {
            if r.len() != nj * nv {
                return Err(Error::Dimension("joint regressor is not J x V".into()));
            }
        }
        Ok(())
    }

    /// Rest vertices displaced by the shape basis.
    pub fn shaped_vertices(&self, beta: &[f64]) -> Result<Vec<Vec3>> {
        let s = self.shape_count();
        let basis = match &self.shape_basis {
            None => {
                if beta.iter().any(|b| *b != 0.0) {
                    return Err(Error::Dimension("shape coefficients given but the bundle has no shape basis".into()));
                }
                return Ok(self.rest_vertices.clone());
            }
            Some(b) => b,
        };
        if !beta.is_empty() && beta.len() != s {
            return Err(Error::Dimension(format!("{} shape coefficients for a basis of {s}", beta.len())));
        }
        let mut out = self.rest_vertices.clone();
        if beta.iter().all(|b| *b == 0.0) {
            return Ok(out);
        }
        for (v, p) in out.iter_mut().enumerate() {
            for (a, coord) in p.iter_mut().enumerate() {
                let row = &basis[(v * 3 + a) * s..(v * 3 + a + 1) * s];
                *coord += row.iter().zip(beta).map(|(b, c)| b * c).sum::<f64>();
            }
        }
        Ok(out)
    }

    /// Joint positions for the shaped mesh.
    pub fn joint_positions(&self, shaped: &[Vec3]) -> Vec<Vec3> {
        match &self.joint_regressor {
            None => self.joint_rest_positions.clone(),
            Some(reg) => {
                let nv = self.vertex_count();
                (0..self.joint_count())
                    .map(|j| {
                        let row = &reg[j * nv..(j + 1) * nv];
                        let mut acc = [0.0; 3];
                        for (w, p) in row.iter().zip(shaped) {
                            if *w != 0.0 {
                                acc = vec::add(acc, vec::scale(*p, *w));
                            }
                        }
                        acc
                    })
                    .collect()
            }
        }
    }

    pub fn face_vertices(&self, verts: &[Vec3], f: usize) -> [Vec3; 3] {
        self.faces[f].map(|i| verts[i as usize])
    }

    pub fn rest_pose(&self) -> Pose {
        Pose::rest(self.joint_count(), self.shape_count())
    }
}

/// A validated bundle together with its adjacency and content hash.
#[derive(Clone, Debug)]
pub struct Body {
    pub bundle: BodyBundle,
    pub topology: MeshTopology,
    pub hash: String,
}

impl Body {
    pub fn new(bundle: BodyBundle) -> Result<Self> {
        bundle.validate()?;
        let topology = MeshTopology::new(&bundle.faces, bundle.vertex_count());
        let hash = bundle_hash(&bundle);
        Ok(Body {
            bundle,
            topology,
            hash,
        })
    }

    pub fn pose(&self, pose: &Pose) -> Result<PosedMesh> {
        lbs_pose(&self.bundle, &self.topology, pose)
    }

    /// Shaped rest mesh with its vertex normals.
    pub fn canonical(&self, beta: &[f64]) -> Result<CanonicalMesh> {
        let vertices = self.bundle.shaped_vertices(beta)?;
        let normals = vertex_normals(&self.bundle.faces, &vertices);
        Ok(CanonicalMesh { vertices, normals })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalMesh {
    pub vertices: Vec<Vec3>,
    pub normals: Vec<Vec3>,
}

/// Per-frame body parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// Axis-angle rotation per joint, radians.
    pub theta: Vec<Vec3>,
    #[serde(default)]
    pub translation: Vec3,
    #[serde(default)]
    pub beta: Vec<f64>,
}

impl Pose {
    pub fn rest(joints: usize, shapes: usize) -> Self {
        Pose {
            theta: vec![[0.0; 3]; joints],
            translation: [0.0; 3],
            beta: vec![0.0; shapes],
        }
    }

    /// Pose vector flattened and zero-padded (or truncated) to `len` entries.
    pub fn theta_flat(&self, len: usize) -> Vec<f64> {
        let mut out: Vec<f64> = self.theta.iter().flatten().copied().collect();
        out.resize(len, 0.0);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().flatten().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite())
            && self.beta.iter().all(|v| v.is_finite())
    }
}

/// Rigid transform `x ↦ rot · x + trans`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rigid {
    pub rot: Mat3,
    pub trans: Vec3,
}

impl Rigid {
    pub fn apply(&self, x: Vec3) -> Vec3 {
        vec::add(vec::mat_vec(&self.rot, x), self.trans)
    }
}

/// Posed body for one frame.
#[derive(Clone, Debug)]
pub struct PosedMesh {
    pub vertices: Vec<Vec3>,
    pub vertex_normals: Vec<Vec3>,
    pub canonical_vertices: Vec<Vec3>,
    pub canonical_normals: Vec<Vec3>,
    /// Canonical→posed rotation of each face, nonnegative scalar part.
    pub triangle_quats: Vec<Quat>,
    pub triangle_areas_posed: Vec<f64>,
    pub triangle_areas_canonical: Vec<f64>,
    pub vertex_quats: Vec<Quat>,
    /// Skinning transforms per joint (rest space → posed space, before translation).
    pub joint_transforms: Vec<Rigid>,
}

/// Forward kinematics: one transform per joint mapping rest-space points
/// bound to that joint to posed space.
pub fn skinning_transforms(bundle: &BodyBundle, joints: &[Vec3], theta: &[Vec3]) -> Vec<Rigid> {
    let nj = bundle.joint_count();
    let mut world_rot: Vec<Mat3> = Vec::with_capacity(nj);
    let mut world_pos: Vec<Vec3> = Vec::with_capacity(nj);
    for j in 0..nj {
        let local = vec::axis_angle_to_mat(theta[j]);
        match bundle.parents[j] {
            None => {
                world_rot.push(local);
                world_pos.push(joints[j]);
            }
            Some(p) => {
                let offset = vec::sub(joints[j], joints[p]);
                world_rot.push(vec::mat_mul(&world_rot[p], &local));
                world_pos.push(vec::add(vec::mat_vec(&world_rot[p], offset), world_pos[p]));
            }
        }
    }
    (0..nj)
        .map(|j| Rigid {
            rot: world_rot[j],
            trans: vec::sub(world_pos[j], vec::mat_vec(&world_rot[j], joints[j])),
        })
        .collect()
}

/// Poses the body with linear blend skinning and derives the per-face and
/// per-vertex rotation fields.
pub fn lbs_pose(bundle: &BodyBundle, topo: &MeshTopology, pose: &Pose) -> Result<PosedMesh> {
    let nj = bundle.joint_count();
    if pose.theta.len() < nj {
        return Err(Error::Dimension(format!(
            "pose has {} joint rotations, body has {nj} joints",
            pose.theta.len()
        )));
    }
    if pose.theta[nj..].iter().flatten().any(|v| *v != 0.0) {
        return Err(Error::Dimension(format!(
            "pose rotates joints beyond the body's {nj} joints"
        )));
    }
    if !pose.is_finite() {
        return Err(Error::NonFinite("pose parameters".into()));
    }
    if topo.vertex_faces.len() != bundle.vertex_count() {
        return Err(Error::Dimension("topology does not belong to this body".into()));
    }
    let canonical = bundle.shaped_vertices(&pose.beta)?;
    let joints = bundle.joint_positions(&canonical);
    let transforms = skinning_transforms(bundle, &joints, &pose.theta);

    let vertices: Vec<Vec3> = canonical
        .iter()
        .enumerate()
        .map(|(v, &x)| {
            // rows are only normalised to 1e-5 on disk; renormalise so the
            // rest pose is reproduced exactly
            let row = &bundle.skin_weights[v * nj..(v + 1) * nj];
            let total: f64 = row.iter().sum();
            let mut acc = [0.0; 3];
            for (t, &w) in transforms.iter().zip(row) {
                if w != 0.0 {
                    acc = vec::add(acc, vec::scale(t.apply(x), w / total));
                }
            }
            vec::add(acc, pose.translation)
        })
        .collect();

    posed_from_vertices(bundle, topo, canonical, vertices, transforms)
}

/// Builds the rotation and area fields for an arbitrary posed vertex set.
pub fn posed_from_vertices(
    bundle: &BodyBundle,
    topo: &MeshTopology,
    canonical: Vec<Vec3>,
    vertices: Vec<Vec3>,
    joint_transforms: Vec<Rigid>,
) -> Result<PosedMesh> {
    let nf = bundle.face_count();
    let mut triangle_quats = Vec::with_capacity(nf);
    let mut areas_posed = Vec::with_capacity(nf);
    let mut areas_cano = Vec::with_capacity(nf);
    for f in 0..nf {
        let c = bundle.face_vertices(&canonical, f);
        let p = bundle.face_vertices(&vertices, f);
        triangle_quats.push(triangle_rotation(c, p).map_err(|e| match e {
            Error::Degenerate(m) => Error::Degenerate(format!("face {f}: {m}")),
            other => other,
        })?);
        areas_posed.push(tri::area(p));
        areas_cano.push(tri::area(c));
    }
    let vertex_quats = vertex_quaternions(&triangle_quats, &areas_posed, &topo.vertex_faces)?;
    Ok(PosedMesh {
        vertex_normals: vertex_normals(&bundle.faces, &vertices),
        canonical_normals: vertex_normals(&bundle.faces, &canonical),
        vertices,
        canonical_vertices: canonical,
        triangle_quats,
        triangle_areas_posed: areas_posed,
        triangle_areas_canonical: areas_cano,
        vertex_quats,
        joint_transforms,
    })
}

/// Orthonormal frame (first edge, face normal, their cross product) as matrix columns.
fn triangle_frame(t: [Vec3; 3]) -> Result<Mat3> {
    let e1 = vec::sub(t[1], t[0]);
    let e2 = vec::sub(t[2], t[0]);
    let c = vec::cross(e1, e2);
    if 0.5 * vec::norm(c) <= 1e-12 {
        return Err(Error::Degenerate("triangle area below 1e-12".into()));
    }
    let a = vec::normalize(e1);
    let n = vec::normalize(c);
    let b = vec::cross(a, n);
    Ok([[a[0], n[0], b[0]], [a[1], n[1], b[1]], [a[2], n[2], b[2]]])
}

/// Rotation taking the canonical triangle's frame onto the posed triangle's
/// frame. Uniform scale does not affect the result.
pub fn triangle_rotation(cano: [Vec3; 3], posed: [Vec3; 3]) -> Result<Quat> {
    let fc = triangle_frame(cano)?;
    let fp = triangle_frame(posed)?;
    let r = vec::mat_mul(&fp, &vec::transpose(&fc));
    Ok(Quat::from_mat(&r))
}

/// Area-weighted average of adjacent face rotations per vertex. Face
/// quaternions are flipped into the hemisphere of the vertex's first adjacent
/// face before summation; the sum is renormalised.
pub fn vertex_quaternions(
    triangle_quats: &[Quat],
    posed_areas: &[f64],
    vertex_faces: &[Vec<u32>],
) -> Result<Vec<Quat>> {
    vertex_faces
        .iter()
        .enumerate()
        .map(|(v, faces)| {
            let first = match faces.first() {
                Some(&f) => triangle_quats[f as usize],
                None => return Err(Error::InvalidInput(format!("vertex {v} has no adjacent face"))),
            };
            let mut acc = [0.0; 4];
            for &f in faces {
                let q = triangle_quats[f as usize].aligned_to(first).to_array();
                let a = posed_areas[f as usize];
                for i in 0..4 {
                    acc[i] += a * q[i];
                }
            }
            let q = Quat::from_array(acc);
            if q.norm() < 1e-300 {
                return Err(Error::Degenerate(format!("vertex {v}: adjacent faces have zero area")));
            }
            Ok(q.normalized())
        })
        .collect()
}

/// Area-weighted vertex normals.
pub fn vertex_normals(faces: &[[u32; 3]], verts: &[Vec3]) -> Vec<Vec3> {
    let mut acc = vec![[0.0; 3]; verts.len()];
    for f in faces {
        let p = f.map(|i| verts[i as usize]);
        // cross product length is twice the area, so this weights by area
        let c = vec::cross(vec::sub(p[1], p[0]), vec::sub(p[2], p[0]));
        for &i in f {
            acc[i as usize] = vec::add(acc[i as usize], c);
        }
    }
    acc.into_iter()
        .map(|n| {
            let l = vec::norm(n);
            if l > 0.0 {
                vec::scale(n, 1.0 / l)
            } else {
                [0.0, 0.0, 1.0]
            }
        })
        .collect()
}

/// Faces whose rest-pose centroid lies within a radius of a joint.
#[derive(Clone, Debug, PartialEq)]
pub struct JointTriSet {
    members: Vec<u32>,
    mask: Vec<bool>,
}

impl JointTriSet {
    pub fn from_faces(face_count: usize, faces: impl IntoIterator<Item = u32>) -> Result<Self> {
        let mut mask = vec![false; face_count];
        for f in faces {
            let slot = mask
                .get_mut(f as usize)
                .ok_or_else(|| Error::InvalidInput(format!("face {f} out of range")))?;
            *slot = true;
        }
        let members = (0..face_count as u32).filter(|&f| mask[f as usize]).collect();
        Ok(JointTriSet { members, mask })
    }

    pub fn members(&self) -> &[u32] {
        &self.members
    }

    pub fn contains(&self, face: usize) -> bool {
        self.mask.get(face).copied().unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

pub fn joint_tri_set(bundle: &BodyBundle, radius: f64) -> Result<JointTriSet> {
    if radius <= 0.0 || radius.is_nan() {
        return Err(Error::InvalidInput(format!("joint radius must be positive, got {radius}")));
    }
    let r2 = radius * radius;
    let faces = (0..bundle.face_count()).filter(|&f| {
        let t = bundle.face_vertices(&bundle.rest_vertices, f);
        let c = vec::scale(vec::add(vec::add(t[0], t[1]), t[2]), 1.0 / 3.0);
        bundle.joint_rest_positions.iter().any(|j| {
            let d = vec::sub(c, *j);
            vec::dot(d, d) <= r2
        })
    });
    JointTriSet::from_faces(bundle.face_count(), faces.map(|f| f as u32))
}
