//! Procedural articulated body built from capped cylinders.
//!
//! Each tube follows a polyline whose segments are bound to one joint. Where
//! consecutive segments belong to different joints the skin weights cross
//! over with a smoothstep centred on the shared point, so a vertex ring lying
//! exactly on that point is split evenly between the two joints.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::BodyBundle;
use crate::error::{Error, Result};
use crate::math::vec::{self, Vec3};

#[derive(Clone, Debug, PartialEq)]
pub struct TubeSpec {
    /// Polyline of the tube axis, at least two points.
    pub path: Vec<Vec3>,
    /// Joint bound to each segment, `path.len() - 1` entries.
    pub owners: Vec<usize>,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MiniBodySpec {
    pub joints: Vec<Vec3>,
    pub parents: Vec<Option<usize>>,
    pub tubes: Vec<TubeSpec>,
    /// Vertices per ring.
    pub sides: usize,
    /// Upper bound on the axial distance between rings.
    pub ring_spacing: f64,
    /// Half-width of the weight crossover at a joint.
    pub blend: f64,
    pub shape_count: usize,
}

impl MiniBodySpec {
    /// Two-joint straight arm along +x: shoulder at the origin, elbow at 0.3, tip at 0.6.
    pub fn arm() -> Self {
        MiniBodySpec {
            joints: vec![[0.0, 0.0, 0.0], [0.3, 0.0, 0.0]],
            parents: vec![None, Some(0)],
            tubes: vec![TubeSpec {
                path: vec![[0.0, 0.0, 0.0], [0.3, 0.0, 0.0], [0.6, 0.0, 0.0]],
                owners: vec![0, 1],
                radius: 0.05,
            }],
            sides: 12,
            ring_spacing: 0.05,
            blend: 0.06,
            shape_count: 10,
        }
    }

    /// Six-joint figure in an A-pose: pelvis (root), chest, and a shoulder and
    /// elbow on each side. The legs are bound rigidly to the pelvis.
    pub fn figure() -> Self {
        let joints = vec![
            [0.0, 0.9, 0.0],
            [0.0, 1.3, 0.0],
            [0.18, 1.35, 0.0],
            [0.45, 1.15, 0.0],
            [-0.18, 1.35, 0.0],
            [-0.45, 1.15, 0.0],
        ];
        let arm = |s: f64, shoulder: usize| TubeSpec {
            path: vec![
                [0.06 * s, 1.37, 0.0],
                [0.18 * s, 1.35, 0.0],
                [0.45 * s, 1.15, 0.0],
                [0.7 * s, 0.95, 0.0],
            ],
            owners: vec![1, shoulder, shoulder + 1],
            radius: 0.04,
        };
        let leg = |s: f64| TubeSpec {
            path: vec![[0.08 * s, 0.82, 0.0], [0.1 * s, 0.05, 0.0]],
            owners: vec![0],
            radius: 0.055,
        };
        MiniBodySpec {
            joints,
            parents: vec![None, Some(0), Some(1), Some(2), Some(1), Some(4)],
            tubes: vec![
                TubeSpec {
                    path: vec![[0.0, 0.72, 0.0], [0.0, 0.9, 0.0], [0.0, 1.3, 0.0], [0.0, 1.62, 0.0]],
                    owners: vec![0, 0, 1],
                    radius: 0.11,
                },
                arm(1.0, 2),
                arm(-1.0, 4),
                leg(1.0),
                leg(-1.0),
            ],
            sides: 12,
            ring_spacing: 0.06,
            blend: 0.06,
            shape_count: 10,
        }
    }

    fn validate(&self) -> Result<()> {
        let nj = self.joints.len();
        if nj == 0 || self.parents.len() != nj {
            return Err(Error::InvalidInput("mini-body needs one parent entry per joint".into()));
        }
        if self.sides < 3 || !(self.ring_spacing > 0.0) || !(self.blend >= 0.0) {
            return Err(Error::InvalidInput("mini-body needs >= 3 sides and positive spacing".into()));
        }
        if self.tubes.is_empty() {
            return Err(Error::InvalidInput("mini-body has no tubes".into()));
        }
        for (i, t) in self.tubes.iter().enumerate() {
            if t.path.len() < 2 || t.owners.len() + 1 != t.path.len() {
                return Err(Error::InvalidInput(format!("tube {i}: path and owners disagree")));
            }
            if t.owners.iter().any(|&o| o >= nj) || !(t.radius > 0.0) {
                return Err(Error::InvalidInput(format!("tube {i}: bad owner or radius")));
            }
            if t.path.windows(2).any(|w| vec::dist(w[0], w[1]) < 1e-9) {
                return Err(Error::InvalidInput(format!("tube {i}: repeated path point")));
            }
        }
        Ok(())
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

fn perpendicular_to(t: Vec3) -> Vec3 {
    let r = if t[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
    vec::normalize(vec::sub(r, vec::scale(t, vec::dot(r, t))))
}

struct Ring {
    center: Vec3,
    tangent: Vec3,
    /// (joint, weight) pairs.
    weights: Vec<(usize, f64)>,
}

fn tube_rings(t: &TubeSpec, spacing: f64, blend: f64) -> Vec<Ring> {
    let nseg = t.owners.len();
    let dirs: Vec<Vec3> = t.path.windows(2).map(|w| vec::normalize(vec::sub(w[1], w[0]))).collect();
    let lens: Vec<f64> = t.path.windows(2).map(|w| vec::dist(w[0], w[1])).collect();
    let mut rings = Vec::new();
    for s in 0..nseg {
        let n = (lens[s] / spacing).ceil().max(1.0) as usize;
        let last = if s + 1 == nseg { n } else { n - 1 };
        for k in 0..=last {
            let f = k as f64 / n as f64;
            let along = f * lens[s];
            let center = vec::add(t.path[s], vec::scale(dirs[s], along));
            let tangent = if k == 0 && s > 0 {
                vec::normalize(vec::add(dirs[s - 1], dirs[s]))
            } else {
                dirs[s]
            };
            // crossover with the previous segment's joint near the start point
            let mut weights = vec![(t.owners[s], 1.0)];
            if s > 0 && t.owners[s - 1] != t.owners[s] {
                let b = blend.min(0.45 * lens[s - 1]).min(0.45 * lens[s]);
                let w = if b > 0.0 { smoothstep((along + b) / (2.0 * b)) } else { 1.0 };
                weights = vec![(t.owners[s - 1], 1.0 - w), (t.owners[s], w)];
            }
            // crossover with the next segment's joint near the end point
            if s + 1 < nseg && t.owners[s + 1] != t.owners[s] {
                let b = blend.min(0.45 * lens[s]).min(0.45 * lens[s + 1]);
                let d = along - lens[s];
                let w_next = if b > 0.0 { smoothstep((d + b) / (2.0 * b)) } else { 0.0 };
                if w_next > 0.0 {
                    for wt in weights.iter_mut() {
                        wt.1 *= 1.0 - w_next;
                    }
                    weights.push((t.owners[s + 1], w_next));
                }
            }
            rings.push(Ring { center, tangent, weights });
        }
    }
    rings
}

/// Builds a skinned body from `spec`. Geometry and weights depend only on
/// the spec; the random shape basis depends on `seed`. All values are
/// representable in single precision so the bundle survives a file round trip.
pub fn make_mini_body(spec: &MiniBodySpec, seed: u64) -> Result<BodyBundle> {
    spec.validate()?;
    let nj = spec.joints.len();
    let mut verts: Vec<Vec3> = Vec::new();
    let mut radial: Vec<Vec3> = Vec::new();
    let mut weight_rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();

    for tube in &spec.tubes {
        let rings = tube_rings(tube, spec.ring_spacing, spec.blend);
        let sides = spec.sides;
        let base = verts.len() as u32;
        let mut normal = perpendicular_to(rings[0].tangent);
        for ring in &rings {
            // parallel transport of the reference direction
            normal = vec::normalize(vec::sub(normal, vec::scale(ring.tangent, vec::dot(normal, ring.tangent))));
            let binormal = vec::cross(ring.tangent, normal);
            for j in 0..sides {
                let a = std::f64::consts::TAU * j as f64 / sides as f64;
                let dir = vec::add(vec::scale(normal, a.cos()), vec::scale(binormal, a.sin()));
                verts.push(vec::add(ring.center, vec::scale(dir, tube.radius)));
                radial.push(dir);
                weight_rows.push(ring.weights.clone());
            }
        }
        let idx = |r: usize, j: usize| base + (r * sides + j % sides) as u32;
        for r in 0..rings.len() - 1 {
            for j in 0..sides {
                faces.push([idx(r, j), idx(r, j + 1), idx(r + 1, j + 1)]);
                faces.push([idx(r, j), idx(r + 1, j + 1), idx(r + 1, j)]);
            }
        }
        let first = &rings[0];
        let last = &rings[rings.len() - 1];
        let c0 = verts.len() as u32;
        verts.push(first.center);
        radial.push(vec::scale(first.tangent, -1.0));
        weight_rows.push(first.weights.clone());
        let c1 = verts.len() as u32;
        verts.push(last.center);
        radial.push(last.tangent);
        weight_rows.push(last.weights.clone());
        let lr = rings.len() - 1;
        for j in 0..sides {
            faces.push([c0, idx(0, j + 1), idx(0, j)]);
            faces.push([c1, idx(lr, j), idx(lr, j + 1)]);
        }
    }

    let f32r = |x: f64| x as f32 as f64;
    let mut skin_weights = vec![0.0; verts.len() * nj];
    for (v, row) in weight_rows.iter().enumerate() {
        for &(j, w) in row {
            skin_weights[v * nj + j] += w;
        }
        let dst = &mut skin_weights[v * nj..(v + 1) * nj];
        let s: f64 = dst.iter().sum();
        for w in dst.iter_mut() {
            *w = f32r(*w / s);
        }
    }

    let shape_basis = (spec.shape_count > 0).then(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = spec.shape_count;
        let modes: Vec<(Vec3, f64, f64)> = (0..s)
            .map(|_| {
                let w = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
                (w, rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.005..0.02))
            })
            .collect();
        let mut basis = vec![0.0; verts.len() * 3 * s];
        for (v, p) in verts.iter().enumerate() {
            for (k, (w, phase, amp)) in modes.iter().enumerate() {
                let m = amp * (vec::dot(*w, *p) + phase).sin();
                for a in 0..3 {
                    basis[(v * 3 + a) * s + k] = f32r(m * radial[v][a]);
                }
            }
        }
        basis
    });

    let bundle = BodyBundle {
        rest_vertices: verts.into_iter().map(|p| p.map(f32r)).collect(),
        faces,
        joint_rest_positions: spec.joints.iter().map(|p| p.map(f32r)).collect(),
        parents: spec.parents.clone(),
        skin_weights,
        shape_basis,
        joint_regressor: None,
    };
    bundle.validate()?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{joint_tri_set, MeshTopology, DEFAULT_JOINT_RADIUS};

    #[test]
    fn arm_passes_invariants() {
        let b = make_mini_body(&MiniBodySpec::arm(), 0).unwrap();
        b.validate().unwrap();
        assert_eq!(b.joint_count(), 2);
        assert!((100..=1000).contains(&b.vertex_count()));
        assert_eq!(b.shape_count(), 10);
    }

    #[test]
    fn same_seed_same_bundle() {
        let a = make_mini_body(&MiniBodySpec::figure(), 9).unwrap();
        let b = make_mini_body(&MiniBodySpec::figure(), 9).unwrap();
        assert_eq!(a, b);
        let c = make_mini_body(&MiniBodySpec::figure(), 10).unwrap();
        assert_ne!(a.shape_basis, c.shape_basis);
    }

    #[test]
    fn elbow_ring_is_split_evenly() {
        let b = make_mini_body(&MiniBodySpec::arm(), 0).unwrap();
        let mut found = 0;
        for (v, p) in b.rest_vertices.iter().enumerate() {
            if (p[0] - 0.3).abs() < 1e-6 {
                assert!((b.weight(v, 0) - 0.5).abs() < 0.1);
                assert!((b.weight(v, 1) - 0.5).abs() < 0.1);
                found += 1;
            }
        }
        assert_eq!(found, 12);
    }

    #[test]
    fn far_vertices_are_rigid() {
        let b = make_mini_body(&MiniBodySpec::arm(), 0).unwrap();
        for (v, p) in b.rest_vertices.iter().enumerate() {
            if p[0] < 0.2 {
                assert_eq!(b.weight(v, 0), 1.0);
            }
            if p[0] > 0.4 {
                assert_eq!(b.weight(v, 1), 1.0);
            }
        }
    }

    #[test]
    fn tubes_are_closed_and_outward() {
        for spec in [MiniBodySpec::arm(), MiniBodySpec::figure()] {
            let b = make_mini_body(&spec, 0).unwrap();
            let t = MeshTopology::new(&b.faces, b.vertex_count());
            assert_eq!(t.boundary_edge_count(), 0);
            // signed volume of a closed outward mesh is positive
            let vol: f64 = b
                .faces
                .iter()
                .map(|f| {
                    let [a, c, d] = f.map(|i| b.rest_vertices[i as usize]);
                    vec::dot(a, vec::cross(c, d)) / 6.0
                })
                .sum();
            assert!(vol > 0.0);
        }
    }

    #[test]
    fn figure_joint_set_fits_splat_budget() {
        let b = make_mini_body(&MiniBodySpec::figure(), 0).unwrap();
        let js = joint_tri_set(&b, DEFAULT_JOINT_RADIUS).unwrap();
        assert!(!js.is_empty());
        assert!(js.len() < 400, "{} joint faces", js.len());
    }
}
