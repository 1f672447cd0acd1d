//! Mesh export: depth maps rendered around the avatar are fused into a
//! truncated signed-distance volume whose zero level set is extracted with
//! marching cubes and written as Wavefront OBJ.

mod extract;
mod march;
mod tables;
mod tsdf;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

pub use extract::{extract_avatar_mesh, fibonacci_cameras, ExtractConfig, ExtractReport};
pub use march::marching_cubes;
pub use tsdf::TsdfVolume;

use crate::body::vertex_normals;
use crate::error::{Error, Result};
use crate::math::vec::{self, Vec3};

/// Indexed triangle mesh, counter-clockwise faces seen from outside.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// Area-weighted vertex normals.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        vertex_normals(&self.faces, &self.vertices)
    }

    /// Unnormalised face normal (twice the area).
    pub fn face_normal(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i as usize]);
        vec::cross(vec::sub(b, a), vec::sub(c, a))
    }

    pub fn face_centroid(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i as usize]);
        vec::scale(vec::add(vec::add(a, b), c), 1.0 / 3.0)
    }

    /// Number of faces using each undirected edge.
    pub fn edge_counts(&self) -> HashMap<(u32, u32), usize> {
        let mut counts = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Every edge is shared by exactly two faces, traversed in opposite
    /// directions.
    pub fn is_closed_manifold(&self) -> bool {
        let mut directed: HashMap<(u32, u32), usize> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                *directed.entry((f[k], f[(k + 1) % 3])).or_insert(0) += 1;
            }
        }
        directed.iter().all(|(&(a, b), &n)| n == 1 && directed.get(&(b, a)) == Some(&1))
    }

    /// V − E + F over the vertices referenced by faces.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for f in &self.faces {
            for &i in f {
                used[i as usize] = true;
            }
        }
        let v = used.iter().filter(|u| **u).count() as i64;
        v - self.edge_counts().len() as i64 + self.faces.len() as i64
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for p in &self.vertices {
            let _ = writeln!(s, "v {:.6} {:.6} {:.6}", p[0], p[1], p[2]);
        }
        for n in self.vertex_normals() {
            let _ = writeln!(s, "vn {:.6} {:.6} {:.6}", n[0], n[1], n[2]);
        }
        for f in &self.faces {
            let [a, b, c] = f.map(|i| i + 1);
            let _ = writeln!(s, "f {a}//{a} {b}//{b} {c}//{c}");
        }
        s
    }

    pub fn save_obj(&self, path: &Path) -> Result<()> {
        crate::util::write_atomic(path, self.to_obj().as_bytes())
    }

    /// Reads `v` and `f` records; other records are ignored and polygons
    /// are fanned into triangles.
    pub fn load_obj(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let bad = |line: usize, why: &str| Error::format(path, format!("line {line}: {why}"));
        let mut mesh = TriMesh::default();
        for (ln, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let xs: Vec<f64> = it.take(3).map(str::parse).collect::<std::result::Result<_, _>>().map_err(|_| bad(ln + 1, "bad vertex"))?;
                    if xs.len() != 3 {
                        return Err(bad(ln + 1, "vertex needs three coordinates"));
                    }
                    mesh.vertices.push([xs[0], xs[1], xs[2]]);
                }
                Some("f") => {
                    let idx = it
                        .map(|t| {
                            let i: i64 = t.split('/').next().unwrap_or("").parse().map_err(|_| bad(ln + 1, "bad face index"))?;
                            if i < 1 || i as usize > mesh.vertices.len() {
                                return Err(bad(ln + 1, "face index out of range"));
                            }
                            Ok(i as u32 - 1)
                        })
                        .collect::<Result<Vec<u32>>>()?;
                    if idx.len() < 3 {
                        return Err(bad(ln + 1, "face needs three vertices"));
                    }
                    for k in 1..idx.len() - 1 {
                        mesh.faces.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        Ok(mesh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tetrahedron() -> TriMesh {
        TriMesh {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            faces: vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
        }
    }

    #[test]
    fn tetrahedron_topology() {
        let t = tetrahedron();
        assert!(t.is_closed_manifold());
        assert_eq!(t.euler_characteristic(), 2);
        let mut open = t.clone();
        open.faces.pop();
        assert!(!open.is_closed_manifold());
        let mut flipped = t;
        flipped.faces[3] = [1, 3, 2];
        assert!(!flipped.is_closed_manifold());
    }

    #[test]
    fn obj_round_trip() {
        let t = tetrahedron();
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("t.obj");
        t.save_obj(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("vn ")).count(), 4);
        assert!(text.contains("f 1//1 3//3 2//2"));
        assert_eq!(TriMesh::load_obj(&p).unwrap(), t);
    }

    #[test]
    fn obj_rejects_bad_indices() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("bad.obj");
        std::fs::write(&p, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n").unwrap();
        assert!(matches!(TriMesh::load_obj(&p), Err(Error::Format { .. })));
        std::fs::write(&p, "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 4 3\n").unwrap();
        assert_eq!(TriMesh::load_obj(&p).unwrap().faces, vec![[0, 1, 3], [0, 3, 2]]);
    }
}
