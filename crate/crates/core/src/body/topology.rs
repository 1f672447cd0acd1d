use std::collections::HashMap;

/// Face adjacency of a triangle mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshTopology {
    /// Faces incident to each vertex, in ascending face order.
    pub vertex_faces: Vec<Vec<u32>>,
    /// `face_neighbors[f][k]` is the face sharing the edge opposite corner `k`
    /// of face `f`, or `None` on a boundary edge. Where more than two faces
    /// share an edge, the lowest-indexed other face is used.
    pub face_neighbors: Vec<[Option<u32>; 3]>,
}

impl MeshTopology {
    pub fn new(faces: &[[u32; 3]], vertex_count: usize) -> Self {
        let mut vertex_faces = vec![Vec::new(); vertex_count];
        let mut edges: HashMap<(u32, u32), Vec<u32>> = HashMap::new();
        for (f, face) in faces.iter().enumerate() {
            for &v in face {
                vertex_faces[v as usize].push(f as u32);
            }
            for k in 0..3 {
                edges.entry(edge_key(face, k)).or_default().push(f as u32);
            }
        }
        let face_neighbors = faces
            .iter()
            .enumerate()
            .map(|(f, face)| {
                std::array::from_fn(|k| {
                    edges[&edge_key(face, k)]
                        .iter()
                        .copied()
                        .filter(|&g| g as usize != f)
                        .min()
                })
            })
            .collect();
        MeshTopology {
            vertex_faces,
            face_neighbors,
        }
    }

    /// Edges used by exactly one face.
    pub fn boundary_edge_count(&self) -> usize {
        self.face_neighbors
            .iter()
            .flatten()
            .filter(|n| n.is_none())
            .count()
    }
}

/// Undirected key of the edge opposite corner `k`.
fn edge_key(face: &[u32; 3], k: usize) -> (u32, u32) {
    let a = face[(k + 1) % 3];
    let b = face[(k + 2) % 3];
    (a.min(b), a.max(b))
}
