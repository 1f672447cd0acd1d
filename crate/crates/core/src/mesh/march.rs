use std::collections::HashMap;

use super::tables::TRIANGLES;
use super::{TriMesh, TsdfVolume};

const CORNERS: [[usize; 3]; 8] = [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]];
const EDGES: [[usize; 2]; 12] = [[0, 1], [1, 2], [2, 3], [3, 0], [4, 5], [5, 6], [6, 7], [7, 4], [0, 4], [1, 5], [2, 6], [3, 7]];

/// Isosurface of the volume at `iso`. Samples below `iso` are inside and
/// faces wind counter-clockwise seen from outside. Vertices on a grid edge
/// are shared by all cells around it.
pub fn marching_cubes(vol: &TsdfVolume, iso: f64) -> TriMesh {
    let [nx, ny, nz] = vol.dims;
    let mut mesh = TriMesh::default();
    let mut edge_vertex: HashMap<(usize, usize), u32> = HashMap::new();
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let ids = CORNERS.map(|c| vol.index(i + c[0], j + c[1], k + c[2]));
                let vals = ids.map(|id| vol.tsdf[id]);
                let case = (0..8).filter(|&c| vals[c] < iso).fold(0usize, |acc, c| acc | 1 << c);
                if case == 0 || case == 255 {
                    continue;
                }
                let mut vertex = |e: usize| -> u32 {
                    let [a, b] = EDGES[e];
                    let key = (ids[a].min(ids[b]), ids[a].max(ids[b]));
                    *edge_vertex.entry(key).or_insert_with(|| {
                        let (pa, pb) = (
                            vol.point(i + CORNERS[a][0], j + CORNERS[a][1], k + CORNERS[a][2]),
                            vol.point(i + CORNERS[b][0], j + CORNERS[b][1], k + CORNERS[b][2]),
                        );
                        let t = ((iso - vals[a]) / (vals[b] - vals[a])).clamp(0.0, 1.0);
                        mesh.vertices.push(std::array::from_fn(|d| pa[d] + t * (pb[d] - pa[d])));
                        (mesh.vertices.len() - 1) as u32
                    })
                };
                let row = &TRIANGLES[case];
                let mut tris = Vec::with_capacity(5);
                for t in row.chunks_exact(3).take_while(|t| t[0] >= 0) {
                    tris.push([vertex(t[0] as usize), vertex(t[2] as usize), vertex(t[1] as usize)]);
                }
                mesh.faces.extend(tris);
            }
        }
    }
    mesh
}
