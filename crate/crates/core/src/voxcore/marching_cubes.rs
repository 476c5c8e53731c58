//! Marching cubes over a one-voxel zero-padded scalar field.
//!
//! The 256-case triangle table is derived from the cube's faces rather than
//! typed in: on every face the iso-contour segments are fixed by the four
//! corner signs, with ambiguous faces (diagonal corners inside) always
//! separating the inside corners. Neighbouring cells therefore agree on every
//! shared face and the surface is watertight. Each case's segments chain into
//! closed loops. A loop of three crossings is one triangle; longer loops are
//! fanned around an extra vertex at their centroid so that no triangle edge
//! other than the face segments ever lies on a cell face.

use std::collections::HashMap;
use std::sync::OnceLock;

use super::{DensityGrid, TriMesh, VoxelGrid};

/// Corner offsets `(x, y, z)`.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Corner pairs of the twelve cube edges.
const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Face corner cycles, counter-clockwise seen from outside the cube.
const FACES: [[usize; 4]; 6] = [
    [0, 3, 2, 1], // z = 0
    [4, 5, 6, 7], // z = 1
    [0, 1, 5, 4], // y = 0
    [3, 7, 6, 2], // y = 1
    [0, 4, 7, 3], // x = 0
    [1, 2, 6, 5], // x = 1
];

fn edge_between(a: usize, b: usize) -> usize {
    EDGES
        .iter()
        .position(|e| (e[0] == a && e[1] == b) || (e[0] == b && e[1] == a))
        .expect("adjacent corners share an edge")
}

/// Iso-contour loops (as cycles of edge indices) for every corner-sign case;
/// bit `i` of the case index is set when corner `i` is inside (value above iso).
pub fn case_table() -> &'static [Vec<Vec<u8>>; 256] {
    static TABLE: OnceLock<[Vec<Vec<u8>>; 256]> = OnceLock::new();
    TABLE.get_or_init(|| std::array::from_fn(case_loops))
}

fn case_loops(case: usize) -> Vec<Vec<u8>> {
    let inside = |c: usize| case & (1 << c) != 0;
    // next[e] = edge reached from crossing e along its face segment
    let mut next = [usize::MAX; 12];
    for face in FACES {
        // crossings in counter-clockwise order: (edge, leaves the inside region?)
        let crossings: Vec<(usize, bool)> = (0..4)
            .filter_map(|k| {
                let (p, q) = (face[k], face[(k + 1) % 4]);
                (inside(p) != inside(q)).then(|| (edge_between(p, q), inside(p)))
            })
            .collect();
        let n = crossings.len();
        for (k, &(edge, leaving)) in crossings.iter().enumerate() {
            if leaving {
                // connect to the entering crossing just before it: this walks
                // around each inside corner separately on ambiguous faces
                let (prev, prev_leaving) = crossings[(k + n - 1) % n];
                debug_assert!(!prev_leaving);
                next[edge] = prev;
            }
        }
    }

    let mut loops = Vec::new();
    let mut visited = [false; 12];
    for start in 0..12 {
        if next[start] == usize::MAX || visited[start] {
            continue;
        }
        let mut poly = Vec::new();
        let mut e = start;
        while !visited[e] {
            visited[e] = true;
            poly.push(e as u8);
            e = next[e];
        }
        loops.push(poly);
    }
    loops
}

/// Extracts the `iso` level set of `field`. Values above `iso` are inside.
pub fn marching_cubes(field: &DensityGrid, iso: f64) -> TriMesh {
    let d = field.dim;
    let n = d + 2; // padded samples per axis
    let sample = |i: usize, j: usize, k: usize| -> f64 {
        if i == 0 || j == 0 || k == 0 || i > d || j > d || k > d {
            0.0
        } else {
            field.values[(i - 1) + d * ((k - 1) + d * (j - 1))]
        }
    };
    let h = field.scale / d as f64;
    // padded sample i sits at the center of voxel i - 1
    let position = |s: [usize; 3]| -> [f64; 3] { std::array::from_fn(|a| s[a] as f64 - 0.5) };

    let table = case_table();
    let mut mesh = TriMesh::default();
    let mut vertex_of_edge: HashMap<([usize; 3], usize), usize> = HashMap::new();

    for j in 0..n - 1 {
        for k in 0..n - 1 {
            for i in 0..n - 1 {
                let corner_at = |c: usize| {
                    let o = CORNERS[c];
                    [i + o[0], j + o[1], k + o[2]]
                };
                let values: [f64; 8] = std::array::from_fn(|c| {
                    let p = corner_at(c);
                    sample(p[0], p[1], p[2])
                });
                let case = (0..8).fold(0, |acc, c| acc | (((values[c] > iso) as usize) << c));
                if case == 0 || case == 255 {
                    continue;
                }
                let mut vid = |edge: usize| -> usize {
                    let [a, b] = EDGES[edge];
                    let (pa, pb) = (corner_at(a), corner_at(b));
                    let lower = if pa <= pb { pa } else { pb };
                    let axis = (0..3).find(|&ax| pa[ax] != pb[ax]).unwrap();
                    *vertex_of_edge.entry((lower, axis)).or_insert_with(|| {
                        let (va, vb) = (values[a], values[b]);
                        let t = ((iso - va) / (vb - va)).clamp(0.0, 1.0);
                        let (qa, qb) = (position(pa), position(pb));
                        let g: [f64; 3] = std::array::from_fn(|ax| qa[ax] + t * (qb[ax] - qa[ax]));
                        mesh.vertices
                            .push(std::array::from_fn(|ax| field.translate[ax] + g[ax] * h));
                        mesh.vertices.len() - 1
                    })
                };
                let loops: Vec<Vec<usize>> = table[case]
                    .iter()
                    .map(|lp| lp.iter().map(|&e| vid(e as usize)).collect())
                    .collect();
                for ids in loops {
                    if let [a, b, c] = ids[..] {
                        mesh.triangles.push([a, c, b]);
                        continue;
                    }
                    let mut center = [0.0; 3];
                    for &v in &ids {
                        for ax in 0..3 {
                            center[ax] += mesh.vertices[v][ax] / ids.len() as f64;
                        }
                    }
                    mesh.vertices.push(center);
                    let hub = mesh.vertices.len() - 1;
                    for w in 0..ids.len() {
                        mesh.triangles.push([hub, ids[(w + 1) % ids.len()], ids[w]]);
                    }
                }
            }
        }
    }
    mesh
}

pub fn marching_cubes_binary(grid: &VoxelGrid) -> TriMesh {
    marching_cubes(&DensityGrid::from(grid), 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn table_shapes() {
        let t = case_table();
        assert!(t[0].is_empty() && t[255].is_empty());
        // single corner: one triangle
        for c in 0..8 {
            assert_eq!(t[1 << c].len(), 1);
            assert_eq!(t[1 << c][0].len(), 3);
        }
        // two diagonal corners on a face stay separate: two loops
        assert_eq!(t[0b101].len(), 2);
        // a half-cube: one quad
        assert_eq!(t[0b1111].len(), 1);
        assert_eq!(t[0b1111][0].len(), 4);
        // complementary cases cut the same edges
        for case in 0..256usize {
            let edges = |c: usize| {
                let mut v: Vec<u8> = t[c].iter().flatten().copied().collect();
                v.sort();
                v.dedup();
                v
            };
            assert_eq!(edges(case), edges(255 - case));
        }
    }

    #[test]
    fn empty_grid_gives_empty_mesh() {
        assert!(marching_cubes_binary(&VoxelGrid::empty(4)).is_empty());
    }

    #[test]
    fn single_voxel_is_a_sphere() {
        let mut g = VoxelGrid::empty(3);
        g.set(1, 1, 1, true);
        let m = marching_cubes_binary(&g);
        assert_eq!(m.euler_characteristic(), 2);
        assert!(m.is_closed());
        assert_eq!(m.triangles.len(), 8);
        assert!(m.signed_volume() > 0.0, "outward winding");
    }

    #[test]
    fn full_grid_is_a_closed_box() {
        let g = VoxelGrid::full(4).with_placement([1.0, 2.0, 3.0], 2.0);
        let m = marching_cubes_binary(&g);
        assert_eq!(m.euler_characteristic(), 2);
        assert!(m.is_closed());
        let (lo, hi) = m.bounds().unwrap();
        // surface crosses halfway between the last voxel center and the padding
        let h = 0.5;
        for a in 0..3 {
            assert!((lo[a] - (g.translate[a] + 0.0 * h)).abs() < 1e-12);
            assert!((hi[a] - (g.translate[a] + 4.0 * h)).abs() < 1e-12);
        }
    }

    #[test]
    fn soft_values_move_vertices() {
        let mut field = DensityGrid::new(1, vec![0.8]);
        field.scale = 1.0;
        let m = marching_cubes(&field, 0.4);
        // crossing at t = 0.4 / 0.8 = 0.5 of the way from the padding sample
        let (lo, _) = m.bounds().unwrap();
        assert!((lo[0] - 0.0).abs() < 1e-12);
        let m2 = marching_cubes(&field, 0.6);
        let (lo2, _) = m2.bounds().unwrap();
        assert!((lo2[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn torus_topology() {
        // a 3x3 ring with a hole has genus 1
        let mut g = VoxelGrid::empty(5);
        for (x, z) in [(1, 1), (2, 1), (3, 1), (1, 2), (3, 2), (1, 3), (2, 3), (3, 3)] {
            g.set(x, 2, z, true);
        }
        let m = marching_cubes_binary(&g);
        assert!(m.is_closed());
        assert_eq!(m.euler_characteristic(), 0);
    }

    proptest! {
        #[test]
        fn random_grids_are_watertight(occ in proptest::collection::vec(any::<bool>(), 125)) {
            let g = VoxelGrid::from_occupancy(5, occ, [0.0; 3], 1.0).unwrap();
            let m = marching_cubes_binary(&g);
            if g.occupied_count() > 0 {
                prop_assert!(m.is_closed());
                prop_assert!(m.signed_volume() > 0.0);
            }
        }
    }
}
