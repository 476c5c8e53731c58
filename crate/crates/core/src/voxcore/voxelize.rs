//! Surface voxelization of triangle meshes.
//!
//! The mesh is scaled uniformly so its longest bounding-box edge spans
//! `margin * dim` voxels and centered in the cube. Cell `(i, j, k)` is the
//! half-open box `[i, i+1) x [j, j+1) x [k, k+1)` in grid coordinates and is
//! occupied iff some triangle intersects it. Half-open cells give every
//! boundary point exactly one owner, so a plate lying on a cell boundary
//! rasterizes to a single layer.

use std::collections::VecDeque;

use super::{GeometryError, Point3, TriMesh, VoxelGrid};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoxelizeOptions {
    /// Fraction of the cube edge covered by the longest bounding-box edge.
    pub margin: f64,
    /// Flood-fill enclosed empty space after rasterizing the surface.
    pub fill_interior: bool,
}

impl Default for VoxelizeOptions {
    fn default() -> Self {
        VoxelizeOptions {
            margin: 0.9,
            fill_interior: false,
        }
    }
}

/// Mapping from mesh space to continuous grid coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridFit {
    pub center: Point3,
    /// Grid units per meter.
    pub factor: f64,
    pub dim: usize,
}

impl GridFit {
    pub fn for_mesh(mesh: &TriMesh, dim: usize, margin: f64) -> Result<Option<Self>, GeometryError> {
        let Some((lo, hi)) = mesh.bounds() else {
            return Ok(None);
        };
        let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
        if !(extent > 0.0) || !extent.is_finite() {
            return Err(GeometryError::DegenerateMesh);
        }
        Ok(Some(GridFit {
            center: std::array::from_fn(|a| 0.5 * (lo[a] + hi[a])),
            factor: margin * dim as f64 / extent,
            dim,
        }))
    }

    pub fn to_grid(&self, p: Point3) -> Point3 {
        let half = self.dim as f64 / 2.0;
        std::array::from_fn(|a| (p[a] - self.center[a]) * self.factor + half)
    }

    /// Physical `(translate, scale)` for a grid produced with this fit.
    pub fn placement(&self) -> ([f64; 3], f64) {
        let half = self.dim as f64 / 2.0 / self.factor;
        (
            std::array::from_fn(|a| self.center[a] - half),
            self.dim as f64 / self.factor,
        )
    }
}

pub fn voxelize(mesh: &TriMesh, dim: usize) -> Result<VoxelGrid, GeometryError> {
    voxelize_with(mesh, dim, VoxelizeOptions::default())
}

pub fn voxelize_with(
    mesh: &TriMesh,
    dim: usize,
    opts: VoxelizeOptions,
) -> Result<VoxelGrid, GeometryError> {
    if dim == 0 {
        return Err(GeometryError::InvalidGrid("dim must be at least 1".into()));
    }
    mesh.validate()?;
    let mut grid = VoxelGrid::empty(dim);
    if mesh.is_empty() {
        return Ok(grid);
    }
    let fit = GridFit::for_mesh(mesh, dim, opts.margin)?.expect("non-empty mesh has bounds");
    let (translate, scale) = fit.placement();
    grid = grid.with_placement(translate, scale);

    let cell_range = |lo: f64, hi: f64| {
        let first = (lo.floor().max(0.0) as usize).min(dim - 1);
        let last = (hi.floor().max(0.0) as usize).min(dim - 1);
        first..=last
    };

    for tri in &mesh.triangles {
        let v = tri.map(|i| fit.to_grid(mesh.vertices[i]));
        let lo: [f64; 3] = std::array::from_fn(|a| v[0][a].min(v[1][a]).min(v[2][a]));
        let hi: [f64; 3] = std::array::from_fn(|a| v[0][a].max(v[1][a]).max(v[2][a]));
        for y in cell_range(lo[1], hi[1]) {
            for z in cell_range(lo[2], hi[2]) {
                for x in cell_range(lo[0], hi[0]) {
                    if grid.get(x, y, z) {
                        continue;
                    }
                    if triangle_hits_cell(&v, [x as f64, y as f64, z as f64]) {
                        grid.set(x, y, z, true);
                    }
                }
            }
        }
    }

    if opts.fill_interior {
        fill_enclosed(&mut grid);
    }
    Ok(grid)
}

/// Exact test of a triangle against the half-open unit cell with lower corner `lo`.
///
/// Clips the triangle against the closed cell; the half-open cell is hit iff
/// the clipped polygon is non-empty and, on every axis, has a vertex strictly
/// below the upper face (the vertex centroid is then a witness point).
pub fn triangle_hits_cell(tri: &[Point3; 3], lo: Point3) -> bool {
    let mut poly: Vec<Point3> = tri.to_vec();
    for axis in 0..3 {
        let lower = lo[axis];
        let upper = lo[axis] + 1.0;
        poly = clip(&poly, axis, lower, true);
        if poly.is_empty() {
            return false;
        }
        poly = clip(&poly, axis, upper, false);
        if poly.is_empty() {
            return false;
        }
    }
    (0..3).all(|axis| poly.iter().any(|p| p[axis] < lo[axis] + 1.0))
}

/// Sutherland-Hodgman step against the closed half-space `p[axis] >= plane`
/// (`keep_above`) or `p[axis] <= plane`.
fn clip(poly: &[Point3], axis: usize, plane: f64, keep_above: bool) -> Vec<Point3> {
    let dist = |p: &Point3| if keep_above { p[axis] - plane } else { plane - p[axis] };
    let mut out = Vec::with_capacity(poly.len() + 2);
    for (i, cur) in poly.iter().enumerate() {
        let prev = &poly[(i + poly.len() - 1) % poly.len()];
        let (dc, dp) = (dist(cur), dist(prev));
        if (dc >= 0.0) != (dp >= 0.0) && dc != dp {
            let t = dp / (dp - dc);
            let mut q: Point3 = std::array::from_fn(|a| prev[a] + t * (cur[a] - prev[a]));
            q[axis] = plane;
            out.push(q);
        }
        if dc >= 0.0 {
            out.push(*cur);
        }
    }
    out
}

/// Marks every empty voxel not 6-connected to the grid border as occupied.
fn fill_enclosed(grid: &mut VoxelGrid) {
    let d = grid.dim();
    let mut outside = vec![false; d * d * d];
    let mut queue = VecDeque::new();
    for y in 0..d {
        for z in 0..d {
            for x in 0..d {
                let border = [x, y, z].iter().any(|&c| c == 0 || c == d - 1);
                if border && !grid.get(x, y, z) {
                    outside[grid.index(x, y, z)] = true;
                    queue.push_back((x, y, z));
                }
            }
        }
    }
    while let Some((x, y, z)) = queue.pop_front() {
        let neighbours = [
            (x.wrapping_sub(1), y, z),
            (x + 1, y, z),
            (x, y.wrapping_sub(1), z),
            (x, y + 1, z),
            (x, y, z.wrapping_sub(1)),
            (x, y, z + 1),
        ];
        for (nx, ny, nz) in neighbours {
            if nx >= d || ny >= d || nz >= d {
                continue;
            }
            let i = grid.index(nx, ny, nz);
            if !outside[i] && !grid.get(nx, ny, nz) {
                outside[i] = true;
                queue.push_back((nx, ny, nz));
            }
        }
    }
    for y in 0..d {
        for z in 0..d {
            for x in 0..d {
                if !outside[grid.index(x, y, z)] {
                    grid.set(x, y, z, true);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxcore::mesh::{parse_off, UNIT_CUBE_OFF};

    #[test]
    fn empty_mesh_gives_empty_grid() {
        let g = voxelize(&TriMesh::default(), 6).unwrap();
        assert_eq!(g.occupied_count(), 0);
    }

    #[test]
    fn degenerate_bounds_rejected() {
        let m = TriMesh {
            vertices: vec![[1.0, 2.0, 3.0]; 3],
            triangles: vec![[0, 1, 2]],
        };
        assert!(matches!(voxelize(&m, 4), Err(GeometryError::DegenerateMesh)));
    }

    #[test]
    fn unit_cube_is_the_grid_shell() {
        let g = voxelize(&parse_off(UNIT_CUBE_OFF).unwrap(), 4).unwrap();
        for (x, y, z) in (0..64).map(|i| (i % 4, i / 16, (i / 4) % 4)) {
            let on_face = [x, y, z].iter().any(|&c| c == 0 || c == 3);
            assert_eq!(g.get(x, y, z), on_face, "cell {x} {y} {z}");
        }
        let (t, s) = (g.translate, g.scale());
        // cube edge (1 m) spans 90% of the grid
        assert!((s - 1.0 / 0.9).abs() < 1e-12);
        assert!((t[0] - (0.5 - s / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn interior_fill_closes_the_cube() {
        let mesh = parse_off(UNIT_CUBE_OFF).unwrap();
        let opts = VoxelizeOptions {
            fill_interior: true,
            ..Default::default()
        };
        let g = voxelize_with(&mesh, 6, opts).unwrap();
        assert_eq!(g.occupied_count(), 216);
        let shell = voxelize(&mesh, 6).unwrap();
        assert_eq!(shell.occupied_count(), 216 - 64);
    }

    #[test]
    fn boundary_point_has_one_owner() {
        // triangle lying exactly on the plane y = 2
        let tri = [[0.2, 2.0, 0.2], [0.8, 2.0, 0.2], [0.2, 2.0, 0.8]];
        assert!(triangle_hits_cell(&tri, [0.0, 2.0, 0.0]));
        assert!(!triangle_hits_cell(&tri, [0.0, 1.0, 0.0]));
    }
}
