use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{GeometryError, VoxelGrid};

/// Mass properties of a voxel solid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InertiaResult {
    pub mass: f64,
    pub center_of_mass: [f64; 3],
    /// Symmetric tensor about the center of mass, kg m^2.
    pub inertia: [[f64; 3]; 3],
}

impl InertiaResult {
    /// Eigenvalues of the inertia tensor, ascending.
    pub fn principal_moments(&self) -> [f64; 3] {
        let m = Matrix3::from_fn(|r, c| self.inertia[r][c]);
        let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        [ev[0], ev[1], ev[2]]
    }
}

/// Uniform-density inertia of the occupied voxels.
///
/// Each voxel contributes a point mass at its center (parallel-axis terms)
/// plus its own solid-cube moment `m s^2 / 6` on the diagonal.
pub fn inertia_of(grid: &VoxelGrid, mass: f64) -> Result<InertiaResult, GeometryError> {
    if !(mass.is_finite() && mass > 0.0) {
        return Err(GeometryError::InvalidArgument(format!("mass must be positive, got {mass}")));
    }
    let n = grid.occupied_count();
    if n == 0 {
        return Err(GeometryError::EmptyGrid);
    }
    let m = mass / n as f64;
    let s = grid.voxel_size();

    let mut com = [0.0; 3];
    for (x, y, z) in grid.occupied() {
        let c = grid.voxel_center(x, y, z);
        for a in 0..3 {
            com[a] += c[a];
        }
    }
    com = com.map(|v| v / n as f64);

    let mut i = [[0.0; 3]; 3];
    for (x, y, z) in grid.occupied() {
        let c = grid.voxel_center(x, y, z);
        let r: [f64; 3] = std::array::from_fn(|a| c[a] - com[a]);
        let r2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
        for a in 0..3 {
            for b in 0..3 {
                let delta = if a == b { r2 } else { 0.0 };
                i[a][b] += m * (delta - r[a] * r[b]);
            }
        }
    }
    let cube = mass * s * s / 6.0;
    for (a, row) in i.iter_mut().enumerate() {
        row[a] += cube;
    }
    Ok(InertiaResult {
        mass,
        center_of_mass: com,
        inertia: i,
    })
}
