use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Cubic binary occupancy volume.
///
/// Voxel `(x, y, z)` lives at flat index `x + dim * (z + dim * y)`: x runs
/// fastest, then z, then y. The y axis is vertical. A continuous grid
/// coordinate `g` in `[0, dim]` maps to the physical point
/// `translate + g * scale / dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    dim: usize,
    occupancy: Vec<bool>,
    pub translate: [f64; 3],
    scale: f64,
}

/// Rotation about the vertical axis in multiples of 90 degrees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QuarterTurn {
    R0,
    R90,
    R180,
    R270,
}

impl QuarterTurn {
    pub const ALL: [QuarterTurn; 4] = [Self::R0, Self::R90, Self::R180, Self::R270];

    pub fn count(self) -> usize {
        match self {
            Self::R0 => 0,
            Self::R90 => 1,
            Self::R180 => 2,
            Self::R270 => 3,
        }
    }

    /// Image of column `(x, z)` in a grid of edge `dim`.
    ///
    /// One quarter turn maps `(x, z) -> (z, dim - 1 - x)`.
    pub fn apply(self, dim: usize, x: usize, z: usize) -> (usize, usize) {
        let (mut x, mut z) = (x, z);
        for _ in 0..self.count() {
            (x, z) = (z, dim - 1 - x);
        }
        (x, z)
    }
}

impl VoxelGrid {
    /// All-empty grid spanning the unit cube at the origin.
    pub fn empty(dim: usize) -> Self {
        assert!(dim >= 1, "grid edge must be positive");
        VoxelGrid {
            dim,
            occupancy: vec![false; dim * dim * dim],
            translate: [0.0; 3],
            scale: 1.0,
        }
    }

    pub fn full(dim: usize) -> Self {
        let mut g = Self::empty(dim);
        g.occupancy.fill(true);
        g
    }

    pub fn from_occupancy(
        dim: usize,
        occupancy: Vec<bool>,
        translate: [f64; 3],
        scale: f64,
    ) -> Result<Self, GeometryError> {
        if dim == 0 {
            return Err(GeometryError::InvalidGrid("dim must be at least 1".into()));
        }
        if occupancy.len() != dim * dim * dim {
            return Err(GeometryError::InvalidGrid(format!(
                "occupancy has {} values, expected {}",
                occupancy.len(),
                dim * dim * dim
            )));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(GeometryError::InvalidGrid(format!("scale must be positive, got {scale}")));
        }
        if translate.iter().any(|t| !t.is_finite()) {
            return Err(GeometryError::InvalidGrid("translate must be finite".into()));
        }
        Ok(VoxelGrid {
            dim,
            occupancy,
            translate,
            scale,
        })
    }

    pub fn with_placement(mut self, translate: [f64; 3], scale: f64) -> Self {
        assert!(scale.is_finite() && scale > 0.0);
        self.translate = translate;
        self.scale = scale;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn voxel_size(&self) -> f64 {
        self.scale / self.dim as f64
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupancy
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dim * (z + self.dim * y)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.occupancy[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = self.index(x, y, z);
        self.occupancy[i] = value;
    }

    /// Fills the inclusive-exclusive box `lo..hi` (clamped to the grid).
    pub fn fill_box(&mut self, lo: [usize; 3], hi: [usize; 3], value: bool) {
        let d = self.dim;
        for y in lo[1]..hi[1].min(d) {
            for z in lo[2]..hi[2].min(d) {
                for x in lo[0]..hi[0].min(d) {
                    self.set(x, y, z, value);
                }
            }
        }
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.iter().filter(|&&v| v).count()
    }

    pub fn occupancy_fraction(&self) -> f64 {
        self.occupied_count() as f64 / self.occupancy.len() as f64
    }

    /// Iterates `(x, y, z)` of occupied voxels in storage order.
    pub fn occupied(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let d = self.dim;
        self.occupancy
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(move |(i, _)| (i % d, i / (d * d), (i / d) % d))
    }

    /// Inclusive index bounds `(min, max)` of the occupied voxels.
    pub fn occupied_bounds(&self) -> Option<([usize; 3], [usize; 3])> {
        self.occupied().fold(None, |acc, (x, y, z)| {
            let p = [x, y, z];
            Some(match acc {
                None => (p, p),
                Some((lo, hi)) => (
                    [lo[0].min(x), lo[1].min(y), lo[2].min(z)],
                    [hi[0].max(x), hi[1].max(y), hi[2].max(z)],
                ),
            })
        })
    }

    /// Physical center of voxel `(x, y, z)`.
    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        let h = self.voxel_size();
        [
            self.translate[0] + (x as f64 + 0.5) * h,
            self.translate[1] + (y as f64 + 0.5) * h,
            self.translate[2] + (z as f64 + 0.5) * h,
        ]
    }

    pub fn rotate_quarter(&self, turns: QuarterTurn) -> VoxelGrid {
        if turns == QuarterTurn::R0 {
            return self.clone();
        }
        let d = self.dim;
        let mut out = VoxelGrid {
            occupancy: vec![false; self.occupancy.len()],
            ..self.clone()
        };
        for (x, y, z) in self.occupied() {
            let (rx, rz) = turns.apply(d, x, z);
            out.set(rx, y, rz, true);
        }
        out
    }

    /// Intersection over union of the occupied sets; two empty grids give 1.
    pub fn iou(&self, other: &VoxelGrid) -> f64 {
        assert_eq!(self.dim, other.dim, "IoU needs equal grid sizes");
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.occupancy.iter().zip(&other.occupancy) {
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Real-valued volume sharing the grid layout, e.g. decoder probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityGrid {
    pub dim: usize,
    pub values: Vec<f64>,
    pub translate: [f64; 3],
    pub scale: f64,
}

impl DensityGrid {
    pub fn new(dim: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), dim * dim * dim);
        DensityGrid {
            dim,
            values,
            translate: [0.0; 3],
            scale: 1.0,
        }
    }

    pub fn threshold(&self, iso: f64) -> VoxelGrid {
        VoxelGrid {
            dim: self.dim,
            occupancy: self.values.iter().map(|&v| v > iso).collect(),
            translate: self.translate,
            scale: self.scale,
        }
    }
}

impl From<&VoxelGrid> for DensityGrid {
    fn from(g: &VoxelGrid) -> Self {
        DensityGrid {
            dim: g.dim,
            values: g.occupancy.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(),
            translate: g.translate,
            scale: g.scale,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid_strategy(max_dim: usize) -> impl Strategy<Value = VoxelGrid> {
        (1..=max_dim).prop_flat_map(|d| {
            proptest::collection::vec(any::<bool>(), d * d * d)
                .prop_map(move |occ| VoxelGrid::from_occupancy(d, occ, [0.0; 3], 1.0).unwrap())
        })
    }

    #[test]
    fn fraction_edge_cases() {
        assert_eq!(VoxelGrid::empty(4).occupancy_fraction(), 0.0);
        assert_eq!(VoxelGrid::full(4).occupancy_fraction(), 1.0);
        let mut slab = VoxelGrid::empty(8);
        slab.fill_box([0, 0, 0], [8, 4, 8], true);
        assert_eq!(slab.occupancy_fraction(), 0.5);
    }

    #[test]
    fn single_voxel_rotation_follows_index_permutation() {
        let d = 5;
        let (x, y, z) = (1, 3, 0);
        let mut g = VoxelGrid::empty(d);
        g.set(x, y, z, true);
        let r = g.rotate_quarter(QuarterTurn::R90);
        // integer rotation matrix [[0, 1], [-1, 0]] on (x, z), shifted back into range
        let (ex, ez) = (z as i64, -(x as i64) + (d as i64 - 1));
        assert_eq!(r.occupied().collect::<Vec<_>>(), vec![(ex as usize, y, ez as usize)]);
    }

    #[test]
    fn identity_rotation() {
        let mut g = VoxelGrid::empty(3);
        g.set(0, 1, 2, true);
        assert_eq!(g.rotate_quarter(QuarterTurn::R0), g);
    }

    #[test]
    fn rejects_bad_occupancy_length() {
        assert!(VoxelGrid::from_occupancy(2, vec![false; 7], [0.0; 3], 1.0).is_err());
        assert!(VoxelGrid::from_occupancy(2, vec![false; 8], [0.0; 3], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn rotation_preserves_count_and_cycles(g in grid_strategy(6)) {
            let mut r = g.clone();
            for t in QuarterTurn::ALL {
                prop_assert_eq!(g.rotate_quarter(t).occupied_count(), g.occupied_count());
            }
            for _ in 0..4 {
                r = r.rotate_quarter(QuarterTurn::R90);
            }
            prop_assert_eq!(r, g);
        }
    }
}
