//! Deterministic geometric affordance tests.
//!
//! Supportability lowers a cube footprint onto the top surface of a shape and
//! accepts the position when the resting contact is flat and surrounds the
//! cube's centroid. Containability drops spheres into the shape one at a time
//! until the next sphere would settle above the shape's top.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::voxcore::VoxelGrid;

#[derive(Debug, thiserror::Error)]
pub enum AffordError {
    #[error("probe footprint of {footprint} voxels does not fit a grid of edge {dim}")]
    FootprintTooLarge { footprint: usize, dim: usize },
    #[error("probe side {side} m is smaller than half a voxel ({voxel} m)")]
    FootprintTooSmall { side: f64, voxel: f64 },
    #[error("invalid probe: {0}")]
    InvalidProbe(String),
    #[error("sphere radius must be positive, got {0}")]
    InvalidRadius(f64),
}

/// Top occupied `y` of every `(x, z)` column (`x + dim * z`), `-1` when empty.
pub fn heightmap(grid: &VoxelGrid) -> Vec<i32> {
    let d = grid.dim();
    let mut h = vec![-1; d * d];
    for (x, y, z) in grid.occupied() {
        let cell = &mut h[x + d * z];
        *cell = (*cell).max(y as i32);
    }
    h
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeProbe {
    /// Edge length in meters.
    pub side: f64,
    pub mass: f64,
    /// Largest accepted height difference under the footprint, in voxels.
    pub flatness_tol: u32,
}

impl Default for CubeProbe {
    fn default() -> Self {
        CubeProbe {
            side: 0.4642,
            mass: 1.0,
            flatness_tol: 1,
        }
    }
}

impl CubeProbe {
    /// Footprint edge in voxels for `grid`.
    pub fn footprint(&self, grid: &VoxelGrid) -> Result<usize, AffordError> {
        if !(self.side > 0.0 && self.side.is_finite()) || !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(AffordError::InvalidProbe(format!("side {} and mass {} must be positive", self.side, self.mass)));
        }
        let fp = (self.side / grid.voxel_size()).round() as usize;
        if fp == 0 {
            return Err(AffordError::FootprintTooSmall {
                side: self.side,
                voxel: grid.voxel_size(),
            });
        }
        if fp > grid.dim() {
            return Err(AffordError::FootprintTooLarge {
                footprint: fp,
                dim: grid.dim(),
            });
        }
        Ok(fp)
    }
}

/// Supported probe positions. Position `(x, z)` is the footprint's lower
/// corner column; `supported[x + size * z]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportabilityMap {
    pub grid_dim: usize,
    pub footprint: usize,
    pub size: usize,
    pub supported: Vec<bool>,
}

impl SupportabilityMap {
    pub fn get(&self, x: usize, z: usize) -> bool {
        self.supported[x + self.size * z]
    }

    pub fn supported_count(&self) -> usize {
        self.supported.iter().filter(|&&s| s).count()
    }

    /// Plain (ASCII) PGM, white where supported, one row per `z`.
    pub fn to_pgm(&self) -> String {
        let mut out = format!("P2\n{} {}\n255\n", self.size, self.size);
        for z in 0..self.size {
            let row: Vec<&str> = (0..self.size)
                .map(|x| if self.get(x, z) { "255" } else { "0" })
                .collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }
}

pub fn supportability_test(grid: &VoxelGrid, probe: &CubeProbe) -> Result<SupportabilityMap, AffordError> {
    let fp = probe.footprint(grid)?;
    let d = grid.dim();
    let h = heightmap(grid);
    let size = d - fp + 1;
    let tol = probe.flatness_tol as i32;
    let mut supported = vec![false; size * size];
    for z0 in 0..size {
        for x0 in 0..size {
            supported[x0 + size * z0] = position_supported(&h, d, fp, x0, z0, tol);
        }
    }
    Ok(SupportabilityMap {
        grid_dim: d,
        footprint: fp,
        size,
        supported,
    })
}

fn position_supported(h: &[i32], d: usize, fp: usize, x0: usize, z0: usize, tol: i32) -> bool {
    let cols = || (z0..z0 + fp).flat_map(move |z| (x0..x0 + fp).map(move |x| (x, z, h[x + d * z])));
    let (mut top, mut low) = (-1, i32::MAX);
    for (_, _, v) in cols().filter(|c| c.2 >= 0) {
        top = top.max(v);
        low = low.min(v);
    }
    if top < 0 || top - low > tol {
        return false;
    }
    if fp == 1 {
        return true;
    }
    // doubled coordinates keep column centers and the centroid integral
    let contact: Vec<(i64, i64)> = cols()
        .filter(|c| c.2 >= 0 && c.2 >= top - tol)
        .map(|(x, z, _)| (x as i64, z as i64))
        .map(|(x, z)| (2 * x + 1, 2 * z + 1))
        .collect();
    let centroid = ((2 * x0 + fp) as i64, (2 * z0 + fp) as i64);
    strictly_inside_hull(&contact, centroid)
}

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Monotone-chain hull (counter-clockwise, collinear points dropped) and a
/// strict interior test. Degenerate hulls contain nothing.
fn strictly_inside_hull(points: &[(i64, i64)], p: (i64, i64)) -> bool {
    let mut pts = points.to_vec();
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return false;
    }
    let mut hull: Vec<(i64, i64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(i64, i64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &q in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0 {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
    }
    if hull.len() < 3 {
        return false;
    }
    (0..hull.len()).all(|i| cross(hull[i], hull[(i + 1) % hull.len()], p) > 0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContainabilityResult {
    pub spheres_placed: usize,
    /// Cubic meters.
    pub contained_volume: f64,
    pub bounding_box_volume: f64,
    pub ratio: f64,
    /// Sphere centers in grid units (voxel edge = 1).
    pub centers: Vec<[f64; 3]>,
}

/// Default sphere radius: a sixteenth of the grid's physical edge.
pub fn default_sphere_radius(grid: &VoxelGrid) -> f64 {
    grid.scale() / 16.0
}

const EPS: f64 = 1e-9;

/// Drops spheres one by one. Each round, every candidate drop column on a
/// half-voxel lattice is lowered until it touches a voxel or a placed sphere;
/// the lowest resting pose wins (ties: smallest `x + z`, then `z`, then `x`).
/// Filling stops when the best pose has its center above the top face of the
/// highest occupied voxel.
pub fn containability_test(grid: &VoxelGrid, sphere_radius: f64) -> Result<ContainabilityResult, AffordError> {
    if !(sphere_radius > 0.0 && sphere_radius.is_finite()) {
        return Err(AffordError::InvalidRadius(sphere_radius));
    }
    let empty = ContainabilityResult {
        spheres_placed: 0,
        contained_volume: 0.0,
        bounding_box_volume: 0.0,
        ratio: 0.0,
        centers: vec![],
    };
    let Some((lo, hi)) = grid.occupied_bounds() else {
        return Ok(empty);
    };
    let vs = grid.voxel_size();
    let bbox_volume: f64 = (0..3).map(|a| (hi[a] - lo[a] + 1) as f64 * vs).product();
    let r = sphere_radius / vs;
    let d = grid.dim();
    let h = heightmap(grid);
    let overflow = (hi[1] + 1) as f64;

    // candidate centers (cx, cz) in half-voxel steps with the sphere inside the grid
    let steps: Vec<f64> = (0..=2 * d).map(|k| k as f64 / 2.0).filter(|&c| c >= r - EPS && c <= d as f64 - r + EPS).collect();
    let mut cand: Vec<(f64, f64, f64)> = Vec::new();
    for &cz in &steps {
        for &cx in &steps {
            if let Some(y) = rest_on_voxels(&h, d, cx, cz, r) {
                cand.push((cx, cz, y));
            }
        }
    }
    let mut centers: Vec<[f64; 3]> = Vec::new();
    loop {
        let best = cand.iter().enumerate().min_by(|(_, a), (_, b)| {
            let by_y = if (a.2 - b.2).abs() <= EPS { std::cmp::Ordering::Equal } else { a.2.total_cmp(&b.2) };
            by_y.then((a.0 + a.1).total_cmp(&(b.0 + b.1)))
                .then(a.1.total_cmp(&b.1))
                .then(a.0.total_cmp(&b.0))
        });
        let Some((_, &(bx, bz, by))) = best else { break };
        if by > overflow + EPS {
            break;
        }
        centers.push([bx, by, bz]);
        for c in cand.iter_mut() {
            let dd = (c.0 - bx).powi(2) + (c.1 - bz).powi(2);
            let reach = 4.0 * r * r - dd;
            if reach > EPS {
                c.2 = c.2.max(by + reach.sqrt());
            }
        }
    }
    let sphere = 4.0 / 3.0 * std::f64::consts::PI * sphere_radius.powi(3);
    let contained = (centers.len() as f64 * sphere).min(bbox_volume);
    Ok(ContainabilityResult {
        spheres_placed: centers.len(),
        contained_volume: contained,
        bounding_box_volume: bbox_volume,
        ratio: contained / bbox_volume,
        centers,
    })
}

/// Center height at first contact with the top of any voxel column, or
/// `None` if the sphere falls past the shape.
fn rest_on_voxels(h: &[i32], d: usize, cx: f64, cz: f64, r: f64) -> Option<f64> {
    let lo_x = (cx - r).floor().max(0.0) as usize;
    let hi_x = ((cx + r).ceil() as usize).min(d);
    let lo_z = (cz - r).floor().max(0.0) as usize;
    let hi_z = ((cz + r).ceil() as usize).min(d);
    let mut best: Option<f64> = None;
    for z in lo_z..hi_z {
        for x in lo_x..hi_x {
            let top = h[x + d * z];
            if top < 0 {
                continue;
            }
            // horizontal distance from the center to the column's square
            let dx = (x as f64 - cx).max(0.0).max(cx - (x + 1) as f64);
            let dz = (z as f64 - cz).max(0.0).max(cz - (z + 1) as f64);
            let reach = r * r - dx * dx - dz * dz;
            if reach > EPS {
                let y = (top + 1) as f64 + reach.sqrt();
                best = Some(best.map_or(y, |b: f64| b.max(y)));
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxcore::QuarterTurn;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Grid with voxel edge 0.1 m.
    fn grid(d: usize) -> VoxelGrid {
        VoxelGrid::empty(d).with_placement([0.0; 3], d as f64 * 0.1)
    }

    fn probe(side_voxels: f64) -> CubeProbe {
        CubeProbe {
            side: side_voxels * 0.1,
            ..CubeProbe::default()
        }
    }

    #[test]
    fn heightmap_examples() {
        assert!(heightmap(&grid(4)).iter().all(|&v| v == -1));
        let mut g = grid(6);
        g.fill_box([0, 5, 0], [6, 6, 6], true);
        assert!(heightmap(&g).iter().all(|&v| v == 5));
        // staircase against a per-column scan
        let mut s = grid(6);
        for x in 0..6 {
            s.fill_box([x, 0, 0], [x + 1, x + 1, 6], true);
        }
        s.set(2, 4, 3, true);
        let h = heightmap(&s);
        for x in 0..6 {
            for z in 0..6 {
                let top = (0..6).rev().find(|&y| s.get(x, y, z)).map_or(-1, |y| y as i32);
                assert_eq!(h[x + 6 * z], top);
            }
        }
    }

    #[test]
    fn flat_slab_is_supported_everywhere_on_it() {
        let mut g = grid(10);
        g.fill_box([2, 3, 2], [8, 4, 8], true);
        let m = supportability_test(&g, &probe(3.0)).unwrap();
        assert_eq!(m.footprint, 3);
        assert_eq!(m.size, 8);
        for z in 0..8 {
            for x in 0..8 {
                let on_slab = x >= 2 && x + 3 <= 8 && z >= 2 && z + 3 <= 8;
                if on_slab {
                    assert!(m.get(x, z), "{x} {z}");
                }
            }
        }
        assert_eq!(m.supported_count(), 16);
    }

    #[test]
    fn spike_is_unsupported() {
        let mut g = grid(7);
        g.fill_box([3, 0, 3], [4, 5, 4], true);
        let m = supportability_test(&g, &probe(3.0)).unwrap();
        assert!(!m.get(2, 2));
        assert_eq!(m.supported_count(), 0);
    }

    #[test]
    fn staircase_is_unsupported() {
        let mut g = grid(6);
        for x in 0..6 {
            g.fill_box([x, 0, 0], [x + 1, x + 1, 6], true);
        }
        let m = supportability_test(&g, &probe(3.0)).unwrap();
        assert_eq!(m.supported_count(), 0);
        // the same stairs pass when the tolerance covers the rise
        let loose = CubeProbe { flatness_tol: 2, ..probe(3.0) };
        assert!(supportability_test(&g, &loose).unwrap().supported_count() > 0);
    }

    #[test]
    fn partial_overhang_needs_contact_around_centroid() {
        // slab covering x < 4: a footprint of 4 with only its left half on
        // the slab has its centroid on the hull boundary
        let mut g = grid(8);
        g.fill_box([0, 0, 0], [4, 1, 8], true);
        let m = supportability_test(&g, &probe(4.0)).unwrap();
        assert!(m.get(0, 0));
        assert!(!m.get(2, 0));
        assert!(m.get(1, 0));
    }

    #[test]
    fn footprint_errors() {
        let g = grid(4);
        assert!(matches!(supportability_test(&g, &probe(5.0)), Err(AffordError::FootprintTooLarge { .. })));
        assert!(supportability_test(&g, &probe(0.2)).is_err());
        let mut one = grid(4);
        one.set(1, 0, 1, true);
        let m = supportability_test(&one, &probe(1.0)).unwrap();
        assert_eq!(m.supported_count(), 1);
    }

    #[test]
    fn pgm_output() {
        let mut g = grid(4);
        g.fill_box([0, 0, 0], [4, 1, 4], true);
        let pgm = supportability_test(&g, &probe(2.0)).unwrap().to_pgm();
        let lines: Vec<&str> = pgm.lines().collect();
        assert_eq!(&lines[..3], &["P2", "3 3", "255"]);
        assert_eq!(lines[3], "255 255 255");
    }

    fn random_grid(occ: Vec<bool>) -> VoxelGrid {
        VoxelGrid::from_occupancy(8, occ, [0.0; 3], 0.8).unwrap()
    }

    proptest! {
        #[test]
        fn supportability_rotates_with_the_grid(occ in proptest::collection::vec(proptest::bool::weighted(0.3), 512)) {
            let g = random_grid(occ);
            let p = probe(3.0);
            let m = supportability_test(&g, &p).unwrap();
            let r = supportability_test(&g.rotate_quarter(QuarterTurn::R90), &p).unwrap();
            for z in 0..m.size {
                for x in 0..m.size {
                    let (rx, rz) = QuarterTurn::R90.apply(m.size, x, z);
                    prop_assert_eq!(m.get(x, z), r.get(rx, rz));
                }
            }
        }

        #[test]
        fn hidden_voxels_do_not_matter(occ in proptest::collection::vec(proptest::bool::weighted(0.3), 512), extra in proptest::collection::vec(0usize..512, 1..40)) {
            let g = random_grid(occ);
            let h = heightmap(&g);
            let mut more = g.clone();
            for e in extra {
                let (x, y, z) = (e % 8, e / 64, (e / 8) % 8);
                if (y as i32) < h[x + 8 * z] {
                    more.set(x, y, z, true);
                }
            }
            let p = probe(3.0);
            prop_assert_eq!(supportability_test(&g, &p).unwrap(), supportability_test(&more, &p).unwrap());
        }
    }

    /// Open box with a one-voxel floor and walls around an interior of
    /// `ix x iy x iz` voxels.
    fn open_box(d: usize, ix: usize, iy: usize, iz: usize) -> VoxelGrid {
        let mut g = grid(d);
        g.fill_box([0, 0, 0], [ix + 2, iy + 1, iz + 2], true);
        g.fill_box([1, 1, 1], [ix + 1, iy + 1, iz + 1], false);
        g
    }

    #[test]
    fn solid_and_empty_hold_nothing() {
        let mut g = grid(8);
        g.fill_box([1, 0, 1], [7, 6, 7], true);
        let r = containability_test(&g, 0.2).unwrap();
        assert_eq!((r.spheres_placed, r.ratio), (0, 0.0));
        assert_eq!(containability_test(&grid(8), 0.2).unwrap().ratio, 0.0);
        assert!(containability_test(&g, 0.0).is_err());
    }

    #[test]
    fn unit_cavity_holds_one_sphere() {
        // interior 4x4x4 voxels, sphere diameter 4 voxels
        let g = open_box(8, 4, 4, 4);
        let r = containability_test(&g, 0.2).unwrap();
        assert_eq!(r.spheres_placed, 1);
        assert_eq!(r.centers[0], [3.0, 3.0, 3.0]);
        let sphere = 4.0 / 3.0 * std::f64::consts::PI * 0.2f64.powi(3);
        let bbox = 0.6 * 0.5 * 0.6;
        assert!((r.bounding_box_volume - bbox).abs() < 1e-12);
        assert!((r.ratio - sphere / bbox).abs() < 1e-12);
    }

    #[test]
    fn two_by_two_cavity_holds_four_spheres() {
        let g = open_box(12, 8, 4, 8);
        let r = containability_test(&g, 0.2).unwrap();
        assert_eq!(r.spheres_placed, 4);
        let mut xz: Vec<(f64, f64)> = r.centers.iter().map(|c| (c[0], c[2])).collect();
        xz.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(xz, vec![(3.0, 3.0), (3.0, 7.0), (7.0, 3.0), (7.0, 7.0)]);
        assert!(r.centers.iter().all(|c| c[1] == 3.0));
        let sphere = 4.0 / 3.0 * std::f64::consts::PI * 0.2f64.powi(3);
        let bbox = 1.0 * 0.5 * 1.0;
        assert!((r.ratio - 4.0 * sphere / bbox).abs() < 1e-12);
    }

    fn nested_cups() -> VoxelGrid {
        let mut g = grid(16);
        g.fill_box([0, 0, 0], [16, 12, 16], true);
        g.fill_box([1, 1, 1], [15, 12, 15], false);
        g.fill_box([4, 1, 4], [12, 6, 12], true);
        g.fill_box([5, 1, 5], [11, 6, 11], false);
        g
    }

    #[test]
    fn bigger_spheres_never_raise_the_count() {
        for g in [nested_cups(), open_box(16, 12, 12, 12), open_box(16, 6, 12, 6)] {
            let mut last = usize::MAX;
            for k in 5..=60 {
                let r = containability_test(&g, k as f64 * 0.01).unwrap();
                assert!(r.spheres_placed <= last, "radius {}: {} > {last}", k as f64 * 0.01, r.spheres_placed);
                last = r.spheres_placed;
            }
        }
    }

    #[test]
    fn ratio_grows_between_count_steps() {
        // same count, larger spheres: the ratio scales with the cube of the radius
        let g = nested_cups();
        let a = containability_test(&g, 0.40).unwrap();
        let b = containability_test(&g, 0.41).unwrap();
        assert_eq!(a.spheres_placed, b.spheres_placed);
        assert_relative_eq!(b.ratio / a.ratio, (0.41f64 / 0.40).powi(3), max_relative = 1e-12);
    }

    #[test]
    fn deterministic() {
        let g = open_box(12, 8, 5, 6);
        assert_eq!(containability_test(&g, 0.15).unwrap(), containability_test(&g, 0.15).unwrap());
    }
}
