//! Procedural desk-scale class generators.

use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::voxcore::VoxelGrid;

/// Inclusive integer range, serialized as `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntRange(pub usize, pub usize);

impl IntRange {
    pub fn lo(self) -> usize {
        self.0
    }

    pub fn hi(self) -> usize {
        self.1
    }

    fn sample(self, rng: &mut impl Rng) -> usize {
        rng.random_range(self.0..=self.1)
    }

    fn check(self, name: &str) -> Result<(), String> {
        if self.0 == 0 || self.0 > self.1 {
            Err(format!("{name} range [{}, {}] is empty or starts at zero", self.0, self.1))
        } else {
            Ok(())
        }
    }

    /// Range rescaled from a 32-voxel reference grid to `dim`.
    fn scaled(self, dim: usize) -> IntRange {
        let s = |v: usize| ((v * dim + 16) / 32).max(1);
        IntRange(s(self.0), s(self.1))
    }
}

/// Shape family and its parameter ranges, all in voxels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    /// Flat top slab on legs.
    Table {
        width: IntRange,
        depth: IntRange,
        leg_height: IntRange,
        slab_thickness: IntRange,
        leg_count: IntRange,
    },
    /// Seat slab on legs with a backrest along the far `z` edge.
    Chair {
        width: IntRange,
        depth: IntRange,
        leg_height: IntRange,
        back_height: IntRange,
        slab_thickness: IntRange,
        leg_count: IntRange,
    },
    /// Open hollow box.
    Tub {
        width: IntRange,
        depth: IntRange,
        cavity_depth: IntRange,
        wall_thickness: IntRange,
    },
    /// Thin vertical panel on a neck and base plate.
    Monitor {
        width: IntRange,
        panel_height: IntRange,
        slab_thickness: IntRange,
        stand_height: IntRange,
        base_depth: IntRange,
    },
}

impl Generator {
    pub fn desk_table() -> Self {
        Generator::Table {
            width: IntRange(18, 24),
            depth: IntRange(12, 16),
            leg_height: IntRange(10, 13),
            slab_thickness: IntRange(2, 3),
            leg_count: IntRange(4, 4),
        }
    }

    pub fn desk_chair() -> Self {
        Generator::Chair {
            width: IntRange(10, 14),
            depth: IntRange(10, 14),
            leg_height: IntRange(7, 10),
            back_height: IntRange(8, 12),
            slab_thickness: IntRange(1, 2),
            leg_count: IntRange(4, 4),
        }
    }

    pub fn desk_tub() -> Self {
        Generator::Tub {
            width: IntRange(18, 24),
            depth: IntRange(12, 18),
            cavity_depth: IntRange(6, 10),
            wall_thickness: IntRange(1, 2),
        }
    }

    pub fn desk_monitor() -> Self {
        Generator::Monitor {
            width: IntRange(16, 22),
            panel_height: IntRange(10, 14),
            slab_thickness: IntRange(1, 2),
            stand_height: IntRange(4, 6),
            base_depth: IntRange(6, 8),
        }
    }

    /// Same family with every size range (not the leg count) rescaled from
    /// a 32-voxel grid to `dim`.
    pub fn scaled(&self, dim: usize) -> Self {
        let mut g = self.clone();
        match &mut g {
            Generator::Table { width, depth, leg_height, slab_thickness, .. } => {
                for r in [width, depth, leg_height, slab_thickness] {
                    *r = r.scaled(dim);
                }
            }
            Generator::Chair { width, depth, leg_height, back_height, slab_thickness, .. } => {
                for r in [width, depth, leg_height, back_height, slab_thickness] {
                    *r = r.scaled(dim);
                }
            }
            Generator::Tub { width, depth, cavity_depth, wall_thickness } => {
                for r in [width, depth, cavity_depth, wall_thickness] {
                    *r = r.scaled(dim);
                }
            }
            Generator::Monitor { width, panel_height, slab_thickness, stand_height, base_depth } => {
                for r in [width, panel_height, slab_thickness, stand_height, base_depth] {
                    *r = r.scaled(dim);
                }
            }
        }
        g
    }

    fn ranges(&self) -> Vec<(&'static str, IntRange)> {
        match *self {
            Generator::Table { width, depth, leg_height, slab_thickness, leg_count } => vec![
                ("width", width),
                ("depth", depth),
                ("leg_height", leg_height),
                ("slab_thickness", slab_thickness),
                ("leg_count", leg_count),
            ],
            Generator::Chair { width, depth, leg_height, back_height, slab_thickness, leg_count } => vec![
                ("width", width),
                ("depth", depth),
                ("leg_height", leg_height),
                ("back_height", back_height),
                ("slab_thickness", slab_thickness),
                ("leg_count", leg_count),
            ],
            Generator::Tub { width, depth, cavity_depth, wall_thickness } => vec![
                ("width", width),
                ("depth", depth),
                ("cavity_depth", cavity_depth),
                ("wall_thickness", wall_thickness),
            ],
            Generator::Monitor { width, panel_height, slab_thickness, stand_height, base_depth } => vec![
                ("width", width),
                ("panel_height", panel_height),
                ("slab_thickness", slab_thickness),
                ("stand_height", stand_height),
                ("base_depth", base_depth),
            ],
        }
    }

    /// Checks the ranges and that the largest sample fits a grid of edge `dim`.
    pub fn validate(&self, dim: usize) -> Result<(), DatasetError> {
        for (name, r) in self.ranges() {
            r.check(name).map_err(DatasetError::InvalidSpec)?;
        }
        let out = |what: String| Err(DatasetError::OutOfBounds { dim, what });
        match *self {
            Generator::Table { width, depth, leg_count, .. } | Generator::Chair { width, depth, leg_count, .. } => {
                if leg_count.hi() > 4 {
                    return Err(DatasetError::InvalidSpec(format!("at most 4 legs, got {}", leg_count.hi())));
                }
                if width.lo() < 2 * leg_side(width.lo(), depth.lo()) + 1 || depth.lo() < 2 * leg_side(width.lo(), depth.lo()) + 1 {
                    return Err(DatasetError::InvalidSpec("slab too small for its legs".into()));
                }
            }
            Generator::Tub { width, depth, wall_thickness, .. } => {
                if width.lo() <= 2 * wall_thickness.hi() || depth.lo() <= 2 * wall_thickness.hi() {
                    return Err(DatasetError::InvalidSpec("walls leave no cavity".into()));
                }
            }
            Generator::Monitor { base_depth, slab_thickness, .. } => {
                if base_depth.lo() < slab_thickness.hi() {
                    return Err(DatasetError::InvalidSpec("base shallower than the panel".into()));
                }
            }
        }
        let [x, y, z] = self.max_extent();
        if x > dim || y > dim || z > dim {
            return out(format!("largest sample spans {x}x{y}x{z} voxels"));
        }
        Ok(())
    }

    /// Largest `(x, y, z)` extent any sample can have.
    fn max_extent(&self) -> [usize; 3] {
        match *self {
            Generator::Table { width, depth, leg_height, slab_thickness, .. } => {
                [width.hi(), leg_height.hi() + slab_thickness.hi(), depth.hi()]
            }
            Generator::Chair { width, depth, leg_height, back_height, slab_thickness, .. } => {
                [width.hi(), leg_height.hi() + slab_thickness.hi() + back_height.hi(), depth.hi()]
            }
            Generator::Tub { width, depth, cavity_depth, wall_thickness } => {
                [width.hi(), cavity_depth.hi() + wall_thickness.hi(), depth.hi()]
            }
            Generator::Monitor { width, panel_height, slab_thickness, stand_height, base_depth } => {
                [width.hi(), slab_thickness.hi() + stand_height.hi() + panel_height.hi(), base_depth.hi()]
            }
        }
    }

    /// Draws one shape centered in a grid of edge `dim`. Call `validate` first.
    pub(crate) fn sample(&self, dim: usize, rng: &mut impl Rng) -> VoxelGrid {
        let mut g = VoxelGrid::empty(dim);
        match *self {
            Generator::Table { width, depth, leg_height, slab_thickness, leg_count } => {
                let (w, dp, lh, t, n) = (
                    width.sample(rng),
                    depth.sample(rng),
                    leg_height.sample(rng),
                    slab_thickness.sample(rng),
                    leg_count.sample(rng),
                );
                let o = origin(dim, [w, lh + t, dp]);
                g.fill_box([o[0], o[1] + lh, o[2]], [o[0] + w, o[1] + lh + t, o[2] + dp], true);
                legs(&mut g, o, w, dp, lh, n);
            }
            Generator::Chair { width, depth, leg_height, back_height, slab_thickness, leg_count } => {
                let (w, dp, lh, bh, t, n) = (
                    width.sample(rng),
                    depth.sample(rng),
                    leg_height.sample(rng),
                    back_height.sample(rng),
                    slab_thickness.sample(rng),
                    leg_count.sample(rng),
                );
                let o = origin(dim, [w, lh + t + bh, dp]);
                let seat_top = o[1] + lh + t;
                g.fill_box([o[0], o[1] + lh, o[2]], [o[0] + w, seat_top, o[2] + dp], true);
                g.fill_box([o[0], seat_top, o[2] + dp - t], [o[0] + w, seat_top + bh, o[2] + dp], true);
                legs(&mut g, o, w, dp, lh, n);
            }
            Generator::Tub { width, depth, cavity_depth, wall_thickness } => {
                let (w, dp, c, t) = (
                    width.sample(rng),
                    depth.sample(rng),
                    cavity_depth.sample(rng),
                    wall_thickness.sample(rng),
                );
                let o = origin(dim, [w, c + t, dp]);
                let top = o[1] + c + t;
                g.fill_box(o, [o[0] + w, top, o[2] + dp], true);
                g.fill_box([o[0] + t, o[1] + t, o[2] + t], [o[0] + w - t, top, o[2] + dp - t], false);
            }
            Generator::Monitor { width, panel_height, slab_thickness, stand_height, base_depth } => {
                let (w, ph, t, sh, bd) = (
                    width.sample(rng),
                    panel_height.sample(rng),
                    slab_thickness.sample(rng),
                    stand_height.sample(rng),
                    base_depth.sample(rng),
                );
                let o = origin(dim, [w, t + sh + ph, bd]);
                let bw = (w / 2).max(1);
                let bx = o[0] + (w - bw) / 2;
                g.fill_box([bx, o[1], o[2]], [bx + bw, o[1] + t, o[2] + bd], true);
                let neck = (w / 8).clamp(1, bw);
                let nx = o[0] + (w - neck) / 2;
                let pz = o[2] + (bd - t) / 2;
                g.fill_box([nx, o[1] + t, pz], [nx + neck, o[1] + t + sh, pz + t], true);
                g.fill_box([o[0], o[1] + t + sh, pz], [o[0] + w, o[1] + t + sh + ph, pz + t], true);
            }
        }
        g
    }
}

fn origin(dim: usize, extent: [usize; 3]) -> [usize; 3] {
    extent.map(|e| (dim - e) / 2)
}

fn leg_side(w: usize, dp: usize) -> usize {
    (w.min(dp) + 4) / 8
}

/// Legs below a slab whose lower corner is `o`, occupying `y` in
/// `[o.y, o.y + height)`. One leg is a central pedestal, two are end panels,
/// three stand at the front corners and the back middle, four at the corners.
fn legs(g: &mut VoxelGrid, o: [usize; 3], w: usize, dp: usize, height: usize, count: usize) {
    let s = leg_side(w, dp).max(1);
    let (y0, y1) = (o[1], o[1] + height);
    let (x_lo, x_hi, x_mid) = (o[0], o[0] + w - s, o[0] + (w - s) / 2);
    let (z_lo, z_hi) = (o[2], o[2] + dp - s);
    let mut post = |x: usize, z: usize, sx: usize, sz: usize| g.fill_box([x, y0, z], [x + sx, y1, z + sz], true);
    match count {
        1 => {
            let p = 2 * s;
            post(o[0] + (w - p) / 2, o[2] + (dp - p) / 2, p, p);
        }
        2 => {
            post(x_lo, z_lo + s, s, dp - 2 * s);
            post(x_hi, z_lo + s, s, dp - 2 * s);
        }
        3 => {
            post(x_lo, z_lo, s, s);
            post(x_hi, z_lo, s, s);
            post(x_mid, z_hi, s, s);
        }
        _ => {
            for (x, z) in [(x_lo, z_lo), (x_hi, z_lo), (x_lo, z_hi), (x_hi, z_hi)] {
                post(x, z, s, s);
            }
        }
    }
}
