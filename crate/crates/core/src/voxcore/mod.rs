//! Voxel and mesh geometry kernel.

mod binvox;
mod grid;
mod inertia;
mod marching_cubes;
mod mesh;
mod sdf;
mod voxelize;

pub use binvox::{read_binvox, rle_decode, rle_encode, write_binvox};
pub use grid::{DensityGrid, QuarterTurn, VoxelGrid};
pub use inertia::{inertia_of, InertiaResult};
pub use marching_cubes::{case_table, marching_cubes, marching_cubes_binary};
pub use mesh::{parse_off, Point3, TriMesh};
pub use sdf::{export_sdf, SdfExport};
pub use voxelize::{triangle_hits_cell, voxelize, voxelize_with, GridFit, VoxelizeOptions};

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("OFF line {line}: {msg}")]
    Off { line: usize, msg: String },
    #[error("binvox: {0}")]
    Binvox(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("mesh bounding box has zero extent on every axis")]
    DegenerateMesh,
    #[error("grid has no occupied voxels")]
    EmptyGrid,
    #[error("{0}")]
    InvalidArgument(String),
}
