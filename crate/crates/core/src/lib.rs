//! Functionality-driven shape generation for voxelized 3D objects.
//!
//! A variational autoencoder learns latent descriptions of voxel shapes.
//! Averaging the codes of one object class gives the class's functional
//! essence; importance-weighted latent arithmetic then merges essences of
//! classes that provide different functionalities, and geometric affordance
//! tests check the decoded result.

pub mod affordlab;
pub mod arithmetic;
pub mod dataset;
pub mod vae;
pub mod voxcore;
