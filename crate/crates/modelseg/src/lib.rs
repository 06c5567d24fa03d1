//! Registers a triangulated 3D model over a photograph and sub-segments
//! the imaged object into its named model parts — the IO, orchestration,
//! and command-line layer over the [`modelseg_core`] numerics.
//!
//! - [`io`]: pose / metrics / contour JSON, PNG and raw-grid images,
//!   sweep CSV, OBJ meshes with wheel-datum sidecars, all written
//!   atomically.
//! - [`overlay`]: inspection renders with reserved curve colors.
//! - [`runner`]: the end-to-end pipeline (background suppression →
//!   coarse-to-fine registration → concurrent per-part segmentation).
//! - [`cli`]: the `modelseg` binary's subcommands.

pub mod cli;
pub mod io;
pub mod overlay;
pub mod runner;

pub use modelseg_core;
