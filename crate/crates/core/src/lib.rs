//! Registration of a triangulated 3D model over a single photograph, and
//! model-guided sub-segmentation of the imaged object into named parts.
//!
//! The crate is organised as a pipeline of pure, deterministic stages:
//!
//! * [`mesh`] — triangle meshes with named parts, a Wavefront OBJ subset
//!   parser/writer, and wheel-datum metadata used to anchor poses.
//! * [`pose`] — the seven-parameter pose (rear-wheel centre, wheel-to-wheel
//!   vector, axle direction, perspective distance) and its closed-form
//!   conversion to a camera transform.
//! * [`raster`] — a z-buffered software rasterizer producing per-pixel
//!   surface normals, part identifiers, and depth.
//! * [`imgproc`] — grids, gradients, binomial pyramids, Pearson correlation,
//!   and disc morphology.
//! * [`registration`] — the gradient-correlation loss and a coarse-to-fine
//!   Nelder–Mead optimizer over pose space.
//! * [`levelset`] — geodesic active-contour evolution used to refine part
//!   outlines against image edges.
//! * [`scene`] / [`pipeline`] — synthetic test scenes, per-part segmentation,
//!   the accuracy metric, and loss-landscape sweeps.
//!
//! Everything here is `no_std`-compatible (with `alloc`); file formats and
//! the command-line front end live in the companion `modelseg` crate.
//!
//! Image coordinates are `(x, y)` with `x` growing left to right and `y` top
//! to bottom. Camera space keeps that orientation and points `z` into the
//! scene, so depth grows away from the viewer.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod grid;
pub mod imgproc;
pub mod levelset;
pub mod mesh;
mod obj;
pub mod pipeline;
pub mod pose;
pub mod raster;
pub mod registration;
pub mod scene;

pub use grid::{BinaryGrid, IdGrid, ImageGrid};
pub use mesh::{CarModelDatum, MeshError, TriangleMesh, ValidationWarning};
pub use obj::{parse_obj, write_obj};
pub use pose::{pose_to_transform, CameraTransform, FullPose, PoseError, RoughPose};
pub use levelset::{
    edge_function, evolve, init_phi, shoelace_area, EvolveReport, LevelSetError, LevelSetField,
    LevelSetParams,
};
pub use raster::{render_mesh, Framebuffer, RasterError, RenderOptions};
pub use registration::{
    background_mask, coarse_to_fine_register, coarse_to_fine_register_full, evaluate_pose_loss,
    photo_gradient_at_level,
    gradient_loss, initial_f, nelder_mead, LossConfig, RegError, RegistrationOutcome,
    SimplexConfig, TraceEvent,
};
pub use pipeline::{
    accuracy, count_strict_local_minima, prepare_segmentation, resolve_part, segment_part,
    segment_parts, sweep_landscape, PartSegmentation, PipelineError, SegmentationContext,
    SegmentationParams, SkipReason, SweepPoint, POSE_COMPONENTS,
};
pub use scene::{
    shade, standard_light, standard_pose, standard_scene, synth_photo, toy_car, Background,
    SceneError, SceneSpec, SynthScene,
};
