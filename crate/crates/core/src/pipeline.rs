//! Model-guided part segmentation and its evaluation.
//!
//! Given a photograph and a registered pose, each named part of the mesh is
//! segmented in image space: the part's projected outline is filled and
//! eroded into a seed region that sits strictly inside the part, a signed
//! band field is built from the seed, and the band is evolved outward by the
//! geodesic active contour in [`crate::levelset`] until it locks onto the
//! photograph's brightness edges. Parts that project to nothing (occluded or
//! out of frame) or that erosion wipes out entirely are reported as skipped
//! rather than failing the run.
//!
//! The module also houses the segmentation [`accuracy`] score and
//! [`sweep_landscape`], which samples the registration loss along one pose
//! component to expose the shape of the loss landscape around a pose.

use alloc::string::String;
use alloc::vec::Vec;
use alloc::vec;

use crate::grid::{BinaryGrid, ImageGrid};
use crate::imgproc::{self, ImgError};
use crate::levelset::{edge_function, evolve, init_phi, LevelSetError, LevelSetParams};
use crate::mesh::{CarModelDatum, TriangleMesh};
use crate::pose::{pose_to_transform, FullPose, PoseError};
use crate::raster::{render_mesh, Framebuffer, RasterError, RenderOptions};
use crate::registration::{evaluate_pose_loss, LossConfig, RegError};

/// Errors raised by segmentation and evaluation.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    /// A requested part name is not defined on the mesh.
    #[error("unknown part `{name}`; available parts: {available}")]
    UnknownPart {
        /// The name that failed to resolve.
        name: String,
        /// Comma-separated list of the parts the mesh does define.
        available: String,
    },
    /// Result and ground-truth grids have different dimensions.
    #[error("mask shapes differ")]
    ShapeMismatch,
    /// The ground-truth mask is empty, so accuracy is undefined.
    #[error("ground truth mask is empty; accuracy is undefined")]
    EmptyTruth,
    /// The photo is not a single-channel grid matching the render size.
    #[error("photo must be a nonempty single-channel grid")]
    BadPhoto,
    /// Invalid sweep request.
    #[error("invalid sweep: {0}")]
    BadSweep(&'static str),
    /// Pose conversion failed.
    #[error(transparent)]
    Pose(#[from] PoseError),
    /// Rasterization failed.
    #[error(transparent)]
    Raster(#[from] RasterError),
    /// Contour evolution failed.
    #[error(transparent)]
    LevelSet(#[from] LevelSetError),
    /// Image processing failed.
    #[error(transparent)]
    Image(#[from] ImgError),
    /// Loss evaluation failed.
    #[error(transparent)]
    Registration(#[from] RegError),
}

/// Segmentation accuracy `a = 1 - sum|R - G| / sum G`.
///
/// `1` is a perfect match, `0` is what an empty result scores, and values
/// below zero mean the result disagrees with the truth on more pixels than
/// the truth contains. The truth mask must be nonempty and both grids must
/// share dimensions.
pub fn accuracy(result: &BinaryGrid, truth: &BinaryGrid) -> Result<f64, PipelineError> {
    if result.width() != truth.width() || result.height() != truth.height() {
        return Err(PipelineError::ShapeMismatch);
    }
    let truth_size = truth.count_ones();
    if truth_size == 0 {
        return Err(PipelineError::EmptyTruth);
    }
    let differing = result.count_differing(truth);
    Ok(1.0 - differing as f64 / truth_size as f64)
}

/// Why a part produced no segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    /// The part projects to no pixels at this pose (occluded or off-frame).
    EmptyProjection,
    /// The projected region was thinner than the erosion radius everywhere.
    ErosionEmptiedRegion,
}

impl SkipReason {
    /// Stable human-readable label used in reports.
    pub fn as_str(self) -> &'static str {
        match self {
            SkipReason::EmptyProjection => "empty projection",
            SkipReason::ErosionEmptiedRegion => "erosion emptied region",
        }
    }
}

impl core::fmt::Display for SkipReason {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Tuning for model-guided part segmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationParams {
    /// Radius (pixels) by which the filled projection is eroded to build the
    /// seed region. Must exceed the worst expected registration error so
    /// the seed starts inside the true part. `None` scales a 3-pixel radius
    /// by `image diagonal / 800`.
    pub erode_radius: Option<f64>,
    /// Band magnitude of the initial signed field.
    pub band_rho: f64,
    /// Gaussian blur applied to the photo before the edge map.
    pub edge_sigma: f64,
    /// Exponent of the edge-stopping function.
    pub edge_exponent: u32,
    /// Padding (pixels) around the seed's bounding box for the evolution
    /// crop; must leave room for the front to expand past the projection.
    pub crop_margin: usize,
    /// Contour evolution settings.
    pub levelset: LevelSetParams,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        SegmentationParams {
            erode_radius: None,
            band_rho: 2.0,
            edge_sigma: 1.5,
            edge_exponent: 2,
            crop_margin: 32,
            levelset: LevelSetParams::default(),
        }
    }
}

/// Segmentation output for one part.
#[derive(Debug, Clone, PartialEq)]
pub struct PartSegmentation {
    /// Part name as defined on the mesh.
    pub name: String,
    /// Projected outline of the part at the registered pose.
    pub projected_outline: BinaryGrid,
    /// Seed region (filled outline, eroded) the contour grew from.
    pub initial_region: BinaryGrid,
    /// Final segmented mask; empty when the part was skipped.
    pub mask: BinaryGrid,
    /// Closed polylines tracing the final mask boundary, in photo
    /// coordinates.
    pub contours: Vec<Vec<(f64, f64)>>,
    /// Present when no evolution ran for this part.
    pub skipped: Option<SkipReason>,
    /// Evolution steps actually taken.
    pub iterations: usize,
    /// Whether the evolution settled before its iteration cap.
    pub converged: bool,
}

/// Shared per-photo state for segmenting any number of parts: the model
/// rendered once at the registered pose, and the photo's edge-stopping map.
/// Per-part segmentations read from this context independently, so callers
/// may run them concurrently.
#[derive(Debug, Clone)]
pub struct SegmentationContext {
    /// The model rendered at the registered pose.
    pub frame: Framebuffer,
    /// Edge-stopping map of the photograph.
    pub edge: ImageGrid,
}

/// Renders the mesh at `pose` and computes the photo's edge map.
pub fn prepare_segmentation(
    photo: &ImageGrid,
    mesh: &TriangleMesh,
    datum: &CarModelDatum,
    pose: &FullPose,
    params: &SegmentationParams,
) -> Result<SegmentationContext, PipelineError> {
    if photo.width() == 0 || photo.height() == 0 {
        return Err(PipelineError::BadPhoto);
    }
    let transform = pose_to_transform(datum, pose)?;
    let options = RenderOptions {
        cull_backfaces: true,
        smooth_normals: false,
    };
    let frame = render_mesh(mesh, &transform, photo.width(), photo.height(), &options)?;
    let edge = edge_function(photo, params.edge_sigma, params.edge_exponent)?;
    Ok(SegmentationContext { frame, edge })
}

fn crop_window(region: &BinaryGrid, margin: usize) -> (usize, usize, usize, usize) {
    let (w, h) = (region.width(), region.height());
    let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            if region.get(x, y) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    let x0 = x0.saturating_sub(margin);
    let y0 = y0.saturating_sub(margin);
    let x1 = (x1 + margin + 1).min(w);
    let y1 = (y1 + margin + 1).min(h);
    (x0, y0, x1, y1)
}

/// Segments a single part against the shared context.
///
/// The part id must come from the same mesh the context was prepared with.
pub fn segment_part(
    ctx: &SegmentationContext,
    name: &str,
    part_id: u16,
    params: &SegmentationParams,
) -> Result<PartSegmentation, PipelineError> {
    let (w, h) = (ctx.frame.width(), ctx.frame.height());
    let outline = ctx.frame.part_outline(part_id);
    let skipped = |outline: BinaryGrid, region: BinaryGrid, reason: SkipReason| PartSegmentation {
        name: String::from(name),
        projected_outline: outline,
        initial_region: region,
        mask: BinaryGrid::new(w, h),
        contours: Vec::new(),
        skipped: Some(reason),
        iterations: 0,
        converged: true,
    };
    if !ctx.frame.part_mask(part_id).any() {
        return Ok(skipped(
            outline,
            BinaryGrid::new(w, h),
            SkipReason::EmptyProjection,
        ));
    }
    let filled = imgproc::fill_outline(&outline);
    let radius = params.erode_radius.unwrap_or_else(|| {
        3.0 * ((w * w + h * h) as f64).sqrt() / 800.0
    });
    let region = imgproc::erode(&filled, radius)?;
    if !region.any() {
        return Ok(skipped(outline, region, SkipReason::ErosionEmptiedRegion));
    }

    // Evolve on a padded crop around the seed: the front only ever travels
    // a registration error plus an edge-lock distance beyond the projection,
    // so the rest of the photo is dead weight.
    let (x0, y0, x1, y1) = crop_window(&region, params.crop_margin);
    let (cw, ch) = (x1 - x0, y1 - y0);
    let seed = BinaryGrid::from_fn(cw, ch, |x, y| region.get(x + x0, y + y0));
    let mut g = ImageGrid::new(cw, ch, 1);
    for y in 0..ch {
        for x in 0..cw {
            g.set(x, y, 0, ctx.edge.get(x + x0, y + y0, 0));
        }
    }
    let mut field = init_phi(&seed, params.band_rho)?;
    let report = evolve(&mut field, &g, &params.levelset)?;
    let local_mask = field.zero_level_mask();
    let mut mask = BinaryGrid::new(w, h);
    for y in 0..ch {
        for x in 0..cw {
            if local_mask.get(x, y) {
                mask.set(x + x0, y + y0, true);
            }
        }
    }
    let contours = field
        .zero_level_contours()
        .into_iter()
        .map(|line| {
            line.into_iter()
                .map(|(x, y)| (x + x0 as f64, y + y0 as f64))
                .collect()
        })
        .collect();
    Ok(PartSegmentation {
        name: String::from(name),
        projected_outline: outline,
        initial_region: region,
        mask,
        contours,
        skipped: None,
        iterations: report.iterations,
        converged: report.converged,
    })
}

/// Resolves a part name to its raster id, or lists what the mesh defines.
pub fn resolve_part(mesh: &TriangleMesh, name: &str) -> Result<u16, PipelineError> {
    mesh.part_id(name).ok_or_else(|| PipelineError::UnknownPart {
        name: String::from(name),
        available: mesh.part_names().join(", "),
    })
}

/// Segments the named parts of `mesh` in `photo` at the registered `pose`,
/// sequentially. `parts` must all exist on the mesh; hidden or over-eroded
/// parts come back marked skipped rather than erroring.
pub fn segment_parts(
    photo: &ImageGrid,
    mesh: &TriangleMesh,
    datum: &CarModelDatum,
    pose: &FullPose,
    parts: &[String],
    params: &SegmentationParams,
) -> Result<Vec<PartSegmentation>, PipelineError> {
    let ids = parts
        .iter()
        .map(|name| Ok((name.as_str(), resolve_part(mesh, name)?)))
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let ctx = prepare_segmentation(photo, mesh, datum, pose, params)?;
    ids.into_iter()
        .map(|(name, id)| segment_part(&ctx, name, id, params))
        .collect()
}

/// Names of the seven pose components, in [`FullPose::to_vector`] order.
pub const POSE_COMPONENTS: [&str; 7] = [
    "mu_x", "mu_y", "delta_x", "delta_y", "psi_x", "psi_y", "f",
];

/// One sampled point of a loss-landscape sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    /// Index of the swept pose component (see [`POSE_COMPONENTS`]).
    pub dimension: usize,
    /// Gradient norm the loss used.
    pub k: u32,
    /// Pyramid level the loss was evaluated at.
    pub level: u32,
    /// Signed offset fraction of the component's reference scale.
    pub fraction: f64,
    /// Absolute value the component was set to.
    pub value: f64,
    /// Loss at the displaced pose.
    pub loss: f64,
}

/// Reference scale that turns a sweep fraction into an absolute offset:
/// image width for the x components, height for the y components, one for
/// the unitless axle components, and the centre value itself for `f`.
fn sweep_scale(dimension: usize, center: &FullPose, width: usize, height: usize) -> f64 {
    match dimension {
        0 | 2 => width as f64,
        1 | 3 => height as f64,
        4 | 5 => 1.0,
        _ => center.f,
    }
}

/// Samples the registration loss along one pose component around `center`.
///
/// The component is displaced over `samples` evenly spaced offsets spanning
/// `±range_fraction` of its reference scale, for every combination of
/// `ks` and `levels`. Poses that fail to convert (for example an axle pushed
/// out of its domain) get a loss of 1, the loss ceiling, so sweeps over
/// aggressive ranges still produce a full curve.
pub fn sweep_landscape(
    mesh: &TriangleMesh,
    datum: &CarModelDatum,
    photo: &ImageGrid,
    center: &FullPose,
    dimension: usize,
    range_fraction: f64,
    samples: usize,
    ks: &[u32],
    levels: &[u32],
) -> Result<Vec<SweepPoint>, PipelineError> {
    if dimension >= 7 {
        return Err(PipelineError::BadSweep("dimension must be in 0..7"));
    }
    if samples < 2 {
        return Err(PipelineError::BadSweep("need at least two samples"));
    }
    if !(range_fraction.is_finite() && range_fraction > 0.0) {
        return Err(PipelineError::BadSweep("range must be positive"));
    }
    if ks.is_empty() || levels.is_empty() {
        return Err(PipelineError::BadSweep("need at least one k and level"));
    }
    let scale = sweep_scale(dimension, center, photo.width(), photo.height());
    let mut points = Vec::with_capacity(ks.len() * levels.len() * samples);
    for &k in ks {
        for &level in levels {
            let cfg = LossConfig {
                k,
                smoothing_levels: if level == 0 {
                    vec![0]
                } else {
                    vec![level, 0]
                },
                render_width: photo.width(),
                render_height: photo.height(),
            };
            for i in 0..samples {
                let fraction =
                    range_fraction * (2.0 * i as f64 / (samples - 1) as f64 - 1.0);
                let mut vector = center.to_vector();
                vector[dimension] += fraction * scale;
                let pose = FullPose::from_vector(&vector);
                let loss = match evaluate_pose_loss(mesh, datum, &pose, photo, level, &cfg) {
                    Ok(loss) => loss,
                    Err(RegError::Pose(_)) => 1.0,
                    Err(other) => return Err(PipelineError::Registration(other)),
                };
                points.push(SweepPoint {
                    dimension,
                    k,
                    level,
                    fraction,
                    value: vector[dimension],
                    loss,
                });
            }
        }
    }
    Ok(points)
}

/// Counts interior strict local minima of a sampled curve: points smaller
/// than both neighbours. Endpoints never count.
pub fn count_strict_local_minima(losses: &[f64]) -> usize {
    losses
        .windows(3)
        .filter(|w| w[1] < w[0] && w[1] < w[2])
        .count()
}
