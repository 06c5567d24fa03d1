//! The end-to-end pipeline behind `modelseg pipeline`: background
//! suppression, coarse-to-fine registration, concurrent per-part contour
//! segmentation, and the on-disk artifact layout shared by all
//! subcommands.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use modelseg_core::{
    accuracy, background_mask, coarse_to_fine_register_full, initial_f, prepare_segmentation,
    resolve_part, segment_part, standard_scene, synth_photo, toy_car, BinaryGrid, CarModelDatum,
    FullPose, ImageGrid, LossConfig, PartSegmentation, PipelineError, RegistrationOutcome,
    RoughPose, SegmentationParams, SimplexConfig, SynthScene, TriangleMesh,
};
use nalgebra::Vector2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::io::{self, Metrics, PartReport, PoseFile, METRICS_SCHEMA};
use crate::overlay;

/// Registered-pose artifact name under the output directory.
pub const POSE_FILE: &str = "pose.json";
/// Metrics artifact name under the output directory.
pub const METRICS_FILE: &str = "metrics.json";
/// Per-part binary masks directory.
pub const MASKS_DIR: &str = "masks";
/// Per-part contour JSON directory.
pub const CONTOURS_DIR: &str = "contours";
/// Per-part overlay PNG directory.
pub const OVERLAYS_DIR: &str = "overlays";
/// Synthetic-mode photo artifact name.
pub const PHOTO_FILE: &str = "photo.png";
/// Synthetic-mode ground-truth masks directory.
pub const TRUTH_DIR: &str = "truth";
/// Synthetic-mode true-pose artifact name.
pub const TRUE_POSE_FILE: &str = "true_pose.json";
/// Synthetic-mode perturbed rough-pose artifact name.
pub const ROUGH_POSE_FILE: &str = "rough_pose.json";

/// Background-mask dilation margin as a fraction of the image diagonal.
pub const MASK_MARGIN_FRACTION: f64 = 0.10;

/// A command-line misuse (missing or contradictory arguments discovered
/// after parsing). The binary maps this to exit code 2; every other
/// failure is a stage failure and exits 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Builds a usage error (exit code 2).
pub fn usage_error(message: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(message.into()))
}

/// Magnitudes of the synthetic-mode rough-pose perturbation. Position and
/// vanishing offsets move by a fraction of the image width, the warp
/// components by an absolute amount, and the perspective distance by a
/// fraction of itself; each component's sign is drawn from the seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    /// Fraction of image width applied to each position component.
    pub mu_frac: f64,
    /// Fraction of image width applied to each vanishing-offset component.
    pub delta_frac: f64,
    /// Absolute offset applied to each warp component.
    pub psi_abs: f64,
    /// Relative change of the perspective distance.
    pub f_frac: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Perturbation {
            mu_frac: 0.05,
            delta_frac: 0.05,
            psi_abs: 0.05,
            f_frac: 0.10,
        }
    }
}

/// Displaces a pose by `p`, drawing one sign per component (in component
/// order μx, μy, δx, δy, ψx, ψy, f) from a deterministic stream seeded by
/// `seed`. The same seed always yields the same rough pose.
pub fn perturb_pose(pose: &FullPose, width: usize, p: &Perturbation, seed: u64) -> FullPose {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sign = move || if rng.random::<bool>() { 1.0 } else { -1.0 };
    let w = width as f64;
    let mu = pose.mu + Vector2::new(sign() * p.mu_frac * w, sign() * p.mu_frac * w);
    let delta = pose.delta + Vector2::new(sign() * p.delta_frac * w, sign() * p.delta_frac * w);
    let psi = pose.psi + Vector2::new(sign() * p.psi_abs, sign() * p.psi_abs);
    let f = pose.f * (1.0 + sign() * p.f_frac);
    FullPose { mu, delta, psi, f }
}

/// Zeroes the photo outside a caller-supplied foreground mask.
pub fn apply_mask(photo: &ImageGrid, mask: &BinaryGrid) -> Result<ImageGrid> {
    anyhow::ensure!(
        photo.width() == mask.width() && photo.height() == mask.height(),
        "mask is {}x{} but the photo is {}x{}",
        mask.width(),
        mask.height(),
        photo.width(),
        photo.height()
    );
    let mut out = photo.clone();
    for y in 0..photo.height() {
        for x in 0..photo.width() {
            if !mask.get(x, y) {
                for c in 0..photo.channels() {
                    out.set(x, y, c, 0.0);
                }
            }
        }
    }
    Ok(out)
}

/// The background-mask dilation margin for a photo: 10% of its diagonal.
pub fn mask_margin(width: usize, height: usize) -> f64 {
    MASK_MARGIN_FRACTION * ((width * width + height * height) as f64).sqrt()
}

/// Suppresses the background for registration: a user-supplied mask when
/// given, otherwise the rough-pose silhouette dilated by [`mask_margin`].
pub fn suppress_background(
    photo: &ImageGrid,
    rough: &RoughPose,
    mesh: &TriangleMesh,
    datum: &CarModelDatum,
    user_mask: Option<&Path>,
) -> Result<ImageGrid> {
    match user_mask {
        Some(path) => apply_mask(photo, &io::load_mask_png(path)?),
        None => Ok(background_mask(
            photo,
            rough,
            mesh,
            datum,
            mask_margin(photo.width(), photo.height()),
        )?),
    }
}

/// Where the pipeline's photo and rough pose come from.
#[derive(Debug, Clone)]
pub enum PhotoSource {
    /// A real photograph plus a hand-annotated rough pose file.
    File {
        /// Path to the photo PNG.
        photo: PathBuf,
        /// Path to the rough-pose JSON.
        rough_pose: PathBuf,
    },
    /// A generated scene: the mesh rendered at the standard pose over the
    /// standard backdrop, with the rough pose derived by perturbing the
    /// true pose.
    Synthetic {
        /// Square image size in pixels.
        size: usize,
        /// Seed for all stochastic elements (sensor noise, perturbation
        /// signs).
        seed: u64,
        /// Rough-pose perturbation magnitudes.
        perturb: Perturbation,
    },
}

/// Everything `modelseg pipeline` needs to run.
#[derive(Debug, Clone)]
pub struct PipelineRequest {
    /// Photo + rough pose, real or synthetic.
    pub photo: PhotoSource,
    /// OBJ mesh path; `None` uses the built-in toy car.
    pub mesh: Option<PathBuf>,
    /// Directory all artifacts are written under.
    pub out_dir: PathBuf,
    /// Parts to segment; `None` means every part on the mesh.
    pub parts: Option<Vec<String>>,
    /// Parts to drop from the selection.
    pub exclude_parts: Vec<String>,
    /// Gradient norm for the registration loss (1 or 2).
    pub k: u32,
    /// Pyramid schedule for registration, e.g. `[2, 1, 0]`.
    pub levels: Vec<u32>,
    /// Contour-segmentation parameters.
    pub seg: SegmentationParams,
    /// User-supplied background mask overriding the automatic one.
    pub mask: Option<PathBuf>,
}

/// Inputs resolved from a [`PipelineRequest`]: the mesh, the photo, the
/// initial full pose, and — in synthetic mode — the exact ground truth.
pub struct ResolvedInputs {
    /// The model to register and segment.
    pub mesh: TriangleMesh,
    /// Its wheel datum.
    pub datum: CarModelDatum,
    /// Luminance photo in `[0, 255]`.
    pub photo: ImageGrid,
    /// The seven-parameter initialization for registration.
    pub init: FullPose,
    /// Per-part ground-truth masks (synthetic mode only).
    pub truth: Option<std::collections::BTreeMap<String, BinaryGrid>>,
}

/// Loads or synthesizes the pipeline inputs. In synthetic mode the scene,
/// its ground truth, and both poses are also written to the output
/// directory so the run is reproducible from disk.
pub fn resolve_inputs(req: &PipelineRequest) -> Result<ResolvedInputs> {
    let (mesh, datum) = match &req.mesh {
        Some(path) => io::load_mesh_with_datum(path)?,
        None => toy_car(),
    };
    match &req.photo {
        PhotoSource::File { photo, rough_pose } => {
            let photo = io::load_gray_png(photo)?;
            let pose_file = io::load_pose_file(rough_pose)?;
            let f0 = pose_file
                .f
                .unwrap_or_else(|| initial_f(photo.width(), photo.height()));
            let init = pose_file.rough().with_focal_length(f0);
            Ok(ResolvedInputs {
                mesh,
                datum,
                photo,
                init,
                truth: None,
            })
        }
        PhotoSource::Synthetic {
            size,
            seed,
            perturb,
        } => {
            let spec = standard_scene(*size, *seed);
            let scene: SynthScene = synth_photo(&mesh, &datum, &spec, *size, *size)?;
            let init = perturb_pose(&spec.pose, *size, perturb, *seed);

            io::save_gray_png(&req.out_dir.join(PHOTO_FILE), &scene.photo)?;
            io::save_pose(&req.out_dir.join(TRUE_POSE_FILE), &spec.pose)?;
            io::save_pose(&req.out_dir.join(ROUGH_POSE_FILE), &init)?;
            let truth_dir = req.out_dir.join(TRUTH_DIR);
            for (name, mask) in &scene.truth {
                io::save_mask_png(&truth_dir.join(format!("{name}.png")), mask)?;
            }
            Ok(ResolvedInputs {
                mesh,
                datum,
                photo: scene.photo,
                init,
                truth: Some(scene.truth),
            })
        }
    }
}

/// Expands the part selection: `parts` (default: every part on the mesh)
/// minus `exclude`, every name validated against the mesh. Unknown names
/// fail with the available parts listed.
pub fn select_parts(
    mesh: &TriangleMesh,
    parts: Option<&[String]>,
    exclude: &[String],
) -> Result<Vec<String>, PipelineError> {
    let chosen: Vec<String> = match parts {
        Some(list) => list.to_vec(),
        None => mesh.part_names(),
    };
    for name in chosen.iter().chain(exclude.iter()) {
        resolve_part(mesh, name)?;
    }
    Ok(chosen
        .into_iter()
        .filter(|name| !exclude.contains(name))
        .collect())
}

/// Registers the model over the masked photo from `init`, coarse to fine.
pub fn register_stage(
    mesh: &TriangleMesh,
    datum: &CarModelDatum,
    masked_photo: &ImageGrid,
    init: &FullPose,
    k: u32,
    levels: &[u32],
) -> Result<RegistrationOutcome> {
    let cfg = LossConfig {
        k,
        smoothing_levels: levels.to_vec(),
        render_width: masked_photo.width(),
        render_height: masked_photo.height(),
    };
    let scfg = SimplexConfig::for_image(masked_photo.width(), init.f);
    Ok(coarse_to_fine_register_full(
        mesh,
        datum,
        masked_photo,
        init,
        &cfg,
        &scfg,
        |_| {},
    )?)
}

/// Segments the selected parts concurrently (each part's evolution is
/// independent) and returns them in request order.
pub fn segment_stage(
    photo: &ImageGrid,
    mesh: &TriangleMesh,
    datum: &CarModelDatum,
    pose: &FullPose,
    parts: &[String],
    params: &SegmentationParams,
) -> Result<Vec<PartSegmentation>> {
    let ids = parts
        .iter()
        .map(|name| Ok((name.as_str(), resolve_part(mesh, name)?)))
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let ctx = prepare_segmentation(photo, mesh, datum, pose, params)?;
    let results = ids
        .par_iter()
        .map(|(name, id)| segment_part(&ctx, name, *id, params))
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(results)
}

/// Writes one part's mask, contours, and overlay under the output
/// directory.
pub fn write_part_artifacts(
    out_dir: &Path,
    photo: &ImageGrid,
    part: &PartSegmentation,
) -> Result<()> {
    io::save_mask_png(&out_dir.join(MASKS_DIR).join(format!("{}.png", part.name)), &part.mask)?;
    io::save_contours(
        &out_dir.join(CONTOURS_DIR).join(format!("{}.json", part.name)),
        &part.name,
        &part.contours,
    )?;
    io::save_rgb_png(
        &out_dir.join(OVERLAYS_DIR).join(format!("{}.png", part.name)),
        &overlay::part_overlay(photo, part),
    )?;
    Ok(())
}

/// Builds the per-part metrics entries, scoring against ground truth when
/// it is available.
pub fn part_reports(
    results: &[PartSegmentation],
    truth: Option<&std::collections::BTreeMap<String, BinaryGrid>>,
) -> Vec<PartReport> {
    results
        .iter()
        .map(|part| {
            let score = match (&part.skipped, truth) {
                (None, Some(map)) => map
                    .get(&part.name)
                    .filter(|t| t.count_ones() > 0)
                    .map(|t| accuracy(&part.mask, t))
                    .transpose()
                    .unwrap_or(None),
                _ => None,
            };
            PartReport {
                name: part.name.clone(),
                accuracy: score,
                skipped: part.skipped.is_some(),
                reason: part.skipped.map(|r| String::from(r.as_str())),
            }
        })
        .collect()
}

/// Runs the whole pipeline: resolve inputs, suppress the background,
/// register coarse-to-fine, segment the chosen parts concurrently, write
/// every artifact, and return the metrics that were saved.
pub fn run_pipeline(req: &PipelineRequest) -> Result<Metrics> {
    let inputs = resolve_inputs(req).context("stage inputs failed")?;
    let parts = select_parts(&inputs.mesh, req.parts.as_deref(), &req.exclude_parts)
        .context("stage inputs failed")?;

    let masked = suppress_background(
        &inputs.photo,
        &inputs.init.rough(),
        &inputs.mesh,
        &inputs.datum,
        req.mask.as_deref(),
    )
    .context("stage background failed")?;

    let outcome = register_stage(
        &inputs.mesh,
        &inputs.datum,
        &masked,
        &inputs.init,
        req.k,
        &req.levels,
    )
    .context("stage registration failed")?;
    io::save_pose(&req.out_dir.join(POSE_FILE), &outcome.pose)
        .context("stage registration failed")?;

    // Segmentation reads the unmasked photo: background suppression
    // exists to denoise the registration loss, while the contour evolver
    // must see the photo's real edges.
    let results = segment_stage(
        &inputs.photo,
        &inputs.mesh,
        &inputs.datum,
        &outcome.pose,
        &parts,
        &req.seg,
    )
    .context("stage segmentation failed")?;

    let metrics = Metrics {
        schema: METRICS_SCHEMA,
        pose: PoseFile::from_full(&outcome.pose),
        loss_final: outcome.loss,
        parts: part_reports(&results, inputs.truth.as_ref()),
    };
    for part in &results {
        write_part_artifacts(&req.out_dir, &inputs.photo, part)
            .context("stage outputs failed")?;
    }
    io::save_metrics(&req.out_dir.join(METRICS_FILE), &metrics)
        .context("stage outputs failed")?;
    Ok(metrics)
}
