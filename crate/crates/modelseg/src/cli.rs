//! Command-line surface of the `modelseg` binary.
//!
//! Subcommands: `render` (draw the model at a pose), `register` (rough →
//! fine pose), `segment` (per-part contours at a known pose), `pipeline`
//! (register then segment, end to end), `sweep` (loss-landscape CSV),
//! `synth` (generate a test scene), `evaluate` (score a mask against
//! ground truth).

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use modelseg_core::{
    pose_to_transform, render_mesh, standard_pose, standard_scene, sweep_landscape, synth_photo,
    toy_car, FullPose, ImageGrid, LevelSetParams, RenderOptions, SegmentationParams,
    POSE_COMPONENTS,
};

use crate::io;
use crate::runner::{self, usage_error, Perturbation, PhotoSource, PipelineRequest};

/// Registers a triangulated 3D model over a photograph and sub-segments
/// the imaged object into its named model parts.
#[derive(Debug, Parser)]
#[command(name = "modelseg", version, about)]
pub struct Cli {
    /// What to run.
    #[command(subcommand)]
    pub command: Command,
}

/// All `modelseg` subcommands.
#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the model at a pose: normal map, depth, part ids, coverage.
    Render(RenderCmd),
    /// Register the model over a photo from a rough pose.
    Register(RegisterCmd),
    /// Segment named parts at an already-registered pose.
    Segment(SegmentCmd),
    /// Register, then segment: the full pipeline with all artifacts.
    Pipeline(PipelineCmd),
    /// Sample the registration loss along one pose dimension into CSV.
    Sweep(SweepCmd),
    /// Generate the standard synthetic scene with exact ground truth.
    Synth(SynthCmd),
    /// Score a segmentation mask against a ground-truth mask.
    Evaluate(EvaluateCmd),
}

/// Contour-segmentation flags shared by `segment` and `pipeline`.
#[derive(Debug, Args)]
pub struct SegFlags {
    /// Erosion radius (px) for the seed region; default scales 3 px by image diagonal / 800.
    #[arg(long)]
    pub erode_radius: Option<f64>,

    /// Balloon coefficient; negative values expand the contour.
    #[arg(long, default_value_t = LevelSetParams::default().nu)]
    pub nu: f64,

    /// Band magnitude of the initial signed field.
    #[arg(long, default_value_t = SegmentationParams::default().band_rho)]
    pub rho: f64,
}

impl SegFlags {
    fn params(&self) -> SegmentationParams {
        SegmentationParams {
            erode_radius: self.erode_radius,
            band_rho: self.rho,
            levelset: LevelSetParams {
                nu: self.nu,
                ..LevelSetParams::default()
            },
            ..SegmentationParams::default()
        }
    }
}

/// Registration flags shared by `register` and `pipeline`.
#[derive(Debug, Args)]
pub struct RegFlags {
    /// Gradient-magnitude norm of the loss.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..=2))]
    pub k: u32,

    /// Pyramid schedule, coarse to fine, ending at 0.
    #[arg(long, value_delimiter = ',', default_values_t = [2u32, 1, 0])]
    pub levels: Vec<u32>,

    /// Foreground mask PNG overriding the automatic background mask.
    #[arg(long)]
    pub mask: Option<PathBuf>,
}

/// `modelseg render`
#[derive(Debug, Args)]
pub struct RenderCmd {
    /// OBJ mesh with a wheel-datum sidecar; omits to the built-in toy car.
    #[arg(long)]
    pub mesh: Option<PathBuf>,

    /// Pose JSON (must carry "f"); omits to the standard pose.
    #[arg(long)]
    pub pose: Option<PathBuf>,

    /// Image width in pixels.
    #[arg(long, default_value_t = 512)]
    pub width: usize,

    /// Image height in pixels.
    #[arg(long, default_value_t = 512)]
    pub height: usize,

    /// Directory the buffers are written under.
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// `modelseg register`
#[derive(Debug, Args)]
pub struct RegisterCmd {
    /// Photo PNG.
    #[arg(long)]
    pub photo: PathBuf,

    /// OBJ mesh with a wheel-datum sidecar; omits to the built-in toy car.
    #[arg(long)]
    pub mesh: Option<PathBuf>,

    /// Rough pose JSON ("f" optional).
    #[arg(long)]
    pub rough_pose: PathBuf,

    #[command(flatten)]
    pub reg: RegFlags,

    /// Directory the registered pose is written under.
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// `modelseg segment`
#[derive(Debug, Args)]
pub struct SegmentCmd {
    /// Photo PNG.
    #[arg(long)]
    pub photo: PathBuf,

    /// OBJ mesh with a wheel-datum sidecar; omits to the built-in toy car.
    #[arg(long)]
    pub mesh: Option<PathBuf>,

    /// Registered pose JSON (must carry "f").
    #[arg(long)]
    pub pose: PathBuf,

    /// Parts to segment (comma separated); omits to every part.
    #[arg(long, value_delimiter = ',')]
    pub parts: Option<Vec<String>>,

    /// Parts to leave out (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub exclude_parts: Vec<String>,

    #[command(flatten)]
    pub seg: SegFlags,

    /// Directory masks, contours, and overlays are written under.
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// `modelseg pipeline`
#[derive(Debug, Args)]
pub struct PipelineCmd {
    /// Photo PNG (photo mode; requires --rough-pose).
    #[arg(long, conflicts_with = "synthetic")]
    pub photo: Option<PathBuf>,

    /// Rough pose JSON for photo mode ("f" optional).
    #[arg(long, conflicts_with = "synthetic")]
    pub rough_pose: Option<PathBuf>,

    /// Generate the standard synthetic scene instead of loading a photo.
    #[arg(long)]
    pub synthetic: bool,

    /// Synthetic image size in pixels (square).
    #[arg(long, default_value_t = 512)]
    pub size: usize,

    /// Seed for all stochastic elements (noise, perturbation signs).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Synthetic rough-pose position offset, fraction of image width.
    #[arg(long, default_value_t = Perturbation::default().mu_frac)]
    pub perturb_mu: f64,

    /// Synthetic rough-pose vanishing offset, fraction of image width.
    #[arg(long, default_value_t = Perturbation::default().delta_frac)]
    pub perturb_delta: f64,

    /// Synthetic rough-pose warp offset, absolute.
    #[arg(long, default_value_t = Perturbation::default().psi_abs)]
    pub perturb_psi: f64,

    /// Synthetic rough-pose perspective-distance change, relative.
    #[arg(long, default_value_t = Perturbation::default().f_frac)]
    pub perturb_f: f64,

    /// OBJ mesh with a wheel-datum sidecar; omits to the built-in toy car.
    #[arg(long)]
    pub mesh: Option<PathBuf>,

    /// Parts to segment (comma separated); omits to every part.
    #[arg(long, value_delimiter = ',')]
    pub parts: Option<Vec<String>>,

    /// Parts to leave out (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub exclude_parts: Vec<String>,

    #[command(flatten)]
    pub reg: RegFlags,

    #[command(flatten)]
    pub seg: SegFlags,

    /// Directory all artifacts are written under.
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// `modelseg sweep`
#[derive(Debug, Args)]
pub struct SweepCmd {
    /// Photo PNG.
    #[arg(long)]
    pub photo: PathBuf,

    /// OBJ mesh with a wheel-datum sidecar; omits to the built-in toy car.
    #[arg(long)]
    pub mesh: Option<PathBuf>,

    /// Center pose JSON (must carry "f").
    #[arg(long)]
    pub pose: PathBuf,

    /// Pose dimension to sweep: mu_x, mu_y, delta_x, delta_y, psi_x, psi_y, or f.
    #[arg(long)]
    pub dimension: String,

    /// Sweep half-range as a fraction of the dimension's scale.
    #[arg(long, default_value_t = 0.2)]
    pub range: f64,

    /// Number of uniformly spaced samples (odd keeps the center exact).
    #[arg(long, default_value_t = 41)]
    pub samples: usize,

    /// Gradient norms to sweep (comma separated).
    #[arg(long, value_delimiter = ',', default_values_t = [1u32])]
    pub k: Vec<u32>,

    /// Pyramid levels to sweep (comma separated).
    #[arg(long, value_delimiter = ',', default_values_t = [0u32])]
    pub levels: Vec<u32>,

    /// Foreground mask PNG overriding the automatic background mask.
    #[arg(long)]
    pub mask: Option<PathBuf>,

    /// Keep the photo unmasked instead of suppressing the background.
    #[arg(long, conflicts_with = "mask")]
    pub no_mask: bool,

    /// Directory the CSV is written under.
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// `modelseg synth`
#[derive(Debug, Args)]
pub struct SynthCmd {
    /// OBJ mesh with a wheel-datum sidecar; omits to the built-in toy car.
    #[arg(long)]
    pub mesh: Option<PathBuf>,

    /// Image size in pixels (square).
    #[arg(long, default_value_t = 512)]
    pub size: usize,

    /// Seed for the sensor noise.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Directory the scene is written under.
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// `modelseg evaluate`
#[derive(Debug, Args)]
pub struct EvaluateCmd {
    /// Segmentation mask PNG to score.
    #[arg(long)]
    pub result: PathBuf,

    /// Ground-truth mask PNG.
    #[arg(long)]
    pub truth: PathBuf,
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Render(cmd) => run_render(cmd),
        Command::Register(cmd) => run_register(cmd),
        Command::Segment(cmd) => run_segment(cmd),
        Command::Pipeline(cmd) => run_pipeline_cmd(cmd),
        Command::Sweep(cmd) => run_sweep(cmd),
        Command::Synth(cmd) => run_synth(cmd),
        Command::Evaluate(cmd) => run_evaluate(cmd),
    }
}

fn load_mesh(path: Option<&PathBuf>) -> Result<(modelseg_core::TriangleMesh, modelseg_core::CarModelDatum)> {
    match path {
        Some(p) => io::load_mesh_with_datum(p),
        None => Ok(toy_car()),
    }
}

fn run_render(cmd: RenderCmd) -> Result<()> {
    let (mesh, datum) = load_mesh(cmd.mesh.as_ref()).context("stage inputs failed")?;
    let pose: FullPose = match &cmd.pose {
        Some(p) => io::load_full_pose(p).context("stage inputs failed")?,
        None => standard_pose(cmd.width.min(cmd.height)),
    };
    let transform = pose_to_transform(&datum, &pose).context("stage render failed")?;
    let fb = render_mesh(
        &mesh,
        &transform,
        cmd.width,
        cmd.height,
        &RenderOptions {
            cull_backfaces: true,
            smooth_normals: false,
        },
    )
    .context("stage render failed")?;

    // Normals in [-1,1] map to RGB; uncovered pixels stay black.
    let mut normals = ImageGrid::new(cmd.width, cmd.height, 3);
    let mut depth = ImageGrid::new(cmd.width, cmd.height, 1);
    let mut parts = ImageGrid::new(cmd.width, cmd.height, 1);
    let (mut zmin, mut zmax) = (f32::INFINITY, f32::NEG_INFINITY);
    for y in 0..cmd.height {
        for x in 0..cmd.width {
            if fb.coverage.get(x, y) {
                let z = fb.depth.get(x, y, 0);
                zmin = zmin.min(z);
                zmax = zmax.max(z);
            }
        }
    }
    let zspan = (zmax - zmin).max(f32::EPSILON);
    let nparts = mesh.part_names().len().max(1) as f32;
    for y in 0..cmd.height {
        for x in 0..cmd.width {
            if !fb.coverage.get(x, y) {
                continue;
            }
            let n = fb.normal.pixel(x, y);
            for c in 0..3 {
                normals.set(x, y, c, (n[c] + 1.0) * 127.5);
            }
            // Near is bright, far is dark.
            let z = fb.depth.get(x, y, 0);
            depth.set(x, y, 0, 255.0 * (1.0 - (z - zmin) / zspan));
            parts.set(x, y, 0, 255.0 * f32::from(fb.part_id.get(x, y) + 1) / (nparts + 1.0));
        }
    }
    let out = |name: &str| cmd.out_dir.join(name);
    io::save_rgb_png(&out("normals.png"), &normals).context("stage outputs failed")?;
    io::save_gray_png(&out("depth.png"), &depth).context("stage outputs failed")?;
    io::save_gray_png(&out("parts.png"), &parts).context("stage outputs failed")?;
    io::save_mask_png(&out("coverage.png"), &fb.coverage).context("stage outputs failed")?;
    println!(
        "rendered {} parts over {} pixels to {}",
        mesh.part_names().len(),
        fb.coverage.count_ones(),
        cmd.out_dir.display()
    );
    Ok(())
}

fn run_register(cmd: RegisterCmd) -> Result<()> {
    let (mesh, datum) = load_mesh(cmd.mesh.as_ref()).context("stage inputs failed")?;
    let photo = io::load_gray_png(&cmd.photo).context("stage inputs failed")?;
    let pose_file = io::load_pose_file(&cmd.rough_pose).context("stage inputs failed")?;
    let f0 = pose_file
        .f
        .unwrap_or_else(|| modelseg_core::initial_f(photo.width(), photo.height()));
    let init = pose_file.rough().with_focal_length(f0);

    let masked = runner::suppress_background(
        &photo,
        &init.rough(),
        &mesh,
        &datum,
        cmd.reg.mask.as_deref(),
    )
    .context("stage background failed")?;

    let outcome =
        runner::register_stage(&mesh, &datum, &masked, &init, cmd.reg.k, &cmd.reg.levels)
            .context("stage registration failed")?;
    io::save_pose(&cmd.out_dir.join(runner::POSE_FILE), &outcome.pose)
        .context("stage outputs failed")?;
    println!(
        "registered: loss {:.6} after {} evaluations; pose written to {}",
        outcome.loss,
        outcome.evaluations,
        cmd.out_dir.join(runner::POSE_FILE).display()
    );
    Ok(())
}

fn run_segment(cmd: SegmentCmd) -> Result<()> {
    let (mesh, datum) = load_mesh(cmd.mesh.as_ref()).context("stage inputs failed")?;
    let photo = io::load_gray_png(&cmd.photo).context("stage inputs failed")?;
    let pose = io::load_full_pose(&cmd.pose).context("stage inputs failed")?;
    let parts = runner::select_parts(&mesh, cmd.parts.as_deref(), &cmd.exclude_parts)
        .context("stage inputs failed")?;

    let results = runner::segment_stage(&photo, &mesh, &datum, &pose, &parts, &cmd.seg.params())
        .context("stage segmentation failed")?;
    for part in &results {
        runner::write_part_artifacts(&cmd.out_dir, &photo, part)
            .context("stage outputs failed")?;
        match &part.skipped {
            Some(reason) => println!("{}: skipped ({})", part.name, reason),
            None => println!(
                "{}: {} px in {} iterations{}",
                part.name,
                part.mask.count_ones(),
                part.iterations,
                if part.converged { "" } else { " (iteration cap hit)" }
            ),
        }
    }
    Ok(())
}

fn run_pipeline_cmd(cmd: PipelineCmd) -> Result<()> {
    let photo = if cmd.synthetic {
        PhotoSource::Synthetic {
            size: cmd.size,
            seed: cmd.seed,
            perturb: Perturbation {
                mu_frac: cmd.perturb_mu,
                delta_frac: cmd.perturb_delta,
                psi_abs: cmd.perturb_psi,
                f_frac: cmd.perturb_f,
            },
        }
    } else {
        let photo = cmd
            .photo
            .ok_or_else(|| usage_error("photo mode needs --photo (or pass --synthetic)"))?;
        let rough_pose = cmd.rough_pose.ok_or_else(|| {
            usage_error("photo mode needs --rough-pose pointing at a rough-pose JSON file")
        })?;
        PhotoSource::File { photo, rough_pose }
    };
    let request = PipelineRequest {
        photo,
        mesh: cmd.mesh,
        out_dir: cmd.out_dir.clone(),
        parts: cmd.parts,
        exclude_parts: cmd.exclude_parts,
        k: cmd.reg.k,
        levels: cmd.reg.levels,
        seg: cmd.seg.params(),
        mask: cmd.reg.mask,
    };
    let metrics = runner::run_pipeline(&request)?;
    for part in &metrics.parts {
        match (&part.accuracy, part.skipped) {
            (Some(a), _) => println!("{}: accuracy {a:.4}", part.name),
            (None, true) => println!(
                "{}: skipped ({})",
                part.name,
                part.reason.as_deref().unwrap_or("unknown")
            ),
            (None, false) => println!("{}: segmented (no ground truth)", part.name),
        }
    }
    println!(
        "pipeline done: loss {:.6}; artifacts under {}",
        metrics.loss_final,
        cmd.out_dir.display()
    );
    Ok(())
}

fn run_sweep(cmd: SweepCmd) -> Result<()> {
    let (mesh, datum) = load_mesh(cmd.mesh.as_ref()).context("stage inputs failed")?;
    let photo = io::load_gray_png(&cmd.photo).context("stage inputs failed")?;
    let pose = io::load_full_pose(&cmd.pose).context("stage inputs failed")?;
    let dimension = POSE_COMPONENTS
        .iter()
        .position(|name| *name == cmd.dimension)
        .ok_or_else(|| {
            usage_error(format!(
                "unknown pose dimension \"{}\" (expected one of {})",
                cmd.dimension,
                POSE_COMPONENTS.join(", ")
            ))
        })?;

    let photo = if cmd.no_mask {
        photo
    } else {
        runner::suppress_background(&photo, &pose.rough(), &mesh, &datum, cmd.mask.as_deref())
            .context("stage background failed")?
    };

    let points = sweep_landscape(
        &mesh,
        &datum,
        &photo,
        &pose,
        dimension,
        cmd.range,
        cmd.samples,
        &cmd.k,
        &cmd.levels,
    )
    .context("stage sweep failed")?;
    let path = cmd.out_dir.join(format!("sweep_{}.csv", cmd.dimension));
    io::save_sweep_csv(&path, &points).context("stage outputs failed")?;
    println!("swept {} samples to {}", points.len(), path.display());
    Ok(())
}

fn run_synth(cmd: SynthCmd) -> Result<()> {
    let (mesh, datum) = load_mesh(cmd.mesh.as_ref()).context("stage inputs failed")?;
    let spec = standard_scene(cmd.size, cmd.seed);
    let scene = synth_photo(&mesh, &datum, &spec, cmd.size, cmd.size)
        .context("stage synthesis failed")?;

    let out = |name: &str| cmd.out_dir.join(name);
    io::save_gray_png(&out(runner::PHOTO_FILE), &scene.photo).context("stage outputs failed")?;
    io::save_pose(&out(runner::POSE_FILE), &spec.pose).context("stage outputs failed")?;
    io::save_mask_png(&out("coverage.png"), &scene.coverage).context("stage outputs failed")?;
    io::save_mesh_with_datum(&out("mesh.obj"), &mesh, &datum).context("stage outputs failed")?;
    let truth_dir = cmd.out_dir.join(runner::TRUTH_DIR);
    for (name, mask) in &scene.truth {
        io::save_mask_png(&truth_dir.join(format!("{name}.png")), mask)
            .context("stage outputs failed")?;
    }
    println!(
        "synthesized {}x{} scene (seed {}) under {}",
        cmd.size,
        cmd.size,
        cmd.seed,
        cmd.out_dir.display()
    );
    Ok(())
}

fn run_evaluate(cmd: EvaluateCmd) -> Result<()> {
    let result = io::load_mask_png(&cmd.result).context("stage inputs failed")?;
    let truth = io::load_mask_png(&cmd.truth).context("stage inputs failed")?;
    let a = modelseg_core::accuracy(&result, &truth).context("stage evaluation failed")?;
    println!("{}", serde_json::json!({ "accuracy": a }));
    Ok(())
}
