//! File formats and atomic disk IO: PNG images, raw float grids, pose /
//! metrics / contour JSON, sweep CSV, and OBJ meshes with their wheel-datum
//! sidecar files.
//!
//! Every writer goes through [`atomic_write`]: the bytes land in a temp
//! file in the destination directory and are renamed into place, so a
//! crash mid-write never leaves a truncated artifact behind.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use image::{GrayImage, RgbImage};
use modelseg_core::{
    parse_obj, write_obj, BinaryGrid, CarModelDatum, FullPose, ImageGrid, RoughPose, SweepPoint,
    TriangleMesh, POSE_COMPONENTS,
};
use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Version stamp in every metrics JSON document.
pub const METRICS_SCHEMA: u32 = 1;

/// Magic bytes opening a raw float-grid file.
pub const GRID_MAGIC: [u8; 4] = *b"FGRD";

// ---------------------------------------------------------------------------
// Atomic writes
// ---------------------------------------------------------------------------

/// Writes `bytes` to `path` atomically: the data goes to a temp file in the
/// same directory (guaranteeing the final rename never crosses a
/// filesystem), then the temp file is renamed over the target. Parent
/// directories are created as needed.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).with_context(|| format!("creating directory {}", dir.display()))?;
    let name = path
        .file_name()
        .with_context(|| format!("{} has no file name", path.display()))?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| {
        let _ = fs::remove_file(&tmp);
        format!("renaming {} over {}", tmp.display(), path.display())
    })?;
    Ok(())
}

// ---------------------------------------------------------------------------
// PNG images
// ---------------------------------------------------------------------------

fn encode_png(img: &image::DynamicImage) -> Result<Vec<u8>> {
    let mut bytes = Cursor::new(Vec::new());
    img.write_to(&mut bytes, image::ImageFormat::Png)
        .context("encoding PNG")?;
    Ok(bytes.into_inner())
}

fn to_u8(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Saves a single-channel grid (values in `[0, 255]`) as an 8-bit
/// grayscale PNG.
pub fn save_gray_png(path: &Path, img: &ImageGrid) -> Result<()> {
    ensure!(
        img.channels() == 1,
        "grayscale PNG needs a 1-channel grid, got {} channels",
        img.channels()
    );
    let mut out = GrayImage::new(img.width() as u32, img.height() as u32);
    for y in 0..img.height() {
        for x in 0..img.width() {
            out.put_pixel(x as u32, y as u32, image::Luma([to_u8(img.get(x, y, 0))]));
        }
    }
    atomic_write(path, &encode_png(&out.into())?)
}

/// Saves a three-channel grid (values in `[0, 255]`) as an 8-bit RGB PNG.
pub fn save_rgb_png(path: &Path, img: &ImageGrid) -> Result<()> {
    ensure!(
        img.channels() == 3,
        "RGB PNG needs a 3-channel grid, got {} channels",
        img.channels()
    );
    let mut out = RgbImage::new(img.width() as u32, img.height() as u32);
    for y in 0..img.height() {
        for x in 0..img.width() {
            let p = img.pixel(x, y);
            out.put_pixel(
                x as u32,
                y as u32,
                image::Rgb([to_u8(p[0]), to_u8(p[1]), to_u8(p[2])]),
            );
        }
    }
    atomic_write(path, &encode_png(&out.into())?)
}

/// Saves a binary mask as an 8-bit grayscale PNG holding 0 or 255.
pub fn save_mask_png(path: &Path, mask: &BinaryGrid) -> Result<()> {
    let mut out = GrayImage::new(mask.width() as u32, mask.height() as u32);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            let v = if mask.get(x, y) { 255 } else { 0 };
            out.put_pixel(x as u32, y as u32, image::Luma([v]));
        }
    }
    atomic_write(path, &encode_png(&out.into())?)
}

/// Loads any PNG as a single-channel luminance grid in `[0, 255]`.
pub fn load_gray_png(path: &Path) -> Result<ImageGrid> {
    let img = image::open(path)
        .with_context(|| format!("opening image {}", path.display()))?
        .to_luma8();
    ensure!(
        img.width() > 0 && img.height() > 0,
        "{} is an empty image",
        path.display()
    );
    let mut out = ImageGrid::new(img.width() as usize, img.height() as usize, 1);
    for (x, y, p) in img.enumerate_pixels() {
        out.set(x as usize, y as usize, 0, f32::from(p.0[0]));
    }
    Ok(out)
}

/// Loads a mask PNG: pixels at or above half intensity count as set.
pub fn load_mask_png(path: &Path) -> Result<BinaryGrid> {
    let img = image::open(path)
        .with_context(|| format!("opening mask {}", path.display()))?
        .to_luma8();
    ensure!(
        img.width() > 0 && img.height() > 0,
        "{} is an empty image",
        path.display()
    );
    Ok(BinaryGrid::from_fn(
        img.width() as usize,
        img.height() as usize,
        |x, y| img.get_pixel(x as u32, y as u32).0[0] >= 128,
    ))
}

// ---------------------------------------------------------------------------
// Raw float grids (lossless, for golden tests)
// ---------------------------------------------------------------------------

/// Saves a float grid losslessly: a 16-byte header (magic, width, height,
/// channels as little-endian u32) followed by row-major, channel-interleaved
/// little-endian f32 samples.
pub fn save_grid_raw(path: &Path, img: &ImageGrid) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + img.data().len() * 4);
    bytes.extend_from_slice(&GRID_MAGIC);
    bytes.extend_from_slice(&u32::try_from(img.width())?.to_le_bytes());
    bytes.extend_from_slice(&u32::try_from(img.height())?.to_le_bytes());
    bytes.extend_from_slice(&u32::try_from(img.channels())?.to_le_bytes());
    for v in img.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &bytes)
}

/// Loads a float grid written by [`save_grid_raw`].
pub fn load_grid_raw(path: &Path) -> Result<ImageGrid> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    ensure!(
        bytes.len() >= 16 && bytes[..4] == GRID_MAGIC,
        "{} is not a raw float grid",
        path.display()
    );
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (w, h, c) = (word(4), word(8), word(12));
    ensure!(w > 0 && h > 0 && c > 0, "{} has empty dimensions", path.display());
    let n = w
        .checked_mul(h)
        .and_then(|p| p.checked_mul(c))
        .with_context(|| format!("{} dimensions overflow", path.display()))?;
    ensure!(
        bytes.len() == 16 + n * 4,
        "{} holds {} bytes of samples, expected {}",
        path.display(),
        bytes.len() - 16,
        n * 4
    );
    let mut img = ImageGrid::new(w, h, c);
    for (i, v) in img.data_mut().iter_mut().enumerate() {
        let at = 16 + i * 4;
        *v = f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    }
    Ok(img)
}

// ---------------------------------------------------------------------------
// Pose JSON
// ---------------------------------------------------------------------------

/// On-disk pose: `{"mu":[x,y],"delta":[x,y],"psi":[x,y],"f":n}`. The
/// perspective distance `f` is optional in rough-pose files (registration
/// seeds it from the image when absent) and always present in fine-pose
/// files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseFile {
    /// Reference-point image position, pixels.
    pub mu: [f64; 2],
    /// Wheelbase vanishing offset, pixels.
    pub delta: [f64; 2],
    /// Axle warp components, unitless.
    pub psi: [f64; 2],
    /// Perspective distance, pixels; omitted in rough files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<f64>,
}

impl PoseFile {
    /// Snapshot of a full pose.
    pub fn from_full(p: &FullPose) -> Self {
        PoseFile {
            mu: [p.mu.x, p.mu.y],
            delta: [p.delta.x, p.delta.y],
            psi: [p.psi.x, p.psi.y],
            f: Some(p.f),
        }
    }

    /// The rough (six-parameter) reading of this file.
    pub fn rough(&self) -> RoughPose {
        RoughPose {
            mu: Vector2::new(self.mu[0], self.mu[1]),
            delta: Vector2::new(self.delta[0], self.delta[1]),
            psi: Vector2::new(self.psi[0], self.psi[1]),
        }
    }

    /// The full seven-parameter pose, if `f` is present.
    pub fn full(&self) -> Option<FullPose> {
        Some(self.rough().with_focal_length(self.f?))
    }
}

/// Saves a full pose as pretty-printed JSON.
pub fn save_pose(path: &Path, pose: &FullPose) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(&PoseFile::from_full(pose))?;
    atomic_write(path, &bytes)
}

/// Loads a pose file, rough or full.
pub fn load_pose_file(path: &Path) -> Result<PoseFile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing pose file {}", path.display()))
}

/// Loads a pose file that must carry the perspective distance `f`.
pub fn load_full_pose(path: &Path) -> Result<FullPose> {
    let file = load_pose_file(path)?;
    file.full().with_context(|| {
        format!(
            "pose file {} lacks the perspective distance \"f\" (a registered pose is required here)",
            path.display()
        )
    })
}

// ---------------------------------------------------------------------------
// Metrics JSON
// ---------------------------------------------------------------------------

/// One part's entry in the metrics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartReport {
    /// Part name as listed by the mesh.
    pub name: String,
    /// Fraction agreement against ground truth; `null` when no ground
    /// truth was available or the part was skipped.
    pub accuracy: Option<f64>,
    /// True when the part produced no segmentation.
    pub skipped: bool,
    /// Why the part was skipped; `null` otherwise.
    pub reason: Option<String>,
}

/// The pipeline's machine-readable summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Format version; always [`METRICS_SCHEMA`] when written by this crate.
    pub schema: u32,
    /// The registered pose.
    pub pose: PoseFile,
    /// Full-resolution loss at the registered pose.
    pub loss_final: f64,
    /// Per-part outcomes, in the order the parts were requested.
    pub parts: Vec<PartReport>,
}

/// Saves the metrics report as pretty-printed JSON. Serialization is
/// deterministic (struct field order, shortest-round-trip floats), so two
/// runs over identical inputs produce byte-identical files.
pub fn save_metrics(path: &Path, metrics: &Metrics) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(metrics)?;
    atomic_write(path, &bytes)
}

/// Loads a metrics report.
pub fn load_metrics(path: &Path) -> Result<Metrics> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing metrics {}", path.display()))
}

// ---------------------------------------------------------------------------
// Contour JSON
// ---------------------------------------------------------------------------

/// On-disk contours: `{"part": name, "contours": [[[u,v],...], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourFile {
    /// Part the curves belong to.
    pub part: String,
    /// Closed polylines tracing the final zero level, in image coordinates.
    pub contours: Vec<Vec<[f64; 2]>>,
}

/// Saves a part's contour polylines.
pub fn save_contours(path: &Path, part: &str, contours: &[Vec<(f64, f64)>]) -> Result<()> {
    let file = ContourFile {
        part: String::from(part),
        contours: contours
            .iter()
            .map(|c| c.iter().map(|&(u, v)| [u, v]).collect())
            .collect(),
    };
    let bytes = serde_json::to_vec_pretty(&file)?;
    atomic_write(path, &bytes)
}

/// Loads a part's contour polylines.
pub fn load_contours(path: &Path) -> Result<ContourFile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing contours {}", path.display()))
}

// ---------------------------------------------------------------------------
// Sweep CSV
// ---------------------------------------------------------------------------

/// Formats sweep samples as CSV with a header row. Dimensions are named
/// (`mu_x` … `f`), fractions are signed offsets of the sweep range, and
/// `value` is the absolute coordinate evaluated.
pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("dimension,k,level,fraction,value,loss\n");
    for p in points {
        let dim = POSE_COMPONENTS.get(p.dimension).copied().unwrap_or("?");
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            dim, p.k, p.level, p.fraction, p.value, p.loss
        ));
    }
    out
}

/// Saves sweep samples as a CSV file.
pub fn save_sweep_csv(path: &Path, points: &[SweepPoint]) -> Result<()> {
    atomic_write(path, sweep_csv(points).as_bytes())
}

// ---------------------------------------------------------------------------
// Meshes and wheel datums
// ---------------------------------------------------------------------------

/// On-disk wheel datum, the sidecar that anchors pose parameters to the
/// model: `{"rear_wheel_center":[x,y,z], "front_wheel_center":[x,y,z],
/// "rear_axle_dir":[x,y,z]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatumFile {
    /// Rear wheel centre in model coordinates.
    pub rear_wheel_center: [f64; 3],
    /// Front wheel centre in model coordinates.
    pub front_wheel_center: [f64; 3],
    /// Rear axle direction in model coordinates.
    pub rear_axle_dir: [f64; 3],
}

impl DatumFile {
    /// Snapshot of a validated datum.
    pub fn from_datum(d: &CarModelDatum) -> Self {
        let v = |v: &Vector3<f64>| [v.x, v.y, v.z];
        DatumFile {
            rear_wheel_center: v(&d.rear_wheel_center),
            front_wheel_center: v(&d.front_wheel_center),
            rear_axle_dir: v(&d.rear_axle_dir),
        }
    }

    /// Validates the file into a usable datum.
    pub fn datum(&self) -> Result<CarModelDatum> {
        let v = |a: [f64; 3]| Vector3::new(a[0], a[1], a[2]);
        CarModelDatum::new(
            v(self.rear_wheel_center),
            v(self.front_wheel_center),
            v(self.rear_axle_dir),
        )
        .context("invalid wheel datum")
    }
}

/// Where a mesh's wheel-datum sidecar lives: the mesh path with its
/// extension replaced by `datum.json` (`car.obj` → `car.datum.json`).
pub fn datum_sidecar_path(mesh_path: &Path) -> PathBuf {
    mesh_path.with_extension("datum.json")
}

/// Saves a mesh as OBJ (part names as `g` groups) together with its
/// wheel-datum sidecar.
pub fn save_mesh_with_datum(path: &Path, mesh: &TriangleMesh, datum: &CarModelDatum) -> Result<()> {
    atomic_write(path, write_obj(mesh).as_bytes())?;
    let bytes = serde_json::to_vec_pretty(&DatumFile::from_datum(datum))?;
    atomic_write(&datum_sidecar_path(path), &bytes)
}

/// Loads an OBJ mesh and its wheel-datum sidecar. Parser warnings are
/// logged; a missing sidecar is an error that names the expected path.
pub fn load_mesh_with_datum(path: &Path) -> Result<(TriangleMesh, CarModelDatum)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading mesh {}", path.display()))?;
    let (mesh, warnings) =
        parse_obj(&text).with_context(|| format!("parsing mesh {}", path.display()))?;
    for w in &warnings {
        log::warn!("{}: {w}", path.display());
    }
    let sidecar = datum_sidecar_path(path);
    if !sidecar.exists() {
        bail!(
            "mesh {} has no wheel-datum sidecar (expected {})",
            path.display(),
            sidecar.display()
        );
    }
    let text =
        fs::read_to_string(&sidecar).with_context(|| format!("reading {}", sidecar.display()))?;
    let file: DatumFile = serde_json::from_str(&text)
        .with_context(|| format!("parsing datum {}", sidecar.display()))?;
    Ok((mesh, file.datum()?))
}
