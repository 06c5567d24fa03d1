//! Pose registration: a gradient-correlation loss between the photo and a
//! rendered surface-normal buffer, minimized coarse-to-fine with a
//! restarting Nelder–Mead simplex.
//!
//! The loss compares *edge structure*, not intensity: both the photo and
//! the rendered normal buffer are reduced `n` pyramid levels, their
//! k-norm gradient magnitudes are taken, and the loss is
//! `1 − corr²` of the two gradient images. Shading, albedo, and lighting
//! therefore never need to match — only where the edges fall. The
//! optimizer walks the seven pose parameters (rear-wheel centre,
//! wheel-to-wheel vector, axle direction, perspective distance) from a
//! rough initialization, starting on heavily smoothed images where the
//! landscape is wide and refining on sharper ones where it is accurate.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float as _;

use crate::grid::ImageGrid;
use crate::imgproc::{self, ImgError};
use crate::mesh::{CarModelDatum, TriangleMesh};
use crate::pose::{pose_to_transform, FullPose, PoseError, RoughPose};
use crate::raster::{render_mesh, RasterError, RenderOptions};

/// Errors from loss evaluation and registration.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RegError {
    #[error("invalid loss configuration: {0}")]
    InvalidLossConfig(&'static str),
    #[error("invalid simplex configuration: {0}")]
    InvalidSimplexConfig(&'static str),
    #[error("photo is {got_w}x{got_h} but the configuration renders {want_w}x{want_h}")]
    PhotoSizeMismatch {
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error(transparent)]
    Pose(#[from] PoseError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Image(#[from] ImgError),
}

/// How the loss is computed: gradient norm, smoothing schedule, and the
/// render target size (which must equal the photo size).
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// Gradient-magnitude norm, 1 or 2. The 1-norm landscape is less
    /// noisy and is the default.
    pub k: u32,
    /// Pyramid levels visited in order, strictly decreasing and ending
    /// at 0 (full resolution).
    pub smoothing_levels: Vec<u32>,
    /// Render width in pixels.
    pub render_width: usize,
    /// Render height in pixels.
    pub render_height: usize,
}

impl LossConfig {
    /// The default configuration for a photo: 1-norm, levels `[2, 1, 0]`,
    /// rendering at the photo's resolution.
    pub fn for_photo(photo: &ImageGrid) -> Self {
        LossConfig {
            k: 1,
            smoothing_levels: alloc::vec![2, 1, 0],
            render_width: photo.width(),
            render_height: photo.height(),
        }
    }

    pub fn validate(&self) -> Result<(), RegError> {
        if self.k != 1 && self.k != 2 {
            return Err(RegError::InvalidLossConfig("norm k must be 1 or 2"));
        }
        if self.render_width == 0 || self.render_height == 0 {
            return Err(RegError::InvalidLossConfig("render size must be nonzero"));
        }
        if self.smoothing_levels.is_empty() {
            return Err(RegError::InvalidLossConfig(
                "smoothing schedule must not be empty",
            ));
        }
        if *self.smoothing_levels.last().unwrap() != 0 {
            return Err(RegError::InvalidLossConfig(
                "smoothing schedule must end at level 0",
            ));
        }
        if self.smoothing_levels.windows(2).any(|w| w[1] >= w[0]) {
            return Err(RegError::InvalidLossConfig(
                "smoothing schedule must be strictly decreasing",
            ));
        }
        Ok(())
    }
}

/// Nelder–Mead hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexConfig {
    /// Initial simplex edge per pose dimension, in the order
    /// `[mu_x, mu_y, delta_x, delta_y, psi_x, psi_y, f]`.
    pub steps: [f64; 7],
    /// Converged when the loss spread across the simplex drops below
    /// this.
    pub tolerance: f64,
    /// Evaluation budget per [`nelder_mead`] call (shared by restarts).
    pub max_evals: usize,
    /// Fresh simplexes started around the incumbent after convergence.
    pub restarts: usize,
}

impl SimplexConfig {
    /// Defaults scaled to an image: 2% of the width for the pixel-valued
    /// dimensions, 0.05 for the axle components, 10% of `f0` for the
    /// perspective distance; tolerance 1e-6, 1400 evaluations, 2
    /// restarts.
    pub fn for_image(width: usize, f0: f64) -> Self {
        let t = 0.02 * width as f64;
        SimplexConfig {
            steps: [t, t, t, t, 0.05, 0.05, 0.1 * f0],
            tolerance: 1e-6,
            max_evals: 1400,
            restarts: 2,
        }
    }

    pub fn validate(&self) -> Result<(), RegError> {
        if self.steps.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(RegError::InvalidSimplexConfig(
                "initial steps must be positive",
            ));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(RegError::InvalidSimplexConfig(
                "tolerance must be positive",
            ));
        }
        if self.max_evals == 0 {
            return Err(RegError::InvalidSimplexConfig(
                "evaluation budget must be nonzero",
            ));
        }
        Ok(())
    }
}

/// The default initial perspective distance for an image: four times its
/// longer side, a mild-perspective prior the optimizer refines.
pub fn initial_f(width: usize, height: usize) -> f64 {
    4.0 * width.max(height) as f64
}

/// One accepted improvement during registration, for trace logging.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub level: u32,
    pub eval_count: usize,
    pub loss: f64,
    pub pose: FullPose,
}

/// Result of a registration run.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationOutcome {
    pub pose: FullPose,
    /// Loss of `pose` at level 0.
    pub loss: f64,
    /// Total objective evaluations across all levels.
    pub evaluations: usize,
}

/// `1 − corr²` of two gradient-magnitude images.
///
/// Correlation is direction-free evidence that edges coincide, so a
/// perfectly anti-correlated pair also scores 0. A constant image has no
/// edge structure to correlate and scores the worst loss, 1.
pub fn gradient_loss(gn: &ImageGrid, gi: &ImageGrid) -> Result<f64, RegError> {
    match imgproc::pearson(gn, gi) {
        Ok(r) => Ok((1.0 - r * r).clamp(0.0, 1.0)),
        Err(ImgError::DegenerateCorrelation) => Ok(1.0),
        Err(e) => Err(RegError::Image(e)),
    }
}

/// The photo half of the loss: reduce `level` pyramid steps, then take
/// the k-norm gradient magnitude. Constant per registration, so callers
/// evaluating many poses compute it once per level and reuse it.
pub fn photo_gradient_at_level(
    photo: &ImageGrid,
    level: u32,
    k: u32,
) -> Result<ImageGrid, RegError> {
    let reduced = imgproc::gaussian_pyramid_level(photo, level)?;
    Ok(imgproc::gradient_magnitude(&reduced, k)?)
}

// Flat per-face normals: the loss correlates edge structure, and flat
// shading concentrates the normal buffer's gradients into crisp lines at
// facet and silhouette boundaries — the same places a photo's shading
// changes. Interpolated normals would smear those lines out.
fn render_options() -> RenderOptions {
    RenderOptions {
        cull_backfaces: true,
        smooth_normals: false,
    }
}

/// The render half of the loss against a precomputed photo gradient.
fn pose_loss_against(
    mesh: &TriangleMesh,
    datum: &CarModelDatum,
    pose: &FullPose,
    photo_gradient: &ImageGrid,
    level: u32,
    cfg: &LossConfig,
) -> Result<f64, RegError> {
    let transform = pose_to_transform(datum, pose)?;
    let fb = render_mesh(
        mesh,
        &transform,
        cfg.render_width,
        cfg.render_height,
        &render_options(),
    )?;
    let gn = if level == 0 {
        imgproc::gradient_magnitude(&fb.normal, cfg.k)?
    } else {
        let reduced = imgproc::gaussian_pyramid_level(&fb.normal, level)?;
        imgproc::gradient_magnitude(&reduced, cfg.k)?
    };
    gradient_loss(&gn, photo_gradient)
}

/// Renders the model at `pose`, reduces both the photo and the normal
/// buffer `level` pyramid steps, and returns the gradient-correlation
/// loss between them.
///
/// A pose that renders off-image (or to anything with constant
/// gradients) scores 1 through the degenerate-correlation rule; poses
/// whose parameters are outside their domain are errors.
pub fn evaluate_pose_loss(
    mesh: &TriangleMesh,
    datum: &CarModelDatum,
    pose: &FullPose,
    photo: &ImageGrid,
    level: u32,
    cfg: &LossConfig,
) -> Result<f64, RegError> {
    cfg.validate()?;
    if photo.width() != cfg.render_width || photo.height() != cfg.render_height {
        return Err(RegError::PhotoSizeMismatch {
            got_w: photo.width(),
            got_h: photo.height(),
            want_w: cfg.render_width,
            want_h: cfg.render_height,
        });
    }
    let gi = photo_gradient_at_level(photo, level, cfg.k)?;
    pose_loss_against(mesh, datum, pose, &gi, level, cfg)
}

/// Suppresses background clutter: pixels outside the rough pose's
/// rendered silhouette, dilated by `margin` pixels, are zeroed. An empty
/// silhouette (model off-image) leaves the photo unchanged with a
/// warning, since no evidence exists to mask against.
pub fn background_mask(
    photo: &ImageGrid,
    rough: &RoughPose,
    mesh: &TriangleMesh,
    datum: &CarModelDatum,
    margin: f64,
) -> Result<ImageGrid, RegError> {
    let pose = rough.with_focal_length(initial_f(photo.width(), photo.height()));
    let transform = pose_to_transform(datum, &pose)?;
    let fb = render_mesh(
        mesh,
        &transform,
        photo.width(),
        photo.height(),
        &render_options(),
    )?;
    let silhouette = fb.silhouette();
    if silhouette.count_ones() == 0 {
        log::warn!("rough pose renders off-image; background left unmasked");
        return Ok(photo.clone());
    }
    let keep = imgproc::dilate(&silhouette, margin.max(0.0))?;
    let mut out = photo.clone();
    for y in 0..photo.height() {
        for x in 0..photo.width() {
            if !keep.get(x, y) {
                for c in 0..photo.channels() {
                    out.set(x, y, c, 0.0);
                }
            }
        }
    }
    Ok(out)
}

struct Minimizer<'a, F, T> {
    objective: F,
    on_improve: T,
    cfg: &'a SimplexConfig,
    evals: usize,
    best_x: [f64; 7],
    best_f: f64,
}

impl<F, T> Minimizer<'_, F, T>
where
    F: FnMut(&[f64; 7]) -> f64,
    T: FnMut(usize, &[f64; 7], f64),
{
    /// Evaluates, mapping non-finite objective values to +inf so such
    /// vertices lose every comparison, and tracks the incumbent.
    fn eval(&mut self, x: &[f64; 7]) -> f64 {
        self.evals += 1;
        let raw = (self.objective)(x);
        let value = if raw.is_finite() { raw } else { f64::INFINITY };
        if value < self.best_f {
            self.best_f = value;
            self.best_x = *x;
            (self.on_improve)(self.evals, x, value);
        }
        value
    }

    /// One simplex life from `start`; returns true if it converged
    /// (spread below tolerance) rather than running out of budget.
    fn run_simplex(&mut self, start: [f64; 7], steps: [f64; 7]) -> bool {
        const DIM: usize = 7;
        let mut vx: Vec<[f64; 7]> = Vec::with_capacity(DIM + 1);
        let mut vf: Vec<f64> = Vec::with_capacity(DIM + 1);
        vx.push(start);
        vf.push(self.eval(&start));
        for i in 0..DIM {
            let mut x = start;
            x[i] += steps[i];
            vx.push(x);
            vf.push(self.eval(&x));
        }
        loop {
            // Stable sort keeps ties deterministic.
            let mut order: Vec<usize> = (0..=DIM).collect();
            order.sort_by(|&a, &b| vf[a].partial_cmp(&vf[b]).unwrap_or(core::cmp::Ordering::Equal));
            let vx_s: Vec<[f64; 7]> = order.iter().map(|&i| vx[i]).collect();
            let vf_s: Vec<f64> = order.iter().map(|&i| vf[i]).collect();
            vx = vx_s;
            vf = vf_s;

            let spread = vf[DIM] - vf[0];
            if spread.is_nan() || spread < self.cfg.tolerance {
                return true;
            }
            if self.evals >= self.cfg.max_evals {
                return false;
            }

            let mut centroid = [0.0f64; 7];
            for v in vx.iter().take(DIM) {
                for (c, value) in centroid.iter_mut().zip(v.iter()) {
                    *c += value;
                }
            }
            for c in &mut centroid {
                *c /= DIM as f64;
            }
            let combine = |t: f64| {
                let mut x = [0.0f64; 7];
                for i in 0..DIM {
                    x[i] = centroid[i] + t * (centroid[i] - vx[DIM][i]);
                }
                x
            };

            // Reflection 1, expansion 2, contraction 0.5, shrink 0.5.
            let xr = combine(1.0);
            let fr = self.eval(&xr);
            if fr < vf[0] {
                let xe = combine(2.0);
                let fe = self.eval(&xe);
                if fe < fr {
                    vx[DIM] = xe;
                    vf[DIM] = fe;
                } else {
                    vx[DIM] = xr;
                    vf[DIM] = fr;
                }
            } else if fr < vf[DIM - 1] {
                vx[DIM] = xr;
                vf[DIM] = fr;
            } else {
                let (xc, fc) = if fr < vf[DIM] {
                    let x = combine(0.5);
                    let f = self.eval(&x);
                    (x, f)
                } else {
                    let x = combine(-0.5);
                    let f = self.eval(&x);
                    (x, f)
                };
                if fc < fr.min(vf[DIM]) {
                    vx[DIM] = xc;
                    vf[DIM] = fc;
                } else {
                    // Shrink everything toward the best vertex.
                    let anchor = vx[0];
                    for i in 1..=DIM {
                        for (xi, ai) in vx[i].iter_mut().zip(anchor.iter()) {
                            *xi = ai + 0.5 * (*xi - ai);
                        }
                        let x = vx[i];
                        vf[i] = self.eval(&x);
                    }
                }
            }
        }
    }
}

/// Minimizes a 7-dimensional objective with the Nelder–Mead downhill
/// simplex (reflection 1, expansion 2, contraction 0.5, shrink 0.5).
///
/// After each convergence the simplex is rebuilt at full size around the
/// incumbent, up to `cfg.restarts` times, alternating the sign of the
/// step offsets so consecutive simplexes probe opposite orthants; this
/// is what lets the search climb out of shallow local stalls. Non-finite
/// objective values are treated as +inf. The returned point never scores
/// worse than `x0`, and the whole search is deterministic.
pub fn nelder_mead<F>(
    objective: F,
    x0: [f64; 7],
    cfg: &SimplexConfig,
) -> Result<([f64; 7], f64, usize), RegError>
where
    F: FnMut(&[f64; 7]) -> f64,
{
    nelder_mead_traced(objective, x0, cfg, |_, _, _| {})
}

/// [`nelder_mead`] with a callback invoked at every new incumbent with
/// `(evaluation count, point, value)`.
pub fn nelder_mead_traced<F, T>(
    objective: F,
    x0: [f64; 7],
    cfg: &SimplexConfig,
    on_improve: T,
) -> Result<([f64; 7], f64, usize), RegError>
where
    F: FnMut(&[f64; 7]) -> f64,
    T: FnMut(usize, &[f64; 7], f64),
{
    cfg.validate()?;
    let mut m = Minimizer {
        objective,
        on_improve,
        cfg,
        evals: 0,
        best_x: x0,
        best_f: f64::INFINITY,
    };
    for restart in 0..=cfg.restarts {
        if m.evals >= cfg.max_evals {
            break;
        }
        let mut steps = cfg.steps;
        if restart % 2 == 1 {
            for s in &mut steps {
                *s = -*s;
            }
        }
        let start = m.best_x;
        if !m.run_simplex(start, steps) {
            break; // budget exhausted mid-run
        }
    }
    Ok((m.best_x, m.best_f, m.evals))
}

/// Registers from a rough pose: seeds the perspective distance with
/// [`initial_f`] and runs [`coarse_to_fine_register_full`].
pub fn coarse_to_fine_register(
    mesh: &TriangleMesh,
    datum: &CarModelDatum,
    photo: &ImageGrid,
    rough: &RoughPose,
    cfg: &LossConfig,
    scfg: &SimplexConfig,
) -> Result<RegistrationOutcome, RegError> {
    let f0 = initial_f(photo.width(), photo.height());
    coarse_to_fine_register_full(
        mesh,
        datum,
        photo,
        &rough.with_focal_length(f0),
        cfg,
        scfg,
        |_| {},
    )
}

/// Coarse-to-fine registration from a full seven-parameter initialization:
/// for each smoothing level in `cfg`, runs [`nelder_mead`] on the loss at
/// that level, seeding each level with the previous level's optimum.
///
/// The returned pose never scores worse than the initialization at full
/// resolution: if the schedule somehow ends above the start (possible
/// only on degenerate landscapes), the initialization is returned
/// instead, with a warning. `observer` receives every accepted
/// improvement.
pub fn coarse_to_fine_register_full(
    mesh: &TriangleMesh,
    datum: &CarModelDatum,
    photo: &ImageGrid,
    init: &FullPose,
    cfg: &LossConfig,
    scfg: &SimplexConfig,
    mut observer: impl FnMut(&TraceEvent),
) -> Result<RegistrationOutcome, RegError> {
    cfg.validate()?;
    scfg.validate()?;
    if photo.width() != cfg.render_width || photo.height() != cfg.render_height {
        return Err(RegError::PhotoSizeMismatch {
            got_w: photo.width(),
            got_h: photo.height(),
            want_w: cfg.render_width,
            want_h: cfg.render_height,
        });
    }
    // The photo side never changes during the search: one gradient image
    // per level, computed up front.
    let photo_gradients: Vec<(u32, ImageGrid)> = cfg
        .smoothing_levels
        .iter()
        .map(|&n| Ok((n, photo_gradient_at_level(photo, n, cfg.k)?)))
        .collect::<Result<_, RegError>>()?;

    let mut theta = *init;
    let mut total_evals = 0usize;
    for (idx, (n, gi)) in photo_gradients.iter().enumerate() {
        let objective = |x: &[f64; 7]| {
            let pose = FullPose::from_vector(x);
            if pose.psi.norm_squared() > 1.0 || !(pose.f > 0.0) {
                return f64::INFINITY;
            }
            match pose_loss_against(mesh, datum, &pose, gi, *n, cfg) {
                Ok(loss) => loss,
                Err(_) => f64::INFINITY,
            }
        };
        // The first four pose dimensions are denominated in full-resolution
        // pixels; at level n the image is decimated by 2^n, so matching an
        // exploration width in smoothed pixels can take steps up to 2^n
        // times larger. The right width depends on where in its basin the
        // initialization happens to sit, so the first (coarsest) level runs
        // one search per power-of-two width and keeps the best result,
        // splitting the level's evaluation budget across the starts. Later
        // levels inherit a near-correct pose and run once, wide. The warp
        // and zoom dimensions are unitless — their effect on the image
        // already shrinks with the object — so their steps never scale.
        let scales: Vec<f64> = if idx == 0 {
            (0..=*n).map(|i| f64::from(1u32 << i)).collect()
        } else {
            alloc::vec![f64::from(1u32 << *n)]
        };
        let budget = (scfg.max_evals / scales.len()).max(1);
        let mut best: Option<([f64; 7], f64)> = None;
        for scale in scales {
            let mut steps = scfg.steps;
            for s in steps.iter_mut().take(4) {
                *s *= scale;
            }
            let scfg_run = SimplexConfig {
                steps,
                max_evals: budget,
                ..*scfg
            };
            let (x, l, evals) =
                nelder_mead_traced(objective, theta.to_vector(), &scfg_run, |ec, x, l| {
                    observer(&TraceEvent {
                        level: *n,
                        eval_count: ec,
                        loss: l,
                        pose: FullPose::from_vector(x),
                    })
                })?;
            total_evals += evals;
            if best.is_none_or(|(_, bl)| l < bl) {
                best = Some((x, l));
            }
        }
        let (x, _) = best.expect("scale ladder is never empty");
        theta = FullPose::from_vector(&x);
    }

    // Judge both endpoints at full resolution with the same ruler.
    let (_, gi0) = photo_gradients
        .last()
        .expect("validated schedule is non-empty");
    let loss_init = pose_loss_against(mesh, datum, init, gi0, 0, cfg).unwrap_or(f64::INFINITY);
    let loss_final = pose_loss_against(mesh, datum, &theta, gi0, 0, cfg).unwrap_or(f64::INFINITY);
    let (pose, loss) = if loss_final <= loss_init {
        (theta, loss_final)
    } else {
        log::warn!(
            "registration did not improve on its initialization (init {loss_init}, final {loss_final}); returning the initialization"
        );
        (*init, loss_init)
    };
    if loss >= 1.0 {
        log::warn!("registration landscape is degenerate (loss 1): is the model in frame?");
    }
    Ok(RegistrationOutcome {
        pose,
        loss: loss.min(1.0),
        evaluations: total_evals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ImageGrid;
    use crate::mesh::{CarModelDatum, TriangleMesh};
    use nalgebra::{Vector2, Vector3};

    fn ramp_image(w: usize, h: usize) -> ImageGrid {
        let mut img = ImageGrid::new(w, h, 1);
        for y in 0..h {
            for x in 0..w {
                img.set(x, y, 0, (x * x + 3 * y) as f32);
            }
        }
        img
    }

    #[test]
    fn identical_gradients_score_zero() {
        let a = ramp_image(16, 12);
        assert!(gradient_loss(&a, &a).unwrap() < 1e-12);
    }

    #[test]
    fn anti_correlated_gradients_also_score_zero() {
        let a = ramp_image(16, 12);
        let mut b = ImageGrid::new(16, 12, 1);
        for y in 0..12 {
            for x in 0..16 {
                b.set(x, y, 0, 500.0 - a.get(x, y, 0));
            }
        }
        assert!(gradient_loss(&a, &b).unwrap() < 1e-9);
    }

    #[test]
    fn constant_gradient_image_scores_one() {
        let a = ramp_image(16, 12);
        let mut c = ImageGrid::new(16, 12, 1);
        c.fill(3.0);
        assert_eq!(gradient_loss(&c, &a).unwrap(), 1.0);
        assert_eq!(gradient_loss(&a, &c).unwrap(), 1.0);
    }

    #[test]
    fn gradient_loss_rejects_shape_mismatch() {
        let a = ramp_image(16, 12);
        let b = ramp_image(12, 16);
        assert!(matches!(
            gradient_loss(&a, &b),
            Err(RegError::Image(ImgError::ShapeMismatch { .. }))
        ));
    }

    fn quick_cfg(tolerance: f64, max_evals: usize, restarts: usize) -> SimplexConfig {
        SimplexConfig {
            steps: [0.5; 7],
            tolerance,
            max_evals,
            restarts,
        }
    }

    #[test]
    fn simplex_solves_a_convex_quadratic() {
        let c = [1.0, -2.0, 0.5, 3.0, -1.5, 0.25, 2.0];
        let objective =
            |x: &[f64; 7]| -> f64 { x.iter().zip(c.iter()).map(|(a, b)| (a - b) * (a - b)).sum() };
        let x0 = [2.0, -1.0, 1.5, 4.0, -0.5, 1.25, 3.0];
        let (x, f, _) = nelder_mead(objective, x0, &quick_cfg(1e-18, 20_000, 2)).unwrap();
        for (a, b) in x.iter().zip(c.iter()) {
            assert!((a - b).abs() < 1e-6, "x {x:?} loss {f}");
        }
    }

    #[test]
    fn simplex_follows_a_curved_valley() {
        // A two-dimensional curved valley with the flat minimum at
        // (1, 1), padded to seven dimensions with a quadratic bowl.
        let objective = |x: &[f64; 7]| -> f64 {
            let rosen = 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
            let tail: f64 = x[2..].iter().map(|v| v * v).sum();
            rosen + tail
        };
        let x0 = [-1.2, 1.0, 0.3, -0.4, 0.2, 0.1, -0.3];
        let (x, f, _) = nelder_mead(objective, x0, &quick_cfg(1e-18, 60_000, 6)).unwrap();
        assert!(
            (x[0] - 1.0).abs() < 1e-4 && (x[1] - 1.0).abs() < 1e-4,
            "x {x:?} loss {f}"
        );
    }

    #[test]
    fn restarts_escape_a_plateau_where_a_single_life_stalls() {
        // Flat at 1.0 on and to the right of the start; a quadratic
        // basin opens to the left, just beyond one step. The first
        // simplex only ever samples the plateau and converges with zero
        // spread; the first restart mirrors the steps and finds the
        // descent.
        let objective = |x: &[f64; 7]| -> f64 {
            if x[0] >= -0.25 {
                1.0
            } else {
                (x[0] + 1.0) * (x[0] + 1.0) + x[1..].iter().map(|v| v * v).sum::<f64>()
            }
        };
        let x0 = [0.0; 7];
        let (_, stuck, _) = nelder_mead(objective, x0, &quick_cfg(1e-9, 4000, 0)).unwrap();
        assert_eq!(stuck, 1.0);
        let (x, escaped, _) = nelder_mead(objective, x0, &quick_cfg(1e-9, 4000, 2)).unwrap();
        assert!(escaped < 0.1, "x {x:?} loss {escaped}");
    }

    #[test]
    fn simplex_never_returns_worse_than_its_start() {
        // Wiggly and rising in most directions from the start.
        let objective = |x: &[f64; 7]| -> f64 {
            x.iter()
                .map(|v| (3.0 * v).sin() + 0.5 * v * v)
                .sum::<f64>()
        };
        let x0 = [0.31, -0.62, 0.95, 0.11, -0.47, 0.78, -0.23];
        let f0 = objective(&x0);
        let (_, f, _) = nelder_mead(objective, x0, &quick_cfg(1e-10, 300, 2)).unwrap();
        assert!(f <= f0);
    }

    #[test]
    fn non_finite_objective_values_are_rejected_vertices() {
        // NaN pockets must not capture or poison the search.
        let objective = |x: &[f64; 7]| -> f64 {
            if x[0] < -0.5 {
                f64::NAN
            } else {
                x.iter().map(|v| v * v).sum()
            }
        };
        let (x, f, _) = nelder_mead(objective, [1.0; 7], &quick_cfg(1e-14, 8000, 2)).unwrap();
        assert!(f.is_finite());
        assert!(x.iter().map(|v| v * v).sum::<f64>() < 1e-4, "x {x:?} f {f}");
    }

    #[test]
    fn invalid_simplex_configs_are_rejected() {
        let objective = |_: &[f64; 7]| 0.0;
        let mut bad = quick_cfg(1e-6, 100, 0);
        bad.steps[3] = 0.0;
        assert!(matches!(
            nelder_mead(objective, [0.0; 7], &bad),
            Err(RegError::InvalidSimplexConfig(_))
        ));
        let bad = quick_cfg(0.0, 100, 0);
        assert!(matches!(
            nelder_mead(objective, [0.0; 7], &bad),
            Err(RegError::InvalidSimplexConfig(_))
        ));
    }

    // --- scene-based tests below use a box model ---

    /// Generates the 12 outward-wound triangles of an axis-aligned box.
    fn push_box(
        v: &mut alloc::vec::Vec<Vector3<f64>>,
        t: &mut alloc::vec::Vec<[u32; 3]>,
        x: (f64, f64),
        y: (f64, f64),
        z: (f64, f64),
    ) {
        let base = v.len() as u32;
        v.extend([
            Vector3::new(x.0, y.0, z.0),
            Vector3::new(x.1, y.0, z.0),
            Vector3::new(x.1, y.1, z.0),
            Vector3::new(x.0, y.1, z.0),
            Vector3::new(x.0, y.0, z.1),
            Vector3::new(x.1, y.0, z.1),
            Vector3::new(x.1, y.1, z.1),
            Vector3::new(x.0, y.1, z.1),
        ]);
        for tri in [
            [0, 2, 1],
            [0, 3, 2],
            [4, 5, 6],
            [4, 6, 7],
            [0, 1, 5],
            [0, 5, 4],
            [3, 7, 6],
            [3, 6, 2],
            [0, 4, 7],
            [0, 7, 3],
            [1, 2, 6],
            [1, 6, 5],
        ] {
            t.push([base + tri[0], base + tri[1], base + tri[2]]);
        }
    }

    /// A toy truck: a long body box with a cabin over its rear half.
    /// The asymmetry matters — a lone cuboid is mirror-ambiguous, and
    /// edge correlation genuinely cannot tell those poses apart. Two
    /// named parts, plus a wheel datum along +x so poses anchor the
    /// same way they do for the real model.
    fn box_mesh() -> (TriangleMesh, CarModelDatum) {
        let mut v = alloc::vec::Vec::new();
        let mut t = alloc::vec::Vec::new();
        push_box(&mut v, &mut t, (0.0, 4.0), (-1.0, 1.0), (-1.0, 1.0));
        push_box(&mut v, &mut t, (0.4, 2.0), (-1.75, -1.0), (-0.8, 0.8));
        let mut parts = alloc::collections::BTreeMap::new();
        parts.insert(alloc::string::String::from("body"), (0..12).collect());
        parts.insert(alloc::string::String::from("cabin"), (12..24).collect());
        let mesh = TriangleMesh::new(v, t, parts).unwrap();
        let datum = CarModelDatum::new(
            Vector3::new(0.8, 0.0, 1.0),
            Vector3::new(3.2, 0.0, 1.0),
            Vector3::new(0.0, 0.0, -1.0),
        )
        .unwrap();
        (mesh, datum)
    }

    const SCENE: usize = 128;

    fn test_pose() -> FullPose {
        FullPose {
            mu: Vector2::new(52.0, 68.0),
            delta: Vector2::new(44.0, -4.0),
            psi: Vector2::new(0.25, 0.08),
            f: 512.0,
        }
    }

    /// Renders the box at a pose and shades it into a photo-like image.
    fn shaded_photo(mesh: &TriangleMesh, datum: &CarModelDatum, pose: &FullPose) -> ImageGrid {
        let tr = pose_to_transform(datum, pose).unwrap();
        let fb = render_mesh(mesh, &tr, SCENE, SCENE, &render_options()).unwrap();
        let light = Vector3::new(0.3, -0.35, -0.89).normalize();
        let mut photo = ImageGrid::new(SCENE, SCENE, 1);
        for y in 0..SCENE {
            for x in 0..SCENE {
                let value = if fb.coverage.get(x, y) {
                    let n = Vector3::new(
                        fb.normal.get(x, y, 0) as f64,
                        fb.normal.get(x, y, 1) as f64,
                        fb.normal.get(x, y, 2) as f64,
                    );
                    40.0 + 200.0 * n.dot(&light).max(0.0)
                } else {
                    40.0
                };
                photo.set(x, y, 0, value as f32);
            }
        }
        photo
    }

    #[test]
    fn loss_is_zero_when_the_photo_is_the_normal_buffer() {
        let (mesh, datum) = box_mesh();
        let pose = test_pose();
        let tr = pose_to_transform(&datum, &pose).unwrap();
        let fb = render_mesh(&mesh, &tr, SCENE, SCENE, &render_options()).unwrap();
        let cfg = LossConfig {
            k: 1,
            smoothing_levels: alloc::vec![0],
            render_width: SCENE,
            render_height: SCENE,
        };
        let loss = evaluate_pose_loss(&mesh, &datum, &pose, &fb.normal, 0, &cfg).unwrap();
        assert!(loss < 1e-9, "loss {loss}");
    }

    #[test]
    fn loss_grows_away_from_the_true_pose() {
        let (mesh, datum) = box_mesh();
        let pose = test_pose();
        let photo = shaded_photo(&mesh, &datum, &pose);
        let cfg = LossConfig::for_photo(&photo);
        let at_truth = evaluate_pose_loss(&mesh, &datum, &pose, &photo, 0, &cfg).unwrap();
        let mut shifted = pose;
        shifted.mu.x += 10.0;
        let off = evaluate_pose_loss(&mesh, &datum, &shifted, &photo, 0, &cfg).unwrap();
        assert!(
            at_truth < off,
            "loss at truth {at_truth} vs shifted {off}"
        );
    }

    #[test]
    fn off_image_pose_scores_the_worst_loss() {
        let (mesh, datum) = box_mesh();
        let photo = shaded_photo(&mesh, &datum, &test_pose());
        let cfg = LossConfig::for_photo(&photo);
        let mut gone = test_pose();
        gone.mu = Vector2::new(-5000.0, -5000.0);
        let loss = evaluate_pose_loss(&mesh, &datum, &gone, &photo, 0, &cfg).unwrap();
        assert_eq!(loss, 1.0);
    }

    #[test]
    fn psi_outside_the_unit_disc_is_a_pose_error() {
        let (mesh, datum) = box_mesh();
        let photo = shaded_photo(&mesh, &datum, &test_pose());
        let cfg = LossConfig::for_photo(&photo);
        let mut bad = test_pose();
        bad.psi = Vector2::new(0.8, 0.7);
        assert!(matches!(
            evaluate_pose_loss(&mesh, &datum, &bad, &photo, 0, &cfg),
            Err(RegError::Pose(PoseError::PsiOutOfDomain { .. }))
        ));
    }

    #[test]
    fn background_mask_keeps_the_model_and_zeroes_the_rest() {
        let (mesh, datum) = box_mesh();
        let pose = test_pose();
        let mut photo = ImageGrid::new(SCENE, SCENE, 1);
        photo.fill(7.0);
        let masked = background_mask(&photo, &pose.rough(), &mesh, &datum, 0.0).unwrap();
        let tr = pose_to_transform(&datum, &pose).unwrap();
        let fb = render_mesh(&mesh, &tr, SCENE, SCENE, &render_options()).unwrap();
        let mut kept = 0;
        let mut zeroed = 0;
        for y in 0..SCENE {
            for x in 0..SCENE {
                if fb.coverage.get(x, y) {
                    assert_eq!(masked.get(x, y, 0), 7.0);
                    kept += 1;
                } else if masked.get(x, y, 0) == 0.0 {
                    zeroed += 1;
                }
            }
        }
        assert!(kept > 50);
        assert!(zeroed > 1000, "zeroed only {zeroed}");
    }

    #[test]
    fn huge_margin_leaves_the_photo_unchanged() {
        let (mesh, datum) = box_mesh();
        let photo = shaded_photo(&mesh, &datum, &test_pose());
        let masked = background_mask(&photo, &test_pose().rough(), &mesh, &datum, 200.0).unwrap();
        assert_eq!(masked.data(), photo.data());
    }

    #[test]
    fn off_image_rough_pose_leaves_the_photo_unchanged() {
        let (mesh, datum) = box_mesh();
        let photo = shaded_photo(&mesh, &datum, &test_pose());
        let mut rough = test_pose().rough();
        rough.mu = Vector2::new(-9000.0, -9000.0);
        let masked = background_mask(&photo, &rough, &mesh, &datum, 5.0).unwrap();
        assert_eq!(masked.data(), photo.data());
    }

    #[test]
    fn registration_recovers_a_perturbed_pose_on_the_box_scene() {
        // The toy truck is feature-poor compared to a real model, so
        // this exercises the plumbing on the perturbation its landscape
        // supports: a 5-pixel translation offset, pulled back through a
        // two-level schedule proportionate to the 128-px scene. Full
        // seven-parameter recovery on the rich synthetic scene is
        // covered by the integration suite.
        let (mesh, datum) = box_mesh();
        let truth = test_pose();
        let photo = shaded_photo(&mesh, &datum, &truth);
        let cfg = LossConfig {
            smoothing_levels: alloc::vec![1, 0],
            ..LossConfig::for_photo(&photo)
        };
        let mut init = truth;
        init.mu.x += 4.0;
        init.mu.y -= 3.0;
        let scfg = SimplexConfig::for_image(SCENE, truth.f);
        let outcome = coarse_to_fine_register_full(
            &mesh, &datum, &photo, &init, &cfg, &scfg, |_| {},
        )
        .unwrap();
        let tr_truth = pose_to_transform(&datum, &truth).unwrap();
        let tr_found = pose_to_transform(&datum, &outcome.pose).unwrap();
        let tr_init = pose_to_transform(&datum, &init).unwrap();
        let (mut err, mut err0) = (0.0, 0.0);
        for v in mesh.vertices() {
            let a = tr_truth.project_point(v).unwrap();
            err += (a - tr_found.project_point(v).unwrap()).norm();
            err0 += (a - tr_init.project_point(v).unwrap()).norm();
        }
        err /= mesh.vertices().len() as f64;
        err0 /= mesh.vertices().len() as f64;
        assert!(
            err < 1.5 && err < 0.3 * err0,
            "reprojection error {err} px (init {err0} px), loss {}",
            outcome.loss
        );
    }

    #[test]
    fn registration_started_at_the_truth_stays_there() {
        let (mesh, datum) = box_mesh();
        let truth = test_pose();
        let photo = shaded_photo(&mesh, &datum, &truth);
        let cfg = LossConfig::for_photo(&photo);
        let scfg = SimplexConfig::for_image(SCENE, truth.f);
        let gi0 = photo_gradient_at_level(&photo, 0, cfg.k).unwrap();
        let loss0 = pose_loss_against(&mesh, &datum, &truth, &gi0, 0, &cfg).unwrap();
        let outcome =
            coarse_to_fine_register_full(&mesh, &datum, &photo, &truth, &cfg, &scfg, |_| {})
                .unwrap();
        assert!(outcome.loss <= loss0 + 1e-12);
        let tr_truth = pose_to_transform(&datum, &truth).unwrap();
        let tr_found = pose_to_transform(&datum, &outcome.pose).unwrap();
        let mut err = 0.0;
        for v in mesh.vertices() {
            let a = tr_truth.project_point(v).unwrap();
            let b = tr_found.project_point(v).unwrap();
            err += (a - b).norm();
        }
        err /= mesh.vertices().len() as f64;
        assert!(err <= 0.5, "drifted {err} px from a perfect start");
    }

    #[test]
    fn off_image_rough_pose_registers_to_itself_with_loss_one() {
        let (mesh, datum) = box_mesh();
        let photo = shaded_photo(&mesh, &datum, &test_pose());
        let cfg = LossConfig::for_photo(&photo);
        let scfg = SimplexConfig::for_image(SCENE, 512.0);
        let mut rough = test_pose().rough();
        rough.mu = Vector2::new(-9000.0, -9000.0);
        let outcome =
            coarse_to_fine_register(&mesh, &datum, &photo, &rough, &cfg, &scfg).unwrap();
        assert_eq!(outcome.loss, 1.0);
        assert_eq!(outcome.pose.mu, rough.mu);
    }

    #[test]
    fn trace_reports_improvements_in_eval_order() {
        let (mesh, datum) = box_mesh();
        let truth = test_pose();
        let photo = shaded_photo(&mesh, &datum, &truth);
        let cfg = LossConfig::for_photo(&photo);
        let scfg = SimplexConfig::for_image(SCENE, truth.f);
        let mut init = truth;
        init.mu.x += 3.0;
        let mut events: Vec<TraceEvent> = Vec::new();
        coarse_to_fine_register_full(&mesh, &datum, &photo, &init, &cfg, &scfg, |e| {
            events.push(e.clone())
        })
        .unwrap();
        assert!(!events.is_empty());
        for pair in events.windows(2) {
            if pair[0].level == pair[1].level {
                assert!(pair[0].eval_count < pair[1].eval_count);
                assert!(pair[0].loss >= pair[1].loss);
            }
        }
    }


    #[test]
    fn invalid_loss_configs_are_rejected() {
        let photo = ramp_image(16, 16);
        let base = LossConfig::for_photo(&photo);
        for cfg in [
            LossConfig {
                k: 3,
                ..base.clone()
            },
            LossConfig {
                smoothing_levels: alloc::vec![],
                ..base.clone()
            },
            LossConfig {
                smoothing_levels: alloc::vec![2, 1],
                ..base.clone()
            },
            LossConfig {
                smoothing_levels: alloc::vec![1, 2, 0],
                ..base.clone()
            },
            LossConfig {
                smoothing_levels: alloc::vec![2, 2, 0],
                ..base.clone()
            },
        ] {
            assert!(cfg.validate().is_err(), "accepted {cfg:?}");
        }
        assert!(base.validate().is_ok());
    }
}
