//! Synthetic test scenes with exact ground truth.
//!
//! A scene is a part-labelled mesh posed over a procedural background and
//! shaded with a single directional light plus a constant ambient floor:
//! every covered pixel gets `AMBIENT + DIFFUSE * max(0, n . light)` from the
//! flat camera-space normal of the face it shows, so image contrast comes
//! entirely from surface orientation, never from per-part albedo. The
//! returned ground truth is one mask per named part, taken straight from the
//! rasterizer's part-id buffer, which makes the photo and the truth
//! consistent to the pixel.
//!
//! [`toy_car`] builds the standard six-part test subject: a boxy estate car
//! whose geometry is engineered so that at [`standard_pose`] every adjacent
//! pair of visible parts meets across a strong brightness step (an
//! orientation crease, an occluding edge, or a dark trim strip), which is
//! what lets contour-based segmentation recover the parts from shading
//! alone. The interior of the shell is closed with inward-facing duplicates
//! of the see-through faces so that back-face culling never exposes the sky
//! through the body.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::grid::{BinaryGrid, ImageGrid};
use crate::mesh::{CarModelDatum, TriangleMesh};
use crate::pose::{pose_to_transform, FullPose, PoseError};
use crate::raster::{render_mesh, RasterError, RenderOptions};

/// Brightness of a surface that receives no direct light.
pub const AMBIENT: f32 = 30.0;

/// Brightness span between an unlit and a fully lit surface.
pub const DIFFUSE: f32 = 195.0;

/// Largest representable grey value; output is clamped to `[0, MAX_GREY]`.
pub const MAX_GREY: f32 = 255.0;

/// Errors raised while composing a synthetic scene.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SceneError {
    /// The pose could not be converted to a camera transform.
    #[error("scene pose is invalid: {0}")]
    Pose(#[from] PoseError),
    /// The mesh could not be rasterized.
    #[error("scene mesh failed to rasterize: {0}")]
    Raster(#[from] RasterError),
    /// The light direction has (near-)zero length or non-finite parts.
    #[error("light direction must be a finite nonzero vector")]
    BadLight,
    /// The noise level is negative or non-finite.
    #[error("noise standard deviation must be finite and nonnegative")]
    BadNoise,
    /// A zero-sized image was requested.
    #[error("image dimensions must be nonzero")]
    EmptyImage,
}

/// Procedural backdrop drawn behind the model.
#[derive(Debug, Clone, PartialEq)]
pub enum Background {
    /// One grey value everywhere.
    Constant(f32),
    /// Linear vertical ramp from `top` (row 0) to `bottom` (last row).
    VerticalGradient {
        /// Grey value of the first row.
        top: f32,
        /// Grey value of the last row.
        bottom: f32,
    },
    /// A seeded scatter of grey rectangles over the standard ramp,
    /// emulating background structure that a segmenter must ignore.
    Clutter {
        /// Seed for the rectangle layout; same seed, same backdrop.
        seed: u64,
    },
}

/// Full description of a synthetic scene (everything but the mesh).
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    /// Where the camera sees the model.
    pub pose: FullPose,
    /// Unit direction *toward* the light source, in camera space.
    pub light: Vector3<f64>,
    /// Backdrop behind the model.
    pub background: Background,
    /// Standard deviation of additive Gaussian pixel noise (0 disables).
    pub noise_sigma: f64,
    /// Seed for the noise stream; same seed, same photo.
    pub noise_seed: u64,
}

/// A rendered synthetic photograph with its exact ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    /// Single-channel grey photograph in `[0, 255]`.
    pub photo: ImageGrid,
    /// Per-part ground-truth masks (parts hidden at this pose are empty).
    pub truth: BTreeMap<String, BinaryGrid>,
    /// Pixels covered by the model at all.
    pub coverage: BinaryGrid,
}

/// Lambertian grey value for a camera-space surface normal.
///
/// `light` must point toward the source. Faces turned away from the light
/// fall back to the ambient floor.
pub fn shade(normal_cam: &Vector3<f64>, light: &Vector3<f64>) -> f32 {
    let lambert = normal_cam.dot(light).max(0.0) as f32;
    AMBIENT + DIFFUSE * lambert
}

fn ramp(top: f32, bottom: f32, y: usize, height: usize) -> f32 {
    if height <= 1 {
        return top;
    }
    top + (bottom - top) * (y as f32 / (height - 1) as f32)
}

/// Grey ramp used under [`Background::Clutter`] and by [`standard_scene`]:
/// a bright horizon fading to dark ground, so both the dark trim and the lit
/// shell of the subject keep contrast against the backdrop at their own
/// image rows.
pub const SKY_TOP: f32 = 110.0;
/// Bottom grey of the standard backdrop ramp.
pub const SKY_BOTTOM: f32 = 10.0;

struct ClutterRect {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
    grey: f32,
}

fn clutter_rects(seed: u64, width: usize, height: usize) -> Vec<ClutterRect> {
    const COUNT: usize = 24;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let longest = width.max(height).max(8);
    let mut rects = Vec::with_capacity(COUNT);
    for _ in 0..COUNT {
        let w = rng.random_range(longest / 25..=longest / 4).max(1);
        let h = rng.random_range(longest / 25..=longest / 4).max(1);
        let x0 = rng.random_range(0..width);
        let y0 = rng.random_range(0..height);
        let grey = rng.random_range(15.0..95.0);
        rects.push(ClutterRect {
            x0,
            y0,
            x1: (x0 + w).min(width),
            y1: (y0 + h).min(height),
            grey,
        });
    }
    rects
}

fn paint_background(photo: &mut ImageGrid, background: &Background) {
    let (width, height) = (photo.width(), photo.height());
    match background {
        Background::Constant(value) => {
            for y in 0..height {
                for x in 0..width {
                    photo.set(x, y, 0, *value);
                }
            }
        }
        Background::VerticalGradient { top, bottom } => {
            for y in 0..height {
                let value = ramp(*top, *bottom, y, height);
                for x in 0..width {
                    photo.set(x, y, 0, value);
                }
            }
        }
        Background::Clutter { seed } => {
            for y in 0..height {
                let value = ramp(SKY_TOP, SKY_BOTTOM, y, height);
                for x in 0..width {
                    photo.set(x, y, 0, value);
                }
            }
            for rect in clutter_rects(*seed, width, height) {
                for y in rect.y0..rect.y1 {
                    for x in rect.x0..rect.x1 {
                        photo.set(x, y, 0, rect.grey);
                    }
                }
            }
        }
    }
}

/// Renders `mesh` under `spec` into a grey photograph plus exact per-part
/// ground truth.
///
/// Faces are drawn with flat normals and back-face culling, shaded with
/// [`shade`], and composited over the backdrop; seeded Gaussian noise is
/// added last and the result is clamped to `[0, 255]`. The ground-truth map
/// has one entry per named part of the mesh — empty when the part is hidden
/// at this pose — and the masks are pairwise disjoint and exactly tile the
/// coverage mask.
pub fn synth_photo(
    mesh: &TriangleMesh,
    datum: &CarModelDatum,
    spec: &SceneSpec,
    width: usize,
    height: usize,
) -> Result<SynthScene, SceneError> {
    if width == 0 || height == 0 {
        return Err(SceneError::EmptyImage);
    }
    if !spec.light.iter().all(|v| v.is_finite()) || spec.light.norm() < 1e-9 {
        return Err(SceneError::BadLight);
    }
    if !spec.noise_sigma.is_finite() || spec.noise_sigma < 0.0 {
        return Err(SceneError::BadNoise);
    }
    let light = spec.light.normalize();
    let transform = pose_to_transform(datum, &spec.pose)?;
    let options = RenderOptions {
        cull_backfaces: true,
        smooth_normals: false,
    };
    let fb = render_mesh(mesh, &transform, width, height, &options)?;

    let mut photo = ImageGrid::new(width, height, 1);
    paint_background(&mut photo, &spec.background);
    for y in 0..height {
        for x in 0..width {
            if fb.coverage.get(x, y) {
                let n = fb.normal.pixel(x, y);
                let normal = Vector3::new(n[0] as f64, n[1] as f64, n[2] as f64);
                photo.set(x, y, 0, shade(&normal, &light));
            }
        }
    }
    if spec.noise_sigma > 0.0 {
        let gaussian =
            Normal::new(0.0, spec.noise_sigma).expect("noise sigma validated above");
        let mut rng = ChaCha8Rng::seed_from_u64(spec.noise_seed);
        for value in photo.data_mut() {
            *value += gaussian.sample(&mut rng) as f32;
        }
    }
    for value in photo.data_mut() {
        *value = value.clamp(0.0, MAX_GREY);
    }

    let mut truth = BTreeMap::new();
    for name in mesh.part_names() {
        let id = mesh
            .part_id(&name)
            .expect("part_names only yields registered parts");
        truth.insert(name, fb.part_mask(id));
    }
    Ok(SynthScene {
        photo,
        truth,
        coverage: fb.coverage,
    })
}

// --- The standard six-part toy car ------------------------------------------

// Model space: x runs tail (0) to nose (+x), y runs down, z = -1 is the side
// facing the camera at the standard pose. All lengths are wheelbase-relative
// units (the wheelbase itself is 2.4 units).

/// Overall length of the car body.
const LENGTH: f64 = 4.0;
/// Half-width of the lower body.
const HALF_WIDTH: f64 = 1.0;
/// Height (y, downward) of the shoulder line where the greenhouse starts.
const BELT: f64 = -1.0;
/// Height of the underbody.
const FLOOR: f64 = 1.0;
/// Height of the roof slab.
const ROOF: f64 = -1.8;
/// Half-width of the roof; smaller than the body so the upper sides lean
/// inward and catch more sky light than the lower sides (the crease between
/// them is the cabin/body boundary).
const ROOF_HALF_WIDTH: f64 = 0.725;
/// Tail end of the roof slab.
const ROOF_REAR_X: f64 = 1.26;
/// Nose end of the roof slab.
const ROOF_FRONT_X: f64 = 2.55;
/// Top edge of the raked tail glass sits slightly below and behind the roof
/// edge, leaving an overhanging lip whose underside reads as a dark trim
/// line between roof and glass.
const GLASS_TOP_X: f64 = 1.325;
/// Height of the tail-glass top edge.
const GLASS_TOP_Y: f64 = -1.711;
/// Where the windscreen meets the bonnet.
const SCREEN_BASE_X: f64 = 3.25;
/// Rocker panel extents (a wedge strip proud of each lower side).
const PANEL_REAR_X: f64 = 0.35;
/// Nose end of the rocker panels.
const PANEL_FRONT_X: f64 = 3.65;
/// Top edge height of the rocker panels.
const PANEL_TOP_Y: f64 = -0.35;
/// Bottom edge height of the rocker panels: the floor line, so the panel
/// reaches the silhouette's lower edge rather than sitting as an island
/// inside the body surface.
const PANEL_BOTTOM_Y: f64 = FLOOR;
/// How far the panel's top edge floats off the side plane.
const PANEL_PROUD: f64 = 0.004;
/// Extra outward offset of the panel's bottom edge; sets the wedge tilt
/// (about 25 degrees), which turns the panel's face down and away from the
/// light so it reads much darker than the side it sits on.
const PANEL_FLARE: f64 = 0.443;
/// Gap between a see-through face and the inward-facing duplicate behind it.
const SHELL_INSET: f64 = 2e-3;
/// Height of both wheel centres.
const WHEEL_Y: f64 = 0.55;
/// Rear wheel centre along x.
const REAR_WHEEL_X: f64 = 0.8;
/// Front wheel centre along x.
const FRONT_WHEEL_X: f64 = 3.2;

/// Half-width of the shell at height `y` between belt and roof.
fn greenhouse_half_width(y: f64) -> f64 {
    HALF_WIDTH + (y - BELT) * (ROOF_HALF_WIDTH - HALF_WIDTH) / (ROOF - BELT)
}

struct MeshBuilder {
    vertices: Vec<Vector3<f64>>,
    lookup: BTreeMap<[u64; 3], u32>,
    triangles: Vec<[u32; 3]>,
    parts: BTreeMap<String, Vec<usize>>,
}

impl MeshBuilder {
    fn new() -> Self {
        MeshBuilder {
            vertices: Vec::new(),
            lookup: BTreeMap::new(),
            triangles: Vec::new(),
            parts: BTreeMap::new(),
        }
    }

    fn vertex(&mut self, p: [f64; 3]) -> u32 {
        let key = [p[0].to_bits(), p[1].to_bits(), p[2].to_bits()];
        if let Some(&index) = self.lookup.get(&key) {
            return index;
        }
        let index = self.vertices.len() as u32;
        self.vertices.push(Vector3::new(p[0], p[1], p[2]));
        self.lookup.insert(key, index);
        index
    }

    /// Adds a triangle wound so its normal points along `outward`.
    fn tri(&mut self, part: &str, a: [f64; 3], b: [f64; 3], c: [f64; 3], outward: [f64; 3]) {
        let va = Vector3::from(a);
        let normal = (Vector3::from(b) - va).cross(&(Vector3::from(c) - va));
        let (b, c) = if normal.dot(&Vector3::from(outward)) < 0.0 {
            (c, b)
        } else {
            (b, c)
        };
        let tri = [self.vertex(a), self.vertex(b), self.vertex(c)];
        let index = self.triangles.len();
        self.triangles.push(tri);
        self.parts.entry(String::from(part)).or_default().push(index);
    }

    /// Adds a planar quad (corners in loop order) facing `outward`.
    fn quad(&mut self, part: &str, corners: [[f64; 3]; 4], outward: [f64; 3]) {
        self.tri(part, corners[0], corners[1], corners[2], outward);
        self.tri(part, corners[0], corners[2], corners[3], outward);
    }

    /// Adds the same quad shifted inward and facing the opposite way: an
    /// interior wall that shows instead of sky when the original face is
    /// culled away.
    fn backing(&mut self, part: &str, corners: [[f64; 3]; 4], outward: [f64; 3]) {
        let a = Vector3::from(corners[0]);
        let normal = (Vector3::from(corners[1]) - a)
            .cross(&(Vector3::from(corners[2]) - a))
            .normalize();
        let outward = Vector3::from(outward);
        let normal = if normal.dot(&outward) < 0.0 {
            -normal
        } else {
            normal
        };
        let mut inset = corners;
        for corner in &mut inset {
            for axis in 0..3 {
                corner[axis] -= SHELL_INSET * normal[axis];
            }
        }
        let inward = [-normal.x, -normal.y, -normal.z];
        self.quad(part, inset, inward);
    }

    fn build(self) -> TriangleMesh {
        TriangleMesh::new(self.vertices, self.triangles, self.parts)
            .expect("toy car construction is valid")
    }
}

/// Builds the standard six-part toy car and its wheel datum.
///
/// Parts: `body` (lower shell, bonnet, tail, nose, underbody, panel
/// surrounds), `cabin` (leaning upper sides, roof, roof lip, glasshouse
/// interior walls), `left_panel` / `right_panel` (the rocker wedges; the
/// right one is on the z = -1 side that faces the camera at the standard
/// pose), and `windscreen` / `rear_window` (the two raked glass quads).
/// The datum's rear axle points toward the camera-facing side, and the
/// wheelbase spans 2.4 model units.
pub fn toy_car() -> (TriangleMesh, CarModelDatum) {
    let mut b = MeshBuilder::new();
    let glass_top_w = greenhouse_half_width(GLASS_TOP_Y);

    // Underbody and tail/nose walls (full width).
    b.quad(
        "body",
        [
            [0.0, FLOOR, -HALF_WIDTH],
            [LENGTH, FLOOR, -HALF_WIDTH],
            [LENGTH, FLOOR, HALF_WIDTH],
            [0.0, FLOOR, HALF_WIDTH],
        ],
        [0.0, 1.0, 0.0],
    );
    let tail = [
        [0.0, BELT, -HALF_WIDTH],
        [0.0, BELT, HALF_WIDTH],
        [0.0, FLOOR, HALF_WIDTH],
        [0.0, FLOOR, -HALF_WIDTH],
    ];
    b.quad("body", tail, [-1.0, 0.0, 0.0]);
    let nose = [
        [LENGTH, BELT, -HALF_WIDTH],
        [LENGTH, BELT, HALF_WIDTH],
        [LENGTH, FLOOR, HALF_WIDTH],
        [LENGTH, FLOOR, -HALF_WIDTH],
    ];
    b.quad("body", nose, [1.0, 0.0, 0.0]);
    // The nose is culled whenever the tail shows, so line the inside of the
    // nose with a forward bulkhead (and vice versa behind the tail glass the
    // boot bulkhead below) to keep the shell opaque from every viewpoint.
    b.backing("body", nose, [1.0, 0.0, 0.0]);
    b.backing("body", tail, [-1.0, 0.0, 0.0]);

    // Bonnet between windscreen base and nose.
    b.quad(
        "body",
        [
            [SCREEN_BASE_X, BELT, -HALF_WIDTH],
            [LENGTH, BELT, -HALF_WIDTH],
            [LENGTH, BELT, HALF_WIDTH],
            [SCREEN_BASE_X, BELT, HALF_WIDTH],
        ],
        [0.0, -1.0, 0.0],
    );

    // Roof slab and the overhanging rear lip whose underside shades the
    // roof/glass junction.
    b.quad(
        "cabin",
        [
            [ROOF_REAR_X, ROOF, -ROOF_HALF_WIDTH],
            [ROOF_FRONT_X, ROOF, -ROOF_HALF_WIDTH],
            [ROOF_FRONT_X, ROOF, ROOF_HALF_WIDTH],
            [ROOF_REAR_X, ROOF, ROOF_HALF_WIDTH],
        ],
        [0.0, -1.0, 0.0],
    );
    b.quad(
        "cabin",
        [
            [ROOF_REAR_X, ROOF, -ROOF_HALF_WIDTH],
            [ROOF_REAR_X, ROOF, ROOF_HALF_WIDTH],
            [GLASS_TOP_X, GLASS_TOP_Y, glass_top_w],
            [GLASS_TOP_X, GLASS_TOP_Y, -glass_top_w],
        ],
        [-1.0, 0.7, 0.0],
    );

    // Raked tail glass from the rear deck edge up to the lip, and the
    // windscreen from the bonnet up to the roof; both get interior walls.
    let rear_glass = [
        [0.0, BELT, -HALF_WIDTH],
        [0.0, BELT, HALF_WIDTH],
        [GLASS_TOP_X, GLASS_TOP_Y, glass_top_w],
        [GLASS_TOP_X, GLASS_TOP_Y, -glass_top_w],
    ];
    b.quad("rear_window", rear_glass, [-0.5, -1.0, 0.0]);
    b.backing("cabin", rear_glass, [-0.5, -1.0, 0.0]);
    let windscreen = [
        [SCREEN_BASE_X, BELT, -HALF_WIDTH],
        [SCREEN_BASE_X, BELT, HALF_WIDTH],
        [ROOF_FRONT_X, ROOF, ROOF_HALF_WIDTH],
        [ROOF_FRONT_X, ROOF, -ROOF_HALF_WIDTH],
    ];
    b.quad("windscreen", windscreen, [1.0, -1.0, 0.0]);
    b.backing("cabin", windscreen, [1.0, -1.0, 0.0]);

    // Per-side surfaces.
    for side in [-1.0f64, 1.0] {
        let w = HALF_WIDTH * side;
        // Lower side wall.
        b.quad(
            "body",
            [
                [0.0, BELT, w],
                [LENGTH, BELT, w],
                [LENGTH, FLOOR, w],
                [0.0, FLOOR, w],
            ],
            [0.0, 0.0, side],
        );
        // Upper side: a pentagon following glass, lip, roof, and windscreen.
        let shoulder_rear = [0.0, BELT, w];
        let shoulder_front = [SCREEN_BASE_X, BELT, w];
        let roof_front = [ROOF_FRONT_X, ROOF, ROOF_HALF_WIDTH * side];
        let roof_rear = [ROOF_REAR_X, ROOF, ROOF_HALF_WIDTH * side];
        let glass_top = [GLASS_TOP_X, GLASS_TOP_Y, glass_top_w * side];
        let lean = [0.0, -0.4, side];
        b.tri("cabin", glass_top, shoulder_rear, shoulder_front, lean);
        b.tri("cabin", glass_top, shoulder_front, roof_front, lean);
        b.tri("cabin", glass_top, roof_front, roof_rear, lean);
        // Rocker panel wedge: face belongs to the panel part, its end walls
        // to the body, so every panel edge in the image is a single strong
        // step. The wedge runs down to the floor: a part fully surrounded by
        // another part in the image would be swallowed when the outer part's
        // outline is filled, so each panel must touch the silhouette.
        let top_out = (HALF_WIDTH + PANEL_PROUD) * side;
        let bottom_out = (HALF_WIDTH + PANEL_FLARE) * side;
        let part = if side < 0.0 { "right_panel" } else { "left_panel" };
        b.quad(
            part,
            [
                [PANEL_REAR_X, PANEL_TOP_Y, top_out],
                [PANEL_FRONT_X, PANEL_TOP_Y, top_out],
                [PANEL_FRONT_X, PANEL_BOTTOM_Y, bottom_out],
                [PANEL_REAR_X, PANEL_BOTTOM_Y, bottom_out],
            ],
            [0.0, 0.5, side],
        );
        for (x, dir) in [(PANEL_REAR_X, -1.0), (PANEL_FRONT_X, 1.0)] {
            b.quad(
                "body",
                [
                    [x, PANEL_TOP_Y, top_out],
                    [x, PANEL_TOP_Y, w],
                    [x, PANEL_BOTTOM_Y, w],
                    [x, PANEL_BOTTOM_Y, bottom_out],
                ],
                [dir, 0.0, 0.0],
            );
        }
    }

    let datum = CarModelDatum::new(
        Vector3::new(REAR_WHEEL_X, WHEEL_Y, -HALF_WIDTH),
        Vector3::new(FRONT_WHEEL_X, WHEEL_Y, -HALF_WIDTH),
        Vector3::new(0.0, 0.0, -1.0),
    )
    .expect("toy car datum is valid");
    (b.build(), datum)
}

/// The reference pose for a square `size x size` render of [`toy_car`]: a
/// rear three-quarter view from slightly above, framed with margins on all
/// sides. All pixel quantities scale linearly with `size`.
pub fn standard_pose(size: usize) -> FullPose {
    let s = size as f64;
    FullPose {
        mu: nalgebra::Vector2::new(0.2637 * s, 0.6211 * s),
        delta: nalgebra::Vector2::new(0.4746 * s, -0.0176 * s),
        psi: nalgebra::Vector2::new(0.30, 0.15),
        f: 4.4922 * s,
    }
}

/// The reference light for [`toy_car`] scenes: high, slightly behind the
/// camera and to its left, tuned so that every pair of adjacent car parts
/// shades at least ~40 grey levels apart at [`standard_pose`].
pub fn standard_light() -> Vector3<f64> {
    Vector3::new(-0.25, -0.72, -0.645).normalize()
}

/// The standard toy-car scene at a given square image size: reference pose
/// and light, bright-horizon backdrop, and mild seeded sensor noise.
pub fn standard_scene(size: usize, seed: u64) -> SceneSpec {
    SceneSpec {
        pose: standard_pose(size),
        light: standard_light(),
        background: Background::VerticalGradient {
            top: SKY_TOP,
            bottom: SKY_BOTTOM,
        },
        noise_sigma: 1.5,
        noise_seed: seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_relative_eq;
    use nalgebra::Vector2;

    fn constant_spec(pose: FullPose, grey: f32) -> SceneSpec {
        SceneSpec {
            pose,
            light: Vector3::new(0.0, 0.0, -1.0),
            background: Background::Constant(grey),
            noise_sigma: 0.0,
            noise_seed: 0,
        }
    }

    fn square_scene() -> (TriangleMesh, CarModelDatum) {
        // A unit-ish square facing the camera, plus a datum along its width.
        let vertices = vec![
            Vector3::new(-1.0, -1.0, 0.0),
            Vector3::new(1.0, -1.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
            Vector3::new(-1.0, 1.0, 0.0),
        ];
        let triangles = vec![[0u32, 2, 1], [0, 3, 2]];
        let mut parts = BTreeMap::new();
        parts.insert(String::from("panel"), vec![0usize, 1]);
        let mesh = TriangleMesh::new(vertices, triangles, parts).unwrap();
        let datum = CarModelDatum::new(
            Vector3::new(-1.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 0.0, -1.0),
        )
        .unwrap();
        (mesh, datum)
    }

    fn square_pose() -> FullPose {
        FullPose {
            mu: Vector2::new(20.0, 32.0),
            delta: Vector2::new(24.0, 0.0),
            psi: Vector2::new(0.0, 0.0),
            f: 1.0e6,
        }
    }

    #[test]
    fn off_frame_mesh_yields_pure_background() {
        let (mesh, datum) = toy_car();
        let pose = FullPose {
            mu: Vector2::new(-3000.0, -3000.0),
            delta: Vector2::new(40.0, 0.0),
            psi: Vector2::new(0.0, 0.0),
            f: 800.0,
        };
        let scene = synth_photo(&mesh, &datum, &constant_spec(pose, 77.0), 64, 64).unwrap();
        assert!(scene.photo.data().iter().all(|&v| v == 77.0));
        assert!(!scene.coverage.any());
        assert_eq!(scene.truth.len(), 6);
        assert!(scene.truth.values().all(|mask| mask.count_ones() == 0));
    }

    #[test]
    fn camera_facing_square_is_uniformly_lit() {
        let (mesh, datum) = square_scene();
        let scene =
            synth_photo(&mesh, &datum, &constant_spec(square_pose(), 5.0), 64, 64).unwrap();
        let covered = scene.coverage.count_ones();
        assert!(covered > 400, "square should cover most of its footprint");
        for y in 0..64 {
            for x in 0..64 {
                let expected = if scene.coverage.get(x, y) {
                    AMBIENT + DIFFUSE
                } else {
                    5.0
                };
                assert_eq!(scene.photo.get(x, y, 0), expected, "pixel ({x}, {y})");
            }
        }
    }

    #[test]
    fn faces_turned_from_the_light_fall_to_the_ambient_floor() {
        let (mesh, datum) = square_scene();
        let mut spec = constant_spec(square_pose(), 5.0);
        spec.light = Vector3::new(0.0, 0.0, 1.0); // behind the surface
        let scene = synth_photo(&mesh, &datum, &spec, 64, 64).unwrap();
        let mut seen = 0;
        for y in 0..64 {
            for x in 0..64 {
                if scene.coverage.get(x, y) {
                    assert_eq!(scene.photo.get(x, y, 0), AMBIENT);
                    seen += 1;
                }
            }
        }
        assert!(seen > 400);
    }

    #[test]
    fn rotated_cube_faces_match_hand_computed_shading() {
        // A cube spun 30 degrees about the vertical axis, with the spin baked
        // into the vertices and an identity camera rotation, so per-face
        // Lambert terms can be checked against cos(30) and cos(60) by hand.
        let (sin30, cos30) = (0.5f64, 3.0f64.sqrt() / 2.0);
        let spin = |p: [f64; 3]| {
            Vector3::new(
                p[0] * cos30 + p[2] * sin30,
                p[1],
                -p[0] * sin30 + p[2] * cos30,
            )
        };
        let corners = [
            [-0.5, -0.5, -0.5],
            [0.5, -0.5, -0.5],
            [0.5, 0.5, -0.5],
            [-0.5, 0.5, -0.5],
            [-0.5, -0.5, 0.5],
            [0.5, -0.5, 0.5],
            [0.5, 0.5, 0.5],
            [-0.5, 0.5, 0.5],
        ];
        let vertices: Vec<_> = corners.iter().map(|&p| spin(p)).collect();
        // Outward winding for each cube face (front and right will show).
        let faces: [[u32; 4]; 6] = [
            [0, 3, 2, 1], // z = -0.5 (front): normal spins to (-1/2, 0, -cos30)
            [4, 5, 6, 7], // z = +0.5 (back)
            [1, 2, 6, 5], // x = +0.5 (right): normal spins to (cos30, 0, -1/2)
            [0, 4, 7, 3], // x = -0.5 (left)
            [0, 1, 5, 4], // y = -0.5 (top)
            [3, 7, 6, 2], // y = +0.5 (bottom)
        ];
        let mut triangles = Vec::new();
        for f in faces {
            triangles.push([f[0], f[1], f[2]]);
            triangles.push([f[0], f[2], f[3]]);
        }
        let mut parts = BTreeMap::new();
        parts.insert(String::from("cube"), (0..triangles.len()).collect());
        let mesh = TriangleMesh::new(vertices, triangles, parts).unwrap();
        let datum = CarModelDatum::new(
            spin([-0.5, 0.0, 0.0]),
            spin([0.5, 0.0, 0.0]),
            spin([0.0, 0.0, -1.0]),
        )
        .unwrap();
        let scale = 24.0;
        let pose = FullPose {
            mu: Vector2::new(32.0, 32.0),
            delta: Vector2::new(scale * cos30, 0.0),
            psi: Vector2::new(-sin30, 0.0),
            f: 5000.0,
        };
        let scene = synth_photo(&mesh, &datum, &constant_spec(pose, 3.0), 64, 64).unwrap();
        // Hand projection: the camera rotation is the identity, the anchor
        // maps to mu with depth offset -scale * anchor.z.
        let front_tone = AMBIENT + DIFFUSE * cos30 as f32;
        let right_tone = AMBIENT + DIFFUSE * sin30 as f32;
        let sample = |x: usize, y: usize| scene.photo.get(x, y, 0);
        // Columns 30..44 lie on the front face, 49..56 on the right face
        // (face seam projects near column 46.8).
        for x in [34usize, 40, 44] {
            assert_relative_eq!(sample(x, 32), front_tone, epsilon = 1e-3);
        }
        for x in [50usize, 53, 56] {
            assert_relative_eq!(sample(x, 32), right_tone, epsilon = 1e-3);
        }
        assert_eq!(sample(2, 2), 3.0, "background untouched");
    }

    #[test]
    fn noise_is_seeded_and_reproducible() {
        let (mesh, datum) = toy_car();
        let mut spec = standard_scene(96, 11);
        spec.noise_sigma = 2.0;
        let a = synth_photo(&mesh, &datum, &spec, 96, 96).unwrap();
        let b = synth_photo(&mesh, &datum, &spec, 96, 96).unwrap();
        assert_eq!(a.photo.data(), b.photo.data(), "same seed, same photo");
        spec.noise_seed = 12;
        let c = synth_photo(&mesh, &datum, &spec, 96, 96).unwrap();
        assert_ne!(a.photo.data(), c.photo.data(), "new seed, new noise");

        spec.noise_seed = 11;
        spec.noise_sigma = 0.0;
        let clean = synth_photo(&mesh, &datum, &spec, 96, 96).unwrap();
        let diffs: Vec<f64> = a
            .photo
            .data()
            .iter()
            .zip(clean.photo.data())
            .map(|(&n, &c)| (n - c) as f64)
            .collect();
        let count = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / count;
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / count;
        assert!(mean.abs() < 0.12, "noise mean {mean} should be near zero");
        let sd = var.sqrt();
        assert!((1.8..2.2).contains(&sd), "noise sd {sd} should be near 2");
    }

    #[test]
    fn vertical_gradient_interpolates_between_top_and_bottom() {
        let (mesh, datum) = toy_car();
        let pose = FullPose {
            mu: Vector2::new(-3000.0, -3000.0),
            delta: Vector2::new(40.0, 0.0),
            psi: Vector2::new(0.0, 0.0),
            f: 800.0,
        };
        let spec = SceneSpec {
            background: Background::VerticalGradient {
                top: 0.0,
                bottom: 255.0,
            },
            ..constant_spec(pose, 0.0)
        };
        let scene = synth_photo(&mesh, &datum, &spec, 32, 100).unwrap();
        assert_eq!(scene.photo.get(5, 0, 0), 0.0);
        assert_eq!(scene.photo.get(5, 99, 0), 255.0);
        assert_relative_eq!(scene.photo.get(5, 50, 0), 128.8, epsilon = 0.1);
        for y in 1..100 {
            assert!(scene.photo.get(9, y, 0) > scene.photo.get(9, y - 1, 0));
        }
    }

    #[test]
    fn clutter_background_is_deterministic_per_seed() {
        let (mesh, datum) = toy_car();
        let pose = FullPose {
            mu: Vector2::new(-3000.0, -3000.0),
            delta: Vector2::new(40.0, 0.0),
            psi: Vector2::new(0.0, 0.0),
            f: 800.0,
        };
        let spec = SceneSpec {
            background: Background::Clutter { seed: 7 },
            ..constant_spec(pose, 0.0)
        };
        let a = synth_photo(&mesh, &datum, &spec, 80, 80).unwrap();
        let b = synth_photo(&mesh, &datum, &spec, 80, 80).unwrap();
        assert_eq!(a.photo.data(), b.photo.data());
        let other = SceneSpec {
            background: Background::Clutter { seed: 8 },
            ..spec
        };
        let c = synth_photo(&mesh, &datum, &other, 80, 80).unwrap();
        assert_ne!(a.photo.data(), c.photo.data());
        assert!(a.photo.data().iter().all(|v| (0.0..=255.0).contains(v)));
        // The backdrop must actually contain structure, not just the ramp.
        let distinct = {
            let mut values: Vec<u32> = a.photo.data().iter().map(|v| v.to_bits()).collect();
            values.sort_unstable();
            values.dedup();
            values.len()
        };
        assert!(distinct > 40, "clutter should add many distinct greys");
    }

    #[test]
    fn toy_car_standard_truth_masks_cover_the_visible_parts() {
        let (mesh, datum) = toy_car();
        let scene = synth_photo(&mesh, &datum, &standard_scene(256, 0), 256, 256).unwrap();
        let names: Vec<_> = scene.truth.keys().cloned().collect();
        assert_eq!(
            names,
            [
                "body",
                "cabin",
                "left_panel",
                "rear_window",
                "right_panel",
                "windscreen"
            ]
        );
        for visible in ["body", "cabin", "right_panel", "rear_window"] {
            assert!(
                scene.truth[visible].count_ones() > 100,
                "{visible} should be plainly visible at the standard pose"
            );
        }
        for hidden in ["left_panel", "windscreen"] {
            assert_eq!(
                scene.truth[hidden].count_ones(),
                0,
                "{hidden} should be hidden at the standard pose"
            );
        }
        let covered = scene.coverage.count_ones();
        let labelled: usize = scene.truth.values().map(BinaryGrid::count_ones).sum();
        assert_eq!(covered, labelled, "truth masks tile the coverage exactly");
        let fraction = covered as f64 / (256.0 * 256.0);
        assert!(
            (0.15..0.6).contains(&fraction),
            "car should fill a reasonable share of the frame, got {fraction}"
        );
    }

    #[test]
    fn toy_car_mesh_and_datum_are_consistent() {
        let (mesh, datum) = toy_car();
        assert_eq!(mesh.part_names().len(), 6);
        assert!(mesh.parts().values().all(|t| !t.is_empty()));
        assert_relative_eq!(datum.wheelbase().norm(), 2.4, epsilon = 1e-12);
        // Every triangle index is valid and every face has a finite normal.
        assert_eq!(mesh.normals().len(), mesh.triangles().len());
    }

    #[test]
    fn huge_noise_is_clamped_to_the_grey_range() {
        let (mesh, datum) = toy_car();
        let mut spec = standard_scene(64, 3);
        spec.noise_sigma = 80.0;
        let scene = synth_photo(&mesh, &datum, &spec, 64, 64).unwrap();
        assert!(scene.photo.data().iter().all(|v| (0.0..=255.0).contains(v)));
        assert!(scene.photo.data().iter().any(|&v| v == 0.0));
        assert!(scene.photo.data().iter().any(|&v| v == 255.0));
    }

    #[test]
    fn scene_spec_validation_rejects_bad_inputs() {
        let (mesh, datum) = toy_car();
        let good = standard_scene(64, 0);
        let mut bad_light = good.clone();
        bad_light.light = Vector3::new(0.0, 0.0, 0.0);
        assert_eq!(
            synth_photo(&mesh, &datum, &bad_light, 64, 64).unwrap_err(),
            SceneError::BadLight
        );
        let mut bad_noise = good.clone();
        bad_noise.noise_sigma = -1.0;
        assert_eq!(
            synth_photo(&mesh, &datum, &bad_noise, 64, 64).unwrap_err(),
            SceneError::BadNoise
        );
        assert_eq!(
            synth_photo(&mesh, &datum, &good, 0, 64).unwrap_err(),
            SceneError::EmptyImage
        );
    }

    #[test]
    fn standard_pose_scales_linearly_with_image_size() {
        let small = standard_pose(256);
        let large = standard_pose(512);
        assert_relative_eq!(large.mu.x, 2.0 * small.mu.x, epsilon = 1e-9);
        assert_relative_eq!(large.delta.y, 2.0 * small.delta.y, epsilon = 1e-9);
        assert_relative_eq!(large.f, 2.0 * small.f, epsilon = 1e-9);
        assert_eq!(large.psi, small.psi);
    }
}
