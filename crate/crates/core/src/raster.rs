//! Z-buffered triangle rasterization into normal, depth, and part-id
//! buffers.
//!
//! Pixel `(x, y)` is sampled at its centre `(x + 0.5, y + 0.5)`. A pixel
//! belongs to a triangle when all three edge functions are positive, or
//! zero on a top or left edge, so triangles meeting along a shared edge
//! partition the plane with no gaps and no double coverage. Depth is the
//! projective divisor `f + z`; it is interpolated via its reciprocal,
//! which is affine in screen space for planar faces, so interpolated
//! depths are exact. Uncovered pixels keep depth `+inf` and part id `0`.
//!
//! Triangles are clipped against a near plane at depth `1e-3 * f` before
//! projection. Back faces — projected winding with positive signed area,
//! meaning the face normal points away from the camera — are rasterized
//! by default and skipped when [`RenderOptions::cull_backfaces`] is set.

use alloc::vec::Vec;

use nalgebra::{Vector2, Vector3};

use crate::grid::{BinaryGrid, IdGrid, ImageGrid};
use crate::mesh::TriangleMesh;
use crate::pose::CameraTransform;

#[allow(unused_imports)]
use num_traits::Float as _;

/// Errors from rendering.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RasterError {
    #[error("render target must have nonzero dimensions")]
    EmptyTarget,
    #[error("vertex {index} is not finite in camera space")]
    NonFiniteVertex { index: usize },
}

/// Rendering switches.
#[derive(Debug, Clone, Copy, Default)]
pub struct RenderOptions {
    /// Skip faces whose normal points away from the camera.
    pub cull_backfaces: bool,
    /// Shade with area-weighted vertex normals interpolated
    /// perspective-correctly instead of one flat normal per face.
    pub smooth_normals: bool,
}

/// The render product: per-pixel camera-space normal (3 channels, zero
/// where uncovered), depth (`f + z`, `+inf` where uncovered), part id
/// (`0` for background), and a coverage mask.
#[derive(Debug, Clone)]
pub struct Framebuffer {
    pub normal: ImageGrid,
    pub depth: ImageGrid,
    pub part_id: IdGrid,
    pub coverage: BinaryGrid,
}

impl Framebuffer {
    fn new(width: usize, height: usize) -> Self {
        let mut depth = ImageGrid::new(width, height, 1);
        depth.fill(f32::INFINITY);
        Framebuffer {
            normal: ImageGrid::new(width, height, 3),
            depth,
            part_id: IdGrid::new(width, height),
            coverage: BinaryGrid::new(width, height),
        }
    }

    pub fn width(&self) -> usize {
        self.depth.width()
    }

    pub fn height(&self) -> usize {
        self.depth.height()
    }

    /// Pixels owned by one part.
    pub fn part_mask(&self, id: u16) -> BinaryGrid {
        self.part_id.equals_mask(id)
    }

    /// Pixels covered by any part of the model.
    pub fn silhouette(&self) -> BinaryGrid {
        self.coverage.clone()
    }

    /// Pixels of a part that touch a different part, the background, or
    /// the image border through 4-adjacency.
    pub fn part_outline(&self, id: u16) -> BinaryGrid {
        let (w, h) = (self.width(), self.height());
        BinaryGrid::from_fn(w, h, |x, y| {
            if self.part_id.get(x, y) != id {
                return false;
            }
            let differs = |nx: isize, ny: isize| {
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    true
                } else {
                    self.part_id.get(nx as usize, ny as usize) != id
                }
            };
            let (xi, yi) = (x as isize, y as isize);
            differs(xi - 1, yi) || differs(xi + 1, yi) || differs(xi, yi - 1) || differs(xi, yi + 1)
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct ClipVert {
    pos: Vector3<f64>,
    normal: Vector3<f64>,
}

/// Clips a camera-space triangle against `f + z >= min_depth`,
/// interpolating positions and normals at the crossings. Returns up to
/// four vertices.
fn clip_triangle_near(tri: [ClipVert; 3], f: f64, min_depth: f64) -> ([ClipVert; 4], usize) {
    let mut out = [tri[0]; 4];
    let mut n = 0;
    for i in 0..3 {
        let cur = tri[i];
        let nxt = tri[(i + 1) % 3];
        let hc = f + cur.pos.z - min_depth;
        let hn = f + nxt.pos.z - min_depth;
        if hc >= 0.0 {
            out[n] = cur;
            n += 1;
        }
        if (hc >= 0.0) != (hn >= 0.0) {
            let t = hc / (hc - hn);
            out[n] = ClipVert {
                pos: cur.pos + (nxt.pos - cur.pos) * t,
                normal: cur.normal + (nxt.normal - cur.normal) * t,
            };
            n += 1;
        }
    }
    (out, n)
}

#[derive(Debug, Clone, Copy)]
struct ScreenVert {
    p: Vector2<f64>,
    inv_w: f64,
    n_over_w: Vector3<f64>,
}

fn orient2d(a: Vector2<f64>, b: Vector2<f64>, p: Vector2<f64>) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// Boundary ownership for `E == 0` pixels: with positive-area winding the
/// interior lies below horizontal edges running in `+x` (top edges) and
/// right of edges running in `-y` (left edges); those edges own their
/// pixels, the opposite ones do not, so abutting triangles never share
/// a boundary pixel.
fn is_top_left(a: Vector2<f64>, b: Vector2<f64>) -> bool {
    (a.y == b.y && b.x > a.x) || (b.y < a.y)
}

struct TriangleAttribs {
    part: u16,
    flat_normal: Vector3<f64>,
}

fn raster_triangle(
    fb: &mut Framebuffer,
    mut a: ScreenVert,
    mut b: ScreenVert,
    c: ScreenVert,
    attribs: &TriangleAttribs,
    options: &RenderOptions,
) {
    let mut area = orient2d(a.p, b.p, c.p);
    if area > 0.0 && options.cull_backfaces {
        return;
    }
    if area == 0.0 || !area.is_finite() {
        return;
    }
    if area < 0.0 {
        core::mem::swap(&mut a, &mut b);
        area = -area;
    }
    let inv_area = 1.0 / area;

    let (w, h) = (fb.width(), fb.height());
    let min_x = a.p.x.min(b.p.x).min(c.p.x);
    let max_x = a.p.x.max(b.p.x).max(c.p.x);
    let min_y = a.p.y.min(b.p.y).min(c.p.y);
    let max_y = a.p.y.max(b.p.y).max(c.p.y);
    let x0 = (min_x - 0.5).ceil().max(0.0) as usize;
    let y0 = (min_y - 0.5).ceil().max(0.0) as usize;
    if min_x - 0.5 > (w - 1) as f64 || min_y - 0.5 > (h - 1) as f64 || max_x < 0.5 || max_y < 0.5 {
        return;
    }
    let x1 = ((max_x - 0.5).floor() as usize).min(w - 1);
    let y1 = ((max_y - 0.5).floor() as usize).min(h - 1);
    if x0 > x1 || y0 > y1 {
        return;
    }

    let tl0 = is_top_left(b.p, c.p);
    let tl1 = is_top_left(c.p, a.p);
    let tl2 = is_top_left(a.p, b.p);

    // Edge functions stepped incrementally across the bounding box.
    let step_x = [-(c.p.y - b.p.y), -(a.p.y - c.p.y), -(b.p.y - a.p.y)];
    let step_y = [c.p.x - b.p.x, a.p.x - c.p.x, b.p.x - a.p.x];
    let origin = Vector2::new(x0 as f64 + 0.5, y0 as f64 + 0.5);
    let mut row = [
        orient2d(b.p, c.p, origin),
        orient2d(c.p, a.p, origin),
        orient2d(a.p, b.p, origin),
    ];

    for y in y0..=y1 {
        let mut e = row;
        for x in x0..=x1 {
            let inside = (e[0] > 0.0 || (e[0] == 0.0 && tl0))
                && (e[1] > 0.0 || (e[1] == 0.0 && tl1))
                && (e[2] > 0.0 || (e[2] == 0.0 && tl2));
            if inside {
                let l0 = e[0] * inv_area;
                let l1 = e[1] * inv_area;
                let l2 = e[2] * inv_area;
                let inv_w = l0 * a.inv_w + l1 * b.inv_w + l2 * c.inv_w;
                if inv_w > 0.0 {
                    let depth = 1.0 / inv_w;
                    if (depth as f32) < fb.depth.get(x, y, 0) {
                        fb.depth.set(x, y, 0, depth as f32);
                        fb.part_id.set(x, y, attribs.part);
                        fb.coverage.set(x, y, true);
                        let n = if options.smooth_normals {
                            let raw =
                                (l0 * a.n_over_w + l1 * b.n_over_w + l2 * c.n_over_w) * depth;
                            let norm = raw.norm();
                            if norm > 1e-12 {
                                raw / norm
                            } else {
                                attribs.flat_normal
                            }
                        } else {
                            attribs.flat_normal
                        };
                        fb.normal.set(x, y, 0, n.x as f32);
                        fb.normal.set(x, y, 1, n.y as f32);
                        fb.normal.set(x, y, 2, n.z as f32);
                    }
                }
            }
            for (ei, sx) in e.iter_mut().zip(step_x) {
                *ei += sx;
            }
        }
        for (ri, sy) in row.iter_mut().zip(step_y) {
            *ri += sy;
        }
    }
}

/// Area-weighted average of adjacent face normals per vertex, normalized.
fn vertex_normals(mesh: &TriangleMesh) -> Vec<Vector3<f64>> {
    let mut acc = alloc::vec![Vector3::zeros(); mesh.vertices().len()];
    for tri in mesh.triangles() {
        let [a, b, c] = [
            mesh.vertices()[tri[0] as usize],
            mesh.vertices()[tri[1] as usize],
            mesh.vertices()[tri[2] as usize],
        ];
        let area_normal = (b - a).cross(&(c - a));
        for &i in tri {
            acc[i as usize] += area_normal;
        }
    }
    acc.into_iter()
        .map(|v| {
            let n = v.norm();
            if n > 1e-12 {
                v / n
            } else {
                Vector3::new(0.0, 0.0, -1.0)
            }
        })
        .collect()
}

/// Renders a mesh under a camera transform into a fresh framebuffer.
pub fn render_mesh(
    mesh: &TriangleMesh,
    transform: &CameraTransform,
    width: usize,
    height: usize,
    options: &RenderOptions,
) -> Result<Framebuffer, RasterError> {
    if width == 0 || height == 0 {
        return Err(RasterError::EmptyTarget);
    }
    let cam: Vec<Vector3<f64>> = mesh
        .vertices()
        .iter()
        .map(|v| transform.to_camera(v))
        .collect();
    for (index, v) in cam.iter().enumerate() {
        if !(v.x.is_finite() && v.y.is_finite() && v.z.is_finite()) {
            return Err(RasterError::NonFiniteVertex { index });
        }
    }
    let smooth = if options.smooth_normals {
        vertex_normals(mesh)
            .into_iter()
            .map(|n| transform.rotate_normal(&n))
            .collect()
    } else {
        Vec::new()
    };

    let f = transform.focal_length();
    let min_depth = 1e-3 * f;
    let part_ids = mesh.triangle_part_ids();
    let mut fb = Framebuffer::new(width, height);

    for (t, tri) in mesh.triangles().iter().enumerate() {
        let flat_normal = transform.rotate_normal(&mesh.normals()[t]);
        let corner = |i: usize| {
            let vi = tri[i] as usize;
            ClipVert {
                pos: cam[vi],
                normal: if options.smooth_normals {
                    smooth[vi]
                } else {
                    flat_normal
                },
            }
        };
        let (poly, n) = clip_triangle_near([corner(0), corner(1), corner(2)], f, min_depth);
        if n < 3 {
            continue;
        }
        let project = |cv: &ClipVert| {
            let depth = f + cv.pos.z;
            let inv_w = 1.0 / depth;
            ScreenVert {
                p: Vector2::new(cv.pos.x * f * inv_w, cv.pos.y * f * inv_w),
                inv_w,
                n_over_w: cv.normal * inv_w,
            }
        };
        let screen: Vec<ScreenVert> = poly[..n].iter().map(project).collect();
        let attribs = TriangleAttribs {
            part: part_ids[t],
            flat_normal,
        };
        for k in 1..n - 1 {
            raster_triangle(&mut fb, screen[0], screen[k], screen[k + 1], &attribs, options);
        }
    }
    Ok(fb)
}
