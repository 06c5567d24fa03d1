//! Image-anchored pose parameters and their camera transform.
//!
//! A pose is expressed in image evidence rather than camera extrinsics:
//!
//! * `mu` — pixel position of the visible rear wheel centre,
//! * `delta` — pixel displacement from the rear to the front wheel centre,
//! * `psi` — the in-image direction components of the rear axle; the
//!   out-of-image component is `-sqrt(1 - |psi|^2)`, towards the camera,
//! * `f` — pinhole focal length in pixels.
//!
//! [`pose_to_transform`] recovers the similarity transform
//! `x_cam = s * R * x_model + t` that realizes those observations
//! exactly: the rear wheel centre lands on the projection plane (`z = 0`)
//! at `mu`, the front wheel centre projects to `mu + delta`, and the
//! rotated rear axle equals the unit vector described by `psi`. The
//! in-plane spin about the axle is the one remaining freedom; it is
//! solved in closed form from the wheel-displacement constraint.
//!
//! Camera space follows image conventions: x right, y down, z into the
//! scene. A camera point `(X, Y, Z)` projects to
//! `(X * f / (f + Z), Y * f / (f + Z))`, so depth `f + Z` grows with
//! distance and must stay positive.

use nalgebra::{Rotation3, Unit, Vector2, Vector3};

use crate::mesh::CarModelDatum;

#[allow(unused_imports)]
use num_traits::Float as _;

/// Errors from pose validation and projection.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PoseError {
    #[error("pose contains a non-finite parameter")]
    NonFinite,
    #[error("axle direction components ({x}, {y}) lie outside the unit disc")]
    PsiOutOfDomain { x: f64, y: f64 },
    #[error("focal length {f} must be positive")]
    NonPositiveFocalLength { f: f64 },
    #[error("wheel displacement has zero length")]
    ZeroDelta,
    #[error("projected wheelbase collapses to a point")]
    DegenerateProjection,
    #[error("no spin about the axle can match the wheel displacement")]
    NoOrientation,
    #[error("point reaches the camera plane (depth {depth})")]
    PointNotInFront { depth: f64 },
}

/// The pose parameters estimated by hand or an upstream detector, without
/// a focal length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoughPose {
    pub mu: Vector2<f64>,
    pub delta: Vector2<f64>,
    pub psi: Vector2<f64>,
}

impl RoughPose {
    pub fn with_focal_length(&self, f: f64) -> FullPose {
        FullPose {
            mu: self.mu,
            delta: self.delta,
            psi: self.psi,
            f,
        }
    }
}

/// A complete seven-parameter pose: [`RoughPose`] plus focal length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullPose {
    pub mu: Vector2<f64>,
    pub delta: Vector2<f64>,
    pub psi: Vector2<f64>,
    pub f: f64,
}

impl FullPose {
    /// Flattens to `[mu_x, mu_y, delta_x, delta_y, psi_x, psi_y, f]`, the
    /// layout the optimizer searches over.
    pub fn to_vector(&self) -> [f64; 7] {
        [
            self.mu.x,
            self.mu.y,
            self.delta.x,
            self.delta.y,
            self.psi.x,
            self.psi.y,
            self.f,
        ]
    }

    pub fn from_vector(v: &[f64; 7]) -> Self {
        FullPose {
            mu: Vector2::new(v[0], v[1]),
            delta: Vector2::new(v[2], v[3]),
            psi: Vector2::new(v[4], v[5]),
            f: v[6],
        }
    }

    pub fn rough(&self) -> RoughPose {
        RoughPose {
            mu: self.mu,
            delta: self.delta,
            psi: self.psi,
        }
    }

    /// The unit rear-axle direction in camera space described by `psi`.
    pub fn axle_direction(&self) -> Result<Vector3<f64>, PoseError> {
        let rho2 = self.psi.norm_squared();
        if !rho2.is_finite() {
            return Err(PoseError::NonFinite);
        }
        if rho2 > 1.0 {
            return Err(PoseError::PsiOutOfDomain {
                x: self.psi.x,
                y: self.psi.y,
            });
        }
        Ok(Vector3::new(
            self.psi.x,
            self.psi.y,
            -(1.0 - rho2).max(0.0).sqrt(),
        ))
    }
}

/// The similarity transform `x_cam = s * R * x_model + t` together with
/// the focal length used for projection.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraTransform {
    rotation: Rotation3<f64>,
    scale: f64,
    translation: Vector3<f64>,
    f: f64,
}

impl CameraTransform {
    /// Assembles a transform from explicit parts; [`pose_to_transform`]
    /// is the usual constructor.
    pub fn new(rotation: Rotation3<f64>, scale: f64, translation: Vector3<f64>, f: f64) -> Self {
        CameraTransform {
            rotation,
            scale,
            translation,
            f,
        }
    }

    pub fn rotation(&self) -> &Rotation3<f64> {
        &self.rotation
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn focal_length(&self) -> f64 {
        self.f
    }

    /// Maps a model point into camera space.
    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }

    /// Maps a model-space direction; normals rotate without scaling.
    pub fn rotate_normal(&self, n: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * n
    }

    /// Depth of a camera point, the projective divisor `f + z`.
    pub fn depth_of(&self, cam_z: f64) -> f64 {
        self.f + cam_z
    }

    /// Projects a camera-space point to pixels.
    pub fn project_camera(&self, cam: &Vector3<f64>) -> Result<Vector2<f64>, PoseError> {
        let depth = self.depth_of(cam.z);
        if depth <= 0.0 {
            return Err(PoseError::PointNotInFront { depth });
        }
        Ok(Vector2::new(cam.x * self.f / depth, cam.y * self.f / depth))
    }

    /// Projects a model-space point to pixels.
    pub fn project_point(&self, p: &Vector3<f64>) -> Result<Vector2<f64>, PoseError> {
        self.project_camera(&self.to_camera(p))
    }
}

fn cross2(a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Recovers the camera transform realizing a pose over a wheel datum.
///
/// The construction is exact, not fitted: the rear wheel centre is placed
/// on the projection plane at `mu`, the axle constraint fixes the
/// rotation up to a spin `alpha` about the axle, and `alpha` together
/// with the scale is solved so the front wheel centre projects exactly to
/// `mu + delta`. Writing the projected wheelbase as
/// `q(alpha) = g_axis + cos(alpha) * g_w + sin(alpha) * g_wx`, the
/// parallelism condition `cross(q, delta) = 0` reduces to
/// `K + C cos(alpha) + S sin(alpha) = 0`, a phase-shifted cosine with at
/// most two roots; roots pointing along `delta` are kept and the more
/// fronto-parallel one (larger `|q|`) wins ties. For car-like datums,
/// where the axle is perpendicular to the wheelbase, `K = 0` and exactly
/// one valid root exists.
pub fn pose_to_transform(
    datum: &CarModelDatum,
    pose: &FullPose,
) -> Result<CameraTransform, PoseError> {
    if !pose.to_vector().iter().all(|x| x.is_finite()) {
        return Err(PoseError::NonFinite);
    }
    if pose.f <= 0.0 {
        return Err(PoseError::NonPositiveFocalLength { f: pose.f });
    }
    let rho2 = pose.psi.norm_squared();
    let psi3 = pose.axle_direction()?;
    if rho2 > 0.99 {
        log::warn!(
            "axle direction nearly in the image plane (|psi| = {:.4}); orientation is poorly conditioned",
            rho2.sqrt()
        );
    }
    let delta_norm = pose.delta.norm();
    if delta_norm == 0.0 {
        return Err(PoseError::ZeroDelta);
    }

    let axle = datum.rear_axle_dir;
    let r0 = Rotation3::rotation_between(&axle, &psi3).unwrap_or_else(|| {
        let helper = if axle.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let perp = Unit::new_normalize(axle.cross(&helper));
        Rotation3::from_axis_angle(&perp, core::f64::consts::PI)
    });

    let b0 = r0 * datum.wheelbase();
    let c = b0.dot(&psi3);
    let w = b0 - c * psi3;
    let wx = psi3.cross(&w);

    let target = pose.mu + pose.delta;
    let g = |u: Vector3<f64>| {
        Vector2::new(
            u.x - u.z * target.x / pose.f,
            u.y - u.z * target.y / pose.f,
        )
    };
    let g_axis = g(c * psi3);
    let g_w = g(w);
    let g_wx = g(wx);
    let q_of = |alpha: f64| g_axis + alpha.cos() * g_w + alpha.sin() * g_wx;

    let k = cross2(g_axis, pose.delta);
    let c_coef = cross2(g_w, pose.delta);
    let s_coef = cross2(g_wx, pose.delta);
    let amp = (c_coef * c_coef + s_coef * s_coef).sqrt();

    let alpha = if amp <= f64::EPSILON * (k.abs() + delta_norm * b0.norm()) {
        if k.abs() > 1e-9 * delta_norm * (b0.norm() + 1.0) {
            return Err(PoseError::NoOrientation);
        }
        0.0
    } else {
        let phi = s_coef.atan2(c_coef);
        let ratio = -k / amp;
        if ratio.abs() > 1.0 {
            log::warn!(
                "wheel displacement is unreachable exactly at this focal length; \
                 using the closest spin"
            );
            if k > 0.0 {
                phi + core::f64::consts::PI
            } else {
                phi
            }
        } else {
            let off = ratio.acos();
            let a1 = phi + off;
            let a2 = phi - off;
            let d1 = q_of(a1).dot(&pose.delta);
            let d2 = q_of(a2).dot(&pose.delta);
            match (d1 > 0.0, d2 > 0.0) {
                (true, false) => a1,
                (false, true) => a2,
                (true, true) => {
                    if q_of(a1).norm_squared() >= q_of(a2).norm_squared() {
                        a1
                    } else {
                        a2
                    }
                }
                (false, false) => {
                    log::warn!(
                        "both spin roots project the wheelbase against the displacement; \
                         keeping the less opposed one"
                    );
                    if d1 >= d2 {
                        a1
                    } else {
                        a2
                    }
                }
            }
        }
    };

    let q = q_of(alpha);
    let q_norm = q.norm();
    if q_norm <= 1e-12 * (b0.norm() + 1.0) {
        return Err(PoseError::DegenerateProjection);
    }
    let scale = delta_norm / q_norm;
    let rotation = Rotation3::from_axis_angle(&Unit::new_normalize(psi3), alpha) * r0;
    let translation =
        Vector3::new(pose.mu.x, pose.mu.y, 0.0) - scale * (rotation * datum.rear_wheel_center);
    Ok(CameraTransform {
        rotation,
        scale,
        translation,
        f: pose.f,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn car_datum() -> CarModelDatum {
        CarModelDatum::new(
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(2.0, 0.0, 0.0),
            Vector3::new(0.0, 0.0, -1.0),
        )
        .unwrap()
    }

    fn pose(mu: (f64, f64), delta: (f64, f64), psi: (f64, f64), f: f64) -> FullPose {
        FullPose {
            mu: Vector2::new(mu.0, mu.1),
            delta: Vector2::new(delta.0, delta.1),
            psi: Vector2::new(psi.0, psi.1),
            f,
        }
    }

    fn check_postconditions(datum: &CarModelDatum, p: &FullPose, t: &CameraTransform, tol: f64) {
        let rear = t.project_point(&datum.rear_wheel_center).unwrap();
        assert_relative_eq!(rear, p.mu, epsilon = tol, max_relative = tol);
        let rear_cam = t.to_camera(&datum.rear_wheel_center);
        assert!(rear_cam.z.abs() <= tol * (1.0 + p.f));
        let front = t.project_point(&datum.front_wheel_center).unwrap();
        assert_relative_eq!(front, p.mu + p.delta, epsilon = tol, max_relative = tol);
        let axle_cam = t.rotate_normal(&datum.rear_axle_dir);
        assert_relative_eq!(axle_cam, p.axle_direction().unwrap(), epsilon = 1e-9);
        assert!(t.scale() > 0.0);
    }

    #[test]
    fn head_on_axle_gives_identity_rotation() {
        let datum = car_datum();
        let p = pose((50.0, 50.0), (100.0, 0.0), (0.0, 0.0), 500.0);
        let t = pose_to_transform(&datum, &p).unwrap();
        assert_relative_eq!(t.rotation().angle(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(t.scale(), 50.0, epsilon = 1e-12);
        assert_relative_eq!(
            *t.translation(),
            Vector3::new(50.0, 50.0, 0.0),
            epsilon = 1e-12
        );
        check_postconditions(&datum, &p, &t, 1e-9);
    }

    #[test]
    fn downward_displacement_spins_ninety_degrees() {
        let datum = car_datum();
        let p = pose((50.0, 50.0), (0.0, 100.0), (0.0, 0.0), 500.0);
        let t = pose_to_transform(&datum, &p).unwrap();
        assert_relative_eq!(
            t.rotate_normal(&Vector3::x()),
            Vector3::new(0.0, 1.0, 0.0),
            epsilon = 1e-12
        );
        check_postconditions(&datum, &p, &t, 1e-9);
    }

    #[test]
    fn pinhole_projection_literals() {
        let t = CameraTransform {
            rotation: Rotation3::identity(),
            scale: 1.0,
            translation: Vector3::zeros(),
            f: 500.0,
        };
        let uv = t.project_point(&Vector3::new(10.0, 20.0, 30.0)).unwrap();
        assert_eq!(uv.x, 9.433962264150944);
        assert_eq!(uv.y, 18.867924528301888);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let datum = car_datum();
        assert!(matches!(
            pose_to_transform(&datum, &pose((0.0, 0.0), (1.0, 0.0), (0.8, 0.7), 500.0)),
            Err(PoseError::PsiOutOfDomain { .. })
        ));
        assert!(matches!(
            pose_to_transform(&datum, &pose((0.0, 0.0), (1.0, 0.0), (0.0, 0.0), 0.0)),
            Err(PoseError::NonPositiveFocalLength { .. })
        ));
        assert!(matches!(
            pose_to_transform(&datum, &pose((0.0, 0.0), (0.0, 0.0), (0.0, 0.0), 500.0)),
            Err(PoseError::ZeroDelta)
        ));
        assert!(matches!(
            pose_to_transform(
                &datum,
                &pose((f64::NAN, 0.0), (1.0, 0.0), (0.0, 0.0), 500.0)
            ),
            Err(PoseError::NonFinite)
        ));
    }

    #[test]
    fn projection_rejects_points_reaching_the_camera_plane() {
        let datum = car_datum();
        let p = pose((50.0, 50.0), (100.0, 0.0), (0.0, 0.0), 500.0);
        let t = pose_to_transform(&datum, &p).unwrap();
        let err = t.project_point(&Vector3::new(0.0, 0.0, -100.0)).unwrap_err();
        assert!(matches!(err, PoseError::PointNotInFront { depth } if depth <= 0.0));
    }

    #[test]
    fn antiparallel_axle_uses_fallback_rotation() {
        let datum = CarModelDatum::new(
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(2.0, 0.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
        )
        .unwrap();
        let p = pose((80.0, 90.0), (60.0, 10.0), (0.0, 0.0), 800.0);
        let t = pose_to_transform(&datum, &p).unwrap();
        check_postconditions(&datum, &p, &t, 1e-9);
    }

    #[test]
    fn randomized_car_poses_satisfy_all_postconditions() {
        fn unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
            loop {
                let v = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                let n = v.norm();
                if n > 1e-3 {
                    return v / n;
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let axle = unit(&mut rng);
            let mut dir = unit(&mut rng);
            dir -= axle * dir.dot(&axle);
            if dir.norm() < 1e-3 {
                continue;
            }
            dir = dir.normalize();
            let rear = Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let len = rng.random_range(0.5..5.0);
            let datum = CarModelDatum::new(rear, rear + dir * len, axle).unwrap();
            let psi = loop {
                let p = Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                if p.norm_squared() <= 0.96 {
                    break p;
                }
            };
            let angle = rng.random_range(0.0..core::f64::consts::TAU);
            let d_len = rng.random_range(5.0..200.0);
            let p = FullPose {
                mu: Vector2::new(rng.random_range(0.0..512.0), rng.random_range(0.0..512.0)),
                delta: Vector2::new(angle.cos(), angle.sin()) * d_len,
                psi,
                f: rng.random_range(200.0..5000.0),
            };
            let t = pose_to_transform(&datum, &p).unwrap();
            check_postconditions(&datum, &p, &t, 1e-6);
            let m = t.rotation().matrix();
            assert_relative_eq!(m.determinant(), 1.0, epsilon = 1e-9);
            assert_relative_eq!((m.transpose() * m)[(0, 0)], 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn huge_focal_length_approaches_orthographic_projection() {
        let datum = car_datum();
        let p = pose((100.0, 120.0), (80.0, -40.0), (0.3, 0.2), 2.0e6);
        let t = pose_to_transform(&datum, &p).unwrap();
        check_postconditions(&datum, &p, &t, 1e-6);
        let front_cam = t.to_camera(&datum.front_wheel_center);
        let ortho = Vector2::new(front_cam.x, front_cam.y);
        let target = p.mu + p.delta;
        assert!((ortho - target).norm() <= 1e-3 * p.delta.norm());
    }

    #[test]
    fn vector_round_trip_is_exact() {
        let p = pose((1.5, -2.25), (0.1, 0.2), (-0.3, 0.4), 1234.5);
        let v = p.to_vector();
        assert_eq!(FullPose::from_vector(&v), p);
        let r = p.rough().with_focal_length(p.f);
        assert_eq!(r, p);
    }

    #[test]
    fn both_roots_resolve_deterministically_for_skewed_datum() {
        // Axle deliberately not perpendicular to the wheelbase, so the
        // axis term K is nonzero and both spin roots can be valid.
        let datum = CarModelDatum::new(
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(2.0, 0.0, 0.0),
            Vector3::new(0.5, 0.0, -1.0),
        )
        .unwrap();
        let p = pose((200.0, 200.0), (90.0, 30.0), (0.2, -0.1), 1000.0);
        let t1 = pose_to_transform(&datum, &p).unwrap();
        let t2 = pose_to_transform(&datum, &p).unwrap();
        assert_eq!(t1, t2);
        let rear = t1.project_point(&datum.rear_wheel_center).unwrap();
        assert_relative_eq!(rear, p.mu, epsilon = 1e-9);
        let front = t1.project_point(&datum.front_wheel_center).unwrap();
        assert_relative_eq!(front, p.mu + p.delta, epsilon = 1e-9);
        let axle_cam = t1.rotate_normal(&datum.rear_axle_dir);
        assert_relative_eq!(axle_cam, p.axle_direction().unwrap(), epsilon = 1e-9);
    }

    #[test]
    fn scale_tracks_delta_length_linearly_head_on() {
        let datum = car_datum();
        let scales: Vec<f64> = [40.0, 80.0, 160.0]
            .iter()
            .map(|&d| {
                pose_to_transform(&datum, &pose((50.0, 50.0), (d, 0.0), (0.0, 0.0), 500.0))
                    .unwrap()
                    .scale()
            })
            .collect();
        assert_relative_eq!(scales[1] / scales[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(scales[2] / scales[1], 2.0, epsilon = 1e-12);
    }
}
