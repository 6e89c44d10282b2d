//! Pinhole cameras, pixel rays and world-to-image projection.
//!
//! Cameras follow the Blender/NeRF-synthetic convention: the camera looks
//! down its local −z axis with +y up and +x right. The principal point sits at
//! the image center and pixels are square.

use nalgebra::{Matrix3, Matrix4, Vector2, Vector3};

use crate::error::{ensure, Result};

/// Points closer than this to the camera plane (or behind it) are treated as
/// not visible.
pub const DEPTH_EPSILON: f64 = 1e-6;

/// Maximum tolerated deviation of `RᵀR` from the identity for a pose.
pub const RIGID_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    width: usize,
    height: usize,
    focal: f64,
    pose: Matrix4<f64>,
    // Cached world-to-camera rotation (Rᵀ) and camera center.
    world_to_cam: Matrix3<f64>,
    center: Vector3<f64>,
}

impl Camera {
    pub fn new(width: usize, height: usize, focal: f64, pose: Matrix4<f64>) -> Result<Self> {
        ensure!(
            width > 0 && height > 0,
            Validation,
            "camera dimensions must be positive, got {width}x{height}"
        );
        ensure!(
            focal.is_finite() && focal > 0.0,
            Validation,
            "focal length must be positive, got {focal}"
        );
        validate_rigid(&pose)?;
        let rotation = pose.fixed_view::<3, 3>(0, 0).into_owned();
        Ok(Self {
            width,
            height,
            focal,
            pose,
            world_to_cam: rotation.transpose(),
            center: pose.fixed_view::<3, 1>(0, 3).into_owned(),
        })
    }

    /// Builds a camera from a horizontal field of view, as stored in
    /// `transforms.json` (`camera_angle_x`).
    pub fn from_fov_x(
        width: usize,
        height: usize,
        camera_angle_x: f64,
        pose: Matrix4<f64>,
    ) -> Result<Self> {
        ensure!(
            camera_angle_x.is_finite() && camera_angle_x > 0.0 && camera_angle_x < std::f64::consts::PI,
            Validation,
            "camera_angle_x must lie in (0, π), got {camera_angle_x}"
        );
        Self::new(width, height, focal_from_fov(width, camera_angle_x), pose)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn focal(&self) -> f64 {
        self.focal
    }

    pub fn pose(&self) -> &Matrix4<f64> {
        &self.pose
    }

    /// Camera center in world coordinates (translation column of the pose).
    pub fn position(&self) -> Vector3<f64> {
        self.center
    }

    pub fn principal_point(&self) -> Vector2<f64> {
        Vector2::new(self.width as f64 * 0.5, self.height as f64 * 0.5)
    }

    /// Same pose and field of view at a different resolution.
    pub fn resized(&self, width: usize, height: usize) -> Result<Self> {
        let focal = self.focal * width as f64 / self.width as f64;
        Self::new(width, height, focal, self.pose)
    }

    /// Horizontal field of view in radians.
    pub fn fov_x(&self) -> f64 {
        2.0 * (0.5 * self.width as f64 / self.focal).atan()
    }
}

/// `focal = 0.5·width / tan(camera_angle_x / 2)`.
pub fn focal_from_fov(width: usize, camera_angle_x: f64) -> f64 {
    0.5 * width as f64 / (0.5 * camera_angle_x).tan()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }

    pub fn with_bounds(self, t_near: f64, t_far: f64) -> Result<Self> {
        ensure!(
            t_near >= 0.0 && t_far > t_near,
            Validation,
            "ray bounds must satisfy 0 <= near < far, got [{t_near}, {t_far}]"
        );
        Ok(Self {
            t_near,
            t_far,
            ..self
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedPoint {
    /// Continuous pixel coordinates; pixel `(i, j)` has its center at
    /// `(i + 0.5, j + 0.5)`.
    pub uv: Vector2<f64>,
    pub in_bounds: bool,
    /// `uv` scaled to `[-1, 1]` by the image extent, clamped.
    pub uv_norm: Vector2<f64>,
}

/// Ray through the continuous pixel position `(u, v)`. The returned ray
/// spans `[0, ∞)`; callers narrow it with [`Ray::with_bounds`].
pub fn ray_for_pixel(camera: &Camera, u: f64, v: f64) -> Result<Ray> {
    ensure!(
        u >= 0.0 && u < camera.width as f64 && v >= 0.0 && v < camera.height as f64,
        InputDomain,
        "pixel ({u}, {v}) outside {}x{} image",
        camera.width,
        camera.height
    );
    let pp = camera.principal_point();
    let local = Vector3::new((u - pp.x) / camera.focal, -(v - pp.y) / camera.focal, -1.0);
    let rotation = camera.world_to_cam.transpose();
    Ok(Ray {
        origin: camera.center,
        direction: (rotation * local).normalize(),
        t_near: 0.0,
        t_far: f64::INFINITY,
    })
}

pub fn project_point(x: &Vector3<f64>, camera: &Camera) -> ProjectedPoint {
    let local = camera.world_to_cam * (x - camera.center);
    let visible = local.z < -DEPTH_EPSILON;
    let depth = if visible { -local.z } else { DEPTH_EPSILON };
    let pp = camera.principal_point();
    let u = pp.x + camera.focal * local.x / depth;
    let v = pp.y - camera.focal * local.y / depth;
    let (w, h) = (camera.width as f64, camera.height as f64);
    let in_bounds = visible && (0.0..w).contains(&u) && (0.0..h).contains(&v);
    ProjectedPoint {
        uv: Vector2::new(u, v),
        in_bounds,
        uv_norm: Vector2::new(
            (2.0 * u / w - 1.0).clamp(-1.0, 1.0),
            (2.0 * v / h - 1.0).clamp(-1.0, 1.0),
        ),
    }
}

/// Inverse of a rigid transform, `[Rᵀ | −Rᵀt]`.
pub fn invert_pose(pose: &Matrix4<f64>) -> Result<Matrix4<f64>> {
    validate_rigid(pose)?;
    let rt = pose.fixed_view::<3, 3>(0, 0).transpose();
    let t = pose.fixed_view::<3, 1>(0, 3).into_owned();
    let mut inv = Matrix4::identity();
    inv.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
    inv.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-(rt * t)));
    Ok(inv)
}

pub fn validate_rigid(pose: &Matrix4<f64>) -> Result<()> {
    ensure!(
        pose.iter().all(|v| v.is_finite()),
        Validation,
        "pose contains non-finite entries"
    );
    let last = pose.row(3);
    ensure!(
        last[0] == 0.0 && last[1] == 0.0 && last[2] == 0.0 && last[3] == 1.0,
        Validation,
        "pose last row must be [0, 0, 0, 1], got {last}"
    );
    let r = pose.fixed_view::<3, 3>(0, 0);
    let err = (r.transpose() * r - Matrix3::identity()).amax();
    ensure!(
        err < RIGID_TOLERANCE,
        Validation,
        "pose rotation is not orthonormal (|RᵀR − I|∞ = {err:e})"
    );
    Ok(())
}

/// Camera-to-world pose at `eye` looking at `target`, with `up` as the
/// approximate world up direction.
pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Matrix4<f64>> {
    let back = eye - target;
    ensure!(back.norm() > 0.0, Validation, "eye and target coincide");
    let back = back.normalize();
    let right = up.cross(&back);
    ensure!(
        right.norm() > 1e-12,
        Validation,
        "up vector is parallel to the viewing direction"
    );
    let right = right.normalize();
    let cam_up = back.cross(&right);
    let mut pose = Matrix4::identity();
    pose.fixed_view_mut::<3, 1>(0, 0).copy_from(&right);
    pose.fixed_view_mut::<3, 1>(0, 1).copy_from(&cam_up);
    pose.fixed_view_mut::<3, 1>(0, 2).copy_from(&back);
    pose.fixed_view_mut::<3, 1>(0, 3).copy_from(&eye);
    Ok(pose)
}

/// Pose on a sphere around the origin with world +z up, as used by the
/// synthetic 360° scenes. Angles are in radians.
pub fn orbit_pose(azimuth: f64, elevation: f64, radius: f64) -> Result<Matrix4<f64>> {
    let eye = Vector3::new(
        radius * elevation.cos() * azimuth.cos(),
        radius * elevation.cos() * azimuth.sin(),
        radius * elevation.sin(),
    );
    look_at(eye, Vector3::zeros(), Vector3::z())
}
