//! Rig geometry and ray-plane triangulation.
//!
//! Both devices use the pinhole model with world-to-device extrinsics
//! `X_dev = R * X_world + t`. Device frames have +z forward, +x right and
//! +y down. Pixel `(x, y)` spans `[x, x + 1) x [y, y + 1)` in continuous image
//! coordinates, so its center is `(x + 0.5, y + 0.5)`.

pub mod evaluate;

use image::RgbImage;
use nalgebra::{Matrix3, Point2, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pattern::{Orientation, PatternSpec};
use crate::unwrap::StripeIdMap;

pub use evaluate::{evaluate, EvalInput, EvalMode, Metrics};

/// Default minimum angle between a camera ray and a light plane.
pub const DEFAULT_MIN_ANGLE: f64 = 0.5 * std::f64::consts::PI / 180.0;

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinholeModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-device rotation.
    pub rotation: Matrix3<f64>,
    /// World-to-device translation in meters.
    pub translation: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    /// Unit direction.
    pub direction: Vector3<f64>,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub point: Vector3<f64>,
    /// Unit normal.
    pub normal: Vector3<f64>,
}

impl Plane {
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(&(p - self.point))
    }
}

impl PinholeModel {
    /// Device at the world origin looking down +z.
    pub fn axis_aligned(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        PinholeModel {
            fx,
            fy,
            cx,
            cy,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Device centered at `center` with its optical axis pointing at `target`.
    /// `down` is the world direction that should map to image +y.
    pub fn looking_at(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        center: Vector3<f64>,
        target: Vector3<f64>,
        down: Vector3<f64>,
    ) -> Result<Self> {
        let z = (target - center)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::config("look-at target coincides with the device center"))?;
        let x = down
            .cross(&z)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::config("look-at down vector is parallel to the optical axis"))?;
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let model = PinholeModel {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation: -(rotation * center),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .chain(self.rotation.iter())
            .chain(self.translation.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::config("pinhole parameters must be finite"));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::config(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        let defect = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        if defect > ORTHONORMAL_TOL {
            return Err(Error::config(format!(
                "rotation is not orthonormal (max |R^T R - I| = {defect:e})"
            )));
        }
        if self.rotation.determinant() < 0.0 {
            return Err(Error::config("rotation has negative determinant"));
        }
        Ok(())
    }

    /// Device center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn world_to_device(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn device_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Project a device-frame point to continuous pixel coordinates.
    /// Points at or behind the image plane return `None`.
    pub fn project_device(&self, p: &Vector3<f64>) -> Option<Point2<f64>> {
        if p.z <= 0.0 || !p.z.is_finite() {
            return None;
        }
        Some(Point2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    pub fn project(&self, p_world: &Vector3<f64>) -> Option<Point2<f64>> {
        self.project_device(&self.world_to_device(p_world))
    }

    /// Device-frame direction (not normalized, z = 1) through pixel `(u, v)`.
    pub fn device_direction(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

/// World-frame ray through continuous pixel coordinate `(u, v)`.
pub fn pixel_ray(camera: &PinholeModel, u: f64, v: f64) -> Ray {
    let dir = camera.rotation.transpose() * camera.device_direction(u, v).normalize();
    Ray {
        origin: camera.center(),
        direction: dir,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigCalibration {
    pub camera: PinholeModel,
    pub camera_width: u32,
    pub camera_height: u32,
    pub projector: PinholeModel,
    pub pattern: PatternSpec,
}

impl RigCalibration {
    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        self.projector.validate()?;
        self.pattern
            .validate()
            .map_err(|e| Error::config(e.to_string()))?;
        if self.camera_width == 0 || self.camera_height == 0 {
            return Err(Error::config("camera image size must be nonzero"));
        }
        let baseline = (self.camera.center() - self.projector.center()).norm();
        if baseline <= 1e-12 {
            return Err(Error::config(
                "camera and projector centers coincide (zero baseline)",
            ));
        }
        Ok(())
    }

    pub fn baseline(&self) -> f64 {
        (self.camera.center() - self.projector.center()).norm()
    }
}

/// Light plane of stripe `index`: the plane through the projector center and
/// the projector image line at the stripe's center coordinate.
pub fn stripe_plane(rig: &RigCalibration, index: i64) -> Result<Plane> {
    let count = rig.pattern.stripe_count() as i64;
    if index < 0 || index >= count {
        return Err(Error::domain(format!(
            "stripe index {index} outside 0..{count}"
        )));
    }
    let p = &rig.projector;
    let center = rig.pattern.stripe_center(index as u32);
    let normal_dev = match rig.pattern.orientation {
        Orientation::VerticalStripes => Vector3::new(1.0, 0.0, -(center - p.cx) / p.fx),
        Orientation::HorizontalStripes => Vector3::new(0.0, 1.0, -(center - p.cy) / p.fy),
    };
    let normal = (p.rotation.transpose() * normal_dev).normalize();
    Ok(Plane {
        point: p.center(),
        normal,
    })
}

/// Ray parameter of the ray-plane intersection, or `None` when the ray is
/// within `min_angle` of being parallel to the plane or the hit lies behind
/// the ray origin.
pub fn intersect_ray_plane(ray: &Ray, plane: &Plane, min_angle: f64) -> Option<f64> {
    let denom = plane.normal.dot(&ray.direction);
    if denom.abs() <= min_angle.sin() {
        return None;
    }
    let t = plane.normal.dot(&(plane.point - ray.origin)) / denom;
    (t.is_finite() && t > 0.0).then_some(t)
}

/// Per-pixel depth along the camera z axis. `None` marks invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub depth: Vec<Option<f64>>,
}

impl DepthMap {
    pub fn invalid(width: u32, height: u32) -> Self {
        DepthMap {
            width,
            height,
            depth: vec![None; width as usize * height as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> Option<f64> {
        self.depth[y as usize * self.width as usize + x as usize]
    }

    pub fn valid_count(&self) -> usize {
        self.depth.iter().filter(|d| d.is_some()).count()
    }
}

/// Triangulate every valid pixel of `ids` against its stripe's light plane.
pub fn triangulate(ids: &StripeIdMap, rig: &RigCalibration, min_angle: f64) -> DepthMap {
    let planes: Vec<Plane> = (0..rig.pattern.stripe_count() as i64)
        .map(|s| stripe_plane(rig, s).expect("index in range"))
        .collect();
    let width = ids.width as usize;
    let mut depth = vec![None; ids.ids.len()];
    if width == 0 {
        return DepthMap {
            width: ids.width,
            height: ids.height,
            depth,
        };
    }
    depth
        .par_chunks_mut(width)
        .enumerate()
        .for_each(|(y, row)| {
            for (x, out) in row.iter_mut().enumerate() {
                let Some(id) = ids.ids[y * width + x] else {
                    continue;
                };
                let Some(plane) = usize::try_from(id).ok().and_then(|i| planes.get(i)) else {
                    continue;
                };
                *out = triangulate_pixel(
                    &rig.camera,
                    plane,
                    x as f64 + 0.5,
                    y as f64 + 0.5,
                    min_angle,
                )
                .map(|(_, z)| z);
            }
        });
    DepthMap {
        width: ids.width,
        height: ids.height,
        depth,
    }
}

/// World-frame intersection point and camera-frame depth for one pixel.
pub fn triangulate_pixel(
    camera: &PinholeModel,
    plane: &Plane,
    u: f64,
    v: f64,
    min_angle: f64,
) -> Option<(Vector3<f64>, f64)> {
    let ray = pixel_ray(camera, u, v);
    let t = intersect_ray_plane(&ray, plane, min_angle)?;
    let point = ray.at(t);
    let z = camera.world_to_device(&point).z;
    (z.is_finite() && z > 0.0).then_some((point, z))
}

/// Even id shift, searched within `±max_shift`, that brings the median
/// triangulated depth closest to `reference_depth`. Useful when the scene's
/// working distance is known but the absolute stripe identity is not.
pub fn anchor_by_reference_depth(
    ids: &StripeIdMap,
    rig: &RigCalibration,
    reference_depth: f64,
    max_shift: i64,
    min_angle: f64,
) -> Option<i64> {
    let mut best: Option<(f64, i64)> = None;
    let mut shift = -(max_shift - max_shift.rem_euclid(2));
    while shift <= max_shift {
        let shifted = ids.shifted(shift);
        let mut depths: Vec<f64> = triangulate(&shifted, rig, min_angle)
            .depth
            .into_iter()
            .flatten()
            .collect();
        if !depths.is_empty() {
            let mid = depths.len() / 2;
            let (_, median, _) = depths.select_nth_unstable_by(mid, f64::total_cmp);
            let err = (*median - reference_depth).abs();
            if best.is_none_or(|(e, s)| err < e || (err == e && shift.abs() < s.abs())) {
                best = Some((err, shift));
            }
        }
        shift += 2;
    }
    best.map(|(_, s)| s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    pub position: [f64; 3],
    pub color: Option<[u8; 3]>,
}

/// Camera-frame point cloud, one point per valid depth pixel in row-major order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<CloudPoint>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn has_colors(&self) -> bool {
        self.points.first().is_some_and(|p| p.color.is_some())
    }
}

pub fn to_point_cloud(
    depth: &DepthMap,
    camera: &PinholeModel,
    colors: Option<&RgbImage>,
) -> Result<PointCloud> {
    if let Some(img) = colors {
        if img.dimensions() != (depth.width, depth.height) {
            return Err(Error::domain(format!(
                "color image is {}x{}, depth map is {}x{}",
                img.width(),
                img.height(),
                depth.width,
                depth.height
            )));
        }
    }
    let mut points = Vec::with_capacity(depth.valid_count());
    for y in 0..depth.height {
        for x in 0..depth.width {
            let Some(z) = depth.get(x, y) else { continue };
            let dir = camera.device_direction(x as f64 + 0.5, y as f64 + 0.5);
            let p = dir * z;
            points.push(CloudPoint {
                position: [p.x, p.y, p.z],
                color: colors.map(|img| img.get_pixel(x, y).0),
            });
        }
    }
    Ok(PointCloud { points })
}
