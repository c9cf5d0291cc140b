//! Pinhole camera model and depth maps.
//!
//! Camera frame convention: x right, y down, z forward along the optical
//! axis. Poses map camera-frame points into the world frame.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::spatial::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, IngestError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let ok = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite())
            && self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cy > 0.0
            && self.width > 0
            && self.height > 0;
        if ok {
            Ok(())
        } else {
            Err(IngestError::BadIntrinsics(*self))
        }
    }

    /// Ray through pixel `(u, v)` scaled to unit depth.
    pub fn unproject(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Pixel coordinates of a camera-frame point, `None` behind the camera.
    pub fn project(&self, p: &Point3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    pub fn contains_pixel(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u <= self.width as f64 - 1.0 && v <= self.height as f64 - 1.0
    }
}

/// Per-pixel z-depth in meters; 0 marks an invalid measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Result<Self, IngestError> {
        if data.len() != (width as usize) * (height as usize) {
            return Err(IngestError::DepthSize {
                width,
                height,
                len: data.len(),
            });
        }
        if let Some(bad) = data.iter().find(|d| !d.is_finite() || **d < 0.0) {
            return Err(IngestError::NegativeDepth(*bad));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn at(&self, u: u32, v: u32) -> f32 {
        self.data[(v * self.width + u) as usize]
    }

    /// Depth at the pixel nearest to `(u, v)`, if inside and valid.
    pub fn sample_nearest(&self, u: f64, v: f64) -> Option<f32> {
        let (ur, vr) = (u.round(), v.round());
        if ur < 0.0 || vr < 0.0 || ur >= self.width as f64 || vr >= self.height as f64 {
            return None;
        }
        let d = self.at(ur as u32, vr as u32);
        (d > 0.0).then_some(d)
    }
}

/// World point seen at pixel `(u, v)` with the given z-depth.
pub fn back_project_pixel(pose: &Pose, k: &Intrinsics, depth: f64, u: f64, v: f64) -> Result<Point3<f64>, IngestError> {
    if !(depth.is_finite() && depth > 0.0) {
        return Err(IngestError::InvalidDepth { u, v });
    }
    let cam = Point3::from(k.unproject(u, v) * depth);
    let world = pose.transform_point(&cam);
    if world.coords.iter().all(|c| c.is_finite()) {
        Ok(world)
    } else {
        Err(IngestError::InvalidDepth { u, v })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;

    fn k() -> Intrinsics {
        Intrinsics::new(40.0, 40.0, 32.0, 24.0, 64, 48).unwrap()
    }

    #[test]
    fn principal_point_lies_on_optical_axis() {
        let p = back_project_pixel(&Pose::identity(), &k(), 2.0, 32.0, 24.0).unwrap();
        assert_eq!(p, Point3::new(0.0, 0.0, 2.0));
    }

    #[test]
    fn translation_carries_through() {
        let p = back_project_pixel(&Pose::translation([1.0, 0.0, 0.0]), &k(), 2.0, 32.0, 24.0).unwrap();
        assert_eq!(p, Point3::new(1.0, 0.0, 2.0));
    }

    #[test]
    fn zero_depth_is_invalid() {
        assert!(matches!(
            back_project_pixel(&Pose::identity(), &k(), 0.0, 3.0, 3.0),
            Err(IngestError::InvalidDepth { .. })
        ));
    }

    #[test]
    fn intrinsics_validated() {
        assert!(Intrinsics::new(-1.0, 40.0, 32.0, 24.0, 64, 48).is_err());
        assert!(Intrinsics::new(40.0, 40.0, 32.0, 24.0, 0, 48).is_err());
    }

    proptest! {
        // render a world point through a random pose, then recover it
        #[test]
        fn render_then_back_project(
            px in -3.0f64..3.0, py in -3.0f64..3.0, pz in -3.0f64..3.0,
            roll in -3.1f64..3.1, pitch in -1.5f64..1.5, yaw in -3.1f64..3.1,
            cx in -1.0f64..1.0, cy in -1.0f64..1.0, cz in 0.5f64..6.0,
        ) {
            let pose = Pose::from_parts(
                Vector3::new(px, py, pz),
                UnitQuaternion::from_euler_angles(roll, pitch, yaw),
            );
            let cam = Point3::new(cx, cy, cz);
            let world = pose.transform_point(&cam);
            let (u, v) = k().project(&pose.inverse().transform_point(&world)).unwrap();
            let back = back_project_pixel(&pose, &k(), cz, u, v).unwrap();
            prop_assert!((back - world).norm() < 1e-6);
        }
    }
}
