//! Pinhole camera model, pixel/camera-frame conversions and the depth raster.
//!
//! Pixel centers sit at integer coordinates: pixel `(u, v)` is column `u`,
//! row `v`, with no half-pixel offset. Depth is always stored in meters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics: focal lengths and principal point, all in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub u0: f64,
    pub v0: f64,
}

impl CameraIntrinsics {
    /// Builds intrinsics, rejecting non-finite values and non-positive focal lengths.
    pub fn new(fx: f64, fy: f64, u0: f64, v0: f64) -> Result<Self> {
        let k = Self { fx, fy, u0, v0 };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.fx, self.fy, self.u0, self.v0]
            .iter()
            .all(|x| x.is_finite());
        if !all_finite {
            return Err(Error::InvalidInput(format!(
                "intrinsics must be finite, got {self:?}"
            )));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "focal lengths must be positive, got fx = {}, fy = {}",
                self.fx, self.fy
            )));
        }
        Ok(())
    }

    /// Unit viewing direction through a (possibly fractional) pixel.
    pub fn ray(&self, u: f64, v: f64) -> [f64; 3] {
        let d = [(u - self.u0) / self.fx, (v - self.v0) / self.fy, 1.0];
        let n = (d[0] * d[0] + d[1] * d[1] + 1.0).sqrt();
        [d[0] / n, d[1] / n, d[2] / n]
    }
}

/// Pixel location; integer-valued when addressing rasters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
}

impl PixelCoord {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn at(u: usize, v: usize) -> Self {
        Self {
            u: u as f64,
            v: v as f64,
        }
    }
}

/// Point in the camera frame, meters. `z` runs along the optical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl CameraPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

/// Lifts a pixel with known depth into the camera frame.
pub fn back_project(p: PixelCoord, z: f64, k: &CameraIntrinsics) -> Result<CameraPoint> {
    if !z.is_finite() || z <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "depth must be finite and positive, got {z}"
        )));
    }
    Ok(back_project_unchecked(p.u, p.v, z, k))
}

#[inline(always)]
pub(crate) fn back_project_unchecked(u: f64, v: f64, z: f64, k: &CameraIntrinsics) -> CameraPoint {
    CameraPoint {
        x: z * (u - k.u0) / k.fx,
        y: z * (v - k.v0) / k.fy,
        z,
    }
}

/// Projects a camera-frame point onto the (continuous) image plane.
pub fn project(p: CameraPoint, k: &CameraIntrinsics) -> Result<PixelCoord> {
    if !(p.z > 0.0) {
        return Err(Error::BehindCamera { z: p.z });
    }
    Ok(PixelCoord {
        u: k.fx * p.x / p.z + k.u0,
        v: k.fy * p.y / p.z + k.v0,
    })
}

/// Three-component normal. Unit length is an invariant of maps and candidates,
/// not of the type itself.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NormalVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl NormalVector {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    /// Normal of a surface facing the camera head-on.
    pub const FRONTO_PARALLEL: NormalVector = NormalVector::new(0.0, 0.0, -1.0);

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: NormalVector) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn dot_point(self, p: CameraPoint) -> f64 {
        self.x * p.x + self.y * p.y + self.z * p.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Returns `None` for zero-length or non-finite vectors.
    pub fn normalized(self) -> Option<NormalVector> {
        let n = self.norm();
        if n.is_finite() && n > 0.0 {
            Some(NormalVector::new(self.x / n, self.y / n, self.z / n))
        } else {
            None
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn is_unit(self, tol: f64) -> bool {
        self.is_finite() && (self.norm() - 1.0).abs() <= tol
    }
}

impl std::ops::Neg for NormalVector {
    type Output = NormalVector;

    fn neg(self) -> NormalVector {
        NormalVector::new(-self.x, -self.y, -self.z)
    }
}

/// Spherical parameterization of a unit normal: polar angle `theta` from +z,
/// azimuth `phi` in the x-y plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalAngles {
    /// In `[0, π]`.
    pub theta: f64,
    /// In `[-π, π)`.
    pub phi: f64,
}

/// `[sin θ cos φ, sin θ sin φ, cos θ]`.
pub fn normal_from_angles(a: SphericalAngles) -> NormalVector {
    let (st, ct) = a.theta.sin_cos();
    let (sp, cp) = a.phi.sin_cos();
    NormalVector::new(st * cp, st * sp, ct)
}

/// Inverse of [`normal_from_angles`] for non-zero vectors. The vector does not
/// need to be normalized; only its direction matters.
pub fn angles_from_normal(n: NormalVector) -> SphericalAngles {
    let phi = wrap_azimuth(n.y.atan2(n.x));
    let theta = n.x.hypot(n.y).atan2(n.z);
    SphericalAngles { theta, phi }
}

/// Maps `atan2`'s `(-π, π]` onto `[-π, π)`.
pub(crate) fn wrap_azimuth(phi: f64) -> f64 {
    if phi >= std::f64::consts::PI {
        phi - 2.0 * std::f64::consts::PI
    } else {
        phi
    }
}

/// Metric depth raster with a per-pixel validity mask, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    depth: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthImage {
    /// Validity is derived from the values: a pixel is valid when its depth is
    /// finite and strictly positive.
    pub fn new(width: usize, height: usize, depth: Vec<f64>) -> Result<Self> {
        check_len(width, height, depth.len())?;
        let valid = depth.iter().map(|&z| z.is_finite() && z > 0.0).collect();
        Ok(Self {
            width,
            height,
            depth,
            valid,
        })
    }

    /// Uses an explicit mask. A pixel flagged valid must carry a finite,
    /// positive depth.
    pub fn with_mask(width: usize, height: usize, depth: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        check_len(width, height, depth.len())?;
        check_len(width, height, valid.len())?;
        if let Some(i) = depth
            .iter()
            .zip(&valid)
            .position(|(&z, &ok)| ok && !(z.is_finite() && z > 0.0))
        {
            return Err(Error::InvalidInput(format!(
                "pixel ({}, {}) is flagged valid but has depth {}",
                i % width,
                i / width,
                depth[i]
            )));
        }
        Ok(Self {
            width,
            height,
            depth,
            valid,
        })
    }

    pub fn filled(width: usize, height: usize, z: f64) -> Result<Self> {
        Self::new(width, height, vec![z; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.depth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth.is_empty()
    }

    /// Raw depth values; entries at invalid pixels are unspecified.
    pub fn depth(&self) -> &[f64] {
        &self.depth
    }

    pub fn mask(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn index(&self, u: usize, v: usize) -> usize {
        v * self.width + u
    }

    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        let i = self.index(u, v);
        self.valid[i].then_some(self.depth[i])
    }

    pub fn is_valid(&self, u: usize, v: usize) -> bool {
        self.valid[self.index(u, v)]
    }

    pub fn invalidate(&mut self, u: usize, v: usize) {
        let i = self.index(u, v);
        self.valid[i] = false;
    }

    /// Same mask, every depth multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::InvalidInput(format!(
                "depth scale must be finite and positive, got {factor}"
            )));
        }
        Ok(Self {
            width: self.width,
            height: self.height,
            depth: self.depth.iter().map(|z| z * factor).collect(),
            valid: self.valid.clone(),
        })
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&b| b).count()
    }
}

fn check_len(width: usize, height: usize, len: usize) -> Result<()> {
    match width.checked_mul(height) {
        Some(n) if n == len => Ok(()),
        Some(n) => Err(Error::Dimension(format!(
            "{width}x{height} raster needs {n} samples, got {len}"
        ))),
        None => Err(Error::Dimension(format!("{width}x{height} overflows"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn kitti() -> CameraIntrinsics {
        CameraIntrinsics::new(721.5377, 721.5377, 609.5593, 172.854).unwrap()
    }

    #[test]
    fn principal_point_is_on_axis() {
        let k = kitti();
        let p = back_project(PixelCoord::new(k.u0, k.v0), 1.0, &k).unwrap();
        assert_eq!(p, CameraPoint::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn unit_focal_offset() {
        let k = kitti();
        let p = back_project(PixelCoord::new(k.u0 + k.fx, k.v0), 1.0, &k).unwrap();
        assert_eq!(p, CameraPoint::new(1.0, 0.0, 1.0));
    }

    #[test]
    fn project_examples() {
        let k = CameraIntrinsics::new(500.0, 480.0, 320.0, 240.0).unwrap();
        let c = project(CameraPoint::new(0.0, 0.0, 5.0), &k).unwrap();
        assert_eq!((c.u, c.v), (320.0, 240.0));
        let c = project(CameraPoint::new(1.0, 0.0, 1.0), &k).unwrap();
        assert_eq!((c.u, c.v), (820.0, 240.0));
    }

    #[test]
    fn rejects_bad_depth_and_points_behind() {
        let k = kitti();
        let p = PixelCoord::at(3, 4);
        for z in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(back_project(p, z, &k), Err(Error::InvalidInput(_))));
        }
        assert!(matches!(
            project(CameraPoint::new(0.0, 0.0, 0.0), &k),
            Err(Error::BehindCamera { .. })
        ));
        assert!(project(CameraPoint::new(1.0, 1.0, -2.0), &k).is_err());
    }

    #[test]
    fn rejects_bad_intrinsics() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(1.0, -1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, f64::NAN, 0.0).is_err());
    }

    #[test]
    fn angle_poles_and_equator() {
        for phi in [-3.0, 0.0, 1.2] {
            let n = normal_from_angles(SphericalAngles { theta: 0.0, phi });
            assert_eq!(n, NormalVector::new(0.0, 0.0, 1.0));
        }
        let n = normal_from_angles(SphericalAngles {
            theta: PI / 2.0,
            phi: 0.0,
        });
        assert!((n.x - 1.0).abs() < 1e-15 && n.y == 0.0 && n.z.abs() < 1e-15);
    }

    #[test]
    fn azimuth_range_is_half_open() {
        let a = angles_from_normal(NormalVector::new(-1.0, 0.0, 0.0));
        assert_eq!(a.phi, -PI);
        assert!((a.theta - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn depth_image_validity() {
        let img = DepthImage::new(3, 1, vec![1.0, 0.0, f64::NAN]).unwrap();
        assert_eq!(img.mask(), &[true, false, false]);
        assert!(DepthImage::new(2, 2, vec![1.0; 3]).is_err());
        assert!(DepthImage::with_mask(1, 1, vec![-1.0], vec![true]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_through_projection(
            u in 0.0f64..1242.0, v in 0.0f64..375.0, z in 0.05f64..200.0,
        ) {
            let k = kitti();
            let p = back_project(PixelCoord::new(u, v), z, &k).unwrap();
            let q = project(p, &k).unwrap();
            prop_assert!((q.u - u).abs() < 1e-9 && (q.v - v).abs() < 1e-9);
        }

        #[test]
        fn back_projection_scales_with_depth(
            u in 0.0f64..1242.0, v in 0.0f64..375.0, z in 0.05f64..50.0, lambda in 0.01f64..100.0,
        ) {
            let k = kitti();
            let a = back_project(PixelCoord::new(u, v), lambda * z, &k).unwrap();
            let b = back_project(PixelCoord::new(u, v), z, &k).unwrap();
            for (x, y) in a.to_array().into_iter().zip(b.to_array()) {
                prop_assert!((x - lambda * y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn angles_round_trip(theta in 1e-6f64..(PI - 1e-6), phi in -PI..PI) {
            let a = angles_from_normal(normal_from_angles(SphericalAngles { theta, phi }));

            prop_assert!((a.theta - theta).abs() < 1e-9);
            let dphi = (a.phi - phi).rem_euclid(2.0 * PI);
            prop_assert!(dphi.min(2.0 * PI - dphi) * theta.sin() < 1e-9);
            let n = normal_from_angles(SphericalAngles { theta, phi });
            prop_assert!(n.is_unit(1e-12));
        }
    }
}
