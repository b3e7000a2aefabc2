//! Synthetic depth scenes with analytic ground-truth normals, and
//! reproducible sensor noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, CameraPoint, DepthImage, NormalVector};
use crate::normal_map::NormalMap;
use crate::oracle::PlaneModel;

/// Pixel rectangle, inclusive of `u_min`/`v_min`, exclusive of `u_max`/`v_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelBox {
    pub u_min: usize,
    pub v_min: usize,
    pub u_max: usize,
    pub v_max: usize,
}

impl PixelBox {
    fn contains(&self, u: usize, v: usize) -> bool {
        u >= self.u_min && u < self.u_max && v >= self.v_min && v < self.v_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SceneGeometry {
    Plane {
        normal: NormalVector,
        beta: f64,
    },
    Sphere {
        center: CameraPoint,
        radius: f64,
    },
    /// Fronto-parallel background with a fronto-parallel box in front of it.
    Step {
        background_depth: f64,
        #[serde(rename = "box")]
        region: PixelBox,
        box_depth: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub intrinsics: CameraIntrinsics,
    pub geometry: SceneGeometry,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if self.width == 0 || self.height == 0 {
            return Err(Error::Dimension(format!(
                "scene resolution must be non-zero, got {}x{}",
                self.width, self.height
            )));
        }
        self.width
            .checked_mul(self.height)
            .ok_or_else(|| Error::Dimension("scene resolution overflows".into()))?;
        match self.geometry {
            SceneGeometry::Plane { normal, beta } => {
                PlaneModel::new(normal, beta)?;
            }
            SceneGeometry::Sphere { center, radius } => {
                let finite = [center.x, center.y, center.z, radius]
                    .iter()
                    .all(|x| x.is_finite());
                if !finite || radius <= 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "sphere needs a finite center and positive radius, got {center:?}, {radius}"
                    )));
                }
                if center.z - radius <= 0.0 {
                    return Err(Error::InvalidInput(
                        "sphere must lie entirely in front of the camera".into(),
                    ));
                }
            }
            SceneGeometry::Step {
                background_depth,
                region,
                box_depth,
            } => {
                for z in [background_depth, box_depth] {
                    if !(z.is_finite() && z > 0.0) {
                        return Err(Error::InvalidInput(format!(
                            "step depths must be finite and positive, got {z}"
                        )));
                    }
                }
                if region.u_min > region.u_max || region.v_min > region.v_max {
                    return Err(Error::InvalidInput(format!("inverted box {region:?}")));
                }
            }
        }
        Ok(())
    }
}

/// Renders depth and the matching ground-truth normals (camera-facing).
pub fn render_scene(spec: &SceneSpec) -> Result<(DepthImage, NormalMap)> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let k = &spec.intrinsics;
    let mut depth = vec![0.0; w * h];
    let mut truth = NormalMap::invalid(w, h);

    match spec.geometry {
        SceneGeometry::Plane { normal, beta } => {
            let plane = PlaneModel::new(normal, beta)?.camera_facing();
            let n = plane.normal;
            for v in 0..h {
                for u in 0..w {
                    // 1/z = -(n_x (u - u0)/fx + n_y (v - v0)/fy + n_z) / beta
                    let inv_z = -(n.x * (u as f64 - k.u0) / k.fx
                        + n.y * (v as f64 - k.v0) / k.fy
                        + n.z)
                        / plane.beta;
                    let z = 1.0 / inv_z;
                    if inv_z > 0.0 && z.is_finite() {
                        depth[v * w + u] = z;
                        truth.set(u, v, Some(n));
                    }
                }
            }
        }
        SceneGeometry::Sphere { center, radius } => {
            let c = center.to_array();
            let cc = c[0] * c[0] + c[1] * c[1] + c[2] * c[2] - radius * radius;
            for v in 0..h {
                for u in 0..w {
                    // Ray p(t) = t·d with d_z = 1, so t is the depth.
                    let d = [(u as f64 - k.u0) / k.fx, (v as f64 - k.v0) / k.fy, 1.0];
                    let a = d[0] * d[0] + d[1] * d[1] + 1.0;
                    let b = d[0] * c[0] + d[1] * c[1] + d[2] * c[2];
                    let disc = b * b - a * cc;
                    if disc < 0.0 {
                        continue;
                    }
                    // Near root; cc > 0 (camera outside the sphere) keeps it positive.
                    let z = cc / (b + disc.sqrt());
                    if !(z.is_finite() && z > 0.0) {
                        continue;
                    }
                    let p = [z * d[0], z * d[1], z];
                    let n = NormalVector::new(
                        (p[0] - c[0]) / radius,
                        (p[1] - c[1]) / radius,
                        (p[2] - c[2]) / radius,
                    );
                    depth[v * w + u] = z;
                    truth.set(u, v, n.normalized());
                }
            }
        }
        SceneGeometry::Step {
            background_depth,
            region,
            box_depth,
        } => {
            let inside = |u: usize, v: usize| region.contains(u, v);
            for v in 0..h {
                for u in 0..w {
                    depth[v * w + u] = if inside(u, v) { box_depth } else { background_depth };
                }
            }
            // Seam: pixels with a 4-neighbor on the other side of the box
            // edge, dilated by one pixel.
            let mut seam = vec![false; w * h];
            if box_depth != background_depth {
                for v in 0..h {
                    for u in 0..w {
                        let me = inside(u, v);
                        let differs = (u > 0 && inside(u - 1, v) != me)
                            || (u + 1 < w && inside(u + 1, v) != me)
                            || (v > 0 && inside(u, v - 1) != me)
                            || (v + 1 < h && inside(u, v + 1) != me);
                        if differs {
                            for y in v.saturating_sub(1)..=(v + 1).min(h - 1) {
                                for x in u.saturating_sub(1)..=(u + 1).min(w - 1) {
                                    seam[y * w + x] = true;
                                }
                            }
                        }
                    }
                }
            }
            for v in 0..h {
                for u in 0..w {
                    if !seam[v * w + u] {
                        truth.set(u, v, Some(NormalVector::FRONTO_PARALLEL));
                    }
                }
            }
        }
    }

    let img = DepthImage::new(w, h, depth)?;
    if img.valid_count() == 0 {
        return Err(Error::EmptyScene);
    }
    Ok((img, truth))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    #[default]
    None,
    /// Additive on depth, sigma in meters.
    GaussianDepth,
    /// Additive on inverse depth, sigma in 1/meters.
    GaussianInverseDepth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub model: NoiseModel,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Standard normal sample for one pixel. Each pixel draws from its own ChaCha
/// stream (stream id = pixel index), so the value depends only on
/// `(seed, index)`.
fn pixel_normal(base: &ChaCha8Rng, index: usize) -> f64 {
    let mut rng = base.clone();
    rng.set_stream(index as u64);
    StandardNormal.sample(&mut rng)
}

/// Adds Gaussian noise to every valid pixel. Pixels pushed to non-positive
/// (or non-finite) depth become invalid.
pub fn apply_noise(depth: &DepthImage, noise: &NoiseSpec) -> Result<DepthImage> {
    if !(noise.sigma.is_finite() && noise.sigma >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "noise sigma must be finite and non-negative, got {}",
            noise.sigma
        )));
    }
    if noise.model == NoiseModel::None || noise.sigma == 0.0 {
        return Ok(depth.clone());
    }
    let base = ChaCha8Rng::seed_from_u64(noise.seed);
    let sigma = noise.sigma;
    let (values, mask): (Vec<f64>, Vec<bool>) = depth
        .depth()
        .iter()
        .zip(depth.mask())
        .enumerate()
        .map(|(i, (&z, &ok))| {
            if !ok {
                return (z, false);
            }
            let e = sigma * pixel_normal(&base, i);
            let z = match noise.model {
                NoiseModel::GaussianDepth => z + e,
                NoiseModel::GaussianInverseDepth => {
                    let inv = 1.0 / z + e;
                    if inv > 0.0 {
                        1.0 / inv
                    } else {
                        0.0
                    }
                }
                NoiseModel::None => unreachable!(),
            };
            let ok = z.is_finite() && z > 0.0;
            (if ok { z } else { 0.0 }, ok)
        })
        .unzip();
    DepthImage::with_mask(depth.width(), depth.height(), values, mask)
}
