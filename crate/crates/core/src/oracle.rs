//! Slow, independent reference estimators: a brute-force spherical grid search
//! over the aggregation energy and classical windowed plane fitting.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    back_project_unchecked, CameraIntrinsics, CameraPoint, DepthImage, NormalVector,
    SphericalAngles,
};
use crate::nim::CandidateSet;
use crate::normal_map::{Execution, NormalMap};

/// Plane `normal · p + beta = 0` in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneModel {
    pub normal: NormalVector,
    pub beta: f64,
}

impl PlaneModel {
    /// Normalizes `normal` and rescales `beta` with it.
    pub fn new(normal: NormalVector, beta: f64) -> Result<Self> {
        let len = normal.norm();
        if !(len.is_finite() && len > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidInput(format!(
                "plane needs a non-zero finite normal and finite offset, got {normal:?}, {beta}"
            )));
        }
        if beta == 0.0 {
            return Err(Error::InvalidInput(
                "plane passes through the optical center (beta = 0)".into(),
            ));
        }
        Ok(Self {
            normal: NormalVector::new(normal.x / len, normal.y / len, normal.z / len),
            beta: beta / len,
        })
    }

    /// The same plane with its normal oriented toward the camera. Every point
    /// on the plane satisfies `normal · p = -beta`, so this is `beta > 0`.
    pub fn camera_facing(self) -> Self {
        if self.beta < 0.0 {
            Self {
                normal: -self.normal,
                beta: -self.beta,
            }
        } else {
            self
        }
    }

    pub fn signed_distance(&self, p: CameraPoint) -> f64 {
        self.normal.dot_point(p) + self.beta
    }
}

/// Square fitting window of side `2 * half_size + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaneFitWindow {
    pub half_size: usize,
    pub min_points: usize,
}

impl Default for PlaneFitWindow {
    fn default() -> Self {
        Self {
            half_size: 1,
            min_points: 6,
        }
    }
}

impl PlaneFitWindow {
    pub fn new(half_size: usize, min_points: usize) -> Result<Self> {
        let w = Self {
            half_size,
            min_points,
        };
        w.validate()?;
        Ok(w)
    }

    /// Window of the given radius with `min_points` at two thirds of its area
    /// (6 for 3×3).
    pub fn with_radius(half_size: usize) -> Result<Self> {
        let side = 2 * half_size + 1;
        Self::new(half_size, (side * side * 2 / 3).max(3))
    }

    fn validate(&self) -> Result<()> {
        if self.half_size < 1 || self.min_points < 3 {
            return Err(Error::InvalidInput(format!(
                "plane-fit window needs half_size >= 1 and min_points >= 3, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Grid argmin of `Σ -n(θ, φ) · n̄_i`.
///
/// θ runs over `0, step, 2·step, … ≤ π` (outer loop), φ over
/// `-π, -π + step, … < π` (inner loop). At the poles only φ = 0 is visited.
/// Ties keep the first point found, i.e. the lowest θ then the lowest φ.
pub fn grid_search_angles(set: &CandidateSet, step: f64) -> Result<SphericalAngles> {
    if set.is_empty() {
        return Err(Error::DegenerateInput("empty candidate set"));
    }
    if !(step > 0.0 && step <= 0.1) {
        return Err(Error::InvalidInput(format!(
            "grid step must lie in (0, 0.1] rad, got {step}"
        )));
    }
    let cands: Vec<[f64; 3]> = set.iter().map(|c| c.direction.to_array()).collect();
    let energy = |n: [f64; 3]| -> f64 {
        cands
            .iter()
            .map(|c| -(n[0] * c[0] + n[1] * c[1] + n[2] * c[2]))
            .sum()
    };

    let n_theta = (PI / step + 1e-9).floor() as usize;
    let n_phi = (2.0 * PI / step - 1e-9).ceil() as usize;
    let phis: Vec<(f64, f64, f64)> = (0..n_phi)
        .map(|j| {
            let phi = -PI + j as f64 * step;
            let (s, c) = phi.sin_cos();
            (phi, s, c)
        })
        .collect();

    let mut best = (f64::INFINITY, SphericalAngles { theta: 0.0, phi: 0.0 });
    for i in 0..=n_theta {
        let theta = i as f64 * step;
        let (st, ct) = theta.sin_cos();
        let is_pole = i == 0 || (PI - theta).abs() < 1e-12;
        if is_pole {
            let e = energy([st, 0.0, ct]);
            if e < best.0 {
                best = (e, SphericalAngles { theta, phi: 0.0 });
            }
            continue;
        }
        for &(phi, sp, cp) in &phis {
            let e = energy([st * cp, st * sp, ct]);
            if e < best.0 {
                best = (e, SphericalAngles { theta, phi });
            }
        }
    }
    Ok(best.1)
}

/// Total-least-squares plane normals over a square window around each pixel.
pub fn plane_fit_normals(
    depth: &DepthImage,
    k: &CameraIntrinsics,
    window: PlaneFitWindow,
) -> Result<NormalMap> {
    plane_fit_normals_with(depth, k, window, Execution::Sequential)
}

pub fn plane_fit_normals_with(
    depth: &DepthImage,
    k: &CameraIntrinsics,
    window: PlaneFitWindow,
    exec: Execution,
) -> Result<NormalMap> {
    k.validate()?;
    window.validate()?;
    let (w, h) = (depth.width(), depth.height());
    let r = window.half_size;
    if w <= 2 * r || h <= 2 * r {
        return Err(Error::Dimension(format!(
            "{}x{} window does not fit in a {w}x{h} image",
            2 * r + 1,
            2 * r + 1
        )));
    }
    let points: Vec<Option<CameraPoint>> = (0..w * h)
        .map(|i| {
            depth.mask()[i]
                .then(|| back_project_unchecked((i % w) as f64, (i / w) as f64, depth.depth()[i], k))
        })
        .collect();

    let mut out = NormalMap::invalid(w, h);
    out.fill_rows(exec, |v, normals, valid| {
        for u in 0..w {
            if let Some(n) = fit_at(&points, w, h, u, v, window) {
                normals[u] = n;
                valid[u] = true;
            }
        }
    })?;
    Ok(out)
}

fn fit_at(
    points: &[Option<CameraPoint>],
    w: usize,
    h: usize,
    u: usize,
    v: usize,
    window: PlaneFitWindow,
) -> Option<NormalVector> {
    let center = points[v * w + u]?;
    let r = window.half_size;
    let (u_lo, u_hi) = (u.saturating_sub(r), (u + r).min(w - 1));
    let (v_lo, v_hi) = (v.saturating_sub(r), (v + r).min(h - 1));

    let window_points = || {
        (v_lo..=v_hi)
            .flat_map(move |y| (u_lo..=u_hi).map(move |x| y * w + x))
            .filter_map(|i| points[i])
    };
    let mut count = 0usize;
    let mut mean = [0.0; 3];
    for p in window_points() {
        count += 1;
        mean[0] += p.x;
        mean[1] += p.y;
        mean[2] += p.z;
    }
    if count < window.min_points {
        return None;
    }
    let inv = 1.0 / count as f64;
    mean.iter_mut().for_each(|m| *m *= inv);

    // Upper triangle of the scatter matrix about the centroid.
    let mut s = [0.0; 6];
    for p in window_points() {
        let d = [p.x - mean[0], p.y - mean[1], p.z - mean[2]];
        s[0] += d[0] * d[0];
        s[1] += d[0] * d[1];
        s[2] += d[0] * d[2];
        s[3] += d[1] * d[1];
        s[4] += d[1] * d[2];
        s[5] += d[2] * d[2];
    }
    let scatter = [[s[0], s[1], s[2]], [s[1], s[3], s[4]], [s[2], s[4], s[5]]];
    let n = NormalVector::from_array(smallest_eigenvector(&scatter)?);
    Some(if n.dot_point(center) > 0.0 { -n } else { n })
}

/// Eigen-decomposition of a symmetric 3×3 matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in ascending order and the matching unit eigenvectors.
///
/// Unlike the closed-form cubic, this stays accurate for the very elongated
/// scatter of far, grazing windows.
pub fn symmetric_eigen(a: &[[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut m = *a;
    // Columns of `v` are the eigenvectors.
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _sweep in 0..32 {
        let off = m[0][1].abs() + m[0][2].abs() + m[1][2].abs();
        let diag = m[0][0].abs() + m[1][1].abs() + m[2][2].abs();
        if off <= f64::EPSILON * 1e-3 * diag || off == 0.0 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if m[p][q] == 0.0 {
                continue;
            }
            let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            for k in 0..3 {
                let (mkp, mkq) = (m[k][p], m[k][q]);
                m[k][p] = c * mkp - s * mkq;
                m[k][q] = s * mkp + c * mkq;
            }
            for k in 0..3 {
                let (mpk, mqk) = (m[p][k], m[q][k]);
                m[p][k] = c * mpk - s * mqk;
                m[q][k] = s * mpk + c * mqk;
            }
            for row in v.iter_mut() {
                let (vp, vq) = (row[p], row[q]);
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| m[i][i].total_cmp(&m[j][j]));
    let values = order.map(|i| m[i][i]);
    let vectors = order.map(|i| [v[0][i], v[1][i], v[2][i]]);
    (values, vectors)
}

/// Unit eigenvector of the smallest eigenvalue, or `None` when the smallest
/// eigenvalue is not simple (rank-deficient scatter: collinear or coincident
/// points).
pub fn smallest_eigenvector(a: &[[f64; 3]; 3]) -> Option<[f64; 3]> {
    let scale = a.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    if !(scale > 0.0 && scale.is_finite()) {
        return None;
    }
    let mut m = *a;
    m.iter_mut().flatten().for_each(|x| *x /= scale);
    let ([l0, l1, l2], vectors) = symmetric_eigen(&m);
    if l1 - l0 <= 1e-12 * l2.abs() {
        return None;
    }
    Some(vectors[0])
}
