//! Closed-form normal inference from inverse-depth gradients.
//!
//! For every pixel the pipeline is:
//!
//! 1. central differences of inverse depth along `u` and `v`,
//! 2. one candidate normal per valid 4-neighbor, built from those gradients and
//!    the 3D displacement to the neighbor,
//! 3. each candidate normalized and flipped to face the camera,
//! 4. the candidates aggregated by maximizing their summed projection onto a
//!    unit vector in spherical coordinates, which has a closed-form solution.
//!
//! For a planar surface inverse depth is affine in `(u, v)`, so the central
//! differences are exact and every candidate reproduces the plane normal up to
//! float rounding.

use crate::error::{Error, Result};
use crate::geometry::{
    back_project_unchecked, wrap_azimuth, CameraIntrinsics, DepthImage,
    NormalVector, PixelCoord, SphericalAngles,
};
use crate::normal_map::{Execution, NormalMap};

/// Candidates whose neighbor displacement has `|Δz| < DELTA_Z_EPSILON · z`
/// are skipped; their `n_z` term would divide by (almost) zero. Relative to
/// the center depth `z` so that scaling all depths never adds or removes a
/// candidate (1e-8 m at 1 m).
pub const DELTA_Z_EPSILON: f64 = 1e-8;

/// Aggregates whose candidate sum is shorter than this are rejected.
pub const AGGREGATE_EPSILON: f64 = 1e-12;

/// Neighbor offsets `(du, dv)` in candidate order.
pub const NEIGHBOR_OFFSETS: [(i32, i32); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

/// Un-halved central differences of inverse depth.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    width: usize,
    height: usize,
    g_u: Vec<f64>,
    g_v: Vec<f64>,
    valid: Vec<bool>,
}

impl GradientField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn g_u(&self) -> &[f64] {
        &self.g_u
    }

    pub fn g_v(&self) -> &[f64] {
        &self.g_v
    }

    pub fn mask(&self) -> &[bool] {
        &self.valid
    }

    /// `(g_u, g_v)` at a pixel, if computable there.
    pub fn get(&self, u: usize, v: usize) -> Option<(f64, f64)> {
        let i = v * self.width + u;
        self.valid[i].then(|| (self.g_u[i], self.g_v[i]))
    }
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width < 3 || height < 3 {
        return Err(Error::Dimension(format!(
            "normal estimation needs at least 3x3 pixels, got {width}x{height}"
        )));
    }
    Ok(())
}

/// `g_u(p) = 1/Z(p+[1,0]) - 1/Z(p-[1,0])`, likewise for `g_v`.
///
/// A pixel is valid when it is interior, its own depth is valid and all four
/// axis neighbors are valid. Everything else, including the 1-pixel border,
/// is marked invalid.
pub fn inverse_depth_gradients(depth: &DepthImage) -> Result<GradientField> {
    let (w, h) = (depth.width(), depth.height());
    check_dims(w, h)?;
    let z = depth.depth();
    let ok = depth.mask();
    let inv: Vec<f64> = z.iter().map(|z| 1.0 / z).collect();

    let mut g_u = vec![0.0; w * h];
    let mut g_v = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    for v in 1..h - 1 {
        let row = v * w;
        for u in 1..w - 1 {
            let i = row + u;
            if ok[i] && ok[i - 1] && ok[i + 1] && ok[i - w] && ok[i + w] {
                g_u[i] = inv[i + 1] - inv[i - 1];
                g_v[i] = inv[i + w] - inv[i - w];
                valid[i] = true;
            }
        }
    }
    Ok(GradientField {
        width: w,
        height: h,
        g_u,
        g_v,
        valid,
    })
}

/// Unit candidate normal contributed by one neighbor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateNormal {
    pub direction: NormalVector,
    pub neighbor_offset: (i32, i32),
}

/// Up to four candidates for one pixel. Stored inline; no allocation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateSet {
    entries: [CandidateNormal; 4],
    len: usize,
}

impl Default for CandidateSet {
    fn default() -> Self {
        Self::new()
    }
}

impl CandidateSet {
    pub const CAPACITY: usize = 4;

    pub const fn new() -> Self {
        const EMPTY: CandidateNormal = CandidateNormal {
            direction: NormalVector::new(0.0, 0.0, 0.0),
            neighbor_offset: (0, 0),
        };
        Self {
            entries: [EMPTY; 4],
            len: 0,
        }
    }

    /// Builds a set from unit directions, assigning neighbor offsets in
    /// [`NEIGHBOR_OFFSETS`] order.
    pub fn from_directions(dirs: &[NormalVector]) -> Result<Self> {
        let mut s = Self::new();
        for (d, &off) in dirs.iter().zip(NEIGHBOR_OFFSETS.iter()) {
            s.push(CandidateNormal {
                direction: *d,
                neighbor_offset: off,
            })?;
        }
        if dirs.len() > Self::CAPACITY {
            return Err(Error::InvalidInput(format!(
                "at most {} candidates per pixel, got {}",
                Self::CAPACITY,
                dirs.len()
            )));
        }
        Ok(s)
    }

    pub fn push(&mut self, c: CandidateNormal) -> Result<()> {
        if self.len == Self::CAPACITY {
            return Err(Error::InvalidInput("candidate set is full".into()));
        }
        if !c.direction.is_unit(1e-9) {
            return Err(Error::InvalidInput(format!(
                "candidate direction {:?} is not unit length",
                c.direction
            )));
        }
        self.push_unchecked(c);
        Ok(())
    }

    #[inline(always)]
    fn push_unchecked(&mut self, c: CandidateNormal) {
        self.entries[self.len] = c;
        self.len += 1;
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn as_slice(&self) -> &[CandidateNormal] {
        &self.entries[..self.len]
    }

    pub fn iter(&self) -> impl Iterator<Item = &CandidateNormal> {
        self.as_slice().iter()
    }

    /// Component-wise sum of the candidate directions.
    pub fn sum(&self) -> NormalVector {
        self.iter().fold(NormalVector::default(), |acc, c| {
            NormalVector::new(
                acc.x + c.direction.x,
                acc.y + c.direction.y,
                acc.z + c.direction.z,
            )
        })
    }

    /// `Σ -n · n̄_i`, the quantity minimized by [`aggregate_closed_form`].
    pub fn energy(&self, n: NormalVector) -> f64 {
        self.iter().map(|c| -n.dot(c.direction)).sum()
    }
}

/// Candidate normals at pixel `p`, one per valid axis neighbor.
///
/// The center pixel must carry valid gradients. Candidates with a
/// near-singular `Δz` or a zero-length raw vector are dropped, so a
/// fronto-parallel patch yields an empty set.
pub fn candidate_normals(
    p: PixelCoord,
    depth: &DepthImage,
    grad: &GradientField,
    k: &CameraIntrinsics,
) -> Result<CandidateSet> {
    if grad.width != depth.width() || grad.height != depth.height() {
        return Err(Error::Dimension(
            "gradient field and depth image sizes differ".into(),
        ));
    }
    let (u, v) = (p.u as usize, p.v as usize);
    let integral = p.u >= 0.0 && p.v >= 0.0 && p.u.fract() == 0.0 && p.v.fract() == 0.0;
    if !integral || u >= grad.width || v >= grad.height || grad.get(u, v).is_none() {
        return Err(Error::Precondition(format!(
            "pixel ({}, {}) has no valid gradients",
            p.u, p.v
        )));
    }
    Ok(candidates_at(depth, grad, k, u, v))
}

/// Assumes `grad.valid` at `(u, v)`, which implies the center and all four
/// neighbors have valid depth.
#[inline(always)]
fn candidates_at(
    depth: &DepthImage,
    grad: &GradientField,
    k: &CameraIntrinsics,
    u: usize,
    v: usize,
) -> CandidateSet {
    let w = depth.width();
    let z = depth.depth();
    let i = v * w + u;
    let (uf, vf) = (u as f64, v as f64);
    let p = back_project_unchecked(uf, vf, z[i], k);
    let a = k.fx * grad.g_u[i];
    let b = k.fy * grad.g_v[i];

    let mut set = CandidateSet::new();
    for &(du, dv) in NEIGHBOR_OFFSETS.iter() {
        let j = (i as isize + dv as isize * w as isize + du as isize) as usize;
        let q = back_project_unchecked(uf + du as f64, vf + dv as f64, z[j], k);
        let (dx, dy, dz) = (q.x - p.x, q.y - p.y, q.z - p.z);
        if dz.abs() < DELTA_Z_EPSILON * p.z {
            continue;
        }
        let raw = NormalVector::new(-a, -b, (a * dx + b * dy) / dz);
        let Some(mut n) = raw.normalized() else {
            continue;
        };
        if n.dot_point(p) > 0.0 {
            n = -n;
        }
        set.push_unchecked(CandidateNormal {
            direction: n,
            neighbor_offset: (du, dv),
        });
    }
    set
}

/// Spherical angles of the unit vector minimizing `Σ -n · n̄_i`.
///
/// `φ = atan2(Σ n̄_y, Σ n̄_x)` and
/// `θ = atan2(Σ n̄_x cos φ + Σ n̄_y sin φ, Σ n̄_z)`. The two-argument form keeps
/// the quadrant, so the resulting normal equals the normalized candidate sum.
pub fn aggregate_closed_form(set: &CandidateSet) -> Result<SphericalAngles> {
    if set.is_empty() {
        return Err(Error::DegenerateInput("empty candidate set"));
    }
    angles_of_sum(set.sum())
}

#[inline(always)]
fn angles_of_sum(s: NormalVector) -> Result<SphericalAngles> {
    let norm = s.norm();
    if !(norm >= AGGREGATE_EPSILON) {
        return Err(Error::DegenerateAggregate { norm });
    }
    let phi = s.y.atan2(s.x);
    let (sp, cp) = phi.sin_cos();
    let theta = (s.x * cp + s.y * sp).atan2(s.z);
    Ok(SphericalAngles {
        theta,
        phi: wrap_azimuth(phi),
    })
}

/// Full normal map for a depth image.
pub fn estimate_normals(depth: &DepthImage, k: &CameraIntrinsics) -> Result<NormalMap> {
    estimate_normals_with(depth, k, Execution::Sequential)
}

/// [`estimate_normals`] with an explicit row scheduling. Output is identical
/// for every `exec`.
pub fn estimate_normals_with(
    depth: &DepthImage,
    k: &CameraIntrinsics,
    exec: Execution,
) -> Result<NormalMap> {
    k.validate()?;
    let (w, h) = (depth.width(), depth.height());
    check_dims(w, h)?;
    let kernel = Kernel::new(depth, k);
    let mut out = NormalMap::invalid(w, h);
    out.fill_rows(exec, |v, normals, valid| {
        if v == 0 || v + 1 >= h {
            return;
        }
        kernel.row(v, normals, valid);
    })?;
    Ok(out)
}

/// Per-image state shared by all rows.
///
/// Each candidate is built as `Δz · raw = [-a Δz, -b Δz, a Δx + b Δy]` with
/// `a = fx g_u`, `b = fy g_v`. Scaling by `Δz` changes neither the normalized
/// direction nor the camera-facing orientation, and `a Δx + b Δy` reduces to
/// `g_u (z_q x_q - z_p x_p) + g_v (z_q y_q - z_p y_p)` in pixel offsets
/// `x = u - u0`, `y = v - v0`, so no focal division is needed. The aggregate is
/// computed as the normalized candidate sum, which is what the spherical
/// closed form evaluates to.
struct Kernel<'a> {
    width: usize,
    z: &'a [f64],
    ok: &'a [bool],
    inv: Vec<f64>,
    fx: f64,
    fy: f64,
    u0: f64,
    v0: f64,
    inv_fx: f64,
    inv_fy: f64,
}

impl<'a> Kernel<'a> {
    fn new(depth: &'a DepthImage, k: &CameraIntrinsics) -> Self {
        Kernel {
            width: depth.width(),
            z: depth.depth(),
            ok: depth.mask(),
            inv: depth.depth().iter().map(|z| 1.0 / z).collect(),
            fx: k.fx,
            fy: k.fy,
            u0: k.u0,
            v0: k.v0,
            inv_fx: 1.0 / k.fx,
            inv_fy: 1.0 / k.fy,
        }
    }

    fn row(&self, v: usize, normals: &mut [NormalVector], valid: &mut [bool]) {
        let w = self.width;
        let (z, ok, inv) = (self.z, self.ok, &self.inv[..]);
        let y = v as f64 - self.v0;
        for u in 1..w - 1 {
            let i = v * w + u;
            if !(ok[i] && ok[i - 1] && ok[i + 1] && ok[i - w] && ok[i + w]) {
                continue;
            }
            let g_u = inv[i + 1] - inv[i - 1];
            let g_v = inv[i + w] - inv[i - w];
            let x = u as f64 - self.u0;
            let zp = z[i];
            let a = self.fx * g_u;
            let b = self.fy * g_v;
            // Sign of `r · p / z_p` is `c - Δz (g_u x + g_v y)`.
            let facing = g_u * x + g_v * y;
            let guard = DELTA_Z_EPSILON * zp;

            let mut sum = [0.0f64; 3];
            let mut count = 0u32;
            let mut add = |zq: f64, xq: f64, yq: f64| {
                let dz = zq - zp;
                if dz.abs() < guard {
                    return;
                }
                let c = g_u * (zq * xq - zp * x) + g_v * (zq * yq - zp * y);
                let r = [-a * dz, -b * dz, c];
                let len2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
                if !(len2 > 0.0) || !len2.is_finite() {
                    return;
                }
                let mut scale = 1.0 / len2.sqrt();
                if c - dz * facing > 0.0 {
                    scale = -scale;
                }
                sum[0] += r[0] * scale;
                sum[1] += r[1] * scale;
                sum[2] += r[2] * scale;
                count += 1;
            };
            add(z[i + 1], x + 1.0, y);
            add(z[i - 1], x - 1.0, y);
            add(z[i + w], x, y + 1.0);
            add(z[i - w], x, y - 1.0);

            let n = if count == 0 {
                if g_u != 0.0 || g_v != 0.0 {
                    continue;
                }
                NormalVector::FRONTO_PARALLEL
            } else {
                let norm = (sum[0] * sum[0] + sum[1] * sum[1] + sum[2] * sum[2]).sqrt();
                if !(norm >= AGGREGATE_EPSILON) {
                    continue;
                }
                let s = 1.0 / norm;
                let n = NormalVector::new(sum[0] * s, sum[1] * s, sum[2] * s);
                if n.x * x * self.inv_fx + n.y * y * self.inv_fy + n.z > 0.0 {
                    -n
                } else {
                    n
                }
            };
            normals[u] = n;
            valid[u] = true;
        }
    }
}
